//! Posterior inference for the pediatric curve from binary trial data under
//! the robust elicited-points prior, and the similarity decision.

use std::io::Read;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::curves::{softplus, CurveComparator, ExposureRange, LogisticCoefficients};
use crate::error::{PedError, Result};
use crate::repp::{
    cholesky2, invert2, log_sum_exp, normal_log_pdf, repp_log_density, Coefficient, ReppPrior,
    MIN_COMPONENT_SD, NONINFORMATIVE_SD,
};

/// Acceptance band enforced on the retained part of a chain.
pub const ACCEPTANCE_BAND: (f64, f64) = (0.1, 0.6);

/// Exposures and binary responses of one (simulated or real) trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialDataset {
    pub exposures: Vec<f64>,
    pub outcomes: Vec<u8>,
}

impl TrialDataset {
    pub fn new(exposures: Vec<f64>, outcomes: Vec<u8>) -> Result<Self> {
        if exposures.is_empty() {
            return Err(PedError::Validation("trial dataset is empty".into()));
        }
        if exposures.len() != outcomes.len() {
            return Err(PedError::Validation(format!(
                "{} exposures but {} outcomes",
                exposures.len(),
                outcomes.len()
            )));
        }
        if let Some(i) = exposures.iter().position(|x| !x.is_finite()) {
            return Err(PedError::Validation(format!("exposure {i} is not finite")));
        }
        if let Some(i) = outcomes.iter().position(|&y| y > 1) {
            return Err(PedError::Validation(format!("outcome {i} is not 0 or 1")));
        }
        Ok(Self {
            exposures,
            outcomes,
        })
    }

    pub fn n(&self) -> usize {
        self.exposures.len()
    }

    pub fn check_range(&self, range: &ExposureRange) -> Result<()> {
        match self.exposures.iter().position(|&x| !range.contains_full(x)) {
            Some(i) => Err(PedError::Validation(format!(
                "exposure {} at row {} lies outside [{}, {}]",
                self.exposures[i],
                i + 1,
                range.full_lo,
                range.full_hi
            ))),
            None => Ok(()),
        }
    }

    /// Reads an `exposure,response` CSV; row numbers in errors are 1-based
    /// data rows.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.len() != 2 || &headers[0] != "exposure" || &headers[1] != "response" {
            return Err(PedError::Validation(
                "trial data header must be `exposure,response`".into(),
            ));
        }
        let mut exposures = Vec::new();
        let mut outcomes = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let row = i + 1;
            let rec = rec.map_err(|e| PedError::Validation(format!("row {row}: {e}")))?;
            if rec.len() != 2 {
                return Err(PedError::Validation(format!("row {row}: expected 2 fields")));
            }
            let x: f64 = rec[0]
                .parse()
                .map_err(|_| PedError::Validation(format!("row {row}: bad exposure `{}`", &rec[0])))?;
            let y = match &rec[1] {
                "0" => 0,
                "1" => 1,
                other => {
                    return Err(PedError::Validation(format!(
                        "row {row}: response `{other}` is not 0 or 1"
                    )))
                }
            };
            exposures.push(x);
            outcomes.push(y);
        }
        Self::new(exposures, outcomes)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(file))
    }
}

/// Bernoulli log-likelihood of the logistic model.
pub fn log_likelihood(data: &TrialDataset, coeff: &LogisticCoefficients) -> f64 {
    data.exposures
        .iter()
        .zip(&data.outcomes)
        .map(|(&x, &y)| {
            let z = coeff.linear_predictor(x);
            // log f = -softplus(-z), log (1 - f) = -softplus(z)
            if y == 1 {
                -softplus(-z)
            } else {
                -softplus(z)
            }
        })
        .sum()
}

pub fn log_posterior(data: &TrialDataset, prior: &ReppPrior, coeff: &LogisticCoefficients) -> f64 {
    log_likelihood(data, coeff) + repp_log_density(prior, coeff)
}

/// Retained chain of a posterior run.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    pub draws: Vec<LogisticCoefficients>,
    pub acceptance_rate: f64,
}

impl PosteriorDraws {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn mean(&self) -> LogisticCoefficients {
        let m = self.draws.len() as f64;
        LogisticCoefficients {
            intercept: self.draws.iter().map(|d| d.intercept).sum::<f64>() / m,
            slope: self.draws.iter().map(|d| d.slope).sum::<f64>() / m,
        }
    }

    pub fn sd(&self) -> LogisticCoefficients {
        let mean = self.mean();
        let m = self.draws.len() as f64;
        LogisticCoefficients {
            intercept: (self.draws.iter().map(|d| (d.intercept - mean.intercept).powi(2)).sum::<f64>() / m).sqrt(),
            slope: (self.draws.iter().map(|d| (d.slope - mean.slope).powi(2)).sum::<f64>() / m).sqrt(),
        }
    }
}

/// Chain lengths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerSettings {
    pub draws: usize,
    pub burn_in: usize,
}

impl Default for SamplerSettings {
    fn default() -> Self {
        Self {
            draws: 2000,
            burn_in: 2000,
        }
    }
}

impl SamplerSettings {
    pub fn validate(&self) -> Result<()> {
        if self.draws < 1000 || self.burn_in < 1000 {
            return Err(PedError::InvalidArgument(format!(
                "sampler needs at least 1000 draws and 1000 burn-in iterations, got {} / {}",
                self.draws, self.burn_in
            )));
        }
        Ok(())
    }
}

/// Newton ascent on the log-likelihood plus independent `N(0, 100^2)`
/// priors. Returns the mode and the inverse negative Hessian there.
pub fn penalized_mode(data: &TrialDataset) -> Result<(LogisticCoefficients, [[f64; 2]; 2])> {
    let prec = 1.0 / (NONINFORMATIVE_SD * NONINFORMATIVE_SD);
    let objective = |b: &[f64; 2]| {
        log_likelihood(data, &LogisticCoefficients { intercept: b[0], slope: b[1] })
            - 0.5 * prec * (b[0] * b[0] + b[1] * b[1])
    };
    let mut beta = [0.0f64, 0.0];
    let mut value = objective(&beta);
    for _ in 0..200 {
        let mut grad = [-prec * beta[0], -prec * beta[1]];
        let mut info = [[prec, 0.0], [0.0, prec]];
        for (&x, &y) in data.exposures.iter().zip(&data.outcomes) {
            let p = crate::curves::expit(beta[0] + beta[1] * x);
            let r = y as f64 - p;
            let v = p * (1.0 - p);
            grad[0] += r;
            grad[1] += r * x;
            info[0][0] += v;
            info[0][1] += v * x;
            info[1][1] += v * x * x;
        }
        info[1][0] = info[0][1];
        let cov = invert2(&info)
            .ok_or_else(|| PedError::Initialization("singular information matrix".into()))?;
        let step = [
            cov[0][0] * grad[0] + cov[0][1] * grad[1],
            cov[1][0] * grad[0] + cov[1][1] * grad[1],
        ];
        // step halving keeps the ascent monotone under separation
        let mut t = 1.0;
        let mut next = [beta[0] + step[0], beta[1] + step[1]];
        let mut next_value = objective(&next);
        while !(next_value >= value) && t > 1e-10 {
            t *= 0.5;
            next = [beta[0] + t * step[0], beta[1] + t * step[1]];
            next_value = objective(&next);
        }
        if !(next_value >= value) {
            break;
        }
        let moved = (next[0] - beta[0]).abs() + (next[1] - beta[1]).abs();
        beta = next;
        value = next_value;
        if moved < 1e-12 * (1.0 + beta[0].abs() + beta[1].abs()) {
            break;
        }
    }
    if !value.is_finite() {
        return Err(PedError::Initialization(
            "log-posterior is not finite at the penalized mode".into(),
        ));
    }
    let mut info = [[prec, 0.0], [0.0, prec]];
    for &x in &data.exposures {
        let p = crate::curves::expit(beta[0] + beta[1] * x);
        let v = p * (1.0 - p);
        info[0][0] += v;
        info[0][1] += v * x;
        info[1][1] += v * x * x;
    }
    info[1][0] = info[0][1];
    let cov = invert2(&info)
        .ok_or_else(|| PedError::Initialization("singular information matrix".into()))?;
    Ok((LogisticCoefficients::new(beta[0], beta[1])?, cov))
}

/// Which part of a coefficient's robust prior a value belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Part {
    Vague,
    Informative,
}

const REGIONS: [(Part, Part); 4] = [
    (Part::Vague, Part::Vague),
    (Part::Informative, Part::Vague),
    (Part::Vague, Part::Informative),
    (Part::Informative, Part::Informative),
];

/// Sd inflation of the Gaussian pieces of the independence proposal.
const INDEPENDENCE_INFLATION: f64 = 1.5;

/// Proposal geometry for each combination of prior parts. Under a tight
/// informative mixture the posterior is a mixture of pieces whose widths
/// differ by orders of magnitude, so the random-walk step takes its shape
/// from the piece the current state sits in and an independence step jumps
/// between pieces.
struct Proposals {
    prior: ReppPrior,
    /// Random-walk Cholesky factor per region.
    walk: [[[f64; 2]; 2]; 4],
    /// Gaussian centre and sds of the vague coordinates per region.
    centre: [[f64; 2]; 4],
    spread: [[f64; 2]; 4],
    /// Joint independence factor for the all-vague region.
    joint: [[f64; 2]; 2],
    active: Vec<usize>,
}

impl Proposals {
    fn new(data: &TrialDataset, prior: &ReppPrior) -> Result<(Self, LogisticCoefficients)> {
        let (mode, cov) = penalized_mode(data)?;
        let chol = cholesky2(&cov)
            .ok_or_else(|| PedError::Initialization("proposal covariance is not positive".into()))?;
        let sd_int = prior.intercept.variance().max(0.0).sqrt().max(MIN_COMPONENT_SD);
        let sd_slope = prior.slope.variance().max(0.0).sqrt().max(MIN_COMPONENT_SD);
        let (slope_given, slope_var) = conditional_mode(data, 1, prior.intercept.mean(), mode.slope);
        let (int_given, int_var) = conditional_mode(data, 0, prior.slope.mean(), mode.intercept);
        let diag = |a: f64, b: f64| [[a, 0.0], [0.0, b]];
        let walk = [
            chol,
            diag(sd_int, slope_var.sqrt()),
            diag(int_var.sqrt(), sd_slope),
            diag(sd_int, sd_slope),
        ];
        let centre = [
            [mode.intercept, mode.slope],
            [prior.intercept.mean(), slope_given],
            [int_given, prior.slope.mean()],
            [prior.intercept.mean(), prior.slope.mean()],
        ];
        let k = INDEPENDENCE_INFLATION;
        let spread = [
            [k * cov[0][0].sqrt(), k * cov[1][1].sqrt()],
            [sd_int, k * slope_var.sqrt()],
            [k * int_var.sqrt(), sd_slope],
            [sd_int, sd_slope],
        ];
        let joint = [[k * chol[0][0], 0.0], [k * chol[1][0], k * chol[1][1]]];
        let active = if prior.w <= 0.0 {
            vec![0]
        } else if prior.w >= 1.0 {
            vec![3]
        } else {
            vec![0, 1, 2, 3]
        };
        Ok((
            Self {
                prior: *prior,
                walk,
                centre,
                spread,
                joint,
                active,
            },
            mode,
        ))
    }

    fn part(&self, which: Coefficient, v: f64) -> Part {
        let c = self.prior.coefficient(which);
        if c.w <= 0.0 {
            return Part::Vague;
        }
        if c.w >= 1.0 {
            return Part::Informative;
        }
        let inf = c.w.ln() + c.informative.log_density(v);
        let vague = (1.0 - c.w).ln() + normal_log_pdf(v, 0.0, c.noninformative_sd);
        if inf > vague {
            Part::Informative
        } else {
            Part::Vague
        }
    }

    fn region(&self, b: &LogisticCoefficients) -> usize {
        let key = (
            self.part(Coefficient::Intercept, b.intercept),
            self.part(Coefficient::Slope, b.slope),
        );
        REGIONS.iter().position(|r| *r == key).expect("four regions")
    }

    /// Log density of a random-walk move from `from` to `to`.
    fn walk_log_density(&self, from: &LogisticCoefficients, to: &LogisticCoefficients, scale: f64) -> f64 {
        let l = &self.walk[self.region(from)];
        gaussian_log_density(
            [to.intercept - from.intercept, to.slope - from.slope],
            &[[scale * l[0][0], 0.0], [scale * l[1][0], scale * l[1][1]]],
        )
    }

    fn walk_step<R: Rng + ?Sized>(&self, from: &LogisticCoefficients, scale: f64, rng: &mut R) -> LogisticCoefficients {
        let l = &self.walk[self.region(from)];
        let z0: f64 = StandardNormal.sample(rng);
        let z1: f64 = StandardNormal.sample(rng);
        LogisticCoefficients {
            intercept: from.intercept + scale * l[0][0] * z0,
            slope: from.slope + scale * (l[1][0] * z0 + l[1][1] * z1),
        }
    }

    fn independence_draw<R: Rng + ?Sized>(&self, rng: &mut R) -> LogisticCoefficients {
        let r = self.active[rng.random_range(0..self.active.len())];
        let z0: f64 = StandardNormal.sample(rng);
        let z1: f64 = StandardNormal.sample(rng);
        let c = &self.centre[r];
        if r == 0 {
            let l = &self.joint;
            return LogisticCoefficients {
                intercept: c[0] + l[0][0] * z0,
                slope: c[1] + l[1][0] * z0 + l[1][1] * z1,
            };
        }
        let (pi, ps) = REGIONS[r];
        LogisticCoefficients {
            intercept: match pi {
                Part::Informative => self.prior.intercept.sample(rng),
                Part::Vague => c[0] + self.spread[r][0] * z0,
            },
            slope: match ps {
                Part::Informative => self.prior.slope.sample(rng),
                Part::Vague => c[1] + self.spread[r][1] * z1,
            },
        }
    }

    fn independence_log_density(&self, b: &LogisticCoefficients) -> f64 {
        let share = -(self.active.len() as f64).ln();
        let terms: Vec<f64> = self
            .active
            .iter()
            .map(|&r| {
                let c = &self.centre[r];
                if r == 0 {
                    return share
                        + gaussian_log_density([b.intercept - c[0], b.slope - c[1]], &self.joint);
                }
                let (pi, ps) = REGIONS[r];
                let li = match pi {
                    Part::Informative => self.prior.intercept.log_density(b.intercept),
                    Part::Vague => normal_log_pdf(b.intercept, c[0], self.spread[r][0]),
                };
                let ls = match ps {
                    Part::Informative => self.prior.slope.log_density(b.slope),
                    Part::Vague => normal_log_pdf(b.slope, c[1], self.spread[r][1]),
                };
                share + li + ls
            })
            .collect();
        log_sum_exp(&terms)
    }
}

/// Log density of `N(0, L L')` at `d` for a lower-triangular `L`.
fn gaussian_log_density(d: [f64; 2], l: &[[f64; 2]; 2]) -> f64 {
    let z0 = d[0] / l[0][0];
    let z1 = (d[1] - l[1][0] * z0) / l[1][1];
    -0.5 * (z0 * z0 + z1 * z1) - (l[0][0] * l[1][1]).ln() - (2.0 * std::f64::consts::PI).ln()
}

/// Newton ascent over one coefficient with the other held at `fixed_value`,
/// under the vague prior. Returns the conditional mode and the inverse
/// negative second derivative there.
fn conditional_mode(data: &TrialDataset, free: usize, fixed_value: f64, start: f64) -> (f64, f64) {
    let prec = 1.0 / (NONINFORMATIVE_SD * NONINFORMATIVE_SD);
    let coeff = |v: f64| {
        if free == 0 {
            LogisticCoefficients { intercept: v, slope: fixed_value }
        } else {
            LogisticCoefficients { intercept: fixed_value, slope: v }
        }
    };
    let derivs = |v: f64| {
        let b = coeff(v);
        let (mut g, mut h) = (-prec * v, prec);
        for (&x, &y) in data.exposures.iter().zip(&data.outcomes) {
            let p = b.prob(x);
            let z = if free == 0 { 1.0 } else { x };
            g += (y as f64 - p) * z;
            h += p * (1.0 - p) * z * z;
        }
        (g, h)
    };
    let objective = |v: f64| log_likelihood(data, &coeff(v)) - 0.5 * prec * v * v;
    let mut v = if start.is_finite() { start } else { 0.0 };
    let mut value = objective(v);
    for _ in 0..100 {
        let (g, h) = derivs(v);
        let step = g / h;
        let mut t = 1.0;
        let mut next = v + step;
        let mut next_value = objective(next);
        while !(next_value >= value) && t > 1e-10 {
            t *= 0.5;
            next = v + t * step;
            next_value = objective(next);
        }
        if !(next_value >= value) {
            break;
        }
        let moved = (next - v).abs();
        v = next;
        value = next_value;
        if moved < 1e-12 * (1.0 + v.abs()) {
            break;
        }
    }
    (v, 1.0 / derivs(v).1)
}

/// Metropolis-Hastings on `(intercept, slope)` starting at the penalized
/// mode.
///
/// Every iteration makes an adaptive random-walk move followed by an
/// independence move. The random-walk proposal is Gaussian, shaped by the
/// prior piece (vague or informative, per coefficient) that the current state
/// falls in; its Hastings correction accounts for the state dependence. The
/// independence proposal mixes one Gaussian-or-informative product per prior
/// piece, which lets the chain move between the narrow informative modes and
/// the likelihood-dominated region. During burn-in a Robbins-Monro update
/// moves the random-walk scale towards 30% acceptance; it is frozen
/// afterwards. The reported acceptance rate is that of the retained
/// random-walk moves.
pub fn sample_posterior<R: Rng + ?Sized>(
    data: &TrialDataset,
    prior: &ReppPrior,
    settings: &SamplerSettings,
    rng: &mut R,
) -> Result<PosteriorDraws> {
    settings.validate()?;
    let (kit, mode) = Proposals::new(data, prior)?;
    let mut current = mode;
    let mut current_lp = log_posterior(data, prior, &current);
    if !current_lp.is_finite() {
        return Err(PedError::Initialization(format!(
            "log-posterior {current_lp} at the initial point"
        )));
    }
    let mut current_q = kit.independence_log_density(&current);

    let mut log_scale = (2.38f64 / 2f64.sqrt()).ln();
    let mut accepted = 0usize;
    let mut draws = Vec::with_capacity(settings.draws);
    for iter in 0..settings.burn_in + settings.draws {
        let s = log_scale.exp();
        let prop = kit.walk_step(&current, s, rng);
        let prop_lp = log_posterior(data, prior, &prop);
        let log_ratio = prop_lp - current_lp + kit.walk_log_density(&prop, &current, s)
            - kit.walk_log_density(&current, &prop, s);
        let u: f64 = rng.random();
        let accept = log_ratio >= 0.0 || u.ln() < log_ratio;
        if accept {
            current = prop;
            current_lp = prop_lp;
            current_q = kit.independence_log_density(&current);
        }
        if iter < settings.burn_in {
            let hit = if accept { 1.0 } else { 0.0 };
            log_scale += (hit - 0.3) / ((iter + 1) as f64).sqrt();
        } else {
            accepted += accept as usize;
        }

        let jump = kit.independence_draw(rng);
        let jump_lp = log_posterior(data, prior, &jump);
        let jump_q = kit.independence_log_density(&jump);
        let log_ratio = jump_lp - current_lp + current_q - jump_q;
        let u: f64 = rng.random();
        if log_ratio >= 0.0 || u.ln() < log_ratio {
            current = jump;
            current_lp = jump_lp;
            current_q = jump_q;
        }
        if iter >= settings.burn_in {
            draws.push(current);
        }
    }
    let acceptance_rate = accepted as f64 / settings.draws as f64;
    let (lo, hi) = ACCEPTANCE_BAND;
    if !(lo..=hi).contains(&acceptance_rate) {
        return Err(PedError::SamplerDiagnostic {
            rate: acceptance_rate,
            lo,
            hi,
        });
    }
    Ok(PosteriorDraws {
        draws,
        acceptance_rate,
    })
}

/// Fraction of draws whose maximum deviation from the adult curve on the
/// interval of interest is strictly below `epsilon_h`.
pub fn prob_similarity(draws: &PosteriorDraws, comparator: &CurveComparator, epsilon_h: f64) -> f64 {
    let hits = draws
        .draws
        .iter()
        .filter(|d| comparator.max_below(d, epsilon_h))
        .count();
    hits as f64 / draws.draws.len() as f64
}

/// Bayesian decision: declare similarity iff the posterior probability
/// exceeds the threshold.
pub fn decide(prob: f64, epsilon_bayes: f64) -> bool {
    prob > epsilon_bayes
}
