//! Robust elicited-points prior.
//!
//! Pipeline: elicited deviation distributions at three exposures ->
//! synthetic pediatric probabilities -> posterior draws of the pediatric
//! coefficients under a Gaussian working likelihood -> a two-component
//! normal mixture per coefficient -> robust mixture with the wide
//! `N(0, 100^2)` component and borrowing weight `w`.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::curves::{expit, LogisticCoefficients};
use crate::error::{PedError, Result};

/// Standard normal 75th percentile.
pub const Z75: f64 = 0.674_489_750_196_081_7;

/// Sd of the non-informative component.
pub const NONINFORMATIVE_SD: f64 = 100.0;

/// Lower bound on a fitted component sd.
pub const MIN_COMPONENT_SD: f64 = 1e-3;

const EM_VARIANCE_FLOOR: f64 = 1e-6;
const EM_RESTARTS: usize = 10;
const EM_MAX_ITER: usize = 500;
/// Convergence: change of the mean per-draw log-likelihood.
const EM_TOL: f64 = 1e-6;

/// Normal distribution of the log-odds deviation at one exposure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElicitedPoint {
    pub x: f64,
    pub mean: f64,
    pub sd: f64,
}

impl ElicitedPoint {
    pub fn new(x: f64, mean: f64, sd: f64) -> Result<Self> {
        if !(sd > 0.0) || !sd.is_finite() || !mean.is_finite() || !x.is_finite() {
            return Err(PedError::InvalidArgument(format!(
                "elicited point at x = {x} needs finite mean and positive sd, got ({mean}, {sd})"
            )));
        }
        Ok(Self { x, mean, sd })
    }
}

/// Quartiles of the log-odds deviation at one exposure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileElicitation {
    pub x: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
}

/// Least-squares normal fit to three elicited quartiles: ordinary least
/// squares of the quantiles on the standard normal scores, so the intercept
/// is the mean and the slope the sd.
pub fn fit_normal_from_quantiles(q: &QuantileElicitation) -> Result<ElicitedPoint> {
    if !(q.q25 < q.q50 && q.q50 < q.q75) {
        return Err(PedError::InvalidArgument(format!(
            "quantiles at x = {} must be strictly increasing",
            q.x
        )));
    }
    let z = [-Z75, 0.0, Z75];
    let v = [q.q25, q.q50, q.q75];
    let z_mean = z.iter().sum::<f64>() / 3.0;
    let v_mean = v.iter().sum::<f64>() / 3.0;
    let sxy: f64 = z.iter().zip(&v).map(|(a, b)| (a - z_mean) * (b - v_mean)).sum();
    let sxx: f64 = z.iter().map(|a| (a - z_mean).powi(2)).sum();
    let sigma = sxy / sxx;
    let mu = v_mean - sigma * z_mean;
    if !(sigma > 0.0) {
        return Err(PedError::ElicitationInconsistency { sigma });
    }
    ElicitedPoint::new(q.x, mu, sigma)
}

/// Synthetic pediatric response probabilities at the elicited exposures.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    /// `(x_i, y_ij)` grouped by exposure.
    pub records: Vec<(f64, f64)>,
    pub per_point_count: usize,
}

impl SyntheticDataset {
    /// Per-exposure `(x, count, mean, within-group sum of squares)`.
    fn group_stats(&self) -> Vec<(f64, f64, f64, f64)> {
        self.records
            .chunks(self.per_point_count)
            .map(|chunk| {
                let n = chunk.len() as f64;
                let mean = chunk.iter().map(|r| r.1).sum::<f64>() / n;
                let ss = chunk.iter().map(|r| (r.1 - mean).powi(2)).sum::<f64>();
                (chunk[0].0, n, mean, ss)
            })
            .collect()
    }
}

/// For each elicited point draws `per_point_count` deviations and maps the
/// shifted adult log-odds back to the probability scale.
pub fn gen_synthetic<R: Rng + ?Sized>(
    points: &[ElicitedPoint; 3],
    adult: &LogisticCoefficients,
    per_point_count: usize,
    rng: &mut R,
) -> Result<SyntheticDataset> {
    if per_point_count < 2 {
        return Err(PedError::InvalidArgument(
            "synthetic data needs at least two records per point".into(),
        ));
    }
    for pair in [(0, 1), (0, 2), (1, 2)] {
        if points[pair.0].x == points[pair.1].x {
            return Err(PedError::InvalidArgument(
                "elicited exposures must be distinct".into(),
            ));
        }
    }
    let mut records = Vec::with_capacity(3 * per_point_count);
    for p in points {
        let dev = Normal::new(p.mean, p.sd)
            .map_err(|e| PedError::InvalidArgument(format!("elicited point: {e}")))?;
        let base = adult.linear_predictor(p.x);
        for _ in 0..per_point_count {
            records.push((p.x, expit(base + dev.sample(rng))));
        }
    }
    Ok(SyntheticDataset {
        records,
        per_point_count,
    })
}

/// Posterior sample of the coefficients behind a synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct InformativeFit {
    pub draws: Vec<LogisticCoefficients>,
    pub acceptance_rate: f64,
    /// Deterministic least-squares solution, the chain's starting point.
    pub least_squares: LogisticCoefficients,
}

/// Settings of the synthetic-data sampler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InformativeSampler {
    pub burn_in: usize,
    pub draws: usize,
}

impl Default for InformativeSampler {
    fn default() -> Self {
        Self {
            burn_in: 2000,
            draws: 4000,
        }
    }
}

/// Gauss-Newton solution of the least-squares problem
/// `min sum_ij (y_ij - f(x_i, beta))^2`, with the unscaled covariance
/// `(J' W J)^{-1}` at the optimum.
pub fn least_squares_fit(
    data: &SyntheticDataset,
    start: LogisticCoefficients,
) -> Result<(LogisticCoefficients, [[f64; 2]; 2])> {
    let groups = data.group_stats();
    let mut beta = [start.intercept, start.slope];
    let mut cov = [[0.0; 2]; 2];
    for _ in 0..200 {
        let mut jtj = [[0.0; 2]; 2];
        let mut jtr = [0.0; 2];
        for &(x, n, ybar, _) in &groups {
            let f = expit(beta[0] + beta[1] * x);
            let g = [f * (1.0 - f), f * (1.0 - f) * x];
            let r = ybar - f;
            for a in 0..2 {
                jtr[a] += n * g[a] * r;
                for b in 0..2 {
                    jtj[a][b] += n * g[a] * g[b];
                }
            }
        }
        cov = invert2(&jtj).ok_or_else(|| {
            PedError::Initialization("singular Gauss-Newton system".into())
        })?;
        let step = [
            cov[0][0] * jtr[0] + cov[0][1] * jtr[1],
            cov[1][0] * jtr[0] + cov[1][1] * jtr[1],
        ];
        beta[0] += step[0];
        beta[1] += step[1];
        if !beta[0].is_finite() || !beta[1].is_finite() {
            return Err(PedError::Initialization("Gauss-Newton diverged".into()));
        }
        if step[0].abs() + step[1].abs() < 1e-13 * (1.0 + beta[0].abs() + beta[1].abs()) {
            break;
        }
    }
    Ok((LogisticCoefficients::new(beta[0], beta[1])?, cov))
}

pub(crate) fn invert2(m: &[[f64; 2]; 2]) -> Option<[[f64; 2]; 2]> {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if !(det.abs() > 0.0) || !det.is_finite() {
        return None;
    }
    Some([
        [m[1][1] / det, -m[0][1] / det],
        [-m[1][0] / det, m[0][0] / det],
    ])
}

/// Lower Cholesky factor of a 2x2 covariance.
pub(crate) fn cholesky2(c: &[[f64; 2]; 2]) -> Option<[[f64; 2]; 2]> {
    if !(c[0][0] > 0.0) {
        return None;
    }
    let l00 = c[0][0].sqrt();
    let l10 = c[1][0] / l00;
    let rem = c[1][1] - l10 * l10;
    if !(rem > 0.0) {
        return None;
    }
    Some([[l00, 0.0], [l10, rem.sqrt()]])
}

/// Posterior sample of the pediatric coefficients for the synthetic data:
/// Gaussian likelihood around the logistic curve, flat coefficient priors,
/// Jeffreys prior on the noise variance.
///
/// Gibbs sampler: an exact inverse-gamma draw for the noise variance
/// alternates with an adaptive random-walk Metropolis step on the
/// coefficients whose proposal shape is the Gauss-Newton covariance.
pub fn fit_informative<R: Rng + ?Sized>(
    data: &SyntheticDataset,
    adult: &LogisticCoefficients,
    settings: &InformativeSampler,
    rng: &mut R,
) -> Result<InformativeFit> {
    let groups = data.group_stats();
    let total_n: f64 = groups.iter().map(|g| g.1).sum();
    let within: f64 = groups.iter().map(|g| g.3).sum();
    let ssr = |b: &[f64; 2]| -> f64 {
        within
            + groups
                .iter()
                .map(|&(x, n, ybar, _)| n * (ybar - expit(b[0] + b[1] * x)).powi(2))
                .sum::<f64>()
    };

    let (ls, cov) = least_squares_fit(data, *adult)?;
    let chol = cholesky2(&cov)
        .ok_or_else(|| PedError::Initialization("degenerate least-squares covariance".into()))?;
    let mut beta = [ls.intercept, ls.slope];
    let mut current_ssr = ssr(&beta);
    let shape = total_n / 2.0;
    let gamma = Gamma::new(shape, 1.0)
        .map_err(|e| PedError::Initialization(format!("noise variance update: {e}")))?;

    let mut log_scale = (2.38f64 / 2f64.sqrt()).ln();
    let mut accepted = 0usize;
    let mut draws = Vec::with_capacity(settings.draws);
    let total = settings.burn_in + settings.draws;
    for iter in 0..total {
        let sigma2 = (current_ssr / 2.0).max(f64::MIN_POSITIVE) / gamma.sample(rng);
        let sd = sigma2.sqrt() * log_scale.exp();
        let z0: f64 = StandardNormal.sample(rng);
        let z1: f64 = StandardNormal.sample(rng);
        let prop = [
            beta[0] + sd * chol[0][0] * z0,
            beta[1] + sd * (chol[1][0] * z0 + chol[1][1] * z1),
        ];
        let prop_ssr = ssr(&prop);
        let log_ratio = -(prop_ssr - current_ssr) / (2.0 * sigma2);
        let u: f64 = rng.random();
        let accept = log_ratio >= 0.0 || u.ln() < log_ratio;
        if accept {
            beta = prop;
            current_ssr = prop_ssr;
        }
        if iter < settings.burn_in {
            let rate = if accept { 1.0 } else { 0.0 };
            log_scale += (rate - 0.3) / ((iter + 1) as f64).sqrt();
        } else {
            accepted += accept as usize;
            draws.push(LogisticCoefficients {
                intercept: beta[0],
                slope: beta[1],
            });
        }
    }
    let acceptance_rate = accepted as f64 / settings.draws.max(1) as f64;
    if !(0.1..=0.6).contains(&acceptance_rate) {
        return Err(PedError::SamplerDiagnostic {
            rate: acceptance_rate,
            lo: 0.1,
            hi: 0.6,
        });
    }
    Ok(InformativeFit {
        draws,
        acceptance_rate,
        least_squares: ls,
    })
}

/// `p N(mu1, sigma1^2) + (1 - p) N(mu2, sigma2^2)` with `mu1 <= mu2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponentPair {
    pub p: f64,
    pub mu1: f64,
    pub sigma1: f64,
    pub mu2: f64,
    pub sigma2: f64,
}

impl MixtureComponentPair {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.p)
            && self.mu1.is_finite()
            && self.mu2.is_finite()
            && self.sigma1 >= MIN_COMPONENT_SD
            && self.sigma2 >= MIN_COMPONENT_SD
            && self.sigma1.is_finite()
            && self.sigma2.is_finite();
        if !ok {
            return Err(PedError::InvalidArgument(format!(
                "invalid mixture component pair {self:?}"
            )));
        }
        Ok(())
    }

    pub fn density(&self, v: f64) -> f64 {
        self.p * normal_pdf(v, self.mu1, self.sigma1)
            + (1.0 - self.p) * normal_pdf(v, self.mu2, self.sigma2)
    }

    pub fn mean(&self) -> f64 {
        self.p * self.mu1 + (1.0 - self.p) * self.mu2
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.p * (self.sigma1 * self.sigma1 + self.mu1 * self.mu1)
            + (1.0 - self.p) * (self.sigma2 * self.sigma2 + self.mu2 * self.mu2)
            - m * m
    }

    pub fn log_density(&self, v: f64) -> f64 {
        let mut terms = [f64::NEG_INFINITY; 2];
        if self.p > 0.0 {
            terms[0] = self.p.ln() + normal_log_pdf(v, self.mu1, self.sigma1);
        }
        if self.p < 1.0 {
            terms[1] = (1.0 - self.p).ln() + normal_log_pdf(v, self.mu2, self.sigma2);
        }
        log_sum_exp(&terms)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        if rng.random::<f64>() < self.p {
            self.mu1 + self.sigma1 * z
        } else {
            self.mu2 + self.sigma2 * z
        }
    }

    pub fn cdf(&self, v: f64) -> f64 {
        self.p * normal_cdf((v - self.mu1) / self.sigma1)
            + (1.0 - self.p) * normal_cdf((v - self.mu2) / self.sigma2)
    }
}

pub fn normal_pdf(v: f64, mu: f64, sd: f64) -> f64 {
    let z = (v - mu) / sd;
    (-0.5 * z * z).exp() / (sd * (2.0 * PI).sqrt())
}

pub fn normal_log_pdf(v: f64, mu: f64, sd: f64) -> f64 {
    let z = (v - mu) / sd;
    -0.5 * z * z - sd.ln() - 0.5 * (2.0 * PI).ln()
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Two-component univariate normal mixture by expectation-maximization,
/// keeping the best of several random restarts.
pub fn fit_mixture2<R: Rng + ?Sized>(draws: &[f64], rng: &mut R) -> Result<MixtureComponentPair> {
    if draws.len() < 1000 {
        return Err(PedError::MixtureFit(format!(
            "need at least 1000 draws, got {}",
            draws.len()
        )));
    }
    if draws.iter().any(|v| !v.is_finite()) {
        return Err(PedError::MixtureFit("non-finite draw".into()));
    }
    let n = draws.len() as f64;
    let mean = draws.iter().sum::<f64>() / n;
    let var = (draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).max(EM_VARIANCE_FLOOR);

    let mut best: Option<(f64, [f64; 5])> = None;
    for restart in 0..EM_RESTARTS {
        let (m1, m2) = if restart == 0 {
            let mut sorted = draws.to_vec();
            sorted.sort_by(f64::total_cmp);
            (sorted[sorted.len() / 4], sorted[3 * sorted.len() / 4])
        } else {
            (
                draws[rng.random_range(0..draws.len())],
                draws[rng.random_range(0..draws.len())],
            )
        };
        let init = [0.5, m1, var, m2, var];
        if let Some((ll, params)) = em_run(draws, init) {
            if best.as_ref().is_none_or(|(b, _)| ll > *b) {
                best = Some((ll, params));
            }
        }
    }
    let (_, [p, mu1, v1, mu2, v2]) = best.ok_or_else(|| {
        PedError::MixtureFit(format!(
            "EM did not converge in {EM_MAX_ITER} iterations for any restart"
        ))
    })?;
    let (s1, s2) = (
        v1.sqrt().max(MIN_COMPONENT_SD),
        v2.sqrt().max(MIN_COMPONENT_SD),
    );
    let pair = if mu1 <= mu2 {
        MixtureComponentPair {
            p,
            mu1,
            sigma1: s1,
            mu2,
            sigma2: s2,
        }
    } else {
        MixtureComponentPair {
            p: 1.0 - p,
            mu1: mu2,
            sigma1: s2,
            mu2: mu1,
            sigma2: s1,
        }
    };
    Ok(pair)
}

/// One EM run; `None` when it fails to converge.
fn em_run(data: &[f64], init: [f64; 5]) -> Option<(f64, [f64; 5])> {
    let [mut p, mut m1, mut v1, mut m2, mut v2] = init;
    let n = data.len() as f64;
    let mut resp = vec![0.0; data.len()];
    let mut prev_ll = f64::NEG_INFINITY;
    for _ in 0..EM_MAX_ITER {
        let mut ll = 0.0;
        for (r, &x) in resp.iter_mut().zip(data) {
            let a = p.max(1e-300).ln() + normal_log_pdf(x, m1, v1.sqrt());
            let b = (1.0 - p).max(1e-300).ln() + normal_log_pdf(x, m2, v2.sqrt());
            let hi = a.max(b);
            let lse = hi + ((a - hi).exp() + (b - hi).exp()).ln();
            *r = (a - lse).exp();
            ll += lse;
        }
        if !ll.is_finite() {
            return None;
        }
        let w1: f64 = resp.iter().sum();
        let w2 = n - w1;
        if w1 < 1e-9 || w2 < 1e-9 {
            // collapsed onto one component: both at the pooled fit
            let mean = data.iter().sum::<f64>() / n;
            let var = (data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n)
                .max(EM_VARIANCE_FLOOR);
            return Some((ll, [0.5, mean, var, mean, var]));
        }
        p = w1 / n;
        m1 = resp.iter().zip(data).map(|(r, x)| r * x).sum::<f64>() / w1;
        m2 = resp.iter().zip(data).map(|(r, x)| (1.0 - r) * x).sum::<f64>() / w2;
        v1 = (resp.iter().zip(data).map(|(r, x)| r * (x - m1).powi(2)).sum::<f64>() / w1)
            .max(EM_VARIANCE_FLOOR);
        v2 = (resp
            .iter()
            .zip(data)
            .map(|(r, x)| (1.0 - r) * (x - m2).powi(2))
            .sum::<f64>()
            / w2)
            .max(EM_VARIANCE_FLOOR);
        if (ll - prev_ll).abs() / n <= EM_TOL {
            return Some((ll, [p, m1, v1, m2, v2]));
        }
        prev_ll = ll;
    }
    None
}

/// Robust prior for one coefficient:
/// `(1 - w) N(0, 100^2) + w [p N(mu1, s1^2) + (1 - p) N(mu2, s2^2)]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoefficientPrior {
    pub w: f64,
    pub informative: MixtureComponentPair,
    pub noninformative_sd: f64,
}

impl CoefficientPrior {
    pub fn density(&self, v: f64) -> f64 {
        (1.0 - self.w) * normal_pdf(v, 0.0, self.noninformative_sd)
            + self.w * self.informative.density(v)
    }

    pub fn log_density(&self, v: f64) -> f64 {
        let mix = &self.informative;
        let mut terms = [f64::NEG_INFINITY; 3];
        if self.w < 1.0 {
            terms[0] = (1.0 - self.w).ln() + normal_log_pdf(v, 0.0, self.noninformative_sd);
        }
        if self.w > 0.0 {
            if mix.p > 0.0 {
                terms[1] = self.w.ln() + mix.p.ln() + normal_log_pdf(v, mix.mu1, mix.sigma1);
            }
            if mix.p < 1.0 {
                terms[2] =
                    self.w.ln() + (1.0 - mix.p).ln() + normal_log_pdf(v, mix.mu2, mix.sigma2);
            }
        }
        log_sum_exp(&terms)
    }
}

pub(crate) fn log_sum_exp(terms: &[f64]) -> f64 {
    let hi = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + terms.iter().map(|t| (t - hi).exp()).sum::<f64>().ln()
}

/// Independent robust mixture priors on intercept and slope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReppPrior {
    pub w: f64,
    pub intercept: MixtureComponentPair,
    pub slope: MixtureComponentPair,
    pub noninformative_sd: f64,
}

impl ReppPrior {
    pub fn coefficient(&self, which: Coefficient) -> CoefficientPrior {
        let informative = match which {
            Coefficient::Intercept => self.intercept,
            Coefficient::Slope => self.slope,
        };
        CoefficientPrior {
            w: self.w,
            informative,
            noninformative_sd: self.noninformative_sd,
        }
    }

    /// Same informative mixtures with a different borrowing weight.
    pub fn with_weight(&self, w: f64) -> Result<Self> {
        build_repp(self.intercept, self.slope, w)
    }

    /// The prior with no informative component.
    pub fn vague() -> Self {
        let unit = MixtureComponentPair {
            p: 0.5,
            mu1: 0.0,
            sigma1: 1.0,
            mu2: 0.0,
            sigma2: 1.0,
        };
        Self {
            w: 0.0,
            intercept: unit,
            slope: unit,
            noninformative_sd: NONINFORMATIVE_SD,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let prior: Self = serde_json::from_str(&text).map_err(|e| PedError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        build_repp(prior.intercept, prior.slope, prior.w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coefficient {
    Intercept,
    Slope,
}

pub fn build_repp(
    intercept_mix: MixtureComponentPair,
    slope_mix: MixtureComponentPair,
    w: f64,
) -> Result<ReppPrior> {
    if !(0.0..=1.0).contains(&w) {
        return Err(PedError::InvalidArgument(format!(
            "borrowing weight must lie in [0, 1], got {w}"
        )));
    }
    intercept_mix.validate()?;
    slope_mix.validate()?;
    Ok(ReppPrior {
        w,
        intercept: intercept_mix,
        slope: slope_mix,
        noninformative_sd: NONINFORMATIVE_SD,
    })
}

pub fn repp_log_density(prior: &ReppPrior, coeff: &LogisticCoefficients) -> f64 {
    prior.coefficient(Coefficient::Intercept).log_density(coeff.intercept)
        + prior.coefficient(Coefficient::Slope).log_density(coeff.slope)
}

/// Informative mixtures for both coefficients from a posterior sample.
pub fn fit_informative_mixtures<R: Rng + ?Sized>(
    fit: &InformativeFit,
    rng: &mut R,
) -> Result<(MixtureComponentPair, MixtureComponentPair)> {
    let intercepts: Vec<f64> = fit.draws.iter().map(|d| d.intercept).collect();
    let slopes: Vec<f64> = fit.draws.iter().map(|d| d.slope).collect();
    Ok((fit_mixture2(&intercepts, rng)?, fit_mixture2(&slopes, rng)?))
}
