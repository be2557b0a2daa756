//! Monte Carlo operating characteristics of a design tuple.
//!
//! Each replicate draws a true pediatric curve (from the null or the
//! alternative scenario sampler, or a fixed one), simulates a trial, samples
//! the posterior and records the posterior probability of similarity. Every
//! replicate owns an RNG stream derived from the master seed, the sample size,
//! the scenario kind and the replicate index; the borrowing weight and the
//! decision threshold are deliberately not part of the stream key, so sweeps
//! over `w` and `epsilon_bayes` reuse identical trials.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curves::{CurveComparator, ExposureRange, LogisticCoefficients};
use crate::error::{PedError, Result};
use crate::family::{FamilyMember, ScenarioTables, SlopeGrid, WeightScheme};
use crate::posterior::{decide, prob_similarity, sample_posterior, SamplerSettings, TrialDataset};
use crate::repp::ReppPrior;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignTuple {
    pub n: usize,
    pub w: f64,
    pub epsilon_bayes: f64,
}

impl DesignTuple {
    pub fn new(n: usize, w: f64, epsilon_bayes: f64) -> Result<Self> {
        if n == 0 {
            return Err(PedError::InvalidArgument("sample size must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&w) {
            return Err(PedError::InvalidArgument(format!("w = {w} outside [0, 1]")));
        }
        if !(epsilon_bayes > 0.0 && epsilon_bayes < 1.0) {
            return Err(PedError::InvalidArgument(format!(
                "epsilon_bayes = {epsilon_bayes} outside (0, 1)"
            )));
        }
        Ok(Self { n, w, epsilon_bayes })
    }
}

/// Which scenario generates the true curve of a replicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Hypothesis {
    Null,
    Alternative,
    /// A fixed curve, used by the stability and eta-trend runs.
    Fixed,
}

impl Hypothesis {
    pub fn label(&self) -> &'static str {
        match self {
            Hypothesis::Null => "H0",
            Hypothesis::Alternative => "H1",
            Hypothesis::Fixed => "fixed",
        }
    }

    fn stream_tag(&self) -> u64 {
        match self {
            Hypothesis::Null => 0x4830,
            Hypothesis::Alternative => 0x4831,
            Hypothesis::Fixed => 0x4658,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Replicates per hypothesis (`T`).
    pub replicates: usize,
    pub sampler: SamplerSettings,
    pub epsilon_h: f64,
    pub alpha: f64,
    pub beta_target: f64,
    pub adult: LogisticCoefficients,
    pub range: ExposureRange,
    pub scheme: WeightScheme,
    pub slope_grid: SlopeGrid,
    pub seed: u64,
    /// Probability that a simulated exposure falls in the interval of
    /// interest rather than its complement.
    pub interest_share: f64,
}

impl SimConfig {
    /// The darunavir case study.
    pub fn darunavir() -> Self {
        Self {
            replicates: 1000,
            sampler: SamplerSettings::default(),
            epsilon_h: 0.2,
            alpha: 0.2,
            beta_target: 0.3,
            adult: LogisticCoefficients {
                intercept: -2.83,
                slope: 1.41,
            },
            range: ExposureRange {
                full_lo: 0.0,
                full_hi: 5.0,
                interest_lo: 2.5,
                interest_hi: 5.0,
            },
            scheme: WeightScheme::darunavir(0.2),
            slope_grid: SlopeGrid::default(),
            seed: 20_240_601,
            interest_share: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(PedError::InvalidArgument("replicates must be at least 1".into()));
        }
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta_target)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(PedError::InvalidArgument(format!("{name} = {v} outside (0, 1)")));
            }
        }
        if !(self.epsilon_h > 0.0 && self.epsilon_h < 1.0) {
            return Err(PedError::InvalidArgument(format!(
                "epsilon_h = {} outside (0, 1)",
                self.epsilon_h
            )));
        }
        if !(self.interest_share > 0.0 && self.interest_share <= 1.0) {
            return Err(PedError::InvalidArgument(format!(
                "interest_share = {} outside (0, 1]",
                self.interest_share
            )));
        }
        LogisticCoefficients::new(self.adult.intercept, self.adult.slope)?;
        self.range.validate()?;
        self.scheme.validate()?;
        self.slope_grid.validate()?;
        self.sampler.validate()
    }
}

/// Everything a replicate needs, shared read-only across workers.
#[derive(Debug, Clone)]
pub struct SimContext {
    pub config: SimConfig,
    pub comparator: CurveComparator,
    pub tables: ScenarioTables,
    /// Informative mixtures; the borrowing weight is set per tuple.
    pub prior: ReppPrior,
}

impl SimContext {
    pub fn new(config: SimConfig, tables: ScenarioTables, prior: ReppPrior) -> Result<Self> {
        config.validate()?;
        let comparator = CurveComparator::new(config.adult, config.range)?;
        Ok(Self {
            config,
            comparator,
            tables,
            prior,
        })
    }
}

/// Outcome of one simulated trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub hypothesis: Hypothesis,
    pub truth: FamilyMember,
    pub prob: f64,
    pub acceptance_rate: f64,
    pub retried: bool,
}

impl ReplicateRecord {
    pub fn decision(&self, epsilon_bayes: f64) -> bool {
        decide(self.prob, epsilon_bayes)
    }
}

/// Monte Carlo estimate of the operating characteristics of one tuple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OCEstimate {
    pub tuple: DesignTuple,
    pub type1: f64,
    pub power: f64,
    pub replicates: usize,
}

impl OCEstimate {
    /// Binomial standard errors of `(type1, power)`.
    pub fn standard_errors(&self) -> (f64, f64) {
        let t = self.replicates as f64;
        (
            (self.type1 * (1.0 - self.type1) / t).sqrt(),
            (self.power * (1.0 - self.power) / t).sqrt(),
        )
    }
}

/// SplitMix64 finaliser.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic RNG stream for one replicate.
pub fn replicate_rng(seed: u64, n: usize, hypothesis: Hypothesis, index: usize, attempt: u32) -> ChaCha8Rng {
    let mut h = mix64(seed);
    for part in [n as u64, hypothesis.stream_tag(), index as u64, attempt as u64] {
        h = mix64(h ^ part);
    }
    ChaCha8Rng::seed_from_u64(h)
}

/// i.i.d. exposures: with probability `interest_share` uniform on `[a, b]`,
/// otherwise uniform on `[A, B] \ [a, b]`. When the complement has two
/// pieces one is chosen in proportion to its length. An empty complement
/// sends every draw to `[a, b]`.
pub fn gen_exposures<R: Rng + ?Sized>(
    n: usize,
    range: &ExposureRange,
    interest_share: f64,
    rng: &mut R,
) -> Vec<f64> {
    let left = range.interest_lo - range.full_lo;
    let right = range.full_hi - range.interest_hi;
    let outside = left + right;
    (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            if u <= interest_share || outside <= 0.0 {
                rng.random_range(range.interest_lo..=range.interest_hi)
            } else {
                let v: f64 = rng.random::<f64>() * outside;
                if v < left {
                    range.full_lo + v
                } else {
                    range.interest_hi + (v - left)
                }
            }
        })
        .collect()
}

/// Independent Bernoulli responses from the logistic curve.
pub fn gen_outcomes<R: Rng + ?Sized>(
    exposures: &[f64],
    truth: &LogisticCoefficients,
    rng: &mut R,
) -> Vec<u8> {
    exposures
        .iter()
        .map(|&x| (rng.random::<f64>() < truth.prob(x)) as u8)
        .collect()
}

/// Runs one replicate. A sampler diagnostic or initialization failure is
/// retried once on a fresh stream; a second failure aborts.
pub fn run_replicate(
    ctx: &SimContext,
    n: usize,
    w: f64,
    hypothesis: Hypothesis,
    fixed_truth: Option<&FamilyMember>,
    index: usize,
) -> Result<ReplicateRecord> {
    let prior = ctx.prior.with_weight(w)?;
    let cfg = &ctx.config;
    let mut last_err = None;
    for attempt in 0..2u32 {
        let mut rng = replicate_rng(cfg.seed, n, hypothesis, index, attempt);
        let truth = match (hypothesis, fixed_truth) {
            (Hypothesis::Null, _) => ctx.tables.sample_h0(&mut rng, &cfg.scheme),
            (Hypothesis::Alternative, _) => ctx.tables.sample_h1(&mut rng, &cfg.scheme),
            (Hypothesis::Fixed, Some(t)) => *t,
            (Hypothesis::Fixed, None) => {
                return Err(PedError::InvalidArgument(
                    "fixed-scenario replicate needs a truth".into(),
                ))
            }
        };
        let exposures = gen_exposures(n, &cfg.range, cfg.interest_share, &mut rng);
        let outcomes = gen_outcomes(&exposures, &truth.coeff, &mut rng);
        let data = TrialDataset::new(exposures, outcomes)?;
        match sample_posterior(&data, &prior, &cfg.sampler, &mut rng) {
            Ok(draws) => {
                return Ok(ReplicateRecord {
                    replicate: index,
                    hypothesis,
                    truth,
                    prob: prob_similarity(&draws, &ctx.comparator, cfg.epsilon_h),
                    acceptance_rate: draws.acceptance_rate,
                    retried: attempt > 0,
                })
            }
            Err(e @ (PedError::SamplerDiagnostic { .. } | PedError::Initialization(_))) => {
                last_err = Some(e)
            }
            Err(e) => return Err(e),
        }
    }
    Err(PedError::ReplicateAborted {
        replicate: index,
        hypothesis: hypothesis.label(),
        source: Box::new(last_err.expect("two failed attempts")),
    })
}

/// `replicates` independent replicates for one scenario kind, in index order.
pub fn simulate(
    ctx: &SimContext,
    n: usize,
    w: f64,
    hypothesis: Hypothesis,
    fixed_truth: Option<&FamilyMember>,
    replicates: usize,
) -> Result<Vec<ReplicateRecord>> {
    (0..replicates)
        .into_par_iter()
        .map(|i| run_replicate(ctx, n, w, hypothesis, fixed_truth, i))
        .collect()
}

/// Fraction of replicates that declare similarity at `epsilon_bayes`.
pub fn rejection_rate(records: &[ReplicateRecord], epsilon_bayes: f64) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records.iter().filter(|r| r.decision(epsilon_bayes)).count() as f64 / records.len() as f64
}

/// Null and alternative replicates of one `(n, w)` pair, reusable across
/// decision thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateSet {
    pub n: usize,
    pub w: f64,
    pub null: Vec<ReplicateRecord>,
    pub alternative: Vec<ReplicateRecord>,
}

impl ReplicateSet {
    pub fn run(ctx: &SimContext, n: usize, w: f64) -> Result<Self> {
        let t = ctx.config.replicates;
        Ok(Self {
            n,
            w,
            null: simulate(ctx, n, w, Hypothesis::Null, None, t)?,
            alternative: simulate(ctx, n, w, Hypothesis::Alternative, None, t)?,
        })
    }

    pub fn estimate(&self, epsilon_bayes: f64) -> OCEstimate {
        OCEstimate {
            tuple: DesignTuple {
                n: self.n,
                w: self.w,
                epsilon_bayes,
            },
            type1: rejection_rate(&self.null, epsilon_bayes),
            power: rejection_rate(&self.alternative, epsilon_bayes),
            replicates: self.null.len(),
        }
    }
}

/// Average type I error and power of one tuple.
pub fn average_oc(ctx: &SimContext, tuple: &DesignTuple) -> Result<OCEstimate> {
    Ok(ReplicateSet::run(ctx, tuple.n, tuple.w)?.estimate(tuple.epsilon_bayes))
}

/// Rejection frequency with the true curve held fixed.
pub fn fixed_beta_oc(ctx: &SimContext, tuple: &DesignTuple, truth: &FamilyMember) -> Result<f64> {
    let records = simulate(
        ctx,
        tuple.n,
        tuple.w,
        Hypothesis::Fixed,
        Some(truth),
        ctx.config.replicates,
    )?;
    Ok(rejection_rate(&records, tuple.epsilon_bayes))
}

/// Replicate log rows `replicate,hypothesis,delta,eta,prob,decision`.
pub fn write_replicate_log<W: std::io::Write>(
    writer: W,
    records: &[ReplicateRecord],
    epsilon_bayes: f64,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["replicate", "hypothesis", "delta", "eta", "prob", "decision"])?;
    for r in records {
        w.write_record([
            r.replicate.to_string(),
            r.hypothesis.label().to_string(),
            crate::family::fmt_num(r.truth.delta),
            crate::family::fmt_num(r.truth.eta),
            crate::family::fmt_num(r.prob),
            (r.decision(epsilon_bayes) as u8).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
