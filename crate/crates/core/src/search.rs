//! Grid search over design tuples: classification against the error
//! budgets, stability under fixed scenarios, and a ranked report.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{PedError, Result};
use crate::family::{CoeffTable, FamilyMember};
use crate::sim::{rejection_rate, simulate, DesignTuple, Hypothesis, OCEstimate, ReplicateRecord, ReplicateSet, SimContext};

/// Largest violation of a single budget that still leaves a tuple admissible.
pub const ADMISSIBLE_MARGIN: f64 = 0.05;

/// Absorbs representation error when rates sit exactly on a boundary.
const BOUNDARY_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Qualified,
    Admissible,
    Rejected,
}

impl Status {
    pub fn label(&self) -> &'static str {
        match self {
            Status::Qualified => "qualified",
            Status::Admissible => "admissible",
            Status::Rejected => "rejected",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Violation {
    None,
    Type1,
    Power,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub status: Status,
    pub violated: Violation,
    /// Size of the worst violation, zero when none.
    pub margin: f64,
}

pub fn classify(type1: f64, power: f64, alpha: f64, beta_target: f64) -> Classification {
    let excess = (type1 - alpha).max(0.0);
    let shortfall = ((1.0 - beta_target) - power).max(0.0);
    let t1_bad = excess > BOUNDARY_SLACK;
    let pw_bad = shortfall > BOUNDARY_SLACK;
    let (violated, margin) = match (t1_bad, pw_bad) {
        (false, false) => (Violation::None, 0.0),
        (true, false) => (Violation::Type1, excess),
        (false, true) => (Violation::Power, shortfall),
        (true, true) => (Violation::Both, excess.max(shortfall)),
    };
    let status = match violated {
        Violation::None => Status::Qualified,
        Violation::Type1 | Violation::Power if margin <= ADMISSIBLE_MARGIN + BOUNDARY_SLACK => {
            Status::Admissible
        }
        _ => Status::Rejected,
    };
    Classification {
        status,
        violated,
        margin,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilitySettings {
    /// Minimum proportion for both budgets.
    pub threshold: f64,
    /// Alternative scenarios are fixed at `delta = factor * epsilon_h`.
    pub h1_delta_factor: f64,
    /// Replicates per fixed scenario.
    pub replicates: usize,
}

impl Default for StabilitySettings {
    fn default() -> Self {
        Self {
            threshold: 0.8,
            h1_delta_factor: 0.3,
            replicates: 200,
        }
    }
}

impl StabilitySettings {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(PedError::InvalidArgument(format!(
                "stability threshold {} outside [0, 1]",
                self.threshold
            )));
        }
        if !(self.h1_delta_factor > 0.0 && self.h1_delta_factor < 1.0) {
            return Err(PedError::InvalidArgument(format!(
                "stability delta factor {} outside (0, 1)",
                self.h1_delta_factor
            )));
        }
        if self.replicates == 0 {
            return Err(PedError::InvalidArgument("stability replicates must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityScore {
    pub prop_type1_ok: f64,
    pub prop_power_ok: f64,
    pub stable: bool,
    /// `delta` of the alternative scenarios.
    pub h1_delta: f64,
    /// `(eta, rejection rate)` per null scenario.
    pub type1_by_eta: Vec<(f64, f64)>,
    /// `(eta, rejection rate)` per alternative scenario.
    pub power_by_eta: Vec<(f64, f64)>,
}

/// Fixed-scenario replicates of one `(n, w)` pair over the null table and
/// the stability alternative table, reusable across thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedScenarioRuns {
    pub n: usize,
    pub w: f64,
    pub null: Vec<(FamilyMember, Vec<ReplicateRecord>)>,
    pub alternative: Vec<(FamilyMember, Vec<ReplicateRecord>)>,
    /// Grid values the members stand for.
    pub null_eta: Vec<f64>,
    pub alternative_eta: Vec<f64>,
    pub alternative_delta: f64,
}

/// Alternative table used for stability: the cached one when its `delta`
/// matches, otherwise built on the fly.
pub fn stability_table(ctx: &SimContext, settings: &StabilitySettings) -> Result<CoeffTable> {
    let delta = settings.h1_delta_factor * ctx.config.epsilon_h;
    let near = ctx.tables.h1_table_near(delta);
    if (near.delta - delta).abs() < 1e-9 {
        return Ok(near.clone());
    }
    CoeffTable::build(
        delta,
        &ctx.config.scheme.h1_eta_grid,
        &ctx.comparator,
        &ctx.config.slope_grid,
    )
}

impl FixedScenarioRuns {
    pub fn run(
        ctx: &SimContext,
        n: usize,
        w: f64,
        h1_table: &CoeffTable,
        replicates: usize,
    ) -> Result<Self> {
        let over = |table: &CoeffTable| -> Result<Vec<(FamilyMember, Vec<ReplicateRecord>)>> {
            table
                .members
                .iter()
                .map(|m| Ok((*m, simulate(ctx, n, w, Hypothesis::Fixed, Some(m), replicates)?)))
                .collect()
        };
        Ok(Self {
            n,
            w,
            null: over(&ctx.tables.h0)?,
            alternative: over(h1_table)?,
            null_eta: ctx.tables.h0.eta_grid.clone(),
            alternative_eta: h1_table.eta_grid.clone(),
            alternative_delta: h1_table.delta,
        })
    }

    pub fn score(&self, epsilon_bayes: f64, alpha: f64, beta_target: f64, threshold: f64) -> StabilityScore {
        let rates = |runs: &[(FamilyMember, Vec<ReplicateRecord>)], etas: &[f64]| -> Vec<(f64, f64)> {
            etas.iter()
                .zip(runs)
                .map(|(&e, (_, r))| (e, rejection_rate(r, epsilon_bayes)))
                .collect()
        };
        let type1_by_eta = rates(&self.null, &self.null_eta);
        let power_by_eta = rates(&self.alternative, &self.alternative_eta);
        let share = |v: &[(f64, f64)], ok: &dyn Fn(f64) -> bool| {
            v.iter().filter(|(_, r)| ok(*r)).count() as f64 / v.len().max(1) as f64
        };
        let prop_type1_ok = share(&type1_by_eta, &|r| r <= alpha + BOUNDARY_SLACK);
        let prop_power_ok = share(&power_by_eta, &|r| r >= 1.0 - beta_target - BOUNDARY_SLACK);
        StabilityScore {
            prop_type1_ok,
            prop_power_ok,
            stable: prop_type1_ok >= threshold && prop_power_ok >= threshold,
            h1_delta: self.alternative_delta,
            type1_by_eta,
            power_by_eta,
        }
    }
}

/// Stability of a single tuple.
pub fn stability(ctx: &SimContext, tuple: &DesignTuple, settings: &StabilitySettings) -> Result<StabilityScore> {
    settings.validate()?;
    let table = stability_table(ctx, settings)?;
    let runs = FixedScenarioRuns::run(ctx, tuple.n, tuple.w, &table, settings.replicates)?;
    Ok(runs.score(
        tuple.epsilon_bayes,
        ctx.config.alpha,
        ctx.config.beta_target,
        settings.threshold,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchGrid {
    pub n: Vec<usize>,
    pub w: Vec<f64>,
    pub epsilon_bayes: Vec<f64>,
}

impl SearchGrid {
    pub fn darunavir() -> Self {
        Self {
            n: vec![40, 45, 50, 55, 60, 64],
            w: vec![0.1, 0.2, 0.3, 0.4, 0.5],
            epsilon_bayes: vec![0.8, 0.85, 0.9, 0.95, 0.99],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n.is_empty() || self.w.is_empty() || self.epsilon_bayes.is_empty() {
            return Err(PedError::InvalidArgument("search grids must be non-empty".into()));
        }
        for &n in &self.n {
            for &w in &self.w {
                for &e in &self.epsilon_bayes {
                    DesignTuple::new(n, w, e)?;
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TupleResult {
    pub oc: OCEstimate,
    pub classification: Classification,
    /// Present for qualified and admissible tuples.
    pub stability: Option<StabilityScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedTuple {
    pub rank: usize,
    pub n: usize,
    pub w: f64,
    pub epsilon_bayes: f64,
    pub type1: f64,
    pub power: f64,
    pub status: Status,
    pub stable: bool,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub results: Vec<TupleResult>,
    pub ranking: Vec<RankedTuple>,
}

/// Evaluates every tuple of the grid, classifies it, scores the stability
/// of the candidates and ranks them.
pub fn search(ctx: &SimContext, grid: &SearchGrid, settings: &StabilitySettings) -> Result<SearchReport> {
    search_with(ctx, grid, settings, &mut |_| Ok(()))
}

/// [`search`] that hands every `(n, w)` replicate set to `on_set` before
/// moving on, e.g. to write replicate logs.
pub fn search_with(
    ctx: &SimContext,
    grid: &SearchGrid,
    settings: &StabilitySettings,
    on_set: &mut dyn FnMut(&ReplicateSet) -> Result<()>,
) -> Result<SearchReport> {
    grid.validate()?;
    settings.validate()?;
    let cfg = &ctx.config;
    let mut results = Vec::new();
    let mut h1_table = None;
    for &n in &grid.n {
        for &w in &grid.w {
            let set = ReplicateSet::run(ctx, n, w)?;
            on_set(&set)?;
            let mut pending = Vec::new();
            for &e in &grid.epsilon_bayes {
                let oc = set.estimate(e);
                let classification = classify(oc.type1, oc.power, cfg.alpha, cfg.beta_target);
                pending.push(TupleResult {
                    oc,
                    classification,
                    stability: None,
                });
            }
            if pending.iter().any(|r| r.classification.status != Status::Rejected) {
                if h1_table.is_none() {
                    h1_table = Some(stability_table(ctx, settings)?);
                }
                let table = h1_table.as_ref().expect("built above");
                let runs = FixedScenarioRuns::run(ctx, n, w, table, settings.replicates)?;
                for r in pending.iter_mut() {
                    if r.classification.status != Status::Rejected {
                        r.stability = Some(runs.score(
                            r.oc.tuple.epsilon_bayes,
                            cfg.alpha,
                            cfg.beta_target,
                            settings.threshold,
                        ));
                    }
                }
            }
            results.extend(pending);
        }
    }
    let ranking = rank(&results);
    Ok(SearchReport { results, ranking })
}

/// Stable qualified tuples first (ascending `n`), then stable admissible,
/// then unstable candidates; ties go to smaller `w`, then larger power.
pub fn rank(results: &[TupleResult]) -> Vec<RankedTuple> {
    let mut candidates: Vec<&TupleResult> = results
        .iter()
        .filter(|r| r.classification.status != Status::Rejected)
        .collect();
    let group = |r: &TupleResult| {
        let stable = r.stability.as_ref().is_some_and(|s| s.stable);
        match (stable, r.classification.status) {
            (true, Status::Qualified) => 0,
            (true, _) => 1,
            (false, Status::Qualified) => 2,
            _ => 3,
        }
    };
    candidates.sort_by(|a, b| {
        group(a)
            .cmp(&group(b))
            .then(a.oc.tuple.n.cmp(&b.oc.tuple.n))
            .then(a.oc.tuple.w.total_cmp(&b.oc.tuple.w))
            .then(b.oc.power.total_cmp(&a.oc.power))
            .then(a.oc.type1.total_cmp(&b.oc.type1))
            .then(a.oc.tuple.epsilon_bayes.total_cmp(&b.oc.tuple.epsilon_bayes))
    });
    candidates
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let stable = r.stability.as_ref().is_some_and(|s| s.stable);
            let c = &r.classification;
            let budget = match c.violated {
                Violation::None => "meets both error budgets".to_string(),
                Violation::Type1 => format!("type I error over budget by {:.3}", c.margin),
                Violation::Power => format!("power short of target by {:.3}", c.margin),
                Violation::Both => unreachable!("rejected tuples are not ranked"),
            };
            let stability = match &r.stability {
                Some(s) => format!(
                    "{} (type I ok in {:.2} of null scenarios, power ok in {:.2} of alternative scenarios)",
                    if stable { "stable" } else { "unstable" },
                    s.prop_type1_ok,
                    s.prop_power_ok
                ),
                None => "stability not evaluated".to_string(),
            };
            RankedTuple {
                rank: i + 1,
                n: r.oc.tuple.n,
                w: r.oc.tuple.w,
                epsilon_bayes: r.oc.tuple.epsilon_bayes,
                type1: r.oc.type1,
                power: r.oc.power,
                status: c.status,
                stable,
                reason: format!("{}; {budget}; {stability}", c.status.label()),
            }
        })
        .collect()
}

/// Operating characteristics grouped by `(n, epsilon_bayes)` and ordered by
/// `w`, for plotting rates against the borrowing weight.
pub fn oc_by_weight(results: &[TupleResult]) -> BTreeMap<(usize, u64), Vec<OCEstimate>> {
    let mut out: BTreeMap<(usize, u64), Vec<OCEstimate>> = BTreeMap::new();
    for r in results {
        out.entry((r.oc.tuple.n, r.oc.tuple.epsilon_bayes.to_bits()))
            .or_default()
            .push(r.oc);
    }
    for v in out.values_mut() {
        v.sort_by(|a, b| a.tuple.w.total_cmp(&b.tuple.w));
    }
    out
}
