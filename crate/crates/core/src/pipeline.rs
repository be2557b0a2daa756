//! Orchestration behind the command-line tool: cached prior and coefficient
//! tables, the design search, trial analysis, and the files they write.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::RunConfig;
use crate::curves::CurveComparator;
use crate::error::Result;
use crate::family::{build_family, build_tables, ScenarioTables};
use crate::posterior::{decide, prob_similarity, sample_posterior, TrialDataset};
use crate::repp::{build_repp, fit_informative, fit_informative_mixtures, gen_synthetic, ReppPrior};
use crate::search::{oc_by_weight, search_with, SearchReport};
use crate::sim::{write_replicate_log, SimContext};

pub const COEFFICIENT_CACHE: &str = "coefficients.csv";
pub const OC_TABLE: &str = "oc_table.csv";
pub const STABILITY_TABLE: &str = "stability.csv";
pub const RANKING: &str = "ranking.json";
pub const PLOT_OC_VS_W: &str = "plot_oc_vs_w.csv";
pub const PLOT_ETA_TREND: &str = "plot_eta_trend.csv";
pub const ANALYSIS: &str = "analysis.json";
pub const ANALYSIS_MAX_DEVIATION: &str = "posterior_max_deviation.csv";
pub const REPLICATE_DIR: &str = "replicates";

/// Stream tags that keep the pipeline stages on separate RNG streams.
const ELICIT_STREAM: u64 = 0x454c_4943;
const ANALYZE_STREAM: u64 = 0x414e_4c5a;

fn stage_rng(seed: u64, tag: u64) -> ChaCha8Rng {
    let mut rng_seed = [0u8; 32];
    rng_seed[..8].copy_from_slice(&seed.to_le_bytes());
    rng_seed[8..16].copy_from_slice(&tag.to_le_bytes());
    ChaCha8Rng::from_seed(rng_seed)
}

/// Prior cache file for one borrowing weight.
pub fn prior_cache_name(w: f64) -> String {
    format!("prior_w{w}.json")
}

fn out_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

fn comparator(cfg: &RunConfig) -> Result<CurveComparator> {
    CurveComparator::new(cfg.adult()?, cfg.range()?)
}

/// Fits the informative mixtures and returns the prior at `w = 0`; the
/// borrowing weight is applied per tuple.
pub fn elicit(cfg: &RunConfig) -> Result<ReppPrior> {
    let mut rng = stage_rng(cfg.simulation.seed, ELICIT_STREAM);
    let points = cfg.elicited_points()?;
    let adult = cfg.adult()?;
    let data = gen_synthetic(&points, &adult, cfg.elicitation.per_point_count, &mut rng)?;
    let fit = fit_informative(&data, &adult, &cfg.informative_sampler()?, &mut rng)?;
    let (intercept, slope) = fit_informative_mixtures(&fit, &mut rng)?;
    build_repp(intercept, slope, 0.0)
}

/// Writes one prior cache per weight of the search grid.
pub fn write_prior_caches(cfg: &RunConfig, dir: &Path, prior: &ReppPrior) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    cfg.search
        .w
        .iter()
        .map(|&w| {
            let path = out_path(dir, &prior_cache_name(w));
            prior.with_weight(w)?.save(&path)?;
            Ok(path)
        })
        .collect()
}

/// Loads the prior cache for `w`, or any cache of the grid (the mixtures do
/// not depend on `w`), falling back to a fresh fit.
pub fn load_or_elicit(cfg: &RunConfig, dir: &Path, w: f64) -> Result<ReppPrior> {
    if cfg.output.use_cache {
        let candidates = std::iter::once(w).chain(cfg.search.w.iter().copied());
        for cw in candidates {
            let path = out_path(dir, &prior_cache_name(cw));
            if path.exists() {
                return ReppPrior::load(&path)?.with_weight(w);
            }
        }
    }
    let prior = elicit(cfg)?;
    write_prior_caches(cfg, dir, &prior)?;
    prior.with_weight(w)
}

/// Per-`delta` family diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FamilyDiagnostics {
    pub delta: f64,
    pub members: usize,
    pub slope_min: f64,
    pub slope_max: f64,
    pub max_eta_gap: f64,
}

pub fn family(cfg: &RunConfig) -> Result<ScenarioTables> {
    build_tables(
        cfg.model.epsilon_h,
        &cfg.scheme()?,
        &comparator(cfg)?,
        &cfg.slope_grid(),
    )
}

pub fn family_diagnostics(cfg: &RunConfig, tables: &ScenarioTables) -> Result<Vec<FamilyDiagnostics>> {
    let cmp = comparator(cfg)?;
    let slopes = cfg.slope_grid().slopes(cfg.model.adult_slope);
    std::iter::once(&tables.h0)
        .chain(tables.h1.iter())
        .map(|t| {
            if t.delta == 0.0 {
                return Ok(FamilyDiagnostics {
                    delta: 0.0,
                    members: 1,
                    slope_min: cfg.model.adult_slope,
                    slope_max: cfg.model.adult_slope,
                    max_eta_gap: 0.0,
                });
            }
            let fam = build_family(t.delta, &cmp, &slopes)?;
            let (lo, hi) = fam.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), m| {
                (lo.min(m.coeff.slope), hi.max(m.coeff.slope))
            });
            Ok(FamilyDiagnostics {
                delta: t.delta,
                members: fam.len(),
                slope_min: lo,
                slope_max: hi,
                max_eta_gap: t.max_eta_gap(),
            })
        })
        .collect()
}

pub fn load_or_build_tables(cfg: &RunConfig, dir: &Path) -> Result<ScenarioTables> {
    let path = out_path(dir, COEFFICIENT_CACHE);
    if cfg.output.use_cache && path.exists() {
        return ScenarioTables::load(&path, cfg.model.epsilon_h, &cfg.scheme()?, &comparator(cfg)?);
    }
    let tables = family(cfg)?;
    std::fs::create_dir_all(dir)?;
    tables.save(&path)?;
    Ok(tables)
}

/// Runs the design search and writes every report file into `dir`.
pub fn run_search(cfg: &RunConfig, dir: &Path) -> Result<SearchReport> {
    std::fs::create_dir_all(dir)?;
    let tables = load_or_build_tables(cfg, dir)?;
    let prior = load_or_elicit(cfg, dir, 0.0)?;
    let ctx = SimContext::new(cfg.sim_config()?, tables, prior)?;
    let log_dir = out_path(dir, REPLICATE_DIR);
    let logging = cfg.search.replicate_log;
    let thresholds = cfg.search.epsilon_bayes.clone();
    if logging {
        std::fs::create_dir_all(&log_dir)?;
    }
    let report = search_with(&ctx, &cfg.search_grid(), &cfg.stability_settings(), &mut |set| {
        if !logging {
            return Ok(());
        }
        for &e in &thresholds {
            let name = format!("n{}_w{}_eps{}.csv", set.n, set.w, e);
            let file = BufWriter::new(File::create(log_dir.join(name))?);
            let all: Vec<_> = set.null.iter().chain(&set.alternative).copied().collect();
            write_replicate_log(file, &all, e)?;
        }
        Ok(())
    })?;
    write_reports(&report, &ctx, dir)?;
    Ok(report)
}

pub fn write_reports(report: &SearchReport, ctx: &SimContext, dir: &Path) -> Result<()> {
    let mut oc = csv::Writer::from_path(out_path(dir, OC_TABLE))?;
    oc.write_record(["n", "w", "eps_bayes", "type1", "power", "status"])?;
    for r in &report.results {
        let t = &r.oc.tuple;
        oc.write_record([
            t.n.to_string(),
            t.w.to_string(),
            t.epsilon_bayes.to_string(),
            r.oc.type1.to_string(),
            r.oc.power.to_string(),
            r.classification.status.label().to_string(),
        ])?;
    }
    oc.flush()?;

    let mut st = csv::Writer::from_path(out_path(dir, STABILITY_TABLE))?;
    st.write_record(["n", "w", "eps_bayes", "prop_type1_ok", "prop_power_ok", "stable"])?;
    for r in &report.results {
        if let Some(s) = &r.stability {
            let t = &r.oc.tuple;
            st.write_record([
                t.n.to_string(),
                t.w.to_string(),
                t.epsilon_bayes.to_string(),
                s.prop_type1_ok.to_string(),
                s.prop_power_ok.to_string(),
                s.stable.to_string(),
            ])?;
        }
    }
    st.flush()?;

    let mut f = BufWriter::new(File::create(out_path(dir, RANKING))?);
    serde_json::to_writer_pretty(&mut f, &report.ranking)?;
    writeln!(f)?;
    f.flush()?;

    let mut pw = csv::Writer::from_path(out_path(dir, PLOT_OC_VS_W))?;
    pw.write_record(["n", "eps_bayes", "w", "type1", "power", "type1_se", "power_se"])?;
    for ((n, e), series) in oc_by_weight(&report.results) {
        for oc in series {
            let (s1, s2) = oc.standard_errors();
            pw.write_record([
                n.to_string(),
                f64::from_bits(e).to_string(),
                oc.tuple.w.to_string(),
                oc.type1.to_string(),
                oc.power.to_string(),
                s1.to_string(),
                s2.to_string(),
            ])?;
        }
    }
    pw.flush()?;

    let null_delta = ctx.config.epsilon_h;
    let mut pe = csv::Writer::from_path(out_path(dir, PLOT_ETA_TREND))?;
    pe.write_record(["n", "w", "eps_bayes", "hypothesis", "delta", "eta", "rate"])?;
    for r in &report.results {
        let Some(s) = &r.stability else { continue };
        let t = &r.oc.tuple;
        let mut row = |label: &str, delta: f64, series: &[(f64, f64)]| -> Result<()> {
            for (eta, rate) in series {
                pe.write_record([
                    t.n.to_string(),
                    t.w.to_string(),
                    t.epsilon_bayes.to_string(),
                    label.to_string(),
                    delta.to_string(),
                    eta.to_string(),
                    rate.to_string(),
                ])?;
            }
            Ok(())
        };
        row("H0", null_delta, &s.type1_by_eta)?;
        row("H1", s.h1_delta, &s.power_by_eta)?;
    }
    pe.flush()?;
    Ok(())
}

/// Summary of a posterior quantity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
    pub q975: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let m = v.len() as f64;
        let mean = v.iter().sum::<f64>() / m;
        let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / m).sqrt();
        // type-7 quantiles
        let q = |p: f64| {
            let h = (m - 1.0) * p;
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(v.len() - 1);
            v[lo] + (h - lo as f64) * (v[hi] - v[lo])
        };
        Self {
            mean,
            sd,
            q025: q(0.025),
            q25: q(0.25),
            q50: q(0.5),
            q75: q(0.75),
            q975: q(0.975),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub n: usize,
    pub w: f64,
    pub epsilon_bayes: f64,
    pub epsilon_h: f64,
    pub prob_similarity: f64,
    pub decision: bool,
    pub acceptance_rate: f64,
    pub intercept: Summary,
    pub slope: Summary,
    pub max_deviation: Summary,
}

/// Posterior analysis of an observed trial at borrowing weight `w` and
/// threshold `epsilon_bayes`. Writes the report and the per-draw maximum
/// deviations into `dir`.
pub fn analyze(
    cfg: &RunConfig,
    dir: &Path,
    data: &TrialDataset,
    w: f64,
    epsilon_bayes: f64,
) -> Result<AnalysisReport> {
    crate::sim::DesignTuple::new(data.n(), w, epsilon_bayes)?;
    let range = cfg.range()?;
    data.check_range(&range)?;
    std::fs::create_dir_all(dir)?;
    let prior = load_or_elicit(cfg, dir, w)?;
    let cmp = comparator(cfg)?;
    let settings = cfg.sim_config()?.sampler;
    let mut rng = stage_rng(cfg.simulation.seed, ANALYZE_STREAM);
    let draws = sample_posterior(data, &prior, &settings, &mut rng)?;
    let prob = prob_similarity(&draws, &cmp, cfg.model.epsilon_h);
    let maxes: Vec<f64> = draws.draws.iter().map(|d| cmp.max_value(d)).collect();
    let report = AnalysisReport {
        n: data.n(),
        w,
        epsilon_bayes,
        epsilon_h: cfg.model.epsilon_h,
        prob_similarity: prob,
        decision: decide(prob, epsilon_bayes),
        acceptance_rate: draws.acceptance_rate,
        intercept: Summary::of(&draws.draws.iter().map(|d| d.intercept).collect::<Vec<_>>()),
        slope: Summary::of(&draws.draws.iter().map(|d| d.slope).collect::<Vec<_>>()),
        max_deviation: Summary::of(&maxes),
    };
    let mut f = BufWriter::new(File::create(out_path(dir, ANALYSIS))?);
    serde_json::to_writer_pretty(&mut f, &report)?;
    writeln!(f)?;
    f.flush()?;
    let mut md = csv::Writer::from_path(out_path(dir, ANALYSIS_MAX_DEVIATION))?;
    md.write_record(["draw", "max_deviation"])?;
    for (i, v) in maxes.iter().enumerate() {
        md.write_record([i.to_string(), v.to_string()])?;
    }
    md.flush()?;
    Ok(report)
}
