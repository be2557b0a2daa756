//! Acceptance criteria for the darunavir case study. Every criterion prints
//! one `PASS`/`FAIL` line; the process exits non-zero if any fails.
//!
//! `cargo test --release --test acceptance -- c1 c6` runs only the
//! criteria whose id starts with one of the given prefixes.

use std::path::Path;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ped_core::config::RunConfig;
use ped_core::curves::{max_deviation, ExposureRange, LogisticCoefficients};
use ped_core::pipeline;
use ped_core::posterior::{sample_posterior, SamplerSettings, TrialDataset};
use ped_core::repp::{build_repp, Coefficient, MixtureComponentPair, ReppPrior};
use ped_core::search::{classify, stability, StabilitySettings, Status, Violation};
use ped_core::sim::{fixed_beta_oc, gen_exposures, DesignTuple, ReplicateSet, SimContext};

// criterion 1
const MAX_DISTANCE: f64 = 0.0643;
const MAX_DISTANCE_TOL: f64 = 0.0005;
const MAX_DISTANCE_BUDGET: Duration = Duration::from_millis(1);

// criterion 2: (n, type1, power) at w = 0.1, eps_bayes = 0.95
const OC_CELLS: [(usize, f64, f64); 3] = [(45, 0.165, 0.705), (40, 0.135, 0.650), (64, 0.20, 0.740)];
const OC_REPLICATES: usize = 1000;
const OC_TOL: f64 = 0.06;
const OC_SMOKE_REPLICATES: usize = 200;
const OC_SMOKE_TOL: f64 = 0.10;
const OC_SMOKE_BUDGET: Duration = Duration::from_secs(60);

// criterion 3
const MONOTONE_REPLICATES: usize = 500;

// criterion 4
const TREND_REPLICATES: usize = 300;
const TREND_ETA: [f64; 5] = [0.1, 0.35, 0.55, 0.85, 0.95];
const TREND_INVERSION_TOL: f64 = 0.05;

// criterion 5
const STABLE_MIN: f64 = 0.8;
const UNSTABLE_POWER_MAX: f64 = 0.5;

// criterion 6
const NORMALIZATION_TOL: f64 = 1e-6;
const BRUTE_NODES: usize = 200_001;
const BRUTE_PAIRS: usize = 100;
const BRUTE_TOL: f64 = 1e-6;
const TV_TOL: f64 = 0.05;
const MARGINAL_BINS: usize = 10;
const JOINT_BINS: usize = 5;
const MLE_MEAN_TOL: f64 = 0.15;
const MLE_SD_TOL: f64 = 0.10;
const SPLIT_N: usize = 100_000;
const SPLIT_TOL: f64 = 0.005;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn darunavir_context() -> &'static SimContext {
    static CTX: OnceLock<SimContext> = OnceLock::new();
    CTX.get_or_init(|| {
        let cfg = RunConfig::darunavir();
        let tables = pipeline::family(&cfg).unwrap();
        let prior = pipeline::elicit(&cfg).unwrap();
        SimContext::new(cfg.sim_config().unwrap(), tables, prior).unwrap()
    })
}

fn with_replicates(t: usize) -> SimContext {
    let mut ctx = darunavir_context().clone();
    ctx.config.replicates = t;
    ctx
}

fn expit(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn c1_max_distance() -> Outcome {
    let adult = LogisticCoefficients::new(-2.83, 1.41).unwrap();
    let ped = LogisticCoefficients::new(-4.293, 1.886).unwrap();
    let range = ExposureRange::new(0.0, 5.0, 2.5, 5.0).unwrap();
    let mut best = Duration::MAX;
    let mut value = 0.0;
    for _ in 0..50 {
        let t = Instant::now();
        value = max_deviation(&adult, &ped, &range).unwrap().max_value;
        best = best.min(t.elapsed());
    }
    let pass = (value - MAX_DISTANCE).abs() <= MAX_DISTANCE_TOL && best < MAX_DISTANCE_BUDGET;
    outcome(
        pass,
        format!(
            "max deviation {value:.5} (target {MAX_DISTANCE} +- {MAX_DISTANCE_TOL}), {:.1} us",
            best.as_secs_f64() * 1e6
        ),
    )
}

fn oc_cell(n: usize, type1: f64, power: f64, t: usize, tol: f64, budget: Option<Duration>) -> Outcome {
    let ctx = with_replicates(t);
    let start = Instant::now();
    let oc = ReplicateSet::run(&ctx, n, 0.1).unwrap().estimate(0.95);
    let took = start.elapsed();
    let pass = (oc.type1 - type1).abs() <= tol
        && (oc.power - power).abs() <= tol
        && budget.is_none_or(|b| took < b);
    outcome(
        pass,
        format!(
            "(n={n}, w=0.1, eps_bayes=0.95) T={t}: type1 {:.3} (target {type1} +- {tol}), power {:.3} (target {power} +- {tol}), {:.0} s",
            oc.type1,
            oc.power,
            took.as_secs_f64()
        ),
    )
}

fn c3_monotone_in_w() -> Outcome {
    let ctx = with_replicates(MONOTONE_REPLICATES);
    let low = ReplicateSet::run(&ctx, 40, 0.1).unwrap().estimate(0.8);
    let high = ReplicateSet::run(&ctx, 40, 0.5).unwrap().estimate(0.8);
    outcome(
        high.type1 > low.type1 && high.power > low.power,
        format!(
            "n=40, eps_bayes=0.8, T={MONOTONE_REPLICATES}: type1 {:.3} -> {:.3}, power {:.3} -> {:.3} (w 0.1 -> 0.5)",
            low.type1, high.type1, low.power, high.power
        ),
    )
}

fn c4_eta_trend(n: usize, w: f64) -> Outcome {
    let ctx = with_replicates(TREND_REPLICATES);
    let tuple = DesignTuple::new(n, w, 0.95).unwrap();
    let rates: Vec<f64> = TREND_ETA
        .iter()
        .map(|&eta| {
            let truth = ctx.tables.h0.member_at(eta).unwrap();
            fixed_beta_oc(&ctx, &tuple, truth).unwrap()
        })
        .collect();
    let rises: Vec<f64> = rates.windows(2).map(|p| p[1] - p[0]).filter(|&d| d > 0.0).collect();
    let pass = rises.is_empty() || (rises.len() == 1 && rises[0] <= TREND_INVERSION_TOL);
    let shown: Vec<String> = rates.iter().map(|r| format!("{r:.3}")).collect();
    outcome(
        pass,
        format!(
            "(n={n}, w={w}, eps_bayes=0.95) delta=0.2, T={TREND_REPLICATES}: rates over eta {TREND_ETA:?} = [{}]",
            shown.join(", ")
        ),
    )
}

fn c5_stable() -> Outcome {
    let ctx = darunavir_context();
    let settings = StabilitySettings::default();
    let s = stability(ctx, &DesignTuple::new(50, 0.1, 0.95).unwrap(), &settings).unwrap();
    outcome(
        s.prop_type1_ok >= STABLE_MIN && s.prop_power_ok >= STABLE_MIN,
        format!(
            "(50, 0.1, 0.95), {} replicates per scenario: prop_type1_ok {:.2}, prop_power_ok {:.2} (both >= {STABLE_MIN})",
            settings.replicates, s.prop_type1_ok, s.prop_power_ok
        ),
    )
}

fn c5_unstable() -> Outcome {
    let ctx = darunavir_context();
    let settings = StabilitySettings::default();
    let s = stability(ctx, &DesignTuple::new(40, 0.1, 0.95).unwrap(), &settings).unwrap();
    outcome(
        s.prop_power_ok < UNSTABLE_POWER_MAX,
        format!(
            "(40, 0.1, 0.95), {} replicates per scenario: prop_power_ok {:.2} (< {UNSTABLE_POWER_MAX})",
            settings.replicates, s.prop_power_ok
        ),
    )
}

/// Composite Simpson over [-10000, 10000], refined around every component.
fn integrate(prior: &ReppPrior, which: Coefficient) -> f64 {
    let p = prior.coefficient(which);
    let m = p.informative;
    let parts = [(m.mu1, m.sigma1), (m.mu2, m.sigma2), (0.0, p.noninformative_sd)];
    let mut cuts = vec![-10_000.0, 10_000.0];
    for (mu, sd) in parts {
        cuts.push((mu - 12.0 * sd).max(-10_000.0));
        cuts.push((mu + 12.0 * sd).min(10_000.0));
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    cuts.windows(2)
        .map(|c| {
            let (a, b) = (c[0], c[1]);
            let step = parts
                .iter()
                .filter(|(mu, sd)| a < mu + 12.0 * sd && b > mu - 12.0 * sd)
                .map(|(_, sd)| sd / 40.0)
                .fold(1.0f64, f64::min);
            let k = 2 * (((b - a) / step / 2.0).ceil() as usize).max(1);
            let h = (b - a) / k as f64;
            let inner: f64 = (1..k)
                .map(|i| p.density(a + h * i as f64) * if i % 2 == 1 { 4.0 } else { 2.0 })
                .sum();
            h / 3.0 * (p.density(a) + p.density(b) + inner)
        })
        .sum()
}

fn c6_normalization() -> Outcome {
    let base = darunavir_context().prior;
    let mut worst: f64 = 0.0;
    for w in [0.0, 0.1, 0.5, 0.9, 1.0] {
        let prior = base.with_weight(w).unwrap();
        for which in [Coefficient::Intercept, Coefficient::Slope] {
            worst = worst.max((integrate(&prior, which) - 1.0).abs());
        }
    }
    outcome(
        worst <= NORMALIZATION_TOL,
        format!("elicited prior, w in {{0, 0.1, 0.5, 0.9, 1}}: worst |integral - 1| = {worst:.2e}"),
    )
}

fn c6_brute_force_max() -> Outcome {
    let range = ExposureRange::new(0.0, 5.0, 2.5, 5.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let mut worst: f64 = 0.0;
    for _ in 0..BRUTE_PAIRS {
        let adult = LogisticCoefficients::new(rng.random_range(-6.0..1.0), rng.random_range(0.2..3.0)).unwrap();
        let ped = LogisticCoefficients::new(rng.random_range(-6.0..1.0), rng.random_range(0.2..3.0)).unwrap();
        let fast = max_deviation(&adult, &ped, &range).unwrap().max_value;
        let brute = (0..BRUTE_NODES)
            .map(|i| {
                let x = 2.5 + 2.5 * i as f64 / (BRUTE_NODES - 1) as f64;
                expit(adult.intercept + adult.slope * x) - expit(ped.intercept + ped.slope * x)
            })
            .fold(f64::NEG_INFINITY, f64::max);
        worst = worst.max((fast - brute).abs());
    }
    outcome(
        worst <= BRUTE_TOL,
        format!("{BRUTE_PAIRS} random pairs vs {BRUTE_NODES}-node scan: worst gap {worst:.2e}"),
    )
}

fn simulated_trial(n: usize, truth: LogisticCoefficients, seed: u64) -> TrialDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let range = ExposureRange::new(0.0, 5.0, 2.5, 5.0).unwrap();
    let x = gen_exposures(n, &range, 0.5, &mut rng);
    let y = x.iter().map(|&x| (rng.random::<f64>() < truth.prob(x)) as u8).collect();
    TrialDataset::new(x, y).unwrap()
}

/// Equal-mass bin edges of a discrete marginal.
fn equal_mass_edges(nodes: &[f64], mass: &[f64], bins: usize) -> Vec<f64> {
    let mut edges = Vec::new();
    let mut acc = 0.0;
    let mut next = 1;
    for (i, m) in mass.iter().enumerate() {
        acc += m;
        while next < bins && acc >= next as f64 / bins as f64 {
            edges.push(nodes[i]);
            next += 1;
        }
    }
    edges
}

fn bin_of(edges: &[f64], v: f64) -> usize {
    edges.iter().take_while(|&&e| v > e).count()
}

fn c6_grid_quadrature() -> Outcome {
    // moderately narrow informative part, resolvable on the grid
    let pair = |mu: f64, sd: f64| MixtureComponentPair {
        p: 0.4,
        mu1: mu - 0.05,
        sigma1: sd,
        mu2: mu + 0.05,
        sigma2: sd,
    };
    let prior = build_repp(pair(-3.26, 0.15), pair(1.57, 0.08), 0.3).unwrap();
    let data = simulated_trial(30, LogisticCoefficients::new(-4.0, 1.8).unwrap(), 62);

    let (na, nb) = (1200usize, 1200usize);
    let (a0, a1, b0, b1) = (-16.0, 4.0, -1.5, 6.5);
    let (ha, hb) = ((a1 - a0) / na as f64, (b1 - b0) / nb as f64);
    let av: Vec<f64> = (0..na).map(|i| a0 + ha * (i as f64 + 0.5)).collect();
    let bv: Vec<f64> = (0..nb).map(|j| b0 + hb * (j as f64 + 0.5)).collect();
    let pa = prior.coefficient(Coefficient::Intercept);
    let pb = prior.coefficient(Coefficient::Slope);
    let mut logp = vec![0.0; na * nb];
    for (i, &a) in av.iter().enumerate() {
        for (j, &b) in bv.iter().enumerate() {
            let mut ll = pa.density(a).ln() + pb.density(b).ln();
            for (&x, &y) in data.exposures.iter().zip(&data.outcomes) {
                let p = expit(a + b * x);
                ll += if y == 1 { p.ln() } else { (1.0 - p).ln() };
            }
            logp[i * nb + j] = ll;
        }
    }
    let top = logp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut mass: Vec<f64> = logp.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = mass.iter().sum();
    mass.iter_mut().for_each(|m| *m /= total);
    let ma: Vec<f64> = (0..na).map(|i| mass[i * nb..(i + 1) * nb].iter().sum()).collect();
    let mb: Vec<f64> = (0..nb).map(|j| (0..na).map(|i| mass[i * nb + j]).sum()).collect();

    let settings = SamplerSettings {
        draws: 40_000,
        burn_in: 2000,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(63);
    let draws = sample_posterior(&data, &prior, &settings, &mut rng).unwrap();
    let m = draws.draws.len() as f64;

    let tv = |p: &[f64], q: &[f64]| 0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>();
    let binned = |bins: usize| -> (Vec<f64>, Vec<f64>) {
        let (ea, eb) = (equal_mass_edges(&av, &ma, bins), equal_mass_edges(&bv, &mb, bins));
        let mut grid = vec![0.0; bins * bins];
        for i in 0..na {
            for j in 0..nb {
                grid[bin_of(&ea, av[i]) * bins + bin_of(&eb, bv[j])] += mass[i * nb + j];
            }
        }
        let mut chain = vec![0.0; bins * bins];
        for d in &draws.draws {
            chain[bin_of(&ea, d.intercept) * bins + bin_of(&eb, d.slope)] += 1.0 / m;
        }
        (grid, chain)
    };
    let marginal = |joint: &[f64], bins: usize, axis: usize| -> Vec<f64> {
        (0..bins)
            .map(|k| (0..bins).map(|l| if axis == 0 { joint[k * bins + l] } else { joint[l * bins + k] }).sum())
            .collect()
    };
    let (grid, chain) = binned(MARGINAL_BINS);
    let tv_a = tv(&marginal(&grid, MARGINAL_BINS, 0), &marginal(&chain, MARGINAL_BINS, 0));
    let tv_b = tv(&marginal(&grid, MARGINAL_BINS, 1), &marginal(&chain, MARGINAL_BINS, 1));
    let (grid, chain) = binned(JOINT_BINS);
    let tv_joint = tv(&grid, &chain);
    let worst = tv_a.max(tv_b).max(tv_joint);
    outcome(
        worst <= TV_TOL,
        format!(
            "n=30, w=0.3, {MARGINAL_BINS}-bin marginals and {JOINT_BINS}x{JOINT_BINS} joint: TV intercept {tv_a:.3}, slope {tv_b:.3}, joint {tv_joint:.3}"
        ),
    )
}

/// Newton-Raphson maximum likelihood with its inverse observed information.
fn newton_mle(data: &TrialDataset) -> ([f64; 2], [[f64; 2]; 2]) {
    let mut b = [0.0f64, 0.0];
    let mut cov = [[0.0; 2]; 2];
    for _ in 0..100 {
        let (mut g, mut h) = ([0.0; 2], [[0.0; 2]; 2]);
        for (&x, &y) in data.exposures.iter().zip(&data.outcomes) {
            let p = expit(b[0] + b[1] * x);
            let v = p * (1.0 - p);
            g[0] += y as f64 - p;
            g[1] += (y as f64 - p) * x;
            h[0][0] += v;
            h[0][1] += v * x;
            h[1][1] += v * x * x;
        }
        h[1][0] = h[0][1];
        let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
        cov = [[h[1][1] / det, -h[0][1] / det], [-h[1][0] / det, h[0][0] / det]];
        let step = [cov[0][0] * g[0] + cov[0][1] * g[1], cov[1][0] * g[0] + cov[1][1] * g[1]];
        b = [b[0] + step[0], b[1] + step[1]];
        if step[0].abs() + step[1].abs() < 1e-12 {
            break;
        }
    }
    (b, cov)
}

fn c6_mle_agreement() -> Outcome {
    let data = simulated_trial(2000, LogisticCoefficients::new(-4.293, 1.886).unwrap(), 64);
    let (mle, cov) = newton_mle(&data);
    let mut rng = ChaCha8Rng::seed_from_u64(65);
    let draws = sample_posterior(&data, &ReppPrior::vague(), &SamplerSettings::default(), &mut rng).unwrap();
    let (mean, sd) = (draws.mean(), draws.sd());
    let se = [cov[0][0].sqrt(), cov[1][1].sqrt()];
    let dm = [(mean.intercept - mle[0]).abs() / se[0], (mean.slope - mle[1]).abs() / se[1]];
    let ds = [(sd.intercept / se[0] - 1.0).abs(), (sd.slope / se[1] - 1.0).abs()];
    outcome(
        dm[0] <= MLE_MEAN_TOL && dm[1] <= MLE_MEAN_TOL && ds[0] <= MLE_SD_TOL && ds[1] <= MLE_SD_TOL,
        format!(
            "n=2000: |mean - MLE| / se = ({:.3}, {:.3}) (<= {MLE_MEAN_TOL}), |sd / se - 1| = ({:.3}, {:.3}) (<= {MLE_SD_TOL})",
            dm[0], dm[1], ds[0], ds[1]
        ),
    )
}

fn c6_exposure_split() -> Outcome {
    let range = ExposureRange::new(0.0, 5.0, 2.5, 5.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(66);
    let xs = gen_exposures(SPLIT_N, &range, 0.5, &mut rng);
    let share = xs.iter().filter(|&&x| x >= 2.5).count() as f64 / SPLIT_N as f64;
    outcome(
        (share - 0.5).abs() <= SPLIT_TOL,
        format!("n={SPLIT_N}: share in [2.5, 5] = {share:.4} (0.5 +- {SPLIT_TOL})"),
    )
}

fn c6_classify() -> Outcome {
    let a = classify(0.165, 0.705, 0.2, 0.3);
    let b = classify(0.135, 0.650, 0.2, 0.3);
    let c = classify(0.305, 0.775, 0.2, 0.3);
    let pass = a.status == Status::Qualified
        && (b.status, b.violated) == (Status::Admissible, Violation::Power)
        && (c.status, c.violated) == (Status::Rejected, Violation::Type1);
    outcome(
        pass,
        format!(
            "(0.165, 0.705) {}, (0.135, 0.650) {}, (0.305, 0.775) {}",
            a.status.label(),
            b.status.label(),
            c.status.label()
        ),
    )
}

fn smoke_config() -> RunConfig {
    RunConfig::parse(include_str!("../configs/smoke.toml"), "smoke.toml").unwrap()
}

fn report_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

fn c6_determinism() -> Outcome {
    let mut cfg = smoke_config();
    cfg.model.alpha = 0.6;
    cfg.model.beta = 0.6;
    cfg.simulation.replicates = 20;
    cfg.simulation.draws = 1000;
    cfg.simulation.burn_in = 1000;
    cfg.search.n = vec![40];
    cfg.search.w = vec![0.1];
    cfg.search.stability_replicates = 4;
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    pipeline::run_search(&cfg, a.path()).unwrap();
    pipeline::run_search(&cfg, b.path()).unwrap();
    let (fa, fb) = (report_files(a.path()), report_files(b.path()));
    outcome(
        !fa.is_empty() && fa == fb,
        format!("{} report files compared across two seeded runs", fa.len()),
    )
}

fn smoke_grid() -> Outcome {
    let cfg = smoke_config();
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let report = pipeline::run_search(&cfg, dir.path()).unwrap();
    let files = report_files(dir.path());
    let expected = [
        pipeline::OC_TABLE,
        pipeline::STABILITY_TABLE,
        pipeline::RANKING,
        pipeline::PLOT_OC_VS_W,
        pipeline::PLOT_ETA_TREND,
    ];
    let complete = expected.iter().all(|n| files.iter().any(|f| f.0 == *n));
    outcome(
        report.results.len() == 8 && complete,
        format!(
            "2 x 2 x 2 grid, T={}: {} tuples evaluated, {} ranked, {:.0} s",
            cfg.simulation.replicates,
            report.results.len(),
            report.ranking.len(),
            start.elapsed().as_secs_f64()
        ),
    )
}

type Criterion = (&'static str, &'static str, Box<dyn Fn() -> Outcome>);

fn criteria() -> Vec<Criterion> {
    let mut list: Vec<Criterion> = vec![("c1", "max-distance reproduction", Box::new(c1_max_distance))];
    for (n, t1, pw) in OC_CELLS {
        list.push((
            "c2",
            "operating characteristics",
            Box::new(move || oc_cell(n, t1, pw, OC_REPLICATES, OC_TOL, None)),
        ));
    }
    for (n, t1, pw) in OC_CELLS {
        list.push((
            "c2-smoke",
            "operating characteristics, smoke mode",
            Box::new(move || oc_cell(n, t1, pw, OC_SMOKE_REPLICATES, OC_SMOKE_TOL, Some(OC_SMOKE_BUDGET))),
        ));
    }
    list.push(("c3", "monotone in w", Box::new(c3_monotone_in_w)));
    for n in [45, 55] {
        for w in [0.1, 0.3] {
            list.push(("c4", "eta trend", Box::new(move || c4_eta_trend(n, w))));
        }
    }
    list.push(("c5", "stable tuple", Box::new(c5_stable)));
    list.push(("c5", "unstable tuple", Box::new(c5_unstable)));
    list.push(("c6a", "prior normalization", Box::new(c6_normalization)));
    list.push(("c6b", "max deviation vs brute force", Box::new(c6_brute_force_max)));
    list.push(("c6c", "sampler vs grid quadrature", Box::new(c6_grid_quadrature)));
    list.push(("c6d", "sampler vs Newton MLE", Box::new(c6_mle_agreement)));
    list.push(("c6e", "exposure split", Box::new(c6_exposure_split)));
    list.push(("c6f", "classify truth table", Box::new(c6_classify)));
    list.push(("c6g", "pipeline determinism", Box::new(c6_determinism)));
    list.push(("smoke", "smoke grid", Box::new(smoke_grid)));
    list
}

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let selected = |id: &str| filters.is_empty() || filters.iter().any(|f| id.starts_with(f.as_str()));
    let (mut passed, mut failed) = (0, 0);
    for (id, name, check) in criteria() {
        if !selected(id) {
            continue;
        }
        let start = Instant::now();
        let o = check();
        println!(
            "{} {id:<8} {name}: {} [{:.1} s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
        if o.pass {
            passed += 1;
        } else {
            failed += 1;
        }
    }
    println!("acceptance: {passed} passed, {failed} failed");
    if failed > 0 {
        std::process::exit(1);
    }
}
