use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ped_core::config::RunConfig;
use ped_core::pipeline;
use ped_core::posterior::TrialDataset;
use ped_core::{PedError, Result};

/// Bayesian design and analysis of pediatric exposure-response similarity
/// studies.
#[derive(Debug, Parser)]
#[command(name = "ped", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `output.dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed (overrides `simulation.seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit the informative prior and write one prior cache per grid weight.
    Elicit(Common),
    /// Build the null and alternative coefficient tables.
    Family(Common),
    /// Run the design search and write the reports.
    Search(Common),
    /// Analyze an observed trial (`exposure,response` CSV).
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Borrowing weight.
        #[arg(long)]
        w: f64,
        /// Posterior probability threshold.
        #[arg(long = "eps-bayes")]
        eps_bayes: f64,
    },
}

fn setup(common: &Common) -> Result<(RunConfig, PathBuf)> {
    if let Some(k) = common.threads {
        if k == 0 {
            return Err(PedError::InvalidArgument("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| PedError::InvalidArgument(e.to_string()))?;
    }
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.simulation.seed = seed;
    }
    let dir = common.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    Ok((cfg, dir))
}

fn show(path: &Path) -> String {
    path.display().to_string()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Elicit(common) => {
            let (cfg, dir) = setup(&common)?;
            let prior = pipeline::elicit(&cfg)?;
            for path in pipeline::write_prior_caches(&cfg, &dir, &prior)? {
                println!("wrote {}", show(&path));
            }
            let (i, s) = (prior.intercept, prior.slope);
            println!(
                "intercept mixture: p={:.4} N({:.5}, {:.5}^2) + N({:.5}, {:.5}^2)",
                i.p, i.mu1, i.sigma1, i.mu2, i.sigma2
            );
            println!(
                "slope mixture:     p={:.4} N({:.5}, {:.5}^2) + N({:.5}, {:.5}^2)",
                s.p, s.mu1, s.sigma1, s.mu2, s.sigma2
            );
        }
        Command::Family(common) => {
            let (cfg, dir) = setup(&common)?;
            let tables = pipeline::family(&cfg)?;
            std::fs::create_dir_all(&dir)?;
            let path = dir.join(pipeline::COEFFICIENT_CACHE);
            tables.save(&path)?;
            println!("wrote {} (1 null table, {} alternative tables)", show(&path), tables.h1.len());
            println!("delta      members  slope range          max eta gap");
            for d in pipeline::family_diagnostics(&cfg, &tables)? {
                println!(
                    "{:<10.4} {:>7}  [{:.4}, {:.4}]  {:.4}",
                    d.delta, d.members, d.slope_min, d.slope_max, d.max_eta_gap
                );
            }
        }
        Command::Search(common) => {
            let (cfg, dir) = setup(&common)?;
            let report = pipeline::run_search(&cfg, &dir)?;
            println!("evaluated {} tuples; reports in {}", report.results.len(), show(&dir));
            if report.ranking.is_empty() {
                println!("no qualified or admissible tuple in the grid");
            }
            for r in report.ranking.iter().take(10) {
                println!(
                    "{:>3}. n={} w={} eps_bayes={}  type1={:.3} power={:.3}  {}",
                    r.rank, r.n, r.w, r.epsilon_bayes, r.type1, r.power, r.reason
                );
            }
        }
        Command::Analyze {
            common,
            data,
            w,
            eps_bayes,
        } => {
            let (cfg, dir) = setup(&common)?;
            let dataset = TrialDataset::load(&data).map_err(|e| match e {
                PedError::Validation(m) => PedError::Validation(format!("{}: {m}", show(&data))),
                other => other,
            })?;
            let r = pipeline::analyze(&cfg, &dir, &dataset, w, eps_bayes)?;
            println!("n = {}, w = {}, eps_bayes = {}", r.n, r.w, r.epsilon_bayes);
            println!("P(max deviation < {}) = {:.4}", r.epsilon_h, r.prob_similarity);
            println!(
                "decision: {}",
                if r.decision { "similar (reject H0)" } else { "similarity not shown" }
            );
            println!(
                "intercept {:.4} (sd {:.4}), slope {:.4} (sd {:.4})",
                r.intercept.mean, r.intercept.sd, r.slope.mean, r.slope.sd
            );
            println!(
                "max deviation median {:.4}, 95% interval [{:.4}, {:.4}]",
                r.max_deviation.q50, r.max_deviation.q025, r.max_deviation.q975
            );
            println!("report in {}", show(&dir.join(pipeline::ANALYSIS)));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
