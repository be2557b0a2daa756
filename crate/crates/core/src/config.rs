//! TOML run configuration.
//!
//! Exposures are in the units of the adult model's covariate; deviations are
//! on the log-odds scale.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::curves::{ExposureRange, LogisticCoefficients};
use crate::error::{PedError, Result};
use crate::family::{delta_grid, SlopeGrid, WeightScheme, H0_ETA_GRID, H1_ETA_GRID};
use crate::posterior::SamplerSettings;
use crate::repp::{fit_normal_from_quantiles, ElicitedPoint, InformativeSampler, QuantileElicitation};
use crate::search::{SearchGrid, StabilitySettings};
use crate::sim::SimConfig;

pub const SCHEMA_VERSION: u32 = 1;

/// The darunavir case study as a config document.
pub const DARUNAVIR_TOML: &str = include_str!("../configs/darunavir.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub model: ModelSection,
    pub elicitation: ElicitationSection,
    #[serde(default)]
    pub family: FamilySection,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default)]
    pub search: SearchSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub adult_intercept: f64,
    pub adult_slope: f64,
    /// `[A, B]`.
    pub full_range: [f64; 2],
    /// `[a, b]`.
    pub interest_range: [f64; 2],
    pub epsilon_h: f64,
    pub alpha: f64,
    pub beta: f64,
    #[serde(default = "default_interest_share")]
    pub interest_share: f64,
}

fn default_interest_share() -> f64 {
    0.5
}

/// One elicited exposure. Give exactly one of `mean`, `relative_mean`
/// (a multiple of the absolute adult log-odds at `x`) or `quantiles`
/// (`[q25, q50, q75]`); `sd` goes with the first two.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointSpec {
    pub x: f64,
    pub mean: Option<f64>,
    pub relative_mean: Option<f64>,
    pub sd: Option<f64>,
    pub quantiles: Option<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElicitationSection {
    pub points: Vec<PointSpec>,
    #[serde(default = "default_per_point")]
    pub per_point_count: usize,
    #[serde(default = "default_inf_burn_in")]
    pub burn_in: usize,
    #[serde(default = "default_inf_draws")]
    pub draws: usize,
}

fn default_per_point() -> usize {
    1000
}
fn default_inf_burn_in() -> usize {
    InformativeSampler::default().burn_in
}
fn default_inf_draws() -> usize {
    InformativeSampler::default().draws
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FamilySection {
    pub slope_lo_factor: f64,
    pub slope_hi_factor: f64,
    pub slope_count: usize,
    pub h0_eta: Vec<f64>,
    pub h0_weights: Vec<f64>,
    pub h1_eta: Vec<f64>,
    pub h1_weights: Vec<f64>,
    /// Weights over `delta = k epsilon_h / K`, `k = 0..K-1`.
    pub delta_weights: Vec<f64>,
}

impl Default for FamilySection {
    fn default() -> Self {
        let g = SlopeGrid::default();
        let s = WeightScheme::darunavir(0.2);
        Self {
            slope_lo_factor: g.lo_factor,
            slope_hi_factor: g.hi_factor,
            slope_count: g.count,
            h0_eta: H0_ETA_GRID.to_vec(),
            h0_weights: s.h0_weights,
            h1_eta: H1_ETA_GRID.to_vec(),
            h1_weights: s.h1_weights,
            delta_weights: s.delta_weights,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationSection {
    pub replicates: usize,
    pub draws: usize,
    pub burn_in: usize,
    pub seed: u64,
}

impl Default for SimulationSection {
    fn default() -> Self {
        let s = SamplerSettings::default();
        Self {
            replicates: 1000,
            draws: s.draws,
            burn_in: s.burn_in,
            seed: 20_240_601,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchSection {
    pub n: Vec<usize>,
    pub w: Vec<f64>,
    pub epsilon_bayes: Vec<f64>,
    pub stability_threshold: f64,
    pub stability_delta_factor: f64,
    pub stability_replicates: usize,
    pub replicate_log: bool,
}

impl Default for SearchSection {
    fn default() -> Self {
        let g = SearchGrid::darunavir();
        let s = StabilitySettings::default();
        Self {
            n: g.n,
            w: g.w,
            epsilon_bayes: g.epsilon_bayes,
            stability_threshold: s.threshold,
            stability_delta_factor: s.h1_delta_factor,
            stability_replicates: s.replicates,
            replicate_log: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Reuse prior and coefficient caches found in `dir`.
    pub use_cache: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("ped-out"),
            use_cache: true,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| PedError::Parse {
            path: origin.to_string(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| PedError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn darunavir() -> Self {
        Self::parse(DARUNAVIR_TOML, "darunavir.toml").expect("bundled config is valid")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(PedError::Validation(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let range = self.range()?;
        for (i, p) in self.elicitation.points.iter().enumerate() {
            if !(range.interest_lo..=range.interest_hi).contains(&p.x) {
                return Err(PedError::Validation(format!(
                    "elicitation.points[{i}].x = {} lies outside the interval of interest",
                    p.x
                )));
            }
        }
        self.elicited_points()?;
        if self.elicitation.per_point_count < 2 {
            return Err(PedError::Validation(
                "elicitation.per_point_count must be at least 2".into(),
            ));
        }
        self.informative_sampler().map(|_| ())?;
        self.sim_config()?.validate()?;
        self.search_grid().validate()?;
        self.stability_settings().validate()
    }

    pub fn adult(&self) -> Result<LogisticCoefficients> {
        LogisticCoefficients::new(self.model.adult_intercept, self.model.adult_slope)
    }

    pub fn range(&self) -> Result<ExposureRange> {
        let m = &self.model;
        ExposureRange::new(
            m.full_range[0],
            m.full_range[1],
            m.interest_range[0],
            m.interest_range[1],
        )
    }

    pub fn elicited_points(&self) -> Result<[ElicitedPoint; 3]> {
        let adult = self.adult()?;
        let pts = &self.elicitation.points;
        if pts.len() != 3 {
            return Err(PedError::Validation(format!(
                "elicitation.points needs exactly 3 entries, got {}",
                pts.len()
            )));
        }
        let one = |i: usize| -> Result<ElicitedPoint> {
            let p = &pts[i];
            let at = |msg: &str| PedError::Validation(format!("elicitation.points[{i}]: {msg}"));
            match (p.mean, p.relative_mean, p.quantiles) {
                (Some(mean), None, None) => {
                    let sd = p.sd.ok_or_else(|| at("`mean` needs `sd`"))?;
                    ElicitedPoint::new(p.x, mean, sd).map_err(|e| at(&e.to_string()))
                }
                (None, Some(rel), None) => {
                    let sd = p.sd.ok_or_else(|| at("`relative_mean` needs `sd`"))?;
                    let mean = rel * adult.linear_predictor(p.x).abs();
                    ElicitedPoint::new(p.x, mean, sd).map_err(|e| at(&e.to_string()))
                }
                (None, None, Some([q25, q50, q75])) => {
                    if p.sd.is_some() {
                        return Err(at("`quantiles` cannot be combined with `sd`"));
                    }
                    fit_normal_from_quantiles(&QuantileElicitation { x: p.x, q25, q50, q75 })
                }
                _ => Err(at("give exactly one of `mean`, `relative_mean` or `quantiles`")),
            }
        };
        Ok([one(0)?, one(1)?, one(2)?])
    }

    pub fn informative_sampler(&self) -> Result<InformativeSampler> {
        let e = &self.elicitation;
        if e.burn_in < 2000 || e.draws < 4000 {
            return Err(PedError::Validation(format!(
                "elicitation sampler needs burn_in >= 2000 and draws >= 4000, got {} / {}",
                e.burn_in, e.draws
            )));
        }
        Ok(InformativeSampler {
            burn_in: e.burn_in,
            draws: e.draws,
        })
    }

    pub fn slope_grid(&self) -> SlopeGrid {
        SlopeGrid {
            lo_factor: self.family.slope_lo_factor,
            hi_factor: self.family.slope_hi_factor,
            count: self.family.slope_count,
        }
    }

    pub fn scheme(&self) -> Result<WeightScheme> {
        let f = &self.family;
        let scheme = WeightScheme {
            h0_eta_grid: f.h0_eta.clone(),
            h0_weights: f.h0_weights.clone(),
            h1_eta_grid: f.h1_eta.clone(),
            h1_weights: f.h1_weights.clone(),
            delta_grid: delta_grid(self.model.epsilon_h, f.delta_weights.len()),
            delta_weights: f.delta_weights.clone(),
        };
        scheme
            .validate()
            .map_err(|e| PedError::Validation(format!("family: {e}")))?;
        Ok(scheme)
    }

    pub fn sim_config(&self) -> Result<SimConfig> {
        let cfg = SimConfig {
            replicates: self.simulation.replicates,
            sampler: SamplerSettings {
                draws: self.simulation.draws,
                burn_in: self.simulation.burn_in,
            },
            epsilon_h: self.model.epsilon_h,
            alpha: self.model.alpha,
            beta_target: self.model.beta,
            adult: self.adult()?,
            range: self.range()?,
            scheme: self.scheme()?,
            slope_grid: self.slope_grid(),
            seed: self.simulation.seed,
            interest_share: self.model.interest_share,
        };
        cfg.validate().map_err(|e| match e {
            PedError::InvalidArgument(m) => PedError::Validation(m),
            other => other,
        })?;
        Ok(cfg)
    }

    pub fn search_grid(&self) -> SearchGrid {
        SearchGrid {
            n: self.search.n.clone(),
            w: self.search.w.clone(),
            epsilon_bayes: self.search.epsilon_bayes.clone(),
        }
    }

    pub fn stability_settings(&self) -> StabilitySettings {
        StabilitySettings {
            threshold: self.search.stability_threshold,
            h1_delta_factor: self.search.stability_delta_factor,
            replicates: self.search.stability_replicates,
        }
    }
}
