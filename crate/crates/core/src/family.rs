//! Pediatric coefficient scenarios with a fixed maximum deviation from the
//! adult curve.
//!
//! For a given deviation `delta`, the family is traced by sweeping the
//! pediatric slope over a grid and pinning the intercept so that
//! `max_{[a,b]} D = delta` while `D >= 0` on `[a, b]`. Members are indexed by
//! `eta`, the min-max normalised product of the deviation area and the
//! pediatric curve at `a`. The tables store one member per `eta` grid slot
//! and drive the null/alternative scenario samplers.

use std::io::{Read, Write};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curves::{CurveComparator, DeviationSummary, LogisticCoefficients};
use crate::error::{PedError, Result};

/// Tolerance on `|max D - delta|` for a solved member.
pub const DELTA_TOL: f64 = 1e-6;
/// Most negative deviation allowed on the scan grid.
pub const FEASIBILITY_TOL: f64 = -1e-6;
/// Largest accepted gap between a requested `eta` and the nearest member.
pub const ETA_TOL: f64 = 0.02;
/// Smallest family accepted by [`build_family`].
pub const MIN_FAMILY: usize = 12;

const DENSIFY_FACTOR: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FamilyMember {
    pub coeff: LogisticCoefficients,
    pub delta: f64,
    pub summary: DeviationSummary,
    pub eta: f64,
}

impl FamilyMember {
    /// The degenerate `delta = 0` scenario: the adult curve itself.
    pub fn adult(comparator: &CurveComparator) -> Self {
        let coeff = *comparator.adult();
        Self {
            coeff,
            delta: 0.0,
            summary: comparator.max_deviation(&coeff),
            eta: 0.0,
        }
    }

    /// `S_D * f_ped(a)`, the quantity normalised into `eta`.
    pub fn eta_score(&self) -> f64 {
        self.summary.area * self.summary.left_value
    }
}

/// Log-spaced pediatric slope sweep, expressed relative to the adult slope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeGrid {
    pub lo_factor: f64,
    pub hi_factor: f64,
    pub count: usize,
}

impl Default for SlopeGrid {
    fn default() -> Self {
        Self {
            lo_factor: 0.2,
            hi_factor: 5.0,
            count: 400,
        }
    }
}

impl SlopeGrid {
    pub fn validate(&self) -> Result<()> {
        if !(self.lo_factor > 0.0 && self.hi_factor > self.lo_factor && self.hi_factor.is_finite())
        {
            return Err(PedError::InvalidArgument(format!(
                "slope grid factors must satisfy 0 < lo < hi, got [{}, {}]",
                self.lo_factor, self.hi_factor
            )));
        }
        if self.count < 2 {
            return Err(PedError::InvalidArgument(
                "slope grid needs at least two points".into(),
            ));
        }
        Ok(())
    }

    pub fn slopes(&self, adult_slope: f64) -> Vec<f64> {
        let lo = (self.lo_factor * adult_slope).ln();
        let hi = (self.hi_factor * adult_slope).ln();
        let n = self.count;
        (0..n)
            .map(|i| (lo + (hi - lo) * i as f64 / (n - 1) as f64).exp())
            .collect()
    }

    pub fn densified(&self) -> Self {
        Self {
            count: (self.count - 1) * DENSIFY_FACTOR + 1,
            ..*self
        }
    }
}

/// Scenario weights: `pi0(eta)` under the null, `pi1(eta)` and `pi(delta)`
/// under the alternative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightScheme {
    pub h0_eta_grid: Vec<f64>,
    pub h0_weights: Vec<f64>,
    pub h1_eta_grid: Vec<f64>,
    pub h1_weights: Vec<f64>,
    /// `k * epsilon_h / 10` for `k = 0..len`.
    pub delta_grid: Vec<f64>,
    pub delta_weights: Vec<f64>,
}

pub const H0_ETA_GRID: [f64; 10] = [0.1, 0.15, 0.25, 0.35, 0.45, 0.55, 0.65, 0.75, 0.85, 0.95];
pub const H1_ETA_GRID: [f64; 11] = [
    0.1, 0.15, 0.25, 0.35, 0.45, 0.55, 0.65, 0.75, 0.85, 0.95, 1.0,
];

impl WeightScheme {
    /// The case-study weights: decreasing in `eta` under the null, increasing
    /// under the alternative, and `pi(delta)` with its mode at `0.3 * epsilon_h`.
    pub fn darunavir(epsilon_h: f64) -> Self {
        Self::with_weights(
            epsilon_h,
            vec![8.0, 4.0, 2.0, 2.0, 2.0, 1.0, 1.0, 1.0, 1.0, 1.0],
            vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 4.0, 8.0],
            vec![1.0, 2.0, 4.0, 8.0, 4.0, 2.0, 1.0, 1.0, 1.0, 1.0],
        )
    }

    pub fn with_weights(
        epsilon_h: f64,
        h0_weights: Vec<f64>,
        h1_weights: Vec<f64>,
        delta_weights: Vec<f64>,
    ) -> Self {
        Self {
            h0_eta_grid: H0_ETA_GRID.to_vec(),
            h0_weights,
            h1_eta_grid: H1_ETA_GRID.to_vec(),
            h1_weights,
            delta_grid: delta_grid(epsilon_h, 10),
            delta_weights,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_grid("h0 eta", &self.h0_eta_grid, &self.h0_weights)?;
        check_grid("h1 eta", &self.h1_eta_grid, &self.h1_weights)?;
        check_weights("delta", &self.delta_grid, &self.delta_weights)?;
        for pair in self.delta_grid.windows(2) {
            if pair[1] <= pair[0] {
                return Err(PedError::InvalidArgument(
                    "delta grid must be strictly increasing".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn normalized(weights: &[f64]) -> Vec<f64> {
        let total: f64 = weights.iter().sum();
        weights.iter().map(|w| w / total).collect()
    }
}

pub fn delta_grid(epsilon_h: f64, count: usize) -> Vec<f64> {
    (0..count)
        .map(|k| k as f64 * epsilon_h / count as f64)
        .collect()
}

fn check_weights(name: &str, grid: &[f64], weights: &[f64]) -> Result<()> {
    if grid.is_empty() || grid.len() != weights.len() {
        return Err(PedError::InvalidArgument(format!(
            "{name} grid has {} values but {} weights",
            grid.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) || weights.iter().sum::<f64>() <= 0.0 {
        return Err(PedError::InvalidArgument(format!(
            "{name} weights must be non-negative with a positive sum"
        )));
    }
    Ok(())
}

fn check_grid(name: &str, grid: &[f64], weights: &[f64]) -> Result<()> {
    check_weights(name, grid, weights)?;
    if grid.iter().any(|e| !(0.0..=1.0).contains(e)) {
        return Err(PedError::InvalidArgument(format!(
            "{name} grid values must lie in [0, 1]"
        )));
    }
    if grid.windows(2).any(|p| p[1] <= p[0]) {
        return Err(PedError::InvalidArgument(format!(
            "{name} grid must be strictly increasing"
        )));
    }
    Ok(())
}

/// Pediatric intercept at which the maximum deviation equals `delta`, for a
/// fixed pediatric slope.
///
/// The maximum deviation falls strictly as the pediatric intercept rises, so
/// the root is bracketed and then polished with Newton steps (derivative from
/// the envelope theorem) that fall back to bisection when they leave the
/// bracket.
pub fn solve_intercept(
    slope: f64,
    delta: f64,
    comparator: &CurveComparator,
) -> Result<LogisticCoefficients> {
    if !(slope > 0.0) || !slope.is_finite() {
        return Err(PedError::InvalidArgument(format!(
            "pediatric slope must be positive, got {slope}"
        )));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(PedError::InvalidArgument(format!(
            "delta must lie in (0, 1), got {delta}"
        )));
    }
    let adult = comparator.adult();
    let range = comparator.range();
    let mid = 0.5 * (range.interest_lo + range.interest_hi);
    let start = adult.intercept + (adult.slope - slope) * mid;
    let excess = |c: f64| {
        let ped = LogisticCoefficients {
            intercept: c,
            slope,
        };
        let s = comparator.max_deviation(&ped);
        (s.max_value - delta, s.argmax_x)
    };

    let infeasible = || PedError::Infeasible { slope, delta };
    let (mut lo, mut hi) = (start - 1.0, start + 1.0);
    let mut step = 1.0;
    let mut guard = 0;
    while excess(lo).0 <= 0.0 {
        step *= 2.0;
        lo -= step;
        guard += 1;
        if guard > 60 {
            return Err(infeasible());
        }
    }
    step = 1.0;
    while excess(hi).0 >= 0.0 {
        step *= 2.0;
        hi += step;
        guard += 1;
        if guard > 120 {
            return Err(infeasible());
        }
    }

    let mut c = 0.5 * (lo + hi);
    for _ in 0..200 {
        let (g, x_star) = excess(c);
        if g.abs() <= 1e-12 || hi - lo <= 1e-13 {
            break;
        }
        if g > 0.0 {
            lo = c;
        } else {
            hi = c;
        }
        let p = LogisticCoefficients {
            intercept: c,
            slope,
        }
        .prob(x_star);
        let dg = -p * (1.0 - p);
        let newton = c - g / dg;
        c = if dg < 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }

    let ped = LogisticCoefficients {
        intercept: c,
        slope,
    };
    let summary = comparator.max_deviation(&ped);
    let min_dev = comparator
        .deviation_grid(&ped)
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    if (summary.max_value - delta).abs() > DELTA_TOL || min_dev < FEASIBILITY_TOL {
        return Err(infeasible());
    }
    Ok(ped)
}

/// All feasible members at `delta` over the slope sweep, sorted by `eta`.
pub fn build_family(
    delta: f64,
    comparator: &CurveComparator,
    slopes: &[f64],
) -> Result<Vec<FamilyMember>> {
    if slopes.iter().any(|s| !(*s > 0.0)) || slopes.windows(2).any(|p| p[1] <= p[0]) {
        return Err(PedError::InvalidArgument(
            "slope grid must be positive and strictly increasing".into(),
        ));
    }
    let solved: Vec<Option<FamilyMember>> = slopes
        .par_iter()
        .map(|&slope| match solve_intercept(slope, delta, comparator) {
            Ok(coeff) => Ok(Some(FamilyMember {
                coeff,
                delta,
                summary: comparator.max_deviation(&coeff),
                eta: f64::NAN,
            })),
            Err(PedError::Infeasible { .. }) => Ok(None),
            Err(e) => Err(e),
        })
        .collect::<Result<_>>()?;
    let mut members: Vec<FamilyMember> = solved.into_iter().flatten().collect();
    if members.len() < MIN_FAMILY {
        return Err(PedError::InsufficientFamily {
            delta,
            found: members.len(),
            required: MIN_FAMILY,
        });
    }

    let scores: Vec<f64> = members.iter().map(FamilyMember::eta_score).collect();
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(PedError::InsufficientFamily {
            delta,
            found: 1,
            required: MIN_FAMILY,
        });
    }
    for (m, s) in members.iter_mut().zip(&scores) {
        m.eta = (s - lo) / (hi - lo);
    }
    members.sort_by(|a, b| a.eta.total_cmp(&b.eta).then(a.coeff.slope.total_cmp(&b.coeff.slope)));
    Ok(members)
}

/// Member whose `eta` is closest to `target`; the first such member on ties.
pub fn coeff_for_eta(family: &[FamilyMember], target: f64) -> Result<FamilyMember> {
    let best = family
        .iter()
        .min_by(|a, b| (a.eta - target).abs().total_cmp(&(b.eta - target).abs()))
        .ok_or_else(|| PedError::InvalidArgument("empty coefficient family".into()))?;
    let gap = (best.eta - target).abs();
    if gap > ETA_TOL {
        return Err(PedError::EtaResolution {
            delta: best.delta,
            target,
            gap,
            tolerance: ETA_TOL,
        });
    }
    Ok(*best)
}

/// Members stored at the `eta` grid values for one `delta`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffTable {
    pub delta: f64,
    pub eta_grid: Vec<f64>,
    pub members: Vec<FamilyMember>,
}

impl CoeffTable {
    /// Builds the family and picks the nearest member for every grid value,
    /// densifying the slope sweep once if some grid value is not resolved.
    pub fn build(
        delta: f64,
        eta_grid: &[f64],
        comparator: &CurveComparator,
        slopes: &SlopeGrid,
    ) -> Result<Self> {
        if delta == 0.0 {
            return Ok(Self::adult(eta_grid, comparator));
        }
        let adult_slope = comparator.adult().slope;
        let attempt = |grid: &SlopeGrid| -> Result<Self> {
            let family = build_family(delta, comparator, &grid.slopes(adult_slope))?;
            let members = eta_grid
                .iter()
                .map(|&e| coeff_for_eta(&family, e))
                .collect::<Result<_>>()?;
            Ok(Self {
                delta,
                eta_grid: eta_grid.to_vec(),
                members,
            })
        };
        match attempt(slopes) {
            Err(PedError::EtaResolution { .. }) | Err(PedError::InsufficientFamily { .. }) => {
                attempt(&slopes.densified())
            }
            other => other,
        }
    }

    /// `delta = 0`: every slot holds the adult curve.
    pub fn adult(eta_grid: &[f64], comparator: &CurveComparator) -> Self {
        let member = FamilyMember::adult(comparator);
        Self {
            delta: 0.0,
            eta_grid: eta_grid.to_vec(),
            members: vec![member; eta_grid.len()],
        }
    }

    pub fn member_at(&self, eta: f64) -> Option<&FamilyMember> {
        self.eta_grid
            .iter()
            .position(|&e| (e - eta).abs() < 1e-12)
            .map(|i| &self.members[i])
    }

    /// Largest `|member.eta - grid value|` over the table.
    pub fn max_eta_gap(&self) -> f64 {
        if self.delta == 0.0 {
            return 0.0;
        }
        self.eta_grid
            .iter()
            .zip(&self.members)
            .map(|(e, m)| (e - m.eta).abs())
            .fold(0.0, f64::max)
    }
}

/// The null table at `delta = epsilon_h` and one alternative table per
/// `delta` on the scheme's delta grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioTables {
    pub epsilon_h: f64,
    pub h0: CoeffTable,
    pub h1: Vec<CoeffTable>,
}

pub fn build_tables(
    epsilon_h: f64,
    scheme: &WeightScheme,
    comparator: &CurveComparator,
    slopes: &SlopeGrid,
) -> Result<ScenarioTables> {
    if !(epsilon_h > 0.0 && epsilon_h < 1.0) {
        return Err(PedError::InvalidArgument(format!(
            "epsilon_h must lie in (0, 1), got {epsilon_h}"
        )));
    }
    scheme.validate()?;
    slopes.validate()?;
    let h0 = CoeffTable::build(epsilon_h, &scheme.h0_eta_grid, comparator, slopes)?;
    let h1 = scheme
        .delta_grid
        .par_iter()
        .map(|&d| CoeffTable::build(d, &scheme.h1_eta_grid, comparator, slopes))
        .collect::<Result<Vec<_>>>()?;
    Ok(ScenarioTables { epsilon_h, h0, h1 })
}

impl ScenarioTables {
    /// Null scenario: `eta` drawn with weights `pi0`.
    pub fn sample_h0<R: Rng + ?Sized>(&self, rng: &mut R, scheme: &WeightScheme) -> FamilyMember {
        let eta = WeightedIndex::new(&scheme.h0_weights).expect("validated weights");
        self.h0.members[eta.sample(rng)]
    }

    /// Alternative scenario: `delta` drawn with weights `pi(delta)`, then
    /// `eta` with weights `pi1`.
    pub fn sample_h1<R: Rng + ?Sized>(&self, rng: &mut R, scheme: &WeightScheme) -> FamilyMember {
        let delta = WeightedIndex::new(&scheme.delta_weights).expect("validated weights");
        let eta = WeightedIndex::new(&scheme.h1_weights).expect("validated weights");
        let k = delta.sample(rng);
        let i = eta.sample(rng);
        self.h1[k].members[i]
    }

    /// Alternative table whose `delta` is closest to `delta`.
    pub fn h1_table_near(&self, delta: f64) -> &CoeffTable {
        self.h1
            .iter()
            .min_by(|a, b| (a.delta - delta).abs().total_cmp(&(b.delta - delta).abs()))
            .expect("non-empty alternative tables")
    }

    fn all_tables(&self) -> impl Iterator<Item = &CoeffTable> {
        std::iter::once(&self.h0).chain(self.h1.iter())
    }

    /// Writes the `delta,eta,intercept,slope,area,left_value` cache. Rows are
    /// grouped by table (null first) in grid-slot order.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["delta", "eta", "intercept", "slope", "area", "left_value"])?;
        for table in self.all_tables() {
            for m in &table.members {
                w.write_record([
                    fmt_num(table.delta),
                    fmt_num(m.eta),
                    fmt_num(m.coeff.intercept),
                    fmt_num(m.coeff.slope),
                    fmt_num(m.summary.area),
                    fmt_num(m.summary.left_value),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    /// Reloads a cache written by [`ScenarioTables::write_csv`]. Row counts
    /// must match the scheme's grids.
    pub fn read_csv<R: Read>(
        reader: R,
        epsilon_h: f64,
        scheme: &WeightScheme,
        comparator: &CurveComparator,
    ) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        let expected = ["delta", "eta", "intercept", "slope", "area", "left_value"];
        if headers.iter().ne(expected.iter().copied()) {
            return Err(PedError::Validation(format!(
                "coefficient cache header must be {}",
                expected.join(",")
            )));
        }
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let mut vals = [0.0; 6];
            for (j, v) in vals.iter_mut().enumerate() {
                *v = rec[j].trim().parse().map_err(|_| {
                    PedError::Validation(format!("coefficient cache row {}: bad number", i + 1))
                })?;
            }
            rows.push(vals);
        }
        let n0 = scheme.h0_eta_grid.len();
        let n1 = scheme.h1_eta_grid.len();
        let n_tables = scheme.delta_grid.len();
        if rows.len() != n0 + n1 * n_tables {
            return Err(PedError::Validation(format!(
                "coefficient cache has {} rows, expected {}",
                rows.len(),
                n0 + n1 * n_tables
            )));
        }
        let to_table = |chunk: &[[f64; 6]], grid: &[f64]| -> CoeffTable {
            let delta = chunk[0][0];
            let members = chunk
                .iter()
                .map(|r| {
                    let coeff = LogisticCoefficients {
                        intercept: r[2],
                        slope: r[3],
                    };
                    let full = comparator.max_deviation(&coeff);
                    FamilyMember {
                        coeff,
                        delta: r[0],
                        summary: DeviationSummary {
                            area: r[4],
                            left_value: r[5],
                            ..full
                        },
                        eta: r[1],
                    }
                })
                .collect();
            CoeffTable {
                delta,
                eta_grid: grid.to_vec(),
                members,
            }
        };
        let h0 = to_table(&rows[..n0], &scheme.h0_eta_grid);
        let h1 = rows[n0..]
            .chunks(n1)
            .map(|c| to_table(c, &scheme.h1_eta_grid))
            .collect();
        Ok(Self { epsilon_h, h0, h1 })
    }

    pub fn load(
        path: &Path,
        epsilon_h: f64,
        scheme: &WeightScheme,
        comparator: &CurveComparator,
    ) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(file), epsilon_h, scheme, comparator)
    }
}

pub(crate) fn fmt_num(v: f64) -> String {
    format!("{v:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curves::ExposureRange;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn comparator() -> CurveComparator {
        CurveComparator::new(
            LogisticCoefficients::new(-2.83, 1.41).unwrap(),
            ExposureRange::new(0.0, 5.0, 2.5, 5.0).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn parallel_shift_is_feasible() {
        let cmp = comparator();
        let ped = solve_intercept(1.41, 0.2, &cmp).unwrap();
        assert!(ped.intercept < -2.83);
        let s = cmp.max_deviation(&ped);
        assert!((s.max_value - 0.2).abs() <= 1e-6);
        assert!(cmp.deviation_grid(&ped).iter().all(|&d| d >= -1e-6));
    }

    #[test]
    fn steep_slope_is_infeasible() {
        let cmp = comparator();
        assert!(matches!(
            solve_intercept(50.0, 0.2, &cmp),
            Err(PedError::Infeasible { .. })
        ));
    }

    #[test]
    fn non_positive_slope_is_invalid() {
        let cmp = comparator();
        assert!(matches!(
            solve_intercept(0.0, 0.2, &cmp),
            Err(PedError::InvalidArgument(_))
        ));
        assert!(matches!(
            solve_intercept(-1.0, 0.2, &cmp),
            Err(PedError::InvalidArgument(_))
        ));
    }

    #[test]
    fn coeff_for_eta_gap_error() {
        let cmp = comparator();
        let fam = build_family(0.2, &cmp, &SlopeGrid::default().slopes(1.41)).unwrap();
        let sparse: Vec<FamilyMember> = vec![fam[0], *fam.last().unwrap()];
        assert!(matches!(
            coeff_for_eta(&sparse, 0.5),
            Err(PedError::EtaResolution { .. })
        ));
        assert!(coeff_for_eta(&[], 0.5).is_err());
    }

    #[test]
    fn degenerate_weights_always_pick_first() {
        let cmp = comparator();
        let mut scheme = WeightScheme::darunavir(0.2);
        scheme.h0_weights = vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        scheme.delta_weights = vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let tables = build_tables(0.2, &scheme, &cmp, &SlopeGrid::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            assert_eq!(tables.sample_h0(&mut rng, &scheme), tables.h0.members[0]);
            assert_eq!(tables.sample_h1(&mut rng, &scheme).coeff, *cmp.adult());
        }
    }

    #[test]
    fn weight_scheme_validation() {
        let mut s = WeightScheme::darunavir(0.2);
        assert!(s.validate().is_ok());
        s.h0_weights.pop();
        assert!(s.validate().is_err());
        let mut s = WeightScheme::darunavir(0.2);
        s.h1_weights[0] = -1.0;
        assert!(s.validate().is_err());
        let n: f64 = WeightScheme::normalized(&WeightScheme::darunavir(0.2).h0_weights)
            .iter()
            .sum();
        assert!((n - 1.0).abs() < 1e-12);
    }

    #[test]
    fn family_members_sit_on_the_margin() {
        let cmp = comparator();
        let fam = build_family(0.2, &cmp, &SlopeGrid::default().slopes(1.41)).unwrap();
        assert!(fam.len() >= MIN_FAMILY);
        let scores: Vec<f64> = fam.iter().map(|m| m.summary.area * m.summary.left_value).collect();
        let lo = scores.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for (m, score) in fam.iter().zip(&scores) {
            let s = cmp.max_deviation(&m.coeff);
            assert!((s.max_value - 0.2).abs() <= DELTA_TOL, "{}", s.max_value);
            assert!(cmp.deviation_grid(&m.coeff).iter().all(|&d| d >= FEASIBILITY_TOL));
            assert!((m.eta - (score - lo) / (hi - lo)).abs() < 1e-12);
            assert!((0.0..=1.0).contains(&m.eta));
        }
        let picked = coeff_for_eta(&fam, 0.55).unwrap();
        let nearest = fam
            .iter()
            .map(|m| (m.eta - 0.55).abs())
            .fold(f64::INFINITY, f64::min);
        assert!(((picked.eta - 0.55).abs() - nearest).abs() < 1e-15);
        assert!(nearest <= ETA_TOL);
    }

    #[test]
    fn delta_grid_steps_by_a_tenth_of_the_margin() {
        let g = delta_grid(0.2, 10);
        assert_eq!(g.len(), 10);
        for (k, d) in g.iter().enumerate() {
            assert!((d - 0.02 * k as f64).abs() < 1e-15);
        }
    }

    #[test]
    fn scenario_sampling_follows_the_weights() {
        let cmp = comparator();
        let scheme = WeightScheme::darunavir(0.2);
        let tables = build_tables(0.2, &scheme, &cmp, &SlopeGrid::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 100_000;
        let mut h0 = vec![0usize; 10];
        let mut delta = vec![0usize; 10];
        let mut h1 = vec![0usize; 11];
        for _ in 0..draws {
            let m = tables.sample_h0(&mut rng, &scheme);
            h0[tables.h0.members.iter().position(|x| *x == m).unwrap()] += 1;
            let m = tables.sample_h1(&mut rng, &scheme);
            let k = tables.h1.iter().position(|t| t.members.contains(&m)).unwrap();
            delta[k] += 1;
            // every slot of the delta = 0 table holds the adult curve
            if k > 0 {
                h1[tables.h1[k].members.iter().position(|x| *x == m).unwrap()] += 1;
            }
        }
        let check = |counts: &[usize], weights: &[f64]| {
            let total: f64 = weights.iter().sum();
            let n = counts.iter().sum::<usize>() as f64;
            for (c, w) in counts.iter().zip(weights) {
                let f = *c as f64 / n;
                assert!((f - w / total).abs() < 0.01, "{f} vs {}", w / total);
            }
        };
        check(&h0, &scheme.h0_weights);
        check(&h1, &scheme.h1_weights);
        check(&delta, &scheme.delta_weights);
        assert!((h0[0] as f64 / draws as f64 - 8.0 / 23.0).abs() < 0.01);
        let mode = (0..10).max_by_key(|&k| delta[k]).unwrap();
        assert!((tables.h1[mode].delta - 0.3 * 0.2).abs() < 1e-12);
        // the delta = 0 table is the adult curve at every slot
        assert!(tables.h1[0].members.iter().all(|m| m.coeff == *cmp.adult()));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("coefficients.csv");
        tables.save(&path).unwrap();
        let back = ScenarioTables::load(&path, 0.2, &scheme, &cmp).unwrap();
        for (a, b) in back.all_tables().zip(tables.all_tables()) {
            assert_eq!(a.delta, b.delta);
            for (x, y) in a.members.iter().zip(&b.members) {
                assert_eq!(x.coeff, y.coeff);
                assert_eq!(x.eta, y.eta);
            }
        }
    }
}
