//! Logistic exposure-response curves and the deviation functionals used to
//! compare an adult curve with a pediatric one.
//!
//! The deviation is `D(x) = f_adult(x) - f_ped(x)`. Its maximum over the
//! interval of interest `[a, b]` is the similarity measure; its area and the
//! pediatric curve's value at `a` feed the scenario index of the coefficient
//! family.

use serde::{Deserialize, Serialize};

use crate::error::{PedError, Result};

/// Nodes of the dense scan used for the maximum and for Simpson's rule.
pub const SCAN_NODES: usize = 2001;

/// Width in `x` at which the ternary refinement stops.
pub const REFINE_TOL: f64 = 1e-8;

/// Beyond this magnitude the linear predictor is evaluated in the
/// exponent-of-negative form only.
const EXPIT_CUTOFF: f64 = 35.0;

/// `max |s(1-s)(1-2s)|` over the logistic function `s`, i.e. `1/(6*sqrt(3))`.
const SIGMOID_SECOND_DERIV_BOUND: f64 = 0.096_225_044_864_937_63;

/// Intercept/slope pair of a logistic curve on the log-odds scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticCoefficients {
    pub intercept: f64,
    pub slope: f64,
}

impl LogisticCoefficients {
    pub fn new(intercept: f64, slope: f64) -> Result<Self> {
        if !intercept.is_finite() || !slope.is_finite() {
            return Err(PedError::InvalidArgument(format!(
                "logistic coefficients must be finite, got ({intercept}, {slope})"
            )));
        }
        Ok(Self { intercept, slope })
    }

    #[inline]
    pub fn linear_predictor(&self, x: f64) -> f64 {
        self.intercept + self.slope * x
    }

    /// Response probability at `x` without input validation.
    #[inline]
    pub fn prob(&self, x: f64) -> f64 {
        expit(self.linear_predictor(x))
    }
}

/// Full observed exposure range `[A, B]` and the interval of interest `[a, b]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExposureRange {
    pub full_lo: f64,
    pub full_hi: f64,
    pub interest_lo: f64,
    pub interest_hi: f64,
}

impl ExposureRange {
    pub fn new(full_lo: f64, full_hi: f64, interest_lo: f64, interest_hi: f64) -> Result<Self> {
        let range = Self {
            full_lo,
            full_hi,
            interest_lo,
            interest_hi,
        };
        range.validate()?;
        Ok(range)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.full_lo, self.full_hi, self.interest_lo, self.interest_hi];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(PedError::InvalidArgument(
                "exposure range bounds must be finite".into(),
            ));
        }
        if self.full_lo >= self.full_hi {
            return Err(PedError::InvalidArgument(format!(
                "full range [{}, {}] is empty",
                self.full_lo, self.full_hi
            )));
        }
        if self.interest_lo >= self.interest_hi {
            return Err(PedError::InvalidArgument(format!(
                "interval of interest [{}, {}] is degenerate",
                self.interest_lo, self.interest_hi
            )));
        }
        if self.interest_lo < self.full_lo || self.interest_hi > self.full_hi {
            return Err(PedError::InvalidArgument(format!(
                "interval of interest [{}, {}] is not inside [{}, {}]",
                self.interest_lo, self.interest_hi, self.full_lo, self.full_hi
            )));
        }
        Ok(())
    }

    pub fn interest_width(&self) -> f64 {
        self.interest_hi - self.interest_lo
    }

    pub fn contains_full(&self, x: f64) -> bool {
        x >= self.full_lo && x <= self.full_hi
    }
}

/// Summary of `D(x)` over `[a, b]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviationSummary {
    pub max_value: f64,
    pub argmax_x: f64,
    /// Signed area of `D` over `[a, b]`.
    pub area: f64,
    /// Pediatric curve at the left end of the interval of interest.
    pub left_value: f64,
}

/// Numerically stable logistic function.
#[inline]
pub fn expit(z: f64) -> f64 {
    if z > EXPIT_CUTOFF {
        1.0 - (-z).exp()
    } else if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else if z >= -EXPIT_CUTOFF {
        let e = z.exp();
        e / (1.0 + e)
    } else {
        z.exp()
    }
}

/// `log(1 + exp(z))` without overflow.
#[inline]
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub fn logistic_prob(x: f64, coeff: &LogisticCoefficients) -> Result<f64> {
    if !x.is_finite() {
        return Err(PedError::InvalidArgument(format!("exposure {x} is not finite")));
    }
    Ok(coeff.prob(x))
}

pub fn deviation(x: f64, adult: &LogisticCoefficients, ped: &LogisticCoefficients) -> Result<f64> {
    Ok(logistic_prob(x, adult)? - logistic_prob(x, ped)?)
}

/// Composite Simpson's rule on equally spaced samples (odd count).
pub fn simpson(values: &[f64], h: f64) -> f64 {
    debug_assert!(values.len() >= 3 && values.len() % 2 == 1);
    let last = values.len() - 1;
    let mut odd = 0.0;
    let mut even = 0.0;
    for (i, v) in values.iter().enumerate().take(last).skip(1) {
        if i % 2 == 1 {
            odd += v;
        } else {
            even += v;
        }
    }
    h / 3.0 * (values[0] + values[last] + 4.0 * odd + 2.0 * even)
}

/// Maximizes `f` on `[lo, hi]` by ternary search, assuming it is unimodal there.
pub fn ternary_max<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64) {
    while hi - lo > tol {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if f(m1) < f(m2) {
            lo = m1;
        } else {
            hi = m2;
        }
    }
    let x = 0.5 * (lo + hi);
    (x, f(x))
}

/// Adult curve and interval of interest with the adult curve pre-tabulated on
/// the scan grid, so that repeated comparisons only evaluate the pediatric
/// curve.
#[derive(Debug, Clone)]
pub struct CurveComparator {
    adult: LogisticCoefficients,
    range: ExposureRange,
    step: f64,
    nodes: Vec<f64>,
    adult_values: Vec<f64>,
}

/// Every `COARSE_STRIDE`-th scan node forms the coarse grid of the
/// threshold test.
const COARSE_STRIDE: usize = 20;

impl CurveComparator {
    pub fn new(adult: LogisticCoefficients, range: ExposureRange) -> Result<Self> {
        range.validate()?;
        let step = range.interest_width() / (SCAN_NODES - 1) as f64;
        let nodes: Vec<f64> = (0..SCAN_NODES)
            .map(|i| {
                if i == SCAN_NODES - 1 {
                    range.interest_hi
                } else {
                    range.interest_lo + step * i as f64
                }
            })
            .collect();
        let adult_values = nodes.iter().map(|&x| adult.prob(x)).collect();
        Ok(Self {
            adult,
            range,
            step,
            nodes,
            adult_values,
        })
    }

    pub fn adult(&self) -> &LogisticCoefficients {
        &self.adult
    }

    pub fn range(&self) -> &ExposureRange {
        &self.range
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Deviation on every scan node.
    pub fn deviation_grid(&self, ped: &LogisticCoefficients) -> Vec<f64> {
        self.nodes
            .iter()
            .zip(&self.adult_values)
            .map(|(&x, &fa)| fa - ped.prob(x))
            .collect()
    }

    /// Maximum of `D` over `[a, b]`: dense scan, then ternary refinement on
    /// the two cells around the best node. Ties go to the smallest `x`.
    pub fn max_deviation(&self, ped: &LogisticCoefficients) -> DeviationSummary {
        let grid = self.deviation_grid(ped);
        let (max_value, argmax_x) = self.refine_max(ped, &grid);
        DeviationSummary {
            max_value,
            argmax_x,
            area: simpson(&grid, self.step),
            left_value: ped.prob(self.range.interest_lo),
        }
    }

    /// Maximum only, skipping the area.
    pub fn max_value(&self, ped: &LogisticCoefficients) -> f64 {
        let grid = self.deviation_grid(ped);
        self.refine_max(ped, &grid).0
    }

    fn refine_max(&self, ped: &LogisticCoefficients, grid: &[f64]) -> (f64, f64) {
        let mut best = 0;
        for (i, &v) in grid.iter().enumerate() {
            if v > grid[best] {
                best = i;
            }
        }
        let node_value = grid[best];
        let node_x = self.nodes[best];
        let lo = self.nodes[best.saturating_sub(1)];
        let hi = self.nodes[(best + 1).min(SCAN_NODES - 1)];
        let adult = self.adult;
        let (x, v) = ternary_max(|x| adult.prob(x) - ped.prob(x), lo, hi, REFINE_TOL);
        if v > node_value {
            (v, x)
        } else {
            (node_value, node_x)
        }
    }

    /// Whether `max_value(ped) < threshold`, giving exactly the same answer as
    /// comparing [`CurveComparator::max_value`] against the threshold.
    ///
    /// A coarse subset of the scan nodes settles most draws: a coarse value at
    /// or above the threshold already bounds the maximum from below, and an
    /// interior maximum can exceed the nearest coarse node by at most
    /// `H^2/8 * sup|D''|`. Only draws inside that band get the full scan.
    pub fn max_below(&self, ped: &LogisticCoefficients, threshold: f64) -> bool {
        let mut coarse_max = f64::NEG_INFINITY;
        for i in (0..SCAN_NODES).step_by(COARSE_STRIDE) {
            let v = self.adult_values[i] - ped.prob(self.nodes[i]);
            if v >= threshold {
                return false;
            }
            coarse_max = coarse_max.max(v);
        }
        let h = self.step * COARSE_STRIDE as f64;
        let curvature = SIGMOID_SECOND_DERIV_BOUND
            * (self.adult.slope * self.adult.slope + ped.slope * ped.slope);
        // small absolute slack covers rounding in the node evaluations
        let bound = h * h / 8.0 * curvature + 1e-12;
        if coarse_max + bound < threshold {
            return true;
        }
        self.max_value(ped) < threshold
    }
}

/// One-shot maximum deviation over the interval of interest.
pub fn max_deviation(
    adult: &LogisticCoefficients,
    ped: &LogisticCoefficients,
    range: &ExposureRange,
) -> Result<DeviationSummary> {
    Ok(CurveComparator::new(*adult, *range)?.max_deviation(ped))
}
