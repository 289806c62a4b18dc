//! Schedule-delay risk for drivers facing an uncertain travel time.
//!
//! A driver picks a planned travel-time budget `rho` and pays
//! `theta_late * (T - rho)^+ + theta_early * (rho - T)^+` for arriving off
//! schedule. For these piecewise-linear penalties the best budget is a
//! quantile of `T` (the newsvendor solution). General convex penalties are
//! handled by bisection on subgradients.

use thiserror::Error;

use crate::measures::{DiscreteMeasure, MASS_TOL};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RiskError {
    #[error("travel-time distribution has mass {0}, expected 1")]
    NotProbability(f64),
    #[error("penalty weights must be non-negative and not both zero")]
    InvalidPenalty,
    #[error("penalty is not convex near {0}")]
    NonConvex(f64),
    #[error("no route distributions given")]
    NoRoutes,
}

type Result<T> = std::result::Result<T, RiskError>;

/// Late and early arrival values of time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltySpec {
    pub late: f64,
    pub early: f64,
}

impl PenaltySpec {
    pub fn new(late: f64, early: f64) -> Result<Self> {
        if !(late.is_finite() && early.is_finite() && late >= 0.0 && early >= 0.0)
            || late + early <= 0.0
        {
            return Err(RiskError::InvalidPenalty);
        }
        Ok(PenaltySpec { late, early })
    }

    /// Penalty for arriving `x = T - rho` late (negative `x` is early).
    pub fn value(&self, x: f64) -> f64 {
        if x > 0.0 {
            self.late * x
        } else {
            -self.early * x
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskResult {
    /// Canonical minimizer (left end of the minimizing interval).
    pub rho: f64,
    /// Minimal expected penalty.
    pub risk: f64,
    pub expected_time: f64,
    /// `expected_time + risk`.
    pub total: f64,
    /// All minimizers; degenerate when unique.
    pub interval: (f64, f64),
}

impl RiskResult {
    pub fn is_unique(&self) -> bool {
        self.interval.0 == self.interval.1
    }
}

fn check_probability(t: &DiscreteMeasure) -> Result<()> {
    let m = t.total_mass();
    if (m - 1.0).abs() > MASS_TOL || t.is_empty() {
        return Err(RiskError::NotProbability(m));
    }
    Ok(())
}

/// Expected penalty `E[pi(T - rho)]`.
pub fn expected_penalty(t: &DiscreteMeasure, rho: f64, pi: impl Fn(f64) -> f64) -> f64 {
    t.atoms().iter().map(|a| a.weight * pi(a.location - rho)).sum()
}

/// Optimal budget for the piecewise-linear penalty.
pub fn optimal_rho(t: &DiscreteMeasure, pen: &PenaltySpec) -> Result<RiskResult> {
    check_probability(t)?;
    let kappa = pen.late / (pen.late + pen.early);
    let atoms = t.atoms();
    let mut cdf = 0.0;
    let mut interval = None;
    for (k, a) in atoms.iter().enumerate() {
        cdf += a.weight;
        if (cdf - kappa).abs() <= MASS_TOL && k + 1 < atoms.len() {
            interval = Some((a.location, atoms[k + 1].location));
            break;
        }
        if cdf >= kappa {
            interval = Some((a.location, a.location));
            break;
        }
    }
    let last = atoms[atoms.len() - 1].location;
    let interval = interval.unwrap_or((last, last));
    let rho = interval.0;
    let risk = expected_penalty(t, rho, |x| pen.value(x));
    let expected_time = t.partial_expectation();
    Ok(RiskResult {
        rho,
        risk,
        expected_time,
        total: expected_time + risk,
        interval,
    })
}

/// Probability of the slow outcome above which a two-point driver budgets
/// for the slow time.
pub fn schedule_threshold(pen: &PenaltySpec) -> f64 {
    pen.early / (pen.late + pen.early)
}

/// Route with the smallest `E[T] + risk` (ties to the lowest index).
pub fn hdv_route_choice_with_risk(
    routes: &[DiscreteMeasure],
    pen: &PenaltySpec,
) -> Result<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (r, t) in routes.iter().enumerate() {
        let u = optimal_rho(t, pen)?.total;
        if best.is_none_or(|(_, b)| u < b) {
            best = Some((r, u));
        }
    }
    best.ok_or(RiskError::NoRoutes)
}

/// A convex out-of-schedule penalty of `x = T - rho`.
pub trait ConvexPenalty {
    fn value(&self, x: f64) -> f64;
    fn left_derivative(&self, x: f64) -> f64;
    fn right_derivative(&self, x: f64) -> f64;
}

impl ConvexPenalty for PenaltySpec {
    fn value(&self, x: f64) -> f64 {
        PenaltySpec::value(self, x)
    }

    fn left_derivative(&self, x: f64) -> f64 {
        if x > 0.0 {
            self.late
        } else {
            -self.early
        }
    }

    fn right_derivative(&self, x: f64) -> f64 {
        if x >= 0.0 {
            self.late
        } else {
            -self.early
        }
    }
}

/// `x^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadratic;

impl ConvexPenalty for Quadratic {
    fn value(&self, x: f64) -> f64 {
        x * x
    }

    fn left_derivative(&self, x: f64) -> f64 {
        2.0 * x
    }

    fn right_derivative(&self, x: f64) -> f64 {
        2.0 * x
    }
}

/// Penalty given as closures: value and a derivative, with one-sided
/// derivatives approximated by it.
pub struct FnPenalty<F, D> {
    pub value: F,
    pub derivative: D,
}

impl<F: Fn(f64) -> f64, D: Fn(f64) -> f64> ConvexPenalty for FnPenalty<F, D> {
    fn value(&self, x: f64) -> f64 {
        (self.value)(x)
    }

    fn left_derivative(&self, x: f64) -> f64 {
        (self.derivative)(x)
    }

    fn right_derivative(&self, x: f64) -> f64 {
        (self.derivative)(x)
    }
}

const CONVEXITY_SAMPLES: usize = 64;

/// Minimizes `E[pi(T - rho)]` over the support hull of `T`.
///
/// The objective's right derivative in `rho` is `-E[pi'_-(T - rho)]`, which
/// is nondecreasing for convex `pi`; bisection finds where it turns
/// non-negative, and likewise for the left derivative. A flat stretch of the
/// objective is reported as the minimizing interval.
pub fn general_convex_rho<P: ConvexPenalty>(t: &DiscreteMeasure, pi: &P) -> Result<RiskResult> {
    check_probability(t)?;
    let lo = t.min_location().expect("non-empty");
    let hi = t.max_location().expect("non-empty");

    let span = (hi - lo).max(1.0);
    for k in 0..=CONVEXITY_SAMPLES {
        let x = -span + 2.0 * span * k as f64 / CONVEXITY_SAMPLES as f64;
        let h = span / CONVEXITY_SAMPLES as f64;
        let mid = pi.value(x);
        let chord = 0.5 * (pi.value(x - h) + pi.value(x + h));
        if mid > chord + 1e-12 * (1.0 + chord.abs()) {
            return Err(RiskError::NonConvex(x));
        }
    }

    let atoms = t.atoms();
    let right = |rho: f64| -> f64 {
        -atoms
            .iter()
            .map(|a| a.weight * pi.left_derivative(a.location - rho))
            .sum::<f64>()
    };
    let left = |rho: f64| -> f64 {
        -atoms
            .iter()
            .map(|a| a.weight * pi.right_derivative(a.location - rho))
            .sum::<f64>()
    };
    // Smallest rho with right derivative >= 0, largest with left derivative <= 0.
    let a = bisect(lo, hi, |r| right(r) >= 0.0);
    let b = bisect(lo, hi, |r| left(r) > 0.0);
    let (a, b) = if b > a { (a, b) } else { (a, a) };
    let risk = expected_penalty(t, a, |x| pi.value(x));
    let expected_time = t.partial_expectation();
    Ok(RiskResult {
        rho: a,
        risk,
        expected_time,
        total: expected_time + risk,
        interval: (a, b),
    })
}

/// Smallest point of `[lo, hi]` where the monotone predicate holds
/// (`hi` if it never does).
fn bisect(lo: f64, hi: f64, pred: impl Fn(f64) -> bool) -> f64 {
    if pred(lo) {
        return lo;
    }
    let (mut a, mut b) = (lo, hi);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        if pred(m) {
            b = m;
        } else {
            a = m;
        }
    }
    b
}
