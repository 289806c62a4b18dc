//! Parallel-route networks with separable delay functions, and the two
//! classic static assignments on them: Wardrop user equilibrium and system
//! optimum.
//!
//! Both solvers bisect on a common level `c` (travel time for the
//! equilibrium, marginal cost for the optimum) and invert each route's
//! strictly increasing curve at that level. Routes whose curve already
//! exceeds `c` at zero flow stay unused.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on flow conservation for [`FlowVector`] checks.
pub const FLOW_TOL: f64 = 1e-9;

const MAX_BISECTION_STEPS: usize = 400;
const MAX_BRACKET_DOUBLINGS: usize = 200;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("network needs at least one route")]
    NoRoutes,
    #[error("demand must be finite and non-negative, got {0}")]
    InvalidDemand(f64),
    #[error("route {route}: {reason}")]
    InvalidDelay { route: usize, reason: String },
    #[error("flow vector has {got} entries, network has {expected} routes")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("flow vector is invalid: {0}")]
    InvalidFlow(String),
    #[error("solver did not converge: {0}")]
    NoConvergence(String),
}

fn default_bpr_alpha() -> f64 {
    0.15
}

fn default_bpr_beta() -> f64 {
    4.0
}

/// Route delay as a function of the flow on that route.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DelayFunction {
    /// `free_flow + slope * q`
    Affine { free_flow: f64, slope: f64 },
    /// `free_flow * (1 + alpha * (q / capacity)^beta)`
    Bpr {
        free_flow: f64,
        capacity: f64,
        #[serde(default = "default_bpr_alpha")]
        alpha: f64,
        #[serde(default = "default_bpr_beta")]
        beta: f64,
    },
}

impl DelayFunction {
    pub fn affine(free_flow: f64, slope: f64) -> Self {
        DelayFunction::Affine { free_flow, slope }
    }

    /// BPR curve with the standard `alpha = 0.15`, `beta = 4`.
    pub fn bpr(free_flow: f64, capacity: f64) -> Self {
        DelayFunction::Bpr {
            free_flow,
            capacity,
            alpha: default_bpr_alpha(),
            beta: default_bpr_beta(),
        }
    }

    fn validate(&self, route: usize) -> Result<(), NetworkError> {
        let bad = |reason: &str| {
            Err(NetworkError::InvalidDelay {
                route,
                reason: reason.to_string(),
            })
        };
        match *self {
            DelayFunction::Affine { free_flow, slope } => {
                if !(free_flow.is_finite() && free_flow > 0.0) {
                    return bad("free-flow time must be positive");
                }
                if !(slope.is_finite() && slope > 0.0) {
                    return bad("slope must be positive");
                }
            }
            DelayFunction::Bpr {
                free_flow,
                capacity,
                alpha,
                beta,
            } => {
                if !(free_flow.is_finite() && free_flow > 0.0) {
                    return bad("free-flow time must be positive");
                }
                if !(capacity.is_finite() && capacity > 0.0) {
                    return bad("capacity must be positive");
                }
                if !(alpha.is_finite() && alpha > 0.0) {
                    return bad("alpha must be positive");
                }
                if !(beta.is_finite() && beta >= 1.0) {
                    return bad("beta must be at least 1");
                }
            }
        }
        Ok(())
    }

    /// Travel time at flow `q`.
    pub fn eval(&self, q: f64) -> f64 {
        match *self {
            DelayFunction::Affine { free_flow, slope } => free_flow + slope * q,
            DelayFunction::Bpr {
                free_flow,
                capacity,
                alpha,
                beta,
            } => free_flow * (1.0 + alpha * (q / capacity).powf(beta)),
        }
    }

    /// Marginal social cost `d/dq [q * t(q)] = t(q) + q t'(q)`.
    pub fn marginal_cost(&self, q: f64) -> f64 {
        match *self {
            DelayFunction::Affine { free_flow, slope } => free_flow + 2.0 * slope * q,
            DelayFunction::Bpr {
                free_flow,
                capacity,
                alpha,
                beta,
            } => free_flow * (1.0 + alpha * (1.0 + beta) * (q / capacity).powf(beta)),
        }
    }

    pub fn free_flow(&self) -> f64 {
        match *self {
            DelayFunction::Affine { free_flow, .. } | DelayFunction::Bpr { free_flow, .. } => {
                free_flow
            }
        }
    }

    /// Flow at which the travel time equals `level` (0 below free flow).
    pub fn inverse(&self, level: f64) -> f64 {
        if level <= self.free_flow() {
            return 0.0;
        }
        match *self {
            DelayFunction::Affine { free_flow, slope } => (level - free_flow) / slope,
            DelayFunction::Bpr {
                free_flow,
                capacity,
                alpha,
                beta,
            } => capacity * ((level / free_flow - 1.0) / alpha).powf(1.0 / beta),
        }
    }

    /// Flow at which the marginal cost equals `level`.
    pub fn inverse_marginal(&self, level: f64) -> f64 {
        if level <= self.free_flow() {
            return 0.0;
        }
        match *self {
            DelayFunction::Affine { free_flow, slope } => (level - free_flow) / (2.0 * slope),
            DelayFunction::Bpr {
                free_flow,
                capacity,
                alpha,
                beta,
            } => capacity * ((level / free_flow - 1.0) / (alpha * (1.0 + beta))).powf(1.0 / beta),
        }
    }
}

/// One origin-destination pair joined by `R >= 1` parallel routes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NetworkSpec")]
pub struct Network {
    routes: Vec<DelayFunction>,
    demand: f64,
}

#[derive(Deserialize)]
struct NetworkSpec {
    routes: Vec<DelayFunction>,
    demand: f64,
}

impl TryFrom<NetworkSpec> for Network {
    type Error = NetworkError;

    fn try_from(spec: NetworkSpec) -> Result<Self, Self::Error> {
        Network::new(spec.routes, spec.demand)
    }
}

impl Network {
    pub fn new(routes: Vec<DelayFunction>, demand: f64) -> Result<Self, NetworkError> {
        if routes.is_empty() {
            return Err(NetworkError::NoRoutes);
        }
        if !(demand.is_finite() && demand >= 0.0) {
            return Err(NetworkError::InvalidDemand(demand));
        }
        for (r, d) in routes.iter().enumerate() {
            d.validate(r)?;
        }
        Ok(Network { routes, demand })
    }

    pub fn routes(&self) -> &[DelayFunction] {
        &self.routes
    }

    pub fn route_count(&self) -> usize {
        self.routes.len()
    }

    pub fn demand(&self) -> f64 {
        self.demand
    }

    /// Same routes, different total demand.
    pub fn with_demand(&self, demand: f64) -> Result<Self, NetworkError> {
        Network::new(self.routes.clone(), demand)
    }

    /// Per-route travel times for an arbitrary non-negative load vector
    /// (no conservation requirement; used for partial loads in mixed traffic).
    pub fn times_at(&self, loads: &[f64]) -> Result<Vec<f64>, NetworkError> {
        if loads.len() != self.routes.len() {
            return Err(NetworkError::DimensionMismatch {
                expected: self.routes.len(),
                got: loads.len(),
            });
        }
        if let Some(&bad) = loads.iter().find(|q| !(q.is_finite() && **q >= 0.0)) {
            return Err(NetworkError::InvalidFlow(format!("load {bad} is not a non-negative number")));
        }
        Ok(self.routes.iter().zip(loads).map(|(d, &q)| d.eval(q)).collect())
    }
}

/// Per-route flows summing to the network demand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowVector(Vec<f64>);

impl FlowVector {
    pub fn new(flows: Vec<f64>, net: &Network) -> Result<Self, NetworkError> {
        if flows.len() != net.route_count() {
            return Err(NetworkError::DimensionMismatch {
                expected: net.route_count(),
                got: flows.len(),
            });
        }
        if flows.iter().any(|q| !(q.is_finite() && *q >= 0.0)) {
            return Err(NetworkError::InvalidFlow("flows must be non-negative".into()));
        }
        let total: f64 = flows.iter().sum();
        if (total - net.demand()).abs() > FLOW_TOL * net.demand().max(1.0) {
            return Err(NetworkError::InvalidFlow(format!(
                "flows sum to {total}, demand is {}",
                net.demand()
            )));
        }
        Ok(FlowVector(flows))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }
}

pub fn travel_times(net: &Network, q: &FlowVector) -> Result<Vec<f64>, NetworkError> {
    net.times_at(q.as_slice())
}

/// Total system cost `sum q_r t_r(q_r)`.
pub fn total_cost(net: &Network, q: &FlowVector) -> Result<f64, NetworkError> {
    let times = travel_times(net, q)?;
    Ok(q.as_slice().iter().zip(&times).map(|(q, t)| q * t).sum())
}

/// Flow-weighted mean travel time.
pub fn mean_time(net: &Network, q: &FlowVector) -> Result<f64, NetworkError> {
    let total = q.total();
    if total <= 0.0 {
        return Err(NetworkError::InvalidFlow("mean time of zero flow".into()));
    }
    Ok(total_cost(net, q)? / total)
}

/// Wardrop user equilibrium: used routes share the minimal travel time.
pub fn wardrop_equilibrium(net: &Network) -> Result<FlowVector, NetworkError> {
    let routes = net.routes();
    let flows = equalize_level(
        net.demand(),
        routes.len(),
        |r| routes[r].free_flow(),
        |r, q| routes[r].eval(q),
        |r, c| routes[r].inverse(c),
    )?;
    FlowVector::new(flows, net)
}

/// System optimum: used routes share the minimal marginal cost.
pub fn system_optimum(net: &Network) -> Result<FlowVector, NetworkError> {
    let routes = net.routes();
    let flows = equalize_level(
        net.demand(),
        routes.len(),
        |r| routes[r].free_flow(),
        |r, q| routes[r].marginal_cost(q),
        |r, c| routes[r].inverse_marginal(c),
    )?;
    FlowVector::new(flows, net)
}

/// Finds the level `c` at which `sum_r inverse(r, c) = demand` by bisection
/// and returns the per-route flows at that level.
///
/// `base(r)` is the curve value at zero flow, `value(r, q)` the curve and
/// `inverse(r, c)` its inverse (0 for `c <= base(r)`). Curves must be
/// strictly increasing.
pub(crate) fn equalize_level(
    demand: f64,
    n: usize,
    base: impl Fn(usize) -> f64,
    value: impl Fn(usize, f64) -> f64,
    inverse: impl Fn(usize, f64) -> f64,
) -> Result<Vec<f64>, NetworkError> {
    if n == 0 {
        return Err(NetworkError::NoRoutes);
    }
    if demand == 0.0 {
        return Ok(vec![0.0; n]);
    }
    if n == 1 {
        return Ok(vec![demand]);
    }
    let load = |c: f64| -> f64 { (0..n).map(|r| inverse(r, c)).sum() };

    let mut lo = (0..n).map(&base).fold(f64::INFINITY, f64::min);
    // Putting the whole demand on every route gives a level where the total
    // load is at least the demand.
    let mut hi = (0..n).map(|r| value(r, demand)).fold(f64::NEG_INFINITY, f64::max);
    let mut doublings = 0;
    while load(hi) < demand {
        hi = lo + 2.0 * (hi - lo).max(1.0);
        doublings += 1;
        if doublings > MAX_BRACKET_DOUBLINGS || !hi.is_finite() {
            return Err(NetworkError::NoConvergence("could not bracket the level".into()));
        }
    }

    let mut converged = false;
    for _ in 0..MAX_BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            converged = true;
            break;
        }
        let l = load(mid);
        if (l - demand).abs() < 1e-15 * demand.max(1.0) {
            lo = mid;
            hi = mid;
            converged = true;
            break;
        }
        if l < demand {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if !converged {
        return Err(NetworkError::NoConvergence("bisection step cap reached".into()));
    }

    // Near a free-flow value the inverse is so steep that adjacent levels can
    // differ in load by far more than rounding. Blend each route between the
    // two bracket ends so every route time stays inside [lo, hi].
    let below: Vec<f64> = (0..n).map(|r| inverse(r, lo)).collect();
    let above: Vec<f64> = (0..n).map(|r| inverse(r, hi)).collect();
    let (l_lo, l_hi): (f64, f64) = (below.iter().sum(), above.iter().sum());
    let lambda = if l_hi > l_lo { ((demand - l_lo) / (l_hi - l_lo)).clamp(0.0, 1.0) } else { 0.5 };
    let mut flows: Vec<f64> = below.iter().zip(&above).map(|(b, a)| b + lambda * (a - b)).collect();
    let residual = demand - flows.iter().sum::<f64>();
    if residual.abs() > 1e-9 * demand.max(1.0) {
        return Err(NetworkError::NoConvergence(format!(
            "flow conservation residual {residual:e}"
        )));
    }
    // Hand the rounding residue to the most loaded route.
    if let Some(big) = (0..n).max_by(|&a, &b| flows[a].total_cmp(&flows[b])) {
        flows[big] = (flows[big] + residual).max(0.0);
    }
    Ok(flows)
}

/// Inverts a strictly increasing curve `f` on `[0, upper]` by bisection:
/// the flow `x` with `f(x) = level`, clamped to the interval.
pub(crate) fn invert_increasing(f: impl Fn(f64) -> f64, level: f64, upper: f64) -> f64 {
    if level <= f(0.0) {
        return 0.0;
    }
    let mut lo = 0.0;
    let mut hi = upper.max(1.0);
    let mut guard = 0;
    while f(hi) < level && guard < MAX_BRACKET_DOUBLINGS {
        hi *= 2.0;
        guard += 1;
    }
    for _ in 0..MAX_BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < level {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
