//! Market share under heterogeneous attitudes towards fleet vehicles.
//!
//! Each driver has a discount factor `gamma` scaling the disutility of time
//! spent in a fleet vehicle. A human driver pays the expected time of the
//! best route, a fleet rider pays `gamma` times the mean time the fleet
//! offers. The fleet holds a driver when `u_cav <= u_hdv`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feasibility::{
    self, AssignmentPlan, DriverOffer, FeasibilityError, MixedRouting, OfferProfile, Routing,
    SimplexMeasure, FEAS_TOL,
};
use crate::network::{self, Network, NetworkError};

/// Tolerance for utility comparisons.
pub const UTILITY_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MarketError {
    #[error("driver {id} has discount factor {gamma} outside the supported range")]
    GammaOutOfRange { id: String, gamma: f64 },
    #[error("no defection-proof offer exists: {0}")]
    Infeasible(String),
    #[error("routing rule incomplete: {0}")]
    RuleIncomplete(String),
    #[error("invalid discount profile: {0}")]
    InvalidProfile(String),
    #[error("population does not match the flows: {0}")]
    Incompatible(String),
    #[error("stage {index}: {reason}")]
    Stage { index: usize, reason: String },
    #[error(transparent)]
    Feasibility(#[from] FeasibilityError),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

type Result<T> = std::result::Result<T, MarketError>;

/// Optional parameters of the general utility model. The defaults reduce it
/// to `u_cav = gamma * T`, `u_hdv = t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UtilityParams {
    /// Value of time.
    pub beta: f64,
    pub cav_constant: f64,
    pub hdv_constant: f64,
    /// Per-route preference terms added to the human disutility.
    pub route_preferences: Vec<f64>,
    pub theta_late: Option<f64>,
    pub theta_early: Option<f64>,
}

impl Default for UtilityParams {
    fn default() -> Self {
        UtilityParams {
            beta: 1.0,
            cav_constant: 0.0,
            hdv_constant: 0.0,
            route_preferences: Vec::new(),
            theta_late: None,
            theta_early: None,
        }
    }
}

impl UtilityParams {
    pub fn cav_disutility(&self, gamma: f64, mean_time: f64) -> f64 {
        self.cav_constant + gamma * self.beta * mean_time
    }

    pub fn hdv_disutility(&self, route: usize, time: f64) -> f64 {
        let pref = self.route_preferences.get(route).copied().unwrap_or(0.0);
        self.hdv_constant + self.beta * time + pref
    }

    /// Best human option over routes with the given expected times.
    pub fn best_hdv(&self, times: &[f64]) -> f64 {
        times
            .iter()
            .enumerate()
            .map(|(r, &t)| self.hdv_disutility(r, t))
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscountDriver {
    pub id: String,
    pub weight: f64,
    pub gamma: f64,
    #[serde(default)]
    pub params: UtilityParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<DiscountDriver>", into = "Vec<DiscountDriver>")]
pub struct DiscountProfile {
    drivers: Vec<DiscountDriver>,
}

impl TryFrom<Vec<DiscountDriver>> for DiscountProfile {
    type Error = MarketError;

    fn try_from(d: Vec<DiscountDriver>) -> Result<Self> {
        DiscountProfile::new(d)
    }
}

impl From<DiscountProfile> for Vec<DiscountDriver> {
    fn from(p: DiscountProfile) -> Self {
        p.drivers
    }
}

impl DiscountProfile {
    pub fn new(drivers: Vec<DiscountDriver>) -> Result<Self> {
        if drivers.is_empty() {
            return Err(MarketError::InvalidProfile("no drivers".into()));
        }
        for d in &drivers {
            if !(d.gamma.is_finite() && d.gamma > 0.0) {
                return Err(MarketError::GammaOutOfRange {
                    id: d.id.clone(),
                    gamma: d.gamma,
                });
            }
            if !(d.weight.is_finite() && d.weight >= 0.0) {
                return Err(MarketError::InvalidProfile(format!(
                    "driver {} has weight {}",
                    d.id, d.weight
                )));
            }
        }
        Ok(DiscountProfile { drivers })
    }

    /// Drivers `1..=n` with default utility parameters.
    pub fn from_pairs(weights: &[f64], gammas: &[f64]) -> Result<Self> {
        if weights.len() != gammas.len() {
            return Err(MarketError::InvalidProfile(
                "weights and gammas differ in length".into(),
            ));
        }
        Self::new(
            weights
                .iter()
                .zip(gammas)
                .enumerate()
                .map(|(i, (&weight, &gamma))| DiscountDriver {
                    id: (i + 1).to_string(),
                    weight,
                    gamma,
                    params: UtilityParams::default(),
                })
                .collect(),
        )
    }

    pub fn drivers(&self) -> &[DiscountDriver] {
        &self.drivers
    }

    pub fn len(&self) -> usize {
        self.drivers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.drivers.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.drivers.iter().map(|d| d.weight).sum()
    }

    /// Weighted mean of `1 / gamma`.
    pub fn mean_inverse_gamma(&self) -> f64 {
        self.drivers.iter().map(|d| d.weight / d.gamma).sum::<f64>() / self.total_weight()
    }

    fn subset(&self, keep: impl Fn(&DiscountDriver) -> bool) -> Vec<DiscountDriver> {
        self.drivers.iter().filter(|d| keep(d)).cloned().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Cav,
    Hdv,
}

/// Both disutilities of one driver. `u_cav` is absent for a human driver
/// with no fleet offer on the table.
#[derive(Debug, Clone, PartialEq)]
pub struct UtilityPair {
    pub id: String,
    pub gamma: f64,
    pub weight: f64,
    pub mode: Mode,
    pub u_cav: Option<f64>,
    pub u_hdv: f64,
}

impl UtilityPair {
    /// Fleet rider who would do better driving, or human driver who would
    /// do strictly better in the fleet.
    fn wants_to_switch(&self) -> bool {
        match (self.mode, self.u_cav) {
            (Mode::Cav, Some(c)) => c > self.u_hdv + UTILITY_TOL,
            (Mode::Hdv, Some(c)) => c < self.u_hdv - UTILITY_TOL,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VerdictKind {
    /// No driver wants to change mode.
    Dfhe,
    /// Certified full-share state where, in addition, the fleet routing is
    /// known to be a best response.
    Nfhe,
    NotEquilibrium,
}

impl VerdictKind {
    pub fn label(self) -> &'static str {
        match self {
            VerdictKind::Dfhe => "DFHE",
            VerdictKind::Nfhe => "NFHE",
            VerdictKind::NotEquilibrium => "NotEquilibrium",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumVerdict {
    pub kind: VerdictKind,
    /// Fleet riders better off driving.
    pub defectors: Vec<String>,
    /// Human drivers better off joining.
    pub joiners: Vec<String>,
}

impl EquilibriumVerdict {
    pub fn from_utilities(us: &[UtilityPair]) -> Self {
        let mut defectors = Vec::new();
        let mut joiners = Vec::new();
        for u in us.iter().filter(|u| u.weight > 0.0 && u.wants_to_switch()) {
            match u.mode {
                Mode::Cav => defectors.push(u.id.clone()),
                Mode::Hdv => joiners.push(u.id.clone()),
            }
        }
        let kind = if defectors.is_empty() && joiners.is_empty() {
            VerdictKind::Dfhe
        } else {
            VerdictKind::NotEquilibrium
        };
        EquilibriumVerdict {
            kind,
            defectors,
            joiners,
        }
    }

    pub fn is_equilibrium(&self) -> bool {
        self.kind != VerdictKind::NotEquilibrium
    }
}

fn check_population(routing: &Routing, gamma: &DiscountProfile) -> Result<()> {
    let (w, q) = (gamma.total_weight(), routing.total_flow());
    if (w - q).abs() > FEAS_TOL * q.max(1.0) {
        return Err(MarketError::Incompatible(format!(
            "driver weight {w} differs from fleet flow {q}"
        )));
    }
    Ok(())
}

/// `mean route time <= t_min * E(1 / gamma)`; without it no offer profile
/// keeps every driver in the fleet.
pub fn necessary_condition(routing: &Routing, gamma: &DiscountProfile) -> bool {
    routing.mean_time() <= routing.min_time() * gamma.mean_inverse_gamma() + FEAS_TOL
}

fn profile_from(gamma: &[DiscountDriver], offers: &[f64]) -> Result<OfferProfile> {
    Ok(OfferProfile::new(
        gamma
            .iter()
            .zip(offers)
            .map(|(d, &offer)| DriverOffer {
                id: d.id.clone(),
                weight: d.weight,
                offer,
            })
            .collect(),
    )?)
}

/// Defection-proof offers for two routes when every `gamma` lies in
/// `[t_min / t_max, 1]`.
///
/// Offers interpolate between `t_min` and each driver's ceiling
/// `t_min / gamma`, shrunk by a common factor so that their mean matches the
/// routing. At the boundary of the necessary condition they equal the
/// ceilings.
pub fn tailored_offer_two_routes(routing: &Routing, gamma: &DiscountProfile) -> Result<OfferProfile> {
    if routing.route_count() != 2 {
        return Err(MarketError::Feasibility(FeasibilityError::InvalidRouting(format!(
            "expected 2 routes, got {}",
            routing.route_count()
        ))));
    }
    check_population(routing, gamma)?;
    let (tmin, tmax, tbar) = (routing.min_time(), routing.max_time(), routing.mean_time());
    let floor = tmin / tmax;
    for d in gamma.drivers() {
        if d.gamma < floor - FEAS_TOL || d.gamma > 1.0 + FEAS_TOL {
            return Err(MarketError::GammaOutOfRange {
                id: d.id.clone(),
                gamma: d.gamma,
            });
        }
    }
    if !necessary_condition(routing, gamma) {
        return Err(MarketError::Infeasible(format!(
            "mean time {tbar} exceeds t_min * E(1/gamma) = {}",
            tmin * gamma.mean_inverse_gamma()
        )));
    }
    let bound = tmin * gamma.mean_inverse_gamma();
    let offers: Vec<f64> = if tbar - tmin <= FEAS_TOL * tmin.abs().max(1.0) {
        vec![tbar; gamma.len()]
    } else if (bound - tbar).abs() <= FEAS_TOL * tbar.abs().max(1.0) {
        gamma.drivers().iter().map(|d| tmin / d.gamma).collect()
    } else {
        let alpha = (bound - tmin) / (tbar - tmin);
        gamma
            .drivers()
            .iter()
            .map(|d| tmin + (tmin / d.gamma - tmin) / alpha)
            .collect()
    };
    let offers: Vec<f64> = offers.into_iter().map(|t| t.clamp(tmin, tmax)).collect();
    let profile = profile_from(gamma.drivers(), &offers)?;
    feasibility::check_compatibility(routing, &profile.induced_measure())?;
    Ok(profile)
}

/// A driver fixed to a row before the reduced problem is solved.
#[derive(Debug, Clone, PartialEq)]
pub struct PinnedDriver {
    pub id: String,
    pub weight: f64,
    pub row: Vec<f64>,
}

/// Outcome of pinning drivers whose `gamma` is below `t_min / t_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessed {
    /// Remaining routing and drivers, or `None` when everyone is pinned.
    pub reduced: Option<(Routing, DiscountProfile)>,
    pub pinned: Vec<PinnedDriver>,
}

/// Pins very enthusiastic drivers to the slow route (or, if they can fill
/// it, everyone else to the fast route) so the rest satisfy the range
/// requirement of [`tailored_offer_two_routes`].
pub fn preprocess_small_gamma(routing: &Routing, gamma: &DiscountProfile) -> Result<Preprocessed> {
    if routing.route_count() != 2 {
        return Err(MarketError::Feasibility(FeasibilityError::InvalidRouting(format!(
            "expected 2 routes, got {}",
            routing.route_count()
        ))));
    }
    check_population(routing, gamma)?;
    if let Some(d) = gamma.drivers().iter().find(|d| d.gamma > 1.0 + FEAS_TOL) {
        return Err(MarketError::GammaOutOfRange {
            id: d.id.clone(),
            gamma: d.gamma,
        });
    }
    let floor = routing.min_time() / routing.max_time();
    let (rmin, rmax) = (routing.fastest_route(), routing.slowest_route());
    let (rmin, rmax) = if rmin == rmax { (0, 1) } else { (rmin, rmax) };
    let small = gamma.subset(|d| d.gamma < floor);
    let rest = gamma.subset(|d| d.gamma >= floor);
    if small.is_empty() {
        return Ok(Preprocessed {
            reduced: Some((routing.clone(), gamma.clone())),
            pinned: Vec::new(),
        });
    }
    let w1: f64 = small.iter().map(|d| d.weight).sum();
    let w2: f64 = rest.iter().map(|d| d.weight).sum();
    let (qmin, qmax) = (routing.flows()[rmin], routing.flows()[rmax]);
    let indicator = |r: usize| {
        let mut row = vec![0.0; 2];
        row[r] = 1.0;
        row
    };
    if w1 >= qmax {
        let mut pinned: Vec<PinnedDriver> = rest
            .iter()
            .map(|d| PinnedDriver {
                id: d.id.clone(),
                weight: d.weight,
                row: indicator(rmin),
            })
            .collect();
        let mut row = vec![0.0; 2];
        row[rmin] = ((qmin - w2) / w1).max(0.0);
        row[rmax] = qmax / w1;
        pinned.extend(small.iter().map(|d| PinnedDriver {
            id: d.id.clone(),
            weight: d.weight,
            row: row.clone(),
        }));
        return Ok(Preprocessed {
            reduced: None,
            pinned,
        });
    }
    let mut flows = routing.flows().to_vec();
    flows[rmax] -= w1;
    let reduced = (routing.with_flows(flows)?, DiscountProfile::new(rest)?);
    let pinned = small
        .iter()
        .map(|d| PinnedDriver {
            id: d.id.clone(),
            weight: d.weight,
            row: indicator(rmax),
        })
        .collect();
    Ok(Preprocessed {
        reduced: Some(reduced),
        pinned,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum MarketOffer {
    Yes {
        /// Ceilings `min(t_min / gamma, t_max)`.
        ceilings: OfferProfile,
        /// Mean times actually delivered by the plan; never above the ceiling.
        offers: OfferProfile,
        nu: SimplexMeasure,
        plan: AssignmentPlan,
    },
    No {
        reason: String,
    },
}

impl MarketOffer {
    pub fn is_yes(&self) -> bool {
        matches!(self, MarketOffer::Yes { .. })
    }
}

/// Decides whether a deterministic routing can hold every driver.
///
/// Each driver's ceiling is the largest mean time they accept. If the
/// ceilings average below the route mean nothing works; if they match it
/// exactly they must be met exactly; otherwise any feasible profile under
/// the ceilings will do.
pub fn full_market_offer(routing: &Routing, gamma: &DiscountProfile) -> Result<MarketOffer> {
    check_population(routing, gamma)?;
    let (tmin, tmax) = (routing.min_time(), routing.max_time());
    let ceilings: Vec<f64> = gamma
        .drivers()
        .iter()
        .map(|d| (tmin / d.gamma).min(tmax))
        .collect();
    let ceilings = profile_from(gamma.drivers(), &ceilings)?;
    let tau = ceilings.induced_measure();
    let want = routing.total_time();
    let have = tau.partial_expectation();
    let tol = FEAS_TOL * want.abs().max(1.0);
    if have < want - tol {
        return Ok(MarketOffer::No {
            reason: format!(
                "mean acceptable time {} is below the mean route time {}",
                have / routing.total_flow(),
                routing.mean_time()
            ),
        });
    }
    let (ok, nu, plan) = if have <= want + tol {
        let (ok, nu) = feasibility::feasible(routing, &tau)?;
        let plan = if ok {
            Some(feasibility::plan_from_simplex_measure(&nu, &ceilings, routing)?)
        } else {
            None
        };
        (ok, nu, plan)
    } else {
        let (ok, nu) = feasibility::feasible_not_exceeding(routing, &tau)?;
        let plan = if ok {
            Some(feasibility::plan_not_exceeding(&nu, &ceilings, routing)?)
        } else {
            None
        };
        (ok, nu, plan)
    };
    match plan {
        Some(plan) if ok => {
            let offers = plan.offer_profile();
            Ok(MarketOffer::Yes {
                ceilings,
                offers,
                nu,
                plan,
            })
        }
        _ => Ok(MarketOffer::No {
            reason: "no feasible offer profile stays under every ceiling".into(),
        }),
    }
}

/// How a driver travels under a mixed routing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DriverRule {
    /// Fleet rider sent on `routes[m]` when component `m` is drawn.
    Fleet { routes: Vec<usize> },
    /// Human driver, optionally holding a fleet offer of this mean time.
    Human {
        #[serde(default)]
        offer: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixedAnalysis {
    pub utilities: Vec<UtilityPair>,
    /// Expected time per route, which is what human drivers face.
    pub expected_times: Vec<f64>,
    pub share: f64,
    pub verdict: EquilibriumVerdict,
}

/// Utilities and verdict for a mixed fleet routing with per-driver rules.
///
/// Human drivers cannot tell which component is drawn on a given day, so
/// they compare routes by expected time. The rules must reproduce the
/// fleet flows of every component.
pub fn mixed_market_analysis(
    mix: &MixedRouting,
    rules: &[DriverRule],
    gamma: &DiscountProfile,
) -> Result<MixedAnalysis> {
    if rules.len() != gamma.len() {
        return Err(MarketError::RuleIncomplete(format!(
            "{} rules for {} drivers",
            rules.len(),
            gamma.len()
        )));
    }
    let comps = mix.components();
    let r = mix.route_count();
    let mut loads = vec![vec![0.0; r]; comps.len()];
    for (d, rule) in gamma.drivers().iter().zip(rules) {
        if let DriverRule::Fleet { routes } = rule {
            if routes.len() != comps.len() {
                return Err(MarketError::RuleIncomplete(format!(
                    "driver {} has {} routes for {} components",
                    d.id,
                    routes.len(),
                    comps.len()
                )));
            }
            for (m, &route) in routes.iter().enumerate() {
                if route >= r {
                    return Err(MarketError::RuleIncomplete(format!(
                        "driver {} uses route {route} of {r}",
                        d.id
                    )));
                }
                loads[m][route] += d.weight;
            }
        }
    }
    for (m, (_, routing)) in comps.iter().enumerate() {
        let scale = FEAS_TOL * routing.total_flow().max(1.0);
        for (k, (got, want)) in loads[m].iter().zip(routing.flows()).enumerate() {
            if (got - want).abs() > scale {
                return Err(MarketError::RuleIncomplete(format!(
                    "component {m} route {k}: rules place {got}, flow is {want}"
                )));
            }
        }
    }
    let expected = mix.expected_times();
    let mut utilities = Vec::with_capacity(gamma.len());
    let mut fleet = 0.0;
    for (d, rule) in gamma.drivers().iter().zip(rules) {
        let u_hdv = d.params.best_hdv(&expected);
        let pair = match rule {
            DriverRule::Fleet { routes } => {
                fleet += d.weight;
                let t: f64 = comps
                    .iter()
                    .zip(routes)
                    .map(|((p, routing), &route)| p * routing.times()[route])
                    .sum();
                UtilityPair {
                    id: d.id.clone(),
                    gamma: d.gamma,
                    weight: d.weight,
                    mode: Mode::Cav,
                    u_cav: Some(d.params.cav_disutility(d.gamma, t)),
                    u_hdv,
                }
            }
            DriverRule::Human { offer } => UtilityPair {
                id: d.id.clone(),
                gamma: d.gamma,
                weight: d.weight,
                mode: Mode::Hdv,
                u_cav: offer.map(|t| d.params.cav_disutility(d.gamma, t)),
                u_hdv,
            },
        };
        utilities.push(pair);
    }
    let verdict = EquilibriumVerdict::from_utilities(&utilities);
    Ok(MixedAnalysis {
        utilities,
        expected_times: expected,
        share: fleet / gamma.total_weight(),
        verdict,
    })
}

/// One step of a staged market entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Stage {
    /// Fleet copies the human equilibrium routes; drivers who gain join,
    /// riders who lose leave.
    MimicHdv,
    /// Fleet riders are spread over routes by `shares[m]` when component
    /// `m` (probability `probabilities[m]`) is drawn. Human drivers settle
    /// on expected times. Membership is unchanged.
    StackelbergMix {
        probabilities: Vec<f64>,
        shares: Vec<Vec<f64>>,
    },
    /// Human drivers are offered mean time at most `bound`, served on the
    /// route the fleet leaves emptiest in each component. Those who gain
    /// migrate, in `steps` equal increments.
    TailoredOffer { bound: f64, steps: usize },
}

impl Stage {
    pub fn label(&self) -> &'static str {
        match self {
            Stage::MimicHdv => "mimic_hdv",
            Stage::StackelbergMix { .. } => "stackelberg_mix",
            Stage::TailoredOffer { .. } => "tailored_offer",
        }
    }
}

/// Network state during a staged entry.
#[derive(Debug, Clone, PartialEq)]
pub struct StageReport {
    pub label: String,
    pub share: f64,
    pub utilities: Vec<UtilityPair>,
    /// Best expected human disutility (base model).
    pub hdv_time: f64,
    /// `(probability, route times)` per component.
    pub route_times: Vec<(f64, Vec<f64>)>,
    /// `(probability, fleet flows)` per component.
    pub fleet_flows: Vec<(f64, Vec<f64>)>,
    pub hdv_flows: Vec<f64>,
    pub verdict: EquilibriumVerdict,
    /// Intermediate states of a migration, first to last.
    pub path: Vec<MigrationStep>,
}

impl StageReport {
    pub fn utility_of(&self, id: &str) -> Option<&UtilityPair> {
        self.utilities.iter().find(|u| u.id == id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MigrationStep {
    pub migrated: f64,
    pub utilities: Vec<UtilityPair>,
    pub hdv_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicTrace {
    /// Human-only equilibrium before the fleet enters.
    pub initial: StageReport,
    pub stages: Vec<StageReport>,
}

impl DynamicTrace {
    pub fn shares(&self) -> Vec<f64> {
        self.stages.iter().map(|s| s.share).collect()
    }

    pub fn last(&self) -> &StageReport {
        self.stages.last().unwrap_or(&self.initial)
    }
}

/// Human flows that equalize expected times given fleet flows per component.
pub fn hdv_response(
    net: &Network,
    probabilities: &[f64],
    fleet: &[Vec<f64>],
    hdv_mass: f64,
) -> Result<Vec<f64>> {
    let r = net.route_count();
    if hdv_mass <= 0.0 {
        return Ok(vec![0.0; r]);
    }
    let routes = net.routes();
    let cost = |k: usize, h: f64| -> f64 {
        probabilities
            .iter()
            .zip(fleet)
            .map(|(p, f)| p * routes[k].eval(f[k] + h))
            .sum()
    };
    Ok(network::equalize_level(
        hdv_mass,
        r,
        |k| cost(k, 0.0),
        cost,
        |k, c| network::invert_increasing(|h| cost(k, h), c, hdv_mass),
    )?)
}

#[derive(Clone)]
enum FleetPlan {
    None,
    Mimic,
    Mix {
        probabilities: Vec<f64>,
        shares: Vec<Vec<f64>>,
    },
}

struct StageState<'a> {
    net: &'a Network,
    gamma: &'a DiscountProfile,
    members: Vec<bool>,
    migrants: Vec<bool>,
    plan: FleetPlan,
}

struct Snapshot {
    route_times: Vec<(f64, Vec<f64>)>,
    fleet_flows: Vec<(f64, Vec<f64>)>,
    hdv_flows: Vec<f64>,
    member_time: f64,
    migrant_time: f64,
    expected: Vec<f64>,
}

impl<'a> StageState<'a> {
    fn weight(&self, pick: impl Fn(usize) -> bool) -> f64 {
        self.gamma
            .drivers()
            .iter()
            .enumerate()
            .filter(|(i, _)| pick(*i))
            .map(|(_, d)| d.weight)
            .sum()
    }

    fn share(&self) -> f64 {
        self.weight(|i| self.members[i] || self.migrants[i]) / self.gamma.total_weight()
    }

    /// Network state with `extra` units of migrants on top of the current
    /// members (migrants already counted in `self.migrants` excluded).
    fn snapshot(&self, extra: f64) -> Result<Snapshot> {
        let net = self.net;
        let r = net.route_count();
        let member_mass = self.weight(|i| self.members[i]);
        let migrant_mass = self.weight(|i| self.migrants[i]) + extra;
        let hdv_mass = (net.demand() - member_mass - migrant_mass).max(0.0);
        match &self.plan {
            FleetPlan::None | FleetPlan::Mimic => {
                let q = network::wardrop_equilibrium(net)?;
                let times = network::travel_times(net, &q)?;
                let common = times
                    .iter()
                    .zip(q.as_slice())
                    .filter(|(_, q)| **q > 0.0)
                    .map(|(t, _)| *t)
                    .fold(f64::INFINITY, f64::min);
                let share = if net.demand() > 0.0 {
                    (member_mass + migrant_mass) / net.demand()
                } else {
                    0.0
                };
                let fleet: Vec<f64> = q.as_slice().iter().map(|x| x * share).collect();
                let hdv: Vec<f64> = q.as_slice().iter().zip(&fleet).map(|(a, b)| a - b).collect();
                Ok(Snapshot {
                    route_times: vec![(1.0, times.clone())],
                    fleet_flows: vec![(1.0, fleet)],
                    hdv_flows: hdv,
                    member_time: common,
                    migrant_time: common,
                    expected: times,
                })
            }
            FleetPlan::Mix {
                probabilities,
                shares,
            } => {
                let members: Vec<Vec<f64>> = shares
                    .iter()
                    .map(|s| s.iter().map(|x| x * member_mass).collect())
                    .collect();
                // Migrants ride the route with the smallest member load.
                let targets: Vec<usize> = members
                    .iter()
                    .map(|f| {
                        let mut best = 0;
                        for k in 1..r {
                            if f[k] < f[best] {
                                best = k;
                            }
                        }
                        best
                    })
                    .collect();
                let fleet: Vec<Vec<f64>> = members
                    .iter()
                    .zip(&targets)
                    .map(|(f, &u)| {
                        let mut f = f.clone();
                        f[u] += migrant_mass;
                        f
                    })
                    .collect();
                let h = hdv_response(net, probabilities, &fleet, hdv_mass)?;
                let mut route_times = Vec::new();
                let mut member_time = 0.0;
                let mut migrant_time = 0.0;
                for ((p, f), (s, &u)) in probabilities.iter().zip(&fleet).zip(shares.iter().zip(&targets)) {
                    let loads: Vec<f64> = f.iter().zip(&h).map(|(a, b)| a + b).collect();
                    let times = net.times_at(&loads)?;
                    member_time += p * s.iter().zip(&times).map(|(x, t)| x * t).sum::<f64>();
                    migrant_time += p * times[u];
                    route_times.push((*p, times));
                }
                let expected = (0..r)
                    .map(|k| route_times.iter().map(|(p, t)| p * t[k]).sum())
                    .collect();
                Ok(Snapshot {
                    fleet_flows: probabilities.iter().copied().zip(fleet).collect(),
                    route_times,
                    hdv_flows: h,
                    member_time,
                    migrant_time,
                    expected,
                })
            }
        }
    }

    /// Utilities at a snapshot; `candidate_offer` is what non-members are
    /// offered (if anything) and `moving` marks drivers counted as migrants.
    fn utilities(&self, snap: &Snapshot, candidate_offer: Option<f64>, moving: &[bool]) -> Vec<UtilityPair> {
        self.gamma
            .drivers()
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let u_hdv = d.params.best_hdv(&snap.expected);
                let (mode, t) = if self.members[i] {
                    (Mode::Cav, Some(snap.member_time))
                } else if self.migrants[i] || moving[i] {
                    (Mode::Cav, Some(snap.migrant_time))
                } else {
                    (Mode::Hdv, candidate_offer)
                };
                UtilityPair {
                    id: d.id.clone(),
                    gamma: d.gamma,
                    weight: d.weight,
                    mode,
                    u_cav: t.map(|t| d.params.cav_disutility(d.gamma, t)),
                    u_hdv,
                }
            })
            .collect()
    }

    fn report(&self, label: &str, snap: Snapshot, us: Vec<UtilityPair>, path: Vec<MigrationStep>) -> StageReport {
        let verdict = EquilibriumVerdict::from_utilities(&us);
        StageReport {
            label: label.to_string(),
            share: self.share(),
            hdv_time: snap.expected.iter().copied().fold(f64::INFINITY, f64::min),
            utilities: us,
            route_times: snap.route_times,
            fleet_flows: snap.fleet_flows,
            hdv_flows: snap.hdv_flows,
            verdict,
            path,
        }
    }
}

/// Runs a staged fleet entry starting from the human-only equilibrium.
pub fn dynamic_stages(net: &Network, gamma: &DiscountProfile, plan: &[Stage]) -> Result<DynamicTrace> {
    let n = gamma.len();
    let w = gamma.total_weight();
    if (w - net.demand()).abs() > FEAS_TOL * net.demand().max(1.0) {
        return Err(MarketError::Incompatible(format!(
            "driver weight {w} differs from demand {}",
            net.demand()
        )));
    }
    let mut state = StageState {
        net,
        gamma,
        members: vec![false; n],
        migrants: vec![false; n],
        plan: FleetPlan::None,
    };
    let none = vec![false; n];
    let snap = state.snapshot(0.0)?;
    let us = state.utilities(&snap, None, &none);
    let initial = state.report("initial", snap, us, Vec::new());

    let mut stages = Vec::with_capacity(plan.len());
    for (index, stage) in plan.iter().enumerate() {
        let report = match stage {
            Stage::MimicHdv => {
                state.plan = FleetPlan::Mimic;
                let snap = state.snapshot(0.0)?;
                let offer = snap.member_time;
                for (i, d) in gamma.drivers().iter().enumerate() {
                    let u_hdv = d.params.best_hdv(&snap.expected);
                    let u_cav = d.params.cav_disutility(d.gamma, offer);
                    let inside = state.members[i] || state.migrants[i];
                    if !inside && u_cav < u_hdv - UTILITY_TOL {
                        state.members[i] = true;
                    } else if inside && u_cav > u_hdv + UTILITY_TOL {
                        state.members[i] = false;
                        state.migrants[i] = false;
                    }
                }
                for i in 0..n {
                    if state.migrants[i] {
                        state.migrants[i] = false;
                        state.members[i] = true;
                    }
                }
                let snap = state.snapshot(0.0)?;
                let us = state.utilities(&snap, Some(snap.member_time), &none);
                state.report(stage.label(), snap, us, Vec::new())
            }
            Stage::StackelbergMix {
                probabilities,
                shares,
            } => {
                let r = net.route_count();
                let bad = |reason: String| MarketError::Stage { index, reason };
                if probabilities.len() != shares.len() || probabilities.is_empty() {
                    return Err(bad("probabilities and shares differ in length".into()));
                }
                if (probabilities.iter().sum::<f64>() - 1.0).abs() > 1e-12
                    || probabilities.iter().any(|p| *p < 0.0)
                {
                    return Err(bad("probabilities must sum to one".into()));
                }
                for s in shares {
                    if s.len() != r
                        || s.iter().any(|x| *x < 0.0)
                        || (s.iter().sum::<f64>() - 1.0).abs() > 1e-12
                    {
                        return Err(bad("each share vector must be a distribution over routes".into()));
                    }
                }
                for i in 0..n {
                    if state.migrants[i] {
                        state.migrants[i] = false;
                        state.members[i] = true;
                    }
                }
                state.plan = FleetPlan::Mix {
                    probabilities: probabilities.clone(),
                    shares: shares.clone(),
                };
                let snap = state.snapshot(0.0)?;
                let us = state.utilities(&snap, Some(snap.member_time), &none);
                state.report(stage.label(), snap, us, Vec::new())
            }
            Stage::TailoredOffer { bound, steps } => {
                if !matches!(state.plan, FleetPlan::Mix { .. }) {
                    return Err(MarketError::Stage {
                        index,
                        reason: "a tailored offer needs a preceding mixed routing".into(),
                    });
                }
                let steps = (*steps).max(1);
                let start = state.snapshot(0.0)?;
                let moving: Vec<bool> = gamma
                    .drivers()
                    .iter()
                    .enumerate()
                    .map(|(i, d)| {
                        !state.members[i]
                            && !state.migrants[i]
                            && d.params.cav_disutility(d.gamma, *bound)
                                <= d.params.best_hdv(&start.expected) + UTILITY_TOL
                    })
                    .collect();
                let total: f64 = state.weight(|i| moving[i]);
                let mut path = Vec::with_capacity(steps + 1);
                for k in 0..=steps {
                    let s = total * k as f64 / steps as f64;
                    let snap = state.snapshot(s)?;
                    let us = state.utilities(&snap, Some(*bound), &moving);
                    path.push(MigrationStep {
                        migrated: s,
                        hdv_time: snap.expected.iter().copied().fold(f64::INFINITY, f64::min),
                        utilities: us,
                    });
                }
                for (m, &go) in state.migrants.iter_mut().zip(&moving) {
                    *m |= go;
                }
                let snap = state.snapshot(0.0)?;
                let us = state.utilities(&snap, Some(*bound), &none);
                state.report(stage.label(), snap, us, path)
            }
        };
        stages.push(report);
    }
    Ok(DynamicTrace { initial, stages })
}
