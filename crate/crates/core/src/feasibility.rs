//! Feasibility of travel-time offer profiles.
//!
//! A routing fixes how much fleet flow goes on each route and what each route
//! costs. An offer profile promises each driver a mean travel time. The
//! profile is feasible when some assignment plan (per-driver route
//! proportions) reproduces both the route flows and every promised mean.
//!
//! [`feasible`] is the constructive greedy check: it repeatedly pairs the
//! fastest available route with the first route bracketing the cheapest
//! remaining offers, and records the two-route mixtures it used as a measure
//! on the simplex. [`feasible_by_criterion`] is the non-constructive
//! check via partial expectations of initial sections.

use std::io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::measures::{Atom, DiscreteMeasure, MeasureError, MASS_TOL};
use crate::network::{self, FlowVector, Network, NetworkError};

/// Tolerance for feasibility decisions and plan equation checks.
pub const FEAS_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeasibilityError {
    #[error("invalid routing: {0}")]
    InvalidRouting(String),
    #[error("invalid offer profile: {0}")]
    InvalidProfile(String),
    #[error("offer profile incompatible with routing: {0}")]
    IncompatibleProfile(String),
    #[error("simplex measure does not generate the offer profile: {0}")]
    GenerationMismatch(String),
    #[error("invalid assignment plan: {0}")]
    InvalidPlan(String),
    #[error("invalid mixed routing: {0}")]
    InvalidMix(String),
    #[error("greedy check hit its iteration cap ({0})")]
    IterationCap(usize),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

type Result<T> = std::result::Result<T, FeasibilityError>;

fn mass_tol(total: f64) -> f64 {
    FEAS_TOL * total.abs().max(1.0)
}

/// Fleet flows per route together with the travel time on each route.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RoutingSpec", into = "RoutingSpec")]
pub struct Routing {
    flows: Vec<f64>,
    times: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RoutingSpec {
    flows: Vec<f64>,
    times: Vec<f64>,
}

impl TryFrom<RoutingSpec> for Routing {
    type Error = FeasibilityError;

    fn try_from(s: RoutingSpec) -> Result<Self> {
        Routing::new(s.flows, s.times)
    }
}

impl From<Routing> for RoutingSpec {
    fn from(r: Routing) -> Self {
        RoutingSpec {
            flows: r.flows,
            times: r.times,
        }
    }
}

impl Routing {
    pub fn new(flows: Vec<f64>, times: Vec<f64>) -> Result<Self> {
        if flows.is_empty() {
            return Err(FeasibilityError::InvalidRouting("no routes".into()));
        }
        if flows.len() != times.len() {
            return Err(FeasibilityError::InvalidRouting(format!(
                "{} flows but {} times",
                flows.len(),
                times.len()
            )));
        }
        if flows.iter().any(|q| !(q.is_finite() && *q >= 0.0)) {
            return Err(FeasibilityError::InvalidRouting(
                "flows must be finite and non-negative".into(),
            ));
        }
        if times.iter().any(|t| !t.is_finite()) {
            return Err(FeasibilityError::InvalidRouting("times must be finite".into()));
        }
        if flows.iter().sum::<f64>() <= 0.0 {
            return Err(FeasibilityError::InvalidRouting("total flow is zero".into()));
        }
        Ok(Routing { flows, times })
    }

    /// Routing induced by a flow pattern on a network.
    pub fn from_network(net: &Network, flows: &FlowVector) -> Result<Self> {
        let times = network::travel_times(net, flows)?;
        Routing::new(flows.as_slice().to_vec(), times)
    }

    pub fn flows(&self) -> &[f64] {
        &self.flows
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn route_count(&self) -> usize {
        self.flows.len()
    }

    pub fn total_flow(&self) -> f64 {
        self.flows.iter().sum()
    }

    /// Flow-weighted mean travel time.
    pub fn mean_time(&self) -> f64 {
        self.total_time() / self.total_flow()
    }

    /// `sum_r q_r t_r`.
    pub fn total_time(&self) -> f64 {
        self.flows.iter().zip(&self.times).map(|(q, t)| q * t).sum()
    }

    pub fn min_time(&self) -> f64 {
        self.times.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_time(&self) -> f64 {
        self.times.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Lowest-index route attaining the minimum time.
    pub fn fastest_route(&self) -> usize {
        argbest(&self.times, |a, b| a < b)
    }

    /// Lowest-index route attaining the maximum time.
    pub fn slowest_route(&self) -> usize {
        argbest(&self.times, |a, b| a > b)
    }

    /// `sum_r q_r * delta(t_r)`.
    pub fn route_measure(&self) -> DiscreteMeasure {
        DiscreteMeasure::canonicalize(self.times.iter().copied().zip(self.flows.iter().copied()))
            .expect("routing flows are validated")
    }

    /// Same times, different flows.
    pub fn with_flows(&self, flows: Vec<f64>) -> Result<Self> {
        Routing::new(flows, self.times.clone())
    }
}

fn argbest(xs: &[f64], better: impl Fn(f64, f64) -> bool) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if better(x, xs[best]) {
            best = i;
        }
    }
    best
}

/// A probability mixture of routings over the same routes, one drawn per day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MixSpec", into = "MixSpec")]
pub struct MixedRouting {
    components: Vec<(f64, Routing)>,
}

#[derive(Serialize, Deserialize)]
struct MixSpec {
    components: Vec<MixComponentSpec>,
}

#[derive(Serialize, Deserialize)]
struct MixComponentSpec {
    probability: f64,
    flows: Vec<f64>,
    times: Vec<f64>,
}

impl TryFrom<MixSpec> for MixedRouting {
    type Error = FeasibilityError;

    fn try_from(s: MixSpec) -> Result<Self> {
        let comps = s
            .components
            .into_iter()
            .map(|c| Ok((c.probability, Routing::new(c.flows, c.times)?)))
            .collect::<Result<Vec<_>>>()?;
        MixedRouting::new(comps)
    }
}

impl From<MixedRouting> for MixSpec {
    fn from(m: MixedRouting) -> Self {
        MixSpec {
            components: m
                .components
                .into_iter()
                .map(|(p, r)| MixComponentSpec {
                    probability: p,
                    flows: r.flows,
                    times: r.times,
                })
                .collect(),
        }
    }
}

impl MixedRouting {
    pub fn new(components: Vec<(f64, Routing)>) -> Result<Self> {
        let Some(first) = components.first() else {
            return Err(FeasibilityError::InvalidMix("no components".into()));
        };
        let routes = first.1.route_count();
        if components.iter().any(|(_, r)| r.route_count() != routes) {
            return Err(FeasibilityError::InvalidMix(
                "components have different route counts".into(),
            ));
        }
        if components.iter().any(|(p, _)| !(p.is_finite() && *p >= 0.0)) {
            return Err(FeasibilityError::InvalidMix("negative probability".into()));
        }
        let total: f64 = components.iter().map(|(p, _)| p).sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(FeasibilityError::InvalidMix(format!(
                "probabilities sum to {total}"
            )));
        }
        Ok(MixedRouting { components })
    }

    /// A single deterministic routing.
    pub fn pure(routing: Routing) -> Self {
        MixedRouting {
            components: vec![(1.0, routing)],
        }
    }

    pub fn components(&self) -> &[(f64, Routing)] {
        &self.components
    }

    pub fn route_count(&self) -> usize {
        self.components[0].1.route_count()
    }

    /// Per-route travel time averaged over components.
    pub fn expected_times(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.route_count()];
        for (p, r) in &self.components {
            for (o, t) in out.iter_mut().zip(r.times()) {
                *o += p * t;
            }
        }
        out
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.components.iter().map(|(p, _)| *p).collect()
    }
}

/// One driver (or driver class) with its promised mean travel time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriverOffer {
    pub id: String,
    pub weight: f64,
    pub offer: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<DriverOffer>", into = "Vec<DriverOffer>")]
pub struct OfferProfile {
    drivers: Vec<DriverOffer>,
}

impl TryFrom<Vec<DriverOffer>> for OfferProfile {
    type Error = FeasibilityError;

    fn try_from(d: Vec<DriverOffer>) -> Result<Self> {
        OfferProfile::new(d)
    }
}

impl From<OfferProfile> for Vec<DriverOffer> {
    fn from(p: OfferProfile) -> Self {
        p.drivers
    }
}

impl OfferProfile {
    pub fn new(drivers: Vec<DriverOffer>) -> Result<Self> {
        for d in &drivers {
            if !(d.weight.is_finite() && d.weight >= 0.0) {
                return Err(FeasibilityError::InvalidProfile(format!(
                    "driver {} has weight {}",
                    d.id, d.weight
                )));
            }
            if !d.offer.is_finite() {
                return Err(FeasibilityError::InvalidProfile(format!(
                    "driver {} has non-finite offer",
                    d.id
                )));
            }
        }
        Ok(OfferProfile { drivers })
    }

    /// Drivers named `1..=n` from parallel weight and offer lists.
    pub fn from_pairs(weights: &[f64], offers: &[f64]) -> Result<Self> {
        if weights.len() != offers.len() {
            return Err(FeasibilityError::InvalidProfile(
                "weights and offers differ in length".into(),
            ));
        }
        Self::new(
            weights
                .iter()
                .zip(offers)
                .enumerate()
                .map(|(i, (&weight, &offer))| DriverOffer {
                    id: (i + 1).to_string(),
                    weight,
                    offer,
                })
                .collect(),
        )
    }

    pub fn drivers(&self) -> &[DriverOffer] {
        &self.drivers
    }

    pub fn len(&self) -> usize {
        self.drivers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.drivers.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.drivers.iter().map(|d| d.weight).collect()
    }

    pub fn offers(&self) -> Vec<f64> {
        self.drivers.iter().map(|d| d.offer).collect()
    }

    pub fn total_weight(&self) -> f64 {
        self.drivers.iter().map(|d| d.weight).sum()
    }

    /// Distribution of offers over the driver population.
    pub fn induced_measure(&self) -> DiscreteMeasure {
        DiscreteMeasure::canonicalize(self.drivers.iter().map(|d| (d.offer, d.weight)))
            .expect("validated profile")
    }

    /// Reads an `id,weight,offer` CSV with a header row.
    pub fn read_csv<R: io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut drivers = Vec::new();
        for rec in rdr.deserialize::<DriverOffer>() {
            drivers.push(rec.map_err(|e| FeasibilityError::InvalidProfile(e.to_string()))?);
        }
        Self::new(drivers)
    }
}

/// Checks total mass and total expectation of `tau` against the routing.
pub fn check_compatibility(routing: &Routing, tau: &DiscreteMeasure) -> Result<()> {
    let q = routing.total_flow();
    let m = tau.total_mass();
    if (m - q).abs() > mass_tol(q) {
        return Err(FeasibilityError::IncompatibleProfile(format!(
            "offer mass {m} differs from fleet flow {q}"
        )));
    }
    let want = routing.total_time();
    let got = tau.partial_expectation();
    if (got - want).abs() > mass_tol(want) {
        return Err(FeasibilityError::IncompatibleProfile(format!(
            "mean offer {} differs from mean route time {}",
            got / m,
            want / q
        )));
    }
    Ok(())
}

/// Driver-by-route proportions subject to a routing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PlanSpec", into = "PlanSpec")]
pub struct AssignmentPlan {
    ids: Vec<String>,
    weights: Vec<f64>,
    rows: Vec<Vec<f64>>,
    routing: Routing,
}

#[derive(Serialize, Deserialize)]
struct PlanSpec {
    flows: Vec<f64>,
    times: Vec<f64>,
    drivers: Vec<PlanRowSpec>,
}

#[derive(Serialize, Deserialize)]
struct PlanRowSpec {
    id: String,
    #[serde(default = "unit_weight")]
    weight: f64,
    row: Vec<f64>,
}

fn unit_weight() -> f64 {
    1.0
}

impl TryFrom<PlanSpec> for AssignmentPlan {
    type Error = FeasibilityError;

    fn try_from(s: PlanSpec) -> Result<Self> {
        let routing = Routing::new(s.flows, s.times)?;
        let mut ids = Vec::new();
        let mut weights = Vec::new();
        let mut rows = Vec::new();
        for d in s.drivers {
            ids.push(d.id);
            weights.push(d.weight);
            rows.push(d.row);
        }
        AssignmentPlan::new(ids, weights, rows, routing)
    }
}

impl From<AssignmentPlan> for PlanSpec {
    fn from(p: AssignmentPlan) -> Self {
        PlanSpec {
            flows: p.routing.flows,
            times: p.routing.times,
            drivers: p
                .ids
                .into_iter()
                .zip(p.weights)
                .zip(p.rows)
                .map(|((id, weight), row)| PlanRowSpec { id, weight, row })
                .collect(),
        }
    }
}

impl AssignmentPlan {
    /// Validates row sums and route totals. Entries within tolerance of the
    /// unit interval are clamped into it.
    pub fn new(
        ids: Vec<String>,
        weights: Vec<f64>,
        mut rows: Vec<Vec<f64>>,
        routing: Routing,
    ) -> Result<Self> {
        let r = routing.route_count();
        if ids.len() != weights.len() || ids.len() != rows.len() {
            return Err(FeasibilityError::InvalidPlan(
                "ids, weights and rows differ in length".into(),
            ));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(FeasibilityError::InvalidPlan("negative driver weight".into()));
        }
        for (i, row) in rows.iter_mut().enumerate() {
            if row.len() != r {
                return Err(FeasibilityError::InvalidPlan(format!(
                    "row {i} has {} entries, routing has {r} routes",
                    row.len()
                )));
            }
            for x in row.iter_mut() {
                if !(x.is_finite() && *x >= -FEAS_TOL && *x <= 1.0 + FEAS_TOL) {
                    return Err(FeasibilityError::InvalidPlan(format!(
                        "row {i} has entry {x} outside [0, 1]"
                    )));
                }
                *x = x.clamp(0.0, 1.0);
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > FEAS_TOL {
                return Err(FeasibilityError::InvalidPlan(format!(
                    "row {i} sums to {s}"
                )));
            }
        }
        let plan = AssignmentPlan {
            ids,
            weights,
            rows,
            routing,
        };
        let totals = plan.route_totals();
        let scale = mass_tol(plan.routing.total_flow());
        for (k, (got, want)) in totals.iter().zip(plan.routing.flows()).enumerate() {
            if (got - want).abs() > scale {
                return Err(FeasibilityError::InvalidPlan(format!(
                    "route {k} receives {got}, flow is {want}"
                )));
            }
        }
        Ok(plan)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn routing(&self) -> &Routing {
        &self.routing
    }

    pub fn driver_count(&self) -> usize {
        self.rows.len()
    }

    /// `sum_i w_i mu(i, r)` per route.
    pub fn route_totals(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.routing.route_count()];
        for (w, row) in self.weights.iter().zip(&self.rows) {
            for (o, x) in out.iter_mut().zip(row) {
                *o += w * x;
            }
        }
        out
    }

    /// Mean travel time each driver experiences under the plan.
    pub fn offered_times(&self) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| row.iter().zip(self.routing.times()).map(|(x, t)| x * t).sum())
            .collect()
    }

    /// Verifies that each driver's mean time matches `offers`.
    pub fn check_offers(&self, offers: &[f64]) -> Result<()> {
        if offers.len() != self.rows.len() {
            return Err(FeasibilityError::InvalidPlan("offer count mismatch".into()));
        }
        for (i, (got, want)) in self.offered_times().iter().zip(offers).enumerate() {
            if (got - want).abs() > mass_tol(*want) {
                return Err(FeasibilityError::InvalidPlan(format!(
                    "driver {} gets mean time {got}, offer is {want}",
                    self.ids[i]
                )));
            }
        }
        Ok(())
    }

    /// The offer profile this plan realizes.
    pub fn offer_profile(&self) -> OfferProfile {
        let times = self.offered_times();
        OfferProfile {
            drivers: self
                .ids
                .iter()
                .zip(&self.weights)
                .zip(times)
                .map(|((id, &weight), offer)| DriverOffer {
                    id: id.clone(),
                    weight,
                    offer,
                })
                .collect(),
        }
    }
}

/// One atom of a measure on the simplex: `mass` drivers routed by `point`,
/// covering offers at `offer`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimplexComponent {
    pub mass: f64,
    pub point: Vec<f64>,
    pub offer: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SimplexMeasure {
    components: Vec<SimplexComponent>,
}

impl SimplexMeasure {
    /// Builds from `(mass, point)` pairs; each component covers the offer
    /// equal to its point's mean time.
    pub fn from_points(pairs: Vec<(f64, Vec<f64>)>, times: &[f64]) -> Result<Self> {
        let mut components = Vec::with_capacity(pairs.len());
        for (mass, point) in pairs {
            if !(mass.is_finite() && mass >= 0.0) {
                return Err(FeasibilityError::GenerationMismatch(format!("mass {mass}")));
            }
            if point.len() != times.len() {
                return Err(FeasibilityError::GenerationMismatch(
                    "point dimension differs from route count".into(),
                ));
            }
            let s: f64 = point.iter().sum();
            if point.iter().any(|x| *x < -MASS_TOL) || (s - 1.0).abs() > MASS_TOL {
                return Err(FeasibilityError::GenerationMismatch(
                    "point is not on the unit simplex".into(),
                ));
            }
            let offer = point.iter().zip(times).map(|(a, t)| a * t).sum();
            components.push(SimplexComponent { mass, point, offer });
        }
        Ok(SimplexMeasure { components })
    }

    pub fn components(&self) -> &[SimplexComponent] {
        &self.components
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.components.iter().map(|c| c.mass).sum()
    }

    /// `sum mass * point`: the route flows this measure generates.
    pub fn route_totals(&self) -> Vec<f64> {
        let r = self.components.first().map_or(0, |c| c.point.len());
        let mut out = vec![0.0; r];
        for c in &self.components {
            for (o, x) in out.iter_mut().zip(&c.point) {
                *o += c.mass * x;
            }
        }
        out
    }

    /// Distribution of covered offers.
    pub fn offer_measure(&self) -> DiscreteMeasure {
        DiscreteMeasure::canonicalize(self.components.iter().map(|c| (c.offer, c.mass)))
            .expect("component masses are non-negative")
    }

    /// `mass,a1,..,aR` rows with a header.
    pub fn write_csv<W: io::Write>(&self, writer: W, routes: usize) -> io::Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["mass".to_string()];
        header.extend((1..=routes).map(|r| format!("a{r}")));
        wtr.write_record(&header)?;
        for c in &self.components {
            let mut rec = vec![crate::format::num(c.mass)];
            rec.extend(c.point.iter().map(|x| crate::format::num(*x)));
            wtr.write_record(&rec)?;
        }
        wtr.flush()
    }
}

struct Group {
    time: f64,
    flow: f64,
    members: Vec<(usize, f64)>,
}

impl Group {
    /// Spreads coefficient `c` over the group's original routes in
    /// proportion to their flows.
    fn spread(&self, c: f64, point: &mut [f64]) {
        let total: f64 = self.members.iter().map(|m| m.1).sum();
        let n = self.members.len() as f64;
        for &(idx, q) in &self.members {
            point[idx] += if total > 0.0 { c * q / total } else { c / n };
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Limit {
    First,
    Second,
    Both,
}

/// Shared greedy engine. With `relaxed`, mass stranded above the slowest
/// remaining route is accepted and routed to the remaining routes,
/// slowest first.
fn greedy(routing: &Routing, tau: &DiscreteMeasure, relaxed: bool) -> Result<(bool, SimplexMeasure)> {
    let r = routing.route_count();
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| routing.times[a].total_cmp(&routing.times[b]));
    let mut groups: Vec<Group> = Vec::new();
    for idx in order {
        let (t, q) = (routing.times[idx], routing.flows[idx]);
        match groups.last_mut() {
            Some(g) if g.time == t => {
                g.flow += q;
                g.members.push((idx, q));
            }
            _ => groups.push(Group {
                time: t,
                flow: q,
                members: vec![(idx, q)],
            }),
        }
    }

    let loc_tol = FEAS_TOL * routing.times.iter().fold(1.0_f64, |m, t| m.max(t.abs()));
    let snapped = tau.atoms().iter().map(|a| {
        let loc = groups
            .iter()
            .map(|g| g.time)
            .find(|t| (a.location - t).abs() <= loc_tol)
            .unwrap_or(a.location);
        (loc, a.weight)
    });
    let mut atoms: Vec<Atom> = DiscreteMeasure::canonicalize(snapped)?.atoms().to_vec();

    let mtol = mass_tol(routing.total_flow());
    let qtol = MASS_TOL * routing.total_flow().max(1.0);
    let mut alive: Vec<usize> = (0..groups.len()).collect();
    let mut nu: Vec<SimplexComponent> = Vec::new();
    let cap = 2 * groups.len() + atoms.len() + 2;

    let mass_between = |atoms: &[Atom], lo: f64, hi: f64| -> f64 {
        atoms
            .iter()
            .filter(|a| a.location >= lo && a.location <= hi)
            .map(|a| a.weight)
            .sum()
    };

    for _ in 0..cap {
        let n = alive.len();
        let t1 = alive.first().map_or(f64::INFINITY, |&g| groups[g].time);
        let below: f64 = atoms.iter().filter(|a| a.location < t1).map(|a| a.weight).sum();
        if below > mtol {
            return Ok((false, SimplexMeasure { components: nu }));
        }
        if n == 0 {
            let rest: f64 = atoms.iter().map(|a| a.weight).sum();
            return Ok((rest <= mtol, SimplexMeasure { components: nu }));
        }
        let tn = groups[alive[n - 1]].time;
        if mass_between(&atoms, t1, tn) <= mtol {
            let above: f64 = atoms.iter().filter(|a| a.location > tn).map(|a| a.weight).sum();
            if !relaxed {
                return Ok((above <= mtol, SimplexMeasure { components: nu }));
            }
            route_leftover(&mut atoms, tn, &groups, &alive, r, &mut nu);
            return Ok((true, SimplexMeasure { components: nu }));
        }

        // First bracket [t_k, t_{k+1}] carrying mass; a lone route brackets
        // only its own time.
        let k = (0..n)
            .find(|&k| {
                let lo = groups[alive[k]].time;
                let hi = if k + 1 < n { groups[alive[k + 1]].time } else { lo };
                mass_between(&atoms, lo, hi) > MASS_TOL
            })
            .unwrap_or(0);

        let ga = alive[0];
        if groups[ga].flow <= qtol {
            alive.remove(0);
            continue;
        }
        if n == 1 {
            let Some(atom) = atoms.iter_mut().find(|a| a.location == groups[ga].time) else {
                continue;
            };
            let take = atom.weight.min(groups[ga].flow);
            let mut point = vec![0.0; r];
            groups[ga].spread(1.0, &mut point);
            nu.push(SimplexComponent {
                mass: take,
                point,
                offer: atom.location,
            });
            atom.weight -= take;
            groups[ga].flow = if take >= groups[ga].flow { 0.0 } else { groups[ga].flow - take };
            atoms.retain(|a| a.weight > MASS_TOL);
            continue;
        }
        let gb = alive[k + 1];
        if groups[gb].flow <= qtol {
            alive.remove(k + 1);
            continue;
        }

        let (ta, tb) = (groups[ga].time, groups[gb].time);
        let lo = groups[alive[k]].time;
        let (qa, qb) = (groups[ga].flow, groups[gb].flow);
        let (mut ja, mut jb) = (0.0, 0.0);
        let mut limit = None;
        for atom in atoms.iter_mut().filter(|a| a.location >= lo && a.location <= tb) {
            let aa = (tb - atom.location) / (tb - ta);
            let ab = (atom.location - ta) / (tb - ta);
            let mut take = atom.weight;
            let mut lim = None;
            if aa > 0.0 {
                let room = (qa - ja) / aa;
                if room <= take {
                    take = room;
                    lim = Some(Limit::First);
                }
            }
            if ab > 0.0 {
                let room = (qb - jb) / ab;
                if room < take {
                    take = room;
                    lim = Some(Limit::Second);
                } else if room == take {
                    lim = Some(if lim.is_some() { Limit::Both } else { Limit::Second });
                }
            }
            let take = take.max(0.0);
            if take > 0.0 {
                let mut point = vec![0.0; r];
                groups[ga].spread(aa, &mut point);
                groups[gb].spread(ab, &mut point);
                nu.push(SimplexComponent {
                    mass: take,
                    point,
                    offer: atom.location,
                });
                ja += aa * take;
                jb += ab * take;
                atom.weight -= take;
            }
            if lim.is_some() {
                limit = lim;
                break;
            }
        }
        groups[ga].flow = match limit {
            Some(Limit::First | Limit::Both) => 0.0,
            _ => (qa - ja).max(0.0),
        };
        groups[gb].flow = match limit {
            Some(Limit::Second | Limit::Both) => 0.0,
            _ => (qb - jb).max(0.0),
        };
        atoms.retain(|a| a.weight > MASS_TOL);
    }
    Err(FeasibilityError::IterationCap(cap))
}

fn route_leftover(
    atoms: &mut [Atom],
    tn: f64,
    groups: &[Group],
    alive: &[usize],
    r: usize,
    nu: &mut Vec<SimplexComponent>,
) {
    let mut slots: Vec<(usize, f64)> = alive.iter().rev().map(|&g| (g, groups[g].flow)).collect();
    let mut si = 0;
    for atom in atoms.iter_mut().rev().filter(|a| a.location > tn) {
        while atom.weight > MASS_TOL && si < slots.len() {
            let take = atom.weight.min(slots[si].1);
            if take > 0.0 {
                let mut point = vec![0.0; r];
                groups[slots[si].0].spread(1.0, &mut point);
                nu.push(SimplexComponent {
                    mass: take,
                    point,
                    offer: atom.location,
                });
            }
            atom.weight -= take;
            slots[si].1 -= take;
            if slots[si].1 <= MASS_TOL {
                si += 1;
            }
        }
    }
}

/// Greedy feasibility check. On success the returned simplex measure
/// generates `tau`: every component mixes the fastest remaining route with
/// one bracketing route. On failure the measure holds whatever was built
/// before the check failed.
pub fn feasible(routing: &Routing, tau: &DiscreteMeasure) -> Result<(bool, SimplexMeasure)> {
    check_compatibility(routing, tau)?;
    greedy(routing, tau, false)
}

/// Greedy check for offers that are upper bounds: succeeds when some feasible
/// profile gives every driver at most their offer. Components covering
/// stranded offers route those drivers to whole routes no slower than the
/// slowest route still available.
pub fn feasible_not_exceeding(
    routing: &Routing,
    tau: &DiscreteMeasure,
) -> Result<(bool, SimplexMeasure)> {
    let q = routing.total_flow();
    let m = tau.total_mass();
    if (m - q).abs() > mass_tol(q) {
        return Err(FeasibilityError::IncompatibleProfile(format!(
            "offer mass {m} differs from fleet flow {q}"
        )));
    }
    if tau.partial_expectation() < routing.total_time() - mass_tol(routing.total_time()) {
        return Ok((false, SimplexMeasure::default()));
    }
    greedy(routing, tau, true)
}

/// Partial-expectation check: the cheapest `m` units of route capacity must
/// never cost more than the cheapest `m` units of offers.
pub fn feasible_by_criterion(routing: &Routing, tau: &DiscreteMeasure) -> Result<bool> {
    check_compatibility(routing, tau)?;
    let q = routing.route_measure();
    let (qm, tm) = (q.total_mass(), tau.total_mass());
    let mut marks: Vec<f64> = q.cumulative_masses();
    marks.extend(tau.cumulative_masses());
    marks.sort_by(f64::total_cmp);
    let etol = mass_tol(routing.total_time());
    for m in marks {
        let eq = q.initial_section(m.min(qm))?.partial_expectation();
        let et = tau.initial_section(m.min(tm))?.partial_expectation();
        if eq > et + etol {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Plan rows without checking the offered means.
fn fill_plan(nu: &SimplexMeasure, profile: &OfferProfile, routing: &Routing) -> Result<AssignmentPlan> {
    let r = routing.route_count();
    let loc_tol = FEAS_TOL * routing.times.iter().fold(1.0_f64, |m, t| m.max(t.abs()));
    let mtol = mass_tol(routing.total_flow());
    let mut left: Vec<f64> = nu.components.iter().map(|c| c.mass).collect();
    let mut rows = Vec::with_capacity(profile.len());
    for d in &profile.drivers {
        let mut row = vec![0.0; r];
        if d.weight == 0.0 {
            rows.push(interpolated_row(routing, d.offer).ok_or_else(|| {
                FeasibilityError::GenerationMismatch(format!("offer {} out of range", d.offer))
            })?);
            continue;
        }
        let mut need = d.weight;
        for (c, rest) in nu.components.iter().zip(left.iter_mut()) {
            if need <= 0.0 {
                break;
            }
            if *rest <= 0.0 || (c.offer - d.offer).abs() > loc_tol {
                continue;
            }
            let take = rest.min(need);
            for (x, a) in row.iter_mut().zip(&c.point) {
                *x += take * a;
            }
            *rest -= take;
            need -= take;
        }
        if need > mtol {
            return Err(FeasibilityError::GenerationMismatch(format!(
                "driver {} lacks {need} units of coverage at offer {}",
                d.id, d.offer
            )));
        }
        let covered = d.weight - need.max(0.0);
        for x in &mut row {
            *x /= covered;
        }
        rows.push(row);
    }
    let unused: f64 = left.iter().sum();
    if unused > mtol {
        return Err(FeasibilityError::GenerationMismatch(format!(
            "{unused} units of the simplex measure cover no driver"
        )));
    }
    AssignmentPlan::new(
        profile.drivers.iter().map(|d| d.id.clone()).collect(),
        profile.weights(),
        rows,
        routing.clone(),
    )
    .map_err(|e| FeasibilityError::GenerationMismatch(e.to_string()))
}

/// Row mixing the two routes bracketing `offer`.
fn interpolated_row(routing: &Routing, offer: f64) -> Option<Vec<f64>> {
    let r = routing.route_count();
    let times = routing.times();
    let lo = (0..r).filter(|&k| times[k] <= offer).max_by(|&a, &b| times[a].total_cmp(&times[b]))?;
    let hi = (0..r).filter(|&k| times[k] >= offer).min_by(|&a, &b| times[a].total_cmp(&times[b]))?;
    let mut row = vec![0.0; r];
    if times[hi] == times[lo] {
        row[lo] = 1.0;
    } else {
        let a = (times[hi] - offer) / (times[hi] - times[lo]);
        row[lo] = a;
        row[hi] = 1.0 - a;
    }
    Some(row)
}

/// Converts a generating simplex measure into a per-driver plan. Drivers
/// sharing an offer value are filled from the covering components in order,
/// so a driver may receive a mixture of several components.
pub fn plan_from_simplex_measure(
    nu: &SimplexMeasure,
    profile: &OfferProfile,
    routing: &Routing,
) -> Result<AssignmentPlan> {
    let plan = fill_plan(nu, profile, routing)?;
    plan.check_offers(&profile.offers())
        .map_err(|e| FeasibilityError::GenerationMismatch(e.to_string()))?;
    Ok(plan)
}

/// Like [`plan_from_simplex_measure`] but for measures from
/// [`feasible_not_exceeding`]: each driver's mean time may fall below the
/// offer.
pub fn plan_not_exceeding(
    nu: &SimplexMeasure,
    profile: &OfferProfile,
    routing: &Routing,
) -> Result<AssignmentPlan> {
    let plan = fill_plan(nu, profile, routing)?;
    for (i, (got, want)) in plan.offered_times().iter().zip(profile.offers()).enumerate() {
        if *got > want + mass_tol(want) {
            return Err(FeasibilityError::GenerationMismatch(format!(
                "driver {} gets {got}, above offer {want}",
                plan.ids[i]
            )));
        }
    }
    Ok(plan)
}

/// Two-route plan together with whether it is the only one.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoRoutePlan {
    pub plan: AssignmentPlan,
    /// False when both routes have the same time; any split then works and
    /// the proportional one is returned.
    pub unique: bool,
}

/// The plan for two routes: each driver's split is fixed by their offer.
pub fn two_route_plan(profile: &OfferProfile, routing: &Routing) -> Result<TwoRoutePlan> {
    if routing.route_count() != 2 {
        return Err(FeasibilityError::InvalidRouting(format!(
            "expected 2 routes, got {}",
            routing.route_count()
        )));
    }
    check_compatibility(routing, &profile.induced_measure())?;
    let (t1, t2) = (routing.times[0], routing.times[1]);
    let ids: Vec<String> = profile.drivers.iter().map(|d| d.id.clone()).collect();
    if t1 == t2 {
        let q = routing.total_flow();
        let row = vec![routing.flows[0] / q, routing.flows[1] / q];
        let plan = AssignmentPlan::new(ids, profile.weights(), vec![row; profile.len()], routing.clone())?;
        return Ok(TwoRoutePlan { plan, unique: false });
    }
    let mut rows = Vec::with_capacity(profile.len());
    for d in &profile.drivers {
        let a = (t2 - d.offer) / (t2 - t1);
        if !(-FEAS_TOL..=1.0 + FEAS_TOL).contains(&a) {
            return Err(FeasibilityError::IncompatibleProfile(format!(
                "offer {} of driver {} lies outside the route times",
                d.offer, d.id
            )));
        }
        let a = a.clamp(0.0, 1.0);
        rows.push(vec![a, 1.0 - a]);
    }
    let plan = AssignmentPlan::new(ids, profile.weights(), rows, routing.clone())
        .map_err(|e| FeasibilityError::IncompatibleProfile(e.to_string()))?;
    Ok(TwoRoutePlan { plan, unique: true })
}

/// Splits a route-proportion vector `c` into pieces using at most two routes
/// each, every piece keeping the mean time `c.t / |c|`. Returns
/// `(mass, point)` pairs with points normalized to the simplex; masses sum to
/// `|c|`.
pub fn two_rmax(c: &[f64], t: &[f64]) -> Result<Vec<(f64, Vec<f64>)>> {
    if c.len() != t.len() || c.is_empty() {
        return Err(FeasibilityError::InvalidRouting(
            "coefficients and times differ in length".into(),
        ));
    }
    if c.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(FeasibilityError::InvalidRouting("negative coefficient".into()));
    }
    if t.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(FeasibilityError::InvalidRouting(
            "times must be strictly increasing".into(),
        ));
    }
    let total: f64 = c.iter().sum();
    if total <= 0.0 {
        return Ok(Vec::new());
    }
    let tbar = c.iter().zip(t).map(|(a, b)| a * b).sum::<f64>() / total;
    let zero = MASS_TOL * total;
    let eq_tol = MASS_TOL * tbar.abs().max(1.0);
    let mut c = c.to_vec();
    let (mut lo, mut hi) = (0usize, c.len() - 1);
    let mut out: Vec<(f64, Vec<f64>)> = Vec::new();
    let mut emit = |i: usize, ci: f64, j: usize, cj: f64| {
        let m = ci + cj;
        if m <= zero {
            return;
        }
        let mut p = vec![0.0; t.len()];
        p[i] += ci / m;
        p[j] += cj / m;
        out.push((m, p));
    };
    loop {
        if lo > hi {
            break;
        }
        if c[lo] <= zero {
            lo += 1;
            continue;
        }
        if c[hi] <= zero {
            if hi == 0 {
                break;
            }
            hi -= 1;
            continue;
        }
        if lo == hi {
            emit(lo, c[lo], lo, 0.0);
            break;
        }
        let (ca, cb) = (c[lo], c[hi]);
        let gamma = (ca * t[lo] + cb * t[hi]) / (ca + cb);
        if (gamma - tbar).abs() <= eq_tol {
            emit(lo, ca, hi, cb);
            c[lo] = 0.0;
            c[hi] = 0.0;
            lo += 1;
            hi -= 1;
        } else if gamma > tbar {
            let ct = (ca * (tbar - t[lo]) / (t[hi] - tbar)).min(cb);
            emit(lo, ca, hi, ct);
            c[lo] = 0.0;
            c[hi] = cb - ct;
            lo += 1;
        } else {
            let ct = (cb * (t[hi] - tbar) / (tbar - t[lo])).min(ca);
            emit(lo, ct, hi, cb);
            c[hi] = 0.0;
            c[lo] = ca - ct;
            hi -= 1;
        }
    }
    Ok(out)
}

/// Sufficient check for a mixed routing: every component's profile must be
/// feasible for its routing.
pub fn feasible_mixed(mix: &MixedRouting, profiles: &[OfferProfile]) -> Result<bool> {
    if profiles.len() != mix.components().len() {
        return Err(FeasibilityError::InvalidMix(format!(
            "{} profiles for {} components",
            profiles.len(),
            mix.components().len()
        )));
    }
    for ((_, routing), profile) in mix.components().iter().zip(profiles) {
        if !feasible(routing, &profile.induced_measure())?.0 {
            return Ok(false);
        }
    }
    Ok(true)
}
