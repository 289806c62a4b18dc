//! End-to-end scenario runs: network solve, market analysis, feasibility,
//! schedule and a day-by-day simulation of route times.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feasibility::{self, AssignmentPlan, DriverOffer, FeasibilityError, MixedRouting, OfferProfile, Routing};
use crate::format::num;
use crate::market::{
    self, DiscountDriver, DiscountProfile, DriverRule, EquilibriumVerdict, MarketError, MarketOffer, Mode,
    Stage, UtilityPair,
};
use crate::measures::{DiscreteMeasure, MeasureError};
use crate::network::{self, Network, NetworkError};
use crate::risk::{self, PenaltySpec, RiskError};
use crate::scheduler::{self, MultiDaySchedule, ScheduleError};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("config error at `{path}`: {reason}")]
    Config { path: String, reason: String },
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Feasibility(#[from] FeasibilityError),
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

type Result<T> = std::result::Result<T, ScenarioError>;

fn config_err(path: impl Into<String>, reason: impl Into<String>) -> ScenarioError {
    ScenarioError::Config {
        path: path.into(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunParams {
    #[serde(default = "default_days")]
    pub days: usize,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_days() -> usize {
    100
}

impl Default for RunParams {
    fn default() -> Self {
        RunParams {
            days: default_days(),
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solve {
    Wardrop,
    SystemOptimum,
}

/// What the fleet does.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    /// Human drivers only.
    None,
    /// One routing every day, offered to the whole population.
    Deterministic {
        #[serde(default)]
        flows: Option<Vec<f64>>,
        #[serde(default)]
        solve: Option<Solve>,
        /// Fleet size used to turn the plan into a vehicle schedule.
        #[serde(default)]
        vehicles: Option<usize>,
    },
    /// Fleet flows drawn per day from components; `routes` maps a
    /// population id to its one-based route in each component. Classes not
    /// listed drive themselves.
    Mixed {
        probabilities: Vec<f64>,
        flows: Vec<Vec<f64>>,
        routes: BTreeMap<String, Vec<usize>>,
    },
    /// Staged market entry.
    Stages { stages: Vec<Stage> },
    /// Explicit offers checked against a routing.
    Offers {
        flows: Vec<f64>,
        #[serde(default)]
        times: Option<Vec<f64>>,
        drivers: Vec<DriverOffer>,
    },
}

impl Strategy {
    pub fn label(&self) -> &'static str {
        match self {
            Strategy::None => "none",
            Strategy::Deterministic { .. } => "deterministic",
            Strategy::Mixed { .. } => "mixed",
            Strategy::Stages { .. } => "stages",
            Strategy::Offers { .. } => "offers",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskParams {
    pub late: f64,
    pub early: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub run: RunParams,
    #[serde(default)]
    pub network: Option<Network>,
    #[serde(default)]
    pub population: Vec<DiscountDriver>,
    pub strategy: Strategy,
    #[serde(default)]
    pub risk: Option<RiskParams>,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    fn network(&self) -> Result<&Network> {
        self.network
            .as_ref()
            .ok_or_else(|| config_err("network", "this strategy needs a network"))
    }

    fn population(&self) -> Result<DiscountProfile> {
        if self.population.is_empty() {
            return Err(config_err("population", "this strategy needs a population"));
        }
        Ok(DiscountProfile::new(self.population.clone())?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.run.days == 0 {
            return Err(config_err("run.days", "must be positive"));
        }
        for (i, d) in self.population.iter().enumerate() {
            if !(d.weight.is_finite() && d.weight > 0.0) {
                return Err(config_err(format!("population[{i}].weight"), "must be positive"));
            }
            if !(d.gamma.is_finite() && d.gamma > 0.0) {
                return Err(config_err(format!("population[{i}].gamma"), "must be positive"));
            }
        }
        if let Some(r) = &self.risk {
            PenaltySpec::new(r.late, r.early).map_err(|e| config_err("risk", e.to_string()))?;
        }
        match &self.strategy {
            Strategy::Mixed {
                probabilities,
                flows,
                routes,
            } => {
                let net = self.network()?;
                if probabilities.is_empty() || probabilities.iter().any(|p| !(*p >= 0.0)) {
                    return Err(config_err("strategy.probabilities", "must be non-negative"));
                }
                if (probabilities.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                    return Err(config_err("strategy.probabilities", "must sum to 1"));
                }
                if flows.len() != probabilities.len() {
                    return Err(config_err("strategy.flows", "one flow vector per component"));
                }
                for (m, f) in flows.iter().enumerate() {
                    if f.len() != net.route_count() {
                        return Err(config_err(format!("strategy.flows[{m}]"), "one flow per route"));
                    }
                }
                for (id, r) in routes {
                    if !self.population.iter().any(|d| &d.id == id) {
                        return Err(config_err(format!("strategy.routes.{id}"), "unknown population id"));
                    }
                    if r.len() != probabilities.len() {
                        return Err(config_err(format!("strategy.routes.{id}"), "one route per component"));
                    }
                    if r.iter().any(|&k| k == 0 || k > net.route_count()) {
                        return Err(config_err(format!("strategy.routes.{id}"), "route ids run from 1"));
                    }
                }
            }
            Strategy::Deterministic { flows, solve, .. } => {
                if flows.is_some() == solve.is_some() {
                    return Err(config_err("strategy", "give exactly one of `flows` and `solve`"));
                }
                self.network()?;
            }
            Strategy::Offers { times, .. } => {
                if times.is_none() {
                    self.network()?;
                }
            }
            Strategy::Stages { .. } => {
                self.network()?;
            }
            Strategy::None => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSummary {
    pub wardrop_flows: Vec<f64>,
    pub wardrop_times: Vec<f64>,
    pub optimum_flows: Vec<f64>,
    pub optimum_times: Vec<f64>,
    pub optimum_mean: f64,
    /// Fastest over mean time at the system optimum.
    pub optimum_bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistogramBin {
    /// Zero-based route index.
    pub route: usize,
    pub time: f64,
    pub days: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageSummary {
    pub label: String,
    pub share: f64,
    pub verdict: EquilibriumVerdict,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RouteRisk {
    pub route: usize,
    pub rho: f64,
    pub risk: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub name: String,
    pub strategy: String,
    pub days: usize,
    pub seed: Option<u64>,
    pub network: Option<NetworkSummary>,
    /// Offer accepted, routing feasible or equilibrium reached.
    pub feasible: bool,
    pub message: String,
    pub utilities: Vec<UtilityPair>,
    pub share: f64,
    pub verdict: Option<EquilibriumVerdict>,
    pub stages: Vec<StageSummary>,
    /// `(probability, route times)` per routing component.
    pub route_times: Vec<(f64, Vec<f64>)>,
    /// `timeseries[day][route]`.
    pub timeseries: Vec<Vec<f64>>,
    pub histogram: Vec<HistogramBin>,
    pub schedule: Option<(Vec<String>, MultiDaySchedule)>,
    pub risk: Vec<RouteRisk>,
    /// Best human route when schedule risk is priced in, with its cost.
    pub risk_choice: Option<(usize, f64)>,
}

fn summarize_network(net: &Network) -> Result<NetworkSummary> {
    let we = network::wardrop_equilibrium(net)?;
    let so = network::system_optimum(net)?;
    let so_times = network::travel_times(net, &so)?;
    let mean = network::mean_time(net, &so)?;
    let fastest = so_times.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(NetworkSummary {
        wardrop_times: network::travel_times(net, &we)?,
        wardrop_flows: we.into_vec(),
        optimum_flows: so.as_slice().to_vec(),
        optimum_times: so_times,
        optimum_mean: mean,
        optimum_bound: fastest / mean,
    })
}

/// Component index per day: largest-remainder sequencing, or independent
/// draws when a seed is given.
fn day_components(probabilities: &[f64], days: usize, seed: Option<u64>) -> Result<Vec<usize>> {
    if probabilities.len() == 1 {
        return Ok(vec![0; days]);
    }
    match seed {
        None => Ok(scheduler::day_sequence(probabilities, days)),
        Some(seed) => {
            let dist = WeightedIndex::new(probabilities)
                .map_err(|e| config_err("strategy.probabilities", e.to_string()))?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Ok((0..days).map(|_| dist.sample(&mut rng)).collect())
        }
    }
}

fn histogram(timeseries: &[Vec<f64>], routes: usize) -> Vec<HistogramBin> {
    let mut out = Vec::new();
    for r in 0..routes {
        // Bin on the printed value so rounding noise does not split bins.
        let mut bins: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for day in timeseries {
            let e = bins.entry(num(day[r])).or_insert((day[r], 0));
            e.1 += 1;
        }
        let mut v: Vec<(f64, usize)> = bins.into_values().collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        out.extend(v.into_iter().map(|(time, days)| HistogramBin { route: r, time, days }));
    }
    out
}

/// Expands an integer-weight plan into unit drivers and schedules it.
fn plan_schedule(
    plan: &AssignmentPlan,
    scale: f64,
    days: usize,
    seed: Option<u64>,
) -> Result<Option<(Vec<String>, MultiDaySchedule)>> {
    let is_int = |x: f64| (x - x.round()).abs() <= 1e-9 * x.abs().max(1.0);
    let flows: Vec<f64> = plan.routing().flows().iter().map(|q| q * scale).collect();
    let weights: Vec<f64> = plan.weights().iter().map(|w| w * scale).collect();
    if !flows.iter().chain(&weights).all(|&x| is_int(x)) {
        return Ok(None);
    }
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    for ((id, w), row) in plan.ids().iter().zip(&weights).zip(plan.rows()) {
        let n = w.round() as usize;
        for k in 0..n {
            ids.push(if n == 1 { id.clone() } else { format!("{id}.{}", k + 1) });
            rows.push(row.clone());
        }
    }
    let flows: Vec<f64> = flows.iter().map(|q| q.round()).collect();
    let routing = Routing::new(flows.clone(), plan.routing().times().to_vec())?;
    let unit = AssignmentPlan::new(ids.clone(), vec![1.0; rows.len()], rows, routing)?;
    let (decomp, schedule) = scheduler::build_schedule(&unit, days)?;
    let schedule = match seed {
        None => schedule,
        Some(seed) => scheduler::sample_schedule(&decomp, &flows, days, seed)?,
    };
    Ok(Some((ids, schedule)))
}

fn constant_series(times: &[f64], days: usize) -> Vec<Vec<f64>> {
    vec![times.to_vec(); days]
}

/// Runs one scenario. `seed` overrides the config seed; without any seed
/// the day sequence is deterministic.
pub fn run_scenario(cfg: &ScenarioConfig, seed: Option<u64>) -> Result<RunReport> {
    cfg.validate()?;
    let days = cfg.run.days;
    let seed = seed.or(cfg.run.seed);
    let summary = cfg.network.as_ref().map(summarize_network).transpose()?;
    let mut report = RunReport {
        name: cfg.name.clone(),
        strategy: cfg.strategy.label().to_string(),
        days,
        seed,
        network: summary,
        feasible: true,
        message: String::new(),
        utilities: Vec::new(),
        share: 0.0,
        verdict: None,
        stages: Vec::new(),
        route_times: Vec::new(),
        timeseries: Vec::new(),
        histogram: Vec::new(),
        schedule: None,
        risk: Vec::new(),
        risk_choice: None,
    };

    match &cfg.strategy {
        Strategy::None => {
            let net = cfg.network()?;
            let trace = if cfg.population.is_empty() {
                None
            } else {
                Some(market::dynamic_stages(net, &cfg.population()?, &[])?)
            };
            let s = report.network.as_ref().expect("network present");
            report.route_times = vec![(1.0, s.wardrop_times.clone())];
            if let Some(t) = trace {
                report.utilities = t.initial.utilities.clone();
                report.verdict = Some(t.initial.verdict.clone());
            }
            report.message = "human drivers only".into();
        }
        Strategy::Deterministic { flows, solve, vehicles } => {
            let net = cfg.network()?;
            let gamma = cfg.population()?;
            let q = match (flows, solve) {
                (Some(f), _) => network::FlowVector::new(f.clone(), net)?,
                (None, Some(Solve::Wardrop)) => network::wardrop_equilibrium(net)?,
                (None, _) => network::system_optimum(net)?,
            };
            let routing = Routing::from_network(net, &q)?;
            report.route_times = vec![(1.0, routing.times().to_vec())];
            let tmin = routing.min_time();
            match market::full_market_offer(&routing, &gamma)? {
                MarketOffer::Yes { offers, plan, .. } => {
                    report.utilities = gamma
                        .drivers()
                        .iter()
                        .zip(offers.offers())
                        .map(|(d, t)| UtilityPair {
                            id: d.id.clone(),
                            gamma: d.gamma,
                            weight: d.weight,
                            mode: Mode::Cav,
                            u_cav: Some(d.params.cav_disutility(d.gamma, t)),
                            u_hdv: d.params.best_hdv(&[tmin]),
                        })
                        .collect();
                    report.verdict = Some(EquilibriumVerdict::from_utilities(&report.utilities));
                    report.share = 1.0;
                    report.message = "every driver accepts the offer".into();
                    if let Some(n) = vehicles {
                        report.schedule = plan_schedule(&plan, *n as f64 / net.demand(), days, seed)?;
                        if report.schedule.is_none() {
                            report.message.push_str("; plan does not split into whole vehicles");
                        }
                    }
                }
                MarketOffer::No { reason } => {
                    report.feasible = false;
                    report.message = reason;
                }
            }
        }
        Strategy::Mixed {
            probabilities,
            flows,
            routes,
        } => {
            let net = cfg.network()?;
            let gamma = cfg.population()?;
            let fleet: f64 = flows[0].iter().sum();
            for (m, f) in flows.iter().enumerate() {
                if (f.iter().sum::<f64>() - fleet).abs() > 1e-9 * fleet.max(1.0) {
                    return Err(config_err(format!("strategy.flows[{m}]"), "fleet size differs between components"));
                }
            }
            let hdv = market::hdv_response(net, probabilities, flows, (net.demand() - fleet).max(0.0))?;
            let mut comps = Vec::new();
            for (p, f) in probabilities.iter().zip(flows) {
                let loads: Vec<f64> = f.iter().zip(&hdv).map(|(a, b)| a + b).collect();
                let times = net.times_at(&loads)?;
                report.route_times.push((*p, times.clone()));
                comps.push((*p, Routing::new(f.clone(), times)?));
            }
            let mix = MixedRouting::new(comps)?;
            let rules: Vec<DriverRule> = gamma
                .drivers()
                .iter()
                .map(|d| match routes.get(&d.id) {
                    Some(r) => DriverRule::Fleet {
                        routes: r.iter().map(|k| k - 1).collect(),
                    },
                    None => DriverRule::Human { offer: None },
                })
                .collect();
            let a = market::mixed_market_analysis(&mix, &rules, &gamma)?;
            report.feasible = a.verdict.is_equilibrium();
            report.message = format!("verdict {}", a.verdict.kind.label());
            report.share = a.share;
            report.utilities = a.utilities;
            report.verdict = Some(a.verdict);
        }
        Strategy::Stages { stages } => {
            let net = cfg.network()?;
            let trace = market::dynamic_stages(net, &cfg.population()?, stages)?;
            report.stages = trace
                .stages
                .iter()
                .map(|s| StageSummary {
                    label: s.label.clone(),
                    share: s.share,
                    verdict: s.verdict.clone(),
                })
                .collect();
            let last = trace.last();
            report.route_times = last.route_times.clone();
            report.utilities = last.utilities.clone();
            report.share = last.share;
            report.verdict = Some(last.verdict.clone());
            report.feasible = last.verdict.is_equilibrium();
            report.message = format!("verdict {}", last.verdict.kind.label());
        }
        Strategy::Offers { flows, times, drivers } => {
            let times = match times {
                Some(t) => t.clone(),
                None => cfg.network()?.times_at(flows)?,
            };
            let routing = Routing::new(flows.clone(), times)?;
            let profile = OfferProfile::new(drivers.clone())?;
            let (ok, nu) = feasibility::feasible(&routing, &profile.induced_measure())?;
            report.route_times = vec![(1.0, routing.times().to_vec())];
            report.feasible = ok;
            if ok {
                let plan = feasibility::plan_from_simplex_measure(&nu, &profile, &routing)?;
                report.schedule = plan_schedule(&plan, 1.0, days, seed)?;
                report.message = "offers are feasible".into();
            } else {
                report.message = "offers are not feasible".into();
            }
        }
    }

    let probabilities: Vec<f64> = report.route_times.iter().map(|(p, _)| *p).collect();
    let seq = day_components(&probabilities, days, seed)?;
    if let Strategy::Mixed { routes, .. } = &cfg.strategy {
        let ids: Vec<String> = cfg
            .population
            .iter()
            .filter(|d| routes.contains_key(&d.id))
            .map(|d| d.id.clone())
            .collect();
        let rows = ids
            .iter()
            .map(|id| seq.iter().map(|&m| routes[id][m] - 1).collect())
            .collect();
        let r = report.route_times[0].1.len();
        report.schedule = Some((ids, MultiDaySchedule { routes: rows, route_count: r }));
    }
    report.timeseries = if report.route_times.len() == 1 {
        constant_series(&report.route_times[0].1, days)
    } else {
        seq.iter().map(|&m| report.route_times[m].1.clone()).collect()
    };
    let routes = report.route_times.first().map_or(0, |(_, t)| t.len());
    report.histogram = histogram(&report.timeseries, routes);

    if let Some(rp) = &cfg.risk {
        let pen = PenaltySpec::new(rp.late, rp.early)?;
        let mut measures = Vec::with_capacity(routes);
        for r in 0..routes {
            let t = DiscreteMeasure::canonicalize(report.route_times.iter().map(|(p, t)| (t[r], *p)))?;
            let res = risk::optimal_rho(&t, &pen)?;
            report.risk.push(RouteRisk {
                route: r,
                rho: res.rho,
                risk: res.risk,
                total: res.total,
            });
            measures.push(t);
        }
        report.risk_choice = Some(risk::hdv_route_choice_with_risk(&measures, &pen)?);
    }
    Ok(report)
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn csv_err(e: csv::Error) -> io::Error {
    io::Error::other(e)
}

#[derive(Serialize)]
struct SummaryFile {
    name: String,
    strategy: String,
    days: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    feasible: bool,
    message: String,
    share: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    verdict: Option<VerdictFile>,
    #[serde(skip_serializing_if = "Option::is_none")]
    network: Option<NetworkFile>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    stages: Vec<StageFile>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    risk: Vec<RiskFile>,
    #[serde(skip_serializing_if = "Option::is_none")]
    risk_choice: Option<usize>,
}

#[derive(Serialize)]
struct VerdictFile {
    kind: String,
    defectors: Vec<String>,
    joiners: Vec<String>,
}

#[derive(Serialize)]
struct NetworkFile {
    wardrop_flows: Vec<f64>,
    wardrop_times: Vec<f64>,
    optimum_flows: Vec<f64>,
    optimum_times: Vec<f64>,
    optimum_mean: f64,
    optimum_bound: f64,
}

#[derive(Serialize)]
struct StageFile {
    label: String,
    share: f64,
    verdict: String,
}

#[derive(Serialize)]
struct RiskFile {
    route: usize,
    rho: f64,
    risk: f64,
    total: f64,
}

/// Rounds to the printed precision so the TOML output matches the CSVs.
fn r12(x: f64) -> f64 {
    num(x).parse().unwrap_or(x)
}

fn r12v(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| r12(x)).collect()
}

fn verdict_file(v: &EquilibriumVerdict) -> VerdictFile {
    VerdictFile {
        kind: v.kind.label().to_string(),
        defectors: v.defectors.clone(),
        joiners: v.joiners.clone(),
    }
}

/// Writes `utilities.csv`, `timeseries.csv`, `histogram.csv`,
/// `schedule.csv` and `summary.toml` into `dir`.
pub fn emit_csv(report: &RunReport, dir: &Path) -> io::Result<()> {
    fs::create_dir_all(dir)?;

    let mut w = csv::Writer::from_path(dir.join("utilities.csv")).map_err(csv_err)?;
    w.write_record(["id", "gamma", "weight", "mode", "u_cav", "u_hdv"]).map_err(csv_err)?;
    for u in &report.utilities {
        let mode = match u.mode {
            Mode::Cav => "cav",
            Mode::Hdv => "hdv",
        };
        w.write_record([u.id.clone(), num(u.gamma), num(u.weight), mode.into(), opt(u.u_cav), num(u.u_hdv)])
            .map_err(csv_err)?;
    }
    w.flush()?;

    let routes = report.route_times.first().map_or(0, |(_, t)| t.len());
    let mut w = csv::Writer::from_path(dir.join("timeseries.csv")).map_err(csv_err)?;
    let mut header = vec!["day".to_string()];
    header.extend((1..=routes).map(|r| format!("route{r}")));
    w.write_record(&header).map_err(csv_err)?;
    for (d, times) in report.timeseries.iter().enumerate() {
        let mut rec = vec![(d + 1).to_string()];
        rec.extend(times.iter().map(|&t| num(t)));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("histogram.csv")).map_err(csv_err)?;
    w.write_record(["route", "time", "days"]).map_err(csv_err)?;
    for b in &report.histogram {
        w.write_record([(b.route + 1).to_string(), num(b.time), b.days.to_string()])
            .map_err(csv_err)?;
    }
    w.flush()?;

    let file = fs::File::create(dir.join("schedule.csv"))?;
    match &report.schedule {
        Some((ids, s)) => s.write_csv(io::BufWriter::new(file), ids)?,
        None => {
            let mut w = csv::Writer::from_writer(file);
            w.write_record(["driver"]).map_err(csv_err)?;
            w.flush()?;
        }
    }

    let summary = SummaryFile {
        name: report.name.clone(),
        strategy: report.strategy.clone(),
        days: report.days,
        seed: report.seed,
        feasible: report.feasible,
        message: report.message.clone(),
        share: r12(report.share),
        verdict: report.verdict.as_ref().map(verdict_file),
        network: report.network.as_ref().map(|n| NetworkFile {
            wardrop_flows: r12v(&n.wardrop_flows),
            wardrop_times: r12v(&n.wardrop_times),
            optimum_flows: r12v(&n.optimum_flows),
            optimum_times: r12v(&n.optimum_times),
            optimum_mean: r12(n.optimum_mean),
            optimum_bound: r12(n.optimum_bound),
        }),
        stages: report
            .stages
            .iter()
            .map(|s| StageFile {
                label: s.label.clone(),
                share: r12(s.share),
                verdict: s.verdict.kind.label().to_string(),
            })
            .collect(),
        risk: report
            .risk
            .iter()
            .map(|r| RiskFile {
                route: r.route + 1,
                rho: r12(r.rho),
                risk: r12(r.risk),
                total: r12(r.total),
            })
            .collect(),
        risk_choice: report.risk_choice.map(|(r, _)| r + 1),
    };
    let text = toml::to_string(&summary).map_err(io::Error::other)?;
    fs::write(dir.join("summary.toml"), text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MIXED: &str = r#"
name = "mixed"
[run]
days = 1000
[network]
demand = 1.0
routes = [
  { kind = "affine", free_flow = 1.0, slope = 1.0 },
  { kind = "affine", free_flow = 1.0, slope = 1.0 },
]
[[population]]
id = "reluctant"
weight = 0.1
gamma = 1.3
[[population]]
id = "enthusiast"
weight = 0.9
gamma = 0.7
[strategy]
kind = "mixed"
probabilities = [0.5, 0.5]
flows = [[0.9, 0.1], [0.1, 0.9]]
routes = { reluctant = [2, 1], enthusiast = [1, 2] }
"#;

    #[test]
    fn mixed_run() {
        let cfg = ScenarioConfig::from_toml(MIXED).unwrap();
        let rep = run_scenario(&cfg, None).unwrap();
        assert!(rep.feasible);
        assert_eq!(rep.timeseries.len(), 1000);
        let route1: Vec<&HistogramBin> = rep.histogram.iter().filter(|b| b.route == 0).collect();
        assert_eq!(route1.len(), 2);
        assert_eq!(route1[0].days, 500);
        assert!((route1[0].time - 1.1).abs() < 1e-12);
        assert!((route1[1].time - 1.9).abs() < 1e-12);
        let u = &rep.utilities[0];
        assert!((u.u_cav.unwrap() - 1.43).abs() < 1e-12);
    }

    #[test]
    fn sampled_run_is_reproducible() {
        let cfg = ScenarioConfig::from_toml(MIXED).unwrap();
        let a = run_scenario(&cfg, Some(7)).unwrap();
        let b = run_scenario(&cfg, Some(7)).unwrap();
        assert_eq!(a, b);
        let days: usize = a.histogram.iter().filter(|b| b.route == 1).map(|b| b.days).sum();
        assert_eq!(days, 1000);
    }

    #[test]
    fn config_errors_name_the_field() {
        let bad = MIXED.replace("weight = 0.1", "weight = -0.1");
        match ScenarioConfig::from_toml(&bad) {
            Err(ScenarioError::Config { path, .. }) => assert_eq!(path, "population[0].weight"),
            other => panic!("unexpected {other:?}"),
        }
        let bad = MIXED.replace("[0.5, 0.5]", "[0.5, 0.6]");
        assert!(matches!(ScenarioConfig::from_toml(&bad), Err(ScenarioError::Config { .. })));
        let bad = MIXED.replace("enthusiast = [1, 2]", "stranger = [1, 2]");
        assert!(matches!(ScenarioConfig::from_toml(&bad), Err(ScenarioError::Config { .. })));
    }

    #[test]
    fn hdv_only_is_wardrop() {
        let text = r#"
name = "hdv"
[network]
demand = 1.0
routes = [
  { kind = "affine", free_flow = 1.0, slope = 2.0 },
  { kind = "affine", free_flow = 2.0, slope = 1.0 },
]
[[population]]
id = "all"
weight = 1.0
gamma = 1.0
[strategy]
kind = "none"
"#;
        let rep = run_scenario(&ScenarioConfig::from_toml(text).unwrap(), None).unwrap();
        let n = rep.network.as_ref().unwrap();
        assert!((n.wardrop_flows[0] - 2.0 / 3.0).abs() < 1e-9);
        assert!((n.optimum_bound - 8.0 / 9.0).abs() < 1e-12);
        assert_eq!(rep.verdict.unwrap().kind, crate::market::VerdictKind::Dfhe);
        assert_eq!(rep.share, 0.0);
    }

    #[test]
    fn emitted_files() {
        let cfg = ScenarioConfig::from_toml(MIXED).unwrap();
        let rep = run_scenario(&cfg, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        emit_csv(&rep, dir.path()).unwrap();
        for f in ["utilities.csv", "timeseries.csv", "histogram.csv", "schedule.csv", "summary.toml"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let hist = fs::read_to_string(dir.path().join("histogram.csv")).unwrap();
        assert!(hist.starts_with("route,time,days\n1,1.1,500\n1,1.9,500\n"));
        assert!(!hist.contains('\r'));
    }
}
