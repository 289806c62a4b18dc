//! Day-by-day schedules realizing an assignment plan.
//!
//! With integer route flows and unit-weight drivers, a plan expands into a
//! doubly stochastic matrix by giving each route one column per vehicle slot.
//! A Birkhoff–von Neumann decomposition writes that matrix as a convex
//! combination of permutations; each permutation is a valid single-day
//! assignment, and playing permutation `z` on a fraction `theta_z` of days
//! reproduces the plan's proportions in the long run.

use std::io;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::feasibility::{AssignmentPlan, FEAS_TOL};

const ZERO_ENTRY: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("route flows must be non-negative integers, got {0:?}")]
    NonIntegerFlows(Vec<f64>),
    #[error("every driver must have unit weight (driver {0})")]
    NonUnitDriver(String),
    #[error("matrix is not doubly stochastic: {0}")]
    NotDoublyStochastic(String),
    #[error("invalid decomposition: {0}")]
    InvalidDecomposition(String),
    #[error("no perfect matching on the support of the residual matrix")]
    NoMatching,
}

type Result<T> = std::result::Result<T, ScheduleError>;

/// Square matrix with unit row and column sums.
#[derive(Debug, Clone, PartialEq)]
pub struct DoublyStochasticMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl DoublyStochasticMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(ScheduleError::NotDoublyStochastic("matrix is not square".into()));
        }
        let entries: Vec<f64> = rows.into_iter().flatten().collect();
        if entries.iter().any(|x| !(x.is_finite() && *x >= -FEAS_TOL)) {
            return Err(ScheduleError::NotDoublyStochastic("negative entry".into()));
        }
        let m = DoublyStochasticMatrix { n, entries };
        for i in 0..n {
            let row: f64 = (0..n).map(|j| m.get(i, j)).sum();
            let col: f64 = (0..n).map(|j| m.get(j, i)).sum();
            if (row - 1.0).abs() > FEAS_TOL || (col - 1.0).abs() > FEAS_TOL {
                return Err(ScheduleError::NotDoublyStochastic(format!(
                    "row {i} sums to {row}, column {i} sums to {col}"
                )));
            }
        }
        Ok(m)
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.entries.chunks(self.n.max(1)).map(|c| c.to_vec()).collect()
    }
}

/// Convex combination of permutations. `perm[i]` is the column matched to
/// row `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct BirkhoffDecomposition {
    pub terms: Vec<(f64, Vec<usize>)>,
}

impl BirkhoffDecomposition {
    pub fn weights(&self) -> Vec<f64> {
        self.terms.iter().map(|t| t.0).collect()
    }

    /// `sum_z theta_z P_z` as dense rows.
    pub fn reconstruct(&self, n: usize) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; n]; n];
        for (theta, perm) in &self.terms {
            for (i, &j) in perm.iter().enumerate() {
                out[i][j] += theta;
            }
        }
        out
    }
}

/// One day's assignment: a route index per driver.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DailyAssignment {
    pub routes: Vec<usize>,
}

impl DailyAssignment {
    pub fn flows(&self, route_count: usize) -> Vec<usize> {
        let mut out = vec![0; route_count];
        for &r in &self.routes {
            out[r] += 1;
        }
        out
    }
}

/// Route of every driver on every day.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiDaySchedule {
    /// `routes[driver][day]`, zero-based route indices.
    pub routes: Vec<Vec<usize>>,
    pub route_count: usize,
}

impl MultiDaySchedule {
    pub fn days(&self) -> usize {
        self.routes.first().map_or(0, |r| r.len())
    }

    pub fn driver_count(&self) -> usize {
        self.routes.len()
    }

    /// Vehicles per route on `day`.
    pub fn daily_flows(&self, day: usize) -> Vec<usize> {
        let mut out = vec![0; self.route_count];
        for row in &self.routes {
            out[row[day]] += 1;
        }
        out
    }

    /// Share of days each driver spends on each route.
    pub fn frequencies(&self) -> Vec<Vec<f64>> {
        let days = self.days().max(1) as f64;
        self.routes
            .iter()
            .map(|row| {
                let mut f = vec![0.0; self.route_count];
                for &r in row {
                    f[r] += 1.0;
                }
                f.iter().map(|c| c / days).collect()
            })
            .collect()
    }

    /// Mean travel time per driver over the schedule.
    pub fn mean_times(&self, times: &[f64]) -> Vec<f64> {
        let days = self.days().max(1) as f64;
        self.routes
            .iter()
            .map(|row| row.iter().map(|&r| times[r]).sum::<f64>() / days)
            .collect()
    }

    /// Drivers as rows, days as columns, one-based route ids.
    pub fn write_csv<W: io::Write>(&self, writer: W, ids: &[String]) -> io::Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["driver".to_string()];
        header.extend((1..=self.days()).map(|d| format!("day{d}")));
        wtr.write_record(&header)?;
        for (i, row) in self.routes.iter().enumerate() {
            let id = ids.get(i).cloned().unwrap_or_else(|| (i + 1).to_string());
            let mut rec = vec![id];
            rec.extend(row.iter().map(|r| (r + 1).to_string()));
            wtr.write_record(&rec)?;
        }
        wtr.flush()
    }
}

fn integer_flows(flows: &[f64]) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(flows.len());
    for &q in flows {
        let r = q.round();
        if !(q >= 0.0 && (q - r).abs() <= FEAS_TOL * q.max(1.0)) {
            return Err(ScheduleError::NonIntegerFlows(flows.to_vec()));
        }
        out.push(r as usize);
    }
    Ok(out)
}

/// Column `c` of the expanded matrix belongs to this route.
fn column_routes(counts: &[usize]) -> Vec<usize> {
    counts
        .iter()
        .enumerate()
        .flat_map(|(r, &c)| std::iter::repeat_n(r, c))
        .collect()
}

/// Replaces route column `r` of the plan by `q_r` copies scaled by `1/q_r`.
pub fn expand_to_doubly_stochastic(plan: &AssignmentPlan) -> Result<DoublyStochasticMatrix> {
    let counts = integer_flows(plan.routing().flows())?;
    for (id, w) in plan.ids().iter().zip(plan.weights()) {
        if (w - 1.0).abs() > FEAS_TOL {
            return Err(ScheduleError::NonUnitDriver(id.clone()));
        }
    }
    let cols = column_routes(&counts);
    let rows = plan
        .rows()
        .iter()
        .map(|row| cols.iter().map(|&r| row[r] / counts[r] as f64).collect())
        .collect();
    DoublyStochasticMatrix::new(rows)
}

/// Kuhn's augmenting-path matching restricted to entries above the zero
/// threshold; rows and columns are tried in ascending order.
fn perfect_matching(n: usize, residual: &[f64]) -> Option<Vec<usize>> {
    fn augment(
        i: usize,
        n: usize,
        residual: &[f64],
        seen: &mut [bool],
        col_owner: &mut [Option<usize>],
    ) -> bool {
        for j in 0..n {
            if residual[i * n + j] > ZERO_ENTRY && !seen[j] {
                seen[j] = true;
                let free = match col_owner[j] {
                    None => true,
                    Some(k) => augment(k, n, residual, seen, col_owner),
                };
                if free {
                    col_owner[j] = Some(i);
                    return true;
                }
            }
        }
        false
    }
    let mut col_owner = vec![None; n];
    for i in 0..n {
        let mut seen = vec![false; n];
        if !augment(i, n, residual, &mut seen, &mut col_owner) {
            return None;
        }
    }
    let mut perm = vec![0; n];
    for (j, owner) in col_owner.iter().enumerate() {
        perm[owner.expect("perfect matching")] = j;
    }
    Some(perm)
}

/// Peels off permutations until the residual mass is exhausted.
pub fn birkhoff_decompose(m: &DoublyStochasticMatrix) -> Result<BirkhoffDecomposition> {
    let n = m.size();
    let mut residual = m.entries.clone();
    let mut terms = Vec::new();
    let mut remaining = 1.0;
    let stop = ZERO_ENTRY * n.max(1) as f64;
    while remaining > stop && terms.len() < n * n {
        let Some(perm) = perfect_matching(n, &residual) else {
            if remaining > FEAS_TOL {
                return Err(ScheduleError::NoMatching);
            }
            break;
        };
        let theta = perm
            .iter()
            .enumerate()
            .map(|(i, &j)| residual[i * n + j])
            .fold(f64::INFINITY, f64::min);
        for (i, &j) in perm.iter().enumerate() {
            let e = &mut residual[i * n + j];
            *e -= theta;
            if *e <= ZERO_ENTRY {
                *e = 0.0;
            }
        }
        remaining -= theta;
        terms.push((theta, perm));
    }
    // Hand rounding drift to the largest term so weights sum to one.
    let sum: f64 = terms.iter().map(|t| t.0).sum();
    if let Some(big) = (0..terms.len()).max_by(|&a, &b| terms[a].0.total_cmp(&terms[b].0)) {
        terms[big].0 += 1.0 - sum;
    }
    Ok(BirkhoffDecomposition { terms })
}

/// Collapses each route's block of columns back to the route.
pub fn recombine(perm: &[usize], flows: &[usize]) -> DailyAssignment {
    let cols = column_routes(flows);
    DailyAssignment {
        routes: perm.iter().map(|&j| cols[j]).collect(),
    }
}

/// Deterministic sequence of term indices whose running frequencies track
/// `theta`: each day goes to the term furthest behind its quota, ties to the
/// lowest index.
pub fn day_sequence(theta: &[f64], days: usize) -> Vec<usize> {
    let mut counts = vec![0usize; theta.len()];
    let mut out = Vec::with_capacity(days);
    for j in 1..=days {
        let mut best = 0;
        let mut best_gap = f64::NEG_INFINITY;
        for (z, &th) in theta.iter().enumerate() {
            let gap = th * j as f64 - counts[z] as f64;
            if gap > best_gap {
                best_gap = gap;
                best = z;
            }
        }
        counts[best] += 1;
        out.push(best);
    }
    out
}

fn schedule_from_sequence(
    decomp: &BirkhoffDecomposition,
    flows: &[usize],
    seq: &[usize],
) -> MultiDaySchedule {
    let dailies: Vec<DailyAssignment> = decomp.terms.iter().map(|(_, p)| recombine(p, flows)).collect();
    let drivers = flows.iter().sum();
    let mut routes = vec![Vec::with_capacity(seq.len()); drivers];
    for &z in seq {
        for (i, &r) in dailies[z].routes.iter().enumerate() {
            routes[i].push(r);
        }
    }
    MultiDaySchedule {
        routes,
        route_count: flows.len(),
    }
}

/// Plan → doubly stochastic matrix → decomposition → deterministic day
/// sequence.
pub fn build_schedule(plan: &AssignmentPlan, days: usize) -> Result<(BirkhoffDecomposition, MultiDaySchedule)> {
    let flows = integer_flows(plan.routing().flows())?;
    let m = expand_to_doubly_stochastic(plan)?;
    let decomp = birkhoff_decompose(&m)?;
    let seq = day_sequence(&decomp.weights(), days);
    let schedule = schedule_from_sequence(&decomp, &flows, &seq);
    Ok((decomp, schedule))
}

/// Draws each day's term independently with probabilities `theta`.
pub fn sample_schedule(
    decomp: &BirkhoffDecomposition,
    flows: &[f64],
    days: usize,
    seed: u64,
) -> Result<MultiDaySchedule> {
    let flows = integer_flows(flows)?;
    let n: usize = flows.iter().sum();
    if decomp.terms.iter().any(|(_, p)| p.len() != n) {
        return Err(ScheduleError::InvalidDecomposition(
            "permutation size differs from driver count".into(),
        ));
    }
    let dist = WeightedIndex::new(decomp.weights())
        .map_err(|e| ScheduleError::InvalidDecomposition(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seq: Vec<usize> = (0..days).map(|_| dist.sample(&mut rng)).collect();
    Ok(schedule_from_sequence(decomp, &flows, &seq))
}
