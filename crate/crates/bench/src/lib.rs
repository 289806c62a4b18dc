//! Deterministic inputs for the benchmarks.

use fleetoffer::feasibility::{AssignmentPlan, Routing};
use fleetoffer::network::{DelayFunction, Network};
use fleetoffer::DiscreteMeasure;

/// Routing with `r` routes and an offer measure with `atoms` atoms built
/// from a feasible plan, so the greedy runs to completion.
pub fn feasible_instance(r: usize, atoms: usize) -> (Routing, DiscreteMeasure) {
    let times: Vec<f64> = (0..r).map(|k| 10.0 + 3.0 * k as f64).collect();
    let mut flows = vec![0.0; r];
    let mut pairs = Vec::with_capacity(atoms);
    for i in 0..atoms {
        let raw: Vec<f64> = (0..r).map(|k| 1.0 + ((i * 7 + k * 3) % 5) as f64).collect();
        let s: f64 = raw.iter().sum();
        let w = 1.0 + (i % 3) as f64;
        let mut offer = 0.0;
        for k in 0..r {
            flows[k] += w * raw[k] / s;
            offer += raw[k] / s * times[k];
        }
        pairs.push((offer, w));
    }
    (
        Routing::new(flows, times).expect("valid routing"),
        DiscreteMeasure::canonicalize(pairs).expect("valid measure"),
    )
}

/// `n` unit drivers on `n` single-vehicle routes with cyclic rows.
pub fn cyclic_plan(n: usize) -> AssignmentPlan {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut row = vec![0.0; n];
            row[i] += 0.5;
            row[(i + 1) % n] += 0.3;
            row[(i + 3) % n] += 0.2;
            row
        })
        .collect();
    let routing = Routing::new(vec![1.0; n], (0..n).map(|k| 10.0 + k as f64).collect()).expect("valid routing");
    AssignmentPlan::new((1..=n).map(|i| i.to_string()).collect(), vec![1.0; n], rows, routing).expect("valid plan")
}

pub fn bpr_network(r: usize) -> Network {
    let routes = (0..r)
        .map(|k| DelayFunction::bpr(1.0 + 0.2 * k as f64, 0.5 + 0.1 * k as f64))
        .collect();
    Network::new(routes, 3.0).expect("valid network")
}
