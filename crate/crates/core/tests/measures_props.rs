use fleetoffer::DiscreteMeasure;
use proptest::prelude::*;

fn atoms() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec(((0u32..20).prop_map(|k| k as f64 * 0.5), 0.01f64..2.0), 1..10)
}

proptest! {
    #[test]
    fn canonical_form(pairs in atoms()) {
        let m = DiscreteMeasure::canonicalize(pairs.clone()).unwrap();
        let locs: Vec<f64> = m.atoms().iter().map(|a| a.location).collect();
        prop_assert!(locs.windows(2).all(|w| w[0] < w[1]));
        let mass: f64 = pairs.iter().map(|p| p.1).sum();
        prop_assert!((m.total_mass() - mass).abs() < 1e-12);
        let first: f64 = pairs.iter().map(|p| p.0 * p.1).sum();
        prop_assert!((m.partial_expectation() - first).abs() < 1e-9);
    }

    #[test]
    fn initial_sections_nest(pairs in atoms(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let m = DiscreteMeasure::canonicalize(pairs).unwrap();
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let small = m.initial_section(lo * m.total_mass()).unwrap();
        let big = m.initial_section(hi * m.total_mass()).unwrap();
        prop_assert!((big.total_mass() - hi * m.total_mass()).abs() < 1e-12);
        let rest = big.subtract(&small).unwrap();
        prop_assert!((rest.total_mass() + small.total_mass() - big.total_mass()).abs() < 1e-12);
        // An initial section has the lowest mean among sections of its mass.
        if let (Some(x), Some(y)) = (small.mean(), rest.mean()) {
            prop_assert!(x <= y + 1e-12);
        }
    }

    #[test]
    fn add_then_subtract(p in atoms(), q in atoms()) {
        let a = DiscreteMeasure::canonicalize(p).unwrap();
        let b = DiscreteMeasure::canonicalize(q).unwrap();
        let back = a.add(&b).subtract(&b).unwrap();
        prop_assert!((back.total_mass() - a.total_mass()).abs() < 1e-9);
        prop_assert!((back.partial_expectation() - a.partial_expectation()).abs() < 1e-9);
    }

    #[test]
    fn cumulative_masses_increase(pairs in atoms()) {
        let m = DiscreteMeasure::canonicalize(pairs).unwrap();
        let c = m.cumulative_masses();
        prop_assert!(c.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!((c.last().unwrap() - m.total_mass()).abs() < 1e-12);
    }
}

#[test]
fn rejects_bad_weights() {
    assert!(DiscreteMeasure::canonicalize([(1.0, -0.5)]).is_err());
    assert!(DiscreteMeasure::canonicalize([(f64::NAN, 0.5)]).is_err());
}
