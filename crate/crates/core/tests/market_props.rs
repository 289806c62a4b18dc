use fleetoffer::feasibility::Routing;
use fleetoffer::market::{self, DiscountProfile, MarketOffer};
use proptest::prelude::*;

fn two_routes() -> impl Strategy<Value = Routing> {
    (0.05f64..1.0, 0.05f64..1.0, 1.0f64..5.0, 0.1f64..3.0)
        .prop_map(|(a, b, t, gap)| Routing::new(vec![a, b], vec![t, t + gap]).unwrap())
}

proptest! {
    #[test]
    fn tailored_offers_hold_everyone(
        routing in two_routes(),
        raw in prop::collection::vec((0.05f64..1.0, 0.0f64..1.0), 1..8),
    ) {
        let floor = routing.min_time() / routing.max_time();
        let total: f64 = raw.iter().map(|r| r.0).sum();
        let weights: Vec<f64> = raw.iter().map(|r| r.0 * routing.total_flow() / total).collect();
        let gammas: Vec<f64> = raw.iter().map(|r| floor + r.1 * (1.0 - floor)).collect();
        let g = DiscountProfile::from_pairs(&weights, &gammas).unwrap();
        let res = market::tailored_offer_two_routes(&routing, &g);
        if !market::necessary_condition(&routing, &g) {
            prop_assert!(res.is_err());
            return Ok(());
        }
        let p = res.unwrap();
        let mean: f64 = p.drivers().iter().map(|d| d.weight * d.offer).sum::<f64>() / routing.total_flow();
        prop_assert!((mean - routing.mean_time()).abs() < 1e-9);
        for (gamma, t) in gammas.iter().zip(p.offers()) {
            prop_assert!(gamma * t <= routing.min_time() + 1e-9);
        }
    }

    #[test]
    fn full_offer_is_defection_proof(
        flows in prop::collection::vec(0.05f64..1.0, 1..5),
        times in prop::collection::vec(1.0f64..5.0, 5),
        raw in prop::collection::vec((0.05f64..1.0, 0.3f64..1.3), 1..6),
    ) {
        let routing = Routing::new(flows.clone(), times[..flows.len()].to_vec()).unwrap();
        let total: f64 = raw.iter().map(|r| r.0).sum();
        let weights: Vec<f64> = raw.iter().map(|r| r.0 * routing.total_flow() / total).collect();
        let gammas: Vec<f64> = raw.iter().map(|r| r.1).collect();
        let g = DiscountProfile::from_pairs(&weights, &gammas).unwrap();
        let offer = market::full_market_offer(&routing, &g).unwrap();
        if !market::necessary_condition(&routing, &g) {
            prop_assert!(!offer.is_yes());
        }
        if let MarketOffer::Yes { offers, plan, .. } = offer {
            for (gamma, t) in gammas.iter().zip(offers.offers()) {
                prop_assert!(gamma * t <= routing.min_time() + 1e-9);
            }
            for (a, b) in plan.route_totals().iter().zip(routing.flows()) {
                prop_assert!((a - b).abs() < 1e-8);
            }
        }
    }
}
