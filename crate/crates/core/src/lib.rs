//! Offer-based routing for a fleet of automated vehicles.
//!
//! A fleet operator knows a target routing (flows and route times) and
//! promises each driver a mean travel time. The crate decides whether such a
//! promise can be honoured, builds per-driver assignment plans and daily
//! schedules, and analyses which drivers stay in the fleet when they weigh
//! fleet time against driving themselves.

pub mod feasibility;
pub mod format;
pub mod market;
pub mod measures;
pub mod network;
pub mod risk;
pub mod scenario;
pub mod scheduler;

pub use feasibility::{
    feasible, feasible_by_criterion, feasible_mixed, feasible_not_exceeding, two_rmax,
    AssignmentPlan, DriverOffer, FeasibilityError, MixedRouting, OfferProfile, Routing,
    SimplexMeasure,
};
pub use market::{
    dynamic_stages, full_market_offer, mixed_market_analysis, DiscountProfile, DriverRule,
    EquilibriumVerdict, MarketError, MarketOffer, Stage, VerdictKind,
};
pub use measures::{Atom, DiscreteMeasure, MeasureError};
pub use network::{DelayFunction, FlowVector, Network, NetworkError};
pub use risk::{optimal_rho, PenaltySpec, RiskError, RiskResult};
pub use scheduler::{
    birkhoff_decompose, build_schedule, BirkhoffDecomposition, MultiDaySchedule, ScheduleError,
};
