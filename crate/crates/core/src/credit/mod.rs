//! Rating dynamics, default curves, thresholds and credit scenarios.

pub mod calibrate;
pub mod entity;
pub mod matrix;
pub mod pd;
pub mod scenarios;
pub mod thresholds;

pub use calibrate::{risk_neutralize_matrix, FitDiagnostics, FitWeights, LmSettings, RiskNeutralFit};
pub use entity::{calibrate_entity, factor_model_for, CreditEntity};
pub use matrix::{mcnulty_levin_adjust, propagate_matrix, Propagation, TransitionMatrix};
pub use pd::{pd_from_flat_spread, spread_from_pd, PDTermStructure};
pub use scenarios::{generate_credit_scenarios, rating_before_default, remap_correlation, CreditScenarioSet};
pub use thresholds::{
    calibrate_thresholds, evolve_stochastic_threshold, fat_tail_convert, RatingThresholds, StochasticThresholdParams,
};
