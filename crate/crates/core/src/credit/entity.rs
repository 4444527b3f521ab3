use serde::{Deserialize, Serialize};

use super::matrix::{propagate_matrix, TransitionMatrix};
use super::pd::PDTermStructure;
use super::thresholds::{calibrate_thresholds, RatingThresholds};
use crate::dist::ReturnDistribution;
use crate::error::{invalid, Result};
use crate::factor::{FactorModel, Loading};
use crate::grid::TimeGrid;

/// A named counterparty (or the bank itself) with its credit inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreditEntity {
    pub name: String,
    pub current_rating: String,
    pub pd_curve: PDTermStructure,
    pub recovery: f64,
    /// Systematic factor loadings of the entity's asset return.
    pub credit_loadings: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fat_tail_df: Option<f64>,
}

impl CreditEntity {
    pub fn validate(&self, ratings: &[String]) -> Result<usize> {
        if !(0.0..1.0).contains(&self.recovery) {
            return Err(invalid(format!("{}: recovery must be in [0, 1)", self.name)));
        }
        self.pd_curve.validate()?;
        if let Some(df) = self.fat_tail_df {
            if !(df > 0.0) {
                return Err(invalid(format!("{}: fat-tail df must be positive", self.name)));
            }
        }
        let idx = ratings
            .iter()
            .position(|r| r == &self.current_rating)
            .ok_or_else(|| invalid(format!("{}: unknown rating {}", self.name, self.current_rating)))?;
        if idx + 1 == ratings.len() {
            return Err(invalid(format!("{}: current rating cannot be default", self.name)));
        }
        Ok(idx)
    }

    pub fn distribution(&self) -> ReturnDistribution {
        ReturnDistribution::from_fat_tail(self.fat_tail_df)
    }

    pub fn loss_given_default(&self) -> f64 {
        1.0 - self.recovery
    }
}

/// Factor model whose credit rows are the entities' loadings, with the
/// short rate as the first systematic factor.
pub fn factor_model_for(entities: &[CreditEntity]) -> Result<FactorModel> {
    let n_sys = entities
        .iter()
        .map(|e| e.credit_loadings.len())
        .max()
        .unwrap_or(0)
        .max(1);
    let mut market = vec![0.0; n_sys];
    market[0] = 1.0;
    let credit = entities
        .iter()
        .map(|e| {
            let mut row = e.credit_loadings.clone();
            row.resize(n_sys, 0.0);
            Loading::from_systematic(row).map_err(|err| invalid(format!("{}: {err}", e.name)))
        })
        .collect::<Result<Vec<_>>>()?;
    FactorModel::new(n_sys, vec![Loading::from_systematic(market)?], credit)
}

/// Propagates `matrix` from the entity's rating to every grid time and
/// calibrates its thresholds.
pub fn calibrate_entity(entity: &CreditEntity, matrix: &TransitionMatrix, grid: &TimeGrid) -> Result<RatingThresholds> {
    let start = entity.validate(&matrix.ratings)?;
    let horizon = grid.horizon().ceil() as usize;
    let prop = propagate_matrix(matrix, horizon.max(1));
    let dist: Vec<Vec<f64>> = grid.times().iter().map(|&t| prop.distribution_at(start, t)).collect();
    calibrate_thresholds(entity, &matrix.ratings, &dist, grid)
}
