//! Correlated rating and default paths.
//!
//! Every step's asset shock for entity `e` is `b_e·w + c_e·η`, where `w` are
//! the systematic draws stored with the market scenarios and `η` is the
//! entity's own idiosyncratic draw. The cumulative shock, re-scaled to unit
//! variance, is banded by the entity's thresholds. Default is absorbing.
//!
//! Credit path `c` rides on market path `c / oversample`, so every market
//! path carries `oversample` independent idiosyncratic credit paths.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::entity::CreditEntity;
use super::thresholds::RatingThresholds;
use crate::error::{invalid, CvaError, Result};
use crate::factor::FactorModel;
use crate::grid::TimeGrid;
use crate::market::MarketScenarioSet;
use crate::rng::{Domain, PathDraws};

const NO_DEFAULT: u32 = u32::MAX;
const LOADING_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreditScenarioSet {
    pub grid: TimeGrid,
    pub entities: Vec<String>,
    /// Rating labels, default last.
    pub ratings: Vec<String>,
    /// Credit paths.
    pub n_paths: usize,
    pub n_market_paths: usize,
    pub oversample: usize,
    pub seed: u64,
    pub market_seed: u64,
    pub factors: FactorModel,
    pub thresholds: Vec<RatingThresholds>,
    /// Rating index, `(e, i, c)` at `(e * grid_len + i) * n_paths + c`.
    pub rating: Vec<u8>,
    /// First default step per `(e, c)` at `e * n_paths + c`.
    pub default_step: Vec<u32>,
}

impl CreditScenarioSet {
    pub fn default_index(&self) -> usize {
        self.ratings.len() - 1
    }

    pub fn n_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn entity_index(&self, name: &str) -> Option<usize> {
        self.entities.iter().position(|e| e == name)
    }

    #[inline]
    pub fn rating(&self, e: usize, i: usize, c: usize) -> usize {
        self.rating[(e * self.grid.len() + i) * self.n_paths + c] as usize
    }

    #[inline]
    pub fn default_step(&self, e: usize, c: usize) -> Option<usize> {
        match self.default_step[e * self.n_paths + c] {
            NO_DEFAULT => None,
            s => Some(s as usize),
        }
    }

    #[inline]
    pub fn market_path(&self, c: usize) -> usize {
        c / self.oversample
    }

    /// Fraction of paths defaulted by grid point `i`.
    pub fn default_rate(&self, e: usize, i: usize) -> f64 {
        let n = (0..self.n_paths)
            .filter(|&c| self.default_step(e, c).is_some_and(|s| s <= i))
            .count();
        n as f64 / self.n_paths as f64
    }
}

fn check_inputs(
    n_entities: usize,
    thresholds: &[RatingThresholds],
    factors: &FactorModel,
    market: &MarketScenarioSet,
    oversample: usize,
) -> Result<()> {
    if oversample == 0 {
        return Err(invalid("oversample must be at least 1"));
    }
    factors.validate()?;
    if factors.credit.len() < n_entities {
        return Err(invalid(format!(
            "factor model has loadings for {} entities, {} required",
            factors.credit.len(),
            n_entities
        )));
    }
    if thresholds.len() != n_entities {
        return Err(invalid("one threshold set per entity is required"));
    }
    if factors.n_systematic != market.factors.n_systematic
        || factors.market.len() != market.factors.market.len()
        || factors.market.iter().zip(&market.factors.market).any(|(a, b)| {
            a.systematic
                .iter()
                .zip(&b.systematic)
                .any(|(x, y)| (x - y).abs() > LOADING_TOL)
        })
    {
        return Err(invalid(
            "market loadings differ from those the market scenarios were generated with",
        ));
    }
    let hash = market.grid.hash();
    for th in thresholds {
        if TimeGrid::from_times(th.times.clone())?.hash() != hash {
            return Err(CvaError::GridMismatch(format!(
                "thresholds of {} use a different grid",
                th.entity
            )));
        }
    }
    let ratings = &thresholds[0].ratings;
    if ratings.len() > u8::MAX as usize {
        return Err(invalid("too many ratings"));
    }
    if thresholds.iter().any(|t| &t.ratings != ratings) {
        return Err(invalid("all entities must share one rating scale"));
    }
    Ok(())
}

/// Simulates ratings and defaults for every entity on top of `market`.
pub fn generate_credit_scenarios(
    entities: &[CreditEntity],
    thresholds: &[RatingThresholds],
    factors: &FactorModel,
    market: &MarketScenarioSet,
    oversample: usize,
    seed: u64,
) -> Result<CreditScenarioSet> {
    if entities.is_empty() {
        return Err(invalid("at least one credit entity is required"));
    }
    check_inputs(entities.len(), thresholds, factors, market, oversample)?;
    for (e, th) in entities.iter().zip(thresholds) {
        if e.name != th.entity {
            return Err(invalid(format!(
                "thresholds for {} given in place of {}",
                th.entity, e.name
            )));
        }
    }
    let names = entities.iter().map(|e| e.name.clone()).collect();
    simulate(names, thresholds, factors, market, oversample, seed)
}

fn simulate(
    entities: Vec<String>,
    thresholds: &[RatingThresholds],
    factors: &FactorModel,
    market: &MarketScenarioSet,
    oversample: usize,
    seed: u64,
) -> Result<CreditScenarioSet> {
    let grid = market.grid.clone();
    let times = grid.times();
    let nt = times.len();
    let n_paths = market.n_paths * oversample;
    let n_ent = entities.len();
    let ratings = thresholds[0].ratings.clone();
    let default_idx = (ratings.len() - 1) as u8;
    let step_sd: Vec<f64> = (1..nt).map(|i| (times[i] - times[i - 1]).sqrt()).collect();
    let scale: Vec<f64> = times
        .iter()
        .map(|t| if *t > 0.0 { 1.0 / t.sqrt() } else { 0.0 })
        .collect();

    let mut rating = vec![0u8; n_ent * nt * n_paths];
    let mut default_step = vec![NO_DEFAULT; n_ent * n_paths];
    for (e, th) in thresholds.iter().enumerate() {
        let loading = &factors.credit[e];
        let columns: Vec<(Vec<u8>, u32)> = (0..n_paths)
            .into_par_iter()
            .map(|c| {
                let m = c / oversample;
                let mut draws = PathDraws::new(seed, Domain::CreditIdiosyncratic(e as u16), c as u64, 1);
                let mut col = vec![th.initial_rating as u8; nt];
                let mut dstep = NO_DEFAULT;
                let mut sum = 0.0;
                for i in 1..nt {
                    if dstep != NO_DEFAULT {
                        col[i] = default_idx;
                        continue;
                    }
                    let w = market.systematic(i, m);
                    let mut z: f64 = loading.systematic.iter().zip(w).map(|(b, x)| b * x).sum();
                    if loading.idiosyncratic != 0.0 {
                        z += loading.idiosyncratic * draws.normal(i - 1, 0);
                    }
                    sum += step_sd[i - 1] * z;
                    match th.classify(i, sum * scale[i]) {
                        Some(r) => col[i] = r as u8,
                        None => {
                            col[i] = default_idx;
                            dstep = i as u32;
                        }
                    }
                }
                (col, dstep)
            })
            .collect();
        for (c, (col, dstep)) in columns.into_iter().enumerate() {
            for (i, r) in col.into_iter().enumerate() {
                rating[(e * nt + i) * n_paths + c] = r;
            }
            default_step[e * n_paths + c] = dstep;
        }
    }
    Ok(CreditScenarioSet {
        grid,
        entities,
        ratings,
        n_paths,
        n_market_paths: market.n_paths,
        oversample,
        seed,
        market_seed: market.seed,
        factors: factors.clone(),
        thresholds: thresholds.to_vec(),
        rating,
        default_step,
    })
}

/// Rebuilds the credit paths under new loadings. The draws are regenerated
/// from the same seeds, so only the loadings change.
pub fn remap_correlation(
    credit: &CreditScenarioSet,
    new_factors: &FactorModel,
    market: &MarketScenarioSet,
) -> Result<CreditScenarioSet> {
    if market.grid.hash() != credit.grid.hash() {
        return Err(CvaError::GridMismatch(
            "market and credit scenarios use different grids".into(),
        ));
    }
    if market.seed != credit.market_seed || market.n_paths != credit.n_market_paths {
        return Err(CvaError::ProvenanceMismatch(
            "market scenarios differ from those the credit set was built on".into(),
        ));
    }
    check_inputs(
        credit.n_entities(),
        &credit.thresholds,
        new_factors,
        market,
        credit.oversample,
    )?;
    simulate(
        credit.entities.clone(),
        &credit.thresholds,
        new_factors,
        market,
        credit.oversample,
        credit.seed,
    )
}

/// Rating held at the grid point before the entity defaulted on path `c`.
pub fn rating_before_default(credit: &CreditScenarioSet, entity: usize, c: usize) -> Result<usize> {
    if entity >= credit.n_entities() || c >= credit.n_paths {
        return Err(invalid("entity or path out of range"));
    }
    let step = credit
        .default_step(entity, c)
        .ok_or_else(|| invalid(format!("{} does not default on path {c}", credit.entities[entity])))?;
    Ok(credit.rating(entity, step - 1, c))
}
