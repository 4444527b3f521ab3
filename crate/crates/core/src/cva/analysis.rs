//! Incremental CVA, sensitivities, wrong-way sweeps and the exercise
//! boundary study.

use serde::{Deserialize, Serialize};

use super::{aggregate_cva, forward_cva, net_values, AggregateConfig, CVAResult, NettingSet};
use crate::credit::{
    calibrate_entity, generate_credit_scenarios, remap_correlation, CreditEntity, CreditScenarioSet, PDTermStructure,
    RatingThresholds, TransitionMatrix,
};
use crate::error::{invalid, CvaError, Result};
use crate::factor::{FactorModel, Loading};
use crate::grid::TimeGrid;
use crate::market::{generate_market_scenarios, shift_market_params, HullWhiteParams, MarketBump, MarketScenarioSet};
use crate::valuation::{
    value_bermudan_swaption, value_deal, BermudanSwaption, CreditDiscount, Deal, LsmConfig, ValueCube,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncrementalCva {
    pub before: CVAResult,
    pub after: CVAResult,
    pub incremental_cva: f64,
    pub incremental_total: f64,
}

/// CVA change from adding `new` to the saved netted cubes of the set.
pub fn incremental_cva(
    saved: &[ValueCube],
    new: &ValueCube,
    set: &NettingSet,
    market: &MarketScenarioSet,
    credit: &CreditScenarioSet,
    config: &AggregateConfig,
) -> Result<IncrementalCva> {
    for cube in saved {
        cube.check_compatible(new)?;
    }
    let before_cube = if saved.is_empty() {
        ValueCube::zeros(&set.id, &new.grid, new.n_paths, new.seed)
    } else {
        ValueCube::sum(&set.id, &saved.iter().collect::<Vec<_>>())?
    };
    let after_cube = ValueCube::sum(&set.id, &[&before_cube, new])?;
    let before = aggregate_cva(&before_cube, market, credit, set, config)?;
    let after = aggregate_cva(&after_cube, market, credit, set, config)?;
    Ok(IncrementalCva {
        incremental_cva: after.cva - before.cva,
        incremental_total: after.total - before.total,
        before,
        after,
    })
}

/// Everything needed to rebuild the credit scenarios after a bump.
#[derive(Debug, Clone, PartialEq)]
pub struct CreditSetup {
    pub entities: Vec<CreditEntity>,
    pub matrix: TransitionMatrix,
    pub factors: FactorModel,
    pub oversample: usize,
    pub seed: u64,
}

impl CreditSetup {
    pub fn thresholds(&self, grid: &TimeGrid) -> Result<Vec<RatingThresholds>> {
        self.entities
            .iter()
            .map(|e| calibrate_entity(e, &self.matrix, grid))
            .collect()
    }

    pub fn generate(&self, market: &MarketScenarioSet) -> Result<CreditScenarioSet> {
        let thresholds = self.thresholds(&market.grid)?;
        generate_credit_scenarios(
            &self.entities,
            &thresholds,
            &self.factors,
            market,
            self.oversample,
            self.seed,
        )
    }

    fn with_bumped(&self, entity: usize, bump: f64) -> Result<Self> {
        let mut out = self.clone();
        let e = &mut out.entities[entity];
        e.pd_curve = e.pd_curve.spread_bumped(bump)?;
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdsDelta {
    pub entity: String,
    pub bump: f64,
    pub base: CVAResult,
    pub up: CVAResult,
    pub down: Option<CVAResult>,
    /// Change of total CVA per unit spread.
    pub delta: f64,
}

/// Spread sensitivity of one entity. Thresholds are recalibrated to the
/// bumped curve and the credit paths regenerated from the same seed; the
/// value cube is reused.
#[allow(clippy::too_many_arguments)]
pub fn cds_delta(
    net: &ValueCube,
    market: &MarketScenarioSet,
    setup: &CreditSetup,
    set: &NettingSet,
    entity: &str,
    bump: f64,
    central: bool,
    config: &AggregateConfig,
) -> Result<CdsDelta> {
    if !(bump.is_finite() && bump != 0.0) {
        return Err(invalid("spread bump must be finite and non-zero"));
    }
    let e = setup
        .entities
        .iter()
        .position(|x| x.name == entity)
        .ok_or_else(|| invalid(format!("unknown entity {entity}")))?;
    let run = |s: &CreditSetup| -> Result<CVAResult> { aggregate_cva(net, market, &s.generate(market)?, set, config) };
    let base = run(setup)?;
    let up = run(&setup.with_bumped(e, bump)?)?;
    let (down, delta) = if central {
        let down = run(&setup.with_bumped(e, -bump)?)?;
        let delta = (up.total - down.total) / (2.0 * bump);
        (Some(down), delta)
    } else {
        (None, (up.total - base.total) / bump)
    };
    Ok(CdsDelta {
        entity: entity.to_string(),
        bump,
        base,
        up,
        down,
        delta,
    })
}

/// Market scenario inputs, kept so bumped scenarios can be regenerated.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketInputs {
    pub params: HullWhiteParams,
    pub grid: TimeGrid,
    pub n_paths: usize,
    pub seed: u64,
    pub factors: FactorModel,
}

impl MarketInputs {
    pub fn generate(&self) -> Result<MarketScenarioSet> {
        generate_market_scenarios(&self.params, &self.grid, self.n_paths, self.seed, &self.factors)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketGreek {
    pub bump: MarketBump,
    pub base: CVAResult,
    pub bumped: CVAResult,
    pub delta_cva: f64,
    pub delta_total: f64,
}

fn netted_cube(deals: &[Deal], set: &NettingSet, market: &MarketScenarioSet, lsm: &LsmConfig) -> Result<ValueCube> {
    let cubes = set
        .deal_ids
        .iter()
        .map(|id| {
            let deal = deals
                .iter()
                .find(|d| d.id() == id)
                .ok_or_else(|| invalid(format!("netting set {} references unknown deal {id}", set.id)))?;
            value_deal(deal, market, lsm)
        })
        .collect::<Result<Vec<_>>>()?;
    net_values(&cubes, set)
}

/// CVA change under a market parameter bump. Both legs are fully revalued
/// on scenarios from the same seed; the credit paths are reused.
pub fn market_greek(
    deals: &[Deal],
    set: &NettingSet,
    inputs: &MarketInputs,
    credit: &CreditScenarioSet,
    bump: MarketBump,
    lsm: &LsmConfig,
    config: &AggregateConfig,
) -> Result<MarketGreek> {
    let run = |params: &HullWhiteParams| -> Result<CVAResult> {
        let market = MarketInputs {
            params: params.clone(),
            ..inputs.clone()
        }
        .generate()?;
        let net = netted_cube(deals, set, &market, lsm)?;
        aggregate_cva(&net, &market, credit, set, config)
    };
    let base = run(&inputs.params)?;
    let bumped = run(&shift_market_params(&inputs.params, bump)?)?;
    Ok(MarketGreek {
        bump,
        delta_cva: bumped.cva - base.cva,
        delta_total: bumped.total - base.total,
        base,
        bumped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub correlation: f64,
    pub result: Option<CVAResult>,
    /// Counterparty default frequency at the horizon.
    pub counterparty_default_rate: Option<f64>,
    pub diagnostic: Option<String>,
}

/// Recomputes CVA with the counterparty's credit driver correlated to the
/// short rate by each of `correlations`. Infeasible points are reported
/// and skipped.
pub fn wrong_way_sweep(
    net: &ValueCube,
    market: &MarketScenarioSet,
    credit: &CreditScenarioSet,
    set: &NettingSet,
    correlations: &[f64],
    config: &AggregateConfig,
) -> Result<Vec<SweepPoint>> {
    let e = credit
        .entity_index(&set.counterparty.name)
        .ok_or_else(|| invalid(format!("credit scenarios lack {}", set.counterparty.name)))?;
    let rate_row = &credit.factors.market[0].systematic;
    let norm2: f64 = rate_row.iter().map(|b| b * b).sum();
    if norm2 == 0.0 {
        return Err(invalid("the short rate has no systematic loading"));
    }
    let last = credit.grid.len() - 1;
    correlations
        .iter()
        .map(|&rho| {
            let skipped = |msg: String| SweepPoint {
                correlation: rho,
                result: None,
                counterparty_default_rate: None,
                diagnostic: Some(msg),
            };
            if !(rho.abs() <= 1.0) {
                return Ok(skipped(format!("correlation {rho} outside [-1, 1]")));
            }
            let row: Vec<f64> = rate_row.iter().map(|b| rho * b / norm2).collect();
            let loading = match Loading::from_systematic(row) {
                Ok(l) => l,
                Err(err) => return Ok(skipped(format!("correlation {rho} not attainable: {err}"))),
            };
            let mut factors = credit.factors.clone();
            factors.credit[e] = loading;
            let remapped = remap_correlation(credit, &factors, market)?;
            let result = aggregate_cva(net, market, &remapped, set, config)?;
            Ok(SweepPoint {
                correlation: rho,
                counterparty_default_rate: Some(remapped.default_rate(e, last)),
                result: Some(result),
                diagnostic: None,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPoint {
    pub default_rate: f64,
    /// Fixed rate at which immediate exercise becomes optimal, if bracketed.
    pub boundary: Option<f64>,
    pub cva_blind: f64,
    pub cva_aware: f64,
    pub cva_standard_error: f64,
    /// `|aware − blind| / blind`.
    pub relative_impact: f64,
}

const BOUNDARY_BRACKET: f64 = 0.1;
const BISECTION_STEPS: usize = 30;

/// For each annual counterparty default rate, locates the exercise boundary
/// at time zero and compares CVA under credit-blind and credit-aware
/// exercise.
pub fn exercise_boundary_study(
    deal: &BermudanSwaption,
    market: &MarketScenarioSet,
    default_rates: &[f64],
    recovery: f64,
    lsm: &LsmConfig,
) -> Result<Vec<BoundaryPoint>> {
    deal.validate()?;
    let horizon = market.grid.horizon();
    let mut study = deal.clone();
    if study.exercise_dates[0] > 0.0 {
        study.exercise_dates.insert(0, 0.0);
    }
    let par = deal.underlying.par_rate(&market.params.curve);
    let riskless = PDTermStructure::riskless("self", 0.0);
    let (blind, _) = value_bermudan_swaption(deal, market, lsm)?;

    default_rates
        .iter()
        .map(|&rate| {
            let credit = CreditDiscount::flat_annual(rate, recovery, horizon)?;
            let aware_cfg = LsmConfig {
                exercise_credit: Some(credit.clone()),
                ..lsm.clone()
            };
            let exercises_now = |k: f64| -> Result<bool> {
                let mut d = study.clone();
                d.underlying.fixed_rate = k;
                let (_, diag) = value_bermudan_swaption(&d, market, &aware_cfg)?;
                Ok(diag.exercise_counts[0] == market.n_paths)
            };
            let (lo, hi) = (par - BOUNDARY_BRACKET, par + BOUNDARY_BRACKET);
            // Receivers exercise above the boundary, payers below it.
            let high_side = !deal.payer();
            let boundary = if exercises_now(lo)? != high_side && exercises_now(hi)? == high_side {
                let (mut a, mut b) = (lo, hi);
                for _ in 0..BISECTION_STEPS {
                    let mid = 0.5 * (a + b);
                    if exercises_now(mid)? == high_side {
                        b = mid;
                    } else {
                        a = mid;
                    }
                }
                Some(0.5 * (a + b))
            } else {
                None
            };
            let (aware, _) = value_bermudan_swaption(deal, market, &aware_cfg)?;
            let cpty = PDTermStructure {
                name: "counterparty".into(),
                ..credit.pd.clone()
            };
            let r_blind = forward_cva(&blind, market, &cpty, &riskless)?;
            let r_aware = forward_cva(&aware, market, &cpty, &riskless)?;
            let relative_impact = if r_blind.cva > 0.0 {
                (r_aware.cva - r_blind.cva).abs() / r_blind.cva
            } else {
                0.0
            };
            if !relative_impact.is_finite() {
                return Err(CvaError::Numerical("CVA impact is not finite".into()));
            }
            Ok(BoundaryPoint {
                default_rate: rate,
                boundary,
                cva_blind: r_blind.cva,
                cva_aware: r_aware.cva,
                cva_standard_error: r_blind.mc_standard_error,
                relative_impact,
            })
        })
        .collect()
}
