//! Netting, collateral thresholds and the three CVA frameworks.
//!
//! * [`forward_cva`] integrates expected exposures against PD increments.
//! * [`backward_cva`] discounts the netted cube backwards, risky where the
//!   value is owed to the surviving party, and reads CVA off as the gap
//!   between risk-free and risky values.
//! * [`aggregate_cva`] walks the credit paths and collects discounted
//!   exposures at the first default.

mod analysis;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub use analysis::{
    cds_delta, exercise_boundary_study, incremental_cva, market_greek, wrong_way_sweep, BoundaryPoint, CdsDelta,
    CreditSetup, IncrementalCva, MarketGreek, MarketInputs, SweepPoint,
};

use crate::credit::{propagate_matrix, CreditEntity, CreditScenarioSet, PDTermStructure, TransitionMatrix};
use crate::error::{invalid, CvaError, Result};
use crate::grid::TimeGrid;
use crate::market::{mean_se, MarketScenarioSet};
use crate::valuation::ValueCube;

/// Collateral threshold in money; infinite when uncollateralized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Threshold(pub f64);

impl Serialize for Threshold {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Threshold {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(x) => Ok(Threshold(x)),
            Raw::Text(t) if matches!(t.to_ascii_lowercase().as_str(), "inf" | "infinity" | "none") => {
                Ok(Threshold(f64::INFINITY))
            }
            Raw::Text(t) => Err(serde::de::Error::custom(format!("invalid threshold {t:?}"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CSATerms {
    /// Threshold per rating label; a missing rating is uncollateralized.
    #[serde(default)]
    pub rating_thresholds: BTreeMap<String, Threshold>,
    /// Counterparty rating at or below which trades terminate.
    #[serde(default)]
    pub ate_rating: Option<String>,
    #[serde(default)]
    pub mutual_put_dates: Vec<f64>,
    /// Terminations are not executed for values below this amount.
    #[serde(default)]
    pub execution_barrier: f64,
}

impl CSATerms {
    pub fn zero_threshold(ratings: &[String]) -> Self {
        Self {
            rating_thresholds: ratings.iter().map(|r| (r.clone(), Threshold(0.0))).collect(),
            ..Self::default()
        }
    }

    pub fn threshold(&self, rating: &str) -> f64 {
        self.rating_thresholds.get(rating).map_or(f64::INFINITY, |t| t.0)
    }

    /// `ratings` are the live labels, best first.
    pub fn validate(&self, ratings: &[String]) -> Result<()> {
        for (label, t) in &self.rating_thresholds {
            if !ratings.contains(label) {
                return Err(invalid(format!("CSA threshold for unknown rating {label}")));
            }
            if !(t.0 >= 0.0) {
                return Err(invalid(format!("CSA threshold for {label} must be >= 0")));
            }
        }
        let ordered: Vec<f64> = ratings.iter().map(|r| self.threshold(r)).collect();
        if ordered.windows(2).any(|w| w[1] > w[0]) {
            return Err(invalid("CSA thresholds must not increase as the rating worsens"));
        }
        if let Some(ate) = &self.ate_rating {
            if !ratings.contains(ate) {
                return Err(invalid(format!("unknown ATE rating {ate}")));
            }
        }
        if !(self.execution_barrier >= 0.0) {
            return Err(invalid("execution barrier must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NettingSet {
    pub id: String,
    pub counterparty: CreditEntity,
    pub self_entity: CreditEntity,
    pub deal_ids: Vec<String>,
    #[serde(default)]
    pub csa: CSATerms,
}

impl NettingSet {
    pub fn validate(&self) -> Result<()> {
        if self.deal_ids.is_empty() {
            return Err(invalid(format!("netting set {} has no deals", self.id)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CVAResult {
    pub cva: f64,
    pub dva: f64,
    pub total: f64,
    pub mc_standard_error: f64,
    pub dva_standard_error: f64,
    pub total_standard_error: f64,
    pub times: Vec<f64>,
    pub ee_profile: Vec<f64>,
    pub ene_profile: Vec<f64>,
}

impl CVAResult {
    fn from_paths(cva: &[f64], dva: &[f64], times: &[f64], profiles: (Vec<f64>, Vec<f64>)) -> Self {
        let (c, c_se) = mean_se(cva);
        let (d, d_se) = mean_se(dva);
        let diff: Vec<f64> = cva.iter().zip(dva).map(|(a, b)| a - b).collect();
        let (_, t_se) = mean_se(&diff);
        Self {
            cva: c,
            dva: d,
            total: c - d,
            mc_standard_error: c_se,
            dva_standard_error: d_se,
            total_standard_error: t_se,
            times: times.to_vec(),
            ee_profile: profiles.0,
            ene_profile: profiles.1,
        }
    }
}

/// Element-wise sum of the cubes of the set's deals.
pub fn net_values(cubes: &[ValueCube], set: &NettingSet) -> Result<ValueCube> {
    set.validate()?;
    let mut picked = Vec::with_capacity(set.deal_ids.len());
    for id in &set.deal_ids {
        let cube = cubes
            .iter()
            .find(|c| &c.id == id)
            .ok_or_else(|| invalid(format!("no value cube for deal {id}")))?;
        picked.push(cube);
    }
    ValueCube::sum(&set.id, &picked)
}

/// `max(0, min(H, flag · V))`, with `flag = +1` for a counterparty default
/// and `−1` for an own default.
#[inline]
pub fn exposure_at_default(net_value: f64, threshold: f64, default_flag: f64) -> f64 {
    (net_value * default_flag).min(threshold).max(0.0)
}

fn check_cube(cube: &ValueCube, market: &MarketScenarioSet) -> Result<()> {
    cube.validate()?;
    if cube.grid.hash() != market.grid.hash() {
        return Err(CvaError::GridMismatch(format!("cube {} and market scenarios", cube.id)));
    }
    if cube.n_paths != market.n_paths || cube.seed != market.seed {
        return Err(CvaError::ProvenanceMismatch(format!(
            "cube {} was not valued on these market scenarios",
            cube.id
        )));
    }
    Ok(())
}

/// Discounted expected positive and negative exposure per grid time.
pub fn exposure_profiles(cube: &ValueCube, market: &MarketScenarioSet) -> (Vec<f64>, Vec<f64>) {
    let n = cube.n_paths as f64;
    (0..cube.grid.len())
        .map(|i| {
            let (mut pos, mut neg) = (0.0, 0.0);
            for (p, v) in cube.row(i).iter().enumerate() {
                let d = market.discount_at(i, p);
                pos += d * v.max(0.0);
                neg += d * (-v).max(0.0);
            }
            (pos / n, neg / n)
        })
        .unzip()
}

/// Expected-exposure CVA and DVA, with PD increments over `(t_{i−1}, t_i]`
/// charged against the exposure at `t_i`.
pub fn forward_cva(
    net: &ValueCube,
    market: &MarketScenarioSet,
    cpty_pd: &PDTermStructure,
    own_pd: &PDTermStructure,
) -> Result<CVAResult> {
    check_cube(net, market)?;
    let times = net.grid.times();
    let dp = |pd: &PDTermStructure| -> Vec<f64> {
        let cum = pd.on_grid(times);
        (0..times.len())
            .map(|i| if i == 0 { 0.0 } else { cum[i] - cum[i - 1] })
            .collect()
    };
    let (dp_c, dp_o) = (dp(cpty_pd), dp(own_pd));
    let (lgd_c, lgd_o) = (1.0 - cpty_pd.recovery, 1.0 - own_pd.recovery);
    let (cva, dva): (Vec<f64>, Vec<f64>) = (0..net.n_paths)
        .map(|p| {
            let (mut c, mut d) = (0.0, 0.0);
            for i in 1..times.len() {
                let v = market.discount_at(i, p) * net.value(i, p);
                c += v.max(0.0) * dp_c[i];
                d += (-v).max(0.0) * dp_o[i];
            }
            (lgd_c * c, lgd_o * d)
        })
        .unzip();
    Ok(CVAResult::from_paths(&cva, &dva, times, exposure_profiles(net, market)))
}

/// Rating mixture of one party for the backward framework: live rating
/// labels, a PD curve per rating and the distribution over those ratings at
/// every grid time.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingMixture {
    pub ratings: Vec<String>,
    pub curves: Vec<PDTermStructure>,
    pub distribution: Vec<Vec<f64>>,
    pub recovery: f64,
}

impl RatingMixture {
    /// The party stays in its current rating with its own PD curve.
    pub fn single(entity: &CreditEntity, grid: &TimeGrid) -> Self {
        Self {
            ratings: vec![entity.current_rating.clone()],
            curves: vec![entity.pd_curve.clone()],
            distribution: vec![vec![1.0]; grid.len()],
            recovery: entity.recovery,
        }
    }

    /// Ratings migrate per `matrix` from the entity's current rating.
    /// `curves_by_rating` supplies the risky discounting of each live rating.
    pub fn from_matrix(
        entity: &CreditEntity,
        matrix: &TransitionMatrix,
        curves_by_rating: &BTreeMap<String, PDTermStructure>,
        grid: &TimeGrid,
    ) -> Result<Self> {
        let start = entity.validate(&matrix.ratings)?;
        let n_live = matrix.n_live();
        let ratings = matrix.ratings[..n_live].to_vec();
        let curves = ratings
            .iter()
            .map(|r| {
                curves_by_rating
                    .get(r)
                    .cloned()
                    .ok_or_else(|| invalid(format!("no spread curve for rating {r}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let prop = propagate_matrix(matrix, grid.horizon().ceil().max(1.0) as usize);
        let distribution = grid
            .times()
            .iter()
            .map(|&t| prop.distribution_at(start, t)[..n_live].to_vec())
            .collect();
        Ok(Self {
            ratings,
            curves,
            distribution,
            recovery: entity.recovery,
        })
    }

    fn validate(&self, nt: usize) -> Result<()> {
        if self.ratings.is_empty() || self.curves.len() != self.ratings.len() {
            return Err(invalid("a spread curve is required for every rating"));
        }
        if self.distribution.len() != nt || self.distribution.iter().any(|d| d.len() != self.ratings.len()) {
            return Err(invalid("rating distribution must cover every grid time and rating"));
        }
        Ok(())
    }

    /// `(weight, 1 − f)` per rating for the step ending at grid point `i`,
    /// with weights normalized over live ratings at `t_{i−1}`.
    fn step_losses(&self, times: &[f64], i: usize) -> Vec<(f64, f64)> {
        let lgd = 1.0 - self.recovery;
        let w = &self.distribution[i - 1];
        let total: f64 = w.iter().sum();
        self.curves
            .iter()
            .zip(w)
            .map(|(curve, &wk)| {
                let before = 1.0 - lgd * curve.pd_at(times[i - 1]);
                let after = 1.0 - lgd * curve.pd_at(times[i]);
                let weight = if total > 0.0 { wk / total } else { 0.0 };
                (weight, 1.0 - after / before)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BackwardConfig {
    /// Uses `max(W, Thr)` as the risky part instead of `min(W, Thr)`.
    #[serde(default)]
    pub literal_max: bool,
}

/// Backward risky discounting of the netted cube. Per path and step the
/// risky value `W = V − A_c + A_o` is split by rating threshold; the part
/// at risk loses `1 − f_k` with `f_k = (1 − L·PD_k(t_i)) / (1 − L·PD_k(t_{i−1}))`.
/// CVA and DVA are the time-zero adjustments `A_c` and `A_o`.
pub fn backward_cva(
    net: &ValueCube,
    set: &NettingSet,
    market: &MarketScenarioSet,
    cpty: &RatingMixture,
    own: &RatingMixture,
    config: &BackwardConfig,
) -> Result<CVAResult> {
    check_cube(net, market)?;
    let times = net.grid.times();
    let nt = times.len();
    cpty.validate(nt)?;
    own.validate(nt)?;
    let thr_c: Vec<f64> = cpty.ratings.iter().map(|r| set.csa.threshold(r)).collect();
    let thr_o: Vec<f64> = own.ratings.iter().map(|r| set.csa.threshold(r)).collect();
    let loss_c: Vec<Vec<(f64, f64)>> = (1..nt).map(|i| cpty.step_losses(times, i)).collect();
    let loss_o: Vec<Vec<(f64, f64)>> = (1..nt).map(|i| own.step_losses(times, i)).collect();
    let at_risk = |w: f64, thr: f64| {
        if config.literal_max {
            if thr.is_finite() {
                w.max(thr)
            } else {
                w
            }
        } else {
            w.min(thr)
        }
    };
    let (cva, dva): (Vec<f64>, Vec<f64>) = (0..net.n_paths)
        .into_par_iter()
        .map(|p| {
            let (mut a_c, mut a_o) = (0.0, 0.0);
            for i in (1..nt).rev() {
                let w = net.value(i, p) - a_c + a_o;
                let (pos, neg) = (w.max(0.0), (-w).max(0.0));
                let mut lost_c = 0.0;
                if pos > 0.0 {
                    for (k, &(weight, loss)) in loss_c[i - 1].iter().enumerate() {
                        lost_c += weight * loss * at_risk(pos, thr_c[k]);
                    }
                }
                let mut lost_o = 0.0;
                if neg > 0.0 {
                    for (k, &(weight, loss)) in loss_o[i - 1].iter().enumerate() {
                        lost_o += weight * loss * at_risk(neg, thr_o[k]);
                    }
                }
                let df = market.discount_at(i, p) / market.discount_at(i - 1, p);
                a_c = df * (a_c + lost_c);
                a_o = df * (a_o + lost_o);
            }
            (a_c, a_o)
        })
        .unzip();
    Ok(CVAResult::from_paths(&cva, &dva, times, exposure_profiles(net, market)))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefaultMode {
    /// Aggregation on a path stops at the first default of either party.
    #[default]
    FirstToDefault,
    /// Each party's default is collected as if the other could not default.
    Unilateral,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AggregateConfig {
    #[serde(default)]
    pub mode: DefaultMode,
}

/// Collects discounted exposures at default along the credit paths.
///
/// At each grid point a path first checks the ATE (counterparty rated at or
/// below the trigger, executed when `|V|` reaches the barrier), then a
/// mutual put (executed when the value owed to us exceeds the barrier), and
/// then defaults. Standard errors treat the credit paths of one market path
/// as a cluster.
pub fn aggregate_cva(
    net: &ValueCube,
    market: &MarketScenarioSet,
    credit: &CreditScenarioSet,
    set: &NettingSet,
    config: &AggregateConfig,
) -> Result<CVAResult> {
    check_cube(net, market)?;
    if credit.grid.hash() != net.grid.hash() {
        return Err(CvaError::GridMismatch(
            "credit scenarios and value cube use different grids".into(),
        ));
    }
    if credit.market_seed != market.seed || credit.n_market_paths != market.n_paths {
        return Err(CvaError::ProvenanceMismatch(
            "credit scenarios were built on other market scenarios".into(),
        ));
    }
    let live = &credit.ratings[..credit.ratings.len() - 1];
    set.csa.validate(live)?;
    let cp = credit
        .entity_index(&set.counterparty.name)
        .ok_or_else(|| invalid(format!("credit scenarios lack {}", set.counterparty.name)))?;
    let own = credit.entity_index(&set.self_entity.name);
    let times = net.grid.times();
    let nt = times.len();
    let thr: Vec<f64> = live.iter().map(|r| set.csa.threshold(r)).collect();
    let ate = set
        .csa
        .ate_rating
        .as_ref()
        .and_then(|r| live.iter().position(|x| x == r));
    let mut is_put = vec![false; nt];
    for &t in &set.csa.mutual_put_dates {
        is_put[net.grid.require_index(t)?] = true;
    }
    let barrier = set.csa.execution_barrier;
    let (lgd_c, lgd_o) = (1.0 - set.counterparty.recovery, 1.0 - set.self_entity.recovery);
    let default_idx = credit.default_index();
    let m = credit.oversample;

    let path = |c: usize| -> (f64, f64) {
        let mp = credit.market_path(c);
        let d_c = credit.default_step(cp, c);
        let d_o = own.and_then(|o| credit.default_step(o, c));
        let (mut cva, mut dva) = (0.0, 0.0);
        let (mut c_open, mut o_open) = (true, true);
        for i in 1..nt {
            if !c_open && !o_open {
                break;
            }
            let v = net.value(i, mp);
            if let Some(trigger) = ate {
                let r = credit.rating(cp, i, c);
                if r != default_idx && r >= trigger && v.abs() >= barrier {
                    break;
                }
            }
            if is_put[i] && v > barrier {
                break;
            }
            let c_now = c_open && d_c == Some(i);
            let o_now = o_open && d_o == Some(i);
            let df = market.discount_at(i, mp);
            if c_now {
                let r = credit.rating(cp, i - 1, c);
                cva += lgd_c * df * exposure_at_default(v, thr[r], 1.0);
                c_open = false;
            }
            if o_now {
                let r = credit.rating(own.expect("own defaults"), i - 1, c);
                dva += lgd_o * df * exposure_at_default(v, thr[r], -1.0);
                o_open = false;
            }
            if config.mode == DefaultMode::FirstToDefault && (c_now || o_now) {
                break;
            }
        }
        (cva, dva)
    };

    let clusters: Vec<(f64, f64)> = (0..credit.n_market_paths)
        .into_par_iter()
        .map(|mp| {
            let (mut c, mut d) = (0.0, 0.0);
            for k in 0..m {
                let (x, y) = path(mp * m + k);
                c += x;
                d += y;
            }
            (c / m as f64, d / m as f64)
        })
        .collect();
    let (cva, dva): (Vec<f64>, Vec<f64>) = clusters.into_iter().unzip();
    Ok(CVAResult::from_paths(&cva, &dva, times, exposure_profiles(net, market)))
}

#[cfg(test)]
mod tests;
