//! Path-wise valuation of portfolio instruments on the market scenarios.
//!
//! A cube holds, for every grid time and path, the value of all flows paid
//! at or after that time. Floating coupons fix at accrual start from the
//! path's discount bonds, `L = (1/P(s, e) − 1)/τ`.

mod instruments;
mod lsm;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use instruments::{collapse_cashflows, BermudanSwaption, Cashflow, CashflowInstrument, Deal, VanillaSwap};
pub use lsm::{value_bermudan_swaption, LsmConfig, LsmDiagnostics};

use crate::credit::PDTermStructure;
use crate::error::{invalid, CvaError, Result};
use crate::grid::TimeGrid;
use crate::market::MarketScenarioSet;

pub use crate::market::{shift_market_params, MarketBump};

const DATE_TOL: f64 = 1e-9;

/// Values per (time, path), time-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueCube {
    pub id: String,
    pub grid: TimeGrid,
    pub n_paths: usize,
    /// Seed of the market scenarios the cube was computed on.
    pub seed: u64,
    pub values: Vec<f64>,
    /// 1 where the path exercises, per (time, path).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exercise: Option<Vec<u8>>,
}

impl ValueCube {
    pub fn zeros(id: &str, grid: &TimeGrid, n_paths: usize, seed: u64) -> Self {
        Self {
            id: id.to_string(),
            grid: grid.clone(),
            n_paths,
            seed,
            values: vec![0.0; grid.len() * n_paths],
            exercise: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.grid.len() * self.n_paths;
        if self.values.len() != n || self.exercise.as_ref().is_some_and(|e| e.len() != n) {
            return Err(invalid(format!("cube {} has inconsistent dimensions", self.id)));
        }
        Ok(())
    }

    #[inline]
    pub fn value(&self, i: usize, p: usize) -> f64 {
        self.values[i * self.n_paths + p]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_paths..(i + 1) * self.n_paths]
    }

    pub fn mean_at(&self, i: usize) -> f64 {
        self.row(i).iter().sum::<f64>() / self.n_paths as f64
    }

    pub fn exercised_at(&self, i: usize, p: usize) -> bool {
        self.exercise.as_ref().is_some_and(|e| e[i * self.n_paths + p] != 0)
    }

    /// Checks that `other` lives on the same grid and paths.
    pub fn check_compatible(&self, other: &ValueCube) -> Result<()> {
        if self.grid.hash() != other.grid.hash() {
            return Err(CvaError::GridMismatch(format!("cubes {} and {}", self.id, other.id)));
        }
        if self.n_paths != other.n_paths || self.seed != other.seed {
            return Err(CvaError::ProvenanceMismatch(format!(
                "cubes {} and {} come from different scenarios",
                self.id, other.id
            )));
        }
        Ok(())
    }

    /// Path-wise sum of cubes.
    pub fn sum(id: &str, cubes: &[&ValueCube]) -> Result<ValueCube> {
        let first = cubes.first().ok_or_else(|| invalid("no cubes to sum"))?;
        let mut out = ValueCube::zeros(id, &first.grid, first.n_paths, first.seed);
        for c in cubes {
            first.check_compatible(c)?;
            for (o, v) in out.values.iter_mut().zip(&c.values) {
                *o += v;
            }
        }
        Ok(out)
    }
}

/// Risky discounting of a flow paid at `T`, seen from `t`:
/// `(1 − L·PD(T)) / (1 − L·PD(t))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreditDiscount {
    pub pd: PDTermStructure,
    pub lgd: f64,
}

impl CreditDiscount {
    pub fn flat_annual(rate: f64, recovery: f64, horizon: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(invalid("annual default rate must be in [0, 1)"));
        }
        let tenors: Vec<f64> = (1..=horizon.ceil().max(1.0) as usize).map(|k| k as f64).collect();
        let pds = tenors.iter().map(|t| 1.0 - (1.0 - rate).powf(*t)).collect();
        Ok(Self {
            pd: PDTermStructure::new("flat", tenors, pds, recovery)?,
            lgd: 1.0 - recovery,
        })
    }

    /// `1 − L·PD(t)`.
    pub fn factor(&self, t: f64) -> f64 {
        1.0 - self.lgd * self.pd.pd_at(t)
    }
}

#[derive(Debug, Clone, Copy)]
struct PricedFlow {
    flow: Cashflow,
    start_d: usize,
    end_d: usize,
    pay_d: usize,
    fix_idx: usize,
}

/// Bond-price coefficients `P(t_i, T_d | x) = A[i, d]·exp(−B[i, d]·x)` for
/// every grid time and flow date.
pub(crate) struct FlowPricer<'a> {
    market: &'a MarketScenarioSet,
    flows: Vec<PricedFlow>,
    n_dates: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    /// Risky discount factor per grid time and per flow date.
    credit: Option<(Vec<f64>, Vec<f64>)>,
}

impl<'a> FlowPricer<'a> {
    /// Flows are kept sorted by accrual start.
    pub(crate) fn new(
        instr: &CashflowInstrument,
        market: &'a MarketScenarioSet,
        credit: Option<&CreditDiscount>,
    ) -> Result<Self> {
        instr.validate()?;
        let grid = &market.grid;
        let horizon = grid.horizon();
        let mut sorted = instr.flows.clone();
        sorted.sort_by(|x, y| x.start().total_cmp(&y.start()));
        let mut dates: Vec<f64> = Vec::new();
        let mut date_index = |t: f64| -> usize {
            match dates.iter().position(|&d| (d - t).abs() <= DATE_TOL) {
                Some(k) => k,
                None => {
                    dates.push(t);
                    dates.len() - 1
                }
            }
        };
        let mut flows = Vec::with_capacity(sorted.len());
        for flow in sorted {
            if flow.pay() > horizon + DATE_TOL {
                return Err(CvaError::EventOutsideHorizon {
                    date: flow.pay(),
                    horizon,
                });
            }
            let (start_d, end_d, fix_idx) = match flow {
                Cashflow::Fixed { pay, .. } => {
                    let d = date_index(pay);
                    (d, d, 0)
                }
                Cashflow::Floating { start, end, .. } => {
                    let fix = grid
                        .index_of(start)
                        .ok_or_else(|| invalid(format!("{}: fixing date {start} is not on the grid", instr.id)))?;
                    (date_index(start), date_index(end), fix)
                }
            };
            flows.push(PricedFlow {
                flow,
                start_d,
                end_d,
                pay_d: date_index(flow.pay()),
                fix_idx,
            });
        }
        let nd = dates.len();
        let params = &market.params;
        let mut a = vec![1.0; grid.len() * nd];
        let mut b = vec![0.0; grid.len() * nd];
        for (i, &t) in grid.times().iter().enumerate() {
            for (d, &maturity) in dates.iter().enumerate() {
                if maturity > t {
                    a[i * nd + d] = params.bond_price(t, maturity, 0.0);
                    b[i * nd + d] = params.b(maturity - t);
                }
            }
        }
        let credit = credit.map(|c| {
            (
                grid.times().iter().map(|&t| c.factor(t)).collect(),
                dates.iter().map(|&t| c.factor(t)).collect(),
            )
        });
        Ok(Self {
            market,
            flows,
            n_dates: nd,
            a,
            b,
            credit,
        })
    }

    pub(crate) fn n_flows(&self) -> usize {
        self.flows.len()
    }

    pub(crate) fn start_of(&self, k: usize) -> f64 {
        self.flows[k].flow.start()
    }

    #[inline]
    fn bond(&self, i: usize, d: usize, x: f64) -> f64 {
        let k = i * self.n_dates + d;
        self.a[k] * (-self.b[k] * x).exp()
    }

    /// Value at `(i, p)` of each flow, zero once paid.
    pub(crate) fn flow_values(&self, i: usize, p: usize, out: &mut [f64]) {
        let t = self.market.grid.times()[i];
        let x = self.market.state_at(i, p);
        for (o, pf) in out.iter_mut().zip(&self.flows) {
            let pay = pf.flow.pay();
            if pay < t - DATE_TOL {
                *o = 0.0;
                continue;
            }
            let df_pay = self.bond(i, pf.pay_d, x);
            let mut v = match pf.flow {
                Cashflow::Fixed { amount, .. } => amount * df_pay,
                Cashflow::Floating {
                    start,
                    end,
                    notional,
                    spread,
                    ..
                } => {
                    let tau = end - start;
                    if t < start - DATE_TOL {
                        let growth = self.bond(i, pf.start_d, x) / self.bond(i, pf.end_d, x);
                        notional * (growth - 1.0 + tau * spread) * df_pay
                    } else {
                        let x_fix = self.market.state_at(pf.fix_idx, p);
                        let p_se = self.bond(pf.fix_idx, pf.end_d, x_fix);
                        notional * (1.0 / p_se - 1.0 + tau * spread) * df_pay
                    }
                }
            };
            if let Some((at_time, at_date)) = &self.credit {
                v *= at_date[pf.pay_d] / at_time[i];
            }
            *o = v;
        }
    }
}

/// Cube of a linear instrument: at every `(t, path)` the value of the flows
/// paid at or after `t`.
pub fn value_cashflow_instrument(instr: &CashflowInstrument, market: &MarketScenarioSet) -> Result<ValueCube> {
    let pricer = FlowPricer::new(instr, market, None)?;
    let n = market.n_paths;
    let rows: Vec<Vec<f64>> = (0..market.grid.len())
        .into_par_iter()
        .map(|i| {
            let mut buf = vec![0.0; pricer.n_flows()];
            (0..n)
                .map(|p| {
                    pricer.flow_values(i, p, &mut buf);
                    buf.iter().sum()
                })
                .collect()
        })
        .collect();
    Ok(ValueCube {
        id: instr.id.clone(),
        grid: market.grid.clone(),
        n_paths: n,
        seed: market.seed,
        values: rows.concat(),
        exercise: None,
    })
}

/// Values any deal: linear deals directly, Bermudans by least squares.
pub fn value_deal(deal: &Deal, market: &MarketScenarioSet, config: &LsmConfig) -> Result<ValueCube> {
    match deal {
        Deal::Bermudan(b) => value_bermudan_swaption(b, market, config).map(|(cube, _)| cube),
        _ => value_cashflow_instrument(&deal.linear_instrument().expect("linear deal"), market),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve::ZeroCurve;
    use crate::factor::FactorModel;
    use crate::grid::{build_time_grid, DensityRule};
    use crate::market::{generate_market_scenarios, mean_se, HullWhiteParams};
    use approx::assert_abs_diff_eq;

    fn market(rate: f64, vol: f64, n: usize, events: &[f64]) -> MarketScenarioSet {
        let params = HullWhiteParams::new(ZeroCurve::flat(rate), 0.05, vol).unwrap();
        let g = build_time_grid(5.0, events, &DensityRule::default()).unwrap();
        generate_market_scenarios(&params, &g, n, 21, &FactorModel::independent(0)).unwrap()
    }

    fn fixed(pay: f64, amount: f64) -> CashflowInstrument {
        CashflowInstrument {
            id: "f".into(),
            flows: vec![Cashflow::Fixed {
                start: pay,
                pay,
                amount,
            }],
        }
    }

    #[test]
    fn single_fixed_flow() {
        for (r, expect) in [(0.0, 100.0), (0.02, 98.01986733067553)] {
            let m = market(r, 0.0, 4, &[1.0]);
            let cube = value_cashflow_instrument(&fixed(1.0, 100.0), &m).unwrap();
            for p in 0..4 {
                assert_abs_diff_eq!(cube.value(0, p), expect, epsilon = 1e-10);
            }
            let i = m.grid.index_of(1.0).unwrap();
            assert_eq!(cube.value(i, 0), 100.0);
            assert_eq!(cube.value(i + 1, 0), 0.0);
        }
    }

    fn at_market_swap() -> VanillaSwap {
        let mut s = VanillaSwap {
            id: "s".into(),
            notional: 1e6,
            fixed_rate: 0.0,
            payer: true,
            start: 0.0,
            maturity: 5.0,
            fixed_period: 0.5,
            float_period: 0.25,
            float_spread: 0.0,
        };
        s.fixed_rate = s.par_rate(&ZeroCurve::flat(0.03));
        s
    }

    #[test]
    fn at_market_swap_is_worth_zero() {
        let s = at_market_swap();
        let instr = s.to_instrument();
        let m = market(0.03, 0.01, 4000, &instr.event_dates());
        let cube = value_cashflow_instrument(&instr, &m).unwrap();
        assert_abs_diff_eq!(cube.mean_at(0), 0.0, epsilon = 1e-6);

        // Realized discounted flows agree with the time-0 value.
        let mut realized = vec![0.0; m.n_paths];
        let pricer = FlowPricer::new(&instr, &m, None).unwrap();
        let mut buf = vec![0.0; pricer.n_flows()];
        for (i, &t) in m.grid.times().iter().enumerate() {
            for (p, r) in realized.iter_mut().enumerate() {
                pricer.flow_values(i, p, &mut buf);
                for (k, pf) in pricer.flows.iter().enumerate() {
                    if (pf.flow.pay() - t).abs() < 1e-9 {
                        *r += m.discount_at(i, p) * buf[k];
                    }
                }
            }
        }
        let (mean, se) = mean_se(&realized);
        assert!(mean.abs() < 3.0 * se, "{mean} ± {se}");
    }

    #[test]
    fn terminal_value_is_terminal_flow() {
        let s = at_market_swap();
        let instr = s.to_instrument();
        let m = market(0.03, 0.01, 50, &instr.event_dates());
        let cube = value_cashflow_instrument(&instr, &m).unwrap();
        let last = m.grid.len() - 1;
        let i4 = m.grid.index_of(4.75).unwrap();
        for p in 0..50 {
            let x = m.state_at(i4, p);
            let p_se = m.params.bond_price(4.75, 5.0, x);
            let float = 1e6 * (1.0 / p_se - 1.0);
            let fixed = -1e6 * s.fixed_rate * 0.5;
            assert_abs_diff_eq!(cube.value(last, p), float + fixed, epsilon = 1e-8);
        }
    }

    #[test]
    fn collapsed_portfolio_adds_up() {
        let mut deals = Vec::new();
        for k in 0..10 {
            let mut s = at_market_swap();
            s.id = format!("s{k}");
            s.payer = k % 3 != 0;
            s.notional = 1e5 * (k + 1) as f64;
            s.fixed_rate = 0.02 + 0.002 * k as f64;
            s.maturity = 2.0 + (k % 4) as f64;
            s.float_spread = 0.001 * (k % 2) as f64;
            deals.push(Deal::Swap(s));
        }
        let collapsed = collapse_cashflows("n", &deals).unwrap();
        let dates: Vec<f64> = deals.iter().flat_map(|d| d.tagged_dates()).map(|(t, _)| t).collect();
        let m = market(0.03, 0.01, 200, &dates);
        let total = value_cashflow_instrument(&collapsed, &m).unwrap();
        let parts: Vec<ValueCube> = deals
            .iter()
            .map(|d| value_deal(d, &m, &LsmConfig::default()).unwrap())
            .collect();
        let refs: Vec<&ValueCube> = parts.iter().collect();
        let sum = ValueCube::sum("n", &refs).unwrap();
        for k in 0..total.values.len() {
            let scale: f64 = parts.iter().map(|c| c.values[k].abs()).sum::<f64>().max(1.0);
            assert!((total.values[k] - sum.values[k]).abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn flow_beyond_horizon_rejected() {
        let m = market(0.03, 0.0, 2, &[]);
        assert!(matches!(
            value_cashflow_instrument(&fixed(6.0, 1.0), &m),
            Err(CvaError::EventOutsideHorizon { .. })
        ));
    }
}
