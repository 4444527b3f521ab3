use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::curve::ZeroCurve;
use crate::error::{invalid, Result};
use crate::grid::SourceTag;

/// Dates closer than this are treated as the same date when collapsing.
const DATE_TOL: f64 = 1e-9;

/// One signed cashflow. Positive amounts are received.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Cashflow {
    Fixed {
        /// Accrual start; governs which flows a swaption exercise enters.
        start: f64,
        pay: f64,
        amount: f64,
    },
    /// Pays `notional · (τ·L + τ·spread)` at `pay`, with `L` the simple rate
    /// over `[start, end]` fixed at `start`.
    Floating {
        start: f64,
        end: f64,
        pay: f64,
        notional: f64,
        #[serde(default)]
        spread: f64,
    },
}

impl Cashflow {
    pub fn start(&self) -> f64 {
        match *self {
            Cashflow::Fixed { start, .. } | Cashflow::Floating { start, .. } => start,
        }
    }

    pub fn pay(&self) -> f64 {
        match *self {
            Cashflow::Fixed { pay, .. } | Cashflow::Floating { pay, .. } => pay,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Cashflow::Fixed { start, pay, amount } => {
                if !(start >= 0.0 && pay >= start && amount.is_finite()) {
                    return Err(invalid(format!("invalid fixed flow paying {pay}")));
                }
            }
            Cashflow::Floating {
                start,
                end,
                pay,
                notional,
                spread,
            } => {
                if !(start >= 0.0 && end > start && pay >= start && notional.is_finite() && spread.is_finite()) {
                    return Err(invalid(format!("invalid floating flow over [{start}, {end}]")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CashflowInstrument {
    pub id: String,
    pub flows: Vec<Cashflow>,
}

impl CashflowInstrument {
    pub fn validate(&self) -> Result<()> {
        self.flows.iter().try_for_each(Cashflow::validate)
    }

    pub fn maturity(&self) -> f64 {
        self.flows.iter().map(Cashflow::pay).fold(0.0, f64::max)
    }

    /// Every date the grid must contain to value the instrument exactly.
    pub fn event_dates(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for f in &self.flows {
            match *f {
                Cashflow::Fixed { pay, .. } => out.push(pay),
                Cashflow::Floating { start, pay, .. } => {
                    out.push(start);
                    out.push(pay);
                }
            }
        }
        out
    }

    /// Flows whose accrual starts on or after `t`.
    pub fn from_start(&self, t: f64) -> Self {
        Self {
            id: self.id.clone(),
            flows: self
                .flows
                .iter()
                .filter(|f| f.start() >= t - DATE_TOL)
                .copied()
                .collect(),
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let flows = self
            .flows
            .iter()
            .map(|f| match *f {
                Cashflow::Fixed { start, pay, amount } => Cashflow::Fixed {
                    start,
                    pay,
                    amount: amount * factor,
                },
                Cashflow::Floating {
                    start,
                    end,
                    pay,
                    notional,
                    spread,
                } => Cashflow::Floating {
                    start,
                    end,
                    pay,
                    notional: notional * factor,
                    spread,
                },
            })
            .collect();
        Self {
            id: self.id.clone(),
            flows,
        }
    }
}

/// Fixed-for-floating swap on regular schedules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VanillaSwap {
    pub id: String,
    pub notional: f64,
    pub fixed_rate: f64,
    /// Pays fixed and receives floating.
    pub payer: bool,
    #[serde(default)]
    pub start: f64,
    pub maturity: f64,
    #[serde(default = "half_year")]
    pub fixed_period: f64,
    #[serde(default = "quarter_year")]
    pub float_period: f64,
    #[serde(default)]
    pub float_spread: f64,
}

fn half_year() -> f64 {
    0.5
}

fn quarter_year() -> f64 {
    0.25
}

fn schedule(start: f64, end: f64, period: f64) -> Vec<f64> {
    let n = ((end - start) / period - 1e-9).ceil().max(1.0) as usize;
    let mut out: Vec<f64> = (0..n).map(|k| start + k as f64 * period).collect();
    out.push(end);
    out
}

impl VanillaSwap {
    pub fn validate(&self) -> Result<()> {
        if !(self.start >= 0.0 && self.maturity > self.start) {
            return Err(invalid(format!("{}: maturity must follow start", self.id)));
        }
        if !(self.fixed_period > 0.0 && self.float_period > 0.0) {
            return Err(invalid(format!("{}: periods must be positive", self.id)));
        }
        if !self.notional.is_finite() || !self.fixed_rate.is_finite() {
            return Err(invalid(format!("{}: notional and rate must be finite", self.id)));
        }
        Ok(())
    }

    pub fn to_instrument(&self) -> CashflowInstrument {
        let sign = if self.payer { 1.0 } else { -1.0 };
        let mut flows = Vec::new();
        for w in schedule(self.start, self.maturity, self.fixed_period).windows(2) {
            flows.push(Cashflow::Fixed {
                start: w[0],
                pay: w[1],
                amount: -sign * self.notional * self.fixed_rate * (w[1] - w[0]),
            });
        }
        for w in schedule(self.start, self.maturity, self.float_period).windows(2) {
            flows.push(Cashflow::Floating {
                start: w[0],
                end: w[1],
                pay: w[1],
                notional: sign * self.notional,
                spread: self.float_spread,
            });
        }
        CashflowInstrument {
            id: self.id.clone(),
            flows,
        }
    }

    /// Fixed rate that values the swap at zero on `curve`.
    pub fn par_rate(&self, curve: &ZeroCurve) -> f64 {
        let annuity: f64 = schedule(self.start, self.maturity, self.fixed_period)
            .windows(2)
            .map(|w| (w[1] - w[0]) * curve.discount(w[1]))
            .sum();
        let spread_pv: f64 = schedule(self.start, self.maturity, self.float_period)
            .windows(2)
            .map(|w| (w[1] - w[0]) * curve.discount(w[1]) * self.float_spread)
            .sum();
        (curve.discount(self.start) - curve.discount(self.maturity) + spread_pv) / annuity
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BermudanSwaption {
    pub id: String,
    pub exercise_dates: Vec<f64>,
    /// Swap entered on exercise, from the holder's side. Exercising at `t`
    /// enters the flows accruing from `t` on.
    pub underlying: VanillaSwap,
    #[serde(default = "default_degree")]
    pub basis_degree: usize,
}

fn default_degree() -> usize {
    2
}

impl BermudanSwaption {
    pub fn validate(&self) -> Result<()> {
        self.underlying.validate()?;
        if self.exercise_dates.is_empty() {
            return Err(invalid(format!("{}: no exercise dates", self.id)));
        }
        if self.exercise_dates.windows(2).any(|w| w[1] <= w[0])
            || self
                .exercise_dates
                .iter()
                .any(|&t| t < 0.0 || t >= self.underlying.maturity)
        {
            return Err(invalid(format!(
                "{}: exercise dates must be increasing and before maturity",
                self.id
            )));
        }
        Ok(())
    }

    pub fn payer(&self) -> bool {
        self.underlying.payer
    }
}

/// A deal as read from a portfolio file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Deal {
    Swap(VanillaSwap),
    Cashflows(CashflowInstrument),
    Bermudan(BermudanSwaption),
}

impl Deal {
    pub fn id(&self) -> &str {
        match self {
            Deal::Swap(s) => &s.id,
            Deal::Cashflows(c) => &c.id,
            Deal::Bermudan(b) => &b.id,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Deal::Swap(s) => s.validate(),
            Deal::Cashflows(c) => c.validate(),
            Deal::Bermudan(b) => b.validate(),
        }
    }

    pub fn is_linear(&self) -> bool {
        !matches!(self, Deal::Bermudan(_))
    }

    pub fn linear_instrument(&self) -> Option<CashflowInstrument> {
        match self {
            Deal::Swap(s) => Some(s.to_instrument()),
            Deal::Cashflows(c) => Some(c.clone()),
            Deal::Bermudan(_) => None,
        }
    }

    pub fn maturity(&self) -> f64 {
        match self {
            Deal::Swap(s) => s.maturity,
            Deal::Cashflows(c) => c.maturity(),
            Deal::Bermudan(b) => b.underlying.maturity,
        }
    }

    /// Grid dates required by the deal, with their source.
    pub fn tagged_dates(&self) -> Vec<(f64, SourceTag)> {
        match self {
            Deal::Swap(s) => tag(s.to_instrument().event_dates(), SourceTag::Cashflow),
            Deal::Cashflows(c) => tag(c.event_dates(), SourceTag::Cashflow),
            Deal::Bermudan(b) => {
                let mut out = tag(b.underlying.to_instrument().event_dates(), SourceTag::Cashflow);
                out.extend(tag(b.exercise_dates.clone(), SourceTag::Exercise));
                out
            }
        }
    }
}

fn tag(dates: Vec<f64>, t: SourceTag) -> Vec<(f64, SourceTag)> {
    dates.into_iter().map(|d| (d, t)).collect()
}

fn date_key(t: f64) -> i64 {
    (t / DATE_TOL).round() as i64
}

/// Nets linear deals into one instrument: fixed amounts summed per payment
/// date, floating notionals summed per accrual period, spreads turned into
/// fixed amounts.
pub fn collapse_cashflows(id: &str, deals: &[Deal]) -> Result<CashflowInstrument> {
    let mut fixed: BTreeMap<i64, (f64, f64)> = BTreeMap::new();
    let mut floating: BTreeMap<(i64, i64, i64), (f64, f64, f64, f64)> = BTreeMap::new();
    for deal in deals {
        deal.validate()?;
        let instr = deal
            .linear_instrument()
            .ok_or_else(|| invalid(format!("{} has optionality and cannot be collapsed", deal.id())))?;
        for f in &instr.flows {
            match *f {
                Cashflow::Fixed { pay, amount, .. } => {
                    fixed.entry(date_key(pay)).or_insert((pay, 0.0)).1 += amount;
                }
                Cashflow::Floating {
                    start,
                    end,
                    pay,
                    notional,
                    spread,
                } => {
                    floating
                        .entry((date_key(start), date_key(end), date_key(pay)))
                        .or_insert((start, end, pay, 0.0))
                        .3 += notional;
                    if spread != 0.0 {
                        fixed.entry(date_key(pay)).or_insert((pay, 0.0)).1 += notional * spread * (end - start);
                    }
                }
            }
        }
    }
    let mut flows: Vec<Cashflow> = fixed
        .into_values()
        .map(|(pay, amount)| Cashflow::Fixed {
            start: pay,
            pay,
            amount,
        })
        .collect();
    flows.extend(
        floating
            .into_values()
            .map(|(start, end, pay, notional)| Cashflow::Floating {
                start,
                end,
                pay,
                notional,
                spread: 0.0,
            }),
    );
    Ok(CashflowInstrument {
        id: id.to_string(),
        flows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn swap(id: &str, payer: bool, rate: f64) -> VanillaSwap {
        VanillaSwap {
            id: id.into(),
            notional: 1e6,
            fixed_rate: rate,
            payer,
            start: 0.0,
            maturity: 5.0,
            fixed_period: 0.5,
            float_period: 0.25,
            float_spread: 0.0,
        }
    }

    #[test]
    fn schedule_ends_on_maturity() {
        assert_eq!(schedule(0.0, 1.0, 0.25), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(schedule(0.0, 1.1, 0.5), vec![0.0, 0.5, 1.0, 1.1]);
    }

    #[test]
    fn offsetting_swaps_collapse_to_zero() {
        let c = collapse_cashflows(
            "n",
            &[Deal::Swap(swap("a", true, 0.03)), Deal::Swap(swap("b", false, 0.03))],
        )
        .unwrap();
        assert!(c.flows.iter().all(|f| match *f {
            Cashflow::Fixed { amount, .. } => amount == 0.0,
            Cashflow::Floating { notional, .. } => notional == 0.0,
        }));
    }

    #[test]
    fn identical_swaps_scale() {
        let deals: Vec<Deal> = (0..1000)
            .map(|k| Deal::Swap(swap(&k.to_string(), true, 0.03)))
            .collect();
        let c = collapse_cashflows("n", &deals).unwrap();
        let one = collapse_cashflows("n", &deals[..1]).unwrap();
        assert_eq!(c.flows.len(), one.flows.len());
        for (a, b) in c.flows.iter().zip(&one.flows) {
            match (a, b) {
                (Cashflow::Fixed { amount: x, .. }, Cashflow::Fixed { amount: y, .. }) => {
                    assert!((x - 1000.0 * y).abs() <= 1e-9 * y.abs())
                }
                (Cashflow::Floating { notional: x, .. }, Cashflow::Floating { notional: y, .. }) => {
                    assert!((x - 1000.0 * y).abs() <= 1e-9 * y.abs())
                }
                _ => panic!("flow kinds differ"),
            }
        }
    }

    #[test]
    fn optioned_deal_rejected() {
        let b = BermudanSwaption {
            id: "b".into(),
            exercise_dates: vec![1.0],
            underlying: swap("u", true, 0.03),
            basis_degree: 2,
        };
        assert!(collapse_cashflows("n", &[Deal::Bermudan(b)]).is_err());
    }

    #[test]
    fn par_rate_matches_flat_curve_annuity() {
        let s = swap("a", true, 0.0);
        let curve = ZeroCurve::flat(0.03);
        let k = s.par_rate(&curve);
        assert!(k > 0.029 && k < 0.0305);
    }

    #[test]
    fn deal_json_round_trip() {
        let d = Deal::Swap(swap("a", true, 0.03));
        let text = serde_json::to_string(&d).unwrap();
        assert!(text.contains("\"type\":\"swap\""));
        assert_eq!(serde_json::from_str::<Deal>(&text).unwrap(), d);
    }
}
