//! Least-squares Monte Carlo for Bermudan swaptions.
//!
//! Regressions use standardized monomials of total degree up to the
//! configured degree in the short rate and the underlying value (plus an
//! optional extra state variable). An ill-conditioned or undersampled
//! regression drops to a lower degree and is reported.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{BermudanSwaption, CreditDiscount, FlowPricer, ValueCube};
use crate::error::{invalid, Result};
use crate::market::{mean_se, MarketScenarioSet};

const COND_LIMIT: f64 = 1e-12;
const DATE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LsmConfig {
    /// Overrides the deal's basis degree.
    #[serde(default)]
    pub degree: Option<usize>,
    /// Additional regressor per (time, market path), time-major.
    #[serde(skip)]
    pub extra_regressor: Option<Vec<f64>>,
    /// Risky discounting applied to exercise decisions. `None` makes
    /// decisions credit-blind.
    #[serde(default)]
    pub exercise_credit: Option<CreditDiscount>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LsmDiagnostics {
    /// In-sample time-zero value and its standard error.
    pub value: f64,
    pub standard_error: f64,
    /// Paths exercising at each exercise date.
    pub exercise_counts: Vec<usize>,
    /// `(time, degree used)` for every regression run below the requested
    /// degree.
    pub reduced_degree: Vec<(f64, usize)>,
}

fn monomials(n_vars: usize, degree: usize) -> Vec<Vec<u32>> {
    let mut out = vec![vec![0u32; n_vars]];
    for d in 1..=degree as u32 {
        let mut level = Vec::new();
        fn rec(prefix: &mut Vec<u32>, left: u32, n: usize, out: &mut Vec<Vec<u32>>) {
            if prefix.len() == n - 1 {
                prefix.push(left);
                out.push(prefix.clone());
                prefix.pop();
                return;
            }
            for k in (0..=left).rev() {
                prefix.push(k);
                rec(prefix, left - k, n, out);
                prefix.pop();
            }
        }
        if n_vars > 0 {
            rec(&mut Vec::new(), d, n_vars, &mut level);
        }
        out.extend(level);
    }
    out
}

pub(crate) fn basis_size(n_vars: usize, degree: usize) -> usize {
    monomials(n_vars, degree).len()
}

/// Polynomial least-squares fit on standardized variables.
pub(crate) struct Fit {
    center: Vec<f64>,
    scale: Vec<f64>,
    active: Vec<usize>,
    terms: Vec<Vec<u32>>,
    coef: Vec<f64>,
    pub(crate) degree: usize,
}

impl Fit {
    /// `vars[k][s]` is variable `k` for sample `s`.
    pub(crate) fn new(vars: &[Vec<f64>], y: &[f64], degree: usize) -> Fit {
        let n = y.len();
        let mut center = Vec::new();
        let mut scale = Vec::new();
        let mut active = Vec::new();
        for (k, v) in vars.iter().enumerate() {
            let (m, _) = if n > 0 { mean_se(v) } else { (0.0, 0.0) };
            let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n.max(1) as f64).sqrt();
            if sd > 1e-12 * (1.0 + m.abs()) {
                active.push(k);
                center.push(m);
                scale.push(sd);
            }
        }
        let mut d = degree;
        loop {
            let terms = monomials(active.len(), d);
            if d == 0 || n >= terms.len() {
                let x = DMatrix::from_fn(n, terms.len(), |s, j| {
                    Self::term(
                        &terms[j],
                        active
                            .iter()
                            .enumerate()
                            .map(|(a, &k)| (vars[k][s] - center[a]) / scale[a]),
                    )
                });
                let gram = x.transpose() * &x;
                let eig = gram.clone().symmetric_eigenvalues();
                let (lo, hi) = eig
                    .iter()
                    .fold((f64::INFINITY, 0.0f64), |(l, h), &e| (l.min(e), h.max(e)));
                if d == 0 || (hi > 0.0 && lo / hi > COND_LIMIT) {
                    let rhs = x.transpose() * DVector::from_column_slice(y);
                    let coef = match gram.cholesky() {
                        Some(ch) => ch.solve(&rhs).iter().copied().collect(),
                        None => vec![if n > 0 { y.iter().sum::<f64>() / n as f64 } else { 0.0 }],
                    };
                    let terms = if coef.len() == terms.len() {
                        terms
                    } else {
                        vec![vec![0; active.len()]]
                    };
                    return Fit {
                        center,
                        scale,
                        active,
                        terms,
                        coef,
                        degree: d,
                    };
                }
            }
            d -= 1;
        }
    }

    fn term(powers: &[u32], z: impl Iterator<Item = f64>) -> f64 {
        z.zip(powers).map(|(v, &p)| v.powi(p as i32)).product()
    }

    pub(crate) fn predict(&self, vars: &[f64]) -> f64 {
        self.terms
            .iter()
            .zip(&self.coef)
            .map(|(t, c)| {
                c * Self::term(
                    t,
                    self.active
                        .iter()
                        .enumerate()
                        .map(|(a, &k)| (vars[k] - self.center[a]) / self.scale[a]),
                )
            })
            .sum()
    }
}

/// Underlying values from each exercise date, by suffix sums over flows
/// sorted by accrual start.
struct Underlying<'a> {
    pricer: FlowPricer<'a>,
    /// First flow index of the underlying entered at each exercise date.
    first_flow: Vec<usize>,
}

impl<'a> Underlying<'a> {
    fn new(pricer: FlowPricer<'a>, dates: &[f64]) -> Self {
        let first_flow = dates
            .iter()
            .map(|&t| {
                (0..pricer.n_flows())
                    .find(|&k| pricer.start_of(k) >= t - DATE_TOL)
                    .unwrap_or(pricer.n_flows())
            })
            .collect();
        Self { pricer, first_flow }
    }

    /// Value at `(i, p)` of the underlying entered at exercise date `j`.
    fn value(&self, i: usize, p: usize, j: usize, buf: &mut [f64]) -> f64 {
        self.pricer.flow_values(i, p, buf);
        buf[self.first_flow[j]..].iter().sum()
    }
}

/// Values a Bermudan swaption by Longstaff-Schwartz. The cube holds the
/// option value before exercise and the entered swap after it.
pub fn value_bermudan_swaption(
    deal: &BermudanSwaption,
    market: &MarketScenarioSet,
    config: &LsmConfig,
) -> Result<(ValueCube, LsmDiagnostics)> {
    deal.validate()?;
    let grid = &market.grid;
    let times = grid.times();
    let nt = times.len();
    let n = market.n_paths;
    let degree = config.degree.unwrap_or(deal.basis_degree);
    let n_vars = 2 + config.extra_regressor.is_some() as usize;
    if let Some(extra) = &config.extra_regressor {
        if extra.len() != nt * n {
            return Err(invalid("extra regressor must cover every (time, path)"));
        }
    }
    if n < 10 * basis_size(n_vars, degree) {
        return Err(invalid(format!(
            "{}: {n} paths is below ten times the regression basis size",
            deal.id
        )));
    }
    let ex_idx: Vec<usize> = deal
        .exercise_dates
        .iter()
        .map(|&t| {
            grid.index_of(t)
                .ok_or_else(|| invalid(format!("{}: exercise date {t} is not on the grid", deal.id)))
        })
        .collect::<Result<_>>()?;
    let n_ex = ex_idx.len();
    let instr = deal.underlying.to_instrument();
    let riskless = Underlying::new(FlowPricer::new(&instr, market, None)?, &deal.exercise_dates);
    let risky = match &config.exercise_credit {
        Some(c) => Some(Underlying::new(
            FlowPricer::new(&instr, market, Some(c))?,
            &deal.exercise_dates,
        )),
        None => None,
    };
    let decision = risky.as_ref().unwrap_or(&riskless);
    let n_flows = riskless.pricer.n_flows();
    let extra = |i: usize, p: usize| config.extra_regressor.as_ref().map(|e| e[i * n + p]);
    let mut reduced = Vec::new();

    // Backward induction over exercise dates.
    let mut tau: Vec<Option<usize>> = vec![None; n];
    let mut y_dec = vec![0.0; n];
    let mut y_rf = vec![0.0; n];
    let mut exercise_counts = vec![0; n_ex];
    for j in (0..n_ex).rev() {
        let i = ex_idx[j];
        let t = times[i];
        let survival = config.exercise_credit.as_ref().map_or(1.0, |c| c.factor(t));
        let values: Vec<(f64, f64)> = (0..n)
            .into_par_iter()
            .map_init(
                || vec![0.0; n_flows],
                |buf, p| {
                    let dec = decision.value(i, p, j, buf);
                    let rf = if risky.is_some() {
                        riskless.value(i, p, j, buf)
                    } else {
                        dec
                    };
                    (dec, rf)
                },
            )
            .collect();
        let itm: Vec<usize> = (0..n).filter(|&p| values[p].0 > 0.0).collect();
        let continuation: Vec<f64> = if j + 1 == n_ex || itm.is_empty() {
            vec![0.0; n]
        } else {
            let mut vars = vec![Vec::with_capacity(itm.len()); n_vars];
            let mut y = Vec::with_capacity(itm.len());
            for &p in &itm {
                vars[0].push(market.short_rate[market.idx(i, p)]);
                vars[1].push(values[p].0);
                if let Some(e) = extra(i, p) {
                    vars[2].push(e);
                }
                y.push(y_dec[p] / (market.discount_at(i, p) * survival));
            }
            let fit = Fit::new(&vars, &y, degree);
            if fit.degree < degree {
                reduced.push((t, fit.degree));
            }
            let mut c = vec![0.0; n];
            for &p in &itm {
                let mut v = vec![market.short_rate[market.idx(i, p)], values[p].0];
                v.extend(extra(i, p));
                c[p] = fit.predict(&v);
            }
            c
        };
        for &p in &itm {
            if values[p].0 > continuation[p] {
                tau[p] = Some(j);
                let d = market.discount_at(i, p);
                y_dec[p] = d * survival * values[p].0;
                y_rf[p] = d * values[p].1;
            }
        }
    }
    for j in tau.iter().flatten() {
        exercise_counts[*j] += 1;
    }

    // Cube rows: entered swap after exercise, regressed option value before.
    let last_ex = *ex_idx.last().expect("non-empty");
    let rows: Vec<(Vec<f64>, Vec<u8>, Option<(f64, usize)>)> = (0..nt)
        .into_par_iter()
        .map(|i| {
            let mut buf = vec![0.0; n_flows];
            let mut row = vec![0.0; n];
            let mut ex_row = vec![0u8; n];
            let mut alive = Vec::new();
            for p in 0..n {
                match tau[p] {
                    Some(j) if ex_idx[j] <= i => {
                        row[p] = riskless.value(i, p, j, &mut buf);
                        if ex_idx[j] == i {
                            ex_row[p] = 1;
                        }
                    }
                    _ => alive.push(p),
                }
            }
            let mut note = None;
            if i < last_ex && !alive.is_empty() {
                let next = ex_idx.iter().position(|&e| e > i).expect("a later exercise date");
                let mut vars = vec![Vec::with_capacity(alive.len()); n_vars];
                let mut y = Vec::with_capacity(alive.len());
                for &p in &alive {
                    vars[0].push(market.short_rate[market.idx(i, p)]);
                    vars[1].push(riskless.value(i, p, next, &mut buf));
                    if let Some(e) = extra(i, p) {
                        vars[2].push(e);
                    }
                    y.push(y_rf[p] / market.discount_at(i, p));
                }
                let fit = Fit::new(&vars, &y, degree);
                if fit.degree < degree {
                    note = Some((times[i], fit.degree));
                }
                let mut v = vec![0.0; n_vars];
                for (s, &p) in alive.iter().enumerate() {
                    for k in 0..n_vars {
                        v[k] = vars[k][s];
                    }
                    row[p] = fit.predict(&v).max(0.0);
                }
            }
            (row, ex_row, note)
        })
        .collect();
    let mut values = Vec::with_capacity(nt * n);
    let mut exercise = Vec::with_capacity(nt * n);
    for (row, ex_row, note) in rows {
        values.extend(row);
        exercise.extend(ex_row);
        reduced.extend(note);
    }
    reduced.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (value, standard_error) = mean_se(&y_rf);
    let cube = ValueCube {
        id: deal.id.clone(),
        grid: grid.clone(),
        n_paths: n,
        seed: market.seed,
        values,
        exercise: Some(exercise),
    };
    Ok((
        cube,
        LsmDiagnostics {
            value,
            standard_error,
            exercise_counts,
            reduced_degree: reduced,
        },
    ))
}
