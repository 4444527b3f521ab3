//! One-factor mean-reverting Gaussian short rate fitted to a zero curve, and
//! the market scenario set simulated on the generic grid.
//!
//! `r(t) = x(t) + φ(t)` with `dx = −a x dt + σ dW`, `x(0) = 0`. The pair
//! `(x, ∫x)` is sampled exactly over every grid step, and the deterministic
//! shift makes the expected path discount factor equal the input curve.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curve::ZeroCurve;
use crate::error::{invalid, Result};
use crate::factor::FactorModel;
use crate::grid::TimeGrid;
use crate::rng::{Domain, PathDraws};

/// Below this value of `a·τ` the closed forms are replaced by series.
const SMALL_AT: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HullWhiteParams {
    pub curve: ZeroCurve,
    pub mean_reversion: f64,
    pub volatility: f64,
}

impl HullWhiteParams {
    pub fn new(curve: ZeroCurve, mean_reversion: f64, volatility: f64) -> Result<Self> {
        let p = Self {
            curve,
            mean_reversion,
            volatility,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.volatility >= 0.0) || !self.volatility.is_finite() {
            return Err(invalid(format!("volatility must be >= 0, got {}", self.volatility)));
        }
        if !(self.mean_reversion >= 0.0) || !self.mean_reversion.is_finite() {
            return Err(invalid(format!(
                "mean reversion must be >= 0, got {}",
                self.mean_reversion
            )));
        }
        Ok(())
    }

    /// `(1 − e^{−aτ}) / a`.
    pub fn b(&self, tau: f64) -> f64 {
        let a = self.mean_reversion;
        if a * tau < SMALL_AT {
            tau * (1.0 - a * tau / 2.0 + (a * tau).powi(2) / 6.0)
        } else {
            -(-a * tau).exp_m1() / a
        }
    }

    /// Variance of `x(t+τ)` given `x(t)`.
    pub fn var_x(&self, tau: f64) -> f64 {
        let (a, s2) = (self.mean_reversion, self.volatility.powi(2));
        if a * tau < SMALL_AT {
            s2 * tau * (1.0 - a * tau + 2.0 * (a * tau).powi(2) / 3.0)
        } else {
            -s2 * (-2.0 * a * tau).exp_m1() / (2.0 * a)
        }
    }

    /// Covariance of `x(t+τ)` and `∫_t^{t+τ} x` given `x(t)`.
    pub fn cov_x_integral(&self, tau: f64) -> f64 {
        let s2 = self.volatility.powi(2);
        0.5 * s2 * self.b(tau).powi(2)
    }

    /// Variance of `∫_t^{t+τ} x` given `x(t)`.
    pub fn var_integral(&self, tau: f64) -> f64 {
        let (a, s2) = (self.mean_reversion, self.volatility.powi(2));
        if a * tau < SMALL_AT {
            s2 * (tau.powi(3) / 3.0 - a * tau.powi(4) / 4.0 + 7.0 * a * a * tau.powi(5) / 60.0
                - a.powi(3) * tau.powi(6) / 24.0)
        } else {
            let b = self.b(tau);
            let b2 = -(-2.0 * a * tau).exp_m1() / (2.0 * a);
            s2 / (a * a) * (tau - 2.0 * b + b2)
        }
    }

    /// Deterministic shift `φ(t)` of the short rate.
    pub fn shift(&self, t: f64) -> f64 {
        self.curve.forward(t) + self.cov_x_integral(t)
    }

    /// Zero-coupon bond price `P(t, T)` given the factor state `x(t)`.
    pub fn bond_price(&self, t: f64, maturity: f64, x: f64) -> f64 {
        if maturity <= t {
            return 1.0;
        }
        let tau = maturity - t;
        let convexity = 0.5 * (self.var_integral(tau) - self.var_integral(maturity) + self.var_integral(t));
        self.curve.discount(maturity) / self.curve.discount(t) * (convexity - self.b(tau) * x).exp()
    }
}

/// Parameter bump for market sensitivities.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MarketBump {
    /// Parallel shift added to every zero rate.
    #[serde(default)]
    pub curve_shift: f64,
    /// Absolute shift of the short-rate volatility.
    #[serde(default)]
    pub vol_shift: f64,
}

impl MarketBump {
    pub fn negated(self) -> Self {
        Self {
            curve_shift: -self.curve_shift,
            vol_shift: -self.vol_shift,
        }
    }
}

/// Returns bumped parameters. The seed is not part of the parameters, so
/// regenerating with the caller's seed reuses every draw.
pub fn shift_market_params(params: &HullWhiteParams, bump: MarketBump) -> Result<HullWhiteParams> {
    if !bump.curve_shift.is_finite() || !bump.vol_shift.is_finite() {
        return Err(invalid("market bump must be finite"));
    }
    HullWhiteParams::new(
        params.curve.shifted(bump.curve_shift),
        params.mean_reversion,
        params.volatility + bump.vol_shift,
    )
}

/// Simulated market on the generic grid. Arrays are time-major:
/// entry `(i, p)` sits at `i * n_paths + p`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketScenarioSet {
    pub grid: TimeGrid,
    pub n_paths: usize,
    pub seed: u64,
    pub params: HullWhiteParams,
    pub factors: FactorModel,
    /// Factor state `x`.
    pub state: Vec<f64>,
    pub short_rate: Vec<f64>,
    /// Path discount factor `exp(−∫_0^t r)`.
    pub discount: Vec<f64>,
    /// Standardized systematic shocks of the step ending at each grid
    /// point, `(i, p, k)` at `(i * n_paths + p) * n_systematic + k`. Row 0
    /// is zero.
    pub systematic_draws: Vec<f64>,
}

impl MarketScenarioSet {
    #[inline]
    pub fn idx(&self, i: usize, p: usize) -> usize {
        i * self.n_paths + p
    }

    pub fn discount_at(&self, i: usize, p: usize) -> f64 {
        self.discount[self.idx(i, p)]
    }

    pub fn state_at(&self, i: usize, p: usize) -> f64 {
        self.state[self.idx(i, p)]
    }

    pub fn systematic(&self, i: usize, p: usize) -> &[f64] {
        let k = self.factors.n_systematic;
        let start = self.idx(i, p) * k;
        &self.systematic_draws[start..start + k]
    }

    /// `P(t_i, T)` on path `p`.
    pub fn bond_price(&self, i: usize, p: usize, maturity: f64) -> f64 {
        self.params
            .bond_price(self.grid.times()[i], maturity, self.state_at(i, p))
    }

    /// Mean and standard error of the path discount factor at grid point `i`.
    pub fn discount_mean_se(&self, i: usize) -> (f64, f64) {
        mean_se(&self.discount[self.idx(i, 0)..self.idx(i, 0) + self.n_paths])
    }
}

pub(crate) fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Simulates `n_paths` market paths. The rate shock of every step is the
/// first market row of `factors` applied to systematic and idiosyncratic
/// draws keyed by `(seed, step, path, factor)`.
pub fn generate_market_scenarios(
    params: &HullWhiteParams,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
    factors: &FactorModel,
) -> Result<MarketScenarioSet> {
    if n_paths == 0 {
        return Err(invalid("n_paths must be at least 1"));
    }
    params.validate()?;
    factors.validate()?;
    let times = grid.times();
    let nt = times.len();
    let nsys = factors.n_systematic;
    let rate_row = &factors.market[0];
    let n_market = factors.market.len();

    struct StepCoef {
        decay: f64,
        b: f64,
        sd_x: f64,
        beta: f64,
        sd_resid: f64,
    }
    let coefs: Vec<StepCoef> = (1..nt)
        .map(|i| {
            let dt = times[i] - times[i - 1];
            let vx = params.var_x(dt);
            let cov = params.cov_x_integral(dt);
            let vi = params.var_integral(dt);
            let sd_x = vx.sqrt();
            let beta = if sd_x > 0.0 { cov / sd_x } else { 0.0 };
            StepCoef {
                decay: (-params.mean_reversion * dt).exp(),
                b: params.b(dt),
                sd_x,
                beta,
                sd_resid: (vi - beta * beta).max(0.0).sqrt(),
            }
        })
        .collect();
    let curve_df: Vec<f64> = times
        .iter()
        .map(|&t| params.curve.discount(t) * (-0.5 * params.var_integral(t)).exp())
        .collect();
    let shifts: Vec<f64> = times.iter().map(|&t| params.shift(t)).collect();

    // Per path: (state, integral, systematic draws) along the grid.
    let columns: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut sys_rng = PathDraws::new(seed, Domain::Systematic, p as u64, nsys);
            let mut idio_rng = PathDraws::new(seed, Domain::MarketIdiosyncratic, p as u64, n_market);
            let mut aux_rng = PathDraws::new(seed, Domain::RateIntegral, p as u64, 1);
            let mut x = vec![0.0; nt];
            let mut integral = vec![0.0; nt];
            let mut sys = vec![0.0; nt * nsys];
            for i in 1..nt {
                let c = &coefs[i - 1];
                let w = &mut sys[i * nsys..(i + 1) * nsys];
                sys_rng.fill_step(i - 1, w);
                let mut z = rate_row
                    .systematic
                    .iter()
                    .zip(w.iter())
                    .map(|(l, d)| l * d)
                    .sum::<f64>();
                if rate_row.idiosyncratic != 0.0 {
                    z += rate_row.idiosyncratic * idio_rng.normal(i - 1, 0);
                }
                let eta = aux_rng.normal(i - 1, 0);
                x[i] = x[i - 1] * c.decay + c.sd_x * z;
                integral[i] = integral[i - 1] + x[i - 1] * c.b + c.beta * z + c.sd_resid * eta;
            }
            (x, integral, sys)
        })
        .collect();

    let mut state = vec![0.0; nt * n_paths];
    let mut short_rate = vec![0.0; nt * n_paths];
    let mut discount = vec![0.0; nt * n_paths];
    let mut systematic_draws = vec![0.0; nt * n_paths * nsys];
    for (p, (x, integral, sys)) in columns.into_iter().enumerate() {
        for i in 0..nt {
            let k = i * n_paths + p;
            state[k] = x[i];
            short_rate[k] = x[i] + shifts[i];
            discount[k] = curve_df[i] * (-integral[i]).exp();
            systematic_draws[k * nsys..(k + 1) * nsys].copy_from_slice(&sys[i * nsys..(i + 1) * nsys]);
        }
    }
    Ok(MarketScenarioSet {
        grid: grid.clone(),
        n_paths,
        seed,
        params: params.clone(),
        factors: factors.clone(),
        state,
        short_rate,
        discount,
        systematic_draws,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_time_grid, DensityRule};
    use approx::assert_abs_diff_eq;

    fn grid10() -> TimeGrid {
        build_time_grid(10.0, &[], &DensityRule::default()).unwrap()
    }

    #[test]
    fn zero_vol_is_deterministic_curve() {
        let params = HullWhiteParams::new(ZeroCurve::flat(0.02), 0.1, 0.0).unwrap();
        let g = grid10();
        let m = generate_market_scenarios(&params, &g, 8, 1, &FactorModel::independent(0)).unwrap();
        for (i, &t) in g.times().iter().enumerate() {
            for p in 0..8 {
                assert_abs_diff_eq!(m.short_rate[m.idx(i, p)], 0.02, epsilon = 1e-15);
                assert_abs_diff_eq!(m.discount_at(i, p), (-0.02 * t).exp(), epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn discount_is_martingale() {
        let params = HullWhiteParams::new(ZeroCurve::flat(0.03), 0.05, 0.01).unwrap();
        let g = grid10();
        let m = generate_market_scenarios(&params, &g, 10_000, 11, &FactorModel::independent(0)).unwrap();
        for (i, &t) in g.times().iter().enumerate() {
            let (mean, se) = m.discount_mean_se(i);
            let target = (-0.03 * t).exp();
            assert!((mean - target).abs() <= 3.0 * se + 1e-15, "t={t} mean={mean} se={se}");
        }
        assert!(m.discount.iter().all(|d| *d > 0.0));
        assert!((0..m.n_paths).all(|p| m.discount_at(0, p) == 1.0));
    }

    #[test]
    fn bond_price_matches_conditional_expectation() {
        // E[D(T)/D(t) | x(t)] = P(t, T): check the unconditional identity
        // E[D(t) P(t, T)] = P(0, T) on simulated paths.
        let params =
            HullWhiteParams::new(ZeroCurve::new(vec![1.0, 10.0], vec![0.01, 0.04]).unwrap(), 0.1, 0.015).unwrap();
        let g = grid10();
        let m = generate_market_scenarios(&params, &g, 20_000, 5, &FactorModel::independent(0)).unwrap();
        let i = g.index_of(3.0).unwrap();
        let vals: Vec<f64> = (0..m.n_paths)
            .map(|p| m.discount_at(i, p) * m.bond_price(i, p, 8.0))
            .collect();
        let (mean, se) = mean_se(&vals);
        assert!((mean - params.curve.discount(8.0)).abs() < 3.0 * se);
    }

    #[test]
    fn same_seed_bit_identical() {
        let params = HullWhiteParams::new(ZeroCurve::flat(0.03), 0.05, 0.01).unwrap();
        let g = grid10();
        let f = FactorModel::single_factor(&[0.3]).unwrap();
        let a = generate_market_scenarios(&params, &g, 500, 99, &f).unwrap();
        let b = generate_market_scenarios(&params, &g, 500, 99, &f).unwrap();
        assert_eq!(a, b);
        let c = generate_market_scenarios(&params, &g, 500, 100, &f).unwrap();
        assert_ne!(a.discount, c.discount);
    }

    #[test]
    fn small_and_large_mean_reversion_agree() {
        let lo = HullWhiteParams::new(ZeroCurve::flat(0.0), 0.0, 0.01).unwrap();
        let hi = HullWhiteParams::new(ZeroCurve::flat(0.0), 2e-3, 0.01).unwrap();
        for tau in [0.1, 1.0, 5.0] {
            assert_abs_diff_eq!(lo.var_integral(tau), 1e-4 * tau.powi(3) / 3.0, epsilon = 1e-15);
            let rel = (hi.var_integral(tau) - lo.var_integral(tau)) / lo.var_integral(tau);
            assert!(rel < 0.0 && rel > -0.01);
        }
    }

    #[test]
    fn bump_round_trip() {
        let p = HullWhiteParams::new(ZeroCurve::flat(0.03), 0.05, 0.01).unwrap();
        assert_eq!(shift_market_params(&p, MarketBump::default()).unwrap(), p);
        let b = MarketBump {
            curve_shift: 1e-4,
            vol_shift: 0.0,
        };
        let up = shift_market_params(&p, b).unwrap();
        assert_abs_diff_eq!(up.curve.zero_rate(3.0), 0.0301, epsilon = 1e-15);
        let back = shift_market_params(&up, b.negated()).unwrap();
        assert_abs_diff_eq!(back.curve.zero_rate(3.0), 0.03, epsilon = 1e-15);
    }
}
