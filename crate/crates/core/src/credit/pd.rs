//! Default probability term structures and the spread/PD identity.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PDTermStructure {
    pub name: String,
    pub tenors: Vec<f64>,
    pub cumulative_pd: Vec<f64>,
    pub recovery: f64,
}

impl PDTermStructure {
    pub fn new(name: impl Into<String>, tenors: Vec<f64>, cumulative_pd: Vec<f64>, recovery: f64) -> Result<Self> {
        let s = Self {
            name: name.into(),
            tenors,
            cumulative_pd,
            recovery,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tenors.is_empty() || self.tenors.len() != self.cumulative_pd.len() {
            return Err(invalid(format!(
                "{}: tenors and PDs must match and be non-empty",
                self.name
            )));
        }
        if self.tenors.iter().any(|t| !(*t > 0.0)) || self.tenors.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid(format!(
                "{}: tenors must be positive and increasing",
                self.name
            )));
        }
        if self.cumulative_pd.iter().any(|p| !(0.0..1.0).contains(p)) {
            return Err(invalid(format!("{}: PDs must lie in [0, 1)", self.name)));
        }
        if self.cumulative_pd.windows(2).any(|w| w[1] < w[0]) {
            return Err(invalid(format!("{}: cumulative PD must be non-decreasing", self.name)));
        }
        if !(0.0..1.0).contains(&self.recovery) {
            return Err(invalid(format!("{}: recovery must lie in [0, 1)", self.name)));
        }
        Ok(())
    }

    /// No default risk at all.
    pub fn riskless(name: impl Into<String>, recovery: f64) -> Self {
        Self {
            name: name.into(),
            tenors: vec![1.0],
            cumulative_pd: vec![0.0],
            recovery,
        }
    }

    /// Cumulative PD at `t`: log-survival is linear between tenors (flat
    /// hazard per interval, starting from zero at `t = 0`) and the last
    /// hazard extends beyond the last tenor.
    pub fn pd_at(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let log_s = |p: f64| (-p).ln_1p();
        let n = self.tenors.len();
        let i = self.tenors.partition_point(|&x| x < t);
        let (t0, l0, t1, l1) = if i == 0 {
            (0.0, 0.0, self.tenors[0], log_s(self.cumulative_pd[0]))
        } else if i == n {
            let (ta, la) = if n >= 2 {
                (self.tenors[n - 2], log_s(self.cumulative_pd[n - 2]))
            } else {
                (0.0, 0.0)
            };
            (ta, la, self.tenors[n - 1], log_s(self.cumulative_pd[n - 1]))
        } else {
            (
                self.tenors[i - 1],
                log_s(self.cumulative_pd[i - 1]),
                self.tenors[i],
                log_s(self.cumulative_pd[i]),
            )
        };
        let l = l0 + (l1 - l0) * (t - t0) / (t1 - t0);
        -l.exp_m1()
    }

    /// Cumulative PD at each grid time.
    pub fn on_grid(&self, times: &[f64]) -> Vec<f64> {
        times.iter().map(|&t| self.pd_at(t)).collect()
    }

    /// Parallel shift of the credit-triangle spread: every survival
    /// probability is multiplied by `exp(−Δs·t/(1−R))`.
    pub fn spread_bumped(&self, bump: f64) -> Result<Self> {
        let lgd = 1.0 - self.recovery;
        let pds = self
            .tenors
            .iter()
            .zip(&self.cumulative_pd)
            .map(|(&t, &p)| 1.0 - (1.0 - p) * (-bump * t / lgd).exp())
            .collect();
        Self::new(self.name.clone(), self.tenors.clone(), pds, self.recovery)
    }
}

/// Credit-triangle PD curve: `PD(t) = 1 − exp(−s·t/(1−R))`.
pub fn pd_from_flat_spread(name: &str, spread: f64, recovery: f64, tenors: &[f64]) -> Result<PDTermStructure> {
    if !(0.0..1.0).contains(&recovery) {
        return Err(invalid(format!("recovery {recovery} outside [0, 1): hazard undefined")));
    }
    if !(spread >= 0.0) {
        return Err(invalid(format!("spread must be >= 0, got {spread}")));
    }
    let hazard = spread / (1.0 - recovery);
    let pds = tenors.iter().map(|&t| -(-hazard * t).exp_m1()).collect();
    PDTermStructure::new(name, tenors.to_vec(), pds, recovery)
}

/// Extra discount spread `sp` with `e^{−(r+sp)t} = e^{−rt}[1 − (1−R)·PD]`.
/// Independent of `r`.
pub fn spread_from_pd(pd: f64, recovery: f64, _r: f64, t: f64) -> Result<f64> {
    let loss = (1.0 - recovery) * pd;
    if loss >= 1.0 {
        return Err(invalid(format!("expected loss (1-R)·PD = {loss} >= 1: total loss")));
    }
    if !(t > 0.0) {
        return Err(invalid("spread maturity must be positive"));
    }
    Ok(-(-loss).ln_1p() / t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn flat_spread_examples() {
        let z = pd_from_flat_spread("x", 0.0, 0.4, &[1.0, 5.0]).unwrap();
        assert!(z.cumulative_pd.iter().all(|&p| p == 0.0));
        let c = pd_from_flat_spread("x", 0.012, 0.4, &[5.0]).unwrap();
        assert_abs_diff_eq!(c.cumulative_pd[0], 1.0 - (-0.1f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(c.cumulative_pd[0], 0.09516258196404048, epsilon = 1e-14);
        assert!(pd_from_flat_spread("x", 0.01, 1.0, &[1.0]).is_err());
    }

    #[test]
    fn doubling_spread_squares_survival() {
        let tenors = [0.5, 1.0, 3.0, 7.0];
        let one = pd_from_flat_spread("x", 0.015, 0.0, &tenors).unwrap();
        let two = pd_from_flat_spread("x", 0.03, 0.0, &tenors).unwrap();
        for (p1, p2) in one.cumulative_pd.iter().zip(&two.cumulative_pd) {
            assert_abs_diff_eq!(*p2, 1.0 - (1.0 - p1).powi(2), epsilon = 1e-15);
        }
    }

    #[test]
    fn spread_examples() {
        assert_eq!(spread_from_pd(0.0, 0.4, 0.03, 2.0).unwrap(), 0.0);
        assert_eq!(spread_from_pd(0.3, 1.0, 0.03, 2.0).unwrap(), 0.0);
        assert_abs_diff_eq!(
            spread_from_pd(0.05, 0.4, 0.0, 1.0).unwrap(),
            -(0.97f64).ln(),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            spread_from_pd(0.05, 0.4, 0.0, 1.0).unwrap(),
            0.030459207484708574,
            epsilon = 1e-12
        );
        assert!(spread_from_pd(1.0, 0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn interpolation_hits_knots_and_is_monotone() {
        let c = PDTermStructure::new("x", vec![1.0, 2.0, 5.0], vec![0.01, 0.03, 0.1], 0.4).unwrap();
        assert_abs_diff_eq!(c.pd_at(2.0), 0.03, epsilon = 1e-15);
        assert_abs_diff_eq!(c.pd_at(5.0), 0.1, epsilon = 1e-15);
        let xs: Vec<f64> = (0..100).map(|k| c.pd_at(k as f64 * 0.1)).collect();
        assert!(xs.windows(2).all(|w| w[1] >= w[0]));
        assert_eq!(c.pd_at(0.0), 0.0);
    }

    #[test]
    fn non_monotone_rejected() {
        assert!(PDTermStructure::new("x", vec![1.0, 2.0], vec![0.02, 0.01], 0.4).is_err());
    }
}
