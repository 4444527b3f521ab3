//! Rating transition matrices with an absorbing default state.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dist::{norm_cdf, norm_quantile};
use crate::error::{invalid, Result};

const ROW_TOL: f64 = 1e-12;

/// One-year transition probabilities. The last rating is default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    pub ratings: Vec<String>,
    pub q: DMatrix<f64>,
}

impl TransitionMatrix {
    pub fn new(ratings: Vec<String>, q: DMatrix<f64>) -> Result<Self> {
        let m = Self { ratings, q };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.ratings.len();
        if n < 2 || self.q.nrows() != n || self.q.ncols() != n {
            return Err(invalid("transition matrix must be square with at least two ratings"));
        }
        for i in 0..n {
            let row = self.q.row(i);
            if row.iter().any(|&p| !(p >= 0.0)) {
                return Err(invalid(format!("row {} has a negative entry", self.ratings[i])));
            }
            if (row.sum() - 1.0).abs() > ROW_TOL {
                return Err(invalid(format!("row {} sums to {}", self.ratings[i], row.sum())));
            }
        }
        let last = self.q.row(n - 1);
        if last[n - 1] != 1.0 || last.iter().take(n - 1).any(|&p| p != 0.0) {
            return Err(invalid("default row must be absorbing (0, ..., 0, 1)"));
        }
        Ok(())
    }

    /// Identity migration over `ratings` followed by default.
    pub fn identity(ratings: Vec<String>) -> Result<Self> {
        let n = ratings.len();
        Self::new(ratings, DMatrix::identity(n, n))
    }

    pub fn n(&self) -> usize {
        self.ratings.len()
    }

    /// Number of non-default ratings.
    pub fn n_live(&self) -> usize {
        self.ratings.len() - 1
    }

    pub fn default_index(&self) -> usize {
        self.ratings.len() - 1
    }

    pub fn rating_index(&self, label: &str) -> Option<usize> {
        self.ratings.iter().position(|r| r == label)
    }
}

/// Powers `Q^0 … Q^steps` of a transition matrix. Row `k` of `Q^n` is the
/// rating distribution after `n` years starting from rating `k`.
#[derive(Debug, Clone)]
pub struct Propagation {
    pub powers: Vec<DMatrix<f64>>,
}

impl Propagation {
    pub fn steps(&self) -> usize {
        self.powers.len() - 1
    }

    /// Cumulative PD after `step` years from rating `start`.
    pub fn pd(&self, start: usize, step: usize) -> f64 {
        let m = &self.powers[step];
        m[(start, m.ncols() - 1)]
    }

    /// Distribution at a fractional time, interpolated linearly between
    /// whole years. Times beyond the last step are clamped.
    pub fn distribution_at(&self, start: usize, t: f64) -> Vec<f64> {
        let t = t.clamp(0.0, self.steps() as f64);
        let lo = t.floor() as usize;
        let hi = (lo + 1).min(self.steps());
        let w = t - lo as f64;
        let (a, b) = (&self.powers[lo], &self.powers[hi]);
        (0..a.ncols())
            .map(|j| (1.0 - w) * a[(start, j)] + w * b[(start, j)])
            .collect()
    }
}

pub fn propagate_matrix(matrix: &TransitionMatrix, horizon_steps: usize) -> Propagation {
    let n = matrix.n();
    let mut powers = Vec::with_capacity(horizon_steps + 1);
    powers.push(DMatrix::identity(n, n));
    for s in 0..horizon_steps {
        let next = &powers[s] * &matrix.q;
        powers.push(next);
    }
    Propagation { powers }
}

/// Risk-neutral probability of a return below the historical boundary `b`
/// once a risk premium `ρθ` is added: `N(b + ρθ)`.
pub fn mcnulty_levin_adjust(boundary: f64, risk_premium: f64) -> f64 {
    norm_cdf(boundary + risk_premium)
}

/// Applies [`mcnulty_levin_adjust`] to every cumulative boundary of every
/// live row, cumulating from the default column upward.
pub fn mcnulty_levin_matrix(matrix: &TransitionMatrix, risk_premium: &[f64]) -> Result<TransitionMatrix> {
    let n = matrix.n();
    if risk_premium.len() != n - 1 {
        return Err(invalid("one risk premium per live rating required"));
    }
    let mut q = matrix.q.clone();
    for i in 0..n - 1 {
        let mut cum = 0.0;
        let mut prev_adj = 0.0;
        for j in (0..n).rev() {
            cum += matrix.q[(i, j)];
            let adj = if j == 0 {
                1.0
            } else {
                mcnulty_levin_adjust(norm_quantile(cum.min(1.0)), risk_premium[i])
            };
            q[(i, j)] = (adj - prev_adj).max(0.0);
            prev_adj = adj;
        }
    }
    TransitionMatrix::new(matrix.ratings.clone(), q)
}

/// Split of a cumulative PD into default straight from the starting rating
/// and default after at least one migration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DefaultDecomposition {
    pub total: f64,
    pub jump_to_default: f64,
    pub transitional: f64,
}

pub fn decompose_default(matrix: &TransitionMatrix, start: usize, years: usize) -> DefaultDecomposition {
    let d = matrix.default_index();
    let stay = matrix.q[(start, start)];
    let jump: f64 = (0..years).map(|k| stay.powi(k as i32) * matrix.q[(start, d)]).sum();
    let total = propagate_matrix(matrix, years).pd(start, years);
    DefaultDecomposition {
        total,
        jump_to_default: jump,
        transitional: total - jump,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    pub(crate) fn table2() -> TransitionMatrix {
        let ratings = ["A", "B", "C", "D"].iter().map(|s| s.to_string()).collect();
        #[rustfmt::skip]
        let q = DMatrix::from_row_slice(4, 4, &[
            0.9600, 0.0250, 0.0119, 0.0031,
            0.0040, 0.8300, 0.1487, 0.0173,
            0.0041, 0.0100, 0.9230, 0.0629,
            0.0,    0.0,    0.0,    1.0,
        ]);
        TransitionMatrix::new(ratings, q).unwrap()
    }

    #[test]
    fn table2_one_and_two_steps() {
        let p = propagate_matrix(&table2(), 2);
        assert_abs_diff_eq!(p.pd(0, 1), 0.0031, epsilon = 1e-15);
        // Independent squaring: row A of Q·Q, default column.
        let q = table2().q;
        let two: f64 = (0..4).map(|k| q[(0, k)] * q[(k, 3)]).sum();
        assert_abs_diff_eq!(p.pd(0, 2), two, epsilon = 1e-15);
        assert_abs_diff_eq!(two, 0.00726, epsilon = 5e-6);
    }

    #[test]
    fn identity_never_defaults() {
        let m = TransitionMatrix::identity(vec!["A".into(), "B".into(), "D".into()]).unwrap();
        let p = propagate_matrix(&m, 30);
        assert_eq!(p.pd(0, 30), 0.0);
        assert_eq!(p.pd(1, 30), 0.0);
    }

    #[test]
    fn propagation_stays_stochastic() {
        let p = propagate_matrix(&table2(), 30);
        for m in &p.powers {
            for i in 0..4 {
                assert_abs_diff_eq!(m.row(i).sum(), 1.0, epsilon = 1e-12);
            }
            assert_eq!(m[(3, 3)], 1.0);
        }
        let d = p.distribution_at(1, 2.5);
        assert_abs_diff_eq!(d.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn invalid_matrices() {
        let r: Vec<String> = ["A", "D"].iter().map(|s| s.to_string()).collect();
        assert!(TransitionMatrix::new(r.clone(), DMatrix::from_row_slice(2, 2, &[0.9, 0.2, 0.0, 1.0])).is_err());
        assert!(TransitionMatrix::new(r, DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.1, 0.9])).is_err());
    }

    #[test]
    fn mcnulty_levin() {
        assert_eq!(mcnulty_levin_adjust(-1.3, 0.0), norm_cdf(-1.3));
        let b = norm_quantile(0.01);
        assert_abs_diff_eq!(b, -2.3263478740408408, epsilon = 1e-12);
        assert_abs_diff_eq!(
            mcnulty_levin_adjust(b, 0.5),
            norm_cdf(-1.8263478740408408),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(mcnulty_levin_adjust(b, 0.5), 0.0339, epsilon = 1e-4);
        let xs: Vec<f64> = (0..20).map(|k| mcnulty_levin_adjust(b, k as f64 * 0.1)).collect();
        assert!(xs.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn mcnulty_levin_matrix_raises_default() {
        let m = table2();
        let rn = mcnulty_levin_matrix(&m, &[0.3, 0.3, 0.3]).unwrap();
        for i in 0..3 {
            assert!(rn.q[(i, 3)] > m.q[(i, 3)]);
        }
        let same = mcnulty_levin_matrix(&m, &[0.0, 0.0, 0.0]).unwrap();
        assert!((same.q.clone() - m.q.clone()).abs().max() < 1e-12);
    }

    #[test]
    fn decomposition_adds_up() {
        let d = decompose_default(&table2(), 0, 10);
        assert_abs_diff_eq!(d.jump_to_default + d.transitional, d.total, epsilon = 1e-15);
        assert!(d.transitional > 0.0);
    }
}
