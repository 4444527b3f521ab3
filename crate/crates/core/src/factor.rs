//! Linear factor model tying market shocks to credit asset returns.
//!
//! Every standardized shock is `loadings · w_sys + idio · w_own` with unit
//! variance, so the correlation of two variables is the dot product of their
//! systematic loadings.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, CvaError, Result};

const UNIT_TOL: f64 = 1e-10;
pub const PSD_TOLERANCE: f64 = 1e-10;

/// Loadings of one standardized variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Loading {
    pub systematic: Vec<f64>,
    pub idiosyncratic: f64,
}

impl Loading {
    /// Systematic loadings with the idiosyncratic weight that restores unit
    /// variance.
    pub fn from_systematic(systematic: Vec<f64>) -> Result<Self> {
        let ss: f64 = systematic.iter().map(|b| b * b).sum();
        if ss > 1.0 + UNIT_TOL {
            return Err(invalid(format!("systematic loadings have variance {ss} > 1")));
        }
        Ok(Self {
            systematic,
            idiosyncratic: (1.0 - ss).max(0.0).sqrt(),
        })
    }

    pub fn variance(&self) -> f64 {
        self.systematic.iter().map(|b| b * b).sum::<f64>() + self.idiosyncratic.powi(2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorModel {
    pub n_systematic: usize,
    pub market: Vec<Loading>,
    pub credit: Vec<Loading>,
}

impl FactorModel {
    pub fn new(n_systematic: usize, market: Vec<Loading>, credit: Vec<Loading>) -> Result<Self> {
        let model = Self {
            n_systematic,
            market,
            credit,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.market.is_empty() {
            return Err(invalid("factor model needs at least one market factor"));
        }
        for (kind, rows) in [("market", &self.market), ("credit", &self.credit)] {
            for (i, row) in rows.iter().enumerate() {
                if row.systematic.len() != self.n_systematic {
                    return Err(invalid(format!(
                        "{kind} row {i} has {} loadings, expected {}",
                        row.systematic.len(),
                        self.n_systematic
                    )));
                }
                if row.idiosyncratic < 0.0 || (row.variance() - 1.0).abs() > UNIT_TOL {
                    return Err(invalid(format!(
                        "{kind} row {i} does not have unit variance ({})",
                        row.variance()
                    )));
                }
            }
        }
        Ok(())
    }

    /// The short rate is the only systematic factor; each credit entity
    /// loads `rho` on it. `rho` is the rate/asset correlation.
    pub fn single_factor(credit_rho: &[f64]) -> Result<Self> {
        let credit = credit_rho
            .iter()
            .map(|&rho| {
                if !(-1.0..=1.0).contains(&rho) {
                    return Err(CvaError::NotPositiveSemiDefinite {
                        eigenvalue: 1.0 - rho * rho,
                    });
                }
                Loading::from_systematic(vec![rho])
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(
            1,
            vec![Loading {
                systematic: vec![1.0],
                idiosyncratic: 0.0,
            }],
            credit,
        )
    }

    /// All entities independent of the market and of each other.
    pub fn independent(n_credit: usize) -> Self {
        Self::single_factor(&vec![0.0; n_credit]).expect("zero loadings are valid")
    }

    fn rows(&self) -> impl Iterator<Item = &Loading> {
        self.market.iter().chain(self.credit.iter())
    }

    /// Correlation matrix over `[market..., credit...]` implied by the
    /// loadings.
    pub fn implied_correlation(&self) -> DMatrix<f64> {
        let rows: Vec<&Loading> = self.rows().collect();
        let n = rows.len();
        DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                1.0
            } else {
                dot(&rows[i].systematic, &rows[j].systematic)
            }
        })
    }

    pub fn market_credit_correlation(&self, market: usize, entity: usize) -> f64 {
        dot(&self.market[market].systematic, &self.credit[entity].systematic)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Factor loadings reproducing a correlation matrix over
/// `[market factors..., credit entities...]`; the first `n_market` rows are
/// market factors.
///
/// With eigenvalues `λ` and `δ = max(λ_min, 0)`, the systematic loadings
/// are `V·sqrt(Λ − δ)` and every variable keeps idiosyncratic variance `δ`.
/// Off-diagonal correlations are reproduced exactly.
pub fn loadings_from_correlation(correlation: &DMatrix<f64>, n_market: usize) -> Result<FactorModel> {
    let n = correlation.nrows();
    if n == 0 || correlation.ncols() != n {
        return Err(invalid("correlation matrix must be square and non-empty"));
    }
    if n_market == 0 || n_market > n {
        return Err(invalid("n_market must be between 1 and the matrix size"));
    }
    for i in 0..n {
        if (correlation[(i, i)] - 1.0).abs() > PSD_TOLERANCE {
            return Err(invalid(format!("diagonal entry {i} is {}, not 1", correlation[(i, i)])));
        }
        for j in 0..i {
            if (correlation[(i, j)] - correlation[(j, i)]).abs() > PSD_TOLERANCE {
                return Err(invalid(format!("correlation matrix is not symmetric at ({i}, {j})")));
            }
        }
    }
    let eig = SymmetricEigen::new(correlation.clone());
    let lambda_min = eig.eigenvalues.min();
    if lambda_min < -PSD_TOLERANCE {
        return Err(CvaError::NotPositiveSemiDefinite { eigenvalue: lambda_min });
    }
    let delta = lambda_min.max(0.0);
    let columns: Vec<usize> = (0..n).filter(|&k| eig.eigenvalues[k] - delta > 1e-14).collect();
    let loadings: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            columns
                .iter()
                .map(|&k| eig.eigenvectors[(i, k)] * (eig.eigenvalues[k] - delta).sqrt())
                .collect()
        })
        .collect();
    let mut rows = loadings
        .into_iter()
        .map(|systematic| {
            let ss: f64 = systematic.iter().map(|b| b * b).sum();
            // Rounding can push ss a hair above one for rank-deficient input.
            let scale = if ss > 1.0 { 1.0 / ss.sqrt() } else { 1.0 };
            Loading::from_systematic(systematic.iter().map(|b| b * scale).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    let credit = rows.split_off(n_market);
    FactorModel::new(columns.len(), rows, credit)
}
