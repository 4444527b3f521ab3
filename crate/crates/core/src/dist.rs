//! Normal and fat-tailed return distributions.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, StudentsT};
use statrs::function::erf::erfc_inv;

const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// Standard normal density.
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard normal quantile. Returns the infinities at 0 and 1.
pub fn norm_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let x = -SQRT_2 * erfc_inv(2.0 * p);
    // One Newton step against the accurate CDF.
    let density = norm_pdf(x);
    if density > 0.0 {
        x - (norm_cdf(x) - p) / density
    } else {
        x
    }
}

/// Distribution of an entity's standardized asset return.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReturnDistribution {
    #[default]
    Normal,
    StudentT {
        df: f64,
    },
}

impl ReturnDistribution {
    pub fn from_fat_tail(df: Option<f64>) -> Self {
        match df {
            Some(df) => ReturnDistribution::StudentT { df },
            None => ReturnDistribution::Normal,
        }
    }

    fn student(df: f64) -> StudentsT {
        StudentsT::new(0.0, 1.0, df).expect("degrees of freedom validated upstream")
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            ReturnDistribution::Normal => norm_cdf(x),
            ReturnDistribution::StudentT { df } => {
                if x.is_infinite() {
                    return if x > 0.0 { 1.0 } else { 0.0 };
                }
                Self::student(df).cdf(x)
            }
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match *self {
            ReturnDistribution::Normal => norm_pdf(x),
            ReturnDistribution::StudentT { df } => Self::student(df).pdf(x),
        }
    }

    /// Inverse CDF, polished with Newton steps so that `cdf(quantile(p))`
    /// reproduces `p` to a few ulps.
    pub fn quantile(&self, p: f64) -> f64 {
        if p <= 0.0 {
            return f64::NEG_INFINITY;
        }
        if p >= 1.0 {
            return f64::INFINITY;
        }
        let mut x = match *self {
            ReturnDistribution::Normal => norm_quantile(p),
            ReturnDistribution::StudentT { df } => Self::student(df).inverse_cdf(p),
        };
        for _ in 0..3 {
            let density = self.pdf(x);
            if density <= 0.0 || !density.is_finite() {
                break;
            }
            let step = (self.cdf(x) - p) / density;
            if !step.is_finite() {
                break;
            }
            x -= step;
            if step.abs() <= 1e-16 * x.abs().max(1.0) {
                break;
            }
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn normal_reference_values() {
        assert_abs_diff_eq!(norm_cdf(0.0), 0.5, epsilon = 1e-16);
        assert_abs_diff_eq!(norm_quantile(0.025), -1.959963984540054, epsilon = 1e-12);
        assert_abs_diff_eq!(norm_cdf(-1.959963984540054), 0.025, epsilon = 1e-15);
    }

    #[test]
    fn student_quantile_round_trips() {
        let d = ReturnDistribution::StudentT { df: 3.0 };
        for &p in &[1e-6, 0.005, 0.025, 0.1, 0.5, 0.9, 0.999] {
            assert_abs_diff_eq!(d.cdf(d.quantile(p)), p, epsilon = 1e-14);
        }
        // t(3) 2.5% quantile.
        assert_abs_diff_eq!(d.quantile(0.025), -3.182446305284263, epsilon = 1e-9);
    }
}
