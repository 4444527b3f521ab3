//! Risk-neutral transition matrix fitted to market default term structures
//! by Levenberg-Marquardt.
//!
//! Each live row carries one free logit per live column; the default logit
//! is pinned at zero and a softmax maps the row onto the simplex. Every
//! iterate is therefore a valid transition matrix, and an `n`-rating
//! problem has `n²` free parameters.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::matrix::{propagate_matrix, TransitionMatrix};
use super::pd::PDTermStructure;
use crate::error::{invalid, Result};
use crate::rng::{Domain, PathDraws};

const RESTART_SEED: u64 = 0x5eed;
/// Spread of the logit perturbation for restarts.
const RESTART_SCALE: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmSettings {
    pub max_iterations: usize,
    /// Forward finite-difference step on the logits.
    pub fd_step: f64,
    /// Stop once an accepted step improves the weighted RMS by less.
    pub rms_tolerance: f64,
    /// Extra runs from perturbed copies of the seed; the best fit wins.
    pub restarts: usize,
}

impl Default for LmSettings {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            fd_step: 1e-6,
            rms_tolerance: 1e-10,
            restarts: 32,
        }
    }
}

/// Weight per (rating, tenor), rows in rating order.
#[derive(Debug, Clone, PartialEq)]
pub struct FitWeights(pub Vec<Vec<f64>>);

impl FitWeights {
    /// `1/tenor`, normalized to sum to one for every rating.
    pub fn inverse_tenor(targets: &[PDTermStructure]) -> Self {
        Self(
            targets
                .iter()
                .map(|t| {
                    let raw: Vec<f64> = t.tenors.iter().map(|x| 1.0 / x).collect();
                    let sum: f64 = raw.iter().sum();
                    raw.into_iter().map(|w| w / sum).collect()
                })
                .collect(),
        )
    }

    pub fn uniform(targets: &[PDTermStructure]) -> Self {
        Self(targets.iter().map(|t| vec![1.0; t.tenors.len()]).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// Model minus target PD, per (rating, tenor).
    pub residuals: Vec<Vec<f64>>,
    /// Fitted cumulative PD, per (rating, tenor).
    pub fitted: Vec<Vec<f64>>,
    pub weighted_rms: f64,
    pub max_abs_error: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct RiskNeutralFit {
    pub matrix: TransitionMatrix,
    pub diagnostics: FitDiagnostics,
}

/// Weighted RMS of `model − target` over all cells.
pub fn weighted_rms(residuals: &[Vec<f64>], weights: &FitWeights) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (r_row, w_row) in residuals.iter().zip(&weights.0) {
        for (r, w) in r_row.iter().zip(w_row) {
            num += w * r * r;
            den += w;
        }
    }
    if den > 0.0 {
        (num / den).sqrt()
    } else {
        0.0
    }
}

/// Cumulative PD implied by `matrix` for each target cell, fractional
/// tenors interpolated between whole years.
pub fn fitted_pds(matrix: &TransitionMatrix, targets: &[PDTermStructure]) -> Vec<Vec<f64>> {
    let horizon = targets
        .iter()
        .flat_map(|t| t.tenors.iter())
        .fold(0.0f64, |a, &b| a.max(b))
        .ceil() as usize;
    let prop = propagate_matrix(matrix, horizon);
    let d = matrix.default_index();
    targets
        .iter()
        .enumerate()
        .map(|(k, t)| t.tenors.iter().map(|&tau| prop.distribution_at(k, tau)[d]).collect())
        .collect()
}

struct Problem<'a> {
    ratings: Vec<String>,
    n_live: usize,
    targets: &'a [PDTermStructure],
    sqrt_w: Vec<Vec<f64>>,
    horizon: usize,
    /// Integer tenors index powers directly.
    whole_years: bool,
}

impl Problem<'_> {
    fn matrix(&self, theta: &[f64]) -> DMatrix<f64> {
        let n = self.n_live + 1;
        let mut q = DMatrix::zeros(n, n);
        for i in 0..self.n_live {
            let logits = &theta[i * self.n_live..(i + 1) * self.n_live];
            let m = logits.iter().fold(0.0f64, |a, &b| a.max(b));
            let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let def = (-m).exp();
            let z: f64 = exps.iter().sum::<f64>() + def;
            for (j, e) in exps.iter().enumerate() {
                q[(i, j)] = e / z;
            }
            q[(i, n - 1)] = def / z;
        }
        q[(n - 1, n - 1)] = 1.0;
        q
    }

    fn residuals(&self, theta: &[f64]) -> DVector<f64> {
        let q = self.matrix(theta);
        let n = self.n_live + 1;
        let d = n - 1;
        let mut out = Vec::new();
        if self.whole_years {
            // Default column of Q^k for k = 1..horizon.
            let mut col = vec![DVector::zeros(n); self.horizon + 1];
            let mut cur = DVector::zeros(n);
            cur[d] = 1.0;
            col[0] = cur.clone();
            for k in 1..=self.horizon {
                cur = &q * &cur;
                col[k] = cur.clone();
            }
            for (r, t) in self.targets.iter().enumerate() {
                for (c, (&tau, &p)) in t.tenors.iter().zip(&t.cumulative_pd).enumerate() {
                    out.push(self.sqrt_w[r][c] * (col[tau.round() as usize][r] - p));
                }
            }
        } else {
            let m = TransitionMatrix {
                ratings: self.ratings.clone(),
                q,
            };
            let fitted = fitted_pds(&m, self.targets);
            for (r, t) in self.targets.iter().enumerate() {
                for (c, &p) in t.cumulative_pd.iter().enumerate() {
                    out.push(self.sqrt_w[r][c] * (fitted[r][c] - p));
                }
            }
        }
        DVector::from_vec(out)
    }
}

fn default_seed(targets: &[PDTermStructure]) -> DMatrix<f64> {
    let n_live = targets.len();
    let n = n_live + 1;
    let mut q = DMatrix::zeros(n, n);
    for (i, t) in targets.iter().enumerate() {
        let pd1 = t.pd_at(1.0).clamp(1e-6, 0.5);
        let weights: Vec<f64> = (0..n_live)
            .map(|j| {
                if i == j {
                    0.0
                } else {
                    0.5f64.powi((i as i32 - j as i32).abs())
                }
            })
            .collect();
        let wsum: f64 = weights.iter().sum();
        let live = 1.0 - pd1;
        for j in 0..n_live {
            q[(i, j)] = if i == j {
                0.9 * live
            } else if wsum > 0.0 {
                0.1 * live * weights[j] / wsum
            } else {
                0.0
            };
        }
        if n_live == 1 {
            q[(i, i)] = live;
        }
        q[(i, n - 1)] = pd1;
    }
    q[(n - 1, n - 1)] = 1.0;
    q
}

struct LmRun {
    theta: Vec<f64>,
    rms: f64,
    iterations: usize,
    converged: bool,
}

fn levenberg_marquardt(problem: &Problem, mut theta: Vec<f64>, settings: &LmSettings, weight_sum: f64) -> LmRun {
    let rms_of = |r: &DVector<f64>| {
        if weight_sum > 0.0 {
            (r.norm_squared() / weight_sum).sqrt()
        } else {
            0.0
        }
    };
    let np = theta.len();
    let mut r = problem.residuals(&theta);
    let mut rms = rms_of(&r);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < settings.max_iterations {
        iterations += 1;
        let mut jac = DMatrix::zeros(r.len(), np);
        for j in 0..np {
            let mut bumped = theta.clone();
            bumped[j] += settings.fd_step;
            let rj = problem.residuals(&bumped);
            jac.set_column(j, &((rj - &r) / settings.fd_step));
        }
        let jtj = jac.transpose() * &jac;
        let grad = jac.transpose() * &r;
        let mut accepted = false;
        while lambda < 1e16 {
            let mut a = jtj.clone();
            for k in 0..np {
                a[(k, k)] += lambda * (jtj[(k, k)] + 1e-12);
            }
            let step = match a.cholesky() {
                Some(ch) => ch.solve(&(-&grad)),
                None => {
                    lambda *= 4.0;
                    continue;
                }
            };
            let trial: Vec<f64> = theta.iter().zip(step.iter()).map(|(t, s)| t + s).collect();
            let r_trial = problem.residuals(&trial);
            let rms_trial = rms_of(&r_trial);
            if rms_trial < rms {
                let improvement = rms - rms_trial;
                theta = trial;
                r = r_trial;
                rms = rms_trial;
                lambda = (lambda / 3.0).max(1e-12);
                accepted = true;
                if improvement < settings.rms_tolerance {
                    converged = true;
                }
                break;
            }
            lambda *= 4.0;
        }
        if !accepted {
            // No downhill step at any damping: a stationary point.
            converged = true;
        }
        if converged {
            break;
        }
    }
    LmRun {
        theta,
        rms,
        iterations,
        converged,
    }
}

/// Fits the live block of a transition matrix so that propagated default
/// probabilities match `targets` (one term structure per live rating, in
/// rating order) in weighted least squares.
pub fn risk_neutralize_matrix(
    ratings: &[String],
    seed_matrix: Option<&TransitionMatrix>,
    targets: &[PDTermStructure],
    weights: &FitWeights,
    settings: &LmSettings,
) -> Result<RiskNeutralFit> {
    let n_live = targets.len();
    if n_live == 0 || ratings.len() != n_live + 1 {
        return Err(invalid(
            "need one PD term structure per live rating plus a default label",
        ));
    }
    if weights.0.len() != n_live
        || weights.0.iter().zip(targets).any(|(w, t)| w.len() != t.tenors.len())
        || weights.0.iter().flatten().any(|w| !(*w >= 0.0))
    {
        return Err(invalid("weights must be non-negative, one per (rating, tenor)"));
    }
    for t in targets {
        t.validate()?;
    }
    if let Some(seed) = seed_matrix {
        if seed.n() != n_live + 1 {
            return Err(invalid("seed matrix size does not match the targets"));
        }
    }

    if targets.iter().all(|t| t.cumulative_pd.iter().all(|&p| p == 0.0)) {
        // Any matrix without default mass fits exactly.
        let mut q = seed_matrix
            .map(|m| m.q.clone())
            .unwrap_or_else(|| DMatrix::identity(n_live + 1, n_live + 1));
        for i in 0..n_live {
            q[(i, n_live)] = 0.0;
            let s: f64 = q.row(i).sum();
            if s > 0.0 {
                for j in 0..n_live {
                    q[(i, j)] /= s;
                }
            } else {
                q[(i, i)] = 1.0;
            }
        }
        let matrix = TransitionMatrix::new(ratings.to_vec(), q)?;
        let fitted = fitted_pds(&matrix, targets);
        let residuals: Vec<Vec<f64>> = fitted.clone();
        return Ok(RiskNeutralFit {
            matrix,
            diagnostics: FitDiagnostics {
                weighted_rms: weighted_rms(&residuals, weights),
                max_abs_error: 0.0,
                residuals,
                fitted,
                iterations: 0,
                converged: true,
            },
        });
    }

    let horizon = targets
        .iter()
        .flat_map(|t| t.tenors.iter())
        .fold(0.0f64, |a, &b| a.max(b))
        .ceil() as usize;
    let whole_years = targets
        .iter()
        .flat_map(|t| t.tenors.iter())
        .all(|&x| (x - x.round()).abs() < 1e-12);
    let problem = Problem {
        ratings: ratings.to_vec(),
        n_live,
        targets,
        sqrt_w: weights.0.iter().map(|r| r.iter().map(|w| w.sqrt()).collect()).collect(),
        horizon,
        whole_years,
    };

    let seed_q = seed_matrix
        .map(|m| m.q.clone())
        .unwrap_or_else(|| default_seed(targets));
    let mut theta = vec![0.0; n_live * n_live];
    for i in 0..n_live {
        let def = seed_q[(i, n_live)].max(1e-8);
        for j in 0..n_live {
            theta[i * n_live + j] = (seed_q[(i, j)].max(1e-8) / def).ln();
        }
    }

    let weight_sum: f64 = weights.0.iter().flatten().sum();
    let mut best = levenberg_marquardt(&problem, theta.clone(), settings, weight_sum);
    for start in 0..settings.restarts {
        let mut draws = PathDraws::new(RESTART_SEED, Domain::Calibration, start as u64, theta.len());
        let trial: Vec<f64> = theta
            .iter()
            .enumerate()
            .map(|(j, t)| t + RESTART_SCALE * draws.normal(0, j))
            .collect();
        let run = levenberg_marquardt(&problem, trial, settings, weight_sum);
        if run.rms < best.rms {
            best = run;
        }
    }
    let LmRun {
        theta,
        iterations,
        converged,
        ..
    } = best;

    let matrix = TransitionMatrix::new(ratings.to_vec(), problem.matrix(&theta))?;
    let fitted = fitted_pds(&matrix, targets);
    let residuals: Vec<Vec<f64>> = fitted
        .iter()
        .zip(targets)
        .map(|(f, t)| f.iter().zip(&t.cumulative_pd).map(|(a, b)| a - b).collect())
        .collect();
    let max_abs_error = residuals.iter().flatten().fold(0.0f64, |a, &b| a.max(b.abs()));
    Ok(RiskNeutralFit {
        matrix,
        diagnostics: FitDiagnostics {
            weighted_rms: weighted_rms(&residuals, weights),
            max_abs_error,
            residuals,
            fitted,
            iterations,
            converged,
        },
    })
}
