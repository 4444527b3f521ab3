#![allow(clippy::approx_constant)]

use cvagrid_core::credit::calibrate::{fitted_pds, weighted_rms};
use cvagrid_core::credit::{risk_neutralize_matrix, FitWeights, LmSettings, PDTermStructure, TransitionMatrix};
use nalgebra::DMatrix;

fn curves(labels: &[&str], tenors: &[f64], rows_pct: &[&[f64]]) -> Vec<PDTermStructure> {
    labels
        .iter()
        .enumerate()
        .map(|(j, l)| {
            let pds = rows_pct.iter().map(|r| r[j] / 100.0).collect();
            PDTermStructure::new(*l, tenors.to_vec(), pds, 0.4).unwrap()
        })
        .collect()
}

fn labels(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

const T3_TENORS: [f64; 10] = [1.0, 2.0, 3.0, 5.0, 7.0, 10.0, 15.0, 20.0, 25.0, 30.0];
const T3: [[f64; 7]; 10] = [
    [0.51, 0.81, 0.92, 1.25, 2.87, 6.67, 12.50],
    [1.21, 1.93, 2.24, 3.06, 7.12, 13.85, 24.52],
    [2.13, 3.36, 3.94, 5.38, 12.36, 24.19, 37.30],
    [4.33, 6.75, 7.89, 10.74, 21.94, 41.23, 56.80],
    [6.37, 9.97, 11.69, 15.80, 31.00, 55.46, 70.68],
    [9.57, 14.96, 17.83, 23.79, 44.54, 72.65, 87.80],
    [14.37, 23.74, 27.89, 36.21, 58.11, 83.77, 97.28],
    [20.11, 32.38, 37.46, 48.07, 72.34, 97.30, 99.00],
    [25.05, 39.91, 46.12, 58.85, 84.17, 99.00, 99.00],
    [28.24, 46.17, 53.70, 68.20, 93.18, 99.00, 99.00],
];
const T5: [[f64; 7]; 10] = [
    [0.65, 1.07, 1.20, 1.51, 3.51, 7.56, 14.65],
    [1.37, 2.20, 2.51, 3.30, 7.46, 15.96, 27.15],
    [2.16, 3.39, 3.92, 5.35, 11.80, 24.54, 37.82],
    [3.92, 5.96, 7.12, 10.21, 21.23, 40.70, 54.67],
    [5.93, 8.80, 10.79, 15.81, 30.91, 54.44, 66.94],
    [9.38, 13.55, 17.04, 24.90, 44.41, 70.05, 79.37],
    [16.20, 22.55, 28.49, 39.62, 61.94, 85.52, 90.55],
    [24.08, 32.24, 39.81, 52.00, 73.39, 93.00, 95.62],
    [32.55, 41.82, 49.98, 61.67, 80.60, 96.53, 97.93],
    [41.09, 50.71, 58.65, 69.09, 85.24, 98.19, 98.98],
];
const RATINGS7: [&str; 7] = ["AAA", "AA", "A", "BAA", "BA", "B", "C"];

#[test]
fn four_state_fit_recovers_targets() {
    let targets = curves(
        &["A", "B", "C"],
        &[1.0, 2.0, 5.0, 10.0],
        &[
            &[0.31, 1.72, 6.28],
            &[0.72, 4.27, 11.80],
            &[2.60, 13.00, 25.60],
            &[7.00, 30.00, 48.00],
        ],
    );
    let fit = risk_neutralize_matrix(
        &labels(&["A", "B", "C", "D"]),
        None,
        &targets,
        &FitWeights::inverse_tenor(&targets),
        &LmSettings::default(),
    )
    .unwrap();
    fit.matrix.validate().unwrap();
    let weights = FitWeights::inverse_tenor(&targets);
    let published = TransitionMatrix::new(
        labels(&["A", "B", "C", "D"]),
        DMatrix::from_row_slice(
            4,
            4,
            &[
                0.96, 0.025, 0.0119, 0.0031, 0.004, 0.83, 0.1487, 0.0173, 0.0041, 0.01, 0.923, 0.0629, 0.0, 0.0, 0.0,
                1.0,
            ],
        ),
    )
    .unwrap();
    let reference: Vec<Vec<f64>> = fitted_pds(&published, &targets)
        .iter()
        .zip(&targets)
        .map(|(f, t)| f.iter().zip(&t.cumulative_pd).map(|(a, b)| a - b).collect())
        .collect();
    assert!(fit.diagnostics.weighted_rms <= weighted_rms(&reference, &weights));
    assert!(fit.diagnostics.converged);
    // Year-one fitted PD is the default column.
    let d = fit.matrix.default_index();
    for r in 0..3 {
        assert!((fit.diagnostics.fitted[r][0] - fit.matrix.q[(r, d)]).abs() < 1e-15);
    }
}

#[test]
fn seven_rating_fit_beats_reference_matrix() {
    let rows: Vec<&[f64]> = T3.iter().map(|r| &r[..]).collect();
    let targets = curves(&RATINGS7, &T3_TENORS, &rows);
    let weights = FitWeights::inverse_tenor(&targets);
    let reference: Vec<Vec<f64>> = (0..7)
        .map(|j| (0..10).map(|k| (T5[k][j] - T3[k][j]) / 100.0).collect())
        .collect();
    let bar = weighted_rms(&reference, &weights);
    let mut all = labels(&RATINGS7);
    all.push("D".into());
    let fit = risk_neutralize_matrix(&all, None, &targets, &weights, &LmSettings::default()).unwrap();
    assert!(fit.diagnostics.weighted_rms <= bar);
    let again = fitted_pds(&fit.matrix, &targets);
    assert_eq!(again, fit.diagnostics.fitted);
    fit.matrix.validate().unwrap();
}
