use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{Context, Result};
use cvagrid_core::credit::{risk_neutralize_matrix, FitWeights, LmSettings};
use cvagrid_core::gridstore::write_atomic;
use cvagrid_core::io::{format_matrix, parse_matrix, PdTable};
use serde::Serialize;

use crate::report::{print_table, write_json};
use crate::{NotConverged, WeightScheme};

#[derive(Debug, clap::Args)]
pub struct CalibrateArgs {
    /// Cumulative PD table: tenors down, live ratings across.
    #[arg(long)]
    pub pd_table: PathBuf,
    /// Starting matrix; a diagonal-heavy guess is used when absent.
    #[arg(long)]
    pub seed_matrix: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "inverse-tenor")]
    pub weights: WeightScheme,
    #[arg(long, default_value = "D")]
    pub default_label: String,
    #[arg(long, env = "CVAGRID_OUT_DIR", default_value = "calibration")]
    pub out: PathBuf,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    #[arg(long)]
    pub restarts: Option<usize>,
}

#[derive(Serialize)]
struct CalibrationReport<'a> {
    ratings: &'a [String],
    matrix: Vec<Vec<f64>>,
    tenors: &'a [f64],
    fitted: &'a [Vec<f64>],
    residuals: &'a [Vec<f64>],
    weighted_rms: f64,
    max_abs_error: f64,
    iterations: usize,
    converged: bool,
    settings: LmSettings,
    pd_table_hash: String,
}

pub fn run(args: &CalibrateArgs) -> Result<()> {
    let bytes = std::fs::read(&args.pd_table)
        .map_err(|e| crate::input_error(format!("cannot read {}: {e}", args.pd_table.display())))?;
    let origin = args.pd_table.display().to_string();
    let table = PdTable::parse(&String::from_utf8_lossy(&bytes), &origin)?;
    let targets = table.curves(0.0)?;
    let mut ratings = table.ratings.clone();
    ratings.push(args.default_label.clone());
    let seed = match &args.seed_matrix {
        Some(p) => Some(parse_matrix(&std::fs::read_to_string(p)?, &p.display().to_string())?),
        None => None,
    };
    let weights = match args.weights {
        WeightScheme::InverseTenor => FitWeights::inverse_tenor(&targets),
        WeightScheme::Uniform => FitWeights::uniform(&targets),
    };
    let mut settings = LmSettings::default();
    if let Some(n) = args.max_iterations {
        settings.max_iterations = n;
    }
    if let Some(n) = args.restarts {
        settings.restarts = n;
    }
    let fit = risk_neutralize_matrix(&ratings, seed.as_ref(), &targets, &weights, &settings)
        .context("stage calibrate-matrix")?;
    let d = &fit.diagnostics;

    std::fs::create_dir_all(&args.out)?;
    write_atomic(
        &args.out.join("matrix.csv"),
        format_matrix(&fit.matrix, "Year 1").as_bytes(),
    )?;
    let fitted = PdTable::from_rows(table.ratings.clone(), table.tenors.clone(), &d.fitted);
    write_atomic(&args.out.join("fitted.csv"), fitted.format("Year").as_bytes())?;
    let mut res = format!("Year,{}\n", table.ratings.join(","));
    for (k, t) in table.tenors.iter().enumerate() {
        let cells: Vec<String> = d.residuals.iter().map(|r| format!("{:.6e}", r[k])).collect();
        let _ = writeln!(res, "{t},{}", cells.join(","));
    }
    write_atomic(&args.out.join("residuals.csv"), res.as_bytes())?;
    let n = fit.matrix.n();
    write_json(
        &args.out.join("calibration.json"),
        &CalibrationReport {
            ratings: &fit.matrix.ratings,
            matrix: (0..n).map(|i| (0..n).map(|j| fit.matrix.q[(i, j)]).collect()).collect(),
            tenors: &table.tenors,
            fitted: &d.fitted,
            residuals: &d.residuals,
            weighted_rms: d.weighted_rms,
            max_abs_error: d.max_abs_error,
            iterations: d.iterations,
            converged: d.converged,
            settings,
            pd_table_hash: format!("{:016x}", crate::config::fnv_bytes(&bytes)),
        },
    )?;

    let mut headers = vec!["Year 1".to_string()];
    headers.extend(fit.matrix.ratings.iter().cloned());
    let rows: Vec<Vec<String>> = (0..n)
        .map(|i| {
            let mut row = vec![fit.matrix.ratings[i].clone()];
            row.extend((0..n).map(|j| format!("{:.4}%", fit.matrix.q[(i, j)] * 100.0)));
            row
        })
        .collect();
    print_table(&headers, &rows);
    println!(
        "weighted RMS {:.6e}  max |error| {:.6e}  iterations {}",
        d.weighted_rms, d.max_abs_error, d.iterations
    );
    println!("wrote {}", args.out.display());
    if !d.converged {
        return Err(NotConverged(format!("optimizer stopped after {} iterations", d.iterations)).into());
    }
    Ok(())
}
