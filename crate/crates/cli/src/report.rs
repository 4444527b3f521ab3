use std::collections::BTreeMap;
use std::path::Path;

use anyhow::Result;
use cvagrid_core::cva::CVAResult;
use cvagrid_core::gridstore::{write_atomic, ScenarioDescriptor};
use serde::Serialize;

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

/// Left-aligned first column, right-aligned numbers.
pub fn print_table(headers: &[String], rows: &[Vec<String>]) {
    let mut width: Vec<usize> = headers.iter().map(String::len).collect();
    for row in rows {
        for (w, cell) in width.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: &[String]| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&width)
            .enumerate()
            .map(|(k, (c, w))| if k == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        println!("{}", parts.join("  "));
    };
    line(headers);
    println!(
        "{}",
        "-".repeat(width.iter().sum::<usize>() + 2 * width.len().saturating_sub(1))
    );
    for row in rows {
        line(row);
    }
}

pub fn headers(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

pub fn num(x: f64) -> String {
    format!("{x:.6}")
}

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub market_seed: u64,
    pub credit_seed: u64,
    pub n_paths: usize,
    pub oversample: usize,
    pub grid_hash: String,
    pub scenario_sets: Vec<ScenarioDescriptor>,
    pub input_hashes: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    pub left: String,
    pub right: String,
    pub difference: f64,
    pub combined_standard_error: f64,
    pub within_3_se: bool,
}

impl Comparison {
    pub fn new(left: (&str, &CVAResult), right: (&str, &CVAResult)) -> Self {
        let difference = left.1.cva - right.1.cva;
        let se = left.1.mc_standard_error.hypot(right.1.mc_standard_error);
        Self {
            left: left.0.to_string(),
            right: right.0.to_string(),
            difference,
            combined_standard_error: se,
            within_3_se: difference.abs() <= 3.0 * se,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct NettingSetReport {
    pub id: String,
    pub counterparty: String,
    pub deal_ids: Vec<String>,
    pub results: BTreeMap<String, CVAResult>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub comparison: Vec<Comparison>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub framework: String,
    pub mode: String,
    pub provenance: Provenance,
    pub netting_sets: Vec<NettingSetReport>,
}

pub fn print_results(report: &RunReport) {
    let rows: Vec<Vec<String>> = report
        .netting_sets
        .iter()
        .flat_map(|ns| {
            ns.results.iter().map(move |(fw, r)| {
                vec![
                    ns.id.clone(),
                    fw.clone(),
                    num(r.cva),
                    num(r.mc_standard_error),
                    num(r.dva),
                    num(r.dva_standard_error),
                    num(r.total),
                ]
            })
        })
        .collect();
    print_table(
        &headers(&["netting set", "framework", "CVA", "SE", "DVA", "SE", "total"]),
        &rows,
    );
    for ns in &report.netting_sets {
        for c in &ns.comparison {
            println!(
                "{}: {} - {} = {:.6} (3 SE = {:.6}) {}",
                ns.id,
                c.left,
                c.right,
                c.difference,
                3.0 * c.combined_standard_error,
                if c.within_3_se { "agree" } else { "DISAGREE" }
            );
        }
    }
}
