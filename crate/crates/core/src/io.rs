//! Text formats: PD and transition tables, entity and portfolio files,
//! exposure profiles.
//!
//! Tables have a header row whose first cell is a free label followed by
//! rating labels. PD tables then hold one row per tenor, matrices one row
//! per rating. Cells are separated by commas or tabs; a trailing `%` marks
//! a percentage, otherwise the value is a fraction.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::credit::{pd_from_flat_spread, CreditEntity, PDTermStructure, TransitionMatrix};
use crate::cva::{CSATerms, CVAResult, NettingSet};
use crate::error::{invalid, CvaError, Result};
use crate::valuation::Deal;

fn parse_err(origin: &str, line: usize, message: impl Into<String>) -> CvaError {
    CvaError::Parse {
        path: origin.to_string(),
        line,
        message: message.into(),
    }
}

fn split_cells(line: &str) -> Vec<&str> {
    let sep = if line.contains('\t') { '\t' } else { ',' };
    line.split(sep).map(str::trim).collect()
}

fn parse_cell(cell: &str) -> Option<f64> {
    match cell.strip_suffix('%') {
        Some(pct) => pct.trim().parse::<f64>().ok().map(|x| x / 100.0),
        None => cell.parse::<f64>().ok(),
    }
}

/// Non-blank, non-comment lines with their 1-based numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(k, l)| (k + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn header(text: &str, origin: &str) -> Result<(usize, Vec<String>)> {
    let (line, head) = content_lines(text)
        .next()
        .ok_or_else(|| parse_err(origin, 0, "empty table"))?;
    let cells = split_cells(head);
    if cells.len() < 2 {
        return Err(parse_err(origin, line, "header needs a label and at least one rating"));
    }
    Ok((line, cells[1..].iter().map(|s| s.to_string()).collect()))
}

/// Cumulative PD targets: tenors down, ratings across.
#[derive(Debug, Clone, PartialEq)]
pub struct PdTable {
    pub ratings: Vec<String>,
    pub tenors: Vec<f64>,
    /// `pds[k][j]`: tenor `k`, rating `j`.
    pub pds: Vec<Vec<f64>>,
}

impl PdTable {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let (head_line, ratings) = header(text, origin)?;
        let mut tenors = Vec::new();
        let mut pds = Vec::new();
        for (line, row) in content_lines(text).filter(|(l, _)| *l != head_line) {
            let cells = split_cells(row);
            if cells.len() != ratings.len() + 1 {
                return Err(parse_err(
                    origin,
                    line,
                    format!("expected {} cells, found {}", ratings.len() + 1, cells.len()),
                ));
            }
            let tenor = cells[0]
                .parse::<f64>()
                .map_err(|_| parse_err(origin, line, format!("bad tenor `{}`", cells[0])))?;
            if tenors.last().is_some_and(|&t| tenor <= t) || !(tenor > 0.0) {
                return Err(parse_err(origin, line, "tenors must be positive and increasing"));
            }
            let vals = cells[1..]
                .iter()
                .map(|c| {
                    parse_cell(c)
                        .filter(|p| (0.0..1.0).contains(p))
                        .ok_or_else(|| parse_err(origin, line, format!("bad probability `{c}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            tenors.push(tenor);
            pds.push(vals);
        }
        if tenors.is_empty() {
            return Err(parse_err(origin, head_line, "table has no rows"));
        }
        Ok(Self { ratings, tenors, pds })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?, &path.display().to_string())
    }

    /// One PD curve per rating.
    pub fn curves(&self, recovery: f64) -> Result<Vec<PDTermStructure>> {
        (0..self.ratings.len())
            .map(|j| {
                let pds = self.pds.iter().map(|row| row[j]).collect();
                PDTermStructure::new(self.ratings[j].clone(), self.tenors.clone(), pds, recovery)
            })
            .collect()
    }

    pub fn from_rows(ratings: Vec<String>, tenors: Vec<f64>, by_rating: &[Vec<f64>]) -> Self {
        let pds = (0..tenors.len())
            .map(|k| by_rating.iter().map(|r| r[k]).collect())
            .collect();
        Self { ratings, tenors, pds }
    }

    pub fn format(&self, label: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{label},{}", self.ratings.join(","));
        for (t, row) in self.tenors.iter().zip(&self.pds) {
            let cells: Vec<String> = row.iter().map(|p| format!("{:.4}%", p * 100.0)).collect();
            let _ = writeln!(out, "{t},{}", cells.join(","));
        }
        out
    }
}

pub fn parse_matrix(text: &str, origin: &str) -> Result<TransitionMatrix> {
    let (head_line, ratings) = header(text, origin)?;
    let n = ratings.len();
    let mut values = Vec::with_capacity(n * n);
    let mut rows = 0;
    for (line, row) in content_lines(text).filter(|(l, _)| *l != head_line) {
        let cells = split_cells(row);
        if cells.len() != n + 1 {
            return Err(parse_err(
                origin,
                line,
                format!("expected {} cells, found {}", n + 1, cells.len()),
            ));
        }
        if rows >= n || cells[0] != ratings[rows] {
            return Err(parse_err(origin, line, format!("unexpected row label `{}`", cells[0])));
        }
        for c in &cells[1..] {
            values.push(parse_cell(c).ok_or_else(|| parse_err(origin, line, format!("bad probability `{c}`")))?);
        }
        rows += 1;
    }
    if rows != n {
        return Err(parse_err(origin, 0, format!("expected {n} rows, found {rows}")));
    }
    TransitionMatrix::new(ratings, DMatrix::from_row_slice(n, n, &values))
        .map_err(|e| parse_err(origin, 0, e.to_string()))
}

pub fn format_matrix(matrix: &TransitionMatrix, label: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{label},{}", matrix.ratings.join(","));
    for (i, r) in matrix.ratings.iter().enumerate() {
        let cells: Vec<String> = (0..matrix.n())
            .map(|j| format!("{:.4}%", matrix.q[(i, j)] * 100.0))
            .collect();
        let _ = writeln!(out, "{r},{}", cells.join(","));
    }
    out
}

/// An entity as written in an entity file: either a flat spread or a PD
/// curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntitySpec {
    pub name: String,
    pub rating: String,
    #[serde(default)]
    pub spread: Option<f64>,
    #[serde(default)]
    pub pd_tenors: Option<Vec<f64>>,
    #[serde(default)]
    pub pd: Option<Vec<f64>>,
    pub recovery: f64,
    #[serde(default)]
    pub loadings: Vec<f64>,
    #[serde(default)]
    pub fat_tail_df: Option<f64>,
}

const SPREAD_TENORS: [f64; 6] = [1.0, 2.0, 3.0, 5.0, 7.0, 10.0];

impl EntitySpec {
    pub fn resolve(&self) -> Result<CreditEntity> {
        let pd_curve = match (self.spread, &self.pd_tenors, &self.pd) {
            (Some(s), None, None) => pd_from_flat_spread(&self.name, s, self.recovery, &SPREAD_TENORS)?,
            (None, Some(t), Some(p)) => PDTermStructure::new(self.name.clone(), t.clone(), p.clone(), self.recovery)?,
            _ => {
                return Err(invalid(format!(
                    "{}: give either `spread` or both `pd_tenors` and `pd`",
                    self.name
                )))
            }
        };
        Ok(CreditEntity {
            name: self.name.clone(),
            current_rating: self.rating.clone(),
            pd_curve,
            recovery: self.recovery,
            credit_loadings: if self.loadings.is_empty() {
                vec![0.0]
            } else {
                self.loadings.clone()
            },
            fat_tail_df: self.fat_tail_df,
        })
    }
}

pub fn load_entities(path: &Path) -> Result<Vec<CreditEntity>> {
    let specs: Vec<EntitySpec> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let mut names = BTreeSet::new();
    specs
        .iter()
        .map(|s| {
            if !names.insert(s.name.as_str()) {
                return Err(invalid(format!("duplicate entity {}", s.name)));
            }
            s.resolve()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NettingSetSpec {
    pub id: String,
    pub counterparty: String,
    #[serde(rename = "self")]
    pub self_entity: String,
    pub deal_ids: Vec<String>,
    #[serde(default)]
    pub csa: CSATerms,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Portfolio {
    pub deals: Vec<Deal>,
    #[serde(default)]
    pub netting_sets: Vec<NettingSetSpec>,
}

impl Portfolio {
    pub fn from_file(path: &Path) -> Result<Self> {
        let p: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        for d in &self.deals {
            d.validate()?;
            if !ids.insert(d.id()) {
                return Err(invalid(format!("duplicate deal id {}", d.id())));
            }
        }
        let mut owned = BTreeSet::new();
        for ns in &self.netting_sets {
            for id in &ns.deal_ids {
                if !ids.contains(id.as_str()) {
                    return Err(invalid(format!("netting set {} references unknown deal {id}", ns.id)));
                }
                if !owned.insert(id.as_str()) {
                    return Err(invalid(format!("deal {id} belongs to more than one netting set")));
                }
            }
        }
        Ok(())
    }

    pub fn netting_sets(&self, entities: &[CreditEntity]) -> Result<Vec<NettingSet>> {
        let find = |name: &str| {
            entities
                .iter()
                .find(|e| e.name == name)
                .cloned()
                .ok_or_else(|| invalid(format!("unknown entity {name}")))
        };
        self.netting_sets
            .iter()
            .map(|ns| {
                Ok(NettingSet {
                    id: ns.id.clone(),
                    counterparty: find(&ns.counterparty)?,
                    self_entity: find(&ns.self_entity)?,
                    deal_ids: ns.deal_ids.clone(),
                    csa: ns.csa.clone(),
                })
            })
            .collect()
    }

    /// Event dates of every deal, for grid construction.
    pub fn event_dates(&self) -> Vec<(f64, crate::grid::SourceTag)> {
        self.deals.iter().flat_map(Deal::tagged_dates).collect()
    }
}

/// `t,EE,ENE` rows.
pub fn format_profile(result: &CVAResult) -> String {
    let mut out = String::from("t,EE,ENE\n");
    for ((t, ee), ene) in result.times.iter().zip(&result.ee_profile).zip(&result.ene_profile) {
        let _ = writeln!(out, "{t},{ee:.10e},{ene:.10e}");
    }
    out
}
