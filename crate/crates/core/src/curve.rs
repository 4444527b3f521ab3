//! Continuously compounded zero curve.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, CvaError, Result};

/// Zero rates at tenors, linearly interpolated in rate, flat outside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroCurve {
    tenors: Vec<f64>,
    rates: Vec<f64>,
}

impl ZeroCurve {
    pub fn new(tenors: Vec<f64>, rates: Vec<f64>) -> Result<Self> {
        if tenors.is_empty() || tenors.len() != rates.len() {
            return Err(invalid("zero curve needs matching, non-empty tenors and rates"));
        }
        if tenors.iter().any(|t| !(*t > 0.0)) || tenors.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("zero curve tenors must be positive and increasing"));
        }
        if rates.iter().any(|r| !r.is_finite()) {
            return Err(invalid("zero rates must be finite"));
        }
        Ok(Self { tenors, rates })
    }

    pub fn flat(rate: f64) -> Self {
        Self {
            tenors: vec![1.0],
            rates: vec![rate],
        }
    }

    pub fn tenors(&self) -> &[f64] {
        &self.tenors
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    /// Parallel shift of every zero rate.
    pub fn shifted(&self, shift: f64) -> Self {
        Self {
            tenors: self.tenors.clone(),
            rates: self.rates.iter().map(|r| r + shift).collect(),
        }
    }

    pub fn zero_rate(&self, t: f64) -> f64 {
        let n = self.tenors.len();
        if t <= self.tenors[0] {
            return self.rates[0];
        }
        if t >= self.tenors[n - 1] {
            return self.rates[n - 1];
        }
        let i = self.tenors.partition_point(|&x| x <= t);
        let (t0, t1) = (self.tenors[i - 1], self.tenors[i]);
        let w = (t - t0) / (t1 - t0);
        self.rates[i - 1] + w * (self.rates[i] - self.rates[i - 1])
    }

    pub fn discount(&self, t: f64) -> f64 {
        (-self.zero_rate(t) * t).exp()
    }

    /// Instantaneous forward rate `d(z t)/dt`, right derivative at knots.
    pub fn forward(&self, t: f64) -> f64 {
        let n = self.tenors.len();
        if t < self.tenors[0] || t >= self.tenors[n - 1] {
            return self.zero_rate(t);
        }
        let i = self.tenors.partition_point(|&x| x <= t);
        let slope = (self.rates[i] - self.rates[i - 1]) / (self.tenors[i] - self.tenors[i - 1]);
        self.zero_rate(t) + t * slope
    }

    /// Reads `tenor, zero rate` lines. Blank lines, `#` comments and a
    /// non-numeric header line are skipped.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut tenors = Vec::new();
        let mut rates = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let err = |message: String| CvaError::Parse {
                path: origin.to_string(),
                line: lineno + 1,
                message,
            };
            if fields.len() != 2 {
                return Err(err(format!("expected `tenor, rate`, got {} fields", fields.len())));
            }
            match (fields[0].parse::<f64>(), fields[1].parse::<f64>()) {
                (Ok(t), Ok(r)) => {
                    tenors.push(t);
                    rates.push(r);
                }
                _ if tenors.is_empty() && fields[0].parse::<f64>().is_err() => continue,
                _ => return Err(err(format!("cannot parse `{line}`"))),
            }
        }
        Self::new(tenors, rates).map_err(|e| CvaError::Parse {
            path: origin.to_string(),
            line: 0,
            message: e.to_string(),
        })
    }
}
