//! Generic simulation time grid.

use std::hash::Hasher;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, CvaError, Result};

/// Two grid points closer than this (in years) are the same point.
pub const DEDUP_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceTag {
    Cashflow,
    Exercise,
    Synthetic,
}

impl SourceTag {
    pub fn code(self) -> u8 {
        match self {
            SourceTag::Cashflow => 0,
            SourceTag::Exercise => 1,
            SourceTag::Synthetic => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(SourceTag::Cashflow),
            1 => Some(SourceTag::Exercise),
            2 => Some(SourceTag::Synthetic),
            _ => None,
        }
    }

    fn priority(self) -> u8 {
        match self {
            SourceTag::Exercise => 2,
            SourceTag::Cashflow => 1,
            SourceTag::Synthetic => 0,
        }
    }
}

/// Synthetic point spacing: `step` years until `until` years, segment by
/// segment. The last segment extends to the horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityRule {
    pub segments: Vec<DensitySegment>,
    /// Synthetic points closer than this to an event date are dropped.
    #[serde(default)]
    pub min_gap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensitySegment {
    pub until: f64,
    pub step: f64,
}

impl Default for DensityRule {
    /// Monthly to 1y, quarterly to 5y, annual thereafter.
    fn default() -> Self {
        Self {
            segments: vec![
                DensitySegment {
                    until: 1.0,
                    step: 1.0 / 12.0,
                },
                DensitySegment { until: 5.0, step: 0.25 },
                DensitySegment {
                    until: f64::INFINITY,
                    step: 1.0,
                },
            ],
            min_gap: 0.0,
        }
    }
}

impl DensityRule {
    /// A single uniform spacing.
    pub fn uniform(step: f64) -> Self {
        Self {
            segments: vec![DensitySegment {
                until: f64::INFINITY,
                step,
            }],
            min_gap: 0.0,
        }
    }

    /// No synthetic points at all: the grid is `{0, events, horizon}`.
    pub fn events_only() -> Self {
        Self {
            segments: Vec::new(),
            min_gap: 0.0,
        }
    }

    fn points(&self, horizon: f64) -> Vec<f64> {
        let mut out = Vec::new();
        let mut start = 0.0;
        for seg in &self.segments {
            if start >= horizon {
                break;
            }
            let end = seg.until.min(horizon);
            if seg.step > 0.0 {
                let mut k = 1u64;
                loop {
                    let t = start + k as f64 * seg.step;
                    if t > end + DEDUP_TOLERANCE {
                        break;
                    }
                    out.push(t.min(end));
                    k += 1;
                }
            }
            start = end;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    times: Vec<f64>,
    tags: Vec<SourceTag>,
}

impl TimeGrid {
    /// Builds a grid from explicit points. Points must start at 0 and be
    /// strictly increasing.
    pub fn from_times(times: Vec<f64>) -> Result<Self> {
        if times.first() != Some(&0.0) {
            return Err(invalid("time grid must start at 0"));
        }
        if times.windows(2).any(|w| w[1] - w[0] <= DEDUP_TOLERANCE) {
            return Err(invalid("time grid must be strictly increasing"));
        }
        let tags = vec![SourceTag::Synthetic; times.len()];
        Ok(Self { times, tags })
    }

    /// Like [`TimeGrid::from_times`] with explicit source tags.
    pub fn from_tagged(times: Vec<f64>, tags: Vec<SourceTag>) -> Result<Self> {
        if tags.len() != times.len() {
            return Err(invalid("one source tag per grid point is required"));
        }
        Ok(Self {
            tags,
            ..Self::from_times(times)?
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn tags(&self) -> &[SourceTag] {
        &self.tags
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("grid is never empty")
    }

    /// Index of the grid point equal to `t` within the dedup tolerance.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let i = self.times.partition_point(|&x| x < t - DEDUP_TOLERANCE);
        (i < self.times.len() && (self.times[i] - t).abs() <= DEDUP_TOLERANCE).then_some(i)
    }

    /// Index of the grid point equal to `t`, or an error naming the date.
    pub fn require_index(&self, t: f64) -> Result<usize> {
        self.index_of(t)
            .ok_or_else(|| CvaError::GridMismatch(format!("date {t} is not a grid point")))
    }

    /// 64-bit FNV-1a over the little-endian bytes of the grid times.
    pub fn hash(&self) -> u64 {
        let mut h = FnvHasher::default();
        for t in &self.times {
            h.write(&t.to_le_bytes());
        }
        h.finish()
    }
}

/// Builds the grid over `[0, horizon]` with every event date marked as a
/// cashflow date.
pub fn build_time_grid(horizon: f64, event_dates: &[f64], rule: &DensityRule) -> Result<TimeGrid> {
    let events: Vec<(f64, SourceTag)> = event_dates.iter().map(|&t| (t, SourceTag::Cashflow)).collect();
    build_time_grid_tagged(horizon, &events, rule)
}

/// Builds the grid: `0`, the horizon and all events, plus the synthetic
/// points of `rule`. Events within [`DEDUP_TOLERANCE`] of each other merge.
pub fn build_time_grid_tagged(horizon: f64, events: &[(f64, SourceTag)], rule: &DensityRule) -> Result<TimeGrid> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(invalid(format!("horizon must be positive and finite, got {horizon}")));
    }
    for &(t, _) in events {
        if !(t >= -DEDUP_TOLERANCE && t <= horizon + DEDUP_TOLERANCE) {
            return Err(CvaError::EventOutsideHorizon { date: t, horizon });
        }
    }
    let mut fixed: Vec<(f64, SourceTag)> = events.iter().map(|&(t, tag)| (t.clamp(0.0, horizon), tag)).collect();
    fixed.push((0.0, SourceTag::Cashflow));
    fixed.push((horizon, SourceTag::Cashflow));
    fixed.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut points = fixed.clone();
    for t in rule.points(horizon) {
        let near_event = fixed
            .iter()
            .any(|&(e, _)| (e - t).abs() < rule.min_gap.max(DEDUP_TOLERANCE));
        if !near_event {
            points.push((t, SourceTag::Synthetic));
        }
    }
    points.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut times: Vec<f64> = Vec::with_capacity(points.len());
    let mut tags: Vec<SourceTag> = Vec::with_capacity(points.len());
    for (t, tag) in points {
        match times.last() {
            Some(&last) if t - last <= DEDUP_TOLERANCE => {
                let slot = tags.last_mut().expect("parallel vectors");
                if tag.priority() > slot.priority() {
                    *slot = tag;
                }
            }
            _ => {
                times.push(t);
                tags.push(tag);
            }
        }
    }
    // Point 0 carries no cashflow of its own.
    times[0] = 0.0;
    Ok(TimeGrid { times, tags })
}
