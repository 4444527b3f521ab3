//! Structural default and rating thresholds on standardized asset returns.
//!
//! The cumulative standardized return of an entity at grid time `t_i` is
//! `X_i = Σ_{j≤i} √Δt_j · z_j / √t_i`, a Gaussian random walk re-scaled to
//! unit variance at every step. An entity defaults at the first grid time
//! where `X_i` falls below `H_d(i)` (first passage observed on the grid),
//! and a surviving entity's rating is the band of `X_i` between the rating
//! boundaries.
//!
//! Thresholds are calibrated on the law of surviving paths, so the
//! probability of first passage by `t_i` equals the target cumulative PD and
//! the surviving population splits across ratings in the target
//! proportions. At the first grid point this is the plain quantile
//! `N⁻¹(PD)`. Later points propagate the survivor density of `X` on a
//! fixed quadrature grid with exact Gaussian integration of a piecewise
//! linear density.

use serde::{Deserialize, Serialize};

use crate::dist::{norm_cdf, norm_pdf, norm_quantile, ReturnDistribution};
use crate::error::{invalid, Result};
use crate::grid::TimeGrid;
use crate::rng::{Domain, PathDraws};

use super::entity::CreditEntity;
use super::pd::PDTermStructure;

const QUAD_HALF_WIDTH: f64 = 9.0;
const QUAD_CELLS: usize = 720;
/// Kernel mass beyond this many standard deviations is dropped.
const KERNEL_CUTOFF: f64 = 9.0;

/// Converts a normal-world threshold to a fat-tailed one preserving the
/// exceedance probability: `F⁻¹(N(h))`.
pub fn fat_tail_convert(h_normal: f64, dist: &ReturnDistribution) -> f64 {
    if h_normal.is_infinite() {
        return h_normal;
    }
    match dist {
        ReturnDistribution::Normal => h_normal,
        _ => dist.quantile(norm_cdf(h_normal)),
    }
}

/// Rating boundaries per grid time. `boundaries[i][r]` is the lower edge of
/// live rating `r` at grid point `i`; the last entry is the default
/// threshold. Row 0 (time zero) is empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingThresholds {
    pub entity: String,
    /// Rating labels, default last.
    pub ratings: Vec<String>,
    pub initial_rating: usize,
    pub times: Vec<f64>,
    pub distribution: ReturnDistribution,
    /// Boundaries in the entity's return space.
    pub boundaries: Vec<Vec<f64>>,
    /// The same boundaries mapped to the standard normal scale used by the
    /// simulation.
    pub normal_boundaries: Vec<Vec<f64>>,
    /// Target cumulative PD per grid time.
    pub target_pd: Vec<f64>,
}

impl RatingThresholds {
    pub fn default_threshold(&self, i: usize) -> f64 {
        *self.boundaries[i].last().expect("at least one boundary")
    }

    pub fn n_live(&self) -> usize {
        self.boundaries.get(1).map_or(0, Vec::len)
    }

    /// Band of a standardized (normal-scale) return at grid point `i`:
    /// `Some(rating)` or `None` for default.
    #[inline]
    pub fn classify(&self, i: usize, x: f64) -> Option<usize> {
        let b = &self.normal_boundaries[i];
        // Boundaries are non-increasing; count those above x.
        let r = b.iter().take_while(|&&h| x < h).count();
        (r < b.len()).then_some(r)
    }
}

/// Piecewise-linear density of surviving paths on the quadrature grid.
struct SurvivorDensity {
    nodes: Vec<f64>,
    values: Vec<f64>,
    /// Paths below this value have defaulted.
    cut: f64,
}

impl SurvivorDensity {
    fn h(&self) -> f64 {
        self.nodes[1] - self.nodes[0]
    }

    /// Density of `a·X + s·Z` over the surviving part, at every node.
    fn propagate(&self, a: f64, s: f64) -> Vec<f64> {
        let h = self.h();
        let n = self.nodes.len();
        let first_cell = if self.cut <= self.nodes[0] {
            0
        } else {
            (((self.cut - self.nodes[0]) / h).floor() as usize).min(n - 1)
        };
        let mut out = vec![0.0; n];
        for (m, z) in self.nodes.iter().enumerate() {
            let lo = ((z - KERNEL_CUTOFF * s) / a).max(self.cut);
            let hi = (z + KERNEL_CUTOFF * s) / a;
            if hi <= lo {
                continue;
            }
            let c0 = first_cell.max(((lo - self.nodes[0]) / h).floor().max(0.0) as usize);
            let c1 = (((hi - self.nodes[0]) / h).ceil().max(0.0) as usize).min(n - 1);
            let mut acc = 0.0;
            let mut prev: Option<(f64, f64, f64)> = None;
            for c in c0..c1 {
                let (x0, x1) = (self.nodes[c], self.nodes[c + 1]);
                let (g0, g1) = (self.values[c], self.values[c + 1]);
                let beta = (g1 - g0) / h;
                let alpha = g0 - beta * x0;
                let left = x0.max(self.cut);
                if left >= x1 {
                    continue;
                }
                let edge = |y: f64| {
                    let u = (a * y - z) / s;
                    (y, norm_cdf(u), norm_pdf(u))
                };
                let e0 = match prev {
                    Some(p) if p.0 == left => p,
                    _ => edge(left),
                };
                let e1 = edge(x1);
                let d_cdf = e1.1 - e0.1;
                let d_pdf = e1.2 - e0.2;
                acc += alpha * d_cdf / a + beta * (z * d_cdf - s * d_pdf) / (a * a);
                prev = Some(e1);
            }
            out[m] = acc.max(0.0);
        }
        out
    }
}

/// Cumulative mass of a piecewise-linear density at every node.
fn cumulative(nodes: &[f64], values: &[f64]) -> Vec<f64> {
    let mut cum = vec![0.0; nodes.len()];
    for c in 1..nodes.len() {
        cum[c] = cum[c - 1] + 0.5 * (values[c - 1] + values[c]) * (nodes[c] - nodes[c - 1]);
    }
    cum
}

/// Point where the cumulative mass of a piecewise-linear density reaches
/// `target`.
fn invert_cumulative(nodes: &[f64], values: &[f64], cum: &[f64], target: f64) -> f64 {
    if target <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let total = *cum.last().expect("non-empty");
    if target >= total {
        return f64::INFINITY;
    }
    let c = cum.partition_point(|&m| m < target).max(1) - 1;
    let h = nodes[c + 1] - nodes[c];
    let (g0, g1) = (values[c], values[c + 1]);
    let need = target - cum[c];
    // need = g0·d + (g1 − g0)/(2h)·d²
    let k = (g1 - g0) / (2.0 * h);
    let d = if k.abs() < 1e-14 {
        if g0 > 0.0 {
            need / g0
        } else {
            0.0
        }
    } else {
        let disc = (g0 * g0 + 4.0 * k * need).max(0.0);
        // Stable root of k·d² + g0·d − need = 0.
        2.0 * need / (g0 + disc.sqrt())
    };
    nodes[c] + d.clamp(0.0, h)
}

/// Calibrates rating and default thresholds for one entity.
///
/// `rating_distribution[i]` is the entity's rating distribution at grid time
/// `i` over `ratings` (last entry default), typically from
/// [`super::matrix::Propagation::distribution_at`]. The default mass is
/// replaced by the entity's PD curve and the live masses are scaled to fill
/// the rest.
pub fn calibrate_thresholds(
    entity: &CreditEntity,
    ratings: &[String],
    rating_distribution: &[Vec<f64>],
    grid: &TimeGrid,
) -> Result<RatingThresholds> {
    let initial_rating = entity.validate(ratings)?;
    if rating_distribution.first().map(Vec::len) != Some(ratings.len()) {
        return Err(invalid("rating distribution does not match the rating scale"));
    }
    let mut th = calibrate_boundaries(
        &entity.name,
        &entity.pd_curve,
        rating_distribution,
        grid,
        entity.distribution(),
    )?;
    th.ratings = ratings.to_vec();
    th.initial_rating = initial_rating;
    Ok(th)
}

fn calibrate_boundaries(
    entity: &str,
    pd_curve: &PDTermStructure,
    rating_distribution: &[Vec<f64>],
    grid: &TimeGrid,
    distribution: ReturnDistribution,
) -> Result<RatingThresholds> {
    let times = grid.times();
    let nt = times.len();
    if rating_distribution.len() != nt {
        return Err(invalid("rating distribution must cover every grid time"));
    }
    let n_live = rating_distribution[0].len().saturating_sub(1);
    if n_live == 0 {
        return Err(invalid("rating distribution needs at least one live rating"));
    }
    if let ReturnDistribution::StudentT { df } = distribution {
        if !(df > 0.0) {
            return Err(invalid("fat-tail degrees of freedom must be positive"));
        }
    }

    let target_pd = pd_curve.on_grid(times);
    // Live masses, scaled to the entity's survival probability.
    let mut live_masses = Vec::with_capacity(nt);
    for (i, dist) in rating_distribution.iter().enumerate() {
        if dist.len() != n_live + 1 || dist.iter().any(|&p| !(p >= -1e-15)) {
            return Err(invalid(format!("invalid rating distribution at grid point {i}")));
        }
        if (dist.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(invalid(format!(
                "rating distribution at grid point {i} does not sum to 1"
            )));
        }
        if target_pd[i] >= 1.0 - 1e-12 {
            return Err(invalid(format!("{entity}: PD at t={} is too close to 1", times[i])));
        }
        let live: f64 = dist[..n_live].iter().sum();
        let masses: Vec<f64> = if live > 0.0 {
            dist[..n_live]
                .iter()
                .map(|p| p.max(0.0) / live * (1.0 - target_pd[i]))
                .collect()
        } else {
            return Err(invalid(format!("no live rating mass at grid point {i}")));
        };
        live_masses.push(masses);
    }

    let mut normal_boundaries = vec![Vec::new(); nt];
    let nodes: Vec<f64> = (0..=QUAD_CELLS)
        .map(|k| -QUAD_HALF_WIDTH + 2.0 * QUAD_HALF_WIDTH * k as f64 / QUAD_CELLS as f64)
        .collect();
    let mut survivors: Option<SurvivorDensity> = None;

    for i in 1..nt {
        let masses = &live_masses[i];
        let new_default = (target_pd[i] - target_pd[i - 1]).max(0.0);
        let mut bounds = vec![0.0; n_live];
        match survivors.take() {
            None => {
                // First step: X ~ N(0, 1) exactly.
                let mut cum = target_pd[i];
                bounds[n_live - 1] = norm_quantile(cum);
                for r in (0..n_live - 1).rev() {
                    cum += masses[r + 1];
                    bounds[r] = norm_quantile(cum.min(1.0));
                }
                let values: Vec<f64> = nodes.iter().map(|&x| norm_pdf(x)).collect();
                survivors = Some(SurvivorDensity {
                    nodes: nodes.clone(),
                    values,
                    cut: bounds[n_live - 1],
                });
            }
            Some(prev) => {
                let a = (times[i - 1] / times[i]).sqrt();
                let s = ((times[i] - times[i - 1]) / times[i]).sqrt();
                let values = prev.propagate(a, s);
                let cum = cumulative(&nodes, &values);
                let alive_before = *cum.last().expect("non-empty");
                let h_d = invert_cumulative(&nodes, &values, &cum, new_default);
                bounds[n_live - 1] = h_d;
                let survive = (alive_before - new_default).max(0.0);
                let live_total: f64 = masses.iter().sum();
                let mut acc = new_default;
                for r in (0..n_live - 1).rev() {
                    acc += if live_total > 0.0 {
                        masses[r + 1] / live_total * survive
                    } else {
                        0.0
                    };
                    bounds[r] = invert_cumulative(&nodes, &values, &cum, acc);
                }
                survivors = Some(SurvivorDensity {
                    nodes: nodes.clone(),
                    values,
                    cut: h_d,
                });
            }
        }
        // Keep the band order even where a band is empty.
        for r in 1..n_live {
            if bounds[r] > bounds[r - 1] {
                bounds[r] = bounds[r - 1];
            }
        }
        normal_boundaries[i] = bounds;
    }

    let boundaries = normal_boundaries
        .iter()
        .map(|row| row.iter().map(|&h| fat_tail_convert(h, &distribution)).collect())
        .collect();
    Ok(RatingThresholds {
        entity: entity.to_string(),
        ratings: Vec::new(),
        initial_rating: 0,
        times: times.to_vec(),
        distribution,
        boundaries,
        normal_boundaries,
        target_pd,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StochasticThresholdParams {
    pub mean_level: f64,
    pub reversion_speed: f64,
    pub volatility: f64,
}

impl StochasticThresholdParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.reversion_speed >= 0.0) || !(self.volatility >= 0.0) {
            return Err(invalid("threshold reversion speed and volatility must be >= 0"));
        }
        Ok(())
    }
}

/// Euler scheme for `dH = k(a − H)dt + σ dw` on the grid. Returns the
/// threshold time-major, `(i, p)` at `i * n_paths + p`.
pub fn evolve_stochastic_threshold(
    params: &StochasticThresholdParams,
    h0: f64,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
    stream: u16,
) -> Result<Vec<f64>> {
    params.validate()?;
    let times = grid.times();
    let nt = times.len();
    let mut out = vec![0.0; nt * n_paths];
    for p in 0..n_paths {
        let mut draws = PathDraws::new(seed, Domain::Threshold(stream), p as u64, 1);
        let mut h = h0;
        out[p] = h;
        for i in 1..nt {
            let dt = times[i] - times[i - 1];
            let shock = if params.volatility > 0.0 {
                params.volatility * dt.sqrt() * draws.normal(i - 1, 0)
            } else {
                0.0
            };
            h += params.reversion_speed * (params.mean_level - h) * dt + shock;
            out[i * n_paths + p] = h;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::credit::pd::pd_from_flat_spread;
    use crate::grid::{build_time_grid, DensityRule};
    use approx::assert_abs_diff_eq;

    fn single_rating(nt: usize) -> Vec<Vec<f64>> {
        vec![vec![1.0, 0.0]; nt]
    }

    #[test]
    fn one_period_quantiles() {
        let g = build_time_grid(1.0, &[], &DensityRule::events_only()).unwrap();
        for (pd, h) in [(0.5, 0.0), (0.025, -1.959963984540054)] {
            let curve = PDTermStructure::new("x", vec![1.0], vec![pd], 0.4).unwrap();
            let th = calibrate_boundaries("x", &curve, &single_rating(2), &g, ReturnDistribution::Normal).unwrap();
            assert_abs_diff_eq!(th.default_threshold(1), h, epsilon = 1e-12);
        }
    }

    #[test]
    fn fat_tail_examples() {
        assert_eq!(fat_tail_convert(0.0, &ReturnDistribution::StudentT { df: 3.0 }), 0.0);
        assert_abs_diff_eq!(
            fat_tail_convert(-1.95996, &ReturnDistribution::StudentT { df: 3.0 }),
            -3.1824,
            epsilon = 1e-3
        );
        assert_eq!(fat_tail_convert(-1.7, &ReturnDistribution::Normal), -1.7);
    }

    /// Independent oracle: direct simulation of the re-scaled random walk
    /// with first-passage default.
    #[test]
    fn first_passage_frequency_matches_target() {
        let g = build_time_grid(5.0, &[], &DensityRule::uniform(0.5)).unwrap();
        let curve = pd_from_flat_spread("x", 0.03, 0.4, &[5.0]).unwrap();
        let th = calibrate_boundaries("x", &curve, &single_rating(g.len()), &g, ReturnDistribution::Normal).unwrap();
        let n = 100_000;
        let times = g.times();
        let mut defaults = vec![0usize; times.len()];
        for p in 0..n {
            let mut d = PathDraws::new(3, Domain::CreditIdiosyncratic(0), p as u64, 1);
            let mut sum = 0.0;
            let mut dead = false;
            for i in 1..times.len() {
                sum += (times[i] - times[i - 1]).sqrt() * d.normal(i - 1, 0);
                if !dead && th.classify(i, sum / times[i].sqrt()).is_none() {
                    dead = true;
                }
                if dead {
                    defaults[i] += 1;
                }
            }
        }
        for i in 1..times.len() {
            let f = defaults[i] as f64 / n as f64;
            let p = th.target_pd[i];
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((f - p).abs() < 3.0 * se, "t={} freq={f} target={p}", times[i]);
        }
    }

    #[test]
    fn rating_bands_split_survivors() {
        let g = build_time_grid(3.0, &[], &DensityRule::uniform(1.0)).unwrap();
        let curve = PDTermStructure::new("x", vec![1.0, 3.0], vec![0.02, 0.08], 0.4).unwrap();
        let dist = vec![vec![0.0, 1.0, 0.0, 0.0]; g.len()]
            .into_iter()
            .enumerate()
            .map(|(i, d)| if i == 0 { d } else { vec![0.2, 0.6, 0.15, 0.05] })
            .collect::<Vec<_>>();
        let th = calibrate_boundaries("x", &curve, &dist, &g, ReturnDistribution::Normal).unwrap();
        for i in 1..g.len() {
            let b = &th.boundaries[i];
            assert!(b.windows(2).all(|w| w[0] >= w[1]));
        }
        // First step: exact normal quantiles of the scaled masses.
        let pd1 = th.target_pd[1];
        let live = 1.0 - pd1;
        let expect_c = norm_quantile(pd1 + 0.15 / 0.95 * live);
        assert_abs_diff_eq!(th.normal_boundaries[1][1], expect_c, epsilon = 1e-12);
    }

    #[test]
    fn fat_tail_thresholds_preserve_buckets() {
        let g = build_time_grid(2.0, &[], &DensityRule::uniform(0.5)).unwrap();
        let curve = PDTermStructure::new("x", vec![2.0], vec![0.05], 0.4).unwrap();
        let dist = vec![vec![0.5, 0.4, 0.1]; g.len()];
        let t = ReturnDistribution::StudentT { df: 3.0 };
        let th = calibrate_boundaries("x", &curve, &dist, &g, t).unwrap();
        for i in 1..g.len() {
            for (h_ft, h_n) in th.boundaries[i].iter().zip(&th.normal_boundaries[i]) {
                assert_abs_diff_eq!(t.cdf(*h_ft), norm_cdf(*h_n), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn near_certain_default_rejected() {
        let g = build_time_grid(1.0, &[], &DensityRule::events_only()).unwrap();
        let curve = PDTermStructure::new("x", vec![1.0], vec![1.0 - 1e-14], 0.4).unwrap();
        assert!(calibrate_boundaries("x", &curve, &single_rating(2), &g, ReturnDistribution::Normal).is_err());
    }

    #[test]
    fn stochastic_threshold_fixed_point_and_ode() {
        let g = build_time_grid(3.0, &[], &DensityRule::uniform(0.001)).unwrap();
        let still = StochasticThresholdParams {
            mean_level: -2.0,
            reversion_speed: 0.7,
            volatility: 0.0,
        };
        let h = evolve_stochastic_threshold(&still, -2.0, &g, 3, 1, 0).unwrap();
        assert!(h.iter().all(|&x| x == -2.0));

        let decay = StochasticThresholdParams {
            mean_level: 0.0,
            reversion_speed: 1.0,
            volatility: 0.0,
        };
        let h = evolve_stochastic_threshold(&decay, 1.0, &g, 1, 1, 0).unwrap();
        for (i, &t) in g.times().iter().enumerate() {
            // Euler error is at most t·e^{−t}·dt/2 to first order.
            assert!((h[i] - (-t).exp()).abs() <= t * (-t).exp() * 0.001 + 1e-12);
        }
    }

    #[test]
    fn stochastic_threshold_long_run_mean() {
        let g = build_time_grid(20.0, &[], &DensityRule::uniform(0.25)).unwrap();
        let p = StochasticThresholdParams {
            mean_level: -2.0,
            reversion_speed: 1.5,
            volatility: 0.4,
        };
        let n = 100_000;
        let h = evolve_stochastic_threshold(&p, 0.0, &g, n, 9, 0).unwrap();
        let last = &h[(g.len() - 1) * n..];
        let mean = last.iter().sum::<f64>() / n as f64;
        let sd = (last.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        assert!((mean + 2.0).abs() < 3.0 * sd / (n as f64).sqrt());
        let again = evolve_stochastic_threshold(&p, 0.0, &g, 10, 9, 0).unwrap();
        assert_eq!(
            &again[..10],
            &h[..10].iter().step_by(1).copied().take(10).collect::<Vec<_>>()[..]
        );
    }
}
