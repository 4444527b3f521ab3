//! Counter-based random draws.
//!
//! Every draw is addressed by `(seed, domain, path, step, slot)`. A ChaCha8
//! stream is selected by `(seed, domain, path)` and the draw for
//! `(step, slot)` lives at a fixed word offset of that stream, so any worker
//! can reproduce any draw without shared generator state.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dist::norm_quantile;

/// Independent families of draws. Each tag keys a disjoint set of streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    /// Systematic factor shocks shared by market and credit.
    Systematic,
    /// Idiosyncratic market shocks.
    MarketIdiosyncratic,
    /// Residual of the integrated short rate given the factor shock.
    RateIntegral,
    /// Idiosyncratic asset shocks of one credit entity.
    CreditIdiosyncratic(u16),
    /// Shocks of a stochastic default threshold.
    Threshold(u16),
    /// Perturbed starting points of an optimizer.
    Calibration,
}

impl Domain {
    fn tag(self) -> u64 {
        match self {
            Domain::Systematic => 1,
            Domain::MarketIdiosyncratic => 2,
            Domain::RateIntegral => 3,
            Domain::CreditIdiosyncratic(e) => 0x1_0000 | e as u64,
            Domain::Threshold(e) => 0x2_0000 | e as u64,
            Domain::Calibration => 4,
        }
    }
}

/// Standard normal draws for one `(seed, domain, path)` stream, laid out as
/// `width` slots per step.
pub struct PathDraws {
    rng: ChaCha8Rng,
    width: usize,
    next: u128,
}

impl PathDraws {
    pub fn new(seed: u64, domain: Domain, path: u64, width: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // 20 bits of domain tag, 44 bits of path index.
        rng.set_stream((domain.tag() << 44) | (path & ((1 << 44) - 1)));
        Self {
            rng,
            width: width.max(1),
            next: 0,
        }
    }

    /// Normal draw for `(step, slot)`.
    pub fn normal(&mut self, step: usize, slot: usize) -> f64 {
        debug_assert!(slot < self.width);
        let index = (step * self.width + slot) as u128;
        if index != self.next {
            // Two 32-bit words per draw.
            self.rng.set_word_pos(2 * index);
        }
        self.next = index + 1;
        norm_quantile(to_open_unit(self.rng.next_u64()))
    }

    /// Fills `out` with the draws of `step`.
    pub fn fill_step(&mut self, step: usize, out: &mut [f64]) {
        for (slot, v) in out.iter_mut().enumerate() {
            *v = self.normal(step, slot);
        }
    }
}

/// Maps 53 random bits onto the open interval (0, 1).
fn to_open_unit(bits: u64) -> f64 {
    ((bits >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}
