//! Random-walk Metropolis kernel on unconstrained scales, with
//! Robbins-Monro scale adaptation toward a target acceptance rate during
//! burn-in.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Bijections between a constrained natural parameter and the unconstrained
/// proposal scale. The log-Jacobian of natural-with-respect-to-z enters the
/// acceptance ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Transform {
    Identity,
    /// natural = exp(z).
    Log,
    /// natural = lo + (hi - lo) sigmoid(z).
    Logit { lo: f64, hi: f64 },
}

impl Transform {
    pub fn to_unconstrained(&self, natural: f64) -> f64 {
        match *self {
            Transform::Identity => natural,
            Transform::Log => natural.max(1e-300).ln(),
            Transform::Logit { lo, hi } => {
                let p = ((natural - lo) / (hi - lo)).clamp(1e-12, 1.0 - 1e-12);
                (p / (1.0 - p)).ln()
            }
        }
    }

    pub fn to_natural(&self, z: f64) -> f64 {
        match *self {
            Transform::Identity => z,
            Transform::Log => z.exp(),
            Transform::Logit { lo, hi } => lo + (hi - lo) / (1.0 + (-z).exp()),
        }
    }

    /// log |d natural / d z|.
    pub fn log_jacobian(&self, z: f64) -> f64 {
        match *self {
            Transform::Identity => 0.0,
            Transform::Log => z,
            Transform::Logit { lo, hi } => {
                // (hi - lo) sigmoid'(z); stable form -z - 2 log(1 + e^{-z}).
                (hi - lo).ln() - z - 2.0 * (-z).exp().ln_1p()
            }
        }
    }
}

/// One proposal block: a set of unconstrained coordinates proposed jointly
/// with per-component relative scales and one adapted log-scale.
#[derive(Debug, Clone)]
pub struct RwBlock {
    pub name: String,
    /// Adapted common log proposal scale.
    pub log_scale: f64,
    /// Fixed per-component multipliers (length = block dimension).
    pub rel_scales: Vec<f64>,
    pub accepts: u64,
    pub proposals: u64,
    window_accepts: u64,
    window_proposals: u64,
}

impl RwBlock {
    pub fn new(name: impl Into<String>, dim: usize, initial_scale: f64) -> Self {
        Self {
            name: name.into(),
            log_scale: initial_scale.ln(),
            rel_scales: vec![1.0; dim],
            accepts: 0,
            proposals: 0,
            window_accepts: 0,
            window_proposals: 0,
        }
    }

    pub fn with_rel_scales(mut self, rel: Vec<f64>) -> Self {
        assert_eq!(rel.len(), self.rel_scales.len());
        self.rel_scales = rel;
        self
    }

    pub fn dim(&self) -> usize {
        self.rel_scales.len()
    }

    /// Gaussian random-walk proposal around `z`.
    pub fn propose(&self, z: &[f64], rng: &mut impl Rng) -> Vec<f64> {
        let scale = self.log_scale.exp();
        z.iter()
            .zip(&self.rel_scales)
            .map(|(&zi, &ri)| zi + scale * ri * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    pub fn record(&mut self, accepted: bool) {
        self.proposals += 1;
        self.window_proposals += 1;
        if accepted {
            self.accepts += 1;
            self.window_accepts += 1;
        }
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposals == 0 {
            f64::NAN
        } else {
            self.accepts as f64 / self.proposals as f64
        }
    }

    fn window_rate_and_reset(&mut self) -> Option<f64> {
        if self.window_proposals == 0 {
            return None;
        }
        let rate = self.window_accepts as f64 / self.window_proposals as f64;
        self.window_accepts = 0;
        self.window_proposals = 0;
        Some(rate)
    }
}

/// Robbins-Monro adaptation settings. Scales move only during burn-in and
/// are frozen afterwards, preserving detailed balance post-adaptation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptSettings {
    pub enabled: bool,
    pub target_acceptance: f64,
    /// Iterations between scale updates.
    pub window: usize,
    /// Initial Robbins-Monro gain; decays as c0 / ceil(t / window).
    pub c0: f64,
}

impl Default for AdaptSettings {
    fn default() -> Self {
        Self {
            enabled: true,
            target_acceptance: 0.4,
            window: 50,
            c0: 1.0,
        }
    }
}

/// Update every block's log-scale from its windowed acceptance rate.
/// `iteration` is the current burn-in iteration (1-based).
pub fn adapt_scales(blocks: &mut [RwBlock], settings: &AdaptSettings, iteration: usize) {
    if !settings.enabled || iteration == 0 {
        return;
    }
    let gain = settings.c0 / (iteration as f64 / settings.window as f64).ceil();
    for block in blocks {
        if let Some(rate) = block.window_rate_and_reset() {
            block.log_scale += gain * (rate - settings.target_acceptance);
            block.log_scale = block.log_scale.clamp(-12.0, 6.0);
        }
    }
}

/// One Metropolis accept/reject decision given the log-posterior difference
/// (already including any transform Jacobians).
pub fn accept(log_ratio: f64, rng: &mut impl Rng) -> bool {
    if log_ratio >= 0.0 {
        return true;
    }
    rng.gen_range(0.0_f64..1.0) < log_ratio.exp()
}
