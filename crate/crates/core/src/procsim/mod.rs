//! Simulators for the process mixture model and its component/competitor
//! processes: Gaussian process, Brown-Resnick max-stable process, nugget
//! layers, the Huser-Wadsworth shared-variable model, and pure-GP/pure-MSP
//! variants.
//!
//! All simulators are pure given `(parameters, rng)`. Batch generation keys
//! an independent counter-based stream per replicate so any replicate is
//! reproducible in isolation and generation order does not matter.

mod brown_resnick;
mod gp;

pub use brown_resnick::BrownResnick;
pub use gp::GpSimulator;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::margins::{frechet_to_exp, hypoexp_cdf};
use crate::stats;

/// Paper-rounded ratio of the max-stable range to the Gaussian range that
/// equates their effective ranges. See [`effective_range_ratio`] for the
/// unrounded value.
pub const TIED_RANGE_RATIO: f64 = 0.19;

/// Exact effective-range tie: the distance where a powered-exponential GP
/// correlation with unit smoothness drops to 0.05 is `rho_W log 20`; the
/// distance where the Brown-Resnick chi coefficient drops to 0.05 is
/// `rho_R 4 Phi^{-1}(0.975)^2`. Equating the two gives this ratio, about
/// 0.195.
pub fn effective_range_ratio() -> f64 {
    20.0_f64.ln() / (4.0 * stats::norm_quantile(0.975).powi(2))
}

/// Spatial dependence parameter block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialParams {
    /// Mixture weight in [0,1]: 0 is pure GP, 1 is pure max-stable.
    pub delta: f64,
    /// Gaussian process powered-exponential range (> 0).
    pub rho_w: f64,
    /// Gaussian process smoothness in (0,2].
    pub alpha_w: f64,
    /// Brown-Resnick variogram range (> 0).
    pub rho_r: f64,
    /// Brown-Resnick variogram smoothness in (0,2].
    pub alpha_r: f64,
    /// Spatial variance fraction in [0,1]; `1 - r` is the nugget share.
    pub r: f64,
    /// When set, the block was built from a single range `rho = rho_w` with
    /// `rho_r = 0.19 rho` and shared smoothness.
    pub tied_range: bool,
}

impl SpatialParams {
    /// Fully free parameterization.
    pub fn free(
        delta: f64,
        rho_w: f64,
        alpha_w: f64,
        rho_r: f64,
        alpha_r: f64,
        r: f64,
    ) -> Result<Self> {
        let p = Self {
            delta,
            rho_w,
            alpha_w,
            rho_r,
            alpha_r,
            r,
            tied_range: false,
        };
        p.validate()?;
        Ok(p)
    }

    /// Single-range parameterization with the effective ranges tied:
    /// `rho_w = rho`, `rho_r = 0.19 rho`, common smoothness.
    pub fn tied(delta: f64, rho: f64, alpha: f64, r: f64) -> Result<Self> {
        let p = Self {
            delta,
            rho_w: rho,
            alpha_w: alpha,
            rho_r: TIED_RANGE_RATIO * rho,
            alpha_r: alpha,
            r,
            tied_range: true,
        };
        p.validate()?;
        Ok(p)
    }

    /// Re-derive a tied block from a new single range, keeping the rest.
    pub fn with_tied_rho(&self, rho: f64) -> Self {
        Self {
            rho_w: rho,
            rho_r: TIED_RANGE_RATIO * rho,
            ..*self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(Error::invalid(format!("delta must be in [0,1], got {}", self.delta)));
        }
        if !(self.rho_w > 0.0 && self.rho_r > 0.0) {
            return Err(Error::invalid("ranges must be positive"));
        }
        if !(self.alpha_w > 0.0 && self.alpha_w <= 2.0 && self.alpha_r > 0.0 && self.alpha_r <= 2.0)
        {
            return Err(Error::invalid("smoothness parameters must be in (0,2]"));
        }
        if !(0.0..=1.0).contains(&self.r) {
            return Err(Error::invalid(format!("nugget fraction r must be in [0,1], got {}", self.r)));
        }
        Ok(())
    }
}

/// One realization of the residual process at every site.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldRealization {
    /// Gaussian component, Exp(1) margins.
    pub w: Vec<f64>,
    /// Max-stable (or shared-scalar) component, Exp(1) margins.
    pub r: Vec<f64>,
    /// Mixture `v = delta r + (1 - delta) w`.
    pub v: Vec<f64>,
    /// Copula scale `u = G(v)`, in (0,1).
    pub u: Vec<f64>,
}

/// Which residual process to simulate or fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelVariant {
    /// Max-stable / Gaussian process mixture.
    Pmm,
    /// Huser-Wadsworth: a single Exp(1) scalar shared by all sites replaces
    /// the max-stable field.
    Hw,
    /// Pure max-stable process (`delta = 1`).
    Msp,
    /// Pure Gaussian process (`delta = 0`).
    Gp,
}

impl ModelVariant {
    /// The mixture weight actually used by the variant, if pinned.
    pub fn pinned_delta(self) -> Option<f64> {
        match self {
            ModelVariant::Msp => Some(1.0),
            ModelVariant::Gp => Some(0.0),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelVariant::Pmm => "pmm",
            ModelVariant::Hw => "hw",
            ModelVariant::Msp => "msp",
            ModelVariant::Gp => "gp",
        }
    }
}

/// Powered-exponential correlation with a multiplicative nugget: 1 at h = 0,
/// `r exp{-(h/rho_w)^{alpha_w}}` for h > 0.
pub fn gp_correlation(h: f64, rho_w: f64, alpha_w: f64, r: f64) -> f64 {
    if h == 0.0 {
        1.0
    } else {
        r * (-(h / rho_w).powf(alpha_w)).exp()
    }
}

/// Apply the max-stable nugget: `max(r R1(s), (1-r) R2(s))` with `R2` iid
/// unit Frechet. Margins stay unit Frechet because the scales sum to one.
pub fn apply_msp_nugget(r1: &[f64], r: f64, rng: &mut impl Rng) -> Vec<f64> {
    r1.iter()
        .map(|&x| {
            let noise = if r < 1.0 {
                (1.0 - r) * frechet_draw(rng)
            } else {
                0.0
            };
            (r * x).max(noise)
        })
        .collect()
}

/// One unit-Frechet draw by inverse CDF.
pub fn frechet_draw(rng: &mut impl Rng) -> f64 {
    let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    -1.0 / u.ln()
}

/// One Exp(1) draw by inverse CDF.
pub fn exp_draw(rng: &mut impl Rng) -> f64 {
    let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    -u.ln()
}

/// Largest double strictly below 1; keeps copula values inside (0,1).
const ONE_MINUS: f64 = 1.0 - f64::EPSILON / 2.0;

/// A simulator for one model variant at a fixed site layout and parameter
/// block. Construction precomputes the covariance factorizations so repeated
/// draws are cheap.
#[derive(Debug, Clone)]
pub struct PmmSimulator {
    variant: ModelVariant,
    params: SpatialParams,
    n: usize,
    gp: Option<GpSimulator>,
    br: Option<BrownResnick>,
}

impl PmmSimulator {
    pub fn new(coords: &[[f64; 2]], variant: ModelVariant, params: SpatialParams) -> Result<Self> {
        params.validate()?;
        let params = match variant.pinned_delta() {
            Some(d) => SpatialParams { delta: d, ..params },
            None => params,
        };
        let needs_gp = params.delta < 1.0;
        let needs_br = params.delta > 0.0 && !matches!(variant, ModelVariant::Hw);
        let gp = if needs_gp {
            Some(GpSimulator::new(coords, params.rho_w, params.alpha_w, params.r)?)
        } else {
            None
        };
        let br = if needs_br {
            Some(BrownResnick::new(coords, params.rho_r, params.alpha_r)?)
        } else {
            None
        };
        Ok(Self {
            variant,
            params,
            n: coords.len(),
            gp,
            br,
        })
    }

    pub fn n_sites(&self) -> usize {
        self.n
    }

    pub fn params(&self) -> &SpatialParams {
        &self.params
    }

    pub fn variant(&self) -> ModelVariant {
        self.variant
    }

    /// Draw one field realization. Component draw order is fixed (W, then R,
    /// then the nugget) so a given rng state yields a unique field.
    pub fn simulate(&self, rng: &mut impl Rng) -> Result<FieldRealization> {
        let delta = self.params.delta;
        let w: Vec<f64> = match &self.gp {
            Some(gp) => gp.simulate_exp(rng)?,
            None => vec![0.0; self.n],
        };
        let r: Vec<f64> = if matches!(self.variant, ModelVariant::Hw) && delta > 0.0 {
            let shared = exp_draw(rng);
            vec![shared; self.n]
        } else if let Some(br) = &self.br {
            let r1 = br.simulate(rng);
            let fre = apply_msp_nugget(&r1, self.params.r, rng);
            fre.iter()
                .map(|&x| frechet_to_exp(x))
                .collect::<Result<Vec<f64>>>()?
        } else {
            vec![0.0; self.n]
        };
        let v: Vec<f64> = (0..self.n)
            .map(|i| delta * r[i] + (1.0 - delta) * w[i])
            .collect();
        let u: Vec<f64> = v
            .iter()
            .map(|&vi| Ok(hypoexp_cdf(vi, delta)?.clamp(f64::MIN_POSITIVE, ONE_MINUS)))
            .collect::<Result<Vec<f64>>>()?;
        Ok(FieldRealization { w, r, v, u })
    }
}

/// Counter-based stream for replicate `rep` of a batch keyed by `seed`.
pub fn replicate_rng(seed: u64, rep: u64) -> ChaCha8Rng {
    block_rng(seed, 0, rep)
}

/// Counter-based stream keyed by `(seed, block, rep)`; `block` separates
/// independent uses such as per-site training data.
pub fn block_rng(seed: u64, block: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(block.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(rep));
    rng
}

/// Simulate a batch of independent replicates with per-replicate streams.
pub fn simulate_batch(
    sim: &PmmSimulator,
    seed: u64,
    n_reps: usize,
) -> Result<Vec<FieldRealization>> {
    (0..n_reps)
        .map(|rep| sim.simulate(&mut replicate_rng(seed, rep as u64)))
        .collect()
}
