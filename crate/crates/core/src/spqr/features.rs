//! Feature-vector layout shared by training and likelihood evaluation.
//!
//! A conditional-density net sees `(transformed spatial parameters,
//! neighbor process values[, neighbor offsets])`. The layout records which
//! slots are which so a trained net can never be paired with a mismatched
//! neighbor set.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::procsim::{ModelVariant, SpatialParams};
use crate::stats;

/// Transformed spatial-parameter features, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThetaFeature {
    LogitDelta,
    LogRho,
    LogitR,
}

/// Scale on which neighbor values enter the feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NeighborScale {
    /// Raw copula values in (0,1).
    Uniform,
    /// Standard-normal scores `Phi^{-1}(u)`; improves Gaussian-process fits.
    GaussScore,
}

/// Offset value used to pad absent neighbor slots in the global model; far
/// outside the unit square so padded slots are recognizably uninformative.
pub const PAD_OFFSET: f64 = 10.0;

fn logit(x: f64) -> f64 {
    let x = x.clamp(1e-12, 1.0 - 1e-12);
    (x / (1.0 - x)).ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub theta: Vec<ThetaFeature>,
    pub n_neighbors: usize,
    pub neighbor_scale: NeighborScale,
    /// When set (global model), each neighbor also contributes its 2-d
    /// offset from the response site, and absent slots are padded.
    pub offsets: bool,
}

impl FeatureLayout {
    pub fn width(&self) -> usize {
        self.theta.len() + self.n_neighbors * if self.offsets { 3 } else { 1 }
    }

    /// Spatial-parameter slots for the current parameter block.
    pub fn theta_features(&self, params: &SpatialParams) -> Vec<f64> {
        self.theta
            .iter()
            .map(|t| match t {
                ThetaFeature::LogitDelta => logit(params.delta),
                ThetaFeature::LogRho => params.rho_w.max(1e-300).ln(),
                ThetaFeature::LogitR => logit(params.r),
            })
            .collect()
    }

    pub fn neighbor_feature(&self, u: f64) -> f64 {
        match self.neighbor_scale {
            NeighborScale::Uniform => u,
            NeighborScale::GaussScore => stats::norm_quantile(u.clamp(1e-12, 1.0 - 1e-12)),
        }
    }

    /// Assemble the full feature vector. `offsets` must be provided exactly
    /// when the layout declares them; absent neighbor slots (local model
    /// never has any; global pads) are filled from `rng`.
    pub fn assemble(
        &self,
        theta: &[f64],
        neighbor_us: &[f64],
        offsets: Option<&[[f64; 2]]>,
        rng: &mut impl Rng,
    ) -> Result<Vec<f64>> {
        if theta.len() != self.theta.len() {
            return Err(Error::LayoutMismatch(format!(
                "{} parameter features supplied, layout expects {}",
                theta.len(),
                self.theta.len()
            )));
        }
        if neighbor_us.len() > self.n_neighbors {
            return Err(Error::LayoutMismatch(format!(
                "{} neighbor values supplied, layout holds {}",
                neighbor_us.len(),
                self.n_neighbors
            )));
        }
        if !self.offsets && neighbor_us.len() < self.n_neighbors {
            return Err(Error::LayoutMismatch(
                "local layout requires exactly the trained neighbor count".into(),
            ));
        }
        let mut x = Vec::with_capacity(self.width());
        x.extend_from_slice(theta);
        for &u in neighbor_us {
            x.push(self.neighbor_feature(u));
        }
        for _ in neighbor_us.len()..self.n_neighbors {
            x.push(self.neighbor_feature(rng.gen_range(0.0..1.0)));
        }
        if self.offsets {
            let offs = offsets.ok_or_else(|| {
                Error::LayoutMismatch("layout declares offsets but none supplied".into())
            })?;
            if offs.len() != neighbor_us.len() {
                return Err(Error::LayoutMismatch(
                    "offset count must match neighbor count".into(),
                ));
            }
            for o in offs {
                x.push(o[0]);
                x.push(o[1]);
            }
            for _ in offs.len()..self.n_neighbors {
                x.push(PAD_OFFSET);
                x.push(PAD_OFFSET);
            }
        } else if offsets.is_some() {
            return Err(Error::LayoutMismatch(
                "layout has no offset slots but offsets were supplied".into(),
            ));
        }
        Ok(x)
    }
}

/// How one spatial parameter is drawn under the design distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParamDraw {
    Fixed(f64),
    Uniform { lo: f64, hi: f64 },
}

impl ParamDraw {
    fn draw(&self, rng: &mut impl Rng) -> f64 {
        match *self {
            ParamDraw::Fixed(v) => v,
            ParamDraw::Uniform { lo, hi } => rng.gen_range(lo..hi),
        }
    }

    pub fn is_free(&self) -> bool {
        matches!(self, ParamDraw::Uniform { .. })
    }

    pub fn contains(&self, v: f64) -> bool {
        match *self {
            ParamDraw::Fixed(f) => (v - f).abs() < 1e-12,
            ParamDraw::Uniform { lo, hi } => v >= lo && v <= hi,
        }
    }
}

/// Design distribution p* over the spatial parameter block (tied-range
/// parameterization). Free components become net features; the support must
/// cover the prior used later in MCMC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DesignDistribution {
    pub delta: ParamDraw,
    pub rho: ParamDraw,
    pub r: ParamDraw,
    /// Smoothness, fixed (never estimated).
    pub alpha: f64,
}

impl Default for DesignDistribution {
    fn default() -> Self {
        Self::study_default()
    }
}

impl DesignDistribution {
    /// The simulation-study design: delta ~ U(0,1), rho ~ U(0, 0.5), no
    /// nugget, unit smoothness.
    pub fn study_default() -> Self {
        Self {
            delta: ParamDraw::Uniform { lo: 0.0, hi: 1.0 },
            rho: ParamDraw::Uniform { lo: 0.0, hi: 0.5 },
            r: ParamDraw::Fixed(1.0),
            alpha: 1.0,
        }
    }

    /// Design for a pure-GP fit: range and nugget free, no mixture weight.
    pub fn gp_default() -> Self {
        Self {
            delta: ParamDraw::Fixed(0.0),
            rho: ParamDraw::Uniform { lo: 0.1, hi: 1.23 },
            r: ParamDraw::Uniform { lo: 0.0, hi: 1.0 },
            alpha: 1.0,
        }
    }

    pub fn draw(&self, rng: &mut impl Rng) -> Result<SpatialParams> {
        SpatialParams::tied(
            self.delta.draw(rng),
            self.rho.draw(rng).max(1e-9),
            self.alpha,
            self.r.draw(rng),
        )
    }

    /// Theta feature slots implied by the free components, in canonical
    /// order.
    pub fn theta_layout(&self) -> Vec<ThetaFeature> {
        let mut v = Vec::new();
        if self.delta.is_free() {
            v.push(ThetaFeature::LogitDelta);
        }
        if self.rho.is_free() {
            v.push(ThetaFeature::LogRho);
        }
        if self.r.is_free() {
            v.push(ThetaFeature::LogitR);
        }
        v
    }

    /// A variant with a pinned mixture weight must not leave delta free.
    pub fn check_variant(&self, variant: ModelVariant) -> Result<()> {
        if let Some(d) = variant.pinned_delta() {
            match self.delta {
                ParamDraw::Fixed(f) if (f - d).abs() < 1e-12 => Ok(()),
                _ => Err(Error::invalid(format!(
                    "variant {} pins delta = {d}; the design distribution must fix it there",
                    variant.name()
                ))),
            }
        } else {
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::procsim::block_rng;
    use approx::assert_abs_diff_eq;

    #[test]
    fn width_accounts_for_offsets() {
        let local = FeatureLayout {
            theta: vec![ThetaFeature::LogitDelta, ThetaFeature::LogRho],
            n_neighbors: 5,
            neighbor_scale: NeighborScale::Uniform,
            offsets: false,
        };
        assert_eq!(local.width(), 7);
        let global = FeatureLayout {
            offsets: true,
            ..local
        };
        assert_eq!(global.width(), 2 + 5 + 10);
    }

    #[test]
    fn theta_transforms() {
        let layout = FeatureLayout {
            theta: vec![
                ThetaFeature::LogitDelta,
                ThetaFeature::LogRho,
                ThetaFeature::LogitR,
            ],
            n_neighbors: 0,
            neighbor_scale: NeighborScale::Uniform,
            offsets: false,
        };
        let p = SpatialParams::tied(0.5, 1.0, 1.0, 0.5).unwrap();
        let f = layout.theta_features(&p);
        assert_abs_diff_eq!(f[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f[1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f[2], 0.0, epsilon = 1e-12);
        // Boundary values stay finite.
        let edge = SpatialParams::tied(1.0, 0.2, 1.0, 0.0).unwrap();
        assert!(layout.theta_features(&edge).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn assemble_rejects_mismatches() {
        let layout = FeatureLayout {
            theta: vec![ThetaFeature::LogRho],
            n_neighbors: 2,
            neighbor_scale: NeighborScale::Uniform,
            offsets: false,
        };
        let mut rng = block_rng(1, 0, 0);
        assert!(layout.assemble(&[0.1, 0.2], &[0.5, 0.5], None, &mut rng).is_err());
        assert!(layout.assemble(&[0.1], &[0.5], None, &mut rng).is_err());
        assert!(layout
            .assemble(&[0.1], &[0.5, 0.5], Some(&[[0.0, 0.0], [0.1, 0.1]]), &mut rng)
            .is_err());
        let ok = layout.assemble(&[0.1], &[0.5, 0.6], None, &mut rng).unwrap();
        assert_eq!(ok, vec![0.1, 0.5, 0.6]);
    }

    #[test]
    fn global_padding_fills_remaining_slots() {
        let layout = FeatureLayout {
            theta: vec![ThetaFeature::LogitDelta],
            n_neighbors: 3,
            neighbor_scale: NeighborScale::Uniform,
            offsets: true,
        };
        let mut rng = block_rng(2, 0, 0);
        let x = layout
            .assemble(&[0.0], &[0.4], Some(&[[0.05, -0.02]]), &mut rng)
            .unwrap();
        assert_eq!(x.len(), layout.width());
        // Two padded neighbor slots are fresh uniforms.
        assert!(x[2] > 0.0 && x[2] < 1.0);
        assert!(x[3] > 0.0 && x[3] < 1.0);
        // Offset slots: one real pair then two padded pairs.
        assert_eq!(&x[4..6], &[0.05, -0.02]);
        assert!(x[6..].iter().all(|&v| v == PAD_OFFSET));
    }

    #[test]
    fn design_layout_tracks_free_components() {
        let d = DesignDistribution::study_default();
        assert_eq!(
            d.theta_layout(),
            vec![ThetaFeature::LogitDelta, ThetaFeature::LogRho]
        );
        let g = DesignDistribution::gp_default();
        assert_eq!(
            g.theta_layout(),
            vec![ThetaFeature::LogRho, ThetaFeature::LogitR]
        );
        assert!(g.check_variant(ModelVariant::Gp).is_ok());
        assert!(d.check_variant(ModelVariant::Gp).is_err());
        assert!(d.check_variant(ModelVariant::Pmm).is_ok());
    }

    #[test]
    fn draws_respect_tied_ranges() {
        let d = DesignDistribution::study_default();
        let mut rng = block_rng(3, 0, 0);
        for _ in 0..50 {
            let p = d.draw(&mut rng).unwrap();
            assert!(p.tied_range);
            assert!(p.delta >= 0.0 && p.delta <= 1.0);
            assert!(p.rho_w > 0.0 && p.rho_w <= 0.5);
            assert_abs_diff_eq!(p.rho_r, 0.19 * p.rho_w, epsilon = 1e-12);
            assert_eq!(p.r, 1.0);
        }
    }
}
