//! Prior specification for every sampled parameter.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::stats;

/// Prior densities evaluated on the natural parameter scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PriorDist {
    Uniform { lo: f64, hi: f64 },
    Normal { mean: f64, sd: f64 },
    /// Normal prior on the log of the parameter (density on the natural
    /// scale includes the 1/x factor).
    LogNormal { mean_log: f64, sd_log: f64 },
    InvGamma { shape: f64, rate: f64 },
}

impl PriorDist {
    pub fn log_density(&self, x: f64) -> f64 {
        match *self {
            PriorDist::Uniform { lo, hi } => {
                if x >= lo && x <= hi {
                    -(hi - lo).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            PriorDist::Normal { mean, sd } => {
                stats::norm_logpdf((x - mean) / sd) - sd.ln()
            }
            PriorDist::LogNormal { mean_log, sd_log } => {
                if x <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                stats::norm_logpdf((x.ln() - mean_log) / sd_log) - sd_log.ln() - x.ln()
            }
            PriorDist::InvGamma { shape, rate } => {
                if x <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                shape * rate.ln() - ln_gamma(shape) - (shape + 1.0) * x.ln() - rate / x
            }
        }
    }
}

/// Priors for every parameter class in the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorSpec {
    /// Upper bound of the Uniform(0, rho_max) range prior, in the units the
    /// model runs in (unit-square by default, km for projected data).
    pub rho_max: f64,
    /// GEV location-type coefficients and log-scale: Normal(0, beta_sd^2).
    pub beta_sd: f64,
    /// Shape: Normal(0, xi_sd^2).
    pub xi_sd: f64,
    /// STVC partial sill and nugget variances: InvGamma(shape, rate).
    pub variance_ig: (f64, f64),
    /// STVC field ranges: Normal on the log scale.
    pub log_rho_field: (f64, f64),
    /// Shared Matern smoothness: Normal on the log scale.
    pub log_kappa: (f64, f64),
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self::study_default()
    }
}

impl PriorSpec {
    /// The simulation-study priors: delta, r ~ U(0,1), rho ~ U(0, 0.5),
    /// mu, log sigma ~ N(0, 10^2), xi ~ N(0, 0.25^2), variances IG(0.1,
    /// 0.1), log field ranges N(-1,1), log kappa N(-2,1).
    pub fn study_default() -> Self {
        Self {
            rho_max: 0.5,
            beta_sd: 10.0,
            xi_sd: 0.25,
            variance_ig: (0.1, 0.1),
            log_rho_field: (-1.0, 1.0),
            log_kappa: (-2.0, 1.0),
        }
    }

    pub fn delta(&self) -> PriorDist {
        PriorDist::Uniform { lo: 0.0, hi: 1.0 }
    }

    pub fn nugget_r(&self) -> PriorDist {
        PriorDist::Uniform { lo: 0.0, hi: 1.0 }
    }

    pub fn rho(&self) -> PriorDist {
        PriorDist::Uniform {
            lo: 0.0,
            hi: self.rho_max,
        }
    }

    pub fn gev_location(&self) -> PriorDist {
        PriorDist::Normal {
            mean: 0.0,
            sd: self.beta_sd,
        }
    }

    /// Prior on log sigma.
    pub fn gev_log_scale(&self) -> PriorDist {
        PriorDist::Normal {
            mean: 0.0,
            sd: self.beta_sd,
        }
    }

    pub fn gev_shape(&self) -> PriorDist {
        PriorDist::Normal {
            mean: 0.0,
            sd: self.xi_sd,
        }
    }

    pub fn stvc_beta(&self) -> PriorDist {
        PriorDist::Normal {
            mean: 0.0,
            sd: self.beta_sd,
        }
    }

    pub fn stvc_variance(&self) -> PriorDist {
        PriorDist::InvGamma {
            shape: self.variance_ig.0,
            rate: self.variance_ig.1,
        }
    }

    pub fn stvc_rho(&self) -> PriorDist {
        PriorDist::LogNormal {
            mean_log: self.log_rho_field.0,
            sd_log: self.log_rho_field.1,
        }
    }

    pub fn stvc_kappa(&self) -> PriorDist {
        PriorDist::LogNormal {
            mean_log: self.log_kappa.0,
            sd_log: self.log_kappa.1,
        }
    }
}
