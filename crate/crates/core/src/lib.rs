//! Process mixture models for spatial extremes.
//!
//! The model represents residual spatial dependence of block maxima as
//! `V(s) = delta R(s) + (1 - delta) W(s)`, a convex combination of a
//! max-stable process and a Gaussian process transformed to standard
//! exponential margins, with GEV marginal distributions at each site. Its
//! likelihood is intractable, so inference runs through a Vecchia
//! factorization whose conditional densities are approximated by neural
//! density-regression surrogates trained on simulated draws.
//!
//! Modules:
//! - [`geo`]: site coordinates, ordering, nearest-neighbor conditioning sets
//! - [`margins`]: GEV margins, exponential-margin transforms, the
//!   hypoexponential mixture margin
//! - [`procsim`]: exact simulators for the mixture and its competitors
//! - [`spqr`]: spline-mixture density regression with feed-forward softmax
//!   weights, training, and variable importance
//! - [`surrogate`]: the Vecchia-factorized surrogate likelihood on the data
//!   scale, with censoring and missing-data hooks
//! - [`mcmc`]: adaptive random-walk Metropolis over all parameter blocks
//! - [`diagnostics`]: tail-dependence estimators, calibration data,
//!   variograms, model-comparison scores, joint exceedances

pub mod diagnostics;
pub mod error;
pub mod geo;
pub mod linalg;
pub mod margins;
pub mod mcmc;
pub mod procsim;
pub mod spqr;
pub mod stats;
pub mod surrogate;

pub use error::{Error, Result};
pub use geo::{NeighborGraph, ProjectionMode, SiteSet};
pub use margins::{GevParams, GevSiteParams, TimeCovariate};
pub use procsim::{FieldRealization, ModelVariant, SpatialParams};
pub use spqr::{DesignDistribution, SplineBasis, SpqrNet, TrainConfig};
pub use surrogate::Dataset;
