//! Gaussian-process field simulation with powered-exponential correlation
//! and a multiplicative nugget.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::linalg::{cholesky, Cholesky};
use crate::margins::normal_to_exp;
use crate::procsim::gp_correlation;

/// Simulator for a zero-mean, unit-variance Gaussian field. Construction
/// factors the correlation matrix once; draws are then a matrix-vector
/// product.
#[derive(Debug, Clone)]
pub struct GpSimulator {
    chol: Cholesky,
    n: usize,
}

impl GpSimulator {
    pub fn new(coords: &[[f64; 2]], rho_w: f64, alpha_w: f64, r: f64) -> Result<Self> {
        let n = coords.len();
        let corr = correlation_matrix(coords, rho_w, alpha_w, r);
        let chol = cholesky(&corr)?;
        Ok(Self { chol, n })
    }

    pub fn n_sites(&self) -> usize {
        self.n
    }

    /// Draw the latent field with standard normal margins.
    pub fn simulate_gauss(&self, rng: &mut impl Rng) -> Vec<f64> {
        let z: Vec<f64> = (0..self.n).map(|_| rng.sample(StandardNormal)).collect();
        self.chol.correlate(&z)
    }

    /// Draw the field with Exp(1) margins via `-log(1 - Phi(w))`.
    pub fn simulate_exp(&self, rng: &mut impl Rng) -> Result<Vec<f64>> {
        self.simulate_gauss(rng)
            .into_iter()
            .map(normal_to_exp)
            .collect()
    }
}

/// Correlation matrix on the given coordinates: unit diagonal,
/// `r exp{-(h/rho)^alpha}` off it.
pub fn correlation_matrix(coords: &[[f64; 2]], rho_w: f64, alpha_w: f64, r: f64) -> Array2<f64> {
    let n = coords.len();
    let mut c = Array2::<f64>::eye(n);
    for i in 0..n {
        for j in (i + 1)..n {
            let h = ((coords[i][0] - coords[j][0]).powi(2)
                + (coords[i][1] - coords[j][1]).powi(2))
            .sqrt();
            let v = gp_correlation(h, rho_w, alpha_w, r);
            c[[i, j]] = v;
            c[[j, i]] = v;
        }
    }
    c
}
