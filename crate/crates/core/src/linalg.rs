//! Dense symmetric linear algebra used by the simulators and Gaussian
//! process priors: Cholesky factorization with a progressive jitter ladder,
//! triangular solves, and multivariate-normal log densities.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Jitter ladder applied to the diagonal on factorization failure.
pub const JITTER_LADDER: [f64; 6] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

/// Lower-triangular Cholesky factor.
#[derive(Debug, Clone)]
pub struct Cholesky {
    pub l: Array2<f64>,
    /// Diagonal jitter that was required, 0 if none.
    pub jitter: f64,
}

fn cholesky_once(a: &Array2<f64>, jitter: f64) -> std::result::Result<Array2<f64>, usize> {
    let n = a.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[[i, j]];
            if i == j {
                s += jitter;
            }
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return Err(i);
                }
                l[[i, j]] = s.sqrt();
            } else {
                l[[i, j]] = s / l[[j, j]];
            }
        }
    }
    Ok(l)
}

/// Factor a symmetric positive-definite matrix, escalating through the
/// jitter ladder on failure. The failing pivot is reported together with the
/// prior index it is most correlated with, which for covariance matrices
/// usually identifies a near-duplicate pair.
pub fn cholesky(a: &Array2<f64>) -> Result<Cholesky> {
    assert_eq!(a.nrows(), a.ncols(), "cholesky requires a square matrix");
    let mut failed_at = 0;
    for &jitter in &JITTER_LADDER {
        match cholesky_once(a, jitter) {
            Ok(l) => return Ok(Cholesky { l, jitter }),
            Err(i) => failed_at = i,
        }
    }
    let other = (0..a.nrows())
        .filter(|&j| j != failed_at)
        .max_by(|&x, &y| {
            a[[failed_at, x]]
                .abs()
                .partial_cmp(&a[[failed_at, y]].abs())
                .unwrap()
        })
        .unwrap_or(failed_at);
    Err(Error::FactorizationFailed {
        site: failed_at,
        other,
        max_jitter: *JITTER_LADDER.last().unwrap(),
    })
}

impl Cholesky {
    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// log det of the factored matrix.
    pub fn log_det(&self) -> f64 {
        (0..self.dim()).map(|i| self.l[[i, i]].ln()).sum::<f64>() * 2.0
    }

    /// Solve `L z = b` (forward substitution).
    pub fn solve_lower(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut z = vec![0.0; n];
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.l[[i, k]] * z[k];
            }
            z[i] = s / self.l[[i, i]];
        }
        z
    }

    /// Solve `A x = b` via the two triangular solves.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut x = self.solve_lower(b);
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in (i + 1)..n {
                s -= self.l[[k, i]] * x[k];
            }
            x[i] = s / self.l[[i, i]];
        }
        x
    }

    /// Draw `L z` for standard-normal `z`; transforms iid normals into a
    /// draw with the factored covariance.
    pub fn correlate(&self, z: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut out = vec![0.0; n];
        for i in 0..n {
            let mut s = 0.0;
            for k in 0..=i {
                s += self.l[[i, k]] * z[k];
            }
            out[i] = s;
        }
        out
    }
}

/// Log density of a multivariate normal with mean `mean` and the factored
/// covariance.
pub fn mvn_logpdf(x: &[f64], mean: &[f64], chol: &Cholesky) -> f64 {
    let n = x.len();
    let centered: Vec<f64> = x.iter().zip(mean).map(|(a, b)| a - b).collect();
    let z = chol.solve_lower(&centered);
    let quad: f64 = z.iter().map(|v| v * v).sum();
    -0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + chol.log_det() + quad)
}

/// Dense symmetric inverse via Cholesky; used for precision matrices of
/// moderate size.
pub fn inverse_spd(a: &Array2<f64>) -> Result<Array2<f64>> {
    let chol = cholesky(a)?;
    let n = a.nrows();
    let mut inv = Array2::<f64>::zeros((n, n));
    let mut e = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        let col = chol.solve(&e);
        for i in 0..n {
            inv[[i, j]] = col[i];
        }
        e[j] = 0.0;
    }
    Ok(inv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn factors_known_matrix() {
        let a = array![[4.0, 2.0], [2.0, 3.0]];
        let c = cholesky(&a).unwrap();
        assert_eq!(c.jitter, 0.0);
        assert_abs_diff_eq!(c.l[[0, 0]], 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(c.l[[1, 0]], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(c.l[[1, 1]], 2.0_f64.sqrt(), epsilon = 1e-14);
        assert_abs_diff_eq!(c.log_det(), (4.0 * 3.0 - 4.0_f64).ln(), epsilon = 1e-12);
    }

    #[test]
    fn solve_round_trip() {
        let a = array![[4.0, 2.0, 0.5], [2.0, 3.0, 1.0], [0.5, 1.0, 2.0]];
        let c = cholesky(&a).unwrap();
        let b = vec![1.0, -2.0, 0.3];
        let x = c.solve(&b);
        for i in 0..3 {
            let mut s = 0.0;
            for j in 0..3 {
                s += a[[i, j]] * x[j];
            }
            assert_abs_diff_eq!(s, b[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn jitter_rescues_rank_deficiency() {
        // Exactly singular correlation: duplicate rows.
        let a = array![[1.0, 1.0], [1.0, 1.0]];
        let c = cholesky(&a).unwrap();
        assert!(c.jitter > 0.0);
    }

    #[test]
    fn reports_offending_pair() {
        // Negative definite cannot be rescued by tiny jitter.
        let a = array![[1.0, 2.0], [2.0, 1.0]];
        match cholesky(&a) {
            Err(Error::FactorizationFailed { site, other, .. }) => {
                assert_eq!(site, 1);
                assert_eq!(other, 0);
            }
            other => panic!("expected factorization failure, got {other:?}"),
        }
    }

    #[test]
    fn mvn_logpdf_matches_hand_computation() {
        // Standard bivariate normal at the origin: -log(2 pi).
        let a = array![[1.0, 0.0], [0.0, 1.0]];
        let c = cholesky(&a).unwrap();
        let lp = mvn_logpdf(&[0.0, 0.0], &[0.0, 0.0], &c);
        assert_abs_diff_eq!(lp, -(2.0 * std::f64::consts::PI).ln(), epsilon = 1e-12);
    }

    #[test]
    fn inverse_spd_identity() {
        let a = array![[2.0, 0.3], [0.3, 1.5]];
        let inv = inverse_spd(&a).unwrap();
        let prod = a.dot(&inv);
        for i in 0..2 {
            for j in 0..2 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(prod[[i, j]], expect, epsilon = 1e-12);
            }
        }
    }
}
