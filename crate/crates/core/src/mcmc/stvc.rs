//! Matern-correlated Gaussian-process priors for the spatially varying GEV
//! coefficient fields, including the fractional-order modified Bessel
//! function the Matern correlation needs.

use ndarray::Array2;
use statrs::function::gamma::{gamma, ln_gamma};

use crate::error::{Error, Result};
use crate::linalg;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
// Taylor coefficients of 1/Gamma(1+w) = 1 + a1 w + a2 w^2 + a3 w^3 + ...
const INV_GAMMA_A2: f64 = -0.655_878_071_520_253_9;
const INV_GAMMA_A3: f64 = -0.042_002_635_034_095_24;
const BESSEL_EPS: f64 = 1e-16;
const BESSEL_MAX_ITER: usize = 10_000;

/// `(1/Gamma(1-x) - 1/Gamma(1+x)) / (2x)` and `(1/Gamma(1-x) + 1/Gamma(1+x)) / 2`,
/// stable through x = 0.
fn temme_gammas(x: f64) -> (f64, f64) {
    if x.abs() < 1e-4 {
        let gam1 = -(EULER_GAMMA + INV_GAMMA_A3 * x * x);
        let gam2 = 1.0 + INV_GAMMA_A2 * x * x;
        (gam1, gam2)
    } else {
        let inv_minus = 1.0 / gamma(1.0 - x);
        let inv_plus = 1.0 / gamma(1.0 + x);
        ((inv_minus - inv_plus) / (2.0 * x), (inv_minus + inv_plus) / 2.0)
    }
}

/// Modified Bessel function of the second kind with real nonnegative order.
///
/// Temme's series for small arguments, Steed's continued fraction beyond,
/// upward recurrence in the order.
pub fn bessel_k(nu: f64, x: f64) -> Result<f64> {
    if !(x > 0.0) || !nu.is_finite() || nu < 0.0 {
        return Err(Error::invalid(format!(
            "bessel_k requires x > 0 and nu >= 0, got nu={nu}, x={x}"
        )));
    }
    let nl = (nu + 0.5).floor();
    let xmu = nu - nl;
    let xmu2 = xmu * xmu;
    let (mut k_mu, mut k_mu1);
    if x <= 2.0 {
        // Temme series at order xmu in [-1/2, 1/2].
        let x2 = 0.5 * x;
        let pimu = std::f64::consts::PI * xmu;
        let fact = if pimu.abs() < BESSEL_EPS { 1.0 } else { pimu / pimu.sin() };
        let d = -x2.ln();
        let e = xmu * d;
        let fact2 = if e.abs() < BESSEL_EPS { 1.0 } else { e.sinh() / e };
        let (gam1, gam2) = temme_gammas(xmu);
        let gampl = gam2 - xmu * gam1; // 1/Gamma(1+xmu)
        let gammi = gam2 + xmu * gam1; // 1/Gamma(1-xmu)
        let mut ff = fact * (gam1 * e.cosh() + gam2 * fact2 * d);
        let mut sum = ff;
        let e_exp = e.exp();
        let mut p = 0.5 * e_exp / gampl;
        let mut q = 0.5 / (e_exp * gammi);
        let mut c = 1.0;
        let d2 = x2 * x2;
        let mut sum1 = p;
        let mut converged = false;
        for i in 1..=BESSEL_MAX_ITER {
            let fi = i as f64;
            ff = (fi * ff + p + q) / (fi * fi - xmu2);
            c *= d2 / fi;
            p /= fi - xmu;
            q /= fi + xmu;
            let del = c * ff;
            sum += del;
            let del1 = c * (p - fi * ff);
            sum1 += del1;
            if del.abs() < sum.abs() * BESSEL_EPS {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::numeric("bessel_k series failed to converge"));
        }
        k_mu = sum;
        k_mu1 = sum1 * 2.0 / x;
    } else {
        // Steed's continued fraction CF2.
        let mut b = 2.0 * (1.0 + x);
        let mut d = 1.0 / b;
        let mut delh = d;
        let mut h = delh;
        let mut q1 = 0.0;
        let mut q2 = 1.0;
        let a1 = 0.25 - xmu2;
        let mut q = a1;
        let mut c = a1;
        let mut a = -a1;
        let mut s = 1.0 + q * delh;
        let mut converged = false;
        for i in 2..=BESSEL_MAX_ITER {
            a -= 2.0 * (i as f64 - 1.0);
            c = -a * c / i as f64;
            let qnew = (q1 - b * q2) / a;
            q1 = q2;
            q2 = qnew;
            q += c * qnew;
            b += 2.0;
            d = 1.0 / (b + a * d);
            delh = (b * d - 1.0) * delh;
            h += delh;
            let dels = q * delh;
            s += dels;
            if (dels / s).abs() < BESSEL_EPS {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::numeric("bessel_k continued fraction failed to converge"));
        }
        h *= a1;
        k_mu = (std::f64::consts::PI / (2.0 * x)).sqrt() * (-x).exp() / s;
        k_mu1 = k_mu * (xmu + x + 0.5 - h) / x;
    }
    // March the order up from xmu to nu.
    for i in 1..=(nl as usize) {
        let k_next = (xmu + i as f64) * 2.0 / x * k_mu1 + k_mu;
        k_mu = k_mu1;
        k_mu1 = k_next;
    }
    Ok(k_mu)
}

/// Matern correlation with range `rho` and smoothness `kappa`, scaled so
/// that `kappa = 1/2` is exactly `exp(-h/rho)`.
pub fn matern_correlation(h: f64, rho: f64, kappa: f64) -> Result<f64> {
    if !(rho > 0.0 && kappa > 0.0) {
        return Err(Error::invalid("matern requires positive range and smoothness"));
    }
    if h == 0.0 {
        return Ok(1.0);
    }
    let z = (2.0 * kappa).sqrt() * h / rho;
    if z > 700.0 {
        return Ok(0.0); // exp underflow region
    }
    let log_coef = (1.0 - kappa) * 2.0_f64.ln() - ln_gamma(kappa) + kappa * z.ln();
    let k = bessel_k(kappa, z)?;
    if k <= 0.0 {
        return Ok(0.0);
    }
    Ok((log_coef + k.ln()).exp())
}

/// Hyperparameters of one coefficient field's GP prior.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FieldHyper {
    /// GP mean.
    pub beta: f64,
    /// GP partial sill (variance of the smooth component).
    pub tau2: f64,
    /// Matern range.
    pub rho: f64,
    /// Nugget variance.
    pub v2: f64,
}

/// Dense evaluation state for one field prior: the field is marginally
/// multivariate normal with mean `beta` and covariance
/// `tau2 K(rho, kappa) + v2 I`; the precision is cached so single-site
/// updates cost O(n).
#[derive(Debug, Clone)]
pub struct StvcFieldPrior {
    pub hyper: FieldHyper,
    precision: Array2<f64>,
    log_norm: f64,
    n: usize,
}

impl StvcFieldPrior {
    pub fn new(coords: &[[f64; 2]], hyper: FieldHyper, kappa: f64) -> Result<Self> {
        if !(hyper.tau2 >= 0.0 && hyper.v2 > 0.0) {
            return Err(Error::invalid("field prior needs tau2 >= 0 and v2 > 0"));
        }
        let n = coords.len();
        let mut cov = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            for j in i..n {
                let h = ((coords[i][0] - coords[j][0]).powi(2)
                    + (coords[i][1] - coords[j][1]).powi(2))
                .sqrt();
                let mut v = hyper.tau2 * matern_correlation(h, hyper.rho, kappa)?;
                if i == j {
                    v += hyper.v2;
                }
                cov[[i, j]] = v;
                cov[[j, i]] = v;
            }
        }
        let chol = linalg::cholesky(&cov)?;
        let log_det = chol.log_det();
        let precision = linalg::inverse_spd(&cov)?;
        let log_norm = -0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + log_det);
        Ok(Self {
            hyper,
            precision,
            log_norm,
            n,
        })
    }

    /// Full multivariate normal log density of the field.
    pub fn logdensity(&self, field: &[f64]) -> f64 {
        assert_eq!(field.len(), self.n);
        let centered: Vec<f64> = field.iter().map(|v| v - self.hyper.beta).collect();
        let mut quad = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                quad += centered[i] * self.precision[[i, j]] * centered[j];
            }
        }
        self.log_norm - 0.5 * quad
    }

    /// Change in log density when site `k`'s value moves to `new_val`,
    /// computed from the cached precision in O(n).
    pub fn delta_one_site(&self, field: &[f64], k: usize, new_val: f64) -> f64 {
        let diff = new_val - field[k];
        if diff == 0.0 {
            return 0.0;
        }
        let mut row_dot = 0.0;
        for j in 0..self.n {
            row_dot += self.precision[[k, j]] * (field[j] - self.hyper.beta);
        }
        -0.5 * (2.0 * diff * row_dot + self.precision[[k, k]] * diff * diff)
    }
}
