//! M-spline density basis on [0,1] and its integrated I-spline counterpart.
//!
//! Each M-spline is nonnegative and integrates to one over the unit
//! interval, so a convex combination of them is itself a density; the
//! matching I-splines turn the same combination into a CDF.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// M-spline basis of `k_basis` functions on [0,1] with equally spaced
/// interior knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineBasis {
    pub k_basis: usize,
    pub degree: usize,
    /// Extended knot vector: `degree + 1` zeros, interior knots, `degree + 1`
    /// ones. Length `k_basis + degree + 1`.
    pub knots: Vec<f64>,
}

impl SplineBasis {
    /// Cubic basis, the default used everywhere.
    pub fn cubic(k_basis: usize) -> Result<Self> {
        Self::new(k_basis, 3)
    }

    pub fn new(k_basis: usize, degree: usize) -> Result<Self> {
        let order = degree + 1;
        if k_basis < order {
            return Err(Error::invalid(format!(
                "need at least order = degree + 1 = {order} basis functions, got {k_basis}"
            )));
        }
        let n_interior = k_basis - order;
        let mut knots = vec![0.0; order];
        for i in 1..=n_interior {
            knots.push(i as f64 / (n_interior + 1) as f64);
        }
        knots.extend(std::iter::repeat(1.0).take(order));
        Ok(Self {
            k_basis,
            degree,
            knots,
        })
    }

    fn order(&self) -> usize {
        self.degree + 1
    }

    fn check_u(&self, u: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&u) {
            return Err(Error::invalid(format!("spline argument must be in [0,1], got {u}")));
        }
        Ok(())
    }

    /// All M-spline values at `u`.
    pub fn eval_m(&self, u: f64) -> Result<Vec<f64>> {
        self.check_u(u)?;
        Ok(eval_msplines(&self.knots, self.order(), u))
    }

    /// All I-spline (running integral) values at `u`.
    pub fn eval_i(&self, u: f64) -> Result<Vec<f64>> {
        self.check_u(u)?;
        let k = self.order();
        // The closed form needs M-splines one order higher; extend the knot
        // vector by one trailing knot so that family has k_basis members.
        let mut ext = self.knots.clone();
        ext.push(1.0);
        let m_hi = eval_msplines(&ext, k + 1, u);
        let m_idx = containing_interval(&self.knots, u);
        let mut out = vec![0.0; self.k_basis];
        for i in 0..self.k_basis {
            if i > m_idx {
                out[i] = 0.0;
            } else if i + k <= m_idx {
                out[i] = 1.0;
            } else {
                let mut s = 0.0;
                for j in i..=m_idx {
                    s += (ext[j + k + 1] - ext[j]) * m_hi[j];
                }
                out[i] = (s / (k + 1) as f64).clamp(0.0, 1.0);
            }
        }
        Ok(out)
    }

    /// M- and I-spline values in one call.
    pub fn eval_both(&self, u: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        Ok((self.eval_m(u)?, self.eval_i(u)?))
    }
}

/// Index of the knot interval containing `u`, skipping zero-width intervals;
/// `u = 1` maps to the last positive-width interval.
fn containing_interval(knots: &[f64], u: f64) -> usize {
    let last = knots.len() - 1;
    let mut m = 0;
    for i in 0..last {
        if knots[i] <= u && (u < knots[i + 1] || (u == knots[last] && knots[i] < knots[i + 1])) {
            m = i;
        }
    }
    m
}

/// Evaluate every M-spline of the given order on `knots` at `u` via the
/// two-term recurrence, starting from the indicator seeds.
fn eval_msplines(knots: &[f64], order: usize, u: f64) -> Vec<f64> {
    let last = knots.len() - 1;
    let n1 = knots.len() - 1;
    let mut m = vec![0.0; n1];
    for i in 0..n1 {
        let inside = knots[i] <= u
            && (u < knots[i + 1] || (u == knots[last] && knots[i] < knots[i + 1] && knots[i + 1] == knots[last]));
        if inside {
            m[i] = 1.0 / (knots[i + 1] - knots[i]);
        }
    }
    for q in 2..=order {
        let nq = knots.len() - q;
        for i in 0..nq {
            let span = knots[i + q] - knots[i];
            m[i] = if span > 0.0 {
                q as f64 * ((u - knots[i]) * m[i] + (knots[i + q] - u) * m[i + 1])
                    / ((q - 1) as f64 * span)
            } else {
                0.0
            };
        }
        m.truncate(nq);
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn each_mspline_integrates_to_one() {
        // Simpson quadrature over [0,1].
        for &(k_basis, degree) in &[(5, 1), (8, 2), (10, 3), (15, 3)] {
            let b = SplineBasis::new(k_basis, degree).unwrap();
            let n = 20_000;
            let h = 1.0 / n as f64;
            let mut acc = vec![0.0; k_basis];
            for step in 0..=n {
                let u = step as f64 * h;
                let coef = if step == 0 || step == n {
                    1.0
                } else if step % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                for (a, v) in acc.iter_mut().zip(b.eval_m(u).unwrap()) {
                    *a += coef * v;
                }
            }
            for (k, a) in acc.iter().enumerate() {
                assert_abs_diff_eq!(a * h / 3.0, 1.0, epsilon = 1e-8);
                let _ = k;
            }
        }
    }

    #[test]
    fn msplines_are_nonnegative() {
        let b = SplineBasis::cubic(12).unwrap();
        for step in 0..=1000 {
            let u = step as f64 / 1000.0;
            for v in b.eval_m(u).unwrap() {
                assert!(v >= 0.0, "negative M-spline at u={u}");
            }
        }
    }

    #[test]
    fn isplines_hit_endpoints() {
        for &(k_basis, degree) in &[(5, 1), (10, 3), (15, 3)] {
            let b = SplineBasis::new(k_basis, degree).unwrap();
            for v in b.eval_i(0.0).unwrap() {
                assert_abs_diff_eq!(v, 0.0, epsilon = 1e-12);
            }
            for v in b.eval_i(1.0).unwrap() {
                assert_abs_diff_eq!(v, 1.0, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn ispline_matches_quadrature_of_mspline() {
        let b = SplineBasis::cubic(10).unwrap();
        for &u in &[0.13, 0.35, 0.5, 0.78, 0.97] {
            let i_vals = b.eval_i(u).unwrap();
            // Trapezoid quadrature of each M-spline from 0 to u.
            let n = 40_000;
            let h = u / n as f64;
            let mut acc = vec![0.0; 10];
            for step in 0..=n {
                let x = step as f64 * h;
                let coef = if step == 0 || step == n { 0.5 } else { 1.0 };
                for (a, v) in acc.iter_mut().zip(b.eval_m(x).unwrap()) {
                    *a += coef * v;
                }
            }
            for k in 0..10 {
                assert_abs_diff_eq!(acc[k] * h, i_vals[k], epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn derivative_of_integral_recovers_density() {
        // Random convex weights: d/du sum c_k I_k(u) = sum c_k B_k(u).
        let b = SplineBasis::cubic(10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut c: Vec<f64> = (0..10).map(|_| rng.gen_range(0.01..1.0)).collect();
        let t: f64 = c.iter().sum();
        c.iter_mut().for_each(|x| *x /= t);
        let u = 0.5;
        let f: f64 = b
            .eval_m(u)
            .unwrap()
            .iter()
            .zip(&c)
            .map(|(v, w)| v * w)
            .sum();
        let h = 1e-5;
        let cdf = |x: f64| -> f64 {
            b.eval_i(x)
                .unwrap()
                .iter()
                .zip(&c)
                .map(|(v, w)| v * w)
                .sum()
        };
        let fd = (cdf(u + h) - cdf(u - h)) / (2.0 * h);
        assert_abs_diff_eq!(f, fd, epsilon = 1e-6);
    }

    #[test]
    fn isplines_monotone_in_u() {
        let b = SplineBasis::cubic(15).unwrap();
        let mut prev = b.eval_i(0.0).unwrap();
        for step in 1..=500 {
            let u = step as f64 / 500.0;
            let cur = b.eval_i(u).unwrap();
            for k in 0..15 {
                assert!(cur[k] >= prev[k] - 1e-12, "I_{k} not monotone at u={u}");
            }
            prev = cur;
        }
    }

    #[test]
    fn rejects_out_of_range_and_tiny_bases() {
        let b = SplineBasis::cubic(10).unwrap();
        assert!(b.eval_m(-0.01).is_err());
        assert!(b.eval_m(1.01).is_err());
        assert!(SplineBasis::cubic(3).is_err());
    }
}
