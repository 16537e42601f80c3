//! Feed-forward density-regression network: hidden layers feed a softmax
//! whose probabilities weight an M-spline mixture density.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spqr::basis::SplineBasis;
use crate::spqr::features::FeatureLayout;

/// Responses are clamped into this closed interval before evaluating the
/// likelihood, avoiding the spline edge where all basis functions vanish.
pub const RESPONSE_CLAMP: (f64, f64) = (1e-6, 1.0 - 1e-6);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        }
    }

    /// Derivative expressed through the activation output `a`.
    fn grad_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
        }
    }
}

/// One trained conditional-density network together with its spline basis
/// and feature layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpqrNet {
    /// Serialization format version.
    pub version: u32,
    /// Layer widths, input first, K outputs last.
    pub layers: Vec<usize>,
    /// `weights[l]` has shape (layers[l+1], layers[l]).
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub activation: Activation,
    pub basis: SplineBasis,
    pub layout: FeatureLayout,
}

pub const NET_FORMAT_VERSION: u32 = 1;

impl SpqrNet {
    /// Zero-initialized network; softmax outputs are uniform.
    pub fn zeros(
        p_inputs: usize,
        hidden: &[usize],
        basis: SplineBasis,
        activation: Activation,
        layout: FeatureLayout,
    ) -> Self {
        let mut layers = vec![p_inputs];
        layers.extend_from_slice(hidden);
        layers.push(basis.k_basis);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..layers.len() - 1 {
            weights.push(Array2::zeros((layers[l + 1], layers[l])));
            biases.push(Array1::zeros(layers[l + 1]));
        }
        Self {
            version: NET_FORMAT_VERSION,
            layers,
            weights,
            biases,
            activation,
            basis,
            layout,
        }
    }

    pub fn n_inputs(&self) -> usize {
        self.layers[0]
    }

    pub fn k_outputs(&self) -> usize {
        *self.layers.last().unwrap()
    }

    fn check_input(&self, x: ArrayView1<f64>) -> Result<()> {
        if x.len() != self.n_inputs() {
            return Err(Error::LayoutMismatch(format!(
                "expected {} features, got {}",
                self.n_inputs(),
                x.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite feature value"));
        }
        Ok(())
    }

    /// Mixture probabilities for one feature vector.
    pub fn forward(&self, x: ArrayView1<f64>) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut a: Vec<f64> = x.to_vec();
        let n_layers = self.weights.len();
        for l in 0..n_layers {
            let w = &self.weights[l];
            let b = &self.biases[l];
            let mut z: Vec<f64> = (0..w.nrows())
                .map(|i| {
                    let mut s = b[i];
                    for j in 0..w.ncols() {
                        s += w[[i, j]] * a[j];
                    }
                    s
                })
                .collect();
            if l + 1 < n_layers {
                z.iter_mut().for_each(|v| *v = self.activation.apply(*v));
            }
            a = z;
        }
        Ok(softmax(&a))
    }

    /// Mixture density at `u` given features `x`.
    pub fn density(&self, x: ArrayView1<f64>, u: f64) -> Result<f64> {
        let pi = self.forward(x)?;
        let b = self.basis.eval_m(u)?;
        Ok(dot(&pi, &b))
    }

    /// Conditional CDF at `u` given features `x`.
    pub fn cdf(&self, x: ArrayView1<f64>, u: f64) -> Result<f64> {
        let pi = self.forward(x)?;
        let i = self.basis.eval_i(u)?;
        Ok(dot(&pi, &i))
    }

    /// Conditional quantile by bisection on the CDF, to 1e-9. The CDF is
    /// strictly increasing because every softmax probability is positive.
    pub fn quantile(&self, x: ArrayView1<f64>, tau: f64) -> Result<f64> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::invalid(format!("quantile level must be in (0,1), got {tau}")));
        }
        let pi = self.forward(x)?;
        self.quantile_with_pi(&pi, tau)
    }

    /// Quantile reusing an already-computed probability vector.
    pub fn quantile_with_pi(&self, pi: &[f64], tau: f64) -> Result<f64> {
        let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
        while hi - lo > 1e-9 {
            let mid = 0.5 * (lo + hi);
            let c = dot(pi, &self.basis.eval_i(mid)?);
            if c < tau {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Negative log-likelihood and its gradient over a batch by reverse-mode
    /// accumulation. Responses outside the clamp interval are clamped and
    /// counted. Returns `(loss, gradients, n_clamped)`.
    pub fn nll_gradient(
        &self,
        xs: ArrayView2<f64>,
        us: &[f64],
    ) -> Result<(f64, Gradients, usize)> {
        if xs.nrows() != us.len() {
            return Err(Error::invalid("batch feature/response count mismatch"));
        }
        if xs.ncols() != self.n_inputs() {
            return Err(Error::LayoutMismatch(format!(
                "expected {} features, got {}",
                self.n_inputs(),
                xs.ncols()
            )));
        }
        let batch = us.len();
        let n_layers = self.weights.len();
        let mut grads = Gradients::zeros_like(self);
        let mut loss = 0.0;
        let mut n_clamped = 0;

        // Per-sample forward pass with stored activations, then backprop.
        let mut activations: Vec<Vec<f64>> = Vec::with_capacity(n_layers + 1);
        for row in 0..batch {
            let x = xs.row(row);
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("non-finite feature value"));
            }
            let mut u = us[row];
            if u < RESPONSE_CLAMP.0 || u > RESPONSE_CLAMP.1 {
                u = u.clamp(RESPONSE_CLAMP.0, RESPONSE_CLAMP.1);
                n_clamped += 1;
            }

            activations.clear();
            activations.push(x.to_vec());
            for l in 0..n_layers {
                let w = &self.weights[l];
                let b = &self.biases[l];
                let prev = &activations[l];
                let mut z: Vec<f64> = (0..w.nrows())
                    .map(|i| {
                        let mut s = b[i];
                        for j in 0..w.ncols() {
                            s += w[[i, j]] * prev[j];
                        }
                        s
                    })
                    .collect();
                if l + 1 < n_layers {
                    z.iter_mut().for_each(|v| *v = self.activation.apply(*v));
                }
                activations.push(z);
            }
            let pi = softmax(activations.last().unwrap());
            let b_vals = self.basis.eval_m(u)?;
            let f = dot(&pi, &b_vals).max(1e-300);
            loss -= f.ln();

            // d(-log f)/d logits_k = pi_k (1 - B_k(u)/f).
            let mut delta: Vec<f64> = (0..pi.len())
                .map(|k| pi[k] * (1.0 - b_vals[k] / f))
                .collect();
            for l in (0..n_layers).rev() {
                let prev = &activations[l];
                for i in 0..delta.len() {
                    grads.biases[l][i] += delta[i];
                    for j in 0..prev.len() {
                        grads.weights[l][[i, j]] += delta[i] * prev[j];
                    }
                }
                if l > 0 {
                    let w = &self.weights[l];
                    let mut next = vec![0.0; w.ncols()];
                    for j in 0..w.ncols() {
                        let mut s = 0.0;
                        for i in 0..delta.len() {
                            s += w[[i, j]] * delta[i];
                        }
                        // Activation derivative from the stored output.
                        next[j] = s * self.activation.grad_from_output(prev[j]);
                    }
                    delta = next;
                }
            }
        }

        let scale = 1.0 / batch as f64;
        loss *= scale;
        grads.scale(scale);
        Ok((loss, grads, n_clamped))
    }
}

/// Gradient buffers matching a network's weight shapes.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &SpqrNet) -> Self {
        Self {
            weights: net.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: net.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        }
    }

    fn scale(&mut self, s: f64) {
        for w in &mut self.weights {
            w.mapv_inplace(|v| v * s);
        }
        for b in &mut self.biases {
            b.mapv_inplace(|v| v * s);
        }
    }
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
