//! Accumulated local effects of features on predicted quantiles and the
//! variable-importance summary derived from them.

use ndarray::{Array1, ArrayView2};

use crate::error::{Error, Result};
use crate::spqr::net::SpqrNet;

/// ALE curve of one feature at one quantile level, plus its one-number
/// variable-importance summary.
#[derive(Debug, Clone)]
pub struct AleCurve {
    pub feature: usize,
    pub tau: f64,
    /// Bin edges over the feature's sample range.
    pub grid: Vec<f64>,
    /// Centered accumulated effect at each grid point.
    pub ale: Vec<f64>,
    /// Standard deviation of the ALE over the sample's marginal feature
    /// distribution.
    pub vi: f64,
    /// Set when the feature column was constant (VI forced to 0).
    pub constant_feature: bool,
}

/// Compute ALE curves and VI for feature `feature` of `net` at each quantile
/// level in `taus`, using `xs` as the reference sample.
///
/// The local quantile sensitivity is a central difference of the quantile
/// function; per-bin conditional averages of it are accumulated over the
/// feature's range and centered against the sample.
pub fn ale_and_vi(
    net: &SpqrNet,
    xs: ArrayView2<f64>,
    feature: usize,
    taus: &[f64],
    n_bins: usize,
) -> Result<Vec<AleCurve>> {
    if xs.nrows() == 0 {
        return Err(Error::invalid("reference sample is empty"));
    }
    if feature >= xs.ncols() {
        return Err(Error::invalid(format!("feature index {feature} out of range")));
    }
    if xs.ncols() != net.n_inputs() {
        return Err(Error::LayoutMismatch(format!(
            "reference sample has {} features, net expects {}",
            xs.ncols(),
            net.n_inputs()
        )));
    }
    let col: Vec<f64> = xs.column(feature).to_vec();
    let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo < 1e-12 {
        // Constant feature: no local effect is identifiable.
        return Ok(taus
            .iter()
            .map(|&tau| AleCurve {
                feature,
                tau,
                grid: vec![lo, hi],
                ale: vec![0.0, 0.0],
                vi: 0.0,
                constant_feature: true,
            })
            .collect());
    }
    let n_bins = n_bins.max(2).min(xs.nrows());
    let step = 1e-4 * (hi - lo).max(1e-3);

    // Quantile derivative per sample per tau, by central differences.
    let mut derivs = vec![vec![0.0; xs.nrows()]; taus.len()];
    let mut x_plus = Array1::zeros(xs.ncols());
    let mut x_minus = Array1::zeros(xs.ncols());
    for row in 0..xs.nrows() {
        x_plus.assign(&xs.row(row));
        x_minus.assign(&xs.row(row));
        x_plus[feature] += step;
        x_minus[feature] -= step;
        let pi_plus = net.forward(x_plus.view())?;
        let pi_minus = net.forward(x_minus.view())?;
        for (ti, &tau) in taus.iter().enumerate() {
            let q_plus = net.quantile_with_pi(&pi_plus, tau)?;
            let q_minus = net.quantile_with_pi(&pi_minus, tau)?;
            derivs[ti][row] = (q_plus - q_minus) / (2.0 * step);
        }
    }

    // Equal-width bins over the feature range.
    let edges: Vec<f64> = (0..=n_bins)
        .map(|b| lo + (hi - lo) * b as f64 / n_bins as f64)
        .collect();
    let bin_of = |v: f64| -> usize {
        (((v - lo) / (hi - lo) * n_bins as f64).floor() as usize).min(n_bins - 1)
    };

    let mut curves = Vec::with_capacity(taus.len());
    for (ti, &tau) in taus.iter().enumerate() {
        let mut sums = vec![0.0; n_bins];
        let mut counts = vec![0usize; n_bins];
        for (row, &v) in col.iter().enumerate() {
            let b = bin_of(v);
            sums[b] += derivs[ti][row];
            counts[b] += 1;
        }
        // Accumulate bin-mean derivatives; empty bins carry zero effect.
        let mut ale = vec![0.0; n_bins + 1];
        for b in 0..n_bins {
            let mean = if counts[b] > 0 { sums[b] / counts[b] as f64 } else { 0.0 };
            ale[b + 1] = ale[b] + mean * (edges[b + 1] - edges[b]);
        }
        // Per-sample ALE by interpolation, used for centering and for VI
        // over the marginal feature distribution.
        let sample_ale: Vec<f64> = col
            .iter()
            .map(|&v| {
                let b = bin_of(v);
                let w = (v - edges[b]) / (edges[b + 1] - edges[b]).max(1e-300);
                ale[b] + w * (ale[b + 1] - ale[b])
            })
            .collect();
        let mean = sample_ale.iter().sum::<f64>() / sample_ale.len() as f64;
        let var = sample_ale.iter().map(|a| (a - mean).powi(2)).sum::<f64>()
            / sample_ale.len() as f64;
        let centered: Vec<f64> = ale.iter().map(|a| a - mean).collect();
        curves.push(AleCurve {
            feature,
            tau,
            grid: edges.clone(),
            ale: centered,
            vi: var.sqrt(),
            constant_feature: false,
        });
    }
    Ok(curves)
}
