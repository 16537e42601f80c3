//! Tail-dependence estimators, calibration/Q-Q data, variograms,
//! model-comparison scores, and joint-exceedance Monte Carlo. Every
//! estimator returns plot-ready numbers; rendering is out of scope.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::SiteSet;
use crate::procsim::{replicate_rng, ModelVariant, PmmSimulator, SpatialParams};
use crate::stats;

/// Conditional exceedance estimates over a grid of thresholds and distance
/// bins.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChiEstimate {
    pub u_levels: Vec<f64>,
    /// Bin edges; bin b covers `[edges[b], edges[b+1])`.
    pub h_edges: Vec<f64>,
    /// `est[u][bin]`, NaN where a bin had no exceedance data.
    pub est: Vec<Vec<f64>>,
    /// Binomial-style standard errors on the same layout.
    pub se: Vec<Vec<f64>>,
    /// Ordered site pairs per bin.
    pub pair_counts: Vec<usize>,
    /// Bins dropped for having no pairs.
    pub empty_bins: Vec<usize>,
}

/// Rank-standardize each site's series to uniform scores `rank/(T+1)`.
pub fn rank_standardize(panel: ArrayView2<f64>) -> Array2<f64> {
    let (n, t_len) = panel.dim();
    let mut out = Array2::zeros((n, t_len));
    for i in 0..n {
        let row: Vec<f64> = panel.row(i).to_vec();
        let mut idx: Vec<usize> = (0..t_len).collect();
        idx.sort_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap());
        for (rank, &t) in idx.iter().enumerate() {
            out[[i, t]] = (rank + 1) as f64 / (t_len + 1) as f64;
        }
    }
    out
}

/// Empirical conditional exceedance over ordered site pairs grouped into
/// distance bins: for each threshold, the fraction of conditioning
/// exceedances that are joint exceedances.
pub fn empirical_chi(
    u_panel: ArrayView2<f64>,
    sites: &SiteSet,
    u_levels: &[f64],
    n_bins: usize,
    h_max: Option<f64>,
    use_km: bool,
) -> Result<ChiEstimate> {
    let n = sites.n_sites();
    if n < 2 {
        return Err(Error::invalid("chi estimation needs at least 2 sites"));
    }
    if u_panel.nrows() != n {
        return Err(Error::invalid("panel row count does not match sites"));
    }
    let scale = if use_km { sites.km_per_unit } else { 1.0 };
    let mut dmax: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            dmax = dmax.max(sites.dist(i, j) * scale);
        }
    }
    // Default convention: bins up to half the domain diameter.
    let h_max = h_max.unwrap_or(dmax / 2.0);
    let edges: Vec<f64> = (0..=n_bins)
        .map(|b| h_max * b as f64 / n_bins as f64)
        .collect();
    let mut pair_counts = vec![0usize; n_bins];
    let mut both = vec![vec![0u64; n_bins]; u_levels.len()];
    let mut cond = vec![vec![0u64; n_bins]; u_levels.len()];
    let t_len = u_panel.ncols();
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let h = sites.dist(i, j) * scale;
            if h >= h_max {
                continue;
            }
            let b = ((h / h_max * n_bins as f64).floor() as usize).min(n_bins - 1);
            pair_counts[b] += 1;
            for (ui, &lvl) in u_levels.iter().enumerate() {
                for t in 0..t_len {
                    if u_panel[[j, t]] > lvl {
                        cond[ui][b] += 1;
                        if u_panel[[i, t]] > lvl {
                            both[ui][b] += 1;
                        }
                    }
                }
            }
        }
    }
    let mut est = vec![vec![f64::NAN; n_bins]; u_levels.len()];
    let mut se = vec![vec![f64::NAN; n_bins]; u_levels.len()];
    let mut empty = Vec::new();
    for b in 0..n_bins {
        if pair_counts[b] == 0 {
            empty.push(b);
            continue;
        }
        for ui in 0..u_levels.len() {
            if cond[ui][b] > 0 {
                let p = both[ui][b] as f64 / cond[ui][b] as f64;
                est[ui][b] = p;
                se[ui][b] = (p * (1.0 - p) / cond[ui][b] as f64).sqrt();
            }
        }
    }
    Ok(ChiEstimate {
        u_levels: u_levels.to_vec(),
        h_edges: edges,
        est,
        se,
        pair_counts,
        empty_bins: empty,
    })
}

/// Limit of the conditional exceedance when the max-stable component is a
/// single shared variable: 0 below delta = 1/2, `2(2 delta - 1)/(3 delta - 1)`
/// above.
pub fn chi_shared_r_limit(delta: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::invalid(format!("delta must be in [0,1], got {delta}")));
    }
    if delta <= 0.5 {
        Ok(0.0)
    } else {
        Ok(2.0 * (2.0 * delta - 1.0) / (3.0 * delta - 1.0))
    }
}

/// Q-Q data from PIT scores: sorted `(theoretical, observed)` pairs on the
/// uniform scale and on the exponential scale `-log(1 - PIT)`, which
/// magnifies the upper tail.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QqData {
    pub uniform: Vec<(f64, f64)>,
    pub exponential: Vec<(f64, f64)>,
}

pub fn pit_qq_data(pits: &[f64]) -> Result<QqData> {
    if pits.is_empty() {
        return Err(Error::invalid("no PIT scores supplied"));
    }
    let mut sorted = pits.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len() as f64;
    let uniform: Vec<(f64, f64)> = sorted
        .iter()
        .enumerate()
        .map(|(i, &p)| ((i as f64 + 0.5) / n, p))
        .collect();
    let exponential = uniform
        .iter()
        .map(|&(t, p)| (-(1.0 - t).ln(), -(1.0 - p.min(1.0 - 1e-12)).ln()))
        .collect();
    Ok(QqData {
        uniform,
        exponential,
    })
}

/// One distance bin of a sample variogram.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VariogramBin {
    pub h_lo: f64,
    pub h_hi: f64,
    pub h_mid: f64,
    pub semivariance: f64,
    pub n_pairs: usize,
}

/// Matheron semivariogram per year, averaged over years; NaN cells are
/// skipped, empty bins omitted.
pub fn variogram(
    y_panel: ArrayView2<f64>,
    sites: &SiteSet,
    n_bins: usize,
    use_km: bool,
) -> Result<Vec<VariogramBin>> {
    let n = sites.n_sites();
    if n < 2 {
        return Err(Error::invalid("variogram needs at least 2 sites"));
    }
    let scale = if use_km { sites.km_per_unit } else { 1.0 };
    let mut dmax: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            dmax = dmax.max(sites.dist(i, j) * scale);
        }
    }
    let h_max = dmax / 2.0;
    let t_len = y_panel.ncols();
    let mut acc = vec![0.0; n_bins];
    let mut counts = vec![0usize; n_bins];
    for t in 0..t_len {
        for i in 0..n {
            for j in (i + 1)..n {
                let (a, b) = (y_panel[[i, t]], y_panel[[j, t]]);
                if !a.is_finite() || !b.is_finite() {
                    continue;
                }
                let h = sites.dist(i, j) * scale;
                if h >= h_max {
                    continue;
                }
                let bin = ((h / h_max * n_bins as f64).floor() as usize).min(n_bins - 1);
                acc[bin] += 0.5 * (a - b).powi(2);
                counts[bin] += 1;
            }
        }
    }
    Ok((0..n_bins)
        .filter(|&b| counts[b] > 0)
        .map(|b| VariogramBin {
            h_lo: h_max * b as f64 / n_bins as f64,
            h_hi: h_max * (b + 1) as f64 / n_bins as f64,
            h_mid: h_max * (b as f64 + 0.5) / n_bins as f64,
            semivariance: acc[b] / counts[b] as f64,
            n_pairs: counts[b],
        })
        .collect())
}

/// WAIC and importance-sampling LOO with their standard errors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreReport {
    pub waic: f64,
    pub waic_se: f64,
    pub p_waic: f64,
    pub loo: f64,
    pub loo_se: f64,
    pub n_samples: usize,
    pub n_cells: usize,
}

/// Compute WAIC `-2(lppd - p_waic)` and truncated self-normalized IS-LOO
/// from a pointwise log-likelihood matrix `[posterior sample][cell]`.
pub fn waic_and_loo(loglik: ArrayView2<f64>) -> Result<ScoreReport> {
    let (s, c) = loglik.dim();
    if s < 2 {
        return Err(Error::invalid("need at least 2 posterior samples for WAIC"));
    }
    let mut elpd_waic = Vec::with_capacity(c);
    let mut elpd_loo = Vec::with_capacity(c);
    let mut p_waic_total = 0.0;
    for cell in 0..c {
        let col: Vec<f64> = loglik.column(cell).to_vec();
        let max = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lppd = max + (col.iter().map(|l| (l - max).exp()).sum::<f64>() / s as f64).ln();
        let (_, var) = stats::mean_var(&col);
        p_waic_total += var;
        elpd_waic.push(lppd - var);

        // Importance weights 1/p, truncated at their 99.9th percentile,
        // self-normalized.
        let mut w: Vec<f64> = col.iter().map(|l| (-l + max).exp()).collect();
        let mut sorted = w.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let cap = stats::quantile(&sorted, 0.999);
        for wi in &mut w {
            *wi = wi.min(cap);
        }
        let num: f64 = w
            .iter()
            .zip(&col)
            .map(|(wi, l)| wi * (l - max).exp())
            .sum();
        let den: f64 = w.iter().sum();
        elpd_loo.push(max + (num / den).ln());
    }
    // WAIC = -2 (lppd - p_waic) = -2 sum_cells (lppd_cell - var_cell).
    let waic = -2.0 * elpd_waic.iter().sum::<f64>();
    let loo = -2.0 * elpd_loo.iter().sum::<f64>();
    let (_, var_waic) = stats::mean_var(&elpd_waic);
    let (_, var_loo) = stats::mean_var(&elpd_loo);
    Ok(ScoreReport {
        waic,
        waic_se: 2.0 * (c as f64 * var_waic).sqrt(),
        p_waic: p_waic_total,
        loo,
        loo_se: 2.0 * (c as f64 * var_loo).sqrt(),
        n_samples: s,
        n_cells: c,
    })
}

/// How a joint exceedance probability is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ExceedanceMethod {
    /// Simulate fields from the fitted residual process.
    MonteCarlo { n_draws: usize },
    /// Product of marginal exceedances; exact when sites are independent.
    AnalyticIndependence,
}

/// Per-posterior-draw joint exceedance probabilities
/// `Pr[U(s_i) > u_i for all i]`, thresholds on the copula scale.
pub fn joint_exceedance_probs(
    coords: &[[f64; 2]],
    variant: ModelVariant,
    draws: &[(SpatialParams, Vec<f64>)],
    method: ExceedanceMethod,
    seed: u64,
) -> Result<Vec<f64>> {
    let n = coords.len();
    let mut out = Vec::with_capacity(draws.len());
    for (d, (params, u_thresholds)) in draws.iter().enumerate() {
        if u_thresholds.len() != n {
            return Err(Error::invalid("one threshold per site required"));
        }
        let p = match method {
            ExceedanceMethod::AnalyticIndependence => u_thresholds
                .iter()
                .map(|&u| (1.0 - u).max(0.0))
                .product::<f64>(),
            ExceedanceMethod::MonteCarlo { n_draws } => {
                let sim = PmmSimulator::new(coords, variant, *params)?;
                let mut hits = 0u64;
                for rep in 0..n_draws {
                    let f = sim.simulate(&mut replicate_rng(
                        seed.wrapping_add(d as u64),
                        rep as u64,
                    ))?;
                    if f.u.iter().zip(u_thresholds).all(|(&u, &q)| u > q) {
                        hits += 1;
                    }
                }
                hits as f64 / n_draws as f64
            }
        };
        out.push(p);
    }
    Ok(out)
}

/// Mean/SD summary of per-draw probabilities plus the posterior probability
/// that scenario `b` exceeds scenario `a`, draw by draw.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExceedanceComparison {
    pub mean_a: f64,
    pub sd_a: f64,
    pub mean_b: f64,
    pub sd_b: f64,
    pub prob_b_exceeds_a: f64,
}

pub fn compare_exceedance(p_a: &[f64], p_b: &[f64]) -> Result<ExceedanceComparison> {
    if p_a.len() != p_b.len() || p_a.is_empty() {
        return Err(Error::invalid("need matching nonempty probability vectors"));
    }
    let (mean_a, var_a) = stats::mean_var(p_a);
    let (mean_b, var_b) = stats::mean_var(p_b);
    let prob = p_a
        .iter()
        .zip(p_b)
        .filter(|(a, b)| b > a)
        .count() as f64
        / p_a.len() as f64;
    Ok(ExceedanceComparison {
        mean_a,
        sd_a: var_a.sqrt(),
        mean_b,
        sd_b: var_b.sqrt(),
        prob_b_exceeds_a: prob,
    })
}
