//! Posterior summaries: moments, quantiles, split-chain R-hat, and
//! effective sample size.

use serde::{Deserialize, Serialize};

use crate::stats;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub median: f64,
    pub q975: f64,
    pub rhat: f64,
    pub ess: f64,
}

/// Split-chain R-hat: each chain is halved, then the classic
/// between/within variance ratio is applied to the 2m half-chains.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    let mut halves: Vec<&[f64]> = Vec::new();
    for c in chains {
        let mid = c.len() / 2;
        if mid == 0 {
            return f64::NAN;
        }
        halves.push(&c[..mid]);
        halves.push(&c[mid..mid * 2]);
    }
    let n = halves.iter().map(|h| h.len()).min().unwrap_or(0);
    if n < 2 {
        return f64::NAN;
    }
    let m = halves.len() as f64;
    let means: Vec<f64> = halves
        .iter()
        .map(|h| h[..n].iter().sum::<f64>() / n as f64)
        .collect();
    let grand = means.iter().sum::<f64>() / m;
    let b = n as f64 / (m - 1.0) * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>();
    let w = halves
        .iter()
        .zip(&means)
        .map(|(h, mu)| h[..n].iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n as f64 - 1.0))
        .sum::<f64>()
        / m;
    if w <= 0.0 {
        // Degenerate (constant) chains count as converged.
        return 1.0;
    }
    let var_plus = (n as f64 - 1.0) / n as f64 * w + b / n as f64;
    (var_plus / w).sqrt()
}

/// Effective sample size across chains with Geyer's initial positive
/// sequence truncation of the pooled autocorrelation.
pub fn effective_sample_size(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    if m == 0 {
        return 0.0;
    }
    let n = chains.iter().map(|c| c.len()).min().unwrap_or(0);
    if n < 4 {
        return (m * n) as f64;
    }
    // Pooled autocovariance averaged over chains, each around its own mean.
    let mut rho_sum = 0.0;
    let mut lag = 1usize;
    let var: f64 = chains
        .iter()
        .map(|c| stats::mean_var(&c[..n]).1)
        .sum::<f64>()
        / m as f64;
    if var <= 0.0 {
        return (m * n) as f64;
    }
    while lag + 1 < n {
        let mut pair = 0.0;
        for k in [lag, lag + 1] {
            let mut acc = 0.0;
            for c in chains {
                let mean = c[..n].iter().sum::<f64>() / n as f64;
                for t in 0..(n - k) {
                    acc += (c[t] - mean) * (c[t + k] - mean);
                }
            }
            pair += acc / (m * (n - k)) as f64 / var;
        }
        // Initial positive sequence: stop at the first nonpositive pair sum.
        if pair <= 0.0 {
            break;
        }
        rho_sum += pair;
        lag += 2;
    }
    ((m * n) as f64 / (1.0 + 2.0 * rho_sum)).min((m * n) as f64)
}

/// Per-parameter summaries over post-burn-in thinned chains.
/// `chains[c]` is a matrix of draws: outer index draw, inner parameter.
pub fn summarize(names: &[String], chains: &[Vec<Vec<f64>>]) -> Vec<PosteriorSummary> {
    let p = names.len();
    let mut out = Vec::with_capacity(p);
    for j in 0..p {
        let per_chain: Vec<Vec<f64>> = chains
            .iter()
            .map(|c| c.iter().map(|draw| draw[j]).collect())
            .collect();
        let mut pooled: Vec<f64> = per_chain.iter().flatten().copied().collect();
        let (mean, var) = stats::mean_var(&pooled);
        pooled.sort_by(|a, b| a.partial_cmp(b).unwrap());
        out.push(PosteriorSummary {
            name: names[j].clone(),
            mean,
            sd: var.sqrt(),
            q025: stats::quantile(&pooled, 0.025),
            median: stats::quantile(&pooled, 0.5),
            q975: stats::quantile(&pooled, 0.975),
            rhat: split_rhat(&per_chain),
            ess: effective_sample_size(&per_chain),
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn rhat_near_one_for_iid_chains() {
        let mut rng = crate::procsim::replicate_rng(1, 0);
        let chains: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..2000).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let r = split_rhat(&chains);
        assert!((r - 1.0).abs() < 0.02, "rhat = {r}");
        let ess = effective_sample_size(&chains);
        assert!(ess > 4000.0, "ess = {ess}");
    }

    #[test]
    fn rhat_flags_disagreeing_chains() {
        let a: Vec<f64> = (0..1000).map(|i| (i % 7) as f64 * 0.01).collect();
        let b: Vec<f64> = (0..1000).map(|i| 5.0 + (i % 5) as f64 * 0.01).collect();
        let r = split_rhat(&[a, b]);
        assert!(r > 2.0, "rhat should flag separation, got {r}");
    }

    #[test]
    fn ess_shrinks_for_correlated_chains() {
        let mut rng = crate::procsim::replicate_rng(2, 0);
        let mut x = 0.0;
        let chain: Vec<f64> = (0..4000)
            .map(|_| {
                x = 0.95 * x + rng.gen_range(-0.5..0.5);
                x
            })
            .collect();
        let ess = effective_sample_size(&[chain]);
        assert!(ess < 1000.0, "ess = {ess}");
    }

    #[test]
    fn summaries_have_ordered_quantiles() {
        let mut rng = crate::procsim::replicate_rng(3, 0);
        let chains: Vec<Vec<Vec<f64>>> = (0..2)
            .map(|_| {
                (0..500)
                    .map(|_| vec![rng.gen_range(0.0..1.0), rng.gen_range(5.0..6.0)])
                    .collect()
            })
            .collect();
        let s = summarize(&["a".into(), "b".into()], &chains);
        assert_eq!(s.len(), 2);
        for p in s {
            assert!(p.q025 <= p.median && p.median <= p.q975);
            assert!(p.sd > 0.0);
        }
    }
}
