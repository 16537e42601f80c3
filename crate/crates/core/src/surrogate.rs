//! The Vecchia-factorized surrogate log-likelihood on the data scale.
//!
//! The joint density factors into per-site conditionals given small
//! nearest-neighbor sets; each conditional is evaluated by a
//! [`SiteConditional`] — either a trained density-regression net or, for the
//! pure Gaussian special case, the exact closed-form conditional. The change
//! of variables to the data scale contributes one GEV log-density term per
//! observed cell.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::geo::{NeighborGraph, SiteSet};
use crate::margins::{GevSiteParams, TimeCovariate};
use crate::procsim::{gp_correlation, SpatialParams};
use crate::spqr::SpqrNet;
use crate::stats;

/// Copula values are clamped into this interval before net evaluation to
/// avoid the spline edges.
pub const U_CLAMP: (f64, f64) = (1e-10, 1.0 - 1e-10);

/// Deterministic filler for padded neighbor slots of a global net at
/// evaluation time; training randomizes pads so the value is uninformative.
pub const EVAL_PAD_U: f64 = 0.5;

/// Observation status of one (site, year) cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    Observed,
    /// The response fell below the censoring threshold; the cell carries the
    /// threshold value.
    Censored,
    Missing,
}

/// Response panel with site metadata, missingness mask, and censoring.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub sites: SiteSet,
    pub years: Vec<i32>,
    /// Response matrix `[site][year]` in transformed (e.g. log) units.
    /// Censored cells hold the threshold; missing cells hold NaN.
    pub y: Array2<f64>,
    pub status: Array2<CellStatus>,
    /// Censoring threshold in response units, when any cell is censored.
    pub censor_threshold: Option<f64>,
}

impl Dataset {
    /// Fully observed panel.
    pub fn complete(sites: SiteSet, years: Vec<i32>, y: Array2<f64>) -> Result<Self> {
        if y.nrows() != sites.n_sites() || y.ncols() != years.len() {
            return Err(Error::invalid("response matrix shape does not match sites x years"));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("complete dataset must have finite responses"));
        }
        let status = Array2::from_elem(y.raw_dim(), CellStatus::Observed);
        Ok(Self {
            sites,
            years,
            y,
            status,
            censor_threshold: None,
        })
    }

    /// Panel with missing cells marked by NaN in `y`.
    pub fn with_missing(sites: SiteSet, years: Vec<i32>, y: Array2<f64>) -> Result<Self> {
        if y.nrows() != sites.n_sites() || y.ncols() != years.len() {
            return Err(Error::invalid("response matrix shape does not match sites x years"));
        }
        let status = y.mapv(|v| {
            if v.is_nan() {
                CellStatus::Missing
            } else {
                CellStatus::Observed
            }
        });
        Ok(Self {
            sites,
            years,
            y,
            status,
            censor_threshold: None,
        })
    }

    /// Mark every observed response strictly below `threshold` as censored
    /// at the threshold.
    pub fn apply_censoring(&mut self, threshold: f64) {
        for ((i, t), status) in self.status.indexed_iter_mut() {
            if *status == CellStatus::Observed && self.y[[i, t]] < threshold {
                *status = CellStatus::Censored;
                self.y[[i, t]] = threshold;
            }
        }
        self.censor_threshold = Some(threshold);
    }

    pub fn n_sites(&self) -> usize {
        self.sites.n_sites()
    }

    pub fn n_years(&self) -> usize {
        self.years.len()
    }

    pub fn n_missing(&self) -> usize {
        self.status.iter().filter(|s| **s == CellStatus::Missing).count()
    }

    pub fn n_censored(&self) -> usize {
        self.status.iter().filter(|s| **s == CellStatus::Censored).count()
    }
}

/// Result of the change of variables to the copula scale.
#[derive(Debug, Clone)]
pub struct UniformPanel {
    /// `[site][year]` in original site order; censored cells hold the
    /// threshold's PIT value, missing cells NaN.
    pub u: Array2<f64>,
    /// Sum of GEV log densities over observed cells; `-inf` when any
    /// observed response falls outside its marginal support.
    pub log_jacobian: f64,
}

/// Probability-integral-transform the panel under the given margins.
///
/// An out-of-support observation is not an error: it yields a `-inf`
/// Jacobian, which a Metropolis step treats as certain rejection.
pub fn to_uniform(
    data: &Dataset,
    margins: &GevSiteParams,
    covariate: &TimeCovariate,
) -> UniformPanel {
    let (n, t_len) = (data.n_sites(), data.n_years());
    let mut u = Array2::from_elem((n, t_len), f64::NAN);
    let mut log_jac = 0.0;
    for i in 0..n {
        for t in 0..t_len {
            match data.status[[i, t]] {
                CellStatus::Missing => {}
                CellStatus::Observed => {
                    let g = margins.at(i, covariate.x[t]);
                    let y = data.y[[i, t]];
                    u[[i, t]] = g.cdf(y);
                    log_jac += g.log_pdf(y);
                }
                CellStatus::Censored => {
                    let g = margins.at(i, covariate.x[t]);
                    u[[i, t]] = g.cdf(data.y[[i, t]]);
                }
            }
        }
    }
    UniformPanel {
        u,
        log_jacobian: log_jac,
    }
}

/// One site's conditional density model, prepared once per parameter change
/// and then evaluated across years.
pub trait SiteConditional: Send + Sync {
    fn prepare(&self, params: &SpatialParams) -> Result<Box<dyn PreparedConditional + '_>>;
    /// Exact neighbor count required, or None when the layout pads.
    fn expected_neighbors(&self) -> Option<usize>;
}

pub trait PreparedConditional {
    /// log conditional density of `u` given the neighbor values.
    fn log_density(&self, u: f64, neighbor_us: &[f64]) -> Result<f64>;
    /// log conditional CDF at `u` (censored contributions).
    fn log_cdf(&self, u: f64, neighbor_us: &[f64]) -> Result<f64>;
}

impl SiteConditional for SpqrNet {
    fn prepare(&self, params: &SpatialParams) -> Result<Box<dyn PreparedConditional + '_>> {
        Ok(Box::new(PreparedNet {
            net: self,
            theta: self.layout.theta_features(params),
        }))
    }

    fn expected_neighbors(&self) -> Option<usize> {
        if self.layout.offsets {
            None
        } else {
            Some(self.layout.n_neighbors)
        }
    }
}

struct PreparedNet<'a> {
    net: &'a SpqrNet,
    theta: Vec<f64>,
}

impl PreparedNet<'_> {
    fn features(&self, neighbor_us: &[f64]) -> Result<Vec<f64>> {
        let layout = &self.net.layout;
        if neighbor_us.len() > layout.n_neighbors
            || (!layout.offsets && neighbor_us.len() != layout.n_neighbors)
        {
            return Err(Error::LayoutMismatch(format!(
                "net trained for {} neighbors, {} supplied",
                layout.n_neighbors,
                neighbor_us.len()
            )));
        }
        let mut x = Vec::with_capacity(self.net.n_inputs());
        x.extend_from_slice(&self.theta);
        for &u in neighbor_us {
            x.push(layout.neighbor_feature(u.clamp(U_CLAMP.0, U_CLAMP.1)));
        }
        for _ in neighbor_us.len()..layout.n_neighbors {
            x.push(layout.neighbor_feature(EVAL_PAD_U));
        }
        // Offsets are baked into padded form only for global nets evaluated
        // through `GlobalNetConditional`; a bare net used directly must be a
        // local one.
        if layout.offsets {
            return Err(Error::LayoutMismatch(
                "global nets must be evaluated through GlobalNetConditional".into(),
            ));
        }
        Ok(x)
    }
}

impl PreparedConditional for PreparedNet<'_> {
    fn log_density(&self, u: f64, neighbor_us: &[f64]) -> Result<f64> {
        let x = self.features(neighbor_us)?;
        let u = u.clamp(U_CLAMP.0, U_CLAMP.1);
        let f = self.net.density(ndarray::ArrayView1::from(&x), u)?;
        Ok(f.max(1e-300).ln())
    }

    fn log_cdf(&self, u: f64, neighbor_us: &[f64]) -> Result<f64> {
        let x = self.features(neighbor_us)?;
        let u = u.clamp(U_CLAMP.0, U_CLAMP.1);
        let c = self.net.cdf(ndarray::ArrayView1::from(&x), u)?;
        Ok(c.max(1e-300).ln())
    }
}

/// Adapter fixing one site's neighbor offsets so a single global net can
/// serve every site.
pub struct GlobalNetConditional {
    pub net: SpqrNet,
    /// Offsets `s_j - s_i` for the site's actual neighbors.
    pub offsets: Vec<[f64; 2]>,
}

impl SiteConditional for GlobalNetConditional {
    fn prepare(&self, params: &SpatialParams) -> Result<Box<dyn PreparedConditional + '_>> {
        Ok(Box::new(PreparedGlobalNet {
            owner: self,
            theta: self.net.layout.theta_features(params),
        }))
    }

    fn expected_neighbors(&self) -> Option<usize> {
        None
    }
}

struct PreparedGlobalNet<'a> {
    owner: &'a GlobalNetConditional,
    theta: Vec<f64>,
}

impl PreparedGlobalNet<'_> {
    fn features(&self, neighbor_us: &[f64]) -> Result<Vec<f64>> {
        let layout = &self.owner.net.layout;
        if neighbor_us.len() != self.owner.offsets.len() {
            return Err(Error::LayoutMismatch(
                "neighbor count does not match the adapter's offsets".into(),
            ));
        }
        if neighbor_us.len() > layout.n_neighbors {
            return Err(Error::LayoutMismatch(format!(
                "net pads to {} neighbors, {} supplied",
                layout.n_neighbors,
                neighbor_us.len()
            )));
        }
        let mut x = Vec::with_capacity(self.owner.net.n_inputs());
        x.extend_from_slice(&self.theta);
        for &u in neighbor_us {
            x.push(layout.neighbor_feature(u.clamp(U_CLAMP.0, U_CLAMP.1)));
        }
        for _ in neighbor_us.len()..layout.n_neighbors {
            x.push(layout.neighbor_feature(EVAL_PAD_U));
        }
        for o in &self.owner.offsets {
            x.push(o[0]);
            x.push(o[1]);
        }
        for _ in self.owner.offsets.len()..layout.n_neighbors {
            x.push(crate::spqr::PAD_OFFSET);
            x.push(crate::spqr::PAD_OFFSET);
        }
        Ok(x)
    }
}

impl PreparedConditional for PreparedGlobalNet<'_> {
    fn log_density(&self, u: f64, neighbor_us: &[f64]) -> Result<f64> {
        let x = self.features(neighbor_us)?;
        let u = u.clamp(U_CLAMP.0, U_CLAMP.1);
        let f = self.owner.net.density(ndarray::ArrayView1::from(&x), u)?;
        Ok(f.max(1e-300).ln())
    }

    fn log_cdf(&self, u: f64, neighbor_us: &[f64]) -> Result<f64> {
        let x = self.features(neighbor_us)?;
        let u = u.clamp(U_CLAMP.0, U_CLAMP.1);
        let c = self.owner.net.cdf(ndarray::ArrayView1::from(&x), u)?;
        Ok(c.max(1e-300).ln())
    }
}

/// Exact conditional for the pure Gaussian-process special case: on the
/// copula scale the model is a Gaussian copula, so the conditional given
/// neighbors is available in closed form. Serves both as an inference path
/// and as the oracle the surrogate is checked against.
pub struct ExactGaussianConditional {
    pub site: [f64; 2],
    pub neighbors: Vec<[f64; 2]>,
    pub alpha: f64,
}

impl SiteConditional for ExactGaussianConditional {
    fn prepare(&self, params: &SpatialParams) -> Result<Box<dyn PreparedConditional + '_>> {
        let m = self.neighbors.len();
        let mut cov = Array2::<f64>::zeros((m, m));
        for a in 0..m {
            for b in 0..m {
                let h = dist(self.neighbors[a], self.neighbors[b]);
                cov[[a, b]] = gp_correlation(h, params.rho_w, self.alpha, params.r);
            }
        }
        let cross: Vec<f64> = self
            .neighbors
            .iter()
            .map(|&c| gp_correlation(dist(self.site, c), params.rho_w, self.alpha, params.r))
            .collect();
        let (weights, cond_var) = if m == 0 {
            (Vec::new(), 1.0)
        } else {
            let chol = crate::linalg::cholesky(&cov)?;
            let w = chol.solve(&cross);
            let explained: f64 = w.iter().zip(&cross).map(|(a, b)| a * b).sum();
            (w, (1.0 - explained).max(1e-12))
        };
        Ok(Box::new(PreparedGaussian {
            weights,
            cond_sd: cond_var.sqrt(),
        }))
    }

    fn expected_neighbors(&self) -> Option<usize> {
        Some(self.neighbors.len())
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

struct PreparedGaussian {
    weights: Vec<f64>,
    cond_sd: f64,
}

impl PreparedGaussian {
    fn conditional_mean(&self, neighbor_us: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(neighbor_us)
            .map(|(w, &u)| w * stats::norm_quantile(u.clamp(U_CLAMP.0, U_CLAMP.1)))
            .sum()
    }
}

impl PreparedConditional for PreparedGaussian {
    fn log_density(&self, u: f64, neighbor_us: &[f64]) -> Result<f64> {
        if neighbor_us.len() != self.weights.len() {
            return Err(Error::LayoutMismatch(
                "neighbor count mismatch in exact Gaussian conditional".into(),
            ));
        }
        let u = u.clamp(U_CLAMP.0, U_CLAMP.1);
        let z = stats::norm_quantile(u);
        let mean = self.conditional_mean(neighbor_us);
        let std_z = (z - mean) / self.cond_sd;
        Ok(stats::norm_logpdf(std_z) - self.cond_sd.ln() - stats::norm_logpdf(z))
    }

    fn log_cdf(&self, u: f64, neighbor_us: &[f64]) -> Result<f64> {
        if neighbor_us.len() != self.weights.len() {
            return Err(Error::LayoutMismatch(
                "neighbor count mismatch in exact Gaussian conditional".into(),
            ));
        }
        let u = u.clamp(U_CLAMP.0, U_CLAMP.1);
        let z = stats::norm_quantile(u);
        let mean = self.conditional_mean(neighbor_us);
        Ok(stats::norm_cdf((z - mean) / self.cond_sd).max(1e-300).ln())
    }
}

/// The conditional models for every site with neighbors, indexed by visit
/// position (position 0 has the uniform marginal and no model).
pub struct ConditionalSet {
    conds: Vec<Box<dyn SiteConditional>>,
}

impl ConditionalSet {
    /// `conds[k-1]` must belong to visit position `k`.
    pub fn new(conds: Vec<Box<dyn SiteConditional>>) -> Self {
        Self { conds }
    }

    pub fn from_nets(nets: Vec<SpqrNet>) -> Self {
        Self {
            conds: nets
                .into_iter()
                .map(|n| Box::new(n) as Box<dyn SiteConditional>)
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.conds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.conds.is_empty()
    }

    pub fn for_visit(&self, k: usize) -> &dyn SiteConditional {
        assert!(k >= 1, "site at visit position 0 has no conditional model");
        self.conds[k - 1].as_ref()
    }

    /// Check neighbor counts against the graph before evaluation.
    pub fn check_graph(&self, graph: &NeighborGraph) -> Result<()> {
        if self.conds.len() != graph.n_sites() - 1 {
            return Err(Error::LayoutMismatch(format!(
                "{} conditional models for {} sites (need one per site after the first)",
                self.conds.len(),
                graph.n_sites()
            )));
        }
        for k in 1..graph.n_sites() {
            if let Some(expect) = self.for_visit(k).expected_neighbors() {
                let have = graph.neighbors[k].len();
                if expect != have {
                    return Err(Error::LayoutMismatch(format!(
                        "site at visit position {k} has {have} neighbors but its model expects {expect}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Gather neighbor values of visit position `k` at year `t`.
fn neighbor_values(u_by_visit: &Array2<f64>, graph: &NeighborGraph, k: usize, t: usize) -> Vec<f64> {
    graph.neighbors[k].iter().map(|&j| u_by_visit[[j, t]]).collect()
}

/// Vecchia log likelihood of a complete copula-scale panel `[visit][year]`:
/// the first-visited site contributes the uniform marginal (zero), every
/// other site its conditional log density, and years are independent.
pub fn vecchia_loglik(
    u_by_visit: &Array2<f64>,
    params: &SpatialParams,
    conds: &ConditionalSet,
    graph: &NeighborGraph,
) -> Result<f64> {
    let n = graph.n_sites();
    if u_by_visit.nrows() != n {
        return Err(Error::invalid("panel row count does not match graph"));
    }
    if n == 1 {
        return Ok(0.0);
    }
    conds.check_graph(graph)?;
    let t_len = u_by_visit.ncols();
    let mut total = 0.0;
    for k in 1..n {
        let prepared = conds.for_visit(k).prepare(params)?;
        for t in 0..t_len {
            let nb = neighbor_values(u_by_visit, graph, k, t);
            total += prepared.log_density(u_by_visit[[k, t]], &nb)?;
        }
    }
    Ok(total)
}

/// Per-cell log-likelihood contribution honoring the cell status: observed
/// and missing-latent cells contribute their conditional log density,
/// censored cells the conditional log CDF at the threshold's PIT value.
pub fn cell_contribution(
    prepared: &dyn PreparedConditional,
    status: CellStatus,
    u: f64,
    neighbor_us: &[f64],
) -> Result<f64> {
    match status {
        CellStatus::Observed | CellStatus::Missing => prepared.log_density(u, neighbor_us),
        CellStatus::Censored => prepared.log_cdf(u, neighbor_us),
    }
}

/// Vecchia log likelihood of a panel with censoring and latent missing
/// values already substituted into `u_by_visit`.
pub fn panel_loglik(
    u_by_visit: &Array2<f64>,
    status_by_visit: &Array2<CellStatus>,
    params: &SpatialParams,
    conds: &ConditionalSet,
    graph: &NeighborGraph,
) -> Result<f64> {
    let n = graph.n_sites();
    if n == 1 {
        return Ok(0.0);
    }
    conds.check_graph(graph)?;
    let t_len = u_by_visit.ncols();
    let mut total = 0.0;
    for k in 1..n {
        let prepared = conds.for_visit(k).prepare(params)?;
        for t in 0..t_len {
            let nb = neighbor_values(u_by_visit, graph, k, t);
            total += cell_contribution(
                prepared.as_ref(),
                status_by_visit[[k, t]],
                u_by_visit[[k, t]],
                &nb,
            )?;
        }
    }
    Ok(total)
}

/// PIT scores of a complete panel under the conditional models: the fitted
/// CDF evaluated at each response cell. Uniform when the models are exact.
pub fn pit_scores(
    u_by_visit: &Array2<f64>,
    params: &SpatialParams,
    conds: &ConditionalSet,
    graph: &NeighborGraph,
) -> Result<Vec<f64>> {
    conds.check_graph(graph)?;
    let mut out = Vec::new();
    for k in 1..graph.n_sites() {
        let prepared = conds.for_visit(k).prepare(params)?;
        for t in 0..u_by_visit.ncols() {
            let nb = neighbor_values(u_by_visit, graph, k, t);
            out.push(prepared.log_cdf(u_by_visit[[k, t]], &nb)?.exp());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{build_neighbor_sets, order_sites, site_set_from_unit_square};
    use crate::margins::GevParams;
    use crate::procsim::replicate_rng;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn toy_dataset(n: usize, t_len: usize, seed: u64) -> Dataset {
        let mut rng = replicate_rng(seed, 0);
        let coords: Vec<[f64; 2]> = (0..n).map(|_| [rng.gen(), rng.gen()]).collect();
        let sites = site_set_from_unit_square(coords).unwrap();
        let g = GevParams::new(2.0, 1.0, 0.1).unwrap();
        let y = Array2::from_shape_fn((n, t_len), |_| {
            g.quantile(rng.gen_range(0.01..0.99)).unwrap()
        });
        let years: Vec<i32> = (0..t_len as i32).map(|t| 1972 + t).collect();
        Dataset::complete(sites, years, y).unwrap()
    }

    #[test]
    fn to_uniform_round_trips_and_sums_gumbel_jacobian() {
        let data = toy_dataset(4, 6, 1);
        let margins = GevSiteParams::constant(4, 1.5, 2.0, 0.0);
        let cov = TimeCovariate::none(6);
        let panel = to_uniform(&data, &margins, &cov);
        // Quantile of the PIT recovers the response.
        for i in 0..4 {
            for t in 0..6 {
                let g = margins.at(i, 0.0);
                let back = g.quantile(panel.u[[i, t]]).unwrap();
                assert!((back - data.y[[i, t]]).abs() < 1e-9);
            }
        }
        // Jacobian equals the closed-form Gumbel log density sum.
        let mut expect = 0.0;
        for i in 0..4 {
            for t in 0..6 {
                let z = (data.y[[i, t]] - 1.5) / 2.0;
                expect += -(2.0_f64.ln()) - z - (-z).exp();
            }
        }
        assert_abs_diff_eq!(panel.log_jacobian, expect, epsilon = 1e-10);
    }

    #[test]
    fn support_violation_gives_neg_infinity() {
        let mut data = toy_dataset(3, 2, 2);
        // xi < 0 margin with an upper endpoint below the data.
        data.y[[1, 0]] = 100.0;
        let margins = GevSiteParams::constant(3, 0.0, 1.0, -0.2);
        let cov = TimeCovariate::none(2);
        let panel = to_uniform(&data, &margins, &cov);
        assert_eq!(panel.log_jacobian, f64::NEG_INFINITY);
    }

    #[test]
    fn single_site_likelihood_is_zero() {
        let graph = build_neighbor_sets(
            &site_set_from_unit_square(vec![[0.2, 0.2]]).unwrap(),
            &[0],
            1,
        )
        .unwrap();
        let u = Array2::from_elem((1, 5), 0.3);
        let conds = ConditionalSet::new(vec![]);
        let p = SpatialParams::tied(0.5, 0.2, 1.0, 1.0).unwrap();
        assert_eq!(vecchia_loglik(&u, &p, &conds, &graph).unwrap(), 0.0);
    }

    #[test]
    fn exact_gaussian_conditional_matches_bivariate_density() {
        // Two sites, correlation c: f(u2|u1) on the copula scale equals the
        // bivariate normal density ratio.
        let site = [0.0, 0.0];
        let nb = [0.2, 0.0];
        let cond = ExactGaussianConditional {
            site,
            neighbors: vec![nb],
            alpha: 1.0,
        };
        let params = SpatialParams::tied(0.0, 0.2, 1.0, 1.0).unwrap();
        let c: f64 = (-1.0_f64).exp(); // correlation at distance = range
        let prepared = cond.prepare(&params).unwrap();
        let (u, u_nb) = (0.7, 0.3);
        let got = prepared.log_density(u, &[u_nb]).unwrap();
        let (z, z1) = (stats::norm_quantile(u), stats::norm_quantile(u_nb));
        let mean = c * z1;
        let sd = (1.0 - c * c).sqrt();
        let expect = stats::norm_logpdf((z - mean) / sd) - sd.ln() - stats::norm_logpdf(z);
        assert_abs_diff_eq!(got, expect, epsilon = 1e-12);
        // No neighbors: standard normal conditional reduces to uniform
        // density 1 on the copula scale.
        let lonely = ExactGaussianConditional {
            site,
            neighbors: vec![],
            alpha: 1.0,
        };
        let p0 = lonely.prepare(&params).unwrap();
        assert_abs_diff_eq!(p0.log_density(0.42, &[]).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn censored_cells_use_the_cdf() {
        let site = [0.0, 0.0];
        let cond = ExactGaussianConditional {
            site,
            neighbors: vec![[0.3, 0.0]],
            alpha: 1.0,
        };
        let params = SpatialParams::tied(0.0, 0.3, 1.0, 1.0).unwrap();
        let prepared = cond.prepare(&params).unwrap();
        let lc = cell_contribution(prepared.as_ref(), CellStatus::Censored, 0.4, &[0.5]).unwrap();
        assert_abs_diff_eq!(lc, prepared.log_cdf(0.4, &[0.5]).unwrap(), epsilon = 1e-14);
        // Monotone in the threshold.
        let lc_hi = cell_contribution(prepared.as_ref(), CellStatus::Censored, 0.6, &[0.5]).unwrap();
        assert!(lc_hi > lc);
        let lo = cell_contribution(prepared.as_ref(), CellStatus::Observed, 0.4, &[0.5]).unwrap();
        assert_abs_diff_eq!(
            lo,
            prepared.log_density(0.4, &[0.5]).unwrap(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn all_observed_panel_loglik_reduces_to_vecchia_loglik() {
        let mut rng = replicate_rng(3, 0);
        let coords: Vec<[f64; 2]> = (0..5).map(|_| [rng.gen(), rng.gen()]).collect();
        let sites = site_set_from_unit_square(coords).unwrap();
        let order = order_sites(&sites);
        let graph = build_neighbor_sets(&sites, &order, 3).unwrap();
        let by_visit: Vec<[f64; 2]> = order.iter().map(|&i| sites.scaled[i]).collect();
        let conds: Vec<Box<dyn SiteConditional>> = (1..5)
            .map(|k| {
                Box::new(ExactGaussianConditional {
                    site: by_visit[k],
                    neighbors: graph.neighbors[k].iter().map(|&j| by_visit[j]).collect(),
                    alpha: 1.0,
                }) as Box<dyn SiteConditional>
            })
            .collect();
        let conds = ConditionalSet::new(conds);
        let params = SpatialParams::tied(0.0, 0.25, 1.0, 0.9).unwrap();
        let u = Array2::from_shape_fn((5, 7), |_| rng.gen_range(0.01..0.99));
        let status = Array2::from_elem((5, 7), CellStatus::Observed);
        let a = vecchia_loglik(&u, &params, &conds, &graph).unwrap();
        let b = panel_loglik(&u, &status, &params, &conds, &graph).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }

    #[test]
    fn layout_mismatch_is_an_error() {
        use crate::spqr::{Activation, FeatureLayout, NeighborScale, SplineBasis, SpqrNet, ThetaFeature};
        let mut rng = replicate_rng(4, 0);
        let coords: Vec<[f64; 2]> = (0..4).map(|_| [rng.gen(), rng.gen()]).collect();
        let sites = site_set_from_unit_square(coords).unwrap();
        let order = order_sites(&sites);
        let graph = build_neighbor_sets(&sites, &order, 2).unwrap();
        // Net trained for the wrong neighbor count at visit position 1.
        let bad = SpqrNet::zeros(
            2 + 2,
            &[4],
            SplineBasis::cubic(5).unwrap(),
            Activation::Relu,
            FeatureLayout {
                theta: vec![ThetaFeature::LogitDelta, ThetaFeature::LogRho],
                n_neighbors: 2,
                neighbor_scale: NeighborScale::Uniform,
                offsets: false,
            },
        );
        let mut nets = Vec::new();
        for k in 1..4 {
            let mut n = bad.clone();
            n.layout.n_neighbors = if k == 1 { 2 } else { graph.neighbors[k].len() };
            nets.push(n);
        }
        let conds = ConditionalSet::from_nets(nets);
        let params = SpatialParams::tied(0.5, 0.2, 1.0, 1.0).unwrap();
        let u = Array2::from_elem((4, 3), 0.5);
        match vecchia_loglik(&u, &params, &conds, &graph) {
            Err(Error::LayoutMismatch(_)) => {}
            other => panic!("expected layout mismatch, got {other:?}"),
        }
    }
}
