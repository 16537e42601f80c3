//! Training of conditional-density networks on synthetic draws from the
//! design distribution.
//!
//! Nothing here touches observed data: each net learns the map from
//! `(spatial parameters, neighbor values)` to the conditional density of its
//! site by maximum likelihood on simulated fields, then the surrogate
//! likelihood plugs observed values into the trained nets.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::NeighborGraph;
use crate::procsim::{block_rng, ModelVariant, PmmSimulator};
use crate::spqr::basis::SplineBasis;
use crate::spqr::features::{DesignDistribution, FeatureLayout, NeighborScale};
use crate::spqr::net::{Activation, Gradients, SpqrNet};

const BLOCK_DATA: u64 = 0;
const BLOCK_INIT: u64 = 1;
const BLOCK_SHUFFLE: u64 = 2;
/// Virtual site index for the global model's streams.
const GLOBAL_SITE: u64 = u32::MAX as u64;

fn train_block(site: u64, tag: u64) -> u64 {
    (site << 3) | tag
}

/// Architecture and optimization settings for one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Synthetic sample size N (training + validation together).
    pub n_samples: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Fraction held out for validation / checkpoint selection.
    pub validation_fraction: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Hidden layer widths; empty trains the linear (no-hidden-layer)
    /// ablation.
    pub hidden: Vec<usize>,
    /// Number of spline mixture components (output nodes).
    pub k_basis: usize,
    pub degree: usize,
    pub activation: Activation,
    pub neighbor_scale: NeighborScale,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::study_default()
    }
}

impl TrainConfig {
    /// The mixture-model study configuration: two hidden layers of 30 and
    /// 15 neurons, 15 output nodes, learning rate 0.001, batch 100, 50
    /// epochs, 20% validation.
    pub fn study_default() -> Self {
        Self {
            n_samples: 100_000,
            batch_size: 100,
            epochs: 50,
            learning_rate: 1e-3,
            validation_fraction: 0.2,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            hidden: vec![30, 15],
            k_basis: 15,
            degree: 3,
            activation: Activation::Relu,
            neighbor_scale: NeighborScale::Uniform,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples < self.batch_size {
            return Err(Error::invalid("sample size must be at least the batch size"));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::invalid("validation fraction must be in [0,1)"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("need at least one epoch"));
        }
        Ok(())
    }
}

/// Per-epoch loss trace and checkpoint choice for one trained net.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    /// Visit position of the site (usize::MAX for the global net).
    pub site: usize,
    pub train_nll: Vec<f64>,
    pub val_nll: Vec<f64>,
    pub best_epoch: usize,
    pub best_val_nll: f64,
    pub n_clamped: usize,
}

#[derive(Debug, Clone)]
pub struct TrainedNet {
    pub net: SpqrNet,
    pub report: TrainReport,
}

/// Synthetic design matrix and responses for one site.
pub struct TrainData {
    pub xs: Array2<f64>,
    pub us: Vec<f64>,
}

/// Glorot-uniform initialization.
fn init_weights(net: &mut SpqrNet, rng: &mut impl Rng) {
    for l in 0..net.weights.len() {
        let (fan_out, fan_in) = (net.weights[l].nrows(), net.weights[l].ncols());
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        net.weights[l].mapv_inplace(|_| rng.gen_range(-bound..bound));
        net.biases[l].fill(0.0);
    }
}

struct Adam {
    m_w: Vec<Array2<f64>>,
    v_w: Vec<Array2<f64>>,
    m_b: Vec<Array1<f64>>,
    v_b: Vec<Array1<f64>>,
    t: i32,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    fn new(net: &SpqrNet, cfg: &TrainConfig) -> Self {
        Self {
            m_w: net.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            v_w: net.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            m_b: net.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
            v_b: net.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
            t: 0,
            lr: cfg.learning_rate,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
        }
    }

    fn step(&mut self, net: &mut SpqrNet, grads: &Gradients) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for l in 0..net.weights.len() {
            for ((w, g), (m, v)) in net.weights[l]
                .iter_mut()
                .zip(grads.weights[l].iter())
                .zip(self.m_w[l].iter_mut().zip(self.v_w[l].iter_mut()))
            {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *w -= self.lr * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
            }
            for ((b, g), (m, v)) in net.biases[l]
                .iter_mut()
                .zip(grads.biases[l].iter())
                .zip(self.m_b[l].iter_mut().zip(self.v_b[l].iter_mut()))
            {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *b -= self.lr * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
            }
        }
    }
}

/// Loss-only pass (validation).
fn nll_only(net: &SpqrNet, xs: &Array2<f64>, us: &[f64], rows: &[usize]) -> Result<f64> {
    let mut loss = 0.0;
    for &row in rows {
        let pi = net.forward(xs.row(row))?;
        let u = us[row].clamp(
            crate::spqr::net::RESPONSE_CLAMP.0,
            crate::spqr::net::RESPONSE_CLAMP.1,
        );
        let b = net.basis.eval_m(u)?;
        let f: f64 = pi.iter().zip(&b).map(|(p, v)| p * v).sum();
        loss -= f.max(1e-300).ln();
    }
    Ok(loss / rows.len() as f64)
}

/// Generate the synthetic training set for the local net of the site at
/// visit position `k`: draws of the spatial parameters, a field realization
/// at the site and its conditioning set, features assembled per the layout.
pub fn generate_local_data(
    coords_by_visit: &[[f64; 2]],
    graph: &NeighborGraph,
    k: usize,
    variant: ModelVariant,
    design: &DesignDistribution,
    layout: &FeatureLayout,
    n_samples: usize,
    seed: u64,
) -> Result<TrainData> {
    let mut sub_coords: Vec<[f64; 2]> = vec![coords_by_visit[k]];
    sub_coords.extend(graph.neighbors[k].iter().map(|&j| coords_by_visit[j]));
    let width = layout.width();
    let mut xs = Array2::zeros((n_samples, width));
    let mut us = vec![0.0; n_samples];
    for i in 0..n_samples {
        let mut rng = block_rng(seed, train_block(k as u64, BLOCK_DATA), i as u64);
        let params = design.draw(&mut rng)?;
        let sim = PmmSimulator::new(&sub_coords, variant, params)?;
        let field = sim.simulate(&mut rng)?;
        let theta = layout.theta_features(&params);
        let x = layout.assemble(&theta, &field.u[1..], None, &mut rng)?;
        for (j, v) in x.into_iter().enumerate() {
            xs[[i, j]] = v;
        }
        us[i] = field.u[0];
    }
    Ok(TrainData { xs, us })
}

/// Core fit loop: mini-batch Adam with the best-validation checkpoint kept.
pub fn fit_net(
    mut net: SpqrNet,
    data: &TrainData,
    cfg: &TrainConfig,
    site_tag: u64,
) -> Result<TrainedNet> {
    cfg.validate()?;
    let n = data.us.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut shuffle_rng = block_rng(cfg.seed, train_block(site_tag, BLOCK_SHUFFLE), 0);
    order.shuffle(&mut shuffle_rng);
    let n_val = (cfg.validation_fraction * n as f64).round() as usize;
    let (val_rows, train_rows) = order.split_at(n_val);
    let mut train_rows = train_rows.to_vec();
    let val_rows = val_rows.to_vec();

    let mut init_rng = block_rng(cfg.seed, train_block(site_tag, BLOCK_INIT), 0);
    init_weights(&mut net, &mut init_rng);

    let mut adam = Adam::new(&net, cfg);
    let mut report = TrainReport {
        site: site_tag as usize,
        train_nll: Vec::with_capacity(cfg.epochs),
        val_nll: Vec::with_capacity(cfg.epochs),
        best_epoch: 0,
        best_val_nll: f64::INFINITY,
        n_clamped: 0,
    };
    let mut best_weights: Option<(Vec<Array2<f64>>, Vec<Array1<f64>>)> = None;

    let mut batch_x = Array2::zeros((cfg.batch_size, net.n_inputs()));
    let mut batch_u = vec![0.0; cfg.batch_size];
    for epoch in 0..cfg.epochs {
        train_rows.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        let mut n_batches = 0;
        for chunk in train_rows.chunks(cfg.batch_size) {
            if chunk.len() < cfg.batch_size {
                break; // drop the ragged tail batch
            }
            for (bi, &row) in chunk.iter().enumerate() {
                batch_x.row_mut(bi).assign(&data.xs.row(row));
                batch_u[bi] = data.us[row];
            }
            let (loss, grads, clamped) = net.nll_gradient(batch_x.view(), &batch_u)?;
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged {
                    epoch,
                    detail: format!("batch loss {loss}"),
                });
            }
            report.n_clamped += clamped;
            adam.step(&mut net, &grads);
            epoch_loss += loss;
            n_batches += 1;
        }
        report.train_nll.push(epoch_loss / n_batches.max(1) as f64);
        let val = if val_rows.is_empty() {
            *report.train_nll.last().unwrap()
        } else {
            nll_only(&net, &data.xs, &data.us, &val_rows)?
        };
        if !val.is_finite() {
            return Err(Error::TrainingDiverged {
                epoch,
                detail: format!("validation loss {val}"),
            });
        }
        report.val_nll.push(val);
        if val < report.best_val_nll {
            report.best_val_nll = val;
            report.best_epoch = epoch;
            best_weights = Some((net.weights.clone(), net.biases.clone()));
        }
    }
    if let Some((w, b)) = best_weights {
        net.weights = w;
        net.biases = b;
    }
    Ok(TrainedNet { net, report })
}

/// Train the local net for the site at visit position `k` (k >= 1; the
/// first-visited site needs no net because its factor is the uniform
/// marginal).
pub fn train_local(
    coords_by_visit: &[[f64; 2]],
    graph: &NeighborGraph,
    k: usize,
    variant: ModelVariant,
    design: &DesignDistribution,
    cfg: &TrainConfig,
) -> Result<TrainedNet> {
    if k == 0 {
        return Err(Error::invalid(
            "the first-visited site has a uniform marginal factor; no net is trained for it",
        ));
    }
    design.check_variant(variant)?;
    let layout = FeatureLayout {
        theta: design.theta_layout(),
        n_neighbors: graph.neighbors[k].len(),
        neighbor_scale: cfg.neighbor_scale,
        offsets: false,
    };
    let data = generate_local_data(
        coords_by_visit,
        graph,
        k,
        variant,
        design,
        &layout,
        cfg.n_samples,
        cfg.seed,
    )?;
    let basis = SplineBasis::new(cfg.k_basis, cfg.degree)?;
    let net = SpqrNet::zeros(layout.width(), &cfg.hidden, basis, cfg.activation, layout);
    let mut trained = fit_net(net, &data, cfg, k as u64)?;
    trained.report.site = k;
    Ok(trained)
}

/// Train the single global net pooled over all sites with at least one
/// neighbor; feature width is fixed at the graph's `m` via padding.
pub fn train_global(
    coords_by_visit: &[[f64; 2]],
    graph: &NeighborGraph,
    variant: ModelVariant,
    design: &DesignDistribution,
    cfg: &TrainConfig,
) -> Result<TrainedNet> {
    design.check_variant(variant)?;
    let n = graph.n_sites();
    if n < 2 {
        return Err(Error::invalid("global training needs at least two sites"));
    }
    let layout = FeatureLayout {
        theta: design.theta_layout(),
        n_neighbors: graph.m,
        neighbor_scale: cfg.neighbor_scale,
        offsets: true,
    };
    let width = layout.width();
    let mut xs = Array2::zeros((cfg.n_samples, width));
    let mut us = vec![0.0; cfg.n_samples];
    for i in 0..cfg.n_samples {
        let mut rng = block_rng(cfg.seed, train_block(GLOBAL_SITE, BLOCK_DATA), i as u64);
        let k = rng.gen_range(1..n);
        let params = design.draw(&mut rng)?;
        let mut sub_coords: Vec<[f64; 2]> = vec![coords_by_visit[k]];
        sub_coords.extend(graph.neighbors[k].iter().map(|&j| coords_by_visit[j]));
        let sim = PmmSimulator::new(&sub_coords, variant, params)?;
        let field = sim.simulate(&mut rng)?;
        let offsets: Vec<[f64; 2]> = graph.neighbors[k]
            .iter()
            .map(|&j| {
                [
                    coords_by_visit[j][0] - coords_by_visit[k][0],
                    coords_by_visit[j][1] - coords_by_visit[k][1],
                ]
            })
            .collect();
        let theta = layout.theta_features(&params);
        let x = layout.assemble(&theta, &field.u[1..], Some(&offsets), &mut rng)?;
        for (j, v) in x.into_iter().enumerate() {
            xs[[i, j]] = v;
        }
        us[i] = field.u[0];
    }
    let data = TrainData { xs, us };
    let basis = SplineBasis::new(cfg.k_basis, cfg.degree)?;
    let net = SpqrNet::zeros(width, &cfg.hidden, basis, cfg.activation, layout);
    let mut trained = fit_net(net, &data, cfg, GLOBAL_SITE)?;
    trained.report.site = usize::MAX;
    Ok(trained)
}
