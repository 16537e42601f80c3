//! End-to-end smoke at toy scale: train local nets on synthetic draws, fit
//! simulated data through the surrogate likelihood, and check that the
//! mixture weight lands on the right side of 1/2 for each regime.

use ndarray::Array2;
use pmm::geo::{build_neighbor_sets, order_sites, site_set_from_unit_square};
use pmm::margins::GevSiteParams;
use pmm::mcmc::{run_chains, summarize, ChainConfig, FitModel, MarginalModel, PriorSpec};
use pmm::procsim::{replicate_rng, ModelVariant, PmmSimulator, SpatialParams};
use pmm::spqr::{train_local, DesignDistribution, TrainConfig};
use pmm::surrogate::{ConditionalSet, Dataset};
use pmm::{GevParams, TimeCovariate};
use rand::Rng;

fn smoke_delta_fit(true_delta: f64, data_seed: u64) -> f64 {
    let mut rng = replicate_rng(1000, 0);
    let coords: Vec<[f64; 2]> = (0..12).map(|_| [rng.gen(), rng.gen()]).collect();
    let sites = site_set_from_unit_square(coords).unwrap();
    let order = order_sites(&sites);
    let graph = build_neighbor_sets(&sites, &order, 5).unwrap();
    let by_visit: Vec<[f64; 2]> = order.iter().map(|&i| sites.scaled[i]).collect();

    let design = DesignDistribution::study_default();
    let train_cfg = TrainConfig {
        n_samples: 6_000,
        batch_size: 100,
        epochs: 12,
        learning_rate: 2e-3,
        hidden: vec![20, 10],
        k_basis: 10,
        seed: 5,
        ..TrainConfig::study_default()
    };
    let nets: Vec<_> = (1..graph.n_sites())
        .map(|k| {
            train_local(&by_visit, &graph, k, ModelVariant::Pmm, &design, &train_cfg)
                .unwrap()
                .net
        })
        .collect();
    let conds = ConditionalSet::from_nets(nets);

    // Simulated data at the true parameters with known margins.
    let truth = SpatialParams::tied(true_delta, 0.15, 1.0, 1.0).unwrap();
    let margin = GevParams::new(2.0, 1.0, 0.1).unwrap();
    let sim = PmmSimulator::new(&sites.scaled, ModelVariant::Pmm, truth).unwrap();
    let t_len = 30;
    let mut y = Array2::zeros((12, t_len));
    for t in 0..t_len {
        let f = sim.simulate(&mut replicate_rng(data_seed, t as u64)).unwrap();
        for i in 0..12 {
            y[[i, t]] = margin.quantile(f.u[i]).unwrap();
        }
    }
    let years: Vec<i32> = (0..t_len as i32).map(|t| 1990 + t).collect();
    let data = Dataset::complete(sites, years, y).unwrap();

    let model = FitModel {
        dataset: &data,
        graph: &graph,
        conds: &conds,
        covariate: TimeCovariate::none(t_len),
        variant: ModelVariant::Pmm,
        marginal_model: MarginalModel::Fixed,
        priors: PriorSpec::study_default(),
        design,
        fixed_margins: Some(GevSiteParams::constant(12, 2.0, 1.0, 0.1)),
        censored_latent: false,
    };
    let cfg = ChainConfig {
        n_iterations: 2_500,
        burn_in: 500,
        thin: 4,
        n_chains: 1,
        seed: 77,
        init_delta: vec![0.5],
        ..ChainConfig::study_default()
    };
    let outputs = run_chains(&model, &cfg).unwrap();
    let chains: Vec<Vec<Vec<f64>>> = outputs.iter().map(|o| o.samples.clone()).collect();
    let summary = summarize(&outputs[0].names, &chains);
    summary.iter().find(|s| s.name == "delta").unwrap().mean
}

#[test]
fn surrogate_fit_separates_dependence_regimes() {
    let high = smoke_delta_fit(0.85, 9_001);
    let low = smoke_delta_fit(0.15, 9_002);
    assert!(high > 0.5, "posterior mean delta {high} for true 0.85");
    assert!(low < 0.5, "posterior mean delta {low} for true 0.15");
    assert!(
        high - low > 0.2,
        "regimes not separated: high={high}, low={low}"
    );
}
