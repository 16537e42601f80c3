//! Cross-module inference behavior: Metropolis fits through the Vecchia
//! surrogate with exact Gaussian conditionals, prior-only sanity runs,
//! latent imputation, and the incremental-evaluation audit.

use ndarray::Array2;
use pmm::geo::{build_neighbor_sets, order_sites, site_set_from_unit_square};
use pmm::margins::GevSiteParams;
use pmm::mcmc::{
    audit_incremental_consistency, run_chains, summarize, ChainConfig, FitModel, MarginalModel,
    PriorSpec,
};
use pmm::procsim::{replicate_rng, ModelVariant, PmmSimulator, SpatialParams};
use pmm::spqr::{DesignDistribution, ParamDraw};
use pmm::surrogate::{ConditionalSet, Dataset, ExactGaussianConditional, SiteConditional};
use pmm::{GevParams, NeighborGraph, SiteSet, TimeCovariate};
use rand::Rng;

fn random_sites(n: usize, seed: u64) -> SiteSet {
    let mut rng = replicate_rng(seed, 0);
    site_set_from_unit_square((0..n).map(|_| [rng.gen(), rng.gen()]).collect()).unwrap()
}

fn graph_for(sites: &SiteSet, m: usize) -> NeighborGraph {
    let order = order_sites(sites);
    build_neighbor_sets(sites, &order, m).unwrap()
}

fn exact_conditionals(sites: &SiteSet, graph: &NeighborGraph) -> ConditionalSet {
    let by_visit: Vec<[f64; 2]> = graph.order.iter().map(|&i| sites.scaled[i]).collect();
    let conds: Vec<Box<dyn SiteConditional>> = (1..graph.n_sites())
        .map(|k| {
            Box::new(ExactGaussianConditional {
                site: by_visit[k],
                neighbors: graph.neighbors[k].iter().map(|&j| by_visit[j]).collect(),
                alpha: 1.0,
            }) as Box<dyn SiteConditional>
        })
        .collect();
    ConditionalSet::new(conds)
}

/// GP-variant data on the response scale under known constant margins.
fn gp_dataset(
    sites: &SiteSet,
    t_len: usize,
    params: SpatialParams,
    margin: GevParams,
    seed: u64,
) -> Dataset {
    let sim = PmmSimulator::new(&sites.scaled, ModelVariant::Gp, params).unwrap();
    let n = sites.n_sites();
    let mut y = Array2::zeros((n, t_len));
    for t in 0..t_len {
        let f = sim.simulate(&mut replicate_rng(seed, t as u64)).unwrap();
        for i in 0..n {
            y[[i, t]] = margin.quantile(f.u[i]).unwrap();
        }
    }
    let years: Vec<i32> = (0..t_len as i32).map(|t| 1972 + t).collect();
    Dataset::complete(sites.clone(), years, y).unwrap()
}

fn gp_design() -> DesignDistribution {
    DesignDistribution {
        delta: ParamDraw::Fixed(0.0),
        rho: ParamDraw::Uniform { lo: 0.0, hi: 0.5 },
        r: ParamDraw::Uniform { lo: 0.0, hi: 1.0 },
        alpha: 1.0,
    }
}

#[test]
fn exact_gaussian_fit_recovers_spatial_parameters() {
    let sites = random_sites(15, 11);
    let graph = graph_for(&sites, 5);
    let truth = SpatialParams::tied(0.0, 0.25, 1.0, 0.85).unwrap();
    let margin = GevParams::new(2.0, 1.0, 0.1).unwrap();
    let data = gp_dataset(&sites, 40, truth, margin, 100);
    let conds = exact_conditionals(&sites, &graph);
    let model = FitModel {
        dataset: &data,
        graph: &graph,
        conds: &conds,
        covariate: TimeCovariate::none(40),
        variant: ModelVariant::Gp,
        marginal_model: MarginalModel::Fixed,
        priors: PriorSpec::study_default(),
        design: gp_design(),
        fixed_margins: Some(GevSiteParams::constant(15, 2.0, 1.0, 0.1)),
        censored_latent: false,
    };
    let cfg = ChainConfig {
        n_iterations: 3_000,
        burn_in: 600,
        thin: 5,
        n_chains: 2,
        seed: 7,
        ..ChainConfig::study_default()
    };
    let outputs = run_chains(&model, &cfg).unwrap();
    let chains: Vec<Vec<Vec<f64>>> = outputs.iter().map(|o| o.samples.clone()).collect();
    let summary = summarize(&outputs[0].names, &chains);
    let rho = summary.iter().find(|s| s.name == "rho").unwrap();
    let r = summary.iter().find(|s| s.name == "r").unwrap();
    assert!(
        (rho.mean - 0.25).abs() < 0.08,
        "rho posterior mean {} (truth 0.25)",
        rho.mean
    );
    assert!((r.mean - 0.85).abs() < 0.12, "r posterior mean {} (truth 0.85)", r.mean);
    assert!(rho.rhat < 1.1, "rho rhat = {}", rho.rhat);
    assert!(r.rhat < 1.1, "r rhat = {}", r.rhat);
    // True values inside the central 95% intervals.
    assert!(rho.q025 <= 0.25 && 0.25 <= rho.q975);
    assert!(r.q025 <= 0.85 && 0.85 <= r.q975);
}

#[test]
fn shared_margin_fit_recovers_gev_parameters() {
    let sites = random_sites(12, 13);
    let graph = graph_for(&sites, 4);
    let truth = SpatialParams::tied(0.0, 0.2, 1.0, 0.9).unwrap();
    let margin = GevParams::new(3.0, 1.5, 0.05).unwrap();
    let data = gp_dataset(&sites, 45, truth, margin, 200);
    let conds = exact_conditionals(&sites, &graph);
    let model = FitModel {
        dataset: &data,
        graph: &graph,
        conds: &conds,
        covariate: TimeCovariate::none(45),
        variant: ModelVariant::Gp,
        marginal_model: MarginalModel::SharedConstant,
        priors: PriorSpec::study_default(),
        design: gp_design(),
        fixed_margins: None,
        censored_latent: false,
    };
    let cfg = ChainConfig {
        n_iterations: 3_000,
        burn_in: 600,
        thin: 5,
        n_chains: 1,
        seed: 17,
        ..ChainConfig::study_default()
    };
    let outputs = run_chains(&model, &cfg).unwrap();
    let chains: Vec<Vec<Vec<f64>>> = outputs.iter().map(|o| o.samples.clone()).collect();
    let summary = summarize(&outputs[0].names, &chains);
    let mu = summary.iter().find(|s| s.name == "mu").unwrap();
    let ls = summary.iter().find(|s| s.name == "log_sigma").unwrap();
    let xi = summary.iter().find(|s| s.name == "xi").unwrap();
    assert!((mu.mean - 3.0).abs() < 0.25, "mu mean {}", mu.mean);
    assert!((ls.mean - 1.5_f64.ln()).abs() < 0.15, "log sigma mean {}", ls.mean);
    assert!((xi.mean - 0.05).abs() < 0.12, "xi mean {}", xi.mean);
    // Acceptance rates of tuned blocks stay in the adapted band.
    for (name, rate) in &outputs[0].acceptance {
        assert!(
            (0.2..=0.6).contains(rate),
            "block {name} acceptance {rate} outside a sane band"
        );
    }
}

#[test]
fn prior_only_run_recovers_prior_moments() {
    let sites = random_sites(10, 23);
    let graph = graph_for(&sites, 4);
    let truth = SpatialParams::tied(0.3, 0.2, 1.0, 0.8).unwrap();
    let margin = GevParams::new(2.0, 1.0, 0.1).unwrap();
    let data = gp_dataset(&sites, 20, truth, margin, 300);
    let conds = ConditionalSet::new(vec![]);
    let design = DesignDistribution {
        delta: ParamDraw::Uniform { lo: 0.0, hi: 1.0 },
        rho: ParamDraw::Uniform { lo: 0.0, hi: 0.5 },
        r: ParamDraw::Uniform { lo: 0.0, hi: 1.0 },
        alpha: 1.0,
    };
    let model = FitModel {
        dataset: &data,
        graph: &graph,
        conds: &conds,
        covariate: TimeCovariate::none(20),
        variant: ModelVariant::Pmm,
        marginal_model: MarginalModel::Fixed,
        priors: PriorSpec::study_default(),
        design,
        fixed_margins: Some(GevSiteParams::constant(10, 2.0, 1.0, 0.1)),
        censored_latent: false,
    };
    let cfg = ChainConfig {
        n_iterations: 12_000,
        burn_in: 2_000,
        thin: 5,
        n_chains: 2,
        seed: 29,
        prior_only: true,
        ..ChainConfig::study_default()
    };
    let outputs = run_chains(&model, &cfg).unwrap();
    let chains: Vec<Vec<Vec<f64>>> = outputs.iter().map(|o| o.samples.clone()).collect();
    let summary = summarize(&outputs[0].names, &chains);
    let delta = summary.iter().find(|s| s.name == "delta").unwrap();
    let rho = summary.iter().find(|s| s.name == "rho").unwrap();
    let r = summary.iter().find(|s| s.name == "r").unwrap();
    // Uniform prior means and central quantiles within Monte Carlo error.
    assert!((delta.mean - 0.5).abs() < 0.05, "delta prior mean {}", delta.mean);
    assert!((rho.mean - 0.25).abs() < 0.025, "rho prior mean {}", rho.mean);
    assert!((r.mean - 0.5).abs() < 0.05, "r prior mean {}", r.mean);
    assert!((delta.median - 0.5).abs() < 0.06);
    assert!(delta.q975 > 0.9 && delta.q025 < 0.1, "prior tails not explored");
}

#[test]
fn latent_imputation_matches_direct_conditional_sampling() {
    // One missing cell whose site conditions on a single observed neighbor
    // and appears in no other conditioning set: the latent chain must target
    // exactly the site's conditional density.
    let sites = site_set_from_unit_square(vec![[0.0, 0.0], [0.2, 0.0]]).unwrap();
    let graph = graph_for(&sites, 1);
    let margin = GevParams::new(2.0, 1.0, 0.1).unwrap();
    let params = SpatialParams::tied(0.0, 0.25, 1.0, 0.9).unwrap();
    let mut data = gp_dataset(&sites, 3, params, margin, 400);
    // Second visited site, middle year.
    let missing_orig = graph.order[1];
    data.y[[missing_orig, 1]] = f64::NAN;
    let data = Dataset::with_missing(data.sites, data.years, data.y).unwrap();
    assert_eq!(data.n_missing(), 1);

    let conds = exact_conditionals(&sites, &graph);
    let design = DesignDistribution {
        delta: ParamDraw::Fixed(0.0),
        rho: ParamDraw::Fixed(0.25),
        r: ParamDraw::Fixed(0.9),
        alpha: 1.0,
    };
    let model = FitModel {
        dataset: &data,
        graph: &graph,
        conds: &conds,
        covariate: TimeCovariate::none(3),
        variant: ModelVariant::Gp,
        marginal_model: MarginalModel::Fixed,
        priors: PriorSpec::study_default(),
        design,
        fixed_margins: Some(GevSiteParams::constant(2, 2.0, 1.0, 0.1)),
        censored_latent: false,
    };
    let cfg = ChainConfig {
        n_iterations: 52_000,
        burn_in: 2_000,
        thin: 50,
        n_chains: 1,
        seed: 31,
        save_latents: true,
        ..ChainConfig::study_default()
    };
    let outputs = run_chains(&model, &cfg).unwrap();
    let idx = outputs[0]
        .names
        .iter()
        .position(|n| n.starts_with("latent"))
        .unwrap();
    let chain_draws: Vec<f64> = outputs[0].samples.iter().map(|s| s[idx]).collect();

    // Direct sampling from the exact conditional given the observed
    // neighbor value.
    let neighbor_orig = graph.order[0];
    let u_neighbor = margin.cdf(data.y[[neighbor_orig, 1]]);
    let c = 0.9 * (-0.2_f64 / 0.25).exp();
    let sd = (1.0 - c * c).sqrt();
    let mean = c * pmm::stats::norm_quantile(u_neighbor);
    let mut rng = replicate_rng(500, 0);
    let direct: Vec<f64> = (0..chain_draws.len())
        .map(|_| {
            let z: f64 = rng.sample::<f64, _>(rand_distr::StandardNormal);
            pmm::stats::norm_cdf(mean + sd * z)
        })
        .collect();
    let d = pmm::stats::ks_two_sample(&chain_draws, &direct);
    let p = pmm::stats::ks_two_sample_pvalue(d, chain_draws.len(), direct.len());
    assert!(p > 0.01, "two-sample KS p = {p}, D = {d}");
}

#[test]
fn incremental_evaluation_matches_full_recomputation() {
    // STVC margins, censoring, and a missing cell: the nastiest cache paths.
    let sites = random_sites(8, 41);
    let graph = graph_for(&sites, 3);
    let truth = SpatialParams::tied(0.0, 0.25, 1.0, 0.9).unwrap();
    let margin = GevParams::new(2.0, 1.0, 0.05).unwrap();
    let data = gp_dataset(&sites, 14, truth, margin, 600);
    let mut y = data.y.clone();
    y[[3, 2]] = f64::NAN;
    let mut data = Dataset::with_missing(data.sites, data.years, y).unwrap();
    let median = {
        let mut v: Vec<f64> = data.y.iter().cloned().filter(|x| x.is_finite()).collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v[v.len() / 2]
    };
    data.apply_censoring(median);
    assert!(data.n_censored() > 10);

    let conds = exact_conditionals(&sites, &graph);
    let model = FitModel {
        dataset: &data,
        graph: &graph,
        conds: &conds,
        covariate: TimeCovariate::from_years(&data.years, 1978.5, 10.0),
        variant: ModelVariant::Gp,
        marginal_model: MarginalModel::Stvc,
        priors: PriorSpec::study_default(),
        design: gp_design(),
        fixed_margins: None,
        censored_latent: false,
    };
    let cfg = ChainConfig {
        n_iterations: 200,
        burn_in: 100,
        thin: 1,
        n_chains: 1,
        seed: 43,
        ..ChainConfig::study_default()
    };
    let worst = audit_incremental_consistency(&model, &cfg, 150).unwrap();
    assert!(worst < 1e-8, "incremental drift {worst}");

    // The same model also runs end to end.
    let outputs = run_chains(
        &model,
        &ChainConfig {
            n_iterations: 300,
            burn_in: 100,
            thin: 4,
            n_chains: 1,
            ..cfg
        },
    )
    .unwrap();
    assert!(!outputs[0].samples.is_empty());
    assert!(outputs[0].log_posterior.iter().all(|lp| lp.is_finite()));
}

#[test]
fn censored_latent_mode_audits_clean() {
    let sites = random_sites(6, 57);
    let graph = graph_for(&sites, 3);
    let truth = SpatialParams::tied(0.0, 0.2, 1.0, 0.85).unwrap();
    let margin = GevParams::new(1.0, 0.8, 0.0).unwrap();
    let data = gp_dataset(&sites, 10, truth, margin, 700);
    let mut data = Dataset::with_missing(data.sites, data.years, data.y).unwrap();
    data.apply_censoring(1.0);
    assert!(data.n_censored() > 3);
    let conds = exact_conditionals(&sites, &graph);
    let model = FitModel {
        dataset: &data,
        graph: &graph,
        conds: &conds,
        covariate: TimeCovariate::none(10),
        variant: ModelVariant::Gp,
        marginal_model: MarginalModel::SharedConstant,
        priors: PriorSpec::study_default(),
        design: gp_design(),
        fixed_margins: None,
        censored_latent: true,
    };
    let cfg = ChainConfig {
        n_iterations: 150,
        burn_in: 80,
        thin: 1,
        n_chains: 1,
        seed: 61,
        ..ChainConfig::study_default()
    };
    let worst = audit_incremental_consistency(&model, &cfg, 100).unwrap();
    assert!(worst < 1e-8, "incremental drift {worst}");
}

#[test]
fn initialization_rejects_unsupported_data() {
    // A fixed margin whose support excludes the data must error at
    // initialization, not silently run.
    let sites = random_sites(5, 71);
    let graph = graph_for(&sites, 2);
    let truth = SpatialParams::tied(0.0, 0.2, 1.0, 0.9).unwrap();
    let margin = GevParams::new(2.0, 1.0, 0.1).unwrap();
    let data = gp_dataset(&sites, 8, truth, margin, 800);
    let conds = exact_conditionals(&sites, &graph);
    let model = FitModel {
        dataset: &data,
        graph: &graph,
        conds: &conds,
        covariate: TimeCovariate::none(8),
        variant: ModelVariant::Gp,
        marginal_model: MarginalModel::Fixed,
        priors: PriorSpec::study_default(),
        design: gp_design(),
        // Bounded above far below the data.
        fixed_margins: Some(GevSiteParams::constant(5, -30.0, 0.1, -0.5)),
        censored_latent: false,
    };
    let cfg = ChainConfig {
        n_iterations: 50,
        burn_in: 10,
        n_chains: 1,
        ..ChainConfig::study_default()
    };
    assert!(run_chains(&model, &cfg).is_err());
}
