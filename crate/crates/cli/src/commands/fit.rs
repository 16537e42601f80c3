//! `pmm fit`: run the Metropolis chains against the surrogate likelihood of
//! an observed (or simulated) dataset, using nets produced by `pmm train`.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;

use crate::config::RunConfig;
use crate::manifest::Manifest;
use crate::pipeline::{self, GraphArtifact, CHAINS_DIR, NETS_DIR};
use pmm::margins::GevSiteParams;
use pmm::mcmc::{run_chains, summarize, FitModel, MarginalModel};

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Station CSV with the responses to fit.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Nets directory; defaults to `<out>/nets`.
    #[arg(long)]
    pub nets: Option<PathBuf>,
    /// Record pointwise log-likelihood matrices for `pmm compare`.
    #[arg(long)]
    pub save_pointwise: bool,
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn run(args: &FitArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(data) = &args.data {
        cfg.data.csv = Some(data.display().to_string());
    }
    if args.save_pointwise {
        cfg.mcmc.save_pointwise = true;
    }
    if let Some(seed) = args.seed {
        cfg.mcmc.seed = seed;
    }
    cfg.validate()?;
    if cfg.data.csv.is_none() {
        bail!("fit requires a dataset: pass --data or set data.csv in the config");
    }

    let out = pipeline::ensure_dir(&args.out)?;
    let config_hash = cfg.write_snapshot(&out)?;
    let nets_dir = args.nets.clone().unwrap_or_else(|| out.join(NETS_DIR));
    let artifact = GraphArtifact::load(&nets_dir)?;
    pipeline::check_design_compatibility(&artifact, &cfg)?;

    let (dataset, covariate, report) = crate::ingest::load_dataset(&cfg.data)?;
    if dataset.sites != artifact.sites {
        bail!(
            "dataset sites differ from the layout the nets were trained on; \
             rerun `pmm train` against this dataset"
        );
    }
    let conds = pipeline::load_conditionals(&nets_dir, &artifact)?;

    let fixed_margins = if cfg.model.marginal_model == MarginalModel::Fixed {
        Some(GevSiteParams::constant(
            dataset.n_sites(),
            cfg.simulate.gev_mu,
            cfg.simulate.gev_sigma,
            cfg.simulate.gev_xi,
        ))
    } else {
        None
    };
    let model = FitModel {
        dataset: &dataset,
        graph: &artifact.graph,
        conds: &conds,
        covariate,
        variant: cfg.model.variant,
        marginal_model: cfg.model.marginal_model,
        priors: cfg.priors.clone(),
        design: cfg.design.clone(),
        fixed_margins,
        censored_latent: cfg.model.censored_latent,
    };
    let outputs = run_chains(&model, &cfg.mcmc).context("running MCMC chains")?;

    let chains_dir = pipeline::ensure_dir(&out.join(CHAINS_DIR))?;
    let mut manifest = Manifest::new("fit", config_hash, cfg.mcmc.seed);
    manifest.add_input("data", std::path::Path::new(cfg.data.csv.as_ref().unwrap()))?;
    manifest.note("ingest", &report);
    for (c, output) in outputs.iter().enumerate() {
        let path = chains_dir.join(format!("chain_{c}.csv"));
        pipeline::write_chain_csv(&path, output, cfg.mcmc.thin, cfg.mcmc.burn_in)?;
        manifest.add_output(&path);
        manifest.note(
            &format!("acceptance_chain_{c}"),
            output
                .acceptance
                .iter()
                .map(|(n, r)| (n.clone(), (*r * 1000.0).round() / 1000.0))
                .collect::<std::collections::BTreeMap<_, _>>(),
        );
        if let Some(pw) = &output.pointwise {
            let pw_path = chains_dir.join(format!("pointwise_{c}.csv"));
            let mut w = csv::Writer::from_path(&pw_path)?;
            for row in pw.rows() {
                w.write_record(row.iter().map(|v| v.to_string()))?;
            }
            w.flush()?;
            manifest.add_output(&pw_path);
        }
    }

    // Posterior summary across chains.
    let chains: Vec<Vec<Vec<f64>>> = outputs.iter().map(|o| o.samples.clone()).collect();
    let summary = summarize(&outputs[0].names, &chains);
    let summary_path = chains_dir.join("summary.csv");
    let mut w = csv::Writer::from_path(&summary_path)?;
    w.write_record([
        "parameter", "mean", "sd", "q025", "median", "q975", "rhat", "ess",
    ])?;
    for s in &summary {
        w.write_record([
            s.name.clone(),
            s.mean.to_string(),
            s.sd.to_string(),
            s.q025.to_string(),
            s.median.to_string(),
            s.q975.to_string(),
            s.rhat.to_string(),
            s.ess.to_string(),
        ])?;
    }
    w.flush()?;
    manifest.add_output(&summary_path);
    manifest.write(&out)?;

    for s in summary.iter().take(6) {
        println!(
            "{}: mean {:.4} sd {:.4} [{:.4}, {:.4}] rhat {:.3}",
            s.name, s.mean, s.sd, s.q025, s.q975, s.rhat
        );
    }
    println!("chains written to {}", chains_dir.display());
    Ok(())
}
