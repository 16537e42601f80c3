//! `pmm inspect`: print a trained net's architecture, and optionally its
//! variable-importance summary over a regenerated design sample, as CSV.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;

use crate::pipeline::GraphArtifact;
use pmm::spqr::{ale_and_vi, generate_local_data, FeatureLayout, SpqrNet, ThetaFeature};

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// Net JSON file produced by `pmm train`.
    #[arg(long)]
    pub net: PathBuf,
    /// Also compute variable importance over a fresh design sample.
    #[arg(long)]
    pub vi: bool,
    /// Reference sample size for the VI computation.
    #[arg(long, default_value_t = 200)]
    pub sample: usize,
    /// Quantile levels for the VI table.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.05, 0.25, 0.5, 0.75, 0.95])]
    pub taus: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn feature_names(layout: &FeatureLayout) -> Vec<String> {
    let mut names: Vec<String> = layout
        .theta
        .iter()
        .map(|t| {
            match t {
                ThetaFeature::LogitDelta => "logit_delta",
                ThetaFeature::LogRho => "log_rho",
                ThetaFeature::LogitR => "logit_r",
            }
            .to_string()
        })
        .collect();
    for j in 0..layout.n_neighbors {
        names.push(format!("neighbor_{}", j + 1));
    }
    if layout.offsets {
        for j in 0..layout.n_neighbors {
            names.push(format!("offset_{}_x", j + 1));
            names.push(format!("offset_{}_y", j + 1));
        }
    }
    names
}

pub fn run(args: &InspectArgs) -> Result<()> {
    let net = SpqrNet::load(&args.net)
        .with_context(|| format!("loading {}", args.net.display()))?;
    println!("format_version,{}", net.version);
    println!(
        "layers,{}",
        net.layers
            .iter()
            .map(|l| l.to_string())
            .collect::<Vec<_>>()
            .join("-")
    );
    println!("activation,{:?}", net.activation);
    println!("k_basis,{}", net.basis.k_basis);
    println!("spline_degree,{}", net.basis.degree);
    println!("n_features,{}", net.n_inputs());
    println!("n_neighbors,{}", net.layout.n_neighbors);
    println!("global_layout,{}", net.layout.offsets);
    let names = feature_names(&net.layout);
    println!("features,{}", names.join(";"));

    if args.vi {
        // Regenerate a design sample from the sibling graph artifact.
        let nets_dir = args
            .net
            .parent()
            .ok_or_else(|| anyhow::anyhow!("net path has no parent directory"))?;
        let artifact = GraphArtifact::load(nets_dir)?;
        let stem = args
            .net
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default();
        let k: usize = match stem.strip_prefix("site_") {
            Some(num) => num.parse().context("net file name should be site_<k>.json")?,
            None => bail!("variable importance needs a per-site net (site_<k>.json)"),
        };
        let by_visit = artifact.coords_by_visit();
        let data = generate_local_data(
            &by_visit,
            &artifact.graph,
            k,
            artifact.variant,
            &artifact.design,
            &net.layout,
            args.sample,
            args.seed,
        )?;
        println!("feature,tau,vi,constant");
        for j in 0..net.n_inputs() {
            let curves = ale_and_vi(&net, data.xs.view(), j, &args.taus, 10)?;
            for c in curves {
                println!("{},{},{},{}", names[j], c.tau, c.vi, c.constant_feature);
            }
        }
    }
    Ok(())
}
