//! `pmm exceedance`: posterior joint exceedance probabilities for a cluster
//! of sites in two comparison years, via simulation from the fitted process
//! (or the analytic independence product).

use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Args;

use crate::config::RunConfig;
use crate::manifest::Manifest;
use crate::pipeline::{self, GraphArtifact, CHAINS_DIR, NETS_DIR};
use pmm::diagnostics::{compare_exceedance, joint_exceedance_probs, ExceedanceMethod};
use pmm::surrogate::CellStatus;

#[derive(Debug, Args)]
pub struct ExceedanceArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub chains: Option<PathBuf>,
    #[arg(long)]
    pub nets: Option<PathBuf>,
    /// Comma-separated cluster site ids (default: every site).
    #[arg(long)]
    pub sites: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn run(args: &ExceedanceArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(data) = &args.data {
        cfg.data.csv = Some(data.display().to_string());
    }
    if let Some(sites) = &args.sites {
        cfg.exceedance.site_ids = sites.split(',').map(|s| s.trim().to_string()).collect();
    }
    cfg.validate()?;
    if cfg.data.csv.is_none() {
        bail!("exceedance requires a dataset: pass --data or set data.csv in the config");
    }
    let seed = args.seed.unwrap_or(cfg.mcmc.seed);
    let out = pipeline::ensure_dir(&args.out)?;
    let config_hash = cfg.write_snapshot(&out)?;
    let (dataset, _covariate, _) = crate::ingest::load_dataset(&cfg.data)?;

    let nets_dir = args.nets.clone().unwrap_or_else(|| out.join(NETS_DIR));
    let chains_dir = args.chains.clone().unwrap_or_else(|| out.join(CHAINS_DIR));
    let artifact = GraphArtifact::load(&nets_dir)?;
    let (names, draws) = pipeline::read_chain_csv(&chains_dir.join("chain_0.csv"))?;
    if draws.is_empty() {
        bail!("no posterior draws found; run `pmm fit` first");
    }

    // Cluster selection.
    let cluster: Vec<usize> = if cfg.exceedance.site_ids.is_empty() {
        (0..dataset.n_sites()).collect()
    } else {
        cfg.exceedance
            .site_ids
            .iter()
            .map(|id| {
                dataset
                    .sites
                    .ids
                    .iter()
                    .position(|x| x == id)
                    .ok_or_else(|| anyhow::anyhow!("unknown site id {id:?}"))
            })
            .collect::<Result<_>>()?
    };
    let coords: Vec<[f64; 2]> = cluster.iter().map(|&i| dataset.sites.scaled[i]).collect();

    // Observed per-site threshold quantiles on the response scale.
    let q_level = cfg.exceedance.quantile;
    let thresholds_y: Vec<f64> = cluster
        .iter()
        .map(|&i| {
            let mut series: Vec<f64> = (0..dataset.n_years())
                .filter(|&t| dataset.status[[i, t]] == CellStatus::Observed)
                .map(|t| dataset.y[[i, t]])
                .collect();
            if series.is_empty() {
                bail!("site {} has no observed values", dataset.sites.ids[i]);
            }
            series.sort_by(|a, b| a.partial_cmp(b).unwrap());
            Ok(pmm::stats::quantile(&series, q_level))
        })
        .collect::<Result<_>>()?;

    // Thin posterior draws.
    let n_posterior = cfg.exceedance.n_posterior.min(draws.len());
    let step = (draws.len() / n_posterior).max(1);
    let year_center = cfg.data.year_center.unwrap_or_else(|| {
        (dataset.years[0] as f64 + *dataset.years.last().unwrap() as f64) / 2.0
    });
    let mut per_year_draws: Vec<Vec<(pmm::SpatialParams, Vec<f64>)>> = vec![Vec::new(), Vec::new()];
    for draw in draws.iter().step_by(step).take(n_posterior) {
        let spat = pipeline::spat_from_sample(&names, draw, &artifact.design, artifact.variant)?;
        let margins = pipeline::margins_from_sample(
            &names,
            draw,
            cfg.model.marginal_model,
            &dataset.sites,
            None,
        )?;
        for (yi, year) in [cfg.exceedance.year_a, cfg.exceedance.year_b]
            .into_iter()
            .enumerate()
        {
            let x_t = (year as f64 - year_center) / cfg.data.year_scale;
            let u_thresholds: Vec<f64> = cluster
                .iter()
                .zip(&thresholds_y)
                .map(|(&i, &q)| margins.at(i, x_t).cdf(q))
                .collect();
            per_year_draws[yi].push((spat, u_thresholds));
        }
    }

    let method = if cfg.exceedance.analytic_independence {
        ExceedanceMethod::AnalyticIndependence
    } else {
        ExceedanceMethod::MonteCarlo {
            n_draws: cfg.exceedance.n_draws,
        }
    };
    let p_a = joint_exceedance_probs(&coords, artifact.variant, &per_year_draws[0], method, seed)?;
    let p_b = joint_exceedance_probs(
        &coords,
        artifact.variant,
        &per_year_draws[1],
        method,
        seed.wrapping_add(1),
    )?;
    let comparison = compare_exceedance(&p_a, &p_b)?;

    let detail_path = out.join("exceedance.csv");
    let mut w = csv::Writer::from_path(&detail_path)?;
    w.write_record([
        "draw".to_string(),
        format!("prob_{}", cfg.exceedance.year_a),
        format!("prob_{}", cfg.exceedance.year_b),
    ])?;
    for (d, (a, b)) in p_a.iter().zip(&p_b).enumerate() {
        w.write_record([d.to_string(), a.to_string(), b.to_string()])?;
    }
    w.flush()?;

    let report_path = out.join("exceedance_report.json");
    let report = serde_json::json!({
        "cluster_sites": cluster.iter().map(|&i| dataset.sites.ids[i].clone()).collect::<Vec<_>>(),
        "quantile": q_level,
        "year_a": cfg.exceedance.year_a,
        "year_b": cfg.exceedance.year_b,
        "mean_a": comparison.mean_a,
        "sd_a": comparison.sd_a,
        "mean_b": comparison.mean_b,
        "sd_b": comparison.sd_b,
        "prob_b_exceeds_a": comparison.prob_b_exceeds_a,
        "method": match method {
            ExceedanceMethod::AnalyticIndependence => "analytic-independence".to_string(),
            ExceedanceMethod::MonteCarlo { n_draws } => format!("monte-carlo:{n_draws}"),
        },
    });
    std::fs::write(&report_path, serde_json::to_string_pretty(&report)?)?;

    let mut manifest = Manifest::new("exceedance", config_hash, seed);
    manifest.add_output(&detail_path);
    manifest.add_output(&report_path);
    manifest.write(&out)?;

    println!(
        "joint exceedance {}: mean {:.4} (sd {:.4}); {}: mean {:.4} (sd {:.4}); Pr[b > a] = {:.3}",
        cfg.exceedance.year_a,
        comparison.mean_a,
        comparison.sd_a,
        cfg.exceedance.year_b,
        comparison.mean_b,
        comparison.sd_b,
        comparison.prob_b_exceeds_a
    );
    Ok(())
}
