//! `pmm diagnose`: tail-dependence estimates, variograms, and (when chains
//! and nets are available) PIT calibration data and posterior-predictive
//! conditional-exceedance bands, all as tidy CSV.

use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Args;
use ndarray::Array2;

use crate::config::RunConfig;
use crate::manifest::Manifest;
use crate::pipeline::{self, GraphArtifact, CHAINS_DIR, DIAG_DIR, NETS_DIR};
use pmm::diagnostics::{empirical_chi, pit_qq_data, rank_standardize, variogram};
use pmm::procsim::{replicate_rng, PmmSimulator};
use pmm::surrogate::{pit_scores, to_uniform};

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Chains directory; defaults to `<out>/chains` when present.
    #[arg(long)]
    pub chains: Option<PathBuf>,
    /// Nets directory; defaults to `<out>/nets` when present.
    #[arg(long)]
    pub nets: Option<PathBuf>,
    /// Posterior-predictive replicates per posterior draw.
    #[arg(long, default_value_t = 50)]
    pub predictive_draws: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn run(args: &DiagnoseArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(data) = &args.data {
        cfg.data.csv = Some(data.display().to_string());
    }
    cfg.validate()?;
    if cfg.data.csv.is_none() {
        bail!("diagnose requires a dataset: pass --data or set data.csv in the config");
    }
    let out = pipeline::ensure_dir(&args.out)?;
    let config_hash = cfg.write_snapshot(&out)?;
    let diag_dir = pipeline::ensure_dir(&out.join(DIAG_DIR))?;
    let (dataset, covariate, _) = crate::ingest::load_dataset(&cfg.data)?;
    let mut manifest = Manifest::new("diagnose", config_hash, args.seed);

    // Empirical conditional exceedance on rank-standardized responses.
    let ranks = rank_standardize(dataset.y.view());
    let chi = empirical_chi(
        ranks.view(),
        &dataset.sites,
        &cfg.diagnose.u_levels,
        cfg.diagnose.n_bins,
        cfg.diagnose.h_max,
        cfg.diagnose.use_km,
    )?;
    let chi_path = diag_dir.join("chi_empirical.csv");
    let mut w = pipeline::tidy_writer(&chi_path)?;
    for (ui, &u) in chi.u_levels.iter().enumerate() {
        for b in 0..cfg.diagnose.n_bins {
            if chi.est[ui][b].is_nan() {
                continue;
            }
            w.write_record([
                "chi_empirical".to_string(),
                u.to_string(),
                chi.h_edges[b].to_string(),
                chi.h_edges[b + 1].to_string(),
                chi.est[ui][b].to_string(),
                chi.se[ui][b].to_string(),
                chi.pair_counts[b].to_string(),
            ])?;
        }
    }
    w.flush()?;
    manifest.add_output(&chi_path);
    if !chi.empty_bins.is_empty() {
        eprintln!("warning: {} empty distance bins omitted", chi.empty_bins.len());
    }

    // Sample variogram of the responses.
    let vario = variogram(
        dataset.y.view(),
        &dataset.sites,
        cfg.diagnose.n_bins,
        cfg.diagnose.use_km,
    )?;
    let vario_path = diag_dir.join("variogram.csv");
    let mut w = pipeline::tidy_writer(&vario_path)?;
    for bin in &vario {
        w.write_record([
            "variogram".to_string(),
            String::new(),
            bin.h_lo.to_string(),
            bin.h_hi.to_string(),
            bin.semivariance.to_string(),
            String::new(),
            bin.n_pairs.to_string(),
        ])?;
    }
    w.flush()?;
    manifest.add_output(&vario_path);

    // Model-based diagnostics when a fit is available.
    let nets_dir = args.nets.clone().unwrap_or_else(|| out.join(NETS_DIR));
    let chains_dir = args.chains.clone().unwrap_or_else(|| out.join(CHAINS_DIR));
    if nets_dir.join("graph.json").exists() && chains_dir.join("chain_0.csv").exists() {
        let artifact = GraphArtifact::load(&nets_dir)?;
        let conds = pipeline::load_conditionals(&nets_dir, &artifact)?;
        let (names, draws) = pipeline::read_chain_csv(&chains_dir.join("chain_0.csv"))?;
        if draws.is_empty() {
            bail!("chain_0.csv holds no draws");
        }

        // Posterior-mean parameter state for the PIT calibration.
        let mean_draw: Vec<f64> = (0..names.len())
            .map(|j| draws.iter().map(|d| d[j]).sum::<f64>() / draws.len() as f64)
            .collect();
        let spat = pipeline::spat_from_sample(&names, &mean_draw, &artifact.design, artifact.variant)?;
        let margins = pipeline::margins_from_sample(
            &names,
            &mean_draw,
            cfg.model.marginal_model,
            &dataset.sites,
            None,
        )?;
        let panel = to_uniform(&dataset, &margins, &covariate);
        // Visit-order panel with NaN-free cells only feeds the PIT.
        let n = artifact.graph.n_sites();
        let t_len = dataset.n_years();
        let mut u_visit = Array2::zeros((n, t_len));
        let mut complete = true;
        for k in 0..n {
            let orig = artifact.graph.order[k];
            for t in 0..t_len {
                let u = panel.u[[orig, t]];
                if u.is_nan() {
                    complete = false;
                }
                u_visit[[k, t]] = u;
            }
        }
        if complete {
            let pits = pit_scores(&u_visit, &spat, &conds, &artifact.graph)?;
            let qq = pit_qq_data(&pits)?;
            let qq_path = diag_dir.join("pit_qq.csv");
            let mut w = csv::Writer::from_path(&qq_path)?;
            w.write_record(["scale", "theoretical", "observed"])?;
            for &(t, o) in &qq.uniform {
                w.write_record(["uniform".to_string(), t.to_string(), o.to_string()])?;
            }
            for &(t, o) in &qq.exponential {
                w.write_record(["exponential".to_string(), t.to_string(), o.to_string()])?;
            }
            w.flush()?;
            manifest.add_output(&qq_path);
            let d = pmm::stats::ks_statistic(&pits, |x| x);
            manifest.note("pit_ks_statistic", d);
            manifest.note("pit_ks_pvalue", pmm::stats::ks_pvalue(d, pits.len()));
        } else {
            eprintln!("warning: incomplete panel; PIT calibration skipped");
        }

        // Posterior-predictive conditional exceedance bands.
        let n_draws = 200.min(draws.len());
        let step = (draws.len() / n_draws).max(1);
        let mut per_draw: Vec<Vec<Vec<f64>>> = Vec::new();
        for (d_idx, draw) in draws.iter().step_by(step).take(n_draws).enumerate() {
            let spat_d =
                pipeline::spat_from_sample(&names, draw, &artifact.design, artifact.variant)?;
            let sim = PmmSimulator::new(&dataset.sites.scaled, artifact.variant, spat_d)?;
            let mut u_panel = Array2::zeros((dataset.n_sites(), args.predictive_draws));
            for rep in 0..args.predictive_draws {
                let f = sim.simulate(&mut replicate_rng(
                    args.seed.wrapping_add(d_idx as u64),
                    rep as u64,
                ))?;
                for i in 0..dataset.n_sites() {
                    u_panel[[i, rep]] = f.u[i];
                }
            }
            let chi_d = empirical_chi(
                u_panel.view(),
                &dataset.sites,
                &cfg.diagnose.u_levels,
                cfg.diagnose.n_bins,
                cfg.diagnose.h_max,
                cfg.diagnose.use_km,
            )?;
            per_draw.push(chi_d.est);
        }
        let chi_post_path = diag_dir.join("chi_posterior.csv");
        let mut w = pipeline::tidy_writer(&chi_post_path)?;
        for (ui, &u) in cfg.diagnose.u_levels.iter().enumerate() {
            for b in 0..cfg.diagnose.n_bins {
                let vals: Vec<f64> = per_draw
                    .iter()
                    .map(|est| est[ui][b])
                    .filter(|v| v.is_finite())
                    .collect();
                if vals.is_empty() {
                    continue;
                }
                let (mean, var) = pmm::stats::mean_var(&vals);
                w.write_record([
                    "chi_posterior".to_string(),
                    u.to_string(),
                    chi.h_edges[b].to_string(),
                    chi.h_edges[b + 1].to_string(),
                    mean.to_string(),
                    var.sqrt().to_string(),
                    vals.len().to_string(),
                ])?;
            }
        }
        w.flush()?;
        manifest.add_output(&chi_post_path);
    } else {
        eprintln!("note: no fit artifacts found; emitted data-only diagnostics");
    }

    manifest.write(&out)?;
    println!("diagnostics written to {}", diag_dir.display());
    Ok(())
}
