//! `pmm train`: fit the conditional-density nets for every site with
//! neighbors (or one pooled global net) on synthetic draws from the design
//! distribution, and record the graph/design artifact the fit step checks
//! against.

use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Args;

use crate::config::RunConfig;
use crate::manifest::Manifest;
use crate::pipeline::{self, GraphArtifact, NETS_DIR};
use pmm::spqr::{train_global, train_local, TrainReport};

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory; nets land in `<out>/nets/`.
    #[arg(long)]
    pub out: PathBuf,
    /// Station CSV override for the site layout.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Hidden layer widths, comma separated; `0` trains the linear
    /// (no-hidden-layer) ablation.
    #[arg(long)]
    pub hidden: Option<String>,
    /// Train one pooled net instead of per-site nets.
    #[arg(long)]
    pub global: bool,
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn parse_hidden(spec: &str) -> Result<Vec<usize>> {
    let spec = spec.trim();
    if spec == "0" {
        return Ok(Vec::new());
    }
    spec.split(',')
        .map(|tok| {
            tok.trim()
                .parse::<usize>()
                .map_err(|e| anyhow::anyhow!("bad hidden layer width {tok:?}: {e}"))
        })
        .collect()
}

pub fn run(args: &TrainArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(data) = &args.data {
        cfg.data.csv = Some(data.display().to_string());
    }
    if let Some(hidden) = &args.hidden {
        cfg.train.hidden = parse_hidden(hidden)?;
    }
    if args.global {
        cfg.model.global_net = true;
    }
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    cfg.validate()?;

    let out = pipeline::ensure_dir(&args.out)?;
    let config_hash = cfg.write_snapshot(&out)?;
    let nets_dir = pipeline::ensure_dir(&out.join(NETS_DIR))?;

    let (sites, _) = pipeline::sites_from_config(&cfg)?;
    if sites.n_sites() < 2 {
        bail!("training needs at least 2 sites");
    }
    let graph = pipeline::build_graph(&sites, cfg.model.m_neighbors)?;
    let artifact = GraphArtifact {
        sites,
        graph,
        variant: cfg.model.variant,
        design: cfg.design.clone(),
        global: cfg.model.global_net,
    };
    artifact.save(&nets_dir)?;
    let by_visit = artifact.coords_by_visit();

    let mut manifest = Manifest::new("train", config_hash, cfg.train.seed);
    let mut reports: Vec<TrainReport> = Vec::new();
    if cfg.model.global_net {
        let trained = train_global(
            &by_visit,
            &artifact.graph,
            cfg.model.variant,
            &cfg.design,
            &cfg.train,
        )?;
        let path = nets_dir.join("global.json");
        trained.net.save(&path)?;
        manifest.add_output(&path);
        reports.push(trained.report);
    } else {
        for k in 1..artifact.graph.n_sites() {
            let trained = train_local(
                &by_visit,
                &artifact.graph,
                k,
                cfg.model.variant,
                &cfg.design,
                &cfg.train,
            )?;
            let path = nets_dir.join(format!("site_{k:04}.json"));
            trained.net.save(&path)?;
            manifest.add_output(&path);
            reports.push(trained.report);
            if k % 10 == 0 {
                println!("trained {k}/{} site nets", artifact.graph.n_sites() - 1);
            }
        }
    }

    let report_path = nets_dir.join("train_report.csv");
    let mut w = csv::Writer::from_path(&report_path)?;
    w.write_record([
        "site",
        "best_epoch",
        "best_val_nll",
        "final_train_nll",
        "n_clamped",
    ])?;
    for rep in &reports {
        w.write_record([
            if rep.site == usize::MAX {
                "global".to_string()
            } else {
                rep.site.to_string()
            },
            rep.best_epoch.to_string(),
            rep.best_val_nll.to_string(),
            rep.train_nll.last().unwrap().to_string(),
            rep.n_clamped.to_string(),
        ])?;
    }
    w.flush()?;
    manifest.add_output(&report_path);
    manifest.note("n_nets", reports.len());
    manifest.note(
        "mean_best_val_nll",
        reports.iter().map(|r| r.best_val_nll).sum::<f64>() / reports.len().max(1) as f64,
    );
    manifest.write(&out)?;
    println!("trained {} nets into {}", reports.len(), nets_dir.display());
    Ok(())
}
