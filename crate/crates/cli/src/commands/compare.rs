//! `pmm compare`: WAIC / IS-LOO table across fitted model variants, from
//! the pointwise log-likelihood matrices saved by `pmm fit --save-pointwise`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use ndarray::Array2;

use crate::manifest::Manifest;
use crate::pipeline::{self, CHAINS_DIR};
use pmm::diagnostics::waic_and_loo;

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Labeled fit directories, `label=path`, repeatable.
    #[arg(long = "fit", value_name = "LABEL=DIR", required = true)]
    pub fits: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

fn read_pointwise(chains_dir: &Path) -> Result<Array2<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for c in 0.. {
        let path = chains_dir.join(format!("pointwise_{c}.csv"));
        if !path.exists() {
            break;
        }
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .from_path(&path)?;
        for record in reader.records() {
            let record = record?;
            rows.push(
                record
                    .iter()
                    .map(|s| s.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()?,
            );
        }
    }
    if rows.is_empty() {
        bail!(
            "no pointwise matrices under {}; rerun `pmm fit --save-pointwise`",
            chains_dir.display()
        );
    }
    let n_cells = rows[0].len();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(Array2::from_shape_vec((flat.len() / n_cells, n_cells), flat)?)
}

pub fn run(args: &CompareArgs) -> Result<()> {
    let out = pipeline::ensure_dir(&args.out)?;
    let mut manifest = Manifest::new("compare", String::new(), 0);
    let table_path = out.join("compare.csv");
    let mut w = csv::Writer::from_path(&table_path)?;
    w.write_record([
        "model", "waic", "waic_se", "p_waic", "loo", "loo_se", "n_samples", "n_cells",
    ])?;
    let mut results = Vec::new();
    for spec in &args.fits {
        let (label, dir) = spec
            .split_once('=')
            .with_context(|| format!("expected LABEL=DIR, got {spec:?}"))?;
        let pw = read_pointwise(&Path::new(dir).join(CHAINS_DIR))?;
        let report = waic_and_loo(pw.view())?;
        w.write_record([
            label.to_string(),
            report.waic.to_string(),
            report.waic_se.to_string(),
            report.p_waic.to_string(),
            report.loo.to_string(),
            report.loo_se.to_string(),
            report.n_samples.to_string(),
            report.n_cells.to_string(),
        ])?;
        println!(
            "{label}: WAIC {:.1} ({:.1})  LOO {:.1} ({:.1})",
            report.waic, report.waic_se, report.loo, report.loo_se
        );
        results.push((label.to_string(), report));
    }
    w.flush()?;
    manifest.add_output(&table_path);
    manifest.note(
        "best_by_waic",
        results
            .iter()
            .min_by(|a, b| a.1.waic.partial_cmp(&b.1.waic).unwrap())
            .map(|(l, _)| l.clone()),
    );
    manifest.write(&out)?;
    Ok(())
}
