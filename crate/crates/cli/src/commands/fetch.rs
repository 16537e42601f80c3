//! `pmm fetch-nwis`: build an annual-maximum station CSV from the USGS
//! daily-values service (or its on-disk cache).

use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Args;

use crate::ingest::{write_station_csv, StationRecord};
use crate::nwis::NwisClient;

#[derive(Debug, Args)]
pub struct FetchArgs {
    /// Comma-separated USGS site ids.
    #[arg(long)]
    pub sites: String,
    /// First year of the range.
    #[arg(long)]
    pub start: i32,
    /// Last year of the range (inclusive).
    #[arg(long)]
    pub end: i32,
    /// Output CSV path.
    #[arg(long)]
    pub out: PathBuf,
    /// Response cache directory (default: $PMM_CACHE_DIR or the system
    /// temp directory).
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    /// Never touch the network; replay cached responses only.
    #[arg(long)]
    pub offline: bool,
    /// Emit whatever sites succeeded instead of failing on the first error.
    #[arg(long)]
    pub allow_partial: bool,
}

pub fn run(args: &FetchArgs) -> Result<()> {
    if args.start > args.end {
        bail!("start year {} is after end year {}", args.start, args.end);
    }
    let client = NwisClient::new(args.cache_dir.clone(), args.offline)?;
    let mut records: Vec<StationRecord> = Vec::new();
    let mut failures: Vec<(String, String)> = Vec::new();
    for site in args.sites.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        match client.annual_maxima(site, args.start, args.end) {
            Ok(series) => {
                if !series.incomplete_years.is_empty() {
                    eprintln!(
                        "warning: site {site} has {} incomplete years (treated as missing)",
                        series.incomplete_years.len()
                    );
                }
                for (&year, &cms) in &series.maxima_cms {
                    records.push(StationRecord {
                        site_id: series.site_id.clone(),
                        lon: series.lon,
                        lat: series.lat,
                        year,
                        annual_max_cms: cms,
                    });
                }
            }
            Err(e) => failures.push((site.to_string(), e.to_string())),
        }
    }
    if !failures.is_empty() {
        for (site, err) in &failures {
            eprintln!("error: site {site}: {err}");
        }
        if !args.allow_partial {
            bail!("{} of the requested sites failed; pass --allow-partial to keep the rest",
                failures.len());
        }
    }
    if records.is_empty() {
        bail!("no complete site-years retrieved");
    }
    write_station_csv(&args.out, &records)?;
    println!(
        "wrote {} records for {} sites to {}",
        records.len(),
        records
            .iter()
            .map(|r| &r.site_id)
            .collect::<std::collections::BTreeSet<_>>()
            .len(),
        args.out.display()
    );
    Ok(())
}
