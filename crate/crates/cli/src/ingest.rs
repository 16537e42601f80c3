//! Station CSV ingestion: `site_id,lon,lat,year,annual_max_cms` rows become
//! a response panel with a configurable power transform (log by default)
//! and an explicit missingness mask.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::config::DataConfig;
use pmm::geo::project_and_scale;
use pmm::surrogate::Dataset;
use pmm::TimeCovariate;

pub const CSV_HEADER: [&str; 5] = ["site_id", "lon", "lat", "year", "annual_max_cms"];

/// One annual-maximum observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationRecord {
    pub site_id: String,
    pub lon: f64,
    pub lat: f64,
    pub year: i32,
    pub annual_max_cms: f64,
}

/// Read records, enforcing the header, positive flows, and one record per
/// (site, year).
pub fn read_station_csv(path: &Path) -> Result<Vec<StationRecord>> {
    let mut reader = csv::Reader::from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    {
        let headers = reader.headers()?;
        let got: Vec<&str> = headers.iter().collect();
        if got != CSV_HEADER {
            bail!(
                "unexpected header {:?}; expected {:?}",
                got,
                CSV_HEADER
            );
        }
    }
    let mut records = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (row_idx, row) in reader.deserialize::<StationRecord>().enumerate() {
        let rec = row.with_context(|| format!("row {} of {}", row_idx + 2, path.display()))?;
        if !(rec.annual_max_cms > 0.0) {
            bail!(
                "row {}: nonpositive flow {} for site {} year {}",
                row_idx + 2,
                rec.annual_max_cms,
                rec.site_id,
                rec.year
            );
        }
        if !seen.insert((rec.site_id.clone(), rec.year)) {
            bail!(
                "row {}: duplicate record for site {} year {}",
                row_idx + 2,
                rec.site_id,
                rec.year
            );
        }
        records.push(rec);
    }
    if records.is_empty() {
        bail!("{} holds no records", path.display());
    }
    Ok(records)
}

/// Write records in the same schema; floats use Rust's shortest
/// round-trip formatting, so export -> ingest is lossless.
pub fn write_station_csv(path: &Path, records: &[StationRecord]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)
        .with_context(|| format!("creating {}", path.display()))?;
    for rec in records {
        writer.serialize(rec)?;
    }
    writer.flush()?;
    Ok(())
}

fn transform(flow: f64, power: f64) -> f64 {
    if power == 0.0 {
        flow.ln()
    } else {
        flow.powf(power)
    }
}

/// Invert the response transform back to flow units.
pub fn back_transform(y: f64, power: f64) -> f64 {
    if power == 0.0 {
        y.exp()
    } else {
        y.powf(1.0 / power)
    }
}

/// Report of the assembled panel.
#[derive(Debug, Clone, Serialize)]
pub struct IngestReport {
    pub n_sites: usize,
    pub n_years: usize,
    pub n_missing: usize,
    pub n_censored: usize,
    pub year_min: i32,
    pub year_max: i32,
}

/// Assemble the dataset and its year covariate from records.
pub fn build_dataset(
    records: &[StationRecord],
    cfg: &DataConfig,
) -> Result<(Dataset, TimeCovariate, IngestReport)> {
    // Deterministic site order: first appearance.
    let mut site_ids: Vec<String> = Vec::new();
    let mut coords: Vec<[f64; 2]> = Vec::new();
    let mut site_index: BTreeMap<String, usize> = BTreeMap::new();
    for rec in records {
        site_index.entry(rec.site_id.clone()).or_insert_with(|| {
            site_ids.push(rec.site_id.clone());
            coords.push([rec.lon, rec.lat]);
            site_ids.len() - 1
        });
    }
    let year_min = records.iter().map(|r| r.year).min().unwrap();
    let year_max = records.iter().map(|r| r.year).max().unwrap();
    let years: Vec<i32> = (year_min..=year_max).collect();
    let n = site_ids.len();
    let t_len = years.len();

    let mut y = Array2::from_elem((n, t_len), f64::NAN);
    for rec in records {
        let i = site_index[&rec.site_id];
        let t = (rec.year - year_min) as usize;
        y[[i, t]] = transform(rec.annual_max_cms, cfg.transform_power);
    }

    let sites = project_and_scale(site_ids, coords, cfg.projection)?;
    let mut dataset = Dataset::with_missing(sites, years.clone(), y)?;
    if let Some(q) = cfg.censor_quantile {
        if q > 0.0 {
            let mut observed: Vec<f64> = dataset
                .y
                .iter()
                .cloned()
                .filter(|v| v.is_finite())
                .collect();
            observed.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let threshold = pmm::stats::quantile(&observed, q);
            dataset.apply_censoring(threshold);
        }
    }
    let center = cfg
        .year_center
        .unwrap_or_else(|| (year_min as f64 + year_max as f64) / 2.0);
    let covariate = TimeCovariate::from_years(&years, center, cfg.year_scale);
    let report = IngestReport {
        n_sites: n,
        n_years: t_len,
        n_missing: dataset.n_missing(),
        n_censored: dataset.n_censored(),
        year_min,
        year_max,
    };
    Ok((dataset, covariate, report))
}

/// Convenience wrapper reading straight from the config's CSV path.
pub fn load_dataset(cfg: &DataConfig) -> Result<(Dataset, TimeCovariate, IngestReport)> {
    let path = cfg
        .csv
        .as_ref()
        .ok_or_else(|| anyhow::anyhow!("data.csv path missing from configuration"))?;
    let records = read_station_csv(Path::new(path))?;
    build_dataset(&records, cfg)
}

/// Export a response panel as station records, inverting the transform.
pub fn dataset_to_records(
    dataset: &Dataset,
    transform_power: f64,
    use_raw_coords: bool,
) -> Vec<StationRecord> {
    let mut out = Vec::new();
    for i in 0..dataset.n_sites() {
        for (t, &year) in dataset.years.iter().enumerate() {
            let y = dataset.y[[i, t]];
            if !y.is_finite() {
                continue;
            }
            let coord = if use_raw_coords {
                dataset.sites.raw[i]
            } else {
                dataset.sites.scaled[i]
            };
            out.push(StationRecord {
                site_id: dataset.sites.ids[i].clone(),
                lon: coord[0],
                lat: coord[1],
                year,
                annual_max_cms: back_transform(y, transform_power),
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::DataConfig;
    use pmm::geo::ProjectionMode;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        use std::io::Write;
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    fn planar_cfg() -> DataConfig {
        DataConfig {
            projection: ProjectionMode::PlanarPassthrough,
            ..DataConfig::default()
        }
    }

    #[test]
    fn complete_panel_builds() {
        let f = write_tmp(
            "site_id,lon,lat,year,annual_max_cms\n\
             a,0,0,2000,10\na,0,0,2001,12\na,0,0,2002,9\n\
             b,10,0,2000,20\nb,10,0,2001,22\nb,10,0,2002,21\n",
        );
        let records = read_station_csv(f.path()).unwrap();
        let (ds, cov, report) = build_dataset(&records, &planar_cfg()).unwrap();
        assert_eq!(report.n_sites, 2);
        assert_eq!(report.n_years, 3);
        assert_eq!(report.n_missing, 0);
        assert_eq!(ds.y[[0, 0]], 10.0_f64.ln());
        assert_eq!(cov.x.len(), 3);
    }

    #[test]
    fn missing_cell_masked() {
        let f = write_tmp(
            "site_id,lon,lat,year,annual_max_cms\n\
             a,0,0,2000,10\na,0,0,2002,9\n\
             b,10,0,2000,20\nb,10,0,2001,22\nb,10,0,2002,21\n",
        );
        let records = read_station_csv(f.path()).unwrap();
        let (ds, _, report) = build_dataset(&records, &planar_cfg()).unwrap();
        assert_eq!(report.n_missing, 1);
        assert!(ds.y[[0, 1]].is_nan());
    }

    #[test]
    fn duplicates_and_nonpositive_rejected() {
        let dup = write_tmp(
            "site_id,lon,lat,year,annual_max_cms\na,0,0,2000,10\na,0,0,2000,11\n",
        );
        assert!(read_station_csv(dup.path()).is_err());
        let neg = write_tmp("site_id,lon,lat,year,annual_max_cms\na,0,0,2000,-1\n");
        let err = read_station_csv(neg.path()).unwrap_err().to_string();
        assert!(err.contains("row 2"), "error should cite the row: {err}");
        let bad_header = write_tmp("id,lon,lat,year,flow\na,0,0,2000,1\n");
        assert!(read_station_csv(bad_header.path()).is_err());
    }

    #[test]
    fn export_ingest_round_trip_is_lossless() {
        let f = write_tmp(
            "site_id,lon,lat,year,annual_max_cms\n\
             a,0,0,2000,10.123456789012345\na,0,0,2001,0.000123456789012345\n\
             b,10,0,2000,98765.4321098765\nb,10,0,2001,3.141592653589793\n",
        );
        let records = read_station_csv(f.path()).unwrap();
        let (ds, _, _) = build_dataset(&records, &planar_cfg()).unwrap();
        let out = dataset_to_records(&ds, 0.0, true);
        let tmp = tempfile::NamedTempFile::new().unwrap();
        write_station_csv(tmp.path(), &out).unwrap();
        let back = read_station_csv(tmp.path()).unwrap();
        assert_eq!(back.len(), records.len());
        for (a, b) in records.iter().zip(&back) {
            assert_eq!(a.site_id, b.site_id);
            assert_eq!(a.year, b.year);
            // Lossless to 15 significant digits through the log transform.
            let rel = (a.annual_max_cms - b.annual_max_cms).abs() / a.annual_max_cms;
            assert!(rel < 1e-15, "{} vs {}", a.annual_max_cms, b.annual_max_cms);
        }
    }

    #[test]
    fn censoring_marks_lower_tail() {
        let mut rows = String::from("site_id,lon,lat,year,annual_max_cms\n");
        for y in 2000..2020 {
            rows += &format!("a,0,0,{y},{}\n", y - 1990);
            rows += &format!("b,10,0,{y},{}\n", y - 1980);
        }
        let f = write_tmp(&rows);
        let records = read_station_csv(f.path()).unwrap();
        let cfg = DataConfig {
            censor_quantile: Some(0.5),
            ..planar_cfg()
        };
        let (ds, _, report) = build_dataset(&records, &cfg).unwrap();
        assert!(report.n_censored > 10);
        assert!(ds.censor_threshold.is_some());
    }
}
