//! Minimal USGS NWIS daily-values client: downloads daily discharge
//! (parameter 00060), converts ft^3/s to m^3/s, and reduces complete-enough
//! years to annual maxima. Raw responses are cached on disk keyed by a hash
//! of the request, so warmed caches replay offline and tests never touch
//! the network.

use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};

use crate::manifest::sha256_hex;

pub const CFS_TO_CMS: f64 = 0.0283168;
/// A year needs at least this many daily values to yield a maximum.
pub const MIN_DAYS_PER_YEAR: usize = 300;
pub const CACHE_DIR_ENV: &str = "PMM_CACHE_DIR";

const DEFAULT_BASE_URL: &str = "https://waterservices.usgs.gov/nwis/dv/";

#[derive(Debug, Clone)]
pub struct NwisClient {
    pub base_url: String,
    pub cache_dir: PathBuf,
    pub offline: bool,
}

/// Annual maxima for one site, with its coordinates from the service
/// metadata. Incomplete years are absent from `maxima`.
#[derive(Debug, Clone)]
pub struct SiteSeries {
    pub site_id: String,
    pub lon: f64,
    pub lat: f64,
    pub maxima_cms: BTreeMap<i32, f64>,
    pub incomplete_years: Vec<i32>,
}

impl NwisClient {
    pub fn new(cache_dir: Option<PathBuf>, offline: bool) -> Result<Self> {
        let cache_dir = match cache_dir {
            Some(d) => d,
            None => match std::env::var_os(CACHE_DIR_ENV) {
                Some(d) => PathBuf::from(d),
                None => std::env::temp_dir().join("pmm-nwis-cache"),
            },
        };
        std::fs::create_dir_all(&cache_dir)?;
        Ok(Self {
            base_url: DEFAULT_BASE_URL.to_string(),
            cache_dir,
            offline,
        })
    }

    /// Cache key for one site/date-range request; independent of the
    /// endpoint so a warmed cache survives base-url changes.
    pub fn cache_key(site: &str, start_year: i32, end_year: i32) -> String {
        sha256_hex(format!("nwis-dv:{site}:{start_year}:{end_year}").as_bytes())
    }

    fn request_url(&self, site: &str, start_year: i32, end_year: i32) -> String {
        format!(
            "{}?format=json&sites={}&startDT={}-01-01&endDT={}-12-31&parameterCd=00060&statCd=00003",
            self.base_url, site, start_year, end_year
        )
    }

    fn fetch_raw(&self, site: &str, start_year: i32, end_year: i32) -> Result<String> {
        let cache_path = self
            .cache_dir
            .join(format!("{}.json", Self::cache_key(site, start_year, end_year)));
        if cache_path.exists() {
            return Ok(std::fs::read_to_string(&cache_path)?);
        }
        if self.offline {
            bail!(
                "offline mode and no cached response for site {site} ({}..{}); \
                 expected {}",
                start_year,
                end_year,
                cache_path.display()
            );
        }
        let url = self.request_url(site, start_year, end_year);
        let body = reqwest::blocking::get(&url)
            .and_then(|resp| resp.error_for_status())
            .and_then(|resp| resp.text())
            .with_context(|| format!("fetching {url}"))?;
        std::fs::write(&cache_path, &body)?;
        Ok(body)
    }

    /// Download (or replay) one site's daily series and reduce it to annual
    /// maxima in m^3/s.
    pub fn annual_maxima(&self, site: &str, start_year: i32, end_year: i32) -> Result<SiteSeries> {
        let body = self.fetch_raw(site, start_year, end_year)?;
        parse_daily_values(site, &body)
    }
}

/// Parse the waterservices JSON payload into annual maxima.
pub fn parse_daily_values(site: &str, body: &str) -> Result<SiteSeries> {
    let root: serde_json::Value =
        serde_json::from_str(body).with_context(|| format!("parsing NWIS JSON for {site}"))?;
    let series = root
        .pointer("/value/timeSeries")
        .and_then(|v| v.as_array())
        .filter(|a| !a.is_empty())
        .with_context(|| format!("no time series in NWIS response for {site}"))?;
    let ts = &series[0];
    let geo = ts
        .pointer("/sourceInfo/geoLocation/geogLocation")
        .with_context(|| format!("no geolocation for {site}"))?;
    let lat = geo["latitude"]
        .as_f64()
        .context("latitude missing or non-numeric")?;
    let lon = geo["longitude"]
        .as_f64()
        .context("longitude missing or non-numeric")?;
    let no_data = ts
        .pointer("/variable/noDataValue")
        .and_then(|v| v.as_f64())
        .unwrap_or(-999_999.0);
    let values = ts
        .pointer("/values/0/value")
        .and_then(|v| v.as_array())
        .with_context(|| format!("no daily values for {site}"))?;

    let mut day_count: BTreeMap<i32, usize> = BTreeMap::new();
    let mut year_max: BTreeMap<i32, f64> = BTreeMap::new();
    for entry in values {
        let date = entry["dateTime"].as_str().unwrap_or("");
        if date.len() < 4 {
            continue;
        }
        let year: i32 = match date[..4].parse() {
            Ok(y) => y,
            Err(_) => continue,
        };
        let raw: f64 = match entry["value"].as_str().and_then(|s| s.parse().ok()) {
            Some(v) => v,
            None => continue,
        };
        if raw == no_data || raw < 0.0 {
            continue;
        }
        *day_count.entry(year).or_insert(0) += 1;
        let cms = raw * CFS_TO_CMS;
        year_max
            .entry(year)
            .and_modify(|m| *m = m.max(cms))
            .or_insert(cms);
    }
    let mut maxima_cms = BTreeMap::new();
    let mut incomplete = Vec::new();
    for (year, count) in &day_count {
        if *count >= MIN_DAYS_PER_YEAR {
            maxima_cms.insert(*year, year_max[year]);
        } else {
            incomplete.push(*year);
        }
    }
    Ok(SiteSeries {
        site_id: site.to_string(),
        lon,
        lat,
        maxima_cms,
        incomplete_years: incomplete,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(days_1972: usize, days_1973: usize) -> String {
        let mut values = String::new();
        for (year, days) in [(1972, days_1972), (1973, days_1973)] {
            for d in 0..days {
                let month = d / 28 + 1;
                let day = d % 28 + 1;
                values += &format!(
                    "{{\"value\":\"{}\",\"dateTime\":\"{year}-{month:02}-{day:02}T00:00:00.000\"}},",
                    100 + d
                );
            }
        }
        values.pop();
        format!(
            "{{\"value\":{{\"timeSeries\":[{{\
             \"sourceInfo\":{{\"geoLocation\":{{\"geogLocation\":{{\"latitude\":47.2,\"longitude\":-68.6}}}}}},\
             \"variable\":{{\"noDataValue\":-999999.0}},\
             \"values\":[{{\"value\":[{values}]}}]}}]}}}}"
        )
    }

    #[test]
    fn annual_max_converts_units_and_flags_incomplete_years() {
        let body = fixture(330, 100);
        let series = parse_daily_values("01013500", &body).unwrap();
        // 1972 is complete: its max is the last daily value times the unit
        // conversion.
        let expect = (100.0 + 329.0) * CFS_TO_CMS;
        assert!((series.maxima_cms[&1972] - expect).abs() < 1e-12);
        // 1973 has only 100 days: marked incomplete, no maximum reported.
        assert!(!series.maxima_cms.contains_key(&1973));
        assert_eq!(series.incomplete_years, vec![1973]);
        assert_eq!(series.lat, 47.2);
        assert_eq!(series.lon, -68.6);
    }

    #[test]
    fn no_data_sentinel_skipped() {
        let body = "{\"value\":{\"timeSeries\":[{\
            \"sourceInfo\":{\"geoLocation\":{\"geogLocation\":{\"latitude\":1.0,\"longitude\":2.0}}},\
            \"variable\":{\"noDataValue\":-999999.0},\
            \"values\":[{\"value\":[\
              {\"value\":\"-999999\",\"dateTime\":\"1980-01-01T00:00:00.000\"},\
              {\"value\":\"50\",\"dateTime\":\"1980-01-02T00:00:00.000\"}\
            ]}]}]}}";
        let series = parse_daily_values("x", body).unwrap();
        // Only one valid day: the year is incomplete.
        assert!(series.maxima_cms.is_empty());
        assert_eq!(series.incomplete_years, vec![1980]);
    }

    #[test]
    fn offline_without_cache_is_an_error() {
        let dir = std::env::temp_dir().join("pmm-nwis-test-empty");
        let _ = std::fs::remove_dir_all(&dir);
        let client = NwisClient {
            base_url: "http://unused.invalid/".into(),
            cache_dir: dir.clone(),
            offline: true,
        };
        std::fs::create_dir_all(&dir).unwrap();
        assert!(client.annual_maxima("01013500", 1972, 1973).is_err());
    }

    #[test]
    fn warm_cache_replays_offline() {
        let dir = std::env::temp_dir().join("pmm-nwis-test-warm");
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        let key = NwisClient::cache_key("01013500", 1972, 1972);
        std::fs::write(dir.join(format!("{key}.json")), fixture(330, 0)).unwrap();
        let client = NwisClient {
            base_url: "http://unused.invalid/".into(),
            cache_dir: dir,
            offline: true,
        };
        let series = client.annual_maxima("01013500", 1972, 1972).unwrap();
        assert_eq!(series.maxima_cms.len(), 1);
    }
}
