//! Run configuration: one TOML file with per-concern sections, shared by
//! every subcommand. Unknown keys are rejected, and each run writes the
//! resolved configuration next to its outputs so results stay reproducible.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use pmm::geo::ProjectionMode;
use pmm::mcmc::{ChainConfig, MarginalModel, PriorSpec};
use pmm::procsim::ModelVariant;
use pmm::spqr::{DesignDistribution, TrainConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub sites: SitesConfig,
    pub model: ModelConfig,
    pub design: DesignDistribution,
    pub train: TrainConfig,
    pub priors: PriorSpec,
    pub mcmc: ChainConfig,
    pub simulate: SimulateSection,
    pub diagnose: DiagnoseSection,
    pub exceedance: ExceedanceSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: DataConfig::default(),
            sites: SitesConfig::default(),
            model: ModelConfig::default(),
            design: DesignDistribution::study_default(),
            train: TrainConfig::study_default(),
            priors: PriorSpec::study_default(),
            mcmc: ChainConfig::study_default(),
            simulate: SimulateSection::default(),
            diagnose: DiagnoseSection::default(),
            exceedance: ExceedanceSection::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Station CSV: `site_id,lon,lat,year,annual_max_cms`.
    pub csv: Option<String>,
    pub projection: ProjectionMode,
    /// Box-Cox style power for the response: 0 takes logs, otherwise
    /// `flow^power`.
    pub transform_power: f64,
    /// Censor observations below this sample quantile (over all cells);
    /// absent disables censoring.
    pub censor_quantile: Option<f64>,
    /// Center/scale of the year covariate; center defaults to the data
    /// midpoint.
    pub year_center: Option<f64>,
    pub year_scale: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            csv: None,
            projection: ProjectionMode::EquirectangularKm,
            transform_power: 0.0,
            censor_quantile: None,
            year_center: None,
            year_scale: 10.0,
        }
    }
}

/// Random unit-square sites for simulation studies run without a data file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SitesConfig {
    pub n_random: usize,
    pub seed: u64,
}

impl Default for SitesConfig {
    fn default() -> Self {
        Self {
            n_random: 50,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub variant: ModelVariant,
    pub m_neighbors: usize,
    pub marginal_model: MarginalModel,
    pub censored_latent: bool,
    /// Train and evaluate one pooled net instead of per-site nets.
    pub global_net: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: ModelVariant::Pmm,
            m_neighbors: 15,
            marginal_model: MarginalModel::SharedConstant,
            censored_latent: false,
            global_net: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSection {
    pub n_reps: usize,
    pub delta: f64,
    pub rho: f64,
    pub r: f64,
    pub alpha: f64,
    /// Constant GEV margins used to emit a response-scale dataset CSV
    /// alongside the copula panel.
    pub gev_mu: f64,
    pub gev_sigma: f64,
    pub gev_xi: f64,
    pub emit_dataset: bool,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            n_reps: 50,
            delta: 0.5,
            rho: 0.15,
            r: 1.0,
            alpha: 1.0,
            gev_mu: 2.0,
            gev_sigma: 1.0,
            gev_xi: 0.1,
            emit_dataset: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnoseSection {
    pub u_levels: Vec<f64>,
    pub n_bins: usize,
    /// Bin ceiling; absent uses half the domain diameter.
    pub h_max: Option<f64>,
    /// Report distances in km (requires projected sites).
    pub use_km: bool,
}

impl Default for DiagnoseSection {
    fn default() -> Self {
        Self {
            u_levels: vec![0.9, 0.95, 0.99],
            n_bins: 20,
            h_max: None,
            use_km: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExceedanceSection {
    /// Cluster of interest; empty means every site.
    pub site_ids: Vec<String>,
    /// Per-site threshold quantile of the observed series.
    pub quantile: f64,
    /// The two years compared (a, b).
    pub year_a: i32,
    pub year_b: i32,
    /// Posterior draws used (thinned from the chains).
    pub n_posterior: usize,
    /// Field simulations per posterior draw.
    pub n_draws: usize,
    /// Use the analytic independence product instead of simulation.
    pub analytic_independence: bool,
}

impl Default for ExceedanceSection {
    fn default() -> Self {
        Self {
            site_ids: Vec::new(),
            quantile: 0.9,
            year_a: 1972,
            year_b: 2021,
            n_posterior: 200,
            n_draws: 10_000,
            analytic_independence: false,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: RunConfig = toml::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.model.m_neighbors == 0 {
            bail!("model.m_neighbors must be at least 1");
        }
        if let Some(q) = self.data.censor_quantile {
            if !(0.0..1.0).contains(&q) {
                bail!("data.censor_quantile must be in [0, 1)");
            }
        }
        if !(0.0..=1.0).contains(&self.simulate.delta) {
            bail!("simulate.delta must be in [0, 1]");
        }
        self.train.validate().map_err(anyhow::Error::from)?;
        Ok(())
    }

    /// Serialize the fully resolved configuration.
    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    /// Write the resolved snapshot next to the outputs and return its hash.
    pub fn write_snapshot(&self, out_dir: &Path) -> Result<String> {
        let text = self.to_toml()?;
        std::fs::create_dir_all(out_dir)?;
        std::fs::write(out_dir.join("resolved-config.toml"), &text)?;
        Ok(crate::manifest::sha256_hex(text.as_bytes()))
    }
}
