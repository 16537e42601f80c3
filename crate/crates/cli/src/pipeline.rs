//! Shared plumbing between subcommands: pipeline directory conventions,
//! site/graph construction, net loading, chain CSV IO, and reconstruction
//! of parameter states from stored samples.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use pmm::geo::{build_neighbor_sets, order_sites, site_set_from_unit_square};
use pmm::mcmc::{ChainOutput, MarginalModel};
use pmm::procsim::{replicate_rng, ModelVariant, SpatialParams};
use pmm::spqr::{DesignDistribution, ParamDraw, SpqrNet};
use pmm::surrogate::{ConditionalSet, Dataset};
use pmm::{GevSiteParams, NeighborGraph, SiteSet};

pub const NETS_DIR: &str = "nets";
pub const CHAINS_DIR: &str = "chains";
pub const DIAG_DIR: &str = "diag";

/// Everything `fit` must share with `train`: the exact site scaling,
/// ordering, conditioning sets, and the design the nets were trained under.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphArtifact {
    pub sites: SiteSet,
    pub graph: NeighborGraph,
    pub variant: ModelVariant,
    pub design: DesignDistribution,
    pub global: bool,
}

impl GraphArtifact {
    pub fn save(&self, nets_dir: &Path) -> Result<()> {
        std::fs::create_dir_all(nets_dir)?;
        std::fs::write(
            nets_dir.join("graph.json"),
            serde_json::to_string_pretty(self)?,
        )?;
        Ok(())
    }

    pub fn load(nets_dir: &Path) -> Result<Self> {
        let path = nets_dir.join("graph.json");
        let text = std::fs::read_to_string(&path).with_context(|| {
            format!(
                "reading {}; run `pmm train` first to produce the nets directory",
                path.display()
            )
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn coords_by_visit(&self) -> Vec<[f64; 2]> {
        self.graph
            .order
            .iter()
            .map(|&i| self.sites.scaled[i])
            .collect()
    }
}

/// Random unit-square sites for pure simulation studies.
pub fn random_sites(n: usize, seed: u64) -> Result<SiteSet> {
    let mut rng = replicate_rng(seed, 0);
    let coords: Vec<[f64; 2]> = (0..n).map(|_| [rng.gen(), rng.gen()]).collect();
    Ok(site_set_from_unit_square(coords)?)
}

pub fn build_graph(sites: &SiteSet, m: usize) -> Result<NeighborGraph> {
    let order = order_sites(sites);
    Ok(build_neighbor_sets(sites, &order, m)?)
}

/// Sites either from the configured data CSV or randomly generated.
pub fn sites_from_config(cfg: &RunConfig) -> Result<(SiteSet, Option<Dataset>)> {
    if cfg.data.csv.is_some() {
        let (dataset, _, _) = crate::ingest::load_dataset(&cfg.data)?;
        Ok((dataset.sites.clone(), Some(dataset)))
    } else {
        Ok((random_sites(cfg.sites.n_random, cfg.sites.seed)?, None))
    }
}

/// Load the per-site (or global) nets for every site after the first.
pub fn load_conditionals(nets_dir: &Path, artifact: &GraphArtifact) -> Result<ConditionalSet> {
    let n = artifact.graph.n_sites();
    if artifact.global {
        let net = SpqrNet::load(&nets_dir.join("global.json"))?;
        let by_visit = artifact.coords_by_visit();
        let conds: Vec<Box<dyn pmm::surrogate::SiteConditional>> = (1..n)
            .map(|k| {
                let offsets: Vec<[f64; 2]> = artifact.graph.neighbors[k]
                    .iter()
                    .map(|&j| {
                        [
                            by_visit[j][0] - by_visit[k][0],
                            by_visit[j][1] - by_visit[k][1],
                        ]
                    })
                    .collect();
                Box::new(pmm::surrogate::GlobalNetConditional {
                    net: net.clone(),
                    offsets,
                }) as Box<dyn pmm::surrogate::SiteConditional>
            })
            .collect();
        Ok(ConditionalSet::new(conds))
    } else {
        let mut nets = Vec::with_capacity(n - 1);
        for k in 1..n {
            let path = nets_dir.join(format!("site_{k:04}.json"));
            let net = SpqrNet::load(&path).with_context(|| {
                format!(
                    "loading {}; run `pmm train` to produce per-site nets",
                    path.display()
                )
            })?;
            nets.push(net);
        }
        Ok(ConditionalSet::from_nets(nets))
    }
}

/// The trained nets must carry exactly the parameter features the sampler
/// will vary.
pub fn check_design_compatibility(artifact: &GraphArtifact, cfg: &RunConfig) -> Result<()> {
    if artifact.design != cfg.design {
        bail!(
            "the nets were trained under a different design distribution; \
             retrain or align [design] in the config"
        );
    }
    if artifact.variant != cfg.model.variant {
        bail!(
            "the nets were trained for variant {:?}, config asks for {:?}",
            artifact.variant,
            cfg.model.variant
        );
    }
    Ok(())
}

/// Write one chain as CSV: iteration, log_posterior, then one column per
/// parameter named exactly as sampled.
pub fn write_chain_csv(path: &Path, output: &ChainOutput, thin: usize, burn_in: usize) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["iteration".to_string(), "log_posterior".to_string()];
    header.extend(output.names.iter().cloned());
    w.write_record(&header)?;
    for (row_idx, draw) in output.samples.iter().enumerate() {
        let iter_no = burn_in + row_idx * thin;
        let mut row = vec![iter_no.to_string(), output.log_posterior[row_idx].to_string()];
        row.extend(draw.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a chain CSV back into names + draws (dropping the bookkeeping
/// columns).
pub fn read_chain_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::Reader::from_path(path)?;
    let names: Vec<String> = r
        .headers()?
        .iter()
        .skip(2)
        .map(|s| s.to_string())
        .collect();
    let mut draws = Vec::new();
    for row in r.records() {
        let row = row?;
        let vals: Vec<f64> = row
            .iter()
            .skip(2)
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()?;
        draws.push(vals);
    }
    Ok((names, draws))
}

/// Tidy long-format diagnostics row.
pub fn tidy_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["estimator", "level", "bin_lo", "bin_hi", "value", "se", "count"])?;
    Ok(w)
}

/// Rebuild the spatial parameter block from one stored draw.
pub fn spat_from_sample(
    names: &[String],
    draw: &[f64],
    design: &DesignDistribution,
    variant: ModelVariant,
) -> Result<SpatialParams> {
    let get = |name: &str| -> Option<f64> {
        names.iter().position(|n| n == name).map(|i| draw[i])
    };
    let delta = match variant.pinned_delta() {
        Some(d) => d,
        None => get("delta").unwrap_or(match design.delta {
            ParamDraw::Fixed(v) => v,
            ParamDraw::Uniform { .. } => {
                bail!("delta neither sampled nor fixed by the design")
            }
        }),
    };
    let rho = get("rho").unwrap_or(match design.rho {
        ParamDraw::Fixed(v) => v,
        ParamDraw::Uniform { lo, hi } => (lo + hi) / 2.0,
    });
    let r = get("r").unwrap_or(match design.r {
        ParamDraw::Fixed(v) => v,
        ParamDraw::Uniform { .. } => bail!("r neither sampled nor fixed by the design"),
    });
    Ok(SpatialParams::tied(delta, rho, design.alpha, r)?)
}

/// Rebuild per-site margins from one stored draw.
pub fn margins_from_sample(
    names: &[String],
    draw: &[f64],
    model: MarginalModel,
    sites: &SiteSet,
    fixed: Option<&GevSiteParams>,
) -> Result<GevSiteParams> {
    let n = sites.n_sites();
    let get = |name: &str| -> Result<f64> {
        names
            .iter()
            .position(|x| x == name)
            .map(|i| draw[i])
            .ok_or_else(|| anyhow!("parameter {name} not found in chain output"))
    };
    match model {
        MarginalModel::Fixed => fixed
            .cloned()
            .ok_or_else(|| anyhow!("fixed margins required but not supplied")),
        MarginalModel::SharedConstant => {
            let mu = get("mu")?;
            let ls = get("log_sigma")?;
            let xi = get("xi")?;
            Ok(GevSiteParams {
                mu0: vec![mu; n],
                mu1: vec![0.0; n],
                log_sigma: vec![ls; n],
                xi: vec![xi; n],
            })
        }
        MarginalModel::SharedTrend => {
            let mu0 = get("mu0")?;
            let mu1 = get("mu1")?;
            let ls = get("log_sigma")?;
            let xi = get("xi")?;
            Ok(GevSiteParams {
                mu0: vec![mu0; n],
                mu1: vec![mu1; n],
                log_sigma: vec![ls; n],
                xi: vec![xi; n],
            })
        }
        MarginalModel::Stvc => {
            let mut out = GevSiteParams {
                mu0: vec![0.0; n],
                mu1: vec![0.0; n],
                log_sigma: vec![0.0; n],
                xi: vec![0.0; n],
            };
            for (i, id) in sites.ids.iter().enumerate() {
                out.mu0[i] = get(&format!("mu0[{id}]"))?;
                out.mu1[i] = get(&format!("mu1[{id}]"))?;
                out.log_sigma[i] = get(&format!("log_sigma[{id}]"))?;
                out.xi[i] = get(&format!("xi[{id}]"))?;
            }
            Ok(out)
        }
    }
}

pub fn ensure_dir(path: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(path)?;
    Ok(path.to_path_buf())
}
