//! Semi-parametric density regression: M-spline mixture densities whose
//! weights come from a feed-forward softmax network, trained by maximum
//! likelihood on synthetic draws, plus accumulated-local-effects variable
//! importance.

mod ale;
mod basis;
mod features;
mod net;
mod train;

pub use ale::{ale_and_vi, AleCurve};
pub use basis::SplineBasis;
pub use features::{
    DesignDistribution, FeatureLayout, NeighborScale, ParamDraw, ThetaFeature, PAD_OFFSET,
};
pub use net::{Activation, Gradients, SpqrNet, NET_FORMAT_VERSION, RESPONSE_CLAMP};
pub use train::{
    fit_net, generate_local_data, train_global, train_local, TrainConfig, TrainData, TrainReport,
    TrainedNet,
};

use crate::error::{Error, Result};

impl SpqrNet {
    /// Serialize to the versioned JSON container.
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    /// Deserialize, rejecting unknown format versions.
    pub fn from_json(s: &str) -> Result<Self> {
        let net: SpqrNet =
            serde_json::from_str(s).map_err(|e| Error::Serialization(e.to_string()))?;
        if net.version != NET_FORMAT_VERSION {
            return Err(Error::Serialization(format!(
                "unsupported net format version {} (expected {})",
                net.version, NET_FORMAT_VERSION
            )));
        }
        if net.layers.len() < 2 || *net.layers.last().unwrap() != net.basis.k_basis {
            return Err(Error::Serialization(
                "inconsistent layer sizes in serialized net".into(),
            ));
        }
        for (l, w) in net.weights.iter().enumerate() {
            if w.nrows() != net.layers[l + 1] || w.ncols() != net.layers[l] {
                return Err(Error::Serialization(format!(
                    "weight matrix {l} has shape {:?}, expected ({}, {})",
                    w.dim(),
                    net.layers[l + 1],
                    net.layers[l]
                )));
            }
        }
        Ok(net)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
