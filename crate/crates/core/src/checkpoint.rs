//! Versioned model checkpoints: network shape, θ, optimizer state, graph
//! construction settings, and a hash of the training configuration.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{CoreError, Result};
use crate::mpn::{MpnModel, ReadoutMode};
use crate::neural::ParamStore;
use crate::training::TrainConfig;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Graph construction settings a tracker was trained with.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphSettings {
    /// Maximum frame gap Δ for detection-graph links.
    pub delta: u32,
    /// Gate radius per frame of gap, length units per frame.
    pub gate_speed: f64,
}

/// A trained tracker ready for inference.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub readout: ReadoutMode,
    pub model: MpnModel,
    pub store: ParamStore,
    pub graph: GraphSettings,
    pub c_en: f64,
    pub c_ex: f64,
    /// ReID width (informative + noise dims) the model expects.
    pub reid_dim: usize,
    /// SHA-256 of the resolved training configuration JSON.
    pub train_config_hash: String,
    pub train_config: Option<TrainConfig>,
    /// Minimum path length for belief-mode extraction.
    pub min_path_len: usize,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(json: &str) -> Result<Checkpoint> {
        let c: Checkpoint = serde_json::from_str(json)?;
        if c.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(CoreError::Incompatible(format!(
                "checkpoint format_version {} (expected {})",
                c.format_version, CHECKPOINT_FORMAT_VERSION
            )));
        }
        if c.store.len() != c.model.components().iter().map(|(_, s)| s.param_count()).sum::<usize>()
        {
            return Err(CoreError::Incompatible(
                "checkpoint parameter vector does not match the model shape".into(),
            ));
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        Checkpoint::from_json(&std::fs::read_to_string(path)?)
    }

    /// Check the checkpoint against a scenario's feature dimensions.
    pub fn check_compatible(&self, reid_dim: usize) -> Result<()> {
        if reid_dim != self.reid_dim {
            return Err(CoreError::Incompatible(format!(
                "scenario carries {reid_dim} reid dims, checkpoint expects {}",
                self.reid_dim
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mpn::MpnConfig;

    fn checkpoint() -> Checkpoint {
        let model = MpnModel::new(
            MpnConfig {
                num_layers: 2,
                hidden_dim: 8,
                readout: ReadoutMode::Cost,
            },
            2,
        );
        let store = model.init_params(4);
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            readout: ReadoutMode::Cost,
            model,
            store,
            graph: GraphSettings {
                delta: 1,
                gate_speed: 2.0,
            },
            c_en: 1.0,
            c_ex: 1.0,
            reid_dim: 2,
            train_config_hash: "deadbeef".into(),
            train_config: None,
            min_path_len: 3,
        }
    }

    #[test]
    fn round_trips_theta_bit_exactly() {
        let c = checkpoint();
        let json = c.to_json().unwrap();
        let back = Checkpoint::from_json(&json).unwrap();
        for (a, b) in c.store.theta().iter().zip(back.store.theta()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(back.graph, c.graph);
    }

    #[test]
    fn incompatible_reid_width_is_rejected() {
        let c = checkpoint();
        assert!(c.check_compatible(2).is_ok());
        assert!(c.check_compatible(12).is_err());
    }

    #[test]
    fn wrong_version_is_rejected() {
        let c = checkpoint();
        let mut json = serde_json::to_value(&c).unwrap();
        json["format_version"] = serde_json::json!(99);
        assert!(Checkpoint::from_json(&json.to_string()).is_err());
    }
}
