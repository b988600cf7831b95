//! Self-describing JSON checkpoints: model, config, and optimiser state.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::network::NetworkModel;
use crate::training::{AdamState, TrainConfig};

pub const FORMAT: &str = "alphasnn-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint: {0}")]
    Format(String),
    #[error("checkpoint has an invalid model: {0}")]
    Model(#[from] crate::network::ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub model: NetworkModel,
    #[serde(default)]
    pub config: Option<TrainConfig>,
    #[serde(default)]
    pub optimizer: Option<AdamState>,
    #[serde(default)]
    pub epochs_completed: usize,
}

impl Checkpoint {
    pub fn new(model: NetworkModel) -> Self {
        Checkpoint {
            format: FORMAT.to_string(),
            version: VERSION,
            model,
            config: None,
            optimizer: None,
            epochs_completed: 0,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("checkpoint serialises");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, CheckpointError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| CheckpointError::Format(e.to_string()))?;
        match value.get("format").and_then(|f| f.as_str()) {
            Some(FORMAT) => {}
            Some(other) => return Err(CheckpointError::Format(format!("format '{other}'"))),
            None => return Err(CheckpointError::Format("missing format field".into())),
        }
        match value.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == VERSION as u64 => {}
            v => return Err(CheckpointError::Format(format!("unsupported version {v:?}"))),
        }
        let ck: Checkpoint = serde_json::from_value(value).map_err(|e| CheckpointError::Format(e.to_string()))?;
        ck.model.validate()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_json()).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let text = std::fs::read_to_string(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::init_model;
    use crate::training::TrainConfig;

    fn sample() -> Checkpoint {
        let cfg = TrainConfig::mnist_chosen();
        let model = init_model(&cfg.model_spec(6, 3)).unwrap();
        let mut ck = Checkpoint::new(model.clone());
        ck.optimizer = Some(AdamState::new(&model));
        ck.config = Some(cfg);
        ck.epochs_completed = 4;
        ck
    }

    #[test]
    fn exact_roundtrip() {
        let ck = sample();
        let back = Checkpoint::from_json(&ck.to_json()).unwrap();
        assert_eq!(back, ck);
        let bits = |c: &Checkpoint| -> Vec<u64> {
            c.model.layers.iter().flat_map(|l| &l.weights).map(|w| w.to_bits()).collect()
        };
        assert_eq!(bits(&back), bits(&ck));
        assert_eq!(back.to_json(), ck.to_json());
    }

    #[test]
    fn rejects_foreign_documents() {
        assert!(matches!(Checkpoint::from_json("[1,2]"), Err(CheckpointError::Format(_))));
        assert!(matches!(Checkpoint::from_json("not json"), Err(CheckpointError::Format(_))));
        let text = sample().to_json().replace(FORMAT, "something-else");
        assert!(matches!(Checkpoint::from_json(&text), Err(CheckpointError::Format(_))));
        let text = sample().to_json().replace("\"version\": 1", "\"version\": 99");
        assert!(matches!(Checkpoint::from_json(&text), Err(CheckpointError::Format(_))));
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let ck = sample();
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
        assert!(matches!(
            Checkpoint::load(&dir.path().join("missing.json")),
            Err(CheckpointError::Io { .. })
        ));
    }
}
