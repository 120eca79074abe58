//! Versioned JSON checkpoints.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::net::model::Model;

pub const CHECKPOINT_FORMAT: &str = "cfnet-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Envelope {
    format: String,
    version: u32,
    config_hash: String,
    model: Model,
}

/// Hex SHA-256 of the model's architecture and filter settings.
pub fn config_hash(model: &Model) -> String {
    let text = serde_json::to_string(&(&model.config, &model.cf)).expect("config serializes");
    Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn checkpoint_to_string(model: &Model) -> Result<String> {
    model.validate()?;
    let env = Envelope {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        config_hash: config_hash(model),
        model: model.clone(),
    };
    serde_json::to_string_pretty(&env).map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn checkpoint_from_str(text: &str) -> Result<Model> {
    let env: Envelope =
        serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if env.format != CHECKPOINT_FORMAT {
        return Err(Error::Checkpoint(format!("unknown format {:?}", env.format)));
    }
    if env.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "version {} (expected {CHECKPOINT_VERSION})",
            env.version
        )));
    }
    env.model
        .validate()
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    if config_hash(&env.model) != env.config_hash {
        return Err(Error::Checkpoint("config hash mismatch".into()));
    }
    Ok(env.model)
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    write_atomic(path, checkpoint_to_string(model)?.as_bytes())
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    checkpoint_from_str(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::model::NetConfig;

    #[test]
    fn round_trip_is_exact() {
        let model = Model::init(NetConfig::default(), 7).unwrap();
        let text = checkpoint_to_string(&model).unwrap();
        assert_eq!(checkpoint_from_str(&text).unwrap(), model);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        save_checkpoint(&model, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), model);
    }

    #[test]
    fn tampering_is_detected() {
        let model = Model::init(NetConfig::default(), 7).unwrap();
        let text = checkpoint_to_string(&model).unwrap();
        let bumped = text.replace("\"version\": 1", "\"version\": 2");
        assert!(matches!(checkpoint_from_str(&bumped), Err(Error::Checkpoint(_))));
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["config_hash"] = "00".into();
        assert!(checkpoint_from_str(&v.to_string()).is_err());
        v = serde_json::from_str(&text).unwrap();
        v["model"]["features"]["biases"] = serde_json::json!([0.0]);
        assert!(checkpoint_from_str(&v.to_string()).is_err());
        assert!(checkpoint_from_str("not json").is_err());
    }
}
