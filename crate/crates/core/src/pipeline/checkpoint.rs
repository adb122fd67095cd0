use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Networks, TrainConfig};
use crate::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Trained parameters with the configuration that produced them. Stored as
/// JSON; floats are written in shortest round-trip form, so a reload is
/// bit-exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: TrainConfig,
    pub iteration: usize,
    /// Seed of the training RNG streams; together with the iteration this
    /// pins the sampler state.
    pub rng_seed: u64,
    pub dataset_seed: u64,
    pub train_object_ids: Vec<u32>,
    pub networks: Networks,
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    let text = serde_json::to_string(checkpoint).map_err(|e| Error::format(None, e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads a checkpoint; anything short of a complete, current-version
/// document is a format error.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::format(None, format!("checkpoint: {e}")))?;
    let version = value.get("format_version").and_then(|v| v.as_u64());
    if version != Some(CHECKPOINT_VERSION as u64) {
        return Err(Error::format(
            None,
            format!("checkpoint version {version:?}, expected {CHECKPOINT_VERSION}"),
        ));
    }
    let ckpt: Checkpoint =
        serde_json::from_value(value).map_err(|e| Error::format(None, format!("checkpoint: {e}")))?;
    ckpt.config.validate()?;
    if ckpt.networks.decoder.kind() != ckpt.config.decoder || ckpt.networks.aggregation != ckpt.config.aggregation {
        return Err(Error::format(None, "checkpoint networks disagree with its config"));
    }
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::DecoderKind;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Checkpoint {
        let config = TrainConfig {
            hidden: 8,
            decoder: DecoderKind::Gnn,
            ..TrainConfig::default()
        };
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            networks: Networks::new(&config, &mut ChaCha8Rng::seed_from_u64(4)).unwrap(),
            config,
            iteration: 7,
            rng_seed: 3,
            dataset_seed: 11,
            train_object_ids: vec![0, 1, 2],
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let ckpt = sample();
        save_checkpoint(&ckpt, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), ckpt);
    }

    #[test]
    fn truncated_or_wrong_version_fails() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        save_checkpoint(&sample(), &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        fs::write(&path, &text[..text.len() / 2]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Format { .. })));

        let mut ckpt = sample();
        ckpt.format_version = 99;
        save_checkpoint(&ckpt, &path).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Format { .. })));
    }
}
