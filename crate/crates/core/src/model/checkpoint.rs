use std::path::Path;

use serde::{Deserialize, Serialize};

use super::train::{Model, TrainConfig};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Trained parameters with the configuration and seed that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub toolkit_version: String,
    pub seed: u64,
    pub steps_done: u64,
    pub skipped_steps: usize,
    pub config: TrainConfig,
    pub model: Model,
}

impl Checkpoint {
    pub fn new(model: Model, config: TrainConfig, steps_done: u64, skipped_steps: usize) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: config.seed,
            steps_done,
            skipped_steps,
            config,
            model,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        if c.version != CHECKPOINT_VERSION {
            return Err(Error::Parse(format!(
                "unsupported checkpoint version {}",
                c.version
            )));
        }
        c.model.detector.validate()?;
        c.model.mask_head.validate()?;
        Ok(c)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let cfg = TrainConfig::default();
        let mut model = Model::initial(128, 128, cfg.cells, 3);
        model.detector.theta[4] = 0.1 + 0.2;
        let c = Checkpoint::new(model, cfg, 17, 1);
        let back = Checkpoint::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_other_versions_and_truncated_params() {
        let cfg = TrainConfig::default();
        let mut c = Checkpoint::new(Model::initial(64, 64, cfg.cells, 1), cfg, 0, 0);
        c.version = 99;
        assert!(Checkpoint::from_json(&c.to_json()).is_err());
        c.version = CHECKPOINT_VERSION;
        c.model.detector.theta.pop();
        assert!(Checkpoint::from_json(&c.to_json()).is_err());
    }
}
