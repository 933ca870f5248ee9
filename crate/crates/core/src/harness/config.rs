use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::decoder::DecodeConfig;
use crate::diffcore::OptimizerConfig;
use crate::error::{Error, Result};
use crate::graphmodel::ModelConfig;
use crate::scenegen::{AugmentConfig, WorldConfig};
use crate::supervision::LossConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    /// Images whose gradients are accumulated per optimizer step.
    pub batch_size: usize,
    /// Fraction of the run, at the end, over which the learning rate decays
    /// linearly to `final_lr_fraction` of its base value.
    pub decay_fraction: f64,
    pub final_lr_fraction: f64,
    /// Probability of training an image without prior input.
    pub prior_dropout: f64,
    pub augment: bool,
    /// Steps per loss-log line; each line averages its interval.
    pub log_every: usize,
    /// Steps between checkpoints; 0 writes only the final one.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 110_000,
            batch_size: 1,
            decay_fraction: 0.3,
            final_lr_fraction: 0.05,
            prior_dropout: 0.5,
            augment: true,
            log_every: 1,
            checkpoint_every: 10_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train_scenes: usize,
    pub eval_scenes: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train_scenes: 2000,
            eval_scenes: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub data: u64,
    pub eval_data: u64,
    pub init: u64,
    pub train: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds {
            data: 1,
            eval_data: 2,
            init: 3,
            train: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub train_dir: PathBuf,
    pub eval_dir: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            train_dir: PathBuf::from("data/train"),
            eval_dir: PathBuf::from("data/eval"),
            out_dir: PathBuf::from("runs/default"),
        }
    }
}

/// Everything that determines a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub world: WorldConfig,
    pub augment: AugmentConfig,
    pub optimizer: OptimizerConfig,
    pub train: TrainConfig,
    pub loss: LossConfig,
    pub decode: DecodeConfig,
    pub data: DataConfig,
    pub seeds: Seeds,
    pub paths: Paths,
    pub ks: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            world: WorldConfig::default(),
            augment: AugmentConfig::default(),
            optimizer: OptimizerConfig::adam(1e-3),
            train: TrainConfig::default(),
            loss: LossConfig::default(),
            decode: DecodeConfig::default(),
            data: DataConfig::default(),
            seeds: Seeds::default(),
            paths: Paths::default(),
            ks: vec![20, 50, 100],
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.world.validate()?;
        self.decode.validate()?;
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if (self.world.width, self.world.height) != (self.model.input_size, self.model.input_size) {
            return bad("world canvas must match the model input size");
        }
        if self.world.stride != self.model.stride {
            return bad("world and model strides differ");
        }
        if self.world.object_slots > self.model.object_slots || self.world.relation_slots > self.model.relation_slots {
            return bad("the world may not put more elements on a pixel than the model has slots");
        }
        if self.train.batch_size == 0 || self.train.log_every == 0 {
            return bad("batch_size and log_every must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.train.prior_dropout)
            || !(0.0..=1.0).contains(&self.train.decay_fraction)
            || !(0.0..=1.0).contains(&self.train.final_lr_fraction)
        {
            return bad("prior_dropout, decay_fraction and final_lr_fraction must lie in [0, 1]");
        }
        let lr = self.optimizer.lr();
        if !(lr.is_finite() && lr > 0.0) {
            return bad("learning rate must be finite and positive");
        }
        if self.loss.neg_ratio < 0.0 {
            return bad("neg_ratio must be >= 0");
        }
        if self.ks.is_empty() || self.ks.contains(&0) {
            return bad("ks must be non-empty and positive");
        }
        if self.data.train_scenes == 0 {
            return bad("train_scenes must be >= 1");
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Learning-rate multiplier at `step`.
    pub fn lr_scale(&self, step: usize) -> f64 {
        let t = &self.train;
        let decay_start = ((1.0 - t.decay_fraction) * t.steps as f64).floor() as usize;
        if step < decay_start || t.steps <= decay_start {
            return 1.0;
        }
        let progress = (step - decay_start) as f64 / (t.steps - decay_start) as f64;
        1.0 - progress * (1.0 - t.final_lr_fraction)
    }
}
