use std::fs::{self, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::save_checkpoint;
use super::config::RunConfig;
use crate::diffcore::{Optimizer, Tape};
use crate::error::{Error, Result};
use crate::evalkit::TaskSetting;
use crate::graphmodel::GraphModel;
use crate::scenegen::{augment, Sample};
use crate::supervision::{image_loss, LossBundle, Truncation};

/// One line of the JSONL loss log: the component means over the interval
/// ending at `step` (1-based count of optimizer steps taken).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogLine {
    pub step: usize,
    pub lr: f64,
    pub images: usize,
    #[serde(flatten)]
    pub loss: LossBundle,
    pub truncated: Truncation,
}

/// Stateful training loop over an in-memory training set.
pub struct Trainer<'a> {
    cfg: &'a RunConfig,
    data: &'a [Sample],
    pub model: GraphModel<f32>,
    optimizer: Optimizer<f32>,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    step: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: &'a RunConfig, data: &'a [Sample]) -> Result<Self> {
        cfg.validate()?;
        if data.is_empty() {
            return Err(Error::Invalid("empty training set".into()));
        }
        Ok(Trainer {
            cfg,
            data,
            model: GraphModel::build(&cfg.model, cfg.seeds.init)?,
            optimizer: Optimizer::new(cfg.optimizer),
            rng: ChaCha8Rng::seed_from_u64(cfg.seeds.train),
            order: Vec::new(),
            cursor: 0,
            step: 0,
        })
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// Next training index; the set is reshuffled at every epoch boundary.
    fn next_index(&mut self) -> usize {
        if self.cursor == self.order.len() {
            self.order = (0..self.data.len()).collect();
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        self.cursor += 1;
        self.order[self.cursor - 1]
    }

    /// Runs one optimizer step over `batch_size` images and returns the
    /// mean loss bundle and summed truncation counts.
    pub fn step(&mut self) -> Result<(LossBundle, Truncation)> {
        let cfg = self.cfg;
        let mut bundles = Vec::with_capacity(cfg.train.batch_size);
        let mut truncated = Truncation::default();
        for _ in 0..cfg.train.batch_size {
            let sample = &self.data[self.next_index()];
            let aug_seed: u64 = self.rng.gen();
            let (image, graph) = if cfg.train.augment {
                augment(&sample.image, &sample.graph, &cfg.augment, cfg.model.stride, aug_seed)
            } else {
                (sample.image.clone(), sample.graph.clone())
            };
            let prior = if self.rng.gen_bool(cfg.train.prior_dropout) {
                None
            } else if self.rng.gen_bool(0.5) {
                TaskSetting::SgCls.prior(&graph, &cfg.model)
            } else {
                TaskSetting::PredCls.prior(&graph, &cfg.model)
            };
            let loss_seed: u64 = self.rng.gen();

            let tape = Tape::new();
            let x = tape.constant(image.to_tensor());
            let p = prior.map(|t| tape.constant(t));
            let diverged = Error::NonFiniteLoss { step: self.step };
            let loss = match image_loss(&tape, &self.model, x, p, &graph, &cfg.loss, loss_seed) {
                Err(Error::NonFinite(_)) => return Err(diverged),
                other => other?,
            };
            if !loss.bundle.total.is_finite() {
                return Err(diverged);
            }
            tape.backward_into(loss.total, self.model.params_mut())?;
            bundles.push(loss.bundle);
            truncated.vertices += loss.truncated.vertices;
            truncated.edges += loss.truncated.edges;
        }
        let params = self.model.params_mut();
        params.scale_grad(1.0 / cfg.train.batch_size as f32);
        match self.optimizer.step_scaled(params, cfg.lr_scale(self.step)) {
            Err(Error::NonFiniteGradient { .. }) => return Err(Error::NonFiniteLoss { step: self.step }),
            other => other?,
        }
        self.step += 1;
        Ok((LossBundle::mean(&bundles), truncated))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub steps: usize,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    /// Mean bundle over the last logging interval.
    pub last: LossBundle,
    pub seconds: f64,
}

pub const CHECKPOINT_FILE: &str = "model.pxgc";
pub const LOG_FILE: &str = "loss.jsonl";

/// Trains for `cfg.train.steps` steps, writing the loss log, periodic
/// checkpoints and the final checkpoint under `out_dir`.
pub fn train(
    cfg: &RunConfig,
    data: &[Sample],
    out_dir: &Path,
    on_log: impl FnMut(&LogLine),
) -> Result<TrainOutcome> {
    Trainer::new(cfg, data)?.run(cfg.train.steps, out_dir, on_log)
}

impl Trainer<'_> {
    /// Continues training until `until` optimizer steps have been taken.
    /// The loss log is appended to unless this is a fresh run. A non-finite
    /// loss stops the run with its step index and leaves the last
    /// checkpoint on disk untouched.
    pub fn run(&mut self, until: usize, out_dir: &Path, mut on_log: impl FnMut(&LogLine)) -> Result<TrainOutcome> {
        let cfg = self.cfg;
        let start = Instant::now();
        fs::create_dir_all(out_dir)?;
        fs::write(out_dir.join("config.json"), cfg.to_json()?)?;
        let checkpoint = out_dir.join(CHECKPOINT_FILE);
        let log_path = out_dir.join(LOG_FILE);
        let file = OpenOptions::new()
            .create(true)
            .append(self.step > 0)
            .write(true)
            .truncate(self.step == 0)
            .open(&log_path)?;
        let mut log = BufWriter::new(file);

        let mut interval = Vec::new();
        let mut truncated = Truncation::default();
        let mut last = LossBundle::default();
        while self.step < until {
            let lr = cfg.optimizer.lr() * cfg.lr_scale(self.step);
            let (bundle, t) = match self.step() {
                Ok(r) => r,
                Err(e) => {
                    log.flush()?;
                    return Err(e);
                }
            };
            interval.push(bundle);
            truncated.vertices += t.vertices;
            truncated.edges += t.edges;
            let done = self.step;
            if done % cfg.train.log_every == 0 || done == until {
                last = LossBundle::mean(&interval);
                let line = LogLine {
                    step: done,
                    lr,
                    images: interval.len() * cfg.train.batch_size,
                    loss: last,
                    truncated,
                };
                serde_json::to_writer(&mut log, &line)?;
                log.write_all(b"\n")?;
                on_log(&line);
                interval.clear();
                truncated = Truncation::default();
            }
            if cfg.train.checkpoint_every > 0 && done % cfg.train.checkpoint_every == 0 && done != until {
                log.flush()?;
                save_checkpoint(&self.model, done, &checkpoint)?;
            }
        }
        log.flush()?;
        save_checkpoint(&self.model, self.step, &checkpoint)?;
        Ok(TrainOutcome {
            steps: self.step,
            checkpoint,
            log: log_path,
            last,
            seconds: start.elapsed().as_secs_f64(),
        })
    }
}

/// Parses a JSONL loss log.
pub fn read_log(path: &Path) -> Result<Vec<LogLine>> {
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}
