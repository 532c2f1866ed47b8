use std::collections::VecDeque;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, RngState};
use super::optim::{clip_gradients, lr_at, Adam, AdamConfig, ClipMode};
use crate::data::{make_episode, Dataset};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::tensor::Tensor;

pub const METRICS_HEADER: &str = "step,loss,acc,lr";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    /// Episodes per step.
    pub batch: usize,
    pub lr: f64,
    pub decay: f64,
    pub clip: f64,
    pub clip_mode: ClipMode,
    pub adam: AdamConfig,
    pub epochs: usize,
    /// Episodes per epoch; the decay exponent counts steps over
    /// `ceil(epoch_episodes / batch)`.
    pub epoch_episodes: usize,
    /// Stop after this many epochs without a lower mean loss; 0 disables.
    pub patience: usize,
    /// Write a checkpoint every this many steps; 0 writes only the last.
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            batch: 8,
            lr: 0.001,
            decay: 0.88,
            clip: 100.0,
            clip_mode: ClipMode::SumOfNorms,
            adam: AdamConfig::default(),
            epochs: 50,
            epoch_episodes: 8000,
            patience: 0,
            checkpoint_every: 0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch", self.batch),
            ("epochs", self.epochs),
            ("epoch_episodes", self.epoch_episodes),
            ("classes", self.model.classes),
            ("hidden", self.model.comparator.hidden),
            ("glimpses", self.model.comparator.glimpses),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{k} must be positive")));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(Error::Config(format!("decay must lie in (0, 1), got {}", self.decay)));
        }
        if !(self.clip > 0.0) {
            return Err(Error::Config(format!("clip must be positive, got {}", self.clip)));
        }
        let a = &self.adam;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return Err(Error::Config("adam betas must lie in [0, 1) and eps be positive".into()));
        }
        if !(0.0..1.0).contains(&self.model.comparator.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        self.model.encoder.output_side()?;
        Ok(())
    }

    pub fn steps_per_epoch(&self) -> u64 {
        self.epoch_episodes.div_ceil(self.batch) as u64
    }
}

/// Batch means for one update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    /// Steps completed including this one.
    pub step: u64,
    pub loss: f64,
    pub acc: f64,
    pub lr: f64,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
}

impl StepStats {
    pub fn log_line(&self) -> String {
        format!("{},{},{},{}", self.step, self.loss, self.acc, self.lr)
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Directory for `metrics.csv` and checkpoints.
    pub out_dir: Option<PathBuf>,
    pub max_steps: Option<u64>,
    /// Stop once an epoch's mean training accuracy reaches this.
    pub stop_accuracy: Option<f64>,
    /// Judge `stop_accuracy` on the mean of the last this-many steps,
    /// checked every step, instead of on whole epochs.
    pub accuracy_window: Option<u64>,
    pub time_limit: Option<Duration>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    Epochs,
    MaxSteps,
    Plateau,
    Accuracy,
    TimeLimit,
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub steps: u64,
    pub reason: StopReason,
    /// Mean loss and accuracy over the last full or partial epoch.
    pub last_loss: f64,
    pub last_acc: f64,
    pub checkpoint: Option<PathBuf>,
    pub elapsed: Duration,
}

pub struct Trainer {
    cfg: TrainConfig,
    model: Model,
    adam: Adam,
    rng: ChaCha8Rng,
    step: u64,
}

impl Trainer {
    /// Parameters and the episode stream are both drawn from `cfg.seed`.
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let model = Model::new(cfg.model.clone(), &mut rng)?;
        let adam = Adam::new(cfg.adam, model.store().tensors());
        Ok(Trainer { cfg, model, adam, rng, step: 0 })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.config.validate()?;
        let model = ck.model()?;
        let adam = Adam { cfg: ck.config.adam, t: ck.adam_t, m: ck.adam_m.clone(), v: ck.adam_v.clone() };
        Ok(Trainer { cfg: ck.config.clone(), model, adam, rng: ck.rng.restore(), step: ck.step })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.cfg.clone(),
            step: self.step,
            params: self.model.store().iter().map(|(n, t)| (n.to_string(), t.clone())).collect(),
            adam_t: self.adam.t,
            adam_m: self.adam.m.clone(),
            adam_v: self.adam.v.clone(),
            rng: RngState::capture(&self.rng),
        }
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    pub fn steps_done(&self) -> u64 {
        self.step
    }

    pub fn current_lr(&self) -> f64 {
        lr_at(self.step, self.cfg.steps_per_epoch(), self.cfg.lr, self.cfg.decay)
    }

    /// One update at the scheduled learning rate.
    pub fn step(&mut self, data: &Dataset) -> Result<StepStats> {
        let lr = self.current_lr();
        self.step_with_lr(data, lr)
    }

    /// Sample a batch of episodes, average their gradients in batch order,
    /// clip, and apply one Adam update at `lr`.
    pub fn step_with_lr(&mut self, data: &Dataset, lr: f64) -> Result<StepStats> {
        let classes = self.cfg.model.classes;
        let store = self.model.store();
        let mut sum: Vec<Tensor> = store.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for _ in 0..self.cfg.batch {
            let ep = make_episode(data, classes, &mut self.rng)?;
            let (g, p, out) = self.model.episode_loss(data, &ep, Some(&mut self.rng))?;
            let loss = g.value(out.loss).item();
            if !loss.is_finite() {
                return Err(Error::Training(format!("non-finite loss at step {}", self.step + 1)));
            }
            loss_sum += loss;
            if argmax(g.value(out.probs).data()) == ep.target {
                correct += 1;
            }
            let mut grads = g.backward(out.loss)?;
            for (acc, gr) in sum.iter_mut().zip(p.collect(&mut grads, store)) {
                acc.data_mut().iter_mut().zip(gr.data()).for_each(|(a, b)| *a += b);
            }
        }
        let n = self.cfg.batch as f64;
        for t in &mut sum {
            t.data_mut().iter_mut().for_each(|v| *v /= n);
        }
        let names: Vec<&str> = store.iter().map(|(name, _)| name).collect();
        let grad_norm = clip_gradients(&mut sum, &names, self.cfg.clip, self.cfg.clip_mode)?;
        self.adam.step(self.model.store_mut().tensors_mut(), &sum, lr)?;
        self.step += 1;
        Ok(StepStats { step: self.step, loss: loss_sum / n, acc: correct as f64 / n, lr, grad_norm })
    }

    /// Train until the epoch budget or an early-stop condition. Metrics go to
    /// `<out_dir>/metrics.csv`; checkpoints to `<out_dir>/step_<m>.ckpt`.
    pub fn run(
        &mut self,
        data: &Dataset,
        opts: &RunOptions,
        mut on_step: impl FnMut(&StepStats),
    ) -> Result<TrainSummary> {
        let start = Instant::now();
        let mut metrics = match &opts.out_dir {
            Some(dir) => {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                let path = dir.join("metrics.csv");
                let fresh = self.step == 0 || !path.exists();
                let file = fs::OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(&path)
                    .map_err(|e| Error::io(&path, e))?;
                let mut w = BufWriter::new(file);
                if fresh {
                    writeln!(w, "{METRICS_HEADER}").map_err(|e| Error::io(&path, e))?;
                }
                Some((w, path))
            }
            None => None,
        };
        let per_epoch = self.cfg.steps_per_epoch();
        let total = self.cfg.epochs as u64 * per_epoch;
        let mut last_ckpt: Option<PathBuf> = None;
        let (mut ep_loss, mut ep_acc, mut ep_steps) = (0.0, 0.0, 0u64);
        let (mut best, mut stale) = (f64::INFINITY, 0usize);
        let mut last = (f64::NAN, f64::NAN);
        let mut recent: VecDeque<(f64, f64)> = VecDeque::new();
        let reason = loop {
            if self.step >= total {
                break StopReason::Epochs;
            }
            if opts.max_steps.is_some_and(|m| self.step >= m) {
                break StopReason::MaxSteps;
            }
            if opts.time_limit.is_some_and(|t| start.elapsed() >= t) {
                break StopReason::TimeLimit;
            }
            let stats = match self.step(data) {
                Ok(s) => s,
                Err(Error::Training(msg)) => {
                    let at = last_ckpt
                        .as_ref()
                        .map_or_else(|| "none written".to_string(), |p| p.display().to_string());
                    return Err(Error::Training(format!("{msg}; last good checkpoint: {at}")));
                }
                Err(e) => return Err(e),
            };
            if let Some((w, path)) = &mut metrics {
                writeln!(w, "{}", stats.log_line()).map_err(|e| Error::io(&*path, e))?;
            }
            on_step(&stats);
            ep_loss += stats.loss;
            ep_acc += stats.acc;
            ep_steps += 1;
            last = (ep_loss / ep_steps as f64, ep_acc / ep_steps as f64);
            if let (Some(target), Some(w)) = (opts.stop_accuracy, opts.accuracy_window.filter(|&w| w > 0)) {
                recent.push_back((stats.loss, stats.acc));
                if recent.len() as u64 > w {
                    recent.pop_front();
                }
                let n = recent.len() as f64;
                let acc = recent.iter().map(|r| r.1).sum::<f64>() / n;
                if recent.len() as u64 == w && acc >= target {
                    last = (recent.iter().map(|r| r.0).sum::<f64>() / n, acc);
                    break StopReason::Accuracy;
                }
            }
            if let Some(dir) = &opts.out_dir {
                let every = self.cfg.checkpoint_every as u64;
                if every > 0 && self.step % every == 0 {
                    last_ckpt = Some(self.save_into(dir)?);
                }
            }
            if self.step % per_epoch == 0 {
                info!("epoch {} loss {:.4} acc {:.3}", self.step / per_epoch, last.0, last.1);
                (ep_loss, ep_acc, ep_steps) = (0.0, 0.0, 0);
                if opts.accuracy_window.is_none() && opts.stop_accuracy.is_some_and(|a| last.1 >= a) {
                    break StopReason::Accuracy;
                }
                if last.0 < best - 1e-4 {
                    (best, stale) = (last.0, 0);
                } else {
                    stale += 1;
                    if self.cfg.patience > 0 && stale >= self.cfg.patience {
                        break StopReason::Plateau;
                    }
                }
            }
        };
        if let Some((w, path)) = &mut metrics {
            w.flush().map_err(|e| Error::io(&*path, e))?;
        }
        if let Some(dir) = &opts.out_dir {
            let path = dir.join(format!("step_{:06}.ckpt", self.step));
            if last_ckpt.as_ref() != Some(&path) {
                last_ckpt = Some(self.save_into(dir)?);
            }
        }
        Ok(TrainSummary {
            steps: self.step,
            reason,
            last_loss: last.0,
            last_acc: last.1,
            checkpoint: last_ckpt,
            elapsed: start.elapsed(),
        })
    }

    fn save_into(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(format!("step_{:06}.ckpt", self.step));
        self.checkpoint().save(&path)?;
        let latest = dir.join("latest.ckpt");
        fs::copy(&path, &latest).map_err(|e| Error::io(&latest, e))?;
        Ok(path)
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Mean loss and accuracy over `episodes` dropout-free episodes drawn from
/// `seed`.
pub fn episode_accuracy(model: &Model, data: &Dataset, episodes: usize, seed: u64) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut loss, mut correct) = (0.0, 0usize);
    for _ in 0..episodes {
        let ep = make_episode(data, model.config().classes, &mut rng)?;
        let (g, _, out) = model.episode_loss(data, &ep, None)?;
        loss += g.value(out.loss).item();
        if argmax(g.value(out.probs).data()) == ep.target {
            correct += 1;
        }
    }
    Ok((loss / episodes as f64, correct as f64 / episodes as f64))
}

/// Read a metrics log back as `(step, loss, acc, lr)` rows.
pub fn read_metrics(path: &Path) -> Result<Vec<(u64, f64, f64, f64)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(&*path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::format(path, format!("expected header {METRICS_HEADER}")));
    }
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let bad = || Error::format(path, format!("bad metrics line {l:?}"));
            if f.len() != 4 {
                return Err(bad());
            }
            Ok((
                f[0].parse().map_err(|_| bad())?,
                f[1].parse().map_err(|_| bad())?,
                f[2].parse().map_err(|_| bad())?,
                f[3].parse().map_err(|_| bad())?,
            ))
        })
        .collect()
}
