//! Deep Q-learning core: network, replay, TD targets and target-network sync.

mod mlp;
mod replay;

use std::path::Path as FsPath;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use mlp::{grad_check, mlp_init, Gradients, Mlp, GRAD_FLOOR};
pub use replay::{ReplayBuffer, Transition};

use crate::{Error, Result};

/// Learning hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    /// Bootstrap discount applied to the next state's value.
    pub discount: f64,
    /// Gradient steps between target-network syncs.
    pub target_sync: u64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Episodes over which epsilon decays linearly; `None` means half of `episodes`.
    pub epsilon_decay_episodes: Option<usize>,
    pub buffer_capacity: usize,
    pub episodes: usize,
    pub hidden: Vec<usize>,
    /// Stop after this many environment steps, even mid-episode.
    pub max_env_steps: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.1,
            batch: 512,
            discount: 0.9,
            target_sync: 100,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_episodes: None,
            buffer_capacity: 10_000,
            episodes: 2000,
            hidden: vec![128, 128],
            max_env_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.discount) {
            return Err(Error::config("discount", "must lie in [0, 1]"));
        }
        if self.target_sync < 1 {
            return Err(Error::config("target_sync", "must be at least 1"));
        }
        if self.batch < 1 {
            return Err(Error::config("batch", "must be at least 1"));
        }
        if self.buffer_capacity < self.batch {
            return Err(Error::config(
                "buffer_capacity",
                "must hold at least one batch",
            ));
        }
        if self.hidden.contains(&0) {
            return Err(Error::config("hidden", "layer sizes must be positive"));
        }
        Ok(())
    }

    /// Linear decay from `epsilon_start` to `epsilon_end`.
    pub fn epsilon(&self, episode: usize) -> f64 {
        let span = self
            .epsilon_decay_episodes
            .unwrap_or(self.episodes / 2)
            .max(1);
        let frac = (episode as f64 / span as f64).min(1.0);
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }
}

fn masked_max(q: &[f64], mask: &[bool]) -> Option<f64> {
    q.iter()
        .zip(mask)
        .filter(|(_, &ok)| ok)
        .map(|(&v, _)| v)
        .reduce(f64::max)
}

fn targets_from(batch: &[&Transition], q_next: ArrayView2<f64>, discount: f64) -> Result<Vec<f64>> {
    batch
        .iter()
        .zip(q_next.rows())
        .map(|(t, q)| {
            if t.done {
                return Ok(t.reward);
            }
            let q = q.as_slice().expect("standard layout");
            masked_max(q, &t.next_mask)
                .map(|best| t.reward + discount * best)
                .ok_or_else(|| {
                    Error::Contract("non-terminal transition with no valid next action".into())
                })
        })
        .collect()
}

fn stack<'a>(rows: impl ExactSizeIterator<Item = &'a [f64]>, width: usize) -> Result<Array2<f64>> {
    let n = rows.len();
    let mut out = Vec::with_capacity(n * width);
    for r in rows {
        if r.len() != width {
            return Err(Error::Dimension {
                expected: width,
                actual: r.len(),
            });
        }
        out.extend_from_slice(r);
    }
    Ok(Array2::from_shape_vec((n, width), out).expect("sizes checked"))
}

/// `y = r` for terminal transitions, else `r + discount * max_{valid a'} Q_target(s', a')`.
pub fn td_target(batch: &[&Transition], target: &Mlp, discount: f64) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    let next = stack(
        batch.iter().map(|t| t.next_state.as_slice()),
        target.input_dim(),
    )?;
    let q_next = target.forward_batch(next.view());
    targets_from(batch, q_next.view(), discount)
}

/// Mean squared TD error of `batch` under `main`, without updating anything.
pub fn td_loss(batch: &[&Transition], main: &Mlp, target: &Mlp, discount: f64) -> Result<f64> {
    let y = td_target(batch, target, discount)?;
    let s = stack(batch.iter().map(|t| t.state.as_slice()), main.input_dim())?;
    let q = main.forward_batch(s.view());
    let sum: f64 = batch
        .iter()
        .zip(&y)
        .enumerate()
        .map(|(i, (t, y))| (q[[i, t.action]] - y).powi(2))
        .sum();
    Ok(sum / batch.len() as f64)
}

/// One SGD step on a fixed batch; returns the loss before the update.
pub fn train_on_batch(
    main: &mut Mlp,
    target: &Mlp,
    batch: &[&Transition],
    lr: f64,
    discount: f64,
) -> Result<f64> {
    let y = td_target(batch, target, discount)?;
    let n = batch.len();
    let s = stack(batch.iter().map(|t| t.state.as_slice()), main.input_dim())?;
    let cache = main.forward_cached(s);
    let q = cache.output();
    let mut d_out = Array2::zeros(q.raw_dim());
    let mut loss = 0.0;
    for (i, (t, y)) in batch.iter().zip(&y).enumerate() {
        if t.action >= main.output_dim() {
            return Err(Error::Argument(format!("action {} out of range", t.action)));
        }
        let err = q[[i, t.action]] - y;
        loss += err * err;
        d_out[[i, t.action]] = 2.0 * err / n as f64;
    }
    let grads = main.backward(&cache, d_out);
    main.sgd(&grads, lr);
    Ok(loss / n as f64)
}

/// Samples a batch and applies one gradient step to `main` only.
pub fn train_step<R: Rng + ?Sized>(
    main: &mut Mlp,
    target: &Mlp,
    buffer: &ReplayBuffer,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<f64> {
    if buffer.len() < cfg.batch {
        return Err(Error::NotReady {
            len: buffer.len(),
            batch: cfg.batch,
        });
    }
    let batch = buffer.sample(rng, cfg.batch);
    train_on_batch(main, target, &batch, cfg.lr, cfg.discount)
}

/// Copies the main network's parameters into the target network.
pub fn sync_target(main: &Mlp, target: &mut Mlp) {
    target.clone_from(main);
}

/// Main and target networks plus replay, with the sync schedule.
#[derive(Debug, Clone)]
pub struct Learner {
    pub main: Mlp,
    pub target: Mlp,
    pub buffer: ReplayBuffer,
    cfg: TrainConfig,
    grad_steps: u64,
    syncs: u64,
}

impl Learner {
    pub fn new(main: Mlp, cfg: TrainConfig) -> Self {
        Learner {
            target: main.clone(),
            main,
            buffer: ReplayBuffer::new(cfg.buffer_capacity),
            cfg,
            grad_steps: 0,
            syncs: 0,
        }
    }

    pub fn grad_steps(&self) -> u64 {
        self.grad_steps
    }

    pub fn syncs(&self) -> u64 {
        self.syncs
    }

    pub fn observe(&mut self, t: Transition) {
        self.buffer.push(t);
    }

    /// Trains once if the buffer holds a batch, syncing the target every
    /// `target_sync` gradient steps. Returns the loss, or `None` if not ready.
    pub fn learn<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Option<f64>> {
        match train_step(&mut self.main, &self.target, &self.buffer, &self.cfg, rng) {
            Ok(loss) => {
                self.grad_steps += 1;
                if self.grad_steps.is_multiple_of(self.cfg.target_sync) {
                    sync_target(&self.main, &mut self.target);
                    self.syncs += 1;
                }
                Ok(Some(loss))
            }
            Err(Error::NotReady { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    }
}

/// Serialized network parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub dims: Vec<usize>,
    /// Row-major `(dims[i], dims[i + 1])` per layer.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub global_step: u64,
}

impl Checkpoint {
    pub const VERSION: u32 = 1;

    pub fn from_mlp(mlp: &Mlp, global_step: u64) -> Self {
        Checkpoint {
            version: Self::VERSION,
            dims: mlp.dims().to_vec(),
            weights: mlp.weights(),
            biases: mlp.biases(),
            global_step,
        }
    }

    pub fn to_mlp(&self) -> Result<Mlp> {
        if self.version != Self::VERSION {
            return Err(Error::config(
                "checkpoint",
                format!("unsupported version {}", self.version),
            ));
        }
        Mlp::from_params(&self.dims, self.weights.clone(), self.biases.clone())
    }

    pub fn save(&self, path: &FsPath) -> Result<()> {
        let text = serde_json::to_string(self).expect("checkpoint serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &FsPath) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e))
    }
}
