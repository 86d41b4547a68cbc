//! Seeded training loop: contiguous-stream batching, Adam with linear
//! warmup, global-norm clipping, loss logging and periodic checkpoints.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::time::Instant;

use dispatcher_tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::model::{perplexity, LmModel};

pub const LOSS_LOG_HEADER: &str = "step,loss,lr,seconds";

/// Keeps the dropout stream distinct from the initialisation stream when
/// both use the same seed.
const DROPOUT_STREAM: u64 = 0x5eed_d80f;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub seq_len: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub clip_norm: f64,
    pub seed: u64,
    pub eval_every: usize,
    pub checkpoint_path: Option<PathBuf>,
    pub loss_log: Option<PathBuf>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            seq_len: 256,
            steps: 3000,
            learning_rate: 1e-3,
            warmup_steps: 200,
            clip_norm: 1.0,
            seed: 0,
            eval_every: 500,
            checkpoint_path: None,
            loss_log: None,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (field, value) in [
            ("batch_size", self.batch_size),
            ("seq_len", self.seq_len),
            ("steps", self.steps),
            ("eval_every", self.eval_every),
        ] {
            if value == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if self.warmup_steps > self.steps {
            return Err(Error::config(
                "warmup_steps",
                format!("{} exceeds the {} training steps", self.warmup_steps, self.steps),
            ));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be finite and non-negative"));
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return Err(Error::config("clip_norm", "must be positive"));
        }
        for (field, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::config(field, "must lie in [0, 1)"));
            }
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return Err(Error::config("eps", "must be positive"));
        }
        Ok(())
    }
}

/// `batch` rows of `len` input ids and their next-token targets, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenBatch {
    pub batch: usize,
    pub len: usize,
    pub inputs: Vec<usize>,
    pub targets: Vec<usize>,
}

impl TokenBatch {
    pub fn new(batch: usize, len: usize, inputs: Vec<usize>, targets: Vec<usize>) -> Result<Self> {
        if batch == 0 || len == 0 || inputs.len() != batch * len || targets.len() != inputs.len() {
            return Err(Error::Data(format!(
                "{} inputs and {} targets do not form a {batch}x{len} batch",
                inputs.len(),
                targets.len()
            )));
        }
        Ok(Self {
            batch,
            len,
            inputs,
            targets,
        })
    }

    /// Rows built from windows of `len + 1` consecutive ids.
    pub fn from_windows(windows: &[&[usize]]) -> Result<Self> {
        let len = windows.first().map_or(0, |w| w.len().saturating_sub(1));
        if windows.iter().any(|w| w.len() != len + 1) {
            return Err(Error::Data("windows must share one length of at least 2".into()));
        }
        let inputs = windows.iter().flat_map(|w| w[..len].iter().copied()).collect();
        let targets = windows.iter().flat_map(|w| w[1..].iter().copied()).collect();
        Self::new(windows.len(), len, inputs, targets)
    }
}

/// Splits a token stream into `batch` equal contiguous streams and walks
/// all of them in lockstep with non-overlapping windows, wrapping to the
/// start when a stream runs out.
#[derive(Debug, Clone)]
pub struct StreamBatcher<'a> {
    ids: &'a [usize],
    batch: usize,
    seq_len: usize,
    stream_len: usize,
    cursor: usize,
}

impl<'a> StreamBatcher<'a> {
    pub fn new(ids: &'a [usize], batch: usize, seq_len: usize) -> Result<Self> {
        let stream_len = ids.len() / batch.max(1);
        if batch == 0 || seq_len == 0 || stream_len < seq_len + 1 {
            return Err(Error::Data(format!(
                "corpus of {} tokens is shorter than one batch window of {batch} x {} tokens",
                ids.len(),
                seq_len + 1
            )));
        }
        Ok(Self {
            ids,
            batch,
            seq_len,
            stream_len,
            cursor: 0,
        })
    }

    /// Windows per stream before wrapping around.
    pub fn windows_per_epoch(&self) -> usize {
        (self.stream_len - 1) / self.seq_len
    }
}

impl Iterator for StreamBatcher<'_> {
    type Item = TokenBatch;

    fn next(&mut self) -> Option<TokenBatch> {
        if self.cursor + self.seq_len + 1 > self.stream_len {
            self.cursor = 0;
        }
        let windows: Vec<&[usize]> = (0..self.batch)
            .map(|b| &self.ids[b * self.stream_len + self.cursor..][..self.seq_len + 1])
            .collect();
        self.cursor += self.seq_len;
        Some(TokenBatch::from_windows(&windows).expect("equal windows"))
    }
}

/// Learning rate at `step` (0-based) under linear warmup: `base * step /
/// warmup` until `warmup`, then `base`.
pub fn warmup_lr(base: f64, step: usize, warmup: usize) -> f64 {
    if step >= warmup {
        base
    } else {
        base * step as f64 / warmup as f64
    }
}

fn check_finite(params: &[(String, Tensor)]) -> Result<()> {
    for (name, t) in params {
        if let Some(g) = t.grad_ref().as_ref() {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { param: name.clone() });
            }
        }
    }
    Ok(())
}

/// Scale all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(params: &[(String, Tensor)], max_norm: f64) -> Result<f64> {
    check_finite(params)?;
    let norm = params
        .iter()
        .filter_map(|(_, t)| t.grad_ref().as_ref().map(|g| g.iter().map(|v| v * v).sum::<f64>()))
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for (_, t) in params {
            if let Some(g) = t.grad_mut().as_mut() {
                g.iter_mut().for_each(|v| *v *= scale);
            }
        }
    }
    Ok(norm)
}

/// Adam with bias correction. Moment buffers are created on the first step.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.t
    }

    /// Apply one update from the gradients held by `params`. Parameters
    /// without a gradient are treated as having a zero one. Nothing is
    /// modified if any gradient is non-finite.
    pub fn step(&mut self, params: &[(String, Tensor)], lr: f64) -> Result<()> {
        check_finite(params)?;
        if self.m.is_empty() {
            self.m = params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() || self.m.iter().zip(params).any(|(m, (_, t))| m.len() != t.numel()) {
            return Err(Error::contract("adam_step", "parameter set changed between steps"));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for ((_, t), (m, v)) in params.iter().zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let grad = t.grad_ref();
            let mut data = t.data_mut();
            for i in 0..data.len() {
                let g = grad.as_ref().map_or(0.0, |g| g[i]);
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                data[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    /// 1-based index of the update just applied.
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
}

/// Owns the optimiser state and the dropout RNG for one model.
pub struct Trainer {
    config: TrainConfig,
    params: Vec<(String, Tensor)>,
    adam: Adam,
    rng: ChaCha8Rng,
    step: usize,
}

impl Trainer {
    pub fn new(model: &LmModel, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            params: model.named_parameters(),
            adam: Adam::new(config.beta1, config.beta2, config.eps),
            rng: ChaCha8Rng::seed_from_u64(config.seed ^ DROPOUT_STREAM),
            step: 0,
            config,
        })
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    /// One forward, backward, clip and update on `batch`.
    pub fn step(&mut self, model: &LmModel, batch: &TokenBatch) -> Result<StepStats> {
        let lr = warmup_lr(self.config.learning_rate, self.step, self.config.warmup_steps);
        model.zero_grad();
        let loss = model.loss(batch, Some(&mut self.rng))?;
        let value = loss.item();
        if !value.is_finite() {
            return Err(Error::NonFinite { param: "loss".into() });
        }
        loss.backward()?;
        let grad_norm = clip_grad_norm(&self.params, self.config.clip_norm)?;
        self.adam.step(&self.params, lr)?;
        self.step += 1;
        Ok(StepStats {
            step: self.step,
            loss: value,
            lr,
            grad_norm,
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub losses: Vec<f64>,
    /// `(step, validation perplexity)` at each evaluation point.
    pub evals: Vec<(usize, f64)>,
    pub checkpoint: Option<PathBuf>,
    pub seconds: f64,
}

/// Train `model` on `train_ids` for `config.steps` updates. Every
/// `eval_every` steps and at the end, scores `valid_ids` (when given) and
/// writes the checkpoint (when a path is set).
pub fn train(model: &LmModel, train_ids: &[usize], valid_ids: Option<&[usize]>, config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    let max = model.config().max_seq;
    if config.seq_len > max {
        return Err(Error::Capacity { len: config.seq_len, max });
    }
    let batches = StreamBatcher::new(train_ids, config.batch_size, config.seq_len)?;
    let mut trainer = Trainer::new(model, config.clone())?;
    let mut log = match &config.loss_log {
        Some(path) => {
            let mut w = BufWriter::new(File::create(path).map_err(Error::io(path))?);
            writeln!(w, "{LOSS_LOG_HEADER}").map_err(Error::io(path))?;
            Some((path, w))
        }
        None => None,
    };
    let start = Instant::now();
    let mut report = TrainReport::default();
    for batch in batches.take(config.steps) {
        let stats = trainer.step(model, &batch)?;
        report.losses.push(stats.loss);
        if let Some((path, w)) = log.as_mut() {
            writeln!(w, "{},{},{},{:.6}", stats.step, stats.loss, stats.lr, start.elapsed().as_secs_f64()).map_err(Error::io(*path))?;
        }
        if stats.step % config.eval_every == 0 || stats.step == config.steps {
            if let Some(valid) = valid_ids {
                report.evals.push((stats.step, perplexity(model, valid)?));
            }
            if let Some(path) = &config.checkpoint_path {
                checkpoint::save(model, path)?;
                report.checkpoint = Some(path.clone());
            }
            if let Some((path, w)) = log.as_mut() {
                w.flush().map_err(Error::io(*path))?;
            }
        }
    }
    report.seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn named(values: &[&[f64]]) -> Vec<(String, Tensor)> {
        values
            .iter()
            .enumerate()
            .map(|(i, v)| (format!("p{i}"), Tensor::param(&[v.len()], v.to_vec()).unwrap()))
            .collect()
    }

    fn set_grads(params: &[(String, Tensor)], grads: &[&[f64]]) {
        for ((_, t), g) in params.iter().zip(grads) {
            *t.grad_mut() = Some(dispatcher_tensor::Buffer::from_slice(g));
        }
    }

    #[test]
    fn warmup_schedule() {
        assert_eq!(warmup_lr(0.1, 0, 200), 0.0);
        assert_eq!(warmup_lr(0.1, 100, 200), 0.05);
        assert_eq!(warmup_lr(0.1, 500, 200), 0.1);
        assert_eq!(warmup_lr(0.1, 0, 0), 0.1);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let params = named(&[&[1.0, -2.0], &[3.0]]);
        set_grads(&params, &[&[0.0, 0.0], &[0.0]]);
        Adam::new(0.9, 0.999, 1e-8).step(&params, 0.1).unwrap();
        assert_eq!(params[0].1.to_vec(), vec![1.0, -2.0]);
        assert_eq!(params[1].1.to_vec(), vec![3.0]);
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        let params = named(&[&[0.5, 0.5]]);
        set_grads(&params, &[&[3.0, -0.25]]);
        Adam::new(0.9, 0.999, 1e-8).step(&params, 0.01).unwrap();
        let moved: Vec<f64> = params[0].1.to_vec().iter().map(|p| p - 0.5).collect();
        assert!((moved[0] + 0.01).abs() < 1e-9);
        assert!((moved[1] - 0.01).abs() < 1e-9);
    }

    #[test]
    fn nan_gradient_names_the_parameter() {
        let params = named(&[&[1.0], &[2.0]]);
        set_grads(&params, &[&[0.1], &[f64::NAN]]);
        let err = Adam::new(0.9, 0.999, 1e-8).step(&params, 0.1).unwrap_err();
        assert!(matches!(err, Error::NonFinite { ref param } if param == "p1"));
        assert_eq!(params[0].1.to_vec(), vec![1.0]);
    }

    #[test]
    fn clipping_caps_the_global_norm() {
        let params = named(&[&[3.0, 0.0], &[4.0]]);
        set_grads(&params, &[&[3.0, 0.0], &[4.0]]);
        assert_eq!(clip_grad_norm(&params, 1.0).unwrap(), 5.0);
        let after: f64 = params.iter().flat_map(|(_, t)| t.grad().unwrap()).map(|g| g * g).sum::<f64>().sqrt();
        assert!((after - 1.0).abs() < 1e-9);
        set_grads(&params, &[&[0.3, 0.0], &[0.4]]);
        clip_grad_norm(&params, 1.0).unwrap();
        assert_eq!(params[1].1.grad().unwrap(), vec![0.4]);
    }

    #[test]
    fn batches_walk_contiguous_streams() {
        let ids: Vec<usize> = (0..22).collect();
        let mut b = StreamBatcher::new(&ids, 2, 3).unwrap();
        assert_eq!(b.windows_per_epoch(), 3);
        let first = b.next().unwrap();
        assert_eq!(first.inputs, vec![0, 1, 2, 11, 12, 13]);
        assert_eq!(first.targets, vec![1, 2, 3, 12, 13, 14]);
        assert_eq!(b.next().unwrap().inputs, vec![3, 4, 5, 14, 15, 16]);
        assert_eq!(b.next().unwrap().inputs, vec![6, 7, 8, 17, 18, 19]);
        assert_eq!(b.next().unwrap().inputs, vec![0, 1, 2, 11, 12, 13]);
        assert!(StreamBatcher::new(&ids, 4, 5).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            warmup_steps: 10,
            steps: 5,
            ..TrainConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config { field, .. }) if field == "warmup_steps"));
    }
}
