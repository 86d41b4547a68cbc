//! Step-time and memory sweeps over sequence length, plus the fits used to
//! read scaling exponents off them.
//!
//! Everything runs on the calling thread. Peak bytes are the high-water mark
//! of live tensor storage during a step, minus what was live before it
//! (parameters and gradients of earlier steps), so they measure the step's
//! working set.

use std::io::Write;
use std::panic::{self, AssertUnwindSafe};
use std::time::Instant;

use dispatcher_tensor::buffer::{self, AllocationRefused};
use dispatcher_tensor::counters;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{LayerKind, ModelConfig};
use crate::dispatcher::num_rows;
use crate::error::{Error, Result};
use crate::model::LmModel;
use crate::trainer::{TokenBatch, TrainConfig, Trainer};

pub const CSV_HEADER: &str = "layer_kind,N,repeats,mean_s,stddev_s,peak_bytes,macs";

/// Smallest number of timed repeats a record may be based on.
pub const MIN_REPEATS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchOptions {
    pub batch_size: usize,
    pub repeats: usize,
    /// Untimed steps before the timed ones.
    pub warmup: usize,
    /// Refuse tensor allocations past this many live bytes.
    pub memory_limit: Option<usize>,
    pub seed: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            batch_size: 4,
            repeats: MIN_REPEATS,
            warmup: 2,
            memory_limit: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRecord {
    pub layer_kind: LayerKind,
    pub n: usize,
    pub repeats: usize,
    pub mean_step_seconds: f64,
    pub stddev_seconds: f64,
    pub median_of_means: f64,
    pub peak_tensor_bytes: usize,
    /// Forward mixing multiply-adds of one step (all layers, whole batch).
    pub counted_macs: u64,
    /// Forward dense multiply-adds of one step.
    pub dense_macs: u64,
    /// Why the measurement could not be taken.
    pub failed: Option<String>,
}

impl BenchRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.layer_kind,
            self.n,
            self.repeats,
            self.mean_step_seconds,
            self.stddev_seconds,
            self.peak_tensor_bytes,
            self.counted_macs
        )
    }
}

pub fn write_csv<W: Write>(records: &[BenchRecord], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in records {
        writeln!(out, "{}", r.csv_row())?;
    }
    Ok(())
}

/// Mixing multiply-adds of one dispatcher forward pass: `R(N) * N * d` per
/// sequence and layer.
pub fn dispatcher_mixing_macs(n: usize, width: usize, layers: usize, batch: usize) -> u64 {
    (num_rows(n).unwrap_or(0) * n * width * layers * batch) as u64
}

/// Mixing multiply-adds of one attention forward pass: `2 N² d` (scores and
/// weighted sum) per sequence and layer.
pub fn msa_mixing_macs(n: usize, width: usize, layers: usize, batch: usize) -> u64 {
    (2 * n * n * width * layers * batch) as u64
}

fn random_batch(vocab: usize, batch: usize, len: usize, seed: u64) -> TokenBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids = || (0..batch * len).map(|_| rng.random_range(0..vocab)).collect::<Vec<_>>();
    let inputs = ids();
    TokenBatch::new(batch, len, inputs, ids()).expect("consistent batch")
}

fn check_lengths(cfg: &ModelConfig, ns: &[usize]) -> Result<()> {
    if let Some(&n) = ns.iter().find(|&&n| n == 0 || n > cfg.max_seq) {
        return Err(Error::Capacity { len: n, max: cfg.max_seq });
    }
    Ok(())
}

/// Run `f` with the allocation limit set; a refused allocation becomes
/// `Ok(Err(message))`.
fn guarded<T>(limit: Option<usize>, f: impl FnOnce() -> Result<T>) -> Result<std::result::Result<T, String>> {
    buffer::set_limit(limit);
    let outcome = panic::catch_unwind(AssertUnwindSafe(f));
    buffer::set_limit(None);
    match outcome {
        Ok(result) => result.map(Ok),
        Err(payload) => match payload.downcast::<AllocationRefused>() {
            Ok(refused) => Ok(Err(refused.to_string())),
            Err(other) => panic::resume_unwind(other),
        },
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

/// Median of the means of three contiguous groups of `xs`.
pub fn median_of_means(xs: &[f64]) -> f64 {
    let groups = xs.len().min(3);
    let size = xs.len().div_ceil(groups);
    let mut means: Vec<f64> = xs.chunks(size).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
    means.sort_by(f64::total_cmp);
    let mid = means.len() / 2;
    if means.len() % 2 == 1 {
        means[mid]
    } else {
        (means[mid - 1] + means[mid]) / 2.0
    }
}

struct StepSample {
    seconds: f64,
    peak: usize,
    macs: counters::MacCounts,
}

fn measured<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, StepSample)> {
    let live = buffer::live_bytes();
    buffer::reset_peak();
    counters::reset();
    let start = Instant::now();
    let value = f()?;
    let seconds = start.elapsed().as_secs_f64();
    Ok((
        value,
        StepSample {
            seconds,
            peak: buffer::peak_bytes().saturating_sub(live),
            macs: counters::snapshot(),
        },
    ))
}

/// Time full training steps (forward, backward, clipping, Adam) at each
/// sequence length with a fixed batch size. A step that hits the memory
/// limit yields a failed record and the sweep continues.
pub fn bench_step_time(cfg: &ModelConfig, ns: &[usize], opts: &BenchOptions) -> Result<Vec<BenchRecord>> {
    if opts.repeats < MIN_REPEATS {
        return Err(Error::contract("bench_step_time", format!("{} repeats, need at least {MIN_REPEATS}", opts.repeats)));
    }
    check_lengths(cfg, ns)?;
    let mut records = Vec::with_capacity(ns.len());
    for &n in ns {
        let model = LmModel::new(cfg.clone())?;
        let train = TrainConfig {
            batch_size: opts.batch_size,
            seq_len: n,
            steps: opts.warmup + opts.repeats,
            learning_rate: 1e-4,
            warmup_steps: 0,
            seed: opts.seed,
            ..TrainConfig::default()
        };
        let mut trainer = Trainer::new(&model, train)?;
        let batch = random_batch(cfg.vocab_size, opts.batch_size, n, opts.seed.wrapping_add(n as u64));
        let outcome = guarded(opts.memory_limit, || {
            for _ in 0..opts.warmup {
                trainer.step(&model, &batch)?;
            }
            let mut samples = Vec::with_capacity(opts.repeats);
            for _ in 0..opts.repeats {
                samples.push(measured(|| trainer.step(&model, &batch))?.1);
            }
            Ok(samples)
        })?;
        let mut record = BenchRecord {
            layer_kind: cfg.layer_kind,
            n,
            repeats: opts.repeats,
            mean_step_seconds: f64::NAN,
            stddev_seconds: f64::NAN,
            median_of_means: f64::NAN,
            peak_tensor_bytes: 0,
            counted_macs: 0,
            dense_macs: 0,
            failed: None,
        };
        match outcome {
            Ok(samples) => {
                let times: Vec<f64> = samples.iter().map(|s| s.seconds).collect();
                let (mean, std) = mean_std(&times);
                record.mean_step_seconds = mean;
                record.stddev_seconds = std;
                record.median_of_means = median_of_means(&times);
                record.peak_tensor_bytes = samples.iter().map(|s| s.peak).max().unwrap_or(0);
                record.counted_macs = samples[0].macs.mixing;
                record.dense_macs = samples[0].macs.dense;
            }
            Err(reason) => record.failed = Some(reason),
        }
        records.push(record);
    }
    Ok(records)
}

/// Step times of several configurations at one length, alternating single
/// steps between them (and rotating which goes first) so slow drift in
/// machine speed affects all of them alike. Returns `opts.repeats` timings
/// per configuration, after `opts.warmup` untimed steps each.
pub fn interleaved_step_times(configs: &[ModelConfig], n: usize, opts: &BenchOptions) -> Result<Vec<Vec<f64>>> {
    let mut runs = Vec::with_capacity(configs.len());
    for cfg in configs {
        check_lengths(cfg, &[n])?;
        let model = LmModel::new(cfg.clone())?;
        let train = TrainConfig {
            batch_size: opts.batch_size,
            seq_len: n,
            steps: opts.warmup + opts.repeats,
            learning_rate: 1e-4,
            warmup_steps: 0,
            seed: opts.seed,
            ..TrainConfig::default()
        };
        let trainer = Trainer::new(&model, train)?;
        let batch = random_batch(cfg.vocab_size, opts.batch_size, n, opts.seed.wrapping_add(n as u64));
        runs.push((model, trainer, batch));
    }
    for (model, trainer, batch) in &mut runs {
        for _ in 0..opts.warmup {
            trainer.step(model, batch)?;
        }
    }
    let mut times = vec![Vec::with_capacity(opts.repeats); runs.len()];
    for i in 0..opts.repeats {
        for k in 0..runs.len() {
            let j = (i + k) % runs.len();
            let (model, trainer, batch) = &mut runs[j];
            let start = Instant::now();
            trainer.step(model, batch)?;
            times[j].push(start.elapsed().as_secs_f64());
        }
    }
    Ok(times)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MemoryRecord {
    pub layer_kind: LayerKind,
    pub n: usize,
    pub peak_tensor_bytes: usize,
}

/// Peak working-set bytes of one forward and backward pass at each length.
pub fn memory_report(cfg: &ModelConfig, ns: &[usize], batch_size: usize, seed: u64) -> Result<Vec<MemoryRecord>> {
    check_lengths(cfg, ns)?;
    let model = LmModel::new(cfg.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ns.iter()
        .map(|&n| {
            let batch = random_batch(cfg.vocab_size, batch_size, n, seed.wrapping_add(n as u64));
            model.zero_grad();
            let (_, sample) = measured(|| {
                let loss = model.loss(&batch, Some(&mut rng))?;
                loss.backward()?;
                Ok(())
            })?;
            model.zero_grad();
            Ok(MemoryRecord {
                layer_kind: cfg.layer_kind,
                n,
                peak_tensor_bytes: sample.peak,
            })
        })
        .collect()
}

fn check_sweep(points: &[(f64, f64)]) -> Result<()> {
    let mut xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    if xs.len() < 4 || xs[0] <= 0.0 || xs[xs.len() - 1] / xs[0] < 16.0 {
        return Err(Error::contract(
            "fit_scaling_exponent",
            format!("need at least 4 distinct positive lengths spanning 16x, got {xs:?}"),
        ));
    }
    if points.iter().any(|p| !(p.1 > 0.0 && p.1.is_finite())) {
        return Err(Error::contract("fit_scaling_exponent", "measurements must be positive and finite"));
    }
    Ok(())
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn fit_log_log(points: &[(f64, f64)]) -> Result<f64> {
    check_sweep(points)?;
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

/// Log-log time exponent over the successful records of one layer kind.
pub fn fit_scaling_exponent(records: &[BenchRecord]) -> Result<f64> {
    let kinds: Vec<LayerKind> = records.iter().map(|r| r.layer_kind).collect();
    if kinds.windows(2).any(|w| w[0] != w[1]) {
        return Err(Error::contract("fit_scaling_exponent", "records mix layer kinds"));
    }
    let points: Vec<(f64, f64)> = records
        .iter()
        .filter(|r| r.failed.is_none())
        .map(|r| (r.n as f64, r.mean_step_seconds))
        .collect();
    fit_log_log(&points)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub intercept: f64,
    pub slope: f64,
    /// Largest `|y - fit| / y` over the points.
    pub max_rel_residual: f64,
}

/// Straight-line fit `y ≈ a + b x` minimising squared relative residuals.
pub fn linear_fit(points: &[(f64, f64)]) -> Result<LinearFit> {
    if points.len() < 2 || points.iter().any(|p| p.1.is_nan() || p.1 <= 0.0) {
        return Err(Error::contract("linear_fit", "need at least two points with positive values"));
    }
    // Weighted normal equations with weights 1 / y².
    let (mut sw, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(x, y) in points {
        let w = 1.0 / (y * y);
        sw += w;
        sx += w * x;
        sy += w * y;
        sxx += w * x * x;
        sxy += w * x * y;
    }
    let det = sw * sxx - sx * sx;
    if det.abs() < f64::EPSILON * sw * sxx {
        return Err(Error::contract("linear_fit", "points share one x value"));
    }
    let slope = (sw * sxy - sx * sy) / det;
    let intercept = (sy - slope * sx) / sw;
    let max_rel_residual = points
        .iter()
        .map(|&(x, y)| ((y - intercept - slope * x) / y).abs())
        .fold(0.0, f64::max);
    Ok(LinearFit {
        intercept,
        slope,
        max_rel_residual,
    })
}
