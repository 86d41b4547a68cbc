//! Property suites: causality probes, the dense-matrix oracle for the
//! shift-and-sum loop, finite-difference gradients and the dropout and
//! saturation limits. Each returns a [`CheckOutcome`] instead of panicking
//! so the command line and the test suites can share them.

use std::time::Instant;

use dispatcher_tensor::gradcheck::check_gradients;
use dispatcher_tensor::{Tensor, TensorError};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{LayerKind, ModelConfig};
use crate::dispatcher::{dispatch_mix, dispatcher_forward, num_rows, sample_row_mask, CausalShiftMask, DispatcherParams, RowDropoutMask};
use crate::error::Result;
use crate::model::LmModel;
use crate::trainer::TokenBatch;

pub const ORACLE_LENGTHS: [usize; 8] = [2, 3, 4, 5, 8, 16, 33, 64];
pub const CAUSALITY_LENGTHS: [usize; 6] = [1, 2, 5, 16, 33, 128];
pub const ORACLE_TOLERANCE: f64 = 1e-9;
pub const GRADIENT_STEP: f64 = 1e-5;
pub const GRADIENT_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl CheckOutcome {
    pub fn line(&self) -> String {
        format!(
            "{} {} ({}; {:.1}s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.detail,
            self.seconds
        )
    }
}

fn timed(name: &str, f: impl FnOnce() -> Result<(bool, String)>) -> Result<CheckOutcome> {
    let start = Instant::now();
    let (passed, detail) = f()?;
    Ok(CheckOutcome {
        name: name.to_string(),
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn probe_config(kind: LayerKind, max_seq: usize, seed: u64) -> ModelConfig {
    ModelConfig {
        layer_kind: kind,
        d_model: 16,
        d_inner: 24,
        n_layers: 2,
        n_heads: 2,
        max_seq,
        vocab_size: 23,
        dropout_p: 0.0,
        row_dropout_p: None,
        seed,
    }
}

/// Edit every token from a random position `j` on and require the logits
/// at positions before `j` to be bitwise unchanged.
pub fn causality_probe(kind: LayerKind, lengths: &[usize], trials: usize, seed: u64) -> Result<CheckOutcome> {
    timed(&format!("causality {kind}"), || {
        let max_seq = lengths.iter().copied().max().unwrap_or(1);
        let cfg = probe_config(kind, max_seq, seed);
        let vocab = cfg.vocab_size;
        let model = LmModel::new(cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xca05);
        let (mut probes, mut leaks) = (0, 0);
        for &n in lengths {
            for _ in 0..trials {
                let ids: Vec<usize> = (0..n).map(|_| rng.random_range(0..vocab)).collect();
                let j = rng.random_range(0..n);
                let mut edited = ids.clone();
                for id in &mut edited[j..] {
                    *id = (*id + rng.random_range(1..vocab)) % vocab;
                }
                let before = model.logits(&ids, 1, n, None)?.to_vec();
                let after = model.logits(&edited, 1, n, None)?.to_vec();
                let prefix = j * vocab;
                if before[..prefix].iter().zip(&after[..prefix]).any(|(a, b)| a.to_bits() != b.to_bits()) {
                    leaks += 1;
                }
                probes += 1;
            }
        }
        Ok((leaks == 0, format!("{probes} probes over N in {lengths:?}, {leaks} leaked")))
    })
}

/// `T · v` per head, where `T` is the product over kept rows, in ascending
/// order, of `I + diag(c[r]) · S_{2^r}` with `S_s` the circular shift.
/// `gates` is `[N, G]` in the layout of [`dispatch_mix`] and must already be
/// masked. Returns the output and whether every `T` is lower triangular.
pub fn dense_mix_oracle(v: &[f64], gates: &[f64], len: usize, width: usize, heads: usize, keep: &[bool]) -> (Vec<f64>, bool) {
    let n = len;
    let hw = width / heads;
    let gate_width = gates.len() / n;
    let mut out = vec![0.0; n * width];
    let mut triangular = true;
    for h in 0..heads {
        let mut t = vec![0.0; n * n];
        (0..n).for_each(|i| t[i * n + i] = 1.0);
        for (r, _) in keep.iter().enumerate().filter(|(_, &k)| k) {
            let shift = 1 << r;
            // (I + D S) T: row p gains c[p] times row (p - s) mod N of T.
            let mut next = t.clone();
            for p in 0..n {
                let c = gates[p * gate_width + r * heads + h];
                let src = (p + n - shift % n) % n;
                for q in 0..n {
                    next[p * n + q] += c * t[src * n + q];
                }
            }
            t = next;
        }
        for p in 0..n {
            for q in p + 1..n {
                triangular &= t[p * n + q] == 0.0;
            }
            for c in 0..hw {
                out[p * width + h * hw + c] = (0..n).map(|q| t[p * n + q] * v[q * width + h * hw + c]).sum();
            }
        }
    }
    (out, triangular)
}

/// Normwise relative deviation `max |a - b| / max |b|`.
pub fn relative_deviation(actual: &[f64], reference: &[f64]) -> f64 {
    let diff = actual.iter().zip(reference).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let scale = reference.iter().map(|b| b.abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// [`dispatch_mix`] against [`dense_mix_oracle`] on random masked gates,
/// with every row kept and with a random subset kept.
pub fn oracle_equivalence(lengths: &[usize], seed: u64) -> Result<CheckOutcome> {
    timed("oracle equivalence", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        let mut triangular = true;
        for &n in lengths {
            let rows = num_rows(n)?;
            let mask = CausalShiftMask::for_len(n)?;
            for (heads, width) in [(1, 4), (2, 6)] {
                let gate_width = rows.max(1) * heads;
                let v: Vec<f64> = (0..n * width).map(|_| rng.random_range(-1.0..1.0)).collect();
                let raw: Vec<f64> = (0..n * gate_width).map(|_| rng.random_range(-4.0..4.0)).collect();
                let gates = Tensor::new(&[n, gate_width], raw)?
                    .sigmoid()
                    .mul(&mask.gate_tensor(rows.max(1), heads))?;
                let vt = Tensor::new(&[n, width], v.clone())?;
                let subset = sample_row_mask(rows, 0.5, &mut rng)?;
                for keep in [RowDropoutMask::keep_all(rows), subset] {
                    let fused = dispatch_mix(&vt, &gates, &mask, heads, &keep)?.to_vec();
                    let (oracle, tri) = dense_mix_oracle(&v, &gates.to_vec(), n, width, heads, keep.keep());
                    worst = worst.max(relative_deviation(&fused, &oracle));
                    triangular &= tri;
                }
            }
        }
        Ok((
            worst <= ORACLE_TOLERANCE && triangular,
            format!("max relative deviation {worst:.2e} over N in {lengths:?}, operators lower triangular: {triangular}"),
        ))
    })
}

/// Central differences against backward for every parameter of a 2-layer
/// dispatcher model, once in evaluation mode and once with rows dropped.
pub fn gradient_suite(seed: u64) -> Result<CheckOutcome> {
    timed("gradient check", || {
        let cfg = ModelConfig {
            layer_kind: LayerKind::Dispatcher,
            d_model: 8,
            d_inner: 8,
            n_layers: 2,
            n_heads: 2,
            max_seq: 8,
            vocab_size: 11,
            dropout_p: 0.0,
            row_dropout_p: Some(0.5),
            seed,
        };
        let model = LmModel::new(cfg)?;
        // Larger weights than the default initialisation keep every
        // gradient well above the finite-difference noise floor.
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6ead);
        for t in model.parameters() {
            t.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3));
        }
        let (batch, len) = (2, 6);
        let mut ids = || (0..batch * len).map(|_| rng.random_range(0..11)).collect::<Vec<_>>();
        let tokens = TokenBatch::new(batch, len, ids(), ids())?;
        let params = model.parameters();
        let loss = |dropout: Option<u64>| {
            let mut rng = dropout.map(ChaCha8Rng::seed_from_u64);
            model
                .loss(&tokens, rng.as_mut().map(|r| r as &mut dyn RngCore))
                .map_err(|e| TensorError::contract("loss", e.to_string()))
        };
        let eval = check_gradients(&params, || loss(None), GRADIENT_STEP)?;
        let dropped = check_gradients(&params, || loss(Some(seed ^ 0xd209)), GRADIENT_STEP)?;
        let worst = eval.max_rel_error().max(dropped.max_rel_error());
        let culprit = [eval.worst, dropped.worst]
            .into_iter()
            .flatten()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
            .map(|m| format!(", worst in parameter {} entry {}", model.named_parameters()[m.param].0, m.index))
            .unwrap_or_default();
        Ok((
            worst < GRADIENT_TOLERANCE,
            format!(
                "{} entries, max relative error {worst:.2e}{culprit}",
                eval.checked + dropped.checked
            ),
        ))
    })
}

fn saturated_layer(width: usize, max_seq: usize, seed: u64) -> Result<DispatcherParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = DispatcherParams::new(width, 1, max_seq, &mut rng)?;
    params.linear1.bias.data_mut().fill(20.0);
    Ok(params)
}

/// With gates saturated near one, output `i` must depend on every input
/// `j <= i` and on no input `j > i`.
pub fn reachability(len: usize, seed: u64) -> Result<CheckOutcome> {
    timed("reachability", || {
        let width = 4;
        let params = saturated_layer(width, len, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4eac);
        let data: Vec<f64> = (0..len * width).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut violations = 0;
        for i in 0..len {
            let x = Tensor::param(&[len, width], data.clone())?;
            let out = params.forward_with(&x, &RowDropoutMask::keep_all(num_rows(len)?))?;
            out.narrow(0, i, 1)?.sum().backward()?;
            let grad = x.grad().unwrap_or_else(|| vec![0.0; len * width]);
            for j in 0..len {
                let row = &grad[j * width..(j + 1) * width];
                let reached = row.iter().any(|&g| g != 0.0);
                if reached != (j <= i) {
                    violations += 1;
                }
            }
        }
        Ok((violations == 0, format!("N = {len}, {violations} of {} input/output pairs wrong", len * len)))
    })
}

/// With gates saturated near one and a single head, mixing gives prefix
/// sums of the values. Each gate falls short of one by `1 - σ(20) ≈ 2e-9`
/// and a contribution passes through at most `R` gates, which bounds the
/// deviation by `R (1 - σ(20)) Σ|v|`.
pub fn saturation_prefix_sums(len: usize, seed: u64) -> Result<CheckOutcome> {
    timed("saturated prefix sums", || {
        let width = 4;
        let params = saturated_layer(width, len, seed)?;
        params.linear1.weight.data_mut().fill(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5a7);
        let x = Tensor::new(&[len, width], (0..len * width).map(|_| rng.random_range(-1.0..1.0)).collect())?;
        let rows = num_rows(len)?;
        let mask = CausalShiftMask::for_len(len)?;
        let v = params.linear2.forward(&x)?;
        let mixed = dispatch_mix(&v, &params.gates(&x)?, &mask, 1, &RowDropoutMask::keep_all(rows))?.to_vec();
        let v = v.to_vec();
        let gap = 1.0 - 1.0 / (1.0 + (-20f64).exp());
        let mut worst_excess: f64 = 0.0;
        let mut worst: f64 = 0.0;
        for c in 0..width {
            let (mut prefix, mut abs) = (0.0, 0.0);
            for p in 0..len {
                prefix += v[p * width + c];
                abs += v[p * width + c].abs();
                let dev = (mixed[p * width + c] - prefix).abs();
                worst = worst.max(dev);
                worst_excess = worst_excess.max(dev - rows as f64 * gap * abs);
            }
        }
        Ok((
            worst_excess <= 1e-15,
            format!("N = {len}, max deviation {worst:.2e} within the bound R(1-σ(20))Σ|v|"),
        ))
    })
}

/// Row-dropout limits: `p = 1` leaves a per-token map exactly, and the keep
/// rate at `p = 0.5` over 10⁴ rows is 0.5 ± 0.02.
pub fn row_dropout_limits(seed: u64) -> Result<CheckOutcome> {
    timed("row dropout", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (len, width) = (37, 8);
        let params = DispatcherParams::new(width, 2, 64, &mut rng)?;
        let x = Tensor::new(&[2, len, width], (0..2 * len * width).map(|_| rng.random_range(-1.0..1.0)).collect())?;
        let dropped = dispatcher_forward(&x, &params, true, 1.0, &mut rng)?.to_vec();
        let direct = params.linear3.forward(&params.linear2.forward(&x)?)?.to_vec();
        let exact = dropped.iter().zip(&direct).all(|(a, b)| a.to_bits() == b.to_bits());
        let kept = sample_row_mask(10_000, 0.5, &mut rng)?.kept() as f64 / 10_000.0;
        Ok((
            exact && (kept - 0.5).abs() <= 0.02,
            format!("p = 1 per-token map exact: {exact}; keep rate at p = 0.5: {kept:.4}"),
        ))
    })
}

/// Every suite with its default sizes, in a fixed order.
pub fn run_all(seed: u64) -> Result<Vec<CheckOutcome>> {
    Ok(vec![
        causality_probe(LayerKind::Dispatcher, &CAUSALITY_LENGTHS, 20, seed)?,
        causality_probe(LayerKind::Msa, &CAUSALITY_LENGTHS, 20, seed)?,
        oracle_equivalence(&ORACLE_LENGTHS, seed)?,
        gradient_suite(seed)?,
        reachability(16, seed)?,
        saturation_prefix_sums(8, seed)?,
        row_dropout_limits(seed)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_of_unit_gates_is_prefix_sum() {
        let mask = CausalShiftMask::for_len(4).unwrap();
        let gates = mask.gate_tensor(2, 1).to_vec();
        let (out, tri) = dense_mix_oracle(&[1., 2., 3., 4.], &gates, 4, 1, 1, &[true, true]);
        assert_eq!(out, vec![1., 3., 6., 10.]);
        assert!(tri);
    }

    #[test]
    fn oracle_detects_leaks() {
        // Unmasked gates wrap the end of the sequence onto its start.
        let (_, tri) = dense_mix_oracle(&[1., 2., 3.], &[1., 1., 1., 1., 1., 1.], 3, 1, 1, &[true, true]);
        assert!(!tri);
    }

    #[test]
    fn relative_deviation_is_normwise() {
        assert_eq!(relative_deviation(&[1.0, 2.5], &[1.0, 2.0]), 0.25);
        assert_eq!(relative_deviation(&[0.5], &[0.0]), 0.5);
    }

    #[test]
    fn every_suite_passes() {
        for outcome in run_all(7).unwrap() {
            println!("{}", outcome.line());
            assert!(outcome.passed, "{}", outcome.line());
        }
    }
}
