//! Causal language model built from either mixing layer.
//!
//! Token and learned position embeddings feed a stack of pre-norm residual
//! blocks (`x + mix(norm(x))`, then `x + ff(norm(x))`), a final norm and an
//! output head tied to the token embedding.

use dispatcher_tensor::{no_grad, Tensor};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{LayerKind, ModelConfig};
use crate::dispatcher::{dispatcher_forward, num_rows, DispatcherParams, RowDropoutMask};
use crate::error::{Error, Result};
use crate::layers::{normal_param, FeedForward, LayerNorm, INIT_STD};
use crate::msa::{msa_forward, MsaParams};
use crate::trainer::TokenBatch;

/// Sequences per forward pass when scoring a stream.
const EVAL_BATCH: usize = 8;

#[derive(Debug, Clone)]
pub enum Mixer {
    Dispatcher(DispatcherParams),
    Msa(MsaParams),
}

#[derive(Debug, Clone)]
pub struct Block {
    pub norm1: LayerNorm,
    pub mixer: Mixer,
    pub norm2: LayerNorm,
    pub ff: FeedForward,
}

#[derive(Debug, Clone)]
pub struct LmModel {
    config: ModelConfig,
    pub token_embedding: Tensor,
    pub position_embedding: Tensor,
    pub blocks: Vec<Block>,
    pub final_norm: LayerNorm,
}

impl ModelConfig {
    /// Closed-form parameter count of [`LmModel::new`] for this config.
    pub fn parameter_count(&self) -> usize {
        let d = self.d_model;
        let mixer = match self.layer_kind {
            LayerKind::Dispatcher => {
                let gates = (self.max_rows() * self.n_heads).max(1);
                d * gates + gates + 2 * (d * d + d)
            }
            LayerKind::Msa => 4 * (d * d + d),
        };
        let ff = 2 * d * self.d_inner + self.d_inner + d;
        let block = 4 * d + mixer + ff;
        self.vocab_size * d + self.max_seq * d + self.n_layers * block + 2 * d
    }
}

impl LmModel {
    /// Fresh model with weights drawn from `N(0, 0.02²)` under `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.d_model;
        let token_embedding = normal_param(&[config.vocab_size, d], INIT_STD, &mut rng);
        let position_embedding = normal_param(&[config.max_seq, d], INIT_STD, &mut rng);
        let mut blocks = Vec::with_capacity(config.n_layers);
        for _ in 0..config.n_layers {
            let mixer = match config.layer_kind {
                LayerKind::Dispatcher => Mixer::Dispatcher(DispatcherParams::new(d, config.n_heads, config.max_seq, &mut rng)?),
                LayerKind::Msa => Mixer::Msa(MsaParams::new(d, config.n_heads, &mut rng)?),
            };
            blocks.push(Block {
                norm1: LayerNorm::new(d),
                mixer,
                norm2: LayerNorm::new(d),
                ff: FeedForward::new(d, config.d_inner, &mut rng),
            });
        }
        Ok(Self {
            config,
            token_embedding,
            position_embedding,
            blocks,
            final_norm: LayerNorm::new(d),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Every trainable tensor with a stable dotted name, in a fixed order.
    pub fn named_parameters(&self) -> Vec<(String, Tensor)> {
        let mut out = vec![
            ("token_embedding".to_string(), self.token_embedding.clone()),
            ("position_embedding".to_string(), self.position_embedding.clone()),
        ];
        for (i, block) in self.blocks.iter().enumerate() {
            let prefix = format!("blocks.{i}");
            block.norm1.collect(&format!("{prefix}.norm1"), &mut out);
            match &block.mixer {
                Mixer::Dispatcher(p) => p.collect(&format!("{prefix}.dispatcher"), &mut out),
                Mixer::Msa(p) => p.collect(&format!("{prefix}.msa"), &mut out),
            }
            block.norm2.collect(&format!("{prefix}.norm2"), &mut out);
            block.ff.collect(&format!("{prefix}.ff"), &mut out);
        }
        self.final_norm.collect("final_norm", &mut out);
        out
    }

    pub fn parameters(&self) -> Vec<Tensor> {
        self.named_parameters().into_iter().map(|(_, t)| t).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(Tensor::numel).sum()
    }

    pub fn zero_grad(&self) {
        self.parameters().iter().for_each(Tensor::zero_grad);
    }

    fn check_ids(&self, ids: &[usize], len: usize) -> Result<()> {
        let vocab = self.config.vocab_size;
        match ids.iter().position(|&id| id >= vocab) {
            Some(i) => Err(Error::TokenOutOfRange {
                batch: i / len,
                position: i % len,
                id: ids[i],
                vocab,
            }),
            None => Ok(()),
        }
    }

    /// Next-token logits `[batch, len, vocab]` for `batch` sequences of `len`
    /// ids laid out row-major. Passing an RNG enables training mode:
    /// residual dropout and dispatcher row dropout draw from it.
    pub fn logits(&self, ids: &[usize], batch: usize, len: usize, mut rng: Option<&mut dyn RngCore>) -> Result<Tensor> {
        if len == 0 || batch == 0 || ids.len() != batch * len {
            return Err(Error::Data(format!(
                "{} token ids do not form {batch} sequences of {len}",
                ids.len()
            )));
        }
        if len > self.config.max_seq {
            return Err(Error::Capacity {
                len,
                max: self.config.max_seq,
            });
        }
        self.check_ids(ids, len)?;
        let p = self.config.dropout_p;
        let tokens = Tensor::embedding(&self.token_embedding, ids, &[batch, len])?;
        let mut x = tokens.add(&self.position_embedding.narrow(0, 0, len)?)?;
        for block in &self.blocks {
            let h = block.norm1.forward(&x)?;
            let mixed = match (&block.mixer, rng.as_deref_mut()) {
                (Mixer::Dispatcher(params), Some(r)) => dispatcher_forward(&h, params, true, self.config.row_dropout(), r)?,
                (Mixer::Dispatcher(params), None) => {
                    params.forward_with(&h, &RowDropoutMask::keep_all(num_rows(len)?))?
                }
                (Mixer::Msa(params), _) => msa_forward(&h, params)?,
            };
            x = x.add(&residual_dropout(mixed, p, rng.as_deref_mut())?)?;
            let f = block.ff.forward(&block.norm2.forward(&x)?)?;
            x = x.add(&residual_dropout(f, p, rng.as_deref_mut())?)?;
        }
        let x = self.final_norm.forward(&x)?;
        Ok(x.matmul_bt(&self.token_embedding)?)
    }

    /// Mean next-token cross-entropy on `batch`.
    pub fn loss(&self, batch: &TokenBatch, rng: Option<&mut dyn RngCore>) -> Result<Tensor> {
        let logits = lm_forward(self, batch, rng)?;
        self.check_ids(&batch.targets, batch.len)?;
        Ok(logits.cross_entropy(&batch.targets)?)
    }
}

fn residual_dropout<R: Rng + ?Sized>(x: Tensor, p: f64, rng: Option<&mut R>) -> Result<Tensor> {
    match rng {
        Some(r) if p > 0.0 => Ok(x.dropout(p, r)?),
        _ => Ok(x),
    }
}

/// Logits for a token batch; training mode when `rng` is given.
pub fn lm_forward(model: &LmModel, batch: &TokenBatch, rng: Option<&mut dyn RngCore>) -> Result<Tensor> {
    model.logits(&batch.inputs, batch.batch, batch.len, rng)
}

/// Summed negative log-likelihood of `targets` under rows of `logits`.
fn summed_nll(logits: &[f64], vocab: usize, targets: &[usize]) -> f64 {
    targets
        .iter()
        .enumerate()
        .map(|(r, &t)| {
            let row = &logits[r * vocab..(r + 1) * vocab];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() - row[t]
        })
        .sum()
}

/// `exp` of the mean next-token NLL over `stream`, scored in consecutive
/// non-overlapping windows of `max_seq` predictions (the last one may be
/// shorter). Evaluation mode, no graph.
pub fn perplexity(model: &LmModel, stream: &[usize]) -> Result<f64> {
    if stream.len() < 2 {
        return Err(Error::Data(format!(
            "evaluation stream of {} tokens has nothing to predict",
            stream.len()
        )));
    }
    let window = model.config().max_seq;
    let vocab = model.config().vocab_size;
    let predictions = stream.len() - 1;
    let full = predictions / window;
    let mut total = 0.0;
    no_grad(|| -> Result<()> {
        let mut score = |starts: &[usize], len: usize| -> Result<()> {
            let mut inputs = Vec::with_capacity(starts.len() * len);
            let mut targets = Vec::with_capacity(starts.len() * len);
            for &s in starts {
                inputs.extend_from_slice(&stream[s..s + len]);
                targets.extend_from_slice(&stream[s + 1..s + len + 1]);
            }
            model.check_ids(&targets, len)?;
            let logits = model.logits(&inputs, starts.len(), len, None)?;
            total += summed_nll(&logits.data(), vocab, &targets);
            Ok(())
        };
        let starts: Vec<usize> = (0..full).map(|w| w * window).collect();
        for chunk in starts.chunks(EVAL_BATCH) {
            score(chunk, window)?;
        }
        let rest = predictions - full * window;
        if rest > 0 {
            score(&[full * window], rest)?;
        }
        Ok(())
    })?;
    Ok((total / predictions as f64).exp())
}

/// Extend `prompt` by `steps` tokens. Temperature 0 picks the most likely
/// token (lowest id on ties); otherwise tokens are sampled from the
/// softmax of `logits / temperature`.
pub fn generate(model: &LmModel, prompt: &[usize], steps: usize, temperature: f64, rng: &mut dyn RngCore) -> Result<Vec<usize>> {
    if prompt.is_empty() {
        return Err(Error::Data("generation needs a non-empty prompt".into()));
    }
    if !(temperature >= 0.0 && temperature.is_finite()) {
        return Err(Error::contract("generate", format!("temperature {temperature} must be finite and non-negative")));
    }
    let max = model.config().max_seq;
    if prompt.len() + steps > max {
        return Err(Error::Capacity {
            len: prompt.len() + steps,
            max,
        });
    }
    let vocab = model.config().vocab_size;
    let mut tokens = prompt.to_vec();
    no_grad(|| -> Result<()> {
        for _ in 0..steps {
            let logits = model.logits(&tokens, 1, tokens.len(), None)?;
            let data = logits.data();
            let last = &data[(tokens.len() - 1) * vocab..];
            tokens.push(pick(last, temperature, rng));
        }
        Ok(())
    })?;
    Ok(tokens)
}

fn pick(logits: &[f64], temperature: f64, rng: &mut dyn RngCore) -> usize {
    if temperature == 0.0 {
        let mut best = 0;
        for (i, &l) in logits.iter().enumerate() {
            if l > logits[best] {
                best = i;
            }
        }
        return best;
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|l| ((l - max) / temperature).exp()).collect();
    let mut u = rng.random::<f64>() * weights.iter().sum::<f64>();
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}
