//! Trains a small character-level model on the bundled corpus, writes a
//! checkpoint and a loss log, and scores the test split.
//!
//! `cargo run --release --example train_char_model -- msa 400`

use std::path::Path;

use dispatcher::corpus::{unigram_perplexity, Corpus, TokenizerMode};
use dispatcher::model::perplexity;
use dispatcher::trainer::{train, TrainConfig};
use dispatcher::{LayerKind, LmModel, ModelConfig};

fn main() -> dispatcher::Result<()> {
    let mut args = std::env::args().skip(1);
    let kind: LayerKind = args.next().as_deref().unwrap_or("dispatcher").parse()?;
    let steps = args.next().and_then(|s| s.parse().ok()).unwrap_or(300);

    let corpus = Corpus::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("data/classics"), TokenizerMode::Char, 1, None, None)?;
    let model = LmModel::new(ModelConfig {
        layer_kind: kind,
        d_model: 64,
        d_inner: 128,
        n_layers: 2,
        max_seq: 128,
        vocab_size: corpus.vocab.len(),
        ..ModelConfig::default()
    })?;
    let out = std::env::temp_dir().join(format!("dispatcher-example-{kind}"));
    std::fs::create_dir_all(&out).map_err(|e| dispatcher::Error::Data(e.to_string()))?;
    let cfg = TrainConfig {
        batch_size: 8,
        seq_len: 128,
        steps,
        warmup_steps: steps / 10,
        eval_every: (steps / 3).max(1),
        checkpoint_path: Some(out.join("model.ckpt")),
        loss_log: Some(out.join("loss.csv")),
        ..TrainConfig::default()
    };
    println!("{kind}: {} parameters, {} training characters", model.parameter_count(), corpus.train.ids.len());
    let report = train(&model, &corpus.train.ids, corpus.valid.as_ref().map(|v| v.ids.as_slice()), &cfg)?;
    for (step, ppl) in &report.evals {
        println!("step {step:>5}: validation perplexity {ppl:.3}");
    }
    let test = &corpus.test.as_ref().expect("test split").ids;
    println!(
        "test perplexity {:.3} (unigram baseline {:.3}) after {:.0}s; outputs in {}",
        perplexity(&model, test)?,
        unigram_perplexity(&corpus.train.ids, test, corpus.vocab.len()),
        report.seconds,
        out.display()
    );
    Ok(())
}
