//! Greedy and sampled continuations from a briefly trained character model.

use std::path::Path;

use dispatcher::corpus::{preprocess, Corpus, TokenizerMode};
use dispatcher::model::generate;
use dispatcher::trainer::{train, TrainConfig};
use dispatcher::{LmModel, ModelConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> dispatcher::Result<()> {
    let corpus = Corpus::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("data/classics"), TokenizerMode::Char, 1, None, None)?;
    let model = LmModel::new(ModelConfig {
        d_model: 64,
        d_inner: 128,
        n_layers: 2,
        max_seq: 128,
        vocab_size: corpus.vocab.len(),
        ..ModelConfig::default()
    })?;
    let cfg = TrainConfig {
        seq_len: 128,
        steps: 200,
        warmup_steps: 20,
        ..TrainConfig::default()
    };
    train(&model, &corpus.train.ids, None, &cfg)?;

    let prompt = corpus.vocab.encode(&preprocess(b"Alice was ", TokenizerMode::Char)?);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for temperature in [0.0, 0.7, 1.0] {
        let ids = generate(&model, &prompt, 80, temperature, &mut rng)?;
        println!("T={temperature}: {:?}", corpus.vocab.render(&ids, TokenizerMode::Char)?);
    }
    Ok(())
}
