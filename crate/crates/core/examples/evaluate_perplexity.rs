//! Perplexity of a checkpoint on the bundled test split. With no argument
//! it scores an untrained model, whose perplexity sits near the vocabulary
//! size.

use std::path::{Path, PathBuf};

use dispatcher::checkpoint;
use dispatcher::corpus::{Corpus, TokenizerMode};
use dispatcher::model::perplexity;
use dispatcher::{LmModel, ModelConfig};

fn main() -> dispatcher::Result<()> {
    let corpus = Corpus::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("data/classics"), TokenizerMode::Char, 1, None, None)?;
    let model = match std::env::args().nth(1) {
        Some(path) => checkpoint::load(&PathBuf::from(path))?,
        None => LmModel::new(ModelConfig {
            d_model: 32,
            d_inner: 32,
            n_layers: 1,
            vocab_size: corpus.vocab.len(),
            ..ModelConfig::default()
        })?,
    };
    let test = corpus.test.as_ref().expect("test split");
    println!(
        "{} model, vocabulary {}: test perplexity {:.3} over {} characters",
        model.config().layer_kind,
        model.config().vocab_size,
        perplexity(&model, &test.ids)?,
        test.ids.len()
    );
    Ok(())
}
