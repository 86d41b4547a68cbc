//! Tokenises the bundled corpus both ways and reports vocabulary sizes and
//! out-of-vocabulary rates.

use std::path::Path;

use dispatcher::corpus::{unigram_perplexity, Corpus, TokenizerMode};

fn main() -> dispatcher::Result<()> {
    let prefix = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/classics");
    for (mode, cap) in [(TokenizerMode::Char, None), (TokenizerMode::Word, Some(5000))] {
        let corpus = Corpus::load(&prefix, mode, 1, cap, None)?;
        let test = corpus.test.as_ref().expect("test split");
        println!(
            "{mode}: vocabulary {}, train {} tokens, test {} tokens, test OOV {:.2}%, unigram perplexity {:.2}",
            corpus.vocab.len(),
            corpus.train.ids.len(),
            test.ids.len(),
            100.0 * test.oov_rate(),
            unigram_perplexity(&corpus.train.ids, &test.ids, corpus.vocab.len())
        );
        let head: Vec<&str> = (0..12).filter_map(|id| corpus.vocab.token(id)).collect();
        println!("  first ids: {head:?}");
    }
    Ok(())
}
