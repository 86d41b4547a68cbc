//! Text ingestion: line-end markers, char or word tokens, vocabularies and
//! the `<prefix>.{train,valid,test}.txt` split convention.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const UNK: &str = "<UNK>";
pub const EOS: &str = "<EOS>";
pub const UNK_ID: usize = 0;
pub const EOS_ID: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenizerMode {
    /// One token per Unicode scalar value.
    Char,
    /// Whitespace-separated words.
    Word,
}

impl fmt::Display for TokenizerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TokenizerMode::Char => "char",
            TokenizerMode::Word => "word",
        })
    }
}

impl FromStr for TokenizerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "char" => Ok(TokenizerMode::Char),
            "word" => Ok(TokenizerMode::Word),
            other => Err(Error::config("tokenizer", format!("unknown mode {other:?} (expected char or word)"))),
        }
    }
}

/// Split UTF-8 text into surface tokens, with `<EOS>` after every
/// newline-terminated line. A trailing `\r` before the newline is dropped.
pub fn preprocess(bytes: &[u8], mode: TokenizerMode) -> Result<Vec<String>> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::InvalidUtf8 { offset: e.valid_up_to() })?;
    let mut out = Vec::new();
    let mut rest = text;
    while !rest.is_empty() {
        let (line, terminated) = match rest.find('\n') {
            Some(i) => {
                let line = &rest[..i];
                rest = &rest[i + 1..];
                (line.strip_suffix('\r').unwrap_or(line), true)
            }
            None => (std::mem::take(&mut rest), false),
        };
        match mode {
            TokenizerMode::Char => out.extend(line.chars().map(String::from)),
            TokenizerMode::Word => out.extend(line.split_whitespace().map(String::from)),
        }
        if terminated {
            out.push(EOS.to_string());
        }
    }
    Ok(out)
}

/// Token/id bijection with `<UNK>` = 0 and `<EOS>` = 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[UNK_ID] != UNK || tokens[EOS_ID] != EOS {
            return Err(Error::Data(format!("vocabulary must start with {UNK} and {EOS}")));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (id, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.contains('\n') {
                return Err(Error::Data(format!("vocabulary entry {id} is empty or spans lines")));
            }
            if index.insert(t.clone(), id).is_some() {
                return Err(Error::Data(format!("vocabulary entry {t:?} appears twice")));
            }
        }
        Ok(Self { tokens, index })
    }

    /// Keep the most frequent tokens of `stream`, ties broken by byte-wise
    /// order, dropping those seen fewer than `min_count` times. `max_size`
    /// caps the total size including the two reserved entries.
    pub fn build(stream: &[String], min_count: usize, max_size: Option<usize>) -> Result<Self> {
        if stream.is_empty() {
            return Err(Error::Data("cannot build a vocabulary from an empty stream".into()));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for t in stream {
            if t != UNK && t != EOS {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().filter(|&(_, c)| c >= min_count.max(1)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let room = max_size.map_or(usize::MAX, |m| m.saturating_sub(2));
        let tokens = [UNK, EOS]
            .into_iter()
            .chain(ranked.into_iter().take(room).map(|(t, _)| t))
            .map(String::from)
            .collect();
        Self::from_tokens(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn encode<S: AsRef<str>>(&self, stream: &[S]) -> Vec<usize> {
        stream.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Result<Vec<String>> {
        ids.iter()
            .enumerate()
            .map(|(position, &id)| {
                self.token(id).map(String::from).ok_or(Error::TokenOutOfRange {
                    batch: 0,
                    position,
                    id,
                    vocab: self.len(),
                })
            })
            .collect()
    }

    /// Readable text: `<EOS>` becomes a newline; words are joined by spaces.
    pub fn render(&self, ids: &[usize], mode: TokenizerMode) -> Result<String> {
        let mut out = String::new();
        let mut line_start = true;
        for t in self.decode(ids)? {
            if t == EOS {
                out.push('\n');
                line_start = true;
                continue;
            }
            if mode == TokenizerMode::Word && !line_start {
                out.push(' ');
            }
            out.push_str(&t);
            line_start = false;
        }
        Ok(out)
    }

    /// One token per line; the line index is the id.
    pub fn to_text(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let body = text.strip_suffix('\n').unwrap_or(text);
        Self::from_tokens(body.split('\n').map(String::from).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(Error::io(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(Error::io(path))?;
        let text = std::str::from_utf8(&bytes).map_err(|e| Error::InvalidUtf8 { offset: e.valid_up_to() })?;
        Self::from_text(text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

/// `<prefix>.<split>.txt`.
pub fn split_path(prefix: &Path, split: Split) -> PathBuf {
    let mut name = prefix.as_os_str().to_owned();
    name.push(format!(".{}.txt", split.name()));
    PathBuf::from(name)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenStream {
    pub ids: Vec<usize>,
    pub split: Split,
    /// Tokens that were not in the vocabulary and became `<UNK>`.
    pub unknown: usize,
}

impl TokenStream {
    pub fn encode(vocab: &Vocab, tokens: &[String], split: Split) -> Self {
        let ids = vocab.encode(tokens);
        let unknown = tokens.iter().filter(|t| !vocab.contains(t)).count();
        Self { ids, split, unknown }
    }

    /// Fraction of tokens outside the vocabulary.
    pub fn oov_rate(&self) -> f64 {
        if self.ids.is_empty() {
            0.0
        } else {
            self.unknown as f64 / self.ids.len() as f64
        }
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub mode: TokenizerMode,
    pub vocab: Vocab,
    pub train: TokenStream,
    pub valid: Option<TokenStream>,
    pub test: Option<TokenStream>,
}

fn read_tokens(path: &Path, mode: TokenizerMode) -> Result<Vec<String>> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    preprocess(&bytes, mode).map_err(|e| match e {
        Error::InvalidUtf8 { offset } => Error::Data(format!("{}: invalid UTF-8 at byte offset {offset}", path.display())),
        other => other,
    })
}

impl Corpus {
    /// Read the splits under `prefix`. The training split is required; the
    /// vocabulary comes from it alone unless `vocab` is supplied.
    pub fn load(prefix: &Path, mode: TokenizerMode, min_count: usize, max_size: Option<usize>, vocab: Option<Vocab>) -> Result<Self> {
        let train_tokens = read_tokens(&split_path(prefix, Split::Train), mode)?;
        let vocab = match vocab {
            Some(v) => v,
            None => Vocab::build(&train_tokens, min_count, max_size)?,
        };
        let train = TokenStream::encode(&vocab, &train_tokens, Split::Train);
        let optional = |split| -> Result<Option<TokenStream>> {
            let path = split_path(prefix, split);
            if !path.exists() {
                return Ok(None);
            }
            Ok(Some(TokenStream::encode(&vocab, &read_tokens(&path, mode)?, split)))
        };
        Ok(Self {
            mode,
            train,
            valid: optional(Split::Valid)?,
            test: optional(Split::Test)?,
            vocab,
        })
    }

    pub fn split(&self, split: Split) -> Option<&TokenStream> {
        match split {
            Split::Train => Some(&self.train),
            Split::Valid => self.valid.as_ref(),
            Split::Test => self.test.as_ref(),
        }
    }
}

/// Perplexity of the add-one smoothed unigram distribution of `train`
/// evaluated on `eval`.
pub fn unigram_perplexity(train: &[usize], eval: &[usize], vocab: usize) -> f64 {
    let mut counts = vec![1.0; vocab];
    for &id in train {
        counts[id] += 1.0;
    }
    let total: f64 = counts.iter().sum();
    let nll: f64 = eval.iter().map(|&id| -(counts[id] / total).ln()).sum();
    (nll / eval.len() as f64).exp()
}
