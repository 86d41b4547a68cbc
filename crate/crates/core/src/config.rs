use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dispatcher::num_rows;
use crate::error::{Error, Result};

/// Which sequence-mixing layer the blocks use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Dispatcher,
    Msa,
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LayerKind::Dispatcher => "dispatcher",
            LayerKind::Msa => "msa",
        })
    }
}

impl FromStr for LayerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dispatcher" => Ok(LayerKind::Dispatcher),
            "msa" => Ok(LayerKind::Msa),
            other => Err(Error::config("layer", format!("unknown layer kind {other:?} (expected dispatcher or msa)"))),
        }
    }
}

/// Architecture and regularisation settings of a language model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layer_kind: LayerKind,
    pub d_model: usize,
    /// Feed-forward hidden width.
    pub d_inner: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub max_seq: usize,
    pub vocab_size: usize,
    /// Residual dropout probability.
    pub dropout_p: f64,
    /// Dispatcher row dropout probability; `dropout_p` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub row_dropout_p: Option<f64>,
    /// Seed for parameter initialisation.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layer_kind: LayerKind::Dispatcher,
            d_model: 128,
            d_inner: 128,
            n_layers: 4,
            n_heads: 1,
            max_seq: 256,
            vocab_size: 256,
            dropout_p: 0.1,
            row_dropout_p: None,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        for (field, value) in [
            ("d_model", self.d_model),
            ("d_inner", self.d_inner),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("max_seq", self.max_seq),
            ("vocab_size", self.vocab_size),
        ] {
            if value == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::config(
                "n_heads",
                format!("d_model {} is not divisible by {} heads", self.d_model, self.n_heads),
            ));
        }
        for (field, p) in [("dropout_p", Some(self.dropout_p)), ("row_dropout_p", self.row_dropout_p)] {
            if let Some(p) = p.filter(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::config(field, format!("{p} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn row_dropout(&self) -> f64 {
        self.row_dropout_p.unwrap_or(self.dropout_p)
    }

    /// Shift-and-sum rows needed for the longest sequence.
    pub fn max_rows(&self) -> usize {
        num_rows(self.max_seq).unwrap_or(0)
    }
}
