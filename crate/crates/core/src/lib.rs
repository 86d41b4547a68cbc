pub mod bench;
pub mod checkpoint;
pub mod checks;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod dispatcher;
pub mod error;
pub mod layers;
pub mod model;
pub mod msa;
pub mod trainer;

pub use config::{LayerKind, ModelConfig};
pub use error::{Error, Result};
pub use model::LmModel;
