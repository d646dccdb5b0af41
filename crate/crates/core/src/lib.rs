//! UniConv: multi-domain dialogue state tracking and joint dialogue act and
//! response generation over a shared attention backbone.

pub mod ablation;
pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod delex;
pub mod error;
pub mod inference;
pub mod kb;
pub mod metrics;
pub mod model;
pub mod ontology;
pub mod synth;
pub mod text;
pub mod trainer;
pub mod vocab;

pub use error::{Error, Result};
