//! Editing-based encoder-decoder for cross-domain, context-dependent
//! text-to-SQL generation, with the evaluation and edit-analysis tooling
//! around it.

pub mod autodiff;
pub mod corpus;
pub mod decoder;
pub mod edit_ops;
pub mod embedding;
pub mod encoder;
pub mod error;
pub mod interaction;
pub mod model;
pub mod params;
pub mod recurrent;
pub mod sql;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result, SqlError};
