pub mod corpus;
mod error;
pub mod eval;
pub mod lexicon;
pub mod seq2seq;
pub mod style;

pub use error::{Error, Result};
