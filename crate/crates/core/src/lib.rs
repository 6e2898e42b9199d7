//! Neural symbolic decision trees for tabular binary classification.
//!
//! A greedy decision tree is fitted on discretized data, its root-to-leaf
//! rules are turned into products of fuzzy relational nodes evaluated by small
//! learned operator networks, and the whole structure is fine-tuned by
//! gradient descent under relational regularizers. Trained thresholds decode
//! back into readable weighted rules.

pub mod baselines;
pub mod data;
pub mod decode;
pub mod error;
pub mod experiments;
pub mod fuzzy;
pub mod metrics;
pub mod regularizers;
pub mod training;
pub mod tree;

pub use error::{NsdtError, Result};
