//! Differentiable rule model: operator networks, embeddings and the rule head.

pub mod checkpoint;
pub mod model;
pub mod operator;
pub mod params;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use model::{EmbRef, FuzzyModel, ModelConfig, ResponseTables, SlotRef, ThresholdNode, Variant};
pub use operator::{OpCache, OpKind, OperatorModule, OUTPUT_MARGIN};
pub use params::{ParamStore, TensorId};
