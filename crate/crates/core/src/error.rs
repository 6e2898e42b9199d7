use thiserror::Error;

pub type Result<T> = std::result::Result<T, NsdtError>;

#[derive(Debug, Error)]
pub enum NsdtError {
    #[error("unknown dataset id `{0}` (expected one of higgs, census, credit, insurance)")]
    UnknownDataset(String),

    #[error("table is empty after cleaning ({0})")]
    EmptyTable(String),

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("feature `{0}` has fewer than two distinct values")]
    DegenerateFeature(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("split ratios must sum to 1 (got {0})")]
    InvalidRatios(f64),

    #[error("noise configuration selects zero features")]
    NoFeaturesSelected,

    #[error("{0} split is empty")]
    EmptySplit(&'static str),

    #[error("tree depth must be at least 1")]
    InvalidDepth,

    #[error("pad length {pad} is shorter than the longest rule ({longest})")]
    PadTooShort { pad: usize, longest: usize },

    #[error("rule set is empty")]
    EmptyRuleSet,

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("code {code} out of range for feature {feature} (cardinality {cardinality})")]
    CodeOutOfRange {
        feature: usize,
        code: u32,
        cardinality: usize,
    },

    #[error("training diverged at step {step}: loss = {loss}")]
    Divergence { step: usize, loss: f64 },

    #[error("class {0} is absent from the training split")]
    MissingClass(u8),

    #[error("k = {k} exceeds the training size {n}")]
    KTooLarge { k: usize, n: usize },

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("malformed input: {0}")]
    Format(String),

    #[error("missing source file {0}")]
    MissingSource(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),

    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),
}
