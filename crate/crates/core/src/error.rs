use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Crate-wide error type. Variants are grouped roughly by the module that
/// raises them; `Stage` wraps any of them with the experiment stage name so
/// the CLI can print one actionable line and exit nonzero.
#[derive(Debug, Error)]
pub enum Error {
    // data
    #[error("series is empty")]
    EmptySeries,
    #[error("timestamps are not strictly increasing at index {0}")]
    NonMonotonicTimestamps(usize),
    #[error("timestamp at index {index} is not on the {step_minutes}-minute grid")]
    OffGrid { index: usize, step_minutes: i64 },
    #[error("channel length mismatch: {0} vs {1}")]
    ChannelLengthMismatch(usize, usize),
    #[error("constant series (n={n}, value={value}): standardization undefined")]
    ConstantSeries { n: usize, value: f64 },
    #[error("split fraction {0} outside (0, 1)")]
    BadSplitFraction(f64),
    #[error("horizon {0} outside supported range 6..=24")]
    BadHorizon(usize),
    #[error("lag count must be >= 1, got {0}")]
    BadLagCount(usize),
    #[error("series too short: {len} points cannot host lags={lags} horizon={horizon}")]
    TooShort { len: usize, lags: usize, horizon: usize },
    #[error("augmentation factor must be >= 1, got {0}")]
    BadAugmentFactor(usize),
    #[error("no overlapping timestamps between the two series")]
    NoOverlap,

    // nn / recurrent
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("gradient check requires a deterministic loss; disable dropout first (rate={0})")]
    NondeterministicLoss(f64),
    #[error("model container format version {found} unsupported (expected {expected})")]
    BadFormatVersion { found: u32, expected: u32 },
    #[error("model container holds a {found:?} network, expected {expected:?}")]
    WrongContainerKind { expected: String, found: String },

    // transfer / distill
    #[error("distribution support mismatch: q is zero where p is positive (index {0})")]
    SupportMismatch(usize),
    #[error("distribution does not sum to 1 (sum={0})")]
    NotNormalized(f64),
    #[error("distributions differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("sample set is empty")]
    EmptySample,
    #[error("samples differ in dimension: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("mixing weight {0} outside [0, 1]")]
    BadMixWeight(f64),
    #[error("relative-error denominator floor must be > 0, got {0}")]
    BadDenomFloor(f64),

    // pipeline
    #[error("too few relation windows: {got} < {need}")]
    TooFewWindows { got: usize, need: usize },

    // synth
    #[error("duration must be >= {min} days, got {got}")]
    TooShortDuration { got: u32, min: u32 },
    #[error("autoregressive weather process is not stationary ({0})")]
    NonStationary(String),
    #[error("invalid turbine spec: {0}")]
    BadTurbineSpec(String),

    // evaluate
    #[error("rank table needs at least 2 rows and 2 columns, got {rows}x{cols}")]
    BadRankTable { rows: usize, cols: usize },
    #[error("rising rates undefined: rmse[{0}] is zero")]
    ZeroRmseStep(usize),
    #[error("inputs are empty or mismatched: {0}")]
    BadMetricInput(&'static str),
    #[error("capacity must be > 0, got {0}")]
    BadCapacity(f64),

    // run / io
    #[error("config error: {0}")]
    Config(String),
    #[error("[{stage}] {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("toml parse error: {0}")]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("timestamp parse error at line {line}: {value}")]
    BadTimestamp { line: usize, value: String },
}

impl Error {
    /// Tag an error with the stage it occurred in. Idempotent on purpose:
    /// the innermost tag is the most specific and wins.
    pub fn at_stage(self, stage: &'static str) -> Error {
        match self {
            e @ Error::Stage { .. } => e,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Error {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Extension for tagging results with a stage name.
pub trait StageExt<T> {
    fn stage(self, name: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, name: &'static str) -> Result<T> {
        self.map_err(|e| e.at_stage(name))
    }
}
