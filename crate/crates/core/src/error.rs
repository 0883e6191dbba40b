//! Crate-wide error type and result alias.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration value or combination.
    #[error("config: {0}")]
    Config(String),

    /// A vector or block had the wrong length for the declared dimensions.
    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    Dimension {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    /// Appended frames do not continue the cached timeline.
    #[error("frame gap: chunk starts at frame {got}, cache expects {expected}")]
    FrameGap { expected: u32, got: u32 },

    /// More frames requested for eviction than the cache holds.
    #[error("over-eviction: asked to drop {requested} frames, cache holds {held}")]
    OverEviction { requested: usize, held: usize },

    /// Cache too short for the requested partition.
    #[error("cache holds {tokens} tokens, fewer than the {required} the partition needs")]
    CacheTooShort { tokens: usize, required: usize },

    /// Compression invoked while the window is below its maximum.
    #[error("window not full: {tokens} tokens cached, trigger is {trigger}")]
    WindowNotFull { tokens: usize, trigger: usize },

    /// Policy step invoked at a denoising step other than the first.
    #[error("policy step called at denoising step {step_index}; compression only runs at step 0")]
    WrongTimestep { step_index: usize },

    /// Ordering violation when computing the sink shift.
    #[error("inverted sink ordering: tail starts at frame {tail} before sink end {sink}")]
    InvertedSink { tail: i64, sink: i64 },

    /// Timestep not present in the model's denoising schedule.
    #[error("timestep {0} is not in the denoising schedule")]
    UnknownTimestep(u32),

    /// The selected query mode contributed no queries.
    #[error("query mode {mode} selected but the {missing} query set is empty")]
    EmptyQueries {
        mode: &'static str,
        missing: &'static str,
    },

    /// Index outside the addressed token range.
    #[error("token index {index} out of range for {len} tokens")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors that stem from user-supplied configuration rather
    /// than a broken invariant at runtime. The CLI maps these to exit 2.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Json(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
