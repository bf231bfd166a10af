//! Command implementations for the `milpool` binary.
//!
//! Every command is deterministic given its flags and seed, and rerunning a
//! command overwrites byte-identical outputs. Configuration precedence is
//! flags over config file over built-in defaults, and the resolved config is
//! echoed into every output file.

pub mod commands;
pub mod compare;
pub mod config;
pub mod gradcheck;

pub use commands::{run_eval, run_generate, run_train, EvalArgs, GenerateArgs, TrainArgs};
pub use compare::{run_compare, CompareArgs, CompareOutput};
pub use config::{PoolingArg, PoolingFlags, TrainFlags};
pub use gradcheck::{run_gradcheck, GradcheckArgs, GradcheckReport};

/// Success.
pub const EXIT_OK: i32 = 0;
/// A check failed or a command hit a runtime error.
pub const EXIT_FAILURE: i32 = 1;
/// Bad flags or flag combinations.
pub const EXIT_USAGE: i32 = 2;

/// An invalid flag combination, reported with exit code [`EXIT_USAGE`].
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);
