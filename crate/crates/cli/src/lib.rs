//! Command implementations behind the `emoseg` binary.
//!
//! Each `cmd_*` function is what the corresponding subcommand runs; the binary
//! only parses flags and maps errors to exit codes.

mod commands;
mod config;
mod fsutil;

pub use commands::{
    cmd_build_sup, cmd_eval, cmd_gen, cmd_gradcheck, cmd_infer, cmd_train, sup_dir_name, EvalOutput, GradcheckOutput,
    TrainOptions, TrainOutput, GRADCHECK_TOLERANCE,
};
pub use config::RunConfig;
pub use fsutil::write_atomic;

/// Version string recorded in run manifests.
pub fn version() -> String {
    format!("v{}", env!("CARGO_PKG_VERSION"))
}

/// Failure of a command, carrying its exit-code class.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] emoseg::Error),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    /// 1 usage, 2 data integrity, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        use emoseg::Error as E;
        match self {
            CliError::Usage(_) => 1,
            CliError::Numeric(_) => 3,
            CliError::Core(e) => match e {
                E::Config(_) | E::InvalidArgument(_) => 1,
                E::NonFinite { .. } => 3,
                E::Dimension { .. }
                | E::TapeConsumed
                | E::ConfigMismatch(_)
                | E::Format { .. }
                | E::Integrity(_)
                | E::Io { .. } => 2,
            },
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Internal parallelism cap from `EMOSEG_THREADS` (default 1).
pub fn threads_from_env() -> CliResult<usize> {
    match std::env::var("EMOSEG_THREADS") {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(CliError::Usage(format!("EMOSEG_THREADS must be a positive integer, got '{v}'"))),
        },
    }
}
