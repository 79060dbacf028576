//! Command-line harness for Fibonacci-grid spherical harmonic experiments.

pub mod args;
pub mod cache;
pub mod commands;
pub mod experiments;
pub mod report;
pub mod setup;

/// Process exit statuses.
pub mod exit {
    pub const OK: u8 = 0;
    /// Invalid configuration or any other error.
    pub const CONFIG: u8 = 1;
    /// `--assert` was given and an expected property did not hold.
    pub const ASSERTION: u8 = 2;
    /// The weight solver could not satisfy its constraints.
    pub const SOLVER: u8 = 3;
}

/// Exit status for an error: solver failures are told apart from everything else.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    let solver = err.chain().any(|e| {
        matches!(
            e.downcast_ref::<fibsh_core::Error>(),
            Some(fibsh_core::Error::SolveFailed { .. })
        )
    });
    if solver {
        exit::SOLVER
    } else {
        exit::CONFIG
    }
}
