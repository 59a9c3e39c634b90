//! Command-line harness: config parsing, the experiment pipeline and
//! replayable runs.

pub mod config;
pub mod pipeline;
pub mod run;

pub use config::RunConfig;
pub use run::{execute, replay, run_job, Job, RunManifest};

/// Process exit status for an error: 1 for usage and configuration
/// problems, 2 for failures while running.
pub fn exit_code(err: &fedface_core::Error) -> i32 {
    match err {
        fedface_core::Error::Usage(_) | fedface_core::Error::Config(_) => 1,
        _ => 2,
    }
}
