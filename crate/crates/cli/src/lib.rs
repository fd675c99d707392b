//! Config-driven pipeline: generate, train, eval, bench and simulate.

pub mod config;
pub mod pipeline;

pub use config::RunConfig;
pub use pipeline::{cmd_bench, cmd_eval, cmd_generate, cmd_simulate, cmd_train};

/// One-line, machine-parsable failure description.
pub fn error_line(err: &gridpinn::Error) -> String {
    let detail = err.to_string().replace(['\n', '\r'], " ");
    format!("error code={} kind={} detail={:?}", err.exit_code(), err.kind(), detail)
}
