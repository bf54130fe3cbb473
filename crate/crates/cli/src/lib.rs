//! Batch driver for the demonstration pipeline. Every subcommand of the
//! `teleop` binary is a plain function here so it can be called from tests.

pub mod commands;

pub use commands::{
    cmd_compensate, cmd_eval, cmd_generate, cmd_process, cmd_sweep, cmd_validate, CliError, CompensateSummary,
    EvalSummary, GenerateSummary, ProcessSummary, ValidateSummary,
};
