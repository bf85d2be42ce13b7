//! Experiment harness: run configuration, lockstep multi-rank runs, timing
//! CSV, per-run reports and the comparison table.

mod config;
mod report;
mod run;
mod timing;

pub use config::{ClockSettings, ConfigError, ReceiverMode, RunConfig};
pub use report::{compare_runs, emit_table, format_gain, format_ms, read_csv, write_csv, ReportError, RunReport};
pub use run::{
    load_records, receive, run_experiment, write_receiver_csv, ReceivedStep, ReceiverSetup, RunOptions, RunOutcome,
    CHANNEL, RECEIVER_CSV, REPORT_JSON, TIMINGS_CSV,
};
pub use timing::{ClockMode, TimingRecord};
