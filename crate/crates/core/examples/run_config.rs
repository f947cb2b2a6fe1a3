//! Runs an experiment config and streams the report CSV to stdout.
//!
//! `cargo run --release --example run_config -- examples/configs/desk_sq.toml`

use std::path::PathBuf;

use adasub::cli::{run_config, write_csv, ExperimentConfig};
use adasub::Result;

fn main() -> Result<()> {
    let path = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples/configs/fixed_bernoulli.toml")
    });
    let config = ExperimentConfig::load(&path)?;
    let outcome = run_config(&config)?;
    eprintln!("{:#?}", outcome.report.summary);
    for check in &outcome.checks {
        eprintln!("{}: {} ({})", check.name, if check.passed { "ok" } else { "failed" }, check.detail);
    }
    write_csv(&outcome.report, std::io::stdout().lock())
}
