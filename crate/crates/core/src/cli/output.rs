//! CSV and summary emission.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::harness::{ExperimentReport, Row};

/// Column order of the report CSV.
pub const CSV_HEADER: [&str; 11] = [
    "trial",
    "t",
    "query_id",
    "mechanism",
    "answer",
    "sample_value",
    "truth",
    "bias",
    "threshold",
    "within_bound",
    "cost",
];

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "ADASUB_OUT_DIR";

const SIGNIFICANT: usize = 12;

/// Plain decimal with 12 significant digits, trailing zeros trimmed.
/// Non-finite values print as `NaN`, `inf`, `-inf`.
pub fn format_number(x: f64) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.*e}", SIGNIFICANT - 1, x);
    let exp: i32 = sci.rsplit('e').next().and_then(|e| e.parse().ok()).unwrap_or(0);
    let decimals = (SIGNIFICANT as i32 - 1 - exp).max(0) as usize;
    let mut s = format!("{x:.decimals$}");
    if s.contains('.') {
        s.truncate(s.trim_end_matches('0').trim_end_matches('.').len());
    }
    s
}

fn record(row: &Row) -> [String; 11] {
    [
        row.trial.to_string(),
        row.t.to_string(),
        row.query_id.clone(),
        row.mechanism.clone(),
        format_number(row.answer),
        format_number(row.sample_value),
        format_number(row.truth),
        format_number(row.bias),
        format_number(row.threshold),
        row.within_bound.to_string(),
        format_number(row.cost),
    ]
}

pub fn write_csv<W: Write>(report: &ExperimentReport, out: W) -> Result<()> {
    let io = |e: csv::Error| Error::Precondition(format!("writing CSV: {e}"));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER).map_err(io)?;
    for row in &report.rows {
        w.write_record(record(row)).map_err(io)?;
    }
    w.flush().map_err(|e| Error::Precondition(format!("writing CSV: {e}")))
}

/// `--out`, then the config's `output`, then `$ADASUB_OUT_DIR/<stem>.csv`,
/// then `./<stem>.csv`.
pub fn resolve_output(flag: Option<&Path>, configured: Option<&Path>, env_dir: Option<&Path>, stem: &str) -> PathBuf {
    let file = format!("{stem}.csv");
    flag.or(configured)
        .map(Path::to_path_buf)
        .or_else(|| env_dir.map(|d| d.join(&file)))
        .unwrap_or_else(|| PathBuf::from(file))
}

/// `<dir>/<stem>.summary.json` next to a CSV path.
pub fn summary_path(csv: &Path) -> PathBuf {
    let stem = csv.file_stem().map_or_else(|| "report".into(), |s| s.to_string_lossy().into_owned());
    csv.with_file_name(format!("{stem}.summary.json"))
}
