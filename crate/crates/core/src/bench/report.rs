use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::TimingRecord;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("reports come from different workloads:\n  {a}\n  {b}")]
    Mismatched { a: String, b: String },
    #[error("baseline total is {0}, cannot compute a gain")]
    ZeroBaseline(f64),
    #[error("a table needs at least two reports, got {0}")]
    TooFew(usize),
    #[error("no timing records")]
    Empty,
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed report: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Per-step averages of one run. Each step contributes the rank with the
/// largest sim + reduce + transfer; components are that rank's values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: String,
    pub pipeline: String,
    pub clock: String,
    pub workload: String,
    pub steps: usize,
    pub ranks: usize,
    pub sim_ms: f64,
    pub reduce_ms: f64,
    pub transfer_ms: f64,
    pub total_ms: f64,
    /// Receiver rendering, outside the totals.
    pub render_ms: f64,
    pub bytes_per_step: f64,
    /// Filled when compared against a baseline.
    pub gain_percent: Option<f64>,
}

impl RunReport {
    pub fn from_records(
        mode: &str,
        pipeline: &str,
        clock: &str,
        workload: &str,
        records: &[TimingRecord],
    ) -> Result<RunReport, ReportError> {
        let mut by_step: BTreeMap<u64, Vec<&TimingRecord>> = BTreeMap::new();
        for r in records {
            by_step.entry(r.step).or_default().push(r);
        }
        if by_step.is_empty() {
            return Err(ReportError::Empty);
        }
        let (mut sim, mut reduce, mut transfer, mut render, mut bytes) = (0.0, 0.0, 0.0, 0.0, 0.0);
        let mut ranks = 0;
        for rows in by_step.values() {
            let mut crit = rows[0];
            for r in &rows[1..] {
                let later = (r.cluster_ms(), std::cmp::Reverse(r.rank)) > (crit.cluster_ms(), std::cmp::Reverse(crit.rank));
                if later {
                    crit = r;
                }
            }
            sim += crit.sim_ms;
            reduce += crit.reduce_ms;
            transfer += crit.transfer_ms;
            render += rows.iter().map(|r| r.render_ms).fold(0.0, f64::max);
            bytes += rows.iter().map(|r| r.bytes_sent as f64).sum::<f64>();
            ranks = ranks.max(rows.len());
        }
        let n = by_step.len() as f64;
        let (sim, reduce, transfer) = (sim / n, reduce / n, transfer / n);
        Ok(RunReport {
            mode: mode.to_string(),
            pipeline: pipeline.to_string(),
            clock: clock.to_string(),
            workload: workload.to_string(),
            steps: by_step.len(),
            ranks,
            sim_ms: sim,
            reduce_ms: reduce,
            transfer_ms: transfer,
            total_ms: sim + reduce + transfer,
            render_ms: render / n,
            bytes_per_step: bytes / n,
            gain_percent: None,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn save(&self, path: &Path) -> Result<(), ReportError> {
        std::fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<RunReport, ReportError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    /// Human-readable summary.
    pub fn describe(&self) -> String {
        format!(
            "{} / {} ({} clock, {} steps x {} ranks)\n  simulation {} ms\n  reduction {} ms\n  transfer {} ms\n  total {} ms\n  render {} ms\n  bytes/step {:.0}",
            self.pipeline,
            self.mode,
            self.clock,
            self.steps,
            self.ranks,
            format_ms(self.sim_ms),
            format_ms(self.reduce_ms),
            format_ms(self.transfer_ms),
            format_ms(self.total_ms),
            format_ms(self.render_ms),
            self.bytes_per_step
        )
    }
}

/// Gain of `b` over baseline `a`: 100 * (1 - total_b / total_a).
pub fn compare_runs(a: &RunReport, b: &RunReport) -> Result<f64, ReportError> {
    if a.workload != b.workload {
        return Err(ReportError::Mismatched {
            a: a.workload.clone(),
            b: b.workload.clone(),
        });
    }
    if !(a.total_ms > 0.0) {
        return Err(ReportError::ZeroBaseline(a.total_ms));
    }
    Ok(100.0 * (1.0 - b.total_ms / a.total_ms))
}

pub fn format_gain(g: f64) -> String {
    format!("{g:.2}%")
}

/// Whole milliseconds from 100 up, three significant digits below.
pub fn format_ms(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    if v.abs() >= 100.0 {
        return format!("{v:.0}");
    }
    let decimals = (2 - v.abs().log10().floor() as i32).max(0) as usize;
    format!("{v:.decimals$}")
}

/// Table with one column per report and rows Simulation, Reduction, Data
/// Transfer, Total and Gain. A report's gain is taken against the transit
/// report of the same workload, when there is one.
pub fn emit_table(reports: &[RunReport]) -> Result<String, ReportError> {
    if reports.len() < 2 {
        return Err(ReportError::TooFew(reports.len()));
    }
    let mut gains = Vec::with_capacity(reports.len());
    for r in reports {
        let baseline = reports
            .iter()
            .find(|b| b.mode == "transit" && b.workload == r.workload && !std::ptr::eq(*b, r));
        gains.push(match baseline {
            Some(b) => format_gain(compare_runs(b, r)?),
            None => String::new(),
        });
    }
    let header: Vec<String> = reports.iter().map(|r| format!("{} {}", r.pipeline, r.mode)).collect();
    let rows: Vec<(&str, Vec<String>)> = vec![
        ("Simulation Time (ms)", reports.iter().map(|r| format_ms(r.sim_ms)).collect()),
        ("Reduction Time (ms)", reports.iter().map(|r| format_ms(r.reduce_ms)).collect()),
        ("Data Transfer Time (ms)", reports.iter().map(|r| format_ms(r.transfer_ms)).collect()),
        ("Total Time (ms)", reports.iter().map(|r| format_ms(r.total_ms)).collect()),
        ("Total Gain", gains),
    ];
    let label_w = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0);
    let col_w: Vec<usize> = (0..reports.len())
        .map(|c| {
            rows.iter()
                .map(|(_, v)| v[c].len())
                .chain([header[c].len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    let _ = write!(out, "{:label_w$}", "");
    for (h, w) in header.iter().zip(&col_w) {
        let _ = write!(out, " | {h:>w$}");
    }
    out.push('\n');
    let _ = write!(out, "{}", "-".repeat(label_w));
    for w in &col_w {
        let _ = write!(out, "-+-{}", "-".repeat(*w));
    }
    out.push('\n');
    for (label, vals) in &rows {
        let _ = write!(out, "{label:label_w$}");
        for (v, w) in vals.iter().zip(&col_w) {
            let _ = write!(out, " | {v:>w$}");
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn write_csv(path: &Path, records: &[TimingRecord]) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<TimingRecord>, ReportError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(step: u64, rank: u32, sim: f64, reduce: f64, transfer: f64) -> TimingRecord {
        TimingRecord {
            step,
            rank,
            sim_ms: sim,
            reduce_ms: reduce,
            transfer_ms: transfer,
            ..Default::default()
        }
    }

    fn report(mode: &str, total_parts: (f64, f64, f64)) -> RunReport {
        RunReport::from_records(mode, "p", "modeled", "w", &[rec(0, 0, total_parts.0, total_parts.1, total_parts.2)])
            .unwrap()
    }

    #[test]
    fn critical_path_is_max_rank_per_step() {
        let rows = [
            rec(0, 0, 10.0, 1.0, 1.0),
            rec(0, 1, 5.0, 1.0, 20.0),
            rec(1, 0, 30.0, 0.0, 0.0),
            rec(1, 1, 1.0, 0.0, 0.0),
        ];
        let r = RunReport::from_records("hybrid", "p", "wall", "w", &rows).unwrap();
        // step 0 -> rank 1 (26), step 1 -> rank 0 (30)
        assert_eq!(r.sim_ms, (5.0 + 30.0) / 2.0);
        assert_eq!(r.transfer_ms, 20.0 / 2.0);
        assert_eq!(r.total_ms, (26.0 + 30.0) / 2.0);
        assert_eq!((r.steps, r.ranks), (2, 2));
    }

    #[test]
    fn gain_examples() {
        let a = report("transit", (19275.0, 0.0, 0.0));
        let b = report("hybrid", (16161.0, 0.0, 0.0));
        assert_eq!(format_gain(compare_runs(&a, &b).unwrap()), "16.16%");
        let c = report("hybrid", (19275.0, 0.0, 0.0));
        assert_eq!(format_gain(compare_runs(&a, &c).unwrap()), "0.00%");
        let mut other = b.clone();
        other.workload = "elsewhere".into();
        assert!(matches!(compare_runs(&a, &other), Err(ReportError::Mismatched { .. })));
    }

    #[test]
    fn number_formatting() {
        assert_eq!(format_ms(3415.0), "3415");
        assert_eq!(format_ms(16160.56), "16161");
        assert_eq!(format_ms(6.56), "6.56");
        assert_eq!(format_ms(48.7), "48.7");
        assert_eq!(format_ms(0.1234), "0.123");
        assert_eq!(format_ms(0.0), "0");
    }

    #[test]
    fn table_needs_two_reports() {
        let a = report("transit", (1.0, 0.0, 3415.0));
        assert!(matches!(emit_table(std::slice::from_ref(&a)), Err(ReportError::TooFew(1))));
        let b = report("hybrid", (1.0, 1.0, 6.56));
        let t = emit_table(&[a, b]).unwrap();
        let line = t.lines().find(|l| l.starts_with("Data Transfer")).unwrap();
        assert!(line.contains("3415") && line.contains("6.56"), "{line}");
    }

    #[test]
    fn csv_round_trip_and_columns() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let rows = vec![rec(0, 1, 1.5, 0.0, 2.0)];
        write_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "step,rank,sim_ms,reduce_ms,transfer_ms,render_ms,bytes_sent"
        );
        assert_eq!(read_csv(&path).unwrap(), rows);
    }
}
