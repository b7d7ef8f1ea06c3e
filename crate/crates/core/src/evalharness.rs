//! Benchmark metrics: pass@1 averaged over samples, mean generation length
//! and the length reduction against a baseline model.
//!
//! Values are carried at full precision; only [`render_report`] rounds.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("item {0} has no samples")]
    EmptySamples(String),
    #[error("item {0} has a sample with token_count 0")]
    ZeroLength(String),
    #[error("no evaluation records")]
    EmptyRecords,
    #[error("baseline {name} must be positive and finite, got {value}")]
    InvalidBaseline { name: &'static str, value: f64 },
}

pub type Result<T> = std::result::Result<T, EvalError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalSample {
    pub correct: bool,
    pub token_count: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub item_id: String,
    pub samples: Vec<EvalSample>,
}

impl EvalRecord {
    pub fn new(item_id: impl Into<String>, samples: Vec<EvalSample>) -> Result<Self> {
        let r = Self {
            item_id: item_id.into(),
            samples,
        };
        r.check()?;
        Ok(r)
    }

    fn check(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(EvalError::EmptySamples(self.item_id.clone()));
        }
        if self.samples.iter().any(|s| s.token_count == 0) {
            return Err(EvalError::ZeroLength(self.item_id.clone()));
        }
        Ok(())
    }
}

/// Mean correctness over the record's samples.
pub fn pass_at_1_avg(record: &EvalRecord) -> Result<f64> {
    if record.samples.is_empty() {
        return Err(EvalError::EmptySamples(record.item_id.clone()));
    }
    let hits = record.samples.iter().filter(|s| s.correct).count();
    Ok(hits as f64 / record.samples.len() as f64)
}

/// `100 (baseline - measured) / baseline`; positive when `measured` is shorter.
pub fn reduction_pct(baseline_length: f64, measured_length: f64) -> f64 {
    100.0 * (baseline_length - measured_length) / baseline_length
}

/// How [`MetricsReport::avg_length`] weights records.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum LengthAveraging {
    /// Every sample counts once, so records with more samples weigh more.
    #[default]
    PerSample,
    /// Mean of per-record mean lengths.
    PerRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Fraction in `[0, 1]`.
    pub accuracy: f64,
    pub avg_length: f64,
    pub baseline_length: Option<f64>,
    /// Present exactly when `baseline_length` is.
    pub reduction_pct: Option<f64>,
    /// `accuracy - baseline accuracy`, as a fraction.
    pub delta_accuracy: Option<f64>,
}

impl MetricsReport {
    /// A report from already aggregated numbers.
    pub fn from_summary(accuracy: f64, avg_length: f64, baseline_length: Option<f64>) -> Result<Self> {
        if let Some(b) = baseline_length {
            check_positive("length", b)?;
        }
        Ok(Self {
            accuracy,
            avg_length,
            baseline_length,
            reduction_pct: baseline_length.map(|b| reduction_pct(b, avg_length)),
            delta_accuracy: None,
        })
    }

    pub fn with_baseline_accuracy(mut self, baseline_accuracy: f64) -> Self {
        self.delta_accuracy = Some(self.accuracy - baseline_accuracy);
        self
    }
}

fn check_positive(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(EvalError::InvalidBaseline { name, value })
    }
}

/// Sample-weighted metrics; see [`dataset_metrics_with`].
pub fn dataset_metrics(records: &[EvalRecord], baseline_length: Option<f64>) -> Result<MetricsReport> {
    dataset_metrics_with(records, baseline_length, LengthAveraging::PerSample)
}

/// Accuracy is the mean of per-record pass@1; length follows `averaging`.
pub fn dataset_metrics_with(
    records: &[EvalRecord],
    baseline_length: Option<f64>,
    averaging: LengthAveraging,
) -> Result<MetricsReport> {
    if records.is_empty() {
        return Err(EvalError::EmptyRecords);
    }
    let mut acc = 0.0;
    for r in records {
        r.check()?;
        acc += pass_at_1_avg(r)?;
    }
    let record_total = |r: &EvalRecord| r.samples.iter().map(|s| s.token_count as u64).sum::<u64>();
    let avg_length = match averaging {
        LengthAveraging::PerSample => {
            let tokens: u64 = records.iter().map(record_total).sum();
            let n: usize = records.iter().map(|r| r.samples.len()).sum();
            tokens as f64 / n as f64
        }
        LengthAveraging::PerRecord => {
            records
                .iter()
                .map(|r| record_total(r) as f64 / r.samples.len() as f64)
                .sum::<f64>()
                / records.len() as f64
        }
    };
    MetricsReport::from_summary(acc / records.len() as f64, avg_length, baseline_length)
}

/// Table footer: the summed accuracy change and the mean length change.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportTotals {
    /// Sum of accuracy deltas in percentage points.
    pub total_delta_acc_pp: Option<f64>,
    /// Mean of `-reduction_pct` over benchmarks with a baseline.
    pub avg_delta_len_pct: Option<f64>,
}

pub fn report_totals(reports: &[(String, MetricsReport)]) -> ReportTotals {
    let deltas: Vec<f64> = reports.iter().filter_map(|(_, r)| r.delta_accuracy).collect();
    let reductions: Vec<f64> = reports.iter().filter_map(|(_, r)| r.reduction_pct).collect();
    ReportTotals {
        total_delta_acc_pp: (!deltas.is_empty()).then(|| 100.0 * deltas.iter().sum::<f64>()),
        avg_delta_len_pct: (!reductions.is_empty())
            .then(|| -reductions.iter().sum::<f64>() / reductions.len() as f64),
    }
}

fn signed(v: f64) -> String {
    // keep "-0.00" from appearing for tiny negative values
    let r = (v * 100.0).round() / 100.0;
    if r == 0.0 {
        "0.00".to_owned()
    } else {
        format!("{r:+.2}")
    }
}

/// Markdown table in the `Acc(Δ) | Len(Δ%)` layout, one row per benchmark in
/// input order, then a footer with the total accuracy change and the average
/// length change. Cells without a baseline read `-`.
pub fn render_report(reports: &[(String, MetricsReport)]) -> String {
    let mut out = String::new();
    out.push_str("| Benchmark | Acc (Δ) | Len (Δ%) |\n");
    out.push_str("|---|---:|---:|\n");
    for (name, r) in reports {
        let acc_delta = r.delta_accuracy.map_or("-".to_owned(), |d| signed(100.0 * d));
        let len_delta = r.reduction_pct.map_or("-".to_owned(), |p| format!("{}%", signed(-p)));
        let _ = writeln!(
            out,
            "| {name} | {:.2} ({acc_delta}) | {:.0} ({len_delta}) |",
            100.0 * r.accuracy,
            r.avg_length
        );
    }
    let totals = report_totals(reports);
    let _ = writeln!(
        out,
        "| Total / Avg | {} | {} |",
        totals.total_delta_acc_pp.map_or("-".to_owned(), signed),
        totals
            .avg_delta_len_pct
            .map_or("-".to_owned(), |p| format!("{}%", signed(p)))
    );
    out
}

pub const METRICS_CSV_HEADER: &str = "benchmark,acc,len,delta_acc,delta_len_pct";

/// Full-precision rows: accuracy and its delta in percent, length change as
/// a signed percentage. Missing values are empty fields.
pub fn write_metrics_csv<W: Write>(reports: &[(String, MetricsReport)], mut out: W) -> io::Result<()> {
    writeln!(out, "{METRICS_CSV_HEADER}")?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for (name, r) in reports {
        writeln!(
            out,
            "{name},{},{},{},{}",
            100.0 * r.accuracy,
            r.avg_length,
            opt(r.delta_accuracy.map(|d| 100.0 * d)),
            opt(r.reduction_pct.map(|p| -p)),
        )?;
    }
    Ok(())
}

/// One JSON record per non-blank line.
pub fn parse_eval_records<R: BufRead>(input: R) -> Result<Vec<EvalRecord>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| EvalError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: EvalRecord = serde_json::from_str(&line).map_err(|e| EvalError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        rec.check()?;
        out.push(rec);
    }
    Ok(out)
}

pub fn read_eval_records(path: impl AsRef<Path>) -> Result<Vec<EvalRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| EvalError::Io {
        path: path.to_owned(),
        source,
    })?;
    parse_eval_records(BufReader::new(file))
}

pub fn write_eval_records<W: Write>(records: &[EvalRecord], mut out: W) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, samples: &[(bool, u32)]) -> EvalRecord {
        EvalRecord::new(
            id,
            samples
                .iter()
                .map(|&(correct, token_count)| EvalSample { correct, token_count })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn pass_at_1_examples() {
        let half: Vec<(bool, u32)> = (0..16).map(|i| (i % 2 == 0, 10)).collect();
        assert_eq!(pass_at_1_avg(&rec("a", &half)).unwrap(), 0.5);
        assert_eq!(pass_at_1_avg(&rec("b", &[(true, 3)])).unwrap(), 1.0);
        assert!(EvalRecord::new("c", vec![]).is_err());
    }

    #[test]
    fn reductions_match_table_values() {
        let r = MetricsReport::from_summary(0.92, 1813.0, Some(4223.0)).unwrap();
        assert!((r.reduction_pct.unwrap() - 57.0684347620).abs() < 1e-9);
        let r = MetricsReport::from_summary(0.8976, 483.0, Some(558.0)).unwrap();
        assert!((r.reduction_pct.unwrap() - 13.4408602151).abs() < 1e-9);
        assert_eq!(reduction_pct(700.0, 700.0), 0.0);
        assert!(MetricsReport::from_summary(0.5, 1.0, Some(0.0)).is_err());
    }

    #[test]
    fn averaging_modes() {
        let rs = vec![rec("a", &[(true, 10), (false, 20), (true, 30)]), rec("b", &[(false, 100)])];
        let s = dataset_metrics(&rs, None).unwrap();
        assert_eq!(s.avg_length, 40.0);
        assert!((s.accuracy - 1.0 / 3.0).abs() < 1e-15);
        assert!(s.reduction_pct.is_none());
        let r = dataset_metrics_with(&rs, Some(120.0), LengthAveraging::PerRecord).unwrap();
        assert_eq!(r.avg_length, 60.0);
        assert_eq!(r.reduction_pct, Some(50.0));
        assert!(matches!(dataset_metrics(&[], None), Err(EvalError::EmptyRecords)));
    }

    #[test]
    fn render_without_baselines_uses_dashes() {
        let r = MetricsReport::from_summary(0.5, 12.4, None).unwrap();
        let table = render_report(&[("toy".into(), r)]);
        assert!(table.contains("| toy | 50.00 (-) | 12 (-) |"), "{table}");
        assert!(table.contains("| Total / Avg | - | - |"));
    }

    #[test]
    fn render_single_benchmark() {
        let r = MetricsReport::from_summary(0.92, 1813.0, Some(4223.0))
            .unwrap()
            .with_baseline_accuracy(0.922);
        let table = render_report(&[("MATH-500".into(), r)]);
        assert!(table.contains("| MATH-500 | 92.00 (-0.20) | 1813 (-57.07%) |"), "{table}");
        assert!(table.contains("| Total / Avg | -0.20 | -57.07% |"));
        assert_eq!(table.lines().count(), 4);
    }

    #[test]
    fn csv_has_full_precision() {
        let r = MetricsReport::from_summary(0.5, 483.0, Some(558.0)).unwrap();
        let mut buf = Vec::new();
        write_metrics_csv(&[("gsm8k".into(), r)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().nth(1).unwrap(), "gsm8k,50,483,,-13.440860215053764");
    }

    #[test]
    fn eval_jsonl_round_trips() {
        let rs = vec![rec("q1", &[(true, 4), (false, 9)])];
        let mut buf = Vec::new();
        write_eval_records(&rs, &mut buf).unwrap();
        assert_eq!(parse_eval_records(&buf[..]).unwrap(), rs);
        let bad = b"{\"item_id\":\"x\",\"samples\":[]}\n";
        assert!(matches!(parse_eval_records(&bad[..]), Err(EvalError::EmptySamples(_))));
        assert!(matches!(parse_eval_records(&b"{oops\n"[..]), Err(EvalError::Parse { line: 1, .. })));
    }
}
