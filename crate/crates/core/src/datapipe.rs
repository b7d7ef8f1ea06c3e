//! Rollout ingestion, pass-rate difficulty labels, shortest/longest pair
//! construction and per-split statistics.
//!
//! A rollout record holds `k` sampled outputs for one question. Its pass
//! rate `s = correct / k` labels the question:
//!
//! ```text
//! easy       s = 1
//! medium     0 < s < 1
//! difficult  s = 0
//! ```
//!
//! The preference pair for a record takes the shortest output as chosen and
//! the longest as rejected, regardless of correctness.

use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Tolerance for cross-checking a pass rate supplied in the input.
pub const PASS_RATE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: question {question_id}: {message}")]
    Validation {
        line: usize,
        question_id: String,
        message: String,
    },
    #[error("invalid record {question_id}: {message}")]
    InvalidRecord { question_id: String, message: String },
    #[error("question {question_id} has {count} output(s); a pair needs at least 2")]
    NotEnoughOutputs { question_id: String, count: usize },
    #[error("pass rate needs at least one output")]
    EmptyOutputs,
    #[error("pass rate {0} is outside [0, 1]")]
    PassRateOutOfRange(f64),
    #[error("unknown split label `{0}` (expected easy, medium or difficult)")]
    UnknownSplit(String),
}

impl DataError {
    fn io(path: &Path, source: io::Error) -> Self {
        DataError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, DataError>;

/// One sampled response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputSample {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    pub token_count: u32,
    pub correct: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_logprobs: Option<Vec<f64>>,
    /// Token ids, present for toy-vocabulary corpora.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_ids: Option<Vec<u32>>,
}

impl OutputSample {
    pub fn new(token_count: u32, correct: bool) -> Self {
        Self {
            text: None,
            token_count,
            correct,
            token_logprobs: None,
            token_ids: None,
        }
    }

    pub fn with_token_ids(mut self, ids: Vec<u32>) -> Self {
        self.token_count = ids.len() as u32;
        self.token_ids = Some(ids);
        self
    }

    fn check(&self) -> std::result::Result<(), String> {
        if self.token_count == 0 {
            return Err("token_count must be at least 1".into());
        }
        let n = self.token_count as usize;
        if let Some(lp) = &self.token_logprobs {
            if lp.len() != n {
                return Err(format!(
                    "token_logprobs has {} entries but token_count is {n}",
                    lp.len()
                ));
            }
        }
        if let Some(ids) = &self.token_ids {
            if ids.len() != n {
                return Err(format!(
                    "token_ids has {} entries but token_count is {n}",
                    ids.len()
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Medium,
    Difficult,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Medium, Difficulty::Difficult];

    pub fn name(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Medium => "medium",
            Difficulty::Difficult => "difficult",
        }
    }

    /// Exact label from integer counts; no float comparison involved.
    pub fn from_counts(correct: usize, k: usize) -> Self {
        debug_assert!(k > 0 && correct <= k);
        if correct == k {
            Difficulty::Easy
        } else if correct == 0 {
            Difficulty::Difficult
        } else {
            Difficulty::Medium
        }
    }
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Difficulty {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "easy" => Ok(Difficulty::Easy),
            "medium" => Ok(Difficulty::Medium),
            "difficult" | "hard" => Ok(Difficulty::Difficult),
            _ => Err(DataError::UnknownSplit(s.to_string())),
        }
    }
}

/// A question with its sampled outputs, sorted shortest first.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RolloutRecord {
    question_id: String,
    prompt: String,
    outputs: Vec<OutputSample>,
    pass_rate: f64,
    #[serde(skip)]
    correct_count: usize,
}

impl RolloutRecord {
    /// Validates the outputs, stable-sorts them by token count and computes
    /// the pass rate.
    pub fn new(question_id: impl Into<String>, prompt: impl Into<String>, mut outputs: Vec<OutputSample>) -> Result<Self> {
        let question_id = question_id.into();
        if outputs.is_empty() {
            return Err(DataError::InvalidRecord {
                question_id,
                message: "record has no outputs".into(),
            });
        }
        for (i, o) in outputs.iter().enumerate() {
            o.check().map_err(|m| DataError::InvalidRecord {
                question_id: question_id.clone(),
                message: format!("output {i}: {m}"),
            })?;
        }
        outputs.sort_by_key(|o| o.token_count);
        let correct_count = outputs.iter().filter(|o| o.correct).count();
        Ok(Self {
            question_id,
            prompt: prompt.into(),
            pass_rate: correct_count as f64 / outputs.len() as f64,
            outputs,
            correct_count,
        })
    }

    pub fn question_id(&self) -> &str {
        &self.question_id
    }

    pub fn prompt(&self) -> &str {
        &self.prompt
    }

    /// Outputs ascending by token count; equal counts keep input order.
    pub fn outputs(&self) -> &[OutputSample] {
        &self.outputs
    }

    pub fn k(&self) -> usize {
        self.outputs.len()
    }

    pub fn correct_count(&self) -> usize {
        self.correct_count
    }

    pub fn pass_rate(&self) -> f64 {
        self.pass_rate
    }

    pub fn difficulty(&self) -> Difficulty {
        Difficulty::from_counts(self.correct_count, self.k())
    }
}

/// Mean of the correctness indicators, `count / k`.
pub fn pass_rate(outputs: &[OutputSample]) -> Result<f64> {
    if outputs.is_empty() {
        return Err(DataError::EmptyOutputs);
    }
    let correct = outputs.iter().filter(|o| o.correct).count();
    Ok(correct as f64 / outputs.len() as f64)
}

/// Label for a pass rate. Only exact 0 and 1 map to difficult and easy.
pub fn difficulty_label(s: f64) -> Result<Difficulty> {
    if !(0.0..=1.0).contains(&s) {
        return Err(DataError::PassRateOutOfRange(s));
    }
    Ok(if s == 1.0 {
        Difficulty::Easy
    } else if s == 0.0 {
        Difficulty::Difficult
    } else {
        Difficulty::Medium
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub question_id: String,
    pub prompt: String,
    pub chosen: OutputSample,
    pub rejected: OutputSample,
    pub split_label: Difficulty,
}

/// Shortest output as chosen, longest as rejected.
///
/// Ties on token count go to the output that came first in the input. The
/// rejected output is always a different sample from the chosen one, so a
/// record whose outputs all share one length pairs its first two outputs.
pub fn build_pair(record: &RolloutRecord) -> Result<PreferencePair> {
    let outputs = record.outputs();
    if outputs.len() < 2 {
        return Err(DataError::NotEnoughOutputs {
            question_id: record.question_id.clone(),
            count: outputs.len(),
        });
    }
    let max = outputs[outputs.len() - 1].token_count;
    let rejected = outputs
        .iter()
        .skip(1)
        .position(|o| o.token_count == max)
        .map(|i| i + 1)
        .expect("last output has the maximum count");
    Ok(PreferencePair {
        question_id: record.question_id.clone(),
        prompt: record.prompt.clone(),
        chosen: outputs[0].clone(),
        rejected: outputs[rejected].clone(),
        split_label: record.difficulty(),
    })
}

/// [`build_pair`] over many records; output order follows input order.
pub fn build_pairs(records: &[RolloutRecord]) -> Result<Vec<PreferencePair>> {
    records.par_iter().map(build_pair).collect()
}

/// Records whose label equals `label`, in input order.
pub fn filter_split(records: &[RolloutRecord], label: Difficulty) -> Vec<RolloutRecord> {
    records
        .iter()
        .filter(|r| r.difficulty() == label)
        .cloned()
        .collect()
}

/// The first `min(n, len)` pairs.
pub fn take_first(pairs: &[PreferencePair], n: usize) -> Vec<PreferencePair> {
    pairs[..n.min(pairs.len())].to_vec()
}

/// One row of the dataset statistics table.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitStats {
    /// `None` for a row aggregated over all splits.
    pub split: Option<Difficulty>,
    pub question_count: usize,
    pub avg_chosen_length: f64,
    pub avg_rejected_length: f64,
}

impl SplitStats {
    /// True when no pairs were aggregated; both averages are then 0.
    pub fn is_empty(&self) -> bool {
        self.question_count == 0
    }

    pub fn split_name(&self) -> &'static str {
        self.split.map_or("all", Difficulty::name)
    }
}

pub fn split_stats(split: Option<Difficulty>, pairs: &[PreferencePair]) -> SplitStats {
    let n = pairs.len();
    let (chosen, rejected) = pairs.iter().fold((0u64, 0u64), |(c, r), p| {
        (c + p.chosen.token_count as u64, r + p.rejected.token_count as u64)
    });
    let avg = |sum: u64| if n == 0 { 0.0 } else { sum as f64 / n as f64 };
    SplitStats {
        split,
        question_count: n,
        avg_chosen_length: avg(chosen),
        avg_rejected_length: avg(rejected),
    }
}

pub const STATS_CSV_HEADER: &str = "split,questions,avg_chosen_len,avg_rejected_len";

/// Writes stats rows with lengths rounded half away from zero.
pub fn write_stats_csv<W: Write>(stats: &[SplitStats], mut out: W) -> io::Result<()> {
    writeln!(out, "{STATS_CSV_HEADER}")?;
    for s in stats {
        writeln!(
            out,
            "{},{},{},{}",
            s.split_name(),
            s.question_count,
            s.avg_chosen_length.round() as i64,
            s.avg_rejected_length.round() as i64
        )?;
    }
    Ok(())
}

pub fn parse_stats_csv<R: BufRead>(input: R) -> Result<Vec<SplitStats>> {
    let mut rows = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| DataError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if i == 0 {
            if line.trim() != STATS_CSV_HEADER {
                return Err(DataError::Parse {
                    line: 1,
                    message: format!("expected header `{STATS_CSV_HEADER}`"),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let bad = |m: &str| DataError::Parse {
            line: line_no,
            message: m.to_string(),
        };
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 4 {
            return Err(bad("expected 4 columns"));
        }
        let split = match cells[0].trim() {
            "all" => None,
            s => Some(s.parse::<Difficulty>()?),
        };
        let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad("non-numeric cell"));
        rows.push(SplitStats {
            split,
            question_count: cells[1].trim().parse().map_err(|_| bad("bad question count"))?,
            avg_chosen_length: num(cells[2])?,
            avg_rejected_length: num(cells[3])?,
        });
    }
    Ok(rows)
}

#[derive(Deserialize)]
struct RawRollout {
    question_id: String,
    prompt: String,
    outputs: Vec<OutputSample>,
    #[serde(default)]
    pass_rate: Option<f64>,
}

fn parse_rollout_line(line_no: usize, line: &str) -> Result<RolloutRecord> {
    let raw: RawRollout = serde_json::from_str(line).map_err(|e| DataError::Parse {
        line: line_no,
        message: e.to_string(),
    })?;
    let qid = raw.question_id.clone();
    let record = RolloutRecord::new(raw.question_id, raw.prompt, raw.outputs).map_err(|e| match e {
        DataError::InvalidRecord { question_id, message } => DataError::Validation {
            line: line_no,
            question_id,
            message,
        },
        other => other,
    })?;
    if let Some(given) = raw.pass_rate {
        if (given - record.pass_rate()).abs() > PASS_RATE_TOLERANCE {
            return Err(DataError::Validation {
                line: line_no,
                question_id: qid,
                message: format!(
                    "pass_rate {given} disagrees with correctness flags ({}/{})",
                    record.correct_count(),
                    record.k()
                ),
            });
        }
    }
    Ok(record)
}

/// Parses rollouts JSONL. Blank lines are skipped; the first failing line
/// (by position) is reported.
pub fn parse_rollouts<R: BufRead>(input: R) -> Result<Vec<RolloutRecord>> {
    let lines = read_nonblank_lines(input)?;
    let parsed: Vec<Result<RolloutRecord>> = lines
        .par_iter()
        .map(|(n, l)| parse_rollout_line(*n, l))
        .collect();
    parsed.into_iter().collect()
}

pub fn ingest_rollouts(path: impl AsRef<Path>) -> Result<Vec<RolloutRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| DataError::io(path, e))?;
    parse_rollouts(BufReader::new(file))
}

fn read_nonblank_lines<R: BufRead>(input: R) -> Result<Vec<(usize, String)>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| DataError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

pub fn write_rollouts_jsonl<W: Write>(records: &[RolloutRecord], mut out: W) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_pairs_jsonl<W: Write>(pairs: &[PreferencePair], mut out: W) -> io::Result<()> {
    for p in pairs {
        serde_json::to_writer(&mut out, p)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn parse_pairs<R: BufRead>(input: R) -> Result<Vec<PreferencePair>> {
    read_nonblank_lines(input)?
        .into_iter()
        .map(|(n, line)| {
            let pair: PreferencePair = serde_json::from_str(&line).map_err(|e| DataError::Parse {
                line: n,
                message: e.to_string(),
            })?;
            for (side, o) in [("chosen", &pair.chosen), ("rejected", &pair.rejected)] {
                o.check().map_err(|m| DataError::Validation {
                    line: n,
                    question_id: pair.question_id.clone(),
                    message: format!("{side}: {m}"),
                })?;
            }
            Ok(pair)
        })
        .collect()
}

pub fn read_pairs(path: impl AsRef<Path>) -> Result<Vec<PreferencePair>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| DataError::io(path, e))?;
    parse_pairs(BufReader::new(file))
}
