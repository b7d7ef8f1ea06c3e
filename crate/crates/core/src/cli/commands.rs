use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::{AnalyzeArgs, CliError, Ctx, List, PairsArgs, ReportArgs, Result, StatsArgs, SynthArgs, TrainArgs};
use crate::convergence::{analyze as run_analysis, render_reports_text, write_reports_csv, AnalysisGrid};
use crate::datapipe::{
    build_pairs, filter_split, ingest_rollouts, read_pairs, split_stats, take_first, write_pairs_jsonl,
    write_rollouts_jsonl, write_stats_csv, Difficulty, RolloutRecord,
};
use crate::evalharness::{
    dataset_metrics_with, read_eval_records, render_report, write_metrics_csv, LengthAveraging, MetricsReport,
};
use crate::objectives::{ObjectiveKind, ObjectiveSpec};
use crate::toylab::{train, token_pairs, ClassMap, ClassSamples, CorpusConfig, DifficultyMix, ToyPolicy, TrainConfig};

fn required(ctx: &mut Ctx, key: &str, flag: Option<PathBuf>) -> Result<PathBuf> {
    let path = ctx
        .layers
        .resolve_opt(key, flag.map(|p| p.display().to_string()))?
        .ok_or_else(|| CliError::Input(format!("--{key} is required")))?;
    let path = PathBuf::from(path);
    ctx.input(&path);
    Ok(path)
}

pub(super) fn synth(ctx: &mut Ctx, a: SynthArgs) -> Result<()> {
    let l = &mut ctx.layers;
    let defaults = CorpusConfig::new(200, 6, 24, 0);
    let mut cfg = CorpusConfig::new(
        l.resolve("prompts", a.prompts, defaults.prompt_classes)?,
        l.resolve("short-len", a.short_len, defaults.short_len)?,
        l.resolve("long-len", a.long_len, defaults.long_len)?,
        ctx.seed,
    );
    cfg.samples_per_prompt = l.resolve("samples", a.samples, defaults.samples_per_prompt)?;
    cfg.vocab_size = l.resolve("vocab-size", a.vocab_size, defaults.vocab_size)?;
    cfg.answer_tokens = l.resolve("answer-tokens", a.answer_tokens, defaults.answer_tokens)?;
    cfg.mix = DifficultyMix {
        medium: l.resolve("medium", a.medium, defaults.mix.medium)?,
        difficult: l.resolve("difficult", a.difficult, defaults.mix.difficult)?,
    };
    l.check()?;
    let corpus = cfg.build()?;
    ctx.log(format!("{} prompt classes", corpus.records.len()));
    let mut rollouts = Vec::new();
    write_rollouts_jsonl(&corpus.records, &mut rollouts)?;
    ctx.write("rollouts.jsonl", &rollouts)?;
    let mut answers = String::from("question_id,answer,planned\n");
    for ((r, ans), label) in corpus.records.iter().zip(&corpus.answers).zip(&corpus.planned) {
        let _ = writeln!(answers, "{},{ans},{label}", r.question_id());
    }
    ctx.write("answers.csv", answers.as_bytes())
}

pub(super) fn pairs(ctx: &mut Ctx, a: PairsArgs) -> Result<()> {
    let path = required(ctx, "rollouts", a.rollouts)?;
    let split: Difficulty = parse(&ctx.layers.resolve("split", a.split, "easy".to_owned())?, "split")?;
    let limit = ctx.layers.resolve_opt("limit", a.limit)?;
    ctx.layers.check()?;
    let records = ingest_rollouts(&path)?;
    let kept = filter_split(&records, split);
    ctx.log(format!("{} of {} records are {split}", kept.len(), records.len()));
    if kept.is_empty() {
        return Err(CliError::Empty(format!("split {split} is empty")));
    }
    let mut pairs = build_pairs(&kept)?;
    if let Some(n) = limit {
        pairs = take_first(&pairs, n);
    }
    let mut jsonl = Vec::new();
    write_pairs_jsonl(&pairs, &mut jsonl)?;
    ctx.write("pairs.jsonl", &jsonl)?;
    let mut csv = Vec::new();
    write_stats_csv(&[split_stats(Some(split), &pairs)], &mut csv)?;
    ctx.write("stats.csv", &csv)
}

pub(super) fn stats(ctx: &mut Ctx, a: StatsArgs) -> Result<()> {
    let path = required(ctx, "rollouts", a.rollouts)?;
    ctx.layers.check()?;
    let records = ingest_rollouts(&path)?;
    if records.is_empty() {
        return Err(CliError::Empty("no rollout records".into()));
    }
    let mut rows = Vec::new();
    for d in Difficulty::ALL {
        rows.push(split_stats(Some(d), &build_pairs(&filter_split(&records, d))?));
    }
    rows.push(split_stats(None, &build_pairs(&records)?));
    let mut csv = Vec::new();
    write_stats_csv(&rows, &mut csv)?;
    ctx.write("stats.csv", &csv)
}

fn parse<T: FromStr>(raw: &str, what: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    raw.parse()
        .map_err(|e| CliError::Input(format!("invalid {what} {raw:?}: {e}")))
}

pub(super) fn train_toy(ctx: &mut Ctx, a: TrainArgs) -> Result<()> {
    let pairs_path = required(ctx, "pairs", a.pairs)?;
    let kind: ObjectiveKind = parse(&ctx.layers.resolve("objective", a.objective, "lcpo".to_owned())?, "objective")?;
    let rollouts = ctx.layers.resolve_opt("rollouts", a.rollouts.map(|p| p.display().to_string()))?;
    let l = &mut ctx.layers;
    let d = ObjectiveSpec::defaults(kind);
    let spec = d
        .with_beta(l.resolve("beta", a.beta, d.beta)?)
        .with_gamma(l.resolve("gamma", a.gamma, d.gamma)?)
        .with_lambda(l.resolve("lambda", a.lambda, d.lambda)?)
        .with_margin_epsilon(l.resolve("epsilon", a.epsilon, d.margin_epsilon)?);
    let td = TrainConfig::new(spec, 20.0);
    let cfg = TrainConfig {
        objective: spec,
        learning_rate: l.resolve("learning-rate", a.learning_rate, td.learning_rate)?,
        steps: l.resolve("steps", a.steps, td.steps)?,
        batch_size: l.resolve("batch-size", a.batch_size, td.batch_size)?,
        seed: ctx.seed,
        temperature: l.resolve("temperature", a.temperature, td.temperature)?,
        max_sample_length: l.resolve("max-sample-length", a.max_sample_length, td.max_sample_length)?,
        eval_samples_per_class: l.resolve("eval-samples", a.eval_samples, td.eval_samples_per_class)?,
        histogram_bin_width: l.resolve("bin-width", a.bin_width, td.histogram_bin_width)?,
    };
    let smoothing = l.resolve("smoothing", a.smoothing, 1e-3)?;
    let vocab_flag = l.resolve_opt("vocab-size", a.vocab_size)?;
    l.check()?;

    let pairs = read_pairs(&pairs_path)?;
    if pairs.is_empty() {
        return Err(CliError::Empty("pairs file has no pairs".into()));
    }
    let classes = ClassMap::from_ids(pairs.iter().map(|p| p.question_id.as_str()));
    let token_pairs = token_pairs(&pairs, &classes)?;
    let fit_records: Vec<RolloutRecord> = match &rollouts {
        Some(p) => {
            let path = PathBuf::from(p);
            ctx.input(&path);
            ingest_rollouts(&path)?
                .into_iter()
                .filter(|r| classes.class_of(r.question_id()).is_some())
                .collect()
        }
        None => Vec::new(),
    };
    let mut fit: Vec<(usize, &[u32])> = Vec::new();
    if rollouts.is_some() {
        for r in &fit_records {
            let c = classes.class_of(r.question_id()).expect("filtered above");
            for o in r.outputs() {
                if let Some(ids) = &o.token_ids {
                    fit.push((c, ids));
                }
            }
        }
    } else {
        for p in &token_pairs {
            fit.push((p.prompt_class, &p.chosen));
            fit.push((p.prompt_class, &p.rejected));
        }
    }
    let max_id = fit.iter().flat_map(|(_, s)| s.iter()).copied().max().unwrap_or(0) as usize;
    let vocab = vocab_flag.unwrap_or((max_id + 1).max(2));
    ctx.layers.record("vocab-size", vocab);
    let init = ToyPolicy::fit_bigram(vocab, classes.len(), fit, smoothing)?;
    ctx.log(format!("{} pairs, {} classes, vocab {vocab}, objective {kind}", token_pairs.len(), classes.len()));

    let (policy, trace) = train(&init, &token_pairs, &cfg)?;
    ctx.log(format!(
        "mean length {:.3} -> {:.3}, variance {:.3} -> {:.3}",
        trace.initial.mean, trace.final_stats.mean, trace.initial.variance, trace.final_stats.variance
    ));

    let mut csv = String::from("step,loss,margin_mean\n");
    for (i, (loss, margin)) in trace.losses.iter().zip(&trace.margin_means).enumerate() {
        let _ = writeln!(csv, "{i},{loss},{margin}");
    }
    ctx.write("trace.csv", csv.as_bytes())?;

    let mut lengths = String::from("phase,prompt_class,length\n");
    let mut phase = |name: &str, samples: &[ClassSamples]| {
        for cs in samples {
            for s in &cs.samples {
                let _ = writeln!(lengths, "{name},{},{}", cs.class, s.len());
            }
        }
    };
    phase("pre", &trace.initial_samples);
    phase("post", &trace.final_samples);
    ctx.write("lengths.csv", lengths.as_bytes())?;

    let summary = serde_json::json!({
        "objective": kind.name(),
        "pairs": token_pairs.len(),
        "initial": stats_json(&trace.initial),
        "final": stats_json(&trace.final_stats),
    });
    let mut bytes = serde_json::to_vec_pretty(&summary)?;
    bytes.push(b'\n');
    ctx.write("summary.json", &bytes)?;
    let mut bytes = serde_json::to_vec(&policy)?;
    bytes.push(b'\n');
    ctx.write("policy.json", &bytes)
}

fn stats_json(s: &crate::toylab::LengthStats) -> serde_json::Value {
    serde_json::json!({
        "count": s.count,
        "mean": s.mean,
        "variance": s.variance,
        "truncated": s.truncated,
        "bin_width": s.bin_width,
        "histogram": s.histogram,
    })
}

pub(super) fn analyze(ctx: &mut Ctx, a: AnalyzeArgs) -> Result<()> {
    let d = AnalysisGrid::default();
    let l = &mut ctx.layers;
    let step = l.resolve("prob-step", a.prob_step, 0.05)?;
    if !(step > 0.0 && step < 0.5) {
        return Err(CliError::Input(format!("prob-step must lie in (0, 0.5), got {step}")));
    }
    let grid = AnalysisGrid {
        m_values: l.resolve("m", a.m, List(d.m_values))?.0,
        lambdas: l.resolve("lambda", a.lambda, List(d.lambdas))?.0,
        probs: (1..).map(|i| i as f64 * step).take_while(|p| *p < 1.0 - 1e-9).collect(),
        dpo_beta: l.resolve("dpo-beta", a.dpo_beta, d.dpo_beta)?,
        simpo_beta: l.resolve("simpo-beta", a.simpo_beta, d.simpo_beta)?,
        simpo_gamma: l.resolve("simpo-gamma", a.simpo_gamma, d.simpo_gamma)?,
        sft_probes: l.resolve("sft-probes", a.sft_probes, List(d.sft_probes))?.0,
        token_probe: l.resolve("token-probe", a.token_probe, d.token_probe)?,
        lengths: l.resolve("lengths", a.lengths, List(d.lengths))?.0,
        gap_probes: l.resolve("gap-probes", a.gap_probes, List(d.gap_probes))?.0,
        witness_samples: l.resolve("witness-samples", a.witness_samples, d.witness_samples)?,
        seed: ctx.seed,
    };
    l.check()?;
    let reports = run_analysis(&grid)?;
    ctx.log(format!("{} condition rows", reports.len()));
    let mut csv = Vec::new();
    write_reports_csv(&reports, &mut csv)?;
    ctx.write("convergence.csv", &csv)?;
    ctx.write("convergence.txt", render_reports_text(&reports).as_bytes())
}

fn split_entry(entry: &str, flag: &str) -> Result<(String, String)> {
    entry
        .split_once('=')
        .map(|(n, v)| (n.trim().to_owned(), v.trim().to_owned()))
        .filter(|(n, v)| !n.is_empty() && !v.is_empty())
        .ok_or_else(|| CliError::Input(format!("--{flag} expects name=value, got {entry:?}")))
}

/// `ACC:LEN` with ACC in percent, if `value` has that shape.
fn literal_baseline(value: &str) -> Option<(f64, f64)> {
    let (acc, len) = value.split_once(':')?;
    Some((acc.trim().parse::<f64>().ok()? / 100.0, len.trim().parse().ok()?))
}

fn load_metrics(ctx: &mut Ctx, path: &Path, averaging: LengthAveraging, baseline: Option<(f64, f64)>) -> Result<MetricsReport> {
    ctx.input(path);
    let records = read_eval_records(path)?;
    if records.is_empty() {
        return Err(CliError::Empty(format!("{} has no records", path.display())));
    }
    let report = dataset_metrics_with(&records, baseline.map(|b| b.1), averaging)?;
    Ok(match baseline {
        Some((acc, _)) => report.with_baseline_accuracy(acc),
        None => report,
    })
}

pub(super) fn report(ctx: &mut Ctx, a: ReportArgs) -> Result<()> {
    let nonempty = |v: Vec<String>| (!v.is_empty()).then_some(List(v));
    let evals = ctx.layers.resolve("eval", nonempty(a.evals), List(Vec::<String>::new()))?.0;
    let baselines = ctx.layers.resolve("baseline", nonempty(a.baselines), List(Vec::<String>::new()))?.0;
    let averaging = match ctx.layers.resolve("averaging", a.averaging, "per-sample".to_owned())?.as_str() {
        "per-sample" => LengthAveraging::PerSample,
        "per-record" => LengthAveraging::PerRecord,
        other => return Err(CliError::Input(format!("unknown averaging {other:?}; use per-sample or per-record"))),
    };
    ctx.layers.check()?;
    if evals.is_empty() {
        return Err(CliError::Input("at least one --eval name=path is required".into()));
    }
    let evals = evals.iter().map(|e| split_entry(e, "eval")).collect::<Result<Vec<_>>>()?;

    let mut base: Vec<(String, (f64, f64))> = Vec::new();
    for entry in &baselines {
        let (name, value) = split_entry(entry, "baseline")?;
        if !evals.iter().any(|(n, _)| *n == name) {
            return Err(CliError::Input(format!("baseline {name} has no matching --eval")));
        }
        let b = match literal_baseline(&value) {
            Some(b) => b,
            None => {
                let m = load_metrics(ctx, Path::new(&value), averaging, None)?;
                (m.accuracy, m.avg_length)
            }
        };
        base.push((name, b));
    }

    let mut reports = Vec::new();
    for (name, path) in &evals {
        let b = base.iter().find(|(n, _)| n == name).map(|(_, b)| *b);
        reports.push((name.clone(), load_metrics(ctx, Path::new(path), averaging, b)?));
    }
    let table = render_report(&reports);
    ctx.write("report.md", table.as_bytes())?;
    let mut csv = Vec::new();
    write_metrics_csv(&reports, &mut csv)?;
    ctx.write("metrics.csv", &csv)
}
