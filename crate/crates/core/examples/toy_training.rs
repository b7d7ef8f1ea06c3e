//! Trains the bigram toy policy with SFT and LCPO on synthetic short/long pairs
//! and compares the sampled response lengths.

use lcpo_lab::datapipe::{build_pairs, filter_split, Difficulty};
use lcpo_lab::objectives::{ObjectiveKind, ObjectiveSpec};
use lcpo_lab::toylab::{make_synthetic_corpus, token_pairs, train, ToyPolicy, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = make_synthetic_corpus(100, 6, 24, 7)?;
    let easy = filter_split(&corpus.records, Difficulty::Easy);
    let pairs = token_pairs(&build_pairs(&easy)?, &corpus.class_map())?;
    let classes: Vec<usize> = pairs.iter().map(|p| p.prompt_class).collect();
    let init = ToyPolicy::fit_bigram(32, 100, corpus.sequences(&classes), 1e-3)?;
    println!("{} easy pairs over {} prompt classes", pairs.len(), init.prompt_classes());

    for kind in [ObjectiveKind::Sft, ObjectiveKind::Lcpo] {
        let mut cfg = TrainConfig::new(ObjectiveSpec::defaults(kind), 20.0);
        cfg.batch_size = pairs.len();
        let (_, trace) = train(&init, &pairs, &cfg)?;
        let (a, b) = (&trace.initial, &trace.final_stats);
        println!(
            "{:>4}: loss {:.4} -> {:.4}, mean length {:.2} -> {:.2} ({:+.1}%), variance {:.2} -> {:.2}",
            kind.name(),
            trace.losses[0],
            trace.losses[trace.losses.len() - 1],
            a.mean,
            b.mean,
            100.0 * (b.mean - a.mean) / a.mean,
            a.variance,
            b.variance,
        );
    }
    Ok(())
}
