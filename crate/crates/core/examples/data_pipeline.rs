//! Rollouts to difficulty labels, shortest/longest pairs and split statistics.

use lcpo_lab::datapipe::{
    build_pairs, filter_split, split_stats, write_stats_csv, Difficulty, OutputSample, RolloutRecord,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let records = vec![
        RolloutRecord::new("q1", "2+2?", (0..8).map(|i| OutputSample::new(100 + 40 * i, true)).collect())?,
        RolloutRecord::new(
            "q2",
            "hard sum",
            (0..8).map(|i| OutputSample::new(300 + 25 * i, i % 2 == 0)).collect(),
        )?,
        RolloutRecord::new("q3", "open problem", (0..8).map(|i| OutputSample::new(900 + i, false)).collect())?,
    ];
    for r in &records {
        println!("{}: pass rate {:.3} -> {}", r.question_id(), r.pass_rate(), Difficulty::from_counts(r.correct_count(), r.k()));
    }

    let easy = build_pairs(&filter_split(&records, Difficulty::Easy))?;
    for p in &easy {
        println!("pair {}: chosen {} tokens, rejected {} tokens", p.question_id, p.chosen.token_count, p.rejected.token_count);
    }

    let stats = [
        split_stats(Some(Difficulty::Easy), &easy),
        split_stats(None, &build_pairs(&records)?),
    ];
    write_stats_csv(&stats, std::io::stdout())?;
    Ok(())
}
