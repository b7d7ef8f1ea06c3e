//! Accuracy and length metrics against a baseline, rendered as a markdown table.

use lcpo_lab::evalharness::{dataset_metrics, render_report, EvalRecord, EvalSample};

fn record(id: &str, samples: &[(bool, u32)]) -> EvalRecord {
    let samples = samples
        .iter()
        .map(|&(correct, token_count)| EvalSample { correct, token_count })
        .collect();
    EvalRecord::new(id, samples).expect("non-empty record")
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let math = vec![
        record("m1", &[(true, 1200), (true, 1500)]),
        record("m2", &[(false, 3100), (true, 2400)]),
    ];
    let gsm = vec![record("g1", &[(true, 300), (true, 280), (false, 520)])];

    let reports = vec![
        ("MATH".to_owned(), dataset_metrics(&math, Some(4200.0))?.with_baseline_accuracy(0.80)),
        ("GSM".to_owned(), dataset_metrics(&gsm, None)?),
    ];
    print!("{}", render_report(&reports));
    Ok(())
}
