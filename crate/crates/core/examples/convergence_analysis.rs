//! Saturation thresholds and the ORPO regime for a few probability pairs.

use lcpo_lab::convergence::{
    analyze, orpo_condition, render_reports_text, sft_condition, AnalysisGrid, ConvergenceConfig,
};
use lcpo_lab::objectives::{ObjectiveKind, ObjectiveSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sft = ConvergenceConfig::for_objective(&ObjectiveSpec::defaults(ObjectiveKind::Sft)).with_m(5.0);
    for p in [0.9, 0.999] {
        let r = sft_condition(p, &sft)?;
        println!("sft p_w={p}: margin {:.6} threshold {:.6} satisfied {}", r.margin_value, r.threshold, r.satisfied);
    }

    let orpo = ConvergenceConfig::for_objective(&ObjectiveSpec::defaults(ObjectiveKind::Orpo)).with_m(5.0);
    for (p_w, p_l) in [(0.6, 0.4), (0.95, 0.05), (0.999, 0.001)] {
        let r = orpo_condition(p_w, p_l, &orpo)?;
        println!("orpo p_w={p_w} p_l={p_l}: satisfied {} ({})", r.satisfied, r.params);
    }

    let grid = AnalysisGrid {
        lambdas: vec![0.2],
        probs: vec![0.5, 0.9],
        ..AnalysisGrid::default()
    };
    let reports = analyze(&grid)?;
    println!("\n{} rows on a small grid; first three:", reports.len());
    let head = render_reports_text(&reports[..3]);
    print!("{head}");
    Ok(())
}
