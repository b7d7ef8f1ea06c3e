//! Loss values and gradients of every objective on one chosen/rejected pair.

use lcpo_lab::objectives::{evaluate, LogProbSeq, ObjectiveKind, ObjectiveSpec, PairSummary};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let chosen = LogProbSeq::new(vec![-0.1, -0.3, -0.2, -0.05])?;
    let rejected = LogProbSeq::new(vec![-0.4; 12])?;
    let pair = PairSummary::new(chosen.summary(), rejected.summary())
        .with_reference(chosen.total() + 0.2, rejected.total() - 0.1);

    println!("chosen: len {} avg {:.4}", chosen.len(), chosen.avg_logprob());
    println!("rejected: len {} avg {:.4}", rejected.len(), rejected.avg_logprob());
    for kind in ObjectiveKind::ALL {
        let r = evaluate(&ObjectiveSpec::defaults(kind), &pair)?;
        let rej = r.grad_rejected.map_or("-".to_owned(), |g| format!("{g:+.5}"));
        println!("{:>6}: loss {:.5}  dL/dchosen {:+.5}  dL/drejected {rej}", kind.name(), r.value, r.grad_chosen);
    }
    Ok(())
}
