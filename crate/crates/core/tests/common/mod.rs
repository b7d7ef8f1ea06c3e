#![allow(dead_code)]

use lcpo_lab::objectives::{ObjectiveKind, ObjectiveSpec, PairSummary, SeqSummary};
use lcpo_lab::toylab::{TokenPair, EOS};
use rand::Rng;

/// A response of 1..=max_len tokens: random non-EOS tokens, then EOS.
pub fn random_response<R: Rng>(rng: &mut R, vocab: usize, max_len: usize) -> Vec<u32> {
    let len = rng.random_range(1..=max_len);
    let mut t: Vec<u32> = (1..len).map(|_| rng.random_range(1..vocab as u32)).collect();
    t.push(EOS);
    t
}

pub fn random_pair<R: Rng>(rng: &mut R, vocab: usize, classes: usize) -> TokenPair {
    TokenPair {
        prompt_class: rng.random_range(0..classes),
        chosen: random_response(rng, vocab, 10),
        rejected: random_response(rng, vocab, 10),
    }
}

pub fn random_spec<R: Rng>(rng: &mut R, kind: ObjectiveKind) -> ObjectiveSpec {
    ObjectiveSpec::defaults(kind)
        .with_beta(rng.random_range(0.1..3.0))
        .with_gamma(rng.random_range(0.0..1.0))
        .with_lambda(rng.random_range(0.05..1.0))
        .with_margin_epsilon(if kind == ObjectiveKind::Lcpo { rng.random_range(-1.0..1.0) } else { 0.0 })
}

pub fn summary(avg: f64, len: usize) -> SeqSummary {
    SeqSummary { avg, total: avg * len as f64, len }
}

pub fn pair_summary(w: SeqSummary, l: SeqSummary, refs: (f64, f64)) -> PairSummary {
    PairSummary::new(w, l).with_reference(refs.0, refs.1)
}
