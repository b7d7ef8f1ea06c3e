mod common;

use lcpo_lab::convergence::{
    bt_margin, orpo_exact_margin, per_token_requirement, simpo_margin_floor, sft_saturation_threshold,
    ConvergenceConfig,
};
use lcpo_lab::datapipe::{
    build_pair, filter_split, parse_stats_csv, split_stats, write_stats_csv, Difficulty, OutputSample, RolloutRecord,
};
use lcpo_lab::evalharness::{
    dataset_metrics, pass_at_1_avg, reduction_pct, render_report, report_totals, EvalRecord, EvalSample,
    MetricsReport,
};
use lcpo_lab::numeric::{log_sigmoid, logit, sigmoid, softplus};
use lcpo_lab::objectives::{evaluate, LogProbSeq, ObjectiveKind, ObjectiveSpec, PairSummary};
use lcpo_lab::toylab::{pair_gradient, ToyPolicy};
use proptest::prelude::*;

fn avg() -> impl Strategy<Value = f64> {
    -6.0..-1e-3f64
}

fn kind() -> impl Strategy<Value = ObjectiveKind> {
    prop::sample::select(ObjectiveKind::ALL.to_vec())
}

proptest! {
    #[test]
    fn softplus_and_log_sigmoid_are_stable(x in -800.0..800.0f64) {
        let sp = softplus(x);
        prop_assert!(sp.is_finite() && sp >= 0.0 && sp >= x);
        prop_assert!((log_sigmoid(x) + softplus(-x)).abs() <= 1e-12 * (1.0 + x.abs()));
        prop_assert!((softplus(x) - softplus(-x) - x).abs() <= 1e-12 * (1.0 + x.abs()));
    }

    #[test]
    fn logit_inverts_sigmoid(p in 1e-9..1.0 - 1e-9f64) {
        prop_assert!((sigmoid(logit(p)) - p).abs() <= 1e-12);
    }

    #[test]
    fn sequence_summaries_are_consistent(lps in prop::collection::vec(-20.0..0.0f64, 1..60)) {
        let s = LogProbSeq::new(lps.clone()).unwrap();
        prop_assert!(s.avg_logprob() <= 0.0);
        prop_assert!((s.total() - lps.iter().sum::<f64>()).abs() <= 1e-9);
        prop_assert!((s.avg_logprob() * s.len() as f64 - s.total()).abs() <= 1e-9);
    }

    #[test]
    fn losses_stay_in_range(k in kind(), w in avg(), l in avg(), lw in 1usize..300, ll in 1usize..300,
                            rw in -300.0..-1.0f64, rl in -300.0..-1.0f64) {
        let spec = ObjectiveSpec::defaults(k);
        let pair = common::pair_summary(common::summary(w, lw), common::summary(l, ll), (rw, rl));
        let v = evaluate(&spec, &pair).unwrap().value;
        prop_assert!(v.is_finite());
        match k {
            ObjectiveKind::Simper => prop_assert!(v > -1.0 && v < 1.0),
            _ => prop_assert!(v >= 0.0),
        }
    }

    #[test]
    fn sft_ignores_the_rejected_response(w in avg(), l1 in avg(), l2 in avg()) {
        let spec = ObjectiveSpec::defaults(ObjectiveKind::Sft);
        let a = evaluate(&spec, &PairSummary::new(common::summary(w, 5), common::summary(l1, 5))).unwrap();
        let b = evaluate(&spec, &PairSummary::new(common::summary(w, 5), common::summary(l2, 9))).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn dpo_depends_only_on_log_ratios(w in avg(), l in avg(), shift in -50.0..50.0f64, beta in 0.05..3.0f64) {
        let spec = ObjectiveSpec::defaults(ObjectiveKind::Dpo).with_beta(beta);
        let (sw, sl) = (common::summary(w, 10), common::summary(l, 20));
        let a = evaluate(&spec, &PairSummary::new(sw, sl).with_reference(-30.0, -40.0)).unwrap();
        let mut sw2 = sw;
        sw2.total += shift;
        let b = evaluate(&spec, &PairSummary::new(sw2, sl).with_reference(-30.0 + shift, -40.0)).unwrap();
        prop_assert!((a.value - b.value).abs() <= 1e-9);
    }

    #[test]
    fn margins_reproduce_their_losses(w in avg(), l in avg(), lambda in 0.05..1.0f64, eps in -1.0..1.0f64,
                                     beta in 0.1..3.0f64, gamma in 0.0..1.0f64) {
        let pair = PairSummary::new(common::summary(w, 7), common::summary(l, 11));
        let lcpo = ObjectiveSpec::defaults(ObjectiveKind::Lcpo).with_lambda(lambda).with_margin_epsilon(eps);
        let m = bt_margin(&lcpo, &pair).unwrap();
        prop_assert!((lambda * softplus(-m) - evaluate(&lcpo, &pair).unwrap().value).abs() <= 1e-12);
        let simpo = ObjectiveSpec::defaults(ObjectiveKind::Simpo).with_beta(beta).with_gamma(gamma);
        let m = bt_margin(&simpo, &pair).unwrap();
        prop_assert!((softplus(-m) - evaluate(&simpo, &pair).unwrap().value).abs() <= 1e-12);
        let orpo = ObjectiveSpec::defaults(ObjectiveKind::Orpo).with_lambda(lambda);
        let r = orpo_exact_margin(&pair, lambda).unwrap();
        let v = evaluate(&orpo, &pair).unwrap().value;
        prop_assert!((lambda * softplus(-r) - v).abs() <= 1e-9 * (1.0 + v));
    }

    #[test]
    fn thresholds_are_consistent(m in 0.1..12.0f64, len in 1usize..5000, beta in 0.1..4.0f64, gamma in 0.0..2.0f64) {
        let cfg = ConvergenceConfig::default().with_m(m).with_beta(beta).with_gamma(gamma);
        let sft = sft_saturation_threshold(&cfg);
        prop_assert!((per_token_requirement(&cfg, len).powi(len as i32) - sft).abs() <= 1e-9);
        prop_assert!((simpo_margin_floor(&cfg) - (gamma + m) / beta).abs() <= 1e-12);
    }
}

fn outputs() -> impl Strategy<Value = Vec<OutputSample>> {
    prop::collection::vec((1u32..5000, any::<bool>()), 2..20)
        .prop_map(|v| v.into_iter().map(|(n, c)| OutputSample::new(n, c)).collect())
}

proptest! {
    #[test]
    fn labels_follow_counts(outs in outputs()) {
        let r = RolloutRecord::new("q", "p", outs.clone()).unwrap();
        let c = outs.iter().filter(|o| o.correct).count();
        prop_assert!((0.0..=1.0).contains(&r.pass_rate()));
        prop_assert_eq!(r.difficulty() == Difficulty::Easy, c == outs.len());
        prop_assert_eq!(r.difficulty() == Difficulty::Difficult, c == 0);
    }

    #[test]
    fn pairs_take_extremes(outs in outputs()) {
        let r = RolloutRecord::new("q", "p", outs.clone()).unwrap();
        let p = build_pair(&r).unwrap();
        let min = outs.iter().map(|o| o.token_count).min().unwrap();
        let max = outs.iter().map(|o| o.token_count).max().unwrap();
        prop_assert_eq!(p.chosen.token_count, min);
        prop_assert_eq!(p.rejected.token_count, max);
        // chosen is the first shortest output in input order
        let first_short = outs.iter().find(|o| o.token_count == min).unwrap();
        prop_assert_eq!(&p.chosen, first_short);
    }

    #[test]
    fn splits_partition_and_stats_round_trip(records in prop::collection::vec(outputs(), 1..30)) {
        let records: Vec<RolloutRecord> = records
            .into_iter()
            .enumerate()
            .map(|(i, o)| RolloutRecord::new(format!("q{i}"), "p", o).unwrap())
            .collect();
        let sizes: usize = Difficulty::ALL.iter().map(|d| filter_split(&records, *d).len()).sum();
        prop_assert_eq!(sizes, records.len());
        let pairs = lcpo_lab::datapipe::build_pairs(&records).unwrap();
        let stats = vec![split_stats(None, &pairs)];
        let mut csv = Vec::new();
        write_stats_csv(&stats, &mut csv).unwrap();
        let parsed = parse_stats_csv(&csv[..]).unwrap();
        let mut again = Vec::new();
        write_stats_csv(&parsed, &mut again).unwrap();
        prop_assert_eq!(csv, again);
        prop_assert_eq!(parsed[0].question_count, records.len());
    }
}

fn eval_record() -> impl Strategy<Value = Vec<(bool, u32)>> {
    prop::collection::vec((any::<bool>(), 1u32..10_000), 1..20)
}

fn to_record(i: usize, s: &[(bool, u32)]) -> EvalRecord {
    let samples = s.iter().map(|&(correct, token_count)| EvalSample { correct, token_count }).collect();
    EvalRecord::new(format!("item{i}"), samples).unwrap()
}

proptest! {
    #[test]
    fn pass_at_1_is_an_order_free_mean(s in eval_record(), seed in any::<u64>()) {
        let r = to_record(0, &s);
        let v = pass_at_1_avg(&r).unwrap();
        prop_assert!((0.0..=1.0).contains(&v));
        let mut shuffled = s.clone();
        let n = shuffled.len();
        shuffled.rotate_left((seed as usize) % n);
        prop_assert_eq!(v, pass_at_1_avg(&to_record(0, &shuffled)).unwrap());
    }

    #[test]
    fn dataset_metrics_match_brute_force(recs in prop::collection::vec(eval_record(), 1..15)) {
        let records: Vec<EvalRecord> = recs.iter().enumerate().map(|(i, s)| to_record(i, s)).collect();
        let m = dataset_metrics(&records, None).unwrap();
        let flat: Vec<&(bool, u32)> = recs.iter().flatten().collect();
        let mean_len = flat.iter().map(|s| s.1 as f64).sum::<f64>() / flat.len() as f64;
        let acc = recs
            .iter()
            .map(|r| r.iter().filter(|s| s.0).count() as f64 / r.len() as f64)
            .sum::<f64>()
            / recs.len() as f64;
        prop_assert!((m.avg_length - mean_len).abs() <= 1e-12 * mean_len);
        prop_assert!((m.accuracy - acc).abs() <= 1e-12);
    }

    #[test]
    fn reduction_swap_follows_the_formula(b in 1.0..1e5f64, x in 1.0..1e5f64) {
        let forward = reduction_pct(b, x);
        let back = reduction_pct(x, b);
        prop_assert!((forward - 100.0 * (b - x) / b).abs() <= 1e-9);
        prop_assert!((back + forward * b / x).abs() <= 1e-9 * (1.0 + back.abs()));
    }

    #[test]
    fn rendered_avg_is_the_mean_reduction(rows in prop::collection::vec((0.0..1.0f64, 10.0..5000.0f64, 10.0..5000.0f64), 1..8)) {
        let reports: Vec<(String, MetricsReport)> = rows
            .iter()
            .enumerate()
            .map(|(i, &(a, l, b))| (format!("b{i}"), MetricsReport::from_summary(a, l, Some(b)).unwrap()))
            .collect();
        let mean = rows.iter().map(|&(_, l, b)| -reduction_pct(b, l)).sum::<f64>() / rows.len() as f64;
        let avg = report_totals(&reports).avg_delta_len_pct.unwrap();
        prop_assert!((avg - mean).abs() <= 1e-9);
        let table = render_report(&reports);
        let footer = table.lines().last().unwrap();
        let cell = footer.split('|').nth(3).unwrap().trim().trim_end_matches('%');
        prop_assert!((cell.parse::<f64>().unwrap() - mean).abs() <= 0.005 + 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn softmax_rows_normalize_after_updates(seed in any::<u64>(), lr in 0.1..50.0f64, k in kind()) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut policy = ToyPolicy::random(6, 2, 2.0, seed).unwrap();
        let reference = policy.clone();
        let spec = ObjectiveSpec::defaults(k);
        for _ in 0..5 {
            let pair = common::random_pair(&mut rng, 6, 2);
            let (_, g) = pair_gradient(&policy, Some(&reference), &pair, &spec).unwrap();
            for (w, gi) in policy.params_mut().iter_mut().zip(&g) {
                *w -= lr * gi;
            }
        }
        for class in 0..2 {
            for prev in (0..6u32).map(Some).chain([None]) {
                let s: f64 = policy.next_token_probs(class, prev).unwrap().iter().sum();
                prop_assert!((s - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn score_is_the_chain_rule_sum(seed in any::<u64>()) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let policy = ToyPolicy::random(7, 1, 3.0, seed).unwrap();
        let tokens = common::random_response(&mut rng, 7, 30);
        let seq = policy.score_sequence(0, &tokens).unwrap();
        let mut prev = None;
        let mut total = 0.0;
        for &t in &tokens {
            total += policy.next_token_probs(0, prev).unwrap()[t as usize].ln();
            prev = Some(t);
        }
        prop_assert!(seq.total().is_finite());
        prop_assert!((seq.total() - total).abs() <= 1e-10);
    }
}
