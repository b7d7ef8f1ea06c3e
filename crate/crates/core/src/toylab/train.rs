use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::policy::{Sample, SampleConfig, ToyPolicy};
use super::{derive_seed, Result, ToyError};
use crate::convergence::{bt_margin, orpo_penalty_margin};
use crate::datapipe::PreferencePair;
use crate::objectives::{
    evaluate, GradientBasis, LossResult, ObjectiveError, ObjectiveKind, ObjectiveSpec, PairSummary,
};

/// Lower bound on the denominator of the finite-difference relative error.
///
/// A summed log-probability over ten tokens carries about `1e-14` of
/// rounding, which a central difference at `h = 1e-6` turns into roughly
/// `5e-9` of noise. Components below this floor are therefore held to an
/// absolute bound of `tolerance * FD_SCALE_FLOOR` instead of a relative one.
pub const FD_SCALE_FLOOR: f64 = 1e-3;

/// A preference pair in toy-vocabulary token ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenPair {
    pub prompt_class: usize,
    pub chosen: Vec<u32>,
    pub rejected: Vec<u32>,
}

/// Question ids to prompt classes, numbered by first appearance.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClassMap {
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl ClassMap {
    pub fn from_ids<I, S>(ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut map = Self::default();
        for id in ids {
            let id = id.as_ref();
            if !map.index.contains_key(id) {
                map.index.insert(id.to_owned(), map.ids.len());
                map.ids.push(id.to_owned());
            }
        }
        map
    }

    pub fn class_of(&self, question_id: &str) -> Option<usize> {
        self.index.get(question_id).copied()
    }

    pub fn question_id(&self, class: usize) -> Option<&str> {
        self.ids.get(class).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Converts datapipe pairs carrying `token_ids` into [`TokenPair`]s.
pub fn token_pairs(pairs: &[PreferencePair], classes: &ClassMap) -> Result<Vec<TokenPair>> {
    pairs
        .iter()
        .map(|p| {
            let class = classes
                .class_of(&p.question_id)
                .ok_or_else(|| ToyError::UnmappedQuestion(p.question_id.clone()))?;
            let ids = |o: &crate::datapipe::OutputSample| {
                o.token_ids
                    .clone()
                    .ok_or_else(|| ToyError::MissingTokenIds(p.question_id.clone()))
            };
            Ok(TokenPair {
                prompt_class: class,
                chosen: ids(&p.chosen)?,
                rejected: ids(&p.rejected)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub objective: ObjectiveSpec,
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub temperature: f64,
    pub max_sample_length: usize,
    /// Samples per prompt class for the before/after length statistics.
    pub eval_samples_per_class: usize,
    pub histogram_bin_width: usize,
}

impl TrainConfig {
    pub fn new(objective: ObjectiveSpec, learning_rate: f64) -> Self {
        Self {
            objective,
            learning_rate,
            steps: 50,
            batch_size: 8,
            seed: 0,
            temperature: 0.6,
            max_sample_length: 128,
            eval_samples_per_class: 16,
            histogram_bin_width: 4,
        }
    }

    pub fn sample_config(&self) -> SampleConfig {
        SampleConfig {
            temperature: self.temperature,
            max_len: self.max_sample_length,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.objective.validate()?;
        let bad = |msg: String| Err(ToyError::Config(msg));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.temperature > 0.0) {
            return Err(ToyError::BadTemperature(self.temperature));
        }
        if self.max_sample_length == 0 || self.eval_samples_per_class == 0 || self.histogram_bin_width == 0 {
            return bad("max_sample_length, eval_samples_per_class and histogram_bin_width must be positive".into());
        }
        Ok(())
    }

    fn eval_seed(&self) -> u64 {
        derive_seed(self.seed, u64::MAX)
    }
}

/// Sampled lengths summarized over every class in one phase.
#[derive(Debug, Clone, PartialEq)]
pub struct LengthStats {
    pub count: usize,
    pub mean: f64,
    /// Population variance.
    pub variance: f64,
    pub truncated: usize,
    pub bin_width: usize,
    /// `histogram[i]` counts lengths in `[i * bin_width, (i+1) * bin_width)`.
    pub histogram: Vec<u64>,
}

impl LengthStats {
    pub fn from_samples(samples: &[ClassSamples], bin_width: usize) -> Self {
        let bin_width = bin_width.max(1);
        let lengths: Vec<usize> = samples.iter().flat_map(|c| c.samples.iter().map(Sample::len)).collect();
        let count = lengths.len();
        let n = count.max(1) as f64;
        let mean = lengths.iter().sum::<usize>() as f64 / n;
        let variance = lengths.iter().map(|&l| (l as f64 - mean).powi(2)).sum::<f64>() / n;
        let mut histogram = vec![0u64; lengths.iter().max().map_or(0, |m| m / bin_width + 1)];
        for l in &lengths {
            histogram[l / bin_width] += 1;
        }
        let truncated = samples
            .iter()
            .flat_map(|c| &c.samples)
            .filter(|s| s.truncated)
            .count();
        Self {
            count,
            mean,
            variance,
            truncated,
            bin_width,
            histogram,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassSamples {
    pub class: usize,
    pub samples: Vec<Sample>,
}

/// Draws `samples_per_class` responses for each class. Each class samples
/// from its own generator seeded by `(seed, class)`, so results do not
/// depend on class order or thread scheduling.
pub fn sample_classes(
    policy: &ToyPolicy,
    classes: &[usize],
    samples_per_class: usize,
    cfg: &SampleConfig,
    seed: u64,
) -> Result<Vec<ClassSamples>> {
    if samples_per_class == 0 {
        return Err(ToyError::Config("samples_per_class must be at least 1".into()));
    }
    classes
        .par_iter()
        .map(|&class| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, class as u64));
            let samples = (0..samples_per_class)
                .map(|_| policy.sample_with(class, cfg, &mut rng))
                .collect::<Result<_>>()?;
            Ok(ClassSamples { class, samples })
        })
        .collect()
}

pub fn length_distribution(
    policy: &ToyPolicy,
    classes: &[usize],
    samples_per_class: usize,
    cfg: &SampleConfig,
    seed: u64,
    bin_width: usize,
) -> Result<LengthStats> {
    let samples = sample_classes(policy, classes, samples_per_class, cfg, seed)?;
    Ok(LengthStats::from_samples(&samples, bin_width))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainTrace {
    /// Mean batch loss before each update.
    pub losses: Vec<f64>,
    /// Mean batch margin before each update: the Bradley-Terry margin, the
    /// odds-ratio term `z` for ORPO, and `e^{ā_w} - e^{ā_l}` for SimPER.
    pub margin_means: Vec<f64>,
    pub initial: LengthStats,
    pub final_stats: LengthStats,
    pub initial_samples: Vec<ClassSamples>,
    pub final_samples: Vec<ClassSamples>,
}

fn summarize(policy: &ToyPolicy, reference: Option<&ToyPolicy>, pair: &TokenPair, spec: &ObjectiveSpec) -> Result<PairSummary> {
    let chosen = policy.score_sequence(pair.prompt_class, &pair.chosen)?.summary();
    let rejected = policy.score_sequence(pair.prompt_class, &pair.rejected)?.summary();
    let mut s = PairSummary::new(chosen, rejected);
    if spec.kind == ObjectiveKind::Sft {
        s.rejected = None;
    }
    if spec.needs_reference() {
        let r = reference.ok_or(ObjectiveError::MissingReference(ObjectiveKind::Dpo))?;
        s = s.with_reference(
            r.score_sequence(pair.prompt_class, &pair.chosen)?.total(),
            r.score_sequence(pair.prompt_class, &pair.rejected)?.total(),
        );
    }
    Ok(s)
}

fn pair_loss(policy: &ToyPolicy, reference: Option<&ToyPolicy>, pair: &TokenPair, spec: &ObjectiveSpec) -> Result<f64> {
    Ok(evaluate(spec, &summarize(policy, reference, pair, spec)?)?.value)
}

/// Adds `scale * ∂loss/∂logits` into `grad` and returns the loss and the
/// trace margin.
fn accumulate_pair(
    policy: &ToyPolicy,
    reference: Option<&ToyPolicy>,
    pair: &TokenPair,
    spec: &ObjectiveSpec,
    scale: f64,
    grad: &mut [f64],
) -> Result<(LossResult, f64)> {
    let summary = summarize(policy, reference, pair, spec)?;
    let res = evaluate(spec, &summary)?;
    let per_token = |len: usize| match res.basis {
        GradientBasis::AverageLogprob => 1.0 / len as f64,
        GradientBasis::TotalLogprob => 1.0,
    };
    let c = pair.prompt_class;
    policy.accumulate_logprob_grad(c, &pair.chosen, scale * res.grad_chosen * per_token(pair.chosen.len()), grad);
    if let Some(g) = res.grad_rejected {
        policy.accumulate_logprob_grad(c, &pair.rejected, scale * g * per_token(pair.rejected.len()), grad);
    }
    let margin = match spec.kind {
        ObjectiveKind::Simper => -res.value,
        ObjectiveKind::Orpo => orpo_penalty_margin(&summary).map_err(|e| ToyError::Config(e.to_string()))?,
        _ => bt_margin(spec, &summary).map_err(|e| ToyError::Config(e.to_string()))?,
    };
    Ok((res, margin))
}

/// Loss and dense parameter gradient for one pair, laid out like
/// [`ToyPolicy::params`].
pub fn pair_gradient(
    policy: &ToyPolicy,
    reference: Option<&ToyPolicy>,
    pair: &TokenPair,
    spec: &ObjectiveSpec,
) -> Result<(LossResult, Vec<f64>)> {
    let mut grad = vec![0.0; policy.params().len()];
    let (res, _) = accumulate_pair(policy, reference, pair, spec, 1.0, &mut grad)?;
    Ok((res, grad))
}

/// Gradient descent on the mean batch loss.
///
/// When `batch_size` covers every pair each step is full-batch; otherwise
/// batches are read from a seeded permutation redrawn every epoch. DPO uses
/// a frozen copy of `policy` as its reference. Length statistics are sampled
/// before and after training with the same seed.
pub fn train(policy: &ToyPolicy, pairs: &[TokenPair], cfg: &TrainConfig) -> Result<(ToyPolicy, TrainTrace)> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(ToyError::NoPairs);
    }
    for p in pairs {
        policy.check_sequence(p.prompt_class, &p.chosen)?;
        policy.check_sequence(p.prompt_class, &p.rejected)?;
    }
    let spec = &cfg.objective;
    let reference = spec.needs_reference().then(|| policy.clone());
    let classes: Vec<usize> = pairs
        .iter()
        .map(|p| p.prompt_class)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let sample_cfg = cfg.sample_config();
    let initial_samples = sample_classes(policy, &classes, cfg.eval_samples_per_class, &sample_cfg, cfg.eval_seed())?;

    let mut current = policy.clone();
    let n = pairs.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;
    let mut epoch = 0u64;
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut margin_means = Vec::with_capacity(cfg.steps);
    let mut grad = vec![0.0; current.params().len()];

    for _ in 0..cfg.steps {
        let batch: Vec<usize> = if cfg.batch_size >= n {
            (0..n).collect()
        } else {
            let mut b = Vec::with_capacity(cfg.batch_size);
            while b.len() < cfg.batch_size {
                if cursor == n {
                    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, epoch)));
                    epoch += 1;
                    cursor = 0;
                }
                b.push(order[cursor]);
                cursor += 1;
            }
            b
        };
        grad.iter_mut().for_each(|g| *g = 0.0);
        let scale = 1.0 / batch.len() as f64;
        let (mut loss, mut margin) = (0.0, 0.0);
        for &i in &batch {
            let (res, m) = accumulate_pair(&current, reference.as_ref(), &pairs[i], spec, scale, &mut grad)?;
            loss += res.value * scale;
            margin += m * scale;
        }
        losses.push(loss);
        margin_means.push(margin);
        for (w, g) in current.params_mut().iter_mut().zip(&grad) {
            *w -= cfg.learning_rate * g;
        }
    }

    let final_samples = sample_classes(&current, &classes, cfg.eval_samples_per_class, &sample_cfg, cfg.eval_seed())?;
    let trace = TrainTrace {
        losses,
        margin_means,
        initial: LengthStats::from_samples(&initial_samples, cfg.histogram_bin_width),
        final_stats: LengthStats::from_samples(&final_samples, cfg.histogram_bin_width),
        initial_samples,
        final_samples,
    };
    Ok((current, trace))
}

/// Finite-difference check of [`pair_gradient`]; DPO uses a frozen copy of
/// `policy` as reference.
pub fn finite_diff_check(policy: &ToyPolicy, pair: &TokenPair, spec: &ObjectiveSpec, h: f64) -> Result<f64> {
    let reference = spec.needs_reference().then(|| policy.clone());
    finite_diff_check_with_reference(policy, reference.as_ref(), pair, spec, h)
}

/// Largest `|analytic - numeric| / max(|analytic|, |numeric|, FD_SCALE_FLOOR)`
/// over every logit in a row the pair's sequences visit.
pub fn finite_diff_check_with_reference(
    policy: &ToyPolicy,
    reference: Option<&ToyPolicy>,
    pair: &TokenPair,
    spec: &ObjectiveSpec,
    h: f64,
) -> Result<f64> {
    if !(h > 1e-8 && h < 1e-3) {
        return Err(ToyError::Config(format!("finite-difference step must lie in (1e-8, 1e-3), got {h}")));
    }
    let (_, analytic) = pair_gradient(policy, reference, pair, spec)?;
    let mut rows = BTreeSet::new();
    let mut visit = |tokens: &[u32]| {
        let mut ctx = policy.bos();
        for &t in tokens {
            rows.insert(policy.row_offset(pair.prompt_class, ctx));
            ctx = t as usize;
        }
    };
    visit(&pair.chosen);
    if spec.kind.is_pairwise() {
        visit(&pair.rejected);
    }
    let mut probe = policy.clone();
    let mut worst = 0.0f64;
    for row in rows {
        for idx in row..row + policy.vocab_size() {
            let orig = probe.params()[idx];
            probe.params_mut()[idx] = orig + h;
            let up = pair_loss(&probe, reference, pair, spec)?;
            probe.params_mut()[idx] = orig - h;
            let down = pair_loss(&probe, reference, pair, spec)?;
            probe.params_mut()[idx] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[idx];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FD_SCALE_FLOOR);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toylab::EOS;

    fn pair() -> TokenPair {
        TokenPair {
            prompt_class: 0,
            chosen: vec![1, 2, EOS],
            rejected: vec![3, 1, 1, 2, EOS],
        }
    }

    #[test]
    fn sft_single_token_gradient_is_softmax_minus_onehot() {
        let p = ToyPolicy::random(5, 1, 1.0, 9).unwrap();
        let pair = TokenPair {
            prompt_class: 0,
            chosen: vec![EOS],
            rejected: vec![2, EOS],
        };
        let (_, g) = pair_gradient(&p, None, &pair, &ObjectiveSpec::defaults(ObjectiveKind::Sft)).unwrap();
        let probs = p.next_token_probs(0, None).unwrap();
        let o = p.row_offset(0, p.bos());
        for j in 0..5 {
            let expect = probs[j] - if j == 0 { 1.0 } else { 0.0 };
            assert!((g[o + j] - expect).abs() < 1e-15);
        }
        let nonzero = g.iter().filter(|v| **v != 0.0).count();
        assert_eq!(nonzero, 5);
    }

    #[test]
    fn fd_check_on_uniform_policy() {
        let p = ToyPolicy::uniform(4, 1).unwrap();
        for kind in ObjectiveKind::ALL {
            let err = finite_diff_check(&p, &pair(), &ObjectiveSpec::defaults(kind), 1e-6).unwrap();
            assert!(err <= 1e-5, "{kind}: {err}");
        }
        assert!(finite_diff_check(&p, &pair(), &ObjectiveSpec::defaults(ObjectiveKind::Sft), 1e-2).is_err());
    }

    #[test]
    fn simper_equal_averages_still_has_gradient() {
        let p = ToyPolicy::uniform(4, 1).unwrap();
        let spec = ObjectiveSpec::defaults(ObjectiveKind::Simper);
        let (res, g) = pair_gradient(&p, None, &pair(), &spec).unwrap();
        assert!(res.value.abs() < 1e-15);
        assert!(g.iter().any(|v| v.abs() > 1e-3));
        assert!(finite_diff_check(&p, &pair(), &spec, 1e-6).unwrap() <= 1e-5);
    }

    #[test]
    fn dpo_without_reference_is_a_config_error() {
        let p = ToyPolicy::uniform(4, 1).unwrap();
        let spec = ObjectiveSpec::defaults(ObjectiveKind::Dpo);
        assert!(matches!(
            pair_gradient(&p, None, &pair(), &spec),
            Err(ToyError::Objective(ObjectiveError::MissingReference(_)))
        ));
    }

    #[test]
    fn zero_steps_is_identity() {
        let p = ToyPolicy::random(4, 2, 0.5, 1).unwrap();
        let mut cfg = TrainConfig::new(ObjectiveSpec::defaults(ObjectiveKind::Lcpo), 0.5);
        cfg.steps = 0;
        let (q, trace) = train(&p, &[pair()], &cfg).unwrap();
        assert_eq!(p, q);
        assert!(trace.losses.is_empty());
        assert_eq!(trace.initial, trace.final_stats);
    }

    #[test]
    fn always_eos_policy_has_unit_lengths() {
        let mut p = ToyPolicy::uniform(4, 2).unwrap();
        let bos = p.bos();
        for c in 0..2 {
            p.logits_row_mut(c, bos).copy_from_slice(&[60.0, -60.0, -60.0, -60.0]);
        }
        let s = length_distribution(&p, &[0, 1], 50, &SampleConfig::default(), 3, 2).unwrap();
        assert_eq!(s.mean, 1.0);
        assert_eq!(s.variance, 0.0);
        assert_eq!(s.histogram, vec![100]);
    }

    #[test]
    fn class_sampling_ignores_order() {
        let p = ToyPolicy::random(6, 3, 1.0, 4).unwrap();
        let cfg = SampleConfig::default();
        let a = sample_classes(&p, &[0, 2], 20, &cfg, 8).unwrap();
        let b = sample_classes(&p, &[2, 0], 20, &cfg, 8).unwrap();
        assert_eq!(a[0], b[1]);
        assert_eq!(a[1], b[0]);
    }

    #[test]
    fn class_map_numbers_by_first_appearance() {
        let m = ClassMap::from_ids(["b", "a", "b", "c"]);
        assert_eq!(m.class_of("b"), Some(0));
        assert_eq!(m.class_of("a"), Some(1));
        assert_eq!(m.class_of("c"), Some(2));
        assert_eq!(m.question_id(1), Some("a"));
        assert_eq!(m.len(), 3);
    }
}
