//! Closed-form preference objectives with analytic gradients.
//!
//! Every objective is written over sequence log-probabilities. DPO consumes
//! total (summed) log-probabilities; SFT, SimPO, SimPER, ORPO and LCPO consume
//! the length-normalized average `ā = (1/|y|) Σ_t log π(y_t)`.
//!
//! ```text
//! p(y)      = exp(ā)                                 clamped to [1e-12, 1 - 1e-12]
//! r(y)      = ln(p / (1 - p))                        odds reward
//! SFT       = -ā_w
//! DPO       = -ln σ(β[(T_w - T^ref_w) - (T_l - T^ref_l)])
//! SimPO     = -ln σ(β ā_w - β ā_l - γ)
//! SimPER    = -exp(ā_w) + exp(ā_l)
//! ORPO      = -ln p_w - λ ln σ(r_w - r_l)
//! LCPO      = -λ ln σ(r_w - r_l + ε)
//! ```
//!
//! Gradients in [`LossResult`] are taken with respect to the quantity the
//! objective consumes (see [`GradientBasis`]). A per-token gradient is the
//! average-basis gradient times `1/|y|`; the total-basis gradient applies to
//! each token unchanged.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::numeric::{sigmoid, softplus};

/// Sequence-level probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]`
/// so the odds ratio stays finite.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ObjectiveError {
    #[error("log-probability sequence is empty")]
    EmptySequence,
    #[error("token log-probability at index {index} is {value}; must be finite and <= 0")]
    InvalidLogprob { index: usize, value: f64 },
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),
    #[error("objective {0} needs reference log-probabilities for chosen and rejected responses")]
    MissingReference(ObjectiveKind),
    #[error("objective {0} needs a rejected response")]
    MissingRejected(ObjectiveKind),
    #[error("operation expects a {expected} spec, got {got}")]
    KindMismatch {
        expected: ObjectiveKind,
        got: ObjectiveKind,
    },
    #[error("unknown objective `{0}` (expected one of sft, dpo, simpo, simper, orpo, lcpo)")]
    UnknownObjective(String),
}

pub type Result<T> = std::result::Result<T, ObjectiveError>;

/// Per-token natural-log probabilities of one response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct LogProbSeq {
    token_logprobs: Vec<f64>,
}

impl LogProbSeq {
    pub fn new(token_logprobs: Vec<f64>) -> Result<Self> {
        if token_logprobs.is_empty() {
            return Err(ObjectiveError::EmptySequence);
        }
        if let Some((index, &value)) = token_logprobs
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v > 0.0)
        {
            return Err(ObjectiveError::InvalidLogprob { index, value });
        }
        Ok(Self { token_logprobs })
    }

    /// `len` copies of the same per-token log-probability.
    pub fn constant(logprob: f64, len: usize) -> Result<Self> {
        Self::new(vec![logprob; len])
    }

    pub fn token_logprobs(&self) -> &[f64] {
        &self.token_logprobs
    }

    /// `|y|`, always at least 1.
    pub fn len(&self) -> usize {
        self.token_logprobs.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `log π(y|x)`, the unnormalized sum.
    pub fn total(&self) -> f64 {
        self.token_logprobs.iter().sum()
    }

    pub fn avg_logprob(&self) -> f64 {
        self.total() / self.len() as f64
    }

    pub fn summary(&self) -> SeqSummary {
        let total = self.total();
        SeqSummary {
            avg: total / self.len() as f64,
            total,
            len: self.len(),
        }
    }
}

impl TryFrom<Vec<f64>> for LogProbSeq {
    type Error = ObjectiveError;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<LogProbSeq> for Vec<f64> {
    fn from(s: LogProbSeq) -> Self {
        s.token_logprobs
    }
}

/// The two scalars an objective reads from a sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeqSummary {
    pub avg: f64,
    pub total: f64,
    pub len: usize,
}

impl SeqSummary {
    /// Summary of a `len`-token sequence with average log-probability `avg`.
    pub fn from_avg(avg: f64, len: usize) -> Self {
        Self {
            avg,
            total: avg * len as f64,
            len,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveKind {
    Sft,
    Dpo,
    Simpo,
    Simper,
    Orpo,
    Lcpo,
}

impl ObjectiveKind {
    pub const ALL: [ObjectiveKind; 6] = [
        ObjectiveKind::Sft,
        ObjectiveKind::Dpo,
        ObjectiveKind::Simpo,
        ObjectiveKind::Simper,
        ObjectiveKind::Orpo,
        ObjectiveKind::Lcpo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ObjectiveKind::Sft => "sft",
            ObjectiveKind::Dpo => "dpo",
            ObjectiveKind::Simpo => "simpo",
            ObjectiveKind::Simper => "simper",
            ObjectiveKind::Orpo => "orpo",
            ObjectiveKind::Lcpo => "lcpo",
        }
    }

    /// Objectives that read a rejected response.
    pub fn is_pairwise(self) -> bool {
        self != ObjectiveKind::Sft
    }
}

impl fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ObjectiveKind {
    type Err = ObjectiveError;

    fn from_str(s: &str) -> Result<Self> {
        ObjectiveKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| ObjectiveError::UnknownObjective(s.to_string()))
    }
}

/// Objective kind plus hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    pub kind: ObjectiveKind,
    /// Preference weight for DPO and SimPO.
    pub beta: f64,
    /// SimPO target margin.
    pub gamma: f64,
    /// Odds-ratio term weight for ORPO and LCPO.
    pub lambda: f64,
    /// Additive margin inside the LCPO sigmoid; 0 gives the plain objective.
    pub margin_epsilon: f64,
}

impl ObjectiveSpec {
    /// Tuned defaults for each method: DPO β=1, SimPO β=2 γ=0.5, ORPO λ=0.2,
    /// LCPO λ=0.3. Unused hyperparameters sit at neutral values.
    pub fn defaults(kind: ObjectiveKind) -> Self {
        let mut spec = Self {
            kind,
            beta: 1.0,
            gamma: 0.0,
            lambda: 1.0,
            margin_epsilon: 0.0,
        };
        match kind {
            ObjectiveKind::Simpo => {
                spec.beta = 2.0;
                spec.gamma = 0.5;
            }
            ObjectiveKind::Orpo => spec.lambda = 0.2,
            ObjectiveKind::Lcpo => spec.lambda = 0.3,
            ObjectiveKind::Sft | ObjectiveKind::Dpo | ObjectiveKind::Simper => {}
        }
        spec
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_margin_epsilon(mut self, eps: f64) -> Self {
        self.margin_epsilon = eps;
        self
    }

    pub fn needs_reference(&self) -> bool {
        self.kind == ObjectiveKind::Dpo
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(ObjectiveError::InvalidHyperparameter(format!(
                "beta must be positive, got {}",
                self.beta
            )));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(ObjectiveError::InvalidHyperparameter(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(ObjectiveError::InvalidHyperparameter(format!(
                "gamma must be non-negative, got {}",
                self.gamma
            )));
        }
        if !self.margin_epsilon.is_finite() {
            return Err(ObjectiveError::InvalidHyperparameter(format!(
                "margin_epsilon must be finite, got {}",
                self.margin_epsilon
            )));
        }
        Ok(())
    }

    fn expect_kind(&self, expected: ObjectiveKind) -> Result<()> {
        if self.kind != expected {
            return Err(ObjectiveError::KindMismatch {
                expected,
                got: self.kind,
            });
        }
        self.validate()
    }
}

/// What `grad_chosen` / `grad_rejected` are derivatives with respect to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientBasis {
    /// `∂loss/∂ā`, the length-normalized log-probability.
    AverageLogprob,
    /// `∂loss/∂ log π(y|x)`, the summed log-probability (DPO).
    TotalLogprob,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    pub value: f64,
    pub grad_chosen: f64,
    /// `None` for SFT, which never reads the rejected response.
    pub grad_rejected: Option<f64>,
    pub basis: GradientBasis,
    /// Named intermediates: `p_w`, `p_l`, `r_w`, `r_l`, `z`, `margin`.
    pub aux: BTreeMap<&'static str, f64>,
}

impl LossResult {
    fn new(value: f64, grad_chosen: f64, grad_rejected: Option<f64>, basis: GradientBasis) -> Self {
        Self {
            value,
            grad_chosen,
            grad_rejected,
            basis,
            aux: BTreeMap::new(),
        }
    }

    fn with(mut self, key: &'static str, v: f64) -> Self {
        self.aux.insert(key, v);
        self
    }
}

/// Clamped `p = exp(ā)` and `dp/dā` (zero where the clamp is active).
pub(crate) fn prob_and_slope(avg: f64) -> (f64, f64) {
    let p = avg.exp();
    if p < PROB_CLAMP {
        (PROB_CLAMP, 0.0)
    } else if p > 1.0 - PROB_CLAMP {
        (1.0 - PROB_CLAMP, 0.0)
    } else {
        (p, p)
    }
}

/// Odds reward `ln(p/(1-p))` and its slope `dr/dā`.
pub(crate) fn odds_and_slope(avg: f64) -> (f64, f64) {
    let (p, dp) = prob_and_slope(avg);
    let r = p.ln() - (-p).ln_1p();
    (r, dp / (p * (1.0 - p)))
}

pub fn avg_logprob(seq: &LogProbSeq) -> f64 {
    seq.avg_logprob()
}

/// `clamp(exp(ā), 1e-12, 1 - 1e-12)`.
pub fn seq_prob(seq: &LogProbSeq) -> f64 {
    prob_and_slope(seq.avg_logprob()).0
}

/// `ln(p/(1-p))` with `p = seq_prob(seq)`.
pub fn odds_reward(seq: &LogProbSeq) -> f64 {
    odds_and_slope(seq.avg_logprob()).0
}

pub fn sft_loss(chosen: &LogProbSeq) -> LossResult {
    sft_from_avg(chosen.avg_logprob())
}

fn sft_from_avg(avg_w: f64) -> LossResult {
    LossResult::new(-avg_w, -1.0, None, GradientBasis::AverageLogprob)
}

/// DPO over total log-probabilities. Both reference sequences are required.
pub fn dpo_loss(
    chosen: &LogProbSeq,
    rejected: &LogProbSeq,
    ref_chosen: Option<&LogProbSeq>,
    ref_rejected: Option<&LogProbSeq>,
    spec: &ObjectiveSpec,
) -> Result<LossResult> {
    spec.expect_kind(ObjectiveKind::Dpo)?;
    let (Some(rw), Some(rl)) = (ref_chosen, ref_rejected) else {
        return Err(ObjectiveError::MissingReference(ObjectiveKind::Dpo));
    };
    Ok(dpo_from_totals(
        chosen.total(),
        rejected.total(),
        rw.total(),
        rl.total(),
        spec.beta,
    ))
}

fn dpo_from_totals(pol_w: f64, pol_l: f64, ref_w: f64, ref_l: f64, beta: f64) -> LossResult {
    let reward_w = beta * (pol_w - ref_w);
    let reward_l = beta * (pol_l - ref_l);
    let margin = reward_w - reward_l;
    let g = beta * sigmoid(-margin);
    LossResult::new(softplus(-margin), -g, Some(g), GradientBasis::TotalLogprob)
        .with("margin", margin)
        .with("r_w", reward_w)
        .with("r_l", reward_l)
}

/// `β (log π_θ(y|x) - log π_ref(y|x))`: the DPO implicit reward without the
/// `β log Z(x)` term. The partition term is shared by both responses of a
/// prompt and cancels in any pairwise difference, so this is the reward up to
/// a per-prompt additive constant.
pub fn dpo_implicit_reward(policy: &LogProbSeq, reference: &LogProbSeq, beta: f64) -> f64 {
    beta * (policy.total() - reference.total())
}

pub fn simpo_loss(chosen: &LogProbSeq, rejected: &LogProbSeq, spec: &ObjectiveSpec) -> Result<LossResult> {
    spec.expect_kind(ObjectiveKind::Simpo)?;
    Ok(simpo_from_avg(
        chosen.avg_logprob(),
        rejected.avg_logprob(),
        spec.beta,
        spec.gamma,
    ))
}

fn simpo_from_avg(avg_w: f64, avg_l: f64, beta: f64, gamma: f64) -> LossResult {
    let margin = beta * avg_w - beta * avg_l - gamma;
    let g = beta * sigmoid(-margin);
    LossResult::new(softplus(-margin), -g, Some(g), GradientBasis::AverageLogprob).with("margin", margin)
}

/// `-exp(ā_w) + exp(ā_l)`; lies in `(-1, 1)` and has no hyperparameters.
pub fn simper_loss(chosen: &LogProbSeq, rejected: &LogProbSeq) -> LossResult {
    simper_from_avg(chosen.avg_logprob(), rejected.avg_logprob())
}

fn simper_from_avg(avg_w: f64, avg_l: f64) -> LossResult {
    let pw = avg_w.exp();
    let pl = avg_l.exp();
    LossResult::new(-pw + pl, -pw, Some(pl), GradientBasis::AverageLogprob)
        .with("p_w", pw)
        .with("p_l", pl)
}

pub fn orpo_loss(chosen: &LogProbSeq, rejected: &LogProbSeq, spec: &ObjectiveSpec) -> Result<LossResult> {
    spec.expect_kind(ObjectiveKind::Orpo)?;
    Ok(orpo_from_avg(chosen.avg_logprob(), rejected.avg_logprob(), spec.lambda))
}

fn orpo_from_avg(avg_w: f64, avg_l: f64, lambda: f64) -> LossResult {
    let (pw, dpw) = prob_and_slope(avg_w);
    let penalty = odds_penalty(avg_w, avg_l, lambda, 0.0);
    // d(-ln p_w)/dā_w is -1 inside the clamp and 0 outside it
    let nll_grad = -dpw / pw;
    let mut out = LossResult::new(
        -pw.ln() + penalty.value,
        nll_grad + penalty.grad_chosen,
        penalty.grad_rejected,
        GradientBasis::AverageLogprob,
    );
    out.aux = penalty.aux;
    out
}

pub fn lcpo_loss(chosen: &LogProbSeq, rejected: &LogProbSeq, spec: &ObjectiveSpec) -> Result<LossResult> {
    spec.expect_kind(ObjectiveKind::Lcpo)?;
    Ok(odds_penalty(
        chosen.avg_logprob(),
        rejected.avg_logprob(),
        spec.lambda,
        spec.margin_epsilon,
    ))
}

/// `-λ ln σ(r_w - r_l + ε)`: LCPO, and the preference term of ORPO when ε=0.
fn odds_penalty(avg_w: f64, avg_l: f64, lambda: f64, eps: f64) -> LossResult {
    let (pw, _) = prob_and_slope(avg_w);
    let (pl, _) = prob_and_slope(avg_l);
    let (rw, drw) = odds_and_slope(avg_w);
    let (rl, drl) = odds_and_slope(avg_l);
    let z = rw - rl;
    let margin = z + eps;
    let s = lambda * sigmoid(-margin);
    LossResult::new(
        lambda * softplus(-margin),
        -s * drw,
        Some(s * drl),
        GradientBasis::AverageLogprob,
    )
    .with("p_w", pw)
    .with("p_l", pl)
    .with("r_w", rw)
    .with("r_l", rl)
    .with("z", z)
    .with("margin", margin)
}

/// Both sides of the NLL-as-Bradley-Terry identity
/// `-ā = -ln σ(ln(p/(1-p)))` with `p = exp(ā)`.
///
/// Returns `(lhs, rhs)`; they agree to rounding whenever `p` lies inside the
/// clamp interval. The identity needs the leading minus on the log-sigmoid.
pub fn nll_bt_value(seq: &LogProbSeq) -> (f64, f64) {
    (-seq.avg_logprob(), softplus(-odds_reward(seq)))
}

/// Log-probability summaries for one preference pair, as consumed by
/// [`evaluate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairSummary {
    pub chosen: SeqSummary,
    pub rejected: Option<SeqSummary>,
    /// Reference-policy totals `(log π_ref(y_w|x), log π_ref(y_l|x))`.
    pub reference_totals: Option<(f64, f64)>,
}

impl PairSummary {
    pub fn new(chosen: SeqSummary, rejected: SeqSummary) -> Self {
        Self {
            chosen,
            rejected: Some(rejected),
            reference_totals: None,
        }
    }

    pub fn with_reference(mut self, chosen_total: f64, rejected_total: f64) -> Self {
        self.reference_totals = Some((chosen_total, rejected_total));
        self
    }
}

/// Evaluates whichever objective `spec` names on summarized inputs.
pub fn evaluate(spec: &ObjectiveSpec, pair: &PairSummary) -> Result<LossResult> {
    spec.validate()?;
    let w = pair.chosen;
    if spec.kind == ObjectiveKind::Sft {
        return Ok(sft_from_avg(w.avg));
    }
    let l = pair.rejected.ok_or(ObjectiveError::MissingRejected(spec.kind))?;
    Ok(match spec.kind {
        ObjectiveKind::Sft => unreachable!(),
        ObjectiveKind::Dpo => {
            let (rw, rl) = pair
                .reference_totals
                .ok_or(ObjectiveError::MissingReference(ObjectiveKind::Dpo))?;
            dpo_from_totals(w.total, l.total, rw, rl, spec.beta)
        }
        ObjectiveKind::Simpo => simpo_from_avg(w.avg, l.avg, spec.beta, spec.gamma),
        ObjectiveKind::Simper => simper_from_avg(w.avg, l.avg),
        ObjectiveKind::Orpo => orpo_from_avg(w.avg, l.avg, spec.lambda),
        ObjectiveKind::Lcpo => odds_penalty(w.avg, l.avg, spec.lambda, spec.margin_epsilon),
    })
}
