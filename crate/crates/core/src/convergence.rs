//! Bradley-Terry convergence analysis of the preference objectives.
//!
//! Each BT-family objective can be rewritten as `-ln σ(R)` for some margin `R`.
//! Training has converged on a pair once `R` exceeds the saturation point `m`
//! (`σ(m) ≈ 1`). This module extracts `R` for each objective and evaluates the
//! resulting convergence conditions:
//!
//! | objective | condition |
//! |-----------|-----------|
//! | SFT    | `p_w > σ(m)`, i.e. a per-token geometric mean of `σ(m)^(1/|y|)` |
//! | DPO    | `T_w - T_l > (T^ref_w - T^ref_l) + m/β` |
//! | SimPO  | `ā_w - ā_l > (γ + m)/β` |
//! | ORPO   | `2 p_w^(1/λ) > (1 - 2σ(z - m)) / (1 + e^m)` |
//! | SimPER | none: the loss takes negative values, which `-ln σ(·)` never does |

use std::fmt::{self, Write as _};
use std::io;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::numeric::{logit, sigmoid, softplus};
use crate::objectives::{
    self, odds_and_slope, prob_and_slope, ObjectiveKind, ObjectiveSpec, PairSummary,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConvergenceError {
    #[error("SimPER has no Bradley-Terry form; use simper_no_bt_witness")]
    NoBtForm,
    #[error("probability {name}={value} must lie strictly inside (0, 1)")]
    ProbabilityOutOfRange { name: &'static str, value: f64 },
    #[error("invalid convergence config: {0}")]
    InvalidConfig(String),
    #[error("ORPO composite margin undefined: e^-z - (1+e^-z) p_w^(1/λ) = {0} is not positive")]
    CompositeUndefined(f64),
    #[error(transparent)]
    Objective(#[from] objectives::ObjectiveError),
}

pub type Result<T> = std::result::Result<T, ConvergenceError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceConfig {
    /// Sigmoid saturation point.
    pub m: f64,
    pub lambda: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for ConvergenceConfig {
    /// `m = 5` (σ(5) ≈ 0.9933), ORPO's λ = 0.2, β = 1, γ = 0.
    fn default() -> Self {
        Self {
            m: 5.0,
            lambda: 0.2,
            beta: 1.0,
            gamma: 0.0,
        }
    }
}

impl ConvergenceConfig {
    /// Default `m` with the hyperparameters of an objective's tuned defaults.
    pub fn for_objective(spec: &ObjectiveSpec) -> Self {
        Self {
            m: 5.0,
            lambda: spec.lambda,
            beta: spec.beta,
            gamma: spec.gamma,
        }
    }

    pub fn with_m(mut self, m: f64) -> Self {
        self.m = m;
        self
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(ConvergenceError::InvalidConfig(msg));
        if !(self.m > 0.0 && self.m.is_finite()) {
            return bad(format!("m must be positive, got {}", self.m));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be positive, got {}", self.lambda));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be positive, got {}", self.beta));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be non-negative, got {}", self.gamma));
        }
        Ok(())
    }
}

/// Which objective a report row describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportObjective {
    Sft,
    /// Per-token probability needed for SFT saturation at a given length.
    SftPerToken,
    Dpo,
    Simpo,
    Simper,
    Orpo,
    Lcpo,
}

impl ReportObjective {
    pub fn name(self) -> &'static str {
        match self {
            ReportObjective::Sft => "sft",
            ReportObjective::SftPerToken => "sft_per_token",
            ReportObjective::Dpo => "dpo",
            ReportObjective::Simpo => "simpo",
            ReportObjective::Simper => "simper",
            ReportObjective::Orpo => "orpo",
            ReportObjective::Lcpo => "lcpo",
        }
    }
}

impl fmt::Display for ReportObjective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One evaluated convergence condition.
///
/// For every BT-family row `satisfied == (margin_value > threshold)`. SimPER
/// rows instead record a negative-loss witness: `margin_value` is the SimPER
/// loss and `satisfied` means a witness was found.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub objective: ReportObjective,
    pub margin_value: f64,
    pub threshold: f64,
    pub satisfied: bool,
    /// Scenario parameters, `key=value` pairs joined by `;`.
    pub params: String,
    /// Human-readable derivation trace.
    pub detail: String,
}

impl ConvergenceReport {
    fn bt(objective: ReportObjective, margin_value: f64, threshold: f64, params: String, detail: String) -> Self {
        Self {
            objective,
            margin_value,
            threshold,
            satisfied: margin_value > threshold,
            params,
            detail,
        }
    }
}

/// Argument of the sigmoid in each objective's `-ln σ(R)` rewrite.
///
/// * SFT: `logit(p_w)` (the rejected side is absent, equivalently `p_l = 1/2`)
/// * DPO: `β[(T_w - T^ref_w) - (T_l - T^ref_l)]`
/// * SimPO: `β ā_w - β ā_l - γ`
/// * LCPO: `r_w - r_l + ε`
/// * ORPO: the composite term
///   `ln[(1 + (1+e^{-z}) p_w^{1/λ}) / (e^{-z} - (1+e^{-z}) p_w^{1/λ})]`,
///   only defined while the denominator is positive. Note that
///   `σ(composite) = σ(z) + p_w^{1/λ}`, which is not the ORPO loss; use
///   [`orpo_exact_margin`] for a margin that reproduces it.
pub fn bt_margin(spec: &ObjectiveSpec, pair: &PairSummary) -> Result<f64> {
    spec.validate()?;
    let w = pair.chosen;
    let rejected = || {
        pair.rejected
            .ok_or(objectives::ObjectiveError::MissingRejected(spec.kind))
    };
    match spec.kind {
        ObjectiveKind::Simper => Err(ConvergenceError::NoBtForm),
        ObjectiveKind::Sft => Ok(odds_and_slope(w.avg).0),
        ObjectiveKind::Dpo => {
            let l = rejected()?;
            let (rw, rl) = pair
                .reference_totals
                .ok_or(objectives::ObjectiveError::MissingReference(ObjectiveKind::Dpo))?;
            Ok(spec.beta * ((w.total - rw) - (l.total - rl)))
        }
        ObjectiveKind::Simpo => {
            let l = rejected()?;
            Ok(spec.beta * w.avg - spec.beta * l.avg - spec.gamma)
        }
        ObjectiveKind::Lcpo => {
            let l = rejected()?;
            Ok(odds_and_slope(w.avg).0 - odds_and_slope(l.avg).0 + spec.margin_epsilon)
        }
        ObjectiveKind::Orpo => {
            let l = rejected()?;
            let z = odds_and_slope(w.avg).0 - odds_and_slope(l.avg).0;
            let pw = prob_and_slope(w.avg).0;
            orpo_composite_margin(z, pw, spec.lambda)
        }
    }
}

fn orpo_composite_margin(z: f64, pw: f64, lambda: f64) -> Result<f64> {
    let a = pw.powf(1.0 / lambda);
    let enz = (-z).exp();
    let num = 1.0 + (1.0 + enz) * a;
    let den = enz - (1.0 + enz) * a;
    if den <= 0.0 {
        return Err(ConvergenceError::CompositeUndefined(den));
    }
    Ok(num.ln() - den.ln())
}

/// The odds-ratio argument `z = r_w - r_l` inside ORPO's preference term.
/// `λ · softplus(-z)` is ORPO's loss minus its `-ln p_w` part.
pub fn orpo_penalty_margin(pair: &PairSummary) -> Result<f64> {
    let l = pair
        .rejected
        .ok_or(objectives::ObjectiveError::MissingRejected(ObjectiveKind::Orpo))?;
    Ok(odds_and_slope(pair.chosen.avg).0 - odds_and_slope(l.avg).0)
}

/// `R` with `-λ ln σ(R)` equal to the full ORPO loss:
/// `R = logit(p_w^{1/λ} σ(z))`.
pub fn orpo_exact_margin(pair: &PairSummary, lambda: f64) -> Result<f64> {
    let z = orpo_penalty_margin(pair)?;
    let pw = prob_and_slope(pair.chosen.avg).0;
    // ln q = ln p_w / λ + ln σ(z)
    let ln_q = pw.ln() / lambda - softplus(-z);
    Ok(ln_q - (-ln_q.exp()).ln_1p())
}

/// `σ(m) = e^m / (1 + e^m)`: the sequence probability SFT must exceed.
pub fn sft_saturation_threshold(cfg: &ConvergenceConfig) -> f64 {
    sigmoid(cfg.m)
}

/// `σ(m)^(1/length)`: the geometric-mean per-token probability needed for a
/// `length`-token response to clear the SFT threshold.
pub fn per_token_requirement(cfg: &ConvergenceConfig, length: usize) -> f64 {
    assert!(length >= 1, "length must be at least 1");
    (-softplus(-cfg.m) / length as f64).exp()
}

/// The `m` with `σ(m) = prob`. `σ(m) > 0.99` needs `m > ln 99 ≈ 4.595`.
pub fn saturation_point_for(prob: f64) -> f64 {
    logit(prob)
}

/// Sign regime of the ORPO condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrpoRegime {
    /// `z > m`: the right-hand side is negative and the condition holds;
    /// convergence then rests on the SFT analysis.
    AboveSaturation,
    /// `z <= m`: the condition can fail; the failing branch is the under-fit
    /// region `(sf/(1+e^m))^{1/λ} < p_w < p_l` for some `sf ∈ (0, 1)`.
    BelowSaturation,
}

pub fn orpo_regime(z: f64, cfg: &ConvergenceConfig) -> OrpoRegime {
    if z > cfg.m {
        OrpoRegime::AboveSaturation
    } else {
        OrpoRegime::BelowSaturation
    }
}

/// Lower edge `(sf / (1 + e^m))^{1/λ}` of ORPO's under-fit band for a
/// caller-chosen scaling factor `sf ∈ (0, 1)`. The factor has no canonical
/// value; it stays a free parameter.
pub fn orpo_underfit_lower_bound(sf: f64, cfg: &ConvergenceConfig) -> Result<f64> {
    if !(sf > 0.0 && sf < 1.0) {
        return Err(ConvergenceError::ProbabilityOutOfRange { name: "sf", value: sf });
    }
    Ok((sf * sigmoid(-cfg.m)).powf(1.0 / cfg.lambda))
}

/// Evaluates `2 p_w^{1/λ} > (1/(1+e^m)) (1 - 2σ(z - m))` with
/// `z = logit(p_w) - logit(p_l)`. `margin_value` is the left side and
/// `threshold` the right side.
pub fn orpo_condition(p_w: f64, p_l: f64, cfg: &ConvergenceConfig) -> Result<ConvergenceReport> {
    cfg.validate()?;
    for (name, value) in [("p_w", p_w), ("p_l", p_l)] {
        if !(value > 0.0 && value < 1.0) {
            return Err(ConvergenceError::ProbabilityOutOfRange { name, value });
        }
    }
    let z = logit(p_w) - logit(p_l);
    let lhs = 2.0 * p_w.powf(1.0 / cfg.lambda);
    let rhs = sigmoid(-cfg.m) * (1.0 - 2.0 * sigmoid(z - cfg.m));
    let regime = orpo_regime(z, cfg);
    let mut detail = format!(
        "z = logit({p_w}) - logit({p_l}) = {z:.6}; LHS 2*p_w^(1/{}) = {lhs:.6e}; RHS (1/(1+e^{}))*(1-2*sigmoid(z-m)) = {rhs:.6e}",
        cfg.lambda, cfg.m
    );
    match regime {
        OrpoRegime::AboveSaturation => {
            detail.push_str("; z > m so RHS < 0 < LHS; convergence reduces to the SFT condition")
        }
        OrpoRegime::BelowSaturation => {
            let _ = write!(
                detail,
                "; z <= m; under-fit branch (sf/(1+e^m))^(1/lambda) < p_w < p_l with sf in (0,1) unspecified"
            );
        }
    }
    Ok(ConvergenceReport::bt(
        ReportObjective::Orpo,
        lhs,
        rhs,
        format!("lambda={};m={};p_w={};p_l={}", cfg.lambda, cfg.m, p_w, p_l),
        detail,
    ))
}

/// `(T^ref_w - T^ref_l) + m/β`: the policy log-probability gap DPO needs
/// for saturation.
pub fn dpo_margin_floor(ref_chosen_total: f64, ref_rejected_total: f64, cfg: &ConvergenceConfig) -> f64 {
    (ref_chosen_total - ref_rejected_total) + cfg.m / cfg.beta
}

/// `(γ + m)/β`: the normalized log-probability gap SimPO needs.
pub fn simpo_margin_floor(cfg: &ConvergenceConfig) -> f64 {
    (cfg.gamma + cfg.m) / cfg.beta
}

/// SFT row: `p_w` against `σ(m)`.
pub fn sft_condition(p_w: f64, cfg: &ConvergenceConfig) -> Result<ConvergenceReport> {
    cfg.validate()?;
    if !(p_w > 0.0 && p_w < 1.0) {
        return Err(ConvergenceError::ProbabilityOutOfRange { name: "p_w", value: p_w });
    }
    let threshold = sft_saturation_threshold(cfg);
    Ok(ConvergenceReport::bt(
        ReportObjective::Sft,
        p_w,
        threshold,
        format!("m={};p_w={}", cfg.m, p_w),
        format!(
            "p_w/(1-p_w) > e^m  <=>  p_w > e^m/(1+e^m) = {threshold:.9}; logit(p_w) = {:.6}",
            logit(p_w)
        ),
    ))
}

/// Per-token row: a typical per-token probability against `σ(m)^(1/length)`.
pub fn per_token_condition(token_prob: f64, length: usize, cfg: &ConvergenceConfig) -> Result<ConvergenceReport> {
    cfg.validate()?;
    let threshold = per_token_requirement(cfg, length);
    Ok(ConvergenceReport::bt(
        ReportObjective::SftPerToken,
        token_prob,
        threshold,
        format!("m={};length={};token_p={}", cfg.m, length, token_prob),
        format!(
            "prod of {length} token probabilities > sigma(m) needs geometric mean > sigma(m)^(1/{length}) = {threshold:.9}"
        ),
    ))
}

/// DPO row: policy total gap `T_w - T_l` against [`dpo_margin_floor`].
pub fn dpo_condition(
    policy_gap: f64,
    ref_chosen_total: f64,
    ref_rejected_total: f64,
    cfg: &ConvergenceConfig,
) -> Result<ConvergenceReport> {
    cfg.validate()?;
    let floor = dpo_margin_floor(ref_chosen_total, ref_rejected_total, cfg);
    Ok(ConvergenceReport::bt(
        ReportObjective::Dpo,
        policy_gap,
        floor,
        format!(
            "beta={};m={};ref_gap={}",
            cfg.beta,
            cfg.m,
            ref_chosen_total - ref_rejected_total
        ),
        format!("log pi(y_w) - log pi(y_l) > ref gap + m/beta = {floor:.6}"),
    ))
}

/// SimPO row: normalized gap `ā_w - ā_l` against [`simpo_margin_floor`].
pub fn simpo_condition(avg_gap: f64, cfg: &ConvergenceConfig) -> Result<ConvergenceReport> {
    cfg.validate()?;
    let floor = simpo_margin_floor(cfg);
    Ok(ConvergenceReport::bt(
        ReportObjective::Simpo,
        avg_gap,
        floor,
        format!("beta={};gamma={};m={}", cfg.beta, cfg.gamma, cfg.m),
        format!("avg_w - avg_l > (gamma + m)/beta = {floor:.6}"),
    ))
}

/// An input on which the SimPER loss is negative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimperWitness {
    pub avg_chosen: f64,
    pub avg_rejected: f64,
    pub value: f64,
    /// 1-based index of the random draw that produced the witness.
    pub draw: usize,
}

impl SimperWitness {
    pub fn report(&self) -> ConvergenceReport {
        ConvergenceReport {
            objective: ReportObjective::Simper,
            margin_value: self.value,
            threshold: 0.0,
            satisfied: true,
            params: format!(
                "avg_w={};avg_l={};draw={}",
                self.avg_chosen, self.avg_rejected, self.draw
            ),
            detail: format!(
                "SimPER loss {:.6} < 0 while -ln sigma(x) > 0 for every x: no BT rewrite exists",
                self.value
            ),
        }
    }
}

/// Searches random length-normalized log-probabilities for a negative SimPER
/// loss, a constructive proof that SimPER has no `-ln σ(·)` form.
///
/// Each draw samples two values in `[-5, 0]` and tries both assignments to
/// (chosen, rejected), so any draw with distinct values yields a witness.
pub fn simper_no_bt_witness(samples: usize, seed: u64) -> Option<SimperWitness> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (1..=samples).find_map(|draw| {
        let a: f64 = rng.random_range(-5.0..=0.0);
        let b: f64 = rng.random_range(-5.0..=0.0);
        find_simper_witness([(a, b), (b, a)], draw)
    })
}

/// First candidate `(ā_w, ā_l)` with a negative SimPER loss.
pub fn find_simper_witness(
    candidates: impl IntoIterator<Item = (f64, f64)>,
    draw: usize,
) -> Option<SimperWitness> {
    candidates.into_iter().find_map(|(w, l)| {
        let value = -w.exp() + l.exp();
        (value < 0.0).then_some(SimperWitness {
            avg_chosen: w,
            avg_rejected: l,
            value,
            draw,
        })
    })
}

/// Parameter grid for [`analyze`].
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisGrid {
    pub m_values: Vec<f64>,
    pub lambdas: Vec<f64>,
    /// Probability grid for ORPO sweeps, applied to both `p_w` and `p_l`.
    pub probs: Vec<f64>,
    pub dpo_beta: f64,
    pub simpo_beta: f64,
    pub simpo_gamma: f64,
    pub sft_probes: Vec<f64>,
    pub token_probe: f64,
    pub lengths: Vec<usize>,
    pub gap_probes: Vec<f64>,
    pub witness_samples: usize,
    pub seed: u64,
}

impl Default for AnalysisGrid {
    fn default() -> Self {
        Self {
            m_values: vec![5.0],
            lambdas: vec![0.2],
            probs: (1..=19).map(|i| i as f64 * 0.05).collect(),
            dpo_beta: 1.0,
            simpo_beta: 2.0,
            simpo_gamma: 0.5,
            sft_probes: vec![0.5, 0.9, 0.99, 0.999],
            // upper end of typical per-token probabilities on long traces
            token_probe: 0.5,
            lengths: vec![1, 10, 1000],
            gap_probes: vec![1.0, 3.0, 10.0],
            witness_samples: 10,
            seed: 0,
        }
    }
}

/// Runs every condition over the grid, in a fixed order: per `m`, the SFT,
/// per-token, DPO and SimPO rows, then one ORPO sweep block per λ; the SimPER
/// witness row comes last.
pub fn analyze(grid: &AnalysisGrid) -> Result<Vec<ConvergenceReport>> {
    let mut rows = Vec::new();
    for &m in &grid.m_values {
        let base = ConvergenceConfig::default().with_m(m);
        for &p in &grid.sft_probes {
            rows.push(sft_condition(p, &base)?);
        }
        for &len in &grid.lengths {
            rows.push(per_token_condition(grid.token_probe, len, &base)?);
        }
        let dpo = base.with_beta(grid.dpo_beta);
        for &gap in &grid.gap_probes {
            rows.push(dpo_condition(gap, 0.0, 0.0, &dpo)?);
        }
        let simpo = base.with_beta(grid.simpo_beta).with_gamma(grid.simpo_gamma);
        for &gap in &grid.gap_probes {
            rows.push(simpo_condition(gap, &simpo)?);
        }
        for &lambda in &grid.lambdas {
            let cfg = base.with_lambda(lambda);
            for &pw in &grid.probs {
                for &pl in &grid.probs {
                    rows.push(orpo_condition(pw, pl, &cfg)?);
                }
            }
        }
    }
    match simper_no_bt_witness(grid.witness_samples, grid.seed) {
        Some(w) => rows.push(w.report()),
        None => rows.push(ConvergenceReport {
            objective: ReportObjective::Simper,
            margin_value: 0.0,
            threshold: 0.0,
            satisfied: false,
            params: format!("samples={};seed={}", grid.witness_samples, grid.seed),
            detail: "no negative SimPER value found".into(),
        }),
    }
    Ok(rows)
}

/// CSV header written by [`write_reports_csv`].
pub const REPORT_CSV_HEADER: &str = "objective,margin,threshold,satisfied,params";

pub fn write_reports_csv<W: io::Write>(reports: &[ConvergenceReport], mut out: W) -> io::Result<()> {
    writeln!(out, "{REPORT_CSV_HEADER}")?;
    for r in reports {
        writeln!(
            out,
            "{},{:.9},{:.9},{},{}",
            r.objective, r.margin_value, r.threshold, r.satisfied, r.params
        )?;
    }
    Ok(())
}

/// Plain-text rendering with derivation traces.
pub fn render_reports_text(reports: &[ConvergenceReport]) -> String {
    let mut s = String::new();
    for r in reports {
        let verdict = if r.satisfied { "SATISFIED" } else { "violated" };
        let _ = writeln!(s, "[{}] {} ({})", r.objective, verdict, r.params);
        let _ = writeln!(s, "    margin {:.9} vs threshold {:.9}", r.margin_value, r.threshold);
        let _ = writeln!(s, "    {}", r.detail);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::SeqSummary;

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn sft_threshold_examples() {
        let cfg = ConvergenceConfig::default();
        close(sft_saturation_threshold(&cfg), 0.9933071490757153, 1e-15);
        close(sft_saturation_threshold(&cfg.with_m(1e-300)), 0.5, 1e-15);
        close(sft_saturation_threshold(&cfg.with_m(99f64.ln())), 0.99, 1e-15);
        close(saturation_point_for(0.99), 4.595119850134590, 1e-12);
    }

    #[test]
    fn per_token_examples() {
        let cfg = ConvergenceConfig::default();
        close(per_token_requirement(&cfg, 1), 0.9933071490757153, 1e-15);
        close(per_token_requirement(&cfg, 1000), 0.9999932846740588, 1e-15);
        close(per_token_requirement(&cfg, 10), 0.9993286905801509, 1e-15);
    }

    #[test]
    fn margin_floor_examples() {
        let cfg = ConvergenceConfig::default();
        assert_eq!(dpo_margin_floor(-3.0, -3.0, &cfg), 5.0);
        assert_eq!(dpo_margin_floor(-3.0, -3.0, &cfg.with_beta(0.5)), 10.0);
        assert_eq!(dpo_margin_floor(-10.0, -12.0, &cfg), 7.0);
        assert_eq!(simpo_margin_floor(&cfg.with_gamma(0.5).with_beta(2.0)), 2.75);
        assert_eq!(simpo_margin_floor(&cfg.with_gamma(0.0).with_beta(1.0)), 5.0);
        let simpo = ConvergenceConfig::for_objective(&ObjectiveSpec::defaults(ObjectiveKind::Simpo));
        assert_eq!(simpo_margin_floor(&simpo), 2.75);
    }

    #[test]
    fn bt_margin_examples() {
        let s = SeqSummary::from_avg(-0.7, 4);
        let lcpo = ObjectiveSpec::defaults(ObjectiveKind::Lcpo);
        assert_eq!(bt_margin(&lcpo, &PairSummary::new(s, s)).unwrap(), 0.0);

        let sft = ObjectiveSpec::defaults(ObjectiveKind::Sft);
        let p = SeqSummary::from_avg(0.993307f64.ln(), 1);
        close(bt_margin(&sft, &PairSummary::new(p, p)).unwrap(), 5.0, 1e-3);

        let simpo = ObjectiveSpec::defaults(ObjectiveKind::Simpo);
        close(bt_margin(&simpo, &PairSummary::new(s, s)).unwrap(), -0.5, 1e-15);

        let simper = ObjectiveSpec::defaults(ObjectiveKind::Simper);
        assert_eq!(
            bt_margin(&simper, &PairSummary::new(s, s)),
            Err(ConvergenceError::NoBtForm)
        );
    }

    #[test]
    fn orpo_composite_identity() {
        // σ(composite) = σ(z) + p_w^{1/λ} wherever the composite is defined
        let spec = ObjectiveSpec::defaults(ObjectiveKind::Orpo);
        let pair = PairSummary::new(SeqSummary::from_avg(-1.5, 3), SeqSummary::from_avg(-0.4, 9));
        let r = bt_margin(&spec, &pair).unwrap();
        let z = orpo_penalty_margin(&pair).unwrap();
        let pw = (-1.5f64).exp();
        close(sigmoid(r), sigmoid(z) + pw.powf(5.0), 1e-12);

        let saturated = PairSummary::new(SeqSummary::from_avg(-0.01, 3), SeqSummary::from_avg(-3.0, 9));
        assert!(matches!(
            bt_margin(&spec, &saturated),
            Err(ConvergenceError::CompositeUndefined(_))
        ));
    }

    #[test]
    fn orpo_condition_examples() {
        let cfg = ConvergenceConfig::default();
        let r = orpo_condition(0.99, 0.01, &cfg).unwrap();
        assert!(r.satisfied && r.threshold < 0.0 && r.margin_value > 0.0);

        // z = 0: RHS = σ(-5)(1 - 2σ(-5)); holds iff p_w > (RHS/2)^λ
        let r = orpo_condition(0.5, 0.5, &cfg).unwrap();
        close(r.threshold, 0.006603262417295454, 1e-15);
        close(r.margin_value, 2.0 * 0.5f64.powi(5), 1e-15);
        let edge = 0.3189669695152926;
        assert!(orpo_condition(edge + 1e-6, edge + 1e-6, &cfg).unwrap().satisfied);
        assert!(!orpo_condition(edge - 1e-6, edge - 1e-6, &cfg).unwrap().satisfied);

        // m → ∞ drives the RHS to 0
        let r = orpo_condition(0.01, 0.9, &cfg.with_m(700.0)).unwrap();
        assert!(r.threshold.abs() < 1e-300 && r.satisfied);
    }

    #[test]
    fn orpo_condition_rejects_bad_probabilities() {
        let cfg = ConvergenceConfig::default();
        assert!(orpo_condition(0.0, 0.5, &cfg).is_err());
        assert!(orpo_condition(0.5, 1.0, &cfg).is_err());
        assert!(orpo_condition(0.5, 0.5, &cfg.with_lambda(0.0)).is_err());
    }

    #[test]
    fn underfit_bound_is_parametric_in_sf() {
        let cfg = ConvergenceConfig::default();
        let lo = orpo_underfit_lower_bound(0.5, &cfg).unwrap();
        let hi = orpo_underfit_lower_bound(0.9, &cfg).unwrap();
        assert!(0.0 < lo && lo < hi && hi < 1.0);
        assert!(orpo_underfit_lower_bound(1.0, &cfg).is_err());
    }

    #[test]
    fn simper_witness_examples() {
        let w = find_simper_witness([(-0.5, -1.0)], 1).unwrap();
        close(w.value, -0.2386512185411911, 1e-15);
        assert!(find_simper_witness([(-0.7, -0.7)], 1).is_none());
        assert!(find_simper_witness([(-0.2, -3.0)], 1).is_some());
        let w = simper_no_bt_witness(10, 7).unwrap();
        assert!(w.value < 0.0 && w.avg_chosen > w.avg_rejected);
    }

    #[test]
    fn analysis_rows_have_expected_blocks() {
        let grid = AnalysisGrid {
            lambdas: vec![0.1, 0.2, 0.3],
            ..Default::default()
        };
        let rows = analyze(&grid).unwrap();
        let orpo = rows.iter().filter(|r| r.objective == ReportObjective::Orpo).count();
        assert_eq!(orpo, 3 * 19 * 19);
        let last = rows.last().unwrap();
        assert_eq!(last.objective, ReportObjective::Simper);
        assert!(last.satisfied && last.margin_value < 0.0);
        for r in rows.iter().filter(|r| r.objective != ReportObjective::Simper) {
            assert_eq!(r.satisfied, r.margin_value > r.threshold);
        }
    }

    #[test]
    fn csv_has_header_and_one_line_per_row() {
        let rows = analyze(&AnalysisGrid::default()).unwrap();
        let mut buf = Vec::new();
        write_reports_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(REPORT_CSV_HEADER));
        assert_eq!(lines.count(), rows.len());
        assert!(text.contains("sft,0.500000000,0.993307149,false,m=5;p_w=0.5"));
    }
}
