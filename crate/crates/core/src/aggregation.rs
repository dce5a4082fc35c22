//! Neighborhood aggregation: greedy and adaptive error-informed selection,
//! variance-aware blending, and the classical expert baselines.

use std::cell::OnceCell;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::AgentModel;
use crate::kernel::KernelConfig;
use crate::metric::{epsilon_value, select_indices, IndexSelection, RhoPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodTag {
    Geigp,
    Aeigp,
    Moe,
    Poe,
    Gpoe,
    Bcm,
    Rbcm,
}

impl MethodTag {
    pub const ALL: [MethodTag; 7] = [
        MethodTag::Geigp,
        MethodTag::Aeigp,
        MethodTag::Moe,
        MethodTag::Poe,
        MethodTag::Gpoe,
        MethodTag::Bcm,
        MethodTag::Rbcm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MethodTag::Geigp => "geigp",
            MethodTag::Aeigp => "aeigp",
            MethodTag::Moe => "moe",
            MethodTag::Poe => "poe",
            MethodTag::Gpoe => "gpoe",
            MethodTag::Bcm => "bcm",
            MethodTag::Rbcm => "rbcm",
        }
    }

    /// True for the two selective methods that score neighbors by ε.
    pub fn is_error_informed(self) -> bool {
        matches!(self, MethodTag::Geigp | MethodTag::Aeigp)
    }
}

impl fmt::Display for MethodTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MethodTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MethodTag::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown method tag `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TradeoffKind {
    Linear,
    Power,
    Exponential,
    Logarithmic,
}

impl TradeoffKind {
    /// `Φ(a, b, ν)`. The logarithmic form needs `a, b > 0`; callers check.
    pub fn apply(self, a: f64, b: f64, nu: f64) -> f64 {
        match self {
            TradeoffKind::Linear => nu * a + (1.0 - nu) * b,
            TradeoffKind::Power => a.powf(nu) * b.powf(1.0 - nu),
            TradeoffKind::Exponential => (nu * a).exp() + ((1.0 - nu) * b).exp(),
            TradeoffKind::Logarithmic => nu * a.ln() + (1.0 - nu) * b.ln(),
        }
    }
}

/// Which normalizer turns per-agent precisions into variance weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceFamily {
    /// Precision share among the selected agents.
    #[default]
    Poe,
    /// Precision relative to the prior-corrected committee precision.
    Bcm,
}

/// Per-agent importance factor `ϑ_s` multiplying the precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Importance {
    #[default]
    Unit,
    /// `½ log(prior / σ_s²)`, the entropy reduction of the expert.
    Entropy,
    /// `log(prior / σ_s²)`.
    LogRatio,
}

fn default_true() -> bool {
    true
}

/// Shape of the generalized adaptive weighting. ν is carried by the method.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TradeoffSpec {
    pub kind: TradeoffKind,
    #[serde(default)]
    pub family: VarianceFamily,
    #[serde(default)]
    pub importance: Importance,
    /// Whether the BCM prior term includes the observation noise.
    #[serde(default = "default_true")]
    pub prior_noise: bool,
}

impl TradeoffSpec {
    /// The combination that reproduces the default adaptive weights.
    pub fn power_bcm() -> Self {
        TradeoffSpec {
            kind: TradeoffKind::Power,
            family: VarianceFamily::Bcm,
            importance: Importance::LogRatio,
            prior_noise: true,
        }
    }

    pub fn linear_poe() -> Self {
        TradeoffSpec {
            kind: TradeoffKind::Linear,
            family: VarianceFamily::Poe,
            importance: Importance::Unit,
            prior_noise: true,
        }
    }
}

/// Method selection plus its parameters, as read from configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MethodRepr", into = "MethodRepr")]
pub enum Method {
    Geigp,
    Aeigp {
        theta: f64,
        nu: f64,
        tradeoff: Option<TradeoffSpec>,
    },
    Moe,
    Poe,
    Gpoe,
    Bcm,
    Rbcm,
}

/// Flat wire form. serde's internally tagged enums ignore extra keys on unit
/// variants, so parameters on parameterless methods are rejected here instead.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MethodRepr {
    tag: MethodTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    nu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tradeoff: Option<TradeoffSpec>,
}

impl TryFrom<MethodRepr> for Method {
    type Error = String;

    fn try_from(r: MethodRepr) -> std::result::Result<Self, String> {
        if r.tag == MethodTag::Aeigp {
            return match (r.theta, r.nu) {
                (Some(theta), Some(nu)) => Ok(Method::Aeigp { theta, nu, tradeoff: r.tradeoff }),
                _ => Err("aeigp requires both theta and nu".into()),
            };
        }
        if r.theta.is_some() || r.nu.is_some() || r.tradeoff.is_some() {
            return Err(format!("{} takes no theta, nu or tradeoff", r.tag.as_str()));
        }
        Ok(match r.tag {
            MethodTag::Geigp => Method::Geigp,
            MethodTag::Moe => Method::Moe,
            MethodTag::Poe => Method::Poe,
            MethodTag::Gpoe => Method::Gpoe,
            MethodTag::Bcm => Method::Bcm,
            MethodTag::Rbcm => Method::Rbcm,
            MethodTag::Aeigp => unreachable!(),
        })
    }
}

impl From<Method> for MethodRepr {
    fn from(m: Method) -> Self {
        let (theta, nu, tradeoff) = match m {
            Method::Aeigp { theta, nu, tradeoff } => (Some(theta), Some(nu), tradeoff),
            _ => (None, None, None),
        };
        MethodRepr { tag: m.tag(), theta, nu, tradeoff }
    }
}

impl Method {
    pub fn tag(&self) -> MethodTag {
        match self {
            Method::Geigp => MethodTag::Geigp,
            Method::Aeigp { .. } => MethodTag::Aeigp,
            Method::Moe => MethodTag::Moe,
            Method::Poe => MethodTag::Poe,
            Method::Gpoe => MethodTag::Gpoe,
            Method::Bcm => MethodTag::Bcm,
            Method::Rbcm => MethodTag::Rbcm,
        }
    }

    /// Human-readable label that distinguishes aEIGP parameterizations.
    pub fn label(&self) -> String {
        match self {
            Method::Aeigp { nu, tradeoff: None, .. } => format!("aeigp(nu={nu})"),
            Method::Aeigp { nu, tradeoff: Some(t), .. } => format!(
                "aeigp-{}-{}(nu={nu})",
                match t.kind {
                    TradeoffKind::Linear => "lin",
                    TradeoffKind::Power => "pow",
                    TradeoffKind::Exponential => "exp",
                    TradeoffKind::Logarithmic => "log",
                },
                match t.family {
                    VarianceFamily::Poe => "poe",
                    VarianceFamily::Bcm => "bcm",
                }
            ),
            other => other.tag().as_str().to_owned(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Method::Aeigp { theta, nu, .. } = *self {
            if !(theta >= 0.0) || !theta.is_finite() {
                return Err(Error::Config(format!("theta must be finite and >= 0, got {theta}")));
            }
            if !(0.0..=1.0).contains(&nu) {
                return Err(Error::Config(format!("nu must lie in [0, 1], got {nu}")));
            }
        }
        Ok(())
    }

    /// Parses a CLI method name; θ and ν apply only to the adaptive variants.
    pub fn from_name(name: &str, theta: f64, nu: f64) -> Result<Self> {
        let m = match name.to_ascii_lowercase().as_str() {
            "aeigp" => Method::Aeigp { theta, nu, tradeoff: None },
            "aeigp-linpoe" => Method::Aeigp { theta, nu, tradeoff: Some(TradeoffSpec::linear_poe()) },
            other => match MethodTag::from_str(other)? {
                MethodTag::Geigp => Method::Geigp,
                MethodTag::Moe => Method::Moe,
                MethodTag::Poe => Method::Poe,
                MethodTag::Gpoe => Method::Gpoe,
                MethodTag::Bcm => Method::Bcm,
                MethodTag::Rbcm => Method::Rbcm,
                MethodTag::Aeigp => unreachable!(),
            },
        };
        m.validate()?;
        Ok(m)
    }
}

/// Who requester `i` listens to at one query, and with what weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationPlan {
    pub requester: usize,
    /// Agent ids in `S_i`, ascending.
    pub selected: Vec<usize>,
    /// `weights[j][k]` is the weight of `selected[k]` in output dimension `j`.
    pub weights: Vec<Vec<f64>>,
    pub method: MethodTag,
    pub nu: Option<f64>,
    pub theta: Option<f64>,
    pub tradeoff: Option<TradeoffKind>,
    /// Set when no neighbor had data, or when a weight normalizer was zero.
    pub degenerate: bool,
}

impl AggregationPlan {
    fn uniform(requester: usize, selected: Vec<usize>, d: usize, method: MethodTag) -> Self {
        let k = selected.len().max(1);
        AggregationPlan {
            requester,
            weights: vec![vec![1.0 / k as f64; selected.len()]; d],
            selected,
            method,
            nu: None,
            theta: None,
            tradeoff: None,
            degenerate: false,
        }
    }

    pub fn size(&self) -> usize {
        self.selected.len()
    }
}

/// ε of one neighbor as seen by a requester.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateScore {
    pub agent: usize,
    pub epsilon: f64,
}

fn better(a: &CandidateScore, b: &CandidateScore) -> bool {
    a.epsilon > b.epsilon || (a.epsilon == b.epsilon && a.agent < b.agent)
}

/// Position of the maximal ε; ties go to the lowest agent id.
fn argmax(scores: &[CandidateScore]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (k, s) in scores.iter().enumerate() {
        match best {
            Some(b) if !better(s, &scores[b]) => {}
            _ => best = Some(k),
        }
    }
    best
}

/// Greedy rule: the single neighbor with maximal ε gets weight one.
pub fn greedy_select(requester: usize, scores: &[CandidateScore], d: usize) -> Result<AggregationPlan> {
    let k = argmax(scores).ok_or_else(|| Error::invalid("greedy selection over an empty neighborhood"))?;
    Ok(AggregationPlan {
        requester,
        selected: vec![scores[k].agent],
        weights: vec![vec![1.0]; d],
        method: MethodTag::Geigp,
        nu: None,
        theta: None,
        tradeoff: None,
        degenerate: false,
    })
}

/// Population standard deviation of the finite scores.
pub fn score_spread(scores: &[CandidateScore]) -> f64 {
    let n = scores.len() as f64;
    if scores.is_empty() {
        return 0.0;
    }
    let mean = scores.iter().map(|s| s.epsilon).sum::<f64>() / n;
    (scores.iter().map(|s| (s.epsilon - mean).powi(2)).sum::<f64>() / n).sqrt()
}

fn has_sentinel(scores: &[CandidateScore]) -> bool {
    scores.iter().any(|s| s.epsilon == f64::INFINITY)
}

/// Gaussian-shaped transform of ε centred on the maximum.
///
/// With any `+∞` score, sentinels map to 1 and the rest to 0. With zero spread
/// every agent maps to 1.
pub fn gaussianize_epsilon(scores: &[CandidateScore]) -> Vec<f64> {
    if has_sentinel(scores) {
        return scores
            .iter()
            .map(|s| if s.epsilon == f64::INFINITY { 1.0 } else { 0.0 })
            .collect();
    }
    let sigma = score_spread(scores);
    let top = scores.iter().map(|s| s.epsilon).fold(f64::NEG_INFINITY, f64::max);
    if !(sigma > 1e-12 * top.abs()) {
        return vec![1.0; scores.len()];
    }
    let scale = 1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt());
    scores
        .iter()
        .map(|s| scale * (-(top - s.epsilon).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect()
}

/// Result of the confidence-interval selection.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveSelection {
    /// `φ_s`, aligned with the input scores.
    pub eligible: Vec<bool>,
    pub threshold: f64,
    pub spread: f64,
}

impl AdaptiveSelection {
    pub fn positions(&self) -> Vec<usize> {
        (0..self.eligible.len()).filter(|&k| self.eligible[k]).collect()
    }
}

/// Selects every neighbor with `ε_s ≥ max ε − θ σ_ε`.
///
/// When some score is `+∞`, exactly the sentinel agents are selected.
pub fn adaptive_select(scores: &[CandidateScore], theta: f64) -> AdaptiveSelection {
    if has_sentinel(scores) {
        return AdaptiveSelection {
            eligible: scores.iter().map(|s| s.epsilon == f64::INFINITY).collect(),
            threshold: f64::INFINITY,
            spread: f64::NAN,
        };
    }
    let spread = score_spread(scores);
    let top = scores.iter().map(|s| s.epsilon).fold(f64::NEG_INFINITY, f64::max);
    let threshold = top - theta * spread;
    AdaptiveSelection {
        eligible: scores.iter().map(|s| s.epsilon >= threshold).collect(),
        threshold,
        spread,
    }
}

/// Min-max scaling to `[0, 1]`; constant or single-element input maps to all ones.
pub fn minmax_normalize(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    if !(range > 0.0) || !range.is_finite() {
        return vec![1.0; values.len()];
    }
    values.iter().map(|v| (v - lo) / range).collect()
}

/// Error-informed weights `ψ(φ ⊙ ε̃)` restricted to the eligible agents.
pub fn error_weights(gaussianized: &[f64], eligible: &[bool]) -> Vec<f64> {
    let picked: Vec<f64> = gaussianized
        .iter()
        .zip(eligible)
        .filter(|(_, &e)| e)
        .map(|(&g, _)| g)
        .collect();
    minmax_normalize(&picked)
}

/// Divides by the sum. All-zero input gives uniform weights (second value `true`).
pub fn proportional_normalize(values: &[f64]) -> Result<(Vec<f64>, bool)> {
    if values.is_empty() {
        return Err(Error::invalid("cannot normalize an empty weight vector"));
    }
    if let Some(k) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("non-finite weight score at position {k}")));
    }
    let any_pos = values.iter().any(|&v| v > 0.0);
    let any_neg = values.iter().any(|&v| v < 0.0);
    if any_pos && any_neg {
        return Err(Error::invalid("weight scores have mixed signs"));
    }
    let total: f64 = values.iter().sum();
    if total == 0.0 {
        let u = 1.0 / values.len() as f64;
        return Ok((vec![u; values.len()], true));
    }
    Ok((values.iter().map(|v| v / total).collect(), false))
}

fn check_variances(variances: &[f64], kernel: &KernelConfig) -> Result<Vec<f64>> {
    let prior = kernel.prior_predictive_variance();
    let cap = prior * (1.0 - f64::EPSILON);
    variances
        .iter()
        .enumerate()
        .map(|(k, &v)| {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!(
                    "variance at position {k} must be positive, got {v}"
                )));
            }
            if v > prior * (1.0 + 1e-9) {
                return Err(Error::invalid(format!(
                    "variance {v} at position {k} exceeds the prior predictive variance {prior}"
                )));
            }
            Ok(v.min(cap))
        })
        .collect()
}

fn importance(kind: Importance, variance: f64, kernel: &KernelConfig) -> f64 {
    let ratio = (kernel.prior_predictive_variance() / variance).ln();
    match kind {
        Importance::Unit => 1.0,
        Importance::Entropy => 0.5 * ratio,
        Importance::LogRatio => ratio,
    }
}

/// Variance weights `ϖ_s` of the chosen family, from predictive variances.
pub fn variance_weights(
    family: VarianceFamily,
    kind: Importance,
    prior_noise: bool,
    variances: &[f64],
    kernel: &KernelConfig,
) -> Result<Vec<f64>> {
    let v = check_variances(variances, kernel)?;
    let theta: Vec<f64> = v.iter().map(|&s| importance(kind, s, kernel)).collect();
    let scaled: Vec<f64> = theta.iter().zip(&v).map(|(t, s)| t / s).collect();
    match family {
        VarianceFamily::Poe => {
            let total: f64 = scaled.iter().sum();
            if total > 0.0 {
                Ok(scaled.iter().map(|p| p / total).collect())
            } else {
                Ok(vec![1.0 / v.len() as f64; v.len()])
            }
        }
        VarianceFamily::Bcm => {
            let prior = if prior_noise {
                kernel.prior_predictive_variance()
            } else {
                kernel.prior_variance()
            };
            let denom = v.iter().map(|s| 1.0 / s).sum::<f64>() + (1.0 - theta.iter().sum::<f64>()) / prior;
            if !(denom > 0.0) {
                return Err(Error::invalid(format!(
                    "committee precision is not positive ({denom})"
                )));
            }
            Ok(scaled.iter().map(|p| p / denom).collect())
        }
    }
}

/// Output of [`aeigp_weights`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveWeights {
    pub weights: Vec<f64>,
    /// `σ̃⁻²`, the aggregate precision that scales every numerator.
    pub aggregate_precision: f64,
    pub degenerate: bool,
}

/// Blends error-informed weights with log-ratio-scaled precisions through the power trade-off.
///
/// `variances` are predictive variances of the selected agents at the query.
pub fn aeigp_weights(
    error_w: &[f64],
    variances: &[f64],
    nu: f64,
    kernel: &KernelConfig,
) -> Result<AdaptiveWeights> {
    if error_w.len() != variances.len() {
        return Err(Error::invalid("weight and variance vectors differ in length"));
    }
    if !(0.0..=1.0).contains(&nu) {
        return Err(Error::invalid(format!("nu must lie in [0, 1], got {nu}")));
    }
    let v = check_variances(variances, kernel)?;
    let prior = kernel.prior_predictive_variance();
    let theta: Vec<f64> = v.iter().map(|s| (prior / s).ln()).collect();
    let mixed: f64 = error_w
        .iter()
        .zip(&theta)
        .map(|(w, t)| w.powf(nu) * t.powf(1.0 - nu))
        .sum();
    let precision = error_w
        .iter()
        .zip(theta.iter().zip(&v))
        .map(|(w, (t, s))| w * t / s)
        .sum::<f64>()
        + (1.0 - mixed) / prior;
    let shared = if precision > 0.0 && precision.is_finite() { 1.0 / precision } else { 1.0 };
    let scores: Vec<f64> = error_w
        .iter()
        .zip(theta.iter().zip(&v))
        .map(|(w, (t, s))| w.powf(nu) * (t / s * shared).powf(1.0 - nu))
        .collect();
    let (weights, degenerate) = proportional_normalize(&scores)?;
    Ok(AdaptiveWeights {
        weights,
        aggregate_precision: precision,
        degenerate,
    })
}

/// `Ψ(Φ(w̃_s, ϖ_s, ν))` for an arbitrary trade-off and variance family.
///
/// `agents` only labels errors.
pub fn generalized_weights(
    agents: &[usize],
    error_w: &[f64],
    variances: &[f64],
    nu: f64,
    spec: &TradeoffSpec,
    kernel: &KernelConfig,
) -> Result<(Vec<f64>, bool)> {
    if error_w.len() != variances.len() || agents.len() != error_w.len() {
        return Err(Error::invalid("agent, weight and variance vectors differ in length"));
    }
    let varpi = variance_weights(spec.family, spec.importance, spec.prior_noise, variances, kernel)?;
    let mut scores = Vec::with_capacity(error_w.len());
    for (k, (&a, &b)) in error_w.iter().zip(&varpi).enumerate() {
        if spec.kind == TradeoffKind::Logarithmic && !(a > 0.0 && b > 0.0) {
            return Err(Error::invalid(format!(
                "logarithmic trade-off needs positive inputs; agent {} has ({a}, {b})",
                agents[k]
            )));
        }
        scores.push(spec.kind.apply(a, b, nu));
    }
    proportional_normalize(&scores)
}

/// Weights of the full-neighborhood baselines from predictive variances.
pub fn baseline_weights(method: MethodTag, variances: &[f64], kernel: &KernelConfig) -> Result<Vec<f64>> {
    let (family, kind) = match method {
        MethodTag::Moe => {
            if variances.is_empty() {
                return Err(Error::invalid("baseline over an empty neighborhood"));
            }
            check_variances(variances, kernel)?;
            return Ok(vec![1.0 / variances.len() as f64; variances.len()]);
        }
        MethodTag::Poe => (VarianceFamily::Poe, Importance::Unit),
        MethodTag::Gpoe => (VarianceFamily::Poe, Importance::Entropy),
        MethodTag::Bcm => (VarianceFamily::Bcm, Importance::Unit),
        MethodTag::Rbcm => (VarianceFamily::Bcm, Importance::Entropy),
        other => {
            return Err(Error::invalid(format!("{other} is not a baseline method")));
        }
    };
    if variances.is_empty() {
        return Err(Error::invalid("baseline over an empty neighborhood"));
    }
    let varpi = variance_weights(family, kind, true, variances, kernel)?;
    Ok(proportional_normalize(&varpi)?.0)
}

/// Aggregate predictive variance reported by a baseline for one output dimension.
///
/// MOE reports the mixture variance; the other families their combined precision.
pub fn baseline_variance(
    method: MethodTag,
    weights: &[f64],
    means: &[f64],
    variances: &[f64],
    kernel: &KernelConfig,
) -> f64 {
    let prior = kernel.prior_predictive_variance();
    let entropy = |v: f64| 0.5 * (prior / v).ln().max(0.0);
    let precision = match method {
        MethodTag::Moe => {
            let mean: f64 = weights.iter().zip(means).map(|(w, m)| w * m).sum();
            return weights
                .iter()
                .zip(means.iter().zip(variances))
                .map(|(w, (m, v))| w * (v + m * m))
                .sum::<f64>()
                - mean * mean;
        }
        MethodTag::Poe => variances.iter().map(|v| 1.0 / v).sum::<f64>(),
        MethodTag::Gpoe => {
            let betas: Vec<f64> = variances.iter().map(|&v| entropy(v)).collect();
            let total: f64 = betas.iter().sum();
            if total > 0.0 {
                betas.iter().zip(variances).map(|(b, v)| b / total / v).sum::<f64>()
            } else {
                1.0 / prior
            }
        }
        MethodTag::Bcm => {
            let m = variances.len() as f64;
            variances.iter().map(|v| 1.0 / v).sum::<f64>() + (1.0 - m) / prior
        }
        MethodTag::Rbcm => {
            let betas: Vec<f64> = variances.iter().map(|&v| entropy(v)).collect();
            betas.iter().zip(variances).map(|(b, v)| b / v).sum::<f64>()
                + (1.0 - betas.iter().sum::<f64>()) / prior
        }
        MethodTag::Geigp | MethodTag::Aeigp => return f64::NAN,
    };
    if precision > 0.0 {
        1.0 / precision
    } else {
        prior
    }
}

/// Knobs shared by every joint prediction in a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictOptions {
    pub rho: RhoPolicy,
    /// λ in the ε denominator; any positive constant gives the same selections.
    pub lambda: f64,
}

impl Default for PredictOptions {
    fn default() -> Self {
        PredictOptions {
            rho: RhoPolicy::default(),
            lambda: 1.0,
        }
    }
}

/// One member of the self-included neighborhood.
#[derive(Debug, Clone, Copy)]
pub struct Neighbor<'a> {
    pub agent: usize,
    pub model: &'a AgentModel,
}

/// What one agent evaluates locally at a query, each piece computed on first request.
///
/// A requester only ever reads these; in a round where every agent predicts at
/// the same query, one view per agent serves all requesters.
#[derive(Debug)]
pub struct LocalView<'a> {
    pub agent: usize,
    pub model: &'a AgentModel,
    x: &'a [f64],
    opts: PredictOptions,
    score: OnceCell<(IndexSelection, f64)>,
    approx: OnceCell<Vec<f64>>,
    predictive_var: OnceCell<f64>,
    posterior: OnceCell<(Vec<f64>, f64)>,
}

fn cached<T>(cell: &OnceCell<T>, init: impl FnOnce() -> Result<T>) -> Result<&T> {
    if let Some(v) = cell.get() {
        return Ok(v);
    }
    let v = init()?;
    Ok(cell.get_or_init(|| v))
}

impl<'a> LocalView<'a> {
    pub fn new(agent: usize, model: &'a AgentModel, x: &'a [f64], opts: PredictOptions) -> Self {
        LocalView {
            agent,
            model,
            x,
            opts,
            score: OnceCell::new(),
            approx: OnceCell::new(),
            predictive_var: OnceCell::new(),
            posterior: OnceCell::new(),
        }
    }

    fn score(&self) -> Result<&(IndexSelection, f64)> {
        cached(&self.score, || {
            let idx = select_indices(self.model, self.x, self.opts.rho)?;
            let eps = epsilon_value(self.model, self.x, &idx, self.opts.lambda)?;
            Ok((idx, eps))
        })
    }

    pub fn epsilon(&self) -> Result<f64> {
        Ok(self.score()?.1)
    }

    pub fn index_selection(&self) -> Result<&IndexSelection> {
        Ok(&self.score()?.0)
    }

    pub fn approx_mean(&self) -> Result<&[f64]> {
        cached(&self.approx, || self.model.approx_mean_all(self.x, &self.score()?.0)).map(Vec::as_slice)
    }

    /// `σ_s²(x) + σ_ω²`, reusing whichever kernel vector is already at hand.
    pub fn predictive_variance(&self) -> Result<f64> {
        cached(&self.predictive_var, || {
            let noise = self.model.kernel().noise_variance;
            if let Some((_, var)) = self.posterior.get() {
                return Ok(var + noise);
            }
            let var = match self.score.get() {
                Some((idx, _)) => self.model.posterior_var_from_kernel(&idx.similarities),
                None => self.model.posterior_var(self.x)?,
            };
            Ok(var + noise)
        })
        .copied()
    }

    /// Full posterior mean (all dimensions) and posterior variance.
    pub fn posterior(&self) -> Result<&(Vec<f64>, f64)> {
        cached(&self.posterior, || self.model.posterior(self.x))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointPrediction {
    pub mean: Vec<f64>,
    /// Reported by baselines and by variance-aware aEIGP; `None` otherwise.
    pub variance: Option<Vec<f64>>,
    pub plan: AggregationPlan,
    /// ε of every non-empty neighbor; empty for baselines.
    pub scores: Vec<CandidateScore>,
}

/// Requester `i`'s prediction at `x` from its neighborhood.
pub fn joint_predict(
    requester: usize,
    x: &[f64],
    neighbors: &[Neighbor<'_>],
    method: &Method,
    opts: &PredictOptions,
) -> Result<JointPrediction> {
    let views: Vec<LocalView<'_>> = neighbors
        .iter()
        .map(|n| LocalView::new(n.agent, n.model, x, *opts))
        .collect();
    let refs: Vec<&LocalView<'_>> = views.iter().collect();
    joint_predict_views(requester, &refs, method)
}

/// [`joint_predict`] over views that may be shared with other requesters.
pub fn joint_predict_views(requester: usize, views: &[&LocalView<'_>], method: &Method) -> Result<JointPrediction> {
    let first = views
        .first()
        .ok_or_else(|| Error::invalid("joint prediction needs at least the requester itself"))?;
    let kernel = *first.model.kernel();
    let d = kernel.output_dim;
    // Baselines treat an empty model as its prior; the error-informed methods have nothing to score.
    if method.tag().is_error_informed() && views.iter().all(|v| v.model.is_empty()) {
        let mut plan = AggregationPlan::uniform(requester, vec![requester], d, method.tag());
        plan.degenerate = true;
        return Ok(JointPrediction {
            mean: vec![0.0; d],
            variance: None,
            plan,
            scores: Vec::new(),
        });
    }
    match *method {
        Method::Geigp | Method::Aeigp { .. } => error_informed(requester, views, method, &kernel),
        _ => baseline(requester, views, method.tag(), &kernel),
    }
}

fn error_informed(
    requester: usize,
    views: &[&LocalView<'_>],
    method: &Method,
    kernel: &KernelConfig,
) -> Result<JointPrediction> {
    let d = kernel.output_dim;
    let live: Vec<&LocalView<'_>> = views.iter().copied().filter(|v| !v.model.is_empty()).collect();
    let scores = live
        .iter()
        .map(|v| {
            Ok(CandidateScore {
                agent: v.agent,
                epsilon: v.epsilon()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let (mut plan, positions, variance) = match *method {
        Method::Geigp => {
            let plan = greedy_select(requester, &scores, d)?;
            let pos = argmax(&scores).into_iter().collect::<Vec<_>>();
            (plan, pos, None)
        }
        Method::Aeigp { theta, nu, tradeoff } => {
            let sel = adaptive_select(&scores, theta);
            let positions = sel.positions();
            let gauss = gaussianize_epsilon(&scores);
            let error_w = error_weights(&gauss, &sel.eligible);
            let agents: Vec<usize> = positions.iter().map(|&k| scores[k].agent).collect();
            let (w, degenerate, variance) = if nu == 1.0 && tradeoff.is_none() {
                let (w, deg) = proportional_normalize(&error_w)?;
                (w, deg, None)
            } else {
                let vars = positions
                    .iter()
                    .map(|&k| live[k].predictive_variance())
                    .collect::<Result<Vec<f64>>>()?;
                match tradeoff {
                    None => {
                        let aw = aeigp_weights(&error_w, &vars, nu, kernel)?;
                        let var = (aw.aggregate_precision > 0.0).then(|| vec![1.0 / aw.aggregate_precision; d]);
                        (aw.weights, aw.degenerate, var)
                    }
                    Some(spec) => {
                        let (w, deg) = generalized_weights(&agents, &error_w, &vars, nu, &spec, kernel)?;
                        (w, deg, None)
                    }
                }
            };
            let plan = AggregationPlan {
                requester,
                selected: agents,
                weights: vec![w; d],
                method: MethodTag::Aeigp,
                nu: Some(nu),
                theta: Some(theta),
                tradeoff: tradeoff.map(|t| t.kind),
                degenerate,
            };
            (plan, positions, variance)
        }
        _ => unreachable!("baselines are handled separately"),
    };

    let mut mean = vec![0.0; d];
    for (k, &pos) in positions.iter().enumerate() {
        let approx = live[pos].approx_mean()?;
        for j in 0..d {
            mean[j] += plan.weights[j][k] * approx[j];
        }
    }
    sort_plan(&mut plan);
    Ok(JointPrediction {
        mean,
        variance,
        plan,
        scores,
    })
}

/// Keeps `selected` ascending, permuting weights alongside.
fn sort_plan(plan: &mut AggregationPlan) {
    if plan.selected.windows(2).all(|w| w[0] < w[1]) {
        return;
    }
    let mut order: Vec<usize> = (0..plan.selected.len()).collect();
    order.sort_by_key(|&k| plan.selected[k]);
    plan.selected = order.iter().map(|&k| plan.selected[k]).collect();
    for w in plan.weights.iter_mut() {
        *w = order.iter().map(|&k| w[k]).collect();
    }
}

fn baseline(
    requester: usize,
    views: &[&LocalView<'_>],
    tag: MethodTag,
    kernel: &KernelConfig,
) -> Result<JointPrediction> {
    let d = kernel.output_dim;
    let mut means = Vec::with_capacity(views.len());
    let mut vars = Vec::with_capacity(views.len());
    for v in views {
        let (mu, var) = v.posterior()?;
        means.push(mu);
        vars.push(var + kernel.noise_variance);
    }
    let w = baseline_weights(tag, &vars, kernel)?;
    let mut mean = vec![0.0; d];
    let mut variance = vec![0.0; d];
    for j in 0..d {
        let mj: Vec<f64> = means.iter().map(|m| m[j]).collect();
        mean[j] = w.iter().zip(&mj).map(|(a, b)| a * b).sum();
        variance[j] = baseline_variance(tag, &w, &mj, &vars, kernel);
    }
    let mut plan = AggregationPlan::uniform(requester, views.iter().map(|v| v.agent).collect(), d, tag);
    plan.weights = vec![w; d];
    sort_plan(&mut plan);
    Ok(JointPrediction {
        mean,
        variance: Some(variance),
        plan,
        scores: Vec::new(),
    })
}
