//! Error-informed quality scores and the probabilistic bound calculators.

use serde::{Deserialize, Serialize};

use crate::aggregation::AggregationPlan;
use crate::error::{Error, Result};
use crate::gp::AgentModel;
use crate::kernel::KernelConfig;

/// How the similarity threshold ρ is chosen for a (model, query) pair.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case", deny_unknown_fields)]
pub enum RhoPolicy {
    Constant { value: f64 },
    #[default]
    Mean,
    Median,
    Min,
}

/// Partition of a model's stored points by kernel similarity to one query.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexSelection {
    /// `I`: indices with `κ(x_p, x) ≥ ρ`, ascending.
    pub included: Vec<usize>,
    /// `Ī`: the complement, ascending.
    pub excluded: Vec<usize>,
    pub threshold: f64,
    pub policy: RhoPolicy,
    /// `k(x, X)`, kept so the approximate mean does not re-evaluate the kernel.
    pub similarities: Vec<f64>,
}

impl IndexSelection {
    /// Builds a selection from an explicit partition, for hand-constructed cases.
    pub fn from_parts(
        included: Vec<usize>,
        excluded: Vec<usize>,
        threshold: f64,
        model: &AgentModel,
        x: &[f64],
    ) -> Self {
        let similarities = model.kernel_vector(x).unwrap_or_default();
        IndexSelection {
            included,
            excluded,
            threshold,
            policy: RhoPolicy::Constant { value: threshold },
            similarities,
        }
    }
}

/// ε of one agent at one query point.
#[derive(Debug, Clone, PartialEq)]
pub struct QualityScore {
    /// Nonnegative, or `f64::INFINITY` when no point was excluded.
    pub epsilon: f64,
    pub idx: IndexSelection,
    pub query: Vec<f64>,
    pub agent: usize,
}

impl QualityScore {
    pub fn with_agent(mut self, agent: usize) -> Self {
        self.agent = agent;
        self
    }
}

fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Resolves ρ and partitions the stored points of `model` around query `x`.
pub fn select_indices(model: &AgentModel, x: &[f64], policy: RhoPolicy) -> Result<IndexSelection> {
    if model.is_empty() {
        return Err(Error::InvalidState(
            "index selection requires a non-empty model".into(),
        ));
    }
    let kappa0 = model.kernel().prior_variance();
    let similarities = model.kernel_vector(x)?;
    let threshold = match policy {
        RhoPolicy::Constant { value } => {
            if !(0.0..=kappa0).contains(&value) {
                return Err(Error::invalid(format!(
                    "constant rho {value} outside [0, κ(0) = {kappa0}]"
                )));
            }
            value
        }
        RhoPolicy::Mean => similarities.iter().sum::<f64>() / similarities.len() as f64,
        RhoPolicy::Median => median(&similarities),
        RhoPolicy::Min => similarities.iter().copied().fold(f64::INFINITY, f64::min),
    };
    let (included, excluded): (Vec<usize>, Vec<usize>) =
        (0..similarities.len()).partition(|&p| similarities[p] >= threshold);
    Ok(IndexSelection {
        included,
        excluded,
        threshold,
        policy,
        similarities,
    })
}

/// `‖Σ_{p∈I} κ(x_p, x) e(x_p)‖` over the stacked output dimensions.
fn included_error_norm(model: &AgentModel, x: &[f64], idx: &IndexSelection) -> Result<f64> {
    model.check_selection(idx)?;
    let use_cache = idx.similarities.len() == model.len();
    let mut sq = 0.0;
    for j in 0..model.kernel().output_dim {
        let e = model.errors(j);
        let s: f64 = idx
            .included
            .iter()
            .map(|&p| {
                let k = if use_cache {
                    idx.similarities[p]
                } else {
                    model.kernel().eval_unchecked(x, &model.inputs()[p])
                };
                k * e[p]
            })
            .sum();
        sq += s * s;
    }
    Ok(sq.sqrt())
}

/// `ε = ‖Σ_{p∈I} κ(x_p, x) e(x_p)‖ / (λ ρ |Ī|)`, or `+∞` when `Ī = ∅`.
pub fn epsilon(model: &AgentModel, x: &[f64], idx: &IndexSelection, lambda: f64) -> Result<QualityScore> {
    Ok(QualityScore {
        epsilon: epsilon_value(model, x, idx, lambda)?,
        idx: idx.clone(),
        query: x.to_vec(),
        agent: 0,
    })
}

/// The bare value of [`epsilon`], without copying the selection.
pub fn epsilon_value(model: &AgentModel, x: &[f64], idx: &IndexSelection, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::invalid(format!("lambda must be positive, got {lambda}")));
    }
    let value = if idx.excluded.is_empty() {
        model.check_selection(idx)?;
        f64::INFINITY
    } else {
        if !(idx.threshold > 0.0) {
            return Err(Error::invalid(
                "rho = 0 with a non-empty excluded set leaves epsilon undefined",
            ));
        }
        let num = included_error_norm(model, x, idx)?;
        num / (lambda * idx.threshold * idx.excluded.len() as f64)
    };
    Ok(value)
}

/// `β_δ = 2 Σ_j log(√m/(2τ) (x̄^j − x̲^j) + 1) − 2 log δ` over the box `[lower, upper]`.
pub fn beta_delta(tau: f64, delta: f64, lower: &[f64], upper: &[f64]) -> Result<f64> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::invalid(format!("tau must be positive, got {tau}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(format!("delta must lie in (0, 1), got {delta}")));
    }
    if lower.len() != upper.len() || lower.is_empty() {
        return Err(Error::invalid("box bounds must be non-empty and of equal length"));
    }
    let m = lower.len() as f64;
    let mut sum = 0.0;
    for (j, (&lo, &hi)) in lower.iter().zip(upper).enumerate() {
        if !(hi >= lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::invalid(format!(
                "box dimension {j} has upper {hi} below lower {lo}"
            )));
        }
        sum += (m.sqrt() / (2.0 * tau) * (hi - lo) + 1.0).ln();
    }
    Ok(2.0 * sum - 2.0 * delta.ln())
}

/// `λ = 2√(d β_δ κ(0)) + σ_ω (2√(d log(1/δ_n)) + 2 log(1/δ_n) + d)^{1/2}`.
///
/// `noise_std` is σ_ω, the standard deviation; zero is accepted as the noiseless limit.
pub fn lambda(d: usize, beta_delta: f64, kappa0: f64, noise_std: f64, delta_n: f64) -> Result<f64> {
    if d == 0 {
        return Err(Error::invalid("output dimension must be at least 1"));
    }
    if !(beta_delta > 0.0) || !(kappa0 > 0.0) || !(noise_std >= 0.0) {
        return Err(Error::invalid("lambda inputs must be positive"));
    }
    if !(delta_n > 0.0 && delta_n < 1.0) {
        return Err(Error::invalid(format!("delta_n must lie in (0, 1), got {delta_n}")));
    }
    let d = d as f64;
    let log_inv = (1.0 / delta_n).ln();
    Ok(2.0 * (d * beta_delta * kappa0).sqrt()
        + noise_std * (2.0 * (d * log_inv).sqrt() + 2.0 * log_inv + d).sqrt())
}

/// `η = 2√(d β_δ (κ(0) − |I| ρ² / (|I| κ(0) + σ_ω²)))`.
pub fn eta_bound(cfg: &KernelConfig, idx: &IndexSelection, beta_delta: f64, d: usize) -> Result<f64> {
    let kappa0 = cfg.prior_variance();
    let n_inc = idx.included.len() as f64;
    let rho = idx.threshold;
    let radicand = kappa0 - n_inc * rho * rho / (n_inc * kappa0 + cfg.noise_variance);
    if radicand < -1e-12 * kappa0 {
        return Err(Error::Consistency(format!(
            "eta radicand {radicand} is negative (rho {rho} above κ(0) {kappa0}?)"
        )));
    }
    Ok(2.0 * (d as f64 * beta_delta * radicand.max(0.0)).sqrt())
}

/// Confidence parameters of the bounds together with the derived β_δ and λ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    pub tau: f64,
    pub delta: f64,
    pub delta_n: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub beta_delta: f64,
    pub lambda: f64,
}

impl BoundParams {
    pub fn new(
        tau: f64,
        delta: f64,
        delta_n: f64,
        lower: Vec<f64>,
        upper: Vec<f64>,
        kernel: &KernelConfig,
    ) -> Result<Self> {
        let beta = beta_delta(tau, delta, &lower, &upper)?;
        let lam = lambda(
            kernel.output_dim,
            beta,
            kernel.prior_variance(),
            kernel.noise_std(),
            delta_n,
        )?;
        Ok(BoundParams {
            tau,
            delta,
            delta_n,
            lower,
            upper,
            beta_delta: beta,
            lambda: lam,
        })
    }

    /// `δ_ρ = 1 − n + n(1 − δ)^d − δ_n`, the failure level of the relative-loss bound.
    pub fn delta_rho(&self, n_agents: usize, d: usize) -> f64 {
        let n = n_agents as f64;
        1.0 - n + n * (1.0 - self.delta).powi(d as i32) - self.delta_n
    }

    /// `δ_x = 1 − (1 − δ)^d`, the failure level of the single-model error bound.
    pub fn delta_x(&self, d: usize) -> f64 {
        1.0 - (1.0 - self.delta).powi(d as i32)
    }

    /// Rejects configurations whose `δ_ρ` falls outside `(0, 1)`.
    pub fn validate_for(&self, n_agents: usize, d: usize) -> Result<()> {
        let dr = self.delta_rho(n_agents, d);
        if !(dr > 0.0 && dr < 1.0) {
            return Err(Error::Config(format!(
                "delta_rho = {dr} is outside (0, 1) for n = {n_agents}, d = {d}"
            )));
        }
        Ok(())
    }
}

/// Per-agent ingredients of the aggregated error bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentBoundInput {
    pub epsilon: f64,
    /// `‖μ̃_s(x)‖` over the output dimensions.
    pub approx_mean_norm: f64,
    pub eta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedBound {
    /// `η̃_s = ε_s⁻¹ ‖μ̃_s‖ + η_s`, indexed by agent.
    pub tilde_eta: Vec<f64>,
    /// `η̂_i`, indexed like the plans.
    pub hat_eta: Vec<f64>,
    /// `‖[η̂_1, …, η̂_n]‖`.
    pub mas: f64,
}

/// `η̃_s = ‖μ̃_s‖/ε_s + η_s`; `ε = +∞` leaves `η`, `ε = 0` gives `+∞`.
pub fn tilde_eta(input: &AgentBoundInput) -> f64 {
    if input.epsilon == f64::INFINITY {
        input.eta
    } else if input.epsilon <= 0.0 {
        f64::INFINITY
    } else {
        input.approx_mean_norm / input.epsilon + input.eta
    }
}

/// Combines per-agent bounds through each requester's aggregation weights.
///
/// `η̂_i = Σ_{s∈S_i} w_is η̃_s`. When weights differ across output dimensions the
/// largest per-dimension weight of each collaborator is used, which keeps the
/// bound valid and reduces to the plain weighted sum for dimension-uniform weights.
pub fn aggregated_bound(inputs: &[AgentBoundInput], plans: &[AggregationPlan]) -> Result<AggregatedBound> {
    let tilde: Vec<f64> = inputs.iter().map(tilde_eta).collect();
    let mut hat = Vec::with_capacity(plans.len());
    for plan in plans {
        let mut total = 0.0;
        for (k, &s) in plan.selected.iter().enumerate() {
            let t = *tilde.get(s).ok_or_else(|| {
                Error::invalid(format!("plan references agent {s} without bound inputs"))
            })?;
            let w = plan
                .weights
                .iter()
                .map(|wj| wj[k])
                .fold(0.0, f64::max);
            if w > 0.0 {
                total += w * t;
            }
        }
        hat.push(total);
    }
    let mas = hat.iter().map(|h| h * h).sum::<f64>().sqrt();
    Ok(AggregatedBound {
        tilde_eta: tilde,
        hat_eta: hat,
        mas,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::MethodTag;
    use approx::assert_relative_eq;

    fn unit_kernel() -> KernelConfig {
        KernelConfig::new(1.0, 1.0, 1.0, 1, 1).unwrap()
    }

    fn two_point_model() -> AgentModel {
        AgentModel::from_data(unit_kernel(), 2, &[vec![0.0], vec![2.0]], &[vec![2.0], vec![0.5]]).unwrap()
    }

    #[test]
    fn constant_threshold_partition() {
        let model = two_point_model();
        let idx = select_indices(&model, &[0.0], RhoPolicy::Constant { value: 0.5 }).unwrap();
        assert_eq!(idx.included, vec![0]);
        assert_eq!(idx.excluded, vec![1]);
        assert_relative_eq!(idx.similarities[1], 0.135_335_283_236_612_7, epsilon = 1e-15);
    }

    #[test]
    fn mean_threshold_on_two_points() {
        let model = two_point_model();
        let idx = select_indices(&model, &[0.0], RhoPolicy::Mean).unwrap();
        assert_relative_eq!(idx.threshold, 0.567_667_641_618_306_4, epsilon = 1e-12);
        assert_eq!(idx.included, vec![0]);
    }

    #[test]
    fn min_policy_excludes_nothing() {
        let model = two_point_model();
        for q in [-3.0, 0.0, 1.0, 7.0] {
            let idx = select_indices(&model, &[q], RhoPolicy::Min).unwrap();
            assert!(idx.excluded.is_empty());
            assert_eq!(idx.included.len(), 2);
        }
    }

    #[test]
    fn median_of_even_length_averages_the_centre() {
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
        assert_eq!(median(&[5.0, 1.0, 3.0]), 3.0);
    }

    #[test]
    fn out_of_range_constant_and_empty_model_are_errors() {
        let model = two_point_model();
        assert!(matches!(
            select_indices(&model, &[0.0], RhoPolicy::Constant { value: 1.5 }),
            Err(Error::InvalidInput(_))
        ));
        assert!(select_indices(&model, &[0.0], RhoPolicy::Constant { value: -0.1 }).is_err());
        let empty = AgentModel::new(unit_kernel(), 2).unwrap();
        assert!(matches!(
            select_indices(&empty, &[0.0], RhoPolicy::Mean),
            Err(Error::InvalidState(_))
        ));
    }

    #[test]
    fn epsilon_is_infinite_without_excluded_points() {
        let model = two_point_model();
        let idx = select_indices(&model, &[0.0], RhoPolicy::Min).unwrap();
        assert_eq!(epsilon(&model, &[0.0], &idx, 2.0).unwrap().epsilon, f64::INFINITY);
    }

    #[test]
    fn epsilon_is_zero_for_zero_errors() {
        let model =
            AgentModel::from_data(unit_kernel(), 2, &[vec![0.0], vec![2.0]], &[vec![0.0], vec![0.0]]).unwrap();
        let idx = select_indices(&model, &[0.0], RhoPolicy::Mean).unwrap();
        assert_eq!(epsilon(&model, &[0.0], &idx, 1.0).unwrap().epsilon, 0.0);
    }

    #[test]
    fn epsilon_hand_composition() {
        // One point at 0 with y = 2 (e = −1 alone), plus a far point so that Ī = {2}.
        let model = AgentModel::from_data(
            unit_kernel(),
            2,
            &[vec![0.0], vec![50.0]],
            &[vec![2.0], vec![0.0]],
        )
        .unwrap();
        assert_relative_eq!(model.errors(0)[0], -1.0, epsilon = 1e-12);
        let idx = select_indices(&model, &[0.0], RhoPolicy::Constant { value: 0.3 }).unwrap();
        assert_eq!(idx.included, vec![0]);
        let eps = epsilon(&model, &[0.0], &idx, 2.0).unwrap().epsilon;
        assert_relative_eq!(eps, 1.0 / 0.6, epsilon = 1e-10);
    }

    #[test]
    fn epsilon_rejects_bad_lambda() {
        let model = two_point_model();
        let idx = select_indices(&model, &[0.0], RhoPolicy::Mean).unwrap();
        assert!(epsilon(&model, &[0.0], &idx, 0.0).is_err());
        assert!(epsilon(&model, &[0.0], &idx, -1.0).is_err());
    }

    #[test]
    fn epsilon_scales_with_errors() {
        let xs = vec![vec![0.0], vec![0.7], vec![1.9], vec![3.0]];
        let ys = vec![vec![1.0], vec![-0.4], vec![2.2], vec![0.3]];
        let scaled: Vec<Vec<f64>> = ys.iter().map(|y| vec![3.0 * y[0]]).collect();
        let a = AgentModel::from_data(unit_kernel(), 4, &xs, &ys).unwrap();
        let b = AgentModel::from_data(unit_kernel(), 4, &xs, &scaled).unwrap();
        let ia = select_indices(&a, &[0.5], RhoPolicy::Median).unwrap();
        let ib = select_indices(&b, &[0.5], RhoPolicy::Median).unwrap();
        let ea = epsilon(&a, &[0.5], &ia, 1.0).unwrap().epsilon;
        let eb = epsilon(&b, &[0.5], &ib, 1.0).unwrap().epsilon;
        assert_relative_eq!(eb, 3.0 * ea, max_relative = 1e-12);
    }

    #[test]
    fn beta_delta_hand_values() {
        let b = beta_delta(0.5, 0.05, &[0.0], &[1.0]).unwrap();
        assert_relative_eq!(b, 2.0 * 2f64.ln() + 2.0 * 20f64.ln(), epsilon = 1e-12);
        assert_relative_eq!(b, 7.377_758_908_227_872, epsilon = 1e-4);

        let degenerate = beta_delta(0.3, (-1.0f64).exp(), &[1.0], &[1.0]).unwrap();
        assert_relative_eq!(degenerate, 2.0, epsilon = 1e-12);

        let b2 = beta_delta(1.0, 0.1, &[0.0, 0.0], &[2.0, 2.0]).unwrap();
        assert_relative_eq!(b2, 4.0 * (2f64.sqrt() + 1.0).ln() + 2.0 * 10f64.ln(), epsilon = 1e-12);
        assert_relative_eq!(b2, 8.130_664_534_066_263, epsilon = 1e-12);
    }

    #[test]
    fn beta_delta_rejects_invalid_ranges() {
        assert!(beta_delta(0.0, 0.05, &[0.0], &[1.0]).is_err());
        assert!(beta_delta(1.0, 1.0, &[0.0], &[1.0]).is_err());
        assert!(beta_delta(1.0, 0.5, &[1.0], &[0.0]).is_err());
    }

    #[test]
    fn lambda_hand_values() {
        let l = lambda(1, 1.0, 1.0, 1.0, (-1.0f64).exp()).unwrap();
        assert_relative_eq!(l, 2.0 + 5f64.sqrt(), epsilon = 1e-12);
        let noiseless = lambda(3, 2.0, 1.5, 0.0, 0.05).unwrap();
        assert_relative_eq!(noiseless, 2.0 * (3.0f64 * 2.0 * 1.5).sqrt(), epsilon = 1e-12);
        assert!(lambda(1, 1.0, 1.0, 1.0, 1.5).is_err());
    }

    #[test]
    fn lambda_is_monotone_in_beta_and_kappa() {
        let mut prev_b = 0.0;
        for b in 1..20 {
            let mut prev_k = 0.0;
            for k in 1..20 {
                let l = lambda(2, b as f64 * 0.5, k as f64 * 0.3, 0.4, 0.05).unwrap();
                assert!(l > prev_k);
                prev_k = l;
            }
            let l = lambda(2, b as f64 * 0.5, 1.0, 0.4, 0.05).unwrap();
            assert!(l > prev_b);
            prev_b = l;
        }
    }

    #[test]
    fn eta_hand_values_and_monotonicity() {
        let cfg = unit_kernel();
        let model = AgentModel::from_data(cfg, 4, &[vec![0.0]], &[vec![1.0]]).unwrap();
        let empty_i = IndexSelection::from_parts(vec![], vec![0], 0.5, &model, &[0.0]);
        assert_relative_eq!(eta_bound(&cfg, &empty_i, 1.0, 1).unwrap(), 2.0, epsilon = 1e-15);
        let one = IndexSelection::from_parts(vec![0], vec![], 1.0, &model, &[0.0]);
        assert_relative_eq!(eta_bound(&cfg, &one, 1.0, 1).unwrap(), 2f64.sqrt(), epsilon = 1e-12);

        let mut prev = f64::INFINITY;
        for n in 0..30 {
            let idx = IndexSelection {
                included: (0..n).collect(),
                excluded: vec![],
                threshold: 0.6,
                policy: RhoPolicy::Constant { value: 0.6 },
                similarities: vec![],
            };
            let eta = eta_bound(&cfg, &idx, 3.0, 1).unwrap();
            assert!(eta < prev);
            prev = eta;
        }
    }

    #[test]
    fn delta_levels() {
        let cfg = unit_kernel();
        let p = BoundParams::new(0.05, 0.05, 0.05, vec![0.0], vec![1.0], &cfg).unwrap();
        assert_relative_eq!(p.delta_rho(1, 1), 0.9, epsilon = 1e-12);
        assert_relative_eq!(p.delta_rho(4, 1), 0.75, epsilon = 1e-12);
        assert_relative_eq!(p.delta_x(1), 0.05, epsilon = 1e-12);
        assert!(p.validate_for(4, 1).is_ok());
        assert!(p.validate_for(25, 1).is_err());
    }

    fn plan(selected: Vec<usize>, w: Vec<f64>) -> AggregationPlan {
        AggregationPlan {
            requester: 0,
            selected,
            weights: vec![w],
            method: MethodTag::Aeigp,
            nu: None,
            theta: None,
            tradeoff: None,
            degenerate: false,
        }
    }

    #[test]
    fn aggregated_bound_arithmetic() {
        let inf = AgentBoundInput { epsilon: f64::INFINITY, approx_mean_norm: 4.0, eta: 0.7 };
        assert_eq!(tilde_eta(&inf), 0.7);
        let zero = AgentBoundInput { epsilon: 0.0, approx_mean_norm: 1.0, eta: 0.7 };
        assert_eq!(tilde_eta(&zero), f64::INFINITY);

        let inputs = [
            AgentBoundInput { epsilon: 2.0, approx_mean_norm: 1.0, eta: 0.5 },
            AgentBoundInput { epsilon: 1.0, approx_mean_norm: 2.0, eta: 1.0 },
        ];
        let single = aggregated_bound(&inputs, &[plan(vec![0], vec![1.0])]).unwrap();
        assert_eq!(single.hat_eta[0], single.tilde_eta[0]);

        let both = aggregated_bound(&inputs, &[plan(vec![0, 1], vec![0.25, 0.75])]).unwrap();
        assert_relative_eq!(both.tilde_eta[0], 1.0, epsilon = 1e-15);
        assert_relative_eq!(both.tilde_eta[1], 3.0, epsilon = 1e-15);
        assert_relative_eq!(both.hat_eta[0], 2.5, epsilon = 1e-15);
        assert_relative_eq!(both.mas, 2.5, epsilon = 1e-15);
    }
}
