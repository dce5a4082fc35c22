//! Multi-agent experiment engine: offline toy runs and the online streaming loop.

pub mod graph;
pub mod metrics;
pub mod toy;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::aggregation::{joint_predict_views, AggregationPlan, JointPrediction, LocalView, Method, PredictOptions};
use crate::data::{ingest_with, DeletionStrategy};
use crate::error::{Error, Result};
use crate::gp::AgentModel;
use crate::kernel::KernelConfig;
use crate::metric::{aggregated_bound, epsilon_value, eta_bound, select_indices, AgentBoundInput, BoundParams, IndexSelection};

pub use graph::{Graph, GraphSpec};
pub use metrics::{smse, SmseTracker};
pub use toy::{generate_toy, toy_function, toy_mean, ToyData, ToySpec};

/// Which agent receives the `k`-th streamed pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleMode {
    /// Fill agent 0 with `threshold` pairs, then agent 1, ..., then wrap.
    #[default]
    Cyclic,
    /// Agent `k mod n`.
    RoundRobin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamSchedule {
    pub mode: ScheduleMode,
    pub n_agents: usize,
    pub threshold: usize,
}

impl StreamSchedule {
    pub fn recipient(&self, k: usize) -> usize {
        match self.mode {
            ScheduleMode::Cyclic => (k / self.threshold.max(1)) % self.n_agents,
            ScheduleMode::RoundRobin => k % self.n_agents,
        }
    }
}

/// One streamed pair. `truth` is what predictions are scored against.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamSample {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub truth: Vec<f64>,
}

/// Shape of the multi-agent system shared by every step of a run.
#[derive(Debug, Clone)]
pub struct MasSetup {
    pub kernel: KernelConfig,
    pub graph: Graph,
    pub capacity: usize,
    pub schedule: ScheduleMode,
    pub deletion: DeletionStrategy,
}

/// Per-run prediction settings.
#[derive(Debug, Clone)]
pub struct SimSettings {
    pub method: Method,
    pub predict: PredictOptions,
    /// When set, per-agent aggregated bounds are computed after each timed round.
    pub bounds: Option<BoundParams>,
    /// When false, timing fields are reported as zero.
    pub timing: bool,
    /// Each round is evaluated this many times and the fastest is reported.
    pub timing_repeats: usize,
    pub smse_window: usize,
}

impl SimSettings {
    pub fn new(method: Method, predict: PredictOptions) -> Self {
        SimSettings {
            method,
            predict,
            bounds: None,
            timing: true,
            timing_repeats: 1,
            smse_window: 100,
        }
    }
}

/// What one agent predicted at one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct SimRecord {
    pub iteration: usize,
    pub agent: usize,
    pub prediction: Vec<f64>,
    pub truth: Vec<f64>,
    /// Cumulative SMSE per output dimension; `None` while undefined.
    pub smse: Vec<Option<f64>>,
    pub smse_window: Vec<Option<f64>>,
    /// Wall-clock time of the whole MAS round this record belongs to.
    pub prediction_time_ms: f64,
    /// `Σ_i |S_i|` over the round.
    pub active_agents: usize,
    /// `|S_i|` of this agent.
    pub selected: usize,
    pub hat_eta: Option<f64>,
}

impl SimRecord {
    pub fn abs_error(&self, j: usize) -> f64 {
        (self.prediction[j] - self.truth[j]).abs()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepStats {
    pub iteration: usize,
    pub prediction_time_ms: f64,
    pub active_agents: usize,
    pub recipient: Option<usize>,
    pub deleted_index: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub method: String,
    pub iterations: usize,
    pub n_agents: usize,
    pub mean_prediction_time_ms: f64,
    pub median_prediction_time_ms: f64,
    pub mean_active_agents: f64,
    /// Mean over agents and dimensions of the final cumulative SMSE.
    pub final_smse: Option<f64>,
    pub mean_abs_error: f64,
    pub total_deletions: usize,
    pub final_dataset_sizes: Vec<usize>,
    pub clamped_variances: u64,
}

#[derive(Debug, Clone)]
pub struct SimRun {
    pub records: Vec<SimRecord>,
    pub steps: Vec<StepStats>,
    pub final_sizes: Vec<usize>,
    pub deletions: Vec<usize>,
    pub clamped_variances: u64,
}

impl SimRun {
    pub fn mean_abs_error(&self) -> f64 {
        let (sum, n) = self.records.iter().fold((0.0, 0usize), |(s, n), r| {
            (s + (0..r.truth.len()).map(|j| r.abs_error(j)).sum::<f64>(), n + r.truth.len())
        });
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }

    pub fn summary(&self, method: &Method) -> SimSummary {
        let times: Vec<f64> = self.steps.iter().map(|s| s.prediction_time_ms).collect();
        let n_agents = self.final_sizes.len();
        let mut last: Vec<Option<&SimRecord>> = vec![None; n_agents];
        for r in &self.records {
            last[r.agent] = Some(r);
        }
        let finals: Vec<f64> = last
            .iter()
            .flatten()
            .flat_map(|r| r.smse.iter().flatten().copied())
            .collect();
        SimSummary {
            method: method.label(),
            iterations: self.steps.len(),
            n_agents,
            mean_prediction_time_ms: mean(&times),
            median_prediction_time_ms: median(&times),
            mean_active_agents: mean(&self.steps.iter().map(|s| s.active_agents as f64).collect::<Vec<_>>()),
            final_smse: (!finals.is_empty()).then(|| mean(&finals)),
            mean_abs_error: self.mean_abs_error(),
            total_deletions: self.deletions.iter().sum(),
            final_dataset_sizes: self.final_sizes.clone(),
            clamped_variances: self.clamped_variances,
        }
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Every agent's joint prediction at `x`, and the elapsed wall-clock time in ms.
///
/// Each agent evaluates its local quantities once; all requesters share them.
pub fn predict_round(
    models: &[AgentModel],
    graph: &Graph,
    x: &[f64],
    settings: &SimSettings,
) -> Result<(Vec<JointPrediction>, f64)> {
    let mut best = f64::INFINITY;
    let mut out = Vec::new();
    for _ in 0..settings.timing_repeats.max(1) {
        let start = Instant::now();
        out = round(models, graph, x, settings)?;
        best = best.min(start.elapsed().as_secs_f64() * 1e3);
    }
    Ok((out, if settings.timing { best } else { 0.0 }))
}

fn round(models: &[AgentModel], graph: &Graph, x: &[f64], settings: &SimSettings) -> Result<Vec<JointPrediction>> {
    let views: Vec<LocalView<'_>> = models
        .iter()
        .enumerate()
        .map(|(a, m)| LocalView::new(a, m, x, settings.predict))
        .collect();
    let mut out = Vec::with_capacity(models.len());
    for i in 0..models.len() {
        let hood: Vec<&LocalView<'_>> = graph.neighborhood(i).into_iter().map(|a| &views[a]).collect();
        out.push(joint_predict_views(i, &hood, &settings.method)?);
    }
    Ok(out)
}

/// Bound ingredients of every agent at `x`, indexed by agent id.
pub fn bound_inputs(
    models: &[AgentModel],
    x: &[f64],
    settings: &SimSettings,
    bounds: &BoundParams,
) -> Result<Vec<AgentBoundInput>> {
    models
        .iter()
        .map(|m| {
            let cfg = m.kernel();
            let d = cfg.output_dim;
            if m.is_empty() {
                let none = IndexSelection {
                    included: Vec::new(),
                    excluded: Vec::new(),
                    threshold: 0.0,
                    policy: settings.predict.rho,
                    similarities: Vec::new(),
                };
                return Ok(AgentBoundInput {
                    epsilon: f64::INFINITY,
                    approx_mean_norm: 0.0,
                    eta: eta_bound(cfg, &none, bounds.beta_delta, d)?,
                });
            }
            let idx = select_indices(m, x, settings.predict.rho)?;
            let eps = epsilon_value(m, x, &idx, bounds.lambda)?;
            let approx = m.approx_mean_all(x, &idx)?;
            Ok(AgentBoundInput {
                epsilon: eps,
                approx_mean_norm: approx.iter().map(|v| v * v).sum::<f64>().sqrt(),
                eta: eta_bound(cfg, &idx, bounds.beta_delta, d)?,
            })
        })
        .collect()
}

fn hat_etas(
    models: &[AgentModel],
    x: &[f64],
    plans: &[AggregationPlan],
    settings: &SimSettings,
) -> Result<Vec<Option<f64>>> {
    match &settings.bounds {
        Some(b) if settings.method.tag().is_error_informed() => {
            let inputs = bound_inputs(models, x, settings, b)?;
            let agg = aggregated_bound(&inputs, plans)?;
            Ok(agg.hat_eta.into_iter().map(Some).collect())
        }
        _ => Ok(vec![None; models.len()]),
    }
}

struct Recorder {
    trackers: Vec<Vec<SmseTracker>>,
    records: Vec<SimRecord>,
    steps: Vec<StepStats>,
}

impl Recorder {
    fn new(n: usize, d: usize, window: usize) -> Self {
        Recorder {
            trackers: vec![vec![SmseTracker::new(window); d]; n],
            records: Vec::new(),
            steps: Vec::new(),
        }
    }

    fn record(
        &mut self,
        iteration: usize,
        preds: Vec<JointPrediction>,
        truth: &[f64],
        ms: f64,
        etas: Vec<Option<f64>>,
    ) -> usize {
        let active: usize = preds.iter().map(|p| p.plan.size()).sum();
        for (agent, (p, eta)) in preds.into_iter().zip(etas).enumerate() {
            let tr = &mut self.trackers[agent];
            for (j, t) in tr.iter_mut().enumerate() {
                t.push(p.mean[j], truth[j]);
            }
            self.records.push(SimRecord {
                iteration,
                agent,
                selected: p.plan.size(),
                prediction: p.mean,
                truth: truth.to_vec(),
                smse: tr.iter().map(SmseTracker::cumulative).collect(),
                smse_window: tr.iter().map(SmseTracker::windowed).collect(),
                prediction_time_ms: ms,
                active_agents: active,
                hat_eta: eta,
            });
        }
        active
    }
}

/// Fixed-data experiment: each agent holds one partition and every agent predicts every query.
pub fn run_offline_toy(data: &ToyData, setup: &MasSetup, settings: &SimSettings) -> Result<SimRun> {
    let n = setup.graph.len();
    if data.partitions.len() != n {
        return Err(Error::Config(format!(
            "{} partitions for a graph of {n} agents",
            data.partitions.len()
        )));
    }
    let d = setup.kernel.output_dim;
    if setup.kernel.input_dim != 1 || d != 1 {
        return Err(Error::Config("the toy scenario is one-dimensional".into()));
    }
    let mut models = Vec::with_capacity(n);
    for part in &data.partitions {
        let xs: Vec<Vec<f64>> = part.iter().map(|&(x, _)| vec![x]).collect();
        let ys: Vec<Vec<f64>> = part.iter().map(|&(_, y)| vec![y]).collect();
        models.push(AgentModel::from_data(setup.kernel, setup.capacity.max(part.len()), &xs, &ys)?);
    }
    let mut rec = Recorder::new(n, d, settings.smse_window);
    for (q, (&xq, &truth)) in data.queries.iter().zip(&data.truth).enumerate() {
        let x = [xq];
        let (preds, ms) = predict_round(&models, &setup.graph, &x, settings)?;
        let plans: Vec<AggregationPlan> = preds.iter().map(|p| p.plan.clone()).collect();
        let etas = hat_etas(&models, &x, &plans, settings)?;
        let active = rec.record(q, preds, &[truth], ms, etas);
        rec.steps.push(StepStats {
            iteration: q,
            prediction_time_ms: ms,
            active_agents: active,
            recipient: None,
            deleted_index: None,
        });
    }
    Ok(SimRun {
        records: rec.records,
        steps: rec.steps,
        final_sizes: models.iter().map(AgentModel::len).collect(),
        deletions: vec![0; n],
        clamped_variances: models.iter().map(AgentModel::clamped_variance_count).sum(),
    })
}

/// Streaming experiment: at step `k` every agent predicts at `x_k`, then one agent ingests `(x_k, y_k)`.
pub fn run_online(samples: &[StreamSample], setup: &MasSetup, settings: &SimSettings) -> Result<SimRun> {
    let n = setup.graph.len();
    let d = setup.kernel.output_dim;
    let schedule = StreamSchedule {
        mode: setup.schedule,
        n_agents: n,
        threshold: setup.capacity,
    };
    let mut models = (0..n)
        .map(|_| AgentModel::new(setup.kernel, setup.capacity))
        .collect::<Result<Vec<_>>>()?;
    let mut deletions = vec![0usize; n];
    let mut rec = Recorder::new(n, d, settings.smse_window);
    for (k, s) in samples.iter().enumerate() {
        if s.truth.len() != d {
            return Err(Error::invalid(format!("sample {k} has {} truth values, expected {d}", s.truth.len())));
        }
        let (preds, ms) = predict_round(&models, &setup.graph, &s.x, settings)?;
        let plans: Vec<AggregationPlan> = preds.iter().map(|p| p.plan.clone()).collect();
        let etas = hat_etas(&models, &s.x, &plans, settings)?;
        let active = rec.record(k, preds, &s.truth, ms, etas);

        let r = schedule.recipient(k);
        let report = ingest_with(&mut models[r], &s.x, &s.y, setup.deletion)?;
        if report.deleted_index.is_some() {
            deletions[r] += 1;
        }
        rec.steps.push(StepStats {
            iteration: k,
            prediction_time_ms: ms,
            active_agents: active,
            recipient: Some(r),
            deleted_index: report.deleted_index,
        });
    }
    Ok(SimRun {
        records: rec.records,
        steps: rec.steps,
        final_sizes: models.iter().map(AgentModel::len).collect(),
        deletions,
        clamped_variances: models.iter().map(AgentModel::clamped_variance_count).sum(),
    })
}
