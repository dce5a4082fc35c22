//! Runs a configured experiment and writes its artifacts.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Scenario, StreamPattern, StreamSpec};
use super::dataset::{csv_err, load_dataset, write_dataset};
use crate::aggregation::PredictOptions;
use crate::error::{Error, Result};
use crate::metric::BoundParams;
use crate::sim::{
    generate_toy, run_offline_toy, run_online, toy_mean, Graph, MasSetup, SimRun, SimSettings, SimSummary,
    StreamSample, StreamSchedule, ToySpec, ToyData,
};

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const PLOT_FILE: &str = "plot.csv";

pub const METRICS_COLUMNS: [&str; 12] = [
    "iteration",
    "agent",
    "dim",
    "prediction",
    "truth",
    "abs_error",
    "smse",
    "smse_window",
    "prediction_time_ms",
    "active_agents",
    "selected",
    "hat_eta",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    /// Report every timing value as zero so repeated runs are byte-identical.
    pub no_timing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivedBounds {
    pub beta_delta: f64,
    pub lambda: f64,
    pub delta_rho: f64,
    pub delta_x: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: ExperimentConfig,
    pub stats: SimSummary,
    pub bounds: DerivedBounds,
    pub data_rows: usize,
    pub no_timing: bool,
}

/// Target used by synthetic streams: the benchmark function of the input mean,
/// plus a cosine term that differs per output dimension.
pub fn synthetic_target(x: &[f64], j: usize) -> f64 {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    toy_mean(mean) + 0.5 * j as f64 * (3.0 * x[0]).cos()
}

/// `schedule` is only consulted by the partitioned pattern, to find whose slice step `k` falls in.
pub fn synthetic_stream(
    spec: &StreamSpec,
    input_dim: usize,
    output_dim: usize,
    schedule: &StreamSchedule,
    seed: u64,
) -> Vec<StreamSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, spec.noise_variance.sqrt()).ok();
    let width = spec.upper - spec.lower;
    (0..spec.steps)
        .map(|k| {
            let mut x: Vec<f64> = (0..input_dim).map(|_| spec.lower + width * rng.random::<f64>()).collect();
            match spec.pattern {
                StreamPattern::Uniform => {}
                StreamPattern::Sweep => {
                    let p = spec.sweep_period.max(1);
                    let t = (k % (2 * p)) as f64 / p as f64;
                    x[0] = if t <= 1.0 {
                        spec.lower + width * t
                    } else {
                        spec.upper - width * (t - 1.0)
                    };
                }
                StreamPattern::Partitioned => {
                    let slice = width / schedule.n_agents as f64;
                    let start = spec.lower + slice * schedule.recipient(k) as f64;
                    x[0] = start + slice * rng.random::<f64>();
                }
            }
            let truth: Vec<f64> = (0..output_dim).map(|j| synthetic_target(&x, j)).collect();
            let y = truth
                .iter()
                .map(|t| t + noise.as_ref().map_or(0.0, |n| n.sample(&mut rng)))
                .collect();
            StreamSample { x, y, truth }
        })
        .collect()
}

/// Scenario data and the box the bound constants are computed over.
enum Prepared {
    Toy(ToyData),
    Stream(Vec<StreamSample>),
}

fn prepare(cfg: &ExperimentConfig) -> Result<(Prepared, Vec<f64>, Vec<f64>)> {
    let m = cfg.kernel.input_dim;
    let d = cfg.kernel.output_dim;
    match cfg.scenario {
        Scenario::Toy => {
            let data = generate_toy(&cfg.toy, cfg.agents, cfg.seed)?;
            Ok((Prepared::Toy(data), vec![cfg.toy.lower], vec![cfg.toy.upper]))
        }
        Scenario::Stream => match &cfg.dataset {
            Some(path) => {
                let ds = load_dataset(path, m, d)?;
                if ds.is_empty() {
                    return Err(Error::Schema(format!("dataset {} has no rows", path.display())));
                }
                let samples = ds
                    .inputs
                    .iter()
                    .zip(&ds.outputs)
                    .map(|(x, y)| StreamSample { x: x.clone(), y: y.clone(), truth: y.clone() })
                    .collect();
                Ok((Prepared::Stream(samples), ds.lower, ds.upper))
            }
            None => {
                let s = &cfg.stream;
                let schedule = StreamSchedule {
                    mode: s.schedule,
                    n_agents: cfg.agents,
                    threshold: cfg.capacity,
                };
                Ok((
                    Prepared::Stream(synthetic_stream(s, m, d, &schedule, cfg.seed)),
                    vec![s.lower; m],
                    vec![s.upper; m],
                ))
            }
        },
    }
}

/// Runs the scenario in memory. Returns the run, its summary and, for toy runs, the data.
pub fn execute(cfg: &ExperimentConfig, opts: RunOptions) -> Result<(SimRun, RunSummary, Option<ToyData>)> {
    cfg.validate()?;
    let (prepared, lo, hi) = prepare(cfg)?;
    let lower = cfg.bounds.lower.clone().unwrap_or(lo);
    let upper = cfg.bounds.upper.clone().unwrap_or(hi);
    let bp = BoundParams::new(cfg.bounds.tau, cfg.bounds.delta, cfg.bounds.delta_n, lower, upper, &cfg.kernel)?;
    let derived = DerivedBounds {
        beta_delta: bp.beta_delta,
        lambda: bp.lambda,
        delta_rho: bp.delta_rho(cfg.agents, cfg.kernel.output_dim),
        delta_x: bp.delta_x(cfg.kernel.output_dim),
        lower: bp.lower.clone(),
        upper: bp.upper.clone(),
    };
    let setup = MasSetup {
        kernel: cfg.kernel,
        graph: Graph::build(cfg.agents, &cfg.graph)?,
        capacity: cfg.capacity,
        schedule: cfg.stream.schedule,
        deletion: cfg.stream.deletion,
    };
    let mut settings = SimSettings::new(
        cfg.method,
        PredictOptions {
            rho: cfg.effective_rho(),
            lambda: bp.lambda,
        },
    );
    settings.bounds = cfg.bounds.enabled.then_some(bp);
    settings.timing = !opts.no_timing;
    settings.timing_repeats = cfg.timing_repeats;
    settings.smse_window = cfg.smse_window;
    let (run, rows, toy) = match prepared {
        Prepared::Toy(data) => {
            let run = run_offline_toy(&data, &setup, &settings)?;
            let rows = data.partitions.iter().map(Vec::len).sum();
            (run, rows, Some(data))
        }
        Prepared::Stream(samples) => (run_online(&samples, &setup, &settings)?, samples.len(), None),
    };
    let summary = RunSummary {
        config: cfg.clone(),
        stats: run.summary(&cfg.method),
        bounds: derived,
        data_rows: rows,
        no_timing: opts.no_timing,
    };
    Ok((run, summary, toy))
}

/// Runs the scenario and writes `metrics.csv`, `summary.json` and, for toy runs, `plot.csv` into `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path, opts: RunOptions) -> Result<RunSummary> {
    let (run, summary, toy) = execute(cfg, opts)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    atomic_write(&out_dir.join(METRICS_FILE), &metrics_csv(&run)?)?;
    if let Some(data) = &toy {
        atomic_write(&out_dir.join(PLOT_FILE), &plot_csv(&run, data, &cfg.method.label())?)?;
    }
    let json = serde_json::to_vec_pretty(&summary).map_err(|e| Error::Serde(e.to_string()))?;
    atomic_write(&out_dir.join(SUMMARY_FILE), &json)?;
    Ok(summary)
}

pub fn read_summary(dir: &Path) -> Result<RunSummary> {
    let path = dir.join(SUMMARY_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn metrics_csv(run: &SimRun) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(METRICS_COLUMNS).map_err(csv_err)?;
    for r in &run.records {
        for j in 0..r.truth.len() {
            w.write_record([
                r.iteration.to_string(),
                r.agent.to_string(),
                j.to_string(),
                r.prediction[j].to_string(),
                r.truth[j].to_string(),
                r.abs_error(j).to_string(),
                opt(r.smse[j]),
                opt(r.smse_window[j]),
                r.prediction_time_ms.to_string(),
                r.active_agents.to_string(),
                r.selected.to_string(),
                opt(r.hat_eta),
            ])
            .map_err(csv_err)?;
        }
    }
    w.into_inner().map_err(|e| Error::Serde(e.to_string()))
}

/// Long-format plot data: one row per (query, agent).
pub fn plot_csv(run: &SimRun, data: &ToyData, method: &str) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["x", "truth", "method", "agent", "prediction"]).map_err(csv_err)?;
    for r in &run.records {
        w.write_record([
            data.queries[r.iteration].to_string(),
            r.truth[0].to_string(),
            method.to_owned(),
            r.agent.to_string(),
            r.prediction[0].to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::Serde(e.to_string()))
}

/// Writes the toy data set: one `agent_<i>.csv` per partition, `queries.csv` with the
/// noiseless truth, and `partitions.csv` with the slice boundaries. Returns the files written.
pub fn write_toy(dir: &Path, spec: &ToySpec, data: &ToyData) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for (i, part) in data.partitions.iter().enumerate() {
        let xs: Vec<Vec<f64>> = part.iter().map(|p| vec![p.0]).collect();
        let ys: Vec<Vec<f64>> = part.iter().map(|p| vec![p.1]).collect();
        let mut buf = Vec::new();
        write_dataset(&mut buf, &xs, &ys)?;
        let path = dir.join(format!("agent_{i}.csv"));
        atomic_write(&path, &buf)?;
        written.push(path);
    }
    let xs: Vec<Vec<f64>> = data.queries.iter().map(|&q| vec![q]).collect();
    let ys: Vec<Vec<f64>> = data.truth.iter().map(|&t| vec![t]).collect();
    let mut buf = Vec::new();
    write_dataset(&mut buf, &xs, &ys)?;
    let path = dir.join("queries.csv");
    atomic_write(&path, &buf)?;
    written.push(path);

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["agent", "lower", "upper"]).map_err(csv_err)?;
    let mut edges = vec![spec.lower];
    edges.extend(&data.boundaries);
    edges.push(spec.upper);
    for (i, pair) in edges.windows(2).enumerate() {
        w.write_record([i.to_string(), pair[0].to_string(), pair[1].to_string()]).map_err(csv_err)?;
    }
    let path = dir.join("partitions.csv");
    atomic_write(&path, &w.into_inner().map_err(|e| Error::Serde(e.to_string()))?)?;
    written.push(path);
    Ok(written)
}

/// Writes to a sibling temporary file, then renames it into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("{} has no file name", path.display())))?;
    let mut tmp_name = name.to_os_string();
    tmp_name.push(".tmp");
    let tmp: PathBuf = path.with_file_name(tmp_name);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}
