use eigp::aggregation::Method;
use eigp::io::{
    compare_summaries, execute, load_dataset, read_summary, run_experiment, synthetic_stream, write_dataset,
    ExperimentConfig, RunOptions, StreamPattern, StreamSpec,
};
use eigp::metric::RhoPolicy;
use eigp::sim::{smse, ScheduleMode, StreamSchedule};

const QUIET: RunOptions = RunOptions { no_timing: true };

fn eigp_variants() -> [Method; 3] {
    [
        Method::Geigp,
        Method::Aeigp { theta: 1.0, nu: 1.0, tradeoff: None },
        Method::Aeigp { theta: 1.0, nu: 0.5, tradeoff: None },
    ]
}

/// The toy function streamed to four agents, each observing its own quarter of the input range.
fn toy_stream(method: Method, seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::stream(method, 4, 100, 2000);
    cfg.stream.pattern = StreamPattern::Partitioned;
    cfg.rho = Some(RhoPolicy::Constant { value: 0.05 });
    cfg.bounds.enabled = false;
    cfg.seed = seed;
    cfg
}

fn tail_smse(cfg: &ExperimentConfig) -> f64 {
    let (run, _, _) = execute(cfg, QUIET).unwrap();
    let start = cfg.stream.steps * 3 / 4;
    let tail: Vec<_> = run.records.iter().filter(|r| r.iteration >= start).collect();
    let pred: Vec<f64> = tail.iter().map(|r| r.prediction[0]).collect();
    let truth: Vec<f64> = tail.iter().map(|r| r.truth[0]).collect();
    smse(&pred, &truth).unwrap()
}

#[test]
fn eigp_beats_moe_on_the_toy_stream_tail() {
    for seed in [0, 1] {
        let moe = tail_smse(&toy_stream(Method::Moe, seed));
        for method in eigp_variants() {
            let s = tail_smse(&toy_stream(method, seed));
            assert!(s <= moe, "seed {seed}: {} SMSE {s} above MOE {moe}", method.label());
        }
    }
}

#[test]
fn ten_thousand_row_dataset_box_matches_generator() {
    let spec = StreamSpec { steps: 10_000, lower: -2.0, upper: 3.0, ..StreamSpec::default() };
    let schedule = StreamSchedule { mode: ScheduleMode::Cyclic, n_agents: 4, threshold: 100 };
    let samples = synthetic_stream(&spec, 2, 1, &schedule, 11);
    let xs: Vec<Vec<f64>> = samples.iter().map(|s| s.x.clone()).collect();
    let ys: Vec<Vec<f64>> = samples.iter().map(|s| s.y.clone()).collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("stream.csv");
    let mut buf = Vec::new();
    write_dataset(&mut buf, &xs, &ys).unwrap();
    std::fs::write(&path, buf).unwrap();

    let ds = load_dataset(&path, 2, 1).unwrap();
    assert_eq!(ds.len(), 10_000);
    assert_eq!(ds.inputs, xs);
    for dim in 0..2 {
        let lo = xs.iter().map(|x| x[dim]).fold(f64::INFINITY, f64::min);
        let hi = xs.iter().map(|x| x[dim]).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!((ds.lower[dim], ds.upper[dim]), (lo, hi));
        assert!(lo >= -2.0 && hi <= 3.0);
        // 10⁴ uniform draws come within 1% of each edge.
        assert!(lo < -2.0 + 0.05 && hi > 3.0 - 0.05);
    }
}

#[test]
fn dataset_stream_runs_and_derives_its_box() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.csv");
    let xs: Vec<Vec<f64>> = (0..300).map(|i| vec![-0.5 + i as f64 / 299.0]).collect();
    let ys: Vec<Vec<f64>> = xs.iter().map(|x| vec![(3.0 * x[0]).sin()]).collect();
    let mut buf = Vec::new();
    write_dataset(&mut buf, &xs, &ys).unwrap();
    std::fs::write(&path, buf).unwrap();

    let mut cfg = ExperimentConfig::stream(Method::Geigp, 3, 40, 0);
    cfg.dataset = Some(path);
    let (run, summary, _) = execute(&cfg, QUIET).unwrap();
    assert_eq!(summary.data_rows, 300);
    assert_eq!(summary.bounds.lower, vec![-0.5]);
    assert_eq!(summary.bounds.upper, vec![0.5]);
    assert_eq!(run.final_sizes, vec![40, 40, 40]);
    assert!(run.records.iter().all(|r| r.hat_eta.is_some()));
}

#[test]
fn greedy_uses_fewer_agents_than_poe_on_a_stream() {
    let greedy = execute(&toy_stream(Method::Geigp, 3), QUIET).unwrap().1;
    let poe = execute(&toy_stream(Method::Poe, 3), QUIET).unwrap().1;
    let rows = compare_summaries(&[greedy, poe]).unwrap();
    assert_eq!(rows[0].mean_active_agents, 4.0);
    assert_eq!(rows[1].mean_active_agents, 16.0);
    assert!(rows.iter().all(|r| r.speed_rank.is_none()), "no ranking from zeroed timings");
}

#[test]
fn metrics_schema_is_shared_by_every_method() {
    let dir = tempfile::tempdir().unwrap();
    let mut headers = Vec::new();
    for (k, method) in [Method::Geigp, Method::Aeigp { theta: 1.0, nu: 0.5, tradeoff: None }, Method::Rbcm]
        .into_iter()
        .enumerate()
    {
        let out = dir.path().join(k.to_string());
        run_experiment(&ExperimentConfig::toy(method), &out, QUIET).unwrap();
        let text = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
        headers.push(text.lines().next().unwrap().to_owned());
        let plot = std::fs::read_to_string(out.join("plot.csv")).unwrap();
        assert_eq!(plot.lines().next().unwrap(), "x,truth,method,agent,prediction");
    }
    assert!(headers.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn summary_echo_reparses_to_the_same_config() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = toy_stream(Method::Aeigp { theta: 0.5, nu: 0.25, tradeoff: None }, 8);
    cfg.stream.steps = 300;
    cfg.smse_window = 50;
    run_experiment(&cfg, dir.path(), QUIET).unwrap();
    let summary = read_summary(dir.path()).unwrap();
    assert_eq!(summary.config, cfg);
    let echoed = ExperimentConfig::from_json(&summary.config.to_json().unwrap()).unwrap();
    assert_eq!(echoed, cfg);
}
