//! Experiment configuration, read from JSON or TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::aggregation::Method;
use crate::data::DeletionStrategy;
use crate::error::{Error, Result};
use crate::kernel::KernelConfig;
use crate::metric::RhoPolicy;
use crate::sim::{Graph, GraphSpec, ScheduleMode, ToySpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Fixed partitions of the 1-D benchmark function, predicted on a query grid.
    Toy,
    /// Online loop over a dataset file or a synthetic stream.
    Stream,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamPattern {
    /// Inputs drawn independently and uniformly from the box.
    #[default]
    Uniform,
    /// The first input coordinate sweeps the box back and forth; the rest are uniform.
    Sweep,
    /// Each agent only observes inputs from its own equal-width slice of the box,
    /// as in the offline toy split; the slice follows the recipient schedule.
    Partitioned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StreamSpec {
    /// Number of synthetic steps; ignored when a dataset file is given.
    pub steps: usize,
    pub pattern: StreamPattern,
    /// Steps per half sweep when `pattern = "sweep"`.
    pub sweep_period: usize,
    pub lower: f64,
    pub upper: f64,
    pub noise_variance: f64,
    pub schedule: ScheduleMode,
    pub deletion: DeletionStrategy,
}

impl Default for StreamSpec {
    fn default() -> Self {
        StreamSpec {
            steps: 10_000,
            pattern: StreamPattern::Uniform,
            sweep_period: 250,
            lower: -1.2,
            upper: 1.2,
            noise_variance: 0.25,
            schedule: ScheduleMode::Cyclic,
            deletion: DeletionStrategy::KernelSimilarity,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundConfig {
    /// Compute the per-agent aggregated bound for the selective methods.
    pub enabled: bool,
    pub tau: f64,
    pub delta: f64,
    pub delta_n: f64,
    /// Input box; defaults to the data's per-dimension range.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lower: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub upper: Option<Vec<f64>>,
}

impl Default for BoundConfig {
    fn default() -> Self {
        BoundConfig {
            enabled: true,
            tau: 0.05,
            delta: 0.05,
            delta_n: 0.05,
            lower: None,
            upper: None,
        }
    }
}

fn default_window() -> usize {
    100
}

fn default_repeats() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub agents: usize,
    #[serde(default)]
    pub graph: GraphSpec,
    pub method: Method,
    /// Threshold policy; toy runs default to a constant 0.05, streams to the kernel-vector mean.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<RhoPolicy>,
    pub kernel: KernelConfig,
    pub capacity: usize,
    #[serde(default)]
    pub bounds: BoundConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub toy: ToySpec,
    #[serde(default)]
    pub stream: StreamSpec,
    #[serde(default = "default_window")]
    pub smse_window: usize,
    #[serde(default = "default_repeats")]
    pub timing_repeats: usize,
}

impl ExperimentConfig {
    /// The four-agent toy setup with the given method.
    pub fn toy(method: Method) -> Self {
        ExperimentConfig {
            scenario: Scenario::Toy,
            agents: 4,
            graph: GraphSpec::FullyConnected,
            method,
            rho: None,
            kernel: KernelConfig::new(1.0, 0.2, 0.25, 1, 1).expect("valid default kernel"),
            capacity: 100,
            bounds: BoundConfig::default(),
            seed: 0,
            dataset: None,
            output_dir: None,
            toy: ToySpec::default(),
            stream: StreamSpec::default(),
            smse_window: default_window(),
            timing_repeats: default_repeats(),
        }
    }

    /// A synthetic stream with `agents` agents of capacity `capacity`.
    pub fn stream(method: Method, agents: usize, capacity: usize, steps: usize) -> Self {
        ExperimentConfig {
            scenario: Scenario::Stream,
            agents,
            capacity,
            stream: StreamSpec {
                steps,
                ..StreamSpec::default()
            },
            ..Self::toy(method)
        }
    }

    pub fn effective_rho(&self) -> RhoPolicy {
        self.rho.unwrap_or(match self.scenario {
            Scenario::Toy => RhoPolicy::Constant { value: 0.05 },
            Scenario::Stream => RhoPolicy::Mean,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads `.toml` files as TOML and anything else as JSON, then validates.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg = match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("toml") => Self::from_toml(&text)?,
            _ => Self::from_json(&text)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.agents == 0 {
            return Err(Error::Config("agents must be at least 1".into()));
        }
        if self.capacity == 0 {
            return Err(Error::Config("capacity must be at least 1".into()));
        }
        self.kernel.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.method.validate()?;
        Graph::build(self.agents, &self.graph).map_err(|e| Error::Config(e.to_string()))?;
        if let RhoPolicy::Constant { value } = self.effective_rho() {
            let k0 = self.kernel.prior_variance();
            if !(0.0..=k0).contains(&value) {
                return Err(Error::Config(format!("constant rho {value} outside [0, {k0}]")));
            }
        }
        if self.timing_repeats == 0 {
            return Err(Error::Config("timing_repeats must be at least 1".into()));
        }
        let b = &self.bounds;
        if !(b.tau > 0.0) || !b.tau.is_finite() {
            return Err(Error::Config(format!("bounds.tau must be positive, got {}", b.tau)));
        }
        for (name, v) in [("delta", b.delta), ("delta_n", b.delta_n)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config(format!("bounds.{name} must lie in (0, 1), got {v}")));
            }
        }
        let m = self.kernel.input_dim;
        match (&b.lower, &b.upper) {
            (Some(lo), Some(hi)) => {
                if lo.len() != m || hi.len() != m {
                    return Err(Error::Config(format!("bound box must have {m} coordinates")));
                }
                if lo.iter().zip(hi).any(|(a, b)| !(a <= b)) {
                    return Err(Error::Config("bound box needs lower <= upper".into()));
                }
            }
            (None, None) => {}
            _ => return Err(Error::Config("give both bounds.lower and bounds.upper, or neither".into())),
        }
        match self.scenario {
            Scenario::Toy => {
                if self.kernel.input_dim != 1 || self.kernel.output_dim != 1 {
                    return Err(Error::Config("the toy scenario needs input_dim = output_dim = 1".into()));
                }
                self.toy.validate()?;
            }
            Scenario::Stream => {
                let s = &self.stream;
                if self.dataset.is_none() && s.steps == 0 {
                    return Err(Error::Config("stream.steps must be positive without a dataset".into()));
                }
                if !(s.upper > s.lower) || !s.lower.is_finite() || !s.upper.is_finite() {
                    return Err(Error::Config("stream box needs lower < upper".into()));
                }
                if !(s.noise_variance >= 0.0) || !s.noise_variance.is_finite() {
                    return Err(Error::Config("stream.noise_variance must be finite and >= 0".into()));
                }
                if s.pattern == StreamPattern::Sweep && s.sweep_period == 0 {
                    return Err(Error::Config("stream.sweep_period must be positive".into()));
                }
            }
        }
        Ok(())
    }
}
