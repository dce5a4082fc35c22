//! Standardized mean squared error, in batch and running form.

use std::collections::VecDeque;

use crate::error::{Error, Result};

/// Mean squared error divided by the population variance of `truths`.
pub fn smse(predictions: &[f64], truths: &[f64]) -> Result<f64> {
    if predictions.len() != truths.len() {
        return Err(Error::invalid(format!(
            "{} predictions against {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    if truths.len() < 2 {
        return Err(Error::UndefinedMetric("SMSE needs at least two truths".into()));
    }
    let n = truths.len() as f64;
    let mean = truths.iter().sum::<f64>() / n;
    let var = truths.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
    if !(var > 0.0) {
        return Err(Error::UndefinedMetric("truth sequence has zero variance".into()));
    }
    let mse = predictions
        .iter()
        .zip(truths)
        .map(|(p, t)| (p - t).powi(2))
        .sum::<f64>()
        / n;
    Ok(mse / var)
}

/// Cumulative SMSE of one (agent, dimension) stream, plus a sliding-window variant.
#[derive(Debug, Clone)]
pub struct SmseTracker {
    count: usize,
    sq_err: f64,
    mean: f64,
    m2: f64,
    window: usize,
    recent: VecDeque<(f64, f64)>,
}

impl SmseTracker {
    pub fn new(window: usize) -> Self {
        SmseTracker {
            count: 0,
            sq_err: 0.0,
            mean: 0.0,
            m2: 0.0,
            window,
            recent: VecDeque::with_capacity(window + 1),
        }
    }

    pub fn push(&mut self, prediction: f64, truth: f64) {
        self.count += 1;
        self.sq_err += (prediction - truth).powi(2);
        let delta = truth - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (truth - self.mean);
        if self.window > 0 {
            self.recent.push_back((prediction, truth));
            if self.recent.len() > self.window {
                self.recent.pop_front();
            }
        }
    }

    /// `None` until two distinct truths have been seen.
    pub fn cumulative(&self) -> Option<f64> {
        if self.count < 2 {
            return None;
        }
        let var = self.m2 / self.count as f64;
        if var > 0.0 {
            Some(self.sq_err / self.count as f64 / var)
        } else {
            None
        }
    }

    pub fn windowed(&self) -> Option<f64> {
        if self.window == 0 {
            return None;
        }
        let (p, t): (Vec<f64>, Vec<f64>) = self.recent.iter().copied().unzip();
        smse(&p, &t).ok()
    }
}
