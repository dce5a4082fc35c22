//! Bounded-memory streaming ingestion.
//!
//! When an agent is at capacity, the stored point least similar to the incoming
//! one is removed before the new point is appended, so an ingest never leaves
//! more than `capacity` points behind.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::AgentModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeletionStrategy {
    /// Remove `argmin_x κ(x, x_incoming)`, smallest index on ties.
    #[default]
    KernelSimilarity,
    /// Remove the oldest stored point.
    SlidingWindow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub appended: bool,
    pub deleted_index: Option<usize>,
    pub dataset_size_after: usize,
    pub errors_refreshed: bool,
}

/// Index of the stored point least similar to `x_incoming`; linear scan, ties to the smallest index.
pub fn find_deletion(model: &AgentModel, x_incoming: &[f64]) -> Result<usize> {
    if model.is_empty() {
        return Err(Error::InvalidState("cannot choose a deletion from an empty model".into()));
    }
    let k = model.kernel_vector(x_incoming)?;
    let mut best = 0;
    for (p, &v) in k.iter().enumerate().skip(1) {
        if v < k[best] {
            best = p;
        }
    }
    Ok(best)
}

/// Drops point `index` and the matching row and column of the Gram matrix.
pub fn delete_and_reallocate(model: &mut AgentModel, index: usize) -> Result<()> {
    model.remove_point(index)
}

/// One step of the model/data update loop.
pub fn ingest(model: &mut AgentModel, x: &[f64], y: &[f64]) -> Result<IngestReport> {
    ingest_with(model, x, y, DeletionStrategy::KernelSimilarity)
}

pub fn ingest_with(
    model: &mut AgentModel,
    x: &[f64],
    y: &[f64],
    strategy: DeletionStrategy,
) -> Result<IngestReport> {
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite value in ingested point"));
    }
    model.kernel().check_input(x)?;
    model.kernel().check_output(y)?;
    let deleted_index = if model.len() >= model.capacity() {
        let index = match strategy {
            DeletionStrategy::KernelSimilarity => find_deletion(model, x)?,
            DeletionStrategy::SlidingWindow => 0,
        };
        delete_and_reallocate(model, index)?;
        Some(index)
    } else {
        None
    };
    model.append_point(x, y)?;
    model.refresh_errors();
    Ok(IngestReport {
        appended: true,
        deleted_index,
        dataset_size_after: model.len(),
        errors_refreshed: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::gram_matrix;
    use crate::kernel::KernelConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> KernelConfig {
        KernelConfig::new(1.0, 1.0, 0.1, 1, 1).unwrap()
    }

    #[test]
    fn deletes_least_similar_point() {
        let model = AgentModel::from_data(cfg(), 2, &[vec![0.0], vec![5.0]], &[vec![1.0], vec![1.0]]).unwrap();
        assert_eq!(find_deletion(&model, &[0.1]).unwrap(), 1);
    }

    #[test]
    fn single_point_is_the_only_candidate() {
        let model = AgentModel::from_data(cfg(), 1, &[vec![3.0]], &[vec![1.0]]).unwrap();
        assert_eq!(find_deletion(&model, &[-10.0]).unwrap(), 0);
    }

    #[test]
    fn ties_go_to_smallest_index() {
        let model = AgentModel::from_data(cfg(), 2, &[vec![-1.0], vec![1.0]], &[vec![0.0], vec![0.0]]).unwrap();
        assert_eq!(find_deletion(&model, &[0.0]).unwrap(), 0);
    }

    #[test]
    fn empty_model_has_no_deletion() {
        let model = AgentModel::new(cfg(), 2).unwrap();
        assert!(matches!(find_deletion(&model, &[0.0]), Err(Error::InvalidState(_))));
    }

    #[test]
    fn delete_second_of_two() {
        let mut model =
            AgentModel::from_data(cfg(), 2, &[vec![0.0], vec![1.0]], &[vec![1.0], vec![2.0]]).unwrap();
        delete_and_reallocate(&mut model, 1).unwrap();
        assert_eq!(model.gram().as_slice(), &[1.0]);
        assert!(matches!(delete_and_reallocate(&mut model, 3), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn delete_middle_of_five_matches_recomputation() {
        let xs: Vec<Vec<f64>> = (0..5).map(|i| vec![0.3 * i as f64]).collect();
        let ys: Vec<Vec<f64>> = (0..5).map(|i| vec![(i as f64).sin()]).collect();
        let mut model = AgentModel::from_data(cfg(), 5, &xs, &ys).unwrap();
        delete_and_reallocate(&mut model, 2).unwrap();
        assert_eq!(model.gram(), &gram_matrix(model.kernel(), model.inputs()));
        let s2 = model.kernel().noise_variance;
        for p in 0..4 {
            assert!((model.errors(0)[p] + s2 * model.alpha(0)[p]).abs() < 1e-10);
        }
    }

    #[test]
    fn capacity_rule() {
        let mut model = AgentModel::new(cfg(), 3).unwrap();
        for (i, x) in [0.0, 1.0, 2.0].iter().enumerate() {
            let r = ingest(&mut model, &[*x], &[1.0]).unwrap();
            assert_eq!(r.deleted_index, None);
            assert_eq!(r.dataset_size_after, i + 1);
        }
        let r = ingest(&mut model, &[0.5], &[1.0]).unwrap();
        assert_eq!(r.deleted_index, Some(2));
        assert_eq!(r.dataset_size_after, 3);
    }

    #[test]
    fn sliding_window_drops_oldest() {
        let mut model = AgentModel::new(cfg(), 2).unwrap();
        for x in [0.0, 1.0, 2.0] {
            ingest_with(&mut model, &[x], &[x], DeletionStrategy::SlidingWindow).unwrap();
        }
        assert_eq!(model.inputs(), &[vec![1.0], vec![2.0]]);
    }

    #[test]
    fn two_hundred_point_stream_keeps_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut model = AgentModel::new(KernelConfig::new(1.0, 0.3, 0.05, 1, 2).unwrap(), 100).unwrap();
        let mut deletions = 0;
        for _ in 0..200 {
            let x = [rng.random_range(-1.0..1.0)];
            let y = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let r = ingest(&mut model, &x, &y).unwrap();
            deletions += r.deleted_index.is_some() as usize;
            assert!(model.len() <= 100);
            assert_eq!(model.gram(), &gram_matrix(model.kernel(), model.inputs()));
        }
        assert_eq!(model.len(), 100);
        assert_eq!(deletions, 100);
    }

    #[test]
    fn rejects_non_finite() {
        let mut model = AgentModel::new(cfg(), 2).unwrap();
        assert!(ingest(&mut model, &[f64::NAN], &[0.0]).is_err());
    }
}
