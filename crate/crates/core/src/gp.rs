//! Single-agent Gaussian-process model with a bounded, streaming dataset.
//!
//! The model keeps the Gram matrix `K`, a lower Cholesky factor `L` of
//! `K̄ = K + σ_ω² I`, the cached solutions `α^j = K̄⁻¹ y^j` and the per-point
//! prediction errors `e^j = −σ_ω² α^j`. The last identity is what lets the
//! posterior mean be written as a kernel-weighted sum of prediction errors,
//! and what makes refreshing the errors free once `α` is known.

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernel::{kernel_vector, KernelConfig};
use crate::metric::IndexSelection;

#[derive(Debug)]
pub struct AgentModel {
    kernel: KernelConfig,
    capacity: usize,
    inputs: Vec<Vec<f64>>,
    outputs: Vec<Vec<f64>>,
    gram: DMatrix<f64>,
    factor: DMatrix<f64>,
    alpha: Vec<DVector<f64>>,
    errors: Vec<DVector<f64>>,
    clamped_variances: AtomicU64,
}

impl Clone for AgentModel {
    fn clone(&self) -> Self {
        AgentModel {
            kernel: self.kernel,
            capacity: self.capacity,
            inputs: self.inputs.clone(),
            outputs: self.outputs.clone(),
            gram: self.gram.clone(),
            factor: self.factor.clone(),
            alpha: self.alpha.clone(),
            errors: self.errors.clone(),
            clamped_variances: AtomicU64::new(self.clamped_variances.load(Ordering::Relaxed)),
        }
    }
}

/// Gram matrix `[κ(x_p, x_q)]` computed from scratch.
pub fn gram_matrix(cfg: &KernelConfig, inputs: &[Vec<f64>]) -> DMatrix<f64> {
    let n = inputs.len();
    let mut k = DMatrix::zeros(n, n);
    for p in 0..n {
        for q in 0..=p {
            let v = cfg.eval_unchecked(&inputs[p], &inputs[q]);
            k[(p, q)] = v;
            k[(q, p)] = v;
        }
    }
    k
}

impl AgentModel {
    pub fn new(kernel: KernelConfig, capacity: usize) -> Result<Self> {
        kernel.validate()?;
        if capacity == 0 {
            return Err(Error::invalid("capacity must be at least 1"));
        }
        let d = kernel.output_dim;
        Ok(AgentModel {
            kernel,
            capacity,
            inputs: Vec::new(),
            outputs: Vec::new(),
            gram: DMatrix::zeros(0, 0),
            factor: DMatrix::zeros(0, 0),
            alpha: vec![DVector::zeros(0); d],
            errors: vec![DVector::zeros(0); d],
            clamped_variances: AtomicU64::new(0),
        })
    }

    /// Builds a model by appending every pair in order. Capacity is not enforced here.
    pub fn from_data(
        kernel: KernelConfig,
        capacity: usize,
        inputs: &[Vec<f64>],
        outputs: &[Vec<f64>],
    ) -> Result<Self> {
        if inputs.len() != outputs.len() {
            return Err(Error::invalid("inputs and outputs differ in length"));
        }
        let mut model = AgentModel::new(kernel, capacity)?;
        for (x, y) in inputs.iter().zip(outputs) {
            model.append_point(x, y)?;
        }
        Ok(model)
    }

    pub fn kernel(&self) -> &KernelConfig {
        &self.kernel
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[Vec<f64>] {
        &self.outputs
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// Lower-triangular `L` with `L Lᵀ = K + σ_ω² I`.
    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    pub fn alpha(&self, j: usize) -> &DVector<f64> {
        &self.alpha[j]
    }

    pub fn errors(&self, j: usize) -> &DVector<f64> {
        &self.errors[j]
    }

    /// Outputs of dimension `j` as a column vector.
    pub fn output_column(&self, j: usize) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.outputs.iter().map(|y| y[j]))
    }

    /// Number of posterior variances that came out negative and were clamped to zero.
    pub fn clamped_variance_count(&self) -> u64 {
        self.clamped_variances.load(Ordering::Relaxed)
    }

    pub fn kernel_vector(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.kernel.check_input(x)?;
        Ok(kernel_vector(&self.kernel, x, &self.inputs))
    }

    fn check_dim(&self, j: usize) -> Result<()> {
        if j >= self.kernel.output_dim {
            return Err(Error::invalid(format!(
                "output dimension {j} out of range (d = {})",
                self.kernel.output_dim
            )));
        }
        Ok(())
    }

    /// `k(x, X)ᵀ K̄⁻¹ y^j` through the cached `α^j`. Returns the prior mean 0 when empty.
    pub fn posterior_mean(&self, x: &[f64], j: usize) -> Result<f64> {
        self.check_dim(j)?;
        let k = self.kernel_vector(x)?;
        Ok(dot(&k, self.alpha[j].as_slice()))
    }

    /// Posterior mean of every output dimension, sharing one kernel vector.
    pub fn posterior_mean_all(&self, x: &[f64]) -> Result<Vec<f64>> {
        let k = self.kernel_vector(x)?;
        Ok(self.alpha.iter().map(|a| dot(&k, a.as_slice())).collect())
    }

    /// `κ(0) − k(x,X)ᵀ K̄⁻¹ k(x,X)`, clamped at zero. Identical for every output dimension.
    pub fn posterior_var(&self, x: &[f64]) -> Result<f64> {
        let k = self.kernel_vector(x)?;
        Ok(self.posterior_var_from_kernel(&k))
    }

    /// Posterior mean (all dimensions) and variance from a single kernel vector.
    pub fn posterior(&self, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        let k = self.kernel_vector(x)?;
        let mean = self.alpha.iter().map(|a| dot(&k, a.as_slice())).collect();
        Ok((mean, self.posterior_var_from_kernel(&k)))
    }

    pub(crate) fn posterior_var_from_kernel(&self, k: &[f64]) -> f64 {
        let prior = self.kernel.prior_variance();
        if k.is_empty() {
            return prior;
        }
        let v = forward_substitute(&self.factor, k);
        let var = prior - v.iter().map(|a| a * a).sum::<f64>();
        if var < 0.0 {
            self.clamped_variances.fetch_add(1, Ordering::Relaxed);
            0.0
        } else {
            var
        }
    }

    /// `−σ_ω⁻² Σ_p e^j(x_p) κ(x, x_p)`; equal to [`posterior_mean`](Self::posterior_mean).
    pub fn posterior_mean_via_errors(&self, x: &[f64], j: usize) -> Result<f64> {
        self.check_dim(j)?;
        self.check_error_cache()?;
        let k = self.kernel_vector(x)?;
        Ok(-dot(&k, self.errors[j].as_slice()) / self.kernel.noise_variance)
    }

    /// Fast approximate mean `−σ_ω⁻² Σ_{p∈I} e^j(x_p) κ(x, x_p)` over the selected indices only.
    pub fn approx_mean(&self, x: &[f64], idx: &IndexSelection, j: usize) -> Result<f64> {
        self.check_dim(j)?;
        self.check_selection(idx)?;
        let e = &self.errors[j];
        let sum: f64 = if idx.similarities.len() == self.len() {
            idx.included.iter().map(|&p| idx.similarities[p] * e[p]).sum()
        } else {
            self.kernel.check_input(x)?;
            idx.included
                .iter()
                .map(|&p| self.kernel.eval_unchecked(x, &self.inputs[p]) * e[p])
                .sum()
        };
        Ok(-sum / self.kernel.noise_variance)
    }

    /// Approximate mean of every output dimension.
    pub fn approx_mean_all(&self, x: &[f64], idx: &IndexSelection) -> Result<Vec<f64>> {
        (0..self.kernel.output_dim)
            .map(|j| self.approx_mean(x, idx, j))
            .collect()
    }

    pub(crate) fn check_selection(&self, idx: &IndexSelection) -> Result<()> {
        let n = self.len();
        if let Some(&p) = idx.included.iter().chain(&idx.excluded).find(|&&p| p >= n) {
            return Err(Error::invalid(format!(
                "index {p} out of range for a model with {n} points"
            )));
        }
        Ok(())
    }

    fn check_error_cache(&self) -> Result<()> {
        let n = self.len();
        if self.errors.iter().any(|e| e.len() != n) {
            return Err(Error::Consistency(format!(
                "error cache length does not match dataset size {n}"
            )));
        }
        Ok(())
    }

    /// Appends one pair, bordering `K` with `k̄(x_new)` and `κ(0)` and extending the factor.
    ///
    /// May leave the model above capacity; capacity is enforced by the data manager.
    pub fn append_point(&mut self, x_new: &[f64], y_new: &[f64]) -> Result<()> {
        self.kernel.check_input(x_new)?;
        self.kernel.check_output(y_new)?;
        if x_new.iter().chain(y_new).any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite value in appended point"));
        }
        let n = self.len();
        let border = kernel_vector(&self.kernel, x_new, &self.inputs);
        let kappa0 = self.kernel.prior_variance();

        let mut gram = std::mem::replace(&mut self.gram, DMatrix::zeros(0, 0));
        gram.resize_mut(n + 1, n + 1, 0.0);
        for (p, &v) in border.iter().enumerate() {
            gram[(n, p)] = v;
            gram[(p, n)] = v;
        }
        gram[(n, n)] = kappa0;
        self.gram = gram;
        self.inputs.push(x_new.to_vec());
        self.outputs.push(y_new.to_vec());

        // Bordered Cholesky: [L 0; lᵀ c] with L l = k̄ and c² = κ(0) + σ_ω² − lᵀl.
        let l = forward_substitute(&self.factor, &border);
        let c2 = kappa0 + self.kernel.noise_variance - l.iter().map(|a| a * a).sum::<f64>();
        if c2 > 0.0 && c2.is_finite() {
            let mut factor = std::mem::replace(&mut self.factor, DMatrix::zeros(0, 0));
            factor.resize_mut(n + 1, n + 1, 0.0);
            for (p, &v) in l.iter().enumerate() {
                factor[(n, p)] = v;
            }
            factor[(n, n)] = c2.sqrt();
            self.factor = factor;
        } else {
            self.refactor()?;
        }
        self.refresh_alpha()?;
        self.refresh_errors();
        Ok(())
    }

    /// Removes the rows and columns of point `index` from `K` without recomputing
    /// the surviving entries, then refactors and refreshes the caches.
    pub fn remove_point(&mut self, index: usize) -> Result<()> {
        let n = self.len();
        if index >= n {
            return Err(Error::invalid(format!(
                "cannot delete index {index} from a model with {n} points"
            )));
        }
        self.inputs.remove(index);
        self.outputs.remove(index);
        let gram = std::mem::replace(&mut self.gram, DMatrix::zeros(0, 0));
        self.gram = gram.remove_row(index).remove_column(index);
        self.refactor()?;
        self.refresh_alpha()?;
        self.refresh_errors();
        Ok(())
    }

    /// `E^j ← −σ_ω² α^j` for every output dimension, reusing the cached solve.
    pub fn refresh_errors(&mut self) {
        let s2 = self.kernel.noise_variance;
        self.errors = self.alpha.iter().map(|a| a * -s2).collect();
    }

    fn refactor(&mut self) -> Result<()> {
        let n = self.len();
        if n == 0 {
            self.factor = DMatrix::zeros(0, 0);
            return Ok(());
        }
        let mut reg = self.gram.clone();
        for p in 0..n {
            reg[(p, p)] += self.kernel.noise_variance;
        }
        let chol = nalgebra::Cholesky::new(reg).ok_or_else(|| {
            Error::Consistency("regularized Gram matrix is not positive definite".into())
        })?;
        self.factor = chol.unpack();
        Ok(())
    }

    fn refresh_alpha(&mut self) -> Result<()> {
        let d = self.kernel.output_dim;
        let mut alpha = Vec::with_capacity(d);
        for j in 0..d {
            let y = self.output_column(j);
            let z = self
                .factor
                .solve_lower_triangular(&y)
                .ok_or_else(|| Error::Consistency("singular Cholesky factor".into()))?;
            let a = self
                .factor
                .tr_solve_lower_triangular(&z)
                .ok_or_else(|| Error::Consistency("singular Cholesky factor".into()))?;
            alpha.push(a);
        }
        self.alpha = alpha;
        Ok(())
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `L v = b` for lower-triangular `L`.
fn forward_substitute(l: &DMatrix<f64>, b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut v = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for (k, vk) in v.iter().enumerate().take(i) {
            s -= l[(i, k)] * vk;
        }
        v[i] = s / l[(i, i)];
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_kernel() -> KernelConfig {
        KernelConfig::new(1.0, 1.0, 1.0, 1, 1).unwrap()
    }

    /// Dense LU solve of `(K + σ² I) a = y` built from nothing but kernel evaluations.
    fn dense_mean(cfg: &KernelConfig, xs: &[Vec<f64>], ys: &[f64], x: &[f64]) -> f64 {
        let n = xs.len();
        let mut kbar = DMatrix::zeros(n, n);
        for p in 0..n {
            for q in 0..n {
                kbar[(p, q)] = cfg.eval_unchecked(&xs[p], &xs[q]);
            }
            kbar[(p, p)] += cfg.noise_variance;
        }
        let a = kbar.lu().solve(&DVector::from_column_slice(ys)).unwrap();
        xs.iter()
            .zip(a.iter())
            .map(|(xp, ap)| cfg.eval_unchecked(x, xp) * ap)
            .sum()
    }

    fn random_model(rng: &mut ChaCha8Rng, n: usize, m: usize, d: usize) -> AgentModel {
        let cfg = KernelConfig::new(1.0 + rng.random::<f64>(), 0.5 + rng.random::<f64>(), 0.1, m, d)
            .unwrap();
        let xs: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..m).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let ys: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect();
        AgentModel::from_data(cfg, n.max(1), &xs, &ys).unwrap()
    }

    #[test]
    fn empty_model_returns_prior() {
        let model = AgentModel::new(unit_kernel(), 4).unwrap();
        assert_eq!(model.posterior_mean(&[0.3], 0).unwrap(), 0.0);
        assert_eq!(model.posterior_var(&[0.3]).unwrap(), 1.0);
    }

    #[test]
    fn one_point_hand_solve() {
        let model = AgentModel::from_data(unit_kernel(), 4, &[vec![0.0]], &[vec![2.0]]).unwrap();
        assert_relative_eq!(model.posterior_mean(&[0.0], 0).unwrap(), 1.0, epsilon = 1e-15);
        assert_relative_eq!(model.posterior_var(&[0.0]).unwrap(), 0.5, epsilon = 1e-15);
        assert_relative_eq!(model.errors(0)[0], -1.0, epsilon = 1e-15);
        assert_relative_eq!(
            model.posterior_mean_via_errors(&[0.0], 0).unwrap(),
            1.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn three_point_mean_matches_dense_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = random_model(&mut rng, 3, 1, 1);
        let ys: Vec<f64> = model.outputs().iter().map(|y| y[0]).collect();
        for q in [-1.5, 0.0, 0.4, 2.5] {
            let expected = dense_mean(model.kernel(), model.inputs(), &ys, &[q]);
            let got = model.posterior_mean(&[q], 0).unwrap();
            assert_relative_eq!(got, expected, max_relative = 1e-10, epsilon = 1e-14);
        }
    }

    #[test]
    fn zero_outputs_give_zero_errors_and_mean() {
        let cfg = KernelConfig::new(1.0, 0.5, 0.2, 1, 1).unwrap();
        let xs = vec![vec![0.0], vec![0.5], vec![1.0]];
        let ys = vec![vec![0.0]; 3];
        let model = AgentModel::from_data(cfg, 3, &xs, &ys).unwrap();
        assert!(model.errors(0).iter().all(|e| *e == 0.0));
        assert_eq!(model.posterior_mean_via_errors(&[0.2], 0).unwrap(), 0.0);
    }

    #[test]
    fn five_point_reformulation_matches_standard_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = random_model(&mut rng, 5, 2, 2);
        for _ in 0..10 {
            let x = vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            for j in 0..2 {
                let a = model.posterior_mean(&x, j).unwrap();
                let b = model.posterior_mean_via_errors(&x, j).unwrap();
                assert_relative_eq!(a, b, max_relative = 1e-8, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn four_point_errors_match_per_point_residuals() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = random_model(&mut rng, 4, 1, 1);
        for (p, (x, y)) in model.inputs().iter().zip(model.outputs()).enumerate() {
            let residual = model.posterior_mean(x, 0).unwrap() - y[0];
            assert!((model.errors(0)[p] - residual).abs() < 1e-10);
        }
    }

    #[test]
    fn append_extends_gram_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut model = random_model(&mut rng, 3, 2, 1);
        model.append_point(&[0.25, -0.75], &[1.5]).unwrap();
        assert_eq!(model.len(), 4);
        assert_eq!(model.gram(), &gram_matrix(model.kernel(), model.inputs()));
        let s2 = model.kernel().noise_variance;
        for p in 0..4 {
            assert!((model.errors(0)[p] + s2 * model.alpha(0)[p]).abs() < 1e-10);
        }
    }

    #[test]
    fn first_append_gives_prior_diagonal() {
        let mut model = AgentModel::new(unit_kernel(), 2).unwrap();
        model.append_point(&[3.0], &[1.0]).unwrap();
        assert_eq!(model.gram(), &DMatrix::from_element(1, 1, 1.0));
    }

    #[test]
    fn approx_mean_edge_cases() {
        let cfg = KernelConfig::new(1.0, 1.0, 1.0, 1, 1).unwrap();
        let model =
            AgentModel::from_data(cfg, 2, &[vec![0.0], vec![2.0]], &[vec![2.0], vec![-1.0]]).unwrap();
        let x = [0.5];
        let all = IndexSelection::from_parts(vec![0, 1], vec![], 0.0, &model, &x);
        assert_eq!(
            model.approx_mean(&x, &all, 0).unwrap(),
            model.posterior_mean_via_errors(&x, 0).unwrap()
        );
        let none = IndexSelection::from_parts(vec![], vec![0, 1], 1.0, &model, &x);
        assert_eq!(model.approx_mean(&x, &none, 0).unwrap(), 0.0);

        // Single-term expansion: −σ⁻² e(x_2) κ(x, x_2).
        let second = IndexSelection::from_parts(vec![1], vec![0], 0.5, &model, &x);
        let expected = -model.errors(0)[1] * cfg.eval_unchecked(&x, &[2.0]) / cfg.noise_variance;
        assert_relative_eq!(model.approx_mean(&x, &second, 0).unwrap(), expected, epsilon = 1e-15);

        let bad = IndexSelection::from_parts(vec![5], vec![], 0.0, &model, &x);
        assert!(matches!(model.approx_mean(&x, &bad, 0), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn non_finite_append_is_rejected() {
        let mut model = AgentModel::new(unit_kernel(), 2).unwrap();
        assert!(model.append_point(&[f64::NAN], &[1.0]).is_err());
        assert!(model.append_point(&[0.0], &[f64::INFINITY]).is_err());
        assert!(model.is_empty());
    }

    #[test]
    fn variance_is_bounded_and_shrinks_with_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut model = AgentModel::new(KernelConfig::new(2.0, 0.6, 0.05, 1, 1).unwrap(), 50).unwrap();
        let queries: Vec<f64> = (0..20).map(|i| -2.0 + 0.2 * i as f64).collect();
        let mut last: Vec<f64> = queries.iter().map(|_| 2.0).collect();
        for _ in 0..25 {
            model
                .append_point(&[rng.random_range(-2.0..2.0)], &[rng.random_range(-1.0..1.0)])
                .unwrap();
            for (q, prev) in queries.iter().zip(last.iter_mut()) {
                let v = model.posterior_var(&[*q]).unwrap();
                assert!((0.0..=2.0).contains(&v));
                assert!(v <= *prev + 1e-12);
                *prev = v;
            }
        }
    }

    #[test]
    fn remove_point_matches_recomputed_gram() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut model = random_model(&mut rng, 5, 1, 1);
        model.remove_point(2).unwrap();
        assert_eq!(model.len(), 4);
        assert_eq!(model.gram(), &gram_matrix(model.kernel(), model.inputs()));
        assert!(model.remove_point(4).is_err());
    }
}
