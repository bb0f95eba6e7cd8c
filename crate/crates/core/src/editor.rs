//! Closed-form rank-one edits of a linear associative memory and their
//! sequential (lifelong) composition.
//!
//! An edit `(k_e, v_e)` is applied as `Ŵ = W + Λ (C⁻¹k_e)ᵀ` with
//! `Λ = (v_e − W k_e) / ((C⁻¹k_e)ᵀ k_e)`, which enforces `Ŵ k_e = v_e` while
//! keeping the least-squares fit on the covariance `C` optimal. Applying `n`
//! edits in turn gives `W_n = W_0 + Σ Λ_i (C⁻¹k_{e_i})ᵀ`; the [`EditLog`]
//! keeps exactly the data needed to rebuild any `W_i` and the interference
//! terms.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{self, EigenPolicy, Matrix, SpdMatrix, Vector, WhiteningTransform};

#[derive(Debug, Clone)]
pub struct AssociativeMemory {
    weights: Matrix,
    cov: Arc<SpdMatrix>,
    whitening: Arc<WhiteningTransform>,
}

impl AssociativeMemory {
    pub fn new(weights: Matrix, cov: Arc<SpdMatrix>, whitening: Arc<WhiteningTransform>) -> Result<Self> {
        linalg::ensure_finite(&weights, "weight matrix")?;
        if cov.dim() != weights.ncols() {
            return Err(Error::dims("memory covariance", weights.ncols(), cov.dim()));
        }
        if whitening.dim() != cov.dim() {
            return Err(Error::dims("memory whitening", cov.dim(), whitening.dim()));
        }
        Ok(Self {
            weights,
            cov,
            whitening,
        })
    }

    /// Memory over `cov` with its whitening computed at `eps` under `policy`.
    pub fn with_covariance(weights: Matrix, cov: SpdMatrix, eps: f64, policy: EigenPolicy) -> Result<Self> {
        let wt = linalg::inv_sqrt(&cov, eps, policy)?;
        Self::new(weights, Arc::new(cov), Arc::new(wt))
    }

    /// Least-squares memory for `(K, V)` with `C = K Kᵀ`.
    pub fn fit(keys: &Matrix, values: &Matrix, policy: EigenPolicy) -> Result<Self> {
        let weights = linalg::fit_memory(keys, values, policy)?;
        let cov = linalg::covariance(keys)?;
        Self::with_covariance(weights, cov, linalg::DEFAULT_EIGEN_EPS, policy)
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn cov(&self) -> &Arc<SpdMatrix> {
        &self.cov
    }

    pub fn whitening(&self) -> &Arc<WhiteningTransform> {
        &self.whitening
    }

    pub fn key_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn value_dim(&self) -> usize {
        self.weights.nrows()
    }

    /// Same covariance context, different weights.
    pub fn with_weights(&self, weights: Matrix) -> Result<Self> {
        Self::new(weights, Arc::clone(&self.cov), Arc::clone(&self.whitening))
    }

    pub fn recall(&self, key: &Vector) -> Result<Vector> {
        if key.len() != self.key_dim() {
            return Err(Error::dims("recall key", self.key_dim(), key.len()));
        }
        Ok(&self.weights * key)
    }
}

/// A key/value pair to be written into the memory. The key must be nonzero.
#[derive(Debug, Clone, PartialEq)]
pub struct EditRequest {
    key: Vector,
    value: Vector,
}

impl EditRequest {
    pub fn new(key: Vector, value: Vector) -> Result<Self> {
        linalg::ensure_finite_vec(&key, "edit key")?;
        linalg::ensure_finite_vec(&value, "edit value")?;
        if key.iter().all(|&x| x == 0.0) {
            return Err(Error::InvalidEdit {
                index: None,
                reason: "key is the zero vector".into(),
            });
        }
        Ok(Self { key, value })
    }

    pub fn key(&self) -> &Vector {
        &self.key
    }

    pub fn value(&self) -> &Vector {
        &self.value
    }
}

#[derive(Debug, Clone)]
pub struct EditRecord {
    /// 1-based position in the edit sequence.
    pub index: usize,
    pub key: Vector,
    pub value: Vector,
    pub lambda: Vector,
    /// `v_{e_i} − W_{i−1} k_{e_i}`
    pub delta_v: Vector,
}

#[derive(Debug, Clone)]
pub struct EditLog {
    pub records: Vec<EditRecord>,
    pub initial_weights: Matrix,
    pub final_weights: Matrix,
}

impl EditLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Edit keys as columns, `d_k × n`.
    pub fn keys(&self) -> Matrix {
        columns(self.records.iter().map(|r| &r.key))
    }

    /// Edit values as columns, `d_v × n`.
    pub fn values(&self) -> Matrix {
        columns(self.records.iter().map(|r| &r.value))
    }

    /// `δ(v_{e_i})` as columns, `d_v × n`.
    pub fn deltas(&self) -> Matrix {
        columns(self.records.iter().map(|r| &r.delta_v))
    }

    /// Log restricted to the first `n` edits; the final weights are rebuilt
    /// from the recorded rank-one terms.
    pub fn prefix(&self, n: usize, wt: &WhiteningTransform) -> Result<EditLog> {
        if n == 0 || n > self.len() {
            return Err(Error::InvalidInput(format!(
                "prefix length {n} outside 1..={}",
                self.len()
            )));
        }
        Ok(EditLog {
            records: self.records[..n].to_vec(),
            initial_weights: self.initial_weights.clone(),
            final_weights: self.weights_after(n, wt)?,
        })
    }

    /// `W_i = W_0 + Σ_{l ≤ i} Λ_l (C⁻¹k_{e_l})ᵀ`.
    pub fn weights_after(&self, i: usize, wt: &WhiteningTransform) -> Result<Matrix> {
        if i > self.len() {
            return Err(Error::InvalidInput(format!(
                "edit index {i} beyond log length {}",
                self.len()
            )));
        }
        let mut w = self.initial_weights.clone();
        for r in &self.records[..i] {
            let direction = wt.apply_inv_vec(&r.key)?;
            w.ger(1.0, &r.lambda, &direction, 1.0);
        }
        Ok(w)
    }
}

fn columns<'a>(cols: impl ExactSizeIterator<Item = &'a Vector>) -> Matrix {
    let cols: Vec<&Vector> = cols.collect();
    let rows = cols.first().map_or(0, |c| c.len());
    Matrix::from_fn(rows, cols.len(), |r, c| cols[c][r])
}

struct LambdaParts {
    lambda: Vector,
    delta_v: Vector,
    direction: Vector,
}

fn lambda_parts(mem: &AssociativeMemory, edit: &EditRequest) -> Result<LambdaParts> {
    if edit.key.len() != mem.key_dim() {
        return Err(Error::dims("edit key", mem.key_dim(), edit.key.len()));
    }
    if edit.value.len() != mem.value_dim() {
        return Err(Error::dims("edit value", mem.value_dim(), edit.value.len()));
    }
    let direction = mem.whitening.apply_inv_vec(&edit.key)?;
    let denom = direction.dot(&edit.key);
    if !(denom > 0.0 && denom.is_finite()) {
        return Err(Error::Numeric(format!(
            "edit denominator (C⁻¹k)ᵀk = {denom:e} is not positive"
        )));
    }
    let delta_v = &edit.value - &mem.weights * &edit.key;
    let lambda = &delta_v / denom;
    if lambda.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("edit multiplier is not finite".into()));
    }
    Ok(LambdaParts {
        lambda,
        delta_v,
        direction,
    })
}

/// `Λ = (v_e − W k_e) / ((C⁻¹k_e)ᵀ k_e)`.
pub fn compute_lambda(mem: &AssociativeMemory, edit: &EditRequest) -> Result<Vector> {
    lambda_parts(mem, edit).map(|p| p.lambda)
}

/// Applies one closed-form edit and returns the edited memory.
pub fn single_edit(mem: &AssociativeMemory, edit: &EditRequest) -> Result<AssociativeMemory> {
    let parts = lambda_parts(mem, edit)?;
    let mut w = mem.weights.clone();
    w.ger(1.0, &parts.lambda, &parts.direction, 1.0);
    mem.with_weights(w)
}

/// Applies `edits` in order, each against the result of the previous one.
pub fn lifelong_edit(mem: &AssociativeMemory, edits: &[EditRequest]) -> Result<EditLog> {
    if edits.is_empty() {
        return Err(Error::InvalidInput("edit list is empty".into()));
    }
    let mut w = mem.weights.clone();
    let mut records = Vec::with_capacity(edits.len());
    for (i, edit) in edits.iter().enumerate() {
        let index = i + 1;
        let current = mem.with_weights(w)?;
        let parts = lambda_parts(&current, edit).map_err(|e| Error::InvalidEdit {
            index: Some(index),
            reason: e.to_string(),
        })?;
        w = current.weights;
        w.ger(1.0, &parts.lambda, &parts.direction, 1.0);
        records.push(EditRecord {
            index,
            key: edit.key.clone(),
            value: edit.value.clone(),
            lambda: parts.lambda,
            delta_v: parts.delta_v,
        });
    }
    Ok(EditLog {
        records,
        initial_weights: mem.weights.clone(),
        final_weights: w,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_memory(dv: usize, dk: usize) -> AssociativeMemory {
        AssociativeMemory::new(
            Matrix::zeros(dv, dk),
            Arc::new(SpdMatrix::identity(dk)),
            Arc::new(WhiteningTransform::identity(dk)),
        )
        .unwrap()
    }

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    #[test]
    fn lambda_on_identity_covariance() {
        let mem = identity_memory(2, 2);
        let edit = EditRequest::new(v(&[1.0, 0.0]), v(&[1.0, 2.0])).unwrap();
        assert_eq!(compute_lambda(&mem, &edit).unwrap(), v(&[1.0, 2.0]));
        let edited = single_edit(&mem, &edit).unwrap();
        assert_eq!(edited.weights(), &Matrix::from_row_slice(2, 2, &[1.0, 0.0, 2.0, 0.0]));
    }

    #[test]
    fn satisfied_constraint_is_a_noop() {
        let mem = identity_memory(2, 2)
            .with_weights(Matrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]))
            .unwrap();
        let edit = EditRequest::new(v(&[1.0, 1.0]), v(&[3.0, 7.0])).unwrap();
        assert_eq!(compute_lambda(&mem, &edit).unwrap(), v(&[0.0, 0.0]));
        assert_eq!(single_edit(&mem, &edit).unwrap().weights(), mem.weights());
    }

    #[test]
    fn zero_key_rejected() {
        assert!(matches!(
            EditRequest::new(v(&[0.0, 0.0]), v(&[1.0])),
            Err(Error::InvalidEdit { index: None, .. })
        ));
        assert!(EditRequest::new(v(&[f64::NAN, 1.0]), v(&[1.0])).is_err());
    }

    #[test]
    fn dimension_mismatch_reported_with_edit_index() {
        let mem = identity_memory(2, 2);
        let good = EditRequest::new(v(&[1.0, 0.0]), v(&[1.0, 2.0])).unwrap();
        let bad = EditRequest::new(v(&[1.0, 0.0, 0.0]), v(&[1.0, 2.0])).unwrap();
        assert!(matches!(single_edit(&mem, &bad), Err(Error::DimensionMismatch { .. })));
        match lifelong_edit(&mem, &[good.clone(), good, bad]) {
            Err(Error::InvalidEdit { index: Some(3), .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn repeated_edit_has_zero_second_lambda() {
        let mem = identity_memory(3, 2);
        let e = EditRequest::new(v(&[0.6, 0.8]), v(&[1.0, -1.0, 2.0])).unwrap();
        let log = lifelong_edit(&mem, &[e.clone(), e]).unwrap();
        assert!(log.records[1].lambda.amax() < 1e-15);
        assert_eq!(log.records[0].index, 1);
        assert_eq!(log.records[1].index, 2);
    }

    #[test]
    fn empty_edit_list_rejected() {
        assert!(lifelong_edit(&identity_memory(1, 1), &[]).is_err());
    }

    #[test]
    fn covariance_shared_across_edits() {
        let mem = identity_memory(2, 2);
        let e = EditRequest::new(v(&[1.0, 1.0]), v(&[1.0, 2.0])).unwrap();
        let edited = single_edit(&mem, &e).unwrap();
        assert!(Arc::ptr_eq(mem.cov(), edited.cov()));
        assert!(Arc::ptr_eq(mem.whitening(), edited.whitening()));
    }
}
