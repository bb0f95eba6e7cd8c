//! Superposition coefficients and the interference terms of lifelong editing.
//!
//! For an edit key `k_i` and any key `k_j` the superposition coefficient is
//!
//! ```text
//! p(k_i, k_j) = (C⁻¹k_i)ᵀ k_j / (C⁻¹k_i)ᵀ k_i
//!             = (C^{-1/2}k_i)ᵀ(C^{-1/2}k_j) / ‖C^{-1/2}k_i‖²
//! ```
//!
//! i.e. a normalized dot product in whitening space. Interference on an
//! original key is `Δ_o[:,j] = Σ_i p(k_{e_i}, k_j) δ(v_{e_i})`; on an earlier
//! edit it is `Δ_e[:,j] = Σ_{i>j} p(k_{e_i}, k_{e_j}) δ(v_{e_i})`.

use crate::editor::EditLog;
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector, WhiteningTransform};
use crate::par::Exec;

/// Maximum allowed disagreement between the two formulas for `p`,
/// relative to `max(1, |p|)`.
pub const P_CONSISTENCY_TOL: f64 = 1e-10;

/// Which algebraic route evaluates `p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PForm {
    /// `(C⁻¹k_i)ᵀk_j / (C⁻¹k_i)ᵀk_i`
    #[default]
    Inverse,
    /// normalized dot product of `C^{-1/2}k_i` and `C^{-1/2}k_j`
    Whitened,
}

fn check_key(k: &Vector, dim: usize, what: &str) -> Result<()> {
    if k.len() != dim {
        return Err(Error::dims("superposition key", dim, k.len()));
    }
    if k.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput(format!("{what} has non-finite entries")));
    }
    Ok(())
}

/// `p` by a single route.
pub fn p_coeff_with(wt: &WhiteningTransform, k_i: &Vector, k_j: &Vector, form: PForm) -> Result<f64> {
    check_key(k_i, wt.dim(), "k_i")?;
    check_key(k_j, wt.dim(), "k_j")?;
    if k_i.iter().all(|&x| x == 0.0) {
        return Err(Error::InvalidInput("k_i is the zero vector".into()));
    }
    let p = match form {
        PForm::Inverse => {
            let a = wt.inv() * k_i;
            a.dot(k_j) / a.dot(k_i)
        }
        PForm::Whitened => {
            let zi = wt.inv_sqrt() * k_i;
            let zj = wt.inv_sqrt() * k_j;
            zi.dot(&zj) / zi.dot(&zi)
        }
    };
    if !p.is_finite() {
        return Err(Error::Numeric(format!("p(k_i, k_j) = {p}")));
    }
    Ok(p)
}

/// `p(k_i, k_j)`, evaluated by both routes; disagreement beyond
/// [`P_CONSISTENCY_TOL`] is a numeric error. Returns the inverse-form value.
pub fn p_coeff(wt: &WhiteningTransform, k_i: &Vector, k_j: &Vector) -> Result<f64> {
    let inv = p_coeff_with(wt, k_i, k_j, PForm::Inverse)?;
    let white = p_coeff_with(wt, k_i, k_j, PForm::Whitened)?;
    let dev = (inv - white).abs();
    if dev > P_CONSISTENCY_TOL * inv.abs().max(1.0) {
        return Err(Error::Numeric(format!(
            "p routes disagree: inverse {inv:e} vs whitened {white:e}"
        )));
    }
    Ok(inv)
}

/// The `m × m` matrix `P[i,j] = p(k_i, k_j)`.
#[derive(Debug, Clone)]
pub struct PMatrix {
    entries: Matrix,
    key_ids: Vec<String>,
}

impl PMatrix {
    pub fn m(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &Matrix {
        &self.entries
    }

    pub fn key_ids(&self) -> &[String] {
        &self.key_ids
    }

    pub fn with_key_ids(mut self, ids: Vec<String>) -> Result<Self> {
        if ids.len() != self.m() {
            return Err(Error::dims("P matrix key ids", self.m(), ids.len()));
        }
        self.key_ids = ids;
        Ok(self)
    }

    /// Off-diagonal entries in row-major order (`m² − m` values).
    pub fn off_diagonal(&self) -> Vec<f64> {
        let m = self.m();
        let mut out = Vec::with_capacity(m * m - m);
        for i in 0..m {
            for j in 0..m {
                if i != j {
                    out.push(self.entries[(i, j)]);
                }
            }
        }
        out
    }

    /// Leading `k × k` block with the matching ids.
    pub fn leading(&self, k: usize) -> Result<PMatrix> {
        if k == 0 || k > self.m() {
            return Err(Error::InvalidInput(format!(
                "submatrix size {k} outside 1..={}",
                self.m()
            )));
        }
        Ok(PMatrix {
            entries: self.entries.view((0, 0), (k, k)).into_owned(),
            key_ids: self.key_ids[..k].to_vec(),
        })
    }

    /// `(i, j, p)` for off-diagonal pairs, sorted by descending `p`.
    pub fn top_pairs(&self, count: usize) -> Vec<(usize, usize, f64)> {
        let m = self.m();
        let mut pairs: Vec<(usize, usize, f64)> = (0..m)
            .flat_map(|i| (0..m).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| (i, j, self.entries[(i, j)]))
            .collect();
        pairs.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
        pairs.truncate(count);
        pairs
    }
}

fn check_key_columns(wt: &WhiteningTransform, keys: &Matrix) -> Result<()> {
    if keys.nrows() != wt.dim() {
        return Err(Error::dims("key matrix rows", wt.dim(), keys.nrows()));
    }
    crate::linalg::ensure_finite(keys, "key matrix")?;
    for (j, col) in keys.column_iter().enumerate() {
        if col.iter().all(|&x| x == 0.0) {
            return Err(Error::InvalidInput(format!("key column {j} is the zero vector")));
        }
    }
    Ok(())
}

pub fn p_matrix(wt: &WhiteningTransform, keys: &Matrix) -> Result<PMatrix> {
    p_matrix_with(wt, keys, PForm::Inverse, Exec::default())
}

/// P matrix by the chosen route and execution policy. Rows are independent;
/// serial and parallel assembly give identical bits.
pub fn p_matrix_with(wt: &WhiteningTransform, keys: &Matrix, form: PForm, exec: Exec) -> Result<PMatrix> {
    let m = keys.ncols();
    if m < 2 {
        return Err(Error::InvalidInput(format!("P matrix needs m >= 2 keys, got {m}")));
    }
    check_key_columns(wt, keys)?;
    // left[:, i] pairs with right[:, j]; for the inverse route that is
    // (C⁻¹K, K), for the whitened route (C^{-1/2}K, C^{-1/2}K).
    let (left, right) = match form {
        PForm::Inverse => (wt.apply_inv(keys)?, keys.clone()),
        PForm::Whitened => {
            let z = wt.whiten(keys)?;
            (z.clone(), z)
        }
    };
    let rows = exec.map(m, |i| {
        let a = left.column(i);
        let denom = a.dot(&right.column(i));
        (0..m)
            .map(|j| if i == j { 1.0 } else { a.dot(&right.column(j)) / denom })
            .collect::<Vec<f64>>()
    });
    let entries = Matrix::from_fn(m, m, |i, j| rows[i][j]);
    if entries.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("P matrix has non-finite entries".into()));
    }
    Ok(PMatrix {
        entries,
        key_ids: (0..m).map(|j| format!("k{j}")).collect(),
    })
}

/// `coef[i, j] = p(k_{e_i}, t_j)` for every edit `i` in the log and every
/// target column `t_j`.
fn edit_coefficients(log: &EditLog, wt: &WhiteningTransform, targets: &Matrix) -> Result<Matrix> {
    let keys = log.keys();
    let directions = wt.apply_inv(&keys)?;
    if targets.nrows() != wt.dim() {
        return Err(Error::dims("target key rows", wt.dim(), targets.nrows()));
    }
    let n = log.len();
    let t = targets.ncols();
    let mut coef = Matrix::zeros(n, t);
    for i in 0..n {
        let a = directions.column(i);
        let denom = a.dot(&keys.column(i));
        for j in 0..t {
            coef[(i, j)] = a.dot(&targets.column(j)) / denom;
        }
    }
    Ok(coef)
}

fn require_nonempty(log: &EditLog) -> Result<()> {
    if log.is_empty() {
        return Err(Error::InvalidInput("edit log is empty".into()));
    }
    Ok(())
}

/// Change of the memory's outputs on `original_keys`:
/// `Δ_o[:,j] = Σ_i p(k_{e_i}, k_j) δ(v_{e_i})`.
pub fn delta_original(log: &EditLog, wt: &WhiteningTransform, original_keys: &Matrix) -> Result<Matrix> {
    require_nonempty(log)?;
    let coef = edit_coefficients(log, wt, original_keys)?;
    Ok(log.deltas() * coef)
}

/// Residual on earlier edits: `Δ_e[:,j] = Σ_{i>j} p(k_{e_i}, k_{e_j}) δ(v_{e_i})`,
/// with the last column identically zero.
pub fn delta_edited(log: &EditLog, wt: &WhiteningTransform) -> Result<Matrix> {
    require_nonempty(log)?;
    let mut coef = edit_coefficients(log, wt, &log.keys())?;
    let n = log.len();
    for i in 0..n {
        for j in i..n {
            coef[(i, j)] = 0.0;
        }
    }
    Ok(log.deltas() * coef)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccumulationPoint {
    /// Number of edits applied.
    pub n: usize,
    pub frob_delta_o: f64,
    pub frob_delta_e: f64,
}

/// `‖Δ_o‖_F` and `‖Δ_e‖_F` after each prefix of the log.
pub fn accumulation_curve(
    log: &EditLog,
    wt: &WhiteningTransform,
    original_keys: &Matrix,
) -> Result<Vec<AccumulationPoint>> {
    require_nonempty(log)?;
    let coef_o = edit_coefficients(log, wt, original_keys)?;
    let coef_e = edit_coefficients(log, wt, &log.keys())?;
    let n = log.len();
    let dv = log.initial_weights.nrows();
    let mut acc_o = Matrix::zeros(dv, original_keys.ncols());
    let mut acc_e = Matrix::zeros(dv, n);
    let mut curve = Vec::with_capacity(n);
    for (i, rec) in log.records.iter().enumerate() {
        for j in 0..original_keys.ncols() {
            acc_o.column_mut(j).axpy(coef_o[(i, j)], &rec.delta_v, 1.0);
        }
        for j in 0..i {
            acc_e.column_mut(j).axpy(coef_e[(i, j)], &rec.delta_v, 1.0);
        }
        curve.push(AccumulationPoint {
            n: i + 1,
            frob_delta_o: acc_o.norm(),
            frob_delta_e: acc_e.norm(),
        });
    }
    Ok(curve)
}

#[derive(Debug, Clone)]
pub struct InterferenceReport {
    pub delta_o: Matrix,
    pub delta_e: Matrix,
    pub column_norms_o: Vec<f64>,
    pub column_norms_e: Vec<f64>,
    pub frobenius_o: f64,
    pub frobenius_e: f64,
}

pub fn interference_report(
    log: &EditLog,
    wt: &WhiteningTransform,
    original_keys: &Matrix,
) -> Result<InterferenceReport> {
    let delta_o = delta_original(log, wt, original_keys)?;
    let delta_e = delta_edited(log, wt)?;
    let norms = |m: &Matrix| m.column_iter().map(|c| c.norm()).collect::<Vec<_>>();
    Ok(InterferenceReport {
        column_norms_o: norms(&delta_o),
        column_norms_e: norms(&delta_e),
        frobenius_o: delta_o.norm(),
        frobenius_e: delta_e.norm(),
        delta_o,
        delta_e,
    })
}
