//! Dense linear algebra shared by every other module: non-centered
//! covariance, SPD spectral functions (inverse square root, inverse, square
//! root) and the least-squares fit of an associative memory.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Condition number above which a covariance gets a ridge before use.
pub const MAX_CONDITION: f64 = 1e12;
/// Ridge scale, relative to `trace(C) / dim`.
pub const RIDGE_SCALE: f64 = 1e-8;
/// Default relative eigenvalue floor for [`inv_sqrt`].
pub const DEFAULT_EIGEN_EPS: f64 = 1e-12;
/// Largest accepted `max|C − Cᵀ|` relative to `max|C|`.
pub const SYMMETRY_TOL: f64 = 1e-12;

pub fn ensure_finite(m: &Matrix, what: &str) -> Result<()> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(Error::InvalidInput(format!("{what} is empty")));
    }
    if let Some(pos) = m.iter().position(|x| !x.is_finite()) {
        let (r, c) = (pos % m.nrows(), pos / m.nrows());
        return Err(Error::InvalidInput(format!(
            "{what} has a non-finite entry at ({r}, {c})"
        )));
    }
    Ok(())
}

pub fn ensure_finite_vec(v: &Vector, what: &str) -> Result<()> {
    if v.is_empty() {
        return Err(Error::InvalidInput(format!("{what} is empty")));
    }
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::InvalidInput(format!("{what} has a non-finite entry at {i}")));
    }
    Ok(())
}

/// How near-zero eigenvalues are treated when inverting a covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EigenPolicy {
    /// Eigenvalues at or below `eps * λ_max` are an error.
    #[default]
    Strict,
    /// Eigenvalues are floored at `eps * λ_max`.
    Clamp,
}

/// A symmetric positive-definite matrix together with its eigendecomposition.
///
/// Construction symmetrizes the input, and adds a ridge `λI` when the
/// condition number exceeds [`MAX_CONDITION`]; the ridge is kept in
/// [`SpdMatrix::ridge`].
#[derive(Debug, Clone)]
pub struct SpdMatrix {
    matrix: Matrix,
    ridge: f64,
    // ascending
    eigenvalues: Vec<f64>,
    eigenvectors: Matrix,
}

impl SpdMatrix {
    pub fn new(m: Matrix) -> Result<Self> {
        Self::with_symmetry_tol(m, SYMMETRY_TOL)
    }

    /// As [`SpdMatrix::new`] with a caller-chosen relative symmetry tolerance.
    pub fn with_symmetry_tol(m: Matrix, tol: f64) -> Result<Self> {
        ensure_finite(&m, "covariance")?;
        if !m.is_square() {
            return Err(Error::dims(
                "covariance",
                "square matrix",
                format!("{}x{}", m.nrows(), m.ncols()),
            ));
        }
        let scale = m.amax();
        let asym = (&m - m.transpose()).amax();
        if asym > tol * scale {
            return Err(Error::InvalidInput(format!(
                "covariance is not symmetric (max asymmetry {asym:e})"
            )));
        }
        let mut sym = (&m + m.transpose()) * 0.5;
        let (mut eigenvalues, eigenvectors) = sorted_eigen(&sym);
        let dim = sym.nrows();

        let lo = eigenvalues[0];
        let hi = eigenvalues[dim - 1];
        let mut ridge = 0.0;
        if hi <= 0.0 {
            return Err(Error::InvalidInput("covariance has no positive eigenvalue".into()));
        }
        if lo <= 0.0 || hi / lo > MAX_CONDITION {
            ridge = RIDGE_SCALE * sym.trace() / dim as f64;
            if lo + ridge <= 0.0 {
                return Err(Error::InvalidInput(format!(
                    "covariance is indefinite (smallest eigenvalue {lo:e})"
                )));
            }
            for i in 0..dim {
                sym[(i, i)] += ridge;
            }
            for ev in &mut eigenvalues {
                *ev += ridge;
            }
            log::debug!("covariance regularized with ridge {ridge:e}");
        }
        Ok(Self {
            matrix: sym,
            ridge,
            eigenvalues,
            eigenvectors,
        })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            matrix: Matrix::identity(dim, dim),
            ridge: 0.0,
            eigenvalues: vec![1.0; dim],
            eigenvectors: Matrix::identity(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> Matrix {
        self.matrix
    }

    /// Ridge added during construction (0 when none was needed).
    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn condition_number(&self) -> f64 {
        self.eigenvalues[self.dim() - 1] / self.eigenvalues[0]
    }

    /// `c · C` for `c > 0`, reusing the eigenvectors.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidInput(format!("scale must be positive, got {c}")));
        }
        Ok(Self {
            matrix: &self.matrix * c,
            ridge: self.ridge * c,
            eigenvalues: self.eigenvalues.iter().map(|l| l * c).collect(),
            eigenvectors: self.eigenvectors.clone(),
        })
    }

    /// Principal square root `C^{1/2}`.
    pub fn sqrt(&self) -> Matrix {
        spectral_map(&self.eigenvectors, &self.eigenvalues, f64::sqrt)
    }

    /// Solves `C X = B` by Cholesky.
    pub fn solve(&self, b: &Matrix) -> Result<Matrix> {
        if b.nrows() != self.dim() {
            return Err(Error::dims("covariance solve", self.dim(), b.nrows()));
        }
        let chol =
            Cholesky::new(self.matrix.clone()).ok_or_else(|| Error::Numeric("Cholesky factorization failed".into()))?;
        Ok(chol.solve(b))
    }
}

fn sorted_eigen(sym: &Matrix) -> (Vec<f64>, Matrix) {
    let eig = SymmetricEigen::new(sym.clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = Matrix::from_fn(sym.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// `Q f(Λ) Qᵀ`, symmetrized.
fn spectral_map(q: &Matrix, lambda: &[f64], f: impl Fn(f64) -> f64) -> Matrix {
    let mut scaled = q.clone();
    for (j, &l) in lambda.iter().enumerate() {
        let s = f(l);
        scaled.column_mut(j).scale_mut(s);
    }
    let m = scaled * q.transpose();
    (&m + m.transpose()) * 0.5
}

/// `C^{-1/2}` and `C^{-1}` from one eigendecomposition.
#[derive(Debug, Clone)]
pub struct WhiteningTransform {
    inv_sqrt: Matrix,
    inv: Matrix,
    eigen_floor: f64,
    clamped: usize,
}

impl WhiteningTransform {
    pub fn identity(dim: usize) -> Self {
        Self {
            inv_sqrt: Matrix::identity(dim, dim),
            inv: Matrix::identity(dim, dim),
            eigen_floor: 1.0,
            clamped: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.inv.nrows()
    }

    pub fn inv_sqrt(&self) -> &Matrix {
        &self.inv_sqrt
    }

    pub fn inv(&self) -> &Matrix {
        &self.inv
    }

    /// Smallest eigenvalue actually used.
    pub fn eigen_floor(&self) -> f64 {
        self.eigen_floor
    }

    /// Number of eigenvalues raised to the floor (clamp mode only).
    pub fn clamped(&self) -> usize {
        self.clamped
    }

    /// Image of `keys` in whitening space, `C^{-1/2} K`.
    pub fn whiten(&self, keys: &Matrix) -> Result<Matrix> {
        if keys.nrows() != self.dim() {
            return Err(Error::dims("whitening", self.dim(), keys.nrows()));
        }
        Ok(&self.inv_sqrt * keys)
    }

    /// `C^{-1} K`.
    pub fn apply_inv(&self, keys: &Matrix) -> Result<Matrix> {
        if keys.nrows() != self.dim() {
            return Err(Error::dims("inverse covariance", self.dim(), keys.nrows()));
        }
        Ok(&self.inv * keys)
    }

    pub fn apply_inv_vec(&self, k: &Vector) -> Result<Vector> {
        if k.len() != self.dim() {
            return Err(Error::dims("inverse covariance", self.dim(), k.len()));
        }
        Ok(&self.inv * k)
    }
}

/// Non-centered, unnormalized covariance `C = K Kᵀ` of the key columns.
pub fn covariance(keys: &Matrix) -> Result<SpdMatrix> {
    ensure_finite(keys, "key matrix")?;
    SpdMatrix::new(keys * keys.transpose())
}

/// Whitening transform of `c`. Eigenvalues at or below `eps · λ_max` are an
/// error under [`EigenPolicy::Strict`] and floored under
/// [`EigenPolicy::Clamp`].
pub fn inv_sqrt(c: &SpdMatrix, eps: f64, policy: EigenPolicy) -> Result<WhiteningTransform> {
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::InvalidInput(format!("eps must be >= 0, got {eps}")));
    }
    let dim = c.dim();
    let lambda_max = c.eigenvalues[dim - 1];
    let threshold = eps * lambda_max;
    let mut values = c.eigenvalues.clone();
    let mut clamped = 0;
    for (index, v) in values.iter_mut().enumerate() {
        if *v <= threshold {
            match policy {
                EigenPolicy::Strict => {
                    return Err(Error::SingularCovariance {
                        index,
                        value: *v,
                        threshold,
                    })
                }
                EigenPolicy::Clamp => {
                    if threshold <= 0.0 {
                        return Err(Error::SingularCovariance {
                            index,
                            value: *v,
                            threshold,
                        });
                    }
                    *v = threshold;
                    clamped += 1;
                }
            }
        }
    }
    let inv_sqrt = spectral_map(&c.eigenvectors, &values, |l| 1.0 / l.sqrt());
    let inv = spectral_map(&c.eigenvectors, &values, |l| 1.0 / l);
    Ok(WhiteningTransform {
        inv_sqrt,
        inv,
        eigen_floor: values[0],
        clamped,
    })
}

/// Least-squares associative memory `W = V Kᵀ (K Kᵀ)^{-1}`, the solution of
/// `W K Kᵀ = V Kᵀ`.
///
/// Under [`EigenPolicy::Strict`] a covariance that needed a ridge is
/// rejected; under [`EigenPolicy::Clamp`] the ridged covariance is used.
pub fn fit_memory(keys: &Matrix, values: &Matrix, policy: EigenPolicy) -> Result<Matrix> {
    ensure_finite(values, "value matrix")?;
    if keys.ncols() != values.ncols() {
        return Err(Error::dims("fit_memory columns", keys.ncols(), values.ncols()));
    }
    let cov = covariance(keys)?;
    if policy == EigenPolicy::Strict && cov.ridge() > 0.0 {
        return Err(Error::SingularCovariance {
            index: 0,
            value: cov.eigenvalues()[0] - cov.ridge(),
            threshold: cov.eigenvalues()[cov.dim() - 1] / MAX_CONDITION,
        });
    }
    // C Wᵀ = K Vᵀ
    let rhs = keys * values.transpose();
    Ok(cov.solve(&rhs)?.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel_frob(a: &Matrix, b: &Matrix) -> f64 {
        (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
    }

    fn lcg_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        Matrix::from_fn(rows, cols, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
    }

    #[test]
    fn covariance_of_identity() {
        let c = covariance(&Matrix::identity(2, 2)).unwrap();
        assert_eq!(c.matrix(), &Matrix::identity(2, 2));
        assert_eq!(c.ridge(), 0.0);
    }

    #[test]
    fn covariance_of_single_column_is_ridged_outer_product() {
        let k = Matrix::from_column_slice(2, 1, &[3.0, 4.0]);
        let c = covariance(&k).unwrap();
        // rank one, so the ridge policy kicks in
        assert!(c.ridge() > 0.0);
        assert!((c.ridge() - 1e-8 * 25.0 / 2.0).abs() < 1e-20);
        let raw = c.matrix() - Matrix::identity(2, 2) * c.ridge();
        let expected = Matrix::from_row_slice(2, 2, &[9.0, 12.0, 12.0, 16.0]);
        assert!((raw - expected).amax() < 1e-12);
    }

    #[test]
    fn covariance_matches_triple_loop() {
        let k = lcg_matrix(8, 32, 3);
        let c = covariance(&k).unwrap();
        let mut brute = Matrix::zeros(8, 8);
        for i in 0..8 {
            for j in 0..8 {
                let mut s = 0.0;
                for n in 0..32 {
                    s += k[(i, n)] * k[(j, n)];
                }
                brute[(i, j)] = s;
            }
        }
        assert!(rel_frob(c.matrix(), &brute) <= 1e-12);
    }

    #[test]
    fn covariance_rejects_empty_and_nan() {
        assert!(covariance(&Matrix::zeros(0, 0)).is_err());
        let mut k = Matrix::identity(2, 2);
        k[(1, 0)] = f64::NAN;
        assert!(matches!(covariance(&k), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn asymmetric_input_rejected() {
        let m = Matrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 2.0]);
        assert!(SpdMatrix::new(m).is_err());
    }

    #[test]
    fn inv_sqrt_identity_and_diagonal() {
        let wt = inv_sqrt(&SpdMatrix::identity(3), DEFAULT_EIGEN_EPS, EigenPolicy::Strict).unwrap();
        assert!((wt.inv_sqrt() - Matrix::identity(3, 3)).amax() < 1e-15);

        let c = SpdMatrix::new(Matrix::from_diagonal(&Vector::from_vec(vec![4.0, 1.0]))).unwrap();
        let wt = inv_sqrt(&c, DEFAULT_EIGEN_EPS, EigenPolicy::Strict).unwrap();
        let expected = Matrix::from_diagonal(&Vector::from_vec(vec![0.5, 1.0]));
        assert!((wt.inv_sqrt() - expected).amax() < 1e-15);
        assert!((wt.inv() - Matrix::from_diagonal(&Vector::from_vec(vec![0.25, 1.0]))).amax() < 1e-15);
        assert_eq!(wt.eigen_floor(), 1.0);
    }

    #[test]
    fn inv_sqrt_reconstruction_random_spd() {
        let a = lcg_matrix(16, 40, 11);
        let c = covariance(&a).unwrap();
        let wt = inv_sqrt(&c, DEFAULT_EIGEN_EPS, EigenPolicy::Strict).unwrap();
        let m = wt.inv_sqrt();
        let recon = m * c.matrix() * m;
        assert!((recon - Matrix::identity(16, 16)).norm() < 1e-8);
        assert!(rel_frob(&(m * m), wt.inv()) < 1e-8);
        assert!((m - m.transpose()).amax() == 0.0);
    }

    #[test]
    fn strict_mode_names_offending_eigenvalue() {
        let c = SpdMatrix::new(Matrix::from_diagonal(&Vector::from_vec(vec![1.0, 1e-6, 2.0]))).unwrap();
        match inv_sqrt(&c, 1e-3, EigenPolicy::Strict) {
            Err(Error::SingularCovariance { index, value, .. }) => {
                assert_eq!(index, 0);
                assert_eq!(value, 1e-6);
            }
            other => panic!("expected singular error, got {other:?}"),
        }
        let wt = inv_sqrt(&c, 1e-3, EigenPolicy::Clamp).unwrap();
        assert_eq!(wt.clamped(), 1);
        assert!((wt.eigen_floor() - 2e-3).abs() < 1e-15);
    }

    #[test]
    fn fit_memory_identity_keys() {
        let v = lcg_matrix(3, 4, 5);
        let w = fit_memory(&Matrix::identity(4, 4), &v, EigenPolicy::Strict).unwrap();
        assert!((w - &v).amax() < 1e-14);
    }

    #[test]
    fn fit_memory_recovers_planted_map() {
        let k = lcg_matrix(8, 32, 21);
        let w_star = lcg_matrix(5, 8, 22);
        let v = &w_star * &k;
        let w = fit_memory(&k, &v, EigenPolicy::Strict).unwrap();
        assert!(rel_frob(&w, &w_star) <= 1e-10);
    }

    #[test]
    fn fit_memory_is_stationary() {
        let k = lcg_matrix(8, 32, 31);
        let v = lcg_matrix(6, 32, 32);
        let w = fit_memory(&k, &v, EigenPolicy::Strict).unwrap();
        let vkt = &v * k.transpose();
        let grad = (&w * &k * k.transpose() - &vkt) * 2.0;
        assert!(grad.norm() <= 1e-8 * vkt.norm());
    }

    #[test]
    fn fit_memory_errors() {
        let k = lcg_matrix(8, 32, 1);
        let v = lcg_matrix(2, 31, 2);
        assert!(matches!(
            fit_memory(&k, &v, EigenPolicy::Strict),
            Err(Error::DimensionMismatch { .. })
        ));
        // fewer samples than dimensions: rank deficient
        let k = lcg_matrix(8, 4, 1);
        let v = lcg_matrix(2, 4, 2);
        assert!(matches!(
            fit_memory(&k, &v, EigenPolicy::Strict),
            Err(Error::SingularCovariance { .. })
        ));
        assert!(fit_memory(&k, &v, EigenPolicy::Clamp).is_ok());
    }
}
