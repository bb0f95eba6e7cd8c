#![allow(dead_code)]

use ksup::{Matrix, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ 0x005e_ed0f_7e57)
}

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize) -> Vector {
    Vector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

pub fn rel_frob(a: &Matrix, b: &Matrix) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

/// `Σ_n K[i,n] K[j,n]` by explicit loops.
pub fn brute_gram(k: &Matrix) -> Matrix {
    let d = k.nrows();
    let mut c = Matrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            let mut s = 0.0;
            for n in 0..k.ncols() {
                s += k[(i, n)] * k[(j, n)];
            }
            c[(i, j)] = s;
        }
    }
    c
}

/// Equality-constrained least squares solved directly from its KKT system:
///
/// ```text
/// argmin_Ŵ ‖Ŵ K − V‖_F²  s.t.  Ŵ k_e = v_e
/// ```
///
/// Rows of Ŵ decouple. For row r with multiplier μ_r the stationarity and
/// feasibility conditions are
///
/// ```text
/// [ K Kᵀ   −k_e ] [ ŵ_rᵀ ]   [ K V_rᵀ ]
/// [ k_eᵀ     0  ] [ μ_r  ] = [ v_e[r] ]
/// ```
///
/// solved for all rows at once with a dense LU.
pub fn kkt_edit(k: &Matrix, v: &Matrix, k_e: &Vector, v_e: &Vector) -> Matrix {
    let d = k.nrows();
    let dv = v.nrows();
    let gram = brute_gram(k);
    let mut system = Matrix::zeros(d + 1, d + 1);
    system.view_mut((0, 0), (d, d)).copy_from(&gram);
    for i in 0..d {
        system[(i, d)] = -k_e[i];
        system[(d, i)] = k_e[i];
    }
    let mut rhs = Matrix::zeros(d + 1, dv);
    let kv = k * v.transpose();
    rhs.view_mut((0, 0), (d, dv)).copy_from(&kv);
    for r in 0..dv {
        rhs[(d, r)] = v_e[r];
    }
    let sol = system.lu().solve(&rhs).expect("KKT system is nonsingular");
    sol.view((0, 0), (d, dv)).transpose()
}
