mod common;

use std::sync::Arc;

use common::{gaussian, gaussian_vec, kkt_edit, rel_frob, rng};
use ksup::linalg::DEFAULT_EIGEN_EPS;
use ksup::synth::{gen_covariance, gen_edit_stream, gen_initial_weights, gen_superposed_keys};
use ksup::{
    compute_lambda, covariance, inv_sqrt, lifelong_edit, single_edit, AssociativeMemory, EditRequest, EigenPolicy,
    GenConfig, Matrix,
};

fn fitted_instance(seed: u64, dk: usize, dv: usize, n: usize) -> (Matrix, Matrix, AssociativeMemory) {
    let mut r = rng(seed);
    let k = gaussian(&mut r, dk, n);
    let v = gaussian(&mut r, dv, n);
    let mem = AssociativeMemory::fit(&k, &v, EigenPolicy::Strict).unwrap();
    (k, v, mem)
}

fn synthetic_memory(cfg: &GenConfig) -> AssociativeMemory {
    let cov = gen_covariance(cfg).unwrap();
    let w0 = gen_initial_weights(cfg, 1.0).unwrap();
    AssociativeMemory::with_covariance(w0, cov, DEFAULT_EIGEN_EPS, EigenPolicy::Strict).unwrap()
}

#[test]
fn lambda_algebraic_identity() {
    for seed in 0..10 {
        let (_, _, mem) = fitted_instance(seed, 8, 5, 32);
        let mut r = rng(100 + seed);
        let edit = EditRequest::new(gaussian_vec(&mut r, 8), gaussian_vec(&mut r, 5)).unwrap();
        let lambda = compute_lambda(&mem, &edit).unwrap();
        let a = mem.whitening().inv() * edit.key();
        let recon = &lambda * a.dot(edit.key()) + mem.weights() * edit.key();
        assert!((recon - edit.value()).norm() <= 1e-10 * (1.0 + edit.value().norm()));
    }
}

#[test]
fn single_edit_matches_kkt_solution() {
    for seed in 0..20 {
        let (k, v, mem) = fitted_instance(seed, 8, 4, 32);
        let mut r = rng(500 + seed);
        let ke = gaussian_vec(&mut r, 8);
        let ve = gaussian_vec(&mut r, 4);
        let edited = single_edit(&mem, &EditRequest::new(ke.clone(), ve.clone()).unwrap()).unwrap();
        let oracle = kkt_edit(&k, &v, &ke, &ve);
        let err = rel_frob(edited.weights(), &oracle);
        assert!(err <= 1e-8, "seed {seed}: {err:e}");
    }
}

#[test]
fn single_edit_constraint_and_rank_one() {
    for seed in 0..20 {
        let (_, _, mem) = fitted_instance(seed, 12, 6, 48);
        let mut r = rng(900 + seed);
        let ke = gaussian_vec(&mut r, 12);
        let ve = gaussian_vec(&mut r, 6) * 3.0;
        let edited = single_edit(&mem, &EditRequest::new(ke.clone(), ve.clone()).unwrap()).unwrap();
        let w_hat = edited.weights();
        assert!((w_hat * &ke - &ve).norm() <= 1e-9 * (1.0 + ve.norm()));

        let diff = w_hat - mem.weights();
        let mut sv: Vec<f64> = diff.clone().svd(false, false).singular_values.iter().copied().collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        assert!(sv[1] <= 1e-10 * sv[0], "seed {seed}: {:e} vs {:e}", sv[1], sv[0]);

        // every row of the update is a multiple of (C⁻¹k_e)ᵀ
        let dir = mem.whitening().inv() * &ke;
        let unit = &dir / dir.norm();
        for row in diff.row_iter() {
            let row = row.transpose();
            let resid = &row - &unit * unit.dot(&row);
            assert!(resid.norm() <= 1e-10 * (1.0 + row.norm()));
        }
    }
}

#[test]
fn one_element_lifelong_equals_single_edit() {
    let (_, _, mem) = fitted_instance(3, 6, 3, 24);
    let mut r = rng(33);
    let e = EditRequest::new(gaussian_vec(&mut r, 6), gaussian_vec(&mut r, 3)).unwrap();
    let log = lifelong_edit(&mem, std::slice::from_ref(&e)).unwrap();
    let single = single_edit(&mem, &e).unwrap();
    assert_eq!(&log.final_weights, single.weights());
    assert_eq!(&log.initial_weights, mem.weights());
    assert_eq!(log.len(), 1);
}

#[test]
fn lifelong_equals_fold_of_single_edits() {
    let cfg = GenConfig::new(17, 32, 8, 16, 0.3);
    let mem = synthetic_memory(&cfg);
    let cov = gen_covariance(&cfg).unwrap();
    let keys = gen_superposed_keys(&cfg, &cov, 16).unwrap();
    let edits = gen_edit_stream(&cfg, &keys, 1.0).unwrap();
    let log = lifelong_edit(&mem, &edits).unwrap();
    let folded = edits.iter().fold(mem.clone(), |m, e| single_edit(&m, e).unwrap());
    assert!(rel_frob(&log.final_weights, folded.weights()) <= 1e-12);
    assert!(Arc::ptr_eq(folded.cov(), mem.cov()));
}

#[test]
fn expansion_identity_up_to_256_edits() {
    let cfg = GenConfig::new(5, 32, 8, 256, 0.3);
    let mem = synthetic_memory(&cfg);
    let cov = gen_covariance(&cfg).unwrap();
    let keys = gen_superposed_keys(&cfg, &cov, 256).unwrap();
    let edits = gen_edit_stream(&cfg, &keys, 1.0).unwrap();
    let log = lifelong_edit(&mem, &edits).unwrap();
    let wt = mem.whitening();
    let mut expanded = log.initial_weights.clone();
    for rec in &log.records {
        let a = wt.inv() * &rec.key;
        expanded += &rec.lambda * a.transpose();
        // recorded multipliers reproduce the recorded residuals
        let lhs = &rec.lambda * a.dot(&rec.key);
        assert!((lhs - &rec.delta_v).norm() <= 1e-10 * rec.delta_v.norm().max(1e-300));
    }
    let resid = (&log.final_weights - &expanded).norm();
    assert!(resid <= 1e-9 * log.final_weights.norm(), "{resid:e}");

    // intermediate weights rebuilt from the log
    let w_mid = log.weights_after(100, wt).unwrap();
    let folded = edits[..100]
        .iter()
        .fold(mem.clone(), |m, e| single_edit(&m, e).unwrap());
    assert!(rel_frob(&w_mid, folded.weights()) <= 1e-9);
}

#[test]
fn identical_keys_are_not_deduplicated() {
    let cfg = GenConfig::new(2, 4, 2, 2, 0.5);
    let mem = synthetic_memory(&cfg);
    let k = gaussian_vec(&mut rng(1), 4);
    let a = EditRequest::new(k.clone(), gaussian_vec(&mut rng(2), 2)).unwrap();
    let b = EditRequest::new(k.clone(), gaussian_vec(&mut rng(3), 2)).unwrap();
    let log = lifelong_edit(&mem, &[a, b.clone()]).unwrap();
    assert_eq!(log.len(), 2);
    // the later value wins
    assert!((&log.final_weights * &k - b.value()).norm() < 1e-10);
}

#[test]
fn memory_rejects_mismatched_covariance() {
    let c = covariance(&Matrix::identity(3, 3)).unwrap();
    let wt = inv_sqrt(&c, DEFAULT_EIGEN_EPS, EigenPolicy::Strict).unwrap();
    assert!(AssociativeMemory::new(Matrix::zeros(2, 4), Arc::new(c), Arc::new(wt)).is_err());
}
