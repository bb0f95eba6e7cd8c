mod common;

use common::{gaussian, rng};
use ksup::linalg::DEFAULT_EIGEN_EPS;
use ksup::stats::{default_convergence_steps, kde_with, silverman_bandwidth};
use ksup::synth::{gen_covariance, gen_orthogonal_keys, gen_superposed_keys};
use ksup::{
    activation_angles, excess_kurtosis, inv_sqrt, kde, m_convergence, p_matrix, whitening_angles, EigenPolicy, Error,
    Exec, GenConfig, Matrix, SampleSet, WhiteningTransform,
};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Cauchy, StandardNormal};

/// Two-pass kurtosis in compensated summation, independent of the library.
fn oracle_kurtosis(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mut sum = 0.0;
    let mut c = 0.0;
    for &x in xs {
        let y = x - c;
        let t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    let mean = sum / n;
    let (mut m2, mut m4) = (0.0, 0.0);
    for &x in xs {
        let d2 = (x - mean) * (x - mean);
        m2 += d2;
        m4 += d2 * d2;
    }
    (m4 / n) / (m2 / n).powi(2) - 3.0
}

#[test]
fn kurtosis_of_two_point_mass() {
    let xs: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { -1.0 } else { 1.0 }).collect();
    assert_eq!(excess_kurtosis(&SampleSet::new(xs).unwrap()).unwrap(), -2.0);
}

#[test]
fn kurtosis_of_large_normal_sample() {
    let mut r = rng(42);
    let xs: Vec<f64> = (0..1_000_000).map(|_| r.sample(StandardNormal)).collect();
    let k = excess_kurtosis(&SampleSet::new(xs.clone()).unwrap()).unwrap();
    assert!(k.abs() <= 0.02, "{k}");
    assert!((k - oracle_kurtosis(&xs)).abs() <= 1e-9);
}

#[test]
fn kurtosis_of_large_uniform_sample() {
    let mut r = rng(43);
    let xs: Vec<f64> = (0..1_000_000).map(|_| r.random::<f64>()).collect();
    let k = excess_kurtosis(&SampleSet::new(xs).unwrap()).unwrap();
    assert!((k + 1.2).abs() <= 0.01, "{k}");
}

#[test]
fn kurtosis_rejects_small_or_constant_samples() {
    assert!(excess_kurtosis(&SampleSet::new(vec![1.0, 2.0, 3.0]).unwrap()).is_err());
    assert!(matches!(
        excess_kurtosis(&SampleSet::new(vec![0.5; 10]).unwrap()),
        Err(Error::Degenerate(_))
    ));
    assert!(SampleSet::new(vec![1.0]).is_err());
    assert!(SampleSet::new(vec![1.0, f64::NAN]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn kurtosis_affine_invariant(
        xs in prop::collection::vec(-10.0f64..10.0, 8..200),
        a in prop_oneof![-100.0f64..-0.01, 0.01f64..100.0],
        b in -1e3f64..1e3,
    ) {
        let s = SampleSet::new(xs.clone()).unwrap();
        prop_assume!(excess_kurtosis(&s).is_ok());
        let k = excess_kurtosis(&s).unwrap();
        let shifted = SampleSet::new(xs.iter().map(|x| a * x + b).collect()).unwrap();
        let ks = excess_kurtosis(&shifted).unwrap();
        prop_assert!((k - ks).abs() <= 1e-9 * k.abs().max(1.0), "{} vs {}", k, ks);
    }

    #[test]
    fn kde_integrates_to_one(seed in 0u64..500, n in 100usize..600, heavy in any::<bool>()) {
        let mut r = rng(seed);
        let xs: Vec<f64> = (0..n)
            .map(|_| if heavy { r.sample(Cauchy::new(0.0, 1.0).unwrap()) } else { r.sample(StandardNormal) })
            .collect();
        let curve = kde(&SampleSet::new(xs).unwrap()).unwrap();
        let area = curve.integral();
        prop_assert!((0.98..=1.02).contains(&area), "{}", area);
        prop_assert!(curve.density.iter().all(|&d| d >= 0.0));
    }
}

#[test]
fn kde_grid_shape() {
    let s = SampleSet::new(vec![-1.0, 0.0, 0.5, 2.0]).unwrap();
    let c = kde(&s).unwrap();
    let h = silverman_bandwidth(&s).unwrap();
    assert_eq!(c.grid.len(), 512);
    assert_eq!(c.density.len(), 512);
    assert_eq!(c.bandwidth, h);
    assert!((c.grid[0] - (-1.0 - 3.0 * h)).abs() <= 1e-12);
    assert!((c.grid[511] - (2.0 + 3.0 * h)).abs() <= 1e-12);
}

#[test]
fn kde_matches_pointwise_estimate_on_smooth_data() {
    let mut r = rng(6);
    let xs: Vec<f64> = (0..400).map(|_| r.sample(StandardNormal)).collect();
    let s = SampleSet::new(xs.clone()).unwrap();
    let c = kde(&s).unwrap();
    let h = c.bandwidth;
    assert!(c.step() < 0.1 * h);
    let peak = c.density.iter().cloned().fold(0.0, f64::max);
    for (x, d) in c.grid.iter().zip(&c.density).skip(1).take(510) {
        let pointwise = xs.iter().map(|xi| (-0.5 * ((x - xi) / h).powi(2)).exp()).sum::<f64>()
            / (xs.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
        assert!((d - pointwise).abs() <= 1e-3 * peak, "at {x}: {d} vs {pointwise}");
    }
}

#[test]
fn kde_degenerate_sample() {
    assert!(matches!(
        kde(&SampleSet::new(vec![0.0, 0.0]).unwrap()),
        Err(Error::Degenerate(_))
    ));
}

#[test]
fn kde_single_mode_peaks_at_mean() {
    // symmetric sample around the mean
    let mut r = rng(7);
    let mut xs = Vec::new();
    for _ in 0..2000 {
        let z: f64 = r.sample(StandardNormal);
        xs.push(3.7 + z);
        xs.push(3.7 - z);
    }
    let s = SampleSet::new(xs).unwrap();
    let c = kde(&s).unwrap();
    assert!(
        (c.argmax() - s.mean()).abs() <= c.step(),
        "{} vs {}",
        c.argmax(),
        s.mean()
    );
}

#[test]
fn kde_mixture_peak_matches_histogram() {
    let mut r = rng(8);
    let cauchy = Cauchy::new(0.0, 0.5).unwrap();
    let xs: Vec<f64> = (0..5000)
        .map(|i| {
            if i % 20 == 0 {
                r.sample(cauchy)
            } else {
                1e-3 * r.sample::<f64, _>(StandardNormal)
            }
        })
        .collect();
    let c = kde(&SampleSet::new(xs.clone()).unwrap()).unwrap();
    let step = c.step();

    // histogram over the same grid, one bin per grid point
    let mut counts = vec![0usize; c.grid.len()];
    for &x in &xs {
        let b = ((x - c.grid[0]) / step).round();
        if b >= 0.0 && (b as usize) < counts.len() {
            counts[b as usize] += 1;
        }
    }
    let peak_bin = (0..counts.len()).max_by_key(|&i| counts[i]).unwrap();
    let hist_peak = c.grid[peak_bin];

    assert!(c.argmax().abs() <= step, "kde peak {}", c.argmax());
    assert!(hist_peak.abs() <= step, "histogram peak {hist_peak}");
    assert!((c.argmax() - hist_peak).abs() <= step);
}

#[test]
fn kde_parallel_matches_serial() {
    let mut r = rng(9);
    let xs: Vec<f64> = (0..3000).map(|_| r.sample(StandardNormal)).collect();
    let s = SampleSet::new(xs).unwrap();
    assert_eq!(
        kde_with(&s, Exec::Serial).unwrap(),
        kde_with(&s, Exec::Parallel).unwrap()
    );
}

fn random_wt(seed: u64, d: usize) -> WhiteningTransform {
    let c = ksup::covariance(&gaussian(&mut rng(seed), d, 4 * d)).unwrap();
    inv_sqrt(&c, DEFAULT_EIGEN_EPS, EigenPolicy::Strict).unwrap()
}

#[test]
fn angles_are_symmetric_and_counted_per_ordered_pair() {
    let wt = random_wt(10, 16);
    let keys = gaussian(&mut rng(11), 16, 25);
    let a = whitening_angles(&wt, &keys).unwrap();
    assert_eq!(a.len(), 25 * 24);
    let m = 25;
    // row-major over i, skipping j = i
    let at = |i: usize, j: usize| a.values()[i * (m - 1) + if j < i { j } else { j - 1 }];
    for i in 0..m {
        for j in 0..m {
            if i != j {
                assert!((at(i, j) - at(j, i)).abs() <= 1e-12);
                assert!((0.0..=180.0).contains(&at(i, j)));
            }
        }
    }
}

#[test]
fn identity_transform_matches_activation_angles() {
    let keys = gaussian(&mut rng(12), 9, 14);
    let a = whitening_angles(&WhiteningTransform::identity(9), &keys).unwrap();
    let b = activation_angles(&keys).unwrap();
    assert_eq!(a.values(), b.values());
}

#[test]
fn angle_edge_cases() {
    let e = Matrix::from_column_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
    assert!(activation_angles(&e).unwrap().values().iter().all(|&x| x == 90.0));
    let dup = Matrix::from_column_slice(3, 2, &[0.3, -1.2, 2.0, 0.3, -1.2, 2.0]);
    assert!(activation_angles(&dup).unwrap().values().iter().all(|&x| x == 0.0));
    let opp = Matrix::from_column_slice(3, 2, &[0.3, -1.2, 2.0, -0.3, 1.2, -2.0]);
    assert!(activation_angles(&opp).unwrap().values().iter().all(|&x| x == 180.0));
    let zero = Matrix::from_column_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
    assert!(activation_angles(&zero).is_err());
}

#[test]
fn whitened_orthogonal_keys_meet_at_right_angles() {
    let cfg = GenConfig::new(13, 32, 4, 32, 0.0);
    let c = gen_covariance(&cfg).unwrap();
    let wt = inv_sqrt(&c, DEFAULT_EIGEN_EPS, EigenPolicy::Strict).unwrap();
    let k = gen_orthogonal_keys(&cfg, &c, 32).unwrap();
    let a = whitening_angles(&wt, &k).unwrap();
    assert!(a.values().iter().all(|&x| (x - 90.0).abs() <= 1e-6));
}

#[test]
fn off_diagonal_count() {
    let wt = random_wt(14, 8);
    for m in [2, 3, 17] {
        let p = p_matrix(&wt, &gaussian(&mut rng(m as u64), 8, m)).unwrap();
        assert_eq!(p.off_diagonal().len(), m * m - m);
    }
}

#[test]
fn convergence_single_step_matches_full_p() {
    let cfg = GenConfig::new(15, 32, 1, 48, 0.3);
    let c = gen_covariance(&cfg).unwrap();
    let wt = inv_sqrt(&c, DEFAULT_EIGEN_EPS, EigenPolicy::Strict).unwrap();
    let k = gen_superposed_keys(&cfg, &c, 48).unwrap();
    let rows = m_convergence(&wt, &k, &[48]).unwrap();
    let full = excess_kurtosis(&SampleSet::new(p_matrix(&wt, &k).unwrap().off_diagonal()).unwrap()).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].m, 48);
    assert_eq!(*rows[0].kurtosis.as_ref().unwrap(), full);
}

#[test]
fn convergence_reports_degenerate_rows() {
    let cfg = GenConfig::new(16, 64, 1, 64, 0.0);
    let c = gen_covariance(&cfg).unwrap();
    let wt = inv_sqrt(&c, DEFAULT_EIGEN_EPS, EigenPolicy::Strict).unwrap();
    let k = gen_orthogonal_keys(&cfg, &c, 64).unwrap();
    let rows = m_convergence(&wt, &k, &[16, 32, 64]).unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| matches!(r.kurtosis, Err(Error::Degenerate(_)))));
}

#[test]
fn convergence_rejects_bad_steps() {
    let wt = random_wt(17, 8);
    let k = gaussian(&mut rng(18), 8, 20);
    assert!(m_convergence(&wt, &k, &[1, 4]).is_err());
    assert!(m_convergence(&wt, &k, &[8, 4]).is_err());
    assert!(m_convergence(&wt, &k, &[4, 21]).is_err());
    assert!(m_convergence(&wt, &k, &[]).is_err());
}

#[test]
fn convergence_gap_shrinks() {
    let steps = default_convergence_steps();
    let mut gaps = vec![0.0; steps.len()];
    let seeds = 10;
    for seed in 0..seeds {
        let cfg = GenConfig::new(seed, 64, 1, 128, 0.3);
        let c = gen_covariance(&cfg).unwrap();
        let wt = inv_sqrt(&c, DEFAULT_EIGEN_EPS, EigenPolicy::Strict).unwrap();
        let k = gen_superposed_keys(&cfg, &c, 128).unwrap();
        let rows = m_convergence(&wt, &k, &steps).unwrap();
        for i in 1..rows.len() {
            let d = rows[i].kurtosis.as_ref().unwrap() - rows[i - 1].kurtosis.as_ref().unwrap();
            gaps[i] += d.abs() / seeds as f64;
        }
    }
    assert!(gaps[7] < gaps[1], "gap(128) = {} vs gap(32) = {}", gaps[7], gaps[1]);
}
