//! Synthetic experiment protocols shared by the CLI, the benches and the
//! acceptance suite. Seed sweeps are the data-parallel axis.

use serde::Serialize;

use crate::editor::lifelong_edit;
use crate::error::Result;
use crate::interference::{accumulation_curve, p_matrix_with, AccumulationPoint, PForm};
use crate::linalg::{self, EigenPolicy};
use crate::par::Exec;
use crate::stats::{excess_kurtosis, linear_fit, LinearFit, SampleSet};
use crate::synth::{gen_covariance, gen_superposed_keys, GenConfig, LifelongScenario, Regime};

#[derive(Debug, Clone)]
pub struct AccumulationTrial {
    pub curve: Vec<AccumulationPoint>,
    /// Least-squares line of `‖Δ_o‖_F` against the number of edits.
    pub fit: LinearFit,
}

pub fn accumulation_trial(
    cfg: &GenConfig,
    regime: Regime,
    n_edits: usize,
    n_probes: usize,
    value_scale: f64,
) -> Result<AccumulationTrial> {
    let sc = LifelongScenario::build(cfg, regime, n_edits, n_probes, value_scale)?;
    let log = lifelong_edit(&sc.memory, &sc.edits)?;
    let curve = accumulation_curve(&log, sc.memory.whitening(), &sc.probes)?;
    let xs: Vec<f64> = curve.iter().map(|p| p.n as f64).collect();
    let ys: Vec<f64> = curve.iter().map(|p| p.frob_delta_o).collect();
    let fit = linear_fit(&xs, &ys)?;
    Ok(AccumulationTrial { curve, fit })
}

/// Excess kurtosis of the off-diagonal P entries for `m` superposed keys.
pub fn superposed_kurtosis(cfg: &GenConfig, m: usize) -> Result<f64> {
    let cov = gen_covariance(cfg)?;
    let wt = linalg::inv_sqrt(&cov, linalg::DEFAULT_EIGEN_EPS, EigenPolicy::Strict)?;
    let keys = gen_superposed_keys(cfg, &cov, m)?;
    // seeds are already spread across threads; keep the inner loop serial
    let p = p_matrix_with(&wt, &keys, PForm::Inverse, Exec::Serial)?;
    excess_kurtosis(&SampleSet::new(p.off_diagonal())?)
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalingPoint {
    pub d_k: usize,
    pub mean_kurtosis: f64,
    pub per_seed: Vec<f64>,
}

/// Seed-averaged kurtosis for each key dimension with a fixed feature count.
pub fn scaling_family(
    dims: &[usize],
    n_features: usize,
    eps: f64,
    seeds: &[u64],
    exec: Exec,
) -> Result<Vec<ScalingPoint>> {
    dims.iter()
        .map(|&d_k| {
            let per_seed = exec.try_map(seeds.len(), |s| {
                let cfg = GenConfig::new(seeds[s], d_k, 1, n_features, eps);
                superposed_kurtosis(&cfg, n_features)
            })?;
            let mean_kurtosis = per_seed.iter().sum::<f64>() / per_seed.len() as f64;
            Ok(ScalingPoint {
                d_k,
                mean_kurtosis,
                per_seed,
            })
        })
        .collect()
}
