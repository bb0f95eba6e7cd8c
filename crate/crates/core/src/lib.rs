//! Closed-form knowledge editing in linear associative memories, its
//! lifelong extension, and the superposition statistics that govern the
//! interference between edits.
//!
//! Module map:
//!
//! - [`linalg`]: covariance, SPD whitening, least-squares memory fit
//! - [`editor`]: rank-one edits and the lifelong edit log
//! - [`interference`]: superposition coefficients, P matrix, `Δ_o` / `Δ_e`
//! - [`stats`]: kurtosis, KDE, angles, convergence, kurtosis tables
//! - [`synth`]: seeded generators for every regime
//! - [`dump`]: the KSUP1 matrix container
//! - [`experiments`]: synthetic protocols built from the above
//! - [`par`]: serial / parallel execution policy

pub mod csvfmt;
pub mod dump;
pub mod editor;
pub mod error;
pub mod experiments;
pub mod interference;
pub mod linalg;
pub mod par;
pub mod stats;
pub mod synth;

pub use editor::{compute_lambda, lifelong_edit, single_edit, AssociativeMemory, EditLog, EditRecord, EditRequest};
pub use error::{Error, Result};
pub use interference::{
    accumulation_curve, delta_edited, delta_original, interference_report, p_coeff, p_coeff_with, p_matrix,
    p_matrix_with, AccumulationPoint, InterferenceReport, PForm, PMatrix,
};
pub use linalg::{covariance, fit_memory, inv_sqrt, EigenPolicy, Matrix, SpdMatrix, Vector, WhiteningTransform};
pub use par::Exec;
pub use stats::{
    activation_angles, excess_kurtosis, kde, m_convergence, scaling_report, whitening_angles, DensityCurve,
    LayerKurtosisRow, LayerKurtosisTable, SampleSet,
};
pub use synth::{GenConfig, Regime, Spectrum};
