//! Seeded synthetic covariances, keys, values and edit streams.
//!
//! Every generator is a pure function of its [`GenConfig`]. Randomness comes
//! from ChaCha8 seeded with `cfg.seed`, with a separate stream per purpose
//! ([`Stream`]) so that, e.g., changing the value scale never perturbs the
//! keys.
//!
//! Superposed keys are built in whitening space: base directions `u_i`
//! (orthonormal when `m ≤ d_k`, independent uniform unit vectors otherwise)
//! are blended toward one shared unit direction `s` as
//! `z_i ∝ (1 − ε²) u_i + ε² s`, then mapped back with `C^{1/2}`. `ε = 0`
//! leaves the base directions untouched and `ε = 1` collapses every key onto
//! `s`.

use std::fmt;

use nalgebra::{Dyn, QR};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::editor::{AssociativeMemory, EditRequest};
use crate::error::{Error, Result};
use crate::linalg::{self, EigenPolicy, Matrix, SpdMatrix, Vector};

/// RNG stream ids, one per generated quantity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Covariance = 1,
    Keys = 2,
    Values = 3,
    Weights = 4,
}

pub fn rng_for(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Covariance eigenvalue profile.
#[derive(Debug, Clone, PartialEq)]
pub enum Spectrum {
    Flat,
    /// `λ_i = (i + 1)^{-α}`
    PowerLaw(f64),
    Explicit(Vec<f64>),
}

impl Spectrum {
    pub fn eigenvalues(&self, dim: usize) -> Vec<f64> {
        match self {
            Spectrum::Flat => vec![1.0; dim],
            Spectrum::PowerLaw(alpha) => (0..dim).map(|i| ((i + 1) as f64).powf(-alpha)).collect(),
            Spectrum::Explicit(v) => v.clone(),
        }
    }
}

impl fmt::Display for Spectrum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Spectrum::Flat => f.write_str("flat"),
            Spectrum::PowerLaw(a) => write!(f, "power-law({a})"),
            Spectrum::Explicit(v) => write!(f, "{v:?}"),
        }
    }
}

impl std::str::FromStr for Spectrum {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "flat" {
            return Ok(Spectrum::Flat);
        }
        if let Some(inner) = s.strip_prefix("power-law(").and_then(|r| r.strip_suffix(')')) {
            let alpha: f64 = inner
                .trim()
                .parse()
                .map_err(|_| Error::InvalidInput(format!("bad power-law exponent {inner:?}")))?;
            if !alpha.is_finite() {
                return Err(Error::InvalidInput("power-law exponent must be finite".into()));
            }
            return Ok(Spectrum::PowerLaw(alpha));
        }
        Err(Error::InvalidInput(format!(
            "unknown spectrum {s:?} (expected \"flat\", \"power-law(α)\" or a list)"
        )))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum SpectrumRepr {
    Named(String),
    Explicit(Vec<f64>),
}

impl Serialize for Spectrum {
    fn serialize<S: Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Spectrum::Explicit(v) => SpectrumRepr::Explicit(v.clone()),
            other => SpectrumRepr::Named(other.to_string()),
        }
        .serialize(ser)
    }
}

impl<'de> Deserialize<'de> for Spectrum {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        match SpectrumRepr::deserialize(de)? {
            SpectrumRepr::Explicit(v) => Ok(Spectrum::Explicit(v)),
            SpectrumRepr::Named(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    pub seed: u64,
    pub d_k: usize,
    pub d_v: usize,
    pub n_features: usize,
    /// Synthetic superposition knob in `[0, 1]`.
    pub superposition_eps: f64,
    pub spectrum: Spectrum,
}

impl GenConfig {
    pub fn new(seed: u64, d_k: usize, d_v: usize, n_features: usize, eps: f64) -> Self {
        Self {
            seed,
            d_k,
            d_v,
            n_features,
            superposition_eps: eps,
            spectrum: Spectrum::Flat,
        }
    }

    pub fn with_spectrum(mut self, spectrum: Spectrum) -> Self {
        self.spectrum = spectrum;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_k == 0 || self.d_v == 0 {
            return Err(Error::InvalidInput("d_k and d_v must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.superposition_eps) {
            return Err(Error::InvalidInput(format!(
                "superposition_eps {} outside [0, 1]",
                self.superposition_eps
            )));
        }
        if self.superposition_eps == 0.0 && self.n_features > self.d_k {
            return Err(Error::Capacity {
                requested: self.n_features,
                dim: self.d_k,
            });
        }
        if let Spectrum::Explicit(v) = &self.spectrum {
            if v.len() != self.d_k {
                return Err(Error::dims("explicit spectrum", self.d_k, v.len()));
            }
        }
        let eig = self.spectrum.eigenvalues(self.d_k);
        if let Some(i) = eig.iter().position(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::InvalidInput(format!(
                "spectrum entry {i} = {} is not positive",
                eig[i]
            )));
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: GenConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn gaussian_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Matrix {
    // column-major fill order is part of the reproducibility contract
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    Matrix::from_vec(rows, cols, data)
}

fn unit_vector(rng: &mut impl Rng, dim: usize) -> Vector {
    loop {
        let v = Vector::from_vec((0..dim).map(|_| rng.sample(StandardNormal)).collect());
        let n = v.norm();
        if n > 0.0 {
            return v / n;
        }
    }
}

/// `m ≤ dim` Haar-distributed orthonormal columns (QR of a Gaussian matrix
/// with the sign of `R`'s diagonal folded into `Q`).
fn orthonormal_columns(rng: &mut impl Rng, dim: usize, m: usize) -> Matrix {
    let g = gaussian_matrix(rng, dim, m);
    let qr: QR<f64, Dyn, Dyn> = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..m {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

pub fn gen_covariance(cfg: &GenConfig) -> Result<SpdMatrix> {
    cfg.validate()?;
    let mut rng = rng_for(cfg.seed, Stream::Covariance);
    let q = orthonormal_columns(&mut rng, cfg.d_k, cfg.d_k);
    let lambda = Vector::from_vec(cfg.spectrum.eigenvalues(cfg.d_k));
    let c = &q * Matrix::from_diagonal(&lambda) * q.transpose();
    SpdMatrix::new((&c + c.transpose()) * 0.5)
}

fn check_cov(cfg: &GenConfig, c: &SpdMatrix) -> Result<()> {
    if c.dim() != cfg.d_k {
        return Err(Error::dims("generator covariance", cfg.d_k, c.dim()));
    }
    Ok(())
}

/// Keys whose whitened images are orthonormal: `K = C^{1/2} Q_m`.
pub fn gen_orthogonal_keys(cfg: &GenConfig, c: &SpdMatrix, m: usize) -> Result<Matrix> {
    cfg.validate()?;
    check_cov(cfg, c)?;
    if m == 0 {
        return Err(Error::InvalidInput("key count must be positive".into()));
    }
    if m > cfg.d_k {
        return Err(Error::Capacity {
            requested: m,
            dim: cfg.d_k,
        });
    }
    let mut rng = rng_for(cfg.seed, Stream::Keys);
    let q = orthonormal_columns(&mut rng, cfg.d_k, m);
    Ok(c.sqrt() * q)
}

/// Whitened key directions for [`gen_superposed_keys`], before mapping back
/// through `C^{1/2}`.
pub fn superposed_directions(cfg: &GenConfig, m: usize) -> Result<Matrix> {
    cfg.validate()?;
    if m < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 keys, got {m}")));
    }
    let mut rng = rng_for(cfg.seed, Stream::Keys);
    let mut base = if m <= cfg.d_k {
        orthonormal_columns(&mut rng, cfg.d_k, m)
    } else {
        let mut g = gaussian_matrix(&mut rng, cfg.d_k, m);
        for mut col in g.column_iter_mut() {
            let n = col.norm();
            col /= n;
        }
        g
    };
    let shared = unit_vector(&mut rng, cfg.d_k);
    let w = cfg.superposition_eps * cfg.superposition_eps;
    if w == 0.0 {
        // keep the base draw bit-exact
        return Ok(base);
    }
    for (j, mut col) in base.column_iter_mut().enumerate() {
        col *= 1.0 - w;
        col.axpy(w, &shared, 1.0);
        let n = col.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::Numeric(format!("superposed key {j} collapsed to zero")));
        }
        col /= n;
    }
    Ok(base)
}

pub fn gen_superposed_keys(cfg: &GenConfig, c: &SpdMatrix, m: usize) -> Result<Matrix> {
    check_cov(cfg, c)?;
    let z = superposed_directions(cfg, m)?;
    Ok(c.sqrt() * z)
}

/// One edit per key column, values `N(0, value_scale²)` of length `d_v`.
pub fn gen_edit_stream(cfg: &GenConfig, keys: &Matrix, value_scale: f64) -> Result<Vec<EditRequest>> {
    cfg.validate()?;
    if !(value_scale >= 0.0 && value_scale.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "value_scale must be >= 0, got {value_scale}"
        )));
    }
    if keys.nrows() != cfg.d_k {
        return Err(Error::dims("edit stream keys", cfg.d_k, keys.nrows()));
    }
    let mut rng = rng_for(cfg.seed, Stream::Values);
    let values = gaussian_matrix(&mut rng, cfg.d_v, keys.ncols()) * value_scale;
    keys.column_iter()
        .zip(values.column_iter())
        .map(|(k, v)| EditRequest::new(k.into_owned(), v.into_owned()))
        .collect()
}

/// Pre-edit weights `W_0` with entries `N(0, scale² / d_k)`.
pub fn gen_initial_weights(cfg: &GenConfig, scale: f64) -> Result<Matrix> {
    cfg.validate()?;
    let mut rng = rng_for(cfg.seed, Stream::Weights);
    Ok(gaussian_matrix(&mut rng, cfg.d_v, cfg.d_k) * (scale / (cfg.d_k as f64).sqrt()))
}

/// Key regime for [`LifelongScenario`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Orthogonal,
    Superposed,
}

/// A complete synthetic lifelong-editing instance: the first `n_edits` key
/// columns are edited, the remaining `n_probes` stand in for original
/// knowledge.
#[derive(Debug, Clone)]
pub struct LifelongScenario {
    pub cfg: GenConfig,
    pub memory: AssociativeMemory,
    pub edits: Vec<EditRequest>,
    pub probes: Matrix,
}

impl LifelongScenario {
    pub fn build(cfg: &GenConfig, regime: Regime, n_edits: usize, n_probes: usize, value_scale: f64) -> Result<Self> {
        let cov = gen_covariance(cfg)?;
        let m = n_edits + n_probes;
        let keys = match regime {
            Regime::Orthogonal => gen_orthogonal_keys(cfg, &cov, m)?,
            Regime::Superposed => gen_superposed_keys(cfg, &cov, m)?,
        };
        let edit_keys = keys.columns(0, n_edits).into_owned();
        let probes = keys.columns(n_edits, n_probes).into_owned();
        let edits = gen_edit_stream(cfg, &edit_keys, value_scale)?;
        let w0 = gen_initial_weights(cfg, 1.0)?;
        let memory = AssociativeMemory::with_covariance(w0, cov, linalg::DEFAULT_EIGEN_EPS, EigenPolicy::Strict)?;
        Ok(Self {
            cfg: cfg.clone(),
            memory,
            edits,
            probes,
        })
    }
}
