//! Distributional statistics of superposition: kurtosis, kernel density
//! estimates, pairwise angles, convergence in the number of keys and
//! per-layer kurtosis tables.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::csvfmt::{fmt_f64, write_table};
use crate::error::{Error, Result};
use crate::interference::{p_matrix_with, PForm};
use crate::linalg::{Matrix, WhiteningTransform};
use crate::par::Exec;

/// Spread below which a sample is treated as a point mass:
/// `std ≤ DEGENERATE_SPREAD · max(1, max|x|)`.
pub const DEGENERATE_SPREAD: f64 = 1e-12;
pub const KDE_GRID_POINTS: usize = 512;

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    values: Vec<f64>,
}

impl SampleSet {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "sample set needs at least 2 values, got {}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidInput(format!("sample {i} is not finite")));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |a, x| a.max(x.abs()))
    }

    /// Linear-interpolation quantile (type 7), `q ∈ [0, 1]`.
    pub fn quantile(&self, q: f64) -> f64 {
        let mut sorted = self.values.clone();
        sorted.sort_by(f64::total_cmp);
        quantile_sorted(&sorted, q)
    }

    pub fn median(&self) -> f64 {
        self.quantile(0.5)
    }

    /// Fraction of samples in the closed interval `[lo, hi]`.
    pub fn fraction_within(&self, lo: f64, hi: f64) -> f64 {
        let n = self.values.iter().filter(|&&x| x >= lo && x <= hi).count();
        n as f64 / self.len() as f64
    }

    /// Population central moments `(mean, m2, m4)`.
    fn central_moments(&self) -> (f64, f64, f64) {
        let n = self.len() as f64;
        let mean = self.mean();
        let (mut m2, mut m4) = (0.0, 0.0);
        for &x in &self.values {
            let d = x - mean;
            let d2 = d * d;
            m2 += d2;
            m4 += d2 * d2;
        }
        (mean, m2 / n, m4 / n)
    }

    fn check_spread(&self, std: f64) -> Result<()> {
        if std <= DEGENERATE_SPREAD * self.max_abs().max(1.0) {
            return Err(Error::Degenerate(format!("{} samples have spread {std:e}", self.len())));
        }
        Ok(())
    }
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Excess kurtosis `m4 / m2² − 3` from population moments.
pub fn excess_kurtosis(s: &SampleSet) -> Result<f64> {
    if s.len() < 4 {
        return Err(Error::InvalidInput(format!(
            "kurtosis needs at least 4 samples, got {}",
            s.len()
        )));
    }
    let (_, m2, m4) = s.central_moments();
    s.check_spread(m2.sqrt())?;
    Ok(m4 / (m2 * m2) - 3.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityCurve {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
}

impl DensityCurve {
    /// Trapezoidal integral over the grid.
    pub fn integral(&self) -> f64 {
        self.grid
            .windows(2)
            .zip(self.density.windows(2))
            .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
            .sum()
    }

    pub fn argmax(&self) -> f64 {
        let i = (0..self.density.len())
            .max_by(|&a, &b| self.density[a].total_cmp(&self.density[b]).then(b.cmp(&a)))
            .unwrap_or(0);
        self.grid[i]
    }

    pub fn step(&self) -> f64 {
        self.grid[1] - self.grid[0]
    }
}

/// Silverman's rule `0.9 · min(σ, IQR/1.34) · N^{-1/5}`, falling back to σ
/// when the IQR is zero.
pub fn silverman_bandwidth(s: &SampleSet) -> Result<f64> {
    let n = s.len() as f64;
    let mean = s.mean();
    let var = s.values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sigma = var.sqrt();
    s.check_spread(sigma)?;
    let mut sorted = s.values.clone();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let spread = if iqr > 0.0 { sigma.min(iqr / 1.34) } else { sigma };
    Ok(0.9 * spread * n.powf(-0.2))
}

/// Gaussian KDE on a 512-point grid spanning `[min − 3h, max + 3h]`.
///
/// Each grid value is the kernel mass in the grid point's trapezoid cell
/// divided by the cell width (half a step at either end), so the trapezoid
/// integral is exactly the kernel mass inside the grid. For smooth data this
/// agrees with the pointwise estimate to O((step/h)²); for heavy tails, where
/// the step can dwarf `h`, it keeps the curve normalized and spikes visible
/// instead of sampling kernels between their peaks. Kernels are cut at
/// [`KDE_KERNEL_CUTOFF`] bandwidths.
pub fn kde(s: &SampleSet) -> Result<DensityCurve> {
    kde_with(s, Exec::default())
}

/// Kernel support in bandwidths; the discarded tail mass is below 1e-32.
pub const KDE_KERNEL_CUTOFF: f64 = 12.0;

const KDE_CHUNK: usize = 1024;

pub fn kde_with(s: &SampleSet, exec: Exec) -> Result<DensityCurve> {
    let h = silverman_bandwidth(s)?;
    let mut sorted = s.values.clone();
    sorted.sort_by(f64::total_cmp);
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    let (start, end) = (lo - 3.0 * h, hi + 3.0 * h);
    let cells = KDE_GRID_POINTS;
    let step = (end - start) / (cells - 1) as f64;
    let grid: Vec<f64> = (0..cells).map(|i| start + step * i as f64).collect();
    // cell g spans [edge(g), edge(g + 1)]
    let edge = |g: usize| match g {
        0 => start,
        g if g == cells => end,
        g => start + (g as f64 - 0.5) * step,
    };

    // fixed chunks summed in order keep serial and parallel bit-identical
    let n_chunks = sorted.len().div_ceil(KDE_CHUNK);
    let partial = exec.map(n_chunks, |c| {
        let mut acc = vec![0.0; cells];
        let mut cdf = Vec::new();
        for &xi in &sorted[c * KDE_CHUNK..((c + 1) * KDE_CHUNK).min(sorted.len())] {
            let reach = KDE_KERNEL_CUTOFF * h;
            let first = (((xi - reach - start) / step + 0.5).floor().max(0.0) as usize).min(cells - 1);
            let last = (((xi + reach - start) / step + 0.5).ceil().max(0.0) as usize).min(cells - 1);
            cdf.clear();
            cdf.extend((first..=last + 1).map(|g| Tail::at((edge(g) - xi) / h)));
            for g in first..=last {
                acc[g] += cdf[g - first].mass_to(&cdf[g - first + 1]);
            }
        }
        acc
    });
    let mut mass = vec![0.0; cells];
    for acc in partial {
        for (m, a) in mass.iter_mut().zip(acc) {
            *m += a;
        }
    }
    let n = s.len() as f64;
    let density = (0..cells).map(|g| mass[g] / (n * (edge(g + 1) - edge(g)))).collect();
    Ok(DensityCurve {
        grid,
        density,
        bandwidth: h,
    })
}

/// Standard normal CDF at `u`, stored as the smaller tail to avoid
/// cancellation: `Lower(Φ(u))` for `u < 0`, `Upper(1 − Φ(u))` otherwise.
enum Tail {
    Lower(f64),
    Upper(f64),
}

impl Tail {
    fn at(u: f64) -> Self {
        let r = std::f64::consts::FRAC_1_SQRT_2;
        if u < 0.0 {
            Tail::Lower(0.5 * libm::erfc(-u * r))
        } else {
            Tail::Upper(0.5 * libm::erfc(u * r))
        }
    }

    /// `Φ(b) − Φ(a)` for `self = a ≤ b`.
    fn mass_to(&self, b: &Tail) -> f64 {
        match (self, b) {
            (Tail::Lower(a), Tail::Lower(b)) => b - a,
            (Tail::Upper(a), Tail::Upper(b)) => a - b,
            (Tail::Lower(a), Tail::Upper(b)) => 1.0 - a - b,
            (Tail::Upper(_), Tail::Lower(_)) => 0.0,
        }
    }
}

fn ordered_pair_angles(z: &Matrix, exec: Exec) -> Result<SampleSet> {
    let m = z.ncols();
    let sq_norms: Vec<f64> = z.column_iter().map(|c| c.norm_squared()).collect();
    if let Some(j) = sq_norms.iter().position(|&n| n == 0.0) {
        return Err(Error::InvalidInput(format!("key column {j} is the zero vector")));
    }
    let rows = exec.map(m, |i| {
        let zi = z.column(i);
        (0..m)
            .filter(|&j| j != i)
            .map(|j| {
                // sqrt of the product keeps cos = ±1 exact for parallel pairs
                let cos = zi.dot(&z.column(j)) / (sq_norms[i] * sq_norms[j]).sqrt();
                cos.clamp(-1.0, 1.0).acos().to_degrees()
            })
            .collect::<Vec<f64>>()
    });
    SampleSet::new(rows.into_iter().flatten().collect())
}

/// Angles in degrees between `C^{-1/2}k_i` and `C^{-1/2}k_j` over all
/// ordered pairs `i ≠ j`.
pub fn whitening_angles(wt: &WhiteningTransform, keys: &Matrix) -> Result<SampleSet> {
    whitening_angles_with(wt, keys, Exec::default())
}

pub fn whitening_angles_with(wt: &WhiteningTransform, keys: &Matrix, exec: Exec) -> Result<SampleSet> {
    ordered_pair_angles(&wt.whiten(keys)?, exec)
}

/// Angles between the raw key vectors.
pub fn activation_angles(keys: &Matrix) -> Result<SampleSet> {
    ordered_pair_angles(keys, Exec::default())
}

#[derive(Debug)]
pub struct ConvergenceRow {
    pub m: usize,
    pub kurtosis: Result<f64>,
}

/// Kurtosis of the off-diagonal entries of the leading `m × m` block of P,
/// one row per requested `m`.
pub fn m_convergence(wt: &WhiteningTransform, keys: &Matrix, steps: &[usize]) -> Result<Vec<ConvergenceRow>> {
    if steps.is_empty() {
        return Err(Error::InvalidInput("no convergence steps given".into()));
    }
    if let Some(&m) = steps.iter().find(|&&m| m < 2) {
        return Err(Error::InvalidInput(format!("convergence step m = {m} is below 2")));
    }
    if steps.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput(
            "convergence steps must be strictly ascending".into(),
        ));
    }
    let max = *steps.last().unwrap();
    if max > keys.ncols() {
        return Err(Error::InvalidInput(format!(
            "convergence step {max} exceeds key count {}",
            keys.ncols()
        )));
    }
    let lead = keys.columns(0, max).into_owned();
    let p = p_matrix_with(wt, &lead, PForm::Inverse, Exec::default())?;
    steps
        .iter()
        .map(|&m| {
            let sub = p.leading(m)?;
            let kurtosis = SampleSet::new(sub.off_diagonal()).and_then(|s| excess_kurtosis(&s));
            Ok(ConvergenceRow { m, kurtosis })
        })
        .collect()
}

/// Default block sizes `16, 32, …, 128`.
pub fn default_convergence_steps() -> Vec<usize> {
    (1..=8).map(|i| i * 16).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerKurtosisRow {
    pub model_id: String,
    pub layer_index: i64,
    pub kurtosis: f64,
    pub sample_count: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LayerKurtosisTable {
    pub rows: Vec<LayerKurtosisRow>,
}

const TABLE_HEADER: [&str; 4] = ["model_id", "layer_index", "kurtosis", "sample_count"];

impl LayerKurtosisTable {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.model_id.clone(),
                    r.layer_index.to_string(),
                    fmt_f64(r.kurtosis),
                    r.sample_count.to_string(),
                ]
            })
            .collect();
        write_table(out, &TABLE_HEADER, &rows)
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
        if header != TABLE_HEADER {
            return Err(Error::Format(format!("unexpected kurtosis table header {header:?}")));
        }
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let field = |i: usize| rec.get(i).unwrap_or_default();
            let bad = |what: &str| Error::Format(format!("bad {what} in row {:?}", rec));
            rows.push(LayerKurtosisRow {
                model_id: field(0).to_owned(),
                layer_index: field(1).parse().map_err(|_| bad("layer_index"))?,
                kurtosis: field(2).parse().map_err(|_| bad("kurtosis"))?,
                sample_count: field(3).parse().map_err(|_| bad("sample_count"))?,
            });
        }
        Ok(Self { rows })
    }
}

/// Merges tables, sorted by `(model_id, layer_index)`. Duplicate keys are an
/// error.
pub fn scaling_report(tables: &[LayerKurtosisTable]) -> Result<LayerKurtosisTable> {
    if tables.is_empty() {
        return Err(Error::InvalidInput("no kurtosis tables to merge".into()));
    }
    let mut merged: BTreeMap<(String, i64), LayerKurtosisRow> = BTreeMap::new();
    for row in tables.iter().flat_map(|t| &t.rows) {
        let key = (row.model_id.clone(), row.layer_index);
        if merged.contains_key(&key) {
            return Err(Error::Data(format!(
                "duplicate row for model {:?} layer {}",
                key.0, key.1
            )));
        }
        merged.insert(key, row.clone());
    }
    Ok(LayerKurtosisTable {
        rows: merged.into_values().collect(),
    })
}

/// Ordinary least-squares line through `(x, y)` with its coefficient of
/// determination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    if xs.len() != ys.len() {
        return Err(Error::dims("linear fit", xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(Error::InvalidInput("linear fit needs at least 2 points".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Degenerate("all x values are equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    // A flat line through flat data explains everything.
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(LinearFit { slope, intercept, r2 })
}
