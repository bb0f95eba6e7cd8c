//! Subcommand implementations. Each reads its inputs, calls the library and
//! hands tables, dumps and a `summary.json` to the output directory.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use ksup::dump::{read_dump, DumpKind, DumpManifest};
use ksup::experiments::scaling_family;
use ksup::stats::{default_convergence_steps, linear_fit};
use ksup::synth::{gen_covariance, gen_edit_stream, gen_initial_weights, gen_orthogonal_keys, gen_superposed_keys};
use ksup::{
    accumulation_curve, activation_angles, compute_lambda, covariance, excess_kurtosis, fit_memory,
    interference_report, inv_sqrt, kde, lifelong_edit, m_convergence, p_matrix, single_edit, whitening_angles,
    AssociativeMemory, EditRequest, Exec, GenConfig, Matrix, SampleSet, SpdMatrix, Vector, WhiteningTransform,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::output::{Cell, OutDir, Table};
use crate::{usage, AnglesArgs, ConvergeArgs, EditArgs, FitArgs, GenArgs, GlobalOpts, LifelongArgs};
use crate::{PmatrixArgs, RegimeArg, ReportArgs, ScalingArgs, StatsArgs};

fn load(path: &Path) -> Result<(Matrix, DumpManifest)> {
    read_dump(path).with_context(|| format!("reading {}", path.display()))
}

fn expect_kind(path: &Path, man: &DumpManifest, kind: DumpKind) {
    if let Some(k) = man.kind {
        if k != kind {
            log::warn!("{}: manifest kind is {k:?}, expected {kind:?}", path.display());
        }
    }
}

fn load_covariance(path: &Path, g: &GlobalOpts) -> Result<SpdMatrix> {
    let (m, man) = load(path)?;
    expect_kind(path, &man, DumpKind::Covariance);
    SpdMatrix::with_symmetry_tol(m, g.tol_symmetry).with_context(|| format!("covariance {}", path.display()))
}

/// Keys, their manifest and the whitening transform of a matching covariance.
fn load_keys(keys: &Path, cov: &Path, g: &GlobalOpts) -> Result<(Matrix, DumpManifest, WhiteningTransform)> {
    let (k, man) = load(keys)?;
    expect_kind(keys, &man, DumpKind::Keys);
    let c = load_covariance(cov, g)?;
    if c.dim() != k.nrows() {
        return Err(usage(format!(
            "keys have dimension {} but the covariance is {}x{}",
            k.nrows(),
            c.dim(),
            c.dim()
        )));
    }
    let wt = inv_sqrt(&c, g.tol_eigen, g.policy())?;
    Ok((k, man, wt))
}

fn load_memory(weights: &Path, cov: &Path, g: &GlobalOpts) -> Result<(AssociativeMemory, DumpManifest)> {
    let (w, man) = load(weights)?;
    expect_kind(weights, &man, DumpKind::Weights);
    let c = load_covariance(cov, g)?;
    if c.dim() != w.ncols() {
        return Err(usage(format!(
            "weights are {}x{} but the covariance is {}x{}",
            w.nrows(),
            w.ncols(),
            c.dim(),
            c.dim()
        )));
    }
    let mem = AssociativeMemory::with_covariance(w, c, g.tol_eigen, g.policy())?;
    Ok((mem, man))
}

fn manifest_like(src: &DumpManifest, kind: DumpKind) -> DumpManifest {
    DumpManifest::new(src.model_id.clone(), src.layer, kind)
}

/// Edit list read from JSON. Keys are given inline or by column index into
/// a key dump.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditsSpec {
    pub edits: Vec<EditSpec>,
    /// Key columns measured as original knowledge; defaults to every column
    /// not referenced by `key_index`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe_indices: Option<Vec<usize>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<Vec<f64>>,
    pub value: Vec<f64>,
}

impl EditsSpec {
    fn read(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&raw).with_context(|| format!("parsing edit spec {}", path.display()))
    }

    fn requests(&self, keys: Option<&Matrix>, d_k: usize, d_v: usize) -> Result<Vec<EditRequest>> {
        if self.edits.is_empty() {
            return Err(usage("edit spec contains no edits"));
        }
        self.edits
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let idx = i + 1;
                let key = match (e.key_index, &e.key) {
                    (Some(j), None) => {
                        let k =
                            keys.ok_or_else(|| usage(format!("edit #{idx} uses key_index but no key dump was given")))?;
                        if j >= k.ncols() {
                            return Err(usage(format!(
                                "edit #{idx}: key_index {j} out of range ({} keys)",
                                k.ncols()
                            )));
                        }
                        k.column(j).into_owned()
                    }
                    (None, Some(v)) => Vector::from_vec(v.clone()),
                    _ => return Err(usage(format!("edit #{idx} must give exactly one of key_index and key"))),
                };
                if key.len() != d_k {
                    return Err(usage(format!(
                        "edit #{idx}: key has length {}, memory expects {d_k}",
                        key.len()
                    )));
                }
                if e.value.len() != d_v {
                    return Err(usage(format!(
                        "edit #{idx}: value has length {}, memory expects {d_v}",
                        e.value.len()
                    )));
                }
                EditRequest::new(key, Vector::from_vec(e.value.clone())).with_context(|| format!("edit #{idx}"))
            })
            .collect()
    }
}

pub fn gen(a: &GenArgs, g: &GlobalOpts, out: &mut OutDir) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => {
            let raw = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            GenConfig::from_json(&raw).with_context(|| format!("config {}", p.display()))?
        }
        None => GenConfig::new(0, a.d_k, a.d_v, a.features, a.eps).with_spectrum(a.spectrum.parse()?),
    };
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let m = a.keys.unwrap_or(cfg.n_features);
    let n_edits = a.edits.unwrap_or(m / 2);
    if n_edits > m {
        return Err(usage(format!("--edits {n_edits} exceeds the {m} generated keys")));
    }

    let cov = gen_covariance(&cfg)?;
    let keys = match a.regime {
        RegimeArg::Orthogonal => gen_orthogonal_keys(&cfg, &cov, m)?,
        RegimeArg::Superposed => gen_superposed_keys(&cfg, &cov, m)?,
    };
    let stream = if n_edits > 0 {
        gen_edit_stream(&cfg, &keys.columns(0, n_edits).into_owned(), a.value_scale)?
    } else {
        Vec::new()
    };
    let w0 = gen_initial_weights(&cfg, a.weight_scale)?;

    let base = DumpManifest::new("synthetic", 0, DumpKind::Keys)
        .with_extra("seed", cfg.seed)
        .with_extra("superposition_eps", cfg.superposition_eps)
        .with_extra("spectrum", cfg.spectrum.to_string());
    let keys_man = DumpManifest {
        subject_ids: Some((0..m).map(|j| format!("k{j:04}")).collect()),
        ..base.clone().with_extra("regime", serde_json::to_value(a.regime)?)
    };
    out.dump(
        "covariance.ksup",
        cov.matrix(),
        &DumpManifest {
            kind: Some(DumpKind::Covariance),
            ..base.clone()
        },
    )?;
    out.dump("keys.ksup", &keys, &keys_man)?;
    out.dump(
        "weights.ksup",
        &w0,
        &DumpManifest {
            kind: Some(DumpKind::Weights),
            ..base
        },
    )?;

    let spec = EditsSpec {
        edits: stream
            .iter()
            .enumerate()
            .map(|(j, e)| EditSpec {
                key_index: Some(j),
                key: None,
                value: e.value().iter().copied().collect(),
            })
            .collect(),
        probe_indices: None,
    };
    out.json("edits.json", &spec)?;
    out.json("config.json", &cfg)?;
    out.json(
        "summary.json",
        &json!({ "seed": cfg.seed, "keys": m, "edits": n_edits, "probes": m - n_edits }),
    )
}

pub fn fit(a: &FitArgs, g: &GlobalOpts, out: &mut OutDir) -> Result<()> {
    let (k, km) = load(&a.keys)?;
    expect_kind(&a.keys, &km, DumpKind::Keys);
    let (v, _) = load(&a.values)?;
    let w = fit_memory(&k, &v, g.policy())?;
    let c = covariance(&k)?;
    let resid = &w * &k - &v;
    out.dump("weights.ksup", &w, &manifest_like(&km, DumpKind::Weights))?;
    out.dump("covariance.ksup", c.matrix(), &manifest_like(&km, DumpKind::Covariance))?;
    out.json(
        "summary.json",
        &json!({
            "d_k": k.nrows(),
            "d_v": v.nrows(),
            "n": k.ncols(),
            "residual_frob": resid.norm(),
            "gradient_norm": (&resid * k.transpose()).norm(),
            "ridge": c.ridge(),
            "condition_number": c.condition_number(),
        }),
    )
}

pub fn edit(a: &EditArgs, g: &GlobalOpts, out: &mut OutDir) -> Result<()> {
    let (mem, wm) = load_memory(&a.weights, &a.cov, g)?;
    let keys = a.keys.as_deref().map(load).transpose()?.map(|(k, _)| k);
    let spec = EditsSpec::read(&a.edits)?;
    let requests = spec.requests(keys.as_ref(), mem.key_dim(), mem.value_dim())?;
    let req = a
        .index
        .checked_sub(1)
        .and_then(|i| requests.get(i))
        .ok_or_else(|| usage(format!("--index {} outside 1..={}", a.index, requests.len())))?;
    let lambda = compute_lambda(&mem, req).with_context(|| format!("edit #{}", a.index))?;
    let edited = single_edit(&mem, req).with_context(|| format!("edit #{}", a.index))?;
    out.dump("weights.ksup", edited.weights(), &manifest_like(&wm, DumpKind::Weights))?;
    out.json(
        "summary.json",
        &json!({
            "index": a.index,
            "lambda": lambda.as_slice(),
            "lambda_norm": lambda.norm(),
            "residual_before": (req.value() - mem.weights() * req.key()).norm(),
            "constraint_residual": (edited.weights() * req.key() - req.value()).norm(),
        }),
    )
}

pub fn lifelong(a: &LifelongArgs, g: &GlobalOpts, out: &mut OutDir) -> Result<()> {
    let (mem, wm) = load_memory(&a.weights, &a.cov, g)?;
    let (keys, km) = load(&a.keys)?;
    expect_kind(&a.keys, &km, DumpKind::Keys);
    let spec = EditsSpec::read(&a.edits)?;
    let requests = spec.requests(Some(&keys), mem.key_dim(), mem.value_dim())?;

    let probe_idx: Vec<usize> = match &spec.probe_indices {
        Some(p) => {
            if let Some(&j) = p.iter().find(|&&j| j >= keys.ncols()) {
                return Err(usage(format!("probe index {j} out of range ({} keys)", keys.ncols())));
            }
            p.clone()
        }
        None => {
            let used: BTreeSet<usize> = spec.edits.iter().filter_map(|e| e.key_index).collect();
            (0..keys.ncols()).filter(|j| !used.contains(j)).collect()
        }
    };
    if probe_idx.is_empty() {
        return Err(usage(
            "no probe keys: every key column is edited; list probe_indices explicitly",
        ));
    }
    if keys.nrows() != mem.key_dim() {
        return Err(usage(format!(
            "keys have dimension {} but the memory expects {}",
            keys.nrows(),
            mem.key_dim()
        )));
    }
    let probes = keys.select_columns(&probe_idx);

    let log = lifelong_edit(&mem, &requests)?;
    let wt = mem.whitening();
    let report = interference_report(&log, wt, &probes)?;
    let curve = accumulation_curve(&log, wt, &probes)?;

    let mut table = Table::new(&["n", "frob_delta_o", "frob_delta_e"]);
    for p in &curve {
        table.push(vec![p.n.into(), p.frob_delta_o.into(), p.frob_delta_e.into()]);
    }
    let fit = if curve.len() >= 2 {
        let xs: Vec<f64> = curve.iter().map(|p| p.n as f64).collect();
        let ys: Vec<f64> = curve.iter().map(|p| p.frob_delta_o).collect();
        Some(linear_fit(&xs, &ys)?)
    } else {
        None
    };

    let delta_man = |what: &str| manifest_like(&wm, DumpKind::Values).with_extra("quantity", what);
    out.dump("delta_o.ksup", &report.delta_o, &delta_man("delta_o"))?;
    out.dump("delta_e.ksup", &report.delta_e, &delta_man("delta_e"))?;
    out.dump(
        "weights.ksup",
        &log.final_weights,
        &manifest_like(&wm, DumpKind::Weights),
    )?;
    out.table("accumulation", &table)?;
    let edits: Vec<Value> = log
        .records
        .iter()
        .map(|r| json!({ "index": r.index, "lambda_norm": r.lambda.norm(), "delta_v_norm": r.delta_v.norm() }))
        .collect();
    out.json(
        "summary.json",
        &json!({
            "n_edits": log.len(),
            "n_probes": probe_idx.len(),
            "frobenius_o": report.frobenius_o,
            "frobenius_e": report.frobenius_e,
            "fit": fit,
            "edits": edits,
        }),
    )
}

fn off_diagonal_table(m: &Matrix) -> Table {
    let mut t = Table::new(&["i", "j", "p"]);
    for i in 0..m.nrows() {
        for j in (0..m.ncols()).filter(|&j| j != i) {
            t.push(vec![i.into(), j.into(), m[(i, j)].into()]);
        }
    }
    t
}

pub fn pmatrix(a: &PmatrixArgs, g: &GlobalOpts, out: &mut OutDir) -> Result<()> {
    let (k, km, wt) = load_keys(&a.keys, &a.cov, g)?;
    let mut p = p_matrix(&wt, &k)?;
    if let Some(ids) = &km.subject_ids {
        p = p.with_key_ids(ids.clone())?;
    }
    let off = p.off_diagonal();
    let mean = off.iter().sum::<f64>() / off.len() as f64;
    let max_offdiag = off.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
    let (kurtosis, kurtosis_error) = match SampleSet::new(off.clone()).and_then(|s| excess_kurtosis(&s)) {
        Ok(x) => (Some(x), None),
        Err(e) => {
            log::warn!("kurtosis unavailable: {e}");
            (None, Some(e.to_string()))
        }
    };
    let ids = p.key_ids();
    let top: Vec<Value> = p
        .top_pairs(a.top)
        .into_iter()
        .map(|(i, j, v)| {
            let mut o = json!({ "i": i, "j": j, "p": v });
            if !ids.is_empty() {
                o["key_i"] = json!(ids[i]);
                o["key_j"] = json!(ids[j]);
            }
            o
        })
        .collect();

    let man = DumpManifest {
        subject_ids: km.subject_ids.clone(),
        ..manifest_like(&km, DumpKind::Pmatrix)
    };
    out.dump("pmatrix.ksup", p.entries(), &man)?;
    out.table("offdiag", &off_diagonal_table(p.entries()))?;
    out.json(
        "summary.json",
        &json!({
            "model_id": km.model_id,
            "layer": km.layer,
            "d_k": k.nrows(),
            "m": p.m(),
            "sample_count": off.len(),
            "kurtosis": kurtosis,
            "kurtosis_error": kurtosis_error,
            "mean": mean,
            "max_offdiag": max_offdiag,
            "top_pairs": top,
        }),
    )
}

fn read_column(path: &Path, column: &str) -> Result<Vec<f64>> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let headers = rdr.headers()?.clone();
    let idx = headers.iter().position(|h| h == column).ok_or_else(|| {
        usage(format!(
            "{} has no column {column:?} (columns: {})",
            path.display(),
            headers.iter().collect::<Vec<_>>().join(", ")
        ))
    })?;
    let mut values = Vec::new();
    let mut skipped = 0;
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = rec.get(idx).unwrap_or("").trim();
        if field.is_empty() {
            skipped += 1;
            continue;
        }
        let x: f64 = field.parse().map_err(|_| {
            ksup::Error::Data(format!(
                "{} row {}: {field:?} is not a number",
                path.display(),
                line + 1
            ))
        })?;
        values.push(x);
    }
    if skipped > 0 {
        log::warn!("{}: skipped {skipped} empty {column:?} fields", path.display());
    }
    Ok(values)
}

fn describe(s: &SampleSet) -> Value {
    json!({
        "n": s.len(),
        "mean": s.mean(),
        "median": s.median(),
        "within_80_100": s.fraction_within(80.0, 100.0),
    })
}

pub fn stats(a: &StatsArgs, out: &mut OutDir) -> Result<()> {
    let values = match (&a.pmatrix, &a.samples) {
        (Some(path), _) => {
            let (m, man) = load(path)?;
            expect_kind(path, &man, DumpKind::Pmatrix);
            if !m.is_square() {
                return Err(usage(format!(
                    "{} is {}x{}, not a square P matrix",
                    path.display(),
                    m.nrows(),
                    m.ncols()
                )));
            }
            (0..m.nrows())
                .flat_map(|i| (0..m.ncols()).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| m[(i, j)])
                .collect()
        }
        (None, Some(path)) => read_column(path, &a.column)?,
        (None, None) => return Err(usage("give --pmatrix or --samples")),
    };
    let s = SampleSet::new(values)?;
    let kurtosis = excess_kurtosis(&s)?;
    let curve = kde(&s)?;
    let mut table = Table::new(&["x", "density"]);
    for (x, d) in curve.grid.iter().zip(&curve.density) {
        table.push(vec![(*x).into(), (*d).into()]);
    }
    out.table("kde", &table)?;
    out.json(
        "summary.json",
        &json!({
            "n": s.len(),
            "mean": s.mean(),
            "median": s.median(),
            "kurtosis": kurtosis,
            "bandwidth": curve.bandwidth,
            "kde_integral": curve.integral(),
            "kde_peak": curve.argmax(),
        }),
    )
}

pub fn angles(a: &AnglesArgs, g: &GlobalOpts, out: &mut OutDir) -> Result<()> {
    let (k, _, wt) = load_keys(&a.keys, &a.cov, g)?;
    let w = whitening_angles(&wt, &k)?;
    let act = activation_angles(&k)?;
    let m = k.ncols();
    let mut table = Table::new(&["i", "j", "whitening", "activation"]);
    let pairs = (0..m).flat_map(|i| (0..m).filter(move |&j| j != i).map(move |j| (i, j)));
    for ((i, j), (x, y)) in pairs.zip(w.values().iter().zip(act.values())) {
        table.push(vec![i.into(), j.into(), (*x).into(), (*y).into()]);
    }
    out.table("angles", &table)?;
    out.json(
        "summary.json",
        &json!({ "pairs": w.len(), "whitening": describe(&w), "activation": describe(&act) }),
    )
}

pub fn converge(a: &ConvergeArgs, g: &GlobalOpts, out: &mut OutDir) -> Result<()> {
    let (k, _, wt) = load_keys(&a.keys, &a.cov, g)?;
    let steps = match &a.steps {
        Some(s) => s.clone(),
        None => {
            let s: Vec<usize> = default_convergence_steps()
                .into_iter()
                .filter(|&m| m <= k.ncols())
                .collect();
            if s.is_empty() {
                return Err(usage(format!("only {} keys; the default steps start at 16", k.ncols())));
            }
            s
        }
    };
    let rows = m_convergence(&wt, &k, &steps)?;
    let mut table = Table::new(&["m", "kurtosis", "gap", "error"]);
    let mut summary = Vec::new();
    let mut prev: Option<f64> = None;
    for r in &rows {
        let (kurt, err) = match &r.kurtosis {
            Ok(x) => (Some(*x), None),
            Err(e) => (None, Some(e.to_string())),
        };
        let gap = kurt.zip(prev).map(|(x, p)| (x - p).abs());
        table.push(vec![
            r.m.into(),
            kurt.into(),
            gap.into(),
            err.clone().map_or(Cell::Empty, Cell::Text),
        ]);
        summary.push(json!({ "m": r.m, "kurtosis": kurt, "gap": gap, "error": err }));
        prev = kurt;
    }
    out.table("convergence", &table)?;
    out.json("summary.json", &json!({ "keys": k.ncols(), "rows": summary }))
}

pub fn scaling(a: &ScalingArgs, g: &GlobalOpts, out: &mut OutDir) -> Result<()> {
    if a.seeds == 0 {
        return Err(usage("--seeds must be at least 1"));
    }
    let base = g.seed.unwrap_or(0);
    let seeds: Vec<u64> = (base..base + a.seeds).collect();
    let points = scaling_family(&a.dims, a.features, a.eps, &seeds, Exec::default())?;

    let mut table = Table::new(&["d_k", "seed", "kurtosis"]);
    for p in &points {
        for (s, k) in seeds.iter().zip(&p.per_seed) {
            table.push(vec![p.d_k.into(), (*s as i64).into(), (*k).into()]);
        }
    }
    out.table("scaling", &table)?;
    for p in &points {
        out.json(
            &format!("d_k-{:04}/summary.json", p.d_k),
            &json!({
                "model_id": "synthetic",
                "layer": 0,
                "d_k": p.d_k,
                "m": a.features,
                "sample_count": a.features * (a.features - 1),
                "kurtosis": p.mean_kurtosis,
                "seeds": seeds,
            }),
        )?;
    }
    let increasing = points.windows(2).all(|w| w[1].mean_kurtosis > w[0].mean_kurtosis);
    out.json(
        "summary.json",
        &json!({
            "features": a.features,
            "eps": a.eps,
            "seeds": seeds,
            "points": points.iter().map(|p| json!({ "d_k": p.d_k, "mean_kurtosis": p.mean_kurtosis })).collect::<Vec<_>>(),
            "strictly_increasing": increasing,
        }),
    )
}

#[derive(Debug)]
struct ReportRow {
    model: String,
    layer: i64,
    d_k: u64,
    kurtosis: Option<f64>,
}

fn read_summary(dir: &Path) -> std::result::Result<ReportRow, String> {
    let path = dir.join("summary.json");
    let raw = fs::read(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    let v: Value = serde_json::from_slice(&raw).map_err(|e| format!("{}: {e}", path.display()))?;
    let d_k = v["d_k"]
        .as_u64()
        .ok_or_else(|| format!("{}: no d_k field, not a kurtosis summary", path.display()))?;
    Ok(ReportRow {
        model: v["model_id"].as_str().unwrap_or("").to_owned(),
        layer: v["layer"].as_i64().unwrap_or(0),
        d_k,
        kurtosis: v["kurtosis"].as_f64(),
    })
}

pub fn report(a: &ReportArgs, out: &mut OutDir) -> Result<()> {
    let mut rows = Vec::new();
    let mut missing = Vec::new();
    for dir in &a.dirs {
        match read_summary(dir) {
            Ok(r) => rows.push(r),
            Err(why) => {
                log::warn!("skipping {}: {why}", dir.display());
                missing.push(why);
            }
        }
    }
    if rows.is_empty() {
        return Err(ksup::Error::Data("no usable summary.json in any run directory".into()).into());
    }
    rows.sort_by(|x, y| (x.d_k, &x.model, x.layer).cmp(&(y.d_k, &y.model, y.layer)));
    if let Some(w) = rows
        .windows(2)
        .find(|w| (w[0].d_k, &w[0].model, w[0].layer) == (w[1].d_k, &w[1].model, w[1].layer))
    {
        return Err(ksup::Error::Data(format!(
            "duplicate summary for model {:?} layer {} d_k {}",
            w[0].model, w[0].layer, w[0].d_k
        ))
        .into());
    }

    let mut by_dk: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for r in &rows {
        if let Some(k) = r.kurtosis {
            by_dk.entry(r.d_k).or_default().push(k);
        }
    }
    let means: Vec<(u64, usize, f64)> = by_dk
        .iter()
        .map(|(d, ks)| (*d, ks.len(), ks.iter().sum::<f64>() / ks.len() as f64))
        .collect();
    let increasing = (means.len() >= 2).then(|| means.windows(2).all(|w| w[1].2 > w[0].2));

    let mut table = Table::new(&["model", "layer", "d_k", "kurtosis"]);
    for r in &rows {
        table.push(vec![
            r.model.as_str().into(),
            r.layer.into(),
            (r.d_k as i64).into(),
            r.kurtosis.into(),
        ]);
    }
    out.table("scaling_report", &table)?;

    let mut md = String::from("# Kurtosis scaling report\n\n");
    let _ = writeln!(md, "{} run directories, {} rows.\n", a.dirs.len(), rows.len());
    md.push_str("| model | layer | d_k | kurtosis |\n|---|---:|---:|---:|\n");
    for r in &rows {
        let k = r.kurtosis.map_or_else(|| "n/a".to_owned(), |k| k.to_string());
        let _ = writeln!(md, "| {} | {} | {} | {k} |", r.model, r.layer, r.d_k);
    }
    md.push_str("\n## Mean kurtosis by key dimension\n\n| d_k | rows | mean kurtosis |\n|---:|---:|---:|\n");
    for (d, n, m) in &means {
        let _ = writeln!(md, "| {d} | {n} | {m} |");
    }
    let verdict = match increasing {
        Some(true) => "yes",
        Some(false) => "no",
        None => "n/a (fewer than two key dimensions)",
    };
    let _ = writeln!(md, "\nKurtosis strictly increasing in d_k: {verdict}");
    if !missing.is_empty() {
        md.push_str("\n## Missing summaries\n\n");
        for m in &missing {
            let _ = writeln!(md, "- {m}");
        }
    }
    out.text("report.md", &md)?;
    out.json(
        "report_summary.json",
        &json!({
            "rows": rows.len(),
            "by_d_k": means.iter().map(|(d, n, m)| json!({ "d_k": d, "rows": n, "mean_kurtosis": m })).collect::<Vec<_>>(),
            "strictly_increasing": increasing,
            "missing": missing,
        }),
    )
}
