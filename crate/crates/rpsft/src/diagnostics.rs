//! Measurement suite: projected gradient energy, first-order alignment,
//! left-subspace rotation, hidden-state drift, and entropy profiles.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::linalg::{self, DenseMatrix, OrthonormalBasis, SvdResult};
use crate::trainer::ModelParams;

/// Per-sample gradients of a shared shape.
#[derive(Debug, Clone)]
pub struct GradientBatch {
    samples: Vec<DenseMatrix>,
}

impl GradientBatch {
    pub fn new(samples: Vec<DenseMatrix>) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Validation("gradient batch needs at least one sample".into()))?;
        let (r, c) = (first.rows(), first.cols());
        if samples.iter().any(|s| s.rows() != r || s.cols() != c) {
            return Err(Error::Validation("gradient samples must share one shape".into()));
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[DenseMatrix] {
        &self.samples
    }

    pub fn rows(&self) -> usize {
        self.samples[0].rows()
    }

    pub fn cols(&self) -> usize {
        self.samples[0].cols()
    }

    /// Batch mean gradient.
    pub fn mean(&self) -> DenseMatrix {
        let mut acc = DenseMatrix::zeros(self.rows(), self.cols());
        for s in &self.samples {
            acc = acc.add(s);
        }
        acc.scale(1.0 / self.samples.len() as f64)
    }
}

/// Fraction of total squared gradient norm captured by the (U_r, V_r) block:
/// sum_t ||U_r^T G_t V_r||_F^2 / sum_t ||G_t||_F^2.
pub fn fisher_energy_ratio(
    batch: &GradientBatch,
    u_r: &OrthonormalBasis,
    v_r: &OrthonormalBasis,
) -> Result<f64> {
    if u_r.columns().rows() != batch.rows() || v_r.columns().rows() != batch.cols() {
        return Err(Error::Parameter("bases not conformable with gradients".into()));
    }
    let ut = u_r.columns().transpose();
    let mut num = 0.0;
    let mut den = 0.0;
    for g in &batch.samples {
        num += ut.matmul(g).matmul(&v_r.columns()).frobenius_norm_sq();
        den += g.frobenius_norm_sq();
    }
    if den == 0.0 {
        return Err(Error::Numerical(
            "gradient energy ratio undefined: all gradients are zero".into(),
        ));
    }
    Ok(num / den)
}

/// Energy curve over ranks: x(r) = r^2/R^2, y(r) = captured-energy ratio of
/// the strict top r x r block of `svd`.
pub fn fisher_energy_curve(
    batch: &GradientBatch,
    svd: &SvdResult,
    ranks: &[usize],
) -> Result<Vec<(f64, f64)>> {
    let full = svd.sigma.len();
    let mut out = Vec::with_capacity(ranks.len());
    let mut prev: Option<usize> = None;
    for &r in ranks {
        if r < 1 || r > full {
            return Err(Error::Parameter(format!("rank {r} outside [1, {full}]")));
        }
        if let Some(p) = prev {
            if r <= p {
                return Err(Error::Parameter("ranks must be strictly increasing".into()));
            }
        }
        prev = Some(r);
        let u_r = OrthonormalBasis::new(svd.u.leading_columns(r), OrthonormalBasis::DEFAULT_TOL)?;
        let v_r = OrthonormalBasis::new(svd.v.leading_columns(r), OrthonormalBasis::DEFAULT_TOL)?;
        let y = fisher_energy_ratio(batch, &u_r, &v_r)?;
        let x = (r * r) as f64 / (full * full) as f64;
        out.push((x, y));
    }
    Ok(out)
}

/// Ordered grouping of layer names; each group is averaged into one value.
pub type LayerGroups = Vec<(String, Vec<String>)>;

/// Default grouping: one group per layer, in name order.
pub fn per_layer_groups(model: &ModelParams) -> LayerGroups {
    model
        .layers
        .keys()
        .map(|name| (name.clone(), vec![name.clone()]))
        .collect()
}

/// Mean inner product between batch-mean gradients and the update
/// ckpt - base, per group. Negative values mean the update points along the
/// local descent direction.
pub fn first_order_signal(
    base: &ModelParams,
    ckpt: &ModelParams,
    grads: &BTreeMap<String, GradientBatch>,
    groups: &LayerGroups,
) -> Result<Vec<(String, f64)>> {
    let mut out = Vec::with_capacity(groups.len());
    for (group_name, members) in groups {
        let mut total = 0.0;
        let mut count = 0usize;
        for name in members {
            let w_base = base
                .layers
                .get(name)
                .ok_or_else(|| Error::Parameter(format!("unknown layer '{name}'")))?;
            let w_ckpt = ckpt
                .layers
                .get(name)
                .ok_or_else(|| Error::Parameter(format!("unknown layer '{name}'")))?;
            if w_base.rows() != w_ckpt.rows() || w_base.cols() != w_ckpt.cols() {
                return Err(Error::Parameter(format!("shape mismatch in layer '{name}'")));
            }
            let batch = grads
                .get(name)
                .ok_or_else(|| Error::Parameter(format!("no gradients for layer '{name}'")))?;
            if batch.rows() != w_base.rows() || batch.cols() != w_base.cols() {
                return Err(Error::Parameter(format!("gradient shape mismatch in '{name}'")));
            }
            let g_mean = batch.mean();
            let delta = w_ckpt.sub(w_base);
            total += g_mean.dot(&delta);
            count += 1;
        }
        if count == 0 {
            return Err(Error::Parameter(format!("empty group '{group_name}'")));
        }
        out.push((group_name.clone(), total / count as f64));
    }
    Ok(out)
}

/// Splits "layer.type" keys; a key without a dot is its own layer with an
/// empty type tag.
fn split_layer_type(name: &str) -> (&str, &str) {
    match name.split_once('.') {
        Some((layer, ty)) => (layer, ty),
        None => (name, ""),
    }
}

#[derive(Debug, Clone)]
pub struct RotationReport {
    /// (layer, mean rotation in degrees) in layer-name order.
    pub values: Vec<(String, f64)>,
    /// Layers skipped because no requested type matched.
    pub warnings: Vec<String>,
}

/// A rotation of zero must be reported as exactly 0.0, and arccos loses half
/// the working precision near 1, so identical inputs short-circuit the SVD
/// path entirely.
fn bitwise_equal(a: &DenseMatrix, b: &DenseMatrix) -> bool {
    a.data().len() == b.data().len()
        && a.data()
            .iter()
            .zip(b.data())
            .all(|(x, y)| x.to_bits() == y.to_bits())
}

/// Mean principal angle (degrees) between the top-K left singular bases of a
/// matched weight pair, K = min(cap, d_out, d_in).
fn left_rotation(w_base: &DenseMatrix, w_tuned: &DenseMatrix, cap: usize) -> Result<f64> {
    if w_base.rows() != w_tuned.rows() || w_base.cols() != w_tuned.cols() {
        return Err(Error::Parameter("rotation requires matching shapes".into()));
    }
    let k = cap.min(w_base.rows()).min(w_base.cols());
    if bitwise_equal(w_base, w_tuned) {
        return Ok(0.0);
    }
    let s_base = linalg::svd_full(w_base)?;
    let s_tuned = linalg::svd_full(w_tuned)?;
    let b1 = OrthonormalBasis::new(s_base.u.leading_columns(k), OrthonormalBasis::DEFAULT_TOL)?;
    let b2 = OrthonormalBasis::new(s_tuned.u.leading_columns(k), OrthonormalBasis::DEFAULT_TOL)?;
    let angles = linalg::principal_angles(&b1, &b2)?;
    Ok(angles.iter().sum::<f64>() / k as f64)
}

/// Per-layer mean left-subspace rotation between two models; matrices are
/// grouped by "layer.type" naming, and each layer averages its matched types.
/// An empty `types` set matches every type.
pub fn rotation_layerwise(
    base: &ModelParams,
    tuned: &ModelParams,
    types: &[String],
    cap: usize,
) -> Result<RotationReport> {
    if cap == 0 {
        return Err(Error::Parameter("cap must be >= 1".into()));
    }
    let mut per_layer: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut seen_layers: Vec<String> = Vec::new();
    for (name, w_base) in &base.layers {
        let (layer, ty) = split_layer_type(name);
        if !seen_layers.iter().any(|l| l == layer) {
            seen_layers.push(layer.to_string());
        }
        if !types.is_empty() && !types.iter().any(|t| t == ty) {
            continue;
        }
        let w_tuned = tuned
            .layers
            .get(name)
            .ok_or_else(|| Error::Parameter(format!("tuned model lacks layer '{name}'")))?;
        let deg = left_rotation(w_base, w_tuned, cap)?;
        per_layer.entry(layer.to_string()).or_default().push(deg);
    }
    let mut values = Vec::new();
    let mut warnings = Vec::new();
    seen_layers.sort();
    for layer in seen_layers {
        match per_layer.get(&layer) {
            Some(vals) => {
                values.push((layer, vals.iter().sum::<f64>() / vals.len() as f64))
            }
            None => warnings.push(format!("layer '{layer}' has no matching types; omitted")),
        }
    }
    Ok(RotationReport { values, warnings })
}

/// Mean principal angle (degrees) between the first r left singular vectors
/// of a weight pair, for each requested r.
pub fn rotation_rankwise(
    w_base: &DenseMatrix,
    w_tuned: &DenseMatrix,
    ranks: &[usize],
) -> Result<Vec<(usize, f64)>> {
    if w_base.rows() != w_tuned.rows() || w_base.cols() != w_tuned.cols() {
        return Err(Error::Parameter("rotation requires matching shapes".into()));
    }
    let max_r = w_base.rows().min(w_base.cols());
    let identical = bitwise_equal(w_base, w_tuned);
    let s_base = linalg::svd_full(w_base)?;
    let s_tuned = linalg::svd_full(w_tuned)?;
    let mut out = Vec::with_capacity(ranks.len());
    for &r in ranks {
        if r < 1 || r > max_r {
            return Err(Error::Parameter(format!("rank {r} outside [1, {max_r}]")));
        }
        if identical {
            out.push((r, 0.0));
            continue;
        }
        let b1 = OrthonormalBasis::new(s_base.u.leading_columns(r), OrthonormalBasis::DEFAULT_TOL)?;
        let b2 = OrthonormalBasis::new(s_tuned.u.leading_columns(r), OrthonormalBasis::DEFAULT_TOL)?;
        let angles = linalg::principal_angles(&b1, &b2)?;
        out.push((r, angles.iter().sum::<f64>() / r as f64));
    }
    Ok(out)
}

/// Pooled hidden vectors for one (model, dataset) pair.
#[derive(Debug, Clone)]
pub struct HiddenStateSet {
    pub model_tag: String,
    pub dataset_tag: String,
    /// N_d x p matrix of pooled hidden vectors, one row per prompt.
    pub rows: DenseMatrix,
}

#[derive(Debug, Clone)]
pub struct DriftModelRecord {
    pub model_tag: String,
    /// Centroid distance to the base model in the raw p-dimensional space.
    pub d_hidden: f64,
    /// Centroid distance in the shared 2D projection.
    pub d_pca: f64,
    pub centroid: [f64; 2],
    /// N_d x 2 projected coordinates of this model's rows.
    pub coords: DenseMatrix,
}

#[derive(Debug, Clone)]
pub struct DriftReport {
    pub base_tag: String,
    pub models: Vec<DriftModelRecord>,
}

fn centroid(rows: &DenseMatrix) -> Vec<f64> {
    let n = rows.rows() as f64;
    (0..rows.cols())
        .map(|j| (0..rows.rows()).map(|i| rows.get(i, j)).sum::<f64>() / n)
        .collect()
}

/// Centroid drift of each model from the base model, plus shared 2D
/// visualization coordinates: stack all rows, subtract the combined mean, and
/// project onto the top-2 right singular directions of the centered stack.
pub fn hidden_drift(sets: &[HiddenStateSet], base_tag: &str) -> Result<DriftReport> {
    let base = sets
        .iter()
        .find(|s| s.model_tag == base_tag)
        .ok_or_else(|| Error::Parameter(format!("no set tagged '{base_tag}'")))?;
    let p = base.rows.cols();
    let d = &base.dataset_tag;
    for s in sets {
        if s.rows.cols() != p {
            return Err(Error::Parameter(format!(
                "set '{}' has dimension {}, expected {p}",
                s.model_tag,
                s.rows.cols()
            )));
        }
        if &s.dataset_tag != d {
            return Err(Error::Parameter("all sets must share one dataset tag".into()));
        }
    }
    let total_rows: usize = sets.iter().map(|s| s.rows.rows()).sum();
    let mut stack = DenseMatrix::zeros(total_rows, p);
    let mut row = 0;
    for s in sets {
        for i in 0..s.rows.rows() {
            for j in 0..p {
                stack.set(row, j, s.rows.get(i, j));
            }
            row += 1;
        }
    }
    let combined_mean = centroid(&stack);
    let centered = DenseMatrix::from_fn(total_rows, p, |i, j| stack.get(i, j) - combined_mean[j]);
    let svd = linalg::svd_full(&centered)?;
    let dims = 2.min(svd.v.cols());
    // p x dims projection onto the leading right singular directions.
    let proj = svd.v.leading_columns(dims);

    let mu_base = centroid(&base.rows);
    let mut models = Vec::with_capacity(sets.len());
    for s in sets {
        let mu = centroid(&s.rows);
        let d_hidden = mu
            .iter()
            .zip(&mu_base)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let centered_rows =
            DenseMatrix::from_fn(s.rows.rows(), p, |i, j| s.rows.get(i, j) - combined_mean[j]);
        let coords2 = centered_rows.matmul(&proj);
        let coords = if dims == 2 {
            coords2
        } else {
            // Pad a missing second direction with zeros.
            DenseMatrix::from_fn(s.rows.rows(), 2, |i, j| {
                if j < dims {
                    coords2.get(i, j)
                } else {
                    0.0
                }
            })
        };
        let c2 = centroid(&coords);
        models.push(DriftModelRecord {
            model_tag: s.model_tag.clone(),
            d_hidden,
            d_pca: 0.0, // filled below once the base centroid is known
            centroid: [c2[0], c2[1]],
            coords,
        });
    }
    let base_centroid = models
        .iter()
        .find(|m| m.model_tag == base_tag)
        .map(|m| m.centroid)
        .expect("base model present");
    for m in &mut models {
        let dx = m.centroid[0] - base_centroid[0];
        let dy = m.centroid[1] - base_centroid[1];
        m.d_pca = (dx * dx + dy * dy).sqrt();
    }
    Ok(DriftReport { base_tag: base_tag.to_string(), models })
}

/// One sequence of per-step probability vectors over a fixed vocabulary.
#[derive(Debug, Clone)]
pub struct ProbSequence {
    steps: Vec<Vec<f64>>,
}

impl ProbSequence {
    pub const DEFAULT_MAX_LEN: usize = 128;

    pub fn new(steps: Vec<Vec<f64>>, max_len: usize) -> Result<Self> {
        if steps.is_empty() || steps.len() > max_len {
            return Err(Error::Validation(format!(
                "sequence length must lie in [1, {max_len}]"
            )));
        }
        let v = steps[0].len();
        for (t, p) in steps.iter().enumerate() {
            if p.len() != v {
                return Err(Error::Validation("all steps must share one vocabulary".into()));
            }
            let mut sum = 0.0;
            for &x in p {
                if !(x >= 0.0) || !x.is_finite() {
                    return Err(Error::Validation(format!(
                        "step {t} contains a negative or non-finite probability"
                    )));
                }
                sum += x;
            }
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Validation(format!(
                    "step {t} probabilities sum to {sum}, expected 1"
                )));
            }
        }
        Ok(Self { steps })
    }

    pub fn steps(&self) -> &[Vec<f64>] {
        &self.steps
    }

    /// Mean per-step entropy (natural log), with 0 * ln 0 = 0.
    pub fn mean_entropy(&self) -> f64 {
        let total: f64 = self
            .steps
            .iter()
            .map(|p| -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>())
            .sum();
        total / self.steps.len() as f64
    }
}

#[derive(Debug, Clone)]
pub struct EntropyReport {
    /// Per-sequence mean entropies in input order.
    pub e_values: Vec<f64>,
    /// (grid, density) of the Gaussian KDE; absent when fewer than 2
    /// sequences or zero spread.
    pub kde: Option<(Vec<f64>, Vec<f64>)>,
    /// Bandwidth 1.06 * s * N^{-1/5} when the KDE exists.
    pub bandwidth: Option<f64>,
}

pub const KDE_GRID_POINTS: usize = 256;

/// Silverman's rule of thumb: h = 1.06 * s * N^{-1/5}.
pub fn silverman_bandwidth(n: usize, s: f64) -> f64 {
    1.06 * s * (n as f64).powf(-0.2)
}

/// Per-sequence mean entropies plus a Gaussian KDE over them, bandwidth
/// 1.06 * s * N^{-1/5}, on a 256-point grid spanning [min - 3h, max + 3h].
pub fn entropy_profile(seqs: &[ProbSequence]) -> Result<EntropyReport> {
    if seqs.is_empty() {
        return Err(Error::Validation("need at least one sequence".into()));
    }
    let e_values: Vec<f64> = seqs.iter().map(ProbSequence::mean_entropy).collect();
    let n = e_values.len();
    if n < 2 {
        return Ok(EntropyReport { e_values, kde: None, bandwidth: None });
    }
    let mean = e_values.iter().sum::<f64>() / n as f64;
    let var = e_values.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (n as f64 - 1.0);
    let s = var.sqrt();
    if s == 0.0 {
        return Ok(EntropyReport { e_values, kde: None, bandwidth: None });
    }
    let h = silverman_bandwidth(n, s);
    let lo = e_values.iter().cloned().fold(f64::INFINITY, f64::min) - 3.0 * h;
    let hi = e_values.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 3.0 * h;
    let step = (hi - lo) / (KDE_GRID_POINTS as f64 - 1.0);
    let norm = 1.0 / ((2.0 * std::f64::consts::PI).sqrt() * h * n as f64);
    let mut grid = Vec::with_capacity(KDE_GRID_POINTS);
    let mut density = Vec::with_capacity(KDE_GRID_POINTS);
    for i in 0..KDE_GRID_POINTS {
        let x = lo + step * i as f64;
        let d: f64 = e_values
            .iter()
            .map(|&e| {
                let z = (x - e) / h;
                (-0.5 * z * z).exp()
            })
            .sum::<f64>()
            * norm;
        grid.push(x);
        density.push(d);
    }
    Ok(EntropyReport { e_values, kde: Some((grid, density)), bandwidth: Some(h) })
}
