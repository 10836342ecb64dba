//! Desk-scale continual-learning harness: pretrain a small model on task A,
//! fine-tune on task B with the projected-block penalty, and measure
//! adaptation versus forgetting.
//!
//! Training is plain gradient descent with a constant learning rate and a
//! seeded minibatch shuffle, so a (seed, config) pair fully determines the
//! trajectory bytes.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::subspace::{self, ProtectedBasis, RegularizerConfig};

/// Standard normal draw via Box-Muller; one value per pair keeps the stream
/// layout trivial to reproduce.
pub fn sample_gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = loop {
        let u: f64 = rng.gen();
        if u > 0.0 {
            break u;
        }
    };
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| scale * sample_gaussian(rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    Linear { input_dim: usize, output_dim: usize },
    TwoLayerTanh { input_dim: usize, hidden_dim: usize, output_dim: usize },
    LinearSoftmaxClassifier { input_dim: usize, n_classes: usize },
}

impl Architecture {
    pub fn input_dim(&self) -> usize {
        match *self {
            Architecture::Linear { input_dim, .. }
            | Architecture::TwoLayerTanh { input_dim, .. }
            | Architecture::LinearSoftmaxClassifier { input_dim, .. } => input_dim,
        }
    }

    pub fn output_dim(&self) -> usize {
        match *self {
            Architecture::Linear { output_dim, .. }
            | Architecture::TwoLayerTanh { output_dim, .. } => output_dim,
            Architecture::LinearSoftmaxClassifier { n_classes, .. } => n_classes,
        }
    }

    /// Layer names and shapes in the fixed map order used everywhere.
    pub fn layer_shapes(&self) -> Vec<(String, usize, usize)> {
        match *self {
            Architecture::Linear { input_dim, output_dim } => {
                vec![("dense".into(), output_dim, input_dim)]
            }
            Architecture::TwoLayerTanh { input_dim, hidden_dim, output_dim } => vec![
                ("layer1".into(), hidden_dim, input_dim),
                ("layer2".into(), output_dim, hidden_dim),
            ],
            Architecture::LinearSoftmaxClassifier { input_dim, n_classes } => {
                vec![("logits".into(), n_classes, input_dim)]
            }
        }
    }
}

/// Named collection of 2D weight matrices standing in for a model.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub arch: Architecture,
    pub layers: BTreeMap<String, DenseMatrix>,
}

impl ModelParams {
    /// Seeded Gaussian init scaled by 1/sqrt(fan_in).
    pub fn init(arch: Architecture, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = BTreeMap::new();
        for (name, rows, cols) in arch.layer_shapes() {
            let scale = 1.0 / (cols as f64).sqrt();
            layers.insert(name, gaussian_matrix(&mut rng, rows, cols, scale));
        }
        Self { arch, layers }
    }

    pub fn from_layers(arch: Architecture, layers: BTreeMap<String, DenseMatrix>) -> Result<Self> {
        for (name, rows, cols) in arch.layer_shapes() {
            match layers.get(&name) {
                Some(w) if w.rows() == rows && w.cols() == cols => {}
                Some(w) => {
                    return Err(Error::Parameter(format!(
                        "layer '{name}' has shape {}x{}, expected {rows}x{cols}",
                        w.rows(),
                        w.cols()
                    )))
                }
                None => return Err(Error::Parameter(format!("missing layer '{name}'"))),
            }
        }
        Ok(Self { arch, layers })
    }

    /// Pooled hidden representation per input row: the post-activation of the
    /// penultimate stage (the input itself for single-layer models).
    pub fn hidden_states(&self, inputs: &DenseMatrix) -> DenseMatrix {
        match self.arch {
            Architecture::TwoLayerTanh { .. } => {
                let w1 = &self.layers["layer1"];
                let z = inputs.matmul(&w1.transpose());
                DenseMatrix::from_fn(z.rows(), z.cols(), |i, j| z.get(i, j).tanh())
            }
            Architecture::Linear { .. } => inputs.matmul(&self.layers["dense"].transpose()),
            Architecture::LinearSoftmaxClassifier { .. } => {
                inputs.matmul(&self.layers["logits"].transpose())
            }
        }
    }
}

/// One split of sample rows: `inputs` is N x d_in, `targets` is N x d_out
/// (one-hot rows for the classifier).
#[derive(Debug, Clone)]
pub struct Dataset {
    pub inputs: DenseMatrix,
    pub targets: DenseMatrix,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn gather(&self, idx: &[usize]) -> (DenseMatrix, DenseMatrix) {
        let x = DenseMatrix::from_fn(idx.len(), self.inputs.cols(), |i, j| {
            self.inputs.get(idx[i], j)
        });
        let y = DenseMatrix::from_fn(idx.len(), self.targets.cols(), |i, j| {
            self.targets.get(idx[i], j)
        });
        (x, y)
    }
}

/// Train and eval splits for one task.
#[derive(Debug, Clone)]
pub struct Task {
    pub train: Dataset,
    pub eval: Dataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Eval,
}

/// Two related regression tasks: teacher B is teacher A rotated in a seeded
/// output plane, the desk-scale analogue of a domain shift.
#[derive(Debug, Clone)]
pub struct SyntheticTaskPair {
    pub input_dim: usize,
    pub output_dim: usize,
    pub rotation_angle: f64,
    pub noise_std: f64,
    pub n_train: usize,
    pub n_eval: usize,
    pub seed: u64,
    pub teacher_a: DenseMatrix,
    pub teacher_b: DenseMatrix,
    pub task_a: Task,
    pub task_b: Task,
}

/// Orthonormalize the rows of a square matrix by Gram-Schmidt.
fn orthonormalize_square(m: &DenseMatrix) -> DenseMatrix {
    let n = m.rows();
    let mut rows: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| m.get(i, j)).collect()).collect();
    for i in 0..n {
        for _ in 0..2 {
            for p in 0..i {
                let proj: f64 = (0..n).map(|j| rows[i][j] * rows[p][j]).sum();
                for j in 0..n {
                    rows[i][j] -= proj * rows[p][j];
                }
            }
        }
        let norm: f64 = rows[i].iter().map(|x| x * x).sum::<f64>().sqrt();
        for j in 0..n {
            rows[i][j] /= norm;
        }
    }
    DenseMatrix::from_fn(n, n, |i, j| rows[i][j])
}

/// Rotation by `angle_deg` in the plane spanned by a seeded orthonormal pair.
fn planar_rotation(dim: usize, angle_deg: f64, rng: &mut ChaCha8Rng) -> Result<DenseMatrix> {
    if angle_deg == 0.0 {
        return Ok(DenseMatrix::identity(dim));
    }
    if dim < 2 {
        return Err(Error::Parameter(
            "nonzero rotation_angle requires output_dim >= 2".into(),
        ));
    }
    let mut u: Vec<f64> = (0..dim).map(|_| sample_gaussian(rng)).collect();
    let un: f64 = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    u.iter_mut().for_each(|x| *x /= un);
    let mut w: Vec<f64> = (0..dim).map(|_| sample_gaussian(rng)).collect();
    for _ in 0..2 {
        let proj: f64 = w.iter().zip(&u).map(|(a, b)| a * b).sum();
        w.iter_mut().zip(&u).for_each(|(a, b)| *a -= proj * b);
    }
    let wn: f64 = w.iter().map(|x| x * x).sum::<f64>().sqrt();
    w.iter_mut().for_each(|x| *x /= wn);
    let theta = angle_deg.to_radians();
    let (c, s) = (theta.cos(), theta.sin());
    let mut r = DenseMatrix::identity(dim);
    for i in 0..dim {
        for j in 0..dim {
            let v = r.get(i, j) + (c - 1.0) * (u[i] * u[j] + w[i] * w[j]) + s * (w[i] * u[j] - u[i] * w[j]);
            r.set(i, j, v);
        }
    }
    Ok(r)
}

fn regression_split(
    teacher: &DenseMatrix,
    n: usize,
    noise_std: f64,
    rng: &mut ChaCha8Rng,
) -> Dataset {
    let d_in = teacher.cols();
    let inputs = gaussian_matrix(rng, n, d_in, 1.0);
    let clean = inputs.matmul(&teacher.transpose());
    let targets = if noise_std > 0.0 {
        DenseMatrix::from_fn(clean.rows(), clean.cols(), |i, j| {
            clean.get(i, j) + noise_std * sample_gaussian(rng)
        })
    } else {
        clean
    };
    Dataset { inputs, targets }
}

#[allow(clippy::too_many_arguments)]
pub fn make_task_pair(
    input_dim: usize,
    output_dim: usize,
    rotation_angle: f64,
    noise_std: f64,
    n_train: usize,
    n_eval: usize,
    seed: u64,
) -> Result<SyntheticTaskPair> {
    if input_dim == 0 || output_dim == 0 || n_train == 0 || n_eval == 0 {
        return Err(Error::Parameter("task dims and sample counts must be >= 1".into()));
    }
    if noise_std < 0.0 {
        return Err(Error::Parameter("noise_std must be >= 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw = gaussian_matrix(&mut rng, output_dim, input_dim, 1.0);
    let teacher_a = if output_dim == input_dim {
        orthonormalize_square(&raw)
    } else {
        raw.scale(1.0 / (input_dim as f64).sqrt())
    };
    let rotation = planar_rotation(output_dim, rotation_angle, &mut rng)?;
    let teacher_b = if rotation_angle == 0.0 {
        teacher_a.clone()
    } else {
        rotation.matmul(&teacher_a)
    };
    let task_a = Task {
        train: regression_split(&teacher_a, n_train, noise_std, &mut rng),
        eval: regression_split(&teacher_a, n_eval, noise_std, &mut rng),
    };
    let task_b = Task {
        train: regression_split(&teacher_b, n_train, noise_std, &mut rng),
        eval: regression_split(&teacher_b, n_eval, noise_std, &mut rng),
    };
    Ok(SyntheticTaskPair {
        input_dim,
        output_dim,
        rotation_angle,
        noise_std,
        n_train,
        n_eval,
        seed,
        teacher_a,
        teacher_b,
        task_a,
        task_b,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    /// Plain supervised training, no penalty.
    Sft,
    /// Projected-block penalty with the configured rank.
    Rpsft,
    /// Full-rank anchoring, the k = min(m, n) limit.
    L2Init,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub reg: RegularizerConfig,
    pub seed: u64,
    pub mode: TrainMode,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Parameter("learning_rate must be > 0".into()));
        }
        if self.steps == 0 {
            return Err(Error::Parameter("steps must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Parameter("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// One optimization-step record.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub step: usize,
    pub task_loss: f64,
    pub penalty: f64,
    pub total_loss: f64,
    /// (protected-block drift, applied gradient Frobenius norm) per layer, in
    /// layer-name order.
    pub per_layer: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct TrainTrace {
    pub layer_names: Vec<String>,
    pub records: Vec<StepRecord>,
}

impl TrainTrace {
    /// CSV with documented columns; `header` lines are prefixed with `# `.
    pub fn to_csv(&self, header: &str) -> String {
        let mut out = String::new();
        for line in header.lines() {
            out.push_str("# ");
            out.push_str(line);
            out.push('\n');
        }
        out.push_str("step,task_loss,penalty,total_loss");
        for name in &self.layer_names {
            out.push_str(&format!(",drift_{name},grad_norm_{name}"));
        }
        out.push('\n');
        for rec in &self.records {
            out.push_str(&format!(
                "{},{},{},{}",
                rec.step,
                fmt_f64(rec.task_loss),
                fmt_f64(rec.penalty),
                fmt_f64(rec.total_loss)
            ));
            for &(drift, gnorm) in &rec.per_layer {
                out.push_str(&format!(",{},{}", fmt_f64(drift), fmt_f64(gnorm)));
            }
            out.push('\n');
        }
        out
    }
}

/// 17 significant digits so CSV round trips are exact.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn batch_loss_and_grads(
    model: &ModelParams,
    data: &Dataset,
    idx: &[usize],
) -> (f64, BTreeMap<String, DenseMatrix>) {
    let (x, y) = data.gather(idx);
    let b = idx.len() as f64;
    let mut grads = BTreeMap::new();
    let loss;
    match model.arch {
        Architecture::Linear { .. } => {
            let w = &model.layers["dense"];
            let resid = x.matmul(&w.transpose()).sub(&y);
            loss = resid.frobenius_norm_sq() / b;
            grads.insert("dense".to_string(), resid.transpose().matmul(&x).scale(2.0 / b));
        }
        Architecture::TwoLayerTanh { .. } => {
            let w1 = &model.layers["layer1"];
            let w2 = &model.layers["layer2"];
            let z = x.matmul(&w1.transpose());
            let a = DenseMatrix::from_fn(z.rows(), z.cols(), |i, j| z.get(i, j).tanh());
            let resid = a.matmul(&w2.transpose()).sub(&y);
            loss = resid.frobenius_norm_sq() / b;
            let d_pred = resid.scale(2.0 / b);
            grads.insert("layer2".to_string(), d_pred.transpose().matmul(&a));
            let d_a = d_pred.matmul(w2);
            let d_z = DenseMatrix::from_fn(d_a.rows(), d_a.cols(), |i, j| {
                let t = a.get(i, j);
                d_a.get(i, j) * (1.0 - t * t)
            });
            grads.insert("layer1".to_string(), d_z.transpose().matmul(&x));
        }
        Architecture::LinearSoftmaxClassifier { .. } => {
            let w = &model.layers["logits"];
            let logits = x.matmul(&w.transpose());
            let mut total = 0.0;
            let probs = DenseMatrix::from_fn(logits.rows(), logits.cols(), |i, j| {
                let row_max = (0..logits.cols()).fold(f64::NEG_INFINITY, |m, c| m.max(logits.get(i, c)));
                let denom: f64 = (0..logits.cols()).map(|c| (logits.get(i, c) - row_max).exp()).sum();
                (logits.get(i, j) - row_max).exp() / denom
            });
            for i in 0..probs.rows() {
                for j in 0..probs.cols() {
                    if y.get(i, j) > 0.0 {
                        total -= y.get(i, j) * probs.get(i, j).max(1e-300).ln();
                    }
                }
            }
            loss = total / b;
            grads.insert("logits".to_string(), probs.sub(&y).transpose().matmul(&x).scale(1.0 / b));
        }
    }
    (loss, grads)
}

fn full_indices(n: usize) -> Vec<usize> {
    (0..n).collect()
}

/// Per-sample task gradients over one split: for each layer, one gradient
/// matrix per sample, in sample order.
pub fn per_sample_gradients(
    model: &ModelParams,
    task: &Task,
    split: Split,
) -> BTreeMap<String, Vec<DenseMatrix>> {
    let data = match split {
        Split::Train => &task.train,
        Split::Eval => &task.eval,
    };
    let mut out: BTreeMap<String, Vec<DenseMatrix>> = BTreeMap::new();
    for i in 0..data.len() {
        let (_, grads) = batch_loss_and_grads(model, data, &[i]);
        for (name, g) in grads {
            out.entry(name).or_default().push(g);
        }
    }
    out
}

/// Mean loss of the model on a task split.
pub fn evaluate(model: &ModelParams, task: &Task, split: Split) -> f64 {
    let data = match split {
        Split::Train => &task.train,
        Split::Eval => &task.eval,
    };
    let (loss, _) = batch_loss_and_grads(model, data, &full_indices(data.len()));
    loss
}

/// Plain supervised pretraining on task A; errors (naming the achieved loss)
/// when the eval loss stays above `target_loss`.
pub fn pretrain(
    arch: Architecture,
    task_a: &Task,
    config: &TrainConfig,
    target_loss: f64,
) -> Result<ModelParams> {
    config.validate()?;
    let model0 = ModelParams::init(arch, config.seed);
    let (model, _) = train_impl(&model0, task_a, &BTreeMap::new(), config, None)?;
    let achieved = evaluate(&model, task_a, Split::Eval);
    if achieved > target_loss {
        return Err(Error::Training(format!(
            "pretraining did not reach target loss {target_loss}: achieved {achieved}"
        )));
    }
    Ok(model)
}

/// Fine-tune with the projected-block penalty evaluated every
/// `reg.update_period` steps; the trace is populated every step.
pub fn train_rpsft(
    model0: &ModelParams,
    task_b: &Task,
    bases: &BTreeMap<String, ProtectedBasis>,
    config: &TrainConfig,
) -> Result<(ModelParams, TrainTrace)> {
    train_impl(model0, task_b, bases, config, None)
}

/// Like `train_rpsft` but stops early once the full train-split task loss
/// drops to `target_loss`. Returns whether the target was reached.
pub fn train_to_target(
    model0: &ModelParams,
    task_b: &Task,
    bases: &BTreeMap<String, ProtectedBasis>,
    config: &TrainConfig,
    target_loss: f64,
) -> Result<(ModelParams, TrainTrace, bool)> {
    let (model, trace) = train_impl(model0, task_b, bases, config, Some(target_loss))?;
    let reached = evaluate(&model, task_b, Split::Train) <= target_loss;
    Ok((model, trace, reached))
}

fn train_impl(
    model0: &ModelParams,
    task: &Task,
    bases: &BTreeMap<String, ProtectedBasis>,
    config: &TrainConfig,
    stop_at_loss: Option<f64>,
) -> Result<(ModelParams, TrainTrace)> {
    config.validate()?;
    let use_penalty = config.mode != TrainMode::Sft && config.reg.lambda > 0.0 && !bases.is_empty();
    for (name, basis) in bases {
        let w = model0
            .layers
            .get(name)
            .ok_or_else(|| Error::Parameter(format!("basis for unknown layer '{name}'")))?;
        if w.rows() != basis.out_dim() || w.cols() != basis.in_dim() {
            return Err(Error::Parameter(format!(
                "basis shape mismatch for layer '{name}'"
            )));
        }
    }
    let lambda = config.reg.lambda;
    let period = config.reg.update_period;
    let n = task.train.len();
    let mut model = model0.clone();
    let layer_names: Vec<String> = model.layers.keys().cloned().collect();
    let mut records = Vec::with_capacity(config.steps);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let full_batch = config.batch_size >= n;
    let mut perm: Vec<usize> = full_indices(n);
    let mut cursor = n; // forces a shuffle before the first minibatch

    for step in 0..config.steps {
        let idx: Vec<usize> = if full_batch {
            full_indices(n)
        } else {
            if cursor + config.batch_size > n {
                // Seeded Fisher-Yates reshuffle at epoch boundaries.
                for i in (1..n).rev() {
                    let j = rng.gen_range(0..=i);
                    perm.swap(i, j);
                }
                cursor = 0;
            }
            let out = perm[cursor..cursor + config.batch_size].to_vec();
            cursor += config.batch_size;
            out
        };

        let (task_loss, mut grads) = batch_loss_and_grads(&model, &task.train, &idx);
        let penalty_step = use_penalty && step % period == 0;
        let mut penalty_value = 0.0;
        if penalty_step {
            for (name, basis) in bases {
                let w = &model.layers[name];
                penalty_value += subspace::penalty(w, basis)?;
                let pg = subspace::penalty_gradient(w, basis)?.scale(lambda);
                let g = grads.get_mut(name).expect("layer gradient present");
                *g = g.add(&pg);
            }
        }
        let total_loss = if penalty_step {
            task_loss + lambda * penalty_value
        } else {
            task_loss
        };
        if !total_loss.is_finite() {
            return Err(Error::Training(format!(
                "non-finite loss at step {step}: task={task_loss}, penalty={penalty_value}"
            )));
        }

        let mut per_layer = Vec::with_capacity(layer_names.len());
        for name in &layer_names {
            let drift = match bases.get(name) {
                Some(basis) => basis
                    .project(&model.layers[name])?
                    .sub(&basis.s_ref)
                    .frobenius_norm(),
                None => 0.0,
            };
            per_layer.push((drift, grads[name].frobenius_norm()));
        }
        records.push(StepRecord {
            step,
            task_loss,
            penalty: penalty_value,
            total_loss,
            per_layer,
        });

        for name in &layer_names {
            let updated = {
                let w = &model.layers[name];
                w.sub(&grads[name].scale(config.learning_rate))
            };
            if !updated.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite weights in layer '{name}' after step {step}"
                )));
            }
            model.layers.insert(name.clone(), updated);
        }

        if let Some(target) = stop_at_loss {
            let current = evaluate(&model, task, Split::Train);
            if current <= target {
                break;
            }
        }
    }
    Ok((model, TrainTrace { layer_names, records }))
}

/// Per-layer stationarity diagnostics.
#[derive(Debug, Clone)]
pub struct LayerStationarity {
    pub layer: String,
    /// `||U_k^T (W - W0) V_k||_F`
    pub drift_lhs: f64,
    /// `||grad f||_F / (2 lambda)`; absent when lambda = 0.
    pub bound_rhs: Option<f64>,
    /// `||U_k^T grad_f V_k + 2 lambda A||_F`
    pub stationary_residual: f64,
}

#[derive(Debug, Clone)]
pub struct StationarityReport {
    pub grad_norm: f64,
    pub per_layer: Vec<LayerStationarity>,
}

/// Stationarity check against the full task-B train batch.
pub fn stationarity_check(
    model: &ModelParams,
    task_b: &Task,
    bases: &BTreeMap<String, ProtectedBasis>,
    lambda: f64,
) -> Result<StationarityReport> {
    let (_, grads) = batch_loss_and_grads(model, &task_b.train, &full_indices(task_b.train.len()));
    stationarity_check_from_grads(model, &grads, bases, lambda)
}

/// Same check with externally supplied per-layer task gradients; lets callers
/// use analytic gradients for closed-form problems.
pub fn stationarity_check_from_grads(
    model: &ModelParams,
    grads: &BTreeMap<String, DenseMatrix>,
    bases: &BTreeMap<String, ProtectedBasis>,
    lambda: f64,
) -> Result<StationarityReport> {
    let mut per_layer = Vec::new();
    let mut grad_norm_sq = 0.0;
    for (name, g) in grads {
        grad_norm_sq += g.frobenius_norm_sq();
        if let Some(basis) = bases.get(name) {
            let w = model
                .layers
                .get(name)
                .ok_or_else(|| Error::Parameter(format!("missing layer '{name}'")))?;
            let a = basis.project(w)?.sub(&basis.s_ref);
            let drift_lhs = a.frobenius_norm();
            let g_proj = basis.project(g)?;
            let stationary_residual = g_proj.add(&a.scale(2.0 * lambda)).frobenius_norm();
            let bound_rhs = if lambda > 0.0 {
                Some(g.frobenius_norm() / (2.0 * lambda))
            } else {
                None
            };
            per_layer.push(LayerStationarity {
                layer: name.clone(),
                drift_lhs,
                bound_rhs,
                stationary_residual,
            });
        }
    }
    Ok(StationarityReport {
        grad_norm: grad_norm_sq.sqrt(),
        per_layer,
    })
}
