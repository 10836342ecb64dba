//! Command-line harness: training runs, flow and rank-selection studies,
//! diagnostics, checkpoint inspection, and preset pipelines.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical error, 4 I/O or
//! file-format error.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rpsft::checkpoint::{save_bases, save_model, CheckpointContainer};
use rpsft::config::ExperimentConfig;
use rpsft::error::{Error, Result};
use rpsft::flow::{closed_form_constant, integrate_flow, FlowConfig, Forcing};
use rpsft::linalg::DenseMatrix;
use rpsft::presets::{diag_entropy, diag_firstorder, run_preset, PRESET_NAMES};
use rpsft::rank::{curves, rank_boundary, CoordinateProfile, TradeoffConfig};
use rpsft::subspace::{build_basis, RegularizerConfig};
use rpsft::trainer::{
    evaluate, fmt_f64, make_task_pair, pretrain, sample_gaussian, train_rpsft, Architecture,
    Split, TrainConfig, TrainMode,
};

#[derive(Parser)]
#[command(name = "rpsft", version, about = "Rotation-preserving fine-tuning harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for CSV artifacts and checkpoints.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Repeatable key=value override applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl CommonArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => ExperimentConfig::new(),
        };
        for assignment in &self.set {
            cfg.apply_set(assignment)?;
        }
        if let Some(seed) = self.seed {
            cfg.set("seed", seed);
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain on task A, fine-tune on task B with the projected-block
    /// penalty, and write the trace plus checkpoints.
    Train(CommonArgs),
    /// Integrate the regularized gradient flow and report residuals.
    Gradflow(CommonArgs),
    /// Rank-selection trade-off curves on a seeded coordinate profile.
    Rankselect(CommonArgs),
    /// Diagnostics over seeded pipelines.
    Diag {
        #[command(subcommand)]
        which: DiagCommand,
    },
    /// Lists the tensors of a checkpoint file.
    Inspect { path: PathBuf },
    /// Runs a named preset pipeline.
    Preset {
        #[arg(long)]
        preset: String,
        #[command(flatten)]
        common: CommonArgs,
    },
}

#[derive(Subcommand)]
enum DiagCommand {
    /// Projected gradient-energy curve.
    Fisher(CommonArgs),
    /// First-order alignment between updates and task-A gradients.
    Firstorder(CommonArgs),
    /// Left-subspace rotation, layerwise and rankwise.
    Rotation(CommonArgs),
    /// Hidden-state centroid drift with 2D projection coordinates.
    Drift(CommonArgs),
    /// Per-sequence entropy profile with KDE.
    Entropy(CommonArgs),
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => cmd_train(&args.resolve()?, &args.out),
        Command::Gradflow(args) => cmd_gradflow(&args.resolve()?, &args.out),
        Command::Rankselect(args) => cmd_rankselect(&args.resolve()?, &args.out),
        Command::Diag { which } => match which {
            DiagCommand::Fisher(args) => report(run_preset("fig2-energy", &args.out, &args.resolve()?)?),
            DiagCommand::Firstorder(args) => report(diag_firstorder(&args.out, &args.resolve()?)?),
            DiagCommand::Rotation(args) => report(run_preset("rotation", &args.out, &args.resolve()?)?),
            DiagCommand::Drift(args) => report(run_preset("hidden-drift", &args.out, &args.resolve()?)?),
            DiagCommand::Entropy(args) => report(diag_entropy(&args.out, &args.resolve()?)?),
        },
        Command::Inspect { path } => cmd_inspect(&path),
        Command::Preset { preset, common } => {
            if !PRESET_NAMES.contains(&preset.as_str()) {
                return Err(Error::Config(format!(
                    "unknown preset '{preset}'; valid presets: {}",
                    PRESET_NAMES.join(", ")
                )));
            }
            report(run_preset(&preset, &common.out, &common.resolve()?)?)
        }
    }
}

fn report(files: Vec<PathBuf>) -> Result<()> {
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    std::fs::write(&path, contents)?;
    Ok(path)
}

fn header(cfg: &ExperimentConfig) -> String {
    cfg.echo()
        .lines()
        .map(|l| format!("# {l}\n"))
        .collect()
}

const TRAIN_KEYS: &[&str] = &[
    "seed", "arch", "input_dim", "hidden_dim", "output_dim", "rotation_angle", "noise_std",
    "n_train", "n_eval", "learning_rate", "steps", "batch_size", "lambda", "k", "update_period",
    "mode", "pretrain_steps", "pretrain_target", "layers",
];

fn cmd_train(config: &ExperimentConfig, out: &Path) -> Result<()> {
    let mut cfg = config.clone();
    cfg.ensure("seed", 1u64);
    cfg.ensure("arch", "linear");
    cfg.ensure("input_dim", 16usize);
    cfg.ensure("hidden_dim", 16usize);
    cfg.ensure("output_dim", 16usize);
    cfg.ensure("rotation_angle", 30.0);
    cfg.ensure("noise_std", 0.0);
    cfg.ensure("n_train", 128usize);
    cfg.ensure("n_eval", 64usize);
    cfg.ensure("learning_rate", 0.05);
    cfg.ensure("steps", 400usize);
    cfg.ensure("batch_size", 128usize);
    cfg.ensure("lambda", 1.0);
    cfg.ensure("update_period", 1usize);
    cfg.ensure("mode", "rpsft");
    cfg.ensure("pretrain_steps", 600usize);
    cfg.ensure("pretrain_target", 1e-4);
    cfg.check_keys(TRAIN_KEYS)?;

    let seed = cfg.get_u64("seed", 1)?;
    let input_dim = cfg.get_usize_checked("input_dim", 16, |v| v >= 1, "[1, inf)")?;
    let hidden_dim = cfg.get_usize_checked("hidden_dim", 16, |v| v >= 1, "[1, inf)")?;
    let output_dim = cfg.get_usize_checked("output_dim", 16, |v| v >= 1, "[1, inf)")?;
    let arch = match cfg.get_str("arch", "linear").as_str() {
        "linear" => Architecture::Linear { input_dim, output_dim },
        "two_layer_tanh" => Architecture::TwoLayerTanh { input_dim, hidden_dim, output_dim },
        other => {
            return Err(Error::Config(format!(
                "key 'arch': unknown architecture '{other}' (linear | two_layer_tanh)"
            )))
        }
    };
    let mode = match cfg.get_str("mode", "rpsft").as_str() {
        "sft" => TrainMode::Sft,
        "rpsft" => TrainMode::Rpsft,
        "l2_init" => TrainMode::L2Init,
        other => {
            return Err(Error::Config(format!(
                "key 'mode': unknown mode '{other}' (sft | rpsft | l2_init)"
            )))
        }
    };
    let angle = cfg.get_f64("rotation_angle", 30.0)?;
    let noise = cfg.get_f64_checked("noise_std", 0.0, |v| v >= 0.0, "[0, inf)")?;
    let n_train = cfg.get_usize_checked("n_train", 128, |v| v >= 1, "[1, inf)")?;
    let n_eval = cfg.get_usize_checked("n_eval", 64, |v| v >= 1, "[1, inf)")?;
    let lr = cfg.get_f64_checked("learning_rate", 0.05, |v| v > 0.0, "(0, inf)")?;
    let steps = cfg.get_usize_checked("steps", 400, |v| v >= 1, "[1, inf)")?;
    let batch = cfg.get_usize_checked("batch_size", 128, |v| v >= 1, "[1, inf)")?;
    let lambda = cfg.get_f64_checked("lambda", 1.0, |v| v >= 0.0, "[0, inf)")?;
    let update_period = cfg.get_usize_checked("update_period", 1, |v| v >= 1, "[1, inf)")?;
    let pre_steps = cfg.get_usize_checked("pretrain_steps", 600, |v| v >= 1, "[1, inf)")?;
    let pre_target = cfg.get_f64_checked("pretrain_target", 1e-4, |v| v > 0.0, "(0, inf)")?;
    let selector: Vec<String> = match cfg.get_str("layers", "").as_str() {
        "" => vec![],
        list => list.split(',').map(|s| s.trim().to_string()).collect(),
    };

    let pair = make_task_pair(input_dim, output_dim, angle, noise, n_train, n_eval, seed)?;
    let pre_cfg = TrainConfig {
        learning_rate: lr,
        steps: pre_steps,
        batch_size: batch,
        reg: RegularizerConfig::new(0.0, 0, 1, vec![])?,
        seed,
        mode: TrainMode::Sft,
    };
    let model0 = pretrain(arch, &pair.task_a, &pre_cfg, pre_target)?;

    let reg = RegularizerConfig::new(lambda, cfg.get_usize("k", 0)?, update_period, selector)?;
    let mut bases = BTreeMap::new();
    if mode != TrainMode::Sft {
        for (name, w) in &model0.layers {
            if !reg.selects(name) {
                continue;
            }
            let full = w.rows().min(w.cols());
            let k_layer = if mode == TrainMode::L2Init {
                full
            } else {
                reg.k.min(full)
            };
            if k_layer > 0 {
                bases.insert(name.clone(), build_basis(name, w, k_layer)?);
            }
        }
    }
    let ft_cfg = TrainConfig {
        learning_rate: lr,
        steps,
        batch_size: batch,
        reg,
        seed: seed ^ 0x5eed,
        mode,
    };
    let (model, trace) = train_rpsft(&model0, &pair.task_b, &bases, &ft_cfg)?;

    let hdr = {
        let mut c = cfg.clone();
        c.set("command", "train");
        c.echo()
    };
    let mut files = vec![write_file(out, "trace.csv", &trace.to_csv(&hdr))?];
    let mut summary = header(&cfg);
    summary.push_str("metric,value\n");
    summary.push_str(&format!(
        "task_a_loss_before,{}\n",
        fmt_f64(evaluate(&model0, &pair.task_a, Split::Eval))
    ));
    summary.push_str(&format!(
        "task_a_loss_after,{}\n",
        fmt_f64(evaluate(&model, &pair.task_a, Split::Eval))
    ));
    summary.push_str(&format!(
        "task_b_loss_after,{}\n",
        fmt_f64(evaluate(&model, &pair.task_b, Split::Eval))
    ));
    files.push(write_file(out, "summary.csv", &summary)?);
    std::fs::create_dir_all(out)?;
    save_model(&model0, &out.join("model0.rpsv"))?;
    save_model(&model, &out.join("model.rpsv"))?;
    files.push(out.join("model0.rpsv"));
    files.push(out.join("model.rpsv"));
    if !bases.is_empty() {
        save_bases(&bases, &out.join("bases.rpsv"))?;
        files.push(out.join("bases.rpsv"));
    }
    report(files)
}

const GRADFLOW_KEYS: &[&str] =
    &["seed", "dim", "k", "lambda", "dt", "t_end", "forcing", "omega"];

fn cmd_gradflow(config: &ExperimentConfig, out: &Path) -> Result<()> {
    let mut cfg = config.clone();
    cfg.ensure("seed", 13u64);
    cfg.ensure("dim", 6usize);
    cfg.ensure("k", 2usize);
    cfg.ensure("lambda", 1.0);
    cfg.ensure("dt", 1e-3);
    cfg.ensure("t_end", 5.0);
    cfg.ensure("forcing", "constant");
    cfg.ensure("omega", 4.0);
    cfg.check_keys(GRADFLOW_KEYS)?;
    let seed = cfg.get_u64("seed", 13)?;
    let dim = cfg.get_usize_checked("dim", 6, |v| (2..=64).contains(&v), "[2, 64]")?;
    let k = cfg.get_usize_checked("k", 2, |v| v >= 1 && v <= dim, "[1, dim]")?;
    let lambda = cfg.get_f64_checked("lambda", 1.0, |v| v >= 0.0, "[0, inf)")?;
    let dt = cfg.get_f64_checked("dt", 1e-3, |v| v > 0.0, "(0, inf)")?;
    let t_end = cfg.get_f64_checked("t_end", 5.0, |v| v > 0.0, "(0, inf)")?;
    let omega = cfg.get_f64("omega", 4.0)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w0 = DenseMatrix::from_fn(dim, dim, |_, _| sample_gaussian(&mut rng));
    let basis = build_basis("dense", &w0, k)?;
    let g_proj = DenseMatrix::from_fn(k, k, |_, _| sample_gaussian(&mut rng));
    let forcing = match cfg.get_str("forcing", "constant").as_str() {
        "constant" => Forcing::Constant(
            basis
                .u_k
                .columns()
                .matmul(&g_proj)
                .matmul(&basis.v_k.columns().transpose()),
        ),
        "zero" => Forcing::Constant(DenseMatrix::zeros(dim, dim)),
        "sinusoidal" => Forcing::SinusoidalProjected { amp: g_proj.clone(), omega },
        other => {
            return Err(Error::Config(format!(
                "key 'forcing': unknown mode '{other}' (constant | zero | sinusoidal)"
            )))
        }
    };
    let flow_cfg = FlowConfig { lambda, t_end, dt };
    let trace = integrate_flow(&w0, &basis, &forcing, &flow_cfg)?;
    let resid = rpsft::flow::volterra_residual(&trace, lambda)?;

    let mut summary = header(&cfg);
    summary.push_str("metric,value\n");
    summary.push_str(&format!("volterra_residual,{}\n", fmt_f64(resid)));
    if matches!(cfg.get_str("forcing", "constant").as_str(), "constant") && lambda > 0.0 {
        let a0 = trace.a_series[0].clone();
        let mut max_dev: f64 = 0.0;
        for (idx, &t) in trace.times.iter().enumerate() {
            let expect = closed_form_constant(&g_proj, lambda, &a0, t)?;
            max_dev = max_dev.max(trace.a_series[idx].sub(&expect).frobenius_norm());
        }
        summary.push_str(&format!("max_closed_form_dev,{}\n", fmt_f64(max_dev)));
    }
    let files = vec![
        write_file(out, "flow.csv", &trace.to_csv(&cfg.echo()))?,
        write_file(out, "flow_summary.csv", &summary)?,
    ];
    report(files)
}

const RANKSELECT_KEYS: &[&str] = &["seed", "R", "lambda", "beta", "support_q"];

fn cmd_rankselect(config: &ExperimentConfig, out: &Path) -> Result<()> {
    let mut cfg = config.clone();
    cfg.ensure("seed", 17u64);
    cfg.ensure("R", 6usize);
    cfg.ensure("lambda", 1.0);
    cfg.ensure("beta", 1.0);
    cfg.ensure("support_q", 0usize);
    cfg.check_keys(RANKSELECT_KEYS)?;
    let seed = cfg.get_u64("seed", 17)?;
    let r = cfg.get_usize_checked("R", 6, |v| (1..=64).contains(&v), "[1, 64]")?;
    let lambda = cfg.get_f64_checked("lambda", 1.0, |v| v >= 0.0, "[0, inf)")?;
    let beta = cfg.get_f64_checked("beta", 1.0, |v| v > 0.0, "(0, inf)")?;
    // 0 means the sensitivity has full support.
    let q = cfg.get_usize_checked("support_q", 0, |v| v <= r, "[0, R]")?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = DenseMatrix::from_fn(r, r, |_, _| rng.gen_range(-2.0..2.0));
    let h = DenseMatrix::from_fn(r, r, |_, _| rng.gen_range(0.1..3.0));
    let c = DenseMatrix::from_fn(r, r, |i, j| {
        if q == 0 || (i < q && j < q) {
            rng.gen_range(0.0..2.0)
        } else {
            0.0
        }
    });
    let profile = CoordinateProfile::new(g, h, c)?;
    let tc = curves(&profile, lambda, beta)?;
    let boundary = rank_boundary(&profile, &TradeoffConfig { lambda, beta })?;

    let mut summary = header(&cfg);
    summary.push_str("metric,value\n");
    summary.push_str(&format!("k_star,{}\n", boundary.k_star));
    summary.push_str(&format!(
        "q,{}\n",
        boundary.q.map(|q| q.to_string()).unwrap_or_else(|| "absent".into())
    ));
    let files = vec![
        write_file(out, "curves.csv", &tc.to_csv(&cfg.echo()))?,
        write_file(out, "boundary.csv", &summary)?,
    ];
    report(files)
}

fn cmd_inspect(path: &Path) -> Result<()> {
    let container = CheckpointContainer::load(path)?;
    println!("magic = RPSV");
    println!("version = {}", rpsft::checkpoint::VERSION);
    println!("tensor_count = {}", container.tensors().len());
    for (name, tensor) in container.tensors() {
        println!("{name} {}x{}", tensor.rows(), tensor.cols());
    }
    Ok(())
}
