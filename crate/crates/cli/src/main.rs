//! `taylor-mlp` command-line pipelines.
//!
//! Exit codes: 0 success, 1 usage, 2 data integrity or I/O, 3 numeric or
//! configuration error.

mod config;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use taylor_mlp::attack::{distill_attack, finetune_attack, gaussian_corpus, package_accuracy, weights_accuracy};
use taylor_mlp::bench::{divergence, sweep_orders};
use taylor_mlp::calibration::{estimate_local_embedding, observe_all, select_protected_columns};
use taylor_mlp::persist;
use taylor_mlp::synthetic::{gaussian_vectors, random_weights, WeightScales};
use taylor_mlp::taylor::{taylor_forward, transform};
use taylor_mlp::vectors::{read_vectors_file, write_vectors};
use taylor_mlp::{
    ActivationKind, BenchResult, CalibrationStats, Error, MlpWeights, ProtectionPlan, ToyTask, ToyTaskConfig,
    TrainConfig,
};

use config::{pick, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "taylor-mlp", version, about = "Build, run, benchmark and attack Taylor-series MLP packages")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write seeded random block weights.
    Generate(GenerateArgs),
    /// Write seeded Gaussian input vectors as text.
    Sample(SampleArgs),
    /// Record pre-activation extrema over a calibration set.
    Calibrate(CalibrateArgs),
    /// Convert block weights into a Taylor package.
    Transform(TransformArgs),
    /// Run a package or plain weights on input vectors.
    Infer(InferArgs),
    /// Sweep expansion orders: FLOPs, optional timing, KL to the plain block.
    Bench(BenchArgs),
    /// Try to recover withheld weights on a seeded toy task.
    Attack(AttackArgs),
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    d_intermediate: Option<usize>,
    #[arg(long)]
    d_out: Option<usize>,
    #[arg(long)]
    activation: Option<ActivationKind>,
    #[arg(long)]
    seed: Option<u64>,
    /// Target standard deviation of the pre-activations for unit inputs.
    #[arg(long, default_value_t = 0.35)]
    z_std: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    count: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 1.0)]
    std: f64,
    /// Defaults to standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Where calibration inputs come from.
#[derive(Debug, Args)]
struct CalibSource {
    /// Text file of input vectors.
    #[arg(long)]
    calib: Option<PathBuf>,
    /// Use this many seeded standard Gaussian inputs instead of a file.
    #[arg(long, conflicts_with = "calib")]
    synthetic: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    #[arg(long)]
    weights: Option<PathBuf>,
    #[command(flatten)]
    source: CalibSource,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TransformArgs {
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Calibration stats file written by `calibrate`.
    #[arg(long)]
    stats: Option<PathBuf>,
    /// Calibrate on this vector file instead of reading stats.
    #[arg(long, conflicts_with = "stats")]
    calib: Option<PathBuf>,
    #[arg(long)]
    order: Option<usize>,
    /// Number of protected columns; all of them when omitted.
    #[arg(long)]
    protect_k: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct InferArgs {
    #[arg(long)]
    package: Option<PathBuf>,
    /// Run the plain block instead of a package.
    #[arg(long, conflicts_with = "package")]
    weights: Option<PathBuf>,
    /// Text file of input vectors.
    #[arg(long)]
    input: PathBuf,
    /// Defaults to standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    stats: Option<PathBuf>,
    #[arg(long, conflicts_with = "stats")]
    calib: Option<PathBuf>,
    #[arg(long)]
    protect_k: Option<usize>,
    /// Strictly ascending expansion orders.
    #[arg(long, value_delimiter = ',', default_value = "0,2,4,6,8")]
    orders: Vec<usize>,
    /// Evaluation vectors; defaults to the calibration file.
    #[arg(long)]
    eval: Option<PathBuf>,
    /// Evaluate on this many seeded standard Gaussian inputs.
    #[arg(long, conflicts_with = "eval")]
    synthetic: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Timing repetitions per order; 0 skips timing so the table is reproducible.
    #[arg(long, default_value_t = 0)]
    repetitions: usize,
    /// Also write one JSON object per row to this file.
    #[arg(long)]
    jsonl: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AttackMode {
    Finetune,
    Distill,
}

#[derive(Debug, Args)]
struct AttackArgs {
    mode: AttackMode,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    order: Option<usize>,
    /// Protected columns of the toy teacher; 0 runs the unprotected control.
    #[arg(long)]
    protect_k: Option<usize>,
    #[arg(long)]
    activation: Option<ActivationKind>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    /// Toy task size (train plus test).
    #[arg(long, default_value_t = 2000)]
    samples: usize,
    /// Distillation corpus size.
    #[arg(long, default_value_t = 2000)]
    corpus: usize,
    /// Distillation evaluation batch size.
    #[arg(long, default_value_t = 256)]
    eval_count: usize,
    /// Also write the report to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

enum CliError {
    Usage(String),
    Run(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Run(e)
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Run(e.into())
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn need<T>(value: Option<T>, flag: &str) -> CliResult<T> {
    value.ok_or_else(|| CliError::Usage(format!("--{flag} is required")))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Run(e)) => {
            let (label, code) = match &e {
                Error::Container(c) if c.is_integrity() => ("integrity error", 2),
                Error::Container(_) | Error::Io(_) => ("i/o error", 2),
                Error::Parse { .. } => ("input error", 2),
                _ => ("error", 3),
            };
            eprintln!("{label}: {e}");
            ExitCode::from(code)
        }
    }
}

fn run(cli: Cli) -> CliResult {
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::Generate(a) => generate(a, &cfg),
        Command::Sample(a) => sample(a, &cfg),
        Command::Calibrate(a) => calibrate(a, &cfg),
        Command::Transform(a) => cmd_transform(a, &cfg),
        Command::Infer(a) => infer(a, &cfg),
        Command::Bench(a) => bench(a, &cfg),
        Command::Attack(a) => attack(a, &cfg),
    }
}

fn output(path: Option<&Path>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn join<T: std::fmt::Debug>(values: &[T]) -> String {
    values.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(",")
}

fn seed(flag: Option<u64>, cfg: &RunConfig) -> u64 {
    pick(flag, cfg.seed).unwrap_or(0)
}

fn activation(flag: Option<ActivationKind>, cfg: &RunConfig) -> CliResult<ActivationKind> {
    Ok(pick(flag, cfg.activation()?).unwrap_or(ActivationKind::Gelu))
}

fn generate(a: GenerateArgs, cfg: &RunConfig) -> CliResult {
    let d_model = need(pick(a.d_model, cfg.dims.d_model), "d-model")?;
    let d_int = need(pick(a.d_intermediate, cfg.dims.d_intermediate), "d-intermediate")?;
    let d_out = need(pick(a.d_out, cfg.dims.d_out), "d-out")?;
    let out = need(pick(a.out, cfg.paths.out.clone()), "out")?;
    let kind = activation(a.activation, cfg)?;
    let scales = WeightScales::narrow(d_model, d_int, a.z_std);
    let w: MlpWeights<f64> = random_weights(seed(a.seed, cfg), d_model, d_int, d_out, kind, scales)?;
    persist::write_weights(&out, &w)?;
    println!("wrote {} ({kind}, {d_model}x{d_int}x{d_out})", out.display());
    Ok(())
}

fn sample(a: SampleArgs, cfg: &RunConfig) -> CliResult {
    let dim = need(pick(a.dim, cfg.dims.d_model), "dim")?;
    let xs: Vec<Vec<f64>> = gaussian_vectors(seed(a.seed, cfg), a.count, dim, a.std);
    let mut w = output(a.out.as_deref())?;
    write_vectors(&mut w, &xs)?;
    w.flush()?;
    Ok(())
}

fn load_weights(flag: Option<PathBuf>, cfg: &RunConfig) -> CliResult<MlpWeights<f64>> {
    let path = need(pick(flag, cfg.paths.weights.clone()), "weights")?;
    Ok(persist::read_weights(path)?)
}

fn calib_inputs(source: &CalibSource, cfg: &RunConfig, dim: usize) -> CliResult<Vec<Vec<f64>>> {
    if let Some(n) = source.synthetic {
        return Ok(gaussian_vectors(seed(source.seed, cfg), n, dim, 1.0));
    }
    let path = need(pick(source.calib.clone(), cfg.paths.calib.clone()), "calib")?;
    Ok(read_vectors_file(path, Some(dim))?)
}

fn calibrate(a: CalibrateArgs, cfg: &RunConfig) -> CliResult {
    let w = load_weights(a.weights, cfg)?;
    let out = need(pick(a.out, cfg.paths.out.clone()), "out")?;
    let xs = calib_inputs(&a.source, cfg, w.d_model())?;
    let stats = observe_all(&w, &xs)?;
    persist::write_stats(&out, &stats)?;
    let z0 = estimate_local_embedding(&stats)?;
    let spread = stats.spread()?;
    println!("samples={}", stats.count());
    println!("z0={}", join(&z0));
    println!("max_spread={:?}", spread.iter().copied().fold(0.0, f64::max));
    println!("wrote {}", out.display());
    Ok(())
}

/// Calibration stats from `--stats`, or computed from `--calib`.
fn load_stats(
    stats: Option<PathBuf>,
    calib: Option<PathBuf>,
    cfg: &RunConfig,
    w: &MlpWeights<f64>,
) -> CliResult<CalibrationStats<f64>> {
    if let Some(p) = pick(stats, cfg.paths.stats.clone()) {
        let s = persist::read_stats(p)?;
        if s.dim() != w.d_intermediate() {
            return Err(Error::Config(format!(
                "stats cover {} columns but the weights have {}",
                s.dim(),
                w.d_intermediate()
            ))
            .into());
        }
        return Ok(s);
    }
    match pick(calib, cfg.paths.calib.clone()) {
        Some(p) => Ok(observe_all(w, &read_vectors_file(p, Some(w.d_model()))?)?),
        None => Err(CliError::Usage("one of --stats or --calib is required".into())),
    }
}

fn plan_for(stats: &CalibrationStats<f64>, k: Option<usize>) -> CliResult<ProtectionPlan<f64>> {
    Ok(select_protected_columns(stats, k.unwrap_or(stats.dim()))?)
}

fn cmd_transform(a: TransformArgs, cfg: &RunConfig) -> CliResult {
    let w = load_weights(a.weights, cfg)?;
    let order = need(pick(a.order, cfg.order), "order")?;
    let out = need(pick(a.out, cfg.paths.out.clone()), "out")?;
    let stats = load_stats(a.stats, a.calib, cfg, &w)?;
    let plan = plan_for(&stats, pick(a.protect_k, cfg.protect_k))?;
    let pkg = transform(&w, &plan, order)?;
    persist::write_package(&out, &pkg)?;
    let bytes = std::fs::metadata(&out)?.len();
    let warnings = plan.radius_warnings(w.activation());
    println!("protected={}", pkg.k());
    println!("order={order}");
    println!("bytes={bytes}");
    println!("radius_warnings={}", warnings.len());
    if !warnings.is_empty() {
        eprintln!(
            "warning: columns {warnings:?} have a calibration half-spread of at least {}; the SiLU expansion may not converge there",
            taylor_mlp::calibration::SILU_RADIUS_GUARD
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn infer(a: InferArgs, cfg: &RunConfig) -> CliResult {
    let package = pick(a.package, cfg.paths.package.clone());
    let ys = match package {
        Some(p) => {
            let pkg = persist::read_package(p)?;
            let xs = read_vectors_file(&a.input, Some(pkg.d_model()))?;
            let mut violations = 0;
            let mut ys = Vec::with_capacity(xs.len());
            for x in &xs {
                let t = taylor_forward(&pkg, x)?;
                violations += usize::from(t.radius_violation);
                ys.push(t.y);
            }
            if violations > 0 {
                eprintln!("warning: {violations} inputs fall outside the SiLU convergence guard");
            }
            ys
        }
        None => {
            if a.weights.is_none() && cfg.paths.weights.is_none() {
                return Err(CliError::Usage("one of --package or --weights is required".into()));
            }
            let w = load_weights(a.weights, cfg)?;
            w.predict_batch(&read_vectors_file(&a.input, Some(w.d_model()))?)?
        }
    };
    let mut w = output(a.out.as_deref())?;
    write_vectors(&mut w, &ys)?;
    w.flush()?;
    Ok(())
}

fn bench(a: BenchArgs, cfg: &RunConfig) -> CliResult {
    let w = load_weights(a.weights, cfg)?;
    let calib = pick(a.calib, cfg.paths.calib.clone());
    let stats = load_stats(a.stats, calib.clone(), cfg, &w)?;
    let plan = plan_for(&stats, pick(a.protect_k, cfg.protect_k))?;
    let eval: Vec<Vec<f64>> = match (a.eval, a.synthetic, calib) {
        (Some(p), _, _) | (None, None, Some(p)) => read_vectors_file(p, Some(w.d_model()))?,
        (None, Some(n), _) => gaussian_vectors(seed(a.seed, cfg), n, w.d_model(), 1.0),
        (None, None, None) => return Err(CliError::Usage("one of --eval, --synthetic or --calib is required".into())),
    };
    let reps = (a.repetitions > 0).then_some(a.repetitions);
    let rows = sweep_orders(&w, &plan, &a.orders, &eval, reps)?;

    println!("{}", BenchResult::HEADER);
    for r in &rows {
        println!("{}", r.to_row());
    }
    if let Some(path) = a.jsonl {
        let mut f = BufWriter::new(File::create(path)?);
        for r in &rows {
            let record = json!({
                "order": r.order,
                "protected": r.protected,
                "plain_flops": r.plain_flops,
                "taylor_flops": r.taylor_flops,
                "flop_ratio": r.flop_ratio(),
                "plain_wall_s": r.plain_wall,
                "taylor_wall_s": r.taylor_wall,
                "wall_ratio": r.wall_ratio(),
                "kl_nats": r.kl_divergence,
                "max_abs_err": r.max_abs_err,
            });
            writeln!(f, "{record}")?;
        }
        f.flush()?;
    }
    Ok(())
}

fn attack(a: AttackArgs, cfg: &RunConfig) -> CliResult {
    let seed = seed(a.seed, cfg);
    let defaults = ToyTaskConfig::default();
    let task_config = ToyTaskConfig {
        seed,
        input_dim: cfg.dims.d_model.unwrap_or(defaults.input_dim),
        hidden_dim: cfg.dims.d_intermediate.unwrap_or(defaults.hidden_dim),
        class_count: cfg.dims.d_out.unwrap_or(defaults.class_count),
        sample_count: a.samples,
        activation: activation(a.activation, cfg)?,
        ..defaults
    };
    let task: ToyTask<f64> = ToyTask::generate(task_config)?;
    let teacher = task.teacher();
    let stats = observe_all(teacher, task.train_inputs())?;
    let plan = match pick(a.protect_k, cfg.protect_k) {
        Some(0) => ProtectionPlan::unprotected(&stats)?,
        k => plan_for(&stats, k)?,
    };
    let order = pick(a.order, cfg.order).unwrap_or(8);
    let pkg = transform(teacher, &plan, order)?;

    let base = match a.mode {
        AttackMode::Finetune => TrainConfig::finetune_default(),
        AttackMode::Distill => TrainConfig::distill_default(),
    };
    let train = TrainConfig {
        epochs: pick(a.epochs, cfg.train.epochs).unwrap_or(base.epochs),
        lr: pick(a.lr, cfg.train.lr).unwrap_or(base.lr),
        batch_size: pick(a.batch, cfg.train.batch).unwrap_or(base.batch_size),
        seed,
        ..base
    };

    let mut record = String::new();
    match a.mode {
        AttackMode::Finetune => {
            let report = finetune_attack(teacher, &plan, &task, &train)?;
            record.push_str(&report.to_record());
            record.push_str(&format!("original_accuracy={:?}\n", weights_accuracy(teacher, &task)?));
            record.push_str(&format!("package_accuracy={:?}\n", package_accuracy(&pkg, &task)?));
        }
        AttackMode::Distill => {
            let corpus: Vec<Vec<f64>> = gaussian_corpus(seed.wrapping_add(1), a.corpus, task_config.input_dim);
            let eval: Vec<Vec<f64>> = gaussian_corpus(seed.wrapping_add(2), a.eval_count, task_config.input_dim);
            let report = distill_attack(&pkg, &plan, &corpus, &eval, teacher, &train)?;
            record.push_str(&report.to_record());
            record.push_str(&format!("package_kl={:?}\n", divergence(teacher, &pkg, &eval)?.0));
        }
    }
    record.push_str(&format!("protected={}\norder={order}\n", plan.k()));
    print!("{record}");
    if let Some(path) = a.out {
        std::fs::write(path, &record)?;
    }
    Ok(())
}
