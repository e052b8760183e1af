//! Command-line pipeline stages.
//!
//! Training commands are the offline phase; `map`, `associate` and `eval`
//! answer queries against saved environments and checkpoints. Every command
//! writes its outputs atomically and leaves a `<output>.manifest.json` next
//! to its primary output recording the full argument list and seed.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::assoc::{self, AssociationResult};
use crate::env::{self, Environment, Position, Roi};
use crate::fedtwin::{self, FlConfig};
use crate::io;
use crate::maps::{self, Backend, SiMethod, SiPredictor};
use crate::metrics;
use crate::mlp::{self, MlpModel, OptimizerKind, TrainConfig};
use crate::plfit::{self, PlModel};
use crate::predictor::GainPredictor;
use crate::propagation::{Oracle, PropagationParams};
use crate::sampling::{self, Dataset, SamplingConfig, SplitTag};

#[derive(Debug, Parser)]
#[command(name = "ctwin", version, about = "Channel-gain twinning workbench")]
pub struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Directory that relative output paths are resolved against.
    #[arg(long, global = true, env = "CT_OUT_DIR")]
    pub out_dir: Option<PathBuf>,

    /// Bit-stable sequential numerics. Computation is already single-threaded;
    /// the flag is recorded in the manifest.
    #[arg(long, global = true)]
    pub strict: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic environment and its propagation sidecar.
    GenEnv(GenEnvArgs),
    /// Sample labeled anchor links from the oracle.
    GenData(GenDataArgs),
    /// Train the MLP twin centrally.
    Train(TrainArgs),
    /// Train the MLP twin with federated averaging.
    TrainFl(TrainFlArgs),
    /// Fit the log-distance path-loss baseline.
    FitPl(FitPlArgs),
    /// Rasterize a gain map for one transmitter.
    Map(MapArgs),
    /// Rank access points for a user position.
    Associate(AssociateArgs),
    /// Per-sample errors of a model on a dataset.
    Eval(EvalArgs),
}

/// Oracle constants; unset values come from the environment's sidecar or
/// the defaults.
#[derive(Debug, Args, Clone, Default)]
pub struct PropagationFlags {
    #[arg(long)]
    pub pl0: Option<f64>,
    #[arg(long = "exp")]
    pub exponent: Option<f64>,
    #[arg(long)]
    pub shadow_sigma: Option<f64>,
    #[arg(long)]
    pub corr_len: Option<f64>,
    #[arg(long)]
    pub d_min: Option<f64>,
}

impl PropagationFlags {
    fn apply(&self, mut p: PropagationParams) -> PropagationParams {
        p.pl0_db = self.pl0.unwrap_or(p.pl0_db);
        p.exponent = self.exponent.unwrap_or(p.exponent);
        p.shadowing_sigma_db = self.shadow_sigma.unwrap_or(p.shadowing_sigma_db);
        p.shadowing_corr_len = self.corr_len.unwrap_or(p.shadowing_corr_len);
        p.d_min = self.d_min.unwrap_or(p.d_min);
        p
    }
}

#[derive(Debug, Args)]
pub struct GenEnvArgs {
    #[arg(long, default_value_t = 12)]
    pub obstacles: usize,
    #[arg(long, default_value_t = 20)]
    pub aps: usize,
    /// Region size as WIDTHxHEIGHT in meters.
    #[arg(long, default_value = "200x200")]
    pub roi: String,
    /// Attenuation of every generated obstacle (dB).
    #[arg(long, default_value_t = env::DEFAULT_WALL_LOSS_DB)]
    pub wall_loss: f64,
    #[command(flatten)]
    pub prop: PropagationFlags,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub env: PathBuf,
    #[arg(long, default_value_t = sampling::DEFAULT_ANCHOR_SPACING_M)]
    pub spacing: f64,
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    /// Standard deviation of additive label noise (dB).
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[command(flatten)]
    pub prop: PropagationFlags,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Clone)]
pub struct DataSplitArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Environment whose region bounds define the input normalization;
    /// without it the bounding box of the data is used.
    #[arg(long)]
    pub env: Option<PathBuf>,
    /// Train/validation/test fractions.
    #[arg(long, default_value = "0.8,0.1,0.1")]
    pub split: String,
    /// Where to write the held-out test split.
    #[arg(long)]
    pub test_out: Option<PathBuf>,
    #[arg(long, default_value_t = mlp::DEFAULT_HIDDEN_WIDTH)]
    pub width: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 256)]
    pub batch: usize,
    #[arg(long, default_value = "adam", value_parser = parse_optimizer)]
    pub optimizer: OptimizerKind,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: DataSplitArgs,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch metrics CSV.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainFlArgs {
    #[command(flatten)]
    pub common: DataSplitArgs,
    #[arg(long, default_value_t = 3)]
    pub clients: usize,
    #[arg(long, default_value_t = 100)]
    pub rounds: usize,
    #[arg(long, default_value_t = 1)]
    pub local_epochs: usize,
    #[arg(long, default_value_t = 1.0)]
    pub participation: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-round metrics CSV.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitPlArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub d_min: f64,
    #[arg(long)]
    pub out: PathBuf,
}

/// How a command obtains gain predictions.
#[derive(Debug, Args, Clone)]
pub struct ModelArgs {
    /// `oracle`, `idw`, `kriging`, or the path of a checkpoint or path-loss file.
    #[arg(long, default_value = "oracle")]
    pub model: String,
    /// Number of random receiver positions the interpolators are fitted to
    /// (default 30). For `map` it also selects interpolated output.
    #[arg(long)]
    pub si_seeds: Option<usize>,
    #[command(flatten)]
    pub prop: PropagationFlags,
}

#[derive(Debug, Args)]
pub struct MapArgs {
    #[arg(long)]
    pub env: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Transmitter position `x,y`.
    #[arg(long, value_parser = parse_position)]
    pub tx: Position,
    /// Interpolate from `--si-seeds` random receivers with this method
    /// (default kriging) instead of querying every cell.
    #[arg(long, value_parser = parse_method)]
    pub method: Option<SiMethod>,
    #[arg(long, default_value_t = maps::DEFAULT_RESOLUTION_M)]
    pub res: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// Optional 16-bit PGM preview.
    #[arg(long)]
    pub pgm: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AssociateArgs {
    #[arg(long)]
    pub env: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    /// User position `x,y`.
    #[arg(long, value_parser = parse_position)]
    pub ue: Position,
    #[arg(long, default_value_t = assoc::DEFAULT_K)]
    pub k: usize,
    /// `gain` ranks by the model; `distance` ignores it.
    #[arg(long, default_value = "gain", value_parser = ["gain", "distance"])]
    pub criterion: String,
    /// Also write the selection CSV here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Needed when the model is `oracle`, `idw` or `kriging`.
    #[arg(long)]
    pub env: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Print box statistics of the absolute errors as CSV.
    #[arg(long = "box")]
    pub print_box: bool,
    /// Also write the box statistics CSV here.
    #[arg(long)]
    pub box_out: Option<PathBuf>,
}

fn parse_position(s: &str) -> Result<Position, String> {
    let (x, y) = s.split_once(',').ok_or_else(|| format!("expected x,y, got {s:?}"))?;
    let x: f64 = x.trim().parse().map_err(|_| format!("bad x in {s:?}"))?;
    let y: f64 = y.trim().parse().map_err(|_| format!("bad y in {s:?}"))?;
    Ok(Position::new(x, y))
}

fn parse_method(s: &str) -> Result<SiMethod, String> {
    s.parse().map_err(|e: crate::Error| e.to_string())
}

fn parse_optimizer(s: &str) -> Result<OptimizerKind, String> {
    match s {
        "adam" => Ok(OptimizerKind::Adam),
        "sgd" => Ok(OptimizerKind::Sgd),
        other => Err(format!("unknown optimizer {other:?} (expected adam or sgd)")),
    }
}

fn parse_roi(s: &str) -> anyhow::Result<Roi> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| anyhow!("region must be WIDTHxHEIGHT, got {s:?}"))?;
    Ok(Roi::new(w.trim().parse()?, h.trim().parse()?)?)
}

fn parse_split(s: &str) -> anyhow::Result<(f64, f64, f64)> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("bad split {s:?}"))?;
    match parts[..] {
        [a, b, c] => Ok((a, b, c)),
        _ => bail!("split needs three fractions, got {s:?}"),
    }
}

/// Sidecar holding the oracle constants of `env.json`: `env.params.json`.
pub fn params_sidecar(env_path: &Path) -> PathBuf {
    env_path.with_extension("params.json")
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'a str,
    version: &'a str,
    command: &'a str,
    argv: Vec<String>,
    seed: u64,
    strict: bool,
    outputs: Vec<String>,
}

struct Context_<'a> {
    cli: &'a Cli,
    argv: Vec<String>,
    outputs: Vec<PathBuf>,
}

impl Context_<'_> {
    fn out_path(&self, p: &Path) -> PathBuf {
        match &self.cli.out_dir {
            Some(dir) if p.is_relative() => dir.join(p),
            _ => p.to_path_buf(),
        }
    }

    /// Inputs are read from the working directory, or from the output
    /// directory when they only exist there.
    fn in_path(&self, p: &Path) -> PathBuf {
        match &self.cli.out_dir {
            Some(dir) if p.is_relative() && !p.exists() && dir.join(p).exists() => dir.join(p),
            _ => p.to_path_buf(),
        }
    }

    fn write(&mut self, path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
        let path = self.out_path(path);
        io::write_atomic(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.outputs.push(path);
        Ok(())
    }

    fn load_env(&self, p: &Path) -> anyhow::Result<Environment> {
        let p = self.in_path(p);
        env::load_environment(&p).with_context(|| format!("loading environment {}", p.display()))
    }

    fn load_params(&self, env_path: &Path, env: &Environment, flags: &PropagationFlags) -> anyhow::Result<PropagationParams> {
        let sidecar = params_sidecar(&self.in_path(env_path));
        let base = if sidecar.exists() {
            PropagationParams::load(&sidecar).with_context(|| format!("loading {}", sidecar.display()))?
        } else {
            PropagationParams {
                seed: env.seed,
                ..Default::default()
            }
        };
        let p = flags.apply(base);
        p.validate()?;
        Ok(p)
    }

    fn load_data(&self, p: &Path) -> anyhow::Result<Dataset> {
        let p = self.in_path(p);
        let ds = Dataset::load(&p, SplitTag::Train).with_context(|| format!("loading dataset {}", p.display()))?;
        if ds.is_empty() {
            bail!("dataset {} has no samples", p.display());
        }
        Ok(ds)
    }

    fn finish(&self, command: &str, primary: &Path) -> anyhow::Result<()> {
        let manifest = Manifest {
            tool: "ctwin",
            version: env!("CARGO_PKG_VERSION"),
            command,
            argv: self.argv.clone(),
            seed: self.cli.seed,
            strict: self.cli.strict,
            outputs: self.outputs.iter().map(|p| p.display().to_string()).collect(),
        };
        let primary = self.out_path(primary);
        let name = format!(
            "{}.manifest.json",
            primary.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
        );
        let path = primary.with_file_name(name);
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        io::write_atomic(&path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}

/// Parses `argv` (including the program name) and runs the command.
/// Returns the process exit status: 0 on success, 2 on usage errors and 1
/// when a stage fails.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let argv: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match run(&cli, argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

pub fn run(cli: &Cli, argv: Vec<String>) -> anyhow::Result<()> {
    let mut ctx = Context_ {
        cli,
        argv,
        outputs: Vec::new(),
    };
    match &cli.command {
        Command::GenEnv(a) => gen_env(&mut ctx, a),
        Command::GenData(a) => gen_data(&mut ctx, a),
        Command::Train(a) => train(&mut ctx, a),
        Command::TrainFl(a) => train_fl(&mut ctx, a),
        Command::FitPl(a) => fit_pl(&mut ctx, a),
        Command::Map(a) => map(&mut ctx, a),
        Command::Associate(a) => associate(&mut ctx, a),
        Command::Eval(a) => eval(&mut ctx, a),
    }
}

fn gen_env(ctx: &mut Context_, a: &GenEnvArgs) -> anyhow::Result<()> {
    let roi = parse_roi(&a.roi)?;
    let mut env = env::generate_environment(ctx.cli.seed, a.obstacles, a.aps, roi)?;
    if !(a.wall_loss.is_finite() && a.wall_loss >= 0.0) {
        bail!("wall loss must be non-negative, got {}", a.wall_loss);
    }
    for o in &mut env.obstacles {
        o.wall_loss_db = a.wall_loss;
    }
    let params = a.prop.apply(PropagationParams {
        seed: ctx.cli.seed,
        ..Default::default()
    });
    params.validate()?;

    let mut text = env.to_json()?;
    text.push('\n');
    ctx.write(&a.out, text.as_bytes())?;
    let mut ptext = serde_json::to_string_pretty(&params)?;
    ptext.push('\n');
    ctx.write(&params_sidecar(&a.out), ptext.as_bytes())?;
    ctx.finish("gen-env", &a.out)
}

fn gen_data(ctx: &mut Context_, a: &GenDataArgs) -> anyhow::Result<()> {
    let env = ctx.load_env(&a.env)?;
    let params = ctx.load_params(&a.env, &env, &a.prop)?;
    let oracle = Oracle::new(env, params)?;
    let ds = sampling::build_dataset(
        &oracle,
        &SamplingConfig {
            spacing: a.spacing,
            n_samples: a.n,
            seed: ctx.cli.seed,
            noise_sigma_db: a.noise,
        },
    )?;
    ctx.write(&a.out, &ds.to_csv()?)?;
    ctx.finish("gen-data", &a.out)
}

struct Prepared {
    train: Dataset,
    val: Dataset,
    init: MlpModel,
}

fn prepare(ctx: &mut Context_, a: &DataSplitArgs) -> anyhow::Result<Prepared> {
    let ds = ctx.load_data(&a.data)?;
    let (train, val, test) = sampling::split_dataset(&ds, parse_split(&a.split)?, ctx.cli.seed)?;
    let roi = match &a.env {
        Some(p) => ctx.load_env(p)?.roi,
        None => data_roi(&ds)?,
    };
    let init = MlpModel::twin(&roi, &train.samples, a.width, ctx.cli.seed)?;
    if let Some(p) = &a.test_out {
        ctx.write(p, &test.to_csv()?)?;
    }
    Ok(Prepared { train, val, init })
}

/// Bounding region `[0, max x] x [0, max y]` of a dataset's positions.
fn data_roi(ds: &Dataset) -> anyhow::Result<Roi> {
    let (mut w, mut h) = (0.0_f64, 0.0_f64);
    for s in &ds.samples {
        w = w.max(s.tx.x).max(s.rx.x);
        h = h.max(s.tx.y).max(s.rx.y);
    }
    Roi::new(w, h).context("dataset positions do not span a region; pass --env")
}

fn train(ctx: &mut Context_, a: &TrainArgs) -> anyhow::Result<()> {
    let p = prepare(ctx, &a.common)?;
    let cfg = TrainConfig {
        lr: a.common.lr,
        batch_size: a.common.batch,
        epochs: a.epochs,
        seed: ctx.cli.seed,
        optimizer: a.common.optimizer,
    };
    let (model, history) = mlp::train(p.init, &p.train, &p.val, &cfg)?;
    ctx.write(&a.out, model.to_checkpoint().as_bytes())?;
    if let Some(path) = &a.metrics {
        let mut csv = String::from("epoch,train_mse_db2,val_mse_db2\n");
        for m in &history {
            csv.push_str(&format!("{},{},{}\n", m.epoch, m.train_mse_db2, m.val_mse_db2));
        }
        ctx.write(path, csv.as_bytes())?;
    }
    ctx.finish("train", &a.out)
}

fn train_fl(ctx: &mut Context_, a: &TrainFlArgs) -> anyhow::Result<()> {
    let p = prepare(ctx, &a.common)?;
    let cfg = FlConfig {
        n_clients: a.clients,
        rounds: a.rounds,
        local_epochs: a.local_epochs,
        batch_size: a.common.batch,
        lr: a.common.lr,
        seed: ctx.cli.seed,
        participation: a.participation,
        optimizer: a.common.optimizer,
    };
    let (model, history) = fedtwin::run_fl(p.init, &p.train, &p.val, &cfg)?;
    ctx.write(&a.out, model.to_checkpoint().as_bytes())?;
    if let Some(path) = &a.metrics {
        let mut csv = String::from("round,val_mse_db2\n");
        for m in &history {
            csv.push_str(&format!("{},{}\n", m.round, m.val_mse_db2));
        }
        ctx.write(path, csv.as_bytes())?;
    }
    ctx.finish("train-fl", &a.out)
}

fn fit_pl(ctx: &mut Context_, a: &FitPlArgs) -> anyhow::Result<()> {
    let ds = ctx.load_data(&a.data)?;
    let model = plfit::fit_pl(&ds.samples, a.d_min)?;
    ctx.write(&a.out, model.to_line().as_bytes())?;
    ctx.finish("fit-pl", &a.out)
}

/// A model resolved from `--model`.
enum LoadedModel {
    Oracle(Oracle),
    Mlp(MlpModel),
    Pl(PlModel),
    Si(SiPredictor<Oracle>),
}

impl LoadedModel {
    fn backend(&self) -> Backend {
        match self {
            LoadedModel::Oracle(_) => Backend::Oracle,
            LoadedModel::Mlp(_) => Backend::Mlp,
            LoadedModel::Pl(_) => Backend::Pl,
            LoadedModel::Si(s) => s.method.into(),
        }
    }

    fn predictor(&self) -> &dyn GainPredictor {
        match self {
            LoadedModel::Oracle(o) => o,
            LoadedModel::Mlp(m) => m,
            LoadedModel::Pl(p) => p,
            LoadedModel::Si(s) => s,
        }
    }
}

fn load_model(ctx: &Context_, m: &ModelArgs, env: Option<(&Path, &Environment)>) -> anyhow::Result<LoadedModel> {
    let oracle = || -> anyhow::Result<Oracle> {
        let (path, env) = env.ok_or_else(|| anyhow!("model {:?} needs --env", m.model))?;
        let params = ctx.load_params(path, env, &m.prop)?;
        Ok(Oracle::new(env.clone(), params)?)
    };
    let si = |method| -> anyhow::Result<LoadedModel> {
        let o = oracle()?;
        Ok(LoadedModel::Si(SiPredictor {
            env: o.env().clone(),
            base: o,
            n_seeds: m.si_seeds.unwrap_or(maps::DEFAULT_SI_SEEDS),
            seed: ctx.cli.seed,
            method,
        }))
    };
    match m.model.as_str() {
        "oracle" => Ok(LoadedModel::Oracle(oracle()?)),
        "idw" => si(SiMethod::Idw),
        "kriging" => si(SiMethod::Kriging),
        path => {
            let path = ctx.in_path(Path::new(path));
            let text = io::read_to_string(&path).with_context(|| format!("loading model {}", path.display()))?;
            if text.starts_with(crate::mlp::CHECKPOINT_MAGIC) {
                Ok(LoadedModel::Mlp(
                    MlpModel::from_checkpoint(&text).with_context(|| format!("loading {}", path.display()))?,
                ))
            } else {
                Ok(LoadedModel::Pl(
                    PlModel::from_line(&text).with_context(|| format!("loading {}", path.display()))?,
                ))
            }
        }
    }
}

fn map(ctx: &mut Context_, a: &MapArgs) -> anyhow::Result<()> {
    let env = ctx.load_env(&a.env)?;
    let model = load_model(ctx, &a.model, Some((&a.env, &env)))?;
    let gm = if a.method.is_some() || a.model.si_seeds.is_some() {
        maps::build_si_map(
            &env,
            model.predictor(),
            &a.tx,
            a.model.si_seeds.unwrap_or(maps::DEFAULT_SI_SEEDS),
            ctx.cli.seed,
            a.method.unwrap_or(SiMethod::Kriging),
            a.res,
        )?
    } else {
        maps::build_gain_map(&env, model.predictor(), &a.tx, a.res, model.backend())?
    };
    ctx.write(&a.out, gm.to_csv(&env)?.as_bytes())?;
    if let Some(p) = &a.pgm {
        ctx.write(p, &gm.to_pgm())?;
    }
    ctx.finish("map", &a.out)
}

fn associate(ctx: &mut Context_, a: &AssociateArgs) -> anyhow::Result<()> {
    let env = ctx.load_env(&a.env)?;
    let result: AssociationResult = if a.criterion == "distance" {
        assoc::associate_by_distance(&env, &a.ue, a.k)?
    } else {
        let model = load_model(ctx, &a.model, Some((&a.env, &env)))?;
        assoc::associate_by_gain(&env, model.predictor(), &a.ue, a.k)?
    };
    let csv = result.to_csv();
    print!("{csv}");
    if let Some(p) = &a.out {
        ctx.write(p, csv.as_bytes())?;
        ctx.finish("associate", p)?;
    }
    Ok(())
}

fn eval(ctx: &mut Context_, a: &EvalArgs) -> anyhow::Result<()> {
    let env = a.env.as_ref().map(|p| ctx.load_env(p)).transpose()?;
    let env_ref = a.env.as_deref().zip(env.as_ref());
    let model = load_model(ctx, &a.model, env_ref)?;
    let ds = ctx.load_data(&a.data)?;
    let pred: Vec<f64> = match &model {
        LoadedModel::Mlp(m) => m.predict_samples(&ds.samples),
        other => ds
            .samples
            .iter()
            .map(|s| other.predictor().gain(&s.tx, &s.rx))
            .collect::<crate::Result<_>>()?,
    };
    let truth: Vec<f64> = ds.samples.iter().map(|s| s.gain_db).collect();
    let errs = metrics::abs_errors(&pred, &truth)?;
    let summary = metrics::error_metrics(&pred, &truth)?;

    let mut csv = String::from("tx_x,tx_y,rx_x,rx_y,abs_err_db\n");
    for (s, e) in ds.samples.iter().zip(&errs) {
        csv.push_str(&format!("{},{},{},{},{e}\n", s.tx.x, s.tx.y, s.rx.x, s.rx.y));
    }
    ctx.write(&a.out, csv.as_bytes())?;
    println!("n={},mae_db={},mse_db2={}", errs.len(), summary.mae_db, summary.mse_db2);

    if a.print_box || a.box_out.is_some() {
        let b = metrics::box_stats(&errs)?;
        let text = format!("{}\n{}\n", metrics::BOX_CSV_HEADER, b.csv_row());
        if a.print_box {
            print!("{text}");
        }
        if let Some(p) = &a.box_out {
            ctx.write(p, text.as_bytes())?;
        }
    }
    ctx.finish("eval", &a.out)
}
