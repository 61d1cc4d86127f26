//! The `tdcr` command line: synthetic demonstrations, training, evaluation,
//! execution, hyperparameter search and the teleop server.
//!
//! Exit codes: 0 success, 1 other failure, 2 bad arguments, 3 file errors,
//! 4 generation failure, 5 training failure, 6 schema mismatch, 7 bind
//! failure. Every output file gets a `<output>.manifest.json` beside it.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod manifest;

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use tdcr_core::ik::{plan_config_trajectory, IkSettings};
use tdcr_core::kinematics::{Config, RobotSpec};
use tdcr_core::learning::{
    grid_search, parse_arch, train_model, ContextModel, ContextVector, GridResult, ModelHyper, NetHyper, TrainingSet,
    DEFAULT_WAYPOINTS,
};
use tdcr_core::metrics::{evaluate_model, frechet_distance, mean_std, reference_curve, EvalCase, EvalMode, Executor};
use tdcr_core::presets::{load_task_and_robot, resolve, search_dirs, PresetKind};
use tdcr_core::store::{read_store, training_set, write_store, StoreWriter};
use tdcr_core::tasks::{generate_dataset, Demonstration, GenerateOptions, Noise};
use tdcr_teleop::session::{DemoSink, ServerConfig, TeleopSettings};

pub use error::{exit, CliError, CliResult};
use manifest::ManifestBuilder;

#[derive(Debug, Parser)]
#[command(name = "tdcr", version, about = "Context-conditioned trajectory learning for a tendon-driven continuum robot")]
#[command(after_help = "Task and robot names are looked up in $TDCR_PRESET_PATH, then ./presets.\n\
Exit codes: 2 bad arguments, 3 file error, 4 generation failure, 5 training failure, 6 schema mismatch, 7 bind failure.")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic demonstrations
    DemoGen(DemoGenArgs),
    /// Train a model on a demonstration store
    Train(TrainArgs),
    /// Predict, execute through IK and score against demonstrations or a reference curve
    Eval(EvalArgs),
    /// Execute one prediction and write the configuration trajectory
    Exec(ExecArgs),
    /// Train over a hyperparameter grid and score each point on a holdout split
    GridSearch(GridArgs),
    /// Run the teleoperation server
    Serve(ServeArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct DemoGenArgs {
    /// Task preset name or file
    #[arg(long)]
    pub task: String,
    /// Robot preset name or file [default: the task's suggested robot]
    #[arg(long)]
    pub robot: Option<String>,
    #[arg(long, default_value_t = 50)]
    pub count: usize,
    /// Waypoints per demonstration
    #[arg(long = "waypoints", default_value_t = DEFAULT_WAYPOINTS)]
    pub waypoints: usize,
    /// Peak displacement of the synthetic demonstrator's tremor (m)
    #[arg(long, default_value_t = 0.002)]
    pub noise: f64,
    #[arg(long, default_value_t = 1.0)]
    pub smoothness: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Linear,
    Rbf,
    Net,
}

#[derive(Debug, Args, Serialize)]
#[command(allow_negative_numbers = true)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub model: Family,
    #[arg(long)]
    pub demos: PathBuf,
    /// Train on the first n records only
    #[arg(long)]
    pub first: Option<usize>,
    #[arg(long, default_value_t = 0.01)]
    pub alpha: f64,
    #[arg(long, default_value_t = 10.0)]
    pub gamma: f64,
    /// Hidden layers as DEPTHxWIDTH
    #[arg(long, default_value = "2x128")]
    pub arch: String,
    #[arg(long, default_value_t = 5000)]
    pub epochs: usize,
    #[arg(long = "lr", default_value_t = 1e-3)]
    pub learning_rate: f64,
    /// Mini-batch size [default: full batch]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Network initialization seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Test store; each record supplies a context and its held-out demonstration
    #[arg(long)]
    pub demos: PathBuf,
    /// Score against the reference curve built from this store instead
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub robot: String,
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ExecArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Comma-separated task values, bias optional
    #[arg(long, allow_hyphen_values = true)]
    pub context: String,
    #[arg(long)]
    pub robot: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
#[command(allow_negative_numbers = true)]
pub struct GridArgs {
    #[arg(long, value_enum)]
    pub model: Family,
    #[arg(long)]
    pub demos: PathBuf,
    #[arg(long)]
    pub first: Option<usize>,
    /// Fraction of records, taken from the end of the store, used for scoring
    #[arg(long, default_value_t = 0.2)]
    pub holdout: f64,
    #[arg(long, value_delimiter = ',', default_values_t = [0.01, 0.1, 1.0, 10.0])]
    pub alphas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.01, 0.1, 1.0, 10.0])]
    pub gammas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = ["2x128".to_string()])]
    pub archs: Vec<String>,
    #[arg(long, default_value_t = 5000)]
    pub epochs: usize,
    #[arg(long = "lr", default_value_t = 1e-3)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8765)]
    pub port: u16,
    /// Default task for clients that do not name one
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long)]
    pub robot: Option<String>,
    #[arg(long)]
    pub demos_out: PathBuf,
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::DemoGen(a) => demo_gen(&a),
        Command::Train(a) => train(&a),
        Command::Eval(a) => eval(&a),
        Command::Exec(a) => exec(&a),
        Command::GridSearch(a) => grid(&a),
        Command::Serve(a) => serve(&a),
    }
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::new(exit::FILE, format!("{}: {e}", path.display())))
}

fn load_demos(path: &Path, first: Option<usize>) -> CliResult<Vec<Demonstration>> {
    let mut demos = read_store(path).map_err(CliError::file)?;
    if demos.is_empty() {
        return Err(CliError::new(exit::FILE, format!("{} holds no demonstrations", path.display())));
    }
    if let Some(n) = first {
        if n == 0 || n > demos.len() {
            return Err(CliError::bad_args(format!("--first {n} outside 1..={}", demos.len())));
        }
        demos.truncate(n);
    }
    Ok(demos)
}

fn load_training(path: &Path, first: Option<usize>) -> CliResult<(Vec<Demonstration>, TrainingSet)> {
    let demos = load_demos(path, first)?;
    let data = training_set(&demos).map_err(|e| CliError::from_core(e, exit::SCHEMA))?;
    Ok((demos, data))
}

fn load_robot(name: &str, m: &mut ManifestBuilder) -> CliResult<RobotSpec> {
    let path = resolve(name, PresetKind::Robot, &search_dirs()).map_err(CliError::file)?;
    m.input(&path)?;
    RobotSpec::load(&path).map_err(CliError::file)
}

fn load_model(path: &Path, m: &mut ManifestBuilder) -> CliResult<ContextModel> {
    m.input(path)?;
    ContextModel::load(path).map_err(CliError::file)
}

fn demo_gen(a: &DemoGenArgs) -> CliResult<()> {
    if a.count == 0 {
        return Err(CliError::bad_args("--count must be at least 1"));
    }
    if a.waypoints < 2 {
        return Err(CliError::bad_args("--waypoints must be at least 2"));
    }
    if !(a.noise >= 0.0 && a.noise.is_finite()) || !(a.smoothness > 0.0) {
        return Err(CliError::bad_args("--noise must be non-negative and --smoothness positive"));
    }
    let mut m = ManifestBuilder::new("demo-gen", a).seed(a.seed);
    let loaded = load_task_and_robot(&a.task, a.robot.as_deref(), &search_dirs()).map_err(CliError::file)?;
    m.input(&loaded.task_path)?;
    m.input(&loaded.robot_path)?;
    let opts = GenerateOptions {
        count: a.count,
        waypoints: a.waypoints,
        noise: Noise { amplitude: a.noise, smoothness: a.smoothness },
        seed: a.seed,
        ik: IkSettings::default(),
    };
    let demos = generate_dataset(&loaded.task, &loaded.robot, &opts).map_err(|e| CliError::from_core(e, exit::GENERATION))?;
    write_store(&a.out, &demos).map_err(CliError::file)?;
    m.write(&[&a.out])?;
    let residual = mean_std(&demos.iter().filter_map(|d| d.meta.snap_residual).collect::<Vec<_>>()).0;
    println!("wrote {} demonstrations to {} (mean snap residual {residual:.3e} m)", demos.len(), a.out.display());
    Ok(())
}

fn net_hyper(epochs: usize, learning_rate: f64, batch_size: Option<usize>, seed: u64) -> NetHyper {
    NetHyper { learning_rate, epochs, batch_size, seed }
}

fn training_error(e: tdcr_core::Error) -> CliError {
    match e {
        tdcr_core::Error::InvalidConfig(_) => CliError::bad_args(e.to_string()),
        e => CliError::new(exit::TRAINING, format!("training failed: {e}")),
    }
}

fn train(a: &TrainArgs) -> CliResult<()> {
    let hyper = match a.model {
        Family::Linear => ModelHyper::Linear { alpha: a.alpha },
        Family::Rbf => ModelHyper::Rbf { gamma: a.gamma, alpha: a.alpha },
        Family::Net => ModelHyper::Net {
            hidden: parse_arch(&a.arch).map_err(|e| CliError::bad_args(e.to_string()))?,
            train: net_hyper(a.epochs, a.learning_rate, a.batch_size, a.seed),
        },
    };
    let mut m = ManifestBuilder::new("train", a);
    if a.model == Family::Net {
        m = m.seed(a.seed);
    }
    m.input(&a.demos)?;
    let (_, data) = load_training(&a.demos, a.first)?;
    let model = train_model(&data, &hyper).map_err(training_error)?;
    let objective = model.training_objective(&data).map_err(|e| CliError::new(exit::TRAINING, e.to_string()))?;
    model.save(&a.out).map_err(CliError::file)?;
    m.write(&[&a.out])?;
    println!("{} trained on {} demonstrations; final objective {objective:.6e}", model.describe(), data.len());
    Ok(())
}

fn eval(a: &EvalArgs) -> CliResult<()> {
    let mut m = ManifestBuilder::new("eval", a);
    let model = load_model(&a.model, &mut m)?;
    let spec = load_robot(&a.robot, &mut m)?;
    m.input(&a.demos)?;
    let demos = load_demos(&a.demos, None)?;
    let mode = match &a.reference {
        Some(r) => {
            m.input(r)?;
            let train = load_demos(r, None)?;
            let curve = reference_curve(train.iter().map(|d| (&d.context, &d.trajectory))).map_err(|e| CliError::from_core(e, exit::SCHEMA))?;
            EvalMode::VsReference(curve)
        }
        None => EvalMode::VsDemo,
    };
    let cases: Vec<EvalCase> = demos.iter().map(|d| EvalCase { context: d.context.clone(), truth: Some(d.trajectory.clone()) }).collect();
    let settings = IkSettings::default();
    let report = evaluate_model(&model, &cases, &mode, &Executor::new(&spec, &settings)).map_err(|e| CliError::from_core(e, exit::OTHER))?;
    report.write_csv(&a.report).map_err(CliError::file)?;
    m.write(&[&a.report])?;
    println!("{}: {} cases, mean {:.4e} m, std {:.4e} m", report.model, report.cases.len(), report.mean, report.std);
    Ok(())
}

/// Parses comma-separated numbers.
pub fn parse_values(text: &str) -> Result<Vec<f64>, String> {
    text.split(',')
        .map(|s| {
            let s = s.trim();
            s.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| format!("{s:?} is not a finite number"))
        })
        .collect()
}

fn exec(a: &ExecArgs) -> CliResult<()> {
    let mut m = ManifestBuilder::new("exec", a);
    let model = load_model(&a.model, &mut m)?;
    let values = parse_values(&a.context).map_err(|e| CliError::bad_args(format!("--context: {e}")))?;
    let context = ContextVector::from_task_values(model.schema(), values)
        .map_err(|e| CliError::bad_args(format!("--context does not fit {}: {e}", model.schema())))?;
    let spec = load_robot(&a.robot, &mut m)?;
    let predicted = model.predict(&context).map_err(|e| CliError::from_core(e, exit::OTHER))?;
    let settings = IkSettings::default();
    let plan = plan_config_trajectory(&spec, predicted.waypoints(), &Config::home(&spec), &settings)
        .map_err(|e| CliError::from_core(e, exit::OTHER))?;
    let mut out = String::from("waypoint");
    for i in 0..spec.tendon_count() {
        out.push_str(&format!(",tension_{i}"));
    }
    out.push_str(",insertion,rotation,tip_x,tip_y,tip_z,residual\n");
    for (i, (c, (tip, r))) in plan.waypoints.iter().zip(plan.tips.iter().zip(&plan.residuals)).enumerate() {
        out.push_str(&i.to_string());
        for t in &c.tensions {
            out.push_str(&format!(",{t}"));
        }
        out.push_str(&format!(",{},{},{},{},{},{}\n", c.insertion, c.rotation, tip[0], tip[1], tip[2], r));
    }
    write_file(&a.out, &out)?;
    m.write(&[&a.out])?;
    println!("{} waypoints, mean IK residual {:.3e} m", plan.len(), plan.mean_residual());
    Ok(())
}

/// Splits off the last `ceil(fraction * n)` records for scoring.
pub fn holdout_split(n: usize, fraction: f64) -> Result<usize, String> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(format!("--holdout {fraction} must lie strictly between 0 and 1"));
    }
    let held = ((fraction * n as f64).ceil() as usize).max(1);
    if held >= n {
        return Err(format!("--holdout {fraction} leaves no training records out of {n}"));
    }
    Ok(n - held)
}

fn grid_table(result: &GridResult) -> String {
    let mut out = String::from("index,family,setting,score,best,error\n");
    for (i, row) in result.rows.iter().enumerate() {
        let score = row.score.map(|s| s.to_string()).unwrap_or_default();
        let best = if i == result.best { "*" } else { "" };
        let err = row.error.as_deref().unwrap_or("").replace([',', '\n'], ";");
        out.push_str(&format!("{i},{},{},{score},{best},{err}\n", row.hyper.family(), row.hyper.label()));
    }
    out
}

fn grid(a: &GridArgs) -> CliResult<()> {
    let grid = match a.model {
        Family::Linear => ModelHyper::linear_grid(&a.alphas),
        Family::Rbf => ModelHyper::rbf_grid(&a.gammas, &a.alphas),
        Family::Net => {
            let hidden: Result<Vec<_>, _> = a.archs.iter().map(|s| parse_arch(s)).collect();
            let hidden = hidden.map_err(|e| CliError::bad_args(e.to_string()))?;
            ModelHyper::net_grid(&hidden, &net_hyper(a.epochs, a.learning_rate, None, a.seed))
        }
    };
    if grid.is_empty() {
        return Err(CliError::bad_args("the hyperparameter grid is empty"));
    }
    let mut m = ManifestBuilder::new("grid-search", a);
    m.input(&a.demos)?;
    let demos = load_demos(&a.demos, a.first)?;
    let n_train = holdout_split(demos.len(), a.holdout).map_err(CliError::bad_args)?;
    let (train_part, held) = demos.split_at(n_train);
    let data = training_set(train_part).map_err(|e| CliError::from_core(e, exit::SCHEMA))?;
    let scorer = |model: &ContextModel| -> tdcr_core::Result<f64> {
        let mut total = 0.0;
        for d in held {
            total += frechet_distance(model.predict(&d.context)?.waypoints(), d.trajectory.waypoints());
        }
        Ok(total / held.len() as f64)
    };
    let result = grid_search(&data, &grid, scorer).map_err(training_error)?;
    write_file(&a.report, &grid_table(&result))?;
    m.write(&[&a.report])?;
    let best = result.best_row();
    println!("best {} {} with holdout score {:.4e} m", best.hyper.family(), best.hyper.label(), best.score.unwrap_or(f64::NAN));
    Ok(())
}

/// Store writer that records a serve manifest beside the store on its first
/// append, so an untouched store gets no sidecar either.
struct ManifestedStore {
    writer: StoreWriter,
    manifest: ManifestBuilder,
    written: bool,
}

impl DemoSink for ManifestedStore {
    fn append(&mut self, demo: &Demonstration) -> tdcr_core::Result<usize> {
        let index = self.writer.append(demo)?;
        if !self.written {
            self.written = true;
            if let Err(e) = self.manifest.write(&[self.writer.path()]) {
                log::warn!("{e}");
            }
        }
        Ok(index)
    }
}

fn serve(a: &ServeArgs) -> CliResult<()> {
    let dirs = search_dirs();
    let mut m = ManifestBuilder::new("serve", a);
    if let Some(task) = &a.task {
        let loaded = load_task_and_robot(task, a.robot.as_deref(), &dirs).map_err(CliError::file)?;
        m.input(&loaded.task_path)?;
        m.input(&loaded.robot_path)?;
    }
    let writer = StoreWriter::open(&a.demos_out).map_err(CliError::file)?;
    let sink: Arc<Mutex<dyn DemoSink>> = Arc::new(Mutex::new(ManifestedStore { writer, manifest: m, written: false }));
    let config = ServerConfig {
        preset_dirs: dirs,
        default_task: a.task.clone(),
        default_robot: a.robot.clone(),
        settings: TeleopSettings::default(),
        sink,
    };
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::new(exit::OTHER, e.to_string()))?;
    runtime.block_on(async {
        let server = tdcr_teleop::Server::bind((a.host.as_str(), a.port), config)
            .await
            .map_err(|e| CliError::new(exit::BIND, format!("cannot bind {}:{}: {e}", a.host, a.port)))?;
        let addr = server.local_addr().map_err(|e| CliError::new(exit::BIND, e.to_string()))?;
        println!("listening on ws://{addr}");
        let _ = std::io::stdout().flush();
        server
            .run_until(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| CliError::new(exit::OTHER, e.to_string()))
    })
}
