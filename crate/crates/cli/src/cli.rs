//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 for usage errors, 2 for runtime failures.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use novact::dataset::{load_training_set, save_training_set, synthesize_boxing_set, write_trajectory_csv};
use novact::explorer::{read_records, render_map, summarize, sweep, write_records, SamplePool};
use novact::trainer::{mean_group_kl, train_with};
use novact::{Checkpoint, Exec, GridSpec, NetworkSpec, PbPoint, SweepConfig, SynthConfig, TrainingConfig};

use crate::service::{self, ServeConfig};

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "novact",
    version,
    about = "Learn robot actions with an MTRNN and explore its PB space"
)]
pub struct Cli {
    /// Worker threads for data-parallel work (default: all cores).
    #[arg(long, global = true, env = "NOVACT_THREADS")]
    pub threads: Option<usize>,

    /// Run every data-parallel loop on the calling thread.
    #[arg(long, global = true)]
    pub sequential: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the synthetic six-action boxing set as CSV files plus a manifest.
    GenData(GenDataArgs),
    /// Train a network and write a checkpoint and learning curve.
    Train(TrainArgs),
    /// Generate and classify an action at every PB grid cell.
    Sweep(SweepArgs),
    /// Recompute the report from an existing sweep record file.
    Measure(MeasureArgs),
    /// Render a sweep record file as a PB map image.
    RenderMap(RenderArgs),
    /// Generate one action from a PB point and print it as CSV.
    Generate(GenerateArgs),
    /// Serve a checkpoint (and optionally a sweep) over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.005)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training manifest; the synthetic set is used when omitted.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Learning curve CSV (default: next to the checkpoint).
    #[arg(long)]
    pub curve: Option<PathBuf>,
    #[arg(long, default_value_t = 20_000)]
    pub epochs: usize,
    /// Closed-loop ratio in [0, 1].
    #[arg(long, default_value_t = 0.5)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    #[arg(long, default_value_t = novact::codec::DEFAULT_SIGMA)]
    pub sigma: f64,
    #[arg(long, default_value_t = 1000)]
    pub checkpoint_interval: usize,
    #[arg(long, default_value_t = 40)]
    pub fast: usize,
    #[arg(long, default_value_t = 20)]
    pub middle: usize,
    #[arg(long, default_value_t = 10)]
    pub slow: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PoolArg {
    Appropriate,
    All,
}

#[derive(Debug, Args)]
pub struct SamplingArgs {
    #[arg(long, default_value_t = 30)]
    pub iterations: usize,
    #[arg(long, default_value_t = 30)]
    pub sample_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Learned/unlearned DTW threshold (default: derived from the training set).
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Rollout length (default: longest training pattern).
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, value_enum, default_value = "appropriate")]
    pub pool: PoolArg,
}

impl SamplingArgs {
    fn config(&self) -> SweepConfig {
        SweepConfig {
            steps: self.steps,
            learned_threshold: self.threshold,
            iterations: self.iterations,
            sample_size: self.sample_size,
            seed: self.seed,
            pool: match self.pool {
                PoolArg::Appropriate => SamplePool::Appropriate,
                PoolArg::All => SamplePool::All,
            },
            ..Default::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub resolution: usize,
    /// JSON-lines record file, one line per cell.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Also render the map (PNG, or PPM by extension).
    #[arg(long)]
    pub map: Option<PathBuf>,
    #[command(flatten)]
    pub sampling: SamplingArgs,
}

#[derive(Debug, Args)]
pub struct MeasureArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub records: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[command(flatten)]
    pub sampling: SamplingArgs,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub records: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// PB point as `x,y`, each in [-1, 1].
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub pb: Vec<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Write CSV here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub records: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: String,
    #[arg(long, default_value_t = 200)]
    pub max_steps: usize,
}

/// Parse `args` and run; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            EXIT_RUNTIME
        }
    }
}

enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn execute(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    let exec = if cli.sequential {
        Exec::Sequential
    } else {
        Exec::Parallel
    };
    match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => {
            if !(0.0..=1.0).contains(&a.gamma) {
                return Err(usage(format!("--gamma must lie in [0, 1], got {}", a.gamma)));
            }
            if a.epochs == 0 {
                return Err(usage("--epochs must be at least 1"));
            }
            train_cmd(a, exec)
        }
        Command::Sweep(a) => {
            if a.resolution < 2 {
                return Err(usage("--resolution must be at least 2"));
            }
            sweep_cmd(a, exec)
        }
        Command::Measure(a) => measure_cmd(a, exec),
        Command::RenderMap(a) => render_cmd(a),
        Command::Generate(a) => {
            if a.pb.len() != 2 || a.pb.iter().any(|v| !(-1.0..=1.0).contains(v)) {
                return Err(usage("--pb needs two values in [-1, 1]"));
            }
            generate_cmd(a)
        }
        Command::Serve(a) => {
            if a.max_steps == 0 {
                return Err(usage("--max-steps must be at least 1"));
            }
            serve_cmd(a)
        }
    }?;
    Ok(())
}

fn print_config<T: Serialize>(what: &str, value: &T) {
    match serde_json::to_string(value) {
        Ok(s) => eprintln!("{what}: {s}"),
        Err(_) => eprintln!("{what}: <unprintable>"),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_checkpoint(path: &Path) -> anyhow::Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn gen_data(a: GenDataArgs) -> anyhow::Result<()> {
    let cfg = SynthConfig {
        steps: a.steps,
        noise: a.noise,
        seed: a.seed,
        ..Default::default()
    };
    print_config("synthetic data", &cfg);
    let set = synthesize_boxing_set(&cfg)?;
    let manifest = save_training_set(&set, &a.out)?;
    println!("{}", manifest.display());
    Ok(())
}

fn train_cmd(a: TrainArgs, exec: Exec) -> anyhow::Result<()> {
    let set = match &a.data {
        Some(path) => load_training_set(path).with_context(|| format!("loading {}", path.display()))?,
        None => synthesize_boxing_set(&SynthConfig::default())?,
    };
    let spec = NetworkSpec {
        joints: set.dims(),
        fast: a.fast,
        middle: a.middle,
        slow: a.slow,
        ..Default::default()
    };
    let config = TrainingConfig {
        gamma: a.gamma,
        epochs: a.epochs,
        learning_rate: a.lr,
        seed: a.seed,
        checkpoint_interval: a.checkpoint_interval,
        sigma: a.sigma,
        ..Default::default()
    };
    print_config("network", &spec);
    print_config("training", &config);
    eprintln!("execution: {exec:?}, {} pattern(s)", set.len());

    let started = Instant::now();
    let out = a.out.clone();
    let mut save_error = None;
    let (checkpoint, curve) = train_with(&set, &spec, &config, exec, |p| {
        if let Some(cp) = p.checkpoint {
            eprintln!(
                "epoch {:>6}  loss {:.6}  mean KL {:.6}  best {:.6} @ {}  {:.1}s",
                p.epoch,
                p.loss,
                mean_group_kl(p.loss, &set),
                p.best_loss,
                p.best_epoch,
                started.elapsed().as_secs_f64()
            );
            if let Err(e) = cp.save(&out) {
                save_error.get_or_insert(e);
            }
        }
    })?;
    if let Some(e) = save_error {
        return Err(anyhow::Error::new(e).context(format!("writing {}", out.display())));
    }
    checkpoint
        .save(&a.out)
        .with_context(|| format!("writing {}", a.out.display()))?;
    let curve_path = a.curve.unwrap_or_else(|| a.out.with_extension("curve.csv"));
    fs::write(&curve_path, curve.to_csv()).with_context(|| format!("writing {}", curve_path.display()))?;
    println!(
        "best epoch {} loss {:.6} (mean KL {:.6}); wrote {} and {}",
        checkpoint.epoch,
        checkpoint.loss,
        mean_group_kl(checkpoint.loss, &set),
        a.out.display(),
        curve_path.display()
    );
    Ok(())
}

fn label_names(cp: &Checkpoint) -> Vec<String> {
    cp.training.labels().map(str::to_string).collect()
}

fn sweep_cmd(a: SweepArgs, exec: Exec) -> anyhow::Result<()> {
    let cp = load_checkpoint(&a.checkpoint)?;
    let config = a.sampling.config();
    print_config("sweep", &config);
    let started = Instant::now();
    let result = sweep(&cp, GridSpec::new(a.resolution)?, &config, exec)?;
    eprintln!(
        "{} cells in {:.1}s",
        result.cells.len(),
        started.elapsed().as_secs_f64()
    );
    write_records(&a.out, &result.cells)?;
    let report_path = a.report.unwrap_or_else(|| a.out.with_extension("report.json"));
    write_json(&report_path, &result.report)?;
    if let Some(map) = &a.map {
        render_map(
            result.grid,
            &result.cells,
            &label_names(&cp),
            result.learned_threshold,
        )?
        .save(map)?;
    }
    print_summary(&result.report);
    Ok(())
}

fn measure_cmd(a: MeasureArgs, exec: Exec) -> anyhow::Result<()> {
    let cp = load_checkpoint(&a.checkpoint)?;
    let (grid, cells) = read_records(&a.records)?;
    let config = a.sampling.config();
    print_config("measure", &config);
    let report = summarize(&cp, grid, &cells, &config, exec)?;
    if let Some(path) = &a.report {
        write_json(path, &report)?;
    }
    print_summary(&report);
    Ok(())
}

fn print_summary(report: &novact::explorer::SweepReport) {
    for c in &report.classes {
        println!("{:<24}{:>8}  {:>7.3}%", c.class.as_str(), c.count, c.percent);
    }
    println!("learned fraction of appropriate: {:.4}", report.learned_fraction);
    match (&report.novelty, &report.diversity) {
        (Some(n), Some(d)) => {
            println!("novelty   {:.4} ± {:.4}", n.mean, n.stdev);
            println!("diversity {:.4} ± {:.4}", d.mean, d.stdev);
        }
        _ => println!(
            "novelty/diversity unavailable: {}",
            report.sampling_note.as_deref().unwrap_or("no samples")
        ),
    }
}

fn render_cmd(a: RenderArgs) -> anyhow::Result<()> {
    let cp = load_checkpoint(&a.checkpoint)?;
    let (grid, cells) = read_records(&a.records)?;
    let threshold = match a.threshold {
        Some(t) => t,
        None => novact::metrics::default_learned_threshold(&cp.reference_set()?)?,
    };
    render_map(grid, &cells, &label_names(&cp), threshold)?.save(&a.out)?;
    println!("{}", a.out.display());
    Ok(())
}

fn generate_cmd(a: GenerateArgs) -> anyhow::Result<()> {
    let cp = load_checkpoint(&a.checkpoint)?;
    let steps = a.steps.unwrap_or_else(|| cp.default_steps());
    if steps == 0 {
        bail!("--steps must be at least 1");
    }
    let traj = cp.rollout(&PbPoint::new(a.pb)?, steps)?;
    match &a.out {
        Some(path) => write_trajectory_csv(path, &cp.training.joint_names, &traj)?,
        None => {
            println!("{}", cp.training.joint_names.join(","));
            for frame in traj.frames() {
                let row: Vec<String> = frame.iter().map(f64::to_string).collect();
                println!("{}", row.join(","));
            }
        }
    }
    Ok(())
}

fn serve_cmd(a: ServeArgs) -> anyhow::Result<()> {
    let config = ServeConfig {
        checkpoint: a.checkpoint,
        records: a.records,
        addr: a.addr,
        max_steps: a.max_steps,
    };
    let runtime = tokio::runtime::Runtime::new().context("starting the async runtime")?;
    runtime.block_on(service::serve(config))
}
