//! Command-line front end.
//!
//! Settings resolve as flags over config file over defaults, and every
//! command that writes an output directory also writes the resolved settings
//! there. Exit status: 0 success, 1 usage, 2 data error, 3 numeric failure.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use crate::aggregators::{canonical_kinds, AggregatorKind};
use crate::dataset::{DatasetDir, Split};
use crate::error::{HegError, Result};
use crate::gradcheck;
use crate::pooling::PoolingMode;
use crate::synth::{generate, SynthSpec, SynthTask};
use crate::train::{
    ablate, ablation_table, evaluate, load_checkpoint, monotone_pairs, save_checkpoint, train, AblationCell,
    TrainConfig,
};

pub const ENV_OUTPUT_ROOT: &str = "HEG_OUTPUT_ROOT";
pub const ENV_THREADS: &str = "HEG_THREADS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "heg", version, about = "High-order evolving graph action classifier")]
pub struct Cli {
    /// Worker thread cap; results do not depend on it.
    #[arg(long, global = true, env = ENV_THREADS)]
    pub threads: Option<usize>,

    /// Root that relative output directories are placed under.
    #[arg(long, global = true, env = ENV_OUTPUT_ROOT)]
    pub output_root: Option<PathBuf>,

    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset directory.
    Synth(SynthArgs),
    /// Build and cache the graphs of a dataset directory.
    BuildGraph(BuildGraphArgs),
    /// Train a classifier and write a checkpoint and loss log.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split.
    Eval(EvalArgs),
    /// Train and evaluate a grid of configurations.
    Ablate(AblateArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output dataset directory.
    #[arg(long, default_value = "synth")]
    pub out: PathBuf,
    /// TOML file with generator settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub videos: Option<usize>,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub min_objects: Option<usize>,
    #[arg(long)]
    pub max_objects: Option<usize>,
    #[arg(long)]
    pub feature_dim: Option<usize>,
    #[arg(long)]
    pub task: Option<SynthTask>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct BuildGraphArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Training config; only its stride is used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub stride: Option<usize>,
}

/// Every training setting, each overriding the config file.
#[derive(Debug, Args, Default)]
pub struct TrainFlags {
    /// TOML training config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, alias = "lr")]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub tau: Option<usize>,
    #[arg(long)]
    pub box_scale: Option<f64>,
    #[arg(long)]
    pub std_epsilon: Option<f64>,
    #[arg(long)]
    pub num_classes: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "train")]
    pub out: PathBuf,
    #[arg(long, default_value = "train")]
    pub split: Split,
    /// Aggregators, e.g. `mean,median,std,m3,m4`.
    #[arg(long, value_parser = parse_kinds)]
    pub aggregators: Option<KindList>,
    #[arg(long)]
    pub pooling: Option<PoolingMode>,
    #[arg(long, value_enum)]
    pub compression: Option<Switch>,
    #[command(flatten)]
    pub flags: TrainFlags,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: Split,
    #[arg(long, default_value = "eval")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "ablate")]
    pub out: PathBuf,
    #[arg(long, default_value = "train")]
    pub train_split: Split,
    #[arg(long, default_value = "test")]
    pub eval_split: Split,
    /// `table3` for the five cumulative subsets, or subsets separated by `;`
    /// such as `mean;mean,m3`.
    #[arg(long)]
    pub aggregators: Option<String>,
    /// `all` or a comma-separated list of modes.
    #[arg(long)]
    pub pooling: Option<String>,
    #[arg(long, value_enum)]
    pub compression: Option<CompressionAxis>,
    #[command(flatten)]
    pub flags: TrainFlags,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CompressionAxis {
    On,
    Off,
    Both,
}

/// Comma-separated aggregator list as one clap value.
#[derive(Debug, Clone)]
pub struct KindList(pub Vec<AggregatorKind>);

fn parse_kinds(s: &str) -> std::result::Result<KindList, String> {
    let kinds: Vec<AggregatorKind> = if s.trim().eq_ignore_ascii_case("all") {
        AggregatorKind::ALL.to_vec()
    } else {
        s.split([',', '+'])
            .filter(|p| !p.trim().is_empty())
            .map(str::parse)
            .collect::<Result<_>>()
            .map_err(|e| e.to_string())?
    };
    canonical_kinds(&kinds).map(KindList).map_err(|e| e.to_string())
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| HegError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| HegError::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| HegError::io(path, e))
}

impl TrainFlags {
    /// Defaults, then the config file, then flags.
    pub fn resolve(&self) -> Result<TrainConfig> {
        let mut c = match &self.config {
            Some(path) => TrainConfig::from_toml(&read_text(path)?)
                .map_err(|e| HegError::Domain(format!("{}: {e}", path.display())))?,
            None => TrainConfig::default(),
        };
        macro_rules! apply {
            ($($field:ident),*) => { $( if let Some(v) = self.$field { c.$field = v; } )* };
        }
        apply!(seed, epochs, learning_rate, weight_decay, batch_size, stride, tau, box_scale, std_epsilon);
        if self.num_classes.is_some() {
            c.num_classes = self.num_classes;
        }
        c.validate()?;
        Ok(c)
    }
}

struct Context {
    output_root: Option<PathBuf>,
}

impl Context {
    fn out_dir(&self, out: &Path) -> Result<PathBuf> {
        let dir = match &self.output_root {
            Some(root) if out.is_relative() => root.join(out),
            _ => out.to_path_buf(),
        };
        create_dir(&dir)?;
        Ok(dir)
    }
}

fn cmd_synth(ctx: &Context, args: &SynthArgs) -> Result<()> {
    let mut spec = match &args.config {
        Some(path) => toml::from_str(&read_text(path)?)
            .map_err(|e| HegError::Domain(format!("{}: {e}", path.display())))?,
        None => SynthSpec::default(),
    };
    macro_rules! apply {
        ($($flag:ident => $field:ident),*) => { $( if let Some(v) = args.$flag { spec.$field = v; } )* };
    }
    apply!(videos => num_videos, frames => frames_per_video, min_objects => min_objects,
           max_objects => max_objects, feature_dim => feature_dim, task => task, seed => seed);
    spec.validate()?;
    let dir = ctx.out_dir(&args.out)?;
    let videos = generate(&spec)?;
    let manifest = DatasetDir::new(&dir).write_synthetic(&spec, &videos)?;
    write_text(&dir.join("synth.toml"), &toml::to_string(&spec).expect("spec serializes"))?;
    println!(
        "wrote {} videos ({} train / {} val / {} test) to {}",
        videos.len(),
        manifest.splits.train.len(),
        manifest.splits.val.len(),
        manifest.splits.test.len(),
        dir.display()
    );
    Ok(())
}

fn cmd_build_graph(args: &BuildGraphArgs) -> Result<()> {
    let base = TrainFlags { config: args.config.clone(), stride: args.stride, ..TrainFlags::default() };
    let stride = base.resolve()?.stride;
    let n = DatasetDir::new(&args.data).write_graph_cache(stride)?;
    println!("cached {n} graphs (stride {stride}) in {}", args.data.join(crate::dataset::GRAPHS_DIR).display());
    Ok(())
}

fn cmd_train(ctx: &Context, args: &TrainArgs) -> Result<()> {
    let mut config = args.flags.resolve()?;
    if let Some(kinds) = &args.aggregators {
        config.kinds = kinds.0.clone();
    }
    if let Some(p) = args.pooling {
        config.pooling = p;
    }
    if let Some(c) = args.compression {
        config.compression = c == Switch::On;
    }
    config.validate()?;
    let data = DatasetDir::new(&args.data);
    if config.num_classes.is_none() {
        config.num_classes = Some(data.manifest()?.num_classes);
    }
    let dir = ctx.out_dir(&args.out)?;
    write_text(&dir.join("config.toml"), &config.to_toml())?;
    let graphs = data.load_graphs(args.split, config.stride)?;
    info!("training on {} graphs", graphs.len());
    let outcome = train(&config, &graphs)?;
    let mut log = String::from("epoch\tloss\n");
    for (e, l) in outcome.loss_history.iter().enumerate() {
        log.push_str(&format!("{e}\t{l:e}\n"));
    }
    write_text(&dir.join("loss.tsv"), &log)?;
    let ckpt = dir.join("checkpoint.hegc");
    save_checkpoint(&ckpt, &config, &outcome.classifier)?;
    println!(
        "final loss {:.6} after {} epochs; checkpoint {}",
        outcome.loss_history.last().copied().unwrap_or(f64::NAN),
        config.epochs,
        ckpt.display()
    );
    Ok(())
}

fn cmd_eval(ctx: &Context, args: &EvalArgs) -> Result<()> {
    let (config, classifier) = load_checkpoint(&args.checkpoint)?;
    let graphs = DatasetDir::new(&args.data).load_graphs(args.split, config.stride)?;
    let report = evaluate(&classifier, &graphs)?;
    let dir = ctx.out_dir(&args.out)?;
    let text = report.to_text();
    write_text(&dir.join("report.txt"), &text)?;
    write_text(&dir.join("report.json"), &(serde_json::to_string(&report).expect("report serializes") + "\n"))?;
    print!("{text}");
    Ok(())
}

fn ablation_grid(args: &AblateArgs, base: &TrainConfig) -> Result<(Vec<AblationCell>, bool)> {
    let mut table3 = false;
    let kind_axis: Vec<Vec<AggregatorKind>> = match args.aggregators.as_deref() {
        None => vec![base.kinds.clone()],
        Some(s) if s.trim().eq_ignore_ascii_case("table3") => {
            table3 = true;
            AggregatorKind::cumulative_subsets()
        }
        Some(s) => s
            .split(';')
            .filter(|p| !p.trim().is_empty())
            .map(|p| parse_kinds(p).map(|k| k.0).map_err(HegError::Domain))
            .collect::<Result<_>>()?,
    };
    let pooling_axis: Vec<PoolingMode> = match args.pooling.as_deref() {
        None => vec![base.pooling],
        Some(s) if s.trim().eq_ignore_ascii_case("all") => PoolingMode::ALL.to_vec(),
        Some(s) => s.split(',').map(str::parse).collect::<Result<_>>()?,
    };
    let compression_axis = match args.compression {
        None => vec![base.compression],
        Some(CompressionAxis::On) => vec![true],
        Some(CompressionAxis::Off) => vec![false],
        Some(CompressionAxis::Both) => vec![false, true],
    };
    let mut grid = Vec::new();
    for kinds in &kind_axis {
        for &pooling in &pooling_axis {
            for &compression in &compression_axis {
                grid.push(AblationCell { kinds: kinds.clone(), pooling, compression });
            }
        }
    }
    Ok((grid, table3 && grid_is_single_axis(&pooling_axis, &compression_axis)))
}

fn grid_is_single_axis(pooling: &[PoolingMode], compression: &[bool]) -> bool {
    pooling.len() == 1 && compression.len() == 1
}

fn cmd_ablate(ctx: &Context, args: &AblateArgs) -> Result<()> {
    let mut base = args.flags.resolve()?;
    let data = DatasetDir::new(&args.data);
    if base.num_classes.is_none() {
        base.num_classes = Some(data.manifest()?.num_classes);
    }
    let (grid, table3) = ablation_grid(args, &base)?;
    let dir = ctx.out_dir(&args.out)?;
    write_text(&dir.join("config.toml"), &base.to_toml())?;
    let train_set = data.load_graphs(args.train_split, base.stride)?;
    let eval_set = data.load_graphs(args.eval_split, base.stride)?;
    let rows = ablate(&base, &grid, &train_set, &eval_set)?;
    let table = ablation_table(&rows);
    write_text(&dir.join("ablation.txt"), &table)?;
    let jsonl: String = rows
        .iter()
        .map(|r| serde_json::to_string(r).expect("row serializes") + "\n")
        .collect();
    write_text(&dir.join("ablation.jsonl"), &jsonl)?;
    print!("{table}");
    if table3 {
        let (ok, pairs) = monotone_pairs(&rows);
        println!("non-decreasing accuracy in {ok} of {pairs} adjacent subset pairs");
    }
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        warn!("{failed} of {} cells failed", rows.len());
    }
    Ok(())
}

fn cmd_gradcheck(args: &GradcheckArgs) -> Result<bool> {
    let checks = gradcheck::run(args.seed)?;
    let mut all = true;
    for c in &checks {
        all &= c.passed();
        println!(
            "{:<22} max rel err {:.3e}  {}",
            c.component,
            c.max_relative_error,
            if c.passed() { "ok" } else { "FAIL" }
        );
    }
    println!("{}", if all { "all components within tolerance" } else { "gradient check FAILED" });
    Ok(all)
}

fn dispatch(ctx: &Context, command: &Command) -> Result<i32> {
    match command {
        Command::Synth(a) => cmd_synth(ctx, a)?,
        Command::BuildGraph(a) => cmd_build_graph(a)?,
        Command::Train(a) => cmd_train(ctx, a)?,
        Command::Eval(a) => cmd_eval(ctx, a)?,
        Command::Ablate(a) => cmd_ablate(ctx, a)?,
        Command::Gradcheck(a) => return Ok(if cmd_gradcheck(a)? { EXIT_OK } else { EXIT_NUMERIC }),
    }
    Ok(EXIT_OK)
}

/// Parses `argv` (program name first), runs the command and returns the exit
/// status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();

    let ctx = Context { output_root: cli.output_root.clone() };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return EXIT_USAGE;
        }
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker threads: {e}");
            return EXIT_NUMERIC;
        }
    };
    match pool.install(|| dispatch(&ctx, &cli.command)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
