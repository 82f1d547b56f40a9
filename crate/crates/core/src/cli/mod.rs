//! The `afnet` command line: convert, train, evaluate, sweep and report.
//!
//! Exit codes: 0 on success, 1 on runtime failure, 2 on usage or
//! configuration errors.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use crate::bench::{self, Axis, SweepEnv, SweepPlan};
use crate::error::{Error, Result};
use crate::hsio::mat::{convert_mat, ConvertKind, ConvertOptions};
use crate::hsio::{datasets, ClassLegend};
use crate::net::{AttentionKind, ModelKind};
use crate::pipeline::{self, files, RunConfig, RunManifest, Scene};
use crate::prep::{BorderMode, Fractions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "afnet", version, about = "Hyperspectral image classification with attention-fused hybrid networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert a MAT file into the native container.
    Convert(ConvertArgs),
    /// Train and evaluate one model.
    Train(TrainArgs),
    /// Re-evaluate a trained run and render its maps.
    Evaluate(EvaluateArgs),
    /// Run a spatial-size or training-fraction sweep.
    Sweep(SweepArgs),
    /// Print tables for the results under a directory.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KindArg {
    Cube,
    Labels,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    /// Input `.mat` file.
    #[arg(long)]
    pub input: PathBuf,
    /// Output container (`.hsij`; the payload goes next to it as `.hsib`).
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, value_enum, default_value = "cube")]
    pub kind: KindArg,
    /// Variable to read; defaults to the first array of suitable rank.
    #[arg(long)]
    pub variable: Option<String>,
    /// Dataset name stored in the header.
    #[arg(long)]
    pub name: Option<String>,
    /// 1-based bands to drop, e.g. `108-112,154-167,224`.
    #[arg(long)]
    pub remove_bands: Option<String>,
    /// Legend JSON (list of {id, name, rgb}) stored with a label raster.
    #[arg(long)]
    pub legend: Option<PathBuf>,
}

/// Options shared by commands that train.
#[derive(Debug, Args, Default)]
pub struct RunOverrides {
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub model: Option<ModelKind>,
    #[arg(long)]
    pub patch_size: Option<usize>,
    #[arg(long)]
    pub components: Option<usize>,
    /// Train/validation/test split, e.g. `15/15/70`.
    #[arg(long)]
    pub fractions: Option<Fractions>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub border_mode: Option<BorderMode>,
    #[arg(long)]
    pub attention: Option<AttentionKind>,
}

impl RunOverrides {
    /// Applies every flag that was given on top of `cfg`.
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(v) = &self.dataset {
            cfg.dataset = v.clone();
        }
        if let Some(v) = self.model {
            cfg.model = v;
        }
        if let Some(v) = self.patch_size {
            cfg.patch_size = v;
        }
        if let Some(v) = self.components {
            cfg.components = v;
        }
        if let Some(v) = self.fractions {
            cfg.fractions = v;
        }
        if let Some(v) = self.epochs {
            cfg.train.epochs = v;
        }
        if let Some(v) = self.batch_size {
            cfg.train.batch_size = v;
        }
        if let Some(v) = self.lr {
            cfg.train.learning_rate = v;
        }
        if let Some(v) = self.seed {
            cfg.train.seed = v;
        }
        if let Some(v) = self.border_mode {
            cfg.border_mode = v;
        }
        if let Some(v) = self.attention {
            cfg.attention = v;
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Run configuration JSON; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: RunOverrides,
    /// Dataset root; defaults to `$AFNET_DATA_DIR`.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Directory for checkpoint, history, report, maps and manifest.
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from the checkpoint and optimizer state in `--out`.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Run directory written by `train`.
    #[arg(long)]
    pub run: PathBuf,
    /// Split to evaluate; defaults to the run's own split.
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Output directory; defaults to `<run>/eval`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Nearest-neighbour enlargement of the maps.
    #[arg(long, default_value_t = 4)]
    pub scale: u32,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AxisArg {
    Spatial,
    Fraction,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Sweep plan JSON.
    #[arg(long)]
    pub plan: PathBuf,
    #[arg(long, value_enum)]
    pub axis: AxisArg,
    #[arg(long)]
    pub out: PathBuf,
    /// Concurrent runs.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<ModelKind>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub attention: Option<AttentionKind>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Results root laid out as `<dataset>/<model>/<axis>=<value>/run<k>`.
    #[arg(long)]
    pub results: PathBuf,
    /// Print JSON instead of text tables.
    #[arg(long)]
    pub json: bool,
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let command: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(cli.command, command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                EXIT_USAGE
            } else {
                EXIT_FAILURE
            }
        }
    }
}

fn execute(cmd: Command, command: Vec<String>) -> Result<i32> {
    match cmd {
        Command::Convert(a) => cmd_convert(&a).map(|_| EXIT_OK),
        Command::Train(a) => cmd_train(&a, command).map(|_| EXIT_OK),
        Command::Evaluate(a) => cmd_evaluate(&a).map(|_| EXIT_OK),
        Command::Sweep(a) => cmd_sweep(&a, command).map(|r| if r.failure_count() > 0 { EXIT_FAILURE } else { EXIT_OK }),
        Command::Report(a) => cmd_report(&a).map(|_| EXIT_OK),
    }
}

fn data_root(flag: &Option<PathBuf>) -> Result<PathBuf> {
    flag.clone().or_else(datasets::data_dir_from_env).ok_or_else(|| {
        Error::InvalidArgument(format!("no dataset root: pass --data-dir or set {}", datasets::DATA_DIR_ENV))
    })
}

/// Parses `1-3,7` into `[1, 2, 3, 7]`.
pub fn parse_band_list(s: &str) -> Result<Vec<usize>> {
    let bad = || Error::InvalidArgument(format!("cannot parse band list {s:?}"));
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (usize, usize) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
                if a > b {
                    return Err(bad());
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().map_err(|_| bad())?),
        }
    }
    Ok(out)
}

pub fn cmd_convert(a: &ConvertArgs) -> Result<()> {
    let legend = match &a.legend {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            Some(ClassLegend::new(serde_json::from_str(&text)?)?)
        }
        None => None,
    };
    let opts = ConvertOptions {
        variable: a.variable.clone(),
        name: a.name.clone(),
        removed_bands: a.remove_bands.as_deref().map(parse_band_list).transpose()?.unwrap_or_default(),
        legend,
    };
    let kind = match a.kind {
        KindArg::Cube => ConvertKind::Cube,
        KindArg::Labels => ConvertKind::Labels,
    };
    convert_mat(&a.input, &a.output, kind, &opts)?;
    info!("wrote {}", a.output.display());
    Ok(())
}

/// Resolves the configuration: defaults, then the file, then flags.
pub fn resolve_run_config(config: Option<&Path>, overrides: &RunOverrides) -> Result<RunConfig> {
    let mut cfg = match config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    overrides.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

pub fn cmd_train(a: &TrainArgs, command: Vec<String>) -> Result<pipeline::RunOutcome> {
    let cfg = if a.resume && a.config.is_none() {
        let mut c = RunConfig::load(&a.out.join(files::CONFIG))?;
        a.overrides.apply(&mut c);
        c.validate()?;
        c
    } else {
        resolve_run_config(a.config.as_deref(), &a.overrides)?
    };
    let root = data_root(&a.data_dir)?;
    let scene = Scene::load(&root, &cfg.dataset)?;
    let mut manifest = RunManifest::new(command, &cfg, cfg.seed(), &scene.sources)?;
    let resume = a.resume.then_some(a.out.as_path());
    let outcome = pipeline::run(&scene, &cfg, Some(&a.out), resume)?;
    manifest.save(&a.out)?;
    print!("{}", outcome.report.to_text());
    Ok(outcome)
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> Result<crate::metrics::EvaluationReport> {
    let cfg = RunConfig::load(&a.run.join(files::CONFIG))?;
    let root = data_root(&a.data_dir)?;
    let scene = Scene::load(&root, &cfg.dataset)?;
    let (report, labels, prepared) = pipeline::evaluate_checkpoint(&scene, &a.run, a.split.as_deref())?;
    let out = a.out.clone().unwrap_or_else(|| a.run.join("eval"));
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    report.save(&out.join(files::REPORT))?;
    let text_path = out.join(files::REPORT_TEXT);
    std::fs::write(&text_path, report.to_text()).map_err(|e| Error::io(&text_path, e))?;
    pipeline::write_maps(&out, &scene, &prepared.patches, &labels, a.scale)?;
    let mut inputs = scene.sources.clone();
    inputs.push(a.run.join(crate::net::Checkpoint::PARAMS_FILE));
    let mut manifest = RunManifest::new(
        std::env::args().collect(),
        &serde_json::json!({ "run": a.run, "split": a.split, "scale": a.scale }),
        cfg.seed(),
        &inputs,
    )?;
    manifest.save(&out)?;
    print!("{}", report.to_text());
    Ok(report)
}

pub fn cmd_sweep(a: &SweepArgs, command: Vec<String>) -> Result<bench::SweepResult> {
    let mut plan = SweepPlan::load(&a.plan)?;
    if let Some(m) = a.model {
        plan.model = m;
    }
    if let Some(s) = a.seed {
        plan.seed = s;
    }
    if let Some(e) = a.epochs {
        plan.train.epochs = e;
    }
    if let Some(k) = a.attention {
        plan.attention = k;
    }
    let axis = match a.axis {
        AxisArg::Spatial => Axis::Spatial,
        AxisArg::Fraction => Axis::Fraction,
    };
    let env = SweepEnv {
        data_root: data_root(&a.data_dir)?,
        results_root: Some(a.out.clone()),
        jobs: a.jobs,
        command,
    };
    let result = bench::sweep(&plan, axis, &env)?;
    let (table, text) = bench::report(&result);
    let stem = format!("sweep_{}_{}", axis.as_str(), plan.model);
    let json_path = a.out.join(format!("{stem}.json"));
    std::fs::write(&json_path, serde_json::to_string_pretty(&table)?).map_err(|e| Error::io(&json_path, e))?;
    let text_path = a.out.join(format!("{stem}.txt"));
    std::fs::write(&text_path, &text).map_err(|e| Error::io(&text_path, e))?;
    print!("{text}");
    for c in &result.cells {
        for f in &c.failures {
            eprintln!("{} {}={}: {f}", c.dataset, axis.as_str(), c.value);
        }
    }
    Ok(result)
}

pub fn cmd_report(a: &ReportArgs) -> Result<Vec<bench::ReportTable>> {
    let results = bench::collect_results(&a.results)?;
    let mut tables = Vec::new();
    for r in &results {
        let (table, text) = bench::report(r);
        if !a.json {
            print!("{text}");
        }
        tables.push(table);
    }
    if a.json {
        println!("{}", serde_json::to_string_pretty(&tables)?);
    }
    Ok(tables)
}
