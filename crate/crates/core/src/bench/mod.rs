//! Spatial-size and training-fraction sweeps over datasets, with
//! per-cell repeats, aggregation and table reports.

mod table;

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use log::{error, info};
use serde::{Deserialize, Serialize};

pub use table::{collect_results, report, ReportTable};

use crate::error::{Error, Result};
use crate::metrics::EvaluationReport;
use crate::net::{AfNetConfig, AttentionKind, ModelKind};
use crate::pipeline::{self, RunConfig, RunManifest, Scene};
use crate::prep::{BorderMode, Fractions};
use crate::seed;
use crate::trainer::TrainConfig;

pub const SPATIAL_SIZES: [usize; 4] = [9, 11, 13, 15];
pub const TRAIN_PERCENTS: [usize; 5] = [5, 7, 10, 12, 15];
/// Training percentage held fixed by the spatial sweep.
pub const SPATIAL_SWEEP_PERCENT: usize = 15;
/// Patch size held fixed by the fraction sweep.
pub const FRACTION_SWEEP_SIZE: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Spatial,
    Fraction,
}

impl Axis {
    pub fn as_str(self) -> &'static str {
        match self {
            Axis::Spatial => "spatial",
            Axis::Fraction => "fraction",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "spatial" => Some(Axis::Spatial),
            "fraction" => Some(Axis::Fraction),
            _ => None,
        }
    }
}

fn default_repeats() -> usize {
    3
}

fn default_components() -> usize {
    15
}

/// A sweep description, usually read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPlan {
    pub datasets: Vec<String>,
    pub model: ModelKind,
    /// Patch sizes for the spatial sweep.
    #[serde(default)]
    pub sizes: Vec<usize>,
    /// Training percentages for the fraction sweep (validation gets the
    /// same share, testing the rest).
    #[serde(default)]
    pub fractions: Vec<usize>,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_components")]
    pub components: usize,
    #[serde(default)]
    pub border_mode: BorderMode,
    #[serde(default)]
    pub attention: AttentionKind,
    #[serde(default)]
    pub train: TrainConfig,
    /// Network layout template; patch size, components and class count are
    /// filled in per cell. `None` uses the default schedule.
    #[serde(default)]
    pub network: Option<AfNetConfig>,
}

impl SweepPlan {
    pub fn new(datasets: Vec<String>, model: ModelKind) -> Self {
        Self {
            datasets,
            model,
            sizes: Vec::new(),
            fractions: Vec::new(),
            repeats: default_repeats(),
            seed: 0,
            components: default_components(),
            border_mode: BorderMode::default(),
            attention: AttentionKind::default(),
            train: TrainConfig::default(),
            network: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    /// Checks the axis used by `axis`; the other may be empty.
    pub fn validate(&self, axis: Axis) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.datasets.is_empty() {
            return bad("sweep plan lists no datasets".into());
        }
        if self.repeats == 0 {
            return bad("repeats must be at least 1".into());
        }
        match axis {
            Axis::Spatial => {
                if self.sizes.is_empty() {
                    return bad("spatial sweep needs at least one size".into());
                }
                if let Some(s) = self.sizes.iter().find(|s| !SPATIAL_SIZES.contains(s)) {
                    return bad(format!("size {s} is not one of {SPATIAL_SIZES:?}"));
                }
            }
            Axis::Fraction => {
                if self.fractions.is_empty() {
                    return bad("fraction sweep needs at least one fraction".into());
                }
                if let Some(f) = self.fractions.iter().find(|f| !TRAIN_PERCENTS.contains(f)) {
                    return bad(format!("fraction {f}% is not one of {TRAIN_PERCENTS:?}"));
                }
            }
        }
        self.train.validate()
    }

    /// (dataset, axis value) pairs in execution order.
    pub fn cells(&self, axis: Axis) -> Vec<(String, usize)> {
        let values = match axis {
            Axis::Spatial => &self.sizes,
            Axis::Fraction => &self.fractions,
        };
        self.datasets
            .iter()
            .flat_map(|d| values.iter().map(move |&v| (d.clone(), v)))
            .collect()
    }

    /// Root seed of one repeat of one cell.
    pub fn run_seed(&self, cell: usize, repeat: usize) -> u64 {
        seed::derive(seed::derive(self.seed, cell as u64), repeat as u64)
    }

    pub fn run_config(&self, axis: Axis, dataset: &str, value: usize, seed: u64) -> Result<RunConfig> {
        let (patch_size, percent) = match axis {
            Axis::Spatial => (value, SPATIAL_SWEEP_PERCENT),
            Axis::Fraction => (FRACTION_SWEEP_SIZE, value),
        };
        Ok(RunConfig {
            dataset: dataset.to_string(),
            model: self.model,
            patch_size,
            components: self.components,
            fractions: Fractions::percent(percent as f64)?,
            border_mode: self.border_mode,
            attention: self.attention,
            network: self.network.clone(),
            train: TrainConfig { seed, ..self.train.clone() },
            map_scale: 4,
        })
    }
}

/// `<root>/<dataset>/<model>/<axis>=<value>/run<k>`.
pub fn run_dir(root: &Path, dataset: &str, model: ModelKind, axis: Axis, value: usize, repeat: usize) -> PathBuf {
    root.join(dataset)
        .join(model.as_str())
        .join(format!("{}={value}", axis.as_str()))
        .join(format!("run{repeat}"))
}

/// Mean and population standard deviation of the five table quantities.
/// Metrics are fractions; times are seconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub kappa: f64,
    pub oa: f64,
    pub aa: f64,
    pub tr_seconds: f64,
    pub te_seconds: f64,
}

impl Summary {
    fn of(reports: &[EvaluationReport]) -> (Self, Self) {
        let n = reports.len() as f64;
        let pick = |f: fn(&EvaluationReport) -> f64| -> (f64, f64) {
            if reports.is_empty() {
                return (f64::NAN, f64::NAN);
            }
            let mean = reports.iter().map(f).sum::<f64>() / n;
            let var = reports.iter().map(|r| (f(r) - mean).powi(2)).sum::<f64>() / n;
            (mean, var.sqrt())
        };
        let k = pick(|r| r.kappa);
        let o = pick(|r| r.oa);
        let a = pick(|r| r.aa);
        let t = pick(|r| r.tr_seconds);
        let e = pick(|r| r.te_seconds);
        (
            Self { kappa: k.0, oa: o.0, aa: a.0, tr_seconds: t.0, te_seconds: e.0 },
            Self { kappa: k.1, oa: o.1, aa: a.1, tr_seconds: t.1, te_seconds: e.1 },
        )
    }
}

/// All repeats of one (dataset, value) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub dataset: String,
    pub value: usize,
    pub seeds: Vec<u64>,
    pub reports: Vec<EvaluationReport>,
    pub failures: Vec<String>,
    pub mean: Summary,
    pub std: Summary,
}

impl CellResult {
    pub fn new(dataset: String, value: usize, seeds: Vec<u64>, reports: Vec<EvaluationReport>, failures: Vec<String>) -> Self {
        let (mean, std) = Summary::of(&reports);
        Self { dataset, value, seeds, reports, failures, mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: Axis,
    pub model: ModelKind,
    pub cells: Vec<CellResult>,
}

impl SweepResult {
    pub fn failure_count(&self) -> usize {
        self.cells.iter().map(|c| c.failures.len()).sum()
    }

    pub fn report_count(&self) -> usize {
        self.cells.iter().map(|c| c.reports.len()).sum()
    }
}

/// Where a sweep reads data and writes results.
#[derive(Debug, Clone)]
pub struct SweepEnv {
    pub data_root: PathBuf,
    pub results_root: Option<PathBuf>,
    /// Concurrent runs.
    pub jobs: usize,
    /// Command line recorded in each run manifest.
    pub command: Vec<String>,
}

pub fn sweep_spatial(plan: &SweepPlan, env: &SweepEnv) -> Result<SweepResult> {
    sweep(plan, Axis::Spatial, env)
}

pub fn sweep_fraction(plan: &SweepPlan, env: &SweepEnv) -> Result<SweepResult> {
    sweep(plan, Axis::Fraction, env)
}

/// Runs every cell and repeat. A failing run is recorded in its cell and
/// the sweep continues; scenes that cannot be loaded fail all their runs.
pub fn sweep(plan: &SweepPlan, axis: Axis, env: &SweepEnv) -> Result<SweepResult> {
    plan.validate(axis)?;
    let cells = plan.cells(axis);
    let mut scenes = Vec::new();
    for name in &plan.datasets {
        scenes.push(Scene::load(&env.data_root, name).map_err(|e| e.to_string()));
    }
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..plan.repeats).map(move |r| (c, r)))
        .collect();
    let outcomes: Mutex<Vec<Option<std::result::Result<EvaluationReport, String>>>> = Mutex::new(vec![None; jobs.len()]);
    let next = AtomicUsize::new(0);
    let work = || loop {
        let k = next.fetch_add(1, Ordering::SeqCst);
        let Some(&(cell, repeat)) = jobs.get(k) else { break };
        let (dataset, value) = &cells[cell];
        let di = plan.datasets.iter().position(|d| d == dataset).expect("cell dataset is in the plan");
        let seed = plan.run_seed(cell, repeat);
        let outcome = match &scenes[di] {
            Err(e) => Err(e.clone()),
            Ok(scene) => run_cell(plan, axis, env, scene, *value, repeat, seed).map_err(|e| e.to_string()),
        };
        match &outcome {
            Ok(r) => info!("{dataset} {}={value} run{repeat}: OA {:.4}", axis.as_str(), r.oa),
            Err(e) => error!("{dataset} {}={value} run{repeat} failed: {e}", axis.as_str()),
        }
        outcomes.lock().expect("no poisoned lock")[k] = Some(outcome);
    };
    let threads = env.jobs.max(1).min(jobs.len());
    std::thread::scope(|s| {
        for _ in 1..threads {
            s.spawn(work);
        }
        work();
    });
    let outcomes = outcomes.into_inner().expect("no poisoned lock");
    let mut result = SweepResult { axis, model: plan.model, cells: Vec::new() };
    for (c, (dataset, value)) in cells.iter().enumerate() {
        let mut reports = Vec::new();
        let mut failures = Vec::new();
        let mut seeds = Vec::new();
        for r in 0..plan.repeats {
            seeds.push(plan.run_seed(c, r));
            match outcomes[c * plan.repeats + r].clone().expect("every job ran") {
                Ok(rep) => reports.push(rep),
                Err(e) => failures.push(format!("run{r}: {e}")),
            }
        }
        result.cells.push(CellResult::new(dataset.clone(), *value, seeds, reports, failures));
    }
    Ok(result)
}

fn run_cell(plan: &SweepPlan, axis: Axis, env: &SweepEnv, scene: &Scene, value: usize, repeat: usize, seed: u64) -> Result<EvaluationReport> {
    let cfg = plan.run_config(axis, &scene.name, value, seed)?;
    let dir = env
        .results_root
        .as_ref()
        .map(|root| run_dir(root, &scene.name, plan.model, axis, value, repeat));
    let mut manifest = RunManifest::new(env.command.clone(), &cfg, seed, &scene.sources)?;
    let outcome = pipeline::run(scene, &cfg, dir.as_deref(), None)?;
    if let Some(d) = &dir {
        manifest.save(d)?;
    }
    Ok(outcome.report)
}
