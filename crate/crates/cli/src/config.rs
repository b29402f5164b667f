//! Experiment config documents.
//!
//! A config is TOML with `schema_version = 1`. The experiment identity
//! (`name`, `method`, `plan`, `seed`, `network`, `dataset`) is required;
//! schedule tables missing from the file are filled from the selected preset.

use std::fs;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use growreg::groups::parse_pruning_plan;
use growreg::harness::{DatasetSpec, ExperimentConfig, Method, NetSpec, PrunePhase, TrainSchedule};
use growreg::netcore::Granularity;
use growreg::scheduler::{RegConfig, RegMethod};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Small constants sized for a laptop run.
    Desk,
    /// Reference schedule constants; long runs.
    Paper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliConfig {
    pub schema_version: u32,
    pub name: String,
    pub method: Method,
    pub plan: String,
    pub seed: u64,
    #[serde(default = "default_granularity")]
    pub granularity: Granularity,
    /// Pretrained checkpoint to start from instead of pretraining.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric_every: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_growing_iters: Option<usize>,
    pub network: NetSpec,
    pub dataset: DatasetSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reg: Option<RegConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pretrain: Option<TrainSchedule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finetune: Option<TrainSchedule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prune_phase: Option<PrunePhase>,
}

fn default_granularity() -> Granularity {
    Granularity::Filter
}

/// A validated config with every path made absolute.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub experiment: ExperimentConfig,
    pub baseline: Option<PathBuf>,
}

impl Loaded {
    /// Fully resolved document, suitable for reloading with any preset.
    pub fn to_toml(&self) -> String {
        let e = &self.experiment;
        let doc = CliConfig {
            schema_version: SCHEMA_VERSION,
            name: e.name.clone(),
            method: e.method,
            plan: e.plan.clone(),
            seed: e.seed,
            granularity: e.granularity,
            baseline: self.baseline.clone(),
            metric_every: Some(e.metric_every),
            max_growing_iters: Some(e.max_growing_iters),
            network: e.network.clone(),
            dataset: e.dataset.clone(),
            reg: Some(e.reg),
            pretrain: Some(e.pretrain.clone()),
            finetune: Some(e.finetune.clone()),
            prune_phase: Some(e.prune_phase),
        };
        toml::to_string(&doc).expect("config documents always serialise")
    }
}

/// 1-based line of `key = ...` or `[key]`, if present.
fn key_line(text: &str, key: &str) -> Option<usize> {
    text.lines().position(|l| {
        let t = l.trim_start();
        if let Some(rest) = t.strip_prefix('[') {
            return rest.trim_start().strip_prefix(key).is_some_and(|r| r.trim_start().starts_with(']'));
        }
        t.strip_prefix(key).is_some_and(|r| r.trim_start().starts_with('='))
    })
    .map(|i| i + 1)
}

fn at(path: &Path, text: &str, key: &str, msg: impl std::fmt::Display) -> CliError {
    let msg = match key_line(text, key) {
        Some(line) => format!("line {line}, `{key}`: {msg}"),
        None => format!("`{key}`: {msg}"),
    };
    CliError::input(path, msg)
}

fn resolve_path(path: &Path, dir: &Path, text: &str, key: &str, file: &Path) -> Result<PathBuf> {
    let full = if path.is_absolute() { path.to_path_buf() } else { dir.join(path) };
    if !full.is_file() {
        return Err(at(file, text, key, format!("{} does not exist", full.display())));
    }
    Ok(full)
}

/// Parses and validates `text`; relative paths resolve against `dir`.
pub fn parse(text: &str, file: &Path, dir: &Path, preset: Preset) -> Result<Loaded> {
    let doc: CliConfig = toml::from_str(text).map_err(|e| CliError::input(file, e))?;
    if doc.schema_version != SCHEMA_VERSION {
        return Err(at(file, text, "schema_version", format!("unsupported version {}, expected {SCHEMA_VERSION}", doc.schema_version)));
    }
    let base = match preset {
        Preset::Desk => ExperimentConfig::desk(doc.method, 0.0),
        Preset::Paper => ExperimentConfig::paper(doc.method, 0.0),
    };
    let mut dataset = doc.dataset;
    if let DatasetSpec::Csv { path, .. } = &mut dataset {
        *path = resolve_path(path, dir, text, "path", file)?;
    }
    let baseline = doc.baseline.map(|p| resolve_path(&p, dir, text, "baseline", file)).transpose()?;
    let experiment = ExperimentConfig {
        name: doc.name,
        network: doc.network,
        dataset,
        plan: doc.plan,
        granularity: doc.granularity,
        method: doc.method,
        reg: doc.reg.unwrap_or(base.reg),
        pretrain: doc.pretrain.unwrap_or(base.pretrain),
        finetune: doc.finetune.unwrap_or(base.finetune),
        prune_phase: doc.prune_phase.unwrap_or(base.prune_phase),
        seed: doc.seed,
        metric_every: doc.metric_every.unwrap_or(base.metric_every),
        max_growing_iters: doc.max_growing_iters.unwrap_or(base.max_growing_iters),
    };
    check(&experiment, text, file)?;
    Ok(Loaded { experiment, baseline })
}

/// Field-by-field validation so errors can point at a line.
fn check(e: &ExperimentConfig, text: &str, file: &Path) -> Result<()> {
    if e.name.is_empty() || e.name.contains(['/', '\\']) {
        return Err(at(file, text, "name", "must be non-empty and contain no path separators"));
    }
    let layers = e.network.conv.len() + e.network.hidden.len() + 1;
    parse_pruning_plan(&e.plan, layers, e.granularity).map_err(|err| at(file, text, "plan", err))?;
    let reg_method = match e.method {
        Method::Greg2 => RegMethod::Greg2,
        _ => RegMethod::Greg1,
    };
    e.reg.validate(reg_method).map_err(|err| at(file, text, "reg", err))?;
    e.pretrain.validate().map_err(|err| at(file, text, "pretrain", err))?;
    e.finetune.validate().map_err(|err| at(file, text, "finetune", err))?;
    e.validate().map_err(|err| {
        let msg = err.to_string();
        let key = ["metric_every", "prune_phase", "max_growing_iters"]
            .into_iter()
            .find(|k| msg.contains(k))
            .unwrap_or("method");
        at(file, text, key, msg)
    })
}

pub fn load(path: &Path, preset: Preset) -> Result<Loaded> {
    let text = fs::read_to_string(path).map_err(|e| CliError::input(path, e))?;
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let dir = dir.canonicalize().map_err(|e| CliError::input(path, e))?;
    parse(&text, path, &dir, preset)
}
