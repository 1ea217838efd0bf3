//! Experiment orchestration: trials, step-size selection, CSV trajectories and
//! trial aggregation.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::criteria::{default_lambda, schedule_params, CriterionParams};
use crate::data::{
    generate_2d_outlier, load_tabular, preprocess, shuffle_split, Dataset, Split, SynthConfig, TabularFormat,
    TabularOptions,
};
use crate::error::{Error, Result};
use crate::optimizer::{initial_state, run, zero_weights, OptConfig, OptMode, RunResult, DEFAULT_B_FLOOR, RNG_ALGORITHM};

/// Metrics of one split at one checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub checkpoint: usize,
    pub split: Split,
    /// Sample mean plus standard deviation of the base loss (weight 1).
    pub mean_sd: f64,
    pub mean_loss: f64,
    pub error_rate: f64,
    pub model_norm: f64,
    pub objective: f64,
    pub a: Option<f64>,
    pub b: Option<f64>,
}

pub const TRAJECTORY_HEADER: [&str; 9] = [
    "checkpoint",
    "split",
    "mean_sd",
    "mean_loss",
    "error_rate",
    "model_norm",
    "objective",
    "a",
    "b",
];

pub fn write_trajectory_csv(path: &Path, records: &[TrajectoryRecord]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    if records.is_empty() {
        w.write_record(TRAJECTORY_HEADER)?;
    }
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_trajectory_csv(path: &Path) -> Result<Vec<TrajectoryRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header != TRAJECTORY_HEADER {
        return Err(Error::Parse {
            path: path.display().to_string(),
            line: 1,
            message: format!("unexpected header {header:?}"),
        });
    }
    r.deserialize().map(|rec| rec.map_err(Error::from)).collect()
}

/// Where the data for an experiment comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSpec {
    /// `synthetic`, `csv` or `svmlight`.
    pub kind: String,
    pub path: Option<PathBuf>,
    pub label_column: Option<String>,
    pub categorical: Vec<String>,
    pub n: usize,
    pub outlier_scale: f64,
    /// Seed of the synthetic generator; the experiment seed when unset.
    pub synth_seed: Option<u64>,
    /// Shuffle into train/val/test per trial. Without it every row trains.
    pub split: bool,
    /// Min-max scale features using training statistics.
    pub normalize: bool,
}

impl Default for DataSpec {
    fn default() -> Self {
        DataSpec {
            kind: "synthetic".into(),
            path: None,
            label_column: None,
            categorical: Vec::new(),
            n: 100,
            outlier_scale: -10.0,
            synth_seed: None,
            split: false,
            normalize: false,
        }
    }
}

impl DataSpec {
    pub fn load(&self, seed: u64) -> Result<Dataset> {
        match self.kind.as_str() {
            "synthetic" => generate_2d_outlier(&SynthConfig {
                n: self.n,
                outlier_scale: self.outlier_scale,
                seed: self.synth_seed.unwrap_or(seed),
                ..SynthConfig::default()
            }),
            kind => {
                let format: TabularFormat = kind.parse()?;
                let path = self
                    .path
                    .as_ref()
                    .ok_or_else(|| Error::Config("data.path is required for tabular data".into()))?;
                let options = TabularOptions {
                    label_column: self.label_column.clone(),
                    categorical: self.categorical.clone(),
                    ..TabularOptions::default()
                };
                load_tabular(path, format, &options)
            }
        }
    }

    /// Dataset for one trial: split with `split_seed`, then normalised.
    pub fn prepare(&self, raw: &Dataset, split_seed: u64) -> Result<Dataset> {
        let ds = if self.split { shuffle_split(raw, split_seed)? } else { raw.clone() };
        if self.normalize {
            preprocess(&ds)
        } else {
            Ok(ds)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSpec {
    /// `batch` or `sgd`.
    pub mode: String,
    pub step_sizes: Vec<f64>,
    pub iterations: usize,
    pub epochs: usize,
    pub batch_size: usize,
    /// Defaults to 100 iterations in batch mode and 1 epoch in sgd mode.
    pub checkpoint_every: Option<usize>,
    pub b_floor: f64,
    /// Initial model weights (flattened, bias last); zeros when unset.
    pub init_weights: Option<Vec<f64>>,
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        OptimizerSpec {
            mode: "batch".into(),
            step_sizes: vec![0.01],
            iterations: 15_000,
            epochs: 30,
            batch_size: 32,
            checkpoint_every: None,
            b_floor: DEFAULT_B_FLOOR,
            init_weights: None,
        }
    }
}

impl OptimizerSpec {
    pub fn config(&self, step_size: f64, seed: u64) -> Result<OptConfig> {
        let (mode, every) = match self.mode.as_str() {
            "batch" => (OptMode::Batch { iterations: self.iterations }, 100),
            "sgd" => (
                OptMode::Stochastic {
                    epochs: self.epochs,
                    batch_size: self.batch_size,
                },
                1,
            ),
            other => return Err(Error::Config(format!("unknown optimizer mode '{other}'"))),
        };
        let config = OptConfig {
            step_size,
            mode,
            seed,
            checkpoint_every: self.checkpoint_every.unwrap_or(every),
            b_floor: self.b_floor,
        };
        config.validate()?;
        Ok(config)
    }
}

/// Criterion families and their hyperparameter grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CriteriaSpec {
    /// Training weight for Sun-Huber; `log(n)/sqrt(n)` of the training size when unset.
    pub lambda: Option<f64>,
    pub sunhuber_beta0: Vec<f64>,
    pub erm: bool,
    pub cvar_xi: Vec<f64>,
    pub dro_eta_tilde: Vec<f64>,
}

pub const DEFAULT_LEVELS: [f64; 5] = [0.1, 0.25, 0.5, 0.75, 0.9];

impl Default for CriteriaSpec {
    fn default() -> Self {
        CriteriaSpec {
            lambda: None,
            sunhuber_beta0: vec![0.9],
            erm: true,
            cvar_xi: DEFAULT_LEVELS.to_vec(),
            dro_eta_tilde: DEFAULT_LEVELS.to_vec(),
        }
    }
}

impl CriteriaSpec {
    /// Concrete criteria for a training set of `n_train` rows.
    pub fn expand(&self, n_train: usize) -> Result<Vec<CriterionParams>> {
        let lambda = self.lambda.unwrap_or_else(|| default_lambda(n_train));
        let mut out = Vec::new();
        for &beta0 in &self.sunhuber_beta0 {
            out.push(schedule_params(n_train, beta0, lambda)?);
        }
        if self.erm {
            out.push(CriterionParams::erm());
        }
        for &xi in &self.cvar_xi {
            out.push(CriterionParams::cvar(xi)?);
        }
        for &eta in &self.dro_eta_tilde {
            out.push(CriterionParams::chisq_dro(eta)?);
        }
        if out.is_empty() {
            return Err(Error::Config("criterion list is empty".into()));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub name: String,
    pub seed: u64,
    pub trials: usize,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            name: "experiment".into(),
            seed: 0,
            trials: 1,
        }
    }
}

/// Full description of a sweep. Mirrors the sections of the config file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub experiment: ExperimentSection,
    pub data: DataSpec,
    pub optimizer: OptimizerSpec,
    pub criteria: CriteriaSpec,
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: ExperimentSpec = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.experiment.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.optimizer.step_sizes.is_empty() {
            return Err(Error::Config("optimizer.step_sizes is empty".into()));
        }
        // parameter validity is checked when the grids are expanded
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub trial: usize,
    pub split_seed: u64,
    pub opt_seed: u64,
    pub criterion: String,
    pub params: CriterionParams,
    pub step_size: f64,
    pub status: RunStatus,
    pub message: Option<String>,
    /// Final-checkpoint mean base loss on the selection split.
    pub selection_loss: Option<f64>,
    pub selected: bool,
    /// Trajectory CSV, relative to the output directory.
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub seed: u64,
    pub trials: usize,
    pub rng_algorithm: String,
    pub selection_split: Split,
    pub spec: ExperimentSpec,
    pub runs: Vec<RunEntry>,
}

impl Manifest {
    pub fn selected(&self) -> impl Iterator<Item = &RunEntry> {
        self.runs.iter().filter(|r| r.selected)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const AGGREGATE_FILE: &str = "aggregate.csv";

fn run_file_name(params: &CriterionParams, step: f64) -> String {
    format!("{}__step={}.csv", params.label(), step)
}

fn with_context(err: Error, trial: usize, label: &str, step: f64) -> Error {
    Error::Run {
        context: format!("trial {trial}, criterion {label}, step {step}"),
        source: Box::new(err),
    }
}

/// Runs every criterion at every step size for each trial, writes one CSV per
/// run plus `manifest.json` and `aggregate.csv` under `out_dir`.
///
/// Trial `t` splits with seed `seed + t` and uses that seed for mini-batch order.
/// For each criterion the step size with the lowest final validation mean loss
/// is selected (training loss when the data is not split); diverged runs are
/// flagged and excluded.
pub fn run_experiment(spec: &ExperimentSpec, out_dir: &Path) -> Result<Manifest> {
    spec.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let raw = spec.data.load(spec.experiment.seed)?;
    let selection_split = if spec.data.split { Split::Val } else { Split::Train };
    let mut runs = Vec::new();

    for trial in 0..spec.experiment.trials {
        let split_seed = spec.experiment.seed + trial as u64;
        let dataset = spec.data.prepare(&raw, split_seed)?;
        let n_train = dataset.indices(Split::Train).len();
        let criteria = spec.criteria.expand(n_train)?;
        let h0 = match &spec.optimizer.init_weights {
            Some(w) => w.clone(),
            None => zero_weights(&dataset),
        };
        let init = initial_state(&dataset, h0)?;

        let jobs: Vec<(CriterionParams, f64)> = criteria
            .iter()
            .flat_map(|c| spec.optimizer.step_sizes.iter().map(move |&s| (*c, s)))
            .collect();
        let results: Vec<Result<(RunEntry, Option<RunResult>)>> = jobs
            .par_iter()
            .map(|&(params, step)| {
                let label = params.label();
                let config = spec.optimizer.config(step, split_seed).map_err(|e| with_context(e, trial, &label, step))?;
                let entry = RunEntry {
                    trial,
                    split_seed,
                    opt_seed: split_seed,
                    criterion: label.clone(),
                    params,
                    step_size: step,
                    status: RunStatus::Ok,
                    message: None,
                    selection_loss: None,
                    selected: false,
                    path: None,
                };
                match run(&params, init.clone(), &dataset, &config) {
                    Ok(result) => {
                        let rel = PathBuf::from(format!("trial{trial}")).join(run_file_name(&params, step));
                        write_trajectory_csv(&out_dir.join(&rel), &result.trajectory)
                            .map_err(|e| with_context(e, trial, &label, step))?;
                        let selection_loss = result
                            .trajectory
                            .iter()
                            .rev()
                            .find(|r| r.split == selection_split)
                            .map(|r| r.mean_loss);
                        Ok((
                            RunEntry {
                                selection_loss,
                                path: Some(rel),
                                ..entry
                            },
                            Some(result),
                        ))
                    }
                    Err(Error::Diverged { iteration, reason }) => Ok((
                        RunEntry {
                            status: RunStatus::Diverged,
                            message: Some(format!("diverged at iteration {iteration}: {reason}")),
                            ..entry
                        },
                        None,
                    )),
                    Err(e) => Err(with_context(e, trial, &label, step)),
                }
            })
            .collect();

        let mut entries = Vec::with_capacity(results.len());
        for r in results {
            entries.push(r?.0);
        }
        for params in &criteria {
            let label = params.label();
            let best = entries
                .iter()
                .enumerate()
                .filter(|(_, e)| e.criterion == label && e.status == RunStatus::Ok)
                .filter_map(|(i, e)| e.selection_loss.filter(|v| v.is_finite()).map(|v| (i, v)))
                .min_by(|x, y| x.1.total_cmp(&y.1));
            if let Some((i, _)) = best {
                entries[i].selected = true;
            }
        }
        runs.extend(entries);
    }

    let manifest = Manifest {
        name: spec.experiment.name.clone(),
        seed: spec.experiment.seed,
        trials: spec.experiment.trials,
        rng_algorithm: RNG_ALGORITHM.to_string(),
        selection_split,
        spec: spec.clone(),
        runs,
    };
    manifest.write(&out_dir.join(MANIFEST_FILE))?;
    let rows = aggregate_manifest(&manifest, out_dir)?;
    write_aggregate_csv(&out_dir.join(AGGREGATE_FILE), &rows)?;
    Ok(manifest)
}

/// Per-checkpoint mean and standard deviation (divisor `n`) across trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub criterion: String,
    pub checkpoint: usize,
    pub split: Split,
    pub trials: usize,
    pub mean_sd_mean: f64,
    pub mean_sd_sd: f64,
    pub mean_loss_mean: f64,
    pub mean_loss_sd: f64,
    pub error_rate_mean: f64,
    pub error_rate_sd: f64,
    pub model_norm_mean: f64,
    pub model_norm_sd: f64,
    pub objective_mean: f64,
    pub objective_sd: f64,
}

fn mean_and_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Aggregates trajectories grouped by criterion label. Every trajectory of a
/// label must share the same `(checkpoint, split)` sequence.
pub fn aggregate_trials(runs: &[(String, Vec<TrajectoryRecord>)]) -> Result<Vec<AggregateRow>> {
    let mut groups: BTreeMap<&str, Vec<&Vec<TrajectoryRecord>>> = BTreeMap::new();
    for (label, records) in runs {
        groups.entry(label.as_str()).or_default().push(records);
    }
    if groups.is_empty() {
        return Err(Error::Empty("no trajectories to aggregate"));
    }
    let mut rows = Vec::new();
    for (label, trials) in groups {
        let grid: Vec<(usize, Split)> = trials[0].iter().map(|r| (r.checkpoint, r.split)).collect();
        for t in &trials[1..] {
            let other: Vec<(usize, Split)> = t.iter().map(|r| (r.checkpoint, r.split)).collect();
            if other != grid {
                return Err(Error::Misaligned(format!("trials of '{label}' have different checkpoint grids")));
            }
        }
        for (k, &(checkpoint, split)) in grid.iter().enumerate() {
            let col = |f: fn(&TrajectoryRecord) -> f64| -> (f64, f64) {
                let v: Vec<f64> = trials.iter().map(|t| f(&t[k])).collect();
                mean_and_sd(&v)
            };
            let (mean_sd_mean, mean_sd_sd) = col(|r| r.mean_sd);
            let (mean_loss_mean, mean_loss_sd) = col(|r| r.mean_loss);
            let (error_rate_mean, error_rate_sd) = col(|r| r.error_rate);
            let (model_norm_mean, model_norm_sd) = col(|r| r.model_norm);
            let (objective_mean, objective_sd) = col(|r| r.objective);
            rows.push(AggregateRow {
                criterion: label.to_string(),
                checkpoint,
                split,
                trials: trials.len(),
                mean_sd_mean,
                mean_sd_sd,
                mean_loss_mean,
                mean_loss_sd,
                error_rate_mean,
                error_rate_sd,
                model_norm_mean,
                model_norm_sd,
                objective_mean,
                objective_sd,
            });
        }
    }
    Ok(rows)
}

/// Aggregates the selected run of every criterion across the manifest's trials.
pub fn aggregate_manifest(manifest: &Manifest, out_dir: &Path) -> Result<Vec<AggregateRow>> {
    let mut runs = Vec::new();
    for entry in manifest.selected() {
        let path = entry
            .path
            .as_ref()
            .ok_or_else(|| Error::Config(format!("selected run {} has no trajectory", entry.criterion)))?;
        runs.push((entry.criterion.clone(), read_trajectory_csv(&out_dir.join(path))?));
    }
    aggregate_trials(&runs)
}

pub fn write_aggregate_csv(path: &Path, rows: &[AggregateRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_aggregate_csv(path: &Path) -> Result<Vec<AggregateRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|rec| rec.map_err(Error::from)).collect()
}

/// Final-checkpoint trial-averaged value of `mean_sd` on `split`, per criterion.
pub fn final_mean_sd(rows: &[AggregateRow], split: Split) -> BTreeMap<String, f64> {
    let mut out: BTreeMap<String, (usize, f64)> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.split == split) {
        let e = out.entry(r.criterion.clone()).or_insert((r.checkpoint, r.mean_sd_mean));
        if r.checkpoint >= e.0 {
            *e = (r.checkpoint, r.mean_sd_mean);
        }
    }
    out.into_iter().map(|(k, (_, v))| (k, v)).collect()
}
