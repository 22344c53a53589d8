//! Config-driven experiments comparing the regimes, and the `ldf` CLI.
//!
//! An experiment trains every `(regime, seed)` pair, evaluates it with the
//! domain's metrics, writes one trace CSV per run and aggregates the results
//! into a [`RunReport`]. Failed runs are recorded and the sweep continues.
//! The report itself holds no timestamps, so reruns are byte-identical;
//! wall-clock information goes to a sidecar `run.log`.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::constraint::ConstraintTerm;
use crate::data::Dataset;
use crate::domains::csv_loader::{load_csv_dataset, CsvSchema};
use crate::domains::fairness::{
    fairness_metrics, fairness_objective_bundle, fairness_sample_loss, BundleOptions, FairnessDataset,
    SyntheticFairness,
};
use crate::domains::fixtures::{load_ogf, load_opf};
use crate::domains::monotone::{self, generate_monotone_dataset_with, monotone_groups, vc_smvc};
use crate::domains::ogf::{ogf_problem, ogf_samples, ogf_terms, OgfInstance, OGF_CLASSES, OGF_PHYSICAL_CLASSES};
use crate::domains::opf::{opf_problem, opf_samples, opf_terms, OpfInstance, OPF_CLASSES, OPF_PHYSICAL_CLASSES};
use crate::error::{Error, Result};
use crate::nn::{LossKind, MlpModel, OutputActivation, Predictor};
use crate::oracle::{generate_with, project_with, read_dataset_csv, ProblemInstance, Projection, SolverOptions};
use crate::trainer::{
    evaluate, gain, train_grouped_with, train_per_sample, Hooks, OutputBlock, Regime, TrainConfig, TrainTrace,
    Validation,
};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "LDF_OUTPUT_DIR";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "domain", rename_all = "kebab-case")]
pub enum DomainConfig {
    OpfMini(EnergyConfig),
    OgfMini(EnergyConfig),
    Monotone(MonotoneConfig),
    Fairness(FairnessConfig),
}

impl DomainConfig {
    pub fn name(&self) -> &'static str {
        match self {
            DomainConfig::OpfMini(_) => "opf-mini",
            DomainConfig::OgfMini(_) => "ogf-mini",
            DomainConfig::Monotone(_) => "monotone",
            DomainConfig::Fairness(_) => "fairness",
        }
    }
}

/// Oracle-labelled energy datasets; the first `train_samples` samples train, the
/// rest test.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnergyConfig {
    /// Bundled fixture id or path to an instance JSON file.
    pub instance: Option<String>,
    pub samples: usize,
    pub train_samples: usize,
    pub perturbation: f64,
    pub data_seed: u64,
    /// Compute projection distances of the test predictions.
    pub projection: bool,
    pub solver: SolverOptions,
}

impl Default for EnergyConfig {
    fn default() -> Self {
        EnergyConfig {
            instance: None,
            samples: 625,
            train_samples: 500,
            perturbation: 0.2,
            data_seed: 0,
            projection: true,
            solver: SolverOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MonotoneConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub dim: usize,
    pub noise: f64,
    pub data_seed: u64,
    /// Samples per group; every dominance pair rides with the group of its
    /// first member.
    pub batch: usize,
}

impl Default for MonotoneConfig {
    fn default() -> Self {
        MonotoneConfig {
            n_train: 200,
            n_test: 500,
            dim: 4,
            noise: monotone::DEFAULT_NOISE,
            data_seed: 0,
            batch: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FairnessSource {
    Synthetic {
        samples: usize,
        #[serde(default = "biased")]
        params: SyntheticFairness,
    },
    Csv {
        path: PathBuf,
        schema: CsvSchema,
    },
}

fn biased() -> SyntheticFairness {
    SyntheticFairness::BIASED
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FairnessConfig {
    pub source: FairnessSource,
    pub data_seed: u64,
    pub batch: usize,
    /// Absolute slack on the expectation-matching terms.
    pub slack: f64,
    /// When set, the slack becomes this multiple of the baseline run's
    /// training DT for the same seed (the baseline regime must run first).
    pub slack_factor: Option<f64>,
}

impl Default for FairnessConfig {
    fn default() -> Self {
        FairnessConfig {
            source: FairnessSource::Synthetic {
                samples: 5000,
                params: SyntheticFairness::BIASED,
            },
            data_seed: 0,
            batch: 64,
            slack: 0.0,
            slack_factor: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    /// Multiplies the initial output-layer weights.
    pub head_scale: f64,
    /// Start the output biases at the mean training target.
    pub bias_from_targets: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: vec![32, 32],
            head_scale: 1.0,
            bias_from_targets: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(flatten)]
    pub domain: DomainConfig,
    pub regimes: Vec<Regime>,
    pub seeds: Vec<u64>,
    /// Shared training configuration; `regime` and `seed` are overwritten
    /// per run.
    #[serde(default)]
    pub train: TrainConfig,
    /// Full replacements of `train` for individual regimes.
    #[serde(default)]
    pub per_regime: BTreeMap<Regime, TrainConfig>,
    #[serde(default)]
    pub model: ModelConfig,
    /// When false, training sees no constraint terms; metrics still report
    /// the violations.
    #[serde(default = "enabled")]
    pub constraints: bool,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn enabled() -> bool {
    true
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.regimes.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config(
                "an experiment needs at least one regime and one seed".into(),
            ));
        }
        self.train.validate()?;
        for cfg in self.per_regime.values() {
            cfg.validate()?;
        }
        match &self.domain {
            DomainConfig::OpfMini(e) => {
                load_opf(e.instance.as_deref().unwrap_or("opf-mini"))?;
                check_energy(e)
            }
            DomainConfig::OgfMini(e) => {
                load_ogf(e.instance.as_deref().unwrap_or("ogf-mini"))?;
                check_energy(e)
            }
            DomainConfig::Monotone(m) => {
                if m.n_train < 2 || m.n_test < 2 || m.dim == 0 || m.batch == 0 {
                    return Err(Error::Config("monotone sizes must be positive (n ≥ 2)".into()));
                }
                Ok(())
            }
            DomainConfig::Fairness(f) => {
                if f.slack_factor.is_some() && !self.regimes.contains(&Regime::Baseline) {
                    return Err(Error::Config("slack_factor needs the baseline regime".into()));
                }
                if let FairnessSource::Csv { path, .. } = &f.source {
                    if !path.exists() {
                        return Err(Error::Config(format!("dataset {} does not exist", path.display())));
                    }
                }
                Ok(())
            }
        }
    }

    /// Training configuration of one run.
    pub fn train_config(&self, regime: Regime, seed: u64) -> TrainConfig {
        let mut cfg = self.per_regime.get(&regime).unwrap_or(&self.train).clone();
        cfg.regime = regime;
        cfg.seed = seed;
        cfg
    }

    /// Regimes in canonical order (baseline first), deduplicated.
    fn ordered_regimes(&self) -> Vec<Regime> {
        let mut r = self.regimes.clone();
        r.sort();
        r.dedup();
        r
    }
}

fn check_energy(e: &EnergyConfig) -> Result<()> {
    if e.train_samples == 0 || e.train_samples >= e.samples {
        return Err(Error::Config(format!(
            "train size {} must lie strictly between 0 and the sample count {}",
            e.train_samples, e.samples
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub regime: Regime,
    pub seed: u64,
    pub status: RunStatus,
    pub error: Option<String>,
    pub metrics: BTreeMap<String, f64>,
    pub final_lambda: Vec<f64>,
    pub final_mu: Vec<f64>,
    pub trace_file: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub regime: Regime,
    pub label: String,
    /// Successful runs averaged.
    pub runs: usize,
    pub means: BTreeMap<String, f64>,
    /// `baseline / regime` for every error metric (`err_*`, `mae`); only
    /// present when the baseline regime ran.
    pub gains: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub name: String,
    pub domain: String,
    pub seeds: Vec<u64>,
    pub runs: Vec<RunRecord>,
    pub aggregates: Vec<Aggregate>,
}

impl RunReport {
    pub fn run(&self, regime: Regime, seed: u64) -> Option<&RunRecord> {
        self.runs.iter().find(|r| r.regime == regime && r.seed == seed)
    }

    pub fn aggregate(&self, regime: Regime) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.regime == regime)
    }

    pub fn failures(&self) -> usize {
        self.runs.iter().filter(|r| r.status == RunStatus::Failed).count()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn is_error_metric(name: &str) -> bool {
    name.starts_with("err_") || name == "mae"
}

fn aggregate(runs: &[RunRecord], regimes: &[Regime]) -> Vec<Aggregate> {
    let mut out: Vec<Aggregate> = regimes
        .iter()
        .map(|&regime| {
            let ok: Vec<&RunRecord> = runs
                .iter()
                .filter(|r| r.regime == regime && r.status == RunStatus::Ok)
                .collect();
            let mut means: BTreeMap<String, f64> = BTreeMap::new();
            for r in &ok {
                for (k, v) in &r.metrics {
                    *means.entry(k.clone()).or_default() += v / ok.len() as f64;
                }
            }
            Aggregate {
                regime,
                label: regime.label().to_string(),
                runs: ok.len(),
                means,
                gains: BTreeMap::new(),
            }
        })
        .collect();
    let baseline = out
        .iter()
        .find(|a| a.regime == Regime::Baseline && a.runs > 0)
        .map(|a| a.means.clone());
    if let Some(base) = baseline {
        for a in &mut out {
            for (k, v) in &a.means {
                if let Some(b) = base.get(k).filter(|_| is_error_metric(k)) {
                    a.gains.insert(k.clone(), gain(*b, *v));
                }
            }
        }
    }
    out
}

/// Data shared by every run of an experiment.
enum Prepared {
    Energy(EnergyData),
    Monotone {
        train: Dataset,
        pairs: Vec<(usize, usize)>,
        test_x: Vec<Vec<f64>>,
        test_y: Vec<f64>,
        test_pairs: Vec<(usize, usize)>,
    },
    Fairness {
        train: FairnessDataset,
        test: FairnessDataset,
    },
}

struct EnergyData {
    problem: ProblemInstance,
    train: Dataset,
    test: Dataset,
    train_terms: Vec<ConstraintTerm>,
    eval_terms: Vec<ConstraintTerm>,
    classes: &'static [&'static str],
    physical: usize,
    blocks: Vec<OutputBlock>,
    output_dim: usize,
}

fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    match &cfg.domain {
        DomainConfig::OpfMini(e) => {
            let inst: OpfInstance = load_opf(e.instance.as_deref().unwrap_or("opf-mini"))?;
            let problem = opf_problem(&inst)?;
            let data = generate_with(&problem, e.samples, e.perturbation, e.data_seed, &e.solver)?;
            let all = opf_samples(&inst, &data.points)?;
            Ok(Prepared::Energy(split_energy(
                e,
                problem,
                all,
                opf_terms(&inst, true),
                opf_terms(&inst, false),
                &OPF_CLASSES,
                OPF_PHYSICAL_CLASSES,
                inst.output_blocks(),
                inst.output_dim(),
            )))
        }
        DomainConfig::OgfMini(e) => {
            let inst: OgfInstance = load_ogf(e.instance.as_deref().unwrap_or("ogf-mini"))?;
            let problem = ogf_problem(&inst)?;
            let data = generate_with(&problem, e.samples, e.perturbation, e.data_seed, &e.solver)?;
            let all = ogf_samples(&inst, &data.points)?;
            Ok(Prepared::Energy(split_energy(
                e,
                problem,
                all,
                ogf_terms(&inst, true),
                ogf_terms(&inst, false),
                &OGF_CLASSES,
                OGF_PHYSICAL_CLASSES,
                inst.output_blocks(),
                inst.output_dim(),
            )))
        }
        DomainConfig::Monotone(m) => {
            let train = generate_monotone_dataset_with(m.data_seed, m.n_train, m.dim, m.noise)?;
            let test = generate_monotone_dataset_with(m.data_seed.wrapping_add(1), m.n_test, m.dim, m.noise)?;
            let test_x = test.x.iter().map(|x| monotone::scale_precision(x)).collect();
            Ok(Prepared::Monotone {
                pairs: train.pairs.clone(),
                train: train.to_dataset()?,
                test_x,
                test_y: test.y,
                test_pairs: test.pairs,
            })
        }
        DomainConfig::Fairness(f) => {
            let (train, test) = match &f.source {
                FairnessSource::Synthetic { samples, params } => {
                    let all = params.generate(f.data_seed, *samples)?;
                    let (a, b) = crate::data::split_indices(all.len(), 0.8, f.data_seed);
                    (all.subset(&a), all.subset(&b))
                }
                FairnessSource::Csv { path, schema } => {
                    let ds = load_csv_dataset(path, schema)?;
                    (ds.train_set(), ds.test_set())
                }
            };
            Ok(Prepared::Fairness { train, test })
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn split_energy(
    e: &EnergyConfig,
    problem: ProblemInstance,
    all: Dataset,
    train_terms: Vec<ConstraintTerm>,
    eval_terms: Vec<ConstraintTerm>,
    classes: &'static [&'static str],
    physical: usize,
    blocks: Vec<OutputBlock>,
    output_dim: usize,
) -> EnergyData {
    let cut = e.train_samples.min(all.len());
    let train = all.subset(&(0..cut).collect::<Vec<_>>());
    let test = all.subset(&(cut..all.len()).collect::<Vec<_>>());
    EnergyData {
        problem,
        train,
        test,
        train_terms,
        eval_terms,
        classes,
        physical,
        blocks,
        output_dim,
    }
}

fn build_model(
    mc: &ModelConfig,
    input: usize,
    output: usize,
    act: OutputActivation,
    seed: u64,
    train: &Dataset,
) -> Result<MlpModel> {
    let mut widths = vec![input];
    widths.extend(&mc.hidden);
    widths.push(output);
    let mut model = MlpModel::new(widths, act, seed)?;
    if mc.head_scale != 1.0 {
        for w in model.output_weights_mut() {
            *w *= mc.head_scale;
        }
    }
    if mc.bias_from_targets && !train.is_empty() {
        let n = train.len() as f64;
        let bias = model.output_bias_mut();
        bias.fill(0.0);
        for s in &train.samples {
            for (b, t) in bias.iter_mut().zip(&s.target) {
                *b += t / n;
            }
        }
    }
    Ok(model)
}

struct RunOutcome {
    metrics: BTreeMap<String, f64>,
    trace: TrainTrace,
}

fn run_energy(d: &EnergyData, cfg: &ExperimentConfig, e: &EnergyConfig, tc: &TrainConfig) -> Result<RunOutcome> {
    let mut model = build_model(
        &cfg.model,
        d.train.input_dim(),
        d.output_dim,
        OutputActivation::Identity,
        tc.seed,
        &d.train,
    )?;
    let terms: &[ConstraintTerm] = if cfg.constraints { &d.train_terms } else { &[] };
    let trace = train_per_sample(&d.train, &mut model, terms, tc)?;
    let ev = evaluate(&model, &d.test, &d.eval_terms, &[], &d.blocks)?;
    let mut metrics = BTreeMap::new();
    for b in &ev.blocks {
        metrics.insert(format!("err_{}", b.name), b.error);
    }
    for (name, v) in d.classes.iter().zip(&ev.violations).take(d.physical) {
        metrics.insert(format!("violation_{name}"), *v);
    }
    metrics.insert("violation".into(), ev.violations.iter().take(d.physical).sum());
    if e.projection {
        let np = d.problem.param.len();
        let mut total = 0.0;
        let mut failed = 0usize;
        for (pred, sample) in ev.predictions.iter().zip(&d.test.samples) {
            let inst = d.problem.with_param(sample.context[..np].to_vec());
            match project_with(pred, &inst, &e.solver) {
                Ok(p) => total += p.percent,
                Err(_) => failed += 1,
            }
        }
        let ok = d.test.len() - failed;
        metrics.insert(
            "projection_percent".into(),
            if ok > 0 { total / ok as f64 } else { f64::NAN },
        );
        metrics.insert("projection_failed".into(), failed as f64);
    }
    Ok(RunOutcome { metrics, trace })
}

#[allow(clippy::too_many_arguments)]
fn run_monotone(
    cfg: &ExperimentConfig,
    m: &MonotoneConfig,
    tc: &TrainConfig,
    train: &Dataset,
    pairs: &[(usize, usize)],
    test_x: &[Vec<f64>],
    test_y: &[f64],
    test_pairs: &[(usize, usize)],
) -> Result<RunOutcome> {
    let mut model = build_model(
        &cfg.model,
        train.input_dim(),
        1,
        OutputActivation::Identity,
        tc.seed,
        train,
    )?;
    let groups = monotone_groups(train.len(), if cfg.constraints { pairs } else { &[] }, m.batch, tc.seed)?;
    let trace = train_grouped_with(train, &groups, &[], &mut model, tc, &Hooks::default())?;
    let scalar = |xs: &[Vec<f64>]| -> Result<Vec<f64>> { xs.iter().map(|x| Ok(model.predict(x)?[0])).collect() };
    let test_pred = scalar(test_x)?;
    let train_x: Vec<Vec<f64>> = train.samples.iter().map(|s| s.input.clone()).collect();
    let train_y: Vec<f64> = train.samples.iter().map(|s| s.target[0]).collect();
    let train_pred = scalar(&train_x)?;
    let (vc, smvc) = vc_smvc(&test_pred, test_pairs);
    let (train_vc, train_smvc) = vc_smvc(&train_pred, pairs);
    let mut metrics = BTreeMap::new();
    metrics.insert("mae".into(), monotone::mae(&test_pred, test_y));
    metrics.insert("vc".into(), vc as f64);
    metrics.insert("smvc".into(), smvc);
    metrics.insert("pairs".into(), test_pairs.len() as f64);
    metrics.insert("train_mae".into(), monotone::mae(&train_pred, &train_y));
    metrics.insert("train_vc".into(), train_vc as f64);
    metrics.insert("train_smvc".into(), train_smvc);
    Ok(RunOutcome { metrics, trace })
}

fn run_fairness(
    f: &FairnessConfig,
    cfg: &ExperimentConfig,
    tc: &TrainConfig,
    train: &FairnessDataset,
    test: &FairnessDataset,
    slack: f64,
) -> Result<RunOutcome> {
    let data = train.to_dataset()?;
    let opts = BundleOptions {
        hidden: cfg.model.hidden.clone(),
        batch: f.batch,
        slack,
        seed: tc.seed,
    };
    let mut bundle = fairness_objective_bundle(&data, &opts)?;
    let loss = |t: &mut crate::autodiff::Tape, p: &[crate::autodiff::Var], s: &crate::data::Sample| {
        fairness_sample_loss(t, p, s)
    };
    let monitor = |m: &crate::nn::Ensemble| -> Result<Validation> {
        let (accuracy, dt) = fairness_metrics(m, test)?;
        Ok(Validation {
            accuracy: Some(accuracy),
            dt: Some(dt),
        })
    };
    let hooks = Hooks {
        base_loss: Some(&loss),
        monitor: Some(&monitor),
    };
    let tc = TrainConfig {
        loss: LossKind::Bce,
        ..tc.clone()
    };
    let mut groups = std::mem::take(&mut bundle.groups);
    if !cfg.constraints {
        groups.iter_mut().for_each(|g| g.terms.clear());
    }
    let trace = train_grouped_with(&data, &groups, &[], &mut bundle.model, &tc, &hooks)?;
    let (accuracy, dt) = fairness_metrics(&bundle.model, test)?;
    let (train_accuracy, train_dt) = fairness_metrics(&bundle.model, train)?;
    let mut metrics = BTreeMap::new();
    metrics.insert("accuracy".into(), accuracy);
    metrics.insert("dt".into(), dt);
    metrics.insert("train_accuracy".into(), train_accuracy);
    metrics.insert("train_dt".into(), train_dt);
    metrics.insert("slack".into(), slack);
    Ok(RunOutcome { metrics, trace })
}

/// Where an experiment writes its files: the config's directory, else
/// `$LDF_OUTPUT_DIR`, else `./ldf-output/<name>`.
pub fn resolve_output_dir(cfg: &ExperimentConfig, cli: Option<&Path>) -> PathBuf {
    if let Some(p) = cli {
        return p.to_path_buf();
    }
    if let Some(p) = &cfg.output_dir {
        return p.clone();
    }
    match std::env::var_os(OUTPUT_DIR_ENV) {
        Some(dir) => PathBuf::from(dir).join(&cfg.name),
        None => PathBuf::from("ldf-output").join(&cfg.name),
    }
}

/// Runs every `(regime, seed)` pair. With an output directory, each run's
/// trace is written as `trace_<regime>_seed<k>.csv` and progress lines go to
/// `run.log`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<RunReport> {
    cfg.validate()?;
    let mut log = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join("run.log");
            Some((std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?, path))
        }
        None => None,
    };
    let mut note = |line: String| -> Result<()> {
        if let Some((file, path)) = &mut log {
            let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
            writeln!(file, "[{stamp}] {line}").map_err(|e| Error::io(path.as_path(), e))?;
        }
        Ok(())
    };
    let started = Instant::now();
    note(format!("experiment {} ({})", cfg.name, cfg.domain.name()))?;
    let prepared = prepare(cfg)?;
    note(format!("data ready after {:.2}s", started.elapsed().as_secs_f64()))?;

    let regimes = cfg.ordered_regimes();
    let mut runs = Vec::new();
    let mut baseline_train_dt: BTreeMap<u64, f64> = BTreeMap::new();
    for &regime in &regimes {
        for &seed in &cfg.seeds {
            let tc = cfg.train_config(regime, seed);
            let t0 = Instant::now();
            let outcome = match (&prepared, &cfg.domain) {
                (Prepared::Energy(d), DomainConfig::OpfMini(e) | DomainConfig::OgfMini(e)) => {
                    run_energy(d, cfg, e, &tc)
                }
                (
                    Prepared::Monotone {
                        train,
                        pairs,
                        test_x,
                        test_y,
                        test_pairs,
                    },
                    DomainConfig::Monotone(m),
                ) => run_monotone(cfg, m, &tc, train, pairs, test_x, test_y, test_pairs),
                (Prepared::Fairness { train, test }, DomainConfig::Fairness(f)) => {
                    let slack = match (f.slack_factor, regime) {
                        (Some(_), Regime::Baseline) | (None, _) => f.slack,
                        (Some(k), _) => match baseline_train_dt.get(&seed) {
                            Some(dt) => k * dt,
                            None => {
                                runs.push(failed(regime, seed, "baseline run missing for slack_factor".into()));
                                continue;
                            }
                        },
                    };
                    run_fairness(f, cfg, &tc, train, test, slack)
                }
                _ => unreachable!("prepared data matches the domain"),
            };
            let record = match outcome {
                Ok(o) => {
                    if regime == Regime::Baseline {
                        if let Some(&dt) = o.metrics.get("train_dt") {
                            baseline_train_dt.insert(seed, dt);
                        }
                    }
                    let trace_file = match out_dir {
                        Some(dir) => {
                            let name = format!("trace_{regime}_seed{seed}.csv");
                            o.trace.save_csv(&dir.join(&name))?;
                            Some(name)
                        }
                        None => None,
                    };
                    let last = o.trace.last();
                    RunRecord {
                        regime,
                        seed,
                        status: RunStatus::Ok,
                        error: None,
                        metrics: o.metrics,
                        final_lambda: last.map(|r| r.lambda.clone()).unwrap_or_default(),
                        final_mu: last.map(|r| r.mu.clone()).unwrap_or_default(),
                        trace_file,
                    }
                }
                Err(e) => failed(regime, seed, e.to_string()),
            };
            note(format!(
                "{regime} seed {seed}: {:?} in {:.2}s",
                record.status,
                t0.elapsed().as_secs_f64()
            ))?;
            runs.push(record);
        }
    }
    let aggregates = aggregate(&runs, &regimes);
    note(format!("finished after {:.2}s", started.elapsed().as_secs_f64()))?;
    Ok(RunReport {
        schema_version: REPORT_SCHEMA_VERSION,
        name: cfg.name.clone(),
        domain: cfg.domain.name().to_string(),
        seeds: cfg.seeds.clone(),
        runs,
        aggregates,
    })
}

fn failed(regime: Regime, seed: u64, error: String) -> RunRecord {
    RunRecord {
        regime,
        seed,
        status: RunStatus::Failed,
        error: Some(error),
        metrics: BTreeMap::new(),
        final_lambda: Vec::new(),
        final_mu: Vec::new(),
        trace_file: None,
    }
}

fn metric_names(report: &RunReport) -> Vec<String> {
    let mut names: Vec<String> = report.runs.iter().flat_map(|r| r.metrics.keys().cloned()).collect();
    names.sort();
    names.dedup();
    names
}

fn fmt_num(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e9 {
        format!("{v:.0}")
    } else if v == 0.0 || (1e-3..1e5).contains(&v.abs()) {
        format!("{v:.4}")
    } else {
        format!("{v:.3e}")
    }
}

/// Long-format summary: one row per `(regime, metric)` with the mean, the
/// value of every declared seed and the gain (error metrics only).
pub fn summary_csv(report: &RunReport) -> Result<String> {
    let names = metric_names(report);
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["regime".to_string(), "label".into(), "metric".into(), "mean".into()];
    header.extend(report.seeds.iter().map(|s| format!("seed_{s}")));
    header.push("gain".into());
    w.write_record(&header)?;
    for a in &report.aggregates {
        for n in &names {
            let mut row = vec![
                a.regime.to_string(),
                a.label.clone(),
                n.clone(),
                a.means.get(n).map(f64::to_string).unwrap_or_default(),
            ];
            row.extend(report.seeds.iter().map(|&seed| {
                report
                    .run(a.regime, seed)
                    .and_then(|r| r.metrics.get(n))
                    .map(f64::to_string)
                    .unwrap_or_default()
            }));
            row.push(a.gains.get(n).map(f64::to_string).unwrap_or_default());
            w.write_record(&row)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(format!("csv buffer: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Aggregated means (and gains) as a markdown table.
pub fn markdown_table(report: &RunReport) -> String {
    let names = metric_names(report);
    let mut gains: Vec<String> = report.aggregates.iter().flat_map(|a| a.gains.keys().cloned()).collect();
    gains.sort();
    gains.dedup();
    let mut s = String::new();
    let _ = writeln!(s, "## {} ({})\n", report.name, report.domain);
    let mut header = vec!["model".to_string(), "runs".into()];
    header.extend(names.iter().cloned());
    header.extend(gains.iter().map(|g| format!("gain {g}")));
    let _ = writeln!(s, "| {} |", header.join(" | "));
    let _ = writeln!(s, "|{}", "---|".repeat(header.len()));
    for a in &report.aggregates {
        let mut row = vec![a.label.clone(), a.runs.to_string()];
        row.extend(
            names
                .iter()
                .map(|n| a.means.get(n).map(|v| fmt_num(*v)).unwrap_or_else(|| "-".into())),
        );
        row.extend(
            gains
                .iter()
                .map(|g| a.gains.get(g).map(|v| fmt_num(*v)).unwrap_or_else(|| "-".into())),
        );
        let _ = writeln!(s, "| {} |", row.join(" | "));
    }
    let failures: Vec<&RunRecord> = report.runs.iter().filter(|r| r.status == RunStatus::Failed).collect();
    if !failures.is_empty() {
        let _ = writeln!(s, "\nFailed runs:\n");
        for r in failures {
            let _ = writeln!(
                s,
                "- {} seed {}: {}",
                r.regime.label(),
                r.seed,
                r.error.as_deref().unwrap_or("")
            );
        }
    }
    s
}

/// Writes `report.json`, `summary.csv` and `summary.md` into `dir`.
pub fn emit_tables(report: &RunReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, text: String| {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    };
    write("report.json", report.to_json()?)?;
    write("summary.csv", summary_csv(report)?)?;
    write("summary.md", markdown_table(report))
}

#[derive(Parser, Debug)]
#[command(name = "ldf", version, about = "Lagrangian dual training of constrained predictors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run an experiment config and write its report, tables and traces.
    Run {
        config: PathBuf,
        /// Overrides the config's output directory.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Label perturbed instances with the oracle and write `<stem>.csv`
    /// and `<stem>.json`.
    GenerateData {
        /// `opf-mini`, `ogf-mini` or a path to an instance JSON file.
        instance: String,
        samples: usize,
        seed: u64,
        #[arg(long, default_value_t = 0.2)]
        perturbation: f64,
        /// Domain of a custom instance file.
        #[arg(long, value_parser = ["opf", "ogf"])]
        kind: Option<String>,
        /// Defaults to `$LDF_OUTPUT_DIR`, else the working directory.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        stem: Option<String>,
    },
    /// Project every row of a `d_*, y_*` CSV onto the feasible set and print
    /// the distances as CSV. Without `d_*` columns the nominal parameters
    /// are used.
    Project {
        instance: String,
        predictions: PathBuf,
        #[arg(long, value_parser = ["opf", "ogf"])]
        kind: Option<String>,
    },
    /// Re-emit the tables of a finished run (directory or `report.json`).
    Report {
        run: PathBuf,
        #[arg(long, default_value = "markdown", value_parser = ["markdown", "csv", "json"])]
        format: String,
    },
}

fn load_problem(instance: &str, kind: Option<&str>) -> Result<ProblemInstance> {
    let kind = kind.unwrap_or(match instance {
        "ogf-mini" => "ogf",
        _ => "opf",
    });
    match kind {
        "ogf" => ogf_problem(&load_ogf(instance)?),
        _ => opf_problem(&load_opf(instance)?),
    }
}

/// Distances of every row of a prediction CSV to the feasible set.
pub fn project_rows(problem: &ProblemInstance, rows: &[(Vec<f64>, Vec<f64>)]) -> Result<Vec<Projection>> {
    rows.iter()
        .map(|(d, y)| {
            let inst = if d.is_empty() {
                problem.clone()
            } else if d.len() == problem.param.len() {
                problem.with_param(d.clone())
            } else {
                return Err(Error::InputShape {
                    expected: problem.param.len(),
                    actual: d.len(),
                });
            };
            project_with(y, &inst, &SolverOptions::default())
        })
        .collect()
}

enum Failure {
    Config(Error),
    Run(Error),
}

fn config<T>(r: Result<T>) -> std::result::Result<T, Failure> {
    r.map_err(Failure::Config)
}

fn run<T>(r: Result<T>) -> std::result::Result<T, Failure> {
    r.map_err(Failure::Run)
}

fn execute(cli: Cli, out: &mut dyn std::io::Write) -> std::result::Result<(), Failure> {
    let io = |e| Failure::Run(Error::io("<stdout>", e));
    match cli.command {
        Command::Run { config: path, output } => {
            let cfg = config(ExperimentConfig::load(&path))?;
            let dir = resolve_output_dir(&cfg, output.as_deref());
            let report = run(run_experiment(&cfg, Some(&dir)))?;
            run(emit_tables(&report, &dir))?;
            write!(out, "{}", markdown_table(&report)).map_err(io)?;
            writeln!(out, "\nwrote {}", dir.display()).map_err(io)?;
            if report.failures() > 0 {
                return Err(Failure::Run(Error::Config(format!(
                    "{} of {} runs failed",
                    report.failures(),
                    report.runs.len()
                ))));
            }
            Ok(())
        }
        Command::GenerateData {
            instance,
            samples,
            seed,
            perturbation,
            kind,
            output,
            stem,
        } => {
            let problem = config(load_problem(&instance, kind.as_deref()))?;
            let data = run(generate_with(
                &problem,
                samples,
                perturbation,
                seed,
                &SolverOptions::default(),
            ))?;
            let dir = output
                .unwrap_or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map_or_else(|| PathBuf::from("."), PathBuf::from));
            let stem = stem.unwrap_or_else(|| format!("{}_{samples}_{seed}", problem.id));
            run(data.save(&dir, &stem))?;
            writeln!(
                out,
                "{} samples ({} rejected) written to {}",
                data.points.len(),
                data.rejected,
                dir.join(format!("{stem}.csv")).display()
            )
            .map_err(io)?;
            Ok(())
        }
        Command::Project {
            instance,
            predictions,
            kind,
        } => {
            let problem = config(load_problem(&instance, kind.as_deref()))?;
            let rows = config(read_dataset_csv(&predictions))?;
            let projections = run(project_rows(&problem, &rows))?;
            let mut w = csv::Writer::from_writer(Vec::new());
            let table = (|| -> Result<Vec<u8>> {
                w.write_record(["row", "distance", "percent"])?;
                for (k, p) in projections.iter().enumerate() {
                    w.write_record([k.to_string(), p.distance.to_string(), p.percent.to_string()])?;
                }
                w.into_inner().map_err(|e| Error::Config(format!("csv buffer: {e}")))
            })();
            out.write_all(&run(table)?).map_err(io)?;
            Ok(())
        }
        Command::Report { run: path, format } => {
            let file = if path.is_dir() { path.join("report.json") } else { path };
            let r = config(RunReport::load(&file))?;
            let text = match format.as_str() {
                "csv" => run(summary_csv(&r))?,
                "json" => run(r.to_json())?,
                _ => markdown_table(&r),
            };
            write!(out, "{text}").map_err(io)?;
            Ok(())
        }
    }
}

/// Entry point of the `ldf` binary. Returns the exit code: 0 on success,
/// 1 on usage or configuration errors, 2 when a run fails.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return i32::from(e.use_stderr());
        }
    };
    let stdout = std::io::stdout();
    match execute(cli, &mut stdout.lock()) {
        Ok(()) => 0,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e}");
            1
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            2
        }
    }
}
