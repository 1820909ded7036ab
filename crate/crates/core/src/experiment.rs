//! Experiment configuration, orchestration and metrics files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;

use crate::bandit::{ClientSelector, Observation, Scheme, SelectionConfig};
use crate::data::{self, ClientDataset, PartitionConfig};
use crate::error::{Error, Result};
use crate::estimator::{self, kl_to_uniform_slice, spearman, CompositionVector, EstimatorConfig};
use crate::fed::{self, GlobalState, Normalization};
use crate::nn::{ModelWeights, TrainConfig};

/// Fixed header of the metrics CSV.
pub const METRICS_HEADER: &str =
    "round,scheme,seed,test_accuracy,test_loss,selected_ids,agg_kl_true,agg_kl_est,spearman,wall_time_ms";

pub const ESTIMATOR_LOG_HEADER: &str =
    "round,client_id,true_kl,est_kl,reward,spearman_vs_truth,saturated_flag";

pub const SELECTION_LOG_HEADER: &str = "round,scheme,selected_ids,aggregated_kl,min_T,max_rhat";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartitionKind {
    NonIid,
    Iid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub num_classes: usize,
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub samples_per_class: usize,
    /// Standard deviation of every Gaussian class.
    pub spread: f64,
    pub test_fraction: f64,
    pub partition_kind: PartitionKind,
    /// `seed` is ignored here; each run uses its own seed.
    pub partition: PartitionConfig,
    pub train: TrainConfig,
    pub estimator: EstimatorConfig,
    /// `num_clients` mirrors `partition.num_clients`.
    pub selection: SelectionConfig,
    pub normalization: NormalizationMode,
    /// Rounds after the warm-up phase.
    pub rounds: usize,
    pub target_accuracy: f64,
    pub seeds: Vec<u64>,
    pub output_path: PathBuf,
    /// Record per-round wall time; when off the column is written as 0 so
    /// output files are byte-for-byte reproducible.
    pub record_timing: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormalizationMode {
    Selected,
    AllClients,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            num_classes: 10,
            input_dim: 16,
            hidden: vec![32],
            samples_per_class: 1000,
            // overlapping classes, so FedAvg under non-IID data has room to improve
            spread: 2.0,
            test_fraction: 0.2,
            partition_kind: PartitionKind::NonIid,
            partition: PartitionConfig::default(),
            train: TrainConfig::default(),
            estimator: EstimatorConfig::default(),
            selection: SelectionConfig::default(),
            normalization: NormalizationMode::Selected,
            rounds: 200,
            target_accuracy: 0.6,
            seeds: vec![1],
            output_path: PathBuf::from("metrics.csv"),
            record_timing: true,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| Error::Config(format!("{key}: cannot parse `{value}`: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!(
            "{key}: expected a boolean, got `{value}`"
        ))),
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn parse_range(key: &str, value: &str) -> Result<(usize, usize)> {
    match parse_list::<usize>(key, value)?.as_slice() {
        [a, b] => Ok((*a, *b)),
        [a] => Ok((*a, *a)),
        _ => Err(Error::Config(format!(
            "{key}: expected `min,max`, got `{value}`"
        ))),
    }
}

fn join<T: ToString>(items: &[T], sep: &str) -> String {
    items
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(sep)
}

impl ExperimentConfig {
    /// Sets one `key=value` option. Unknown keys are configuration errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim();
        match key {
            "scheme" => self.selection.scheme = value.parse()?,
            "rounds" => self.rounds = parse(key, value)?,
            "seed" => self.seeds = vec![parse(key, value)?],
            "seeds" => self.seeds = parse_list(key, value)?,
            "alpha" => self.selection.alpha = parse(key, value)?,
            "rho" => self.selection.rho = parse(key, value)?,
            "beta" => self.estimator.beta = parse(key, value)?,
            "epsilon" => self.estimator.epsilon = parse(key, value)?,
            "aux_per_class" => self.estimator.aux_per_class = parse(key, value)?,
            "probe" => self.estimator.probe = value.trim().parse()?,
            "select" => self.selection.budget = parse(key, value)?,
            "clients" => {
                self.partition.num_clients = parse(key, value)?;
                self.selection.num_clients = self.partition.num_clients;
            }
            "classes" => self.num_classes = parse(key, value)?,
            "input_dim" => self.input_dim = parse(key, value)?,
            "hidden" => self.hidden = parse_list(key, value)?,
            "samples_per_class" => self.samples_per_class = parse(key, value)?,
            "spread" => self.spread = parse(key, value)?,
            "test_fraction" => self.test_fraction = parse(key, value)?,
            "partition" => {
                self.partition_kind = match value.trim() {
                    "non_iid" | "non-iid" => PartitionKind::NonIid,
                    "iid" => PartitionKind::Iid,
                    other => {
                        return Err(Error::Config(format!(
                            "partition: expected iid or non_iid, got `{other}`"
                        )))
                    }
                }
            }
            "classes_per_client" => self.partition.classes_per_client = parse_range(key, value)?,
            "samples_per_client" => self.partition.samples_per_client = parse_range(key, value)?,
            "disjoint" => self.partition.disjoint = parse_bool(key, value)?,
            "lr" => self.train.learning_rate = parse(key, value)?,
            "lr_decay" => self.train.lr_decay = parse(key, value)?,
            "epochs" => self.train.epochs = parse(key, value)?,
            "batches" => self.train.batches_per_epoch = parse(key, value)?,
            "batch_size" => self.train.batch_size = parse(key, value)?,
            "full_batch" => self.train.full_batch = parse_bool(key, value)?,
            "normalization" => {
                self.normalization = match value.trim() {
                    "selected" => NormalizationMode::Selected,
                    "all_clients" => NormalizationMode::AllClients,
                    other => {
                        return Err(Error::Config(format!(
                            "normalization: expected selected or all_clients, got `{other}`"
                        )))
                    }
                }
            }
            "target_accuracy" => self.target_accuracy = parse(key, value)?,
            "out" => self.output_path = PathBuf::from(value.trim()),
            "timing" => self.record_timing = parse_bool(key, value)?,
            other => return Err(Error::Config(format!("unknown option `{other}`"))),
        }
        Ok(())
    }

    /// Applies a `key=value` text file; blank lines and `#` comments are skipped.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_str(&text)
    }

    pub fn apply_str(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got `{raw}`", n + 1))
            })?;
            self.set(key, value)
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    /// The fully resolved configuration in the same `key=value` format.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let p = &self.partition;
        let t = &self.train;
        let lines: Vec<(&str, String)> = vec![
            ("scheme", self.selection.scheme.to_string()),
            ("rounds", self.rounds.to_string()),
            ("seeds", join(&self.seeds, ",")),
            ("alpha", self.selection.alpha.to_string()),
            ("rho", self.selection.rho.to_string()),
            ("beta", self.estimator.beta.to_string()),
            ("epsilon", self.estimator.epsilon.to_string()),
            ("aux_per_class", self.estimator.aux_per_class.to_string()),
            ("probe", self.estimator.probe.to_string()),
            ("select", self.selection.budget.to_string()),
            ("clients", p.num_clients.to_string()),
            ("classes", self.num_classes.to_string()),
            ("input_dim", self.input_dim.to_string()),
            ("hidden", join(&self.hidden, ",")),
            ("samples_per_class", self.samples_per_class.to_string()),
            ("spread", self.spread.to_string()),
            ("test_fraction", self.test_fraction.to_string()),
            (
                "partition",
                match self.partition_kind {
                    PartitionKind::NonIid => "non_iid".into(),
                    PartitionKind::Iid => "iid".into(),
                },
            ),
            (
                "classes_per_client",
                format!("{},{}", p.classes_per_client.0, p.classes_per_client.1),
            ),
            (
                "samples_per_client",
                format!("{},{}", p.samples_per_client.0, p.samples_per_client.1),
            ),
            ("disjoint", p.disjoint.to_string()),
            ("lr", t.learning_rate.to_string()),
            ("lr_decay", t.lr_decay.to_string()),
            ("epochs", t.epochs.to_string()),
            ("batches", t.batches_per_epoch.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("full_batch", t.full_batch.to_string()),
            (
                "normalization",
                match self.normalization {
                    NormalizationMode::Selected => "selected".into(),
                    NormalizationMode::AllClients => "all_clients".into(),
                },
            ),
            ("target_accuracy", self.target_accuracy.to_string()),
            ("out", self.output_path.display().to_string()),
            ("timing", self.record_timing.to_string()),
        ];
        for (k, v) in lines {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.input_dim];
        sizes.extend(&self.hidden);
        sizes.push(self.num_classes);
        sizes
    }

    /// Checks everything that can be checked without building data.
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 || self.input_dim == 0 || self.samples_per_class == 0 {
            return Err(Error::Config(
                "need at least two classes, a positive input dimension and samples per class"
                    .into(),
            ));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden layers must be non-empty".into()));
        }
        if !(self.spread > 0.0 && self.spread.is_finite()) {
            return Err(Error::Config(format!(
                "spread must be positive, got {}",
                self.spread
            )));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config(format!(
                "test fraction must lie in (0, 1), got {}",
                self.test_fraction
            )));
        }
        let held_out = (self.samples_per_class as f64 * self.test_fraction).floor() as usize;
        if held_out < self.estimator.aux_per_class {
            return Err(Error::Config(format!(
                "{held_out} held-out samples per class cannot supply {} auxiliary samples",
                self.estimator.aux_per_class
            )));
        }
        if self.partition.num_clients != self.selection.num_clients {
            return Err(Error::Config(format!(
                "partition has {} clients but selection expects {}",
                self.partition.num_clients, self.selection.num_clients
            )));
        }
        if self.partition_kind == PartitionKind::Iid {
            let train = self.samples_per_class - held_out;
            if train < self.partition.num_clients {
                return Err(Error::Config(format!(
                    "{train} training samples per class cannot be split across {} IID clients",
                    self.partition.num_clients
                )));
            }
        }
        self.partition.validate(self.num_classes)?;
        self.train.validate()?;
        self.estimator.validate()?;
        self.selection.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if !(self.target_accuracy > 0.0 && self.target_accuracy <= 1.0) {
            return Err(Error::Config(format!(
                "target accuracy must lie in (0, 1], got {}",
                self.target_accuracy
            )));
        }
        Ok(())
    }
}

/// Named experiment families; each expands into labelled variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// CUCB, greedy and random on non-IID shards, plus a random-selection
    /// run on IID shards as the reference ceiling.
    SchemeComparison,
    /// CUCB with budgets 5, 10 and 20.
    BudgetSweep,
    /// CUCB with exploration factors 0, 0.2 and 1.0.
    AlphaSweep,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "scheme-comparison" => Ok(Preset::SchemeComparison),
            "budget-sweep" => Ok(Preset::BudgetSweep),
            "alpha-sweep" => Ok(Preset::AlphaSweep),
            other => Err(Error::Config(format!(
                "unknown preset `{other}` (expected scheme-comparison, budget-sweep or alpha-sweep)"
            ))),
        }
    }
}

impl Preset {
    pub fn variants(self, base: &ExperimentConfig) -> Vec<(String, ExperimentConfig)> {
        let with = |label: &str, f: &dyn Fn(&mut ExperimentConfig)| {
            let mut cfg = base.clone();
            f(&mut cfg);
            (label.to_string(), cfg)
        };
        match self {
            Preset::SchemeComparison => vec![
                with("cucb", &|c| c.selection.scheme = Scheme::Cucb),
                with("greedy", &|c| c.selection.scheme = Scheme::Greedy),
                with("random", &|c| c.selection.scheme = Scheme::Random),
                with("iid", &|c| {
                    c.selection.scheme = Scheme::Random;
                    c.partition_kind = PartitionKind::Iid;
                }),
            ],
            Preset::BudgetSweep => [5, 10, 20]
                .iter()
                .map(|&m| {
                    with(&format!("m{m}"), &|c| {
                        c.selection.scheme = Scheme::Cucb;
                        c.selection.budget = m;
                    })
                })
                .collect(),
            Preset::AlphaSweep => [0.0, 0.2, 1.0]
                .iter()
                .map(|&a| {
                    with(&format!("alpha{a}"), &|c| {
                        c.selection.scheme = Scheme::Cucb;
                        c.selection.alpha = a;
                    })
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundMetrics {
    pub round: u64,
    pub scheme: Scheme,
    pub seed: u64,
    pub test_accuracy: f64,
    pub test_loss: f64,
    pub selected_ids: Vec<usize>,
    /// KL from uniform of the normalized sum of the selected clients' true
    /// compositions.
    pub agg_kl_true: f64,
    /// Same, over this round's estimated compositions.
    pub agg_kl_est: f64,
    /// Mean rank correlation between estimated and true compositions over
    /// the selected clients; NaN when undefined for all of them.
    pub spearman: f64,
    pub wall_time_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorLogRow {
    pub round: u64,
    pub client_id: usize,
    pub true_kl: f64,
    pub est_kl: f64,
    pub reward: f64,
    pub spearman: f64,
    pub saturated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionLogRow {
    pub round: u64,
    pub scheme: Scheme,
    pub selected_ids: Vec<usize>,
    pub aggregated_kl: f64,
    pub min_pulls: u64,
    pub max_adjusted: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedRun {
    pub seed: u64,
    pub warm_up_rounds: usize,
    pub metrics: Vec<RoundMetrics>,
    pub estimator_log: Vec<EstimatorLogRow>,
    pub selection_log: Vec<SelectionLogRow>,
}

/// Everything a run needs that depends only on the seed.
pub struct Environment {
    pub clients: Vec<ClientDataset>,
    pub test_set: Vec<data::LabeledSample>,
    pub aux: Vec<data::LabeledSample>,
    pub initial_weights: ModelWeights,
}

pub fn build_environment(cfg: &ExperimentConfig, seed: u64) -> Result<Environment> {
    let c = cfg.num_classes;
    let all = data::generate_dataset(cfg.samples_per_class, c, cfg.input_dim, cfg.spread, seed)?;
    let (train, test_set) = data::train_test_split(&all, c, cfg.test_fraction, seed)?;
    let aux = data::auxiliary_set(&test_set, c, cfg.estimator.aux_per_class, seed)?;
    let clients = match cfg.partition_kind {
        PartitionKind::NonIid => {
            let partition = PartitionConfig {
                seed,
                ..cfg.partition.clone()
            };
            data::partition_non_iid(&train, c, &partition)?
        }
        PartitionKind::Iid => data::partition_iid(&train, c, cfg.partition.num_clients, seed)?,
    };
    let initial_weights = ModelWeights::glorot_uniform(&cfg.layer_sizes(), seed)?;
    Ok(Environment {
        clients,
        test_set,
        aux,
        initial_weights,
    })
}

fn summed_kl<'a>(vectors: impl Iterator<Item = &'a CompositionVector>, num_classes: usize) -> f64 {
    let mut total = vec![0.0; num_classes];
    for v in vectors {
        total
            .iter_mut()
            .zip(v.as_slice())
            .for_each(|(a, b)| *a += b);
    }
    let z: f64 = total.iter().sum();
    if z <= 0.0 {
        return 0.0;
    }
    let normalized: Vec<f64> = total.iter().map(|v| v / z).collect();
    kl_to_uniform_slice(&normalized)
}

/// Runs the warm-up phase and `cfg.rounds` further rounds for one seed.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedRun> {
    cfg.validate()?;
    let env = build_environment(cfg, seed)?;
    let c = cfg.num_classes;
    let truths: Vec<CompositionVector> = env.clients.iter().map(data::true_composition).collect();
    let normalization = match cfg.normalization {
        NormalizationMode::Selected => Normalization::Selected,
        NormalizationMode::AllClients => Normalization::AllClients {
            total_samples: env.clients.iter().map(ClientDataset::len).sum(),
        },
    };
    let mut selector = ClientSelector::new(cfg.selection, c, seed)?;
    let total_rounds = selector.warm_up_rounds() + cfg.rounds;
    let mut state = GlobalState::new(env.initial_weights.clone(), seed);
    let mut run = SeedRun {
        seed,
        warm_up_rounds: selector.warm_up_rounds(),
        metrics: Vec::with_capacity(total_rounds),
        estimator_log: Vec::new(),
        selection_log: Vec::with_capacity(total_rounds),
    };

    for _ in 0..total_rounds {
        let started = Instant::now();
        let selection = selector.select()?;
        let (next, summary, updates) = fed::run_round(
            &state,
            &selection.clients,
            &env.clients,
            &cfg.train,
            normalization,
            &env.test_set,
        )?;
        let estimates = updates
            .par_iter()
            .map(|u| estimator::estimate_client(u, &state.weights, &env.aux, &cfg.estimator))
            .collect::<Result<Vec<_>>>()?;
        let observations: Vec<Observation> = estimates
            .iter()
            .map(|e| Observation {
                client_id: e.client_id,
                composition: e.composition.clone(),
                scaled_reward: cfg.estimator.scale_reward(e.reward),
            })
            .collect();
        selector.observe(&selection.clients, &observations)?;

        let mut correlations = Vec::new();
        for e in &estimates {
            let truth = &truths[e.client_id];
            let rho = spearman(truth.as_slice(), e.composition.as_slice());
            if let Some(r) = rho {
                correlations.push(r);
            }
            run.estimator_log.push(EstimatorLogRow {
                round: summary.round,
                client_id: e.client_id,
                true_kl: estimator::kl_to_uniform(truth),
                est_kl: e.kl,
                reward: e.reward,
                spearman: rho.unwrap_or(f64::NAN),
                saturated: e.saturated,
            });
        }
        let spearman_mean = if correlations.is_empty() {
            f64::NAN
        } else {
            correlations.iter().sum::<f64>() / correlations.len() as f64
        };
        let agg_kl_true = summed_kl(selection.clients.iter().map(|&k| &truths[k]), c);
        let agg_kl_est = summed_kl(estimates.iter().map(|e| &e.composition), c);
        run.selection_log.push(SelectionLogRow {
            round: summary.round,
            scheme: cfg.selection.scheme,
            selected_ids: selection.clients.clone(),
            aggregated_kl: agg_kl_est,
            min_pulls: selector.min_pulls(),
            max_adjusted: selection.max_adjusted,
        });
        let wall_time_ms = if cfg.record_timing {
            started.elapsed().as_secs_f64() * 1e3
        } else {
            0.0
        };
        run.metrics.push(RoundMetrics {
            round: summary.round,
            scheme: cfg.selection.scheme,
            seed,
            test_accuracy: summary.test_accuracy,
            test_loss: summary.test_loss,
            selected_ids: summary.selected,
            agg_kl_true,
            agg_kl_est,
            spearman: spearman_mean,
            wall_time_ms,
        });
        state = next;
    }
    Ok(run)
}

/// Runs every configured seed (in parallel); results follow `cfg.seeds`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<SeedRun>> {
    cfg.validate()?;
    cfg.seeds.par_iter().map(|&s| run_seed(cfg, s)).collect()
}

/// First round whose accuracy reaches `target`.
pub fn rounds_to_target(metrics: &[RoundMetrics], target: f64) -> Option<u64> {
    metrics
        .iter()
        .find(|m| m.test_accuracy >= target)
        .map(|m| m.round)
}

fn ids(ids: &[usize]) -> String {
    join(ids, ";")
}

pub fn format_metrics<'a>(metrics: impl IntoIterator<Item = &'a RoundMetrics>) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for m in metrics {
        let _ = writeln!(
            out,
            "{},{},{},{:.6},{:.6},{},{:.6},{:.6},{:.6},{:.6}",
            m.round,
            m.scheme,
            m.seed,
            m.test_accuracy,
            m.test_loss,
            ids(&m.selected_ids),
            m.agg_kl_true,
            m.agg_kl_est,
            m.spearman,
            m.wall_time_ms
        );
    }
    out
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes the metrics CSV (header plus one line per round).
pub fn emit_metrics<'a>(
    metrics: impl IntoIterator<Item = &'a RoundMetrics>,
    path: &Path,
) -> Result<()> {
    write_text(path, &format_metrics(metrics))
}

pub fn emit_estimator_log(runs: &[SeedRun], path: &Path) -> Result<()> {
    let mut out = String::from(ESTIMATOR_LOG_HEADER);
    out.push('\n');
    for row in runs.iter().flat_map(|r| &r.estimator_log) {
        let _ = writeln!(
            out,
            "{},{},{:.6},{:.6},{:.6},{:.6},{}",
            row.round,
            row.client_id,
            row.true_kl,
            row.est_kl,
            row.reward,
            row.spearman,
            row.saturated as u8
        );
    }
    write_text(path, &out)
}

pub fn emit_selection_log(runs: &[SeedRun], path: &Path) -> Result<()> {
    let mut out = String::from(SELECTION_LOG_HEADER);
    out.push('\n');
    for row in runs.iter().flat_map(|r| &r.selection_log) {
        let rhat = row
            .max_adjusted
            .map(|v| format!("{v:.6}"))
            .unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{:.6},{},{}",
            row.round,
            row.scheme,
            ids(&row.selected_ids),
            row.aggregated_kl,
            row.min_pulls,
            rhat
        );
    }
    write_text(path, &out)
}

/// Parses a metrics CSV written by [`emit_metrics`].
pub fn read_metrics(path: &Path) -> Result<Vec<RoundMetrics>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == METRICS_HEADER => {}
        other => {
            return Err(Error::Parse {
                line: 1,
                msg: format!("unexpected header {other:?}"),
            })
        }
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(n, line)| {
            let bad = |msg: String| Error::Parse { line: n + 2, msg };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 10 {
                return Err(bad(format!("expected 10 fields, got {}", f.len())));
            }
            let num = |i: usize| {
                f[i].parse::<f64>()
                    .map_err(|e| bad(format!("field {i}: {e}")))
            };
            let selected_ids = f[5]
                .split(';')
                .filter(|s| !s.is_empty())
                .map(|s| s.parse::<usize>().map_err(|e| bad(format!("ids: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            Ok(RoundMetrics {
                round: f[0].parse().map_err(|e| bad(format!("round: {e}")))?,
                scheme: f[1].parse().map_err(|e: Error| bad(e.to_string()))?,
                seed: f[2].parse().map_err(|e| bad(format!("seed: {e}")))?,
                test_accuracy: num(3)?,
                test_loss: num(4)?,
                selected_ids,
                agg_kl_true: num(6)?,
                agg_kl_est: num(7)?,
                spearman: num(8)?,
                wall_time_ms: num(9)?,
            })
        })
        .collect()
}

/// `out.csv` with label `m5` becomes `out_m5.csv`.
pub fn labelled_path(path: &Path, label: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}_{label}.{}", ext.to_string_lossy()),
        None => format!("{stem}_{label}"),
    };
    path.with_file_name(name)
}
