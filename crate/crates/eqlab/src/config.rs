//! Run configuration and execution: everything a training run needs,
//! serializable as one JSON document, plus the writer that turns a finished
//! run into its on-disk artifacts. A run is reproducible from its persisted
//! config alone.

use crate::datagen::{
    load_classification_dataset, synth_classification_dataset, synth_proposal_stream,
    LongTailProfile, ProposalStreamConfig, SyntheticClassDataset,
};
use crate::error::{Error, Result};
use crate::freqstats::{FrequencyTable, Group, GroupAssignment, ThresholdFn};
use crate::losses::{LossEvaluator, LossSpec};
use crate::sampling::{Sampler, SamplerSpec};
use crate::telemetry::{ledgers_to_csv, LedgerSet};
use crate::trainer::{
    train, BatchSource, EvalPlan, MetricsHistory, Model, ModelKind, TrainSchedule,
};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const CONFIG_FILE: &str = "config.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const LEDGERS_FILE: &str = "ledgers.csv";
pub const MODEL_BIN_FILE: &str = "model.bin";
pub const MODEL_SIDECAR_FILE: &str = "model.json";

fn default_test_per_class() -> u64 {
    20
}

/// Data source of a run: a generated classification dataset, a generated
/// proposal stream, or a previously exported dataset directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetConfig {
    Classification {
        profile: LongTailProfile,
        feature_dim: usize,
        noise_sigma: f64,
        #[serde(default = "default_test_per_class")]
        test_per_class: u64,
    },
    Proposals {
        profile: LongTailProfile,
        #[serde(flatten)]
        stream: ProposalStreamConfig,
        #[serde(default = "default_test_per_class")]
        test_per_class: u64,
    },
    File {
        path: PathBuf,
    },
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            DatasetConfig::Classification {
                profile,
                feature_dim,
                noise_sigma,
                test_per_class,
            } => {
                profile.validate()?;
                if *feature_dim < 2 {
                    return Err(Error::invalid("feature_dim", "must be at least 2"));
                }
                if !(*noise_sigma > 0.0) {
                    return Err(Error::invalid("noise_sigma", "must be positive"));
                }
                if *test_per_class == 0 {
                    return Err(Error::invalid("test_per_class", "must be positive"));
                }
                Ok(())
            }
            DatasetConfig::Proposals {
                profile, stream, ..
            } => {
                profile.validate()?;
                stream.validate()
            }
            DatasetConfig::File { .. } => Ok(()),
        }
    }
}

fn default_schema_version() -> u32 {
    1
}
fn default_model() -> ModelKind {
    ModelKind::Linear
}
fn default_sampler() -> SamplerSpec {
    SamplerSpec::Uniform
}
fn default_eval_every() -> u64 {
    200
}
fn default_k_list() -> Vec<usize> {
    vec![1, 5]
}

/// Everything one experiment needs. `out_dir` may be filled in by the CLI.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub dataset: DatasetConfig,
    #[serde(default = "default_model")]
    pub model: ModelKind,
    #[serde(default = "default_sampler")]
    pub sampler: SamplerSpec,
    pub loss: LossSpec,
    #[serde(default = "TrainSchedule::desk_default")]
    pub schedule: TrainSchedule,
    #[serde(default = "default_eval_every")]
    pub eval_every: u64,
    #[serde(default = "default_k_list")]
    pub k_list: Vec<usize>,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != 1 {
            return Err(Error::Config(format!(
                "unsupported schema_version {}",
                self.schema_version
            )));
        }
        self.dataset.validate()?;
        self.sampler.validate()?;
        self.loss.validate()?;
        self.schedule.validate()?;
        if self.k_list.is_empty() {
            return Err(Error::invalid("k_list", "must not be empty"));
        }
        Ok(())
    }

    /// The hard frequency threshold of the configured loss, when it has one.
    pub fn loss_lambda(&self) -> Option<f64> {
        match &self.loss {
            LossSpec::Eql { threshold_fn } | LossSpec::Seql { threshold_fn, .. } => {
                threshold_fn.lambda()
            }
            _ => None,
        }
    }
}

/// Materialized data for one run.
pub struct RunData {
    pub table: FrequencyTable,
    pub groups: GroupAssignment,
    pub test: SyntheticClassDataset,
    /// Present in classification mode, absent in proposal mode.
    pub train: Option<SyntheticClassDataset>,
}

/// Builds datasets, table and groups from a dataset config and seed.
pub fn prepare_data(dataset: &DatasetConfig, seed: u64) -> Result<RunData> {
    match dataset {
        DatasetConfig::Classification {
            profile,
            feature_dim,
            noise_sigma,
            test_per_class,
        } => {
            let train = synth_classification_dataset(profile, *feature_dim, *noise_sigma, seed)?;
            let test = train.balanced_split(*test_per_class, seed)?;
            let table = train.frequency_table()?;
            let groups = GroupAssignment::from_table(&table)?;
            Ok(RunData {
                table,
                groups,
                test,
                train: Some(train),
            })
        }
        DatasetConfig::Proposals {
            profile,
            stream,
            test_per_class,
        } => {
            let counts = profile.counts()?;
            let table = FrequencyTable::from_single_label_counts(counts)?;
            let groups = GroupAssignment::from_table(&table)?;
            let s = synth_proposal_stream(&table, stream.clone(), seed)?;
            let test = s.balanced_split(*test_per_class, seed)?;
            Ok(RunData {
                table,
                groups,
                test,
                train: None,
            })
        }
        DatasetConfig::File { path } => {
            let (train, test) = load_classification_dataset(path)?;
            let table = train.frequency_table()?;
            let groups = GroupAssignment::from_table(&table)?;
            Ok(RunData {
                table,
                groups,
                test,
                train: Some(train),
            })
        }
    }
}

/// Builds the batch source for a run over already prepared data.
pub fn make_batch_source<'a>(
    config: &RunConfig,
    data: &'a RunData,
    seed: u64,
) -> Result<BatchSource<'a>> {
    match (&config.dataset, &data.train) {
        (DatasetConfig::Proposals { stream, .. }, _) => Ok(BatchSource::Proposals(
            synth_proposal_stream(&data.table, stream.clone(), seed)?,
        )),
        (_, Some(train)) => {
            let sampler = Sampler::new(config.sampler.clone(), train, seed)?;
            Ok(BatchSource::Classification {
                dataset: train,
                sampler,
                batch_size: config.schedule.batch_size,
            })
        }
        (_, None) => Err(Error::Config("no training data prepared".into())),
    }
}

/// Outcome of one executed run.
pub struct RunArtifacts {
    pub model: Model,
    pub history: MetricsHistory,
    pub ledgers: LedgerSet,
    pub data: RunData,
}

/// Executes a run in memory: prepare data, train with ledger hooks attached,
/// evaluate on the balanced test split.
pub fn execute_run(config: &RunConfig) -> Result<RunArtifacts> {
    config.validate()?;
    let data = prepare_data(&config.dataset, config.seed)?;
    let num_classes = data.table.num_categories();
    let feature_dim = data.test.feature_dim();
    let mut model = Model::new(config.model.clone(), feature_dim, num_classes, config.seed)?;
    let table = config.loss.requires_table().then(|| data.table.clone());
    let loss = LossEvaluator::new(config.loss.clone(), table)?;
    let mut ledgers = LedgerSet::new(num_classes);
    let history = {
        let mut source = make_batch_source(config, &data, config.seed)?;
        let plan = EvalPlan {
            test: &data.test,
            groups: &data.groups,
            every: config.eval_every,
            k_list: config.k_list.clone(),
        };
        train(
            &mut model,
            &mut source,
            &loss,
            &config.schedule,
            config.seed,
            Some(&plan),
            &mut ledgers,
        )?
    };
    Ok(RunArtifacts {
        model,
        history,
        ledgers,
        data,
    })
}

/// Flat summary of a finished run, the row material for sweeps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub loss: String,
    pub seed: u64,
    pub final_loss: Option<f64>,
    pub top1: Option<f64>,
    pub top5: Option<f64>,
    pub rare_top1: Option<f64>,
    pub common_top1: Option<f64>,
    pub frequent_top1: Option<f64>,
    pub lambda: Option<f64>,
    pub tail_ratio: Option<f64>,
}

pub fn summarize(config: &RunConfig, artifacts: &RunArtifacts) -> Result<RunSummary> {
    let report = artifacts.history.final_eval.as_ref();
    let lambda = config.loss_lambda();
    let tail_ratio = match lambda {
        Some(l) => Some(artifacts.data.table.tail_ratio(l)?),
        None => None,
    };
    Ok(RunSummary {
        schema_version: 1,
        loss: config.loss.name().to_string(),
        seed: config.seed,
        final_loss: artifacts.history.final_loss(),
        top1: report.and_then(|r| r.accuracy(1)),
        top5: report.and_then(|r| r.accuracy(5)),
        rare_top1: report.and_then(|r| r.group_accuracy(Group::Rare, 1)),
        common_top1: report.and_then(|r| r.group_accuracy(Group::Common, 1)),
        frequent_top1: report.and_then(|r| r.group_accuracy(Group::Frequent, 1)),
        lambda,
        tail_ratio,
    })
}

/// Writes the artifacts of a finished run: persisted config, metrics CSV,
/// summary JSON, ledger CSV, and the model checkpoint.
pub fn write_run_outputs(
    dir: &Path,
    config: &RunConfig,
    artifacts: &RunArtifacts,
) -> Result<RunSummary> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, contents: &str| -> Result<()> {
        let path = dir.join(name);
        std::fs::write(&path, contents).map_err(|e| Error::io(path, e))
    };
    write(CONFIG_FILE, &serde_json::to_string_pretty(config)?)?;
    write(METRICS_FILE, &artifacts.history.to_csv())?;
    let summary = summarize(config, artifacts)?;
    write(SUMMARY_FILE, &serde_json::to_string_pretty(&summary)?)?;
    let csv = ledgers_to_csv(&artifacts.ledgers, &artifacts.data.table, &artifacts.data.groups)?;
    write(LEDGERS_FILE, &csv)?;
    artifacts
        .model
        .save(&dir.join(MODEL_BIN_FILE), &dir.join(MODEL_SIDECAR_FILE))?;
    Ok(summary)
}

/// Convenience: a classification run config with sensible desk-scale
/// defaults around the given loss.
pub fn desk_run_config(loss: LossSpec, seed: u64) -> RunConfig {
    RunConfig {
        schema_version: 1,
        seed,
        out_dir: None,
        dataset: DatasetConfig::Classification {
            profile: LongTailProfile {
                num_classes: 100,
                n_max: 500,
                imbalance_factor: 200.0,
            },
            feature_dim: 32,
            noise_sigma: 1.0,
            test_per_class: 20,
        },
        model: ModelKind::Linear,
        sampler: SamplerSpec::Uniform,
        loss,
        schedule: TrainSchedule::desk_default(),
        eval_every: 500,
        k_list: vec![1, 5],
    }
}

/// A hard threshold chosen so that roughly the target fraction of all images
/// counts as tail; mirrors how the threshold is picked from the tail ratio.
pub fn threshold_for_tail_ratio(table: &FrequencyTable, target: f64) -> Result<ThresholdFn> {
    ThresholdFn::hard(table.lambda_for_tail_ratio(target)?)
}
