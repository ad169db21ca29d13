//! Training diagnostics: per-category gradient-norm ledgers split into
//! positive and negative contributions, average predicted probability on
//! positive samples, and top-k / per-group accuracy evaluation.
//!
//! Ledgers are mergeable value objects, so shards accumulated independently
//! can be combined afterwards.

use crate::datagen::SyntheticClassDataset;
use crate::error::{Error, Result};
use crate::freqstats::{FrequencyTable, Group, GroupAssignment};
use crate::losses::SampleLabel;
use crate::trainer::{IterationRecord, Model, TrainHooks};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;

/// Accumulated L2 norms of the last-layer weight-gradient contributions,
/// per category, split by whether the sample was positive (`y_j = 1`) or
/// negative (`y_j = 0`, background included) for that category.
///
/// One sample contributes `|dL/dz_j| * ||x||` to category `j`: the gradient
/// of the class-`j` weight row is `(dL/dz_j) x`, so its norm factors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientLedger {
    pos_norm_sum: Vec<f64>,
    neg_norm_sum: Vec<f64>,
    pos_count: Vec<u64>,
    neg_count: Vec<u64>,
}

impl GradientLedger {
    pub fn new(num_classes: usize) -> Self {
        GradientLedger {
            pos_norm_sum: vec![0.0; num_classes],
            neg_norm_sum: vec![0.0; num_classes],
            pos_count: vec![0; num_classes],
            neg_count: vec![0; num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.pos_norm_sum.len()
    }

    /// Adds one batch of per-sample logit gradients.
    pub fn record(
        &mut self,
        logit_grads: &[f64],
        features: &[f64],
        feature_dim: usize,
        labels: &[SampleLabel],
    ) -> Result<()> {
        let c = self.num_classes();
        let n = labels.len();
        if logit_grads.len() != n * c {
            return Err(Error::DimensionMismatch {
                what: "logit gradients",
                expected: n * c,
                actual: logit_grads.len(),
            });
        }
        if features.len() != n * feature_dim {
            return Err(Error::DimensionMismatch {
                what: "features",
                expected: n * feature_dim,
                actual: features.len(),
            });
        }
        for (s, label) in labels.iter().enumerate() {
            let x = &features[s * feature_dim..(s + 1) * feature_dim];
            let x_norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let grads = &logit_grads[s * c..(s + 1) * c];
            for j in 0..c {
                let contribution = grads[j].abs() * x_norm;
                if label.category() == Some(j) {
                    self.pos_norm_sum[j] += contribution;
                    self.pos_count[j] += 1;
                } else {
                    self.neg_norm_sum[j] += contribution;
                    self.neg_count[j] += 1;
                }
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &GradientLedger) -> Result<()> {
        if other.num_classes() != self.num_classes() {
            return Err(Error::DimensionMismatch {
                what: "ledger",
                expected: self.num_classes(),
                actual: other.num_classes(),
            });
        }
        for j in 0..self.num_classes() {
            self.pos_norm_sum[j] += other.pos_norm_sum[j];
            self.neg_norm_sum[j] += other.neg_norm_sum[j];
            self.pos_count[j] += other.pos_count[j];
            self.neg_count[j] += other.neg_count[j];
        }
        Ok(())
    }

    pub fn pos_norm_sum(&self, j: usize) -> f64 {
        self.pos_norm_sum[j]
    }

    pub fn neg_norm_sum(&self, j: usize) -> f64 {
        self.neg_norm_sum[j]
    }

    pub fn pos_count(&self, j: usize) -> u64 {
        self.pos_count[j]
    }

    pub fn neg_count(&self, j: usize) -> u64 {
        self.neg_count[j]
    }

    /// Mean positive contribution, `None` when the category never appeared
    /// as a positive.
    pub fn pos_avg(&self, j: usize) -> Option<f64> {
        (self.pos_count[j] > 0).then(|| self.pos_norm_sum[j] / self.pos_count[j] as f64)
    }

    pub fn neg_avg(&self, j: usize) -> Option<f64> {
        (self.neg_count[j] > 0).then(|| self.neg_norm_sum[j] / self.neg_count[j] as f64)
    }
}

/// Sum of the predicted probability of the ground-truth category over
/// positive samples, per category.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityLedger {
    prob_sum: Vec<f64>,
    pos_count: Vec<u64>,
}

impl ProbabilityLedger {
    pub fn new(num_classes: usize) -> Self {
        ProbabilityLedger {
            prob_sum: vec![0.0; num_classes],
            pos_count: vec![0; num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.prob_sum.len()
    }

    /// Adds one batch of per-sample probabilities (the loss's own view of
    /// them). Background samples contribute nothing.
    pub fn record(&mut self, probs: &[f64], labels: &[SampleLabel]) -> Result<()> {
        let c = self.num_classes();
        if probs.len() != labels.len() * c {
            return Err(Error::DimensionMismatch {
                what: "probabilities",
                expected: labels.len() * c,
                actual: probs.len(),
            });
        }
        for (s, label) in labels.iter().enumerate() {
            if let Some(truth) = label.category() {
                self.prob_sum[truth] += probs[s * c + truth];
                self.pos_count[truth] += 1;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ProbabilityLedger) -> Result<()> {
        if other.num_classes() != self.num_classes() {
            return Err(Error::DimensionMismatch {
                what: "ledger",
                expected: self.num_classes(),
                actual: other.num_classes(),
            });
        }
        for j in 0..self.num_classes() {
            self.prob_sum[j] += other.prob_sum[j];
            self.pos_count[j] += other.pos_count[j];
        }
        Ok(())
    }

    pub fn avg(&self, j: usize) -> Option<f64> {
        (self.pos_count[j] > 0).then(|| self.prob_sum[j] / self.pos_count[j] as f64)
    }

    pub fn pos_count(&self, j: usize) -> u64 {
        self.pos_count[j]
    }
}

/// Both ledgers together, attachable to a training run as hooks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerSet {
    pub gradients: GradientLedger,
    pub probabilities: ProbabilityLedger,
}

impl LedgerSet {
    pub fn new(num_classes: usize) -> Self {
        LedgerSet {
            gradients: GradientLedger::new(num_classes),
            probabilities: ProbabilityLedger::new(num_classes),
        }
    }

    pub fn merge(&mut self, other: &LedgerSet) -> Result<()> {
        self.gradients.merge(&other.gradients)?;
        self.probabilities.merge(&other.probabilities)
    }
}

impl TrainHooks for LedgerSet {
    fn on_iteration(&mut self, record: &IterationRecord) {
        self.gradients
            .record(
                record.logit_grads,
                record.features,
                record.feature_dim,
                record.labels,
            )
            .expect("trainer hands consistent batch dimensions to hooks");
        self.probabilities
            .record(record.probs, record.labels)
            .expect("trainer hands consistent batch dimensions to hooks");
    }
}

/// Categories ordered by descending image count (ties by index), the
/// x-axis ordering used for per-category diagnostics.
pub fn categories_by_count(table: &FrequencyTable) -> Vec<usize> {
    let mut order: Vec<usize> = (0..table.num_categories()).collect();
    order.sort_by_key(|&j| (std::cmp::Reverse(table.count(j)), j));
    order
}

fn push_opt(line: &mut String, value: Option<f64>) {
    match value {
        Some(v) => {
            let _ = write!(line, ",{v}");
        }
        None => line.push(','),
    }
}

/// One CSV row per category, sorted by descending count. Empty cells mean
/// the average is undefined (no contributions).
pub fn ledgers_to_csv(
    ledgers: &LedgerSet,
    table: &FrequencyTable,
    groups: &GroupAssignment,
) -> Result<String> {
    let c = table.num_categories();
    if ledgers.gradients.num_classes() != c || groups.num_categories() != c {
        return Err(Error::DimensionMismatch {
            what: "ledger table",
            expected: c,
            actual: ledgers.gradients.num_classes(),
        });
    }
    let mut csv = String::from(
        "category,count,group,pos_norm_sum,pos_count,pos_norm_avg,\
         neg_norm_sum,neg_count,neg_norm_avg,prob_sum,prob_count,prob_avg\n",
    );
    for j in categories_by_count(table) {
        let g = &ledgers.gradients;
        let p = &ledgers.probabilities;
        let mut line = format!(
            "{j},{},{},{},{},",
            table.count(j),
            groups.group_of(j).name(),
            g.pos_norm_sum(j),
            g.pos_count(j),
        );
        match g.pos_avg(j) {
            Some(v) => {
                let _ = write!(line, "{v}");
            }
            None => {}
        }
        let _ = write!(line, ",{},{}", g.neg_norm_sum(j), g.neg_count(j));
        push_opt(&mut line, g.neg_avg(j));
        let _ = write!(line, ",{},{}", p.prob_sum[j], p.pos_count(j));
        push_opt(&mut line, p.avg(j));
        line.push('\n');
        csv.push_str(&line);
    }
    Ok(csv)
}

/// Top-k and per-group accuracy, stored as integer counts so the partition
/// identity (overall correct = sum of group corrects) is exact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub k_list: Vec<usize>,
    pub num_samples: u64,
    pub overall_correct: Vec<u64>,
    pub group_sizes: BTreeMap<Group, u64>,
    pub group_correct: BTreeMap<Group, Vec<u64>>,
}

impl EvalReport {
    pub fn accuracy(&self, k: usize) -> Option<f64> {
        let i = self.k_list.iter().position(|&kk| kk == k)?;
        Some(self.overall_correct[i] as f64 / self.num_samples as f64)
    }

    pub fn top1(&self) -> f64 {
        self.accuracy(1).unwrap_or(f64::NAN)
    }

    /// Accuracy of one group at cutoff `k`; `None` when the group is empty.
    pub fn group_accuracy(&self, group: Group, k: usize) -> Option<f64> {
        let i = self.k_list.iter().position(|&kk| kk == k)?;
        let size = *self.group_sizes.get(&group)?;
        if size == 0 {
            return None;
        }
        Some(self.group_correct[&group][i] as f64 / size as f64)
    }
}

/// Rank of the true class under descending logits with ties broken toward
/// the lower class index; a top-k hit means rank < k.
fn rank_of(logits: &[f64], truth: usize) -> usize {
    let zc = logits[truth];
    logits
        .iter()
        .enumerate()
        .filter(|&(j, &z)| z > zc || (z == zc && j < truth))
        .count()
}

/// Evaluates a model on a labeled dataset: top-k accuracy overall and per
/// frequency group (groups keyed by the true class's group).
pub fn evaluate(
    model: &Model,
    test: &SyntheticClassDataset,
    groups: &GroupAssignment,
    k_list: &[usize],
) -> Result<EvalReport> {
    let c = model.num_classes();
    if groups.num_categories() != c {
        return Err(Error::DimensionMismatch {
            what: "groups",
            expected: c,
            actual: groups.num_categories(),
        });
    }
    if test.num_classes() != c {
        return Err(Error::DimensionMismatch {
            what: "test set",
            expected: c,
            actual: test.num_classes(),
        });
    }
    if k_list.is_empty() || k_list.iter().any(|&k| k == 0 || k > c) {
        return Err(Error::invalid("k_list", "cutoffs must lie in [1, C]"));
    }
    let mut report = EvalReport {
        k_list: k_list.to_vec(),
        num_samples: test.num_samples() as u64,
        overall_correct: vec![0; k_list.len()],
        group_sizes: Group::ALL.iter().map(|&g| (g, 0)).collect(),
        group_correct: Group::ALL
            .iter()
            .map(|&g| (g, vec![0; k_list.len()]))
            .collect(),
    };
    for s in 0..test.num_samples() {
        let truth = test.label(s);
        let logits = model.logits(test.feature(s))?;
        let rank = rank_of(&logits, truth);
        let group = groups.group_of(truth);
        *report.group_sizes.get_mut(&group).unwrap() += 1;
        for (i, &k) in k_list.iter().enumerate() {
            if rank < k {
                report.overall_correct[i] += 1;
                report.group_correct.get_mut(&group).unwrap()[i] += 1;
            }
        }
    }
    Ok(report)
}
