//! Training: a linear or one-hidden-layer classifier, SGD with heavy-ball
//! momentum and decoupled-from-biases weight decay, a step learning-rate
//! schedule with linear warmup, and per-iteration hooks that hand telemetry
//! the raw per-sample logit gradients.

use crate::datagen::{read_f32_bin, write_f32_bin, Batch, ProposalStream, SyntheticClassDataset};
use crate::error::{Error, Result};
use crate::freqstats::{Group, GroupAssignment};
use crate::losses::{LossEvaluator, SampleLabel};
use crate::sampling::Sampler;
use crate::telemetry::{evaluate, EvalReport};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

/// Classifier architecture.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    Linear,
    MlpOneHidden { hidden_dim: usize },
}

/// A classifier whose last layer exposes one weight row per category, which
/// is what the gradient telemetry measures.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    kind: ModelKind,
    input_dim: usize,
    num_classes: usize,
    hidden_dim: usize,
    w_hidden: Vec<f64>,
    b_hidden: Vec<f64>,
    w_out: Vec<f64>,
    b_out: Vec<f64>,
}

/// Cached activations of one batch forward pass.
pub struct ForwardPass {
    pub logits: Vec<f64>,
    hidden: Vec<f64>,
}

/// Gradient (or velocity) buffers matching the model's parameters.
#[derive(Clone, Debug, Default)]
struct ParamBuffers {
    w_hidden: Vec<f64>,
    b_hidden: Vec<f64>,
    w_out: Vec<f64>,
    b_out: Vec<f64>,
}

impl Model {
    pub fn new(kind: ModelKind, input_dim: usize, num_classes: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 || num_classes == 0 {
            return Err(Error::invalid("model", "zero-sized dimensions"));
        }
        let hidden_dim = match kind {
            ModelKind::Linear => 0,
            ModelKind::MlpOneHidden { hidden_dim } => {
                if hidden_dim == 0 {
                    return Err(Error::invalid("hidden_dim", "must be positive"));
                }
                hidden_dim
            }
        };
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(6);
        let last_in = if hidden_dim > 0 { hidden_dim } else { input_dim };
        let mut normal = |n: usize, std: f64| -> Vec<f64> {
            (0..n)
                .map(|_| std * rng.sample::<f64, _>(StandardNormal))
                .collect()
        };
        let (w_hidden, b_hidden) = if hidden_dim > 0 {
            let std = (2.0 / input_dim as f64).sqrt();
            (normal(hidden_dim * input_dim, std), vec![0.0; hidden_dim])
        } else {
            (Vec::new(), Vec::new())
        };
        let w_out = normal(num_classes * last_in, 0.01);
        Ok(Model {
            kind,
            input_dim,
            num_classes,
            hidden_dim,
            w_hidden,
            b_hidden,
            w_out,
            b_out: vec![0.0; num_classes],
        })
    }

    /// A linear model whose class rows are the dataset's class means: the
    /// nearest-mean classifier, handy as a strong reference point.
    pub fn from_class_means(dataset: &SyntheticClassDataset) -> Self {
        let d = dataset.feature_dim();
        let c = dataset.num_classes();
        let mut w_out = Vec::with_capacity(c * d);
        let mut b_out = Vec::with_capacity(c);
        for class in 0..c {
            let mean = dataset.class_mean(class);
            w_out.extend_from_slice(mean);
            b_out.push(-0.5 * mean.iter().map(|m| m * m).sum::<f64>());
        }
        Model {
            kind: ModelKind::Linear,
            input_dim: d,
            num_classes: c,
            hidden_dim: 0,
            w_hidden: Vec::new(),
            b_hidden: Vec::new(),
            w_out,
            b_out,
        }
    }

    pub fn kind(&self) -> &ModelKind {
        &self.kind
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn last_in(&self) -> usize {
        if self.hidden_dim > 0 {
            self.hidden_dim
        } else {
            self.input_dim
        }
    }

    /// Weight row of the last layer for one category.
    pub fn class_row(&self, class: usize) -> &[f64] {
        let k = self.last_in();
        &self.w_out[class * k..(class + 1) * k]
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                what: "features",
                expected: self.input_dim,
                actual: x.len(),
            });
        }
        Ok(self.forward_batch(x, 1).logits)
    }

    /// Forward pass over `n` row-major samples.
    pub fn forward_batch(&self, features: &[f64], n: usize) -> ForwardPass {
        debug_assert_eq!(features.len(), n * self.input_dim);
        let hidden = if self.hidden_dim > 0 {
            let mut hidden = vec![0.0; n * self.hidden_dim];
            for s in 0..n {
                let x = &features[s * self.input_dim..(s + 1) * self.input_dim];
                for h in 0..self.hidden_dim {
                    let row = &self.w_hidden[h * self.input_dim..(h + 1) * self.input_dim];
                    let mut acc = self.b_hidden[h];
                    for d in 0..self.input_dim {
                        acc += row[d] * x[d];
                    }
                    hidden[s * self.hidden_dim + h] = acc.max(0.0);
                }
            }
            hidden
        } else {
            Vec::new()
        };
        let last_in = self.last_in();
        let act = if self.hidden_dim > 0 { &hidden } else { features };
        let mut logits = vec![0.0; n * self.num_classes];
        for s in 0..n {
            let a = &act[s * last_in..(s + 1) * last_in];
            for j in 0..self.num_classes {
                let row = &self.w_out[j * last_in..(j + 1) * last_in];
                let mut acc = self.b_out[j];
                for k in 0..last_in {
                    acc += row[k] * a[k];
                }
                logits[s * self.num_classes + j] = acc;
            }
        }
        ForwardPass { logits, hidden }
    }

    /// Mean parameter gradients from per-sample logit gradients.
    fn backward(
        &self,
        features: &[f64],
        n: usize,
        fwd: &ForwardPass,
        logit_grads: &[f64],
    ) -> ParamBuffers {
        let scale = 1.0 / n as f64;
        let last_in = self.last_in();
        let act = if self.hidden_dim > 0 { &fwd.hidden } else { features };
        let mut grads = ParamBuffers {
            w_hidden: vec![0.0; self.w_hidden.len()],
            b_hidden: vec![0.0; self.b_hidden.len()],
            w_out: vec![0.0; self.w_out.len()],
            b_out: vec![0.0; self.b_out.len()],
        };
        for s in 0..n {
            let g = &logit_grads[s * self.num_classes..(s + 1) * self.num_classes];
            let a = &act[s * last_in..(s + 1) * last_in];
            for j in 0..self.num_classes {
                let gj = scale * g[j];
                let row = &mut grads.w_out[j * last_in..(j + 1) * last_in];
                for k in 0..last_in {
                    row[k] += gj * a[k];
                }
                grads.b_out[j] += gj;
            }
            if self.hidden_dim > 0 {
                let x = &features[s * self.input_dim..(s + 1) * self.input_dim];
                for h in 0..self.hidden_dim {
                    if a[h] <= 0.0 {
                        continue; // ReLU gate closed
                    }
                    let mut dh = 0.0;
                    for j in 0..self.num_classes {
                        dh += g[j] * self.w_out[j * last_in + h];
                    }
                    dh *= scale;
                    let row = &mut grads.w_hidden[h * self.input_dim..(h + 1) * self.input_dim];
                    for d in 0..self.input_dim {
                        row[d] += dh * x[d];
                    }
                    grads.b_hidden[h] += dh;
                }
            }
        }
        grads
    }

    /// All parameters flattened in a fixed order (the checkpoint layout).
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.w_hidden);
        out.extend_from_slice(&self.b_hidden);
        out.extend_from_slice(&self.w_out);
        out.extend_from_slice(&self.b_out);
        out
    }

    /// Saves the parameters as little-endian f32 next to a JSON sidecar.
    pub fn save(&self, bin_path: &Path, sidecar_path: &Path) -> Result<()> {
        write_f32_bin(bin_path, &self.flat_params())?;
        let sidecar = ModelSidecar {
            schema_version: 1,
            kind: self.kind.clone(),
            input_dim: self.input_dim,
            num_classes: self.num_classes,
        };
        std::fs::write(sidecar_path, serde_json::to_string_pretty(&sidecar)?)
            .map_err(|e| Error::io(sidecar_path, e))
    }

    pub fn load(bin_path: &Path, sidecar_path: &Path) -> Result<Self> {
        let doc = std::fs::read_to_string(sidecar_path).map_err(|e| Error::io(sidecar_path, e))?;
        let sidecar: ModelSidecar = serde_json::from_str(&doc)?;
        let mut model = Model::new(sidecar.kind, sidecar.input_dim, sidecar.num_classes, 0)?;
        let params = read_f32_bin(bin_path)?;
        let expected = model.w_hidden.len()
            + model.b_hidden.len()
            + model.w_out.len()
            + model.b_out.len();
        if params.len() != expected {
            return Err(Error::DimensionMismatch {
                what: "checkpoint parameters",
                expected,
                actual: params.len(),
            });
        }
        let mut it = params.into_iter();
        for slot in model
            .w_hidden
            .iter_mut()
            .chain(model.b_hidden.iter_mut())
            .chain(model.w_out.iter_mut())
            .chain(model.b_out.iter_mut())
        {
            *slot = it.next().unwrap();
        }
        Ok(model)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelSidecar {
    schema_version: u32,
    kind: ModelKind,
    input_dim: usize,
    num_classes: usize,
}

fn default_decay_factor() -> f64 {
    0.1
}
fn default_momentum() -> f64 {
    0.9
}
fn default_weight_decay() -> f64 {
    1e-4
}

/// Iteration budget and optimizer hyperparameters: linear warmup into a
/// step-decayed learning rate, heavy-ball momentum, L2 weight decay on
/// weights (biases excluded).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub total_iters: u64,
    pub base_lr: f64,
    #[serde(default)]
    pub lr_decay_points: Vec<u64>,
    #[serde(default = "default_decay_factor")]
    pub lr_decay_factor: f64,
    #[serde(default)]
    pub warmup_iters: u64,
    #[serde(default)]
    pub warmup_start_lr: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    pub batch_size: usize,
}

impl TrainSchedule {
    /// Desk-scale default: 2K iterations, batch 128, lr 0.1 decayed at
    /// 1K and 1.5K.
    pub fn desk_default() -> Self {
        TrainSchedule {
            total_iters: 2000,
            base_lr: 0.1,
            lr_decay_points: vec![1000, 1500],
            lr_decay_factor: 0.1,
            warmup_iters: 0,
            warmup_start_lr: 0.0,
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 128,
        }
    }

    /// The 100-class long-tail reference schedule: 12.8K iterations at
    /// lr 0.2 (warmed up from 0.1 over the first 400), decayed by 0.1 at
    /// 6.4K and 9.6K, batch 256.
    pub fn longtail_cifar_reference() -> Self {
        TrainSchedule {
            total_iters: 12_800,
            base_lr: 0.2,
            lr_decay_points: vec![6_400, 9_600],
            lr_decay_factor: 0.1,
            warmup_iters: 400,
            warmup_start_lr: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 256,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_iters == 0 {
            return Err(Error::invalid("total_iters", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be positive"));
        }
        if !(self.base_lr > 0.0) {
            return Err(Error::invalid("base_lr", "must be positive"));
        }
        if self.warmup_start_lr < 0.0 {
            return Err(Error::invalid("warmup_start_lr", "must be non-negative"));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return Err(Error::invalid("lr_decay_factor", "must lie in (0, 1]"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum", "must lie in [0, 1)"));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::invalid("weight_decay", "must be non-negative"));
        }
        if self.warmup_iters >= self.total_iters {
            return Err(Error::invalid("warmup_iters", "must end before total_iters"));
        }
        let mut prev = self.warmup_iters;
        for (i, &p) in self.lr_decay_points.iter().enumerate() {
            if p <= prev && !(i == 0 && p > self.warmup_iters) {
                return Err(Error::invalid(
                    "lr_decay_points",
                    "must be strictly increasing and after warmup",
                ));
            }
            if p <= self.warmup_iters || p >= self.total_iters {
                return Err(Error::invalid(
                    "lr_decay_points",
                    "must lie between warmup_iters and total_iters",
                ));
            }
            prev = p;
        }
        Ok(())
    }

    /// Learning rate at the given iteration: linear warmup from
    /// `warmup_start_lr` to `base_lr` over `warmup_iters`, then `base_lr`
    /// scaled by `lr_decay_factor^k` after the k-th decay point.
    /// Continuous at the warmup end.
    pub fn lr_at(&self, iter: u64) -> Result<f64> {
        if iter >= self.total_iters {
            return Err(Error::invalid(
                "iter",
                format!("{iter} outside the schedule of {} iterations", self.total_iters),
            ));
        }
        if iter < self.warmup_iters {
            let t = iter as f64 / self.warmup_iters as f64;
            return Ok(self.warmup_start_lr + (self.base_lr - self.warmup_start_lr) * t);
        }
        let decays = self.lr_decay_points.iter().filter(|&&p| p <= iter).count();
        Ok(self.base_lr * self.lr_decay_factor.powi(decays as i32))
    }
}

/// Per-iteration view handed to hooks: the model as of the start of the
/// iteration, the batch, the per-sample logit gradients (not yet reduced
/// over the batch), and the loss's probabilities.
pub struct IterationRecord<'a> {
    pub iter: u64,
    pub lr: f64,
    pub mean_loss: f64,
    pub model: &'a Model,
    pub feature_dim: usize,
    pub features: &'a [f64],
    pub labels: &'a [SampleLabel],
    pub logit_grads: &'a [f64],
    pub probs: &'a [f64],
}

/// Observer of a training run; invoked on the training thread once per
/// iteration.
pub trait TrainHooks {
    fn on_iteration(&mut self, _record: &IterationRecord) {}
}

/// The do-nothing observer.
pub struct NoHooks;

impl TrainHooks for NoHooks {}

impl<A: TrainHooks, B: TrainHooks> TrainHooks for (A, B) {
    fn on_iteration(&mut self, record: &IterationRecord) {
        self.0.on_iteration(record);
        self.1.on_iteration(record);
    }
}

/// Where batches come from: a sampled classification dataset or a
/// foreground/background proposal stream.
pub enum BatchSource<'a> {
    Classification {
        dataset: &'a SyntheticClassDataset,
        sampler: Sampler,
        batch_size: usize,
    },
    Proposals(ProposalStream),
}

impl BatchSource<'_> {
    pub fn next_batch(&mut self) -> Result<Batch> {
        match self {
            BatchSource::Classification {
                dataset,
                sampler,
                batch_size,
            } => sampler.next_batch(dataset, *batch_size),
            BatchSource::Proposals(stream) => Ok(stream.next_batch()),
        }
    }

    pub fn feature_dim(&self) -> usize {
        match self {
            BatchSource::Classification { dataset, .. } => dataset.feature_dim(),
            BatchSource::Proposals(stream) => stream.config().feature_dim,
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            BatchSource::Classification { dataset, .. } => dataset.num_classes(),
            BatchSource::Proposals(stream) => stream.num_classes(),
        }
    }
}

/// Periodic evaluation wiring for a training run.
pub struct EvalPlan<'a> {
    pub test: &'a SyntheticClassDataset,
    pub groups: &'a GroupAssignment,
    /// Evaluate every `every` iterations; 0 means only at the end.
    pub every: u64,
    pub k_list: Vec<usize>,
}

/// One metrics row. Evaluation columns are filled on eval iterations only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub iter: u64,
    pub lr: f64,
    pub loss: f64,
    pub top1: Option<f64>,
    pub top5: Option<f64>,
    pub rare_top1: Option<f64>,
    pub common_top1: Option<f64>,
    pub frequent_top1: Option<f64>,
}

/// Per-iteration metrics plus the final evaluation report.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsHistory {
    pub rows: Vec<MetricsRow>,
    pub final_eval: Option<EvalReport>,
}

impl MetricsHistory {
    pub fn to_csv(&self) -> String {
        let mut csv =
            String::from("iter,lr,loss,top1,top5,rare_top1,common_top1,frequent_top1\n");
        for r in &self.rows {
            let _ = write!(csv, "{},{},{}", r.iter, r.lr, r.loss);
            for v in [r.top1, r.top5, r.rare_top1, r.common_top1, r.frequent_top1] {
                match v {
                    Some(v) => {
                        let _ = write!(csv, ",{v}");
                    }
                    None => csv.push(','),
                }
            }
            csv.push('\n');
        }
        csv
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.rows.last().map(|r| r.loss)
    }
}

fn eval_row(report: &EvalReport, iter: u64, lr: f64, loss: f64) -> MetricsRow {
    MetricsRow {
        iter,
        lr,
        loss,
        top1: report.accuracy(1),
        top5: report.accuracy(5),
        rare_top1: report.group_accuracy(Group::Rare, 1),
        common_top1: report.group_accuracy(Group::Common, 1),
        frequent_top1: report.group_accuracy(Group::Frequent, 1),
    }
}

fn batch_pass(
    model: &Model,
    loss: &LossEvaluator,
    batch: &Batch,
    rng: &mut ChaCha20Rng,
    iter: u64,
) -> Result<(ForwardPass, Vec<f64>, Vec<f64>, f64)> {
    let n = batch.len();
    let c = model.num_classes();
    let fwd = model.forward_batch(&batch.features, n);
    let mut logit_grads = vec![0.0; n * c];
    let mut probs = vec![0.0; n * c];
    let mut loss_sum = 0.0;
    for s in 0..n {
        let logits = &fwd.logits[s * c..(s + 1) * c];
        let out = match loss.eval(logits, &batch.labels[s], rng) {
            Ok(out) => out,
            Err(Error::NonFinite { .. }) => {
                return Err(Error::Diverged {
                    iter,
                    loss: f64::NAN,
                })
            }
            Err(e) => return Err(e),
        };
        loss_sum += out.loss;
        logit_grads[s * c..(s + 1) * c].copy_from_slice(&out.grad_logits);
        probs[s * c..(s + 1) * c].copy_from_slice(&out.probs);
    }
    let mean_loss = loss_sum / n as f64;
    if !mean_loss.is_finite() {
        return Err(Error::Diverged {
            iter,
            loss: mean_loss,
        });
    }
    Ok((fwd, logit_grads, probs, mean_loss))
}

fn check_dimensions(model: &Model, source: &BatchSource, loss: &LossEvaluator) -> Result<()> {
    if source.feature_dim() != model.input_dim() {
        return Err(Error::DimensionMismatch {
            what: "input features",
            expected: model.input_dim(),
            actual: source.feature_dim(),
        });
    }
    if source.num_classes() != model.num_classes() {
        return Err(Error::DimensionMismatch {
            what: "classes",
            expected: model.num_classes(),
            actual: source.num_classes(),
        });
    }
    if let Some(table) = loss.table() {
        if table.num_categories() != model.num_classes() {
            return Err(Error::DimensionMismatch {
                what: "loss table",
                expected: model.num_classes(),
                actual: table.num_categories(),
            });
        }
    }
    Ok(())
}

/// Trains `model` in place. Deterministic for a fixed seed: batches, ignore
/// draws, and updates all run on seeded streams in a fixed order.
pub fn train(
    model: &mut Model,
    source: &mut BatchSource,
    loss: &LossEvaluator,
    schedule: &TrainSchedule,
    seed: u64,
    eval: Option<&EvalPlan>,
    hooks: &mut dyn TrainHooks,
) -> Result<MetricsHistory> {
    schedule.validate()?;
    check_dimensions(model, source, loss)?;
    let mut loss_rng = ChaCha20Rng::seed_from_u64(seed);
    loss_rng.set_stream(7);
    let mut velocity = ParamBuffers {
        w_hidden: vec![0.0; model.w_hidden.len()],
        b_hidden: vec![0.0; model.b_hidden.len()],
        w_out: vec![0.0; model.w_out.len()],
        b_out: vec![0.0; model.b_out.len()],
    };
    let mut history = MetricsHistory::default();
    let momentum = schedule.momentum;
    let wd = schedule.weight_decay;
    for iter in 0..schedule.total_iters {
        let lr = schedule.lr_at(iter)?;
        let batch = source.next_batch()?;
        let n = batch.len();
        let (fwd, logit_grads, probs, mean_loss) =
            batch_pass(model, loss, &batch, &mut loss_rng, iter)?;
        hooks.on_iteration(&IterationRecord {
            iter,
            lr,
            mean_loss,
            model,
            feature_dim: batch.feature_dim,
            features: &batch.features,
            labels: &batch.labels,
            logit_grads: &logit_grads,
            probs: &probs,
        });
        let grads = model.backward(&batch.features, n, &fwd, &logit_grads);
        // Heavy-ball step; weight decay touches weights, never biases.
        let step = |w: &mut [f64], g: &[f64], v: &mut [f64], decay: f64| {
            for i in 0..w.len() {
                let g = g[i] + decay * w[i];
                v[i] = momentum * v[i] + g;
                w[i] -= lr * v[i];
            }
        };
        step(&mut model.w_hidden, &grads.w_hidden, &mut velocity.w_hidden, wd);
        step(&mut model.b_hidden, &grads.b_hidden, &mut velocity.b_hidden, 0.0);
        step(&mut model.w_out, &grads.w_out, &mut velocity.w_out, wd);
        step(&mut model.b_out, &grads.b_out, &mut velocity.b_out, 0.0);

        let mut row = MetricsRow {
            iter,
            lr,
            loss: mean_loss,
            top1: None,
            top5: None,
            rare_top1: None,
            common_top1: None,
            frequent_top1: None,
        };
        if let Some(plan) = eval {
            let last = iter + 1 == schedule.total_iters;
            let due = plan.every > 0 && (iter + 1) % plan.every == 0;
            if due || last {
                let report = evaluate(model, plan.test, plan.groups, &plan.k_list)?;
                row = eval_row(&report, iter, lr, mean_loss);
                if last {
                    history.final_eval = Some(report);
                }
            }
        }
        history.rows.push(row);
    }
    Ok(history)
}

/// Replays `iters` batches through a frozen model: same batch stream, same
/// loss evaluation and hook callbacks as [`train`], but no parameter
/// updates. This is how loss variants are compared on identical inputs.
pub fn replay(
    model: &Model,
    source: &mut BatchSource,
    loss: &LossEvaluator,
    iters: u64,
    seed: u64,
    hooks: &mut dyn TrainHooks,
) -> Result<()> {
    check_dimensions(model, source, loss)?;
    let mut loss_rng = ChaCha20Rng::seed_from_u64(seed);
    loss_rng.set_stream(7);
    for iter in 0..iters {
        let batch = source.next_batch()?;
        let (_, logit_grads, probs, mean_loss) =
            batch_pass(model, loss, &batch, &mut loss_rng, iter)?;
        hooks.on_iteration(&IterationRecord {
            iter,
            lr: 0.0,
            mean_loss,
            model,
            feature_dim: batch.feature_dim,
            features: &batch.features,
            labels: &batch.labels,
            logit_grads: &logit_grads,
            probs: &probs,
        });
    }
    Ok(())
}
