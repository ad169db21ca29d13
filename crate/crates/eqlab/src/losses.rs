//! Classification losses for long-tailed data.
//!
//! Every loss here returns both the scalar per-sample loss and the analytic
//! gradient with respect to the logits. The shared gradient of both
//! cross-entropy forms is `p_j - y_j`; the equalization variants multiply it
//! by a per-category weight that removes the discouraging gradient that
//! frequent-category samples would otherwise send to tail categories.
//!
//! All losses are per-sample; batch reduction belongs to the trainer.

use crate::error::{Error, Result};
use crate::freqstats::{FrequencyTable, ThresholdFn};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

/// Ground-truth annotation of one sample.
///
/// A sample is either background (negative for every category) or foreground
/// with exactly one category. The optional known-category sets carry
/// image-level annotations: categories known to be present or known to be
/// absent are never ignored by the equalization weights, no matter how rare.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleLabel {
    category: Option<usize>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    known_positive: BTreeSet<usize>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    known_negative: BTreeSet<usize>,
}

impl SampleLabel {
    pub fn background() -> Self {
        Self::default()
    }

    pub fn foreground(category: usize) -> Self {
        SampleLabel {
            category: Some(category),
            ..Self::default()
        }
    }

    /// Attaches image-level known-present / known-absent category sets.
    /// The two sets must be disjoint.
    pub fn with_known_sets(
        mut self,
        positive: BTreeSet<usize>,
        negative: BTreeSet<usize>,
    ) -> Result<Self> {
        if let Some(j) = positive.intersection(&negative).next() {
            return Err(Error::invalid(
                "known sets",
                format!("category {j} is in both the positive and negative set"),
            ));
        }
        self.known_positive = positive;
        self.known_negative = negative;
        Ok(self)
    }

    pub fn category(&self) -> Option<usize> {
        self.category
    }

    pub fn is_foreground(&self) -> bool {
        self.category.is_some()
    }

    pub fn known_positive(&self) -> &BTreeSet<usize> {
        &self.known_positive
    }

    pub fn known_negative(&self) -> &BTreeSet<usize> {
        &self.known_negative
    }

    /// True when category `j` may never be ignored for this sample.
    pub fn is_pinned(&self, j: usize) -> bool {
        self.known_positive.contains(&j) || self.known_negative.contains(&j)
    }

    fn target(&self, j: usize) -> f64 {
        if self.category == Some(j) {
            1.0
        } else {
            0.0
        }
    }
}

/// Scalar loss, per-logit gradient, and the probabilities the loss itself
/// worked with (independent sigmoids or the possibly reweighted softmax).
#[derive(Clone, Debug, PartialEq)]
pub struct LossResult {
    pub loss: f64,
    pub grad_logits: Vec<f64>,
    pub probs: Vec<f64>,
    /// Realized per-category ignore draws, present only for the stochastic
    /// softmax variant; kept so a run can be audited and replayed.
    pub beta: Option<Vec<bool>>,
}

/// How the stochastic ignore variable is drawn for the softmax variant:
/// independently per category (default) or once per forward call, shared by
/// all categories.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaMode {
    #[default]
    PerClass,
    PerCall,
}

fn default_focal_gamma() -> f64 {
    2.0
}
fn default_focal_alpha() -> f64 {
    0.25
}
fn default_cb_beta() -> f64 {
    0.999
}

/// Which loss to use, with its hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossSpec {
    SoftmaxCe,
    SigmoidCe,
    Eql {
        threshold_fn: ThresholdFn,
    },
    Seql {
        threshold_fn: ThresholdFn,
        gamma_ignore: f64,
        #[serde(default)]
        beta_mode: BetaMode,
    },
    Focal {
        #[serde(default = "default_focal_gamma")]
        focal_gamma: f64,
        #[serde(default = "default_focal_alpha")]
        focal_alpha: f64,
    },
    ClassBalanced {
        #[serde(default = "default_cb_beta")]
        cb_beta: f64,
    },
}

impl LossSpec {
    /// Equalization loss with a hard frequency threshold.
    pub fn eql(lambda: f64) -> Result<Self> {
        Ok(LossSpec::Eql {
            threshold_fn: ThresholdFn::hard(lambda)?,
        })
    }

    /// Stochastic softmax equalization with a hard frequency threshold.
    pub fn seql(lambda: f64, gamma_ignore: f64) -> Result<Self> {
        let spec = LossSpec::Seql {
            threshold_fn: ThresholdFn::hard(lambda)?,
            gamma_ignore,
            beta_mode: BetaMode::default(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn name(&self) -> &'static str {
        match self {
            LossSpec::SoftmaxCe => "softmax_ce",
            LossSpec::SigmoidCe => "sigmoid_ce",
            LossSpec::Eql { .. } => "eql",
            LossSpec::Seql { .. } => "seql",
            LossSpec::Focal { .. } => "focal",
            LossSpec::ClassBalanced { .. } => "class_balanced",
        }
    }

    /// Does this loss need category statistics?
    pub fn requires_table(&self) -> bool {
        matches!(
            self,
            LossSpec::Eql { .. } | LossSpec::Seql { .. } | LossSpec::ClassBalanced { .. }
        )
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LossSpec::SoftmaxCe | LossSpec::SigmoidCe => Ok(()),
            LossSpec::Eql { threshold_fn } => threshold_fn.validate(),
            LossSpec::Seql {
                threshold_fn,
                gamma_ignore,
                ..
            } => {
                threshold_fn.validate()?;
                if !(0.0..=1.0).contains(gamma_ignore) {
                    return Err(Error::invalid("gamma_ignore", "must lie in [0, 1]"));
                }
                Ok(())
            }
            LossSpec::Focal {
                focal_gamma,
                focal_alpha,
            } => {
                if !focal_gamma.is_finite() || *focal_gamma < 0.0 {
                    return Err(Error::invalid("focal_gamma", "must be finite and >= 0"));
                }
                if !(*focal_alpha > 0.0 && *focal_alpha <= 1.0) {
                    return Err(Error::invalid("focal_alpha", "must lie in (0, 1]"));
                }
                Ok(())
            }
            LossSpec::ClassBalanced { cb_beta } => {
                if !(0.0..1.0).contains(cb_beta) {
                    return Err(Error::invalid("cb_beta", "must lie in [0, 1)"));
                }
                Ok(())
            }
        }
    }
}

fn check_logits(logits: &[f64]) -> Result<()> {
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::NonFinite { context: "logits" });
    }
    Ok(())
}

fn check_category(label: &SampleLabel, num_classes: usize) -> Result<()> {
    if let Some(c) = label.category() {
        if c >= num_classes {
            return Err(Error::invalid(
                "label",
                format!("category {c} out of range for {num_classes} classes"),
            ));
        }
    }
    Ok(())
}

fn check_table(table: &FrequencyTable, num_classes: usize) -> Result<()> {
    if table.num_categories() != num_classes {
        return Err(Error::DimensionMismatch {
            what: "frequency table",
            expected: num_classes,
            actual: table.num_categories(),
        });
    }
    Ok(())
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// `log(1 + e^x)` without overflow; equals `-log sigmoid(-x)`.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Per-category weighted sigmoid cross-entropy. `weights == None` means all
/// ones; weighting treats `w` as a constant, so the gradient is exactly
/// `w_j (p_j - y_j)`.
fn weighted_sigmoid_ce(logits: &[f64], label: &SampleLabel, weights: Option<&[f64]>) -> LossResult {
    let n = logits.len();
    let mut loss = 0.0;
    let mut grad = vec![0.0; n];
    let mut probs = vec![0.0; n];
    for j in 0..n {
        let z = logits[j];
        let y = label.target(j);
        let w = weights.map_or(1.0, |w| w[j]);
        // -log p_hat: softplus(-z) for positives, softplus(z) for negatives.
        let nll = if y == 1.0 { softplus(-z) } else { softplus(z) };
        let p = sigmoid(z);
        loss += w * nll;
        grad[j] = w * (p - y);
        probs[j] = p;
    }
    LossResult {
        loss,
        grad_logits: grad,
        probs,
        beta: None,
    }
}

/// Softmax cross-entropy over a denominator whose terms may be down-weighted.
/// `weights == None` is the plain softmax. The max used for stabilization is
/// taken over categories that are still in the denominator.
fn weighted_softmax_ce(logits: &[f64], truth: usize, weights: Option<&[f64]>) -> LossResult {
    let n = logits.len();
    let max = match weights {
        None => logits.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        Some(w) => logits
            .iter()
            .zip(w)
            .filter(|&(_, &wk)| wk > 0.0)
            .map(|(&z, _)| z)
            .fold(f64::NEG_INFINITY, f64::max),
    };
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let mut denom = 0.0;
    for j in 0..n {
        let w = weights.map_or(1.0, |w| w[j]);
        denom += w * exps[j];
    }
    // denom >= exp(z_c - max) because the truth category keeps weight 1,
    // so the loss is non-negative up to rounding.
    let loss = (denom.ln() - (logits[truth] - max)).max(0.0);
    let mut grad = vec![0.0; n];
    let mut probs = vec![0.0; n];
    for j in 0..n {
        let w = weights.map_or(1.0, |w| w[j]);
        let p = exps[j] / denom;
        probs[j] = p;
        grad[j] = w * p - if j == truth { 1.0 } else { 0.0 };
    }
    LossResult {
        loss,
        grad_logits: grad,
        probs,
        beta: None,
    }
}

/// Softmax cross-entropy, `-log softmax(z)_c`. The label must be foreground;
/// callers that want an explicit background class include it as a category.
pub fn softmax_ce(logits: &[f64], label: &SampleLabel) -> Result<LossResult> {
    check_logits(logits)?;
    check_category(label, logits.len())?;
    let Some(truth) = label.category() else {
        return Err(Error::invalid(
            "label",
            "softmax cross-entropy needs a foreground category",
        ));
    };
    Ok(weighted_softmax_ce(logits, truth, None))
}

/// Sigmoid cross-entropy: independent binary cross-entropy per category.
/// Background samples set every target to zero.
pub fn sigmoid_ce(logits: &[f64], label: &SampleLabel) -> Result<LossResult> {
    check_logits(logits)?;
    check_category(label, logits.len())?;
    Ok(weighted_sigmoid_ce(logits, label, None))
}

/// Per-category equalization weights `w_j = 1 - E(r) T(f_j) (1 - y_j)`.
///
/// `E(r)` is 1 for foreground samples and 0 for background, so background
/// samples keep every negative gradient. Categories in the sample's known
/// positive or negative set get weight 1 regardless of their frequency.
pub fn eql_weights(
    label: &SampleLabel,
    table: &FrequencyTable,
    spec: &LossSpec,
) -> Result<Vec<f64>> {
    let LossSpec::Eql { threshold_fn } = spec else {
        return Err(Error::invalid("spec", "expected an eql loss spec"));
    };
    check_category(label, table.num_categories())?;
    let excluding = if label.is_foreground() { 1.0 } else { 0.0 };
    Ok((0..table.num_categories())
        .map(|j| {
            if label.is_pinned(j) {
                return 1.0;
            }
            1.0 - excluding * threshold_fn.eval(table.freq(j)) * (1.0 - label.target(j))
        })
        .collect())
}

/// Equalization loss: sigmoid cross-entropy with the weights of
/// [`eql_weights`]. With a hard threshold at 0 this is exactly sigmoid
/// cross-entropy.
pub fn eql_loss(
    logits: &[f64],
    label: &SampleLabel,
    table: &FrequencyTable,
    spec: &LossSpec,
) -> Result<LossResult> {
    check_logits(logits)?;
    check_table(table, logits.len())?;
    let weights = eql_weights(label, table, spec)?;
    Ok(weighted_sigmoid_ce(logits, label, Some(&weights)))
}

fn seql_draw_beta<R: Rng + ?Sized>(
    gamma_ignore: f64,
    beta_mode: BetaMode,
    n: usize,
    rng: &mut R,
) -> Vec<bool> {
    match beta_mode {
        BetaMode::PerClass => (0..n).map(|_| rng.gen::<f64>() < gamma_ignore).collect(),
        BetaMode::PerCall => vec![rng.gen::<f64>() < gamma_ignore; n],
    }
}

/// Softmax equalization loss with a caller-supplied ignore realization.
/// This is the deterministic core of [`seql_loss`]; it also lets audits
/// replay a recorded draw.
pub fn seql_loss_with_beta(
    logits: &[f64],
    label: &SampleLabel,
    table: &FrequencyTable,
    spec: &LossSpec,
    beta: &[bool],
) -> Result<LossResult> {
    let LossSpec::Seql { threshold_fn, .. } = spec else {
        return Err(Error::invalid("spec", "expected a seql loss spec"));
    };
    check_logits(logits)?;
    check_table(table, logits.len())?;
    check_category(label, logits.len())?;
    if beta.len() != logits.len() {
        return Err(Error::DimensionMismatch {
            what: "beta",
            expected: logits.len(),
            actual: beta.len(),
        });
    }
    let Some(truth) = label.category() else {
        return Err(Error::invalid(
            "label",
            "softmax equalization needs a foreground category",
        ));
    };
    let weights: Vec<f64> = (0..logits.len())
        .map(|k| {
            let b = if beta[k] { 1.0 } else { 0.0 };
            1.0 - b * threshold_fn.eval(table.freq(k)) * (1.0 - label.target(k))
        })
        .collect();
    let mut out = weighted_softmax_ce(logits, truth, Some(&weights));
    out.beta = Some(beta.to_vec());
    Ok(out)
}

/// Softmax equalization loss: tail categories are dropped from the softmax
/// denominator with probability `gamma_ignore`, drawn fresh on every call.
/// The realized draw is returned in the result. With `gamma_ignore = 0` this
/// is exactly softmax cross-entropy.
pub fn seql_loss<R: Rng + ?Sized>(
    logits: &[f64],
    label: &SampleLabel,
    table: &FrequencyTable,
    spec: &LossSpec,
    rng: &mut R,
) -> Result<LossResult> {
    let LossSpec::Seql {
        gamma_ignore,
        beta_mode,
        ..
    } = spec
    else {
        return Err(Error::invalid("spec", "expected a seql loss spec"));
    };
    let beta = seql_draw_beta(*gamma_ignore, *beta_mode, logits.len(), rng);
    seql_loss_with_beta(logits, label, table, spec, &beta)
}

/// Sigmoid focal loss: `-alpha_t (1 - p_t)^gamma log(p_t)` per category,
/// with `alpha_t = focal_alpha` for the positive category and
/// `1 - focal_alpha` otherwise.
pub fn focal_loss(logits: &[f64], label: &SampleLabel, spec: &LossSpec) -> Result<LossResult> {
    let LossSpec::Focal {
        focal_gamma,
        focal_alpha,
    } = *spec
    else {
        return Err(Error::invalid("spec", "expected a focal loss spec"));
    };
    check_logits(logits)?;
    check_category(label, logits.len())?;
    let n = logits.len();
    let mut loss = 0.0;
    let mut grad = vec![0.0; n];
    let mut probs = vec![0.0; n];
    for j in 0..n {
        let z = logits[j];
        let p = sigmoid(z);
        let log_p = -softplus(-z);
        let log_1mp = -softplus(z);
        if label.target(j) == 1.0 {
            let focus = (1.0 - p).powf(focal_gamma);
            loss += -focal_alpha * focus * log_p;
            grad[j] = focal_alpha * focus * (focal_gamma * p * log_p - (1.0 - p));
        } else {
            let focus = p.powf(focal_gamma);
            loss += -(1.0 - focal_alpha) * focus * log_1mp;
            grad[j] = (1.0 - focal_alpha) * focus * (p - focal_gamma * (1.0 - p) * log_1mp);
        }
        probs[j] = p;
    }
    Ok(LossResult {
        loss,
        grad_logits: grad,
        probs,
        beta: None,
    })
}

/// Effective number of samples weight for class-balanced scaling:
/// `(1 - beta) / (1 - beta^n)`.
pub fn effective_number_weight(cb_beta: f64, count: u64) -> Result<f64> {
    if count == 0 {
        return Err(Error::invalid(
            "counts",
            "class-balanced weight undefined for a zero-count class",
        ));
    }
    if cb_beta == 0.0 {
        return Ok(1.0);
    }
    Ok((1.0 - cb_beta) / (1.0 - cb_beta.powf(count as f64)))
}

/// Class-balanced loss: sigmoid cross-entropy scaled by the effective-number
/// weight of the sample's ground-truth class. Background samples keep
/// weight 1 (there is no class to balance by).
pub fn class_balanced_loss(
    logits: &[f64],
    label: &SampleLabel,
    table: &FrequencyTable,
    spec: &LossSpec,
) -> Result<LossResult> {
    let LossSpec::ClassBalanced { cb_beta } = *spec else {
        return Err(Error::invalid("spec", "expected a class_balanced loss spec"));
    };
    check_logits(logits)?;
    check_table(table, logits.len())?;
    check_category(label, logits.len())?;
    let weight = match label.category() {
        None => 1.0,
        Some(c) => effective_number_weight(cb_beta, table.count(c))?,
    };
    let mut out = weighted_sigmoid_ce(logits, label, None);
    out.loss *= weight;
    for g in &mut out.grad_logits {
        *g *= weight;
    }
    Ok(out)
}

/// One configured loss, ready to evaluate sample after sample.
///
/// Evaluation is pure given the random source handed to [`eval`]; the source
/// is only consumed by the stochastic softmax variant.
///
/// [`eval`]: LossEvaluator::eval
#[derive(Clone, Debug)]
pub struct LossEvaluator {
    spec: LossSpec,
    table: Option<FrequencyTable>,
}

impl LossEvaluator {
    pub fn new(spec: LossSpec, table: Option<FrequencyTable>) -> Result<Self> {
        spec.validate()?;
        if spec.requires_table() && table.is_none() {
            return Err(Error::invalid(
                "table",
                format!("{} needs a frequency table", spec.name()),
            ));
        }
        Ok(LossEvaluator { spec, table })
    }

    pub fn spec(&self) -> &LossSpec {
        &self.spec
    }

    pub fn table(&self) -> Option<&FrequencyTable> {
        self.table.as_ref()
    }

    pub fn eval<R: Rng + ?Sized>(
        &self,
        logits: &[f64],
        label: &SampleLabel,
        rng: &mut R,
    ) -> Result<LossResult> {
        match &self.spec {
            LossSpec::SoftmaxCe => softmax_ce(logits, label),
            LossSpec::SigmoidCe => sigmoid_ce(logits, label),
            LossSpec::Eql { .. } => eql_loss(logits, label, self.table_ref()?, &self.spec),
            LossSpec::Seql { .. } => seql_loss(logits, label, self.table_ref()?, &self.spec, rng),
            LossSpec::Focal { .. } => focal_loss(logits, label, &self.spec),
            LossSpec::ClassBalanced { .. } => {
                class_balanced_loss(logits, label, self.table_ref()?, &self.spec)
            }
        }
    }

    fn table_ref(&self) -> Result<&FrequencyTable> {
        self.table
            .as_ref()
            .ok_or_else(|| Error::invalid("table", "missing frequency table"))
    }
}
