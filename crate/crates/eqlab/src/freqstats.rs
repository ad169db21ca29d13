//! Category statistics: image counts, frequencies, rare/common/frequent
//! grouping, the tail ratio, and the threshold/decay functions used to decide
//! which categories count as tail.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Image-count boundaries for the rare/common/frequent split.
pub const RARE_MAX_IMAGES: u64 = 10;
pub const COMMON_MAX_IMAGES: u64 = 100;

/// Per-category image counts and frequencies for a dataset.
///
/// The frequency of category `j` is the number of images containing `j`
/// divided by the total number of images. Counts of distinct categories may
/// sum to more than `total_images` (an image can contain several categories),
/// but no single count can exceed it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FrequencyTableDoc", into = "FrequencyTableDoc")]
pub struct FrequencyTable {
    counts: Vec<u64>,
    freqs: Vec<f64>,
    total_images: u64,
}

/// On-disk form: frequencies are derived data and never stored.
#[derive(Serialize, Deserialize)]
struct FrequencyTableDoc {
    total_images: u64,
    counts: Vec<u64>,
}

impl TryFrom<FrequencyTableDoc> for FrequencyTable {
    type Error = Error;
    fn try_from(doc: FrequencyTableDoc) -> Result<Self> {
        FrequencyTable::from_counts(doc.counts, doc.total_images)
    }
}

impl From<FrequencyTable> for FrequencyTableDoc {
    fn from(table: FrequencyTable) -> Self {
        FrequencyTableDoc {
            total_images: table.total_images,
            counts: table.counts,
        }
    }
}

impl FrequencyTable {
    /// Builds a table from per-category image counts and the dataset size.
    pub fn from_counts(counts: Vec<u64>, total_images: u64) -> Result<Self> {
        if total_images == 0 {
            return Err(Error::invalid("total_images", "must be positive"));
        }
        if let Some((j, &n)) = counts.iter().enumerate().find(|(_, &n)| n > total_images) {
            return Err(Error::invalid(
                "counts",
                format!("count {n} of category {j} exceeds total_images {total_images}"),
            ));
        }
        let freqs = counts
            .iter()
            .map(|&n| n as f64 / total_images as f64)
            .collect();
        Ok(FrequencyTable {
            counts,
            freqs,
            total_images,
        })
    }

    /// Table for a single-label dataset: `total_images` is the sum of counts.
    pub fn from_single_label_counts(counts: Vec<u64>) -> Result<Self> {
        let total: u64 = counts.iter().sum();
        Self::from_counts(counts, total)
    }

    pub fn num_categories(&self) -> usize {
        self.counts.len()
    }

    pub fn total_images(&self) -> u64 {
        self.total_images
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn count(&self, category: usize) -> u64 {
        self.counts[category]
    }

    /// Frequencies `f_j = N_j / total_images`, each in `[0, 1]`.
    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    pub fn freq(&self, category: usize) -> f64 {
        self.freqs[category]
    }

    /// Fraction of all images that belong to categories below the frequency
    /// threshold: `TR(lambda) = sum_j T_lambda(f_j) N_j / sum_j N_j`.
    ///
    /// Nondecreasing in `lambda`; 0 at `lambda = 0` and 1 for `lambda > 1`.
    pub fn tail_ratio(&self, lambda: f64) -> Result<f64> {
        if self.counts.is_empty() {
            return Err(Error::invalid("table", "no categories"));
        }
        let denom: u64 = self.counts.iter().sum();
        if denom == 0 {
            return Err(Error::invalid("table", "all categories have zero images"));
        }
        let tail: u64 = self
            .counts
            .iter()
            .zip(&self.freqs)
            .filter(|(_, &f)| threshold_indicator(f, lambda) == 1.0)
            .map(|(&n, _)| n)
            .sum();
        Ok(tail as f64 / denom as f64)
    }

    /// Largest threshold (chosen among the distinct category frequencies)
    /// whose tail ratio does not exceed `target`. This is how a threshold is
    /// picked in practice: decide how much of the data may be treated as tail
    /// and derive the frequency cut from it.
    pub fn lambda_for_tail_ratio(&self, target: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&target) {
            return Err(Error::invalid("target", "must lie in [0, 1]"));
        }
        let mut cands: Vec<f64> = self.freqs.clone();
        cands.sort_by(f64::total_cmp);
        cands.dedup();
        let mut best = 0.0;
        for lambda in cands {
            if self.tail_ratio(lambda)? <= target {
                best = lambda;
            } else {
                break;
            }
        }
        Ok(best)
    }
}

/// Frequency-group label by image count: rare (1-10), common (11-100),
/// frequent (>100). The same split doubles as few/medium/many shot in the
/// classification setting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Rare,
    Common,
    Frequent,
}

impl Group {
    pub const ALL: [Group; 3] = [Group::Rare, Group::Common, Group::Frequent];

    pub fn name(self) -> &'static str {
        match self {
            Group::Rare => "rare",
            Group::Common => "common",
            Group::Frequent => "frequent",
        }
    }
}

/// Per-category group labels plus the image-count boundaries that produced
/// them.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupAssignment {
    groups: Vec<Group>,
    rare_max: u64,
    common_max: u64,
}

impl GroupAssignment {
    /// Assigns every category of `table` to a group. Categories with zero
    /// images have no defined group and are rejected.
    pub fn from_table(table: &FrequencyTable) -> Result<Self> {
        let groups = table
            .counts()
            .iter()
            .enumerate()
            .map(|(j, &n)| match n {
                0 => Err(Error::invalid(
                    "counts",
                    format!("category {j} has zero images; group undefined"),
                )),
                1..=RARE_MAX_IMAGES => Ok(Group::Rare),
                n if n <= COMMON_MAX_IMAGES => Ok(Group::Common),
                _ => Ok(Group::Frequent),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(GroupAssignment {
            groups,
            rare_max: RARE_MAX_IMAGES,
            common_max: COMMON_MAX_IMAGES,
        })
    }

    pub fn group_of(&self, category: usize) -> Group {
        self.groups[category]
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn num_categories(&self) -> usize {
        self.groups.len()
    }

    /// Categories belonging to `group`, in index order.
    pub fn members(&self, group: Group) -> impl Iterator<Item = usize> + '_ {
        self.groups
            .iter()
            .enumerate()
            .filter(move |(_, &g)| g == group)
            .map(|(j, _)| j)
    }
}

/// Hard threshold indicator: 1.0 iff `f < lambda` (strictly), else 0.0.
pub fn threshold_indicator(f: f64, lambda: f64) -> f64 {
    if f < lambda {
        1.0
    } else {
        0.0
    }
}

/// Weight-deciding function of a category's frequency, evaluated in `[0, 1]`.
///
/// The hard threshold is the default; the two decay variants replace the
/// sharp cut with a smooth ramp and are kept for ablations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum ThresholdFn {
    /// `T(f) = 1` iff `f < lambda`.
    HardThreshold { lambda: f64 },
    /// `T(f) = clamp(1 - (a f)^n, 0, 1)`.
    ExponentialDecay { a: f64, n: f64 },
    /// `T(f) = clamp(1 - a e^(-b e^(-c f)), 0, 1)`.
    GompertzDecay { a: f64, b: f64, c: f64 },
}

impl ThresholdFn {
    pub fn hard(lambda: f64) -> Result<Self> {
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(Error::invalid("lambda", "must be finite and >= 0"));
        }
        Ok(ThresholdFn::HardThreshold { lambda })
    }

    pub fn exponential(a: f64, n: f64) -> Result<Self> {
        for (name, v) in [("a", a), ("n", n)] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::invalid(
                    "exponential_decay",
                    format!("{name} must be positive"),
                ));
            }
        }
        Ok(ThresholdFn::ExponentialDecay { a, n })
    }

    pub fn gompertz(a: f64, b: f64, c: f64) -> Result<Self> {
        for (name, v) in [("a", a), ("b", b), ("c", c)] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::invalid(
                    "gompertz_decay",
                    format!("{name} must be positive"),
                ));
            }
        }
        Ok(ThresholdFn::GompertzDecay { a, b, c })
    }

    /// Validates the parameters of a deserialized value.
    pub fn validate(&self) -> Result<()> {
        match *self {
            ThresholdFn::HardThreshold { lambda } => Self::hard(lambda).map(drop),
            ThresholdFn::ExponentialDecay { a, n } => Self::exponential(a, n).map(drop),
            ThresholdFn::GompertzDecay { a, b, c } => Self::gompertz(a, b, c).map(drop),
        }
    }

    /// Evaluates the function at frequency `f`, clamped to `[0, 1]`.
    pub fn eval(&self, f: f64) -> f64 {
        match *self {
            ThresholdFn::HardThreshold { lambda } => threshold_indicator(f, lambda),
            ThresholdFn::ExponentialDecay { a, n } => (1.0 - (a * f).powf(n)).clamp(0.0, 1.0),
            ThresholdFn::GompertzDecay { a, b, c } => {
                (1.0 - a * (-b * (-c * f).exp()).exp()).clamp(0.0, 1.0)
            }
        }
    }

    /// The hard-threshold cut, when this is a hard threshold.
    pub fn lambda(&self) -> Option<f64> {
        match *self {
            ThresholdFn::HardThreshold { lambda } => Some(lambda),
            _ => None,
        }
    }
}
