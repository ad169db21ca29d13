//! Batch-composition strategies: plain uniform sampling, class-aware
//! sampling (category first, then an image of that category), and
//! repeat-factor oversampling where a sample's draw probability grows as
//! `max(1, sqrt(t / f))` of its category frequency.

use crate::datagen::{Batch, SyntheticClassDataset};
use crate::error::{Error, Result};
use crate::losses::SampleLabel;
use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

fn default_rf_threshold() -> f64 {
    1e-3
}

/// Which sampler to use.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SamplerSpec {
    Uniform,
    ClassAware,
    RepeatFactor {
        #[serde(default = "default_rf_threshold")]
        rf_threshold: f64,
    },
}

impl SamplerSpec {
    pub fn validate(&self) -> Result<()> {
        if let SamplerSpec::RepeatFactor { rf_threshold } = self {
            if !(*rf_threshold > 0.0 && *rf_threshold <= 1.0) {
                return Err(Error::invalid("rf_threshold", "must lie in (0, 1]"));
            }
        }
        Ok(())
    }
}

/// Repeat factor of one category: `max(1, sqrt(t / f))`.
pub fn repeat_factor(rf_threshold: f64, freq: f64) -> f64 {
    (rf_threshold / freq).sqrt().max(1.0)
}

/// A sampler bound to one dataset, owning its private random stream.
pub struct Sampler {
    spec: SamplerSpec,
    num_samples: usize,
    by_class: Vec<Vec<usize>>,
    weighted: Option<WeightedIndex<f64>>,
    rng: ChaCha20Rng,
}

impl Sampler {
    pub fn new(spec: SamplerSpec, dataset: &SyntheticClassDataset, seed: u64) -> Result<Self> {
        spec.validate()?;
        if dataset.num_samples() == 0 {
            return Err(Error::invalid("dataset", "no samples"));
        }
        let mut by_class = vec![Vec::new(); dataset.num_classes()];
        for (i, &label) in dataset.labels().iter().enumerate() {
            by_class[label].push(i);
        }
        by_class.retain(|v| !v.is_empty());
        let weighted = match spec {
            SamplerSpec::RepeatFactor { rf_threshold } => {
                let table = dataset.frequency_table()?;
                let weights: Vec<f64> = dataset
                    .labels()
                    .iter()
                    .map(|&l| repeat_factor(rf_threshold, table.freq(l)))
                    .collect();
                Some(
                    WeightedIndex::new(weights)
                        .map_err(|e| Error::invalid("rf weights", e.to_string()))?,
                )
            }
            _ => None,
        };
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(5);
        Ok(Sampler {
            spec,
            num_samples: dataset.num_samples(),
            by_class,
            weighted,
            rng,
        })
    }

    /// Draws `batch_size` sample indices with replacement.
    pub fn next_indices(&mut self, batch_size: usize) -> Result<Vec<usize>> {
        if batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be positive"));
        }
        let mut out = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            let idx = match &self.spec {
                SamplerSpec::Uniform => self.rng.gen_range(0..self.num_samples),
                SamplerSpec::ClassAware => {
                    let class = &self.by_class[self.rng.gen_range(0..self.by_class.len())];
                    class[self.rng.gen_range(0..class.len())]
                }
                SamplerSpec::RepeatFactor { .. } => {
                    self.weighted.as_ref().unwrap().sample(&mut self.rng)
                }
            };
            out.push(idx);
        }
        Ok(out)
    }

    /// Draws a batch and materializes features and foreground labels.
    pub fn next_batch(
        &mut self,
        dataset: &SyntheticClassDataset,
        batch_size: usize,
    ) -> Result<Batch> {
        let indices = self.next_indices(batch_size)?;
        let d = dataset.feature_dim();
        let mut features = Vec::with_capacity(batch_size * d);
        let mut labels = Vec::with_capacity(batch_size);
        for &i in &indices {
            features.extend_from_slice(dataset.feature(i));
            labels.push(SampleLabel::foreground(dataset.label(i)));
        }
        Ok(Batch {
            features,
            feature_dim: d,
            labels,
        })
    }
}
