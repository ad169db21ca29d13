//! Synthetic long-tailed data.
//!
//! Two generators: a single-label classification dataset with the
//! exponential imbalance profile and Gaussian class clusters, and a
//! detection-style stream of foreground/background proposals at a fixed
//! ratio. Both are pure functions of their configuration and seed.

use crate::error::{Error, Result};
use crate::freqstats::FrequencyTable;
use crate::losses::SampleLabel;
use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;

/// Distance of every class mean from the origin. Class clusters sit on
/// random unit directions scaled by this; background proposals are drawn
/// around the origin itself.
const MEAN_SCALE: f64 = 3.0;

/// Exponential long-tail profile: class `i` of `C` gets
/// `floor(n_max * IF^(-i / (C - 1)))` samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LongTailProfile {
    pub num_classes: usize,
    pub n_max: u64,
    pub imbalance_factor: f64,
}

impl LongTailProfile {
    pub fn new(num_classes: usize, n_max: u64, imbalance_factor: f64) -> Result<Self> {
        let profile = LongTailProfile {
            num_classes,
            n_max,
            imbalance_factor,
        };
        profile.validate()?;
        Ok(profile)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::invalid("num_classes", "need at least 2 classes"));
        }
        if self.n_max < 1 {
            return Err(Error::invalid("n_max", "must be at least 1"));
        }
        if !(self.imbalance_factor > 1.0) || !self.imbalance_factor.is_finite() {
            return Err(Error::invalid(
                "imbalance_factor",
                "must be finite and greater than 1",
            ));
        }
        Ok(())
    }

    /// Per-class sample counts, head first. Rounding is floor, which
    /// reproduces the canonical 500-max / 2-min / 9502-total split for
    /// 100 classes at imbalance factor 200. A profile whose tail rounds
    /// to zero is rejected.
    pub fn counts(&self) -> Result<Vec<u64>> {
        self.validate()?;
        let c = self.num_classes;
        let mut counts = Vec::with_capacity(c);
        for i in 0..c {
            let exponent = -(i as f64) / (c as f64 - 1.0);
            let raw = self.n_max as f64 * self.imbalance_factor.powf(exponent);
            let n = raw.floor() as u64;
            if n == 0 {
                return Err(Error::invalid(
                    "profile",
                    format!("class {i} rounds to zero samples (raw {raw:.4})"),
                ));
            }
            counts.push(n);
        }
        Ok(counts)
    }
}

/// A fully materialized single-label dataset: one feature row per sample,
/// samples grouped by class (class 0 first), features drawn as
/// `class_mean + sigma * N(0, I)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticClassDataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    counts: Vec<u64>,
    class_means: Vec<f64>,
    feature_dim: usize,
    noise_sigma: f64,
}

fn class_means(num_classes: usize, feature_dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut means = Vec::with_capacity(num_classes * feature_dim);
    for _ in 0..num_classes {
        let dir: Vec<f64> = (0..feature_dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        means.extend(dir.iter().map(|x| MEAN_SCALE * x / norm));
    }
    means
}

fn fill_gaussian_rows(
    out: &mut Vec<f64>,
    mean: &[f64],
    sigma: f64,
    rows: u64,
    rng: &mut ChaCha20Rng,
) {
    for _ in 0..rows {
        out.extend(
            mean.iter()
                .map(|&m| m + sigma * rng.sample::<f64, _>(StandardNormal)),
        );
    }
}

/// Generates a classification dataset with the given per-class counts.
/// Class means depend only on `(num_classes, feature_dim, seed)`, so
/// datasets generated from the same seed share geometry regardless of the
/// counts (the balanced test split relies on this).
pub fn synth_classification_dataset(
    profile: &LongTailProfile,
    feature_dim: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<SyntheticClassDataset> {
    let counts = profile.counts()?;
    synth_dataset_with_counts(profile.num_classes, &counts, feature_dim, noise_sigma, seed, 2)
}

fn synth_dataset_with_counts(
    num_classes: usize,
    counts: &[u64],
    feature_dim: usize,
    noise_sigma: f64,
    seed: u64,
    noise_stream: u64,
) -> Result<SyntheticClassDataset> {
    if feature_dim < 2 {
        return Err(Error::invalid("feature_dim", "must be at least 2"));
    }
    if !(noise_sigma > 0.0) {
        return Err(Error::invalid("noise_sigma", "must be positive"));
    }
    let means = class_means(num_classes, feature_dim, seed);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(noise_stream);
    let total: u64 = counts.iter().sum();
    let mut features = Vec::with_capacity(total as usize * feature_dim);
    let mut labels = Vec::with_capacity(total as usize);
    for (class, &n) in counts.iter().enumerate() {
        let mean = &means[class * feature_dim..(class + 1) * feature_dim];
        fill_gaussian_rows(&mut features, mean, noise_sigma, n, &mut rng);
        labels.extend(std::iter::repeat(class).take(n as usize));
    }
    Ok(SyntheticClassDataset {
        features,
        labels,
        counts: counts.to_vec(),
        class_means: means,
        feature_dim,
        noise_sigma,
    })
}

impl SyntheticClassDataset {
    pub fn num_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn feature(&self, sample: usize) -> &[f64] {
        &self.features[sample * self.feature_dim..(sample + 1) * self.feature_dim]
    }

    pub fn class_mean(&self, class: usize) -> &[f64] {
        &self.class_means[class * self.feature_dim..(class + 1) * self.feature_dim]
    }

    pub fn label(&self, sample: usize) -> usize {
        self.labels[sample]
    }

    /// Frequency table treating each sample as one single-label image.
    pub fn frequency_table(&self) -> Result<FrequencyTable> {
        FrequencyTable::from_single_label_counts(self.counts.clone())
    }

    /// A balanced companion split drawn from the same class means and noise
    /// level, for evaluation. Independent of the training draw.
    pub fn balanced_split(&self, per_class: u64, seed: u64) -> Result<SyntheticClassDataset> {
        let counts = vec![per_class; self.num_classes()];
        let mut ds = synth_dataset_with_counts(
            self.num_classes(),
            &counts,
            self.feature_dim,
            self.noise_sigma,
            seed,
            3,
        )?;
        // Reuse the exact means of this dataset (same seed gives the same
        // means already; copying makes that independent of call order).
        ds.class_means.copy_from_slice(&self.class_means);
        Ok(ds)
    }
}

/// Detection-style proposal stream configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProposalStreamConfig {
    /// Foreground : background mix, e.g. (1, 3) for the standard 1:3 split.
    pub fg_ratio: u32,
    pub bg_ratio: u32,
    pub batch_size: usize,
    pub feature_dim: usize,
    pub noise_sigma: f64,
    /// Size of the per-batch known-absent category sample; 0 disables it.
    #[serde(default)]
    pub neg_set_size: usize,
}

impl Default for ProposalStreamConfig {
    fn default() -> Self {
        ProposalStreamConfig {
            fg_ratio: 1,
            bg_ratio: 3,
            batch_size: 512,
            feature_dim: 32,
            noise_sigma: 1.0,
            neg_set_size: 0,
        }
    }
}

impl ProposalStreamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fg_ratio == 0 {
            return Err(Error::invalid("fg_ratio", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be positive"));
        }
        if self.feature_dim < 2 {
            return Err(Error::invalid("feature_dim", "must be at least 2"));
        }
        if !(self.noise_sigma > 0.0) {
            return Err(Error::invalid("noise_sigma", "must be positive"));
        }
        Ok(())
    }

    /// Foreground proposals per batch; exact up to the +-1 rounding of the
    /// configured ratio.
    pub fn fg_per_batch(&self) -> usize {
        let ratio = self.fg_ratio as f64 / (self.fg_ratio + self.bg_ratio) as f64;
        (self.batch_size as f64 * ratio).round() as usize
    }
}

/// One batch of samples: row-major features plus one label per row.
/// Proposal batches also carry the batch-level known category sets, copied
/// onto every label.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub features: Vec<f64>,
    pub feature_dim: usize,
    pub labels: Vec<SampleLabel>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature(&self, sample: usize) -> &[f64] {
        &self.features[sample * self.feature_dim..(sample + 1) * self.feature_dim]
    }
}

/// Endless stream of proposal batches. Foreground categories are drawn with
/// probability proportional to their image counts; background proposals get
/// features from a zero-mean cluster distinct from every class mean.
pub struct ProposalStream {
    config: ProposalStreamConfig,
    class_means: Vec<f64>,
    category_dist: WeightedIndex<u64>,
    num_classes: usize,
    rng: ChaCha20Rng,
}

pub fn synth_proposal_stream(
    table: &FrequencyTable,
    config: ProposalStreamConfig,
    seed: u64,
) -> Result<ProposalStream> {
    config.validate()?;
    if table.num_categories() == 0 {
        return Err(Error::invalid("table", "no categories"));
    }
    let category_dist = WeightedIndex::new(table.counts().iter().copied())
        .map_err(|e| Error::invalid("table", format!("bad count weights: {e}")))?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(4);
    Ok(ProposalStream {
        class_means: class_means(table.num_categories(), config.feature_dim, seed),
        category_dist,
        num_classes: table.num_categories(),
        config,
        rng,
    })
}

impl ProposalStream {
    pub fn config(&self) -> &ProposalStreamConfig {
        &self.config
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Balanced per-class foreground features for evaluation, drawn from the
    /// same class means as the stream.
    pub fn balanced_split(&self, per_class: u64, seed: u64) -> Result<SyntheticClassDataset> {
        let counts = vec![per_class; self.num_classes];
        let mut ds = synth_dataset_with_counts(
            self.num_classes,
            &counts,
            self.config.feature_dim,
            self.config.noise_sigma,
            seed,
            3,
        )?;
        ds.class_means.copy_from_slice(&self.class_means);
        Ok(ds)
    }

    pub fn next_batch(&mut self) -> Batch {
        let cfg = &self.config;
        let d = cfg.feature_dim;
        let n_fg = cfg.fg_per_batch();
        let n = cfg.batch_size;
        let mut features = Vec::with_capacity(n * d);
        let mut categories = Vec::with_capacity(n_fg);
        let mut present = BTreeSet::new();
        for _ in 0..n_fg {
            let c = self.category_dist.sample(&mut self.rng);
            present.insert(c);
            categories.push(c);
            let mean = &self.class_means[c * d..(c + 1) * d];
            features.extend(
                mean.iter()
                    .map(|&m| m + cfg.noise_sigma * self.rng.sample::<f64, _>(StandardNormal)),
            );
        }
        for _ in n_fg..n {
            features.extend(
                (0..d).map(|_| cfg.noise_sigma * self.rng.sample::<f64, _>(StandardNormal)),
            );
        }
        let absent: Vec<usize> = (0..self.num_classes)
            .filter(|c| !present.contains(c))
            .collect();
        let mut known_negative = BTreeSet::new();
        for _ in 0..cfg.neg_set_size.min(absent.len()) {
            loop {
                let c = absent[self.rng.gen_range(0..absent.len())];
                if known_negative.insert(c) {
                    break;
                }
            }
        }
        let mut labels = Vec::with_capacity(n);
        for &c in &categories {
            labels.push(
                SampleLabel::foreground(c)
                    .with_known_sets(present.clone(), known_negative.clone())
                    .expect("present and absent sets are disjoint by construction"),
            );
        }
        for _ in n_fg..n {
            labels.push(
                SampleLabel::background()
                    .with_known_sets(present.clone(), known_negative.clone())
                    .expect("present and absent sets are disjoint by construction"),
            );
        }
        Batch {
            features,
            feature_dim: d,
            labels,
        }
    }
}

impl Iterator for ProposalStream {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        Some(self.next_batch())
    }
}

// ---------------------------------------------------------------------------
// Flat binary export: little-endian f32, row-major, with a JSON sidecar.
// ---------------------------------------------------------------------------

/// Sidecar describing an exported classification dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub schema_version: u32,
    pub profile: LongTailProfile,
    pub feature_dim: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    pub counts: Vec<u64>,
    pub test_per_class: u64,
}

pub const DATASET_SIDECAR_FILE: &str = "dataset.json";
pub const TRAIN_BIN_FILE: &str = "train.bin";
pub const TEST_BIN_FILE: &str = "test.bin";

/// Writes values as little-endian 32-bit floats.
pub fn write_f32_bin(path: &Path, values: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 4);
    for &v in values {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_f32_bin(path: &Path) -> Result<Vec<f64>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(|e| Error::io(path, e))?
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::invalid(
            "binary file",
            format!("{} has length {} not divisible by 4", path.display(), bytes.len()),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

/// Exports train + balanced test splits of a classification dataset into
/// `dir` (train.bin, test.bin, dataset.json). Deterministic in the seed.
pub fn export_classification_dataset(
    profile: &LongTailProfile,
    feature_dim: usize,
    noise_sigma: f64,
    test_per_class: u64,
    seed: u64,
    dir: &Path,
) -> Result<DatasetSidecar> {
    let train = synth_classification_dataset(profile, feature_dim, noise_sigma, seed)?;
    let test = train.balanced_split(test_per_class, seed)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_f32_bin(&dir.join(TRAIN_BIN_FILE), train.features())?;
    write_f32_bin(&dir.join(TEST_BIN_FILE), test.features())?;
    let sidecar = DatasetSidecar {
        schema_version: 1,
        profile: profile.clone(),
        feature_dim,
        noise_sigma,
        seed,
        counts: train.counts().to_vec(),
        test_per_class,
    };
    let doc = serde_json::to_string_pretty(&sidecar)?;
    std::fs::write(dir.join(DATASET_SIDECAR_FILE), doc)
        .map_err(|e| Error::io(dir.join(DATASET_SIDECAR_FILE), e))?;
    Ok(sidecar)
}

/// Sidecar describing an exported window of a proposal stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProposalExportSidecar {
    pub schema_version: u32,
    pub profile: LongTailProfile,
    pub stream: ProposalStreamConfig,
    pub seed: u64,
    pub counts: Vec<u64>,
    pub num_batches: usize,
    pub test_per_class: u64,
}

/// Per-batch labels of an exported proposal window; -1 marks background.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProposalBatchLabels {
    pub categories: Vec<i64>,
    pub known_positive: Vec<usize>,
    pub known_negative: Vec<usize>,
}

pub const PROPOSALS_BIN_FILE: &str = "proposals.bin";
pub const PROPOSAL_LABELS_FILE: &str = "proposal_labels.json";

/// Materializes a window of `num_batches` proposal batches plus a balanced
/// foreground test split (proposals.bin, proposal_labels.json, test.bin,
/// dataset.json). The stream itself is endless; training regenerates it from
/// the config, so this export exists for inspection and external tooling.
pub fn export_proposal_dataset(
    profile: &LongTailProfile,
    stream_config: &ProposalStreamConfig,
    test_per_class: u64,
    seed: u64,
    num_batches: usize,
    dir: &Path,
) -> Result<ProposalExportSidecar> {
    let counts = profile.counts()?;
    let table = FrequencyTable::from_single_label_counts(counts.clone())?;
    let mut stream = synth_proposal_stream(&table, stream_config.clone(), seed)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut features = Vec::new();
    let mut batches = Vec::with_capacity(num_batches);
    for _ in 0..num_batches {
        let batch = stream.next_batch();
        features.extend_from_slice(&batch.features);
        batches.push(ProposalBatchLabels {
            categories: batch
                .labels
                .iter()
                .map(|l| l.category().map_or(-1, |c| c as i64))
                .collect(),
            known_positive: batch.labels[0].known_positive().iter().copied().collect(),
            known_negative: batch.labels[0].known_negative().iter().copied().collect(),
        });
    }
    write_f32_bin(&dir.join(PROPOSALS_BIN_FILE), &features)?;
    let labels_path = dir.join(PROPOSAL_LABELS_FILE);
    std::fs::write(&labels_path, serde_json::to_string_pretty(&batches)?)
        .map_err(|e| Error::io(&labels_path, e))?;
    let test = stream.balanced_split(test_per_class, seed)?;
    write_f32_bin(&dir.join(TEST_BIN_FILE), test.features())?;
    let sidecar = ProposalExportSidecar {
        schema_version: 1,
        profile: profile.clone(),
        stream: stream_config.clone(),
        seed,
        counts,
        num_batches,
        test_per_class,
    };
    let sidecar_path = dir.join(DATASET_SIDECAR_FILE);
    std::fs::write(&sidecar_path, serde_json::to_string_pretty(&sidecar)?)
        .map_err(|e| Error::io(&sidecar_path, e))?;
    Ok(sidecar)
}

/// Loads an exported dataset pair. Labels are reconstructed from the sidecar
/// counts (samples are stored grouped by class); class means are rebuilt from
/// the recorded seed.
pub fn load_classification_dataset(
    dir: &Path,
) -> Result<(SyntheticClassDataset, SyntheticClassDataset)> {
    let sidecar_path = dir.join(DATASET_SIDECAR_FILE);
    let doc = std::fs::read_to_string(&sidecar_path).map_err(|e| Error::io(&sidecar_path, e))?;
    let sidecar: DatasetSidecar = serde_json::from_str(&doc)?;
    let num_classes = sidecar.counts.len();
    let means = class_means(num_classes, sidecar.feature_dim, sidecar.seed);
    let build = |bin: &str, counts: Vec<u64>| -> Result<SyntheticClassDataset> {
        let features = read_f32_bin(&dir.join(bin))?;
        let total: u64 = counts.iter().sum();
        if features.len() != total as usize * sidecar.feature_dim {
            return Err(Error::DimensionMismatch {
                what: "dataset features",
                expected: total as usize * sidecar.feature_dim,
                actual: features.len(),
            });
        }
        let mut labels = Vec::with_capacity(total as usize);
        for (class, &n) in counts.iter().enumerate() {
            labels.extend(std::iter::repeat(class).take(n as usize));
        }
        Ok(SyntheticClassDataset {
            features,
            labels,
            counts,
            class_means: means.clone(),
            feature_dim: sidecar.feature_dim,
            noise_sigma: sidecar.noise_sigma,
        })
    };
    let train = build(TRAIN_BIN_FILE, sidecar.counts.clone())?;
    let test = build(
        TEST_BIN_FILE,
        vec![sidecar.test_per_class; num_classes],
    )?;
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cifar_lt() -> LongTailProfile {
        LongTailProfile::new(100, 500, 200.0).unwrap()
    }

    #[test]
    fn cifar_lt_profile_shape() {
        let counts = cifar_lt().counts().unwrap();
        assert_eq!(counts[0], 500);
        assert_eq!(*counts.last().unwrap(), 2);
        assert_eq!(counts.iter().sum::<u64>(), 9502);
    }

    #[test]
    fn two_class_profile() {
        let counts = LongTailProfile::new(2, 10, 5.0).unwrap().counts().unwrap();
        assert_eq!(counts, vec![10, 2]);
    }

    #[test]
    fn near_balanced_profile_stays_within_one_sample() {
        let counts = LongTailProfile::new(10, 100, 1.0 + 1e-9)
            .unwrap()
            .counts()
            .unwrap();
        assert_eq!(counts[0], 100);
        assert!(counts.iter().all(|&n| n == 100 || n == 99));
    }

    #[test]
    fn zero_count_class_rejected() {
        // Tail would round to floor(10 / 20) = 0.
        let profile = LongTailProfile::new(10, 10, 20.0).unwrap();
        assert!(profile.counts().is_err());
    }

    #[test]
    fn bad_profiles_rejected() {
        assert!(LongTailProfile::new(1, 500, 200.0).is_err());
        assert!(LongTailProfile::new(100, 0, 200.0).is_err());
        assert!(LongTailProfile::new(100, 500, 1.0).is_err());
        assert!(LongTailProfile::new(100, 500, 0.5).is_err());
    }

    #[test]
    fn dataset_is_deterministic_in_seed() {
        let profile = LongTailProfile::new(5, 20, 10.0).unwrap();
        let a = synth_classification_dataset(&profile, 8, 0.5, 42).unwrap();
        let b = synth_classification_dataset(&profile, 8, 0.5, 42).unwrap();
        assert_eq!(a, b);
        let c = synth_classification_dataset(&profile, 8, 0.5, 43).unwrap();
        assert_ne!(a.features()[..8], c.features()[..8]);
    }

    #[test]
    fn dataset_counts_match_profile() {
        let profile = LongTailProfile::new(6, 30, 8.0).unwrap();
        let ds = synth_classification_dataset(&profile, 4, 1.0, 7).unwrap();
        let mut observed = vec![0u64; 6];
        for &l in ds.labels() {
            observed[l] += 1;
        }
        assert_eq!(observed, profile.counts().unwrap());
        assert_eq!(ds.num_samples() * ds.feature_dim(), ds.features().len());
    }

    #[test]
    fn dataset_rejects_bad_noise_and_dim() {
        let profile = LongTailProfile::new(3, 10, 2.0).unwrap();
        assert!(synth_classification_dataset(&profile, 1, 1.0, 0).is_err());
        assert!(synth_classification_dataset(&profile, 8, 0.0, 0).is_err());
        assert!(synth_classification_dataset(&profile, 8, -1.0, 0).is_err());
    }

    #[test]
    fn balanced_split_shares_means() {
        let profile = LongTailProfile::new(4, 50, 10.0).unwrap();
        let train = synth_classification_dataset(&profile, 6, 0.8, 9).unwrap();
        let test = train.balanced_split(7, 9).unwrap();
        assert_eq!(test.counts(), &[7, 7, 7, 7]);
        assert_eq!(test.class_means, train.class_means);
        // Different stream: test features are not a prefix of train features.
        assert_ne!(&test.features()[..6], &train.features()[..6]);
    }

    #[test]
    fn proposal_batches_hit_the_configured_ratio() {
        let table = FrequencyTable::from_single_label_counts(vec![50, 30, 2]).unwrap();
        let config = ProposalStreamConfig {
            batch_size: 512,
            ..ProposalStreamConfig::default()
        };
        let mut stream = synth_proposal_stream(&table, config, 1).unwrap();
        let batch = stream.next_batch();
        assert_eq!(batch.len(), 512);
        let fg = batch.labels.iter().filter(|l| l.is_foreground()).count();
        assert_eq!(fg, 128);
        // Foreground first, then background.
        assert!(batch.labels[..fg].iter().all(|l| l.is_foreground()));
        assert!(batch.labels[fg..].iter().all(|l| !l.is_foreground()));
    }

    #[test]
    fn all_foreground_ratio() {
        let table = FrequencyTable::from_single_label_counts(vec![5, 5]).unwrap();
        let config = ProposalStreamConfig {
            fg_ratio: 1,
            bg_ratio: 0,
            batch_size: 64,
            ..ProposalStreamConfig::default()
        };
        let mut stream = synth_proposal_stream(&table, config, 1).unwrap();
        let batch = stream.next_batch();
        assert!(batch.labels.iter().all(|l| l.is_foreground()));
    }

    #[test]
    fn batch_known_positive_matches_present_categories() {
        let table = FrequencyTable::from_single_label_counts(vec![50, 30, 2, 1]).unwrap();
        let config = ProposalStreamConfig {
            batch_size: 64,
            neg_set_size: 2,
            ..ProposalStreamConfig::default()
        };
        let mut stream = synth_proposal_stream(&table, config, 3).unwrap();
        let batch = stream.next_batch();
        let present: BTreeSet<usize> = batch
            .labels
            .iter()
            .filter_map(|l| l.category())
            .collect();
        for label in &batch.labels {
            assert_eq!(label.known_positive(), &present);
            assert!(label.known_negative().is_disjoint(&present));
        }
    }

    #[test]
    fn foreground_histogram_tracks_counts() {
        let counts = vec![700u64, 200, 100];
        let table = FrequencyTable::from_single_label_counts(counts.clone()).unwrap();
        let config = ProposalStreamConfig {
            fg_ratio: 1,
            bg_ratio: 0,
            batch_size: 1000,
            ..ProposalStreamConfig::default()
        };
        let mut stream = synth_proposal_stream(&table, config, 5).unwrap();
        let mut hist = vec![0u64; 3];
        let draws = 100_000;
        let mut seen = 0;
        while seen < draws {
            let batch = stream.next_batch();
            for l in &batch.labels {
                hist[l.category().unwrap()] += 1;
                seen += 1;
            }
        }
        let total: u64 = counts.iter().sum();
        for c in 0..3 {
            let expected = counts[c] as f64 / total as f64;
            let observed = hist[c] as f64 / seen as f64;
            assert!(
                (observed - expected).abs() < 0.02 * expected.max(0.05),
                "class {c}: observed {observed}, expected {expected}"
            );
        }
    }

    #[test]
    fn proposal_stream_rejects_empty_table() {
        let table = FrequencyTable::from_counts(vec![], 1).unwrap();
        assert!(synth_proposal_stream(&table, ProposalStreamConfig::default(), 0).is_err());
    }

    #[test]
    fn export_and_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let profile = LongTailProfile::new(4, 20, 5.0).unwrap();
        let sidecar =
            export_classification_dataset(&profile, 6, 0.7, 3, 11, dir.path()).unwrap();
        assert_eq!(sidecar.counts, profile.counts().unwrap());
        let (train, test) = load_classification_dataset(dir.path()).unwrap();
        assert_eq!(train.counts(), sidecar.counts.as_slice());
        assert_eq!(test.counts(), &[3, 3, 3, 3]);
        // Loaded features equal the generated ones at f32 precision.
        let original = synth_classification_dataset(&profile, 6, 0.7, 11).unwrap();
        for (a, b) in train.features().iter().zip(original.features()) {
            assert!((a - b).abs() <= (*b as f32).abs() as f64 * 1e-7 + 1e-7);
        }
    }

    #[test]
    fn export_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let profile = LongTailProfile::new(3, 10, 2.0).unwrap();
        export_classification_dataset(&profile, 4, 0.5, 2, 1, dir.path()).unwrap();
        let first = std::fs::read(dir.path().join(TRAIN_BIN_FILE)).unwrap();
        export_classification_dataset(&profile, 4, 0.5, 2, 1, dir.path()).unwrap();
        let second = std::fs::read(dir.path().join(TRAIN_BIN_FILE)).unwrap();
        assert_eq!(first, second);
    }

    proptest! {
        #[test]
        fn profile_counts_nonincreasing_and_scale_consistent(
            c in 2usize..40,
            n_max in 4u64..600,
            log_if in 0.1f64..5.0,
        ) {
            let profile = LongTailProfile::new(c, n_max, log_if.exp()).unwrap();
            if let Ok(counts) = profile.counts() {
                prop_assert_eq!(counts[0], n_max);
                for w in counts.windows(2) {
                    prop_assert!(w[1] <= w[0]);
                }
                let doubled = LongTailProfile::new(c, 2 * n_max, log_if.exp()).unwrap();
                if let Ok(big) = doubled.counts() {
                    for (small, big) in counts.iter().zip(big) {
                        prop_assert!(big == 2 * small || big == 2 * small + 1);
                    }
                }
            }
        }

        #[test]
        fn proposal_labels_stay_in_range(
            counts in prop::collection::vec(1u64..100, 2..10),
            seed in 0u64..50,
        ) {
            let n = counts.len();
            let table = FrequencyTable::from_single_label_counts(counts).unwrap();
            let config = ProposalStreamConfig { batch_size: 32, ..Default::default() };
            let mut stream = synth_proposal_stream(&table, config, seed).unwrap();
            let batch = stream.next_batch();
            for l in &batch.labels {
                if let Some(c) = l.category() {
                    prop_assert!(c < n);
                }
            }
        }
    }
}
