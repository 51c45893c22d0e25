//! Datasets: features, labels, class embeddings and their splits.
//!
//! Labels of the test-novel split and the features of the unlabeled pool are
//! only reachable through [`AccessGuard`]-counted accessors. Training code
//! never calls them except for the unlabeled pool in transductive mode, and
//! tests seal them to prove it.

mod format;
mod synthetic;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use format::{
    convert_csv, load_dataset, matrix_from_bytes, matrix_to_bytes, read_csv_matrix, read_matrix,
    write_matrix, Dims, Manifest, MATRIX_MAGIC,
};
pub use synthetic::{make_synthetic, SyntheticDataset, SyntheticSpec};

use crate::error::DataError;
use crate::rng;
use crate::tensor::Tensor;

/// Index sets into the rows of a dataset. All sets are pairwise disjoint.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    /// Labeled seen-class training rows.
    pub train_seen: Vec<usize>,
    /// Labeled seen-class rows held out for early stopping.
    #[serde(default)]
    pub val_seen: Vec<usize>,
    pub test_seen: Vec<usize>,
    pub test_novel: Vec<usize>,
    /// Unlabeled pool used only in transductive training.
    #[serde(default)]
    pub unlabeled: Vec<usize>,
    /// Few-shot labeled novel-class rows (empty in zero-shot settings).
    #[serde(default)]
    pub train_novel: Vec<usize>,
}

impl SplitSpec {
    fn named(&self) -> [(&'static str, &Vec<usize>); 6] {
        [
            ("train_seen", &self.train_seen),
            ("val_seen", &self.val_seen),
            ("test_seen", &self.test_seen),
            ("test_novel", &self.test_novel),
            ("unlabeled", &self.unlabeled),
            ("train_novel", &self.train_novel),
        ]
    }

    /// Checks disjointness and range.
    pub fn validate(&self, num_rows: usize) -> Result<(), DataError> {
        let mut owner: BTreeMap<usize, &'static str> = BTreeMap::new();
        for (name, set) in self.named() {
            for &i in set {
                if i >= num_rows {
                    return Err(DataError::InvalidSplit(format!(
                        "{name} index {i} outside 0..{num_rows}"
                    )));
                }
                if let Some(prev) = owner.insert(i, name) {
                    return Err(DataError::InvalidSplit(format!(
                        "row {i} appears in both {prev} and {name}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Counts and optionally forbids reads of the guarded views.
#[derive(Debug, Default)]
pub struct AccessGuard {
    unlabeled_reads: AtomicUsize,
    test_novel_label_reads: AtomicUsize,
    unlabeled_sealed: AtomicBool,
    test_novel_sealed: AtomicBool,
}

impl AccessGuard {
    pub fn unlabeled_reads(&self) -> usize {
        self.unlabeled_reads.load(Ordering::SeqCst)
    }

    pub fn test_novel_label_reads(&self) -> usize {
        self.test_novel_label_reads.load(Ordering::SeqCst)
    }

    /// Makes every later read of the unlabeled pool fail.
    pub fn seal_unlabeled(&self, sealed: bool) {
        self.unlabeled_sealed.store(sealed, Ordering::SeqCst);
    }

    /// Makes every later read of test-novel labels fail.
    pub fn seal_test_novel(&self, sealed: bool) {
        self.test_novel_sealed.store(sealed, Ordering::SeqCst);
    }

    fn read_unlabeled(&self) -> Result<(), DataError> {
        if self.unlabeled_sealed.load(Ordering::SeqCst) {
            return Err(DataError::AccessDenied("the unlabeled pool"));
        }
        self.unlabeled_reads.fetch_add(1, Ordering::SeqCst);
        Ok(())
    }

    fn read_test_novel(&self) -> Result<(), DataError> {
        if self.test_novel_sealed.load(Ordering::SeqCst) {
            return Err(DataError::AccessDenied("test-novel labels"));
        }
        self.test_novel_label_reads.fetch_add(1, Ordering::SeqCst);
        Ok(())
    }
}

/// Features with their class ids.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSet {
    pub features: Tensor,
    pub labels: Vec<usize>,
}

impl LabeledSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Per-dimension affine map from raw features into `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RescaleMap {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl RescaleMap {
    /// Fits the map on `reference` rows of `features`.
    pub fn fit(features: &Tensor, reference: &[usize]) -> Result<Self, DataError> {
        if reference.is_empty() {
            return Err(DataError::EmptyReference);
        }
        let d = features.cols();
        let mut min = vec![f64::INFINITY; d];
        let mut max = vec![f64::NEG_INFINITY; d];
        for &r in reference {
            for (j, &v) in features.row(r).iter().enumerate() {
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        Ok(Self { min, max })
    }

    /// Constant reference dimensions map to 0.5; values outside the
    /// reference range are clamped.
    pub fn apply(&self, features: &Tensor) -> Tensor {
        let d = self.min.len();
        let mut out = features.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let j = i % d;
            let (lo, hi) = (self.min[j], self.max[j]);
            *v = if hi > lo {
                ((*v - lo) / (hi - lo)).clamp(0.0, 1.0)
            } else {
                0.5
            };
        }
        out
    }
}

/// Min-max rescales every column to `[0, 1]` using statistics of the
/// `reference` rows.
pub fn rescale_01(features: &Tensor, reference: &[usize]) -> Result<Tensor, DataError> {
    Ok(RescaleMap::fit(features, reference)?.apply(features))
}

#[derive(Debug, Clone)]
pub struct Dataset {
    features: Tensor,
    labels: Vec<usize>,
    class_embeddings: Tensor,
    seen_classes: Vec<usize>,
    novel_classes: Vec<usize>,
    splits: SplitSpec,
    guard: Arc<AccessGuard>,
}

impl Dataset {
    /// Validates and assembles a dataset. Features are used as given; see
    /// [`Dataset::rescaled`].
    pub fn new(
        features: Tensor,
        labels: Vec<usize>,
        class_embeddings: Tensor,
        seen_classes: Vec<usize>,
        novel_classes: Vec<usize>,
        splits: SplitSpec,
    ) -> Result<Self, DataError> {
        let t = features.rows();
        if features.rank() != 2 || labels.len() != t {
            return Err(DataError::DimMismatch {
                what: "labels".into(),
                expected: t.to_string(),
                found: labels.len().to_string(),
            });
        }
        let k = class_embeddings.rows();
        if let Some((row, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
            return Err(DataError::LabelOutOfRange {
                row,
                label: l as f64,
                num_classes: k,
            });
        }
        let seen: BTreeSet<usize> = seen_classes.iter().copied().collect();
        let novel: BTreeSet<usize> = novel_classes.iter().copied().collect();
        if seen.len() != seen_classes.len() || novel.len() != novel_classes.len() {
            return Err(DataError::InvalidSplit("duplicate class ids".into()));
        }
        if let Some(c) = seen.intersection(&novel).next() {
            return Err(DataError::InvalidSplit(format!(
                "class {c} is both seen and novel"
            )));
        }
        if let Some(&c) = seen.iter().chain(&novel).find(|&&c| c >= k) {
            return Err(DataError::InvalidSplit(format!(
                "class {c} has no embedding row"
            )));
        }
        splits.validate(t)?;
        let check = |name: &str, set: &[usize], allowed: &BTreeSet<usize>| {
            match set.iter().find(|&&i| !allowed.contains(&labels[i])) {
                Some(&i) => Err(DataError::InvalidSplit(format!(
                    "{name} row {i} has label {} outside its class set",
                    labels[i]
                ))),
                None => Ok(()),
            }
        };
        check("train_seen", &splits.train_seen, &seen)?;
        check("val_seen", &splits.val_seen, &seen)?;
        check("test_seen", &splits.test_seen, &seen)?;
        check("test_novel", &splits.test_novel, &novel)?;
        check("train_novel", &splits.train_novel, &novel)?;
        Ok(Self {
            features,
            labels,
            class_embeddings,
            seen_classes,
            novel_classes,
            splits,
            guard: Arc::default(),
        })
    }

    /// Returns a copy with features rescaled on the train-seen rows.
    pub fn rescaled(mut self) -> Result<Self, DataError> {
        self.features = rescale_01(&self.features, &self.splits.train_seen)?;
        Ok(self)
    }

    /// The same data under different splits. The access guard is shared.
    pub fn with_splits(&self, splits: SplitSpec) -> Result<Self, DataError> {
        let mut d = Dataset::new(
            self.features.clone(),
            self.labels.clone(),
            self.class_embeddings.clone(),
            self.seen_classes.clone(),
            self.novel_classes.clone(),
            splits,
        )?;
        d.guard = Arc::clone(&self.guard);
        Ok(d)
    }

    /// A copy with its own, unsealed access guard and zeroed counters.
    pub fn with_new_guard(&self) -> Self {
        let mut d = self.clone();
        d.guard = Arc::default();
        d
    }

    pub fn d_x(&self) -> usize {
        self.features.cols()
    }

    pub fn d_c(&self) -> usize {
        self.class_embeddings.cols()
    }

    pub fn num_rows(&self) -> usize {
        self.features.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.class_embeddings.rows()
    }

    pub fn seen_classes(&self) -> &[usize] {
        &self.seen_classes
    }

    pub fn novel_classes(&self) -> &[usize] {
        &self.novel_classes
    }

    pub fn class_embeddings(&self) -> &Tensor {
        &self.class_embeddings
    }

    /// Embedding rows `c(y)` for each label.
    pub fn embeddings_for(&self, labels: &[usize]) -> Tensor {
        self.class_embeddings.select_rows(labels)
    }

    pub fn splits(&self) -> &SplitSpec {
        &self.splits
    }

    pub fn guard(&self) -> &AccessGuard {
        &self.guard
    }

    fn labeled(&self, rows: &[usize]) -> LabeledSet {
        LabeledSet {
            features: self.features.select_rows(rows),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Labeled training rows: train-seen followed by few-shot novel rows.
    pub fn labeled_train(&self) -> LabeledSet {
        let rows: Vec<usize> = self
            .splits
            .train_seen
            .iter()
            .chain(&self.splits.train_novel)
            .copied()
            .collect();
        self.labeled(&rows)
    }

    pub fn validation(&self) -> LabeledSet {
        self.labeled(&self.splits.val_seen)
    }

    pub fn test_seen(&self) -> LabeledSet {
        self.labeled(&self.splits.test_seen)
    }

    /// Guarded: test-novel features and labels, for evaluation only.
    pub fn test_novel(&self) -> Result<LabeledSet, DataError> {
        self.guard.read_test_novel()?;
        Ok(self.labeled(&self.splits.test_novel))
    }

    /// Guarded: unlabeled pool features, for transductive training only.
    pub fn unlabeled_features(&self) -> Result<Tensor, DataError> {
        self.guard.read_unlabeled()?;
        Ok(self.features.select_rows(&self.splits.unlabeled))
    }

    pub fn has_unlabeled(&self) -> bool {
        !self.splits.unlabeled.is_empty()
    }

    pub(crate) fn raw_features(&self) -> &Tensor {
        &self.features
    }

    pub(crate) fn raw_labels(&self) -> &[usize] {
        &self.labels
    }
}

/// Promotes exactly `n` samples of every novel class to the labeled
/// training set.
///
/// Samples come from the unlabeled pool when it is nonempty, otherwise from
/// test-novel, so the evaluation split stays fixed in the usual setup.
pub fn nshot_subsample(dataset: &Dataset, n: usize, seed: u64) -> Result<SplitSpec, DataError> {
    let mut splits = dataset.splits().clone();
    let from_pool = !splits.unlabeled.is_empty();
    let source = if from_pool {
        &splits.unlabeled
    } else {
        &splits.test_novel
    };
    let labels = dataset.raw_labels();
    let mut rng = rng::substream(seed, "nshot");
    let mut chosen: BTreeSet<usize> = BTreeSet::new();
    for &class in dataset.novel_classes() {
        let mut candidates: Vec<usize> = source
            .iter()
            .copied()
            .filter(|&i| labels[i] == class)
            .collect();
        if candidates.len() < n {
            return Err(DataError::InsufficientSamples {
                class,
                available: candidates.len(),
                requested: n,
            });
        }
        candidates.shuffle(&mut rng);
        candidates.truncate(n);
        candidates.sort_unstable();
        chosen.extend(&candidates);
        splits.train_novel.extend(candidates);
    }
    let keep = |set: &mut Vec<usize>| set.retain(|i| !chosen.contains(i));
    if from_pool {
        keep(&mut splits.unlabeled);
    } else {
        keep(&mut splits.test_novel);
    }
    Ok(splits)
}
