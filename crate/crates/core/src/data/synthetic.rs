//! Class-conditional synthetic features for desk-scale experiments.
//!
//! Class `y` has embedding `c(y) ~ U[0,1]^d_c` and mean
//! `mu_y = sigmoid(A c(y))`; its samples are `mu_y + sigma_f * N(0, I)`
//! clamped to `[0, 1]`. Classes `0..n_seen` are seen, the rest novel.
//! Novel-class samples only ever land in the unlabeled pool and test-novel.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, LabeledSet, RescaleMap, SplitSpec};
use crate::error::DataError;
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_seen: usize,
    pub n_novel: usize,
    pub d_x: usize,
    pub d_c: usize,
    pub samples_per_class: usize,
    /// Explicit `d_x x d_c` mixing matrix; drawn from the seed when absent.
    pub mixing: Option<Vec<Vec<f64>>>,
    /// Entries of a drawn mixing matrix are `N(0, (mixing_scale^2) / d_c)`.
    pub mixing_scale: f64,
    /// Per-coordinate noise standard deviation `sigma_f`.
    pub noise: f64,
    pub seed: u64,
    pub test_seen_fraction: f64,
    pub val_seen_fraction: f64,
    /// Share of each novel class placed in the unlabeled pool; the rest is
    /// test-novel.
    pub unlabeled_fraction: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_seen: 20,
            n_novel: 5,
            d_x: 32,
            d_c: 16,
            samples_per_class: 100,
            mixing: None,
            mixing_scale: 4.0,
            noise: 0.2,
            seed: 0,
            test_seen_fraction: 0.2,
            val_seen_fraction: 0.1,
            unlabeled_fraction: 0.5,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |field, reason: &str| {
            Err(DataError::InvalidSpec {
                field,
                reason: reason.to_string(),
            })
        };
        for (field, v) in [
            ("n_seen", self.n_seen),
            ("n_novel", self.n_novel),
            ("d_x", self.d_x),
            ("d_c", self.d_c),
        ] {
            if v == 0 {
                return bad(field, "must be at least 1");
            }
        }
        if self.d_x > u32::MAX as usize {
            return bad("d_x", "too large for the matrix format");
        }
        if self.samples_per_class < 2 {
            return bad("samples_per_class", "must be at least 2");
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return bad("noise", "must be finite and non-negative");
        }
        if !(self.mixing_scale.is_finite() && self.mixing_scale >= 0.0) {
            return bad("mixing_scale", "must be finite and non-negative");
        }
        for (field, f) in [
            ("test_seen_fraction", self.test_seen_fraction),
            ("val_seen_fraction", self.val_seen_fraction),
            ("unlabeled_fraction", self.unlabeled_fraction),
        ] {
            if !(0.0..1.0).contains(&f) {
                return bad(field, "must lie in [0, 1)");
            }
        }
        let (n_test, _, n_train) = self.seen_counts();
        if n_train == 0 || n_test == 0 {
            return bad("samples_per_class", "leaves no train or test samples per seen class");
        }
        let n_unl = self.unlabeled_count();
        if n_unl == 0 || n_unl >= self.samples_per_class {
            return bad(
                "unlabeled_fraction",
                "must leave both unlabeled and test samples per novel class",
            );
        }
        if let Some(m) = &self.mixing {
            if m.len() != self.d_x || m.iter().any(|r| r.len() != self.d_c) {
                return bad("mixing", "must be a d_x x d_c matrix");
            }
            if m.iter().flatten().any(|v| !v.is_finite()) {
                return bad("mixing", "entries must be finite");
            }
        }
        Ok(())
    }

    fn seen_counts(&self) -> (usize, usize, usize) {
        let n = self.samples_per_class;
        let n_test = (n as f64 * self.test_seen_fraction).round() as usize;
        let n_val = (n as f64 * self.val_seen_fraction).round() as usize;
        (n_test, n_val, n.saturating_sub(n_test + n_val))
    }

    fn unlabeled_count(&self) -> usize {
        (self.samples_per_class as f64 * self.unlabeled_fraction).round() as usize
    }

    pub fn num_classes(&self) -> usize {
        self.n_seen + self.n_novel
    }
}

/// A generated dataset together with its ground truth.
#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    pub dataset: Dataset,
    /// Noise-free class means in the rescaled feature space.
    pub class_means: Tensor,
    pub mixing: Tensor,
}

impl SyntheticDataset {
    /// Per-class top-1 of the nearest-class-mean rule restricted to
    /// `classes`. With isotropic noise this is the Bayes classifier up to the
    /// clamping at the unit-cube boundary.
    pub fn nearest_mean_top1(&self, set: &LabeledSet, classes: &[usize]) -> f64 {
        let predictions: Vec<usize> = (0..set.len())
            .map(|i| {
                let x = set.features.row(i);
                let mut best = (f64::INFINITY, usize::MAX);
                for &c in classes {
                    let d: f64 = self
                        .class_means
                        .row(c)
                        .iter()
                        .zip(x)
                        .map(|(m, v)| (m - v) * (m - v))
                        .sum();
                    if d < best.0 {
                        best = (d, c);
                    }
                }
                best.1
            })
            .collect();
        crate::anyshot::mean_per_class_accuracy(&predictions, &set.labels)
    }
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

pub fn make_synthetic(spec: &SyntheticSpec) -> Result<SyntheticDataset, DataError> {
    spec.validate()?;
    let mut rng = rng::substream(spec.seed, "data");
    let k = spec.num_classes();
    let (d_x, d_c) = (spec.d_x, spec.d_c);

    let embeddings = Tensor::new(
        vec![k, d_c],
        (0..k * d_c).map(|_| rng.random::<f64>()).collect(),
    )
    .expect("embedding shape");
    let mixing = match &spec.mixing {
        Some(rows) => Tensor::from_rows(rows).map_err(|e| DataError::Format(e.to_string()))?,
        None => {
            let sd = spec.mixing_scale / (d_c as f64).sqrt();
            Tensor::new(
                vec![d_x, d_c],
                (0..d_x * d_c)
                    .map(|_| {
                        let v: f64 = StandardNormal.sample(&mut rng);
                        sd * v
                    })
                    .collect(),
            )
            .expect("mixing shape")
        }
    };
    let mut means = Vec::with_capacity(k * d_x);
    for y in 0..k {
        let c = embeddings.row(y);
        for i in 0..d_x {
            let a: f64 = mixing.row(i).iter().zip(c).map(|(a, c)| a * c).sum();
            means.push(sigmoid(a));
        }
    }
    let means = Tensor::new(vec![k, d_x], means).expect("mean shape");

    let n = spec.samples_per_class;
    let mut features = Vec::with_capacity(k * n * d_x);
    let mut labels = Vec::with_capacity(k * n);
    for y in 0..k {
        for _ in 0..n {
            for &m in means.row(y) {
                let noise: f64 = StandardNormal.sample(&mut rng);
                features.push((m + spec.noise * noise).clamp(0.0, 1.0));
            }
            labels.push(y);
        }
    }
    let raw = Tensor::new(vec![k * n, d_x], features).expect("feature shape");

    let (n_test, n_val, _) = spec.seen_counts();
    let n_unl = spec.unlabeled_count();
    let mut splits = SplitSpec::default();
    for y in 0..k {
        let mut rows: Vec<usize> = (y * n..(y + 1) * n).collect();
        rows.shuffle(&mut rng);
        if y < spec.n_seen {
            splits.test_seen.extend(&rows[..n_test]);
            splits.val_seen.extend(&rows[n_test..n_test + n_val]);
            splits.train_seen.extend(&rows[n_test + n_val..]);
        } else {
            splits.unlabeled.extend(&rows[..n_unl]);
            splits.test_novel.extend(&rows[n_unl..]);
        }
    }
    for set in [
        &mut splits.train_seen,
        &mut splits.val_seen,
        &mut splits.test_seen,
        &mut splits.unlabeled,
        &mut splits.test_novel,
    ] {
        set.sort_unstable();
    }

    let map = RescaleMap::fit(&raw, &splits.train_seen)?;
    let dataset = Dataset::new(
        map.apply(&raw),
        labels,
        embeddings,
        (0..spec.n_seen).collect(),
        (spec.n_seen..k).collect(),
        splits,
    )?;
    Ok(SyntheticDataset {
        dataset,
        class_means: map.apply(&means),
        mixing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(noise: f64, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            n_seen: 4,
            n_novel: 2,
            d_x: 6,
            d_c: 3,
            samples_per_class: 20,
            noise,
            seed,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn default_shape() {
        let s = make_synthetic(&SyntheticSpec::default()).unwrap();
        let d = &s.dataset;
        assert_eq!((d.num_rows(), d.d_x(), d.d_c(), d.num_classes()), (2500, 32, 16, 25));
        assert_eq!(d.splits().train_seen.len(), 20 * 70);
        assert_eq!(d.splits().val_seen.len(), 20 * 10);
        assert_eq!(d.splits().test_seen.len(), 20 * 20);
        assert_eq!(d.splits().unlabeled.len(), 5 * 50);
        assert_eq!(d.splits().test_novel.len(), 5 * 50);
        assert!(d.raw_features().data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn novel_samples_stay_out_of_labeled_splits() {
        let s = make_synthetic(&small(0.1, 3)).unwrap();
        let d = &s.dataset;
        let labels = d.raw_labels();
        for &i in d.splits().unlabeled.iter().chain(&d.splits().test_novel) {
            assert!(labels[i] >= 4);
        }
        for &i in d.splits().train_seen.iter().chain(&d.splits().test_seen) {
            assert!(labels[i] < 4);
        }
    }

    #[test]
    fn zero_noise_collapses_each_class_to_its_mean() {
        let s = make_synthetic(&small(0.0, 1)).unwrap();
        let d = &s.dataset;
        for (i, &y) in d.raw_labels().iter().enumerate() {
            for (a, b) in d.raw_features().row(i).iter().zip(s.class_means.row(y)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        let test = d.test_novel().unwrap();
        assert_eq!(s.nearest_mean_top1(&test, d.novel_classes()), 1.0);
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = make_synthetic(&small(0.2, 9)).unwrap().dataset;
        let b = make_synthetic(&small(0.2, 9)).unwrap().dataset;
        assert_eq!(a.raw_features(), b.raw_features());
        assert_eq!(a.splits(), b.splits());
        let c = make_synthetic(&small(0.2, 10)).unwrap().dataset;
        assert_ne!(a.raw_features(), c.raw_features());
    }

    #[test]
    fn invalid_specs_name_the_field() {
        let spec = SyntheticSpec {
            d_x: 0,
            ..SyntheticSpec::default()
        };
        match spec.validate() {
            Err(DataError::InvalidSpec { field, .. }) => assert_eq!(field, "d_x"),
            other => panic!("unexpected {other:?}"),
        }
        let spec = SyntheticSpec {
            mixing: Some(vec![vec![0.0; 3]; 2]),
            ..SyntheticSpec::default()
        };
        assert!(spec.validate().is_err());
    }
}
