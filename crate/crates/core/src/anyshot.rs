//! Feature synthesis, softmax classifiers and the any-shot protocols.
//!
//! Accuracies are per-class averaged: accuracy is computed within each class
//! and then averaged uniformly over classes, so rare classes count as much
//! as frequent ones.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamId, Parameter};
use crate::data::{Dataset, LabeledSet};
use crate::error::{Error, Result};
use crate::models::GeneratorNet;
use crate::rng::{self, Rng};
use crate::tensor::Tensor;
use crate::training::{adam_step, AdamConfig, AdamState, Mode, Variant};

/// Default number of synthetic features per class.
pub const DEFAULT_SYNTHETIC_PER_CLASS: usize = 300;

/// Anything that can emit features for a class embedding.
pub trait FeatureSource {
    /// Returns `n_per_class` rows for every class in `classes`, grouped by
    /// class in the given order.
    fn synthesize(
        &self,
        embeddings: &Tensor,
        classes: &[usize],
        n_per_class: usize,
        rng: &mut Rng,
    ) -> Result<LabeledSet>;
}

fn check_classes(embeddings: &Tensor, classes: &[usize]) -> Result<()> {
    match classes.iter().find(|&&c| c >= embeddings.rows()) {
        Some(&c) => Err(Error::UnknownClass(c)),
        None => Ok(()),
    }
}

fn repeated_labels(classes: &[usize], n: usize) -> Vec<usize> {
    classes
        .iter()
        .flat_map(|&c| std::iter::repeat_n(c, n))
        .collect()
}

impl FeatureSource for GeneratorNet {
    fn synthesize(
        &self,
        embeddings: &Tensor,
        classes: &[usize],
        n_per_class: usize,
        rng: &mut Rng,
    ) -> Result<LabeledSet> {
        check_classes(embeddings, classes)?;
        let labels = repeated_labels(classes, n_per_class);
        if labels.is_empty() {
            return Ok(LabeledSet {
                features: Tensor::zeros(&[0, self.d_x()]),
                labels,
            });
        }
        let z = rng::normal_matrix(rng, labels.len(), self.d_z());
        let c = embeddings.select_rows(&labels);
        Ok(LabeledSet {
            features: self.generate_tensor(&z, &c)?,
            labels,
        })
    }
}

/// Emits the true class means plus isotropic Gaussian noise, clamped to
/// `[0, 1]`. A stand-in for a perfectly trained generator.
#[derive(Clone, Debug)]
pub struct MeanOracle {
    pub means: Tensor,
    pub noise: f64,
}

impl FeatureSource for MeanOracle {
    fn synthesize(
        &self,
        embeddings: &Tensor,
        classes: &[usize],
        n_per_class: usize,
        rng: &mut Rng,
    ) -> Result<LabeledSet> {
        check_classes(embeddings, classes)?;
        check_classes(&self.means, classes)?;
        let labels = repeated_labels(classes, n_per_class);
        let eps = rng::normal_matrix(rng, labels.len(), self.means.cols());
        let mut features = self.means.select_rows(&labels);
        for (v, e) in features.data_mut().iter_mut().zip(eps.data()) {
            *v = (*v + self.noise * e).clamp(0.0, 1.0);
        }
        Ok(LabeledSet { features, labels })
    }
}

/// `n_per_class` features per class from the `eval` substream of `seed`.
pub fn synthesize_features<S: FeatureSource + ?Sized>(
    source: &S,
    embeddings: &Tensor,
    classes: &[usize],
    n_per_class: usize,
    seed: u64,
) -> Result<LabeledSet> {
    let mut rng = rng::substream(seed, "eval");
    source.synthesize(embeddings, classes, n_per_class, &mut rng)
}

/// Stacks labeled sets with equal feature width.
pub fn concat_sets(parts: &[&LabeledSet]) -> Result<LabeledSet> {
    let parts: Vec<&LabeledSet> = parts.iter().copied().filter(|p| !p.is_empty()).collect();
    if parts.is_empty() {
        return Err(Error::Contract("no training samples".into()));
    }
    let feats: Vec<&Tensor> = parts.iter().map(|p| &p.features).collect();
    Ok(LabeledSet {
        features: Tensor::vstack(&feats)?,
        labels: parts.iter().flat_map(|p| p.labels.iter().copied()).collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SoftmaxConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Training stops once the loss improves by less than this for
    /// `plateau_patience` consecutive epochs.
    pub plateau_tolerance: f64,
    pub plateau_patience: usize,
}

impl Default for SoftmaxConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            learning_rate: 1e-2,
            plateau_tolerance: 1e-6,
            plateau_patience: 10,
        }
    }
}

/// Linear softmax classifier over a sorted set of class ids.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftmaxClassifier {
    classes: Vec<usize>,
    /// `num_classes x d_x`.
    pub weight: Tensor,
    pub bias: Tensor,
}

impl SoftmaxClassifier {
    pub fn zeros(classes: &[usize], d_x: usize) -> Self {
        let mut classes = classes.to_vec();
        classes.sort_unstable();
        classes.dedup();
        let k = classes.len();
        Self {
            classes,
            weight: Tensor::zeros(&[k, d_x]),
            bias: Tensor::zeros(&[k]),
        }
    }

    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    /// Affine class scores, one column per entry of [`classes`](Self::classes).
    pub fn scores(&self, x: &Tensor) -> Result<Tensor> {
        let mut s = crate::tensor::matmul(x, &self.weight, false, true)?;
        let k = self.classes.len();
        for (i, v) in s.data_mut().iter_mut().enumerate() {
            *v += self.bias.data()[i % k];
        }
        Ok(s)
    }

    fn allowed(&self, restrict: Option<&[usize]>) -> Vec<bool> {
        match restrict {
            None => vec![true; self.classes.len()],
            Some(r) => self.classes.iter().map(|c| r.contains(c)).collect(),
        }
    }

    /// Highest-scoring classes per row, best first. Ties go to the lower
    /// class id.
    pub fn top_k(
        &self,
        x: &Tensor,
        k: usize,
        restrict: Option<&[usize]>,
    ) -> Result<Vec<Vec<usize>>> {
        let scores = self.scores(x)?;
        let allowed = self.allowed(restrict);
        Ok((0..x.rows())
            .map(|i| {
                let row = scores.row(i);
                let mut idx: Vec<usize> = (0..row.len()).filter(|&j| allowed[j]).collect();
                // Stable sort keeps ascending class order among equal scores.
                idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]));
                idx.truncate(k);
                idx.into_iter().map(|j| self.classes[j]).collect()
            })
            .collect())
    }

    pub fn predict(&self, x: &Tensor, restrict: Option<&[usize]>) -> Result<Vec<usize>> {
        let scores = self.scores(x)?;
        let allowed = self.allowed(restrict);
        Ok((0..x.rows())
            .map(|i| {
                let mut best: Option<(f64, usize)> = None;
                for (j, &s) in scores.row(i).iter().enumerate() {
                    if allowed[j] && best.is_none_or(|(b, _)| s > b) {
                        best = Some((s, j));
                    }
                }
                best.map_or(usize::MAX, |(_, j)| self.classes[j])
            })
            .collect())
    }
}

/// Minimizes mean cross-entropy with full-batch Adam from a zero
/// initialization. Every listed class needs at least one sample.
pub fn train_softmax(
    set: &LabeledSet,
    classes: &[usize],
    config: &SoftmaxConfig,
) -> Result<SoftmaxClassifier> {
    let mut clf = SoftmaxClassifier::zeros(classes, set.features.cols());
    let index: BTreeMap<usize, usize> = clf
        .classes
        .iter()
        .enumerate()
        .map(|(j, &c)| (c, j))
        .collect();
    let mut targets = Vec::with_capacity(set.len());
    for &l in &set.labels {
        targets.push(*index.get(&l).ok_or(Error::UnknownClass(l))?);
    }
    let present: BTreeSet<usize> = set.labels.iter().copied().collect();
    if let Some(&c) = clf.classes.iter().find(|c| !present.contains(c)) {
        return Err(Error::EmptyClass(c));
    }
    let mut w = Parameter::new(ParamId(0), "softmax.weight", clf.weight.clone());
    let mut b = Parameter::new(ParamId(1), "softmax.bias", clf.bias.clone());
    let adam = AdamConfig {
        learning_rate: config.learning_rate,
        ..AdamConfig::default()
    };
    let mut state = AdamState::default();
    let mut prev = f64::INFINITY;
    let mut flat = 0;
    for _ in 0..config.epochs {
        let mut g = Graph::new();
        let x = g.constant(set.features.clone());
        let wv = g.param(&w);
        let bv = g.param(&b);
        let logits = g.matmul_t(x, wv, false, true)?;
        let logits = g.add_bias(logits, bv)?;
        let loss = g.softmax_cross_entropy(logits, &targets)?;
        let value = g.scalar(loss)?;
        let grads = g.backward(loss)?;
        for p in [&mut w, &mut b] {
            p.zero_grad();
            p.accumulate(&grads);
        }
        adam_step(&mut [&mut w, &mut b], &mut state, &adam)?;
        if prev - value < config.plateau_tolerance {
            flat += 1;
            if flat >= config.plateau_patience {
                break;
            }
        } else {
            flat = 0;
        }
        prev = value;
    }
    clf.weight = w.value;
    clf.bias = b.value;
    Ok(clf)
}

/// Per-class accuracies and their uniform mean.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub per_class: BTreeMap<usize, f64>,
    pub mean: f64,
}

fn class_accuracy(hits: impl Iterator<Item = (usize, bool)>) -> ClassAccuracy {
    let mut counts: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (label, hit) in hits {
        let e = counts.entry(label).or_default();
        e.0 += usize::from(hit);
        e.1 += 1;
    }
    let per_class: BTreeMap<usize, f64> = counts
        .into_iter()
        .map(|(c, (h, n))| (c, h as f64 / n as f64))
        .collect();
    let mean = if per_class.is_empty() {
        0.0
    } else {
        per_class.values().sum::<f64>() / per_class.len() as f64
    };
    ClassAccuracy { per_class, mean }
}

/// Mean over the classes present in `labels` of within-class accuracy.
pub fn mean_per_class_accuracy(predictions: &[usize], labels: &[usize]) -> f64 {
    class_accuracy(
        labels
            .iter()
            .zip(predictions)
            .map(|(&l, &p)| (l, l == p)),
    )
    .mean
}

fn check_restrict(set: &LabeledSet, restrict: Option<&[usize]>) -> Result<()> {
    let Some(r) = restrict else { return Ok(()) };
    if let Some(&l) = set.labels.iter().find(|l| !r.contains(l)) {
        return Err(Error::Contract(format!(
            "label {l} lies outside the restricted class set"
        )));
    }
    let present: BTreeSet<usize> = set.labels.iter().copied().collect();
    for c in r.iter().filter(|c| !present.contains(c)) {
        log::warn!("class {c} has no evaluation samples and is excluded from the mean");
    }
    Ok(())
}

/// Per-class top-1 accuracy. With `restrict`, predictions are limited to
/// that class set and every label must belong to it.
pub fn per_class_top1(
    clf: &SoftmaxClassifier,
    set: &LabeledSet,
    restrict: Option<&[usize]>,
) -> Result<ClassAccuracy> {
    check_restrict(set, restrict)?;
    let pred = clf.predict(&set.features, restrict)?;
    Ok(class_accuracy(
        set.labels.iter().zip(&pred).map(|(&l, &p)| (l, l == p)),
    ))
}

/// Per-class top-k accuracy.
pub fn per_class_top_k(
    clf: &SoftmaxClassifier,
    set: &LabeledSet,
    k: usize,
    restrict: Option<&[usize]>,
) -> Result<ClassAccuracy> {
    check_restrict(set, restrict)?;
    let top = clf.top_k(&set.features, k, restrict)?;
    Ok(class_accuracy(
        set.labels
            .iter()
            .zip(&top)
            .map(|(&l, t)| (l, t.contains(&l))),
    ))
}

/// `2us / (u + s)`, or 0 when both are 0.
pub fn harmonic_mean(u: f64, s: f64) -> f64 {
    if u + s <= 0.0 {
        0.0
    } else {
        2.0 * u * s / (u + s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Zsl,
    Gzsl,
    Fsl,
    Gfsl,
}

impl Protocol {
    pub fn generalized(self) -> bool {
        matches!(self, Protocol::Gzsl | Protocol::Gfsl)
    }

    pub fn few_shot(self) -> bool {
        matches!(self, Protocol::Fsl | Protocol::Gfsl)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub protocol: Protocol,
    /// Synthetic features per novel class.
    pub synthetic_per_class: usize,
    /// Also synthesize this many features per seen class in the generalized
    /// protocols.
    pub synthetic_seen_per_class: usize,
    /// Report per-class top-k accuracy on novel classes as well.
    pub top_k: Option<usize>,
    pub softmax: SoftmaxConfig,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            protocol: Protocol::Zsl,
            synthetic_per_class: DEFAULT_SYNTHETIC_PER_CLASS,
            synthetic_seen_per_class: 0,
            top_k: None,
            softmax: SoftmaxConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: Protocol,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub variant: Option<Variant>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mode: Option<Mode>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub shots: Option<usize>,
    pub per_class_acc: BTreeMap<usize, f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub t1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub u: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub h: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub top_k: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub k: Option<usize>,
}

impl EvalReport {
    /// `class,accuracy` rows in class order.
    pub fn per_class_csv(&self) -> String {
        let mut out = String::from("class,accuracy\n");
        for (c, a) in &self.per_class_acc {
            let _ = writeln!(out, "{c},{a}");
        }
        out
    }

    /// Headline number: `t1` for the plain protocols, `h` for the
    /// generalized ones.
    pub fn headline(&self) -> f64 {
        self.t1.or(self.h).unwrap_or(0.0)
    }
}

fn shots_per_novel_class(dataset: &Dataset) -> Result<Option<usize>> {
    let train = dataset.labeled_train();
    let novel: BTreeSet<usize> = dataset.novel_classes().iter().copied().collect();
    let mut counts: BTreeMap<usize, usize> = novel.iter().map(|&c| (c, 0)).collect();
    for l in train.labels.iter().filter(|l| novel.contains(l)) {
        *counts.get_mut(l).expect("novel class") += 1;
    }
    let min = counts.values().copied().min();
    let max = counts.values().copied().max();
    Ok(match (min, max) {
        (_, Some(0)) | (None, _) => None,
        (Some(0), _) => {
            return Err(Error::Contract(
                "few-shot split must label every novel class".into(),
            ))
        }
        (Some(m), _) => Some(m),
    })
}

/// Runs one protocol.
///
/// - `zsl`: classifier over novel classes trained on synthetic novel
///   features, scored on test-novel.
/// - `gzsl`: classifier over all classes trained on real seen and synthetic
///   novel features, scored on test-seen (`s`) and test-novel (`u`).
/// - `fsl` / `gfsl`: as above with the labeled novel samples of the split
///   added to the training set.
pub fn evaluate<S: FeatureSource + ?Sized>(
    source: &S,
    dataset: &Dataset,
    config: &EvalConfig,
) -> Result<EvalReport> {
    let protocol = config.protocol;
    let shots = shots_per_novel_class(dataset)?;
    match (protocol.few_shot(), shots) {
        (false, Some(_)) => {
            return Err(Error::Contract(format!(
                "{protocol:?} expects no labeled novel samples"
            )))
        }
        (true, None) => {
            return Err(Error::Contract(format!(
                "{protocol:?} needs labeled novel samples; run n-shot subsampling first"
            )))
        }
        _ => {}
    }
    if dataset.splits().test_novel.is_empty() {
        return Err(Error::Contract("test-novel split is empty".into()));
    }
    if protocol.generalized() && dataset.splits().test_seen.is_empty() {
        return Err(Error::Contract("test-seen split is empty".into()));
    }

    let mut rng = rng::substream(config.seed, "eval");
    let emb = dataset.class_embeddings();
    let novel = dataset.novel_classes();
    let synth_novel = source.synthesize(emb, novel, config.synthetic_per_class, &mut rng)?;
    let labeled = dataset.labeled_train();
    let test_novel = dataset.test_novel()?;

    let mut report = EvalReport {
        protocol,
        variant: None,
        mode: None,
        shots,
        per_class_acc: BTreeMap::new(),
        t1: None,
        u: None,
        s: None,
        h: None,
        top_k: None,
        k: None,
    };

    if !protocol.generalized() {
        let novel_set: BTreeSet<usize> = novel.iter().copied().collect();
        let real_novel = LabeledSet {
            features: labeled.features.select_rows(
                &(0..labeled.len())
                    .filter(|&i| novel_set.contains(&labeled.labels[i]))
                    .collect::<Vec<_>>(),
            ),
            labels: labeled
                .labels
                .iter()
                .copied()
                .filter(|l| novel_set.contains(l))
                .collect(),
        };
        let train = concat_sets(&[&synth_novel, &real_novel])?;
        let clf = train_softmax(&train, novel, &config.softmax)?;
        let acc = per_class_top1(&clf, &test_novel, Some(novel))?;
        report.t1 = Some(acc.mean);
        report.per_class_acc = acc.per_class;
        if let Some(k) = config.top_k {
            report.top_k = Some(per_class_top_k(&clf, &test_novel, k, Some(novel))?.mean);
            report.k = Some(k);
        }
        return Ok(report);
    }

    let seen = dataset.seen_classes();
    let synth_seen = source.synthesize(emb, seen, config.synthetic_seen_per_class, &mut rng)?;
    let train = concat_sets(&[&labeled, &synth_seen, &synth_novel])?;
    let classes: Vec<usize> = train
        .labels
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let clf = train_softmax(&train, &classes, &config.softmax)?;
    let s_acc = per_class_top1(&clf, &dataset.test_seen(), None)?;
    let u_acc = per_class_top1(&clf, &test_novel, None)?;
    let (u, s) = (u_acc.mean, s_acc.mean);
    report.u = Some(u);
    report.s = Some(s);
    report.h = Some(harmonic_mean(u, s));
    report.per_class_acc = s_acc.per_class;
    report.per_class_acc.extend(u_acc.per_class);
    if let Some(k) = config.top_k {
        report.top_k = Some(per_class_top_k(&clf, &test_novel, k, None)?.mean);
        report.k = Some(k);
    }
    Ok(report)
}
