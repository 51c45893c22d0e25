//! Adam and the alternating critic/generator schedule.
//!
//! Every generator step is preceded by `critic_iters` updates of `D1` (all
//! variants except `vae`) and, in transductive mode, of `D2`. Each critic
//! update draws a fresh minibatch. The generator step then updates `E` and
//! `G` together on
//!
//! ```text
//! [L_VAE]  +  [γ · -E D1(G(z_p, c), c)]  +  [w_u · -E D2(G(z, c(y_n)))]
//!  vae/vaegan       gan/vaegan                   transductive
//! ```
//!
//! with `y_n` uniform over the novel classes.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::anyshot::{self, SoftmaxConfig};
use crate::autodiff::{Graph, ParamId, Parameter, Var};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::{self, LossWeights};
use crate::models::{FeatureModels, LatentSpec, REFERENCE_HIDDEN};
use crate::rng::{self, Rng};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Gan,
    Vae,
    #[serde(rename = "vaegan")]
    VaeGan,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Gan, Variant::Vae, Variant::VaeGan];

    pub fn uses_vae(self) -> bool {
        self != Variant::Gan
    }

    pub fn uses_conditional_critic(self) -> bool {
        self != Variant::Vae
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Gan => "gan",
            Variant::Vae => "vae",
            Variant::VaeGan => "vaegan",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Inductive,
    Transductive,
}

impl Mode {
    pub const ALL: [Mode; 2] = [Mode::Inductive, Mode::Transductive];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Inductive => "inductive",
            Mode::Transductive => "transductive",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments per parameter, created lazily at zero.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    t: u64,
    m: BTreeMap<ParamId, Tensor>,
    v: BTreeMap<ParamId, Tensor>,
}

impl AdamState {
    pub fn timestep(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected Adam update from each parameter's `grad`. Nothing is
/// modified if any gradient is non-finite.
pub fn adam_step(params: &mut [&mut Parameter], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if let Some(p) = params.iter().find(|p| !p.grad.is_finite()) {
        return Err(Error::NonFiniteGradient {
            name: p.name().to_string(),
            id: p.id().0,
        });
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for p in params.iter_mut() {
        let shape = p.value.shape().to_vec();
        let m = state.m.entry(p.id()).or_insert_with(|| Tensor::zeros(&shape));
        let v = state.v.entry(p.id()).or_insert_with(|| Tensor::zeros(&shape));
        let grad = p.grad.data();
        let value = p.value.data_mut();
        for (((w, &g), m), v) in value
            .iter_mut()
            .zip(grad)
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *w -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Early-stopping validation: synthetic seen-class features train a softmax
/// classifier that is scored on the held-out seen split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationConfig {
    pub synthetic_per_class: usize,
    pub softmax: SoftmaxConfig,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self {
            synthetic_per_class: 50,
            softmax: SoftmaxConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub variant: Variant,
    pub mode: Mode,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub critic_iters: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub weights: LossWeights,
    pub seed: u64,
    /// Epochs without validation improvement before stopping; 0 disables
    /// early stopping.
    pub early_stop_patience: usize,
    pub hidden_units: usize,
    /// Latent size; defaults to the class-embedding size.
    pub latent_dim: Option<usize>,
    pub leaky_slope: f64,
    pub validation: ValidationConfig,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            variant: Variant::VaeGan,
            mode: Mode::Inductive,
            learning_rate: 1e-3,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            critic_iters: 5,
            batch_size: 64,
            max_epochs: 30,
            weights: LossWeights::default(),
            seed: 0,
            early_stop_patience: 10,
            hidden_units: REFERENCE_HIDDEN,
            latent_dim: None,
            leaky_slope: crate::autodiff::DEFAULT_LEAKY_SLOPE,
            validation: ValidationConfig::default(),
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.critic_iters < 1 {
            return bad("critic_iters must be at least 1");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if self.max_epochs < 1 {
            return bad("max_epochs must be at least 1");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1)")));
            }
        }
        if self.hidden_units < 1 {
            return bad("hidden_units must be at least 1");
        }
        if self.latent_dim == Some(0) {
            return bad("latent_dim must be at least 1");
        }
        if !self.leaky_slope.is_finite() {
            return bad("leaky_slope must be finite");
        }
        self.weights.validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            ..AdamConfig::default()
        }
    }

    pub fn latent_spec(&self, d_x: usize, d_c: usize) -> LatentSpec {
        let mut spec = LatentSpec::new(d_x, d_c).with_hidden(self.hidden_units);
        if let Some(d_z) = self.latent_dim {
            spec.d_z = d_z;
        }
        spec.leaky_slope = self.leaky_slope;
        spec
    }
}

/// Mean loss components over one epoch. Absent terms are `None`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Generator steps completed at the end of the epoch.
    pub step: usize,
    pub d1_loss: Option<f64>,
    pub d1_wasserstein: Option<f64>,
    pub d1_penalty: Option<f64>,
    pub d2_loss: Option<f64>,
    pub d2_wasserstein: Option<f64>,
    pub d2_penalty: Option<f64>,
    pub kl: Option<f64>,
    pub recon: Option<f64>,
    pub gen_conditional: Option<f64>,
    pub gen_unconditional: Option<f64>,
    pub gen_total: Option<f64>,
    pub val_t1: Option<f64>,
}

const CURVE_COLUMNS: [&str; 14] = [
    "epoch",
    "step",
    "d1_loss",
    "d1_wasserstein",
    "d1_penalty",
    "d2_loss",
    "d2_wasserstein",
    "d2_penalty",
    "kl",
    "recon",
    "gen_conditional",
    "gen_unconditional",
    "gen_total",
    "val_t1",
];

impl EpochRecord {
    fn optional(&self) -> [Option<f64>; 12] {
        [
            self.d1_loss,
            self.d1_wasserstein,
            self.d1_penalty,
            self.d2_loss,
            self.d2_wasserstein,
            self.d2_penalty,
            self.kl,
            self.recon,
            self.gen_conditional,
            self.gen_unconditional,
            self.gen_total,
            self.val_t1,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.optional().iter().flatten().all(|v| v.is_finite())
    }
}

/// Loss curve as CSV; absent terms are empty cells.
pub fn curve_csv(curve: &[EpochRecord]) -> String {
    let mut out = CURVE_COLUMNS.join(",");
    out.push('\n');
    for r in curve {
        let _ = write!(out, "{},{}", r.epoch, r.step);
        for v in r.optional() {
            out.push(',');
            if let Some(v) = v {
                let _ = write!(out, "{v}");
            }
        }
        out.push('\n');
    }
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepCounters {
    pub d1_steps: usize,
    pub d2_steps: usize,
    pub generator_steps: usize,
}

/// Which network an update just changed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Update {
    D1,
    D2,
    Generator,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// The selected model set (best validation epoch when early stopping is
    /// active, otherwise the final one).
    pub models: FeatureModels,
    pub curve: Vec<EpochRecord>,
    pub counters: StepCounters,
    pub best_epoch: Option<usize>,
    pub epochs_run: usize,
}

#[derive(Default)]
struct Accum {
    sums: BTreeMap<&'static str, (f64, usize)>,
}

impl Accum {
    fn add(&mut self, key: &'static str, v: f64) {
        let e = self.sums.entry(key).or_default();
        e.0 += v;
        e.1 += 1;
    }

    fn mean(&self, key: &str) -> Option<f64> {
        self.sums.get(key).map(|&(s, n)| s / n as f64)
    }
}

struct Batch {
    x: Tensor,
    c: Tensor,
}

fn draw(rng: &mut Rng, n: usize, batch: usize) -> Vec<usize> {
    index::sample(rng, n, batch.min(n)).into_vec()
}

fn uniform(rng: &mut Rng, rows: usize) -> Tensor {
    Tensor::new(vec![rows, 1], (0..rows).map(|_| rng.random::<f64>()).collect())
        .expect("alpha shape")
}

fn apply(
    params: Vec<&mut Parameter>,
    grads: &crate::autodiff::Gradients,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    let mut params = params;
    for p in params.iter_mut() {
        p.zero_grad();
        p.accumulate(grads);
    }
    adam_step(&mut params, state, cfg)
}

fn checked(g: &Graph, v: Var, what: &str) -> Result<f64> {
    let x = g.scalar(v).map_err(|_| Error::NonFiniteLoss(what.to_string()))?;
    Ok(x)
}

/// Trains a model set on the dataset.
pub fn train(dataset: &Dataset, config: &TrainingConfig) -> Result<TrainOutcome> {
    train_with_observer(dataset, config, |_, _| {})
}

/// [`train`] with a callback after every parameter update.
pub fn train_with_observer<F>(
    dataset: &Dataset,
    config: &TrainingConfig,
    mut observe: F,
) -> Result<TrainOutcome>
where
    F: FnMut(Update, &FeatureModels),
{
    config.validate()?;
    let transductive = config.mode == Mode::Transductive;
    let labeled = dataset.labeled_train();
    if labeled.is_empty() {
        return Err(Error::Config("no labeled training samples".into()));
    }
    if labeled.features.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Domain(
            "training features must be rescaled to [0, 1]".into(),
        ));
    }
    let unlabeled = if transductive {
        if !dataset.has_unlabeled() {
            return Err(Error::Config(
                "transductive mode requires a nonempty unlabeled pool".into(),
            ));
        }
        if dataset.novel_classes().is_empty() {
            return Err(Error::Config(
                "transductive mode requires novel classes".into(),
            ));
        }
        Some(dataset.unlabeled_features()?)
    } else {
        None
    };

    let spec = config.latent_spec(dataset.d_x(), dataset.d_c());
    let mut models = FeatureModels::new(spec, config.seed)?;
    let emb = dataset.class_embeddings().clone();
    let novel = dataset.novel_classes().to_vec();
    let weights = &config.weights;
    let adam = config.adam();
    let d_z = models.spec.d_z;
    let (mut s_eg, mut s_d1, mut s_d2) = Default::default();
    let mut rng = rng::substream(config.seed, "training");
    let mut counters = StepCounters::default();
    let n = labeled.len();
    let steps_per_epoch = n.div_ceil(config.batch_size);
    let train_critics = config.variant.uses_conditional_critic() || transductive;

    let labeled_batch = |rng: &mut Rng| {
        let idx = draw(rng, n, config.batch_size);
        let labels: Vec<usize> = idx.iter().map(|&i| labeled.labels[i]).collect();
        Batch {
            x: labeled.features.select_rows(&idx),
            c: emb.select_rows(&labels),
        }
    };
    let novel_cond = |rng: &mut Rng, rows: usize| {
        let ys: Vec<usize> = (0..rows)
            .map(|_| novel[rng.random_range(0..novel.len())])
            .collect();
        emb.select_rows(&ys)
    };

    let mut curve = Vec::new();
    let mut best: Option<(f64, usize, FeatureModels)> = None;
    let mut since_best = 0;
    let validating = config.early_stop_patience > 0 && !dataset.splits().val_seen.is_empty();
    let val_set = dataset.validation();
    let mut epochs_run = 0;

    for epoch in 0..config.max_epochs {
        let mut acc = Accum::default();
        for _ in 0..steps_per_epoch {
            if train_critics {
                for _ in 0..config.critic_iters {
                    if config.variant.uses_conditional_critic() {
                        let b = labeled_batch(&mut rng);
                        let rows = b.x.rows();
                        let z = rng::normal_matrix(&mut rng, rows, d_z);
                        let fake = models.generator.generate_tensor(&z, &b.c)?;
                        let alpha = uniform(&mut rng, rows);
                        let mut g = Graph::new();
                        let t = losses::wgan_critic_loss(
                            &mut g, &models.d1, &b.x, &fake, &b.c, &alpha, weights,
                        )?;
                        acc.add("d1_loss", checked(&g, t.loss, "d1")?);
                        acc.add("d1_wasserstein", t.wasserstein);
                        acc.add("d1_penalty", t.penalty);
                        let grads = g.backward(t.loss)?;
                        apply(models.d1.parameters_mut(), &grads, &mut s_d1, &adam)?;
                        counters.d1_steps += 1;
                        observe(Update::D1, &models);
                    }
                    if let Some(pool) = &unlabeled {
                        let idx = draw(&mut rng, pool.rows(), config.batch_size);
                        let xn = pool.select_rows(&idx);
                        let rows = xn.rows();
                        let cn = novel_cond(&mut rng, rows);
                        let z = rng::normal_matrix(&mut rng, rows, d_z);
                        let fake = models.generator.generate_tensor(&z, &cn)?;
                        let alpha = uniform(&mut rng, rows);
                        let mut g = Graph::new();
                        let t = losses::d2_critic_loss(
                            &mut g, &models.d2, &xn, &fake, &alpha, weights, config.mode,
                        )?;
                        acc.add("d2_loss", checked(&g, t.loss, "d2")?);
                        acc.add("d2_wasserstein", t.wasserstein);
                        acc.add("d2_penalty", t.penalty);
                        let grads = g.backward(t.loss)?;
                        apply(models.d2.parameters_mut(), &grads, &mut s_d2, &adam)?;
                        counters.d2_steps += 1;
                        observe(Update::D2, &models);
                    }
                }
            }

            let b = labeled_batch(&mut rng);
            let rows = b.x.rows();
            let mut g = Graph::new();
            let mut terms: Vec<Var> = Vec::new();
            if config.variant.uses_vae() {
                let eps = rng::normal_matrix(&mut rng, rows, d_z);
                let vae = losses::vae_loss(
                    &mut g,
                    &models.encoder,
                    &models.generator,
                    &b.x,
                    &b.c,
                    &eps,
                    weights,
                )?;
                acc.add("kl", checked(&g, vae.kl, "kl")?);
                acc.add("recon", checked(&g, vae.recon, "recon")?);
                terms.push(vae.loss);
            }
            if config.variant.uses_conditional_critic() {
                let z_p = rng::normal_matrix(&mut rng, rows, d_z);
                let adv = losses::conditional_generator_loss(
                    &mut g,
                    &models.generator,
                    &models.d1,
                    &z_p,
                    &b.c,
                )?;
                acc.add("gen_conditional", checked(&g, adv, "generator")?);
                terms.push(g.scale(adv, weights.gamma)?);
            }
            if transductive {
                let cn = novel_cond(&mut rng, rows);
                let z = rng::normal_matrix(&mut rng, rows, d_z);
                let zv = g.constant(z);
                let cv = g.constant(cn);
                let fake = models.generator.generate(
                    &mut g,
                    zv,
                    cv,
                    crate::models::Binding::Trainable,
                )?;
                let adv = losses::d2_generator_loss(&mut g, &models.d2, fake, config.mode)?;
                acc.add("gen_unconditional", checked(&g, adv, "generator")?);
                terms.push(g.scale(adv, weights.unconditional_weight)?);
            }
            let mut total = terms[0];
            for &t in &terms[1..] {
                total = g.add(total, t)?;
            }
            acc.add("gen_total", checked(&g, total, "generator")?);
            let grads = g.backward(total)?;
            let FeatureModels {
                encoder, generator, ..
            } = &mut models;
            let mut eg = encoder.parameters_mut();
            eg.extend(generator.parameters_mut());
            apply(eg, &grads, &mut s_eg, &adam)?;
            counters.generator_steps += 1;
            observe(Update::Generator, &models);
        }

        epochs_run = epoch + 1;
        let val_t1 = if validating {
            Some(validation_t1(&models, dataset, &val_set, config, epoch)?)
        } else {
            None
        };
        let record = EpochRecord {
            epoch,
            step: counters.generator_steps,
            d1_loss: acc.mean("d1_loss"),
            d1_wasserstein: acc.mean("d1_wasserstein"),
            d1_penalty: acc.mean("d1_penalty"),
            d2_loss: acc.mean("d2_loss"),
            d2_wasserstein: acc.mean("d2_wasserstein"),
            d2_penalty: acc.mean("d2_penalty"),
            kl: acc.mean("kl"),
            recon: acc.mean("recon"),
            gen_conditional: acc.mean("gen_conditional"),
            gen_unconditional: acc.mean("gen_unconditional"),
            gen_total: acc.mean("gen_total"),
            val_t1,
        };
        log::debug!("epoch {epoch}: {record:?}");
        curve.push(record);
        if let Some(v) = val_t1 {
            if best.as_ref().is_none_or(|(b, _, _)| v > *b) {
                best = Some((v, epoch, models.clone()));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= config.early_stop_patience {
                    break;
                }
            }
        }
    }

    let (models, best_epoch) = match best {
        Some((_, e, m)) => (m, Some(e)),
        None => (models, None),
    };
    Ok(TrainOutcome {
        models,
        curve,
        counters,
        best_epoch,
        epochs_run,
    })
}

fn validation_t1(
    models: &FeatureModels,
    dataset: &Dataset,
    val: &crate::data::LabeledSet,
    config: &TrainingConfig,
    epoch: usize,
) -> Result<f64> {
    let seen = dataset.seen_classes();
    let mut rng = rng::substream(config.seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9), "validation");
    let synth = anyshot::FeatureSource::synthesize(
        &models.generator,
        dataset.class_embeddings(),
        seen,
        config.validation.synthetic_per_class,
        &mut rng,
    )?;
    let clf = anyshot::train_softmax(&synth, seen, &config.validation.softmax)?;
    Ok(anyshot::per_class_top1(&clf, val, Some(seen))?.mean)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(v: f64) -> Parameter {
        Parameter::new(ParamId(0), "w", Tensor::vector(vec![v]))
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = scalar_param(1.25);
        let mut s = AdamState::default();
        adam_step(&mut [&mut p], &mut s, &AdamConfig::default()).unwrap();
        assert_eq!(p.value.data(), &[1.25]);
        assert_eq!(s.timestep(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = scalar_param(0.0);
        p.grad = Tensor::vector(vec![1.0]);
        let mut s = AdamState::default();
        let cfg = AdamConfig::default();
        adam_step(&mut [&mut p], &mut s, &cfg).unwrap();
        let expected = -cfg.learning_rate / (1.0 + cfg.eps);
        assert!((p.value.item() - expected).abs() < 1e-15);
    }

    #[test]
    fn reference_trajectory() {
        // Independent scalar Adam on f(w) = (w - 3)^2 + sin(w).
        let cfg = AdamConfig {
            learning_rate: 0.05,
            ..AdamConfig::default()
        };
        let grad = |w: f64| 2.0 * (w - 3.0) + w.cos();
        let (mut w_ref, mut m, mut v) = (0.5f64, 0.0f64, 0.0f64);
        let mut p = scalar_param(0.5);
        let mut s = AdamState::default();
        for t in 1..=100 {
            let g = grad(w_ref);
            m = 0.5 * m + 0.5 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.5f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            w_ref -= 0.05 * mh / (vh.sqrt() + 1e-8);

            p.grad = Tensor::vector(vec![grad(p.value.item())]);
            adam_step(&mut [&mut p], &mut s, &cfg).unwrap();
            assert!((p.value.item() - w_ref).abs() < 1e-12, "step {t}");
        }
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut p = Parameter::new(ParamId(4), "d1.hidden.weight", Tensor::vector(vec![0.0]));
        p.grad = Tensor::vector(vec![f64::NAN]);
        let err = adam_step(&mut [&mut p], &mut AdamState::default(), &AdamConfig::default())
            .unwrap_err();
        assert!(err.to_string().contains("d1.hidden.weight"));
        assert_eq!(p.value.item(), 0.0);
    }

    #[test]
    fn config_validation() {
        let ok = TrainingConfig::default();
        ok.validate().unwrap();
        for bad in [
            TrainingConfig {
                critic_iters: 0,
                ..ok.clone()
            },
            TrainingConfig {
                batch_size: 1,
                ..ok.clone()
            },
            TrainingConfig {
                adam_beta1: 1.0,
                ..ok.clone()
            },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let err = serde_json::from_str::<TrainingConfig>(r#"{"variant":"gan","lamda":3}"#);
        assert!(err.is_err());
        let cfg: TrainingConfig =
            serde_json::from_str(r#"{"variant":"vaegan","mode":"transductive"}"#).unwrap();
        assert_eq!(cfg.weights.gamma, 1000.0);
        assert_eq!(cfg.critic_iters, 5);
    }

    #[test]
    fn curve_csv_leaves_absent_terms_empty() {
        let r = EpochRecord {
            epoch: 0,
            step: 3,
            kl: Some(0.5),
            ..EpochRecord::default()
        };
        let csv = curve_csv(&[r]);
        let mut lines = csv.lines();
        assert!(lines.next().unwrap().starts_with("epoch,step,d1_loss"));
        assert_eq!(lines.next().unwrap(), "0,3,,,,,,,0.5,,,,,");
    }
}
