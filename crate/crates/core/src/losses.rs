//! Training objectives.
//!
//! Sign convention: every function returns a quantity to be *minimized* by
//! the network being updated. The critics therefore minimize
//! `E[D(x̃)] - E[D(x)] + λ·GP`, the negation of the critic-maximized WGAN
//! objective, and generators minimize `-E[D(G(z, c))]`.

use serde::{Deserialize, Serialize};

use crate::autodiff::{input_gradient_norm, Graph, Var};
use crate::error::{Error, Result};
use crate::models::{reparameterize, Binding, CriticNet, EncoderNet, GeneratorNet};
use crate::tensor::Tensor;
use crate::training::Mode;

/// Probabilities entering the binary cross-entropy are clamped to
/// `[BCE_CLAMP, 1 - BCE_CLAMP]`.
pub const BCE_CLAMP: f64 = 1e-7;

/// How the reconstruction cross-entropy is reduced.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    /// Mean over feature dimensions and batch.
    Mean,
    /// Sum over feature dimensions, mean over batch.
    #[default]
    SumDims,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    /// Gradient-penalty coefficient λ.
    pub lambda: f64,
    /// Weight γ of the conditional adversarial term against the VAE terms.
    pub gamma: f64,
    /// Weight β of the KL term.
    pub beta: f64,
    /// Weight of the unconditional (unlabeled-data) adversarial term in the
    /// generator objective.
    pub unconditional_weight: f64,
    pub recon_reduction: Reduction,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda: 10.0,
            gamma: 1000.0,
            beta: 1.0,
            unconditional_weight: 1000.0,
            recon_reduction: Reduction::SumDims,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda", self.lambda),
            ("gamma", self.gamma),
            ("beta", self.beta),
            ("unconditional_weight", self.unconditional_weight),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Critic objective and its two components (plain numbers for logging).
#[derive(Clone, Copy, Debug)]
pub struct CriticTerms {
    pub loss: Var,
    /// `E[D(x)] - E[D(x̃)]`.
    pub wasserstein: f64,
    pub penalty: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct VaeTerms {
    pub loss: Var,
    pub kl: Var,
    pub recon: Var,
}

/// Row-wise `α x + (1 - α) x̃` with `α` of shape `b x 1`.
pub fn interpolate(x_real: &Tensor, x_fake: &Tensor, alpha: &Tensor) -> Result<Tensor> {
    if x_real.shape() != x_fake.shape() || x_real.rank() != 2 {
        return Err(Error::Contract(format!(
            "real {:?} and fake {:?} batches must be equal-shape matrices",
            x_real.shape(),
            x_fake.shape()
        )));
    }
    if alpha.shape() != [x_real.rows(), 1] {
        return Err(Error::Contract(format!(
            "alpha must be [{}, 1], got {:?}",
            x_real.rows(),
            alpha.shape()
        )));
    }
    if alpha.data().iter().any(|a| !(0.0..=1.0).contains(a)) {
        return Err(Error::Domain("alpha must lie in [0, 1]".into()));
    }
    let cols = x_real.cols();
    let data = x_real
        .data()
        .iter()
        .zip(x_fake.data())
        .enumerate()
        .map(|(i, (&r, &f))| {
            let a = alpha.data()[i / cols];
            a * r + (1.0 - a) * f
        })
        .collect();
    Ok(Tensor::new(x_real.shape().to_vec(), data)?)
}

/// `E[(‖∇_x̂ D(x̂, c)‖₂ - 1)²]` on interpolates between real and fake rows,
/// differentiable with respect to the critic's parameters.
pub fn gradient_penalty(
    g: &mut Graph,
    critic: &CriticNet,
    x_real: &Tensor,
    x_fake: &Tensor,
    cond: Option<&Tensor>,
    alpha: &Tensor,
) -> Result<Var> {
    let x_hat = interpolate(x_real, x_fake, alpha)?;
    let xh = g.input(x_hat);
    let c = cond.map(|c| g.constant(c.clone()));
    let norm = input_gradient_norm(g, xh, |g, x| critic.score(g, x, c, Binding::Trainable))?;
    let dev = g.add_scalar(norm, -1.0)?;
    let sq = g.square(dev)?;
    Ok(g.mean(sq)?)
}

fn critic_terms(
    g: &mut Graph,
    critic: &CriticNet,
    x_real: &Tensor,
    x_fake: &Tensor,
    cond: Option<&Tensor>,
    alpha: &Tensor,
    weights: &LossWeights,
) -> Result<CriticTerms> {
    let xr = g.constant(x_real.clone());
    let xf = g.constant(x_fake.clone());
    let c = cond.map(|c| g.constant(c.clone()));
    let real = critic.score(g, xr, c, Binding::Trainable)?;
    let fake = critic.score(g, xf, c, Binding::Trainable)?;
    let real_mean = g.mean(real)?;
    let fake_mean = g.mean(fake)?;
    let gap = g.sub(fake_mean, real_mean)?;
    let gp = gradient_penalty(g, critic, x_real, x_fake, cond, alpha)?;
    let weighted = g.scale(gp, weights.lambda)?;
    let loss = g.add(gap, weighted)?;
    Ok(CriticTerms {
        loss,
        wasserstein: -g.scalar(gap)?,
        penalty: g.scalar(gp)?,
    })
}

/// Conditional critic loss `-E[D1(x, c)] + E[D1(x̃, c)] + λ·GP`.
///
/// `x_fake` is a plain tensor, so the generator is detached by construction.
pub fn wgan_critic_loss(
    g: &mut Graph,
    d1: &CriticNet,
    x_real: &Tensor,
    x_fake: &Tensor,
    cond: &Tensor,
    alpha: &Tensor,
    weights: &LossWeights,
) -> Result<CriticTerms> {
    critic_terms(g, d1, x_real, x_fake, Some(cond), alpha, weights)
}

/// Unconditional critic loss on unlabeled real features `x_n` against
/// generated novel-class features. Only meaningful in transductive mode.
pub fn d2_critic_loss(
    g: &mut Graph,
    d2: &CriticNet,
    x_unlabeled: &Tensor,
    x_fake: &Tensor,
    alpha: &Tensor,
    weights: &LossWeights,
    mode: Mode,
) -> Result<CriticTerms> {
    require_transductive(mode)?;
    critic_terms(g, d2, x_unlabeled, x_fake, None, alpha, weights)
}

/// Generator side of the unconditional critic: `-E[D2(x̃_n)]` with `D2`
/// frozen.
pub fn d2_generator_loss(g: &mut Graph, d2: &CriticNet, x_fake: Var, mode: Mode) -> Result<Var> {
    require_transductive(mode)?;
    let s = d2.score(g, x_fake, None, Binding::Frozen)?;
    let m = g.mean(s)?;
    Ok(g.neg(m)?)
}

fn require_transductive(mode: Mode) -> Result<()> {
    if mode != Mode::Transductive {
        return Err(Error::Mode(
            "the unconditional critic requires transductive mode".into(),
        ));
    }
    Ok(())
}

/// Mean over the batch of `0.5 Σ (μ² + σ² - log σ² - 1)`.
pub fn kl_to_standard_normal(g: &mut Graph, mu: Var, logvar: Var) -> Result<Var> {
    let rows = g.value(mu).rows();
    let mu2 = g.square(mu)?;
    let var = g.exp(logvar)?;
    let a = g.add(mu2, var)?;
    let b = g.sub(a, logvar)?;
    let c = g.add_scalar(b, -1.0)?;
    let s = g.sum(c)?;
    Ok(g.scale(s, 0.5 / rows as f64)?)
}

/// Binary cross-entropy of predicted probabilities against targets in
/// `[0, 1]`.
pub fn binary_cross_entropy(
    g: &mut Graph,
    pred: Var,
    target: &Tensor,
    reduction: Reduction,
) -> Result<Var> {
    if target.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Domain(
            "reconstruction targets must lie in [0, 1]".into(),
        ));
    }
    let (rows, n) = (target.rows(), target.len());
    let p = g.clamp(pred, BCE_CLAMP, 1.0 - BCE_CLAMP)?;
    let t = g.constant(target.clone());
    let one_minus_t = g.constant(target.map(|v| 1.0 - v));
    let log_p = g.log(p)?;
    let neg_p = g.neg(p)?;
    let q = g.add_scalar(neg_p, 1.0)?;
    let log_q = g.log(q)?;
    let a = g.mul(t, log_p)?;
    let b = g.mul(one_minus_t, log_q)?;
    let ll = g.add(a, b)?;
    let s = g.sum(ll)?;
    let denom = match reduction {
        Reduction::Mean => n,
        Reduction::SumDims => rows,
    };
    Ok(g.scale(s, -1.0 / denom as f64)?)
}

/// `β·KL(q(z|x,c) ‖ N(0, I)) + BCE(x, G(z, c))` with `z` reparameterized
/// from `eps`.
#[allow(clippy::too_many_arguments)]
pub fn vae_loss(
    g: &mut Graph,
    encoder: &EncoderNet,
    generator: &GeneratorNet,
    x: &Tensor,
    cond: &Tensor,
    eps: &Tensor,
    weights: &LossWeights,
) -> Result<VaeTerms> {
    if x.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Domain("VAE inputs must lie in [0, 1]".into()));
    }
    let xv = g.constant(x.clone());
    let c = g.constant(cond.clone());
    let e = g.constant(eps.clone());
    let (mu, logvar) = encoder.encode(g, xv, c, Binding::Trainable)?;
    let z = reparameterize(g, mu, logvar, e)?;
    let recon_x = generator.generate(g, z, c, Binding::Trainable)?;
    let kl = kl_to_standard_normal(g, mu, logvar)?;
    let recon = binary_cross_entropy(g, recon_x, x, weights.recon_reduction)?;
    let weighted_kl = g.scale(kl, weights.beta)?;
    let loss = g.add(weighted_kl, recon)?;
    Ok(VaeTerms { loss, kl, recon })
}

/// `-E[D1(G(z, c), c)]` with the critic frozen and the generator trainable.
pub fn conditional_generator_loss(
    g: &mut Graph,
    generator: &GeneratorNet,
    d1: &CriticNet,
    z: &Tensor,
    cond: &Tensor,
) -> Result<Var> {
    let zv = g.constant(z.clone());
    let c = g.constant(cond.clone());
    let fake = generator.generate(g, zv, c, Binding::Trainable)?;
    let s = d1.score(g, fake, Some(c), Binding::Frozen)?;
    let m = g.mean(s)?;
    Ok(g.neg(m)?)
}

/// Generator/encoder objective of the conditional VAE-GAN:
/// `L_VAE + γ·(-E[D1(G(z_p, c), c)])`.
#[allow(clippy::too_many_arguments)]
pub fn vaegan_generator_loss(
    g: &mut Graph,
    encoder: &EncoderNet,
    generator: &GeneratorNet,
    d1: &CriticNet,
    x: &Tensor,
    cond: &Tensor,
    z_prior: &Tensor,
    eps: &Tensor,
    weights: &LossWeights,
) -> Result<Var> {
    let vae = vae_loss(g, encoder, generator, x, cond, eps, weights)?;
    let adv = conditional_generator_loss(g, generator, d1, z_prior, cond)?;
    let weighted = g.scale(adv, weights.gamma)?;
    Ok(g.add(vae.loss, weighted)?)
}
