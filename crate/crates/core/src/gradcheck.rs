//! Numerical verification of the losses.
//!
//! The finite-difference check builds a small random model set, differentiates one loss with
//! the autodiff engine and compares every parameter entry against a central
//! difference of the loss value. The critic objectives include the gradient
//! penalty, so their parameter gradients exercise double backprop.

use rand::Rng as _;

use crate::autodiff::{Graph, ParamId, Var};
use crate::error::Result;
use crate::losses::{self, LossWeights, Reduction};
use crate::models::{Binding, CriticNet, FeatureModels, LatentSpec};
use crate::rng::{self, Rng};
use crate::tensor::Tensor;
use crate::training::Mode;
use rand_distr::{Distribution, StandardNormal};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Denominator floor of the relative error, so that entries whose true
/// gradient is zero are compared absolutely.
pub const REL_FLOOR: f64 = 1e-4;

/// `|a - n| / max(|a|, |n|, REL_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    Vae,
    ConditionalCritic,
    ConditionalPenalty,
    ConditionalGenerator,
    VaeGanGenerator,
    UnconditionalCritic,
    UnconditionalPenalty,
    UnconditionalGenerator,
}

impl LossKind {
    pub const ALL: [LossKind; 8] = [
        LossKind::Vae,
        LossKind::ConditionalCritic,
        LossKind::ConditionalPenalty,
        LossKind::ConditionalGenerator,
        LossKind::VaeGanGenerator,
        LossKind::UnconditionalCritic,
        LossKind::UnconditionalPenalty,
        LossKind::UnconditionalGenerator,
    ];

    /// Whether the loss differentiates through an input-gradient.
    pub fn second_order(self) -> bool {
        matches!(
            self,
            LossKind::ConditionalCritic
                | LossKind::ConditionalPenalty
                | LossKind::UnconditionalCritic
                | LossKind::UnconditionalPenalty
        )
    }
}

/// A random small problem: models, batches and weights.
#[derive(Clone, Debug)]
pub struct Problem {
    pub models: FeatureModels,
    pub weights: LossWeights,
    pub x: Tensor,
    pub x_fake: Tensor,
    pub x_unlabeled: Tensor,
    pub cond: Tensor,
    pub z: Tensor,
    pub eps: Tensor,
    pub alpha: Tensor,
}

fn uniform(rng: &mut Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(vec![rows, cols], data).expect("shape matches")
}

impl Problem {
    pub fn random(seed: u64) -> Result<Self> {
        let mut r = rng::substream(seed, "gradcheck");
        let spec = LatentSpec {
            d_x: r.random_range(2..=6),
            d_c: r.random_range(1..=4),
            d_z: r.random_range(1..=4),
            hidden: r.random_range(2..=6),
            leaky_slope: r.random_range(0.05..0.5),
        };
        let b = r.random_range(1..=5);
        let weights = LossWeights {
            lambda: r.random_range(0.5..10.0),
            gamma: r.random_range(0.1..10.0),
            beta: r.random_range(0.1..2.0),
            unconditional_weight: r.random_range(0.1..10.0),
            recon_reduction: if r.random() { Reduction::Mean } else { Reduction::SumDims },
        };
        let models = FeatureModels::new(spec.clone(), r.random())?;
        Ok(Self {
            x: uniform(&mut r, b, spec.d_x, 0.05, 0.95),
            x_fake: uniform(&mut r, b, spec.d_x, 0.05, 0.95),
            x_unlabeled: uniform(&mut r, b, spec.d_x, 0.05, 0.95),
            cond: uniform(&mut r, b, spec.d_c, 0.0, 1.0),
            z: rng::normal_matrix(&mut r, b, spec.d_z),
            eps: rng::normal_matrix(&mut r, b, spec.d_z),
            alpha: uniform(&mut r, b, 1, 0.0, 1.0),
            models,
            weights,
        })
    }

    /// Builds `kind` on `g` with every network bound as the loss requires.
    pub fn build(&self, g: &mut Graph, kind: LossKind) -> Result<Var> {
        let m = &self.models;
        let w = &self.weights;
        Ok(match kind {
            LossKind::Vae => {
                losses::vae_loss(g, &m.encoder, &m.generator, &self.x, &self.cond, &self.eps, w)?.loss
            }
            LossKind::ConditionalCritic => {
                losses::wgan_critic_loss(g, &m.d1, &self.x, &self.x_fake, &self.cond, &self.alpha, w)?
                    .loss
            }
            LossKind::ConditionalPenalty => {
                losses::gradient_penalty(g, &m.d1, &self.x, &self.x_fake, Some(&self.cond), &self.alpha)?
            }
            LossKind::ConditionalGenerator => {
                losses::conditional_generator_loss(g, &m.generator, &m.d1, &self.z, &self.cond)?
            }
            LossKind::VaeGanGenerator => losses::vaegan_generator_loss(
                g,
                &m.encoder,
                &m.generator,
                &m.d1,
                &self.x,
                &self.cond,
                &self.z,
                &self.eps,
                w,
            )?,
            LossKind::UnconditionalCritic => {
                losses::d2_critic_loss(
                    g,
                    &m.d2,
                    &self.x_unlabeled,
                    &self.x_fake,
                    &self.alpha,
                    w,
                    Mode::Transductive,
                )?
                .loss
            }
            LossKind::UnconditionalPenalty => {
                losses::gradient_penalty(g, &m.d2, &self.x_unlabeled, &self.x_fake, None, &self.alpha)?
            }
            LossKind::UnconditionalGenerator => {
                let z = g.constant(self.z.clone());
                let c = g.constant(self.cond.clone());
                let fake = m.generator.generate(g, z, c, Binding::Trainable)?;
                let adv = losses::d2_generator_loss(g, &m.d2, fake, Mode::Transductive)?;
                g.scale(adv, w.unconditional_weight)?
            }
        })
    }

    fn value(&self, kind: LossKind) -> Result<f64> {
        let mut g = Graph::new();
        let root = self.build(&mut g, kind)?;
        Ok(g.scalar(root)?)
    }

    fn perturbed(&self, id: ParamId, index: usize, delta: f64) -> Problem {
        let mut p = self.clone();
        for param in p.models.parameters_mut() {
            if param.id() == id {
                param.value.data_mut()[index] += delta;
            }
        }
        p
    }
}

/// Outcome of one loss on one problem.
#[derive(Clone, Debug)]
pub struct LossCheck {
    pub kind: LossKind,
    pub entries: usize,
    pub max_rel_error: f64,
    /// Parameter name and entry index of the worst entry.
    pub worst: Option<(String, usize)>,
}

/// Compares autodiff and central-difference gradients of `kind` for every
/// parameter the loss trains.
pub fn check_loss(problem: &Problem, kind: LossKind) -> Result<LossCheck> {
    let mut g = Graph::new();
    let root = problem.build(&mut g, kind)?;
    let grads = g.backward(root)?;
    let mut out = LossCheck {
        kind,
        entries: 0,
        max_rel_error: 0.0,
        worst: None,
    };
    for param in problem.models.parameters() {
        let Some(analytic) = grads.get(param.id()) else {
            continue;
        };
        for (i, &a) in analytic.data().iter().enumerate() {
            let up = problem.perturbed(param.id(), i, FD_STEP).value(kind)?;
            let down = problem.perturbed(param.id(), i, -FD_STEP).value(kind)?;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let err = relative_error(a, numeric);
            out.entries += 1;
            if err > out.max_rel_error || out.worst.is_none() {
                out.max_rel_error = out.max_rel_error.max(err);
                out.worst = Some((param.name().to_string(), i));
            }
        }
    }
    Ok(out)
}

/// Every loss of [`LossKind::ALL`] on the random problem of `seed`.
pub fn check_all(seed: u64) -> Result<Vec<LossCheck>> {
    let problem = Problem::random(seed)?;
    LossKind::ALL
        .iter()
        .map(|&k| check_loss(&problem, k))
        .collect()
}

/// Critic computing exactly `D(x, c) = w·x`: a single hidden unit with
/// LeakyReLU slope 1 reads `w` and the output copies it.
pub fn linear_critic(w: &[f64], d_c: usize, conditional: bool) -> Result<CriticNet> {
    let spec = LatentSpec {
        d_x: w.len(),
        d_c,
        d_z: 1,
        hidden: 1,
        leaky_slope: 1.0,
    };
    let m = FeatureModels::new(spec, 0)?;
    let mut critic = if conditional { m.d1 } else { m.d2 };
    let inp = critic.hidden.weight.value.rows();
    let mut hw = vec![0.0; inp];
    hw[..w.len()].copy_from_slice(w);
    critic.hidden.weight.value = Tensor::new(vec![inp, 1], hw)?;
    critic.hidden.bias.value = Tensor::zeros(&[1]);
    critic.out.weight.value = Tensor::new(vec![1, 1], vec![1.0])?;
    critic.out.bias.value = Tensor::zeros(&[1]);
    Ok(critic)
}

/// Gradient penalty of [`linear_critic`] on random batches of `rows` rows.
pub fn linear_critic_penalty(w: &[f64], conditional: bool, rows: usize, seed: u64) -> Result<f64> {
    let mut r = rng::substream(seed, "linear-critic");
    let d_c = 2;
    let critic = linear_critic(w, d_c, conditional)?;
    let x = uniform(&mut r, rows, w.len(), 0.0, 1.0);
    let xf = uniform(&mut r, rows, w.len(), 0.0, 1.0);
    let c = uniform(&mut r, rows, d_c, 0.0, 1.0);
    let a = uniform(&mut r, rows, 1, 0.0, 1.0);
    let mut g = Graph::new();
    let gp = losses::gradient_penalty(&mut g, &critic, &x, &xf, conditional.then_some(&c), &a)?;
    Ok(g.scalar(gp)?)
}

/// Closed-form KL of `N(μ, diag exp(logvar))` against `N(0, I)` and a
/// Monte-Carlo estimate of `E_q[log q(z) - log p(z)]` from `samples` draws.
pub fn kl_closed_and_monte_carlo(
    mu: &[f64],
    logvar: &[f64],
    samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let d = mu.len();
    let mut g = Graph::new();
    let m = g.constant(Tensor::new(vec![1, d], mu.to_vec())?);
    let l = g.constant(Tensor::new(vec![1, d], logvar.to_vec())?);
    let kl = losses::kl_to_standard_normal(&mut g, m, l)?;
    let closed = g.scalar(kl)?;
    let mut r = rng::substream(seed, "kl-mc");
    let mut acc = 0.0;
    for _ in 0..samples {
        for (&mu, &lv) in mu.iter().zip(logvar) {
            let e: f64 = StandardNormal.sample(&mut r);
            let z = mu + (0.5 * lv).exp() * e;
            acc += -0.5 * e * e - 0.5 * lv + 0.5 * z * z;
        }
    }
    Ok((closed, acc / samples as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_uses_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1e-9, 0.0) - 1e-5).abs() < 1e-18);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn linear_critic_is_linear() {
        let critic = linear_critic(&[0.5, -2.0], 2, true).unwrap();
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_rows(&[vec![1.0, 1.0], vec![2.0, 0.0]]).unwrap());
        let c = g.constant(Tensor::full(&[2, 2], 0.3));
        let s = critic.score(&mut g, x, Some(c), Binding::Frozen).unwrap();
        assert_eq!(g.value(s).data(), &[-1.5, 1.0]);
    }

    #[test]
    fn every_loss_touches_parameters() {
        let p = Problem::random(3).unwrap();
        for kind in LossKind::ALL {
            let c = check_loss(&p, kind).unwrap();
            assert!(c.entries > 0, "{kind:?}");
        }
    }
}
