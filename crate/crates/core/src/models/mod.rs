//! The four networks: conditional encoder `E(x, c)`, generator `G(z, c)`
//! (which doubles as the VAE decoder), conditional critic `D1(x, c)` and
//! unconditional critic `D2(x)`.
//!
//! Every network is a two-layer MLP: one LeakyReLU hidden layer, then a
//! linear output. The generator ends in a sigmoid so that generated features
//! live in `(0, 1)`, like the rescaled real features.

mod checkpoint;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub use checkpoint::{CheckpointHeader, ParamRecord, CHECKPOINT_MAGIC};

use crate::autodiff::{Graph, ParamId, Parameter, Var, DEFAULT_LEAKY_SLOPE};
use crate::error::{AutodiffError, Error, Result};
use crate::rng::{self, Rng};
use crate::tensor::Tensor;

/// Hidden width used by the reference architecture.
pub const REFERENCE_HIDDEN: usize = 4096;

/// Dimensions shared by all four networks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatentSpec {
    pub d_x: usize,
    pub d_c: usize,
    pub d_z: usize,
    pub hidden: usize,
    #[serde(default = "default_slope")]
    pub leaky_slope: f64,
}

fn default_slope() -> f64 {
    DEFAULT_LEAKY_SLOPE
}

impl LatentSpec {
    /// Reference architecture: `d_z = d_c`, 4096 hidden units.
    pub fn new(d_x: usize, d_c: usize) -> Self {
        Self {
            d_x,
            d_c,
            d_z: d_c,
            hidden: REFERENCE_HIDDEN,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
        }
    }

    pub fn with_hidden(mut self, hidden: usize) -> Self {
        self.hidden = hidden;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("d_x", self.d_x),
            ("d_c", self.d_c),
            ("d_z", self.d_z),
            ("hidden", self.hidden),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.leaky_slope.is_finite() && self.leaky_slope >= 0.0) {
            return Err(Error::Config("leaky_slope must be finite and >= 0".into()));
        }
        Ok(())
    }

    fn dense(inp: usize, out: usize) -> usize {
        inp * out + out
    }

    pub fn encoder_param_count(&self) -> usize {
        Self::dense(self.d_x + self.d_c, self.hidden) + 2 * Self::dense(self.hidden, self.d_z)
    }

    pub fn generator_param_count(&self) -> usize {
        Self::dense(self.d_z + self.d_c, self.hidden) + Self::dense(self.hidden, self.d_x)
    }

    pub fn critic_param_count(&self, conditional: bool) -> usize {
        let inp = self.d_x + if conditional { self.d_c } else { 0 };
        Self::dense(inp, self.hidden) + Self::dense(self.hidden, 1)
    }
}

/// How a network's weights enter a graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binding {
    /// Weights are graph parameters and receive gradients.
    Trainable,
    /// Weights are constants; used when another network is being updated.
    Frozen,
}

struct IdAlloc(u32);

impl IdAlloc {
    fn next(&mut self) -> ParamId {
        let id = ParamId(self.0);
        self.0 += 1;
        id
    }
}

/// Fully connected layer `y = x W + b` with `W: in x out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Parameter,
    pub bias: Parameter,
}

impl Linear {
    fn new(ids: &mut IdAlloc, name: &str, inp: usize, out: usize, rng: &mut Rng) -> Self {
        let a = (6.0 / (inp + out) as f64).sqrt();
        let w: Vec<f64> = (0..inp * out).map(|_| rng.random_range(-a..a)).collect();
        let weight = Parameter::new(
            ids.next(),
            format!("{name}.weight"),
            Tensor::new(vec![inp, out], w).expect("shape matches"),
        );
        let bias = Parameter::new(ids.next(), format!("{name}.bias"), Tensor::zeros(&[out]));
        Self { weight, bias }
    }

    fn bind(&self, g: &mut Graph, binding: Binding) -> (Var, Var) {
        match binding {
            Binding::Trainable => (g.param(&self.weight), g.param(&self.bias)),
            Binding::Frozen => (
                g.constant(self.weight.value.clone()),
                g.constant(self.bias.value.clone()),
            ),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var, binding: Binding) -> Result<Var, AutodiffError> {
        let (w, b) = self.bind(g, binding);
        let xw = g.matmul(x, w)?;
        g.add_bias(xw, b)
    }

    pub fn inputs(&self) -> usize {
        self.weight.value.shape()[0]
    }

    fn params(&self) -> [&Parameter; 2] {
        [&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> [&mut Parameter; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

fn check_cols(g: &Graph, v: Var, want: usize, what: &str) -> Result<()> {
    let t = g.value(v);
    if t.rank() != 2 || t.cols() != want {
        return Err(AutodiffError::Shape {
            op: "model input",
            detail: format!("{what} must be [b, {want}], got {:?}", t.shape()),
        }
        .into());
    }
    Ok(())
}

fn check_rows(g: &Graph, a: Var, b: Var) -> Result<()> {
    if g.value(a).rows() != g.value(b).rows() {
        return Err(AutodiffError::Shape {
            op: "model input",
            detail: format!(
                "row counts differ: {:?} vs {:?}",
                g.value(a).shape(),
                g.value(b).shape()
            ),
        }
        .into());
    }
    Ok(())
}

/// `E(x, c)`: shared hidden layer with separate mean and log-variance heads.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderNet {
    pub hidden: Linear,
    pub mu: Linear,
    pub logvar: Linear,
    d_x: usize,
    d_c: usize,
    slope: f64,
}

impl EncoderNet {
    /// Returns `(μ, log σ²)`, each `b x d_z`.
    pub fn encode(&self, g: &mut Graph, x: Var, c: Var, binding: Binding) -> Result<(Var, Var)> {
        check_cols(g, x, self.d_x, "encoder feature")?;
        check_cols(g, c, self.d_c, "encoder condition")?;
        check_rows(g, x, c)?;
        let xc = g.concat(x, c)?;
        let h = self.hidden.forward(g, xc, binding)?;
        let h = g.leaky_relu(h, self.slope)?;
        let mu = self.mu.forward(g, h, binding)?;
        let logvar = self.logvar.forward(g, h, binding)?;
        Ok((mu, logvar))
    }

    pub fn parameters(&self) -> Vec<&Parameter> {
        [self.hidden.params(), self.mu.params(), self.logvar.params()]
            .into_iter()
            .flatten()
            .collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let Self {
            hidden, mu, logvar, ..
        } = self;
        let mut v: Vec<&mut Parameter> = hidden.params_mut().into_iter().collect();
        v.extend(mu.params_mut());
        v.extend(logvar.params_mut());
        v
    }
}

/// `z = μ + exp(log σ² / 2) ⊙ ε`.
pub fn reparameterize(g: &mut Graph, mu: Var, logvar: Var, eps: Var) -> Result<Var> {
    let half = g.scale(logvar, 0.5)?;
    let sigma = g.exp(half)?;
    let noise = g.mul(sigma, eps)?;
    Ok(g.add(mu, noise)?)
}

/// `G(z, c)`, also used as the VAE decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorNet {
    pub hidden: Linear,
    pub out: Linear,
    d_z: usize,
    d_c: usize,
    slope: f64,
}

impl GeneratorNet {
    pub fn generate(&self, g: &mut Graph, z: Var, c: Var, binding: Binding) -> Result<Var> {
        check_cols(g, z, self.d_z, "generator noise")?;
        check_cols(g, c, self.d_c, "generator condition")?;
        check_rows(g, z, c)?;
        let zc = g.concat(z, c)?;
        let h = self.hidden.forward(g, zc, binding)?;
        let h = g.leaky_relu(h, self.slope)?;
        let o = self.out.forward(g, h, binding)?;
        Ok(g.sigmoid(o)?)
    }

    /// Evaluates `G(z, c)` outside any training graph.
    pub fn generate_tensor(&self, z: &Tensor, c: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let zv = g.constant(z.clone());
        let cv = g.constant(c.clone());
        let x = self.generate(&mut g, zv, cv, Binding::Frozen)?;
        Ok(g.value(x).clone())
    }

    pub fn d_z(&self) -> usize {
        self.d_z
    }

    pub fn d_x(&self) -> usize {
        self.out.weight.value.cols()
    }

    pub fn parameters(&self) -> Vec<&Parameter> {
        [self.hidden.params(), self.out.params()]
            .into_iter()
            .flatten()
            .collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let Self { hidden, out, .. } = self;
        let mut v: Vec<&mut Parameter> = hidden.params_mut().into_iter().collect();
        v.extend(out.params_mut());
        v
    }
}

/// WGAN critic. Conditional critics score `(x, c)` pairs, unconditional
/// critics score `x` alone. No output activation.
#[derive(Clone, Debug, PartialEq)]
pub struct CriticNet {
    pub hidden: Linear,
    pub out: Linear,
    conditional: bool,
    d_x: usize,
    d_c: usize,
    slope: f64,
}

impl CriticNet {
    pub fn conditional(&self) -> bool {
        self.conditional
    }

    /// One score per row, `b x 1`.
    pub fn score(&self, g: &mut Graph, x: Var, c: Option<Var>, binding: Binding) -> Result<Var> {
        check_cols(g, x, self.d_x, "critic feature")?;
        let input = match (self.conditional, c) {
            (true, Some(c)) => {
                check_cols(g, c, self.d_c, "critic condition")?;
                check_rows(g, x, c)?;
                g.concat(x, c)?
            }
            (false, None) => x,
            (true, None) => {
                return Err(Error::Contract(
                    "conditional critic requires a class embedding".into(),
                ))
            }
            (false, Some(_)) => {
                return Err(Error::Contract(
                    "unconditional critic does not accept a class embedding".into(),
                ))
            }
        };
        let h = self.hidden.forward(g, input, binding)?;
        let h = g.leaky_relu(h, self.slope)?;
        Ok(self.out.forward(g, h, binding)?)
    }

    pub fn parameters(&self) -> Vec<&Parameter> {
        [self.hidden.params(), self.out.params()]
            .into_iter()
            .flatten()
            .collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let Self { hidden, out, .. } = self;
        let mut v: Vec<&mut Parameter> = hidden.params_mut().into_iter().collect();
        v.extend(out.params_mut());
        v
    }
}

/// The complete model set. Parameter ids are assigned in declaration order:
/// encoder, generator, `D1`, `D2`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureModels {
    pub spec: LatentSpec,
    pub encoder: EncoderNet,
    pub generator: GeneratorNet,
    pub d1: CriticNet,
    pub d2: CriticNet,
}

impl FeatureModels {
    /// Glorot-uniform weights and zero biases drawn from the `init`
    /// substream of `seed`.
    pub fn new(spec: LatentSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = rng::substream(seed, "init");
        let mut ids = IdAlloc(0);
        let LatentSpec {
            d_x,
            d_c,
            d_z,
            hidden: h,
            leaky_slope: slope,
        } = spec;
        let encoder = EncoderNet {
            hidden: Linear::new(&mut ids, "encoder.hidden", d_x + d_c, h, &mut rng),
            mu: Linear::new(&mut ids, "encoder.mu", h, d_z, &mut rng),
            logvar: Linear::new(&mut ids, "encoder.logvar", h, d_z, &mut rng),
            d_x,
            d_c,
            slope,
        };
        let generator = GeneratorNet {
            hidden: Linear::new(&mut ids, "generator.hidden", d_z + d_c, h, &mut rng),
            out: Linear::new(&mut ids, "generator.out", h, d_x, &mut rng),
            d_z,
            d_c,
            slope,
        };
        let d1 = CriticNet {
            hidden: Linear::new(&mut ids, "d1.hidden", d_x + d_c, h, &mut rng),
            out: Linear::new(&mut ids, "d1.out", h, 1, &mut rng),
            conditional: true,
            d_x,
            d_c,
            slope,
        };
        let d2 = CriticNet {
            hidden: Linear::new(&mut ids, "d2.hidden", d_x, h, &mut rng),
            out: Linear::new(&mut ids, "d2.out", h, 1, &mut rng),
            conditional: false,
            d_x,
            d_c,
            slope,
        };
        Ok(Self {
            spec,
            encoder,
            generator,
            d1,
            d2,
        })
    }

    pub fn parameters(&self) -> Vec<&Parameter> {
        let mut v = self.encoder.parameters();
        v.extend(self.generator.parameters());
        v.extend(self.d1.parameters());
        v.extend(self.d2.parameters());
        v
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let Self {
            encoder,
            generator,
            d1,
            d2,
            ..
        } = self;
        let mut v = encoder.parameters_mut();
        v.extend(generator.parameters_mut());
        v.extend(d1.parameters_mut());
        v.extend(d2.parameters_mut());
        v
    }
}

/// Order-sensitive FNV-1a checksum over parameter bits.
pub fn checksum<'a>(params: impl IntoIterator<Item = &'a Parameter>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for p in params {
        for v in p.value.data() {
            for b in v.to_bits().to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
    }
    h
}
