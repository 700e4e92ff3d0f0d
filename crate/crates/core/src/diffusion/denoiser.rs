use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{Graph, Tensor, Var};

/// Anything that predicts the injected noise from `(x_t, t)` and can be
/// evaluated inside a [`Graph`].
pub trait EpsModel {
    /// Registers trainable parameters as graph leaves.
    fn bind(&self, g: &mut Graph) -> Vec<Var>;

    /// Differentiable prediction for an `[n, d]` batch with one timestep per row.
    fn forward(&self, g: &mut Graph, params: &[Var], x: Var, t: &[usize]) -> Result<Var>;

    /// Non-differentiable prediction.
    fn predict(&self, x: &Tensor, t: &[usize]) -> Result<Tensor> {
        let mut g = Graph::new();
        let params: Vec<Var> = self
            .bind(&mut g)
            .into_iter()
            .map(|p| {
                let v = g.value(p).clone();
                g.constant(v)
            })
            .collect();
        let x = g.constant(x.clone());
        let out = self.forward(&mut g, &params, x, t)?;
        Ok(g.value(out).clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Silu,
    Tanh,
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Silu => "silu",
            Activation::Tanh => "tanh",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "silu" => Ok(Activation::Silu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::invalid(format!("unknown activation '{other}'"))),
        }
    }
}

/// Shape of a [`Denoiser`]: an MLP over `[x, embed(t)]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Arch {
    pub data_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Width of the sinusoidal timestep embedding; must be even.
    pub temb_dim: usize,
}

impl Arch {
    pub fn validate(&self) -> Result<()> {
        if self.data_dim == 0 {
            return Err(Error::invalid("data_dim must be positive"));
        }
        if self.temb_dim == 0 || !self.temb_dim.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "temb_dim must be a positive even number, got {}",
                self.temb_dim
            )));
        }
        if self.hidden.contains(&0) {
            return Err(Error::invalid("hidden layer widths must be positive"));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of each linear layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut fan_in = self.data_dim + self.temb_dim;
        for &h in &self.hidden {
            dims.push((fan_in, h));
            fan_in = h;
        }
        dims.push((fan_in, self.data_dim));
        dims
    }

    /// Parameter shapes in declaration order: weight then bias per layer.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        self.layer_dims()
            .into_iter()
            .flat_map(|(i, o)| [vec![i, o], vec![1, o]])
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }
}

/// Sinusoidal embedding of integer timesteps, `[n, dim]`.
pub fn timestep_embedding(t: &[usize], dim: usize) -> Tensor {
    let half = dim / 2;
    let mut data = Vec::with_capacity(t.len() * dim);
    for &step in t {
        let step = step as f64;
        let freqs = (0..half).map(|i| (-(10_000f64.ln()) * i as f64 / half as f64).exp());
        let (sin, cos): (Vec<f64>, Vec<f64>) =
            freqs.map(|f| ((step * f).sin(), (step * f).cos())).unzip();
        data.extend(sin);
        data.extend(cos);
    }
    Tensor::new(vec![t.len(), dim], data).expect("embedding shape")
}

/// Timestep-conditioned MLP noise predictor.
#[derive(Clone, Debug, PartialEq)]
pub struct Denoiser {
    arch: Arch,
    params: Vec<Tensor>,
}

impl Denoiser {
    /// Uniform fan-in initialization of weights, zero biases.
    pub fn new<R: Rng + ?Sized>(arch: Arch, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let mut params = Vec::new();
        for (fan_in, fan_out) in arch.layer_dims() {
            let bound = (1.0 / fan_in as f64).sqrt();
            params.push(Tensor::uniform(&[fan_in, fan_out], -bound, bound, rng));
            params.push(Tensor::zeros(&[1, fan_out]));
        }
        Ok(Denoiser { arch, params })
    }

    pub fn from_params(arch: Arch, params: Vec<Tensor>) -> Result<Self> {
        arch.validate()?;
        let shapes = arch.param_shapes();
        if shapes.len() != params.len() {
            return Err(Error::invalid(format!(
                "architecture declares {} tensors, got {}",
                shapes.len(),
                params.len()
            )));
        }
        for (shape, p) in shapes.iter().zip(&params) {
            if p.shape() != shape.as_slice() {
                return Err(Error::ShapeMismatch {
                    op: "from_params",
                    left: shape.clone(),
                    right: p.shape().to_vec(),
                });
            }
        }
        Ok(Denoiser { arch, params })
    }

    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    fn activate(&self, g: &mut Graph, h: Var) -> Result<Var> {
        match self.arch.activation {
            Activation::Silu => g.silu(h),
            Activation::Tanh => g.tanh(h),
        }
    }
}

impl EpsModel for Denoiser {
    fn bind(&self, g: &mut Graph) -> Vec<Var> {
        self.params.iter().map(|p| g.param(p.clone())).collect()
    }

    fn forward(&self, g: &mut Graph, params: &[Var], x: Var, t: &[usize]) -> Result<Var> {
        let shape = g.value(x).shape().to_vec();
        if shape.len() != 2 || shape[1] != self.arch.data_dim || shape[0] != t.len() {
            return Err(Error::ShapeMismatch {
                op: "denoiser input",
                left: vec![t.len(), self.arch.data_dim],
                right: shape,
            });
        }
        let n = shape[0];
        let emb = g.constant(timestep_embedding(t, self.arch.temb_dim));
        let mut h = g.concat(&[x, emb])?;
        let layers = params.len() / 2;
        for layer in 0..layers {
            let w = params[2 * layer];
            let b = params[2 * layer + 1];
            let out_dim = g.value(w).shape()[1];
            let z = g.matmul(h, w)?;
            let bias = g.broadcast(b, &[n, out_dim])?;
            h = g.add(z, bias)?;
            if layer + 1 < layers {
                h = self.activate(g, h)?;
            }
        }
        Ok(h)
    }
}
