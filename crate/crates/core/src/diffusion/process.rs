use rand::Rng;

use super::denoiser::EpsModel;
use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::numerics::{Graph, Tensor, Var};

/// `sqrt(alpha_bar_t)·x0 + sqrt(1 - alpha_bar_t)·eps`.
pub fn forward_noise(x0: &Tensor, t: usize, eps: &Tensor, sched: &NoiseSchedule) -> Result<Tensor> {
    sched.check(t)?;
    let a = sched.alpha_bar(t).sqrt();
    let s = sched.sigma(t);
    x0.zip_map(eps, "forward_noise", |x, e| a * x + s * e)
}

/// Row-wise [`forward_noise`] with one timestep per row of an `[n, d]` batch.
pub fn forward_noise_rows(
    x0: &Tensor,
    t: &[usize],
    eps: &Tensor,
    sched: &NoiseSchedule,
) -> Result<Tensor> {
    x0.expect_same_shape(eps, "forward_noise")?;
    if t.len() != x0.rows() {
        return Err(Error::ShapeMismatch {
            op: "forward_noise timesteps",
            left: vec![x0.rows()],
            right: vec![t.len()],
        });
    }
    let d = x0.row_len();
    let mut out = Vec::with_capacity(x0.numel());
    for (i, &ti) in t.iter().enumerate() {
        sched.check(ti)?;
        let a = sched.alpha_bar(ti).sqrt();
        let s = sched.sigma(ti);
        out.extend(x0.row(i).iter().zip(eps.row(i)).map(|(x, e)| a * x + s * e));
    }
    Tensor::new(vec![t.len(), d], out)
}

/// `(1/(n·d)) · Σ_i w_i · ‖pred_i - target_i‖²` as a graph node.
pub fn weighted_sq_error(
    g: &mut Graph,
    pred: Var,
    target: &Tensor,
    row_weights: &[f64],
) -> Result<Var> {
    let shape = g.value(pred).shape().to_vec();
    if shape != target.shape() {
        return Err(Error::ShapeMismatch {
            op: "squared error",
            left: shape,
            right: target.shape().to_vec(),
        });
    }
    let target = g.constant(target.clone());
    let diff = g.sub(pred, target)?;
    let sq = g.square(diff)?;
    if row_weights.iter().all(|&w| w == 1.0) {
        return g.mean(sq);
    }
    let d = shape[1..].iter().product::<usize>();
    let weights: Vec<f64> = row_weights
        .iter()
        .flat_map(|&w| std::iter::repeat_n(w, d))
        .collect();
    let w = g.constant(Tensor::new(shape, weights)?);
    let weighted = g.mul(sq, w)?;
    g.mean(weighted)
}

/// Per-row mean squared error, `[n, 1]`.
pub fn per_sample_sq_error(g: &mut Graph, pred: Var, target: &Tensor) -> Result<Var> {
    let shape = g.value(pred).shape().to_vec();
    if shape != target.shape() {
        return Err(Error::ShapeMismatch {
            op: "squared error",
            left: shape,
            right: target.shape().to_vec(),
        });
    }
    let d = target.row_len();
    let target = g.constant(target.clone());
    let diff = g.sub(pred, target)?;
    let sq = g.square(diff)?;
    let sums = g.sum_rows(sq)?;
    g.scale(sums, 1.0 / d as f64)
}

/// ε-matching loss: mean over the batch of `w_t · ‖ε̂(x_t, t) - ε‖²`,
/// normalized per element.
pub fn epsilon_loss<M: EpsModel + ?Sized>(
    g: &mut Graph,
    model: &M,
    params: &[Var],
    x0: &Tensor,
    t: &[usize],
    eps: &Tensor,
    sched: &NoiseSchedule,
) -> Result<Var> {
    let xt = forward_noise_rows(x0, t, eps, sched)?;
    let input = g.constant(xt);
    let pred = model.forward(g, params, input, t)?;
    let weights: Vec<f64> = t.iter().map(|&ti| sched.loss_weight(ti)).collect();
    weighted_sq_error(g, pred, eps, &weights)
}

/// One DDPM ancestral step from timestep `t` to `t - 1`, or to clean data at
/// `t = 0`. `noise` is ignored at `t = 0`; `None` gives the posterior mean.
pub fn reverse_step<M: EpsModel + ?Sized>(
    model: &M,
    xt: &Tensor,
    t: usize,
    sched: &NoiseSchedule,
    noise: Option<&Tensor>,
) -> Result<Tensor> {
    sched.check(t)?;
    let eps_hat = model.predict(xt, &vec![t; xt.rows()])?;
    let coef = sched.beta(t) / sched.sigma(t);
    let inv_sqrt_alpha = 1.0 / sched.alpha(t).sqrt();
    let mut mean = xt.zip_map(&eps_hat, "reverse_step", |x, e| {
        inv_sqrt_alpha * (x - coef * e)
    })?;
    if t > 0 {
        if let Some(z) = noise {
            let std = sched.posterior_variance(t).sqrt();
            mean = mean.zip_map(z, "reverse_step noise", |m, z| m + std * z)?;
        }
    }
    if !mean.all_finite() {
        return Err(Error::NonFinite(format!("reverse step at t={t}")));
    }
    Ok(mean)
}

/// Memorization probe: noise `x0` with `t_start` forward steps, then run
/// `t_start` reverse steps back to clean data. `t_start = 0` is the identity.
pub fn denoise_from<M: EpsModel + ?Sized, R: Rng + ?Sized>(
    model: &M,
    x0: &Tensor,
    t_start: usize,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<Tensor> {
    if t_start == 0 {
        return Ok(x0.clone());
    }
    if t_start > sched.steps() {
        return Err(Error::TimestepOutOfRange {
            t: t_start,
            steps: sched.steps() + 1,
        });
    }
    let level = t_start - 1;
    let eps = Tensor::randn(x0.shape(), rng);
    let mut x = forward_noise(x0, level, &eps, sched)?;
    for t in (0..=level).rev() {
        let z = Tensor::randn(x.shape(), rng);
        x = reverse_step(model, &x, t, sched, Some(&z))?;
    }
    Ok(x)
}

/// `n` ancestral samples started from pure Gaussian noise.
pub fn sample<M: EpsModel + ?Sized, R: Rng + ?Sized>(
    model: &M,
    data_dim: usize,
    sched: &NoiseSchedule,
    n: usize,
    rng: &mut R,
) -> Result<Tensor> {
    if n == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    let mut x = Tensor::randn(&[n, data_dim], rng);
    for t in (0..sched.steps()).rev() {
        let z = Tensor::randn(x.shape(), rng);
        x = reverse_step(model, &x, t, sched, Some(&z))?;
    }
    Ok(x)
}
