use rand::Rng;

use crate::diffusion::{forward_noise, weighted_sq_error, EpsModel, NoiseSchedule};
use crate::error::{Error, Result};
use crate::numerics::{Graph, Tensor};
use crate::selective::{low_pass_slice, FrequencyFilterConfig, ImageShape, TimeWindowConfig};

/// Squared parameter-gradient norm of the weighted ε-matching loss of one
/// sample, with `input` fed to the model in place of `x_t`.
pub fn grad_norm_at(
    model: &dyn EpsModel,
    input: &Tensor,
    t: usize,
    eps: &Tensor,
    sched: &NoiseSchedule,
) -> Result<f64> {
    sched.check(t)?;
    let mut g = Graph::new();
    let params = model.bind(&mut g);
    let x = g.constant(input.clone());
    let pred = model.forward(&mut g, &params, x, &[t])?;
    let loss = weighted_sq_error(&mut g, pred, eps, &[sched.loss_weight(t)])?;
    let grads = g.backward(loss)?;
    Ok(params.iter().map(|&p| grads.get(p).norm_sq()).sum())
}

fn as_row(x0: &Tensor) -> Result<Tensor> {
    match x0.shape() {
        [1, _] => Ok(x0.clone()),
        [d] => x0.clone().reshape(vec![1, *d]),
        [h, w] => x0.clone().reshape(vec![1, h * w]),
        other => Err(Error::invalid(format!(
            "expected a single sample, got shape {other:?}"
        ))),
    }
}

fn draw_t<R: Rng + ?Sized>(
    sched: &NoiseSchedule,
    window: Option<&TimeWindowConfig>,
    rng: &mut R,
) -> usize {
    match window {
        Some(w) => w.sample(rng),
        None => rng.random_range(0..sched.steps()),
    }
}

/// `‖∇_θ L(x0)‖²` averaged over `n_draws` draws of `(t, ε)`. Timesteps are
/// uniform, or drawn from `window` for stage-wise curves.
pub fn grad_norm_of<R: Rng + ?Sized>(
    model: &dyn EpsModel,
    x0: &Tensor,
    sched: &NoiseSchedule,
    n_draws: usize,
    window: Option<&TimeWindowConfig>,
    rng: &mut R,
) -> Result<f64> {
    if n_draws == 0 {
        return Err(Error::invalid("n_draws must be at least 1"));
    }
    let x0 = as_row(x0)?;
    let mut total = 0.0;
    for _ in 0..n_draws {
        let t = draw_t(sched, window, rng);
        let eps = Tensor::randn(x0.shape(), rng);
        let xt = forward_noise(&x0, t, &eps, sched)?;
        total += grad_norm_at(model, &xt, t, &eps, sched)?;
    }
    Ok(total / n_draws as f64)
}

/// Gradient norm per timestep band: `bins` equal windows over `[0, T)`,
/// `n_draws` uniform draws inside each.
pub fn grad_norm_curve<R: Rng + ?Sized>(
    model: &dyn EpsModel,
    x0: &Tensor,
    sched: &NoiseSchedule,
    bins: usize,
    n_draws: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let steps = sched.steps();
    if bins == 0 || bins > steps {
        return Err(Error::invalid(format!(
            "bins={bins} must be in 1..={steps}"
        )));
    }
    (0..bins)
        .map(|b| {
            let window =
                TimeWindowConfig::new(0.0, b * steps / bins, (b + 1) * steps / bins, steps)?;
            grad_norm_of(model, x0, sched, n_draws, Some(&window), rng)
        })
        .collect()
}

/// Low/high split of one noisy input: `low = low_pass(x_t, cutoff, s=0)`,
/// `high = x_t - low`.
pub fn split_frequencies(
    xt: &[f64],
    shape: ImageShape,
    cutoff: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let cfg = FrequencyFilterConfig::new(cutoff, 0.0)?;
    let low = low_pass_slice(xt, shape, &cfg)?;
    let high = xt.iter().zip(&low).map(|(x, l)| x - l).collect();
    Ok((low, high))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FreqGradNorm {
    pub low: f64,
    pub high: f64,
}

/// [`grad_norm_of`] with the low- and high-frequency parts of `x_t` fed to
/// the model separately, against the same ε target.
#[allow(clippy::too_many_arguments)]
pub fn freq_decomposed_grad_norm<R: Rng + ?Sized>(
    model: &dyn EpsModel,
    x0: &Tensor,
    shape: ImageShape,
    sched: &NoiseSchedule,
    cutoff: f64,
    n_draws: usize,
    window: Option<&TimeWindowConfig>,
    rng: &mut R,
) -> Result<FreqGradNorm> {
    if !(cutoff > 0.0 && cutoff < 1.0) {
        return Err(Error::invalid(format!(
            "cutoff={cutoff} must lie in (0, 1)"
        )));
    }
    if n_draws == 0 {
        return Err(Error::invalid("n_draws must be at least 1"));
    }
    let x0 = as_row(x0)?;
    if x0.numel() != shape.numel() {
        return Err(Error::ShapeMismatch {
            op: "freq_decomposed_grad_norm",
            left: vec![shape.height, shape.width],
            right: x0.shape().to_vec(),
        });
    }
    let (mut low, mut high) = (0.0, 0.0);
    for _ in 0..n_draws {
        let t = draw_t(sched, window, rng);
        let eps = Tensor::randn(x0.shape(), rng);
        let xt = forward_noise(&x0, t, &eps, sched)?;
        let (lo, hi) = split_frequencies(xt.data(), shape, cutoff)?;
        low += grad_norm_at(model, &Tensor::new(vec![1, lo.len()], lo)?, t, &eps, sched)?;
        high += grad_norm_at(model, &Tensor::new(vec![1, hi.len()], hi)?, t, &eps, sched)?;
    }
    let n = n_draws as f64;
    Ok(FreqGradNorm {
        low: low / n,
        high: high / n,
    })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::diffusion::{Activation, Arch, Denoiser};

    fn linear_model(temb: usize, w: f64) -> Denoiser {
        // hidden = [] makes the model ε̂ = [x, emb]·W + b
        let arch = Arch {
            data_dim: 1,
            hidden: vec![],
            activation: Activation::Silu,
            temb_dim: temb,
        };
        let mut weight = vec![0.0; 1 + temb];
        weight[0] = w;
        Denoiser::from_params(
            arch,
            vec![
                Tensor::new(vec![1 + temb, 1], weight).unwrap(),
                Tensor::zeros(&[1, 1]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn hand_computed_linear_gradient() {
        // ε̂ = w·x + <v, emb> + b with v = 0. L = (ε̂ - ε)²,
        // dL/dw = 2r·x, dL/dv = 2r·emb, dL/db = 2r with r = ε̂ - ε.
        let sched = NoiseSchedule::linear(10, 1e-4, 0.02).unwrap();
        let model = linear_model(2, 0.7);
        let (x, t, eps) = (0.4, 3usize, -0.9);
        let got = grad_norm_at(
            &model,
            &Tensor::new(vec![1, 1], vec![x]).unwrap(),
            t,
            &Tensor::new(vec![1, 1], vec![eps]).unwrap(),
            &sched,
        )
        .unwrap();
        let r = 0.7 * x - eps;
        let emb = [(t as f64).sin(), (t as f64).cos()];
        let want = (2.0 * r * x).powi(2)
            + emb.iter().map(|e| (2.0 * r * e).powi(2)).sum::<f64>()
            + (2.0 * r).powi(2);
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn zero_at_exact_optimum() {
        // ε̂(x_t) = (x_t - √ᾱ·x0)/σ is exact for x0 = 0 with w = 1/σ at a
        // single level; restrict draws to t = 0.
        let sched = NoiseSchedule::linear(2, 0.5, 0.5).unwrap();
        let model = linear_model(2, 1.0 / sched.sigma(0));
        let window = TimeWindowConfig::new(0.0, 0, 1, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x0 = Tensor::zeros(&[1, 1]);
        let v = grad_norm_of(&model, &x0, &sched, 5, Some(&window), &mut rng).unwrap();
        assert!(v < 1e-20, "{v}");
    }

    #[test]
    fn seeded_reproducible() {
        let sched = NoiseSchedule::linear(50, 1e-4, 0.02).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let arch = Arch {
            data_dim: 16,
            hidden: vec![8],
            activation: Activation::Silu,
            temb_dim: 4,
        };
        let model = Denoiser::new(arch, &mut rng).unwrap();
        let x0 = Tensor::uniform(&[1, 16], -1.0, 1.0, &mut rng);
        let shape = ImageShape::new(4, 4);
        let run = |seed| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            freq_decomposed_grad_norm(&model, &x0, shape, &sched, 0.1, 3, None, &mut r).unwrap()
        };
        assert_eq!(run(9), run(9));
        let curve =
            grad_norm_curve(&model, &x0, &sched, 5, 2, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(curve.len(), 5);
        assert!(curve.iter().all(|v| v.is_finite() && *v >= 0.0));
    }

    #[test]
    fn split_reconstructs_and_constant_has_no_high_part() {
        let shape = ImageShape::new(8, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::randn(&[64], &mut rng);
        let (lo, hi) = split_frequencies(x.data(), shape, 0.1).unwrap();
        for i in 0..64 {
            assert!((lo[i] + hi[i] - x.data()[i]).abs() < 1e-9);
        }
        let (_, hi) = split_frequencies(&[0.3; 64], shape, 0.1).unwrap();
        assert!(hi.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn zero_draws_rejected() {
        let sched = NoiseSchedule::linear(4, 1e-4, 0.02).unwrap();
        let model = linear_model(2, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(grad_norm_of(&model, &Tensor::zeros(&[1, 1]), &sched, 0, None, &mut rng).is_err());
    }
}
