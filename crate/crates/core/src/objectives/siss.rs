use rand::{Rng, RngCore};

use super::{evaluate_plain, require_rows, LossContext, LossOutput, Objective, UnlearnBatch};
use crate::diffusion::{forward_noise, weighted_sq_error, EpsModel, NoiseSchedule};
use crate::error::{Error, Result};
use crate::numerics::{Graph, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SissConfig {
    lambda: f64,
    beta_siss: f64,
    importance_sampling: bool,
}

impl SissConfig {
    pub fn new(lambda: f64, beta_siss: f64, importance_sampling: bool) -> Result<Self> {
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(Error::invalid(format!(
                "mixture proportion {lambda} must lie in (0, 1)"
            )));
        }
        if !(beta_siss >= 0.0 && beta_siss.is_finite()) {
            return Err(Error::invalid(format!(
                "amplifier beta={beta_siss} must be >= 0"
            )));
        }
        Ok(SissConfig {
            lambda,
            beta_siss,
            importance_sampling,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn beta_siss(&self) -> f64 {
        self.beta_siss
    }

    pub fn importance_sampling(&self) -> bool {
        self.importance_sampling
    }
}

/// Mixture component a noisy sample was drawn from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    Forget,
    Retain,
}

/// Draws `m_t ~ (1-λ)·q(·|x') + λ·q(·|x)`: a Bernoulli(λ) choice of anchor,
/// then forward noising of that anchor.
pub fn siss_sample_mixture<R: Rng + ?Sized>(
    forget: &Tensor,
    retain: &Tensor,
    t: usize,
    lambda: f64,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<(Tensor, Branch)> {
    forget.expect_same_shape(retain, "siss mixture")?;
    let branch = if rng.random::<f64>() < lambda {
        Branch::Forget
    } else {
        Branch::Retain
    };
    let anchor = match branch {
        Branch::Forget => forget,
        Branch::Retain => retain,
    };
    let eps = Tensor::randn(anchor.shape(), rng);
    Ok((forward_noise(anchor, t, &eps, sched)?, branch))
}

/// Gaussian log-density of `m` under `q(m_t | anchor)`, up to a constant
/// shared by every anchor at the same `t`.
fn log_q(m: &[f64], anchor: &[f64], t: usize, sched: &NoiseSchedule) -> f64 {
    let a = sched.alpha_bar(t).sqrt();
    let var = 1.0 - sched.alpha_bar(t);
    let sq: f64 = m
        .iter()
        .zip(anchor)
        .map(|(mi, xi)| (mi - a * xi).powi(2))
        .sum();
    -0.5 * sq / var
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let hi = a.max(b);
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + ((a - hi).exp() + (b - hi).exp()).ln()
}

/// Importance weights `(w_keep, w_forget) = (q(m|x'), q(m|x)) / q_λ(m|x,x')`.
pub fn siss_weights(
    m: &[f64],
    forget: &[f64],
    retain: &[f64],
    t: usize,
    lambda: f64,
    sched: &NoiseSchedule,
) -> Result<(f64, f64)> {
    sched.check(t)?;
    if m.len() != forget.len() || m.len() != retain.len() {
        return Err(Error::ShapeMismatch {
            op: "siss weights",
            left: vec![m.len()],
            right: vec![forget.len(), retain.len()],
        });
    }
    let lf = log_q(m, forget, t, sched);
    let lk = log_q(m, retain, t, sched);
    if !lf.is_finite() || !lk.is_finite() {
        return Err(Error::NonFinite("siss log-density".into()));
    }
    let lmix = log_add_exp((1.0 - lambda).ln() + lk, lambda.ln() + lf);
    Ok(((lk - lmix).exp(), (lf - lmix).exp()))
}

/// Mixture-sampled unlearning with importance weights: a kept term toward the
/// retain anchor minus an amplified term toward the forget anchor.
///
/// Each forget row is paired with a uniformly drawn retain row.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Siss {
    pub config: SissConfig,
}

impl Objective for Siss {
    fn name(&self) -> &str {
        "siss"
    }

    fn loss(&self, ctx: &mut LossContext<'_>) -> Result<LossOutput> {
        let batch = ctx.batch;
        require_rows(&batch.forget, "forget")?;
        require_rows(&batch.retain, "retain")?;
        let n = batch.forget.rows();
        let d = batch.forget.row_len();
        let cfg = self.config;
        let sched = ctx.sched;

        let t = ctx.forget_timesteps(n)?;
        let pairing: Vec<usize> = (0..n)
            .map(|_| ctx.rng.random_range(0..batch.retain.rows()))
            .collect();
        let branches: Vec<Branch> = (0..n)
            .map(|_| {
                if ctx.rng.random::<f64>() < cfg.lambda {
                    Branch::Forget
                } else {
                    Branch::Retain
                }
            })
            .collect();
        let eps = ctx.noise(&[n, d]);

        let mut m = Vec::with_capacity(n * d);
        let mut keep_target = Vec::with_capacity(n * d);
        let mut forget_target = Vec::with_capacity(n * d);
        let mut keep_w = Vec::with_capacity(n);
        let mut forget_w = Vec::with_capacity(n);
        for i in 0..n {
            let x = batch.forget.row(i);
            let xr = batch.retain.row(pairing[i]);
            let anchor = match branches[i] {
                Branch::Forget => x,
                Branch::Retain => xr,
            };
            let a = sched.alpha_bar(t[i]).sqrt();
            let s = sched.sigma(t[i]);
            let mi: Vec<f64> = anchor
                .iter()
                .zip(eps.row(i))
                .map(|(v, e)| a * v + s * e)
                .collect();
            keep_target.extend(mi.iter().zip(xr).map(|(mv, v)| (mv - a * v) / s));
            forget_target.extend(mi.iter().zip(x).map(|(mv, v)| (mv - a * v) / s));
            let (wk, wf) = if cfg.importance_sampling {
                siss_weights(&mi, x, xr, t[i], cfg.lambda, sched)?
            } else {
                (1.0, 1.0)
            };
            let wt = sched.loss_weight(t[i]);
            keep_w.push(wt * wk);
            forget_w.push(wt * wf);
            m.extend(mi);
        }
        let m = Tensor::new(vec![n, d], m)?;
        let keep_target = Tensor::new(vec![n, d], keep_target)?;
        let forget_target = Tensor::new(vec![n, d], forget_target)?;

        let sel = ctx.selection;
        let forget_pred = ctx.predict(sel.forget_input(&m)?, &t)?;
        let keep_pred = if sel.filters_forget() && !sel.filters_retain() {
            ctx.predict(sel.retain_input(&m)?, &t)?
        } else {
            forget_pred
        };
        let keep = weighted_sq_error(
            ctx.graph,
            keep_pred,
            &sel.retain_target(&keep_target)?,
            &keep_w,
        )?;
        let forget = weighted_sq_error(
            ctx.graph,
            forget_pred,
            &sel.forget_target(&forget_target)?,
            &forget_w,
        )?;
        let amplified = ctx.graph.scale(forget, 1.0 + cfg.beta_siss)?;
        let loss = ctx.graph.sub(keep, amplified)?;
        Ok(LossOutput {
            loss,
            components: vec![
                ("keep_loss", ctx.graph.value(keep).item()),
                ("forget_loss", ctx.graph.value(forget).item()),
            ],
            forget_timesteps: t,
        })
    }
}

pub fn siss_loss(
    g: &mut Graph,
    model: &dyn EpsModel,
    params: &[Var],
    batch: &UnlearnBatch,
    sched: &NoiseSchedule,
    config: SissConfig,
    rng: &mut dyn RngCore,
) -> Result<Var> {
    evaluate_plain(&Siss { config }, g, model, params, batch, sched, rng)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn identical_anchors_give_unit_weights() {
        let s = NoiseSchedule::linear(100, 1e-4, 0.02).unwrap();
        let x = [0.3, -1.2];
        let (wk, wf) = siss_weights(&[0.5, 0.1], &x, &x, 40, 0.3, &s).unwrap();
        assert_eq!((wk, wf), (1.0, 1.0));
    }

    #[test]
    fn extreme_separation_stays_finite() {
        let s = NoiseSchedule::linear(100, 1e-4, 0.02).unwrap();
        let (wk, wf) = siss_weights(&[50.0], &[50.0], &[-50.0], 0, 0.5, &s).unwrap();
        assert!((wf - 2.0).abs() < 1e-12, "{wf}");
        assert_eq!(wk, 0.0);
    }

    #[test]
    fn lambda_one_always_forgets() {
        let s = NoiseSchedule::linear(10, 1e-3, 0.05).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::vector(vec![1.0]);
        let xr = Tensor::vector(vec![-1.0]);
        for _ in 0..1000 {
            let (_, b) = siss_sample_mixture(&x, &xr, 5, 1.0, &s, &mut rng).unwrap();
            assert_eq!(b, Branch::Forget);
        }
    }

    #[test]
    fn config_bounds() {
        assert!(SissConfig::new(0.0, 0.0, true).is_err());
        assert!(SissConfig::new(1.0, 0.0, true).is_err());
        assert!(SissConfig::new(0.5, -1.0, true).is_err());
        assert!(SissConfig::new(0.5, 0.0, false).is_ok());
    }

    #[test]
    fn nan_input_is_an_error() {
        let s = NoiseSchedule::linear(10, 1e-3, 0.05).unwrap();
        assert!(siss_weights(&[f64::NAN], &[0.0], &[1.0], 3, 0.5, &s).is_err());
    }
}
