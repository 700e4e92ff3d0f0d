//! Preference-style forget losses.
//!
//! Both losses compare per-sample ε-matching errors of the trained model with
//! those of a frozen reference snapshot on shared `(t, ε)` draws. Retain
//! samples play the preferred role and forget samples the dispreferred one.

use std::sync::Arc;

use rand::{Rng, RngCore};

use super::{evaluate_plain, require_rows, LossContext, LossOutput, Objective, UnlearnBatch};
use crate::diffusion::{
    forward_noise_rows, per_sample_sq_error, Denoiser, EpsModel, NoiseSchedule,
};
use crate::error::{Error, Result};
use crate::numerics::{Graph, Tensor, Var};

#[derive(Clone, Debug)]
pub struct PreferenceConfig {
    pub beta_pref: f64,
    pub reference: Option<Arc<Denoiser>>,
    pub w_desirable: f64,
    pub w_undesirable: f64,
    /// Fixed KTO reference point. `None` uses the detached batch-mean reward,
    /// which makes the loss a surrogate whose gradient ignores how the
    /// reference point moves with the parameters.
    pub kto_z_ref: Option<f64>,
}

impl PreferenceConfig {
    pub fn new(beta_pref: f64, reference: Option<Arc<Denoiser>>) -> Result<Self> {
        if !(beta_pref > 0.0 && beta_pref.is_finite()) {
            return Err(Error::invalid(format!(
                "preference beta={beta_pref} must be > 0"
            )));
        }
        Ok(PreferenceConfig {
            beta_pref,
            reference,
            w_desirable: 1.0,
            w_undesirable: 1.0,
            kto_z_ref: None,
        })
    }

    pub fn with_kto_weights(mut self, w_desirable: f64, w_undesirable: f64) -> Self {
        self.w_desirable = w_desirable;
        self.w_undesirable = w_undesirable;
        self
    }

    pub fn with_kto_reference_point(mut self, z_ref: f64) -> Self {
        self.kto_z_ref = Some(z_ref);
        self
    }

    fn reference(&self) -> Result<&Denoiser> {
        self.reference.as_deref().ok_or(Error::MissingReference)
    }
}

/// Per-sample weighted errors of the trained model (graph node, `[n, 1]`) and
/// of the reference (plain values) on the same noisy inputs.
struct Errors {
    model: Var,
    reference: Vec<f64>,
}

fn errors(
    ctx: &mut LossContext<'_>,
    reference: &Denoiser,
    x0: &Tensor,
    t: &[usize],
    eps: &Tensor,
    forget_branch: bool,
) -> Result<Errors> {
    let sel = ctx.selection;
    let xt = forward_noise_rows(x0, t, eps, ctx.sched)?;
    let (input, target) = if forget_branch {
        (sel.forget_input(&xt)?, sel.forget_target(eps)?)
    } else {
        (sel.retain_input(&xt)?, sel.retain_target(eps)?)
    };
    let weights = ctx.loss_weights(t);
    let ref_pred = reference.predict(&input, t)?;
    let d = target.row_len() as f64;
    let reference_err = (0..t.len())
        .map(|i| {
            let sq: f64 = ref_pred
                .row(i)
                .iter()
                .zip(target.row(i))
                .map(|(p, e)| (p - e).powi(2))
                .sum();
            weights[i] * sq / d
        })
        .collect();
    let pred = ctx.predict(input, t)?;
    let err = per_sample_sq_error(ctx.graph, pred, &target)?;
    let model = if weights.iter().all(|&w| w == 1.0) {
        err
    } else {
        let w = ctx.graph.constant(Tensor::new(vec![t.len(), 1], weights)?);
        ctx.graph.mul(err, w)?
    };
    Ok(Errors {
        model,
        reference: reference_err,
    })
}

/// `err_θ - err_ref` as a graph node.
fn margin(g: &mut Graph, e: &Errors) -> Result<Var> {
    let n = e.reference.len();
    let r = g.constant(Tensor::new(vec![n, 1], e.reference.clone())?);
    g.sub(e.model, r)
}

/// Diffusion-DPO with retain as winner and forget as loser:
/// `-log σ(-β·[(err_θ(retain) - err_ref(retain)) - (err_θ(forget) - err_ref(forget))])`.
#[derive(Clone, Debug)]
pub struct Dpo {
    pub config: PreferenceConfig,
}

impl Objective for Dpo {
    fn name(&self) -> &str {
        "dpo"
    }

    fn loss(&self, ctx: &mut LossContext<'_>) -> Result<LossOutput> {
        let reference = self.config.reference()?;
        let batch = ctx.batch;
        require_rows(&batch.forget, "forget")?;
        require_rows(&batch.retain, "retain")?;
        let n = batch.forget.rows();
        let t = ctx.forget_timesteps(n)?;
        let pairing: Vec<usize> = (0..n)
            .map(|_| ctx.rng.random_range(0..batch.retain.rows()))
            .collect();
        let eps = ctx.noise(batch.forget.shape());
        let winners = batch.retain.select_rows(&pairing);

        let lose = errors(ctx, reference, &batch.forget, &t, &eps, true)?;
        let win = errors(ctx, reference, &winners, &t, &eps, false)?;
        let g = &mut *ctx.graph;
        let win_margin = margin(g, &win)?;
        let lose_margin = margin(g, &lose)?;
        let gap = g.sub(win_margin, lose_margin)?;
        // -log σ(-β·gap) = softplus(β·gap)
        let scaled = g.scale(gap, self.config.beta_pref)?;
        let per_pair = g.softplus(scaled)?;
        let loss = g.mean(per_pair)?;
        Ok(LossOutput {
            loss,
            components: vec![
                ("forget_err", mean(g.value(lose.model).data())),
                ("retain_err", mean(g.value(win.model).data())),
            ],
            forget_timesteps: t,
        })
    }
}

/// Pair-free KTO. With implicit rewards `r = -β·(err_θ - err_ref)` and the
/// detached batch-mean reward `z`, the loss is
/// `w_u·mean_forget σ(r - z) + w_d·mean_retain (1 - σ(r - z))`, or with a
/// fixed `z` when the config supplies one.
/// An empty group contributes nothing.
#[derive(Clone, Debug)]
pub struct Kto {
    pub config: PreferenceConfig,
}

impl Objective for Kto {
    fn name(&self) -> &str {
        "kto"
    }

    fn loss(&self, ctx: &mut LossContext<'_>) -> Result<LossOutput> {
        let reference = self.config.reference()?;
        let batch = ctx.batch;
        require_rows(&batch.forget, "forget")?;
        let beta = self.config.beta_pref;
        let nf = batch.forget.rows();
        let t = ctx.forget_timesteps(nf)?;
        let eps = ctx.noise(batch.forget.shape());
        let forget = errors(ctx, reference, &batch.forget, &t, &eps, true)?;
        let retain = if batch.retain.rows() > 0 {
            let tr = ctx.retain_timesteps(batch.retain.rows())?;
            let eps_r = ctx.noise(batch.retain.shape());
            Some(errors(ctx, reference, &batch.retain, &tr, &eps_r, false)?)
        } else {
            None
        };

        let g = &mut *ctx.graph;
        let reward = |g: &Graph, e: &Errors| -> Vec<f64> {
            g.value(e.model)
                .data()
                .iter()
                .zip(&e.reference)
                .map(|(m, r)| -beta * (m - r))
                .collect()
        };
        let mut rewards = reward(g, &forget);
        if let Some(r) = &retain {
            rewards.extend(reward(g, r));
        }
        let z_ref = self.config.kto_z_ref.unwrap_or_else(|| mean(&rewards));

        let fm = margin(g, &forget)?;
        let fr = g.scale(fm, -beta)?;
        let fz = g.add_scalar(fr, -z_ref)?;
        let fs = g.sigmoid(fz)?;
        let fmean = g.mean(fs)?;
        let mut loss = g.scale(fmean, self.config.w_undesirable)?;
        let mut components = vec![("forget_term", g.value(loss).item()), ("z_ref", z_ref)];

        if let Some(r) = &retain {
            let rm = margin(g, r)?;
            let rr = g.scale(rm, -beta)?;
            let rz = g.add_scalar(rr, -z_ref)?;
            // 1 - σ(x) = σ(-x)
            let neg = g.scale(rz, -1.0)?;
            let rs = g.sigmoid(neg)?;
            let rmean = g.mean(rs)?;
            let term = g.scale(rmean, self.config.w_desirable)?;
            components.push(("retain_term", g.value(term).item()));
            loss = g.add(loss, term)?;
        }
        Ok(LossOutput {
            loss,
            components,
            forget_timesteps: t,
        })
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

pub fn dpo_forget_loss(
    g: &mut Graph,
    model: &dyn EpsModel,
    params: &[Var],
    batch: &UnlearnBatch,
    sched: &NoiseSchedule,
    config: &PreferenceConfig,
    rng: &mut dyn RngCore,
) -> Result<Var> {
    let objective = Dpo {
        config: config.clone(),
    };
    evaluate_plain(&objective, g, model, params, batch, sched, rng)
}

pub fn kto_forget_loss(
    g: &mut Graph,
    model: &dyn EpsModel,
    params: &[Var],
    batch: &UnlearnBatch,
    sched: &NoiseSchedule,
    config: &PreferenceConfig,
    rng: &mut dyn RngCore,
) -> Result<Var> {
    let objective = Kto {
        config: config.clone(),
    };
    evaluate_plain(&objective, g, model, params, batch, sched, rng)
}
