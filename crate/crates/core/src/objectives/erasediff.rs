use rand::RngCore;

use super::{evaluate_plain, require_rows, LossContext, LossOutput, Objective, UnlearnBatch};
use crate::diffusion::{forward_noise_rows, weighted_sq_error, EpsModel, NoiseSchedule};
use crate::error::Result;
use crate::numerics::{Graph, Var};

/// Regresses forget-sample predictions onto fresh, data-independent noise
/// `ε'` while training normally on the retain batch scaled by `beta_retain`.
///
/// The retain batch may be empty only when `beta_retain` is zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EraseDiff {
    pub beta_retain: f64,
}

impl Objective for EraseDiff {
    fn name(&self) -> &str {
        "erasediff"
    }

    fn loss(&self, ctx: &mut LossContext<'_>) -> Result<LossOutput> {
        let forget = &ctx.batch.forget;
        require_rows(forget, "forget")?;
        if self.beta_retain > 0.0 {
            require_rows(&ctx.batch.retain, "retain")?;
        }
        let n = forget.rows();
        let t = ctx.forget_timesteps(n)?;
        let eps = ctx.noise(forget.shape());
        let eps_fresh = ctx.noise(forget.shape());
        let xt = forward_noise_rows(forget, &t, &eps, ctx.sched)?;
        let input = ctx.selection.forget_input(&xt)?;
        let target = ctx.selection.forget_target(&eps_fresh)?;
        let pred = ctx.predict(input, &t)?;
        let weights = ctx.loss_weights(&t);
        let forget_loss = weighted_sq_error(ctx.graph, pred, &target, &weights)?;
        let mut components = vec![("forget_loss", ctx.graph.value(forget_loss).item())];
        let mut loss = forget_loss;

        let retain = &ctx.batch.retain;
        if self.beta_retain > 0.0 {
            let tr = ctx.retain_timesteps(retain.rows())?;
            let eps_r = ctx.noise(retain.shape());
            let xr = forward_noise_rows(retain, &tr, &eps_r, ctx.sched)?;
            let input = ctx.selection.retain_input(&xr)?;
            let target = ctx.selection.retain_target(&eps_r)?;
            let pred = ctx.predict(input, &tr)?;
            let weights = ctx.loss_weights(&tr);
            let retain_loss = weighted_sq_error(ctx.graph, pred, &target, &weights)?;
            components.push(("retain_loss", ctx.graph.value(retain_loss).item()));
            let scaled = ctx.graph.scale(retain_loss, self.beta_retain)?;
            loss = ctx.graph.add(loss, scaled)?;
        }
        Ok(LossOutput {
            loss,
            components,
            forget_timesteps: t,
        })
    }
}

pub fn erasediff_loss(
    g: &mut Graph,
    model: &dyn EpsModel,
    params: &[Var],
    batch: &UnlearnBatch,
    sched: &NoiseSchedule,
    beta_retain: f64,
    rng: &mut dyn RngCore,
) -> Result<Var> {
    evaluate_plain(
        &EraseDiff { beta_retain },
        g,
        model,
        params,
        batch,
        sched,
        rng,
    )
}
