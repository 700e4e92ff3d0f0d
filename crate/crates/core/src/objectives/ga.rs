use rand::RngCore;

use super::{evaluate_plain, require_rows, LossContext, LossOutput, Objective, UnlearnBatch};
use crate::diffusion::{forward_noise_rows, weighted_sq_error, EpsModel, NoiseSchedule};
use crate::error::Result;
use crate::numerics::{Graph, Var};

/// Gradient ascent on the forget set: descent on the negated ε-matching loss.
///
/// With `retain_weight > 0` an ordinary ε-matching term on the retain batch is
/// added, giving the forget-and-retain composition `-L_F + w·L_R`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GradientAscent {
    pub retain_weight: f64,
}

impl Objective for GradientAscent {
    fn name(&self) -> &str {
        "ga"
    }

    fn loss(&self, ctx: &mut LossContext<'_>) -> Result<LossOutput> {
        let forget = &ctx.batch.forget;
        require_rows(forget, "forget")?;
        let n = forget.rows();
        let t = ctx.forget_timesteps(n)?;
        let eps = ctx.noise(forget.shape());
        let xt = forward_noise_rows(forget, &t, &eps, ctx.sched)?;
        let input = ctx.selection.forget_input(&xt)?;
        let target = ctx.selection.forget_target(&eps)?;
        let pred = ctx.predict(input, &t)?;
        let weights = ctx.loss_weights(&t);
        let forget_loss = weighted_sq_error(ctx.graph, pred, &target, &weights)?;
        let mut loss = ctx.graph.scale(forget_loss, -1.0)?;
        let mut components = vec![("forget_loss", ctx.graph.value(forget_loss).item())];

        if self.retain_weight > 0.0 {
            let retain = &ctx.batch.retain;
            require_rows(retain, "retain")?;
            let tr = ctx.retain_timesteps(retain.rows())?;
            let eps_r = ctx.noise(retain.shape());
            let xr = forward_noise_rows(retain, &tr, &eps_r, ctx.sched)?;
            let input = ctx.selection.retain_input(&xr)?;
            let target = ctx.selection.retain_target(&eps_r)?;
            let pred = ctx.predict(input, &tr)?;
            let weights = ctx.loss_weights(&tr);
            let retain_loss = weighted_sq_error(ctx.graph, pred, &target, &weights)?;
            components.push(("retain_loss", ctx.graph.value(retain_loss).item()));
            let scaled = ctx.graph.scale(retain_loss, self.retain_weight)?;
            loss = ctx.graph.add(loss, scaled)?;
        }
        Ok(LossOutput {
            loss,
            components,
            forget_timesteps: t,
        })
    }
}

/// Pure gradient ascent on `batch.forget` with uniform timesteps.
pub fn ga_loss(
    g: &mut Graph,
    model: &dyn EpsModel,
    params: &[Var],
    batch: &UnlearnBatch,
    sched: &NoiseSchedule,
    rng: &mut dyn RngCore,
) -> Result<Var> {
    evaluate_plain(
        &GradientAscent::default(),
        g,
        model,
        params,
        batch,
        sched,
        rng,
    )
}
