//! Unlearning objectives.
//!
//! Every objective turns a forget batch (and usually a retain batch) into a
//! differentiable scalar. Draw order inside an objective is fixed (timesteps,
//! then pairings and branches, then noise) so results are reproducible from
//! the random stream alone.

mod erasediff;
mod ga;
mod preference;
mod run;
mod siss;

use rand::RngCore;

pub use erasediff::{erasediff_loss, EraseDiff};
pub use ga::{ga_loss, GradientAscent};
pub use preference::{dpo_forget_loss, kto_forget_loss, Dpo, Kto, PreferenceConfig};
pub use run::{unlearn_step, StepMetrics, UnlearnRun};
pub use siss::{siss_loss, siss_sample_mixture, siss_weights, Branch, Siss, SissConfig};

use crate::diffusion::{EpsModel, NoiseSchedule};
use crate::error::{Error, Result};
use crate::numerics::{Graph, Tensor, Var};
use crate::selective::Selection;

/// Forget and retain samples for one objective evaluation, `[n, d]` each.
#[derive(Clone, Debug)]
pub struct UnlearnBatch {
    pub forget: Tensor,
    pub retain: Tensor,
}

impl UnlearnBatch {
    pub fn new(forget: Tensor, retain: Tensor) -> Result<Self> {
        if forget.rows() > 0 && retain.rows() > 0 && forget.row_len() != retain.row_len() {
            return Err(Error::ShapeMismatch {
                op: "unlearn batch",
                left: forget.shape().to_vec(),
                right: retain.shape().to_vec(),
            });
        }
        Ok(UnlearnBatch { forget, retain })
    }

    /// A batch with no retain samples.
    pub fn forget_only(forget: Tensor) -> Self {
        let d = forget.row_len();
        UnlearnBatch {
            forget,
            retain: Tensor::zeros(&[0, d]),
        }
    }
}

pub struct LossContext<'a> {
    pub graph: &'a mut Graph,
    pub model: &'a dyn EpsModel,
    pub params: &'a [Var],
    pub batch: &'a UnlearnBatch,
    pub sched: &'a NoiseSchedule,
    pub selection: &'a Selection,
    pub rng: &'a mut dyn RngCore,
}

impl<'a> LossContext<'a> {
    /// Reborrows the context under a different selection.
    pub fn with_selection<'b>(&'b mut self, selection: &'b Selection) -> LossContext<'b> {
        LossContext {
            graph: &mut *self.graph,
            model: self.model,
            params: self.params,
            batch: self.batch,
            sched: self.sched,
            selection,
            rng: &mut *self.rng,
        }
    }

    fn forget_timesteps(&mut self, n: usize) -> Result<Vec<usize>> {
        (0..n)
            .map(|_| self.selection.forget_timestep(self.sched.steps(), self.rng))
            .collect()
    }

    fn retain_timesteps(&mut self, n: usize) -> Result<Vec<usize>> {
        (0..n)
            .map(|_| self.selection.retain_timestep(self.sched.steps(), self.rng))
            .collect()
    }

    fn noise(&mut self, shape: &[usize]) -> Tensor {
        Tensor::randn(shape, self.rng)
    }

    fn predict(&mut self, input: Tensor, t: &[usize]) -> Result<Var> {
        let x = self.graph.constant(input);
        self.model.forward(self.graph, self.params, x, t)
    }

    fn loss_weights(&self, t: &[usize]) -> Vec<f64> {
        t.iter().map(|&ti| self.sched.loss_weight(ti)).collect()
    }
}

#[derive(Debug)]
pub struct LossOutput {
    pub loss: Var,
    /// Named scalar parts of the loss, for logging.
    pub components: Vec<(&'static str, f64)>,
    /// Timesteps drawn for forget-branch terms.
    pub forget_timesteps: Vec<usize>,
}

pub trait Objective {
    fn name(&self) -> &str;

    fn loss(&self, ctx: &mut LossContext<'_>) -> Result<LossOutput>;
}

impl<O: Objective + ?Sized> Objective for Box<O> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn loss(&self, ctx: &mut LossContext<'_>) -> Result<LossOutput> {
        (**self).loss(ctx)
    }
}

/// Runs `objective` with no selection on a fresh graph region.
pub(crate) fn evaluate_plain<O: Objective + ?Sized>(
    objective: &O,
    g: &mut Graph,
    model: &dyn EpsModel,
    params: &[Var],
    batch: &UnlearnBatch,
    sched: &NoiseSchedule,
    rng: &mut dyn RngCore,
) -> Result<Var> {
    let selection = Selection::none();
    let mut ctx = LossContext {
        graph: g,
        model,
        params,
        batch,
        sched,
        selection: &selection,
        rng,
    };
    Ok(objective.loss(&mut ctx)?.loss)
}

fn require_rows(t: &Tensor, what: &'static str) -> Result<()> {
    if t.rows() == 0 {
        return Err(Error::EmptyBatch(what));
    }
    Ok(())
}
