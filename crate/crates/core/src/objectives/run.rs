use rand::{Rng, RngCore};

use super::{LossContext, Objective, UnlearnBatch};
use crate::diffusion::{Denoiser, EpsModel, NoiseSchedule};
use crate::error::{Error, Result};
use crate::numerics::{clip_global_norm, Adam, Graph, Tensor};
use crate::selective::Selection;

/// Outcome of one unlearning update.
#[derive(Clone, Debug, PartialEq)]
pub struct StepMetrics {
    pub step: usize,
    pub loss: f64,
    pub components: Vec<(String, f64)>,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    pub forget_timesteps: Vec<usize>,
}

/// Mutable state of one unlearning experiment.
pub struct UnlearnRun {
    pub model: Denoiser,
    pub sched: NoiseSchedule,
    pub objective: Box<dyn Objective>,
    pub forget: Tensor,
    pub retain: Tensor,
    pub optimizer: Adam,
    /// Rows drawn (with replacement) from each of the forget and retain sets per step.
    pub batch_size: usize,
    pub clip_norm: Option<f64>,
    pub step: usize,
    pub history: Vec<StepMetrics>,
}

impl UnlearnRun {
    pub fn new(
        model: Denoiser,
        sched: NoiseSchedule,
        objective: Box<dyn Objective>,
        forget: Tensor,
        retain: Tensor,
        lr: f64,
        batch_size: usize,
    ) -> Self {
        UnlearnRun {
            model,
            sched,
            objective,
            forget,
            retain,
            optimizer: Adam::new(lr),
            batch_size,
            clip_norm: Some(1.0),
            step: 0,
            history: Vec::new(),
        }
    }

    fn draw_batch(&self, rng: &mut dyn RngCore) -> Result<UnlearnBatch> {
        if self.forget.rows() == 0 {
            return Err(Error::EmptyBatch("forget"));
        }
        let fi: Vec<usize> = (0..self.batch_size)
            .map(|_| rng.random_range(0..self.forget.rows()))
            .collect();
        let forget = self.forget.select_rows(&fi);
        let retain = if self.retain.rows() > 0 {
            let ri: Vec<usize> = (0..self.batch_size)
                .map(|_| rng.random_range(0..self.retain.rows()))
                .collect();
            self.retain.select_rows(&ri)
        } else {
            Tensor::zeros(&[0, self.forget.row_len()])
        };
        UnlearnBatch::new(forget, retain)
    }
}

/// One clipped Adam update on the run's objective. A non-finite loss or
/// gradient aborts the step without touching the parameters.
pub fn unlearn_step(run: &mut UnlearnRun, rng: &mut dyn RngCore) -> Result<StepMetrics> {
    let batch = run.draw_batch(rng)?;
    let mut g = Graph::new();
    let params = run.model.bind(&mut g);
    let selection = Selection::none();
    let out = {
        let mut ctx = LossContext {
            graph: &mut g,
            model: &run.model,
            params: &params,
            batch: &batch,
            sched: &run.sched,
            selection: &selection,
            rng,
        };
        run.objective.loss(&mut ctx)?
    };
    let loss = g.value(out.loss).item();
    if !loss.is_finite() {
        return Err(Error::NonFinite("unlearning loss".into()));
    }
    let grads = g.backward(out.loss)?;
    let mut grads: Vec<Tensor> = params.iter().map(|&p| grads.get(p).clone()).collect();
    let grad_norm = match run.clip_norm {
        Some(max) => clip_global_norm(&mut grads, max),
        None => crate::numerics::global_norm(&grads),
    };
    if !grad_norm.is_finite() {
        return Err(Error::NonFinite("unlearning gradient".into()));
    }
    run.optimizer.update(run.model.params_mut(), &grads)?;
    let metrics = StepMetrics {
        step: run.step,
        loss,
        components: out
            .components
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
        grad_norm,
        forget_timesteps: out.forget_timesteps,
    };
    run.step += 1;
    run.history.push(metrics.clone());
    Ok(metrics)
}
