use rand::Rng;

use super::denoiser::{Denoiser, EpsModel};
use super::process::epsilon_loss;
use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::numerics::{Adam, Graph, Tensor};

/// One Adam step on the ε-matching loss of a minibatch drawn with
/// replacement from `data`. Returns the minibatch loss before the update.
pub fn train_step<R: Rng + ?Sized>(
    model: &mut Denoiser,
    opt: &mut Adam,
    data: &Tensor,
    batch_size: usize,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<f64> {
    if data.rows() == 0 {
        return Err(Error::EmptyBatch("training"));
    }
    let idx: Vec<usize> = (0..batch_size)
        .map(|_| rng.random_range(0..data.rows()))
        .collect();
    let x0 = data.select_rows(&idx);
    let t: Vec<usize> = (0..batch_size)
        .map(|_| rng.random_range(0..sched.steps()))
        .collect();
    let eps = Tensor::randn(x0.shape(), rng);

    let mut g = Graph::new();
    let params = model.bind(&mut g);
    let loss = epsilon_loss(&mut g, model, &params, &x0, &t, &eps, sched)?;
    let value = g.value(loss).item();
    let grads = g.backward(loss)?;
    let grads: Vec<Tensor> = params.iter().map(|&p| grads.get(p).clone()).collect();
    opt.update(model.params_mut(), &grads)?;
    Ok(value)
}
