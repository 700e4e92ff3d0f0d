use rand::Rng;

use super::embedding::{cosine, Embedding};
use crate::diffusion::{forward_noise, NoiseSchedule};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryPoint {
    /// Forward steps applied; 0 is the clean sample.
    pub steps: usize,
    pub to_x0: f64,
    pub to_nn: f64,
}

/// Embedding similarity of noised copies of `dataset[index]` to the clean
/// sample and to its nearest neighbour in the dataset, averaged over
/// `n_draws` noise draws per entry of `steps`.
///
/// The neighbour is the other row with the most similar embedding; the
/// sample itself is never its own neighbour.
pub fn similarity_trajectory<R: Rng + ?Sized>(
    index: usize,
    dataset: &Tensor,
    sched: &NoiseSchedule,
    embed: &dyn Embedding,
    steps: &[usize],
    n_draws: usize,
    rng: &mut R,
) -> Result<Vec<TrajectoryPoint>> {
    if index >= dataset.rows() {
        return Err(Error::invalid(format!(
            "index {index} outside a dataset of {} rows",
            dataset.rows()
        )));
    }
    if dataset.rows() < 2 {
        return Err(Error::invalid(
            "nearest neighbour needs at least two samples",
        ));
    }
    if n_draws == 0 {
        return Err(Error::invalid("n_draws must be at least 1"));
    }
    let x0 = Tensor::new(vec![1, dataset.row_len()], dataset.row(index).to_vec())?;
    let e0 = embed.embed(x0.data());
    let nn = (0..dataset.rows())
        .filter(|&j| j != index)
        .map(|j| (j, cosine(&e0, &embed.embed(dataset.row(j)))))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(j, _)| j)
        .expect("at least one other row");
    let enn = embed.embed(dataset.row(nn));

    let mut curve = Vec::with_capacity(steps.len());
    for &n in steps {
        if n > sched.steps() {
            return Err(Error::TimestepOutOfRange {
                t: n,
                steps: sched.steps() + 1,
            });
        }
        let (mut a, mut b) = (0.0, 0.0);
        for _ in 0..n_draws {
            let xt = if n == 0 {
                x0.clone()
            } else {
                let eps = Tensor::randn(x0.shape(), rng);
                forward_noise(&x0, n - 1, &eps, sched)?
            };
            let e = embed.embed(xt.data());
            a += cosine(&e, &e0);
            b += cosine(&e, &enn);
        }
        curve.push(TrajectoryPoint {
            steps: n,
            to_x0: a / n_draws as f64,
            to_nn: b / n_draws as f64,
        });
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::metrics::FlattenCosine;

    #[test]
    fn clean_start_and_decay() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let data = Tensor::uniform(&[20, 64], -1.0, 1.0, &mut rng);
        let sched = NoiseSchedule::ddpm_default();
        let steps = [0, 100, 400, 1000];
        let c =
            similarity_trajectory(3, &data, &sched, &FlattenCosine, &steps, 20, &mut rng).unwrap();
        assert!((c[0].to_x0 - 1.0).abs() < 1e-12);
        for w in c.windows(2) {
            assert!(w[1].to_x0 < w[0].to_x0);
        }
        assert!(c[3].to_x0.abs() < 0.3);
    }

    #[test]
    fn duplicate_is_the_neighbour_not_self() {
        let mut rows = vec![vec![1.0, -1.0, 0.5, 0.0], vec![0.0, 1.0, 0.0, -1.0]];
        rows.push(rows[0].clone());
        let data = Tensor::from_rows(&rows).unwrap();
        let sched = NoiseSchedule::linear(10, 1e-4, 0.02).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = similarity_trajectory(0, &data, &sched, &FlattenCosine, &[0], 1, &mut rng).unwrap();
        assert!((c[0].to_nn - 1.0).abs() < 1e-12);
        let lone = Tensor::from_rows(&rows[..1]).unwrap();
        assert!(
            similarity_trajectory(0, &lone, &sched, &FlattenCosine, &[0], 1, &mut rng).is_err()
        );
    }
}
