use proptest::prelude::*;
use selforget::diffusion::{
    epsilon_loss, forward_noise, reverse_step, Activation, Arch, Denoiser, EpsModel, NoiseSchedule,
};
use selforget::numerics::{grad_check, Graph, Tensor, Var};
use selforget::selective::{
    dft2_slice, low_pass_slice, radial_mask, FrequencyFilterConfig, ImageShape, TimeWindowConfig,
};
use selforget::{seeded_rng, Result};

/// Returns a fixed prediction regardless of input.
struct Oracle(Tensor);

impl EpsModel for Oracle {
    fn bind(&self, _g: &mut Graph) -> Vec<Var> {
        Vec::new()
    }

    fn forward(&self, g: &mut Graph, _params: &[Var], _x: Var, _t: &[usize]) -> Result<Var> {
        Ok(g.constant(self.0.clone()))
    }
}

fn two_losses(g: &mut Graph, w: Var, a: f64, b: f64) -> Result<Var> {
    let sq = g.square(w)?;
    let l1 = g.sum(sq)?;
    let th = g.tanh(w)?;
    let l2 = g.mean(th)?;
    let s1 = g.scale(l1, a)?;
    let s2 = g.scale(l2, b)?;
    g.add(s1, s2)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn backward_is_linear_in_the_loss(
        w in prop::collection::vec(-2.0f64..2.0, 6),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
    ) {
        let grad = |a: f64, b: f64| {
            let mut g = Graph::new();
            let p = g.param(Tensor::new(vec![2, 3], w.clone()).unwrap());
            let loss = two_losses(&mut g, p, a, b).unwrap();
            g.backward(loss).unwrap().get(p).clone()
        };
        let combined = grad(a, b);
        let separate = grad(1.0, 0.0).scale(a).add(&grad(0.0, 1.0).scale(b)).unwrap();
        prop_assert!(combined.sub(&separate).unwrap().max_abs() < 1e-10);
    }
}

#[test]
fn epsilon_loss_of_a_two_layer_denoiser_passes_grad_check() {
    let arch = Arch {
        data_dim: 2,
        hidden: vec![8, 8],
        activation: Activation::Tanh,
        temb_dim: 4,
    };
    let sched = NoiseSchedule::linear(20, 1e-3, 0.1).unwrap();
    let model = Denoiser::new(arch, &mut seeded_rng(1)).unwrap();
    let x0 = Tensor::new(vec![1, 2], vec![0.3, -0.7]).unwrap();
    let eps = Tensor::new(vec![1, 2], vec![1.1, 0.4]).unwrap();
    for which in 0..model.params().len() {
        let err = grad_check(
            |g, p| {
                let params: Vec<Var> = model
                    .params()
                    .iter()
                    .enumerate()
                    .map(|(i, v)| if i == which { p } else { g.constant(v.clone()) })
                    .collect();
                epsilon_loss(g, &model, &params, &x0, &[7], &eps, &sched)
            },
            &model.params()[which],
            1e-5,
        );
        assert!(err < 1e-4, "param {which}: {err}");
    }
}

#[test]
fn forward_noise_marginals() {
    let sched = NoiseSchedule::linear(100, 1e-4, 0.02).unwrap();
    let x0 = Tensor::vector(vec![1.5]);
    let t = 60;
    let n = 20_000;
    let mut rng = seeded_rng(2);
    let draws: Vec<f64> = (0..n)
        .map(|_| {
            let eps = Tensor::randn(&[1], &mut rng);
            forward_noise(&x0, t, &eps, &sched).unwrap().item()
        })
        .collect();
    let mean = draws.iter().sum::<f64>() / n as f64;
    let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let want_var = 1.0 - sched.alpha_bar(t);
    let mean_se = (want_var / n as f64).sqrt();
    // variance of the sample variance of a Gaussian is 2σ⁴/(n-1)
    let var_se = (2.0 * want_var * want_var / (n - 1) as f64).sqrt();
    assert!((mean - sched.alpha_bar(t).sqrt() * 1.5).abs() < 3.0 * mean_se);
    assert!((var - want_var).abs() < 3.0 * var_se);
}

#[test]
fn final_reverse_step_with_true_noise_recovers_data() {
    let sched = NoiseSchedule::linear(50, 1e-3, 0.05).unwrap();
    let x0 = Tensor::new(vec![2, 3], vec![0.5, -1.0, 2.0, 0.0, 0.25, -0.75]).unwrap();
    let eps = Tensor::randn(x0.shape(), &mut seeded_rng(3));
    let xt = forward_noise(&x0, 0, &eps, &sched).unwrap();
    let back = reverse_step(&Oracle(eps), &xt, 0, &sched, None).unwrap();
    assert!(back.sub(&x0).unwrap().max_abs() < 1e-8);
}

fn corner_radius(u: usize, v: usize, n: usize) -> f64 {
    let fu = u.min(n - u) as f64 / n as f64;
    let fv = v.min(n - v) as f64 / n as f64;
    fu.hypot(fv) / 0.5f64.hypot(0.5)
}

#[test]
fn eight_by_eight_mask_matches_explicit_radii() {
    for r_t in [0.15, 0.18, 0.3, 0.6] {
        let mask = radial_mask(8, 8, &FrequencyFilterConfig::new(r_t, 0.0).unwrap());
        for u in 0..8 {
            for v in 0..8 {
                let keep = corner_radius(u, v, 8) <= r_t;
                assert_eq!(
                    mask.data()[u * 8 + v],
                    if keep { 1.0 } else { 0.0 },
                    "r_t={r_t} bin ({u},{v})"
                );
            }
        }
    }
    // the nearest ring sits at radius 1/8 / (√2/2) ≈ 0.177, so 0.15 keeps DC alone
    let mask = radial_mask(8, 8, &FrequencyFilterConfig::new(0.15, 0.0).unwrap());
    assert_eq!(mask.data().iter().sum::<f64>(), 1.0);
}

#[test]
fn low_pass_removes_the_nyquist_checkerboard() {
    let shape = ImageShape::new(8, 8);
    let board: Vec<f64> = (0..64)
        .map(|i| if (i / 8 + i % 8) % 2 == 0 { 1.0 } else { -1.0 })
        .collect();
    let spec = dft2_slice(&board, shape).unwrap();
    let power = spec.power();
    // all energy sits in the (4, 4) bin
    assert!((power[4 * 8 + 4] - 64.0 * 64.0).abs() < 1e-9);
    assert!(power.iter().enumerate().all(|(i, &p)| i == 36 || p < 1e-18));
    let out = low_pass_slice(
        &board,
        shape,
        &FrequencyFilterConfig::new(0.15, 0.0).unwrap(),
    )
    .unwrap();
    assert!(out.iter().all(|v| v.abs() < 1e-9));
}

#[test]
fn half_window_with_half_outside_mass_splits_evenly() {
    let cfg = TimeWindowConfig::new(0.5, 0, 50, 100).unwrap();
    let mut rng = seeded_rng(4);
    let n = 100_000;
    let inside = (0..n)
        .filter(|_| cfg.contains(cfg.sample(&mut rng)))
        .count();
    let sd = (n as f64 * 0.25).sqrt();
    assert!(
        (inside as f64 - 0.5 * n as f64).abs() < 3.0 * sd,
        "inside {inside}"
    );
}
