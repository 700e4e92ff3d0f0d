use std::sync::Arc;

use rand::Rng;
use selforget::diffusion::{
    epsilon_loss, forward_noise_rows, weighted_sq_error, Activation, Arch, Denoiser, EpsModel,
    NoiseSchedule,
};
use selforget::numerics::{Graph, Tensor};
use selforget::objectives::{
    dpo_forget_loss, ga_loss, siss_loss, siss_sample_mixture, siss_weights, unlearn_step, Branch,
    GradientAscent, Kto, LossContext, Objective, PreferenceConfig, Siss, SissConfig, UnlearnBatch,
    UnlearnRun,
};
use selforget::selective::{
    low_pass_rows, selective_wrap, FrequencyFilterConfig, FrequencySelection, ImageShape,
    Selection, TimeWindowConfig,
};
use selforget::{seeded_rng, SeededRng};

fn model(data_dim: usize, seed: u64) -> Denoiser {
    let arch = Arch {
        data_dim,
        hidden: vec![6, 6],
        activation: Activation::Silu,
        temb_dim: 4,
    };
    Denoiser::new(arch, &mut seeded_rng(seed)).unwrap()
}

struct Evaluated {
    loss: f64,
    components: Vec<(&'static str, f64)>,
    grads: Vec<Tensor>,
}

fn evaluate(
    objective: &dyn Objective,
    model: &Denoiser,
    batch: &UnlearnBatch,
    sched: &NoiseSchedule,
    seed: u64,
) -> Evaluated {
    let mut g = Graph::new();
    let params = model.bind(&mut g);
    let selection = Selection::none();
    let mut rng = seeded_rng(seed);
    let mut ctx = LossContext {
        graph: &mut g,
        model,
        params: &params,
        batch,
        sched,
        selection: &selection,
        rng: &mut rng,
    };
    let out = objective.loss(&mut ctx).unwrap();
    let grads = g.backward(out.loss).unwrap();
    Evaluated {
        loss: g.value(out.loss).item(),
        components: out.components,
        grads: params.iter().map(|&p| grads.get(p).clone()).collect(),
    }
}

fn component(e: &Evaluated, name: &str) -> f64 {
    e.components.iter().find(|(n, _)| *n == name).unwrap().1
}

fn points(rows: usize, d: usize, seed: u64) -> Tensor {
    Tensor::randn(&[rows, d], &mut seeded_rng(seed))
}

#[test]
fn ga_is_negated_epsilon_loss_on_the_same_draws() {
    let sched = NoiseSchedule::linear(40, 1e-3, 0.05).unwrap();
    let m = model(3, 1);
    let forget = points(5, 3, 2);
    let batch = UnlearnBatch::forget_only(forget.clone());

    let mut g = Graph::new();
    let params = m.bind(&mut g);
    let ga = ga_loss(&mut g, &m, &params, &batch, &sched, &mut seeded_rng(9)).unwrap();

    // replay the draws: uniform timesteps, then the noise
    let mut rng = seeded_rng(9);
    let t: Vec<usize> = (0..5).map(|_| rng.random_range(0..sched.steps())).collect();
    let eps = Tensor::randn(forget.shape(), &mut rng);
    let plain = epsilon_loss(&mut g, &m, &params, &forget, &t, &eps, &sched).unwrap();
    assert_eq!(g.value(ga).item(), -g.value(plain).item());
}

#[test]
fn windowed_filtered_ga_matches_hand_composition() {
    let shape = ImageShape::new(4, 4);
    let sched = NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap();
    let window = TimeWindowConfig::new(0.0, 250, 750, 1000).unwrap();
    let filter = FrequencyFilterConfig::new(0.15, 0.0).unwrap();
    let m = model(16, 3);
    let forget = points(4, 16, 4);
    let batch = UnlearnBatch::forget_only(forget.clone());
    let wrapped = selective_wrap(
        GradientAscent::default(),
        Some(window),
        Some(FrequencySelection::new(filter, Some(shape))),
    );

    let mut g = Graph::new();
    let params = m.bind(&mut g);
    let selection = *wrapped.selection();
    let mut rng = seeded_rng(5);
    let mut ctx = LossContext {
        graph: &mut g,
        model: &m,
        params: &params,
        batch: &batch,
        sched: &sched,
        selection: &Selection::none(),
        rng: &mut rng,
    };
    let out = wrapped.loss(&mut ctx).unwrap();
    assert!(out
        .forget_timesteps
        .iter()
        .all(|&t| (250..750).contains(&t)));
    assert_eq!(selection.time, Some(window));
    let grads = g.backward(out.loss).unwrap();

    let mut h = Graph::new();
    let hp = m.bind(&mut h);
    let mut rng = seeded_rng(5);
    let t: Vec<usize> = (0..4).map(|_| rng.random_range(250..750)).collect();
    let eps = Tensor::randn(forget.shape(), &mut rng);
    let xt = forward_noise_rows(&forget, &t, &eps, &sched).unwrap();
    let x = h.constant(low_pass_rows(&xt, shape, &filter).unwrap());
    let pred = m.forward(&mut h, &hp, x, &t).unwrap();
    let weights: Vec<f64> = t.iter().map(|&ti| sched.loss_weight(ti)).collect();
    let sq = weighted_sq_error(&mut h, pred, &eps, &weights).unwrap();
    let manual = h.scale(sq, -1.0).unwrap();
    let manual_grads = h.backward(manual).unwrap();

    assert_eq!(out.forget_timesteps, t);
    assert_eq!(g.value(out.loss).item(), h.value(manual).item());
    for (a, b) in params.iter().zip(&hp) {
        assert_eq!(grads.get(*a), manual_grads.get(*b));
    }
}

#[test]
fn siss_weights_match_gaussian_densities() {
    // two steps of β = 0.5 give ᾱ = 0.25 at the second step
    let sched = NoiseSchedule::linear(2, 0.5, 0.5).unwrap();
    assert!((sched.alpha_bar(1) - 0.25).abs() < 1e-15);
    let pdf = |m: f64, anchor: f64| {
        let var: f64 = 0.75;
        (-(m - 0.5 * anchor).powi(2) / (2.0 * var)).exp()
            / (2.0 * std::f64::consts::PI * var).sqrt()
    };
    for m in [1.0, 0.5, -0.3, 2.5] {
        let (wk, wf) = siss_weights(&[m], &[0.0], &[4.0], 1, 0.5, &sched).unwrap();
        let mix = 0.5 * pdf(m, 0.0) + 0.5 * pdf(m, 4.0);
        assert!((wk - pdf(m, 4.0) / mix).abs() < 1e-12, "m={m}");
        assert!((wf - pdf(m, 0.0) / mix).abs() < 1e-12, "m={m}");
    }
    // m = 1 is equidistant from √ᾱ·0 = 0 and √ᾱ·4 = 2
    let (wk, wf) = siss_weights(&[1.0], &[0.0], &[4.0], 1, 0.5, &sched).unwrap();
    assert!((wk - 1.0).abs() < 1e-12 && (wf - 1.0).abs() < 1e-12);
}

#[test]
fn siss_mixture_branch_split_is_binomial() {
    let sched = NoiseSchedule::linear(10, 1e-3, 0.05).unwrap();
    let x = Tensor::vector(vec![0.0, 1.0]);
    let xr = Tensor::vector(vec![2.0, -1.0]);
    let mut rng = seeded_rng(6);
    let n = 100_000;
    let forget = (0..n)
        .filter(|_| {
            siss_sample_mixture(&x, &xr, 5, 0.5, &sched, &mut rng)
                .unwrap()
                .1
                == Branch::Forget
        })
        .count();
    let sd = (n as f64 * 0.25).sqrt();
    assert!(
        (forget as f64 - 0.5 * n as f64).abs() < 3.0 * sd,
        "forget draws {forget}"
    );
}

#[test]
fn siss_with_identical_anchors_and_no_amplifier_is_zero() {
    let sched = NoiseSchedule::linear(30, 1e-3, 0.05).unwrap();
    let m = model(2, 7);
    // rows are paired at random, so every row holds the same point
    let x = points(1, 2, 8).select_rows(&[0; 4]);
    let batch = UnlearnBatch::new(x.clone(), x).unwrap();
    let cfg = SissConfig::new(0.5, 0.0, true).unwrap();
    let mut g = Graph::new();
    let params = m.bind(&mut g);
    let loss = siss_loss(&mut g, &m, &params, &batch, &sched, cfg, &mut seeded_rng(1)).unwrap();
    assert!(g.value(loss).item().abs() < 1e-12);
}

#[test]
fn siss_keep_branch_sees_unfiltered_inputs_by_default() {
    let shape = ImageShape::new(4, 4);
    let sched = NoiseSchedule::linear(50, 1e-3, 0.05).unwrap();
    let m = model(16, 9);
    let batch = UnlearnBatch::new(points(3, 16, 10), points(5, 16, 11)).unwrap();
    let siss = Siss {
        config: SissConfig::new(0.5, 0.1, true).unwrap(),
    };
    let filter = FrequencyFilterConfig::new(0.15, 0.0).unwrap();
    let wrapped = selective_wrap(
        siss,
        None,
        Some(FrequencySelection::new(filter, Some(shape))),
    );
    let plain = evaluate(&siss, &m, &batch, &sched, 12);
    let filtered = evaluate(&wrapped, &m, &batch, &sched, 12);
    assert_eq!(
        component(&plain, "keep_loss"),
        component(&filtered, "keep_loss")
    );
    assert_ne!(
        component(&plain, "forget_loss"),
        component(&filtered, "forget_loss")
    );
}

#[test]
fn dpo_tends_to_log_two_as_beta_vanishes() {
    let sched = NoiseSchedule::linear(30, 1e-3, 0.05).unwrap();
    let reference = Arc::new(model(2, 13));
    let m = model(2, 14);
    let batch = UnlearnBatch::new(points(4, 2, 15), points(6, 2, 16)).unwrap();
    let cfg = PreferenceConfig::new(1e-9, Some(reference)).unwrap();
    let mut g = Graph::new();
    let params = m.bind(&mut g);
    let loss = dpo_forget_loss(
        &mut g,
        &m,
        &params,
        &batch,
        &sched,
        &cfg,
        &mut seeded_rng(2),
    )
    .unwrap();
    assert!((g.value(loss).item() - std::f64::consts::LN_2).abs() < 1e-8);
}

#[test]
fn kto_default_reference_point_is_a_detached_constant() {
    let sched = NoiseSchedule::linear(30, 1e-3, 0.05).unwrap();
    let reference = Arc::new(model(2, 17));
    let m = model(2, 18);
    let batch = UnlearnBatch::new(points(4, 2, 19), points(6, 2, 20)).unwrap();
    let cfg = PreferenceConfig::new(2.0, Some(reference)).unwrap();
    let detached = evaluate(
        &Kto {
            config: cfg.clone(),
        },
        &m,
        &batch,
        &sched,
        3,
    );
    let z = component(&detached, "z_ref");
    let pinned = evaluate(
        &Kto {
            config: cfg.with_kto_reference_point(z),
        },
        &m,
        &batch,
        &sched,
        3,
    );
    assert_eq!(detached.loss, pinned.loss);
    assert_eq!(detached.grads, pinned.grads);
}

#[test]
fn kto_forget_only_batch_has_only_the_undesirable_term() {
    let sched = NoiseSchedule::linear(30, 1e-3, 0.05).unwrap();
    let m = Arc::new(model(2, 21));
    let batch = UnlearnBatch::forget_only(points(4, 2, 22));
    let cfg = PreferenceConfig::new(2.0, Some(m.clone()))
        .unwrap()
        .with_kto_weights(3.0, 0.7);
    let e = evaluate(&Kto { config: cfg }, &m, &batch, &sched, 4);
    assert!(e.components.iter().all(|(n, _)| *n != "retain_term"));
    // θ = reference: every margin is zero, z = 0, so the loss is w_u·σ(0)
    assert!((e.loss - 0.35).abs() < 1e-12);
}

#[test]
fn windowed_ga_steps_draw_only_window_timesteps() {
    let sched = NoiseSchedule::linear(100, 1e-3, 0.05).unwrap();
    let window = TimeWindowConfig::new(0.0, 20, 60, 100).unwrap();
    let objective = selective_wrap(GradientAscent::default(), Some(window), None);
    let mut run = UnlearnRun::new(
        model(2, 23),
        sched,
        Box::new(objective),
        points(3, 2, 24),
        Tensor::zeros(&[0, 2]),
        1e-3,
        8,
    );
    let mut rng: SeededRng = seeded_rng(25);
    for _ in 0..10 {
        let m = unlearn_step(&mut run, &mut rng).unwrap();
        assert!(m.forget_timesteps.iter().all(|&t| window.contains(t)));
    }
}
