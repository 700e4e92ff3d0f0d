use std::f64::consts::PI;

use selforget::metrics::{
    psd_radial, psd_radial_mean, sscd_norm, sscd_plain, FlattenCosine, PatchHistogram,
    SscdNormConfig,
};
use selforget::numerics::Tensor;
use selforget::seeded_rng;
use selforget::selective::ImageShape;

const N: usize = 16;

fn image(f: impl Fn(usize, usize) -> f64) -> Tensor {
    let data = (0..N * N).map(|i| f(i / N, i % N)).collect();
    Tensor::new(vec![N, N], data).unwrap()
}

#[test]
fn sinusoid_lands_in_the_bin_of_its_radius() {
    let bins = 9;
    let img = image(|_, c| (2.0 * PI * 2.0 * c as f64 / N as f64).cos());
    let curve = psd_radial(&img, bins).unwrap();
    // two cycles along one axis: radius (2/16) over the corner radius √2/2
    let r = (2.0 / N as f64) / 0.5f64.hypot(0.5);
    let expected = (r * (bins - 1) as f64).ceil() as usize;
    let totals: Vec<f64> = curve
        .power
        .iter()
        .zip(&curve.counts)
        .map(|(p, &c)| p * c as f64)
        .collect();
    let energy: f64 = totals.iter().sum();
    assert!(
        (totals[expected] - energy).abs() < 1e-9 * energy,
        "totals {totals:?}"
    );
}

#[test]
fn white_noise_spectrum_is_flat() {
    let shape = ImageShape::new(N, N);
    let batch = Tensor::randn(&[400, N * N], &mut seeded_rng(1));
    let curve = psd_radial_mean(&batch, shape, 8, false).unwrap();
    // E|T(u,v)|² = H·W for unit-variance white noise
    let want = (N * N) as f64;
    for (b, (&p, &c)) in curve.power.iter().zip(&curve.counts).enumerate() {
        if c > 0 {
            assert!((p / want - 1.0).abs() < 0.15, "bin {b}: {p} over {c} bins");
        }
    }
}

#[test]
fn total_power_obeys_parseval() {
    let mut rng = seeded_rng(2);
    for _ in 0..10 {
        let img = Tensor::randn(&[N, N], &mut rng);
        let curve = psd_radial(&img, 6).unwrap();
        let want = (N * N) as f64 * img.norm_sq();
        assert!((curve.total_power() - want).abs() < 1e-9 * want);
        assert_eq!(curve.counts.iter().sum::<usize>(), N * N);
        assert!(curve.radius.windows(2).all(|w| w[0] < w[1]));
    }
}

#[test]
fn plain_similarity_is_symmetric() {
    let mut rng = seeded_rng(3);
    let hist = PatchHistogram::new(ImageShape::new(N, N));
    for _ in 0..20 {
        let a = Tensor::uniform(&[N * N], 0.0, 1.0, &mut rng);
        let b = Tensor::uniform(&[N * N], 0.0, 1.0, &mut rng);
        for embed in [&FlattenCosine as &dyn selforget::metrics::Embedding, &hist] {
            let ab = sscd_plain(a.data(), b.data(), embed).unwrap();
            let ba = sscd_plain(b.data(), a.data(), embed).unwrap();
            assert!((ab - ba).abs() < 1e-12);
        }
    }
}

#[test]
fn normalized_similarity_of_a_perfect_reconstruction_is_one() {
    let x = Tensor::uniform(&[N * N], 0.0, 1.0, &mut seeded_rng(4));
    let cfg = SscdNormConfig::for_numel(N * N);
    let s = sscd_norm(x.data(), x.data(), &FlattenCosine, &cfg).unwrap();
    assert!((s - 1.0).abs() < 1e-12);
}
