use super::spectrum::{dft2_slice, idft2_complex, ImageShape};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Residue above this means the mask broke conjugate symmetry.
const MAX_IMAGINARY_RESIDUE: f64 = 1e-6;

/// Radial low-pass mask: coefficients within normalized radius `r_t` are
/// kept, the rest are scaled by `s`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrequencyFilterConfig {
    r_t: f64,
    s: f64,
}

impl FrequencyFilterConfig {
    pub fn new(r_t: f64, s: f64) -> Result<Self> {
        if !(r_t > 0.0 && r_t <= 1.0) {
            return Err(Error::invalid(format!(
                "cutoff radius r_t={r_t} outside (0, 1]"
            )));
        }
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::invalid(format!(
                "high-frequency weight s={s} outside [0, 1]"
            )));
        }
        Ok(FrequencyFilterConfig { r_t, s })
    }

    pub fn r_t(&self) -> f64 {
        self.r_t
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    /// True when the mask is all ones for every image size.
    pub fn is_identity(&self) -> bool {
        self.s == 1.0 || self.r_t >= 1.0
    }
}

/// Signed frequency index of DFT bin `k` out of `n` (DC-centered).
fn signed_freq(k: usize, n: usize) -> f64 {
    if k <= (n - 1) / 2 {
        k as f64
    } else {
        k as f64 - n as f64
    }
}

/// Radius of every bin in cycles per sample, divided by the radius of the
/// farthest (corner) bin, so values lie in `[0, 1]`. Laid out unshifted like
/// [`super::Spectrum`].
pub fn normalized_radius(shape: ImageShape) -> Vec<f64> {
    let ImageShape { height, width } = shape;
    let radius =
        |fu: f64, fv: f64| ((fu / height as f64).powi(2) + (fv / width as f64).powi(2)).sqrt();
    let max = radius((height / 2) as f64, (width / 2) as f64);
    let mut out = Vec::with_capacity(shape.numel());
    for u in 0..height {
        for v in 0..width {
            let r = radius(signed_freq(u, height).abs(), signed_freq(v, width).abs());
            out.push(if max > 0.0 { r / max } else { 0.0 });
        }
    }
    out
}

pub fn radial_mask(height: usize, width: usize, cfg: &FrequencyFilterConfig) -> Tensor {
    let radius = normalized_radius(ImageShape::new(height, width));
    let data = radius
        .into_iter()
        .map(|r| if r <= cfg.r_t + 1e-12 { 1.0 } else { cfg.s })
        .collect();
    Tensor::new(vec![height, width], data).expect("mask layout")
}

/// `IFFT(FFT(x) ⊙ mask)` for one `H×W` image.
pub fn low_pass(image: &Tensor, cfg: &FrequencyFilterConfig) -> Result<Tensor> {
    let shape = match image.shape() {
        [h, w] => ImageShape::new(*h, *w),
        other => {
            return Err(Error::invalid(format!(
                "low_pass expects an H×W image, got {other:?}"
            )))
        }
    };
    let pixels = low_pass_slice(image.data(), shape, cfg)?;
    Tensor::new(image.shape().to_vec(), pixels)
}

pub fn low_pass_slice(
    pixels: &[f64],
    shape: ImageShape,
    cfg: &FrequencyFilterConfig,
) -> Result<Vec<f64>> {
    if cfg.is_identity() {
        return Ok(pixels.to_vec());
    }
    let mut spec = dft2_slice(pixels, shape)?;
    let mask = radial_mask(shape.height, shape.width, cfg);
    spec.apply_mask(mask.data());
    let (re, im) = idft2_complex(&spec);
    let residue = im.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if residue > MAX_IMAGINARY_RESIDUE {
        return Err(Error::ImaginaryResidue(residue));
    }
    Ok(re)
}

/// Filters each row of an `[n, H·W]` batch.
pub fn low_pass_rows(
    batch: &Tensor,
    shape: ImageShape,
    cfg: &FrequencyFilterConfig,
) -> Result<Tensor> {
    if batch.row_len() != shape.numel() {
        return Err(Error::ShapeMismatch {
            op: "low_pass_rows",
            left: vec![shape.height, shape.width],
            right: batch.shape().to_vec(),
        });
    }
    if cfg.is_identity() {
        return Ok(batch.clone());
    }
    let mut out = Vec::with_capacity(batch.numel());
    for i in 0..batch.rows() {
        out.extend(low_pass_slice(batch.row(i), shape, cfg)?);
    }
    Tensor::new(batch.shape().to_vec(), out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_radius_or_unit_weight_is_all_ones() {
        for (h, w) in [(8, 8), (5, 7), (1, 4)] {
            let m = radial_mask(h, w, &FrequencyFilterConfig::new(1.0, 0.0).unwrap());
            assert!(m.data().iter().all(|&v| v == 1.0), "{h}x{w}");
            let m = radial_mask(h, w, &FrequencyFilterConfig::new(0.05, 1.0).unwrap());
            assert!(m.data().iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn mask_takes_only_two_values() {
        let cfg = FrequencyFilterConfig::new(0.3, 0.25).unwrap();
        let m = radial_mask(16, 12, &cfg);
        assert!(m.data().iter().all(|&v| v == 1.0 || v == 0.25));
        assert_eq!(m.data()[0], 1.0);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(FrequencyFilterConfig::new(0.0, 0.5).is_err());
        assert!(FrequencyFilterConfig::new(1.2, 0.5).is_err());
        assert!(FrequencyFilterConfig::new(0.5, -0.1).is_err());
        assert!(FrequencyFilterConfig::new(0.5, 1.1).is_err());
    }

    #[test]
    fn constant_image_passes_unchanged() {
        let img = Tensor::full(&[8, 8], -0.75);
        let out = low_pass(&img, &FrequencyFilterConfig::new(0.05, 0.0).unwrap()).unwrap();
        assert!(out.sub(&img).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn batch_width_must_match() {
        let batch = Tensor::zeros(&[2, 10]);
        let cfg = FrequencyFilterConfig::new(0.5, 0.0).unwrap();
        assert!(low_pass_rows(&batch, ImageShape::new(3, 3), &cfg).is_err());
    }
}
