use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::selective::{dft2_slice, normalized_radius, ImageShape};

/// Radially averaged power spectrum. Bin 0 holds the DC coefficient alone;
/// bins `1..n` split normalized radii `(0, 1]` into equal annuli.
#[derive(Clone, Debug, PartialEq)]
pub struct PsdCurve {
    /// Upper radius of each bin as a fraction of the corner radius.
    pub radius: Vec<f64>,
    /// Mean `|T(u,v)|²` over the bins of each annulus; zero for empty annuli.
    pub power: Vec<f64>,
    /// Number of DFT bins in each annulus.
    pub counts: Vec<usize>,
}

impl PsdCurve {
    pub fn total_power(&self) -> f64 {
        self.power
            .iter()
            .zip(&self.counts)
            .map(|(p, &c)| p * c as f64)
            .sum()
    }

    pub fn log10(&self) -> Vec<f64> {
        self.power.iter().map(|p| (p + 1e-30).log10()).collect()
    }
}

pub fn psd_radial(image: &Tensor, n_bins: usize) -> Result<PsdCurve> {
    match image.shape() {
        [h, w] => psd_radial_slice(image.data(), ImageShape::new(*h, *w), n_bins),
        other => Err(Error::invalid(format!(
            "psd expects an H×W image, got {other:?}"
        ))),
    }
}

pub fn psd_radial_slice(pixels: &[f64], shape: ImageShape, n_bins: usize) -> Result<PsdCurve> {
    if n_bins < 2 {
        return Err(Error::invalid(format!(
            "psd needs at least 2 bins, got {n_bins}"
        )));
    }
    let spec = dft2_slice(pixels, shape)?;
    let power = spec.power();
    let radius = normalized_radius(shape);
    let rings = n_bins - 1;
    let mut sums = vec![0.0; n_bins];
    let mut counts = vec![0usize; n_bins];
    for (i, (&p, &r)) in power.iter().zip(&radius).enumerate() {
        let bin = if i == 0 {
            0
        } else {
            1 + ((r * rings as f64).ceil() as usize)
                .saturating_sub(1)
                .min(rings - 1)
        };
        sums[bin] += p;
        counts[bin] += 1;
    }
    let power = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
        .collect();
    let radius = (0..n_bins).map(|b| b as f64 / rings as f64).collect();
    Ok(PsdCurve {
        radius,
        power,
        counts,
    })
}

/// Mean curve over rows of an `[n, H·W]` batch, optionally subtracting each
/// image's mean first.
pub fn psd_radial_mean(
    batch: &Tensor,
    shape: ImageShape,
    n_bins: usize,
    subtract_mean: bool,
) -> Result<PsdCurve> {
    if batch.rows() == 0 {
        return Err(Error::EmptyBatch("psd"));
    }
    let mut acc: Option<PsdCurve> = None;
    for i in 0..batch.rows() {
        let row = batch.row(i);
        let pixels: Vec<f64> = if subtract_mean {
            let m = row.iter().sum::<f64>() / row.len() as f64;
            row.iter().map(|v| v - m).collect()
        } else {
            row.to_vec()
        };
        let curve = psd_radial_slice(&pixels, shape, n_bins)?;
        match &mut acc {
            None => acc = Some(curve),
            Some(a) => a
                .power
                .iter_mut()
                .zip(&curve.power)
                .for_each(|(x, y)| *x += y),
        }
    }
    let mut curve = acc.expect("non-empty batch");
    let n = batch.rows() as f64;
    curve.power.iter_mut().for_each(|p| *p /= n);
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_has_dc_only() {
        let img = Tensor::full(&[6, 6], 0.5);
        let c = psd_radial(&img, 5).unwrap();
        assert!((c.power[0] - (0.5 * 36.0f64).powi(2)).abs() < 1e-9);
        assert_eq!(c.counts[0], 1);
        assert!(c.power[1..].iter().all(|&p| p < 1e-20));
        assert_eq!(c.counts.iter().sum::<usize>(), 36);
    }

    #[test]
    fn too_few_bins() {
        assert!(psd_radial(&Tensor::zeros(&[4, 4]), 1).is_err());
    }
}
