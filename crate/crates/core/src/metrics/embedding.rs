use crate::selective::ImageShape;

/// Deterministic map from a flattened image to a unit-norm feature vector.
///
/// Stands in for a pretrained copy-detection or self-supervised backbone; any
/// such model can implement this trait.
pub trait Embedding {
    fn embed(&self, image: &[f64]) -> Vec<f64>;

    fn descriptor(&self) -> String;
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    } else {
        // constant input: no direction left after centering
        let u = 1.0 / (v.len() as f64).sqrt();
        v.iter_mut().for_each(|x| *x = u);
    }
    v
}

/// Mean-centered pixels scaled to unit length.
#[derive(Clone, Copy, Debug, Default)]
pub struct FlattenCosine;

impl Embedding for FlattenCosine {
    fn embed(&self, image: &[f64]) -> Vec<f64> {
        let mean = image.iter().sum::<f64>() / image.len().max(1) as f64;
        normalize(image.iter().map(|v| v - mean).collect())
    }

    fn descriptor(&self) -> String {
        "flatten-cosine".into()
    }
}

/// Concatenated intensity histograms of non-overlapping square patches,
/// scaled to unit length. Intensities are clamped to `[low, high]`.
#[derive(Clone, Copy, Debug)]
pub struct PatchHistogram {
    pub shape: ImageShape,
    pub patch: usize,
    pub bins: usize,
    pub low: f64,
    pub high: f64,
}

impl PatchHistogram {
    pub fn new(shape: ImageShape) -> Self {
        PatchHistogram {
            shape,
            patch: 8,
            bins: 16,
            low: -1.0,
            high: 1.0,
        }
    }
}

impl Embedding for PatchHistogram {
    fn embed(&self, image: &[f64]) -> Vec<f64> {
        let ImageShape { height, width } = self.shape;
        let rows = height.div_ceil(self.patch);
        let cols = width.div_ceil(self.patch);
        let mut hist = vec![0.0; rows * cols * self.bins];
        let span = self.high - self.low;
        for y in 0..height {
            for x in 0..width {
                let v = image[y * width + x].clamp(self.low, self.high);
                let b = (((v - self.low) / span) * self.bins as f64) as usize;
                let patch = (y / self.patch) * cols + x / self.patch;
                hist[patch * self.bins + b.min(self.bins - 1)] += 1.0;
            }
        }
        normalize(hist)
    }

    fn descriptor(&self) -> String {
        format!(
            "patch-histogram-{}x{}-{}bins",
            self.patch, self.patch, self.bins
        )
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embeddings_are_unit_norm() {
        let img: Vec<f64> = (0..256)
            .map(|i| ((i * 37) % 19) as f64 / 9.5 - 1.0)
            .collect();
        let shape = ImageShape::new(16, 16);
        for e in [
            FlattenCosine.embed(&img),
            PatchHistogram::new(shape).embed(&img),
        ] {
            let n: f64 = e.iter().map(|v| v * v).sum();
            assert!((n - 1.0).abs() < 1e-12);
        }
        let flat = FlattenCosine.embed(&[0.5; 16]);
        assert!((flat.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn histogram_counts_every_pixel() {
        let shape = ImageShape::new(12, 12);
        let h = PatchHistogram::new(shape);
        // 2×2 patches, one of which is clipped to 4×4 etc.
        let raw_len = 4 * h.bins;
        assert_eq!(h.embed(&[0.0; 144]).len(), raw_len);
    }
}
