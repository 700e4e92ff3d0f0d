use std::f64::consts::PI;
use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::StandardNormal;

use super::config::{DatasetKind, DatasetSpec, ForgetMode, RetainPick};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::selective::ImageShape;

/// A dataset with its forget/retain partition.
#[derive(Clone, Debug)]
pub struct Dataset {
    /// `[n, d]`; images are flattened row-major.
    pub data: Tensor,
    pub forget_idx: Vec<usize>,
    pub retain_idx: Vec<usize>,
    pub image: Option<ImageShape>,
}

impl Dataset {
    pub fn forget(&self) -> Tensor {
        self.data.select_rows(&self.forget_idx)
    }

    pub fn retain(&self) -> Tensor {
        self.data.select_rows(&self.retain_idx)
    }

    /// The `n` retain points closest to any forget point (all when `n == 0`).
    pub fn retain_near_forget(&self, n: usize) -> Tensor {
        if n == 0 || n >= self.retain_idx.len() {
            return self.retain();
        }
        let mut ranked: Vec<(f64, usize)> = self
            .retain_idx
            .iter()
            .map(|&i| {
                let d = self
                    .forget_idx
                    .iter()
                    .map(|&f| sq_dist(self.data.row(i), self.data.row(f)))
                    .fold(f64::INFINITY, f64::min);
                (d, i)
            })
            .collect();
        ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let idx: Vec<usize> = ranked[..n].iter().map(|&(_, i)| i).collect();
        self.data.select_rows(&idx)
    }
}

impl Dataset {
    /// `n` retain points at evenly spaced positions of the retain split.
    pub fn retain_spread(&self, n: usize) -> Tensor {
        let len = self.retain_idx.len();
        if n == 0 || n >= len {
            return self.retain();
        }
        let idx: Vec<usize> = (0..n).map(|i| self.retain_idx[i * len / n]).collect();
        self.data.select_rows(&idx)
    }

    /// The retain points unlearning sees under `pick`.
    pub fn retain_subset(&self, n: usize, pick: RetainPick) -> Tensor {
        match pick {
            RetainPick::Nearest => self.retain_near_forget(n),
            RetainPick::Spread => self.retain_spread(n),
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Builds the dataset and its partition, deterministically from `spec.seed`.
pub fn make_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    let mut rng = crate::seeded_rng(spec.seed);
    let (data, image) = match spec.kind {
        DatasetKind::TwoMoons => (two_moons(spec.n_samples, spec.noise, &mut rng), None),
        DatasetKind::Gaussians => (gaussian_ring(spec.n_samples, spec.noise, &mut rng), None),
        DatasetKind::SyntheticTextures => {
            let shape = ImageShape::new(spec.image_size, spec.image_size);
            (
                synthetic_textures(spec.n_samples, shape, spec.noise, &mut rng),
                Some(shape),
            )
        }
        DatasetKind::ImageDir => {
            let dir = spec
                .path
                .as_deref()
                .ok_or_else(|| Error::Config("dataset.path is required for image-dir".into()))?;
            let shape = ImageShape::new(spec.image_size, spec.image_size);
            (load_image_dir(dir, shape, spec.n_samples)?, Some(shape))
        }
    };
    let forget_idx = select_forget(spec, &data, &mut rng)?;
    let retain_idx = (0..data.rows())
        .filter(|i| !forget_idx.contains(i))
        .collect();
    Ok(Dataset {
        data,
        forget_idx,
        retain_idx,
        image,
    })
}

fn select_forget<R: Rng + ?Sized>(
    spec: &DatasetSpec,
    data: &Tensor,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let n = data.rows();
    let mut idx = match spec.forget {
        ForgetMode::Indices => {
            let mut v = spec.forget_indices.clone();
            v.sort_unstable();
            v.dedup();
            if v.len() != spec.forget_indices.len() {
                return Err(Error::Config(
                    "dataset.forget_indices contains duplicates".into(),
                ));
            }
            if let Some(&bad) = v.iter().find(|&&i| i >= n) {
                return Err(Error::Config(format!(
                    "forget index {bad} outside a dataset of {n} samples"
                )));
            }
            v
        }
        ForgetMode::Random => {
            check_count(spec.forget_count, n)?;
            sample_indices(rng, n, spec.forget_count).into_vec()
        }
        ForgetMode::Cluster => {
            check_count(spec.forget_count, n)?;
            let anchor = match spec.forget_anchor {
                Some(a) if a >= n => {
                    return Err(Error::Config(format!(
                        "forget anchor {a} outside a dataset of {n} samples"
                    )));
                }
                Some(a) => a,
                None => rng.random_range(0..n),
            };
            let mut ranked: Vec<(f64, usize)> = (0..n)
                .map(|i| (sq_dist(data.row(i), data.row(anchor)), i))
                .collect();
            ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            ranked[..spec.forget_count]
                .iter()
                .map(|&(_, i)| i)
                .collect()
        }
    };
    idx.sort_unstable();
    if idx.len() >= n {
        return Err(Error::Config(
            "forget set must leave at least one retain sample".into(),
        ));
    }
    Ok(idx)
}

fn check_count(count: usize, n: usize) -> Result<()> {
    if count == 0 || count >= n {
        return Err(Error::Config(format!(
            "forget_count={count} must be in 1..{n}"
        )));
    }
    Ok(())
}

/// Two interleaved unit semicircles with Gaussian jitter. Points are placed
/// at evenly spaced angles, upper moon first.
pub fn two_moons<R: Rng + ?Sized>(n: usize, noise: f64, rng: &mut R) -> Tensor {
    let upper = n.div_ceil(2);
    let lower = n - upper;
    let angle = |i: usize, m: usize| {
        if m > 1 {
            PI * i as f64 / (m - 1) as f64
        } else {
            0.0
        }
    };
    let mut data = Vec::with_capacity(2 * n);
    for i in 0..upper {
        let a = angle(i, upper);
        data.extend([a.cos(), a.sin()]);
    }
    for i in 0..lower {
        let a = angle(i, lower);
        data.extend([1.0 - a.cos(), 0.5 - a.sin()]);
    }
    if noise > 0.0 {
        for v in &mut data {
            *v += noise * rng.sample::<f64, _>(StandardNormal);
        }
    }
    Tensor::new(vec![n, 2], data).expect("two-moons shape")
}

/// Eight isotropic Gaussians on a circle of radius 1.5, assigned round-robin.
pub fn gaussian_ring<R: Rng + ?Sized>(n: usize, noise: f64, rng: &mut R) -> Tensor {
    let mut data = Vec::with_capacity(2 * n);
    for i in 0..n {
        let a = 2.0 * PI * (i % 8) as f64 / 8.0;
        let jx: f64 = rng.sample(StandardNormal);
        let jy: f64 = rng.sample(StandardNormal);
        data.extend([1.5 * a.cos() + noise * jx, 1.5 * a.sin() + noise * jy]);
    }
    Tensor::new(vec![n, 2], data).expect("gaussian ring shape")
}

/// Sums of one to three random oriented gratings, scaled into `[-1, 1]`,
/// plus pixel noise.
pub fn synthetic_textures<R: Rng + ?Sized>(
    n: usize,
    shape: ImageShape,
    noise: f64,
    rng: &mut R,
) -> Tensor {
    let ImageShape { height, width } = shape;
    let max_cycles = (height.min(width) as f64 / 3.0).max(1.0);
    let mut data = Vec::with_capacity(n * shape.numel());
    for _ in 0..n {
        let parts: usize = rng.random_range(1..=3);
        let gratings: Vec<[f64; 4]> = (0..parts)
            .map(|_| {
                let cycles = rng.random_range(1.0..=max_cycles);
                let theta = rng.random_range(0.0..PI);
                let phase = rng.random_range(0.0..2.0 * PI);
                let amp = rng.random_range(0.3..1.0);
                [cycles * theta.cos(), cycles * theta.sin(), phase, amp]
            })
            .collect();
        let total: f64 = gratings.iter().map(|g| g[3]).sum();
        for y in 0..height {
            for x in 0..width {
                let v: f64 = gratings
                    .iter()
                    .map(|g| {
                        let arg = 2.0
                            * PI
                            * (g[0] * x as f64 / width as f64 + g[1] * y as f64 / height as f64)
                            + g[2];
                        g[3] * arg.sin()
                    })
                    .sum::<f64>()
                    / total;
                let jitter = if noise > 0.0 {
                    noise * rng.sample::<f64, _>(StandardNormal)
                } else {
                    0.0
                };
                data.push((v + jitter).clamp(-1.0, 1.0));
            }
        }
    }
    Tensor::new(vec![n, shape.numel()], data).expect("texture shape")
}

/// Loads up to `limit` images from `dir` in file-name order. PGM and PNG
/// files are decoded to grayscale and resized; `.f64` files hold exactly
/// `H·W` little-endian doubles. Pixels map to `[-1, 1]`.
pub fn load_image_dir(dir: &Path, shape: ImageShape, limit: usize) -> Result<Tensor> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension()
                    .and_then(|e| e.to_str())
                    .map(str::to_ascii_lowercase)
                    .as_deref(),
                Some("pgm" | "png" | "f64")
            )
        })
        .collect();
    files.sort();
    files.truncate(limit);
    if files.is_empty() {
        return Err(Error::Config(format!(
            "no .pgm, .png or .f64 images in {}",
            dir.display()
        )));
    }
    let mut data = Vec::with_capacity(files.len() * shape.numel());
    for path in &files {
        data.extend(load_image(path, shape)?);
    }
    Tensor::new(vec![files.len(), shape.numel()], data)
}

fn load_image(path: &Path, shape: ImageShape) -> Result<Vec<f64>> {
    if path.extension().and_then(|e| e.to_str()) == Some("f64") {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() != 8 * shape.numel() {
            return Err(Error::Config(format!(
                "{}: expected {} doubles, found {} bytes",
                path.display(),
                shape.numel(),
                bytes.len()
            )));
        }
        return Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect());
    }
    let img = image::open(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        .to_luma32f();
    let img = if img.dimensions() == (shape.width as u32, shape.height as u32) {
        img
    } else {
        image::imageops::resize(
            &img,
            shape.width as u32,
            shape.height as u32,
            image::imageops::FilterType::Triangle,
        )
    };
    Ok(img.pixels().map(|p| 2.0 * p.0[0] as f64 - 1.0).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::RunConfig;

    #[test]
    fn noiseless_moons_lie_on_semicircles() {
        let mut rng = crate::seeded_rng(0);
        let x = two_moons(101, 0.0, &mut rng);
        for i in 0..101 {
            let [a, b] = [x.row(i)[0], x.row(i)[1]];
            let r = if i < 51 {
                (a * a + b * b).sqrt()
            } else {
                ((a - 1.0).powi(2) + (b - 0.5).powi(2)).sqrt()
            };
            assert!((r - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn partition_and_determinism() {
        let spec = RunConfig::default().dataset;
        let a = make_dataset(&spec).unwrap();
        let b = make_dataset(&spec).unwrap();
        assert_eq!(a.data, b.data);
        assert_eq!(a.forget_idx, b.forget_idx);
        assert_eq!((a.forget_idx.len(), a.retain_idx.len()), (6, 994));
        assert_eq!(a.retain_near_forget(10).rows(), 10);
    }

    #[test]
    fn explicit_indices_are_checked() {
        let mut spec = RunConfig::default().dataset;
        spec.forget = ForgetMode::Indices;
        spec.forget_indices = vec![3, 3];
        assert!(make_dataset(&spec).is_err());
        spec.forget_indices = vec![5000];
        assert!(make_dataset(&spec).is_err());
        spec.forget_indices = vec![1, 7];
        assert_eq!(make_dataset(&spec).unwrap().forget_idx, vec![1, 7]);
    }

    #[test]
    fn textures_stay_in_range() {
        let mut rng = crate::seeded_rng(1);
        let x = synthetic_textures(4, ImageShape::new(28, 28), 0.05, &mut rng);
        assert_eq!(x.shape(), &[4, 784]);
        assert!(x.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn image_dir_reads_pgm_and_raw() {
        let dir = tempfile::tempdir().unwrap();
        let mut pgm = b"P5\n4 4\n255\n".to_vec();
        pgm.extend((0..16u8).map(|i| i * 17));
        std::fs::write(dir.path().join("a.pgm"), pgm).unwrap();
        let raw: Vec<u8> = (0..16)
            .flat_map(|i| (i as f64 / 16.0).to_le_bytes())
            .collect();
        std::fs::write(dir.path().join("b.f64"), raw).unwrap();
        let x = load_image_dir(dir.path(), ImageShape::new(4, 4), 10).unwrap();
        assert_eq!(x.shape(), &[2, 16]);
        assert!((x.row(0)[0] + 1.0).abs() < 1e-6 && (x.row(0)[15] - 1.0).abs() < 1e-6);
        assert_eq!(x.row(1)[1], 1.0 / 16.0);
        assert!(load_image_dir(&dir.path().join("missing"), ImageShape::new(4, 4), 1).is_err());
    }
}
