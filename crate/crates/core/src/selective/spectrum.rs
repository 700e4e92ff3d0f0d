use std::cell::RefCell;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Height and width of single-channel images stored as flattened rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ImageShape {
    pub height: usize,
    pub width: usize,
}

impl ImageShape {
    pub fn new(height: usize, width: usize) -> Self {
        ImageShape { height, width }
    }

    pub fn numel(&self) -> usize {
        self.height * self.width
    }
}

/// Unshifted 2-D DFT coefficients: bin `(u, v)` lives at `u * width + v` and
/// the DC term is at index 0.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub shape: ImageShape,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl Spectrum {
    pub fn power(&self) -> Vec<f64> {
        self.re
            .iter()
            .zip(&self.im)
            .map(|(r, i)| r * r + i * i)
            .collect()
    }

    fn to_complex(&self) -> Vec<Complex64> {
        self.re
            .iter()
            .zip(&self.im)
            .map(|(&r, &i)| Complex64::new(r, i))
            .collect()
    }

    fn from_complex(shape: ImageShape, data: &[Complex64]) -> Self {
        Spectrum {
            shape,
            re: data.iter().map(|c| c.re).collect(),
            im: data.iter().map(|c| c.im).collect(),
        }
    }

    /// Multiplies every coefficient by a real mask of the same layout.
    pub fn apply_mask(&mut self, mask: &[f64]) {
        for ((r, i), m) in self.re.iter_mut().zip(self.im.iter_mut()).zip(mask) {
            *r *= m;
            *i *= m;
        }
    }
}

/// Unnormalized forward transform `T(u,v) = Σ x(x,y)·exp(-2πj(ux/H + vy/W))`.
pub fn dft2(image: &Tensor) -> Result<Spectrum> {
    let shape = image_shape(image)?;
    dft2_slice(image.data(), shape)
}

pub fn dft2_slice(pixels: &[f64], shape: ImageShape) -> Result<Spectrum> {
    check_len(pixels.len(), shape)?;
    let mut data: Vec<Complex64> = pixels.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    transform(&mut data, shape, false);
    Ok(Spectrum::from_complex(shape, &data))
}

/// Inverse transform with the `1/(HW)` factor. Returns the real and imaginary
/// planes of the reconstruction.
pub fn idft2_complex(spec: &Spectrum) -> (Vec<f64>, Vec<f64>) {
    let mut data = spec.to_complex();
    transform(&mut data, spec.shape, true);
    let scale = 1.0 / spec.shape.numel() as f64;
    data.iter().map(|c| (c.re * scale, c.im * scale)).unzip()
}

/// Inverse transform of a spectrum that came from a real image; the
/// imaginary residue is discarded.
pub fn idft2(spec: &Spectrum) -> Tensor {
    let (re, _) = idft2_complex(spec);
    Tensor::new(vec![spec.shape.height, spec.shape.width], re).expect("spectrum layout")
}

fn transform(data: &mut [Complex64], shape: ImageShape, inverse: bool) {
    let ImageShape { height, width } = shape;
    PLANNER.with(|planner| {
        let mut planner = planner.borrow_mut();
        let (row_fft, col_fft) = if inverse {
            (
                planner.plan_fft_inverse(width),
                planner.plan_fft_inverse(height),
            )
        } else {
            (
                planner.plan_fft_forward(width),
                planner.plan_fft_forward(height),
            )
        };
        for row in data.chunks_exact_mut(width) {
            row_fft.process(row);
        }
        let mut column = vec![Complex64::new(0.0, 0.0); height];
        for c in 0..width {
            for r in 0..height {
                column[r] = data[r * width + c];
            }
            col_fft.process(&mut column);
            for r in 0..height {
                data[r * width + c] = column[r];
            }
        }
    });
}

fn image_shape(image: &Tensor) -> Result<ImageShape> {
    match image.shape() {
        [h, w] if *h > 0 && *w > 0 => Ok(ImageShape::new(*h, *w)),
        other => Err(Error::invalid(format!(
            "expected a non-empty H×W image, got shape {other:?}"
        ))),
    }
}

fn check_len(len: usize, shape: ImageShape) -> Result<()> {
    if shape.height == 0 || shape.width == 0 || len != shape.numel() {
        return Err(Error::ShapeMismatch {
            op: "dft2",
            left: vec![shape.height, shape.width],
            right: vec![len],
        });
    }
    Ok(())
}
