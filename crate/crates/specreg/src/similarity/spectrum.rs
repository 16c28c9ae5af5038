//! Orthonormal 2D DCT-II / DCT-III pair used by residual complexity.
//!
//! Both transforms are scaled so that the flattened coefficient matrix has
//! the same Euclidean norm as the input (Parseval), and `idct2(dct2(x)) == x`
//! up to round-off.

use std::cell::RefCell;
use std::sync::Arc;

use rustdct::{DctPlanner, TransformType2And3};

use crate::img::Image2D;

thread_local! {
    static PLANNER: RefCell<DctPlanner<f64>> = RefCell::new(DctPlanner::new());
}

fn plan(len: usize) -> Arc<dyn TransformType2And3<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_dct2(len))
}

/// Frequency-domain representation of a residual image. `coefficients` is
/// row-major: index `ky * width + kx`.
#[derive(Debug, Clone)]
pub struct ResidualSpectrum {
    width: usize,
    height: usize,
    coefficients: Vec<f64>,
}

impl ResidualSpectrum {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn coefficients_mut(&mut self) -> &mut [f64] {
        &mut self.coefficients
    }

    pub fn get(&self, kx: usize, ky: usize) -> f64 {
        self.coefficients[ky * self.width + kx]
    }
}

// Forward: rustdct's unscaled DCT-II followed by the orthonormal weights
// sqrt(1/N) for k = 0 and sqrt(2/N) for k > 0.
fn dct2_rows(data: &mut [f64], width: usize) {
    let dct = plan(width);
    let mut scratch = vec![0.0; dct.get_scratch_len()];
    let w0 = (1.0 / width as f64).sqrt();
    let wk = (2.0 / width as f64).sqrt();
    for row in data.chunks_exact_mut(width) {
        dct.process_dct2_with_scratch(row, &mut scratch);
        row[0] *= w0;
        for v in row.iter_mut().skip(1) {
            *v *= wk;
        }
    }
}

// Inverse: undo the orthonormal weights so rustdct's DCT-III (which halves
// the first input) reproduces the signal exactly.
fn dct3_rows(data: &mut [f64], width: usize) {
    let dct = plan(width);
    let mut scratch = vec![0.0; dct.get_scratch_len()];
    let w0 = 2.0 / (width as f64).sqrt();
    let wk = (2.0 / width as f64).sqrt();
    for row in data.chunks_exact_mut(width) {
        row[0] *= w0;
        for v in row.iter_mut().skip(1) {
            *v *= wk;
        }
        dct.process_dct3_with_scratch(row, &mut scratch);
    }
}

fn transpose(data: &[f64], width: usize, height: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for y in 0..height {
        for x in 0..width {
            out[x * height + y] = data[y * width + x];
        }
    }
    out
}

/// Orthonormal 2D DCT-II of an image (rows, then columns).
pub fn dct2(img: &Image2D) -> ResidualSpectrum {
    let (w, h) = (img.width(), img.height());
    let mut buf = img.data().to_vec();
    dct2_rows(&mut buf, w);
    let mut buf = transpose(&buf, w, h);
    dct2_rows(&mut buf, h);
    let coefficients = transpose(&buf, h, w);
    ResidualSpectrum {
        width: w,
        height: h,
        coefficients,
    }
}

/// Orthonormal 2D DCT-III; exact inverse of `dct2`.
pub fn idct2(spec: &ResidualSpectrum) -> Image2D {
    let (w, h) = (spec.width, spec.height);
    let mut buf = transpose(&spec.coefficients, w, h);
    dct3_rows(&mut buf, h);
    let mut buf = transpose(&buf, h, w);
    dct3_rows(&mut buf, w);
    Image2D::new(w, h, buf).expect("inverse DCT preserves shape and finiteness")
}
