//! Shared fixtures for unit tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::img::{gaussian_blur, Image2D};

/// Document-like test image: light page, dark blocks, thin "text lines".
pub fn document(seed: u64, w: usize, h: usize) -> Image2D {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = Image2D::from_fn(w, h, |_, _| 0.85);
    let rect = |img: &mut Image2D, x0: usize, y0: usize, rw: usize, rh: usize, v: f64| {
        for y in y0..(y0 + rh).min(h) {
            for x in x0..(x0 + rw).min(w) {
                img.set(x, y, v);
            }
        }
    };
    for _ in 0..6 {
        let rw = rng.gen_range(w / 10..w / 3);
        let rh = rng.gen_range(h / 10..h / 3);
        let x0 = rng.gen_range(0..w - rw);
        let y0 = rng.gen_range(0..h - rh);
        rect(&mut img, x0, y0, rw, rh, 0.15);
    }
    for _ in 0..10 {
        let rw = rng.gen_range(w / 4..(3 * w) / 4);
        let x0 = rng.gen_range(0..w - rw);
        let y0 = rng.gen_range(0..h - 2);
        rect(&mut img, x0, y0, rw, 2, 0.2);
    }
    let mut img = gaussian_blur(&img, 1.0);
    // paper grain: low-amplitude smooth texture so flat areas are not featureless
    let grain = Image2D::from_fn(w, h, |_, _| rng.gen_range(-1.0..1.0));
    let grain = gaussian_blur(&grain, 1.5);
    for (v, g) in img.data_mut().iter_mut().zip(grain.data()) {
        *v = (*v + 0.05 * g).clamp(0.0, 1.0);
    }
    img
}
