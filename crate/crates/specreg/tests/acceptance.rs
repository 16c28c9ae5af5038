//! End-to-end acceptance suite. A single test runs every criterion, prints
//! one `criterion N: PASS/FAIL` line each, and fails if any criterion fails.
//!
//! Reference values used to judge the library (similarity scores, transforms,
//! gradients) are recomputed here with independent brute-force code.

use std::f64::consts::{PI, TAU};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use specreg::evaluate::{dice, field_error, invert_field, relative_overlap, total_field};
use specreg::img::{
    gaussian_blur, normalize_minmax, otsu_mask, sample_bilinear, save_png_gray, BinaryMask,
    BitDepth, Foreground, Image2D,
};
use specreg::pipeline::{register, RegistrationConfig};
use specreg::similarity::{
    correlation_ratio, cross_correlation, dct2, evaluate, gradient,
    localized_mutual_information, mutual_information, normalized_mutual_information,
    residual_complexity, ssd, Measure, SimilarityConfig,
};
use specreg::transform::{
    bspline_weights, random_deformation, warp_image, ControlGrid, DeformationField,
    HomogeneousTransform2D, WarpResult,
};

// ---------------------------------------------------------------------------
// Shared fixtures
// ---------------------------------------------------------------------------

/// Document-like test image: a bright page, a few large dark blocks, and a
/// dense scatter of small glyph-like marks so that local image gradients
/// constrain both displacement axes everywhere, plus low-amplitude paper
/// grain.
fn document(seed: u64, w: usize, h: usize) -> Image2D {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = Image2D::from_fn(w, h, |_, _| 0.85);
    let rect = |img: &mut Image2D, x0: usize, y0: usize, rw: usize, rh: usize, v: f64| {
        for y in y0..(y0 + rh).min(h) {
            for x in x0..(x0 + rw).min(w) {
                img.set(x, y, v);
            }
        }
    };
    for _ in 0..4 {
        let rw = rng.gen_range(w / 16..w / 8);
        let rh = rng.gen_range(h / 16..h / 8);
        let x0 = rng.gen_range(0..w - rw);
        let y0 = rng.gen_range(0..h - rh);
        rect(&mut img, x0, y0, rw, rh, 0.15);
    }
    let glyphs = w * h / 500;
    for _ in 0..glyphs {
        let rw = rng.gen_range(10..24);
        let rh = rng.gen_range(10..24);
        let x0 = rng.gen_range(0..w - rw);
        let y0 = rng.gen_range(0..h - rh);
        let v = rng.gen_range(0.05..0.3);
        rect(&mut img, x0, y0, rw, rh, v);
    }
    let mut img = gaussian_blur(&img, 1.0);
    let grain = Image2D::from_fn(w, h, |_, _| rng.gen_range(-1.0..1.0));
    let grain = gaussian_blur(&grain, 1.5);
    for (v, g) in img.data_mut().iter_mut().zip(grain.data()) {
        *v = (*v + 0.12 * g).clamp(0.0, 1.0);
    }
    img
}

fn smooth_random(seed: u64, w: usize, h: usize) -> Image2D {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Image2D::from_fn(w, h, |_, _| rng.gen_range(0.0..1.0));
    let sm = normalize_minmax(&gaussian_blur(&noise, 2.0));
    Image2D::from_fn(w, h, |x, y| 0.1 + 0.8 * sm.get(x, y))
}

fn as_warp(image: Image2D) -> WarpResult {
    let valid = BinaryMask::filled(image.width(), image.height(), true);
    WarpResult { image, valid }
}

fn full(w: usize, h: usize) -> BinaryMask {
    BinaryMask::filled(w, h, true)
}

// ---------------------------------------------------------------------------
// Criteria 1, 2 and 6: full registration runs on 512x512 synthetic documents
// ---------------------------------------------------------------------------

struct Case {
    label: String,
    dsc_before: f64,
    dsc_after: f64,
    mean_err: f64,
    max_err: f64,
    elapsed: f64,
    trace_csv: String,
}

/// Runs one full registration scenario: a seeded control-grid warp (max 8 px)
/// on a generated 512x512 document, optionally preceded by a rigid
/// misalignment (5 degrees, 15 px) and followed by a multiplicative bias
/// field in [0.7, 1.3] plus Gaussian noise (sigma 0.02).
fn run_case(seed: u64, measure: Measure, rigid: bool, distort: bool) -> Case {
    let n = 512usize;
    let img = document(seed, n, n);
    let truth_grid = random_deformation(seed + 100, (n, n), 64.0, 8.0).unwrap();
    let d = truth_grid.densify(n, n).unwrap();

    // rigid misalignment of 5 degrees about the image center plus (9, 12) px
    // translation (norm 15 px)
    let c = n as f64 / 2.0;
    let th = if rigid { 5.0f64.to_radians() } else { 0.0 };
    let (s, co) = th.sin_cos();
    let (tx, ty) = if rigid { (9.0, 12.0) } else { (0.0, 0.0) };
    let a = HomogeneousTransform2D::affine(
        co,
        -s,
        s,
        co,
        c - co * c + s * c + tx,
        c - s * c - co * c + ty,
    )
    .unwrap();

    // moving image M(q) = I(a(q) + d(a(q))) with edge-clamped sampling so the
    // generated frame carries no artificial dark border
    let mut mov = Image2D::from_fn(n, n, |x, y| {
        let (rx, ry) = a.apply(x as f64, y as f64).unwrap();
        let rx = rx.clamp(0.0, (n - 1) as f64);
        let ry = ry.clamp(0.0, (n - 1) as f64);
        let dd = d.sample_clamped(rx, ry);
        let sx = (rx + dd[0]).clamp(0.0, (n - 1) as f64);
        let sy = (ry + dd[1]).clamp(0.0, (n - 1) as f64);
        sample_bilinear(&img, sx, sy).unwrap()
    });
    if distort {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 500);
        let kx = rng.gen_range(1..3) as f64;
        let ky = rng.gen_range(1..3) as f64;
        let px: f64 = rng.gen_range(0.0..TAU);
        let py: f64 = rng.gen_range(0.0..TAU);
        for y in 0..n {
            for x in 0..n {
                let b = 1.0
                    + 0.3
                        * (TAU * kx * x as f64 / n as f64 + px).sin()
                        * (TAU * ky * y as f64 / n as f64 + py).sin();
                let v = mov.get(x, y);
                mov.set(x, y, (v * b).clamp(0.0, 1.0));
            }
        }
        for v in mov.data_mut() {
            let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            let z = (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos();
            *v = (*v + 0.02 * z).clamp(0.0, 1.0);
        }
    }

    let mut cfg = RegistrationConfig::default();
    cfg.similarity.measure = measure;
    cfg.coarse_spacing = 256.0;
    cfg.optimizer.max_iters = 500;
    cfg.optimizer.rel_tol = 1e-8;

    let t0 = Instant::now();
    let res = register(&img, &mov, &cfg).unwrap();
    let elapsed = t0.elapsed().as_secs_f64();

    // Otsu-mask DSC over the full area; pixels that the warp could not
    // observe (outside the source domain) are excluded from both masks.
    let m_ref = otsu_mask(&img, Foreground::Dark).unwrap();
    let masked_dice = |w: &WarpResult| {
        let mut a = m_ref.clone();
        let mut b = otsu_mask(&w.image, Foreground::Dark).unwrap();
        for k in 0..n * n {
            if !w.valid.bits()[k] {
                a.bits_mut()[k] = false;
                b.bits_mut()[k] = false;
            }
        }
        dice(&a, &b).unwrap()
    };
    let pre_inv = res.prereg.inverse().unwrap();
    let before = warp_image(&mov, &pre_inv, Some(&DeformationField::zeros(n, n))).unwrap();
    let after = res.warp(&mov).unwrap();
    let dsc_before = masked_dice(&before);
    let dsc_after = masked_dice(&after);

    // expected reference->moving displacement: p -> a^-1(p + v(p)) - p where
    // v is the fixed-point inverse of the generating field d
    let v = invert_field(&d);
    let a_inv = a.inverse().unwrap();
    let mut expected = DeformationField::zeros(n, n);
    for y in 0..n {
        for x in 0..n {
            let dd = v.get(x, y);
            let (qx, qy) = a_inv.apply(x as f64 + dd[0], y as f64 + dd[1]).unwrap();
            expected.set(x, y, [qx - x as f64, qy - y as f64]);
        }
    }
    let recovered = total_field(&res).unwrap();
    let (mean_err, max_err) = field_error(&expected, &recovered, 0.8).unwrap();

    Case {
        label: format!(
            "seed={seed} measure={} rigid={rigid} distort={distort}",
            measure.name()
        ),
        dsc_before,
        dsc_after,
        mean_err,
        max_err,
        elapsed,
        trace_csv: res.trace.to_csv(),
    }
}

fn criterion_1(cases: &[Case]) -> Result<String, String> {
    let mut parts = Vec::new();
    for c in cases {
        if c.dsc_before > 0.90 {
            return Err(format!(
                "{}: baseline DSC {:.4} > 0.90 (misalignment too mild to count)",
                c.label, c.dsc_before
            ));
        }
        if c.dsc_after < 0.95 {
            return Err(format!(
                "{}: DSC after registration {:.4} < 0.95",
                c.label, c.dsc_after
            ));
        }
        if c.elapsed > 300.0 {
            return Err(format!("{}: runtime {:.0}s > 300s", c.label, c.elapsed));
        }
        parts.push(format!(
            "{} DSC {:.3}->{:.3} in {:.0}s",
            c.label, c.dsc_before, c.dsc_after, c.elapsed
        ));
    }
    Ok(parts.join("; "))
}

fn criterion_2(clean_ssd: &Case, distorted: &[&Case]) -> Result<String, String> {
    if clean_ssd.mean_err > 0.5 || clean_ssd.max_err > 2.0 {
        return Err(format!(
            "{}: endpoint error mean {:.3} px (limit 0.5) max {:.3} px (limit 2.0)",
            clean_ssd.label, clean_ssd.mean_err, clean_ssd.max_err
        ));
    }
    let mut parts = vec![format!(
        "ssd clean mean {:.3} max {:.3} px",
        clean_ssd.mean_err, clean_ssd.max_err
    )];
    for c in distorted {
        if c.mean_err > 1.5 {
            return Err(format!(
                "{}: endpoint error mean {:.3} px > 1.5",
                c.label, c.mean_err
            ));
        }
        parts.push(format!("{} mean {:.3} px", c.label, c.mean_err));
    }
    Ok(parts.join("; "))
}

fn criterion_6(cases: &[&Case]) -> Result<String, String> {
    let mut rows_checked = 0usize;
    for c in cases {
        let mut lines = c.trace_csv.lines();
        let header = lines.next().ok_or_else(|| format!("{}: empty trace", c.label))?;
        if header != "iteration,level,objective,step,grad_norm" {
            return Err(format!("{}: unexpected trace header '{header}'", c.label));
        }
        let mut prev: Option<(usize, f64)> = None;
        for line in lines {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 5 {
                return Err(format!("{}: malformed trace row '{line}'", c.label));
            }
            let level: usize = fields[1]
                .parse()
                .map_err(|_| format!("{}: bad level in '{line}'", c.label))?;
            let objective: f64 = fields[2]
                .parse()
                .map_err(|_| format!("{}: bad objective in '{line}'", c.label))?;
            if let Some((plevel, pobj)) = prev {
                if level == plevel && objective > pobj + 1e-12 {
                    return Err(format!(
                        "{}: objective increased within level {level}: {pobj} -> {objective}",
                        c.label
                    ));
                }
            }
            prev = Some((level, objective));
            rows_checked += 1;
        }
    }
    Ok(format!(
        "objective non-increasing within each level across {} runs ({rows_checked} trace rows)",
        cases.len()
    ))
}

// ---------------------------------------------------------------------------
// Criterion 3: brute-force oracle equivalence on random 8x8 pairs
// ---------------------------------------------------------------------------

fn bin_ref(v: f64, bins: usize) -> usize {
    ((v * bins as f64).floor() as isize).clamp(0, bins as isize - 1) as usize
}

fn ssd_ref(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

fn cc_ref(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let sa = (a.iter().map(|x| (x - ma) * (x - ma)).sum::<f64>() / n).sqrt();
    let sb = (b.iter().map(|x| (x - mb) * (x - mb)).sum::<f64>() / n).sqrt();
    let cov = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>();
    cov / (n * sa * sb)
}

fn cr_ref(a: &[f64], b: &[f64], bins: usize) -> f64 {
    let n = b.len() as f64;
    let mb = b.iter().sum::<f64>() / n;
    let var = b.iter().map(|y| (y - mb) * (y - mb)).sum::<f64>() / n;
    let mut within = 0.0;
    for k in 0..bins {
        let vals: Vec<f64> = a
            .iter()
            .zip(b)
            .filter(|(x, _)| bin_ref(**x, bins) == k)
            .map(|(_, y)| *y)
            .collect();
        if vals.is_empty() {
            continue;
        }
        let nk = vals.len() as f64;
        let mk = vals.iter().sum::<f64>() / nk;
        within += nk * (vals.iter().map(|y| (y - mk) * (y - mk)).sum::<f64>() / nk);
    }
    1.0 - within / (n * var)
}

fn joint_ref(a: &[f64], b: &[f64], bins: usize) -> Vec<f64> {
    let mut c = vec![0.0; bins * bins];
    for (x, y) in a.iter().zip(b) {
        c[bin_ref(*x, bins) * bins + bin_ref(*y, bins)] += 1.0;
    }
    c
}

fn mi_of_counts(c: &[f64], bins: usize) -> f64 {
    let n: f64 = c.iter().sum();
    let pi: Vec<f64> = (0..bins)
        .map(|i| c[i * bins..(i + 1) * bins].iter().sum::<f64>() / n)
        .collect();
    let pj: Vec<f64> = (0..bins)
        .map(|j| (0..bins).map(|i| c[i * bins + j]).sum::<f64>() / n)
        .collect();
    let mut mi = 0.0;
    for i in 0..bins {
        for j in 0..bins {
            let p = c[i * bins + j] / n;
            if p > 0.0 {
                mi += p * (p / (pi[i] * pj[j])).ln();
            }
        }
    }
    mi
}

fn entropy_ref(p: &[f64]) -> f64 {
    p.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.ln()).sum()
}

fn nmi_ref(a: &[f64], b: &[f64], bins: usize) -> f64 {
    let c = joint_ref(a, b, bins);
    let n: f64 = c.iter().sum();
    let pij: Vec<f64> = c.iter().map(|v| v / n).collect();
    let pi: Vec<f64> = (0..bins)
        .map(|i| pij[i * bins..(i + 1) * bins].iter().sum())
        .collect();
    let pj: Vec<f64> = (0..bins)
        .map(|j| (0..bins).map(|i| pij[i * bins + j]).sum())
        .collect();
    (entropy_ref(&pi) + entropy_ref(&pj)) / entropy_ref(&pij)
}

/// Mean MI over square windows placed on a stride grid; windows with fewer
/// than 32 pixels are skipped, mirroring the documented LMI rule.
fn lmi_ref(a: &Image2D, b: &Image2D, bins: usize, window: usize, stride: usize) -> f64 {
    let (w, h) = (a.width(), a.height());
    let mut sum = 0.0;
    let mut retained = 0usize;
    let mut y0 = 0;
    while y0 < h {
        let mut x0 = 0;
        while x0 < w {
            let ww = window.min(w - x0);
            let wh = window.min(h - y0);
            let mut av = Vec::new();
            let mut bv = Vec::new();
            for y in y0..y0 + wh {
                for x in x0..x0 + ww {
                    av.push(a.get(x, y));
                    bv.push(b.get(x, y));
                }
            }
            if av.len() >= 32 {
                sum += mi_of_counts(&joint_ref(&av, &bv, bins), bins);
                retained += 1;
            }
            x0 += stride;
        }
        y0 += stride;
    }
    sum / retained as f64
}

/// Textbook O(N^2) orthonormal DCT-II, applied separably.
fn naive_dct2_ref(img: &Image2D) -> Vec<f64> {
    let (w, h) = (img.width(), img.height());
    let dct1 = |v: &[f64]| -> Vec<f64> {
        let n = v.len();
        (0..n)
            .map(|k| {
                let scale = if k == 0 {
                    (1.0 / n as f64).sqrt()
                } else {
                    (2.0 / n as f64).sqrt()
                };
                scale
                    * v.iter()
                        .enumerate()
                        .map(|(i, &x)| x * (PI * (2 * i + 1) as f64 * k as f64 / (2 * n) as f64).cos())
                        .sum::<f64>()
            })
            .collect()
    };
    let rows: Vec<Vec<f64>> = (0..h)
        .map(|y| dct1(&(0..w).map(|x| img.get(x, y)).collect::<Vec<f64>>()))
        .collect();
    let mut out = vec![0.0; w * h];
    for kx in 0..w {
        let col: Vec<f64> = (0..h).map(|y| rows[y][kx]).collect();
        let t = dct1(&col);
        for ky in 0..h {
            out[ky * w + kx] = t[ky];
        }
    }
    out
}

fn rc_ref(a: &Image2D, b: &Image2D, alpha: f64) -> f64 {
    let res = Image2D::from_fn(a.width(), a.height(), |x, y| a.get(x, y) - b.get(x, y));
    naive_dct2_ref(&res)
        .iter()
        .map(|&c| (c * c / alpha + 1.0).ln())
        .sum()
}

fn close_rel(lib: f64, oracle: f64, name: &str, pair: usize) -> Result<(), String> {
    let tol = 1e-12 * oracle.abs().max(1.0);
    if (lib - oracle).abs() > tol {
        return Err(format!(
            "pair {pair}, {name}: library {lib:.15e} vs oracle {oracle:.15e}"
        ));
    }
    Ok(())
}

fn criterion_3() -> Result<String, String> {
    let bins = 8;
    let mut cfg = SimilarityConfig::new(Measure::Lmi);
    cfg.bins = bins;
    cfg.lmi_window = 8;
    cfg.lmi_stride = 4;
    let region = full(8, 8);
    for pair in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(3000 + pair as u64);
        let a = Image2D::from_fn(8, 8, |_, _| rng.gen_range(0.0..1.0));
        let b = Image2D::from_fn(8, 8, |_, _| rng.gen_range(0.0..1.0));
        let av = a.data().to_vec();
        let bv = b.data().to_vec();
        let bw = as_warp(b.clone());

        close_rel(ssd(&a, &bw, &region).unwrap(), ssd_ref(&av, &bv), "ssd", pair)?;
        close_rel(
            cross_correlation(&a, &bw, &region).unwrap(),
            cc_ref(&av, &bv),
            "cc",
            pair,
        )?;
        close_rel(
            correlation_ratio(&a, &bw, &region, bins).unwrap(),
            cr_ref(&av, &bv, bins),
            "cr",
            pair,
        )?;
        close_rel(
            mutual_information(&a, &bw, &region, bins).unwrap(),
            mi_of_counts(&joint_ref(&av, &bv, bins), bins),
            "mi",
            pair,
        )?;
        close_rel(
            normalized_mutual_information(&a, &bw, &region, bins).unwrap(),
            nmi_ref(&av, &bv, bins),
            "nmi",
            pair,
        )?;
        close_rel(
            localized_mutual_information(&a, &bw, &region, &cfg).unwrap(),
            lmi_ref(&a, &b, bins, 8, 4),
            "lmi",
            pair,
        )?;
        close_rel(
            residual_complexity(&a, &bw, &region, 0.05).unwrap(),
            rc_ref(&a, &b, 0.05),
            "rc",
            pair,
        )?;
    }
    Ok("all 7 measures match brute-force references on 100 random 8x8 pairs".into())
}

// ---------------------------------------------------------------------------
// Criterion 4: gradients against central finite differences
// ---------------------------------------------------------------------------

/// 32x32 smooth image pair with a 4x4 control grid carrying a constant
/// displacement whose fractional part stays in [0.25, 0.75]: the 0.1 px probe
/// then never crosses a bilinear cell edge, so the coarse central difference
/// is free of interpolation-kink error. The interior region keeps the
/// evaluation set fixed under perturbation.
fn grad_fixture(seed: u64) -> (Image2D, Image2D, ControlGrid, BinaryMask) {
    let i = smooth_random(seed, 32, 32);
    let j = smooth_random(seed + 100, 32, 32);
    let mut grid =
        ControlGrid::new(4, 4, (32.0, 32.0), (-32.0, -32.0), vec![[0.0; 2]; 16]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 200);
    let dx = rng.gen_range(0.25..0.75);
    let dy = rng.gen_range(0.25..0.75);
    for d in grid.disp_mut() {
        *d = [dx, dy];
    }
    let mut region = BinaryMask::filled(32, 32, false);
    for y in 4..28 {
        for x in 4..28 {
            region.set(x, y, true);
        }
    }
    (i, j, grid, region)
}

fn fd_gradient_ref(
    cfg: &SimilarityConfig,
    i: &Image2D,
    j: &Image2D,
    grid: &ControlGrid,
    region: &BinaryMask,
    h: f64,
) -> Vec<[f64; 2]> {
    let pre = HomogeneousTransform2D::identity();
    let eval = |g: &ControlGrid| {
        let field = g.densify(i.width(), i.height()).unwrap();
        let warp = warp_image(j, &pre, Some(&field)).unwrap();
        evaluate(cfg, i, &warp, region).unwrap()
    };
    let mut out = vec![[0.0f64; 2]; grid.disp().len()];
    for k in 0..grid.disp().len() {
        for axis in 0..2 {
            let mut gp = grid.clone();
            gp.disp_mut()[k][axis] += h;
            let mut gm = grid.clone();
            gm.disp_mut()[k][axis] -= h;
            out[k][axis] = (eval(&gp) - eval(&gm)) / (2.0 * h);
        }
    }
    out
}

fn criterion_4() -> Result<String, String> {
    let pre = HomogeneousTransform2D::identity();
    for (measure, tol) in [
        (Measure::Ssd, 1e-3),
        (Measure::Rc, 1e-3),
        (Measure::Cc, 5e-2),
        (Measure::Cr, 5e-2),
        (Measure::Mi, 5e-2),
        (Measure::Nmi, 5e-2),
        (Measure::Lmi, 5e-2),
    ] {
        let mut cfg = SimilarityConfig::new(measure);
        cfg.bins = 16;
        cfg.lmi_window = 16;
        cfg.lmi_stride = 16;
        for instance in 0..10u64 {
            let (i, j, grid, region) = grad_fixture(4000 + instance);
            let g = gradient(&cfg, &i, &j, &pre, &grid, &region)
                .map_err(|e| format!("{}: instance {instance}: {e}", measure.name()))?;
            let fd = fd_gradient_ref(&cfg, &i, &j, &grid, &region, 0.1);
            let diff: f64 = g
                .iter()
                .zip(&fd)
                .map(|(x, y)| (x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2))
                .sum::<f64>()
                .sqrt();
            let norm: f64 = fd
                .iter()
                .map(|y| y[0] * y[0] + y[1] * y[1])
                .sum::<f64>()
                .sqrt();
            let err = diff / norm.max(1e-12);
            if err > tol {
                return Err(format!(
                    "{}: instance {instance} relative error {err:.3e} > {tol:.0e}",
                    measure.name()
                ));
            }
        }
    }
    Ok("all 7 gradients match 0.1 px central differences on 10 instances each".into())
}

// ---------------------------------------------------------------------------
// Criterion 5: analytic fixed points
// ---------------------------------------------------------------------------

fn criterion_5() -> Result<String, String> {
    // cubic B-spline weights form a partition of unity
    let mut rng = ChaCha8Rng::seed_from_u64(5001);
    for _ in 0..1000 {
        let u: f64 = rng.gen_range(0.0..1.0);
        let wsum: f64 = bspline_weights(u).unwrap().iter().sum();
        if (wsum - 1.0).abs() > 1e-12 {
            return Err(format!("weights at u={u} sum to {wsum}"));
        }
    }

    // NMI of an image with itself is (H + H) / H = 2
    let img = smooth_random(5002, 32, 32);
    let nmi = normalized_mutual_information(&img, &as_warp(img.clone()), &full(32, 32), 16).unwrap();
    if (nmi - 2.0).abs() > 1e-9 {
        return Err(format!("NMI(I, I) = {nmi}, expected 2"));
    }

    // a constructed independent pair: I varies only along x, J only along y,
    // bins aligned with the pattern, so the joint histogram factors exactly
    let bins = 8;
    let by_x = Image2D::from_fn(64, 64, |x, _| (x % bins) as f64 / bins as f64 + 0.01);
    let by_y = Image2D::from_fn(64, 64, |_, y| (y % bins) as f64 / bins as f64 + 0.01);
    let mi = mutual_information(&by_x, &as_warp(by_y), &full(64, 64), bins).unwrap();
    if mi.abs() > 1e-12 {
        return Err(format!("MI of independent pair = {mi}, expected 0"));
    }

    // residual complexity of a zero residual is exactly zero
    let rc = residual_complexity(&img, &as_warp(img.clone()), &full(32, 32), 0.05).unwrap();
    if rc != 0.0 {
        return Err(format!("RC of zero residual = {rc}, expected exactly 0"));
    }

    // Parseval: the orthonormal DCT preserves the squared norm
    let a = smooth_random(5003, 31, 33);
    let spatial: f64 = a.data().iter().map(|v| v * v).sum();
    let spectral: f64 = dct2(&a).coefficients().iter().map(|v| v * v).sum();
    if (spatial - spectral).abs() > 1e-9 * spatial {
        return Err(format!("Parseval violated: {spatial} vs {spectral}"));
    }

    // Dice and relative overlap obey dice = 2 RO / (1 + RO)
    let mut rng = ChaCha8Rng::seed_from_u64(5004);
    for pair in 0..100 {
        let p = BinaryMask::new(12, 9, (0..108).map(|_| rng.gen_bool(0.4)).collect()).unwrap();
        let s = BinaryMask::new(12, 9, (0..108).map(|_| rng.gen_bool(0.4)).collect()).unwrap();
        let (d, ro) = match (dice(&p, &s), relative_overlap(&p, &s)) {
            (Ok(d), Ok(ro)) => (d, ro),
            // both masks empty: the identity has no defined value
            _ => continue,
        };
        if (d - 2.0 * ro / (1.0 + ro)).abs() > 1e-12 {
            return Err(format!("pair {pair}: dice {d} vs identity {}", 2.0 * ro / (1.0 + ro)));
        }
    }
    Ok("B-spline partition of unity, NMI/MI/RC fixed points, Parseval, dice identity".into())
}

// ---------------------------------------------------------------------------
// Criterion 7: determinism of the synthetic-validation command
// ---------------------------------------------------------------------------

fn criterion_7() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let img_path = dir.path().join("img.png");
    save_png_gray(&document(9, 96, 96), &img_path, BitDepth::Eight).map_err(|e| e.to_string())?;
    let run = |out: &Path| -> Result<(), String> {
        let status = Command::new(env!("CARGO_BIN_EXE_specreg"))
            .args([
                "synth",
                "--image",
                img_path.to_str().unwrap(),
                "--seed",
                "7",
                "--max-disp",
                "3",
                "--levels",
                "2",
                "--measure",
                "ssd",
                "--out-dir",
                out.to_str().unwrap(),
            ])
            .status()
            .map_err(|e| e.to_string())?;
        if !status.success() {
            return Err(format!("synth run failed with {status}"));
        }
        Ok(())
    };
    let d1 = dir.path().join("a");
    let d2 = dir.path().join("b");
    run(&d1)?;
    run(&d2)?;
    for name in ["truth.dfld", "report.json"] {
        let b1 = std::fs::read(d1.join(name)).map_err(|e| format!("{name}: {e}"))?;
        let b2 = std::fs::read(d2.join(name)).map_err(|e| format!("{name}: {e}"))?;
        if b1 != b2 {
            return Err(format!("{name} differs between identical-seed runs"));
        }
    }
    Ok("repeated runs produce byte-identical field files and reports".into())
}

// ---------------------------------------------------------------------------

#[test]
fn acceptance() {
    // criteria 1 and 2 share the expensive 512x512 registration runs;
    // criterion 6 audits the optimizer traces of all of them
    let mut c1_cases = Vec::new();
    for seed in [1u64, 2, 3] {
        for measure in [Measure::Rc, Measure::Lmi] {
            c1_cases.push(run_case(seed, measure, true, true));
        }
    }
    let c2_ssd = run_case(1, Measure::Ssd, false, false);
    let c2_rc = run_case(1, Measure::Rc, false, true);
    let c2_lmi = run_case(1, Measure::Lmi, false, true);

    let all_runs: Vec<&Case> = c1_cases
        .iter()
        .chain([&c2_ssd, &c2_rc, &c2_lmi])
        .collect();

    let outcomes: Vec<(usize, Result<String, String>)> = vec![
        (1, criterion_1(&c1_cases)),
        (2, criterion_2(&c2_ssd, &[&c2_rc, &c2_lmi])),
        (3, criterion_3()),
        (4, criterion_4()),
        (5, criterion_5()),
        (6, criterion_6(&all_runs)),
        (7, criterion_7()),
    ];

    let mut failed = false;
    for (n, outcome) in &outcomes {
        match outcome {
            Ok(detail) => println!("criterion {n}: PASS — {detail}"),
            Err(msg) => {
                failed = true;
                println!("criterion {n}: FAIL — {msg}");
            }
        }
    }
    assert!(!failed, "one or more acceptance criteria failed");
}
