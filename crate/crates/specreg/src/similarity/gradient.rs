//! Gradient of the registration objective with respect to control-grid
//! displacements.
//!
//! SSD, CC, CR and RC have closed-form derivatives in the warped intensities
//! that chain through bilinear sampling and the pre-transform. The histogram
//! measures (MI, NMI, LMI) use central finite differences with step 0.1 px;
//! each perturbation only touches the pixels inside one control point's
//! support, so the histograms are updated incrementally via the identity
//! MI = ln N + (S_joint - S_r - S_c) / N with S = sum of n ln n over cells.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::img::{sample_bilinear, sample_bilinear_grad, BinaryMask, Image2D};
use crate::transform::{warp_image, ControlGrid, DeformationField, HomogeneousTransform2D};

use super::{
    bin_of, dct2, evaluate, idct2, lmi_window_origins, Measure, SimilarityConfig,
    LMI_MIN_WINDOW_PIXELS,
};

const FD_STEP: f64 = 0.1;

/// Gradient of `evaluate` with respect to each control displacement, row
/// major over the grid, measured on the warp of `j_img` under `pre` and
/// `grid`.
pub fn gradient(
    cfg: &SimilarityConfig,
    i_img: &Image2D,
    j_img: &Image2D,
    pre: &HomogeneousTransform2D,
    grid: &ControlGrid,
    region: &BinaryMask,
) -> Result<Vec<[f64; 2]>> {
    cfg.validate()?;
    let (w, h) = (i_img.width(), i_img.height());
    let field = grid.densify(w, h)?;
    let warp = warp_image(j_img, pre, Some(&field))?;
    let base = evaluate(cfg, i_img, &warp, region)?;
    if !base.is_finite() {
        return Err(Error::Numeric(format!(
            "objective is not finite at the evaluation point: {base}"
        )));
    }
    match cfg.measure {
        Measure::Ssd | Measure::Cc | Measure::Cr | Measure::Rc => {
            let dval = dvalue(cfg, i_img, &warp, region)?;
            chain_to_grid(&dval, &field, pre, j_img, grid, w, h)
        }
        Measure::Mi | Measure::Nmi | Measure::Lmi => {
            fd_histogram_gradient(cfg, i_img, j_img, pre, grid, region, &field, &warp)
        }
    }
}

/// Derivative of the minimized objective with respect to each warped
/// intensity; zero outside the evaluation region.
fn dvalue(
    cfg: &SimilarityConfig,
    i_img: &Image2D,
    warp: &crate::transform::WarpResult,
    region: &BinaryMask,
) -> Result<Vec<f64>> {
    let len = i_img.data().len();
    let idx: Vec<usize> = (0..len)
        .filter(|&k| region.bits()[k] && warp.valid.bits()[k])
        .collect();
    if idx.is_empty() {
        return Err(Error::InvalidInput("empty evaluation region".into()));
    }
    let n = idx.len() as f64;
    let mut dval = vec![0.0; len];
    match cfg.measure {
        Measure::Ssd => {
            for &k in &idx {
                dval[k] = 2.0 * (warp.image.data()[k] - i_img.data()[k]) / n;
            }
        }
        Measure::Cc => {
            let mu_i = idx.iter().map(|&k| i_img.data()[k]).sum::<f64>() / n;
            let mu_j = idx.iter().map(|&k| warp.image.data()[k]).sum::<f64>() / n;
            let var = |img: &Image2D, mu: f64| {
                idx.iter()
                    .map(|&k| (img.data()[k] - mu) * (img.data()[k] - mu))
                    .sum::<f64>()
                    / n
            };
            let sd_i = var(i_img, mu_i).sqrt();
            let sd_j = var(&warp.image, mu_j).sqrt();
            if sd_i == 0.0 || sd_j == 0.0 {
                return Err(Error::Numeric("zero variance in correlation".into()));
            }
            let rho = idx
                .iter()
                .map(|&k| (i_img.data()[k] - mu_i) * (warp.image.data()[k] - mu_j))
                .sum::<f64>()
                / (n * sd_i * sd_j);
            for &k in &idx {
                let d_rho = (i_img.data()[k] - mu_i) / (n * sd_i * sd_j)
                    - rho * (warp.image.data()[k] - mu_j) / (n * sd_j * sd_j);
                dval[k] = -d_rho;
            }
        }
        Measure::Cr => {
            let bins = cfg.bins;
            let mu = idx.iter().map(|&k| warp.image.data()[k]).sum::<f64>() / n;
            let total_var = idx
                .iter()
                .map(|&k| (warp.image.data()[k] - mu) * (warp.image.data()[k] - mu))
                .sum::<f64>();
            if total_var == 0.0 {
                return Err(Error::Numeric("zero variance of the warped image".into()));
            }
            let mut cnt = vec![0.0f64; bins];
            let mut sum = vec![0.0f64; bins];
            let mut within = 0.0;
            for &k in &idx {
                let b = bin_of(i_img.data()[k], bins);
                cnt[b] += 1.0;
                sum[b] += warp.image.data()[k];
            }
            for &k in &idx {
                let b = bin_of(i_img.data()[k], bins);
                let mu_k = sum[b] / cnt[b];
                within += (warp.image.data()[k] - mu_k) * (warp.image.data()[k] - mu_k);
            }
            let one_minus_eta = within / total_var;
            for &k in &idx {
                let b = bin_of(i_img.data()[k], bins);
                let mu_k = sum[b] / cnt[b];
                let v = warp.image.data()[k];
                let d_eta = -2.0 * (v - mu_k) / total_var
                    + one_minus_eta * 2.0 * (v - mu) / total_var;
                dval[k] = -d_eta;
            }
        }
        Measure::Rc => {
            let mut residual = Image2D::zeros(i_img.width(), i_img.height());
            for &k in &idx {
                residual.data_mut()[k] = i_img.data()[k] - warp.image.data()[k];
            }
            let mut spec = dct2(&residual);
            // d/dc of ln(c^2/alpha + 1), mapped back by the transpose (the
            // inverse, since the transform is orthonormal)
            for c in spec.coefficients_mut() {
                *c = 2.0 * *c / (*c * *c + cfg.rc_alpha);
            }
            let g = idct2(&spec);
            for &k in &idx {
                dval[k] = -g.data()[k];
            }
        }
        _ => unreachable!("histogram measures use the finite-difference path"),
    }
    Ok(dval)
}

/// Chains per-pixel intensity derivatives through bilinear sampling, the
/// pre-transform Jacobian and the B-spline tensor weights.
fn chain_to_grid(
    dval: &[f64],
    field: &DeformationField,
    pre: &HomogeneousTransform2D,
    j_img: &Image2D,
    grid: &ControlGrid,
    w: usize,
    h: usize,
) -> Result<Vec<[f64; 2]>> {
    let nx = grid.nx();
    let mut out = vec![[0.0f64; 2]; nx * grid.ny()];
    for y in 0..h {
        for x in 0..w {
            let k = y * w + x;
            if dval[k] == 0.0 {
                continue;
            }
            let d = field.get(x, y);
            let q = (x as f64 + d[0], y as f64 + d[1]);
            let Ok((sx, sy)) = pre.apply(q.0, q.1) else {
                continue;
            };
            let Some((_, gx, gy)) = sample_bilinear_grad(j_img, sx, sy) else {
                continue;
            };
            let jac = pre.jacobian(q.0, q.1);
            // d(sampled intensity)/d(displacement at p)
            let dq = [
                gx * jac[0][0] + gy * jac[1][0],
                gx * jac[0][1] + gy * jac[1][1],
            ];
            let Some((i, j, u, v)) = grid.locate(x as f64, y as f64) else {
                continue;
            };
            let bu = crate::transform::bspline_weights(u)?;
            let bv = crate::transform::bspline_weights(v)?;
            for (m, &wv) in bv.iter().enumerate() {
                for (l, &wu) in bu.iter().enumerate() {
                    let wgt = wu * wv * dval[k];
                    let cell = &mut out[(j + m) * nx + i + l];
                    cell[0] += wgt * dq[0];
                    cell[1] += wgt * dq[1];
                }
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Finite differences with incremental histogram bookkeeping
// ---------------------------------------------------------------------------

#[inline]
fn nlogn(x: f64) -> f64 {
    if x > 0.0 {
        x * x.ln()
    } else {
        0.0
    }
}

/// Joint histogram with cached n ln n sums over the joint table and both
/// marginals.
struct HistStat {
    joint: Vec<f64>,
    r: Vec<f64>,
    c: Vec<f64>,
    n: f64,
    s_joint: f64,
    s_r: f64,
    s_c: f64,
}

impl HistStat {
    fn from_joint(bins: usize, joint: Vec<f64>) -> Self {
        let mut r = vec![0.0; bins];
        let mut c = vec![0.0; bins];
        for i in 0..bins {
            for j in 0..bins {
                r[i] += joint[i * bins + j];
                c[j] += joint[i * bins + j];
            }
        }
        let n = r.iter().sum();
        let s_joint = joint.iter().map(|&x| nlogn(x)).sum();
        let s_r = r.iter().map(|&x| nlogn(x)).sum();
        let s_c = c.iter().map(|&x| nlogn(x)).sum();
        HistStat {
            joint,
            r,
            c,
            n,
            s_joint,
            s_r,
            s_c,
        }
    }

    /// Sums after applying sparse count deltas; None when the histogram
    /// empties out.
    fn with_deltas(&self, d: &Deltas) -> Option<(f64, f64, f64, f64)> {
        let n = self.n + d.n;
        if n < 0.5 {
            return None;
        }
        let bump = |base: &[f64], map: &HashMap<usize, f64>, s0: f64| {
            let mut s = s0;
            for (&cell, &delta) in map {
                s += nlogn(base[cell] + delta) - nlogn(base[cell]);
            }
            s
        };
        Some((
            n,
            bump(&self.joint, &d.joint, self.s_joint),
            bump(&self.r, &d.r, self.s_r),
            bump(&self.c, &d.c, self.s_c),
        ))
    }

    fn mi(&self) -> f64 {
        mi_from(self.n, self.s_joint, self.s_r, self.s_c)
    }
}

fn mi_from(n: f64, s_joint: f64, s_r: f64, s_c: f64) -> f64 {
    n.ln() + (s_joint - s_r - s_c) / n
}

fn nmi_from(n: f64, s_joint: f64, s_r: f64, s_c: f64) -> Option<f64> {
    let hi = n.ln() - s_r / n;
    let hj = n.ln() - s_c / n;
    let hij = n.ln() - s_joint / n;
    if hij <= 0.0 {
        return None;
    }
    Some((hi + hj) / hij)
}

/// Sparse count changes induced by one perturbation.
#[derive(Default)]
struct Deltas {
    joint: HashMap<usize, f64>,
    r: HashMap<usize, f64>,
    c: HashMap<usize, f64>,
    n: f64,
}

impl Deltas {
    fn add(&mut self, bins: usize, pair: (usize, usize), sign: f64) {
        *self.joint.entry(pair.0 * bins + pair.1).or_default() += sign;
        *self.r.entry(pair.0).or_default() += sign;
        *self.c.entry(pair.1).or_default() += sign;
        self.n += sign;
    }

    fn transition(&mut self, bins: usize, old: Option<(usize, usize)>, new: Option<(usize, usize)>) {
        if old == new {
            return;
        }
        if let Some(p) = old {
            self.add(bins, p, -1.0);
        }
        if let Some(p) = new {
            self.add(bins, p, 1.0);
        }
    }
}

/// Bin pair change of one pixel under one perturbation.
struct Transition {
    x: usize,
    y: usize,
    old: Option<(usize, usize)>,
    new: Option<(usize, usize)>,
}

struct LmiWindow {
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
    stat: HistStat,
    mi: f64,
    retained: bool,
}

impl LmiWindow {
    fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }
}

#[allow(clippy::too_many_arguments)]
fn fd_histogram_gradient(
    cfg: &SimilarityConfig,
    i_img: &Image2D,
    j_img: &Image2D,
    pre: &HomogeneousTransform2D,
    grid: &ControlGrid,
    region: &BinaryMask,
    field: &DeformationField,
    warp: &crate::transform::WarpResult,
) -> Result<Vec<[f64; 2]>> {
    let (w, h) = (i_img.width(), i_img.height());
    let bins = cfg.bins;

    // base bin pair per pixel; None = outside region or invalid
    let mut base_pair: Vec<Option<(usize, usize)>> = vec![None; w * h];
    for k in 0..w * h {
        if region.bits()[k] && warp.valid.bits()[k] {
            base_pair[k] = Some((
                bin_of(i_img.data()[k], bins),
                bin_of(warp.image.data()[k], bins),
            ));
        }
    }

    // global or per-window base statistics
    let global = {
        let mut joint = vec![0.0; bins * bins];
        for p in base_pair.iter().flatten() {
            joint[p.0 * bins + p.1] += 1.0;
        }
        HistStat::from_joint(bins, joint)
    };
    let mut windows: Vec<LmiWindow> = Vec::new();
    let mut lmi_base_sum = 0.0;
    let mut lmi_base_count = 0usize;
    if cfg.measure == Measure::Lmi {
        if cfg.lmi_window > w.min(h) {
            return Err(Error::InvalidInput(
                "lmi_window larger than the image".into(),
            ));
        }
        for (x0, y0) in lmi_window_origins(w, h, cfg.lmi_stride) {
            let x1 = (x0 + cfg.lmi_window).min(w);
            let y1 = (y0 + cfg.lmi_window).min(h);
            let mut joint = vec![0.0; bins * bins];
            for y in y0..y1 {
                for x in x0..x1 {
                    if let Some(p) = base_pair[y * w + x] {
                        joint[p.0 * bins + p.1] += 1.0;
                    }
                }
            }
            let stat = HistStat::from_joint(bins, joint);
            let retained = stat.n as usize >= LMI_MIN_WINDOW_PIXELS;
            let mi = if retained { stat.mi() } else { 0.0 };
            if retained {
                lmi_base_sum += mi;
                lmi_base_count += 1;
            }
            windows.push(LmiWindow {
                x0,
                y0,
                x1,
                y1,
                stat,
                mi,
                retained,
            });
        }
        if lmi_base_count == 0 {
            return Err(Error::InvalidInput("no retained LMI windows".into()));
        }
    }

    // negated objective under one set of transitions
    let value = |transitions: &[Transition]| -> Result<f64> {
        match cfg.measure {
            Measure::Mi | Measure::Nmi => {
                let mut d = Deltas::default();
                for t in transitions {
                    d.transition(bins, t.old, t.new);
                }
                let (n, sj, sr, sc) = global
                    .with_deltas(&d)
                    .ok_or_else(|| Error::Numeric("evaluation region vanished".into()))?;
                if cfg.measure == Measure::Mi {
                    Ok(-mi_from(n, sj, sr, sc))
                } else {
                    nmi_from(n, sj, sr, sc)
                        .map(|v| -v)
                        .ok_or_else(|| Error::Numeric("zero joint entropy".into()))
                }
            }
            Measure::Lmi => {
                let mut per_window: HashMap<usize, Deltas> = HashMap::new();
                for t in transitions {
                    for (wi, win) in windows.iter().enumerate() {
                        if win.contains(t.x, t.y) {
                            per_window
                                .entry(wi)
                                .or_default()
                                .transition(bins, t.old, t.new);
                        }
                    }
                }
                let mut sum = lmi_base_sum;
                let mut count = lmi_base_count as isize;
                for (&wi, d) in &per_window {
                    let win = &windows[wi];
                    if win.retained {
                        sum -= win.mi;
                        count -= 1;
                    }
                    if let Some((n, sj, sr, sc)) = win.stat.with_deltas(d) {
                        if n as usize >= LMI_MIN_WINDOW_PIXELS {
                            sum += mi_from(n, sj, sr, sc);
                            count += 1;
                        }
                    }
                }
                if count <= 0 {
                    return Err(Error::Numeric("no retained LMI windows".into()));
                }
                Ok(-(sum / count as f64))
            }
            _ => unreachable!(),
        }
    };

    let nx = grid.nx();
    let (sx, sy) = grid.spacing();
    let (ox, oy) = grid.origin();
    let mut out = vec![[0.0f64; 2]; nx * grid.ny()];
    for b in 0..grid.ny() {
        for a in 0..nx {
            // support of control point (a, b) clipped to the pixel raster
            let px0 = ((ox + (a as f64 - 2.0) * sx).ceil().max(0.0)) as usize;
            let px1 = (ox + (a as f64 + 2.0) * sx).floor().min((w - 1) as f64);
            let py0 = ((oy + (b as f64 - 2.0) * sy).ceil().max(0.0)) as usize;
            let py1 = (oy + (b as f64 + 2.0) * sy).floor().min((h - 1) as f64);
            if px1 < px0 as f64 || py1 < py0 as f64 {
                continue;
            }
            let (px1, py1) = (px1 as usize, py1 as usize);
            for axis in 0..2 {
                let mut plus: Vec<Transition> = Vec::new();
                let mut minus: Vec<Transition> = Vec::new();
                for y in py0..=py1 {
                    for x in px0..=px1 {
                        let k = y * w + x;
                        if !region.bits()[k] {
                            continue;
                        }
                        let wp = grid.point_weight(a, b, x as f64, y as f64);
                        if wp == 0.0 {
                            continue;
                        }
                        let bi = bin_of(i_img.data()[k], bins);
                        let d0 = field.get(x, y);
                        for (sign, list) in [(1.0, &mut plus), (-1.0, &mut minus)] {
                            let mut d = d0;
                            d[axis] += sign * FD_STEP * wp;
                            let q = (x as f64 + d[0], y as f64 + d[1]);
                            let new = pre
                                .apply(q.0, q.1)
                                .ok()
                                .and_then(|(ux, uy)| sample_bilinear(j_img, ux, uy))
                                .map(|v| (bi, bin_of(v, bins)));
                            if new != base_pair[k] {
                                list.push(Transition {
                                    x,
                                    y,
                                    old: base_pair[k],
                                    new,
                                });
                            }
                        }
                    }
                }
                if plus.is_empty() && minus.is_empty() {
                    continue;
                }
                let f_plus = value(&plus)?;
                let f_minus = value(&minus)?;
                out[b * nx + a][axis] = (f_plus - f_minus) / (2.0 * FD_STEP);
            }
        }
    }
    Ok(out)
}
