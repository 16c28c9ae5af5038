//! End-to-end registration: similarity-transform pre-registration followed
//! by coarse-to-fine non-rigid refinement, plus application of the recovered
//! transform to whole spectral stacks.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::img::{
    build_pyramid, otsu_mask, BinaryMask, Foreground, Image2D, SpectralStack,
};
use crate::optimize::{minimize, OptimizerConfig, OptimizerTrace};
use crate::similarity::{self, SimilarityConfig};
use crate::transform::{
    warp_image, ControlGrid, DeformationField, HomogeneousTransform2D, WarpResult,
};

/// Which channel of the moving stack drives registration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChannelSelect {
    Mean,
    Index(usize),
}

impl std::str::FromStr for ChannelSelect {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("mean") {
            return Ok(ChannelSelect::Mean);
        }
        s.parse::<usize>()
            .map(ChannelSelect::Index)
            .map_err(|_| Error::InvalidInput(format!("channel must be an index or 'mean': {s}")))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegistrationConfig {
    pub similarity: SimilarityConfig,
    pub optimizer: OptimizerConfig,
    pub prereg_enabled: bool,
    pub moving_channel: ChannelSelect,
    pub coarse_spacing: f64,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        RegistrationConfig {
            similarity: SimilarityConfig::default(),
            optimizer: OptimizerConfig::default(),
            prereg_enabled: true,
            moving_channel: ChannelSelect::Mean,
            coarse_spacing: 64.0,
        }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<()> {
        self.similarity.validate()?;
        self.optimizer.validate()?;
        if !(self.coarse_spacing > 0.0) {
            return Err(Error::InvalidInput("coarse_spacing must be positive".into()));
        }
        Ok(())
    }

    /// Parses a flat `key = value` configuration file; `#` starts a comment.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_str_flat(&text)
    }

    pub fn from_str_flat(text: &str) -> Result<Self> {
        let mut cfg = RegistrationConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Format(format!("line {}: expected 'key = value'", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |what: &str| {
                Error::Format(format!("line {}: invalid {what}: '{value}'", lineno + 1))
            };
            match key {
                "measure" => cfg.similarity.measure = value.parse()?,
                "bins" => cfg.similarity.bins = value.parse().map_err(|_| bad("bins"))?,
                "rc_alpha" => {
                    cfg.similarity.rc_alpha = value.parse().map_err(|_| bad("rc_alpha"))?
                }
                "lmi_window" => {
                    cfg.similarity.lmi_window = value.parse().map_err(|_| bad("lmi_window"))?
                }
                "lmi_stride" => {
                    cfg.similarity.lmi_stride = value.parse().map_err(|_| bad("lmi_stride"))?
                }
                "max_iters" => {
                    cfg.optimizer.max_iters = value.parse().map_err(|_| bad("max_iters"))?
                }
                "initial_step" => {
                    cfg.optimizer.initial_step = value.parse().map_err(|_| bad("initial_step"))?
                }
                "backtrack_factor" => {
                    cfg.optimizer.backtrack_factor =
                        value.parse().map_err(|_| bad("backtrack_factor"))?
                }
                "min_step" => cfg.optimizer.min_step = value.parse().map_err(|_| bad("min_step"))?,
                "rel_tol" => cfg.optimizer.rel_tol = value.parse().map_err(|_| bad("rel_tol"))?,
                "pyramid_levels" => {
                    cfg.optimizer.pyramid_levels =
                        value.parse().map_err(|_| bad("pyramid_levels"))?
                }
                "prereg" => {
                    cfg.prereg_enabled = match value {
                        "on" | "true" | "1" => true,
                        "off" | "false" | "0" => false,
                        _ => return Err(bad("prereg flag")),
                    }
                }
                "moving_channel" => cfg.moving_channel = value.parse()?,
                "coarse_spacing" => {
                    cfg.coarse_spacing = value.parse().map_err(|_| bad("coarse_spacing"))?
                }
                other => {
                    return Err(Error::Format(format!(
                        "line {}: unknown key '{other}'",
                        lineno + 1
                    )))
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Outcome of `register`. `prereg` maps moving coordinates to reference
/// coordinates; `dense` = densify(grid) on the reference lattice.
#[derive(Debug, Clone)]
pub struct RegistrationResult {
    pub prereg: HomogeneousTransform2D,
    pub grid: ControlGrid,
    pub dense: DeformationField,
    pub trace: OptimizerTrace,
    pub score_before: f64,
    pub score_after: f64,
}

impl RegistrationResult {
    /// Warps an image on the moving lattice onto the reference lattice with
    /// one resampling: sample at prereg⁻¹(p + dense(p)).
    pub fn warp(&self, img: &Image2D) -> Result<WarpResult> {
        let inv = self.prereg.inverse()?;
        warp_image(img, &inv, Some(&self.dense))
    }
}

pub fn select_channel(stack: &SpectralStack, sel: ChannelSelect) -> Result<Image2D> {
    match sel {
        ChannelSelect::Mean => Ok(stack.mean_channel()),
        ChannelSelect::Index(i) => stack
            .channels()
            .get(i)
            .cloned()
            .ok_or_else(|| {
                Error::InvalidInput(format!(
                    "channel {i} out of range (stack has {})",
                    stack.channels().len()
                ))
            }),
    }
}

fn centroid_and_diag(mask: &BinaryMask) -> Result<((f64, f64), f64)> {
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut n = 0.0;
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0usize, 0usize);
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.get(x, y) {
                sx += x as f64;
                sy += y as f64;
                n += 1.0;
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
        }
    }
    if n == 0.0 {
        return Err(Error::Numeric("empty Otsu foreground".into()));
    }
    let dx = (x1 - x0) as f64;
    let dy = (y1 - y0) as f64;
    Ok(((sx / n, sy / n), (dx * dx + dy * dy).sqrt().max(1.0)))
}

/// 4-parameter similarity pre-registration: Otsu-foreground centroid and
/// bounding-box-diagonal initialization, then negated cross-correlation
/// refinement at the coarsest pyramid level. The returned transform maps
/// moving coordinates to reference coordinates.
pub fn pre_register(ref_img: &Image2D, mov: &Image2D) -> Result<HomogeneousTransform2D> {
    if ref_img.is_constant() || mov.is_constant() {
        return Err(Error::InvalidInput(
            "constant image: pre-registration undefined".into(),
        ));
    }
    let (c_ref, d_ref) = centroid_and_diag(&otsu_mask(ref_img, Foreground::Dark)?)?;
    let (c_mov, d_mov) = centroid_and_diag(&otsu_mask(mov, Foreground::Dark)?)?;
    let s0 = d_ref / d_mov;

    let levels = 4;
    let pyr_ref = build_pyramid(ref_img, levels)?;
    let pyr_mov = build_pyramid(mov, levels)?;
    let lev = pyr_ref.len().min(pyr_mov.len()) - 1;
    let f = (1 << lev) as f64;
    let rc = &pyr_ref[lev];
    let mc = &pyr_mov[lev];
    let c_ref_c = (c_ref.0 / f, c_ref.1 / f);
    let c_mov_c = (c_mov.0 / f, c_mov.1 / f);
    // angle/log-scale parameters scaled so a unit change moves the moving
    // image's corner by about one coarse pixel
    let d_scale = (d_mov / f / 2.0).max(1.0);

    let build = |p: &[f64]| -> HomogeneousTransform2D {
        let theta = p[2] / d_scale;
        let s = s0 * (p[3] / d_scale).exp();
        let (cos, sin) = (theta.cos() * s, theta.sin() * s);
        // x -> s R (x - c_mov) + c_ref + (p0, p1)
        let tx = c_ref_c.0 + p[0] - (cos * c_mov_c.0 - sin * c_mov_c.1);
        let ty = c_ref_c.1 + p[1] - (sin * c_mov_c.0 + cos * c_mov_c.1);
        HomogeneousTransform2D::affine(cos, -sin, sin, cos, tx, ty)
            .expect("similarity transform is nonsingular")
    };
    let region = BinaryMask::filled(rc.width(), rc.height(), true);
    let negcc = |p: &[f64]| -> Result<f64> {
        let t = build(p);
        let warp = warp_image(mc, &t.inverse()?, Some(&DeformationField::zeros(
            rc.width(),
            rc.height(),
        )))?;
        similarity::cross_correlation(rc, &warp, &region).map(|v| -v)
    };
    let fd = |p: &[f64]| -> Result<Vec<f64>> {
        let h = 0.05;
        let mut g = vec![0.0; 4];
        for k in 0..4 {
            let mut pp = p.to_vec();
            pp[k] += h;
            let mut pm = p.to_vec();
            pm[k] -= h;
            g[k] = (negcc(&pp)? - negcc(&pm)?) / (2.0 * h);
        }
        Ok(g)
    };

    let x0 = [0.0; 4];
    let g0 = fd(&x0)?;
    let g0_inf = g0.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut cfg = OptimizerConfig {
        max_iters: 100,
        ..OptimizerConfig::default()
    };
    let x_best = if g0_inf > 1e-12 {
        cfg.initial_step /= g0_inf;
        cfg.min_step *= cfg.initial_step;
        let (x, _) = minimize(negcc, fd, &x0, &cfg)?;
        x
    } else {
        x0.to_vec()
    };

    // back to full resolution: conjugate by the pyramid scaling
    let t_coarse = build(&x_best);
    let up = HomogeneousTransform2D::similarity(0.0, f, 0.0, 0.0);
    let down = up.inverse()?;
    Ok(HomogeneousTransform2D::compose(
        &down,
        &HomogeneousTransform2D::compose(&t_coarse, &up),
    ))
}

/// Two-stage registration; the baseline score is measured after the
/// pre-registration stage so the non-rigid refinement is separately
/// attributable, and the refinement never worsens it.
pub fn register(
    ref_img: &Image2D,
    mov: &Image2D,
    cfg: &RegistrationConfig,
) -> Result<RegistrationResult> {
    cfg.validate()?;
    if ref_img.is_constant() || mov.is_constant() {
        return Err(Error::InvalidInput("constant input image".into()));
    }
    let prereg = if cfg.prereg_enabled {
        pre_register(ref_img, mov)?
    } else {
        HomogeneousTransform2D::identity()
    };
    let pre_inv = prereg.inverse()?;
    let zero = DeformationField::zeros(ref_img.width(), ref_img.height());
    let mov_pre = warp_image(mov, &pre_inv, Some(&zero))?;
    let region = BinaryMask::filled(ref_img.width(), ref_img.height(), true);
    let score_before = similarity::evaluate(&cfg.similarity, ref_img, &mov_pre, &region)?;

    let (mut grid, trace) = crate::optimize::schedule(
        ref_img,
        &mov_pre.image,
        &cfg.optimizer,
        &cfg.similarity,
        cfg.coarse_spacing,
    )?;
    let mut dense = grid.densify(ref_img.width(), ref_img.height())?;
    let refined = warp_image(mov, &pre_inv, Some(&dense))?;
    let mut score_after = similarity::evaluate(&cfg.similarity, ref_img, &refined, &region)?;
    if score_after > score_before {
        // refinement did not help under the one-resample final warp: keep
        // the pre-registration result
        for d in grid.disp_mut() {
            *d = [0.0, 0.0];
        }
        dense = DeformationField::zeros(ref_img.width(), ref_img.height());
        score_after = score_before;
    }
    Ok(RegistrationResult {
        prereg,
        grid,
        dense,
        trace,
        score_before,
        score_after,
    })
}

/// Applies one recovered transform to every channel; all channels share the
/// same validity mask.
pub fn warp_stack(
    stack: &SpectralStack,
    result: &RegistrationResult,
) -> Result<(SpectralStack, BinaryMask)> {
    let mut out = Vec::with_capacity(stack.channels().len());
    let mut mask: Option<BinaryMask> = None;
    for ch in stack.channels() {
        let w = result.warp(ch)?;
        if mask.is_none() {
            mask = Some(w.valid.clone());
        }
        out.push(w.image);
    }
    let labels = stack.labels().map(|l| l.to_vec());
    let stack_out = SpectralStack::new(out, labels)?;
    let mask = mask.ok_or_else(|| Error::InvalidInput("empty stack".into()))?;
    Ok((stack_out, mask))
}
