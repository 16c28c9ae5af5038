//! Steepest descent with backtracking line search, plus the coarse-to-fine
//! schedule that drives it across an image pyramid with grid refinement
//! between levels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::img::{build_pyramid, BinaryMask, Image2D};
use crate::similarity::{self, SimilarityConfig};
use crate::transform::{ControlGrid, HomogeneousTransform2D};

const GRAD_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub max_iters: usize,
    pub initial_step: f64,
    pub backtrack_factor: f64,
    pub min_step: f64,
    pub rel_tol: f64,
    pub pyramid_levels: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            max_iters: 200,
            initial_step: 1.0,
            backtrack_factor: 0.5,
            min_step: 1e-6,
            rel_tol: 1e-6,
            pyramid_levels: 4,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pyramid_levels == 0 {
            return Err(Error::InvalidInput("pyramid_levels must be positive".into()));
        }
        if !(self.initial_step > 0.0 && self.min_step > 0.0 && self.rel_tol > 0.0) {
            return Err(Error::InvalidInput(
                "initial_step, min_step and rel_tol must be positive".into(),
            ));
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return Err(Error::InvalidInput(
                "backtrack_factor must lie in (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// One accepted evaluation. `level` is the pyramid level (0 = full
/// resolution); iteration 0 records the starting objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub level: usize,
    pub iteration: usize,
    pub objective: f64,
    pub step: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Default)]
pub struct OptimizerTrace {
    pub rows: Vec<TraceRow>,
    /// Set when a non-finite value interrupted a run; the best-seen iterate
    /// is still returned.
    pub aborted: bool,
}

impl OptimizerTrace {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,level,objective,step,grad_norm\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                r.iteration, r.level, r.objective, r.step, r.grad_norm
            ));
        }
        s
    }
}

impl OptimizerTrace {
    pub fn append(&mut self, other: OptimizerTrace) {
        self.rows.extend(other.rows);
        self.aborted |= other.aborted;
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Steepest descent x_{s+1} = x_s − α_s·∇f with α_s backtracking-halved from
/// `initial_step` until the objective strictly decreases. Returns the
/// best-seen iterate.
pub fn minimize<F, G>(
    objective: F,
    grad: G,
    x0: &[f64],
    cfg: &OptimizerConfig,
) -> Result<(Vec<f64>, OptimizerTrace)>
where
    F: FnMut(&[f64]) -> Result<f64>,
    G: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    minimize_at_level(objective, grad, x0, cfg, 0)
}

fn minimize_at_level<F, G>(
    mut objective: F,
    mut grad: G,
    x0: &[f64],
    cfg: &OptimizerConfig,
    level: usize,
) -> Result<(Vec<f64>, OptimizerTrace)>
where
    F: FnMut(&[f64]) -> Result<f64>,
    G: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    cfg.validate()?;
    let f0 = objective(x0)?;
    if !f0.is_finite() {
        return Err(Error::Numeric(format!(
            "objective not finite at the starting point: {f0}"
        )));
    }
    let mut trace = OptimizerTrace::default();
    let mut x = x0.to_vec();
    let mut fx = f0;
    trace.rows.push(TraceRow {
        level,
        iteration: 0,
        objective: fx,
        step: 0.0,
        grad_norm: f64::NAN,
    });

    for iteration in 1..=cfg.max_iters {
        let g = match grad(&x) {
            Ok(g) if g.iter().all(|v| v.is_finite()) => g,
            _ => {
                trace.aborted = true;
                break;
            }
        };
        let gn = norm(&g);
        if gn < GRAD_TOL {
            break;
        }
        // backtracking line search for a strict decrease
        let mut alpha = cfg.initial_step;
        let mut accepted: Option<(Vec<f64>, f64)> = None;
        while alpha >= cfg.min_step {
            let xt: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - alpha * gi).collect();
            match objective(&xt) {
                Ok(ft) if ft.is_finite() && ft < fx => {
                    accepted = Some((xt, ft));
                    break;
                }
                _ => alpha *= cfg.backtrack_factor,
            }
        }
        let Some((xt, ft)) = accepted else {
            break; // no descent step available
        };
        let rel = (fx - ft) / fx.abs().max(1e-12);
        x = xt;
        fx = ft;
        trace.rows.push(TraceRow {
            level,
            iteration,
            objective: fx,
            step: alpha,
            grad_norm: gn,
        });
        if rel < cfg.rel_tol {
            break;
        }
    }
    Ok((x, trace))
}

fn pack(grid: &ControlGrid) -> Vec<f64> {
    grid.disp().iter().flat_map(|d| [d[0], d[1]]).collect()
}

fn unpack(grid: &mut ControlGrid, x: &[f64]) {
    for (d, c) in grid.disp_mut().iter_mut().zip(x.chunks_exact(2)) {
        *d = [c[0], c[1]];
    }
}

/// Per-level similarity settings: LMI windows shrink with the pyramid so a
/// window always covers the same physical area.
fn level_sim(sim: &SimilarityConfig, lev: usize, w: usize, h: usize) -> SimilarityConfig {
    let mut s = sim.clone();
    s.lmi_window = (sim.lmi_window >> lev).max(8).min(w.min(h));
    s.lmi_stride = (sim.lmi_stride >> lev).max(1).min(s.lmi_window);
    s
}

/// Coarse-to-fine optimization: matched Gaussian pyramids, a control grid
/// whose spacing halves per level, B-spline subdivision between levels.
/// Returns the full-resolution grid and the concatenated trace.
pub fn schedule(
    ref_img: &Image2D,
    mov: &Image2D,
    cfg: &OptimizerConfig,
    sim: &SimilarityConfig,
    coarse_spacing: f64,
) -> Result<(ControlGrid, OptimizerTrace)> {
    cfg.validate()?;
    sim.validate()?;
    if !ref_img.same_size(mov) {
        return Err(Error::InvalidInput(
            "reference and moving image sizes differ".into(),
        ));
    }
    let pyr_ref = build_pyramid(ref_img, cfg.pyramid_levels)?;
    let pyr_mov = build_pyramid(mov, cfg.pyramid_levels)?;
    let levels = pyr_ref.len().min(pyr_mov.len());
    let identity = HomogeneousTransform2D::identity();

    let coarsest = &pyr_ref[levels - 1];
    let spacing = coarse_spacing / (1 << (levels - 1)) as f64;
    let mut grid = ControlGrid::for_domain(coarsest.width(), coarsest.height(), spacing)?;
    let mut trace = OptimizerTrace::default();

    for lev in (0..levels).rev() {
        let i_l = &pyr_ref[lev];
        let j_l = &pyr_mov[lev];
        let region = BinaryMask::filled(i_l.width(), i_l.height(), true);
        let sim_l = level_sim(sim, lev, i_l.width(), i_l.height());
        let x0 = pack(&grid);

        let g0 = similarity::gradient(&sim_l, i_l, j_l, &identity, &grid, &region)?;
        let g0_inf = g0
            .iter()
            .flat_map(|d| [d[0].abs(), d[1].abs()])
            .fold(0.0f64, f64::max);
        if g0_inf >= GRAD_TOL {
            // scale the step so the first trial moves control points by at
            // most initial_step pixels regardless of the measure's magnitude
            let scale = cfg.initial_step / g0_inf;
            let mut level_cfg = cfg.clone();
            level_cfg.initial_step = scale;
            level_cfg.min_step = cfg.min_step * scale / cfg.initial_step;

            let grid_proto = grid.clone();
            let objective = |x: &[f64]| {
                let mut g = grid_proto.clone();
                unpack(&mut g, x);
                let field = g.densify(i_l.width(), i_l.height())?;
                let warp = crate::transform::warp_image(j_l, &identity, Some(&field))?;
                similarity::evaluate(&sim_l, i_l, &warp, &region)
            };
            let gradfn = |x: &[f64]| {
                let mut g = grid_proto.clone();
                unpack(&mut g, x);
                let gv = similarity::gradient(&sim_l, i_l, j_l, &identity, &g, &region)?;
                Ok(gv.iter().flat_map(|d| [d[0], d[1]]).collect())
            };
            let (x_best, level_trace) =
                minimize_at_level(objective, gradfn, &x0, &level_cfg, lev)?;
            unpack(&mut grid, &x_best);
            trace.append(level_trace);
        }

        if lev > 0 {
            grid = grid.rescale(2.0).refine();
        }
    }
    Ok((grid, trace))
}
