//! Homogeneous 2D transforms, cubic B-spline free-form deformation,
//! backward image warping and synthetic deformation generation.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::img::{sample_bilinear, BinaryMask, Image2D};

/// 3x3 homogeneous transform matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomogeneousTransform2D {
    pub m: [[f64; 3]; 3],
}

impl HomogeneousTransform2D {
    pub fn identity() -> Self {
        HomogeneousTransform2D {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    /// Rotation by `angle` about the origin followed by translation.
    pub fn rigid(angle: f64, tx: f64, ty: f64) -> Self {
        let (s, c) = angle.sin_cos();
        HomogeneousTransform2D {
            m: [[c, -s, tx], [s, c, ty], [0.0, 0.0, 1.0]],
        }
    }

    /// Similarity transform: uniform scale and rotation about the origin,
    /// then translation.
    pub fn similarity(angle: f64, scale: f64, tx: f64, ty: f64) -> Self {
        let (s, c) = angle.sin_cos();
        HomogeneousTransform2D {
            m: [
                [scale * c, -scale * s, tx],
                [scale * s, scale * c, ty],
                [0.0, 0.0, 1.0],
            ],
        }
    }

    /// General affine transform from a 2x2 block and translation.
    pub fn affine(a11: f64, a12: f64, a21: f64, a22: f64, tx: f64, ty: f64) -> Result<Self> {
        if (a11 * a22 - a12 * a21).abs() < 1e-12 {
            return Err(Error::InvalidInput("singular affine block".into()));
        }
        Ok(HomogeneousTransform2D {
            m: [[a11, a12, tx], [a21, a22, ty], [0.0, 0.0, 1.0]],
        })
    }

    /// Matrix product `then * first`: applying the result equals applying
    /// `first`, then `then`.
    pub fn compose(first: &Self, then: &Self) -> Self {
        let a = &then.m;
        let b = &first.m;
        let mut m = [[0.0; 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = (0..3).map(|k| a[i][k] * b[k][j]).sum();
            }
        }
        HomogeneousTransform2D { m }
    }

    /// Applies the transform to a point, dividing by the homogeneous
    /// coordinate.
    pub fn apply(&self, x: f64, y: f64) -> Result<(f64, f64)> {
        let m = &self.m;
        let wp = m[2][0] * x + m[2][1] * y + m[2][2];
        if wp.abs() < 1e-12 {
            return Err(Error::Numeric("vanishing homogeneous denominator".into()));
        }
        Ok((
            (m[0][0] * x + m[0][1] * y + m[0][2]) / wp,
            (m[1][0] * x + m[1][1] * y + m[1][2]) / wp,
        ))
    }

    pub fn inverse(&self) -> Result<Self> {
        let m = &self.m;
        let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
        if det.abs() < 1e-12 {
            return Err(Error::Numeric("singular transform".into()));
        }
        let inv = |r1: usize, c1: usize, r2: usize, c2: usize| {
            (m[r1][c1] * m[r2][c2] - m[r1][c2] * m[r2][c1]) / det
        };
        Ok(HomogeneousTransform2D {
            m: [
                [inv(1, 1, 2, 2), inv(0, 2, 2, 1), inv(0, 1, 1, 2)],
                [inv(1, 2, 2, 0), inv(0, 0, 2, 2), inv(0, 2, 1, 0)],
                [inv(1, 0, 2, 1), inv(0, 1, 2, 0), inv(0, 0, 1, 1)],
            ],
        })
    }

    pub fn is_affine(&self) -> bool {
        self.m[2][0] == 0.0 && self.m[2][1] == 0.0 && self.m[2][2] == 1.0
    }

    /// Jacobian of the mapped point with respect to the input point.
    pub fn jacobian(&self, x: f64, y: f64) -> [[f64; 2]; 2] {
        let m = &self.m;
        if self.is_affine() {
            return [[m[0][0], m[0][1]], [m[1][0], m[1][1]]];
        }
        let wp = m[2][0] * x + m[2][1] * y + m[2][2];
        let nx = m[0][0] * x + m[0][1] * y + m[0][2];
        let ny = m[1][0] * x + m[1][1] * y + m[1][2];
        let w2 = wp * wp;
        [
            [
                (m[0][0] * wp - nx * m[2][0]) / w2,
                (m[0][1] * wp - nx * m[2][1]) / w2,
            ],
            [
                (m[1][0] * wp - ny * m[2][0]) / w2,
                (m[1][1] * wp - ny * m[2][1]) / w2,
            ],
        ]
    }
}

/// Builds the transform to a point per Eq. of the homogeneous model; free
/// function form of [`HomogeneousTransform2D::apply`].
pub fn transform_point(t: &HomogeneousTransform2D, p: (f64, f64)) -> Result<(f64, f64)> {
    t.apply(p.0, p.1)
}

// ---------------------------------------------------------------------------
// Cubic B-spline free-form deformation
// ---------------------------------------------------------------------------

/// Cubic B-spline basis values (B0..B3) at fractional coordinate u in [0,1).
#[inline]
pub fn bspline_weights(u: f64) -> Result<[f64; 4]> {
    if !(0.0..1.0).contains(&u) {
        return Err(Error::InvalidInput(format!(
            "B-spline fractional coordinate {u} outside [0,1)"
        )));
    }
    Ok(bspline_weights_unchecked(u))
}

#[inline]
pub(crate) fn bspline_weights_unchecked(u: f64) -> [f64; 4] {
    let u2 = u * u;
    let u3 = u2 * u;
    [
        (1.0 - u).powi(3) / 6.0,
        (3.0 * u3 - 6.0 * u2 + 4.0) / 6.0,
        (-3.0 * u3 + 3.0 * u2 + 3.0 * u + 1.0) / 6.0,
        u3 / 6.0,
    ]
}

/// Uniform mesh of control-point displacements driving the deformation.
///
/// Control point (i, j) sits at `origin + (i * spacing_x, j * spacing_y)`.
/// A query at (x, y) is supported when the 4x4 neighborhood needed by the
/// cubic tensor product lies inside the mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlGrid {
    nx: usize,
    ny: usize,
    spacing: (f64, f64),
    origin: (f64, f64),
    disp: Vec<[f64; 2]>,
}

impl ControlGrid {
    pub fn new(
        nx: usize,
        ny: usize,
        spacing: (f64, f64),
        origin: (f64, f64),
        disp: Vec<[f64; 2]>,
    ) -> Result<Self> {
        if nx < 4 || ny < 4 {
            return Err(Error::InvalidInput(
                "control grid needs at least 4x4 points".into(),
            ));
        }
        if !(spacing.0 > 0.0 && spacing.1 > 0.0) {
            return Err(Error::InvalidInput("control grid spacing must be > 0".into()));
        }
        if disp.len() != nx * ny {
            return Err(Error::InvalidInput("displacement count mismatch".into()));
        }
        if !disp.iter().all(|d| d[0].is_finite() && d[1].is_finite()) {
            return Err(Error::InvalidInput("non-finite control displacement".into()));
        }
        Ok(ControlGrid {
            nx,
            ny,
            spacing,
            origin,
            disp,
        })
    }

    /// Zero grid whose support covers the pixel domain of a width x height
    /// image with margin, so every pixel query has full 4x4 support.
    pub fn for_domain(width: usize, height: usize, spacing: f64) -> Result<Self> {
        if !(spacing > 0.0) {
            return Err(Error::InvalidInput("spacing must be > 0".into()));
        }
        let nx = ((width - 1) as f64 / spacing).floor() as usize + 7;
        let ny = ((height - 1) as f64 / spacing).floor() as usize + 7;
        ControlGrid::new(
            nx,
            ny,
            (spacing, spacing),
            (-2.0 * spacing, -2.0 * spacing),
            vec![[0.0; 2]; nx * ny],
        )
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn spacing(&self) -> (f64, f64) {
        self.spacing
    }

    pub fn origin(&self) -> (f64, f64) {
        self.origin
    }

    pub fn disp(&self) -> &[[f64; 2]] {
        &self.disp
    }

    pub fn disp_mut(&mut self) -> &mut [[f64; 2]] {
        &mut self.disp
    }

    #[inline]
    pub fn point(&self, i: usize, j: usize) -> [f64; 2] {
        self.disp[j * self.nx + i]
    }

    /// Cell index and fractional coordinate of a query along each axis, or
    /// None when unsupported.
    #[inline]
    pub(crate) fn locate(&self, x: f64, y: f64) -> Option<(usize, usize, f64, f64)> {
        let gx = (x - self.origin.0) / self.spacing.0;
        let gy = (y - self.origin.1) / self.spacing.1;
        let cx = gx.floor();
        let cy = gy.floor();
        if cx < 1.0
            || cy < 1.0
            || cx > (self.nx - 3) as f64
            || cy > (self.ny - 3) as f64
        {
            return None;
        }
        // clamp handles queries landing exactly on the last supported knot
        let i = (cx as usize).min(self.nx - 3) - 1;
        let j = (cy as usize).min(self.ny - 3) - 1;
        Some((i, j, gx - cx, gy - cy))
    }

    /// Tensor-product B-spline displacement at a pixel coordinate.
    pub fn displacement(&self, x: f64, y: f64) -> Result<[f64; 2]> {
        let (i, j, u, v) = self.locate(x, y).ok_or_else(|| {
            Error::InvalidInput(format!("query ({x},{y}) outside control grid support"))
        })?;
        let bu = bspline_weights_unchecked(u);
        let bv = bspline_weights_unchecked(v);
        let mut d = [0.0; 2];
        for (m, &wv) in bv.iter().enumerate() {
            for (l, &wu) in bu.iter().enumerate() {
                let p = self.disp[(j + m) * self.nx + i + l];
                let w = wu * wv;
                d[0] += w * p[0];
                d[1] += w * p[1];
            }
        }
        Ok(d)
    }

    /// Tensor weight of one control point at a pixel, zero outside support.
    #[inline]
    pub(crate) fn point_weight(&self, a: usize, b: usize, x: f64, y: f64) -> f64 {
        match self.locate(x, y) {
            Some((i, j, u, v)) => {
                if a < i || a > i + 3 || b < j || b > j + 3 {
                    0.0
                } else {
                    bspline_weights_unchecked(u)[a - i] * bspline_weights_unchecked(v)[b - j]
                }
            }
            None => 0.0,
        }
    }

    /// Materializes the displacement on every pixel center.
    pub fn densify(&self, width: usize, height: usize) -> Result<DeformationField> {
        let mut disp = vec![[0.0f64; 2]; width * height];
        disp.par_chunks_mut(width)
            .enumerate()
            .try_for_each(|(y, row)| -> Result<()> {
                for (x, d) in row.iter_mut().enumerate() {
                    *d = self.displacement(x as f64, y as f64)?;
                }
                Ok(())
            })?;
        Ok(DeformationField {
            width,
            height,
            disp,
        })
    }

    /// Halves the spacing via cubic B-spline subdivision; the represented
    /// field is reproduced on the original support.
    pub fn refine(&self) -> ControlGrid {
        // along x: even points (P[i-1] + 6 P[i] + P[i+1]) / 8 at old knots,
        // odd points (P[i] + P[i+1]) / 2 at midpoints; kept fine indices run
        // from 1 to 2*n-3, which shifts the origin by half the old spacing.
        let nxf = 2 * self.nx - 3;
        let mut mid = vec![[0.0f64; 2]; nxf * self.ny];
        for j in 0..self.ny {
            for jn in 1..=2 * self.nx - 3 {
                let q = if jn % 2 == 0 {
                    let i = jn / 2;
                    comb3(
                        self.point(i - 1, j),
                        self.point(i, j),
                        self.point(i + 1, j),
                    )
                } else {
                    let i = (jn - 1) / 2;
                    comb2(self.point(i, j), self.point(i + 1, j))
                };
                mid[j * nxf + jn - 1] = q;
            }
        }
        let nyf = 2 * self.ny - 3;
        let mut fine = vec![[0.0f64; 2]; nxf * nyf];
        for i in 0..nxf {
            for jn in 1..=2 * self.ny - 3 {
                let q = if jn % 2 == 0 {
                    let j = jn / 2;
                    comb3(
                        mid[(j - 1) * nxf + i],
                        mid[j * nxf + i],
                        mid[(j + 1) * nxf + i],
                    )
                } else {
                    let j = (jn - 1) / 2;
                    comb2(mid[j * nxf + i], mid[(j + 1) * nxf + i])
                };
                fine[(jn - 1) * nxf + i] = q;
            }
        }
        ControlGrid {
            nx: nxf,
            ny: nyf,
            spacing: (self.spacing.0 / 2.0, self.spacing.1 / 2.0),
            origin: (
                self.origin.0 + self.spacing.0 / 2.0,
                self.origin.1 + self.spacing.1 / 2.0,
            ),
            disp: fine,
        }
    }

    /// Rescales the grid geometry and displacements by a uniform factor,
    /// mapping it to a resampled pixel lattice.
    pub fn rescale(&self, factor: f64) -> ControlGrid {
        ControlGrid {
            nx: self.nx,
            ny: self.ny,
            spacing: (self.spacing.0 * factor, self.spacing.1 * factor),
            origin: (self.origin.0 * factor, self.origin.1 * factor),
            disp: self
                .disp
                .iter()
                .map(|d| [d[0] * factor, d[1] * factor])
                .collect(),
        }
    }
}

#[inline]
fn comb3(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> [f64; 2] {
    [
        (a[0] + 6.0 * b[0] + c[0]) / 8.0,
        (a[1] + 6.0 * b[1] + c[1]) / 8.0,
    ]
}

#[inline]
fn comb2(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0]
}

/// Dense per-pixel displacement field, in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformationField {
    width: usize,
    height: usize,
    disp: Vec<[f64; 2]>,
}

impl DeformationField {
    pub fn new(width: usize, height: usize, disp: Vec<[f64; 2]>) -> Result<Self> {
        if disp.len() != width * height {
            return Err(Error::InvalidInput("field length mismatch".into()));
        }
        if !disp.iter().all(|d| d[0].is_finite() && d[1].is_finite()) {
            return Err(Error::InvalidInput("non-finite field value".into()));
        }
        Ok(DeformationField {
            width,
            height,
            disp,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        DeformationField {
            width,
            height,
            disp: vec![[0.0; 2]; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f64; 2] {
        self.disp[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, d: [f64; 2]) {
        self.disp[y * self.width + x] = d;
    }

    pub fn disp(&self) -> &[[f64; 2]] {
        &self.disp
    }

    /// Bilinear interpolation of the field at a real coordinate, clamped to
    /// the field domain.
    pub fn sample_clamped(&self, x: f64, y: f64) -> [f64; 2] {
        let xc = x.clamp(0.0, (self.width - 1) as f64);
        let yc = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = (xc.floor() as usize).min(self.width.saturating_sub(2));
        let y0 = (yc.floor() as usize).min(self.height.saturating_sub(2));
        let fx = xc - x0 as f64;
        let fy = yc - y0 as f64;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let mut out = [0.0; 2];
        for k in 0..2 {
            out[k] = self.get(x0, y0)[k] * (1.0 - fx) * (1.0 - fy)
                + self.get(x1, y0)[k] * fx * (1.0 - fy)
                + self.get(x0, y1)[k] * (1.0 - fx) * fy
                + self.get(x1, y1)[k] * fx * fy;
        }
        out
    }

    /// Binary field file: magic "DFLD", u32 LE width/height/reserved, then
    /// f32 LE (dx, dy) pairs in row-major order.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = Vec::with_capacity(16 + 8 * self.disp.len());
        out.extend_from_slice(b"DFLD");
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        out.extend_from_slice(&0u32.to_le_bytes());
        for d in &self.disp {
            out.extend_from_slice(&(d[0] as f32).to_le_bytes());
            out.extend_from_slice(&(d[1] as f32).to_le_bytes());
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() < 16 || &bytes[0..4] != b"DFLD" {
            return Err(Error::Format("not a DFLD file".into()));
        }
        let rd = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let (width, height) = (rd(4), rd(8));
        let n = width * height;
        if bytes.len() != 16 + 8 * n {
            return Err(Error::Format("DFLD payload size mismatch".into()));
        }
        let mut disp = Vec::with_capacity(n);
        for c in bytes[16..].chunks_exact(8) {
            disp.push([
                f32::from_le_bytes(c[0..4].try_into().unwrap()) as f64,
                f32::from_le_bytes(c[4..8].try_into().unwrap()) as f64,
            ]);
        }
        DeformationField::new(width, height, disp)
    }
}

/// Warped image plus per-pixel validity of the source sample.
#[derive(Debug, Clone)]
pub struct WarpResult {
    pub image: Image2D,
    pub valid: BinaryMask,
}

/// Backward warping: each output pixel p samples the input at
/// `pre(p + field[p])`. Out-of-domain samples get intensity 0 and
/// valid = false.
pub fn warp_image(
    img: &Image2D,
    pre: &HomogeneousTransform2D,
    field: Option<&DeformationField>,
) -> Result<WarpResult> {
    let (w, h) = match field {
        Some(f) => (f.width(), f.height()),
        None => (img.width(), img.height()),
    };
    let mut out = Image2D::zeros(w, h);
    let mut valid = BinaryMask::filled(w, h, false);
    out.data_mut()
        .par_chunks_mut(w)
        .zip(valid.bits_mut().par_chunks_mut(w))
        .enumerate()
        .for_each(|(y, (row, vrow))| {
            for x in 0..w {
                let d = field.map(|f| f.get(x, y)).unwrap_or([0.0, 0.0]);
                let q = (x as f64 + d[0], y as f64 + d[1]);
                if let Ok((sx, sy)) = pre.apply(q.0, q.1) {
                    if let Some(v) = sample_bilinear(img, sx, sy) {
                        row[x] = v;
                        vrow[x] = true;
                    }
                }
            }
        });
    Ok(WarpResult { image: out, valid })
}

/// Seeded random control grid covering `shape`, each displacement component
/// uniform in [-max_disp, max_disp]. Guards against folding.
pub fn random_deformation(
    seed: u64,
    shape: (usize, usize),
    spacing: f64,
    max_disp: f64,
) -> Result<ControlGrid> {
    if max_disp < 0.0 {
        return Err(Error::InvalidInput("max_disp must be >= 0".into()));
    }
    if max_disp > 0.0 && max_disp >= 0.4 * spacing {
        return Err(Error::InvalidInput(format!(
            "max_disp {max_disp} violates the folding guard (< 0.4 * spacing = {})",
            0.4 * spacing
        )));
    }
    let mut grid = ControlGrid::for_domain(shape.0, shape.1, spacing)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for d in grid.disp_mut() {
        if max_disp > 0.0 {
            d[0] = rng.gen_range(-max_disp..=max_disp);
            d[1] = rng.gen_range(-max_disp..=max_disp);
        }
    }
    Ok(grid)
}
