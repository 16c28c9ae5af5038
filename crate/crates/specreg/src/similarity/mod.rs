//! Intensity-based similarity measures and their gradients with respect to
//! control-grid parameters.
//!
//! All measures are evaluated over the intersection of the caller's region
//! mask with the warp validity mask. `evaluate` turns every measure into a
//! cost to minimize (difference measures pass through, similarity measures
//! are negated).

mod gradient;
mod spectrum;

pub use gradient::gradient;
pub use spectrum::{dct2, idct2, ResidualSpectrum};

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::img::{BinaryMask, Image2D};
use crate::transform::WarpResult;

/// The selectable similarity measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Measure {
    Ssd,
    Cc,
    Cr,
    Mi,
    Nmi,
    Lmi,
    Rc,
}

impl Measure {
    pub fn name(&self) -> &'static str {
        match self {
            Measure::Ssd => "ssd",
            Measure::Cc => "cc",
            Measure::Cr => "cr",
            Measure::Mi => "mi",
            Measure::Nmi => "nmi",
            Measure::Lmi => "lmi",
            Measure::Rc => "rc",
        }
    }
}

impl FromStr for Measure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ssd" => Ok(Measure::Ssd),
            "cc" => Ok(Measure::Cc),
            "cr" => Ok(Measure::Cr),
            "mi" => Ok(Measure::Mi),
            "nmi" => Ok(Measure::Nmi),
            "lmi" => Ok(Measure::Lmi),
            "rc" => Ok(Measure::Rc),
            other => Err(Error::InvalidInput(format!("unknown measure '{other}'"))),
        }
    }
}

/// Measure selection plus the knobs shared by the histogram- and
/// residual-based measures.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimilarityConfig {
    pub measure: Measure,
    pub bins: usize,
    pub rc_alpha: f64,
    pub lmi_window: usize,
    pub lmi_stride: usize,
}

impl SimilarityConfig {
    pub fn new(measure: Measure) -> Self {
        SimilarityConfig {
            measure,
            bins: 64,
            rc_alpha: 0.05,
            lmi_window: 64,
            lmi_stride: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bins < 2 {
            return Err(Error::InvalidInput("bins must be >= 2".into()));
        }
        if !(self.rc_alpha > 0.0) {
            return Err(Error::InvalidInput("rc_alpha must be > 0".into()));
        }
        if self.lmi_window < 8 {
            return Err(Error::InvalidInput("lmi_window must be >= 8".into()));
        }
        if self.lmi_stride < 1 {
            return Err(Error::InvalidInput("lmi_stride must be >= 1".into()));
        }
        Ok(())
    }
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        SimilarityConfig::new(Measure::Rc)
    }
}

#[inline]
pub(crate) fn bin_of(v: f64, bins: usize) -> usize {
    ((v * bins as f64).floor() as isize).clamp(0, bins as isize - 1) as usize
}

fn check_shapes(i_img: &Image2D, jw: &WarpResult, region: &BinaryMask) -> Result<()> {
    if !i_img.same_size(&jw.image)
        || region.width() != i_img.width()
        || region.height() != i_img.height()
    {
        return Err(Error::InvalidInput("image/region shape mismatch".into()));
    }
    Ok(())
}

/// Indices of pixels inside region AND valid under the warp.
fn eval_indices(jw: &WarpResult, region: &BinaryMask) -> Vec<usize> {
    region
        .bits()
        .iter()
        .zip(jw.valid.bits())
        .enumerate()
        .filter(|(_, (&r, &v))| r && v)
        .map(|(k, _)| k)
        .collect()
}

fn nonempty(idx: &[usize]) -> Result<()> {
    if idx.is_empty() {
        return Err(Error::InvalidInput("empty evaluation region".into()));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Difference and correlation measures
// ---------------------------------------------------------------------------

/// Mean squared intensity difference over the evaluation region.
pub fn ssd(i_img: &Image2D, jw: &WarpResult, region: &BinaryMask) -> Result<f64> {
    check_shapes(i_img, jw, region)?;
    let idx = eval_indices(jw, region);
    nonempty(&idx)?;
    let sum: f64 = idx
        .iter()
        .map(|&k| {
            let d = i_img.data()[k] - jw.image.data()[k];
            d * d
        })
        .sum();
    Ok(sum / idx.len() as f64)
}

fn mean_std(values: impl Iterator<Item = f64> + Clone, n: f64) -> (f64, f64) {
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Pearson correlation coefficient with population standard deviations.
pub fn cross_correlation(i_img: &Image2D, jw: &WarpResult, region: &BinaryMask) -> Result<f64> {
    check_shapes(i_img, jw, region)?;
    let idx = eval_indices(jw, region);
    nonempty(&idx)?;
    let n = idx.len() as f64;
    let (mu_i, sd_i) = mean_std(idx.iter().map(|&k| i_img.data()[k]), n);
    let (mu_j, sd_j) = mean_std(idx.iter().map(|&k| jw.image.data()[k]), n);
    if sd_i == 0.0 || sd_j == 0.0 {
        return Err(Error::Numeric("zero variance in correlation".into()));
    }
    let cov: f64 = idx
        .iter()
        .map(|&k| (i_img.data()[k] - mu_i) * (jw.image.data()[k] - mu_j))
        .sum();
    Ok(cov / (n * sd_i * sd_j))
}

/// Correlation ratio of the warped image given iso-sets of the reference.
pub fn correlation_ratio(
    i_img: &Image2D,
    jw: &WarpResult,
    region: &BinaryMask,
    bins: usize,
) -> Result<f64> {
    check_shapes(i_img, jw, region)?;
    let idx = eval_indices(jw, region);
    nonempty(&idx)?;
    let n = idx.len() as f64;
    let (_, sd) = mean_std(idx.iter().map(|&k| jw.image.data()[k]), n);
    if sd == 0.0 {
        return Err(Error::Numeric("zero variance of the warped image".into()));
    }
    // per iso-set sums of J and J^2
    let mut cnt = vec![0.0f64; bins];
    let mut sum = vec![0.0f64; bins];
    let mut sum2 = vec![0.0f64; bins];
    for &k in &idx {
        let b = bin_of(i_img.data()[k], bins);
        let v = jw.image.data()[k];
        cnt[b] += 1.0;
        sum[b] += v;
        sum2[b] += v * v;
    }
    let mut within = 0.0;
    for b in 0..bins {
        if cnt[b] > 0.0 {
            // N_k * sigma_k^2 with population variance
            within += sum2[b] - sum[b] * sum[b] / cnt[b];
        }
    }
    Ok(1.0 - within / (n * sd * sd))
}

// ---------------------------------------------------------------------------
// Histogram-based measures
// ---------------------------------------------------------------------------

/// Joint counts of binned intensities over the evaluation region.
#[derive(Debug, Clone)]
pub struct JointHistogram {
    bins: usize,
    counts: Vec<f64>,
}

impl JointHistogram {
    pub fn bins(&self) -> usize {
        self.bins
    }

    /// Count in cell (i, j): reference bin i, warped bin j.
    pub fn count(&self, i: usize, j: usize) -> f64 {
        self.counts[i * self.bins + j]
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    pub fn marginal_i(&self) -> Vec<f64> {
        (0..self.bins)
            .map(|i| self.counts[i * self.bins..(i + 1) * self.bins].iter().sum())
            .collect()
    }

    pub fn marginal_j(&self) -> Vec<f64> {
        (0..self.bins)
            .map(|j| (0..self.bins).map(|i| self.count(i, j)).sum())
            .collect()
    }

    /// Plug-in mutual information in nats.
    pub fn mutual_information(&self) -> f64 {
        let n = self.total();
        let pi = self.marginal_i();
        let pj = self.marginal_j();
        let mut mi = 0.0;
        for i in 0..self.bins {
            for j in 0..self.bins {
                let c = self.count(i, j);
                if c > 0.0 {
                    mi += c / n * (c * n / (pi[i] * pj[j])).ln();
                }
            }
        }
        mi
    }

    /// Plug-in entropies (H(I), H(J), H(I,J)) in nats.
    pub fn entropies(&self) -> (f64, f64, f64) {
        let n = self.total();
        let ent = |counts: &[f64]| {
            counts
                .iter()
                .filter(|&&c| c > 0.0)
                .map(|&c| -c / n * (c / n).ln())
                .sum::<f64>()
        };
        (
            ent(&self.marginal_i()),
            ent(&self.marginal_j()),
            ent(&self.counts),
        )
    }
}

/// Bins the evaluation region into a joint histogram; each pixel contributes
/// weight 1 to (bin(I), bin(J)).
pub fn joint_histogram(
    i_img: &Image2D,
    jw: &WarpResult,
    region: &BinaryMask,
    bins: usize,
) -> Result<JointHistogram> {
    check_shapes(i_img, jw, region)?;
    let idx = eval_indices(jw, region);
    nonempty(&idx)?;
    let mut counts = vec![0.0; bins * bins];
    for &k in &idx {
        let bi = bin_of(i_img.data()[k], bins);
        let bj = bin_of(jw.image.data()[k], bins);
        counts[bi * bins + bj] += 1.0;
    }
    Ok(JointHistogram { bins, counts })
}

/// Mutual information (nats) from the hard-binned joint histogram.
pub fn mutual_information(
    i_img: &Image2D,
    jw: &WarpResult,
    region: &BinaryMask,
    bins: usize,
) -> Result<f64> {
    Ok(joint_histogram(i_img, jw, region, bins)?.mutual_information())
}

/// Overlap-invariant normalization (H(I)+H(J)) / H(I,J).
pub fn normalized_mutual_information(
    i_img: &Image2D,
    jw: &WarpResult,
    region: &BinaryMask,
    bins: usize,
) -> Result<f64> {
    let (hi, hj, hij) = joint_histogram(i_img, jw, region, bins)?.entropies();
    if hij <= 0.0 {
        return Err(Error::Numeric(
            "zero joint entropy (both images constant on region)".into(),
        ));
    }
    Ok((hi + hj) / hij)
}

/// Minimum evaluable pixels for an LMI window to be retained.
pub(crate) const LMI_MIN_WINDOW_PIXELS: usize = 32;

/// Window origins for the LMI tiling of a `width` x `height` domain.
pub(crate) fn lmi_window_origins(width: usize, height: usize, stride: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut y0 = 0;
    while y0 < height {
        let mut x0 = 0;
        while x0 < width {
            out.push((x0, y0));
            x0 += stride;
        }
        y0 += stride;
    }
    out
}

/// Mean mutual information over square windows tiling the domain; windows
/// with fewer than 32 evaluable pixels are skipped.
pub fn localized_mutual_information(
    i_img: &Image2D,
    jw: &WarpResult,
    region: &BinaryMask,
    cfg: &SimilarityConfig,
) -> Result<f64> {
    check_shapes(i_img, jw, region)?;
    let (w, h) = (i_img.width(), i_img.height());
    if cfg.lmi_window > w.min(h) {
        return Err(Error::InvalidInput(
            "lmi_window larger than the image".into(),
        ));
    }
    let mut sum = 0.0;
    let mut retained = 0usize;
    for (x0, y0) in lmi_window_origins(w, h, cfg.lmi_stride) {
        let ww = cfg.lmi_window.min(w - x0);
        let wh = cfg.lmi_window.min(h - y0);
        let mut counts = vec![0.0; cfg.bins * cfg.bins];
        let mut n = 0usize;
        for y in y0..y0 + wh {
            for x in x0..x0 + ww {
                if region.get(x, y) && jw.valid.get(x, y) {
                    let bi = bin_of(i_img.get(x, y), cfg.bins);
                    let bj = bin_of(jw.image.get(x, y), cfg.bins);
                    counts[bi * cfg.bins + bj] += 1.0;
                    n += 1;
                }
            }
        }
        if n < LMI_MIN_WINDOW_PIXELS {
            continue;
        }
        let hist = JointHistogram {
            bins: cfg.bins,
            counts,
        };
        sum += hist.mutual_information();
        retained += 1;
    }
    if retained == 0 {
        return Err(Error::InvalidInput("no retained LMI windows".into()));
    }
    Ok(sum / retained as f64)
}

// ---------------------------------------------------------------------------
// Residual complexity
// ---------------------------------------------------------------------------

/// Residual complexity: DCT-domain coding cost of the intensity residual.
pub fn residual_complexity(
    i_img: &Image2D,
    jw: &WarpResult,
    region: &BinaryMask,
    rc_alpha: f64,
) -> Result<f64> {
    check_shapes(i_img, jw, region)?;
    let idx = eval_indices(jw, region);
    nonempty(&idx)?;
    let mut residual = Image2D::zeros(i_img.width(), i_img.height());
    for &k in &idx {
        residual.data_mut()[k] = i_img.data()[k] - jw.image.data()[k];
    }
    let spec = dct2(&residual);
    Ok(spec
        .coefficients()
        .iter()
        .map(|&c| (c * c / rc_alpha + 1.0).ln())
        .sum())
}

// ---------------------------------------------------------------------------
// Unified cost
// ---------------------------------------------------------------------------

/// Evaluates the configured measure as an objective to MINIMIZE: SSD and RC
/// pass through, the similarity-type measures are negated.
pub fn evaluate(
    cfg: &SimilarityConfig,
    i_img: &Image2D,
    jw: &WarpResult,
    region: &BinaryMask,
) -> Result<f64> {
    cfg.validate()?;
    match cfg.measure {
        Measure::Ssd => ssd(i_img, jw, region),
        Measure::Cc => cross_correlation(i_img, jw, region).map(|v| -v),
        Measure::Cr => correlation_ratio(i_img, jw, region, cfg.bins).map(|v| -v),
        Measure::Mi => mutual_information(i_img, jw, region, cfg.bins).map(|v| -v),
        Measure::Nmi => normalized_mutual_information(i_img, jw, region, cfg.bins).map(|v| -v),
        Measure::Lmi => localized_mutual_information(i_img, jw, region, cfg).map(|v| -v),
        Measure::Rc => residual_complexity(i_img, jw, region, cfg.rc_alpha),
    }
}
