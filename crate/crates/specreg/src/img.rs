//! Grayscale image representation, file i/o, interpolation, pyramids,
//! Sobel edges and Otsu segmentation.

use std::fs;
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};

/// Single-channel raster of real-valued intensities, row-major.
///
/// Intensities are dimensionless with a working range of [0,1] after
/// normalization; nothing enforces the range except the loaders.
#[derive(Debug, Clone, PartialEq)]
pub struct Image2D {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image2D {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput(
                "image dimensions must be at least 1x1".into(),
            ));
        }
        if data.len() != width * height {
            return Err(Error::InvalidInput(format!(
                "data length {} does not match {}x{}",
                data.len(),
                width,
                height
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("non-finite intensity".into()));
        }
        Ok(Image2D {
            width,
            height,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Image2D {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Image2D {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn same_size(&self, other: &Image2D) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn is_constant(&self) -> bool {
        self.data.iter().all(|&v| v == self.data[0])
    }

    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Result<Image2D> {
        if x + w > self.width || y + h > self.height || w == 0 || h == 0 {
            return Err(Error::InvalidInput("crop window outside image".into()));
        }
        Ok(Image2D::from_fn(w, h, |cx, cy| self.get(x + cx, y + cy)))
    }
}

/// Ordered stack of same-sized channels, e.g. one image per wavelength.
#[derive(Debug, Clone)]
pub struct SpectralStack {
    channels: Vec<Image2D>,
    labels: Option<Vec<String>>,
}

impl SpectralStack {
    pub fn new(channels: Vec<Image2D>, labels: Option<Vec<String>>) -> Result<Self> {
        let first = channels
            .first()
            .ok_or_else(|| Error::InvalidInput("stack needs at least one channel".into()))?;
        if !channels.iter().all(|c| c.same_size(first)) {
            return Err(Error::InvalidInput(
                "stack channels must share dimensions".into(),
            ));
        }
        if let Some(l) = &labels {
            if l.len() != channels.len() {
                return Err(Error::InvalidInput(
                    "label count must match channel count".into(),
                ));
            }
        }
        Ok(SpectralStack { channels, labels })
    }

    pub fn channels(&self) -> &[Image2D] {
        &self.channels
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn width(&self) -> usize {
        self.channels[0].width()
    }

    pub fn height(&self) -> usize {
        self.channels[0].height()
    }

    /// Pixel-wise mean over all channels.
    pub fn mean_channel(&self) -> Image2D {
        let n = self.channels.len() as f64;
        Image2D::from_fn(self.width(), self.height(), |x, y| {
            self.channels.iter().map(|c| c.get(x, y)).sum::<f64>() / n
        })
    }
}

/// One boolean per pixel, same layout rules as `Image2D`.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::InvalidInput("mask length mismatch".into()));
        }
        Ok(BinaryMask {
            width,
            height,
            bits,
        })
    }

    pub fn filled(width: usize, height: usize, v: bool) -> Self {
        BinaryMask {
            width,
            height,
            bits: vec![v; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn bits_mut(&mut self) -> &mut [bool] {
        &mut self.bits
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn same_size(&self, other: &BinaryMask) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Result<BinaryMask> {
        if x + w > self.width || y + h > self.height || w == 0 || h == 0 {
            return Err(Error::InvalidInput("crop window outside mask".into()));
        }
        let mut bits = Vec::with_capacity(w * h);
        for cy in 0..h {
            for cx in 0..w {
                bits.push(self.get(x + cx, y + cy));
            }
        }
        BinaryMask::new(w, h, bits)
    }
}

/// 8-bit RGB raster used for edge overlays.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<[u8; 3]>,
}

impl RgbImage {
    pub fn filled(width: usize, height: usize, color: [u8; 3]) -> Self {
        RgbImage {
            width,
            height,
            data: vec![color; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: [u8; 3]) {
        self.data[y * self.width + x] = c;
    }

    pub fn data(&self) -> &[[u8; 3]] {
        &self.data
    }
}

/// Output bit depth for the image writers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

// ---------------------------------------------------------------------------
// Loading and saving
// ---------------------------------------------------------------------------

/// Loads an 8/16-bit grayscale PGM (P5) or grayscale PNG, scaled to [0,1].
pub fn load_image(path: impl AsRef<Path>) -> Result<Image2D> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(b"P5") {
        decode_pgm(&bytes)
    } else if bytes.starts_with(b"P6") || bytes.starts_with(b"P2") || bytes.starts_with(b"P3") {
        Err(Error::Format(format!(
            "unsupported PNM variant {}{} (only binary grayscale P5 is supported)",
            bytes[0] as char, bytes[1] as char
        )))
    } else {
        decode_png(&bytes)
    }
}

fn decode_pgm(bytes: &[u8]) -> Result<Image2D> {
    let mut pos = 2usize; // after "P5"
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        *field = read_pnm_int(bytes, &mut pos)?;
    }
    let (width, height, maxval) = (fields[0], fields[1], fields[2]);
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Format(format!("invalid PGM maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the samples
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::Format("missing separator after PGM header".into()));
    }
    pos += 1;
    let data = &bytes[pos..];
    let n = width
        .checked_mul(height)
        .ok_or_else(|| Error::Format("PGM dimensions overflow".into()))?;
    let scale = maxval as f64;
    let values = if maxval < 256 {
        if data.len() < n {
            return Err(Error::Format("PGM sample data truncated".into()));
        }
        data[..n].iter().map(|&b| b as f64 / scale).collect()
    } else {
        // 16-bit samples are big-endian per the PGM spec
        if data.len() < 2 * n {
            return Err(Error::Format("PGM sample data truncated".into()));
        }
        data[..2 * n]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / scale)
            .collect()
    };
    Image2D::new(width, height, values)
}

fn read_pnm_int(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    // skip whitespace and '#' comments
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Format("malformed PGM header".into()));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format("malformed PGM header".into()))
}

fn decode_png(bytes: &[u8]) -> Result<Image2D> {
    let dyn_img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| Error::Format(format!("PNG decode failed: {e}")))?;
    match dyn_img {
        image::DynamicImage::ImageLuma8(buf) => {
            let (w, h) = (buf.width() as usize, buf.height() as usize);
            let data = buf.into_raw().iter().map(|&v| v as f64 / 255.0).collect();
            Image2D::new(w, h, data)
        }
        image::DynamicImage::ImageLuma16(buf) => {
            let (w, h) = (buf.width() as usize, buf.height() as usize);
            let data = buf.into_raw().iter().map(|&v| v as f64 / 65535.0).collect();
            Image2D::new(w, h, data)
        }
        _ => Err(Error::Format(
            "unsupported PNG color type (grayscale 8/16-bit only)".into(),
        )),
    }
}

/// Writes a binary PGM (P5) at the requested bit depth.
pub fn save_pgm(img: &Image2D, path: impl AsRef<Path>, depth: BitDepth) -> Result<()> {
    let path = path.as_ref();
    let maxval: u32 = match depth {
        BitDepth::Eight => 255,
        BitDepth::Sixteen => 65535,
    };
    let mut out = format!("P5\n{} {}\n{}\n", img.width(), img.height(), maxval).into_bytes();
    for &v in img.data() {
        let q = (v * maxval as f64).round().clamp(0.0, maxval as f64) as u32;
        match depth {
            BitDepth::Eight => out.push(q as u8),
            BitDepth::Sixteen => out.extend_from_slice(&(q as u16).to_be_bytes()),
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Writes a grayscale PNG at the requested bit depth.
pub fn save_png_gray(img: &Image2D, path: impl AsRef<Path>, depth: BitDepth) -> Result<()> {
    let path = path.as_ref();
    let (w, h) = (img.width() as u32, img.height() as u32);
    let res = match depth {
        BitDepth::Eight => {
            let raw: Vec<u8> = img
                .data()
                .iter()
                .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
                .collect();
            image::GrayImage::from_raw(w, h, raw).unwrap().save(path)
        }
        BitDepth::Sixteen => {
            let raw: Vec<u16> = img
                .data()
                .iter()
                .map(|&v| (v * 65535.0).round().clamp(0.0, 65535.0) as u16)
                .collect();
            image::ImageBuffer::<image::Luma<u16>, _>::from_raw(w, h, raw)
                .unwrap()
                .save(path)
        }
    };
    res.map_err(|e| Error::Format(format!("PNG encode failed: {e}")))
}

/// Writes an 8-bit RGB PNG.
pub fn save_png_rgb(img: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let raw: Vec<u8> = img.data().iter().flatten().copied().collect();
    image::RgbImage::from_raw(img.width() as u32, img.height() as u32, raw)
        .unwrap()
        .save(path)
        .map_err(|e| Error::Format(format!("PNG encode failed: {e}")))
}

/// Loads a channel stack from a manifest: one path per line, '#' comments.
/// Relative paths are resolved against the manifest's directory.
pub fn load_stack(manifest: impl AsRef<Path>) -> Result<SpectralStack> {
    let manifest = manifest.as_ref();
    let text = fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    let base = manifest.parent().unwrap_or_else(|| Path::new("."));
    let mut channels = Vec::new();
    let mut labels = Vec::new();
    for line in text.lines() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let p = base.join(line);
        channels.push(load_image(&p)?);
        labels.push(line.to_string());
    }
    if channels.is_empty() {
        return Err(Error::Format("empty stack manifest".into()));
    }
    SpectralStack::new(channels, Some(labels))
}

// ---------------------------------------------------------------------------
// Intensity operations
// ---------------------------------------------------------------------------

/// Rescales intensities to span [0,1]; a constant image maps to all zeros.
pub fn normalize_minmax(img: &Image2D) -> Image2D {
    let min = img.data().iter().cloned().fold(f64::INFINITY, f64::min);
    let max = img.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == min {
        return Image2D::zeros(img.width(), img.height());
    }
    let scale = 1.0 / (max - min);
    Image2D::from_fn(img.width(), img.height(), |x, y| {
        (img.get(x, y) - min) * scale
    })
}

/// Bilinear interpolation at a real pixel coordinate.
///
/// Returns `None` outside [0,width-1] x [0,height-1].
#[inline]
pub fn sample_bilinear(img: &Image2D, x: f64, y: f64) -> Option<f64> {
    let (w, h) = (img.width(), img.height());
    if !(x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64) {
        return None;
    }
    let x0 = (x.floor() as usize).min(w.saturating_sub(2));
    let y0 = (y.floor() as usize).min(h.saturating_sub(2));
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let v00 = img.get(x0, y0);
    let v10 = img.get(x1, y0);
    let v01 = img.get(x0, y1);
    let v11 = img.get(x1, y1);
    Some(v00 * (1.0 - fx) * (1.0 - fy) + v10 * fx * (1.0 - fy) + v01 * (1.0 - fx) * fy
        + v11 * fx * fy)
}

/// Bilinear sample plus the spatial derivative of the interpolant.
#[inline]
pub fn sample_bilinear_grad(img: &Image2D, x: f64, y: f64) -> Option<(f64, f64, f64)> {
    let (w, h) = (img.width(), img.height());
    if !(x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64) {
        return None;
    }
    let x0 = (x.floor() as usize).min(w.saturating_sub(2));
    let y0 = (y.floor() as usize).min(h.saturating_sub(2));
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let v00 = img.get(x0, y0);
    let v10 = img.get(x1, y0);
    let v01 = img.get(x0, y1);
    let v11 = img.get(x1, y1);
    let v = v00 * (1.0 - fx) * (1.0 - fy) + v10 * fx * (1.0 - fy) + v01 * (1.0 - fx) * fy
        + v11 * fx * fy;
    let dx = (v10 - v00) * (1.0 - fy) + (v11 - v01) * fy;
    let dy = (v01 - v00) * (1.0 - fx) + (v11 - v10) * fx;
    Some((v, dx, dy))
}

// ---------------------------------------------------------------------------
// Pyramid
// ---------------------------------------------------------------------------

const MIN_PYRAMID_SIDE: usize = 16;

/// Number of pyramid levels actually usable for an image of the given size.
pub fn clamp_levels(width: usize, height: usize, levels: usize) -> usize {
    let mut allowed = 1;
    let (mut w, mut h) = (width, height);
    while allowed < levels {
        w = w.div_ceil(2);
        h = h.div_ceil(2);
        if w < MIN_PYRAMID_SIDE || h < MIN_PYRAMID_SIDE {
            break;
        }
        allowed += 1;
    }
    allowed
}

/// Gaussian pyramid, level 0 = input, coarse last. Each level is smoothed
/// with sigma = 1.0 px and decimated by 2 with ceiling dimensions. Levels
/// that would drop below 16 px per side are silently dropped.
pub fn build_pyramid(img: &Image2D, levels: usize) -> Result<Vec<Image2D>> {
    if levels == 0 {
        return Err(Error::InvalidInput("pyramid needs at least one level".into()));
    }
    let levels = clamp_levels(img.width(), img.height(), levels);
    let mut out = vec![img.clone()];
    for _ in 1..levels {
        let prev = out.last().unwrap();
        let smooth = gaussian_blur(prev, 1.0);
        let (w, h) = (prev.width().div_ceil(2), prev.height().div_ceil(2));
        out.push(Image2D::from_fn(w, h, |x, y| smooth.get(2 * x, 2 * y)));
    }
    Ok(out)
}

/// Separable Gaussian blur with replicated borders.
pub fn gaussian_blur(img: &Image2D, sigma: f64) -> Image2D {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    for i in -radius..=radius {
        kernel.push((-0.5 * (i as f64 / sigma).powi(2)).exp());
    }
    let sum: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= sum;
    }
    let (w, h) = (img.width(), img.height());
    let horiz = Image2D::from_fn(w, h, |x, y| {
        kernel
            .iter()
            .enumerate()
            .map(|(i, &k)| {
                let sx = (x as isize + i as isize - radius).clamp(0, w as isize - 1) as usize;
                k * img.get(sx, y)
            })
            .sum()
    });
    Image2D::from_fn(w, h, |x, y| {
        kernel
            .iter()
            .enumerate()
            .map(|(i, &k)| {
                let sy = (y as isize + i as isize - radius).clamp(0, h as isize - 1) as usize;
                k * horiz.get(x, sy)
            })
            .sum()
    })
}

// ---------------------------------------------------------------------------
// Edges and segmentation
// ---------------------------------------------------------------------------

/// Sobel gradient magnitude for interior pixels; border pixels are zero.
pub fn sobel_magnitude(img: &Image2D) -> Result<Image2D> {
    let (w, h) = (img.width(), img.height());
    if w < 3 || h < 3 {
        return Err(Error::InvalidInput("Sobel needs at least a 3x3 image".into()));
    }
    let mut mag = Image2D::zeros(w, h);
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let p = |dx: isize, dy: isize| {
                img.get((x as isize + dx) as usize, (y as isize + dy) as usize)
            };
            let gx = -p(-1, -1) + p(1, -1) - 2.0 * p(-1, 0) + 2.0 * p(1, 0) - p(-1, 1) + p(1, 1);
            let gy = -p(-1, -1) - 2.0 * p(0, -1) - p(1, -1) + p(-1, 1) + 2.0 * p(0, 1) + p(1, 1);
            mag.set(x, y, (gx * gx + gy * gy).sqrt());
        }
    }
    Ok(mag)
}

/// Edge mask: Sobel magnitude strictly above the given percentile of all
/// interior magnitudes. Border pixels are always false.
pub fn sobel_edge_map(img: &Image2D, percentile: f64) -> Result<BinaryMask> {
    if !(percentile > 0.0 && percentile < 100.0 || percentile == 100.0) {
        // (0,100] accepted; 100 yields the strict-above-maximum (empty) mask
        if !(percentile > 0.0 && percentile <= 100.0) {
            return Err(Error::InvalidInput("percentile must be in (0,100]".into()));
        }
    }
    let mag = sobel_magnitude(img)?;
    let (w, h) = (img.width(), img.height());
    let mut interior: Vec<f64> = Vec::with_capacity((w - 2) * (h - 2));
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            interior.push(mag.get(x, y));
        }
    }
    interior.sort_by(|a, b| a.partial_cmp(b).unwrap());
    // nearest-rank percentile
    let rank = ((percentile / 100.0 * interior.len() as f64).ceil() as usize)
        .clamp(1, interior.len());
    let threshold = interior[rank - 1];
    let mut mask = BinaryMask::filled(w, h, false);
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            mask.set(x, y, mag.get(x, y) > threshold);
        }
    }
    Ok(mask)
}

/// Polarity of the foreground for Otsu segmentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Foreground {
    /// Pixels below the threshold (ink on paper).
    Dark,
    /// Pixels at or above the threshold.
    Light,
}

/// Otsu's threshold over 256 candidate splits, as a bin index k: class 0 is
/// bins 0..=k. Ties broken by the lowest threshold.
pub fn otsu_threshold_bin(img: &Image2D) -> Result<usize> {
    if img.is_constant() {
        return Err(Error::Numeric("Otsu needs a non-constant image".into()));
    }
    let mut hist = [0u64; 256];
    for &v in img.data() {
        hist[intensity_bin_256(v)] += 1;
    }
    let total: u64 = hist.iter().sum();
    let total_sum: f64 = hist
        .iter()
        .enumerate()
        .map(|(i, &c)| i as f64 * c as f64)
        .sum();
    let mut best_k = None;
    let mut best_var = f64::NEG_INFINITY;
    let mut w0 = 0.0f64;
    let mut sum0 = 0.0f64;
    for k in 0..255 {
        w0 += hist[k] as f64;
        sum0 += k as f64 * hist[k] as f64;
        let w1 = total as f64 - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let mu0 = sum0 / w0;
        let mu1 = (total_sum - sum0) / w1;
        let var = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        if var > best_var {
            best_var = var;
            best_k = Some(k);
        }
    }
    best_k.ok_or_else(|| Error::Numeric("Otsu found no valid split".into()))
}

#[inline]
pub(crate) fn intensity_bin_256(v: f64) -> usize {
    ((v * 256.0).floor() as isize).clamp(0, 255) as usize
}

/// Otsu segmentation with the requested foreground polarity.
pub fn otsu_mask(img: &Image2D, foreground: Foreground) -> Result<BinaryMask> {
    let k = otsu_threshold_bin(img)?;
    let mut mask = BinaryMask::filled(img.width(), img.height(), false);
    for y in 0..img.height() {
        for x in 0..img.width() {
            let dark = intensity_bin_256(img.get(x, y)) <= k;
            mask.set(
                x,
                y,
                match foreground {
                    Foreground::Dark => dark,
                    Foreground::Light => !dark,
                },
            );
        }
    }
    Ok(mask)
}
