//! Image container, luma conversion and the 3×3 Sobel gradient field.

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::scalar::Scalar;

/// Rec. 709 luma weights.
pub const LUMA_WEIGHTS: [f64; 3] = [0.2126, 0.7152, 0.0722];

/// Tolerance for sample positions that fall just outside the raster.
pub const SAMPLE_TOLERANCE: f64 = 1e-9;

/// Row-major raster with interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<T> {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Scalar> Image<T> {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::BadChannels(channels));
        }
        if data.len() != width * height * channels {
            return Err(Error::invalid(
                "image",
                format!(
                    "data length {} does not match {width}x{height}x{channels}",
                    data.len()
                ),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("image", "non-finite pixel value"));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: T) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, 1, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Single-channel value at `(x, y)`; panics on multi-channel images.
    pub fn get(&self, x: usize, y: usize) -> T {
        assert_eq!(self.channels, 1, "get() requires a single-channel image");
        self.data[y * self.width + x]
    }

    pub fn same_size(&self, other: &Self) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Elementwise `a·self + b·other`.
    pub fn lincomb(&self, a: T, other: &Self, b: T) -> Result<Self> {
        if !self.same_size(other) || self.channels != other.channels {
            return Err(Error::DimensionMismatch(
                self.width,
                self.height,
                other.width,
                other.height,
            ));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&u, &v)| a * u + b * v)
            .collect();
        Self::new(self.width, self.height, self.channels, data)
    }

    pub fn scaled(&self, c: T) -> Self {
        Self {
            data: self.data.iter().map(|&v| v * c).collect(),
            ..self.clone()
        }
    }

    pub fn transposed(&self) -> Self {
        let c = self.channels;
        let mut data = Vec::with_capacity(self.data.len());
        for x in 0..self.width {
            for y in 0..self.height {
                let base = (y * self.width + x) * c;
                data.extend_from_slice(&self.data[base..base + c]);
            }
        }
        Self {
            width: self.height,
            height: self.width,
            channels: c,
            data,
        }
    }

    /// 180° rotation about the raster centre.
    pub fn rotated_180(&self) -> Self {
        let c = self.channels;
        let n = self.width * self.height;
        let mut data = Vec::with_capacity(self.data.len());
        for i in (0..n).rev() {
            data.extend_from_slice(&self.data[i * c..i * c + c]);
        }
        Self { data, ..self.clone() }
    }

    pub fn clamp_unit(&mut self) {
        for v in &mut self.data {
            *v = v.max(T::zero()).min(T::one());
        }
    }
}

/// Per-pixel Sobel responses of a single-channel image.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField<T> {
    width: usize,
    height: usize,
    gx: Vec<T>,
    gy: Vec<T>,
}

impl<T: Scalar> GradientField<T> {
    pub fn new(width: usize, height: usize, gx: Vec<T>, gy: Vec<T>) -> Result<Self> {
        let n = width * height;
        if gx.len() != n || gy.len() != n {
            return Err(Error::invalid("gradient field", "plane length mismatch"));
        }
        if gx.iter().chain(&gy).any(|v| !v.is_finite()) {
            return Err(Error::invalid("gradient field", "non-finite value"));
        }
        Ok(Self { width, height, gx, gy })
    }

    pub fn constant(width: usize, height: usize, g: Vec2<T>) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            gx: vec![g.x; n],
            gy: vec![g.y; n],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn gx(&self) -> &[T] {
        &self.gx
    }

    pub fn gy(&self) -> &[T] {
        &self.gy
    }

    pub fn at(&self, x: usize, y: usize) -> Vec2<T> {
        let i = y * self.width + x;
        Vec2::new(self.gx[i], self.gy[i])
    }
}

/// Converts to a single luma plane; single-channel input is returned as is.
pub fn to_luma<T: Scalar>(img: &Image<T>) -> Result<Image<T>> {
    match img.channels {
        1 => Ok(img.clone()),
        3 => {
            let [wr, wg, wb] = LUMA_WEIGHTS.map(T::lit);
            let data = img
                .data
                .chunks_exact(3)
                .map(|px| wr * px[0] + wg * px[1] + wb * px[2])
                .collect();
            Image::new(img.width, img.height, 1, data)
        }
        c => Err(Error::BadChannels(c)),
    }
}

// Smoothing weights across the derivative direction; the derivative itself is
// the difference of the +1 and −1 neighbours, so constant input gives exactly 0.
const SMOOTH: [(isize, f64); 3] = [(-1, 1.0), (0, 2.0), (1, 1.0)];

#[inline]
fn clamp_index(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Unnormalized 3×3 Sobel gradients with replicate padding.
///
/// `gx` uses `[[−1, 0, 1], [−2, 0, 2], [−1, 0, 1]]` and `gy` its transpose
/// (positive toward larger y).
pub fn sobel<T: Scalar>(img: &Image<T>) -> Result<GradientField<T>> {
    if img.channels != 1 {
        return Err(Error::BadChannels(img.channels));
    }
    let (w, h) = (img.width, img.height);
    if w < 3 || h < 3 {
        return Err(Error::TooSmall { width: w, height: h });
    }
    let smooth = SMOOTH.map(|(o, c)| (o, T::lit(c)));
    let at = |x: isize, y: isize| img.data[clamp_index(y, h) * w + clamp_index(x, w)];
    let mut gx = vec![T::zero(); w * h];
    let mut gy = vec![T::zero(); w * h];
    for y in 0..h {
        let yi = y as isize;
        for x in 0..w {
            let xi = x as isize;
            let (mut sx, mut sy) = (T::zero(), T::zero());
            for &(o, c) in &smooth {
                sx = sx + c * (at(xi + 1, yi + o) - at(xi - 1, yi + o));
                sy = sy + c * (at(xi + o, yi + 1) - at(xi + o, yi - 1));
            }
            gx[y * w + x] = sx;
            gy[y * w + x] = sy;
        }
    }
    Ok(GradientField { width: w, height: h, gx, gy })
}

/// Adjoint of [`sobel`]: maps cotangent planes on `(gx, gy)` back to a pixel plane.
pub(crate) fn sobel_adjoint<T: Scalar>(width: usize, height: usize, agx: &[T], agy: &[T]) -> Vec<T> {
    let smooth = SMOOTH.map(|(o, c)| (o, T::lit(c)));
    let idx = |x: isize, y: isize| clamp_index(y, height) * width + clamp_index(x, width);
    let mut out = vec![T::zero(); width * height];
    for y in 0..height {
        let yi = y as isize;
        for x in 0..width {
            let xi = x as isize;
            let i = y * width + x;
            let (ax, ay) = (agx[i], agy[i]);
            if ax == T::zero() && ay == T::zero() {
                continue;
            }
            for &(o, c) in &smooth {
                let (px, py) = (c * ax, c * ay);
                out[idx(xi + 1, yi + o)] = out[idx(xi + 1, yi + o)] + px;
                out[idx(xi - 1, yi + o)] = out[idx(xi - 1, yi + o)] - px;
                out[idx(xi + o, yi + 1)] = out[idx(xi + o, yi + 1)] + py;
                out[idx(xi + o, yi - 1)] = out[idx(xi + o, yi - 1)] - py;
            }
        }
    }
    out
}

/// Bilinear footprint of a fractional position: four `(index, weight)` pairs.
pub(crate) fn bilinear_stencil<T: Scalar>(
    width: usize,
    height: usize,
    p: Vec2<T>,
) -> Result<[(usize, T); 4]> {
    let tol = T::lit(SAMPLE_TOLERANCE);
    let max_x = T::from_usize_lossy(width - 1);
    let max_y = T::from_usize_lossy(height - 1);
    if !p.is_finite() || p.x < -tol || p.y < -tol || p.x > max_x + tol || p.y > max_y + tol {
        return Err(Error::OutOfBounds {
            x: p.x.as_f64(),
            y: p.y.as_f64(),
            width,
            height,
        });
    }
    let px = p.x.max(T::zero()).min(max_x);
    let py = p.y.max(T::zero()).min(max_y);
    let mut x0 = px.floor().to_usize().unwrap_or(0);
    let mut y0 = py.floor().to_usize().unwrap_or(0);
    // Keep the right/bottom neighbour in range on the last column/row.
    if x0 >= width - 1 {
        x0 = width.saturating_sub(2);
    }
    if y0 >= height - 1 {
        y0 = height.saturating_sub(2);
    }
    let fx = px - T::from_usize_lossy(x0);
    let fy = py - T::from_usize_lossy(y0);
    let (x1, y1) = (x0 + 1, y0 + 1);
    let one = T::one();
    Ok([
        (y0 * width + x0, (one - fx) * (one - fy)),
        (y0 * width + x1, fx * (one - fy)),
        (y1 * width + x0, (one - fx) * fy),
        (y1 * width + x1, fx * fy),
    ])
}

/// Bilinear interpolation of the gradient field at a fractional position.
pub fn sample_gradient<T: Scalar>(field: &GradientField<T>, p: Vec2<T>) -> Result<Vec2<T>> {
    let stencil = bilinear_stencil(field.width, field.height, p)?;
    let mut g = Vec2::new(T::zero(), T::zero());
    for (i, w) in stencil {
        g.x = g.x + w * field.gx[i];
        g.y = g.y + w * field.gy[i];
    }
    Ok(g)
}
