//! Pinhole projection, vanishing points and the ray machinery the loss sweeps
//! across an image.
//!
//! Image coordinates are in pixels with the origin at the top-left pixel
//! centre, x to the right and y down. A `width × height` raster therefore
//! spans the closed rectangle `[0, width − 1] × [0, height − 1]`.

use std::ops::{Add, Mul, Neg, Sub};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Threshold on `|dz|` below which a 3-D direction counts as parallel to the sensor.
pub const PARALLEL_EPS: f64 = 1e-6;

/// Minimum separation between two members of a [`VanishingPointSet`].
pub const MIN_VP_SEPARATION: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec2<T> {
    pub x: T,
    pub y: T,
}

impl<T: Scalar> Vec2<T> {
    pub fn new(x: T, y: T) -> Self {
        Self { x, y }
    }

    pub fn dot(self, other: Self) -> T {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the 3-D cross product.
    pub fn cross(self, other: Self) -> T {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> T {
        self.x.hypot(self.y)
    }

    pub fn normalized(self) -> Option<Self> {
        let n = self.norm();
        if n > T::zero() && n.is_finite() {
            Some(Self::new(self.x / n, self.y / n))
        } else {
            None
        }
    }

    /// Counter-clockwise rotation by 90° (in a y-up frame).
    pub fn perp(self) -> Self {
        Self::new(-self.y, self.x)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn from_angle(phi: T) -> Self {
        Self::new(phi.cos(), phi.sin())
    }
}

impl<T: Scalar> Add for Vec2<T> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl<T: Scalar> Sub for Vec2<T> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl<T: Scalar> Mul<T> for Vec2<T> {
    type Output = Self;
    fn mul(self, rhs: T) -> Self {
        Self::new(self.x * rhs, self.y * rhs)
    }
}

impl<T: Scalar> Neg for Vec2<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y)
    }
}

/// World-space point.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Scalar> Point3<T> {
    pub fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }

    pub fn offset(self, d: Direction3<T>, t: T) -> Self {
        Self::new(self.x + d.dx * t, self.y + d.dy * t, self.z + d.dz * t)
    }

    pub fn lerp(self, other: Self, t: T) -> Self {
        Self::new(
            self.x + (other.x - self.x) * t,
            self.y + (other.y - self.y) * t,
            self.z + (other.z - self.z) * t,
        )
    }

    pub fn distance(self, other: Self) -> T {
        let (dx, dy, dz) = (other.x - self.x, other.y - self.y, other.z - self.z);
        (dx * dx + dy * dy + dz * dz).sqrt()
    }
}

/// Unit-length 3-D direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Direction3<T> {
    pub dx: T,
    pub dy: T,
    pub dz: T,
}

impl<T: Scalar> Direction3<T> {
    /// Normalizes `(dx, dy, dz)`; fails on a zero or non-finite vector.
    pub fn new(dx: T, dy: T, dz: T) -> Result<Self> {
        let n = (dx * dx + dy * dy + dz * dz).sqrt();
        if !(n > T::zero()) || !n.is_finite() {
            return Err(Error::invalid("direction", "zero or non-finite vector"));
        }
        // Already-unit input is kept bit-exact so stored directions round-trip.
        if (n - T::one()).abs() <= T::epsilon() * T::lit(4.0) {
            return Ok(Self { dx, dy, dz });
        }
        Ok(Self {
            dx: dx / n,
            dy: dy / n,
            dz: dz / n,
        })
    }

    pub fn between(a: Point3<T>, b: Point3<T>) -> Result<Self> {
        Self::new(b.x - a.x, b.y - a.y, b.z - a.z)
    }

    pub fn flipped(self) -> Self {
        Self {
            dx: -self.dx,
            dy: -self.dy,
            dz: -self.dz,
        }
    }

    pub fn dot(self, other: Self) -> T {
        self.dx * other.dx + self.dy * other.dy + self.dz * other.dz
    }
}

/// Pinhole camera looking down +Z with image y pointing down.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera<T> {
    pub f: T,
    pub cx: T,
    pub cy: T,
    pub width: usize,
    pub height: usize,
}

impl<T: Scalar> Camera<T> {
    pub fn new(f: T, cx: T, cy: T, width: usize, height: usize) -> Result<Self> {
        if !(f > T::zero()) || !f.is_finite() {
            return Err(Error::invalid("camera", format!("focal length {f} must be > 0")));
        }
        if !cx.is_finite() || !cy.is_finite() {
            return Err(Error::invalid("camera", "non-finite principal point"));
        }
        if width < 2 || height < 2 {
            return Err(Error::invalid(
                "camera",
                format!("image size {width}x{height} must be at least 2x2"),
            ));
        }
        Ok(Self {
            f,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Camera with the principal point at the image centre.
    pub fn centered(f: T, width: usize, height: usize) -> Result<Self> {
        let half = T::lit(0.5);
        Self::new(
            f,
            (T::from_usize_lossy(width) - T::one()) * half,
            (T::from_usize_lossy(height) - T::one()) * half,
            width,
            height,
        )
    }

    pub fn image_rect(&self) -> ImageRect<T> {
        ImageRect::for_image(self.width, self.height)
    }
}

/// Axis-aligned rectangle in image coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageRect<T> {
    pub x0: T,
    pub y0: T,
    pub x1: T,
    pub y1: T,
}

impl<T: Scalar> ImageRect<T> {
    pub fn new(x0: T, y0: T, x1: T, y1: T) -> Result<Self> {
        if !(x0 < x1) || !(y0 < y1) {
            return Err(Error::invalid(
                "rectangle",
                format!("bounds ({x0}, {y0})-({x1}, {y1}) are empty"),
            ));
        }
        Ok(Self { x0, y0, x1, y1 })
    }

    /// The pixel-centre extent `[0, w−1] × [0, h−1]` of a raster.
    ///
    /// Panics when either dimension is below 2.
    pub fn for_image(width: usize, height: usize) -> Self {
        assert!(width >= 2 && height >= 2, "raster must be at least 2x2");
        Self {
            x0: T::zero(),
            y0: T::zero(),
            x1: T::from_usize_lossy(width - 1),
            y1: T::from_usize_lossy(height - 1),
        }
    }

    /// Closed containment test.
    pub fn contains(&self, p: Vec2<T>) -> bool {
        p.x >= self.x0 && p.x <= self.x1 && p.y >= self.y0 && p.y <= self.y1
    }

    pub fn corners(&self) -> [Vec2<T>; 4] {
        [
            Vec2::new(self.x0, self.y0),
            Vec2::new(self.x1, self.y0),
            Vec2::new(self.x1, self.y1),
            Vec2::new(self.x0, self.y1),
        ]
    }

    pub fn clamp(&self, p: Vec2<T>) -> Vec2<T> {
        Vec2::new(p.x.max(self.x0).min(self.x1), p.y.max(self.y0).min(self.y1))
    }

    pub fn center(&self) -> Vec2<T> {
        let half = T::lit(0.5);
        Vec2::new((self.x0 + self.x1) * half, (self.y0 + self.y1) * half)
    }

    pub fn diagonal(&self) -> T {
        (self.x1 - self.x0).hypot(self.y1 - self.y0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VpSource {
    GroundTruth,
    Estimated,
    Synthetic,
}

/// A finite vanishing point in image coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VanishingPoint<T> {
    pub position: Vec2<T>,
    pub source: VpSource,
    /// Fit residual in pixels; zero for analytically exact points.
    pub residual: T,
}

impl<T: Scalar> VanishingPoint<T> {
    pub fn new(position: Vec2<T>, source: VpSource) -> Self {
        Self {
            position,
            source,
            residual: T::zero(),
        }
    }

    pub fn at(x: T, y: T) -> Self {
        Self::new(Vec2::new(x, y), VpSource::Synthetic)
    }
}

/// Vanishing "point" of a pencil parallel to the sensor: the image lines stay
/// parallel along `direction`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InfiniteVp<T> {
    pub direction: Vec2<T>,
}

/// Image of a 3-D direction: either a finite point or a parallel pencil.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VpKind<T> {
    Finite(VanishingPoint<T>),
    Infinite(InfiniteVp<T>),
}

impl<T: Scalar> VpKind<T> {
    pub fn finite(self) -> Option<VanishingPoint<T>> {
        match self {
            VpKind::Finite(v) => Some(v),
            VpKind::Infinite(_) => None,
        }
    }
}

/// Ordered collection of finite vanishing points.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct VanishingPointSet<T> {
    points: Vec<VanishingPoint<T>>,
}

impl<T: Scalar> VanishingPointSet<T> {
    /// Rejects non-finite members and pairs closer than [`MIN_VP_SEPARATION`].
    pub fn new(points: Vec<VanishingPoint<T>>) -> Result<Self> {
        let min_sep = T::lit(MIN_VP_SEPARATION);
        for (i, a) in points.iter().enumerate() {
            if !a.position.is_finite() {
                return Err(Error::invalid("vanishing point", "non-finite position"));
            }
            for b in &points[i + 1..] {
                if (a.position - b.position).norm() < min_sep {
                    return Err(Error::invalid(
                        "vanishing point set",
                        format!(
                            "members ({}, {}) and ({}, {}) coincide",
                            a.position.x, a.position.y, b.position.x, b.position.y
                        ),
                    ));
                }
            }
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[VanishingPoint<T>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, VanishingPoint<T>> {
        self.points.iter()
    }
}

/// Range of ray angles swept from a vanishing point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngleRange<T> {
    pub phi_min: T,
    pub phi_max: T,
    pub full_circle: bool,
}

impl<T: Scalar> AngleRange<T> {
    pub fn full() -> Self {
        Self {
            phi_min: T::zero(),
            phi_max: T::TAU(),
            full_circle: true,
        }
    }

    /// A partial arc; requires `0 < phi_max − phi_min ≤ π`.
    pub fn arc(phi_min: T, phi_max: T) -> Result<Self> {
        let width = phi_max - phi_min;
        if !(width > T::zero()) || width > T::PI() {
            return Err(Error::invalid(
                "angle range",
                format!("arc width {width} outside (0, π]"),
            ));
        }
        Ok(Self {
            phi_min,
            phi_max,
            full_circle: false,
        })
    }

    pub fn width(&self) -> T {
        self.phi_max - self.phi_min
    }

    /// Whether `phi` (any representative mod 2π) falls inside the arc.
    pub fn contains(&self, phi: T, tol: T) -> bool {
        if self.full_circle {
            return true;
        }
        let tau = T::TAU();
        let rel = (phi - self.phi_min) % tau;
        let rel = if rel < T::zero() { rel + tau } else { rel };
        rel <= self.width() + tol || rel >= tau - tol
    }
}

/// Parameter interval `[k0, k1]` where a ray overlaps a rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipInterval<T> {
    pub k0: T,
    pub k1: T,
}

impl<T: Scalar> ClipInterval<T> {
    pub fn length(&self) -> T {
        self.k1 - self.k0
    }
}

/// Quadrature node on a ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RaySample<T> {
    pub point: Vec2<T>,
    pub k: T,
    pub weight: T,
}

/// Projects a world point through the pinhole: `(cx + f·X/Z, cy + f·Y/Z)`.
pub fn project_point<T: Scalar>(camera: &Camera<T>, p: Point3<T>) -> Result<Vec2<T>> {
    if !(p.z > T::zero()) {
        return Err(Error::NonPositiveDepth(p.z.as_f64()));
    }
    Ok(Vec2::new(
        camera.cx + camera.f * p.x / p.z,
        camera.cy + camera.f * p.y / p.z,
    ))
}

/// Limit of the projection of `O + t·d` as `t → ∞`.
pub fn vanishing_point_of_direction<T: Scalar>(camera: &Camera<T>, d: Direction3<T>) -> VpKind<T> {
    if d.dz.abs() > T::lit(PARALLEL_EPS) {
        VpKind::Finite(VanishingPoint::new(
            Vec2::new(
                camera.cx + camera.f * d.dx / d.dz,
                camera.cy + camera.f * d.dy / d.dz,
            ),
            VpSource::Synthetic,
        ))
    } else {
        // |dz| ≤ 1e-6 on a unit vector leaves (dx, dy) with norm ≈ 1.
        let direction = Vec2::new(d.dx, d.dy)
            .normalized()
            .expect("sensor-parallel unit direction has non-zero image component");
        VpKind::Infinite(InfiniteVp { direction })
    }
}

/// Angular extent of the rectangle as seen from `v`.
///
/// A point inside or on the boundary sees every direction. Otherwise the result
/// is the smallest circular arc holding all four corner angles, expressed with
/// `phi_min ∈ (−π, π]` and `phi_max = phi_min + width`.
pub fn image_angle_range<T: Scalar>(v: &VanishingPoint<T>, rect: &ImageRect<T>) -> AngleRange<T> {
    let origin = v.position;
    if rect.contains(origin) {
        return AngleRange::full();
    }
    let mut angles = rect.corners().map(|c| (c.y - origin.y).atan2(c.x - origin.x));
    angles.sort_by(|a, b| a.partial_cmp(b).expect("finite corner angles"));

    // The excluded region is the widest gap between circularly adjacent corners.
    let tau = T::TAU();
    let mut start = 0;
    let mut widest = angles[0] + tau - angles[3];
    for i in 0..3 {
        let gap = angles[i + 1] - angles[i];
        if gap > widest {
            widest = gap;
            start = i + 1;
        }
    }
    let phi_min = angles[start];
    let phi_max = phi_min + (tau - widest);
    AngleRange {
        phi_min,
        phi_max,
        full_circle: false,
    }
}

/// `n` sweep angles over `range`.
///
/// Partial arcs include both endpoints; a full circle uses `2πi/n` so the
/// first and last rays never coincide.
pub fn angle_fan<T: Scalar>(range: &AngleRange<T>, n: usize) -> Result<Vec<T>> {
    if n < 2 {
        return Err(Error::BadCount(n));
    }
    let angles = if range.full_circle {
        let n_t = T::from_usize_lossy(n);
        (0..n)
            .map(|i| T::TAU() * T::from_usize_lossy(i) / n_t)
            .collect()
    } else {
        let span = range.phi_max - range.phi_min;
        let last = T::from_usize_lossy(n - 1);
        (0..n)
            .map(|i| {
                if i == n - 1 {
                    range.phi_max
                } else {
                    range.phi_min + span * (T::from_usize_lossy(i) / last)
                }
            })
            .collect()
    };
    Ok(angles)
}

/// Unit normal `(−sin φ, cos φ)` of the ray with direction `(cos φ, sin φ)`.
pub fn perp_vector<T: Scalar>(phi: T) -> Vec2<T> {
    Vec2::from_angle(phi).perp()
}

/// Slab-clips the forward ray `v + k·(cos φ, sin φ)`, `k ≥ 0`, against `rect`.
///
/// Returns `None` when the ray misses or only touches a single point.
pub fn clip_ray_to_rect<T: Scalar>(
    v: &VanishingPoint<T>,
    phi: T,
    rect: &ImageRect<T>,
) -> Option<ClipInterval<T>> {
    let dir = Vec2::from_angle(phi);
    let o = v.position;
    let mut k0 = T::zero();
    let mut k1 = T::infinity();
    for (origin, d, lo, hi) in [(o.x, dir.x, rect.x0, rect.x1), (o.y, dir.y, rect.y0, rect.y1)] {
        if d == T::zero() {
            if origin < lo || origin > hi {
                return None;
            }
        } else {
            let a = (lo - origin) / d;
            let b = (hi - origin) / d;
            k0 = k0.max(a.min(b));
            k1 = k1.min(a.max(b));
        }
    }
    if k1 > k0 {
        Some(ClipInterval { k0, k1 })
    } else {
        None
    }
}

/// Quadrature nodes along the clipped ray.
///
/// Nodes sit at `k0, k0 + step, …` and at the terminal `k1`; weights follow
/// the composite trapezoid rule so they sum to `k1 − k0`. A missed ray yields
/// no samples. Points are clamped onto `rect` to absorb rounding.
pub fn line_pixels<T: Scalar>(
    v: &VanishingPoint<T>,
    phi: T,
    rect: &ImageRect<T>,
    step: T,
) -> Result<Vec<RaySample<T>>> {
    if !(step > T::zero()) || !step.is_finite() {
        return Err(Error::BadStep(step.as_f64()));
    }
    let Some(interval) = clip_ray_to_rect(v, phi, rect) else {
        return Ok(Vec::new());
    };
    Ok(samples_on_interval(v.position, phi, rect, interval, step))
}

pub(crate) fn samples_on_interval<T: Scalar>(
    origin: Vec2<T>,
    phi: T,
    rect: &ImageRect<T>,
    interval: ClipInterval<T>,
    step: T,
) -> Vec<RaySample<T>> {
    let dir = Vec2::from_angle(phi);
    let ClipInterval { k0, k1 } = interval;
    // Merge a terminal remainder that is only rounding noise.
    let merge_tol = step * T::lit(1e-9);
    let mut ks = Vec::new();
    let mut j = 0usize;
    loop {
        let k = k0 + step * T::from_usize_lossy(j);
        if k >= k1 - merge_tol {
            break;
        }
        ks.push(k);
        j += 1;
    }
    ks.push(k1);

    let half = T::lit(0.5);
    let mut samples: Vec<RaySample<T>> = ks
        .iter()
        .map(|&k| RaySample {
            point: rect.clamp(origin + dir * k),
            k,
            weight: T::zero(),
        })
        .collect();
    for i in 0..ks.len() - 1 {
        let h = (ks[i + 1] - ks[i]) * half;
        samples[i].weight = samples[i].weight + h;
        samples[i + 1].weight = samples[i + 1].weight + h;
    }
    samples
}
