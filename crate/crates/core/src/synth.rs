//! Synthetic wireframe scenes with known vanishing points.
//!
//! Scenes are cuboids sharing one random orientation, so their edges fall into
//! three parallel families. Rendering draws each projected edge with a tent
//! falloff; [`distort_render`] bends or shifts edges to break perspective in a
//! controlled way.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    project_point, vanishing_point_of_direction, Camera, Direction3, InfiniteVp, Point3,
    VanishingPointSet, Vec2, VpKind, VpSource,
};
use crate::gradients::Image;
use crate::json::{parse_versioned, to_pretty, SCHEMA_VERSION};
use crate::scalar::Scalar;

/// Segments are clipped to `Z ≥ NEAR_PLANE` before projection.
pub const NEAR_PLANE: f64 = 0.1;

/// Polyline pieces used to draw a bowed segment.
const BOW_PIECES: usize = 32;

const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;

/// A 3-D segment tagged with its parallel family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneSegment<T> {
    pub a: Point3<T>,
    pub b: Point3<T>,
    pub family: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WireframeScene<T> {
    pub segments: Vec<SceneSegment<T>>,
    pub families: Vec<Direction3<T>>,
    pub camera: Camera<T>,
}

impl<T: Scalar> WireframeScene<T> {
    /// Checks that every segment lies in front of the camera and runs along
    /// its family direction (either orientation).
    pub fn new(
        segments: Vec<SceneSegment<T>>,
        families: Vec<Direction3<T>>,
        camera: Camera<T>,
    ) -> Result<Self> {
        let tol = T::lit(1e-9).max(T::epsilon() * T::lit(64.0));
        for (i, s) in segments.iter().enumerate() {
            let Some(fam) = families.get(s.family) else {
                return Err(Error::invalid("scene", format!("segment {i} has unknown family {}", s.family)));
            };
            if !(s.a.z > T::zero()) || !(s.b.z > T::zero()) {
                return Err(Error::invalid("scene", format!("segment {i} has an endpoint with Z ≤ 0")));
            }
            let d = Direction3::between(s.a, s.b)?;
            if T::one() - d.dot(*fam).abs() > tol {
                return Err(Error::invalid(
                    "scene",
                    format!("segment {i} is not parallel to family {}", s.family),
                ));
            }
        }
        Ok(Self {
            segments,
            families,
            camera,
        })
    }

    pub fn empty(camera: Camera<T>) -> Self {
        Self {
            segments: Vec::new(),
            families: Vec::new(),
            camera,
        }
    }
}

/// A segment after projection into the image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedSegment<T> {
    pub p0: Vec2<T>,
    pub p1: Vec2<T>,
    pub family: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderConfig<T> {
    pub line_width: T,
    pub background: T,
    pub foreground: T,
    pub supersample: usize,
}

impl<T: Scalar> Default for RenderConfig<T> {
    fn default() -> Self {
        Self {
            line_width: T::lit(1.5),
            background: T::zero(),
            foreground: T::one(),
            supersample: 1,
        }
    }
}

impl<T: Scalar> RenderConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: T| v >= T::zero() && v <= T::one();
        if !(self.line_width > T::zero()) || !self.line_width.is_finite() {
            return Err(Error::invalid("render config", "line width must be > 0"));
        }
        if !unit(self.background) || !unit(self.foreground) {
            return Err(Error::invalid("render config", "intensities must lie in [0, 1]"));
        }
        if self.supersample == 0 {
            return Err(Error::invalid("render config", "supersample factor must be ≥ 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistortionSpec<T> {
    /// Midpoint displacement of each projected segment, in pixels.
    pub bow_amplitude: T,
    /// Length of the random translation applied to each family, in pixels.
    pub vp_jitter: T,
    pub seed: u64,
}

impl<T: Scalar> DistortionSpec<T> {
    pub fn bow(amplitude: T, seed: u64) -> Self {
        Self {
            bow_amplitude: amplitude,
            vp_jitter: T::zero(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bow_amplitude >= T::zero()) || !(self.vp_jitter >= T::zero()) {
            return Err(Error::invalid("distortion", "amplitudes must be ≥ 0"));
        }
        Ok(())
    }
}

/// Orientation of the cuboids produced by [`make_box_scene_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BoxOrientation {
    /// Uniformly random rotation: three finite vanishing points almost surely.
    #[default]
    Random,
    /// Edges along the camera axes: one finite vanishing point at the principal point.
    CameraAligned,
}

/// Random cuboids in front of `camera` sharing one random orientation.
pub fn make_box_scene<T: Scalar>(camera: &Camera<T>, seed: u64, n_boxes: usize) -> Result<WireframeScene<T>> {
    make_box_scene_with(camera, seed, n_boxes, BoxOrientation::Random)
}

fn random_rotation(rng: &mut ChaCha8Rng) -> [[f64; 3]; 3] {
    // Uniform unit quaternion (Shoemake).
    let (u1, u2, u3): (f64, f64, f64) = (rng.gen(), rng.gen(), rng.gen());
    let tau = std::f64::consts::TAU;
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let (x, y, z, w) = (a * (tau * u2).sin(), a * (tau * u2).cos(), b * (tau * u3).sin(), b * (tau * u3).cos());
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - z * w), 2.0 * (x * z + y * w)],
        [2.0 * (x * y + z * w), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - x * w)],
        [2.0 * (x * z - y * w), 2.0 * (y * z + x * w), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

pub fn make_box_scene_with<T: Scalar>(
    camera: &Camera<T>,
    seed: u64,
    n_boxes: usize,
    orientation: BoxOrientation,
) -> Result<WireframeScene<T>> {
    if n_boxes < 1 {
        return Err(Error::invalid("box count", "at least one box required"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rot = match orientation {
        BoxOrientation::Random => random_rotation(&mut rng),
        BoxOrientation::CameraAligned => [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
    };
    let axes: [[f64; 3]; 3] = [0, 1, 2].map(|j| [rot[0][j], rot[1][j], rot[2][j]]);
    let families = axes
        .iter()
        .map(|a| Direction3::new(T::lit(a[0]), T::lit(a[1]), T::lit(a[2])))
        .collect::<Result<Vec<_>>>()?;

    let (f, cx, cy) = (camera.f.as_f64(), camera.cx.as_f64(), camera.cy.as_f64());
    let (w, h) = (camera.width as f64, camera.height as f64);
    let in_frame = |p: [f64; 3]| {
        p[2] > NEAR_PLANE && {
            let (u, v) = (cx + f * p[0] / p[2], cy + f * p[1] / p[2]);
            (-1.5 * w..=2.5 * w).contains(&u) && (-1.5 * h..=2.5 * h).contains(&v)
        }
    };

    let mut segments = Vec::with_capacity(12 * n_boxes);
    for _ in 0..n_boxes {
        let corners = (0..MAX_PLACEMENT_ATTEMPTS)
            .find_map(|_| {
                let depth = rng.gen_range(4.0..12.0);
                let u = rng.gen_range(0.3 * w..0.7 * w);
                let v = rng.gen_range(0.3 * h..0.7 * h);
                let center = [(u - cx) * depth / f, (v - cy) * depth / f, depth];
                let half = [0, 1, 2].map(|_| rng.gen_range(0.08..0.25) * w.min(h) * depth / f);
                let mut corners = [[0.0; 3]; 8];
                for (i, c) in corners.iter_mut().enumerate() {
                    let s = [0, 1, 2].map(|j| if i >> j & 1 == 1 { half[j] } else { -half[j] });
                    for r in 0..3 {
                        c[r] = center[r] + (0..3).map(|j| axes[j][r] * s[j]).sum::<f64>();
                    }
                }
                corners.iter().all(|&c| in_frame(c)).then_some(corners)
            })
            .ok_or_else(|| Error::invalid("box scene", "could not place a box inside the frame"))?;
        let to_t = |c: [f64; 3]| Point3::new(T::lit(c[0]), T::lit(c[1]), T::lit(c[2]));
        // Edge along axis j joins corners that differ only in bit j, oriented along +axis.
        for j in 0..3 {
            for i in 0..8usize {
                if i >> j & 1 == 0 {
                    segments.push(SceneSegment {
                        a: to_t(corners[i]),
                        b: to_t(corners[i | 1 << j]),
                        family: j,
                    });
                }
            }
        }
    }
    WireframeScene::new(segments, families, *camera)
}

/// Finite vanishing points of a scene's families.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthVps<T> {
    pub vps: VanishingPointSet<T>,
    /// Family id of each member of `vps`.
    pub families: Vec<usize>,
    /// Sensor-parallel families.
    pub infinite: Vec<(usize, InfiniteVp<T>)>,
}

impl<T: Scalar> GroundTruthVps<T> {
    /// Members within `radius` pixels of the image centre.
    pub fn within(&self, radius: T, camera: &Camera<T>) -> Result<(VanishingPointSet<T>, Vec<usize>)> {
        let center = camera.image_rect().center();
        let (points, fams): (Vec<_>, Vec<_>) = self
            .vps
            .iter()
            .zip(&self.families)
            .filter(|(v, _)| (v.position - center).norm() <= radius)
            .map(|(v, f)| (*v, *f))
            .unzip();
        Ok((VanishingPointSet::new(points)?, fams))
    }
}

pub fn ground_truth_vps<T: Scalar>(scene: &WireframeScene<T>) -> Result<GroundTruthVps<T>> {
    let mut points = Vec::new();
    let mut families = Vec::new();
    let mut infinite = Vec::new();
    for (id, d) in scene.families.iter().enumerate() {
        match vanishing_point_of_direction(&scene.camera, *d) {
            VpKind::Finite(mut v) => {
                v.source = VpSource::GroundTruth;
                points.push(v);
                families.push(id);
            }
            VpKind::Infinite(inf) => infinite.push((id, inf)),
        }
    }
    if points.is_empty() {
        return Err(Error::AllInfinite);
    }
    Ok(GroundTruthVps {
        vps: VanishingPointSet::new(points)?,
        families,
        infinite,
    })
}

/// Clips each segment to the near plane and projects it. Segments entirely
/// behind the near plane are dropped.
pub fn project_segments<T: Scalar>(scene: &WireframeScene<T>) -> Vec<ProjectedSegment<T>> {
    let near = T::lit(NEAR_PLANE);
    scene
        .segments
        .iter()
        .filter_map(|s| {
            let (mut a, mut b) = (s.a, s.b);
            if a.z < near && b.z < near {
                return None;
            }
            if a.z < near {
                a = b.lerp(a, (b.z - near) / (b.z - a.z));
            } else if b.z < near {
                b = a.lerp(b, (a.z - near) / (a.z - b.z));
            }
            Some(ProjectedSegment {
                p0: project_point(&scene.camera, a).ok()?,
                p1: project_point(&scene.camera, b).ok()?,
                family: s.family,
            })
        })
        .collect()
}

/// Coverage raster at `supersample²` samples per pixel, composited by max.
struct Canvas<T> {
    width: usize,
    height: usize,
    ss: usize,
    line_width: T,
    coverage: Vec<T>,
}

impl<T: Scalar> Canvas<T> {
    fn new(width: usize, height: usize, cfg: &RenderConfig<T>) -> Self {
        let ss = cfg.supersample;
        Self {
            width,
            height,
            ss,
            line_width: cfg.line_width,
            coverage: vec![T::zero(); width * height * ss * ss],
        }
    }

    /// Image-space coordinate of supersample index `i`.
    fn coord(&self, i: usize) -> T {
        let ss = T::from_usize_lossy(self.ss);
        (T::from_usize_lossy(i) + T::lit(0.5)) / ss - T::lit(0.5)
    }

    fn draw_segment(&mut self, p0: Vec2<T>, p1: Vec2<T>) {
        if !p0.is_finite() || !p1.is_finite() {
            return;
        }
        let lw = self.line_width;
        let (sw, sh) = (self.width * self.ss, self.height * self.ss);
        let ss = T::from_usize_lossy(self.ss);
        let half = T::lit(0.5);
        // Supersample index range of the bounding box grown by the line width.
        let lo_x = (p0.x.min(p1.x) - lw + half) * ss - half;
        let hi_x = (p0.x.max(p1.x) + lw + half) * ss - half;
        let lo_y = (p0.y.min(p1.y) - lw + half) * ss - half;
        let hi_y = (p0.y.max(p1.y) + lw + half) * ss - half;
        let clamp = |v: T, n: usize| -> usize {
            if v <= T::zero() {
                0
            } else {
                v.to_usize().unwrap_or(n).min(n)
            }
        };
        let (x_start, x_end) = (clamp(lo_x.floor(), sw), clamp(hi_x.ceil() + T::one(), sw));
        let (y_start, y_end) = (clamp(lo_y.floor(), sh), clamp(hi_y.ceil() + T::one(), sh));
        let seg = p1 - p0;
        let len2 = seg.dot(seg);
        for sy in y_start..y_end {
            let y = self.coord(sy);
            for sx in x_start..x_end {
                let p = Vec2::new(self.coord(sx), y);
                let t = if len2 > T::zero() {
                    ((p - p0).dot(seg) / len2).max(T::zero()).min(T::one())
                } else {
                    T::zero()
                };
                let dist = (p - (p0 + seg * t)).norm();
                let c = T::one() - dist / lw;
                if c > T::zero() {
                    let cell = &mut self.coverage[sy * sw + sx];
                    if c > *cell {
                        *cell = c;
                    }
                }
            }
        }
    }

    fn draw_bowed(&mut self, p0: Vec2<T>, p1: Vec2<T>, offset: T) {
        let Some(normal) = (p1 - p0).perp().normalized() else {
            self.draw_segment(p0, p1);
            return;
        };
        let n = T::from_usize_lossy(BOW_PIECES);
        let four = T::lit(4.0);
        let point = |i: usize| {
            let t = T::from_usize_lossy(i) / n;
            p0 + (p1 - p0) * t + normal * (four * t * (T::one() - t) * offset)
        };
        let mut prev = point(0);
        for i in 1..=BOW_PIECES {
            let next = point(i);
            self.draw_segment(prev, next);
            prev = next;
        }
    }

    fn into_image(self, cfg: &RenderConfig<T>) -> Result<Image<T>> {
        let ss = self.ss;
        let sw = self.width * ss;
        let norm = T::from_usize_lossy(ss * ss);
        let span = cfg.foreground - cfg.background;
        let mut data = Vec::with_capacity(self.width * self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                let mut acc = T::zero();
                for dy in 0..ss {
                    for dx in 0..ss {
                        acc = acc + self.coverage[(y * ss + dy) * sw + x * ss + dx];
                    }
                }
                let c = if ss == 1 { acc } else { acc / norm };
                data.push(cfg.background + span * c);
            }
        }
        Image::new(self.width, self.height, 1, data)
    }
}

/// Anti-aliased rendering of the projected wireframe.
pub fn render_wireframe<T: Scalar>(scene: &WireframeScene<T>, cfg: &RenderConfig<T>) -> Result<Image<T>> {
    cfg.validate()?;
    let mut canvas = Canvas::new(scene.camera.width, scene.camera.height, cfg);
    for s in project_segments(scene) {
        canvas.draw_segment(s.p0, s.p1);
    }
    canvas.into_image(cfg)
}

/// Renders the scene with bowed edges and/or per-family translations.
pub fn distort_render<T: Scalar>(
    scene: &WireframeScene<T>,
    cfg: &RenderConfig<T>,
    spec: &DistortionSpec<T>,
) -> Result<Image<T>> {
    cfg.validate()?;
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let offsets: Vec<Vec2<T>> = scene
        .families
        .iter()
        .map(|_| {
            let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            Vec2::from_angle(T::lit(theta)) * spec.vp_jitter
        })
        .collect();
    let mut canvas = Canvas::new(scene.camera.width, scene.camera.height, cfg);
    for s in project_segments(scene) {
        let sign = if rng.gen_bool(0.5) { T::one() } else { -T::one() };
        let (mut p0, mut p1) = (s.p0, s.p1);
        if spec.vp_jitter > T::zero() {
            p0 = p0 + offsets[s.family];
            p1 = p1 + offsets[s.family];
        }
        if spec.bow_amplitude > T::zero() {
            canvas.draw_bowed(p0, p1, sign * spec.bow_amplitude);
        } else {
            canvas.draw_segment(p0, p1);
        }
    }
    canvas.into_image(cfg)
}

#[derive(Serialize, Deserialize)]
struct CameraDoc {
    f: f64,
    cx: f64,
    cy: f64,
    width: usize,
    height: usize,
}

#[derive(Serialize, Deserialize)]
struct SceneDoc {
    schema: i64,
    camera: CameraDoc,
    families: Vec<[f64; 3]>,
    segments: Vec<(f64, f64, f64, f64, f64, f64, usize)>,
}

/// Serializes a scene as a schema-1 JSON document.
pub fn scene_to_json<T: Scalar>(scene: &WireframeScene<T>) -> String {
    let c = &scene.camera;
    let doc = SceneDoc {
        schema: SCHEMA_VERSION,
        camera: CameraDoc {
            f: c.f.as_f64(),
            cx: c.cx.as_f64(),
            cy: c.cy.as_f64(),
            width: c.width,
            height: c.height,
        },
        families: scene
            .families
            .iter()
            .map(|d| [d.dx.as_f64(), d.dy.as_f64(), d.dz.as_f64()])
            .collect(),
        segments: scene
            .segments
            .iter()
            .map(|s| {
                (
                    s.a.x.as_f64(),
                    s.a.y.as_f64(),
                    s.a.z.as_f64(),
                    s.b.x.as_f64(),
                    s.b.y.as_f64(),
                    s.b.z.as_f64(),
                    s.family,
                )
            })
            .collect(),
    };
    to_pretty(&doc)
}

pub fn scene_from_json<T: Scalar>(text: &str) -> Result<WireframeScene<T>> {
    let doc: SceneDoc = parse_versioned(text)?;
    let camera = Camera::new(
        T::lit(doc.camera.f),
        T::lit(doc.camera.cx),
        T::lit(doc.camera.cy),
        doc.camera.width,
        doc.camera.height,
    )?;
    let families = doc
        .families
        .iter()
        .map(|d| Direction3::new(T::lit(d[0]), T::lit(d[1]), T::lit(d[2])))
        .collect::<Result<Vec<_>>>()?;
    let segments = doc
        .segments
        .iter()
        .map(|&(x1, y1, z1, x2, y2, z2, family)| SceneSegment {
            a: Point3::new(T::lit(x1), T::lit(y1), T::lit(z1)),
            b: Point3::new(T::lit(x2), T::lit(y2), T::lit(z2)),
            family,
        })
        .collect();
    WireframeScene::new(segments, families, camera)
}

pub fn write_scene<T: Scalar>(scene: &WireframeScene<T>, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, scene_to_json(scene))?;
    Ok(())
}

pub fn read_scene<T: Scalar>(path: impl AsRef<Path>) -> Result<WireframeScene<T>> {
    scene_from_json(&std::fs::read_to_string(path)?)
}
