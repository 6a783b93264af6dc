//! Vanishing-point estimation from annotated segments, the parallel-line
//! concurrency check, and the annotation file format.
//!
//! Annotation files are JSON:
//!
//! ```json
//! {"schema": 1, "width": 640, "height": 480,
//!  "segments": [{"p0": [x, y], "p1": [x, y], "family": 0}, ...],
//!  "vps": [{"xy": [x, y], "family": 0}, ...]}
//! ```
//!
//! `vps` is optional. Coordinates are pixels, origin top-left, y down.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{InfiniteVp, VanishingPoint, VanishingPointSet, Vec2, VpSource};
use crate::json::{parse_versioned, to_pretty, SCHEMA_VERSION};
use crate::scalar::Scalar;
use crate::synth::{ground_truth_vps, project_segments, WireframeScene};

pub const MIN_SEGMENT_LENGTH: f64 = 1e-6;
/// Relative determinant below which the normal equations count as singular.
pub const SINGULAR_EPS: f64 = 1e-12;
pub const DEFAULT_TOL_REAL: f64 = 2.0;
pub const DEFAULT_TOL_SYNTHETIC: f64 = 0.5;

/// An annotated image segment belonging to a parallel family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment2<T> {
    pub p0: Vec2<T>,
    pub p1: Vec2<T>,
    pub family: usize,
}

impl<T: Scalar> Segment2<T> {
    pub fn new(p0: Vec2<T>, p1: Vec2<T>, family: usize) -> Result<Self> {
        if !p0.is_finite() || !p1.is_finite() || !((p1 - p0).norm() > T::lit(MIN_SEGMENT_LENGTH)) {
            return Err(Error::invalid("segment", "endpoints must be finite and distinct"));
        }
        Ok(Self { p0, p1, family })
    }

    pub fn length(&self) -> T {
        (self.p1 - self.p0).norm()
    }

    /// Unit normal of the supporting line.
    fn normal(&self) -> Vec2<T> {
        (self.p1 - self.p0)
            .perp()
            .normalized()
            .expect("segment length checked at construction")
    }

    /// Perpendicular distance from `p` to the infinite supporting line.
    pub fn line_distance(&self, p: Vec2<T>) -> T {
        self.normal().dot(p - self.p0).abs()
    }
}

/// Ground-truth vanishing point attached to a family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnotatedVp<T> {
    pub family: usize,
    pub vp: VanishingPoint<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationSet<T> {
    pub width: usize,
    pub height: usize,
    pub segments: Vec<Segment2<T>>,
    pub vps: Option<Vec<AnnotatedVp<T>>>,
}

impl<T: Scalar> AnnotationSet<T> {
    pub fn new(width: usize, height: usize, segments: Vec<Segment2<T>>, vps: Option<Vec<AnnotatedVp<T>>>) -> Result<Self> {
        if let Some(vps) = &vps {
            for a in vps {
                if !segments.iter().any(|s| s.family == a.family) {
                    return Err(Error::invalid(
                        "annotations",
                        format!("vanishing point refers to family {} with no segments", a.family),
                    ));
                }
            }
        }
        let vps = vps.map(|v| {
            v.into_iter()
                .map(|mut a| {
                    a.vp.source = VpSource::GroundTruth;
                    a
                })
                .collect()
        });
        Ok(Self {
            width,
            height,
            segments,
            vps,
        })
    }

    /// Segments grouped by family id, in ascending id order.
    pub fn by_family(&self) -> BTreeMap<usize, Vec<Segment2<T>>> {
        let mut groups: BTreeMap<usize, Vec<Segment2<T>>> = BTreeMap::new();
        for s in &self.segments {
            groups.entry(s.family).or_default().push(*s);
        }
        groups
    }

    /// Vanishing points to score against: the declared ones, or else one
    /// estimate per family whose pencil is not parallel.
    pub fn loss_vps(&self) -> Result<VanishingPointSet<T>> {
        if let Some(vps) = &self.vps {
            return VanishingPointSet::new(vps.iter().map(|a| a.vp).collect());
        }
        let mut points = Vec::new();
        for segs in self.by_family().values() {
            match estimate_vp(segs) {
                Ok(v) => points.push(v),
                Err(Error::Degenerate) => {}
                Err(e) => return Err(e),
            }
        }
        VanishingPointSet::new(points)
    }
}

/// Annotations for a synthetic scene: its exact projected segments, plus the
/// ground-truth vanishing points within `vp_radius` of the image centre.
///
/// Segments that project shorter than [`MIN_SEGMENT_LENGTH`] are dropped, as
/// are vanishing points of families left without segments.
pub fn scene_annotations<T: Scalar>(scene: &WireframeScene<T>, vp_radius: T) -> Result<AnnotationSet<T>> {
    let segments: Vec<Segment2<T>> = project_segments(scene)
        .into_iter()
        .filter_map(|s| Segment2::new(s.p0, s.p1, s.family).ok())
        .collect();
    let vps = match ground_truth_vps(scene) {
        Ok(gt) => {
            let (set, families) = gt.within(vp_radius, &scene.camera)?;
            set.iter()
                .zip(families)
                .filter(|(_, f)| segments.iter().any(|s| s.family == *f))
                .map(|(v, family)| AnnotatedVp { family, vp: *v })
                .collect()
        }
        Err(Error::AllInfinite) => Vec::new(),
        Err(e) => return Err(e),
    };
    let cam = &scene.camera;
    AnnotationSet::new(cam.width, cam.height, segments, Some(vps))
}

/// Length-weighted least-squares intersection of the segments' supporting lines.
pub fn estimate_vp<T: Scalar>(segments: &[Segment2<T>]) -> Result<VanishingPoint<T>> {
    if segments.len() < 2 {
        return Err(Error::Degenerate);
    }
    // Work relative to the weighted centroid of the midpoints for conditioning.
    let half = T::lit(0.5);
    let total_w: T = segments.iter().map(|s| s.length()).sum();
    let centroid = segments.iter().fold(Vec2::new(T::zero(), T::zero()), |acc, s| {
        acc + (s.p0 + s.p1) * (half * s.length() / total_w)
    });

    let (mut a11, mut a12, mut a22) = (T::zero(), T::zero(), T::zero());
    let (mut b1, mut b2) = (T::zero(), T::zero());
    for s in segments {
        let w = s.length();
        let n = s.normal();
        let c = n.dot(s.p0 - centroid);
        a11 = a11 + w * n.x * n.x;
        a12 = a12 + w * n.x * n.y;
        a22 = a22 + w * n.y * n.y;
        b1 = b1 + w * c * n.x;
        b2 = b2 + w * c * n.y;
    }
    let det = a11 * a22 - a12 * a12;
    let trace = a11 + a22;
    if !(det > T::lit(SINGULAR_EPS) * trace * trace) {
        return Err(Error::Degenerate);
    }
    let position = Vec2::new((a22 * b1 - a12 * b2) / det, (a11 * b2 - a12 * b1) / det) + centroid;
    let residual = rms(segments.iter().map(|s| s.line_distance(position)));
    Ok(VanishingPoint {
        position,
        source: VpSource::Estimated,
        residual,
    })
}

fn rms<T: Scalar>(values: impl Iterator<Item = T>) -> T {
    let (sum, n) = values.fold((T::zero(), 0usize), |(s, n), v| (s + v * v, n + 1));
    if n == 0 {
        T::zero()
    } else {
        (sum / T::from_usize_lossy(n)).sqrt()
    }
}

/// Estimated convergence point of one family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FamilyVp<T> {
    Finite(VanishingPoint<T>),
    /// The family's lines are parallel in the image.
    Infinite(InfiniteVp<T>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FamilyReport<T> {
    pub family: usize,
    pub vp: FamilyVp<T>,
    pub rms_residual: T,
    pub max_residual: T,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConcurrencyReport<T> {
    pub tol: T,
    pub families: Vec<FamilyReport<T>>,
}

impl<T: Scalar> ConcurrencyReport<T> {
    pub fn all_pass(&self) -> bool {
        self.families.iter().all(|f| f.pass)
    }

    pub fn failing(&self) -> impl Iterator<Item = &FamilyReport<T>> {
        self.families.iter().filter(|f| !f.pass)
    }
}

/// Checks that every family's lines meet in a single point within `tol` pixels.
pub fn consistency_check<T: Scalar>(ann: &AnnotationSet<T>, tol: T) -> Result<ConcurrencyReport<T>> {
    if !(tol > T::zero()) {
        return Err(Error::invalid("tolerance", format!("{tol} must be > 0")));
    }
    let mut families = Vec::new();
    for (family, segs) in ann.by_family() {
        if segs.len() < 2 {
            return Err(Error::TooFewSegments {
                family,
                count: segs.len(),
            });
        }
        let report = match estimate_vp(&segs) {
            Ok(vp) => {
                let residuals: Vec<T> = segs.iter().map(|s| s.line_distance(vp.position)).collect();
                let max_residual = residuals.iter().fold(T::zero(), |m, &r| m.max(r));
                FamilyReport {
                    family,
                    vp: FamilyVp::Finite(vp),
                    rms_residual: rms(residuals.into_iter()),
                    max_residual,
                    pass: max_residual <= tol,
                }
            }
            Err(Error::Degenerate) => {
                // Orient every member like the first before averaging.
                let first = segs[0].p1 - segs[0].p0;
                let sum = segs.iter().fold(Vec2::new(T::zero(), T::zero()), |acc, s| {
                    let d = s.p1 - s.p0;
                    if d.dot(first) < T::zero() {
                        acc - d
                    } else {
                        acc + d
                    }
                });
                let direction = sum.normalized().unwrap_or(Vec2::new(T::one(), T::zero()));
                FamilyReport {
                    family,
                    vp: FamilyVp::Infinite(InfiniteVp { direction }),
                    rms_residual: T::zero(),
                    max_residual: T::zero(),
                    pass: true,
                }
            }
            Err(e) => return Err(e),
        };
        families.push(report);
    }
    Ok(ConcurrencyReport { tol, families })
}

#[derive(Serialize, Deserialize)]
struct SegmentDoc {
    p0: [f64; 2],
    p1: [f64; 2],
    family: usize,
}

#[derive(Serialize, Deserialize)]
struct VpDoc {
    xy: [f64; 2],
    family: usize,
}

#[derive(Serialize, Deserialize)]
struct AnnotationDoc {
    schema: i64,
    width: usize,
    height: usize,
    segments: Vec<SegmentDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    vps: Option<Vec<VpDoc>>,
}

pub fn annotations_to_json<T: Scalar>(ann: &AnnotationSet<T>) -> String {
    let xy = |p: Vec2<T>| [p.x.as_f64(), p.y.as_f64()];
    let doc = AnnotationDoc {
        schema: SCHEMA_VERSION,
        width: ann.width,
        height: ann.height,
        segments: ann
            .segments
            .iter()
            .map(|s| SegmentDoc {
                p0: xy(s.p0),
                p1: xy(s.p1),
                family: s.family,
            })
            .collect(),
        vps: ann.vps.as_ref().map(|vps| {
            vps.iter()
                .map(|a| VpDoc {
                    xy: xy(a.vp.position),
                    family: a.family,
                })
                .collect()
        }),
    };
    to_pretty(&doc)
}

pub fn annotations_from_json<T: Scalar>(text: &str) -> Result<AnnotationSet<T>> {
    let doc: AnnotationDoc = parse_versioned(text)?;
    let v = |p: [f64; 2]| Vec2::new(T::lit(p[0]), T::lit(p[1]));
    let segments = doc
        .segments
        .iter()
        .map(|s| Segment2::new(v(s.p0), v(s.p1), s.family))
        .collect::<Result<Vec<_>>>()?;
    let vps = doc.vps.map(|vps| {
        vps.iter()
            .map(|a| AnnotatedVp {
                family: a.family,
                vp: VanishingPoint::new(v(a.xy), VpSource::GroundTruth),
            })
            .collect()
    });
    AnnotationSet::new(doc.width, doc.height, segments, vps)
}

pub fn write_annotations<T: Scalar>(ann: &AnnotationSet<T>, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, annotations_to_json(ann))?;
    Ok(())
}

pub fn read_annotations<T: Scalar>(path: impl AsRef<Path>) -> Result<AnnotationSet<T>> {
    annotations_from_json(&std::fs::read_to_string(path)?)
}
