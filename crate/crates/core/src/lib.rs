//! Differentiable perspective-consistency loss for images.
//!
//! The crate measures how well an image respects linear perspective with
//! respect to a set of vanishing points, and differentiates that measure with
//! respect to every pixel:
//!
//! - [`geometry`]: pinhole projection, vanishing points, ray sweeps.
//! - [`gradients`]: image container and the 3×3 Sobel gradient field.
//! - [`persp_loss`]: edge profiles, the perspective loss and its adjoint.
//! - [`synth`]: synthetic box scenes with known vanishing points.
//! - [`vp_tools`]: vanishing-point estimation, concurrency checks, annotation files.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the `*F64`
//! and `*F32` aliases below name the common instantiations.

// Parameter checks are written `!(x > 0)` on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod geometry;
pub mod gradients;
mod json;
pub mod persp_loss;
pub mod scalar;
pub mod synth;
pub mod vp_tools;

pub use error::{Error, Result};
pub use geometry::{
    angle_fan, clip_ray_to_rect, image_angle_range, line_pixels, perp_vector, project_point,
    vanishing_point_of_direction, AngleRange, Camera, ClipInterval, Direction3, ImageRect,
    InfiniteVp, Point3, RaySample, VanishingPoint, VanishingPointSet, Vec2, VpKind, VpSource,
};
pub use gradients::{sample_gradient, sobel, to_luma, GradientField, Image};
pub use persp_loss::{
    composite_loss, edge_profile, finite_diff_gradient, gradient_check, line_search_lr, optimize_image,
    optimize_image_with, persp_loss, persp_loss_backward, tune_lr, CompositeLossConfig, EdgeProfile, GradCheck,
    LossReport, Optimized, PerspLossConfig, PixelGradient, Reduction, SweepPlan,
};
pub use scalar::Scalar;
pub use synth::{
    distort_render, ground_truth_vps, make_box_scene, render_wireframe, BoxOrientation,
    DistortionSpec, GroundTruthVps, RenderConfig, WireframeScene,
};
pub use vp_tools::{
    consistency_check, estimate_vp, read_annotations, scene_annotations, write_annotations, AnnotatedVp,
    AnnotationSet, ConcurrencyReport, FamilyReport, FamilyVp, Segment2,
};

pub type Vec2F64 = Vec2<f64>;
pub type Vec2F32 = Vec2<f32>;
pub type Point3F64 = Point3<f64>;
pub type Direction3F64 = Direction3<f64>;
pub type CameraF64 = Camera<f64>;
pub type CameraF32 = Camera<f32>;
pub type ImageRectF64 = ImageRect<f64>;
pub type VanishingPointF64 = VanishingPoint<f64>;
pub type VanishingPointF32 = VanishingPoint<f32>;
pub type VanishingPointSetF64 = VanishingPointSet<f64>;
pub type VanishingPointSetF32 = VanishingPointSet<f32>;
pub type ImageF64 = Image<f64>;
pub type ImageF32 = Image<f32>;
pub type GradientFieldF64 = GradientField<f64>;
pub type PerspLossConfigF64 = PerspLossConfig<f64>;
pub type PerspLossConfigF32 = PerspLossConfig<f32>;
pub type LossReportF64 = LossReport<f64>;
pub type PixelGradientF64 = PixelGradient<f64>;
pub type WireframeSceneF64 = WireframeScene<f64>;
pub type AnnotationSetF64 = AnnotationSet<f64>;
