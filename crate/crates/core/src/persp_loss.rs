//! Vanishing-point edge profiles and the perspective loss built on them.
//!
//! For a vanishing point `v` the loss sweeps `n_angles` rays out of `v` across
//! the image. Along ray `i` it integrates the gradient component perpendicular
//! to the ray,
//!
//! ```text
//! D_i(v, x) = ∫ |d_i · G_x(v + k·(cos φ_i, sin φ_i))| dk
//! ```
//!
//! which is large when the ray runs *across* edges and small when it runs
//! along them. Two images agree in perspective when their profiles `D(v, ·)`
//! agree. The loss is the per-VP distance between profiles, averaged over the
//! vanishing-point set.
//!
//! The whole chain (luma → Sobel → bilinear sampling → `|·|` quadrature →
//! reduction) is piecewise smooth in the pixels of the generated image;
//! [`persp_loss_backward`] evaluates its exact adjoint.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{
    angle_fan, clip_ray_to_rect, image_angle_range, perp_vector, samples_on_interval, ImageRect,
    VanishingPoint, VanishingPointSet, Vec2,
};
use crate::gradients::{bilinear_stencil, sobel, sobel_adjoint, to_luma, GradientField, Image, LUMA_WEIGHTS};
use crate::scalar::Scalar;

/// Default number of rays swept per vanishing point.
pub const DEFAULT_N_ANGLES: usize = 64;
/// Default quadrature step along each ray, in pixels.
pub const DEFAULT_STEP: f64 = 0.5;
/// Default weight of the perspective term in the composite loss.
pub const DEFAULT_LAMBDA: f64 = 0.01;
/// Vanishing points farther than this from the origin are rejected.
pub const MAX_VP_COORDINATE: f64 = 1e6;

/// How the per-angle profile differences of one vanishing point are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Reduction {
    /// `‖D(v, x̂) − D(v, x)‖₂` over the angle index.
    #[default]
    L2OverAngles,
    /// `Σ_i |D_i(v, x̂) − D_i(v, x)|`.
    SumPerAngle,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerspLossConfig<T> {
    pub n_angles: usize,
    pub step: T,
    pub reduction: Reduction,
    /// Divide each `D_i` by the clipped ray length `k1 − k0`.
    pub normalize_by_length: bool,
}

impl<T: Scalar> Default for PerspLossConfig<T> {
    fn default() -> Self {
        Self {
            n_angles: DEFAULT_N_ANGLES,
            step: T::lit(DEFAULT_STEP),
            reduction: Reduction::L2OverAngles,
            normalize_by_length: false,
        }
    }
}

impl<T: Scalar> PerspLossConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.n_angles < 2 {
            return Err(Error::BadCount(self.n_angles));
        }
        if !(self.step > T::zero()) || !self.step.is_finite() {
            return Err(Error::BadStep(self.step.as_f64()));
        }
        Ok(())
    }
}

/// Per-angle edge strengths `D_i` for one vanishing point.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeProfile<T> {
    pub values: Vec<T>,
    pub angles: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport<T> {
    pub total: T,
    pub per_vp: Vec<(VanishingPoint<T>, T)>,
    /// `(profile of x̂, profile of x)` per vanishing point.
    pub profiles: Option<Vec<(EdgeProfile<T>, EdgeProfile<T>)>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompositeLossConfig<T> {
    pub lambda: T,
}

impl<T: Scalar> Default for CompositeLossConfig<T> {
    fn default() -> Self {
        Self {
            lambda: T::lit(DEFAULT_LAMBDA),
        }
    }
}

impl<T: Scalar> CompositeLossConfig<T> {
    pub fn new(lambda: T) -> Result<Self> {
        if !(lambda >= T::zero()) || !lambda.is_finite() {
            return Err(Error::invalid("lambda", format!("{lambda} must be finite and ≥ 0")));
        }
        Ok(Self { lambda })
    }
}

/// `∂L/∂pixel` for every scalar of the generated image.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelGradient<T> {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> PixelGradient<T> {
    pub fn zeros_like(img: &Image<T>) -> Self {
        Self {
            width: img.width(),
            height: img.height(),
            channels: img.channels(),
            data: vec![T::zero(); img.data().len()],
        }
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn norm(&self) -> T {
        self.data.iter().map(|&v| v * v).sum::<T>().sqrt()
    }
}

/// Scalar nonlinearity applied to each `d · g` term. The loss uses `|u|`;
/// tests swap in a smooth one.
pub(crate) trait Kernel<T>: Sync {
    fn value(&self, u: T) -> T;
    fn deriv(&self, u: T) -> T;
}

pub(crate) struct AbsKernel;

impl<T: Scalar> Kernel<T> for AbsKernel {
    fn value(&self, u: T) -> T {
        u.abs()
    }

    /// Minimum-norm subgradient: zero at the kink.
    fn deriv(&self, u: T) -> T {
        if u > T::zero() {
            T::one()
        } else if u < T::zero() {
            -T::one()
        } else {
            T::zero()
        }
    }
}

#[derive(Debug, Clone)]
struct Node<T> {
    weight: T,
    stencil: [(usize, T); 4],
}

#[derive(Debug, Clone)]
struct PlannedRay<T> {
    angle: T,
    perp: Vec2<T>,
    /// 1, or `1 / (k1 − k0)` with length normalization.
    scale: T,
    nodes: Vec<Node<T>>,
}

#[derive(Debug, Clone)]
struct VpSweep<T> {
    vp: VanishingPoint<T>,
    rays: Vec<PlannedRay<T>>,
}

/// Ray geometry for a fixed raster size, vanishing-point set and config.
///
/// Building the plan is independent of pixel values, so one plan can score or
/// differentiate any number of images of the same size.
#[derive(Debug, Clone)]
pub struct SweepPlan<T> {
    width: usize,
    height: usize,
    cfg: PerspLossConfig<T>,
    sweeps: Vec<VpSweep<T>>,
}

fn check_rect<T: Scalar>(rect: &ImageRect<T>, width: usize, height: usize) -> Result<()> {
    let full = ImageRect::<T>::for_image(width, height);
    if rect.x0 < full.x0 || rect.y0 < full.y0 || rect.x1 > full.x1 || rect.y1 > full.y1 {
        return Err(Error::invalid(
            "rectangle",
            format!("exceeds the {width}x{height} gradient field"),
        ));
    }
    Ok(())
}

fn check_vp_range<T: Scalar>(v: &VanishingPoint<T>) -> Result<()> {
    if !v.position.is_finite() || v.position.norm() > T::lit(MAX_VP_COORDINATE) {
        return Err(Error::NumericalRange {
            x: v.position.x.as_f64(),
            y: v.position.y.as_f64(),
        });
    }
    Ok(())
}

fn plan_sweep<T: Scalar>(
    v: &VanishingPoint<T>,
    rect: &ImageRect<T>,
    width: usize,
    height: usize,
    cfg: &PerspLossConfig<T>,
) -> Result<VpSweep<T>> {
    let range = image_angle_range(v, rect);
    let angles = angle_fan(&range, cfg.n_angles)?;
    let mut rays = Vec::with_capacity(angles.len());
    for angle in angles {
        let perp = perp_vector(angle);
        let (scale, nodes) = match clip_ray_to_rect(v, angle, rect) {
            None => (T::one(), Vec::new()),
            Some(interval) => {
                let samples = samples_on_interval(v.position, angle, rect, interval, cfg.step);
                let nodes = samples
                    .iter()
                    .map(|s| {
                        Ok(Node {
                            weight: s.weight,
                            stencil: bilinear_stencil(width, height, s.point)?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let scale = if cfg.normalize_by_length {
                    T::one() / interval.length()
                } else {
                    T::one()
                };
                (scale, nodes)
            }
        };
        rays.push(PlannedRay {
            angle,
            perp,
            scale,
            nodes,
        });
    }
    Ok(VpSweep { vp: *v, rays })
}

#[inline]
fn projected<T: Scalar>(field: &GradientField<T>, ray: &PlannedRay<T>, node: &Node<T>) -> T {
    let (gx, gy) = (field.gx(), field.gy());
    let (mut sx, mut sy) = (T::zero(), T::zero());
    for &(i, w) in &node.stencil {
        sx = sx + w * gx[i];
        sy = sy + w * gy[i];
    }
    ray.perp.x * sx + ray.perp.y * sy
}

impl<T: Scalar> VpSweep<T> {
    fn profile_with<K: Kernel<T>>(&self, field: &GradientField<T>, kernel: &K) -> EdgeProfile<T> {
        let values = self
            .rays
            .iter()
            .map(|ray| {
                let sum: T = ray
                    .nodes
                    .iter()
                    .map(|node| node.weight * kernel.value(projected(field, ray, node)))
                    .sum();
                sum * ray.scale
            })
            .collect();
        EdgeProfile {
            values,
            angles: self.rays.iter().map(|r| r.angle).collect(),
        }
    }
}

fn reduce<T: Scalar>(reduction: Reduction, diff: &[T]) -> T {
    match reduction {
        Reduction::L2OverAngles => diff.iter().map(|&z| z * z).sum::<T>().sqrt(),
        Reduction::SumPerAngle => diff.iter().map(|z| z.abs()).sum(),
    }
}

/// `∂ reduce / ∂ diff`, zero at the non-differentiable points.
fn reduce_grad<T: Scalar>(reduction: Reduction, diff: &[T]) -> Vec<T> {
    match reduction {
        Reduction::L2OverAngles => {
            let n = reduce(reduction, diff);
            if n == T::zero() {
                vec![T::zero(); diff.len()]
            } else {
                diff.iter().map(|&z| z / n).collect()
            }
        }
        Reduction::SumPerAngle => diff.iter().map(|&z| AbsKernel.deriv(z)).collect(),
    }
}

fn luma_pair<T: Scalar>(img_hat: &Image<T>, img_ref: &Image<T>) -> Result<(Image<T>, Image<T>)> {
    if !img_hat.same_size(img_ref) {
        return Err(Error::DimensionMismatch(
            img_hat.width(),
            img_hat.height(),
            img_ref.width(),
            img_ref.height(),
        ));
    }
    Ok((to_luma(img_hat)?, to_luma(img_ref)?))
}

impl<T: Scalar> SweepPlan<T> {
    pub fn new(width: usize, height: usize, vps: &VanishingPointSet<T>, cfg: &PerspLossConfig<T>) -> Result<Self> {
        cfg.validate()?;
        if vps.is_empty() {
            return Err(Error::EmptyVpSet);
        }
        if width < 3 || height < 3 {
            return Err(Error::TooSmall { width, height });
        }
        for v in vps.iter() {
            check_vp_range(v)?;
        }
        let rect = ImageRect::for_image(width, height);
        let sweeps = vps
            .points()
            .par_iter()
            .map(|v| plan_sweep(v, &rect, width, height, cfg))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            width,
            height,
            cfg: *cfg,
            sweeps,
        })
    }

    pub fn config(&self) -> &PerspLossConfig<T> {
        &self.cfg
    }

    fn check_field(&self, field: &GradientField<T>) -> Result<()> {
        if field.width() != self.width || field.height() != self.height {
            return Err(Error::DimensionMismatch(
                field.width(),
                field.height(),
                self.width,
                self.height,
            ));
        }
        Ok(())
    }

    /// Edge profiles of one gradient field, one per vanishing point.
    pub fn profiles(&self, field: &GradientField<T>) -> Result<Vec<EdgeProfile<T>>> {
        self.check_field(field)?;
        Ok(self.profiles_with(field, &AbsKernel))
    }

    fn profiles_with<K: Kernel<T>>(&self, field: &GradientField<T>, kernel: &K) -> Vec<EdgeProfile<T>> {
        self.sweeps
            .par_iter()
            .map(|s| s.profile_with(field, kernel))
            .collect()
    }

    fn report_from_profiles(&self, hat: Vec<EdgeProfile<T>>, reference: Vec<EdgeProfile<T>>) -> LossReport<T> {
        let per_vp: Vec<(VanishingPoint<T>, T)> = self
            .sweeps
            .iter()
            .zip(hat.iter().zip(&reference))
            .map(|(sweep, (a, b))| {
                let diff: Vec<T> = a.values.iter().zip(&b.values).map(|(&p, &q)| p - q).collect();
                (sweep.vp, reduce(self.cfg.reduction, &diff))
            })
            .collect();
        // Summed in VP order regardless of how the profiles were scheduled.
        let total = per_vp.iter().map(|(_, l)| *l).sum::<T>() / T::from_usize_lossy(per_vp.len());
        LossReport {
            total,
            per_vp,
            profiles: Some(hat.into_iter().zip(reference).collect()),
        }
    }

    /// Loss between two gradient fields.
    pub fn loss_fields(&self, field_hat: &GradientField<T>, field_ref: &GradientField<T>) -> Result<LossReport<T>> {
        self.check_field(field_hat)?;
        self.check_field(field_ref)?;
        Ok(self.report_from_profiles(
            self.profiles_with(field_hat, &AbsKernel),
            self.profiles_with(field_ref, &AbsKernel),
        ))
    }

    pub fn loss(&self, img_hat: &Image<T>, img_ref: &Image<T>) -> Result<LossReport<T>> {
        let (hat, reference) = luma_pair(img_hat, img_ref)?;
        self.loss_fields(&sobel(&hat)?, &sobel(&reference)?)
    }

    /// Loss value and its gradient with respect to `img_hat`.
    pub fn loss_and_gradient(&self, img_hat: &Image<T>, img_ref: &Image<T>) -> Result<(LossReport<T>, PixelGradient<T>)> {
        self.loss_and_gradient_with(img_hat, img_ref, &AbsKernel)
    }

    pub(crate) fn loss_and_gradient_with<K: Kernel<T>>(
        &self,
        img_hat: &Image<T>,
        img_ref: &Image<T>,
        kernel: &K,
    ) -> Result<(LossReport<T>, PixelGradient<T>)> {
        let (hat, reference) = luma_pair(img_hat, img_ref)?;
        let field_hat = sobel(&hat)?;
        let field_ref = sobel(&reference)?;
        self.check_field(&field_hat)?;
        let prof_hat = self.profiles_with(&field_hat, kernel);
        let prof_ref = self.profiles_with(&field_ref, kernel);

        let n = self.width * self.height;
        let inv_vps = T::one() / T::from_usize_lossy(self.sweeps.len());
        let partials: Vec<(Vec<T>, Vec<T>)> = self
            .sweeps
            .par_iter()
            .zip(prof_hat.par_iter().zip(prof_ref.par_iter()))
            .map(|(sweep, (a, b))| {
                let diff: Vec<T> = a.values.iter().zip(&b.values).map(|(&p, &q)| p - q).collect();
                let coeffs = reduce_grad(self.cfg.reduction, &diff);
                let mut agx = vec![T::zero(); n];
                let mut agy = vec![T::zero(); n];
                for (ray, &c) in sweep.rays.iter().zip(&coeffs) {
                    if c == T::zero() {
                        continue;
                    }
                    let c = c * inv_vps * ray.scale;
                    for node in &ray.nodes {
                        let u = projected(&field_hat, ray, node);
                        let a = c * node.weight * kernel.deriv(u);
                        if a == T::zero() {
                            continue;
                        }
                        let (ax, ay) = (a * ray.perp.x, a * ray.perp.y);
                        for &(i, w) in &node.stencil {
                            agx[i] = agx[i] + ax * w;
                            agy[i] = agy[i] + ay * w;
                        }
                    }
                }
                (agx, agy)
            })
            .collect();

        let mut agx = vec![T::zero(); n];
        let mut agy = vec![T::zero(); n];
        for (px, py) in &partials {
            for i in 0..n {
                agx[i] = agx[i] + px[i];
                agy[i] = agy[i] + py[i];
            }
        }
        let luma_grad = sobel_adjoint(self.width, self.height, &agx, &agy);
        let data = if img_hat.channels() == 3 {
            let weights = LUMA_WEIGHTS.map(T::lit);
            luma_grad
                .iter()
                .flat_map(|&g| weights.map(|w| w * g))
                .collect()
        } else {
            luma_grad
        };
        let report = self.report_from_profiles(prof_hat, prof_ref);
        Ok((
            report,
            PixelGradient {
                width: self.width,
                height: self.height,
                channels: img_hat.channels(),
                data,
            },
        ))
    }

    /// For every pixel of the luma plane, the smallest `|d · g|` over the
    /// quadrature terms of `img_hat` that the pixel feeds into (∞ if none).
    ///
    /// The loss is smooth in a pixel whose margin exceeds the largest change a
    /// perturbation can make to any such term.
    pub fn kink_margin(&self, img_hat: &Image<T>) -> Result<Vec<T>> {
        let field = sobel(&to_luma(img_hat)?)?;
        self.check_field(&field)?;
        let (w, h) = (self.width, self.height);
        let mut node_margin = vec![T::infinity(); w * h];
        for sweep in &self.sweeps {
            for ray in &sweep.rays {
                for node in &ray.nodes {
                    let u = projected(&field, ray, node).abs();
                    for &(i, _) in &node.stencil {
                        node_margin[i] = node_margin[i].min(u);
                    }
                }
            }
        }
        // Dilate by the Sobel stencil (replicate padding keeps it inside the grid).
        let mut margin = vec![T::infinity(); w * h];
        for y in 0..h {
            for x in 0..w {
                let m = node_margin[y * w + x];
                if m.is_infinite() {
                    continue;
                }
                for yy in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                    for xx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                        let j = yy * w + xx;
                        margin[j] = margin[j].min(m);
                    }
                }
            }
        }
        Ok(margin)
    }
}

/// Edge profile `D(v, ·)` of a gradient field.
pub fn edge_profile<T: Scalar>(
    field: &GradientField<T>,
    v: &VanishingPoint<T>,
    rect: &ImageRect<T>,
    cfg: &PerspLossConfig<T>,
) -> Result<EdgeProfile<T>> {
    cfg.validate()?;
    check_rect(rect, field.width(), field.height())?;
    let sweep = plan_sweep(v, rect, field.width(), field.height(), cfg)?;
    Ok(sweep.profile_with(field, &AbsKernel))
}

/// Perspective loss of `img_hat` against `img_ref` over `vps`.
pub fn persp_loss<T: Scalar>(
    img_hat: &Image<T>,
    img_ref: &Image<T>,
    vps: &VanishingPointSet<T>,
    cfg: &PerspLossConfig<T>,
) -> Result<LossReport<T>> {
    luma_pair(img_hat, img_ref)?;
    SweepPlan::new(img_hat.width(), img_hat.height(), vps, cfg)?.loss(img_hat, img_ref)
}

/// Exact gradient of [`persp_loss`] with respect to every scalar of `img_hat`.
pub fn persp_loss_backward<T: Scalar>(
    img_hat: &Image<T>,
    img_ref: &Image<T>,
    vps: &VanishingPointSet<T>,
    cfg: &PerspLossConfig<T>,
) -> Result<PixelGradient<T>> {
    luma_pair(img_hat, img_ref)?;
    let plan = SweepPlan::new(img_hat.width(), img_hat.height(), vps, cfg)?;
    Ok(plan.loss_and_gradient(img_hat, img_ref)?.1)
}

/// Central-difference gradient; one pair of forward evaluations per scalar.
pub fn finite_diff_gradient<T: Scalar>(
    img_hat: &Image<T>,
    img_ref: &Image<T>,
    vps: &VanishingPointSet<T>,
    cfg: &PerspLossConfig<T>,
    h: T,
) -> Result<PixelGradient<T>> {
    if !(h > T::zero()) || !h.is_finite() {
        return Err(Error::invalid("finite difference step", format!("{h} must be > 0")));
    }
    luma_pair(img_hat, img_ref)?;
    let plan = SweepPlan::new(img_hat.width(), img_hat.height(), vps, cfg)?;
    let field_ref = sobel(&to_luma(img_ref)?)?;
    let eval = |img: &Image<T>| -> Result<T> {
        let field = sobel(&to_luma(img)?)?;
        Ok(plan.loss_fields(&field, &field_ref)?.total)
    };
    let two_h = h + h;
    let data = (0..img_hat.data().len())
        .into_par_iter()
        .map(|i| {
            let mut plus = img_hat.clone();
            plus.data_mut()[i] = plus.data()[i] + h;
            let mut minus = img_hat.clone();
            minus.data_mut()[i] = minus.data()[i] - h;
            Ok((eval(&plus)? - eval(&minus)?) / two_h)
        })
        .collect::<Result<Vec<T>>>()?;
    Ok(PixelGradient {
        width: img_hat.width(),
        height: img_hat.height(),
        channels: img_hat.channels(),
        data,
    })
}

/// Pixels whose [`SweepPlan::kink_margin`] is below this multiple of the
/// finite-difference step are skipped by [`gradient_check`]: a `±h` probe
/// there can cross a kink of `|·|`.
pub const KINK_EXCLUSION_FACTOR: f64 = 10.0;

/// Outcome of [`gradient_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck<T> {
    /// Largest `|analytic − fd| / |fd|` over the compared scalars.
    pub max_rel_error: T,
    /// Index (into the image data) where `max_rel_error` occurs.
    pub worst_index: Option<usize>,
    /// The same statistic over the top entries without kink exclusion.
    pub max_rel_error_unfiltered: T,
    pub compared: usize,
    /// Scalars skipped for sitting next to a kink.
    pub excluded: usize,
}

/// Compares [`persp_loss_backward`] with [`finite_diff_gradient`] at the
/// `top_k` largest-magnitude analytic entries away from kinks.
pub fn gradient_check<T: Scalar>(
    img_hat: &Image<T>,
    img_ref: &Image<T>,
    vps: &VanishingPointSet<T>,
    cfg: &PerspLossConfig<T>,
    h: T,
    top_k: usize,
) -> Result<GradCheck<T>> {
    let fd = finite_diff_gradient(img_hat, img_ref, vps, cfg, h)?;
    let plan = SweepPlan::new(img_hat.width(), img_hat.height(), vps, cfg)?;
    let analytic = plan.loss_and_gradient(img_hat, img_ref)?.1;
    let margin = plan.kink_margin(img_hat)?;
    let c = img_hat.channels();
    let cutoff = T::lit(KINK_EXCLUSION_FACTOR) * h;
    let mut order: Vec<usize> = (0..analytic.data.len()).collect();
    order.sort_by(|&a, &b| {
        let (ga, gb) = (analytic.data[a].abs(), analytic.data[b].abs());
        gb.partial_cmp(&ga).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    let worst_of = |idx: &[usize]| {
        let tiny = T::lit(1e-12);
        let mut worst = (T::zero(), None);
        for &i in idx {
            let rel = (analytic.data[i] - fd.data[i]).abs() / fd.data[i].abs().max(tiny);
            if worst.1.is_none() || rel > worst.0 {
                worst = (rel, Some(i));
            }
        }
        worst
    };
    let unfiltered = worst_of(&order[..top_k.min(order.len())]);
    let (mut smooth, skipped): (Vec<usize>, Vec<usize>) = order.into_iter().partition(|&i| margin[i / c] > cutoff);
    smooth.truncate(top_k);
    let (max_rel_error, worst_index) = worst_of(&smooth);
    Ok(GradCheck {
        max_rel_error,
        worst_index,
        max_rel_error_unfiltered: unfiltered.0,
        compared: smooth.len(),
        excluded: skipped.len(),
    })
}

/// `base_loss + λ · L_persp`.
pub fn composite_loss<T: Scalar>(base_loss: T, persp: &LossReport<T>, cfg: &CompositeLossConfig<T>) -> T {
    base_loss + cfg.lambda * persp.total
}

/// Result of [`optimize_image`].
#[derive(Debug, Clone)]
pub struct Optimized<T> {
    pub image: Image<T>,
    /// Loss before the first step followed by the loss after every step.
    pub trace: Vec<T>,
}

/// Plain gradient descent on the pixels of `init`, clamped to `[0, 1]` after
/// every step.
pub fn optimize_image<T: Scalar>(
    init: &Image<T>,
    img_ref: &Image<T>,
    vps: &VanishingPointSet<T>,
    cfg: &PerspLossConfig<T>,
    steps: usize,
    lr: T,
) -> Result<Optimized<T>> {
    optimize_image_with(init, img_ref, vps, cfg, steps, lr, |_, _| {})
}

/// [`optimize_image`] with a callback invoked as `(step, image)` after each step.
pub fn optimize_image_with<T: Scalar>(
    init: &Image<T>,
    img_ref: &Image<T>,
    vps: &VanishingPointSet<T>,
    cfg: &PerspLossConfig<T>,
    steps: usize,
    lr: T,
    mut on_step: impl FnMut(usize, &Image<T>),
) -> Result<Optimized<T>> {
    if steps < 1 {
        return Err(Error::invalid("steps", "at least one step required"));
    }
    if !(lr >= T::zero()) || !lr.is_finite() {
        return Err(Error::invalid("learning rate", format!("{lr} must be finite and ≥ 0")));
    }
    luma_pair(init, img_ref)?;
    let plan = SweepPlan::new(init.width(), init.height(), vps, cfg)?;
    let mut image = init.clone();
    let mut trace = Vec::with_capacity(steps + 1);
    // Each iteration's forward pass doubles as the trace entry of the previous step.
    for step in 1..=steps {
        let (report, grad) = plan.loss_and_gradient(&image, img_ref)?;
        trace.push(report.total);
        if lr > T::zero() {
            for (p, g) in image.data_mut().iter_mut().zip(&grad.data) {
                *p = *p - lr * *g;
            }
            image.clamp_unit();
        }
        on_step(step, &image);
    }
    trace.push(plan.loss(&image, img_ref)?.total);
    Ok(Optimized { image, trace })
}

/// Picks the learning rate from `candidates` whose single gradient step from
/// `init` yields the lowest loss. Returns `None` when no candidate improves on
/// the starting loss.
pub fn line_search_lr<T: Scalar>(
    init: &Image<T>,
    img_ref: &Image<T>,
    vps: &VanishingPointSet<T>,
    cfg: &PerspLossConfig<T>,
    candidates: &[T],
) -> Result<Option<T>> {
    luma_pair(init, img_ref)?;
    let plan = SweepPlan::new(init.width(), init.height(), vps, cfg)?;
    let (report, grad) = plan.loss_and_gradient(init, img_ref)?;
    let mut best: Option<(T, T)> = None;
    for &lr in candidates {
        let mut trial = init.clone();
        for (p, g) in trial.data_mut().iter_mut().zip(&grad.data) {
            *p = *p - lr * *g;
        }
        trial.clamp_unit();
        let loss = plan.loss(&trial, img_ref)?.total;
        if loss < report.total && best.is_none_or(|(_, b)| loss < b) {
            best = Some((lr, loss));
        }
    }
    Ok(best.map(|(lr, _)| lr))
}

/// Learning-rate grid searched by [`tune_lr`] when no explicit rate is given.
pub const DEFAULT_LR_GRID: [f64; 6] = [3e-3, 4.5e-3, 6e-3, 8e-3, 1.1e-2, 1.5e-2];

/// Runs the full `steps`-step descent from `init` for every candidate rate and
/// keeps the one with the lowest final loss (ties go to the earlier candidate).
///
/// The perspective loss is a norm, so its gradient does not shrink near the
/// optimum and fixed-step descent settles at a floor proportional to the rate.
/// A one-step search ([`line_search_lr`]) therefore prefers rates that
/// overshoot later; judging each candidate over the whole horizon does not.
pub fn tune_lr<T: Scalar>(
    init: &Image<T>,
    img_ref: &Image<T>,
    vps: &VanishingPointSet<T>,
    cfg: &PerspLossConfig<T>,
    steps: usize,
    candidates: &[T],
) -> Result<(T, Optimized<T>)> {
    let mut best: Option<(T, Optimized<T>)> = None;
    for &lr in candidates {
        let run = optimize_image(init, img_ref, vps, cfg, steps, lr)?;
        let better = match &best {
            None => true,
            Some((_, b)) => run.trace[steps] < b.trace[steps],
        };
        if better {
            best = Some((lr, run));
        }
    }
    best.ok_or_else(|| Error::invalid("learning rates", "no candidates given"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{ImageRect, VpSource};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Image<f64> {
        Image::from_fn(w, h, |_, _| rng.gen_range(0.0..1.0)).unwrap()
    }

    fn vps(points: &[(f64, f64)]) -> VanishingPointSet<f64> {
        VanishingPointSet::new(points.iter().map(|&(x, y)| VanishingPoint::at(x, y)).collect()).unwrap()
    }

    /// Identity kernel: every profile is linear in the pixels.
    struct Linear;
    impl Kernel<f64> for Linear {
        fn value(&self, u: f64) -> f64 {
            u
        }
        fn deriv(&self, _: f64) -> f64 {
            1.0
        }
    }

    #[test]
    fn constant_field_gives_zero_profile() {
        let field = GradientField::constant(10, 10, Vec2::new(0.0, 0.0));
        let rect = ImageRect::for_image(10, 10);
        let p = edge_profile(&field, &VanishingPoint::at(-20.0, 3.0), &rect, &PerspLossConfig::default()).unwrap();
        assert_eq!(p.values.len(), DEFAULT_N_ANGLES);
        assert!(p.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_parallel_to_ray_contributes_nothing() {
        // Interior VP with a full-circle fan: ray 0 has φ = 0 and d = (0, 1).
        let field = GradientField::constant(10, 10, Vec2::new(1.0, 0.0));
        let rect = ImageRect::for_image(10, 10);
        let cfg = PerspLossConfig { n_angles: 8, ..Default::default() };
        let p = edge_profile(&field, &VanishingPoint::at(4.0, 4.0), &rect, &cfg).unwrap();
        assert_eq!(p.angles[0], 0.0);
        assert_eq!(p.values[0], 0.0);
        // The vertical ray (φ = π/2) crosses the gradient head-on: 5 px long.
        assert_abs_diff_eq!(p.values[2], 5.0, epsilon = 1e-12);
    }

    #[test]
    fn length_normalization_divides_by_clip_length() {
        let field = GradientField::constant(10, 10, Vec2::new(1.0, 0.0));
        let rect = ImageRect::for_image(10, 10);
        let cfg = PerspLossConfig { n_angles: 8, normalize_by_length: true, ..Default::default() };
        let p = edge_profile(&field, &VanishingPoint::at(4.0, 4.0), &rect, &cfg).unwrap();
        assert_abs_diff_eq!(p.values[2], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn identical_and_constant_images_have_zero_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = random_image(&mut rng, 12, 10);
        let set = vps(&[(-30.0, 4.0), (6.0, 5.0)]);
        for reduction in [Reduction::L2OverAngles, Reduction::SumPerAngle] {
            let cfg = PerspLossConfig { reduction, ..Default::default() };
            assert_eq!(persp_loss(&img, &img, &set, &cfg).unwrap().total, 0.0);
            let a = Image::filled(12, 10, 1, 0.2).unwrap();
            let b = Image::filled(12, 10, 1, 0.9).unwrap();
            assert_eq!(persp_loss(&a, &b, &set, &cfg).unwrap().total, 0.0);
        }
    }

    #[test]
    fn total_is_mean_of_per_vp() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_image(&mut rng, 12, 12);
        let b = random_image(&mut rng, 12, 12);
        let set = vps(&[(-30.0, 4.0), (6.0, 5.0), (40.0, 50.0)]);
        let r = persp_loss(&a, &b, &set, &PerspLossConfig::default()).unwrap();
        let mean = r.per_vp.iter().map(|(_, l)| l).sum::<f64>() / 3.0;
        assert_abs_diff_eq!(r.total, mean, epsilon = 1e-12);
        assert_eq!(r.profiles.as_ref().unwrap().len(), 3);
    }

    #[test]
    fn sum_per_angle_reduction() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_image(&mut rng, 12, 12);
        let b = random_image(&mut rng, 12, 12);
        let set = vps(&[(-30.0, 4.0)]);
        let cfg = PerspLossConfig { reduction: Reduction::SumPerAngle, ..Default::default() };
        let r = persp_loss(&a, &b, &set, &cfg).unwrap();
        let (pa, pb) = &r.profiles.as_ref().unwrap()[0];
        let expected: f64 = pa.values.iter().zip(&pb.values).map(|(x, y)| (x - y).abs()).sum();
        assert_abs_diff_eq!(r.total, expected, epsilon = 1e-12);
    }

    #[test]
    fn loss_errors() {
        let a = Image::filled(12, 12, 1, 0.0).unwrap();
        let b = Image::filled(12, 10, 1, 0.0).unwrap();
        let cfg = PerspLossConfig::default();
        assert!(matches!(
            persp_loss(&a, &b, &vps(&[(1.0, 1.0)]), &cfg),
            Err(Error::DimensionMismatch(..))
        ));
        assert!(matches!(
            persp_loss(&a, &a, &VanishingPointSet::new(vec![]).unwrap(), &cfg),
            Err(Error::EmptyVpSet)
        ));
        assert!(matches!(
            persp_loss(&a, &a, &vps(&[(2e6, 1.0)]), &cfg),
            Err(Error::NumericalRange { .. })
        ));
        let bad = PerspLossConfig { n_angles: 1, ..cfg };
        assert!(matches!(persp_loss(&a, &a, &vps(&[(1.0, 1.0)]), &bad), Err(Error::BadCount(1))));
    }

    #[test]
    fn backward_zero_at_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let img = random_image(&mut rng, 12, 12);
        let g = persp_loss_backward(&img, &img, &vps(&[(-20.0, 3.0)]), &PerspLossConfig::default()).unwrap();
        assert!(g.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_support_stays_near_swept_rays() {
        // Constant x̂: every |d·g| term sits on its kink, so no gradient flows
        // anywhere, in particular not far from the rays.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let hat = Image::filled(16, 16, 1, 0.5).unwrap();
        let reference = random_image(&mut rng, 16, 16);
        let cfg = PerspLossConfig { n_angles: 4, ..Default::default() };
        let g = persp_loss_backward(&hat, &reference, &vps(&[(-40.0, 7.5)]), &cfg).unwrap();
        assert!(g.data.iter().all(|&v| v == 0.0));

        // Structured x̂ with a narrow fan: pixels > 2 px from every ray get nothing.
        let hat = random_image(&mut rng, 16, 16);
        let set = vps(&[(-400.0, 7.5)]);
        let g = persp_loss_backward(&hat, &reference, &set, &cfg).unwrap();
        let range = image_angle_range(&set.points()[0], &ImageRect::for_image(16, 16));
        let fan = angle_fan(&range, 4).unwrap();
        let v = set.points()[0].position;
        for y in 0..16 {
            for x in 0..16 {
                let p = Vec2::new(x as f64, y as f64) - v;
                // The bilinear and Sobel footprints each reach one pixel per axis,
                // i.e. 2·(|n_x| + |n_y|) along the ray normal n.
                let outside = fan.iter().all(|&phi| {
                    let n = perp_vector(phi);
                    n.dot(p).abs() > 2.0 * (n.x.abs() + n.y.abs()) + 1e-9
                });
                if outside {
                    assert_eq!(g.data[y * 16 + x], 0.0, "pixel ({x}, {y})");
                }
            }
        }
        assert!(g.max_abs() > 0.0);
    }

    #[test]
    fn linear_kernel_adjoint_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let hat = random_image(&mut rng, 10, 9);
        let reference = random_image(&mut rng, 10, 9);
        let set = vps(&[(-25.0, 2.0), (4.0, 4.0)]);
        let cfg = PerspLossConfig { n_angles: 6, reduction: Reduction::SumPerAngle, ..Default::default() };
        let plan = SweepPlan::new(10, 9, &set, &cfg).unwrap();
        let (_, analytic) = plan.loss_and_gradient_with(&hat, &reference, &Linear).unwrap();
        let total = |img: &Image<f64>| plan.loss_and_gradient_with(img, &reference, &Linear).unwrap().0.total;
        let h = 1e-3;
        for i in 0..hat.data().len() {
            let mut plus = hat.clone();
            plus.data_mut()[i] += h;
            let mut minus = hat.clone();
            minus.data_mut()[i] -= h;
            let fd = (total(&plus) - total(&minus)) / (2.0 * h);
            assert_abs_diff_eq!(fd, analytic.data[i], epsilon = 1e-6);
        }
    }

    #[test]
    fn finite_diff_of_zero_pair_is_zero() {
        let z = Image::filled(8, 8, 1, 0.0).unwrap();
        let g = finite_diff_gradient(&z, &z, &vps(&[(-10.0, 3.0)]), &PerspLossConfig::default(), 1e-3).unwrap();
        assert!(g.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let hat = random_image(&mut rng, 12, 12);
        let reference = random_image(&mut rng, 12, 12);
        let set = vps(&[(-15.0, 20.0)]);
        let cfg = PerspLossConfig { n_angles: 8, ..Default::default() };
        let h = 1e-3;
        let analytic = persp_loss_backward(&hat, &reference, &set, &cfg).unwrap();
        let fd = finite_diff_gradient(&hat, &reference, &set, &cfg, h).unwrap();
        let margin = SweepPlan::new(12, 12, &set, &cfg).unwrap().kink_margin(&hat).unwrap();
        let mut idx: Vec<usize> = (0..144).filter(|&i| margin[i] > 10.0 * h).collect();
        idx.sort_by(|&a, &b| analytic.data[b].abs().partial_cmp(&analytic.data[a].abs()).unwrap());
        assert!(idx.len() >= 50);
        for &i in &idx[..50] {
            let rel = (analytic.data[i] - fd.data[i]).abs() / fd.data[i].abs().max(1e-12);
            assert!(rel < 1e-3, "pixel {i}: analytic {} fd {}", analytic.data[i], fd.data[i]);
        }
    }

    #[test]
    fn gradient_check_passes_on_random_pair() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let hat = random_image(&mut rng, 12, 12);
        let reference = random_image(&mut rng, 12, 12);
        let set = vps(&[(-15.0, 20.0), (30.0, -12.0)]);
        let cfg = PerspLossConfig { n_angles: 8, ..Default::default() };
        let check = gradient_check(&hat, &reference, &set, &cfg, 1e-3, 50).unwrap();
        assert_eq!(check.compared, 50);
        assert!(check.compared + check.excluded <= 144);
        assert!(check.max_rel_error < 1e-3, "{check:?}");
        // Coarse steps are dominated by truncation and kink crossings.
        let coarse = gradient_check(&hat, &reference, &set, &cfg, 1e-1, 50).unwrap();
        assert!(coarse.max_rel_error_unfiltered > check.max_rel_error_unfiltered);
    }

    #[test]
    fn rgb_gradient_is_luma_weighted() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let hat = Image::new(10, 10, 3, (0..300).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
        let reference = random_image(&mut rng, 10, 10);
        let set = vps(&[(-15.0, 4.0)]);
        let cfg = PerspLossConfig { n_angles: 6, ..Default::default() };
        let g = persp_loss_backward(&hat, &reference, &set, &cfg).unwrap();
        assert_eq!(g.channels, 3);
        let luma = to_luma(&hat).unwrap();
        let gl = persp_loss_backward(&luma, &reference, &set, &cfg).unwrap();
        for (i, gli) in gl.data.iter().enumerate() {
            for (c, wc) in LUMA_WEIGHTS.iter().enumerate() {
                assert_abs_diff_eq!(g.data[3 * i + c], wc * gli, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn composite_examples() {
        let report = LossReport::<f64> { total: 2.0, per_vp: vec![], profiles: None };
        let cfg = CompositeLossConfig::default();
        assert_eq!(cfg.lambda, 0.01);
        assert_abs_diff_eq!(composite_loss(1.0, &report, &cfg), 1.02, epsilon = 1e-15);
        assert_eq!(composite_loss(1.0, &report, &CompositeLossConfig::new(0.0).unwrap()), 1.0);
        let zero = LossReport::<f64> { total: 0.0, ..report };
        assert_eq!(composite_loss(1.0, &zero, &cfg), 1.0);
        assert!(CompositeLossConfig::new(-1.0).is_err());
    }

    #[test]
    fn optimizer_fixed_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let reference = random_image(&mut rng, 12, 12);
        let set = vps(&[(-15.0, 4.0)]);
        let cfg = PerspLossConfig { n_angles: 8, ..Default::default() };
        let out = optimize_image(&reference, &reference, &set, &cfg, 5, 0.1).unwrap();
        assert_eq!(out.trace, vec![0.0; 6]);

        let init = random_image(&mut rng, 12, 12);
        let out = optimize_image(&init, &reference, &set, &cfg, 3, 0.0).unwrap();
        assert_eq!(out.image, init);
        assert_eq!(out.trace.len(), 4);
        assert!(out.trace.windows(2).all(|w| w[0] == w[1]));
        assert!(optimize_image(&init, &reference, &set, &cfg, 0, 0.1).is_err());
    }

    #[test]
    fn optimizer_reduces_loss_on_random_pair() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let reference = random_image(&mut rng, 16, 16);
        let init = random_image(&mut rng, 16, 16);
        let set = vps(&[(-30.0, 8.0)]);
        let cfg = PerspLossConfig { n_angles: 16, ..Default::default() };
        let lr = line_search_lr(&init, &reference, &set, &cfg, &[1e-3, 3e-3, 1e-2, 3e-2, 1e-1])
            .unwrap()
            .unwrap();
        let out = optimize_image(&init, &reference, &set, &cfg, 50, lr).unwrap();
        assert!(out.trace.last().unwrap() < &out.trace[0]);
        assert!(out.image.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn tune_lr_keeps_the_best_final_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let reference = random_image(&mut rng, 12, 12);
        let init = random_image(&mut rng, 12, 12);
        let set = vps(&[(-20.0, 6.0)]);
        let cfg = PerspLossConfig { n_angles: 8, ..Default::default() };
        let grid = [1e-3, 1e-2, 1e-1];
        let (lr, run) = tune_lr(&init, &reference, &set, &cfg, 20, &grid).unwrap();
        for &c in &grid {
            let other = optimize_image(&init, &reference, &set, &cfg, 20, c).unwrap();
            assert!(run.trace[20] <= other.trace[20]);
            if c == lr {
                assert_eq!(other.trace, run.trace);
            }
        }
        assert!(tune_lr(&init, &reference, &set, &cfg, 20, &[]).is_err());
    }

    #[test]
    fn single_precision_loss() {
        let a = Image::<f32>::from_fn(12, 12, |x, y| ((x * 7 + y * 3) % 5) as f32 / 5.0).unwrap();
        let b = Image::<f32>::from_fn(12, 12, |x, _| if x > 5 { 1.0 } else { 0.0 }).unwrap();
        let set = VanishingPointSet::new(vec![VanishingPoint::new(Vec2::new(-20.0f32, 5.0), VpSource::GroundTruth)]).unwrap();
        let cfg = PerspLossConfig::<f32>::default();
        let r32 = persp_loss(&a, &b, &set, &cfg).unwrap();
        let a64 = Image::<f64>::new(12, 12, 1, a.data().iter().map(|&v| v as f64).collect()).unwrap();
        let b64 = Image::<f64>::new(12, 12, 1, b.data().iter().map(|&v| v as f64).collect()).unwrap();
        let r64 = persp_loss(&a64, &b64, &vps(&[(-20.0, 5.0)]), &PerspLossConfig::default()).unwrap();
        assert!((r32.total as f64 - r64.total).abs() / r64.total < 1e-4);
    }
}
