use std::io::Write;
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use persplens::persp_loss::DEFAULT_LR_GRID;
use persplens::synth::write_scene;
use persplens::{
    composite_loss, consistency_check, distort_render, gradient_check, make_box_scene, optimize_image_with,
    read_annotations, render_wireframe, scene_annotations, tune_lr, write_annotations, Camera,
    CompositeLossConfig, DistortionSpec, FamilyVp, Image, PerspLossConfig, Reduction, RenderConfig,
    SweepPlan, VanishingPoint, VanishingPointSet,
};

use crate::args::{CheckArgs, Command, GenArgs, GradcheckArgs, LossArgs, OptimizeArgs, ScoreArgs};
use crate::io::{append_csv, io_error, read_png, write_csv, write_png};
use crate::CliError;

/// Largest image side accepted by `gradcheck` (finite differences cost one
/// pair of forward passes per pixel).
pub const MAX_GRADCHECK_SIZE: usize = 32;
/// Relative error below which `gradcheck` passes.
pub const GRADCHECK_THRESHOLD: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Pass,
    Fail,
}

pub fn dispatch(command: &Command, out: &mut dyn Write) -> Result<Outcome, CliError> {
    match command {
        Command::Score(a) => score(a, out),
        Command::Gradcheck(a) => gradcheck(a, out),
        Command::Gen(a) => gen(a, out),
        Command::Optimize(a) => optimize(a, out),
        Command::Check(a) => check(a, out),
    }
}

macro_rules! say {
    ($out:expr, $($arg:tt)*) => {
        writeln!($out, $($arg)*).map_err(|e| CliError::Io(format!("stdout: {e}")))?
    };
}

/// SHA-256 over a canonical rendering of every loss-affecting parameter.
/// Floats enter by bit pattern, so the value is platform independent.
pub fn fingerprint(cfg: &PerspLossConfig<f64>, lambda: f64) -> String {
    let reduction = match cfg.reduction {
        Reduction::L2OverAngles => "l2",
        Reduction::SumPerAngle => "sum",
    };
    let canonical = format!(
        "persplens-loss/1;n_angles={};step={:016x};reduction={reduction};normalize_length={};lambda={:016x}",
        cfg.n_angles,
        cfg.step.to_bits(),
        cfg.normalize_by_length,
        lambda.to_bits(),
    );
    Sha256::digest(canonical.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn validated(loss: &LossArgs) -> Result<(PerspLossConfig<f64>, CompositeLossConfig<f64>), CliError> {
    let cfg = loss.config();
    cfg.validate()?;
    Ok((cfg, CompositeLossConfig::new(loss.lambda)?))
}

fn load_vps(path: &Path) -> Result<VanishingPointSet<f64>, CliError> {
    let ann = read_annotations::<f64>(path)?;
    let vps = ann.loss_vps()?;
    if vps.is_empty() {
        return Err(CliError::Validation(format!(
            "{}: annotations provide no finite vanishing point",
            path.display()
        )));
    }
    Ok(vps)
}

fn score(a: &ScoreArgs, out: &mut dyn Write) -> Result<Outcome, CliError> {
    let (cfg, composite_cfg) = validated(&a.loss)?;
    let img = read_png(&a.image)?;
    let reference = read_png(&a.reference)?;
    let vps = load_vps(&a.annotations)?;
    let report = persplens::persp_loss(&img, &reference, &vps, &cfg)?;
    let fp = fingerprint(&cfg, a.loss.lambda);

    say!(out, "image {}", a.image.display());
    for (i, (v, l)) in report.per_vp.iter().enumerate() {
        say!(out, "vp {i} ({}, {}) {l}", v.position.x, v.position.y);
    }
    say!(out, "total {}", report.total);
    let composite = a.base_loss.map(|b| composite_loss(b, &report, &composite_cfg));
    if let Some(c) = composite {
        say!(out, "composite {c}");
    }
    say!(out, "fingerprint {fp}");

    if let Some(path) = &a.out {
        let per_vp: Vec<String> = report.per_vp.iter().map(|(_, l)| l.to_string()).collect();
        append_csv(
            path,
            &["image", "reference", "total", "per_vp", "composite", "fingerprint"],
            &[
                a.image.display().to_string(),
                a.reference.display().to_string(),
                report.total.to_string(),
                per_vp.join(";"),
                composite.map(|c| c.to_string()).unwrap_or_default(),
                fp,
            ],
        )?;
    }
    Ok(Outcome::Pass)
}

/// `(x̂, x, vanishing points)` of a gradient check.
pub type GradcheckInstance = (Image<f64>, Image<f64>, VanishingPointSet<f64>);

/// Seeded random image pair and vanishing points for gradient checks.
///
/// Pixels are uniform in `[0, 1)`; VPs are uniform over a square three image
/// sides wide centred on the image, so some fall inside it.
pub fn gradcheck_instance(size: usize, seed: u64, n_vps: usize) -> Result<GradcheckInstance, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut random = || Image::from_fn(size, size, |_, _| rng.gen_range(0.0..1.0));
    let (hat, reference) = (random()?, random()?);
    let s = size as f64;
    let points = (0..n_vps)
        .map(|_| VanishingPoint::at(rng.gen_range(-s..2.0 * s), rng.gen_range(-s..2.0 * s)))
        .collect();
    Ok((hat, reference, VanishingPointSet::new(points)?))
}

fn gradcheck(a: &GradcheckArgs, out: &mut dyn Write) -> Result<Outcome, CliError> {
    if a.size > MAX_GRADCHECK_SIZE {
        return Err(CliError::Validation(format!(
            "size {} too large for finite differences (at most {MAX_GRADCHECK_SIZE})",
            a.size
        )));
    }
    if a.vps == 0 || a.top == 0 {
        return Err(CliError::Validation("--vps and --top must be at least 1".into()));
    }
    let cfg = a.config();
    cfg.validate()?;
    let (hat, reference, vps) = gradcheck_instance(a.size, a.seed, a.vps)?;
    let check = gradient_check(&hat, &reference, &vps, &cfg, a.h, a.top)?;
    say!(
        out,
        "max_rel_error {:e} over {} entries ({} near kinks excluded)",
        check.max_rel_error,
        check.compared,
        check.excluded
    );
    say!(out, "max_rel_error_unfiltered {:e}", check.max_rel_error_unfiltered);
    let pass = check.compared == a.top && check.max_rel_error < GRADCHECK_THRESHOLD;
    if check.compared < a.top {
        say!(out, "only {} smooth entries available (kink cutoff 10·h = {})", check.compared, 10.0 * a.h);
    }
    say!(out, "{} (threshold {GRADCHECK_THRESHOLD:e})", if pass { "PASS" } else { "FAIL" });
    Ok(if pass { Outcome::Pass } else { Outcome::Fail })
}

struct SceneJob {
    index: usize,
    seed: u64,
    boxes: usize,
}

fn gen(a: &GenArgs, out: &mut dyn Write) -> Result<Outcome, CliError> {
    let focal = a.focal.unwrap_or(a.width as f64);
    let camera = Camera::centered(focal, a.width, a.height)?;
    let spec = DistortionSpec {
        bow_amplitude: a.bow,
        vp_jitter: a.jitter,
        seed: 0,
    };
    spec.validate()?;
    if a.boxes == Some(0) {
        return Err(CliError::Validation("--boxes must be at least 1".into()));
    }
    if !(a.vp_range > 0.0) {
        return Err(CliError::Validation("--vp-range must be positive".into()));
    }
    std::fs::create_dir_all(&a.out).map_err(|e| io_error(&a.out, e))?;

    // Per-scene parameters come from one stream, drawn up front in order, so
    // the corpus does not depend on scheduling.
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let jobs: Vec<SceneJob> = (0..a.n)
        .map(|index| SceneJob {
            index,
            seed: rng.next_u64(),
            boxes: a.boxes.unwrap_or_else(|| rng.gen_range(1..=3)),
        })
        .collect();
    let radius = a.vp_range * camera.image_rect().diagonal();
    let render = RenderConfig::default();
    let rows = jobs
        .par_iter()
        .map(|job| {
            let scene = make_box_scene(&camera, job.seed, job.boxes)?;
            let accurate = render_wireframe(&scene, &render)?;
            let distorted = distort_render(&scene, &render, &DistortionSpec { seed: job.seed, ..spec })?;
            let ann = scene_annotations(&scene, radius)?;
            let stem = format!("scene_{:04}", job.index);
            let names = [
                format!("{stem}_accurate.png"),
                format!("{stem}_distorted.png"),
                format!("{stem}_annotations.json"),
                format!("{stem}_scene.json"),
            ];
            write_png(&a.out.join(&names[0]), &accurate)?;
            write_png(&a.out.join(&names[1]), &distorted)?;
            write_annotations(&ann, a.out.join(&names[2]))?;
            write_scene(&scene, a.out.join(&names[3]))?;
            let n_vps = ann.vps.as_ref().map_or(0, Vec::len);
            let mut row = vec![job.index.to_string(), job.seed.to_string(), job.boxes.to_string(), n_vps.to_string()];
            row.extend(names);
            Ok(row)
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let manifest = a.out.join("manifest.csv");
    write_csv(
        &manifest,
        &["id", "scene_seed", "boxes", "n_vps", "accurate", "distorted", "annotations", "scene"],
        &rows,
    )?;
    say!(out, "wrote {} scenes to {}", rows.len(), a.out.display());
    Ok(Outcome::Pass)
}

fn optimize(a: &OptimizeArgs, out: &mut dyn Write) -> Result<Outcome, CliError> {
    let (cfg, _) = validated(&a.loss)?;
    if a.steps == 0 {
        return Err(CliError::Validation("--steps must be at least 1".into()));
    }
    let init = read_png(&a.init)?;
    let reference = read_png(&a.reference)?;
    let vps = load_vps(&a.annotations)?;
    // Fail on size mismatch before any (possibly long) tuning run.
    SweepPlan::new(init.width(), init.height(), &vps, &cfg)?.loss(&init, &reference)?;
    std::fs::create_dir_all(&a.out).map_err(|e| io_error(&a.out, e))?;

    let (lr, tuned) = match a.lr {
        Some(lr) => (lr, false),
        None => (tune_lr(&init, &reference, &vps, &cfg, a.steps, &DEFAULT_LR_GRID)?.0, true),
    };
    let mut snapshot_error = None;
    let run = optimize_image_with(&init, &reference, &vps, &cfg, a.steps, lr, |step, img| {
        if a.snapshots > 0 && step % a.snapshots == 0 && snapshot_error.is_none() {
            let path = a.out.join(format!("snapshot_{step:05}.png"));
            snapshot_error = write_png(&path, img).err();
        }
    })?;
    if let Some(e) = snapshot_error {
        return Err(e);
    }
    write_png(&a.out.join("final.png"), &run.image)?;
    let rows: Vec<Vec<String>> = run
        .trace
        .iter()
        .enumerate()
        .map(|(i, l)| vec![i.to_string(), l.to_string()])
        .collect();
    write_csv(&a.out.join("trace.csv"), &["step", "loss"], &rows)?;

    let (first, last) = (run.trace[0], run.trace[a.steps]);
    say!(out, "lr {lr}{}", if tuned { " (tuned)" } else { "" });
    say!(out, "initial {first}");
    say!(out, "final {last}");
    if first > 0.0 {
        say!(out, "ratio {}", last / first);
    }
    Ok(Outcome::Pass)
}

fn check(a: &CheckArgs, out: &mut dyn Write) -> Result<Outcome, CliError> {
    if !(a.tol >= 0.0) {
        return Err(CliError::Validation(format!("--tol must be non-negative, got {}", a.tol)));
    }
    let ann = read_annotations::<f64>(&a.annotations)?;
    let report = consistency_check(&ann, a.tol)?;
    for f in &report.families {
        let verdict = if f.pass { "PASS" } else { "FAIL" };
        match f.vp {
            FamilyVp::Finite(v) => say!(
                out,
                "family {} vp ({}, {}) rms {} max {} {verdict}",
                f.family,
                v.position.x,
                v.position.y,
                f.rms_residual,
                f.max_residual
            ),
            FamilyVp::Infinite(_) => say!(out, "family {} parallel (infinite vp) {verdict}", f.family),
        }
    }
    if report.all_pass() {
        say!(out, "all {} families concurrent within {} px", report.families.len(), a.tol);
        Ok(Outcome::Pass)
    } else {
        let failing: Vec<String> = report.failing().map(|f| f.family.to_string()).collect();
        say!(out, "failing families: {}", failing.join(", "));
        Ok(Outcome::Fail)
    }
}
