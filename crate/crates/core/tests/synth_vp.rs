use persplens::synth::project_segments;
use persplens::vp_tools::{annotations_from_json, annotations_to_json};
use persplens::{
    consistency_check, distort_render, estimate_vp, ground_truth_vps, make_box_scene, persp_loss,
    render_wireframe, scene_annotations, AnnotatedVp, AnnotationSet, Camera, DistortionSpec,
    PerspLossConfig, RenderConfig, Segment2, VanishingPoint, Vec2,
};
use proptest::prelude::*;

fn camera(size: usize) -> Camera<f64> {
    Camera::centered(size as f64, size, size).unwrap()
}

/// Intersection of the infinite lines through two segments.
fn line_intersection(a: &Segment2<f64>, b: &Segment2<f64>) -> Option<Vec2<f64>> {
    let (da, db) = (a.p1 - a.p0, b.p1 - b.p0);
    let denom = da.cross(db);
    if denom.abs() < 1e-12 * da.norm() * db.norm() {
        return None;
    }
    let t = (b.p0 - a.p0).cross(db) / denom;
    Some(a.p0 + da * t)
}

#[test]
fn exact_pencils_recover_ground_truth_vps() {
    let cam = camera(128);
    let radius = 4.0 * cam.image_rect().diagonal();
    let mut checked = 0;
    for seed in 0..50u64 {
        let scene = make_box_scene(&cam, seed, 1 + seed as usize % 3).unwrap();
        let ann = scene_annotations(&scene, radius).unwrap();
        let groups = ann.by_family();
        for AnnotatedVp { family, vp } in ann.vps.as_ref().unwrap() {
            let segs = &groups[family];
            let est = estimate_vp(segs).unwrap();
            let err = (est.position - vp.position).norm();
            assert!(err < 0.5, "seed {seed} family {family}: off by {err}");
            for (i, a) in segs.iter().enumerate() {
                for b in &segs[i + 1..] {
                    if let Some(p) = line_intersection(a, b) {
                        let gap = (p - vp.position).norm();
                        assert!(gap < 1e-6, "seed {seed} family {family}: pair meets {gap} px away");
                    }
                }
            }
            checked += 1;
        }
    }
    assert!(checked >= 50, "only {checked} finite VPs within range");
}

#[test]
fn accurate_annotations_pass_the_concurrency_check() {
    let cam = camera(96);
    for seed in 0..20u64 {
        let scene = make_box_scene(&cam, seed, 2).unwrap();
        let ann = scene_annotations(&scene, 1e9).unwrap();
        let report = consistency_check(&ann, 0.5).unwrap();
        assert!(report.all_pass(), "seed {seed}: {report:?}");

        // Shifting one segment sideways breaks its family's concurrency.
        let mut moved = ann.clone();
        let s = &mut moved.segments[0];
        let n = (s.p1 - s.p0).perp().normalized().unwrap() * 3.0;
        (s.p0, s.p1) = (s.p0 + n, s.p1 + n);
        let family = s.family;
        let report = consistency_check(&moved, 0.5).unwrap();
        assert!(report.failing().any(|f| f.family == family), "seed {seed}: {report:?}");
    }
}

#[test]
fn mean_loss_grows_with_bow_amplitude() {
    let cam = camera(128);
    let radius = 4.0 * cam.image_rect().diagonal();
    let rc = RenderConfig::default();
    let cfg = PerspLossConfig::default();
    let amplitudes = [0.0, 1.0, 2.0, 4.0, 8.0];
    let mut sums = [0.0; 5];
    let mut scenes = 0;
    for seed in 0..50u64 {
        let scene = make_box_scene(&cam, seed, 1 + seed as usize % 3).unwrap();
        let (vps, _) = ground_truth_vps(&scene).unwrap().within(radius, &cam).unwrap();
        if vps.is_empty() {
            continue;
        }
        let accurate = render_wireframe(&scene, &rc).unwrap();
        for (sum, &a) in sums.iter_mut().zip(&amplitudes) {
            let img = distort_render(&scene, &rc, &DistortionSpec::bow(a, seed)).unwrap();
            *sum += persp_loss(&img, &accurate, &vps, &cfg).unwrap().total;
        }
        scenes += 1;
    }
    assert!(scenes >= 45);
    assert_eq!(sums[0], 0.0);
    assert!(sums.windows(2).all(|w| w[1] > w[0]), "{sums:?}");
}

#[test]
fn projected_segments_of_a_family_share_the_vanishing_point() {
    let cam = Camera::new(300.0, 100.0, 80.0, 200, 160).unwrap();
    let scene = make_box_scene(&cam, 5, 3).unwrap();
    let gt = ground_truth_vps(&scene).unwrap();
    for (v, &family) in gt.vps.iter().zip(&gt.families) {
        for s in project_segments(&scene).iter().filter(|s| s.family == family) {
            let seg = Segment2::new(s.p0, s.p1, family).unwrap();
            assert!(seg.line_distance(v.position) < 1e-6 * (1.0 + v.position.norm()));
        }
    }
}

fn pencil_strategy() -> impl Strategy<Value = (Vec2<f64>, Vec<Segment2<f64>>)> {
    (
        (-500.0..500.0f64, -500.0..500.0f64),
        prop::collection::vec((0.0..std::f64::consts::PI, 5.0..300.0f64, 0.5..100.0f64), 3..12),
    )
        .prop_map(|((vx, vy), rays)| {
            let v = Vec2::new(vx, vy);
            let segs = rays
                .into_iter()
                .map(|(phi, start, len)| {
                    let d = Vec2::from_angle(phi);
                    Segment2::new(v + d * start, v + d * (start + len), 0).unwrap()
                })
                .collect();
            (v, segs)
        })
}

proptest! {
    #[test]
    fn exact_pencils_are_recovered(case in pencil_strategy()) {
        let (v, segs) = case;
        // Nearly coincident lines make the system singular; those are rejected.
        if let Ok(est) = estimate_vp(&segs) {
            prop_assert!((est.position - v).norm() < 1e-6 * (1.0 + v.norm()));
            prop_assert!(est.residual < 1e-9 * (1.0 + v.norm()));
        }
    }

    #[test]
    fn estimate_is_similarity_equivariant(
        segs in prop::collection::vec(
            ((-100.0..100.0f64, -100.0..100.0f64), (-100.0..100.0f64, -100.0..100.0f64)), 3..10),
        angle in -3.0..3.0f64,
        scale in 0.1..10.0f64,
        shift in (-1000.0..1000.0f64, -1000.0..1000.0f64),
    ) {
        let segs: Vec<Segment2<f64>> = segs
            .into_iter()
            .filter_map(|((a, b), (c, d))| Segment2::new(Vec2::new(a, b), Vec2::new(c, d), 0).ok())
            .collect();
        let (cos, sin) = (angle.cos(), angle.sin());
        let map = |p: Vec2<f64>| Vec2::new(cos * p.x - sin * p.y, sin * p.x + cos * p.y) * scale + Vec2::new(shift.0, shift.1);
        let moved: Vec<Segment2<f64>> = segs.iter().map(|s| Segment2::new(map(s.p0), map(s.p1), 0).unwrap()).collect();
        if let (Ok(a), Ok(b)) = (estimate_vp(&segs), estimate_vp(&moved)) {
            let expected = map(a.position);
            let size = expected.norm().max(b.position.norm()).max(1.0);
            prop_assert!((b.position - expected).norm() <= 1e-9 * size, "{:?} vs {:?}", b.position, expected);
            prop_assert!((b.residual - scale * a.residual).abs() <= 1e-9 * (scale * a.residual).max(1.0));
        }
    }

    #[test]
    fn verdict_is_monotone_in_tolerance(
        segs in prop::collection::vec(
            ((-50.0..50.0f64, -50.0..50.0f64), (-50.0..50.0f64, -50.0..50.0f64), 0usize..3), 6..20),
        tol in 0.0..20.0f64,
        extra in 0.0..20.0f64,
    ) {
        let segs: Vec<Segment2<f64>> = segs
            .into_iter()
            .filter_map(|((a, b), (c, d), f)| Segment2::new(Vec2::new(a, b), Vec2::new(c, d), f).ok())
            .collect();
        let ann = AnnotationSet::new(64, 64, segs, None).unwrap();
        if let (Ok(lo), Ok(hi)) = (consistency_check(&ann, tol), consistency_check(&ann, tol + extra)) {
            for (a, b) in lo.families.iter().zip(&hi.families) {
                prop_assert!(!a.pass || b.pass);
            }
        }
    }

    #[test]
    fn annotations_round_trip(
        segs in prop::collection::vec(
            ((-1e4..1e4f64, -1e4..1e4f64), (-1e4..1e4f64, -1e4..1e4f64), 0usize..4), 1..20),
        with_vps in any::<bool>(),
        vp in (-1e6..1e6f64, -1e6..1e6f64),
    ) {
        let segs: Vec<Segment2<f64>> = segs
            .into_iter()
            .filter_map(|((a, b), (c, d), f)| Segment2::new(Vec2::new(a, b), Vec2::new(c, d), f).ok())
            .collect();
        prop_assume!(!segs.is_empty());
        let vps = with_vps.then(|| vec![AnnotatedVp { family: segs[0].family, vp: VanishingPoint::at(vp.0, vp.1) }]);
        let ann = AnnotationSet::new(640, 480, segs, vps).unwrap();
        let back: AnnotationSet<f64> = annotations_from_json(&annotations_to_json(&ann)).unwrap();
        prop_assert_eq!(back, ann);
    }
}

#[test]
fn scene_and_annotation_files_round_trip() {
    let dir = tempfile::TempDir::new().unwrap();
    let cam = camera(80);
    let scene = make_box_scene(&cam, 11, 3).unwrap();
    let ann = scene_annotations(&scene, 1e9).unwrap();

    let scene_path = dir.path().join("scene.json");
    persplens::synth::write_scene(&scene, &scene_path).unwrap();
    assert_eq!(persplens::synth::read_scene::<f64>(&scene_path).unwrap(), scene);

    let ann_path = dir.path().join("annotations.json");
    persplens::write_annotations(&ann, &ann_path).unwrap();
    assert_eq!(persplens::read_annotations::<f64>(&ann_path).unwrap(), ann);

    assert!(persplens::read_annotations::<f64>(dir.path().join("missing.json")).is_err());
}
