use nalgebra::{Matrix3, Vector3};
use proptest::prelude::*;
use thor_core::autodiff::{grad_check, Optimizer, OptimizerConfig, ParamStore, Tape, Tensor, TensorError, Var};
use thor_core::layout::{PartKind, PartLayout};
use thor_core::metrics::*;
use thor_core::rng::SplitMix64;

fn scalar_fn<F>(f: F) -> F
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>, TensorError>,
{
    f
}

fn random_rotation(rng: &mut SplitMix64) -> Matrix3<f64> {
    let q = [rng.normal(), rng.normal(), rng.normal(), rng.normal()];
    let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
    let q = nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[0] / n, q[1] / n, q[2] / n, q[3] / n));
    q.to_rotation_matrix().into_inner()
}

fn random_points(rng: &mut SplitMix64, n: usize, scale: f64) -> Tensor<f64> {
    Tensor::new(&[n, 3], (0..3 * n).map(|_| scale * rng.normal()).collect()).unwrap()
}

fn transform(p: &Tensor<f64>, s: f64, r: &Matrix3<f64>, t: Vector3<f64>) -> Tensor<f64> {
    let data = p
        .data()
        .chunks(3)
        .flat_map(|q| {
            let v = s * r * Vector3::new(q[0], q[1], q[2]) + t;
            [v.x, v.y, v.z]
        })
        .collect();
    Tensor::new(p.shape(), data).unwrap()
}

fn sq_residual(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum()
}

#[test]
fn similarity_recovery_is_exact() {
    let mut rng = SplitMix64::new(11);
    for _ in 0..20 {
        let p = random_points(&mut rng, 21, 40.0);
        let r = random_rotation(&mut rng);
        let t = Vector3::new(rng.normal(), rng.normal(), rng.normal()) * 100.0;
        let g = transform(&p, 2.5, &r, t);
        let a = procrustes_align(&p, &g, AlignMode::Similarity).unwrap();
        assert!(mpjpe(&a.aligned, &g).unwrap() < 1e-9);
        assert!((a.scale - 2.5).abs() < 1e-12);
    }
}

#[test]
fn uniform_translation_is_removed() {
    let mut rng = SplitMix64::new(3);
    let p = random_points(&mut rng, 21, 30.0);
    let g = transform(&p, 1.0, &Matrix3::identity(), Vector3::new(10.0, 0.0, 0.0));
    assert!((mpjpe(&p, &g).unwrap() - 10.0).abs() < 1e-12);
    let a = procrustes_align(&p, &g, AlignMode::Similarity).unwrap();
    assert!(mpjpe(&a.aligned, &g).unwrap() < 1e-9);
}

#[test]
fn reflection_is_not_used() {
    let mut rng = SplitMix64::new(8);
    let p = random_points(&mut rng, 12, 1.0);
    let mirror = Matrix3::from_diagonal(&Vector3::new(-1.0, 1.0, 1.0));
    let g = transform(&p, 1.0, &mirror, Vector3::zeros());

    // Unconstrained orthogonal Procrustes (reflections allowed) fits exactly.
    let centered = |t: &Tensor<f64>| {
        let n = t.rows() as f64;
        let c: Vector3<f64> = t.data().chunks(3).map(|q| Vector3::new(q[0], q[1], q[2])).sum::<Vector3<f64>>() / n;
        t.data().chunks(3).map(move |q| Vector3::new(q[0], q[1], q[2]) - c).collect::<Vec<_>>()
    };
    let (pc, gc) = (centered(&p), centered(&g));
    let cov: Matrix3<f64> = pc.iter().zip(&gc).map(|(a, b)| b * a.transpose()).sum();
    let svd = cov.svd(true, true);
    let q = svd.u.unwrap() * svd.v_t.unwrap();
    assert!(q.determinant() < 0.0);
    let free: f64 = pc.iter().zip(&gc).map(|(a, b)| (q * a - b).norm_squared()).sum();
    assert!(free < 1e-20);

    let a = procrustes_align(&p, &g, AlignMode::Similarity).unwrap();
    let det = Matrix3::from_fn(|i, j| a.rotation[i][j]).determinant();
    assert!((det - 1.0).abs() < 1e-12);
    assert!(sq_residual(&a.aligned, &g) > 1e-3);
}

#[test]
fn rigid_mode_keeps_unit_scale() {
    let mut rng = SplitMix64::new(4);
    let p = random_points(&mut rng, 10, 1.0);
    let r = random_rotation(&mut rng);
    let g = transform(&p, 1.0, &r, Vector3::new(1.0, 2.0, 3.0));
    let a = procrustes_align(&p, &g, AlignMode::Rigid).unwrap();
    assert_eq!(a.scale, 1.0);
    assert!(mpjpe(&a.aligned, &g).unwrap() < 1e-9);
    let g2 = transform(&p, 3.0, &r, Vector3::zeros());
    let rigid = procrustes_align(&p, &g2, AlignMode::Rigid).unwrap();
    let sim = procrustes_align(&p, &g2, AlignMode::Similarity).unwrap();
    assert!(sq_residual(&sim.aligned, &g2) < sq_residual(&rigid.aligned, &g2));
}

// Minimum over planar similarities: angles on a grid, both orientations of
// the plane (a 3D rotation can flip it), closed-form scale and translation,
// then golden-section refinement around the best grid angle.
fn planar_brute_force(p: &[[f64; 2]; 4], g: &[[f64; 2]; 4]) -> f64 {
    let mean = |x: &[[f64; 2]; 4]| [x.iter().map(|q| q[0]).sum::<f64>() / 4.0, x.iter().map(|q| q[1]).sum::<f64>() / 4.0];
    let (mp, mg) = (mean(p), mean(g));
    let pc: Vec<[f64; 2]> = p.iter().map(|q| [q[0] - mp[0], q[1] - mp[1]]).collect();
    let gc: Vec<[f64; 2]> = g.iter().map(|q| [q[0] - mg[0], q[1] - mg[1]]).collect();
    let pp: f64 = pc.iter().map(|q| q[0] * q[0] + q[1] * q[1]).sum();
    let gg: f64 = gc.iter().map(|q| q[0] * q[0] + q[1] * q[1]).sum();
    let cost = |theta: f64, flip: f64| {
        let (c, s) = (theta.cos(), theta.sin());
        let cross: f64 = pc
            .iter()
            .zip(&gc)
            .map(|(a, b)| {
                let a = [a[0], flip * a[1]];
                (c * a[0] - s * a[1]) * b[0] + (s * a[0] + c * a[1]) * b[1]
            })
            .sum();
        let scale = (cross / pp).max(0.0);
        gg - 2.0 * scale * cross + scale * scale * pp
    };
    let mut best = f64::INFINITY;
    for flip in [1.0, -1.0] {
        let steps = 20_000;
        let h = std::f64::consts::TAU / steps as f64;
        let k = (0..steps).min_by(|&a, &b| cost(a as f64 * h, flip).total_cmp(&cost(b as f64 * h, flip))).unwrap();
        let (mut lo, mut hi) = ((k as f64 - 1.0) * h, (k as f64 + 1.0) * h);
        let phi = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..100 {
            let (a, b) = (hi - phi * (hi - lo), lo + phi * (hi - lo));
            if cost(a, flip) < cost(b, flip) {
                hi = b;
            } else {
                lo = a;
            }
        }
        best = best.min(cost(0.5 * (lo + hi), flip));
    }
    best
}

#[test]
fn planar_four_point_cases_match_brute_force() {
    let mut rng = SplitMix64::new(21);
    for _ in 0..25 {
        let mut p = [[0.0; 2]; 4];
        let mut g = [[0.0; 2]; 4];
        for i in 0..4 {
            p[i] = [rng.normal(), rng.normal()];
            g[i] = [rng.normal(), rng.normal()];
        }
        let lift = |x: &[[f64; 2]; 4]| Tensor::from_rows(&x.map(|q| [q[0], q[1], 0.0]));
        let a = procrustes_align(&lift(&p), &lift(&g), AlignMode::Similarity).unwrap();
        let ours = sq_residual(&a.aligned, &lift(&g));
        let brute = planar_brute_force(&p, &g);
        assert!((ours - brute).abs() < 1e-6, "{ours} vs {brute}");
    }
}

#[test]
fn degenerate_sets_rejected() {
    let two = Tensor::<f64>::from_rows(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
    assert!(procrustes_align(&two, &two, AlignMode::Similarity).is_err());
    let same = Tensor::<f64>::from_rows(&[[1.0, 1.0, 1.0]; 5]);
    assert!(procrustes_align(&same, &same, AlignMode::Similarity).is_err());
}

#[test]
fn aligned_mean_error_can_exceed_unaligned() {
    // Least squares spreads one large outlier over every point, so the mean
    // of Euclidean errors can go up even though the squared sum goes down.
    let p = Tensor::<f64>::from_rows(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 1.0, 1.0]]);
    let mut g = p.clone();
    g.set(0, 0, 10.0);
    let a = procrustes_align(&p, &g, AlignMode::Similarity).unwrap();
    assert!(sq_residual(&a.aligned, &g) <= sq_residual(&p, &g));
    assert!(mpjpe(&a.aligned, &g).unwrap() > mpjpe(&p, &g).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn alignment_never_increases_squared_error(seed in any::<u64>(), n in 3usize..30) {
        let mut rng = SplitMix64::new(seed);
        let p = random_points(&mut rng, n, 10.0);
        let g = random_points(&mut rng, n, 10.0);
        for mode in [AlignMode::Similarity, AlignMode::Rigid] {
            let a = procrustes_align(&p, &g, mode).unwrap();
            prop_assert!(sq_residual(&a.aligned, &g) <= sq_residual(&p, &g) * (1.0 + 1e-12));
            let det = Matrix3::from_fn(|i, j| a.rotation[i][j]).determinant();
            prop_assert!((det - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn pcv_is_monotone_and_bounded(errors in prop::collection::vec(0.0f64..100.0, 1..200),
                                   mut thresholds in prop::collection::vec(-5.0f64..120.0, 1..40)) {
        thresholds.sort_by(f64::total_cmp);
        let c = pcv_curve(&errors, &thresholds).unwrap();
        prop_assert!(c.fractions.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(c.fractions.iter().all(|&f| (0.0..=1.0).contains(&f)));
        let max = errors.iter().cloned().fold(0.0, f64::max);
        let min = errors.iter().cloned().fold(f64::INFINITY, f64::min);
        for (t, f) in c.thresholds_mm.iter().zip(&c.fractions) {
            if *t >= max { prop_assert_eq!(*f, 1.0); }
            if *t < min { prop_assert_eq!(*f, 0.0); }
        }
    }

    #[test]
    fn combined_loss_terms_sum_to_total(seed in any::<u64>(), hands in 1usize..3) {
        let layout = PartLayout::with_sizes(hands, 7, 5);
        let mut rng = SplitMix64::new(seed);
        let (nj, nv) = (layout.num_joints(), layout.num_vertices());
        let gp = random_points(&mut rng, nj, 1.0);
        let gs = random_points(&mut rng, nv, 1.0);
        let tape = Tape::new();
        let pp = tape.leaf(random_points(&mut rng, nj, 1.0)).unwrap();
        let ps = tape.leaf(random_points(&mut rng, nv, 1.0)).unwrap();
        let l = combined_loss(&pp, &gp, &ps, &gs, &layout, false, None, &LossWeights::default()).unwrap();
        let b = &l.breakdown;
        prop_assert!(b.pose >= 0.0 && b.shape >= 0.0 && b.photo == 0.0);
        prop_assert!((b.pose + b.shape - b.total).abs() <= 1e-12 * b.total.max(1.0));
        let part_pose: f64 = b.parts.iter().map(|p| p.1).sum();
        let part_shape: f64 = b.parts.iter().map(|p| p.2).sum();
        prop_assert!((part_pose - b.pose).abs() <= 1e-12 * b.pose.max(1.0));
        prop_assert!((part_shape - b.shape).abs() <= 1e-12 * b.shape.max(1.0));
        prop_assert!(b.parts.iter().all(|p| p.1 >= 0.0 && p.2 >= 0.0));
    }
}

#[test]
fn combined_loss_isolates_terms() {
    let layout = PartLayout::with_sizes(2, 6, 4);
    let mut rng = SplitMix64::new(1);
    let gp = random_points(&mut rng, layout.num_joints(), 1.0);
    let gs = random_points(&mut rng, layout.num_vertices(), 1.0);
    let tape = Tape::new();
    let exact_pose = tape.leaf(gp.clone()).unwrap();
    let exact_shape = tape.leaf(gs.clone()).unwrap();
    let l = combined_loss(&exact_pose, &gp, &exact_shape, &gs, &layout, false, None, &LossWeights::default()).unwrap();
    assert_eq!(l.breakdown.total, 0.0);

    let wrong_pose = tape.leaf(gp.map(|x| x + 0.5)).unwrap();
    let l = combined_loss(&wrong_pose, &gp, &exact_shape, &gs, &layout, false, None, &LossWeights::default()).unwrap();
    assert_eq!(l.breakdown.shape, 0.0);
    assert_eq!(l.breakdown.total, l.breakdown.pose);
    assert!((l.breakdown.pose - 0.25).abs() < 1e-12);
    assert_eq!(l.breakdown.parts.iter().map(|p| p.0).collect::<Vec<_>>(), vec![PartKind::LeftHand, PartKind::RightHand, PartKind::Object]);

    assert!(matches!(
        combined_loss(&exact_pose, &gp, &exact_shape, &gs, &layout, true, None, &LossWeights::default()),
        Err(MetricsError::MissingPhotoInputs)
    ));
}

fn ramp_setup(n: usize, seed: u64) -> (Image<f64>, CameraIntrinsics, Tensor<f64>) {
    let (w, h) = (64, 48);
    let img = Image::from_fn(w, h, |u, v| [u as f64 / w as f64, 0.25 + 0.5 * v as f64 / h as f64, 0.1]);
    let k = CameraIntrinsics::new(60.0, 60.0, 32.0, 24.0, w, h).unwrap();
    let mut rng = SplitMix64::new(seed);
    let verts: Vec<f64> = (0..n)
        .flat_map(|_| {
            let z = rng.uniform(300.0, 500.0);
            [rng.uniform(-0.45, 0.45) * z, rng.uniform(-0.35, 0.35) * z, z]
        })
        .collect();
    (img, k, Tensor::new(&[n, 3], verts).unwrap())
}

#[test]
fn photometric_ramp_is_recovered_by_gradient_descent() {
    let (img, k, verts) = ramp_setup(40, 2);
    let mut store = ParamStore::new();
    let rgb = store.add("rgb", Tensor::full(&[40, 3], 0.5));
    let mut opt = Optimizer::new(OptimizerConfig::sgd(20.0));
    let mut loss = f64::INFINITY;
    for _ in 0..300 {
        let tape = Tape::new();
        let v = tape.param(&store, rgb).unwrap();
        let l = photometric_loss(&img, &k, &verts, &v).unwrap();
        loss = l.loss.item();
        store.zero_grad();
        tape.backward(l.loss, Some(&mut store)).unwrap();
        opt.step(&mut store).unwrap();
    }
    assert!(loss < 1e-6, "{loss}");
    // Independent oracle: the red channel of a ramp is u / width at the
    // projected pixel.
    for (i, p) in verts.data().chunks(3).enumerate() {
        let u = 60.0 * p[0] / p[2] + 32.0;
        assert!((store.value(rgb).at(i, 0) - u / 64.0).abs() < 1e-3);
    }
}

#[test]
fn photometric_gradient_matches_finite_differences() {
    let (img, k, verts) = ramp_setup(15, 5);
    let mut rng = SplitMix64::new(9);
    let rgb = Tensor::new(&[15, 3], rng.uniform_vec(45, 0.0, 1.0)).unwrap();
    let f = scalar_fn(|_, v| {
        photometric_loss(&img, &k, &verts, &v[0])
            .map(|p| p.loss)
            .map_err(|e| TensorError::Invalid { op: "photo", msg: e.to_string() })
    });
    let err = grad_check(&f, &[rgb], 1e-6).unwrap();
    assert!(err < 1e-6, "{err}");
}

#[test]
fn report_json_and_csv() {
    let layout = PartLayout::with_sizes(1, 10, 6);
    let mut acc = MetricAccumulator::new(layout.clone(), vec![0.0, 5.0, 50.0], AlignMode::Similarity);
    let mut rng = SplitMix64::new(0);
    for _ in 0..3 {
        let gp = random_points(&mut rng, layout.num_joints(), 30.0);
        let gv = random_points(&mut rng, layout.num_vertices(), 30.0);
        let pp = gp.zip_map(&random_points(&mut rng, layout.num_joints(), 2.0), |a, b| a + b);
        let pv = gv.zip_map(&random_points(&mut rng, layout.num_vertices(), 2.0), |a, b| a + b);
        acc.add(&pp, &gp, &pv, &gv).unwrap();
    }
    let report = acc.finish().unwrap();
    let dir = tempfile::tempdir().unwrap();
    report.write(dir.path()).unwrap();
    let back: MetricReport =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("metrics.json")).unwrap()).unwrap();
    assert_eq!(back, report);
    let csv = std::fs::read_to_string(dir.path().join("pcv_object.csv")).unwrap();
    assert!(csv.starts_with("threshold_mm,fraction\n0,"));
    let hand = report.part(PartKind::RightHand).unwrap();
    assert_eq!(hand.samples, 3);
    assert!(hand.mpjpe > 0.0 && hand.pcv.fractions[2] == 1.0);
}
