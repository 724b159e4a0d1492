use thor_core::autodiff::{grad_check, Tape, Tensor, TensorError, Var};
use thor_core::mesh::*;
use thor_core::rng::SplitMix64;

fn unit_cube() -> Mesh<f64> {
    let v = (0..8)
        .map(|i| [(i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64])
        .collect();
    let f = vec![
        [0, 2, 3], [0, 3, 1], [4, 5, 7], [4, 7, 6], [0, 1, 5], [0, 5, 4],
        [2, 6, 7], [2, 7, 3], [0, 4, 6], [0, 6, 2], [1, 3, 7], [1, 7, 5],
    ];
    Mesh::new(v, f).unwrap()
}

fn point_triangle_distance(p: [f64; 3], a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> f64 {
    // Closest point by region tests (Ericson, Real-Time Collision Detection 5.1.5).
    let sub = |x: [f64; 3], y: [f64; 3]| [x[0] - y[0], x[1] - y[1], x[2] - y[2]];
    let dot = |x: [f64; 3], y: [f64; 3]| x[0] * y[0] + x[1] * y[1] + x[2] * y[2];
    let lerp = |x: [f64; 3], d: [f64; 3], t: f64| [x[0] + t * d[0], x[1] + t * d[1], x[2] + t * d[2]];
    let (ab, ac, ap) = (sub(b, a), sub(c, a), sub(p, a));
    let (d1, d2) = (dot(ab, ap), dot(ac, ap));
    let q = if d1 <= 0.0 && d2 <= 0.0 {
        a
    } else {
        let bp = sub(p, b);
        let (d3, d4) = (dot(ab, bp), dot(ac, bp));
        let cp = sub(p, c);
        let (d5, d6) = (dot(ab, cp), dot(ac, cp));
        let vc = d1 * d4 - d3 * d2;
        let vb = d5 * d2 - d1 * d6;
        let va = d3 * d6 - d5 * d4;
        if d3 >= 0.0 && d4 <= d3 {
            b
        } else if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
            lerp(a, ab, d1 / (d1 - d3))
        } else if d6 >= 0.0 && d5 <= d6 {
            c
        } else if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
            lerp(a, ac, d2 / (d2 - d6))
        } else if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
            lerp(b, sub(c, b), (d4 - d3) / ((d4 - d3) + (d5 - d6)))
        } else {
            let denom = 1.0 / (va + vb + vc);
            let (v, w) = (vb * denom, vc * denom);
            [a[0] + ab[0] * v + ac[0] * w, a[1] + ab[1] * v + ac[1] * w, a[2] + ab[2] * v + ac[2] * w]
        }
    };
    dot(sub(p, q), sub(p, q)).sqrt()
}

#[test]
fn icosphere_vertex_counts() {
    let counts: Vec<usize> = (0..5).map(|l| icosphere::<f64>(l).num_vertices()).collect();
    assert_eq!(counts, vec![12, 42, 162, 642, 2562]);
}

#[test]
fn canonical_sphere_decimation() {
    let s = qecd_simplify(&icosphere::<f64>(4), 1000).unwrap();
    assert_eq!(s.num_vertices(), 1000);
    s.check_closed_manifold().unwrap();
    assert_eq!(s.euler_characteristic(), 2);

    // Two-sided sampled Hausdorff distance to the unit sphere.
    let on_mesh = sample_points_from_faces(&s, 10_000, 1).unwrap().points;
    let mesh_to_sphere = on_mesh
        .data()
        .chunks(3)
        .map(|p| ((p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt() - 1.0).abs())
        .fold(0.0, f64::max);
    let mut rng = SplitMix64::new(2);
    let mut sphere_to_mesh = 0.0f64;
    for _ in 0..2_000 {
        let g = [rng.normal(), rng.normal(), rng.normal()];
        let n = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
        let p = [g[0] / n, g[1] / n, g[2] / n];
        let d = s
            .faces
            .iter()
            .map(|f| point_triangle_distance(p, s.vertices[f[0]], s.vertices[f[1]], s.vertices[f[2]]))
            .fold(f64::INFINITY, f64::min);
        sphere_to_mesh = sphere_to_mesh.max(d);
    }
    assert!(mesh_to_sphere.max(sphere_to_mesh) <= 0.05, "{mesh_to_sphere} {sphere_to_mesh}");
}

#[test]
fn toy_hand_levels() {
    let hand = toy_hand_model::<f64>(0).unwrap();
    assert_eq!(hand.mesh.num_vertices(), 778);
    assert_eq!(hand.joints.len(), 21);
    hand.mesh.check_closed_manifold().unwrap();
    for target in [194, 49] {
        let m = qecd_simplify(&hand.mesh, target).unwrap();
        assert_eq!(m.num_vertices(), target);
        assert_eq!(m.euler_characteristic(), 2);
    }
}

#[test]
fn decimation_is_deterministic() {
    let s = icosphere::<f64>(3);
    assert_eq!(qecd_simplify(&s, 300).unwrap(), qecd_simplify(&s, 300).unwrap());
}

fn as_tensor_error(e: MeshError) -> TensorError {
    match e {
        MeshError::Tensor(t) => t,
        other => TensorError::Invalid {
            op: "mesh",
            msg: other.to_string(),
        },
    }
}

fn scalar_fn<F>(f: F) -> F
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>, TensorError>,
{
    f
}

#[test]
fn mesh_loss_gradients_match_finite_differences() {
    let base = qecd_simplify(&icosphere::<f64>(1), 20).unwrap();
    let mut rng = SplitMix64::new(5);
    let noise = Tensor::new(&[20, 3], rng.uniform_vec(60, -0.05, 0.05)).unwrap();
    let verts = base.vertex_tensor().zip_map(&noise, |a, b| a + b);
    let reg = MeshRegularizer::new(&base).unwrap();
    let target = Tensor::new(&[30, 3], rng.uniform_vec(90, -1.2, 1.2)).unwrap();
    let f = scalar_fn(|tape, v| {
        let t = tape.constant(target.clone())?;
        let l = reg.losses(&v[0], &v[0], &t, None).map_err(as_tensor_error)?;
        l.total(0.37, 0.81).map_err(as_tensor_error)
    });
    let err = grad_check(&f, &[verts], 1e-5).unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn deformation_keeps_faces_and_lowers_loss() {
    let sphere = qecd_simplify(&icosphere::<f64>(3), 300).unwrap();
    let cube = unit_cube();
    let cfg = DeformConfig {
        iters: 150,
        samples: Some(1500),
        ..Default::default()
    };
    let r = deform_sphere(&sphere, &cube, &cfg).unwrap();
    assert_eq!(r.mesh.faces, sphere.faces);
    assert!(r.final_loss.total <= r.initial_loss());
    assert_eq!(r.history.len(), 150);
}

#[test]
fn stronger_laplacian_weight_gives_smoother_result() {
    let sphere = qecd_simplify(&icosphere::<f64>(3), 300).unwrap();
    let cube = unit_cube();
    let run = |lambda2: f64| {
        let cfg = DeformConfig {
            iters: 200,
            lr: 0.05,
            lambda2,
            samples: Some(1500),
            ..Default::default()
        };
        deform_sphere(&sphere, &cube, &cfg).unwrap().final_loss.terms.laplacian
    };
    let (weak, strong) = (run(0.1), run(1e3));
    assert!(strong < weak, "{strong} vs {weak}");
}

#[test]
fn self_target_stays_near_the_regularizer_floor() {
    let sphere = qecd_simplify(&icosphere::<f64>(4), 1000).unwrap();
    assert_eq!(fit_template(&sphere, &sphere).vertices.len(), 1000);
    let cfg = DeformConfig {
        samples: None,
        ..Default::default()
    };
    let r = deform_sphere(&sphere, &sphere, &cfg).unwrap();
    assert!(r.history[0].terms.chamfer < 1e-20);
    assert!(r.final_loss.total <= r.initial_loss());
    // The edge term pulls every vertex of a closed surface inward, so the
    // fixed point is a slightly shrunken sphere rather than the input.
    let mean_disp: f64 = r
        .mesh
        .vertices
        .iter()
        .zip(&sphere.vertices)
        .map(|(a, b)| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt())
        .sum::<f64>()
        / 1000.0;
    assert!(mean_disp < 2e-2, "{mean_disp}");
}

#[test]
fn obj_and_ply_roundtrip_of_decimated_sphere() {
    let dir = tempfile::tempdir().unwrap();
    let s = qecd_simplify(&icosphere::<f64>(2), 100).unwrap();
    for name in ["s.obj", "s.ply"] {
        let p = dir.path().join(name);
        write_mesh(&s, &p).unwrap();
        let back: Mesh<f64> = read_mesh(&p).unwrap();
        assert_eq!(back.faces, s.faces);
        for (a, b) in back.vertices.iter().flatten().zip(s.vertices.iter().flatten()) {
            assert_eq!(*a, format!("{b:.8e}").parse::<f64>().unwrap());
        }
    }
}
