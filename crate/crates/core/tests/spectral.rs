use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;
use thor_core::autodiff::{Tape, Tensor};
use thor_core::graph::*;
use thor_core::mesh::icosphere;
use thor_core::rng::SplitMix64;

fn random_graph(rng: &mut SplitMix64, max_nodes: usize) -> GraphTopology {
    let n = 2 + rng.below(max_nodes - 1);
    let p = rng.uniform(0.05, 0.6);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.next_f64() < p {
                edges.push((i, j));
            }
        }
    }
    GraphTopology::new(n, edges).unwrap()
}

fn to_dmatrix(t: &Tensor<f64>) -> DMatrix<f64> {
    DMatrix::from_row_slice(t.rows(), t.cols(), t.data())
}

#[test]
fn scaled_laplacian_spectrum_on_random_graphs() {
    let mut rng = SplitMix64::new(2024);
    for _ in 0..20 {
        let g = random_graph(&mut rng, 50);
        let lt = g.scaled_laplacian::<f64>().unwrap();
        let m = to_dmatrix(&lt);
        assert!((&m - m.transpose()).amax() <= 1e-12);
        let eig = SymmetricEigen::new(m).eigenvalues;
        assert!(eig.iter().all(|e| e.abs() <= 1.0 + 1e-9), "{eig}");

        let l = SymmetricEigen::new(to_dmatrix(&g.normalized_laplacian())).eigenvalues;
        let top = l.iter().cloned().fold(f64::MIN, f64::max);
        if g.num_edges() > 0 {
            assert!((g.lambda_max().unwrap() - top).abs() < 1e-8);
        }
    }
}

// T_k as power-series coefficients: T_0 = 1, T_1 = x, T_k = 2x T_{k-1} - T_{k-2}.
fn cheb_coefficients(k_max: usize) -> Vec<Vec<f64>> {
    let mut c = vec![vec![1.0], vec![0.0, 1.0]];
    for k in 2..=k_max {
        let mut next = vec![0.0; k + 1];
        for (i, &a) in c[k - 1].iter().enumerate() {
            next[i + 1] += 2.0 * a;
        }
        for (i, &a) in c[k - 2].iter().enumerate() {
            next[i] -= a;
        }
        c.push(next);
    }
    c
}

#[test]
fn chebyshev_recursion_matches_dense_polynomials() {
    let mut rng = SplitMix64::new(7);
    let coeffs = cheb_coefficients(6);
    for trial in 0..20 {
        let g = random_graph(&mut rng, if trial == 0 { 10 } else { 50 });
        let n = g.num_nodes();
        let lt = g.scaled_laplacian::<f64>().unwrap();
        let x = Tensor::new(&[n, 3], rng.normal_vec(3 * n, 1.0)).unwrap();
        let basis = cheb_basis_dense(&lt, &x, 7).unwrap();
        let (m, xm) = (to_dmatrix(&lt), to_dmatrix(&x));
        let mut powers = vec![DMatrix::identity(n, n)];
        for j in 1..7 {
            powers.push(&powers[j - 1] * &m);
        }
        for (k, b) in basis.iter().enumerate() {
            let mut tk = DMatrix::zeros(n, n);
            for (j, &c) in coeffs[k].iter().enumerate() {
                tk += c * &powers[j];
            }
            let expect = tk * &xm;
            assert!((to_dmatrix(b) - expect).amax() < 1e-10, "k={k}");
        }
    }
}

#[test]
fn icosphere_edges_follow_euler() {
    for level in 0..4 {
        let s = icosphere::<f64>(level);
        let g = GraphTopology::from_faces(&s.faces, s.num_vertices()).unwrap();
        assert_eq!(s.num_vertices() + s.num_faces() - g.num_edges(), 2);
        if level == 1 {
            assert_eq!(g.num_edges(), 120);
        }
    }
}

#[test]
fn skeleton_sizes() {
    assert_eq!(SkeletonTemplate::composite(1).num_nodes(), 29);
    assert_eq!(SkeletonTemplate::composite(2).num_nodes(), 50);
    let b = SkeletonTemplate::build(SkeletonLayout::Box8, 1);
    assert_eq!((b.num_nodes(), b.topology.num_edges()), (8, 12));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn composite_parts_do_not_mix(hands in 1usize..3, seed in any::<u64>(), part in 0usize..3, k in 1usize..6) {
        let sk = SkeletonTemplate::composite(hands);
        let mut ranges = sk.hands.clone();
        ranges.push(sk.object.clone().unwrap());
        let r = ranges[part % ranges.len()].clone();
        let n = sk.num_nodes();
        // features supported on one part only
        let mut rng = SplitMix64::new(seed);
        let mut x = Tensor::<f64>::zeros(&[n, 2]);
        for i in r.clone() {
            x.set(i, 0, rng.normal());
            x.set(i, 1, rng.normal());
        }
        let tape = Tape::new();
        let lt = tape.constant(sk.topology.scaled_laplacian().unwrap()).unwrap();
        let xv = tape.leaf(x).unwrap();
        for b in cheb_basis_apply(&lt, &xv, k).unwrap() {
            let v = b.value();
            for i in (0..n).filter(|i| !r.contains(i)) {
                prop_assert_eq!(v.row(i), &[0.0, 0.0]);
            }
        }
    }

    #[test]
    fn permuting_nodes_permutes_the_basis(seed in any::<u64>()) {
        let mut rng = SplitMix64::new(seed);
        let g = random_graph(&mut rng, 20);
        let n = g.num_nodes();
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.below(i + 1));
        }
        let gp = g.permuted(&perm).unwrap();
        let x = Tensor::new(&[n, 2], rng.normal_vec(2 * n, 1.0)).unwrap();
        let mut xp = Tensor::<f64>::zeros(&[n, 2]);
        for i in 0..n {
            for c in 0..2 {
                xp.set(perm[i], c, x.at(i, c));
            }
        }
        let a = cheb_basis_dense(&g.scaled_laplacian::<f64>().unwrap(), &x, 4).unwrap();
        let b = cheb_basis_dense(&gp.scaled_laplacian().unwrap(), &xp, 4).unwrap();
        for (ta, tb) in a.iter().zip(&b) {
            for i in 0..n {
                for c in 0..2 {
                    prop_assert!((ta.at(i, c) - tb.at(perm[i], c)).abs() < 1e-9);
                }
            }
        }
    }
}

#[test]
fn disjoint_parts_with_close_top_eigenvalues() {
    // two meshes with nearly equal largest eigenvalues, plus an isolated node
    let a = GraphTopology::from_faces(&icosphere::<f64>(1).faces, 42).unwrap();
    let b = GraphTopology::from_faces(&icosphere::<f64>(2).faces, 162).unwrap();
    let lone = GraphTopology::new(1, []).unwrap();
    let g = GraphTopology::block_diagonal(&[&a, &b, &lone]).unwrap();
    let eig = SymmetricEigen::new(to_dmatrix(&g.normalized_laplacian())).eigenvalues;
    let top = eig.iter().cloned().fold(f64::MIN, f64::max);
    assert!((g.lambda_max().unwrap() - top).abs() < 1e-10);
    let parts = a.lambda_max().unwrap().max(b.lambda_max().unwrap());
    assert!((g.lambda_max().unwrap() - parts).abs() < 1e-12);
}
