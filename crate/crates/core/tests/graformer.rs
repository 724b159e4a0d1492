use std::rc::Rc;

use thor_core::autodiff::*;
use thor_core::graformer::*;
use thor_core::graph::{GraphTopology, SkeletonTemplate};
use thor_core::rng::SplitMix64;

fn rand(rng: &mut SplitMix64, r: usize, c: usize, std: f64) -> Tensor<f64> {
    Tensor::new(&[r, c], rng.normal_vec(r * c, std)).unwrap()
}

fn random_graph(rng: &mut SplitMix64, n: usize) -> GraphTopology {
    let mut e = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.next_f64() < 0.35 {
                e.push((i, j));
            }
        }
    }
    GraphTopology::new(n, e).unwrap()
}

fn eval<'t>(
    tape: &'t Tape<f64>,
    store: &ParamStore<f64>,
    f: impl FnOnce(&Ctx<'_, 't, f64>) -> Result<Var<'t, f64>, GraformerError>,
) -> Tensor<f64> {
    let ctx = Ctx::new(tape, store);
    (*f(&ctx).unwrap().value()).clone()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[test]
fn lam_gconv_saturation_and_dense_oracle() {
    let mut rng = SplitMix64::new(1);
    let g = random_graph(&mut rng, 5);
    let mut store = ParamStore::new();
    let lam = LamGconv::new(&mut store, "lam", &g, 3, 3, &mut rng);
    let x = rand(&mut rng, 5, 3, 1.0);

    store.set_value(lam.w, Tensor::eye(3)).unwrap();
    for (logit, expect) in [(30.0, 1.0), (-30.0, 0.0)] {
        store.set_value(lam.logits, Tensor::full(&[5, 5], logit)).unwrap();
        let tape = Tape::new();
        let y = eval(&tape, &store, |c| lam.forward(c, &tape.constant(x.clone())?));
        for i in 0..5 {
            for j in 0..3 {
                let col: f64 = (0..5).map(|r| x.at(r, j)).sum();
                assert!((y.at(i, j) - expect * col).abs() < 1e-10);
            }
        }
    }

    let a = rand(&mut rng, 5, 5, 2.0);
    let w = rand(&mut rng, 3, 4, 1.0);
    let lam = LamGconv::new(&mut store, "lam2", &g, 3, 4, &mut rng);
    store.set_value(lam.logits, a.clone()).unwrap();
    store.set_value(lam.w, w.clone()).unwrap();
    let tape = Tape::new();
    let y = eval(&tape, &store, |c| lam.forward(c, &tape.constant(x.clone())?));
    for i in 0..5 {
        for o in 0..4 {
            let mut acc = 0.0;
            for j in 0..5 {
                let s = sigmoid(0.5 * (a.at(i, j) + a.at(j, i)));
                for c in 0..3 {
                    acc += s * x.at(j, c) * w.at(c, o);
                }
            }
            assert!((y.at(i, o) - acc).abs() < 1e-12);
        }
    }
}

#[test]
fn lam_initialization_follows_topology() {
    let g = GraphTopology::new(4, [(0, 1), (1, 2)]).unwrap();
    let mut store = ParamStore::<f64>::new();
    let lam = LamGconv::new(&mut store, "lam", &g, 2, 2, &mut SplitMix64::new(0));
    let a = store.value(lam.logits);
    assert_eq!(a.at(0, 0), LAM_EDGE_LOGIT);
    assert_eq!(a.at(1, 2), LAM_EDGE_LOGIT);
    assert_eq!(a.at(0, 3), -LAM_EDGE_LOGIT);
    let tape = Tape::new();
    let adj = eval(&tape, &store, |c| Ok(lam.adjacency(c)?));
    assert!(adj.data().iter().all(|&v| v > 0.0 && v < 1.0));
}

#[test]
fn cheb_gconv_examples() {
    let mut rng = SplitMix64::new(2);
    let mut store = ParamStore::new();
    let x = rand(&mut rng, 4, 3, 1.0);

    let g = random_graph(&mut rng, 4);
    let lt = Rc::new(g.scaled_laplacian_csr::<f64>().unwrap());
    let c1 = ChebGconv::new(&mut store, "k1", 3, 3, 1, &mut rng);
    store.set_value(c1.thetas[0], Tensor::eye(3)).unwrap();
    let tape = Tape::new();
    assert_eq!(eval(&tape, &store, |c| c1.forward(c, &lt, &tape.constant(x.clone())?)), x);

    let edgeless = GraphTopology::new(4, []).unwrap();
    let lt = Rc::new(edgeless.scaled_laplacian_csr::<f64>().unwrap());
    let c2 = ChebGconv::new(&mut store, "k2", 3, 2, 2, &mut rng);
    let b = rand(&mut rng, 1, 2, 1.0);
    store.set_value(c2.bias, b.clone()).unwrap();
    let tape = Tape::new();
    let y = eval(&tape, &store, |c| c2.forward(c, &lt, &tape.constant(x.clone())?));
    let diff = store.value(c2.thetas[0]).zip_map(store.value(c2.thetas[1]), |a, b| a - b);
    let expect = x.matmul(&diff).unwrap();
    for i in 0..4 {
        for j in 0..2 {
            assert!((y.at(i, j) - expect.at(i, j) - b.at(0, j)).abs() < 1e-12);
        }
    }

    // Dense oracle on 8 nodes: T0 = I, T1 = L~.
    let g = random_graph(&mut rng, 8);
    let dense = g.scaled_laplacian::<f64>().unwrap();
    let lt = Rc::new(g.scaled_laplacian_csr::<f64>().unwrap());
    let c3 = ChebGconv::new(&mut store, "k3", 3, 5, 2, &mut rng);
    let x = rand(&mut rng, 8, 3, 1.0);
    let tape = Tape::new();
    let y = eval(&tape, &store, |c| c3.forward(c, &lt, &tape.constant(x.clone())?));
    let t0 = x.matmul(store.value(c3.thetas[0])).unwrap();
    let t1 = dense.matmul(&x).unwrap().matmul(store.value(c3.thetas[1])).unwrap();
    assert!(y.max_abs_diff(&t0.zip_map(&t1, |a, b| a + b)) < 1e-10);
}

#[test]
fn attention_single_node_and_row_sums() {
    let mut rng = SplitMix64::new(3);
    let mut store = ParamStore::new();
    let one = GraphTopology::new(1, []).unwrap();
    let attn = GraAttention::new(&mut store, "a", &one, 8, 4, &mut rng);
    let x = rand(&mut rng, 1, 8, 1.0);
    let tape = Tape::new();
    let ctx = Ctx::new(&tape, &store);
    let xv = tape.constant(x.clone()).unwrap();
    let (y, w) = attn.forward_with_weights(&ctx, &xv).unwrap();
    assert!(w.iter().all(|a| a.value().data() == [1.0]));
    let h = attn.norm.forward(&ctx, &xv).unwrap();
    let v = attn.v.forward(&ctx, &h).unwrap();
    let expect = attn.lam.forward(&ctx, &v).unwrap().add(&xv).unwrap();
    assert!(y.value().max_abs_diff(&expect.value()) < 1e-14);

    let g = random_graph(&mut rng, 9);
    let attn = GraAttention::new(&mut store, "b", &g, 8, 2, &mut rng);
    let tape = Tape::new();
    let ctx = Ctx::new(&tape, &store);
    let xv = tape.constant(rand(&mut rng, 9, 8, 3.0)).unwrap();
    for a in attn.forward_with_weights(&ctx, &xv).unwrap().1 {
        let a = a.value();
        for r in 0..9 {
            assert!((a.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

fn small_config(input: usize, output: usize, blocks: usize) -> GraFormerConfig {
    GraFormerConfig {
        d_model: 16,
        num_heads: 4,
        num_blocks: blocks,
        cheb_order: 2,
        input_dim: input,
        output_dim: output,
        attention: true,
    }
}

#[test]
fn graformer_is_permutation_equivariant() {
    let mut rng = SplitMix64::new(4);
    let g = random_graph(&mut rng, 7);
    let perm = [3, 0, 6, 1, 5, 2, 4];
    let gp = g.permuted(&perm).unwrap();
    let cfg = small_config(5, 3, 2);
    let (mut s1, mut s2) = (ParamStore::new(), ParamStore::new());
    let n1 = GraFormer::new(&mut s1, "n", cfg.clone(), &g, &mut SplitMix64::new(9)).unwrap();
    let n2 = GraFormer::new(&mut s2, "n", cfg, &gp, &mut SplitMix64::new(9)).unwrap();
    let x = rand(&mut rng, 7, 5, 1.0);
    let mut xp = Tensor::zeros(&[7, 5]);
    for i in 0..7 {
        for c in 0..5 {
            xp.set(perm[i], c, x.at(i, c));
        }
    }
    let (y, yp) = (n1.predict(&s1, &x).unwrap(), n2.predict(&s2, &xp).unwrap());
    for i in 0..7 {
        for c in 0..3 {
            assert!((y.at(i, c) - yp.at(perm[i], c)).abs() < 1e-10);
        }
    }
}

#[test]
fn paper_input_shapes() {
    let one = SkeletonTemplate::composite(1).topology;
    let two = SkeletonTemplate::composite(2).topology;
    let mut store = ParamStore::new();
    let mut rng = SplitMix64::new(5);
    let heat = GraFormer::new(&mut store, "h", small_config(3136, 3, 1), &one, &mut rng).unwrap();
    let y = heat.predict(&store, &rand(&mut rng, 29, 3136, 0.01)).unwrap();
    assert_eq!(y.shape(), &[29, 3]);
    let kp = GraFormer::new(&mut store, "k", small_config(2, 3, 1), &two, &mut rng).unwrap();
    let y = kp.predict(&store, &rand(&mut rng, 50, 2, 1.0)).unwrap();
    assert_eq!(y.shape(), &[50, 3]);
    assert!(kp.predict(&store, &rand(&mut rng, 29, 2, 1.0)).is_err());

    for &t in &kp.out.thetas {
        store.set_value(t, Tensor::zeros(&[16, 3])).unwrap();
    }
    let y = kp.predict(&store, &rand(&mut rng, 50, 2, 1.0)).unwrap();
    assert!(y.data().iter().all(|&v| v == 0.0));
}

#[test]
fn config_validation() {
    assert!(GraFormerConfig { d_model: 10, num_heads: 4, ..Default::default() }.validate().is_err());
    assert!(GraFormerConfig { num_blocks: 0, ..Default::default() }.validate().is_err());
    assert!(GraFormerConfig::default().validate().is_ok());
}

fn check_params(
    store: &mut ParamStore<f64>,
    f: &dyn for<'t> Fn(&'t Tape<f64>, &ParamStore<f64>) -> Result<Var<'t, f64>, TensorError>,
) {
    let err = grad_check_params(f, store, 1e-5, Some(400), 7).unwrap();
    assert!(err < 1e-4, "{err}");
}

fn to_tensor_err(e: GraformerError) -> TensorError {
    match e {
        GraformerError::Tensor(t) => t,
        e => TensorError::Invalid { op: "graformer", msg: e.to_string() },
    }
}

#[test]
fn layer_gradients() {
    let mut rng = SplitMix64::new(6);
    let g = random_graph(&mut rng, 6);
    let x = rand(&mut rng, 6, 8, 1.0);
    let wts = rand(&mut rng, 6, 8, 1.0);
    let lt = Rc::new(g.scaled_laplacian_csr::<f64>().unwrap());

    let mut store = ParamStore::new();
    let lam = LamGconv::new(&mut store, "lam", &g, 8, 8, &mut rng);
    store.set_value(lam.logits, rand(&mut rng, 6, 6, 1.0)).unwrap();
    check_params(&mut store, &|tape, s| {
        let c = Ctx::new(tape, s);
        let y = lam.forward(&c, &tape.constant(x.clone())?).map_err(to_tensor_err)?;
        y.mul(&tape.constant(wts.clone())?)?.sum()
    });

    let mut store = ParamStore::new();
    let cheb = ChebGconv::new(&mut store, "cheb", 8, 8, 3, &mut rng);
    store.set_value(cheb.bias, rand(&mut rng, 1, 8, 1.0)).unwrap();
    check_params(&mut store, &|tape, s| {
        let c = Ctx::new(tape, s);
        let y = cheb.forward(&c, &lt, &tape.constant(x.clone())?).map_err(to_tensor_err)?;
        y.mul(&tape.constant(wts.clone())?)?.sum()
    });

    let mut store = ParamStore::new();
    let attn = GraAttention::new(&mut store, "attn", &g, 8, 2, &mut rng);
    check_params(&mut store, &|tape, s| {
        let c = Ctx::new(tape, s);
        let y = attn.forward(&c, &tape.constant(x.clone())?).map_err(to_tensor_err)?;
        y.mul(&tape.constant(wts.clone())?)?.sum()
    });

    // input gradient through attention as well
    let mut store = ParamStore::new();
    let attn = GraAttention::new(&mut store, "attn", &g, 8, 2, &mut rng);
    let err = grad_check(
        &|tape, v| {
            let c = Ctx::new(tape, &store);
            attn.forward(&c, &v[0]).map_err(to_tensor_err)?.mul(&tape.constant(wts.clone())?)?.sum()
        },
        &[x.clone()],
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn two_block_graformer_gradient() {
    let mut rng = SplitMix64::new(8);
    let g = random_graph(&mut rng, 6);
    let mut store = ParamStore::new();
    let net = GraFormer::new(&mut store, "g", small_config(4, 3, 2), &g, &mut rng).unwrap();
    let x = rand(&mut rng, 6, 4, 1.0);
    let y = rand(&mut rng, 6, 3, 1.0);
    let err = grad_check_params(
        &|tape, s| {
            let c = Ctx::new(tape, s);
            let p = net.forward(&c, &tape.constant(x.clone())?).map_err(to_tensor_err)?;
            p.mse(&tape.constant(y.clone())?)
        },
        &mut store,
        1e-5,
        Some(600),
        3,
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn lifter_descends_and_zero_loss_at_target() {
    let topo = SkeletonTemplate::composite(1).topology;
    let mut store = ParamStore::new();
    let lifter = PoseLifter::new(&mut store, small_config(6, 3, 1), &topo, 11).unwrap();
    let mut rng = SplitMix64::new(12);
    let x = rand(&mut rng, 29, 6, 1.0);
    let exact = lifter.predict(&store, &x).unwrap();
    let tape = Tape::new();
    let ctx = Ctx::new(&tape, &store);
    assert_eq!(lifter.loss(&ctx, &[(x.clone(), exact)]).unwrap().item(), 0.0);
    drop(ctx);

    let batch = vec![(x, rand(&mut rng, 29, 3, 1.0))];
    let mut opt = Optimizer::new(OptimizerConfig::adam(1e-3));
    let before = lifter.train_step(&mut store, &mut opt, &batch).unwrap();
    let tape = Tape::new();
    let after = lifter.loss(&Ctx::new(&tape, &store), &batch).unwrap().item();
    assert!(after < before, "{after} vs {before}");
}
