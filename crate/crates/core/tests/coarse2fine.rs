use proptest::prelude::*;

use thor_core::autodiff::*;
use thor_core::coarse2fine::*;
use thor_core::graformer::{Ctx, GraFormerConfig};
use thor_core::graph::GraphTopology;
use thor_core::metrics::{CameraIntrinsics, Image};
use thor_core::rng::SplitMix64;

fn rand(rng: &mut SplitMix64, r: usize, c: usize, std: f64) -> Tensor<f64> {
    Tensor::new(&[r, c], rng.normal_vec(r * c, std)).unwrap()
}

// ring plus random chords, so every part is connected
fn part_graph(rng: &mut SplitMix64, n: usize) -> GraphTopology {
    let mut e: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).filter(|&(a, b)| a != b).collect();
    for i in 0..n {
        for j in i + 2..n {
            if rng.next_f64() < 0.2 {
                e.push((i, j));
            }
        }
    }
    GraphTopology::new(n, e).unwrap()
}

fn params_fn<F>(f: F) -> F
where
    F: for<'t> Fn(&'t Tape<f64>, &ParamStore<f64>) -> Result<Var<'t, f64>, TensorError>,
{
    f
}

const MINI_HAND: [usize; 4] = [3, 5, 9, 17];
const MINI_OBJECT: [usize; 4] = [2, 4, 7, 13];

fn mini_plan(textured: bool, attention: bool, input_dim: usize) -> StagePlan {
    let mut rng = SplitMix64::new(11);
    let topologies = (0..4)
        .map(|l| {
            let h = part_graph(&mut rng, MINI_HAND[l]);
            let o = part_graph(&mut rng, MINI_OBJECT[l]);
            GraphTopology::block_diagonal(&[&h, &o]).unwrap()
        })
        .collect();
    let gf = GraFormerConfig {
        num_heads: 2,
        num_blocks: 1,
        cheb_order: 2,
        attention,
        ..Default::default()
    };
    StagePlan::new(1, textured, MINI_HAND.to_vec(), MINI_OBJECT.to_vec(), topologies, vec![12, 8, 6], input_dim, gf)
        .unwrap()
}

#[test]
fn unpool_examples() {
    let mut rng = SplitMix64::new(3);
    let x = rand(&mut rng, 4, 3, 1.0);
    let mut store = ParamStore::<f64>::new();
    let pick = [2, 0, 3, 3, 1, 2];
    let dup = Tensor::from_fn(6, 4, |i, j| if pick[i] == j { 1.0 } else { 0.0 });
    let dup = UnpoolLayer::with_matrix(&mut store, "dup", dup).unwrap();
    let zero = UnpoolLayer::with_matrix(&mut store, "zero", Tensor::zeros(&[6, 4])).unwrap();
    let rnd = UnpoolLayer::new(&mut store, "rnd", 4, 6, &mut rng).unwrap();
    assert!(UnpoolLayer::new(&mut store, "shrink", 4, 4, &mut rng).is_err());

    let tape = Tape::new();
    let ctx = Ctx::new(&tape, &store);
    let xv = tape.constant(x.clone()).unwrap();
    let y = dup.forward(&ctx, &xv).unwrap().value();
    for (r, &src) in pick.iter().enumerate() {
        assert_eq!(y.row(r), x.row(src));
    }
    assert!(zero.forward(&ctx, &xv).unwrap().value().data().iter().all(|&v| v == 0.0));

    let y = rnd.forward(&ctx, &xv).unwrap().value();
    let u = store.value(rnd.u);
    for i in 0..6 {
        for j in 0..3 {
            let mut acc = 0.0;
            for k in 0..4 {
                acc += u.at(i, k) * x.at(k, j);
            }
            assert!((y.at(i, j) - acc).abs() < 1e-12);
        }
    }
    assert!(rnd.forward(&ctx, &tape.constant(Tensor::zeros(&[5, 3])).unwrap()).is_err());
}

fn photo_example(rng: &mut SplitMix64, plan: &StagePlan) -> ShapeExample<f64> {
    let counts = plan.node_counts();
    let v = counts[3];
    let k = CameraIntrinsics::new(40.0, 40.0, 16.0, 16.0, 32, 32).unwrap();
    let image = Image::from_fn(32, 32, |u, w| [u as f64 / 32.0, w as f64 / 32.0, 0.25]);
    let cam = Tensor::from_fn(v, 3, |i, c| match c {
        2 => 300.0 + 10.0 * i as f64,
        c => 90.0 * (i as f64 * (1.7 + c as f64)).sin(),
    });
    ShapeExample {
        input: rand(rng, counts[0], plan.input_dim, 1.0),
        vertices: rand(rng, v, 3, 0.5),
        photo: Some(PhotoTarget {
            image,
            intrinsics: k,
            vertices_camera: cam,
        }),
    }
}

#[test]
fn miniature_plan_gradients() {
    let plan = mini_plan(true, true, 7);
    assert_eq!(plan.node_counts(), vec![5, 9, 16, 30]);
    let mut store = ParamStore::<f64>::new();
    let net = ShapeNetwork::new(&mut store, plan.clone(), 5).unwrap();
    let mut rng = SplitMix64::new(8);
    let batch = vec![photo_example(&mut rng, &plan), photo_example(&mut rng, &plan)];
    let f = params_fn(|tape, store| {
        let ctx = Ctx::new(tape, store);
        net.loss(&ctx, &batch).map(|(l, _)| l).map_err(|e| TensorError::Invalid {
            op: "shape loss",
            msg: e.to_string(),
        })
    });
    let err = grad_check_params(&f, &mut store, 1e-6, Some(400), 3).unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn paper_sized_plans() {
    let levels = MeshLevels::canonical().unwrap();
    assert_eq!(levels.object.iter().map(|l| l.vertices).collect::<Vec<_>>(), vec![64, 256, 1000]);
    let gf = GraFormerConfig {
        num_heads: 2,
        num_blocks: 1,
        ..Default::default()
    };
    let one = build_stage_plan(1, false, &levels, 3, &[8, 6, 4], 5184, gf.clone()).unwrap();
    assert_eq!(one.node_counts(), vec![29, 113, 450, 1778]);
    let mut store = ParamStore::<f64>::new();
    let net = ShapeNetwork::new(&mut store, one, 1).unwrap();
    let (v, rgb) = net.predict(&store, &Tensor::zeros(&[29, 5184])).unwrap();
    assert_eq!((v.shape(), rgb.is_none()), (&[1778, 3][..], true));
    assert!(net.predict(&store, &Tensor::zeros(&[29, 2050])).is_err());

    let two = build_stage_plan(2, true, &levels, 3, &[10, 8, 6], 2050, gf.clone()).unwrap();
    assert_eq!(*two.node_counts().last().unwrap(), 2556);
    let mut store = ParamStore::<f64>::new();
    let net = ShapeNetwork::new(&mut store, two, 1).unwrap();
    let mut rng = SplitMix64::new(2);
    let (v, rgb) = net.predict(&store, &rand(&mut rng, 50, 2050, 1.0)).unwrap();
    assert_eq!((v.shape(), rgb.unwrap().shape()), (&[2556, 3][..], &[2556, 3][..]));

    for (stages, counts) in [(1, vec![29, 1778]), (2, vec![29, 450, 1778])] {
        let p = build_stage_plan(1, false, &levels, stages, &[8, 6, 4], 5184, gf.clone()).unwrap();
        assert_eq!(p.node_counts(), counts);
        assert_eq!(p.widths.len(), stages);
    }

    let mut wrong = levels.clone();
    wrong.hand[0] = wrong.hand[1].clone();
    assert!(matches!(
        build_stage_plan(1, false, &wrong, 3, &[8, 6, 4], 5184, gf.clone()),
        Err(Coarse2FineError::Ladder(_))
    ));
    let mut wrong = levels.clone();
    wrong.object.swap(0, 1);
    assert!(build_stage_plan(1, false, &wrong, 3, &[8, 6, 4], 5184, gf.clone()).is_err());
    assert!(build_stage_plan(1, false, &levels, 3, &[8, 8, 4], 5184, gf.clone()).is_err());
    assert!(build_stage_plan(1, false, &levels, 3, &[8, 6, 2], 5184, gf).is_err());
}

#[test]
fn graph_convolutions_keep_parts_apart() {
    let plan = mini_plan(false, false, 4);
    let mut store = ParamStore::<f64>::new();
    let net = ShapeNetwork::new(&mut store, plan.clone(), 9).unwrap();
    let mut rng = SplitMix64::new(4);
    let hand = MINI_HAND[0];
    let x = rand(&mut rng, 5, 4, 1.0);
    let zeroed = Tensor::from_fn(5, 4, |i, j| if i < hand { x.at(i, j) } else { 0.0 });
    let stage = &net.stages[0];
    let (a, b) = (stage.predict(&store, &x).unwrap(), stage.predict(&store, &zeroed).unwrap());
    for r in 0..hand {
        assert_eq!(a.row(r), b.row(r));
    }
    assert_ne!(a.row(hand), b.row(hand));

    // attention lets the object reach the hand rows
    let mut store = ParamStore::<f64>::new();
    let net = ShapeNetwork::new(&mut store, mini_plan(false, true, 4), 9).unwrap();
    let stage = &net.stages[0];
    let (a, b) = (stage.predict(&store, &x).unwrap(), stage.predict(&store, &zeroed).unwrap());
    assert!((0..hand).any(|r| a.row(r) != b.row(r)));
}

#[test]
fn plan_json_roundtrip_reproduces_outputs() {
    let plan = mini_plan(true, true, 6);
    let back = StagePlan::from_json(&plan.to_json().unwrap()).unwrap();
    assert_eq!(back, plan);
    let (mut s1, mut s2) = (ParamStore::new(), ParamStore::new());
    let n1 = ShapeNetwork::new(&mut s1, plan, 21).unwrap();
    let n2 = ShapeNetwork::new(&mut s2, back, 21).unwrap();
    let x = rand(&mut SplitMix64::new(1), 5, 6, 1.0);
    let (v1, c1) = n1.predict(&s1, &x).unwrap();
    let (v2, c2) = n2.predict(&s2, &x).unwrap();
    assert!(v1.data().iter().zip(v2.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    assert_eq!(c1, c2);
}

#[test]
fn exact_prediction_gives_zero_loss() {
    let plan = mini_plan(false, true, 4);
    let mut store = ParamStore::<f64>::new();
    let net = ShapeNetwork::new(&mut store, plan, 2).unwrap();
    store.set_value(net.head.w, Tensor::zeros(&[6, 3])).unwrap();
    store.set_value(net.head.b.unwrap(), Tensor::from_rows(&[[0.1, -0.2, 0.3]])).unwrap();
    let ex = ShapeExample {
        input: rand(&mut SplitMix64::new(5), 5, 4, 1.0),
        vertices: Tensor::from_fn(30, 3, |_, j| [0.1, -0.2, 0.3][j]),
        photo: None,
    };
    let tape = Tape::new();
    let (l, r) = net.loss(&Ctx::new(&tape, &store), &[ex]).unwrap();
    assert_eq!((l.item(), r.vertex, r.photo), (0.0, 0.0, 0.0));
}

#[test]
fn missing_photo_target_is_an_error() {
    let plan = mini_plan(true, true, 4);
    let mut store = ParamStore::<f64>::new();
    let net = ShapeNetwork::new(&mut store, plan, 2).unwrap();
    let ex = ShapeExample {
        input: Tensor::zeros(&[5, 4]),
        vertices: Tensor::zeros(&[30, 3]),
        photo: None,
    };
    let mut opt = Optimizer::new(OptimizerConfig::adam(1e-3));
    assert!(matches!(
        shape_train_step(&net, &mut store, &mut opt, &[ex]),
        Err(Coarse2FineError::Metrics(_))
    ));
}

#[test]
fn single_sample_overfit() {
    let plan = mini_plan(false, true, 4);
    let mut store = ParamStore::<f64>::new();
    let net = ShapeNetwork::new(&mut store, plan, 6).unwrap();
    let mut rng = SplitMix64::new(12);
    let ex = ShapeExample {
        input: rand(&mut rng, 5, 4, 1.0),
        vertices: rand(&mut rng, 30, 3, 0.5),
        photo: None,
    };
    let mut opt = Optimizer::new(OptimizerConfig::adam(1e-3));
    let first = shape_train_step(&net, &mut store, &mut opt, std::slice::from_ref(&ex)).unwrap();
    for _ in 1..1000 {
        shape_train_step(&net, &mut store, &mut opt, std::slice::from_ref(&ex)).unwrap();
    }
    let (v, _) = net.predict(&store, &ex.input).unwrap();
    let worst = (0..30)
        .map(|r| {
            let d: f64 = (0..3).map(|c| (v.at(r, c) - ex.vertices.at(r, c)).powi(2)).sum();
            d.sqrt()
        })
        .fold(0.0, f64::max);
    // network units are 100 mm; 1 mm is 0.01
    assert!(worst < 0.01, "first loss {} worst {worst}", first.total);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn colors_stay_in_open_unit_interval(seed in any::<u64>(), scale in 0.1f64..100.0) {
        let plan = mini_plan(true, true, 3);
        let mut store = ParamStore::<f64>::new();
        let net = ShapeNetwork::new(&mut store, plan, seed).unwrap();
        let x = rand(&mut SplitMix64::new(seed ^ 1), 5, 3, scale);
        let (_, rgb) = net.predict(&store, &x).unwrap();
        prop_assert!(rgb.unwrap().data().iter().all(|&c| c > 0.0 && c < 1.0));
    }
}
