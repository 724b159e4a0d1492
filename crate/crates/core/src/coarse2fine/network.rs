use crate::autodiff::{Optimizer, ParamId, ParamStore, Tape, Tensor, Var};
use crate::coarse2fine::{Coarse2FineError, StagePlan};
use crate::graformer::{optimize_step, Ctx, GraFormer, GraformerError, Linear};
use crate::metrics::{photometric_loss, CameraIntrinsics, Image};
use crate::rng::SplitMix64;
use crate::scalar::Scalar;

/// Learned dense prolongation `Y = U X` from `v_in` to `v_out` nodes.
#[derive(Debug, Clone)]
pub struct UnpoolLayer {
    pub u: ParamId,
    pub v_in: usize,
    pub v_out: usize,
}

impl UnpoolLayer {
    /// `U = 1/v_in + Uniform(±sqrt(6 / (v_in + v_out)))`: every output starts
    /// near the mean of the inputs plus a Glorot-scale random mix.
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        v_in: usize,
        v_out: usize,
        rng: &mut SplitMix64,
    ) -> Result<Self, Coarse2FineError> {
        if v_out <= v_in {
            return Err(Coarse2FineError::Ladder(format!("unpool {v_in} -> {v_out} does not grow")));
        }
        let a = (6.0 / (v_in + v_out) as f64).sqrt();
        let mean = 1.0 / v_in as f64;
        let data = (0..v_in * v_out).map(|_| T::of(mean + rng.uniform(-a, a))).collect();
        let u = store.add(name, Tensor::new(&[v_out, v_in], data)?);
        Ok(Self { u, v_in, v_out })
    }

    /// Layer with a given matrix.
    pub fn with_matrix<T: Scalar>(store: &mut ParamStore<T>, name: &str, u: Tensor<T>) -> Result<Self, Coarse2FineError> {
        if u.rank() != 2 {
            return Err(Coarse2FineError::Ladder(format!("unpool matrix of shape {:?}", u.shape())));
        }
        let (v_out, v_in) = (u.rows(), u.cols());
        Ok(Self {
            u: store.add(name, u),
            v_in,
            v_out,
        })
    }

    pub fn forward<'t, T: Scalar>(&self, ctx: &Ctx<'_, 't, T>, x: &Var<'t, T>) -> Result<Var<'t, T>, Coarse2FineError> {
        let rows = x.shape()[0];
        if x.shape().len() != 2 || rows != self.v_in {
            return Err(Coarse2FineError::Graformer(GraformerError::Shape {
                what: "unpool input",
                expected: vec![self.v_in, x.shape().get(1).copied().unwrap_or(0)],
                got: x.shape(),
            }));
        }
        Ok(ctx.p(self.u)?.matmul(x)?)
    }
}

/// Predicted vertices and, for textured plans, per-vertex colors in (0, 1).
#[derive(Debug, Clone, Copy)]
pub struct ShapeOutput<'t, T: Scalar> {
    pub vertices: Var<'t, T>,
    pub rgb: Option<Var<'t, T>>,
}

/// Alternating GraFormer and unpooling stages, then a per-node linear map to
/// coordinates (and colors).
#[derive(Debug, Clone)]
pub struct ShapeNetwork<T: Scalar> {
    pub plan: StagePlan,
    pub stages: Vec<GraFormer<T>>,
    pub unpools: Vec<UnpoolLayer>,
    pub head: Linear,
}

impl<T: Scalar> ShapeNetwork<T> {
    pub fn new(store: &mut ParamStore<T>, plan: StagePlan, seed: u64) -> Result<Self, Coarse2FineError> {
        plan.validate()?;
        let mut rng = SplitMix64::new(seed);
        let counts = plan.node_counts();
        let mut stages = Vec::with_capacity(plan.num_stages());
        let mut unpools = Vec::with_capacity(plan.num_stages());
        for s in 0..plan.num_stages() {
            let topo = &plan.topologies[s];
            stages.push(GraFormer::new(store, &format!("shape.stage{s}"), plan.stage_config(s), topo, &mut rng)?);
            unpools.push(UnpoolLayer::new(store, &format!("shape.unpool{s}"), counts[s], counts[s + 1], &mut rng)?);
        }
        let width = *plan.widths.last().expect("validated");
        let head = Linear::new(store, "shape.head", width, plan.output_dim(), true, &mut rng);
        Ok(Self {
            plan,
            stages,
            unpools,
            head,
        })
    }

    /// `N0 x input_dim` pose-graph features to the output mesh. The node
    /// ladder is checked at every stage boundary.
    pub fn forward<'t>(&self, ctx: &Ctx<'_, 't, T>, x: &Var<'t, T>) -> Result<ShapeOutput<'t, T>, Coarse2FineError> {
        let counts = self.plan.node_counts();
        let want = vec![counts[0], self.plan.input_dim];
        if x.shape() != want {
            return Err(Coarse2FineError::Graformer(GraformerError::Shape {
                what: "shape network input",
                expected: want,
                got: x.shape(),
            }));
        }
        let mut h = *x;
        for (s, (stage, unpool)) in self.stages.iter().zip(&self.unpools).enumerate() {
            h = stage.forward(ctx, &h)?;
            h = unpool.forward(ctx, &h)?;
            if h.shape()[0] != counts[s + 1] {
                return Err(Coarse2FineError::Ladder(format!(
                    "stage {s} produced {} nodes, expected {}",
                    h.shape()[0],
                    counts[s + 1]
                )));
            }
        }
        let out = self.head.forward(ctx, &h)?;
        if !self.plan.textured {
            return Ok(ShapeOutput {
                vertices: out,
                rgb: None,
            });
        }
        Ok(ShapeOutput {
            vertices: out.slice(1, 0, 3)?,
            rgb: Some(out.slice(1, 3, 6)?.sigmoid()?),
        })
    }

    /// Untracked forward pass: vertices and optional colors.
    pub fn predict(&self, store: &ParamStore<T>, x: &Tensor<T>) -> Result<(Tensor<T>, Option<Tensor<T>>), Coarse2FineError> {
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, store);
        let out = self.forward(&ctx, &tape.constant(x.clone())?)?;
        Ok((
            (*out.vertices.value()).clone(),
            out.rgb.map(|c| (*c.value()).clone()),
        ))
    }

    /// Mean over the batch of `L_V (+ L_photo)`, with per-term values.
    pub fn loss<'t>(
        &self,
        ctx: &Ctx<'_, 't, T>,
        batch: &[ShapeExample<T>],
    ) -> Result<(Var<'t, T>, ShapeLoss), Coarse2FineError> {
        if batch.is_empty() {
            return Err(Coarse2FineError::Config("empty batch".into()));
        }
        let inv = T::of(1.0 / batch.len() as f64);
        let mut terms: Vec<Var<'t, T>> = Vec::with_capacity(2 * batch.len());
        let mut report = ShapeLoss::default();
        for ex in batch {
            let out = self.forward(ctx, &ctx.tape.constant(ex.input.clone())?)?;
            if out.vertices.shape() != ex.vertices.shape() {
                return Err(Coarse2FineError::Graformer(GraformerError::Shape {
                    what: "vertex target",
                    expected: out.vertices.shape(),
                    got: ex.vertices.shape().to_vec(),
                }));
            }
            let lv = out.vertices.mse(&ctx.tape.constant(ex.vertices.clone())?)?.scale(inv)?;
            report.vertex += lv.item().as_f64();
            terms.push(lv);
            if let Some(rgb) = out.rgb {
                let p = ex.photo.as_ref().ok_or(crate::metrics::MetricsError::MissingPhotoInputs)?;
                let pl = photometric_loss(&p.image, &p.intrinsics, &p.vertices_camera, &rgb)?;
                let lp = pl.loss.scale(inv)?;
                report.photo += lp.item().as_f64();
                report.visible_vertices += pl.visible;
                terms.push(lp);
            }
        }
        if !report.vertex.is_finite() || !report.photo.is_finite() {
            return Err(Coarse2FineError::Graformer(GraformerError::NonFinite(format!(
                "L_V = {}, L_photo = {}",
                report.vertex, report.photo
            ))));
        }
        let mut total = terms[0];
        for t in &terms[1..] {
            total = total.add(t)?;
        }
        report.total = total.item().as_f64();
        Ok((total, report))
    }
}

/// Photometric supervision of one sample.
#[derive(Debug, Clone)]
pub struct PhotoTarget<T> {
    pub image: Image<T>,
    pub intrinsics: CameraIntrinsics,
    /// Ground-truth vertices in camera space (mm).
    pub vertices_camera: Tensor<T>,
}

/// One training sample of the shape network.
#[derive(Debug, Clone)]
pub struct ShapeExample<T> {
    /// `N0 x input_dim` pose-graph features.
    pub input: Tensor<T>,
    /// Target vertices in network units.
    pub vertices: Tensor<T>,
    pub photo: Option<PhotoTarget<T>>,
}

/// Batch-mean loss terms of one step.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct ShapeLoss {
    pub total: f64,
    pub vertex: f64,
    pub photo: f64,
    pub visible_vertices: usize,
}

/// Forward, backward and one optimizer step on `batch`.
pub fn shape_train_step<T: Scalar>(
    net: &ShapeNetwork<T>,
    store: &mut ParamStore<T>,
    opt: &mut Optimizer<T>,
    batch: &[ShapeExample<T>],
) -> Result<ShapeLoss, Coarse2FineError> {
    let mut report = None;
    let mut failure = None;
    let result = optimize_step(store, opt, |ctx| match net.loss(ctx, batch) {
        Ok((l, r)) => {
            report = Some(r);
            Ok(l)
        }
        Err(Coarse2FineError::Graformer(e)) => Err(e),
        Err(e) => {
            let msg = e.to_string();
            failure = Some(e);
            Err(GraformerError::Config(msg))
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    result?;
    Ok(report.expect("loss computed"))
}
