use std::rc::Rc;

use crate::autodiff::{CsrMatrix, ParamId, ParamStore, Tensor, Var};
use crate::graformer::{Ctx, GraformerError};
use crate::graph::{cheb_basis_sparse, GraphTopology};
use crate::rng::SplitMix64;
use crate::scalar::Scalar;

/// Initial LAM logit on edges and the diagonal; the negative value is used
/// everywhere else.
pub const LAM_EDGE_LOGIT: f64 = 2.0;

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
        rng: &mut SplitMix64,
    ) -> Self {
        let w = store.add_xavier(format!("{name}.w"), d_in, d_out, rng);
        let b = bias.then(|| store.add(format!("{name}.b"), Tensor::zeros(&[1, d_out])));
        Self { w, b, d_in, d_out }
    }

    pub fn forward<'t, T: Scalar>(&self, ctx: &Ctx<'_, 't, T>, x: &Var<'t, T>) -> Result<Var<'t, T>, GraformerError> {
        let y = x.matmul(&ctx.p(self.w)?)?;
        Ok(match self.b {
            Some(b) => y.add_row(&ctx.p(b)?)?,
            None => y,
        })
    }
}

/// Per-row normalization with a learned gain and offset.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub offset: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Self {
        Self {
            gain: store.add(format!("{name}.gain"), Tensor::ones(&[1, dim])),
            offset: store.add(format!("{name}.offset"), Tensor::zeros(&[1, dim])),
        }
    }

    pub fn forward<'t, T: Scalar>(&self, ctx: &Ctx<'_, 't, T>, x: &Var<'t, T>) -> Result<Var<'t, T>, GraformerError> {
        Ok(x
            .layer_norm(T::of(LN_EPS))?
            .mul_row(&ctx.p(self.gain)?)?
            .add_row(&ctx.p(self.offset)?)?)
    }
}

/// Graph convolution with a learnable adjacency: `sigmoid((A + A^T) / 2) X W`.
#[derive(Debug, Clone)]
pub struct LamGconv {
    pub logits: ParamId,
    pub w: ParamId,
    pub num_nodes: usize,
}

impl LamGconv {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        topology: &GraphTopology,
        d_in: usize,
        d_out: usize,
        rng: &mut SplitMix64,
    ) -> Self {
        let n = topology.num_nodes();
        let mut logits = Tensor::full(&[n, n], T::of(-LAM_EDGE_LOGIT));
        for i in 0..n {
            logits.set(i, i, T::of(LAM_EDGE_LOGIT));
            for &j in topology.neighbors(i) {
                logits.set(i, j, T::of(LAM_EDGE_LOGIT));
            }
        }
        let logits = store.add(format!("{name}.adj"), logits);
        let w = store.add_xavier(format!("{name}.w"), d_in, d_out, rng);
        Self { logits, w, num_nodes: n }
    }

    /// Effective adjacency, computed once per tape.
    pub fn adjacency<'t, T: Scalar>(&self, ctx: &Ctx<'_, 't, T>) -> Result<Var<'t, T>, GraformerError> {
        Ok(ctx.derived(self.logits, || {
            let a = ctx.p(self.logits)?;
            a.add(&a.transpose()?)?.scale(T::of(0.5))?.sigmoid()
        })?)
    }

    pub fn forward<'t, T: Scalar>(&self, ctx: &Ctx<'_, 't, T>, x: &Var<'t, T>) -> Result<Var<'t, T>, GraformerError> {
        if x.shape()[0] != self.num_nodes {
            return Err(GraformerError::Shape {
                what: "lam-gconv rows",
                expected: vec![self.num_nodes],
                got: x.shape(),
            });
        }
        Ok(self.adjacency(ctx)?.matmul(x)?.matmul(&ctx.p(self.w)?)?)
    }
}

/// `sum_k T_k(L~) X theta_k + bias`.
#[derive(Debug, Clone)]
pub struct ChebGconv {
    pub thetas: Vec<ParamId>,
    pub bias: ParamId,
}

impl ChebGconv {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        d_in: usize,
        d_out: usize,
        order: usize,
        rng: &mut SplitMix64,
    ) -> Self {
        Self::with_gain(store, name, d_in, d_out, order, 1.0, rng)
    }

    /// Glorot-uniform weights multiplied by `gain`.
    pub fn with_gain<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        d_in: usize,
        d_out: usize,
        order: usize,
        gain: f64,
        rng: &mut SplitMix64,
    ) -> Self {
        let a = gain * (6.0 / (d_in + d_out) as f64).sqrt();
        let thetas = (0..order)
            .map(|k| {
                let w = Tensor::new(&[d_in, d_out], rng.uniform_vec(d_in * d_out, -a, a)).expect("sized");
                store.add(format!("{name}.theta{k}"), w)
            })
            .collect();
        let bias = store.add(format!("{name}.b"), Tensor::zeros(&[1, d_out]));
        Self { thetas, bias }
    }

    pub fn forward<'t, T: Scalar>(
        &self,
        ctx: &Ctx<'_, 't, T>,
        scaled_laplacian: &Rc<CsrMatrix<T>>,
        x: &Var<'t, T>,
    ) -> Result<Var<'t, T>, GraformerError> {
        if x.shape()[0] != scaled_laplacian.rows() {
            return Err(GraformerError::Shape {
                what: "cheb-gconv rows",
                expected: vec![scaled_laplacian.rows()],
                got: x.shape(),
            });
        }
        let basis = cheb_basis_sparse(scaled_laplacian, x, self.thetas.len())?;
        let mut y = basis[0].matmul(&ctx.p(self.thetas[0])?)?;
        for (t, &theta) in basis.iter().zip(&self.thetas).skip(1) {
            y = y.add(&t.matmul(&ctx.p(theta)?)?)?;
        }
        Ok(y.add_row(&ctx.p(self.bias)?)?)
    }
}

/// Multi-head self-attention over nodes; the head outputs are mixed by a
/// LAM-GConv instead of a plain output projection. Includes the residual.
#[derive(Debug, Clone)]
pub struct GraAttention {
    pub norm: LayerNorm,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub lam: LamGconv,
    pub heads: usize,
}

impl GraAttention {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        topology: &GraphTopology,
        d_model: usize,
        heads: usize,
        rng: &mut SplitMix64,
    ) -> Self {
        Self {
            norm: LayerNorm::new(store, &format!("{name}.norm"), d_model),
            q: Linear::new(store, &format!("{name}.q"), d_model, d_model, true, rng),
            k: Linear::new(store, &format!("{name}.k"), d_model, d_model, true, rng),
            v: Linear::new(store, &format!("{name}.v"), d_model, d_model, true, rng),
            lam: LamGconv::new(store, &format!("{name}.lam"), topology, d_model, d_model, rng),
            heads,
        }
    }

    /// Output and the per-head attention matrices.
    pub fn forward_with_weights<'t, T: Scalar>(
        &self,
        ctx: &Ctx<'_, 't, T>,
        x: &Var<'t, T>,
    ) -> Result<(Var<'t, T>, Vec<Var<'t, T>>), GraformerError> {
        let h = self.norm.forward(ctx, x)?;
        let (q, k, v) = (self.q.forward(ctx, &h)?, self.k.forward(ctx, &h)?, self.v.forward(ctx, &h)?);
        let d = self.q.d_out;
        let dh = d / self.heads;
        let scale = T::of(1.0 / (dh as f64).sqrt());
        let mut outs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for head in 0..self.heads {
            let (a, b) = (head * dh, (head + 1) * dh);
            let qh = q.slice(1, a, b)?;
            let kh = k.slice(1, a, b)?;
            let att = qh.matmul(&kh.transpose()?)?.scale(scale)?.softmax()?;
            outs.push(att.matmul(&v.slice(1, a, b)?)?);
            weights.push(att);
        }
        let heads = if outs.len() == 1 { outs[0] } else { Var::concat(&outs, 1)? };
        Ok((self.lam.forward(ctx, &heads)?.add(x)?, weights))
    }

    pub fn forward<'t, T: Scalar>(&self, ctx: &Ctx<'_, 't, T>, x: &Var<'t, T>) -> Result<Var<'t, T>, GraformerError> {
        Ok(self.forward_with_weights(ctx, x)?.0)
    }
}
