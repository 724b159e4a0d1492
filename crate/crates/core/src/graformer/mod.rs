//! The GraFormer: attention over graph nodes with a learnable-adjacency
//! graph convolution, followed by pairs of Chebyshev graph convolutions.
//! Also hosts the pose lifter built from it.

mod layers;
mod lifter;

use std::cell::RefCell;
use std::rc::Rc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{
    CsrMatrix, Optimizer, ParamId, ParamStore, Tape, Tensor, TensorError, Var,
};
use crate::graph::{GraphError, GraphTopology};
use crate::rng::SplitMix64;
use crate::scalar::Scalar;

pub use layers::{ChebGconv, GraAttention, LamGconv, LayerNorm, Linear, LAM_EDGE_LOGIT};
pub use lifter::PoseLifter;

/// Init gain of the output layer. Small initial outputs let Adam at
/// lr 1e-4 fit targets of order one within a few hundred steps.
pub const OUTPUT_GAIN: f64 = 0.1;

#[derive(Debug, Error)]
pub enum GraformerError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{what}: expected {expected:?}, got {got:?}")]
    Shape {
        what: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("non-finite loss: {0}")]
    NonFinite(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraFormerConfig {
    pub d_model: usize,
    pub num_heads: usize,
    pub num_blocks: usize,
    pub cheb_order: usize,
    pub input_dim: usize,
    pub output_dim: usize,
    /// Set to false to drop the GraAttention layers (ablations and tests).
    pub attention: bool,
}

impl Default for GraFormerConfig {
    fn default() -> Self {
        Self {
            d_model: 128,
            num_heads: 4,
            num_blocks: 5,
            cheb_order: 2,
            input_dim: 3136,
            output_dim: 3,
            attention: true,
        }
    }
}

impl GraFormerConfig {
    pub fn validate(&self) -> Result<(), GraformerError> {
        let fields = [
            ("d_model", self.d_model),
            ("num_heads", self.num_heads),
            ("num_blocks", self.num_blocks),
            ("cheb_order", self.cheb_order),
            ("input_dim", self.input_dim),
            ("output_dim", self.output_dim),
        ];
        if let Some((name, _)) = fields.iter().find(|f| f.1 == 0) {
            return Err(GraformerError::Config(format!("{name} must be positive")));
        }
        if self.d_model % self.num_heads != 0 {
            return Err(GraformerError::Config(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.num_heads
            )));
        }
        Ok(())
    }
}

/// Binds parameters to one tape and memoizes values derived from them, so a
/// batch shares a single parameter node (and e.g. one LAM adjacency).
pub struct Ctx<'s, 't, T: Scalar> {
    pub tape: &'t Tape<T>,
    pub store: &'s ParamStore<T>,
    bound: RefCell<Vec<Option<Var<'t, T>>>>,
    derived: RefCell<Vec<Option<Var<'t, T>>>>,
}

impl<'s, 't, T: Scalar> Ctx<'s, 't, T> {
    pub fn new(tape: &'t Tape<T>, store: &'s ParamStore<T>) -> Self {
        Self {
            tape,
            store,
            bound: RefCell::new(vec![None; store.len()]),
            derived: RefCell::new(vec![None; store.len()]),
        }
    }

    pub fn p(&self, id: ParamId) -> Result<Var<'t, T>, TensorError> {
        if let Some(v) = self.bound.borrow()[id.index()] {
            return Ok(v);
        }
        let v = self.tape.param(self.store, id)?;
        self.bound.borrow_mut()[id.index()] = Some(v);
        Ok(v)
    }

    /// Value computed once per tape from parameter `key`.
    pub fn derived(
        &self,
        key: ParamId,
        f: impl FnOnce() -> Result<Var<'t, T>, TensorError>,
    ) -> Result<Var<'t, T>, TensorError> {
        if let Some(v) = self.derived.borrow()[key.index()] {
            return Ok(v);
        }
        let v = f()?;
        self.derived.borrow_mut()[key.index()] = Some(v);
        Ok(v)
    }
}

/// Pre-norm Chebyshev pair with a residual: `x + C2(gelu(C1(LN(x))))`.
#[derive(Debug, Clone)]
pub struct GraFormerBlock {
    pub attention: Option<GraAttention>,
    pub norm: LayerNorm,
    pub cheb1: ChebGconv,
    pub cheb2: ChebGconv,
}

/// Linear embedding, `num_blocks` x (GraAttention, ChebGConv pair) and an
/// output LayerNorm plus ChebGConv.
#[derive(Debug, Clone)]
pub struct GraFormer<T: Scalar> {
    pub config: GraFormerConfig,
    pub embed: Linear,
    pub blocks: Vec<GraFormerBlock>,
    pub out_norm: LayerNorm,
    pub out: ChebGconv,
    laplacian: Rc<CsrMatrix<T>>,
    num_nodes: usize,
}

impl<T: Scalar> GraFormer<T> {
    pub fn new(
        store: &mut ParamStore<T>,
        prefix: &str,
        config: GraFormerConfig,
        topology: &GraphTopology,
        rng: &mut SplitMix64,
    ) -> Result<Self, GraformerError> {
        config.validate()?;
        let d = config.d_model;
        let k = config.cheb_order;
        let embed = Linear::new(store, &format!("{prefix}.embed"), config.input_dim, d, true, rng);
        let mut blocks = Vec::with_capacity(config.num_blocks);
        for b in 0..config.num_blocks {
            let p = format!("{prefix}.block{b}");
            let attention = config
                .attention
                .then(|| GraAttention::new(store, &format!("{p}.attn"), topology, d, config.num_heads, rng));
            blocks.push(GraFormerBlock {
                attention,
                norm: LayerNorm::new(store, &format!("{p}.norm"), d),
                cheb1: ChebGconv::new(store, &format!("{p}.cheb1"), d, d, k, rng),
                cheb2: ChebGconv::new(store, &format!("{p}.cheb2"), d, d, k, rng),
            });
        }
        let out_norm = LayerNorm::new(store, &format!("{prefix}.out_norm"), d);
        let out = ChebGconv::with_gain(store, &format!("{prefix}.out"), d, config.output_dim, k, OUTPUT_GAIN, rng);
        Ok(Self {
            config,
            embed,
            blocks,
            out_norm,
            out,
            laplacian: Rc::new(topology.scaled_laplacian_csr()?),
            num_nodes: topology.num_nodes(),
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn laplacian(&self) -> &Rc<CsrMatrix<T>> {
        &self.laplacian
    }

    /// `N x input_dim` node features to `N x output_dim`.
    pub fn forward<'t>(&self, ctx: &Ctx<'_, 't, T>, x: &Var<'t, T>) -> Result<Var<'t, T>, GraformerError> {
        let want = vec![self.num_nodes, self.config.input_dim];
        if x.shape() != want {
            return Err(GraformerError::Shape {
                what: "graformer input",
                expected: want,
                got: x.shape(),
            });
        }
        let mut h = self.embed.forward(ctx, x)?;
        for block in &self.blocks {
            if let Some(attn) = &block.attention {
                h = attn.forward(ctx, &h)?;
            }
            let y = block.norm.forward(ctx, &h)?;
            let y = block.cheb1.forward(ctx, &self.laplacian, &y)?.gelu()?;
            let y = block.cheb2.forward(ctx, &self.laplacian, &y)?;
            h = h.add(&y)?;
        }
        let h = self.out_norm.forward(ctx, &h)?;
        self.out.forward(ctx, &self.laplacian, &h)
    }

    /// Untracked forward pass.
    pub fn predict(&self, store: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>, GraformerError> {
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, store);
        let xv = tape.constant(x.clone())?;
        Ok((*self.forward(&ctx, &xv)?.value()).clone())
    }
}

/// One optimizer step on the loss built by `loss`. Returns the loss value
/// and leaves the store untouched if the loss is not finite.
pub fn optimize_step<T: Scalar>(
    store: &mut ParamStore<T>,
    opt: &mut Optimizer<T>,
    loss: impl for<'t> FnOnce(&Ctx<'_, 't, T>) -> Result<Var<'t, T>, GraformerError>,
) -> Result<f64, GraformerError> {
    let tape = Tape::new();
    let l = {
        let ctx = Ctx::new(&tape, store);
        match loss(&ctx) {
            Ok(l) => l,
            Err(GraformerError::Tensor(TensorError::NonFinite { op, node })) => {
                return Err(GraformerError::NonFinite(format!("{op} produced a non-finite value at node {node}")))
            }
            Err(e) => return Err(e),
        }
    };
    let value = l.item().as_f64();
    if !value.is_finite() {
        return Err(GraformerError::NonFinite(format!("loss = {value}")));
    }
    store.zero_grad();
    tape.backward(l, Some(store))?;
    opt.step(store)?;
    Ok(value)
}
