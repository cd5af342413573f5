//! Network building blocks: linear layers, MLPs, and permutation-
//! equivariant set-attention blocks.
//!
//! Every block offers two execution paths over the same kernels: a taped
//! `forward` for training and a plain `infer` for generation. Attention
//! additionally exposes a cached-context path so a fixed conditioning set
//! is projected once per window rather than once per denoising step.

use rand_chacha::ChaCha12Rng;

use super::linalg::{self, Mat};
use super::tape::{Init, NodeId, ParamId, ParamStore, Tape};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Gelu,
}

impl Activation {
    pub fn tag(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Gelu => "gelu",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Activation> {
        match tag {
            "relu" => Some(Activation::Relu),
            "gelu" => Some(Activation::Gelu),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha12Rng,
        name: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> Linear {
        let w = store.alloc(format!("{name}.w"), in_dim, out_dim, Init::Xavier, rng);
        let b = store.alloc(format!("{name}.b"), 1, out_dim, Init::Zeros, rng);
        Linear {
            w,
            b,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let w = tape.param(store, self.w)?;
        let b = tape.param(store, self.b)?;
        let y = tape.matmul(x, w);
        Ok(tape.add_bias(y, b))
    }

    pub fn infer(&self, store: &ParamStore, x: &Mat) -> Mat {
        linalg::add_bias(&linalg::matmul(x, store.value(self.w)), store.value(self.b))
    }
}

#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

impl Mlp {
    /// `dims` runs input → hidden… → output.
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha12Rng,
        name: &str,
        dims: &[usize],
        activation: Activation,
    ) -> Mlp {
        assert!(dims.len() >= 2, "an MLP needs at least input and output dims");
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, rng, &format!("{name}.{i}"), w[0], w[1]))
            .collect();
        Mlp { layers, activation }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, store, h)?;
            if i + 1 < self.layers.len() {
                h = match self.activation {
                    Activation::Relu => tape.relu(h),
                    Activation::Gelu => tape.gelu(h),
                };
            }
        }
        Ok(h)
    }

    pub fn infer(&self, store: &ParamStore, x: &Mat) -> Mat {
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.infer(store, &h);
            if i + 1 < self.layers.len() {
                h = match self.activation {
                    Activation::Relu => linalg::relu(&h),
                    Activation::Gelu => linalg::gelu(&h),
                };
            }
        }
        h
    }
}

#[derive(Debug, Clone)]
struct AttnHead {
    wq: Linear,
    wk: Linear,
    wv: Linear,
}

/// Scaled dot-product attention from `tokens` onto `context` (which may
/// be the tokens themselves for self-attention).
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    heads: Vec<AttnHead>,
    out: Linear,
    head_dim: usize,
}

/// Pre-projected context: one (K, V) pair per head.
pub type CachedContext = Vec<(Mat, Mat)>;

impl MultiHeadAttention {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha12Rng,
        name: &str,
        token_dim: usize,
        ctx_dim: usize,
        n_heads: usize,
        head_dim: usize,
    ) -> MultiHeadAttention {
        let heads = (0..n_heads)
            .map(|h| AttnHead {
                wq: Linear::new(store, rng, &format!("{name}.h{h}.q"), token_dim, head_dim),
                wk: Linear::new(store, rng, &format!("{name}.h{h}.k"), ctx_dim, head_dim),
                wv: Linear::new(store, rng, &format!("{name}.h{h}.v"), ctx_dim, head_dim),
            })
            .collect();
        let out = Linear::new(store, rng, &format!("{name}.out"), n_heads * head_dim, token_dim);
        MultiHeadAttention {
            heads,
            out,
            head_dim,
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        tokens: NodeId,
        context: NodeId,
    ) -> Result<NodeId> {
        let inv_sqrt = 1.0 / (self.head_dim as f64).sqrt();
        let mut head_outs = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            let q = head.wq.forward(tape, store, tokens)?;
            let k = head.wk.forward(tape, store, context)?;
            let v = head.wv.forward(tape, store, context)?;
            let scores = tape.matmul_nt(q, k);
            let scores = tape.scale(scores, inv_sqrt);
            let attn = tape.softmax_rows(scores);
            head_outs.push(tape.matmul(attn, v));
        }
        let merged = tape.concat_cols(&head_outs);
        self.out.forward(tape, store, merged)
    }

    pub fn infer(&self, store: &ParamStore, tokens: &Mat, context: &Mat) -> Mat {
        let cache = self.project_context(store, context);
        self.infer_cached(store, tokens, &cache)
    }

    /// Projects the context once; reuse across many queries.
    pub fn project_context(&self, store: &ParamStore, context: &Mat) -> CachedContext {
        self.heads
            .iter()
            .map(|h| (h.wk.infer(store, context), h.wv.infer(store, context)))
            .collect()
    }

    pub fn infer_cached(&self, store: &ParamStore, tokens: &Mat, cache: &CachedContext) -> Mat {
        let inv_sqrt = 1.0 / (self.head_dim as f64).sqrt();
        let outs: Vec<Mat> = self
            .heads
            .iter()
            .zip(cache)
            .map(|(h, (k, v))| {
                let q = h.wq.infer(store, tokens);
                let scores = linalg::scale(&linalg::matmul_nt(&q, k), inv_sqrt);
                linalg::matmul(&linalg::softmax_rows(&scores), v)
            })
            .collect();
        let refs: Vec<&Mat> = outs.iter().collect();
        self.out.infer(store, &linalg::concat_cols(&refs))
    }
}

/// One residual set block: self-attention across the token set, optional
/// cross-attention against conditioning tokens, then a feed-forward
/// stage. Output token count equals input token count and the block is
/// equivariant to token permutation.
#[derive(Debug, Clone)]
pub struct SetBlock {
    pub self_attn: MultiHeadAttention,
    pub cross_attn: MultiHeadAttention,
    pub mlp: Mlp,
}

/// Per-block cached conditioning projections.
pub type BlockContext = CachedContext;

impl SetBlock {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha12Rng,
        name: &str,
        token_dim: usize,
        ctx_dim: usize,
        n_heads: usize,
        ff_dim: usize,
    ) -> SetBlock {
        let head_dim = token_dim / n_heads;
        assert!(head_dim > 0, "more heads than token dims");
        SetBlock {
            self_attn: MultiHeadAttention::new(
                store,
                rng,
                &format!("{name}.self"),
                token_dim,
                token_dim,
                n_heads,
                head_dim,
            ),
            cross_attn: MultiHeadAttention::new(
                store,
                rng,
                &format!("{name}.cross"),
                token_dim,
                ctx_dim,
                n_heads,
                head_dim,
            ),
            mlp: Mlp::new(
                store,
                rng,
                &format!("{name}.ff"),
                &[token_dim, ff_dim, token_dim],
                Activation::Gelu,
            ),
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        tokens: NodeId,
        context: Option<NodeId>,
    ) -> Result<NodeId> {
        let sa = self.self_attn.forward(tape, store, tokens, tokens)?;
        let mut x = tape.add(tokens, sa);
        if let Some(ctx) = context {
            let ca = self.cross_attn.forward(tape, store, x, ctx)?;
            x = tape.add(x, ca);
        }
        let ff = self.mlp.forward(tape, store, x)?;
        Ok(tape.add(x, ff))
    }

    pub fn project_context(&self, store: &ParamStore, context: &Mat) -> BlockContext {
        self.cross_attn.project_context(store, context)
    }

    pub fn infer_cached(
        &self,
        store: &ParamStore,
        tokens: &Mat,
        context: Option<&BlockContext>,
    ) -> Mat {
        let sa = self.self_attn.infer(store, tokens, tokens);
        let mut x = linalg::add(tokens, &sa);
        if let Some(ctx) = context {
            let ca = self.cross_attn.infer_cached(store, &x, ctx);
            x = linalg::add(&x, &ca);
        }
        let ff = self.mlp.infer(store, &x);
        linalg::add(&x, &ff)
    }
}
