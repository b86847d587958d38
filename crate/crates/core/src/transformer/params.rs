use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::{Element, Tape, Tensor, Var};

pub(crate) fn normal<E: Element, R: Rng>(rng: &mut R, shape: [usize; 2], std: f64) -> Tensor<E> {
    let dist = Normal::new(0.0, std).expect("finite std");
    Tensor::from_fn(shape, |_| E::narrow(dist.sample(rng)))
}

/// Projection slices owned by one attention head.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionHeadParams<E: Element = f32> {
    pub wq: Tensor<E>,
    pub bq: Tensor<E>,
    pub wk: Tensor<E>,
    pub bk: Tensor<E>,
    pub wv: Tensor<E>,
    pub bv: Tensor<E>,
    /// `d_head × d_model` output projection.
    pub wo: Tensor<E>,
}

impl<E: Element> AttentionHeadParams<E> {
    pub(crate) fn init<R: Rng>(rng: &mut R, d_model: usize, d_head: usize, out_std: f64) -> Self {
        let in_std = 1.0 / (d_model as f64).sqrt();
        Self {
            wq: normal(rng, [d_model, d_head], in_std),
            bq: Tensor::zeros([d_head]),
            wk: normal(rng, [d_model, d_head], in_std),
            bk: Tensor::zeros([d_head]),
            wv: normal(rng, [d_model, d_head], in_std),
            bv: Tensor::zeros([d_head]),
            wo: normal(rng, [d_head, d_model], out_std),
        }
    }

    pub fn tensors(&self) -> [(&'static str, &Tensor<E>); 7] {
        [
            ("wq", &self.wq),
            ("bq", &self.bq),
            ("wk", &self.wk),
            ("bk", &self.bk),
            ("wv", &self.wv),
            ("bv", &self.bv),
            ("wo", &self.wo),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut Tensor<E>); 7] {
        [
            ("wq", &mut self.wq),
            ("bq", &mut self.bq),
            ("wk", &mut self.wk),
            ("bk", &mut self.bk),
            ("wv", &mut self.wv),
            ("bv", &mut self.bv),
            ("wo", &mut self.wo),
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNormParams<E: Element = f32> {
    pub gamma: Tensor<E>,
    pub beta: Tensor<E>,
}

impl<E: Element> LayerNormParams<E> {
    pub(crate) fn new(d: usize) -> Self {
        Self {
            gamma: Tensor::full([d], E::one()),
            beta: Tensor::zeros([d]),
        }
    }
}

/// Position-wise feed-forward sublayer.
#[derive(Clone, Debug, PartialEq)]
pub struct FeedForwardParams<E: Element = f32> {
    pub w1: Tensor<E>,
    pub b1: Tensor<E>,
    pub w2: Tensor<E>,
    pub b2: Tensor<E>,
}

/// One pre-LN encoder block: attention heads followed by a feed-forward sublayer.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockParams<E: Element = f32> {
    pub ln1: LayerNormParams<E>,
    pub heads: Vec<AttentionHeadParams<E>>,
    pub ln2: LayerNormParams<E>,
    pub ffn: FeedForwardParams<E>,
}

impl<E: Element> BlockParams<E> {
    pub(crate) fn init<R: Rng>(
        rng: &mut R,
        n_heads: usize,
        d_model: usize,
        d_head: usize,
        d_ff: usize,
        n_layers: usize,
    ) -> Self {
        let depth = 1.0 / (2.0 * n_layers as f64).sqrt();
        let heads = (0..n_heads)
            .map(|_| AttentionHeadParams::init(rng, d_model, d_head, depth / (d_head as f64).sqrt()))
            .collect();
        Self {
            ln1: LayerNormParams::new(d_model),
            heads,
            ln2: LayerNormParams::new(d_model),
            ffn: FeedForwardParams {
                w1: normal(rng, [d_model, d_ff], 1.0 / (d_model as f64).sqrt()),
                b1: Tensor::zeros([d_ff]),
                w2: normal(rng, [d_ff, d_model], depth / (d_ff as f64).sqrt()),
                b2: Tensor::zeros([d_model]),
            },
        }
    }

    pub fn tensors(&self) -> Vec<(String, &Tensor<E>)> {
        let mut out = vec![
            ("ln1.gamma".to_string(), &self.ln1.gamma),
            ("ln1.beta".to_string(), &self.ln1.beta),
        ];
        for (h, head) in self.heads.iter().enumerate() {
            for (name, t) in head.tensors() {
                out.push((format!("head{h}.{name}"), t));
            }
        }
        out.extend([
            ("ln2.gamma".to_string(), &self.ln2.gamma),
            ("ln2.beta".to_string(), &self.ln2.beta),
            ("ffn.w1".to_string(), &self.ffn.w1),
            ("ffn.b1".to_string(), &self.ffn.b1),
            ("ffn.w2".to_string(), &self.ffn.w2),
            ("ffn.b2".to_string(), &self.ffn.b2),
        ]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<E>)> {
        let mut out = vec![
            ("ln1.gamma".to_string(), &mut self.ln1.gamma),
            ("ln1.beta".to_string(), &mut self.ln1.beta),
        ];
        for (h, head) in self.heads.iter_mut().enumerate() {
            for (name, t) in head.tensors_mut() {
                out.push((format!("head{h}.{name}"), t));
            }
        }
        out.extend([
            ("ln2.gamma".to_string(), &mut self.ln2.gamma),
            ("ln2.beta".to_string(), &mut self.ln2.beta),
            ("ffn.w1".to_string(), &mut self.ffn.w1),
            ("ffn.b1".to_string(), &mut self.ffn.b1),
            ("ffn.w2".to_string(), &mut self.ffn.w2),
            ("ffn.b2".to_string(), &mut self.ffn.b2),
        ]);
        out
    }
}

/// Dense output layer `x · w + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<E: Element = f32> {
    pub w: Tensor<E>,
    pub b: Tensor<E>,
}

impl<E: Element> Linear<E> {
    pub(crate) fn init<R: Rng>(rng: &mut R, d_in: usize, d_out: usize, std: f64) -> Self {
        Self {
            w: normal(rng, [d_in, d_out], std),
            b: Tensor::zeros([d_out]),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.b.numel()
    }
}

/// Tape handles for one head's parameters.
#[derive(Clone, Debug)]
pub struct HeadVars {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
}

#[derive(Clone, Debug)]
pub struct BlockVars {
    pub ln1: (Var, Var),
    pub heads: Vec<HeadVars>,
    pub ln2: (Var, Var),
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

/// Handles of every model parameter on a tape, plus the flat list in
/// canonical parameter order.
#[derive(Clone, Debug)]
pub struct ModelVars {
    pub all: Vec<Var>,
    pub token: Var,
    pub position: Var,
    pub blocks: Vec<BlockVars>,
    pub final_ln: (Var, Var),
    pub mlm: Option<(Var, Var)>,
    pub classifier: Option<(Var, Var)>,
}

pub(crate) struct Binder<'t, E: Element> {
    pub tape: &'t mut Tape<E>,
    pub all: Vec<Var>,
}

impl<E: Element> Binder<'_, E> {
    pub fn bind(&mut self, t: &Tensor<E>, trainable: bool) -> Var {
        let v = self.tape.leaf(t.clone(), trainable);
        self.all.push(v);
        v
    }

    pub fn block(&mut self, b: &BlockParams<E>, trainable: bool) -> BlockVars {
        let ln1 = (self.bind(&b.ln1.gamma, trainable), self.bind(&b.ln1.beta, trainable));
        let heads = b
            .heads
            .iter()
            .map(|h| HeadVars {
                wq: self.bind(&h.wq, trainable),
                bq: self.bind(&h.bq, trainable),
                wk: self.bind(&h.wk, trainable),
                bk: self.bind(&h.bk, trainable),
                wv: self.bind(&h.wv, trainable),
                bv: self.bind(&h.bv, trainable),
                wo: self.bind(&h.wo, trainable),
            })
            .collect();
        let ln2 = (self.bind(&b.ln2.gamma, trainable), self.bind(&b.ln2.beta, trainable));
        BlockVars {
            ln1,
            heads,
            ln2,
            w1: self.bind(&b.ffn.w1, trainable),
            b1: self.bind(&b.ffn.b1, trainable),
            w2: self.bind(&b.ffn.w2, trainable),
            b2: self.bind(&b.ffn.b2, trainable),
        }
    }
}
