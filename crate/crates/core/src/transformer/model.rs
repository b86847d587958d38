use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{Binder, BlockParams, LayerNormParams, Linear, ModelVars};
use super::{HeadGates, ModelConfig, ModelError};
use crate::tensor::{Element, Tape, Tensor, Var};

const LN_EPS: f64 = 1e-5;
const KEY_PAD_BIAS: f64 = -1e9;
const HEAD_INIT_STD: f64 = 0.02;

/// Padded batch of token sequences. Padding is always at the tail.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenBatch {
    /// `batch × seq_len` ids, row-major.
    pub ids: Vec<usize>,
    pub lengths: Vec<usize>,
    pub seq_len: usize,
}

impl TokenBatch {
    /// Pads every sequence with id 0 to the longest length.
    pub fn from_sequences<S: AsRef<[u32]>>(seqs: &[S]) -> Self {
        let seq_len = seqs.iter().map(|s| s.as_ref().len()).max().unwrap_or(0);
        let mut ids = Vec::with_capacity(seqs.len() * seq_len);
        let mut lengths = Vec::with_capacity(seqs.len());
        for s in seqs {
            let s = s.as_ref();
            ids.extend(s.iter().map(|&t| t as usize));
            ids.extend(std::iter::repeat(0).take(seq_len - s.len()));
            lengths.push(s.len());
        }
        Self { ids, lengths, seq_len }
    }

    pub fn batch_size(&self) -> usize {
        self.lengths.len()
    }

    pub fn is_valid(&self, example: usize, pos: usize) -> bool {
        pos < self.lengths[example]
    }

    /// Examples `[start, start + len)` as a new batch with the same padding width.
    pub fn slice(&self, start: usize, len: usize) -> TokenBatch {
        TokenBatch {
            ids: self.ids[start * self.seq_len..(start + len) * self.seq_len].to_vec(),
            lengths: self.lengths[start..start + len].to_vec(),
            seq_len: self.seq_len,
        }
    }
}

/// What a forward pass records and how gates enter it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ForwardOptions {
    /// Apply head gates. `false` runs the plain, ungated encoder.
    pub gated: bool,
    /// Record the gate vector as a differentiable leaf.
    pub gate_grad: bool,
    /// Record attention weights and block outputs.
    pub capture: bool,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        Self {
            gated: true,
            gate_grad: false,
            capture: false,
        }
    }
}

/// Attention distributions and block outputs captured during a forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace<E: Element = f32> {
    pub n_layers: usize,
    pub n_heads: usize,
    pub seq_len: usize,
    pub lengths: Vec<usize>,
    /// Indexed `[layer * n_heads + head][example]`, each `seq × seq` post-softmax.
    pub attention: Vec<Vec<Tensor<E>>>,
    /// Per layer, `(batch·seq) × d_model` block output.
    pub block_outputs: Vec<Tensor<E>>,
}

impl<E: Element> ForwardTrace<E> {
    fn new(n_layers: usize, n_heads: usize, batch: &TokenBatch) -> Self {
        Self {
            n_layers,
            n_heads,
            seq_len: batch.seq_len,
            lengths: batch.lengths.clone(),
            attention: vec![Vec::new(); n_layers * n_heads],
            block_outputs: Vec::with_capacity(n_layers),
        }
    }

    pub fn attention(&self, layer: usize, head: usize, example: usize) -> &Tensor<E> {
        &self.attention[layer * self.n_heads + head][example]
    }

    /// Block output vector of `layer` at `(example, pos)`.
    pub fn feature(&self, layer: usize, example: usize, pos: usize) -> &[E] {
        self.block_outputs[layer].row(example * self.seq_len + pos)
    }
}

pub struct EncoderOutput<E: Element = f32> {
    /// `(batch·seq) × d_model` final hidden states.
    pub hidden: Var,
    /// Gate vector leaf, `n_layers · n_heads` long, when gated.
    pub gates: Option<Var>,
    pub trace: Option<ForwardTrace<E>>,
}

/// Parameter groups used for layer freezing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Embedding,
    Block(usize),
    FinalNorm,
    TaskHead,
}

/// Gated multi-head pre-LN Transformer encoder with optional task heads.
#[derive(Clone, Debug, PartialEq)]
pub struct Transformer<E: Element = f32> {
    pub config: ModelConfig,
    pub token_embedding: Tensor<E>,
    pub position_embedding: Tensor<E>,
    /// One block per layer, or a single block when `share_params`.
    pub blocks: Vec<BlockParams<E>>,
    pub final_ln: LayerNormParams<E>,
    pub mlm_head: Option<Linear<E>>,
    pub classifier: Option<Linear<E>>,
    pub gates: HeadGates,
    frozen_layers: usize,
}

impl<E: Element> Transformer<E> {
    /// Randomly initialized encoder without task heads.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.d_model;
        let token_embedding = super::params::normal(&mut rng, [config.vocab_size, d], 1.0);
        let position_embedding = super::params::normal(&mut rng, [config.max_seq_len, d], 0.1);
        let blocks = (0..config.n_blocks())
            .map(|_| {
                BlockParams::init(
                    &mut rng,
                    config.n_heads,
                    d,
                    config.d_head,
                    config.d_ff,
                    config.n_layers,
                )
            })
            .collect();
        Ok(Self {
            gates: HeadGates::ones(config.n_layers, config.n_heads),
            token_embedding,
            position_embedding,
            blocks,
            final_ln: LayerNormParams::new(d),
            mlm_head: None,
            classifier: None,
            frozen_layers: 0,
            config,
        })
    }

    /// Attaches a fresh masked-LM output layer over the vocabulary.
    pub fn attach_mlm_head(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4d4c_4d00);
        self.mlm_head = Some(Linear::init(
            &mut rng,
            self.config.d_model,
            self.config.vocab_size,
            HEAD_INIT_STD,
        ));
    }

    /// Attaches a fresh classification layer read from the CLS position.
    pub fn attach_classifier(&mut self, n_classes: usize, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x434c_5300);
        self.classifier = Some(Linear::init(&mut rng, self.config.d_model, n_classes, HEAD_INIT_STD));
    }

    pub fn n_classes(&self) -> Option<usize> {
        self.classifier.as_ref().map(Linear::out_dim)
    }

    pub fn named_params(&self) -> Vec<(String, ParamGroup, &Tensor<E>)> {
        let mut out = vec![
            ("embed.token".to_string(), ParamGroup::Embedding, &self.token_embedding),
            ("embed.position".to_string(), ParamGroup::Embedding, &self.position_embedding),
        ];
        for (b, block) in self.blocks.iter().enumerate() {
            for (name, t) in block.tensors() {
                out.push((format!("block{b}.{name}"), ParamGroup::Block(b), t));
            }
        }
        out.push(("final_ln.gamma".into(), ParamGroup::FinalNorm, &self.final_ln.gamma));
        out.push(("final_ln.beta".into(), ParamGroup::FinalNorm, &self.final_ln.beta));
        if let Some(h) = &self.mlm_head {
            out.push(("mlm.w".into(), ParamGroup::TaskHead, &h.w));
            out.push(("mlm.b".into(), ParamGroup::TaskHead, &h.b));
        }
        if let Some(h) = &self.classifier {
            out.push(("cls.w".into(), ParamGroup::TaskHead, &h.w));
            out.push(("cls.b".into(), ParamGroup::TaskHead, &h.b));
        }
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, ParamGroup, &mut Tensor<E>)> {
        let mut out = vec![
            ("embed.token".to_string(), ParamGroup::Embedding, &mut self.token_embedding),
            ("embed.position".to_string(), ParamGroup::Embedding, &mut self.position_embedding),
        ];
        for (b, block) in self.blocks.iter_mut().enumerate() {
            for (name, t) in block.tensors_mut() {
                out.push((format!("block{b}.{name}"), ParamGroup::Block(b), t));
            }
        }
        out.push(("final_ln.gamma".into(), ParamGroup::FinalNorm, &mut self.final_ln.gamma));
        out.push(("final_ln.beta".into(), ParamGroup::FinalNorm, &mut self.final_ln.beta));
        if let Some(h) = &mut self.mlm_head {
            out.push(("mlm.w".into(), ParamGroup::TaskHead, &mut h.w));
            out.push(("mlm.b".into(), ParamGroup::TaskHead, &mut h.b));
        }
        if let Some(h) = &mut self.classifier {
            out.push(("cls.w".into(), ParamGroup::TaskHead, &mut h.w));
            out.push(("cls.b".into(), ParamGroup::TaskHead, &mut h.b));
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, _, t)| t.numel()).sum()
    }

    /// Excludes the embeddings and the lowest `k` layers from training.
    ///
    /// With `k == n_layers` the final layer norm is frozen too, so only task
    /// heads train. A shared block can only be frozen as a whole.
    pub fn freeze_layers(&mut self, k: usize) -> Result<(), ModelError> {
        let layers = self.config.n_layers;
        if k > layers {
            return Err(ModelError::Freeze { k, layers });
        }
        if self.config.share_params && k > 0 && k < layers {
            return Err(ModelError::Freeze { k, layers });
        }
        self.frozen_layers = k;
        Ok(())
    }

    pub fn frozen_layers(&self) -> usize {
        self.frozen_layers
    }

    pub fn is_frozen(&self, group: ParamGroup) -> bool {
        let k = self.frozen_layers;
        let all = k == self.config.n_layers && k > 0;
        match group {
            ParamGroup::Embedding => k > 0,
            ParamGroup::Block(b) if self.config.share_params => all && b == 0,
            ParamGroup::Block(b) => b < k,
            ParamGroup::FinalNorm => all,
            ParamGroup::TaskHead => false,
        }
    }

    /// Places every parameter on `tape`. Parameters are differentiable leaves
    /// when `trainable` and not frozen, constants otherwise.
    pub fn bind(&self, tape: &mut Tape<E>, trainable: bool) -> ModelVars {
        let emb = trainable && !self.is_frozen(ParamGroup::Embedding);
        let mut b = Binder {
            tape,
            all: Vec::new(),
        };
        let token = b.bind(&self.token_embedding, emb);
        let position = b.bind(&self.position_embedding, emb);
        let blocks = self
            .blocks
            .iter()
            .enumerate()
            .map(|(i, blk)| b.block(blk, trainable && !self.is_frozen(ParamGroup::Block(i))))
            .collect();
        let fln = trainable && !self.is_frozen(ParamGroup::FinalNorm);
        let final_ln = (b.bind(&self.final_ln.gamma, fln), b.bind(&self.final_ln.beta, fln));
        let mlm = self
            .mlm_head
            .as_ref()
            .map(|h| (b.bind(&h.w, trainable), b.bind(&h.b, trainable)));
        let classifier = self
            .classifier
            .as_ref()
            .map(|h| (b.bind(&h.w, trainable), b.bind(&h.b, trainable)));
        ModelVars {
            all: b.all,
            token,
            position,
            blocks,
            final_ln,
            mlm,
            classifier,
        }
    }

    /// Unshared copy: every layer gets its own clone of the shared block.
    pub fn untie(&self) -> Self {
        let mut out = self.clone();
        if self.config.share_params {
            out.config.share_params = false;
            out.blocks = vec![self.blocks[0].clone(); self.config.n_layers];
        }
        out
    }

    pub fn cast<F: Element>(&self) -> Transformer<F> {
        let mut out = Transformer::<F> {
            config: self.config.clone(),
            token_embedding: self.token_embedding.cast(),
            position_embedding: self.position_embedding.cast(),
            blocks: Vec::new(),
            final_ln: LayerNormParams::new(self.config.d_model),
            mlm_head: None,
            classifier: None,
            gates: self.gates.clone(),
            frozen_layers: self.frozen_layers,
        };
        out.blocks = self
            .blocks
            .iter()
            .map(|b| {
                let mut nb = BlockParams::<F> {
                    ln1: LayerNormParams::new(self.config.d_model),
                    heads: Vec::new(),
                    ln2: LayerNormParams::new(self.config.d_model),
                    ffn: super::params::FeedForwardParams {
                        w1: b.ffn.w1.cast(),
                        b1: b.ffn.b1.cast(),
                        w2: b.ffn.w2.cast(),
                        b2: b.ffn.b2.cast(),
                    },
                };
                nb.ln1 = LayerNormParams {
                    gamma: b.ln1.gamma.cast(),
                    beta: b.ln1.beta.cast(),
                };
                nb.ln2 = LayerNormParams {
                    gamma: b.ln2.gamma.cast(),
                    beta: b.ln2.beta.cast(),
                };
                nb.heads = b
                    .heads
                    .iter()
                    .map(|h| super::params::AttentionHeadParams {
                        wq: h.wq.cast(),
                        bq: h.bq.cast(),
                        wk: h.wk.cast(),
                        bk: h.bk.cast(),
                        wv: h.wv.cast(),
                        bv: h.bv.cast(),
                        wo: h.wo.cast(),
                    })
                    .collect();
                nb
            })
            .collect();
        out.final_ln = LayerNormParams {
            gamma: self.final_ln.gamma.cast(),
            beta: self.final_ln.beta.cast(),
        };
        out.mlm_head = self.mlm_head.as_ref().map(|h| Linear {
            w: h.w.cast(),
            b: h.b.cast(),
        });
        out.classifier = self.classifier.as_ref().map(|h| Linear {
            w: h.w.cast(),
            b: h.b.cast(),
        });
        out
    }

    pub fn validate_batch(&self, batch: &TokenBatch) -> Result<(), ModelError> {
        if batch.seq_len > self.config.max_seq_len {
            return Err(ModelError::SeqLen {
                len: batch.seq_len,
                max: self.config.max_seq_len,
            });
        }
        if batch.batch_size() == 0 || batch.ids.len() != batch.batch_size() * batch.seq_len {
            return Err(ModelError::Input("empty or ragged batch".into()));
        }
        if let Some(&bad) = batch.ids.iter().find(|&&t| t >= self.config.vocab_size) {
            return Err(ModelError::Token {
                id: bad,
                vocab: self.config.vocab_size,
            });
        }
        if batch.lengths.iter().any(|&l| l == 0 || l > batch.seq_len) {
            return Err(ModelError::Input("sequence lengths must be in 1..=seq_len".into()));
        }
        Ok(())
    }

    /// Gate vector leaf with masked heads at 0.
    pub fn gate_leaf(&self, tape: &mut Tape<E>, differentiable: bool) -> Var {
        let values = self
            .gates
            .effective_values()
            .into_iter()
            .map(|g| E::narrow(g as f64))
            .collect();
        let t = Tensor::new([self.config.total_heads()], values).expect("gate shape");
        tape.leaf(t, differentiable)
    }

    /// `Σ_h ξ_h · Att_h(x)` for `layer`. `x` is the normalized block input,
    /// `(batch·seq) × d_model`. Without `gates` every head contributes with weight 1.
    #[allow(clippy::too_many_arguments)]
    pub fn mh_attention(
        &self,
        tape: &mut Tape<E>,
        vars: &ModelVars,
        layer: usize,
        x: Var,
        batch: &TokenBatch,
        gates: Option<Var>,
        mut trace: Option<&mut ForwardTrace<E>>,
    ) -> Result<Var, ModelError> {
        let cfg = &self.config;
        let (rows, d) = tape.value(x).dims2("mh_attention")?;
        let (bs, s) = (batch.batch_size(), batch.seq_len);
        if rows != bs * s || d != cfg.d_model {
            return Err(ModelError::Tensor(crate::tensor::TensorError::ShapeMismatch {
                op: "mh_attention",
                left: vec![rows, d],
                right: vec![bs * s, cfg.d_model],
            }));
        }
        if layer >= cfg.n_layers {
            return Err(ModelError::Input(format!("layer {layer} out of range")));
        }
        let key_bias: Vec<Option<Var>> = batch
            .lengths
            .iter()
            .map(|&len| {
                (len < s).then(|| {
                    let t = Tensor::from_fn([s, s], |i| {
                        if i % s < len {
                            E::zero()
                        } else {
                            E::narrow(KEY_PAD_BIAS)
                        }
                    });
                    tape.constant(t)
                })
            })
            .collect();
        let block = &vars.blocks[cfg.block_of(layer)];
        let scale = 1.0 / (cfg.d_head as f64).sqrt();
        let mut total: Option<Var> = None;
        for (h, hv) in block.heads.iter().enumerate() {
            let q = tape.matmul(x, hv.wq)?;
            let q = tape.add_bias(q, hv.bq)?;
            let k = tape.matmul(x, hv.wk)?;
            let k = tape.add_bias(k, hv.bk)?;
            let v = tape.matmul(x, hv.wv)?;
            let v = tape.add_bias(v, hv.bv)?;
            let mut outs = Vec::with_capacity(bs);
            for (b, bias) in key_bias.iter().enumerate() {
                let qb = tape.slice_rows(q, b * s, s)?;
                let kb = tape.slice_rows(k, b * s, s)?;
                let vb = tape.slice_rows(v, b * s, s)?;
                let scores = tape.matmul_t(qb, kb)?;
                let mut scores = tape.scale(scores, scale)?;
                if let Some(bias) = bias {
                    scores = tape.add(scores, *bias)?;
                }
                let probs = tape.softmax(scores, 1)?;
                if let Some(tr) = trace.as_deref_mut() {
                    tr.attention[layer * cfg.n_heads + h].push(tape.value(probs).clone());
                }
                outs.push(tape.matmul(probs, vb)?);
            }
            let o = if outs.len() == 1 {
                outs[0]
            } else {
                tape.concat_rows(&outs)?
            };
            let mut c = tape.matmul(o, hv.wo)?;
            if let Some(g) = gates {
                c = tape.gate_mul(c, g, layer * cfg.n_heads + h)?;
            }
            total = Some(match total {
                None => c,
                Some(acc) => tape.add(acc, c)?,
            });
        }
        Ok(total.expect("at least one head"))
    }

    /// Position-wise feed-forward sublayer applied to normalized `x`.
    pub fn feed_forward(&self, tape: &mut Tape<E>, vars: &ModelVars, layer: usize, x: Var) -> Result<Var, ModelError> {
        let blk = &vars.blocks[self.config.block_of(layer)];
        let h = tape.matmul(x, blk.w1)?;
        let h = tape.add_bias(h, blk.b1)?;
        let h = tape.gelu(h)?;
        let h = tape.matmul(h, blk.w2)?;
        Ok(tape.add_bias(h, blk.b2)?)
    }

    /// Runs the encoder stack and returns final (normalized) hidden states.
    pub fn encode(
        &self,
        tape: &mut Tape<E>,
        vars: &ModelVars,
        batch: &TokenBatch,
        opts: ForwardOptions,
    ) -> Result<EncoderOutput<E>, ModelError> {
        self.validate_batch(batch)?;
        let cfg = &self.config;
        let s = batch.seq_len;
        let positions: Vec<usize> = (0..batch.batch_size()).flat_map(|_| 0..s).collect();
        let tok = tape.embedding(vars.token, &batch.ids)?;
        let pos = tape.embedding(vars.position, &positions)?;
        let mut x = tape.add(tok, pos)?;
        let gates = opts.gated.then(|| self.gate_leaf(tape, opts.gate_grad));
        let mut trace = opts
            .capture
            .then(|| ForwardTrace::new(cfg.n_layers, cfg.n_heads, batch));
        for layer in 0..cfg.n_layers {
            let blk = &vars.blocks[cfg.block_of(layer)];
            let h = tape.layer_norm(x, blk.ln1.0, blk.ln1.1, LN_EPS)?;
            let a = self.mh_attention(tape, vars, layer, h, batch, gates, trace.as_mut())?;
            x = tape.add(x, a)?;
            let h = tape.layer_norm(x, blk.ln2.0, blk.ln2.1, LN_EPS)?;
            let f = self.feed_forward(tape, vars, layer, h)?;
            x = tape.add(x, f)?;
            if let Some(tr) = trace.as_mut() {
                tr.block_outputs.push(tape.value(x).clone());
            }
        }
        let hidden = tape.layer_norm(x, vars.final_ln.0, vars.final_ln.1, LN_EPS)?;
        Ok(EncoderOutput {
            hidden,
            gates,
            trace,
        })
    }

    /// Vocabulary logits at every position, `(batch·seq) × vocab`.
    pub fn mlm_logits(&self, tape: &mut Tape<E>, vars: &ModelVars, hidden: Var) -> Result<Var, ModelError> {
        let (w, b) = vars.mlm.ok_or(ModelError::MissingHead("masked-LM"))?;
        let l = tape.matmul(hidden, w)?;
        Ok(tape.add_bias(l, b)?)
    }

    /// Class logits read from position 0 (CLS) of each example, `batch × classes`.
    pub fn cls_logits(
        &self,
        tape: &mut Tape<E>,
        vars: &ModelVars,
        hidden: Var,
        batch: &TokenBatch,
    ) -> Result<Var, ModelError> {
        let (w, b) = vars.classifier.ok_or(ModelError::MissingHead("classifier"))?;
        let rows: Vec<usize> = (0..batch.batch_size()).map(|i| i * batch.seq_len).collect();
        let cls = tape.gather_rows(hidden, &rows)?;
        let l = tape.matmul(cls, w)?;
        Ok(tape.add_bias(l, b)?)
    }
}
