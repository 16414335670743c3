//! Encoder forward pass recorded on a differentiation graph.

use super::params::{ModelParams, Weights};
use crate::error::{Error, Result};
use crate::numerics::{Graph, Real, Tensor, Var};
use crate::rng::Rng;
use crate::tokenizer::PAD;

/// One forward/backward pass over a packed batch. Dropout is active only
/// when the session owns an rng.
pub struct Session<'p, T> {
    pub graph: Graph<T>,
    pub vars: Weights<Var>,
    params: &'p ModelParams<T>,
    rng: Option<Rng>,
}

impl<'p, T: Real> Session<'p, T> {
    pub fn new(params: &'p ModelParams<T>, dropout_rng: Option<Rng>) -> Self {
        let mut graph = Graph::new();
        let vars = params.weights.map(|_, t| graph.param(t.clone()));
        Self { graph, vars, params, rng: dropout_rng }
    }

    pub fn params(&self) -> &ModelParams<T> {
        self.params
    }

    pub fn training(&self) -> bool {
        self.rng.is_some()
    }

    pub fn dropout(&mut self, x: Var, p: f64) -> Var {
        self.graph.dropout(x, p, self.rng.as_mut())
    }

    fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.graph.matmul(x, w, false)?;
        self.graph.add_bias(y, b)
    }

    /// `LN(tok[id] + pos[i] + seg[segment])`, then dropout. `ids` holds
    /// `batch · seq_len` tokens.
    pub fn embed(&mut self, ids: &[u32], segments: &[u8], seq_len: usize) -> Result<Var> {
        let cfg = &self.params.config;
        if ids.len() != segments.len() || seq_len == 0 || ids.len() % seq_len != 0 {
            return Err(Error::Shape(format!("{} ids, {} segments, seq_len {seq_len}", ids.len(), segments.len())));
        }
        if seq_len > cfg.max_len {
            return Err(Error::OutOfRange(format!("sequence length {seq_len} > max_len {}", cfg.max_len)));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i as usize >= cfg.vocab_size) {
            return Err(Error::OutOfRange(format!("token id {bad} >= vocab size {}", cfg.vocab_size)));
        }
        if let Some(&bad) = segments.iter().find(|&&s| s > 1) {
            return Err(Error::OutOfRange(format!("segment id {bad}")));
        }
        let (eps, p) = (cfg.layer_norm_eps, cfg.dropout);
        let v = self.vars.clone();
        let tok_ids: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        let pos_ids: Vec<usize> = (0..ids.len()).map(|i| i % seq_len).collect();
        let seg_ids: Vec<usize> = segments.iter().map(|&s| s as usize).collect();
        let tok = self.graph.embedding(v.tok_emb, &tok_ids)?;
        let pos = self.graph.embedding(v.pos_emb, &pos_ids)?;
        let seg = self.graph.embedding(v.seg_emb, &seg_ids)?;
        let x = self.graph.add(tok, pos)?;
        let x = self.graph.add(x, seg)?;
        let x = self.graph.layer_norm(x, v.emb_ln_g, v.emb_ln_b, eps)?;
        Ok(self.dropout(x, p))
    }

    /// Applies the pre-norm block stack. `key_mask[row]` is false at
    /// padding, which no query may attend to.
    pub fn encode(&mut self, h0: Var, key_mask: &[bool], seq_len: usize) -> Result<Var> {
        let cfg = self.params.config.clone();
        let mut x = h0;
        for l in 0..cfg.layers {
            let w = self.vars.layers[l].clone();
            let a = self.graph.layer_norm(x, w.ln1_g, w.ln1_b, cfg.layer_norm_eps)?;
            let q = self.linear(a, w.q_w, w.q_b)?;
            let k = self.linear(a, w.k_w, w.k_b)?;
            let v = self.linear(a, w.v_w, w.v_b)?;
            let att = self.graph.attention(q, k, v, cfg.heads, seq_len, key_mask)?;
            let att = self.linear(att, w.o_w, w.o_b)?;
            let att = self.dropout(att, cfg.dropout);
            x = self.graph.add(x, att)?;

            let f = self.graph.layer_norm(x, w.ln2_g, w.ln2_b, cfg.layer_norm_eps)?;
            let f = self.linear(f, w.ff1_w, w.ff1_b)?;
            let f = self.graph.gelu(f);
            let f = self.linear(f, w.ff2_w, w.ff2_b)?;
            let f = self.dropout(f, cfg.dropout);
            x = self.graph.add(x, f)?;
        }
        Ok(x)
    }

    /// `embed` followed by `encode`, masking `[PAD]` keys.
    pub fn hidden(&mut self, ids: &[u32], segments: &[u8], seq_len: usize) -> Result<Var> {
        let h0 = self.embed(ids, segments, seq_len)?;
        let mask: Vec<bool> = ids.iter().map(|&t| t != PAD).collect();
        self.encode(h0, &mask, seq_len)
    }

    /// Vocabulary logits at the given rows of `hl`: a dense + gelu +
    /// layer-norm transform, then the tied embedding projection plus bias.
    pub fn token_logits(&mut self, hl: Var, rows: &[usize]) -> Result<Var> {
        let v = self.vars.clone();
        let eps = self.params.config.layer_norm_eps;
        let h = self.graph.gather_rows(hl, rows)?;
        let t = self.linear(h, v.mlm_w, v.mlm_b)?;
        let t = self.graph.gelu(t);
        let t = self.graph.layer_norm(t, v.mlm_ln_g, v.mlm_ln_b, eps)?;
        self.tied_projection(t)
    }

    /// `t · Eᵀ + b` with `E` the token embedding table.
    pub fn tied_projection(&mut self, t: Var) -> Result<Var> {
        let v = self.vars.clone();
        let logits = self.graph.matmul(t, v.tok_emb, true)?;
        self.graph.add_bias(logits, v.mlm_bias)
    }

    /// Three-way sentence logits from the given `[CLS]` rows.
    pub fn sentence_logits(&mut self, hl: Var, cls_rows: &[usize]) -> Result<Var> {
        let v = self.vars.clone();
        let h = self.graph.gather_rows(hl, cls_rows)?;
        self.linear(h, v.sent_w, v.sent_b)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        self.graph.value(v)
    }

    /// Backward sweep; gradients for every model tensor.
    pub fn gradients(&self, loss: Var) -> Result<(Weights<Tensor<T>>, crate::numerics::Gradients<T>)> {
        let grads = self.graph.backward(loss)?;
        let w = self.vars.map(|_, &v| grads.wrt(&self.graph, v));
        Ok((w, grads))
    }
}
