//! The encoder-decoder network: bidirectional LSTM encoder over token
//! embeddings, context = encoded state concatenated with the dictionary
//! cosine-similarity vector, and a left-to-right LSTM decoder fed the same
//! context at every output step. All gradients are analytic (BPTT) and are
//! verified against central differences by the gradient-check harness.

use crate::corpus::{CodeVocab, EncodedRecord, Vocab, EOS_ID};
use crate::embeddings::{lookup, lookup_backward, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::prior::TfIdfIndex;
use crate::rng::Rng;
use crate::tensor::{
    concat, dropout, dropout_backward, matvec, matvec_backward, sigmoid, softmax_cross_entropy,
    split_grad, tanh, Tensor,
};

/// One LSTM cell's parameters. Gate blocks are stacked in the fixed order
/// (input i, forget f, candidate g, output o) along the 4H axis.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCellParams {
    pub w_x: Tensor, // [4H × D_in]
    pub w_h: Tensor, // [4H × H]
    pub b: Tensor,   // [4H]
    pub hidden: usize,
    pub input: usize,
}

impl LstmCellParams {
    /// Glorot-uniform weights; biases zero except the forget block at 1.0.
    pub fn init(input: usize, hidden: usize, rng: &mut Rng) -> LstmCellParams {
        let mut w_x = Tensor::zeros(&[4 * hidden, input]);
        let mut w_h = Tensor::zeros(&[4 * hidden, hidden]);
        let bound_x = (6.0 / (input + 4 * hidden) as f64).sqrt();
        let bound_h = (6.0 / (hidden + 4 * hidden) as f64).sqrt();
        w_x.fill_uniform(rng, -bound_x, bound_x);
        w_h.fill_uniform(rng, -bound_h, bound_h);
        let mut b = Tensor::zeros(&[4 * hidden]);
        for i in hidden..2 * hidden {
            b.data_mut()[i] = 1.0; // forget gate
        }
        LstmCellParams {
            w_x,
            w_h,
            b,
            hidden,
            input,
        }
    }
}

/// Per-step activations cached for backward.
#[derive(Debug, Clone)]
pub struct LstmStepCache {
    pub i: Tensor,
    pub f: Tensor,
    pub g: Tensor,
    pub o: Tensor,
    pub c_prev: Tensor,
    pub c_new: Tensor,
    pub tanh_c_new: Tensor,
    pub h_prev: Tensor,
    pub x: Tensor,
}

/// Gradients of one cell's parameters, accumulated across steps.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCellGrads {
    pub w_x: Tensor,
    pub w_h: Tensor,
    pub b: Tensor,
}

impl LstmCellGrads {
    pub fn zeros(p: &LstmCellParams) -> LstmCellGrads {
        LstmCellGrads {
            w_x: Tensor::zeros(p.w_x.shape()),
            w_h: Tensor::zeros(p.w_h.shape()),
            b: Tensor::zeros(p.b.shape()),
        }
    }
}

/// One LSTM step: z = W_x·x + W_h·h + b split into (i,f,g,o);
/// c′ = f⊙c + i⊙g; h′ = o⊙tanh(c′).
pub fn lstm_step(
    x: &Tensor,
    h: &Tensor,
    c: &Tensor,
    p: &LstmCellParams,
) -> Result<(Tensor, Tensor)> {
    let (h2, c2, _) = lstm_step_cached(x, h, c, p)?;
    Ok((h2, c2))
}

pub fn lstm_step_cached(
    x: &Tensor,
    h: &Tensor,
    c: &Tensor,
    p: &LstmCellParams,
) -> Result<(Tensor, Tensor, LstmStepCache)> {
    if x.len() != p.input || h.len() != p.hidden || c.len() != p.hidden {
        return Err(Error::Shape {
            op: "lstm_step",
            message: format!(
                "x:{} h:{} c:{} vs input:{} hidden:{}",
                x.len(),
                h.len(),
                c.len(),
                p.input,
                p.hidden
            ),
        });
    }
    let hidden = p.hidden;
    let mut z = matvec(&p.w_x, x)?;
    let zh = matvec(&p.w_h, h)?;
    z.add_assign(&zh);
    z.add_assign(&p.b);

    let gate = |lo: usize| Tensor::vector(z.data()[lo * hidden..(lo + 1) * hidden].to_vec());
    let i = sigmoid(&gate(0));
    let f = sigmoid(&gate(1));
    let g = tanh(&gate(2));
    let o = sigmoid(&gate(3));

    let mut c_new = Tensor::zeros(&[hidden]);
    for j in 0..hidden {
        c_new.data_mut()[j] = f.data()[j] * c.data()[j] + i.data()[j] * g.data()[j];
    }
    let tanh_c_new = tanh(&c_new);
    let mut h_new = Tensor::zeros(&[hidden]);
    for j in 0..hidden {
        h_new.data_mut()[j] = o.data()[j] * tanh_c_new.data()[j];
    }
    let cache = LstmStepCache {
        i,
        f,
        g,
        o,
        c_prev: c.clone(),
        c_new: c_new.clone(),
        tanh_c_new,
        h_prev: h.clone(),
        x: x.clone(),
    };
    Ok((h_new, c_new, cache))
}

/// Backward of one LSTM step. `dh` and `dc` are the gradients flowing into
/// h′ and c′; returns (dx, dh_prev, dc_prev) and accumulates parameter
/// gradients into `grads`.
pub fn lstm_step_backward(
    dh: &Tensor,
    dc: &Tensor,
    cache: &LstmStepCache,
    p: &LstmCellParams,
    grads: &mut LstmCellGrads,
) -> (Tensor, Tensor, Tensor) {
    let hidden = p.hidden;
    // dc_total = dc + dh ⊙ o ⊙ tanh′(c′)
    let mut dc_total = dc.clone();
    for j in 0..hidden {
        let t = cache.tanh_c_new.data()[j];
        dc_total.data_mut()[j] += dh.data()[j] * cache.o.data()[j] * (1.0 - t * t);
    }
    // gate pre-activation gradients, stacked (i,f,g,o)
    let mut dz = Tensor::zeros(&[4 * hidden]);
    for j in 0..hidden {
        let (i, f, g, o) = (
            cache.i.data()[j],
            cache.f.data()[j],
            cache.g.data()[j],
            cache.o.data()[j],
        );
        let dct = dc_total.data()[j];
        dz.data_mut()[j] = dct * g * i * (1.0 - i);
        dz.data_mut()[hidden + j] = dct * cache.c_prev.data()[j] * f * (1.0 - f);
        dz.data_mut()[2 * hidden + j] = dct * i * (1.0 - g * g);
        dz.data_mut()[3 * hidden + j] =
            dh.data()[j] * cache.tanh_c_new.data()[j] * o * (1.0 - o);
    }
    grads.b.add_assign(&dz);
    let mut dx = Tensor::zeros(&[p.input]);
    matvec_backward(&p.w_x, &cache.x, &dz, &mut grads.w_x, &mut dx);
    let mut dh_prev = Tensor::zeros(&[hidden]);
    matvec_backward(&p.w_h, &cache.h_prev, &dz, &mut grads.w_h, &mut dh_prev);
    let mut dc_prev = Tensor::zeros(&[hidden]);
    for j in 0..hidden {
        dc_prev.data_mut()[j] = dc_total.data()[j] * cache.f.data()[j];
    }
    (dx, dh_prev, dc_prev)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub h_enc: usize,
    pub h_dec: usize,
    pub emb_dim: usize,
    pub max_in: usize,
    pub max_out: usize,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            h_enc: 600,
            h_dec: 1000,
            emb_dim: 200,
            max_in: 32,
            max_out: 8,
            dropout: 0.5,
        }
    }
}

/// The full trainable model plus its attached vocabularies and (optional)
/// TF-IDF prior index. `index = None` is the ablation mode without prior
/// knowledge (|C| = 0).
#[derive(Debug, Clone, PartialEq)]
pub struct Seq2SeqModel {
    pub embeddings: EmbeddingMatrix,
    pub enc_fwd: LstmCellParams,
    pub enc_bwd: LstmCellParams,
    pub dec: LstmCellParams,
    pub w_out: Tensor, // [|CodeVocab| × H_dec]
    pub b_out: Tensor, // [|CodeVocab|]
    pub config: ModelConfig,
    pub index: Option<TfIdfIndex>,
    pub vocab: Vocab,
    pub code_vocab: CodeVocab,
}

/// Gradients for every trainable parameter, in the same canonical order as
/// [`Seq2SeqModel::param_names`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub embeddings: Tensor,
    pub enc_fwd: LstmCellGrads,
    pub enc_bwd: LstmCellGrads,
    pub dec: LstmCellGrads,
    pub w_out: Tensor,
    pub b_out: Tensor,
}

pub const PARAM_NAMES: [&str; 12] = [
    "embeddings",
    "enc_fwd.w_x",
    "enc_fwd.w_h",
    "enc_fwd.b",
    "enc_bwd.w_x",
    "enc_bwd.w_h",
    "enc_bwd.b",
    "dec.w_x",
    "dec.w_h",
    "dec.b",
    "w_out",
    "b_out",
];

impl Seq2SeqModel {
    pub fn new(
        embeddings: EmbeddingMatrix,
        vocab: Vocab,
        code_vocab: CodeVocab,
        index: Option<TfIdfIndex>,
        config: ModelConfig,
        rng: &mut Rng,
    ) -> Seq2SeqModel {
        let prior_dim = index.as_ref().map(|i| i.dim()).unwrap_or(0);
        let d_ctx = 2 * config.h_enc + prior_dim;
        let enc_fwd = LstmCellParams::init(config.emb_dim, config.h_enc, rng);
        let enc_bwd = LstmCellParams::init(config.emb_dim, config.h_enc, rng);
        let dec = LstmCellParams::init(d_ctx, config.h_dec, rng);
        let n_codes = code_vocab.len();
        let mut w_out = Tensor::zeros(&[n_codes, config.h_dec]);
        let bound = (6.0 / (config.h_dec + n_codes) as f64).sqrt();
        w_out.fill_uniform(rng, -bound, bound);
        let b_out = Tensor::zeros(&[n_codes]);
        Seq2SeqModel {
            embeddings,
            enc_fwd,
            enc_bwd,
            dec,
            w_out,
            b_out,
            config,
            index,
            vocab,
            code_vocab,
        }
    }

    /// |C|: prior-vector dimension, 0 when the prior is disabled.
    pub fn prior_dim(&self) -> usize {
        self.index.as_ref().map(|i| i.dim()).unwrap_or(0)
    }

    /// Decoder input width 2·H_enc + |C|.
    pub fn context_dim(&self) -> usize {
        2 * self.config.h_enc + self.prior_dim()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        vec![
            &self.embeddings.matrix,
            &self.enc_fwd.w_x,
            &self.enc_fwd.w_h,
            &self.enc_fwd.b,
            &self.enc_bwd.w_x,
            &self.enc_bwd.w_h,
            &self.enc_bwd.b,
            &self.dec.w_x,
            &self.dec.w_h,
            &self.dec.b,
            &self.w_out,
            &self.b_out,
        ]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.embeddings.matrix,
            &mut self.enc_fwd.w_x,
            &mut self.enc_fwd.w_h,
            &mut self.enc_fwd.b,
            &mut self.enc_bwd.w_x,
            &mut self.enc_bwd.w_h,
            &mut self.enc_bwd.b,
            &mut self.dec.w_x,
            &mut self.dec.w_h,
            &mut self.dec.b,
            &mut self.w_out,
            &mut self.b_out,
        ]
    }
}

impl Gradients {
    pub fn zeros(model: &Seq2SeqModel) -> Gradients {
        Gradients {
            embeddings: Tensor::zeros(model.embeddings.matrix.shape()),
            enc_fwd: LstmCellGrads::zeros(&model.enc_fwd),
            enc_bwd: LstmCellGrads::zeros(&model.enc_bwd),
            dec: LstmCellGrads::zeros(&model.dec),
            w_out: Tensor::zeros(model.w_out.shape()),
            b_out: Tensor::zeros(model.b_out.shape()),
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        vec![
            &self.embeddings,
            &self.enc_fwd.w_x,
            &self.enc_fwd.w_h,
            &self.enc_fwd.b,
            &self.enc_bwd.w_x,
            &self.enc_bwd.w_h,
            &self.enc_bwd.b,
            &self.dec.w_x,
            &self.dec.w_h,
            &self.dec.b,
            &self.w_out,
            &self.b_out,
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.embeddings,
            &mut self.enc_fwd.w_x,
            &mut self.enc_fwd.w_h,
            &mut self.enc_fwd.b,
            &mut self.enc_bwd.w_x,
            &mut self.enc_bwd.w_h,
            &mut self.enc_bwd.b,
            &mut self.dec.w_x,
            &mut self.dec.w_h,
            &mut self.dec.b,
            &mut self.w_out,
            &mut self.b_out,
        ]
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            t.scale(s);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .map(|t| t.data().iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }
}

struct ChainCache {
    steps: Vec<LstmStepCache>,
    final_h: Tensor,
}

fn run_chain(
    xs: &Tensor, // [T × d]
    order: impl Iterator<Item = usize>,
    p: &LstmCellParams,
) -> Result<ChainCache> {
    let mut h = Tensor::zeros(&[p.hidden]);
    let mut c = Tensor::zeros(&[p.hidden]);
    let mut steps = Vec::new();
    for t in order {
        let x = Tensor::vector(xs.row(t).to_vec());
        let (h2, c2, cache) = lstm_step_cached(&x, &h, &c, p)?;
        h = h2;
        c = c2;
        steps.push(cache);
    }
    Ok(ChainCache { steps, final_h: h })
}

/// Backward through a whole chain given the gradient of its final hidden
/// state. Returns per-step input gradients in the same order the chain
/// consumed them.
fn chain_backward(
    cache: &ChainCache,
    d_final_h: &Tensor,
    p: &LstmCellParams,
    grads: &mut LstmCellGrads,
) -> Vec<Tensor> {
    let mut dh = d_final_h.clone();
    let mut dc = Tensor::zeros(&[p.hidden]);
    let mut dxs = vec![Tensor::zeros(&[p.input]); cache.steps.len()];
    for (s, step) in cache.steps.iter().enumerate().rev() {
        let (dx, dh_prev, dc_prev) = lstm_step_backward(&dh, &dc, step, p, grads);
        dxs[s] = dx;
        dh = dh_prev;
        dc = dc_prev;
    }
    dxs
}

/// Encoder forward only: enc_state = concat(h_fwd at the last step, h_bwd at
/// the first step). PAD positions are processed like tokens (zero embedding
/// rows).
pub fn encode(model: &Seq2SeqModel, token_ids: &[usize]) -> Result<Tensor> {
    assert!(!token_ids.is_empty());
    let xs = lookup(&model.embeddings.matrix, token_ids);
    let t = token_ids.len();
    let fwd = run_chain(&xs, 0..t, &model.enc_fwd)?;
    let bwd = run_chain(&xs, (0..t).rev(), &model.enc_bwd)?;
    Ok(concat(&fwd.final_h, &bwd.final_h))
}

/// Context vector fed to every decoder step: dropout(enc_state) ‖ prior.
/// During inference dropout is the identity.
pub fn build_context(
    model: &Seq2SeqModel,
    enc_state: &Tensor,
    raw_text: &str,
    training: bool,
    rng: &mut Rng,
) -> Tensor {
    let (dropped, _) = dropout(enc_state, model.config.dropout, rng, training);
    match &model.index {
        Some(index) => concat(&dropped, &index.cosine_vector(raw_text)),
        None => dropped,
    }
}

/// Decoder forward only: zero initial state, the same context as input at
/// every step, logits_t = W_out·h_t + b_out.
pub fn decode(model: &Seq2SeqModel, context: &Tensor) -> Result<Tensor> {
    let n_codes = model.code_vocab.len();
    let mut logits = Tensor::zeros(&[model.config.max_out, n_codes]);
    let mut h = Tensor::zeros(&[model.config.h_dec]);
    let mut c = Tensor::zeros(&[model.config.h_dec]);
    for t in 0..model.config.max_out {
        let (h2, c2) = lstm_step(context, &h, &c, &model.dec)?;
        h = h2;
        c = c2;
        let mut row = matvec(&model.w_out, &h)?;
        row.add_assign(&model.b_out);
        logits.row_mut(t).copy_from_slice(row.data());
    }
    Ok(logits)
}

/// Full differentiable pass for one record: mean cross-entropy over the
/// unmasked output steps (up to and including EOS) plus gradients for every
/// trainable parameter.
pub fn forward_loss(
    model: &Seq2SeqModel,
    encoded: &EncodedRecord,
    raw_text: &str,
    training: bool,
    rng: &mut Rng,
) -> Result<(f64, Gradients)> {
    let cfg = &model.config;
    let t_in = encoded.token_ids.len();
    let mut grads = Gradients::zeros(model);

    // ---- forward ----
    let xs = lookup(&model.embeddings.matrix, &encoded.token_ids);
    let (xs_dropped, x_mask) = dropout(&xs, cfg.dropout, rng, training);
    let fwd = run_chain(&xs_dropped, 0..t_in, &model.enc_fwd)?;
    let bwd = run_chain(&xs_dropped, (0..t_in).rev(), &model.enc_bwd)?;
    let enc_state = concat(&fwd.final_h, &bwd.final_h);

    let (enc_dropped, enc_mask) = dropout(&enc_state, cfg.dropout, rng, training);
    let prior = model
        .index
        .as_ref()
        .map(|i| i.cosine_vector(raw_text))
        .unwrap_or_else(|| Tensor::vector(vec![]));
    let context = concat(&enc_dropped, &prior);

    // decoder roll-out
    let mut h = Tensor::zeros(&[cfg.h_dec]);
    let mut c = Tensor::zeros(&[cfg.h_dec]);
    let mut dec_caches = Vec::with_capacity(cfg.max_out);
    let mut hs = Vec::with_capacity(cfg.max_out);
    let mut dlogits_steps: Vec<Option<Tensor>> = Vec::with_capacity(cfg.max_out);

    let eos_pos = encoded
        .target_ids
        .iter()
        .position(|&id| id == EOS_ID)
        .unwrap_or(cfg.max_out - 1);
    let n_unmasked = (eos_pos + 1) as f64;

    let mut loss = 0.0;
    for t in 0..cfg.max_out {
        let (h2, c2, cache) = lstm_step_cached(&context, &h, &c, &model.dec)?;
        h = h2;
        c = c2;
        dec_caches.push(cache);
        hs.push(h.clone());
        if t <= eos_pos {
            let mut logits = matvec(&model.w_out, &h)?;
            logits.add_assign(&model.b_out);
            let (l, mut dl) = softmax_cross_entropy(&logits, encoded.target_ids[t])?;
            loss += l;
            dl.scale(1.0 / n_unmasked);
            dlogits_steps.push(Some(dl));
        } else {
            dlogits_steps.push(None);
        }
    }
    loss /= n_unmasked;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            context: "forward_loss".to_string(),
        });
    }

    // ---- backward ----
    let mut d_context = Tensor::zeros(context.shape());
    let mut dh = Tensor::zeros(&[cfg.h_dec]);
    let mut dc = Tensor::zeros(&[cfg.h_dec]);
    for t in (0..cfg.max_out).rev() {
        if let Some(dl) = &dlogits_steps[t] {
            grads.b_out.add_assign(dl);
            matvec_backward(&model.w_out, &hs[t], dl, &mut grads.w_out, &mut dh);
        }
        let (dx, dh_prev, dc_prev) =
            lstm_step_backward(&dh, &dc, &dec_caches[t], &model.dec, &mut grads.dec);
        d_context.add_assign(&dx);
        dh = dh_prev;
        dc = dc_prev;
    }

    let (d_enc_dropped, _d_prior) = split_grad(&d_context, enc_state.len());
    let d_enc_state = dropout_backward(&d_enc_dropped, &enc_mask);
    let (d_fwd_h, d_bwd_h) = split_grad(&d_enc_state, cfg.h_enc);

    let dxs_fwd = chain_backward(&fwd, &d_fwd_h, &model.enc_fwd, &mut grads.enc_fwd);
    let dxs_bwd = chain_backward(&bwd, &d_bwd_h, &model.enc_bwd, &mut grads.enc_bwd);

    // combine per-position input gradients (bwd chain consumed reversed order)
    let mut d_xs = Tensor::zeros(xs.shape());
    for (s, dx) in dxs_fwd.iter().enumerate() {
        for (dst, v) in d_xs.row_mut(s).iter_mut().zip(dx.data()) {
            *dst += v;
        }
    }
    for (s, dx) in dxs_bwd.iter().enumerate() {
        let pos = t_in - 1 - s;
        for (dst, v) in d_xs.row_mut(pos).iter_mut().zip(dx.data()) {
            *dst += v;
        }
    }
    let d_xs = dropout_backward(&d_xs, &x_mask);
    lookup_backward(&d_xs, &encoded.token_ids, &mut grads.embeddings);

    Ok((loss, grads))
}
