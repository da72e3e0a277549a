//! Optimization loop (Adam over mini-batches), the five-fold
//! cross-validation protocol, and checkpoint persistence.
//!
//! Checkpoint format: little-endian binary, magic `CRTC`, version u32, then
//! length-prefixed named sections (config text, vocabularies, TF-IDF index,
//! tensors as shape + raw f64). Round trips are bitwise-faithful.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::corpus::{
    build_code_vocab, build_vocab, encode_record, CodeVocab, EncodedRecord, IcdCode, Record, Vocab,
};
use crate::embeddings::{build_embedding_matrix, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::eval::{predict_corpus, score, MetricsReport};
use crate::model::{forward_loss, Gradients, ModelConfig, Seq2SeqModel, PARAM_NAMES};
use crate::prior::TfIdfIndex;
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout: f64,
    pub seed: u64,
    pub shuffle: bool,
    /// Optional global-norm gradient clip; off by default.
    pub clip_norm: Option<f64>,
    pub min_count: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
            batch_size: 20,
            epochs: 10,
            dropout: 0.5,
            seed: 0,
            shuffle: true,
            clip_norm: None,
            min_count: 1,
        }
    }
}

/// First/second Adam moments, shapes mirroring the parameters exactly.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl AdamState {
    pub fn new(model: &Seq2SeqModel) -> AdamState {
        let zeros: Vec<Tensor> = model
            .params()
            .into_iter()
            .map(|p| Tensor::zeros(p.shape()))
            .collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// One Adam update: m←β₁m+(1−β₁)g, v←β₂v+(1−β₂)g², bias-corrected, then
/// θ←θ−lr·m̂/(√v̂+ε). Errors on any non-finite gradient, naming the
/// offending parameter.
pub fn adam_step(
    model: &mut Seq2SeqModel,
    grads: &Gradients,
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<()> {
    for (name, g) in PARAM_NAMES.iter().zip(grads.tensors()) {
        g.assert_finite(&format!("gradient of {}", name))?;
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for ((param, g), (m, v)) in model
        .params_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        debug_assert_eq!(param.shape(), g.shape());
        debug_assert_eq!(param.shape(), m.shape());
        for i in 0..param.len() {
            let gi = g.data()[i];
            let mi = cfg.beta1 * m.data()[i] + (1.0 - cfg.beta1) * gi;
            let vi = cfg.beta2 * v.data()[i] + (1.0 - cfg.beta2) * gi * gi;
            m.data_mut()[i] = mi;
            v.data_mut()[i] = vi;
            let m_hat = mi / bc1;
            let v_hat = vi / bc2;
            param.data_mut()[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps_adam);
        }
    }
    Ok(())
}

/// Seed-deterministic batching; the final partial batch is kept.
pub fn make_batches(n: usize, batch_size: usize, rng: &mut Rng, shuffle: bool) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1);
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        rng.shuffle(&mut order);
    }
    order.chunks(batch_size).map(|c| c.to_vec()).collect()
}

/// Train in place; returns the per-epoch mean loss trace (exactly `epochs`
/// entries). Deterministic under a fixed seed in single-threaded mode.
pub fn train(
    model: &mut Seq2SeqModel,
    records: &[Record],
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    model.config.dropout = cfg.dropout;
    let encoded: Vec<EncodedRecord> = records
        .iter()
        .map(|r| {
            encode_record(
                r,
                &model.vocab,
                &model.code_vocab,
                model.config.max_in,
                model.config.max_out,
            )
        })
        .collect();
    let mut rng = Rng::new(cfg.seed);
    let mut adam = AdamState::new(model);
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let batches = make_batches(records.len(), cfg.batch_size, &mut rng, cfg.shuffle);
        let mut epoch_loss = 0.0;
        for (batch_no, batch) in batches.iter().enumerate() {
            let mut grads = Gradients::zeros(model);
            let mut batch_loss = 0.0;
            for &i in batch {
                let (loss, g) =
                    forward_loss(model, &encoded[i], &records[i].raw_text, true, &mut rng)
                        .map_err(|e| {
                            Error::NonFinite {
                                context: format!("epoch {} batch {}: {}", epoch + 1, batch_no + 1, e),
                            }
                        })?;
                batch_loss += loss;
                grads.add_assign(&g);
            }
            grads.scale(1.0 / batch.len() as f64);
            if let Some(max_norm) = cfg.clip_norm {
                let norm = grads.global_norm();
                if norm > max_norm {
                    grads.scale(max_norm / norm);
                }
            }
            epoch_loss += batch_loss;
            adam_step(model, &grads, &mut adam, cfg)?;
        }
        let mean = epoch_loss / records.len() as f64;
        if !mean.is_finite() {
            return Err(Error::NonFinite {
                context: format!("epoch {} mean loss", epoch + 1),
            });
        }
        trace.push(mean);
    }
    Ok(trace)
}

/// Seed-deterministic partition of 0..n into k folds whose sizes differ by
/// at most one.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Vec<Vec<usize>> {
    assert!(k >= 2 && n >= k);
    let mut order: Vec<usize> = (0..n).collect();
    Rng::new(seed).shuffle(&mut order);
    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        folds.push(order[start..start + size].to_vec());
        start += size;
    }
    folds
}

#[derive(Debug, Clone)]
pub struct CvResult {
    pub per_fold: Vec<MetricsReport>,
    pub mean_precision: f64,
    pub mean_recall: f64,
    pub mean_f: f64,
}

/// K-fold cross-validation: each fold trains a fresh model (vocabularies and
/// parameters rebuilt from its training split) and is evaluated on the
/// held-out records. The TF-IDF index comes from the external dictionary
/// and is constant across folds; `index = None` runs the no-prior ablation.
#[allow(clippy::too_many_arguments)]
pub fn cross_validate(
    records: &[Record],
    index: Option<&TfIdfIndex>,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    pretrained: Option<&HashMap<String, Vec<f64>>>,
    k: usize,
) -> Result<CvResult> {
    let folds = kfold_split(records.len(), k, train_cfg.seed);
    let mut per_fold = Vec::with_capacity(k);
    for (f, held_out) in folds.iter().enumerate() {
        let holdout_set: std::collections::HashSet<usize> = held_out.iter().copied().collect();
        let train_records: Vec<Record> = (0..records.len())
            .filter(|i| !holdout_set.contains(i))
            .map(|i| records[i].clone())
            .collect();
        let eval_records: Vec<Record> = held_out.iter().map(|&i| records[i].clone()).collect();

        let mut fold_cfg = train_cfg.clone();
        fold_cfg.seed = Rng::new(train_cfg.seed ^ (f as u64 + 1)).next_u64();
        let mut rng = Rng::new(fold_cfg.seed);
        let vocab = build_vocab(&train_records, fold_cfg.min_count);
        let code_vocab = build_code_vocab(&train_records);
        let emb = build_embedding_matrix(&vocab, pretrained, model_cfg.emb_dim, &mut rng);
        let mut model = Seq2SeqModel::new(
            emb,
            vocab,
            code_vocab,
            index.cloned(),
            model_cfg.clone(),
            &mut rng,
        );
        train(&mut model, &train_records, &fold_cfg)?;
        let predictions = predict_corpus(&model, &eval_records)?;
        per_fold.push(score(&predictions, &eval_records)?);
    }
    let kf = k as f64;
    Ok(CvResult {
        mean_precision: per_fold.iter().map(|m| m.precision()).sum::<f64>() / kf,
        mean_recall: per_fold.iter().map(|m| m.recall()).sum::<f64>() / kf,
        mean_f: per_fold.iter().map(|m| m.f_measure()).sum::<f64>() / kf,
        per_fold,
    })
}

// ---------------------------------------------------------------------------
// checkpoint persistence

const MAGIC: &[u8; 4] = b"CRTC";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainMeta {
    pub epochs_completed: u32,
    pub final_loss: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Seq2SeqModel,
    pub meta: TrainMeta,
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Writer {
        Writer { buf: Vec::new() }
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }
    fn tensor(&mut self, t: &Tensor) {
        self.u32(t.shape().len() as u32);
        for &d in t.shape() {
            self.u64(d as u64);
        }
        for &v in t.data() {
            self.f64(v);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint("truncated file".to_string()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Checkpoint("invalid utf-8 string".to_string()))
    }
    fn tensor(&mut self) -> Result<Tensor> {
        let ndims = self.u32()? as usize;
        let mut shape = Vec::with_capacity(ndims);
        for _ in 0..ndims {
            shape.push(self.u64()? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(self.f64()?);
        }
        Tensor::from_vec(&shape, data).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = Writer::new();
        w.buf.extend_from_slice(MAGIC);
        w.u32(VERSION);

        // config as structured key=value text
        let m = &self.model;
        let cfg = &m.config;
        let config_text = format!(
            "h_enc={}\nh_dec={}\nemb_dim={}\nmax_in={}\nmax_out={}\ndropout={}\ncoverage={}\nhas_prior={}\n",
            cfg.h_enc,
            cfg.h_dec,
            cfg.emb_dim,
            cfg.max_in,
            cfg.max_out,
            cfg.dropout,
            m.embeddings.coverage,
            m.index.is_some(),
        );
        w.str(&config_text);

        // metadata
        w.u32(self.meta.epochs_completed);
        w.f64(self.meta.final_loss);
        w.u64(self.meta.seed);

        // vocabularies in id order
        w.u32(m.vocab.len() as u32);
        for id in 2..m.vocab.len() {
            w.str(m.vocab.token(id));
        }
        w.u32(m.code_vocab.len() as u32);
        for code in m.code_vocab.codes() {
            w.str(code.as_str());
        }

        // prior index
        if let Some(index) = &m.index {
            w.u32(index.terms.len() as u32);
            for t in &index.terms {
                w.str(t);
            }
            for &v in &index.idf {
                w.f64(v);
            }
            w.u32(index.code_order.len() as u32);
            for (code, vec) in index.code_order.iter().zip(&index.doc_vectors) {
                w.str(code.as_str());
                w.u32(vec.len() as u32);
                for &(id, weight) in vec {
                    w.u64(id as u64);
                    w.f64(weight);
                }
            }
        }

        // parameter tensors in canonical order
        w.u32(m.params().len() as u32);
        for (name, t) in PARAM_NAMES.iter().zip(m.params()) {
            w.str(name);
            w.tensor(t);
        }

        fs::write(path, &w.buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut r = Reader { buf: &buf, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("bad magic bytes".to_string()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {} (expected {})",
                version, VERSION
            )));
        }

        let config_text = r.str()?;
        let mut kv = HashMap::new();
        for line in config_text.lines() {
            if let Some((k, v)) = line.split_once('=') {
                kv.insert(k.to_string(), v.to_string());
            }
        }
        let get = |k: &str| -> Result<&String> {
            kv.get(k)
                .ok_or_else(|| Error::Checkpoint(format!("missing config key {}", k)))
        };
        let config = ModelConfig {
            h_enc: get("h_enc")?.parse().unwrap_or_default(),
            h_dec: get("h_dec")?.parse().unwrap_or_default(),
            emb_dim: get("emb_dim")?.parse().unwrap_or_default(),
            max_in: get("max_in")?.parse().unwrap_or_default(),
            max_out: get("max_out")?.parse().unwrap_or_default(),
            dropout: get("dropout")?.parse().unwrap_or_default(),
        };
        let coverage: f64 = get("coverage")?.parse().unwrap_or(0.0);
        let has_prior: bool = get("has_prior")?.parse().unwrap_or(false);

        let meta = TrainMeta {
            epochs_completed: r.u32()?,
            final_loss: r.f64()?,
            seed: r.u64()?,
        };

        let vocab_len = r.u32()? as usize;
        let mut tokens = Vec::with_capacity(vocab_len.saturating_sub(2));
        for _ in 2..vocab_len {
            tokens.push(r.str()?);
        }
        let vocab = Vocab::from_tokens(tokens);

        let cv_len = r.u32()? as usize;
        let mut codes = Vec::with_capacity(cv_len.saturating_sub(2));
        for _ in 2..cv_len {
            codes.push(IcdCode::parse(&r.str()?).map_err(|e| Error::Checkpoint(e.to_string()))?);
        }
        let code_vocab = CodeVocab::from_codes(codes);

        let index = if has_prior {
            let n_terms = r.u32()? as usize;
            let mut terms = Vec::with_capacity(n_terms);
            for _ in 0..n_terms {
                terms.push(r.str()?);
            }
            let mut idf = Vec::with_capacity(n_terms);
            for _ in 0..n_terms {
                idf.push(r.f64()?);
            }
            let n_codes = r.u32()? as usize;
            let mut code_order = Vec::with_capacity(n_codes);
            let mut doc_vectors = Vec::with_capacity(n_codes);
            for _ in 0..n_codes {
                code_order
                    .push(IcdCode::parse(&r.str()?).map_err(|e| Error::Checkpoint(e.to_string()))?);
                let n = r.u32()? as usize;
                let mut vec = Vec::with_capacity(n);
                for _ in 0..n {
                    let id = r.u64()? as usize;
                    let weight = r.f64()?;
                    vec.push((id, weight));
                }
                doc_vectors.push(vec);
            }
            let term_to_id = terms
                .iter()
                .enumerate()
                .map(|(i, t)| (t.clone(), i))
                .collect();
            Some(TfIdfIndex {
                term_to_id,
                terms,
                idf,
                doc_vectors,
                code_order,
            })
        } else {
            None
        };

        let n_params = r.u32()? as usize;
        if n_params != PARAM_NAMES.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter tensors, found {}",
                PARAM_NAMES.len(),
                n_params
            )));
        }
        let mut tensors = HashMap::new();
        for _ in 0..n_params {
            let name = r.str()?;
            tensors.insert(name, r.tensor()?);
        }
        let mut grab = |name: &str| -> Result<Tensor> {
            tensors
                .remove(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {}", name)))
        };

        let embeddings = EmbeddingMatrix {
            matrix: grab("embeddings")?,
            dim: config.emb_dim,
            coverage,
        };
        let cell = |w_x: Tensor, w_h: Tensor, b: Tensor| crate::model::LstmCellParams {
            hidden: w_h.cols(),
            input: w_x.cols(),
            w_x,
            w_h,
            b,
        };
        let model = Seq2SeqModel {
            embeddings,
            enc_fwd: cell(grab("enc_fwd.w_x")?, grab("enc_fwd.w_h")?, grab("enc_fwd.b")?),
            enc_bwd: cell(grab("enc_bwd.w_x")?, grab("enc_bwd.w_h")?, grab("enc_bwd.b")?),
            dec: cell(grab("dec.w_x")?, grab("dec.w_h")?, grab("dec.b")?),
            w_out: grab("w_out")?,
            b_out: grab("b_out")?,
            config,
            index,
            vocab,
            code_vocab,
        };
        // D_ctx consistency must hold on load
        if model.dec.input != model.context_dim() {
            return Err(Error::Checkpoint(format!(
                "decoder input width {} does not match context width {}",
                model.dec.input,
                model.context_dim()
            )));
        }
        for (name, t) in PARAM_NAMES.iter().zip(model.params()) {
            t.assert_finite(name)?;
        }
        Ok(Checkpoint { model, meta })
    }
}
