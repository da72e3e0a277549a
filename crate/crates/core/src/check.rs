//! Gradient-check harness shared by the test suites and the `gradcheck` CLI
//! command: every differentiable primitive plus the full model, verified
//! against central finite differences on toy sizes.

use crate::corpus::{build_code_vocab, build_vocab, encode_record, parse_corpus, Record};
use crate::embeddings::build_embedding_matrix;
use crate::model::{forward_loss, LstmCellGrads, LstmCellParams, ModelConfig, Seq2SeqModel};
use crate::prior::{build_code_documents, fit_tfidf, parse_dictionary};
use crate::rng::Rng;
use crate::tensor::{
    grad_check, grad_check_richardson, matmul, matmul_backward, sigmoid, sigmoid_backward,
    softmax_cross_entropy, tanh,
    tanh_backward, Tensor,
};

/// One gradient-check result row.
#[derive(Debug, Clone)]
pub struct CheckLine {
    pub name: String,
    pub max_rel_err: f64,
    pub threshold: f64,
}

impl CheckLine {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.threshold
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A small fixed corpus and 3-code dictionary used for toy models.
const TOY_CORPUS: &str = "d1;1;afib flutter;A000\nd2;1;kidney disease;B000\n\
d3;1;heart failure afib;C000\nd3;1;heart failure afib;A000\n";
const TOY_DICT: &str = "afib flutter;A000;;\nkidney disease;B000;;\nheart failure;C000;;\n";

/// Toy model with H_enc=3, H_dec=4, d=5, |C|=3, max_in=3, max_out=3.
pub fn toy_model(seed: u64, with_prior: bool) -> (Seq2SeqModel, Vec<Record>) {
    let path = std::path::PathBuf::from("<toy>");
    let records = parse_corpus(TOY_CORPUS, &path).expect("toy corpus");
    let vocab = build_vocab(&records, 1);
    let code_vocab = build_code_vocab(&records);
    let index = if with_prior {
        let entries = parse_dictionary(TOY_DICT, &path).expect("toy dictionary");
        Some(fit_tfidf(&build_code_documents(&entries)))
    } else {
        None
    };
    let mut rng = Rng::new(seed);
    let config = ModelConfig {
        h_enc: 3,
        h_dec: 4,
        emb_dim: 5,
        max_in: 3,
        max_out: 3,
        dropout: 0.5,
    };
    let emb = build_embedding_matrix(&vocab, None, config.emb_dim, &mut rng);
    let model = Seq2SeqModel::new(emb, vocab, code_vocab, index, config, &mut rng);
    (model, records)
}

/// Max relative error of full-model analytic gradients vs central
/// differences (dropout disabled: the objective must be deterministic for
/// finite differences). Uses Richardson extrapolation over a step ladder:
/// plain central differences cannot reach the tolerance on near-zero
/// gradient coordinates of the deep unrolled graph, where the quotient is
/// dominated by roundoff in the two loss evaluations.
pub fn full_model_grad_check(seed: u64, with_prior: bool) -> f64 {
    let (model, records) = toy_model(seed, with_prior);
    let rec = &records[2];
    let encoded = encode_record(
        rec,
        &model.vocab,
        &model.code_vocab,
        model.config.max_in,
        model.config.max_out,
    );
    let mut rng = Rng::new(0);
    let (_, grads) = forward_loss(&model, &encoded, &rec.raw_text, false, &mut rng).expect("toy forward");
    let params: Vec<Tensor> = model.params().into_iter().cloned().collect();
    let analytic: Vec<Tensor> = grads.tensors().into_iter().cloned().collect();
    grad_check_richardson(
        |ps| {
            let mut m = model.clone();
            for (dst, src) in m.params_mut().into_iter().zip(ps) {
                *dst = src.clone();
            }
            let mut r = Rng::new(0);
            forward_loss(&m, &encoded, &rec.raw_text, false, &mut r)
                .expect("toy forward")
                .0
        },
        &params,
        &analytic,
        0.2,
        12,
    )
}

fn matmul_check(rng: &mut Rng) -> f64 {
    let (m, k, n) = (2 + rng.below(3), 2 + rng.below(3), 2 + rng.below(3));
    let mut a = Tensor::zeros(&[m, k]);
    let mut b = Tensor::zeros(&[k, n]);
    let mut w = Tensor::zeros(&[m, n]);
    a.fill_uniform(rng, -1.0, 1.0);
    b.fill_uniform(rng, -1.0, 1.0);
    w.fill_uniform(rng, -1.0, 1.0);
    let (da, db) = matmul_backward(&a, &b, &w);
    grad_check(
        |ps| dot(matmul(&ps[0], &ps[1]).unwrap().data(), w.data()),
        &[a, b],
        &[da, db],
        1e-5,
    )
}

fn sigmoid_check(rng: &mut Rng) -> f64 {
    let mut x = Tensor::zeros(&[8]);
    let mut w = Tensor::zeros(&[8]);
    x.fill_uniform(rng, -2.0, 2.0);
    w.fill_uniform(rng, -1.0, 1.0);
    let dx = sigmoid_backward(&sigmoid(&x), &w);
    grad_check(|ps| dot(sigmoid(&ps[0]).data(), w.data()), &[x], &[dx], 1e-5)
}

fn tanh_check(rng: &mut Rng) -> f64 {
    let mut x = Tensor::zeros(&[8]);
    let mut w = Tensor::zeros(&[8]);
    x.fill_uniform(rng, -2.0, 2.0);
    w.fill_uniform(rng, -1.0, 1.0);
    let dx = tanh_backward(&tanh(&x), &w);
    grad_check(|ps| dot(tanh(&ps[0]).data(), w.data()), &[x], &[dx], 1e-5)
}

fn cross_entropy_check(rng: &mut Rng) -> f64 {
    let n = 3 + rng.below(5);
    let target = rng.below(n);
    let mut x = Tensor::zeros(&[n]);
    x.fill_uniform(rng, -2.0, 2.0);
    let (_, dx) = softmax_cross_entropy(&x, target).unwrap();
    grad_check(
        |ps| softmax_cross_entropy(&ps[0], target).unwrap().0,
        &[x],
        &[dx],
        1e-5,
    )
}

fn lstm_step_check(rng: &mut Rng) -> f64 {
    use crate::model::{lstm_step, lstm_step_backward, lstm_step_cached};
    let p = LstmCellParams::init(2, 3, rng);
    let mut x = Tensor::zeros(&[2]);
    let mut h = Tensor::zeros(&[3]);
    let mut c = Tensor::zeros(&[3]);
    let mut wh = Tensor::zeros(&[3]);
    x.fill_uniform(rng, -1.0, 1.0);
    h.fill_uniform(rng, -1.0, 1.0);
    c.fill_uniform(rng, -1.0, 1.0);
    wh.fill_uniform(rng, -1.0, 1.0);
    let (_, _, cache) = lstm_step_cached(&x, &h, &c, &p).unwrap();
    let mut grads = LstmCellGrads::zeros(&p);
    let zero_c = Tensor::zeros(&[3]);
    let (dx, dh_prev, dc_prev) = lstm_step_backward(&wh, &zero_c, &cache, &p, &mut grads);
    grad_check_richardson(
        |ps| {
            let pp = LstmCellParams {
                w_x: ps[0].clone(),
                w_h: ps[1].clone(),
                b: ps[2].clone(),
                hidden: 3,
                input: 2,
            };
            let (h2, _) = lstm_step(&ps[3], &ps[4], &ps[5], &pp).unwrap();
            dot(h2.data(), wh.data())
        },
        &[p.w_x.clone(), p.w_h.clone(), p.b.clone(), x, h, c],
        &[grads.w_x, grads.w_h, grads.b, dx, dh_prev, dc_prev],
        0.1,
        10,
    )
}

/// Run every check for `seeds` random seeds and report the worst relative
/// error per check. Primitives are held to 1e-6, the full model to 1e-5.
pub fn gradient_report(seeds: u64) -> Vec<CheckLine> {
    let mut lines = Vec::new();
    let mut worst = |name: &str, threshold: f64, f: &mut dyn FnMut(&mut Rng) -> f64| {
        let mut max_err = 0.0f64;
        for seed in 0..seeds {
            let mut rng = Rng::new(0x5eed ^ seed);
            max_err = max_err.max(f(&mut rng));
        }
        lines.push(CheckLine {
            name: name.to_string(),
            max_rel_err: max_err,
            threshold,
        });
    };
    worst("matmul", 1e-6, &mut matmul_check);
    worst("sigmoid", 1e-6, &mut sigmoid_check);
    worst("tanh", 1e-6, &mut tanh_check);
    worst("softmax_cross_entropy", 1e-6, &mut cross_entropy_check);
    worst("lstm_step", 1e-6, &mut lstm_step_check);
    worst("full_model_with_prior", 1e-5, &mut |rng: &mut Rng| {
        full_model_grad_check(rng.next_u64(), true)
    });
    worst("full_model_no_prior", 1e-5, &mut |rng: &mut Rng| {
        full_model_grad_check(rng.next_u64(), false)
    });
    lines
}
