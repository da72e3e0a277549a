//! Pre-trained word-vector loading (word2vec text format) and the trainable
//! embedding matrix. Rows for tokens missing from the pre-trained file are
//! sampled uniformly in [-0.25, 0.25]; the PAD row is pinned to zero and
//! excluded from gradient updates.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::corpus::{Vocab, PAD_ID};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub matrix: Tensor,
    pub dim: usize,
    /// Fraction of vocab tokens found in the pre-trained file (0 when no
    /// file was given).
    pub coverage: f64,
}

/// Parse word2vec text format: header `<count> <dim>`, then one
/// `token v1 ... vd` row per word. Duplicate tokens keep the first
/// occurrence.
pub fn load_word2vec_text(path: &Path) -> Result<(HashMap<String, Vec<f64>>, usize)> {
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = content.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "empty file"))?;
    let mut parts = header.split_whitespace();
    let _count: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::parse(path, 1, "bad header: expected `<count> <dim>`"))?;
    let dim: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::parse(path, 1, "bad header: expected `<count> <dim>`"))?;

    let mut map = HashMap::new();
    for (lineno, line) in lines {
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let token = fields.next().unwrap().to_string();
        let vec: Vec<f64> = fields
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| Error::parse(path, lineno, format!("bad float {:?}", f)))
            })
            .collect::<Result<_>>()?;
        if vec.len() != dim {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected {} components, got {}", dim, vec.len()),
            ));
        }
        map.entry(token).or_insert(vec);
    }
    Ok((map, dim))
}

/// Initialize the embedding matrix: copy pre-trained rows where found,
/// sample the rest uniformly in [-0.25, 0.25], pin PAD to zero.
pub fn build_embedding_matrix(
    vocab: &Vocab,
    pretrained: Option<&HashMap<String, Vec<f64>>>,
    dim: usize,
    rng: &mut Rng,
) -> EmbeddingMatrix {
    let mut matrix = Tensor::zeros(&[vocab.len(), dim]);
    let mut found = 0usize;
    for id in 0..vocab.len() {
        if id == PAD_ID {
            continue;
        }
        let row = pretrained.and_then(|m| m.get(vocab.token(id)));
        match row {
            Some(v) => {
                debug_assert_eq!(v.len(), dim);
                matrix.row_mut(id).copy_from_slice(v);
                found += 1;
            }
            None => {
                for x in matrix.row_mut(id) {
                    *x = rng.uniform(-0.25, 0.25);
                }
            }
        }
    }
    let coverage = if pretrained.is_some() && vocab.len() > 1 {
        // PAD excluded from the denominator; UNK can never be "found".
        found as f64 / (vocab.len() - 1) as f64
    } else {
        0.0
    };
    EmbeddingMatrix {
        matrix,
        dim,
        coverage,
    }
}

/// Gather rows for a token-id sequence into a [T×d] tensor.
pub fn lookup(matrix: &Tensor, token_ids: &[usize]) -> Tensor {
    let d = matrix.cols();
    let mut out = Tensor::zeros(&[token_ids.len(), d]);
    for (pos, &id) in token_ids.iter().enumerate() {
        out.row_mut(pos).copy_from_slice(matrix.row(id));
    }
    out
}

/// Scatter-add the output gradient back onto embedding rows. Repeated ids
/// accumulate; the PAD row is zeroed afterwards so padding never trains.
pub fn lookup_backward(d_out: &Tensor, token_ids: &[usize], d_matrix: &mut Tensor) {
    for (pos, &id) in token_ids.iter().enumerate() {
        let src = d_out.row(pos).to_vec();
        for (dst, s) in d_matrix.row_mut(id).iter_mut().zip(src) {
            *dst += s;
        }
    }
    for x in d_matrix.row_mut(PAD_ID) {
        *x = 0.0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::UNK_ID;
    use crate::tensor::grad_check;

    fn vocab(tokens: &[&str]) -> Vocab {
        Vocab::from_tokens(tokens.iter().map(|t| t.to_string()).collect())
    }

    fn write_tmp(content: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vec.txt");
        fs::write(&path, content).unwrap();
        (dir, path)
    }

    #[test]
    fn parse_word2vec_text() {
        let (_d, path) = write_tmp("3 4\na 1 2 3 4\nb 0.5 0.5 0.5 0.5\nc -1 -2 -3 -4\n");
        let (map, dim) = load_word2vec_text(&path).unwrap();
        assert_eq!(dim, 4);
        assert_eq!(map.len(), 3);
        assert_eq!(map["a"], vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn dimension_mismatch_reports_line() {
        let (_d, path) = write_tmp("2 4\na 1 2 3 4\nb 1 2 3\n");
        let err = load_word2vec_text(&path).unwrap_err();
        assert!(err.to_string().contains(":3:"), "{}", err);
    }

    #[test]
    fn duplicate_token_keeps_first() {
        let (_d, path) = write_tmp("2 2\na 1 2\na 9 9\n");
        let (map, _) = load_word2vec_text(&path).unwrap();
        assert_eq!(map["a"], vec![1.0, 2.0]);
    }

    #[test]
    fn pretrained_rows_copied_exactly() {
        let v = vocab(&["chf", "ckd"]);
        let mut pre = HashMap::new();
        pre.insert("chf".to_string(), vec![0.1, 0.2, 0.3]);
        let mut rng = Rng::new(1);
        let emb = build_embedding_matrix(&v, Some(&pre), 3, &mut rng);
        assert_eq!(emb.matrix.row(v.id("chf")), &[0.1, 0.2, 0.3]);
        // OOV row in bounds, PAD row zero
        assert!(emb.matrix.row(v.id("ckd")).iter().all(|x| x.abs() <= 0.25));
        assert!(emb.matrix.row(PAD_ID).iter().all(|&x| x == 0.0));
        // found: chf only, out of {unk, chf, ckd}
        assert!((emb.coverage - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn no_pretrained_all_random_in_bounds() {
        let v = vocab(&["a", "b", "c"]);
        let mut rng = Rng::new(2);
        let emb = build_embedding_matrix(&v, None, 5, &mut rng);
        for id in 1..v.len() {
            assert!(emb.matrix.row(id).iter().all(|x| x.abs() <= 0.25));
        }
        assert_eq!(emb.coverage, 0.0);
    }

    #[test]
    fn coverage_fraction() {
        let v = vocab(&["t1", "t2", "t3", "t4", "t5", "t6", "t7", "t8", "t9"]);
        let mut pre = HashMap::new();
        for t in ["t1", "t2", "t3", "t4", "t5", "t6", "t7"] {
            pre.insert(t.to_string(), vec![0.0, 0.0]);
        }
        let mut rng = Rng::new(3);
        let emb = build_embedding_matrix(&v, Some(&pre), 2, &mut rng);
        // 7 of 10 non-PAD rows found (UNK plus t1..t9)
        assert!((emb.coverage - 0.7).abs() < 1e-12);
    }

    #[test]
    fn oov_sampling_is_seed_deterministic() {
        let v = vocab(&["a", "b"]);
        let e1 = build_embedding_matrix(&v, None, 4, &mut Rng::new(7));
        let e2 = build_embedding_matrix(&v, None, 4, &mut Rng::new(7));
        assert_eq!(e1.matrix, e2.matrix);
    }

    #[test]
    fn lookup_rows() {
        let v = vocab(&["a"]);
        let mut rng = Rng::new(4);
        let emb = build_embedding_matrix(&v, None, 3, &mut rng);
        let x = lookup(&emb.matrix, &[PAD_ID, v.id("a"), v.id("a")]);
        assert!(x.row(0).iter().all(|&v| v == 0.0));
        assert_eq!(x.row(1), x.row(2));
        assert_eq!(x.row(1), emb.matrix.row(v.id("a")));
        let _ = UNK_ID;
    }

    #[test]
    fn lookup_backward_accumulates_repeated_ids() {
        let v = vocab(&["a", "b"]);
        let mut rng = Rng::new(5);
        let emb = build_embedding_matrix(&v, None, 3, &mut rng);
        let ids = [v.id("a"), v.id("b"), v.id("a")];
        let mut w = Tensor::zeros(&[3, 3]);
        w.fill_uniform(&mut rng, -1.0, 1.0);

        let x = lookup(&emb.matrix, &ids);
        let _ = x;
        let mut d_matrix = Tensor::zeros(emb.matrix.shape());
        lookup_backward(&w, &ids, &mut d_matrix);

        let err = grad_check(
            |ps| {
                let x = lookup(&ps[0], &ids);
                x.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
            },
            &[emb.matrix],
            &[d_matrix],
            1e-5,
        );
        assert!(err < 1e-8, "rel err {}", err);
    }
}
