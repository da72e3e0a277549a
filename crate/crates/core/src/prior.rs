//! Dictionary prior: per-code TF-IDF documents and the cosine-similarity
//! vector concatenated to the encoded state.
//!
//! Dictionary file format: UTF-8, `;`-separated rows
//! `diagnosis_text;icd1;icdC;icd2` with the trailing code fields optionally
//! empty; `#` comments allowed.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::corpus::{tokenize, IcdCode};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One dictionary row. Only icd1 participates in document construction;
/// icdC/icd2 are carried for completeness.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DictEntry {
    pub diagnosis_text: String,
    pub icd1: IcdCode,
    pub icd_c: Option<IcdCode>,
    pub icd2: Option<IcdCode>,
}

/// All diagnosis texts sharing one icd1, concatenated in file order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeDocument {
    pub code: IcdCode,
    pub text: String,
}

/// L2-normalized sparse TF-IDF vectors per code, with a fixed lexicographic
/// code ordering that defines the prior-vector component positions.
#[derive(Debug, Clone, PartialEq)]
pub struct TfIdfIndex {
    pub term_to_id: HashMap<String, usize>,
    /// Terms in id order (the inverse of `term_to_id`).
    pub terms: Vec<String>,
    /// idf[t] = ln((1+N)/(1+df(t))) + 1.
    pub idf: Vec<f64>,
    /// Per code (aligned with `code_order`): (term_id, weight) pairs sorted
    /// by term id, L2-normalized unless the document is empty.
    pub doc_vectors: Vec<Vec<(usize, f64)>>,
    pub code_order: Vec<IcdCode>,
}

pub fn load_dictionary(path: &Path) -> Result<Vec<DictEntry>> {
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dictionary(&content, path)
}

pub fn parse_dictionary(content: &str, path: &Path) -> Result<Vec<DictEntry>> {
    let mut entries = Vec::new();
    for (lineno, row) in content.lines().enumerate() {
        let lineno = lineno + 1;
        let row = row.trim_end_matches('\r');
        if row.is_empty() || row.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = row.split(';').map(|f| f.trim()).collect();
        if fields.first() == Some(&"diagnosis_text") {
            continue; // header row
        }
        if fields.len() != 4 {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected 4 `;`-separated fields, got {}", fields.len()),
            ));
        }
        if fields[0].is_empty() {
            return Err(Error::parse(path, lineno, "empty diagnosis_text"));
        }
        if fields[1].is_empty() {
            return Err(Error::parse(path, lineno, "missing icd1"));
        }
        let parse_code = |s: &str| -> Result<Option<IcdCode>> {
            if s.is_empty() {
                Ok(None)
            } else {
                IcdCode::parse(s)
                    .map(Some)
                    .map_err(|e| Error::parse(path, lineno, e.to_string()))
            }
        };
        entries.push(DictEntry {
            diagnosis_text: fields[0].to_string(),
            icd1: parse_code(fields[1])?.unwrap(),
            icd_c: parse_code(fields[2])?,
            icd2: parse_code(fields[3])?,
        });
    }
    Ok(entries)
}

pub fn write_dictionary(entries: &[DictEntry], path: &Path) -> Result<()> {
    let mut out = String::from("diagnosis_text;icd1;icdC;icd2\n");
    for e in entries {
        out.push_str(&format!(
            "{};{};{};{}\n",
            e.diagnosis_text,
            e.icd1,
            e.icd_c.as_ref().map(|c| c.as_str()).unwrap_or(""),
            e.icd2.as_ref().map(|c| c.as_str()).unwrap_or(""),
        ));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Group entries by icd1 (icdC/icd2 ignored) and concatenate diagnosis texts
/// in file order, separated by single spaces.
pub fn build_code_documents(entries: &[DictEntry]) -> Vec<CodeDocument> {
    let mut order: Vec<IcdCode> = Vec::new();
    let mut texts: HashMap<IcdCode, String> = HashMap::new();
    for e in entries {
        match texts.get_mut(&e.icd1) {
            Some(t) => {
                t.push(' ');
                t.push_str(&e.diagnosis_text);
            }
            None => {
                order.push(e.icd1.clone());
                texts.insert(e.icd1.clone(), e.diagnosis_text.clone());
            }
        }
    }
    order
        .into_iter()
        .map(|code| {
            let text = texts.remove(&code).unwrap();
            CodeDocument { code, text }
        })
        .collect()
}

/// Fit TF-IDF over the code documents: tf = raw term count, idf smoothed as
/// ln((1+N)/(1+df)) + 1, vectors L2-normalized. Document tokenization reuses
/// the corpus tokenizer so query and document spaces align.
pub fn fit_tfidf(docs: &[CodeDocument]) -> TfIdfIndex {
    assert!(!docs.is_empty());
    let mut sorted: Vec<&CodeDocument> = docs.iter().collect();
    sorted.sort_by(|a, b| a.code.cmp(&b.code));

    let tokenized: Vec<(IcdCode, Vec<String>)> = sorted
        .iter()
        .map(|d| (d.code.clone(), tokenize(&d.text)))
        .collect();

    // term ids in first-appearance order over the sorted documents
    let mut term_to_id: HashMap<String, usize> = HashMap::new();
    let mut terms: Vec<String> = Vec::new();
    let mut df: Vec<usize> = Vec::new();
    for (_, toks) in &tokenized {
        let mut seen_here = vec![false; terms.len()];
        for t in toks {
            match term_to_id.get(t) {
                Some(&id) => {
                    if !seen_here[id] {
                        seen_here[id] = true;
                        df[id] += 1;
                    }
                }
                None => {
                    term_to_id.insert(t.clone(), terms.len());
                    terms.push(t.clone());
                    df.push(1);
                    seen_here.push(true);
                }
            }
        }
    }

    let n = tokenized.len() as f64;
    let idf: Vec<f64> = df
        .iter()
        .map(|&d| ((1.0 + n) / (1.0 + d as f64)).ln() + 1.0)
        .collect();

    let mut code_order = Vec::with_capacity(tokenized.len());
    let mut doc_vectors = Vec::with_capacity(tokenized.len());
    for (code, toks) in &tokenized {
        code_order.push(code.clone());
        doc_vectors.push(weigh_and_normalize(toks.iter().map(|t| term_to_id[t]), &idf));
    }

    TfIdfIndex {
        term_to_id,
        terms,
        idf,
        doc_vectors,
        code_order,
    }
}

fn weigh_and_normalize(term_ids: impl Iterator<Item = usize>, idf: &[f64]) -> Vec<(usize, f64)> {
    let mut tf: HashMap<usize, f64> = HashMap::new();
    for id in term_ids {
        *tf.entry(id).or_insert(0.0) += 1.0;
    }
    let mut vec: Vec<(usize, f64)> = tf
        .into_iter()
        .map(|(id, count)| (id, count * idf[id]))
        .collect();
    vec.sort_by_key(|(id, _)| *id);
    let norm: f64 = vec.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
    if norm > 0.0 {
        for (_, w) in &mut vec {
            *w /= norm;
        }
    }
    vec
}

impl TfIdfIndex {
    /// Prior-vector dimension |C|.
    pub fn dim(&self) -> usize {
        self.code_order.len()
    }

    /// Cosine similarity of the query text against every code document, in
    /// `code_order` position. Query terms absent from the index are dropped;
    /// an empty query yields the zero vector.
    pub fn cosine_vector(&self, raw_text: &str) -> Tensor {
        let toks = tokenize(raw_text);
        let query = weigh_and_normalize(
            toks.iter().filter_map(|t| self.term_to_id.get(t).copied()),
            &self.idf,
        );
        let mut out = Tensor::zeros(&[self.dim()]);
        if query.is_empty() {
            return out;
        }
        for (j, doc) in self.doc_vectors.iter().enumerate() {
            out.data_mut()[j] = sparse_dot(&query, doc);
        }
        out
    }
}

fn sparse_dot(a: &[(usize, f64)], b: &[(usize, f64)]) -> f64 {
    let mut s = 0.0;
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                s += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    s
}

/// Dense brute-force TF-IDF/cosine oracle used by the property tests and the
/// acceptance suite; shares nothing with the sparse path above beyond the
/// tokenizer.
pub mod oracle {
    use super::CodeDocument;
    use crate::corpus::tokenize;
    use std::collections::BTreeMap;

    /// Cosine of `query` against every document, documents ordered by code.
    pub fn dense_cosine(docs: &[CodeDocument], query: &str) -> Vec<f64> {
        let mut sorted: Vec<&CodeDocument> = docs.iter().collect();
        sorted.sort_by(|a, b| a.code.cmp(&b.code));

        // dense term space over all documents
        let mut vocab: BTreeMap<String, usize> = BTreeMap::new();
        let doc_tokens: Vec<Vec<String>> = sorted.iter().map(|d| tokenize(&d.text)).collect();
        for toks in &doc_tokens {
            for t in toks {
                let next = vocab.len();
                vocab.entry(t.clone()).or_insert(next);
            }
        }
        let v = vocab.len();
        let n = sorted.len() as f64;

        let mut df = vec![0.0f64; v];
        for toks in &doc_tokens {
            let mut seen = vec![false; v];
            for t in toks {
                let id = vocab[t];
                if !seen[id] {
                    seen[id] = true;
                    df[id] += 1.0;
                }
            }
        }
        let idf: Vec<f64> = df
            .iter()
            .map(|d| ((1.0 + n) / (1.0 + d)).ln() + 1.0)
            .collect();

        let densify = |toks: &[String]| -> Vec<f64> {
            let mut tf = vec![0.0f64; v];
            for t in toks {
                if let Some(&id) = vocab.get(t.as_str()) {
                    tf[id] += 1.0;
                }
            }
            let mut w: Vec<f64> = tf.iter().zip(&idf).map(|(t, i)| t * i).collect();
            let norm: f64 = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                for x in &mut w {
                    *x /= norm;
                }
            }
            w
        };

        let q = densify(&tokenize(query));
        doc_tokens
            .iter()
            .map(|toks| {
                let d = densify(toks);
                q.iter().zip(&d).map(|(a, b)| a * b).sum()
            })
            .collect()
    }
}
