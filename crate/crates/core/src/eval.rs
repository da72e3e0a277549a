//! Decoding logits into code predictions and scoring them with
//! micro-averaged precision, recall, and balanced F-measure.

use std::collections::{BTreeMap, BTreeSet};

use crate::corpus::{CodeVocab, IcdCode, Record, EOS_ID, PAD_ID};
use crate::error::{Error, Result};
use crate::model::{build_context, decode, encode, Seq2SeqModel};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Predicted codes for one line, cleaned: no specials, no duplicates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prediction {
    pub doc_id: String,
    pub line_id: u32,
    pub codes: Vec<IcdCode>,
}

/// Micro-aggregated confusion counts. Ratio conventions: 0/0 → 0 and
/// F = 0 when P + R = 0.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MetricsReport {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl MetricsReport {
    fn ratio(num: u64, den: u64) -> f64 {
        if den == 0 {
            0.0
        } else {
            num as f64 / den as f64
        }
    }

    pub fn precision(&self) -> f64 {
        Self::ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        Self::ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f_measure(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    pub fn merge(&self, other: &MetricsReport) -> MetricsReport {
        MetricsReport {
            tp: self.tp + other.tp,
            fp: self.fp + other.fp,
            fn_: self.fn_ + other.fn_,
        }
    }
}

/// Argmax per step (ties broken by lowest id), stop at the first EOS, drop
/// PAD anywhere, deduplicate preserving first occurrence.
pub fn greedy_decode(logits: &Tensor, code_vocab: &CodeVocab) -> Vec<IcdCode> {
    let mut out = Vec::new();
    for t in 0..logits.rows() {
        let row = logits.row(t);
        let mut best = 0;
        for (j, v) in row.iter().enumerate() {
            if *v > row[best] {
                best = j;
            }
        }
        if best == EOS_ID {
            break;
        }
        if best == PAD_ID {
            continue;
        }
        if let Some(code) = code_vocab.code(best) {
            if !out.contains(code) {
                out.push(code.clone());
            }
        }
    }
    out
}

/// Micro-averaged scoring: per line gold and prediction are treated as sets,
/// confusion counts pooled over all lines. Key sets must match exactly.
pub fn score(predictions: &[Prediction], golds: &[Record]) -> Result<MetricsReport> {
    let pred_map: BTreeMap<(&str, u32), &Prediction> = predictions
        .iter()
        .map(|p| ((p.doc_id.as_str(), p.line_id), p))
        .collect();
    let gold_map: BTreeMap<(&str, u32), &Record> = golds
        .iter()
        .map(|r| ((r.doc_id.as_str(), r.line_id), r))
        .collect();
    let missing: Vec<String> = gold_map
        .keys()
        .filter(|k| !pred_map.contains_key(*k))
        .chain(pred_map.keys().filter(|k| !gold_map.contains_key(*k)))
        .map(|(d, l)| format!("({}, {})", d, l))
        .collect();
    if !missing.is_empty() {
        return Err(Error::KeyMismatch(missing.join(", ")));
    }

    let mut report = MetricsReport::default();
    for (key, gold) in &gold_map {
        let pred: BTreeSet<&IcdCode> = pred_map[key].codes.iter().collect();
        let gold: BTreeSet<&IcdCode> = gold.gold_codes.iter().collect();
        report.tp += pred.intersection(&gold).count() as u64;
        report.fp += pred.difference(&gold).count() as u64;
        report.fn_ += gold.difference(&pred).count() as u64;
    }
    Ok(report)
}

/// Deterministic end-to-end inference over a corpus (training = false).
pub fn predict_corpus(model: &Seq2SeqModel, records: &[Record]) -> Result<Vec<Prediction>> {
    let mut rng = Rng::new(0); // unused: inference applies no dropout
    records
        .iter()
        .map(|r| {
            let encoded = crate::corpus::encode_record(
                r,
                &model.vocab,
                &model.code_vocab,
                model.config.max_in,
                model.config.max_out,
            );
            let enc_state = encode(model, &encoded.token_ids)?;
            let context = build_context(model, &enc_state, &r.raw_text, false, &mut rng);
            let logits = decode(model, &context)?;
            Ok(Prediction {
                doc_id: r.doc_id.clone(),
                line_id: r.line_id,
                codes: greedy_decode(&logits, &model.code_vocab),
            })
        })
        .collect()
}

/// Predictions serialize through the corpus row format.
pub fn predictions_to_records(predictions: &[Prediction]) -> Vec<Record> {
    predictions
        .iter()
        .map(|p| Record {
            doc_id: p.doc_id.clone(),
            line_id: p.line_id,
            raw_text: String::new(),
            gold_codes: p.codes.clone(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn code(s: &str) -> IcdCode {
        IcdCode::parse(s).unwrap()
    }

    fn pred(doc: &str, codes: &[&str]) -> Prediction {
        Prediction {
            doc_id: doc.to_string(),
            line_id: 1,
            codes: codes.iter().map(|c| code(c)).collect(),
        }
    }

    fn gold(doc: &str, codes: &[&str]) -> Record {
        Record {
            doc_id: doc.to_string(),
            line_id: 1,
            raw_text: String::new(),
            gold_codes: codes.iter().map(|c| code(c)).collect(),
        }
    }

    fn vocab_with(codes: &[&str]) -> CodeVocab {
        CodeVocab::from_codes(codes.iter().map(|c| code(c)).collect())
    }

    #[test]
    fn greedy_decode_stops_at_eos() {
        let cv = vocab_with(&["I48", "E119"]);
        // steps argmax: I48 (id 2), EOS (id 1), E119 — only I48 survives
        let logits = Tensor::from_vec(
            &[3, 4],
            vec![
                0.0, 0.0, 5.0, 0.0, //
                0.0, 5.0, 0.0, 0.0, //
                0.0, 0.0, 0.0, 5.0,
            ],
        )
        .unwrap();
        assert_eq!(greedy_decode(&logits, &cv), vec![code("I48")]);
    }

    #[test]
    fn greedy_decode_dedups_and_skips_pad() {
        let cv = vocab_with(&["I48"]);
        let logits = Tensor::from_vec(
            &[4, 3],
            vec![
                0.0, 0.0, 5.0, // I48
                5.0, 0.0, 0.0, // PAD → skipped
                0.0, 0.0, 5.0, // I48 again → dedup
                0.0, 5.0, 0.0, // EOS
            ],
        )
        .unwrap();
        assert_eq!(greedy_decode(&logits, &cv), vec![code("I48")]);
    }

    #[test]
    fn greedy_decode_immediate_eos_is_empty() {
        let cv = vocab_with(&["I48"]);
        let logits = Tensor::from_vec(&[2, 3], vec![0.0, 5.0, 0.0, 0.0, 0.0, 5.0]).unwrap();
        assert!(greedy_decode(&logits, &cv).is_empty());
    }

    #[test]
    fn greedy_decode_ties_break_lowest_id() {
        let cv = vocab_with(&["I48", "E119"]);
        // all-equal row: argmax = PAD (id 0) → skipped; then EOS
        let logits = Tensor::from_vec(&[2, 4], vec![1.0; 8]).unwrap();
        assert!(greedy_decode(&logits, &cv).is_empty());
    }

    #[test]
    fn score_exact_match_table1() {
        let preds = vec![pred("d1", &["N183", "I500", "M819"])];
        let golds = vec![gold("d1", &["N183", "I500", "M819"])];
        let m = score(&preds, &golds).unwrap();
        assert_eq!((m.tp, m.fp, m.fn_), (3, 0, 0));
        assert_eq!(m.precision(), 1.0);
        assert_eq!(m.recall(), 1.0);
        assert_eq!(m.f_measure(), 1.0);
    }

    #[test]
    fn score_hand_counted_half() {
        let preds = vec![pred("d1", &["I48", "E119"])];
        let golds = vec![gold("d1", &["I48", "I739"])];
        let m = score(&preds, &golds).unwrap();
        assert_eq!((m.tp, m.fp, m.fn_), (1, 1, 1));
        assert_eq!(m.precision(), 0.5);
        assert_eq!(m.recall(), 0.5);
        assert_eq!(m.f_measure(), 0.5);
    }

    #[test]
    fn score_empty_prediction_conventions() {
        let preds = vec![pred("d1", &[])];
        let golds = vec![gold("d1", &["I48"])];
        let m = score(&preds, &golds).unwrap();
        assert_eq!(m.precision(), 0.0);
        assert_eq!(m.recall(), 0.0);
        assert_eq!(m.f_measure(), 0.0);
    }

    #[test]
    fn score_gold_duplicates_collapse() {
        let preds = vec![pred("d1", &["I48"])];
        let golds = vec![gold("d1", &["I48", "I48"])];
        let m = score(&preds, &golds).unwrap();
        assert_eq!((m.tp, m.fp, m.fn_), (1, 0, 0));
    }

    #[test]
    fn score_key_mismatch_lists_keys() {
        let preds = vec![pred("d1", &["I48"])];
        let golds = vec![gold("d2", &["I48"])];
        let err = score(&preds, &golds).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("d1") && msg.contains("d2"), "{}", msg);
    }

    #[test]
    fn score_order_independent_and_additive() {
        let preds = vec![pred("d1", &["I48"]), pred("d2", &["E119", "I500"])];
        let golds = vec![gold("d1", &["I48"]), gold("d2", &["E119"])];
        let a = score(&preds, &golds).unwrap();
        let rev_p: Vec<_> = preds.iter().rev().cloned().collect();
        let rev_g: Vec<_> = golds.iter().rev().cloned().collect();
        let b = score(&rev_p, &rev_g).unwrap();
        assert_eq!(a, b);

        let first = score(&preds[..1], &golds[..1]).unwrap();
        let second = score(&preds[1..], &golds[1..]).unwrap();
        assert_eq!(first.merge(&second), a);
    }

    #[test]
    fn predict_corpus_is_deterministic() {
        let (model, records) = crate::check::toy_model(9, true);
        let a = predict_corpus(&model, &records).unwrap();
        let b = predict_corpus(&model, &records).unwrap();
        assert_eq!(a, b);
        assert!(predict_corpus(&model, &[]).unwrap().is_empty());
    }

    proptest! {
        #[test]
        fn harmonic_mean_bounds(tp in 0u64..20, fp in 0u64..20, fn_ in 0u64..20) {
            let m = MetricsReport { tp, fp, fn_ };
            let (p, r, f) = (m.precision(), m.recall(), m.f_measure());
            prop_assert!((0.0..=1.0).contains(&p));
            prop_assert!((0.0..=1.0).contains(&r));
            if p + r > 0.0 {
                prop_assert!(f <= p.max(r) + 1e-12);
                prop_assert!(f >= p.min(r) - 1e-12);
            } else {
                prop_assert_eq!(f, 0.0);
            }
        }
    }
}
