//! Certificate lines, tokenization, vocabularies, and numeric encoding.
//!
//! Corpus file format: UTF-8 text, one row per (line, code), fields separated
//! by `;`: `doc_id;line_id;raw_text;icd_code`. The code field may be empty
//! for uncoded lines. `#`-prefixed rows are comments; an optional header row
//! is detected by the literal first field `doc_id`.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// One ICD-10 code: an uppercase ASCII letter followed by 2-4 digits
/// (I48, N183, E877). Dotted prose forms like `J20.2` are normalized by
/// stripping the dot at ingestion.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct IcdCode(String);

impl IcdCode {
    pub fn parse(raw: &str) -> Result<IcdCode> {
        let cleaned: String = raw
            .trim()
            .chars()
            .filter(|c| *c != '.')
            .map(|c| c.to_ascii_uppercase())
            .collect();
        let bytes = cleaned.as_bytes();
        let valid = bytes.len() >= 3
            && bytes.len() <= 5
            && bytes[0].is_ascii_uppercase()
            && bytes[1..].iter().all(|b| b.is_ascii_digit());
        if !valid {
            return Err(Error::Invalid(format!("invalid ICD-10 code {:?}", raw)));
        }
        Ok(IcdCode(cleaned))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for IcdCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One certificate line with its ordered gold code sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub doc_id: String,
    pub line_id: u32,
    pub raw_text: String,
    pub gold_codes: Vec<IcdCode>,
}

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const EOS_ID: usize = 1;

/// Token vocabulary; PAD=0, UNK=1, then tokens ordered by descending corpus
/// frequency with lexicographic tie-break.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
}

impl Vocab {
    pub fn from_tokens(tokens: Vec<String>) -> Vocab {
        let mut id_to_token = vec!["<pad>".to_string(), "<unk>".to_string()];
        id_to_token.extend(tokens);
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocab {
            token_to_id,
            id_to_token,
        }
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> usize {
        *self.token_to_id.get(token).unwrap_or(&UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.token_to_id.contains_key(token)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.id_to_token[id]
    }

    /// Non-special tokens in id order.
    pub fn tokens(&self) -> &[String] {
        &self.id_to_token[2..]
    }
}

/// Output code vocabulary; PAD=0, EOS=1, then training-set codes ordered by
/// descending frequency with lexicographic tie-break. Codes unseen in
/// training are unpredictable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeVocab {
    code_to_id: HashMap<IcdCode, usize>,
    id_to_code: Vec<Option<IcdCode>>,
}

impl CodeVocab {
    pub fn from_codes(codes: Vec<IcdCode>) -> CodeVocab {
        let mut id_to_code = vec![None, None]; // PAD, EOS
        id_to_code.extend(codes.into_iter().map(Some));
        let code_to_id = id_to_code
            .iter()
            .enumerate()
            .filter_map(|(i, c)| c.clone().map(|c| (c, i)))
            .collect();
        CodeVocab {
            code_to_id,
            id_to_code,
        }
    }

    pub fn len(&self) -> usize {
        self.id_to_code.len()
    }

    pub fn id(&self, code: &IcdCode) -> Option<usize> {
        self.code_to_id.get(code).copied()
    }

    pub fn code(&self, id: usize) -> Option<&IcdCode> {
        self.id_to_code.get(id).and_then(|c| c.as_ref())
    }

    /// Non-special codes in id order.
    pub fn codes(&self) -> impl Iterator<Item = &IcdCode> {
        self.id_to_code.iter().filter_map(|c| c.as_ref())
    }
}

/// One record encoded for the network: token ids PAD-padded to `max_in`,
/// target ids = gold code ids, EOS, then PAD out to `max_out`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedRecord {
    pub token_ids: Vec<usize>,
    pub target_ids: Vec<usize>,
    pub truncated: bool,
}

/// Lowercase and split on any non-alphanumeric character; empty tokens
/// dropped, pure-digit tokens kept.
pub fn tokenize(raw_text: &str) -> Vec<String> {
    raw_text
        .to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_string())
        .collect()
}

fn split_row(row: &str) -> Vec<&str> {
    row.split(';').map(|f| f.trim()).collect()
}

/// Parse a corpus file into Records, aggregating gold codes per
/// (doc_id, line_id) in row order.
pub fn load_corpus(path: &Path) -> Result<Vec<Record>> {
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&content, path)
}

pub fn parse_corpus(content: &str, path: &Path) -> Result<Vec<Record>> {
    let mut records: Vec<Record> = Vec::new();
    let mut index: HashMap<(String, u32), usize> = HashMap::new();
    let mut seen_rows: HashSet<(String, u32, String)> = HashSet::new();
    for (lineno, row) in content.lines().enumerate() {
        let lineno = lineno + 1;
        let row = row.trim_end_matches('\r');
        if row.is_empty() || row.starts_with('#') {
            continue;
        }
        let fields = split_row(row);
        if fields.first() == Some(&"doc_id") {
            continue; // header row
        }
        if fields.len() != 4 {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected 4 `;`-separated fields, got {}", fields.len()),
            ));
        }
        let doc_id = fields[0].to_string();
        if doc_id.is_empty() {
            return Err(Error::parse(path, lineno, "empty doc_id"));
        }
        let line_id: u32 = fields[1]
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("bad line_id {:?}", fields[1])))?;
        let raw_text = fields[2].to_string();
        let code = if fields[3].is_empty() {
            None
        } else {
            Some(
                IcdCode::parse(fields[3])
                    .map_err(|e| Error::parse(path, lineno, e.to_string()))?,
            )
        };
        if let Some(c) = &code {
            if !seen_rows.insert((doc_id.clone(), line_id, c.as_str().to_string())) {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("duplicate row for ({}, {}, {})", doc_id, line_id, c),
                ));
            }
        }
        match index.get(&(doc_id.clone(), line_id)) {
            Some(&i) => {
                if records[i].raw_text != raw_text {
                    return Err(Error::parse(
                        path,
                        lineno,
                        format!("conflicting raw_text for ({}, {})", doc_id, line_id),
                    ));
                }
                if let Some(c) = code {
                    records[i].gold_codes.push(c);
                }
            }
            None => {
                index.insert((doc_id.clone(), line_id), records.len());
                records.push(Record {
                    doc_id,
                    line_id,
                    raw_text,
                    gold_codes: code.into_iter().collect(),
                });
            }
        }
    }
    Ok(records)
}

/// Serialize records back to the corpus row format. Lines with no codes get
/// a single row with an empty code field so the (doc, line) key survives a
/// round trip.
pub fn write_corpus(records: &[Record], path: &Path) -> Result<()> {
    let mut out = String::from("doc_id;line_id;raw_text;icd_code\n");
    for r in records {
        if r.raw_text.contains(';') {
            return Err(Error::Invalid(format!(
                "raw_text of ({}, {}) contains `;`",
                r.doc_id, r.line_id
            )));
        }
        if r.gold_codes.is_empty() {
            out.push_str(&format!("{};{};{};\n", r.doc_id, r.line_id, r.raw_text));
        } else {
            for c in &r.gold_codes {
                out.push_str(&format!("{};{};{};{}\n", r.doc_id, r.line_id, r.raw_text, c));
            }
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn ranked_by_frequency<T: Ord + Clone + std::hash::Hash>(
    items: impl Iterator<Item = T>,
    min_count: usize,
) -> Vec<T> {
    let mut counts: HashMap<T, usize> = HashMap::new();
    for it in items {
        *counts.entry(it).or_insert(0) += 1;
    }
    let mut ranked: Vec<(T, usize)> = counts.into_iter().filter(|(_, n)| *n >= min_count).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.into_iter().map(|(t, _)| t).collect()
}

pub fn build_vocab(records: &[Record], min_count: usize) -> Vocab {
    assert!(min_count >= 1);
    let tokens = records.iter().flat_map(|r| tokenize(&r.raw_text));
    Vocab::from_tokens(ranked_by_frequency(tokens, min_count))
}

pub fn build_code_vocab(records: &[Record]) -> CodeVocab {
    let codes = records.iter().flat_map(|r| r.gold_codes.iter().cloned());
    CodeVocab::from_codes(ranked_by_frequency(codes, 1))
}

/// Encode one record; tokens beyond `max_in` and codes beyond `max_out`-1
/// are truncated and flagged. Gold codes absent from the code vocabulary are
/// skipped (they are unpredictable by construction).
pub fn encode_record(
    record: &Record,
    vocab: &Vocab,
    code_vocab: &CodeVocab,
    max_in: usize,
    max_out: usize,
) -> EncodedRecord {
    assert!(max_in >= 1 && max_out >= 2);
    let tokens = tokenize(&record.raw_text);
    let mut truncated = tokens.len() > max_in;
    let mut token_ids: Vec<usize> = tokens.iter().take(max_in).map(|t| vocab.id(t)).collect();
    token_ids.resize(max_in, PAD_ID);

    let known: Vec<usize> = record
        .gold_codes
        .iter()
        .filter_map(|c| code_vocab.id(c))
        .collect();
    if known.len() > max_out - 1 {
        truncated = true;
    }
    let mut target_ids: Vec<usize> = known.into_iter().take(max_out - 1).collect();
    target_ids.push(EOS_ID);
    target_ids.resize(max_out, PAD_ID);

    EncodedRecord {
        token_ids,
        target_ids,
        truncated,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn p() -> PathBuf {
        PathBuf::from("<test>")
    }

    pub(crate) const TABLE1_FIXTURE: &str = "\
d1;1;CKD STAGE III, CHF, SEVERE OSTEOPOROSIS;N183
d1;1;CKD STAGE III, CHF, SEVERE OSTEOPOROSIS;I500
d1;1;CKD STAGE III, CHF, SEVERE OSTEOPOROSIS;M819
d2;1;A.FIB., D.M. TYPE II;I48
d2;1;A.FIB., D.M. TYPE II;E119
d3;1;CAD / s/p CABG / Volume overload;I251
d3;1;CAD / s/p CABG / Volume overload;E877
d4;1;P.V.D.;I739
";

    #[test]
    fn tokenize_table1_lines() {
        assert_eq!(
            tokenize("CKD STAGE III, CHF, SEVERE OSTEOPOROSIS"),
            ["ckd", "stage", "iii", "chf", "severe", "osteoporosis"]
        );
        assert_eq!(tokenize("P.V.D."), ["p", "v", "d"]);
        assert_eq!(tokenize(""), Vec::<String>::new());
    }

    #[test]
    fn tokenize_keeps_digit_tokens_and_is_idempotent() {
        let toks = tokenize("stage 3 CKD s/p CABG");
        assert_eq!(toks, ["stage", "3", "ckd", "s", "p", "cabg"]);
        assert_eq!(tokenize(&toks.join(" ")), toks);
    }

    #[test]
    fn icd_code_normalization() {
        assert_eq!(IcdCode::parse("I73.9").unwrap().as_str(), "I739");
        assert_eq!(IcdCode::parse("J20.2").unwrap().as_str(), "J202");
        assert!(IcdCode::parse("I4").is_err());
        assert!(IcdCode::parse("1234").is_err());
        assert!(IcdCode::parse("I48X").is_err());
    }

    #[test]
    fn load_table1_fixture() {
        let records = parse_corpus(TABLE1_FIXTURE, &p()).unwrap();
        assert_eq!(records.len(), 4);
        assert_eq!(
            records[0].gold_codes,
            ["N183", "I500", "M819"]
                .iter()
                .map(|c| IcdCode::parse(c).unwrap())
                .collect::<Vec<_>>()
        );
        assert_eq!(records[3].gold_codes, vec![IcdCode::parse("I739").unwrap()]);
    }

    #[test]
    fn load_strips_dots_and_rejects_duplicates() {
        let recs = parse_corpus("d1;1;pvd;I73.9\n", &p()).unwrap();
        assert_eq!(recs[0].gold_codes[0].as_str(), "I739");
        let dup = "d1;1;pvd;I739\nd1;1;pvd;I739\n";
        assert!(parse_corpus(dup, &p()).is_err());
    }

    #[test]
    fn load_rejects_malformed_rows_with_line_numbers() {
        let err = parse_corpus("d1;1;ok;I48\nd2;1;semi;colons;here;I50\n", &p()).unwrap_err();
        assert!(err.to_string().contains(":2:"), "{}", err);
        assert!(parse_corpus("d1;x;text;I48\n", &p()).is_err());
    }

    #[test]
    fn header_and_comments_skipped() {
        let content = "doc_id;line_id;raw_text;icd_code\n# comment\nd1;1;chf;I500\n";
        let recs = parse_corpus(content, &p()).unwrap();
        assert_eq!(recs.len(), 1);
    }

    #[test]
    fn uncoded_line_kept() {
        let recs = parse_corpus("d1;1;no code here;\n", &p()).unwrap();
        assert_eq!(recs.len(), 1);
        assert!(recs[0].gold_codes.is_empty());
    }

    #[test]
    fn corpus_round_trip() {
        let records = parse_corpus(TABLE1_FIXTURE, &p()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("roundtrip.txt");
        write_corpus(&records, &path).unwrap();
        let back = load_corpus(&path).unwrap();
        assert_eq!(records, back);
    }

    #[test]
    fn vocab_min_count() {
        let recs = parse_corpus("d1;1;chf severe;\nd2;1;chf mild;\n", &p()).unwrap();
        let v = build_vocab(&recs, 2);
        assert!(v.contains("chf"));
        assert!(!v.contains("severe"));
        assert_eq!(v.id("severe"), UNK_ID);
    }

    #[test]
    fn vocab_deterministic_order() {
        let recs = parse_corpus("d1;1;b a a;\nd2;1;c b a;\n", &p()).unwrap();
        let v = build_vocab(&recs, 1);
        // a:3, b:2, c:1 → ids 2,3,4 after specials
        assert_eq!(v.id("a"), 2);
        assert_eq!(v.id("b"), 3);
        assert_eq!(v.id("c"), 4);
        let v2 = build_vocab(&recs, 1);
        assert_eq!(v, v2);
    }

    #[test]
    fn code_vocab_counts() {
        let recs = parse_corpus("d1;1;afib;I48\nd2;1;dm;E119\n", &p()).unwrap();
        let cv = build_code_vocab(&recs);
        assert_eq!(cv.len(), 4); // PAD, EOS, I48, E119

        let empty = parse_corpus("d1;1;none;\n", &p()).unwrap();
        assert_eq!(build_code_vocab(&empty).len(), 2);

        let table1 = parse_corpus(TABLE1_FIXTURE, &p()).unwrap();
        assert_eq!(build_code_vocab(&table1).len(), 10); // 8 distinct + specials
    }

    #[test]
    fn encode_record_padding_eos_truncation() {
        let recs = parse_corpus(TABLE1_FIXTURE, &p()).unwrap();
        let v = build_vocab(&recs, 1);
        let cv = build_code_vocab(&recs);

        // "P.V.D." → 3 tokens, max_in 6 → 3 ids + 3 PADs
        let e = encode_record(&recs[3], &v, &cv, 6, 4);
        assert_eq!(e.token_ids.len(), 6);
        assert_eq!(&e.token_ids[3..], &[PAD_ID; 3]);
        assert!(e.token_ids[..3].iter().all(|&id| id != PAD_ID));
        // gold [I739] → [id, EOS, PAD, PAD]
        let i739 = cv.id(&IcdCode::parse("I739").unwrap()).unwrap();
        assert_eq!(e.target_ids, vec![i739, EOS_ID, PAD_ID, PAD_ID]);
        assert!(!e.truncated);

        // 3 gold codes but max_out 3 → 2 codes + EOS, truncated
        let e = encode_record(&recs[0], &v, &cv, 8, 3);
        assert!(e.truncated);
        assert_eq!(e.target_ids.len(), 3);
        assert_eq!(e.target_ids[2], EOS_ID);
    }

    #[test]
    fn encode_decode_round_trip() {
        let recs = parse_corpus(TABLE1_FIXTURE, &p()).unwrap();
        let v = build_vocab(&recs, 1);
        let cv = build_code_vocab(&recs);
        for r in &recs {
            let e = encode_record(r, &v, &cv, 16, 8);
            let decoded: Vec<&IcdCode> = e
                .target_ids
                .iter()
                .take_while(|&&id| id != EOS_ID)
                .map(|&id| cv.code(id).unwrap())
                .collect();
            let gold: Vec<&IcdCode> = r.gold_codes.iter().collect();
            assert_eq!(decoded, gold);
        }
    }
}
