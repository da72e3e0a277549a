//! Synthetic dictionary + corpus generation. The generated data mimics the
//! structural shape of real certificate corpora (short noisy fragments,
//! 1-3 codes per line, abbreviated and misspelled forms) so the full
//! pipeline can be trained and evaluated without restricted data.

use std::path::Path;

use crate::corpus::{write_corpus, IcdCode, Record};
use crate::error::Result;
use crate::prior::{write_dictionary, DictEntry};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_codes: usize,
    pub n_lines: usize,
    /// P(codes per line = 1, 2, 3); must sum to 1.
    pub codes_per_line: [f64; 3],
    pub abbreviation_prob: f64,
    pub misspelling_prob: f64,
    pub synonyms_per_code: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_codes: 20,
            n_lines: 200,
            codes_per_line: [0.6, 0.3, 0.1],
            abbreviation_prob: 0.2,
            misspelling_prob: 0.1,
            synonyms_per_code: 2,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// A 1/30 shadow of a full certificate corpus: 1,000 lines over 60
    /// codes with short fragments.
    pub fn table2_mini(seed: u64) -> SynthConfig {
        SynthConfig {
            n_codes: 60,
            n_lines: 1000,
            seed,
            ..SynthConfig::default()
        }
    }

    fn validate(&self) {
        assert!(self.n_codes >= 2 && self.n_lines >= 1);
        assert!((0.0..=1.0).contains(&self.abbreviation_prob));
        assert!((0.0..=1.0).contains(&self.misspelling_prob));
        let sum: f64 = self.codes_per_line.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }
}

/// Canonical phrase plus synonyms for each synthetic code.
#[derive(Debug, Clone)]
pub struct PhraseBank {
    /// Per code: all phrases (canonical first) in dictionary order.
    pub phrases: Vec<(IcdCode, Vec<String>)>,
}

const ONSETS: [&str; 14] = [
    "br", "c", "d", "fl", "gr", "h", "l", "m", "n", "pl", "r", "st", "tr", "v",
];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];
const CODAS: [&str; 8] = ["l", "m", "n", "r", "s", "st", "x", "th"];

/// Pseudo-medical word inventory: deterministic syllable combinations,
/// ~500 distinct stems available.
fn word_inventory(n: usize) -> Vec<String> {
    let mut words = Vec::with_capacity(n);
    'outer: for suffix in ["", "ia", "osis", "itis"] {
        for onset in ONSETS {
            for vowel in VOWELS {
                for coda in CODAS {
                    words.push(format!("{}{}{}{}", onset, vowel, coda, suffix));
                    if words.len() == n {
                        break 'outer;
                    }
                }
            }
        }
    }
    assert_eq!(words.len(), n, "inventory exhausted");
    words
}

fn synth_code(i: usize) -> IcdCode {
    let letter = (b'A' + (i / 1000) as u8) as char;
    IcdCode::parse(&format!("{}{:03}", letter, i % 1000)).unwrap()
}

/// One dictionary entry per phrase: a canonical multi-word diagnosis phrase
/// per code plus `synonyms_per_code` lexical variants. Every phrase contains
/// the code's unique anchor word, so codes stay separable the way distinct
/// diagnoses are.
pub fn generate_dictionary(config: &SynthConfig) -> (Vec<DictEntry>, PhraseBank) {
    config.validate();
    let mut rng = Rng::new(config.seed ^ 0xd1c7);
    let inventory = word_inventory(200);
    let (anchors, fillers) = inventory.split_at(config.n_codes.min(150));

    let mut entries = Vec::new();
    let mut phrases = Vec::new();
    for i in 0..config.n_codes {
        let code = synth_code(i);
        let anchor = &anchors[i % anchors.len()];
        let mut code_phrases = Vec::new();
        for _ in 0..=config.synonyms_per_code {
            let n_fillers = 1 + rng.below(3);
            let mut words: Vec<String> = (0..n_fillers)
                .map(|_| fillers[rng.below(fillers.len())].clone())
                .collect();
            words.insert(rng.below(words.len() + 1), anchor.clone());
            code_phrases.push(words.join(" "));
        }
        for phrase in &code_phrases {
            entries.push(DictEntry {
                diagnosis_text: phrase.clone(),
                icd1: code.clone(),
                icd_c: None,
                icd2: None,
            });
        }
        phrases.push((code, code_phrases));
    }
    (entries, PhraseBank { phrases })
}

/// Abbreviate a phrase to dotted initials: "peripheral vascular disease" →
/// "p.v.d.".
pub fn abbreviate(phrase: &str) -> String {
    let mut out = String::new();
    for word in phrase.split_whitespace() {
        out.push(word.chars().next().unwrap());
        out.push('.');
    }
    out
}

/// Apply one random single-character edit (substitute, delete, or insert).
fn misspell(word_text: &str, rng: &mut Rng) -> String {
    let chars: Vec<char> = word_text.chars().collect();
    if chars.is_empty() {
        return word_text.to_string();
    }
    let letters = "abcdefghijklmnopqrstuvwxyz".as_bytes();
    let pos = rng.below(chars.len());
    let mut out = chars.clone();
    match rng.below(3) {
        0 => out[pos] = letters[rng.below(26)] as char,
        1 => {
            if out.len() > 1 {
                out.remove(pos);
            }
        }
        _ => out.insert(pos, letters[rng.below(26)] as char),
    }
    out.into_iter().collect()
}

fn sample_codes_per_line(config: &SynthConfig, rng: &mut Rng) -> usize {
    let x = rng.next_f64();
    if x < config.codes_per_line[0] {
        1
    } else if x < config.codes_per_line[0] + config.codes_per_line[1] {
        2
    } else {
        3
    }
}

/// Generate certificate lines: each line draws 1-3 distinct codes, renders a
/// phrase per code (canonical or synonym), optionally abbreviates or
/// misspells each fragment, and joins fragments with ", ". Gold codes are
/// exact by construction.
pub fn generate_corpus(config: &SynthConfig, dictionary: &[DictEntry]) -> Vec<Record> {
    config.validate();
    // phrase bank grouped by icd1 in file order
    let mut bank = PhraseBank { phrases: Vec::new() };
    for e in dictionary {
        match bank.phrases.iter_mut().find(|(c, _)| c == &e.icd1) {
            Some((_, ps)) => ps.push(e.diagnosis_text.clone()),
            None => bank
                .phrases
                .push((e.icd1.clone(), vec![e.diagnosis_text.clone()])),
        }
    }
    assert!(bank.phrases.len() >= config.n_codes, "dictionary covers fewer codes than configured");
    let mut master = Rng::new(config.seed ^ 0xc0de);
    let mut records = Vec::with_capacity(config.n_lines);
    for line in 0..config.n_lines {
        let mut rng = master.fork();
        let n_codes = sample_codes_per_line(config, &mut rng);
        let mut picked: Vec<usize> = Vec::new();
        while picked.len() < n_codes {
            let c = rng.below(config.n_codes);
            if !picked.contains(&c) {
                picked.push(c);
            }
        }
        let mut fragments = Vec::new();
        let mut gold = Vec::new();
        for &c in &picked {
            let (code, phrases) = &bank.phrases[c];
            let mut fragment = phrases[rng.below(phrases.len())].clone();
            if rng.next_f64() < config.abbreviation_prob {
                fragment = abbreviate(&fragment);
            } else if rng.next_f64() < config.misspelling_prob {
                let words: Vec<&str> = fragment.split(' ').collect();
                let idx = rng.below(words.len());
                let mut new_words: Vec<String> = words.iter().map(|w| w.to_string()).collect();
                new_words[idx] = misspell(words[idx], &mut rng);
                fragment = new_words.join(" ");
            }
            fragments.push(fragment);
            gold.push(code.clone());
        }
        records.push(Record {
            doc_id: format!("synth{}", line),
            line_id: 1,
            raw_text: fragments.join(", "),
            gold_codes: gold,
        });
    }
    records
}

/// Split records into train/test files (corpus format) by a seed-determined
/// permutation.
pub fn write_split(
    records: &[Record],
    train_fraction: f64,
    seed: u64,
    train_path: &Path,
    test_path: &Path,
) -> Result<(usize, usize)> {
    assert!((0.0..=1.0).contains(&train_fraction));
    let mut order: Vec<usize> = (0..records.len()).collect();
    Rng::new(seed).shuffle(&mut order);
    let n_train = (records.len() as f64 * train_fraction).round() as usize;
    let mut train: Vec<Record> = order[..n_train].iter().map(|&i| records[i].clone()).collect();
    let mut test: Vec<Record> = order[n_train..].iter().map(|&i| records[i].clone()).collect();
    // stable file order
    train.sort_by(|a, b| (&a.doc_id, a.line_id).cmp(&(&b.doc_id, b.line_id)));
    test.sort_by(|a, b| (&a.doc_id, a.line_id).cmp(&(&b.doc_id, b.line_id)));
    write_corpus(&train, train_path)?;
    write_corpus(&test, test_path)?;
    Ok((train.len(), test.len()))
}

/// Write the synthetic dictionary file.
pub fn write_dict(entries: &[DictEntry], path: &Path) -> Result<()> {
    write_dictionary(entries, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::load_corpus;
    use crate::prior::{build_code_documents, fit_tfidf};
    use std::collections::HashSet;

    #[test]
    fn dictionary_entry_count_and_distinct_codes() {
        let cfg = SynthConfig {
            n_codes: 5,
            synonyms_per_code: 2,
            ..SynthConfig::default()
        };
        let (entries, bank) = generate_dictionary(&cfg);
        assert_eq!(entries.len(), 15); // (1 canonical + 2 synonyms) × 5
        let codes: HashSet<&str> = bank.phrases.iter().map(|(c, _)| c.as_str()).collect();
        assert_eq!(codes.len(), 5);
    }

    #[test]
    fn generation_is_seed_deterministic() {
        let cfg = SynthConfig {
            seed: 42,
            ..SynthConfig::default()
        };
        let (e1, _) = generate_dictionary(&cfg);
        let (e2, _) = generate_dictionary(&cfg);
        assert_eq!(e1, e2);
        let c1 = generate_corpus(&cfg, &e1);
        let c2 = generate_corpus(&cfg, &e2);
        assert_eq!(c1, c2);
    }

    #[test]
    fn abbreviation_rule() {
        assert_eq!(abbreviate("peripheral vascular disease"), "p.v.d.");
        assert_eq!(abbreviate("flutter"), "f.");
    }

    #[test]
    fn zero_noise_fragments_are_verbatim_phrases() {
        let cfg = SynthConfig {
            n_codes: 10,
            n_lines: 50,
            abbreviation_prob: 0.0,
            misspelling_prob: 0.0,
            seed: 7,
            ..SynthConfig::default()
        };
        let (entries, _) = generate_dictionary(&cfg);
        let phrases: HashSet<&str> = entries.iter().map(|e| e.diagnosis_text.as_str()).collect();
        let records = generate_corpus(&cfg, &entries);
        for r in &records {
            for frag in r.raw_text.split(", ") {
                assert!(phrases.contains(frag), "unknown fragment {:?}", frag);
            }
            assert!(!r.gold_codes.is_empty() && r.gold_codes.len() <= 3);
        }
    }

    #[test]
    fn corpus_statistics_match_config() {
        let cfg = SynthConfig {
            n_codes: 20,
            n_lines: 500,
            seed: 3,
            ..SynthConfig::default()
        };
        let (entries, _) = generate_dictionary(&cfg);
        let records = generate_corpus(&cfg, &entries);
        assert_eq!(records.len(), 500);
        let total_codes: usize = records.iter().map(|r| r.gold_codes.len()).sum();
        // expected codes/line = 0.6 + 0.6 + 0.3 = 1.5, generous tolerance
        let mean = total_codes as f64 / 500.0;
        assert!((1.3..1.7).contains(&mean), "mean codes/line {}", mean);
        let unique: HashSet<&str> = records
            .iter()
            .flat_map(|r| r.gold_codes.iter().map(|c| c.as_str()))
            .collect();
        assert!(unique.len() >= 18, "only {} unique codes drawn", unique.len());
    }

    /// With zero noise, argmax of the cosine vector per fragment recovers
    /// single-code lines perfectly: the floor the network must match.
    #[test]
    fn prior_argmax_baseline_is_perfect_on_clean_single_code_lines() {
        let cfg = SynthConfig {
            n_codes: 15,
            n_lines: 120,
            abbreviation_prob: 0.0,
            misspelling_prob: 0.0,
            seed: 21,
            ..SynthConfig::default()
        };
        let (entries, _) = generate_dictionary(&cfg);
        let records = generate_corpus(&cfg, &entries);
        let index = fit_tfidf(&build_code_documents(&entries));
        let mut checked = 0;
        for r in records.iter().filter(|r| r.gold_codes.len() == 1) {
            let v = index.cosine_vector(&r.raw_text);
            let best = (0..v.len())
                .max_by(|&a, &b| v.data()[a].partial_cmp(&v.data()[b]).unwrap())
                .unwrap();
            assert_eq!(index.code_order[best], r.gold_codes[0], "line {:?}", r.raw_text);
            checked += 1;
        }
        assert!(checked > 20, "too few single-code lines: {}", checked);
    }

    #[test]
    fn split_fractions_and_disjoint_keys() {
        let cfg = SynthConfig {
            n_lines: 300,
            seed: 8,
            ..SynthConfig::default()
        };
        let (entries, _) = generate_dictionary(&cfg);
        let records = generate_corpus(&cfg, &entries);
        let dir = tempfile::tempdir().unwrap();
        let train_path = dir.path().join("train.txt");
        let test_path = dir.path().join("test.txt");
        let (n_train, n_test) =
            write_split(&records, 2.0 / 3.0, 4, &train_path, &test_path).unwrap();
        assert_eq!((n_train, n_test), (200, 100));

        let train = load_corpus(&train_path).unwrap();
        let test = load_corpus(&test_path).unwrap();
        let train_keys: HashSet<(String, u32)> = train
            .iter()
            .map(|r| (r.doc_id.clone(), r.line_id))
            .collect();
        assert!(test
            .iter()
            .all(|r| !train_keys.contains(&(r.doc_id.clone(), r.line_id))));

        // same seed reproduces the same files
        let t2 = dir.path().join("train2.txt");
        let s2 = dir.path().join("test2.txt");
        write_split(&records, 2.0 / 3.0, 4, &t2, &s2).unwrap();
        assert_eq!(fs_bytes(&train_path), fs_bytes(&t2));
        assert_eq!(fs_bytes(&test_path), fs_bytes(&s2));
    }

    fn fs_bytes(p: &Path) -> Vec<u8> {
        std::fs::read(p).unwrap()
    }
}
