//! Synthetic labeled corpus with gold dependency parses.
//!
//! Sentences come from fixed templates: spatial ones ("the X sat on the Y")
//! are positive, comparative or incidental ones ("the X is older than the
//! Y") are negative. Object pairs are split into relevant and irrelevant
//! halves; 80% of a relevant pair's sentences use positive templates and
//! 20% of an irrelevant pair's do.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{PairKey, ParsedSentence, Token};
use crate::error::{Error, Result};
use crate::metrics::write_gold_pairs;

pub const PARSES_FILE: &str = "parses.conllu";
pub const LABELED_FILE: &str = "labeled.tsv";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const GOLD_FILE: &str = "gold_pairs.tsv";
pub const EMBEDDINGS_FILE: &str = "embeddings.txt";

const OBJECTS: [&str; 40] = [
    "basket", "bed", "blanket", "book", "bottle", "bowl", "broom", "brush", "bucket", "candle",
    "carpet", "chair", "clock", "cup", "curtain", "desk", "door", "fork", "glass", "hammer", "jar",
    "kettle", "knife", "ladder", "lamp", "mirror", "mug", "nail", "pan", "pillow", "plate", "rope",
    "shelf", "soap", "sofa", "spoon", "stool", "table", "towel", "window",
];

/// One template token: form, lemma, UPOS, head, relation. The forms `X` and
/// `Y` are replaced by the two objects.
type Tok = (
    &'static str,
    &'static str,
    &'static str,
    usize,
    &'static str,
);

const POSITIVE: [&[Tok]; 5] = [
    &[
        ("The", "the", "DET", 2, "det"),
        ("X", "", "NOUN", 3, "nsubj"),
        ("sat", "sit", "VERB", 0, "root"),
        ("on", "on", "ADP", 6, "case"),
        ("the", "the", "DET", 6, "det"),
        ("Y", "", "NOUN", 3, "obl"),
        (".", ".", "PUNCT", 3, "punct"),
    ],
    &[
        ("The", "the", "DET", 2, "det"),
        ("X", "", "NOUN", 3, "nsubj"),
        ("lay", "lie", "VERB", 0, "root"),
        ("beside", "beside", "ADP", 6, "case"),
        ("the", "the", "DET", 6, "det"),
        ("Y", "", "NOUN", 3, "obl"),
        (".", ".", "PUNCT", 3, "punct"),
    ],
    &[
        ("The", "the", "DET", 2, "det"),
        ("X", "", "NOUN", 3, "nsubj"),
        ("stood", "stand", "VERB", 0, "root"),
        ("near", "near", "ADP", 6, "case"),
        ("the", "the", "DET", 6, "det"),
        ("Y", "", "NOUN", 3, "obl"),
        (".", ".", "PUNCT", 3, "punct"),
    ],
    &[
        ("We", "we", "PRON", 2, "nsubj"),
        ("kept", "keep", "VERB", 0, "root"),
        ("the", "the", "DET", 4, "det"),
        ("X", "", "NOUN", 2, "obj"),
        ("under", "under", "ADP", 7, "case"),
        ("the", "the", "DET", 7, "det"),
        ("Y", "", "NOUN", 2, "obl"),
        (".", ".", "PUNCT", 2, "punct"),
    ],
    &[
        ("The", "the", "DET", 2, "det"),
        ("X", "", "NOUN", 3, "nsubj"),
        ("hung", "hang", "VERB", 0, "root"),
        ("above", "above", "ADP", 6, "case"),
        ("the", "the", "DET", 6, "det"),
        ("Y", "", "NOUN", 3, "obl"),
        (".", ".", "PUNCT", 3, "punct"),
    ],
];

const NEGATIVE: [&[Tok]; 5] = [
    &[
        ("The", "the", "DET", 2, "det"),
        ("X", "", "NOUN", 4, "nsubj"),
        ("is", "be", "AUX", 4, "cop"),
        ("older", "old", "ADJ", 0, "root"),
        ("than", "than", "ADP", 7, "case"),
        ("the", "the", "DET", 7, "det"),
        ("Y", "", "NOUN", 4, "obl"),
        (".", ".", "PUNCT", 4, "punct"),
    ],
    &[
        ("The", "the", "DET", 2, "det"),
        ("X", "", "NOUN", 4, "nsubj"),
        ("was", "be", "AUX", 4, "cop"),
        ("cheaper", "cheap", "ADJ", 0, "root"),
        ("than", "than", "ADP", 7, "case"),
        ("the", "the", "DET", 7, "det"),
        ("Y", "", "NOUN", 4, "obl"),
        (".", ".", "PUNCT", 4, "punct"),
    ],
    &[
        ("She", "she", "PRON", 2, "nsubj"),
        ("compared", "compare", "VERB", 0, "root"),
        ("the", "the", "DET", 4, "det"),
        ("X", "", "NOUN", 2, "obj"),
        ("with", "with", "ADP", 7, "case"),
        ("the", "the", "DET", 7, "det"),
        ("Y", "", "NOUN", 2, "obl"),
        (".", ".", "PUNCT", 2, "punct"),
    ],
    &[
        ("The", "the", "DET", 2, "det"),
        ("X", "", "NOUN", 3, "nsubj"),
        ("reminded", "remind", "VERB", 0, "root"),
        ("him", "he", "PRON", 3, "obj"),
        ("of", "of", "ADP", 7, "case"),
        ("the", "the", "DET", 7, "det"),
        ("Y", "", "NOUN", 3, "obl"),
        (".", ".", "PUNCT", 3, "punct"),
    ],
    &[
        ("The", "the", "DET", 2, "det"),
        ("X", "", "NOUN", 3, "nsubj"),
        ("costs", "cost", "VERB", 0, "root"),
        ("more", "more", "ADV", 3, "advmod"),
        ("than", "than", "ADP", 7, "case"),
        ("the", "the", "DET", 7, "det"),
        ("Y", "", "NOUN", 3, "obl"),
        (".", ".", "PUNCT", 3, "punct"),
    ],
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthConfig {
    pub sentences: usize,
    pub seed: u64,
    pub sentences_per_pair: usize,
    pub embedding_dim: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            sentences: 2000,
            seed: 0,
            sentences_per_pair: 10,
            embedding_dim: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthRow {
    pub sentence_id: String,
    pub e1: String,
    pub e2: String,
    pub label: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub sentences: Vec<ParsedSentence>,
    pub rows: Vec<SynthRow>,
    pub vocab: Vec<String>,
    pub gold: BTreeMap<PairKey, bool>,
    pub embeddings: Vec<(String, Vec<f64>)>,
}

fn instantiate(id: String, template: &[Tok], x: &str, y: &str) -> ParsedSentence {
    let tokens = template
        .iter()
        .enumerate()
        .map(|(i, &(form, lemma, upos, head, deprel))| {
            let (form, lemma) = match form {
                "X" => (x, x),
                "Y" => (y, y),
                _ => (form, lemma),
            };
            Token {
                index: i + 1,
                form: form.to_string(),
                lemma: lemma.to_string(),
                upos: upos.to_string(),
                head,
                deprel: deprel.to_string(),
            }
        })
        .collect();
    ParsedSentence::new(id, tokens).expect("templates are valid trees")
}

pub fn generate(config: &SynthConfig) -> Result<SynthCorpus> {
    let SynthConfig {
        sentences: n,
        seed,
        sentences_per_pair: per_pair,
        embedding_dim,
    } = *config;
    if n == 0 || per_pair == 0 || embedding_dim == 0 {
        return Err(Error::InvalidArgument(
            "sentence count, sentences per pair and embedding dimension must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_pairs = n.div_ceil(per_pair);
    let mut all_pairs = Vec::new();
    for i in 0..OBJECTS.len() {
        for j in i + 1..OBJECTS.len() {
            all_pairs.push((OBJECTS[i], OBJECTS[j]));
        }
    }
    if n_pairs > all_pairs.len() {
        return Err(Error::InvalidArgument(format!(
            "{n} sentences need {n_pairs} object pairs but only {} exist; raise sentences_per_pair",
            all_pairs.len()
        )));
    }
    all_pairs.shuffle(&mut rng);
    all_pairs.truncate(n_pairs);

    let mut gold = BTreeMap::new();
    let mut drafts: Vec<(&[Tok], &str, &str, bool)> = Vec::with_capacity(n);
    for (p, &(a, b)) in all_pairs.iter().enumerate() {
        let relevant = p % 2 == 0;
        gold.insert(PairKey::new(a, b), relevant);
        let m = per_pair.min(n - p * per_pair);
        let majority = (m as f64 * 0.8).round() as usize;
        let positives = if relevant { majority } else { m - majority };
        for k in 0..m {
            let label = k < positives;
            let pool = if label { &POSITIVE } else { &NEGATIVE };
            let template = pool[rng.gen_range(0..pool.len())];
            let (x, y) = if rng.gen_bool(0.5) { (a, b) } else { (b, a) };
            drafts.push((template, x, y, label));
        }
    }
    drafts.shuffle(&mut rng);

    let width = n.to_string().len();
    let mut sentences = Vec::with_capacity(n);
    let mut rows = Vec::with_capacity(n);
    for (k, (template, x, y, label)) in drafts.into_iter().enumerate() {
        let id = format!("syn{:0width$}", k + 1);
        sentences.push(instantiate(id.clone(), template, x, y));
        rows.push(SynthRow {
            sentence_id: id,
            e1: x.to_string(),
            e2: y.to_string(),
            label,
        });
    }

    let mut words: BTreeSet<&str> = OBJECTS.iter().copied().collect();
    for t in POSITIVE.iter().chain(NEGATIVE.iter()) {
        for &(form, lemma, ..) in t.iter() {
            if !lemma.is_empty() && form != "X" && form != "Y" {
                words.insert(lemma);
            }
        }
    }
    let embeddings = words
        .into_iter()
        .map(|w| {
            let v = (0..embedding_dim)
                .map(|_| (rng.gen_range(-1.0f64..1.0) * 1e4).round() / 1e4)
                .collect();
            (w.to_string(), v)
        })
        .collect();

    Ok(SynthCorpus {
        sentences,
        rows,
        vocab: OBJECTS.iter().map(|s| s.to_string()).collect(),
        gold,
        embeddings,
    })
}

impl SynthCorpus {
    pub fn conllu(&self) -> String {
        self.sentences.iter().map(|s| s.to_conllu()).collect()
    }

    pub fn labeled_tsv(&self) -> String {
        let mut out = String::from("sentence_id\te1\te2\tlabel\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}",
                r.sentence_id,
                r.e1,
                r.e2,
                u8::from(r.label)
            );
        }
        out
    }

    pub fn vocab_text(&self) -> String {
        self.vocab.iter().map(|w| format!("{w}\n")).collect()
    }

    pub fn gold_tsv(&self) -> String {
        write_gold_pairs(&self.gold)
    }

    pub fn embeddings_text(&self) -> String {
        let mut out = String::new();
        for (w, v) in &self.embeddings {
            out.push_str(w);
            for x in v {
                let _ = write!(out, " {x}");
            }
            out.push('\n');
        }
        out
    }

    /// Writes the five corpus files into `dir`, creating it if needed.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = [
            (PARSES_FILE, self.conllu()),
            (LABELED_FILE, self.labeled_tsv()),
            (VOCAB_FILE, self.vocab_text()),
            (GOLD_FILE, self.gold_tsv()),
            (EMBEDDINGS_FILE, self.embeddings_text()),
        ];
        for (name, text) in files {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}
