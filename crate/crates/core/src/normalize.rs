//! Multi-level sentence normalization.
//!
//! Every token of an instance's sentence is rewritten to one of four
//! levels, in priority order:
//!
//! 1. the two grounded objects become `E1` / `E2`;
//! 2. verbs, adverbs and adpositions keep their lemma;
//! 3. subjects and direct objects of verbs become `<verb>#s` / `<verb>#o`,
//!    and nouns governing a `case` adposition become `<adposition>#o`;
//! 4. everything else becomes its POS tag.
//!
//! Alongside the tokens, each position carries its signed distance to E1
//! and to E2.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fmt::Write as _;
use std::io::BufRead;
use std::str::FromStr;

use crate::corpus::{Instance, ParsedSentence, Token};
use crate::error::{Error, Result};

/// Sentences longer than this are cut down to a window around the pair.
pub const MAX_SEQUENCE_LEN: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokenKind {
    ObjectE1,
    ObjectE2,
    Lemma,
    DepRole,
    Pos,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NormalizedToken {
    pub kind: TokenKind,
    pub text: String,
}

impl NormalizedToken {
    fn new(kind: TokenKind, text: impl Into<String>) -> Self {
        NormalizedToken {
            kind,
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NormalizedSequence {
    pub tokens: Vec<NormalizedToken>,
    pub dist_e1: Vec<i32>,
    pub dist_e2: Vec<i32>,
}

impl NormalizedSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(|t| t.text.as_str())
    }

    /// Keeps at most `max_len` positions: the E1..E2 span plus symmetric
    /// context. Distances keep their values from the full sentence.
    pub fn truncated(&self, max_len: usize) -> NormalizedSequence {
        if self.len() <= max_len || max_len == 0 {
            return self.clone();
        }
        let a = self.dist_e1.iter().position(|&d| d == 0).unwrap_or(0);
        let b = self.dist_e2.iter().position(|&d| d == 0).unwrap_or(0);
        let keep = window(self.len(), a.min(b), a.max(b), max_len);
        NormalizedSequence {
            tokens: keep.iter().map(|&i| self.tokens[i].clone()).collect(),
            dist_e1: keep.iter().map(|&i| self.dist_e1[i]).collect(),
            dist_e2: keep.iter().map(|&i| self.dist_e2[i]).collect(),
        }
    }
}

/// 0-based indices kept when cutting a sequence of `len` tokens down to
/// `max_len` while retaining positions `a <= b`.
fn window(len: usize, a: usize, b: usize, max_len: usize) -> Vec<usize> {
    let span = b - a + 1;
    if span <= max_len {
        let left = (max_len - span) / 2;
        let start = a.saturating_sub(left).min(len - max_len);
        (start..start + max_len).collect()
    } else {
        let head = max_len / 2;
        let tail = max_len - head;
        (a..a + head).chain(b + 1 - tail..=b).collect()
    }
}

/// Short tag rendered for a UPOS label at the POS level of normalization.
/// Tags outside the UD set are passed through.
pub fn pos_tag_text(upos: &str) -> &str {
    match upos {
        "NOUN" => "NN",
        "PROPN" => "NNP",
        "VERB" => "VB",
        "AUX" => "MD",
        "ADJ" => "JJ",
        "ADV" => "RB",
        "ADP" | "SCONJ" => "IN",
        "DET" => "DT",
        "PRON" => "PR",
        "CCONJ" => "CC",
        "NUM" => "CD",
        "PART" => "RP",
        "INTJ" => "UH",
        other => other,
    }
}

fn keeps_lemma(t: &Token) -> bool {
    matches!(t.upos.as_str(), "VERB" | "ADV" | "ADP")
}

fn dependency_role(sentence: &ParsedSentence, t: &Token) -> Option<String> {
    let role = match t.base_deprel() {
        "nsubj" => Some('s'),
        "obj" | "dobj" => Some('o'),
        _ => None,
    };
    if let Some(role) = role {
        if let Some(gov) = sentence.token(t.head).filter(|g| g.upos == "VERB") {
            return Some(format!("{}#{}", gov.lemma, role));
        }
    }
    sentence
        .children(t.index)
        .iter()
        .filter_map(|&c| sentence.token(c))
        .find(|c| c.base_deprel() == "case" && c.upos == "ADP")
        .map(|prep| format!("{}#o", prep.lemma))
}

fn check_grounded(inst: &Instance) -> Result<()> {
    let s = &inst.sentence;
    let ok = inst.e1_pos != inst.e2_pos
        && s.token(inst.e1_pos).is_some()
        && s.token(inst.e2_pos).is_some();
    if ok {
        Ok(())
    } else {
        Err(Error::Ungrounded(format!(
            "positions ({}, {}) in sentence {} of length {}",
            inst.e1_pos,
            inst.e2_pos,
            s.id(),
            s.len()
        )))
    }
}

fn distances(inst: &Instance) -> (Vec<i32>, Vec<i32>) {
    let n = inst.sentence.len();
    let d = |anchor: usize| (1..=n).map(|i| i as i32 - anchor as i32).collect();
    (d(inst.e1_pos), d(inst.e2_pos))
}

pub fn normalize_instance(inst: &Instance) -> Result<NormalizedSequence> {
    check_grounded(inst)?;
    let s = &inst.sentence;
    let tokens = s
        .tokens()
        .iter()
        .map(|t| {
            if t.index == inst.e1_pos {
                NormalizedToken::new(TokenKind::ObjectE1, "E1")
            } else if t.index == inst.e2_pos {
                NormalizedToken::new(TokenKind::ObjectE2, "E2")
            } else if keeps_lemma(t) {
                NormalizedToken::new(TokenKind::Lemma, t.lemma.as_str())
            } else if let Some(role) = dependency_role(s, t) {
                NormalizedToken::new(TokenKind::DepRole, role)
            } else {
                NormalizedToken::new(TokenKind::Pos, pos_tag_text(&t.upos))
            }
        })
        .collect();
    let (dist_e1, dist_e2) = distances(inst);
    Ok(NormalizedSequence {
        tokens,
        dist_e1,
        dist_e2,
    })
}

/// Which token stream feeds the sequence encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum InputVariant {
    /// Lemmas of the original sentence, no rewriting.
    Word,
    /// POS tags only.
    Pos,
    /// Full multi-level normalization.
    #[default]
    Norm,
}

impl InputVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            InputVariant::Word => "word",
            InputVariant::Pos => "pos",
            InputVariant::Norm => "norm",
        }
    }
}

impl fmt::Display for InputVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InputVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "word" => Ok(InputVariant::Word),
            "pos" => Ok(InputVariant::Pos),
            "norm" => Ok(InputVariant::Norm),
            other => Err(Error::InvalidArgument(format!(
                "unknown input variant {:?} (expected word, pos or norm)",
                other
            ))),
        }
    }
}

/// Token stream for `variant`. All variants share the distance features.
pub fn token_stream(inst: &Instance, variant: InputVariant) -> Result<NormalizedSequence> {
    match variant {
        InputVariant::Norm => normalize_instance(inst),
        InputVariant::Word | InputVariant::Pos => {
            check_grounded(inst)?;
            let tokens = inst
                .sentence
                .tokens()
                .iter()
                .map(|t| match variant {
                    InputVariant::Word => NormalizedToken::new(TokenKind::Lemma, t.lemma.as_str()),
                    _ => NormalizedToken::new(TokenKind::Pos, pos_tag_text(&t.upos)),
                })
                .collect();
            let (dist_e1, dist_e2) = distances(inst);
            Ok(NormalizedSequence {
                tokens,
                dist_e1,
                dist_e2,
            })
        }
    }
}

pub const PAD_ID: usize = 0;
const PAD_TEXT: &str = "<pad>";
const UNK_TEXT: &str = "<unk>";
const TOKEN_INDEX_HEADER: &str = "token\tid";

/// Token text to embedding-row id. Id 0 is padding, known tokens occupy
/// 1..=n in sorted order, and n+1 is the unknown token.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenIndex {
    ids: BTreeMap<String, usize>,
}

impl TokenIndex {
    pub fn build<'a, I>(sequences: I) -> TokenIndex
    where
        I: IntoIterator<Item = &'a NormalizedSequence>,
    {
        let texts: BTreeSet<&str> = sequences.into_iter().flat_map(|s| s.texts()).collect();
        TokenIndex {
            ids: texts
                .into_iter()
                .enumerate()
                .map(|(i, t)| (t.to_string(), i + 1))
                .collect(),
        }
    }

    pub fn unk_id(&self) -> usize {
        self.ids.len() + 1
    }

    /// Number of embedding rows, including padding and unknown.
    pub fn table_size(&self) -> usize {
        self.ids.len() + 2
    }

    /// Number of known tokens.
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn id(&self, text: &str) -> usize {
        self.ids.get(text).copied().unwrap_or_else(|| self.unk_id())
    }

    pub fn encode(&self, seq: &NormalizedSequence) -> Vec<usize> {
        seq.texts().map(|t| self.id(t)).collect()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{}", TOKEN_INDEX_HEADER);
        let _ = writeln!(out, "{}\t{}", PAD_TEXT, PAD_ID);
        let mut by_id: Vec<(&String, &usize)> = self.ids.iter().collect();
        by_id.sort_by_key(|(_, &id)| id);
        for (text, id) in by_id {
            let _ = writeln!(out, "{}\t{}", text, id);
        }
        let _ = writeln!(out, "{}\t{}", UNK_TEXT, self.unk_id());
        out
    }

    pub fn read_tsv<R: BufRead>(reader: R) -> Result<TokenIndex> {
        let mut rows = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let lineno = lineno + 1;
            let line = line.map_err(|e| Error::parse("token index", lineno, e.to_string()))?;
            if lineno == 1 {
                if line != TOKEN_INDEX_HEADER {
                    return Err(Error::parse("token index", 1, "missing header"));
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let (text, id) = line
                .rsplit_once('\t')
                .ok_or_else(|| Error::parse("token index", lineno, "expected token\\tid"))?;
            let id: usize = id
                .parse()
                .map_err(|_| Error::parse("token index", lineno, format!("invalid id {:?}", id)))?;
            rows.push((lineno, text.to_string(), id));
        }
        let n = rows.len();
        if n < 2 || rows[0].1 != PAD_TEXT || rows[0].2 != PAD_ID {
            return Err(Error::Format(
                "token index must start with the padding row".into(),
            ));
        }
        let (line, text, id) = &rows[n - 1];
        if text != UNK_TEXT || *id != n - 1 {
            return Err(Error::parse(
                "token index",
                *line,
                "last row must be the unknown token",
            ));
        }
        let mut ids = BTreeMap::new();
        for (expected, (line, text, id)) in rows[1..n - 1].iter().enumerate() {
            if *id != expected + 1 {
                return Err(Error::parse("token index", *line, "ids must be contiguous"));
            }
            if ids.insert(text.clone(), *id).is_some() {
                return Err(Error::parse(
                    "token index",
                    *line,
                    format!("duplicate token {:?}", text),
                ));
            }
        }
        Ok(TokenIndex { ids })
    }
}
