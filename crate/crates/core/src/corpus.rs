//! Parsed corpora, object vocabularies, labeled benchmark files and
//! candidate-instance generation.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::{self, Write as _};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::Arc;

use log::warn;

use crate::error::{Error, Result};

/// Head value of the root token.
pub const ROOT: usize = 0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    /// 1-based position in the sentence.
    pub index: usize,
    pub form: String,
    pub lemma: String,
    pub upos: String,
    /// Index of the governing token, `ROOT` for the root.
    pub head: usize,
    pub deprel: String,
}

impl Token {
    /// Nouns for the purpose of object grounding: common and proper nouns.
    pub fn is_noun(&self) -> bool {
        self.upos == "NOUN" || self.upos == "PROPN"
    }

    /// The relation label without its subtype (`nsubj:pass` -> `nsubj`).
    pub fn base_deprel(&self) -> &str {
        self.deprel.split(':').next().unwrap_or("")
    }
}

/// A dependency-parsed sentence whose head links form a single tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedSentence {
    id: String,
    tokens: Vec<Token>,
    children: Vec<Vec<usize>>,
    root: usize,
}

impl ParsedSentence {
    /// Builds a sentence, rejecting token lists that are not a well-formed
    /// dependency tree.
    pub fn new(id: impl Into<String>, tokens: Vec<Token>) -> std::result::Result<Self, String> {
        let root = validate_tree(&tokens)?;
        let mut children = vec![Vec::new(); tokens.len() + 1];
        for tok in &tokens {
            children[tok.head].push(tok.index);
        }
        Ok(ParsedSentence {
            id: id.into(),
            tokens,
            children,
            root,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Token at a 1-based index.
    pub fn token(&self, index: usize) -> Option<&Token> {
        index.checked_sub(1).and_then(|i| self.tokens.get(i))
    }

    pub fn root(&self) -> usize {
        self.root
    }

    /// Dependents of `index`, in sentence order. `children(ROOT)` is the root.
    pub fn children(&self, index: usize) -> &[usize] {
        self.children.get(index).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Renders the sentence as a CoNLL-U block (including the trailing
    /// blank line). Columns not modelled here are written as `_`.
    pub fn to_conllu(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# sent_id = {}", self.id);
        for t in &self.tokens {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t_\t_\t{}\t{}\t_\t_",
                t.index, t.form, t.lemma, t.upos, t.head, t.deprel
            );
        }
        out.push('\n');
        out
    }
}

fn validate_tree(tokens: &[Token]) -> std::result::Result<usize, String> {
    if tokens.is_empty() {
        return Err("sentence has no tokens".into());
    }
    let n = tokens.len();
    let mut root = None;
    for (i, t) in tokens.iter().enumerate() {
        if t.index != i + 1 {
            return Err(format!("token {} has index {}", i + 1, t.index));
        }
        if t.head > n {
            return Err(format!(
                "token {} has head {} beyond sentence length",
                t.index, t.head
            ));
        }
        if t.head == t.index {
            return Err(format!("token {} is its own head", t.index));
        }
        if t.head == ROOT {
            if root.is_some() {
                return Err("multiple root tokens".into());
            }
            root = Some(t.index);
        }
    }
    let root = root.ok_or_else(|| "no root token".to_string())?;
    // 0 = unvisited, 1 = on the current walk, 2 = known to reach the root
    let mut state = vec![0u8; n + 1];
    state[ROOT] = 2;
    for start in 1..=n {
        let mut path = Vec::new();
        let mut cur = start;
        while state[cur] == 0 {
            state[cur] = 1;
            path.push(cur);
            cur = tokens[cur - 1].head;
        }
        if state[cur] == 1 {
            return Err(format!("cycle through token {}", cur));
        }
        for p in path {
            state[p] = 2;
        }
    }
    Ok(root)
}

/// A sentence dropped while reading CoNLL-U because its parse is not a tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RejectedSentence {
    pub id: String,
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct ConlluDocument {
    pub sentences: Vec<ParsedSentence>,
    pub rejected: Vec<RejectedSentence>,
}

#[derive(Default)]
struct Block {
    id: Option<String>,
    start_line: usize,
    tokens: Vec<Token>,
}

/// Reads CoNLL-U from any buffered reader.
///
/// Multi-word token ranges (`3-4`) and empty nodes (`5.1`) are skipped.
/// Malformed lines are fatal; sentences whose heads do not form a tree are
/// collected in [`ConlluDocument::rejected`].
pub fn read_conllu<R: BufRead>(reader: R) -> Result<ConlluDocument> {
    let mut doc = ConlluDocument::default();
    let mut block = Block::default();
    let mut ordinal = 0usize;

    let finish = |block: Block, doc: &mut ConlluDocument, ordinal: &mut usize| {
        if block.tokens.is_empty() {
            return;
        }
        *ordinal += 1;
        let id = block.id.unwrap_or_else(|| format!("s{}", ordinal));
        match ParsedSentence::new(id.clone(), block.tokens) {
            Ok(s) => doc.sentences.push(s),
            Err(reason) => doc.rejected.push(RejectedSentence {
                id,
                line: block.start_line,
                reason,
            }),
        }
    };

    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| Error::parse("conllu", lineno, e.to_string()))?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.trim().is_empty() {
            finish(std::mem::take(&mut block), &mut doc, &mut ordinal);
            continue;
        }
        if block.tokens.is_empty() && block.id.is_none() {
            block.start_line = lineno;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(rest) = comment.trim_start().strip_prefix("sent_id") {
                let rest = rest.trim_start();
                let rest = rest.strip_prefix('=').unwrap_or(rest).trim();
                if !rest.is_empty() {
                    block.id = Some(rest.to_string());
                }
            }
            continue;
        }
        if let Some(token) = parse_token_line(line, lineno)? {
            if token.index != block.tokens.len() + 1 {
                return Err(Error::parse(
                    "conllu",
                    lineno,
                    format!(
                        "token id {} out of sequence (expected {})",
                        token.index,
                        block.tokens.len() + 1
                    ),
                ));
            }
            block.tokens.push(token);
        }
    }
    finish(block, &mut doc, &mut ordinal);
    Ok(doc)
}

fn parse_token_line(line: &str, lineno: usize) -> Result<Option<Token>> {
    let cols: Vec<&str> = line.split('\t').collect();
    if cols.len() != 10 {
        return Err(Error::parse(
            "conllu",
            lineno,
            format!("expected 10 tab-separated columns, found {}", cols.len()),
        ));
    }
    let id = cols[0];
    if is_range_or_empty_node(id) {
        return Ok(None);
    }
    let index: usize = id
        .parse()
        .ok()
        .filter(|&i| i >= 1)
        .ok_or_else(|| Error::parse("conllu", lineno, format!("invalid token id {:?}", id)))?;
    let head: usize = cols[6]
        .parse()
        .map_err(|_| Error::parse("conllu", lineno, format!("invalid head {:?}", cols[6])))?;
    let form = cols[1].to_string();
    let lemma = if cols[2] == "_" && cols[1] != "_" {
        cols[1].to_lowercase()
    } else {
        cols[2].to_lowercase()
    };
    Ok(Some(Token {
        index,
        form,
        lemma,
        upos: cols[3].to_string(),
        head,
        deprel: cols[7].to_string(),
    }))
}

fn is_range_or_empty_node(id: &str) -> bool {
    let split = |sep: char| {
        id.split_once(sep).is_some_and(|(a, b)| {
            !a.is_empty()
                && !b.is_empty()
                && a.bytes().all(|c| c.is_ascii_digit())
                && b.bytes().all(|c| c.is_ascii_digit())
        })
    };
    split('-') || split('.')
}

pub fn parse_conllu_str(text: &str) -> Result<ConlluDocument> {
    read_conllu(text.as_bytes())
}

/// Loads a CoNLL-U file, logging a warning for every rejected sentence.
pub fn load_conllu(path: impl AsRef<Path>) -> Result<Vec<ParsedSentence>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let doc = read_conllu(BufReader::new(file))?;
    for r in &doc.rejected {
        warn!(
            "{}: skipping sentence {} (line {}): {}",
            path.display(),
            r.id,
            r.line,
            r.reason
        );
    }
    Ok(doc.sentences)
}

/// Set of single-word, lowercase physical-object lemmas.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ObjectVocabulary {
    objects: BTreeSet<String>,
}

impl ObjectVocabulary {
    pub fn new<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut objects = BTreeSet::new();
        for (i, w) in words.into_iter().enumerate() {
            let w = w.as_ref().trim();
            if w.is_empty() || w.split_whitespace().count() > 1 {
                return Err(Error::parse(
                    "vocabulary",
                    i + 1,
                    format!("{:?} is not a single word", w),
                ));
            }
            objects.insert(w.to_lowercase());
        }
        Ok(ObjectVocabulary { objects })
    }

    pub fn contains(&self, lemma: &str) -> bool {
        self.objects.contains(lemma)
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.objects.iter().map(String::as_str)
    }
}

/// One word per line; blank lines and `#` comments are ignored.
pub fn read_vocab<R: BufRead>(reader: R) -> Result<ObjectVocabulary> {
    let mut objects = BTreeSet::new();
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| Error::parse("vocabulary", lineno, e.to_string()))?;
        let word = line.trim();
        if word.is_empty() || word.starts_with('#') {
            continue;
        }
        if word.split_whitespace().nth(1).is_some() {
            return Err(Error::parse(
                "vocabulary",
                lineno,
                format!("multi-word entry {:?}", word),
            ));
        }
        objects.insert(word.to_lowercase());
    }
    Ok(ObjectVocabulary { objects })
}

pub fn load_vocab(path: impl AsRef<Path>) -> Result<ObjectVocabulary> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_vocab(BufReader::new(file))
}

/// Unordered object pair, stored with its lemmas in lexicographic order so
/// that (dog, garden) and (garden, dog) share a key.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PairKey {
    first: String,
    second: String,
}

impl PairKey {
    pub fn new(a: impl Into<String>, b: impl Into<String>) -> Self {
        let (a, b) = (a.into(), b.into());
        if a <= b {
            PairKey {
                first: a,
                second: b,
            }
        } else {
            PairKey {
                first: b,
                second: a,
            }
        }
    }

    pub fn first(&self) -> &str {
        &self.first
    }

    pub fn second(&self) -> &str {
        &self.second
    }
}

impl fmt::Display for PairKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.first, self.second)
    }
}

/// A sentence together with a grounded object pair: `e1` is always the pair
/// member mentioned first.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub sentence: Arc<ParsedSentence>,
    pub e1: String,
    pub e2: String,
    pub e1_pos: usize,
    pub e2_pos: usize,
    pub label: Option<bool>,
}

impl Instance {
    /// Grounds `(a, b)` at the first noun occurrence of each lemma.
    pub fn ground(
        sentence: Arc<ParsedSentence>,
        a: &str,
        b: &str,
        label: Option<bool>,
    ) -> Result<Instance> {
        let (a, b) = (a.to_lowercase(), b.to_lowercase());
        if a == b {
            return Err(Error::Ungrounded(format!(
                "pair ({}, {}) repeats the same lemma",
                a, b
            )));
        }
        let find = |lemma: &str| {
            sentence
                .tokens()
                .iter()
                .find(|t| t.is_noun() && t.lemma == lemma)
                .map(|t| t.index)
                .ok_or_else(|| {
                    Error::Ungrounded(format!("no noun {:?} in sentence {}", lemma, sentence.id()))
                })
        };
        let (pa, pb) = (find(&a)?, find(&b)?);
        let (e1, e1_pos, e2, e2_pos) = if pa < pb {
            (a, pa, b, pb)
        } else {
            (b, pb, a, pa)
        };
        Ok(Instance {
            sentence,
            e1,
            e2,
            e1_pos,
            e2_pos,
            label,
        })
    }

    /// Rebuilds an instance from explicit positions, checking every
    /// grounding invariant.
    pub fn at_positions(
        sentence: Arc<ParsedSentence>,
        e1_pos: usize,
        e2_pos: usize,
        label: Option<bool>,
    ) -> Result<Instance> {
        if e1_pos >= e2_pos {
            return Err(Error::Ungrounded(format!(
                "positions {} and {} are not in mention order",
                e1_pos, e2_pos
            )));
        }
        let lemma_at = |pos: usize| {
            sentence
                .token(pos)
                .filter(|t| t.is_noun())
                .map(|t| t.lemma.clone())
                .ok_or_else(|| {
                    Error::Ungrounded(format!(
                        "token {} of sentence {} is not a noun",
                        pos,
                        sentence.id()
                    ))
                })
        };
        let (e1, e2) = (lemma_at(e1_pos)?, lemma_at(e2_pos)?);
        if e1 == e2 {
            return Err(Error::Ungrounded(format!("pair repeats lemma {:?}", e1)));
        }
        Ok(Instance {
            sentence,
            e1,
            e2,
            e1_pos,
            e2_pos,
            label,
        })
    }

    pub fn pair_key(&self) -> PairKey {
        PairKey::new(self.e1.as_str(), self.e2.as_str())
    }
}

/// Candidate instances: one per unordered pair of distinct vocabulary
/// lemmas occurring as nouns, each grounded at its first noun occurrence.
pub fn generate_instances(
    sentence: &Arc<ParsedSentence>,
    vocab: &ObjectVocabulary,
) -> Vec<Instance> {
    let mut seen = HashSet::new();
    let mut mentions: Vec<(&str, usize)> = Vec::new();
    for t in sentence.tokens() {
        if t.is_noun() && vocab.contains(&t.lemma) && seen.insert(t.lemma.as_str()) {
            mentions.push((t.lemma.as_str(), t.index));
        }
    }
    let mut out = Vec::with_capacity(mentions.len() * mentions.len().saturating_sub(1) / 2);
    for (i, &(a, pa)) in mentions.iter().enumerate() {
        for &(b, pb) in &mentions[i + 1..] {
            out.push(Instance {
                sentence: Arc::clone(sentence),
                e1: a.to_string(),
                e2: b.to_string(),
                e1_pos: pa,
                e2_pos: pb,
                label: None,
            });
        }
    }
    out
}

/// Number of instances per object pair.
pub fn cooccurrence_counts<'a, I>(instances: I) -> BTreeMap<PairKey, usize>
where
    I: IntoIterator<Item = &'a Instance>,
{
    let mut counts = BTreeMap::new();
    for inst in instances {
        *counts.entry(inst.pair_key()).or_insert(0) += 1;
    }
    counts
}

/// One row of a labeled dataset TSV, before grounding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledRow {
    pub line: usize,
    pub sentence_id: String,
    pub e1: String,
    pub e2: String,
    pub label: bool,
}

/// Parses `sentence-id \t e1 \t e2 \t label` rows. An optional header whose
/// first field is `sentence_id` is skipped.
pub fn read_labeled_rows<R: BufRead>(reader: R) -> Result<Vec<LabeledRow>> {
    let mut rows = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| Error::parse("labeled dataset", lineno, e.to_string()))?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if lineno == 1 && cols.first() == Some(&"sentence_id") {
            continue;
        }
        if cols.len() != 4 {
            return Err(Error::parse(
                "labeled dataset",
                lineno,
                format!("expected 4 columns, found {}", cols.len()),
            ));
        }
        let label = match cols[3].trim() {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::parse(
                    "labeled dataset",
                    lineno,
                    format!("label must be 0 or 1, found {:?}", other),
                ))
            }
        };
        rows.push(LabeledRow {
            line: lineno,
            sentence_id: cols[0].to_string(),
            e1: cols[1].trim().to_string(),
            e2: cols[2].trim().to_string(),
            label,
        });
    }
    Ok(rows)
}

/// Rows dropped while grounding a labeled dataset.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SkipReport {
    pub unknown_sentence: Vec<usize>,
    pub ungrounded: Vec<usize>,
}

impl SkipReport {
    pub fn total(&self) -> usize {
        self.unknown_sentence.len() + self.ungrounded.len()
    }
}

/// Index of sentences by id; the first sentence wins on duplicate ids.
pub fn index_sentences(sentences: Vec<ParsedSentence>) -> HashMap<String, Arc<ParsedSentence>> {
    let mut map = HashMap::with_capacity(sentences.len());
    for s in sentences {
        map.entry(s.id().to_string()).or_insert_with(|| Arc::new(s));
    }
    map
}

pub fn ground_labeled_rows(
    rows: &[LabeledRow],
    sentences: &HashMap<String, Arc<ParsedSentence>>,
) -> (Vec<Instance>, SkipReport) {
    let mut out = Vec::with_capacity(rows.len());
    let mut report = SkipReport::default();
    for row in rows {
        let Some(sentence) = sentences.get(&row.sentence_id) else {
            warn!(
                "line {}: sentence {:?} not found in parse file",
                row.line, row.sentence_id
            );
            report.unknown_sentence.push(row.line);
            continue;
        };
        match Instance::ground(Arc::clone(sentence), &row.e1, &row.e2, Some(row.label)) {
            Ok(inst) => out.push(inst),
            Err(e) => {
                warn!("line {}: {}", row.line, e);
                report.ungrounded.push(row.line);
            }
        }
    }
    (out, report)
}

/// Loads a labeled dataset TSV and grounds it against its CoNLL-U sidecar.
pub fn load_labeled_dataset(
    tsv: impl AsRef<Path>,
    parses: impl AsRef<Path>,
) -> Result<(Vec<Instance>, SkipReport)> {
    let tsv = tsv.as_ref();
    let file = File::open(tsv).map_err(|e| Error::io(tsv, e))?;
    let rows = read_labeled_rows(BufReader::new(file))?;
    let sentences = index_sentences(load_conllu(parses)?);
    Ok(ground_labeled_rows(&rows, &sentences))
}

pub const INSTANCE_HEADER: &str = "sentence_id\te1\te2\te1_pos\te2_pos";

pub fn write_instances(instances: &[Instance]) -> String {
    let mut out = String::from(INSTANCE_HEADER);
    out.push('\n');
    for inst in instances {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            inst.sentence.id(),
            inst.e1,
            inst.e2,
            inst.e1_pos,
            inst.e2_pos
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceRow {
    pub line: usize,
    pub sentence_id: String,
    pub e1: String,
    pub e2: String,
    pub e1_pos: usize,
    pub e2_pos: usize,
}

pub fn read_instance_rows<R: BufRead>(reader: R) -> Result<Vec<InstanceRow>> {
    let mut rows = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| Error::parse("instances", lineno, e.to_string()))?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.trim().is_empty() || (lineno == 1 && line == INSTANCE_HEADER) {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 5 {
            return Err(Error::parse(
                "instances",
                lineno,
                format!("expected 5 columns, found {}", cols.len()),
            ));
        }
        let pos = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::parse("instances", lineno, format!("invalid position {:?}", s)))
        };
        rows.push(InstanceRow {
            line: lineno,
            sentence_id: cols[0].to_string(),
            e1: cols[1].to_string(),
            e2: cols[2].to_string(),
            e1_pos: pos(cols[3])?,
            e2_pos: pos(cols[4])?,
        });
    }
    Ok(rows)
}

/// Resolves instance rows against their parses. Rows that no longer match
/// the parse are dropped with a warning.
pub fn resolve_instance_rows(
    rows: &[InstanceRow],
    sentences: &HashMap<String, Arc<ParsedSentence>>,
) -> Vec<Instance> {
    let mut out = Vec::with_capacity(rows.len());
    for row in rows {
        let Some(sentence) = sentences.get(&row.sentence_id) else {
            warn!("line {}: unknown sentence {:?}", row.line, row.sentence_id);
            continue;
        };
        match Instance::at_positions(Arc::clone(sentence), row.e1_pos, row.e2_pos, None) {
            Ok(inst) if inst.e1 == row.e1 && inst.e2 == row.e2 => out.push(inst),
            Ok(_) => warn!("line {}: lemmas do not match the parse", row.line),
            Err(e) => warn!("line {}: {}", row.line, e),
        }
    }
    out
}
