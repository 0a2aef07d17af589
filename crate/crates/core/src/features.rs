//! Hand-engineered features for the SVM classifier.
//!
//! Six families, laid out in this order when enabled:
//!
//! | family | width | content |
//! |--------|-------|---------|
//! | BW  | \|bw vocab\|  | lemmas present in the sentence |
//! | BPW | \|bpw vocab\| | lemmas on the shortest path and in the two object subtrees |
//! | BAP | \|bap vocab\| | adverb / adposition lemmas present in the sentence |
//! | GF  | 8  | length and POS counts over the sentence |
//! | SDP | 16 | the GF statistics over the tree traversal, then over the shortest path |
//! | SS  | 1  | cosine between the object embeddings |

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::fmt::Write as _;
use std::io::BufRead;
use std::str::FromStr;

use crate::corpus::{Instance, ParsedSentence, Token, ROOT};
use crate::embeddings::{cosine, EmbeddingTable};
use crate::error::{Error, Result};

pub const GF_WIDTH: usize = 8;
pub const SDP_WIDTH: usize = 16;
pub const SS_WIDTH: usize = 1;

const GF_NAMES: [&str; GF_WIDTH] = [
    "length", "noun", "verb", "adv", "adj", "det", "adp", "punct",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Family {
    Bw,
    Bpw,
    Bap,
    Gf,
    Sdp,
    Ss,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::Bw,
        Family::Bpw,
        Family::Bap,
        Family::Gf,
        Family::Sdp,
        Family::Ss,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Bw => "BW",
            Family::Bpw => "BPW",
            Family::Bap => "BAP",
            Family::Gf => "GF",
            Family::Sdp => "SDP",
            Family::Ss => "SS",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown feature family {:?}", s)))
    }
}

/// Parses a comma-separated family list. `all` selects every family and a
/// leading `-` removes one, so `all,-GF` is the GF ablation.
pub fn parse_families(spec: &str) -> Result<BTreeSet<Family>> {
    let mut set = BTreeSet::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if part.eq_ignore_ascii_case("all") {
            set.extend(Family::ALL);
        } else if let Some(rest) = part.strip_prefix('-') {
            set.remove(&rest.parse()?);
        } else {
            set.insert(part.parse()?);
        }
    }
    Ok(set)
}

pub fn format_families(set: &BTreeSet<Family>) -> String {
    set.iter().map(|f| f.as_str()).collect::<Vec<_>>().join(",")
}

/// Sparse feature vector; columns strictly increasing.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureVector {
    dim: usize,
    entries: Vec<(usize, f64)>,
}

impl FeatureVector {
    /// Builds a vector from unsorted entries; zero values are dropped and
    /// duplicate columns are summed.
    pub fn from_entries(dim: usize, mut entries: Vec<(usize, f64)>) -> Result<Self> {
        entries.sort_by_key(|e| e.0);
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(entries.len());
        for (c, v) in entries {
            if c >= dim {
                return Err(Error::InvalidArgument(format!(
                    "column {} outside dimension {}",
                    c, dim
                )));
            }
            match out.last_mut() {
                Some(last) if last.0 == c => last.1 += v,
                _ => out.push((c, v)),
            }
        }
        out.retain(|e| e.1 != 0.0);
        Ok(FeatureVector { dim, entries: out })
    }

    pub fn from_dense(values: &[f64]) -> Self {
        FeatureVector {
            dim: values.len(),
            entries: values
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(i, v)| (i, *v))
                .collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn get(&self, column: usize) -> f64 {
        self.entries
            .binary_search_by_key(&column, |e| e.0)
            .map(|i| self.entries[i].1)
            .unwrap_or(0.0)
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for &(c, x) in &self.entries {
            v[c] = x;
        }
        v
    }

    pub fn dot(&self, other: &FeatureVector) -> f64 {
        let (a, b) = (&self.entries, &other.entries);
        let (mut i, mut j, mut sum) = (0, 0, 0.0);
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    sum += a[i].1 * b[j].1;
                    i += 1;
                    j += 1;
                }
            }
        }
        sum
    }

    pub fn squared_norm(&self) -> f64 {
        self.entries.iter().map(|e| e.1 * e.1).sum()
    }

    pub fn squared_distance(&self, other: &FeatureVector) -> f64 {
        let (a, b) = (&self.entries, &other.entries);
        let (mut i, mut j, mut sum) = (0, 0, 0.0);
        while i < a.len() || j < b.len() {
            let d = match (a.get(i), b.get(j)) {
                (Some(x), Some(y)) if x.0 == y.0 => {
                    i += 1;
                    j += 1;
                    x.1 - y.1
                }
                (Some(x), Some(y)) if x.0 < y.0 => {
                    i += 1;
                    x.1
                }
                (Some(x), None) => {
                    i += 1;
                    x.1
                }
                (_, Some(y)) => {
                    j += 1;
                    y.1
                }
                (None, None) => unreachable!(),
            };
            sum += d * d;
        }
        sum
    }
}

/// Unique path from `i` to `j` in the undirected dependency tree,
/// endpoints included.
pub fn shortest_dependency_path(
    sentence: &ParsedSentence,
    i: usize,
    j: usize,
) -> Result<Vec<usize>> {
    let n = sentence.len();
    if i == 0 || j == 0 || i > n || j > n {
        return Err(Error::InvalidArgument(format!(
            "token indices ({}, {}) outside sentence of length {}",
            i, j, n
        )));
    }
    let ancestors = |start: usize| {
        let mut chain = vec![start];
        let mut cur = start;
        while cur != ROOT && chain.len() <= n {
            cur = sentence.token(cur).map(|t| t.head).unwrap_or(ROOT);
            chain.push(cur);
        }
        chain
    };
    let up_i = ancestors(i);
    let up_j = ancestors(j);
    if up_i.last() != Some(&ROOT) || up_j.last() != Some(&ROOT) {
        return Err(Error::Format(format!(
            "sentence {} is not connected",
            sentence.id()
        )));
    }
    let on_j: BTreeMap<usize, usize> = up_j.iter().enumerate().map(|(k, &t)| (t, k)).collect();
    let (k_i, k_j) = up_i
        .iter()
        .enumerate()
        .find_map(|(k, t)| on_j.get(t).map(|&kj| (k, kj)))
        .ok_or_else(|| {
            Error::Format(format!("no common ancestor in sentence {}", sentence.id()))
        })?;
    if up_i[k_i] == ROOT {
        return Err(Error::Format(format!(
            "tokens {} and {} are in different trees",
            i, j
        )));
    }
    let mut path: Vec<usize> = up_i[..=k_i].to_vec();
    path.extend(up_j[..k_j].iter().rev());
    Ok(path)
}

/// `i` and every token it dominates.
pub fn subtree(sentence: &ParsedSentence, i: usize) -> BTreeSet<usize> {
    let mut out = BTreeSet::new();
    if sentence.token(i).is_none() {
        return out;
    }
    let mut queue = VecDeque::from([i]);
    while let Some(t) = queue.pop_front() {
        if out.insert(t) {
            queue.extend(sentence.children(t).iter().copied());
        }
    }
    out
}

/// Length in words (punctuation excluded) followed by counts of nouns,
/// verbs, adverbs, adjectives, determiners, adpositions and punctuation.
fn global_stats<'a>(tokens: impl Iterator<Item = &'a Token>) -> [f64; GF_WIDTH] {
    let mut s = [0.0; GF_WIDTH];
    for t in tokens {
        let slot = match t.upos.as_str() {
            "NOUN" | "PROPN" => Some(1),
            "VERB" => Some(2),
            "ADV" => Some(3),
            "ADJ" => Some(4),
            "DET" => Some(5),
            "ADP" => Some(6),
            "PUNCT" => Some(7),
            _ => None,
        };
        if slot != Some(7) {
            s[0] += 1.0;
        }
        if let Some(k) = slot {
            s[k] += 1.0;
        }
    }
    s
}

/// Preorder traversal from the root.
fn tree_traversal(sentence: &ParsedSentence) -> Vec<usize> {
    let mut order = Vec::with_capacity(sentence.len());
    let mut stack = vec![sentence.root()];
    while let Some(t) = stack.pop() {
        order.push(t);
        stack.extend(sentence.children(t).iter().rev());
    }
    order
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Scale {
    mean: f64,
    std: f64,
}

const IDENTITY: Scale = Scale {
    mean: 0.0,
    std: 1.0,
};

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSpace {
    bw: BTreeMap<String, usize>,
    bpw: BTreeMap<String, usize>,
    bap: BTreeMap<String, usize>,
    enabled: BTreeSet<Family>,
    offsets: BTreeMap<Family, usize>,
    total_dim: usize,
    /// Standardization for GF then SDP columns, in order.
    scales: Vec<Scale>,
}

struct InstanceParts {
    bw: BTreeSet<String>,
    bpw: BTreeSet<String>,
    bap: BTreeSet<String>,
    gf: [f64; GF_WIDTH],
    sdp: [f64; SDP_WIDTH],
}

fn instance_parts(inst: &Instance) -> Result<InstanceParts> {
    let s = &inst.sentence;
    let path = shortest_dependency_path(s, inst.e1_pos, inst.e2_pos)?;
    let mut path_region: BTreeSet<usize> = path.iter().copied().collect();
    path_region.extend(subtree(s, inst.e1_pos));
    path_region.extend(subtree(s, inst.e2_pos));
    let lemma = |i: &usize| s.token(*i).map(|t| t.lemma.clone());

    let traversal = tree_traversal(s);
    let tree = global_stats(traversal.iter().filter_map(|&i| s.token(i)));
    let on_path = global_stats(path.iter().filter_map(|&i| s.token(i)));
    let mut sdp = [0.0; SDP_WIDTH];
    sdp[..GF_WIDTH].copy_from_slice(&tree);
    sdp[GF_WIDTH..].copy_from_slice(&on_path);

    Ok(InstanceParts {
        bw: s.tokens().iter().map(|t| t.lemma.clone()).collect(),
        bpw: path_region.iter().filter_map(lemma).collect(),
        bap: s
            .tokens()
            .iter()
            .filter(|t| t.upos == "ADV" || t.upos == "ADP")
            .map(|t| t.lemma.clone())
            .collect(),
        gf: global_stats(s.tokens().iter()),
        sdp,
    })
}

fn columns(words: BTreeSet<String>) -> BTreeMap<String, usize> {
    words.into_iter().enumerate().map(|(i, w)| (w, i)).collect()
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> Scale {
    let n = values.clone().count() as f64;
    if n == 0.0 {
        return IDENTITY;
    }
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    Scale {
        mean,
        std: if std > 0.0 { std } else { 1.0 },
    }
}

impl FeatureSpace {
    fn assemble(
        bw: BTreeMap<String, usize>,
        bpw: BTreeMap<String, usize>,
        bap: BTreeMap<String, usize>,
        enabled: BTreeSet<Family>,
        scales: Vec<Scale>,
    ) -> FeatureSpace {
        let mut offsets = BTreeMap::new();
        let mut at = 0;
        for fam in Family::ALL {
            if !enabled.contains(&fam) {
                continue;
            }
            offsets.insert(fam, at);
            at += match fam {
                Family::Bw => bw.len(),
                Family::Bpw => bpw.len(),
                Family::Bap => bap.len(),
                Family::Gf => GF_WIDTH,
                Family::Sdp => SDP_WIDTH,
                Family::Ss => SS_WIDTH,
            };
        }
        FeatureSpace {
            bw,
            bpw,
            bap,
            enabled,
            offsets,
            total_dim: at,
            scales,
        }
    }

    pub fn total_dim(&self) -> usize {
        self.total_dim
    }

    pub fn enabled(&self) -> &BTreeSet<Family> {
        &self.enabled
    }

    pub fn width(&self, family: Family) -> usize {
        if !self.enabled.contains(&family) {
            return 0;
        }
        match family {
            Family::Bw => self.bw.len(),
            Family::Bpw => self.bpw.len(),
            Family::Bap => self.bap.len(),
            Family::Gf => GF_WIDTH,
            Family::Sdp => SDP_WIDTH,
            Family::Ss => SS_WIDTH,
        }
    }

    /// Column range of a family, `None` when disabled.
    pub fn range(&self, family: Family) -> Option<std::ops::Range<usize>> {
        self.offsets
            .get(&family)
            .map(|&o| o..o + self.width(family))
    }

    /// Same vocabularies, different family selection.
    pub fn with_families(&self, enabled: BTreeSet<Family>) -> FeatureSpace {
        FeatureSpace::assemble(
            self.bw.clone(),
            self.bpw.clone(),
            self.bap.clone(),
            enabled,
            self.scales.clone(),
        )
    }

    pub fn featurize(&self, inst: &Instance, table: &EmbeddingTable) -> Result<FeatureVector> {
        let parts = instance_parts(inst)?;
        let mut entries = Vec::new();
        let bag = |vocab: &BTreeMap<String, usize>,
                   words: &BTreeSet<String>,
                   off: usize,
                   out: &mut Vec<(usize, f64)>| {
            out.extend(
                words
                    .iter()
                    .filter_map(|w| vocab.get(w))
                    .map(|&c| (off + c, 1.0)),
            );
        };
        for (&fam, &off) in &self.offsets {
            match fam {
                Family::Bw => bag(&self.bw, &parts.bw, off, &mut entries),
                Family::Bpw => bag(&self.bpw, &parts.bpw, off, &mut entries),
                Family::Bap => bag(&self.bap, &parts.bap, off, &mut entries),
                Family::Gf => {
                    entries.extend(parts.gf.iter().enumerate().map(|(k, &v)| (off + k, v)))
                }
                Family::Sdp => {
                    entries.extend(parts.sdp.iter().enumerate().map(|(k, &v)| (off + k, v)))
                }
                Family::Ss => {
                    let c = cosine(table.lookup(&inst.e1), table.lookup(&inst.e2))?;
                    entries.push((off, c));
                }
            }
        }
        FeatureVector::from_entries(self.total_dim, entries)
    }

    /// Maps the GF and SDP columns to zero mean, unit variance using the
    /// training statistics; other columns pass through.
    pub fn standardize(&self, v: &FeatureVector) -> FeatureVector {
        let mut dense = v.to_dense();
        if let Some(r) = self.range(Family::Gf) {
            for (k, c) in r.enumerate() {
                let s = self.scales[k];
                dense[c] = (dense[c] - s.mean) / s.std;
            }
        }
        if let Some(r) = self.range(Family::Sdp) {
            for (k, c) in r.enumerate() {
                let s = self.scales[GF_WIDTH + k];
                dense[c] = (dense[c] - s.mean) / s.std;
            }
        }
        FeatureVector::from_dense(&dense)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "#enabled\t{}", format_families(&self.enabled));
        let _ = writeln!(out, "family\ttoken\tcolumn\tmean\tstd");
        for (fam, vocab) in [
            (Family::Bw, &self.bw),
            (Family::Bpw, &self.bpw),
            (Family::Bap, &self.bap),
        ] {
            for (w, c) in vocab {
                let _ = writeln!(out, "{}\t{}\t{}\t0\t1", fam, w, c);
            }
        }
        for (k, s) in self.scales.iter().enumerate() {
            let (fam, name) = numeric_name(k);
            let col = if k < GF_WIDTH { k } else { k - GF_WIDTH };
            let _ = writeln!(out, "{}\t{}\t{}\t{}\t{}", fam, name, col, s.mean, s.std);
        }
        out
    }

    pub fn read_tsv<R: BufRead>(reader: R) -> Result<FeatureSpace> {
        let ctx = "feature space";
        let mut lines = reader.lines().enumerate();
        let mut next = || -> Result<Option<(usize, String)>> {
            match lines.next() {
                None => Ok(None),
                Some((i, l)) => l
                    .map(|l| Some((i + 1, l)))
                    .map_err(|e| Error::parse(ctx, i + 1, e.to_string())),
            }
        };
        let (_, first) = next()?.ok_or_else(|| Error::Format("empty feature space".into()))?;
        let enabled = first
            .strip_prefix("#enabled\t")
            .ok_or_else(|| Error::parse(ctx, 1, "missing #enabled line"))
            .and_then(parse_families)?;
        match next()? {
            Some((_, h)) if h == "family\ttoken\tcolumn\tmean\tstd" => {}
            _ => return Err(Error::parse(ctx, 2, "missing header")),
        }
        let mut bags: BTreeMap<Family, Vec<(usize, String)>> = BTreeMap::new();
        let mut scales = Vec::new();
        while let Some((lineno, line)) = next()? {
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 5 {
                return Err(Error::parse(ctx, lineno, "expected 5 columns"));
            }
            let fam: Family = cols[0].parse()?;
            let col: usize = cols[2]
                .parse()
                .map_err(|_| Error::parse(ctx, lineno, "invalid column"))?;
            let num = |s: &str| {
                s.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| Error::parse(ctx, lineno, format!("invalid number {:?}", s)))
            };
            match fam {
                Family::Bw | Family::Bpw | Family::Bap => {
                    bags.entry(fam)
                        .or_default()
                        .push((col, cols[1].to_string()));
                }
                Family::Gf | Family::Sdp => {
                    let k = scales.len();
                    let (want_fam, want_name) = numeric_name(k);
                    let want_col = if k < GF_WIDTH { k } else { k - GF_WIDTH };
                    if k >= GF_WIDTH + SDP_WIDTH
                        || fam != want_fam
                        || cols[1] != want_name
                        || col != want_col
                    {
                        return Err(Error::parse(ctx, lineno, "unexpected numeric column"));
                    }
                    let std = num(cols[4])?;
                    if std <= 0.0 {
                        return Err(Error::parse(ctx, lineno, "std must be positive"));
                    }
                    scales.push(Scale {
                        mean: num(cols[3])?,
                        std,
                    });
                }
                Family::Ss => return Err(Error::parse(ctx, lineno, "SS has no vocabulary rows")),
            }
        }
        if scales.len() != GF_WIDTH + SDP_WIDTH {
            return Err(Error::Format(
                "feature space is missing standardization rows".into(),
            ));
        }
        let mut vocab = |fam: Family| -> Result<BTreeMap<String, usize>> {
            let mut rows = bags.remove(&fam).unwrap_or_default();
            rows.sort();
            let mut map = BTreeMap::new();
            for (expected, (col, word)) in rows.into_iter().enumerate() {
                if col != expected || map.insert(word, col).is_some() {
                    return Err(Error::Format(format!("{} columns are not contiguous", fam)));
                }
            }
            Ok(map)
        };
        let (bw, bpw, bap) = (vocab(Family::Bw)?, vocab(Family::Bpw)?, vocab(Family::Bap)?);
        Ok(FeatureSpace::assemble(bw, bpw, bap, enabled, scales))
    }
}

fn numeric_name(k: usize) -> (Family, String) {
    if k < GF_WIDTH {
        (Family::Gf, GF_NAMES[k].to_string())
    } else if k < 2 * GF_WIDTH {
        (Family::Sdp, format!("tree_{}", GF_NAMES[k - GF_WIDTH]))
    } else {
        (
            Family::Sdp,
            format!("path_{}", GF_NAMES[(k - 2 * GF_WIDTH) % GF_WIDTH]),
        )
    }
}

/// Fits vocabularies and GF/SDP standardization on training data only.
pub fn fit_feature_space(train: &[Instance], enabled: &BTreeSet<Family>) -> Result<FeatureSpace> {
    if train.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot fit a feature space on an empty training set".into(),
        ));
    }
    let parts = train
        .iter()
        .map(instance_parts)
        .collect::<Result<Vec<_>>>()?;
    let (mut bw, mut bpw, mut bap) = (BTreeSet::new(), BTreeSet::new(), BTreeSet::new());
    for p in &parts {
        bw.extend(p.bw.iter().cloned());
        bpw.extend(p.bpw.iter().cloned());
        bap.extend(p.bap.iter().cloned());
    }
    let scales = (0..GF_WIDTH + SDP_WIDTH)
        .map(|k| {
            mean_std(parts.iter().map(move |p| {
                if k < GF_WIDTH {
                    p.gf[k]
                } else {
                    p.sdp[k - GF_WIDTH]
                }
            }))
        })
        .collect();
    Ok(FeatureSpace::assemble(
        columns(bw),
        columns(bpw),
        columns(bap),
        enabled.clone(),
        scales,
    ))
}
