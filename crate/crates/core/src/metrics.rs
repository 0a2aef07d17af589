//! Classification, ranking and agreement metrics, plus report tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::BufRead;

use crate::aggregate::{tsv_lines, PairScore};
use crate::corpus::PairKey;
use crate::error::{Error, Result};

/// Cutoffs of the ranking report.
pub const REPORT_CUTOFFS: [usize; 4] = [50, 100, 200, 300];
pub const GOLD_HEADER: &str = "e1\te2\tlabel";

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    /// No positive predictions; precision reported as 0.
    pub precision_undefined: bool,
    /// No positive labels; recall reported as 0.
    pub recall_undefined: bool,
}

fn ratio(num: usize, den: usize) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

pub fn classification_metrics(preds: &[bool], labels: &[bool]) -> Result<ClassificationMetrics> {
    if preds.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            actual: preds.len(),
        });
    }
    if preds.is_empty() {
        return Err(Error::InvalidArgument("no predictions to score".into()));
    }
    let mut m = ClassificationMetrics::default();
    for (&p, &y) in preds.iter().zip(labels) {
        match (p, y) {
            (true, true) => m.tp += 1,
            (true, false) => m.fp += 1,
            (false, false) => m.tn += 1,
            (false, true) => m.fn_ += 1,
        }
    }
    m.accuracy = (m.tp + m.tn) as f64 / preds.len() as f64;
    (m.precision, m.precision_undefined) = ratio(m.tp, m.tp + m.fp);
    (m.recall, m.recall_undefined) = ratio(m.tp, m.tp + m.fn_);
    m.f1 = if m.precision + m.recall > 0.0 {
        2.0 * m.precision * m.recall / (m.precision + m.recall)
    } else {
        0.0
    };
    Ok(m)
}

/// The "Majority" row: every instance predicted positive.
pub fn majority_baseline(labels: &[bool]) -> Result<ClassificationMetrics> {
    classification_metrics(&vec![true; labels.len()], labels)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AveragePrecision {
    pub value: f64,
    /// The ranking held no relevant item; `value` is 0.
    pub no_relevant: bool,
}

/// AP with R = number of relevant items in the ranking.
pub fn average_precision(ranked: &[bool]) -> Result<AveragePrecision> {
    let r = ranked.iter().filter(|&&x| x).count();
    average_precision_with_total(ranked, r)
}

/// AP normalized by `total_relevant`, which may exceed the relevant items
/// present in the ranking (relevant items never retrieved).
pub fn average_precision_with_total(
    ranked: &[bool],
    total_relevant: usize,
) -> Result<AveragePrecision> {
    if ranked.is_empty() {
        return Err(Error::InvalidArgument("empty ranking".into()));
    }
    let present = ranked.iter().filter(|&&x| x).count();
    if total_relevant < present {
        return Err(Error::InvalidArgument(format!(
            "total relevant {total_relevant} below the {present} relevant items ranked"
        )));
    }
    if total_relevant == 0 {
        return Ok(AveragePrecision {
            value: 0.0,
            no_relevant: true,
        });
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &rel) in ranked.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Ok(AveragePrecision {
        value: sum / total_relevant as f64,
        no_relevant: false,
    })
}

pub fn mean_average_precision(rankings: &[Vec<bool>]) -> Result<f64> {
    if rankings.is_empty() {
        return Err(Error::InvalidArgument("no rankings".into()));
    }
    let mut sum = 0.0;
    for r in rankings {
        sum += average_precision(r)?.value;
    }
    Ok(sum / rankings.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrecisionAtK {
    pub value: f64,
    /// Fewer than k items were ranked; the missing slots count as misses.
    pub truncated: bool,
}

pub fn precision_at_k(ranked: &[bool], k: usize) -> Result<PrecisionAtK> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let hits = ranked.iter().take(k).filter(|&&x| x).count();
    Ok(PrecisionAtK {
        value: hits as f64 / k as f64,
        truncated: ranked.len() < k,
    })
}

pub fn cohens_kappa(a: &[bool], b: &[bool]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::InvalidArgument("no labels".into()));
    }
    let n = a.len() as f64;
    let agree = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64;
    let pa = a.iter().filter(|&&x| x).count() as f64 / n;
    let pb = b.iter().filter(|&&x| x).count() as f64 / n;
    let po = agree / n;
    let pe = pa * pb + (1.0 - pa) * (1.0 - pb);
    if pe >= 1.0 {
        // both raters constant and equal
        return Ok(1.0);
    }
    Ok((po - pe) / (1.0 - pe))
}

/// Mean of Cohen's kappa over all rater pairs.
pub fn mean_pairwise_kappa(raters: &[Vec<bool>]) -> Result<f64> {
    if raters.len() < 2 {
        return Err(Error::InvalidArgument("need at least two raters".into()));
    }
    let mut sum = 0.0;
    let mut pairs = 0;
    for i in 0..raters.len() {
        for j in i + 1..raters.len() {
            sum += cohens_kappa(&raters[i], &raters[j])?;
            pairs += 1;
        }
    }
    Ok(sum / pairs as f64)
}

/// Gold relevance judgements per pair.
pub fn read_gold_pairs<R: BufRead>(reader: R) -> Result<BTreeMap<PairKey, bool>> {
    let mut out = BTreeMap::new();
    for (lineno, line) in tsv_lines(reader, "gold pairs", GOLD_HEADER)? {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(Error::parse("gold pairs", lineno, "expected 3 columns"));
        }
        let label = match cols[2] {
            "1" => true,
            "0" => false,
            other => {
                return Err(Error::parse(
                    "gold pairs",
                    lineno,
                    format!("label must be 0 or 1, got {other:?}"),
                ))
            }
        };
        out.insert(PairKey::new(cols[0], cols[1]), label);
    }
    Ok(out)
}

pub fn write_gold_pairs(gold: &BTreeMap<PairKey, bool>) -> String {
    let mut out = String::from(GOLD_HEADER);
    out.push('\n');
    for (k, &v) in gold {
        let _ = writeln!(out, "{}\t{}\t{}", k.first(), k.second(), u8::from(v));
    }
    out
}

/// Ranking quality against gold pair judgements. Unjudged pairs count as
/// irrelevant; AP is normalized by every relevant gold pair.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingMetrics {
    pub map: f64,
    pub precision_at: Vec<(usize, PrecisionAtK)>,
    pub ranked: usize,
    pub total_relevant: usize,
    pub no_relevant: bool,
}

pub fn ranking_metrics(
    ranked: &[PairScore],
    gold: &BTreeMap<PairKey, bool>,
    cutoffs: &[usize],
) -> Result<RankingMetrics> {
    let rel: Vec<bool> = ranked
        .iter()
        .map(|s| gold.get(&s.pair).copied().unwrap_or(false))
        .collect();
    let total = gold.values().filter(|&&v| v).count();
    let ap = average_precision_with_total(&rel, total)?;
    let precision_at = cutoffs
        .iter()
        .map(|&k| Ok((k, precision_at_k(&rel, k)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(RankingMetrics {
        map: ap.value,
        precision_at,
        ranked: rel.len(),
        total_relevant: total,
        no_relevant: ap.no_relevant,
    })
}

fn render_aligned(header: &[String], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let line = |cells: &[String], out: &mut String| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, &w))| {
                if i == 0 {
                    format!("{c:<w$}")
                } else {
                    format!("{c:>w$}")
                }
            })
            .collect();
        out.push_str(parts.join("  ").trim_end());
        out.push('\n');
    };
    line(header, &mut out);
    let total: usize = widths.iter().sum::<usize>() + 2 * (widths.len().saturating_sub(1));
    out.push_str(&"-".repeat(total));
    out.push('\n');
    for r in rows {
        line(r, &mut out);
    }
    out
}

fn render_tsv(header: &[String], rows: &[Vec<String>]) -> String {
    let mut out = header.join("\t");
    out.push('\n');
    for r in rows {
        out.push_str(&r.join("\t"));
        out.push('\n');
    }
    out
}

/// Rows of (model name, metrics) in the accuracy/precision/recall/F1 layout.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClassificationReport {
    pub rows: Vec<(String, ClassificationMetrics)>,
}

impl ClassificationReport {
    fn table(&self) -> (Vec<String>, Vec<Vec<String>>) {
        let header = ["model", "accuracy", "precision", "recall", "f1"]
            .map(String::from)
            .to_vec();
        let rows = self
            .rows
            .iter()
            .map(|(name, m)| {
                vec![
                    name.clone(),
                    format!("{:.3}", m.accuracy),
                    format!("{:.3}", m.precision),
                    format!("{:.3}", m.recall),
                    format!("{:.3}", m.f1),
                ]
            })
            .collect();
        (header, rows)
    }

    pub fn to_tsv(&self) -> String {
        let (h, r) = self.table();
        render_tsv(&h, &r)
    }

    pub fn to_text(&self) -> String {
        let (h, r) = self.table();
        render_aligned(&h, &r)
    }
}

/// Rows of (scoring function, metrics) in the MAP and P@K layout.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RankingReport {
    pub rows: Vec<(String, RankingMetrics)>,
}

impl RankingReport {
    fn table(&self) -> (Vec<String>, Vec<Vec<String>>) {
        let mut header = vec!["f".to_string(), "MAP".to_string()];
        let cutoffs: Vec<usize> = self
            .rows
            .first()
            .map(|(_, m)| m.precision_at.iter().map(|(k, _)| *k).collect())
            .unwrap_or_else(|| REPORT_CUTOFFS.to_vec());
        header.extend(cutoffs.iter().map(|k| format!("P@{k}")));
        let rows = self
            .rows
            .iter()
            .map(|(name, m)| {
                let mut r = vec![name.clone(), format!("{:.3}", m.map)];
                r.extend(
                    m.precision_at
                        .iter()
                        .map(|(_, p)| format!("{:.3}", p.value)),
                );
                r
            })
            .collect();
        (header, rows)
    }

    pub fn to_tsv(&self) -> String {
        let (h, r) = self.table();
        render_tsv(&h, &r)
    }

    pub fn to_text(&self) -> String {
        let (h, r) = self.table();
        render_aligned(&h, &r)
    }
}
