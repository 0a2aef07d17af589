//! Pooling instance confidences into per-pair scores, ranking, and triple
//! export.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::io::BufRead;
use std::str::FromStr;

use crate::corpus::PairKey;
use crate::error::{Error, Result};

pub const INDICATOR_THRESHOLD: f64 = 0.5;
pub const DEFAULT_TRIPLE_THRESHOLD: f64 = 40.0;
pub const CONF_HEADER: &str = "sentence_id\te1\te2\tconf";
pub const SCORE_HEADER: &str = "e1\te2\tf_choice\tscore\tm";

/// Scoring functions over the m confidences of a pair.
///
/// * `F0`: m
/// * `F1`: sum of confidences
/// * `F2`: mean confidence
/// * `F3`: number of confidences above the indicator threshold
/// * `F4`: fraction of confidences above the indicator threshold
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub enum FChoice {
    F0,
    F1,
    F2,
    #[default]
    F3,
    F4,
}

impl FChoice {
    pub const ALL: [FChoice; 5] = [
        FChoice::F0,
        FChoice::F1,
        FChoice::F2,
        FChoice::F3,
        FChoice::F4,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FChoice::F0 => "f0",
            FChoice::F1 => "f1",
            FChoice::F2 => "f2",
            FChoice::F3 => "f3",
            FChoice::F4 => "f4",
        }
    }
}

impl fmt::Display for FChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FChoice::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::UnknownScoringFunction(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairEvidence {
    pub pair: PairKey,
    pub confs: Vec<f64>,
}

impl PairEvidence {
    pub fn m(&self) -> usize {
        self.confs.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairScore {
    pub pair: PairKey,
    pub f_choice: FChoice,
    pub score: f64,
    pub m: usize,
}

fn check_conf(conf: f64) -> Result<()> {
    if (0.0..=1.0).contains(&conf) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "confidence {conf} outside [0,1]"
        )))
    }
}

/// Groups confidences by unordered pair, keeping input order within a pair.
pub fn collect_evidence<I>(classified: I) -> Result<BTreeMap<PairKey, PairEvidence>>
where
    I: IntoIterator<Item = (PairKey, f64)>,
{
    let mut map: BTreeMap<PairKey, PairEvidence> = BTreeMap::new();
    for (pair, conf) in classified {
        check_conf(conf)?;
        map.entry(pair.clone())
            .or_insert_with(|| PairEvidence {
                pair,
                confs: Vec::new(),
            })
            .confs
            .push(conf);
    }
    Ok(map)
}

pub fn score(evidence: &PairEvidence, f_choice: FChoice) -> Result<PairScore> {
    score_with_threshold(evidence, f_choice, INDICATOR_THRESHOLD)
}

/// Like [`score`] with a custom indicator threshold (strict `conf > t`).
pub fn score_with_threshold(
    evidence: &PairEvidence,
    f_choice: FChoice,
    threshold: f64,
) -> Result<PairScore> {
    let m = evidence.m();
    if m == 0 {
        return Err(Error::InvalidArgument(format!(
            "pair {} has no evidence",
            evidence.pair
        )));
    }
    let sum = || evidence.confs.iter().sum::<f64>();
    let hits = || evidence.confs.iter().filter(|&&c| c > threshold).count() as f64;
    let value = match f_choice {
        FChoice::F0 => m as f64,
        FChoice::F1 => sum(),
        FChoice::F2 => sum() / m as f64,
        FChoice::F3 => hits(),
        FChoice::F4 => hits() / m as f64,
    };
    Ok(PairScore {
        pair: evidence.pair.clone(),
        f_choice,
        score: value,
        m,
    })
}

pub fn score_all<'a, I>(evidence: I, f_choice: FChoice) -> Result<Vec<PairScore>>
where
    I: IntoIterator<Item = &'a PairEvidence>,
{
    evidence.into_iter().map(|e| score(e, f_choice)).collect()
}

/// Sorts by descending score, ties by pair, and keeps the top `k`.
pub fn rank(mut scores: Vec<PairScore>, k: Option<usize>) -> Result<Vec<PairScore>> {
    if let Some(first) = scores.first() {
        let f = first.f_choice;
        if let Some(other) = scores.iter().find(|s| s.f_choice != f) {
            return Err(Error::InvalidArgument(format!(
                "cannot rank mixed scoring functions {} and {}",
                f, other.f_choice
            )));
        }
    }
    if let Some(s) = scores.iter().find(|s| s.score.is_nan()) {
        return Err(Error::NonFinite(format!("score of {}", s.pair)));
    }
    scores.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.pair.cmp(&b.pair))
    });
    if let Some(k) = k {
        scores.truncate(k);
    }
    Ok(scores)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Triple {
    pub head: String,
    pub tail: String,
    pub score: f64,
}

pub const RELATION: &str = "LocatedNear";

/// Pairs whose f3 score reaches `threshold`, in rank order.
pub fn extract_triples(scores: &[PairScore], threshold: f64) -> Result<Vec<Triple>> {
    if let Some(s) = scores.iter().find(|s| s.f_choice != FChoice::F3) {
        return Err(Error::InvalidArgument(format!(
            "triple extraction expects f3 scores, got {}",
            s.f_choice
        )));
    }
    let ranked = rank(scores.to_vec(), None)?;
    Ok(ranked
        .into_iter()
        .filter(|s| s.score >= threshold)
        .map(|s| Triple {
            head: s.pair.first().to_string(),
            tail: s.pair.second().to_string(),
            score: s.score,
        })
        .collect())
}

pub fn write_scores(scores: &[PairScore]) -> String {
    let mut out = String::from(SCORE_HEADER);
    out.push('\n');
    for s in scores {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            s.pair.first(),
            s.pair.second(),
            s.f_choice,
            s.score,
            s.m
        );
    }
    out
}

pub fn read_scores<R: BufRead>(reader: R) -> Result<Vec<PairScore>> {
    let mut out = Vec::new();
    for (lineno, line) in tsv_lines(reader, "scores", SCORE_HEADER)? {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 5 {
            return Err(Error::parse("scores", lineno, "expected 5 columns"));
        }
        let score: f64 = cols[3]
            .parse()
            .map_err(|_| Error::parse("scores", lineno, format!("invalid score {:?}", cols[3])))?;
        let m: usize = cols[4]
            .parse()
            .map_err(|_| Error::parse("scores", lineno, format!("invalid count {:?}", cols[4])))?;
        out.push(PairScore {
            pair: PairKey::new(cols[0], cols[1]),
            f_choice: cols[2].parse()?,
            score,
            m,
        });
    }
    Ok(out)
}

fn concept(lemma: &str) -> String {
    lemma.replace(' ', "_")
}

/// ConceptNet-style lines: `/r/LocatedNear  /c/en/<e1>  /c/en/<e2>  score`.
pub fn write_conceptnet(triples: &[Triple]) -> String {
    let mut out = String::new();
    for t in triples {
        let _ = writeln!(
            out,
            "/r/{}\t/c/en/{}\t/c/en/{}\t{}",
            RELATION,
            concept(&t.head),
            concept(&t.tail),
            t.score
        );
    }
    out
}

/// One classified instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfRow {
    pub sentence_id: String,
    pub e1: String,
    pub e2: String,
    pub conf: f64,
}

impl ConfRow {
    pub fn pair(&self) -> PairKey {
        PairKey::new(self.e1.as_str(), self.e2.as_str())
    }
}

pub fn write_confs(rows: &[ConfRow]) -> String {
    let mut out = String::from(CONF_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{}\t{}\t{}\t{}", r.sentence_id, r.e1, r.e2, r.conf);
    }
    out
}

pub fn read_confs<R: BufRead>(reader: R) -> Result<Vec<ConfRow>> {
    let mut out = Vec::new();
    for (lineno, line) in tsv_lines(reader, "confidences", CONF_HEADER)? {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(Error::parse("confidences", lineno, "expected 4 columns"));
        }
        let conf: f64 = cols[3].parse().map_err(|_| {
            Error::parse(
                "confidences",
                lineno,
                format!("invalid confidence {:?}", cols[3]),
            )
        })?;
        check_conf(conf).map_err(|e| Error::parse("confidences", lineno, e.to_string()))?;
        out.push(ConfRow {
            sentence_id: cols[0].to_string(),
            e1: cols[1].to_string(),
            e2: cols[2].to_string(),
            conf,
        });
    }
    Ok(out)
}

/// Nonblank data lines with their 1-based numbers; the header row is
/// required.
pub(crate) fn tsv_lines<R: BufRead>(
    reader: R,
    context: &'static str,
    header: &str,
) -> Result<Vec<(usize, String)>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::parse(context, lineno, e.to_string()))?;
        let line = line.strip_suffix('\r').unwrap_or(&line).to_string();
        if lineno == 1 {
            if line != header {
                return Err(Error::parse(
                    context,
                    1,
                    format!("expected header {header:?}"),
                ));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        out.push((lineno, line));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ev(a: &str, b: &str, confs: &[f64]) -> PairEvidence {
        PairEvidence {
            pair: PairKey::new(a, b),
            confs: confs.to_vec(),
        }
    }

    fn scored(a: &str, s: f64) -> PairScore {
        PairScore {
            pair: PairKey::new(a, "z"),
            f_choice: FChoice::F3,
            score: s,
            m: 100,
        }
    }

    #[test]
    fn worked_example() {
        let e = ev("a", "b", &[0.9, 0.2, 0.7]);
        let got: Vec<f64> = FChoice::ALL
            .iter()
            .map(|&f| score(&e, f).unwrap().score)
            .collect();
        assert_eq!(got[0], 3.0);
        assert!((got[1] - 1.8).abs() < 1e-12);
        assert!((got[2] - 0.6).abs() < 1e-12);
        assert_eq!(got[3], 2.0);
        assert_eq!(got[4], 2.0 / 3.0);
    }

    #[test]
    fn indicator_is_strict() {
        let e = ev("a", "b", &[0.5, 0.5, 0.5]);
        assert_eq!(score(&e, FChoice::F3).unwrap().score, 0.0);
        assert_eq!(score(&e, FChoice::F4).unwrap().score, 0.0);
    }

    #[test]
    fn identities_on_random_evidence() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..10_000 {
            let m = rng.gen_range(1..40);
            let confs: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..1.0)).collect();
            let e = ev("x", "y", &confs);
            let s = |f| score(&e, f).unwrap().score;
            let (f0, f1, f2, f3, f4) = (
                s(FChoice::F0),
                s(FChoice::F1),
                s(FChoice::F2),
                s(FChoice::F3),
                s(FChoice::F4),
            );
            assert_eq!(f2, f1 / m as f64);
            assert_eq!(f4, f3 / m as f64);
            assert!(f0 >= f3 && f3 >= 0.0);
            assert!(f1 <= f0);
            assert!((0.0..=1.0).contains(&f2) && (0.0..=1.0).contains(&f4));
        }
    }

    #[test]
    fn adding_a_confident_instance_never_lowers_f1_or_f3() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..500 {
            let confs: Vec<f64> = (0..rng.gen_range(1..10)).map(|_| rng.gen()).collect();
            let mut more = confs.clone();
            more.push(rng.gen_range(0.500001..1.0));
            for f in [FChoice::F1, FChoice::F3] {
                let before = score(&ev("a", "b", &confs), f).unwrap().score;
                let after = score(&ev("a", "b", &more), f).unwrap().score;
                assert!(after >= before);
            }
        }
    }

    #[test]
    fn f2_ranks_like_f1_at_fixed_m() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let evidence: Vec<PairEvidence> = (0..50)
            .map(|i| {
                let confs: Vec<f64> = (0..7).map(|_| rng.gen()).collect();
                ev(&format!("p{i:02}"), "q", &confs)
            })
            .collect();
        let order = |f| -> Vec<PairKey> {
            rank(score_all(&evidence, f).unwrap(), None)
                .unwrap()
                .into_iter()
                .map(|s| s.pair)
                .collect()
        };
        assert_eq!(order(FChoice::F1), order(FChoice::F2));
    }

    #[test]
    fn evidence_is_symmetric() {
        let map = collect_evidence(vec![
            (PairKey::new("dog", "cat"), 0.9),
            (PairKey::new("cat", "dog"), 0.2),
        ])
        .unwrap();
        assert_eq!(map.len(), 1);
        let e = &map[&PairKey::new("cat", "dog")];
        assert_eq!(e.confs, vec![0.9, 0.2]);
        assert!(collect_evidence(Vec::new()).unwrap().is_empty());

        let many =
            (0..3).flat_map(|p| (0..10).map(move |_| (PairKey::new(format!("o{p}"), "x"), 0.3)));
        let map = collect_evidence(many).unwrap();
        assert_eq!(map.len(), 3);
        assert!(map.values().all(|e| e.m() == 10));

        assert!(collect_evidence(vec![(PairKey::new("a", "b"), 1.5)]).is_err());
        assert!(collect_evidence(vec![(PairKey::new("a", "b"), f64::NAN)]).is_err());
    }

    #[test]
    fn rank_order_and_ties() {
        let scores = vec![scored("a", 2.0), scored("b", 5.0), scored("c", 2.0)];
        let names = |v: Vec<PairScore>| {
            v.into_iter()
                .map(|s| s.pair.first().to_string())
                .collect::<Vec<_>>()
        };
        assert_eq!(names(rank(scores.clone(), None).unwrap()), ["b", "a", "c"]);
        assert_eq!(names(rank(scores.clone(), Some(1)).unwrap()), ["b"]);
        let mut rev = scores.clone();
        rev.reverse();
        assert_eq!(
            rank(rev, None).unwrap(),
            rank(scores.clone(), None).unwrap()
        );

        let mut mixed = scores;
        mixed[1].f_choice = FChoice::F1;
        assert!(rank(mixed, None).is_err());
    }

    #[test]
    fn triples_use_inclusive_threshold() {
        let scores = vec![scored("a", 39.9), scored("b", 40.0), scored("c", 41.5)];
        let t = extract_triples(&scores, DEFAULT_TRIPLE_THRESHOLD).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t[0].head, "c");
        assert_eq!(extract_triples(&scores, 0.0).unwrap().len(), 3);
        let mut wrong = scores;
        wrong[0].f_choice = FChoice::F1;
        assert!(extract_triples(&wrong, 0.0).is_err());
    }

    #[test]
    fn f_choice_parsing() {
        assert_eq!("f3".parse::<FChoice>().unwrap(), FChoice::F3);
        assert_eq!("F0".parse::<FChoice>().unwrap(), FChoice::F0);
        assert!(matches!(
            "f5".parse::<FChoice>(),
            Err(Error::UnknownScoringFunction(_))
        ));
        assert_eq!(FChoice::default(), FChoice::F3);
    }

    #[test]
    fn file_formats_round_trip() {
        let scores = rank(
            score_all(
                &[ev("garden", "dog", &[0.9, 0.6]), ev("cup", "table", &[0.1])],
                FChoice::F1,
            )
            .unwrap(),
            None,
        )
        .unwrap();
        let text = write_scores(&scores);
        assert!(text.starts_with("e1\te2\tf_choice\tscore\tm\ndog\tgarden\tf1\t1.5\t2\n"));
        assert_eq!(read_scores(text.as_bytes()).unwrap(), scores);

        let triples = vec![Triple {
            head: "dog".into(),
            tail: "garden".into(),
            score: 41.0,
        }];
        assert_eq!(
            write_conceptnet(&triples),
            "/r/LocatedNear\t/c/en/dog\t/c/en/garden\t41\n"
        );

        let rows = vec![ConfRow {
            sentence_id: "s1".into(),
            e1: "king".into(),
            e2: "garden".into(),
            conf: 0.25,
        }];
        let text = write_confs(&rows);
        assert_eq!(text, "sentence_id\te1\te2\tconf\ns1\tking\tgarden\t0.25\n");
        assert_eq!(read_confs(text.as_bytes()).unwrap(), rows);
        assert!(read_confs("nope\n".as_bytes()).is_err());
        assert!(read_confs("sentence_id\te1\te2\tconf\ns\ta\tb\t2\n".as_bytes()).is_err());
        assert!(read_confs("sentence_id\te1\te2\tconf\ns\ta\tb\n".as_bytes()).is_err());
    }
}
