//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Keys prefixed with
//! `svm.` and `lstm.` reach the respective model settings.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use crate::aggregate::{FChoice, DEFAULT_TRIPLE_THRESHOLD};
use crate::error::{Error, Result};
use crate::features::{format_families, parse_families, Family};
use crate::neural::NeuralConfig;
use crate::normalize::InputVariant;
use crate::svm::{KernelSpec, SmoParams};

/// Pairs must co-occur in more than this many sentences to be reported as
/// frequent by ingest.
pub const DEFAULT_COOCCURRENCE_THRESHOLD: usize = 10;
pub const DEFAULT_HOLDOUT: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClassifierKind {
    Svm,
    #[default]
    Lstm,
}

impl std::str::FromStr for ClassifierKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "svm" => Ok(ClassifierKind::Svm),
            "lstm" => Ok(ClassifierKind::Lstm),
            other => Err(Error::InvalidArgument(format!(
                "unknown classifier {other:?} (expected svm or lstm)"
            ))),
        }
    }
}

impl std::fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ClassifierKind::Svm => "svm",
            ClassifierKind::Lstm => "lstm",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub classifier: ClassifierKind,
    pub variant: InputVariant,
    pub features: BTreeSet<Family>,
    pub svm: SmoParams,
    pub lstm: NeuralConfig,
    pub f_choice: FChoice,
    pub triple_threshold: f64,
    pub cooccurrence_threshold: usize,
    /// Fraction of labeled data held out for evaluation after training.
    pub holdout: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            classifier: ClassifierKind::default(),
            variant: InputVariant::default(),
            features: Family::ALL.into_iter().collect(),
            svm: SmoParams::default(),
            lstm: NeuralConfig::default(),
            f_choice: FChoice::default(),
            triple_threshold: DEFAULT_TRIPLE_THRESHOLD,
            cooccurrence_threshold: DEFAULT_COOCCURRENCE_THRESHOLD,
            holdout: DEFAULT_HOLDOUT,
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("bad value {value:?} for {key}")))
}

impl PipelineConfig {
    /// Applies one setting. `seed` also seeds both models.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (key, value) = (key.trim(), value.trim());
        match key {
            "seed" => {
                self.seed = num(key, value)?;
                self.svm.seed = self.seed;
                self.lstm.seed = self.seed;
            }
            "classifier" => self.classifier = value.parse()?,
            "variant" => self.variant = value.parse()?,
            "features" => self.features = parse_families(value)?,
            "f_choice" => self.f_choice = value.parse()?,
            "threshold" => {
                let t: f64 = num(key, value)?;
                if !t.is_finite() {
                    return Err(Error::InvalidArgument("threshold must be finite".into()));
                }
                self.triple_threshold = t;
            }
            "cooccurrence_threshold" => self.cooccurrence_threshold = num(key, value)?,
            "holdout" => {
                let h: f64 = num(key, value)?;
                if !(0.0..1.0).contains(&h) {
                    return Err(Error::InvalidArgument("holdout must be in [0,1)".into()));
                }
                self.holdout = h;
            }
            "svm.c" => self.svm.c = num(key, value)?,
            "svm.kernel" => self.svm.kernel = value.parse::<KernelSpec>()?,
            "svm.tol" => self.svm.tol = num(key, value)?,
            "svm.max_passes" => self.svm.max_passes = num(key, value)?,
            "svm.gram_limit" => self.svm.gram_limit = num(key, value)?,
            "svm.seed" => self.svm.seed = num(key, value)?,
            _ => match key.strip_prefix("lstm.") {
                Some(k) => self.lstm.set(k, value)?,
                None => return Err(Error::InvalidArgument(format!("unknown setting {key:?}"))),
            },
        }
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse("config", i + 1, "expected key = value"))?;
            self.set(k, v)
                .map_err(|e| Error::parse("config", i + 1, e.to_string()))?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<PipelineConfig> {
        let mut c = PipelineConfig::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<PipelineConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        PipelineConfig::parse(&text)
    }

    /// Every setting, in a form [`PipelineConfig::parse`] reads back.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "classifier = {}", self.classifier);
        let _ = writeln!(out, "variant = {}", self.variant);
        let _ = writeln!(out, "features = {}", format_families(&self.features));
        let _ = writeln!(out, "f_choice = {}", self.f_choice);
        let _ = writeln!(out, "threshold = {}", self.triple_threshold);
        let _ = writeln!(
            out,
            "cooccurrence_threshold = {}",
            self.cooccurrence_threshold
        );
        let _ = writeln!(out, "holdout = {}", self.holdout);
        let _ = writeln!(out, "svm.c = {}", self.svm.c);
        let _ = writeln!(out, "svm.kernel = {}", self.svm.kernel);
        let _ = writeln!(out, "svm.tol = {}", self.svm.tol);
        let _ = writeln!(out, "svm.max_passes = {}", self.svm.max_passes);
        let _ = writeln!(out, "svm.gram_limit = {}", self.svm.gram_limit);
        let _ = writeln!(out, "svm.seed = {}", self.svm.seed);
        for (k, v) in self.lstm.entries() {
            let _ = writeln!(out, "lstm.{k} = {v}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = PipelineConfig::default();
        assert_eq!(PipelineConfig::parse(&c.to_text()).unwrap(), c);
        assert_eq!(PipelineConfig::parse("").unwrap(), c);
    }

    #[test]
    fn settings_apply() {
        let text = "# run\nseed = 7\nclassifier=svm\n\nfeatures = all,-GF\nsvm.kernel = rbf 0.5\n\
                    lstm.lstm_hidden = 32\nf_choice = f1\nthreshold = 3.5\n";
        let c = PipelineConfig::parse(text).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!((c.svm.seed, c.lstm.seed), (7, 7));
        assert_eq!(c.classifier, ClassifierKind::Svm);
        assert!(!c.features.contains(&Family::Gf));
        assert_eq!(c.features.len(), 5);
        assert_eq!(c.svm.kernel, KernelSpec::Rbf { gamma: 0.5 });
        assert_eq!(c.lstm.lstm_hidden, 32);
        assert_eq!(c.f_choice, FChoice::F1);
        assert_eq!(c.triple_threshold, 3.5);
        assert_eq!(PipelineConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn errors_name_the_line() {
        let err = PipelineConfig::parse("seed = 1\nbogus = 2\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        assert!(PipelineConfig::parse("seed\n").is_err());
        assert!(PipelineConfig::parse("f_choice = f9\n").is_err());
        assert!(PipelineConfig::parse("holdout = 1.0\n").is_err());
        assert!(PipelineConfig::parse("lstm.nope = 1\n").is_err());
    }
}
