//! Glue between the modules: classifier training with a held-out split,
//! persistence of either classifier kind, instance classification and
//! pair ranking.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::aggregate::{collect_evidence, rank, score_all, ConfRow, FChoice, PairScore};
use crate::config::{ClassifierKind, PipelineConfig};
use crate::corpus::Instance;
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::features::{fit_feature_space, FeatureSpace, FeatureVector};
use crate::metrics::{classification_metrics, ClassificationMetrics};
use crate::neural::{self, LstmClassifier};
use crate::svm::{train_smo, SvmModel};

const SVM_BUNDLE_MAGIC: &str = "locatednear-svm-bundle 1";

/// Feature space plus the SVM trained on it.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmClassifier {
    pub space: FeatureSpace,
    pub model: SvmModel,
}

impl SvmClassifier {
    pub fn features(&self, inst: &Instance, embeddings: &EmbeddingTable) -> Result<FeatureVector> {
        Ok(self
            .space
            .standardize(&self.space.featurize(inst, embeddings)?))
    }

    pub fn predict_conf(&self, inst: &Instance, embeddings: &EmbeddingTable) -> Result<f64> {
        Ok(self.model.predict_conf(&self.features(inst, embeddings)?))
    }

    /// A magic line, then the feature space and the model as
    /// length-prefixed sections.
    pub fn to_text(&self) -> String {
        let space = self.space.to_tsv();
        let model = self.model.to_text();
        format!(
            "{SVM_BUNDLE_MAGIC}\nfeatures {}\n{space}model {}\n{model}",
            space.len(),
            model.len()
        )
    }

    pub fn from_text(text: &str) -> Result<SvmClassifier> {
        let rest = text
            .strip_prefix(SVM_BUNDLE_MAGIC)
            .and_then(|r| r.strip_prefix('\n'))
            .ok_or_else(|| Error::Format("not an SVM model bundle".into()))?;
        let (space_text, rest) = section(rest, "features")?;
        let (model_text, rest) = section(rest, "model")?;
        if !rest.is_empty() {
            return Err(Error::Format("trailing data after SVM model".into()));
        }
        let space = FeatureSpace::read_tsv(space_text.as_bytes())?;
        let model = SvmModel::read_text(model_text.as_bytes())?;
        if let Some(d) = model.dim() {
            if d != space.total_dim() {
                return Err(Error::DimensionMismatch {
                    expected: space.total_dim(),
                    actual: d,
                });
            }
        }
        Ok(SvmClassifier { space, model })
    }
}

fn section<'a>(text: &'a str, name: &str) -> Result<(&'a str, &'a str)> {
    let (head, rest) = text
        .split_once('\n')
        .ok_or_else(|| Error::Format(format!("missing {name} section")))?;
    let len: usize = head
        .strip_prefix(name)
        .and_then(|h| h.strip_prefix(' '))
        .and_then(|n| n.parse().ok())
        .ok_or_else(|| Error::Format(format!("bad {name} section header")))?;
    if len > rest.len() || !rest.is_char_boundary(len) {
        return Err(Error::Format(format!("{name} section truncated")));
    }
    Ok(rest.split_at(len))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Classifier {
    Svm(SvmClassifier),
    Lstm(LstmClassifier),
}

impl Classifier {
    pub fn kind(&self) -> ClassifierKind {
        match self {
            Classifier::Svm(_) => ClassifierKind::Svm,
            Classifier::Lstm(_) => ClassifierKind::Lstm,
        }
    }

    pub fn predict_conf(&self, inst: &Instance, embeddings: &EmbeddingTable) -> Result<f64> {
        match self {
            Classifier::Svm(c) => c.predict_conf(inst, embeddings),
            Classifier::Lstm(c) => c.predict_conf(inst, embeddings),
        }
    }

    /// Confidences in input order.
    pub fn classify(
        &self,
        instances: &[Instance],
        embeddings: &EmbeddingTable,
    ) -> Result<Vec<f64>> {
        instances
            .par_iter()
            .map(|i| self.predict_conf(i, embeddings))
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        match self {
            Classifier::Svm(c) => c.to_text().into_bytes(),
            Classifier::Lstm(c) => c.to_bytes(),
        }
    }

    /// Detects the classifier kind from the leading bytes.
    pub fn from_bytes(bytes: &[u8]) -> Result<Classifier> {
        if bytes.starts_with(SVM_BUNDLE_MAGIC.as_bytes()) {
            let text = std::str::from_utf8(bytes)
                .map_err(|_| Error::Format("SVM model bundle is not UTF-8".into()))?;
            Ok(Classifier::Svm(SvmClassifier::from_text(text)?))
        } else {
            Ok(Classifier::Lstm(LstmClassifier::from_bytes(bytes)?))
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Classifier> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Classifier::from_bytes(&bytes)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub classifier: Classifier,
    pub train_metrics: ClassificationMetrics,
    /// Absent when the held-out split is empty.
    pub heldout_metrics: Option<ClassificationMetrics>,
    pub train_size: usize,
    pub heldout_size: usize,
    /// Per-epoch losses for the LSTM; empty for the SVM.
    pub loss_curve: Vec<f64>,
}

/// Seeded shuffle, then the last `round(n * fraction)` instances are held
/// out. At least one instance always stays in training.
pub fn split_heldout(
    instances: &[Instance],
    fraction: f64,
    seed: u64,
) -> (Vec<Instance>, Vec<Instance>) {
    let mut order: Vec<usize> = (0..instances.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let held = ((instances.len() as f64 * fraction).round() as usize)
        .min(instances.len().saturating_sub(1));
    let cut = instances.len() - held;
    let pick = |ix: &[usize]| ix.iter().map(|&i| instances[i].clone()).collect::<Vec<_>>();
    (pick(&order[..cut]), pick(&order[cut..]))
}

fn labels_of(instances: &[Instance]) -> Result<Vec<bool>> {
    instances
        .iter()
        .map(|i| {
            i.label
                .ok_or_else(|| Error::InvalidArgument("training instance without label".into()))
        })
        .collect()
}

pub fn evaluate(
    classifier: &Classifier,
    instances: &[Instance],
    embeddings: &EmbeddingTable,
) -> Result<ClassificationMetrics> {
    let labels = labels_of(instances)?;
    let preds: Vec<bool> = classifier
        .classify(instances, embeddings)?
        .into_iter()
        .map(|c| c > 0.5)
        .collect();
    classification_metrics(&preds, &labels)
}

pub fn train_svm(
    train: &[Instance],
    embeddings: &EmbeddingTable,
    config: &PipelineConfig,
) -> Result<SvmClassifier> {
    let labels = labels_of(train)?;
    let space = fit_feature_space(train, &config.features)?;
    let data = train
        .iter()
        .zip(labels)
        .map(|(i, y)| Ok((space.standardize(&space.featurize(i, embeddings)?), y)))
        .collect::<Result<Vec<_>>>()?;
    let outcome = train_smo(&data, &config.svm)?;
    Ok(SvmClassifier {
        space,
        model: outcome.model,
    })
}

/// Trains the configured classifier on a split of `labeled` and scores it
/// on both parts.
pub fn train(
    labeled: &[Instance],
    embeddings: &EmbeddingTable,
    config: &PipelineConfig,
) -> Result<TrainOutcome> {
    if labeled.is_empty() {
        return Err(Error::InvalidArgument("no labeled instances".into()));
    }
    let (train_set, heldout) = split_heldout(labeled, config.holdout, config.seed);
    let (classifier, loss_curve) = match config.classifier {
        ClassifierKind::Svm => (
            Classifier::Svm(train_svm(&train_set, embeddings, config)?),
            Vec::new(),
        ),
        ClassifierKind::Lstm => {
            let (clf, report) =
                neural::train_classifier(&train_set, config.variant, &config.lstm, embeddings)?;
            (Classifier::Lstm(clf), report.epoch_losses)
        }
    };
    let train_metrics = evaluate(&classifier, &train_set, embeddings)?;
    let heldout_metrics = if heldout.is_empty() {
        None
    } else {
        Some(evaluate(&classifier, &heldout, embeddings)?)
    };
    Ok(TrainOutcome {
        classifier,
        train_metrics,
        heldout_metrics,
        train_size: train_set.len(),
        heldout_size: heldout.len(),
        loss_curve,
    })
}

pub fn conf_rows(instances: &[Instance], confs: &[f64]) -> Vec<ConfRow> {
    instances
        .iter()
        .zip(confs)
        .map(|(i, &conf)| ConfRow {
            sentence_id: i.sentence.id().to_string(),
            e1: i.e1.clone(),
            e2: i.e2.clone(),
            conf,
        })
        .collect()
}

/// Pools confidences per pair, scores them with `f_choice` and ranks.
pub fn rank_pairs(rows: &[ConfRow], f_choice: FChoice) -> Result<Vec<PairScore>> {
    let evidence = collect_evidence(rows.iter().map(|r| (r.pair(), r.conf)))?;
    rank(score_all(evidence.values(), f_choice)?, None)
}
