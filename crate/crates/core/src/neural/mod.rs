//! LSTM relation classifier with hand-written backpropagation through time.
//!
//! Each step consumes a token embedding concatenated with two position
//! embeddings (distance to E1 and to E2). The final hidden state is joined
//! with a tanh dense projection of the two objects' pretrained vectors and
//! fed to a sigmoid output unit. Training minimizes binary cross-entropy
//! with RMSProp.

mod checkpoint;
mod model;
mod params;

pub use checkpoint::{encode_instance, LstmClassifier};
pub use model::{
    bce_loss, predict_batch, sigmoid, train, EncodedInstance, ForwardCache, Mode, NeuralConfig,
    NeuralModel, TrainReport, FORGET_BIAS, INIT_SCALE,
};
pub use params::{Params, Shape, Tensor, GROUP_NAMES};

use crate::corpus::Instance;
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::normalize::{token_stream, InputVariant, TokenIndex, MAX_SEQUENCE_LEN};

/// Builds a token index over the training streams, initializes a network
/// and trains it. Instances must carry labels.
pub fn train_classifier(
    train_set: &[Instance],
    variant: InputVariant,
    config: &NeuralConfig,
    embeddings: &EmbeddingTable,
) -> Result<(LstmClassifier, TrainReport)> {
    let seqs = train_set
        .iter()
        .map(|i| Ok(token_stream(i, variant)?.truncated(MAX_SEQUENCE_LEN)))
        .collect::<Result<Vec<_>>>()?;
    let index = TokenIndex::build(&seqs);
    let model = NeuralModel::new(config.clone(), index.table_size(), 2 * embeddings.dim())?;
    let mut clf = LstmClassifier {
        model,
        index,
        variant,
        embedding_dim: embeddings.dim(),
    };
    let data = train_set
        .iter()
        .map(|inst| {
            let label = inst
                .label
                .ok_or_else(|| Error::InvalidArgument("training instance without label".into()))?;
            Ok((clf.encode(inst, embeddings)?, label))
        })
        .collect::<Result<Vec<_>>>()?;
    let report = train(&mut clf.model, &data)?;
    clf.quantize();
    // checkpoints carry no optimizer state
    clf.model.acc = clf.model.params.zeros_like();
    Ok((clf, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::normalize::tests::king_sentence;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_config(rng: &mut ChaCha8Rng) -> NeuralConfig {
        NeuralConfig {
            token_emb_dim: rng.gen_range(1..=8),
            pos_emb_dim: rng.gen_range(1..=8),
            max_distance: 3,
            lstm_hidden: rng.gen_range(1..=8),
            pair_dense_dim: rng.gen_range(1..=8),
            dropout_rate: 0.3,
            ..NeuralConfig::default()
        }
    }

    fn random_input(rng: &mut ChaCha8Rng, model: &NeuralModel, len: usize) -> EncodedInstance {
        let s = model.shape();
        EncodedInstance {
            ids: (0..len).map(|_| rng.gen_range(0..s.vocab)).collect(),
            pos1: (0..len).map(|_| rng.gen_range(0..s.positions)).collect(),
            pos2: (0..len).map(|_| rng.gen_range(0..s.positions)).collect(),
            pair: (0..s.pair_input)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect(),
        }
    }

    fn loss_at(model: &NeuralModel, enc: &EncodedInstance, mode: Mode, label: bool) -> f64 {
        // unclamped, so the finite differences see the true loss surface
        let p = model.forward(enc, mode).unwrap().prob;
        if label {
            -p.ln()
        } else {
            -(1.0 - p).ln()
        }
    }

    #[test]
    fn zero_model_predicts_one_half() {
        let model = NeuralModel::zeroed(NeuralConfig::default(), 5, 6).unwrap();
        let enc = EncodedInstance {
            ids: vec![1, 2, 3],
            pos1: vec![0, 4, 9],
            pos2: vec![3, 3, 3],
            pair: vec![0.3; 6],
        };
        assert_eq!(model.predict_conf(&enc).unwrap(), 0.5);
        assert_eq!(model.forward(&enc, Mode::Train(9)).unwrap().prob, 0.5);
    }

    #[test]
    fn bce_closed_forms() {
        assert!((bce_loss(0.5, true) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((bce_loss(0.5, false) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((bce_loss(0.9, false) + 0.1f64.ln()).abs() < 1e-12);
        assert!(bce_loss(1.0 - 1e-12, true) < 1e-6);
        assert!(bce_loss(0.0, false) < 1e-6);
        // clamping keeps the worst case finite
        assert!((bce_loss(0.0, true) - (-(1e-7f64).ln())).abs() < 1e-9);
    }

    #[test]
    fn rmsprop_closed_forms() {
        let mut model = NeuralModel::zeroed(NeuralConfig::default(), 3, 2).unwrap();
        let mut g = model.params.zeros_like();
        g.out_b.data[0] = 1.0;
        model.rmsprop_step(&g).unwrap();
        let expected = -0.001 / (0.1f64 + 1e-8).sqrt();
        assert!((model.params.out_b.data[0] - expected).abs() < 1e-12);
        assert!((model.params.out_b.data[0] + 0.0031623).abs() < 1e-7);
        // untouched parameters stay put
        assert!(model.params.out_w.data.iter().all(|&v| v == 0.0));

        // repeated identical gradient: step size approaches lr
        let mut last = model.params.out_b.data[0];
        let mut step = 0.0;
        for _ in 0..300 {
            model.rmsprop_step(&g).unwrap();
            step = last - model.params.out_b.data[0];
            last = model.params.out_b.data[0];
        }
        assert!((step - 0.001).abs() < 1e-9, "step {step}");
    }

    #[test]
    fn non_finite_update_is_reported() {
        let mut model = NeuralModel::zeroed(NeuralConfig::default(), 3, 2).unwrap();
        let mut g = model.params.zeros_like();
        g.pair_b.data[0] = f64::NAN;
        match model.rmsprop_step(&g) {
            Err(Error::NonFinite(name)) => assert_eq!(name, "pair_b"),
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn gradients_match_central_differences() {
        let h = 1e-5;
        let mut worst = 0.0f64;
        for seed in 0..50u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let cfg = tiny_config(&mut rng);
            let vocab = rng.gen_range(2..=8);
            let pair_input = rng.gen_range(1..=8);
            let mut model = NeuralModel::zeroed(cfg, vocab, pair_input).unwrap();
            for (_, t) in model.params.groups_mut() {
                t.fill_uniform(&mut rng, 0.5);
            }
            let len = rng.gen_range(1..=6);
            let enc = random_input(&mut rng, &model, len);
            let label = rng.gen_bool(0.5);
            let mode = Mode::Train(rng.gen());

            let cache = model.forward(&enc, mode).unwrap();
            let grads = model.backward(&cache, label);

            for gi in 0..GROUP_NAMES.len() {
                let n = model.params.groups()[gi].1.data.len();
                for k in 0..n {
                    let orig = model.params.groups()[gi].1.data[k];
                    model.params.groups_mut()[gi].1.data[k] = orig + h;
                    let up = loss_at(&model, &enc, mode, label);
                    model.params.groups_mut()[gi].1.data[k] = orig - h;
                    let down = loss_at(&model, &enc, mode, label);
                    model.params.groups_mut()[gi].1.data[k] = orig;
                    let numeric = (up - down) / (2.0 * h);
                    let analytic = grads.groups()[gi].1.data[k];
                    let denom = analytic.abs().max(numeric.abs()).max(1e-6);
                    let rel = (analytic - numeric).abs() / denom;
                    assert!(
                        rel < 1e-4,
                        "seed {seed} group {} index {k}: analytic {analytic} numeric {numeric}",
                        GROUP_NAMES[gi]
                    );
                    worst = worst.max(rel);
                }
            }
        }
        assert!(worst < 1e-4);
    }

    #[test]
    fn untouched_rows_and_output_bias_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = NeuralConfig {
            token_emb_dim: 4,
            pos_emb_dim: 3,
            lstm_hidden: 5,
            pair_dense_dim: 4,
            max_distance: 4,
            ..NeuralConfig::default()
        };
        let model = NeuralModel::new(cfg, 10, 6).unwrap();
        let enc = EncodedInstance {
            ids: vec![2, 5, 2],
            pos1: vec![3, 4, 5],
            pos2: vec![1, 2, 3],
            pair: (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        };
        for label in [false, true] {
            let cache = model.forward(&enc, Mode::Infer).unwrap();
            let g = model.backward(&cache, label);
            let y = if label { 1.0 } else { 0.0 };
            assert!((g.out_b.data[0] - (cache.prob - y)).abs() < 1e-15);
            for r in 0..10 {
                let touched = r == 2 || r == 5;
                let nonzero = g.tok_emb.row(r).iter().any(|&v| v != 0.0);
                assert_eq!(nonzero, touched, "token row {r}");
            }
            for r in 0..model.shape().positions {
                assert_eq!(
                    g.pos_e1.row(r).iter().any(|&v| v != 0.0),
                    (3..=5).contains(&r)
                );
                assert_eq!(
                    g.pos_e2.row(r).iter().any(|&v| v != 0.0),
                    (1..=3).contains(&r)
                );
            }
        }
    }

    #[test]
    fn forward_contracts() {
        let model = NeuralModel::new(NeuralConfig::default(), 6, 4).unwrap();
        let single = EncodedInstance {
            ids: vec![3],
            pos1: vec![31],
            pos2: vec![30],
            pair: vec![0.1, -0.2, 0.3, 0.4],
        };
        let repeated = EncodedInstance {
            ids: vec![3; 5],
            pos1: vec![31; 5],
            pos2: vec![30; 5],
            pair: single.pair.clone(),
        };
        for enc in [&single, &repeated] {
            let a = model.predict_conf(enc).unwrap();
            let b = model.predict_conf(enc).unwrap();
            assert_eq!(a, b);
            assert!(a > 0.0 && a < 1.0);
            // a training pass in between does not disturb inference
            model.forward(enc, Mode::Train(77)).unwrap();
            assert_eq!(model.predict_conf(enc).unwrap(), a);
        }

        let mut bad = single.clone();
        bad.ids[0] = 6;
        assert!(model.forward(&bad, Mode::Infer).is_err());
        let mut bad = single.clone();
        bad.pos2[0] = 62;
        assert!(model.forward(&bad, Mode::Infer).is_err());
        let mut bad = single.clone();
        bad.pair.pop();
        assert!(model.forward(&bad, Mode::Infer).is_err());
        let empty = EncodedInstance {
            ids: vec![],
            pos1: vec![],
            pos2: vec![],
            pair: single.pair.clone(),
        };
        assert!(model.forward(&empty, Mode::Infer).is_err());
    }

    #[test]
    fn position_rows() {
        let cfg = NeuralConfig::default();
        assert_eq!(cfg.position_rows(), 62);
        assert_eq!(cfg.position_index(0), 31);
        assert_eq!(cfg.position_index(-30), 1);
        assert_eq!(cfg.position_index(-500), 1);
        assert_eq!(cfg.position_index(30), 61);
        assert_eq!(cfg.position_index(31), 61);
    }

    #[test]
    fn config_validation() {
        assert!(NeuralConfig::default().validate().is_ok());
        let bad = [
            NeuralConfig {
                dropout_rate: 1.0,
                ..NeuralConfig::default()
            },
            NeuralConfig {
                dropout_rate: -0.1,
                ..NeuralConfig::default()
            },
            NeuralConfig {
                lstm_hidden: 0,
                ..NeuralConfig::default()
            },
            NeuralConfig {
                batch_size: 0,
                ..NeuralConfig::default()
            },
            NeuralConfig {
                learning_rate: 0.0,
                ..NeuralConfig::default()
            },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
        let mut cfg = NeuralConfig::default();
        cfg.set("lstm_hidden", "12").unwrap();
        cfg.set("dropout_rate", "0.25").unwrap();
        assert_eq!((cfg.lstm_hidden, cfg.dropout_rate), (12, 0.25));
        assert!(cfg.set("hidden", "3").is_err());
        assert!(cfg.set("epochs", "many").is_err());
    }

    /// Sequences over filler ids 3..20 with exactly one cue token: id 1
    /// marks a positive, id 2 a negative. Labels alternate.
    fn cue_dataset(n: usize, seed: u64, pair_input: usize) -> Vec<(EncodedInstance, bool)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|k| {
                let label = k % 2 == 0;
                let len = rng.gen_range(3..=8);
                let mut ids: Vec<usize> = (0..len).map(|_| rng.gen_range(3..20)).collect();
                let cue = rng.gen_range(0..len);
                ids[cue] = if label { 1 } else { 2 };
                let e1 = rng.gen_range(0..len);
                let enc = EncodedInstance {
                    pos1: (0..len).map(|t| 31 + t - e1).collect(),
                    pos2: (0..len).map(|t| 31 + t - (len - 1).min(e1 + 1)).collect(),
                    pair: (0..pair_input).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                    ids,
                };
                (enc, label)
            })
            .collect()
    }

    #[test]
    fn learns_a_single_token_cue() {
        let data = cue_dataset(200, 11, 8);
        let mut model = NeuralModel::new(NeuralConfig::default(), 21, 8).unwrap();
        let report = train(&mut model, &data).unwrap();
        assert_eq!(report.epoch_losses.len(), 20);
        assert!(
            (report.epoch_losses[0] - std::f64::consts::LN_2).abs() < 0.1,
            "epoch-0 loss {}",
            report.epoch_losses[0]
        );
        let correct = data
            .iter()
            .filter(|(e, y)| (model.predict_conf(e).unwrap() > 0.5) == *y)
            .count();
        assert!(
            correct as f64 / data.len() as f64 >= 0.95,
            "accuracy {correct}/200"
        );

        let smooth: Vec<f64> = report
            .epoch_losses
            .windows(3)
            .map(|w| w.iter().sum::<f64>() / 3.0)
            .collect();
        for w in smooth.windows(2) {
            assert!(w[1] <= w[0], "smoothed loss rose: {smooth:?}");
        }
    }

    #[test]
    fn training_is_deterministic() {
        let data = cue_dataset(60, 5, 4);
        let cfg = NeuralConfig {
            lstm_hidden: 16,
            token_emb_dim: 8,
            pos_emb_dim: 4,
            pair_dense_dim: 8,
            epochs: 3,
            seed: 42,
            ..NeuralConfig::default()
        };
        let run = || {
            let mut m = NeuralModel::new(cfg.clone(), 21, 4).unwrap();
            let r = train(&mut m, &data).unwrap();
            (m, r)
        };
        let (m1, r1) = run();
        let (m2, r2) = run();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&r1.epoch_losses), bits(&r2.epoch_losses));
        assert_eq!(m1, m2);

        let encs: Vec<EncodedInstance> = data.iter().map(|(e, _)| e.clone()).collect();
        let batch = predict_batch(&m1, &encs).unwrap();
        for (e, p) in encs.iter().zip(&batch) {
            assert_eq!(m1.predict_conf(e).unwrap(), *p);
        }
    }

    #[test]
    fn empty_training_set_is_rejected() {
        let mut model = NeuralModel::new(NeuralConfig::default(), 4, 2).unwrap();
        assert!(train(&mut model, &[]).is_err());
    }

    fn king_embeddings() -> EmbeddingTable {
        let mut t = EmbeddingTable::new(3).unwrap();
        t.insert("king", vec![1.0, 0.0, 0.5]).unwrap();
        t.insert("garden", vec![0.0, 1.0, -0.5]).unwrap();
        t
    }

    #[test]
    fn variants_change_only_the_token_stream() {
        let s = king_sentence();
        let inst = Instance::ground(s, "king", "garden", Some(true)).unwrap();
        let emb = king_embeddings();
        let cfg = NeuralConfig::default();
        let mut encoded = Vec::new();
        for v in [InputVariant::Word, InputVariant::Pos, InputVariant::Norm] {
            let seq = token_stream(&inst, v).unwrap();
            let index = TokenIndex::build([&seq]);
            let enc = encode_instance(&inst, v, &index, &cfg, &emb).unwrap();
            assert_eq!(enc.ids.len(), 10);
            assert_eq!(enc.pair, vec![1.0, 0.0, 0.5, 0.0, 1.0, -0.5]);
            encoded.push((seq.texts().map(String::from).collect::<Vec<_>>(), enc));
        }
        assert_eq!(encoded[0].1.pos1, encoded[2].1.pos1);
        assert_eq!(encoded[1].1.pos2, encoded[2].1.pos2);
        assert_ne!(encoded[0].0, encoded[2].0);
        assert_ne!(encoded[1].0, encoded[2].0);
        // "king" is token 1: distance 0 maps to the centre row
        assert_eq!(encoded[2].1.pos1[1], 31);
        assert_eq!(encoded[2].1.pos1[4], 34);
    }

    #[test]
    fn checkpoint_round_trip() {
        let s = king_sentence();
        let pos = Instance::ground(s.clone(), "king", "garden", Some(true)).unwrap();
        let neg = Instance::ground(s, "dog", "garden", Some(false)).unwrap();
        let emb = king_embeddings();
        let cfg = NeuralConfig {
            lstm_hidden: 6,
            token_emb_dim: 5,
            pos_emb_dim: 2,
            pair_dense_dim: 3,
            epochs: 2,
            seed: 8,
            ..NeuralConfig::default()
        };
        let (clf, _) =
            train_classifier(&[pos.clone(), neg], InputVariant::Norm, &cfg, &emb).unwrap();
        let bytes = clf.to_bytes();
        let back = LstmClassifier::from_bytes(&bytes).unwrap();
        // optimizer state is not persisted
        assert_eq!(back.model.params, clf.model.params);
        assert_eq!(back.model.config, clf.model.config);
        assert_eq!(
            (&back.index, back.variant, back.embedding_dim),
            (&clf.index, clf.variant, clf.embedding_dim)
        );
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(
            back.predict_conf(&pos, &emb).unwrap(),
            clf.predict_conf(&pos, &emb).unwrap()
        );

        assert!(LstmClassifier::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(LstmClassifier::from_bytes(&extra).is_err());
        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(LstmClassifier::from_bytes(&bad_magic).is_err());
        let mut nan = bytes.clone();
        let n = nan.len();
        nan[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            LstmClassifier::from_bytes(&nan),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn unlabeled_training_instance_is_rejected() {
        let inst = Instance::ground(king_sentence(), "king", "garden", None).unwrap();
        let r = train_classifier(
            &[inst],
            InputVariant::Norm,
            &NeuralConfig::default(),
            &king_embeddings(),
        );
        assert!(r.is_err());
    }
}
