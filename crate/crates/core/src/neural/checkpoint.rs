//! LSTM classifier bundle and its binary checkpoint.
//!
//! Layout: magic `LNCKPT\0`, u16 version, u32 header length, a UTF-8
//! header of `key=value` lines (config, input variant, embedding dimension
//! and one `tensor=<name> <rows> <cols>` line per parameter group), u32
//! token-index length, the token index TSV, then every tensor as
//! little-endian f32 in manifest order.

use std::path::Path;

use super::model::{EncodedInstance, NeuralConfig, NeuralModel};
use super::params::{Params, Tensor, GROUP_NAMES};
use crate::corpus::Instance;
use crate::embeddings::{ByteReader, EmbeddingTable};
use crate::error::{Error, Result};
use crate::normalize::{token_stream, InputVariant, TokenIndex, MAX_SEQUENCE_LEN};

const MAGIC: &[u8] = b"LNCKPT\0";
const VERSION: u16 = 1;
const MAX_HEADER: usize = 1 << 20;
const MAX_TENSOR_ELEMS: usize = 1 << 28;

impl NeuralConfig {
    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad value {value:?} for {key}")))
        }
        match key {
            "token_emb_dim" => self.token_emb_dim = num(key, value)?,
            "pos_emb_dim" => self.pos_emb_dim = num(key, value)?,
            "max_distance" => self.max_distance = num(key, value)?,
            "lstm_hidden" => self.lstm_hidden = num(key, value)?,
            "pair_dense_dim" => self.pair_dense_dim = num(key, value)?,
            "dropout_rate" => self.dropout_rate = num(key, value)?,
            "learning_rate" => self.learning_rate = num(key, value)?,
            "rmsprop_decay" => self.rmsprop_decay = num(key, value)?,
            "epsilon" => self.epsilon = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "unknown LSTM setting {key:?}"
                )))
            }
        }
        Ok(())
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("token_emb_dim", self.token_emb_dim.to_string()),
            ("pos_emb_dim", self.pos_emb_dim.to_string()),
            ("max_distance", self.max_distance.to_string()),
            ("lstm_hidden", self.lstm_hidden.to_string()),
            ("pair_dense_dim", self.pair_dense_dim.to_string()),
            ("dropout_rate", self.dropout_rate.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("rmsprop_decay", self.rmsprop_decay.to_string()),
            ("epsilon", self.epsilon.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }
}

/// A trained network together with what it needs to encode instances.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmClassifier {
    pub model: NeuralModel,
    pub index: TokenIndex,
    pub variant: InputVariant,
    pub embedding_dim: usize,
}

impl LstmClassifier {
    pub fn encode(&self, inst: &Instance, embeddings: &EmbeddingTable) -> Result<EncodedInstance> {
        encode_instance(
            inst,
            self.variant,
            &self.index,
            &self.model.config,
            embeddings,
        )
    }

    pub fn predict_conf(&self, inst: &Instance, embeddings: &EmbeddingTable) -> Result<f64> {
        self.model.predict_conf(&self.encode(inst, embeddings)?)
    }

    /// Rounds parameters to f32 so a saved checkpoint reloads exactly.
    pub fn quantize(&mut self) {
        for (_, t) in self.model.params.groups_mut() {
            for v in &mut t.data {
                *v = f64::from(*v as f32);
            }
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = String::new();
        header.push_str(&format!("variant={}\n", self.variant));
        header.push_str(&format!("embedding_dim={}\n", self.embedding_dim));
        for (k, v) in self.model.config.entries() {
            header.push_str(&format!("{k}={v}\n"));
        }
        for (name, t) in self.model.params.groups() {
            header.push_str(&format!("tensor={name} {} {}\n", t.rows, t.cols));
        }
        let index = self.index.to_tsv();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(&(index.len() as u32).to_le_bytes());
        out.extend_from_slice(index.as_bytes());
        for (_, t) in self.model.params.groups() {
            for &v in &t.data {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<LstmClassifier> {
        let mut r = ByteReader::new(bytes);
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Format("not an LSTM checkpoint (bad magic)".into()));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let header_len = r.u32()? as usize;
        if header_len > MAX_HEADER {
            return Err(Error::Format("checkpoint header too large".into()));
        }
        let header = std::str::from_utf8(r.take(header_len)?)
            .map_err(|_| Error::Format("checkpoint header is not UTF-8".into()))?;

        let mut config = NeuralConfig::default();
        let mut variant = None;
        let mut embedding_dim = None;
        let mut manifest: Vec<(String, usize, usize)> = Vec::new();
        for (lineno, line) in header.lines().enumerate() {
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::parse("checkpoint header", lineno + 1, "expected key=value")
            })?;
            let bad = |m: String| Error::parse("checkpoint header", lineno + 1, m);
            match key {
                "variant" => {
                    variant = Some(
                        value
                            .parse::<InputVariant>()
                            .map_err(|e| bad(e.to_string()))?,
                    )
                }
                "embedding_dim" => {
                    embedding_dim = Some(value.parse::<usize>().map_err(|e| bad(e.to_string()))?)
                }
                "tensor" => {
                    let f: Vec<&str> = value.split(' ').collect();
                    if f.len() != 3 {
                        return Err(bad("tensor line needs name rows cols".into()));
                    }
                    let rows = f[1].parse().map_err(|_| bad("bad row count".into()))?;
                    let cols = f[2].parse().map_err(|_| bad("bad column count".into()))?;
                    manifest.push((f[0].to_string(), rows, cols));
                }
                _ => config.set(key, value).map_err(|e| bad(e.to_string()))?,
            }
        }
        config.validate()?;
        let variant = variant.ok_or_else(|| Error::Format("checkpoint lacks variant".into()))?;
        let embedding_dim =
            embedding_dim.ok_or_else(|| Error::Format("checkpoint lacks embedding_dim".into()))?;

        let index_len = r.u32()? as usize;
        let index_text = r.take(index_len)?;
        let index = TokenIndex::read_tsv(index_text)?;

        if manifest.len() != GROUP_NAMES.len()
            || manifest
                .iter()
                .zip(GROUP_NAMES)
                .any(|((n, _, _), g)| n != g)
        {
            return Err(Error::Format(
                "checkpoint tensor manifest incomplete or out of order".into(),
            ));
        }
        let mut tensors = Vec::with_capacity(manifest.len());
        for (name, rows, cols) in &manifest {
            let n = rows
                .checked_mul(*cols)
                .filter(|&n| n <= MAX_TENSOR_ELEMS && n.saturating_mul(4) <= r.remaining())
                .ok_or_else(|| Error::Format(format!("tensor {name} truncated or too large")))?;
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                data.push(f64::from(r.f32()?));
            }
            tensors.push(Tensor {
                rows: *rows,
                cols: *cols,
                data,
            });
        }
        if r.remaining() != 0 {
            return Err(Error::Format(
                "trailing bytes after checkpoint tensors".into(),
            ));
        }
        let mut it = tensors.into_iter();
        let mut next = || it.next().expect("manifest length checked");
        let params = Params {
            tok_emb: next(),
            pos_e1: next(),
            pos_e2: next(),
            lstm_w: next(),
            lstm_b: next(),
            pair_w: next(),
            pair_b: next(),
            out_w: next(),
            out_b: next(),
        };
        let expected = config.shape(index.table_size(), 2 * embedding_dim);
        if !params.consistent() || params.shape() != expected {
            return Err(Error::Format(
                "checkpoint tensor shapes disagree with its config".into(),
            ));
        }
        if let Some(name) = params.first_non_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
        let acc = params.zeros_like();
        Ok(LstmClassifier {
            model: NeuralModel {
                config,
                params,
                acc,
            },
            index,
            variant,
            embedding_dim,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<LstmClassifier> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        LstmClassifier::from_bytes(&bytes)
    }
}

/// Token stream for `variant`, capped at the maximum sequence length, plus
/// position rows and the two object vectors.
pub fn encode_instance(
    inst: &Instance,
    variant: InputVariant,
    index: &TokenIndex,
    config: &NeuralConfig,
    embeddings: &EmbeddingTable,
) -> Result<EncodedInstance> {
    let seq = token_stream(inst, variant)?.truncated(MAX_SEQUENCE_LEN);
    let mut pair = Vec::with_capacity(2 * embeddings.dim());
    pair.extend_from_slice(embeddings.lookup(&inst.e1));
    pair.extend_from_slice(embeddings.lookup(&inst.e2));
    Ok(EncodedInstance {
        ids: index.encode(&seq),
        pos1: seq
            .dist_e1
            .iter()
            .map(|&d| config.position_index(d))
            .collect(),
        pos2: seq
            .dist_e2
            .iter()
            .map(|&d| config.position_index(d))
            .collect(),
        pair,
    })
}
