use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::{Params, Shape, Tensor};
use crate::error::{Error, Result};

pub const INIT_SCALE: f64 = 0.05;
pub const FORGET_BIAS: f64 = 1.0;
const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct NeuralConfig {
    pub token_emb_dim: usize,
    pub pos_emb_dim: usize,
    /// Distances are clipped to `±max_distance` before the position lookup.
    pub max_distance: usize,
    pub lstm_hidden: usize,
    pub pair_dense_dim: usize,
    pub dropout_rate: f64,
    pub learning_rate: f64,
    pub rmsprop_decay: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for NeuralConfig {
    fn default() -> Self {
        NeuralConfig {
            token_emb_dim: 64,
            pos_emb_dim: 16,
            max_distance: 30,
            lstm_hidden: 128,
            pair_dense_dim: 64,
            dropout_rate: 0.5,
            learning_rate: 1e-3,
            rmsprop_decay: 0.9,
            epsilon: 1e-8,
            batch_size: 32,
            epochs: 20,
            seed: 0,
        }
    }
}

impl NeuralConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("token_emb_dim", self.token_emb_dim),
            ("pos_emb_dim", self.pos_emb_dim),
            ("lstm_hidden", self.lstm_hidden),
            ("pair_dense_dim", self.pair_dense_dim),
            ("batch_size", self.batch_size),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidArgument(format!(
                "dropout_rate must be in [0,1), got {}",
                self.dropout_rate
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(
                "learning_rate must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.rmsprop_decay) {
            return Err(Error::InvalidArgument(
                "rmsprop_decay must be in [0,1)".into(),
            ));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidArgument("epsilon must be positive".into()));
        }
        Ok(())
    }

    /// Rows in each position table: one per clipped distance plus a padding row.
    pub fn position_rows(&self) -> usize {
        2 * self.max_distance + 2
    }

    /// Position-table row for a signed distance. Row 0 is padding.
    pub fn position_index(&self, distance: i32) -> usize {
        let m = self.max_distance as i64;
        (i64::from(distance).clamp(-m, m) + m + 1) as usize
    }

    pub fn shape(&self, vocab: usize, pair_input: usize) -> Shape {
        Shape {
            vocab,
            token_dim: self.token_emb_dim,
            positions: self.position_rows(),
            position_dim: self.pos_emb_dim,
            hidden: self.lstm_hidden,
            pair_input,
            pair_hidden: self.pair_dense_dim,
        }
    }
}

/// An instance encoded for the network: token ids, position-table rows and
/// the concatenated pretrained vectors of the two objects.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedInstance {
    pub ids: Vec<usize>,
    pub pos1: Vec<usize>,
    pub pos2: Vec<usize>,
    pub pair: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Infer,
    /// Dropout active, masks drawn from this seed.
    Train(u64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeuralModel {
    pub config: NeuralConfig,
    pub params: Params,
    /// RMSProp running averages of squared gradients.
    pub acc: Params,
}

/// Intermediates of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    steps: Vec<StepCache>,
    h_mask: Vec<f64>,
    enc: Vec<f64>,
    pair_act: Vec<f64>,
    pair_in: Vec<f64>,
    ids: Vec<usize>,
    pos1: Vec<usize>,
    pos2: Vec<usize>,
    pub prob: f64,
}

#[derive(Debug, Clone)]
struct StepCache {
    /// `[dropped x_t ; h_{t-1}]`
    xh: Vec<f64>,
    x_mask: Vec<f64>,
    /// i, f, o, g after their nonlinearities.
    gates: Vec<f64>,
    c_prev: Vec<f64>,
    tanh_c: Vec<f64>,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for k in 0..chunks {
        let i = 4 * k;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn dropout_mask(rng: &mut ChaCha8Rng, len: usize, rate: f64) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

pub fn bce_loss(prob: f64, label: bool) -> f64 {
    let p = prob.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    if label {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

impl NeuralModel {
    /// Randomly initialized model for a token table of `vocab` rows and pair
    /// vectors of length `pair_input`.
    pub fn new(config: NeuralConfig, vocab: usize, pair_input: usize) -> Result<NeuralModel> {
        let mut model = NeuralModel::zeroed(config, vocab, pair_input)?;
        let mut rng = ChaCha8Rng::seed_from_u64(model.config.seed);
        for (name, t) in model.params.groups_mut() {
            if name.ends_with("_b") {
                continue;
            }
            t.fill_uniform(&mut rng, INIT_SCALE);
        }
        let h = model.config.lstm_hidden;
        for v in &mut model.params.lstm_b.data[h..2 * h] {
            *v = FORGET_BIAS;
        }
        Ok(model)
    }

    /// Model with every parameter zero.
    pub fn zeroed(config: NeuralConfig, vocab: usize, pair_input: usize) -> Result<NeuralModel> {
        config.validate()?;
        if vocab == 0 {
            return Err(Error::InvalidArgument(
                "token table must be nonempty".into(),
            ));
        }
        let params = Params::zeros(&config.shape(vocab, pair_input));
        let acc = params.zeros_like();
        Ok(NeuralModel {
            config,
            params,
            acc,
        })
    }

    pub fn shape(&self) -> Shape {
        self.params.shape()
    }

    fn check_input(&self, enc: &EncodedInstance) -> Result<()> {
        let s = self.shape();
        if enc.ids.is_empty() {
            return Err(Error::InvalidArgument("empty token sequence".into()));
        }
        if enc.pos1.len() != enc.ids.len() || enc.pos2.len() != enc.ids.len() {
            return Err(Error::DimensionMismatch {
                expected: enc.ids.len(),
                actual: enc.pos1.len().min(enc.pos2.len()),
            });
        }
        if let Some(&id) = enc.ids.iter().find(|&&id| id >= s.vocab) {
            return Err(Error::InvalidArgument(format!(
                "token id {id} outside table of {} rows",
                s.vocab
            )));
        }
        if let Some(&p) = enc
            .pos1
            .iter()
            .chain(&enc.pos2)
            .find(|&&p| p >= s.positions)
        {
            return Err(Error::InvalidArgument(format!(
                "position row {p} outside table of {} rows",
                s.positions
            )));
        }
        if enc.pair.len() != s.pair_input {
            return Err(Error::DimensionMismatch {
                expected: s.pair_input,
                actual: enc.pair.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, enc: &EncodedInstance, mode: Mode) -> Result<ForwardCache> {
        self.check_input(enc)?;
        let p = &self.params;
        let s = self.shape();
        let (h, din) = (s.hidden, s.input_dim());
        let (te, pe) = (s.token_dim, s.position_dim);
        let mut rng = match mode {
            Mode::Train(seed) if self.config.dropout_rate > 0.0 => {
                Some(ChaCha8Rng::seed_from_u64(seed))
            }
            _ => None,
        };
        let rate = self.config.dropout_rate;

        let mut h_prev = vec![0.0; h];
        let mut c_prev = vec![0.0; h];
        let mut steps = Vec::with_capacity(enc.ids.len());
        let mut z = vec![0.0; 4 * h];
        for t in 0..enc.ids.len() {
            let mut xh = Vec::with_capacity(din + h);
            xh.extend_from_slice(p.tok_emb.row(enc.ids[t]));
            xh.extend_from_slice(p.pos_e1.row(enc.pos1[t]));
            xh.extend_from_slice(p.pos_e2.row(enc.pos2[t]));
            debug_assert_eq!(xh.len(), te + 2 * pe);
            let x_mask = match rng.as_mut() {
                Some(r) => {
                    let m = dropout_mask(r, din, rate);
                    for (x, k) in xh.iter_mut().zip(&m) {
                        *x *= k;
                    }
                    m
                }
                None => Vec::new(),
            };
            xh.extend_from_slice(&h_prev);
            for (r, zr) in z.iter_mut().enumerate() {
                *zr = dot(p.lstm_w.row(r), &xh) + p.lstm_b.data[r];
            }
            let mut gates = vec![0.0; 4 * h];
            for k in 0..3 * h {
                gates[k] = sigmoid(z[k]);
            }
            for k in 3 * h..4 * h {
                gates[k] = z[k].tanh();
            }
            let mut c = vec![0.0; h];
            let mut tanh_c = vec![0.0; h];
            for k in 0..h {
                c[k] = gates[h + k] * c_prev[k] + gates[k] * gates[3 * h + k];
                tanh_c[k] = c[k].tanh();
                h_prev[k] = gates[2 * h + k] * tanh_c[k];
            }
            steps.push(StepCache {
                xh,
                x_mask,
                gates,
                c_prev: std::mem::replace(&mut c_prev, c),
                tanh_c,
            });
        }

        let h_mask = match rng.as_mut() {
            Some(r) => dropout_mask(r, h, rate),
            None => Vec::new(),
        };
        let mut enc_vec = h_prev;
        if !h_mask.is_empty() {
            for (v, k) in enc_vec.iter_mut().zip(&h_mask) {
                *v *= k;
            }
        }

        let pair_act: Vec<f64> = (0..s.pair_hidden)
            .map(|r| (dot(p.pair_w.row(r), &enc.pair) + p.pair_b.data[r]).tanh())
            .collect();

        let ow = &p.out_w.data;
        let logit = dot(&ow[..h], &enc_vec) + dot(&ow[h..], &pair_act) + p.out_b.data[0];
        Ok(ForwardCache {
            steps,
            h_mask,
            enc: enc_vec,
            pair_act,
            pair_in: enc.pair.clone(),
            ids: enc.ids.clone(),
            pos1: enc.pos1.clone(),
            pos2: enc.pos2.clone(),
            prob: sigmoid(logit),
        })
    }

    pub fn predict_conf(&self, enc: &EncodedInstance) -> Result<f64> {
        Ok(self.forward(enc, Mode::Infer)?.prob)
    }

    /// Adds the gradient of the BCE loss for one example into `grads`.
    pub fn backward_into(&self, cache: &ForwardCache, label: bool, grads: &mut Params) {
        let p = &self.params;
        let s = self.shape();
        let (h, te, pe) = (s.hidden, s.token_dim, s.position_dim);
        let din = s.input_dim();
        let y = if label { 1.0 } else { 0.0 };
        let dlogit = cache.prob - y;

        grads.out_b.data[0] += dlogit;
        axpy(&mut grads.out_w.data[..h], dlogit, &cache.enc);
        axpy(&mut grads.out_w.data[h..], dlogit, &cache.pair_act);

        for r in 0..s.pair_hidden {
            let a = cache.pair_act[r];
            let du = dlogit * p.out_w.data[h + r] * (1.0 - a * a);
            grads.pair_b.data[r] += du;
            axpy(grads.pair_w.row_mut(r), du, &cache.pair_in);
        }

        let mut dh: Vec<f64> = p.out_w.data[..h].iter().map(|w| dlogit * w).collect();
        if !cache.h_mask.is_empty() {
            for (d, k) in dh.iter_mut().zip(&cache.h_mask) {
                *d *= k;
            }
        }
        let mut dc = vec![0.0; h];
        let mut dz = vec![0.0; 4 * h];
        let mut dxh = vec![0.0; din + h];
        for t in (0..cache.steps.len()).rev() {
            let st = &cache.steps[t];
            let g = &st.gates;
            for k in 0..h {
                let (i, f, o, cand) = (g[k], g[h + k], g[2 * h + k], g[3 * h + k]);
                let tc = st.tanh_c[k];
                dc[k] += dh[k] * o * (1.0 - tc * tc);
                let d_o = dh[k] * tc;
                let d_i = dc[k] * cand;
                let d_g = dc[k] * i;
                let d_f = dc[k] * st.c_prev[k];
                dz[k] = d_i * i * (1.0 - i);
                dz[h + k] = d_f * f * (1.0 - f);
                dz[2 * h + k] = d_o * o * (1.0 - o);
                dz[3 * h + k] = d_g * (1.0 - cand * cand);
                dc[k] *= f;
            }
            dxh.iter_mut().for_each(|v| *v = 0.0);
            for (r, &d) in dz.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                grads.lstm_b.data[r] += d;
                axpy(grads.lstm_w.row_mut(r), d, &st.xh);
                axpy(&mut dxh, d, p.lstm_w.row(r));
            }
            dh.copy_from_slice(&dxh[din..]);
            if !st.x_mask.is_empty() {
                for (d, k) in dxh[..din].iter_mut().zip(&st.x_mask) {
                    *d *= k;
                }
            }
            axpy(grads.tok_emb.row_mut(cache.ids[t]), 1.0, &dxh[..te]);
            axpy(grads.pos_e1.row_mut(cache.pos1[t]), 1.0, &dxh[te..te + pe]);
            axpy(grads.pos_e2.row_mut(cache.pos2[t]), 1.0, &dxh[te + pe..din]);
        }
    }

    pub fn backward(&self, cache: &ForwardCache, label: bool) -> Params {
        let mut grads = self.params.zeros_like();
        self.backward_into(cache, label, &mut grads);
        grads
    }

    /// One RMSProp update. Fails if any parameter becomes non-finite.
    pub fn rmsprop_step(&mut self, grads: &Params) -> Result<()> {
        let (lr, rho, eps) = (
            self.config.learning_rate,
            self.config.rmsprop_decay,
            self.config.epsilon,
        );
        let params = self.params.groups_mut();
        let accs = self.acc.groups_mut();
        for (((_, w), (_, a)), (_, g)) in params.into_iter().zip(accs).zip(grads.groups()) {
            rmsprop_update(w, a, g, lr, rho, eps);
        }
        match self.params.first_non_finite() {
            Some(name) => Err(Error::NonFinite(name.to_string())),
            None => Ok(()),
        }
    }
}

fn rmsprop_update(w: &mut Tensor, acc: &mut Tensor, g: &Tensor, lr: f64, rho: f64, eps: f64) {
    for ((wi, ai), &gi) in w.data.iter_mut().zip(acc.data.iter_mut()).zip(&g.data) {
        *ai = rho * *ai + (1.0 - rho) * gi * gi;
        if gi != 0.0 {
            *wi -= lr * gi / (*ai + eps).sqrt();
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean training loss per epoch, measured with dropout active.
    pub epoch_losses: Vec<f64>,
    pub updates: usize,
}

/// Mini-batch RMSProp training, deterministic for a given `config.seed`.
pub fn train(model: &mut NeuralModel, data: &[(EncodedInstance, bool)]) -> Result<TrainReport> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    for (enc, _) in data {
        model.check_input(enc)?;
    }
    let cfg = model.config.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_1e57_0000_0001);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grads = model.params.zeros_like();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut updates = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grads.scale(0.0);
            for &i in batch {
                let (enc, label) = &data[i];
                let cache = model.forward(enc, Mode::Train(rng.gen()))?;
                total += bce_loss(cache.prob, *label);
                model.backward_into(&cache, *label, &mut grads);
            }
            grads.scale(1.0 / batch.len() as f64);
            model.rmsprop_step(&grads)?;
            updates += 1;
        }
        let mean = total / data.len() as f64;
        log::info!("epoch {}: mean loss {:.5}", epoch + 1, mean);
        epoch_losses.push(mean);
    }
    Ok(TrainReport {
        epoch_losses,
        updates,
    })
}

/// Inference over many instances; results keep input order.
pub fn predict_batch(model: &NeuralModel, data: &[EncodedInstance]) -> Result<Vec<f64>> {
    use rayon::prelude::*;
    data.par_iter().map(|e| model.predict_conf(e)).collect()
}
