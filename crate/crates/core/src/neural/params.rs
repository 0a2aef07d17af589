use rand::Rng;

/// Row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn fill_uniform<R: Rng>(&mut self, rng: &mut R, scale: f64) {
        for v in &mut self.data {
            *v = rng.gen_range(-scale..scale);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }
}

/// All trainable parameters. Gradients and optimizer state use the same
/// struct.
///
/// LSTM gate rows are ordered input, forget, output, candidate; the LSTM
/// weight matrix acts on `[x_t ; h_{t-1}]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub tok_emb: Tensor,
    pub pos_e1: Tensor,
    pub pos_e2: Tensor,
    pub lstm_w: Tensor,
    pub lstm_b: Tensor,
    pub pair_w: Tensor,
    pub pair_b: Tensor,
    pub out_w: Tensor,
    pub out_b: Tensor,
}

pub const GROUP_NAMES: [&str; 9] = [
    "tok_emb", "pos_e1", "pos_e2", "lstm_w", "lstm_b", "pair_w", "pair_b", "out_w", "out_b",
];

impl Params {
    pub fn zeros(shape: &Shape) -> Params {
        let din = shape.input_dim();
        let h = shape.hidden;
        Params {
            tok_emb: Tensor::zeros(shape.vocab, shape.token_dim),
            pos_e1: Tensor::zeros(shape.positions, shape.position_dim),
            pos_e2: Tensor::zeros(shape.positions, shape.position_dim),
            lstm_w: Tensor::zeros(4 * h, din + h),
            lstm_b: Tensor::zeros(1, 4 * h),
            pair_w: Tensor::zeros(shape.pair_hidden, shape.pair_input),
            pair_b: Tensor::zeros(1, shape.pair_hidden),
            out_w: Tensor::zeros(1, h + shape.pair_hidden),
            out_b: Tensor::zeros(1, 1),
        }
    }

    pub fn zeros_like(&self) -> Params {
        let z = |t: &Tensor| Tensor::zeros(t.rows, t.cols);
        Params {
            tok_emb: z(&self.tok_emb),
            pos_e1: z(&self.pos_e1),
            pos_e2: z(&self.pos_e2),
            lstm_w: z(&self.lstm_w),
            lstm_b: z(&self.lstm_b),
            pair_w: z(&self.pair_w),
            pair_b: z(&self.pair_b),
            out_w: z(&self.out_w),
            out_b: z(&self.out_b),
        }
    }

    pub fn groups(&self) -> [(&'static str, &Tensor); 9] {
        [
            (GROUP_NAMES[0], &self.tok_emb),
            (GROUP_NAMES[1], &self.pos_e1),
            (GROUP_NAMES[2], &self.pos_e2),
            (GROUP_NAMES[3], &self.lstm_w),
            (GROUP_NAMES[4], &self.lstm_b),
            (GROUP_NAMES[5], &self.pair_w),
            (GROUP_NAMES[6], &self.pair_b),
            (GROUP_NAMES[7], &self.out_w),
            (GROUP_NAMES[8], &self.out_b),
        ]
    }

    pub fn groups_mut(&mut self) -> [(&'static str, &mut Tensor); 9] {
        [
            (GROUP_NAMES[0], &mut self.tok_emb),
            (GROUP_NAMES[1], &mut self.pos_e1),
            (GROUP_NAMES[2], &mut self.pos_e2),
            (GROUP_NAMES[3], &mut self.lstm_w),
            (GROUP_NAMES[4], &mut self.lstm_b),
            (GROUP_NAMES[5], &mut self.pair_w),
            (GROUP_NAMES[6], &mut self.pair_b),
            (GROUP_NAMES[7], &mut self.out_w),
            (GROUP_NAMES[8], &mut self.out_b),
        ]
    }

    pub fn shape(&self) -> Shape {
        Shape {
            vocab: self.tok_emb.rows,
            token_dim: self.tok_emb.cols,
            positions: self.pos_e1.rows,
            position_dim: self.pos_e1.cols,
            hidden: self.lstm_b.cols / 4,
            pair_input: self.pair_w.cols,
            pair_hidden: self.pair_w.rows,
        }
    }

    /// `self += scale * other`, group by group.
    pub fn add_scaled(&mut self, other: &Params, scale: f64) {
        for ((_, a), (_, b)) in self.groups_mut().into_iter().zip(other.groups()) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += scale * y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, t) in self.groups_mut() {
            for x in &mut t.data {
                *x *= factor;
            }
        }
    }

    /// Name of the first group holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        self.groups()
            .into_iter()
            .find(|(_, t)| !t.is_finite())
            .map(|(n, _)| n)
    }

    pub(crate) fn consistent(&self) -> bool {
        let s = self.shape();
        let expect = Params::zeros(&s);
        self.groups()
            .into_iter()
            .zip(expect.groups())
            .all(|((_, a), (_, b))| a.same_shape(b) && a.data.len() == a.rows * a.cols)
            && s.hidden > 0
            && self.lstm_b.cols.is_multiple_of(4)
    }
}

/// Layer sizes of a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub vocab: usize,
    pub token_dim: usize,
    pub positions: usize,
    pub position_dim: usize,
    pub hidden: usize,
    pub pair_input: usize,
    pub pair_hidden: usize,
}

impl Shape {
    pub fn input_dim(&self) -> usize {
        self.token_dim + 2 * self.position_dim
    }
}
