//! Kernel SVM trained with sequential minimal optimization.
//!
//! Training runs the simplified SMO loop (random second index, seeded)
//! until `max_passes` consecutive passes change nothing, then polishes
//! with maximal-violating-pair steps until every point satisfies the KKT
//! conditions within `tol`. The bias is set from the final violating-pair
//! bounds, so the returned model is KKT-consistent.

use std::fmt;
use std::fmt::Write as _;
use std::io::BufRead;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::FeatureVector;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelSpec {
    Linear,
    Rbf { gamma: f64 },
}

impl KernelSpec {
    pub fn rbf(gamma: f64) -> Result<Self> {
        if gamma > 0.0 && gamma.is_finite() {
            Ok(KernelSpec::Rbf { gamma })
        } else {
            Err(Error::InvalidArgument(format!(
                "rbf gamma must be positive, got {}",
                gamma
            )))
        }
    }

    pub fn eval(&self, u: &FeatureVector, v: &FeatureVector) -> Result<f64> {
        if u.dim() != v.dim() {
            return Err(Error::DimensionMismatch {
                expected: u.dim(),
                actual: v.dim(),
            });
        }
        Ok(self.eval_unchecked(u, v))
    }

    fn eval_unchecked(&self, u: &FeatureVector, v: &FeatureVector) -> f64 {
        match *self {
            KernelSpec::Linear => u.dot(v),
            KernelSpec::Rbf { gamma } => (-gamma * u.squared_distance(v)).exp(),
        }
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelSpec::Linear => write!(f, "linear"),
            KernelSpec::Rbf { gamma } => write!(f, "rbf {}", gamma),
        }
    }
}

impl FromStr for KernelSpec {
    type Err = Error;

    /// `linear`, `rbf <gamma>` or `rbf:<gamma>`.
    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s
            .split(|c: char| c.is_whitespace() || c == ':')
            .filter(|p| !p.is_empty());
        match (parts.next(), parts.next(), parts.next()) {
            (Some("linear"), None, None) => Ok(KernelSpec::Linear),
            (Some("rbf"), Some(g), None) => KernelSpec::rbf(
                g.parse()
                    .map_err(|_| Error::InvalidArgument(format!("invalid gamma {:?}", g)))?,
            ),
            _ => Err(Error::InvalidArgument(format!(
                "invalid kernel spec {:?}",
                s
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoParams {
    pub c: f64,
    pub kernel: KernelSpec,
    pub tol: f64,
    pub max_passes: usize,
    pub seed: u64,
    /// Largest training set for which the full Gram matrix is cached.
    pub gram_limit: usize,
}

impl Default for SmoParams {
    fn default() -> Self {
        SmoParams {
            c: 100.0,
            kernel: KernelSpec::Rbf { gamma: 1e-3 },
            tol: 1e-3,
            max_passes: 10,
            seed: 0,
            gram_limit: 8_000,
        }
    }
}

const MAX_SIMPLE_PASSES: usize = 500;

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    pub support_vectors: Vec<FeatureVector>,
    /// Dual coefficients multiplied by the label.
    pub alphas: Vec<f64>,
    pub bias: f64,
    pub kernel: KernelSpec,
    pub c: f64,
    pub conf_scale: f64,
}

/// Everything SMO knows at exit, for diagnostics and tests.
#[derive(Debug, Clone)]
pub struct SmoOutcome {
    pub model: SvmModel,
    /// Unsigned dual variables, one per training point.
    pub alphas: Vec<f64>,
    /// Cached `f(x_i) - y_i` at exit.
    pub errors: Vec<f64>,
    /// Dual objective after each simplified pass and after polishing.
    pub dual_objective: Vec<f64>,
    pub passes: usize,
    pub polish_steps: usize,
}

enum Gram {
    Full { n: usize, k: Vec<f64> },
    OnDemand,
}

struct Solver<'a> {
    x: Vec<&'a FeatureVector>,
    y: Vec<f64>,
    c: f64,
    kernel: KernelSpec,
    gram: Gram,
    diag: Vec<f64>,
    alpha: Vec<f64>,
    errors: Vec<f64>,
    b: f64,
}

impl<'a> Solver<'a> {
    fn k(&self, i: usize, j: usize) -> f64 {
        match &self.gram {
            Gram::Full { n, k } => k[i * n + j],
            Gram::OnDemand => self.kernel.eval_unchecked(self.x[i], self.x[j]),
        }
    }

    fn dual_objective(&self) -> f64 {
        // W = sum(a) - 1/2 sum_i a_i y_i (f_i - b), with f_i - b = E_i + y_i - b
        let mut sum_a = 0.0;
        let mut quad = 0.0;
        for i in 0..self.y.len() {
            sum_a += self.alpha[i];
            quad += self.alpha[i] * self.y[i] * (self.errors[i] + self.y[i] - self.b);
        }
        sum_a - 0.5 * quad
    }

    fn snap(&self, a: f64) -> f64 {
        let eps = 1e-12 * self.c;
        if a < eps {
            0.0
        } else if a > self.c - eps {
            self.c
        } else {
            a
        }
    }

    /// Moves `alpha[i]`, `alpha[j]` to the constrained optimum along their
    /// equality line. `tau` floors the curvature; `None` skips flat pairs.
    fn step(&mut self, i: usize, j: usize, tau: Option<f64>) -> bool {
        if i == j {
            return false;
        }
        let (yi, yj) = (self.y[i], self.y[j]);
        let (ai, aj) = (self.alpha[i], self.alpha[j]);
        let (ei, ej) = (self.errors[i], self.errors[j]);
        let (lo, hi) = if yi != yj {
            ((aj - ai).max(0.0), (self.c + aj - ai).min(self.c))
        } else {
            ((ai + aj - self.c).max(0.0), (ai + aj).min(self.c))
        };
        if hi - lo <= 0.0 {
            return false;
        }
        let kij = self.k(i, j);
        let mut curvature = self.diag[i] + self.diag[j] - 2.0 * kij;
        if curvature <= 0.0 {
            match tau {
                Some(t) => curvature = t,
                None => return false,
            }
        }
        let aj_new = self.snap((aj + yj * (ei - ej) / curvature).clamp(lo, hi));
        if (aj_new - aj).abs() < 1e-5 * (aj_new + aj + 1e-5) && tau.is_none() {
            return false;
        }
        if aj_new == aj {
            return false;
        }
        let ai_new = self.snap(ai + yi * yj * (aj - aj_new));
        let (dai, daj) = (ai_new - ai, aj_new - aj);

        let b1 = self.b - ei - yi * dai * self.diag[i] - yj * daj * kij;
        let b2 = self.b - ej - yi * dai * kij - yj * daj * self.diag[j];
        let b_new = if ai_new > 0.0 && ai_new < self.c {
            b1
        } else if aj_new > 0.0 && aj_new < self.c {
            b2
        } else {
            0.5 * (b1 + b2)
        };
        let db = b_new - self.b;

        self.alpha[i] = ai_new;
        self.alpha[j] = aj_new;
        self.b = b_new;
        let (ci, cj) = (yi * dai, yj * daj);
        for k in 0..self.y.len() {
            let delta = ci * self.k(i, k) + cj * self.k(j, k) + db;
            self.errors[k] += delta;
        }
        true
    }

    fn violates(&self, i: usize, tol: f64) -> bool {
        let r = self.y[i] * self.errors[i];
        (r < -tol && self.alpha[i] < self.c) || (r > tol && self.alpha[i] > 0.0)
    }

    /// Maximal violating pair in terms of `F_i = E_i - b`:
    /// `m = max_{I_up} -F`, `M = min_{I_low} -F`.
    fn violating_pair(&self) -> Option<(usize, f64, usize, f64)> {
        let mut up: Option<(usize, f64)> = None;
        let mut low: Option<(usize, f64)> = None;
        for t in 0..self.y.len() {
            let g = self.b - self.errors[t];
            let (a, y) = (self.alpha[t], self.y[t]);
            let in_up = (y > 0.0 && a < self.c) || (y < 0.0 && a > 0.0);
            let in_low = (y > 0.0 && a > 0.0) || (y < 0.0 && a < self.c);
            if in_up && up.is_none_or(|(_, m)| g > m) {
                up = Some((t, g));
            }
            if in_low && low.is_none_or(|(_, m)| g < m) {
                low = Some((t, g));
            }
        }
        match (up, low) {
            (Some((i, m)), Some((j, mm))) => Some((i, m, j, mm)),
            _ => None,
        }
    }

    fn set_bias(&mut self, b: f64) {
        let db = b - self.b;
        for e in &mut self.errors {
            *e += db;
        }
        self.b = b;
    }
}

/// Trains a binary SVM. Labels: `true` is the positive class.
pub fn train_smo(data: &[(FeatureVector, bool)], params: &SmoParams) -> Result<SmoOutcome> {
    let n = data.len();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "SMO needs at least two examples".into(),
        ));
    }
    if !(data.iter().any(|d| d.1) && data.iter().any(|d| !d.1)) {
        return Err(Error::InvalidArgument(
            "SMO needs both classes in the training set".into(),
        ));
    }
    if !(params.c > 0.0) || !(params.tol > 0.0) {
        return Err(Error::InvalidArgument("C and tol must be positive".into()));
    }
    let dim = data[0].0.dim();
    if let Some(bad) = data.iter().find(|d| d.0.dim() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: bad.0.dim(),
        });
    }
    let x: Vec<&FeatureVector> = data.iter().map(|d| &d.0).collect();
    let y: Vec<f64> = data.iter().map(|d| if d.1 { 1.0 } else { -1.0 }).collect();
    let kernel = params.kernel;
    let gram = if n <= params.gram_limit {
        let mut k = vec![0.0; n * n];
        k.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
            for (j, v) in row.iter_mut().enumerate() {
                *v = kernel.eval_unchecked(x[i], x[j]);
            }
        });
        Gram::Full { n, k }
    } else {
        Gram::OnDemand
    };
    let diag = (0..n).map(|i| kernel.eval_unchecked(x[i], x[i])).collect();
    let mut s = Solver {
        errors: y.iter().map(|v| -v).collect(),
        x,
        y,
        c: params.c,
        kernel,
        gram,
        diag,
        alpha: vec![0.0; n],
        b: 0.0,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut dual = vec![s.dual_objective()];
    let mut quiet = 0;
    let mut passes = 0;
    while quiet < params.max_passes && passes < MAX_SIMPLE_PASSES {
        let mut changed = 0;
        for i in 0..n {
            if s.violates(i, params.tol) {
                let mut j = rng.gen_range(0..n - 1);
                if j >= i {
                    j += 1;
                }
                if s.step(i, j, None) {
                    changed += 1;
                }
            }
        }
        passes += 1;
        quiet = if changed == 0 { quiet + 1 } else { 0 };
        dual.push(s.dual_objective());
    }

    let max_polish = 100_000usize.max(50 * n);
    let mut polish_steps = 0;
    let mut bounds = s.violating_pair();
    while let Some((i, m, j, mm)) = bounds {
        if m - mm <= params.tol || polish_steps >= max_polish {
            break;
        }
        if !s.step(i, j, Some(1e-12)) {
            break;
        }
        polish_steps += 1;
        bounds = s.violating_pair();
    }
    if let Some((_, m, _, mm)) = bounds {
        s.set_bias(0.5 * (m + mm));
    }
    if polish_steps > 0 {
        dual.push(s.dual_objective());
    }

    let mut support_vectors = Vec::new();
    let mut coefs = Vec::new();
    for t in 0..n {
        if s.alpha[t] > 0.0 {
            support_vectors.push(data[t].0.clone());
            coefs.push(s.alpha[t] * s.y[t]);
        }
    }
    Ok(SmoOutcome {
        model: SvmModel {
            support_vectors,
            alphas: coefs,
            bias: s.b,
            kernel,
            c: params.c,
            conf_scale: 1.0,
        },
        alphas: s.alpha,
        errors: s.errors,
        dual_objective: dual,
        passes,
        polish_steps,
    })
}

/// Largest KKT violation, measured on `y·f(x) - 1`, of dual variables
/// `alphas` (unsigned) for the given margins.
pub fn max_kkt_violation(alphas: &[f64], margins: &[f64], labels: &[bool], c: f64) -> f64 {
    let mut worst: f64 = 0.0;
    for ((&a, &m), &l) in alphas.iter().zip(margins).zip(labels) {
        let yf = if l { m } else { -m };
        let v = if a <= 0.0 {
            (1.0 - yf).max(0.0)
        } else if a >= c {
            (yf - 1.0).max(0.0)
        } else {
            (yf - 1.0).abs()
        };
        worst = worst.max(v);
    }
    worst
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl SvmModel {
    pub fn dim(&self) -> Option<usize> {
        self.support_vectors.first().map(FeatureVector::dim)
    }

    pub fn predict_margin(&self, x: &FeatureVector) -> f64 {
        self.support_vectors
            .iter()
            .zip(&self.alphas)
            .map(|(sv, a)| a * self.kernel.eval_unchecked(sv, x))
            .sum::<f64>()
            + self.bias
    }

    pub fn predict_conf(&self, x: &FeatureVector) -> f64 {
        sigmoid(self.conf_scale * self.predict_margin(x))
    }

    pub fn predict(&self, x: &FeatureVector) -> bool {
        self.predict_conf(x) > 0.5
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "locatednear-svm 1");
        let _ = writeln!(out, "kernel {}", self.kernel);
        let _ = writeln!(out, "c {}", self.c);
        let _ = writeln!(out, "bias {}", self.bias);
        let _ = writeln!(out, "conf_scale {}", self.conf_scale);
        let _ = writeln!(out, "dim {}", self.dim().unwrap_or(0));
        let _ = writeln!(out, "support_vectors {}", self.support_vectors.len());
        for (sv, a) in self.support_vectors.iter().zip(&self.alphas) {
            let _ = write!(out, "{}\t", a);
            let cols: Vec<String> = sv
                .entries()
                .iter()
                .map(|(c, v)| format!("{}:{}", c, v))
                .collect();
            let _ = writeln!(out, "{}", cols.join(" "));
        }
        out
    }

    pub fn read_text<R: BufRead>(reader: R) -> Result<SvmModel> {
        let ctx = "svm model";
        let mut lines = reader.lines();
        let mut lineno = 0;
        let mut next_line = || -> Result<(usize, String)> {
            lineno += 1;
            match lines.next() {
                Some(Ok(l)) => Ok((lineno, l)),
                Some(Err(e)) => Err(Error::parse(ctx, lineno, e.to_string())),
                None => Err(Error::parse(ctx, lineno, "unexpected end of file")),
            }
        };
        let mut field = |key: &str| -> Result<(usize, String)> {
            let (n, line) = next_line()?;
            let rest = line
                .strip_prefix(key)
                .and_then(|r| r.strip_prefix(' '))
                .ok_or_else(|| Error::parse(ctx, n, format!("expected {:?}", key)))?;
            Ok((n, rest.to_string()))
        };
        let num = |n: usize, s: &str| -> Result<f64> {
            s.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| Error::parse(ctx, n, format!("invalid number {:?}", s)))
        };
        let (n, version) = field("locatednear-svm")?;
        if version != "1" {
            return Err(Error::parse(
                ctx,
                n,
                format!("unsupported version {:?}", version),
            ));
        }
        let (_, kernel) = field("kernel")?;
        let kernel: KernelSpec = kernel.parse()?;
        let (n, c) = field("c")?;
        let c = num(n, &c)?;
        let (n, bias) = field("bias")?;
        let bias = num(n, &bias)?;
        let (n, scale) = field("conf_scale")?;
        let conf_scale = num(n, &scale)?;
        let (n, dim) = field("dim")?;
        let dim: usize = dim
            .parse()
            .map_err(|_| Error::parse(ctx, n, "invalid dim"))?;
        let (n, count) = field("support_vectors")?;
        let count: usize = count
            .parse()
            .map_err(|_| Error::parse(ctx, n, "invalid count"))?;
        let mut support_vectors = Vec::new();
        let mut alphas = Vec::new();
        for _ in 0..count {
            let (n, line) = next_line()?;
            let (a, cols) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(ctx, n, "expected alpha\\tvector"))?;
            let a = num(n, a)?;
            if a == 0.0 || a.abs() > c * (1.0 + 1e-9) {
                return Err(Error::parse(ctx, n, "alpha outside (0, C]"));
            }
            let mut entries = Vec::new();
            let mut last = None;
            for pair in cols.split_whitespace() {
                let (col, v) = pair
                    .split_once(':')
                    .ok_or_else(|| Error::parse(ctx, n, format!("invalid entry {:?}", pair)))?;
                let col: usize = col
                    .parse()
                    .map_err(|_| Error::parse(ctx, n, format!("invalid column {:?}", col)))?;
                if col >= dim || last.is_some_and(|l| col <= l) {
                    return Err(Error::parse(ctx, n, "columns must increase within dim"));
                }
                last = Some(col);
                entries.push((col, num(n, v)?));
            }
            support_vectors.push(FeatureVector::from_entries(dim, entries)?);
            alphas.push(a);
        }
        Ok(SvmModel {
            support_vectors,
            alphas,
            bias,
            kernel,
            c,
            conf_scale,
        })
    }
}
