//! Pairwise same-speaker similarity head.
//!
//! For per-utterance embeddings `h_1 .. h_m` (produced by an external
//! sentence encoder) the head scores every ordered pair:
//!
//! ```text
//! p[i][j] = sigmoid(w2 . gelu(W1 [h_i; h_j; |h_i - h_j|] + b1) + b2)
//! ```
//!
//! and is trained with `mse(p, y) + mse(p, p^T)`, the second term pushing the
//! prediction towards symmetry. GeLU is the exact Gaussian-error-function
//! form, not the tanh approximation.

use std::path::Path;

use ndarray::{Array1, Array2, Dimension};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::CharacterId;
use crate::error::{Error, Result};
use crate::num::Scalar;
use crate::rng::seeded_rng;

/// Logistic sigmoid, stable for large negative inputs.
pub fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

/// Exact GeLU: `x * Phi(x)` with the Gaussian CDF via `erf`.
pub fn gelu<S: Scalar>(x: S) -> S {
    let half = S::from_f64c(0.5);
    let sqrt2 = S::from_f64c(std::f64::consts::SQRT_2);
    half * x * (S::one() + (x / sqrt2).gauss_erf())
}

/// Derivative of [`gelu`]: `Phi(x) + x * phi(x)`.
pub fn gelu_prime<S: Scalar>(x: S) -> S {
    let half = S::from_f64c(0.5);
    let sqrt2 = S::from_f64c(std::f64::consts::SQRT_2);
    let inv_sqrt_2pi = S::from_f64c(0.398_942_280_401_432_7);
    let cdf = half * (S::one() + (x / sqrt2).gauss_erf());
    let pdf = inv_sqrt_2pi * (-(x * x) * half).exp();
    cdf + x * pdf
}

/// Learnable parameters of the head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(
    try_from = "HeadParamsRaw<S>",
    into = "HeadParamsRaw<S>",
    bound(serialize = "S: Serialize", deserialize = "S: serde::de::DeserializeOwned")
)]
pub struct HeadParams<S: Scalar> {
    /// `hidden_dim x 3d` input projection.
    pub w1: Array2<S>,
    pub b1: Array1<S>,
    /// `hidden_dim` output projection (single row).
    pub w2: Array1<S>,
    pub b2: S,
}

#[derive(Serialize, Deserialize)]
struct HeadParamsRaw<S> {
    w1: Vec<Vec<S>>,
    b1: Vec<S>,
    w2: Vec<S>,
    b2: S,
}

impl<S: Scalar> TryFrom<HeadParamsRaw<S>> for HeadParams<S> {
    type Error = Error;
    fn try_from(raw: HeadParamsRaw<S>) -> Result<Self> {
        let hidden = raw.w1.len();
        let triple = raw.w1.first().map_or(0, Vec::len);
        if triple == 0 || triple % 3 != 0 {
            return Err(Error::Shape(format!(
                "w1 row length {triple} is not a positive multiple of 3"
            )));
        }
        if raw.w1.iter().any(|row| row.len() != triple) {
            return Err(Error::Shape("w1 rows have inconsistent lengths".into()));
        }
        if raw.b1.len() != hidden || raw.w2.len() != hidden {
            return Err(Error::Shape(format!(
                "b1/w2 lengths ({}, {}) do not match hidden dim {hidden}",
                raw.b1.len(),
                raw.w2.len()
            )));
        }
        let mut w1 = Array2::zeros((hidden, triple));
        for (i, row) in raw.w1.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                w1[(i, j)] = *v;
            }
        }
        let params = HeadParams {
            w1,
            b1: Array1::from_vec(raw.b1),
            w2: Array1::from_vec(raw.w2),
            b2: raw.b2,
        };
        if !params.is_finite() {
            return Err(Error::InvalidInput("head parameters must be finite".into()));
        }
        Ok(params)
    }
}

impl<S: Scalar> From<HeadParams<S>> for HeadParamsRaw<S> {
    fn from(p: HeadParams<S>) -> Self {
        HeadParamsRaw {
            w1: p.w1.outer_iter().map(|r| r.to_vec()).collect(),
            b1: p.b1.to_vec(),
            w2: p.w2.to_vec(),
            b2: p.b2,
        }
    }
}

impl<S: Scalar> HeadParams<S> {
    /// All-zero parameters (every prediction is `sigmoid(0) = 0.5`).
    pub fn zeros(embedding_dim: usize, hidden_dim: usize) -> Self {
        HeadParams {
            w1: Array2::zeros((hidden_dim, 3 * embedding_dim)),
            b1: Array1::zeros(hidden_dim),
            w2: Array1::zeros(hidden_dim),
            b2: S::zero(),
        }
    }

    /// Seeded symmetric-uniform init, range scaled by each layer's fan-in.
    pub fn init(embedding_dim: usize, hidden_dim: usize, seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        let r1 = 1.0 / (3.0 * embedding_dim as f64).sqrt();
        let r2 = 1.0 / (hidden_dim as f64).sqrt();
        let mut draw = |range: f64| S::from_f64c(rng.random_range(-range..range));
        let w1 = Array2::from_shape_simple_fn((hidden_dim, 3 * embedding_dim), || draw(r1));
        let b1 = Array1::from_shape_simple_fn(hidden_dim, || draw(r1));
        let w2 = Array1::from_shape_simple_fn(hidden_dim, || draw(r2));
        let b2 = draw(r2);
        HeadParams { w1, b1, w2, b2 }
    }

    pub fn embedding_dim(&self) -> usize {
        self.w1.ncols() / 3
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn is_finite(&self) -> bool {
        self.w1.iter().all(|v| v.is_finite())
            && self.b1.iter().all(|v| v.is_finite())
            && self.w2.iter().all(|v| v.is_finite())
            && self.b2.is_finite()
    }
}

/// Gradient of the loss with respect to every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGradient<S: Scalar> {
    pub w1: Array2<S>,
    pub b1: Array1<S>,
    pub w2: Array1<S>,
    pub b2: S,
}

impl<S: Scalar> HeadGradient<S> {
    pub fn zeros_like(params: &HeadParams<S>) -> Self {
        HeadGradient {
            w1: Array2::zeros(params.w1.raw_dim()),
            b1: Array1::zeros(params.b1.raw_dim()),
            w2: Array1::zeros(params.w2.raw_dim()),
            b2: S::zero(),
        }
    }

    pub fn scale(&mut self, factor: S) {
        self.w1.mapv_inplace(|v| v * factor);
        self.b1.mapv_inplace(|v| v * factor);
        self.w2.mapv_inplace(|v| v * factor);
        self.b2 = self.b2 * factor;
    }

    pub fn add(&mut self, other: &HeadGradient<S>) {
        self.w1 += &other.w1;
        self.b1 += &other.b1;
        self.w2 += &other.w2;
        self.b2 += other.b2;
    }

    pub fn max_abs(&self) -> S {
        let fold = |acc: S, v: &S| acc.max(v.abs());
        let mut m = self.b2.abs();
        m = self.w1.iter().fold(m, fold);
        m = self.b1.iter().fold(m, fold);
        m = self.w2.iter().fold(m, fold);
        m
    }
}

/// Square matrix of pairwise same-speaker probabilities, entries strictly
/// inside (0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix<S>(Array2<S>);

impl<S: Scalar> SimilarityMatrix<S> {
    pub fn new(values: Array2<S>) -> Result<Self> {
        if values.nrows() != values.ncols() {
            return Err(Error::Shape(format!(
                "similarity matrix must be square, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        if values.iter().any(|p| !(*p > S::zero() && *p < S::one())) {
            return Err(Error::InvalidInput(
                "similarity entries must lie strictly inside (0, 1)".into(),
            ));
        }
        Ok(SimilarityMatrix(values))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_array(&self) -> &Array2<S> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<S> {
        self.0
    }
}

/// Ground-truth pairwise labels: symmetric 0/1 matrix with unit diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMatrix<S>(Array2<S>);

impl<S: Scalar> LabelMatrix<S> {
    pub fn new(values: Array2<S>) -> Result<Self> {
        if values.nrows() != values.ncols() {
            return Err(Error::Shape(format!(
                "label matrix must be square, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        let m = values.nrows();
        for i in 0..m {
            if values[(i, i)] != S::one() {
                return Err(Error::InvalidInput("label matrix diagonal must be 1".into()));
            }
            for j in 0..m {
                let v = values[(i, j)];
                if v != S::zero() && v != S::one() {
                    return Err(Error::InvalidInput(
                        "label matrix entries must be exactly 0 or 1".into(),
                    ));
                }
                if values[(i, j)] != values[(j, i)] {
                    return Err(Error::InvalidInput("label matrix must be symmetric".into()));
                }
            }
        }
        Ok(LabelMatrix(values))
    }

    /// Labels derived from per-turn speakers: 1 when two turns share one.
    pub fn from_speakers(speakers: &[CharacterId]) -> Self {
        let m = speakers.len();
        let mut y = Array2::zeros((m, m));
        for i in 0..m {
            for j in 0..m {
                if speakers[i] == speakers[j] {
                    y[(i, j)] = S::one();
                }
            }
        }
        LabelMatrix(y)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_array(&self) -> &Array2<S> {
        &self.0
    }
}

fn pair_input<S: Scalar>(hi: &Array1<S>, hj: &Array1<S>) -> Array1<S> {
    let d = hi.len();
    let mut z = Array1::zeros(3 * d);
    for k in 0..d {
        z[k] = hi[k];
        z[d + k] = hj[k];
        z[2 * d + k] = (hi[k] - hj[k]).abs();
    }
    z
}

fn check_embeddings<S: Scalar>(params: &HeadParams<S>, embeddings: &[Array1<S>]) -> Result<()> {
    if embeddings.is_empty() {
        return Err(Error::InvalidInput("no utterance embeddings given".into()));
    }
    let d = params.embedding_dim();
    for (i, h) in embeddings.iter().enumerate() {
        if h.len() != d {
            return Err(Error::Shape(format!(
                "embedding {i} has dimension {}, head expects {d}",
                h.len()
            )));
        }
    }
    Ok(())
}

/// Scores every ordered utterance pair.
pub fn head_forward<S: Scalar>(
    params: &HeadParams<S>,
    embeddings: &[Array1<S>],
) -> Result<SimilarityMatrix<S>> {
    check_embeddings(params, embeddings)?;
    let m = embeddings.len();
    let mut p = Array2::zeros((m, m));
    for i in 0..m {
        for j in 0..m {
            let z = pair_input(&embeddings[i], &embeddings[j]);
            let pre = params.w1.dot(&z) + &params.b1;
            let hidden = pre.mapv(gelu);
            let logit = params.w2.dot(&hidden) + params.b2;
            p[(i, j)] = sigmoid(logit);
        }
    }
    SimilarityMatrix::new(p)
}

/// `mse(p, y) + mse(p, p^T)`, both means taken over all `m^2` entries.
pub fn head_loss<S: Scalar>(p: &Array2<S>, y: &LabelMatrix<S>) -> Result<S> {
    if p.raw_dim() != y.as_array().raw_dim() {
        return Err(Error::Shape(format!(
            "prediction is {}x{}, labels are {}x{}",
            p.nrows(),
            p.ncols(),
            y.dim(),
            y.dim()
        )));
    }
    let m = p.nrows();
    let count = S::from_f64c((m * m) as f64);
    let y = y.as_array();
    let mut fit = S::zero();
    let mut sym = S::zero();
    for i in 0..m {
        for j in 0..m {
            let df = p[(i, j)] - y[(i, j)];
            let ds = p[(i, j)] - p[(j, i)];
            fit += df * df;
            sym += ds * ds;
        }
    }
    Ok(fit / count + sym / count)
}

/// Loss and its exact analytic gradient for one session.
pub fn head_gradient<S: Scalar>(
    params: &HeadParams<S>,
    embeddings: &[Array1<S>],
    labels: &LabelMatrix<S>,
) -> Result<(S, HeadGradient<S>)> {
    check_embeddings(params, embeddings)?;
    let m = embeddings.len();
    if labels.dim() != m {
        return Err(Error::Shape(format!(
            "labels are {}x{} for {m} embeddings",
            labels.dim(),
            labels.dim()
        )));
    }
    let p = head_forward(params, embeddings)?;
    let p = p.as_array();
    let y = labels.as_array();
    let loss = head_loss(p, labels)?;

    let count = S::from_f64c((m * m) as f64);
    let two = S::from_f64c(2.0);
    let four = S::from_f64c(4.0);
    let mut grad = HeadGradient::zeros_like(params);
    for i in 0..m {
        for j in 0..m {
            // d loss / d p_ij, covering both occurrences of p_ij in the
            // symmetry term.
            let dfit = two * (p[(i, j)] - y[(i, j)]) / count;
            let dsym = four * (p[(i, j)] - p[(j, i)]) / count;
            let dp = dfit + dsym;

            let z = pair_input(&embeddings[i], &embeddings[j]);
            let pre = params.w1.dot(&z) + &params.b1;
            let hidden = pre.mapv(gelu);
            let pij = p[(i, j)];
            let dlogit = dp * pij * (S::one() - pij);

            grad.b2 += dlogit;
            for k in 0..params.hidden_dim() {
                grad.w2[k] += dlogit * hidden[k];
                let dpre = dlogit * params.w2[k] * gelu_prime(pre[k]);
                grad.b1[k] += dpre;
                for (c, &zc) in z.iter().enumerate() {
                    grad.w1[(k, c)] += dpre * zc;
                }
            }
        }
    }
    Ok((loss, grad))
}

/// One training example: a session's utterance embeddings and pair labels.
#[derive(Debug, Clone)]
pub struct HeadExample<S: Scalar> {
    pub embeddings: Vec<Array1<S>>,
    pub labels: LabelMatrix<S>,
}

/// First-order optimizer for [`train_head`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    /// Plain gradient descent.
    Sgd,
    /// Adaptive moment estimation.
    Adam {
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden_dim: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden_dim: 16,
            learning_rate: 0.5,
            epochs: 300,
            batch_size: 8,
            seed: 0,
            optimizer: Optimizer::Sgd,
        }
    }
}

/// Trained parameters plus the per-epoch mean loss trace.
#[derive(Debug, Clone)]
pub struct TrainOutcome<S: Scalar> {
    pub params: HeadParams<S>,
    pub loss_trace: Vec<f64>,
}

/// Seeded mini-batch gradient descent on `mse(p, y) + mse(p, p^T)`.
///
/// Deterministic given the config; aborts with diagnostics when the loss
/// stops being finite.
pub fn train_head<S: Scalar>(
    dataset: &[HeadExample<S>],
    config: &TrainConfig,
) -> Result<TrainOutcome<S>> {
    if dataset.is_empty() {
        return Err(Error::InvalidInput("training dataset is empty".into()));
    }
    if config.batch_size < 1 {
        return Err(Error::InvalidInput("batch_size must be >= 1".into()));
    }
    if config.hidden_dim < 1 {
        return Err(Error::InvalidInput("hidden_dim must be >= 1".into()));
    }
    let d = dataset[0].embeddings.first().map_or(0, Array1::len);
    if d == 0 {
        return Err(Error::InvalidInput("embeddings must be non-empty vectors".into()));
    }
    for (i, example) in dataset.iter().enumerate() {
        if example.embeddings.len() != example.labels.dim() {
            return Err(Error::Shape(format!(
                "example {i}: {} embeddings but {}x{} labels",
                example.embeddings.len(),
                example.labels.dim(),
                example.labels.dim()
            )));
        }
        if example.embeddings.iter().any(|h| h.len() != d) {
            return Err(Error::Shape(format!(
                "example {i}: embedding dimension differs from {d}"
            )));
        }
    }

    let mut params = HeadParams::init(d, config.hidden_dim, config.seed);
    let mut rng = seeded_rng(crate::rng::derive_seed(config.seed, 1));
    let lr = S::from_f64c(config.learning_rate);
    let mut adam_m = HeadGradient::zeros_like(&params);
    let mut adam_v = HeadGradient::zeros_like(&params);
    let mut adam_t = 0u32;

    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut trace = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        // Fisher-Yates reshuffle per epoch.
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0f64;
        for batch in order.chunks(config.batch_size) {
            let mut grad = HeadGradient::zeros_like(&params);
            let mut batch_loss = S::zero();
            for &idx in batch {
                let example = &dataset[idx];
                let (loss, g) = head_gradient(&params, &example.embeddings, &example.labels)?;
                batch_loss += loss;
                grad.add(&g);
            }
            let scale = S::from_f64c(1.0 / batch.len() as f64);
            grad.scale(scale);
            batch_loss = batch_loss * scale;
            let batch_loss_f64 = batch_loss.to_f64().unwrap_or(f64::NAN);
            if !batch_loss_f64.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    loss: batch_loss_f64,
                });
            }
            epoch_loss += batch_loss_f64 * batch.len() as f64;

            match config.optimizer {
                Optimizer::Sgd => {
                    sgd_step(&mut params.w1, &grad.w1, lr);
                    sgd_step(&mut params.b1, &grad.b1, lr);
                    sgd_step(&mut params.w2, &grad.w2, lr);
                    params.b2 = params.b2 - lr * grad.b2;
                }
                Optimizer::Adam {
                    beta1,
                    beta2,
                    epsilon,
                } => {
                    adam_t += 1;
                    let ctx = AdamCtx {
                        lr,
                        beta1: S::from_f64c(beta1),
                        beta2: S::from_f64c(beta2),
                        epsilon: S::from_f64c(epsilon),
                        correction1: S::from_f64c(1.0 - beta1.powi(adam_t as i32)),
                        correction2: S::from_f64c(1.0 - beta2.powi(adam_t as i32)),
                    };
                    adam_step(&mut params.w1, &grad.w1, &mut adam_m.w1, &mut adam_v.w1, &ctx);
                    adam_step(&mut params.b1, &grad.b1, &mut adam_m.b1, &mut adam_v.b1, &ctx);
                    adam_step(&mut params.w2, &grad.w2, &mut adam_m.w2, &mut adam_v.w2, &ctx);
                    let m = ctx.beta1 * adam_m.b2 + (S::one() - ctx.beta1) * grad.b2;
                    let v = ctx.beta2 * adam_v.b2 + (S::one() - ctx.beta2) * grad.b2 * grad.b2;
                    adam_m.b2 = m;
                    adam_v.b2 = v;
                    params.b2 =
                        params.b2 - ctx.lr * (m / ctx.correction1) / ((v / ctx.correction2).sqrt() + ctx.epsilon);
                }
            }
        }
        trace.push(epoch_loss / dataset.len() as f64);
    }

    Ok(TrainOutcome { params, loss_trace: trace })
}

fn sgd_step<S: Scalar, D: Dimension>(
    param: &mut ndarray::Array<S, D>,
    grad: &ndarray::Array<S, D>,
    lr: S,
) {
    param.zip_mut_with(grad, |p, g| *p = *p - lr * *g);
}

struct AdamCtx<S> {
    lr: S,
    beta1: S,
    beta2: S,
    epsilon: S,
    correction1: S,
    correction2: S,
}

fn adam_step<S: Scalar, D: Dimension>(
    param: &mut ndarray::Array<S, D>,
    grad: &ndarray::Array<S, D>,
    m: &mut ndarray::Array<S, D>,
    v: &mut ndarray::Array<S, D>,
    ctx: &AdamCtx<S>,
) {
    let one = S::one();
    ndarray::Zip::from(param)
        .and(grad)
        .and(m)
        .and(v)
        .for_each(|p, &g, m, v| {
            *m = ctx.beta1 * *m + (one - ctx.beta1) * g;
            *v = ctx.beta2 * *v + (one - ctx.beta2) * g * g;
            let mhat = *m / ctx.correction1;
            let vhat = *v / ctx.correction2;
            *p = *p - ctx.lr * mhat / (vhat.sqrt() + ctx.epsilon);
        });
}

/// Fraction of pairwise predictions on the correct side of `threshold`.
pub fn pairwise_accuracy<S: Scalar>(
    params: &HeadParams<S>,
    dataset: &[HeadExample<S>],
    threshold: S,
) -> Result<f64> {
    let mut total = 0usize;
    let mut correct = 0usize;
    for example in dataset {
        let p = head_forward(params, &example.embeddings)?;
        let p = p.as_array();
        let y = example.labels.as_array();
        for i in 0..p.nrows() {
            for j in 0..p.ncols() {
                total += 1;
                let predicted_same = p[(i, j)] >= threshold;
                let is_same = y[(i, j)] == S::one();
                if predicted_same == is_same {
                    correct += 1;
                }
            }
        }
    }
    if total == 0 {
        return Err(Error::InvalidInput("no pairs to score".into()));
    }
    Ok(correct as f64 / total as f64)
}

/// Saves head parameters as JSON.
pub fn save_head_params(params: &HeadParams<f64>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer(std::io::BufWriter::new(file), params)
        .map_err(|e| Error::io(path, std::io::Error::other(e)))
}

/// Loads head parameters from JSON.
pub fn load_head_params(path: impl AsRef<Path>) -> Result<HeadParams<f64>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(std::io::BufReader::new(file))
        .map_err(|e| Error::parse(path, 1, e.to_string()))
}
