//! Differentiable forward pass: topic-word distributions from embedding
//! distances, the shared document encoder, the logistic-normal latent and
//! the document reconstruction.
//!
//! Backward passes are written by hand; every one of them is checked
//! against central finite differences in the test suites.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::corpus::BowDocument;
use crate::embeddings::EmbeddingState;
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};

/// Default encoder hidden width.
pub const DEFAULT_HIDDEN: usize = 256;

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax(values: &[f64]) -> Vec<f64> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `beta[k, i]`: correlation of word `i` with topic `k` at one slice.
/// Every word column sums to one over topics.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicWordDistribution {
    pub beta: Array2<f64>,
}

impl TopicWordDistribution {
    pub fn num_topics(&self) -> usize {
        self.beta.nrows()
    }

    pub fn vocab_size(&self) -> usize {
        self.beta.ncols()
    }

    /// Word ids of topic `k` ranked by score, ties to the lower id.
    pub fn ranked_words(&self, k: usize) -> Vec<usize> {
        let row = self.beta.row(k);
        let mut ids: Vec<usize> = (0..row.len()).collect();
        ids.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        ids
    }

    /// Zeroes the scores of `words` in every topic.
    pub fn mask_words(&mut self, words: &[usize]) {
        for &w in words {
            self.beta.column_mut(w).fill(0.0);
        }
    }
}

/// Squared distances `|phi_k - w_i|^2` via the expanded form, clamped at 0.
fn squared_distances(phi_t: ArrayView2<f64>, word: ArrayView2<f64>) -> Array2<f64> {
    let phi_sq: Array1<f64> = phi_t.rows().into_iter().map(|r| r.dot(&r)).collect();
    let word_sq: Array1<f64> = word.rows().into_iter().map(|r| r.dot(&r)).collect();
    let mut dist = phi_t.dot(&word.t());
    for ((k, i), d) in dist.indexed_iter_mut() {
        *d = (phi_sq[k] + word_sq[i] - 2.0 * *d).max(0.0);
    }
    dist
}

/// Softmax over topics of `-|phi_k - w_i|^2 / pi`, per word.
pub fn topic_word_distribution(
    phi_t: ArrayView2<f64>,
    word: ArrayView2<f64>,
    pi: f64,
) -> Result<TopicWordDistribution> {
    if phi_t.ncols() != word.ncols() {
        return Err(Error::Dimension(format!(
            "topic embeddings have {} dims, word embeddings {}",
            phi_t.ncols(),
            word.ncols()
        )));
    }
    if !(pi > 0.0 && pi.is_finite()) {
        return Err(Error::InvalidInput(format!("scale pi must be positive, got {pi}")));
    }
    if phi_t.iter().chain(word.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("embeddings".into()));
    }
    let mut beta = squared_distances(phi_t, word);
    for mut col in beta.columns_mut() {
        let min = col.iter().copied().fold(f64::INFINITY, f64::min);
        col.mapv_inplace(|d| (-(d - min) / pi).exp());
        let sum = col.sum();
        col /= sum;
    }
    Ok(TopicWordDistribution { beta })
}

/// Accumulates gradients of a scalar through the topic-word map, given
/// `grad_beta = dL/dbeta` and the forward output.
pub(crate) fn topic_word_backward(
    phi_t: ArrayView2<f64>,
    word: ArrayView2<f64>,
    pi: f64,
    beta: ArrayView2<f64>,
    grad_beta: ArrayView2<f64>,
    mut grad_phi_t: ArrayViewMut2<f64>,
    grad_word: Option<ArrayViewMut2<f64>>,
) {
    // d/dD of L, where D is the squared-distance matrix.
    let mut grad_dist = Array2::<f64>::zeros(beta.raw_dim());
    for i in 0..beta.ncols() {
        let b = beta.column(i);
        let g = grad_beta.column(i);
        let mean = b.dot(&g);
        for k in 0..beta.nrows() {
            grad_dist[[k, i]] = -b[k] * (g[k] - mean) / pi;
        }
    }
    let row_sums = grad_dist.sum_axis(Axis(1));
    let gw = grad_dist.dot(&word);
    for k in 0..phi_t.nrows() {
        for j in 0..phi_t.ncols() {
            grad_phi_t[[k, j]] += 2.0 * (row_sums[k] * phi_t[[k, j]] - gw[[k, j]]);
        }
    }
    if let Some(mut grad_word) = grad_word {
        let col_sums = grad_dist.sum_axis(Axis(0));
        let gp = grad_dist.t().dot(&phi_t);
        for i in 0..word.nrows() {
            for j in 0..word.ncols() {
                grad_word[[i, j]] += 2.0 * (col_sums[i] * word[[i, j]] - gp[[i, j]]);
            }
        }
    }
}

/// Logistic-normal prior approximating a symmetric Dirichlet:
/// zero mean and variance `(K - 1) / K` per dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorParams {
    pub mean: Array1<f64>,
    pub variance: Array1<f64>,
}

impl PriorParams {
    pub fn laplace(num_topics: usize) -> Self {
        let k = num_topics as f64;
        PriorParams {
            mean: Array1::zeros(num_topics),
            variance: Array1::from_elem(num_topics, (k - 1.0) / k),
        }
    }
}

/// Two softplus layers `|V| -> H -> H` and two affine heads producing the
/// posterior mean and log-variance.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub w_mean: Array2<f64>,
    pub b_mean: Array1<f64>,
    pub w_logvar: Array2<f64>,
    pub b_logvar: Array1<f64>,
    /// Divide counts by the document length before the first layer.
    pub normalize_input: bool,
}

fn uniform_matrix(rng: &mut impl Rng, rows: usize, cols: usize, bound: f64) -> Array2<f64> {
    let dist = Uniform::new_inclusive(-bound, bound).expect("valid bound");
    Array2::from_shape_simple_fn((rows, cols), || dist.sample(rng))
}

fn uniform_vector(rng: &mut impl Rng, len: usize, bound: f64) -> Array1<f64> {
    let dist = Uniform::new_inclusive(-bound, bound).expect("valid bound");
    Array1::from_shape_simple_fn(len, || dist.sample(rng))
}

impl EncoderParams {
    /// Uniform `+-1/sqrt(fan_in)` initialization.
    pub fn init(vocab_size: usize, hidden: usize, num_topics: usize, seed: u64) -> Self {
        let mut rng = stream(seed, Stream::EncoderInit);
        let b_in = 1.0 / (vocab_size as f64).sqrt();
        let b_h = 1.0 / (hidden as f64).sqrt();
        EncoderParams {
            w1: uniform_matrix(&mut rng, vocab_size, hidden, b_in),
            b1: uniform_vector(&mut rng, hidden, b_in),
            w2: uniform_matrix(&mut rng, hidden, hidden, b_h),
            b2: uniform_vector(&mut rng, hidden, b_h),
            w_mean: uniform_matrix(&mut rng, hidden, num_topics, b_h),
            b_mean: uniform_vector(&mut rng, num_topics, b_h),
            w_logvar: uniform_matrix(&mut rng, hidden, num_topics, b_h),
            b_logvar: uniform_vector(&mut rng, num_topics, b_h),
            normalize_input: false,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.w1.nrows()
    }

    pub fn hidden(&self) -> usize {
        self.w1.ncols()
    }

    pub fn num_topics(&self) -> usize {
        self.w_mean.ncols()
    }

    pub(crate) fn zeros_like(&self) -> Self {
        EncoderParams {
            w1: Array2::zeros(self.w1.raw_dim()),
            b1: Array1::zeros(self.b1.raw_dim()),
            w2: Array2::zeros(self.w2.raw_dim()),
            b2: Array1::zeros(self.b2.raw_dim()),
            w_mean: Array2::zeros(self.w_mean.raw_dim()),
            b_mean: Array1::zeros(self.b_mean.raw_dim()),
            w_logvar: Array2::zeros(self.w_logvar.raw_dim()),
            b_logvar: Array1::zeros(self.b_logvar.raw_dim()),
            normalize_input: self.normalize_input,
        }
    }
}

/// Cached activations of a batch forward pass, rows are documents.
#[derive(Debug, Clone)]
pub(crate) struct EncoderForward {
    pub pre1: Array2<f64>,
    pub hidden1: Array2<f64>,
    pub pre2: Array2<f64>,
    pub hidden2: Array2<f64>,
    pub mean: Array2<f64>,
    pub logvar: Array2<f64>,
}

fn input_weights(doc: &BowDocument, normalize: bool) -> impl Iterator<Item = (usize, f64)> + '_ {
    let scale = if normalize { 1.0 / doc.total() as f64 } else { 1.0 };
    doc.entries().iter().map(move |&(w, c)| (w, c as f64 * scale))
}

impl EncoderParams {
    pub(crate) fn forward_batch(&self, docs: &[&BowDocument]) -> Result<EncoderForward> {
        let hidden = self.hidden();
        let mut pre1 = Array2::zeros((docs.len(), hidden));
        for (d, doc) in docs.iter().enumerate() {
            if doc.is_empty() {
                return Err(Error::InvalidInput("all-zero bag of words".into()));
            }
            let mut row = pre1.row_mut(d);
            row.assign(&self.b1);
            for (w, x) in input_weights(doc, self.normalize_input) {
                if w >= self.vocab_size() {
                    return Err(Error::Dimension(format!("word id {w} outside encoder input")));
                }
                row.scaled_add(x, &self.w1.row(w));
            }
        }
        let hidden1 = pre1.mapv(softplus);
        let pre2 = hidden1.dot(&self.w2) + &self.b2;
        let hidden2 = pre2.mapv(softplus);
        let mean = hidden2.dot(&self.w_mean) + &self.b_mean;
        let logvar = hidden2.dot(&self.w_logvar) + &self.b_logvar;
        Ok(EncoderForward {
            pre1,
            hidden1,
            pre2,
            hidden2,
            mean,
            logvar,
        })
    }

    /// Accumulates parameter gradients given `dL/dmean` and `dL/dlogvar`.
    pub(crate) fn backward_batch(
        &self,
        docs: &[&BowDocument],
        fwd: &EncoderForward,
        grad_mean: &Array2<f64>,
        grad_logvar: &Array2<f64>,
        grad: &mut EncoderParams,
    ) {
        grad.w_mean += &fwd.hidden2.t().dot(grad_mean);
        grad.b_mean += &grad_mean.sum_axis(Axis(0));
        grad.w_logvar += &fwd.hidden2.t().dot(grad_logvar);
        grad.b_logvar += &grad_logvar.sum_axis(Axis(0));

        let mut d_pre2 = grad_mean.dot(&self.w_mean.t()) + grad_logvar.dot(&self.w_logvar.t());
        d_pre2.zip_mut_with(&fwd.pre2, |g, &a| *g *= sigmoid(a));
        grad.w2 += &fwd.hidden1.t().dot(&d_pre2);
        grad.b2 += &d_pre2.sum_axis(Axis(0));

        let mut d_pre1 = d_pre2.dot(&self.w2.t());
        d_pre1.zip_mut_with(&fwd.pre1, |g, &a| *g *= sigmoid(a));
        grad.b1 += &d_pre1.sum_axis(Axis(0));
        for (d, doc) in docs.iter().enumerate() {
            let row = d_pre1.row(d);
            for (w, x) in input_weights(doc, self.normalize_input) {
                grad.w1.row_mut(w).scaled_add(x, &row);
            }
        }
    }
}

/// Posterior mean and diagonal covariance for one dense bag of words.
pub fn encode(bow: &[f64], params: &EncoderParams) -> Result<(Array1<f64>, Array1<f64>)> {
    if bow.len() != params.vocab_size() {
        return Err(Error::Dimension(format!(
            "bag of words has {} entries, encoder expects {}",
            bow.len(),
            params.vocab_size()
        )));
    }
    if bow.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
        return Err(Error::InvalidInput("bag of words must be finite and nonnegative".into()));
    }
    let total: f64 = bow.iter().sum();
    if total == 0.0 {
        return Err(Error::InvalidInput("all-zero bag of words".into()));
    }
    let scale = if params.normalize_input { 1.0 / total } else { 1.0 };
    let mut pre1 = params.b1.clone();
    for (w, &x) in bow.iter().enumerate() {
        if x != 0.0 {
            pre1.scaled_add(x * scale, &params.w1.row(w));
        }
    }
    let h1 = pre1.mapv(softplus);
    let h2 = (h1.dot(&params.w2) + &params.b2).mapv(softplus);
    let mean = h2.dot(&params.w_mean) + &params.b_mean;
    let sigma = (h2.dot(&params.w_logvar) + &params.b_logvar).mapv(f64::exp);
    Ok((mean, sigma))
}

/// `r = mu + sqrt(sigma) * eps`.
pub fn reparameterize(mean: ArrayView1<f64>, sigma_diag: ArrayView1<f64>, eps: ArrayView1<f64>) -> Array1<f64> {
    let mut r = mean.to_owned();
    for ((r, &s), &e) in r.iter_mut().zip(sigma_diag).zip(eps) {
        *r += s.sqrt() * e;
    }
    r
}

/// A point on the probability simplex over topics.
#[derive(Debug, Clone, PartialEq)]
pub struct DocTopicDistribution {
    pub theta: Array1<f64>,
}

pub fn doc_topic_distribution(r: ArrayView1<f64>) -> DocTopicDistribution {
    DocTopicDistribution {
        theta: Array1::from(softmax(&r.to_vec())),
    }
}

/// Word probabilities `softmax(beta^T theta)`, one entry per vocabulary word.
pub fn reconstruct(beta: &TopicWordDistribution, theta: &DocTopicDistribution) -> Result<Array1<f64>> {
    if beta.num_topics() != theta.theta.len() {
        return Err(Error::Dimension(format!(
            "beta has {} topics, theta {}",
            beta.num_topics(),
            theta.theta.len()
        )));
    }
    let logits = beta.beta.t().dot(&theta.theta);
    Ok(Array1::from(softmax(logits.as_slice().expect("contiguous"))))
}

/// All trainable parameters. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub embeddings: EmbeddingState,
    pub encoder: EncoderParams,
}

impl ModelParams {
    pub fn zeros_like(&self) -> Self {
        ModelParams {
            embeddings: EmbeddingState {
                word: Array2::zeros(self.embeddings.word.raw_dim()),
                topic: ndarray::Array3::zeros(self.embeddings.topic.raw_dim()),
            },
            encoder: self.encoder.zeros_like(),
        }
    }

    /// Named flat views of every tensor, in a fixed order.
    pub fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        let e = &self.encoder;
        vec![
            ("word_embeddings", self.embeddings.word.as_slice().expect("standard layout")),
            ("topic_embeddings", self.embeddings.topic.as_slice().expect("standard layout")),
            ("encoder.w1", e.w1.as_slice().expect("standard layout")),
            ("encoder.b1", e.b1.as_slice().expect("standard layout")),
            ("encoder.w2", e.w2.as_slice().expect("standard layout")),
            ("encoder.b2", e.b2.as_slice().expect("standard layout")),
            ("encoder.w_mean", e.w_mean.as_slice().expect("standard layout")),
            ("encoder.b_mean", e.b_mean.as_slice().expect("standard layout")),
            ("encoder.w_logvar", e.w_logvar.as_slice().expect("standard layout")),
            ("encoder.b_logvar", e.b_logvar.as_slice().expect("standard layout")),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        let e = &mut self.encoder;
        vec![
            ("word_embeddings", self.embeddings.word.as_slice_mut().expect("standard layout")),
            ("topic_embeddings", self.embeddings.topic.as_slice_mut().expect("standard layout")),
            ("encoder.w1", e.w1.as_slice_mut().expect("standard layout")),
            ("encoder.b1", e.b1.as_slice_mut().expect("standard layout")),
            ("encoder.w2", e.w2.as_slice_mut().expect("standard layout")),
            ("encoder.b2", e.b2.as_slice_mut().expect("standard layout")),
            ("encoder.w_mean", e.w_mean.as_slice_mut().expect("standard layout")),
            ("encoder.b_mean", e.b_mean.as_slice_mut().expect("standard layout")),
            ("encoder.w_logvar", e.w_logvar.as_slice_mut().expect("standard layout")),
            ("encoder.b_logvar", e.b_logvar.as_slice_mut().expect("standard layout")),
        ]
    }

    pub fn shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        let e = &self.encoder;
        vec![
            ("word_embeddings", self.embeddings.word.shape().to_vec()),
            ("topic_embeddings", self.embeddings.topic.shape().to_vec()),
            ("encoder.w1", e.w1.shape().to_vec()),
            ("encoder.b1", e.b1.shape().to_vec()),
            ("encoder.w2", e.w2.shape().to_vec()),
            ("encoder.b2", e.b2.shape().to_vec()),
            ("encoder.w_mean", e.w_mean.shape().to_vec()),
            ("encoder.b_mean", e.b_mean.shape().to_vec()),
            ("encoder.w_logvar", e.w_logvar.shape().to_vec()),
            ("encoder.b_logvar", e.b_logvar.shape().to_vec()),
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    pub fn topic_word(&self, t: usize, pi: f64) -> Result<TopicWordDistribution> {
        topic_word_distribution(
            self.embeddings.topic.index_axis(Axis(0), t),
            self.embeddings.word.view(),
            pi,
        )
    }
}
