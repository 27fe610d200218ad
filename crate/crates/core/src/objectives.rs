//! Loss terms of the chain-free dynamic topic model.
//!
//! * topic-modeling ELBO: reconstruction `-x^T log softmax(beta^(t) theta)`
//!   plus the analytic diagonal-Gaussian KL to the logistic-normal prior;
//! * evolution-tracking contrastive loss: a positive term pulling topic `k`
//!   at slice `t` toward topic `k` at `t - 1`, and a negative term pushing
//!   apart different topics within a slice;
//! * unassociated word exclusion: pushes each slice's topic embeddings away
//!   from the embeddings of top words that never occur in that slice.
//!
//! Every `*_with_grad` function accumulates into a gradient buffer and
//! returns the loss value; the plain variants only evaluate.

use std::collections::BTreeSet;

use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView2, ArrayView3, ArrayViewMut1, ArrayViewMut2, ArrayViewMut3, Axis};
use serde::{Deserialize, Serialize};

use crate::corpus::BowDocument;
use crate::error::{Error, Result};
use crate::model::{log_sum_exp, softmax, topic_word_backward, ModelParams, PriorParams, TopicWordDistribution};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Temperature of the scaled cosine similarity.
    pub tau: f64,
    /// Distance scale of the topic-word map.
    pub pi: f64,
    /// Evolution intensity per slice. A single entry applies to every
    /// slice; otherwise entry `t` weights the pair `(t - 1, t)` and entry 0
    /// is unused.
    pub lambda_t: Vec<f64>,
    pub gamma: f64,
    pub lambda_uwe: f64,
    /// Top words per topic used to find unassociated words.
    pub n_top: usize,
    pub enable_etc: bool,
    pub enable_negative: bool,
    pub enable_uwe: bool,
    /// Replace the exclusion loss by zeroing unassociated words at export.
    pub uwe_masking: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            tau: 0.1,
            pi: 1.0,
            lambda_t: vec![1.0],
            gamma: 1.0,
            lambda_uwe: 1.0,
            n_top: 15,
            enable_etc: true,
            enable_negative: true,
            enable_uwe: true,
            uwe_masking: false,
        }
    }
}

impl LossConfig {
    pub fn lambda_at(&self, t: usize) -> f64 {
        match self.lambda_t.as_slice() {
            [single] => *single,
            all => all[t],
        }
    }

    /// Whether the exclusion loss contributes to the objective.
    pub fn uwe_loss_active(&self) -> bool {
        self.enable_uwe && !self.uwe_masking
    }

    pub fn validate(&self, num_slices: usize) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidInput(format!("{name} must be positive, got {v}")))
            }
        };
        let nonneg = |name: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidInput(format!("{name} must be nonnegative, got {v}")))
            }
        };
        positive("tau", self.tau)?;
        positive("pi", self.pi)?;
        nonneg("gamma", self.gamma)?;
        nonneg("lambda_uwe", self.lambda_uwe)?;
        if self.n_top == 0 {
            return Err(Error::InvalidInput("n_top must be at least 1".into()));
        }
        if self.lambda_t.len() != 1 && self.lambda_t.len() != num_slices {
            return Err(Error::InvalidInput(format!(
                "lambda_t has {} entries, expected 1 or {num_slices}",
                self.lambda_t.len()
            )));
        }
        for &l in &self.lambda_t {
            nonneg("lambda_t", l)?;
        }
        Ok(())
    }
}

fn norm(v: ArrayView1<f64>) -> f64 {
    v.dot(&v).sqrt()
}

/// Scaled cosine `cos(a, b) / tau`.
pub fn similarity(a: ArrayView1<f64>, b: ArrayView1<f64>, tau: f64) -> Result<f64> {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::InvalidInput("similarity of a zero-norm vector".into()));
    }
    Ok(a.dot(&b) / (na * nb) / tau)
}

/// Adds `scale * d g(a, b) / da` and `scale * d g(a, b) / db`.
fn similarity_backward(
    a: ArrayView1<f64>,
    b: ArrayView1<f64>,
    tau: f64,
    scale: f64,
    grad_a: Option<ArrayViewMut1<f64>>,
    grad_b: Option<ArrayViewMut1<f64>>,
) {
    let (na, nb) = (norm(a), norm(b));
    let cos = a.dot(&b) / (na * nb);
    let s = scale / tau;
    if let Some(mut ga) = grad_a {
        for ((g, &x), &y) in ga.iter_mut().zip(a).zip(b) {
            *g += s * (y / (na * nb) - cos * x / (na * na));
        }
    }
    if let Some(mut gb) = grad_b {
        for ((g, &x), &y) in gb.iter_mut().zip(a).zip(b) {
            *g += s * (x / (na * nb) - cos * y / (nb * nb));
        }
    }
}

fn check_nonzero_topics(phi: ArrayView3<f64>) -> Result<()> {
    for lane in phi.lanes(Axis(2)) {
        if norm(lane) == 0.0 {
            return Err(Error::InvalidInput("zero-norm topic embedding".into()));
        }
    }
    Ok(())
}

pub fn positive_loss(phi: ArrayView3<f64>, cfg: &LossConfig) -> Result<f64> {
    positive_loss_with_grad(phi, cfg, None)
}

pub fn positive_loss_with_grad(
    phi: ArrayView3<f64>,
    cfg: &LossConfig,
    mut grad: Option<ArrayViewMut3<f64>>,
) -> Result<f64> {
    check_nonzero_topics(phi)?;
    let (slices, topics, _) = phi.dim();
    let mut loss = 0.0;
    for t in 1..slices {
        let lambda = cfg.lambda_at(t);
        for k in 0..topics {
            let cur = phi.slice(ndarray::s![t, k, ..]);
            let prev = phi.slice(ndarray::s![t - 1, k, ..]);
            loss -= lambda * similarity(cur, prev, cfg.tau)?;
            if let Some(g) = grad.as_mut() {
                let (mut ga, mut gb) = g.multi_slice_mut((ndarray::s![t, k, ..], ndarray::s![t - 1, k, ..]));
                similarity_backward(cur, prev, cfg.tau, -lambda, Some(ga.view_mut()), Some(gb.view_mut()));
            }
        }
    }
    Ok(loss)
}

pub fn negative_loss(phi: ArrayView3<f64>, cfg: &LossConfig) -> Result<f64> {
    negative_loss_with_grad(phi, cfg, None)
}

pub fn negative_loss_with_grad(
    phi: ArrayView3<f64>,
    cfg: &LossConfig,
    mut grad: Option<ArrayViewMut3<f64>>,
) -> Result<f64> {
    let (slices, topics, _) = phi.dim();
    if topics < 2 {
        return Err(Error::InvalidInput("negative pairs need at least two topics".into()));
    }
    check_nonzero_topics(phi)?;
    let mut loss = 0.0;
    for t in 0..slices {
        let slice = phi.index_axis(Axis(0), t);
        let mut sims = Array2::<f64>::zeros((topics, topics));
        for k in 0..topics {
            for j in 0..topics {
                if j != k {
                    sims[[k, j]] = similarity(slice.row(k), slice.row(j), cfg.tau)?;
                }
            }
        }
        for k in 0..topics {
            let others = || (0..topics).filter(move |&j| j != k).map(|j| sims[[k, j]]);
            let lse = log_sum_exp(others());
            loss += cfg.gamma * lse;
            if let Some(g) = grad.as_mut() {
                let mut g_slice = g.index_axis_mut(Axis(0), t);
                for j in (0..topics).filter(|&j| j != k) {
                    let weight = cfg.gamma * (sims[[k, j]] - lse).exp();
                    let (mut ga, mut gb) = g_slice.multi_slice_mut((ndarray::s![k, ..], ndarray::s![j, ..]));
                    similarity_backward(slice.row(k), slice.row(j), cfg.tau, weight, Some(ga.view_mut()), Some(gb.view_mut()));
                }
            }
        }
    }
    Ok(loss)
}

/// The positive and negative terms, honoring the ablation switches.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EtcLoss {
    pub positive: f64,
    pub negative: f64,
}

impl EtcLoss {
    pub fn total(&self) -> f64 {
        self.positive + self.negative
    }
}

pub fn etc_loss(phi: ArrayView3<f64>, cfg: &LossConfig) -> Result<EtcLoss> {
    etc_loss_with_grad(phi, cfg, None)
}

pub fn etc_loss_with_grad(
    phi: ArrayView3<f64>,
    cfg: &LossConfig,
    mut grad: Option<ArrayViewMut3<f64>>,
) -> Result<EtcLoss> {
    if !cfg.enable_etc {
        return Ok(EtcLoss::default());
    }
    let positive = positive_loss_with_grad(phi, cfg, grad.as_mut().map(|g| g.view_mut()))?;
    let negative = if cfg.enable_negative {
        negative_loss_with_grad(phi, cfg, grad.as_mut().map(|g| g.view_mut()))?
    } else {
        0.0
    };
    Ok(EtcLoss { positive, negative })
}

/// Union over topics of each topic's `n_top` highest-scoring words, ties
/// broken toward the lower word id. Returned sorted.
pub fn top_word_set(beta: &TopicWordDistribution, n_top: usize) -> Vec<usize> {
    let n = n_top.min(beta.vocab_size());
    let mut set = BTreeSet::new();
    for k in 0..beta.num_topics() {
        set.extend(beta.ranked_words(k).into_iter().take(n));
    }
    set.into_iter().collect()
}

/// Top words absent from the slice vocabulary. Both inputs and the output
/// are sorted id lists.
pub fn unassociated_words(v_top: &[usize], v_slice: &[usize]) -> Vec<usize> {
    let slice: BTreeSet<usize> = v_slice.iter().copied().collect();
    let out: BTreeSet<usize> = v_top.iter().copied().filter(|w| !slice.contains(w)).collect();
    out.into_iter().collect()
}

pub fn uwe_loss(phi: ArrayView3<f64>, word: ArrayView2<f64>, uw_sets: &[Vec<usize>], cfg: &LossConfig) -> Result<f64> {
    uwe_loss_with_grad(phi, word, uw_sets, cfg, None, None)
}

/// Sum over slices and topics of `log sum_{x in UW(t)} exp(g(phi_k^t, w_x))`.
/// Slices with no unassociated words contribute nothing. Zero in masking
/// mode or when exclusion is disabled.
pub fn uwe_loss_with_grad(
    phi: ArrayView3<f64>,
    word: ArrayView2<f64>,
    uw_sets: &[Vec<usize>],
    cfg: &LossConfig,
    mut grad_phi: Option<ArrayViewMut3<f64>>,
    mut grad_word: Option<ArrayViewMut2<f64>>,
) -> Result<f64> {
    if !cfg.uwe_loss_active() {
        return Ok(0.0);
    }
    let (slices, topics, _) = phi.dim();
    if uw_sets.len() != slices {
        return Err(Error::Dimension(format!(
            "{} unassociated-word sets for {slices} slices",
            uw_sets.len()
        )));
    }
    let mut loss = 0.0;
    for (t, uw) in uw_sets.iter().enumerate() {
        if uw.is_empty() {
            continue;
        }
        for k in 0..topics {
            let topic = phi.slice(ndarray::s![t, k, ..]);
            let sims = uw
                .iter()
                .map(|&x| similarity(topic, word.row(x), cfg.tau))
                .collect::<Result<Vec<f64>>>()?;
            let lse = log_sum_exp(sims.iter().copied());
            loss += lse;
            if grad_phi.is_none() && grad_word.is_none() {
                continue;
            }
            for (&x, &s) in uw.iter().zip(&sims) {
                let weight = (s - lse).exp();
                let ga = grad_phi.as_mut().map(|g| g.slice_mut(ndarray::s![t, k, ..]));
                let gb = grad_word.as_mut().map(|g| g.row_mut(x));
                similarity_backward(topic, word.row(x), cfg.tau, weight, ga, gb);
            }
        }
    }
    Ok(loss)
}

/// KL(N(mean, diag(sigma)) || N(prior.mean, diag(prior.variance))).
pub fn kl_divergence(mean: ArrayView1<f64>, sigma_diag: ArrayView1<f64>, prior: &PriorParams) -> Result<f64> {
    if mean.len() != prior.mean.len() || sigma_diag.len() != prior.mean.len() {
        return Err(Error::Dimension("KL arguments disagree with the prior dimension".into()));
    }
    if sigma_diag.iter().any(|&s| s.is_nan() || s <= 0.0) {
        return Err(Error::InvalidInput("variance must be positive".into()));
    }
    let mut kl = 0.0;
    for k in 0..mean.len() {
        let (m0, v0) = (prior.mean[k], prior.variance[k]);
        kl += sigma_diag[k] / v0 + (m0 - mean[k]).powi(2) / v0 - 1.0 + v0.ln() - sigma_diag[k].ln();
    }
    Ok(0.5 * kl)
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TmLoss {
    pub reconstruction: f64,
    pub kl: f64,
}

impl TmLoss {
    pub fn total(&self) -> f64 {
        self.reconstruction + self.kl
    }
}

/// A document together with the index of its slice.
pub type BatchDoc<'a> = (usize, &'a BowDocument);

pub fn tm_loss(batch: &[BatchDoc], params: &ModelParams, eps: ArrayView2<f64>, pi: f64) -> Result<TmLoss> {
    tm_loss_with_grad(batch, params, eps, pi, None)
}

/// Reconstruction plus KL summed over the batch, with one noise row of
/// `eps` per document.
pub fn tm_loss_with_grad(
    batch: &[BatchDoc],
    params: &ModelParams,
    eps: ArrayView2<f64>,
    pi: f64,
    mut grad: Option<&mut ModelParams>,
) -> Result<TmLoss> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let topics = params.encoder.num_topics();
    if eps.dim() != (batch.len(), topics) {
        return Err(Error::Dimension(format!(
            "noise has shape {:?}, expected ({}, {topics})",
            eps.dim(),
            batch.len()
        )));
    }
    let num_slices = params.embeddings.num_slices();
    if let Some(&(t, _)) = batch.iter().find(|(t, _)| *t >= num_slices) {
        return Err(Error::SliceOutOfRange {
            index: t,
            count: num_slices,
        });
    }
    let prior = PriorParams::laplace(topics);
    let docs: Vec<&BowDocument> = batch.iter().map(|(_, d)| *d).collect();
    let fwd = params.encoder.forward_batch(&docs)?;

    let std_dev = fwd.logvar.mapv(|lv| (0.5 * lv).exp());
    let latent = &fwd.mean + &(&std_dev * &eps);
    let mut theta = Array2::<f64>::zeros(latent.raw_dim());
    for (mut row, r) in theta.rows_mut().into_iter().zip(latent.rows()) {
        row.assign(&Array1::from(softmax(&r.to_vec())));
    }

    let mut loss = TmLoss::default();
    let mut grad_theta = Array2::<f64>::zeros(theta.raw_dim());
    let used: BTreeSet<usize> = batch.iter().map(|&(t, _)| t).collect();
    for t in used {
        let rows: Vec<usize> = (0..batch.len()).filter(|&d| batch[d].0 == t).collect();
        let beta = params.topic_word(t, pi)?;
        let theta_t = theta.select(Axis(0), &rows);
        let logits = theta_t.dot(&beta.beta);
        let mut grad_logits = Array2::<f64>::zeros(logits.raw_dim());
        for (r, &d) in rows.iter().enumerate() {
            let z = logits.row(r);
            let lse = log_sum_exp(z.iter().copied());
            let doc = batch[d].1;
            let n = doc.total() as f64;
            let mut g = grad_logits.row_mut(r);
            g.assign(&z.mapv(|v| n * (v - lse).exp()));
            for &(w, c) in doc.entries() {
                loss.reconstruction -= c as f64 * (z[w] - lse);
                g[w] -= c as f64;
            }
        }
        if let Some(grad) = grad.as_mut() {
            let g_theta = grad_logits.dot(&beta.beta.t());
            for (r, &d) in rows.iter().enumerate() {
                grad_theta.row_mut(d).assign(&g_theta.row(r));
            }
            let grad_beta = theta_t.t().dot(&grad_logits);
            let emb = &mut grad.embeddings;
            topic_word_backward(
                params.embeddings.topic.index_axis(Axis(0), t),
                params.embeddings.word.view(),
                pi,
                beta.beta.view(),
                grad_beta.view(),
                emb.topic.index_axis_mut(Axis(0), t),
                Some(emb.word.view_mut()),
            );
        }
    }

    for d in 0..batch.len() {
        let sigma = fwd.logvar.row(d).mapv(f64::exp);
        loss.kl += kl_divergence(fwd.mean.row(d), sigma.view(), &prior)?;
    }

    if let Some(grad) = grad {
        let mut grad_mean = Array2::<f64>::zeros(fwd.mean.raw_dim());
        let mut grad_logvar = Array2::<f64>::zeros(fwd.logvar.raw_dim());
        for d in 0..batch.len() {
            let th = theta.row(d);
            let gt = grad_theta.row(d);
            let inner = th.dot(&gt);
            for k in 0..topics {
                let g_latent = th[k] * (gt[k] - inner);
                let (m0, v0) = (prior.mean[k], prior.variance[k]);
                grad_mean[[d, k]] = g_latent + (fwd.mean[[d, k]] - m0) / v0;
                let var = fwd.logvar[[d, k]].exp();
                grad_logvar[[d, k]] = g_latent * eps[[d, k]] * std_dev[[d, k]] * 0.5 + 0.5 * (var / v0 - 1.0);
            }
        }
        params
            .encoder
            .backward_batch(&docs, &fwd, &grad_mean, &grad_logvar, &mut grad.encoder);
    }
    Ok(loss)
}

/// Per-term values of the overall objective for one batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub reconstruction: f64,
    pub kl: f64,
    pub positive: f64,
    pub negative: f64,
    pub uwe: f64,
    /// `tm + positive + negative + lambda_uwe * uwe`.
    pub total: f64,
}

impl LossBreakdown {
    pub fn tm(&self) -> f64 {
        self.reconstruction + self.kl
    }
}

pub fn overall_loss(
    batch: &[BatchDoc],
    params: &ModelParams,
    uw_sets: &[Vec<usize>],
    eps: ArrayView2<f64>,
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    overall_loss_with_grad(batch, params, uw_sets, eps, cfg, None)
}

pub fn overall_loss_with_grad(
    batch: &[BatchDoc],
    params: &ModelParams,
    uw_sets: &[Vec<usize>],
    eps: ArrayView2<f64>,
    cfg: &LossConfig,
    mut grad: Option<&mut ModelParams>,
) -> Result<LossBreakdown> {
    let tm = tm_loss_with_grad(batch, params, eps, cfg.pi, grad.as_deref_mut())?;
    let phi = params.embeddings.topic.view();
    let etc = etc_loss_with_grad(phi, cfg, grad.as_mut().map(|g| g.embeddings.topic.view_mut()))?;
    let word = params.embeddings.word.view();
    let uwe = match grad.as_mut() {
        Some(g) if cfg.lambda_uwe > 0.0 && cfg.uwe_loss_active() => {
            let mut dp = Array3::zeros(phi.raw_dim());
            let mut dw = Array2::zeros(word.raw_dim());
            let value = uwe_loss_with_grad(phi, word, uw_sets, cfg, Some(dp.view_mut()), Some(dw.view_mut()))?;
            g.embeddings.topic.scaled_add(cfg.lambda_uwe, &dp);
            g.embeddings.word.scaled_add(cfg.lambda_uwe, &dw);
            value
        }
        _ => uwe_loss(phi, word, uw_sets, cfg)?,
    };
    Ok(LossBreakdown {
        reconstruction: tm.reconstruction,
        kl: tm.kl,
        positive: etc.positive,
        negative: etc.negative,
        uwe,
        total: tm.total() + etc.total() + cfg.lambda_uwe * uwe,
    })
}
