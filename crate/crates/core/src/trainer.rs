//! Mini-batch training with Adam, epoch-boundary refresh of the
//! unassociated word sets, inference and topic export.

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{BowDocument, TimeSlicedCorpus};
use crate::embeddings::{init_topic_embeddings, random_word_embeddings, EmbeddingState, DEFAULT_DIM};
use crate::error::{Error, Result};
use crate::model::{softmax, EncoderParams, ModelParams, TopicWordDistribution, DEFAULT_HIDDEN};
use crate::objectives::{overall_loss_with_grad, top_word_set, unassociated_words, BatchDoc, LossBreakdown, LossConfig};
use crate::rng::{stream, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub num_topics: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub loss: LossConfig,
    /// Save a checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: usize,
    pub freeze_word_embeddings: bool,
    pub hidden: usize,
    pub embedding_dim: usize,
    pub normalize_input: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            num_topics: 50,
            epochs: 800,
            learning_rate: 0.002,
            batch_size: 200,
            seed: 0,
            loss: LossConfig::default(),
            checkpoint_every: 0,
            freeze_word_embeddings: false,
            hidden: DEFAULT_HIDDEN,
            embedding_dim: DEFAULT_DIM,
            normalize_input: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, num_slices: usize) -> Result<()> {
        if self.num_topics == 0 || self.batch_size == 0 || self.hidden == 0 || self.embedding_dim == 0 {
            return Err(Error::InvalidInput(
                "num_topics, batch_size, hidden and embedding_dim must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidInput(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if self.loss.enable_etc && self.loss.enable_negative && self.num_topics < 2 {
            return Err(Error::InvalidInput("negative pairs need at least two topics".into()));
        }
        self.loss.validate(num_slices)
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub first: ModelParams,
    pub second: ModelParams,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        AdamState {
            step: 0,
            first: params.zeros_like(),
            second: params.zeros_like(),
        }
    }

    fn update(&mut self, params: &mut ModelParams, grad: &ModelParams, lr: f64, freeze_words: bool) {
        self.step += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.step as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.step as i32);
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(grad.tensors())
            .zip(self.first.tensors_mut())
            .zip(self.second.tensors_mut());
        for ((((name, p), (_, g)), (_, m)), (_, v)) in tensors {
            if freeze_words && name == "word_embeddings" {
                continue;
            }
            for i in 0..p.len() {
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                p[i] -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + ADAM_EPS);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub config: TrainConfig,
    pub params: ModelParams,
    pub optimizer: AdamState,
    /// Completed epochs.
    pub epoch: usize,
    /// Unassociated word ids per slice, from the most recent refresh.
    pub unassociated: Vec<Vec<usize>>,
}

/// Mean per-batch loss terms over one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub tm: f64,
    pub positive: f64,
    pub negative: f64,
    pub uwe: f64,
    pub total: f64,
}

impl EpochLog {
    pub const HEADER: &'static str = "epoch\tL_TM\tL_pos\tL_neg\tL_UWE\ttotal";

    /// Tab-separated: epoch, L_TM, L_pos, L_neg, L_UWE, total.
    pub fn to_tsv(&self) -> String {
        format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            self.epoch, self.tm, self.positive, self.negative, self.uwe, self.total
        )
    }
}

impl ModelState {
    /// Fresh parameters; word embeddings are drawn at random unless given.
    pub fn init(corpus: &TimeSlicedCorpus, config: &TrainConfig, word_embeddings: Option<Array2<f64>>) -> Result<Self> {
        config.validate(corpus.num_slices())?;
        let vocab_size = corpus.vocab_size();
        let word = match word_embeddings {
            Some(w) => {
                if w.dim() != (vocab_size, config.embedding_dim) {
                    return Err(Error::Dimension(format!(
                        "word embeddings are {:?}, expected ({vocab_size}, {})",
                        w.dim(),
                        config.embedding_dim
                    )));
                }
                w
            }
            None => random_word_embeddings(vocab_size, config.embedding_dim, config.seed),
        };
        let topic = init_topic_embeddings(corpus.num_slices(), config.num_topics, config.embedding_dim, config.seed);
        let mut encoder = EncoderParams::init(vocab_size, config.hidden, config.num_topics, config.seed);
        encoder.normalize_input = config.normalize_input;
        let params = ModelParams {
            embeddings: EmbeddingState { word, topic },
            encoder,
        };
        let optimizer = AdamState::new(&params);
        let mut state = ModelState {
            config: config.clone(),
            params,
            optimizer,
            epoch: 0,
            unassociated: Vec::new(),
        };
        state.refresh_unassociated(corpus)?;
        Ok(state)
    }

    pub fn num_topics(&self) -> usize {
        self.config.num_topics
    }

    pub fn num_slices(&self) -> usize {
        self.params.embeddings.num_slices()
    }

    /// Raw topic-word distributions for every slice.
    pub fn betas(&self) -> Result<Vec<TopicWordDistribution>> {
        (0..self.num_slices())
            .map(|t| self.params.topic_word(t, self.config.loss.pi))
            .collect()
    }

    /// Distributions as exported: unassociated words zeroed in masking mode.
    pub fn exported_betas(&self) -> Result<Vec<TopicWordDistribution>> {
        let mut betas = self.betas()?;
        if self.masking() {
            for (beta, uw) in betas.iter_mut().zip(&self.unassociated) {
                beta.mask_words(uw);
            }
        }
        Ok(betas)
    }

    /// Whether unassociated words are masked at export instead of penalized.
    pub fn masking(&self) -> bool {
        self.config.loss.enable_uwe && self.config.loss.uwe_masking
    }

    /// Recomputes each slice's unassociated words from the current topics.
    pub fn refresh_unassociated(&mut self, corpus: &TimeSlicedCorpus) -> Result<()> {
        if corpus.num_slices() != self.num_slices() {
            return Err(Error::Dimension(format!(
                "corpus has {} slices, model {}",
                corpus.num_slices(),
                self.num_slices()
            )));
        }
        let betas = self.betas()?;
        self.unassociated = betas
            .iter()
            .zip(corpus.slices())
            .map(|(beta, slice)| unassociated_words(&top_word_set(beta, self.config.loss.n_top), &slice.vocab))
            .collect();
        Ok(())
    }
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed.wrapping_add((epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Trains from scratch for `config.epochs` epochs.
pub fn train(corpus: &TimeSlicedCorpus, config: &TrainConfig) -> Result<(ModelState, Vec<EpochLog>)> {
    let mut state = ModelState::init(corpus, config, None)?;
    let log = train_state(corpus, &mut state, |_, _| Ok(()))?;
    Ok((state, log))
}

/// Continues training `state` up to `state.config.epochs`, calling
/// `on_epoch` after every completed epoch.
pub fn train_state(
    corpus: &TimeSlicedCorpus,
    state: &mut ModelState,
    mut on_epoch: impl FnMut(&ModelState, &EpochLog) -> Result<()>,
) -> Result<Vec<EpochLog>> {
    let config = state.config.clone();
    config.validate(corpus.num_slices())?;
    if corpus.vocab_size() != state.params.embeddings.vocab_size() {
        return Err(Error::Dimension("corpus vocabulary does not match the model".into()));
    }
    let docs: Vec<BatchDoc> = corpus.documents().collect();
    let topics = config.num_topics;
    let mut grad = state.params.zeros_like();
    let mut logs = Vec::new();

    while state.epoch < config.epochs {
        let epoch = state.epoch;
        state.refresh_unassociated(corpus)?;
        let mut order: Vec<usize> = (0..docs.len()).collect();
        order.shuffle(&mut stream(epoch_seed(config.seed, epoch), Stream::Shuffle));
        let mut noise_rng = stream(epoch_seed(config.seed, epoch), Stream::Noise);

        let mut sum = LossBreakdown::default();
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<BatchDoc> = chunk.iter().map(|&i| docs[i]).collect();
            let eps = Array2::from_shape_simple_fn((batch.len(), topics), || {
                StandardNormal.sample(&mut noise_rng)
            });
            for (_, g) in grad.tensors_mut() {
                g.fill(0.0);
            }
            let loss = overall_loss_with_grad(
                &batch,
                &state.params,
                &state.unassociated,
                eps.view(),
                &config.loss,
                Some(&mut grad),
            )?;
            if !loss.total.is_finite() {
                return Err(Error::Diverged {
                    epoch: epoch + 1,
                    detail: format!("non-finite loss {loss:?}"),
                });
            }
            state
                .optimizer
                .update(&mut state.params, &grad, config.learning_rate, config.freeze_word_embeddings);
            sum.reconstruction += loss.reconstruction;
            sum.kl += loss.kl;
            sum.positive += loss.positive;
            sum.negative += loss.negative;
            sum.uwe += loss.uwe;
            sum.total += loss.total;
            batches += 1;
        }
        if !state.params.is_finite() {
            return Err(Error::Diverged {
                epoch: epoch + 1,
                detail: "non-finite parameter after update".into(),
            });
        }
        state.epoch += 1;
        let n = batches.max(1) as f64;
        let entry = EpochLog {
            epoch: state.epoch,
            tm: sum.tm() / n,
            positive: sum.positive / n,
            negative: sum.negative / n,
            uwe: sum.uwe / n,
            total: sum.total / n,
        };
        log::debug!("{}", entry.to_tsv());
        if state.epoch == config.epochs {
            state.refresh_unassociated(corpus)?;
        }
        on_epoch(state, &entry)?;
        logs.push(entry);
    }
    Ok(logs)
}

/// Document-topic proportions from the posterior mean: `softmax(mu)`.
pub fn infer_theta(state: &ModelState, docs: &[&BowDocument]) -> Result<Array2<f64>> {
    let k = state.num_topics();
    let mut theta = Array2::zeros((docs.len(), k));
    for (c, chunk) in docs.chunks(state.config.batch_size.max(1)).enumerate() {
        let fwd = state.params.encoder.forward_batch(chunk)?;
        for (r, mean) in fwd.mean.axis_iter(Axis(0)).enumerate() {
            let row = softmax(&mean.to_vec());
            theta
                .row_mut(c * state.config.batch_size.max(1) + r)
                .iter_mut()
                .zip(row)
                .for_each(|(o, p)| *o = p);
        }
    }
    Ok(theta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedWord {
    pub id: usize,
    pub word: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicExport {
    pub slice: usize,
    pub slice_key: String,
    pub topic: usize,
    pub words: Vec<RankedWord>,
}

/// Top `n_words` words per slice and topic, ties toward the lower id.
/// In masking mode the masked words are left out.
pub fn export_topics(state: &ModelState, corpus: &TimeSlicedCorpus, n_words: usize) -> Result<Vec<TopicExport>> {
    if n_words > corpus.vocab_size() {
        return Err(Error::InvalidInput(format!(
            "asked for {n_words} words from a vocabulary of {}",
            corpus.vocab_size()
        )));
    }
    let betas = state.exported_betas()?;
    let mut out = Vec::with_capacity(betas.len() * state.num_topics());
    for (t, beta) in betas.iter().enumerate() {
        let masked: &[usize] = if state.masking() { &state.unassociated[t] } else { &[] };
        for k in 0..beta.num_topics() {
            let words = beta
                .ranked_words(k)
                .into_iter()
                .filter(|w| masked.binary_search(w).is_err())
                .take(n_words)
                .map(|id| RankedWord {
                    id,
                    word: corpus.vocab().token(id).to_string(),
                    score: beta.beta[[k, id]],
                })
                .collect();
            out.push(TopicExport {
                slice: t,
                slice_key: corpus.slices()[t].key.clone(),
                topic: k,
                words,
            });
        }
    }
    Ok(out)
}

/// For each word, its score in `topic` across slices (`word x slice`).
pub fn export_word_evolution(state: &ModelState, word_ids: &[usize], topic: usize) -> Result<Array2<f64>> {
    if topic >= state.num_topics() {
        return Err(Error::InvalidInput(format!("topic {topic} out of range")));
    }
    let vocab = state.params.embeddings.vocab_size();
    if let Some(&w) = word_ids.iter().find(|&&w| w >= vocab) {
        return Err(Error::InvalidInput(format!("word id {w} out of range")));
    }
    let betas = state.exported_betas()?;
    let mut out = Array2::zeros((word_ids.len(), betas.len()));
    for (t, beta) in betas.iter().enumerate() {
        for (r, &w) in word_ids.iter().enumerate() {
            out[[r, t]] = beta.beta[[topic, w]];
        }
    }
    Ok(out)
}
