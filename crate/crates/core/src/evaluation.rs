//! Dynamic topic quality (per-slice C_V coherence and topic diversity) and
//! downstream quality of document-topic proportions (linear SVM
//! classification, argmax clustering).

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::TimeSlicedCorpus;
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};
use crate::trainer::{infer_theta, ModelState};

pub const DEFAULT_WINDOW: usize = 110;
pub const NPMI_EPSILON: f64 = 1e-12;
/// Top words per topic used for coherence and diversity.
pub const DEFAULT_TOP_WORDS: usize = 15;

/// Boolean sliding-window occurrence counts for a fixed set of words.
struct WindowCounts {
    windows: usize,
    single: Vec<usize>,
    /// Symmetric co-occurrence counts; the diagonal equals `single`.
    pair: Vec<usize>,
    n: usize,
}

impl WindowCounts {
    fn collect<S: AsRef<str>>(words: &[&str], reference: &[Vec<S>], window: usize) -> Self {
        let index: HashMap<&str, usize> = words.iter().enumerate().map(|(i, w)| (*w, i)).collect();
        let n = words.len();
        let mut counts = WindowCounts {
            windows: 0,
            single: vec![0; n],
            pair: vec![0; n * n],
            n,
        };
        for doc in reference {
            let ids: Vec<Option<usize>> = doc.iter().map(|t| index.get(t.as_ref()).copied()).collect();
            if ids.len() < window {
                counts.add_window(&ids);
            } else {
                for start in 0..=ids.len() - window {
                    counts.add_window(&ids[start..start + window]);
                }
            }
        }
        counts
    }

    fn add_window(&mut self, ids: &[Option<usize>]) {
        self.windows += 1;
        let present: BTreeSet<usize> = ids.iter().flatten().copied().collect();
        for &a in &present {
            self.single[a] += 1;
            for &b in &present {
                self.pair[a * self.n + b] += 1;
            }
        }
    }

    fn npmi(&self, a: usize, b: usize) -> f64 {
        let total = self.windows as f64;
        let p_ab = self.pair[a * self.n + b] as f64 / total;
        let p_a = self.single[a] as f64 / total;
        let p_b = self.single[b] as f64 / total;
        let pmi = ((p_ab + NPMI_EPSILON) / (p_a * p_b)).ln();
        pmi / -(p_ab + NPMI_EPSILON).ln()
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// C_V coherence averaged over topics.
///
/// Boolean sliding windows of `window` tokens (a shorter document is one
/// window) estimate word and pair probabilities. Each top word is paired
/// with the whole top-word set; each side is represented by its vector of
/// NPMI values against the topic's words (summed over the set), and the
/// topic score is the mean cosine between the two. Words that never occur
/// in the reference are ignored; a topic with fewer than two remaining
/// words is skipped.
pub fn topic_coherence_cv<S: AsRef<str>, R: AsRef<str>>(
    topics: &[Vec<S>],
    reference: &[Vec<R>],
    window: usize,
) -> Result<f64> {
    if window == 0 {
        return Err(Error::InvalidInput("coherence window must be positive".into()));
    }
    let mut words: Vec<&str> = Vec::new();
    let mut seen = HashSet::new();
    for topic in topics {
        for w in topic {
            if seen.insert(w.as_ref()) {
                words.push(w.as_ref());
            }
        }
    }
    let counts = WindowCounts::collect(&words, reference, window);
    let index: HashMap<&str, usize> = words.iter().enumerate().map(|(i, w)| (*w, i)).collect();

    let mut scores = Vec::new();
    for (k, topic) in topics.iter().enumerate() {
        let mut ids: Vec<usize> = Vec::new();
        for w in topic {
            let id = index[w.as_ref()];
            if counts.single[id] > 0 && !ids.contains(&id) {
                ids.push(id);
            }
        }
        if ids.len() < 2 {
            log::warn!("topic {k}: fewer than two top words occur in the reference corpus, skipped");
            continue;
        }
        let vectors: Vec<Vec<f64>> = ids
            .iter()
            .map(|&a| ids.iter().map(|&b| counts.npmi(a, b)).collect())
            .collect();
        let mut set_vector = vec![0.0; ids.len()];
        for v in &vectors {
            for (s, x) in set_vector.iter_mut().zip(v) {
                *s += x;
            }
        }
        let mean = vectors.iter().map(|v| cosine(v, &set_vector)).sum::<f64>() / vectors.len() as f64;
        scores.push(mean);
    }
    if scores.is_empty() {
        return Err(Error::Metric("no topic has two top words in the reference corpus".into()));
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Fraction of all top-word occurrences that are unique across the lists
/// and belong to the slice vocabulary.
pub fn topic_diversity(topic_top_words: &[Vec<usize>], slice_vocab: &[usize]) -> f64 {
    let total: usize = topic_top_words.iter().map(Vec::len).sum();
    if total == 0 {
        return 0.0;
    }
    let mut counts: HashMap<usize, usize> = HashMap::new();
    for w in topic_top_words.iter().flatten() {
        *counts.entry(*w).or_default() += 1;
    }
    let in_slice: HashSet<usize> = slice_vocab.iter().copied().collect();
    let good = topic_top_words
        .iter()
        .flatten()
        .filter(|w| counts[w] == 1 && in_slice.contains(w))
        .count();
    good as f64 / total as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceMetrics {
    pub slice: String,
    pub tc: f64,
    pub td: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DownstreamMetrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub purity: f64,
    pub nmi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub slices: Vec<SliceMetrics>,
    pub avg_tc: f64,
    pub avg_td: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub downstream: Option<DownstreamMetrics>,
}

impl EvalReport {
    pub fn from_slices(slices: Vec<SliceMetrics>) -> Self {
        let n = slices.len().max(1) as f64;
        let avg_tc = slices.iter().map(|s| s.tc).sum::<f64>() / n;
        let avg_td = slices.iter().map(|s| s.td).sum::<f64>() / n;
        EvalReport {
            slices,
            avg_tc,
            avg_td,
            downstream: None,
        }
    }

    /// One metric per line: `name<TAB>slice-or-avg<TAB>value`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for s in &self.slices {
            let _ = writeln!(out, "TC\t{}\t{:.6}", s.slice, s.tc);
            let _ = writeln!(out, "TD\t{}\t{:.6}", s.slice, s.td);
        }
        let _ = writeln!(out, "TC\tavg\t{:.6}", self.avg_tc);
        let _ = writeln!(out, "TD\tavg\t{:.6}", self.avg_td);
        if let Some(d) = &self.downstream {
            let _ = writeln!(out, "accuracy\tavg\t{:.6}", d.accuracy);
            let _ = writeln!(out, "macro_f1\tavg\t{:.6}", d.macro_f1);
            let _ = writeln!(out, "purity\tavg\t{:.6}", d.purity);
            let _ = writeln!(out, "nmi\tavg\t{:.6}", d.nmi);
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Top `n_words` word ids of every topic at every slice, from the exported
/// distributions.
pub fn top_words_per_slice(state: &ModelState, n_words: usize) -> Result<Vec<Vec<Vec<usize>>>> {
    let masked = state.masking();
    let betas = state.exported_betas()?;
    Ok(betas
        .iter()
        .enumerate()
        .map(|(t, beta)| {
            (0..beta.num_topics())
                .map(|k| {
                    beta.ranked_words(k)
                        .into_iter()
                        .filter(|w| !masked || state.unassociated[t].binary_search(w).is_err())
                        .take(n_words)
                        .collect()
                })
                .collect()
        })
        .collect())
}

#[cfg(feature = "parallel")]
fn map_slices<T: Send>(n: usize, f: impl Fn(usize) -> Result<T> + Sync) -> Result<Vec<T>> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(&f).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_slices<T>(n: usize, f: impl Fn(usize) -> Result<T>) -> Result<Vec<T>> {
    (0..n).map(f).collect()
}

/// Per-slice TC (against that slice's documents) and TD (against that
/// slice's vocabulary), plus their averages.
pub fn evaluate_dynamic_topics(
    state: &ModelState,
    corpus: &TimeSlicedCorpus,
    n_words: usize,
    window: usize,
) -> Result<EvalReport> {
    let tops = top_words_per_slice(state, n_words)?;
    let slices = map_slices(corpus.num_slices(), |t| {
        let slice = &corpus.slices()[t];
        let names: Vec<Vec<&str>> = tops[t]
            .iter()
            .map(|ws| ws.iter().map(|&w| corpus.vocab().token(w)).collect())
            .collect();
        let tc = topic_coherence_cv(&names, &slice.reference, window)?;
        let td = topic_diversity(&tops[t], &slice.vocab);
        Ok(SliceMetrics {
            slice: slice.key.clone(),
            tc,
            td,
        })
    })?;
    Ok(EvalReport::from_slices(slices))
}

/// Classification on a seeded train/test split of the labeled documents
/// plus clustering on all of them. `None` without at least two labels.
pub fn evaluate_downstream(
    state: &ModelState,
    corpus: &TimeSlicedCorpus,
    test_fraction: f64,
    seed: u64,
) -> Result<Option<DownstreamMetrics>> {
    let labeled: Vec<(&crate::corpus::BowDocument, String)> = corpus
        .slices()
        .iter()
        .flat_map(|s| s.docs.iter().zip(&s.labels))
        .filter_map(|(d, l)| l.clone().map(|l| (d, l)))
        .collect();
    let classes: BTreeSet<&str> = labeled.iter().map(|(_, l)| l.as_str()).collect();
    if classes.len() < 2 {
        return Ok(None);
    }
    let docs: Vec<_> = labeled.iter().map(|(d, _)| *d).collect();
    let labels: Vec<String> = labeled.iter().map(|(_, l)| l.clone()).collect();
    let theta = infer_theta(state, &docs)?;
    let (purity, nmi) = cluster_purity_nmi(theta.view(), &labels)?;

    let mut order: Vec<usize> = (0..docs.len()).collect();
    order.shuffle(&mut stream(seed, Stream::Split));
    let n_test = ((docs.len() as f64 * test_fraction).round() as usize).clamp(1, docs.len() - 1);
    let (test_idx, train_idx) = order.split_at(n_test);
    let pick = |idx: &[usize]| (theta.select(ndarray::Axis(0), idx), idx.iter().map(|&i| labels[i].clone()).collect::<Vec<_>>());
    let (x_train, y_train) = pick(train_idx);
    let (x_test, y_test) = pick(test_idx);
    let (accuracy, macro_f1) = match classify_doc_topics(x_train.view(), &y_train, x_test.view(), &y_test, seed) {
        Ok(v) => v,
        Err(Error::InvalidInput(m)) => {
            log::warn!("classification skipped: {m}");
            return Ok(Some(DownstreamMetrics {
                accuracy: f64::NAN,
                macro_f1: f64::NAN,
                purity,
                nmi,
            }));
        }
        Err(e) => return Err(e),
    };
    Ok(Some(DownstreamMetrics {
        accuracy,
        macro_f1,
        purity,
        nmi,
    }))
}

/// One-vs-rest linear SVM (hinge loss, `C = 1`, bias as an extra constant
/// feature) trained by dual coordinate descent.
#[derive(Debug, Clone)]
pub struct LinearSvm {
    classes: Vec<String>,
    /// One weight vector per class; last entry is the bias.
    weights: Vec<Vec<f64>>,
}

const SVM_C: f64 = 1.0;
const SVM_MAX_ITER: usize = 1000;
const SVM_TOL: f64 = 1e-4;

impl LinearSvm {
    pub fn fit(x: ArrayView2<f64>, y: &[String], seed: u64) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::Dimension(format!("{} rows, {} labels", x.nrows(), y.len())));
        }
        let classes: Vec<String> = y.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
        if classes.len() < 2 {
            return Err(Error::InvalidInput("training set has a single class".into()));
        }
        let rows: Vec<Vec<f64>> = x
            .rows()
            .into_iter()
            .map(|r| r.iter().copied().chain(std::iter::once(1.0)).collect())
            .collect();
        let mut rng = stream(seed, Stream::Svm);
        let weights = classes
            .iter()
            .map(|c| {
                let signs: Vec<f64> = y.iter().map(|l| if l == c { 1.0 } else { -1.0 }).collect();
                Self::fit_binary(&rows, &signs, &mut rng)
            })
            .collect();
        Ok(LinearSvm { classes, weights })
    }

    fn fit_binary(rows: &[Vec<f64>], signs: &[f64], rng: &mut impl rand::Rng) -> Vec<f64> {
        let dim = rows[0].len();
        let mut w = vec![0.0; dim];
        let mut alpha = vec![0.0; rows.len()];
        let sq: Vec<f64> = rows.iter().map(|r| r.iter().map(|v| v * v).sum()).collect();
        let mut order: Vec<usize> = (0..rows.len()).collect();
        for _ in 0..SVM_MAX_ITER {
            order.shuffle(rng);
            let mut max_pg: f64 = f64::NEG_INFINITY;
            let mut min_pg: f64 = f64::INFINITY;
            for &i in &order {
                if sq[i] == 0.0 {
                    continue;
                }
                let g = signs[i] * rows[i].iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() - 1.0;
                let pg = if alpha[i] == 0.0 {
                    g.min(0.0)
                } else if alpha[i] == SVM_C {
                    g.max(0.0)
                } else {
                    g
                };
                max_pg = max_pg.max(pg);
                min_pg = min_pg.min(pg);
                if pg != 0.0 {
                    let old = alpha[i];
                    alpha[i] = (old - g / sq[i]).clamp(0.0, SVM_C);
                    let delta = (alpha[i] - old) * signs[i];
                    for (wj, xj) in w.iter_mut().zip(&rows[i]) {
                        *wj += delta * xj;
                    }
                }
            }
            if max_pg - min_pg < SVM_TOL {
                break;
            }
        }
        w
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Vec<String> {
        x.rows()
            .into_iter()
            .map(|r| {
                let mut best = (f64::NEG_INFINITY, 0usize);
                for (c, w) in self.weights.iter().enumerate() {
                    let score = r.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + w[w.len() - 1];
                    if score > best.0 {
                        best = (score, c);
                    }
                }
                self.classes[best.1].clone()
            })
            .collect()
    }
}

/// Accuracy and macro-averaged F1 over the union of true and predicted
/// labels; a class with no true or predicted members scores F1 = 0.
pub fn accuracy_and_macro_f1(truth: &[String], predicted: &[String]) -> (f64, f64) {
    let n = truth.len().max(1) as f64;
    let correct = truth.iter().zip(predicted).filter(|(a, b)| a == b).count();
    let labels: BTreeSet<&String> = truth.iter().chain(predicted).collect();
    let mut f1_sum = 0.0;
    for label in &labels {
        let tp = truth.iter().zip(predicted).filter(|(t, p)| t == label && p == label).count() as f64;
        let fp = truth.iter().zip(predicted).filter(|(t, p)| t != label && p == label).count() as f64;
        let fn_ = truth.iter().zip(predicted).filter(|(t, p)| t == label && p != label).count() as f64;
        let denom = 2.0 * tp + fp + fn_;
        f1_sum += if denom == 0.0 { 0.0 } else { 2.0 * tp / denom };
    }
    (correct as f64 / n, f1_sum / labels.len().max(1) as f64)
}

pub fn classify_doc_topics(
    theta_train: ArrayView2<f64>,
    labels_train: &[String],
    theta_test: ArrayView2<f64>,
    labels_test: &[String],
    seed: u64,
) -> Result<(f64, f64)> {
    if theta_test.nrows() != labels_test.len() {
        return Err(Error::Dimension(format!(
            "{} test rows, {} labels",
            theta_test.nrows(),
            labels_test.len()
        )));
    }
    let svm = LinearSvm::fit(theta_train, labels_train, seed)?;
    let predicted = svm.predict(theta_test);
    Ok(accuracy_and_macro_f1(labels_test, &predicted))
}

/// Row argmax, ties toward the lower topic index.
pub fn argmax_rows(theta: ArrayView2<f64>) -> Vec<usize> {
    theta
        .rows()
        .into_iter()
        .map(|r| {
            let mut best = 0;
            for (k, &v) in r.iter().enumerate() {
                if v > r[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Purity and NMI (arithmetic-mean normalization) of a partition against
/// labels. NMI is 0 when either partition has zero entropy.
pub fn partition_purity_nmi<C: Ord + Clone, L: Ord + Clone>(clusters: &[C], labels: &[L]) -> Result<(f64, f64)> {
    if clusters.len() != labels.len() {
        return Err(Error::Dimension(format!("{} assignments, {} labels", clusters.len(), labels.len())));
    }
    if labels.is_empty() {
        return Err(Error::InvalidInput("no labels".into()));
    }
    let n = labels.len() as f64;
    let mut joint: BTreeMap<(C, L), usize> = BTreeMap::new();
    let mut by_cluster: BTreeMap<C, usize> = BTreeMap::new();
    let mut by_label: BTreeMap<L, usize> = BTreeMap::new();
    for (c, l) in clusters.iter().zip(labels) {
        *joint.entry((c.clone(), l.clone())).or_default() += 1;
        *by_cluster.entry(c.clone()).or_default() += 1;
        *by_label.entry(l.clone()).or_default() += 1;
    }
    let mut best: BTreeMap<&C, usize> = BTreeMap::new();
    for ((c, _), &count) in &joint {
        let e = best.entry(c).or_default();
        *e = (*e).max(count);
    }
    let purity = best.values().sum::<usize>() as f64 / n;

    let entropy = |counts: &mut dyn Iterator<Item = usize>| -> f64 {
        counts
            .map(|c| c as f64 / n)
            .filter(|&p| p > 0.0)
            .map(|p| -p * p.ln())
            .sum()
    };
    let h_c = entropy(&mut by_cluster.values().copied());
    let h_l = entropy(&mut by_label.values().copied());
    let mut mi = 0.0;
    for ((c, l), &count) in &joint {
        let p = count as f64 / n;
        let pc = by_cluster[c] as f64 / n;
        let pl = by_label[l] as f64 / n;
        mi += p * (p / (pc * pl)).ln();
    }
    let nmi = if h_c <= 0.0 || h_l <= 0.0 {
        0.0
    } else {
        (mi / (0.5 * (h_c + h_l))).clamp(0.0, 1.0)
    };
    Ok((purity, nmi))
}

/// Clusters documents by their most probable topic and scores the
/// clustering against `labels`.
pub fn cluster_purity_nmi<L: Ord + Clone>(theta: ArrayView2<f64>, labels: &[L]) -> Result<(f64, f64)> {
    partition_purity_nmi(&argmax_rows(theta), labels)
}

/// Best accuracy of argmax assignments over all one-to-one relabelings of
/// `k` clusters to `k` classes (brute force, small `k` only).
pub fn matched_accuracy(assigned: &[usize], truth: &[usize], k: usize) -> f64 {
    let mut confusion = Array2::<usize>::zeros((k, k));
    for (&a, &t) in assigned.iter().zip(truth) {
        confusion[[a, t]] += 1;
    }
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = 0usize;
    permute(&mut perm, 0, &mut |p| {
        let hits: usize = p.iter().enumerate().map(|(a, &t)| confusion[[a, t]]).sum();
        best = best.max(hits);
    });
    best as f64 / assigned.len().max(1) as f64
}

fn permute(items: &mut Vec<usize>, start: usize, visit: &mut dyn FnMut(&[usize])) {
    if start == items.len() {
        visit(items);
        return;
    }
    for i in start..items.len() {
        items.swap(start, i);
        permute(items, start + 1, visit);
        items.swap(start, i);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn diversity_extremes() {
        assert_eq!(topic_diversity(&[vec![0, 1], vec![2, 3]], &[0, 1, 2, 3]), 1.0);
        assert_eq!(topic_diversity(&[vec![0, 1], vec![0, 1]], &[0, 1]), 0.0);
        assert_eq!(topic_diversity(&[vec![0, 1], vec![2, 3]], &[0, 1]), 0.5);
    }

    #[test]
    fn perfectly_cooccurring_pair_has_unit_coherence() {
        let reference = vec![
            strings(&["alpha", "beta", "noise"]),
            strings(&["beta", "alpha"]),
            strings(&["other", "words", "here"]),
        ];
        let topics = vec![strings(&["alpha", "beta"])];
        let c = topic_coherence_cv(&topics, &reference, 110).unwrap();
        assert!((c - 1.0).abs() < 1e-12, "{c}");
    }

    fn micro_reference() -> Vec<Vec<String>> {
        [
            "apple banana cherry apple date",
            "banana cherry elder fig grape banana",
            "apple fig grape honey apple cherry date elder",
            "date elder fig honey",
            "cherry apple banana",
        ]
        .iter()
        .map(|d| d.split(' ').map(String::from).collect())
        .collect()
    }

    fn micro_topics() -> Vec<Vec<String>> {
        vec![
            strings(&["apple", "banana", "cherry"]),
            strings(&["fig", "grape", "honey", "date"]),
            strings(&["elder", "apple", "grape"]),
        ]
    }

    // Values from gensim's CoherenceModel (c_v). Every document is shorter
    // than the window, so each is a single window.
    #[test]
    fn coherence_matches_gensim_at_default_window() {
        let c = topic_coherence_cv(&micro_topics(), &micro_reference(), DEFAULT_WINDOW).unwrap();
        assert!((c - 0.7307881544140692).abs() < 1e-9, "{c}");
        let single = topic_coherence_cv(&micro_topics()[2..], &micro_reference(), DEFAULT_WINDOW).unwrap();
        assert!((single - 0.5508988697802456).abs() < 1e-9, "{single}");
    }

    /// Recounts every window from scratch with sets.
    fn brute_force_cv(topics: &[Vec<String>], reference: &[Vec<String>], window: usize) -> f64 {
        let mut windows: Vec<HashSet<&str>> = Vec::new();
        for doc in reference {
            if doc.len() < window {
                windows.push(doc.iter().map(String::as_str).collect());
            } else {
                for s in 0..=doc.len() - window {
                    windows.push(doc[s..s + window].iter().map(String::as_str).collect());
                }
            }
        }
        let n = windows.len() as f64;
        let p = |ws: &[&str]| windows.iter().filter(|w| ws.iter().all(|x| w.contains(x))).count() as f64 / n;
        let npmi = |a: &str, b: &str| {
            let pab = p(&[a, b]) + NPMI_EPSILON;
            (pab / (p(&[a]) * p(&[b]))).ln() / -pab.ln()
        };
        let mut total = 0.0;
        for topic in topics {
            let vecs: Vec<Vec<f64>> = topic.iter().map(|a| topic.iter().map(|b| npmi(a, b)).collect()).collect();
            let sum: Vec<f64> = (0..topic.len()).map(|j| vecs.iter().map(|v| v[j]).sum()).collect();
            total += vecs.iter().map(|v| cosine(v, &sum)).sum::<f64>() / topic.len() as f64;
        }
        total / topics.len() as f64
    }

    #[test]
    fn coherence_matches_brute_force_with_sliding_windows() {
        for window in [2, 3, 4, 5, 110] {
            let c = topic_coherence_cv(&micro_topics(), &micro_reference(), window).unwrap();
            let oracle = brute_force_cv(&micro_topics(), &micro_reference(), window);
            assert!((c - oracle).abs() < 1e-12, "window {window}: {c} vs {oracle}");
        }
    }

    #[test]
    fn coherence_skips_unknown_words_and_errors_when_nothing_left() {
        let reference = vec![strings(&["alpha", "beta"])];
        let topics = vec![strings(&["alpha", "missing"])];
        assert!(matches!(topic_coherence_cv(&topics, &reference, 110), Err(Error::Metric(_))));
    }

    #[test]
    fn long_documents_use_sliding_windows() {
        let doc = strings(&["alpha", "x", "x", "beta", "x"]);
        let counts = WindowCounts::collect(&["alpha", "beta"], &[doc], 3);
        assert_eq!(counts.windows, 3);
        assert_eq!(counts.single, vec![1, 2]);
        assert_eq!(counts.pair[1], 0);
    }

    #[test]
    fn identical_clusters_score_one() {
        let labels = strings(&["a", "a", "b", "b", "c"]);
        let clusters = vec![2, 2, 0, 0, 1];
        let (purity, nmi) = partition_purity_nmi(&clusters, &labels).unwrap();
        assert_eq!(purity, 1.0);
        assert!((nmi - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_cluster_has_zero_nmi() {
        let labels = strings(&["a", "b", "a", "b"]);
        let (purity, nmi) = partition_purity_nmi(&[0, 0, 0, 0], &labels).unwrap();
        assert_eq!(purity, 0.5);
        assert_eq!(nmi, 0.0);
    }

    #[test]
    fn argmax_ties_go_low() {
        let theta = array![[0.5, 0.5], [0.2, 0.8], [0.4, 0.4]];
        assert_eq!(argmax_rows(theta.view()), vec![0, 1, 0]);
    }

    #[test]
    fn svm_memorizes_separable_data() {
        let x = array![[0.9, 0.1], [0.8, 0.2], [0.1, 0.9], [0.3, 0.7], [0.95, 0.05], [0.2, 0.8]];
        let y = strings(&["a", "a", "b", "b", "a", "b"]);
        let (acc, f1) = classify_doc_topics(x.view(), &y, x.view(), &y, 0).unwrap();
        assert_eq!(acc, 1.0);
        assert_eq!(f1, 1.0);
    }

    #[test]
    fn svm_rejects_single_class() {
        let x = array![[0.9, 0.1], [0.8, 0.2]];
        let y = strings(&["a", "a"]);
        assert!(matches!(LinearSvm::fit(x.view(), &y, 0), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn macro_f1_toy_table() {
        // truth a a a b b c ; predicted a a b b c c
        // a: tp 2 fp 0 fn 1 -> 0.8 ; b: tp 1 fp 1 fn 1 -> 0.5 ; c: tp 1 fp 1 fn 0 -> 2/3
        let truth = strings(&["a", "a", "a", "b", "b", "c"]);
        let pred = strings(&["a", "a", "b", "b", "c", "c"]);
        let (acc, f1) = accuracy_and_macro_f1(&truth, &pred);
        assert!((acc - 4.0 / 6.0).abs() < 1e-15);
        assert!((f1 - (0.8 + 0.5 + 2.0 / 3.0) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn matched_accuracy_finds_permutation() {
        let truth = vec![0, 0, 1, 1, 2, 2];
        let assigned = vec![2, 2, 0, 0, 1, 0];
        assert!((matched_accuracy(&assigned, &truth, 3) - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn report_averages_and_text() {
        let report = EvalReport::from_slices(vec![
            SliceMetrics {
                slice: "2001".into(),
                tc: 0.4,
                td: 1.0,
            },
            SliceMetrics {
                slice: "2002".into(),
                tc: 0.6,
                td: 0.5,
            },
        ]);
        assert!((report.avg_tc - 0.5).abs() < 1e-15);
        assert!((report.avg_td - 0.75).abs() < 1e-15);
        let text = report.to_text();
        assert!(text.contains("TC\t2001\t0.400000"));
        assert!(text.contains("TD\tavg\t0.750000"));
        let back: EvalReport = serde_json::from_str(&report.to_json()).unwrap();
        assert_eq!(back, report);
    }
}
