//! Few-shot episodes, cosine centroid classifiers, ensemble aggregation and
//! accuracy reporting.
//!
//! Evaluation first extracts eval-mode features for every sample of the
//! evaluation classes into a [`FeatureBank`]; episodes then only index into
//! it. Episode `e` draws from a stream derived from `(master_seed, e)`, so any
//! execution order yields the same per-episode accuracies.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::index::sample;
use rand::Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::{features_of, EnsembleParams};
use crate::rng;
use crate::tape::{self, NORM_FLOOR};

/// Cosine logits are multiplied by this factor.
pub const DEFAULT_SCALE: f64 = 10.0;
pub const DEFAULT_QUERY: usize = 15;

/// One N-way k-shot task. Indices refer to rows of the source (dataset or
/// feature bank); labels are episode-local, `0..n_way`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Episode {
    pub n_way: usize,
    pub k_shot: usize,
    pub q_query: usize,
    pub support: Vec<usize>,
    pub support_labels: Vec<usize>,
    pub query: Vec<usize>,
    pub query_labels: Vec<usize>,
}

/// Draw an episode from `pools`, where `pools[c]` lists the rows of class `c`.
pub fn sample_from_pools<R: Rng + ?Sized>(
    pools: &[Vec<usize>],
    n: usize,
    k: usize,
    q: usize,
    rng: &mut R,
) -> Result<Episode> {
    if n == 0 || k == 0 {
        return Err(Error::param("episode", "n_way and k_shot must be positive"));
    }
    if pools.len() < n {
        return Err(Error::param(
            "n_way",
            format!("{n}-way episodes need {n} classes, only {} available", pools.len()),
        ));
    }
    if let Some(small) = pools.iter().position(|p| p.len() < k + q) {
        return Err(Error::param(
            "k_shot",
            format!(
                "class {small} has {} samples, fewer than k + q = {}",
                pools[small].len(),
                k + q
            ),
        ));
    }
    let mut ep = Episode {
        n_way: n,
        k_shot: k,
        q_query: q,
        support: Vec::with_capacity(n * k),
        support_labels: Vec::with_capacity(n * k),
        query: Vec::with_capacity(n * q),
        query_labels: Vec::with_capacity(n * q),
    };
    for (local, class) in sample(rng, pools.len(), n).into_iter().enumerate() {
        let pool = &pools[class];
        let picks = sample(rng, pool.len(), k + q).into_vec();
        for (i, &p) in picks.iter().enumerate() {
            if i < k {
                ep.support.push(pool[p]);
                ep.support_labels.push(local);
            } else {
                ep.query.push(pool[p]);
                ep.query_labels.push(local);
            }
        }
    }
    Ok(ep)
}

/// Episode over `classes` of `dataset`; indices are dataset sample indices.
pub fn sample_episode<R: Rng + ?Sized>(
    dataset: &Dataset,
    classes: &[usize],
    n: usize,
    k: usize,
    q: usize,
    rng: &mut R,
) -> Result<Episode> {
    let by = dataset.indices_by_class();
    let pools: Vec<Vec<usize>> = classes
        .iter()
        .map(|&c| {
            by.get(c)
                .cloned()
                .ok_or_else(|| Error::param("classes", format!("class {c} not in dataset")))
        })
        .collect::<Result<_>>()?;
    sample_from_pools(&pools, n, k, q, rng)
}

/// Nearest-prototype classifier on cosine similarity.
#[derive(Clone, Debug, PartialEq)]
pub struct CentroidClassifier {
    pub prototypes: Vec<Vec<f64>>,
    pub scale: f64,
}

fn check_support(features: &[Vec<f64>], labels: &[usize], n_way: usize) -> Result<usize> {
    if features.len() != labels.len() {
        return Err(Error::dim("support", &[features.len()], &[labels.len()]));
    }
    let dim = features.first().map_or(0, Vec::len);
    if features.iter().any(|f| f.len() != dim) {
        return Err(Error::param("support", "features differ in length"));
    }
    for c in 0..n_way {
        if !labels.contains(&c) {
            return Err(Error::param("support", format!("class {c} has no support sample")));
        }
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= n_way) {
        return Err(Error::param("support", format!("label {bad} >= n_way {n_way}")));
    }
    Ok(dim)
}

/// Per-class mean of the support features.
pub fn prototypes_mean(features: &[Vec<f64>], labels: &[usize], n_way: usize) -> Result<CentroidClassifier> {
    let dim = check_support(features, labels, n_way)?;
    let mut protos = vec![vec![0.0; dim]; n_way];
    let mut counts = vec![0usize; n_way];
    for (f, &y) in features.iter().zip(labels) {
        counts[y] += 1;
        for (p, v) in protos[y].iter_mut().zip(f) {
            *p += v;
        }
    }
    for (p, &c) in protos.iter_mut().zip(&counts) {
        p.iter_mut().for_each(|v| *v /= c as f64);
    }
    Ok(CentroidClassifier {
        prototypes: protos,
        scale: DEFAULT_SCALE,
    })
}

fn mix(alpha: &[Vec<f64>], features: &[Vec<f64>]) -> Vec<Vec<f64>> {
    alpha
        .iter()
        .map(|a| {
            let mut c = vec![0.0; features[0].len()];
            for (w, f) in a.iter().zip(features) {
                for (cv, fv) in c.iter_mut().zip(f) {
                    *cv += w * fv;
                }
            }
            c
        })
        .collect()
}

/// Mean support log-likelihood under the cosine softmax model, and its
/// gradient with respect to the mixing weights `alpha[class][sample]`.
pub fn support_log_likelihood(
    alpha: &[Vec<f64>],
    features: &[Vec<f64>],
    labels: &[usize],
    scale: f64,
) -> (f64, Vec<Vec<f64>>) {
    let protos = mix(alpha, features);
    let n = protos.len();
    let s = features.len() as f64;
    let c_norm: Vec<f64> = protos.iter().map(|c| tape::norm(c).max(NORM_FLOOR)).collect();
    let mut value = 0.0;
    let mut g_protos = vec![vec![0.0; features[0].len()]; n];
    for (f, &y) in features.iter().zip(labels) {
        let f_norm = tape::norm(f).max(NORM_FLOOR);
        let cos: Vec<f64> = protos.iter().map(|c| tape::cosine(f, c)).collect();
        let mut probs: Vec<f64> = cos.clone();
        tape::softmax_in_place(&mut probs, 1.0 / scale);
        value += tape::clamp_ln(probs[y]);
        for j in 0..n {
            let ds = ((j == y) as u8 as f64 - probs[j]) * scale / s;
            for ((g, fv), cv) in g_protos[j].iter_mut().zip(f).zip(&protos[j]) {
                *g += ds * (fv / (f_norm * c_norm[j]) - cos[j] * cv / (c_norm[j] * c_norm[j]));
            }
        }
    }
    let grad = g_protos
        .iter()
        .map(|g| {
            features
                .iter()
                .map(|f| f.iter().zip(g).map(|(a, b)| a * b).sum())
                .collect()
        })
        .collect();
    (value / s, grad)
}

/// Prototypes as learned combinations of support features, starting from
/// the class means and following gradient ascent on the support
/// log-likelihood. A step that lowers the objective is rejected and the step
/// size halved, so the returned objective trace is non-decreasing.
pub fn prototypes_learned(
    features: &[Vec<f64>],
    labels: &[usize],
    n_way: usize,
    steps: usize,
    lr: f64,
) -> Result<(CentroidClassifier, Vec<f64>)> {
    check_support(features, labels, n_way)?;
    if !(lr > 0.0) {
        return Err(Error::param("lr", "must be positive"));
    }
    let mut counts = vec![0usize; n_way];
    labels.iter().for_each(|&y| counts[y] += 1);
    let mut alpha: Vec<Vec<f64>> = (0..n_way)
        .map(|j| {
            labels
                .iter()
                .map(|&y| if y == j { 1.0 / counts[j] as f64 } else { 0.0 })
                .collect()
        })
        .collect();
    if steps == 0 {
        return Ok((prototypes_mean(features, labels, n_way)?, Vec::new()));
    }
    let (mut value, mut grad) = support_log_likelihood(&alpha, features, labels, DEFAULT_SCALE);
    let mut trace = vec![value];
    let mut step = lr;
    for _ in 0..steps {
        let trial: Vec<Vec<f64>> = alpha
            .iter()
            .zip(&grad)
            .map(|(a, g)| a.iter().zip(g).map(|(x, d)| x + step * d).collect())
            .collect();
        let (v, g) = support_log_likelihood(&trial, features, labels, DEFAULT_SCALE);
        if v >= value && v.is_finite() {
            alpha = trial;
            value = v;
            grad = g;
        } else {
            step /= 2.0;
        }
        trace.push(value);
    }
    Ok((
        CentroidClassifier {
            prototypes: mix(&alpha, features),
            scale: DEFAULT_SCALE,
        },
        trace,
    ))
}

/// Class probabilities `softmax(scale * cos(x, c_j))` for each query.
pub fn classify_probs(classifier: &CentroidClassifier, queries: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let dim = classifier.prototypes.first().map_or(0, Vec::len);
    queries
        .iter()
        .map(|x| {
            if x.len() != dim {
                return Err(Error::dim("classify_probs", &[x.len()], &[dim]));
            }
            let mut row: Vec<f64> = classifier.prototypes.iter().map(|c| tape::cosine(x, c)).collect();
            tape::softmax_in_place(&mut row, 1.0 / classifier.scale);
            Ok(row)
        })
        .collect()
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum AggregateMode {
    #[default]
    Average,
    Vote,
}

impl AggregateMode {
    pub fn token(self) -> &'static str {
        match self {
            AggregateMode::Average => "average",
            AggregateMode::Vote => "vote",
        }
    }
}

impl fmt::Display for AggregateMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for AggregateMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "average" => Ok(AggregateMode::Average),
            "vote" => Ok(AggregateMode::Vote),
            _ => Err(Error::param("mode", format!("unknown aggregation `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Aggregate {
    pub labels: Vec<usize>,
    /// Member-averaged probabilities, one row per query.
    pub mean_probs: Vec<Vec<f64>>,
}

/// Combine `per_member[j][query]` probability rows into predictions.
pub fn aggregate_ensemble(per_member: &[Vec<Vec<f64>>], mode: AggregateMode) -> Result<Aggregate> {
    let k = per_member.len();
    if k == 0 {
        return Err(Error::param("members", "nothing to aggregate"));
    }
    let n_q = per_member[0].len();
    if per_member.iter().any(|m| m.len() != n_q) {
        return Err(Error::param("members", "members disagree on query count"));
    }
    let mut mean_probs = Vec::with_capacity(n_q);
    let mut labels = Vec::with_capacity(n_q);
    for q in 0..n_q {
        let d = per_member[0][q].len();
        let mut avg = vec![0.0; d];
        for m in per_member {
            for (a, p) in avg.iter_mut().zip(&m[q]) {
                *a += p;
            }
        }
        avg.iter_mut().for_each(|a| *a /= k as f64);
        let label = match mode {
            AggregateMode::Average => argmax(&avg),
            AggregateMode::Vote => {
                let mut votes = vec![0usize; d];
                per_member.iter().for_each(|m| votes[argmax(&m[q])] += 1);
                let top = *votes.iter().max().expect("d >= 1");
                (0..d)
                    .filter(|&c| votes[c] == top)
                    .fold(None, |best: Option<usize>, c| match best {
                        Some(b) if avg[b] >= avg[c] => Some(b),
                        _ => Some(c),
                    })
                    .expect("at least one top class")
            }
        };
        labels.push(label);
        mean_probs.push(avg);
    }
    Ok(Aggregate { labels, mean_probs })
}

/// Accuracy summary over episodes; accuracies are in percent.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub accuracies: Vec<f64>,
    pub mean: f64,
    /// `1.96 * s / sqrt(N)` with `s` the sample standard deviation.
    pub half_ci: f64,
    pub n_way: usize,
    pub k_shot: usize,
    pub mode: AggregateMode,
    pub seed: u64,
    /// Identifies the evaluated model; zero when not tied to a checkpoint.
    pub fingerprint: u64,
}

impl EvalReport {
    pub fn n_episodes(&self) -> usize {
        self.accuracies.len()
    }
}

/// `(mean, 1.96 * sample_std / sqrt(N))`; the interval is zero for `N < 2`.
pub fn mean_and_half_ci(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, 1.96 * libm::sqrt(var) / libm::sqrt(n as f64))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CentroidKind {
    Mean,
    Learned { steps: usize, lr: f64 },
}

impl CentroidKind {
    pub fn learned_default() -> Self {
        CentroidKind::Learned { steps: 100, lr: 0.01 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub n_way: usize,
    pub k_shot: usize,
    pub q_query: usize,
    pub n_episodes: usize,
    pub mode: AggregateMode,
    pub centroid: CentroidKind,
    pub master_seed: u64,
    /// Stream label; distinct labels give independent episode banks.
    pub stream: String,
}

impl EvalConfig {
    pub fn new(n_way: usize, k_shot: usize, n_episodes: usize, master_seed: u64) -> Self {
        EvalConfig {
            n_way,
            k_shot,
            q_query: DEFAULT_QUERY,
            n_episodes,
            mode: AggregateMode::Average,
            centroid: CentroidKind::Mean,
            master_seed,
            stream: "episode".into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_way < 2 {
            return Err(Error::param("n_way", "must be at least 2"));
        }
        if self.k_shot == 0 || self.q_query == 0 {
            return Err(Error::param("k_shot", "k_shot and q_query must be positive"));
        }
        if self.n_episodes == 0 {
            return Err(Error::param("n_episodes", "must be positive"));
        }
        Ok(())
    }
}

/// Eval-mode features of every sample in a set of classes, per member.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBank {
    /// `pools[c]` lists the rows of class `c`.
    pools: Vec<Vec<usize>>,
    /// `features[member][row]`
    features: Vec<Vec<Vec<f64>>>,
}

impl FeatureBank {
    pub fn new(features: Vec<Vec<Vec<f64>>>, row_classes: &[usize]) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::param("members", "feature bank needs at least one member"));
        }
        if features.iter().any(|m| m.len() != row_classes.len()) {
            return Err(Error::dim("feature bank", &[features[0].len()], &[row_classes.len()]));
        }
        let n_classes = row_classes.iter().max().map_or(0, |m| m + 1);
        let mut pools = vec![Vec::new(); n_classes];
        for (row, &c) in row_classes.iter().enumerate() {
            pools[c].push(row);
        }
        Ok(FeatureBank { pools, features })
    }

    /// Extract features for the samples of `classes` (bank class `i` is
    /// `classes[i]`) from every ensemble member.
    pub fn extract(ensemble: &EnsembleParams, dataset: &Dataset, classes: &[usize]) -> Result<Self> {
        let (indices, row_classes) = class_rows(dataset, classes)?;
        let features = ensemble
            .members()
            .iter()
            .map(|m| features_of(m, dataset, &indices))
            .collect::<Result<_>>()?;
        FeatureBank::new(features, &row_classes)
    }

    pub fn n_members(&self) -> usize {
        self.features.len()
    }

    /// Bank restricted to the given members.
    pub fn select_members(&self, members: &[usize]) -> FeatureBank {
        FeatureBank {
            pools: self.pools.clone(),
            features: members.iter().map(|&j| self.features[j].clone()).collect(),
        }
    }

    pub fn features(&self) -> &[Vec<Vec<f64>>] {
        &self.features
    }
}

/// Dataset indices of the samples in `classes`, and each one's position in
/// `classes`.
pub fn class_rows(dataset: &Dataset, classes: &[usize]) -> Result<(Vec<usize>, Vec<usize>)> {
    let by = dataset.indices_by_class();
    let mut indices = Vec::new();
    let mut row_classes = Vec::new();
    for (pos, &c) in classes.iter().enumerate() {
        let pool = by
            .get(c)
            .ok_or_else(|| Error::param("classes", format!("class {c} not in dataset")))?;
        indices.extend_from_slice(pool);
        row_classes.extend(core::iter::repeat_n(pos, pool.len()));
    }
    Ok((indices, row_classes))
}

/// Runs episodes against a [`FeatureBank`].
#[derive(Clone, Debug)]
pub struct Evaluator {
    pub bank: FeatureBank,
    pub config: EvalConfig,
}

impl Evaluator {
    pub fn new(bank: FeatureBank, config: EvalConfig) -> Result<Self> {
        config.validate()?;
        Ok(Evaluator { bank, config })
    }

    pub fn episode(&self, index: usize) -> Result<Episode> {
        let c = &self.config;
        let mut r = rng::stream(c.master_seed, &c.stream, index as u64);
        sample_from_pools(&self.bank.pools, c.n_way, c.k_shot, c.q_query, &mut r)
    }

    /// Accuracy in percent on episode `index`.
    pub fn episode_accuracy(&self, index: usize) -> Result<f64> {
        let ep = self.episode(index)?;
        let mut per_member = Vec::with_capacity(self.bank.n_members());
        for feats in &self.bank.features {
            let support: Vec<Vec<f64>> = ep.support.iter().map(|&r| feats[r].clone()).collect();
            let query: Vec<Vec<f64>> = ep.query.iter().map(|&r| feats[r].clone()).collect();
            let clf = match self.config.centroid {
                CentroidKind::Mean => prototypes_mean(&support, &ep.support_labels, ep.n_way)?,
                CentroidKind::Learned { steps, lr } => {
                    prototypes_learned(&support, &ep.support_labels, ep.n_way, steps, lr)?.0
                }
            };
            per_member.push(classify_probs(&clf, &query)?);
        }
        let agg = aggregate_ensemble(&per_member, self.config.mode)?;
        let correct = agg.labels.iter().zip(&ep.query_labels).filter(|(a, b)| a == b).count();
        Ok(100.0 * correct as f64 / ep.query.len() as f64)
    }

    /// Assemble a report from per-episode accuracies in episode order.
    pub fn report(&self, accuracies: Vec<f64>, fingerprint: u64) -> EvalReport {
        let (mean, half_ci) = mean_and_half_ci(&accuracies);
        EvalReport {
            accuracies,
            mean,
            half_ci,
            n_way: self.config.n_way,
            k_shot: self.config.k_shot,
            mode: self.config.mode,
            seed: self.config.master_seed,
            fingerprint,
        }
    }

    pub fn run(&self, fingerprint: u64) -> Result<EvalReport> {
        let accs = (0..self.config.n_episodes)
            .map(|e| self.episode_accuracy(e))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.report(accs, fingerprint))
    }
}

/// Serial episodic evaluation of an ensemble (or a single network as `K = 1`).
pub fn evaluate(
    ensemble: &EnsembleParams,
    dataset: &Dataset,
    classes: &[usize],
    config: &EvalConfig,
) -> Result<EvalReport> {
    let bank = FeatureBank::extract(ensemble, dataset, classes)?;
    Evaluator::new(bank, config.clone())?.run(ensemble.content_hash())
}
