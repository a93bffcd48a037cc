//! K-means over statement vectors, silhouette validation, and naming
//! clusters Positive / Neutral / Negative with a polarity lexicon.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::EmbeddingVector;
use crate::textprep::{parse_word_list, CleanedStatement};

pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClusterError {
    #[error("k must be at least 2 (got {0})")]
    KTooSmall(usize),
    #[error("need at least k={k} points, got {n}")]
    TooFewPoints { n: usize, k: usize },
    #[error("points have mixed dimensions ({first} and {other})")]
    MixedDimensions { first: usize, other: usize },
    #[error("restarts and max_iter must be positive")]
    BadConfig,
    #[error("{points} points but {assignments} assignments")]
    LengthMismatch { points: usize, assignments: usize },
    #[error("silhouette undefined for k=1")]
    SingleCluster,
    #[error("no cluster counts to compare")]
    NoCandidates,
    #[error("sentiment labels are defined for k=2 or k=3, not k={0}")]
    UnsupportedLabelCount(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansConfig {
    pub k: usize,
    pub seed: u64,
    pub restarts: usize,
    pub max_iter: usize,
    pub tol: f64,
}

impl KMeansConfig {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            seed: DEFAULT_SEED,
            restarts: 10,
            max_iter: 300,
            tol: 1e-6,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    pub seed: u64,
    pub iterations_run: usize,
    /// Inertia after each Lloyd iteration of the winning restart.
    #[serde(default)]
    pub inertia_trace: Vec<f64>,
}

impl ClusterModel {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    sq_dist(a, b).sqrt()
}

fn check_dims(points: &[EmbeddingVector]) -> Result<usize, ClusterError> {
    let first = points.first().map_or(0, EmbeddingVector::dim);
    match points.iter().find(|p| p.dim() != first) {
        Some(p) => Err(ClusterError::MixedDimensions {
            first,
            other: p.dim(),
        }),
        None => Ok(first),
    }
}

/// Sum of squared distances from each point to its assigned centroid.
pub fn inertia(points: &[EmbeddingVector], centroids: &[Vec<f64>], assignments: &[usize]) -> f64 {
    points
        .iter()
        .zip(assignments)
        .map(|(p, &a)| sq_dist(p.values(), &centroids[a]))
        .sum()
}

/// Lloyd's algorithm from k-means++ seeding, best of `restarts` runs by
/// inertia. Each run stops once no centroid moves by `tol` or more, or after
/// `max_iter` iterations. A cluster left empty by an assignment step is
/// reseeded with the point farthest from its own centroid.
pub fn kmeans_fit(
    points: &[EmbeddingVector],
    cfg: &KMeansConfig,
) -> Result<ClusterModel, ClusterError> {
    if cfg.k < 2 {
        return Err(ClusterError::KTooSmall(cfg.k));
    }
    if points.len() < cfg.k {
        return Err(ClusterError::TooFewPoints {
            n: points.len(),
            k: cfg.k,
        });
    }
    if cfg.restarts == 0 || cfg.max_iter == 0 {
        return Err(ClusterError::BadConfig);
    }
    check_dims(points)?;
    let data: Vec<&[f64]> = points.iter().map(EmbeddingVector::values).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut best: Option<ClusterModel> = None;
    for _ in 0..cfg.restarts {
        let init = plus_plus_init(&data, cfg.k, &mut rng);
        let run = lloyd(&data, init, cfg);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    let mut model = best.expect("restarts > 0");
    model.seed = cfg.seed;
    Ok(model)
}

fn plus_plus_init(data: &[&[f64]], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = data.len();
    let mut centroids = vec![data[rng.random_range(0..n)].to_vec()];
    let mut closest: Vec<f64> = data.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = closest.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, d) in closest.iter().enumerate() {
                if r < *d {
                    chosen = i;
                    break;
                }
                r -= d;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = data[pick].to_vec();
        for (slot, p) in closest.iter_mut().zip(data) {
            *slot = slot.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    best
}

fn lloyd(data: &[&[f64]], mut centroids: Vec<Vec<f64>>, cfg: &KMeansConfig) -> ClusterModel {
    let k = centroids.len();
    let dim = data[0].len();
    let mut assignments = vec![0usize; data.len()];
    let mut trace = Vec::new();
    let mut iterations_run = 0;

    for _ in 0..cfg.max_iter {
        iterations_run += 1;
        let mut changed = false;
        for (a, p) in assignments.iter_mut().zip(data) {
            let j = nearest(p, &centroids);
            changed |= *a != j;
            *a = j;
        }
        repair_empty_clusters(data, &mut centroids, &mut assignments);

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in data.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(p.iter()) {
                *s += x;
            }
        }
        let mut shift = 0.0f64;
        for (j, sum) in sums.into_iter().enumerate() {
            let mean: Vec<f64> = sum.into_iter().map(|s| s / counts[j] as f64).collect();
            shift = shift.max(dist(&mean, &centroids[j]));
            centroids[j] = mean;
        }
        let current: f64 = data
            .iter()
            .zip(&assignments)
            .map(|(p, &a)| sq_dist(p, &centroids[a]))
            .sum();
        trace.push(current);
        if shift < cfg.tol || (!changed && iterations_run > 1) {
            break;
        }
    }

    ClusterModel {
        k,
        inertia: *trace.last().expect("max_iter > 0"),
        centroids,
        assignments,
        seed: cfg.seed,
        iterations_run,
        inertia_trace: trace,
    }
}

fn repair_empty_clusters(data: &[&[f64]], centroids: &mut [Vec<f64>], assignments: &mut [usize]) {
    let k = centroids.len();
    loop {
        let mut counts = vec![0usize; k];
        for &a in assignments.iter() {
            counts[a] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let donor = (0..data.len())
            .filter(|&i| counts[assignments[i]] > 1)
            .max_by(|&i, &j| {
                let di = sq_dist(data[i], &centroids[assignments[i]]);
                let dj = sq_dist(data[j], &centroids[assignments[j]]);
                di.total_cmp(&dj).then(j.cmp(&i))
            })
            .expect("n >= k leaves a cluster with two or more members");
        centroids[empty] = data[donor].to_vec();
        assignments[donor] = empty;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SilhouetteResult {
    pub per_point: Vec<f64>,
    pub mean: f64,
}

/// Silhouette coefficients with Euclidean distance. `a(i)` is the mean
/// distance from `i` to the other members of its cluster and `b(i)` the
/// smallest mean distance from `i` to the members of another cluster;
/// `s(i) = (b - a) / max(a, b)`. Members of singleton clusters, and points
/// with `a = b = 0`, score 0.
pub fn silhouette(
    points: &[EmbeddingVector],
    assignments: &[usize],
) -> Result<SilhouetteResult, ClusterError> {
    if points.len() != assignments.len() {
        return Err(ClusterError::LengthMismatch {
            points: points.len(),
            assignments: assignments.len(),
        });
    }
    check_dims(points)?;
    let labels: BTreeSet<usize> = assignments.iter().copied().collect();
    if labels.len() < 2 {
        return Err(ClusterError::SingleCluster);
    }
    let dense: BTreeMap<usize, usize> = labels.iter().enumerate().map(|(i, &l)| (l, i)).collect();
    let cluster: Vec<usize> = assignments.iter().map(|a| dense[a]).collect();
    let k = labels.len();
    let mut sizes = vec![0usize; k];
    for &c in &cluster {
        sizes[c] += 1;
    }

    let n = points.len();
    let mut per_point = Vec::with_capacity(n);
    let mut sums = vec![0.0f64; k];
    for i in 0..n {
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            if i != j {
                sums[cluster[j]] += dist(points[i].values(), points[j].values());
            }
        }
        let own = cluster[i];
        if sizes[own] == 1 {
            per_point.push(0.0);
            continue;
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        per_point.push(if denom == 0.0 { 0.0 } else { (b - a) / denom });
    }
    let mean = per_point.iter().sum::<f64>() / n as f64;
    Ok(SilhouetteResult { per_point, mean })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SentimentLabel {
    Positive,
    Neutral,
    Negative,
}

impl SentimentLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            SentimentLabel::Positive => "Positive",
            SentimentLabel::Neutral => "Neutral",
            SentimentLabel::Negative => "Negative",
        }
    }
}

impl fmt::Display for SentimentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

const DEFAULT_POSITIVE: &str = include_str!("../data/lexicon_positive.txt");
const DEFAULT_NEGATIVE: &str = include_str!("../data/lexicon_negative.txt");

#[derive(Debug, Clone, PartialEq)]
pub struct PolarityLexicon {
    pub positive: HashSet<String>,
    pub negative: HashSet<String>,
}

impl PolarityLexicon {
    pub fn parse(positive: &str, negative: &str) -> Self {
        Self {
            positive: parse_word_list(positive).collect(),
            negative: parse_word_list(negative).collect(),
        }
    }

    pub fn load(positive: Option<&Path>, negative: Option<&Path>) -> io::Result<Self> {
        let read = |p: Option<&Path>, default: &str| -> io::Result<String> {
            p.map_or_else(|| Ok(default.to_string()), std::fs::read_to_string)
        };
        Ok(Self::parse(
            &read(positive, DEFAULT_POSITIVE)?,
            &read(negative, DEFAULT_NEGATIVE)?,
        ))
    }

    /// (positive hits − negative hits) / max(1, token count).
    pub fn statement_score(&self, tokens: &[String]) -> f64 {
        let pos = tokens.iter().filter(|t| self.positive.contains(*t)).count() as f64;
        let neg = tokens.iter().filter(|t| self.negative.contains(*t)).count() as f64;
        (pos - neg) / tokens.len().max(1) as f64
    }
}

impl Default for PolarityLexicon {
    fn default() -> Self {
        Self::parse(DEFAULT_POSITIVE, DEFAULT_NEGATIVE)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentimentLabeling {
    pub label_of_cluster: BTreeMap<usize, SentimentLabel>,
    pub cluster_polarity_score: BTreeMap<usize, f64>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl SentimentLabeling {
    pub fn cluster_with(&self, label: SentimentLabel) -> Option<usize> {
        self.label_of_cluster
            .iter()
            .find(|(_, l)| **l == label)
            .map(|(c, _)| *c)
    }
}

/// Scores each cluster by the mean lexicon polarity of its members and hands
/// out labels in score order (highest is Positive, lowest Negative, any
/// middle cluster Neutral). Equal scores go to the lower cluster index first.
pub fn label_clusters(
    model: &ClusterModel,
    statements: &[CleanedStatement],
    lexicon: &PolarityLexicon,
) -> Result<SentimentLabeling, ClusterError> {
    label_assignments(model.k, &model.assignments, statements, lexicon)
}

pub fn label_assignments(
    k: usize,
    assignments: &[usize],
    statements: &[CleanedStatement],
    lexicon: &PolarityLexicon,
) -> Result<SentimentLabeling, ClusterError> {
    let labels: &[SentimentLabel] = match k {
        2 => &[SentimentLabel::Positive, SentimentLabel::Negative],
        3 => &[
            SentimentLabel::Positive,
            SentimentLabel::Neutral,
            SentimentLabel::Negative,
        ],
        other => return Err(ClusterError::UnsupportedLabelCount(other)),
    };
    if statements.len() != assignments.len() {
        return Err(ClusterError::LengthMismatch {
            points: statements.len(),
            assignments: assignments.len(),
        });
    }
    let mut totals = vec![0.0f64; k];
    let mut counts = vec![0usize; k];
    for (s, &a) in statements.iter().zip(assignments) {
        totals[a] += lexicon.statement_score(&s.tokens);
        counts[a] += 1;
    }
    let scores: Vec<f64> = totals
        .iter()
        .zip(&counts)
        .map(|(t, &c)| if c == 0 { 0.0 } else { t / c as f64 })
        .collect();

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut warnings = Vec::new();
    for w in order.windows(2) {
        if scores[w[0]] == scores[w[1]] {
            warnings.push(format!(
                "clusters {} and {} tie on polarity score {}; lower index takes the more positive label",
                w[0].min(w[1]),
                w[0].max(w[1]),
                scores[w[0]]
            ));
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(SentimentLabeling {
        label_of_cluster: order.iter().zip(labels).map(|(&c, &l)| (c, l)).collect(),
        cluster_polarity_score: scores.into_iter().enumerate().collect(),
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KScore {
    pub k: usize,
    pub mean_silhouette: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterComparison {
    pub scores: Vec<KScore>,
    pub selected_k: usize,
    pub models: Vec<ClusterModel>,
}

impl ClusterComparison {
    pub fn selected_model(&self) -> &ClusterModel {
        self.models
            .iter()
            .find(|m| m.k == self.selected_k)
            .expect("selected k was fitted")
    }

    pub fn score_for(&self, k: usize) -> Option<f64> {
        self.scores
            .iter()
            .find(|s| s.k == k)
            .map(|s| s.mean_silhouette)
    }
}

/// Fits every candidate k and keeps the one with the highest mean
/// silhouette; ties go to the smaller k.
pub fn compare_cluster_counts(
    points: &[EmbeddingVector],
    ks: &[usize],
    base: &KMeansConfig,
) -> Result<ClusterComparison, ClusterError> {
    let ks: BTreeSet<usize> = ks.iter().copied().collect();
    if ks.is_empty() {
        return Err(ClusterError::NoCandidates);
    }
    let mut scores = Vec::new();
    let mut models = Vec::new();
    for &k in &ks {
        let model = kmeans_fit(points, &KMeansConfig { k, ..base.clone() })?;
        let sil = silhouette(points, &model.assignments)?;
        scores.push(KScore {
            k,
            mean_silhouette: sil.mean,
        });
        models.push(model);
    }
    let selected_k = scores
        .iter()
        .fold(None::<&KScore>, |best, s| match best {
            Some(b) if b.mean_silhouette >= s.mean_silhouette => Some(b),
            _ => Some(s),
        })
        .expect("non-empty")
        .k;
    Ok(ClusterComparison {
        scores,
        selected_k,
        models,
    })
}
