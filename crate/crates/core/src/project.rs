//! Exact t-SNE down to two dimensions and SVG scatter plots of the result.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{SentimentLabel, SentimentLabeling};
use crate::embed::EmbeddingVector;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProjectError {
    #[error("perplexity {perplexity} must be positive and below the point count {n}")]
    Perplexity { perplexity: f64, n: usize },
    #[error("at least 250 iterations are required (got {0})")]
    TooFewIterations(usize),
    #[error("input point {0} is not finite")]
    NonFinite(usize),
    #[error("points have mixed dimensions")]
    MixedDimensions,
    #[error("{points} projected points but {labels} cluster assignments")]
    LengthMismatch { points: usize, labels: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsneConfig {
    /// `None` means min(30, (n - 1) / 3).
    pub perplexity: Option<f64>,
    pub iterations: usize,
    pub early_exaggeration: f64,
    pub exaggeration_iterations: usize,
    pub learning_rate: f64,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: None,
            iterations: 1000,
            early_exaggeration: 12.0,
            exaggeration_iterations: 250,
            learning_rate: 200.0,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            seed: crate::cluster::DEFAULT_SEED,
        }
    }
}

impl TsneConfig {
    pub fn perplexity_for(&self, n: usize) -> f64 {
        self.perplexity
            .unwrap_or_else(|| (n.saturating_sub(1) as f64 / 3.0).min(30.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection2D {
    pub points: Vec<(f64, f64)>,
    pub final_kl: f64,
    /// KL divergence after every iteration past the exaggeration phase.
    #[serde(default)]
    pub kl_trace: Vec<f64>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

const ENTROPY_TOL: f64 = 1e-5;
const MAX_BISECTIONS: usize = 50;
const MIN_PROB: f64 = 1e-12;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Symmetrized joint probabilities (row-major n×n). Each row's Gaussian
/// precision is found by bisection so the conditional distribution's
/// entropy equals log2(perplexity) bits.
pub fn joint_probabilities(points: &[&[f64]], perplexity: f64) -> Vec<f64> {
    let n = points.len();
    let target = perplexity.log2();
    let mut cond = vec![0.0f64; n * n];
    let mut dist = vec![0.0f64; n];
    for i in 0..n {
        for j in 0..n {
            dist[j] = if i == j {
                0.0
            } else {
                sq_dist(points[i], points[j])
            };
        }
        let dmin = (0..n)
            .filter(|&j| j != i)
            .map(|j| dist[j])
            .fold(f64::INFINITY, f64::min);
        let (mut beta, mut lo, mut hi) = (1.0f64, 0.0f64, f64::INFINITY);
        let row = &mut cond[i * n..(i + 1) * n];
        for _ in 0..MAX_BISECTIONS {
            let mut sum = 0.0;
            let mut weighted = 0.0;
            for j in 0..n {
                if j == i {
                    row[j] = 0.0;
                    continue;
                }
                let d = dist[j] - dmin;
                let p = (-beta * d).exp();
                row[j] = p;
                sum += p;
                weighted += d * p;
            }
            let entropy_bits = (sum.ln() + beta * weighted / sum) / std::f64::consts::LN_2;
            for p in row.iter_mut() {
                *p /= sum;
            }
            let diff = entropy_bits - target;
            if diff.abs() < ENTROPY_TOL {
                break;
            }
            if diff > 0.0 {
                lo = beta;
                beta = if hi.is_finite() {
                    (beta + hi) / 2.0
                } else {
                    beta * 2.0
                };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
        }
    }
    let mut joint = vec![0.0f64; n * n];
    let denom = 2.0 * n as f64;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                joint[i * n + j] = ((cond[i * n + j] + cond[j * n + i]) / denom).max(MIN_PROB);
            }
        }
    }
    joint
}

/// KL(P‖Q) and its gradient with respect to the 2-D coordinates `y`
/// (interleaved x, y). `p` may be exaggerated; the KL value is then of the
/// scaled matrix and only meaningful for unscaled `p`.
pub fn kl_and_gradient(p: &[f64], y: &[f64]) -> (f64, Vec<f64>) {
    let n = y.len() / 2;
    let mut num = vec![0.0f64; n * n];
    let mut z = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = y[2 * i] - y[2 * j];
            let dy = y[2 * i + 1] - y[2 * j + 1];
            let v = 1.0 / (1.0 + dx * dx + dy * dy);
            num[i * n + j] = v;
            num[j * n + i] = v;
            z += 2.0 * v;
        }
    }
    let mut kl = 0.0;
    let mut grad = vec![0.0f64; 2 * n];
    for i in 0..n {
        let (mut gx, mut gy) = (0.0, 0.0);
        for j in 0..n {
            if i == j {
                continue;
            }
            let pij = p[i * n + j];
            let qij = (num[i * n + j] / z).max(MIN_PROB);
            if pij > 0.0 {
                kl += pij * (pij / qij).ln();
            }
            let m = 4.0 * (pij - qij) * num[i * n + j];
            gx += m * (y[2 * i] - y[2 * j]);
            gy += m * (y[2 * i + 1] - y[2 * j + 1]);
        }
        grad[2 * i] = gx;
        grad[2 * i + 1] = gy;
    }
    (kl, grad)
}

pub fn kl_divergence(p: &[f64], y: &[f64]) -> f64 {
    kl_and_gradient(p, y).0
}

fn recenter(y: &mut [f64]) {
    let n = (y.len() / 2).max(1) as f64;
    let (mx, my) = y
        .chunks(2)
        .fold((0.0, 0.0), |(a, b), c| (a + c[0], b + c[1]));
    for c in y.chunks_mut(2) {
        c[0] -= mx / n;
        c[1] -= my / n;
    }
}

/// Projects the points to 2-D. Fewer than four points get fixed placements
/// (origin for one point, unit-spaced on the x axis for two or three).
///
/// During early exaggeration the update is plain momentum gradient descent.
/// Afterwards every step is checked against the true KL divergence: a
/// momentum step that would raise it is replaced by a backtracking gradient
/// step and the momentum is reset, so the objective never increases.
pub fn tsne_project(
    points: &[EmbeddingVector],
    cfg: &TsneConfig,
) -> Result<Projection2D, ProjectError> {
    let n = points.len();
    if let Some(i) = points
        .iter()
        .position(|p| p.values().iter().any(|v| !v.is_finite()))
    {
        return Err(ProjectError::NonFinite(i));
    }
    if points.iter().any(|p| p.dim() != points[0].dim()) {
        return Err(ProjectError::MixedDimensions);
    }
    if n < 4 {
        let mut warnings = Vec::new();
        if n > 1 {
            let msg = format!("only {n} points; using fixed collinear placement instead of t-SNE");
            log::warn!("{msg}");
            warnings.push(msg);
        }
        return Ok(Projection2D {
            points: (0..n).map(|i| (i as f64, 0.0)).collect(),
            final_kl: 0.0,
            kl_trace: Vec::new(),
            warnings,
        });
    }
    let perplexity = cfg.perplexity_for(n);
    if !(perplexity > 0.0 && perplexity < n as f64) {
        return Err(ProjectError::Perplexity { perplexity, n });
    }
    if cfg.iterations < 250 {
        return Err(ProjectError::TooFewIterations(cfg.iterations));
    }

    let data: Vec<&[f64]> = points.iter().map(EmbeddingVector::values).collect();
    let p = joint_probabilities(&data, perplexity);
    let exaggerated: Vec<f64> = p.iter().map(|v| v * cfg.early_exaggeration).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, 1e-4).expect("valid std");
    let mut y: Vec<f64> = (0..2 * n).map(|_| normal.sample(&mut rng)).collect();
    let mut velocity = vec![0.0f64; 2 * n];
    let mut kl_trace = Vec::new();
    let exaggeration_end = cfg.exaggeration_iterations.min(cfg.iterations);

    for _ in 0..exaggeration_end {
        let (_, grad) = kl_and_gradient(&exaggerated, &y);
        for ((v, g), yi) in velocity.iter_mut().zip(&grad).zip(y.iter_mut()) {
            *v = cfg.initial_momentum * *v - cfg.learning_rate * g;
            *yi += *v;
        }
        recenter(&mut y);
    }

    let (mut kl, mut grad) = kl_and_gradient(&p, &y);
    for _ in exaggeration_end..cfg.iterations {
        let candidate: Vec<f64> = y
            .iter()
            .zip(&velocity)
            .zip(&grad)
            .map(|((yi, v), g)| yi + cfg.final_momentum * v - cfg.learning_rate * g)
            .collect();
        let (ckl, cgrad) = kl_and_gradient(&p, &candidate);
        if ckl <= kl {
            for ((v, c), yi) in velocity.iter_mut().zip(&candidate).zip(&y) {
                *v = c - yi;
            }
            y = candidate;
            kl = ckl;
            grad = cgrad;
        } else {
            velocity.iter_mut().for_each(|v| *v = 0.0);
            let mut step = cfg.learning_rate;
            for _ in 0..40 {
                step /= 2.0;
                let trial: Vec<f64> = y.iter().zip(&grad).map(|(yi, g)| yi - step * g).collect();
                let (tkl, tgrad) = kl_and_gradient(&p, &trial);
                if tkl <= kl {
                    y = trial;
                    kl = tkl;
                    grad = tgrad;
                    break;
                }
            }
        }
        kl_trace.push(kl);
    }
    recenter(&mut y);

    Ok(Projection2D {
        points: y.chunks(2).map(|c| (c[0], c[1])).collect(),
        final_kl: kl,
        kl_trace,
        warnings: Vec::new(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedPoint {
    pub x: f64,
    pub y: f64,
    pub cluster: usize,
    pub label: Option<SentimentLabel>,
}

pub fn projection_records(
    projection: &Projection2D,
    assignments: &[usize],
    labeling: Option<&SentimentLabeling>,
) -> Result<Vec<ProjectedPoint>, ProjectError> {
    if projection.points.len() != assignments.len() {
        return Err(ProjectError::LengthMismatch {
            points: projection.points.len(),
            labels: assignments.len(),
        });
    }
    Ok(projection
        .points
        .iter()
        .zip(assignments)
        .map(|(&(x, y), &cluster)| ProjectedPoint {
            x,
            y,
            cluster,
            label: labeling.and_then(|l| l.label_of_cluster.get(&cluster).copied()),
        })
        .collect())
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 520.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 190.0;
const TOP: f64 = 50.0;
const BOTTOM: f64 = 60.0;
const FALLBACK_COLORS: &[&str] = &[
    "#1f77b4", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

pub fn label_color(label: SentimentLabel) -> &'static str {
    match label {
        SentimentLabel::Positive => "#2ca02c",
        SentimentLabel::Neutral => "#7f7f7f",
        SentimentLabel::Negative => "#d62728",
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
        (a.min(v), b.max(v))
    });
    let range = if hi > lo { hi - lo } else { 1.0 };
    (lo - 0.05 * range, hi + 0.05 * range)
}

/// Renders an SVG 1.1 scatter plot: one circle per point coloured by its
/// cluster's sentiment label, axes over the data bounds plus a 5% margin, a
/// legend, and the mean silhouette in the title.
pub fn render_scatter(
    projection: &Projection2D,
    labeling: Option<&SentimentLabeling>,
    assignments: &[usize],
    mean_silhouette: Option<f64>,
) -> Result<String, ProjectError> {
    if projection.points.len() != assignments.len() {
        return Err(ProjectError::LengthMismatch {
            points: projection.points.len(),
            labels: assignments.len(),
        });
    }
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(
        svg,
        r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    if projection.points.is_empty() {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="16">no data</text>"#,
            WIDTH / 2.0,
            HEIGHT / 2.0
        );
        svg.push_str("</svg>\n");
        return Ok(svg);
    }

    let k = assignments.iter().copied().max().unwrap_or(0) + 1;
    let mut title = format!(
        "t-SNE projection of {} citation statements, k={k}",
        projection.points.len()
    );
    if let Some(s) = mean_silhouette {
        let _ = write!(title, ", mean silhouette {s:.4}");
    }
    let _ = writeln!(
        svg,
        r#"<text x="{LEFT}" y="28" font-family="sans-serif" font-size="15" font-weight="bold">{}</text>"#,
        xml_escape(&title)
    );

    let (x0, x1) = bounds(projection.points.iter().map(|p| p.0));
    let (y0, y1) = bounds(projection.points.iter().map(|p| p.1));
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * plot_w;
    let sy = |y: f64| TOP + plot_h - (y - y0) / (y1 - y0) * plot_h;

    let _ = writeln!(
        svg,
        r##"<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#444" stroke-width="1"/>"##
    );
    for t in 0..=4 {
        let f = t as f64 / 4.0;
        let xv = x0 + f * (x1 - x0);
        let yv = y0 + f * (y1 - y0);
        let (px, py) = (sx(xv), sy(yv));
        let _ = writeln!(
            svg,
            r##"<line x1="{px:.2}" y1="{:.2}" x2="{px:.2}" y2="{:.2}" stroke="#444"/><text x="{px:.2}" y="{:.2}" text-anchor="middle" font-family="sans-serif" font-size="11">{xv:.1}</text>"##,
            TOP + plot_h,
            TOP + plot_h + 5.0,
            TOP + plot_h + 18.0
        );
        let _ = writeln!(
            svg,
            r##"<line x1="{:.2}" y1="{py:.2}" x2="{LEFT}" y2="{py:.2}" stroke="#444"/><text x="{:.2}" y="{:.2}" text-anchor="end" font-family="sans-serif" font-size="11">{yv:.1}</text>"##,
            LEFT - 5.0,
            LEFT - 8.0,
            py + 4.0
        );
    }

    let color_of = |c: usize| -> &'static str {
        labeling
            .and_then(|l| l.label_of_cluster.get(&c))
            .map(|&l| label_color(l))
            .unwrap_or(FALLBACK_COLORS[c % FALLBACK_COLORS.len()])
    };
    let name_of = |c: usize| -> String {
        match labeling.and_then(|l| l.label_of_cluster.get(&c)) {
            Some(l) => format!("{l} (cluster {c})"),
            None => format!("cluster {c}"),
        }
    };

    for (&(x, y), &c) in projection.points.iter().zip(assignments) {
        let _ = writeln!(
            svg,
            r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="{}" fill-opacity="0.8"/>"#,
            sx(x),
            sy(y),
            color_of(c)
        );
    }

    let mut sizes: BTreeMap<usize, usize> = BTreeMap::new();
    for &c in assignments {
        *sizes.entry(c).or_default() += 1;
    }
    let legend_x = WIDTH - RIGHT + 15.0;
    for (row, (&c, &count)) in sizes.iter().enumerate() {
        let ly = TOP + 10.0 + row as f64 * 22.0;
        let _ = writeln!(
            svg,
            r#"<g class="legend"><rect x="{legend_x}" y="{ly}" width="12" height="12" fill="{}"/><text x="{}" y="{}" font-family="sans-serif" font-size="12">{} n={count}</text></g>"#,
            color_of(c),
            legend_x + 18.0,
            ly + 11.0,
            xml_escape(&name_of(c))
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(x.to_vec()).unwrap()
    }

    #[test]
    fn tiny_inputs_get_fixed_placements() {
        let cfg = TsneConfig::default();
        assert!(tsne_project(&[], &cfg).unwrap().points.is_empty());
        assert_eq!(
            tsne_project(&[v(&[1., 2.])], &cfg).unwrap().points,
            vec![(0.0, 0.0)]
        );
        let three = tsne_project(&[v(&[1.]), v(&[2.]), v(&[3.])], &cfg).unwrap();
        assert_eq!(three.points, vec![(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)]);
        assert_eq!(three.warnings.len(), 1);
    }

    #[test]
    fn rejects_bad_config() {
        let pts: Vec<_> = (0..6).map(|i| v(&[i as f64, 0.0])).collect();
        let cfg = TsneConfig {
            perplexity: Some(6.0),
            ..Default::default()
        };
        assert!(matches!(
            tsne_project(&pts, &cfg),
            Err(ProjectError::Perplexity { .. })
        ));
        let cfg = TsneConfig {
            iterations: 100,
            ..Default::default()
        };
        assert_eq!(
            tsne_project(&pts, &cfg),
            Err(ProjectError::TooFewIterations(100))
        );
    }

    #[test]
    fn joint_probabilities_are_symmetric_and_normalized() {
        let rows: Vec<Vec<f64>> = (0..12)
            .map(|i| vec![(i as f64).sin() * 3.0, (i as f64 * 0.7).cos()])
            .collect();
        let data: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let p = joint_probabilities(&data, 4.0);
        let total: f64 = p.iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
        for i in 0..12 {
            assert_eq!(p[i * 12 + i], 0.0);
            for j in 0..12 {
                assert!((p[i * 12 + j] - p[j * 12 + i]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn small_run_shape_and_kl() {
        let pts: Vec<_> = (0..8)
            .map(|i| v(&[i as f64, (i * i) as f64 * 0.1, 1.0]))
            .collect();
        let proj = tsne_project(
            &pts,
            &TsneConfig {
                iterations: 300,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(proj.points.len(), 8);
        assert!(proj
            .points
            .iter()
            .all(|p| p.0.is_finite() && p.1.is_finite()));
        assert!(proj.final_kl >= 0.0 && proj.final_kl.is_finite());
        assert_eq!(proj.kl_trace.len(), 50);
    }

    #[test]
    fn svg_counts() {
        let proj = Projection2D {
            points: vec![(0., 0.), (1., 0.), (0., 1.), (5., 5.), (6., 5.), (5., 6.)],
            final_kl: 0.0,
            kl_trace: vec![],
            warnings: vec![],
        };
        let labeling = SentimentLabeling {
            label_of_cluster: [(0, SentimentLabel::Negative), (1, SentimentLabel::Positive)].into(),
            cluster_polarity_score: [(0, -0.1), (1, 0.2)].into(),
            warnings: vec![],
        };
        let svg =
            render_scatter(&proj, Some(&labeling), &[0, 0, 0, 1, 1, 1], Some(0.1384)).unwrap();
        assert_eq!(svg.matches("<circle").count(), 6);
        assert_eq!(svg.matches(r#"class="legend""#).count(), 2);
        assert!(svg.contains("mean silhouette 0.1384"));
        assert!(svg.contains("Positive (cluster 1) n=3"));
        assert!(render_scatter(&proj, None, &[0], None).is_err());
    }

    #[test]
    fn svg_empty_placeholder() {
        let proj = Projection2D {
            points: vec![],
            final_kl: 0.0,
            kl_trace: vec![],
            warnings: vec![],
        };
        let svg = render_scatter(&proj, None, &[], None).unwrap();
        assert!(svg.contains("no data"));
        assert_eq!(svg.matches("<circle").count(), 0);
    }
}
