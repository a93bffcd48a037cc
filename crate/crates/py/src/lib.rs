//! Python bindings for the citation-context pipeline.
//!
//! Vectors cross the boundary as `list[float]`; errors surface as
//! `ValueError` (bad input) or `RuntimeError` (pipeline failures).

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use secite::cluster::{self as cl, KMeansConfig};
use secite::embed::{self, EmbeddingVector};
use secite::project::{self as pj, TsneConfig};
use secite::summarize::{self as sm, PromptTemplate};
use secite::textprep::StopwordList;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn vectors(points: Vec<Vec<f64>>) -> PyResult<Vec<EmbeddingVector>> {
    points
        .into_iter()
        .map(|p| EmbeddingVector::new(p).map_err(value_err))
        .collect()
}

#[pyclass(name = "Sentence", get_all, frozen)]
struct PySentence {
    index: usize,
    text: String,
    span: (usize, usize),
}

#[pymethods]
impl PySentence {
    fn __repr__(&self) -> String {
        format!("Sentence(index={}, text={:?})", self.index, self.text)
    }
}

#[pyclass(name = "ReferenceEntry", get_all, frozen)]
struct PyReferenceEntry {
    number: u32,
    raw_string: String,
}

#[pymethods]
impl PyReferenceEntry {
    fn __repr__(&self) -> String {
        format!(
            "ReferenceEntry(number={}, raw_string={:?})",
            self.number, self.raw_string
        )
    }
}

#[pyclass(name = "ClusterModel", get_all, frozen)]
struct PyClusterModel {
    k: usize,
    centroids: Vec<Vec<f64>>,
    assignments: Vec<usize>,
    inertia: f64,
}

#[pymethods]
impl PyClusterModel {
    fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }
}

#[pyclass(name = "Projection", get_all, frozen)]
struct PyProjection {
    points: Vec<(f64, f64)>,
    final_kl: f64,
    warnings: Vec<String>,
}

#[pyclass(name = "EvaluationReport", frozen)]
struct PyEvaluationReport(secite::evaluate::EvaluationReport);

#[pymethods]
impl PyEvaluationReport {
    #[getter]
    fn paper_id(&self) -> &str {
        &self.0.paper_id
    }

    #[getter]
    fn success_rate(&self) -> f64 {
        self.0.extraction.success_rate
    }

    #[getter]
    fn contexts_found(&self) -> usize {
        self.0.extraction.contexts_found
    }

    #[getter]
    fn selected_k(&self) -> Option<usize> {
        self.0.clustering.as_ref().map(|c| c.selected_k)
    }

    #[getter]
    fn silhouette_by_k(&self) -> BTreeMap<usize, f64> {
        self.0
            .clustering
            .as_ref()
            .map(|c| c.silhouette_by_k.clone())
            .unwrap_or_default()
    }

    #[getter]
    fn similarity(&self) -> BTreeMap<String, f64> {
        self.0
            .similarity
            .iter()
            .map(|(p, s)| (p.to_string(), *s))
            .collect()
    }

    fn exit_code(&self) -> i32 {
        self.0.exit_code()
    }

    fn to_json(&self) -> String {
        self.0.to_json()
    }

    fn to_markdown(&self) -> String {
        self.0.to_markdown()
    }
}

/// Splits raw document text into sentences with character spans.
#[pyfunction]
fn segment_sentences(text: &str) -> Vec<PySentence> {
    secite::corpus::segment_sentences(text)
        .into_iter()
        .map(|s| PySentence {
            index: s.index,
            text: s.text,
            span: s.span,
        })
        .collect()
}

/// Returns `(entries, warnings)` for the numbered reference list.
#[pyfunction]
fn parse_reference_list(text: &str) -> (Vec<PyReferenceEntry>, Vec<String>) {
    let parsed = secite::corpus::parse_reference_list(text);
    let entries = parsed
        .entries
        .into_iter()
        .map(|e| PyReferenceEntry {
            number: e.number,
            raw_string: e.raw_string,
        })
        .collect();
    (entries, parsed.warnings)
}

/// Expands the inside of a bracket marker such as `"3-5, 9"` to sorted numbers.
#[pyfunction]
fn expand_marker(marker: &str) -> PyResult<Vec<u32>> {
    secite::extract::expand_marker(marker)
        .map(|s| s.into_iter().collect())
        .map_err(value_err)
}

#[pyfunction]
#[pyo3(signature = (text, stopwords=None))]
fn clean_text(text: &str, stopwords: Option<Vec<String>>) -> Vec<String> {
    let list = match stopwords {
        Some(words) => StopwordList::parse(&words.join("\n")),
        None => StopwordList::default(),
    };
    secite::textprep::clean_text(text, &list)
}

#[pyfunction]
#[pyo3(signature = (text, dim=embed::DEFAULT_FALLBACK_DIM))]
fn hashed_fallback_embed(text: &str, dim: usize) -> PyResult<Vec<f64>> {
    if dim == 0 {
        return Err(PyValueError::new_err("dim must be positive"));
    }
    Ok(embed::hashed_fallback_embed(text, dim).values().to_vec())
}

#[pyfunction]
fn cosine_similarity(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    let a = EmbeddingVector::new(a).map_err(value_err)?;
    let b = EmbeddingVector::new(b).map_err(value_err)?;
    embed::cosine_similarity(&a, &b).map_err(value_err)
}

#[pyfunction]
#[pyo3(signature = (points, k, seed=cl::DEFAULT_SEED))]
fn kmeans_fit(points: Vec<Vec<f64>>, k: usize, seed: u64) -> PyResult<PyClusterModel> {
    let m = cl::kmeans_fit(&vectors(points)?, &KMeansConfig::new(k).with_seed(seed))
        .map_err(value_err)?;
    Ok(PyClusterModel {
        k: m.k,
        centroids: m.centroids,
        assignments: m.assignments,
        inertia: m.inertia,
    })
}

/// Returns `(per_point, mean)` silhouette coefficients.
#[pyfunction]
fn silhouette(points: Vec<Vec<f64>>, assignments: Vec<usize>) -> PyResult<(Vec<f64>, f64)> {
    let s = cl::silhouette(&vectors(points)?, &assignments).map_err(value_err)?;
    Ok((s.per_point, s.mean))
}

#[pyfunction]
#[pyo3(signature = (points, seed=cl::DEFAULT_SEED, perplexity=None, iterations=1000))]
fn tsne_project(
    py: Python<'_>,
    points: Vec<Vec<f64>>,
    seed: u64,
    perplexity: Option<f64>,
    iterations: usize,
) -> PyResult<PyProjection> {
    let points = vectors(points)?;
    let cfg = TsneConfig {
        seed,
        perplexity,
        iterations,
        ..TsneConfig::default()
    };
    let p = py
        .detach(|| pj::tsne_project(&points, &cfg))
        .map_err(value_err)?;
    Ok(PyProjection {
        points: p.points,
        final_kl: p.final_kl,
        warnings: p.warnings,
    })
}

/// Substitutes `{name}` placeholders; every placeholder needs a value.
#[pyfunction]
fn render_prompt(template: &str, values: BTreeMap<String, String>) -> PyResult<String> {
    sm::render_prompt(&PromptTemplate::new("inline", template, 512), &values).map_err(value_err)
}

/// Runs every stage offline or against the given services and returns the report.
#[pyfunction]
#[pyo3(signature = (manifest, out_dir, ks=vec![2, 3], seed=cl::DEFAULT_SEED, offline=true))]
fn run_pipeline(
    py: Python<'_>,
    manifest: PathBuf,
    out_dir: PathBuf,
    ks: Vec<usize>,
    seed: u64,
    offline: bool,
) -> PyResult<PyEvaluationReport> {
    let mut cfg = secite::RunConfig::new(Some(manifest), out_dir);
    cfg.ks = ks;
    cfg.seed = seed;
    cfg.offline = offline;
    py.detach(|| secite::run_pipeline(&cfg))
        .map(PyEvaluationReport)
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pymodule]
fn secite_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySentence>()?;
    m.add_class::<PyReferenceEntry>()?;
    m.add_class::<PyClusterModel>()?;
    m.add_class::<PyProjection>()?;
    m.add_class::<PyEvaluationReport>()?;
    m.add_function(wrap_pyfunction!(segment_sentences, m)?)?;
    m.add_function(wrap_pyfunction!(parse_reference_list, m)?)?;
    m.add_function(wrap_pyfunction!(expand_marker, m)?)?;
    m.add_function(wrap_pyfunction!(clean_text, m)?)?;
    m.add_function(wrap_pyfunction!(hashed_fallback_embed, m)?)?;
    m.add_function(wrap_pyfunction!(cosine_similarity, m)?)?;
    m.add_function(wrap_pyfunction!(kmeans_fit, m)?)?;
    m.add_function(wrap_pyfunction!(silhouette, m)?)?;
    m.add_function(wrap_pyfunction!(tsne_project, m)?)?;
    m.add_function(wrap_pyfunction!(render_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    Ok(())
}
