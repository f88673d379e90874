//! Python bindings for the `inforewrite` core: text analysis, BM25, prompt
//! rendering and retrieval metrics.

use std::collections::{BTreeMap, HashMap};

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use inforewrite::corpus::{Passage, QaPair, RewriteTask, Source};
use inforewrite::eval::{self, EvalOptions, Qrels, RunFile};
use inforewrite::prompting::{self, Instruction, Property};
use inforewrite::sparse::{self, Analyzer, Bm25Params, Stemmer};
use inforewrite::{analysis, distill, rewriter, Error, ScoredDoc};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        e if e.is_input_error() => PyValueError::new_err(e.to_string()),
        Error::Invalid(_) | Error::Dimension { .. } | Error::EmptyCollection | Error::UnusableCompletion(_) => {
            PyValueError::new_err(e.to_string())
        }
        e => PyRuntimeError::new_err(e.to_string()),
    }
}

fn analyzer(stem: bool) -> Analyzer {
    Analyzer {
        stemmer: if stem { Stemmer::Porter } else { Stemmer::None },
        ..Analyzer::default()
    }
}

fn pairs(context: Vec<(String, String)>) -> Vec<QaPair> {
    context
        .into_iter()
        .map(|(question, answer)| QaPair { question, answer })
        .collect()
}

fn task(context: Vec<(String, String)>, question: String) -> RewriteTask {
    let turn_no = context.len() as u32 + 1;
    RewriteTask {
        conversation_id: "py".to_string(),
        turn_no,
        context: pairs(context),
        question,
        human_rewrite: None,
        gold_passage_ids: Default::default(),
        source: Source::Quac,
        unrewritten_first_turn: false,
    }
}

fn properties_without(drop: Option<&str>) -> PyResult<Option<Property>> {
    drop.map(|d| d.parse::<Property>().map_err(py_err)).transpose()
}

fn build_run(tag: &str, run: HashMap<String, Vec<(String, f64)>>) -> PyResult<RunFile> {
    let mut out = RunFile::new(tag);
    for (qid, docs) in run {
        let docs = docs
            .into_iter()
            .enumerate()
            .map(|(i, (passage_id, score))| ScoredDoc {
                passage_id,
                score,
                rank: i + 1,
            })
            .collect();
        out.insert(qid, docs).map_err(py_err)?;
    }
    Ok(out)
}

fn build_qrels(qrels: HashMap<String, HashMap<String, i32>>) -> PyResult<Qrels> {
    let mut out = Qrels::default();
    for (qid, docs) in qrels {
        for (doc, grade) in docs {
            out.insert(qid.clone(), doc, grade).map_err(py_err)?;
        }
    }
    Ok(out)
}

/// Lowercased alphanumeric tokens as counted by the rewrite statistics.
#[pyfunction]
fn tokens(text: &str) -> Vec<String> {
    analysis::tokens(text)
}

/// Index terms produced by the BM25 analyzer.
#[pyfunction]
#[pyo3(signature = (text, stem = true))]
fn analyze(text: &str, stem: bool) -> Vec<String> {
    analyzer(stem).analyze(text)
}

#[pyfunction]
fn porter_stem(word: &str) -> String {
    sparse::porter_stem(word)
}

#[pyfunction]
fn overlap_pct(rewrite: &str, human: &str) -> Option<f64> {
    analysis::overlap_pct(rewrite, human)
}

#[pyfunction]
fn rouge1(candidate: &str, reference: &str) -> f64 {
    analysis::rouge1(candidate, reference)
}

/// Cleans a raw completion into a single-line rewrite.
#[pyfunction]
fn sanitize_output(raw: &str) -> PyResult<String> {
    rewriter::sanitize_output(raw).map_err(py_err)
}

#[pyfunction]
fn encode_input(context: Vec<(String, String)>, question: &str) -> String {
    distill::encode_input(&pairs(context), question)
}

#[pyfunction]
fn parse_input(input: &str) -> PyResult<(Vec<(String, String)>, String)> {
    let (context, question) = distill::parse_input(input).map_err(py_err)?;
    Ok((context.into_iter().map(|p| (p.question, p.answer)).collect(), question))
}

/// Rewriter prompt for a question and its `(question, answer)` history.
#[pyfunction]
#[pyo3(signature = (context, question, few_shot = true, drop = None))]
fn render_rewriter_prompt(
    context: Vec<(String, String)>,
    question: String,
    few_shot: bool,
    drop: Option<&str>,
) -> PyResult<String> {
    let mut instruction = Instruction::rewriter();
    if let Some(p) = properties_without(drop)? {
        instruction = prompting::ablate_instruction(&instruction, p);
    }
    let demos = if few_shot { prompting::default_demonstrations() } else { Vec::new() };
    Ok(prompting::render_rewriter_prompt(&instruction, &demos, &task(context, question)))
}

#[pyfunction]
#[pyo3(signature = (context, question, initial, drop = None))]
fn render_editor_prompt(
    context: Vec<(String, String)>,
    question: String,
    initial: &str,
    drop: Option<&str>,
) -> PyResult<String> {
    let mut instruction = Instruction::editor();
    if let Some(p) = properties_without(drop)? {
        instruction = prompting::ablate_instruction(&instruction, p);
    }
    prompting::render_editor_prompt(
        &instruction,
        &prompting::default_demonstrations(),
        &task(context, question),
        initial,
    )
    .map_err(py_err)
}

/// Aggregate metrics per subset. `run` maps query ids to `(passage_id, score)`
/// lists in rank order; `qrels` maps query ids to `{passage_id: grade}`;
/// `subsets` optionally maps query ids to `QuAC`, `NQ` or `TREC`.
#[pyfunction]
#[pyo3(signature = (run, qrels, subsets = None, missing_as_zero = true))]
fn evaluate(
    run: HashMap<String, Vec<(String, f64)>>,
    qrels: HashMap<String, HashMap<String, i32>>,
    subsets: Option<HashMap<String, String>>,
    missing_as_zero: bool,
) -> PyResult<BTreeMap<String, BTreeMap<String, f64>>> {
    let run = build_run("py", run)?;
    let qrels = build_qrels(qrels)?;
    let subsets = subsets
        .map(|m| {
            m.into_iter()
                .map(|(q, s)| s.parse::<Source>().map(|s| (q, s)))
                .collect::<Result<HashMap<_, _>, _>>()
        })
        .transpose()
        .map_err(py_err)?;
    let options = EvalOptions {
        missing_as_zero,
        ..EvalOptions::default()
    };
    Ok(eval::evaluate_run(&run, &qrels, &options, subsets.as_ref()).aggregate)
}

/// Reciprocal-rank win/tie/loss counts and fractions of run A against run B.
#[pyfunction]
fn pairwise_win_tie(
    run_a: HashMap<String, Vec<(String, f64)>>,
    run_b: HashMap<String, Vec<(String, f64)>>,
    qrels: HashMap<String, HashMap<String, i32>>,
) -> PyResult<HashMap<&'static str, f64>> {
    let wt = eval::pairwise_win_tie(&build_run("a", run_a)?, &build_run("b", run_b)?, &build_qrels(qrels)?)
        .map_err(py_err)?;
    Ok(HashMap::from([
        ("wins", wt.wins as f64),
        ("ties", wt.ties as f64),
        ("losses", wt.losses as f64),
        ("win", wt.win),
        ("tie", wt.tie),
        ("loss", wt.loss),
    ]))
}

/// In-memory BM25 index.
#[pyclass(name = "Bm25Index", module = "inforewrite_py", frozen)]
struct PyBm25Index {
    inner: sparse::Bm25Index,
}

#[pymethods]
impl PyBm25Index {
    /// Builds from `(id, text)` pairs.
    #[new]
    #[pyo3(signature = (passages, k1 = None, b = None, stem = true))]
    fn new(passages: Vec<(String, String)>, k1: Option<f64>, b: Option<f64>, stem: bool) -> PyResult<Self> {
        let defaults = Bm25Params::default();
        let params = Bm25Params {
            k1: k1.unwrap_or(defaults.k1),
            b: b.unwrap_or(defaults.b),
        };
        let passages = passages.into_iter().map(|(id, text)| Passage { id, text });
        let inner = sparse::build_index(passages, &analyzer(stem), params).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: sparse::read_index(path).map_err(py_err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        sparse::write_index(path, &self.inner).map_err(py_err)
    }

    /// Top `k` as `(passage_id, score, rank)`.
    #[pyo3(signature = (query, k = 100))]
    fn search(&self, py: Python<'_>, query: &str, k: usize) -> Vec<(String, f64, usize)> {
        py.detach(|| self.inner.search(query, k))
            .into_iter()
            .map(|d| (d.passage_id, d.score, d.rank))
            .collect()
    }

    fn score(&self, passage_id: &str, query: &str) -> Option<f64> {
        self.inner.score(passage_id, query)
    }

    #[getter]
    fn doc_count(&self) -> usize {
        self.inner.doc_count()
    }

    #[getter]
    fn avg_doc_len(&self) -> f64 {
        self.inner.avg_doc_len()
    }

    fn __len__(&self) -> usize {
        self.inner.doc_count()
    }
}

#[pymodule]
fn inforewrite_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", inforewrite::VERSION)?;
    m.add_class::<PyBm25Index>()?;
    m.add_function(wrap_pyfunction!(tokens, m)?)?;
    m.add_function(wrap_pyfunction!(analyze, m)?)?;
    m.add_function(wrap_pyfunction!(porter_stem, m)?)?;
    m.add_function(wrap_pyfunction!(overlap_pct, m)?)?;
    m.add_function(wrap_pyfunction!(rouge1, m)?)?;
    m.add_function(wrap_pyfunction!(sanitize_output, m)?)?;
    m.add_function(wrap_pyfunction!(encode_input, m)?)?;
    m.add_function(wrap_pyfunction!(parse_input, m)?)?;
    m.add_function(wrap_pyfunction!(render_rewriter_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(render_editor_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(pairwise_win_tie, m)?)?;
    Ok(())
}
