//! Python bindings for filtergen: rule parsing/matching/generation, page
//! graph queries, classifier training and prediction, and the full
//! pipeline run.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use filtergen::abp;
use filtergen::chains;
use filtergen::graph;
use filtergen::oracle;
use filtergen::pipeline;
use filtergen::safety;
use filtergen::{PublicSuffixList, RequestContext, ResourceType, RuleSet};

fn value_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn io_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyIOError::new_err(e.to_string())
}

fn load_psl(path: Option<&str>) -> PyResult<PublicSuffixList> {
    match path {
        Some(p) => PublicSuffixList::from_file(Path::new(p)).map_err(io_err),
        None => Ok(PublicSuffixList::bundled()),
    }
}

fn parse_resource_type(s: &str) -> PyResult<ResourceType> {
    ResourceType::parse(s)
        .ok_or_else(|| value_err(format!("unknown resource type '{s}'")))
}

/// A parsed set of AdBlock-Plus network rules.
#[pyclass(name = "RuleSet")]
struct PyRuleSet {
    inner: RuleSet,
    psl: PublicSuffixList,
}

#[pymethods]
impl PyRuleSet {
    /// Parses rule text; malformed lines are skipped, never fatal.
    #[new]
    #[pyo3(signature = (text, psl_path=None))]
    fn new(text: &str, psl_path: Option<&str>) -> PyResult<Self> {
        Ok(PyRuleSet { inner: RuleSet::parse(text), psl: load_psl(psl_path)? })
    }

    /// Parses and combines several list files.
    #[staticmethod]
    #[pyo3(signature = (paths, psl_path=None))]
    fn from_files(paths: Vec<String>, psl_path: Option<&str>) -> PyResult<Self> {
        let mut sources = Vec::new();
        for path in &paths {
            let text = std::fs::read_to_string(path).map_err(io_err)?;
            sources.push((path.clone(), text));
        }
        let inner =
            RuleSet::parse_sources(sources.iter().map(|(n, t)| (n.as_str(), t.as_str())));
        Ok(PyRuleSet { inner, psl: load_psl(psl_path)? })
    }

    #[getter]
    fn blocking_count(&self) -> usize {
        self.inner.blocking_rules().len()
    }

    #[getter]
    fn exception_count(&self) -> usize {
        self.inner.exception_rules().len()
    }

    #[getter]
    fn cosmetic_count(&self) -> usize {
        self.inner.stats().cosmetic_rules
    }

    #[getter]
    fn comment_count(&self) -> usize {
        self.inner.stats().comments
    }

    /// Lines that failed to parse, as (line_number, text, reason).
    fn skipped_lines(&self) -> Vec<(usize, String, String)> {
        self.inner
            .stats()
            .skipped
            .iter()
            .map(|s| (s.line_number, s.text.clone(), s.reason.clone()))
            .collect()
    }

    /// Matches one request. Returns ("blocked"|"excepted"|"unmatched",
    /// witness_rule_or_None).
    #[pyo3(signature = (url, source_origin, resource_type="image"))]
    fn match_url(
        &self,
        url: &str,
        source_origin: &str,
        resource_type: &str,
    ) -> PyResult<(String, Option<String>)> {
        let rt = parse_resource_type(resource_type)?;
        let req = RequestContext::new(url, source_origin, rt, &self.psl).map_err(value_err)?;
        Ok(match self.inner.match_request(&req) {
            abp::MatchVerdict::Blocked(rule) => {
                ("blocked".to_string(), Some(rule.canonical_text()))
            }
            abp::MatchVerdict::Excepted(rule) => {
                ("excepted".to_string(), Some(rule.canonical_text()))
            }
            abp::MatchVerdict::Unmatched => ("unmatched".to_string(), None),
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Reduces a URL to its generalized blocking rule: `||<eTLD+1><path>`.
#[pyfunction]
#[pyo3(signature = (url, psl_path=None))]
fn generate_rule(url: &str, psl_path: Option<&str>) -> PyResult<String> {
    let psl = load_psl(psl_path)?;
    Ok(abp::generate_rule(url, &psl).map_err(value_err)?.canonical_text())
}

/// The registrable domain (eTLD+1) of a host, or None.
#[pyfunction]
#[pyo3(signature = (host, psl_path=None))]
fn registrable_domain(host: &str, psl_path: Option<&str>) -> PyResult<Option<String>> {
    Ok(load_psl(psl_path)?.registrable_domain(host).map(str::to_string))
}

/// A loaded page-execution graph.
#[pyclass(name = "PageGraph")]
struct PyPageGraph {
    inner: graph::PageGraph,
}

#[pymethods]
impl PyPageGraph {
    /// Loads and validates a graphml file.
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyPageGraph {
            inner: graph::load_graphml_file(Path::new(path)).map_err(value_err)?,
        })
    }

    #[getter]
    fn page_url(&self) -> String {
        self.inner.page_url().to_string()
    }

    #[getter]
    fn node_count(&self) -> usize {
        self.inner.node_count()
    }

    #[getter]
    fn edge_count(&self) -> usize {
        self.inner.edge_count()
    }

    /// All network requests as dicts.
    fn resource_requests<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyList>> {
        let out = PyList::empty(py);
        for record in self.inner.resource_requests() {
            let d = PyDict::new(py);
            d.set_item("requester", record.requester.to_string())?;
            d.set_item("url", record.resource_url.to_string())?;
            d.set_item("resource_type", record.resource_type.to_string())?;
            d.set_item("start_time_ms", record.start_time)?;
            d.set_item("completed", record.completed)?;
            out.append(d)?;
        }
        Ok(out)
    }

    /// Request chains for every image/iframe request: dicts of
    /// terminal_url, script_urls (nearest first), diagnostics.
    fn chains<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyList>> {
        let targets: Vec<_> = self
            .inner
            .resource_requests()
            .into_iter()
            .filter(|r| {
                matches!(r.resource_type, ResourceType::Image | ResourceType::Subdocument)
            })
            .collect();
        let out = PyList::empty(py);
        for result in chains::build_all_chains(&self.inner, &targets) {
            let chain = result.map_err(value_err)?;
            let d = PyDict::new(py);
            d.set_item("terminal_url", chain.terminal.resource_url.to_string())?;
            d.set_item(
                "script_urls",
                chain
                    .links
                    .iter()
                    .map(|l| l.script_url.as_ref().map(|u| u.to_string()))
                    .collect::<Vec<_>>(),
            )?;
            d.set_item("diagnostics", chain.diagnostics.clone())?;
            out.append(d)?;
        }
        Ok(out)
    }

    /// Safety verdicts for every script node.
    #[pyo3(signature = (subtree_limit=2))]
    fn script_safety<'py>(
        &self,
        py: Python<'py>,
        subtree_limit: usize,
    ) -> PyResult<Bound<'py, PyList>> {
        let mut analyzer = safety::SafetyAnalyzer::new(
            &self.inner,
            safety::SafetyConfig { subtree_limit },
        );
        let out = PyList::empty(py);
        let scripts: Vec<_> =
            self.inner.script_nodes().map(|n| (n.id.clone(), n.url.clone())).collect();
        for (id, url) in scripts {
            let verdict = analyzer.classify(&id).map_err(value_err)?;
            let d = PyDict::new(py);
            d.set_item("script_node", id.to_string())?;
            d.set_item("script_url", url.map(|u| u.to_string()))?;
            d.set_item("safe", verdict.verdict == safety::SafetyVerdict::Safe)?;
            d.set_item("subtree_count", verdict.subtree_count)?;
            out.append(d)?;
        }
        Ok(out)
    }
}

/// A trained contextual classifier.
#[pyclass(name = "ForestModel")]
struct PyForestModel {
    inner: oracle::ForestModel,
}

#[pymethods]
impl PyForestModel {
    /// Trains from a JSON-lines file of labeled examples.
    #[staticmethod]
    #[pyo3(signature = (data_path, n_trees=100, seed=0, max_depth=0, recall_floor=0.5))]
    fn train(
        data_path: &str,
        n_trees: usize,
        seed: u64,
        max_depth: usize,
        recall_floor: f64,
    ) -> PyResult<Self> {
        let text = std::fs::read_to_string(data_path).map_err(io_err)?;
        let examples = oracle::read_examples_jsonl(&text).map_err(value_err)?;
        let config = oracle::TrainConfig {
            n_trees,
            seed,
            max_depth: if max_depth == 0 { None } else { Some(max_depth) },
            recall_floor,
            ..oracle::TrainConfig::default()
        };
        let report = oracle::train_forest(&examples, config).map_err(value_err)?;
        Ok(PyForestModel { inner: report.model })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyForestModel {
            inner: oracle::ForestModel::load(Path::new(path)).map_err(value_err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(Path::new(path)).map_err(io_err)
    }

    #[getter]
    fn n_trees(&self) -> usize {
        self.inner.n_trees
    }

    #[getter]
    fn decision_threshold(&self) -> f64 {
        self.inner.decision_threshold
    }

    /// Mean cross-validation precision/recall recorded at training time.
    fn cv_metrics<'py>(&self, py: Python<'py>) -> PyResult<Option<Bound<'py, PyDict>>> {
        match &self.inner.cv {
            None => Ok(None),
            Some(cv) => {
                let d = PyDict::new(py);
                d.set_item("mean_precision", cv.mean_precision)?;
                d.set_item("mean_recall", cv.mean_recall)?;
                d.set_item("folds", cv.folds.len())?;
                Ok(Some(d))
            }
        }
    }

    /// Scores one feature vector given as a JSON object (the same shape
    /// `training_examples.jsonl` uses under "features").
    fn predict_json(&self, features_json: &str) -> PyResult<(f64, bool)> {
        let fv: oracle::FeatureVector =
            serde_json::from_str(features_json).map_err(value_err)?;
        let prediction = self.inner.predict(&fv).map_err(value_err)?;
        Ok((prediction.probability, prediction.verdict == oracle::Label::Ad))
    }
}

/// Generates a synthetic crawl directory; returns (pages, planted_ads).
#[pyfunction]
fn synth_corpus(config_json: &str, out_dir: &str) -> PyResult<(usize, usize)> {
    let config: pipeline::synth::SynthConfig =
        serde_json::from_str(config_json).map_err(value_err)?;
    let truth =
        pipeline::synth::synth_corpus(&config, Path::new(out_dir)).map_err(value_err)?;
    Ok((truth.pages.len(), truth.total_ads))
}

/// Runs the whole pipeline and writes the rules file and JSON report.
/// Returns a summary dict.
#[pyfunction]
#[pyo3(signature = (crawl_dir, out, report, lists=vec![], model_path=None, psl_path=None,
                    threshold=None, subtree_limit=2, jobs=None, seed=0))]
#[allow(clippy::too_many_arguments)]
fn run_pipeline<'py>(
    py: Python<'py>,
    crawl_dir: &str,
    out: &str,
    report: &str,
    lists: Vec<String>,
    model_path: Option<&str>,
    psl_path: Option<&str>,
    threshold: Option<f64>,
    subtree_limit: usize,
    jobs: Option<usize>,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let psl = load_psl(psl_path)?;
    let sizes = oracle::AdSizeTable::default();
    let mut sources = Vec::new();
    for path in &lists {
        let text = std::fs::read_to_string(path).map_err(io_err)?;
        sources.push((path.clone(), text));
    }
    let rule_set =
        RuleSet::parse_sources(sources.iter().map(|(n, t)| (n.as_str(), t.as_str())));
    let model = match model_path {
        Some(p) => Some(oracle::ForestModel::load(Path::new(p)).map_err(value_err)?),
        None => None,
    };
    let manifests = pipeline::ingest_crawl(Path::new(crawl_dir)).map_err(value_err)?;
    let config = pipeline::PipelineConfig {
        subtree_limit,
        decision_threshold: threshold,
        jobs,
        seed,
        crawl_id: PathBuf::from(crawl_dir)
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "crawl".to_string()),
        ..pipeline::PipelineConfig::default()
    };
    let inputs = pipeline::PipelineInputs {
        lists: &rule_set,
        model: model.as_ref(),
        psl: &psl,
        sizes: &sizes,
    };
    // The run can take a while on large crawls; let other Python threads
    // proceed meanwhile.
    let (list, run_report) = py
        .detach(|| pipeline::run_pipeline(&manifests, &inputs, &config))
        .map_err(value_err)?;
    list.write(Path::new(out)).map_err(io_err)?;
    std::fs::write(report, pipeline::emit_report(&run_report, pipeline::ReportFormat::Json))
        .map_err(io_err)?;

    let summary = PyDict::new(py);
    summary.set_item("rules_emitted", list.rules.len())?;
    summary.set_item("ads_by_lists", run_report.totals.ads_by_lists)?;
    summary.set_item("ads_by_classifier_only", run_report.totals.ads_by_classifier_only)?;
    summary.set_item("chain_new_urls", run_report.totals.chain_new_urls)?;
    summary.set_item("delta_percent", run_report.totals_delta_percent)?;
    summary.set_item(
        "skipped_pages",
        run_report
            .pages
            .iter()
            .filter(|p| p.status == pipeline::report::PageStatus::Skipped)
            .count(),
    )?;
    summary.set_item(
        "regions",
        run_report
            .regions
            .iter()
            .map(|r| r.region.clone())
            .collect::<Vec<_>>(),
    )?;
    Ok(summary)
}

/// Chains in JSON-lines form for a whole crawl page, convenience wrapper.
#[pyfunction]
fn chains_jsonl(graphml_path: &str) -> PyResult<String> {
    let g = graph::load_graphml_file(Path::new(graphml_path)).map_err(value_err)?;
    let targets: Vec<_> = g
        .resource_requests()
        .into_iter()
        .filter(|r| matches!(r.resource_type, ResourceType::Image | ResourceType::Subdocument))
        .collect();
    let mut out = String::new();
    let mut seen: HashSet<String> = HashSet::new();
    for result in chains::build_all_chains(&g, &targets) {
        let chain = result.map_err(value_err)?;
        let line = chain.to_json_line().to_string();
        if seen.insert(line.clone()) {
            out.push_str(&line);
            out.push('\n');
        }
    }
    Ok(out)
}

#[pymodule]
fn filtergen_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRuleSet>()?;
    m.add_class::<PyPageGraph>()?;
    m.add_class::<PyForestModel>()?;
    m.add_function(wrap_pyfunction!(generate_rule, m)?)?;
    m.add_function(wrap_pyfunction!(registrable_domain, m)?)?;
    m.add_function(wrap_pyfunction!(synth_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(chains_jsonl, m)?)?;
    Ok(())
}
