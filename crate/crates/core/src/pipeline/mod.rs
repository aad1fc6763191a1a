//! End-to-end orchestration: crawl-directory ingest, the pipeline run,
//! report emission, and the synthetic corpus generator.
//!
//! Crawl layout: `<region>/<page-id>/{page.graphml, metadata.json,
//! perceptual.json?}`. Pages are independent work units; per-page failures
//! skip the page and the run completes with partial coverage.

pub mod report;
pub mod synth;

pub use report::{emit_report, ReportFormat, RunReport};

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use url::Url;

use crate::abp::{
    dedupe_rules, generate_rule, MatchVerdict, NetworkRule, RequestContext, ResourceType,
    RuleSet,
};
use crate::chains::build_all_chains;
use crate::graph::{load_graphml_file, PageGraph};
use crate::oracle::{
    classify_new_ads, label_by_lists, AdSizeTable, FeatureContext, ForestModel,
};
use crate::psl::PublicSuffixList;
use crate::safety::{highest_blockable, SafetyAnalyzer, SafetyConfig};
use report::{
    ConfigEcho, PageReport, PageStatus, RegionCounts, RegionReport, ScriptSafetyReport,
    REPORT_SCHEMA_VERSION,
};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("crawl directory does not exist or is not a directory: {0}")]
    NotADirectory(PathBuf),
    #[error("io error under {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("no page validated out of {attempted} candidate page directories")]
    NoValidPages { attempted: usize },
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("failed to build worker pool: {0}")]
    ThreadPool(String),
    #[error("crawl contains no pages")]
    NoPages,
}

/// `metadata.json` sidecar, one per page.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PageMetadata {
    pub final_url: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub navigation_started: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<String>,
}

#[derive(Debug, Clone)]
pub struct PageEntry {
    pub page_id: String,
    pub page_dir: PathBuf,
    pub graphml_path: PathBuf,
    pub perceptual_path: Option<PathBuf>,
    pub metadata: PageMetadata,
    pub final_url: Url,
}

#[derive(Debug, Clone, Serialize)]
pub struct PageSkip {
    pub page: String,
    pub reason: String,
}

/// One region's validated pages plus skip diagnostics.
#[derive(Debug, Clone)]
pub struct CrawlManifest {
    pub region: String,
    pub pages: Vec<PageEntry>,
    pub skipped: Vec<PageSkip>,
}

/// Validates a crawl directory: every page's graphml must load (schema and
/// invariants included) and its metadata must parse. Unreadable pages are
/// skipped with reasons; the ingest is fatal only when nothing validates.
pub fn ingest_crawl(dir: &Path) -> Result<Vec<CrawlManifest>, IngestError> {
    if !dir.is_dir() {
        return Err(IngestError::NotADirectory(dir.to_path_buf()));
    }
    let mut regions: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|source| IngestError::Io { path: dir.to_path_buf(), source })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    regions.sort();

    let mut manifests = Vec::new();
    let mut attempted = 0usize;
    for region_dir in regions {
        let region = region_dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let mut pages: Vec<PathBuf> = std::fs::read_dir(&region_dir)
            .map_err(|source| IngestError::Io { path: region_dir.clone(), source })?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        pages.sort();
        let mut manifest = CrawlManifest { region, pages: Vec::new(), skipped: Vec::new() };
        for page_dir in pages {
            attempted += 1;
            let page_id = page_dir
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            match validate_page(&page_dir) {
                Ok(mut entry) => {
                    entry.page_id = page_id;
                    manifest.pages.push(entry);
                }
                Err(reason) => manifest.skipped.push(PageSkip { page: page_id, reason }),
            }
        }
        manifests.push(manifest);
    }
    if manifests.iter().map(|m| m.pages.len()).sum::<usize>() == 0 {
        return Err(IngestError::NoValidPages { attempted });
    }
    Ok(manifests)
}

fn validate_page(page_dir: &Path) -> Result<PageEntry, String> {
    let graphml_path = page_dir.join("page.graphml");
    let metadata_path = page_dir.join("metadata.json");
    if !graphml_path.is_file() {
        return Err("missing page.graphml".to_string());
    }
    let metadata: PageMetadata = std::fs::read_to_string(&metadata_path)
        .map_err(|e| format!("missing metadata.json: {e}"))
        .and_then(|text| {
            serde_json::from_str(&text).map_err(|e| format!("invalid metadata.json: {e}"))
        })?;
    let final_url = Url::parse(&metadata.final_url)
        .map_err(|e| format!("invalid final_url in metadata.json: {e}"))?;
    load_graphml_file(&graphml_path).map_err(|e| format!("invalid page.graphml: {e}"))?;
    let perceptual_path = page_dir.join("perceptual.json");
    let perceptual_path = if perceptual_path.is_file() {
        let text = std::fs::read_to_string(&perceptual_path)
            .map_err(|e| format!("unreadable perceptual.json: {e}"))?;
        serde_json::from_str::<BTreeMap<String, f64>>(&text)
            .map_err(|e| format!("invalid perceptual.json: {e}"))?;
        Some(perceptual_path)
    } else {
        None
    };
    Ok(PageEntry {
        page_id: String::new(),
        page_dir: page_dir.to_path_buf(),
        graphml_path,
        perceptual_path,
        metadata,
        final_url,
    })
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    /// Scripts touching more document regions than this are unsafe.
    pub subtree_limit: usize,
    /// Overrides the model's decision threshold when set.
    pub decision_threshold: Option<f64>,
    pub jobs: Option<usize>,
    pub seed: u64,
    /// Resource types counted in the report's "current lists" tally.
    pub list_tally_types: Vec<ResourceType>,
    pub crawl_id: String,
    /// Fixed timestamp for reproducible output; defaults to now (UTC).
    pub generated_at: Option<String>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            subtree_limit: 2,
            decision_threshold: None,
            jobs: None,
            seed: 0,
            list_tally_types: vec![ResourceType::Image, ResourceType::Subdocument],
            crawl_id: "crawl".to_string(),
            generated_at: None,
        }
    }
}

/// Shared immutable inputs for a run.
pub struct PipelineInputs<'a> {
    pub lists: &'a RuleSet,
    pub model: Option<&'a ForestModel>,
    pub psl: &'a PublicSuffixList,
    pub sizes: &'a AdSizeTable,
}

/// The emitted complementary list: header comments plus deduplicated rules.
#[derive(Debug, Clone)]
pub struct GeneratedList {
    pub header: Vec<String>,
    pub rules: Vec<NetworkRule>,
}

impl GeneratedList {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for line in &self.header {
            out.push_str("! ");
            out.push_str(line);
            out.push('\n');
        }
        for rule in &self.rules {
            out.push_str(&rule.canonical_text());
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_text())
    }
}

/// Per-page partial result, merged in manifest order after the parallel
/// phase so output is deterministic regardless of scheduling.
struct PageOutcome {
    region: String,
    page: String,
    final_url: String,
    page_origin: String,
    list_urls: BTreeSet<String>,
    classifier_urls: BTreeSet<String>,
    new_urls: BTreeSet<String>,
    rules: Vec<NetworkRule>,
    excepted: Vec<(String, ResourceType)>,
    chains_built: usize,
    chain_lines: Vec<serde_json::Value>,
    safety: Vec<ScriptSafetyReport>,
    diagnostics: Vec<String>,
}

/// Runs the full pipeline over validated manifests: label ads by lists and
/// classifier, build chains for the union, select the highest safe
/// blocking point, generate rules for URLs the existing lists miss, dedupe
/// and assemble the list plus the report.
pub fn run_pipeline(
    manifests: &[CrawlManifest],
    inputs: &PipelineInputs<'_>,
    config: &PipelineConfig,
) -> Result<(GeneratedList, RunReport), PipelineError> {
    use rayon::prelude::*;

    if manifests.iter().map(|m| m.pages.len()).sum::<usize>() == 0 {
        return Err(PipelineError::NoPages);
    }

    // Threshold override is applied once, up front.
    let model_override: Option<ForestModel> = match (inputs.model, config.decision_threshold) {
        (Some(m), Some(t)) => {
            let mut m = m.clone();
            m.decision_threshold = t;
            Some(m)
        }
        (Some(m), None) => Some(m.clone()),
        (None, _) => None,
    };
    let model = model_override.as_ref();

    let work: Vec<(&str, &PageEntry)> = manifests
        .iter()
        .flat_map(|m| m.pages.iter().map(move |p| (m.region.as_str(), p)))
        .collect();

    type PageFailure = (String, String, String);
    let process = |&(region, entry): &(&str, &PageEntry)| -> Result<PageOutcome, PageFailure> {
        process_page(region, entry, inputs, model, config)
            .map_err(|reason| (region.to_string(), entry.page_id.clone(), reason))
    };
    let outcomes: Vec<Result<PageOutcome, PageFailure>> = match config.jobs {
        Some(jobs) => rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build()
            .map_err(|e| PipelineError::ThreadPool(e.to_string()))?
            .install(|| work.par_iter().map(process).collect()),
        None => work.par_iter().map(process).collect(),
    };

    // Single-writer merge, in manifest order.
    let mut region_order: Vec<String> = Vec::new();
    let mut lists_urls: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let mut classifier_urls: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let mut new_urls: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let mut region_rules: BTreeMap<String, Vec<NetworkRule>> = BTreeMap::new();
    let mut excepted: Vec<(String, String, ResourceType)> = Vec::new();
    let mut pages: Vec<PageReport> = Vec::new();
    let mut run_diagnostics: Vec<String> = Vec::new();

    for manifest in manifests {
        region_order.push(manifest.region.clone());
        lists_urls.entry(manifest.region.clone()).or_default();
        classifier_urls.entry(manifest.region.clone()).or_default();
        new_urls.entry(manifest.region.clone()).or_default();
        region_rules.entry(manifest.region.clone()).or_default();
        for skip in &manifest.skipped {
            pages.push(skipped_page_report(&manifest.region, &skip.page, &skip.reason));
        }
    }

    for outcome in outcomes {
        match outcome {
            Ok(page) => {
                lists_urls.get_mut(&page.region).expect("region").extend(page.list_urls.clone());
                classifier_urls
                    .get_mut(&page.region)
                    .expect("region")
                    .extend(page.classifier_urls.clone());
                new_urls.get_mut(&page.region).expect("region").extend(page.new_urls.clone());
                region_rules
                    .get_mut(&page.region)
                    .expect("region")
                    .extend(page.rules.iter().cloned());
                excepted.extend(
                    page.excepted.iter().map(|(u, t)| (u.clone(), page.page_origin.clone(), *t)),
                );
                pages.push(PageReport {
                    region: page.region,
                    page: page.page,
                    final_url: page.final_url,
                    status: PageStatus::Ok,
                    skip_reason: None,
                    ads_by_lists: page.list_urls.len(),
                    ads_by_classifier_only: page.classifier_urls.len(),
                    chains_built: page.chains_built,
                    rules_generated: page.rules.len(),
                    chains: page.chain_lines,
                    safety: page.safety,
                    diagnostics: page.diagnostics,
                });
            }
            Err((region, page, reason)) => {
                pages.push(skipped_page_report(&region, &page, &reason));
            }
        }
    }

    // No emitted rule may match a URL the existing lists' exceptions
    // protect; check every candidate against the observed excepted URLs.
    let mut dropped: HashSet<String> = HashSet::new();
    if !excepted.is_empty() {
        let contexts: Vec<RequestContext> = excepted
            .iter()
            .filter_map(|(url, origin, rt)| RequestContext::new(url, origin, *rt, inputs.psl).ok())
            .collect();
        let all_rules: Vec<NetworkRule> =
            region_rules.values().flat_map(|rules| rules.iter().cloned()).collect();
        for rule in dedupe_rules(all_rules) {
            if let Some(ctx) = contexts.iter().find(|ctx| rule.matches(ctx)) {
                run_diagnostics.push(format!(
                    "dropped rule '{}': it matches exception-protected url {}",
                    rule.canonical_text(),
                    ctx.url()
                ));
                dropped.insert(rule.canonical_text());
            }
        }
    }

    let mut regions: Vec<RegionReport> = Vec::new();
    let mut totals = RegionCounts::default();
    let mut global_rules: Vec<NetworkRule> = Vec::new();
    for region in &region_order {
        let kept: Vec<NetworkRule> = dedupe_rules(region_rules[region].clone())
            .into_iter()
            .filter(|r| !dropped.contains(&r.canonical_text()))
            .collect();
        let counts = RegionCounts {
            ads_by_lists: lists_urls[region].len(),
            ads_by_classifier_only: classifier_urls[region].len(),
            chain_new_urls: new_urls[region].len(),
            rules_emitted: kept.len(),
        };
        totals.accumulate(&counts);
        global_rules.extend(kept);
        regions.push(RegionReport {
            region: region.clone(),
            counts,
            delta_percent: counts.delta_percent(),
        });
    }
    let final_rules = dedupe_rules(global_rules);

    let generated_at = config
        .generated_at
        .clone()
        .unwrap_or_else(|| chrono::Utc::now().format("%Y-%m-%dT%H:%M:%SZ").to_string());
    let list = GeneratedList {
        header: vec![
            "Title: filtergen complementary rules".to_string(),
            format!("Generator: filtergen {}", env!("CARGO_PKG_VERSION")),
            format!("Date: {generated_at}"),
            format!("Source crawl: {}", config.crawl_id),
        ],
        rules: final_rules,
    };

    let report = RunReport {
        schema_version: REPORT_SCHEMA_VERSION,
        crawl_id: config.crawl_id.clone(),
        generated_at,
        config: ConfigEcho {
            subtree_limit: config.subtree_limit,
            decision_threshold: config.decision_threshold,
            jobs: config.jobs,
            seed: config.seed,
            list_tally_types: config.list_tally_types.iter().map(|t| t.to_string()).collect(),
            lists: inputs.lists.source_names().to_vec(),
            classifier_enabled: model.is_some(),
        },
        heuristic_deviations: vec![
            "unsafe-script insertion (condition #2) is applied transitively".to_string(),
        ],
        totals,
        totals_delta_percent: totals.delta_percent(),
        regions,
        list_rule_count: list.rules.len(),
        pages,
        diagnostics: run_diagnostics,
    };
    Ok((list, report))
}

fn skipped_page_report(region: &str, page: &str, reason: &str) -> PageReport {
    PageReport {
        region: region.to_string(),
        page: page.to_string(),
        final_url: String::new(),
        status: PageStatus::Skipped,
        skip_reason: Some(reason.to_string()),
        ads_by_lists: 0,
        ads_by_classifier_only: 0,
        chains_built: 0,
        rules_generated: 0,
        chains: Vec::new(),
        safety: Vec::new(),
        diagnostics: Vec::new(),
    }
}

fn process_page(
    region: &str,
    entry: &PageEntry,
    inputs: &PipelineInputs<'_>,
    model: Option<&ForestModel>,
    config: &PipelineConfig,
) -> Result<PageOutcome, String> {
    let graph: PageGraph = load_graphml_file(&entry.graphml_path).map_err(|e| e.to_string())?;
    let host = entry
        .final_url
        .host_str()
        .ok_or_else(|| format!("final_url has no host: {}", entry.final_url))?;
    let page_origin =
        inputs.psl.registrable_domain(host).unwrap_or(host).to_ascii_lowercase();
    let ctx = FeatureContext {
        psl: inputs.psl,
        sizes: inputs.sizes,
        page_origin: page_origin.clone(),
    };

    let mut diagnostics = Vec::new();
    let perceptual: BTreeMap<String, f64> = match &entry.perceptual_path {
        Some(path) => match std::fs::read_to_string(path) {
            Ok(text) => serde_json::from_str(&text).unwrap_or_else(|e| {
                diagnostics.push(format!("perceptual.json ignored: {e}"));
                BTreeMap::new()
            }),
            Err(e) => {
                diagnostics.push(format!("perceptual.json unreadable: {e}"));
                BTreeMap::new()
            }
        },
        None => BTreeMap::new(),
    };

    // Verdicts for every observed request: the list tally for images and
    // frames, exception observations for the post-emission check.
    let mut list_urls: BTreeSet<String> = BTreeSet::new();
    let mut excepted: Vec<(String, ResourceType)> = Vec::new();
    for record in graph.resource_requests() {
        let req = match RequestContext::from_url(
            record.resource_url.clone(),
            &page_origin,
            record.resource_type,
            inputs.psl,
        ) {
            Ok(req) => req,
            Err(e) => {
                diagnostics
                    .push(format!("unmatchable request url {}: {e}", record.resource_url));
                continue;
            }
        };
        match inputs.lists.match_request(&req) {
            MatchVerdict::Blocked(_) => {
                if config.list_tally_types.contains(&record.resource_type) {
                    list_urls.insert(record.resource_url.to_string());
                }
            }
            MatchVerdict::Excepted(_) => {
                excepted.push((record.resource_url.to_string(), record.resource_type));
            }
            MatchVerdict::Unmatched => {}
        }
    }

    let listed = label_by_lists(inputs.lists, &graph, inputs.psl);
    let already: HashSet<_> = listed.iter().map(|r| r.edge_id.clone()).collect();
    let (classifier_ads, classifier_diags) = match model {
        Some(model) => classify_new_ads(model, &graph, &already, &perceptual, &ctx),
        None => (Vec::new(), Vec::new()),
    };
    diagnostics.extend(classifier_diags);
    let classifier_urls: BTreeSet<String> =
        classifier_ads.iter().map(|r| r.resource_url.to_string()).collect();

    let mut targets = listed;
    targets.extend(classifier_ads);
    targets
        .sort_by(|a, b| a.start_time.cmp(&b.start_time).then_with(|| a.edge_id.cmp(&b.edge_id)));

    let mut analyzer =
        SafetyAnalyzer::new(&graph, SafetyConfig { subtree_limit: config.subtree_limit });
    let mut new_urls: BTreeSet<String> = BTreeSet::new();
    let mut rules: Vec<NetworkRule> = Vec::new();
    let mut chain_lines: Vec<serde_json::Value> = Vec::new();
    let mut chains_built = 0usize;
    for chain in build_all_chains(&graph, &targets) {
        let chain = match chain {
            Ok(c) => c,
            Err(e) => {
                diagnostics.push(format!("chain construction failed: {e}"));
                continue;
            }
        };
        chains_built += 1;
        chain_lines.push(chain.to_json_line());
        let terminal_type = chain.terminal.resource_type;
        let plan = match highest_blockable(&mut analyzer, &chain) {
            Ok(p) => p,
            Err(e) => {
                diagnostics.push(format!("safety walk failed: {e}"));
                continue;
            }
        };
        let mut candidates: Vec<(Url, ResourceType)> = vec![(plan.terminal_url, terminal_type)];
        if let Some(script_url) = plan.highest_safe_script_url {
            candidates.push((script_url, ResourceType::Script));
        }
        for (url, rt) in candidates {
            match RequestContext::from_url(url.clone(), &page_origin, rt, inputs.psl) {
                Ok(req) => match inputs.lists.match_request(&req) {
                    MatchVerdict::Blocked(_) => continue, // already covered
                    MatchVerdict::Excepted(rule) => {
                        diagnostics.push(format!(
                            "target {url} protected by exception {}",
                            rule.canonical_text()
                        ));
                        continue;
                    }
                    MatchVerdict::Unmatched => {}
                },
                Err(e) => {
                    diagnostics.push(format!("target {url} not matchable: {e}"));
                    continue;
                }
            }
            new_urls.insert(url.to_string());
            match generate_rule(url.as_str(), inputs.psl) {
                Ok(rule) => rules.push(rule),
                Err(e) => diagnostics.push(format!("cannot generate rule for {url}: {e}")),
            }
        }
    }

    let safety = {
        let mut verdicts = analyzer.into_classified();
        verdicts.sort_by(|a, b| a.script_node.cmp(&b.script_node));
        verdicts
            .into_iter()
            .map(|s| ScriptSafetyReport {
                script_url: graph
                    .node(&s.script_node)
                    .and_then(|n| n.url.as_ref())
                    .map(|u| u.to_string()),
                script_node: s.script_node.to_string(),
                verdict: s.verdict,
                reason: s.reason,
                subtree_count: s.subtree_count,
            })
            .collect()
    };

    Ok(PageOutcome {
        region: region.to_string(),
        page: entry.page_id.clone(),
        final_url: entry.final_url.to_string(),
        page_origin,
        list_urls,
        classifier_urls,
        new_urls,
        rules,
        excepted,
        chains_built,
        chain_lines,
        safety,
        diagnostics,
    })
}
