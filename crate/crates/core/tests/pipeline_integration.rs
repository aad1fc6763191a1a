//! Integration tests for crawl ingest and full pipeline runs.

mod common;

use std::collections::HashSet;
use std::path::Path;

use common::*;
use filtergen::graph::load_graphml_file;
use filtergen::oracle::AdSizeTable;
use filtergen::pipeline::report::{emit_report, PageStatus, ReportFormat};
use filtergen::pipeline::synth::{synth_corpus, SynthConfig};
use filtergen::pipeline::{
    ingest_crawl, run_pipeline, IngestError, PipelineConfig, PipelineInputs,
};
use filtergen::{MatchVerdict, PublicSuffixList, RequestContext, ResourceType, RuleSet};

fn fixed_config() -> PipelineConfig {
    PipelineConfig {
        generated_at: Some("2020-01-01T00:00:00Z".to_string()),
        crawl_id: "test".to_string(),
        ..PipelineConfig::default()
    }
}

fn write_corpus(dir: &Path, pages: usize, seed: u64) {
    let config = SynthConfig {
        pages,
        ads_per_page: 2.0,
        seed,
        regions: vec!["r1".into(), "r2".into()],
        ..SynthConfig::default()
    };
    synth_corpus(&config, dir).unwrap();
}

#[test]
fn ingest_accepts_valid_pages() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), 3, 5);
    let manifests = ingest_crawl(dir.path()).unwrap();
    assert_eq!(manifests.iter().map(|m| m.pages.len()).sum::<usize>(), 3);
    assert!(manifests.iter().all(|m| m.skipped.is_empty()));
}

#[test]
fn ingest_skips_corrupt_pages_with_reasons() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), 3, 5);
    // Corrupt one page's graphml.
    let victim = dir.path().join("r1").join("page-0000").join("page.graphml");
    std::fs::write(&victim, "<graphml><nonsense").unwrap();
    let manifests = ingest_crawl(dir.path()).unwrap();
    assert_eq!(manifests.iter().map(|m| m.pages.len()).sum::<usize>(), 2);
    let skips: Vec<_> = manifests.iter().flat_map(|m| m.skipped.iter()).collect();
    assert_eq!(skips.len(), 1);
    assert!(skips[0].reason.contains("graphml"));
}

#[test]
fn ingest_of_empty_or_missing_dir_is_fatal() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        ingest_crawl(dir.path()),
        Err(IngestError::NoValidPages { attempted: 0 })
    ));
    assert!(matches!(
        ingest_crawl(&dir.path().join("nope")),
        Err(IngestError::NotADirectory(_))
    ));
}

#[test]
fn pipeline_is_deterministic_for_fixed_inputs() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), 4, 99);
    let psl = PublicSuffixList::bundled();
    let sizes = AdSizeTable::default();
    let lists = RuleSet::parse("||adimages0.net^\n@@||widgets.benignassets0.com^");
    let manifests = ingest_crawl(dir.path()).unwrap();
    let inputs = PipelineInputs {
        lists: &lists,
        model: Some(trained_model()),
        psl: &psl,
        sizes: &sizes,
    };
    let (list_a, report_a) = run_pipeline(&manifests, &inputs, &fixed_config()).unwrap();
    let (list_b, report_b) = run_pipeline(&manifests, &inputs, &fixed_config()).unwrap();
    assert_eq!(list_a.to_text(), list_b.to_text());
    assert_eq!(
        serde_json::to_string(&report_a).unwrap(),
        serde_json::to_string(&report_b).unwrap()
    );
}

#[test]
fn fully_covered_crawl_emits_no_rules() {
    let dir = tempfile::tempdir().unwrap();
    write_ad_chain_crawl(dir.path());
    let psl = PublicSuffixList::bundled();
    let sizes = AdSizeTable::default();
    // Existing lists already block the ad image and both scripts.
    let lists = RuleSet::parse("||adimages.net^\n||adnetwork.com^");
    let manifests = ingest_crawl(dir.path()).unwrap();
    let inputs = PipelineInputs { lists: &lists, model: None, psl: &psl, sizes: &sizes };
    let (list, report) = run_pipeline(&manifests, &inputs, &fixed_config()).unwrap();
    assert!(list.rules.is_empty());
    assert_eq!(report.totals.chain_new_urls, 0);
    assert_eq!(report.totals.ads_by_lists, 1);
    assert_eq!(report.totals_delta_percent, Some(0.0));
}

#[test]
fn exception_protected_urls_are_never_targeted() {
    let dir = tempfile::tempdir().unwrap();
    write_ad_chain_crawl(dir.path());
    let psl = PublicSuffixList::bundled();
    let sizes = AdSizeTable::default();
    // The site has negotiated an exception for its ad frame content.
    let lists = RuleSet::parse("@@||serving.adimages.net/creative/");
    let manifests = ingest_crawl(dir.path()).unwrap();
    let inputs = PipelineInputs {
        lists: &lists,
        model: Some(trained_model()),
        psl: &psl,
        sizes: &sizes,
    };
    let (list, report) = run_pipeline(&manifests, &inputs, &fixed_config()).unwrap();

    // The tag script is still blockable, the protected image is not.
    let texts: Vec<String> = list.rules.iter().map(|r| r.canonical_text()).collect();
    assert_eq!(texts, vec!["||adnetwork.com/tag.js".to_string()]);
    let protected = RequestContext::new(
        AD_IMAGE_URL,
        "example.al",
        ResourceType::Image,
        &psl,
    )
    .unwrap();
    for rule in &list.rules {
        assert!(!rule.matches(&protected));
    }
    let diagnostics: String = report
        .pages
        .iter()
        .flat_map(|p| p.diagnostics.iter().cloned())
        .collect::<Vec<_>>()
        .join("\n");
    assert!(diagnostics.contains("protected by exception"), "{diagnostics}");
}

#[test]
fn cross_page_exception_drops_already_generated_rules() {
    // Page A (news site) generates a rule for the ad image; page B is an
    // origin where that same URL is exception-protected. The emitted list
    // must not contain a rule matching the protected observation.
    let dir = tempfile::tempdir().unwrap();
    write_ad_chain_crawl(dir.path());
    let page_b = dir.path().join("fixture").join("page-0001");
    std::fs::create_dir_all(&page_b).unwrap();
    std::fs::copy(
        dir.path().join("fixture").join("page-0000").join("page.graphml"),
        page_b.join("page.graphml"),
    )
    .unwrap();
    std::fs::write(
        page_b.join("metadata.json"),
        serde_json::json!({
            "final_url": "https://partner.example.org/",
            "region": "fixture",
        })
        .to_string(),
    )
    .unwrap();

    let psl = PublicSuffixList::bundled();
    let sizes = AdSizeTable::default();
    let lists =
        RuleSet::parse("@@||serving.adimages.net/creative/banner1.png$domain=example.org");
    let manifests = ingest_crawl(dir.path()).unwrap();
    assert_eq!(manifests[0].pages.len(), 2);
    let inputs = PipelineInputs {
        lists: &lists,
        model: Some(trained_model()),
        psl: &psl,
        sizes: &sizes,
    };
    let (list, report) = run_pipeline(&manifests, &inputs, &fixed_config()).unwrap();

    let texts: Vec<String> = list.rules.iter().map(|r| r.canonical_text()).collect();
    assert_eq!(texts, vec!["||adnetwork.com/tag.js".to_string()]);
    assert!(
        report.diagnostics.iter().any(|d| d.contains("dropped rule")),
        "run diagnostics: {:?}",
        report.diagnostics
    );
}

#[test]
fn every_emitted_rule_matches_an_observed_url() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), 6, 321);
    let psl = PublicSuffixList::bundled();
    let sizes = AdSizeTable::default();
    let lists = RuleSet::empty();
    let manifests = ingest_crawl(dir.path()).unwrap();
    let inputs = PipelineInputs {
        lists: &lists,
        model: Some(trained_model()),
        psl: &psl,
        sizes: &sizes,
    };
    let (list, _) = run_pipeline(&manifests, &inputs, &fixed_config()).unwrap();
    assert!(!list.rules.is_empty());

    // Collect every observed request with its page context.
    let mut observations = Vec::new();
    for manifest in &manifests {
        for page in &manifest.pages {
            let graph = load_graphml_file(&page.graphml_path).unwrap();
            let host = page.final_url.host_str().unwrap();
            let origin = psl.registrable_domain(host).unwrap_or(host).to_string();
            for record in graph.resource_requests() {
                observations.push(
                    RequestContext::new(
                        record.resource_url.as_str(),
                        &origin,
                        record.resource_type,
                        &psl,
                    )
                    .unwrap(),
                );
            }
        }
    }
    for rule in &list.rules {
        assert!(
            observations.iter().any(|req| rule.matches(req)),
            "orphan rule: {}",
            rule.canonical_text()
        );
    }
}

#[test]
fn emitted_list_reparses_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), 4, 77);
    let psl = PublicSuffixList::bundled();
    let sizes = AdSizeTable::default();
    let lists = RuleSet::empty();
    let manifests = ingest_crawl(dir.path()).unwrap();
    let inputs = PipelineInputs {
        lists: &lists,
        model: Some(trained_model()),
        psl: &psl,
        sizes: &sizes,
    };
    let (list, _) = run_pipeline(&manifests, &inputs, &fixed_config()).unwrap();
    let reparsed = RuleSet::parse(&list.to_text());
    assert_eq!(reparsed.len(), list.rules.len());
    assert!(reparsed.stats().skipped.is_empty());
    assert_eq!(reparsed.stats().comments, list.header.len());
    // Rule generation never emits exception rules.
    assert!(reparsed.exception_rules().is_empty());
}

#[test]
fn classifier_and_list_columns_are_disjoint() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), 6, 2024);
    let psl = PublicSuffixList::bundled();
    let sizes = AdSizeTable::default();
    // Lists catch one ad-image domain; the classifier finds the rest.
    let lists = RuleSet::parse("||adimages0.net^");
    let manifests = ingest_crawl(dir.path()).unwrap();
    let inputs = PipelineInputs {
        lists: &lists,
        model: Some(trained_model()),
        psl: &psl,
        sizes: &sizes,
    };
    let (_, report) = run_pipeline(&manifests, &inputs, &fixed_config()).unwrap();
    assert!(report.totals.ads_by_lists > 0, "list hits expected");
    assert!(report.totals.ads_by_classifier_only > 0, "classifier additions expected");

    // Chain-new URLs never include list-matched URLs.
    for page in &report.pages {
        assert_eq!(page.status, PageStatus::Ok);
    }
    let json = emit_report(&report, ReportFormat::Json);
    let parsed: filtergen::pipeline::RunReport = serde_json::from_str(&json).unwrap();
    assert_eq!(parsed.schema_version, 1);
    assert_eq!(parsed.totals, report.totals);
}

#[test]
fn jobs_option_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), 6, 555);
    let psl = PublicSuffixList::bundled();
    let sizes = AdSizeTable::default();
    let lists = RuleSet::empty();
    let manifests = ingest_crawl(dir.path()).unwrap();
    let inputs = PipelineInputs {
        lists: &lists,
        model: Some(trained_model()),
        psl: &psl,
        sizes: &sizes,
    };
    let serial =
        run_pipeline(&manifests, &inputs, &PipelineConfig { jobs: Some(1), ..fixed_config() })
            .unwrap();
    let parallel =
        run_pipeline(&manifests, &inputs, &PipelineConfig { jobs: Some(4), ..fixed_config() })
            .unwrap();
    assert_eq!(serial.0.to_text(), parallel.0.to_text());
    assert_eq!(serial.1.totals, parallel.1.totals);
}

#[test]
fn excepted_resources_do_not_count_as_list_ads() {
    let dir = tempfile::tempdir().unwrap();
    write_ad_chain_crawl(dir.path());
    let psl = PublicSuffixList::bundled();
    let sizes = AdSizeTable::default();
    let lists = RuleSet::parse("||adimages.net^\n@@||serving.adimages.net/creative/");
    let manifests = ingest_crawl(dir.path()).unwrap();
    let inputs = PipelineInputs { lists: &lists, model: None, psl: &psl, sizes: &sizes };
    let (_, report) = run_pipeline(&manifests, &inputs, &fixed_config()).unwrap();
    assert_eq!(report.totals.ads_by_lists, 0);

    // The exception also keeps the verdict helper honest.
    let req = RequestContext::new(
        AD_IMAGE_URL,
        "example.al",
        ResourceType::Image,
        &psl,
    )
    .unwrap();
    assert!(matches!(lists.match_request(&req), MatchVerdict::Excepted(_)));
}

#[test]
fn impossible_threshold_disables_classifier_additions() {
    let dir = tempfile::tempdir().unwrap();
    write_ad_chain_crawl(dir.path());
    let psl = PublicSuffixList::bundled();
    let sizes = AdSizeTable::default();
    let lists = RuleSet::empty();
    let manifests = ingest_crawl(dir.path()).unwrap();
    let inputs = PipelineInputs {
        lists: &lists,
        model: Some(trained_model()),
        psl: &psl,
        sizes: &sizes,
    };
    let (list, report) = run_pipeline(
        &manifests,
        &inputs,
        &PipelineConfig { decision_threshold: Some(1.01), ..fixed_config() },
    )
    .unwrap();
    assert!(list.rules.is_empty());
    assert_eq!(report.totals.ads_by_classifier_only, 0);
    assert_eq!(report.config.decision_threshold, Some(1.01));
}

#[test]
fn list_tally_types_control_the_current_lists_column() {
    let dir = tempfile::tempdir().unwrap();
    write_ad_chain_crawl(dir.path());
    let psl = PublicSuffixList::bundled();
    let sizes = AdSizeTable::default();
    // Matches the two chain scripts but no image or frame.
    let lists = RuleSet::parse("||adnetwork.com^");
    let manifests = ingest_crawl(dir.path()).unwrap();
    let inputs = PipelineInputs { lists: &lists, model: None, psl: &psl, sizes: &sizes };

    let (_, default_report) = run_pipeline(&manifests, &inputs, &fixed_config()).unwrap();
    assert_eq!(default_report.totals.ads_by_lists, 0);

    let (_, script_report) = run_pipeline(
        &manifests,
        &inputs,
        &PipelineConfig {
            list_tally_types: vec![ResourceType::Script],
            ..fixed_config()
        },
    )
    .unwrap();
    assert_eq!(script_report.totals.ads_by_lists, 2);
}

#[test]
fn safety_verdicts_are_exported_for_audit() {
    let dir = tempfile::tempdir().unwrap();
    write_ad_chain_crawl(dir.path());
    let psl = PublicSuffixList::bundled();
    let sizes = AdSizeTable::default();
    let lists = RuleSet::empty();
    let manifests = ingest_crawl(dir.path()).unwrap();
    let inputs = PipelineInputs {
        lists: &lists,
        model: Some(trained_model()),
        psl: &psl,
        sizes: &sizes,
    };
    let (_, report) = run_pipeline(&manifests, &inputs, &fixed_config()).unwrap();
    let page = &report.pages[0];
    let urls: HashSet<Option<&str>> =
        page.safety.iter().map(|s| s.script_url.as_deref()).collect();
    assert!(urls.contains(&Some(TAG_SCRIPT_URL)));
    let tag = page
        .safety
        .iter()
        .find(|s| s.script_url.as_deref() == Some(TAG_SCRIPT_URL))
        .unwrap();
    assert_eq!(tag.subtree_count, 1);
    assert_eq!(page.chains.len(), 1);
    assert!(
        report
            .heuristic_deviations
            .iter()
            .any(|d| d.contains("transitively")),
        "the stricter propagation is declared in the report"
    );
}
