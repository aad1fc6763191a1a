//! Shared fixtures and independent oracles for the integration suites.
//!
//! The oracles here deliberately re-derive results through different code
//! paths than the library: regex-based rule matching, linear scans over
//! the raw edge list, and per-tree traversal.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use filtergen::abp::{parse_network_rule, Anchor, NetworkRule, PatternToken, RuleOptions};
use filtergen::graph::builder::{Actor, GraphBuilder};
use filtergen::graph::{EdgeKind, NodeId, NodeKind, PageGraph};
use filtergen::oracle::{
    train_forest, ForestModel, Label, LabeledExample, TrainConfig, TreeNode,
};
use filtergen::pipeline::synth::{
    synth_corpus, training_examples_from_corpus, SynthConfig,
};
use filtergen::{PublicSuffixList, RequestContext, ResourceType};

pub const LOADER_SCRIPT_URL: &str = "https://cdn.adnetwork.com/loader.js";
pub const TAG_SCRIPT_URL: &str = "https://tags.adnetwork.com/tag.js";
pub const AD_IMAGE_URL: &str = "https://serving.adimages.net/creative/banner1.png?id=4";
pub const FIXTURE_PAGE_URL: &str = "https://news.example.al/";

/// The demonstration scenario: a parser-inserted loader script inserts a
/// tag script, which inserts a single ad slot with an ad image. The loader
/// also touches three separate parser-created regions, so blocking it
/// would risk the page; the tag script is safe.
pub fn ad_chain_graph() -> PageGraph {
    let mut b = GraphBuilder::for_page(FIXTURE_PAGE_URL);
    let html = b.element("html", &Actor::Parser, None);
    let head = b.element("head", &Actor::Parser, Some(&html));
    let body = b.element("body", &Actor::Parser, Some(&html));
    let div_a = b.element("div", &Actor::Parser, Some(&body));
    let div_b = b.element("div", &Actor::Parser, Some(&body));

    let (_s1_el, s1) = b.script_element(&Actor::Parser, Some(&head), Some(LOADER_SCRIPT_URL));
    let (_s2_el, s2) =
        b.script_element(&Actor::Script(s1.clone()), Some(&head), Some(TAG_SCRIPT_URL));
    b.element("span", &Actor::Script(s1.clone()), Some(&div_a));
    b.element("span", &Actor::Script(s1), Some(&div_b));

    let ad_div = b.element("div", &Actor::Script(s2.clone()), Some(&body));
    let img = b.element("img", &Actor::Script(s2.clone()), Some(&ad_div));
    b.set_attribute(&Actor::Script(s2.clone()), &img, "width", "300");
    b.set_attribute(&Actor::Script(s2), &img, "height", "250");
    b.request(&img, AD_IMAGE_URL, ResourceType::Image);
    b.build().expect("ad-chain fixture is valid")
}

/// Writes the ad_chain scenario as a one-page crawl directory.
pub fn write_ad_chain_crawl(dir: &Path) {
    let page_dir = dir.join("fixture").join("page-0000");
    std::fs::create_dir_all(&page_dir).unwrap();
    std::fs::write(page_dir.join("page.graphml"), ad_chain_graph().to_graphml()).unwrap();
    let metadata = serde_json::json!({
        "final_url": FIXTURE_PAGE_URL,
        "navigation_started": "2019-10-01T00:00:00Z",
        "region": "fixture",
    });
    std::fs::write(
        page_dir.join("metadata.json"),
        serde_json::to_string_pretty(&metadata).unwrap(),
    )
    .unwrap();
    let perceptual: BTreeMap<&str, f64> = [(AD_IMAGE_URL, 0.93)].into_iter().collect();
    std::fs::write(
        page_dir.join("perceptual.json"),
        serde_json::to_string_pretty(&perceptual).unwrap(),
    )
    .unwrap();
}

/// A classifier trained once on a synthetic corpus, shared across tests.
pub fn trained_model() -> &'static ForestModel {
    static MODEL: OnceLock<ForestModel> = OnceLock::new();
    MODEL.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let config = SynthConfig {
            pages: 30,
            ads_per_page: 3.0,
            seed: 777,
            ..SynthConfig::default()
        };
        let truth = synth_corpus(&config, dir.path()).unwrap();
        let examples = training_examples_from_corpus(
            dir.path(),
            &truth,
            &PublicSuffixList::bundled(),
            &filtergen::oracle::AdSizeTable::default(),
        )
        .unwrap();
        train_forest(&examples, TrainConfig { n_trees: 50, seed: 9, ..TrainConfig::default() })
            .unwrap()
            .model
    })
}

// ---------------------------------------------------------------------
// Independent rule-matching oracle (regex route).
// ---------------------------------------------------------------------

/// Matches `rule` against `req` by compiling the pattern to a regex and
/// re-deriving option checks, sharing no code with the token matcher.
pub fn regex_oracle_matches(rule: &NetworkRule, req: &RequestContext) -> bool {
    if !oracle_options_match(&rule.options, req) {
        return false;
    }
    let url = req.url().as_str().to_ascii_lowercase();
    let target: &str = if rule.right_rooted {
        let cut = url.find(['?', '#']).unwrap_or(url.len());
        &url[..cut]
    } else {
        &url
    };

    let mut pattern = String::new();
    match rule.anchor {
        Anchor::Left => pattern.push('^'),
        Anchor::Domain => pattern.push_str(r"^[a-z][a-z0-9+.\-]*://(?:[^/?#]*\.)?"),
        Anchor::None => {}
    }
    for token in &rule.pattern {
        match token {
            PatternToken::Literal(lit) => pattern.push_str(&regex::escape(lit)),
            PatternToken::Wildcard => pattern.push_str(".*"),
            PatternToken::Separator => pattern.push_str(r"(?:[^0-9a-z_.%-]|$)"),
        }
    }
    if rule.right_anchored || rule.right_rooted {
        pattern.push('$');
    }
    regex::Regex::new(&pattern).expect("oracle regex compiles").is_match(target)
}

fn oracle_options_match(options: &RuleOptions, req: &RequestContext) -> bool {
    if !options.include_types.is_empty() && !options.include_types.contains(&req.resource_type())
    {
        return false;
    }
    if options.exclude_types.contains(&req.resource_type()) {
        return false;
    }
    if let Some(third) = options.third_party {
        if req.is_third_party() != third {
            return false;
        }
    }
    let origin = req.source_origin();
    let covers = |entry: &String| {
        origin == entry.as_str() || origin.ends_with(&format!(".{entry}"))
    };
    if !options.include_domains.is_empty() && !options.include_domains.iter().any(covers) {
        return false;
    }
    if options.exclude_domains.iter().any(covers) {
        return false;
    }
    true
}

// ---------------------------------------------------------------------
// Randomized rules and requests.
// ---------------------------------------------------------------------

const DOMAIN_POOL: [&str; 8] = [
    "ads.example.com",
    "example.com",
    "cdn.tracker.net",
    "tracker.net",
    "banners.shiny.org",
    "example.co.uk",
    "media.example.co.uk",
    "adnet.al",
];

const ORIGIN_POOL: [&str; 5] =
    ["example.com", "tracker.net", "shiny.org", "example.co.uk", "adnet.al"];

const PATH_WORDS: [&str; 8] = ["ads", "banner", "img", "track", "pixel", "content", "js", "a1"];

pub fn random_rule(rng: &mut ChaCha8Rng) -> NetworkRule {
    loop {
        let mut text = String::new();
        if rng.random::<f64>() < 0.25 {
            text.push_str("@@");
        }
        let roll: f64 = rng.random();
        if roll < 0.45 {
            text.push_str("||");
            text.push_str(DOMAIN_POOL[rng.random_range(0..DOMAIN_POOL.len())]);
        } else if roll < 0.55 {
            text.push('|');
            text.push_str(if rng.random() { "https://" } else { "http://" });
            text.push_str(DOMAIN_POOL[rng.random_range(0..DOMAIN_POOL.len())]);
        } else {
            text.push_str(PATH_WORDS[rng.random_range(0..PATH_WORDS.len())]);
        }
        for _ in 0..rng.random_range(0..3u32) {
            match rng.random_range(0..4u32) {
                0 => text.push('^'),
                1 => text.push('*'),
                2 => {
                    text.push('/');
                    text.push_str(PATH_WORDS[rng.random_range(0..PATH_WORDS.len())]);
                }
                _ => {
                    text.push('.');
                    text.push_str(["gif", "png", "js", "html"][rng.random_range(0..4)]);
                }
            }
        }
        if rng.random::<f64>() < 0.12 {
            text.push('|');
        }
        let mut opts: Vec<String> = Vec::new();
        if rng.random::<f64>() < 0.35 {
            for ty in ["image", "subdocument", "script", "other"] {
                if rng.random::<f64>() < 0.2 {
                    let neg = if rng.random::<f64>() < 0.3 { "~" } else { "" };
                    opts.push(format!("{neg}{ty}"));
                }
            }
            if rng.random::<f64>() < 0.3 {
                opts.push(
                    if rng.random() { "third-party" } else { "~third-party" }.to_string(),
                );
            }
            if rng.random::<f64>() < 0.25 {
                let mut entries = Vec::new();
                for _ in 0..rng.random_range(1..3u32) {
                    let neg = if rng.random::<f64>() < 0.3 { "~" } else { "" };
                    entries.push(format!(
                        "{neg}{}",
                        ORIGIN_POOL[rng.random_range(0..ORIGIN_POOL.len())]
                    ));
                }
                opts.push(format!("domain={}", entries.join("|")));
            }
        }
        if !opts.is_empty() {
            text.push('$');
            text.push_str(&opts.join(","));
        }
        if let Ok(rule) = parse_network_rule(&text) {
            return rule;
        }
    }
}

pub fn random_request(rng: &mut ChaCha8Rng, psl: &PublicSuffixList) -> RequestContext {
    let scheme = if rng.random() { "https" } else { "http" };
    let host = DOMAIN_POOL[rng.random_range(0..DOMAIN_POOL.len())];
    let sub = match rng.random_range(0..3u32) {
        0 => String::new(),
        1 => "a.".to_string(),
        _ => "a.b.".to_string(),
    };
    let mut path = String::new();
    for _ in 0..rng.random_range(0..3u32) {
        path.push('/');
        path.push_str(PATH_WORDS[rng.random_range(0..PATH_WORDS.len())]);
    }
    if rng.random::<f64>() < 0.5 {
        path.push('.');
        path.push_str(["gif", "png", "js", "html"][rng.random_range(0..4)]);
    }
    let query = match rng.random_range(0..3u32) {
        0 => String::new(),
        1 => "?id=4".to_string(),
        _ => "?a=1;b=2".to_string(),
    };
    let fragment = if rng.random::<f64>() < 0.2 { "#top" } else { "" };
    let url = format!("{scheme}://{sub}{host}{path}{query}{fragment}");
    let origin = ORIGIN_POOL[rng.random_range(0..ORIGIN_POOL.len())];
    let rt = [
        ResourceType::Image,
        ResourceType::Subdocument,
        ResourceType::Script,
        ResourceType::Other,
    ][rng.random_range(0..4)];
    RequestContext::new(&url, origin, rt, psl).expect("generated urls are valid")
}

// ---------------------------------------------------------------------
// Brute-force graph oracles over the raw edge list.
// ---------------------------------------------------------------------

/// Single-step inserter resolution by scanning every edge in document
/// order: first create edge wins, then the first insert edge.
pub fn brute_force_inserter(g: &PageGraph, node: &NodeId) -> Option<NodeId> {
    let create = g
        .edges()
        .filter(|e| e.kind == EdgeKind::CreateNode && &e.to == node)
        .map(|e| e.from.clone())
        .next();
    create.or_else(|| {
        g.edges()
            .filter(|e| e.kind == EdgeKind::InsertNode && &e.to == node)
            .map(|e| e.from.clone())
            .next()
    })
}

/// Reverse insertion-walk: repeatedly resolve the inserter by linear scan,
/// collecting script nodes until the parser (or a dead end) is reached.
pub fn brute_force_chain(g: &PageGraph, element: &NodeId) -> Vec<NodeId> {
    let mut links = Vec::new();
    let mut current = element.clone();
    let mut hops = 0;
    loop {
        hops += 1;
        assert!(hops <= g.node_count() + 2, "cycle in brute-force walk");
        let source = match brute_force_inserter(g, &current) {
            Some(s) => s,
            None => break,
        };
        match g.node(&source).map(|n| n.kind) {
            Some(NodeKind::Parser) => break,
            Some(NodeKind::Script) => {
                links.push(source.clone());
                // The element whose execution produced this script.
                let element = g
                    .edges()
                    .find(|e| e.kind == EdgeKind::Execute && e.to == source)
                    .map(|e| e.from.clone());
                match element {
                    Some(el) => current = el,
                    None => break,
                }
            }
            _ => break,
        }
    }
    links
}

// ---------------------------------------------------------------------
// Forest helpers.
// ---------------------------------------------------------------------

/// Per-tree traversal evaluator, independent of `ForestModel::predict`.
pub fn brute_force_forest_probability(model: &ForestModel, values: &[f64]) -> f64 {
    fn walk(node: &TreeNode, values: &[f64]) -> f64 {
        match node {
            TreeNode::Leaf { ad_fraction } => *ad_fraction,
            TreeNode::Split { feature, threshold, left, right } => {
                if values[*feature] <= *threshold {
                    walk(left, values)
                } else {
                    walk(right, values)
                }
            }
        }
    }
    let total: f64 = model.trees.iter().map(|t| walk(t, values)).sum();
    total / model.trees.len() as f64
}

/// Synthetic example whose label is `is_third_party && is_standard_ad_size`,
/// with co-varying secondary signals.
pub fn separable_example(rng: &mut ChaCha8Rng, ad: bool) -> LabeledExample {
    use filtergen::oracle::FeatureVector;
    let (third_party, standard) =
        if ad { (true, true) } else { (rng.random(), false) };
    LabeledExample {
        features: FeatureVector {
            height_px: rng.random_range(10..900),
            width_px: rng.random_range(10..900),
            is_standard_ad_size: standard,
            url_length: if ad { rng.random_range(120..200) } else { rng.random_range(20..100) },
            is_subdomain: rng.random(),
            is_third_party: third_party,
            has_semicolon_in_query: ad,
            resource_type: if rng.random() {
                ResourceType::Image
            } else {
                ResourceType::Subdocument
            },
            perceptual_ad_probability: if ad {
                0.8 + rng.random::<f64>() * 0.2
            } else {
                rng.random::<f64>() * 0.2
            },
            perceptual_missing: false,
            load_time_ms: rng.random_range(0..30_000),
            node_in_degree: rng.random_range(0..10),
            node_out_degree: rng.random_range(0..10),
            node_total_degree: rng.random_range(0..20),
            modified_by_script: ad,
            parent_in_degree: rng.random_range(0..10),
            parent_out_degree: rng.random_range(0..10),
            parent_total_degree: rng.random_range(0..20),
            parent_modified_by_script: rng.random(),
            avg_degree_connectivity: rng.random::<f64>() * 8.0,
        },
        label: if ad { Label::Ad } else { Label::NotAd },
        source_page: "https://fixture.example.com/".to_string(),
    }
}

pub fn separable_set(n: usize, seed: u64) -> Vec<LabeledExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|i| separable_example(&mut rng, i % 2 == 0)).collect()
}

pub fn random_feature_values(rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..filtergen::oracle::FEATURE_NAMES.len())
        .map(|_| match rng.random_range(0..3u32) {
            0 => f64::from(rng.random::<bool>()),
            1 => rng.random::<f64>(),
            _ => rng.random_range(0..1000) as f64,
        })
        .collect()
}
