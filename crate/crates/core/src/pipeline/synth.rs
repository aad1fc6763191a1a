//! Synthetic crawl corpora with planted ad chains and recorded ground
//! truth, plus random page graphs for oracle-equivalence testing.
//! Deterministic for a given seed, byte for byte.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abp::ResourceType;
use crate::graph::builder::{Actor, GraphBuilder};
use crate::graph::{GraphError, NodeId, NodeKind, PageGraph};
use crate::oracle::{extract_features, AdSizeTable, FeatureContext, Label, LabeledExample};
use crate::pipeline::PageMetadata;
use crate::psl::PublicSuffixList;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("io error at {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("generated graph failed validation: {0}")]
    Graph(#[from] GraphError),
    #[error("could not derive training examples: {0}")]
    Examples(String),
    #[error("config: pages must be > 0")]
    NoPages,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub pages: usize,
    /// Mean planted ad chains per page; the total is rounded and spread
    /// deterministically.
    pub ads_per_page: f64,
    /// Weights over chain depths 0, 1, 2, ... (0 = parser-inserted ad).
    pub chain_depth_distribution: Vec<f64>,
    /// Probability that a chain script is made page-breaking (touches
    /// three extra document regions).
    pub unsafe_script_rate: f64,
    pub seed: u64,
    pub regions: Vec<String>,
    pub benign_images_per_page: usize,
    pub benign_scripts_per_page: usize,
    pub benign_frames_per_page: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            pages: 10,
            ads_per_page: 2.0,
            chain_depth_distribution: vec![0.15, 0.35, 0.30, 0.20],
            unsafe_script_rate: 0.2,
            seed: 1,
            regions: vec!["synthetic".to_string()],
            benign_images_per_page: 4,
            benign_scripts_per_page: 2,
            benign_frames_per_page: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainTruth {
    pub terminal_url: String,
    pub terminal_type: ResourceType,
    /// Chain script URLs, nearest-to-the-ad first.
    pub script_urls: Vec<String>,
    /// Planted per-script "touches too many regions" flags, same order.
    pub script_count_unsafe: Vec<bool>,
    /// URLs a correct run must target: the terminal, plus the highest
    /// safely blockable script when one exists.
    pub expected_targets: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PageTruth {
    pub region: String,
    pub page_id: String,
    pub page_url: String,
    pub chains: Vec<ChainTruth>,
    pub benign_urls: Vec<String>,
    pub unsafe_script_urls: Vec<String>,
    pub safe_chain_script_urls: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub total_ads: usize,
    pub pages: Vec<PageTruth>,
}

impl GroundTruth {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
        serde_json::from_str(&text).map_err(|e| e.to_string())
    }

    pub fn terminal_urls(&self) -> impl Iterator<Item = (&PageTruth, &ChainTruth)> {
        self.pages.iter().flat_map(|p| p.chains.iter().map(move |c| (p, c)))
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), SynthError> {
    std::fs::write(path, contents)
        .map_err(|source| SynthError::Io { path: path.to_path_buf(), source })
}

/// Generates a crawl directory of `config.pages` pages with planted ad
/// chains, writing `ground_truth.json` at the root and returning it.
pub fn synth_corpus(config: &SynthConfig, out_dir: &Path) -> Result<GroundTruth, SynthError> {
    if config.pages == 0 {
        return Err(SynthError::NoPages);
    }
    let total_ads = (config.pages as f64 * config.ads_per_page).round() as usize;
    let base = total_ads / config.pages;
    let extra = total_ads % config.pages;

    let regions = if config.regions.is_empty() {
        vec!["synthetic".to_string()]
    } else {
        config.regions.clone()
    };

    let mut pages = Vec::new();
    for p in 0..config.pages {
        let ads_here = base + usize::from(p < extra);
        let region = &regions[p % regions.len()];
        let page_id = format!("page-{p:04}");
        let page_dir = out_dir.join(region).join(&page_id);
        std::fs::create_dir_all(&page_dir)
            .map_err(|source| SynthError::Io { path: page_dir.clone(), source })?;

        let seed = config.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(p as u64);
        let page = generate_page(seed, p, region, &page_id, ads_here, config)?;

        write_file(&page_dir.join("page.graphml"), &page.graph.to_graphml())?;
        let metadata = PageMetadata {
            final_url: page.truth.page_url.clone(),
            navigation_started: Some("2019-10-01T00:00:00Z".to_string()),
            region: Some(region.clone()),
        };
        write_file(
            &page_dir.join("metadata.json"),
            &format!("{}\n", serde_json::to_string_pretty(&metadata).expect("metadata")),
        )?;
        write_file(
            &page_dir.join("perceptual.json"),
            &format!(
                "{}\n",
                serde_json::to_string_pretty(&page.perceptual).expect("perceptual")
            ),
        )?;
        pages.push(page.truth);
    }

    let truth = GroundTruth { seed: config.seed, total_ads, pages };
    write_file(
        &out_dir.join("ground_truth.json"),
        &format!("{}\n", serde_json::to_string_pretty(&truth).expect("ground truth")),
    )?;
    // Labeled rows for `filtergen train`, derived from the ground truth.
    let examples = training_examples_from_corpus(
        out_dir,
        &truth,
        &PublicSuffixList::bundled(),
        &AdSizeTable::default(),
    )
    .map_err(SynthError::Examples)?;
    write_file(
        &out_dir.join("training_examples.jsonl"),
        &crate::oracle::write_examples_jsonl(&examples),
    )?;
    Ok(truth)
}

struct GeneratedPage {
    graph: PageGraph,
    perceptual: BTreeMap<String, f64>,
    truth: PageTruth,
}

/// Sizes kept away from the standard ad-size table.
const BENIGN_SIZES: [(u32, u32); 6] =
    [(101, 73), (417, 311), (640, 427), (222, 219), (87, 31), (512, 384)];

const IAB_SIZES: [(u32, u32); 6] =
    [(300, 250), (728, 90), (160, 600), (320, 50), (300, 600), (970, 250)];

fn sample_weighted(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().filter(|w| w.is_finite() && **w > 0.0).sum();
    if total <= 0.0 {
        return 0;
    }
    let mut roll = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if !w.is_finite() || *w <= 0.0 {
            continue;
        }
        if roll < *w {
            return i;
        }
        roll -= *w;
    }
    weights.len() - 1
}

fn generate_page(
    seed: u64,
    page_index: usize,
    region: &str,
    page_id: &str,
    ads: usize,
    config: &SynthConfig,
) -> Result<GeneratedPage, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tlds = ["com", "net", "org", "al", "hu", "lk"];
    let tld = tlds[rng.random_range(0..tlds.len())];
    let page_url = format!("https://www.site{page_index}.{tld}/news/article-{page_index}.html");

    let mut b = GraphBuilder::for_page(&page_url);
    let html = b.element("html", &Actor::Parser, None);
    let head = b.element("head", &Actor::Parser, Some(&html));
    let body = b.element("body", &Actor::Parser, Some(&html));
    let divs: Vec<NodeId> = (0..4 + rng.random_range(0..3))
        .map(|_| b.element("div", &Actor::Parser, Some(&body)))
        .collect();

    let mut perceptual: BTreeMap<String, f64> = BTreeMap::new();
    let mut benign_urls: Vec<String> = Vec::new();

    // Benign images: first-party statics and benign CDNs, non-ad sizes,
    // low perceptual scores. Some lack a perceptual entry entirely.
    for i in 0..config.benign_images_per_page {
        let url = if rng.random::<f64>() < 0.5 {
            format!("https://static.site{page_index}.{tld}/img/photo-{i}.jpg")
        } else {
            format!(
                "https://cdn.benignassets{}.com/media/p{page_index}-{i}.png",
                rng.random_range(0..3)
            )
        };
        let parent = divs[rng.random_range(0..divs.len())].clone();
        let img = b.element("img", &Actor::Parser, Some(&parent));
        let (w, h) = BENIGN_SIZES[rng.random_range(0..BENIGN_SIZES.len())];
        b.set_node_attr(&img, "width", &w.to_string());
        b.set_node_attr(&img, "height", &h.to_string());
        b.request(&img, &url, ResourceType::Image);
        if rng.random::<f64>() < 0.8 {
            perceptual.insert(url.clone(), 0.02 + rng.random::<f64>() * 0.2);
        }
        benign_urls.push(url);
    }

    // Benign third-party frames (widgets), also non-ad sized.
    for i in 0..config.benign_frames_per_page {
        let url = format!(
            "https://widgets.benignassets{}.com/embed/w{page_index}-{i}.html",
            rng.random_range(0..3)
        );
        let parent = divs[rng.random_range(0..divs.len())].clone();
        let owner = b.remote_frame(&Actor::Parser, Some(&parent), &url);
        let (w, h) = BENIGN_SIZES[rng.random_range(0..BENIGN_SIZES.len())];
        b.set_node_attr(&owner, "width", &w.to_string());
        b.set_node_attr(&owner, "height", &h.to_string());
        b.request(&owner, &url, ResourceType::Subdocument);
        if rng.random::<f64>() < 0.8 {
            perceptual.insert(url.clone(), 0.02 + rng.random::<f64>() * 0.2);
        }
        benign_urls.push(url);
    }

    // Benign scripts: site functionality, touching at most two regions.
    for i in 0..config.benign_scripts_per_page {
        let url =
            format!("https://cdn.libs{}.net/js/lib-{i}.min.js", rng.random_range(0..3));
        let (_, script) = b.script_element(&Actor::Parser, Some(&head), Some(&url));
        for k in 0..rng.random_range(0..=2usize) {
            let parent = divs[(i + k) % divs.len()].clone();
            b.element("span", &Actor::Script(script.clone()), Some(&parent));
        }
        benign_urls.push(url);
    }

    // Planted ad chains.
    let mut chains: Vec<ChainTruth> = Vec::new();
    let mut unsafe_script_urls: Vec<String> = Vec::new();
    let mut safe_chain_script_urls: Vec<String> = Vec::new();
    for c in 0..ads {
        let depth = sample_weighted(&mut rng, &config.chain_depth_distribution);
        let slot = divs[rng.random_range(0..divs.len())].clone();

        // Scripts upstream-to-downstream: index 0 is parser-inserted.
        let mut script_urls_up_down: Vec<String> = Vec::new();
        let mut script_nodes: Vec<NodeId> = Vec::new();
        let mut count_unsafe_up_down: Vec<bool> = Vec::new();
        for s in 0..depth {
            let url = format!(
                "https://tags.adnet{}.com/t/p{page_index}c{c}s{s}.js",
                rng.random_range(0..4)
            );
            let actor = match script_nodes.last() {
                None => Actor::Parser,
                Some(prev) => Actor::Script(prev.clone()),
            };
            let parent = if script_nodes.is_empty() { head.clone() } else { slot.clone() };
            let (_, script) = b.script_element(&actor, Some(&parent), Some(&url));
            let make_unsafe = rng.random::<f64>() < config.unsafe_script_rate;
            if make_unsafe {
                // Three distinct extra regions force the subtree count
                // over the safe-blocking limit.
                let mut picks: Vec<usize> = (0..divs.len()).collect();
                for k in 0..3 {
                    let j = rng.random_range(k..picks.len());
                    picks.swap(k, j);
                    let target = divs[picks[k]].clone();
                    b.element("span", &Actor::Script(script.clone()), Some(&target));
                }
                unsafe_script_urls.push(url.clone());
            }
            count_unsafe_up_down.push(make_unsafe);
            script_urls_up_down.push(url);
            script_nodes.push(script);
        }

        let inserter = match script_nodes.last() {
            None => Actor::Parser,
            Some(s) => Actor::Script(s.clone()),
        };
        let is_frame = rng.random::<f64>() < 0.2;
        let (w, h) = IAB_SIZES[rng.random_range(0..IAB_SIZES.len())];
        let sep = if rng.random::<f64>() < 0.5 { ";" } else { "&" };
        let terminal_url = if is_frame {
            format!(
                "https://frames.adserve{}.net/slot/p{page_index}c{c}.html?cb={}{}pos={c}",
                rng.random_range(0..3),
                rng.random_range(1000..9999),
                sep,
            )
        } else {
            format!(
                "https://serv{}.adimages{}.net/creative/p{page_index}c{c}.png?cb={}{}pos={c}",
                rng.random_range(0..3),
                rng.random_range(0..3),
                rng.random_range(1000..9999),
                sep,
            )
        };
        let terminal_type =
            if is_frame { ResourceType::Subdocument } else { ResourceType::Image };
        let terminal_el = if is_frame {
            b.remote_frame(&inserter, Some(&slot), &terminal_url)
        } else {
            b.element("img", &inserter, Some(&slot))
        };
        match &inserter {
            Actor::Parser => {
                b.set_node_attr(&terminal_el, "width", &w.to_string());
                b.set_node_attr(&terminal_el, "height", &h.to_string());
            }
            Actor::Script(s) => {
                let actor = Actor::Script(s.clone());
                b.set_attribute(&actor, &terminal_el, "width", &w.to_string());
                b.set_attribute(&actor, &terminal_el, "height", &h.to_string());
            }
        }
        b.request(&terminal_el, &terminal_url, terminal_type);
        perceptual.insert(terminal_url.clone(), 0.8 + rng.random::<f64>() * 0.19);

        // Chain order for the truth record is nearest-to-the-ad first.
        let script_urls: Vec<String> = script_urls_up_down.iter().rev().cloned().collect();
        let count_unsafe: Vec<bool> = count_unsafe_up_down.iter().rev().copied().collect();
        // Walking upstream stops at the first script that breaks pages;
        // unsafety also propagates to everything that inserted it.
        let highest = match count_unsafe.iter().position(|&u| u) {
            Some(first_unsafe) => first_unsafe.checked_sub(1),
            None => script_urls.len().checked_sub(1),
        };
        let mut expected_targets = vec![terminal_url.clone()];
        if let Some(k) = highest {
            expected_targets.push(script_urls[k].clone());
        }
        for (url, unsafe_flag) in script_urls.iter().zip(count_unsafe.iter()) {
            if !unsafe_flag && !unsafe_script_urls.contains(url) {
                safe_chain_script_urls.push(url.clone());
            }
        }
        chains.push(ChainTruth {
            terminal_url,
            terminal_type,
            script_urls,
            script_count_unsafe: count_unsafe,
            expected_targets,
        });
    }

    Ok(GeneratedPage {
        graph: b.build()?,
        perceptual,
        truth: PageTruth {
            region: region.to_string(),
            page_id: page_id.to_string(),
            page_url,
            chains,
            benign_urls,
            unsafe_script_urls,
            safe_chain_script_urls,
        },
    })
}

/// Builds labeled training rows from a generated corpus: every
/// image/subdocument request, labeled ad iff it is a planted terminal.
pub fn training_examples_from_corpus(
    dir: &Path,
    truth: &GroundTruth,
    psl: &PublicSuffixList,
    sizes: &AdSizeTable,
) -> Result<Vec<LabeledExample>, String> {
    let mut examples = Vec::new();
    for page in &truth.pages {
        let page_dir = dir.join(&page.region).join(&page.page_id);
        let graph = crate::graph::load_graphml_file(&page_dir.join("page.graphml"))
            .map_err(|e| e.to_string())?;
        let perceptual: BTreeMap<String, f64> =
            match std::fs::read_to_string(page_dir.join("perceptual.json")) {
                Ok(text) => serde_json::from_str(&text).map_err(|e| e.to_string())?,
                Err(_) => BTreeMap::new(),
            };
        let ctx = FeatureContext::for_graph(&graph, psl, sizes).map_err(|e| e.to_string())?;
        let ad_urls: Vec<&str> = page.chains.iter().map(|c| c.terminal_url.as_str()).collect();
        for record in graph.resource_requests() {
            if !matches!(record.resource_type, ResourceType::Image | ResourceType::Subdocument)
            {
                continue;
            }
            let url = record.resource_url.as_str();
            let fv = extract_features(&graph, &record, perceptual.get(url).copied(), &ctx)
                .map_err(|e| e.to_string())?;
            examples.push(LabeledExample {
                features: fv,
                label: if ad_urls.contains(&url) { Label::Ad } else { Label::NotAd },
                source_page: page.page_url.clone(),
            });
        }
    }
    Ok(examples)
}

/// A random but valid page graph: parser- and script-driven insertions,
/// attribute churn, removals, re-insertions, orphan elements, and resource
/// requests. Used for oracle-equivalence testing of graph walks.
pub fn random_page_graph(seed: u64, operations: usize) -> PageGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = GraphBuilder::for_page(&format!("https://rnd{seed}.example.com/"));
    let mut elements: Vec<NodeId> = Vec::new();
    let mut scripts: Vec<NodeId> = Vec::new();
    let root = b.element("html", &Actor::Parser, None);
    elements.push(root);

    for i in 0..operations {
        let actor = if scripts.is_empty() || rng.random::<f64>() < 0.45 {
            Actor::Parser
        } else {
            Actor::Script(scripts[rng.random_range(0..scripts.len())].clone())
        };
        let parent = if rng.random::<f64>() < 0.9 {
            Some(elements[rng.random_range(0..elements.len())].clone())
        } else {
            None
        };
        match rng.random_range(0..10u32) {
            0..=3 => {
                let tag = ["div", "span", "img", "p"][rng.random_range(0..4)];
                let el = b.element(tag, &actor, parent.as_ref());
                if tag == "img" && rng.random::<f64>() < 0.7 {
                    let url = format!("https://assets{}.example.net/r{i}.png", i % 5);
                    b.request_with(&el, &url, ResourceType::Image, rng.random::<f64>() < 0.9);
                }
                elements.push(el);
            }
            4..=5 => {
                let url = if rng.random::<f64>() < 0.6 {
                    Some(format!("https://scripts{}.example.org/s{i}.js", i % 4))
                } else {
                    None
                };
                let (el, script) = b.script_element(&actor, parent.as_ref(), url.as_deref());
                elements.push(el);
                scripts.push(script);
            }
            6 => {
                let target = elements[rng.random_range(0..elements.len())].clone();
                b.set_attribute(&actor, &target, "class", &format!("c{i}"));
            }
            7 => {
                let target = elements[rng.random_range(0..elements.len())].clone();
                b.remove(&actor, &target);
            }
            8 => {
                let target = elements[rng.random_range(0..elements.len())].clone();
                if let Some(p) = parent {
                    b.reinsert(&actor, &target, &p);
                }
            }
            _ => {
                // Orphan element with a request: exercises the
                // unknown-inserter path.
                let orphan = b.raw_node(NodeKind::HtmlElement, Some("img"), None);
                let url = format!("https://orphan{}.example.net/o{i}.gif", i % 3);
                b.request(&orphan, &url, ResourceType::Image);
                elements.push(orphan);
            }
        }
    }
    b.build().expect("random page graphs are valid by construction")
}
