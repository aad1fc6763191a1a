//! The ad oracle: decides which image/iframe resources are advertisements,
//! via existing filter lists and via a contextual random-forest classifier
//! whose perceptual input arrives as a per-resource probability.

mod forest;

pub use forest::{
    train_forest, CvReport, FoldMetrics, ForestError, ForestModel, Label, Prediction,
    TrainConfig, TrainReport, TreeNode,
};

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abp::{RequestContext, ResourceType, RuleSet};
use crate::graph::{EdgeId, GraphError, PageGraph, ResourceRequestRecord};
use crate::psl::PublicSuffixList;

/// Feature order is the contract between extraction, stored models, and
/// prediction; stored models embed these names and are rejected on drift.
pub const FEATURE_NAMES: [&str; 20] = [
    "height_px",
    "width_px",
    "is_standard_ad_size",
    "url_length",
    "is_subdomain",
    "is_third_party",
    "has_semicolon_in_query",
    "resource_type",
    "perceptual_ad_probability",
    "perceptual_missing",
    "load_time_ms",
    "node_in_degree",
    "node_out_degree",
    "node_total_degree",
    "modified_by_script",
    "parent_in_degree",
    "parent_out_degree",
    "parent_total_degree",
    "parent_modified_by_script",
    "avg_degree_connectivity",
];

/// Contextual + perceptual feature bundle for one image/iframe resource.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub height_px: u32,
    pub width_px: u32,
    pub is_standard_ad_size: bool,
    pub url_length: u32,
    pub is_subdomain: bool,
    pub is_third_party: bool,
    pub has_semicolon_in_query: bool,
    pub resource_type: ResourceType,
    pub perceptual_ad_probability: f64,
    pub perceptual_missing: bool,
    pub load_time_ms: u64,
    pub node_in_degree: u32,
    pub node_out_degree: u32,
    pub node_total_degree: u32,
    pub modified_by_script: bool,
    pub parent_in_degree: u32,
    pub parent_out_degree: u32,
    pub parent_total_degree: u32,
    pub parent_modified_by_script: bool,
    pub avg_degree_connectivity: f64,
}

impl FeatureVector {
    /// Numeric view in [`FEATURE_NAMES`] order; booleans become 0/1 and
    /// the resource type becomes 0 (image) or 1 (subdocument).
    pub fn to_values(&self) -> Vec<f64> {
        vec![
            self.height_px as f64,
            self.width_px as f64,
            self.is_standard_ad_size as u8 as f64,
            self.url_length as f64,
            self.is_subdomain as u8 as f64,
            self.is_third_party as u8 as f64,
            self.has_semicolon_in_query as u8 as f64,
            match self.resource_type {
                ResourceType::Subdocument => 1.0,
                _ => 0.0,
            },
            self.perceptual_ad_probability,
            self.perceptual_missing as u8 as f64,
            self.load_time_ms as f64,
            self.node_in_degree as f64,
            self.node_out_degree as f64,
            self.node_total_degree as f64,
            self.modified_by_script as u8 as f64,
            self.parent_in_degree as f64,
            self.parent_out_degree as f64,
            self.parent_total_degree as f64,
            self.parent_modified_by_script as u8 as f64,
            self.avg_degree_connectivity,
        ]
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        if !(0.0..=1.0).contains(&self.perceptual_ad_probability) {
            return Err(FeatureError::BadProbability(self.perceptual_ad_probability));
        }
        if !matches!(self.resource_type, ResourceType::Image | ResourceType::Subdocument) {
            return Err(FeatureError::NotImageOrSubdocument(self.resource_type));
        }
        Ok(())
    }
}

/// One training row: features plus a manually assigned label.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabeledExample {
    pub features: FeatureVector,
    pub label: Label,
    pub source_page: String,
}

/// Reads JSON-lines training data; blank lines are skipped.
pub fn read_examples_jsonl(text: &str) -> Result<Vec<LabeledExample>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

pub fn write_examples_jsonl(examples: &[LabeledExample]) -> String {
    let mut out = String::new();
    for ex in examples {
        out.push_str(&serde_json::to_string(ex).expect("examples serialize"));
        out.push('\n');
    }
    out
}

/// Banner dimensions treated as "standard ad size".
#[derive(Debug, Clone)]
pub struct AdSizeTable(HashSet<(u32, u32)>);

/// IAB display units plus the historically common banner sizes.
const STANDARD_AD_SIZES: [(u32, u32); 24] = [
    (300, 250),
    (728, 90),
    (160, 600),
    (120, 600),
    (300, 600),
    (970, 250),
    (970, 90),
    (320, 50),
    (320, 100),
    (468, 60),
    (234, 60),
    (120, 240),
    (300, 1050),
    (336, 280),
    (250, 250),
    (200, 200),
    (180, 150),
    (125, 125),
    (88, 31),
    (120, 60),
    (240, 400),
    (320, 480),
    (300, 50),
    (580, 400),
];

impl Default for AdSizeTable {
    fn default() -> Self {
        AdSizeTable(STANDARD_AD_SIZES.into_iter().collect())
    }
}

impl AdSizeTable {
    pub fn custom<I: IntoIterator<Item = (u32, u32)>>(sizes: I) -> Self {
        AdSizeTable(sizes.into_iter().collect())
    }

    pub fn contains(&self, width: u32, height: u32) -> bool {
        self.0.contains(&(width, height))
    }
}

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("requester node {0} cannot be located in the graph")]
    RequesterMissing(String),
    #[error("resource type {0} is not image or subdocument")]
    NotImageOrSubdocument(ResourceType),
    #[error("page url has no host: {0}")]
    PageUrlHasNoHost(String),
    #[error("perceptual probability {0} outside [0, 1]")]
    BadProbability(f64),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Shared inputs for feature extraction over one page.
pub struct FeatureContext<'a> {
    pub psl: &'a PublicSuffixList,
    pub sizes: &'a AdSizeTable,
    /// eTLD+1 of the page (full host when none exists).
    pub page_origin: String,
}

impl<'a> FeatureContext<'a> {
    pub fn for_graph(
        g: &PageGraph,
        psl: &'a PublicSuffixList,
        sizes: &'a AdSizeTable,
    ) -> Result<Self, FeatureError> {
        let host = g
            .page_url()
            .host_str()
            .ok_or_else(|| FeatureError::PageUrlHasNoHost(g.page_url().to_string()))?;
        let page_origin = psl
            .registrable_domain(host)
            .unwrap_or(host)
            .to_ascii_lowercase();
        Ok(FeatureContext { psl, sizes, page_origin })
    }
}

/// Fills every feature for one image/subdocument request. The perceptual
/// probability is an external input; a missing value is encoded as 0.5
/// with `perceptual_missing` set.
pub fn extract_features(
    g: &PageGraph,
    record: &ResourceRequestRecord,
    perceptual: Option<f64>,
    ctx: &FeatureContext<'_>,
) -> Result<FeatureVector, FeatureError> {
    if !matches!(record.resource_type, ResourceType::Image | ResourceType::Subdocument) {
        return Err(FeatureError::NotImageOrSubdocument(record.resource_type));
    }
    if g.node(&record.requester).is_none() {
        return Err(FeatureError::RequesterMissing(record.requester.to_string()));
    }
    let degrees = g.node_degree_features(&record.requester)?;
    let width = g
        .effective_attr(&record.requester, "width")
        .and_then(|v| v.trim().parse::<u32>().ok())
        .unwrap_or(0);
    let height = g
        .effective_attr(&record.requester, "height")
        .and_then(|v| v.trim().parse::<u32>().ok())
        .unwrap_or(0);
    let url = &record.resource_url;
    let host = url.host_str().unwrap_or("");
    let request_origin = ctx
        .psl
        .registrable_domain(host)
        .unwrap_or(host)
        .to_ascii_lowercase();
    let fv = FeatureVector {
        height_px: height,
        width_px: width,
        is_standard_ad_size: ctx.sizes.contains(width, height),
        url_length: url.as_str().chars().count() as u32,
        is_subdomain: ctx.psl.is_subdomain(host),
        is_third_party: request_origin != ctx.page_origin,
        has_semicolon_in_query: url.query().is_some_and(|q| q.contains(';')),
        resource_type: record.resource_type,
        perceptual_ad_probability: perceptual.unwrap_or(0.5),
        perceptual_missing: perceptual.is_none(),
        load_time_ms: record.start_time,
        node_in_degree: degrees.in_degree as u32,
        node_out_degree: degrees.out_degree as u32,
        node_total_degree: degrees.total_degree as u32,
        modified_by_script: degrees.modified_by_script,
        parent_in_degree: degrees.parent_in_degree as u32,
        parent_out_degree: degrees.parent_out_degree as u32,
        parent_total_degree: degrees.parent_total_degree as u32,
        parent_modified_by_script: degrees.parent_modified_by_script,
        avg_degree_connectivity: degrees.avg_degree_connectivity,
    };
    fv.validate()?;
    Ok(fv)
}

/// Image/subdocument requests the existing lists would block. Excepted
/// requests are excluded.
pub fn label_by_lists(
    rules: &RuleSet,
    g: &PageGraph,
    psl: &PublicSuffixList,
) -> Vec<ResourceRequestRecord> {
    let host = g.page_url().host_str().unwrap_or("");
    let page_origin = psl.registrable_domain(host).unwrap_or(host).to_ascii_lowercase();
    g.resource_requests()
        .into_iter()
        .filter(|r| {
            matches!(r.resource_type, ResourceType::Image | ResourceType::Subdocument)
        })
        .filter(|r| {
            RequestContext::from_url(r.resource_url.clone(), &page_origin, r.resource_type, psl)
                .map(|req| rules.match_request(&req).is_blocked())
                .unwrap_or(false)
        })
        .collect()
}

/// Runs the classifier over image/subdocument requests not already labeled
/// by lists; returns the verdict-ad requests plus per-resource extraction
/// diagnostics.
pub fn classify_new_ads(
    model: &ForestModel,
    g: &PageGraph,
    already: &HashSet<EdgeId>,
    perceptual_map: &BTreeMap<String, f64>,
    ctx: &FeatureContext<'_>,
) -> (Vec<ResourceRequestRecord>, Vec<String>) {
    let mut ads = Vec::new();
    let mut diagnostics = Vec::new();
    for record in g.resource_requests() {
        if !matches!(record.resource_type, ResourceType::Image | ResourceType::Subdocument) {
            continue;
        }
        if already.contains(&record.edge_id) {
            continue;
        }
        let perceptual = perceptual_map.get(record.resource_url.as_str()).copied();
        match extract_features(g, &record, perceptual, ctx) {
            Ok(fv) => match model.predict(&fv) {
                Ok(prediction) if prediction.verdict == Label::Ad => ads.push(record),
                Ok(_) => {}
                Err(err) => diagnostics.push(format!(
                    "prediction failed for {}: {err}",
                    record.resource_url
                )),
            },
            Err(err) => diagnostics.push(format!(
                "feature extraction failed for {}: {err}",
                record.resource_url
            )),
        }
    }
    (ads, diagnostics)
}
