//! filtergen: batch generation of AdBlock-Plus-format filter rules from
//! instrumented-browser page-execution graphs.
//!
//! The pipeline ingests a crawl directory of serialized page graphs,
//! identifies advertising images and frames (by existing filter lists and
//! by a contextual random-forest classifier), reconstructs the chain of
//! script insertions behind each ad, picks the highest upstream script that
//! is safe to block, and emits generalized `||eTLD+1/path` rules plus an
//! evaluation report.

pub mod abp;
pub mod chains;
pub mod graph;
pub mod oracle;
pub mod pipeline;
pub mod psl;
pub mod safety;

pub use abp::{MatchVerdict, NetworkRule, RequestContext, ResourceType, RuleSet};
pub use graph::PageGraph;
pub use psl::PublicSuffixList;

#[cfg(test)]
pub(crate) mod test_fixtures {
    //! Shared hand-built graphs for unit tests.

    use crate::abp::ResourceType;
    use crate::graph::builder::{Actor, GraphBuilder};
    use crate::graph::{NodeId, PageGraph};

    pub struct AdChainFixture {
        pub graph: PageGraph,
        pub script1: NodeId,
        pub script2: NodeId,
        pub script1_element: NodeId,
        pub script2_element: NodeId,
        pub image_element: NodeId,
        pub script1_url: &'static str,
        pub script2_url: &'static str,
        pub image_url: &'static str,
    }

    pub const LOADER_SCRIPT_URL: &str = "https://cdn.adnetwork.com/loader.js";
    pub const TAG_SCRIPT_URL: &str = "https://tags.adnetwork.com/tag.js";
    pub const AD_IMAGE_URL: &str = "https://serving.adimages.net/creative/banner1.png?id=4";

    /// A page where a parser-inserted script ("script one") programmatically
    /// inserts a second script, and that second script inserts an ad image.
    /// Script one touches three separate parser-created regions, script two
    /// touches one.
    pub fn ad_chain_page() -> AdChainFixture {
        let mut b = GraphBuilder::for_page("https://news.example.al/");
        let html = b.element("html", &Actor::Parser, None);
        let head = b.element("head", &Actor::Parser, Some(&html));
        let body = b.element("body", &Actor::Parser, Some(&html));
        let div_a = b.element("div", &Actor::Parser, Some(&body));
        let div_b = b.element("div", &Actor::Parser, Some(&body));

        let (s1_el, s1) = b.script_element(&Actor::Parser, Some(&head), Some(LOADER_SCRIPT_URL));
        let (s2_el, s2) =
            b.script_element(&Actor::Script(s1.clone()), Some(&head), Some(TAG_SCRIPT_URL));
        b.element("span", &Actor::Script(s1.clone()), Some(&div_a));
        b.element("span", &Actor::Script(s1.clone()), Some(&div_b));

        let ad_div = b.element("div", &Actor::Script(s2.clone()), Some(&body));
        let img = b.element("img", &Actor::Script(s2.clone()), Some(&ad_div));
        b.set_attribute(&Actor::Script(s2.clone()), &img, "width", "300");
        b.set_attribute(&Actor::Script(s2.clone()), &img, "height", "250");
        b.request(&img, AD_IMAGE_URL, ResourceType::Image);

        AdChainFixture {
            graph: b.build().expect("ad-chain fixture is valid"),
            script1: s1,
            script2: s2,
            script1_element: s1_el,
            script2_element: s2_el,
            image_element: img,
            script1_url: LOADER_SCRIPT_URL,
            script2_url: TAG_SCRIPT_URL,
            image_url: AD_IMAGE_URL,
        }
    }
}
