//! Breakage heuristics: which scripts are safe to block, and the highest
//! safely-blockable point in a request chain.
//!
//! A script is unsafe when it inserts nodes into more than
//! `subtree_limit` distinct document regions, or when any script it
//! (transitively) inserted does. Everything else is safe. The verdicts
//! deliberately prefer leaving an ad unblocked over breaking a page.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use url::Url;

use crate::abp::NetworkRule;
use crate::chains::RequestChain;
use crate::graph::{GraphError, NodeId, PageGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SafetyVerdict {
    Safe,
    Unsafe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SafetyReason {
    SubtreeCountExceeded,
    InsertsUnsafeScript,
    DefaultSafe,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScriptSafety {
    pub script_node: NodeId,
    pub verdict: SafetyVerdict,
    pub reason: SafetyReason,
    pub subtree_count: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct SafetyConfig {
    /// Scripts touching more document regions than this are unsafe.
    pub subtree_limit: usize,
}

impl Default for SafetyConfig {
    fn default() -> Self {
        SafetyConfig { subtree_limit: 2 }
    }
}

/// Per-page safety classifier with a memo table; verdicts for one graph
/// are stable, so each script is evaluated once.
pub struct SafetyAnalyzer<'g> {
    graph: &'g PageGraph,
    config: SafetyConfig,
    memo: HashMap<NodeId, ScriptSafety>,
}

impl<'g> SafetyAnalyzer<'g> {
    pub fn new(graph: &'g PageGraph, config: SafetyConfig) -> Self {
        SafetyAnalyzer { graph, config, memo: HashMap::new() }
    }

    pub fn classify(&mut self, script: &NodeId) -> Result<ScriptSafety, GraphError> {
        if let Some(hit) = self.memo.get(script) {
            return Ok(hit.clone());
        }
        let subtree_count = self.graph.modified_subtree_count(script)?;
        let safety = if subtree_count > self.config.subtree_limit {
            ScriptSafety {
                script_node: script.clone(),
                verdict: SafetyVerdict::Unsafe,
                reason: SafetyReason::SubtreeCountExceeded,
                subtree_count,
            }
        } else if self.inserts_unsafe_script(script)? {
            ScriptSafety {
                script_node: script.clone(),
                verdict: SafetyVerdict::Unsafe,
                reason: SafetyReason::InsertsUnsafeScript,
                subtree_count,
            }
        } else {
            ScriptSafety {
                script_node: script.clone(),
                verdict: SafetyVerdict::Safe,
                reason: SafetyReason::DefaultSafe,
                subtree_count,
            }
        };
        self.memo.insert(script.clone(), safety.clone());
        Ok(safety)
    }

    /// Everything classified so far, for report export.
    pub fn into_classified(self) -> Vec<ScriptSafety> {
        self.memo.into_values().collect()
    }

    /// True when any script in the transitive closure of scripts inserted
    /// by `script` exceeds the subtree limit.
    fn inserts_unsafe_script(&self, script: &NodeId) -> Result<bool, GraphError> {
        let mut queue: Vec<NodeId> = self.graph.scripts_inserted_by(script)?;
        let mut seen: HashSet<NodeId> = queue.iter().cloned().collect();
        while let Some(next) = queue.pop() {
            if self.graph.modified_subtree_count(&next)? > self.config.subtree_limit {
                return Ok(true);
            }
            for child in self.graph.scripts_inserted_by(&next)? {
                if seen.insert(child.clone()) {
                    queue.push(child);
                }
            }
        }
        Ok(false)
    }
}

/// One-off classification without a shared memo table.
pub fn classify_script(
    g: &PageGraph,
    script: &NodeId,
    config: SafetyConfig,
) -> Result<ScriptSafety, GraphError> {
    SafetyAnalyzer::new(g, config).classify(script)
}

/// The blocking decision for one ad chain: the terminal resource is always
/// targeted; `highest_safe_script_url` is the furthest upstream script that
/// can be blocked with every link below it also safe.
#[derive(Debug, Clone)]
pub struct BlockPlan {
    pub terminal_url: Url,
    pub highest_safe_script_url: Option<Url>,
    pub chain: RequestChain,
    pub generated_rules: Vec<NetworkRule>,
}

/// Walks the chain upstream from the terminal, extending the candidate
/// while each link is safe and has a URL; stops at the first unsafe or
/// URL-less link.
pub fn highest_blockable(
    analyzer: &mut SafetyAnalyzer<'_>,
    chain: &RequestChain,
) -> Result<BlockPlan, GraphError> {
    let mut highest: Option<Url> = None;
    for link in &chain.links {
        let Some(url) = &link.script_url else {
            break;
        };
        let safety = analyzer.classify(&link.script_node)?;
        if safety.verdict == SafetyVerdict::Unsafe {
            break;
        }
        highest = Some(url.clone());
    }
    Ok(BlockPlan {
        terminal_url: chain.terminal.resource_url.clone(),
        highest_safe_script_url: highest,
        chain: chain.clone(),
        generated_rules: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abp::ResourceType;
    use crate::chains::build_chain;
    use crate::graph::builder::{Actor, GraphBuilder};
    use crate::test_fixtures::ad_chain_page;

    /// Page with `regions` parser-created divs and one script that inserts
    /// a span into each of the first `touched` of them.
    fn script_touching(regions: usize, touched: usize) -> (PageGraph, NodeId) {
        let mut b = GraphBuilder::for_page("https://site.example.com/");
        let body = b.element("body", &Actor::Parser, None);
        let divs: Vec<_> =
            (0..regions).map(|_| b.element("div", &Actor::Parser, Some(&body))).collect();
        let (_, script) = b.script_element(&Actor::Parser, Some(&body), None);
        for div in divs.iter().take(touched) {
            b.element("span", &Actor::Script(script.clone()), Some(div));
        }
        (b.build().unwrap(), script)
    }

    use crate::graph::PageGraph;

    #[test]
    fn subtree_boundary_two_is_safe_three_is_not() {
        for (touched, expected) in [
            (0, SafetyVerdict::Safe),
            (1, SafetyVerdict::Safe),
            (2, SafetyVerdict::Safe),
            (3, SafetyVerdict::Unsafe),
            (4, SafetyVerdict::Unsafe),
        ] {
            let (g, script) = script_touching(4, touched);
            let safety = classify_script(&g, &script, SafetyConfig::default()).unwrap();
            assert_eq!(safety.verdict, expected, "touched={touched}");
            assert_eq!(safety.subtree_count, touched);
            if expected == SafetyVerdict::Unsafe {
                assert_eq!(safety.reason, SafetyReason::SubtreeCountExceeded);
            }
        }
    }

    #[test]
    fn inserting_an_unsafe_script_is_unsafe_transitively() {
        // chain: outer inserts middle, middle inserts inner; inner touches 3 regions.
        let mut b = GraphBuilder::for_page("https://site.example.com/");
        let body = b.element("body", &Actor::Parser, None);
        let divs: Vec<_> = (0..3).map(|_| b.element("div", &Actor::Parser, Some(&body))).collect();
        let (_, outer) = b.script_element(&Actor::Parser, Some(&body), None);
        let (_, middle) =
            b.script_element(&Actor::Script(outer.clone()), Some(&divs[0]), None);
        let (_, inner) =
            b.script_element(&Actor::Script(middle.clone()), Some(&divs[0]), None);
        for div in &divs {
            b.element("span", &Actor::Script(inner.clone()), Some(div));
        }
        let g = b.build().unwrap();
        let mut analyzer = SafetyAnalyzer::new(&g, SafetyConfig::default());
        assert_eq!(analyzer.classify(&inner).unwrap().reason, SafetyReason::SubtreeCountExceeded);
        assert_eq!(analyzer.classify(&middle).unwrap().reason, SafetyReason::InsertsUnsafeScript);
        // Transitive: outer never directly inserts the unsafe script.
        assert_eq!(analyzer.classify(&outer).unwrap().reason, SafetyReason::InsertsUnsafeScript);
    }

    #[test]
    fn zero_modification_scripts_are_safe() {
        let mut b = GraphBuilder::for_page("https://site.example.com/");
        let body = b.element("body", &Actor::Parser, None);
        let (_, script) = b.script_element(&Actor::Parser, Some(&body), None);
        let g = b.build().unwrap();
        let safety = classify_script(&g, &script, SafetyConfig::default()).unwrap();
        assert_eq!(safety.verdict, SafetyVerdict::Safe);
        assert_eq!(safety.subtree_count, 0);
    }

    #[test]
    fn attribute_only_changes_do_not_create_subtrees() {
        let mut b = GraphBuilder::for_page("https://site.example.com/");
        let body = b.element("body", &Actor::Parser, None);
        let divs: Vec<_> = (0..4).map(|_| b.element("div", &Actor::Parser, Some(&body))).collect();
        let (_, script) = b.script_element(&Actor::Parser, Some(&body), None);
        for div in &divs {
            b.set_attribute(&Actor::Script(script.clone()), div, "class", "x");
        }
        let g = b.build().unwrap();
        let safety = classify_script(&g, &script, SafetyConfig::default()).unwrap();
        assert_eq!(safety.verdict, SafetyVerdict::Safe);
        assert_eq!(safety.subtree_count, 0);
    }

    #[test]
    fn ad_chain_plan_targets_image_and_script2_only() {
        let fx = ad_chain_page();
        let chain = build_chain(&fx.graph, &fx.image_element).unwrap();
        let mut analyzer = SafetyAnalyzer::new(&fx.graph, SafetyConfig::default());
        assert_eq!(analyzer.classify(&fx.script2).unwrap().verdict, SafetyVerdict::Safe);
        assert_eq!(analyzer.classify(&fx.script1).unwrap().verdict, SafetyVerdict::Unsafe);
        let plan = highest_blockable(&mut analyzer, &chain).unwrap();
        assert_eq!(plan.terminal_url.as_str(), fx.image_url);
        assert_eq!(
            plan.highest_safe_script_url.as_ref().map(|u| u.as_str()),
            Some(fx.script2_url)
        );
    }

    #[test]
    fn all_unsafe_chain_blocks_terminal_only() {
        let mut b = GraphBuilder::for_page("https://site.example.com/");
        let body = b.element("body", &Actor::Parser, None);
        let divs: Vec<_> = (0..3).map(|_| b.element("div", &Actor::Parser, Some(&body))).collect();
        let (_, script) =
            b.script_element(&Actor::Parser, Some(&body), Some("https://tags.adnet.net/t.js"));
        for div in &divs {
            b.element("span", &Actor::Script(script.clone()), Some(div));
        }
        let img = b.element("img", &Actor::Script(script.clone()), Some(&divs[0]));
        b.request(&img, "https://img.adnet.net/b.png", ResourceType::Image);
        let g = b.build().unwrap();
        let chain = build_chain(&g, &img).unwrap();
        let mut analyzer = SafetyAnalyzer::new(&g, SafetyConfig::default());
        let plan = highest_blockable(&mut analyzer, &chain).unwrap();
        assert_eq!(plan.highest_safe_script_url, None);
        assert_eq!(plan.terminal_url.as_str(), "https://img.adnet.net/b.png");
    }

    #[test]
    fn empty_chain_blocks_terminal_only() {
        let mut b = GraphBuilder::for_page("https://site.example.com/");
        let body = b.element("body", &Actor::Parser, None);
        let img = b.element("img", &Actor::Parser, Some(&body));
        b.request(&img, "https://img.adnet.net/b.png", ResourceType::Image);
        let g = b.build().unwrap();
        let chain = build_chain(&g, &img).unwrap();
        let mut analyzer = SafetyAnalyzer::new(&g, SafetyConfig::default());
        let plan = highest_blockable(&mut analyzer, &chain).unwrap();
        assert_eq!(plan.highest_safe_script_url, None);
    }

    #[test]
    fn url_less_link_stops_the_walk() {
        // inline (safe, no URL) sits between the image and an external
        // safe script; the walk cannot pass the inline link.
        let mut b = GraphBuilder::for_page("https://site.example.com/");
        let body = b.element("body", &Actor::Parser, None);
        let (_, outer) =
            b.script_element(&Actor::Parser, Some(&body), Some("https://tags.adnet.net/o.js"));
        let (_, inline) = b.script_element(&Actor::Script(outer.clone()), Some(&body), None);
        let img = b.element("img", &Actor::Script(inline.clone()), Some(&body));
        b.request(&img, "https://img.adnet.net/b.png", ResourceType::Image);
        let g = b.build().unwrap();
        let chain = build_chain(&g, &img).unwrap();
        assert_eq!(chain.links.len(), 2);
        let mut analyzer = SafetyAnalyzer::new(&g, SafetyConfig::default());
        let plan = highest_blockable(&mut analyzer, &chain).unwrap();
        assert_eq!(plan.highest_safe_script_url, None);
    }

    #[test]
    fn raising_subtree_count_never_adds_blockable_scripts() {
        // Same chain, middle script grows from 1 touched region to 3: the
        // plan's script target disappears rather than moving upstream.
        for (touched, expect_some) in [(1usize, true), (3usize, false)] {
            let mut b = GraphBuilder::for_page("https://site.example.com/");
            let body = b.element("body", &Actor::Parser, None);
            let divs: Vec<_> =
                (0..3).map(|_| b.element("div", &Actor::Parser, Some(&body))).collect();
            let (_, s) =
                b.script_element(&Actor::Parser, Some(&body), Some("https://tags.adnet.net/t.js"));
            for div in divs.iter().take(touched) {
                b.element("span", &Actor::Script(s.clone()), Some(div));
            }
            let img = b.element("img", &Actor::Script(s.clone()), Some(&divs[0]));
            b.request(&img, "https://img.adnet.net/b.png", ResourceType::Image);
            let g = b.build().unwrap();
            let chain = build_chain(&g, &img).unwrap();
            let mut analyzer = SafetyAnalyzer::new(&g, SafetyConfig::default());
            let plan = highest_blockable(&mut analyzer, &chain).unwrap();
            assert_eq!(plan.highest_safe_script_url.is_some(), expect_some);
        }
    }
}
