//! Request chains: for each ad image, frame or script, the ordered list of
//! scripts whose insertions caused it to load, nearest first.

use std::collections::HashSet;

use serde::Serialize;
use thiserror::Error;
use url::Url;

use crate::graph::{GraphError, Inserter, NodeId, PageGraph, ResourceRequestRecord};

#[derive(Debug, Error)]
pub enum ChainError {
    #[error("element {0} has no associated resource request")]
    NoRequest(NodeId),
    #[error("insertion cycle detected at script {0}")]
    Cycle(NodeId),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// How a chain link's script element entered the document.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkOrigin {
    Parser,
    Script,
    Unknown,
}

/// One upstream script in a chain. `script_url` is absent for inline
/// scripts, which cannot be targeted by a network rule.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainLink {
    pub script_node: NodeId,
    pub script_url: Option<Url>,
    pub inserted_by: LinkOrigin,
}

/// Downstream-to-upstream explanation of one resource's inclusion:
/// `links[0]` is the script that inserted the terminal element, each
/// following link inserted the previous one's script element.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RequestChain {
    pub terminal: ResourceRequestRecord,
    pub links: Vec<ChainLink>,
    pub diagnostics: Vec<String>,
}

impl RequestChain {
    /// JSON-lines record: terminal URL, ordered script URLs, diagnostics.
    pub fn to_json_line(&self) -> serde_json::Value {
        serde_json::json!({
            "terminal_url": self.terminal.resource_url.as_str(),
            "script_urls": self
                .links
                .iter()
                .map(|l| l.script_url.as_ref().map(|u| u.as_str().to_string()))
                .collect::<Vec<Option<String>>>(),
            "diagnostics": self.diagnostics,
        })
    }
}

/// Builds the request chain for `element` by repeatedly resolving who
/// inserted the current element: stop at the parser, otherwise append the
/// responsible script and continue from that script's own element.
pub fn build_chain(g: &PageGraph, element: &NodeId) -> Result<RequestChain, ChainError> {
    let terminal = g
        .resource_requests()
        .into_iter()
        .find(|r| &r.requester == element)
        .ok_or_else(|| ChainError::NoRequest(element.clone()))?;
    build_chain_for(g, element, terminal)
}

fn build_chain_for(
    g: &PageGraph,
    element: &NodeId,
    terminal: ResourceRequestRecord,
) -> Result<RequestChain, ChainError> {
    let mut links: Vec<ChainLink> = Vec::new();
    let mut diagnostics = Vec::new();
    let mut seen: HashSet<NodeId> = HashSet::new();
    let mut current = element.clone();
    loop {
        match g.inserter_of(&current)? {
            Inserter::Parser => {
                if let Some(last) = links.last_mut() {
                    last.inserted_by = LinkOrigin::Parser;
                }
                break;
            }
            Inserter::Unknown => {
                if let Some(last) = links.last_mut() {
                    last.inserted_by = LinkOrigin::Unknown;
                }
                diagnostics.push(format!("no insertion edge for element {current}"));
                break;
            }
            Inserter::Script(script) => {
                if !seen.insert(script.clone()) {
                    return Err(ChainError::Cycle(script));
                }
                if let Some(last) = links.last_mut() {
                    last.inserted_by = LinkOrigin::Script;
                }
                let script_url = g.node(&script).and_then(|n| n.url.clone());
                links.push(ChainLink {
                    script_node: script.clone(),
                    script_url,
                    // Filled in on the next round, when we learn how this
                    // script's element was inserted.
                    inserted_by: LinkOrigin::Unknown,
                });
                match g.script_element(&script) {
                    Some(el) => current = el,
                    None => {
                        diagnostics.push(format!("script {script} has no executing element"));
                        break;
                    }
                }
            }
        }
    }
    Ok(RequestChain { terminal, links, diagnostics })
}

/// Maps [`build_chain`] over `targets`, preserving input order and
/// isolating per-target failures.
pub fn build_all_chains(
    g: &PageGraph,
    targets: &[ResourceRequestRecord],
) -> Vec<Result<RequestChain, ChainError>> {
    targets
        .iter()
        .map(|record| build_chain_for(g, &record.requester, record.clone()))
        .collect()
}
