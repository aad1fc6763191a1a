//! Attribution queries over a loaded [`PageGraph`].

use std::collections::BTreeSet;

use serde::Serialize;
use url::Url;

use super::{EdgeId, EdgeKind, GraphError, NodeId, NodeKind, PageGraph};
use crate::abp::ResourceType;

/// Who put a node into the document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Inserter {
    Parser,
    Script(NodeId),
    /// No creation or insertion edge exists; callers record a diagnostic.
    Unknown,
}

/// One network request, derived from a `request start` edge.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResourceRequestRecord {
    pub edge_id: EdgeId,
    pub requester: NodeId,
    pub resource_node: NodeId,
    pub resource_url: Url,
    pub resource_type: ResourceType,
    pub start_time: u64,
    pub completed: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DegreeFeatures {
    pub in_degree: usize,
    pub out_degree: usize,
    pub total_degree: usize,
    pub parent_in_degree: usize,
    pub parent_out_degree: usize,
    pub parent_total_degree: usize,
    /// Mean total-degree over distinct graph neighbours; 0 with none.
    pub avg_degree_connectivity: f64,
    pub modified_by_script: bool,
    pub parent_modified_by_script: bool,
}

/// Identity of the document region an insertion lands in: the nearest
/// parser-created ancestor of the insertion point, or the document root.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum RegionKey {
    Node(NodeId),
    Root,
}

impl PageGraph {
    /// Resolves how element `n` entered the document. Creation edges take
    /// precedence; a node that was only ever inserted falls back to its
    /// first insertion edge. Conflicting create edges indicate corruption.
    pub fn inserter_of(&self, n: &NodeId) -> Result<Inserter, GraphError> {
        let node = self.node(n).ok_or_else(|| GraphError::NoSuchNode(n.clone()))?;
        if !matches!(node.kind, NodeKind::HtmlElement | NodeKind::FrameOwner) {
            return Err(GraphError::NotAnElement(n.clone()));
        }
        let mut creator: Option<&NodeId> = None;
        for edge in self.edges_to(n).filter(|e| e.kind == EdgeKind::CreateNode) {
            match creator {
                None => creator = Some(&edge.from),
                Some(existing) if existing != &edge.from => {
                    return Err(GraphError::ConflictingCreators(n.clone()))
                }
                Some(_) => {}
            }
        }
        let source = creator.or_else(|| {
            self.edges_to(n)
                .find(|e| e.kind == EdgeKind::InsertNode)
                .map(|e| &e.from)
        });
        Ok(match source {
            None => Inserter::Unknown,
            Some(id) => match self.node(id).map(|s| s.kind) {
                Some(NodeKind::Parser) => Inserter::Parser,
                Some(NodeKind::Script) => Inserter::Script(id.clone()),
                _ => Inserter::Unknown,
            },
        })
    }

    /// The insertion parent recorded on `n`'s first insertion edge.
    pub fn structural_parent(&self, n: &NodeId) -> Option<NodeId> {
        self.edges_to(n)
            .find(|e| e.kind == EdgeKind::InsertNode)
            .and_then(|e| e.insert_parent())
    }

    /// Number of distinct document subtrees script `s` inserted nodes into.
    /// A subtree is keyed by the nearest parser-created ancestor of the
    /// insertion point; attribute-only changes do not count.
    pub fn modified_subtree_count(&self, s: &NodeId) -> Result<usize, GraphError> {
        let node = self.node(s).ok_or_else(|| GraphError::NoSuchNode(s.clone()))?;
        if node.kind != NodeKind::Script {
            return Err(GraphError::NotAScript(s.clone()));
        }
        let mut regions: BTreeSet<RegionKey> = BTreeSet::new();
        for edge in self.edges_from(s).filter(|e| e.kind == EdgeKind::InsertNode) {
            regions.insert(self.insertion_region(edge.insert_parent()));
        }
        Ok(regions.len())
    }

    fn insertion_region(&self, parent: Option<NodeId>) -> RegionKey {
        let mut seen = BTreeSet::new();
        let mut current = match parent {
            Some(p) => p,
            None => return RegionKey::Root,
        };
        loop {
            if !seen.insert(current.clone()) {
                return RegionKey::Root;
            }
            if matches!(self.inserter_of(&current), Ok(Inserter::Parser)) {
                return RegionKey::Node(current);
            }
            match self.structural_parent(&current) {
                Some(next) => current = next,
                None => return RegionKey::Root,
            }
        }
    }

    /// Script nodes whose element was put into the document by `s`,
    /// directly. Order follows `s`'s outgoing edge order.
    pub fn scripts_inserted_by(&self, s: &NodeId) -> Result<Vec<NodeId>, GraphError> {
        let node = self.node(s).ok_or_else(|| GraphError::NoSuchNode(s.clone()))?;
        if node.kind != NodeKind::Script {
            return Err(GraphError::NotAScript(s.clone()));
        }
        let mut out = Vec::new();
        for edge in self
            .edges_from(s)
            .filter(|e| matches!(e.kind, EdgeKind::CreateNode | EdgeKind::InsertNode))
        {
            if !matches!(self.inserter_of(&edge.to), Ok(Inserter::Script(ref by)) if by == s) {
                continue;
            }
            for exec in self.edges_from(&edge.to).filter(|e| e.kind == EdgeKind::Execute) {
                if !out.contains(&exec.to) {
                    out.push(exec.to.clone());
                }
            }
        }
        Ok(out)
    }

    /// The element whose execution produced script node `s`.
    pub fn script_element(&self, s: &NodeId) -> Option<NodeId> {
        self.edges_to(s)
            .find(|e| e.kind == EdgeKind::Execute)
            .map(|e| e.from.clone())
    }

    /// One record per `request start` edge, ordered by timestamp then
    /// edge id. A request counts as completed only when the last response
    /// edge for the (resource, requester) pair is `request complete`.
    pub fn resource_requests(&self) -> Vec<ResourceRequestRecord> {
        let mut records: Vec<ResourceRequestRecord> = self
            .edges()
            .filter(|e| e.kind == EdgeKind::RequestStart)
            .map(|edge| {
                let resource = &self[&edge.to];
                let resource_type = edge
                    .attributes
                    .get("resource type")
                    .and_then(|s| ResourceType::parse(s))
                    .unwrap_or(ResourceType::Other);
                ResourceRequestRecord {
                    edge_id: edge.id.clone(),
                    requester: edge.from.clone(),
                    resource_node: edge.to.clone(),
                    resource_url: resource.url.clone().expect("validated at load"),
                    resource_type,
                    start_time: edge.timestamp,
                    completed: self.request_completed(&edge.to, &edge.from),
                }
            })
            .collect();
        records.sort_by(|a, b| {
            a.start_time.cmp(&b.start_time).then_with(|| a.edge_id.cmp(&b.edge_id))
        });
        records
    }

    fn request_completed(&self, resource: &NodeId, requester: &NodeId) -> bool {
        let mut last: Option<&EdgeKind> = None;
        for edge in self.edges_from(resource).filter(|e| {
            &e.to == requester
                && matches!(e.kind, EdgeKind::RequestComplete | EdgeKind::RequestError)
        }) {
            last = Some(&edge.kind);
        }
        last == Some(&EdgeKind::RequestComplete)
    }

    /// Degree-based structural features of `n` and its structural parent.
    pub fn node_degree_features(&self, n: &NodeId) -> Result<DegreeFeatures, GraphError> {
        if self.node(n).is_none() {
            return Err(GraphError::NoSuchNode(n.clone()));
        }
        let (in_degree, out_degree) = self.degrees(n);
        let neighbours: BTreeSet<&NodeId> = self
            .edges_to(n)
            .map(|e| &e.from)
            .chain(self.edges_from(n).map(|e| &e.to))
            .filter(|id| *id != n)
            .collect();
        let avg_degree_connectivity = if neighbours.is_empty() {
            0.0
        } else {
            let total: usize = neighbours
                .iter()
                .map(|id| {
                    let (i, o) = self.degrees(id);
                    i + o
                })
                .sum();
            total as f64 / neighbours.len() as f64
        };
        let mut features = DegreeFeatures {
            in_degree,
            out_degree,
            total_degree: in_degree + out_degree,
            avg_degree_connectivity,
            modified_by_script: self.modified_by_script(n),
            ..DegreeFeatures::default()
        };
        if let Some(parent) = self.structural_parent(n) {
            let (pi, po) = self.degrees(&parent);
            features.parent_in_degree = pi;
            features.parent_out_degree = po;
            features.parent_total_degree = pi + po;
            features.parent_modified_by_script = self.modified_by_script(&parent);
        }
        Ok(features)
    }

    fn degrees(&self, n: &NodeId) -> (usize, usize) {
        (self.edges_to(n).count(), self.edges_from(n).count())
    }

    fn modified_by_script(&self, n: &NodeId) -> bool {
        self.edges_to(n).any(|e| {
            matches!(
                e.kind,
                EdgeKind::SetAttribute | EdgeKind::InsertNode | EdgeKind::RemoveNode
            ) && self.node(&e.from).map(|s| s.kind) == Some(NodeKind::Script)
        })
    }

    /// Effective attribute value: the last `set attribute` edge wins,
    /// falling back to the node's static attribute map.
    pub fn effective_attr(&self, n: &NodeId, name: &str) -> Option<String> {
        let mut value: Option<String> = None;
        for edge in self.edges_to(n).filter(|e| e.kind == EdgeKind::SetAttribute) {
            if edge.attributes.get("attr name").map(String::as_str) == Some(name) {
                if let Some(v) = edge.attributes.get("attr value") {
                    value = Some(v.clone());
                }
            }
        }
        value.or_else(|| self.node(n)?.attributes.get(name).cloned())
    }
}

impl std::ops::Index<&NodeId> for PageGraph {
    type Output = super::GraphNode;

    fn index(&self, id: &NodeId) -> &Self::Output {
        self.node(id).expect("node id not in graph")
    }
}
