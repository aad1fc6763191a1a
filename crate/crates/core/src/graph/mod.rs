//! Page-execution graphs: a typed directed multigraph of one page's
//! elements, scripts, resources and frames, with the attribution queries
//! the rest of the pipeline is built on.

pub mod builder;
mod graphml;
mod queries;

pub use graphml::{load_graphml, load_graphml_file, GraphmlError};
pub use queries::{DegreeFeatures, Inserter, ResourceRequestRecord};

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use indexmap::IndexMap;
use serde::Serialize;
use thiserror::Error;
use url::Url;

/// Opaque node identifier, unique within one graph.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct NodeId(pub String);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Opaque edge identifier, unique within one graph.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct EdgeId(pub String);

impl fmt::Display for EdgeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Parser,
    HtmlElement,
    Script,
    Resource,
    FrameOwner,
    ExtensionPoint,
}

impl NodeKind {
    /// Vocabulary used in the graphml `node type` attribute.
    pub fn as_str(&self) -> &'static str {
        match self {
            NodeKind::Parser => "parser",
            NodeKind::HtmlElement => "html element",
            NodeKind::Script => "script",
            NodeKind::Resource => "resource",
            NodeKind::FrameOwner => "frame owner",
            NodeKind::ExtensionPoint => "extension point",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "parser" => Some(NodeKind::Parser),
            "html element" => Some(NodeKind::HtmlElement),
            "script" => Some(NodeKind::Script),
            "resource" => Some(NodeKind::Resource),
            "frame owner" => Some(NodeKind::FrameOwner),
            "extension point" => Some(NodeKind::ExtensionPoint),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    CreateNode,
    InsertNode,
    RemoveNode,
    SetAttribute,
    Execute,
    RequestStart,
    RequestComplete,
    RequestError,
    Structure,
}

impl EdgeKind {
    /// Vocabulary used in the graphml `edge type` attribute.
    pub fn as_str(&self) -> &'static str {
        match self {
            EdgeKind::CreateNode => "create node",
            EdgeKind::InsertNode => "insert node",
            EdgeKind::RemoveNode => "remove node",
            EdgeKind::SetAttribute => "set attribute",
            EdgeKind::Execute => "execute",
            EdgeKind::RequestStart => "request start",
            EdgeKind::RequestComplete => "request complete",
            EdgeKind::RequestError => "request error",
            EdgeKind::Structure => "structure",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "create node" => Some(EdgeKind::CreateNode),
            "insert node" => Some(EdgeKind::InsertNode),
            "remove node" => Some(EdgeKind::RemoveNode),
            "set attribute" => Some(EdgeKind::SetAttribute),
            "execute" => Some(EdgeKind::Execute),
            "request start" => Some(EdgeKind::RequestStart),
            "request complete" => Some(EdgeKind::RequestComplete),
            "request error" => Some(EdgeKind::RequestError),
            "structure" => Some(EdgeKind::Structure),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GraphNode {
    pub id: NodeId,
    pub kind: NodeKind,
    pub tag_name: Option<String>,
    pub url: Option<Url>,
    pub attributes: BTreeMap<String, String>,
}

#[derive(Debug, Clone)]
pub struct GraphEdge {
    pub id: EdgeId,
    pub kind: EdgeKind,
    pub from: NodeId,
    pub to: NodeId,
    /// Milliseconds since navigation start.
    pub timestamp: u64,
    pub attributes: BTreeMap<String, String>,
}

impl GraphEdge {
    /// Insertion point recorded on `insert node` edges.
    pub fn insert_parent(&self) -> Option<NodeId> {
        self.attributes.get("parent").map(|p| NodeId(p.clone()))
    }
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("duplicate node id {0}")]
    DuplicateNodeId(NodeId),
    #[error("duplicate edge id {0}")]
    DuplicateEdgeId(EdgeId),
    #[error("edge {edge} references missing node {node}")]
    MissingEndpoint { edge: EdgeId, node: NodeId },
    #[error("edge {edge} timestamp decreases relative to the previous edge")]
    TimestampRegression { edge: EdgeId },
    #[error("resource node {0} has no url")]
    MissingUrl(NodeId),
    #[error("html element node {0} has no tag name")]
    MissingTagName(NodeId),
    #[error("edge {edge} ({kind:?}) has invalid endpoint kinds {from:?} -> {to:?}")]
    BadEndpointKind { edge: EdgeId, kind: EdgeKind, from: NodeKind, to: NodeKind },
    #[error("insert edge {edge} names missing parent node {parent}")]
    InsertParentMissing { edge: EdgeId, parent: NodeId },
    #[error("graph has no parser node")]
    NoParser,
    #[error("graph has multiple unowned parser nodes: {0} and {1}")]
    MultipleTopParsers(NodeId, NodeId),
    #[error("parser node {0} is owned by multiple frame owners")]
    MultipleFrameOwners(NodeId),
    #[error("no such node: {0}")]
    NoSuchNode(NodeId),
    #[error("node {0} is not an html element or frame owner")]
    NotAnElement(NodeId),
    #[error("node {0} is not a script node")]
    NotAScript(NodeId),
    #[error("node {0} has conflicting create edges")]
    ConflictingCreators(NodeId),
}

/// Immutable, validated page-execution graph.
#[derive(Debug, Clone)]
pub struct PageGraph {
    page_url: Url,
    nodes: IndexMap<NodeId, GraphNode>,
    edges: IndexMap<EdgeId, GraphEdge>,
    outgoing: HashMap<NodeId, Vec<EdgeId>>,
    incoming: HashMap<NodeId, Vec<EdgeId>>,
    /// frame parser -> owning frame's parser (`None` for the top frame).
    frame_tree: BTreeMap<NodeId, Option<NodeId>>,
}

impl PageGraph {
    /// Assembles and validates a graph. Every load path (graphml, builder)
    /// funnels through here, so all invariants are checked exactly once.
    pub fn from_parts(
        page_url: Url,
        node_list: Vec<GraphNode>,
        edge_list: Vec<GraphEdge>,
    ) -> Result<Self, GraphError> {
        let mut nodes = IndexMap::with_capacity(node_list.len());
        for node in node_list {
            let id = node.id.clone();
            if nodes.insert(id.clone(), node).is_some() {
                return Err(GraphError::DuplicateNodeId(id));
            }
        }
        let mut edges = IndexMap::with_capacity(edge_list.len());
        let mut outgoing: HashMap<NodeId, Vec<EdgeId>> = HashMap::new();
        let mut incoming: HashMap<NodeId, Vec<EdgeId>> = HashMap::new();
        let mut last_timestamp = 0u64;
        for (i, edge) in edge_list.into_iter().enumerate() {
            for endpoint in [&edge.from, &edge.to] {
                if !nodes.contains_key(endpoint) {
                    return Err(GraphError::MissingEndpoint {
                        edge: edge.id.clone(),
                        node: endpoint.clone(),
                    });
                }
            }
            if i > 0 && edge.timestamp < last_timestamp {
                return Err(GraphError::TimestampRegression { edge: edge.id.clone() });
            }
            last_timestamp = edge.timestamp;
            outgoing.entry(edge.from.clone()).or_default().push(edge.id.clone());
            incoming.entry(edge.to.clone()).or_default().push(edge.id.clone());
            let id = edge.id.clone();
            if edges.insert(id.clone(), edge).is_some() {
                return Err(GraphError::DuplicateEdgeId(id));
            }
        }

        for node in nodes.values() {
            match node.kind {
                NodeKind::Resource if node.url.is_none() => {
                    return Err(GraphError::MissingUrl(node.id.clone()))
                }
                NodeKind::HtmlElement if node.tag_name.is_none() => {
                    return Err(GraphError::MissingTagName(node.id.clone()))
                }
                _ => {}
            }
        }

        for edge in edges.values() {
            let from = nodes[&edge.from].kind;
            let to = nodes[&edge.to].kind;
            if !endpoint_kinds_valid(edge.kind, from, to) {
                return Err(GraphError::BadEndpointKind {
                    edge: edge.id.clone(),
                    kind: edge.kind,
                    from,
                    to,
                });
            }
            if edge.kind == EdgeKind::InsertNode {
                if let Some(parent) = edge.insert_parent() {
                    if !nodes.contains_key(&parent) {
                        return Err(GraphError::InsertParentMissing {
                            edge: edge.id.clone(),
                            parent,
                        });
                    }
                }
            }
        }

        let mut graph = PageGraph {
            page_url,
            nodes,
            edges,
            outgoing,
            incoming,
            frame_tree: BTreeMap::new(),
        };
        graph.frame_tree = graph.validate_frames()?;
        Ok(graph)
    }

    /// Exactly one parser node must exist per frame: one unowned (top)
    /// parser, and each remaining parser owned by exactly one frame owner.
    fn validate_frames(&self) -> Result<BTreeMap<NodeId, Option<NodeId>>, GraphError> {
        let parsers: Vec<&NodeId> = self
            .nodes
            .values()
            .filter(|n| n.kind == NodeKind::Parser)
            .map(|n| &n.id)
            .collect();
        if parsers.is_empty() {
            return Err(GraphError::NoParser);
        }
        let mut tree = BTreeMap::new();
        let mut top: Option<&NodeId> = None;
        for parser in parsers {
            let owners: Vec<&GraphEdge> = self
                .edges_to(parser)
                .filter(|e| e.kind == EdgeKind::Structure)
                .collect();
            match owners.len() {
                0 => {
                    if let Some(existing) = top {
                        return Err(GraphError::MultipleTopParsers(
                            existing.clone(),
                            parser.clone(),
                        ));
                    }
                    top = Some(parser);
                    tree.insert(parser.clone(), None);
                }
                1 => {
                    let owner_frame = self.owning_parser(&owners[0].from);
                    tree.insert(parser.clone(), owner_frame);
                }
                _ => return Err(GraphError::MultipleFrameOwners(parser.clone())),
            }
        }
        if top.is_none() {
            return Err(GraphError::NoParser);
        }
        Ok(tree)
    }

    /// The parser of the frame a node belongs to, following creator edges.
    fn owning_parser(&self, node: &NodeId) -> Option<NodeId> {
        let mut current = node.clone();
        let mut hops = 0;
        loop {
            hops += 1;
            if hops > self.nodes.len() + 1 {
                return None;
            }
            let creator = self
                .edges_to(&current)
                .find(|e| e.kind == EdgeKind::CreateNode || e.kind == EdgeKind::InsertNode)?
                .from
                .clone();
            match self.nodes.get(&creator)?.kind {
                NodeKind::Parser => return Some(creator),
                NodeKind::Script => {
                    // Continue from the element that executed the script.
                    current = self
                        .edges_to(&creator)
                        .find(|e| e.kind == EdgeKind::Execute)?
                        .from
                        .clone();
                }
                _ => return None,
            }
        }
    }

    pub fn page_url(&self) -> &Url {
        &self.page_url
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn node(&self, id: &NodeId) -> Option<&GraphNode> {
        self.nodes.get(id)
    }

    pub fn edge(&self, id: &EdgeId) -> Option<&GraphEdge> {
        self.edges.get(id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &GraphNode> {
        self.nodes.values()
    }

    pub fn edges(&self) -> impl Iterator<Item = &GraphEdge> {
        self.edges.values()
    }

    pub fn edges_from(&self, node: &NodeId) -> impl Iterator<Item = &GraphEdge> {
        self.outgoing
            .get(node)
            .into_iter()
            .flatten()
            .map(|id| &self.edges[id])
    }

    pub fn edges_to(&self, node: &NodeId) -> impl Iterator<Item = &GraphEdge> {
        self.incoming
            .get(node)
            .into_iter()
            .flatten()
            .map(|id| &self.edges[id])
    }

    /// Frame parser nodes mapped to their parent frame's parser.
    pub fn frame_tree(&self) -> &BTreeMap<NodeId, Option<NodeId>> {
        &self.frame_tree
    }

    pub fn script_nodes(&self) -> impl Iterator<Item = &GraphNode> {
        self.nodes.values().filter(|n| n.kind == NodeKind::Script)
    }
}

fn endpoint_kinds_valid(kind: EdgeKind, from: NodeKind, to: NodeKind) -> bool {
    use EdgeKind::*;
    use NodeKind::*;
    let actor = matches!(from, Parser | Script | ExtensionPoint);
    let element = matches!(to, HtmlElement | FrameOwner);
    let requester = matches!(from, Parser | HtmlElement | Script | FrameOwner);
    match kind {
        CreateNode | InsertNode | RemoveNode | SetAttribute => actor && element,
        Execute => matches!(from, HtmlElement | FrameOwner) && to == Script,
        RequestStart => requester && to == Resource,
        RequestComplete | RequestError => {
            from == Resource && matches!(to, Parser | HtmlElement | Script | FrameOwner)
        }
        Structure => from == FrameOwner && to == Parser,
    }
}
