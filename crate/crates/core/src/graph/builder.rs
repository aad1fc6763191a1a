//! Programmatic construction of page graphs, used by the synthetic corpus
//! generator and by tests. The builder emits the same structures the
//! graphml loader produces and runs the same validation on `build()`.

use std::collections::BTreeMap;

use url::Url;

use super::{EdgeId, EdgeKind, GraphEdge, GraphError, GraphNode, NodeId, NodeKind, PageGraph};
use crate::abp::ResourceType;

/// Who performs a DOM operation.
#[derive(Debug, Clone)]
pub enum Actor {
    Parser,
    Script(NodeId),
}

impl Actor {
    fn node_id(&self, builder: &GraphBuilder) -> NodeId {
        match self {
            Actor::Parser => builder.parser.clone(),
            Actor::Script(id) => id.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GraphBuilder {
    page_url: Url,
    nodes: Vec<GraphNode>,
    edges: Vec<GraphEdge>,
    parser: NodeId,
    clock: u64,
    next_node: usize,
    next_edge: usize,
}

impl GraphBuilder {
    pub fn new(page_url: Url) -> Self {
        let mut b = GraphBuilder {
            page_url,
            nodes: Vec::new(),
            edges: Vec::new(),
            parser: NodeId(String::new()),
            clock: 0,
            next_node: 0,
            next_edge: 0,
        };
        b.parser = b.raw_node(NodeKind::Parser, None, None);
        b
    }

    /// Convenience for fixtures; panics on an invalid URL.
    pub fn for_page(page_url: &str) -> Self {
        Self::new(Url::parse(page_url).expect("valid page url"))
    }

    pub fn parser(&self) -> NodeId {
        self.parser.clone()
    }

    fn tick(&mut self) -> u64 {
        self.clock += 1;
        self.clock
    }

    /// Adds a node with no edges.
    pub fn raw_node(
        &mut self,
        kind: NodeKind,
        tag_name: Option<&str>,
        url: Option<&str>,
    ) -> NodeId {
        let id = NodeId(format!("n{}", self.next_node));
        self.next_node += 1;
        self.nodes.push(GraphNode {
            id: id.clone(),
            kind,
            tag_name: tag_name.map(str::to_string),
            url: url.map(|u| Url::parse(u).expect("valid node url")),
            attributes: BTreeMap::new(),
        });
        id
    }

    /// Adds an edge without any structural bookkeeping. Tests use this to
    /// assemble deliberately broken graphs.
    pub fn raw_edge(
        &mut self,
        kind: EdgeKind,
        from: &NodeId,
        to: &NodeId,
        attributes: &[(&str, &str)],
    ) -> EdgeId {
        let id = EdgeId(format!("e{}", self.next_edge));
        self.next_edge += 1;
        let timestamp = self.tick();
        self.edges.push(GraphEdge {
            id: id.clone(),
            kind,
            from: from.clone(),
            to: to.clone(),
            timestamp,
            attributes: attributes
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        });
        id
    }

    pub fn set_node_attr(&mut self, node: &NodeId, name: &str, value: &str) {
        if let Some(n) = self.nodes.iter_mut().find(|n| &n.id == node) {
            n.attributes.insert(name.to_string(), value.to_string());
        }
    }

    /// Creates and inserts an element. `parent` of `None` means the
    /// document root.
    pub fn element(&mut self, tag: &str, actor: &Actor, parent: Option<&NodeId>) -> NodeId {
        let node = self.raw_node(NodeKind::HtmlElement, Some(tag), None);
        let actor_id = actor.node_id(self);
        self.raw_edge(EdgeKind::CreateNode, &actor_id, &node, &[]);
        match parent {
            Some(p) => {
                let p = p.0.clone();
                self.raw_edge(EdgeKind::InsertNode, &actor_id, &node, &[("parent", &p)]);
            }
            None => {
                self.raw_edge(EdgeKind::InsertNode, &actor_id, &node, &[]);
            }
        }
        node
    }

    /// Registers a script executing from `element`. External scripts carry
    /// their fetched URL and a matching resource request.
    pub fn script(&mut self, element: &NodeId, url: Option<&str>) -> NodeId {
        if let Some(u) = url {
            self.request(element, u, ResourceType::Script);
        }
        let script = self.raw_node(NodeKind::Script, None, url);
        self.raw_edge(EdgeKind::Execute, element, &script, &[]);
        script
    }

    /// Creates+inserts a `<script>` element under `parent` and registers
    /// its script node in one step.
    pub fn script_element(
        &mut self,
        actor: &Actor,
        parent: Option<&NodeId>,
        url: Option<&str>,
    ) -> (NodeId, NodeId) {
        let element = self.element("script", actor, parent);
        let script = self.script(&element, url);
        (element, script)
    }

    /// Records a completed network request from `requester`.
    pub fn request(&mut self, requester: &NodeId, url: &str, rt: ResourceType) -> NodeId {
        self.request_with(requester, url, rt, true)
    }

    pub fn request_with(
        &mut self,
        requester: &NodeId,
        url: &str,
        rt: ResourceType,
        completed: bool,
    ) -> NodeId {
        let resource = self.raw_node(NodeKind::Resource, None, Some(url));
        self.raw_edge(
            EdgeKind::RequestStart,
            requester,
            &resource,
            &[("resource type", rt.as_str())],
        );
        let response = if completed {
            EdgeKind::RequestComplete
        } else {
            EdgeKind::RequestError
        };
        self.raw_edge(response, &resource, requester, &[]);
        resource
    }

    pub fn set_attribute(&mut self, actor: &Actor, node: &NodeId, name: &str, value: &str) {
        let actor_id = actor.node_id(self);
        self.raw_edge(
            EdgeKind::SetAttribute,
            &actor_id,
            node,
            &[("attr name", name), ("attr value", value)],
        );
    }

    pub fn remove(&mut self, actor: &Actor, node: &NodeId) {
        let actor_id = actor.node_id(self);
        self.raw_edge(EdgeKind::RemoveNode, &actor_id, node, &[]);
    }

    /// Re-insertion after removal; recorded as a modification, the first
    /// insertion keeps deciding the structural parent.
    pub fn reinsert(&mut self, actor: &Actor, node: &NodeId, parent: &NodeId) {
        let actor_id = actor.node_id(self);
        let p = parent.0.clone();
        self.raw_edge(EdgeKind::InsertNode, &actor_id, node, &[("parent", &p)]);
    }

    /// Adds a remote (cross-site) frame: a frame owner leaf carrying the
    /// frame's URL, with no local parser behind it.
    pub fn remote_frame(&mut self, actor: &Actor, parent: Option<&NodeId>, url: &str) -> NodeId {
        let owner = self.raw_node(NodeKind::FrameOwner, Some("iframe"), Some(url));
        let actor_id = actor.node_id(self);
        self.raw_edge(EdgeKind::CreateNode, &actor_id, &owner, &[]);
        match parent {
            Some(p) => {
                let p = p.0.clone();
                self.raw_edge(EdgeKind::InsertNode, &actor_id, &owner, &[("parent", &p)]);
            }
            None => {
                self.raw_edge(EdgeKind::InsertNode, &actor_id, &owner, &[]);
            }
        }
        owner
    }

    /// Adds a local child frame: a frame owner element plus its parser.
    pub fn local_frame(&mut self, actor: &Actor, parent: Option<&NodeId>) -> (NodeId, NodeId) {
        let owner = self.raw_node(NodeKind::FrameOwner, Some("iframe"), None);
        let actor_id = actor.node_id(self);
        self.raw_edge(EdgeKind::CreateNode, &actor_id, &owner, &[]);
        match parent {
            Some(p) => {
                let p = p.0.clone();
                self.raw_edge(EdgeKind::InsertNode, &actor_id, &owner, &[("parent", &p)]);
            }
            None => {
                self.raw_edge(EdgeKind::InsertNode, &actor_id, &owner, &[]);
            }
        }
        let parser = self.raw_node(NodeKind::Parser, None, None);
        self.raw_edge(EdgeKind::Structure, &owner, &parser, &[]);
        (owner, parser)
    }

    pub fn build(self) -> Result<PageGraph, GraphError> {
        PageGraph::from_parts(self.page_url, self.nodes, self.edges)
    }
}
