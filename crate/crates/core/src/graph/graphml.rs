//! GraphML serialization of page graphs.
//!
//! Declared attribute keys: graph `url`; node `node type`, `tag name`,
//! `url`; edge `edge type`, `timestamp`. Any other declared key is kept in
//! the node/edge attribute map (`parent`, `attr name`, `attr value`,
//! `resource type`, ...), so exports from richer instrumentation load
//! without schema changes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;
use url::Url;

use super::{EdgeId, EdgeKind, GraphEdge, GraphError, GraphNode, NodeId, NodeKind, PageGraph};

#[derive(Debug, Error)]
pub enum GraphmlError {
    #[error("input is not valid UTF-8: {0}")]
    Utf8(#[from] std::str::Utf8Error),
    #[error("xml parse error: {0}")]
    Xml(#[from] roxmltree::Error),
    #[error("missing <graphml> root element")]
    MissingRoot,
    #[error("missing <graph> element")]
    MissingGraph,
    #[error("graph is missing required data key '{0}'")]
    MissingGraphKey(&'static str),
    #[error("{element} '{id}' is missing required data key '{key}'")]
    MissingRequiredKey { element: &'static str, id: String, key: &'static str },
    #[error("node '{id}' has unknown node type '{value}'")]
    UnknownNodeKind { id: String, value: String },
    #[error("edge '{id}' has unknown edge type '{value}'")]
    UnknownEdgeKind { id: String, value: String },
    #[error("edge '{id}' has unparseable timestamp '{value}'")]
    BadTimestamp { id: String, value: String },
    #[error("node '{id}' has invalid url '{value}': {source}")]
    BadNodeUrl { id: String, value: String, source: url::ParseError },
    #[error("graph url '{value}' is invalid: {source}")]
    BadGraphUrl { value: String, source: url::ParseError },
    #[error("<{element}> is missing the '{attr}' attribute")]
    MissingXmlAttr { element: &'static str, attr: &'static str },
    #[error(transparent)]
    Validation(#[from] GraphError),
    #[error("io error reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

pub fn load_graphml_file(path: &Path) -> Result<PageGraph, GraphmlError> {
    let bytes = std::fs::read(path).map_err(|source| GraphmlError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_graphml(&bytes)
}

/// Parses and validates a serialized page graph.
pub fn load_graphml(bytes: &[u8]) -> Result<PageGraph, GraphmlError> {
    let text = std::str::from_utf8(bytes)?;
    let doc = roxmltree::Document::parse(text)?;
    let root = doc.root_element();
    if root.tag_name().name() != "graphml" {
        return Err(GraphmlError::MissingRoot);
    }

    // Key declarations: id -> (domain, attr.name).
    let mut keys: BTreeMap<&str, (&str, &str)> = BTreeMap::new();
    for key in root.children().filter(|c| c.tag_name().name() == "key") {
        if let (Some(id), Some(name)) = (key.attribute("id"), key.attribute("attr.name")) {
            keys.insert(id, (key.attribute("for").unwrap_or(""), name));
        }
    }
    fn resolve<'a>(keys: &BTreeMap<&'a str, (&'a str, &'a str)>, key_id: &'a str) -> &'a str {
        keys.get(key_id).map(|(_, name)| *name).unwrap_or(key_id)
    }

    let graph_el = root
        .children()
        .find(|c| c.tag_name().name() == "graph")
        .ok_or(GraphmlError::MissingGraph)?;

    let mut page_url: Option<Url> = None;
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    let mut anon_edge = 0usize;

    for child in graph_el.children().filter(|c| c.is_element()) {
        let data: BTreeMap<&str, String> = child
            .children()
            .filter(|c| c.tag_name().name() == "data")
            .filter_map(|d| {
                d.attribute("key")
                    .map(|k| (resolve(&keys, k), d.text().unwrap_or("").to_string()))
            })
            .collect();
        match child.tag_name().name() {
            "node" => {
                let id = child
                    .attribute("id")
                    .ok_or(GraphmlError::MissingXmlAttr { element: "node", attr: "id" })?
                    .to_string();
                let kind_text = data.get("node type").ok_or_else(|| {
                    GraphmlError::MissingRequiredKey {
                        element: "node",
                        id: id.clone(),
                        key: "node type",
                    }
                })?;
                let kind = NodeKind::parse(kind_text).ok_or_else(|| {
                    GraphmlError::UnknownNodeKind { id: id.clone(), value: kind_text.clone() }
                })?;
                let url = match data.get("url") {
                    Some(u) => Some(Url::parse(u).map_err(|source| GraphmlError::BadNodeUrl {
                        id: id.clone(),
                        value: u.clone(),
                        source,
                    })?),
                    None => None,
                };
                let attributes = data
                    .iter()
                    .filter(|(k, _)| !matches!(**k, "node type" | "tag name" | "url"))
                    .map(|(k, v)| (k.to_string(), v.clone()))
                    .collect();
                nodes.push(GraphNode {
                    id: NodeId(id),
                    kind,
                    tag_name: data.get("tag name").cloned(),
                    url,
                    attributes,
                });
            }
            "edge" => {
                let id = match child.attribute("id") {
                    Some(id) => id.to_string(),
                    None => {
                        anon_edge += 1;
                        format!("__edge{anon_edge}")
                    }
                };
                let source = child
                    .attribute("source")
                    .ok_or(GraphmlError::MissingXmlAttr { element: "edge", attr: "source" })?;
                let target = child
                    .attribute("target")
                    .ok_or(GraphmlError::MissingXmlAttr { element: "edge", attr: "target" })?;
                let kind_text = data.get("edge type").ok_or_else(|| {
                    GraphmlError::MissingRequiredKey {
                        element: "edge",
                        id: id.clone(),
                        key: "edge type",
                    }
                })?;
                let kind = EdgeKind::parse(kind_text).ok_or_else(|| {
                    GraphmlError::UnknownEdgeKind { id: id.clone(), value: kind_text.clone() }
                })?;
                let ts_text = data.get("timestamp").ok_or_else(|| {
                    GraphmlError::MissingRequiredKey {
                        element: "edge",
                        id: id.clone(),
                        key: "timestamp",
                    }
                })?;
                let timestamp = ts_text.parse::<u64>().map_err(|_| {
                    GraphmlError::BadTimestamp { id: id.clone(), value: ts_text.clone() }
                })?;
                let attributes = data
                    .iter()
                    .filter(|(k, _)| !matches!(**k, "edge type" | "timestamp"))
                    .map(|(k, v)| (k.to_string(), v.clone()))
                    .collect();
                edges.push(GraphEdge {
                    id: EdgeId(id),
                    kind,
                    from: NodeId(source.to_string()),
                    to: NodeId(target.to_string()),
                    timestamp,
                    attributes,
                });
            }
            "data" => {
                if let Some(k) = child.attribute("key") {
                    if resolve(&keys, k) == "url" {
                        let value = child.text().unwrap_or("").to_string();
                        page_url = Some(Url::parse(&value).map_err(|source| {
                            GraphmlError::BadGraphUrl { value, source }
                        })?);
                    }
                }
            }
            _ => {}
        }
    }

    let page_url = page_url.ok_or(GraphmlError::MissingGraphKey("url"))?;
    Ok(PageGraph::from_parts(page_url, nodes, edges)?)
}

impl PageGraph {
    /// Serializes the graph; `load_graphml` of the output reproduces an
    /// isomorphic graph.
    pub fn to_graphml(&self) -> String {
        // Stable key ids: fixed keys first, then extra attribute names.
        let mut node_attr_names: Vec<&str> = self
            .nodes()
            .flat_map(|n| n.attributes.keys().map(String::as_str))
            .collect();
        node_attr_names.sort_unstable();
        node_attr_names.dedup();
        let mut edge_attr_names: Vec<&str> = self
            .edges()
            .flat_map(|e| e.attributes.keys().map(String::as_str))
            .collect();
        edge_attr_names.sort_unstable();
        edge_attr_names.dedup();

        let mut out = String::new();
        out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
        out.push_str("<graphml xmlns=\"http://graphml.graphdrawing.org/xmlns\">\n");
        let mut key_ids: BTreeMap<(&'static str, String), String> = BTreeMap::new();
        let mut next_key = 0usize;
        let mut declare = |out: &mut String,
                           key_ids: &mut BTreeMap<(&'static str, String), String>,
                           domain: &'static str,
                           name: &str,
                           ty: &str| {
            let id = format!("d{next_key}");
            next_key += 1;
            let _ = writeln!(
                out,
                "  <key id=\"{id}\" for=\"{domain}\" attr.name=\"{}\" attr.type=\"{ty}\"/>",
                escape(name)
            );
            key_ids.insert((domain, name.to_string()), id);
        };
        declare(&mut out, &mut key_ids, "graph", "url", "string");
        declare(&mut out, &mut key_ids, "node", "node type", "string");
        declare(&mut out, &mut key_ids, "node", "tag name", "string");
        declare(&mut out, &mut key_ids, "node", "url", "string");
        declare(&mut out, &mut key_ids, "edge", "edge type", "string");
        declare(&mut out, &mut key_ids, "edge", "timestamp", "long");
        for name in &node_attr_names {
            declare(&mut out, &mut key_ids, "node", name, "string");
        }
        for name in &edge_attr_names {
            declare(&mut out, &mut key_ids, "edge", name, "string");
        }
        let key = |domain: &'static str, name: &str| key_ids[&(domain, name.to_string())].clone();

        out.push_str("  <graph edgedefault=\"directed\">\n");
        let _ = writeln!(
            out,
            "    <data key=\"{}\">{}</data>",
            key("graph", "url"),
            escape(self.page_url().as_str())
        );
        for node in self.nodes() {
            let _ = writeln!(out, "    <node id=\"{}\">", escape(&node.id.0));
            let _ = writeln!(
                out,
                "      <data key=\"{}\">{}</data>",
                key("node", "node type"),
                node.kind.as_str()
            );
            if let Some(tag) = &node.tag_name {
                let _ = writeln!(
                    out,
                    "      <data key=\"{}\">{}</data>",
                    key("node", "tag name"),
                    escape(tag)
                );
            }
            if let Some(url) = &node.url {
                let _ = writeln!(
                    out,
                    "      <data key=\"{}\">{}</data>",
                    key("node", "url"),
                    escape(url.as_str())
                );
            }
            for (name, value) in &node.attributes {
                let _ = writeln!(
                    out,
                    "      <data key=\"{}\">{}</data>",
                    key("node", name),
                    escape(value)
                );
            }
            out.push_str("    </node>\n");
        }
        for edge in self.edges() {
            let _ = writeln!(
                out,
                "    <edge id=\"{}\" source=\"{}\" target=\"{}\">",
                escape(&edge.id.0),
                escape(&edge.from.0),
                escape(&edge.to.0)
            );
            let _ = writeln!(
                out,
                "      <data key=\"{}\">{}</data>",
                key("edge", "edge type"),
                edge.kind.as_str()
            );
            let _ = writeln!(
                out,
                "      <data key=\"{}\">{}</data>",
                key("edge", "timestamp"),
                edge.timestamp
            );
            for (name, value) in &edge.attributes {
                let _ = writeln!(
                    out,
                    "      <data key=\"{}\">{}</data>",
                    key("edge", name),
                    escape(value)
                );
            }
            out.push_str("    </edge>\n");
        }
        out.push_str("  </graph>\n</graphml>\n");
        out
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(ch),
        }
    }
    out
}
