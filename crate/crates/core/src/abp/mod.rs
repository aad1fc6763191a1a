//! AdBlock Plus network filter rules: parsing, matching, and generation.
//!
//! The supported dialect is the subset EasyList-style network rules need:
//! `||` and `|` anchors, `^` separators, `*` wildcards, `@@` exceptions,
//! and the `image`/`subdocument`/`script`/`other`, `third-party` and
//! `domain=` options. Cosmetic rules and comments are counted but not kept.

mod generate;
mod matcher;
mod parser;

pub use generate::{dedupe_rules, generate_rule, GenerateError};
pub use parser::{parse_network_rule, RuleParseError};

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use url::Url;

use crate::psl::PublicSuffixList;

/// Request resource classes distinguished by rule options and the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResourceType {
    Image,
    Subdocument,
    Script,
    Other,
}

impl ResourceType {
    pub fn as_str(&self) -> &'static str {
        match self {
            ResourceType::Image => "image",
            ResourceType::Subdocument => "subdocument",
            ResourceType::Script => "script",
            ResourceType::Other => "other",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "image" => Some(ResourceType::Image),
            "subdocument" => Some(ResourceType::Subdocument),
            "script" => Some(ResourceType::Script),
            "other" => Some(ResourceType::Other),
            _ => None,
        }
    }
}

impl fmt::Display for ResourceType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Left-edge anchoring of a rule pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Anchor {
    /// Pattern may match anywhere in the URL.
    None,
    /// `||`: pattern starts at a subdomain-label boundary of the host.
    Domain,
    /// `|`: pattern starts at the first byte of the URL.
    Left,
}

/// One element of a rule pattern.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PatternToken {
    /// Literal text, stored lowercase.
    Literal(String),
    /// `*`: any run of characters, including none.
    Wildcard,
    /// `^`: one separator character, or the end of the URL.
    Separator,
}

/// Option list attached to a rule after `$`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RuleOptions {
    pub include_types: Vec<ResourceType>,
    pub exclude_types: Vec<ResourceType>,
    pub third_party: Option<bool>,
    pub include_domains: Vec<String>,
    pub exclude_domains: Vec<String>,
}

impl RuleOptions {
    pub fn is_empty(&self) -> bool {
        self.include_types.is_empty()
            && self.exclude_types.is_empty()
            && self.third_party.is_none()
            && self.include_domains.is_empty()
            && self.exclude_domains.is_empty()
    }

    fn write_canonical(&self, out: &mut String) {
        if self.is_empty() {
            return;
        }
        let mut parts: Vec<String> = Vec::new();
        for t in &self.include_types {
            parts.push(t.as_str().to_string());
        }
        for t in &self.exclude_types {
            parts.push(format!("~{t}"));
        }
        match self.third_party {
            Some(true) => parts.push("third-party".to_string()),
            Some(false) => parts.push("~third-party".to_string()),
            None => {}
        }
        if !self.include_domains.is_empty() || !self.exclude_domains.is_empty() {
            let mut entries: Vec<String> =
                self.include_domains.iter().cloned().collect();
            entries.extend(self.exclude_domains.iter().map(|d| format!("~{d}")));
            parts.push(format!("domain={}", entries.join("|")));
        }
        out.push('$');
        out.push_str(&parts.join(","));
    }
}

/// A parsed network filter rule.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkRule {
    /// The line this rule was parsed from (or the generated text).
    pub raw_text: String,
    /// `@@` rules override blocking matches.
    pub is_exception: bool,
    pub anchor: Anchor,
    /// `|` at the right edge: pattern must reach the end of the URL.
    pub right_anchored: bool,
    /// Generated rules: match against the URL with query and fragment
    /// stripped, and require the pattern to reach the end of the path.
    pub right_rooted: bool,
    pub pattern: Vec<PatternToken>,
    pub options: RuleOptions,
}

impl NetworkRule {
    /// Canonical rule text; parsing it again yields an equivalent rule.
    pub fn canonical_text(&self) -> String {
        let mut s = String::new();
        if self.is_exception {
            s.push_str("@@");
        }
        match self.anchor {
            Anchor::Domain => s.push_str("||"),
            Anchor::Left => s.push('|'),
            Anchor::None => {}
        }
        for tok in &self.pattern {
            match tok {
                PatternToken::Literal(l) => s.push_str(l),
                PatternToken::Wildcard => s.push('*'),
                PatternToken::Separator => s.push('^'),
            }
        }
        if self.right_anchored {
            s.push('|');
        }
        self.options.write_canonical(&mut s);
        s
    }

    /// True when the rule's pattern, anchors, and options all match `req`.
    pub fn matches(&self, req: &RequestContext) -> bool {
        self.options_match(req) && self.pattern_matches(&req.match_target())
    }
}

impl fmt::Display for NetworkRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical_text())
    }
}

/// A line skipped during list parsing, with the reason.
#[derive(Debug, Clone, Serialize)]
pub struct SkippedLine {
    pub source: String,
    pub line_number: usize,
    pub text: String,
    pub reason: String,
}

/// Counters and diagnostics accumulated while parsing lists.
#[derive(Debug, Clone, Default, Serialize)]
pub struct ParseStats {
    pub network_rules: usize,
    pub comments: usize,
    pub cosmetic_rules: usize,
    pub skipped: Vec<SkippedLine>,
}

/// An immutable set of parsed rules with a token index for matching.
#[derive(Debug, Clone, Default)]
pub struct RuleSet {
    blocking: Vec<NetworkRule>,
    exceptions: Vec<NetworkRule>,
    source_names: Vec<String>,
    stats: ParseStats,
    blocking_index: matcher::RuleIndex,
    exception_index: matcher::RuleIndex,
}

impl RuleSet {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Parses one list. Malformed lines never abort the parse; they are
    /// recorded in [`ParseStats::skipped`].
    pub fn parse(text: &str) -> Self {
        Self::parse_sources([("<input>", text)])
    }

    pub fn parse_named(name: &str, text: &str) -> Self {
        Self::parse_sources([(name, text)])
    }

    /// Parses and combines several lists; rule order follows input order.
    pub fn parse_sources<'a, I>(sources: I) -> Self
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let mut set = RuleSet::default();
        for (name, text) in sources {
            set.source_names.push(name.to_string());
            parser::parse_into(&mut set, name, text);
        }
        set.rebuild_indexes();
        set
    }

    fn rebuild_indexes(&mut self) {
        self.blocking_index = matcher::RuleIndex::build(&self.blocking);
        self.exception_index = matcher::RuleIndex::build(&self.exceptions);
    }

    pub(crate) fn push_rule(&mut self, rule: NetworkRule) {
        if rule.is_exception {
            self.exceptions.push(rule);
        } else {
            self.blocking.push(rule);
        }
        self.stats.network_rules += 1;
    }

    pub fn blocking_rules(&self) -> &[NetworkRule] {
        &self.blocking
    }

    pub fn exception_rules(&self) -> &[NetworkRule] {
        &self.exceptions
    }

    pub fn source_names(&self) -> &[String] {
        &self.source_names
    }

    pub fn stats(&self) -> &ParseStats {
        &self.stats
    }

    pub fn len(&self) -> usize {
        self.blocking.len() + self.exceptions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Matches `req` against the set. Exception matches dominate blocking
    /// matches; the witness rule is the matching rule with the lowest
    /// list-order index.
    pub fn match_request(&self, req: &RequestContext) -> MatchVerdict<'_> {
        let target = req.match_target();
        if let Some(idx) = self.exception_index.first_match(&self.exceptions, req, &target) {
            return MatchVerdict::Excepted(&self.exceptions[idx]);
        }
        if let Some(idx) = self.blocking_index.first_match(&self.blocking, req, &target) {
            return MatchVerdict::Blocked(&self.blocking[idx]);
        }
        MatchVerdict::Unmatched
    }
}

/// Outcome of matching one request against a [`RuleSet`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MatchVerdict<'a> {
    Blocked(&'a NetworkRule),
    Excepted(&'a NetworkRule),
    Unmatched,
}

impl MatchVerdict<'_> {
    pub fn is_blocked(&self) -> bool {
        matches!(self, MatchVerdict::Blocked(_))
    }

    pub fn is_excepted(&self) -> bool {
        matches!(self, MatchVerdict::Excepted(_))
    }
}

#[derive(Debug, Error)]
pub enum RequestError {
    #[error("invalid url: {0}")]
    InvalidUrl(#[from] url::ParseError),
    #[error("url has no host: {0}")]
    NoHost(String),
}

/// A request to match rules against: the URL plus the context ABP option
/// matching needs (requesting frame origin and resource type).
#[derive(Debug, Clone)]
pub struct RequestContext {
    url: Url,
    url_lower: String,
    stripped_len: usize,
    host_start: usize,
    host_end: usize,
    source_origin: String,
    request_origin: String,
    third_party: bool,
    resource_type: ResourceType,
}

impl RequestContext {
    /// `source_origin` is the eTLD+1 of the requesting frame. The request's
    /// own eTLD+1 is derived from `psl`; hosts without a registrable domain
    /// fall back to the full host for third-party determination.
    pub fn new(
        url: &str,
        source_origin: &str,
        resource_type: ResourceType,
        psl: &PublicSuffixList,
    ) -> Result<Self, RequestError> {
        let parsed = Url::parse(url)?;
        Self::from_url(parsed, source_origin, resource_type, psl)
    }

    pub fn from_url(
        url: Url,
        source_origin: &str,
        resource_type: ResourceType,
        psl: &PublicSuffixList,
    ) -> Result<Self, RequestError> {
        let host = url
            .host_str()
            .ok_or_else(|| RequestError::NoHost(url.to_string()))?
            .to_string();
        let url_lower = url.as_str().to_ascii_lowercase();
        let (host_start, host_end) = matcher::host_span(&url_lower)
            .ok_or_else(|| RequestError::NoHost(url.to_string()))?;
        let stripped_len = url_lower
            .find(['?', '#'])
            .unwrap_or(url_lower.len());
        let request_origin = psl
            .registrable_domain(&host)
            .unwrap_or(&host)
            .to_ascii_lowercase();
        let source_origin = source_origin.to_ascii_lowercase();
        let third_party = request_origin != source_origin;
        Ok(Self {
            url,
            url_lower,
            stripped_len,
            host_start,
            host_end,
            source_origin,
            request_origin,
            third_party,
            resource_type,
        })
    }

    pub fn url(&self) -> &Url {
        &self.url
    }

    pub fn source_origin(&self) -> &str {
        &self.source_origin
    }

    pub fn request_origin(&self) -> &str {
        &self.request_origin
    }

    pub fn is_third_party(&self) -> bool {
        self.third_party
    }

    pub fn resource_type(&self) -> ResourceType {
        self.resource_type
    }

    pub(crate) fn match_target(&self) -> matcher::MatchTarget<'_> {
        matcher::MatchTarget {
            text: self.url_lower.as_bytes(),
            stripped_len: self.stripped_len,
            host_start: self.host_start,
            host_end: self.host_end,
        }
    }
}
