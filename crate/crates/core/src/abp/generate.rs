//! Rule generation: reduce a blockable URL to a domain-anchored,
//! right-rooted rule.

use thiserror::Error;
use url::Url;

use super::{Anchor, NetworkRule, PatternToken, RuleOptions};
use crate::psl::PublicSuffixList;

#[derive(Debug, Error)]
pub enum GenerateError {
    #[error("invalid url: {0}")]
    InvalidUrl(#[from] url::ParseError),
    #[error("url has no host: {0}")]
    NoHost(String),
    #[error("host is an IP literal, no eTLD+1 exists: {0}")]
    IpHost(String),
    #[error("host has no registrable domain: {0}")]
    NoRegistrableDomain(String),
    #[error("path contains filter metacharacters: {0}")]
    UnsupportedPathChars(String),
}

/// Builds the blocking rule for `url`: the host reduced to its eTLD+1 root,
/// query, fragment and protocol stripped, emitted as `||<eTLD+1><path>`.
/// The rule matches candidate URLs with their query and fragment ignored.
pub fn generate_rule(url: &str, psl: &PublicSuffixList) -> Result<NetworkRule, GenerateError> {
    let parsed = Url::parse(url)?;
    let host = match parsed.host() {
        Some(url::Host::Domain(d)) => d.to_string(),
        Some(_) => return Err(GenerateError::IpHost(url.to_string())),
        None => return Err(GenerateError::NoHost(url.to_string())),
    };
    let root = psl
        .registrable_domain(&host)
        .ok_or_else(|| GenerateError::NoRegistrableDomain(host.clone()))?;
    let path = parsed.path().to_ascii_lowercase();
    // `*`, `^`, `|` and `$` pass through URL serialization unescaped but
    // change meaning inside a rule; such URLs cannot be targeted textually.
    if path.bytes().any(|b| matches!(b, b'*' | b'^' | b'|' | b'$')) {
        return Err(GenerateError::UnsupportedPathChars(url.to_string()));
    }
    let pattern_text = format!("{root}{path}");
    Ok(NetworkRule {
        raw_text: format!("||{pattern_text}"),
        is_exception: false,
        anchor: Anchor::Domain,
        right_anchored: false,
        right_rooted: true,
        pattern: vec![PatternToken::Literal(pattern_text)],
        options: RuleOptions::default(),
    })
}

/// Drops canonical-text duplicates, keeping first occurrences in order.
pub fn dedupe_rules(rules: Vec<NetworkRule>) -> Vec<NetworkRule> {
    let mut seen = std::collections::HashSet::new();
    rules
        .into_iter()
        .filter(|r| seen.insert(r.canonical_text()))
        .collect()
}
