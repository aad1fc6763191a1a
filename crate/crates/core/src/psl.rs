//! Public Suffix List lookups for eTLD+1 (registrable domain) reduction.
//!
//! Parses the standard `public_suffix_list.dat` format: one rule per line,
//! `//` comments, `*.` wildcard labels and `!` exception rules. A trimmed
//! snapshot is bundled; any full upstream copy can be supplied instead.

use std::collections::HashSet;
use std::path::Path;

/// Parsed public suffix rules, ready for lookups.
#[derive(Debug, Clone)]
pub struct PublicSuffixList {
    exact: HashSet<String>,
    /// Suffix part after the `*.` label, e.g. `ck` for the rule `*.ck`.
    wildcards: HashSet<String>,
    /// Rule text with the leading `!` removed.
    exceptions: HashSet<String>,
}

const BUNDLED: &str = include_str!("../data/public_suffix_list.dat");

impl PublicSuffixList {
    /// Parses rules from `public_suffix_list.dat`-format text. Unparseable
    /// lines are ignored, matching how consumers of the list behave.
    pub fn parse(text: &str) -> Self {
        let mut exact = HashSet::new();
        let mut wildcards = HashSet::new();
        let mut exceptions = HashSet::new();
        for line in text.lines() {
            let rule = line.split_whitespace().next().unwrap_or("");
            if rule.is_empty() || rule.starts_with("//") {
                continue;
            }
            let rule = rule.to_ascii_lowercase();
            if let Some(rest) = rule.strip_prefix('!') {
                exceptions.insert(rest.to_string());
            } else if let Some(rest) = rule.strip_prefix("*.") {
                wildcards.insert(rest.to_string());
            } else {
                exact.insert(rule);
            }
        }
        Self { exact, wildcards, exceptions }
    }

    /// The snapshot compiled into the binary.
    pub fn bundled() -> Self {
        Self::parse(BUNDLED)
    }

    pub fn from_file(path: &Path) -> std::io::Result<Self> {
        Ok(Self::parse(&std::fs::read_to_string(path)?))
    }

    pub fn rule_count(&self) -> usize {
        self.exact.len() + self.wildcards.len() + self.exceptions.len()
    }

    /// Number of labels in the public suffix of `host`, or `None` when the
    /// host is not a valid domain name shape (empty labels etc.).
    fn suffix_label_count(&self, labels: &[String]) -> Option<usize> {
        let n = labels.len();
        if n == 0 || labels.iter().any(|l| l.is_empty()) {
            return None;
        }
        // Exception rules prevail over everything else.
        for start in 0..n {
            let candidate = labels[start..].join(".");
            if self.exceptions.contains(&candidate) {
                // The suffix is the exception rule minus its leftmost label.
                return Some(n - start - 1);
            }
        }
        let mut best = 0usize;
        for start in 0..n {
            let len = n - start;
            let candidate = labels[start..].join(".");
            if self.exact.contains(&candidate) {
                best = best.max(len);
            }
            if len >= 2 && self.wildcards.contains(&labels[start + 1..].join(".")) {
                best = best.max(len);
            }
        }
        if best == 0 {
            // Prevailing rule when nothing matches is "*": the rightmost label.
            best = 1;
        }
        Some(best)
    }

    /// The public suffix of `host`, as a slice of the input.
    pub fn public_suffix<'a>(&self, host: &'a str) -> Option<&'a str> {
        let host = host.strip_suffix('.').unwrap_or(host);
        let labels: Vec<String> =
            host.split('.').map(|l| l.to_ascii_lowercase()).collect();
        let count = self.suffix_label_count(&labels)?;
        Some(last_labels(host, count))
    }

    /// The registrable domain (eTLD+1) of `host`, as a slice of the input.
    /// `None` when the host *is* a public suffix or is not a valid domain.
    pub fn registrable_domain<'a>(&self, host: &'a str) -> Option<&'a str> {
        let host = host.strip_suffix('.').unwrap_or(host);
        let labels: Vec<String> =
            host.split('.').map(|l| l.to_ascii_lowercase()).collect();
        let count = self.suffix_label_count(&labels)?;
        if labels.len() <= count {
            return None;
        }
        Some(last_labels(host, count + 1))
    }

    /// True when `host` has labels below its registrable domain
    /// (e.g. `cdn.example.com` but not `example.com`).
    pub fn is_subdomain(&self, host: &str) -> bool {
        match self.registrable_domain(host) {
            Some(root) => host.strip_suffix('.').unwrap_or(host).len() > root.len(),
            None => false,
        }
    }
}

/// The suffix of `host` spanning its last `count` dot-separated labels.
fn last_labels(host: &str, count: usize) -> &str {
    let mut seen = 0;
    for (idx, byte) in host.bytes().enumerate().rev() {
        if byte == b'.' {
            seen += 1;
            if seen == count {
                return &host[idx + 1..];
            }
        }
    }
    host
}

#[cfg(test)]
mod tests {
    use super::*;

    fn psl() -> PublicSuffixList {
        PublicSuffixList::bundled()
    }

    #[test]
    fn simple_tld() {
        assert_eq!(psl().registrable_domain("example.com"), Some("example.com"));
        assert_eq!(psl().registrable_domain("a.good.example.com"), Some("example.com"));
        assert_eq!(psl().public_suffix("a.good.example.com"), Some("com"));
    }

    #[test]
    fn multi_label_suffix() {
        assert_eq!(
            psl().registrable_domain("cdn.ads.example.co.uk"),
            Some("example.co.uk")
        );
        assert_eq!(psl().public_suffix("example.co.uk"), Some("co.uk"));
    }

    #[test]
    fn bare_suffix_has_no_registrable_domain() {
        assert_eq!(psl().registrable_domain("co.uk"), None);
        assert_eq!(psl().registrable_domain("com"), None);
    }

    #[test]
    fn unknown_tld_uses_default_rule() {
        assert_eq!(psl().registrable_domain("example.zz"), Some("example.zz"));
        assert_eq!(psl().registrable_domain("a.b.example.zz"), Some("example.zz"));
        assert_eq!(psl().registrable_domain("zz"), None);
    }

    #[test]
    fn wildcard_and_exception() {
        // `*.ck` makes `anything.ck` a suffix, except `www.ck`.
        assert_eq!(psl().registrable_domain("foo.bar.ck"), Some("foo.bar.ck"));
        assert_eq!(psl().registrable_domain("bar.ck"), None);
        assert_eq!(psl().registrable_domain("www.ck"), Some("www.ck"));
        assert_eq!(psl().registrable_domain("a.www.ck"), Some("www.ck"));
    }

    #[test]
    fn private_section_rules_apply() {
        assert_eq!(psl().registrable_domain("user.github.io"), Some("user.github.io"));
        assert_eq!(psl().registrable_domain("a.user.github.io"), Some("user.github.io"));
    }

    #[test]
    fn invalid_hosts() {
        assert_eq!(psl().registrable_domain(""), None);
        assert_eq!(psl().registrable_domain("a..b"), None);
    }

    #[test]
    fn case_and_trailing_dot() {
        assert_eq!(psl().registrable_domain("WWW.Example.COM"), Some("Example.COM"));
        assert_eq!(psl().registrable_domain("example.com."), Some("example.com"));
    }

    #[test]
    fn subdomain_detection() {
        assert!(psl().is_subdomain("cdn.example.com"));
        assert!(!psl().is_subdomain("example.com"));
        assert!(!psl().is_subdomain("co.uk"));
        assert!(psl().is_subdomain("a.example.co.uk"));
    }
}
