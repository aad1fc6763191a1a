//! Pattern matching for network rules, plus the token index used to avoid
//! scanning every rule per request.

use super::{Anchor, NetworkRule, PatternToken, RequestContext};

/// Lowercased URL text with precomputed spans.
pub(crate) struct MatchTarget<'a> {
    pub text: &'a [u8],
    /// Length with query and fragment removed.
    pub stripped_len: usize,
    pub host_start: usize,
    pub host_end: usize,
}

/// Locates the host within a serialized absolute URL. Returns `None` for
/// URLs without an authority component.
pub(crate) fn host_span(url: &str) -> Option<(usize, usize)> {
    let bytes = url.as_bytes();
    let scheme_end = url.find("://")?;
    let auth_start = scheme_end + 3;
    let auth_end = bytes[auth_start..]
        .iter()
        .position(|&b| matches!(b, b'/' | b'?' | b'#'))
        .map(|i| auth_start + i)
        .unwrap_or(bytes.len());
    let authority = &bytes[auth_start..auth_end];
    let host_start = match authority.iter().rposition(|&b| b == b'@') {
        Some(at) => auth_start + at + 1,
        None => auth_start,
    };
    let host_end = if bytes.get(host_start) == Some(&b'[') {
        // Bracketed IPv6 literal; port comes after the closing bracket.
        bytes[host_start..auth_end]
            .iter()
            .position(|&b| b == b']')
            .map(|i| host_start + i + 1)
            .unwrap_or(auth_end)
    } else {
        match bytes[host_start..auth_end].iter().rposition(|&b| b == b':') {
            Some(colon) => host_start + colon,
            None => auth_end,
        }
    };
    if host_start >= host_end {
        return None;
    }
    Some((host_start, host_end))
}

fn is_separator_byte(b: u8) -> bool {
    !(b.is_ascii_alphanumeric() || matches!(b, b'_' | b'-' | b'.' | b'%'))
}

/// Matches `tokens` against `text` starting at `pos`. A trailing `^` also
/// matches the end of the URL.
fn match_tokens(tokens: &[PatternToken], text: &[u8], pos: usize, require_end: bool) -> bool {
    match tokens.first() {
        None => !require_end || pos == text.len(),
        Some(PatternToken::Literal(lit)) => {
            text[pos..].starts_with(lit.as_bytes())
                && match_tokens(&tokens[1..], text, pos + lit.len(), require_end)
        }
        Some(PatternToken::Separator) => {
            if pos == text.len() {
                match_tokens(&tokens[1..], text, pos, require_end)
            } else if is_separator_byte(text[pos]) {
                match_tokens(&tokens[1..], text, pos + 1, require_end)
            } else {
                false
            }
        }
        Some(PatternToken::Wildcard) => {
            (pos..=text.len()).any(|p| match_tokens(&tokens[1..], text, p, require_end))
        }
    }
}

impl NetworkRule {
    pub(super) fn options_match(&self, req: &RequestContext) -> bool {
        let o = &self.options;
        if !o.include_types.is_empty() && !o.include_types.contains(&req.resource_type) {
            return false;
        }
        if o.exclude_types.contains(&req.resource_type) {
            return false;
        }
        if let Some(tp) = o.third_party {
            if req.third_party != tp {
                return false;
            }
        }
        if !o.include_domains.is_empty()
            && !o.include_domains.iter().any(|d| domain_covers(d, &req.source_origin))
        {
            return false;
        }
        if o.exclude_domains.iter().any(|d| domain_covers(d, &req.source_origin)) {
            return false;
        }
        true
    }

    pub(crate) fn pattern_matches(&self, target: &MatchTarget<'_>) -> bool {
        let end = if self.right_rooted {
            target.stripped_len
        } else {
            target.text.len()
        };
        let text = &target.text[..end];
        let require_end = self.right_anchored || self.right_rooted;
        match self.anchor {
            Anchor::Left => match_tokens(&self.pattern, text, 0, require_end),
            Anchor::Domain => {
                let start = target.host_start.min(text.len());
                let stop = target.host_end.min(text.len());
                (start..stop)
                    .filter(|&i| i == start || text[i - 1] == b'.')
                    .any(|i| match_tokens(&self.pattern, text, i, require_end))
            }
            Anchor::None => {
                (0..=text.len()).any(|i| match_tokens(&self.pattern, text, i, require_end))
            }
        }
    }

    pub(crate) fn matches_prepared(&self, req: &RequestContext, target: &MatchTarget<'_>) -> bool {
        self.options_match(req) && self.pattern_matches(target)
    }
}

/// `domain=` entries cover the origin itself and its subdomains.
fn domain_covers(entry: &str, origin: &str) -> bool {
    origin == entry
        || origin
            .strip_suffix(entry)
            .is_some_and(|prefix| prefix.ends_with('.'))
}

/// Maps rules to a distinguishing alphanumeric token so that matching only
/// evaluates rules whose token occurs in the URL. Rules without a safe
/// token land in a catch-all bucket that is always evaluated.
#[derive(Debug, Clone, Default)]
pub(crate) struct RuleIndex {
    buckets: std::collections::HashMap<String, Vec<u32>>,
    untokenized: Vec<u32>,
}

impl RuleIndex {
    pub(crate) fn build(rules: &[NetworkRule]) -> Self {
        let mut index = RuleIndex::default();
        for (i, rule) in rules.iter().enumerate() {
            match index_token(rule) {
                Some(tok) => index.buckets.entry(tok).or_default().push(i as u32),
                None => index.untokenized.push(i as u32),
            }
        }
        index
    }

    /// Index of the first rule (in list order) that matches, if any.
    pub(crate) fn first_match(
        &self,
        rules: &[NetworkRule],
        req: &RequestContext,
        target: &MatchTarget<'_>,
    ) -> Option<usize> {
        let mut candidates: Vec<u32> = self.untokenized.clone();
        for token in url_tokens(target.text) {
            if let Some(bucket) = self.buckets.get(token) {
                candidates.extend_from_slice(bucket);
            }
        }
        candidates.sort_unstable();
        candidates.dedup();
        candidates
            .into_iter()
            .map(|i| i as usize)
            .find(|&i| rules[i].matches_prepared(req, target))
    }
}

/// Maximal alphanumeric runs of `text`, as &str slices.
fn url_tokens(text: &[u8]) -> impl Iterator<Item = &str> {
    text.split(|b| !b.is_ascii_alphanumeric())
        .filter(|run| !run.is_empty())
        .map(|run| std::str::from_utf8(run).unwrap_or(""))
}

/// Picks the longest token of `rule`'s pattern that is guaranteed to appear
/// as a maximal alphanumeric run in every URL the rule matches. Tokens at
/// a literal's edge only qualify when the neighbouring token or anchor
/// guarantees a non-alphanumeric boundary in the URL.
fn index_token(rule: &NetworkRule) -> Option<String> {
    let mut best: Option<&str> = None;
    for (ti, token) in rule.pattern.iter().enumerate() {
        let PatternToken::Literal(lit) = token else {
            continue;
        };
        let bytes = lit.as_bytes();
        let mut run_start = None;
        for i in 0..=bytes.len() {
            let alnum = i < bytes.len() && bytes[i].is_ascii_alphanumeric();
            match (run_start, alnum) {
                (None, true) => run_start = Some(i),
                (Some(start), false) => {
                    run_start = None;
                    let left_ok = if start > 0 {
                        true // bounded by a non-alphanumeric literal byte
                    } else if ti > 0 {
                        matches!(rule.pattern[ti - 1], PatternToken::Separator)
                    } else {
                        rule.anchor != Anchor::None
                    };
                    let right_ok = if i < bytes.len() {
                        true
                    } else if ti + 1 < rule.pattern.len() {
                        matches!(rule.pattern[ti + 1], PatternToken::Separator)
                    } else {
                        rule.right_anchored || rule.right_rooted
                    };
                    if left_ok && right_ok {
                        let run = &lit[start..i];
                        if best.is_none_or(|b| run.len() > b.len()) {
                            best = Some(run);
                        }
                    }
                }
                _ => {}
            }
        }
    }
    best.map(str::to_string)
}
