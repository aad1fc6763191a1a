//! Filter list parsing: one rule per line, EasyList distribution format.

use thiserror::Error;

use super::{Anchor, NetworkRule, PatternToken, ResourceType, RuleOptions, RuleSet, SkippedLine};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RuleParseError {
    #[error("empty pattern")]
    EmptyPattern,
    #[error("regex rules are not supported")]
    RegexUnsupported,
    #[error("empty option list")]
    EmptyOptions,
    #[error("unsupported option: {0}")]
    UnsupportedOption(String),
    #[error("empty domain= entry")]
    EmptyDomainEntry,
    #[error("domain-anchored pattern must start with literal text")]
    BadDomainAnchorPattern,
}

/// Parses `text` line by line into `set`, counting comments and cosmetic
/// rules and recording skipped lines. Never fails on malformed input.
pub(super) fn parse_into(set: &mut RuleSet, source: &str, text: &str) {
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('!') || (line.starts_with('[') && line.ends_with(']')) {
            set.stats.comments += 1;
            continue;
        }
        if is_cosmetic(line) {
            set.stats.cosmetic_rules += 1;
            continue;
        }
        match parse_network_rule(line) {
            Ok(rule) => set.push_rule(rule),
            Err(err) => set.stats.skipped.push(SkippedLine {
                source: source.to_string(),
                line_number: idx + 1,
                text: line.to_string(),
                reason: err.to_string(),
            }),
        }
    }
}

/// Cosmetic rules use `##`, `#@#`, `#?#` or `#$#` as the domain/selector
/// separator; none of these byte pairs occur in network rule patterns.
fn is_cosmetic(line: &str) -> bool {
    let bytes = line.as_bytes();
    bytes.windows(2).any(|w| {
        w[0] == b'#' && matches!(w[1], b'#' | b'@' | b'?' | b'$')
    })
}

/// Parses a single network rule line.
pub fn parse_network_rule(line: &str) -> Result<NetworkRule, RuleParseError> {
    let mut rest = line;
    let is_exception = if let Some(stripped) = rest.strip_prefix("@@") {
        rest = stripped;
        true
    } else {
        false
    };

    if rest.len() > 2 && rest.starts_with('/') && rest.ends_with('/') {
        return Err(RuleParseError::RegexUnsupported);
    }

    let (mut pattern_text, options) = match rest.rfind('$') {
        Some(i) => {
            let opts = &rest[i + 1..];
            if opts.is_empty() {
                return Err(RuleParseError::EmptyOptions);
            }
            (&rest[..i], parse_options(opts)?)
        }
        None => (rest, RuleOptions::default()),
    };

    let anchor = if let Some(stripped) = pattern_text.strip_prefix("||") {
        pattern_text = stripped;
        Anchor::Domain
    } else if let Some(stripped) = pattern_text.strip_prefix('|') {
        pattern_text = stripped;
        Anchor::Left
    } else {
        Anchor::None
    };
    let right_anchored = if let Some(stripped) = pattern_text.strip_suffix('|') {
        pattern_text = stripped;
        true
    } else {
        false
    };

    let pattern = tokenize(pattern_text);
    if pattern.is_empty() {
        return Err(RuleParseError::EmptyPattern);
    }
    if anchor == Anchor::Domain && !matches!(pattern.first(), Some(PatternToken::Literal(_))) {
        return Err(RuleParseError::BadDomainAnchorPattern);
    }

    Ok(NetworkRule {
        raw_text: line.to_string(),
        is_exception,
        anchor,
        right_anchored,
        right_rooted: false,
        pattern,
        options,
    })
}

fn tokenize(text: &str) -> Vec<PatternToken> {
    let mut tokens = Vec::new();
    let mut literal = String::new();
    for ch in text.chars() {
        match ch {
            '*' => {
                flush(&mut tokens, &mut literal);
                if !matches!(tokens.last(), Some(PatternToken::Wildcard)) {
                    tokens.push(PatternToken::Wildcard);
                }
            }
            '^' => {
                flush(&mut tokens, &mut literal);
                tokens.push(PatternToken::Separator);
            }
            _ => literal.extend(ch.to_lowercase()),
        }
    }
    flush(&mut tokens, &mut literal);
    tokens
}

fn flush(tokens: &mut Vec<PatternToken>, literal: &mut String) {
    if !literal.is_empty() {
        tokens.push(PatternToken::Literal(std::mem::take(literal)));
    }
}

fn parse_options(text: &str) -> Result<RuleOptions, RuleParseError> {
    let mut options = RuleOptions::default();
    for part in text.split(',') {
        let part = part.trim();
        let (negated, name) = match part.strip_prefix('~') {
            Some(rest) => (true, rest),
            None => (false, part),
        };
        if let Some(rt) = ResourceType::parse(&name.to_ascii_lowercase()) {
            if negated {
                options.exclude_types.push(rt);
            } else {
                options.include_types.push(rt);
            }
            continue;
        }
        match name.to_ascii_lowercase().as_str() {
            "third-party" | "3p" => options.third_party = Some(!negated),
            "first-party" | "1p" => options.third_party = Some(negated),
            _ if name.len() > 7
                && name.get(..7).is_some_and(|p| p.eq_ignore_ascii_case("domain=")) =>
            {
                if negated {
                    return Err(RuleParseError::UnsupportedOption(part.to_string()));
                }
                for entry in name[7..].split('|') {
                    let (excluded, domain) = match entry.strip_prefix('~') {
                        Some(rest) => (true, rest),
                        None => (false, entry),
                    };
                    if domain.is_empty() {
                        return Err(RuleParseError::EmptyDomainEntry);
                    }
                    let domain = domain.to_ascii_lowercase();
                    if excluded {
                        options.exclude_domains.push(domain);
                    } else {
                        options.include_domains.push(domain);
                    }
                }
            }
            _ => return Err(RuleParseError::UnsupportedOption(part.to_string())),
        }
    }
    options.include_types.sort_unstable();
    options.include_types.dedup();
    options.exclude_types.sort_unstable();
    options.exclude_types.dedup();
    options.include_domains.sort_unstable();
    options.include_domains.dedup();
    options.exclude_domains.sort_unstable();
    options.exclude_domains.dedup();
    Ok(options)
}
