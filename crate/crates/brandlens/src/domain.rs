//! Registrable-domain (eTLD+1) extraction against a bundled public-suffix
//! snapshot.
//!
//! The snapshot is vendored at `data/public_suffix_list.dat` and compiled in;
//! refreshing it is an explicit action (replace the file, or load a newer one
//! at runtime with [`PslList::parse`]). Determinism beats freshness here:
//! verdicts must be reproducible against a known list version.

use std::collections::HashSet;
use std::sync::OnceLock;

use thiserror::Error;
use url::Host;

/// The vendored public-suffix snapshot (publicsuffix.org, MPL 2.0).
const BUNDLED_SNAPSHOT: &str = include_str!("../data/public_suffix_list.dat");

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DomainError {
    #[error("invalid url {url:?}: {reason}")]
    InvalidUrl { url: String, reason: String },
}

/// Parsed public-suffix rules.
pub struct PslList {
    rules: HashSet<String>,
    exceptions: HashSet<String>,
}

fn label_to_ascii(label: &str) -> String {
    if label.is_ascii() {
        label.to_ascii_lowercase()
    } else {
        idna::domain_to_ascii(label).unwrap_or_else(|_| label.to_lowercase())
    }
}

impl PslList {
    /// Parses rules in the standard list format: one rule per line,
    /// `//` comments, `!` exceptions, `*` wildcard labels.
    pub fn parse(data: &str) -> Self {
        let mut rules = HashSet::new();
        let mut exceptions = HashSet::new();
        for line in data.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with("//") {
                continue;
            }
            let rule = line.split_whitespace().next().unwrap_or_default();
            let (target, exception) = match rule.strip_prefix('!') {
                Some(rest) => (rest, true),
                None => (rule, false),
            };
            let normalized: Vec<String> = target
                .split('.')
                .map(|l| {
                    if l == "*" {
                        l.to_string()
                    } else {
                        label_to_ascii(l)
                    }
                })
                .collect();
            let normalized = normalized.join(".");
            if exception {
                exceptions.insert(normalized);
            } else {
                rules.insert(normalized);
            }
        }
        Self { rules, exceptions }
    }

    /// The compiled-in snapshot, parsed once.
    pub fn bundled() -> &'static PslList {
        static LIST: OnceLock<PslList> = OnceLock::new();
        LIST.get_or_init(|| PslList::parse(BUNDLED_SNAPSHOT))
    }

    pub fn len(&self) -> usize {
        self.rules.len() + self.exceptions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty() && self.exceptions.is_empty()
    }

    /// eTLD+1 of a hostname, lowercased, or `None` when the host itself is a
    /// public suffix (or malformed, e.g. empty labels). Unlisted TLDs fall
    /// under the implicit `*` rule.
    pub fn registrable(&self, host: &str) -> Option<String> {
        let host = host.strip_suffix('.').unwrap_or(host);
        if host.is_empty() {
            return None;
        }
        let original: Vec<String> = host.split('.').map(|l| l.trim().to_lowercase()).collect();
        if original.iter().any(String::is_empty) {
            return None;
        }
        let ascii: Vec<String> = original.iter().map(|l| label_to_ascii(l)).collect();
        let n = ascii.len();

        let mut exception_len = None;
        let mut rule_len = None;
        for k in (1..=n).rev() {
            let exact = ascii[n - k..].join(".");
            if exception_len.is_none() && self.exceptions.contains(&exact) {
                exception_len = Some(k);
            }
            if rule_len.is_none() {
                let wildcard = k >= 2 && {
                    let tail = ascii[n - k + 1..].join(".");
                    self.rules.contains(&format!("*.{tail}"))
                };
                if self.rules.contains(&exact) || wildcard {
                    rule_len = Some(k);
                }
            }
        }

        let suffix_len = match (exception_len, rule_len) {
            // An exception rule's public suffix drops its leftmost label.
            (Some(k), _) => k - 1,
            (None, Some(k)) => k,
            (None, None) => 1,
        };
        if n > suffix_len {
            Some(original[n - suffix_len - 1..].join("."))
        } else {
            None
        }
    }
}

/// Registrable domain of an absolute URL.
///
/// IP-literal hosts are returned verbatim. A host that is itself a public
/// suffix is returned as-is rather than erroring, keeping the baseline
/// comparison total over odd inputs.
pub fn registrable_domain(url: &str, list: &PslList) -> Result<String, DomainError> {
    let parsed = url::Url::parse(url).map_err(|e| DomainError::InvalidUrl {
        url: url.to_string(),
        reason: e.to_string(),
    })?;
    let host = parsed.host().ok_or_else(|| DomainError::InvalidUrl {
        url: url.to_string(),
        reason: "no host component".into(),
    })?;
    match host {
        Host::Ipv4(_) | Host::Ipv6(_) => Ok(parsed.host_str().unwrap_or_default().to_string()),
        Host::Domain(domain) => Ok(list
            .registrable(domain)
            .unwrap_or_else(|| domain.to_lowercase())),
    }
}
