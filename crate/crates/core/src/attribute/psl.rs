//! Public suffix list matching with wildcard and exception rules.

use std::collections::HashSet;
use std::io::{BufRead, BufReader, Read};

use super::AttributeError;

#[derive(Debug, Clone, Default)]
pub struct PublicSuffixList {
    normal: HashSet<String>,
    // Keyed by the part after `*.`.
    wildcard: HashSet<String>,
    // Keyed by the rule without `!`.
    exception: HashSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Registrable {
    pub sld: String,
    pub etld: String,
    /// False when only the implicit `*` rule matched.
    pub listed: bool,
}

impl PublicSuffixList {
    /// Parses the standard list format: `//` comments, one rule per line,
    /// only the first whitespace-delimited token counts.
    pub fn parse<R: Read>(input: R) -> Result<Self, AttributeError> {
        let mut psl = Self::default();
        for line in BufReader::new(input).lines() {
            let line = line.map_err(|e| AttributeError::Io(e.to_string()))?;
            let Some(rule) = line.split_whitespace().next() else {
                continue;
            };
            if rule.starts_with("//") {
                continue;
            }
            psl.add_rule(rule);
        }
        Ok(psl)
    }

    pub fn from_rules<'a>(rules: impl IntoIterator<Item = &'a str>) -> Self {
        let mut psl = Self::default();
        for r in rules {
            psl.add_rule(r);
        }
        psl
    }

    fn add_rule(&mut self, rule: &str) {
        let rule = rule.trim_matches('.').to_lowercase();
        if let Some(rest) = rule.strip_prefix('!') {
            self.exception.insert(rest.to_owned());
        } else if let Some(rest) = rule.strip_prefix("*.") {
            self.wildcard.insert(rest.to_owned());
        } else if !rule.is_empty() {
            self.normal.insert(rule);
        }
    }

    pub fn len(&self) -> usize {
        self.normal.len() + self.wildcard.len() + self.exception.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of trailing labels forming the public suffix, and whether a
    /// listed rule (rather than the implicit `*`) produced it.
    fn suffix_labels(&self, labels: &[&str]) -> (usize, bool) {
        let n = labels.len();
        let tail = |i: usize| labels[i..].join(".");
        for i in 0..n {
            if self.exception.contains(&tail(i)) {
                return (n - i - 1, true);
            }
        }
        for i in 0..n {
            let wild = i + 1 < n && self.wildcard.contains(&tail(i + 1));
            if wild || self.normal.contains(&tail(i)) {
                return (n - i, true);
            }
        }
        (1, false)
    }

    /// Splits a lowercase dotted host into its registrable domain and
    /// public suffix. Hosts that are themselves a public suffix have no
    /// registrable domain.
    pub fn sld_etld(&self, host: &str) -> Result<Registrable, AttributeError> {
        let labels: Vec<&str> = host.split('.').collect();
        if labels.iter().any(|l| l.is_empty()) {
            return Err(AttributeError::MalformedHost(host.to_owned()));
        }
        let (k, listed) = self.suffix_labels(&labels);
        if k >= labels.len() {
            return Err(AttributeError::HostIsPublicSuffix(host.to_owned()));
        }
        let n = labels.len();
        Ok(Registrable {
            sld: labels[n - k - 1..].join("."),
            etld: labels[n - k..].join("."),
            listed,
        })
    }
}
