//! Application-layer drop rules: a flat list of (name, reason, predicate).

use std::io::{BufRead, BufReader, Read};

use super::record::SessionRecord;
use super::FunnelError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Predicate {
    /// ASCII case-insensitive substring of the payload prefix. Stored lowercase.
    SubstringCi(Vec<u8>),
    /// Prefix of the HTTP user agent.
    UaPrefix(String),
    PortEq(u16),
    /// Payload starts with these bytes.
    Magic(Vec<u8>),
    HttpMethod(String),
    /// ASCII case-insensitive prefix of the HTTP request path.
    PathPrefixCi(String),
    /// Destination port plus a first-byte sanity check on the payload.
    PortPayload {
        port: u16,
        leading: Vec<Vec<u8>>,
        min_len: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rule {
    pub name: String,
    pub reason: String,
    pub predicate: Predicate,
}

impl Rule {
    fn builtin(name: &str, reason: &str, predicate: Predicate) -> Self {
        Self {
            name: name.to_owned(),
            reason: reason.to_owned(),
            predicate,
        }
    }
}

const BITCOIN_MAGICS: &[[u8; 4]] = &[
    [0xf9, 0xbe, 0xb4, 0xd9], // mainnet
    [0x0b, 0x11, 0x09, 0x07], // testnet3
    [0x0a, 0x03, 0xcf, 0x40], // signet
    [0xfa, 0xbf, 0xb5, 0xda], // regtest
];

// Packet type byte of a TDS header.
const TDS_TYPES: &[u8] = &[0x01, 0x03, 0x07, 0x0e, 0x10, 0x12, 0x17];

pub fn builtin_rules() -> Vec<Rule> {
    use Predicate::*;
    let mut rules = Vec::new();
    for marker in ["wget", "curl", "chmod", "shell"] {
        rules.push(Rule::builtin(marker, "shellcode", SubstringCi(marker.into())));
    }
    rules.push(Rule::builtin(
        "dnp3",
        "legacy_protocol",
        PortPayload {
            port: 20000,
            leading: vec![vec![0x05, 0x64]],
            min_len: 2,
        },
    ));
    rules.push(Rule::builtin(
        "tds",
        "legacy_protocol",
        PortPayload {
            port: 1433,
            leading: TDS_TYPES.iter().map(|&b| vec![b]).collect(),
            min_len: 8,
        },
    ));
    let mut bt = vec![0x13];
    bt.extend_from_slice(b"BitTorrent protocol");
    rules.push(Rule::builtin("bittorrent", "p2p", Magic(bt)));
    for magic in BITCOIN_MAGICS {
        rules.push(Rule::builtin("bitcoin", "p2p", Magic(magic.to_vec())));
    }
    // multistream-select handshake: varint length 0x13 then the protocol id.
    let mut ipfs = vec![0x13];
    ipfs.extend_from_slice(b"/multistream/1.0.0\n");
    rules.push(Rule::builtin("ipfs", "p2p", Magic(ipfs)));
    rules.push(Rule::builtin("connect", "proxy", HttpMethod("CONNECT".into())));
    rules.push(Rule::builtin("absolute_uri", "proxy", PathPrefixCi("http://".into())));
    rules.push(Rule::builtin("absolute_uri", "proxy", PathPrefixCi("https://".into())));
    rules.push(Rule::builtin(
        "route53",
        "healthcheck",
        UaPrefix("Amazon-Route53-Health-Check-Service".into()),
    ));
    rules
}

fn contains_ci(haystack: &[u8], needle_lower: &[u8]) -> bool {
    if needle_lower.is_empty() {
        return true;
    }
    haystack
        .windows(needle_lower.len())
        .any(|w| w.eq_ignore_ascii_case(needle_lower))
}

impl Predicate {
    pub fn matches(&self, s: &SessionRecord, http: Option<&super::HttpHints>) -> bool {
        let payload = &s.payload_prefix;
        match self {
            Predicate::SubstringCi(needle) => contains_ci(payload, needle),
            Predicate::UaPrefix(prefix) => http
                .and_then(|h| h.user_agent.as_deref())
                .is_some_and(|ua| ua.starts_with(prefix.as_str())),
            Predicate::PortEq(port) => s.dst_port == *port,
            Predicate::Magic(magic) => payload.starts_with(magic),
            Predicate::HttpMethod(m) => http.is_some_and(|h| h.method.eq_ignore_ascii_case(m)),
            Predicate::PathPrefixCi(p) => http.is_some_and(|h| {
                h.path.len() >= p.len() && h.path.as_bytes()[..p.len()].eq_ignore_ascii_case(p.as_bytes())
            }),
            Predicate::PortPayload {
                port,
                leading,
                min_len,
            } => {
                s.dst_port == *port
                    && payload.len() >= *min_len
                    && leading.iter().any(|l| payload.starts_with(l))
            }
        }
    }
}

/// Built-in rules followed by user rules, checked in order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleSet {
    pub rules: Vec<Rule>,
}

impl Default for RuleSet {
    fn default() -> Self {
        Self {
            rules: builtin_rules(),
        }
    }
}

impl RuleSet {
    pub fn builtin() -> Self {
        Self::default()
    }

    pub fn empty() -> Self {
        Self { rules: Vec::new() }
    }

    /// Appends rules from `name<TAB>kind<TAB>pattern` lines. Lines starting
    /// with `#` are comments. A user rule's reason is its name.
    pub fn extend_from_reader<R: Read>(&mut self, input: R) -> Result<(), FunnelError> {
        for (i, line) in BufReader::new(input).lines().enumerate() {
            let line = line.map_err(|e| FunnelError::Io(e.to_string()))?;
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            self.rules.push(parse_rule(&line).map_err(|message| FunnelError::MalformedRule {
                line: i + 1,
                message,
            })?);
        }
        Ok(())
    }

    /// First matching rule, if any.
    pub fn first_match(&self, s: &SessionRecord) -> Option<&Rule> {
        let http = s.http_hints();
        self.rules.iter().find(|r| r.predicate.matches(s, http.as_ref()))
    }
}

fn parse_rule(line: &str) -> Result<Rule, String> {
    let fields: Vec<&str> = line.split('\t').collect();
    let [name, kind, pattern] = fields[..] else {
        return Err(format!("expected 3 tab-separated fields, found {}", fields.len()));
    };
    let name = name.trim();
    if name.is_empty() {
        return Err("empty rule name".into());
    }
    if pattern.is_empty() {
        return Err("empty pattern".into());
    }
    let predicate = match kind.trim() {
        "substring_ci" => Predicate::SubstringCi(pattern.to_ascii_lowercase().into_bytes()),
        "ua_prefix" => Predicate::UaPrefix(pattern.to_owned()),
        "port_eq" => Predicate::PortEq(
            pattern
                .trim()
                .parse()
                .map_err(|_| format!("invalid port {pattern:?}"))?,
        ),
        "magic_hex" => Predicate::Magic(parse_hex(pattern.trim())?),
        other => return Err(format!("unknown rule kind {other:?}")),
    };
    Ok(Rule {
        name: name.to_owned(),
        reason: name.to_owned(),
        predicate,
    })
}

fn parse_hex(text: &str) -> Result<Vec<u8>, String> {
    let digits: String = text.chars().filter(|c| !c.is_whitespace()).collect();
    if digits.is_empty() || digits.len() % 2 != 0 {
        return Err(format!("hex pattern {text:?} must have an even number of digits"));
    }
    (0..digits.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&digits[i..i + 2], 16).map_err(|_| format!("invalid hex {text:?}")))
        .collect()
}
