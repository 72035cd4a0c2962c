//! Loaders for attribution reference data: cloud ranges, user agents, rank
//! lists and DNS resolution snapshots.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Read};
use std::net::Ipv4Addr;
use std::str::FromStr;

use ipnet::Ipv4Net;
use serde::{Deserialize, Serialize};

use super::host::normalize_host;
use super::AttributeError;
use crate::net::{parse_prefix, PrefixMap};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RangeEntry {
    pub ip_prefix: String,
    pub service: String,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RangesDoc {
    Published { prefixes: Vec<RangeEntry> },
    List(Vec<RangeEntry>),
}

/// Service-labelled prefixes. Lookups use the longest containing prefix;
/// for a prefix listed twice the first label is kept.
#[derive(Debug, Clone, Default)]
pub struct CloudRanges {
    map: PrefixMap<String>,
}

impl CloudRanges {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, prefix: Ipv4Net, service: &str) -> Result<(), AttributeError> {
        if service.trim().is_empty() {
            return Err(AttributeError::InvalidRange(format!("{prefix}: empty service label")));
        }
        self.map.insert(prefix, service.to_owned());
        Ok(())
    }

    /// Accepts the published ranges document (`{"prefixes": [...]}`, extra
    /// fields ignored) or a bare list of `{ip_prefix, service}` objects.
    pub fn from_json<R: Read>(input: R) -> Result<Self, AttributeError> {
        let doc: RangesDoc =
            serde_json::from_reader(input).map_err(|e| AttributeError::InvalidRange(e.to_string()))?;
        let entries = match doc {
            RangesDoc::Published { prefixes } => prefixes,
            RangesDoc::List(list) => list,
        };
        let mut ranges = Self::new();
        for e in entries {
            let net = parse_prefix(e.ip_prefix.trim())
                .ok_or_else(|| AttributeError::InvalidRange(format!("bad prefix {:?}", e.ip_prefix)))?;
            ranges.insert(net, &e.service)?;
        }
        Ok(ranges)
    }

    pub fn classify_source(&self, ip: Ipv4Addr) -> Option<&str> {
        self.map.longest_match(ip).map(|(_, s)| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CloudService {
    #[serde(rename = "SNS")]
    Sns,
    Route53HealthCheck,
    CloudFront,
    ApiGateway,
}

impl CloudService {
    pub fn as_str(self) -> &'static str {
        match self {
            CloudService::Sns => "SNS",
            CloudService::Route53HealthCheck => "Route53HealthCheck",
            CloudService::CloudFront => "CloudFront",
            CloudService::ApiGateway => "ApiGateway",
        }
    }
}

impl fmt::Display for CloudService {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CloudService {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        [
            CloudService::Sns,
            CloudService::Route53HealthCheck,
            CloudService::CloudFront,
            CloudService::ApiGateway,
        ]
        .into_iter()
        .find(|c| c.as_str().eq_ignore_ascii_case(s))
        .ok_or_else(|| format!("unknown service {s:?}"))
    }
}

const DEFAULT_USER_AGENTS: &str = include_str!("../../data/user_agents.tsv");

/// User-agent prefix table mapping managed-service agents to services.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserAgentTable {
    entries: Vec<(String, CloudService)>,
}

impl Default for UserAgentTable {
    fn default() -> Self {
        Self::parse(DEFAULT_USER_AGENTS.as_bytes()).expect("bundled user-agent table parses")
    }
}

impl UserAgentTable {
    /// `prefix<TAB>service` lines, `#` comments.
    pub fn parse<R: Read>(input: R) -> Result<Self, AttributeError> {
        let mut entries = Vec::new();
        for (i, line) in BufReader::new(input).lines().enumerate() {
            let line = line.map_err(|e| AttributeError::Io(e.to_string()))?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |message: String| AttributeError::Reference { line: i + 1, message };
            let (prefix, service) = line
                .split_once('\t')
                .ok_or_else(|| bad("expected prefix<TAB>service".into()))?;
            if prefix.is_empty() {
                return Err(bad("empty prefix".into()));
            }
            entries.push((prefix.to_owned(), service.trim().parse().map_err(bad)?));
        }
        // longest prefix first
        entries.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
        Ok(Self { entries })
    }

    pub fn service_from_user_agent(&self, ua: &str) -> Option<CloudService> {
        self.entries
            .iter()
            .find(|(p, _)| ua.starts_with(p.as_str()))
            .map(|(_, s)| *s)
    }
}

fn data_lines<R: Read>(
    input: R,
    header: &str,
    mut each: impl FnMut(usize, &str, &str) -> Result<(), AttributeError>,
) -> Result<(), AttributeError> {
    for (i, line) in BufReader::new(input).lines().enumerate() {
        let line = line.map_err(|e| AttributeError::Io(e.to_string()))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || (i == 0 && line.eq_ignore_ascii_case(header)) {
            continue;
        }
        let (a, b) = line.split_once(',').ok_or_else(|| AttributeError::Reference {
            line: i + 1,
            message: format!("expected two comma-separated fields: {line:?}"),
        })?;
        each(i + 1, a.trim(), b.trim())?;
    }
    Ok(())
}

/// Domain popularity ranks, 1 being the most popular.
#[derive(Debug, Clone, Default)]
pub struct RankList {
    ranks: HashMap<String, u32>,
}

impl RankList {
    /// `rank,domain` lines. A domain listed twice is an error.
    pub fn parse<R: Read>(input: R) -> Result<Self, AttributeError> {
        let mut ranks = HashMap::new();
        data_lines(input, "rank,domain", |line, rank, domain| {
            let bad = |message: String| AttributeError::Reference { line, message };
            let rank: u32 = rank.parse().map_err(|_| bad(format!("invalid rank {rank:?}")))?;
            if rank == 0 {
                return Err(bad("ranks start at 1".into()));
            }
            let domain = normalize_host(domain).map_err(|_| bad(format!("invalid domain {domain:?}")))?;
            if ranks.insert(domain.clone(), rank).is_some() {
                return Err(bad(format!("duplicate domain {domain}")));
            }
            Ok(())
        })?;
        Ok(Self { ranks })
    }

    pub fn rank(&self, domain: &str) -> Option<u32> {
        self.ranks.get(domain).copied()
    }

    pub fn len(&self) -> usize {
        self.ranks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranks.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Validation {
    Valid,
    Mismatch,
    NotInSnapshot,
}

/// Offline host -> addresses table standing in for live resolution.
#[derive(Debug, Clone, Default)]
pub struct ResolutionSnapshot {
    hosts: HashMap<String, HashSet<Ipv4Addr>>,
}

impl ResolutionSnapshot {
    /// `host,ip` lines.
    pub fn parse<R: Read>(input: R) -> Result<Self, AttributeError> {
        let mut snap = Self::default();
        data_lines(input, "host,ip", |line, host, ip| {
            let bad = |message: String| AttributeError::Reference { line, message };
            let host = normalize_host(host).map_err(|_| bad(format!("invalid host {host:?}")))?;
            let ip: Ipv4Addr = ip.parse().map_err(|_| bad(format!("invalid address {ip:?}")))?;
            snap.insert(host, ip);
            Ok(())
        })?;
        Ok(snap)
    }

    pub fn insert(&mut self, host: String, ip: Ipv4Addr) {
        self.hosts.entry(host).or_default().insert(ip);
    }

    pub fn validate_domain(&self, host: &str, dst_ip: Ipv4Addr) -> Validation {
        match self.hosts.get(host) {
            None => Validation::NotInSnapshot,
            Some(ips) if ips.contains(&dst_ip) => Validation::Valid,
            Some(_) => Validation::Mismatch,
        }
    }
}
