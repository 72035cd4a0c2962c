//! Attribution of sessions to managed cloud services and to domains.

mod host;
mod psl;
mod reference;

use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::funnel::SessionRecord;

pub use host::{
    automation_flags, classify_host, classify_normalized, normalize_host, subdomain_depth,
    AutomationFlags, HostKind, DEFAULT_WILDCARD_PROVIDERS,
};
pub use psl::{PublicSuffixList, Registrable};
pub use reference::{
    CloudRanges, CloudService, RangeEntry, RankList, ResolutionSnapshot, UserAgentTable, Validation,
};

#[derive(Debug, Error, PartialEq)]
pub enum AttributeError {
    #[error("malformed host {0:?}")]
    MalformedHost(String),
    #[error("{0:?} is itself a public suffix")]
    HostIsPublicSuffix(String),
    #[error("{host:?} is not under {sld:?}")]
    HostNotUnderSld { host: String, sld: String },
    #[error("invalid cloud range: {0}")]
    InvalidRange(String),
    #[error("line {line}: {message}")]
    Reference { line: usize, message: String },
    #[error("read error: {0}")]
    Io(String),
}

pub const EXTERNAL: &str = "external";

#[derive(Debug, Clone, Default)]
pub struct References {
    pub ranges: CloudRanges,
    pub user_agents: UserAgentTable,
    pub psl: PublicSuffixList,
    pub ranks: RankList,
    /// Without a snapshot, domain names are not validated and all of them
    /// enter the domain aggregates.
    pub snapshot: Option<ResolutionSnapshot>,
    pub wildcard_providers: Vec<String>,
}

impl References {
    pub fn new() -> Self {
        Self {
            wildcard_providers: DEFAULT_WILDCARD_PROVIDERS.iter().map(|s| s.to_string()).collect(),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HostClassification {
    pub raw: String,
    #[serde(flatten)]
    pub kind: HostKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sld: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub etld: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flags: Option<AutomationFlags>,
}

/// Full classification of one host as seen on a session to `dst_ip`.
/// Domain names that are themselves public suffixes come back without an SLD.
pub fn classify(
    raw: &str,
    dst_ip: Ipv4Addr,
    psl: &PublicSuffixList,
    wildcard_providers: &[String],
) -> Result<HostClassification, AttributeError> {
    let host = normalize_host(raw)?;
    let kind = classify_normalized(&host, wildcard_providers);
    let mut c = HostClassification {
        raw: raw.to_owned(),
        kind,
        sld: None,
        etld: None,
        depth: None,
        flags: None,
    };
    if kind == HostKind::DomainName {
        if let Ok(reg) = psl.sld_etld(&host) {
            c.depth = Some(subdomain_depth(&host, &reg.sld)?);
            c.flags = Some(automation_flags(&host, &reg.sld, dst_ip));
            c.sld = Some(reg.sld);
            c.etld = Some(reg.etld);
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HostStatus {
    Absent,
    Malformed,
    /// HTTP Host and TLS SNI disagree.
    Inconsistent,
    Classified,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionAttribution {
    pub session_id: String,
    /// Service label of the source range, or `external`.
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ua_service: Option<CloudService>,
    pub host_status: HostStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_host: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub host: Option<HostClassification>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation: Option<Validation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<u32>,
    pub in_domain_aggregates: bool,
}

pub fn attribute_session(s: &SessionRecord, refs: &References) -> SessionAttribution {
    let http = s.http_hints();
    let mut out = SessionAttribution {
        session_id: s.session_id.clone(),
        source: refs.ranges.classify_source(s.src_ip).unwrap_or(EXTERNAL).to_owned(),
        ua_service: http
            .as_ref()
            .and_then(|h| h.user_agent.as_deref())
            .and_then(|ua| refs.user_agents.service_from_user_agent(ua)),
        host_status: HostStatus::Absent,
        raw_host: None,
        host: None,
        validation: None,
        rank: None,
        in_domain_aggregates: false,
    };
    let http_host = http.and_then(|h| h.host);
    let Some(raw) = http_host.clone().or_else(|| s.tls_sni.clone()) else {
        return out;
    };
    out.raw_host = Some(raw.clone());
    if let (Some(h), Some(sni)) = (&http_host, &s.tls_sni) {
        let same = match (normalize_host(h), normalize_host(sni)) {
            (Ok(a), Ok(b)) => a == b,
            _ => h == sni,
        };
        if !same {
            out.host_status = HostStatus::Inconsistent;
            return out;
        }
    }
    let Ok(c) = classify(&raw, s.dst_ip, &refs.psl, &refs.wildcard_providers) else {
        out.host_status = HostStatus::Malformed;
        return out;
    };
    out.host_status = HostStatus::Classified;
    if let Some(sld) = &c.sld {
        let host = normalize_host(&raw).expect("classified hosts normalize");
        out.validation = refs.snapshot.as_ref().map(|snap| snap.validate_domain(&host, s.dst_ip));
        out.rank = refs.ranks.rank(sld);
        out.in_domain_aggregates = matches!(out.validation, None | Some(Validation::Valid));
    }
    out.host = Some(c);
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HostKindCounts {
    pub absent: u64,
    pub malformed: u64,
    pub inconsistent: u64,
    pub ip_literal: u64,
    pub ipbn: u64,
    pub wildcard_dns: u64,
    pub domain_name: u64,
}

impl HostKindCounts {
    pub fn total(&self) -> u64 {
        self.absent
            + self.malformed
            + self.inconsistent
            + self.ip_literal
            + self.ipbn
            + self.wildcard_dns
            + self.domain_name
    }
}

/// Shares among sessions whose host was classified.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct HostKindShares {
    pub ip_literal: f64,
    pub ipbn: f64,
    pub other: f64,
}

/// Counts of distinct SLDs whose rank is within each bound (cumulative).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankBuckets {
    pub top_1k: u64,
    pub top_10k: u64,
    pub top_1m: u64,
    pub unranked: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainAggregates {
    pub sessions: u64,
    pub unique_slds: u64,
    pub unique_etlds: u64,
    /// Distinct SLDs per eTLD.
    pub etld_slds: BTreeMap<String, u64>,
    pub sld_min_depth: BTreeMap<String, usize>,
    pub rank_buckets: RankBuckets,
    pub slds_two_digits: u64,
    pub slds_encoding_ip: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeReport {
    pub sessions: u64,
    pub sources: BTreeMap<String, u64>,
    pub ua_services: BTreeMap<String, u64>,
    pub host_kinds: HostKindCounts,
    pub host_kind_shares: HostKindShares,
    pub validation: BTreeMap<String, u64>,
    pub domains: DomainAggregates,
    pub per_session: Vec<SessionAttribution>,
}

pub fn attribute_report(sessions: &[SessionRecord], refs: &References) -> AttributeReport {
    let per_session: Vec<SessionAttribution> =
        sessions.iter().map(|s| attribute_session(s, refs)).collect();

    let mut sources = BTreeMap::new();
    let mut ua_services = BTreeMap::new();
    let mut kinds = HostKindCounts::default();
    let mut validation = BTreeMap::new();
    let mut domains = DomainAggregates::default();
    let mut etld_slds: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let mut sld_rank: BTreeMap<String, Option<u32>> = BTreeMap::new();
    let (mut two_digits, mut encodes_ip) = (BTreeSet::new(), BTreeSet::new());

    for a in &per_session {
        *sources.entry(a.source.clone()).or_insert(0) += 1;
        if let Some(svc) = a.ua_service {
            *ua_services.entry(svc.as_str().to_owned()).or_insert(0) += 1;
        }
        if let Some(v) = a.validation {
            let key = serde_json::to_value(v).expect("enum serializes");
            *validation.entry(key.as_str().unwrap_or_default().to_owned()).or_insert(0) += 1;
        }
        match (a.host_status, a.host.as_ref().map(|h| h.kind)) {
            (HostStatus::Absent, _) => kinds.absent += 1,
            (HostStatus::Malformed, _) => kinds.malformed += 1,
            (HostStatus::Inconsistent, _) => kinds.inconsistent += 1,
            (HostStatus::Classified, Some(HostKind::IpLiteral(_))) => kinds.ip_literal += 1,
            (HostStatus::Classified, Some(HostKind::Ipbn(_))) => kinds.ipbn += 1,
            (HostStatus::Classified, Some(HostKind::WildcardDns)) => kinds.wildcard_dns += 1,
            (HostStatus::Classified, _) => kinds.domain_name += 1,
        }
        if !a.in_domain_aggregates {
            continue;
        }
        let h = a.host.as_ref().expect("aggregated sessions carry a host");
        let (sld, etld, depth) = (
            h.sld.clone().expect("domain has sld"),
            h.etld.clone().expect("domain has etld"),
            h.depth.expect("domain has depth"),
        );
        domains.sessions += 1;
        etld_slds.entry(etld).or_default().insert(sld.clone());
        domains
            .sld_min_depth
            .entry(sld.clone())
            .and_modify(|d| *d = (*d).min(depth))
            .or_insert(depth);
        let flags = h.flags.unwrap_or_default();
        if flags.two_digits {
            two_digits.insert(sld.clone());
        }
        if flags.encodes_ip {
            encodes_ip.insert(sld.clone());
        }
        sld_rank.insert(sld, a.rank);
    }

    domains.unique_slds = sld_rank.len() as u64;
    domains.unique_etlds = etld_slds.len() as u64;
    domains.etld_slds = etld_slds.into_iter().map(|(k, v)| (k, v.len() as u64)).collect();
    for rank in sld_rank.values() {
        let b = &mut domains.rank_buckets;
        match rank {
            Some(r) if *r <= 1_000_000 => {
                b.top_1m += 1;
                b.top_10k += u64::from(*r <= 10_000);
                b.top_1k += u64::from(*r <= 1_000);
            }
            _ => b.unranked += 1,
        }
    }
    domains.slds_two_digits = two_digits.len() as u64;
    domains.slds_encoding_ip = encodes_ip.len() as u64;

    let classified = kinds.ip_literal + kinds.ipbn + kinds.wildcard_dns + kinds.domain_name;
    let share = |n: u64| if classified == 0 { 0.0 } else { n as f64 / classified as f64 };
    AttributeReport {
        sessions: per_session.len() as u64,
        sources,
        ua_services,
        host_kinds: kinds,
        host_kind_shares: HostKindShares {
            ip_literal: share(kinds.ip_literal),
            ipbn: share(kinds.ipbn),
            other: share(kinds.wildcard_dns + kinds.domain_name),
        },
        validation,
        domains,
        per_session,
    }
}
