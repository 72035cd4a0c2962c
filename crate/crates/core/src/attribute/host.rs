use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use super::AttributeError;

pub const DEFAULT_WILDCARD_PROVIDERS: &[&str] = &["xip.io", "nip.io", "sslip.io"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "ip", rename_all = "snake_case")]
pub enum HostKind {
    IpLiteral(Ipv4Addr),
    /// IP-based name: a provider hostname that spells out the address.
    Ipbn(Ipv4Addr),
    WildcardDns,
    DomainName,
}

impl HostKind {
    pub fn label(&self) -> &'static str {
        match self {
            HostKind::IpLiteral(_) => "ip_literal",
            HostKind::Ipbn(_) => "ipbn",
            HostKind::WildcardDns => "wildcard_dns",
            HostKind::DomainName => "domain_name",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AutomationFlags {
    pub two_digits: bool,
    pub encodes_ip: bool,
}

/// Lowercases, drops a trailing root dot and a `:port` suffix, and checks
/// label syntax.
pub fn normalize_host(raw: &str) -> Result<String, AttributeError> {
    let malformed = || AttributeError::MalformedHost(raw.to_owned());
    let mut host = raw.trim().to_ascii_lowercase();
    if let Some((name, port)) = host.rsplit_once(':') {
        if port.is_empty() || !port.bytes().all(|b| b.is_ascii_digit()) || name.contains(':') {
            return Err(malformed());
        }
        host.truncate(name.len());
    }
    if host.ends_with('.') {
        host.pop();
    }
    if host.is_empty() || host.len() > 253 {
        return Err(malformed());
    }
    for label in host.split('.') {
        let ok = !label.is_empty()
            && label.len() <= 63
            && label
                .bytes()
                .all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_');
        if !ok {
            return Err(malformed());
        }
    }
    Ok(host)
}

fn parse_dashed_ip(label: &str) -> Option<Ipv4Addr> {
    let parts: Vec<&str> = label.split('-').collect();
    if parts.len() != 4 {
        return None;
    }
    let mut octets = [0u8; 4];
    for (o, p) in octets.iter_mut().zip(&parts) {
        if p.is_empty() || p.len() > 3 || !p.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        *o = p.parse().ok()?;
    }
    Some(Ipv4Addr::from(octets))
}

fn is_word(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_lowercase())
}

// `<word>-<word>-<digit>`, e.g. us-west-2
fn is_region(label: &str) -> bool {
    let parts: Vec<&str> = label.split('-').collect();
    matches!(parts[..], [a, b, d] if is_word(a) && is_word(b) && !d.is_empty() && d.bytes().all(|c| c.is_ascii_digit()))
}

fn ipbn(labels: &[&str]) -> Option<Ipv4Addr> {
    let (first, rest) = labels.split_first()?;
    let ip = parse_dashed_ip(first.strip_prefix("ec2-")?)?;
    let region_ok = match rest {
        ["compute-1", "amazonaws", "com"] => true,
        [region, "compute", "amazonaws", "com"] => is_region(region),
        _ => false,
    };
    region_ok.then_some(ip)
}

/// Classifies an already normalized host.
pub fn classify_normalized<S: AsRef<str>>(host: &str, wildcard_providers: &[S]) -> HostKind {
    if let Ok(ip) = host.parse::<Ipv4Addr>() {
        return HostKind::IpLiteral(ip);
    }
    let labels: Vec<&str> = host.split('.').collect();
    if let Some(ip) = ipbn(&labels) {
        return HostKind::Ipbn(ip);
    }
    let wildcard = wildcard_providers.iter().any(|p| {
        let p = p.as_ref();
        host == p || (host.ends_with(p) && host.as_bytes()[host.len() - p.len() - 1] == b'.')
    });
    if wildcard {
        HostKind::WildcardDns
    } else {
        HostKind::DomainName
    }
}

pub fn classify_host<S: AsRef<str>>(
    raw: &str,
    wildcard_providers: &[S],
) -> Result<HostKind, AttributeError> {
    Ok(classify_normalized(&normalize_host(raw)?, wildcard_providers))
}

pub fn subdomain_depth(host: &str, sld: &str) -> Result<usize, AttributeError> {
    let under = host == sld
        || (host.len() > sld.len()
            && host.ends_with(sld)
            && host.as_bytes()[host.len() - sld.len() - 1] == b'.');
    if !under || sld.is_empty() {
        return Err(AttributeError::HostNotUnderSld {
            host: host.to_owned(),
            sld: sld.to_owned(),
        });
    }
    Ok(host.split('.').count() - sld.split('.').count())
}

// `needle` occurs in `hay` with no digit directly on either side.
fn contains_bounded(hay: &str, needle: &str) -> bool {
    let bytes = hay.as_bytes();
    hay.match_indices(needle).any(|(at, _)| {
        let before = at.checked_sub(1).map(|i| bytes[i]);
        let after = bytes.get(at + needle.len()).copied();
        !before.is_some_and(|b| b.is_ascii_digit()) && !after.is_some_and(|b| b.is_ascii_digit())
    })
}

/// `two_digits`: some label left of `sld` has at least two digits.
/// `encodes_ip`: `dst_ip` appears in the host as `a-b-c-d` or `a.b.c.d`.
pub fn automation_flags(host: &str, sld: &str, dst_ip: Ipv4Addr) -> AutomationFlags {
    let sub = host
        .strip_suffix(sld)
        .map(|s| s.trim_end_matches('.'))
        .unwrap_or("");
    let two_digits = !sub.is_empty()
        && sub
            .split('.')
            .any(|l| l.bytes().filter(u8::is_ascii_digit).count() >= 2);
    let [a, b, c, d] = dst_ip.octets();
    let encodes_ip = contains_bounded(host, &format!("{a}-{b}-{c}-{d}"))
        || contains_bounded(host, &format!("{a}.{b}.{c}.{d}"));
    AutomationFlags {
        two_digits,
        encodes_ip,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kind(raw: &str) -> HostKind {
        classify_host(raw, DEFAULT_WILDCARD_PROVIDERS).unwrap()
    }

    fn ip(s: &str) -> Ipv4Addr {
        s.parse().unwrap()
    }

    #[test]
    fn host_kinds() {
        assert_eq!(
            kind("ec2-203-0-113-15.compute-1.amazonaws.com"),
            HostKind::Ipbn(ip("203.0.113.15"))
        );
        assert_eq!(
            kind("ec2-3-8-1-200.eu-west-2.compute.amazonaws.com"),
            HostKind::Ipbn(ip("3.8.1.200"))
        );
        assert_eq!(kind("203.0.113.15"), HostKind::IpLiteral(ip("203.0.113.15")));
        assert_eq!(kind("203.0.113.15:8080"), HostKind::IpLiteral(ip("203.0.113.15")));
        assert_eq!(kind("203.0.113.15.xip.io"), HostKind::WildcardDns);
        assert_eq!(kind("10-0-0-1.NIP.io."), HostKind::WildcardDns);
        assert_eq!(kind("notxip.io"), HostKind::DomainName);
        assert_eq!(kind("sub.example.com"), HostKind::DomainName);
        // wrong shapes fall through to ordinary names
        assert_eq!(kind("ec2-203-0-113-256.compute-1.amazonaws.com"), HostKind::DomainName);
        assert_eq!(kind("ec2-203-0-113-15.compute-2.amazonaws.com"), HostKind::DomainName);
        assert_eq!(kind("ec2-1-2-3-4.us-west.compute.amazonaws.com"), HostKind::DomainName);
        assert_eq!(kind("ec2-1-2-3-4.compute-1.amazonaws.com.evil.com"), HostKind::DomainName);
    }

    #[test]
    fn malformed_hosts() {
        for raw in ["", "a..b", "exa mple.com", "a.b:", "[::1]:80", "bad!.com", "x:y"] {
            assert!(
                matches!(classify_host(raw, DEFAULT_WILDCARD_PROVIDERS), Err(AttributeError::MalformedHost(_))),
                "{raw:?}"
            );
        }
    }

    #[test]
    fn depth() {
        assert_eq!(subdomain_depth("sub.example.com", "example.com").unwrap(), 1);
        assert_eq!(subdomain_depth("example.com", "example.com").unwrap(), 0);
        assert_eq!(subdomain_depth("a.b.example.com", "example.com").unwrap(), 2);
        assert!(subdomain_depth("subexample.com", "example.com").is_err());
        assert!(subdomain_depth("example.org", "example.com").is_err());
    }

    #[test]
    fn flags() {
        let any = ip("192.0.2.1");
        assert!(automation_flags("host42a.example.com", "example.com", any).two_digits);
        assert!(!automation_flags("host4a.example.com", "example.com", any).two_digits);
        // digits in the registrable part do not count
        assert!(!automation_flags("www.example42.com", "example42.com", any).two_digits);
        let f = automation_flags("ip-203-0-113-15.example.com", "example.com", ip("203.0.113.15"));
        assert!(f.encodes_ip && f.two_digits);
        assert!(automation_flags("a.203.0.113.15.example.com", "example.com", ip("203.0.113.15")).encodes_ip);
        assert!(!automation_flags("ip-203-0-113-150.example.com", "example.com", ip("203.0.113.15")).encodes_ip);
        assert_eq!(
            automation_flags("www.example.com", "example.com", ip("203.0.113.15")),
            AutomationFlags::default()
        );
    }
}
