//! IPv4 prefix tables used for blocklists and cloud range lookups.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read};
use std::net::Ipv4Addr;

use ipnet::Ipv4Net;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NetError {
    #[error("line {line}: malformed CIDR {text:?}")]
    MalformedCidr { line: usize, text: String },
    #[error("read error: {0}")]
    Io(String),
}

/// Prefix -> value map answering longest-prefix queries by probing each
/// populated prefix length from most to least specific.
#[derive(Debug, Clone)]
pub struct PrefixMap<V> {
    by_len: Vec<HashMap<u32, V>>,
    lens: Vec<u8>,
    len: usize,
}

impl<V> Default for PrefixMap<V> {
    fn default() -> Self {
        Self {
            by_len: (0..=32).map(|_| HashMap::new()).collect(),
            lens: Vec::new(),
            len: 0,
        }
    }
}

#[inline]
fn mask(bits: u8) -> u32 {
    if bits == 0 {
        0
    } else {
        u32::MAX << (32 - bits)
    }
}

impl<V> PrefixMap<V> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts `net` (host bits are cleared). An existing entry for the same
    /// prefix is kept; returns whether the value was stored.
    pub fn insert(&mut self, net: Ipv4Net, value: V) -> bool {
        let bits = net.prefix_len();
        let key = u32::from(net.network()) & mask(bits);
        let table = &mut self.by_len[bits as usize];
        if table.contains_key(&key) {
            return false;
        }
        table.insert(key, value);
        if let Err(at) = self.lens.binary_search_by(|l| bits.cmp(l)) {
            self.lens.insert(at, bits);
        }
        self.len += 1;
        true
    }

    pub fn longest_match(&self, ip: Ipv4Addr) -> Option<(Ipv4Net, &V)> {
        let addr = u32::from(ip);
        self.lens.iter().find_map(|&bits| {
            let key = addr & mask(bits);
            self.by_len[bits as usize].get(&key).map(|v| {
                (
                    Ipv4Net::new(Ipv4Addr::from(key), bits).expect("prefix length <= 32"),
                    v,
                )
            })
        })
    }

    pub fn contains(&self, ip: Ipv4Addr) -> bool {
        self.longest_match(ip).is_some()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

pub type PrefixSet = PrefixMap<()>;

/// Parses a CIDR or a bare address (taken as /32).
pub fn parse_prefix(text: &str) -> Option<Ipv4Net> {
    if let Ok(net) = text.parse::<Ipv4Net>() {
        return Some(net.trunc());
    }
    text.parse::<Ipv4Addr>().ok().map(Ipv4Net::from)
}

impl PrefixSet {
    /// Reads a netset: one prefix per line, `#` comments.
    pub fn parse_netset<R: Read>(input: R) -> Result<Self, NetError> {
        let mut set = Self::new();
        set.extend_netset(input)?;
        Ok(set)
    }

    pub fn extend_netset<R: Read>(&mut self, input: R) -> Result<(), NetError> {
        for (i, line) in BufReader::new(input).lines().enumerate() {
            let line = line.map_err(|e| NetError::Io(e.to_string()))?;
            let text = line.split('#').next().unwrap_or("").trim();
            if text.is_empty() {
                continue;
            }
            let net = parse_prefix(text).ok_or_else(|| NetError::MalformedCidr {
                line: i + 1,
                text: text.to_owned(),
            })?;
            self.insert(net, ());
        }
        Ok(())
    }
}

impl FromIterator<Ipv4Net> for PrefixSet {
    fn from_iter<I: IntoIterator<Item = Ipv4Net>>(iter: I) -> Self {
        let mut set = Self::new();
        for net in iter {
            set.insert(net, ());
        }
        set
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ip(s: &str) -> Ipv4Addr {
        s.parse().unwrap()
    }

    #[test]
    fn netset_membership() {
        let set = PrefixSet::parse_netset(
            "# firehol style\n198.51.100.0/24\n\n192.0.2.7 # single host\n10.1.2.3/8\n".as_bytes(),
        )
        .unwrap();
        assert_eq!(set.len(), 3);
        assert!(set.contains(ip("198.51.100.7")));
        assert!(!set.contains(ip("203.0.113.9")));
        assert!(set.contains(ip("192.0.2.7")));
        assert!(!set.contains(ip("192.0.2.8")));
        assert!(set.contains(ip("10.200.0.1")));
        assert!(!PrefixSet::new().contains(ip("1.2.3.4")));
    }

    #[test]
    fn malformed_line_is_reported() {
        let err = PrefixSet::parse_netset("1.2.3.0/24\n1.2.3.0/33\n".as_bytes()).unwrap_err();
        assert_eq!(
            err,
            NetError::MalformedCidr {
                line: 2,
                text: "1.2.3.0/33".into()
            }
        );
    }

    #[test]
    fn longest_prefix_wins() {
        let mut map = PrefixMap::new();
        map.insert("10.0.0.0/8".parse().unwrap(), "A");
        map.insert("10.1.0.0/16".parse().unwrap(), "B");
        assert_eq!(map.longest_match(ip("10.1.2.3")).unwrap().1, &"B");
        assert_eq!(map.longest_match(ip("10.2.2.3")).unwrap().1, &"A");
        assert!(!map.insert("10.0.0.0/8".parse().unwrap(), "C"));
        assert_eq!(map.longest_match(ip("10.2.2.3")).unwrap().1, &"A");
    }

    proptest! {
        #[test]
        fn matches_linear_scan(nets in prop::collection::vec((any::<u32>(), 0u8..=32), 0..30), probe: u32) {
            let nets: Vec<Ipv4Net> = nets.into_iter()
                .map(|(a, l)| Ipv4Net::new(Ipv4Addr::from(a), l).unwrap().trunc())
                .collect();
            let mut map = PrefixMap::new();
            for (i, n) in nets.iter().enumerate() {
                map.insert(*n, i);
            }
            let probe = Ipv4Addr::from(probe);
            let best = nets.iter().enumerate()
                .filter(|(_, n)| n.contains(&probe))
                .max_by_key(|(i, n)| (n.prefix_len(), std::cmp::Reverse(*i)))
                .map(|(i, _)| i);
            prop_assert_eq!(map.longest_match(probe).map(|(_, v)| *v), best);
        }
    }
}
