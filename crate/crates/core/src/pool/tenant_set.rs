use serde::{Deserialize, Serialize};

use super::TenantId;

/// Distinct-tenant history of a single address.
///
/// Stores a bijective 32-bit mix of each tenant id in sorted order. With no
/// capacity the set is exact. With a capacity of `k` it keeps the `k` smallest
/// mixed values (a k-minimum-values sketch): counts stay exact up to `k`
/// distinct tenants and become an estimate beyond that.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TenantSet {
    values: Vec<u32>,
    capacity: Option<u32>,
    saturated: bool,
}

/// murmur3 finalizer; a permutation of u32 so distinct tenants never collide.
#[inline]
fn mix(t: TenantId) -> u32 {
    let mut h = t.0;
    h ^= h >> 16;
    h = h.wrapping_mul(0x85eb_ca6b);
    h ^= h >> 13;
    h = h.wrapping_mul(0xc2b2_ae35);
    h ^= h >> 16;
    h
}

impl TenantSet {
    pub fn with_capacity_limit(capacity: Option<u32>) -> Self {
        Self {
            values: Vec::new(),
            capacity: capacity.map(|c| c.max(2)),
            saturated: false,
        }
    }

    pub fn insert(&mut self, tenant: TenantId) {
        let h = mix(tenant);
        if self.saturated && self.values.last().is_some_and(|&max| h > max) {
            return;
        }
        if let Err(at) = self.values.binary_search(&h) {
            self.values.insert(at, h);
            if let Some(cap) = self.capacity {
                if self.values.len() > cap as usize {
                    self.values.pop();
                    self.saturated = true;
                }
            }
        }
    }

    /// True when the tenant is known to be in the set. Exact unless the
    /// sketch has saturated.
    pub fn contains(&self, tenant: TenantId) -> bool {
        self.values.binary_search(&mix(tenant)).is_ok()
    }

    pub fn is_exact(&self) -> bool {
        !self.saturated
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Number of distinct tenants (estimated once saturated).
    pub fn count(&self) -> f64 {
        if !self.saturated {
            return self.values.len() as f64;
        }
        let k = self.values.len();
        let kth = f64::from(self.values[k - 1]) + 1.0;
        (k as f64 - 1.0) * (u32::MAX as f64 + 1.0) / kth
    }

    /// Distinct tenants other than `excluded`.
    pub fn count_excluding(&self, excluded: TenantId) -> f64 {
        let c = self.count();
        if self.contains(excluded) {
            (c - 1.0).max(0.0)
        } else {
            c
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_mode_counts_distinct() {
        let mut s = TenantSet::default();
        for t in [3, 1, 3, 7, 1] {
            s.insert(TenantId(t));
        }
        assert_eq!(s.count(), 3.0);
        assert!(s.contains(TenantId(7)));
        assert!(!s.contains(TenantId(2)));
        assert_eq!(s.count_excluding(TenantId(7)), 2.0);
        assert_eq!(s.count_excluding(TenantId(9)), 3.0);
    }

    #[test]
    fn mix_is_injective_on_a_dense_range() {
        let mut seen: Vec<u32> = (0..200_000).map(|t| mix(TenantId(t))).collect();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 200_000);
    }

    #[test]
    fn sketch_is_exact_below_capacity_and_close_above() {
        let mut s = TenantSet::with_capacity_limit(Some(64));
        for t in 0..64 {
            s.insert(TenantId(t));
        }
        assert!(s.is_exact());
        assert_eq!(s.count(), 64.0);

        let mut s = TenantSet::with_capacity_limit(Some(64));
        for t in 0..5000 {
            s.insert(TenantId(t * 7 + 1));
            s.insert(TenantId(t * 7 + 1));
        }
        assert!(!s.is_exact());
        let rel = (s.count() - 5000.0).abs() / 5000.0;
        assert!(rel < 0.4, "estimate {} too far from 5000", s.count());
    }
}
