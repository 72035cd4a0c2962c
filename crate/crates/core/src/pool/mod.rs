//! Shared cloud address pool with a release cooldown and pluggable
//! allocation policies.
//!
//! Every address is identified by a dense [`IpId`]. Released addresses sit
//! in a cooling queue until `cooldown` seconds have elapsed and only then
//! become eligible again. The policies differ in which eligible address an
//! allocation receives:
//!
//! * [`Policy::Random`]: uniform over the eligible set.
//! * [`Policy::Lru`]: the address that has been free the longest. Addresses
//!   that were never handed out count as the oldest; ties fall to the lower id.
//! * [`Policy::Tagging`]: the requester's own previously released addresses
//!   first (oldest first), then the global LRU order.

mod lists;
mod tenant_set;

use std::collections::VecDeque;

use rustc_hash::FxHashMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use lists::{Ends, Links};
pub use tenant_set::TenantSet;

/// Simulation time in whole seconds.
pub type Seconds = u64;

/// Default cooldown between release and reuse of an address.
pub const DEFAULT_COOLDOWN: Seconds = 1800;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IpId(pub u32);

impl IpId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for IpId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ip{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TenantId(pub u32);

impl fmt::Display for TenantId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "tenant{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    Random,
    Lru,
    Tagging,
}

impl Policy {
    pub const ALL: [Policy; 3] = [Policy::Random, Policy::Lru, Policy::Tagging];

    pub fn as_str(self) -> &'static str {
        match self {
            Policy::Random => "random",
            Policy::Lru => "lru",
            Policy::Tagging => "tagging",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "random" => Ok(Policy::Random),
            "lru" => Ok(Policy::Lru),
            "tagging" | "tag" => Ok(Policy::Tagging),
            other => Err(format!("unknown policy {other:?} (expected random, lru or tagging)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolConfig {
    pub pool_size: u32,
    #[serde(default = "default_cooldown")]
    pub cooldown: Seconds,
    pub policy: Policy,
    /// Cap on the per-address tenant history. `None` keeps exact sets;
    /// `Some(k)` switches to a sketch that is exact up to `k` tenants.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub history_capacity: Option<u32>,
}

fn default_cooldown() -> Seconds {
    DEFAULT_COOLDOWN
}

impl PoolConfig {
    pub fn new(pool_size: u32, policy: Policy) -> Self {
        Self {
            pool_size,
            cooldown: DEFAULT_COOLDOWN,
            policy,
            history_capacity: None,
        }
    }

    pub fn with_cooldown(mut self, cooldown: Seconds) -> Self {
        self.cooldown = cooldown;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlotState {
    Free,
    Allocated { tenant: TenantId, since: Seconds },
}

/// Allocation state and history of one address.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub state: SlotState,
    pub last_release_time: Option<Seconds>,
    /// Tenant that performed the most recent release.
    pub tag_tenant: Option<TenantId>,
    /// Every distinct tenant that has ever held this address.
    pub prior_tenants: TenantSet,
}

impl PoolEntry {
    fn new(history_capacity: Option<u32>) -> Self {
        Self {
            state: SlotState::Free,
            last_release_time: None,
            tag_tenant: None,
            prior_tenants: TenantSet::with_capacity_limit(history_capacity),
        }
    }

    pub fn is_free(&self) -> bool {
        matches!(self.state, SlotState::Free)
    }

    pub fn holder(&self) -> Option<TenantId> {
        match self.state {
            SlotState::Allocated { tenant, .. } => Some(tenant),
            SlotState::Free => None,
        }
    }

    /// Free and out of cooldown at `now`.
    pub fn is_eligible(&self, now: Seconds, cooldown: Seconds) -> bool {
        self.is_free()
            && self
                .last_release_time
                .map_or(true, |t| now.saturating_sub(t) >= cooldown && now >= t)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PoolError {
    #[error("pool size must be positive")]
    EmptyPool,
    #[error("no eligible address at t={now}")]
    PoolExhausted { now: Seconds },
    #[error("{0} is not allocated")]
    NotAllocated(IpId),
    #[error("{0} is outside the pool")]
    UnknownIp(IpId),
    #[error("time went backwards: {now} is before {clock}")]
    TimeReversed { now: Seconds, clock: Seconds },
}

/// Eligible-set bookkeeping per policy.
#[derive(Debug, Clone)]
enum Selector {
    Random {
        eligible: Vec<u32>,
    },
    Ordered {
        /// Never-used addresses in ascending order; `fresh[fresh_next..]`
        /// are still available.
        fresh: Vec<u32>,
        fresh_next: usize,
        links: Links,
        global: Ends,
        tags: Option<TagLists>,
    },
}

#[derive(Debug, Clone)]
struct TagLists {
    links: Links,
    ends: FxHashMap<TenantId, Ends>,
}

impl Selector {
    /// Eligible structures for the free, promoted addresses in `entries`.
    /// Addresses released within `cooldown` of `clock` are left to the
    /// cooling queue.
    fn build(policy: Policy, entries: &[PoolEntry], clock: Seconds, cooldown: Seconds) -> Self {
        let mut fresh = Vec::new();
        let mut released = Vec::new();
        for (i, e) in entries.iter().enumerate() {
            if !e.is_free() {
                continue;
            }
            match e.last_release_time {
                None => fresh.push(i as u32),
                Some(t) if clock - t >= cooldown => released.push(i as u32),
                Some(_) => {}
            }
        }
        released.sort_unstable_by_key(|&ip| (entries[ip as usize].last_release_time, ip));
        match policy {
            Policy::Random => {
                fresh.extend(released);
                Selector::Random { eligible: fresh }
            }
            Policy::Lru | Policy::Tagging => {
                let mut links = Links::new(entries.len());
                let mut global = Ends::EMPTY;
                let mut tags = (policy == Policy::Tagging).then(|| TagLists {
                    links: Links::new(entries.len()),
                    ends: FxHashMap::default(),
                });
                for &ip in &released {
                    links.push_ordered(&mut global, ip, entries);
                    if let Some(tags) = &mut tags {
                        tags.push(ip, entries);
                    }
                }
                Selector::Ordered {
                    fresh,
                    fresh_next: 0,
                    links,
                    global,
                    tags,
                }
            }
        }
    }
}

impl TagLists {
    fn push(&mut self, ip: u32, entries: &[PoolEntry]) {
        let tag = entries[ip as usize].tag_tenant.expect("released address is tagged");
        let ends = self.ends.entry(tag).or_insert(Ends::EMPTY);
        self.links.push_ordered(ends, ip, entries);
    }
}

#[derive(Debug, Clone)]
pub struct Pool {
    config: PoolConfig,
    entries: Vec<PoolEntry>,
    selector: Selector,
    // (release time, address) in release order
    cooling: VecDeque<(Seconds, u32)>,
    scratch: Vec<(Seconds, u32)>,
    clock: Seconds,
    allocated: usize,
    fresh: usize,
    rng: ChaCha8Rng,
}

impl Pool {
    pub fn new(config: PoolConfig) -> Result<Self, PoolError> {
        Self::with_seed(config, 0)
    }

    /// The seed only affects [`Policy::Random`].
    pub fn with_seed(config: PoolConfig, seed: u64) -> Result<Self, PoolError> {
        if config.pool_size == 0 {
            return Err(PoolError::EmptyPool);
        }
        let n = config.pool_size;
        let entries: Vec<PoolEntry> = (0..n).map(|_| PoolEntry::new(config.history_capacity)).collect();
        let selector = Selector::build(config.policy, &entries, 0, 0);
        Ok(Self {
            entries,
            config,
            selector,
            cooling: VecDeque::new(),
            scratch: Vec::new(),
            clock: 0,
            allocated: 0,
            fresh: n as usize,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn config(&self) -> &PoolConfig {
        &self.config
    }

    pub fn size(&self) -> usize {
        self.entries.len()
    }

    pub fn allocated_count(&self) -> usize {
        self.allocated
    }

    /// Addresses that have never been handed out.
    pub fn fresh_count(&self) -> usize {
        self.fresh
    }

    pub fn entry(&self, ip: IpId) -> Result<&PoolEntry, PoolError> {
        self.entries.get(ip.index()).ok_or(PoolError::UnknownIp(ip))
    }

    pub fn entries(&self) -> &[PoolEntry] {
        &self.entries
    }

    /// Switches the allocation policy, rebuilding the eligible structures from
    /// the current address states. Cooling addresses stay where they are.
    pub fn set_policy(&mut self, policy: Policy) {
        self.promote(self.clock);
        self.config.policy = policy;
        self.selector = Selector::build(policy, &self.entries, self.clock, self.config.cooldown);
    }

    /// Every free address that is out of cooldown at `now`, ascending.
    pub fn eligible(&self, now: Seconds) -> Vec<IpId> {
        let cooldown = self.config.cooldown;
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.is_eligible(now, cooldown))
            .map(|(i, _)| IpId(i as u32))
            .collect()
    }

    pub fn allocate(&mut self, tenant: TenantId, now: Seconds) -> Result<IpId, PoolError> {
        self.advance(now)?;
        self.promote(now);
        let ip = self.select(tenant).ok_or(PoolError::PoolExhausted { now })?;
        let entry = &mut self.entries[ip as usize];
        debug_assert!(entry.is_eligible(now, self.config.cooldown));
        entry.state = SlotState::Allocated { tenant, since: now };
        if entry.last_release_time.is_none() && entry.prior_tenants.is_empty() {
            self.fresh -= 1;
        }
        entry.prior_tenants.insert(tenant);
        self.allocated += 1;
        Ok(IpId(ip))
    }

    /// Frees `ip` and returns the tenant that held it.
    pub fn release(&mut self, ip: IpId, now: Seconds) -> Result<TenantId, PoolError> {
        let entry = self.entries.get(ip.index()).ok_or(PoolError::UnknownIp(ip))?;
        let tenant = entry.holder().ok_or(PoolError::NotAllocated(ip))?;
        self.advance(now)?;
        let entry = &mut self.entries[ip.index()];
        entry.state = SlotState::Free;
        entry.last_release_time = Some(now);
        entry.tag_tenant = Some(tenant);
        self.allocated -= 1;
        self.cooling.push_back((now, ip.0));
        Ok(tenant)
    }

    fn advance(&mut self, now: Seconds) -> Result<(), PoolError> {
        if now < self.clock {
            return Err(PoolError::TimeReversed {
                now,
                clock: self.clock,
            });
        }
        self.clock = now;
        Ok(())
    }

    /// Moves addresses whose cooldown has elapsed into the eligible structures.
    fn promote(&mut self, now: Seconds) {
        let cooldown = self.config.cooldown;
        self.scratch.clear();
        while let Some(&(released, ip)) = self.cooling.front() {
            if now - released < cooldown {
                break;
            }
            self.cooling.pop_front();
            self.scratch.push((released, ip));
        }
        if self.scratch.is_empty() {
            return;
        }
        self.scratch
            .sort_unstable_by_key(|&(t, ip)| (u128::from(t) << 32) | u128::from(ip));
        let entries = &self.entries;
        for &(_, ip) in &self.scratch {
            match &mut self.selector {
                Selector::Random { eligible } => eligible.push(ip),
                Selector::Ordered {
                    links,
                    global,
                    tags,
                    ..
                } => {
                    links.push_ordered(global, ip, entries);
                    if let Some(tags) = tags {
                        tags.push(ip, entries);
                    }
                }
            }
        }
    }

    fn select(&mut self, tenant: TenantId) -> Option<u32> {
        match &mut self.selector {
            Selector::Random { eligible } => {
                if eligible.is_empty() {
                    return None;
                }
                let at = self.rng.gen_range(0..eligible.len());
                Some(eligible.swap_remove(at))
            }
            Selector::Ordered {
                fresh,
                fresh_next,
                links,
                global,
                tags,
            } => {
                if let Some(tags) = tags {
                    if let Some(ends) = tags.ends.get_mut(&tenant) {
                        if let Some(ip) = tags.links.pop_front(ends) {
                            links.remove(global, ip);
                            return Some(ip);
                        }
                    }
                }
                if let Some(&ip) = fresh.get(*fresh_next) {
                    *fresh_next += 1;
                    return Some(ip);
                }
                let ip = links.pop_front(global)?;
                if let Some(tags) = tags {
                    let tag = self.entries[ip as usize].tag_tenant.expect("released address is tagged");
                    if let Some(ends) = tags.ends.get_mut(&tag) {
                        tags.links.remove(ends, ip);
                    }
                }
                Some(ip)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;
    use proptest::prelude::*;

    const A: TenantId = TenantId(1);
    const B: TenantId = TenantId(2);

    fn pool(n: u32, policy: Policy) -> Pool {
        Pool::new(PoolConfig::new(n, policy)).unwrap()
    }

    /// Hands every address in the pool to `tenant`.
    fn hold_all(p: &mut Pool, tenant: TenantId, now: Seconds) -> Vec<IpId> {
        (0..p.size()).map(|_| p.allocate(tenant, now).unwrap()).collect()
    }

    #[test]
    fn never_used_addresses_are_eligible() {
        let p = pool(3, Policy::Lru);
        assert_eq!(p.eligible(0), vec![IpId(0), IpId(1), IpId(2)]);
    }

    #[test]
    fn cooldown_boundary_is_inclusive() {
        let mut p = pool(6, Policy::Random);
        let mut ip5 = None;
        for _ in 0..6 {
            let ip = p.allocate(A, 0).unwrap();
            if ip == IpId(5) {
                ip5 = Some(ip);
            }
        }
        p.release(ip5.unwrap(), 1000).unwrap();
        assert!(!p.eligible(2500).contains(&IpId(5)));
        assert!(p.eligible(2800).contains(&IpId(5)));
        assert_eq!(p.allocate(B, 2799), Err(PoolError::PoolExhausted { now: 2799 }));
        assert_eq!(p.allocate(B, 2800), Ok(IpId(5)));
    }

    #[test]
    fn single_eligible_address_is_forced_for_every_policy() {
        for policy in Policy::ALL {
            let mut p = Pool::with_seed(PoolConfig::new(8, policy), 99).unwrap();
            let held = hold_all(&mut p, A, 0);
            let ip7 = *held.iter().find(|ip| **ip == IpId(7)).unwrap();
            p.release(ip7, 10).unwrap();
            assert_eq!(p.allocate(B, 10 + DEFAULT_COOLDOWN), Ok(IpId(7)), "{policy}");
        }
    }

    #[test]
    fn tagging_prefers_own_release_over_older_foreign_one() {
        let mut p = pool(2, Policy::Tagging);
        let ip0 = p.allocate(B, 0).unwrap();
        let ip1 = p.allocate(A, 0).unwrap();
        p.release(ip0, 50).unwrap();
        p.release(ip1, 100).unwrap();
        assert_eq!(p.allocate(A, 5000), Ok(ip1));
    }

    #[test]
    fn lru_returns_oldest_release() {
        let mut p = pool(2, Policy::Lru);
        let ip0 = p.allocate(A, 0).unwrap();
        let ip1 = p.allocate(B, 0).unwrap();
        p.release(ip1, 50).unwrap();
        p.release(ip0, 100).unwrap();
        assert_eq!(p.allocate(A, 5000), Ok(ip1));
    }

    #[test]
    fn lru_hands_out_never_used_first_in_id_order() {
        let mut p = pool(4, Policy::Lru);
        let ip0 = p.allocate(A, 0).unwrap();
        p.release(ip0, 0).unwrap();
        assert_eq!(p.allocate(A, 5000), Ok(IpId(1)));
        assert_eq!(p.allocate(A, 5000), Ok(IpId(2)));
        assert_eq!(p.allocate(A, 5000), Ok(IpId(3)));
        assert_eq!(p.allocate(A, 5000), Ok(IpId(0)));
    }

    #[test]
    fn release_tags_with_the_holder() {
        let mut p = pool(4, Policy::Lru);
        let held = hold_all(&mut p, A, 0);
        let ip3 = held[3];
        assert_eq!(p.release(ip3, 600), Ok(A));
        let e = p.entry(ip3).unwrap();
        assert!(e.is_free());
        assert_eq!(e.tag_tenant, Some(A));
        assert_eq!(e.last_release_time, Some(600));
        assert_eq!(p.release(ip3, 700), Err(PoolError::NotAllocated(ip3)));
        assert_eq!(p.release(IpId(9), 700), Err(PoolError::UnknownIp(IpId(9))));
    }

    #[test]
    fn tagging_returns_the_same_address_after_cooldown() {
        let mut p = pool(50, Policy::Tagging);
        let ip = p.allocate(A, 0).unwrap();
        let _ = p.allocate(B, 0).unwrap();
        p.release(ip, 600).unwrap();
        assert_eq!(p.allocate(A, 600 + DEFAULT_COOLDOWN), Ok(ip));
    }

    #[test]
    fn time_cannot_go_backwards() {
        let mut p = pool(2, Policy::Lru);
        p.allocate(A, 100).unwrap();
        assert_eq!(
            p.allocate(A, 50),
            Err(PoolError::TimeReversed { now: 50, clock: 100 })
        );
    }

    #[test]
    fn empty_pool_rejected() {
        assert_eq!(
            Pool::new(PoolConfig::new(0, Policy::Lru)).unwrap_err(),
            PoolError::EmptyPool
        );
    }

    #[test]
    fn zero_cooldown_keeps_lru_tie_order() {
        let mut p = Pool::new(PoolConfig::new(3, Policy::Lru).with_cooldown(0)).unwrap();
        let held = hold_all(&mut p, A, 0);
        p.release(held[2], 10).unwrap();
        // promotes ip2 alone
        assert_eq!(p.allocate(B, 10), Ok(IpId(2)));
        p.release(IpId(2), 10).unwrap();
        p.release(held[0], 10).unwrap();
        assert_eq!(p.allocate(B, 10), Ok(IpId(0)));
        assert_eq!(p.allocate(B, 10), Ok(IpId(2)));
    }

    #[derive(Debug, Clone)]
    enum Op {
        Alloc(u32),
        Release(usize),
        Wait(u64),
        Switch(Policy),
    }

    fn op() -> impl Strategy<Value = Op> {
        prop_oneof![
            3 => (0u32..5).prop_map(Op::Alloc),
            2 => any::<usize>().prop_map(Op::Release),
            2 => (0u64..1500).prop_map(Op::Wait),
            1 => policy().prop_map(Op::Switch),
        ]
    }

    fn policy() -> impl Strategy<Value = Policy> {
        prop_oneof![Just(Policy::Random), Just(Policy::Lru), Just(Policy::Tagging)]
    }

    /// Replays ops against the pool while checking each allocation against
    /// a brute-force scan of the eligible set.
    fn replay(mut policy: Policy, cooldown: u64, seed: u64, ops: &[Op]) -> Vec<(u64, u32, u32)> {
        let mut p = Pool::with_seed(PoolConfig::new(12, policy).with_cooldown(cooldown), seed).unwrap();
        let mut now = 0;
        let mut log = Vec::new();
        let mut prev_release: HashMap<IpId, u64> = HashMap::new();
        for op in ops {
            match *op {
                Op::Wait(dt) => now += dt,
                Op::Switch(next) => {
                    policy = next;
                    p.set_policy(next);
                }
                Op::Release(k) => {
                    let held: Vec<IpId> = (0..12)
                        .map(IpId)
                        .filter(|ip| !p.entry(*ip).unwrap().is_free())
                        .collect();
                    if !held.is_empty() {
                        let ip = held[k % held.len()];
                        p.release(ip, now).unwrap();
                        prev_release.insert(ip, now);
                    }
                }
                Op::Alloc(t) => {
                    let tenant = TenantId(t);
                    let eligible = p.eligible(now);
                    match p.allocate(tenant, now) {
                        Err(PoolError::PoolExhausted { .. }) => assert!(eligible.is_empty()),
                        Err(e) => panic!("{e}"),
                        Ok(ip) => {
                            assert!(eligible.contains(&ip));
                            if let Some(&r) = prev_release.get(&ip) {
                                assert!(now - r >= cooldown);
                            }
                            let key = |ip: &IpId| {
                                p.entry(*ip).unwrap().last_release_time.map_or((0, 0), |t| (1, t))
                            };
                            let lru_best = eligible.iter().min_by_key(|ip| (key(ip), **ip)).copied();
                            match policy {
                                Policy::Lru => assert_eq!(Some(ip), lru_best),
                                Policy::Tagging => {
                                    let own: Vec<IpId> = eligible
                                        .iter()
                                        .copied()
                                        .filter(|ip| p.entry(*ip).unwrap().tag_tenant == Some(tenant))
                                        .collect();
                                    if own.is_empty() {
                                        assert_eq!(Some(ip), lru_best);
                                    } else {
                                        let best = own.iter().min_by_key(|ip| (key(ip), **ip)).copied();
                                        assert_eq!(Some(ip), best);
                                    }
                                }
                                Policy::Random => {}
                            }
                            let e = p.entry(ip).unwrap();
                            assert_eq!(e.holder(), Some(tenant));
                            assert!(e.prior_tenants.contains(tenant));
                            log.push((now, ip.0, t));
                        }
                    }
                }
            }
        }
        log
    }

    proptest! {
        #[test]
        fn selection_matches_brute_force(policy in policy(), cooldown in 0u64..2000, seed: u64,
                                         ops in prop::collection::vec(op(), 1..200)) {
            replay(policy, cooldown, seed, &ops);
        }

        #[test]
        fn fresh_count_tracks_never_used(policy in policy(), seed: u64,
                                         ops in prop::collection::vec(op(), 1..200)) {
            let mut p = Pool::with_seed(PoolConfig::new(12, policy), seed).unwrap();
            let mut now = 0;
            for op in &ops {
                match *op {
                    Op::Alloc(t) => { let _ = p.allocate(TenantId(t), now); }
                    Op::Wait(dt) => now += dt,
                    Op::Switch(next) => p.set_policy(next),
                    Op::Release(k) => {
                        if let Some(ip) = (0..12).map(IpId).filter(|ip| !p.entry(*ip).unwrap().is_free()).nth(k % 12) {
                            p.release(ip, now).unwrap();
                        }
                    }
                }
                let expect = p.entries().iter().filter(|e| e.prior_tenants.is_empty()).count();
                prop_assert_eq!(p.fresh_count(), expect);
            }
        }

        #[test]
        fn random_is_reproducible(seed: u64, ops in prop::collection::vec(op(), 1..200)) {
            prop_assert_eq!(replay(Policy::Random, 600, seed, &ops), replay(Policy::Random, 600, seed, &ops));
        }
    }
}
