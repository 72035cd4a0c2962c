//! Intrusive doubly linked lists over address indices. Each address sits in
//! at most one list per [`Links`] arena, so removal is O(1).

use super::PoolEntry;

const NIL: u32 = u32::MAX;

#[derive(Debug, Clone, Copy)]
pub(super) struct Ends {
    head: u32,
    tail: u32,
}

impl Ends {
    pub const EMPTY: Ends = Ends { head: NIL, tail: NIL };
}

#[derive(Debug, Clone)]
pub(super) struct Links {
    prev: Vec<u32>,
    next: Vec<u32>,
}

#[inline]
fn key(entries: &[PoolEntry], ip: u32) -> (u64, u32) {
    (entries[ip as usize].last_release_time.unwrap_or(0), ip)
}

impl Links {
    pub fn new(n: usize) -> Self {
        Self {
            prev: vec![NIL; n],
            next: vec![NIL; n],
        }
    }

    /// Inserts keeping (release time, id) order. Promotions arrive in that
    /// order already, so this is an append except for same-instant churn.
    pub fn push_ordered(&mut self, ends: &mut Ends, ip: u32, entries: &[PoolEntry]) {
        let k = key(entries, ip);
        let mut after = ends.tail;
        while after != NIL && key(entries, after) > k {
            after = self.prev[after as usize];
        }
        let before = if after == NIL { ends.head } else { self.next[after as usize] };
        self.prev[ip as usize] = after;
        self.next[ip as usize] = before;
        if after == NIL {
            ends.head = ip;
        } else {
            self.next[after as usize] = ip;
        }
        if before == NIL {
            ends.tail = ip;
        } else {
            self.prev[before as usize] = ip;
        }
    }

    pub fn remove(&mut self, ends: &mut Ends, ip: u32) {
        let (p, n) = (self.prev[ip as usize], self.next[ip as usize]);
        if p == NIL {
            debug_assert_eq!(ends.head, ip);
            ends.head = n;
        } else {
            self.next[p as usize] = n;
        }
        if n == NIL {
            debug_assert_eq!(ends.tail, ip);
            ends.tail = p;
        } else {
            self.prev[n as usize] = p;
        }
        self.prev[ip as usize] = NIL;
        self.next[ip as usize] = NIL;
    }

    pub fn pop_front(&mut self, ends: &mut Ends) -> Option<u32> {
        let ip = ends.head;
        if ip == NIL {
            return None;
        }
        self.remove(ends, ip);
        Some(ip)
    }
}
