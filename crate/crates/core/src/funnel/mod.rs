//! Four-stage session filter: blocklisted sources, scanners, empty sessions,
//! then application-layer rules.

mod record;
mod rules;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::net::PrefixSet;

pub use record::{
    parse_http_request, read_sessions, write_sessions, HttpHints, SessionRecord, MAX_PAYLOAD_PREFIX,
};
pub use rules::{builtin_rules, Predicate, Rule, RuleSet};

#[derive(Debug, Error, PartialEq)]
pub enum FunnelError {
    #[error("line {line}: malformed rule: {message}")]
    MalformedRule { line: usize, message: String },
    #[error("line {line}: bad session record: {message}")]
    Record { line: usize, message: String },
    #[error("read error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Network,
    Transport,
    Session,
    Application,
    Kept,
}

impl Stage {
    pub const FILTERS: [Stage; 4] = [
        Stage::Network,
        Stage::Transport,
        Stage::Session,
        Stage::Application,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Network => "network",
            Stage::Transport => "transport",
            Stage::Session => "session",
            Stage::Application => "application",
            Stage::Kept => "kept",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageVerdict {
    pub session_id: String,
    pub stage: Stage,
    pub reason: String,
}

/// Split of a stage's input. Indices refer to the slice the stage was given.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Partition {
    pub kept: Vec<usize>,
    pub dropped: Vec<(usize, String)>,
}

impl Partition {
    fn from_fn<'a>(
        sessions: &[&'a SessionRecord],
        mut drop_reason: impl FnMut(&'a SessionRecord) -> Option<String>,
    ) -> Self {
        let mut p = Self::default();
        for (i, s) in sessions.iter().enumerate() {
            match drop_reason(s) {
                Some(reason) => p.dropped.push((i, reason)),
                None => p.kept.push(i),
            }
        }
        p
    }
}

pub fn stage_network(sessions: &[&SessionRecord], blocklist: &PrefixSet) -> Partition {
    Partition::from_fn(sessions, |s| {
        blocklist.contains(s.src_ip).then(|| "blocklist".to_owned())
    })
}

/// Keeps a source only if, across all of `sessions`, it reached exactly one
/// destination address on exactly one port.
pub fn stage_transport(sessions: &[&SessionRecord]) -> Partition {
    let mut seen: HashMap<Ipv4Addr, (HashSet<Ipv4Addr>, HashSet<u16>)> = HashMap::new();
    for s in sessions {
        let e = seen.entry(s.src_ip).or_default();
        e.0.insert(s.dst_ip);
        e.1.insert(s.dst_port);
    }
    Partition::from_fn(sessions, |s| {
        let (ips, ports) = &seen[&s.src_ip];
        if ips.len() > 1 {
            Some("multi_dst".to_owned())
        } else if ports.len() > 1 {
            Some("multi_port".to_owned())
        } else {
            None
        }
    })
}

pub fn stage_session(sessions: &[&SessionRecord]) -> Partition {
    Partition::from_fn(sessions, |s| {
        if !s.handshake_complete {
            Some("no_handshake".to_owned())
        } else if s.client_payload_len == 0 {
            Some("no_payload".to_owned())
        } else {
            None
        }
    })
}

pub fn stage_application(sessions: &[&SessionRecord], rules: &RuleSet) -> Partition {
    Partition::from_fn(sessions, |s| rules.first_match(s).map(|r| r.reason.clone()))
}

#[derive(Debug, Clone, Default)]
pub struct FunnelConfig {
    pub blocklist: PrefixSet,
    pub rules: RuleSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StageCounts {
    pub ips: u64,
    pub sessions: u64,
    pub bytes: u64,
}

impl StageCounts {
    fn of(sessions: &[&SessionRecord]) -> Self {
        let ips: HashSet<Ipv4Addr> = sessions.iter().map(|s| s.src_ip).collect();
        Self {
            ips: ips.len() as u64,
            sessions: sessions.len() as u64,
            bytes: sessions.iter().map(|s| s.client_payload_len).sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRow {
    /// `initial` or the name of the stage whose survivors are counted.
    pub stage: String,
    #[serde(flatten)]
    pub counts: StageCounts,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunnelReport {
    pub stages: Vec<StageRow>,
    /// Dropped sessions per `stage/reason`.
    pub drops: BTreeMap<String, u64>,
    /// One verdict per input session, in input order.
    pub verdicts: Vec<StageVerdict>,
}

impl FunnelReport {
    pub fn survivors<'a>(&self, sessions: &'a [SessionRecord]) -> Vec<&'a SessionRecord> {
        sessions
            .iter()
            .zip(&self.verdicts)
            .filter(|(_, v)| v.stage == Stage::Kept)
            .map(|(s, _)| s)
            .collect()
    }
}

pub fn run_funnel(sessions: &[SessionRecord], config: &FunnelConfig) -> FunnelReport {
    let mut verdicts: Vec<Option<(Stage, String)>> = vec![None; sessions.len()];
    let mut alive: Vec<usize> = (0..sessions.len()).collect();
    let mut stages = Vec::with_capacity(5);
    let refs = |alive: &[usize]| alive.iter().map(|&i| &sessions[i]).collect::<Vec<_>>();

    stages.push(StageRow {
        stage: "initial".into(),
        counts: StageCounts::of(&refs(&alive)),
    });
    for stage in Stage::FILTERS {
        let current = refs(&alive);
        let part = match stage {
            Stage::Network => stage_network(&current, &config.blocklist),
            Stage::Transport => stage_transport(&current),
            Stage::Session => stage_session(&current),
            Stage::Application => stage_application(&current, &config.rules),
            Stage::Kept => unreachable!(),
        };
        for (i, reason) in part.dropped {
            verdicts[alive[i]] = Some((stage, reason));
        }
        alive = part.kept.iter().map(|&i| alive[i]).collect();
        stages.push(StageRow {
            stage: stage.as_str().into(),
            counts: StageCounts::of(&refs(&alive)),
        });
    }

    let mut drops = BTreeMap::new();
    let verdicts = sessions
        .iter()
        .zip(verdicts)
        .map(|(s, v)| {
            let (stage, reason) = v.unwrap_or((Stage::Kept, "passed".to_owned()));
            if stage != Stage::Kept {
                *drops.entry(format!("{stage}/{reason}")).or_insert(0) += 1;
            }
            StageVerdict {
                session_id: s.session_id.clone(),
                stage,
                reason,
            }
        })
        .collect();
    FunnelReport {
        stages,
        drops,
        verdicts,
    }
}
