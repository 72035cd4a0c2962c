//! Pool-size estimation from address observations.
//!
//! Observations are bucketed into capture occasions and fed to the
//! Jolly–Seber open-population estimator with Chapman-style small-sample
//! corrections. The capture rate is the share of the estimated pool that was
//! actually observed. [`reuse_stats`] summarises release-to-reallocation
//! intervals from an allocation trace.

use std::collections::{BTreeMap, HashMap};
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pool::{IpId, Seconds};
use crate::sim::{AllocEvent, EventKind};
use crate::stats;

#[derive(Debug, Error, PartialEq)]
pub enum EstimateError {
    #[error("observation log is empty")]
    EmptyLog,
    #[error("occasion length must be positive and finite")]
    InvalidOccasionLength,
    #[error("need at least 3 occasions, history has {0}")]
    TooFewOccasions(usize),
    #[error("no interior occasion has an estimate")]
    NoInteriorEstimate,
    #[error("trace has no release followed by a reallocation")]
    NoReuseEvents,
    #[error("histogram bin width must be positive")]
    InvalidBinWidth,
    #[error("individual {0} has no captures")]
    UncapturedIndividual(usize),
    #[error("capture row {row} has {len} occasions, expected {expected}")]
    RaggedHistory { row: usize, len: usize, expected: usize },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub ip: String,
    pub time: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ObservationLog {
    pub records: Vec<Observation>,
}

impl ObservationLog {
    /// Parses `ip,timestamp_seconds` lines. `#` starts a comment and a
    /// leading header row is tolerated.
    pub fn parse<R: Read>(input: R) -> Result<Self, EstimateError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(input);
        let mut records = Vec::new();
        for (idx, row) in reader.records().enumerate() {
            let row = row.map_err(|e| EstimateError::Parse {
                line: e.position().map_or(0, |p| p.line()),
                message: e.to_string(),
            })?;
            let line = row.position().map_or(idx as u64 + 1, |p| p.line());
            if row.len() == 1 && row[0].is_empty() {
                continue;
            }
            if row.len() != 2 {
                return Err(EstimateError::Parse {
                    line,
                    message: format!("expected 2 fields, found {}", row.len()),
                });
            }
            let time = match row[1].parse::<f64>() {
                Ok(t) if t.is_finite() && t >= 0.0 => t,
                _ if records.is_empty() && idx == 0 => continue,
                _ => {
                    return Err(EstimateError::Parse {
                        line,
                        message: format!("bad timestamp {:?}", &row[1]),
                    })
                }
            };
            if row[0].is_empty() {
                return Err(EstimateError::Parse {
                    line,
                    message: "empty address".into(),
                });
            }
            records.push(Observation {
                ip: row[0].to_owned(),
                time,
            });
        }
        Ok(Self { records })
    }

    /// Allocations made by `observer` in a trace, one observation each.
    pub fn from_trace(trace: &[AllocEvent], observer: crate::pool::TenantId) -> Self {
        let records = trace
            .iter()
            .filter(|e| e.event_type == EventKind::Allocate && e.tenant == observer)
            .map(|e| Observation {
                ip: e.ip.0.to_string(),
                time: e.time as f64,
            })
            .collect();
        Self { records }
    }
}

/// Which occasions each individual was seen in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureHistory {
    pub individuals: Vec<String>,
    pub occasions: usize,
    /// Sorted, distinct occasion indices (0-based) per individual.
    pub captures: Vec<Vec<u32>>,
}

impl CaptureHistory {
    /// Builds a history from a dense 0/1 matrix, one row per individual.
    pub fn from_matrix(rows: &[Vec<bool>]) -> Result<Self, EstimateError> {
        let occasions = rows.first().map_or(0, Vec::len);
        let mut captures = Vec::with_capacity(rows.len());
        for (i, row) in rows.iter().enumerate() {
            if row.len() != occasions {
                return Err(EstimateError::RaggedHistory {
                    row: i,
                    len: row.len(),
                    expected: occasions,
                });
            }
            let occ: Vec<u32> = (0..occasions as u32).filter(|&j| row[j as usize]).collect();
            if occ.is_empty() {
                return Err(EstimateError::UncapturedIndividual(i));
            }
            captures.push(occ);
        }
        Ok(Self {
            individuals: (0..rows.len()).map(|i| i.to_string()).collect(),
            occasions,
            captures,
        })
    }

    pub fn to_matrix(&self) -> Vec<Vec<bool>> {
        self.captures
            .iter()
            .map(|occ| {
                let mut row = vec![false; self.occasions];
                for &j in occ {
                    row[j as usize] = true;
                }
                row
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.captures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.captures.is_empty()
    }
}

/// Buckets observations into occasions of `occasion_length` seconds. The
/// first occasion is the one holding the earliest observation; individuals
/// are ordered by address string.
pub fn build_history(log: &ObservationLog, occasion_length: f64) -> Result<CaptureHistory, EstimateError> {
    if !(occasion_length > 0.0 && occasion_length.is_finite()) {
        return Err(EstimateError::InvalidOccasionLength);
    }
    if log.records.is_empty() {
        return Err(EstimateError::EmptyLog);
    }
    let bucket = |t: f64| (t / occasion_length).floor() as u64;
    let origin = log.records.iter().map(|o| bucket(o.time)).min().unwrap_or(0);
    let mut by_ip: BTreeMap<&str, Vec<u32>> = BTreeMap::new();
    let mut last = 0;
    for o in &log.records {
        let occ = (bucket(o.time) - origin) as u32;
        last = last.max(occ);
        by_ip.entry(o.ip.as_str()).or_default().push(occ);
    }
    let mut individuals = Vec::with_capacity(by_ip.len());
    let mut captures = Vec::with_capacity(by_ip.len());
    for (ip, mut occ) in by_ip {
        occ.sort_unstable();
        occ.dedup();
        individuals.push(ip.to_owned());
        captures.push(occ);
    }
    Ok(CaptureHistory {
        individuals,
        occasions: last as usize + 1,
        captures,
    })
}

/// Per-occasion Jolly–Seber statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccasionEstimate {
    /// 1-based occasion number.
    pub occasion: usize,
    /// Captured at this occasion.
    pub n: u64,
    /// Captured here and at some earlier occasion.
    pub m: u64,
    /// Captured here for the first time.
    pub u: u64,
    /// Released after this occasion (no removals, so equal to `n`).
    pub released: u64,
    /// Of those released here, how many were seen again later.
    pub r: u64,
    /// Seen before and after this occasion but not at it.
    pub z: u64,
    /// Estimated marked population just before this occasion.
    pub m_hat: f64,
    /// Estimated population size; undefined at the first and last occasion.
    pub n_hat: Option<f64>,
}

/// Jolly–Seber estimates with `(R+1)/(r+1)` and `(n+1)/(m+1)` corrections.
///
/// The population estimate is floored at the number caught at that
/// occasion, which also makes it exact when every animal is caught every
/// time.
pub fn jolly_seber(history: &CaptureHistory) -> Result<Vec<OccasionEstimate>, EstimateError> {
    let t = history.occasions;
    if t < 3 {
        return Err(EstimateError::TooFewOccasions(t));
    }
    let mut n = vec![0u64; t];
    let mut m = vec![0u64; t];
    let mut r = vec![0u64; t];
    // individuals with first < i < last, and those among them caught at i
    let mut span = vec![0i64; t + 1];
    let mut middle = vec![0u64; t];
    for occ in &history.captures {
        let (Some(&first), Some(&last)) = (occ.first(), occ.last()) else {
            continue;
        };
        for (k, &j) in occ.iter().enumerate() {
            let j = j as usize;
            n[j] += 1;
            if k > 0 {
                m[j] += 1;
            }
            if k + 1 < occ.len() {
                r[j] += 1;
            }
            if k > 0 && k + 1 < occ.len() {
                middle[j] += 1;
            }
        }
        if last > first + 1 {
            span[first as usize + 1] += 1;
            span[last as usize] -= 1;
        }
    }
    let mut inside = 0i64;
    let mut out = Vec::with_capacity(t);
    for i in 0..t {
        inside += span[i];
        let z = inside as u64 - middle[i];
        let (ni, mi, ri) = (n[i] as f64, m[i] as f64, r[i] as f64);
        let m_hat = mi + (ni + 1.0) * z as f64 / (ri + 1.0);
        let n_hat = (i > 0 && i + 1 < t).then(|| ((ni + 1.0) * m_hat / (mi + 1.0) - 1.0).max(ni));
        out.push(OccasionEstimate {
            occasion: i + 1,
            n: n[i],
            m: m[i],
            u: n[i] - m[i],
            released: n[i],
            r: r[i],
            z,
            m_hat,
            n_hat,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaptureRate {
    pub observed: u64,
    pub estimated_pool: f64,
    pub rate: f64,
}

/// Distinct individuals over the largest interior population estimate,
/// capped at 1.
pub fn capture_rate(history: &CaptureHistory) -> Result<CaptureRate, EstimateError> {
    let estimates = jolly_seber(history)?;
    capture_rate_from(history, &estimates)
}

pub fn capture_rate_from(
    history: &CaptureHistory,
    estimates: &[OccasionEstimate],
) -> Result<CaptureRate, EstimateError> {
    let estimated_pool = estimates
        .iter()
        .filter_map(|e| e.n_hat)
        .fold(None, |acc: Option<f64>, x| Some(acc.map_or(x, |a| a.max(x))))
        .filter(|&x| x > 0.0)
        .ok_or(EstimateError::NoInteriorEstimate)?;
    let observed = history.len() as u64;
    Ok(CaptureRate {
        observed,
        estimated_pool,
        rate: (observed as f64 / estimated_pool).min(1.0),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub start: Seconds,
    pub count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CooldownViolation {
    pub ip: IpId,
    pub released: Seconds,
    pub allocated: Seconds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReuseStats {
    pub count: u64,
    pub min: Seconds,
    pub max: Seconds,
    pub mean: f64,
    pub median: Seconds,
    pub cv: f64,
    pub bin_width: Seconds,
    pub histogram: Vec<HistogramBin>,
    pub cooldown: Seconds,
    pub cooldown_violations: u64,
    /// The first few violations, in trace order.
    pub violation_examples: Vec<CooldownViolation>,
}

const MAX_VIOLATION_EXAMPLES: usize = 20;

/// Reuse intervals (allocation time minus the previous release of the same
/// address) from a trace. Events are taken in time order; equal times keep
/// trace order.
pub fn reuse_intervals(trace: &[AllocEvent]) -> Vec<(IpId, Seconds, Seconds)> {
    let mut order: Vec<&AllocEvent> = trace.iter().collect();
    order.sort_by_key(|e| e.time);
    let mut last_release: HashMap<IpId, Seconds> = HashMap::new();
    let mut out = Vec::new();
    for e in order {
        match e.event_type {
            EventKind::Release => {
                last_release.insert(e.ip, e.time);
            }
            EventKind::Allocate => {
                if let Some(&released) = last_release.get(&e.ip) {
                    out.push((e.ip, released, e.time));
                }
            }
        }
    }
    out
}

pub fn reuse_stats(trace: &[AllocEvent], bin_width: Seconds, cooldown: Seconds) -> Result<ReuseStats, EstimateError> {
    if bin_width == 0 {
        return Err(EstimateError::InvalidBinWidth);
    }
    let pairs = reuse_intervals(trace);
    if pairs.is_empty() {
        return Err(EstimateError::NoReuseEvents);
    }
    let intervals: Vec<Seconds> = pairs.iter().map(|&(_, r, a)| a - r).collect();
    let as_f64: Vec<f64> = intervals.iter().map(|&i| i as f64).collect();
    let mut bins: BTreeMap<Seconds, u64> = BTreeMap::new();
    for &i in &intervals {
        *bins.entry(i / bin_width * bin_width).or_default() += 1;
    }
    let violations: Vec<CooldownViolation> = pairs
        .iter()
        .filter(|&&(_, r, a)| a - r < cooldown)
        .map(|&(ip, released, allocated)| CooldownViolation { ip, released, allocated })
        .collect();
    Ok(ReuseStats {
        count: intervals.len() as u64,
        min: *intervals.iter().min().expect("non-empty"),
        max: *intervals.iter().max().expect("non-empty"),
        mean: stats::mean(&as_f64).expect("non-empty"),
        median: stats::lower_median(&intervals).expect("non-empty"),
        cv: stats::coefficient_of_variation(&as_f64).unwrap_or(0.0),
        bin_width,
        histogram: bins.into_iter().map(|(start, count)| HistogramBin { start, count }).collect(),
        cooldown,
        cooldown_violations: violations.len() as u64,
        violation_examples: violations.into_iter().take(MAX_VIOLATION_EXAMPLES).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pool::TenantId;

    fn rows(bits: &[&str]) -> Vec<Vec<bool>> {
        bits.iter().map(|r| r.bytes().map(|b| b == b'1').collect()).collect()
    }

    #[test]
    fn bucketing_and_dedup() {
        let log = ObservationLog::parse("# comment\n10.0.0.1,0\n10.0.0.1,650\n".as_bytes()).unwrap();
        let h = build_history(&log, 600.0).unwrap();
        assert_eq!(h.to_matrix(), rows(&["11"]));

        let log = ObservationLog::parse("a,0\na,10\n".as_bytes()).unwrap();
        let h = build_history(&log, 600.0).unwrap();
        assert_eq!(h.to_matrix(), rows(&["1"]));
    }

    #[test]
    fn five_by_three_history() {
        let text = "ip,timestamp_seconds\na,5\nb,100\nc,700\nd,650\ne,1300\nb,1250\nc,1201\ne,601\n";
        let h = build_history(&ObservationLog::parse(text.as_bytes()).unwrap(), 600.0).unwrap();
        assert_eq!(h.individuals, ["a", "b", "c", "d", "e"]);
        assert_eq!(h.to_matrix(), rows(&["100", "101", "011", "010", "011"]));
    }

    #[test]
    fn log_errors() {
        assert_eq!(
            build_history(&ObservationLog::default(), 600.0),
            Err(EstimateError::EmptyLog)
        );
        let log = ObservationLog::parse("a,1\n".as_bytes()).unwrap();
        assert_eq!(build_history(&log, 0.0), Err(EstimateError::InvalidOccasionLength));
        assert!(matches!(
            ObservationLog::parse("a,1\nb,x\n".as_bytes()),
            Err(EstimateError::Parse { line: 2, .. })
        ));
        assert!(matches!(
            ObservationLog::parse("a,1,2\n".as_bytes()),
            Err(EstimateError::Parse { .. })
        ));
    }

    #[test]
    fn hand_example() {
        let h = CaptureHistory::from_matrix(&rows(&["101", "111", "011", "010", "110"])).unwrap();
        let est = jolly_seber(&h).unwrap();
        let o = &est[1];
        assert_eq!((o.n, o.m, o.released, o.r, o.z), (4, 2, 4, 2, 1));
        assert!((o.m_hat - 11.0 / 3.0).abs() < 1e-12);
        assert!((o.n_hat.unwrap() - 46.0 / 9.0).abs() < 1e-12);
        assert!(est[0].n_hat.is_none() && est[2].n_hat.is_none());

        let rate = capture_rate(&h).unwrap();
        assert!((rate.rate - 5.0 / (46.0 / 9.0)).abs() < 1e-12);
    }

    #[test]
    fn all_ones_is_exact() {
        let h = CaptureHistory::from_matrix(&vec![vec![true; 5]; 7]).unwrap();
        for e in jolly_seber(&h).unwrap().iter().filter(|e| e.n_hat.is_some()) {
            assert_eq!(e.n_hat, Some(7.0));
        }
        assert_eq!(capture_rate(&h).unwrap().rate, 1.0);
    }

    #[test]
    fn too_few_occasions() {
        let h = CaptureHistory::from_matrix(&rows(&["11", "01"])).unwrap();
        assert_eq!(jolly_seber(&h), Err(EstimateError::TooFewOccasions(2)));
        assert_eq!(capture_rate(&h), Err(EstimateError::TooFewOccasions(2)));
    }

    #[test]
    fn matrix_validation() {
        assert_eq!(
            CaptureHistory::from_matrix(&rows(&["101", "000"])),
            Err(EstimateError::UncapturedIndividual(1))
        );
        assert!(matches!(
            CaptureHistory::from_matrix(&rows(&["101", "00"])),
            Err(EstimateError::RaggedHistory { row: 1, .. })
        ));
    }

    fn ev(event_type: EventKind, time: Seconds, ip: u32) -> AllocEvent {
        AllocEvent {
            event_type,
            time,
            ip: IpId(ip),
            tenant: TenantId(0),
        }
    }

    #[test]
    fn single_reuse_interval() {
        let trace = [ev(EventKind::Allocate, 0, 1), ev(EventKind::Release, 0, 1), ev(EventKind::Allocate, 3600, 1)];
        let s = reuse_stats(&trace, 600, 1800).unwrap();
        assert_eq!((s.count, s.median, s.min, s.max), (1, 3600, 3600, 3600));
        assert_eq!(s.histogram, vec![HistogramBin { start: 3600, count: 1 }]);
        assert_eq!(s.cooldown_violations, 0);
        assert_eq!(s.cv, 0.0);
    }

    #[test]
    fn violation_is_flagged() {
        let trace = [
            ev(EventKind::Release, 100, 4),
            ev(EventKind::Allocate, 1850, 4),
            ev(EventKind::Release, 2000, 4),
            ev(EventKind::Allocate, 5000, 4),
        ];
        let s = reuse_stats(&trace, 1000, 1800).unwrap();
        assert_eq!(s.min, 1750);
        assert_eq!(s.cooldown_violations, 1);
        assert_eq!(
            s.violation_examples,
            vec![CooldownViolation { ip: IpId(4), released: 100, allocated: 1850 }]
        );
    }

    #[test]
    fn no_reuse_is_an_error() {
        let trace = [ev(EventKind::Allocate, 0, 1), ev(EventKind::Release, 10, 1)];
        assert_eq!(reuse_stats(&trace, 600, 1800), Err(EstimateError::NoReuseEvents));
        assert_eq!(reuse_stats(&trace, 0, 1800), Err(EstimateError::InvalidBinWidth));
    }
}
