//! Tab-separated renderings of the reports. One header line, then rows.

use std::fmt::Display;
use std::fmt::Write;

use cloudsquat_core::attribute::AttributeReport;
use cloudsquat_core::estimate::{CaptureRate, OccasionEstimate, ReuseStats};
use cloudsquat_core::funnel::FunnelReport;
use cloudsquat_core::SimReport;

fn opt<T: Display>(v: Option<T>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| v.to_string())
}

fn row(out: &mut String, cells: &[&dyn Display]) {
    for (i, c) in cells.iter().enumerate() {
        if i > 0 {
            out.push('\t');
        }
        write!(out, "{c}").unwrap();
    }
    out.push('\n');
}

pub fn sim_rows(reports: &[SimReport]) -> String {
    let mut out = String::from(
        "policy\tseed\tunique_ips\tmean_prev_tenants\tmedian_reuse\tacquisitions\tticks\twarmup_ticks\tend_time\tstalled\n",
    );
    for r in reports {
        let s = r.summary.as_ref();
        row(
            &mut out,
            &[
                &r.policy,
                &r.config.seed,
                &opt(s.map(|s| s.unique_ips)),
                &opt(s.map(|s| s.mean_prev_tenants)),
                &opt(s.and_then(|s| s.median_reuse)),
                &r.metrics.acquisitions,
                &r.ticks,
                &r.warmup_ticks,
                &r.end_time,
                &r.stalled,
            ],
        );
    }
    out
}

pub fn estimate(estimates: &[OccasionEstimate], rate: &CaptureRate) -> String {
    let mut out = String::from("occasion\tn\tm\tu\treleased\tr\tz\tm_hat\tn_hat\n");
    for e in estimates {
        row(
            &mut out,
            &[&e.occasion, &e.n, &e.m, &e.u, &e.released, &e.r, &e.z, &e.m_hat, &opt(e.n_hat)],
        );
    }
    writeln!(out, "# observed={} estimated_pool={} rate={}", rate.observed, rate.estimated_pool, rate.rate).unwrap();
    out
}

pub fn reuse(stats: &ReuseStats) -> String {
    let mut out = String::from("metric\tvalue\n");
    let metrics: [(&str, &dyn Display); 8] = [
        ("count", &stats.count),
        ("min", &stats.min),
        ("max", &stats.max),
        ("mean", &stats.mean),
        ("median", &stats.median),
        ("cv", &stats.cv),
        ("cooldown", &stats.cooldown),
        ("cooldown_violations", &stats.cooldown_violations),
    ];
    for (k, v) in metrics {
        row(&mut out, &[&k, v]);
    }
    out.push_str("bin_start\tcount\n");
    for b in &stats.histogram {
        row(&mut out, &[&b.start, &b.count]);
    }
    out
}

pub fn funnel(report: &FunnelReport) -> String {
    let mut out = String::from("stage\tips\tsessions\tbytes\n");
    for s in &report.stages {
        row(&mut out, &[&s.stage, &s.counts.ips, &s.counts.sessions, &s.counts.bytes]);
    }
    out.push_str("drop\tsessions\n");
    for (k, v) in &report.drops {
        row(&mut out, &[k, v]);
    }
    out
}

/// Long format: `section<TAB>key<TAB>value`.
pub fn attribute(report: &AttributeReport) -> String {
    let mut out = String::from("section\tkey\tvalue\n");
    let mut put = |section: &str, key: &str, value: &dyn Display| row(&mut out, &[&section, &key, value]);
    put("total", "sessions", &report.sessions);
    for (k, v) in &report.sources {
        put("source", k, v);
    }
    for (k, v) in &report.ua_services {
        put("ua_service", k, v);
    }
    let h = &report.host_kinds;
    for (k, v) in [
        ("absent", h.absent),
        ("malformed", h.malformed),
        ("inconsistent", h.inconsistent),
        ("ip_literal", h.ip_literal),
        ("ipbn", h.ipbn),
        ("wildcard_dns", h.wildcard_dns),
        ("domain_name", h.domain_name),
    ] {
        put("host_kind", k, &v);
    }
    let s = &report.host_kind_shares;
    put("host_kind_share", "ip_literal", &s.ip_literal);
    put("host_kind_share", "ipbn", &s.ipbn);
    put("host_kind_share", "other", &s.other);
    for (k, v) in &report.validation {
        put("validation", k, v);
    }
    let d = &report.domains;
    put("domains", "sessions", &d.sessions);
    put("domains", "unique_slds", &d.unique_slds);
    put("domains", "unique_etlds", &d.unique_etlds);
    put("domains", "slds_two_digits", &d.slds_two_digits);
    put("domains", "slds_encoding_ip", &d.slds_encoding_ip);
    let r = &d.rank_buckets;
    put("rank", "top_1k", &r.top_1k);
    put("rank", "top_10k", &r.top_10k);
    put("rank", "top_1m", &r.top_1m);
    put("rank", "unranked", &r.unranked);
    for (k, v) in &d.etld_slds {
        put("etld_slds", k, v);
    }
    for (k, v) in &d.sld_min_depth {
        put("sld_min_depth", k, v);
    }
    out
}
