use std::net::Ipv4Addr;

use criterion::{black_box, criterion_group, criterion_main, Criterion, Throughput};

use cloudsquat_core::attribute::{self, PublicSuffixList, References};
use cloudsquat_core::funnel::{self, FunnelConfig, SessionRecord};
use cloudsquat_core::net::PrefixSet;

const HOSTS: &[&str] = &[
    "api.example.com",
    "203.0.113.15",
    "ec2-203-0-113-15.compute-1.amazonaws.com",
    "hooks.app42.example.co.uk",
    "10.0.0.1.xip.io",
];

const PAYLOADS: &[&[u8]] = &[
    b"GET / HTTP/1.1\r\nHost: {host}\r\nUser-Agent: Mozilla/5.0\r\n\r\n",
    b"POST /hook HTTP/1.1\r\nHost: {host}\r\nUser-Agent: Amazon Simple Notification Service Agent\r\n\r\n",
    b"GET /x?c=wget%20http://a/b HTTP/1.1\r\nHost: {host}\r\n\r\n",
    b"CONNECT {host}:443 HTTP/1.1\r\n\r\n",
    b"\x13BitTorrent protocol\0\0\0\0",
];

fn corpus(n: u32) -> Vec<SessionRecord> {
    (0..n)
        .map(|i| {
            let host = HOSTS[(i % 5) as usize];
            let payload = String::from_utf8_lossy(PAYLOADS[(i / 5 % 5) as usize]).replace("{host}", host);
            // Every 7th source also shows up on a second port.
            let src = if i % 7 == 0 { i / 7 } else { 100_000 + i };
            SessionRecord {
                session_id: format!("s{i}"),
                src_ip: Ipv4Addr::from(0x6440_0000 + src),
                dst_ip: Ipv4Addr::new(203, 0, 113, (i % 250) as u8),
                dst_port: if i % 14 == 0 { 8080 } else { 80 },
                start_time: f64::from(i),
                handshake_complete: i % 11 != 0,
                client_payload_len: payload.len() as u64,
                payload_prefix: payload.into_bytes(),
                http: None,
                tls_sni: None,
            }
        })
        .collect()
}

fn triage(c: &mut Criterion) {
    let sessions = corpus(20_000);
    let config = FunnelConfig {
        blocklist: PrefixSet::parse_netset("198.51.100.0/24\n100.64.0.0/28\n".as_bytes()).unwrap(),
        ..Default::default()
    };
    let mut refs = References::new();
    refs.psl = PublicSuffixList::from_rules(["com", "uk", "co.uk", "io"]);

    let mut group = c.benchmark_group("triage");
    group.throughput(Throughput::Elements(sessions.len() as u64));
    group.sample_size(20);
    group.bench_function("funnel", |b| b.iter(|| black_box(funnel::run_funnel(&sessions, &config))));
    group.bench_function("attribute", |b| {
        b.iter(|| black_box(attribute::attribute_report(&sessions, &refs)))
    });
    group.finish();
}

criterion_group!(benches, triage);
criterion_main!(benches);
