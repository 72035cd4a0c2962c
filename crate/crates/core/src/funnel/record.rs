use std::io::{BufRead, BufReader, Read, Write};
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use super::FunnelError;

pub const MAX_PAYLOAD_PREFIX: usize = 4096;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpHints {
    pub method: String,
    pub path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub host: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_agent: Option<String>,
}

/// One TCP session seen by a collection server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionRecord {
    pub session_id: String,
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    pub dst_port: u16,
    pub start_time: f64,
    pub handshake_complete: bool,
    pub client_payload_len: u64,
    #[serde(default, with = "b64", skip_serializing_if = "Vec::is_empty")]
    pub payload_prefix: Vec<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub http: Option<HttpHints>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tls_sni: Option<String>,
}

mod b64 {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        STANDARD.decode(text.trim()).map_err(serde::de::Error::custom)
    }
}

impl SessionRecord {
    /// HTTP hints as recorded, or parsed from the payload when absent.
    pub fn http_hints(&self) -> Option<HttpHints> {
        self.http.clone().or_else(|| parse_http_request(&self.payload_prefix))
    }

    /// Host from the HTTP Host header, else the TLS SNI.
    pub fn host(&self) -> Option<String> {
        self.http_hints()
            .and_then(|h| h.host)
            .or_else(|| self.tls_sni.clone())
    }
}

const METHODS: &[&str] = &[
    "GET", "POST", "HEAD", "PUT", "DELETE", "OPTIONS", "PATCH", "CONNECT", "TRACE",
];

/// Minimal request-line and header parse. Returns None unless the first line
/// looks like `METHOD target HTTP/x`.
pub fn parse_http_request(payload: &[u8]) -> Option<HttpHints> {
    let text = String::from_utf8_lossy(payload);
    let mut lines = text.split("\r\n").flat_map(|l| l.split('\n'));
    let request = lines.next()?;
    let mut parts = request.split(' ');
    let method = parts.next()?;
    let path = parts.next()?;
    let version = parts.next()?;
    if !METHODS.contains(&method) || path.is_empty() || !version.starts_with("HTTP/") {
        return None;
    }
    let mut hints = HttpHints {
        method: method.to_owned(),
        path: path.to_owned(),
        host: None,
        user_agent: None,
    };
    for line in lines {
        if line.is_empty() {
            break;
        }
        let Some((name, value)) = line.split_once(':') else {
            continue;
        };
        let value = value.trim();
        if name.eq_ignore_ascii_case("host") && hints.host.is_none() {
            hints.host = Some(value.to_owned());
        } else if name.eq_ignore_ascii_case("user-agent") && hints.user_agent.is_none() {
            hints.user_agent = Some(value.to_owned());
        }
    }
    Some(hints)
}

/// Reads line-delimited JSON session records. Blank lines are skipped and
/// payload prefixes longer than the cap are truncated.
pub fn read_sessions<R: Read>(input: R) -> Result<Vec<SessionRecord>, FunnelError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(input).lines().enumerate() {
        let line = line.map_err(|e| FunnelError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut rec: SessionRecord =
            serde_json::from_str(&line).map_err(|e| FunnelError::Record {
                line: i + 1,
                message: e.to_string(),
            })?;
        rec.payload_prefix.truncate(MAX_PAYLOAD_PREFIX);
        if rec.client_payload_len < rec.payload_prefix.len() as u64 {
            return Err(FunnelError::Record {
                line: i + 1,
                message: format!(
                    "client_payload_len {} is shorter than the {}-byte payload prefix",
                    rec.client_payload_len,
                    rec.payload_prefix.len()
                ),
            });
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_sessions<'a, W: Write>(
    mut out: W,
    sessions: impl IntoIterator<Item = &'a SessionRecord>,
) -> std::io::Result<()> {
    for s in sessions {
        serde_json::to_writer(&mut out, s)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_request_headers() {
        let h = parse_http_request(
            b"GET /index.html HTTP/1.1\r\nHost: api.example.com\r\nUser-Agent: curl/8.0\r\n\r\nbody",
        )
        .unwrap();
        assert_eq!(h.method, "GET");
        assert_eq!(h.path, "/index.html");
        assert_eq!(h.host.as_deref(), Some("api.example.com"));
        assert_eq!(h.user_agent.as_deref(), Some("curl/8.0"));
        assert!(parse_http_request(b"\x16\x03\x01\x02\x00").is_none());
        assert!(parse_http_request(b"FOO / HTTP/1.1\r\n").is_none());
        assert!(parse_http_request(b"GET /").is_none());
    }

    #[test]
    fn jsonl_round_trip() {
        let rec = SessionRecord {
            session_id: "s1".into(),
            src_ip: "192.0.2.1".parse().unwrap(),
            dst_ip: "203.0.113.15".parse().unwrap(),
            dst_port: 80,
            start_time: 12.5,
            handshake_complete: true,
            client_payload_len: 10,
            payload_prefix: vec![0, 159, 255, b'a'],
            http: None,
            tls_sni: Some("x.example.com".into()),
        };
        let mut buf = Vec::new();
        write_sessions(&mut buf, [&rec]).unwrap();
        assert!(String::from_utf8_lossy(&buf).contains("\"AJ//YQ==\""));
        let back = read_sessions(&buf[..]).unwrap();
        assert_eq!(back, vec![rec]);
    }

    #[test]
    fn rejects_bad_records() {
        let short = r#"{"session_id":"a","src_ip":"1.2.3.4","dst_ip":"5.6.7.8","dst_port":1,"start_time":0,"handshake_complete":true,"client_payload_len":1,"payload_prefix":"YWJj"}"#;
        assert!(matches!(
            read_sessions(short.as_bytes()),
            Err(FunnelError::Record { line: 1, .. })
        ));
        let bad_ip = r#"{"session_id":"a","src_ip":"1.2.3","dst_ip":"5.6.7.8","dst_port":1,"start_time":0,"handshake_complete":true,"client_payload_len":1}"#;
        assert!(read_sessions(format!("\n{bad_ip}").as_bytes()).is_err());
        assert!(read_sessions("".as_bytes()).unwrap().is_empty());
    }
}
