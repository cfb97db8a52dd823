//! Newline-delimited JSON records.
//!
//! Encoding is canonical: fields are written in a fixed order, reals with 17
//! significant digits, so `encode(decode(line)) == line` for every encoded
//! line and `decode(encode(m)) == m` for every message with finite values.

use std::fmt::Write as _;

use serde::Deserialize;
use serde_json::{Map, Value};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitRequest {
    pub session_id: String,
    /// Kept as text so that unknown names reach the server's registry.
    pub detector: String,
    #[serde(default = "empty_params")]
    pub params: Value,
    #[serde(default)]
    pub expected_length: Option<u64>,
}

fn empty_params() -> Value {
    Value::Object(Map::new())
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplePush {
    pub session_id: String,
    pub seq: u64,
    pub value: f64,
    pub client_send_ns: u64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectReply {
    pub session_id: String,
    pub seq: u64,
    pub detected: bool,
    pub cp_index: Option<u64>,
    pub server_recv_ns: u64,
    pub server_send_ns: u64,
    pub processing_ns: u64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorReply {
    pub session_id: Option<String>,
    pub seq: Option<u64>,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum WireMessage {
    Init(InitRequest),
    Sample(SamplePush),
    Reply(DetectReply),
    Error(ErrorReply),
}

fn push_str(out: &mut String, s: &str) {
    out.push_str(&serde_json::to_string(s).expect("strings always serialize"));
}

fn push_f64(out: &mut String, v: f64) {
    if v.is_finite() {
        let _ = write!(out, "{v:.16e}");
    } else {
        out.push_str("null");
    }
}

fn push_opt_u64(out: &mut String, v: Option<u64>) {
    match v {
        Some(v) => {
            let _ = write!(out, "{v}");
        }
        None => out.push_str("null"),
    }
}

impl WireMessage {
    pub fn type_name(&self) -> &'static str {
        match self {
            WireMessage::Init(_) => "init",
            WireMessage::Sample(_) => "sample",
            WireMessage::Reply(_) => "reply",
            WireMessage::Error(_) => "error",
        }
    }

    /// One line, without the trailing newline.
    pub fn encode(&self) -> String {
        let mut o = String::with_capacity(160);
        o.push_str("{\"type\":\"");
        o.push_str(self.type_name());
        o.push('"');
        match self {
            WireMessage::Init(m) => {
                o.push_str(",\"session_id\":");
                push_str(&mut o, &m.session_id);
                o.push_str(",\"detector\":");
                push_str(&mut o, &m.detector);
                o.push_str(",\"params\":");
                o.push_str(&serde_json::to_string(&m.params).expect("values always serialize"));
                if let Some(n) = m.expected_length {
                    let _ = write!(o, ",\"expected_length\":{n}");
                }
            }
            WireMessage::Sample(m) => {
                o.push_str(",\"session_id\":");
                push_str(&mut o, &m.session_id);
                let _ = write!(o, ",\"seq\":{},\"value\":", m.seq);
                push_f64(&mut o, m.value);
                let _ = write!(o, ",\"client_send_ns\":{}", m.client_send_ns);
            }
            WireMessage::Reply(m) => {
                o.push_str(",\"session_id\":");
                push_str(&mut o, &m.session_id);
                let _ = write!(o, ",\"seq\":{},\"detected\":{},\"cp_index\":", m.seq, m.detected);
                push_opt_u64(&mut o, m.cp_index);
                let _ = write!(
                    o,
                    ",\"server_recv_ns\":{},\"server_send_ns\":{},\"processing_ns\":{}",
                    m.server_recv_ns, m.server_send_ns, m.processing_ns
                );
            }
            WireMessage::Error(m) => {
                o.push_str(",\"session_id\":");
                match &m.session_id {
                    Some(s) => push_str(&mut o, s),
                    None => o.push_str("null"),
                }
                o.push_str(",\"seq\":");
                push_opt_u64(&mut o, m.seq);
                o.push_str(",\"error\":");
                push_str(&mut o, &m.error);
            }
        }
        o.push('}');
        o
    }

    pub fn decode(line: &str) -> Result<Self> {
        let fail = |reason: String| Error::Decode { line: line.to_string(), reason };
        let trimmed = line.strip_suffix('\n').unwrap_or(line);
        let trimmed = trimmed.strip_suffix('\r').unwrap_or(trimmed);
        let value: Value = serde_json::from_str(trimmed).map_err(|e| fail(e.to_string()))?;
        let Value::Object(mut map) = value else {
            return Err(fail("not an object".into()));
        };
        let kind = match map.remove("type") {
            Some(Value::String(s)) => s,
            Some(_) => return Err(fail("`type` is not a string".into())),
            None => return Err(fail("missing `type`".into())),
        };
        fn body<T: serde::de::DeserializeOwned>(map: Map<String, Value>) -> serde_json::Result<T> {
            serde_json::from_value(Value::Object(map))
        }
        let msg = match kind.as_str() {
            "init" => body(map).map(WireMessage::Init),
            "sample" => body(map).map(WireMessage::Sample),
            "reply" => body(map).map(WireMessage::Reply),
            "error" => body(map).map(WireMessage::Error),
            other => return Err(fail(format!("unknown type {other:?}"))),
        };
        msg.map_err(|e| fail(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use serde_json::json;

    fn sample(value: f64) -> WireMessage {
        WireMessage::Sample(SamplePush { session_id: "s".into(), seq: 3, value, client_send_ns: 99 })
    }

    fn corpus() -> Vec<String> {
        vec![
            r#"{"type":"init","session_id":"a","detector":"npcusum","params":{}}"#.into(),
            r#"{"type":"init","session_id":"b\"q","detector":"bocd","params":{"n_runs":10,"q_weight":0.9},"expected_length":500}"#.into(),
            r#"{"type":"sample","session_id":"a","seq":1,"value":-1.2345678901234567e-3,"client_send_ns":123456789}"#.into(),
            r#"{"type":"sample","session_id":"a","seq":2,"value":0.0000000000000000e0,"client_send_ns":0}"#.into(),
            r#"{"type":"reply","session_id":"a","seq":1,"detected":false,"cp_index":null,"server_recv_ns":10,"server_send_ns":20,"processing_ns":5}"#.into(),
            r#"{"type":"reply","session_id":"a","seq":260,"detected":true,"cp_index":260,"server_recv_ns":18446744073709551615,"server_send_ns":18446744073709551615,"processing_ns":0}"#.into(),
            r#"{"type":"error","session_id":null,"seq":null,"error":"malformed"}"#.into(),
            r#"{"type":"error","session_id":"a","seq":7,"error":"seq not increasing"}"#.into(),
        ]
    }

    #[test]
    fn corpus_round_trips() {
        for line in corpus() {
            let msg = WireMessage::decode(&line).unwrap();
            assert_eq!(msg.encode(), line);
        }
    }

    #[test]
    fn messages_round_trip() {
        let msgs = vec![
            WireMessage::Init(InitRequest {
                session_id: "x".into(),
                detector: "pcusum".into(),
                params: json!({"ar_order": 1, "cv": 2.5}),
                expected_length: None,
            }),
            sample(std::f64::consts::PI),
            WireMessage::Reply(DetectReply {
                session_id: "x".into(),
                seq: 4,
                detected: true,
                cp_index: Some(2),
                server_recv_ns: 1,
                server_send_ns: 9,
                processing_ns: 3,
            }),
            WireMessage::Error(ErrorReply { session_id: None, seq: Some(1), error: "é\n".into() }),
        ];
        for m in msgs {
            let line = m.encode();
            assert!(!line.contains('\n'));
            assert_eq!(WireMessage::decode(&line).unwrap(), m);
        }
    }

    #[test]
    fn errors_carry_the_raw_line() {
        let line = r#"{"type":"bogus","session_id":"a"}"#;
        match WireMessage::decode(line) {
            Err(Error::Decode { line: raw, .. }) => assert_eq!(raw, line),
            other => panic!("{other:?}"),
        }
        let truncated = &corpus()[2][..40];
        assert!(matches!(WireMessage::decode(truncated), Err(Error::Decode { .. })));
        assert!(WireMessage::decode(r#"{"type":"sample","session_id":"a","seq":1,"value":null,"client_send_ns":1}"#).is_err());
        assert!(WireMessage::decode(r#"{"type":"sample","session_id":"a","seq":1,"value":1,"client_send_ns":1,"x":2}"#).is_err());
    }

    #[test]
    fn values_carry_seventeen_digits() {
        let line = sample(0.1).encode();
        assert!(line.contains("\"value\":1.0000000000000001e-1"), "{line}");
    }

    #[test]
    fn random_bit_patterns_round_trip() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut checked = 0;
        while checked < 100_000 {
            let v = f64::from_bits(rng.random());
            if !v.is_finite() {
                continue;
            }
            match WireMessage::decode(&sample(v).encode()).unwrap() {
                WireMessage::Sample(s) => assert_eq!(s.value.to_bits(), v.to_bits()),
                other => panic!("{other:?}"),
            }
            checked += 1;
        }
    }

    proptest! {
        #[test]
        fn any_finite_float_round_trips(v in any::<f64>().prop_filter("finite", |v| v.is_finite())) {
            match WireMessage::decode(&sample(v).encode()).unwrap() {
                WireMessage::Sample(s) => prop_assert_eq!(s.value.to_bits(), v.to_bits()),
                _ => prop_assert!(false),
            }
        }
    }
}
