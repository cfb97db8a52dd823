use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::time::Duration;

use edgecpd::cusum::CvCache;
use edgecpd::protocol::wire::{InitRequest, SamplePush, WireMessage};
use edgecpd::protocol::{run_client, serve, ClientConfig, ServerConfig};
use edgecpd::series::generate_with_changes;
use edgecpd::{CpInjection, DetectorKind, DetectorSpec, GeneratorSpec};
use serde_json::json;

fn series(seed: u64) -> Vec<f64> {
    let gen = GeneratorSpec { seed, ..GeneratorSpec::default() };
    generate_with_changes(&gen, &[CpInjection { t_cp: 250, mean_shift: 2.0 }]).unwrap().values
}

fn specs() -> Vec<DetectorSpec> {
    vec![
        DetectorSpec::new(DetectorKind::Npcusum, json!({ "cv": 2.2 })),
        DetectorSpec::new(DetectorKind::Pcusum, json!({ "cv": 2.2 })),
        DetectorSpec::new(DetectorKind::Bocd, json!({ "n_runs": 20 })),
    ]
}

fn in_process(spec: &DetectorSpec, values: &[f64]) -> Vec<(u64, u64)> {
    let mut det = spec.build(&CvCache::in_memory()).unwrap();
    det.run(values).unwrap().iter().map(|e| (e.detection_seq, e.cp_estimate)).collect()
}

#[test]
fn every_sample_gets_one_reply_and_detections_match_in_process() {
    let server = serve(ServerConfig::default()).unwrap();
    let addr = server.local_addr().to_string();
    let values = series(11);
    for spec in specs() {
        let log = run_client(&ClientConfig::new(&addr, spec.clone(), 0.0), &values).unwrap();
        assert!(!log.incomplete, "{:?}", log.errors);
        assert!(log.errors.is_empty());
        assert_eq!(log.records.len(), 500);
        assert!(log.records.iter().all(|r| r.reply_recv_ns.is_some() && r.error.is_none()));
        let wire: Vec<(u64, u64)> = log.detections().map(|r| (r.seq, r.cp_index.unwrap())).collect();
        assert_eq!(wire, in_process(&spec, &values), "{}", spec.kind);
    }
    assert_eq!(server.samples_processed(), 1500);
}

fn send(w: &mut TcpStream, msg: &WireMessage) {
    let mut line = msg.encode();
    line.push('\n');
    w.write_all(line.as_bytes()).unwrap();
}

#[test]
fn interleaved_sessions_are_isolated() {
    let server = serve(ServerConfig::default()).unwrap();
    let mut stream = TcpStream::connect(server.local_addr()).unwrap();
    stream.set_read_timeout(Some(Duration::from_secs(30))).unwrap();
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let spec = DetectorSpec::new(DetectorKind::Npcusum, json!({ "cv": 2.2 }));
    let a = series(21);
    let b = series(22);
    for sid in ["a", "b"] {
        send(
            &mut stream,
            &WireMessage::Init(InitRequest {
                session_id: sid.into(),
                detector: "npcusum".into(),
                params: spec.params.clone(),
                expected_length: None,
            }),
        );
    }
    let mut got: [Vec<(u64, u64)>; 2] = Default::default();
    for i in 0..a.len() {
        for (k, (sid, v)) in [("a", a[i]), ("b", b[i])].into_iter().enumerate() {
            let seq = i as u64 + 1;
            send(&mut stream, &WireMessage::Sample(SamplePush { session_id: sid.into(), seq, value: v, client_send_ns: 0 }));
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            match WireMessage::decode(&line).unwrap() {
                WireMessage::Reply(r) => {
                    assert_eq!((r.session_id.as_str(), r.seq), (sid, seq));
                    if r.detected {
                        got[k].push((r.seq, r.cp_index.unwrap()));
                    }
                }
                other => panic!("unexpected {other:?}"),
            }
        }
    }
    assert_eq!(got[0], in_process(&spec, &a));
    assert_eq!(got[1], in_process(&spec, &b));
}

fn roundtrip(stream: &mut TcpStream, reader: &mut BufReader<TcpStream>, line: &str) -> WireMessage {
    stream.write_all(line.as_bytes()).unwrap();
    stream.write_all(b"\n").unwrap();
    let mut out = String::new();
    reader.read_line(&mut out).unwrap();
    WireMessage::decode(&out).unwrap()
}

#[test]
fn protocol_errors_are_reported() {
    let server = serve(ServerConfig { max_sessions: 1, ..Default::default() }).unwrap();
    let mut stream = TcpStream::connect(server.local_addr()).unwrap();
    stream.set_read_timeout(Some(Duration::from_secs(10))).unwrap();
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let is_err = |m: &WireMessage| matches!(m, WireMessage::Error(_));

    let m = roundtrip(&mut stream, &mut reader, r#"{"type":"sample","session_id":"x","seq":1,"value":1.0,"client_send_ns":0}"#);
    assert!(is_err(&m));
    assert!(is_err(&roundtrip(&mut stream, &mut reader, "not json")));
    stream
        .write_all(b"{\"type\":\"init\",\"session_id\":\"s\",\"detector\":\"npcusum\",\"params\":{\"cv\":2.0}}\n")
        .unwrap();
    let m = roundtrip(&mut stream, &mut reader, r#"{"type":"init","session_id":"s","detector":"npcusum","params":{}}"#);
    assert!(is_err(&m), "duplicate session");
    let m = roundtrip(&mut stream, &mut reader, r#"{"type":"init","session_id":"t","detector":"npcusum","params":{"cv":2.0}}"#);
    match m {
        WireMessage::Error(e) => assert!(e.error.contains("session limit"), "{}", e.error),
        other => panic!("{other:?}"),
    }
    let m = roundtrip(&mut stream, &mut reader, r#"{"type":"sample","session_id":"s","seq":1,"value":1.0,"client_send_ns":0}"#);
    assert!(matches!(m, WireMessage::Reply(_)));
    let m = roundtrip(&mut stream, &mut reader, r#"{"type":"sample","session_id":"s","seq":1,"value":1.0,"client_send_ns":0}"#);
    match m {
        WireMessage::Error(e) => assert_eq!(e.seq, Some(1)),
        other => panic!("{other:?}"),
    }
    let m = roundtrip(&mut stream, &mut reader, r#"{"type":"init","session_id":"u","detector":"magic","params":{}}"#);
    assert!(is_err(&m));
    let mut rest = String::new();
    assert_eq!(reader.read_line(&mut rest).unwrap(), 0, "unknown detector closes the connection");
    drop(stream);
    std::thread::sleep(Duration::from_millis(100));
    assert_eq!(server.active_sessions(), 0);
}

#[test]
fn client_without_server_fails() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let spec = DetectorSpec::defaults(DetectorKind::Npcusum);
    assert!(run_client(&ClientConfig::new(addr.to_string(), spec, 0.0), &[1.0]).is_err());
}

#[test]
fn paced_client_respects_schedule() {
    let server = serve(ServerConfig::default()).unwrap();
    let spec = DetectorSpec::new(DetectorKind::Npcusum, json!({ "cv": 2.2 }));
    let values = series(3)[..40].to_vec();
    let log = run_client(&ClientConfig::new(server.local_addr().to_string(), spec, 10.0), &values).unwrap();
    assert_eq!(log.records.len(), 40);
    let span = log.send_duration_ns() as f64 / 1e6;
    assert!((span - 390.0).abs() < 40.0, "span {span} ms");
    for w in log.records.windows(2) {
        assert!(w[1].client_send_ns > w[0].client_send_ns);
    }
}
