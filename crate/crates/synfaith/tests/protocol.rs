//! Client behaviour against well-behaved and misbehaving servers.

use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use serde_json::Value;
use synfaith::protocol::{serve_echo_tcp, ClientOptions, EchoOptions, Endpoint, RemoteValueFunction};
use synfaith::AppError;
use synfaith_core::game::{Concurrency, ValueFunction};
use synfaith_core::mask::{MultimodalInstance, MultimodalMask};
use synfaith_core::perturb::{AttributionMap, PerturbationSchedule};
use synfaith_core::synergy::synergy_curves;
use synfaith_core::EvalError;

const HELLO: &str = r#"{"protocol":"synfaith-vf","version":1}"#;

fn options() -> ClientOptions {
    ClientOptions { timeout: Duration::from_millis(500), retries: 1, max_in_flight: 4 }
}

/// One-connection server: sends `hello`, then answers each request line with
/// `reply(id, request)`; `None` stays silent.
fn scripted<F>(hello: &'static str, reply: F) -> Endpoint
where
    F: Fn(u64, &Value) -> Option<String> + Send + 'static,
{
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut out = stream.try_clone().unwrap();
        writeln!(out, "{hello}").unwrap();
        for line in BufReader::new(stream).lines() {
            let Ok(line) = line else { return };
            let req: Value = serde_json::from_str(&line).unwrap();
            let id = req["id"].as_u64().unwrap();
            if let Some(text) = reply(id, &req) {
                if writeln!(out, "{text}").is_err() {
                    return;
                }
            }
        }
    });
    Endpoint::Tcp(addr.to_string())
}

fn probe(endpoint: &Endpoint) -> Result<f64, EvalError> {
    let client = RemoteValueFunction::connect(endpoint, options()).unwrap();
    let inst = MultimodalInstance::new("a", 3, 2).unwrap();
    client.evaluate(&inst, &MultimodalMask::full(&inst))
}

#[test]
fn echo_server_gives_zero_synergy() {
    let (tx, rx) = mpsc::channel();
    let opts = EchoOptions { score: 0.5, concurrent: true, shapes: None };
    thread::spawn(move || serve_echo_tcp("127.0.0.1:0", opts, |a| tx.send(a).unwrap()));
    let endpoint = Endpoint::Tcp(rx.recv().unwrap().to_string());
    let client = RemoteValueFunction::connect(&endpoint, options()).unwrap();
    assert!(client.is_concurrent());
    assert_eq!(client.concurrency(), Concurrency::Concurrent);
    let inst = MultimodalInstance::new("x", 6, 5).unwrap();
    let attr = AttributionMap::new(vec![0.1, 0.5, 0.2, 0.9, 0.0, 0.3], vec![1.0, 0.2, 0.3, 0.4, 0.5]).unwrap();
    let trace = synergy_curves(&client, &inst, &attr, &PerturbationSchedule::uniform(11).unwrap()).unwrap();
    assert_eq!(trace.f_syn, 0.0);
    assert!(trace.syn_del.iter().chain(&trace.syn_ins).all(|v| *v == 0.0));
}

#[test]
fn concurrent_requests_share_one_connection() {
    let (tx, rx) = mpsc::channel();
    let opts = EchoOptions { score: 0.25, concurrent: true, shapes: None };
    thread::spawn(move || serve_echo_tcp("127.0.0.1:0", opts, |a| tx.send(a).unwrap()));
    let endpoint = Endpoint::Tcp(rx.recv().unwrap().to_string());
    let client = RemoteValueFunction::connect(&endpoint, options()).unwrap();
    let inst = MultimodalInstance::new("x", 4, 4).unwrap();
    thread::scope(|s| {
        for _ in 0..8 {
            s.spawn(|| {
                for _ in 0..20 {
                    assert_eq!(client.evaluate(&inst, &MultimodalMask::empty(&inst)), Ok(0.25));
                }
            });
        }
    });
}

#[test]
fn mismatched_id_is_a_protocol_violation() {
    let endpoint = scripted(HELLO, |id, _| Some(format!(r#"{{"id":{},"score":0.5}}"#, id + 100)));
    let err = probe(&endpoint).unwrap_err();
    assert!(err.is_protocol(), "{err}");
}

#[test]
fn out_of_range_score_is_rejected_not_clamped() {
    let endpoint = scripted(HELLO, |id, _| Some(format!(r#"{{"id":{id},"score":"1.2"}}"#)));
    assert_eq!(probe(&endpoint), Err(EvalError::OutOfRange(1.2)));
}

#[test]
fn malformed_response_is_a_protocol_violation() {
    let endpoint = scripted(HELLO, |_, _| Some("not json".into()));
    assert!(probe(&endpoint).unwrap_err().is_protocol());
}

#[test]
fn backend_error_is_reported_and_not_a_protocol_violation() {
    let endpoint = scripted(HELLO, |id, _| Some(format!(r#"{{"id":{id},"error":"model crashed"}}"#)));
    let err = probe(&endpoint).unwrap_err();
    assert_eq!(err, EvalError::Backend("model crashed".into()));
    assert!(!err.is_protocol());
}

#[test]
fn silent_server_times_out_after_retries() {
    let endpoint = scripted(HELLO, |_, _| None);
    let client = RemoteValueFunction::connect(
        &endpoint,
        ClientOptions { timeout: Duration::from_millis(50), retries: 2, max_in_flight: 1 },
    )
    .unwrap();
    let inst = MultimodalInstance::new("a", 1, 1).unwrap();
    assert_eq!(client.evaluate(&inst, &MultimodalMask::full(&inst)), Err(EvalError::Timeout { millis: 50 }));
}

#[test]
fn request_carries_masks_as_flags() {
    let endpoint = scripted(HELLO, |id, req| {
        let ok = req["instance"] == "a" && req["visual_mask"] == serde_json::json!([1, 0, 1]) && req["text_mask"] == serde_json::json!([0, 1]);
        Some(format!(r#"{{"id":{id},"score":{}}}"#, if ok { 1 } else { 0 }))
    });
    let client = RemoteValueFunction::connect(&endpoint, options()).unwrap();
    let inst = MultimodalInstance::new("a", 3, 2).unwrap();
    let mut mask = MultimodalMask::empty(&inst);
    mask.visual.set(0, true);
    mask.visual.set(2, true);
    mask.textual.set(1, true);
    assert_eq!(client.evaluate(&inst, &mask), Ok(1.0));
}

#[test]
fn wrong_handshake_is_refused() {
    let endpoint = scripted(r#"{"protocol":"other","version":1}"#, |_, _| None);
    assert!(matches!(RemoteValueFunction::connect(&endpoint, options()), Err(AppError::Protocol(_))));
    let endpoint = scripted(r#"{"protocol":"synfaith-vf","version":2}"#, |_, _| None);
    assert!(matches!(RemoteValueFunction::connect(&endpoint, options()), Err(AppError::Protocol(_))));
}
