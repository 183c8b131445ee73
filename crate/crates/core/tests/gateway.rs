use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use ibl_core::gateway::{
    record_fixture, AttemptTag, BackendConfig, BackendKind, CompletionBackend, CompletionRequest, GatewayError,
    LiveBackend, LiveConfig, ReplayBackend, RetryPolicy,
};

struct Canned {
    status: u16,
    headers: Vec<(&'static str, String)>,
    body: String,
}

fn ok(content: &str) -> Canned {
    let body = serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]});
    Canned { status: 200, headers: vec![], body: body.to_string() }
}

fn status(code: u16) -> Canned {
    Canned { status: code, headers: vec![], body: "{\"error\":\"nope\"}".into() }
}

#[derive(Debug, Clone)]
struct Seen {
    authorization: Option<String>,
    body: serde_json::Value,
}

/// Serves the canned replies in order, one per connection.
fn serve(replies: Vec<Canned>) -> (String, Arc<Mutex<Vec<Seen>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&seen);
    thread::spawn(move || {
        for reply in replies {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut length = 0;
            let mut authorization = None;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                let (name, value) = line.split_once(':').unwrap_or((line, ""));
                match name.to_ascii_lowercase().as_str() {
                    "content-length" => length = value.trim().parse().unwrap(),
                    "authorization" => authorization = Some(value.trim().to_string()),
                    _ => {}
                }
            }
            let mut body = vec![0; length];
            reader.read_exact(&mut body).unwrap();
            log.lock().unwrap().push(Seen { authorization, body: serde_json::from_slice(&body).unwrap() });
            let mut head = format!(
                "HTTP/1.1 {} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n",
                reply.status,
                reply.body.len()
            );
            for (k, v) in &reply.headers {
                head.push_str(&format!("{k}: {v}\r\n"));
            }
            head.push_str("\r\n");
            stream.write_all(head.as_bytes()).unwrap();
            stream.write_all(reply.body.as_bytes()).unwrap();
        }
    });
    (url, seen)
}

fn config(endpoint: String) -> LiveConfig {
    LiveConfig {
        endpoint,
        retry: RetryPolicy { base_delay_ms: 5, factor: 2.0, max_attempts: 5, max_delay_ms: 200 },
        timeout_secs: 10,
        ..LiveConfig::default()
    }
}

fn request(tag: &str) -> CompletionRequest {
    CompletionRequest {
        model_id: "gpt-4-0613".into(),
        system_text: "system words".into(),
        user_text: "user words".into(),
        temperature: 0.0,
        max_output_tokens: 64,
        attempt_tag: AttemptTag::new(tag).unwrap(),
    }
}

#[test]
fn sends_two_message_chat_payload() {
    let (url, seen) = serve(vec![ok("hello")]);
    let live = LiveBackend::with_key(config(url), Some("sk-test".into()), None);
    assert_eq!(live.complete(&request("t.0")).unwrap(), "hello");
    let seen = seen.lock().unwrap();
    assert_eq!(seen[0].authorization.as_deref(), Some("Bearer sk-test"));
    assert_eq!(
        seen[0].body,
        serde_json::json!({
            "model": "gpt-4-0613",
            "messages": [
                {"role": "system", "content": "system words"},
                {"role": "user", "content": "user words"}
            ],
            "temperature": 0.0,
            "max_tokens": 64
        })
    );
}

#[test]
fn retries_transient_failures() {
    let mut limited = status(429);
    limited.headers.push(("Retry-After", "0.05".into()));
    let (url, seen) = serve(vec![status(500), limited, status(503), ok("finally")]);
    let live = LiveBackend::with_key(config(url), Some("k".into()), None);
    assert_eq!(live.complete(&request("t.1")).unwrap(), "finally");
    assert_eq!(seen.lock().unwrap().len(), 4);
}

#[test]
fn gives_up_after_five_attempts() {
    let (url, seen) = serve((0..5).map(|_| status(502)).collect());
    let live = LiveBackend::with_key(config(url), Some("k".into()), None);
    match live.complete(&request("t.2")) {
        Err(GatewayError::ExhaustedRetries { attempts: 5, .. }) => {}
        other => panic!("{other:?}"),
    }
    assert_eq!(seen.lock().unwrap().len(), 5);
}

#[test]
fn auth_failure_is_not_retried() {
    let (url, seen) = serve(vec![status(401)]);
    let live = LiveBackend::with_key(config(url), Some("bad".into()), None);
    assert!(matches!(live.complete(&request("t.3")), Err(GatewayError::AuthFailure(401))));
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn malformed_and_rejected_responses() {
    let garbage = Canned { status: 200, headers: vec![], body: "{\"choices\": []}".into() };
    let (url, _) = serve(vec![garbage, status(400)]);
    let live = LiveBackend::with_key(config(url), Some("k".into()), None);
    assert!(matches!(live.complete(&request("t.4")), Err(GatewayError::MalformedResponse(_))));
    assert!(matches!(live.complete(&request("t.5")), Err(GatewayError::Rejected { status: 400, .. })));
}

#[test]
fn missing_credential() {
    let cfg = LiveConfig { api_key_env: "IBL_TEST_KEY_THAT_IS_NOT_SET".into(), ..config("http://127.0.0.1:9/".into()) };
    let live = LiveBackend::new(cfg, None);
    assert!(matches!(live.complete(&request("t.6")), Err(GatewayError::MissingCredential(_))));
}

#[test]
fn record_mode_persists_and_reuses() {
    let dir = tempfile::tempdir().unwrap();
    let (url, seen) = serve(vec![ok("recorded text")]);
    let live = LiveBackend::with_key(config(url), Some("k".into()), Some(dir.path().to_path_buf()));
    assert_eq!(live.complete(&request("cell.0")).unwrap(), "recorded text");
    // served from disk: the server only had one reply to give
    assert_eq!(live.complete(&request("cell.0")).unwrap(), "recorded text");
    assert_eq!(seen.lock().unwrap().len(), 1);
    let replay = ReplayBackend::new(dir.path());
    assert_eq!(replay.complete(&request("cell.0")).unwrap(), "recorded text");
}

#[test]
fn live_without_record_dir_leaves_fixtures_alone() {
    let dir = tempfile::tempdir().unwrap();
    record_fixture(dir.path(), &AttemptTag::new("cell.1").unwrap(), "old", false).unwrap();
    let (url, _) = serve(vec![ok("new")]);
    let live = LiveBackend::with_key(config(url), Some("k".into()), None);
    assert_eq!(live.complete(&request("cell.1")).unwrap(), "new");
    assert_eq!(std::fs::read_to_string(dir.path().join("cell.1.txt")).unwrap(), "old");
}

#[test]
fn concurrent_callers_share_the_backend() {
    let (url, seen) = serve((0..8).map(|i| ok(&format!("r{i}"))).collect());
    let live = LiveBackend::with_key(LiveConfig { max_in_flight: 2, ..config(url) }, Some("k".into()), None);
    let mut got: Vec<String> = thread::scope(|s| {
        let handles: Vec<_> = (0..8).map(|i| {
            let live = &live;
            s.spawn(move || live.complete(&request(&format!("c.{i}"))).unwrap())
        }).collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    got.sort();
    assert_eq!(got, (0..8).map(|i| format!("r{i}")).collect::<Vec<_>>());
    assert_eq!(seen.lock().unwrap().len(), 8);
    assert_eq!(live.max_concurrency(), 2);
}

#[test]
fn backend_config_builds_each_kind() {
    let cfg: BackendConfig = serde_json::from_str(r#"{"kind": "scripted", "responses": ["a", "b"]}"#).unwrap();
    assert_eq!(cfg.kind, BackendKind::Scripted);
    let scripted = cfg.build().unwrap();
    assert_eq!(scripted.complete(&request("x")).unwrap(), "a");
    assert_eq!(scripted.complete(&request("x")).unwrap(), "b");
    let replay = BackendConfig { kind: BackendKind::Replay, ..Default::default() };
    assert!(replay.build().is_err());
}
