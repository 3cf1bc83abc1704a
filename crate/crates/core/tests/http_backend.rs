use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use themfit::gateway::{
    Backend, BackendError, FinishReason, Gateway, GatewayErrorKind, HttpBackend, Message, ModelParams, RetryPolicy,
};

struct Seen {
    path: String,
    authorization: Option<String>,
    body: serde_json::Value,
}

/// Serves the scripted `(status, body)` replies in order, one per connection.
fn serve(replies: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Seen>>>, JoinHandle<()>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let base = format!("http://{}/v1", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&seen);
    let handle = std::thread::spawn(move || {
        for (status, body) in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream);
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let path = request_line.split_whitespace().nth(1).unwrap_or_default().to_string();
            let mut length = 0;
            let mut authorization = None;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                let (k, v) = line.split_once(':').unwrap();
                match k.to_ascii_lowercase().as_str() {
                    "content-length" => length = v.trim().parse().unwrap(),
                    "authorization" => authorization = Some(v.trim().to_string()),
                    _ => {}
                }
            }
            let mut buf = vec![0; length];
            reader.read_exact(&mut buf).unwrap();
            log.lock().unwrap().push(Seen {
                path,
                authorization,
                body: serde_json::from_slice(&buf).unwrap(),
            });
            let mut stream = reader.into_inner();
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
            stream.flush().unwrap();
        }
    });
    (base, seen, handle)
}

fn completion(text: &str, finish: &str) -> String {
    serde_json::json!({
        "choices": [{ "message": { "role": "assistant", "content": text }, "finish_reason": finish }]
    })
    .to_string()
}

fn params() -> ModelParams {
    ModelParams {
        max_tokens: 100,
        ..ModelParams::default()
    }
}

#[test]
fn sends_openai_shaped_request() {
    let (base, seen, server) = serve(vec![(200, completion("{\"Score\": 0.8}", "stop"))]);
    let backend = HttpBackend::new(base, Some("sk-test".into()));
    let reply = backend.send(&[Message::user("hi")], &params()).unwrap();
    server.join().unwrap();
    assert_eq!(reply.text, "{\"Score\": 0.8}");
    assert_eq!(reply.finish_reason, FinishReason::Stop);

    let seen = seen.lock().unwrap();
    assert_eq!(seen[0].path, "/v1/chat/completions");
    assert_eq!(seen[0].authorization.as_deref(), Some("Bearer sk-test"));
    assert_eq!(seen[0].body["model"], "gpt-4-0125-preview");
    assert_eq!(seen[0].body["max_tokens"], 100);
    assert_eq!(seen[0].body["top_p"], 0.95);
    assert_eq!(seen[0].body["messages"][0]["role"], "user");
}

#[test]
fn length_finish_is_reported() {
    let (base, _, server) = serve(vec![(200, completion("{\"Sco", "length"))]);
    let reply = HttpBackend::new(base, None).send(&[Message::user("x")], &params()).unwrap();
    server.join().unwrap();
    assert_eq!(reply.finish_reason, FinishReason::Length);
}

#[test]
fn status_classification() {
    let cases = [
        (401, "auth"),
        (403, "auth"),
        (429, "transient"),
        (503, "transient"),
        (400, "rejected"),
    ];
    let (base, _, server) = serve(cases.iter().map(|(s, _)| (*s, "{}".to_string())).collect());
    let backend = HttpBackend::new(base, None);
    for (status, kind) in cases {
        let err = backend.send(&[Message::user("x")], &params()).unwrap_err();
        let got = match err {
            BackendError::Auth(_) => "auth",
            BackendError::Transient(_) => "transient",
            BackendError::Rejected(_) => "rejected",
        };
        assert_eq!(got, kind, "HTTP {status}");
    }
    server.join().unwrap();
}

#[test]
fn gateway_retries_server_errors_then_succeeds() {
    let (base, seen, server) = serve(vec![
        (500, "{}".into()),
        (429, "{}".into()),
        (200, completion("ok", "stop")),
    ]);
    let gw = Gateway::live(Arc::new(HttpBackend::new(base, None))).with_retry(RetryPolicy::immediate(3));
    let resp = gw.complete(&[Message::user("x")], &params()).unwrap();
    server.join().unwrap();
    assert_eq!(resp.text, "ok");
    assert_eq!(seen.lock().unwrap().len(), 3);
    assert_eq!(gw.backend_call_count(), 3);
}

#[test]
fn gateway_gives_up_after_four_attempts() {
    let (base, seen, server) = serve(vec![(502, "{}".into()); 4]);
    let gw = Gateway::live(Arc::new(HttpBackend::new(base, None))).with_retry(RetryPolicy::immediate(3));
    let err = gw.complete(&[Message::user("x")], &params()).unwrap_err();
    server.join().unwrap();
    assert!(matches!(err.kind, GatewayErrorKind::Exhausted { attempts: 4, .. }), "{err}");
    assert_eq!(seen.lock().unwrap().len(), 4);
}

#[test]
fn auth_failure_is_not_retried() {
    let (base, seen, server) = serve(vec![(401, "{\"error\": \"bad key\"}".into())]);
    let gw = Gateway::live(Arc::new(HttpBackend::new(base, None))).with_retry(RetryPolicy::immediate(3));
    let err = gw.complete(&[Message::user("x")], &params()).unwrap_err();
    server.join().unwrap();
    assert!(matches!(err.kind, GatewayErrorKind::Auth(_)), "{err}");
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn unreachable_host_is_transient() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let err = HttpBackend::new(format!("http://127.0.0.1:{port}"), None)
        .send(&[Message::user("x")], &params())
        .unwrap_err();
    assert!(matches!(err, BackendError::Transient(_)));
}
