//! Live-mode behavior against a local mock server. Nothing leaves 127.0.0.1.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::mpsc;
use std::thread;

use cbm_concepts::{query_llm, sha256_hex, Error, LLMConfig};

struct Captured {
    head: String,
    body: String,
}

/// Serves one request with the given status line and body, then reports what it received.
fn mock_server(status: &'static str, body: &'static str) -> (String, mpsc::Receiver<Captured>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut head = String::new();
        let mut content_length = 0;
        loop {
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                content_length = v.trim().parse().unwrap();
            }
            if line == "\r\n" || line.is_empty() {
                break;
            }
            head.push_str(&line);
        }
        let mut buf = vec![0; content_length];
        reader.read_exact(&mut buf).unwrap();
        let mut stream = stream;
        write!(
            stream,
            "HTTP/1.1 {status}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
            body.len()
        )
        .unwrap();
        stream.flush().unwrap();
        tx.send(Captured {
            head,
            body: String::from_utf8(buf).unwrap(),
        })
        .unwrap();
    });
    (format!("http://{addr}/v1/chat/completions"), rx)
}

fn config(endpoint: String, key_var: Option<&str>) -> LLMConfig {
    LLMConfig {
        api_key_env: key_var.map(str::to_string),
        timeout_secs: 5.0,
        ..LLMConfig::live(endpoint)
    }
}

#[test]
fn success_sends_single_user_turn_with_bearer() {
    std::env::set_var("CBM_TEST_KEY_OK", "sk-test-123");
    let (url, rx) = mock_server(
        "200 OK",
        r#"{"choices":[{"message":{"role":"assistant","content":"- Rib crowding\n- Meniscus sign"}}]}"#,
    );
    let text = query_llm("describe", &config(url, Some("CBM_TEST_KEY_OK"))).unwrap();
    assert_eq!(text, "- Rib crowding\n- Meniscus sign");

    let seen = rx.recv().unwrap();
    assert!(seen.head.starts_with("POST /v1/chat/completions"), "{}", seen.head);
    assert!(
        seen.head.to_ascii_lowercase().contains("authorization: bearer sk-test-123"),
        "{}",
        seen.head
    );
    let body: serde_json::Value = serde_json::from_str(&seen.body).unwrap();
    assert_eq!(
        body,
        serde_json::json!({"model":"gpt-4","messages":[{"role":"user","content":"describe"}]})
    );
}

#[test]
fn rate_limit_is_retryable() {
    let (url, _rx) = mock_server("429 Too Many Requests", r#"{"error":"slow down"}"#);
    let err = query_llm("p", &config(url, None)).unwrap_err();
    assert!(matches!(err, Error::Http { status: 429, retryable: true, .. }), "{err:?}");
    assert!(err.is_retryable());
}

#[test]
fn client_error_is_not_retryable() {
    let (url, _rx) = mock_server("401 Unauthorized", "{}");
    let err = query_llm("p", &config(url, None)).unwrap_err();
    assert!(matches!(err, Error::Http { status: 401, retryable: false, .. }), "{err:?}");
}

#[test]
fn server_error_is_retryable() {
    let (url, _rx) = mock_server("503 Service Unavailable", "{}");
    assert!(query_llm("p", &config(url, None)).unwrap_err().is_retryable());
}

#[test]
fn malformed_body() {
    let (url, _rx) = mock_server("200 OK", r#"{"choices":[]}"#);
    let err = query_llm("p", &config(url, None)).unwrap_err();
    assert!(matches!(err, Error::MalformedResponse { .. }), "{err:?}");
}

#[test]
fn unreachable_endpoint_reports_prompt_hash() {
    let port = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let url = format!("http://127.0.0.1:{port}/v1/chat/completions");
    let err = query_llm("where are you", &config(url, None)).unwrap_err();
    match &err {
        Error::Transport { prompt_hash, .. } => assert_eq!(*prompt_hash, sha256_hex("where are you")),
        other => panic!("expected transport error, got {other:?}"),
    }
    assert!(err.to_string().contains(&sha256_hex("where are you")));
}

#[test]
fn missing_key_variable() {
    let cfg = config("http://127.0.0.1:9/x".into(), Some("CBM_TEST_KEY_DEFINITELY_UNSET"));
    let err = query_llm("p", &cfg).unwrap_err();
    assert!(matches!(err, Error::MissingApiKey(ref v) if v == "CBM_TEST_KEY_DEFINITELY_UNSET"));
}

#[test]
fn slow_server_times_out() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    thread::spawn(move || {
        let (_stream, _) = listener.accept().unwrap();
        thread::sleep(std::time::Duration::from_secs(3));
    });
    let cfg = LLMConfig {
        timeout_secs: 0.3,
        ..config(format!("http://{addr}/x"), None)
    };
    let err = query_llm("p", &cfg).unwrap_err();
    assert!(matches!(err, Error::Timeout { .. }), "{err:?}");
    assert!(err.is_retryable());
}
