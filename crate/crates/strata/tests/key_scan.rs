//! The API key must not reach logs, prompts, cache files or error messages.

use std::io::{BufRead as _, BufReader, Read as _, Write as _};
use std::net::TcpListener;
use std::sync::Mutex;
use std::time::Duration;

use strata::llm::{ChatClient, LlmEndpointConfig, RemoteReasoner, ResponseCache};
use strata_core::reasoning::{Reasoner, ReasoningCase};

const SENTINEL: &str = "sk-SENTINEL-7f3a9c1e5b2d";

static LOG: Mutex<Vec<String>> = Mutex::new(Vec::new());

struct Capture;

impl log::Log for Capture {
    fn enabled(&self, _: &log::Metadata) -> bool {
        true
    }
    fn log(&self, record: &log::Record) {
        LOG.lock().unwrap().push(format!("{} {}", record.target(), record.args()));
    }
    fn flush(&self) {}
}

/// Replies 500 once, then echoes the Authorization header inside a 401 body,
/// then answers normally. Returns every request it saw.
fn server() -> (String, std::sync::Arc<Mutex<Vec<String>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let seen = std::sync::Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    std::thread::spawn(move || {
        for (i, stream) in listener.incoming().enumerate() {
            let mut stream = stream.unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut raw = String::new();
            let mut auth = String::new();
            let mut len = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                raw.push_str(&line);
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                if lower.starts_with("authorization:") {
                    auth = line.trim_end().to_string();
                }
                if line == "\r\n" {
                    break;
                }
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            raw.push_str(std::str::from_utf8(&body).unwrap());
            log.lock().unwrap().push(raw);
            let (status, reply) = match i % 3 {
                0 => (500, "overloaded".to_string()),
                1 => (401, format!("invalid credentials: {auth}")),
                _ => (
                    200,
                    serde_json::json!({"choices": [{"message": {"content": "Steady.\nFORECAST: 1 2 3"}}]}).to_string(),
                ),
            };
            let resp = format!(
                "HTTP/1.1 {status} X\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                reply.len()
            );
            stream.write_all(resp.as_bytes()).unwrap();
        }
    });
    (url, seen)
}

fn files_under(dir: &std::path::Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(files_under(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn api_key_never_leaves_the_authorization_header() {
    log::set_boxed_logger(Box::new(Capture)).unwrap();
    log::set_max_level(log::LevelFilter::Trace);
    std::env::set_var("STRATA_SCAN_KEY", SENTINEL);
    let dir = tempfile::tempdir().unwrap();
    let (url, seen) = server();
    let cfg = LlmEndpointConfig {
        enabled: true,
        base_url: url,
        api_key_env: "STRATA_SCAN_KEY".into(),
        backoff_base_ms: 1,
        ..LlmEndpointConfig::default()
    };
    let client = ChatClient::new(cfg, Some(ResponseCache::new(dir.path().join("cache"))));

    // 500 then a 401 whose body quotes the key back.
    let err = client.complete("prompt one").unwrap_err();
    let mut texts = vec![err.to_string(), format!("{err:?}"), format!("{client:?}")];
    let case: ReasoningCase = serde_json::from_str(
        &std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../core/tests/golden/prompt_case.json")).unwrap(),
    )
    .unwrap();
    let reasoner = RemoteReasoner { client: &client };
    // The third request succeeds and is cached.
    let out = reasoner.complete("prompt two", &case).unwrap();
    assert!(out.contains("FORECAST"));
    texts.push(client.request_body("prompt two"));
    std::thread::sleep(Duration::from_millis(10));

    let requests = seen.lock().unwrap().clone();
    assert_eq!(requests.len(), 3);
    for r in &requests {
        // Present in the header, absent from the JSON body.
        assert!(r.contains(&format!("Bearer {SENTINEL}")));
        let body = &r[r.find("\r\n\r\n").unwrap()..];
        assert!(!body.contains(SENTINEL), "request body carries the key");
    }
    let logs = LOG.lock().unwrap().clone();
    assert!(!logs.is_empty(), "retry warnings should have been logged");
    for line in logs.iter().chain(&texts) {
        assert!(!line.contains(SENTINEL), "key leaked into: {line}");
    }
    let files = files_under(dir.path());
    assert!(!files.is_empty());
    for f in files {
        let bytes = std::fs::read(&f).unwrap();
        assert!(!String::from_utf8_lossy(&bytes).contains(SENTINEL), "key leaked into {}", f.display());
    }
}
