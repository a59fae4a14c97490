use std::io::{BufRead as _, BufReader, Read as _, Write as _};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use strata::error::Error;
use strata::llm::{ChatClient, LlmEndpointConfig, ResponseCache, Sleeper, UreqTransport};

/// One received request: lower-cased headers and the body.
#[derive(Clone, Debug)]
struct Seen {
    headers: Vec<(String, String)>,
    body: String,
}

type Handler = dyn Fn(usize, &Seen) -> (u16, String) + Send + Sync;

/// Serves `handler` on a local port until the test process exits.
fn serve(handler: Box<Handler>) -> (String, Arc<Mutex<Vec<Seen>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    std::thread::spawn(move || {
        for (i, stream) in listener.incoming().enumerate() {
            let mut stream = stream.unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut headers = Vec::new();
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            loop {
                line.clear();
                reader.read_line(&mut line).unwrap();
                let l = line.trim_end();
                if l.is_empty() {
                    break;
                }
                let (k, v) = l.split_once(':').unwrap();
                headers.push((k.trim().to_ascii_lowercase(), v.trim().to_string()));
            }
            let len: usize = headers.iter().find(|h| h.0 == "content-length").map_or(0, |h| h.1.parse().unwrap());
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            let req = Seen {
                headers,
                body: String::from_utf8(body).unwrap(),
            };
            let (status, reply) = handler(i, &req);
            log.lock().unwrap().push(req);
            let resp = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                reply.len()
            );
            stream.write_all(resp.as_bytes()).unwrap();
        }
    });
    (url, seen)
}

fn completion(text: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string()
}

#[derive(Clone, Default)]
struct Delays(Arc<Mutex<Vec<Duration>>>);

impl Sleeper for Delays {
    fn sleep(&self, d: Duration) {
        self.0.lock().unwrap().push(d);
    }
}

fn client(url: &str, env: &str, cache: Option<ResponseCache>, delays: &Delays) -> ChatClient {
    let cfg = LlmEndpointConfig {
        enabled: true,
        base_url: url.to_string(),
        model: "test-model".into(),
        api_key_env: env.into(),
        max_retries: 3,
        ..LlmEndpointConfig::default()
    };
    ChatClient::with_transport(cfg, cache, Box::new(UreqTransport::new(Duration::from_secs(10))), Box::new(delays.clone()))
}

#[test]
fn retries_rate_limits_with_exponential_backoff() {
    std::env::set_var("STRATA_TEST_KEY_RETRY", "k-retry");
    let (url, seen) = serve(Box::new(|i, _| if i < 2 { (429, "{}".into()) } else { (200, completion("ok")) }));
    let delays = Delays::default();
    let c = client(&url, "STRATA_TEST_KEY_RETRY", None, &delays);
    assert_eq!(c.complete("hello").unwrap(), "ok");
    assert_eq!(c.network_calls(), 3);
    let d = delays.0.lock().unwrap().clone();
    assert_eq!(d.len(), 2);
    assert!(d[0] >= Duration::from_secs(1) && d[0] <= Duration::from_millis(1250), "{d:?}");
    assert!(d[1] >= Duration::from_secs(2) && d[1] <= Duration::from_millis(2500), "{d:?}");
    let req = &seen.lock().unwrap()[0];
    assert!(req.headers.iter().any(|(k, v)| k == "authorization" && v == "Bearer k-retry"));
    let body: serde_json::Value = serde_json::from_str(&req.body).unwrap();
    assert_eq!(body["model"], "test-model");
    assert_eq!(body["messages"][0]["content"], "hello");
    assert_eq!(body["temperature"], 0.0);
}

#[test]
fn gives_up_after_max_retries_and_does_not_retry_client_errors() {
    std::env::set_var("STRATA_TEST_KEY_GIVEUP", "k-giveup");
    let (url, _) = serve(Box::new(|_, _| (503, "busy".into())));
    let delays = Delays::default();
    let c = client(&url, "STRATA_TEST_KEY_GIVEUP", None, &delays);
    assert!(matches!(c.complete("x"), Err(Error::Network(_))));
    assert_eq!(c.network_calls(), 4);

    let (url, _) = serve(Box::new(|_, _| (400, "bad request".into())));
    let c = client(&url, "STRATA_TEST_KEY_GIVEUP", None, &delays);
    let err = c.complete("x").unwrap_err();
    assert!(err.to_string().contains("HTTP 400"), "{err}");
    assert_eq!(c.network_calls(), 1);

    let (url, _) = serve(Box::new(|_, _| (200, "{\"choices\": []}".into())));
    let c = client(&url, "STRATA_TEST_KEY_GIVEUP", None, &delays);
    assert!(matches!(c.complete("x"), Err(Error::Protocol(_))));
}

#[test]
fn cache_hits_make_no_network_calls() {
    std::env::set_var("STRATA_TEST_KEY_CACHE", "k-cache");
    let dir = tempfile::tempdir().unwrap();
    let (url, seen) = serve(Box::new(|i, _| (200, completion(&format!("answer {i}")))));
    let delays = Delays::default();
    let c = client(&url, "STRATA_TEST_KEY_CACHE", Some(ResponseCache::new(dir.path())), &delays);
    assert_eq!(c.complete("p").unwrap(), "answer 0");
    assert_eq!(c.complete("p").unwrap(), "answer 0");
    assert_eq!(c.network_calls(), 1);
    let fresh = client(&url, "STRATA_TEST_KEY_CACHE", Some(ResponseCache::new(dir.path())), &delays);
    assert_eq!(fresh.complete("p").unwrap(), "answer 0");
    assert_eq!(fresh.network_calls(), 0);
    assert_eq!(seen.lock().unwrap().len(), 1);
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
}

#[test]
fn missing_key_is_a_config_error() {
    let delays = Delays::default();
    let c = client("http://127.0.0.1:9", "STRATA_TEST_KEY_UNSET_1c9f", None, &delays);
    let err = c.complete("x").unwrap_err();
    assert!(matches!(err, Error::Config(_)));
    assert!(err.to_string().contains("STRATA_TEST_KEY_UNSET_1c9f"));
    assert_eq!(c.network_calls(), 0);
}

#[test]
fn concurrent_completions_keep_input_order() {
    std::env::set_var("STRATA_TEST_KEY_MANY", "k-many");
    let (url, _) = serve(Box::new(|_, req| {
        let body: serde_json::Value = serde_json::from_str(&req.body).unwrap();
        let prompt = body["messages"][0]["content"].as_str().unwrap().to_string();
        (200, completion(&format!("re: {prompt}")))
    }));
    let delays = Delays::default();
    let c = client(&url, "STRATA_TEST_KEY_MANY", None, &delays);
    let prompts: Vec<String> = (0..10).map(|i| format!("q{i}")).collect();
    let out: Vec<String> = c.complete_many(&prompts).into_iter().map(Result::unwrap).collect();
    let want: Vec<String> = (0..10).map(|i| format!("re: q{i}")).collect();
    assert_eq!(out, want);
}
