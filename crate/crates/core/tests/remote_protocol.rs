//! Wire protocol of the remote client against an in-process stub server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use amtgen::backends::remote::{conformance, RemoteClient, RemoteConfig};
use amtgen::backends::{BackendError, GenRequest};
use serde_json::{json, Value};

#[derive(Debug, Clone)]
struct Seen {
    path: String,
    auth: Option<String>,
    body: Value,
}

type Handler = dyn Fn(&str, &Value, usize) -> (u16, String) + Send + Sync;

/// Serves each connection with one response and closes it. The handler
/// gets the path, the parsed body and the number of earlier requests.
fn serve(handler: Arc<Handler>) -> (String, Arc<Mutex<Vec<Seen>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            let path = line.split_whitespace().nth(1).unwrap_or("").to_string();
            let mut len = 0;
            let mut auth = None;
            loop {
                let mut h = String::new();
                reader.read_line(&mut h).unwrap();
                let h = h.trim_end();
                if h.is_empty() {
                    break;
                }
                let (k, v) = h.split_once(':').unwrap();
                match k.to_ascii_lowercase().as_str() {
                    "content-length" => len = v.trim().parse().unwrap(),
                    "authorization" => auth = Some(v.trim().to_string()),
                    _ => {}
                }
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            let body: Value = if len == 0 { Value::Null } else { serde_json::from_slice(&body).unwrap() };
            let n = {
                let mut l = log.lock().unwrap();
                l.push(Seen { path: path.clone(), auth, body: body.clone() });
                l.len() - 1
            };
            let (status, text) = handler(&path, &body, n);
            let resp = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                text.len()
            );
            let _ = stream.write_all(resp.as_bytes());
        }
    });
    (url, seen)
}

fn sidecar(path: &str, body: &Value) -> (u16, String) {
    let v = match path {
        "/healthz" => json!({"status": "ok"}),
        "/nli" => json!({"p_ent": 0.7, "p_neu": 0.2, "p_contr": 0.1, "model": "stub"}),
        "/lm/stats" | "/lm/stats/b" => json!({"nll": 1.5, "entropy": 2.0}),
        "/embed" => json!({"vector": [0.6, 0.8]}),
        "/generate" => {
            let n = body["n"].as_u64().unwrap() as usize;
            json!({"candidates": (0..n).map(|i| format!("c{i}")).collect::<Vec<_>>(), "refused": false})
        }
        "/safety" => json!({"scores": [0.1, 0.2]}),
        "/detectors" => json!({"scores": vec![0.3; 11]}),
        _ => return (404, "{}".into()),
    };
    (200, v.to_string())
}

fn config(url: &str) -> RemoteConfig {
    RemoteConfig { base_url: url.into(), max_retries: 2, backoff_base_ms: 1, timeout_secs: 5, ..RemoteConfig::default() }
}

#[test]
fn request_and_response_shapes() {
    let (url, seen) = serve(Arc::new(|p: &str, b: &Value, _| sidecar(p, b)));
    let mut cfg = config(&url);
    cfg.lm_routes = vec!["/lm/stats".into(), "/lm/stats/b".into()];
    let set = RemoteClient::new(cfg).unwrap().into_backend_set().unwrap();

    let s = set.nli_score("a premise", "a hypothesis").unwrap();
    assert_eq!((s.p_ent, s.p_neu, s.p_contr), (0.7, 0.2, 0.1));
    let l = set.lm_stats(1, "ctx", "cont").unwrap();
    assert_eq!((l.nll, l.entropy), (1.5, 2.0));
    assert_eq!(set.embed("text").unwrap(), vec![0.6, 0.8]);
    let req = GenRequest::new("prompt", 3).with_settings(0.0, 200);
    assert_eq!(set.generate(&req).unwrap().len(), 3);
    assert_eq!(set.safety_score("t").unwrap(), vec![0.1, 0.2]);
    assert_eq!(set.detector_scores("t").unwrap().len(), 11);

    let seen = seen.lock().unwrap();
    let paths: Vec<&str> = seen.iter().map(|s| s.path.as_str()).collect();
    assert_eq!(paths, ["/nli", "/lm/stats/b", "/embed", "/generate", "/safety", "/detectors"]);
    assert_eq!(seen[0].body, json!({"premise": "a premise", "hypothesis": "a hypothesis"}));
    assert_eq!(seen[1].body, json!({"context": "ctx", "continuation": "cont"}));
    assert_eq!(seen[2].body, json!({"text": "text"}));
    assert_eq!(seen[3].body, json!({"prompt": "prompt", "n": 3, "temperature": 0.0, "max_tokens": 200}));
}

#[test]
fn server_errors_retry_then_succeed() {
    let (url, seen) = serve(Arc::new(|p: &str, b: &Value, n| if n < 2 { (503, "{}".into()) } else { sidecar(p, b) }));
    let set = RemoteClient::new(config(&url)).unwrap().into_backend_set().unwrap();
    assert_eq!(set.nli_score("a", "b").unwrap().p_ent, 0.7);
    assert_eq!(seen.lock().unwrap().len(), 3);
}

#[test]
fn persistent_server_error_is_unavailable_after_cap() {
    let (url, seen) = serve(Arc::new(|_: &str, _: &Value, _| (500, "{}".into())));
    let set = RemoteClient::new(config(&url)).unwrap().into_backend_set().unwrap();
    assert!(matches!(set.nli_score("a", "b"), Err(BackendError::BackendUnavailable(_))));
    assert_eq!(seen.lock().unwrap().len(), 3);
}

#[test]
fn client_error_status_is_unavailable_without_retry() {
    let (url, seen) = serve(Arc::new(|_: &str, _: &Value, _| (404, "{}".into())));
    let set = RemoteClient::new(config(&url)).unwrap().into_backend_set().unwrap();
    assert!(matches!(set.embed("a"), Err(BackendError::BackendUnavailable(_))));
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn protocol_violations_are_malformed() {
    let (url, _) = serve(Arc::new(|p: &str, b: &Value, _| match p {
        "/nli" => (200, json!({"p_ent": 0.7, "p_neu": 0.7, "p_contr": 0.1}).to_string()),
        "/embed" => (200, "not json".into()),
        "/generate" => (200, json!({"candidates": ["only one"]}).to_string()),
        "/safety" => (200, json!({"scores": [1.5]}).to_string()),
        _ => sidecar(p, b),
    }));
    let set = RemoteClient::new(config(&url)).unwrap().into_backend_set().unwrap();
    assert!(matches!(set.nli_score("a", "b"), Err(BackendError::MalformedResponse(_))));
    assert!(matches!(set.embed("a"), Err(BackendError::MalformedResponse(_))));
    assert!(matches!(set.generate(&GenRequest::new("p", 2)), Err(BackendError::MalformedResponse(_))));
    assert!(matches!(set.safety_score("a"), Err(BackendError::MalformedResponse(_))));
}

#[test]
fn refused_flag_marks_every_candidate() {
    let (url, _) = serve(Arc::new(|_: &str, _: &Value, _| (200, json!({"candidates": ["a", "b"], "refused": true}).to_string())));
    let set = RemoteClient::new(config(&url)).unwrap().into_backend_set().unwrap();
    let c = set.generate(&GenRequest::new("p", 2)).unwrap();
    assert!(c.iter().all(|c| c.text().is_none()));
}

#[test]
fn bearer_token_from_env() {
    let (url, seen) = serve(Arc::new(|p: &str, b: &Value, _| sidecar(p, b)));
    let var = "AMTGEN_TEST_TOKEN_PROTOCOL";
    std::env::set_var(var, "s3cret");
    let cfg = RemoteConfig { token_env: Some(var.into()), ..config(&url) };
    let set = RemoteClient::new(cfg).unwrap().into_backend_set().unwrap();
    set.embed("x").unwrap();
    assert_eq!(seen.lock().unwrap()[0].auth.as_deref(), Some("Bearer s3cret"));
}

#[test]
fn conformance_against_stub() {
    let (url, _) = serve(Arc::new(|p: &str, b: &Value, _| sidecar(p, b)));
    let checks = conformance(config(&url));
    assert!(checks.iter().all(|c| c.passed), "{checks:?}");
    assert_eq!(checks.len(), 8);

    let (url, _) = serve(Arc::new(|p: &str, b: &Value, n| match p {
        "/generate" => (200, json!({"candidates": [format!("x{n}"), "y"]}).to_string()),
        _ => sidecar(p, b),
    }));
    let failed: Vec<String> = conformance(config(&url)).into_iter().filter(|c| !c.passed).map(|c| c.name).collect();
    assert_eq!(failed, ["generate_deterministic"]);
}
