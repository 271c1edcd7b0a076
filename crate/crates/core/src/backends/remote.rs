//! HTTP+JSON client for a model sidecar.
//!
//! Routes (all `POST`, JSON bodies):
//!
//! | route        | request                                   | response                      |
//! |--------------|-------------------------------------------|-------------------------------|
//! | `/nli`       | `{premise, hypothesis}`                   | `{p_ent, p_neu, p_contr}`     |
//! | `/lm/stats`  | `{context, continuation}`                 | `{nll, entropy}`              |
//! | `/embed`     | `{text}`                                  | `{vector}`                    |
//! | `/generate`  | `{prompt, n, temperature, max_tokens}`    | `{candidates, refused}`       |
//! | `/safety`    | `{text}`                                  | `{scores}`                    |
//!
//! `GET /healthz` answers 200 when the sidecar is ready. Several cost models
//! are addressed by giving one `/lm/stats`-shaped route per model. Unknown
//! response fields are ignored so sidecars can attach metadata.

use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{
    BackendError, BackendSet, Embedder, GenRequest, GenResponse, LanguageModel, LmStats, NliModel,
    NliScores, SafetyModel, TextGenerator,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemoteConfig {
    pub base_url: String,
    /// One route per cost model.
    pub lm_routes: Vec<String>,
    pub safety_route: String,
    /// Route of the 11-detector panel used during curation.
    pub detectors_route: String,
    /// Name of the environment variable holding a bearer token.
    pub token_env: Option<String>,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub timeout_secs: u64,
    pub max_in_flight: usize,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000".into(),
            lm_routes: vec!["/lm/stats".into()],
            safety_route: "/safety".into(),
            detectors_route: "/detectors".into(),
            token_env: Some("AMTGEN_BACKEND_TOKEN".into()),
            max_retries: 3,
            backoff_base_ms: 200,
            timeout_secs: 120,
            max_in_flight: 8,
        }
    }
}

impl RemoteConfig {
    pub fn with_url(url: impl Into<String>) -> Self {
        Self { base_url: url.into(), ..Self::default() }
    }
}

#[derive(Serialize)]
struct NliReq<'a> {
    premise: &'a str,
    hypothesis: &'a str,
}

#[derive(Serialize)]
struct LmReq<'a> {
    context: &'a str,
    continuation: &'a str,
}

#[derive(Serialize)]
struct TextReq<'a> {
    text: &'a str,
}

#[derive(Serialize)]
struct GenWire<'a> {
    prompt: &'a str,
    n: usize,
    temperature: f64,
    max_tokens: usize,
}

/// Body of an `/embed` response.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct EmbedResp {
    pub vector: Vec<f64>,
}

/// Body of a `/safety` or `/detectors` response.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ScoresResp {
    pub scores: Vec<f64>,
}

/// Decodes a 200 response body. Value checks (simplex, ranges, counts)
/// happen later in [`BackendSet`].
pub fn decode_body<R: DeserializeOwned>(body: &str) -> Result<R, BackendError> {
    serde_json::from_str(body).map_err(|e| BackendError::MalformedResponse(e.to_string()))
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
struct Limiter {
    slots: Mutex<usize>,
    freed: Condvar,
}

impl Limiter {
    fn new(n: usize) -> Self {
        Self { slots: Mutex::new(n.max(1)), freed: Condvar::new() }
    }

    fn acquire(&self) -> LimiterGuard<'_> {
        let mut free = self.slots.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.freed.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        LimiterGuard(self)
    }
}

struct LimiterGuard<'a>(&'a Limiter);

impl Drop for LimiterGuard<'_> {
    fn drop(&mut self) {
        *self.0.slots.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.freed.notify_one();
    }
}

#[derive(Debug)]
pub struct RemoteClient {
    cfg: RemoteConfig,
    agent: ureq::Agent,
    token: Option<String>,
    limiter: Limiter,
}

enum Attempt {
    Retry(String),
    Fatal(BackendError),
}

impl RemoteClient {
    pub fn new(cfg: RemoteConfig) -> Result<Self, BackendError> {
        if !(cfg.base_url.starts_with("http://") || cfg.base_url.starts_with("https://")) {
            return Err(BackendError::InvalidInput(format!("backend url `{}` is not http(s)", cfg.base_url)));
        }
        if cfg.lm_routes.is_empty() {
            return Err(BackendError::InvalidInput("at least one lm route is required".into()));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        let token = cfg.token_env.as_deref().and_then(|v| std::env::var(v).ok()).filter(|t| !t.is_empty());
        let limiter = Limiter::new(cfg.max_in_flight);
        Ok(Self { cfg, agent, token, limiter })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.cfg
    }

    fn url(&self, route: &str) -> String {
        format!("{}/{}", self.cfg.base_url.trim_end_matches('/'), route.trim_start_matches('/'))
    }

    fn once<B: Serialize, R: DeserializeOwned>(&self, url: &str, body: Option<&B>) -> Result<R, Attempt> {
        let _slot = self.limiter.acquire();
        let result = match body {
            Some(b) => {
                let mut req = self.agent.post(url);
                if let Some(t) = &self.token {
                    req = req.header("Authorization", &format!("Bearer {t}"));
                }
                req.send_json(b)
            }
            None => {
                let mut req = self.agent.get(url);
                if let Some(t) = &self.token {
                    req = req.header("Authorization", &format!("Bearer {t}"));
                }
                req.call()
            }
        };
        let mut resp = match result {
            Ok(r) => r,
            Err(e) => return Err(Attempt::Retry(format!("{url}: {e}"))),
        };
        let status = resp.status().as_u16();
        if status != 200 {
            let msg = format!("{url}: HTTP {status}");
            return if status >= 500 || status == 429 {
                Err(Attempt::Retry(msg))
            } else {
                Err(Attempt::Fatal(BackendError::BackendUnavailable(msg)))
            };
        }
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Attempt::Retry(format!("{url}: reading body: {e}")))?;
        decode_body(&text).map_err(|e| match e {
            BackendError::MalformedResponse(m) => Attempt::Fatal(BackendError::MalformedResponse(format!("{url}: {m}"))),
            other => Attempt::Fatal(other),
        })
    }

    fn call<B: Serialize, R: DeserializeOwned>(&self, route: &str, body: Option<&B>) -> Result<R, BackendError> {
        let url = self.url(route);
        let mut last = String::new();
        for attempt in 0..=self.cfg.max_retries {
            if attempt > 0 {
                let wait = self.cfg.backoff_base_ms.saturating_mul(1 << (attempt - 1).min(16));
                std::thread::sleep(Duration::from_millis(wait));
            }
            match self.once(&url, body) {
                Ok(r) => return Ok(r),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(msg)) => {
                    log::warn!("backend attempt {} failed: {msg}", attempt + 1);
                    last = msg;
                }
            }
        }
        Err(BackendError::BackendUnavailable(last))
    }

    fn post<B: Serialize, R: DeserializeOwned>(&self, route: &str, body: &B) -> Result<R, BackendError> {
        self.call(route, Some(body))
    }

    /// `GET /healthz`.
    pub fn healthz(&self) -> Result<(), BackendError> {
        let url = self.url("/healthz");
        let _slot = self.limiter.acquire();
        match self.agent.get(&url).call() {
            Ok(r) if r.status().as_u16() == 200 => Ok(()),
            Ok(r) => Err(BackendError::BackendUnavailable(format!("{url}: HTTP {}", r.status().as_u16()))),
            Err(e) => Err(BackendError::BackendUnavailable(format!("{url}: {e}"))),
        }
    }

    /// Builds a [`BackendSet`] where every capability is served by this client.
    pub fn into_backend_set(self) -> Result<BackendSet, BackendError> {
        let client = Arc::new(self);
        let lms = client
            .cfg
            .lm_routes
            .iter()
            .map(|r| Arc::new(RemoteLm { client: client.clone(), route: r.clone() }) as Arc<dyn LanguageModel>)
            .collect();
        let safety = Arc::new(RemoteSafety { client: client.clone(), route: client.cfg.safety_route.clone() });
        let detectors =
            Arc::new(RemoteSafety { client: client.clone(), route: client.cfg.detectors_route.clone() });
        BackendSet::new(client.clone(), lms, client.clone(), client, safety, detectors)
    }
}

impl NliModel for RemoteClient {
    fn id(&self) -> String {
        format!("remote:{}/nli", self.cfg.base_url)
    }

    fn nli(&self, premise: &str, hypothesis: &str) -> Result<NliScores, BackendError> {
        self.post("/nli", &NliReq { premise, hypothesis })
    }
}

impl Embedder for RemoteClient {
    fn id(&self) -> String {
        format!("remote:{}/embed", self.cfg.base_url)
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, BackendError> {
        let r: EmbedResp = self.post("/embed", &TextReq { text })?;
        Ok(r.vector)
    }
}

impl TextGenerator for RemoteClient {
    fn id(&self) -> String {
        format!("remote:{}/generate", self.cfg.base_url)
    }

    fn generate(&self, req: &GenRequest) -> Result<GenResponse, BackendError> {
        self.post(
            "/generate",
            &GenWire {
                prompt: &req.prompt,
                n: req.n_candidates,
                temperature: req.temperature,
                max_tokens: req.max_tokens,
            },
        )
    }
}

struct RemoteLm {
    client: Arc<RemoteClient>,
    route: String,
}

impl LanguageModel for RemoteLm {
    fn id(&self) -> String {
        format!("remote:{}{}", self.client.cfg.base_url, self.route)
    }

    fn lm_stats(&self, context: &str, continuation: &str) -> Result<LmStats, BackendError> {
        self.client.post(&self.route, &LmReq { context, continuation })
    }
}

struct RemoteSafety {
    client: Arc<RemoteClient>,
    route: String,
}

impl SafetyModel for RemoteSafety {
    fn id(&self) -> String {
        format!("remote:{}{}", self.client.cfg.base_url, self.route)
    }

    fn scores(&self, text: &str) -> Result<Vec<f64>, BackendError> {
        let r: ScoresResp = self.client.post(&self.route, &TextReq { text })?;
        Ok(r.scores)
    }
}

/// Outcome of one sidecar conformance check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Tolerance on the NLI simplex and the embedding norm in [`conformance`].
pub const CONFORMANCE_TOLERANCE: f64 = 1e-3;

/// Protocol checks against a live sidecar: health, response schemas,
/// probability simplex, unit embeddings, candidate counts and
/// temperature-0 determinism.
pub fn conformance(cfg: RemoteConfig) -> Vec<Check> {
    let mut out = Vec::new();
    let mut push = |name: &str, r: Result<(), String>| {
        out.push(Check { name: name.into(), passed: r.is_ok(), detail: r.err().unwrap_or_default() });
    };
    let client = match RemoteClient::new(cfg) {
        Ok(c) => c,
        Err(e) => {
            push("client", Err(e.to_string()));
            return out;
        }
    };
    push("healthz", client.healthz().map_err(|e| e.to_string()));
    let e = |e: BackendError| e.to_string();
    push(
        "nli_simplex",
        client.nli("The sky is blue.", "The sky has a color.").map_err(e).and_then(|s| {
            let sum = s.p_ent + s.p_neu + s.p_contr;
            let inside = [s.p_ent, s.p_neu, s.p_contr].iter().all(|p| (0.0..=1.0).contains(p));
            if inside && (sum - 1.0).abs() <= CONFORMANCE_TOLERANCE {
                Ok(())
            } else {
                Err(format!("not a distribution: {s:?}"))
            }
        }),
    );
    for route in &client.cfg.lm_routes {
        let r: Result<LmStats, _> = client.post(route, &LmReq { context: "The sky is", continuation: " blue." });
        push(
            &format!("lm_stats {route}"),
            r.map_err(e).and_then(|s| s.validate().map_err(|x| x.to_string())),
        );
    }
    push(
        "embed_unit",
        client.embed("The sky is blue.").map_err(e).and_then(|v| {
            let n = crate::text::l2_norm(&v);
            if !v.is_empty() && (n - 1.0).abs() <= CONFORMANCE_TOLERANCE {
                Ok(())
            } else {
                Err(format!("norm {n} over {} dims", v.len()))
            }
        }),
    );
    let req = GenRequest::new("Name one color.", 2).with_settings(0.0, 16);
    let first = client.generate(&req);
    push(
        "generate_count",
        first.clone().map_err(e).and_then(|r| {
            if r.candidates.len() == 2 {
                Ok(())
            } else {
                Err(format!("{} candidates for n=2", r.candidates.len()))
            }
        }),
    );
    push(
        "generate_deterministic",
        first.map_err(e).and_then(|a| {
            let b = client.generate(&req).map_err(e)?;
            if a == b {
                Ok(())
            } else {
                Err(format!("{:?} then {:?}", a.candidates, b.candidates))
            }
        }),
    );
    for route in [&client.cfg.safety_route, &client.cfg.detectors_route] {
        let r: Result<ScoresResp, _> = client.post(route, &TextReq { text: "The sky is blue." });
        push(
            &format!("scores {route}"),
            r.map_err(e).and_then(|s| {
                if !s.scores.is_empty() && s.scores.iter().all(|x| (0.0..=1.0).contains(x)) {
                    Ok(())
                } else {
                    Err(format!("scores {:?}", s.scores))
                }
            }),
        );
    }
    out
}
