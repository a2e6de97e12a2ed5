//! OpenAI-compatible chat-completions client.
//!
//! Each call posts one user message whose content is the prompt followed by
//! the images as base64 PNG data URLs. Timeouts, connection failures and
//! the statuses 408, 429 and 5xx are retried with exponential backoff;
//! other statuses fail at once.

use std::time::{Duration, Instant};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde_json::{json, Value};

use super::{Attempt, Backend, BackendConfig, BackendError, BackendErrorKind, BackendKind, BackendReply, BackendRequest};
use crate::dataset::AreaImage;
use crate::raster::{load_raster, min_max_normalize, BandId, Raster};
use crate::render::{render_base, render_overlay, Image, RenderConfig};
use crate::signature::SignatureRegistry;

/// Smallest side, in pixels, of an image sent to the model.
const MIN_IMAGE_SIDE: usize = 256;

pub struct HttpBackend {
    agent: ureq::Agent,
    url: String,
    model: String,
    temperature: f64,
    api_key: Option<String>,
    max_retries: u32,
    backoff: Duration,
    registry: SignatureRegistry,
}

/// Request body for one chat-completions call.
pub fn chat_request_body(model: &str, temperature: f64, prompt: &str, pngs: &[Vec<u8>]) -> Value {
    let mut content = vec![json!({ "type": "text", "text": prompt })];
    for png in pngs {
        content.push(json!({
            "type": "image_url",
            "image_url": { "url": format!("data:image/png;base64,{}", STANDARD.encode(png)) }
        }));
    }
    json!({
        "model": model,
        "temperature": temperature,
        "messages": [{ "role": "user", "content": content }]
    })
}

/// The assistant text of a chat-completions response. Content given as a
/// list of parts is concatenated.
pub fn extract_reply_text(v: &Value) -> Option<String> {
    let content = v.get("choices")?.get(0)?.get("message")?.get("content")?;
    match content {
        Value::String(s) => Some(s.clone()),
        Value::Array(parts) => {
            let text: Vec<&str> = parts.iter().filter_map(|p| p.get("text").and_then(Value::as_str)).collect();
            (!text.is_empty()).then(|| text.join(""))
        }
        _ => None,
    }
}

fn retryable_status(code: u16) -> bool {
    code == 408 || code == 429 || (500..600).contains(&code)
}

/// A raster as the model sees it: the geological image in grayscale, every
/// other layer in the rainbow colormap over black.
fn model_image(role: &BandId, r: &Raster, registry: &SignatureRegistry) -> Result<Image, String> {
    let unit = if let Some(range) = registry.range_of(role) {
        min_max_normalize(r, range).map_err(|e| e.to_string())?
    } else if *role == BandId::Mpm {
        let (lo, hi) = (registry.mpm.out_lo, registry.mpm.out_hi);
        r.map(|v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0))
    } else {
        r.map(|v| v.clamp(0.0, 1.0))
    };
    let scale = MIN_IMAGE_SIDE.div_ceil(r.width().max(r.height()).max(1)).max(1);
    if *role == BandId::Geological {
        return Ok(render_base(&unit).upscale(scale));
    }
    let black = unit.map(|_| 0.0);
    let cfg = RenderConfig { scale: scale as u32, ..RenderConfig::default() };
    render_overlay(&black, &unit, &cfg).map_err(|e| e.to_string())
}

impl HttpBackend {
    pub fn new(cfg: &BackendConfig, registry: SignatureRegistry) -> Result<Self, BackendError> {
        cfg.validate().map_err(|m| BackendError::new(BackendErrorKind::Rejected, m))?;
        let endpoint = cfg.endpoint.as_deref().unwrap_or_default().trim_end_matches('/');
        let url = if endpoint.ends_with("/chat/completions") { endpoint.to_string() } else { format!("{endpoint}/chat/completions") };
        let agent: ureq::Agent =
            ureq::Agent::config_builder().timeout_global(Some(cfg.timeout())).http_status_as_error(false).build().into();
        Ok(HttpBackend {
            agent,
            url,
            model: cfg.model.clone(),
            temperature: cfg.temperature,
            api_key: cfg.api_key.clone(),
            max_retries: cfg.max_retries,
            backoff: Duration::from_millis(cfg.backoff_ms),
            registry,
        })
    }

    fn encode_images(&self, images: &[AreaImage]) -> Result<Vec<Vec<u8>>, BackendError> {
        images
            .iter()
            .map(|img| {
                let r =
                    load_raster(&img.path).map_err(|e| BackendError::new(BackendErrorKind::Unresolvable, format!("{}: {e}", img.role)))?;
                model_image(&img.role, &r, &self.registry)
                    .and_then(|i| i.to_png().map_err(|e| e.to_string()))
                    .map_err(|m| BackendError::new(BackendErrorKind::Unresolvable, format!("{}: {m}", img.role)))
            })
            .collect()
    }

    /// One HTTP exchange. `Ok` holds the reply text; `Err` holds the status
    /// (if any), a description and whether a retry may help.
    fn exchange(&self, body: &Value) -> Result<String, (Option<u16>, String, bool, bool)> {
        let mut req = self.agent.post(&self.url).header("Content-Type", "application/json");
        if let Some(k) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {k}"));
        }
        match req.send_json(body) {
            Ok(mut resp) => {
                let code = resp.status().as_u16();
                if (200..300).contains(&code) {
                    let v: Value =
                        resp.body_mut().read_json().map_err(|e| (Some(code), format!("unreadable response body: {e}"), false, false))?;
                    extract_reply_text(&v).ok_or((Some(code), "response has no message content".into(), false, false))
                } else {
                    let detail = resp.body_mut().read_to_string().unwrap_or_default();
                    let detail: String = detail.chars().take(200).collect();
                    Err((Some(code), format!("status {code}: {detail}"), retryable_status(code), false))
                }
            }
            Err(ureq::Error::Timeout(t)) => Err((None, format!("timeout ({t})"), true, true)),
            Err(e) => Err((None, e.to_string(), true, false)),
        }
    }
}

impl Backend for HttpBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Http
    }

    fn invoke(&self, req: &BackendRequest<'_>) -> Result<BackendReply, BackendError> {
        let pngs = self.encode_images(req.images)?;
        let body = chat_request_body(&self.model, self.temperature, req.prompt, &pngs);
        let mut attempts = Vec::new();
        let total = self.max_retries + 1;
        let mut last_timeout = false;
        for number in 1..=total {
            if number > 1 {
                std::thread::sleep(self.backoff * 2u32.saturating_pow(number - 2));
            }
            let started = Instant::now();
            let result = self.exchange(&body);
            let elapsed_ms = started.elapsed().as_millis() as u64;
            match result {
                Ok(text) => {
                    attempts.push(Attempt { number, elapsed_ms, status: Some(200), outcome: "ok".into() });
                    return Ok(BackendReply { text, attempts });
                }
                Err((status, outcome, retry, timeout)) => {
                    attempts.push(Attempt { number, elapsed_ms, status, outcome: outcome.clone() });
                    if !retry {
                        return Err(BackendError { kind: BackendErrorKind::Rejected, message: outcome, attempts });
                    }
                    last_timeout = timeout;
                }
            }
        }
        let kind = match (total, last_timeout) {
            (1, true) => BackendErrorKind::Timeout,
            (1, false) => BackendErrorKind::Transport,
            _ => BackendErrorKind::ExhaustedRetries,
        };
        let last = attempts.last().map(|a| a.outcome.clone()).unwrap_or_default();
        Err(BackendError { kind, message: format!("{total} attempts failed; last: {last}"), attempts })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::{store_raster, Extent};
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::{Arc, Mutex};

    /// Serves canned `(status, body, delay)` responses in order on a local
    /// port, recording the request bodies.
    fn serve(responses: Vec<(u16, String, u64)>) -> (String, Arc<Mutex<Vec<String>>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let seen = Arc::new(Mutex::new(Vec::new()));
        let log = seen.clone();
        std::thread::spawn(move || {
            for (status, body, delay) in responses {
                let Ok((stream, _)) = listener.accept() else { return };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                log.lock().unwrap().push(String::from_utf8(buf).unwrap());
                std::thread::sleep(Duration::from_millis(delay));
                let mut stream = stream;
                let _ = write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
            }
        });
        (format!("http://{addr}/v1"), seen)
    }

    fn ok_body(text: &str) -> String {
        json!({ "choices": [{ "message": { "role": "assistant", "content": text } }] }).to_string()
    }

    fn backend(endpoint: &str, retries: u32, timeout_ms: u64) -> HttpBackend {
        let cfg = BackendConfig {
            kind: BackendKind::Http,
            endpoint: Some(endpoint.into()),
            model: "test-model".into(),
            timeout_ms,
            max_retries: retries,
            backoff_ms: 1,
            api_key: Some("secret".into()),
            ..Default::default()
        };
        HttpBackend::new(&cfg, SignatureRegistry::default()).unwrap()
    }

    fn image(dir: &std::path::Path) -> Vec<AreaImage> {
        let r = Raster::new(BandId::Hydrothermal, 2, 2, Extent::square(1.0).unwrap(), vec![0.0, 0.5, 1.0, f64::NAN]).unwrap();
        store_raster(&r, dir.join("sig_h")).unwrap();
        vec![AreaImage { role: BandId::Hydrothermal, path: dir.join("sig_h") }]
    }

    fn req<'a>(images: &'a [AreaImage]) -> BackendRequest<'a> {
        BackendRequest { area_id: "A", tool_id: "c2", prompt: "judge this", images, references: &[], attempt: 1 }
    }

    #[test]
    fn transient_overload_then_success() {
        let dir = tempfile::tempdir().unwrap();
        let imgs = image(dir.path());
        let (url, seen) = serve(vec![(503, "busy".into(), 0), (429, "slow down".into(), 0), (200, ok_body("Score: 2\nExplanation: x"), 0)]);
        let reply = backend(&url, 3, 5_000).invoke(&req(&imgs)).unwrap();
        assert_eq!(reply.text, "Score: 2\nExplanation: x");
        assert_eq!(reply.attempts.len(), 3);
        assert_eq!(reply.attempts.iter().map(|a| a.status).collect::<Vec<_>>(), [Some(503), Some(429), Some(200)]);
        let body: Value = serde_json::from_str(&seen.lock().unwrap()[0]).unwrap();
        assert_eq!(body["model"], "test-model");
        assert_eq!(body["temperature"], 0.0);
        assert_eq!(body["messages"][0]["content"][0]["text"], "judge this");
        let url = body["messages"][0]["content"][1]["image_url"]["url"].as_str().unwrap();
        let png = STANDARD.decode(url.strip_prefix("data:image/png;base64,").unwrap()).unwrap();
        assert_eq!(&png[..8], b"\x89PNG\r\n\x1a\n");
    }

    #[test]
    fn timeouts_exhaust_retries() {
        let dir = tempfile::tempdir().unwrap();
        let imgs = image(dir.path());
        let (url, _) = serve(vec![(200, ok_body("late"), 400); 3]);
        let err = backend(&url, 2, 100).invoke(&req(&imgs)).unwrap_err();
        assert_eq!(err.kind, BackendErrorKind::ExhaustedRetries);
        assert_eq!(err.attempts.len(), 3);
        assert!(err.attempts.iter().all(|a| a.outcome.starts_with("timeout")), "{:?}", err.attempts);
    }

    #[test]
    fn client_errors_fail_immediately() {
        let dir = tempfile::tempdir().unwrap();
        let imgs = image(dir.path());
        let (url, _) = serve(vec![(401, "{\"error\":\"bad key\"}".into(), 0)]);
        let err = backend(&url, 3, 5_000).invoke(&req(&imgs)).unwrap_err();
        assert_eq!(err.kind, BackendErrorKind::Rejected);
        assert_eq!(err.attempts.len(), 1);
        assert_eq!(err.attempts[0].status, Some(401));
    }

    #[test]
    fn reply_text_extraction() {
        assert_eq!(extract_reply_text(&serde_json::from_str(&ok_body("hi")).unwrap()).as_deref(), Some("hi"));
        let parts =
            json!({ "choices": [{ "message": { "content": [{ "type": "text", "text": "a" }, { "type": "text", "text": "b" }] } }] });
        assert_eq!(extract_reply_text(&parts).as_deref(), Some("ab"));
        assert_eq!(extract_reply_text(&json!({ "choices": [] })), None);
    }
}
