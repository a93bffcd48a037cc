//! Blocking JSON POST with bounded exponential-backoff retry, shared by the
//! embedding and generation clients.

use std::time::Duration;

use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HttpError {
    #[error("{url}: HTTP {status} after {attempts} attempt(s)")]
    Status {
        url: String,
        status: u16,
        attempts: u32,
    },
    #[error("{url}: {message} after {attempts} attempt(s)")]
    Transport {
        url: String,
        message: String,
        attempts: u32,
    },
    #[error("{url}: response is not valid JSON: {message}")]
    Decode { url: String, message: String },
}

#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub backoff_base: Duration,
    pub timeout: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            backoff_base: Duration::from_millis(500),
            timeout: Duration::from_secs(60),
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `attempt` (0-based): base * 2^attempt.
    pub fn delay(&self, attempt: u32) -> Duration {
        self.backoff_base.saturating_mul(1u32 << attempt.min(16))
    }
}

pub(crate) struct JsonClient {
    agent: ureq::Agent,
    bearer: Option<String>,
    policy: RetryPolicy,
}

impl JsonClient {
    /// `auth_env_var` names an environment variable holding a bearer token;
    /// an unset variable means no Authorization header.
    pub fn new(auth_env_var: Option<&str>, policy: RetryPolicy) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(policy.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let bearer = auth_env_var
            .and_then(|v| std::env::var(v).ok())
            .filter(|t| !t.is_empty());
        Self {
            agent,
            bearer,
            policy,
        }
    }

    pub fn post(&self, url: &str, body: &Value) -> Result<Value, HttpError> {
        let attempts = self.policy.max_retries + 1;
        let mut last = None;
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(self.policy.delay(attempt - 1));
            }
            let mut req = self.agent.post(url);
            if let Some(token) = &self.bearer {
                req = req.header("Authorization", &format!("Bearer {token}"));
            }
            match req.send_json(body) {
                Ok(resp) if resp.status().is_success() => {
                    return resp
                        .into_body()
                        .read_json::<Value>()
                        .map_err(|e| HttpError::Decode {
                            url: url.to_string(),
                            message: e.to_string(),
                        });
                }
                Ok(resp) => {
                    log::warn!(
                        "POST {url} returned {} (attempt {})",
                        resp.status(),
                        attempt + 1
                    );
                    last = Some(HttpError::Status {
                        url: url.to_string(),
                        status: resp.status().as_u16(),
                        attempts: attempt + 1,
                    });
                }
                Err(e) => {
                    log::warn!("POST {url} failed: {e} (attempt {})", attempt + 1);
                    last = Some(HttpError::Transport {
                        url: url.to_string(),
                        message: e.to_string(),
                        attempts: attempt + 1,
                    });
                }
            }
        }
        Err(last.expect("at least one attempt"))
    }
}

pub(crate) fn join_url(base: &str, path: &str) -> String {
    format!(
        "{}/{}",
        base.trim_end_matches('/'),
        path.trim_start_matches('/')
    )
}
