//! Blocking JSON-over-HTTP calls with retry, shared by the remote encoder and
//! the remote generation backend.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Clone, Debug, PartialEq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
    pub factor: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { attempts: 3, base_delay: Duration::from_secs(1), factor: 2 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum CallError {
    /// Timeouts, connection failures, 5xx and 429.
    Retryable(String),
    Fatal(String),
}

impl CallError {
    pub(crate) fn message(&self) -> &str {
        match self {
            CallError::Retryable(m) | CallError::Fatal(m) => m,
        }
    }
}

pub(crate) fn agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::config_builder().timeout_global(Some(timeout)).build().into()
}

pub(crate) fn post_json<B: Serialize, T: DeserializeOwned>(
    agent: &ureq::Agent,
    url: &str,
    body: &B,
    bearer: Option<&str>,
) -> Result<T, CallError> {
    let mut req = agent.post(url);
    if let Some(token) = bearer {
        req = req.header("Authorization", &format!("Bearer {token}"));
    }
    match req.send_json(body) {
        Ok(mut resp) => resp
            .body_mut()
            .read_json::<T>()
            .map_err(|e| CallError::Fatal(format!("{url}: malformed response: {e}"))),
        Err(ureq::Error::StatusCode(code)) if code == 429 || code >= 500 => {
            Err(CallError::Retryable(format!("{url}: http status {code}")))
        }
        Err(ureq::Error::StatusCode(code)) => Err(CallError::Fatal(format!("{url}: http status {code}"))),
        Err(e @ (ureq::Error::Io(_) | ureq::Error::Timeout(_) | ureq::Error::ConnectionFailed | ureq::Error::HostNotFound)) => {
            Err(CallError::Retryable(format!("{url}: {e}")))
        }
        Err(e) => Err(CallError::Fatal(format!("{url}: {e}"))),
    }
}

/// Runs `call` until it succeeds, fails fatally, or attempts run out, sleeping
/// `base_delay * factor^k` between tries.
pub(crate) fn with_retry<T>(policy: &RetryPolicy, mut call: impl FnMut() -> Result<T, CallError>) -> Result<T, CallError> {
    let attempts = policy.attempts.max(1);
    let mut delay = policy.base_delay;
    for attempt in 1..=attempts {
        match call() {
            Err(CallError::Retryable(msg)) if attempt < attempts => {
                log::warn!("attempt {attempt}/{attempts} failed: {msg}; retrying in {delay:?}");
                std::thread::sleep(delay);
                delay *= policy.factor;
            }
            other => return other,
        }
    }
    unreachable!("loop returns on the final attempt")
}
