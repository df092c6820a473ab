use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::lm::decode::generate_with;
use crate::lm::{DecodePolicy, ModelParameters, Network};
use crate::train::adapter::FAdapter;
use crate::{Error, Result};

/// Text completion: `(prompt, policy, max_new, seed) → continuation`.
pub trait Generator {
    fn generate(&self, prompt: &str, policy: DecodePolicy, max_new: usize, seed: u64) -> Result<String>;
}

impl<G> Generator for G
where
    G: Fn(&str, DecodePolicy, usize, u64) -> Result<String>,
{
    fn generate(&self, prompt: &str, policy: DecodePolicy, max_new: usize, seed: u64) -> Result<String> {
        self(prompt, policy, max_new, seed)
    }
}

/// In-process generator over a parameter set, optionally with an F-Adapter.
pub struct LocalGenerator<'a> {
    net: Network<'a, f32>,
}

impl<'a> LocalGenerator<'a> {
    pub fn new(params: &'a ModelParameters<f32>) -> Self {
        Self { net: Network::new(params) }
    }

    pub fn with_adapter(params: &'a ModelParameters<f32>, adapter: &'a FAdapter<f32>) -> Result<Self> {
        let net = Network::new(params).with_adapter(adapter);
        net.check()?;
        Ok(Self { net })
    }
}

impl Generator for LocalGenerator<'_> {
    fn generate(&self, prompt: &str, policy: DecodePolicy, max_new: usize, seed: u64) -> Result<String> {
        let bytes = generate_with(&self.net, prompt.as_bytes(), policy, max_new, seed)?;
        Ok(String::from_utf8_lossy(&bytes).into_owned())
    }
}

/// Request body of the remote completion endpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub temperature: f64,
    pub top_k: usize,
    pub top_p: f64,
    pub max_new_tokens: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl CompletionRequest {
    /// Greedy decoding is sent as temperature 0.
    pub fn new(prompt: &str, policy: DecodePolicy, max_new: usize, seed: u64) -> Self {
        let (temperature, top_k, top_p) = match policy {
            DecodePolicy::Greedy => (0.0, 1, 1.0),
            DecodePolicy::Sampled { temperature, top_k, top_p } => (temperature, top_k, top_p),
        };
        Self { prompt: prompt.to_string(), temperature, top_k, top_p, max_new_tokens: max_new, seed: Some(seed) }
    }

    /// Inverse of [`CompletionRequest::new`]; temperature 0 means greedy.
    pub fn policy(&self) -> DecodePolicy {
        if self.temperature <= 0.0 {
            DecodePolicy::Greedy
        } else {
            DecodePolicy::Sampled { temperature: self.temperature, top_k: self.top_k, top_p: self.top_p }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
}

/// Black-box generator behind an HTTP endpoint that accepts a
/// [`CompletionRequest`] as a JSON POST and answers `{"text": ...}`.
pub struct HttpGenerator {
    url: String,
    agent: ureq::Agent,
}

impl HttpGenerator {
    pub fn new(url: impl Into<String>) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(Duration::from_secs(60)).build();
        Self { url: url.into(), agent }
    }
}

impl Generator for HttpGenerator {
    fn generate(&self, prompt: &str, policy: DecodePolicy, max_new: usize, seed: u64) -> Result<String> {
        let body = CompletionRequest::new(prompt, policy, max_new, seed);
        let response = self.agent.post(&self.url).send_json(&body).map_err(|e| match e {
            ureq::Error::Status(code, _) => Error::Protocol(format!("endpoint answered HTTP {code}")),
            ureq::Error::Transport(t) => Error::Unreachable(format!("{}: {t}", self.url)),
        })?;
        let parsed: CompletionResponse =
            response.into_json().map_err(|e| Error::Protocol(format!("malformed completion: {e}")))?;
        Ok(parsed.text)
    }
}
