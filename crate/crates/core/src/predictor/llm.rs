use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::Predictor;
use crate::error::{Error, Result};
use crate::metric::{one_hot, Distribution};
use crate::schedule::{render_prompt, HistoricalSequence, Observation};
use crate::task_gen::TaskSpec;

/// Total probability mass spread over states absent from the log-probabilities.
pub const LOGPROB_FLOOR: f64 = 1e-6;

pub const ENDPOINT_ENV: &str = "ICCL_LLM_ENDPOINT";
pub const API_KEY_ENV: &str = "ICCL_LLM_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum LlmMode {
    Greedy,
    Logprob { top_k: usize },
    Sampling { n: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmClientConfig {
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub mode: LlmMode,
    pub temperature: f64,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub max_parallel: usize,
    pub backoff_base_secs: f64,
    pub max_tokens: u32,
}

impl Default for LlmClientConfig {
    fn default() -> Self {
        LlmClientConfig {
            endpoint: String::new(),
            model: String::new(),
            api_key_env: API_KEY_ENV.to_string(),
            mode: LlmMode::Greedy,
            temperature: 0.0,
            timeout_secs: 60.0,
            max_retries: 5,
            max_parallel: 4,
            backoff_base_secs: 0.5,
            max_tokens: 4,
        }
    }
}

impl LlmClientConfig {
    /// Defaults with the endpoint taken from the environment when set.
    pub fn from_env() -> Self {
        LlmClientConfig {
            endpoint: std::env::var(ENDPOINT_ENV).unwrap_or_default(),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.endpoint.is_empty() {
            return Err(Error::Config(format!(
                "no LLM endpoint configured (set {ENDPOINT_ENV})"
            )));
        }
        if !(self.temperature >= 0.0) {
            return Err(Error::Config("temperature must be >= 0".into()));
        }
        if let LlmMode::Sampling { n: 0 } = self.mode {
            return Err(Error::Config("sampling needs n >= 1".into()));
        }
        if let LlmMode::Logprob { top_k: 0 } = self.mode {
            return Err(Error::Config("logprob mode needs top_k >= 1".into()));
        }
        if self.max_parallel == 0 {
            return Err(Error::Config("max_parallel must be >= 1".into()));
        }
        Ok(())
    }
}

/// First maximal run of decimal digits in `text`, as a state below `n_states`.
pub fn parse_state(text: &str, n_states: usize) -> Result<usize> {
    let start = text.find(|c: char| c.is_ascii_digit());
    let digits: String = match start {
        Some(i) => text[i..].chars().take_while(|c| c.is_ascii_digit()).collect(),
        None => return Err(Error::Parse { raw: text.to_string() }),
    };
    match digits.parse::<usize>() {
        Ok(s) if s < n_states => Ok(s),
        _ => Err(Error::Parse { raw: text.to_string() }),
    }
}

#[derive(Debug, Default)]
struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn acquire(&self, limit: usize) {
        let mut used = self.permits.lock().unwrap_or_else(|e| e.into_inner());
        while *used >= limit {
            used = self.cv.wait(used).unwrap_or_else(|e| e.into_inner());
        }
        *used += 1;
    }

    fn release(&self) {
        let mut used = self.permits.lock().unwrap_or_else(|e| e.into_inner());
        *used -= 1;
        self.cv.notify_one();
    }
}

/// Chat-completions client. Clones share one concurrency limit.
#[derive(Debug, Clone)]
pub struct LlmClient {
    pub config: LlmClientConfig,
    agent: ureq::Agent,
    gate: Arc<Semaphore>,
}

impl LlmClient {
    pub fn new(config: LlmClientConfig) -> Result<Self> {
        config.validate()?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(LlmClient {
            config,
            agent,
            gate: Arc::new(Semaphore::default()),
        })
    }

    fn url(&self) -> String {
        format!("{}/v1/chat/completions", self.config.endpoint.trim_end_matches('/'))
    }

    /// Request body for one prompt under the configured mode.
    pub fn request_body(&self, prompt: &str) -> Value {
        let mut body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_tokens,
        });
        match self.config.mode {
            LlmMode::Greedy => {}
            LlmMode::Logprob { top_k } => {
                body["logprobs"] = json!(true);
                body["top_logprobs"] = json!(top_k);
            }
            LlmMode::Sampling { n } => {
                body["n"] = json!(n);
                body["temperature"] = json!(1.0);
            }
        }
        body
    }

    fn post(&self, body: &Value) -> Result<Value> {
        let key = std::env::var(&self.config.api_key_env).ok();
        let mut last_err = String::new();
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 {
                let base = self.config.backoff_base_secs * 2f64.powi(attempt as i32 - 1);
                let jitter = rand::rng().random_range(0.0..=0.5 * base);
                std::thread::sleep(Duration::from_secs_f64(base + jitter));
            }
            let mut req = self.agent.post(&self.url()).header("Content-Type", "application/json");
            if let Some(k) = &key {
                req = req.header("Authorization", &format!("Bearer {k}"));
            }
            match req.send_json(body) {
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    if status == 200 {
                        return resp
                            .body_mut()
                            .read_json::<Value>()
                            .map_err(|e| Error::Transport(format!("bad response body: {e}")));
                    }
                    last_err = format!("HTTP {status}");
                    if status != 429 && status < 500 {
                        break;
                    }
                }
                Err(e) => last_err = e.to_string(),
            }
            log::warn!("LLM request attempt {} failed: {last_err}", attempt + 1);
        }
        Err(Error::Transport(last_err))
    }

    /// Next-state distribution for one rendered prompt.
    pub fn predict_prompt(&self, prompt: &str, n_states: usize) -> Result<Distribution> {
        let body = self.request_body(prompt);
        self.gate.acquire(self.config.max_parallel);
        let resp = self.post(&body);
        self.gate.release();
        let resp = resp?;
        match self.config.mode {
            LlmMode::Greedy => {
                let text = choice_text(&resp, 0)?;
                one_hot(parse_state(&text, n_states)?, n_states)
            }
            LlmMode::Logprob { .. } => logprob_distribution(&resp, n_states),
            LlmMode::Sampling { .. } => {
                let choices = resp["choices"].as_array().cloned().unwrap_or_default();
                let mut counts = vec![1.0; n_states];
                for c in &choices {
                    let text = c["message"]["content"].as_str().unwrap_or_default();
                    match parse_state(text, n_states) {
                        Ok(s) => counts[s] += 1.0,
                        Err(_) => log::warn!("skipping unparseable sample {text:?}"),
                    }
                }
                Distribution::from_weights(counts)
            }
        }
    }
}

fn choice_text(resp: &Value, i: usize) -> Result<String> {
    resp["choices"][i]["message"]["content"]
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| Error::Parse { raw: resp.to_string() })
}

/// Valid state tokens from the first generated position, renormalized, with
/// `LOGPROB_FLOOR` shared equally among missing states.
fn logprob_distribution(resp: &Value, n_states: usize) -> Result<Distribution> {
    let top = resp["choices"][0]["logprobs"]["content"][0]["top_logprobs"]
        .as_array()
        .ok_or_else(|| Error::Parse { raw: resp.to_string() })?;
    let mut mass = vec![0.0; n_states];
    for entry in top {
        let token = entry["token"].as_str().unwrap_or_default().trim();
        let Some(lp) = entry["logprob"].as_f64() else { continue };
        if token.is_empty() || !token.bytes().all(|b| b.is_ascii_digit()) {
            continue;
        }
        if let Ok(s) = token.parse::<usize>() {
            if s < n_states {
                mass[s] += lp.exp();
            }
        }
    }
    let total: f64 = mass.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Coverage);
    }
    let missing = mass.iter().filter(|m| **m == 0.0).count();
    let mut p: Vec<f64> = mass.iter().map(|m| m / total).collect();
    if missing > 0 {
        let share = LOGPROB_FLOOR / missing as f64;
        p.iter_mut().filter(|v| **v == 0.0).for_each(|v| *v = share);
    }
    Distribution::from_weights(p)
}

impl Predictor for LlmClient {
    fn reset(&mut self) -> Result<()> {
        Ok(())
    }

    fn observe(&mut self, _obs: &Observation<'_>) -> Result<()> {
        Err(Error::invalid("the LLM client is prompt-based and does not observe transitions"))
    }

    fn predict(&self, _x: usize, _target_label: Option<&str>) -> Result<Distribution> {
        Err(Error::invalid("the LLM client needs the full sequence to build a prompt"))
    }

    /// One prompt per query state, issued concurrently up to `max_parallel`.
    fn predictions(
        &mut self,
        seq: &HistoricalSequence,
        target: &TaskSpec,
    ) -> Result<Vec<(usize, Distribution)>> {
        let prompts = (0..target.n_states)
            .map(|x| render_prompt(seq, x))
            .collect::<Result<Vec<_>>>()?;
        let this = &*self;
        std::thread::scope(|scope| {
            let handles: Vec<_> = prompts
                .iter()
                .map(|p| scope.spawn(move || this.predict_prompt(p, target.n_states)))
                .collect();
            handles
                .into_iter()
                .enumerate()
                .map(|(x, h)| {
                    let d = h
                        .join()
                        .map_err(|_| Error::Transport("request thread panicked".into()))??;
                    Ok((x, d))
                })
                .collect()
        })
    }
}
