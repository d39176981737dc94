//! Chat-completion client used by the remote planner and guard backends.
//!
//! Every request passes the outbound privacy filter before reaching a
//! transport. Transports are pluggable: a live OpenAI-compatible endpoint,
//! a directory of recorded replies keyed by request hash, or a closure.

use std::path::PathBuf;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::privacy::{OutboundFilter, PrivacyError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub role: Role,
    pub content: String,
}

impl ChatTurn {
    pub fn user(content: impl Into<String>) -> Self {
        ChatTurn { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatTurn { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system_prompt: String,
    pub turns: Vec<ChatTurn>,
    pub model_name: String,
    pub max_tokens: u32,
    pub temperature: f32,
}

impl ChatRequest {
    pub fn new(model_name: impl Into<String>, system_prompt: impl Into<String>, turns: Vec<ChatTurn>) -> Self {
        ChatRequest {
            system_prompt: system_prompt.into(),
            turns,
            model_name: model_name.into(),
            max_tokens: 256,
            temperature: 0.0,
        }
    }

    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("request serialization")
    }

    /// Hex SHA-256 of the canonical JSON; names the recorded reply file.
    pub fn fixture_key(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    pub fn last_user_turn(&self) -> Option<&str> {
        self.turns.iter().rev().find(|t| t.role == Role::User).map(|t| t.content.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("transient transport failure: {0}")]
    Transient(String),
    #[error("transport failure: {0}")]
    Fatal(String),
}

pub trait LlmTransport: Send + Sync {
    fn send(&self, request: &ChatRequest) -> Result<String, TransportError>;
}

/// Replays `<dir>/<fixture_key>.txt`. A missing file is fatal.
#[derive(Debug, Clone)]
pub struct FixtureTransport {
    dir: PathBuf,
}

impl FixtureTransport {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        FixtureTransport { dir: dir.into() }
    }

    pub fn path_for(&self, request: &ChatRequest) -> PathBuf {
        self.dir.join(format!("{}.txt", request.fixture_key()))
    }

    /// Store a reply so later identical requests replay it.
    pub fn record(&self, request: &ChatRequest, reply: &str) -> std::io::Result<()> {
        std::fs::create_dir_all(&self.dir)?;
        std::fs::write(self.path_for(request), reply)
    }
}

impl LlmTransport for FixtureTransport {
    fn send(&self, request: &ChatRequest) -> Result<String, TransportError> {
        let path = self.path_for(request);
        std::fs::read_to_string(&path)
            .map(|s| s.trim_end_matches('\n').to_string())
            .map_err(|e| TransportError::Fatal(format!("no recorded reply at {}: {e}", path.display())))
    }
}

/// Transport backed by a closure; used for scripted and mocked models.
pub struct FnTransport<F>(pub F);

impl<F> LlmTransport for FnTransport<F>
where
    F: Fn(&ChatRequest) -> Result<String, TransportError> + Send + Sync,
{
    fn send(&self, request: &ChatRequest) -> Result<String, TransportError> {
        (self.0)(request)
    }
}

pub const ENV_URL: &str = "STEPGUARD_LLM_URL";
pub const ENV_API_KEY: &str = "STEPGUARD_LLM_API_KEY";
pub const ENV_MODEL: &str = "STEPGUARD_LLM_MODEL";

/// OpenAI-compatible `/chat/completions` endpoint.
pub struct LiveTransport {
    url: String,
    api_key: Option<String>,
    http: reqwest::blocking::Client,
}

impl LiveTransport {
    pub fn new(base_url: &str, api_key: Option<String>, timeout: Duration) -> Result<Self, TransportError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| TransportError::Fatal(e.to_string()))?;
        Ok(LiveTransport { url: format!("{}/chat/completions", base_url.trim_end_matches('/')), api_key, http })
    }

    pub fn from_env() -> Result<Self, TransportError> {
        let url = std::env::var(ENV_URL).map_err(|_| TransportError::Fatal(format!("{ENV_URL} is not set")))?;
        Self::new(&url, std::env::var(ENV_API_KEY).ok(), Duration::from_secs(60))
    }
}

#[derive(Deserialize)]
struct CompletionReply {
    choices: Vec<CompletionChoice>,
}

#[derive(Deserialize)]
struct CompletionChoice {
    message: CompletionMessage,
}

#[derive(Deserialize)]
struct CompletionMessage {
    content: String,
}

impl LlmTransport for LiveTransport {
    fn send(&self, request: &ChatRequest) -> Result<String, TransportError> {
        let mut messages = vec![serde_json::json!({"role": "system", "content": request.system_prompt})];
        messages.extend(request.turns.iter().map(|t| serde_json::json!({"role": t.role, "content": t.content})));
        let body = serde_json::json!({
            "model": request.model_name,
            "messages": messages,
            "max_tokens": request.max_tokens,
            "temperature": request.temperature,
        });
        let mut req = self.http.post(&self.url).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| TransportError::Transient(e.to_string()))?;
        let status = resp.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(TransportError::Transient(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(TransportError::Fatal(format!("HTTP {status}")));
        }
        let reply: CompletionReply = resp.json().map_err(|e| TransportError::Fatal(e.to_string()))?;
        reply
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| TransportError::Fatal("reply has no choices".into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
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

impl RetryPolicy {
    pub fn no_delay() -> Self {
        RetryPolicy { base_delay: Duration::ZERO, ..Self::default() }
    }

    /// Delay before retry number `retry` (0-based).
    pub fn delay(&self, retry: u32) -> Duration {
        self.base_delay * self.factor.saturating_pow(retry)
    }
}

/// Caps requests in flight and spaces request starts.
#[derive(Debug)]
pub struct RateLimiter {
    max_in_flight: usize,
    min_interval: Duration,
    state: Mutex<LimiterState>,
    freed: Condvar,
}

#[derive(Debug)]
struct LimiterState {
    in_flight: usize,
    last_start: Option<Instant>,
}

impl RateLimiter {
    pub fn new(max_in_flight: usize, min_interval: Duration) -> Self {
        RateLimiter {
            max_in_flight: max_in_flight.max(1),
            min_interval,
            state: Mutex::new(LimiterState { in_flight: 0, last_start: None }),
            freed: Condvar::new(),
        }
    }

    pub fn unlimited() -> Self {
        Self::new(usize::MAX, Duration::ZERO)
    }

    fn acquire(&self) -> Permit<'_> {
        let mut st = self.state.lock().unwrap();
        while st.in_flight >= self.max_in_flight {
            st = self.freed.wait(st).unwrap();
        }
        if let Some(last) = st.last_start {
            let wait = self.min_interval.saturating_sub(last.elapsed());
            if !wait.is_zero() {
                std::thread::sleep(wait);
            }
        }
        st.in_flight += 1;
        st.last_start = Some(Instant::now());
        Permit(self)
    }

    pub fn in_flight(&self) -> usize {
        self.state.lock().unwrap().in_flight
    }
}

struct Permit<'a>(&'a RateLimiter);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        self.0.state.lock().unwrap().in_flight -= 1;
        self.0.freed.notify_one();
    }
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error(transparent)]
    Privacy(#[from] PrivacyError),
    #[error("after {attempts} attempt(s): {last}")]
    Transport { attempts: u32, last: TransportError },
}

pub struct LlmClient {
    transport: Arc<dyn LlmTransport>,
    filter: OutboundFilter,
    retry: RetryPolicy,
    limiter: RateLimiter,
    sleep: Box<dyn Fn(Duration) + Send + Sync>,
}

impl LlmClient {
    pub fn new(transport: Arc<dyn LlmTransport>, filter: OutboundFilter) -> Self {
        LlmClient {
            transport,
            filter,
            retry: RetryPolicy::default(),
            limiter: RateLimiter::unlimited(),
            sleep: Box::new(std::thread::sleep),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_limiter(mut self, limiter: RateLimiter) -> Self {
        self.limiter = limiter;
        self
    }

    pub fn with_sleep(mut self, sleep: impl Fn(Duration) + Send + Sync + 'static) -> Self {
        self.sleep = Box::new(sleep);
        self
    }

    /// Filter, then send with retries on transient failures.
    pub fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        self.filter.check(&request.system_prompt)?;
        for turn in &request.turns {
            self.filter.check(&turn.content)?;
        }
        let attempts = self.retry.attempts.max(1);
        let mut retry = 0;
        loop {
            let result = {
                let _permit = self.limiter.acquire();
                self.transport.send(request)
            };
            match result {
                Ok(reply) => return Ok(reply),
                Err(TransportError::Transient(msg)) if retry + 1 < attempts => {
                    log::warn!("transient LLM failure, retrying: {msg}");
                    (self.sleep)(self.retry.delay(retry));
                    retry += 1;
                }
                Err(last) => return Err(LlmError::Transport { attempts: retry + 1, last }),
            }
        }
    }
}

pub const COMMAND_GRAMMAR: &str = "Commands use exactly one of these forms:\n\
- select the <caption> item\n\
- click the item to the right of <caption>\n\
- enter <words> into <caption>\n\
- scroll until <caption>";

/// Feedback attached to a planning request.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptFeedback<'a> {
    None,
    Infeasible(&'a str),
    Incomplete(&'a str),
}

impl PromptFeedback<'_> {
    pub fn kind(&self) -> &'static str {
        match self {
            PromptFeedback::None => "none",
            PromptFeedback::Infeasible(_) => "infeasible",
            PromptFeedback::Incomplete(_) => "incomplete",
        }
    }

    fn screen(&self) -> Option<&str> {
        match self {
            PromptFeedback::None => None,
            PromptFeedback::Infeasible(s) | PromptFeedback::Incomplete(s) => Some(s),
        }
    }
}

fn planner_turn(instruction: &str, history: &[String], fb: PromptFeedback<'_>) -> String {
    let mut s = format!("instruction: {instruction}\nexecuted steps: {}\n", history.len());
    if !history.is_empty() {
        s.push_str("history:\n");
        for (i, c) in history.iter().enumerate() {
            s.push_str(&format!("{}. {c}\n", i + 1));
        }
    }
    s.push_str(&format!("feedback: {}", fb.kind()));
    if let Some(screen) = fb.screen() {
        s.push_str(&format!("\nscreen: {screen}"));
    }
    s
}

/// Next-step request: the redacted instruction, the commands executed so
/// far and, after a guard rejection, the current screen.
pub fn planner_request(model: &str, instruction: &str, history: &[String], fb: PromptFeedback<'_>) -> ChatRequest {
    let system = format!(
        "You plan one UI command at a time for a device agent.\n{COMMAND_GRAMMAR}\n\
         Reply with a single command, or DONE when the task is finished, or GIVE UP: <reason>.\n\
         Feedback infeasible means your last command cannot be carried out on the screen shown; \
         propose an alternative. Feedback incomplete means the last executed command did not \
         achieve its objective on the screen shown."
    );
    let demo_1 =
        planner_turn("Open football news in bbc.com.", &["select the bbc.com item".into()], PromptFeedback::None);
    // Demonstrations carry no screen so that a serialized screen appears in
    // a request only when the live turn has feedback.
    let demo_2 =
        planner_turn("Log in with username {username}.", &["select the Log in item".into()], PromptFeedback::None);
    let turns = vec![
        ChatTurn::user(demo_1),
        ChatTurn::assistant("scroll until Sport"),
        ChatTurn::user(demo_2),
        ChatTurn::assistant("enter {username} into Email"),
        ChatTurn::user(planner_turn(instruction, history, fb)),
    ];
    ChatRequest::new(model, system, turns)
}

pub fn feasibility_request(model: &str, serialized_screen: &str, command: &str) -> ChatRequest {
    let system = "Decide whether the command can be carried out on the current screen. \
                  Reply exactly <s_feasibility> 1 </s_feasibility> if it can and \
                  <s_feasibility> 0 </s_feasibility> if it cannot.";
    let turns = vec![
        ChatTurn::user(
            "screen: {0: {text: \"Sport\", location: [0, 0, 80, 30], type: button}}\ncommand: select the Sport item",
        ),
        ChatTurn::assistant("<s_feasibility> 1 </s_feasibility>"),
        ChatTurn::user(
            "screen: {0: {text: \"Sport\", location: [0, 0, 80, 30], type: button}}\ncommand: select the Weather item",
        ),
        ChatTurn::assistant("<s_feasibility> 0 </s_feasibility>"),
        ChatTurn::user(format!("screen: {serialized_screen}\ncommand: {command}")),
    ];
    ChatRequest::new(model, system, turns)
}

pub fn completeness_request(model: &str, before: Option<&str>, after: &str, command: &str) -> ChatRequest {
    let system = "Decide whether the executed command achieved its objective, judging the screen \
                  after execution. Reply exactly <s_completeness> 1 </s_completeness> if it did \
                  and <s_completeness> 0 </s_completeness> if it did not.";
    let mut last = String::new();
    if let Some(b) = before {
        last.push_str(&format!("before: {b}\n"));
    }
    last.push_str(&format!("after: {after}\ncommand: {command}"));
    let turns = vec![
        ChatTurn::user(
            "after: {0: {text: \"Football\", location: [0, 0, 80, 30], type: button}}\ncommand: select the Sport item",
        ),
        ChatTurn::assistant("<s_completeness> 1 </s_completeness>"),
        ChatTurn::user(
            "after: {0: {text: \"Sport\", location: [0, 0, 80, 30], type: button}}\ncommand: select the Sport item",
        ),
        ChatTurn::assistant("<s_completeness> 0 </s_completeness>"),
        ChatTurn::user(last),
    ];
    ChatRequest::new(model, system, turns)
}
