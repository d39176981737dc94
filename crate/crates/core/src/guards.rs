//! Step guards: a feasibility gate before execution and a completeness
//! check after it.
//!
//! Backends: a ground-truth oracle over the simulated environment, a
//! prompted LLM, and a fine-tuned adapter reached through the same client
//! but held to the structured reply grammar.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{self, CodecError, StructuredResult};
use crate::executor::{ground, parse_command, reachable_by_scroll, Verb};
use crate::llm::{self, LlmClient, LlmError};
use crate::screen::{find_by_caption, serialize_screen, ElementType, Screen, ScreenError};
use crate::sim::{ActionKind, Scenario};

/// Score attached to hard labels from a generative backend.
pub const HARD_POSITIVE_SCORE: f64 = 0.98;
pub const HARD_NEGATIVE_SCORE: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Locality {
    /// Runs on the device; sees restored commands.
    Local,
    /// Runs off-device; sees only redacted commands.
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub positive: bool,
    /// Confidence in the positive class, in [0, 1].
    pub score: f64,
}

impl Verdict {
    pub fn hard(positive: bool) -> Self {
        Verdict { positive, score: if positive { 1.0 } else { 0.0 } }
    }

    fn soft_hard(positive: bool) -> Self {
        Verdict { positive, score: if positive { HARD_POSITIVE_SCORE } else { HARD_NEGATIVE_SCORE } }
    }
}

#[derive(Debug, Error)]
pub enum GuardError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("guard reply is malformed: {0}")]
    Codec(#[from] CodecError),
    #[error("guard reply carries no verdict: {0:?}")]
    NoVerdict(String),
    #[error(transparent)]
    Screen(#[from] ScreenError),
}

pub trait FeasibilityGuard: Send + Sync {
    fn locality(&self) -> Locality;
    fn check_feasible(&self, screen: &Screen, command: &str) -> Result<Verdict, GuardError>;
}

pub trait CompletenessGuard: Send + Sync {
    fn locality(&self) -> Locality;
    /// `before` is absent in after-only mode.
    fn check_complete(&self, before: Option<&Screen>, after: &Screen, command: &str) -> Result<Verdict, GuardError>;
}

/// Ground truth derived from the scenario's transition table.
#[derive(Debug, Clone)]
pub struct OracleGuard {
    scenario: Arc<Scenario>,
}

impl OracleGuard {
    pub fn new(scenario: Arc<Scenario>) -> Self {
        OracleGuard { scenario }
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn feasible(&self, screen: &Screen, command: &str) -> bool {
        oracle_feasible(Some(&self.scenario), screen, command)
    }

    pub fn complete(&self, before: Option<&Screen>, after: &Screen, command: &str) -> bool {
        oracle_complete(&self.scenario, before, after, command)
    }
}

/// Ground-truth feasibility: the command parses and grounds on the
/// visible screen. `scroll until` also accepts captions hidden further
/// down the page when the scenario is known.
pub fn oracle_feasible(scenario: Option<&Scenario>, screen: &Screen, command: &str) -> bool {
    let Ok(intent) = parse_command(command) else { return false };
    if intent.verb == Verb::ScrollUntil {
        return matches!(find_by_caption(screen, &intent.caption), Ok(Some(_)))
            || scenario.is_some_and(|sc| reachable_by_scroll(sc, &screen.screen_id, &intent.caption));
    }
    ground(&intent, screen).is_ok()
}

/// Ground-truth completeness. With `before`, the grounded element's
/// transition must lead to `after`; without it, any same-caption element
/// on any page leading to `after` suffices.
pub fn oracle_complete(scenario: &Scenario, before: Option<&Screen>, after: &Screen, command: &str) -> bool {
    let Ok(intent) = parse_command(command) else { return false };
    match (intent.verb, before) {
        (Verb::ScrollUntil, _) => matches!(find_by_caption(after, &intent.caption), Ok(Some(_))),
        (Verb::Select | Verb::ClickRightOf, Some(before)) => {
            let Ok(el) = ground(&intent, before) else { return false };
            target(scenario, &before.screen_id, el.index, ActionKind::Click) == Some(after.screen_id.as_str())
        }
        (Verb::Enter, Some(before)) => {
            let Ok(el) = ground(&intent, before) else { return false };
            let words = intent.words.as_deref().unwrap_or_default();
            match target(scenario, &before.screen_id, el.index, ActionKind::Type) {
                Some(t) => t == after.screen_id,
                None => after.screen_id == before.screen_id && after.typed_value(el.index) == Some(words),
            }
        }
        (Verb::Select | Verb::ClickRightOf, None) => {
            any_transition_into(scenario, &intent.caption, ActionKind::Click, &after.screen_id)
        }
        (Verb::Enter, None) => {
            let words = intent.words.as_deref().unwrap_or_default();
            let typed_here = matches!(
                find_by_caption(after, &intent.caption),
                Ok(Some(e)) if e.etype == ElementType::Input && after.typed_value(e.index) == Some(words)
            );
            typed_here || any_transition_into(scenario, &intent.caption, ActionKind::Type, &after.screen_id)
        }
    }
}

fn target<'a>(scenario: &'a Scenario, page: &str, index: usize, kind: ActionKind) -> Option<&'a str> {
    scenario.page(page)?.transition(index, kind)
}

fn any_transition_into(scenario: &Scenario, caption: &str, kind: ActionKind, to: &str) -> bool {
    let wanted = crate::screen::normalize_caption(caption);
    scenario.pages.values().any(|p| {
        p.screen
            .elements
            .iter()
            .chain(p.hidden_elements.iter())
            .filter(|e| crate::screen::normalize_caption(&e.text) == wanted)
            .any(|e| p.transition(e.index, kind) == Some(to))
    })
}

impl FeasibilityGuard for OracleGuard {
    fn locality(&self) -> Locality {
        Locality::Local
    }

    fn check_feasible(&self, screen: &Screen, command: &str) -> Result<Verdict, GuardError> {
        Ok(Verdict::hard(self.feasible(screen, command)))
    }
}

impl CompletenessGuard for OracleGuard {
    fn locality(&self) -> Locality {
        Locality::Local
    }

    fn check_complete(&self, before: Option<&Screen>, after: &Screen, command: &str) -> Result<Verdict, GuardError> {
        Ok(Verdict::hard(self.complete(before, after, command)))
    }
}

/// Reply strictness for model-backed guards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplyMode {
    /// Structured tag, else the first standalone verdict word or digit.
    Lenient,
    /// Structured tag only.
    Strict,
}

/// Guard answered by a chat model: a prompted LLM (lenient) or a
/// fine-tuned adapter (strict).
pub struct ModelGuard {
    client: Arc<LlmClient>,
    model: String,
    mode: ReplyMode,
}

impl ModelGuard {
    pub fn llm(client: Arc<LlmClient>, model: impl Into<String>) -> Self {
        ModelGuard { client, model: model.into(), mode: ReplyMode::Lenient }
    }

    pub fn adapter(client: Arc<LlmClient>, model: impl Into<String>) -> Self {
        ModelGuard { client, model: model.into(), mode: ReplyMode::Strict }
    }
}

/// Extract a verdict from a model reply.
pub fn parse_verdict(reply: &str, mode: ReplyMode) -> Result<Verdict, GuardError> {
    match codec::parse(reply) {
        Ok(StructuredResult::Feasibility(b) | StructuredResult::Completeness(b)) => {
            return Ok(Verdict::soft_hard(b.is_one()))
        }
        Ok(StructuredResult::Locate(_)) => return Err(GuardError::NoVerdict(reply.to_string())),
        Err(e) if mode == ReplyMode::Strict => return Err(e.into()),
        Err(_) => {}
    }
    for word in reply.split(|c: char| !c.is_ascii_alphanumeric()) {
        match word.to_ascii_lowercase().as_str() {
            "feasible" | "complete" | "yes" | "1" => return Ok(Verdict::soft_hard(true)),
            "infeasible" | "incomplete" | "no" | "0" => return Ok(Verdict::soft_hard(false)),
            _ => {}
        }
    }
    Err(GuardError::NoVerdict(reply.to_string()))
}

impl FeasibilityGuard for ModelGuard {
    fn locality(&self) -> Locality {
        Locality::Remote
    }

    fn check_feasible(&self, screen: &Screen, command: &str) -> Result<Verdict, GuardError> {
        let req = llm::feasibility_request(&self.model, &serialize_screen(screen)?, command);
        parse_verdict(&self.client.complete(&req)?, self.mode)
    }
}

impl CompletenessGuard for ModelGuard {
    fn locality(&self) -> Locality {
        Locality::Remote
    }

    fn check_complete(&self, before: Option<&Screen>, after: &Screen, command: &str) -> Result<Verdict, GuardError> {
        let before = before.map(serialize_screen).transpose()?;
        let req = llm::completeness_request(&self.model, before.as_deref(), &serialize_screen(after)?, command);
        parse_verdict(&self.client.complete(&req)?, self.mode)
    }
}
