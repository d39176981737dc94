//! Deterministic simulated UI environment.
//!
//! A [`Scenario`] is a set of pages connected by a transition table keyed by
//! `(element index, action kind)`. Pages may hold hidden elements that
//! scrolling down reveals one at a time. Environment state is a plain value
//! ([`EnvState`]); [`apply`] returns the successor state and never mutates
//! the scenario.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coordinator::ScriptEntry;
use crate::screen::{ElementType, Screen, ScreenError, UiElement};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Click,
    Type,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScrollDirection {
    Up,
    Down,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Click(usize),
    Type(usize, String),
    Scroll(ScrollDirection),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionSpec {
    pub element: usize,
    #[serde(default = "default_action")]
    pub action: ActionKind,
    pub target: String,
}

fn default_action() -> ActionKind {
    ActionKind::Click
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct PageFile {
    width: u32,
    height: u32,
    elements: Vec<UiElement>,
    #[serde(default)]
    hidden_elements: Vec<UiElement>,
    #[serde(default)]
    transitions: Vec<TransitionSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimPage {
    /// Initially visible screen; `screen_id` is the page id.
    pub screen: Screen,
    pub transitions: BTreeMap<(usize, ActionKind), String>,
    /// Revealed in order by successive downward scrolls.
    pub hidden_elements: Vec<UiElement>,
}

impl SimPage {
    pub fn element(&self, index: usize) -> Option<&UiElement> {
        self.screen.element(index).or_else(|| self.hidden_elements.iter().find(|e| e.index == index))
    }

    pub fn transition(&self, index: usize, kind: ActionKind) -> Option<&str> {
        self.transitions.get(&(index, kind)).map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Goal {
    /// Reached when the current page is this screen.
    Screen(String),
    /// Reached when an input on a page holds exactly this text.
    TypedValue { screen: String, element: usize, equals: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct ScenarioFile {
    scenario_id: String,
    #[serde(default)]
    row: Option<u32>,
    instruction: String,
    #[serde(default)]
    notes: String,
    expert_steps: u32,
    start: String,
    goal: Goal,
    pages: BTreeMap<String, PageFile>,
    #[serde(default)]
    scripted_plans: Vec<ScriptEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scenario {
    pub scenario_id: String,
    /// Case-study row this fixture reconstructs, when it reconstructs one.
    pub row: Option<u32>,
    /// User instruction as typed by the user, before redaction.
    pub instruction: String,
    pub notes: String,
    pub pages: BTreeMap<String, SimPage>,
    pub start: String,
    pub goal: Goal,
    pub expert_steps: u32,
    pub scripted_plans: Vec<ScriptEntry>,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("scenario JSON is malformed: {0}")]
    Json(#[from] serde_json::Error),
    #[error("scenario {scenario}: {source}")]
    Screen { scenario: String, source: ScreenError },
    #[error("scenario {scenario}: unknown screen id {id:?} referenced by {context}")]
    DanglingScreen { scenario: String, id: String, context: String },
    #[error("scenario {scenario}: page {page} transition references missing element {index}")]
    DanglingElement { scenario: String, page: String, index: usize },
    #[error("scenario {scenario}: page {page} hidden element indices must continue from {expected}")]
    HiddenIndices { scenario: String, page: String, expected: usize },
    #[error("scenario {scenario}: page {page} has a type transition on non-input element {index}")]
    TypeTransitionTarget { scenario: String, page: String, index: usize },
    #[error("scenario {scenario}: goal element {index} on {page} is not an input")]
    GoalElement { scenario: String, page: String, index: usize },
    #[error("scenario {scenario}: expert_steps must be >= 1")]
    ExpertSteps { scenario: String },
    #[error("scenario {scenario}: duplicate scripted plan key (step {step}, {feedback})")]
    DuplicateScriptKey { scenario: String, step: usize, feedback: String },
    #[error("scenario {scenario}: scripted plan (step {step}, {feedback}) has no replies")]
    EmptyScriptEntry { scenario: String, step: usize, feedback: String },
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let file: ScenarioFile = serde_json::from_str(text)?;
        let mut pages = BTreeMap::new();
        for (id, p) in file.pages {
            let transitions = p.transitions.into_iter().map(|t| ((t.element, t.action), t.target)).collect();
            pages.insert(
                id.clone(),
                SimPage {
                    screen: Screen::new(id, p.width, p.height, p.elements),
                    transitions,
                    hidden_elements: p.hidden_elements,
                },
            );
        }
        let scenario = Scenario {
            scenario_id: file.scenario_id,
            row: file.row,
            instruction: file.instruction,
            notes: file.notes,
            pages,
            start: file.start,
            goal: file.goal,
            expert_steps: file.expert_steps,
            scripted_plans: file.scripted_plans,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let file = ScenarioFile {
            scenario_id: self.scenario_id.clone(),
            row: self.row,
            instruction: self.instruction.clone(),
            notes: self.notes.clone(),
            expert_steps: self.expert_steps,
            start: self.start.clone(),
            goal: self.goal.clone(),
            pages: self
                .pages
                .iter()
                .map(|(id, p)| {
                    let transitions = p
                        .transitions
                        .iter()
                        .map(|(&(element, action), target)| TransitionSpec { element, action, target: target.clone() })
                        .collect();
                    (
                        id.clone(),
                        PageFile {
                            width: p.screen.width,
                            height: p.screen.height,
                            elements: p.screen.elements.clone(),
                            hidden_elements: p.hidden_elements.clone(),
                            transitions,
                        },
                    )
                })
                .collect(),
            scripted_plans: self.scripted_plans.clone(),
        };
        serde_json::to_string_pretty(&file).expect("scenario serialization is infallible")
    }

    pub fn page(&self, id: &str) -> Option<&SimPage> {
        self.pages.get(id)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let sid = || self.scenario_id.clone();
        if self.expert_steps == 0 {
            return Err(ScenarioError::ExpertSteps { scenario: sid() });
        }
        let require = |id: &str, context: &str| -> Result<(), ScenarioError> {
            if self.pages.contains_key(id) {
                Ok(())
            } else {
                Err(ScenarioError::DanglingScreen { scenario: sid(), id: id.to_string(), context: context.to_string() })
            }
        };
        require(&self.start, "start")?;
        match &self.goal {
            Goal::Screen(id) => require(id, "goal")?,
            Goal::TypedValue { screen, element, .. } => {
                require(screen, "goal")?;
                let page = &self.pages[screen];
                if page.element(*element).map(|e| e.etype) != Some(ElementType::Input) {
                    return Err(ScenarioError::GoalElement { scenario: sid(), page: screen.clone(), index: *element });
                }
            }
        }
        for (id, page) in &self.pages {
            page.screen.validate().map_err(|source| ScenarioError::Screen { scenario: sid(), source })?;
            let base = page.screen.elements.len();
            for (k, h) in page.hidden_elements.iter().enumerate() {
                if h.index != base + k {
                    return Err(ScenarioError::HiddenIndices { scenario: sid(), page: id.clone(), expected: base });
                }
            }
            let full = full_screen(page);
            full.validate().map_err(|source| ScenarioError::Screen { scenario: sid(), source })?;
            for ((index, kind), target) in &page.transitions {
                let Some(el) = page.element(*index) else {
                    return Err(ScenarioError::DanglingElement { scenario: sid(), page: id.clone(), index: *index });
                };
                if *kind == ActionKind::Type && el.etype != ElementType::Input {
                    return Err(ScenarioError::TypeTransitionTarget {
                        scenario: sid(),
                        page: id.clone(),
                        index: *index,
                    });
                }
                require(target, &format!("transition {id}#{index}"))?;
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for entry in &self.scripted_plans {
            let fb = entry.feedback.as_str().to_string();
            if entry.replies.is_empty() {
                return Err(ScenarioError::EmptyScriptEntry { scenario: sid(), step: entry.step, feedback: fb });
            }
            if !seen.insert((entry.step, entry.feedback)) {
                return Err(ScenarioError::DuplicateScriptKey { scenario: sid(), step: entry.step, feedback: fb });
            }
        }
        Ok(())
    }

    pub fn initial_state(&self) -> EnvState {
        EnvState { current: self.start.clone(), typed: BTreeMap::new(), scroll: BTreeMap::new() }
    }
}

fn full_screen(page: &SimPage) -> Screen {
    let mut s = page.screen.clone();
    s.elements.extend(page.hidden_elements.iter().cloned());
    s
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EnvState {
    pub current: String,
    /// page id -> element index -> typed text
    pub typed: BTreeMap<String, BTreeMap<usize, String>>,
    /// page id -> number of hidden elements revealed
    pub scroll: BTreeMap<String, usize>,
}

impl EnvState {
    pub fn scroll_offset(&self, page: &str) -> usize {
        self.scroll.get(page).copied().unwrap_or(0)
    }

    /// The screen currently visible: base elements, revealed hidden
    /// elements and typed input contents.
    pub fn visible_screen(&self, scenario: &Scenario) -> Screen {
        let page = &scenario.pages[&self.current];
        let mut s = page.screen.clone();
        let revealed = self.scroll_offset(&self.current).min(page.hidden_elements.len());
        s.elements.extend(page.hidden_elements[..revealed].iter().cloned());
        if let Some(values) = self.typed.get(&self.current) {
            s.typed_values = values.clone();
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Effect {
    Transition {
        from: String,
        to: String,
    },
    Typed {
        element: usize,
    },
    Revealed {
        element: usize,
    },
    /// A dead click or a scroll with nothing left to reveal.
    NoOp,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExecutionError {
    #[error("element {index} does not exist on page {page}")]
    NoSuchElement { page: String, index: usize },
    #[error("element {index} on page {page} is not currently visible")]
    NotVisible { page: String, index: usize },
    #[error("element {index} on page {page} is not an input")]
    NotAnInput { page: String, index: usize },
    #[error("state references unknown page {0}")]
    UnknownPage(String),
}

pub fn apply(scenario: &Scenario, state: &EnvState, action: &Action) -> Result<(EnvState, Effect), ExecutionError> {
    let page = scenario.page(&state.current).ok_or_else(|| ExecutionError::UnknownPage(state.current.clone()))?;
    let visible = state.visible_screen(scenario);
    let check_visible = |index: usize| -> Result<&UiElement, ExecutionError> {
        match page.element(index) {
            None => Err(ExecutionError::NoSuchElement { page: state.current.clone(), index }),
            Some(_) if visible.element(index).is_none() => {
                Err(ExecutionError::NotVisible { page: state.current.clone(), index })
            }
            Some(e) => Ok(e),
        }
    };
    let mut next = state.clone();
    let effect = match action {
        Action::Click(index) => {
            check_visible(*index)?;
            match page.transition(*index, ActionKind::Click) {
                Some(target) => {
                    next.current = target.to_string();
                    Effect::Transition { from: state.current.clone(), to: target.to_string() }
                }
                None => Effect::NoOp,
            }
        }
        Action::Type(index, text) => {
            let el = check_visible(*index)?;
            if el.etype != ElementType::Input {
                return Err(ExecutionError::NotAnInput { page: state.current.clone(), index: *index });
            }
            next.typed.entry(state.current.clone()).or_default().insert(*index, text.clone());
            match page.transition(*index, ActionKind::Type) {
                Some(target) => {
                    next.current = target.to_string();
                    Effect::Transition { from: state.current.clone(), to: target.to_string() }
                }
                None => Effect::Typed { element: *index },
            }
        }
        Action::Scroll(ScrollDirection::Down) => {
            let offset = state.scroll_offset(&state.current);
            if offset < page.hidden_elements.len() {
                next.scroll.insert(state.current.clone(), offset + 1);
                Effect::Revealed { element: page.hidden_elements[offset].index }
            } else {
                Effect::NoOp
            }
        }
        // Revealed elements stay revealed.
        Action::Scroll(ScrollDirection::Up) => Effect::NoOp,
    };
    Ok((next, effect))
}

pub fn goal_reached(state: &EnvState, scenario: &Scenario) -> bool {
    match &scenario.goal {
        Goal::Screen(id) => state.current == *id,
        Goal::TypedValue { screen, element, equals } => {
            state.typed.get(screen).and_then(|m| m.get(element)).is_some_and(|v| v == equals)
        }
    }
}
