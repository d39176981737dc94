//! Low-level command grammar, grounding, and execution against the simulator.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{self, StructuredResult};
use crate::screen::{find_by_caption, normalize_caption, BBox, ElementType, Screen, ScreenError, UiElement};
use crate::sim::{self, Action, EnvState, ExecutionError, Scenario, ScrollDirection};

/// Upper bound on scroll iterations performed by one `scroll until` command.
pub const SCROLL_UNTIL_CAP: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verb {
    Select,
    ClickRightOf,
    Enter,
    ScrollUntil,
}

impl Verb {
    pub const ALL: [Verb; 4] = [Verb::Select, Verb::ClickRightOf, Verb::Enter, Verb::ScrollUntil];
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CommandIntent {
    pub verb: Verb,
    pub caption: String,
    /// Present iff `verb` is [`Verb::Enter`].
    pub words: Option<String>,
}

impl CommandIntent {
    pub fn select(caption: impl Into<String>) -> Self {
        CommandIntent { verb: Verb::Select, caption: caption.into(), words: None }
    }

    pub fn click_right_of(caption: impl Into<String>) -> Self {
        CommandIntent { verb: Verb::ClickRightOf, caption: caption.into(), words: None }
    }

    pub fn enter(words: impl Into<String>, caption: impl Into<String>) -> Self {
        CommandIntent { verb: Verb::Enter, caption: caption.into(), words: Some(words.into()) }
    }

    pub fn scroll_until(caption: impl Into<String>) -> Self {
        CommandIntent { verb: Verb::ScrollUntil, caption: caption.into(), words: None }
    }

    /// Render through the command templates. Inverse of [`parse_command`]
    /// when `words` does not itself contain `" into "`.
    pub fn render(&self) -> String {
        match self.verb {
            Verb::Select => format!("select the {} item", self.caption),
            Verb::ClickRightOf => format!("click the item to the right of {}", self.caption),
            Verb::Enter => format!("enter {} into {}", self.words.as_deref().unwrap_or(""), self.caption),
            Verb::ScrollUntil => format!("scroll until {}", self.caption),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CommandError {
    #[error("command {0:?} matches no known template")]
    Unparseable(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GroundingError {
    #[error("no element captioned {0:?} on the current screen")]
    CaptionAbsent(String),
    #[error(transparent)]
    Ambiguous(#[from] ScreenError),
    #[error("no element lies to the right of {0:?}")]
    NothingToTheRight(String),
    #[error("{caption:?} is a {found}, enter requires an input")]
    NotAnInput { caption: String, found: ElementType },
}

static TEMPLATES: LazyLock<[(Verb, Regex); 4]> = LazyLock::new(|| {
    [
        (Verb::Select, Regex::new(r"(?is)^select the (.+) item$").unwrap()),
        (Verb::ClickRightOf, Regex::new(r"(?is)^click the item to the right of (.+)$").unwrap()),
        (Verb::Enter, Regex::new(r"(?is)^enter (.+?) into (.+)$").unwrap()),
        (Verb::ScrollUntil, Regex::new(r"(?is)^scroll until (.+)$").unwrap()),
    ]
});

/// Parse one of the four command templates. Keywords match
/// case-insensitively after surrounding whitespace is trimmed; captured
/// caption and words are kept verbatim.
pub fn parse_command(text: &str) -> Result<CommandIntent, CommandError> {
    let trimmed = text.trim();
    for (verb, re) in TEMPLATES.iter() {
        let Some(caps) = re.captures(trimmed) else { continue };
        let intent = match verb {
            Verb::Enter => CommandIntent::enter(&caps[1], &caps[2]),
            _ => CommandIntent { verb: *verb, caption: caps[1].to_string(), words: None },
        };
        if intent.caption.trim().is_empty() || intent.words.as_deref().is_some_and(|w| w.trim().is_empty()) {
            break;
        }
        return Ok(intent);
    }
    Err(CommandError::Unparseable(text.to_string()))
}

/// Resolve the intent's target element on `screen`.
///
/// `click the item to the right of X` picks the element whose bbox center
/// has the smallest positive horizontal offset from X's center among those
/// sharing at least one pixel of vertical extent with X; ties go to the
/// smaller index.
pub fn ground<'a>(intent: &CommandIntent, screen: &'a Screen) -> Result<&'a UiElement, GroundingError> {
    let anchor = find_by_caption(screen, &intent.caption)?
        .ok_or_else(|| GroundingError::CaptionAbsent(intent.caption.clone()))?;
    match intent.verb {
        Verb::Select | Verb::ScrollUntil => Ok(anchor),
        Verb::Enter => {
            if anchor.etype == ElementType::Input {
                Ok(anchor)
            } else {
                Err(GroundingError::NotAnInput { caption: intent.caption.clone(), found: anchor.etype })
            }
        }
        Verb::ClickRightOf => {
            let ax = anchor.bbox.center_x2();
            screen
                .elements
                .iter()
                .filter(|e| e.index != anchor.index)
                .filter(|e| e.bbox.vertical_overlap(&anchor.bbox) >= 1)
                .filter_map(|e| {
                    let off = e.bbox.center_x2() - ax;
                    (off > 0).then_some((off, e.index, e))
                })
                .min_by_key(|&(off, idx, _)| (off, idx))
                .map(|(_, _, e)| e)
                .ok_or_else(|| GroundingError::NothingToTheRight(intent.caption.clone()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ExecutorConfig {
    /// On grounding failure, click the lowest-index visible element instead
    /// of refusing. Reproduces an unguarded executor's wasted steps.
    pub blind_mode: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecutionOutcome {
    pub executed: bool,
    pub grounded_element: Option<usize>,
    pub predicted_bbox: Option<BBox>,
    pub resulting_state: EnvState,
    /// Set when blind mode clicked a fallback element.
    pub fallback_click: bool,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExecuteError {
    #[error(transparent)]
    Env(#[from] ExecutionError),
}

/// Oracle executor: grounds on the visible screen, then applies the action.
pub fn execute(
    scenario: &Scenario,
    intent: &CommandIntent,
    state: &EnvState,
    config: ExecutorConfig,
) -> Result<ExecutionOutcome, ExecuteError> {
    if intent.verb == Verb::ScrollUntil {
        return scroll_until(scenario, intent, state);
    }
    let screen = state.visible_screen(scenario);
    match ground(intent, &screen) {
        Ok(el) => {
            let action = match intent.verb {
                Verb::Enter => Action::Type(el.index, intent.words.clone().unwrap_or_default()),
                _ => Action::Click(el.index),
            };
            let (next, _) = sim::apply(scenario, state, &action)?;
            Ok(ExecutionOutcome {
                executed: true,
                grounded_element: Some(el.index),
                predicted_bbox: Some(el.bbox),
                resulting_state: next,
                fallback_click: false,
                failure: None,
            })
        }
        Err(err) => not_grounded(scenario, state, config, &screen, err.to_string()),
    }
}

fn not_grounded(
    scenario: &Scenario,
    state: &EnvState,
    config: ExecutorConfig,
    screen: &Screen,
    failure: String,
) -> Result<ExecutionOutcome, ExecuteError> {
    let fallback = screen.elements.iter().map(|e| e.index).min();
    match fallback {
        Some(index) if config.blind_mode => {
            let (next, _) = sim::apply(scenario, state, &Action::Click(index))?;
            Ok(ExecutionOutcome {
                executed: true,
                grounded_element: Some(index),
                predicted_bbox: screen.element(index).map(|e| e.bbox),
                resulting_state: next,
                fallback_click: true,
                failure: Some(failure),
            })
        }
        _ => Ok(ExecutionOutcome {
            executed: false,
            grounded_element: None,
            predicted_bbox: None,
            resulting_state: state.clone(),
            fallback_click: false,
            failure: Some(failure),
        }),
    }
}

fn scroll_until(
    scenario: &Scenario,
    intent: &CommandIntent,
    state: &EnvState,
) -> Result<ExecutionOutcome, ExecuteError> {
    let mut current = state.clone();
    for _ in 0..=SCROLL_UNTIL_CAP {
        let screen = current.visible_screen(scenario);
        match find_by_caption(&screen, &intent.caption) {
            Ok(Some(el)) => {
                return Ok(ExecutionOutcome {
                    executed: true,
                    grounded_element: Some(el.index),
                    predicted_bbox: Some(el.bbox),
                    resulting_state: current,
                    fallback_click: false,
                    failure: None,
                })
            }
            Ok(None) => {}
            Err(e) => {
                return Ok(ExecutionOutcome {
                    executed: false,
                    grounded_element: None,
                    predicted_bbox: None,
                    resulting_state: state.clone(),
                    fallback_click: false,
                    failure: Some(e.to_string()),
                })
            }
        }
        let (next, _) = sim::apply(scenario, &current, &Action::Scroll(ScrollDirection::Down))?;
        if next == current {
            break;
        }
        current = next;
    }
    Ok(ExecutionOutcome {
        executed: false,
        grounded_element: None,
        predicted_bbox: None,
        resulting_state: state.clone(),
        fallback_click: false,
        failure: Some(format!("{:?} not visible after scrolling", intent.caption)),
    })
}

/// Map a predicted box to the visible element with maximal IoU (ties to
/// the smaller index). `None` when nothing overlaps.
pub fn element_by_iou<'a>(screen: &'a Screen, predicted: &BBox) -> Option<&'a UiElement> {
    screen
        .elements
        .iter()
        .map(|e| (e.bbox.iou(predicted), e))
        .filter(|(iou, _)| *iou > 0.0)
        .max_by(|(a, ea), (b, eb)| a.total_cmp(b).then(eb.index.cmp(&ea.index)))
        .map(|(_, e)| e)
}

/// External executor model reached over some transport. Replies in the
/// `<locate_element>` grammar.
pub trait ExternalLocator: Send + Sync {
    fn locate(&self, serialized_screen: &str, command: &str) -> Result<String, String>;
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LocateError {
    #[error("locator transport failed: {0}")]
    Transport(String),
    #[error("locator reply is malformed: {0}")]
    Codec(#[from] codec::CodecError),
    #[error("locator replied with a {0:?} result instead of a locate result")]
    WrongKind(codec::TaskKind),
    #[error("predicted box overlaps no element")]
    NoOverlap,
    #[error(transparent)]
    Screen(#[from] ScreenError),
}

/// Ask an external locator for the command's target and snap its box to
/// the best-overlapping element.
pub fn locate_external<'a>(
    locator: &dyn ExternalLocator,
    screen: &'a Screen,
    command: &str,
) -> Result<(BBox, &'a UiElement), LocateError> {
    let serialized = crate::screen::serialize_screen(screen)?;
    let reply = locator.locate(&serialized, command).map_err(LocateError::Transport)?;
    match codec::parse(&reply)? {
        StructuredResult::Locate(b) => {
            let el = element_by_iou(screen, &b).ok_or(LocateError::NoOverlap)?;
            Ok((b, el))
        }
        other => Err(LocateError::WrongKind(other.kind())),
    }
}

/// True when the caption is visible now or would become visible by
/// scrolling the current page.
pub fn reachable_by_scroll(scenario: &Scenario, state_page: &str, caption: &str) -> bool {
    let Some(page) = scenario.page(state_page) else { return false };
    let wanted = normalize_caption(caption);
    page.screen
        .elements
        .iter()
        .chain(page.hidden_elements.iter())
        .filter(|e| normalize_caption(&e.text) == wanted)
        .count()
        == 1
}
