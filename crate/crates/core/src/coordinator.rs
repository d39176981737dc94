//! Planner interface and the per-task automaton:
//! plan -> feasibility gate -> execute -> completeness check ->
//! advance, replan or terminate.
//!
//! The planner only ever sees the redacted instruction and redacted
//! commands. Placeholders are restored right before execution and before
//! local guards run. Screen context goes to the planner only alongside
//! negative feedback.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::executor::{self, parse_command, ExecutorConfig};
use crate::guards::{oracle_complete, CompletenessGuard, FeasibilityGuard, GuardError, Locality, Verdict};
use crate::llm::{self, LlmClient, LlmError, PromptFeedback};
use crate::privacy::{restore, PlaceholderMemory, PrivacyError};
use crate::screen::{serialize_screen, Screen};
use crate::sim::{goal_reached, Scenario};

pub const DEFAULT_MAX_REPLANS: u32 = 3;
pub const DEFAULT_STEP_CAP: u32 = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackKind {
    None,
    Infeasible,
    Incomplete,
}

impl FeedbackKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FeedbackKind::None => "none",
            FeedbackKind::Infeasible => "infeasible",
            FeedbackKind::Incomplete => "incomplete",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanResult {
    Command(String),
    Done,
    GiveUp(String),
}

/// One row of a scenario's scripted planner table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub step: usize,
    pub feedback: FeedbackKind,
    /// Successive replies for this key; the last one repeats.
    pub replies: Vec<PlanResult>,
}

/// What the planner is told on each call.
#[derive(Debug, Clone, Copy)]
pub struct PlanContext<'a> {
    /// Redacted instruction.
    pub instruction: &'a str,
    /// Redacted commands executed so far.
    pub history: &'a [String],
    pub feedback: FeedbackKind,
    /// Serialized current screen; present iff feedback is not `None`.
    pub screen: Option<&'a str>,
}

impl PlanContext<'_> {
    pub fn step(&self) -> usize {
        self.history.len()
    }
}

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error("scripted plan has no entry for step {step} with feedback {feedback}")]
    ScriptMissing { step: usize, feedback: &'static str },
    #[error("planner unavailable: {0}")]
    Unavailable(#[from] LlmError),
}

pub trait Planner {
    fn plan_next(&mut self, ctx: &PlanContext<'_>) -> Result<PlanResult, PlannerError>;
}

/// Replays a scenario's `(step, feedback)` reply table.
#[derive(Debug, Clone, Default)]
pub struct ScriptedPlanner {
    table: BTreeMap<(usize, FeedbackKind), Vec<PlanResult>>,
    cursors: BTreeMap<(usize, FeedbackKind), usize>,
}

impl ScriptedPlanner {
    pub fn new(entries: &[ScriptEntry]) -> Self {
        ScriptedPlanner {
            table: entries.iter().map(|e| ((e.step, e.feedback), e.replies.clone())).collect(),
            cursors: BTreeMap::new(),
        }
    }

    pub fn from_scenario(scenario: &Scenario) -> Self {
        Self::new(&scenario.scripted_plans)
    }

    /// Reply without advancing any cursor.
    pub fn peek(&self, step: usize, feedback: FeedbackKind) -> Option<&PlanResult> {
        let replies = self.table.get(&(step, feedback))?;
        let cursor = self.cursors.get(&(step, feedback)).copied().unwrap_or(0);
        replies.get(cursor.min(replies.len().saturating_sub(1)))
    }
}

impl Planner for ScriptedPlanner {
    fn plan_next(&mut self, ctx: &PlanContext<'_>) -> Result<PlanResult, PlannerError> {
        let key = (ctx.step(), ctx.feedback);
        let reply = self
            .peek(key.0, key.1)
            .cloned()
            .ok_or(PlannerError::ScriptMissing { step: key.0, feedback: key.1.as_str() })?;
        *self.cursors.entry(key).or_insert(0) += 1;
        Ok(reply)
    }
}

/// Planner backed by a chat model.
pub struct LlmPlanner {
    client: Arc<LlmClient>,
    model: String,
}

impl LlmPlanner {
    pub fn new(client: Arc<LlmClient>, model: impl Into<String>) -> Self {
        LlmPlanner { client, model: model.into() }
    }
}

/// `DONE` ends the task, `GIVE UP: reason` abandons it, anything else is
/// taken as the next command (first non-empty line).
pub fn parse_planner_reply(reply: &str) -> PlanResult {
    let line = reply.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("");
    let bare = line.trim_end_matches(['.', '!']);
    if bare.eq_ignore_ascii_case("done") {
        return PlanResult::Done;
    }
    let upper = line.to_ascii_uppercase();
    if let Some(rest) = upper.strip_prefix("GIVE UP") {
        let reason = line[line.len() - rest.len()..].trim_start_matches([':', ' ']).to_string();
        return PlanResult::GiveUp(reason);
    }
    PlanResult::Command(line.to_string())
}

impl Planner for LlmPlanner {
    fn plan_next(&mut self, ctx: &PlanContext<'_>) -> Result<PlanResult, PlannerError> {
        let fb = match (ctx.feedback, ctx.screen) {
            (FeedbackKind::Infeasible, Some(s)) => PromptFeedback::Infeasible(s),
            (FeedbackKind::Incomplete, Some(s)) => PromptFeedback::Incomplete(s),
            _ => PromptFeedback::None,
        };
        let req = llm::planner_request(&self.model, ctx.instruction, ctx.history, fb);
        Ok(parse_planner_reply(&self.client.complete(&req)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoordinatorConfig {
    pub max_replans: u32,
    pub step_cap: u32,
    pub blind_mode: bool,
    /// Completeness guards judge from the post-execution screen alone.
    pub after_only: bool,
}

impl Default for CoordinatorConfig {
    fn default() -> Self {
        CoordinatorConfig {
            max_replans: DEFAULT_MAX_REPLANS,
            step_cap: DEFAULT_STEP_CAP,
            blind_mode: false,
            after_only: false,
        }
    }
}

#[derive(Clone, Copy, Default)]
pub struct Guards<'a> {
    pub feasibility: Option<&'a dyn FeasibilityGuard>,
    pub completeness: Option<&'a dyn CompletenessGuard>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunState {
    Planning,
    FeasibilityCheck,
    Executing,
    CompletenessCheck,
    Terminated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Number of steps executed before this record.
    pub step: usize,
    /// Redacted command as proposed by the planner.
    pub command: String,
    pub feedback_in: FeedbackKind,
    pub feasibility_verdict: Option<Verdict>,
    pub executed: bool,
    pub fallback_click: bool,
    pub completeness_verdict: Option<Verdict>,
    /// Oracle completeness of the executed command; false when not executed.
    pub valid: bool,
    pub screen_before: String,
    pub screen_after: String,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndStatus {
    Success,
    Failure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    GoalReached,
    PlannerDone,
    ReplanBudgetExhausted,
    StepCap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub scenario_id: String,
    pub instruction: String,
    pub valid_steps: u32,
    pub total_steps: u32,
    pub expert_steps: u32,
    pub end_status: EndStatus,
    pub termination_reason: TerminationReason,
    pub planner_calls: u32,
    pub total_replans: u32,
    pub step_log: Vec<StepRecord>,
    pub warnings: Vec<String>,
}

impl TaskReport {
    pub fn success(&self) -> bool {
        self.end_status == EndStatus::Success
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("privacy violation: {0}")]
    PrivacyViolation(PrivacyError),
    #[error("scenario authoring error: {0}")]
    ScenarioAuthoring(String),
}

fn lift_llm(e: LlmError) -> Result<LlmError, RunError> {
    match e {
        LlmError::Privacy(p) => Err(RunError::PrivacyViolation(p)),
        other => Ok(other),
    }
}

fn lift_guard(e: GuardError) -> Result<GuardError, RunError> {
    match e {
        GuardError::Llm(l) => lift_llm(l).map(GuardError::Llm),
        other => Ok(other),
    }
}

/// Mutable state of one task run.
#[derive(Debug, Clone)]
pub struct TaskRun {
    pub instruction: String,
    pub state: RunState,
    pub step_log: Vec<StepRecord>,
    pub replans_used_this_step: u32,
    pub total_replans: u32,
    pub config: CoordinatorConfig,
    history: Vec<String>,
    planner_calls: u32,
    warnings: Vec<String>,
}

fn serialize_or_empty(screen: &Screen, warnings: &mut Vec<String>) -> String {
    serialize_screen(screen).unwrap_or_else(|e| {
        warnings.push(format!("screen {} not serializable: {e}", screen.screen_id));
        "{}".into()
    })
}

impl TaskRun {
    fn new(instruction: &str, config: CoordinatorConfig) -> Self {
        TaskRun {
            instruction: instruction.to_string(),
            state: RunState::Planning,
            step_log: Vec::new(),
            replans_used_this_step: 0,
            total_replans: 0,
            config,
            history: Vec::new(),
            planner_calls: 0,
            warnings: Vec::new(),
        }
    }

    /// False when the budget is already spent.
    fn try_replan(&mut self) -> bool {
        if self.replans_used_this_step >= self.config.max_replans {
            return false;
        }
        self.replans_used_this_step += 1;
        self.total_replans += 1;
        true
    }

    fn finish(mut self, scenario: &Scenario, reason: TerminationReason) -> TaskReport {
        self.state = RunState::Terminated;
        let executed: Vec<&StepRecord> = self.step_log.iter().filter(|r| r.executed).collect();
        TaskReport {
            scenario_id: scenario.scenario_id.clone(),
            instruction: self.instruction,
            valid_steps: executed.iter().filter(|r| r.valid).count() as u32,
            total_steps: executed.len() as u32,
            expert_steps: scenario.expert_steps,
            end_status: if reason == TerminationReason::GoalReached { EndStatus::Success } else { EndStatus::Failure },
            termination_reason: reason,
            planner_calls: self.planner_calls,
            total_replans: self.total_replans,
            step_log: self.step_log,
            warnings: self.warnings,
        }
    }
}

/// Drive one task to termination.
///
/// `instruction` must already be redacted; `memory` restores placeholders
/// in planner commands. Only privacy violations and scripted-table gaps
/// escape as errors; every other failure ends up in the report.
pub fn run_task(
    instruction: &str,
    scenario: &Scenario,
    planner: &mut dyn Planner,
    guards: Guards<'_>,
    memory: &PlaceholderMemory,
    config: CoordinatorConfig,
) -> Result<TaskReport, RunError> {
    let mut run = TaskRun::new(instruction, config);
    let mut env = scenario.initial_state();
    let mut feedback = FeedbackKind::None;
    let mut feedback_screen: Option<String> = None;
    // Command the completeness check judges: the latest one proposed
    // without infeasibility feedback.
    let mut objective: Option<String> = None;
    let exec_config = ExecutorConfig { blind_mode: config.blind_mode };

    loop {
        if goal_reached(&env, scenario) {
            return Ok(run.finish(scenario, TerminationReason::GoalReached));
        }
        if run.history.len() >= config.step_cap as usize {
            return Ok(run.finish(scenario, TerminationReason::StepCap));
        }

        run.state = RunState::Planning;
        let ctx = PlanContext {
            instruction: &run.instruction,
            history: &run.history,
            feedback,
            screen: feedback_screen.as_deref(),
        };
        let step = ctx.step();
        run.planner_calls += 1;
        let plan = match planner.plan_next(&ctx) {
            Ok(p) => p,
            Err(PlannerError::ScriptMissing { step, feedback }) => {
                return Err(RunError::ScenarioAuthoring(format!(
                    "{}: no scripted reply for step {step} with feedback {feedback}",
                    scenario.scenario_id
                )))
            }
            Err(PlannerError::Unavailable(e)) => {
                let e = lift_llm(e)?;
                run.warnings.push(format!("planner unavailable: {e}"));
                return Ok(run.finish(scenario, TerminationReason::PlannerDone));
            }
        };
        let command = match plan {
            PlanResult::Command(c) if !c.trim().is_empty() => c,
            PlanResult::Command(_) => {
                run.warnings.push("planner returned an empty command".into());
                return Ok(run.finish(scenario, TerminationReason::PlannerDone));
            }
            PlanResult::Done => return Ok(run.finish(scenario, TerminationReason::PlannerDone)),
            PlanResult::GiveUp(reason) => {
                run.warnings.push(format!("planner gave up: {reason}"));
                return Ok(run.finish(scenario, TerminationReason::PlannerDone));
            }
        };
        if feedback != FeedbackKind::Infeasible {
            objective = Some(command.clone());
        }
        let restored = restore(&command, memory);
        for name in &restored.unknown {
            run.warnings.push(format!("unknown placeholder {{{name}}} left in command"));
        }
        let for_guard = |locality: Locality, redacted: &str| -> String {
            match locality {
                Locality::Local => restore(redacted, memory).text,
                Locality::Remote => redacted.to_string(),
            }
        };

        let before = env.visible_screen(scenario);
        let mut record = StepRecord {
            step,
            command: command.clone(),
            feedback_in: feedback,
            feasibility_verdict: None,
            executed: false,
            fallback_click: false,
            completeness_verdict: None,
            valid: false,
            screen_before: before.screen_id.clone(),
            screen_after: before.screen_id.clone(),
            failure: None,
        };

        if let Some(gate) = guards.feasibility {
            run.state = RunState::FeasibilityCheck;
            let verdict = match gate.check_feasible(&before, &for_guard(gate.locality(), &command)) {
                Ok(v) => v,
                Err(e) => {
                    let e = lift_guard(e)?;
                    run.warnings.push(format!("feasibility guard failed, treating as infeasible: {e}"));
                    Verdict::hard(false)
                }
            };
            record.feasibility_verdict = Some(verdict);
            if !verdict.positive {
                record.failure = Some("judged infeasible".into());
                run.step_log.push(record);
                if !run.try_replan() {
                    return Ok(run.finish(scenario, TerminationReason::ReplanBudgetExhausted));
                }
                feedback = FeedbackKind::Infeasible;
                feedback_screen = Some(serialize_or_empty(&before, &mut run.warnings));
                continue;
            }
        }

        run.state = RunState::Executing;
        let outcome = match parse_command(&restored.text) {
            Ok(intent) => executor::execute(scenario, &intent, &env, exec_config)
                .map_err(|e| RunError::ScenarioAuthoring(format!("{}: {e}", scenario.scenario_id)))?,
            Err(e) => executor::ExecutionOutcome {
                executed: false,
                grounded_element: None,
                predicted_bbox: None,
                resulting_state: env.clone(),
                fallback_click: false,
                failure: Some(e.to_string()),
            },
        };
        record.failure = outcome.failure.clone();
        if !outcome.executed {
            run.step_log.push(record);
            if !run.try_replan() {
                return Ok(run.finish(scenario, TerminationReason::ReplanBudgetExhausted));
            }
            feedback = FeedbackKind::Infeasible;
            feedback_screen = Some(serialize_or_empty(&before, &mut run.warnings));
            continue;
        }
        record.executed = true;
        record.fallback_click = outcome.fallback_click;
        env = outcome.resulting_state;
        let after = env.visible_screen(scenario);
        record.screen_after = after.screen_id.clone();
        record.valid = !outcome.fallback_click && oracle_complete(scenario, Some(&before), &after, &restored.text);
        run.history.push(command.clone());
        run.replans_used_this_step = 0;

        let mut complete = true;
        if let Some(check) = guards.completeness {
            run.state = RunState::CompletenessCheck;
            let objective = objective.as_deref().unwrap_or(&command);
            let before_arg = (!config.after_only).then_some(&before);
            let verdict = match check.check_complete(before_arg, &after, &for_guard(check.locality(), objective)) {
                Ok(v) => v,
                Err(e) => {
                    let e = lift_guard(e)?;
                    run.warnings.push(format!("completeness guard failed, treating as complete: {e}"));
                    Verdict::hard(true)
                }
            };
            record.completeness_verdict = Some(verdict);
            complete = verdict.positive;
        }
        run.step_log.push(record);

        if goal_reached(&env, scenario) {
            continue;
        }
        if complete {
            feedback = FeedbackKind::None;
            feedback_screen = None;
        } else {
            if !run.try_replan() {
                return Ok(run.finish(scenario, TerminationReason::ReplanBudgetExhausted));
            }
            feedback = FeedbackKind::Incomplete;
            feedback_screen = Some(serialize_or_empty(&after, &mut run.warnings));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::guards::OracleGuard;
    use crate::sim::tests::shop;

    fn script(entries: &[(usize, FeedbackKind, &[&str])]) -> Vec<ScriptEntry> {
        entries
            .iter()
            .map(|(step, feedback, replies)| ScriptEntry {
                step: *step,
                feedback: *feedback,
                replies: replies
                    .iter()
                    .map(|r| if *r == "DONE" { PlanResult::Done } else { PlanResult::Command(r.to_string()) })
                    .collect(),
            })
            .collect()
    }

    fn run(entries: &[(usize, FeedbackKind, &[&str])], fea: bool, com: bool, blind: bool) -> TaskReport {
        let sc = shop();
        let oracle = OracleGuard::new(Arc::new(sc.clone()));
        let guards = Guards {
            feasibility: fea.then_some(&oracle as &dyn FeasibilityGuard),
            completeness: com.then_some(&oracle as &dyn CompletenessGuard),
        };
        let mut planner = ScriptedPlanner::new(&script(entries));
        let config = CoordinatorConfig { blind_mode: blind, ..Default::default() };
        run_task(&sc.instruction, &sc, &mut planner, guards, &PlaceholderMemory::in_memory(), config).unwrap()
    }

    use FeedbackKind::{Incomplete as Inc, Infeasible as Inf, None as No};

    #[test]
    fn straight_line_success() {
        let r = run(
            &[(0, No, &["select the See All Buying Options item"]), (1, No, &["select the Add to Cart item"])],
            true,
            true,
            false,
        );
        assert!(r.success());
        assert_eq!((r.valid_steps, r.total_steps), (2, 2));
        assert_eq!(r.termination_reason, TerminationReason::GoalReached);
    }

    #[test]
    fn planner_done_is_not_success() {
        let r = run(&[(0, No, &["DONE"])], false, false, false);
        assert_eq!(r.termination_reason, TerminationReason::PlannerDone);
        assert_eq!(r.end_status, EndStatus::Failure);
    }

    #[test]
    fn gate_triggers_replan() {
        let r = run(
            &[
                (0, No, &["select the Add to Cart item"]),
                (0, Inf, &["select the See All Buying Options item"]),
                (1, No, &["select the Add to Cart item"]),
            ],
            true,
            false,
            false,
        );
        assert!(r.success());
        assert_eq!((r.valid_steps, r.total_steps), (2, 2));
        assert_eq!(r.step_log.len(), 3);
        assert!(!r.step_log[0].executed);
        assert_eq!(r.total_replans, 1);
    }

    #[test]
    fn budget_exhaustion() {
        let r =
            run(&[(0, No, &["select the Add to Cart item"]), (0, Inf, &["select the Nope item"])], true, false, false);
        assert_eq!(r.termination_reason, TerminationReason::ReplanBudgetExhausted);
        assert_eq!(r.planner_calls, 1 + DEFAULT_MAX_REPLANS);
        assert_eq!(r.total_steps, 0);
    }

    #[test]
    fn blind_mode_wastes_steps() {
        let r = run(&[(0, No, &["select the Add to Cart item"]), (1, No, &["DONE"])], false, false, true);
        assert_eq!((r.valid_steps, r.total_steps), (0, 1));
        assert!(r.step_log[0].fallback_click);
    }

    #[test]
    fn incomplete_step_replans_against_objective() {
        // "Deliver to" is a dead click: executed, judged incomplete.
        let r = run(
            &[
                (0, No, &["select the Deliver to Seattle item"]),
                (1, Inc, &["select the See All Buying Options item"]),
                (2, No, &["select the Add to Cart item"]),
            ],
            true,
            true,
            false,
        );
        assert!(r.success());
        assert_eq!((r.valid_steps, r.total_steps), (2, 3));
        assert_eq!(r.step_log[0].completeness_verdict.map(|v| v.positive), Some(false));
        assert_eq!(r.step_log[1].feedback_in, Inc);
    }

    #[test]
    fn step_cap_bounds_runs() {
        let sc = shop();
        let mut planner = ScriptedPlanner::new(&script(
            &(0..40).map(|k| (k, No, &["select the Deliver to Seattle item"][..])).collect::<Vec<_>>(),
        ));
        let config = CoordinatorConfig { step_cap: 5, ..Default::default() };
        let r =
            run_task(&sc.instruction, &sc, &mut planner, Guards::default(), &PlaceholderMemory::in_memory(), config)
                .unwrap();
        assert_eq!(r.termination_reason, TerminationReason::StepCap);
        assert_eq!(r.total_steps, 5);
    }

    #[test]
    fn missing_script_key_is_an_authoring_error() {
        let sc = shop();
        let mut planner = ScriptedPlanner::new(&[]);
        let err = run_task(
            &sc.instruction,
            &sc,
            &mut planner,
            Guards::default(),
            &PlaceholderMemory::in_memory(),
            CoordinatorConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, RunError::ScenarioAuthoring(_)));
    }

    #[test]
    fn scripted_cursor_repeats_last_reply() {
        let mut p = ScriptedPlanner::new(&script(&[(0, Inf, &["a", "b"])]));
        let ctx = PlanContext { instruction: "", history: &[], feedback: Inf, screen: Some("{}") };
        let got: Vec<_> = (0..4).map(|_| p.plan_next(&ctx).unwrap()).collect();
        let cmd = |s: &str| PlanResult::Command(s.into());
        assert_eq!(got, vec![cmd("a"), cmd("b"), cmd("b"), cmd("b")]);
    }

    #[test]
    fn planner_reply_parsing() {
        assert_eq!(parse_planner_reply("DONE"), PlanResult::Done);
        assert_eq!(parse_planner_reply("  done.\n"), PlanResult::Done);
        assert_eq!(parse_planner_reply("GIVE UP: no such page"), PlanResult::GiveUp("no such page".into()));
        assert_eq!(
            parse_planner_reply("\nselect the Go item\nextra"),
            PlanResult::Command("select the Go item".into())
        );
    }

    #[test]
    fn plan_result_json_shape() {
        let v: Vec<PlanResult> = serde_json::from_str(r#"[{"command": "x"}, "done", {"give_up": "why"}]"#).unwrap();
        assert_eq!(v, vec![PlanResult::Command("x".into()), PlanResult::Done, PlanResult::GiveUp("why".into())]);
    }
}
