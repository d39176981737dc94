//! Bundled case-study scenarios and the three guard configurations they
//! are replayed under.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::coordinator::{run_task, CoordinatorConfig, Guards, Planner, RunError, ScriptedPlanner, TaskReport};
use crate::guards::{CompletenessGuard, FeasibilityGuard, OracleGuard};
use crate::privacy::{redact, CollisionPolicy, PlaceholderMemory, RuleDetector};
use crate::sim::Scenario;

/// `(file name, JSON)` for every bundled scenario, in row order.
pub const BUNDLED: &[(&str, &str)] = &[
    ("row01_bbc_football.json", include_str!("../scenarios/row01_bbc_football.json")),
    ("row02_outlook_view_settings.json", include_str!("../scenarios/row02_outlook_view_settings.json")),
    ("row03_windows_language.json", include_str!("../scenarios/row03_windows_language.json")),
    ("row04_windows_text_size.json", include_str!("../scenarios/row04_windows_text_size.json")),
    ("row05_outlook_latest_email.json", include_str!("../scenarios/row05_outlook_latest_email.json")),
    ("row06_github_mentions.json", include_str!("../scenarios/row06_github_mentions.json")),
    ("row07_instacart_login.json", include_str!("../scenarios/row07_instacart_login.json")),
    ("row08_amazon_gloves.json", include_str!("../scenarios/row08_amazon_gloves.json")),
    ("row09_amazon_cheapest_charger.json", include_str!("../scenarios/row09_amazon_cheapest_charger.json")),
    ("row10_costco_loyalty_card.json", include_str!("../scenarios/row10_costco_loyalty_card.json")),
    ("row11_outlook_meeting.json", include_str!("../scenarios/row11_outlook_meeting.json")),
    ("row12_github_zip.json", include_str!("../scenarios/row12_github_zip.json")),
];

/// Parse every bundled scenario. Panics only if a bundled file is broken,
/// which the test suite rules out.
pub fn bundled_scenarios() -> Vec<Scenario> {
    BUNDLED
        .iter()
        .map(|(name, json)| Scenario::from_json(json).unwrap_or_else(|e| panic!("bundled scenario {name}: {e}")))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplayConfig {
    /// No guards; the executor clicks blindly when grounding fails.
    Baseline,
    /// Oracle feasibility gate.
    Fea,
    /// Oracle feasibility gate and completeness check.
    FeaCom,
}

impl ReplayConfig {
    pub const ALL: [ReplayConfig; 3] = [ReplayConfig::Baseline, ReplayConfig::Fea, ReplayConfig::FeaCom];

    pub fn label(self) -> &'static str {
        match self {
            ReplayConfig::Baseline => "Baseline",
            ReplayConfig::Fea => "+Fea",
            ReplayConfig::FeaCom => "+Fea+Com",
        }
    }

    pub fn coordinator_config(self) -> CoordinatorConfig {
        CoordinatorConfig { blind_mode: self == ReplayConfig::Baseline, ..CoordinatorConfig::default() }
    }
}

/// Redact the scenario instruction into a fresh in-memory store and run
/// it with oracle guards under `config`.
pub fn replay_with(
    scenario: &Scenario,
    config: ReplayConfig,
    planner: &mut dyn Planner,
) -> Result<TaskReport, RunError> {
    let mut memory = PlaceholderMemory::in_memory();
    let redacted = redact(&scenario.instruction, &RuleDetector, &mut memory, CollisionPolicy::Error)
        .map_err(|e| RunError::ScenarioAuthoring(format!("{}: {e}", scenario.scenario_id)))?;
    let oracle = OracleGuard::new(Arc::new(scenario.clone()));
    let guards = Guards {
        feasibility: (config != ReplayConfig::Baseline).then_some(&oracle as &dyn FeasibilityGuard),
        completeness: (config == ReplayConfig::FeaCom).then_some(&oracle as &dyn CompletenessGuard),
    };
    run_task(&redacted.text, scenario, planner, guards, &memory, config.coordinator_config())
}

pub fn replay(scenario: &Scenario, config: ReplayConfig) -> Result<TaskReport, RunError> {
    replay_with(scenario, config, &mut ScriptedPlanner::from_scenario(scenario))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayRow {
    pub scenario_id: String,
    pub row: Option<u32>,
    pub baseline: TaskReport,
    pub fea: TaskReport,
    pub fea_com: TaskReport,
}

impl ReplayRow {
    pub fn reports(&self) -> [&TaskReport; 3] {
        [&self.baseline, &self.fea, &self.fea_com]
    }
}

pub fn replay_all_configs(scenario: &Scenario) -> Result<ReplayRow, RunError> {
    Ok(ReplayRow {
        scenario_id: scenario.scenario_id.clone(),
        row: scenario.row,
        baseline: replay(scenario, ReplayConfig::Baseline)?,
        fea: replay(scenario, ReplayConfig::Fea)?,
        fea_com: replay(scenario, ReplayConfig::FeaCom)?,
    })
}
