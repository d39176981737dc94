use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::{Arc, Mutex};

use stepguard::coordinator::{FeedbackKind, LlmPlanner, PlanContext, PlanResult, Planner, ScriptedPlanner};
use stepguard::llm::{ChatRequest, FixtureTransport, FnTransport, LlmClient, Role};
use stepguard::privacy::OutboundFilter;
use stepguard::replay::{replay_with, ReplayConfig};
use stepguard::sim::Scenario;

fn stepguard(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stepguard")).args(args).output().unwrap()
}

fn scenario_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn run_exit_codes_follow_outcome() {
    let ok = stepguard(&["run", "--scenario", scenario_path("row01_bbc_football.json").to_str().unwrap()]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    let report: serde_json::Value = serde_json::from_str(&stdout(&ok)).unwrap();
    assert_eq!(report["valid_steps"], 4);

    let fail = stepguard(&["run", "--scenario", scenario_path("row11_outlook_meeting.json").to_str().unwrap()]);
    assert_eq!(fail.status.code(), Some(1));
    let report: serde_json::Value = serde_json::from_str(&stdout(&fail)).unwrap();
    assert_eq!(report["termination_reason"], "replan_budget_exhausted");

    let missing = stepguard(&["run", "--scenario", "/nonexistent.json"]);
    assert_eq!(missing.status.code(), Some(2));
    let bad_flag = stepguard(&["run", "--scenario", "x.json", "--step-cap", "0"]);
    assert_eq!(bad_flag.status.code(), Some(2));
}

#[test]
fn blind_baseline_through_flags() {
    let path = scenario_path("row09_amazon_cheapest_charger.json");
    let o = stepguard(&[
        "run",
        "--scenario",
        path.to_str().unwrap(),
        "--feasibility",
        "off",
        "--completeness",
        "off",
        "--blind-mode",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("4/7 (9) ✗"));
}

const LEAKY: &str = r#"{
  "scenario_id": "leaky",
  "instruction": "Sign in with password hunter22",
  "expert_steps": 1,
  "start": "login",
  "goal": {"screen": "home"},
  "pages": {
    "login": {"width": 400, "height": 300, "elements": [
      {"index": 0, "text": "hunter22", "bbox": [10, 10, 200, 40], "etype": "button"},
      {"index": 1, "text": "Sign in", "bbox": [10, 50, 200, 80], "etype": "button"}
    ], "transitions": [{"element": 1, "action": "click", "target": "home"}]},
    "home": {"width": 400, "height": 300, "elements": [
      {"index": 0, "text": "Welcome", "bbox": [10, 10, 200, 40], "etype": "button"}
    ]}
  },
  "scripted_plans": [
    {"step": 0, "feedback": "none", "replies": [{"command": "select the Sign in item"}]},
    {"step": 1, "feedback": "none", "replies": ["done"]}
  ]
}"#;

#[test]
fn secret_on_screen_blocks_remote_guard() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("leaky.json");
    std::fs::write(&path, LEAKY).unwrap();
    let fixtures = format!("fixtures:{}", dir.path().join("none").display());
    let o = stepguard(&["run", "--scenario", path.to_str().unwrap(), "--feasibility", "llm", "--transport", &fixtures]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));

    // The oracle guard is local, so the same run succeeds.
    let o = stepguard(&["run", "--scenario", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
}

fn last_user_turn(req: &ChatRequest) -> String {
    req.turns.iter().rev().find(|t| t.role == Role::User).map(|t| t.content.clone()).unwrap_or_default()
}

/// Record planner replies for a scenario into `dir`, answering from its
/// scripted table.
fn record_fixtures(sc: &Scenario, dir: &Path, model: &str) {
    let table = Mutex::new(ScriptedPlanner::from_scenario(sc));
    let store = FixtureTransport::new(dir);
    let transport = FnTransport(move |req: &ChatRequest| {
        let turn = last_user_turn(req);
        let field = |k: &str| turn.lines().find_map(|l| l.strip_prefix(k)).unwrap_or("").to_string();
        let step: usize = field("executed steps: ").parse().unwrap();
        let feedback = match field("feedback: ").as_str() {
            "infeasible" => FeedbackKind::Infeasible,
            "incomplete" => FeedbackKind::Incomplete,
            _ => FeedbackKind::None,
        };
        let history = vec![String::new(); step];
        let ctx = PlanContext { instruction: "", history: &history, feedback, screen: None };
        let reply = match table.lock().unwrap().plan_next(&ctx).unwrap() {
            PlanResult::Command(c) => c,
            PlanResult::Done => "DONE".into(),
            PlanResult::GiveUp(r) => format!("GIVE UP: {r}"),
        };
        store.record(req, &reply).unwrap();
        Ok(reply)
    });
    let client = Arc::new(LlmClient::new(Arc::new(transport), OutboundFilter::permissive()));
    let report = replay_with(sc, ReplayConfig::FeaCom, &mut LlmPlanner::new(client, model)).unwrap();
    assert!(report.success());
}

#[test]
fn llm_planner_replays_recorded_fixtures_offline() {
    let path = scenario_path("row09_amazon_cheapest_charger.json");
    let sc = Scenario::load(&path).unwrap();
    let dir = tempfile::tempdir().unwrap();
    record_fixtures(&sc, dir.path(), "mock-model");
    assert!(std::fs::read_dir(dir.path()).unwrap().count() >= 9);

    let fixtures = format!("fixtures:{}", dir.path().display());
    let o = stepguard(&[
        "run",
        "--scenario",
        path.to_str().unwrap(),
        "--planner",
        "llm",
        "--model",
        "mock-model",
        "--transport",
        &fixtures,
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!((report["valid_steps"].as_u64(), report["total_steps"].as_u64()), (Some(9), Some(9)));

    // A different model name misses every fixture; the planner is
    // unavailable and the run ends without success.
    let o = stepguard(&[
        "run",
        "--scenario",
        path.to_str().unwrap(),
        "--planner",
        "llm",
        "--model",
        "other",
        "--transport",
        &fixtures,
    ]);
    assert_eq!(o.status.code(), Some(1));
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["termination_reason"], "planner_done");
    assert!(!report["warnings"].as_array().unwrap().is_empty());
}

#[test]
fn replay_all_prints_table_and_json() {
    let o = stepguard(&["replay", "--all"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 13);
    assert!(text.lines().next().unwrap().contains("+Fea+Com"));
    assert!(text.contains("4/7 (9) ✗  5/5 (9) ✗  9/9 (9) ✓"), "{text}");

    let o = stepguard(&[
        "replay",
        "--scenario",
        scenario_path("row10_costco_loyalty_card.json").to_str().unwrap(),
        "--json",
    ]);
    let rows: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(rows[0]["fea_com"]["valid_steps"], 6);
    assert_eq!(rows[0]["fea"]["termination_reason"], "replan_budget_exhausted");
}

#[test]
fn corpus_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("c.jsonl");
    let html = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/html");
    let o = stepguard(&[
        "gen-corpus",
        "--html-dir",
        html.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--n-pos",
        "5",
        "--n-neg",
        "5",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_to_string(&out).unwrap().lines().count(), 30);

    let o = stepguard(&["eval", "--corpus", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["metrics"]["accuracy"], 1.0);
    assert_eq!(report["metrics"]["n"], 30);

    let o = stepguard(&["eval", "--corpus", out.to_str().unwrap(), "--backend", "llm"]);
    assert_eq!(o.status.code(), Some(2));
    let o = stepguard(&["gen-corpus", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = stepguard(&[
        "gen-corpus",
        "--html-dir",
        html.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--noise",
        "1.5",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_file_supplies_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "feasibility = \"off\"\ncompleteness = \"off\"\nblind_mode = true\n").unwrap();
    let path = scenario_path("row04_windows_text_size.json");
    let o = stepguard(&["run", "--scenario", path.to_str().unwrap(), "--config", cfg.to_str().unwrap()]);
    assert!(String::from_utf8_lossy(&o.stderr).contains("1/3 (3) ✗"));
    let o = stepguard(&[
        "run",
        "--scenario",
        path.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--feasibility",
        "oracle",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
}
