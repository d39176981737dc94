//! Command-line front end. Exit codes: 0 success, 1 task failure,
//! 2 input error, 3 privacy violation.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::coordinator::{run_task, CoordinatorConfig, Guards, LlmPlanner, Planner, RunError, ScriptedPlanner};
use crate::corpus::{self, CorpusOptions};
use crate::eval::{self, GuardJudge, OracleJudge, SampleJudge, SampleSpec};
use crate::guards::{CompletenessGuard, FeasibilityGuard, ModelGuard, OracleGuard};
use crate::llm::{FixtureTransport, LiveTransport, LlmClient, LlmTransport, ENV_MODEL};
use crate::privacy::{redact, CollisionPolicy, OutboundFilter, PlaceholderMemory, PrivacyError, RuleDetector};
use crate::replay::{self, ReplayConfig};
use crate::sim::Scenario;

pub const EXIT_SUCCESS: i32 = 0;
pub const EXIT_TASK_FAILURE: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_PRIVACY: i32 = 3;

const DEFAULT_MODEL: &str = "gpt-4";

#[derive(Debug, Parser)]
#[command(name = "stepguard", version, about = "Guarded step-by-step UI task automation")]
#[command(args_override_self = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one scenario.
    Run(RunArgs),
    /// Generate a labelled JSONL corpus.
    GenCorpus(GenCorpusArgs),
    /// Score a guard backend on a corpus.
    Eval(EvalArgs),
    /// Replay scenarios under Baseline, +Fea and +Fea+Com.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GuardBackend {
    Oracle,
    Llm,
    Adapter,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalBackend {
    Oracle,
    Llm,
    Adapter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlannerKind {
    Scripted,
    Llm,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportSpec {
    Live,
    Fixtures(PathBuf),
}

fn parse_transport(s: &str) -> Result<TransportSpec, String> {
    match s {
        "live" => Ok(TransportSpec::Live),
        _ => match s.strip_prefix("fixtures:") {
            Some(dir) if !dir.is_empty() => Ok(TransportSpec::Fixtures(PathBuf::from(dir))),
            _ => Err("expected `live` or `fixtures:DIR`".into()),
        },
    }
}

fn parse_probability(s: &str) -> Result<f64, String> {
    let p: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..=1.0).contains(&p) {
        Ok(p)
    } else {
        Err("must lie in [0, 1]".into())
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long, value_enum, default_value = "oracle")]
    pub feasibility: GuardBackend,
    #[arg(long, value_enum, default_value = "oracle")]
    pub completeness: GuardBackend,
    #[arg(long, value_enum, default_value = "scripted")]
    pub planner: PlannerKind,
    #[arg(long, default_value_t = crate::coordinator::DEFAULT_MAX_REPLANS)]
    pub max_replans: u32,
    #[arg(long, default_value_t = crate::coordinator::DEFAULT_STEP_CAP, value_parser = clap::value_parser!(u32).range(1..))]
    pub step_cap: u32,
    #[arg(long)]
    pub blind_mode: bool,
    /// Completeness guards see only the post-execution screen.
    #[arg(long)]
    pub after_only: bool,
    #[arg(long)]
    pub memory_file: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "error")]
    pub collision: CollisionArg,
    #[arg(long, value_parser = parse_transport)]
    pub transport: Option<TransportSpec>,
    /// Model for the LLM planner and LLM guards.
    #[arg(long)]
    pub model: Option<String>,
    /// Model for adapter guards.
    #[arg(long, default_value = "adapter")]
    pub adapter_model: String,
    /// Key-value file supplying defaults for any flag not given explicitly.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CollisionArg {
    Error,
    Suffix,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["html_dir", "scenario_dir"])))]
pub struct GenCorpusArgs {
    #[arg(long)]
    pub html_dir: Option<PathBuf>,
    #[arg(long)]
    pub scenario_dir: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub n_pos: usize,
    #[arg(long, default_value_t = 8)]
    pub n_neg: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.0, value_parser = parse_probability)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, value_enum, default_value = "oracle")]
    pub backend: EvalBackend,
    /// Evaluate a seeded subsample of this size.
    #[arg(long)]
    pub sample: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    /// Extra scenarios for oracle completeness labels; bundled ones are
    /// always available.
    #[arg(long)]
    pub scenario_dir: Option<PathBuf>,
    #[arg(long, value_parser = parse_transport)]
    pub transport: Option<TransportSpec>,
    #[arg(long)]
    pub model: Option<String>,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("which").required(true).args(["all", "scenario"])))]
pub struct ReplayArgs {
    /// Every bundled scenario.
    #[arg(long)]
    pub all: bool,
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// JSON instead of a text table.
    #[arg(long)]
    pub json: bool,
}

/// Failure with an exit code and a message for standard error.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn input(message: impl Into<String>) -> Self {
        CliError { code: EXIT_INPUT, message: message.into() }
    }
}

impl From<RunError> for CliError {
    fn from(e: RunError) -> Self {
        match e {
            RunError::PrivacyViolation(_) => CliError { code: EXIT_PRIVACY, message: e.to_string() },
            RunError::ScenarioAuthoring(_) => CliError::input(e.to_string()),
        }
    }
}

const RUN_CONFIG_KEYS: &[&str] = &[
    "scenario",
    "feasibility",
    "completeness",
    "planner",
    "max_replans",
    "step_cap",
    "blind_mode",
    "after_only",
    "memory_file",
    "collision",
    "transport",
    "model",
    "adapter_model",
];

/// Turn a TOML key-value file into flags placed before the explicit
/// arguments, so explicit flags win.
fn config_flags(path: &Path) -> Result<Vec<OsString>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let table: toml::Table = text.parse().map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let mut flags = Vec::new();
    for (key, value) in &table {
        let norm = key.replace('-', "_");
        if !RUN_CONFIG_KEYS.contains(&norm.as_str()) {
            return Err(CliError::input(format!("{}: unknown key {key:?}", path.display())));
        }
        let flag = format!("--{}", norm.replace('_', "-"));
        match value {
            toml::Value::Boolean(true) => flags.push(flag.into()),
            toml::Value::Boolean(false) => {}
            toml::Value::String(s) => flags.extend([flag.into(), s.into()]),
            toml::Value::Integer(i) => flags.extend([flag.into(), i.to_string().into()]),
            other => return Err(CliError::input(format!("{}: unsupported value for {key}: {other}", path.display()))),
        }
    }
    Ok(flags)
}

fn parse_cli(args: Vec<OsString>) -> Result<Cli, clap::Error> {
    let cli = Cli::try_parse_from(&args)?;
    let Command::Run(run) = &cli.command else { return Ok(cli) };
    let Some(cfg) = &run.config else { return Ok(cli) };
    let extra = match config_flags(cfg) {
        Ok(f) => f,
        Err(e) => return Err(clap::Error::raw(clap::error::ErrorKind::ValueValidation, format!("{}\n", e.message))),
    };
    let pos = args.iter().position(|a| a == "run").expect("run subcommand present");
    let mut merged: Vec<OsString> = args[..=pos].to_vec();
    merged.extend(extra);
    merged.extend(args[pos + 1..].iter().cloned());
    Cli::try_parse_from(merged)
}

/// Parse arguments, run, and return the process exit code.
pub fn main_with_args(args: Vec<OsString>, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cli = match parse_cli(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(a, out, err),
        Command::GenCorpus(a) => cmd_gen_corpus(a, err),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Replay(a) => cmd_replay(a, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.message);
            e.code
        }
    }
}

fn build_client(transport: &Option<TransportSpec>, filter: OutboundFilter) -> Result<Arc<LlmClient>, CliError> {
    let t: Arc<dyn LlmTransport> = match transport {
        None => {
            return Err(CliError::input("a model-backed component needs --transport live or --transport fixtures:DIR"))
        }
        Some(TransportSpec::Live) => Arc::new(LiveTransport::from_env().map_err(|e| CliError::input(e.to_string()))?),
        Some(TransportSpec::Fixtures(dir)) => Arc::new(FixtureTransport::new(dir)),
    };
    Ok(Arc::new(LlmClient::new(t, filter)))
}

fn model_name(explicit: &Option<String>) -> String {
    explicit.clone().or_else(|| std::env::var(ENV_MODEL).ok()).unwrap_or_else(|| DEFAULT_MODEL.to_string())
}

fn load_scenario(path: &Path) -> Result<Scenario, CliError> {
    Scenario::load(path).map_err(|e| CliError::input(e.to_string()))
}

fn cmd_run(a: RunArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, CliError> {
    let scenario = load_scenario(&a.scenario)?;
    let needs_model = matches!(a.feasibility, GuardBackend::Llm | GuardBackend::Adapter)
        || matches!(a.completeness, GuardBackend::Llm | GuardBackend::Adapter)
        || a.planner == PlannerKind::Llm;
    if needs_model && a.transport.is_none() {
        return Err(CliError::input("a model-backed component needs --transport live or --transport fixtures:DIR"));
    }
    let mut memory = match &a.memory_file {
        Some(p) => PlaceholderMemory::open(p).map_err(|e| CliError::input(e.to_string()))?,
        None => PlaceholderMemory::in_memory(),
    };
    let policy = match a.collision {
        CollisionArg::Error => CollisionPolicy::Error,
        CollisionArg::Suffix => CollisionPolicy::Suffix,
    };
    let redacted = redact(&scenario.instruction, &RuleDetector, &mut memory, policy).map_err(|e| match e {
        PrivacyError::Violation { .. } => CliError { code: EXIT_PRIVACY, message: e.to_string() },
        other => CliError::input(other.to_string()),
    })?;

    let client = if needs_model { Some(build_client(&a.transport, memory.outbound_filter())?) } else { None };
    let model = model_name(&a.model);
    let shared = Arc::new(scenario.clone());
    let oracle = OracleGuard::new(Arc::clone(&shared));
    let make_guard = |backend: GuardBackend| -> Option<ModelGuard> {
        let c = Arc::clone(client.as_ref()?);
        match backend {
            GuardBackend::Llm => Some(ModelGuard::llm(c, model.clone())),
            GuardBackend::Adapter => Some(ModelGuard::adapter(c, a.adapter_model.clone())),
            _ => None,
        }
    };
    let fea_model = make_guard(a.feasibility);
    let com_model = make_guard(a.completeness);
    let guards = Guards {
        feasibility: match a.feasibility {
            GuardBackend::Off => None,
            GuardBackend::Oracle => Some(&oracle as &dyn FeasibilityGuard),
            _ => fea_model.as_ref().map(|g| g as &dyn FeasibilityGuard),
        },
        completeness: match a.completeness {
            GuardBackend::Off => None,
            GuardBackend::Oracle => Some(&oracle as &dyn CompletenessGuard),
            _ => com_model.as_ref().map(|g| g as &dyn CompletenessGuard),
        },
    };
    let mut planner: Box<dyn Planner> = match a.planner {
        PlannerKind::Scripted => Box::new(ScriptedPlanner::from_scenario(&scenario)),
        PlannerKind::Llm => {
            Box::new(LlmPlanner::new(Arc::clone(client.as_ref().expect("client built")), model.clone()))
        }
    };
    let config = CoordinatorConfig {
        max_replans: a.max_replans,
        step_cap: a.step_cap,
        blind_mode: a.blind_mode,
        after_only: a.after_only,
    };
    let report = run_task(&redacted.text, &scenario, planner.as_mut(), guards, &memory, config)?;
    let json = serde_json::to_string_pretty(&report).expect("report serialization");
    writeln!(out, "{json}").map_err(|e| CliError::input(e.to_string()))?;
    let _ = writeln!(err, "{}: {}", report.scenario_id, eval::progress_row(&report));
    Ok(if report.success() { EXIT_SUCCESS } else { EXIT_TASK_FAILURE })
}

fn scenarios_in(dir: &Path) -> Result<Vec<Scenario>, CliError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CliError::input(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths.iter().map(|p| load_scenario(p)).collect()
}

fn cmd_gen_corpus(a: GenCorpusArgs, err: &mut dyn Write) -> Result<i32, CliError> {
    let opts = CorpusOptions { n_pos: a.n_pos, n_neg: a.n_neg, seed: a.seed, noise: a.noise, jobs: a.jobs };
    let corpus = match (&a.html_dir, &a.scenario_dir) {
        (Some(dir), _) => corpus::corpus_from_html_dir(dir, opts),
        (None, Some(dir)) => corpus::corpus_from_scenarios(&scenarios_in(dir)?, opts),
        (None, None) => unreachable!("clap requires one source"),
    }
    .map_err(|e| CliError::input(e.to_string()))?;
    for w in &corpus.warnings {
        let _ = writeln!(err, "warning: {w}");
    }
    corpus::write_jsonl(&a.out, &corpus.samples).map_err(|e| CliError::input(e.to_string()))?;
    let _ = writeln!(err, "wrote {} samples to {}", corpus.samples.len(), a.out.display());
    Ok(EXIT_SUCCESS)
}

fn cmd_eval(a: EvalArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let samples = corpus::read_jsonl(&a.corpus).map_err(|e| CliError::input(e.to_string()))?;
    let sample = a.sample.map(|k| SampleSpec { k, seed: a.seed });
    let oracle;
    let model_guard;
    let guard_judge;
    let judge: &dyn SampleJudge = match a.backend {
        EvalBackend::Oracle => {
            let mut scenarios = replay::bundled_scenarios();
            if let Some(dir) = &a.scenario_dir {
                scenarios.extend(scenarios_in(dir)?);
            }
            oracle = OracleJudge::new(scenarios);
            &oracle
        }
        EvalBackend::Llm | EvalBackend::Adapter => {
            let client = build_client(&a.transport, OutboundFilter::permissive())?;
            model_guard = if a.backend == EvalBackend::Llm {
                ModelGuard::llm(client, model_name(&a.model))
            } else {
                ModelGuard::adapter(client, a.model.clone().unwrap_or_else(|| "adapter".into()))
            };
            guard_judge = GuardJudge { feasibility: &model_guard, completeness: &model_guard };
            &guard_judge
        }
    };
    let pool =
        rayon::ThreadPoolBuilder::new().num_threads(a.jobs).build().map_err(|e| CliError::input(e.to_string()))?;
    let report = pool
        .install(|| eval::evaluate_predictor(&samples, judge, sample))
        .map_err(|e| CliError::input(e.to_string()))?;
    writeln!(out, "{}", serde_json::to_string_pretty(&report).expect("report serialization"))
        .map_err(|e| CliError::input(e.to_string()))?;
    Ok(EXIT_SUCCESS)
}

fn cmd_replay(a: ReplayArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let scenarios = match &a.scenario {
        Some(p) => vec![load_scenario(p)?],
        None => replay::bundled_scenarios(),
    };
    let rows = scenarios.iter().map(replay::replay_all_configs).collect::<Result<Vec<_>, _>>()?;
    let text = if a.json {
        serde_json::to_string_pretty(&rows).expect("rows serialization")
    } else {
        let labels: Vec<&str> = ReplayConfig::ALL.iter().map(|c| c.label()).collect();
        let table: Vec<(String, Vec<_>)> = rows
            .iter()
            .map(|r| {
                let name = match r.row {
                    Some(n) => format!("{n:>2} {}", r.scenario_id),
                    None => r.scenario_id.clone(),
                };
                (name, r.reports().into_iter().cloned().collect())
            })
            .collect();
        eval::progress_table(&labels, &table)
    };
    writeln!(out, "{}", text.trim_end()).map_err(|e| CliError::input(e.to_string()))?;
    Ok(EXIT_SUCCESS)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let argv = std::iter::once("stepguard").chain(args.iter().copied()).map(OsString::from).collect();
        let code = main_with_args(argv, &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn transport_spec() {
        assert_eq!(parse_transport("live"), Ok(TransportSpec::Live));
        assert_eq!(parse_transport("fixtures:/tmp/x"), Ok(TransportSpec::Fixtures("/tmp/x".into())));
        assert!(parse_transport("fixtures:").is_err());
        assert!(parse_transport("http").is_err());
    }

    #[test]
    fn conflicting_sources_rejected() {
        let (code, _, err) = run(&["gen-corpus", "--html-dir", "a", "--scenario-dir", "b", "--out", "c"]);
        assert_eq!(code, EXIT_INPUT, "{err}");
        let (code, _, _) = run(&["replay", "--all", "--scenario", "x.json"]);
        assert_eq!(code, EXIT_INPUT);
    }

    #[test]
    fn model_backends_need_transport() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        std::fs::write(&path, crate::sim::tests::SHOP).unwrap();
        let (code, _, err) = run(&["run", "--scenario", path.to_str().unwrap(), "--feasibility", "llm"]);
        assert_eq!(code, EXIT_INPUT);
        assert!(err.contains("--transport"), "{err}");
    }

    #[test]
    fn config_file_sits_under_flags() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.toml");
        std::fs::write(&cfg, "max_replans = 1\nblind_mode = true\nstep-cap = 4\n").unwrap();
        let args: Vec<OsString> =
            ["stepguard", "run", "--scenario", "s.json", "--config", cfg.to_str().unwrap(), "--step-cap", "9"]
                .iter()
                .map(OsString::from)
                .collect();
        let Command::Run(r) = parse_cli(args).unwrap().command else { panic!() };
        assert_eq!((r.max_replans, r.step_cap, r.blind_mode), (1, 9, true));

        std::fs::write(&cfg, "bogus = 1\n").unwrap();
        let args: Vec<OsString> = ["stepguard", "run", "--scenario", "s.json", "--config", cfg.to_str().unwrap()]
            .iter()
            .map(OsString::from)
            .collect();
        assert!(parse_cli(args).is_err());
    }

    #[test]
    fn missing_scenario_is_input_error() {
        let (code, _, _) = run(&["run", "--scenario", "/nonexistent/x.json"]);
        assert_eq!(code, EXIT_INPUT);
    }
}
