//! Training/evaluation corpus construction: leaf-element extraction from
//! HTML, templated feasible and infeasible commands, and completeness
//! triples built from scenario transitions.

use std::collections::BTreeSet;
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use scraper::{ElementRef, Html, Selector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::executor::{ground, parse_command, CommandIntent, Verb};
use crate::guards::{oracle_complete, oracle_feasible};
use crate::screen::{find_by_caption, normalize_caption, BBox, ElementType, Screen, UiElement};
use crate::sim::{ActionKind, Scenario};

pub const LAYOUT_WIDTH: u32 = 1280;
pub const LAYOUT_MIN_HEIGHT: u32 = 720;
pub const ROW_HEIGHT: u32 = 40;
const MARGIN: u32 = 8;
const ELEMENT_HEIGHT: u32 = 32;
const MAX_REJECTIONS: usize = 1000;

const ADJECTIVES: &[&str] = &[
    "Quantum", "Velvet", "Crimson", "Silent", "Hollow", "Amber", "Frozen", "Golden", "Rusty", "Lunar", "Mossy",
    "Nimble", "Obsidian", "Painted", "Rapid", "Solar", "Tangled", "Umber", "Vivid", "Woven", "Zesty", "Brisk",
    "Cobalt", "Dusty",
];
const NOUNS: &[&str] = &[
    "Llama", "Harbor", "Lantern", "Meadow", "Anvil", "Beacon", "Canyon", "Falcon", "Glacier", "Heron", "Island",
    "Jackal", "Kettle", "Lagoon", "Marble", "Nebula", "Orchid", "Pebble", "Quiver", "Raven", "Saddle", "Thicket",
    "Violin", "Walrus",
];
const ENTER_WORDS: &[&str] =
    &["gloves", "charger", "Seattle", "blue", "42", "weekly report", "pizza", "hello world", "Tuesday", "ticket"];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("screen {0} has no element a positive command can target")]
    NoPositiveTargets(String),
    #[error("scenario {0} has no usable transition")]
    NoTransitions(String),
    #[error("fake caption pool exhausted for {0}")]
    PoolExhausted(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}:{line}: {source}")]
    Json { path: String, line: usize, source: serde_json::Error },
    #[error(transparent)]
    Scenario(#[from] crate::sim::ScenarioError),
    #[error("thread pool: {0}")]
    Pool(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io { path: path.display().to_string(), source }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedMeta {
    pub seed: u64,
    /// HTML file stem or scenario page the sample came from.
    pub source: String,
    pub scenario_id: Option<String>,
    pub ordinal: usize,
    #[serde(default)]
    pub flipped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Sample {
    Feasibility { screen: Screen, command: String, label: u8, seed_meta: SeedMeta },
    Completeness { screen_before: Screen, screen_after: Screen, command: String, label: u8, seed_meta: SeedMeta },
}

impl Sample {
    pub fn label(&self) -> u8 {
        match self {
            Sample::Feasibility { label, .. } | Sample::Completeness { label, .. } => *label,
        }
    }

    pub fn seed_meta(&self) -> &SeedMeta {
        match self {
            Sample::Feasibility { seed_meta, .. } | Sample::Completeness { seed_meta, .. } => seed_meta,
        }
    }

    pub fn command(&self) -> &str {
        match self {
            Sample::Feasibility { command, .. } | Sample::Completeness { command, .. } => command,
        }
    }

    fn set_label(&mut self, value: u8) {
        match self {
            Sample::Feasibility { label, .. } | Sample::Completeness { label, .. } => *label = value,
        }
    }

    fn meta_mut(&mut self) -> &mut SeedMeta {
        match self {
            Sample::Feasibility { seed_meta, .. } | Sample::Completeness { seed_meta, .. } => seed_meta,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub screen: Screen,
    pub warnings: Vec<String>,
}

const SKIPPED_TAGS: &[&str] = &[
    "html", "head", "body", "title", "meta", "link", "script", "style", "noscript", "br", "hr", "template", "option",
    "optgroup",
];
/// Treated as leaves even though they usually have element children.
const ATOMIC_TAGS: &[&str] = &["svg", "select"];

fn collapse(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn etype_for(el: &ElementRef<'_>) -> ElementType {
    let v = el.value();
    match v.name() {
        "textarea" | "select" => ElementType::Input,
        "input" => match v.attr("type").map(str::to_ascii_lowercase).as_deref() {
            Some("submit" | "button" | "reset") => ElementType::Button,
            Some("image") => ElementType::Icon,
            _ => ElementType::Input,
        },
        "img" | "svg" => ElementType::Icon,
        _ => ElementType::Button,
    }
}

/// Extract leaf elements and lay them out in a wrapping left-to-right
/// flow with fixed row height.
///
/// Caption sources, highest priority first: inner text, `value`,
/// `aria-label`, `alt`, a `<label for>` naming the element, `placeholder`.
/// Labels consumed through `for` are not emitted themselves.
pub fn extract_leaf_elements(html: &str, screen_id: &str) -> Extraction {
    let doc = Html::parse_document(html);
    let labels = Selector::parse("label[for]").expect("static selector");
    let mut label_for = std::collections::BTreeMap::new();
    for l in doc.select(&labels) {
        if let Some(target) = l.value().attr("for") {
            label_for.entry(target.to_string()).or_insert_with(|| collapse(&l.text().collect::<String>()));
        }
    }
    let ids: BTreeSet<&str> = doc.root_element().descendent_elements().filter_map(|e| e.value().id()).collect();

    let mut captions: Vec<(String, ElementType)> = Vec::new();
    for el in doc.root_element().descendent_elements() {
        let name = el.value().name();
        if SKIPPED_TAGS.contains(&name) {
            continue;
        }
        if el.ancestors().filter_map(ElementRef::wrap).any(|a| ATOMIC_TAGS.contains(&a.value().name())) {
            continue;
        }
        let is_leaf = ATOMIC_TAGS.contains(&name) || el.child_elements().next().is_none();
        if !is_leaf {
            continue;
        }
        if name == "label" && el.value().attr("for").is_some_and(|t| ids.contains(t)) {
            continue;
        }
        let attr = |k: &str| el.value().attr(k).map(collapse).filter(|s| !s.is_empty());
        let inner = if name == "select" { String::new() } else { collapse(&el.text().collect::<String>()) };
        let caption = Some(inner)
            .filter(|s| !s.is_empty())
            .or_else(|| attr("value"))
            .or_else(|| attr("aria-label"))
            .or_else(|| attr("alt"))
            .or_else(|| el.value().id().and_then(|id| label_for.get(id).cloned()).filter(|s| !s.is_empty()))
            .or_else(|| attr("placeholder"));
        if let Some(c) = caption {
            captions.push((c, etype_for(&el)));
        }
    }

    let mut elements = Vec::with_capacity(captions.len());
    let (mut x, mut y) = (MARGIN, MARGIN);
    for (index, (text, etype)) in captions.into_iter().enumerate() {
        let w = (9 * text.chars().count() as u32 + 24).clamp(48, LAYOUT_WIDTH - 2 * MARGIN);
        if x + w > LAYOUT_WIDTH - MARGIN {
            x = MARGIN;
            y += ROW_HEIGHT;
        }
        elements.push(UiElement::new(index, text, BBox::new(x, y, x + w, y + ELEMENT_HEIGHT), etype));
        x += w + MARGIN;
    }
    let height = (y + ROW_HEIGHT + MARGIN).max(LAYOUT_MIN_HEIGHT);
    let mut warnings = Vec::new();
    if elements.is_empty() {
        warnings.push(format!("{screen_id}: no extractable elements, screen is empty"));
    }
    Extraction { screen: Screen::new(screen_id, LAYOUT_WIDTH, height, elements), warnings }
}

/// Per-source seed: stable across runs and independent of job count.
pub fn derive_seed(seed: u64, source: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(source.as_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

fn fake_caption(rng: &mut ChaCha8Rng, forbidden: &BTreeSet<String>, context: &str) -> Result<String, CorpusError> {
    for _ in 0..MAX_REJECTIONS {
        let c = format!("{} {}", ADJECTIVES.choose(rng).unwrap(), NOUNS.choose(rng).unwrap());
        if !forbidden.contains(&normalize_caption(&c)) {
            return Ok(c);
        }
    }
    Err(CorpusError::PoolExhausted(context.to_string()))
}

fn intent_for(verb: Verb, caption: &str, rng: &mut ChaCha8Rng) -> CommandIntent {
    match verb {
        Verb::Select => CommandIntent::select(caption),
        Verb::ClickRightOf => CommandIntent::click_right_of(caption),
        Verb::Enter => CommandIntent::enter(*ENTER_WORDS.choose(rng).unwrap(), caption),
        Verb::ScrollUntil => CommandIntent::scroll_until(caption),
    }
}

/// The command text parses back to the same intent.
fn renders_cleanly(intent: &CommandIntent) -> bool {
    parse_command(&intent.render()).is_ok_and(|p| p == *intent)
}

fn positive_pairs(screen: &Screen) -> Vec<(usize, Verb)> {
    let mut probe = ChaCha8Rng::seed_from_u64(0);
    let mut pairs = Vec::new();
    for e in screen.sorted_elements() {
        for verb in Verb::ALL {
            let intent = intent_for(verb, &e.text, &mut probe);
            if !renders_cleanly(&intent) {
                continue;
            }
            let ok = match verb {
                Verb::ScrollUntil => matches!(find_by_caption(screen, &e.text), Ok(Some(_))),
                _ => ground(&intent, screen).is_ok(),
            };
            if ok {
                pairs.push((e.index, verb));
            }
        }
    }
    pairs
}

fn caption_set<'a>(elements: impl IntoIterator<Item = &'a UiElement>) -> BTreeSet<String> {
    elements.into_iter().map(|e| normalize_caption(&e.text)).collect()
}

/// Feasibility samples for one screen. `extra_forbidden` holds captions
/// that exist elsewhere on the page (e.g. hidden rows) and so must never
/// be used as fakes.
pub fn gen_feasibility_samples(
    screen: &Screen,
    n_pos: usize,
    n_neg: usize,
    seed: u64,
    extra_forbidden: &BTreeSet<String>,
    scenario_id: Option<&str>,
) -> Result<Vec<Sample>, CorpusError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let meta = |ordinal| SeedMeta {
        seed,
        source: screen.screen_id.clone(),
        scenario_id: scenario_id.map(str::to_string),
        ordinal,
        flipped: false,
    };
    let mut out = Vec::with_capacity(n_pos + n_neg);
    if n_pos > 0 {
        let pairs = positive_pairs(screen);
        if pairs.is_empty() {
            return Err(CorpusError::NoPositiveTargets(screen.screen_id.clone()));
        }
        for _ in 0..n_pos {
            let &(index, verb) = pairs.choose(&mut rng).unwrap();
            let caption = &screen.element(index).unwrap().text;
            let intent = intent_for(verb, caption, &mut rng);
            out.push(Sample::Feasibility {
                screen: screen.clone(),
                command: intent.render(),
                label: 1,
                seed_meta: meta(out.len()),
            });
        }
    }
    let mut forbidden = caption_set(&screen.elements);
    forbidden.extend(extra_forbidden.iter().cloned());
    for _ in 0..n_neg {
        let verb = *Verb::ALL.choose(&mut rng).unwrap();
        let caption = fake_caption(&mut rng, &forbidden, &screen.screen_id)?;
        let intent = intent_for(verb, &caption, &mut rng);
        out.push(Sample::Feasibility {
            screen: screen.clone(),
            command: intent.render(),
            label: 0,
            seed_meta: meta(out.len()),
        });
    }
    Ok(out)
}

struct TransitionTuple {
    before: Screen,
    caption: String,
    kind: ActionKind,
    after: Screen,
}

fn command_for(kind: ActionKind, caption: &str, rng: &mut ChaCha8Rng) -> String {
    match kind {
        ActionKind::Click => CommandIntent::select(caption).render(),
        ActionKind::Type => CommandIntent::enter(*ENTER_WORDS.choose(rng).unwrap(), caption).render(),
    }
}

fn page_screen(scenario: &Scenario, page: &str, reveal: usize) -> Screen {
    let mut st = scenario.initial_state();
    st.current = page.to_string();
    if reveal > 0 {
        st.scroll.insert(page.to_string(), reveal);
    }
    st.visible_screen(scenario)
}

fn transition_tuples(scenario: &Scenario) -> Vec<TransitionTuple> {
    let mut probe = ChaCha8Rng::seed_from_u64(0);
    let mut out = Vec::new();
    for (page_id, page) in &scenario.pages {
        for (&(index, kind), target) in &page.transitions {
            let reveal = page.hidden_elements.iter().position(|e| e.index == index).map_or(0, |p| p + 1);
            let Some(el) = page.element(index) else { continue };
            let before = page_screen(scenario, page_id, reveal);
            let after = page_screen(scenario, target, 0);
            let cmd = command_for(kind, &el.text, &mut probe);
            if oracle_complete(scenario, Some(&before), &after, &cmd) {
                out.push(TransitionTuple { before, caption: el.text.clone(), kind, after });
            }
        }
    }
    out
}

/// Completeness triples for one scenario. Positives cycle through a
/// seeded permutation of the real transitions; each negative replaces
/// exactly one slot of a real triple and is kept only when the oracle
/// rejects it.
pub fn gen_completeness_samples(
    scenario: &Scenario,
    n_pos: usize,
    n_neg: usize,
    seed: u64,
) -> Result<Vec<Sample>, CorpusError> {
    let tuples = transition_tuples(scenario);
    if tuples.is_empty() {
        return Err(CorpusError::NoTransitions(scenario.scenario_id.clone()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let meta = |ordinal, source: &str| SeedMeta {
        seed,
        source: source.to_string(),
        scenario_id: Some(scenario.scenario_id.clone()),
        ordinal,
        flipped: false,
    };
    let mut out = Vec::with_capacity(n_pos + n_neg);
    let mut order: Vec<usize> = (0..tuples.len()).collect();
    order.shuffle(&mut rng);
    for i in 0..n_pos {
        let t = &tuples[order[i % order.len()]];
        let command = command_for(t.kind, &t.caption, &mut rng);
        out.push(Sample::Completeness {
            screen_before: t.before.clone(),
            screen_after: t.after.clone(),
            command,
            label: 1,
            seed_meta: meta(out.len(), &t.before.screen_id),
        });
    }
    let page_ids: Vec<&String> = scenario.pages.keys().collect();
    let forbidden =
        caption_set(scenario.pages.values().flat_map(|p| p.screen.elements.iter().chain(p.hidden_elements.iter())));
    for _ in 0..n_neg {
        let mut accepted = None;
        for _ in 0..MAX_REJECTIONS {
            let t = tuples.choose(&mut rng).unwrap();
            let (mut before, mut after) = (t.before.clone(), t.after.clone());
            let mut command = command_for(t.kind, &t.caption, &mut rng);
            match rng.random_range(0..3) {
                0 => before = page_screen(scenario, page_ids.choose(&mut rng).unwrap(), 0),
                1 => {
                    let fake = fake_caption(&mut rng, &forbidden, &scenario.scenario_id)?;
                    command = command_for(t.kind, &fake, &mut rng);
                }
                _ => after = page_screen(scenario, page_ids.choose(&mut rng).unwrap(), 0),
            }
            if !oracle_complete(scenario, Some(&before), &after, &command) {
                accepted = Some((before, after, command));
                break;
            }
        }
        let (before, after, command) =
            accepted.ok_or_else(|| CorpusError::PoolExhausted(scenario.scenario_id.clone()))?;
        let source = before.screen_id.clone();
        out.push(Sample::Completeness {
            screen_before: before,
            screen_after: after,
            command,
            label: 0,
            seed_meta: meta(out.len(), &source),
        });
    }
    Ok(out)
}

/// Flip each label with probability `p`. Deterministic under `seed`.
pub fn apply_label_noise(samples: &mut [Sample], p: f64, seed: u64) {
    if p <= 0.0 {
        return;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "label-noise"));
    for s in samples {
        if rng.random_bool(p.min(1.0)) {
            let flipped = 1 - s.label();
            s.set_label(flipped);
            s.meta_mut().flipped = true;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorpusOptions {
    /// Per screen for feasibility, per scenario for completeness.
    pub n_pos: usize,
    pub n_neg: usize,
    pub seed: u64,
    pub noise: f64,
    /// 0 means rayon's default.
    pub jobs: usize,
}

impl Default for CorpusOptions {
    fn default() -> Self {
        CorpusOptions { n_pos: 8, n_neg: 8, seed: 0, noise: 0.0, jobs: 0 }
    }
}

fn in_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T, CorpusError> {
    let pool =
        rayon::ThreadPoolBuilder::new().num_threads(jobs).build().map_err(|e| CorpusError::Pool(e.to_string()))?;
    Ok(pool.install(f))
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub samples: Vec<Sample>,
    pub warnings: Vec<String>,
}

/// Feasibility corpus from every `*.html` file in `dir`, sorted by name.
pub fn corpus_from_html_dir(dir: &Path, opts: CorpusOptions) -> Result<Corpus, CorpusError> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "html" || x == "htm"))
        .collect();
    files.sort();
    let per_file = in_pool(opts.jobs, || {
        files
            .par_iter()
            .map(|path| -> Result<(Vec<Sample>, Vec<String>), CorpusError> {
                let html = std::fs::read_to_string(path).map_err(io_err(path))?;
                let stem = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
                let ex = extract_leaf_elements(&html, &stem);
                if ex.screen.elements.is_empty() {
                    return Ok((vec![], ex.warnings));
                }
                let samples = gen_feasibility_samples(
                    &ex.screen,
                    opts.n_pos,
                    opts.n_neg,
                    derive_seed(opts.seed, &stem),
                    &BTreeSet::new(),
                    None,
                )?;
                Ok((samples, ex.warnings))
            })
            .collect::<Vec<_>>()
    })?;
    let mut corpus = Corpus::default();
    for r in per_file {
        let (s, w) = r?;
        corpus.samples.extend(s);
        corpus.warnings.extend(w);
    }
    apply_label_noise(&mut corpus.samples, opts.noise, opts.seed);
    Ok(corpus)
}

/// Feasibility samples for every page's initial screen plus completeness
/// triples for every scenario.
pub fn corpus_from_scenarios(scenarios: &[Scenario], opts: CorpusOptions) -> Result<Corpus, CorpusError> {
    let per_scenario = in_pool(opts.jobs, || {
        scenarios
            .par_iter()
            .map(|sc| -> Result<Vec<Sample>, CorpusError> {
                let mut out = Vec::new();
                for (page_id, page) in &sc.pages {
                    let screen = page_screen(sc, page_id, 0);
                    if screen.elements.is_empty() {
                        continue;
                    }
                    let hidden = caption_set(&page.hidden_elements);
                    let source = format!("{}/{page_id}", sc.scenario_id);
                    out.extend(gen_feasibility_samples(
                        &screen,
                        opts.n_pos,
                        opts.n_neg,
                        derive_seed(opts.seed, &source),
                        &hidden,
                        Some(&sc.scenario_id),
                    )?);
                }
                match gen_completeness_samples(sc, opts.n_pos, opts.n_neg, derive_seed(opts.seed, &sc.scenario_id)) {
                    Ok(s) => out.extend(s),
                    Err(CorpusError::NoTransitions(_)) => {}
                    Err(e) => return Err(e),
                }
                Ok(out)
            })
            .collect::<Vec<_>>()
    })?;
    let mut corpus = Corpus::default();
    for r in per_scenario {
        corpus.samples.extend(r?);
    }
    apply_label_noise(&mut corpus.samples, opts.noise, opts.seed);
    Ok(corpus)
}

pub fn write_jsonl(path: &Path, samples: &[Sample]) -> Result<(), CorpusError> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for s in samples {
        serde_json::to_writer(&mut w, s).map_err(|source| CorpusError::Json {
            path: path.display().to_string(),
            line: 0,
            source,
        })?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_jsonl(path: &Path) -> Result<Vec<Sample>, CorpusError> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| CorpusError::Json {
            path: path.display().to_string(),
            line: i + 1,
            source,
        })?);
    }
    Ok(out)
}

/// Oracle label for a sample; `None` when the sample needs a scenario
/// that was not supplied.
pub fn oracle_label(sample: &Sample, scenario: Option<&Scenario>) -> Option<bool> {
    match sample {
        Sample::Feasibility { screen, command, .. } => Some(oracle_feasible(scenario, screen, command)),
        Sample::Completeness { screen_before, screen_after, command, .. } => {
            scenario.map(|sc| oracle_complete(sc, Some(screen_before), screen_after, command))
        }
    }
}
