//! Command implementations behind the `symcast` binary. Each command writes
//! its outputs plus a `manifest_<command>.json` into an output directory.

pub mod config;
pub mod svg;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use symcast_core::ingest::{cases_csv, generate_synthetic, load_panel, survey_csv, IngestSummary, PanelDataset};
use symcast_core::metrics::{compare_reports, per_state_report, top_k_frequency, ImportanceTable, PredictionSet};
use symcast_core::orchestrate::{
    confidence_interval, feature_sweep, protocol_notes, run_suite, ConfidenceInterval, FeatureCount, Granularity,
    GLOBAL_KEY,
};
use symcast_core::ModelFamily;

pub use config::CliConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    /// 2 for configuration and validation failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<symcast_core::Error> for CliError {
    fn from(e: symcast_core::Error) -> Self {
        if e.is_configuration() {
            CliError::Config(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| io_err(path, e))
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct GlobalOpts {
    pub config: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub clamp_nonneg: bool,
}

impl GlobalOpts {
    /// Loads the config file and applies flag overrides.
    pub fn resolve(&self) -> Result<CliConfig, CliError> {
        let path = self
            .config
            .as_deref()
            .ok_or_else(|| CliError::Config("--config is required for this command".into()))?;
        let mut cfg = CliConfig::load(path)?;
        if let Some(out) = &self.out {
            cfg.paths.out = out.clone();
        }
        if let Some(seed) = self.seed {
            cfg.run.seeds = vec![seed];
            cfg.synth.seed = seed;
        }
        if self.clamp_nonneg {
            cfg.run.clamp_nonneg = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Result of a command: files written and lines for standard output.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub lines: Vec<String>,
}

impl Outcome {
    fn write(&mut self, path: PathBuf, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
        write(&path, contents)?;
        self.files.push(path);
        Ok(())
    }
}

fn manifest(command: &str, cfg: Option<&CliConfig>, extra: serde_json::Value, started: Instant) -> serde_json::Value {
    let mut m = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
    });
    if let Some(cfg) = cfg {
        m["config"] = serde_json::to_value(cfg).expect("config serializes");
        m["protocol"] = serde_json::to_value(protocol_notes(&cfg.run)).expect("notes serialize");
    }
    if let serde_json::Value::Object(map) = extra {
        for (k, v) in map {
            m[k] = v;
        }
    }
    m["wall_clock_seconds"] = json!(started.elapsed().as_secs_f64());
    m
}

/// Writes `manifest_<command>.json`.
fn write_manifest(outcome: &mut Outcome, dir: &Path, value: serde_json::Value) -> Result<(), CliError> {
    let name = format!("manifest_{}.json", value["command"].as_str().unwrap_or("run"));
    let text = serde_json::to_string_pretty(&value).map_err(|e| CliError::Runtime(e.to_string()))?;
    outcome.write(dir.join(name), text + "\n")
}

/// Writes a synthetic survey table, cumulative cases table and ground truth.
pub fn cmd_synth(opts: &GlobalOpts) -> Result<Outcome, CliError> {
    let started = Instant::now();
    let cfg = opts.resolve()?;
    let (panel, truth) = generate_synthetic(&cfg.synth)?;
    let dir = cfg.paths.out.clone();
    let mut out = Outcome::default();
    out.write(dir.join("survey.csv"), survey_csv(&panel)?)?;
    out.write(dir.join("cases.csv"), cases_csv(&panel)?)?;
    let truth_json = serde_json::to_string_pretty(&truth).map_err(|e| CliError::Runtime(e.to_string()))?;
    out.write(dir.join("ground_truth.json"), truth_json + "\n")?;
    write_manifest(
        &mut out,
        &dir,
        manifest("synth", Some(&cfg), json!({ "rows": panel.len() }), started),
    )?;
    out.lines.push(format!(
        "wrote {} rows ({} states x {} dates) to {}",
        panel.len(),
        cfg.synth.n_states,
        cfg.synth.n_dates,
        dir.display()
    ));
    Ok(out)
}

struct Loaded {
    panel: PanelDataset,
    summary: IngestSummary,
    hashes: serde_json::Value,
}

fn load_inputs(cfg: &CliConfig) -> Result<Loaded, CliError> {
    let (survey_path, cases_path) = cfg.inputs()?;
    let survey = read(&survey_path)?;
    let cases = read(&cases_path)?;
    let (panel, summary) = load_panel(survey.as_slice(), cases.as_slice(), &cfg.columns, None)?;
    if panel.is_empty() {
        return Err(CliError::Runtime("joined panel is empty".into()));
    }
    let hashes = json!({
        "survey": { "path": survey_path, "sha256": sha256_hex(&survey) },
        "cases": { "path": cases_path, "sha256": sha256_hex(&cases) },
    });
    Ok(Loaded { panel, summary, hashes })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedEntry {
    pub seed: u64,
    pub mae: f64,
    pub nmae: Option<f64>,
    pub predictions: String,
}

/// `suite.json`: index of a trained suite directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteIndex {
    pub family: ModelFamily,
    pub granularity: Granularity,
    pub feature_k: FeatureCount,
    pub boundary: NaiveDate,
    pub date_range: Option<(NaiveDate, NaiveDate)>,
    pub skipped_states: Vec<String>,
    pub per_seed: Vec<SeedEntry>,
    pub mae_interval: Option<ConfidenceInterval>,
    pub models: BTreeMap<String, String>,
    pub importance: Option<String>,
    pub per_state_report: bool,
}

impl SuiteIndex {
    pub fn load(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join("suite.json");
        serde_json::from_slice(&read(&path)?).map_err(|e| io_err(&path, e))
    }
}

/// Runs the configured suite and writes predictions, model dumps, rankings
/// and importance into the output directory.
pub fn cmd_train(opts: &GlobalOpts) -> Result<Outcome, CliError> {
    let started = Instant::now();
    let mut cfg = opts.resolve()?;
    cfg.run.compute_importance = cfg.reports.importance;
    let loaded = load_inputs(&cfg)?;
    let result = run_suite(&loaded.panel, &cfg.run)?;
    let dir = cfg.paths.out.clone();
    let mut out = Outcome::default();

    let mut per_seed = Vec::new();
    for run in &result.per_seed {
        let rel = format!("predictions/seed_{}.csv", run.seed);
        out.write(dir.join(&rel), run.predictions.to_csv())?;
        per_seed.push(SeedEntry {
            seed: run.seed,
            mae: run.mae,
            nmae: run.nmae,
            predictions: rel,
        });
    }
    let mut models = BTreeMap::new();
    for (key, model) in &result.models {
        let rel = format!("models/{key}.json");
        let path = dir.join(&rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
        model.save(&path)?;
        out.files.push(path);
        models.insert(key.clone(), rel);
    }
    for (key, ranking) in &result.rankings {
        out.write(dir.join(format!("rankings/{key}.csv")), ranking.to_csv())?;
    }
    let importance = match &result.importance {
        Some(table) => {
            let text = serde_json::to_string_pretty(table).map_err(|e| CliError::Runtime(e.to_string()))?;
            out.write(dir.join("importance.json"), text + "\n")?;
            Some("importance.json".to_string())
        }
        None => None,
    };
    let index = SuiteIndex {
        family: cfg.run.family,
        granularity: cfg.run.granularity,
        feature_k: cfg.run.feature_k,
        boundary: result.boundary,
        date_range: loaded.panel.date_range(),
        skipped_states: result.skipped_states.clone(),
        per_seed,
        mae_interval: result.mae_interval(cfg.reports.ci_level),
        models,
        importance,
        per_state_report: cfg.reports.per_state,
    };
    let text = serde_json::to_string_pretty(&index).map_err(|e| CliError::Runtime(e.to_string()))?;
    out.write(dir.join("suite.json"), text + "\n")?;
    write_manifest(
        &mut out,
        &dir,
        manifest(
            "train",
            Some(&cfg),
            json!({
                "inputs": loaded.hashes,
                "ingest": loaded.summary,
                "boundary": result.boundary,
                "date_range": index.date_range,
                "skipped_states": result.skipped_states,
            }),
            started,
        ),
    )?;

    out.lines.push(format!(
        "{} {} suite: {} model(s), {} seed(s), boundary {}",
        cfg.run.granularity,
        cfg.run.family,
        result.models.len(),
        result.per_seed.len(),
        result.boundary
    ));
    for r in &result.per_seed {
        out.lines.push(format!(
            "seed {}: MAE {:.4}, nMAE {}",
            r.seed,
            r.mae,
            r.nmae.map_or("n/a".into(), |v| format!("{v:.2}%"))
        ));
    }
    if let Some(ci) = &index.mae_interval {
        out.lines.push(format!(
            "MAE {:.0}% CI: ({:.4}, {:.4})",
            ci.level * 100.0,
            ci.low,
            ci.high
        ));
    }
    if !result.skipped_states.is_empty() {
        out.lines.push(format!("skipped states: {}", result.skipped_states.join(", ")));
    }
    Ok(out)
}

fn load_predictions(dir: &Path, entry: &SeedEntry) -> Result<PredictionSet, CliError> {
    let path = dir.join(&entry.predictions);
    PredictionSet::from_csv(read(&path)?.as_slice()).map_err(|e| io_err(&path, e))
}

/// Per-state and per-seed error reports for a suite; with `compare`, the
/// side-by-side table against a second suite (first seed of each).
pub fn cmd_evaluate(suite: &Path, compare: Option<&Path>, out_dir: Option<&Path>) -> Result<Outcome, CliError> {
    let started = Instant::now();
    let index = SuiteIndex::load(suite)?;
    let dir = out_dir.unwrap_or(suite).to_path_buf();
    let mut out = Outcome::default();
    let first = index
        .per_seed
        .first()
        .ok_or_else(|| CliError::Runtime("suite has no seed runs".into()))?;
    let preds = load_predictions(suite, first)?;
    let report = per_state_report(&preds)?;
    if index.per_state_report {
        out.write(dir.join("report.csv"), report.to_csv())?;
    }

    let mut runs = String::from("seed,mae,nmae\n");
    let mut maes = Vec::new();
    for entry in &index.per_seed {
        let p = load_predictions(suite, entry)?;
        let r = per_state_report(&p)?;
        runs.push_str(&format!(
            "{},{},{}\n",
            entry.seed,
            r.overall_mae,
            r.overall_nmae.map(|v| v.to_string()).unwrap_or_default()
        ));
        maes.push(r.overall_mae);
    }
    out.write(dir.join("runs.csv"), runs)?;
    if maes.len() >= 2 {
        let level = index.mae_interval.map_or(0.95, |c| c.level);
        let ci = confidence_interval(&maes, level)?;
        out.write(
            dir.join("ci.csv"),
            format!("metric,level,mean,low,high\nmae,{},{},{},{}\n", ci.level, ci.mean, ci.low, ci.high),
        )?;
    }
    out.lines.push(format!(
        "{} {}: MAE {:.4}, nMAE {} over {} test rows",
        index.granularity,
        index.family,
        report.overall_mae,
        report.overall_nmae.map_or("n/a".into(), |v| format!("{v:.2}%")),
        report.n
    ));

    let mut extra = json!({ "suite": suite });
    if let Some(other) = compare {
        let other_index = SuiteIndex::load(other)?;
        let other_first = other_index
            .per_seed
            .first()
            .ok_or_else(|| CliError::Runtime("comparison suite has no seed runs".into()))?;
        let other_preds = load_predictions(other, other_first)?;
        let mut a = preds.keys();
        let mut b = other_preds.keys();
        a.sort();
        b.sort();
        if a != b {
            return Err(CliError::Runtime(
                "suites were evaluated on different (state, date) test rows".into(),
            ));
        }
        let cmp = compare_reports(&report, &per_state_report(&other_preds)?)?;
        out.write(dir.join("comparison.csv"), cmp.csv)?;
        out.lines.push(format!("local wins: {}/{} states", cmp.wins, cmp.states));
        extra["compare"] = json!(other);
        extra["wins"] = json!(cmp.wins);
        extra["states"] = json!(cmp.states);
    }
    write_manifest(&mut out, &dir, manifest("evaluate", None, extra, started))?;
    Ok(out)
}

fn default_ks(cfg: &CliConfig, n_features: usize) -> Vec<usize> {
    if cfg.reports.sweep_ks.is_empty() {
        (1..=n_features).collect()
    } else {
        cfg.reports.sweep_ks.clone()
    }
}

/// MAE against the number of top-ranked features kept.
pub fn cmd_sweep(opts: &GlobalOpts, ks: Option<&[usize]>) -> Result<Outcome, CliError> {
    let started = Instant::now();
    let cfg = opts.resolve()?;
    let loaded = load_inputs(&cfg)?;
    let ks = ks.map_or_else(|| default_ks(&cfg, loaded.panel.n_features()), <[usize]>::to_vec);
    let curve = feature_sweep(&loaded.panel, &cfg.run, &ks)?;
    let dir = cfg.paths.out.clone();
    let mut out = Outcome::default();
    let mut csv = String::from("k,mae\n");
    for (k, m) in &curve {
        csv.push_str(&format!("{k},{m}\n"));
    }
    out.write(dir.join("sweep.csv"), csv)?;
    if cfg.reports.plot {
        let points: Vec<(f64, f64)> = curve.iter().map(|&(k, m)| (k as f64, m)).collect();
        let title = format!("MAE vs number of features ({} {})", cfg.run.granularity, cfg.run.family);
        out.write(dir.join("sweep.svg"), svg::line_chart(&title, "features", "MAE", &points))?;
    }
    write_manifest(
        &mut out,
        &dir,
        manifest("sweep", Some(&cfg), json!({ "inputs": loaded.hashes, "ks": ks }), started),
    )?;
    for (k, m) in &curve {
        out.lines.push(format!("k={k}: MAE {m:.4}"));
    }
    Ok(out)
}

/// Per-state top-k importance lists and, for local suites, the frequency
/// table over the two smallest requested k.
pub fn cmd_importance(suite: &Path, tops: &[usize], out_dir: Option<&Path>) -> Result<Outcome, CliError> {
    let started = Instant::now();
    let mut tops = tops.to_vec();
    tops.sort_unstable();
    tops.dedup();
    if tops.is_empty() || tops[0] == 0 {
        return Err(CliError::Config("--top values must be positive".into()));
    }
    let index = SuiteIndex::load(suite)?;
    let rel = index
        .importance
        .as_deref()
        .ok_or_else(|| CliError::Runtime("suite was trained without importance (reports.importance = false)".into()))?;
    let path = suite.join(rel);
    let table: ImportanceTable = serde_json::from_slice(&read(&path)?).map_err(|e| io_err(&path, e))?;
    let dir = out_dir.unwrap_or(suite).to_path_buf();
    let mut out = Outcome::default();
    for &k in &tops {
        out.write(dir.join(format!("importance_top{k}.csv")), table.top_k_csv(k))?;
    }
    let global_only = table.per_state.len() == 1 && table.per_state.contains_key(GLOBAL_KEY);
    let mut notice = None;
    if global_only {
        notice = Some("global suite: single ranking written, frequency table skipped".to_string());
    } else if tops.len() < 2 {
        notice = Some("frequency table needs two --top values; skipped".to_string());
    } else {
        let freq = top_k_frequency(&table, tops[0], tops[1])?;
        out.write(dir.join("frequency.csv"), freq.to_csv())?;
        out.lines.push(format!(
            "frequency over {} states: top{} / top{}",
            freq.n_states, freq.small_k, freq.large_k
        ));
    }
    if let Some(n) = &notice {
        eprintln!("{n}");
    }
    write_manifest(
        &mut out,
        &dir,
        manifest(
            "importance",
            None,
            json!({ "suite": suite, "tops": tops, "method": table.method, "notice": notice }),
            started,
        ),
    )?;
    Ok(out)
}
