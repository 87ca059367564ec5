//! Survey and case-count ingestion, the (state, date) panel join, the
//! chronological train/test split, and a synthetic panel generator with
//! known generating coefficients.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Read;

use chrono::{Days, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// The 35 symptom, behaviour and condition signals used as model inputs.
pub const CANONICAL_FEATURES: [&str; 35] = [
    "cmnty_cli",
    "avoid_contact_all_or_most_time",
    "runny_nose",
    "worked_outside_home",
    "hh_cough",
    "self_cough",
    "anosmia_ageusia",
    "hh_sore_throat",
    "none_of_above",
    "self_sore_throat",
    "multiple_symptoms",
    "nasal_congestion",
    "other",
    "high_blood_pressure",
    "hh_shortness_of_breath",
    "hh_difficulty_breathing",
    "hh_cli",
    "self_difficulty_breathing",
    "heart_disease",
    "persistent_pain_pressure_in_chest",
    "muscle_joint_aches",
    "hh_fever",
    "self_shortness_of_breath",
    "multiple_medical_conditions",
    "kidney_disease",
    "diarrhea",
    "chronic_lung_disease",
    "tiredness_or_exhaustion",
    "self_fever",
    "no_above_medical_conditions",
    "cancer",
    "asthma",
    "nausea_vomiting",
    "diabetes",
    "autoimmune_disorder",
];

/// Fifty states plus DC, used to name synthetic regions.
pub const STATE_CODES: [&str; 51] = [
    "ak", "al", "ar", "az", "ca", "co", "ct", "dc", "de", "fl", "ga", "hi", "ia", "id", "il", "in", "ks", "ky",
    "la", "ma", "md", "me", "mi", "mn", "mo", "ms", "mt", "nc", "nd", "ne", "nh", "nj", "nm", "nv", "ny", "oh",
    "ok", "or", "pa", "ri", "sc", "sd", "tn", "tx", "ut", "va", "vt", "wa", "wi", "wv", "wy",
];

const AGGREGATE_TOKENS: [&str; 7] = ["", "all", "overall", "total", "all-ages", "all_ages", "any"];

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Demographic {
    pub gender: String,
    pub age_bucket: String,
}

impl Demographic {
    pub fn is_aggregate(&self) -> bool {
        let agg = |s: &str| AGGREGATE_TOKENS.contains(&s.trim().to_ascii_lowercase().as_str());
        agg(&self.gender) && agg(&self.age_bucket)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveySnapshot {
    pub state: String,
    pub date: NaiveDate,
    /// Percent of respondents per signal; `None` marks an unparseable or
    /// empty cell.
    pub features: BTreeMap<String, Option<f64>>,
    /// `None` when the source carries no demographic columns.
    pub demographic: Option<Demographic>,
}

impl SurveySnapshot {
    pub fn is_aggregate(&self) -> bool {
        self.demographic.as_ref().map_or(true, Demographic::is_aggregate)
    }
}

/// Maps raw survey headers onto roles. Columns that are not a key role are
/// features; `renames` maps raw feature headers to canonical names and
/// `features`, when set, restricts which raw columns are read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnManifest {
    pub state: String,
    pub date: String,
    pub gender: String,
    pub age_bucket: String,
    #[serde(default)]
    pub renames: BTreeMap<String, String>,
    #[serde(default)]
    pub features: Option<Vec<String>>,
}

impl Default for ColumnManifest {
    fn default() -> Self {
        ColumnManifest {
            state: "state".into(),
            date: "date".into(),
            gender: "gender".into(),
            age_bucket: "age_bucket".into(),
            renames: BTreeMap::new(),
            features: None,
        }
    }
}

pub fn parse_state(raw: &str) -> Option<String> {
    let s = raw.trim().to_ascii_lowercase();
    (s.len() == 2 && s.bytes().all(|b| b.is_ascii_lowercase())).then_some(s)
}

pub fn parse_date(raw: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(raw.trim(), "%Y-%m-%d").ok()
}

fn header_index(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h.trim() == name)
}

/// Parses a survey CSV into one snapshot per data row.
pub fn parse_survey_table<R: Read>(raw: R, manifest: &ColumnManifest) -> Result<Vec<SurveySnapshot>> {
    read_survey(raw, manifest).map(|t| t.snapshots)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurveyTable {
    /// Canonical feature names in column order.
    pub feature_names: Vec<String>,
    pub snapshots: Vec<SurveySnapshot>,
}

pub fn read_survey<R: Read>(raw: R, manifest: &ColumnManifest) -> Result<SurveyTable> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(raw);
    let headers = reader.headers()?.clone();
    if headers.is_empty() || headers.iter().all(|h| h.trim().is_empty()) {
        return Err(Error::Format("survey table has no header row".into()));
    }
    let state_col = header_index(&headers, &manifest.state)
        .ok_or_else(|| Error::Format(format!("survey header lacks state column `{}`", manifest.state)))?;
    let date_col = header_index(&headers, &manifest.date)
        .ok_or_else(|| Error::Format(format!("survey header lacks date column `{}`", manifest.date)))?;
    let gender_col = header_index(&headers, &manifest.gender);
    let age_col = header_index(&headers, &manifest.age_bucket);

    let key_cols: BTreeSet<usize> = [Some(state_col), Some(date_col), gender_col, age_col]
        .into_iter()
        .flatten()
        .collect();
    let mut feature_cols: Vec<(usize, String, String)> = Vec::new();
    match &manifest.features {
        Some(wanted) => {
            for raw_name in wanted {
                let idx = header_index(&headers, raw_name)
                    .ok_or_else(|| Error::Format(format!("survey header lacks feature column `{raw_name}`")))?;
                let canonical = manifest.renames.get(raw_name).cloned().unwrap_or_else(|| raw_name.clone());
                feature_cols.push((idx, raw_name.clone(), canonical));
            }
        }
        None => {
            for (idx, h) in headers.iter().enumerate() {
                if key_cols.contains(&idx) {
                    continue;
                }
                let raw_name = h.trim().to_string();
                let canonical = manifest.renames.get(&raw_name).cloned().unwrap_or_else(|| raw_name.clone());
                feature_cols.push((idx, raw_name, canonical));
            }
        }
    }
    let mut seen_names = BTreeSet::new();
    for (_, _, canonical) in &feature_cols {
        if !seen_names.insert(canonical.clone()) {
            return Err(Error::Format(format!("feature `{canonical}` mapped from more than one column")));
        }
    }

    let mut out = Vec::new();
    let mut keys = BTreeSet::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row = i + 1;
        let cell = |idx: usize| record.get(idx).unwrap_or("");
        let state = parse_state(cell(state_col)).ok_or_else(|| Error::Validation {
            row,
            column: manifest.state.clone(),
            message: format!("`{}` is not a two-letter region code", cell(state_col)),
        })?;
        let date = parse_date(cell(date_col)).ok_or_else(|| Error::Validation {
            row,
            column: manifest.date.clone(),
            message: format!("`{}` is not a YYYY-MM-DD date", cell(date_col)),
        })?;
        let demographic = if gender_col.is_some() || age_col.is_some() {
            Some(Demographic {
                gender: gender_col.map(|c| cell(c).trim().to_string()).unwrap_or_default(),
                age_bucket: age_col.map(|c| cell(c).trim().to_string()).unwrap_or_default(),
            })
        } else {
            None
        };
        let mut features = BTreeMap::new();
        for (idx, raw_name, canonical) in &feature_cols {
            let value = cell(*idx).trim().parse::<f64>().ok().filter(|v| v.is_finite());
            if let Some(v) = value {
                if !(0.0..=100.0).contains(&v) {
                    return Err(Error::Validation {
                        row,
                        column: raw_name.clone(),
                        message: format!("percentage {v} outside [0, 100]"),
                    });
                }
            }
            features.insert(canonical.clone(), value);
        }
        if !keys.insert((state.clone(), date, demographic.clone())) {
            return Err(Error::Validation {
                row,
                column: manifest.state.clone(),
                message: format!("duplicate (state, date, demographic) key for {state} {date}"),
            });
        }
        out.push(SurveySnapshot {
            state,
            date,
            features,
            demographic,
        });
    }
    Ok(SurveyTable {
        feature_names: feature_cols.into_iter().map(|(_, _, c)| c).collect(),
        snapshots: out,
    })
}

/// Keeps only all-genders/all-ages rows; returns (kept, dropped count).
pub fn filter_aggregate_demographics(snapshots: Vec<SurveySnapshot>) -> (Vec<SurveySnapshot>, usize) {
    let before = snapshots.len();
    let kept: Vec<_> = snapshots.into_iter().filter(SurveySnapshot::is_aggregate).collect();
    let dropped = before - kept.len();
    (kept, dropped)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CumulativeCaseSeries {
    pub state: String,
    /// Strictly increasing dates with cumulative confirmed counts.
    pub points: Vec<(NaiveDate, u64)>,
}

impl CumulativeCaseSeries {
    pub fn new(state: String, points: Vec<(NaiveDate, u64)>) -> Result<Self> {
        if let Some(w) = points.windows(2).find(|w| w[0].0 >= w[1].0) {
            return Err(Error::Invalid(format!(
                "case series for {state}: dates not strictly increasing at {}",
                w[1].0
            )));
        }
        Ok(CumulativeCaseSeries { state, points })
    }
}

/// Parses a `state,date,cumulative_cases` CSV into one series per state,
/// ordered by state.
pub fn parse_cases_table<R: Read>(raw: R) -> Result<Vec<CumulativeCaseSeries>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(raw);
    let headers = reader.headers()?.clone();
    if headers.is_empty() || headers.iter().all(|h| h.trim().is_empty()) {
        return Err(Error::Format("cases table has no header row".into()));
    }
    let col = |name: &str| {
        header_index(&headers, name).ok_or_else(|| Error::Format(format!("cases header lacks `{name}` column")))
    };
    let (state_col, date_col, cum_col) = (col("state")?, col("date")?, col("cumulative_cases")?);
    let mut by_state: BTreeMap<String, Vec<(NaiveDate, u64)>> = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row = i + 1;
        let cell = |idx: usize| record.get(idx).unwrap_or("");
        let state = parse_state(cell(state_col)).ok_or_else(|| Error::Validation {
            row,
            column: "state".into(),
            message: format!("`{}` is not a two-letter region code", cell(state_col)),
        })?;
        let date = parse_date(cell(date_col)).ok_or_else(|| Error::Validation {
            row,
            column: "date".into(),
            message: format!("`{}` is not a YYYY-MM-DD date", cell(date_col)),
        })?;
        let cases = cell(cum_col).trim().parse::<u64>().map_err(|_| Error::Validation {
            row,
            column: "cumulative_cases".into(),
            message: format!("`{}` is not a non-negative integer", cell(cum_col)),
        })?;
        by_state.entry(state).or_default().push((date, cases));
    }
    by_state
        .into_iter()
        .map(|(state, mut points)| {
            points.sort_by_key(|p| p.0);
            CumulativeCaseSeries::new(state, points)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyCaseRecord {
    pub state: String,
    pub date: NaiveDate,
    pub cases: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DailyCases {
    pub records: Vec<DailyCaseRecord>,
    /// Days whose cumulative count decreased and were clamped to zero.
    pub clamped: usize,
}

/// First differences of a cumulative series. The first date has no
/// predecessor and is dropped; negative differences become 0.
pub fn cumulative_to_daily(series: &CumulativeCaseSeries) -> DailyCases {
    let mut clamped = 0;
    let records = series
        .points
        .windows(2)
        .map(|w| {
            let diff = w[1].1 as i128 - w[0].1 as i128;
            if diff < 0 {
                clamped += 1;
            }
            DailyCaseRecord {
                state: series.state.clone(),
                date: w[1].0,
                cases: diff.max(0) as f64,
            }
        })
        .collect();
    DailyCases { records, clamped }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelRow {
    pub state: String,
    pub date: NaiveDate,
    pub features: Vec<f64>,
    pub target: f64,
}

/// (state, date) rows of feature percentages and the daily-case target,
/// kept sorted by (state, date).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelDataset {
    feature_names: Vec<String>,
    rows: Vec<PanelRow>,
}

impl PanelDataset {
    pub fn new(feature_names: Vec<String>, mut rows: Vec<PanelRow>) -> Result<Self> {
        let mut names = BTreeSet::new();
        for n in &feature_names {
            if !names.insert(n) {
                return Err(Error::Invalid(format!("duplicate feature name `{n}`")));
            }
        }
        for r in &rows {
            if r.features.len() != feature_names.len() {
                return Err(Error::Shape(format!(
                    "row ({}, {}) has {} features, expected {}",
                    r.state,
                    r.date,
                    r.features.len(),
                    feature_names.len()
                )));
            }
        }
        rows.sort_by(|a, b| (&a.state, a.date).cmp(&(&b.state, b.date)));
        if let Some(w) = rows.windows(2).find(|w| w[0].state == w[1].state && w[0].date == w[1].date) {
            return Err(Error::Invalid(format!("duplicate panel key ({}, {})", w[0].state, w[0].date)));
        }
        Ok(PanelDataset { feature_names, rows })
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn rows(&self) -> &[PanelRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn states(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.rows.iter().map(|r| &r.state).collect();
        set.into_iter().cloned().collect()
    }

    pub fn dates(&self) -> Vec<NaiveDate> {
        let set: BTreeSet<NaiveDate> = self.rows.iter().map(|r| r.date).collect();
        set.into_iter().collect()
    }

    pub fn date_range(&self) -> Option<(NaiveDate, NaiveDate)> {
        let dates = self.dates();
        Some((*dates.first()?, *dates.last()?))
    }

    pub fn features_matrix(&self) -> Matrix {
        let data = self.rows.iter().flat_map(|r| r.features.iter().copied()).collect();
        Matrix::new(self.rows.len(), self.feature_names.len(), data).expect("rows validated at construction")
    }

    pub fn targets(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.target).collect()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r.features[j]).collect()
    }

    /// Rows satisfying `keep`, same feature set.
    pub fn filter(&self, keep: impl Fn(&PanelRow) -> bool) -> PanelDataset {
        PanelDataset {
            feature_names: self.feature_names.clone(),
            rows: self.rows.iter().filter(|r| keep(r)).cloned().collect(),
        }
    }

    pub fn for_state(&self, state: &str) -> PanelDataset {
        self.filter(|r| r.state == state)
    }

    /// Projection onto the listed columns, in that order.
    pub fn project(&self, columns: &[usize]) -> Result<PanelDataset> {
        if let Some(&bad) = columns.iter().find(|&&c| c >= self.n_features()) {
            return Err(Error::Bounds(format!("column {bad} out of range for {} features", self.n_features())));
        }
        let feature_names = columns.iter().map(|&c| self.feature_names[c].clone()).collect();
        let rows = self
            .rows
            .iter()
            .map(|r| PanelRow {
                state: r.state.clone(),
                date: r.date,
                features: columns.iter().map(|&c| r.features[c]).collect(),
                target: r.target,
            })
            .collect();
        PanelDataset::new(feature_names, rows)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JoinOutcome {
    pub panel: PanelDataset,
    pub dropped_missing_target: usize,
    pub dropped_missing_feature: usize,
}

/// Inner join of survey snapshots and daily cases on (state, date).
pub fn join_panel(
    snapshots: &[SurveySnapshot],
    daily: &[DailyCaseRecord],
    feature_names: &[String],
) -> Result<JoinOutcome> {
    if feature_names.is_empty() {
        return Err(Error::Config("feature name list is empty".into()));
    }
    let targets: HashMap<(&str, NaiveDate), f64> = daily.iter().map(|d| ((d.state.as_str(), d.date), d.cases)).collect();
    let mut rows = Vec::new();
    let (mut no_target, mut no_feature) = (0, 0);
    for s in snapshots {
        let Some(&target) = targets.get(&(s.state.as_str(), s.date)) else {
            no_target += 1;
            continue;
        };
        let features: Option<Vec<f64>> = feature_names.iter().map(|n| s.features.get(n).copied().flatten()).collect();
        match features {
            Some(features) => rows.push(PanelRow {
                state: s.state.clone(),
                date: s.date,
                features,
                target,
            }),
            None => {
                log::debug!("dropping ({}, {}): missing a named feature", s.state, s.date);
                no_feature += 1;
            }
        }
    }
    Ok(JoinOutcome {
        panel: PanelDataset::new(feature_names.to_vec(), rows)?,
        dropped_missing_target: no_target,
        dropped_missing_feature: no_feature,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DateSplit {
    pub train: PanelDataset,
    pub test: PanelDataset,
    /// Last training date.
    pub boundary: NaiveDate,
}

/// The first `floor(train_fraction * |dates|)` distinct dates (at least one)
/// train; the remainder test. The boundary is shared by every state.
pub fn split_by_date(ds: &PanelDataset, train_fraction: f64) -> Result<DateSplit> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!("train_fraction {train_fraction} outside (0, 1)")));
    }
    let dates = ds.dates();
    if dates.len() < 2 {
        return Err(Error::Split(format!("need at least 2 distinct dates, got {}", dates.len())));
    }
    let n_train = ((train_fraction * dates.len() as f64).floor() as usize).max(1);
    if n_train >= dates.len() {
        return Err(Error::Split(format!(
            "train fraction {train_fraction} leaves no test dates out of {}",
            dates.len()
        )));
    }
    let boundary = dates[n_train - 1];
    Ok(DateSplit {
        train: ds.filter(|r| r.date <= boundary),
        test: ds.filter(|r| r.date > boundary),
        boundary,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoefficientMode {
    /// One coefficient vector shared by every state.
    Shared,
    /// Independently drawn coefficients per state.
    PerState,
    /// Explicit state x feature matrix.
    Explicit(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_states: usize,
    pub n_dates: usize,
    pub n_features: usize,
    pub n_informative: usize,
    pub coefficients: CoefficientMode,
    pub noise_sd: f64,
    pub seed: u64,
    pub start_date: NaiveDate,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_states: 5,
            n_dates: 60,
            n_features: 35,
            n_informative: 5,
            coefficients: CoefficientMode::Shared,
            noise_sd: 5.0,
            seed: 0,
            start_date: NaiveDate::from_ymd_opt(2020, 4, 6).expect("valid date"),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_states == 0 || self.n_states > STATE_CODES.len() {
            return Err(Error::Config(format!("n_states must be in 1..={}", STATE_CODES.len())));
        }
        if self.n_dates == 0 || self.n_features == 0 {
            return Err(Error::Config("n_dates and n_features must be positive".into()));
        }
        if self.n_informative > self.n_features {
            return Err(Error::Config(format!(
                "n_informative ({}) exceeds n_features ({})",
                self.n_informative, self.n_features
            )));
        }
        if !(self.noise_sd >= 0.0) || !self.noise_sd.is_finite() {
            return Err(Error::Config(format!("noise_sd must be finite and >= 0, got {}", self.noise_sd)));
        }
        if let CoefficientMode::Explicit(m) = &self.coefficients {
            if m.len() != self.n_states || m.iter().any(|r| r.len() != self.n_features) {
                return Err(Error::Config("explicit coefficient matrix must be n_states x n_features".into()));
            }
        }
        Ok(())
    }

    pub fn feature_names(&self) -> Vec<String> {
        if self.n_features <= CANONICAL_FEATURES.len() {
            CANONICAL_FEATURES[..self.n_features].iter().map(|s| s.to_string()).collect()
        } else {
            (0..self.n_features).map(|j| format!("feature_{j:03}")).collect()
        }
    }
}

/// Generating parameters of a synthetic panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub feature_names: Vec<String>,
    pub states: Vec<String>,
    pub intercepts: Vec<f64>,
    /// state x feature
    pub coefficients: Vec<Vec<f64>>,
    pub noise_sd: f64,
}

fn draw_coefficients(rng: &mut ChaCha8Rng, n_features: usize, n_informative: usize) -> Vec<f64> {
    (0..n_features)
        .map(|j| {
            if j < n_informative {
                let magnitude = rng.gen_range(0.5..1.5);
                if rng.gen_bool(0.5) {
                    magnitude
                } else {
                    -magnitude
                }
            } else {
                0.0
            }
        })
        .collect()
}

/// Panel whose target is `max(0, intercept_s + coef_s . x + N(0, noise_sd))`
/// with features uniform on [0, 100). Shared mode shares the intercept too.
///
/// Intercepts are `100 * sum(|negative coefficients|)` plus a U(10, 60)
/// offset, so the noise-free linear part is at least 10 everywhere.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<(PanelDataset, GroundTruth)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let states: Vec<String> = STATE_CODES[..cfg.n_states].iter().map(|s| s.to_string()).collect();
    let coefficients: Vec<Vec<f64>> = match &cfg.coefficients {
        CoefficientMode::Shared => {
            let shared = draw_coefficients(&mut rng, cfg.n_features, cfg.n_informative);
            vec![shared; cfg.n_states]
        }
        CoefficientMode::PerState => (0..cfg.n_states)
            .map(|_| draw_coefficients(&mut rng, cfg.n_features, cfg.n_informative))
            .collect(),
        CoefficientMode::Explicit(m) => m
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .map(|(j, &c)| if j < cfg.n_informative { c } else { 0.0 })
                    .collect()
            })
            .collect(),
    };
    let mut intercept = |c: &[f64]| {
        let floor: f64 = c.iter().filter(|v| **v < 0.0).map(|v| -100.0 * v).sum();
        floor + rng.gen_range(10.0..60.0)
    };
    let intercepts: Vec<f64> = match cfg.coefficients {
        CoefficientMode::Shared => vec![intercept(&coefficients[0]); cfg.n_states],
        _ => coefficients.iter().map(|c| intercept(c)).collect(),
    };
    let noise = Normal::new(0.0, cfg.noise_sd.max(f64::MIN_POSITIVE)).expect("valid normal");

    let mut rows = Vec::with_capacity(cfg.n_states * cfg.n_dates);
    for (s, state) in states.iter().enumerate() {
        for d in 0..cfg.n_dates {
            let date = cfg
                .start_date
                .checked_add_days(Days::new(d as u64))
                .ok_or_else(|| Error::Config("date range overflows".into()))?;
            let features: Vec<f64> = (0..cfg.n_features).map(|_| rng.gen_range(0.0..100.0)).collect();
            let linear: f64 = intercepts[s]
                + coefficients[s]
                    .iter()
                    .zip(&features)
                    .map(|(c, x)| c * x)
                    .sum::<f64>();
            let eps = if cfg.noise_sd > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            rows.push(PanelRow {
                state: state.clone(),
                date,
                features,
                target: (linear + eps).max(0.0),
            });
        }
    }
    let names = cfg.feature_names();
    let truth = GroundTruth {
        feature_names: names.clone(),
        states,
        intercepts,
        coefficients,
        noise_sd: cfg.noise_sd,
    };
    Ok((PanelDataset::new(names, rows)?, truth))
}

/// Survey CSV (`state,date,<features...>`) for a panel.
pub fn survey_csv(panel: &PanelDataset) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["state".to_string(), "date".to_string()];
    header.extend(panel.feature_names().iter().cloned());
    w.write_record(&header)?;
    for r in panel.rows() {
        let mut rec = vec![r.state.clone(), r.date.to_string()];
        rec.extend(r.features.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.into_error()))?).map_err(|e| Error::Format(e.to_string()))
}

/// Cases CSV (`state,date,cumulative_cases`) whose first differences are the
/// panel targets rounded to integers. Each state gets an anchor day (count 0)
/// before its first panel date.
pub fn cases_csv(panel: &PanelDataset) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["state", "date", "cumulative_cases"])?;
    for state in panel.states() {
        let rows: Vec<&PanelRow> = panel.rows().iter().filter(|r| r.state == state).collect();
        let Some(first) = rows.first() else { continue };
        let anchor = first
            .date
            .checked_sub_days(Days::new(1))
            .ok_or_else(|| Error::Invalid("date underflow".into()))?;
        w.write_record([state.as_str(), &anchor.to_string(), "0"])?;
        let mut cumulative: u64 = 0;
        for r in rows {
            cumulative += r.target.round().max(0.0) as u64;
            w.write_record([state.as_str(), &r.date.to_string(), &cumulative.to_string()])?;
        }
    }
    String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.into_error()))?).map_err(|e| Error::Format(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub survey_rows: usize,
    pub dropped_demographic: usize,
    pub clamped_days: usize,
    pub dropped_missing_target: usize,
    pub dropped_missing_feature: usize,
    pub panel_rows: usize,
    pub first_date: Option<NaiveDate>,
    pub last_date: Option<NaiveDate>,
}

/// Full ingestion: parse both tables, filter demographics, difference the
/// cases and join. `feature_names = None` uses every survey feature column in
/// header order.
pub fn load_panel<R1: Read, R2: Read>(
    survey: R1,
    cases: R2,
    manifest: &ColumnManifest,
    feature_names: Option<&[String]>,
) -> Result<(PanelDataset, IngestSummary)> {
    let table = read_survey(survey, manifest)?;
    let survey_rows = table.snapshots.len();
    let names: Vec<String> = feature_names.map_or(table.feature_names, <[String]>::to_vec);
    let snapshots = table.snapshots;
    let (snapshots, dropped_demographic) = filter_aggregate_demographics(snapshots);
    let series = parse_cases_table(cases)?;
    let mut daily = Vec::new();
    let mut clamped = 0;
    for s in &series {
        let d = cumulative_to_daily(s);
        clamped += d.clamped;
        daily.extend(d.records);
    }
    if clamped > 0 {
        log::warn!("{clamped} day(s) with decreasing cumulative counts clamped to 0");
    }
    let joined = join_panel(&snapshots, &daily, &names)?;
    let range = joined.panel.date_range();
    let summary = IngestSummary {
        survey_rows,
        dropped_demographic,
        clamped_days: clamped,
        dropped_missing_target: joined.dropped_missing_target,
        dropped_missing_feature: joined.dropped_missing_feature,
        panel_rows: joined.panel.len(),
        first_date: range.map(|r| r.0),
        last_date: range.map(|r| r.1),
    };
    Ok((joined.panel, summary))
}
