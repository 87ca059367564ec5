//! Global and per-state training suites, repeated seeded runs, confidence
//! intervals and the feature-count sweep.

use std::collections::BTreeMap;
use std::fmt;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::featsel::{rank_features, select_top_k, FeatureRanking};
use crate::ingest::{split_by_date, PanelDataset};
use crate::metrics::{
    mae, nmae, permutation_importance, ImportanceMethod, ImportanceTable, PredictionRow, PredictionSet,
    DEFAULT_PERMUTATION_REPEATS,
};
use crate::model::{fit_model, ModelFamily, ModelParams, TrainedModel};

/// Key under which the single pooled model is stored.
pub const GLOBAL_KEY: &str = "global";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Global,
    Local,
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Granularity::Global => "global",
            Granularity::Local => "local",
        })
    }
}

/// Number of ranked features to keep: every feature, or the top `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "FeatureCountRepr", into = "FeatureCountRepr")]
pub enum FeatureCount {
    All,
    Top(usize),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum FeatureCountRepr {
    Count(usize),
    Word(String),
}

impl TryFrom<FeatureCountRepr> for FeatureCount {
    type Error = String;

    fn try_from(r: FeatureCountRepr) -> std::result::Result<Self, String> {
        match r {
            FeatureCountRepr::Count(k) => Ok(FeatureCount::Top(k)),
            FeatureCountRepr::Word(w) if w.eq_ignore_ascii_case("all") => Ok(FeatureCount::All),
            FeatureCountRepr::Word(w) => Err(format!("feature count must be an integer or \"all\", got `{w}`")),
        }
    }
}

impl From<FeatureCount> for FeatureCountRepr {
    fn from(c: FeatureCount) -> Self {
        match c {
            FeatureCount::All => FeatureCountRepr::Word("all".into()),
            FeatureCount::Top(k) => FeatureCountRepr::Count(k),
        }
    }
}

impl FeatureCount {
    pub fn resolve(&self, n_features: usize) -> Result<usize> {
        match *self {
            FeatureCount::All => Ok(n_features),
            FeatureCount::Top(k) if k >= 1 && k <= n_features => Ok(k),
            FeatureCount::Top(k) => Err(Error::Bounds(format!("feature_k = {k} outside 1..={n_features}"))),
        }
    }
}

impl std::str::FromStr for FeatureCount {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.trim().eq_ignore_ascii_case("all") {
            return Ok(FeatureCount::All);
        }
        s.trim()
            .parse()
            .map(FeatureCount::Top)
            .map_err(|_| Error::Config(format!("feature count must be an integer or `all`, got `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub family: ModelFamily,
    pub granularity: Granularity,
    pub feature_k: FeatureCount,
    pub train_fraction: f64,
    pub seeds: Vec<u64>,
    /// States with fewer training rows are skipped in local runs.
    pub min_train_rows: usize,
    pub clamp_nonneg: bool,
    /// Average the sweep over every seed instead of the first only.
    pub sweep_all_seeds: bool,
    pub compute_importance: bool,
    pub permutation_repeats: usize,
    pub params: ModelParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            family: ModelFamily::Xgb,
            granularity: Granularity::Global,
            feature_k: FeatureCount::All,
            train_fraction: 0.8,
            seeds: vec![0],
            min_train_rows: 10,
            clamp_nonneg: false,
            sweep_all_seeds: false,
            compute_importance: true,
            permutation_repeats: DEFAULT_PERMUTATION_REPEATS,
            params: ModelParams::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self, n_features: usize) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seed list is empty".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!("train_fraction {} outside (0, 1)", self.train_fraction)));
        }
        if self.permutation_repeats == 0 {
            return Err(Error::Config("permutation_repeats must be >= 1".into()));
        }
        self.feature_k.resolve(n_features)?;
        self.params.tree.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub predictions: PredictionSet,
    pub mae: f64,
    pub nmae: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub config: RunConfig,
    /// Last training date, shared by every state.
    pub boundary: NaiveDate,
    pub per_seed: Vec<SeedRun>,
    pub skipped_states: Vec<String>,
    /// Models from the first seed, keyed by state (or [`GLOBAL_KEY`]).
    pub models: BTreeMap<String, TrainedModel>,
    pub rankings: BTreeMap<String, FeatureRanking>,
    /// Importance from the first seed's models, when enabled.
    pub importance: Option<ImportanceTable>,
}

impl SuiteResult {
    pub fn maes(&self) -> Vec<f64> {
        self.per_seed.iter().map(|r| r.mae).collect()
    }

    /// Student-t interval of the per-seed MAEs; `None` with fewer than two seeds.
    pub fn mae_interval(&self, level: f64) -> Option<ConfidenceInterval> {
        confidence_interval(&self.maes(), level).ok()
    }
}

struct Unit {
    key: String,
    train: PanelDataset,
    test: PanelDataset,
    ranking: FeatureRanking,
}

struct Prepared {
    boundary: NaiveDate,
    units: Vec<Unit>,
    skipped: Vec<String>,
}

fn prepare(ds: &PanelDataset, cfg: &RunConfig) -> Result<Prepared> {
    cfg.validate(ds.n_features())?;
    let split = split_by_date(ds, cfg.train_fraction)?;
    let mut units = Vec::new();
    let mut skipped = Vec::new();
    match cfg.granularity {
        Granularity::Global => {
            let ranking = rank_features(&split.train)?;
            units.push(Unit {
                key: GLOBAL_KEY.into(),
                train: split.train,
                test: split.test,
                ranking,
            });
        }
        Granularity::Local => {
            for state in ds.states() {
                let train = split.train.for_state(&state);
                if train.len() < cfg.min_train_rows.max(3) {
                    log::warn!(
                        "skipping state {state}: {} training rows (< {})",
                        train.len(),
                        cfg.min_train_rows.max(3)
                    );
                    skipped.push(state);
                    continue;
                }
                let ranking = rank_features(&train)?;
                units.push(Unit {
                    test: split.test.for_state(&state),
                    key: state,
                    train,
                    ranking,
                });
            }
            if units.is_empty() {
                return Err(Error::Invalid("every state was skipped for lack of training rows".into()));
            }
        }
    }
    Ok(Prepared {
        boundary: split.boundary,
        units,
        skipped,
    })
}

struct UnitRun {
    model: TrainedModel,
    rows: Vec<PredictionRow>,
    test: PanelDataset,
}

fn run_unit(unit: &Unit, k: usize, cfg: &RunConfig, seed: u64) -> Result<UnitRun> {
    let train = select_top_k(&unit.train, &unit.ranking, k)?;
    let test = select_top_k(&unit.test, &unit.ranking, k)?;
    let model = fit_model(
        cfg.family,
        &train.features_matrix(),
        &train.targets(),
        train.feature_names(),
        &cfg.params,
        seed,
    )
    .map_err(|e| annotate(e, &unit.key))?;
    let predicted = if test.is_empty() {
        Vec::new()
    } else {
        model.predict(&test.features_matrix())?
    };
    let rows = test
        .rows()
        .iter()
        .zip(predicted)
        .map(|(r, p)| PredictionRow {
            state: r.state.clone(),
            date: r.date,
            predicted: if cfg.clamp_nonneg { p.max(0.0) } else { p },
            actual: r.target,
        })
        .collect();
    Ok(UnitRun { model, rows, test })
}

fn annotate(e: Error, key: &str) -> Error {
    match e {
        Error::Neural(n) => Error::Invalid(format!("{key}: {n}")),
        other => other,
    }
}

fn unit_importance(unit_run: &UnitRun, train: &PanelDataset, cfg: &RunConfig, seed: u64) -> Result<(ImportanceMethod, Vec<(String, f64)>)> {
    if let Some(gains) = unit_run.model.gain_importance() {
        return Ok((ImportanceMethod::Gain, gains.into_iter().collect()));
    }
    let ds = if unit_run.test.is_empty() { train } else { &unit_run.test };
    let scores = permutation_importance(&unit_run.model, ds, cfg.permutation_repeats, seed)?;
    Ok((ImportanceMethod::Permutation, scores))
}

fn execute(ds: &PanelDataset, cfg: &RunConfig) -> Result<SuiteResult> {
    let prep = prepare(ds, cfg)?;
    let k = cfg.feature_k.resolve(ds.n_features())?;
    let jobs: Vec<(usize, usize)> = (0..prep.units.len())
        .flat_map(|u| (0..cfg.seeds.len()).map(move |s| (u, s)))
        .collect();
    let mut results: Vec<Option<UnitRun>> = jobs
        .par_iter()
        .map(|&(u, s)| run_unit(&prep.units[u], k, cfg, cfg.seeds[s]).map(Some))
        .collect::<Result<Vec<_>>>()?;

    let n_seeds = cfg.seeds.len();
    let mut per_seed = Vec::with_capacity(n_seeds);
    for (s, &seed) in cfg.seeds.iter().enumerate() {
        let mut rows = Vec::new();
        for u in 0..prep.units.len() {
            rows.extend(results[u * n_seeds + s].as_ref().expect("filled").rows.iter().cloned());
        }
        let predictions = PredictionSet::new(rows);
        per_seed.push(SeedRun {
            seed,
            mae: mae(&predictions)?,
            nmae: nmae(&predictions).ok(),
            predictions,
        });
    }

    let first_seed = cfg.seeds[0];
    let importance = if cfg.compute_importance {
        let scored = prep
            .units
            .par_iter()
            .enumerate()
            .map(|(u, unit)| {
                let run = results[u * n_seeds].as_ref().expect("filled");
                let train = select_top_k(&unit.train, &unit.ranking, k)?;
                unit_importance(run, &train, cfg, first_seed).map(|(m, s)| (unit.key.clone(), m, s))
            })
            .collect::<Result<Vec<_>>>()?;
        let method = scored.first().map_or(ImportanceMethod::Gain, |s| s.1);
        Some(ImportanceTable::new(
            method,
            scored.into_iter().map(|(key, _, s)| (key, s)).collect(),
        ))
    } else {
        None
    };

    let mut models = BTreeMap::new();
    let mut rankings = BTreeMap::new();
    for (u, unit) in prep.units.into_iter().enumerate() {
        let run = results[u * n_seeds].take().expect("filled");
        models.insert(unit.key.clone(), run.model);
        rankings.insert(unit.key, unit.ranking);
    }
    Ok(SuiteResult {
        config: cfg.clone(),
        boundary: prep.boundary,
        per_seed,
        skipped_states: prep.skipped,
        models,
        rankings,
        importance,
    })
}

/// One model on the pooled training rows of every state, evaluated on the
/// full test split, once per seed.
pub fn run_global(ds: &PanelDataset, cfg: &RunConfig) -> Result<SuiteResult> {
    execute(
        ds,
        &RunConfig {
            granularity: Granularity::Global,
            ..cfg.clone()
        },
    )
}

/// One model per state (own feature ranking, own training rows), with the
/// test predictions of all states pooled per seed.
pub fn run_local(ds: &PanelDataset, cfg: &RunConfig) -> Result<SuiteResult> {
    execute(
        ds,
        &RunConfig {
            granularity: Granularity::Local,
            ..cfg.clone()
        },
    )
}

pub fn run_suite(ds: &PanelDataset, cfg: &RunConfig) -> Result<SuiteResult> {
    execute(ds, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub low: f64,
    pub high: f64,
    pub mean: f64,
    pub level: f64,
}

/// `mean +/- t_{(1+level)/2, n-1} * s / sqrt(n)` with `s` the sample
/// standard deviation.
pub fn confidence_interval(values: &[f64], level: f64) -> Result<ConfidenceInterval> {
    if values.len() < 2 {
        return Err(Error::SampleSize {
            needed: 2,
            got: values.len(),
        });
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Config(format!("confidence level {level} outside (0, 1)")));
    }
    let n = values.len() as f64;
    let mean = if values.iter().all(|v| *v == values[0]) {
        values[0]
    } else {
        values.iter().sum::<f64>() / n
    };
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).map_err(|e| Error::Invalid(e.to_string()))?;
    let half = dist.inverse_cdf(0.5 + level / 2.0) * var.sqrt() / n.sqrt();
    Ok(ConfidenceInterval {
        low: mean - half,
        high: mean + half,
        mean,
        level,
    })
}

/// MAE at each feature count, ranking once per unit on the training split.
/// Uses the first seed unless `sweep_all_seeds` is set, in which case the
/// per-seed MAEs are averaged.
pub fn feature_sweep(ds: &PanelDataset, cfg: &RunConfig, ks: &[usize]) -> Result<Vec<(usize, f64)>> {
    if ks.is_empty() {
        return Err(Error::Config("sweep needs at least one k".into()));
    }
    if ks.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("sweep ks must be strictly ascending".into()));
    }
    for &k in ks {
        FeatureCount::Top(k).resolve(ds.n_features())?;
    }
    let prep = prepare(ds, cfg)?;
    let seeds: Vec<u64> = if cfg.sweep_all_seeds {
        cfg.seeds.clone()
    } else {
        vec![cfg.seeds[0]]
    };
    ks.par_iter()
        .map(|&k| {
            let mut total = 0.0;
            for &seed in &seeds {
                let mut rows = Vec::new();
                for unit in &prep.units {
                    rows.extend(run_unit(unit, k, cfg, seed)?.rows);
                }
                total += mae(&PredictionSet::new(rows))?;
            }
            Ok((k, total / seeds.len() as f64))
        })
        .collect()
}

/// Formula and default choices in force for a run, for manifests.
pub fn protocol_notes(cfg: &RunConfig) -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    let mut put = |k: &str, v: String| {
        m.insert(k.to_string(), v);
    };
    put("split", format!("first floor({} * distinct dates) dates train; boundary shared by all states", cfg.train_fraction));
    put("feature_ranking", "univariate F statistic r^2/(1-r^2)*(n-2) on training rows; ties by name".into());
    put(
        "local_ranking",
        "each state ranks features on its own training rows".into(),
    );
    put("min_train_rows", cfg.min_train_rows.to_string());
    put("confidence_interval", "mean +/- t_{0.975,n-1} * s/sqrt(n), s = sample standard deviation".into());
    put("ols_ridge", crate::tabmodels::RIDGE_EPS.to_string());
    put("tree_thresholds", "midpoints between consecutive distinct values; x < threshold routes left".into());
    put("tree_ties", "lowest feature index, then lowest threshold".into());
    put("boosting_subsampling", "none".into());
    put("second_order_gain", "0.5*[GL^2/(HL+lambda) + GR^2/(HR+lambda) - G^2/(H+lambda)] - gamma".into());
    put("prediction_clamp", if cfg.clamp_nonneg { "max(0, p)" } else { "none" }.into());
    put(
        "importance",
        format!(
            "split gain for tree families, else permutation ({} repeats) on test rows",
            cfg.permutation_repeats
        ),
    );
    put("nmae_zero_denominator", "reported as empty".into());
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{generate_synthetic, CoefficientMode, SynthConfig};

    fn panel(n_states: usize, seed: u64) -> PanelDataset {
        generate_synthetic(&SynthConfig {
            n_states,
            n_dates: 40,
            n_features: 6,
            n_informative: 3,
            coefficients: CoefficientMode::PerState,
            noise_sd: 2.0,
            seed,
            ..SynthConfig::default()
        })
        .unwrap()
        .0
    }

    fn quick(family: ModelFamily) -> RunConfig {
        let mut cfg = RunConfig {
            family,
            seeds: vec![1, 2],
            ..RunConfig::default()
        };
        cfg.params.tree.n_rounds = 20;
        cfg.params.train.epochs = 5;
        cfg.params.mlp_hidden = vec![8];
        cfg
    }

    #[test]
    fn ci_matches_formula_oracle() {
        let ci = confidence_interval(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.95).unwrap();
        assert!((ci.low - 1.036_756_838_522_439_3).abs() < 1e-9);
        assert!((ci.high - 4.963_243_161_477_560_5).abs() < 1e-9);
        assert_eq!(ci.mean, 3.0);
    }

    #[test]
    fn ci_degenerate_and_errors() {
        let ci = confidence_interval(&[98.84; 20], 0.95).unwrap();
        assert_eq!((ci.low, ci.high, ci.mean), (98.84, 98.84, 98.84));
        assert!(matches!(confidence_interval(&[1.0], 0.95), Err(Error::SampleSize { .. })));
    }

    #[test]
    fn global_and_local_share_test_keys() {
        let ds = panel(3, 4);
        let cfg = quick(ModelFamily::Gbdt);
        let g = run_global(&ds, &cfg).unwrap();
        let l = run_local(&ds, &cfg).unwrap();
        assert_eq!(g.boundary, l.boundary);
        assert_eq!(g.per_seed[0].predictions.keys(), l.per_seed[0].predictions.keys());
        assert_eq!(l.models.len(), 3);
        assert_eq!(g.models.len(), 1);
        assert_eq!(g.per_seed.len(), 2);
    }

    #[test]
    fn single_state_granularities_coincide() {
        let ds = panel(1, 2);
        let cfg = quick(ModelFamily::Mlp);
        let g = run_global(&ds, &cfg).unwrap();
        let l = run_local(&ds, &cfg).unwrap();
        assert_eq!(g.per_seed, l.per_seed);
    }

    #[test]
    fn reruns_are_identical() {
        let ds = panel(2, 8);
        let cfg = quick(ModelFamily::Xgb);
        assert_eq!(run_local(&ds, &cfg).unwrap(), run_local(&ds, &cfg).unwrap());
    }

    #[test]
    fn sparse_states_are_skipped() {
        let ds = panel(3, 5);
        let first = ds.states()[0].clone();
        let dates = ds.dates();
        let thin = ds.filter(|r| r.state != first || r.date >= dates[30]);
        let cfg = quick(ModelFamily::Lr);
        let l = run_local(&thin, &cfg).unwrap();
        assert_eq!(l.skipped_states, vec![first.clone()]);
        assert!(l.per_seed[0].predictions.rows.iter().all(|r| r.state != first));
    }

    #[test]
    fn sweep_single_all_matches_plain_run() {
        let ds = panel(2, 3);
        let mut cfg = quick(ModelFamily::Dt);
        cfg.seeds = vec![9];
        let plain = run_global(&ds, &cfg).unwrap();
        let sweep = feature_sweep(&ds, &cfg, &[6]).unwrap();
        assert_eq!(sweep, vec![(6, plain.per_seed[0].mae)]);
        assert_eq!(feature_sweep(&ds, &cfg, &[1, 3, 6]).unwrap().len(), 3);
        assert!(feature_sweep(&ds, &cfg, &[3, 1]).is_err());
        assert!(feature_sweep(&ds, &cfg, &[7]).unwrap_err().is_configuration());
    }

    #[test]
    fn feature_count_parses() {
        assert_eq!("all".parse::<FeatureCount>().unwrap(), FeatureCount::All);
        assert_eq!("15".parse::<FeatureCount>().unwrap(), FeatureCount::Top(15));
        let json = serde_json::to_string(&FeatureCount::All).unwrap();
        assert_eq!(serde_json::from_str::<FeatureCount>(&json).unwrap(), FeatureCount::All);
        assert!(FeatureCount::Top(0).resolve(5).is_err());
    }
}
