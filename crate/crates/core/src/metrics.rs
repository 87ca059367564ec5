//! MAE and nMAE, per-state error reports, permutation importance and top-k
//! frequency tables.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::PanelDataset;
use crate::model::TrainedModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub state: String,
    pub date: NaiveDate,
    pub predicted: f64,
    pub actual: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub rows: Vec<PredictionRow>,
}

impl PredictionSet {
    pub fn new(rows: Vec<PredictionRow>) -> Self {
        PredictionSet { rows }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Keys `(state, date)` in row order.
    pub fn keys(&self) -> Vec<(String, NaiveDate)> {
        self.rows.iter().map(|r| (r.state.clone(), r.date)).collect()
    }

    /// `state,date,predicted,actual`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("state,date,predicted,actual\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{}\n", r.state, r.date, r.predicted, r.actual));
        }
        out
    }

    pub fn from_csv<R: Read>(raw: R) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(raw);
        let headers = reader.headers()?.clone();
        let expected = ["state", "date", "predicted", "actual"];
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(Error::Format(format!(
                "prediction CSV header must be `{}`",
                expected.join(",")
            )));
        }
        let mut rows = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec?;
            let field = |j: usize| rec.get(j).unwrap_or("");
            let bad = |column: &str, message: String| Error::Validation {
                row: i + 1,
                column: column.into(),
                message,
            };
            let date = NaiveDate::parse_from_str(field(1), "%Y-%m-%d")
                .map_err(|e| bad("date", e.to_string()))?;
            let predicted: f64 = field(2).parse().map_err(|_| bad("predicted", field(2).into()))?;
            let actual: f64 = field(3).parse().map_err(|_| bad("actual", field(3).into()))?;
            rows.push(PredictionRow {
                state: field(0).to_string(),
                date,
                predicted,
                actual,
            });
        }
        Ok(PredictionSet { rows })
    }
}

fn abs_error_sum(rows: &[PredictionRow]) -> f64 {
    rows.iter().map(|r| (r.predicted - r.actual).abs()).sum()
}

pub fn mae(preds: &PredictionSet) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::Metric("MAE of an empty prediction set".into()));
    }
    Ok(abs_error_sum(&preds.rows) / preds.len() as f64)
}

/// `100 * sum|p - t| / sum t`, in percent.
pub fn nmae(preds: &PredictionSet) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::Metric("nMAE of an empty prediction set".into()));
    }
    let total: f64 = preds.rows.iter().map(|r| r.actual).sum();
    if total == 0.0 {
        return Err(Error::Metric("nMAE undefined: actual values sum to zero".into()));
    }
    Ok(100.0 * abs_error_sum(&preds.rows) / total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateError {
    pub mae: f64,
    /// Absent when the state's actual values sum to zero.
    pub nmae: Option<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub overall_mae: f64,
    pub overall_nmae: Option<f64>,
    pub per_state: BTreeMap<String, StateError>,
    pub n: usize,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn per_state_report(preds: &PredictionSet) -> Result<ErrorReport> {
    let overall_mae = mae(preds)?;
    let overall_nmae = nmae(preds).ok();
    let mut groups: BTreeMap<&str, Vec<PredictionRow>> = BTreeMap::new();
    for r in &preds.rows {
        groups.entry(&r.state).or_default().push(r.clone());
    }
    let per_state = groups
        .into_iter()
        .map(|(state, rows)| {
            let set = PredictionSet { rows };
            let err = StateError {
                mae: mae(&set).expect("group is non-empty"),
                nmae: nmae(&set).ok(),
                n: set.len(),
            };
            (state.to_string(), err)
        })
        .collect();
    Ok(ErrorReport {
        overall_mae,
        overall_nmae,
        per_state,
        n: preds.len(),
    })
}

impl ErrorReport {
    /// `state,mae,nmae,n` with a trailing `overall` row. Missing nMAE is empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("state,mae,nmae,n\n");
        for (s, e) in &self.per_state {
            out.push_str(&format!("{s},{},{},{}\n", e.mae, opt(e.nmae), e.n));
        }
        out.push_str(&format!("overall,{},{},{}\n", self.overall_mae, opt(self.overall_nmae), self.n));
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub csv: String,
    /// States where the first report's MAE is strictly lower.
    pub wins: usize,
    pub states: usize,
}

/// Side-by-side table `state,mae_local,mae_global,nmae_local,nmae_global`
/// plus an `overall` row. Both reports must cover the same states.
pub fn compare_reports(local: &ErrorReport, global: &ErrorReport) -> Result<Comparison> {
    let a: BTreeSet<&String> = local.per_state.keys().collect();
    let b: BTreeSet<&String> = global.per_state.keys().collect();
    if a != b {
        let only: Vec<&str> = a.symmetric_difference(&b).map(|s| s.as_str()).collect();
        return Err(Error::Invalid(format!(
            "reports cover different states (mismatch: {})",
            only.join(", ")
        )));
    }
    let mut csv = String::from("state,mae_local,mae_global,nmae_local,nmae_global\n");
    let mut wins = 0;
    for (state, l) in &local.per_state {
        let g = &global.per_state[state];
        if l.n != g.n {
            return Err(Error::Invalid(format!(
                "state {state}: {} vs {} test rows",
                l.n, g.n
            )));
        }
        if l.mae < g.mae {
            wins += 1;
        }
        csv.push_str(&format!("{state},{},{},{},{}\n", l.mae, g.mae, opt(l.nmae), opt(g.nmae)));
    }
    csv.push_str(&format!(
        "overall,{},{},{},{}\n",
        local.overall_mae,
        global.overall_mae,
        opt(local.overall_nmae),
        opt(global.overall_nmae)
    ));
    Ok(Comparison {
        csv,
        wins,
        states: local.per_state.len(),
    })
}

pub const DEFAULT_PERMUTATION_REPEATS: usize = 5;

fn sort_scores(scores: &mut [(String, f64)]) {
    scores.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
}

/// Mean MAE increase when each feature column is shuffled, over `n_repeats`
/// seeded permutations; sorted descending with name-ascending ties.
pub fn permutation_importance(
    model: &TrainedModel,
    ds: &PanelDataset,
    n_repeats: usize,
    seed: u64,
) -> Result<Vec<(String, f64)>> {
    if ds.feature_names() != model.feature_names.as_slice() {
        return Err(Error::Shape("dataset features differ from the model's".into()));
    }
    if ds.is_empty() || n_repeats == 0 {
        return Err(Error::Metric("permutation importance needs rows and at least one repeat".into()));
    }
    let x = ds.features_matrix();
    let y = ds.targets();
    let n = x.rows() as f64;
    let score = |pred: &[f64]| pred.iter().zip(&y).map(|(p, t)| (p - t).abs()).sum::<f64>() / n;
    let baseline = score(&model.predict(&x)?);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(x.cols());
    for (j, name) in model.feature_names.iter().enumerate() {
        let original = x.column(j);
        let mut shuffled = x.clone();
        let mut total = 0.0;
        for _ in 0..n_repeats {
            let mut col = original.clone();
            col.shuffle(&mut rng);
            for (i, v) in col.into_iter().enumerate() {
                shuffled.set(i, j, v);
            }
            total += score(&model.predict(&shuffled)?) - baseline;
        }
        out.push((name.clone(), total / n_repeats as f64));
    }
    sort_scores(&mut out);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportanceMethod {
    Gain,
    Permutation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceTable {
    pub method: ImportanceMethod,
    pub per_state: BTreeMap<String, Vec<(String, f64)>>,
}

impl ImportanceTable {
    /// Sorts every list descending by score, ties by name.
    pub fn new(method: ImportanceMethod, per_state: BTreeMap<String, Vec<(String, f64)>>) -> Self {
        let per_state = per_state
            .into_iter()
            .map(|(s, mut v)| {
                sort_scores(&mut v);
                (s, v)
            })
            .collect();
        ImportanceTable { method, per_state }
    }

    /// `state,rank,feature,score`, at most `k` rows per state.
    pub fn top_k_csv(&self, k: usize) -> String {
        let mut out = String::from("state,rank,feature,score\n");
        for (state, list) in &self.per_state {
            for (i, (f, s)) in list.iter().take(k).enumerate() {
                out.push_str(&format!("{state},{},{f},{s}\n", i + 1));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyReport {
    pub small_k: usize,
    pub large_k: usize,
    pub n_states: usize,
    /// Feature -> (appearances in top `small_k`, appearances in top `large_k`).
    pub counts: BTreeMap<String, (usize, usize)>,
}

/// Counts, per feature, the states whose importance list has it in the
/// top `small_k` and in the top `large_k`.
pub fn top_k_frequency(table: &ImportanceTable, small_k: usize, large_k: usize) -> Result<FrequencyReport> {
    if table.per_state.is_empty() {
        return Err(Error::Invalid("importance table has no states".into()));
    }
    if small_k > large_k {
        return Err(Error::Config(format!("top-k sizes must be ordered, got {small_k} > {large_k}")));
    }
    let mut counts: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for list in table.per_state.values() {
        for (i, (f, _)) in list.iter().enumerate() {
            let c = counts.entry(f.clone()).or_default();
            if i < small_k {
                c.0 += 1;
            }
            if i < large_k {
                c.1 += 1;
            }
        }
    }
    Ok(FrequencyReport {
        small_k,
        large_k,
        n_states: table.per_state.len(),
        counts,
    })
}

impl FrequencyReport {
    /// `feature,top5_count,top15_count` (labels follow the configured k),
    /// sorted by the larger count, then the smaller, then name.
    pub fn to_csv(&self) -> String {
        let mut rows: Vec<(&String, &(usize, usize))> = self.counts.iter().collect();
        rows.sort_by(|a, b| b.1 .1.cmp(&a.1 .1).then(b.1 .0.cmp(&a.1 .0)).then(a.0.cmp(b.0)));
        let mut out = format!("feature,top{}_count,top{}_count\n", self.small_k, self.large_k);
        for (f, (s, l)) in rows {
            out.push_str(&format!("{f},{s},{l}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row(state: &str, day: u32, p: f64, t: f64) -> PredictionRow {
        PredictionRow {
            state: state.into(),
            date: NaiveDate::from_ymd_opt(2020, 5, day).unwrap(),
            predicted: p,
            actual: t,
        }
    }

    #[test]
    fn hand_values() {
        let s = PredictionSet::new(vec![row("CA", 1, 1.0, 2.0), row("CA", 2, 3.0, 2.0)]);
        assert_eq!(mae(&s).unwrap(), 1.0);
        assert_eq!(nmae(&s).unwrap(), 50.0);
    }

    #[test]
    fn empty_and_zero_denominator() {
        assert!(matches!(mae(&PredictionSet::default()), Err(Error::Metric(_))));
        let s = PredictionSet::new(vec![row("CA", 1, 1.0, 0.0)]);
        assert!(matches!(nmae(&s), Err(Error::Metric(_))));
        let rep = per_state_report(&s).unwrap();
        assert_eq!(rep.per_state["CA"].nmae, None);
        assert!(rep.to_csv().contains("CA,1,,1\n"));
    }

    #[test]
    fn two_states_weighted_mean() {
        let s = PredictionSet::new(vec![row("AK", 1, 2.0, 0.0), row("AL", 1, 4.0, 0.0)]);
        assert_eq!(per_state_report(&s).unwrap().overall_mae, 3.0);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let s = PredictionSet::new(vec![row("NY", 3, 0.1 + 0.2, 1e-300), row("NY", 4, -3.5, 12.0)]);
        let back = PredictionSet::from_csv(s.to_csv().as_bytes()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn comparison_layout_and_wins() {
        let local = per_state_report(&PredictionSet::new(vec![row("AK", 1, 1.0, 2.0), row("AL", 1, 5.0, 2.0)])).unwrap();
        let global = per_state_report(&PredictionSet::new(vec![row("AK", 1, 3.0, 2.0), row("AL", 1, 4.0, 2.0)])).unwrap();
        let c = compare_reports(&local, &global).unwrap();
        assert_eq!((c.wins, c.states), (0, 2));
        let lines: Vec<&str> = c.csv.lines().collect();
        assert_eq!(lines[0], "state,mae_local,mae_global,nmae_local,nmae_global");
        assert!(lines[3].starts_with("overall,"));
        let other = per_state_report(&PredictionSet::new(vec![row("AZ", 1, 1.0, 2.0)])).unwrap();
        assert!(compare_reports(&local, &other).is_err());
    }

    #[test]
    fn frequency_counts_nest() {
        let mut per_state = BTreeMap::new();
        for (s, order) in [("A", ["x", "y", "z"]), ("B", ["y", "x", "z"]), ("C", ["x", "z", "y"])] {
            per_state.insert(s.to_string(), order.iter().enumerate().map(|(i, f)| (f.to_string(), 10.0 - i as f64)).collect());
        }
        let table = ImportanceTable::new(ImportanceMethod::Gain, per_state);
        let freq = top_k_frequency(&table, 1, 2).unwrap();
        assert_eq!(freq.counts["x"], (2, 3));
        assert_eq!(freq.counts["z"], (0, 1));
        assert_eq!(freq.to_csv().lines().next().unwrap(), "feature,top1_count,top2_count");
    }

    proptest! {
        #[test]
        fn overall_is_weighted_mean_of_states(
            rows in prop::collection::vec((0usize..4, -50.0f64..50.0, 0.5f64..100.0), 1..60)
        ) {
            let states = ["AK", "AL", "AR", "AZ"];
            let set = PredictionSet::new(rows.iter().enumerate()
                .map(|(i, &(s, p, t))| row(states[s], 1 + (i % 28) as u32, p, t)).collect());
            let rep = per_state_report(&set).unwrap();
            let weighted: f64 = rep.per_state.values().map(|e| e.mae * e.n as f64).sum::<f64>() / rep.n as f64;
            prop_assert!((weighted - rep.overall_mae).abs() <= 1e-9 * rep.overall_mae.max(1e-300));
            let total: f64 = set.rows.iter().map(|r| r.actual).sum();
            let identity = 100.0 * rep.n as f64 * rep.overall_mae / total;
            prop_assert!((identity - rep.overall_nmae.unwrap()).abs() <= 1e-9 * identity);
        }

        #[test]
        fn constant_shift_gives_exact_mae(c in 0.0f64..1000.0, ts in prop::collection::vec(0.0f64..100.0, 1..20)) {
            let c = (c * 8.0).round() / 8.0;
            let ts: Vec<f64> = ts.iter().map(|t| (t * 8.0).round() / 8.0).collect();
            let set = PredictionSet::new(ts.iter().map(|&t| row("CA", 1, t + c, t)).collect());
            prop_assert_eq!(mae(&set).unwrap(), c);
        }

        #[test]
        fn frequency_ignores_state_order(perm in Just(()).prop_perturb(|_, mut rng| {
            let mut v: Vec<usize> = (0..5).collect();
            for i in (1..v.len()).rev() { v.swap(i, (rng.next_u32() as usize) % (i + 1)); }
            v
        })) {
            let feats = ["a", "b", "c", "d", "e", "f"];
            let build = |order: &[usize]| {
                let mut m = BTreeMap::new();
                for &s in order {
                    m.insert(format!("S{s}"), feats.iter().enumerate()
                        .map(|(i, f)| (f.to_string(), ((i * (s + 3)) % 7) as f64)).collect());
                }
                top_k_frequency(&ImportanceTable::new(ImportanceMethod::Gain, m), 2, 4).unwrap()
            };
            prop_assert_eq!(build(&perm), build(&[0, 1, 2, 3, 4]));
        }
    }
}
