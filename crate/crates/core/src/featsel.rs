//! Univariate F-regression scoring, deterministic feature ranking and top-k
//! projection.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::PanelDataset;
use crate::serde_float;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScore {
    pub name: String,
    /// `r^2 / (1 - r^2) * (n - 2)`, `+inf` at `|r| = 1`, 0 for degenerate columns.
    #[serde(with = "serde_float")]
    pub f_stat: f64,
    pub correlation: f64,
    /// Constant feature or constant target; scored 0.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRanking {
    /// Sorted by `f_stat` descending, then non-degenerate first, then name.
    pub entries: Vec<FeatureScore>,
    pub n_samples: usize,
}

fn is_constant(v: &[f64]) -> bool {
    v.iter().all(|x| *x == v[0])
}

/// Pearson correlation of `x` and `y` and the F statistic derived from it.
pub fn f_regression_score(name: &str, x: &[f64], y: &[f64]) -> Result<FeatureScore> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("feature has {} values, target {}", x.len(), y.len())));
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::SampleSize { needed: 3, got: n });
    }
    if is_constant(x) || is_constant(y) {
        return Ok(FeatureScore {
            name: name.to_string(),
            f_stat: 0.0,
            correlation: 0.0,
            degenerate: true,
        });
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    let r2 = r * r;
    let f_stat = if r2 >= 1.0 {
        f64::INFINITY
    } else {
        r2 / (1.0 - r2) * (nf - 2.0)
    };
    Ok(FeatureScore {
        name: name.to_string(),
        f_stat,
        correlation: r,
        degenerate: false,
    })
}

fn ranking_order(a: &FeatureScore, b: &FeatureScore) -> Ordering {
    b.f_stat
        .total_cmp(&a.f_stat)
        .then(a.degenerate.cmp(&b.degenerate))
        .then_with(|| a.name.cmp(&b.name))
}

/// Scores every feature of `ds` against its target. Callers pass the
/// training split only.
pub fn rank_features(ds: &PanelDataset) -> Result<FeatureRanking> {
    if ds.len() < 3 {
        return Err(Error::SampleSize { needed: 3, got: ds.len() });
    }
    let y = ds.targets();
    let mut entries = ds
        .feature_names()
        .iter()
        .enumerate()
        .map(|(j, name)| f_regression_score(name, &ds.column(j), &y))
        .collect::<Result<Vec<_>>>()?;
    entries.sort_by(ranking_order);
    Ok(FeatureRanking {
        entries,
        n_samples: ds.len(),
    })
}

impl FeatureRanking {
    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.name.as_str()).collect()
    }

    pub fn top(&self, k: usize) -> &[FeatureScore] {
        &self.entries[..k.min(self.entries.len())]
    }

    /// `rank,feature,f_stat,correlation`, ranks from 1.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("rank,feature,f_stat,correlation\n");
        for (i, e) in self.entries.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                i + 1,
                e.name,
                serde_float::token(e.f_stat),
                e.correlation
            ));
        }
        out
    }
}

/// Projects `ds` onto the `k` best-ranked features, columns in rank order.
pub fn select_top_k(ds: &PanelDataset, ranking: &FeatureRanking, k: usize) -> Result<PanelDataset> {
    if k == 0 || k > ranking.entries.len() {
        return Err(Error::Bounds(format!("k = {k} outside 1..={}", ranking.entries.len())));
    }
    let columns = ranking.entries[..k]
        .iter()
        .map(|e| {
            ds.feature_names()
                .iter()
                .position(|n| *n == e.name)
                .ok_or_else(|| Error::Invalid(format!("ranked feature `{}` not in dataset", e.name)))
        })
        .collect::<Result<Vec<_>>>()?;
    ds.project(&columns)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::PanelRow;
    use chrono::NaiveDate;

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * a.abs().max(b.abs())
    }

    #[test]
    fn perfect_correlations_are_infinite() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let s = f_regression_score("x", &x, &x).unwrap();
        assert_eq!(s.f_stat, f64::INFINITY);
        assert_eq!(s.correlation, 1.0);
        let s = f_regression_score("x", &x, &[4.0, 3.0, 2.0, 1.0]).unwrap();
        assert_eq!(s.f_stat, f64::INFINITY);
        assert_eq!(s.correlation, -1.0);
    }

    #[test]
    fn hand_evaluated_score() {
        // Sxy = 4.5, Sxx = 5, Syy = 4.75: r^2 = 20.25 / 23.75 = 81/95,
        // F = (81/95) / (14/95) * 2 = 81/7.
        let s = f_regression_score("x", &[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 2.0, 4.0]).unwrap();
        assert!(close(s.f_stat, 81.0 / 7.0, 1e-12), "{}", s.f_stat);
        assert!(close(s.correlation, 0.923_380_516_876_638_8, 1e-12));
    }

    #[test]
    fn degenerate_and_small_inputs() {
        let s = f_regression_score("c", &[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!(s.degenerate);
        assert_eq!(s.f_stat, 0.0);
        assert!(matches!(
            f_regression_score("x", &[1.0, 2.0], &[1.0, 2.0]),
            Err(Error::SampleSize { needed: 3, got: 2 })
        ));
    }

    fn dataset(columns: &[(&str, Vec<f64>)], y: &[f64]) -> PanelDataset {
        let names = columns.iter().map(|(n, _)| n.to_string()).collect();
        let rows = y
            .iter()
            .enumerate()
            .map(|(i, t)| PanelRow {
                state: "ca".into(),
                date: NaiveDate::from_ymd_opt(2020, 4, 1 + i as u32).unwrap(),
                features: columns.iter().map(|(_, c)| c[i]).collect(),
                target: *t,
            })
            .collect();
        PanelDataset::new(names, rows).unwrap()
    }

    #[test]
    fn ranking_order_rules() {
        let y = vec![1.0, 3.0, 2.0, 5.0, 4.0];
        let noise = vec![0.3, 0.1, 0.4, 0.1, 0.5];
        let ds = dataset(
            &[
                ("z_dead", vec![1.0; 5]),
                ("b_noise", noise.clone()),
                ("a_target", y.clone()),
                ("c_noise", noise.clone()),
            ],
            &y,
        );
        let r = rank_features(&ds).unwrap();
        assert_eq!(r.names(), ["a_target", "b_noise", "c_noise", "z_dead"]);
        assert_eq!(r.n_samples, 5);

        // Permuting columns changes nothing.
        let ds2 = dataset(
            &[
                ("c_noise", noise.clone()),
                ("a_target", y.clone()),
                ("z_dead", vec![1.0; 5]),
                ("b_noise", noise),
            ],
            &y,
        );
        assert_eq!(rank_features(&ds2).unwrap(), r);
    }

    #[test]
    fn degenerate_ranks_below_true_zero() {
        // x symmetric around the vertex of y gives r = 0 exactly.
        let y = vec![4.0, 1.0, 0.0, 1.0, 4.0];
        let ds = dataset(&[("a_dead", vec![7.0; 5]), ("b_zero", vec![-2.0, -1.0, 0.0, 1.0, 2.0])], &y);
        let r = rank_features(&ds).unwrap();
        assert_eq!(r.names(), ["b_zero", "a_dead"]);
    }

    #[test]
    fn top_k_projection() {
        let y = vec![1.0, 3.0, 2.0, 5.0, 4.0];
        let ds = dataset(&[("n", vec![0.3, 0.1, 0.4, 0.1, 0.5]), ("t", y.clone())], &y);
        let r = rank_features(&ds).unwrap();
        let all = select_top_k(&ds, &r, 2).unwrap();
        assert_eq!(all.feature_names(), ["t", "n"]);
        assert_eq!(all.rows()[1].features, vec![3.0, 0.1]);
        assert_eq!(all.targets(), ds.targets());
        let one = select_top_k(&ds, &r, 1).unwrap();
        assert_eq!(one.feature_names(), ["t"]);
        assert!(matches!(select_top_k(&ds, &r, 0), Err(Error::Bounds(_))));
        assert!(matches!(select_top_k(&ds, &r, 3), Err(Error::Bounds(_))));
    }

    #[test]
    fn csv_export_uses_inf_token() {
        let y = vec![1.0, 3.0, 2.0, 5.0];
        let ds = dataset(&[("t", y.clone())], &y);
        let csv = rank_features(&ds).unwrap().to_csv();
        assert_eq!(csv, "rank,feature,f_stat,correlation\n1,t,inf,1\n");
    }
}
