//! Trained models of every family behind one type, bound to the feature names
//! they were fitted on.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use symcast_neural::io::{decode, encode, NetworkHeader};
use symcast_neural::{
    build_cnn7, build_mlp, build_resnet1d, train_network, TrainOptions, TrainedNetwork,
    CNN7_DEFAULT_CHANNELS, RESNET1D_DEFAULT_CHANNELS,
};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::tabmodels::{
    fit_gbdt, fit_linear, fit_tree, fit_xgb_style, BoostedEnsemble, LinearModel, RegressionTree, TreeHyperparams,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    Lr,
    Dt,
    Gbdt,
    Xgb,
    Mlp,
    Cnn7,
    Resnet1d,
}

impl ModelFamily {
    pub const ALL: [ModelFamily; 7] = [
        ModelFamily::Lr,
        ModelFamily::Dt,
        ModelFamily::Gbdt,
        ModelFamily::Xgb,
        ModelFamily::Mlp,
        ModelFamily::Cnn7,
        ModelFamily::Resnet1d,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ModelFamily::Lr => "lr",
            ModelFamily::Dt => "dt",
            ModelFamily::Gbdt => "gbdt",
            ModelFamily::Xgb => "xgb",
            ModelFamily::Mlp => "mlp",
            ModelFamily::Cnn7 => "cnn7",
            ModelFamily::Resnet1d => "resnet1d",
        }
    }

    pub fn is_neural(&self) -> bool {
        matches!(self, ModelFamily::Mlp | ModelFamily::Cnn7 | ModelFamily::Resnet1d)
    }

    /// Families whose importance comes from recorded split gains.
    pub fn has_gain_importance(&self) -> bool {
        matches!(self, ModelFamily::Dt | ModelFamily::Gbdt | ModelFamily::Xgb)
    }
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelFamily::ALL
            .into_iter()
            .find(|f| f.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown model family `{s}`")))
    }
}

/// Hyperparameters for every family; each fit reads only its own part.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelParams {
    pub tree: TreeHyperparams,
    pub train: TrainOptions,
    pub mlp_hidden: Vec<usize>,
    pub cnn7_channels: Vec<usize>,
    pub resnet1d_channels: Vec<usize>,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            tree: TreeHyperparams::default(),
            train: TrainOptions::default(),
            mlp_hidden: vec![64, 32],
            cnn7_channels: CNN7_DEFAULT_CHANNELS.to_vec(),
            resnet1d_channels: RESNET1D_DEFAULT_CHANNELS.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Estimator {
    Linear(LinearModel),
    Tree(RegressionTree),
    Boosted(BoostedEnsemble),
    Network(TrainedNetwork),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub family: ModelFamily,
    pub feature_names: Vec<String>,
    pub estimator: Estimator,
}

/// Fits `family` on `x`/`y`. `seed` drives network initialization and
/// minibatch order; tree families are deterministic without it.
pub fn fit_model(
    family: ModelFamily,
    x: &Matrix,
    y: &[f64],
    feature_names: &[String],
    params: &ModelParams,
    seed: u64,
) -> Result<TrainedModel> {
    if feature_names.len() != x.cols() {
        return Err(Error::Shape(format!(
            "{} feature names for {} columns",
            feature_names.len(),
            x.cols()
        )));
    }
    let hp = TreeHyperparams {
        seed,
        ..params.tree.clone()
    };
    let f = x.cols();
    let estimator = match family {
        ModelFamily::Lr => Estimator::Linear(fit_linear(x, y)?),
        ModelFamily::Dt => Estimator::Tree(fit_tree(x, y, &hp)?),
        ModelFamily::Gbdt => Estimator::Boosted(fit_gbdt(x, y, &hp)?),
        ModelFamily::Xgb => Estimator::Boosted(fit_xgb_style(x, y, &hp)?),
        ModelFamily::Mlp | ModelFamily::Cnn7 | ModelFamily::Resnet1d => {
            let spec = match family {
                ModelFamily::Mlp => build_mlp(f, &params.mlp_hidden, seed),
                ModelFamily::Cnn7 => build_cnn7(f, &params.cnn7_channels, seed)?,
                _ => build_resnet1d(f, &params.resnet1d_channels, seed)?,
            };
            let opts = TrainOptions {
                seed,
                ..params.train.clone()
            };
            Estimator::Network(train_network(spec, x.as_slice(), f, y, &opts)?.model)
        }
    };
    Ok(TrainedModel {
        family,
        feature_names: feature_names.to_vec(),
        estimator,
    })
}

impl TrainedModel {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.cols() != self.n_features() {
            return Err(Error::Shape(format!(
                "model trained on {} features, input has {}",
                self.n_features(),
                x.cols()
            )));
        }
        match &self.estimator {
            Estimator::Linear(m) => m.predict(x),
            Estimator::Tree(m) => m.predict(x),
            Estimator::Boosted(m) => m.predict(x),
            Estimator::Network(m) => Ok(m.predict(x.as_slice(), x.cols())?),
        }
    }

    /// Total split gain per feature name; `None` for families without splits.
    pub fn gain_importance(&self) -> Option<BTreeMap<String, f64>> {
        let gains = match &self.estimator {
            Estimator::Tree(t) => t.gain_by_feature(),
            Estimator::Boosted(b) => b.gain_by_feature(),
            _ => return None,
        };
        Some(self.feature_names.iter().cloned().zip(gains).collect())
    }

    /// Writes the model as JSON at `path`. Networks also write their
    /// parameter blob next to it with a `.bin` extension.
    pub fn save(&self, path: &Path) -> Result<()> {
        let stored = match &self.estimator {
            Estimator::Linear(m) => StoredEstimator::Linear { model: m.clone() },
            Estimator::Tree(m) => StoredEstimator::Tree { model: m.clone() },
            Estimator::Boosted(m) => StoredEstimator::Boosted { model: m.clone() },
            Estimator::Network(net) => {
                let blob = path.with_extension("bin");
                let blob_name = blob
                    .file_name()
                    .and_then(|n| n.to_str())
                    .ok_or_else(|| Error::Invalid(format!("bad model path {}", path.display())))?
                    .to_string();
                let (header, bytes) = encode(net, &blob_name);
                fs::write(&blob, bytes)?;
                StoredEstimator::Network { header }
            }
        };
        let doc = StoredModel {
            family: self.family,
            feature_names: self.feature_names.clone(),
            estimator: stored,
        };
        fs::write(path, serde_json::to_string_pretty(&doc)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let doc: StoredModel = serde_json::from_slice(&fs::read(path)?)?;
        let estimator = match doc.estimator {
            StoredEstimator::Linear { model } => Estimator::Linear(model),
            StoredEstimator::Tree { model } => Estimator::Tree(model),
            StoredEstimator::Boosted { model } => Estimator::Boosted(model),
            StoredEstimator::Network { header } => {
                let bytes = fs::read(path.with_file_name(&header.blob))?;
                Estimator::Network(decode(header, &bytes)?)
            }
        };
        Ok(TrainedModel {
            family: doc.family,
            feature_names: doc.feature_names,
            estimator,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct StoredModel {
    family: ModelFamily,
    feature_names: Vec<String>,
    estimator: StoredEstimator,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum StoredEstimator {
    Linear { model: LinearModel },
    Tree { model: RegressionTree },
    Boosted { model: BoostedEnsemble },
    Network { header: NetworkHeader },
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (Matrix, Vec<f64>, Vec<String>) {
        let rows: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64, (i % 7) as f64]).collect();
        let y = rows.iter().map(|r| 3.0 * r[0] - r[1] + 2.0).collect();
        (Matrix::from_rows(&rows).unwrap(), y, vec!["a".into(), "b".into()])
    }

    #[test]
    fn family_names_round_trip() {
        for f in ModelFamily::ALL {
            assert_eq!(f.as_str().parse::<ModelFamily>().unwrap(), f);
        }
        assert!("forest".parse::<ModelFamily>().unwrap_err().is_configuration());
    }

    #[test]
    fn save_load_preserves_predictions() {
        let (x, y, names) = toy();
        let dir = std::env::temp_dir().join(format!("symcast-model-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let mut params = ModelParams::default();
        params.tree.n_rounds = 10;
        params.train.epochs = 3;
        params.mlp_hidden = vec![4];
        for family in [ModelFamily::Lr, ModelFamily::Dt, ModelFamily::Xgb, ModelFamily::Mlp] {
            let m = fit_model(family, &x, &y, &names, &params, 5).unwrap();
            let path = dir.join(format!("{family}.json"));
            m.save(&path).unwrap();
            let back = TrainedModel::load(&path).unwrap();
            assert_eq!(back, m);
            assert_eq!(back.predict(&x).unwrap(), m.predict(&x).unwrap());
        }
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn gain_importance_only_for_tree_families() {
        let (x, y, names) = toy();
        let mut params = ModelParams::default();
        params.tree.n_rounds = 5;
        let lr = fit_model(ModelFamily::Lr, &x, &y, &names, &params, 0).unwrap();
        assert!(lr.gain_importance().is_none());
        let dt = fit_model(ModelFamily::Dt, &x, &y, &names, &params, 0).unwrap();
        let imp = dt.gain_importance().unwrap();
        let Estimator::Tree(t) = &dt.estimator else { unreachable!() };
        let total: f64 = t
            .nodes
            .iter()
            .map(|n| match n {
                crate::tabmodels::TreeNode::Split { gain, .. } => *gain,
                _ => 0.0,
            })
            .sum();
        assert!((imp.values().sum::<f64>() - total).abs() <= 1e-9 * total);
    }

    #[test]
    fn column_mismatch_is_rejected() {
        let (x, y, names) = toy();
        let m = fit_model(ModelFamily::Lr, &x, &y, &names, &ModelParams::default(), 0).unwrap();
        let bad = Matrix::new(1, 3, vec![0.0; 3]).unwrap();
        assert!(matches!(m.predict(&bad), Err(Error::Shape(_))));
    }
}
