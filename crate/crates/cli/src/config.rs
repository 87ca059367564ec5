use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use symcast_core::ingest::{ColumnManifest, SynthConfig};
use symcast_core::orchestrate::RunConfig;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub survey: Option<PathBuf>,
    pub cases: Option<PathBuf>,
    pub out: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            survey: None,
            cases: None,
            out: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Reports {
    pub per_state: bool,
    pub importance: bool,
    pub plot: bool,
    /// Feature counts for `sweep`; empty means every count from 1 to F.
    pub sweep_ks: Vec<usize>,
    pub ci_level: f64,
}

impl Default for Reports {
    fn default() -> Self {
        Reports {
            per_state: true,
            importance: true,
            plot: true,
            sweep_ks: Vec::new(),
            ci_level: 0.95,
        }
    }
}

/// Contents of the TOML config file. Relative paths resolve against the
/// config file's directory.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub paths: Paths,
    pub columns: ColumnManifest,
    pub run: RunConfig,
    pub synth: SynthConfig,
    pub reports: Reports,
}

impl CliConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        cfg.paths.survey = cfg.paths.survey.as_deref().map(resolve);
        cfg.paths.cases = cfg.paths.cases.as_deref().map(resolve);
        cfg.paths.out = resolve(&cfg.paths.out);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.reports.ci_level > 0.0 && self.reports.ci_level < 1.0) {
            return Err(CliError::Config(format!(
                "reports.ci_level {} outside (0, 1)",
                self.reports.ci_level
            )));
        }
        Ok(())
    }

    /// Survey and cases paths, which must exist.
    pub fn inputs(&self) -> Result<(PathBuf, PathBuf), CliError> {
        let get = |p: &Option<PathBuf>, key: &str| {
            let p = p
                .clone()
                .ok_or_else(|| CliError::Config(format!("paths.{key} is not set")))?;
            if !p.is_file() {
                return Err(CliError::Config(format!("paths.{key}: {} does not exist", p.display())));
            }
            Ok(p)
        };
        Ok((get(&self.paths.survey, "survey")?, get(&self.paths.cases, "cases")?))
    }
}
