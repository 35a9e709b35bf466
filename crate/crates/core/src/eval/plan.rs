use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::aemtd::{AemtdConfig, SplicePolicy};
use crate::baselines::LinearConfig;
use crate::error::{Result, StageError};
use crate::labels::FillPolicy;
use crate::mlssl::MlsslConfig;
use crate::nn::SgdConfig;
use crate::synth::SynthFunnelConfig;

/// The four compared pipelines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Setting {
    /// Per-stage binaries on raw features.
    #[serde(rename = "n-mbt")]
    NMbt,
    /// Per-stage binaries on completed features.
    #[serde(rename = "aemtd-mbt")]
    AemtdMbt,
    /// One multiclass model on completed features.
    #[serde(rename = "aemtd-imc")]
    AemtdImc,
    /// The full pipeline: completion then the multi-label classifier.
    #[serde(rename = "aemtd-iml-ssl")]
    AemtdImlSsl,
}

impl Setting {
    pub const ALL: [Setting; 4] = [Setting::NMbt, Setting::AemtdMbt, Setting::AemtdImc, Setting::AemtdImlSsl];

    pub fn name(self) -> &'static str {
        match self {
            Setting::NMbt => "n-mbt",
            Setting::AemtdMbt => "aemtd-mbt",
            Setting::AemtdImc => "aemtd-imc",
            Setting::AemtdImlSsl => "aemtd-iml-ssl",
        }
    }

    pub fn needs_completion(self) -> bool {
        self != Setting::NMbt
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Setting {
    type Err = StageError;

    fn from_str(s: &str) -> Result<Self> {
        Setting::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| StageError::validation(format!("unknown setting `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitSpec {
    Kfold {
        k: usize,
        #[serde(default)]
        seed: u64,
    },
    /// Train on rows whose `group_column` value is in `train_groups`,
    /// validate on rows of `validation_group`.
    Longitudinal {
        group_column: String,
        train_groups: Vec<String>,
        validation_group: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synth(SynthFunnelConfig),
    Csv {
        data: PathBuf,
        schema: PathBuf,
        #[serde(default)]
        onehot: Vec<String>,
        #[serde(default = "default_true")]
        standardize: bool,
    },
}

fn default_true() -> bool {
    true
}

fn default_settings() -> Vec<Setting> {
    Setting::ALL.to_vec()
}

fn default_repetitions() -> usize {
    1
}

/// Everything needed to reproduce an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub source: DataSource,
    pub split: SplitSpec,
    #[serde(default = "default_settings")]
    pub settings: Vec<Setting>,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default)]
    pub fill_policy: FillPolicy,
    #[serde(default)]
    pub splice_policy: SplicePolicy,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub aemtd: AemtdConfig,
    #[serde(default)]
    pub aemtd_sgd: SgdConfig,
    #[serde(default)]
    pub mlssl: MlsslConfig,
    #[serde(default)]
    pub mlssl_sgd: SgdConfig,
    #[serde(default)]
    pub linear: LinearConfig,
}

impl ExperimentPlan {
    pub fn new(source: DataSource, split: SplitSpec) -> Self {
        Self {
            source,
            split,
            settings: default_settings(),
            repetitions: 1,
            fill_policy: FillPolicy::default(),
            splice_policy: SplicePolicy::default(),
            seed: 0,
            aemtd: AemtdConfig::default(),
            aemtd_sgd: SgdConfig::default(),
            mlssl: MlsslConfig::default(),
            mlssl_sgd: SgdConfig::default(),
            linear: LinearConfig::default(),
        }
    }

    /// Read a plan; relative CSV paths resolve against the plan's directory.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut plan: ExperimentPlan = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if let DataSource::Csv { data, schema, .. } = &mut plan.source {
            let base = path.parent().unwrap_or(Path::new(""));
            for p in [data, schema] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(StageError::validation("repetitions must be at least 1"));
        }
        if self.settings.is_empty() {
            return Err(StageError::validation("a plan needs at least one setting"));
        }
        match &self.split {
            SplitSpec::Kfold { k, .. } if *k < 2 => {
                return Err(StageError::validation(format!("k-fold needs k >= 2, got {k}")))
            }
            SplitSpec::Longitudinal { train_groups, validation_group, .. } => {
                if train_groups.is_empty() {
                    return Err(StageError::validation("longitudinal split needs training groups"));
                }
                if train_groups.contains(validation_group) {
                    return Err(StageError::validation("validation group is also a training group"));
                }
                if matches!(self.source, DataSource::Synth(_)) {
                    return Err(StageError::validation(
                        "longitudinal splits need a CSV source with a group column",
                    ));
                }
            }
            _ => {}
        }
        if let DataSource::Synth(cfg) = &self.source {
            cfg.validate()?;
        }
        self.aemtd.validate()?;
        self.aemtd_sgd.validate()?;
        self.mlssl.validate()?;
        self.mlssl_sgd.validate()?;
        self.linear.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_plan_parses_with_defaults() {
        let plan: ExperimentPlan = serde_json::from_str(
            r#"{"source": {"synth": {"n0": 200}}, "split": {"kfold": {"k": 3}}, "settings": ["n-mbt"]}"#,
        )
        .unwrap();
        assert_eq!(plan.settings, vec![Setting::NMbt]);
        assert_eq!(plan.repetitions, 1);
        assert_eq!(plan.mlssl.lambda, 0.5);
        plan.validate().unwrap();
    }

    #[test]
    fn setting_names_round_trip() {
        for s in Setting::ALL {
            assert_eq!(s.name().parse::<Setting>().unwrap(), s);
        }
        assert!("svm".parse::<Setting>().is_err());
    }
}
