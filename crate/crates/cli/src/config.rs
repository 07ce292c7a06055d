use std::path::{Path, PathBuf};

use dmimo_beam::cgan::GanConfig;
use dmimo_beam::forest::ForestParams;
use dmimo_beam::pipeline::ModelKind;
use dmimo_beam::scenario::ScenarioConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Everything one experiment run needs. Every field has a default, so an
/// empty file is a valid config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    pub masking: MaskingConfig,
    pub models: ModelsConfig,
    pub ks: Vec<usize>,
    pub seeds: Seeds,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scenario: ScenarioConfig::default(),
            masking: MaskingConfig::default(),
            models: ModelsConfig::default(),
            ks: vec![1, 2, 4, 8, 16],
            seeds: Seeds::default(),
            output_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskingConfig {
    /// Masking fraction of the training replicas.
    pub train_p: f64,
    /// Masking fractions swept at evaluation.
    pub test_ps: Vec<f64>,
    /// Masked replicas per training row.
    pub oversample_factor: usize,
    /// Fraction of UEs held out for testing.
    pub split_fraction: f64,
}

impl Default for MaskingConfig {
    fn default() -> Self {
        MaskingConfig {
            train_p: 0.8,
            test_ps: vec![0.8, 0.95],
            oversample_factor: 2,
            split_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelsConfig {
    /// Models trained by `train` and swept by `evaluate`, in report order.
    pub enabled: Vec<String>,
    pub rf: ForestParams,
    pub mf: MfSettings,
    /// The `seed` field is ignored; it is derived from `seeds.model`.
    pub cgan: GanConfig,
}

impl Default for ModelsConfig {
    fn default() -> Self {
        ModelsConfig {
            enabled: ModelKind::ALL.iter().map(|m| m.as_str().to_string()).collect(),
            rf: ForestParams {
                n_trees: 20,
                mtry: Some(16),
                min_leaf: 15,
                ..Default::default()
            },
            mf: MfSettings::default(),
            cgan: GanConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MfSettings {
    pub n_trees: usize,
    pub mtry: Option<usize>,
    pub min_leaf: usize,
    pub max_depth: Option<usize>,
    pub max_iter: usize,
}

impl Default for MfSettings {
    fn default() -> Self {
        MfSettings {
            n_trees: 10,
            mtry: Some(16),
            min_leaf: 5,
            max_depth: None,
            max_iter: 10,
        }
    }
}

impl MfSettings {
    pub fn forest(&self) -> ForestParams {
        ForestParams {
            n_trees: self.n_trees,
            mtry: self.mtry,
            min_leaf: self.min_leaf,
            max_depth: self.max_depth,
            bootstrap: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    /// Scenario, split and training masks.
    pub data: u64,
    /// Model initialisation and bootstrap draws.
    pub model: u64,
    /// Stage-1 test masks and the random baseline.
    pub eval: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds {
            data: 1,
            model: 2,
            eval: 3,
        }
    }
}

impl ExperimentConfig {
    /// Reads a TOML file; `None` gives the defaults.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Config(e.message().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        self.scenario.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.models.cgan.validate().map_err(|e| CliError::Config(format!("models.cgan: {e}")))?;
        let m = &self.masking;
        if self.ks.is_empty() || self.ks[0] == 0 || !self.ks.windows(2).all(|w| w[0] < w[1]) {
            return bad(format!("ks must be positive, ascending and unique, got {:?}", self.ks));
        }
        if !(0.0..1.0).contains(&m.train_p) {
            return bad(format!("masking.train_p = {} outside [0, 1)", m.train_p));
        }
        if m.test_ps.is_empty() || m.test_ps.iter().any(|p| !(0.0..1.0).contains(p)) {
            return bad(format!("masking.test_ps must be non-empty with values in [0, 1), got {:?}", m.test_ps));
        }
        if m.oversample_factor == 0 {
            return bad("masking.oversample_factor must be at least 1".into());
        }
        if !(m.split_fraction > 0.0 && m.split_fraction < 1.0) {
            return bad(format!("masking.split_fraction = {} outside (0, 1)", m.split_fraction));
        }
        if self.models.rf.n_trees == 0 || self.models.mf.n_trees == 0 {
            return bad("forests need at least one tree".into());
        }
        if self.models.mf.max_iter == 0 {
            return bad("models.mf.max_iter must be at least 1".into());
        }
        let models = self.enabled_models()?;
        if models.is_empty() {
            return bad("models.enabled is empty".into());
        }
        let width = self.scenario.shape().len();
        let max_masked = self.masking.test_ps.iter().map(|p| dmimo_beam::dataio::mask_count(width, *p)).min().unwrap_or(0);
        if let Some(k) = self.ks.last() {
            if *k > max_masked {
                return bad(format!("k = {k} exceeds the {max_masked} masked beams at the lowest test masking fraction"));
            }
        }
        Ok(())
    }

    /// Enabled models in config order, without duplicates.
    pub fn enabled_models(&self) -> Result<Vec<ModelKind>, CliError> {
        let mut out = Vec::new();
        for name in &self.models.enabled {
            let kind: ModelKind = name.parse().map_err(|e: dmimo_beam::Error| CliError::Config(format!("models.enabled: {e}")))?;
            if out.contains(&kind) {
                return Err(CliError::Config(format!("models.enabled lists {kind} twice")));
            }
            out.push(kind);
        }
        Ok(out)
    }

    /// Applies `--seed`: all three seed streams are derived from it.
    pub fn reseed(&mut self, seed: u64) {
        self.seeds = Seeds {
            data: dmimo_beam::seed::derive_seed(seed, 0),
            model: dmimo_beam::seed::derive_seed(seed, 1),
            eval: dmimo_beam::seed::derive_seed(seed, 2),
        };
    }

    pub fn data_dir(&self) -> PathBuf {
        self.output_dir.join("data")
    }

    pub fn models_dir(&self) -> PathBuf {
        self.output_dir.join("models")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.output_dir.join("report")
    }

    pub fn outcomes_path(&self) -> PathBuf {
        self.output_dir.join("outcomes.csv")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = ExperimentConfig::parse("").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        assert_eq!(c.scenario.shape().len(), 320);
    }

    #[test]
    fn nested_overrides() {
        let c = ExperimentConfig::parse(
            "ks = [1, 4]\noutput_dir = \"x\"\n[scenario]\nue_count = 50\n[masking]\ntest_ps = [0.9]\n[models]\nenabled = [\"rf\"]\n[models.rf]\nn_trees = 3\n",
        )
        .unwrap();
        assert_eq!(c.ks, vec![1, 4]);
        assert_eq!(c.scenario.ue_count, 50);
        assert_eq!(c.models.rf.n_trees, 3);
        assert_eq!(c.models.rf.min_leaf, 5);
        assert_eq!(c.enabled_models().unwrap(), vec![ModelKind::Rf]);
    }

    #[test]
    fn rejects_bad_values() {
        for text in [
            "ks = [4, 2]",
            "ks = [1, 1]",
            "ks = []",
            "[models]\nenabled = [\"svm\"]",
            "[models]\nenabled = [\"rf\", \"rf\"]",
            "[masking]\ntrain_p = 1.5",
            "unknown_key = 1",
            "ks = [1, 400]",
        ] {
            assert!(matches!(ExperimentConfig::parse(text), Err(CliError::Config(_))), "{text}");
        }
    }

    #[test]
    fn reseed_changes_every_stream() {
        let mut c = ExperimentConfig::default();
        c.reseed(9);
        let d = Seeds::default();
        assert!(c.seeds.data != d.data && c.seeds.model != d.model && c.seeds.eval != d.eval);
    }
}
