//! Run configuration loaded from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tracelens_core::analysis::DynamicsMode;
use tracelens_core::dataset::{LabelRule, PairStructure, SynthConfig};
use tracelens_core::influence::{EpochRange, TracInOptions, Variant};
use tracelens_core::model::{GradScope, Hyperparams, Mode};

use crate::error::{CliError, Result};

/// The configuration shipped with the tool and used when `--config` is absent.
pub const DEFAULT_CONFIG: &str = include_str!("../configs/default.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds data generation, training, test selection and every control.
    pub seed: u64,
    /// Not part of the config hash. A config file without this key places
    /// its run in the file's own directory.
    #[serde(skip_serializing_if = "path_is_empty")]
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub influence: InfluenceConfig,
    pub validation: ValidationConfig,
    pub analysis: AnalysisConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// JSONL corpus to split instead of generating one.
    pub source: Option<PathBuf>,
    pub n_groups: usize,
    pub train_per_group: usize,
    pub dev_per_group: usize,
    pub pool_per_group: usize,
    pub pair_structure: PairStructure,
    pub latent_dim: usize,
    pub group_shift: f64,
    pub noise: f64,
    /// Hashed trigram dimensions for samples given as text.
    pub dims: usize,
    pub feature_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: Mode,
    pub learning_rate: f64,
    pub epochs_max: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub hidden_dim: usize,
    pub weight_decay: f64,
    pub early_stopping: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InfluenceConfig {
    pub variant: Variant,
    pub k: usize,
    pub tests_per_group: usize,
    pub epochs: EpochRange,
    pub lr_weighted: bool,
    pub scope: GradScope,
    /// Also write the long-form CSV export of the matrix.
    pub export_csv: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationConfig {
    pub removal: bool,
    pub k_grid: Vec<usize>,
    pub oracle: bool,
    pub oracle_fixture: OracleFixture,
}

/// Small convex problem on which retraining ground truth is affordable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleFixture {
    pub n_groups: usize,
    pub train_per_group: usize,
    pub dev_per_group: usize,
    pub pool_per_group: usize,
    pub n_tests: usize,
    pub latent_dim: usize,
    pub group_shift: f64,
    pub noise: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub damping: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub dynamics_mode: DynamicsMode,
    pub reinforcing: bool,
    pub zero_shot_groups: Vec<String>,
    /// Compare negative sets too in the zero-shot report.
    pub zero_shot_both_signs: bool,
    /// Empty means every group.
    pub imbalance_groups: Vec<String>,
    pub imbalance_pcts: Vec<u32>,
    pub figures: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            output_dir: PathBuf::from("runs/default"),
            data: DataConfig::default(),
            train: TrainConfig::default(),
            influence: InfluenceConfig::default(),
            validation: ValidationConfig::default(),
            analysis: AnalysisConfig::default(),
        }
    }
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: None,
            n_groups: 5,
            train_per_group: 2000,
            dev_per_group: 300,
            pool_per_group: 300,
            pair_structure: PairStructure::Parallel,
            latent_dim: 32,
            group_shift: 1.0,
            noise: 0.5,
            dims: 256,
            feature_seed: 0,
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        let h = Hyperparams::default();
        TrainConfig {
            mode: h.mode,
            learning_rate: h.learning_rate,
            epochs_max: h.epochs_max,
            patience: h.patience,
            batch_size: h.batch_size,
            hidden_dim: h.hidden_dim,
            weight_decay: h.weight_decay,
            early_stopping: h.early_stopping,
        }
    }
}

impl Default for InfluenceConfig {
    fn default() -> Self {
        InfluenceConfig {
            variant: Variant::Cosine,
            k: 100,
            tests_per_group: 25,
            epochs: EpochRange::Converged,
            lr_weighted: false,
            scope: GradScope::Full,
            export_csv: false,
        }
    }
}

impl Default for ValidationConfig {
    fn default() -> Self {
        ValidationConfig {
            removal: true,
            k_grid: vec![50, 100, 150, 200, 250],
            oracle: true,
            oracle_fixture: OracleFixture::default(),
        }
    }
}

impl Default for OracleFixture {
    fn default() -> Self {
        OracleFixture {
            n_groups: 2,
            train_per_group: 32,
            dev_per_group: 16,
            pool_per_group: 8,
            n_tests: 5,
            latent_dim: 4,
            group_shift: 0.5,
            noise: 1.0,
            learning_rate: 0.05,
            epochs: 200,
            damping: 1e-3,
        }
    }
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            dynamics_mode: DynamicsMode::Slice,
            reinforcing: true,
            zero_shot_groups: vec!["ko".into()],
            zero_shot_both_signs: false,
            imbalance_groups: Vec::new(),
            imbalance_pcts: vec![25, 50, 75, 100],
            figures: true,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Self::from_toml(DEFAULT_CONFIG),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                let mut config = Self::from_toml(&text).map_err(|e| match e {
                    CliError::Config(m) => CliError::Config(format!("{}: {m}", p.display())),
                    other => other,
                })?;
                let table: toml::Table = toml::from_str(&text)?;
                if !table.contains_key("output_dir") {
                    config.output_dir = p.parent().map(Path::to_path_buf).unwrap_or_default();
                }
                Ok(config)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.hyperparams().validate()?;
        self.synth_config().validate()?;
        let d = &self.data;
        if d.train_per_group == 0 || d.dev_per_group == 0 || d.pool_per_group == 0 {
            return Err(CliError::Config("split sizes must be positive".into()));
        }
        if d.dims == 0 {
            return Err(CliError::Config("data.dims must be positive".into()));
        }
        if self.influence.k == 0 || self.influence.tests_per_group == 0 {
            return Err(CliError::Config("influence.k and tests_per_group must be positive".into()));
        }
        if self.validation.k_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CliError::Config("validation.k_grid must be strictly increasing".into()));
        }
        if let Some(p) = self.analysis.imbalance_pcts.iter().find(|p| !(1..=100).contains(*p)) {
            return Err(CliError::Config(format!("imbalance pct {p} outside 1..=100")));
        }
        let f = &self.validation.oracle_fixture;
        if f.n_tests == 0 || f.n_tests > f.n_groups * f.pool_per_group {
            return Err(CliError::Config("oracle_fixture.n_tests must fit in its pool".into()));
        }
        Ok(())
    }

    pub fn hyperparams(&self) -> Hyperparams {
        let t = &self.train;
        Hyperparams {
            mode: t.mode,
            learning_rate: t.learning_rate,
            epochs_max: t.epochs_max,
            patience: t.patience,
            batch_size: t.batch_size,
            hidden_dim: t.hidden_dim,
            weight_decay: t.weight_decay,
            seed: self.seed,
            early_stopping: t.early_stopping,
        }
    }

    pub fn synth_config(&self) -> SynthConfig {
        let d = &self.data;
        SynthConfig {
            n_groups: d.n_groups,
            per_group: d.train_per_group + d.dev_per_group + d.pool_per_group,
            pair_structure: d.pair_structure,
            latent_dim: d.latent_dim,
            group_shift_scale: d.group_shift,
            noise_scale: d.noise,
            label_rule: LabelRule::MedianProjection,
            seed: self.seed,
        }
    }

    pub fn tracin_options(&self) -> TracInOptions {
        TracInOptions {
            epochs: self.influence.epochs,
            lr_weighted: self.influence.lr_weighted,
            scope: self.influence.scope,
            keep_per_epoch: true,
        }
    }

    /// SHA-256 over the canonical JSON form, ignoring `output_dir` and
    /// `influence.export_csv`, which only choose where and how to write.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        c.influence.export_csv = false;
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    /// The config as stored inside a run directory, without `output_dir`.
    pub fn to_run_toml(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        c.to_toml()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

fn path_is_empty(p: &Path) -> bool {
    p.as_os_str().is_empty()
}

impl OracleFixture {
    pub fn synth_config(&self, seed: u64) -> SynthConfig {
        SynthConfig {
            n_groups: self.n_groups,
            per_group: self.train_per_group + self.dev_per_group + self.pool_per_group,
            pair_structure: PairStructure::Parallel,
            latent_dim: self.latent_dim,
            group_shift_scale: self.group_shift,
            noise_scale: self.noise,
            label_rule: LabelRule::MedianProjection,
            seed,
        }
    }

    pub fn hyperparams(&self, seed: u64) -> Hyperparams {
        let n = self.n_groups * self.train_per_group;
        Hyperparams {
            learning_rate: self.learning_rate,
            epochs_max: self.epochs,
            batch_size: n,
            weight_decay: 0.0,
            seed,
            early_stopping: false,
            ..Hyperparams::linear()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_copy_resolves_to_its_own_directory() {
        let dir = tempfile::tempdir().unwrap();
        let c = RunConfig {
            output_dir: "somewhere/else".into(),
            ..RunConfig::default()
        };
        let text = c.to_run_toml();
        assert!(!text.contains("output_dir"));
        let p = dir.path().join("config.toml");
        std::fs::write(&p, text).unwrap();
        let back = RunConfig::load(Some(&p)).unwrap();
        assert_eq!(back.output_dir, dir.path());
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn bundled_config_matches_defaults() {
        let c = RunConfig::from_toml(DEFAULT_CONFIG).unwrap();
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn output_dir_does_not_change_hash() {
        let a = RunConfig::default();
        let b = RunConfig {
            output_dir: "elsewhere".into(),
            ..a.clone()
        };
        assert_eq!(a.hash(), b.hash());
        let c = RunConfig { seed: 8, ..a.clone() };
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn toml_round_trip() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(RunConfig::from_toml("sed = 3").is_err());
        assert!(RunConfig::from_toml("[train]\nlearning_rate = -1.0").is_err());
        assert!(RunConfig::from_toml("[validation]\nk_grid = [100, 50]").is_err());
        assert!(RunConfig::from_toml("[analysis]\nimbalance_pcts = [150]").is_err());
    }
}
