//! Stage orchestration: configuration, artifact layout and the end-to-end
//! run from simulated flights to an evaluation report.

mod plot;
mod stages;

pub use plot::{render_top_view, PlotStyle};
pub use stages::{
    cmd_build_dataset, cmd_evaluate, cmd_fit_latent, cmd_generate, cmd_pipeline, cmd_plot, cmd_simulate, cmd_train_ae,
    generate_arrays, GeneratedSet, TrainSummary,
};

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::airsim::{AirspaceSpec, SimConfig};
use crate::autoencoder::{ModelConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::evalharness::EvalNetConfig;
use crate::latentstats::LatentFitConfig;
use crate::trajdata::FEATURES;

/// Which generator produces the synthetic set.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Baseline {
    #[default]
    Atrada,
    SmoteI,
    SmoteE,
    GmmInput,
}

impl Baseline {
    pub const ALL: [Baseline; 4] = [Baseline::Atrada, Baseline::SmoteI, Baseline::SmoteE, Baseline::GmmInput];

    pub fn name(self) -> &'static str {
        match self {
            Baseline::Atrada => "atrada",
            Baseline::SmoteI => "smote-i",
            Baseline::SmoteE => "smote-e",
            Baseline::GmmInput => "gmm-input",
        }
    }

    /// Whether generation decodes through the trained autoencoder.
    pub fn uses_autoencoder(self) -> bool {
        self != Baseline::GmmInput
    }
}

impl fmt::Display for Baseline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Baseline::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown baseline {s:?} (expected atrada, smote-i, smote-e or gmm-input)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsConfig {
    /// Directory receiving every artifact.
    pub out: PathBuf,
    /// Existing trajectory CSV to use instead of simulated flights.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input_csv: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            out: PathBuf::from("out"),
            input_csv: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    /// Resampling interval, seconds.
    pub dt: f64,
    pub max_len: usize,
    /// Share of sequences withheld from autoencoder training for the
    /// reconstruction check.
    pub holdout_fraction: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            dt: 6.0,
            max_len: 271,
            holdout_fraction: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerateConfig {
    /// Number of synthetic trajectories; the dataset size when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m_count: Option<usize>,
    pub seed: u64,
    pub baseline: Baseline,
    pub smote_k: usize,
    pub smote_degree: f64,
    /// Normalised distance under which trailing frames count as padding.
    pub length_tol: f64,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            m_count: None,
            seed: 0,
            baseline: Baseline::Atrada,
            smote_k: 10,
            smote_degree: 0.5,
            length_tol: 0.015,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub net: EvalNetConfig,
    pub seed: u64,
    /// Classifier trainings averaged into the discriminative score, seeded
    /// `seed, seed + 1, …`.
    pub classifier_runs: usize,
    /// Past and future window length, in points.
    pub window: usize,
    pub stride: usize,
    /// Cap on training and test pairs per predictor.
    pub max_pairs: usize,
    /// Share of real sequences whose pairs form the predictive test set.
    pub test_fraction: f64,
    pub entry_tol_nm: f64,
    pub faf_tol_nm: f64,
    /// Scores the relative improvements are measured against.
    pub reference_ds: f64,
    pub reference_ps: f64,
    pub export_features: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            net: EvalNetConfig::default(),
            seed: 0,
            classifier_runs: 3,
            window: 20,
            stride: 1,
            max_pairs: 3000,
            test_fraction: 0.2,
            entry_tol_nm: 2.0,
            faf_tol_nm: 2.0,
            reference_ds: 0.023,
            reference_ps: 0.025,
            export_features: true,
        }
    }
}

/// The whole run, read from one TOML document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub paths: PathsConfig,
    pub dataset: DatasetConfig,
    pub generate: GenerateConfig,
    pub sim: SimConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub latent: LatentFitConfig,
    pub eval: EvalConfig,
    pub airspace: AirspaceSpec,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            paths: PathsConfig::default(),
            dataset: DatasetConfig::default(),
            generate: GenerateConfig::default(),
            sim: SimConfig {
                dt: 5.0,
                ..SimConfig::default()
            },
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            latent: LatentFitConfig::default(),
            eval: EvalConfig::default(),
            airspace: AirspaceSpec::toy(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("pipeline config serialises")
    }

    /// The configuration as a TOML table, for echoing into outputs.
    pub fn to_table(&self) -> toml::Table {
        toml::Table::try_from(self).expect("pipeline config serialises")
    }

    /// One seed for every stochastic stage.
    pub fn set_seed(&mut self, seed: u64) {
        self.sim.seed = seed;
        self.train.seed = seed;
        self.latent.seed = seed;
        self.generate.seed = seed;
        self.eval.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: Error| Error::Config(e.to_string());
        self.airspace.validate().map_err(cfg_err)?;
        self.sim.validate().map_err(cfg_err)?;
        self.model.validate().map_err(cfg_err)?;
        self.train.validate().map_err(cfg_err)?;
        self.eval.net.validate().map_err(cfg_err)?;
        if !(self.dataset.dt > 0.0) || self.dataset.max_len < 2 {
            return Err(Error::Config("dataset dt must be positive and max_len at least 2".into()));
        }
        if !(0.0..1.0).contains(&self.dataset.holdout_fraction) {
            return Err(Error::Config("holdout_fraction must lie in [0, 1)".into()));
        }
        if self.model.features != FEATURES {
            return Err(Error::Config(format!("model.features must be {FEATURES}")));
        }
        if self.model.max_len != self.dataset.max_len {
            return Err(Error::Config(format!(
                "model.max_len ({}) must equal dataset.max_len ({})",
                self.model.max_len, self.dataset.max_len
            )));
        }
        if self.generate.m_count == Some(0) {
            return Err(Error::Config("m_count must be at least 1".into()));
        }
        if self.generate.smote_k == 0 || !(self.generate.smote_degree >= 0.0) {
            return Err(Error::Config("smote_k must be positive and smote_degree non-negative".into()));
        }
        if !(self.generate.length_tol >= 0.0) {
            return Err(Error::Config("length_tol must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.latent.variance_target) || self.latent.variance_target == 0.0 {
            return Err(Error::Config("variance_target must lie in (0, 1]".into()));
        }
        if self.latent.k_candidates.is_empty() || self.latent.k_candidates.contains(&0) {
            return Err(Error::Config("k_candidates must be non-empty and positive".into()));
        }
        let e = &self.eval;
        if e.classifier_runs == 0 || e.window == 0 || e.stride == 0 || e.max_pairs == 0 {
            return Err(Error::Config("classifier_runs, window, stride and max_pairs must be positive".into()));
        }
        if !(e.test_fraction > 0.0 && e.test_fraction < 1.0) {
            return Err(Error::Config("test_fraction must lie in (0, 1)".into()));
        }
        if !(e.entry_tol_nm >= 0.0 && e.faf_tol_nm >= 0.0) {
            return Err(Error::Config("constraint tolerances must be non-negative".into()));
        }
        if e.reference_ds == 0.0 || e.reference_ps == 0.0 {
            return Err(Error::Config("reference scores must be non-zero".into()));
        }
        Ok(())
    }

    pub(crate) fn out_path(&self, name: &str) -> PathBuf {
        self.paths.out.join(name)
    }

    pub fn trajectories_path(&self) -> PathBuf {
        self.paths.input_csv.clone().unwrap_or_else(|| self.out_path("trajectories.csv"))
    }

    pub fn dataset_path(&self) -> PathBuf {
        self.out_path("dataset.atrd")
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.out_path("model.atae")
    }

    pub fn latent_model_path(&self) -> PathBuf {
        match self.generate.baseline {
            Baseline::GmmInput => self.out_path("latent_input.atld"),
            _ => self.out_path("latent.atld"),
        }
    }

    pub fn generated_path(&self) -> PathBuf {
        self.out_path(&format!("generated_{}.csv", self.generate.baseline))
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.out_path(&format!("eval_{}", self.generate.baseline))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        let back = PipelineConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let cfg = PipelineConfig::from_toml(
            "[generate]\nbaseline = \"smote-e\"\nm_count = 7\n[dataset]\nmax_len = 64\n[model]\nmax_len = 64\n",
        )
        .unwrap();
        assert_eq!(cfg.generate.baseline, Baseline::SmoteE);
        assert_eq!(cfg.generate.m_count, Some(7));
        assert_eq!(cfg.model.hidden, 128);
        cfg.validate().unwrap();
    }

    #[test]
    fn invalid_settings_are_config_errors() {
        assert!(PipelineConfig::from_toml("[generate]\nbaseline = \"vae\"\n").unwrap_err().is_config());
        let mut cfg = PipelineConfig::default();
        cfg.generate.m_count = Some(0);
        assert!(cfg.validate().unwrap_err().is_config());
        let mut cfg = PipelineConfig::default();
        cfg.model.max_len = 64;
        assert!(cfg.validate().unwrap_err().is_config());
    }

    #[test]
    fn baseline_names_parse_back() {
        for b in Baseline::ALL {
            assert_eq!(b.name().parse::<Baseline>().unwrap(), b);
        }
        assert!("timegan".parse::<Baseline>().is_err());
    }

    #[test]
    fn seed_reaches_every_stage() {
        let mut cfg = PipelineConfig::default();
        cfg.set_seed(42);
        assert_eq!(
            [cfg.sim.seed, cfg.train.seed, cfg.latent.seed, cfg.generate.seed, cfg.eval.seed],
            [42; 5]
        );
    }
}
