//! Experiment configuration: a single TOML file describing where the data
//! comes from, model hyperparameters, and sweep grids. Unknown keys are
//! rejected so typos fail loudly instead of silently falling back to
//! defaults.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use cvrkit_core::datagen::GenConfig;
use cvrkit_core::models::Hyperparams;
use cvrkit_core::student::{DistillConfig, StudentVariant};
use cvrkit_core::teacher::TeacherConfig;

use crate::error::CliError;

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    /// Where artifacts land; the `--out` flag overrides it.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
}

/// Data source plus the temporal split policy. Exactly one source applies:
/// `source = "generate"` draws a fresh synthetic log, `source = "logfile"`
/// reads `path`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub source: String,
    /// Log file to read when `source = "logfile"`.
    pub path: Option<PathBuf>,
    /// Oracle-world file matching `path`; enables entire-space oracle AUC
    /// on loaded logs.
    pub oracle_path: Option<PathBuf>,
    pub n_impressions: usize,
    pub field_cardinalities: Vec<usize>,
    pub ctr_cvr_correlation: f64,
    pub base_ctr: f64,
    pub base_cvr: f64,
    pub ctr_logit_scale: f64,
    pub cvr_logit_scale: f64,
    /// Fraction of each true logit's variance carried by pairwise category
    /// interactions between adjacent fields, in [0, 1).
    pub interaction_share: f64,
    /// Contiguous temporal blocks; the last becomes the test split, the one
    /// before it validation, the rest training.
    pub n_days: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        let g = GenConfig::default();
        DataConfig {
            source: "generate".to_string(),
            path: None,
            oracle_path: None,
            n_impressions: g.n_impressions,
            field_cardinalities: g.field_cardinalities,
            ctr_cvr_correlation: g.ctr_cvr_correlation,
            base_ctr: g.base_ctr,
            base_cvr: g.base_cvr,
            ctr_logit_scale: g.ctr_logit_scale,
            cvr_logit_scale: g.cvr_logit_scale,
            interaction_share: g.interaction_share,
            n_days: 7,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub gamma: f64,
    pub alpha: f64,
    pub lambda: f64,
    pub dropout_rate: f64,
    pub learning_rate: f64,
    pub embedding_dim: usize,
    pub layer_widths: Vec<usize>,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs for the adversarial teacher; it needs more passes than the
    /// downstream models for the discriminator to reach alignment.
    pub teacher_epochs: usize,
    pub propensity_clip: f64,
    pub gradient_reversal_scale: f64,
    pub gamma_d: f64,
    pub unclick_ratio: f64,
    /// Stochastic forward passes for pseudo-label variance estimation.
    pub mc_passes: usize,
    /// Fraction of pseudo-labeled records kept, lowest variance first;
    /// 1.0 keeps everything and skips the variance passes.
    pub keep_fraction: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let h = Hyperparams::default();
        let d = DistillConfig::default();
        let t = TeacherConfig::default();
        ModelConfig {
            gamma: h.gamma,
            alpha: d.alpha,
            lambda: d.lambda,
            dropout_rate: d.dropout_rate,
            learning_rate: h.learning_rate,
            embedding_dim: h.embedding_dim,
            layer_widths: h.layer_widths,
            batch_size: h.batch_size,
            epochs: h.epochs,
            teacher_epochs: t.epochs,
            propensity_clip: h.propensity_clip,
            gradient_reversal_scale: t.gradient_reversal_scale,
            gamma_d: t.gamma_d,
            unclick_ratio: t.unclick_ratio,
            mc_passes: 10,
            keep_fraction: 1.0,
        }
    }
}

/// Grids for the `sweep` verb and settings for `noise-exp`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub dropout_rates: Vec<f64>,
    pub alphas: Vec<f64>,
    pub unclick_ratios: Vec<f64>,
    /// Label-flip percentages for the noise-identification experiment.
    pub k_values: Vec<u32>,
    /// Seeds per grid cell (sweep) or per k (noise-exp).
    pub repetitions: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            dropout_rates: vec![0.2],
            alphas: vec![0.5],
            unclick_ratios: vec![1.0],
            k_values: vec![10, 20, 30, 40],
            repetitions: 5,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {}", path.display(), e.message())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        match self.data.source.as_str() {
            "generate" => {
                if self.data.path.is_some() {
                    return Err(CliError::Config(
                        "data.path is only valid with source = \"logfile\"".to_string(),
                    ));
                }
                if self.data.field_cardinalities.is_empty() {
                    return Err(CliError::Config(
                        "data.field_cardinalities must be non-empty".to_string(),
                    ));
                }
            }
            "logfile" => {
                if self.data.path.is_none() {
                    return Err(CliError::Config(
                        "source = \"logfile\" requires data.path".to_string(),
                    ));
                }
            }
            other => {
                return Err(CliError::Config(format!(
                    "unknown data.source {other:?}; expected \"generate\" or \"logfile\""
                )))
            }
        }
        if self.data.n_days < 3 {
            return Err(CliError::Config(
                "data.n_days must be at least 3 (train, validation, test)".to_string(),
            ));
        }
        let m = &self.model;
        if m.layer_widths.last() != Some(&2) {
            return Err(CliError::Config(
                "model.layer_widths must end in 2".to_string(),
            ));
        }
        for (name, v, lo, hi) in [
            ("model.gamma", m.gamma, 0.0, f64::INFINITY),
            ("model.alpha", m.alpha, 0.0, f64::INFINITY),
            ("model.lambda", m.lambda, 0.0, f64::INFINITY),
            ("model.dropout_rate", m.dropout_rate, 0.0, 1.0 - 1e-9),
            ("model.keep_fraction", m.keep_fraction, 0.0, 1.0),
            ("model.propensity_clip", m.propensity_clip, 1e-12, 1.0),
            ("model.unclick_ratio", m.unclick_ratio, 0.0, f64::INFINITY),
            (
                "data.interaction_share",
                self.data.interaction_share,
                0.0,
                1.0 - 1e-9,
            ),
        ] {
            if !(v >= lo && v <= hi) {
                return Err(CliError::Config(format!(
                    "{name} = {v} out of range [{lo}, {hi}]"
                )));
            }
        }
        if m.learning_rate <= 0.0 || m.batch_size == 0 || m.embedding_dim == 0 {
            return Err(CliError::Config(
                "learning_rate, batch_size and embedding_dim must be positive".to_string(),
            ));
        }
        if self.sweep.repetitions == 0 {
            return Err(CliError::Config(
                "sweep.repetitions must be at least 1".to_string(),
            ));
        }
        Ok(())
    }

    pub fn gen_config(&self, seed: u64) -> GenConfig {
        GenConfig {
            n_impressions: self.data.n_impressions,
            field_cardinalities: self.data.field_cardinalities.clone(),
            ctr_cvr_correlation: self.data.ctr_cvr_correlation,
            base_ctr: self.data.base_ctr,
            base_cvr: self.data.base_cvr,
            ctr_logit_scale: self.data.ctr_logit_scale,
            cvr_logit_scale: self.data.cvr_logit_scale,
            interaction_share: self.data.interaction_share,
            seed,
        }
    }

    pub fn hyperparams(&self) -> Hyperparams {
        Hyperparams {
            gamma: self.model.gamma,
            learning_rate: self.model.learning_rate,
            embedding_dim: self.model.embedding_dim,
            layer_widths: self.model.layer_widths.clone(),
            batch_size: self.model.batch_size,
            epochs: self.model.epochs,
            propensity_clip: self.model.propensity_clip,
            gradient_reversal_scale: self.model.gradient_reversal_scale,
        }
    }

    pub fn teacher_config(&self) -> TeacherConfig {
        TeacherConfig {
            embedding_dim: self.model.embedding_dim,
            layer_widths: self.model.layer_widths.clone(),
            learning_rate: self.model.learning_rate,
            batch_size: self.model.batch_size,
            epochs: self.model.teacher_epochs,
            gamma_d: self.model.gamma_d,
            gradient_reversal_scale: self.model.gradient_reversal_scale,
            unclick_ratio: self.model.unclick_ratio,
        }
    }

    pub fn distill_config(&self, variant: StudentVariant) -> DistillConfig {
        DistillConfig {
            alpha: self.model.alpha,
            gamma: self.model.gamma,
            lambda: self.model.lambda,
            dropout_rate: self.model.dropout_rate,
            variant,
            embedding_dim: self.model.embedding_dim,
            layer_widths: self.model.layer_widths.clone(),
            learning_rate: self.model.learning_rate,
            batch_size: self.model.batch_size,
            epochs: self.model.epochs,
        }
    }

    /// Resolved config as TOML, for checkpoint and manifest snapshots.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
