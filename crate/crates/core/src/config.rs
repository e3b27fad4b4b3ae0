//! Run configuration: every tunable of a training run in one serializable
//! tree. Unknown keys are rejected so typos fail loudly instead of silently
//! running defaults.

use serde::{Deserialize, Serialize};

use crate::adversarial::{DAdvKind, GAdvKind, LossWeights};
use crate::data::AugmentPolicy;
use crate::error::{KdError, Result};
use crate::models::ModelDims;
use crate::teacher::DEFAULT_PROMPT;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Run directory name under the output root.
    pub run_name: String,
    pub master_seed: u64,
    pub steps: u64,
    pub batch_size: usize,
    pub d_steps_per_g_step: usize,
    /// Evaluation cadence in steps; 0 means only at step 0 and the end.
    pub eval_every: u64,
    /// Checkpoint cadence in steps; 0 means only the final checkpoint.
    pub checkpoint_every: u64,
    /// Sample-grid cadence in steps; 0 means only at step 0 and the end.
    pub sample_grid_every: u64,
    /// Generated sample count per evaluation.
    pub eval_samples: usize,
    /// Random feature pairs per diversity estimate.
    pub eval_pairs: usize,
    pub model: ModelConfig,
    pub data: DataConfig,
    pub teacher: TeacherConfig,
    pub optim: OptimPair,
    pub adv: AdvConfig,
    pub loss: LossWeights,
    pub agkd: AgkdSettings,
    pub cgkd: CgkdSettings,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            run_name: "run".to_string(),
            master_seed: 0,
            steps: 2000,
            batch_size: 32,
            d_steps_per_g_step: 1,
            eval_every: 500,
            checkpoint_every: 1000,
            sample_grid_every: 500,
            eval_samples: 256,
            eval_pairs: 512,
            model: ModelConfig::default(),
            data: DataConfig::default(),
            teacher: TeacherConfig::default(),
            optim: OptimPair::default(),
            adv: AdvConfig::default(),
            loss: LossWeights::default(),
            agkd: AgkdSettings::default(),
            cgkd: CgkdSettings::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub image_size: usize,
    pub channels: usize,
    pub latent_dim: usize,
    pub conditional: bool,
    #[serde(rename = "feature_dim_F")]
    pub feature_dim_f: usize,
    /// Dense-architecture hidden width.
    pub hidden_dim: usize,
    /// Convolutional-architecture channel base.
    pub conv_base: usize,
}

impl Default for ModelConfig {
    fn default() -> ModelConfig {
        ModelConfig {
            image_size: 8,
            channels: 1,
            latent_dim: 16,
            conditional: false,
            feature_dim_f: 32,
            hidden_dim: 64,
            conv_base: 16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataFormat {
    SyntheticModes,
    ImageFolder,
    PackedBinary,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub format: DataFormat,
    /// Source directory or file; unused by the synthetic format.
    pub root: Option<String>,
    /// Kept fraction of the dataset, stratified per class.
    pub fraction: f64,
    pub subset_seed: u64,
    pub augment: AugmentSetting,
    /// Synthetic format: number of modes.
    pub num_modes: usize,
    /// Synthetic format: samples rendered per mode.
    pub samples_per_mode: usize,
    /// Synthetic format: pixel jitter scale.
    pub jitter: f64,
    /// Overrides the class names used for text prompts.
    pub class_names: Option<Vec<String>>,
}

impl Default for DataConfig {
    fn default() -> DataConfig {
        DataConfig {
            format: DataFormat::SyntheticModes,
            root: None,
            fraction: 1.0,
            subset_seed: 0,
            augment: AugmentSetting::None,
            num_modes: 8,
            samples_per_mode: 100,
            jitter: 0.1,
            class_names: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentSetting {
    None,
    Basic,
}

impl From<AugmentSetting> for AugmentPolicy {
    fn from(s: AugmentSetting) -> AugmentPolicy {
        match s {
            AugmentSetting::None => AugmentPolicy::None,
            AugmentSetting::Basic => AugmentPolicy::Basic,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeacherConfig {
    /// Registered teacher kind; "mock" is built in.
    pub kind: String,
    /// Teacher feature dimension M.
    pub feature_dim: usize,
    /// Mock teacher hidden width.
    pub hidden_dim: usize,
    /// Teacher initialization seed, independent of the run seed.
    pub seed: u64,
    pub checkpoint_path: Option<String>,
    pub prompt_template: String,
}

impl Default for TeacherConfig {
    fn default() -> TeacherConfig {
        TeacherConfig {
            kind: "mock".to_string(),
            feature_dim: 16,
            hidden_dim: 32,
            seed: 7,
            checkpoint_path: None,
            prompt_template: DEFAULT_PROMPT.to_string(),
        }
    }
}

/// Adaptive-moment optimizer settings for one network.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimConfig {
    fn default() -> OptimConfig {
        OptimConfig {
            lr: 2e-4,
            beta1: 0.0,
            beta2: 0.99,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimPair {
    pub g: OptimConfig,
    pub d: OptimConfig,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdvConfig {
    pub kind: DAdvKind,
    pub g_variant: GAdvKind,
}

impl Default for AdvConfig {
    fn default() -> AdvConfig {
        AdvConfig {
            kind: DAdvKind::Logistic,
            g_variant: GAdvKind::LogisticNonSaturating,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgkdSettings {
    pub enabled: bool,
    /// Aggregation-gate probability.
    pub p: f64,
    /// Module weight, multiplied with loss.w_agkd.
    pub weight: f64,
}

impl Default for AgkdSettings {
    fn default() -> AgkdSettings {
        AgkdSettings {
            enabled: true,
            p: 0.7,
            weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CgkdSettings {
    pub enabled: bool,
    /// Correlation-distillation weight, multiplied with loss.w_cgkd.
    pub weight: f64,
    /// Diversity-term weight, multiplied with loss.w_pd.
    pub pd_weight: f64,
    /// Count each row pair twice (the double sum as written) or once.
    pub ordered_pairs: bool,
    /// Block the teacher-path gradient of the distillation term in the
    /// generator update.
    pub stop_teacher_grad_in_kd: bool,
}

impl Default for CgkdSettings {
    fn default() -> CgkdSettings {
        CgkdSettings {
            enabled: true,
            weight: 1.0,
            pd_weight: 1.0,
            ordered_pairs: true,
            stop_teacher_grad_in_kd: false,
        }
    }
}

impl TrainConfig {
    /// Model dimensions for a dataset with the given class count.
    pub fn model_dims(&self, num_classes: usize) -> ModelDims {
        ModelDims {
            image_size: self.model.image_size,
            channels: self.model.channels,
            latent_dim: self.model.latent_dim,
            conditional: self.model.conditional,
            num_classes,
            feature_dim_f: self.model.feature_dim_f,
            teacher_dim: self.teacher.feature_dim,
            hidden_dim: self.model.hidden_dim,
            conv_base: self.model.conv_base,
        }
    }

    /// Effective per-term weights after combining module and global knobs.
    pub fn effective_w_agkd(&self) -> f64 {
        self.agkd.weight * self.loss.w_agkd
    }

    pub fn effective_w_cgkd(&self) -> f64 {
        self.cgkd.weight * self.loss.w_cgkd
    }

    pub fn effective_w_pd(&self) -> f64 {
        self.cgkd.pd_weight * self.loss.w_pd
    }

    pub fn validate(&self) -> Result<()> {
        if self.run_name.is_empty() || self.run_name.contains(['/', '\\']) {
            return Err(KdError::invalid(format!(
                "run_name {:?} must be a non-empty plain directory name",
                self.run_name
            )));
        }
        if self.steps == 0 {
            return Err(KdError::invalid("steps must be positive"));
        }
        if self.batch_size < 2 {
            return Err(KdError::invalid("batch_size must be at least 2"));
        }
        if self.d_steps_per_g_step == 0 {
            return Err(KdError::invalid("d_steps_per_g_step must be positive"));
        }
        if self.eval_samples < 2 || self.eval_pairs == 0 {
            return Err(KdError::invalid(
                "eval_samples must be >= 2 and eval_pairs >= 1",
            ));
        }
        for (name, o) in [("optim.g", &self.optim.g), ("optim.d", &self.optim.d)] {
            if !(o.lr.is_finite() && o.lr > 0.0) {
                return Err(KdError::invalid(format!("{}.lr must be positive", name)));
            }
            if !((0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2)) {
                return Err(KdError::invalid(format!(
                    "{} moments must lie in [0, 1)",
                    name
                )));
            }
            if !(o.eps.is_finite() && o.eps > 0.0) {
                return Err(KdError::invalid(format!("{}.eps must be positive", name)));
            }
        }
        if !(0.0..=1.0).contains(&self.agkd.p) {
            return Err(KdError::invalid(format!(
                "agkd.p {} outside [0, 1]",
                self.agkd.p
            )));
        }
        for (name, w) in [
            ("agkd.weight", self.agkd.weight),
            ("cgkd.weight", self.cgkd.weight),
            ("cgkd.pd_weight", self.cgkd.pd_weight),
            ("loss.w_agkd", self.loss.w_agkd),
            ("loss.w_cgkd", self.loss.w_cgkd),
            ("loss.w_pd", self.loss.w_pd),
        ] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(KdError::invalid(format!(
                    "{} must be finite and >= 0, got {}",
                    name, w
                )));
            }
        }
        if !(self.data.fraction > 0.0 && self.data.fraction <= 1.0) {
            return Err(KdError::invalid(format!(
                "data.fraction {} outside (0, 1]",
                self.data.fraction
            )));
        }
        match self.data.format {
            DataFormat::SyntheticModes => {
                if self.data.num_modes < 2 {
                    return Err(KdError::invalid("data.num_modes must be at least 2"));
                }
                if self.data.samples_per_mode == 0 {
                    return Err(KdError::invalid("data.samples_per_mode must be positive"));
                }
                if self.model.channels != 1 {
                    return Err(KdError::invalid(
                        "synthetic_modes renders single-channel images; set model.channels = 1",
                    ));
                }
            }
            DataFormat::ImageFolder | DataFormat::PackedBinary => {
                if self.data.root.is_none() {
                    return Err(KdError::invalid(
                        "data.root is required for file-backed formats",
                    ));
                }
            }
        }
        if let Some(names) = &self.data.class_names {
            if names.is_empty() {
                return Err(KdError::invalid(
                    "data.class_names must not be empty when given",
                ));
            }
        }
        // Shape checks that do not need the dataset: probe with 2 classes.
        self.model_dims(2).validate()?;
        if self.teacher.kind.is_empty() {
            return Err(KdError::invalid("teacher.kind must not be empty"));
        }
        if self.teacher.hidden_dim == 0 {
            return Err(KdError::invalid("teacher.hidden_dim must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn validation_catches_bad_fields() {
        let mut c = TrainConfig::default();
        c.steps = 0;
        assert!(c.validate().is_err());

        let mut c = TrainConfig::default();
        c.agkd.p = 1.5;
        assert!(c.validate().is_err());

        let mut c = TrainConfig::default();
        c.optim.d.beta2 = 1.0;
        assert!(c.validate().is_err());

        let mut c = TrainConfig::default();
        c.data.fraction = 0.0;
        assert!(c.validate().is_err());

        let mut c = TrainConfig::default();
        c.data.format = DataFormat::ImageFolder;
        assert!(c.validate().is_err(), "file formats need data.root");

        let mut c = TrainConfig::default();
        c.run_name = "a/b".to_string();
        assert!(c.validate().is_err());

        let mut c = TrainConfig::default();
        c.loss.w_pd = -1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn effective_weights_multiply_module_and_global_knobs() {
        let mut c = TrainConfig::default();
        c.agkd.weight = 0.5;
        c.loss.w_agkd = 4.0;
        c.cgkd.pd_weight = 0.25;
        c.loss.w_pd = 2.0;
        assert_eq!(c.effective_w_agkd(), 2.0);
        assert_eq!(c.effective_w_pd(), 0.5);
        assert_eq!(c.effective_w_cgkd(), 1.0);
    }

    #[test]
    fn config_round_trips_through_serde() {
        let mut c = TrainConfig::default();
        c.master_seed = 99;
        c.model.feature_dim_f = 24;
        c.adv.kind = DAdvKind::Hinge;
        c.adv.g_variant = GAdvKind::Hinge;
        c.data.augment = AugmentSetting::Basic;
        let json = serde_json::to_string(&c).unwrap();
        assert!(
            json.contains("feature_dim_F"),
            "capitalized key must survive: {}",
            json
        );
        assert!(json.contains("\"hinge\""));
        let back: TrainConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back.master_seed, 99);
        assert_eq!(back.model.feature_dim_f, 24);
        assert_eq!(back.adv.kind, DAdvKind::Hinge);
        assert_eq!(back.data.augment, AugmentSetting::Basic);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = serde_json::from_str::<TrainConfig>("{\"stepz\": 5}");
        assert!(err.is_err());
        let err = serde_json::from_str::<TrainConfig>("{\"agkd\": {\"pee\": 0.5}}");
        assert!(err.is_err());
    }

    #[test]
    fn missing_sections_fall_back_to_defaults() {
        let c: TrainConfig = serde_json::from_str("{\"steps\": 5}").unwrap();
        assert_eq!(c.steps, 5);
        assert_eq!(c.batch_size, 32);
        assert_eq!(c.agkd.p, 0.7);
        assert!(c.cgkd.ordered_pairs);
        assert_eq!(c.optim.g.lr, 2e-4);
    }
}
