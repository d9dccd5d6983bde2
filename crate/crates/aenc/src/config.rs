//! Run configuration shared by every subcommand. Each command writes its
//! resolved configuration next to its outputs, and that file alone reruns it.

use std::path::{Path, PathBuf};

use aenc_core::ceilings::{CrossConfig, DEFAULT_CROSS_KERNEL_WIDTH};
use aenc_core::encoder::{DEFAULT_EMBED_DIM, DEFAULT_KERNEL_WIDTH};
use aenc_core::ensemble::SweepSpace;
use aenc_core::synth::SynthSpec;
use aenc_core::{Backbone, Dataset, EncoderConfig, HeadMode, KernelType, SplitSpec, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{AencError, Result};
use crate::files::read_json;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: Option<PathBuf>,
    pub split: Option<SplitSpec>,
    /// z-score features and BOLD with train-split statistics.
    pub normalize: bool,
    pub workers: usize,
    pub encoder: EncoderSettings,
    pub train: TrainConfig,
    pub cross: CrossSettings,
    pub sweep: Option<SweepSpace>,
    pub ensemble: EnsembleSettings,
    pub score: ScoreSettings,
    pub synth: Option<SynthSpec>,
    pub ceiling: CeilingSettings,
    pub gap: GapSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            split: None,
            normalize: true,
            workers: 1,
            encoder: EncoderSettings::default(),
            train: TrainConfig::default(),
            cross: CrossSettings::default(),
            sweep: None,
            ensemble: EnsembleSettings::default(),
            score: ScoreSettings::default(),
            synth: None,
            ceiling: CeilingSettings::default(),
            gap: GapSettings::default(),
        }
    }
}

/// Encoder hyperparameters; shapes come from the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSettings {
    /// Backbone labels to use; `None` = all.
    pub backbones: Option<Vec<String>>,
    pub embed_dim: usize,
    pub kernel_width: usize,
    pub kernel_type: KernelType,
    pub head_mode: HeadMode,
}

impl Default for EncoderSettings {
    fn default() -> Self {
        Self {
            backbones: None,
            embed_dim: DEFAULT_EMBED_DIM,
            kernel_width: DEFAULT_KERNEL_WIDTH,
            kernel_type: KernelType::default(),
            head_mode: HeadMode::default(),
        }
    }
}

impl EncoderSettings {
    pub fn resolve(&self, dataset: &Dataset) -> Result<EncoderConfig> {
        let backbones: Vec<Backbone> = match &self.backbones {
            None => dataset.backbones.clone(),
            Some(labels) => labels
                .iter()
                .map(|l| Ok(dataset.backbones[dataset.backbone_index(l)?].clone()))
                .collect::<Result<_>>()?,
        };
        let config = EncoderConfig {
            backbones,
            embed_dim: self.embed_dim,
            kernel_width: self.kernel_width,
            kernel_type: self.kernel_type,
            head_mode: self.head_mode,
            subjects: dataset.subjects,
            parcels: dataset.parcels,
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrossSettings {
    pub embed_dim: usize,
    pub kernel_width: usize,
    pub kernel_type: KernelType,
    pub head_mode: HeadMode,
}

impl Default for CrossSettings {
    fn default() -> Self {
        Self {
            embed_dim: DEFAULT_EMBED_DIM,
            kernel_width: DEFAULT_CROSS_KERNEL_WIDTH,
            kernel_type: KernelType::default(),
            head_mode: HeadMode::default(),
        }
    }
}

impl CrossSettings {
    pub fn resolve(&self, dataset: &Dataset) -> Result<CrossConfig> {
        let config = CrossConfig {
            subjects: dataset.subjects,
            parcels: dataset.parcels,
            embed_dim: self.embed_dim,
            kernel_width: self.kernel_width,
            kernel_type: self.kernel_type,
            head_mode: self.head_mode,
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleSettings {
    pub k: usize,
    /// Sweep output directory holding `records/` and `models/`.
    pub records: Option<PathBuf>,
    /// Movies used for ranking; default = each record's validation movies.
    pub validation_movies: Option<Vec<String>>,
    /// Movies to predict; default = the split's test movies.
    pub movies: Option<Vec<String>>,
    /// Scored output directories to merge per (subject, movie) instead of
    /// building a top-k ensemble.
    pub combine: Vec<PathBuf>,
}

impl Default for EnsembleSettings {
    fn default() -> Self {
        Self {
            k: 5,
            records: None,
            validation_movies: None,
            movies: None,
            combine: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreSettings {
    pub checkpoint: Option<PathBuf>,
    /// Default = the checkpoint's test movies.
    pub movies: Option<Vec<String>>,
    /// Also write per-(subject, movie) prediction tensors.
    pub predictions: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CeilingMethod {
    #[default]
    SplitHalf,
    Cross,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CeilingSettings {
    pub method: CeilingMethod,
    /// Movies scored by the cross-subject model; default = test movies.
    pub movies: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GapSettings {
    pub feature: Option<PathBuf>,
    pub ceiling: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    pub fn manifest(&self) -> Result<&Path> {
        self.manifest.as_deref().ok_or_else(|| {
            AencError::Usage("no manifest given (--manifest or config `manifest`)".into())
        })
    }

    pub fn split(&self) -> Result<&SplitSpec> {
        self.split
            .as_ref()
            .ok_or_else(|| AencError::Usage("config has no `split`".into()))
    }

    /// Applies a `--seed` override to every seeded section.
    pub fn set_seed(&mut self, seed: u64) {
        self.train.seed = seed;
        if let Some(s) = &mut self.sweep {
            s.seed = seed;
        }
        if let Some(s) = &mut self.synth {
            s.seed = seed;
        }
    }
}
