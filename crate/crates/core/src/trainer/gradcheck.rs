//! Central finite-difference verification of analytic gradients.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Batch, EncoderObjective, Objective};
use crate::conv::KernelType;
use crate::data::{Backbone, Dataset, Episode, EpisodeId, Window, DEFAULT_TR_SECONDS};
use crate::encoder::{EncoderConfig, EncoderParams};
use crate::error::Result;
use crate::matrix::Matrix;
use crate::params::ParamBlocks;
use crate::rng::{seeded, streams};

pub const FD_STEP: f64 = 1e-5;
/// Gradient magnitudes below this are compared on an absolute scale.
pub const MAGNITUDE_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockCheck {
    /// Model variant, e.g. `encoder/causal/group_plus_subject`.
    pub variant: String,
    pub block: String,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub entries: Vec<BlockCheck>,
}

impl GradCheckReport {
    pub fn all_passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn failures(&self) -> impl Iterator<Item = &BlockCheck> {
        self.entries.iter().filter(|e| !e.passed)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    libm::fabs(analytic - numeric)
        / libm::fabs(analytic)
            .max(libm::fabs(numeric))
            .max(MAGNITUDE_FLOOR)
}

/// Compares the objective's gradient against central differences of its loss,
/// element by element, reporting the worst relative error per block.
pub fn check_objective<O: Objective>(
    objective: &O,
    params: &O::Params,
    batch: &Batch<'_>,
    tolerance: f64,
    variant: &str,
) -> Result<Vec<BlockCheck>> {
    let (_, grads) = objective.loss_and_grad(params, batch)?;
    let grad_blocks = grads.blocks();
    let mut out = Vec::with_capacity(grad_blocks.len());
    for (bi, g) in grad_blocks.iter().enumerate() {
        let mut worst: f64 = 0.0;
        for i in 0..g.values.len() {
            let mut plus = params.clone();
            plus.blocks_mut()[bi].1[i] += FD_STEP;
            let mut minus = params.clone();
            minus.blocks_mut()[bi].1[i] -= FD_STEP;
            let numeric =
                (objective.loss(&plus, batch)? - objective.loss(&minus, batch)?) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(g.values[i], numeric));
        }
        out.push(BlockCheck {
            variant: variant.into(),
            block: g.name.clone(),
            max_rel_error: worst,
            passed: worst < tolerance,
        });
    }
    Ok(out)
}

/// Random values in `±1`, kept at least 0.1 away from zero so `|w|` kernels
/// are differentiable within the finite-difference step.
pub(crate) fn randomize_away_from_zero(params: &mut impl ParamBlocks, rng: &mut impl Rng) {
    for (_, b) in params.blocks_mut() {
        for v in b.iter_mut() {
            let mag = rng.random_range(0.1..1.0);
            *v = if rng.random_bool(0.5) { mag } else { -mag };
        }
    }
}

/// Two short episodes with random features and BOLD; the last subject (when
/// there are several) is absent from the second episode.
pub(crate) fn tiny_dataset(
    backbones: &[Backbone],
    subjects: usize,
    parcels: usize,
    trs: usize,
    seed: u64,
) -> Dataset {
    let mut rng = seeded(seed, streams::GRADCHECK);
    let mut rand_matrix =
        |r: usize, c: usize| Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0));
    let episodes = (0..2)
        .map(|e| Episode {
            id: EpisodeId::new(format!("gc-{e}"), "gc"),
            presentation: 1,
            stimulus: None,
            features: backbones.iter().map(|b| rand_matrix(trs, b.dim)).collect(),
            bold: (0..subjects)
                .map(|s| {
                    (e == 0 || s + 1 < subjects || subjects == 1).then(|| rand_matrix(trs, parcels))
                })
                .collect(),
        })
        .collect();
    Dataset {
        subjects,
        parcels,
        backbones: backbones.to_vec(),
        episodes,
        tr_seconds: DEFAULT_TR_SECONDS,
    }
}

/// A full-episode window and an interior window, so both zero padding and
/// context rows are exercised.
pub(crate) fn tiny_windows(trs: usize) -> Vec<Window> {
    vec![
        Window {
            episode: 0,
            start: 0,
            length: trs,
        },
        Window {
            episode: 1,
            start: trs / 4,
            length: trs / 2,
        },
    ]
}

fn variant_name(
    model: &str,
    kind: KernelType,
    mode: impl serde::Serialize + core::fmt::Debug,
) -> String {
    format!("{model}/{kind:?}/{mode:?}").to_lowercase()
}

/// Finite-difference check of the encoder gradient for each kernel type
/// (head mode and shapes taken from `config`) on a two-episode random batch
/// of 8 TRs.
pub fn grad_check(config: &EncoderConfig, tolerance: f64, seed: u64) -> Result<GradCheckReport> {
    config.validate()?;
    let trs = 8;
    let dataset = tiny_dataset(
        &config.backbones,
        config.subjects,
        config.parcels,
        trs,
        seed,
    );
    let windows = tiny_windows(trs);
    let mask = vec![true; config.subjects];
    let batch = Batch {
        dataset: &dataset,
        windows: &windows,
        subjects: &mask,
    };
    let mut entries = Vec::new();
    for kind in KernelType::ALL {
        let cfg = EncoderConfig {
            kernel_type: kind,
            ..config.clone()
        };
        let objective = EncoderObjective::new(cfg.clone());
        let mut params = EncoderParams::zeros(&cfg);
        randomize_away_from_zero(&mut params, &mut seeded(seed, streams::GRADCHECK + 1));
        entries.extend(check_objective(
            &objective,
            &params,
            &batch,
            tolerance,
            &variant_name("encoder", kind, cfg.head_mode),
        )?);
    }
    Ok(GradCheckReport { tolerance, entries })
}

/// The small configuration used for routine gradient checks.
pub fn tiny_encoder_config() -> EncoderConfig {
    EncoderConfig {
        backbones: vec![Backbone::new("a", 5), Backbone::new("b", 4)],
        embed_dim: 3,
        kernel_width: 3,
        kernel_type: KernelType::Default,
        head_mode: crate::encoder::HeadMode::GroupPlusSubject,
        subjects: 2,
        parcels: 4,
    }
}
