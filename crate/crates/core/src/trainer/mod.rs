//! Minibatch training with AdamW and validation-based early stopping.
//!
//! The loop is shared by every model through [`Objective`]; the feature
//! encoder's objective lives in [`encoder_loss`].

mod adamw;
pub mod encoder_loss;
pub mod gradcheck;

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub use adamw::{adamw_step, OptimizerState, DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_EPS};
pub use encoder_loss::{backward, loss, EncoderObjective};
pub use gradcheck::{grad_check, BlockCheck, GradCheckReport};

use crate::data::{make_windows, Dataset, SplitSpec, Window, DEFAULT_WINDOW_LENGTH};
use crate::encoder::{EncoderConfig, EncoderParams, EncoderRef};
use crate::error::{Error, Result};
use crate::params::ParamBlocks;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubjectsMode {
    /// Every subject contributes to each batch.
    #[default]
    Multi,
    /// Only the given subject's data is used.
    Single(usize),
}

impl SubjectsMode {
    pub fn mask(self, subjects: usize) -> Result<Vec<bool>> {
        match self {
            SubjectsMode::Multi => Ok(vec![true; subjects]),
            SubjectsMode::Single(s) if s < subjects => Ok((0..subjects).map(|i| i == s).collect()),
            SubjectsMode::Single(s) => Err(Error::SubjectOutOfRange {
                subject: s,
                subjects,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_steps: usize,
    pub batch_size: usize,
    pub window_length: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub eval_every: usize,
    pub seed: u64,
    pub subjects_mode: SubjectsMode,
    pub early_stopping: bool,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_steps: 1200,
            batch_size: 16,
            window_length: DEFAULT_WINDOW_LENGTH,
            lr: 3e-4,
            weight_decay: 1e-2,
            eval_every: 50,
            seed: 0,
            subjects_mode: SubjectsMode::Multi,
            early_stopping: true,
            beta1: DEFAULT_BETA1,
            beta2: DEFAULT_BETA2,
            eps: DEFAULT_EPS,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.window_length == 0 || self.eval_every == 0 {
            return Err(Error::InvalidConfig(
                "batch_size, window_length and eval_every must be >= 1".into(),
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite())
            || !(self.weight_decay >= 0.0 && self.weight_decay.is_finite())
        {
            return Err(Error::InvalidConfig(format!(
                "need lr > 0 and weight_decay >= 0, got {} / {}",
                self.lr, self.weight_decay
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0
        {
            return Err(Error::InvalidConfig(
                "AdamW betas must be in [0, 1) and eps > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Windows plus the subjects whose BOLD enters the loss.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub dataset: &'a Dataset,
    pub windows: &'a [Window],
    /// Length = subject count; `false` masks the subject out of the loss.
    pub subjects: &'a [bool],
}

/// A trainable model: parameter initialization, minibatch loss/gradient and
/// validation scoring.
pub trait Objective {
    type Params: ParamBlocks;

    fn init(&self, seed: u64) -> Result<Self::Params>;

    /// Longest temporal kernel; windows must be at least this long.
    fn kernel_width(&self) -> usize;

    fn check_dataset(&self, dataset: &Dataset) -> Result<()>;

    /// Whether a window of `episode` contributes any loss term.
    fn window_usable(&self, dataset: &Dataset, episode: usize, active: &[bool]) -> bool;

    fn loss(&self, params: &Self::Params, batch: &Batch<'_>) -> Result<f64>;

    fn loss_and_grad(
        &self,
        params: &Self::Params,
        batch: &Batch<'_>,
    ) -> Result<(f64, Self::Params)>;

    /// Overall mean Pearson on `movies` for `subjects`.
    fn validation_score(
        &self,
        params: &Self::Params,
        dataset: &Dataset,
        movies: &BTreeSet<String>,
        subjects: &[usize],
    ) -> Result<f64>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalEntry {
    pub step: usize,
    pub validation_r: f64,
    pub train_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub evals: Vec<EvalEntry>,
    /// Minibatch loss at every step.
    pub losses: Vec<f64>,
}

/// Trained parameters with the configuration that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<C, P> {
    pub model: C,
    pub train: TrainConfig,
    pub params: P,
    /// Best validation mean Pearson; `None` if never evaluated.
    pub best_score: Option<f64>,
    /// Step of `params` (0 = initialization).
    pub best_step: usize,
}

pub type EncoderCheckpoint = Checkpoint<EncoderConfig, EncoderParams>;

impl EncoderCheckpoint {
    pub fn predictor(&self) -> EncoderRef<'_> {
        EncoderRef {
            config: &self.model,
            params: &self.params,
        }
    }
}

fn epoch_seed(seed: u64, epoch: u64) -> u64 {
    seed ^ epoch.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Runs the shared training loop for `objective`.
pub fn train_objective<O: Objective>(
    objective: &O,
    dataset: &Dataset,
    split: &SplitSpec,
    config: &TrainConfig,
) -> Result<(O::Params, Option<f64>, usize, TrainLog)> {
    config.validate()?;
    split.validate_against(dataset)?;
    objective.check_dataset(dataset)?;
    if config.window_length < objective.kernel_width() {
        return Err(Error::InvalidConfig(format!(
            "window length {} shorter than kernel width {}",
            config.window_length,
            objective.kernel_width()
        )));
    }
    if config.early_stopping && split.validation.is_empty() {
        return Err(Error::EmptySplit(
            "early stopping needs validation movies".into(),
        ));
    }
    let active = config.subjects_mode.mask(dataset.subjects)?;
    let active_ids: Vec<usize> = (0..dataset.subjects).filter(|&s| active[s]).collect();

    let mut params = objective.init(config.seed)?;
    let mut log = TrainLog::default();
    if config.max_steps == 0 {
        return Ok((params, None, 0, log));
    }

    let mut epoch = 0u64;
    let mut queue: Vec<Window> = Vec::new();
    let refill = |epoch: &mut u64, queue: &mut Vec<Window>| -> Result<()> {
        let plan = make_windows(
            dataset,
            split,
            config.window_length,
            epoch_seed(config.seed, *epoch),
        )?;
        *epoch += 1;
        queue.extend(
            plan.windows
                .into_iter()
                .rev()
                .filter(|w| objective.window_usable(dataset, w.episode, &active)),
        );
        if queue.is_empty() {
            return Err(Error::EmptyBatch(
                "no train window has data for the trained subjects".into(),
            ));
        }
        Ok(())
    };

    let mut state = OptimizerState::new(&params, config.beta1, config.beta2, config.eps);
    let mut best: Option<(f64, usize, O::Params)> = None;
    let mut batch = Vec::with_capacity(config.batch_size);
    for step in 1..=config.max_steps {
        batch.clear();
        while batch.len() < config.batch_size {
            if queue.is_empty() {
                refill(&mut epoch, &mut queue)?;
            }
            batch.push(queue.pop().expect("queue refilled"));
        }
        let b = Batch {
            dataset,
            windows: &batch,
            subjects: &active,
        };
        let (loss, grads) = objective.loss_and_grad(&params, &b)?;
        adamw_step(
            &mut params,
            &grads,
            &mut state,
            config.lr,
            config.weight_decay,
        )?;
        log.losses.push(loss);

        if config.early_stopping && (step % config.eval_every == 0 || step == config.max_steps) {
            let score =
                objective.validation_score(&params, dataset, &split.validation, &active_ids)?;
            log.evals.push(EvalEntry {
                step,
                validation_r: score,
                train_loss: loss,
            });
            if best.as_ref().is_none_or(|(b, _, _)| score > *b) {
                best = Some((score, step, params.clone()));
            }
        }
    }
    Ok(match best {
        Some((score, step, p)) => (p, Some(score), step, log),
        None => (params, None, config.max_steps, log),
    })
}

/// Trains the feature encoder on the train movies of `split`, early-stopping
/// on its validation movies.
pub fn train(
    dataset: &Dataset,
    split: &SplitSpec,
    encoder: &EncoderConfig,
    config: &TrainConfig,
) -> Result<(EncoderCheckpoint, TrainLog)> {
    let objective = EncoderObjective::new(encoder.clone());
    let (params, best_score, best_step, log) = train_objective(&objective, dataset, split, config)?;
    Ok((
        Checkpoint {
            model: encoder.clone(),
            train: config.clone(),
            params,
            best_score,
            best_step,
        },
        log,
    ))
}
