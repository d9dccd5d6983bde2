//! Mean squared error of the feature encoder and its analytic gradient.

use alloc::collections::BTreeSet;
use alloc::string::String;

use super::{Batch, Objective};
use crate::data::Dataset;
use crate::encoder::{embed_rows, init_params, EncoderConfig, EncoderParams, EncoderRef};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::metrics::{overall_mean, score};

/// Number of squared-error terms in the batch: TRs x parcels over present,
/// unmasked subjects.
pub(crate) fn term_count(batch: &Batch<'_>, parcels: usize) -> Result<usize> {
    if batch.windows.is_empty() {
        return Err(Error::EmptyBatch("batch has no windows".into()));
    }
    if batch.subjects.len() != batch.dataset.subjects {
        return Err(Error::Shape("subject mask does not match dataset".into()));
    }
    let mut n = 0;
    for w in batch.windows {
        let ep = &batch.dataset.episodes[w.episode];
        if w.end() > ep.trs() {
            return Err(Error::Length(alloc::format!(
                "window [{}, {}) past end of `{}`",
                w.start,
                w.end(),
                ep.id.name
            )));
        }
        let present = (0..batch.dataset.subjects)
            .filter(|&s| batch.subjects[s] && ep.subject_present(s))
            .count();
        n += present * w.length * parcels;
    }
    if n == 0 {
        return Err(Error::EmptyBatch(
            "every subject is masked or absent".into(),
        ));
    }
    Ok(n)
}

/// Writes `pred - target[start..]` into `pred`, returning the squared sum.
pub(crate) fn residual_in_place(pred: &mut Matrix, target: &Matrix, start: usize) -> f64 {
    let mut sse = 0.0;
    for i in 0..pred.rows() {
        for (p, y) in pred.row_mut(i).iter_mut().zip(target.row(start + i)) {
            *p -= y;
            sse += *p * *p;
        }
    }
    sse
}

fn evaluate(
    params: &EncoderParams,
    config: &EncoderConfig,
    batch: &Batch<'_>,
    want_grad: bool,
) -> Result<(f64, Option<EncoderParams>)> {
    let n = term_count(batch, config.parcels)?;
    let scale = 2.0 / n as f64;
    let labels = config.labels();
    let conv = config.conv();
    let mut grads = want_grad.then(|| EncoderParams::zeros(config));
    let mut sse = 0.0;
    for w in batch.windows {
        let ep = &batch.dataset.episodes[w.episode];
        let features = batch.dataset.features_for(w.episode, &labels)?;
        let tape = embed_rows(params, config, &features, w.start, w.end())?;
        let mut d_embedding = Matrix::zeros(w.length, config.embed_dim);
        for s in 0..batch.dataset.subjects {
            let Some(target) = ep.bold[s].as_ref().filter(|_| batch.subjects[s]) else {
                continue;
            };
            let mut r = params.heads.predict(&tape.embedding, s);
            sse += residual_in_place(&mut r, target, w.start);
            if let Some(g) = grads.as_mut() {
                r.scale(scale);
                params
                    .heads
                    .backward(&mut g.heads, &tape.embedding, s, &r, &mut d_embedding);
            }
        }
        if let Some(g) = grads.as_mut() {
            for m in 0..config.backbones.len() {
                let (d_z, d_taps) = conv.backward(
                    &tape.taps[m],
                    &tape.projected[m],
                    tape.lo,
                    tape.start,
                    &d_embedding,
                );
                if !conv.is_identity() {
                    g.kernels[m].add_assign(&conv.kernel_grad(&params.kernels[m], &d_taps));
                }
                g.projections[m].accumulate_grad(&tape.inputs[m], &d_z);
            }
        }
    }
    Ok((sse / n as f64, grads))
}

/// Mean squared error over TRs, parcels and present unmasked subjects.
pub fn loss(params: &EncoderParams, config: &EncoderConfig, batch: &Batch<'_>) -> Result<f64> {
    Ok(evaluate(params, config, batch, false)?.0)
}

/// Loss and its exact gradient with respect to every parameter block.
pub fn backward(
    params: &EncoderParams,
    config: &EncoderConfig,
    batch: &Batch<'_>,
) -> Result<(f64, EncoderParams)> {
    let (l, g) = evaluate(params, config, batch, true)?;
    Ok((l, g.expect("gradient requested")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderObjective {
    pub config: EncoderConfig,
}

impl EncoderObjective {
    pub fn new(config: EncoderConfig) -> Self {
        Self { config }
    }
}

impl Objective for EncoderObjective {
    type Params = EncoderParams;

    fn init(&self, seed: u64) -> Result<EncoderParams> {
        init_params(&self.config, seed)
    }

    fn kernel_width(&self) -> usize {
        self.config.kernel_width
    }

    fn check_dataset(&self, dataset: &Dataset) -> Result<()> {
        self.config.check_dataset(dataset)
    }

    fn window_usable(&self, dataset: &Dataset, episode: usize, active: &[bool]) -> bool {
        let ep = &dataset.episodes[episode];
        (0..dataset.subjects).any(|s| active[s] && ep.subject_present(s))
    }

    fn loss(&self, params: &EncoderParams, batch: &Batch<'_>) -> Result<f64> {
        loss(params, &self.config, batch)
    }

    fn loss_and_grad(
        &self,
        params: &EncoderParams,
        batch: &Batch<'_>,
    ) -> Result<(f64, EncoderParams)> {
        backward(params, &self.config, batch)
    }

    fn validation_score(
        &self,
        params: &EncoderParams,
        dataset: &Dataset,
        movies: &BTreeSet<String>,
        subjects: &[usize],
    ) -> Result<f64> {
        let model = EncoderRef {
            config: &self.config,
            params,
        };
        let scores = score(&model, dataset, movies, subjects)?;
        if scores.is_empty() {
            return Err(Error::EmptySplit(
                "validation movies have no data for the trained subjects".into(),
            ));
        }
        overall_mean(&scores)
    }
}
