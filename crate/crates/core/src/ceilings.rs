//! Ceiling estimates: split-half correlation of repeated presentations and a
//! cross-subject model that predicts each subject from the others.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::conv::{context_range, DepthwiseConv, KernelType, Taps};
use crate::data::{Backbone, Window};
use crate::data::{Dataset, SplitSpec};
use crate::encoder::{HeadMode, Heads, DEFAULT_EMBED_DIM};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::metrics::{column_pearson, overall_mean, score, ParcelScores, Predictor};
use crate::params::{BlockRef, Linear, ParamBlocks};
use crate::rng::{seeded, streams};
use crate::trainer::encoder_loss::{residual_in_place, term_count};
use crate::trainer::gradcheck::{
    check_objective, randomize_away_from_zero, tiny_dataset, GradCheckReport,
};
use crate::trainer::{train_objective, Batch, Checkpoint, Objective, TrainConfig, TrainLog};

pub const DEFAULT_CROSS_KERNEL_WIDTH: usize = 9;

/// BOLD of one subject for two presentations of the same stimulus.
#[derive(Debug, Clone, PartialEq)]
pub struct RepeatPair {
    pub stimulus: String,
    pub movie: String,
    pub subject: usize,
    pub first: Matrix,
    pub second: Matrix,
}

/// Pairs every later presentation with the first presentation of its
/// stimulus, for each subject present in both.
pub fn repeat_pairs(dataset: &Dataset) -> Result<Vec<RepeatPair>> {
    let firsts: BTreeMap<&str, usize> = dataset
        .episodes
        .iter()
        .enumerate()
        .filter(|(_, e)| e.presentation <= 1)
        .map(|(i, e)| (e.stimulus_key(), i))
        .collect();
    let mut out = Vec::new();
    for ep in dataset.episodes.iter().filter(|e| e.presentation > 1) {
        let &i = firsts.get(ep.stimulus_key()).ok_or_else(|| {
            Error::InvalidConfig(format!("repeat `{}` has no first presentation", ep.id.name))
        })?;
        let first = &dataset.episodes[i];
        for s in 0..dataset.subjects {
            if let (Some(a), Some(b)) = (&first.bold[s], &ep.bold[s]) {
                out.push(RepeatPair {
                    stimulus: first.stimulus_key().into(),
                    movie: first.id.movie.clone(),
                    subject: s,
                    first: a.clone(),
                    second: b.clone(),
                });
            }
        }
    }
    Ok(out)
}

/// Per (subject, movie), the per-parcel Pearson r between the two
/// presentations, episodes concatenated in stimulus order.
pub fn split_half_ceiling(pairs: &[RepeatPair]) -> Result<Vec<ParcelScores>> {
    let mut cells: BTreeMap<(usize, &str), Vec<&RepeatPair>> = BTreeMap::new();
    for p in pairs {
        if p.first.shape() != p.second.shape() {
            return Err(Error::Shape(format!(
                "repeat of `{}` for subject {}: {:?} vs {:?}",
                p.stimulus,
                p.subject,
                p.first.shape(),
                p.second.shape()
            )));
        }
        cells
            .entry((p.subject, p.movie.as_str()))
            .or_default()
            .push(p);
    }
    cells
        .into_iter()
        .map(|((subject, movie), mut ps)| {
            ps.sort_by(|a, b| a.stimulus.cmp(&b.stimulus));
            let a = Matrix::vstack(ps.iter().map(|p| &p.first))?;
            let b = Matrix::vstack(ps.iter().map(|p| &p.second))?;
            Ok(ParcelScores {
                subject,
                movie: movie.into(),
                r: column_pearson(&a, &b)?,
                n_trs: a.rows(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossConfig {
    pub subjects: usize,
    pub parcels: usize,
    #[serde(default = "default_dim")]
    pub embed_dim: usize,
    #[serde(default = "default_width")]
    pub kernel_width: usize,
    #[serde(default)]
    pub kernel_type: KernelType,
    #[serde(default)]
    pub head_mode: HeadMode,
}

fn default_dim() -> usize {
    DEFAULT_EMBED_DIM
}
fn default_width() -> usize {
    DEFAULT_CROSS_KERNEL_WIDTH
}

impl CrossConfig {
    pub fn new(subjects: usize, parcels: usize) -> Self {
        Self {
            subjects,
            parcels,
            embed_dim: DEFAULT_EMBED_DIM,
            kernel_width: DEFAULT_CROSS_KERNEL_WIDTH,
            kernel_type: KernelType::default(),
            head_mode: HeadMode::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.subjects < 2 {
            return Err(Error::InvalidConfig(format!(
                "cross-subject model needs >= 2 subjects, got {}",
                self.subjects
            )));
        }
        if self.parcels == 0 || self.embed_dim == 0 {
            return Err(Error::InvalidConfig(
                "parcels and embed_dim must be >= 1".into(),
            ));
        }
        if self.kernel_width.is_multiple_of(2) && self.kernel_width != 0 {
            return Err(Error::InvalidConfig(format!(
                "kernel width must be 0 or odd, got {}",
                self.kernel_width
            )));
        }
        Ok(())
    }

    pub fn conv(&self) -> DepthwiseConv {
        DepthwiseConv::new(self.kernel_type, self.kernel_width, self.embed_dim)
    }

    pub fn check_dataset(&self, dataset: &Dataset) -> Result<()> {
        self.validate()?;
        if self.subjects != dataset.subjects || self.parcels != dataset.parcels {
            return Err(Error::Shape(format!(
                "config has {} subjects x {} parcels, dataset {} x {}",
                self.subjects, self.parcels, dataset.subjects, dataset.parcels
            )));
        }
        Ok(())
    }
}

/// Input projections `[P x d]` (shared + per-subject residual), per-subject
/// depthwise kernels and output heads.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossParams {
    pub input_group: Linear,
    pub input_subjects: Vec<Linear>,
    pub kernels: Vec<Matrix>,
    pub heads: Heads,
}

impl ParamBlocks for CrossParams {
    fn blocks(&self) -> Vec<BlockRef<'_>> {
        let mut out = Vec::new();
        self.input_group.push_blocks("input.group", &mut out);
        for (s, l) in self.input_subjects.iter().enumerate() {
            l.push_blocks(&format!("input.subject.{s}"), &mut out);
        }
        for (s, k) in self
            .kernels
            .iter()
            .enumerate()
            .filter(|(_, k)| k.cols() > 0)
        {
            out.push(BlockRef {
                name: format!("kernel.{s}"),
                shape: vec![k.rows(), k.cols()],
                values: k.as_slice(),
            });
        }
        self.heads.push_blocks(&mut out);
        out
    }

    fn blocks_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::new();
        self.input_group.push_blocks_mut("input.group", &mut out);
        for (s, l) in self.input_subjects.iter_mut().enumerate() {
            l.push_blocks_mut(&format!("input.subject.{s}"), &mut out);
        }
        for (s, k) in self
            .kernels
            .iter_mut()
            .enumerate()
            .filter(|(_, k)| k.cols() > 0)
        {
            out.push((format!("kernel.{s}"), k.as_mut_slice()));
        }
        self.heads.push_blocks_mut(&mut out);
        out
    }
}

impl CrossParams {
    pub fn zeros(config: &CrossConfig) -> Self {
        let (d, p) = (config.embed_dim, config.parcels);
        let (kr, kc) = config.conv().kernel_shape();
        Self {
            input_group: Linear::zeros(p, d),
            input_subjects: (0..config.subjects).map(|_| Linear::zeros(p, d)).collect(),
            kernels: (0..config.subjects)
                .map(|_| Matrix::zeros(kr, kc))
                .collect(),
            heads: Heads {
                group: config.head_mode.has_group().then(|| Linear::zeros(d, p)),
                subjects: if config.head_mode.has_subject() {
                    (0..config.subjects).map(|_| Linear::zeros(d, p)).collect()
                } else {
                    Vec::new()
                },
            },
        }
    }
}

/// Shared input projection and heads drawn fan-in uniform, residual input
/// projections zero, kernels delta.
pub fn cross_init(config: &CrossConfig, seed: u64) -> Result<CrossParams> {
    config.validate()?;
    let mut rng = seeded(seed, streams::INIT);
    let (d, p) = (config.embed_dim, config.parcels);
    let conv = config.conv();
    Ok(CrossParams {
        input_group: Linear::fan_in_uniform(p, d, &mut rng),
        input_subjects: (0..config.subjects).map(|_| Linear::zeros(p, d)).collect(),
        kernels: (0..config.subjects).map(|_| conv.delta_kernel()).collect(),
        heads: Heads::init(config.head_mode, config.subjects, d, p, &mut rng),
    })
}

struct CrossTape {
    lo: usize,
    start: usize,
    inputs: Vec<Matrix>,
    projected: Vec<Matrix>,
    taps: Vec<Taps>,
    embeddings: Vec<Matrix>,
}

fn check_bold(config: &CrossConfig, bold: &[&Matrix]) -> Result<usize> {
    if bold.len() != config.subjects {
        return Err(Error::Shape(format!(
            "{} BOLD series for {} subjects",
            bold.len(),
            config.subjects
        )));
    }
    let trs = bold[0].rows();
    if bold.iter().any(|b| b.shape() != (trs, config.parcels)) {
        return Err(Error::Shape(format!(
            "every subject needs a [{trs} x {}] series",
            config.parcels
        )));
    }
    Ok(trs)
}

fn embed_subjects(
    params: &CrossParams,
    config: &CrossConfig,
    bold: &[&Matrix],
    start: usize,
    end: usize,
) -> Result<CrossTape> {
    let trs = check_bold(config, bold)?;
    if start >= end || end > trs {
        return Err(Error::Length(format!(
            "rows [{start}, {end}) outside series of {trs}"
        )));
    }
    let conv = config.conv();
    let (lo, hi) = context_range(config.kernel_type, config.kernel_width, start, end, trs);
    let mut tape = CrossTape {
        lo,
        start,
        inputs: Vec::new(),
        projected: Vec::new(),
        taps: Vec::new(),
        embeddings: Vec::new(),
    };
    for (s, y) in bold.iter().enumerate() {
        let x = y.slice_rows(lo, hi);
        let own = &params.input_subjects[s];
        let mut z = x.matmul(&params.input_group.weight.add(&own.weight));
        z.add_row_vector(&params.input_group.bias);
        z.add_row_vector(&own.bias);
        let t = conv.taps(&params.kernels[s]);
        tape.embeddings
            .push(conv.forward(&t, &z, lo, start, end - start));
        tape.inputs.push(x);
        tape.projected.push(z);
        tape.taps.push(t);
    }
    Ok(tape)
}

/// Mean of every embedding except `subject`'s, summed in subject order.
fn pool_others(embeddings: &[Matrix], subject: usize) -> Matrix {
    let mut others = embeddings
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != subject)
        .map(|(_, e)| e);
    let mut acc = others.next().expect("at least two subjects").clone();
    for e in others {
        acc.add_assign(e);
    }
    let n = (embeddings.len() - 1) as f64;
    acc.as_mut_slice().iter_mut().for_each(|v| *v /= n);
    acc
}

/// Per-subject embeddings `[T x d]` (projection then depthwise filtering).
pub fn cross_embed(
    params: &CrossParams,
    config: &CrossConfig,
    bold: &[&Matrix],
) -> Result<Vec<Matrix>> {
    let trs = check_bold(config, bold)?;
    Ok(embed_subjects(params, config, bold, 0, trs)?.embeddings)
}

/// Leave-one-out pooled embedding for `subject`.
pub fn cross_pooled(
    params: &CrossParams,
    config: &CrossConfig,
    bold: &[&Matrix],
    subject: usize,
) -> Result<Matrix> {
    if subject >= config.subjects {
        return Err(Error::SubjectOutOfRange {
            subject,
            subjects: config.subjects,
        });
    }
    Ok(pool_others(&cross_embed(params, config, bold)?, subject))
}

/// Predicts `subject`'s BOLD from every other subject's BOLD.
pub fn cross_forward(
    params: &CrossParams,
    config: &CrossConfig,
    bold: &[&Matrix],
    subject: usize,
) -> Result<Matrix> {
    Ok(params
        .heads
        .predict(&cross_pooled(params, config, bold, subject)?, subject))
}

fn episode_bold(dataset: &Dataset, episode: usize) -> Result<Vec<&Matrix>> {
    (0..dataset.subjects)
        .map(|s| dataset.episodes[episode].bold_for(s))
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub struct CrossRef<'a> {
    pub config: &'a CrossConfig,
    pub params: &'a CrossParams,
}

impl Predictor for CrossRef<'_> {
    fn predict_episode(&self, dataset: &Dataset, episode: usize, subject: usize) -> Result<Matrix> {
        cross_forward(
            self.params,
            self.config,
            &episode_bold(dataset, episode)?,
            subject,
        )
    }

    fn predict_subjects(
        &self,
        dataset: &Dataset,
        episode: usize,
        subjects: &[usize],
    ) -> Result<Vec<Matrix>> {
        let embeddings = cross_embed(self.params, self.config, &episode_bold(dataset, episode)?)?;
        subjects
            .iter()
            .map(|&s| {
                if s >= self.config.subjects {
                    return Err(Error::SubjectOutOfRange {
                        subject: s,
                        subjects: self.config.subjects,
                    });
                }
                Ok(self.params.heads.predict(&pool_others(&embeddings, s), s))
            })
            .collect()
    }
}

fn evaluate(
    params: &CrossParams,
    config: &CrossConfig,
    batch: &Batch<'_>,
    want_grad: bool,
) -> Result<(f64, Option<CrossParams>)> {
    let n = term_count(batch, config.parcels)?;
    let scale = 2.0 / n as f64;
    let conv = config.conv();
    let subjects = config.subjects;
    let mut grads = want_grad.then(|| CrossParams::zeros(config));
    let mut sse = 0.0;
    for w in batch.windows {
        let bold = episode_bold(batch.dataset, w.episode)?;
        let tape = embed_subjects(params, config, &bold, w.start, w.end())?;
        let mut d_pooled: Vec<Option<Matrix>> = vec![None; subjects];
        for i in (0..subjects).filter(|&i| batch.subjects[i]) {
            let pooled = pool_others(&tape.embeddings, i);
            let mut r = params.heads.predict(&pooled, i);
            sse += residual_in_place(&mut r, bold[i], w.start);
            if let Some(g) = grads.as_mut() {
                r.scale(scale);
                let mut d = Matrix::zeros(w.length, config.embed_dim);
                params.heads.backward(&mut g.heads, &pooled, i, &r, &mut d);
                d_pooled[i] = Some(d);
            }
        }
        let Some(g) = grads.as_mut() else { continue };
        let n_others = (subjects - 1) as f64;
        for j in 0..subjects {
            let mut d_e = Matrix::zeros(w.length, config.embed_dim);
            for (i, d) in d_pooled.iter().enumerate() {
                if let Some(d) = d.as_ref().filter(|_| i != j) {
                    d_e.add_assign(d);
                }
            }
            d_e.scale(1.0 / n_others);
            let (d_z, d_taps) =
                conv.backward(&tape.taps[j], &tape.projected[j], tape.lo, tape.start, &d_e);
            if !conv.is_identity() {
                g.kernels[j].add_assign(&conv.kernel_grad(&params.kernels[j], &d_taps));
            }
            g.input_group.accumulate_grad(&tape.inputs[j], &d_z);
            g.input_subjects[j].accumulate_grad(&tape.inputs[j], &d_z);
        }
    }
    Ok((sse / n as f64, grads))
}

/// Mean squared error over target subjects, TRs and parcels.
pub fn cross_loss(params: &CrossParams, config: &CrossConfig, batch: &Batch<'_>) -> Result<f64> {
    Ok(evaluate(params, config, batch, false)?.0)
}

pub fn cross_backward(
    params: &CrossParams,
    config: &CrossConfig,
    batch: &Batch<'_>,
) -> Result<(f64, CrossParams)> {
    let (l, g) = evaluate(params, config, batch, true)?;
    Ok((l, g.expect("gradient requested")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossObjective {
    pub config: CrossConfig,
}

impl Objective for CrossObjective {
    type Params = CrossParams;

    fn init(&self, seed: u64) -> Result<CrossParams> {
        cross_init(&self.config, seed)
    }

    fn kernel_width(&self) -> usize {
        self.config.kernel_width
    }

    fn check_dataset(&self, dataset: &Dataset) -> Result<()> {
        self.config.check_dataset(dataset)
    }

    /// Inputs need every subject, so only fully observed episodes are used.
    fn window_usable(&self, dataset: &Dataset, episode: usize, active: &[bool]) -> bool {
        let ep = &dataset.episodes[episode];
        (0..dataset.subjects).all(|s| ep.subject_present(s)) && active.iter().any(|a| *a)
    }

    fn loss(&self, params: &CrossParams, batch: &Batch<'_>) -> Result<f64> {
        cross_loss(params, &self.config, batch)
    }

    fn loss_and_grad(&self, params: &CrossParams, batch: &Batch<'_>) -> Result<(f64, CrossParams)> {
        cross_backward(params, &self.config, batch)
    }

    fn validation_score(
        &self,
        params: &CrossParams,
        dataset: &Dataset,
        movies: &BTreeSet<String>,
        subjects: &[usize],
    ) -> Result<f64> {
        let model = CrossRef {
            config: &self.config,
            params,
        };
        overall_mean(&score(&model, dataset, movies, subjects)?)
    }
}

pub type CrossCheckpoint = Checkpoint<CrossConfig, CrossParams>;

impl CrossCheckpoint {
    pub fn predictor(&self) -> CrossRef<'_> {
        CrossRef {
            config: &self.model,
            params: &self.params,
        }
    }
}

/// Trains the cross-subject model with the shared training loop.
pub fn cross_train(
    dataset: &Dataset,
    split: &SplitSpec,
    config: &CrossConfig,
    train: &TrainConfig,
) -> Result<(CrossCheckpoint, TrainLog)> {
    let objective = CrossObjective {
        config: config.clone(),
    };
    let (params, best_score, best_step, log) = train_objective(&objective, dataset, split, train)?;
    Ok((
        Checkpoint {
            model: config.clone(),
            train: train.clone(),
            params,
            best_score,
            best_step,
        },
        log,
    ))
}

/// Finite-difference check of the cross-subject gradient for each kernel type
/// (head mode and shapes from `config`).
pub fn cross_grad_check(
    config: &CrossConfig,
    tolerance: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    config.validate()?;
    let trs = 8;
    let dataset = tiny_dataset(
        &[Backbone::new("unused", 1)],
        config.subjects,
        config.parcels,
        trs,
        seed,
    );
    let windows = [
        Window {
            episode: 0,
            start: 0,
            length: trs,
        },
        Window {
            episode: 0,
            start: trs / 4,
            length: trs / 2,
        },
    ];
    let mask = vec![true; config.subjects];
    let batch = Batch {
        dataset: &dataset,
        windows: &windows,
        subjects: &mask,
    };
    let mut entries = Vec::new();
    for kind in KernelType::ALL {
        let cfg = CrossConfig {
            kernel_type: kind,
            ..config.clone()
        };
        let objective = CrossObjective {
            config: cfg.clone(),
        };
        let mut params = CrossParams::zeros(&cfg);
        randomize_away_from_zero(&mut params, &mut seeded(seed, streams::GRADCHECK + 1));
        let variant = format!("cross/{kind:?}/{:?}", cfg.head_mode).to_lowercase();
        entries.extend(check_objective(
            &objective, &params, &batch, tolerance, &variant,
        )?);
    }
    Ok(GradCheckReport { tolerance, entries })
}

/// The small configuration used for routine gradient checks.
pub fn tiny_cross_config() -> CrossConfig {
    CrossConfig {
        subjects: 3,
        parcels: 4,
        embed_dim: 3,
        kernel_width: 3,
        kernel_type: KernelType::Default,
        head_mode: HeadMode::GroupPlusSubject,
    }
}

/// One row of a ceiling-minus-feature table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub subject: usize,
    pub movie: String,
    pub parcel: usize,
    pub feature: f64,
    pub ceiling: f64,
    pub gap: f64,
}

/// `ceiling r - feature r` per (subject, movie, parcel); both tables must
/// cover the same grid. Undefined correlations count as 0.
pub fn ceiling_gap(feature: &[ParcelScores], ceiling: &[ParcelScores]) -> Result<Vec<GapRow>> {
    let index = |t: &[ParcelScores]| -> Result<BTreeMap<(usize, String), ParcelScores>> {
        let mut m = BTreeMap::new();
        for s in t {
            if m.insert((s.subject, s.movie.clone()), s.clone()).is_some() {
                return Err(Error::GridMismatch(format!(
                    "duplicate cell ({}, {})",
                    s.subject, s.movie
                )));
            }
        }
        Ok(m)
    };
    let f = index(feature)?;
    let c = index(ceiling)?;
    if f.keys().ne(c.keys()) {
        return Err(Error::GridMismatch(
            "feature and ceiling tables cover different (subject, movie) cells".into(),
        ));
    }
    let mut rows = Vec::new();
    for ((subject, movie), fs) in &f {
        let cs = &c[&(*subject, movie.clone())];
        if fs.r.len() != cs.r.len() {
            return Err(Error::GridMismatch(format!(
                "parcel counts differ for ({subject}, {movie})"
            )));
        }
        for p in 0..fs.r.len() {
            let (fv, cv) = (fs.value(p), cs.value(p));
            rows.push(GapRow {
                subject: *subject,
                movie: movie.clone(),
                parcel: p,
                feature: fv,
                ceiling: cv,
                gap: cv - fv,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conv::convolve_full;
    use crate::data::{Episode, EpisodeId, DEFAULT_TR_SECONDS};
    use crate::synth::{synth_generate, SynthSpec};
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normal(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
    }

    fn pair(first: Matrix, second: Matrix) -> RepeatPair {
        RepeatPair {
            stimulus: "s".into(),
            movie: "m".into(),
            subject: 0,
            first,
            second,
        }
    }

    #[test]
    fn identical_repeats_correlate_perfectly() {
        let m = normal(50, 3, &mut seeded(1, 0));
        let r = split_half_ceiling(&[pair(m.clone(), m)]).unwrap();
        assert!(r[0].r.iter().all(|v| libm::fabs(v.unwrap() - 1.0) < 1e-12));
    }

    #[test]
    fn independent_repeats_are_uncorrelated() {
        let mut rng = seeded(2, 0);
        let r = split_half_ceiling(&[pair(
            normal(10_000, 20, &mut rng),
            normal(10_000, 20, &mut rng),
        )])
        .unwrap();
        assert!(libm::fabs(r[0].mean()) < 0.03);
    }

    #[test]
    fn shared_signal_unit_noise_gives_half() {
        // r = σ_s² / (σ_s² + σ_n²)
        let mut rng = seeded(3, 0);
        let s = normal(10_000, 10, &mut rng);
        let a = s.add(&normal(10_000, 10, &mut rng));
        let b = s.add(&normal(10_000, 10, &mut rng));
        let r = split_half_ceiling(&[pair(a.clone(), b.clone())]).unwrap();
        for v in &r[0].r {
            assert!(libm::fabs(v.unwrap() - 0.5) < 0.03, "{v:?}");
        }
        let swapped = split_half_ceiling(&[pair(b, a)]).unwrap();
        assert_eq!(r, swapped);
    }

    #[test]
    fn mismatched_repeat_shapes_are_rejected() {
        assert!(split_half_ceiling(&[pair(Matrix::zeros(4, 2), Matrix::zeros(5, 2))]).is_err());
    }

    #[test]
    fn repeat_pairs_from_presentation_index() {
        let mut spec = SynthSpec {
            noise_std: 1.0,
            ..SynthSpec::small(2)
        };
        spec.repeats = vec!["valid-01".into(), "test-01".into()];
        spec.absent.push(crate::synth::AbsentPair {
            episode: "test-01".into(),
            subject: 1,
        });
        let ds = synth_generate(&spec).unwrap().dataset;
        let pairs = repeat_pairs(&ds).unwrap();
        let keys: Vec<(&str, usize)> = pairs
            .iter()
            .map(|p| (p.stimulus.as_str(), p.subject))
            .collect();
        assert_eq!(keys, [("valid-01", 0), ("valid-01", 1), ("test-01", 0)]);
        let table = split_half_ceiling(&pairs).unwrap();
        assert_eq!(table.len(), 3);
        assert!(table.iter().all(|s| s.n_trs == 80));
    }

    fn random_params(config: &CrossConfig, seed: u64) -> CrossParams {
        let mut p = CrossParams::zeros(config);
        randomize_away_from_zero(&mut p, &mut seeded(seed, 5));
        p
    }

    fn bold(config: &CrossConfig, trs: usize, seed: u64) -> Vec<Matrix> {
        let mut rng = seeded(seed, 6);
        (0..config.subjects)
            .map(|_| normal(trs, config.parcels, &mut rng))
            .collect()
    }

    #[test]
    fn two_subject_pooling_is_the_other_embedding() {
        let cfg = CrossConfig {
            subjects: 2,
            ..tiny_cross_config()
        };
        let p = random_params(&cfg, 1);
        let ys = bold(&cfg, 12, 2);
        let refs: Vec<&Matrix> = ys.iter().collect();
        let e = cross_embed(&p, &cfg, &refs).unwrap();
        assert_eq!(cross_pooled(&p, &cfg, &refs, 0).unwrap(), e[1]);
        assert_eq!(cross_pooled(&p, &cfg, &refs, 1).unwrap(), e[0]);
        // swapping inputs swaps the pooled embeddings when per-subject parts agree
        let mut sym = p.clone();
        sym.input_subjects[1] = sym.input_subjects[0].clone();
        sym.kernels[1] = sym.kernels[0].clone();
        let swapped = [refs[1], refs[0]];
        assert_eq!(
            cross_pooled(&sym, &cfg, &swapped, 0).unwrap(),
            cross_pooled(&sym, &cfg, &refs, 1).unwrap()
        );
    }

    #[test]
    fn own_input_never_reaches_own_prediction() {
        for kind in KernelType::ALL {
            let cfg = CrossConfig {
                kernel_type: kind,
                ..tiny_cross_config()
            };
            let p = random_params(&cfg, 3);
            let ys = bold(&cfg, 10, 4);
            for i in 0..cfg.subjects {
                let base = cross_forward(&p, &cfg, &ys.iter().collect::<Vec<_>>(), i).unwrap();
                let mut perturbed = ys.clone();
                perturbed[i] = normal(10, cfg.parcels, &mut seeded(100 + i as u64, 0));
                perturbed[i].scale(1e6);
                let after =
                    cross_forward(&p, &cfg, &perturbed.iter().collect::<Vec<_>>(), i).unwrap();
                assert_eq!(
                    base.as_slice()
                        .iter()
                        .map(|v| v.to_bits())
                        .collect::<Vec<_>>(),
                    after
                        .as_slice()
                        .iter()
                        .map(|v| v.to_bits())
                        .collect::<Vec<_>>()
                );
            }
        }
    }

    #[test]
    fn forward_matches_direct_composition() {
        let cfg = tiny_cross_config();
        let p = random_params(&cfg, 7);
        let ys = bold(&cfg, 9, 8);
        let conv = cfg.conv();
        let embeddings: Vec<Matrix> = (0..cfg.subjects)
            .map(|s| {
                let mut z = ys[s]
                    .matmul(&p.input_group.weight)
                    .add(&ys[s].matmul(&p.input_subjects[s].weight));
                z.add_row_vector(&p.input_group.bias);
                z.add_row_vector(&p.input_subjects[s].bias);
                convolve_full(&conv, &p.kernels[s], &z)
            })
            .collect();
        for i in 0..cfg.subjects {
            let mut pooled = Matrix::zeros(9, cfg.embed_dim);
            for e in embeddings
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, e)| e)
            {
                pooled.add_assign(e);
            }
            pooled.scale(0.5);
            let g = p.heads.group.as_ref().unwrap();
            let h = &p.heads.subjects[i];
            let mut want = pooled.matmul(&g.weight).add(&pooled.matmul(&h.weight));
            want.add_row_vector(&g.bias);
            want.add_row_vector(&h.bias);
            let got = cross_forward(&p, &cfg, &ys.iter().collect::<Vec<_>>(), i).unwrap();
            for (a, b) in got.as_slice().iter().zip(want.as_slice()) {
                assert!(libm::fabs(a - b) < 1e-10);
            }
        }
    }

    #[test]
    fn cross_gradients_match_finite_differences() {
        for mode in HeadMode::ALL {
            let cfg = CrossConfig {
                head_mode: mode,
                ..tiny_cross_config()
            };
            let report = cross_grad_check(&cfg, 1e-4, 11).unwrap();
            assert!(
                report.all_passed(),
                "{:?}",
                report.failures().collect::<Vec<_>>()
            );
            assert_eq!(report, cross_grad_check(&cfg, 1e-4, 11).unwrap());
        }
    }

    #[test]
    fn config_and_input_errors() {
        assert!(CrossConfig {
            subjects: 1,
            ..tiny_cross_config()
        }
        .validate()
        .is_err());
        let cfg = tiny_cross_config();
        let p = random_params(&cfg, 1);
        let ys = bold(&cfg, 6, 1);
        assert!(cross_forward(&p, &cfg, &[&ys[0], &ys[1]], 0).is_err());
        assert!(cross_forward(&p, &cfg, &ys.iter().collect::<Vec<_>>(), 3).is_err());
    }

    fn identical_pair_dataset(
        trs_train: usize,
        trs_eval: usize,
        parcels: usize,
        seed: u64,
    ) -> Dataset {
        let mut rng = seeded(seed, 0);
        let mut ep = |name: &str, movie: &str, trs: usize| {
            let y = normal(trs, parcels, &mut rng);
            Episode {
                id: EpisodeId::new(name, movie),
                presentation: 1,
                stimulus: None,
                features: vec![Matrix::zeros(trs, 1)],
                bold: vec![Some(y.clone()), Some(y)],
            }
        };
        let episodes = vec![
            ep("a", "train", trs_train),
            ep("b", "valid", trs_eval),
            ep("c", "test", trs_eval),
        ];
        Dataset {
            subjects: 2,
            parcels,
            backbones: vec![Backbone::new("none", 1)],
            episodes,
            tr_seconds: DEFAULT_TR_SECONDS,
        }
    }

    #[test]
    fn identical_subjects_are_reconstructed() {
        let ds = identical_pair_dataset(600, 200, 6, 1);
        let split = SplitSpec::new(["train"], ["valid"], ["test"]);
        let cfg = CrossConfig {
            embed_dim: 8,
            kernel_width: 3,
            ..CrossConfig::new(2, 6)
        };
        let tc = TrainConfig {
            max_steps: 400,
            lr: 1e-2,
            weight_decay: 0.0,
            batch_size: 4,
            window_length: 32,
            eval_every: 100,
            ..TrainConfig::default()
        };
        let (ckpt, _) = cross_train(&ds, &split, &cfg, &tc).unwrap();
        let test: BTreeSet<String> = ["test".into()].into();
        let r = overall_mean(&score(&ckpt.predictor(), &ds, &test, &[0, 1]).unwrap()).unwrap();
        assert!(r >= 0.99, "r = {r}");
        let (again, _) = cross_train(&ds, &split, &cfg, &tc).unwrap();
        assert_eq!(again, ckpt);
    }

    #[test]
    fn shared_latent_is_partly_recoverable() {
        // y_s = shared + private, equal variances: cross r stays below the
        // split-half value 0.5 but clearly above 0
        let (trs, parcels) = (1500, 5);
        let mut rng = seeded(9, 0);
        let shared: Vec<Matrix> = [trs, 300, 300]
            .iter()
            .map(|&t| normal(t, parcels, &mut rng))
            .collect();
        let episodes = ["train", "valid", "test"]
            .iter()
            .zip(&shared)
            .map(|(m, s)| Episode {
                id: EpisodeId::new(*m, *m),
                presentation: 1,
                stimulus: None,
                features: vec![Matrix::zeros(s.rows(), 1)],
                bold: (0..4)
                    .map(|_| Some(s.add(&normal(s.rows(), parcels, &mut rng))))
                    .collect(),
            })
            .collect();
        let ds = Dataset {
            subjects: 4,
            parcels,
            backbones: vec![Backbone::new("none", 1)],
            episodes,
            tr_seconds: DEFAULT_TR_SECONDS,
        };
        let split = SplitSpec::new(["train"], ["valid"], ["test"]);
        let cfg = CrossConfig {
            embed_dim: 8,
            kernel_width: 3,
            ..CrossConfig::new(4, parcels)
        };
        let tc = TrainConfig {
            max_steps: 300,
            lr: 1e-2,
            weight_decay: 0.0,
            batch_size: 4,
            window_length: 32,
            eval_every: 50,
            ..TrainConfig::default()
        };
        let (ckpt, _) = cross_train(&ds, &split, &cfg, &tc).unwrap();
        let test: BTreeSet<String> = ["test".into()].into();
        let r =
            overall_mean(&score(&ckpt.predictor(), &ds, &test, &[0, 1, 2, 3]).unwrap()).unwrap();
        // pooled mean of 3 others: corr(s + n_i, s + mean n) = 1 / sqrt(2 (1 + 1/3)) ≈ 0.612
        assert!(r > 0.3 && r < 0.62 + 0.05, "r = {r}");
    }

    #[test]
    fn gap_table() {
        let cell = |r: &[f64]| ParcelScores {
            subject: 0,
            movie: "m".into(),
            r: r.iter().map(|v| Some(*v)).collect(),
            n_trs: 3,
        };
        let same = ceiling_gap(&[cell(&[0.1, 0.2])], &[cell(&[0.1, 0.2])]).unwrap();
        assert!(same.iter().all(|g| g.gap == 0.0));
        let g = ceiling_gap(&[cell(&[0.3])], &[cell(&[0.5])]).unwrap();
        assert!(libm::fabs(g[0].gap - 0.2) < 1e-15);
        assert!(ceiling_gap(&[cell(&[0.3])], &[cell(&[0.5, 0.1])]).is_err());
        let other = ParcelScores {
            subject: 1,
            ..cell(&[0.5])
        };
        assert!(ceiling_gap(&[cell(&[0.3])], &[other]).is_err());
    }

    proptest! {
        #[test]
        fn gap_matches_elementwise_oracle(seed in 0u64..1000) {
            let mut rng = seeded(seed, 1);
            let table = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<ParcelScores> {
                (0..2).flat_map(|s| ["x", "y"].map(|m| ParcelScores {
                    subject: s,
                    movie: m.into(),
                    r: (0..4).map(|_| if rng.random_bool(0.1) { None } else { Some(rng.random_range(-1.0..1.0)) }).collect(),
                    n_trs: 9,
                }).into_iter().collect::<Vec<_>>()).collect()
            };
            let f = table(&mut rng);
            let c = table(&mut rng);
            let rows = ceiling_gap(&f, &c).unwrap();
            prop_assert_eq!(rows.len(), 16);
            for row in rows {
                let fs = f.iter().find(|s| s.subject == row.subject && s.movie == row.movie).unwrap();
                let cs = c.iter().find(|s| s.subject == row.subject && s.movie == row.movie).unwrap();
                prop_assert_eq!(row.gap, cs.r[row.parcel].unwrap_or(0.0) - fs.r[row.parcel].unwrap_or(0.0));
            }
        }
    }
}
