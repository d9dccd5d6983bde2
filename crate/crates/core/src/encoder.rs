//! Feature-encoding model: per-backbone linear projection to a shared latent
//! width, depthwise temporal convolution per backbone, summation across
//! backbones, then a group head shared by all subjects plus per-subject
//! residual heads applied frame by frame.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::conv::{context_range, DepthwiseConv, KernelType, Taps};
use crate::data::{Backbone, Dataset};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::metrics::Predictor;
use crate::params::{BlockRef, Linear, ParamBlocks};
use crate::rng::{seeded, streams};

pub const DEFAULT_EMBED_DIM: usize = 192;
pub const DEFAULT_KERNEL_WIDTH: usize = 45;
pub const DEFAULT_PARCELS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadMode {
    GroupOnly,
    SubjectOnly,
    #[default]
    GroupPlusSubject,
}

impl HeadMode {
    pub const ALL: [HeadMode; 3] = [
        HeadMode::GroupOnly,
        HeadMode::SubjectOnly,
        HeadMode::GroupPlusSubject,
    ];

    pub fn has_group(self) -> bool {
        self != HeadMode::SubjectOnly
    }

    pub fn has_subject(self) -> bool {
        self != HeadMode::GroupOnly
    }
}

/// Group head plus per-subject residual heads, `[d x P]` each.
#[derive(Debug, Clone, PartialEq)]
pub struct Heads {
    pub group: Option<Linear>,
    pub subjects: Vec<Linear>,
}

impl Heads {
    pub(crate) fn init(
        mode: HeadMode,
        subjects: usize,
        dim: usize,
        parcels: usize,
        rng: &mut impl rand::Rng,
    ) -> Self {
        let group = mode
            .has_group()
            .then(|| Linear::fan_in_uniform(dim, parcels, rng));
        let subjects = if mode.has_subject() {
            (0..subjects)
                .map(|_| Linear::fan_in_uniform(dim, parcels, rng))
                .collect()
        } else {
            Vec::new()
        };
        Self { group, subjects }
    }

    /// Combined weight and bias used for `subject`.
    pub(crate) fn combined(&self, subject: usize) -> (Matrix, Vec<f64>) {
        match (&self.group, self.subjects.get(subject)) {
            (Some(g), Some(h)) => (
                g.weight.add(&h.weight),
                g.bias.iter().zip(&h.bias).map(|(a, b)| a + b).collect(),
            ),
            (Some(g), None) => (g.weight.clone(), g.bias.clone()),
            (None, Some(h)) => (h.weight.clone(), h.bias.clone()),
            (None, None) => unreachable!("head mode always has a head"),
        }
    }

    pub fn predict(&self, embedding: &Matrix, subject: usize) -> Matrix {
        let (w, b) = self.combined(subject);
        let mut out = embedding.matmul(&w);
        out.add_row_vector(&b);
        out
    }

    /// Accumulates head gradients for residual `r` of `subject`, returning the
    /// embedding gradient contribution `r Vᵀ`.
    pub(crate) fn backward(
        &self,
        grads: &mut Heads,
        embedding: &Matrix,
        subject: usize,
        r: &Matrix,
        d_embedding: &mut Matrix,
    ) {
        if let Some(g) = grads.group.as_mut() {
            g.accumulate_grad(embedding, r);
        }
        if let Some(h) = grads.subjects.get_mut(subject) {
            h.accumulate_grad(embedding, r);
        }
        let (w, _) = self.combined(subject);
        r.accumulate_matmul_transpose(&w, d_embedding);
    }

    pub(crate) fn push_blocks<'a>(&'a self, out: &mut Vec<BlockRef<'a>>) {
        if let Some(g) = &self.group {
            g.push_blocks("group", out);
        }
        for (s, h) in self.subjects.iter().enumerate() {
            h.push_blocks(&format!("subject.{s}"), out);
        }
    }

    pub(crate) fn push_blocks_mut<'a>(&'a mut self, out: &mut Vec<(String, &'a mut [f64])>) {
        if let Some(g) = &mut self.group {
            g.push_blocks_mut("group", out);
        }
        for (s, h) in self.subjects.iter_mut().enumerate() {
            h.push_blocks_mut(&format!("subject.{s}"), out);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub backbones: Vec<Backbone>,
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
    /// Temporal kernel width in TRs; 0 disables the convolution.
    #[serde(default = "default_kernel_width")]
    pub kernel_width: usize,
    #[serde(default)]
    pub kernel_type: KernelType,
    #[serde(default)]
    pub head_mode: HeadMode,
    pub subjects: usize,
    #[serde(default = "default_parcels")]
    pub parcels: usize,
}

fn default_embed_dim() -> usize {
    DEFAULT_EMBED_DIM
}
fn default_kernel_width() -> usize {
    DEFAULT_KERNEL_WIDTH
}
fn default_parcels() -> usize {
    DEFAULT_PARCELS
}

impl EncoderConfig {
    /// Defaults for every field except the data-dependent ones.
    pub fn new(backbones: Vec<Backbone>, subjects: usize, parcels: usize) -> Self {
        Self {
            backbones,
            embed_dim: DEFAULT_EMBED_DIM,
            kernel_width: DEFAULT_KERNEL_WIDTH,
            kernel_type: KernelType::Default,
            head_mode: HeadMode::GroupPlusSubject,
            subjects,
            parcels,
        }
    }

    /// Config matching a dataset's backbones, subjects and parcels.
    pub fn for_dataset(dataset: &Dataset) -> Self {
        Self::new(dataset.backbones.clone(), dataset.subjects, dataset.parcels)
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.subjects == 0 || self.parcels == 0 {
            return Err(Error::InvalidConfig(
                "embed_dim, subjects and parcels must be >= 1".into(),
            ));
        }
        if self.kernel_width != 0 && self.kernel_width.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!(
                "kernel width must be 0 or odd, got {}",
                self.kernel_width
            )));
        }
        if self.backbones.is_empty() || self.backbones.iter().any(|b| b.dim == 0) {
            return Err(Error::InvalidConfig(
                "need at least one backbone with dim >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn labels(&self) -> Vec<String> {
        self.backbones.iter().map(|b| b.label.clone()).collect()
    }

    pub fn conv(&self) -> DepthwiseConv {
        DepthwiseConv::new(self.kernel_type, self.kernel_width, self.embed_dim)
    }

    /// Checks that this config can be applied to `dataset`.
    pub fn check_dataset(&self, dataset: &Dataset) -> Result<()> {
        self.validate()?;
        if self.subjects != dataset.subjects || self.parcels != dataset.parcels {
            return Err(Error::Shape(format!(
                "config has {} subjects x {} parcels, dataset {} x {}",
                self.subjects, self.parcels, dataset.subjects, dataset.parcels
            )));
        }
        for b in &self.backbones {
            let i = dataset.backbone_index(&b.label)?;
            if dataset.backbones[i].dim != b.dim {
                return Err(Error::Shape(format!(
                    "backbone `{}` has dim {} in config, {} in dataset",
                    b.label, b.dim, dataset.backbones[i].dim
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    /// Per backbone, `[D_m x d]`.
    pub projections: Vec<Linear>,
    /// Per backbone, `[d x K]` (`[1 x K]` when tied).
    pub kernels: Vec<Matrix>,
    pub heads: Heads,
}

impl ParamBlocks for EncoderParams {
    fn blocks(&self) -> Vec<BlockRef<'_>> {
        let mut out = Vec::new();
        for (m, p) in self.projections.iter().enumerate() {
            p.push_blocks(&format!("projection.{m}"), &mut out);
        }
        for (m, k) in self.kernels.iter().enumerate() {
            if k.cols() > 0 {
                out.push(BlockRef {
                    name: format!("kernel.{m}"),
                    shape: alloc::vec![k.rows(), k.cols()],
                    values: k.as_slice(),
                });
            }
        }
        self.heads.push_blocks(&mut out);
        out
    }

    fn blocks_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::new();
        for (m, p) in self.projections.iter_mut().enumerate() {
            p.push_blocks_mut(&format!("projection.{m}"), &mut out);
        }
        for (m, k) in self.kernels.iter_mut().enumerate() {
            if k.cols() > 0 {
                out.push((format!("kernel.{m}"), k.as_mut_slice()));
            }
        }
        self.heads.push_blocks_mut(&mut out);
        out
    }
}

impl EncoderParams {
    /// All-zero parameters with the shapes `config` implies.
    pub fn zeros(config: &EncoderConfig) -> Self {
        let d = config.embed_dim;
        let conv = config.conv();
        let (kr, kc) = conv.kernel_shape();
        Self {
            projections: config
                .backbones
                .iter()
                .map(|b| Linear::zeros(b.dim, d))
                .collect(),
            kernels: config
                .backbones
                .iter()
                .map(|_| Matrix::zeros(kr, kc))
                .collect(),
            heads: Heads {
                group: config
                    .head_mode
                    .has_group()
                    .then(|| Linear::zeros(d, config.parcels)),
                subjects: if config.head_mode.has_subject() {
                    (0..config.subjects)
                        .map(|_| Linear::zeros(d, config.parcels))
                        .collect()
                } else {
                    Vec::new()
                },
            },
        }
    }

    pub fn check_shapes(&self, config: &EncoderConfig) -> Result<()> {
        let expected = Self::zeros(config);
        let ours = self.blocks();
        let theirs = expected.blocks();
        if ours.len() != theirs.len()
            || ours
                .iter()
                .zip(&theirs)
                .any(|(a, b)| a.name != b.name || a.shape != b.shape)
        {
            return Err(Error::Shape(
                "encoder parameters do not match config".into(),
            ));
        }
        Ok(())
    }
}

/// Projections and heads fan-in uniform, kernels one-hot on the identity tap,
/// biases zero.
pub fn init_params(config: &EncoderConfig, seed: u64) -> Result<EncoderParams> {
    config.validate()?;
    let mut rng = seeded(seed, streams::INIT);
    let d = config.embed_dim;
    let projections = config
        .backbones
        .iter()
        .map(|b| Linear::fan_in_uniform(b.dim, d, &mut rng))
        .collect();
    let conv = config.conv();
    let kernels = config
        .backbones
        .iter()
        .map(|_| conv.delta_kernel())
        .collect();
    let heads = Heads::init(
        config.head_mode,
        config.subjects,
        d,
        config.parcels,
        &mut rng,
    );
    Ok(EncoderParams {
        projections,
        kernels,
        heads,
    })
}

/// Intermediates of one embedding pass over output rows `[start, end)`.
pub(crate) struct EmbedTape {
    pub lo: usize,
    pub start: usize,
    /// Per backbone: context rows of the input and their projections.
    pub inputs: Vec<Matrix>,
    pub projected: Vec<Matrix>,
    pub taps: Vec<Taps>,
    pub embedding: Matrix,
}

fn check_features(config: &EncoderConfig, features: &[&Matrix]) -> Result<usize> {
    if features.len() != config.backbones.len() {
        return Err(Error::Shape(format!(
            "{} feature series for {} backbones",
            features.len(),
            config.backbones.len()
        )));
    }
    let trs = features[0].rows();
    for (x, b) in features.iter().zip(&config.backbones) {
        if x.cols() != b.dim {
            return Err(Error::Shape(format!(
                "backbone `{}` expects dim {}, got {}",
                b.label,
                b.dim,
                x.cols()
            )));
        }
        if x.rows() != trs {
            return Err(Error::Shape(
                "feature series of one episode differ in length".into(),
            ));
        }
    }
    Ok(trs)
}

pub(crate) fn embed_rows(
    params: &EncoderParams,
    config: &EncoderConfig,
    features: &[&Matrix],
    start: usize,
    end: usize,
) -> Result<EmbedTape> {
    let trs = check_features(config, features)?;
    if start >= end || end > trs {
        return Err(Error::Length(format!(
            "rows [{start}, {end}) outside series of {trs}"
        )));
    }
    let conv = config.conv();
    let (lo, hi) = context_range(config.kernel_type, config.kernel_width, start, end, trs);
    let mut embedding = Matrix::zeros(end - start, config.embed_dim);
    let mut inputs = Vec::with_capacity(features.len());
    let mut projected = Vec::with_capacity(features.len());
    let mut taps = Vec::with_capacity(features.len());
    for ((x, proj), kernel) in features
        .iter()
        .zip(&params.projections)
        .zip(&params.kernels)
    {
        let x_ctx = x.slice_rows(lo, hi);
        let z = proj.forward(&x_ctx);
        let t = conv.taps(kernel);
        embedding.add_assign(&conv.forward(&t, &z, lo, start, end - start));
        inputs.push(x_ctx);
        projected.push(z);
        taps.push(t);
    }
    Ok(EmbedTape {
        lo,
        start,
        inputs,
        projected,
        taps,
        embedding,
    })
}

/// Summed, temporally filtered projections of every backbone, `[T x d]`.
pub fn embed(
    params: &EncoderParams,
    config: &EncoderConfig,
    features: &[&Matrix],
) -> Result<Matrix> {
    let trs = check_features(config, features)?;
    Ok(embed_rows(params, config, features, 0, trs)?.embedding)
}

/// Applies the prediction heads to an embedding, `[T x P]`.
pub fn predict(
    params: &EncoderParams,
    config: &EncoderConfig,
    embedding: &Matrix,
    subject: usize,
) -> Result<Matrix> {
    if subject >= config.subjects {
        return Err(Error::SubjectOutOfRange {
            subject,
            subjects: config.subjects,
        });
    }
    if embedding.cols() != config.embed_dim {
        return Err(Error::Shape(format!(
            "embedding width {} != {}",
            embedding.cols(),
            config.embed_dim
        )));
    }
    Ok(params.heads.predict(embedding, subject))
}

pub fn forward(
    params: &EncoderParams,
    config: &EncoderConfig,
    features: &[&Matrix],
    subject: usize,
) -> Result<Matrix> {
    let embedding = embed(params, config, features)?;
    predict(params, config, &embedding, subject)
}

/// Closed-form trainable parameter count.
pub fn param_count(config: &EncoderConfig) -> usize {
    let d = config.embed_dim;
    let k = config.kernel_width;
    let p = config.parcels;
    let projections: usize = config.backbones.iter().map(|b| b.dim * d + d).sum();
    let kernels = config.backbones.len()
        * k
        * if config.kernel_type == KernelType::Tied {
            1
        } else {
            d
        };
    let head = d * p + p;
    let group = if config.head_mode.has_group() {
        head
    } else {
        0
    };
    let subjects = if config.head_mode.has_subject() {
        config.subjects * head
    } else {
        0
    };
    projections + kernels + group + subjects
}

/// Trained encoder ready for inference.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedEncoder {
    pub config: EncoderConfig,
    pub params: EncoderParams,
}

impl FittedEncoder {
    pub fn as_ref(&self) -> EncoderRef<'_> {
        EncoderRef {
            config: &self.config,
            params: &self.params,
        }
    }
}

/// Borrowed encoder for inference.
#[derive(Debug, Clone, Copy)]
pub struct EncoderRef<'a> {
    pub config: &'a EncoderConfig,
    pub params: &'a EncoderParams,
}

impl Predictor for EncoderRef<'_> {
    fn predict_episode(&self, dataset: &Dataset, episode: usize, subject: usize) -> Result<Matrix> {
        let features = dataset.features_for(episode, &self.config.labels())?;
        forward(self.params, self.config, &features, subject)
    }

    fn predict_subjects(
        &self,
        dataset: &Dataset,
        episode: usize,
        subjects: &[usize],
    ) -> Result<Vec<Matrix>> {
        let features = dataset.features_for(episode, &self.config.labels())?;
        let embedding = embed(self.params, self.config, &features)?;
        subjects
            .iter()
            .map(|&s| predict(self.params, self.config, &embedding, s))
            .collect()
    }
}

impl Predictor for FittedEncoder {
    fn predict_episode(&self, dataset: &Dataset, episode: usize, subject: usize) -> Result<Matrix> {
        self.as_ref().predict_episode(dataset, episode, subject)
    }

    fn predict_subjects(
        &self,
        dataset: &Dataset,
        episode: usize,
        subjects: &[usize],
    ) -> Result<Vec<Matrix>> {
        self.as_ref().predict_subjects(dataset, episode, subjects)
    }
}
