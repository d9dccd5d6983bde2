//! Synthetic datasets generated from planted encoder parameters, used as a
//! ground-truth oracle for training, scoring and ceiling estimates.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::conv::{DepthwiseConv, KernelType};
use crate::data::{Backbone, Dataset, Episode, EpisodeId, DEFAULT_TR_SECONDS};
use crate::encoder::{forward, EncoderConfig, EncoderParams, HeadMode, Heads};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::params::Linear;
use crate::rng::{seeded, streams};

/// Temporal kernel planted in every backbone's convolution.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum PlantedKernel {
    /// No temporal filtering.
    #[default]
    Delta,
    /// Independent Gaussian taps per channel, variance `1 / width`.
    Random { width: usize },
    /// Gamma-shaped response over past TRs (peak near 5 s), shared by all channels.
    Hrf { width: usize },
}

impl PlantedKernel {
    pub fn width(self) -> usize {
        match self {
            PlantedKernel::Delta => 0,
            PlantedKernel::Random { width } | PlantedKernel::Hrf { width } => width,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthEpisode {
    pub name: String,
    pub movie: String,
    pub trs: usize,
}

impl SynthEpisode {
    pub fn new(name: impl Into<String>, movie: impl Into<String>, trs: usize) -> Self {
        Self {
            name: name.into(),
            movie: movie.into(),
            trs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbsentPair {
    pub episode: String,
    pub subject: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub subjects: usize,
    pub parcels: usize,
    pub backbones: Vec<Backbone>,
    pub episodes: Vec<SynthEpisode>,
    #[serde(default = "default_planted_dim")]
    pub embed_dim: usize,
    #[serde(default)]
    pub kernel: PlantedKernel,
    #[serde(default)]
    pub kernel_type: KernelType,
    #[serde(default)]
    pub noise_std: f64,
    #[serde(default)]
    pub seed: u64,
    /// Rescale each subject's planted heads so every parcel's signal has unit
    /// population variance.
    #[serde(default = "yes")]
    pub unit_signal: bool,
    /// Fraction of head variance shared across subjects.
    #[serde(default = "half")]
    pub shared_fraction: f64,
    /// (episode, subject) pairs recorded as not watched.
    #[serde(default)]
    pub absent: Vec<AbsentPair>,
    /// Episodes shown a second time: same features and signal, fresh noise,
    /// stored as `<name>-rep` with presentation 2.
    #[serde(default)]
    pub repeats: Vec<String>,
    #[serde(default = "default_tr")]
    pub tr_seconds: f64,
}

fn default_planted_dim() -> usize {
    8
}
fn yes() -> bool {
    true
}
fn half() -> f64 {
    0.5
}
fn default_tr() -> f64 {
    DEFAULT_TR_SECONDS
}

impl SynthSpec {
    /// A small two-backbone spec with train / validation / test movies.
    pub fn small(seed: u64) -> Self {
        Self {
            subjects: 2,
            parcels: 6,
            backbones: alloc::vec![Backbone::new("video", 6), Backbone::new("text", 4)],
            episodes: alloc::vec![
                SynthEpisode::new("train-01", "train", 120),
                SynthEpisode::new("train-02", "train", 120),
                SynthEpisode::new("valid-01", "valid", 80),
                SynthEpisode::new("test-01", "test", 80),
            ],
            embed_dim: 3,
            kernel: PlantedKernel::Random { width: 5 },
            kernel_type: KernelType::Default,
            noise_std: 0.0,
            seed,
            unit_signal: true,
            shared_fraction: 0.5,
            absent: Vec::new(),
            repeats: Vec::new(),
            tr_seconds: DEFAULT_TR_SECONDS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.subjects == 0
            || self.parcels == 0
            || self.embed_dim == 0
            || self.backbones.is_empty()
            || self.episodes.is_empty()
        {
            return Err(Error::InvalidConfig(
                "synthetic spec counts must all be >= 1".into(),
            ));
        }
        if self.episodes.iter().any(|e| e.trs == 0) || self.backbones.iter().any(|b| b.dim == 0) {
            return Err(Error::InvalidConfig(
                "episode lengths and backbone dims must be >= 1".into(),
            ));
        }
        let w = self.kernel.width();
        if self.kernel != PlantedKernel::Delta && (w == 0 || w.is_multiple_of(2)) {
            return Err(Error::InvalidConfig(format!(
                "planted kernel width must be odd, got {w}"
            )));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite())
            || !(0.0..=1.0).contains(&self.shared_fraction)
        {
            return Err(Error::InvalidConfig(
                "noise_std must be >= 0 and shared_fraction in [0, 1]".into(),
            ));
        }
        let names: BTreeSet<&str> = self.episodes.iter().map(|e| e.name.as_str()).collect();
        for a in &self.absent {
            if !names.contains(a.episode.as_str()) || a.subject >= self.subjects {
                return Err(Error::InvalidConfig(format!(
                    "absent pair ({}, {}) is unknown",
                    a.episode, a.subject
                )));
            }
        }
        if let Some(r) = self.repeats.iter().find(|r| !names.contains(r.as_str())) {
            return Err(Error::InvalidConfig(format!(
                "repeat of unknown episode `{r}`"
            )));
        }
        Ok(())
    }

    pub fn planted_config(&self) -> EncoderConfig {
        EncoderConfig {
            backbones: self.backbones.clone(),
            embed_dim: self.embed_dim,
            kernel_width: self.kernel.width(),
            kernel_type: if self.kernel == PlantedKernel::Delta {
                KernelType::Default
            } else {
                self.kernel_type
            },
            head_mode: HeadMode::GroupPlusSubject,
            subjects: self.subjects,
            parcels: self.parcels,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Synthetic {
    pub dataset: Dataset,
    pub config: EncoderConfig,
    pub planted: EncoderParams,
}

fn normal_matrix(rows: usize, cols: usize, sd: f64, rng: &mut impl Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        z * sd
    })
}

fn planted_kernel(
    conv: &DepthwiseConv,
    shape: PlantedKernel,
    tr: f64,
    rng: &mut impl Rng,
) -> Matrix {
    let (rows, width) = conv.kernel_shape();
    match shape {
        PlantedKernel::Delta => conv.delta_kernel(),
        PlantedKernel::Random { .. } => {
            normal_matrix(rows, width, 1.0 / libm::sqrt(width as f64), rng)
        }
        PlantedKernel::Hrf { .. } => {
            let past = conv.kind.identity_tap(width);
            let mut taps: Vec<f64> = (0..width)
                .map(|j| {
                    if j > past {
                        return 0.0;
                    }
                    let s = (past - j) as f64 * tr;
                    libm::pow(s, 5.0) * libm::exp(-s)
                })
                .collect();
            let norm = libm::sqrt(taps.iter().map(|v| v * v).sum::<f64>());
            if norm > 0.0 {
                taps.iter_mut().for_each(|v| *v /= norm);
            } else {
                taps[past] = 1.0;
            }
            Matrix::from_fn(rows, width, |_, j| taps[j])
        }
    }
}

/// Covariance `[d x d]` of the embedding when every feature is i.i.d. unit
/// normal (edge effects ignored).
fn embedding_covariance(config: &EncoderConfig, params: &EncoderParams) -> Matrix {
    let d = config.embed_dim;
    let conv = config.conv();
    let mut cov = Matrix::zeros(d, d);
    for (proj, kernel) in params.projections.iter().zip(&params.kernels) {
        let taps: Vec<Vec<f64>> = if conv.is_identity() {
            alloc::vec![alloc::vec![1.0; d]]
        } else {
            let t = conv.taps(kernel);
            (0..conv.width)
                .map(|j| t.as_matrix().row(j).to_vec())
                .collect()
        };
        for k in taps {
            let scaled = Matrix::from_fn(proj.weight.rows(), d, |i, c| proj.weight[(i, c)] * k[c]);
            scaled.accumulate_transpose_matmul(&scaled, &mut cov);
        }
    }
    cov
}

/// Draws features, planted parameters and noisy BOLD for `spec`.
pub fn synth_generate(spec: &SynthSpec) -> Result<Synthetic> {
    spec.validate()?;
    let config = spec.planted_config();
    let d = config.embed_dim;
    let p = config.parcels;

    let mut prng = seeded(spec.seed, streams::SYNTH_PARAMS);
    let conv = config.conv();
    let projections: Vec<Linear> = spec
        .backbones
        .iter()
        .map(|b| Linear {
            weight: normal_matrix(b.dim, d, 1.0 / libm::sqrt(b.dim as f64), &mut prng),
            bias: alloc::vec![0.0; d],
        })
        .collect();
    let kernels = spec
        .backbones
        .iter()
        .map(|_| planted_kernel(&conv, spec.kernel, spec.tr_seconds, &mut prng))
        .collect();
    let head_sd = 1.0 / libm::sqrt(d as f64);
    let mut group = normal_matrix(d, p, head_sd, &mut prng);
    group.scale(libm::sqrt(spec.shared_fraction));
    let mut subjects: Vec<Linear> = (0..spec.subjects)
        .map(|_| {
            let mut h = normal_matrix(d, p, head_sd, &mut prng);
            h.scale(libm::sqrt(1.0 - spec.shared_fraction));
            Linear {
                weight: h,
                bias: alloc::vec![0.0; p],
            }
        })
        .collect();
    let mut planted = EncoderParams {
        projections,
        kernels,
        heads: Heads {
            group: Some(Linear {
                weight: group,
                bias: alloc::vec![0.0; p],
            }),
            subjects: Vec::new(),
        },
    };

    if spec.unit_signal {
        let cov = embedding_covariance(&config, &planted);
        let g = &planted
            .heads
            .group
            .as_ref()
            .expect("planted group head")
            .weight;
        for h in &mut subjects {
            for q in 0..p {
                let v: Vec<f64> = (0..d).map(|c| g[(c, q)] + h.weight[(c, q)]).collect();
                let cv = Matrix::from_vec(1, d, v.clone())?.matmul(&cov);
                let var: f64 = cv.row(0).iter().zip(&v).map(|(a, b)| a * b).sum();
                if var > 0.0 {
                    let scale = 1.0 / libm::sqrt(var);
                    for c in 0..d {
                        h.weight[(c, q)] = scale * v[c] - g[(c, q)];
                    }
                }
            }
        }
    }
    planted.heads.subjects = subjects;

    let mut frng = seeded(spec.seed, streams::SYNTH_FEATURES);
    let mut nrng = seeded(spec.seed, streams::SYNTH_NOISE);
    let noise = Normal::new(0.0, spec.noise_std)
        .map_err(|_| Error::InvalidConfig("bad noise_std".into()))?;
    let mut add_noise = |m: &mut Matrix| {
        if spec.noise_std > 0.0 {
            m.as_mut_slice()
                .iter_mut()
                .for_each(|v| *v += noise.sample(&mut nrng));
        }
    };

    let absent: BTreeSet<(&str, usize)> = spec
        .absent
        .iter()
        .map(|a| (a.episode.as_str(), a.subject))
        .collect();
    let mut episodes = Vec::with_capacity(spec.episodes.len() + spec.repeats.len());
    let mut signals = Vec::with_capacity(spec.episodes.len());
    for e in &spec.episodes {
        // rounded through f32 so the features survive the on-disk format exactly
        let features: Vec<Matrix> = spec
            .backbones
            .iter()
            .map(|b| {
                let mut m = normal_matrix(e.trs, b.dim, 1.0, &mut frng);
                m.as_mut_slice()
                    .iter_mut()
                    .for_each(|v| *v = *v as f32 as f64);
                m
            })
            .collect();
        let refs: Vec<&Matrix> = features.iter().collect();
        let signal: Vec<Matrix> = (0..spec.subjects)
            .map(|s| forward(&planted, &config, &refs, s))
            .collect::<Result<_>>()?;
        let bold = (0..spec.subjects)
            .map(|s| {
                (!absent.contains(&(e.name.as_str(), s))).then(|| {
                    let mut y = signal[s].clone();
                    add_noise(&mut y);
                    y
                })
            })
            .collect();
        episodes.push(Episode {
            id: EpisodeId::new(e.name.clone(), e.movie.clone()),
            presentation: 1,
            stimulus: None,
            features,
            bold,
        });
        signals.push(signal);
    }
    for name in &spec.repeats {
        let i = spec
            .episodes
            .iter()
            .position(|e| &e.name == name)
            .expect("validated");
        let first = &episodes[i];
        let bold = (0..spec.subjects)
            .map(|s| {
                first.bold[s].as_ref().map(|_| {
                    let mut y = signals[i][s].clone();
                    add_noise(&mut y);
                    y
                })
            })
            .collect();
        let repeat = Episode {
            id: EpisodeId::new(format!("{name}-rep"), first.id.movie.clone()),
            presentation: 2,
            stimulus: Some(name.clone()),
            features: first.features.clone(),
            bold,
        };
        episodes.push(repeat);
    }

    let dataset = Dataset {
        subjects: spec.subjects,
        parcels: spec.parcels,
        backbones: spec.backbones.clone(),
        episodes,
        tr_seconds: spec.tr_seconds,
    };
    dataset.validate()?;
    Ok(Synthetic {
        dataset,
        config,
        planted,
    })
}
