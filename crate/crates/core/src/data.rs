//! Dataset model: episodes of per-backbone stimulus features and per-subject
//! parcellated BOLD, train/validation/test splits, train-split z-scoring and
//! training window generation.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{seeded, streams};

pub const DEFAULT_TR_SECONDS: f64 = 1.49;
pub const DEFAULT_WINDOW_LENGTH: usize = 64;
pub const STD_FLOOR: f64 = 1e-6;
/// Truncating more than this many TRs from a series is reported.
pub const TRUNCATION_WARN_TRS: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EpisodeId {
    pub name: String,
    pub movie: String,
}

impl EpisodeId {
    pub fn new(name: impl Into<String>, movie: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            movie: movie.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Backbone {
    pub label: String,
    pub dim: usize,
}

impl Backbone {
    pub fn new(label: impl Into<String>, dim: usize) -> Self {
        Self {
            label: label.into(),
            dim,
        }
    }
}

/// One backbone's features for one episode, `[T x D]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSeries {
    pub episode: EpisodeId,
    pub backbone: String,
    pub data: Matrix,
}

/// One subject's parcellated BOLD for one episode, `[T x P]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoldSeries {
    pub episode: EpisodeId,
    pub subject: usize,
    pub data: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub id: EpisodeId,
    /// 1 for the first viewing of a stimulus, 2 for a repeat, ...
    pub presentation: u8,
    /// Repeats of the same stimulus share this key; `None` means the episode name.
    pub stimulus: Option<String>,
    /// Indexed like `Dataset::backbones`.
    pub features: Vec<Matrix>,
    /// Indexed by subject; `None` when the subject did not see the episode.
    pub bold: Vec<Option<Matrix>>,
}

impl Episode {
    pub fn trs(&self) -> usize {
        self.features.first().map_or(0, Matrix::rows)
    }

    pub fn stimulus_key(&self) -> &str {
        self.stimulus.as_deref().unwrap_or(&self.id.name)
    }

    pub fn subject_present(&self, subject: usize) -> bool {
        matches!(self.bold.get(subject), Some(Some(_)))
    }

    pub fn bold_for(&self, subject: usize) -> Result<&Matrix> {
        self.bold
            .get(subject)
            .and_then(Option::as_ref)
            .ok_or_else(|| Error::MissingSubject {
                subject,
                episode: self.id.name.clone(),
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub subjects: usize,
    pub parcels: usize,
    pub backbones: Vec<Backbone>,
    pub episodes: Vec<Episode>,
    pub tr_seconds: f64,
}

impl Dataset {
    /// Checks every structural invariant: unique names, consistent shapes,
    /// finite values, aligned lengths and a positive TR.
    pub fn validate(&self) -> Result<()> {
        if self.subjects == 0 || self.parcels == 0 || self.backbones.is_empty() {
            return Err(Error::InvalidConfig(
                "dataset needs subjects, parcels and backbones".into(),
            ));
        }
        if !(self.tr_seconds > 0.0 && self.tr_seconds.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "tr_seconds must be > 0, got {}",
                self.tr_seconds
            )));
        }
        let mut labels = BTreeSet::new();
        for b in &self.backbones {
            if b.dim == 0 || !labels.insert(b.label.as_str()) {
                return Err(Error::InvalidConfig(format!(
                    "bad or duplicate backbone `{}`",
                    b.label
                )));
            }
        }
        let mut names = BTreeSet::new();
        for ep in &self.episodes {
            if !names.insert(ep.id.name.as_str()) {
                return Err(Error::DuplicateEpisode(ep.id.name.clone()));
            }
            if ep.id.movie.is_empty() {
                return Err(Error::InvalidConfig(format!(
                    "episode `{}` has an empty movie label",
                    ep.id.name
                )));
            }
            if ep.features.len() != self.backbones.len() {
                return Err(Error::Shape(format!(
                    "episode `{}` has {} feature series for {} backbones",
                    ep.id.name,
                    ep.features.len(),
                    self.backbones.len()
                )));
            }
            if ep.bold.len() != self.subjects {
                return Err(Error::Shape(format!(
                    "episode `{}` lists {} subjects, dataset has {}",
                    ep.id.name,
                    ep.bold.len(),
                    self.subjects
                )));
            }
            let trs = ep.trs();
            if trs == 0 {
                return Err(Error::Length(format!("episode `{}` is empty", ep.id.name)));
            }
            for (x, b) in ep.features.iter().zip(&self.backbones) {
                if x.shape() != (trs, b.dim) {
                    return Err(Error::Shape(format!(
                        "episode `{}` backbone `{}` is {:?}, expected ({trs}, {})",
                        ep.id.name,
                        b.label,
                        x.shape(),
                        b.dim
                    )));
                }
                if !x.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "features `{}`/`{}`",
                        ep.id.name, b.label
                    )));
                }
            }
            for (s, y) in ep.bold.iter().enumerate() {
                if let Some(y) = y {
                    if y.shape() != (trs, self.parcels) {
                        return Err(Error::Shape(format!(
                            "episode `{}` subject {s} BOLD is {:?}, expected ({trs}, {})",
                            ep.id.name,
                            y.shape(),
                            self.parcels
                        )));
                    }
                    if !y.is_finite() {
                        return Err(Error::NonFinite(format!(
                            "BOLD `{}`/subject {s}",
                            ep.id.name
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn backbone_index(&self, label: &str) -> Result<usize> {
        self.backbones
            .iter()
            .position(|b| b.label == label)
            .ok_or_else(|| Error::UnknownBackbone(label.into()))
    }

    pub fn movies(&self) -> BTreeSet<String> {
        self.episodes.iter().map(|e| e.id.movie.clone()).collect()
    }

    pub fn episode_index(&self, name: &str) -> Option<usize> {
        self.episodes.iter().position(|e| e.id.name == name)
    }

    /// First-presentation episodes of `movie`, ordered by episode name.
    pub fn movie_episodes(&self, movie: &str) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.episodes.len())
            .filter(|&i| self.episodes[i].id.movie == movie && self.episodes[i].presentation <= 1)
            .collect();
        idx.sort_by(|&a, &b| self.episodes[a].id.name.cmp(&self.episodes[b].id.name));
        idx
    }

    /// First-presentation episodes of any of `movies`, ordered by episode name.
    pub fn episodes_in<'a>(&self, movies: impl IntoIterator<Item = &'a String>) -> Vec<usize> {
        let set: BTreeSet<&str> = movies.into_iter().map(String::as_str).collect();
        let mut idx: Vec<usize> = (0..self.episodes.len())
            .filter(|&i| {
                set.contains(self.episodes[i].id.movie.as_str())
                    && self.episodes[i].presentation <= 1
            })
            .collect();
        idx.sort_by(|&a, &b| self.episodes[a].id.name.cmp(&self.episodes[b].id.name));
        idx
    }

    /// Feature matrices of `episode` in the order of `labels`.
    pub fn features_for<'a>(
        &'a self,
        episode: usize,
        labels: &[String],
    ) -> Result<Vec<&'a Matrix>> {
        labels
            .iter()
            .map(|l| {
                self.backbone_index(l)
                    .map(|i| &self.episodes[episode].features[i])
            })
            .collect()
    }

    /// Copy with every value rounded to `f32`, i.e. what survives a save/load cycle.
    pub fn rounded_to_f32(&self) -> Dataset {
        let round = |m: &Matrix| {
            let mut m = m.clone();
            m.as_mut_slice()
                .iter_mut()
                .for_each(|v| *v = *v as f32 as f64);
            m
        };
        let mut out = self.clone();
        for ep in &mut out.episodes {
            ep.features.iter_mut().for_each(|m| *m = round(m));
            ep.bold.iter_mut().flatten().for_each(|m| *m = round(m));
        }
        out
    }
}

/// Movie-level train / validation / test partition.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: BTreeSet<String>,
    #[serde(default)]
    pub validation: BTreeSet<String>,
    #[serde(default)]
    pub test: BTreeSet<String>,
}

impl SplitSpec {
    pub fn new<'a>(
        train: impl IntoIterator<Item = &'a str>,
        validation: impl IntoIterator<Item = &'a str>,
        test: impl IntoIterator<Item = &'a str>,
    ) -> Self {
        let set = |it: &mut dyn Iterator<Item = &'a str>| it.map(String::from).collect();
        Self {
            train: set(&mut train.into_iter()),
            validation: set(&mut validation.into_iter()),
            test: set(&mut test.into_iter()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.train.is_empty() {
            return Err(Error::EmptySplit("train split has no movies".into()));
        }
        let overlap = self
            .train
            .intersection(&self.validation)
            .chain(self.train.intersection(&self.test))
            .chain(self.validation.intersection(&self.test))
            .next();
        if let Some(m) = overlap {
            return Err(Error::InvalidConfig(format!(
                "movie `{m}` appears in more than one split"
            )));
        }
        Ok(())
    }

    /// Validates and additionally requires every listed movie to exist.
    pub fn validate_against(&self, dataset: &Dataset) -> Result<()> {
        self.validate()?;
        let movies = dataset.movies();
        for m in self.train.iter().chain(&self.validation).chain(&self.test) {
            if !movies.contains(m) {
                return Err(Error::UnknownMovie(m.clone()));
            }
        }
        Ok(())
    }
}

/// Result of truncating one episode's series to a common length.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedEpisode {
    pub features: Vec<FeatureSeries>,
    pub bold: Vec<BoldSeries>,
    pub trs: usize,
    pub warnings: Vec<String>,
}

/// Truncates all series of one episode to the shortest length.
pub fn align_lengths(
    mut features: Vec<FeatureSeries>,
    mut bold: Vec<BoldSeries>,
) -> Result<AlignedEpisode> {
    let first = features
        .first()
        .map(|f| &f.episode)
        .or_else(|| bold.first().map(|b| &b.episode))
        .ok_or_else(|| Error::Length("no series to align".into()))?
        .clone();
    if features.iter().any(|f| f.episode != first) || bold.iter().any(|b| b.episode != first) {
        return Err(Error::InvalidConfig(format!(
            "series from different episodes aligned with `{}`",
            first.name
        )));
    }
    let trs = features
        .iter()
        .map(|f| f.data.rows())
        .chain(bold.iter().map(|b| b.data.rows()))
        .min()
        .unwrap_or(0);
    if trs == 0 {
        return Err(Error::Length(format!(
            "episode `{}` has a zero-length series",
            first.name
        )));
    }
    let mut warnings = Vec::new();
    let mut check = |what: String, rows: usize| {
        if rows - trs > TRUNCATION_WARN_TRS {
            warnings.push(format!(
                "{what}: truncated {} TRs ({rows} -> {trs})",
                rows - trs
            ));
        }
    };
    for f in &mut features {
        check(format!("{}/{}", first.name, f.backbone), f.data.rows());
        f.data.truncate_rows(trs);
    }
    for b in &mut bold {
        check(
            format!("{}/subject {}", first.name, b.subject),
            b.data.rows(),
        );
        b.data.truncate_rows(trs);
    }
    Ok(AlignedEpisode {
        features,
        bold,
        trs,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Channels whose standard deviation was floored at `STD_FLOOR`.
    pub floored: Vec<usize>,
}

impl ChannelStats {
    fn fit<'a>(parts: impl Iterator<Item = &'a Matrix> + Clone, cols: usize) -> Option<Self> {
        let n: usize = parts.clone().map(Matrix::rows).sum();
        if n == 0 {
            return None;
        }
        let mut mean = vec![0.0; cols];
        for m in parts.clone() {
            for (acc, s) in mean.iter_mut().zip(m.column_sums()) {
                *acc += s;
            }
        }
        mean.iter_mut().for_each(|v| *v /= n as f64);
        let mut var = vec![0.0; cols];
        for m in parts {
            for r in 0..m.rows() {
                for ((acc, v), mu) in var.iter_mut().zip(m.row(r)).zip(&mean) {
                    let d = v - mu;
                    *acc += d * d;
                }
            }
        }
        let mut floored = Vec::new();
        let std = var
            .iter()
            .enumerate()
            .map(|(c, v)| {
                let s = libm::sqrt(v / n as f64);
                if s < STD_FLOOR {
                    floored.push(c);
                    STD_FLOOR
                } else {
                    s
                }
            })
            .collect();
        Some(Self { mean, std, floored })
    }

    fn apply(&self, m: &mut Matrix) {
        for r in 0..m.rows() {
            for ((v, mu), sd) in m.row_mut(r).iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - mu) / sd;
            }
        }
    }
}

/// Train-split normalization statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    /// Per backbone, per feature channel.
    pub features: Vec<ChannelStats>,
    /// Per subject, per parcel; `None` if the subject has no train data.
    pub bold: Vec<Option<ChannelStats>>,
}

/// Per-channel mean/std over the concatenated train-split rows.
pub fn zscore_fit(dataset: &Dataset, split: &SplitSpec) -> Result<NormStats> {
    split.validate()?;
    let train = dataset.episodes_in(&split.train);
    if train.is_empty() {
        return Err(Error::EmptySplit("no episodes in the train movies".into()));
    }
    let features = dataset
        .backbones
        .iter()
        .enumerate()
        .map(|(b, bb)| {
            ChannelStats::fit(
                train.iter().map(|&e| &dataset.episodes[e].features[b]),
                bb.dim,
            )
        })
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| Error::EmptySplit("train episodes have no rows".into()))?;
    let bold = (0..dataset.subjects)
        .map(|s| {
            ChannelStats::fit(
                train
                    .iter()
                    .filter_map(|&e| dataset.episodes[e].bold[s].as_ref()),
                dataset.parcels,
            )
        })
        .collect();
    Ok(NormStats { features, bold })
}

impl NormStats {
    pub fn apply(&self, dataset: &Dataset) -> Result<Dataset> {
        if self.features.len() != dataset.backbones.len() || self.bold.len() != dataset.subjects {
            return Err(Error::Shape(
                "normalization stats do not match dataset".into(),
            ));
        }
        let mut out = dataset.clone();
        for ep in &mut out.episodes {
            for (x, st) in ep.features.iter_mut().zip(&self.features) {
                st.apply(x);
            }
            for (y, st) in ep.bold.iter_mut().zip(&self.bold) {
                if let (Some(y), Some(st)) = (y.as_mut(), st.as_ref()) {
                    st.apply(y);
                }
            }
        }
        Ok(out)
    }
}

/// A training window `[start, start + length)` of one episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    /// Index into `Dataset::episodes`.
    pub episode: usize,
    pub start: usize,
    pub length: usize,
}

impl Window {
    pub fn end(&self) -> usize {
        self.start + self.length
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowPlan {
    pub windows: Vec<Window>,
    /// Episodes shorter than the window length; each got one truncated window.
    pub short_episodes: Vec<usize>,
}

/// Start/length pairs tiling `[0, trs)` with windows of `length`, the regular
/// grid shifted by `offset`. Every TR is covered at least once.
pub fn tile_episode(trs: usize, length: usize, offset: usize) -> Vec<(usize, usize)> {
    if trs <= length {
        return vec![(0, trs)];
    }
    let offset = offset % length;
    let mut out = Vec::new();
    if offset > 0 {
        out.push((0, length));
    }
    let mut start = offset;
    while start + length <= trs {
        out.push((start, length));
        start += length;
    }
    let last_end = out.last().map_or(0, |&(s, l)| s + l);
    if last_end < trs {
        out.push((trs - length, length));
    }
    out
}

/// One epoch of shuffled windows over the train split, a pure function of
/// dataset shapes, `length` and `seed`.
pub fn make_windows(
    dataset: &Dataset,
    split: &SplitSpec,
    length: usize,
    seed: u64,
) -> Result<WindowPlan> {
    if length == 0 {
        return Err(Error::InvalidConfig("window length must be >= 1".into()));
    }
    split.validate()?;
    let train = dataset.episodes_in(&split.train);
    if train.is_empty() {
        return Err(Error::EmptySplit("no episodes in the train movies".into()));
    }
    let mut rng = seeded(seed, streams::WINDOWS);
    let mut windows = Vec::new();
    let mut short_episodes = Vec::new();
    for e in train {
        let trs = dataset.episodes[e].trs();
        if trs < length {
            short_episodes.push(e);
        }
        let offset = if trs > length {
            rng.random_range(0..length)
        } else {
            0
        };
        windows.extend(
            tile_episode(trs, length, offset)
                .into_iter()
                .map(|(start, length)| Window {
                    episode: e,
                    start,
                    length,
                }),
        );
    }
    windows.shuffle(&mut rng);
    Ok(WindowPlan {
        windows,
        short_episodes,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    /// Small random dataset: `episodes` as (name, movie, trs).
    pub(crate) fn toy_dataset(
        subjects: usize,
        parcels: usize,
        dims: &[usize],
        episodes: &[(&str, &str, usize)],
        seed: u64,
    ) -> Dataset {
        let mut rng = seeded(seed, 99);
        let mut normal = |r: usize, c: usize| {
            Matrix::from_fn(r, c, |_, _| {
                let v: f64 = StandardNormal.sample(&mut rng);
                v
            })
        };
        Dataset {
            subjects,
            parcels,
            backbones: dims
                .iter()
                .enumerate()
                .map(|(i, &d)| Backbone::new(format!("b{i}"), d))
                .collect(),
            episodes: episodes
                .iter()
                .map(|&(name, movie, t)| Episode {
                    id: EpisodeId::new(name, movie),
                    presentation: 1,
                    stimulus: None,
                    features: dims.iter().map(|&d| normal(t, d)).collect(),
                    bold: (0..subjects).map(|_| Some(normal(t, parcels))).collect(),
                })
                .collect(),
            tr_seconds: DEFAULT_TR_SECONDS,
        }
    }

    fn series(name: &str, rows: usize) -> (FeatureSeries, BoldSeries) {
        let id = EpisodeId::new(name, "m");
        (
            FeatureSeries {
                episode: id.clone(),
                backbone: "b".into(),
                data: Matrix::zeros(rows, 2),
            },
            BoldSeries {
                episode: id,
                subject: 0,
                data: Matrix::zeros(rows, 3),
            },
        )
    }

    #[test]
    fn align_truncates_to_min() {
        let (f, _) = series("e", 100);
        let (_, b) = series("e", 98);
        let a = align_lengths(vec![f], vec![b]).unwrap();
        assert_eq!(a.trs, 98);
        assert_eq!(a.features[0].data.rows(), 98);
        assert_eq!(a.bold[0].data.rows(), 98);
        assert!(a.warnings.is_empty());
    }

    #[test]
    fn align_identity_and_three_way_min() {
        let (f, b) = series("e", 40);
        let a = align_lengths(vec![f.clone()], vec![b.clone()]).unwrap();
        assert_eq!(a.features[0], f);
        assert_eq!(a.bold[0], b);

        let (f1, _) = series("e", 50);
        let (f2, b2) = series("e", 49);
        let (_, b3) = series("e", 51);
        let a = align_lengths(vec![f1, f2], vec![b2, b3]).unwrap();
        assert_eq!(a.trs, 49);
        assert!(a.features.iter().all(|f| f.data.rows() == 49));
        assert!(a.bold.iter().all(|b| b.data.rows() == 49));
    }

    #[test]
    fn align_warns_on_large_truncation_and_rejects_empty() {
        let (f, _) = series("e", 100);
        let (_, b) = series("e", 90);
        let a = align_lengths(vec![f], vec![b]).unwrap();
        assert_eq!(a.warnings.len(), 1);

        let (f, _) = series("e", 10);
        let (_, b) = series("e", 0);
        assert!(matches!(
            align_lengths(vec![f], vec![b]),
            Err(Error::Length(_))
        ));
    }

    #[test]
    fn zscore_constant_channel_is_floored() {
        let mut ds = toy_dataset(1, 2, &[2], &[("a", "train", 20)], 1);
        for r in 0..20 {
            ds.episodes[0].features[0][(r, 1)] = 5.0;
        }
        let split = SplitSpec::new(["train"], [], []);
        let stats = zscore_fit(&ds, &split).unwrap();
        assert_eq!(stats.features[0].mean[1], 5.0);
        assert_eq!(stats.features[0].std[1], STD_FLOOR);
        assert_eq!(stats.features[0].floored, vec![1]);
    }

    #[test]
    fn zscore_standard_normal_moments() {
        let ds = toy_dataset(1, 1, &[1], &[("a", "train", 10_000)], 7);
        let stats = zscore_fit(&ds, &SplitSpec::new(["train"], [], [])).unwrap();
        // sample-moment oracle
        let x = ds.episodes[0].features[0].column(0);
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let sd = libm::sqrt(x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n);
        assert!(libm::fabs(mean) < 0.05 && libm::fabs(sd - 1.0) < 0.05);
        assert!(libm::fabs(stats.features[0].mean[0] - mean) < 1e-12);
        assert!(libm::fabs(stats.features[0].std[0] - sd) < 1e-12);
    }

    #[test]
    fn zscore_ignores_held_out_rows() {
        let mut ds = toy_dataset(2, 3, &[4], &[("a", "train", 30), ("b", "val", 30)], 3);
        let split = SplitSpec::new(["train"], ["val"], []);
        let before = zscore_fit(&ds, &split).unwrap();
        ds.episodes[1].features[0].scale(100.0);
        ds.episodes[1].bold[0].as_mut().unwrap().fill(7.0);
        assert_eq!(zscore_fit(&ds, &split).unwrap(), before);
    }

    #[test]
    fn zscore_apply_gives_unit_train_moments() {
        let ds = toy_dataset(1, 2, &[3], &[("a", "train", 500)], 5);
        let split = SplitSpec::new(["train"], [], []);
        let normed = zscore_fit(&ds, &split).unwrap().apply(&ds).unwrap();
        let again = zscore_fit(&normed, &split).unwrap();
        for (m, s) in again.features[0].mean.iter().zip(&again.features[0].std) {
            assert!(libm::fabs(*m) < 1e-12 && libm::fabs(s - 1.0) < 1e-12);
        }
    }

    #[test]
    fn split_validation() {
        assert!(SplitSpec::new([], ["v"], []).validate().is_err());
        assert!(SplitSpec::new(["a"], ["a"], []).validate().is_err());
        assert!(SplitSpec::new(["a"], ["b"], ["c"]).validate().is_ok());
        let ds = toy_dataset(1, 1, &[1], &[("e", "a", 5)], 1);
        assert_eq!(
            SplitSpec::new(["a"], ["zzz"], []).validate_against(&ds),
            Err(Error::UnknownMovie("zzz".into()))
        );
    }

    #[test]
    fn exact_tiling() {
        assert_eq!(tile_episode(128, 64, 0), vec![(0, 64), (64, 64)]);
        assert_eq!(tile_episode(30, 64, 5), vec![(0, 30)]);
        assert_eq!(tile_episode(130, 64, 10), vec![(0, 64), (10, 64), (66, 64)]);
    }

    #[test]
    fn windows_are_deterministic_and_flag_short_episodes() {
        let ds = toy_dataset(
            1,
            1,
            &[1],
            &[("a", "t", 200), ("b", "t", 40), ("c", "v", 100)],
            1,
        );
        let split = SplitSpec::new(["t"], ["v"], []);
        let a = make_windows(&ds, &split, 64, 9).unwrap();
        assert_eq!(a, make_windows(&ds, &split, 64, 9).unwrap());
        assert_eq!(a.short_episodes, vec![1]);
        assert!(a.windows.iter().all(|w| w.episode != 2));
        assert!(a.windows.iter().any(|w| w.episode == 1 && w.length == 40));
    }

    #[test]
    fn windows_cover_every_train_tr() {
        // brute-force coverage check over 50 random episode lengths
        let mut rng = seeded(11, 0);
        for trial in 0..50 {
            let t = rng.random_range(1..400);
            let name = format!("e{trial}");
            let ds = toy_dataset(1, 1, &[1], &[(name.as_str(), "t", t)], trial);
            let plan = make_windows(&ds, &SplitSpec::new(["t"], [], []), 64, trial).unwrap();
            let mut covered = vec![false; t];
            for w in &plan.windows {
                assert!(w.end() <= t);
                covered[w.start..w.end()].iter_mut().for_each(|c| *c = true);
            }
            assert!(covered.iter().all(|&c| c), "trial {trial} T={t}");
        }
    }

    #[test]
    fn validate_catches_shape_and_duplicates() {
        let mut ds = toy_dataset(2, 3, &[4], &[("a", "m", 10), ("b", "m", 10)], 2);
        assert!(ds.validate().is_ok());
        ds.episodes[1].id.name = "a".into();
        assert_eq!(ds.validate(), Err(Error::DuplicateEpisode("a".into())));
        ds.episodes[1].id.name = "b".into();
        ds.episodes[1].bold[1] = Some(Matrix::zeros(10, 4));
        assert!(matches!(ds.validate(), Err(Error::Shape(_))));
        ds.episodes[1].bold[1] = None;
        assert!(ds.validate().is_ok());
        ds.episodes[0].features[0][(0, 0)] = f64::NAN;
        assert!(matches!(ds.validate(), Err(Error::NonFinite(_))));
    }
}
