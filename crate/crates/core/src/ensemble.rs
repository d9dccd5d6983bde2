//! Random hyperparameter sweeps, parcel-wise top-k ensembles and per-movie
//! combination of scored submissions.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::conv::KernelType;
use crate::data::{Dataset, SplitSpec};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::metrics::{movie_predictions, overall_mean, score, ParcelScores, Predictor};
use crate::rng::{seeded, streams};
use crate::trainer::{train, EncoderCheckpoint, TrainConfig};

/// Candidate values per axis. Empty `feature_sets` / `train_movies` mean
/// "use the base configuration".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpace {
    pub lr: Vec<f64>,
    pub weight_decay: Vec<f64>,
    pub kernel_width: Vec<usize>,
    pub kernel_type: Vec<KernelType>,
    pub batch_size: Vec<usize>,
    pub embed_dim: Vec<usize>,
    #[serde(default)]
    pub feature_sets: Vec<Vec<String>>,
    #[serde(default)]
    pub train_movies: Vec<Vec<String>>,
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
}

impl SweepSpace {
    pub fn validate(&self) -> Result<()> {
        let axes = [
            ("lr", self.lr.len()),
            ("weight_decay", self.weight_decay.len()),
            ("kernel_width", self.kernel_width.len()),
            ("kernel_type", self.kernel_type.len()),
            ("batch_size", self.batch_size.len()),
            ("embed_dim", self.embed_dim.len()),
        ];
        if let Some((name, _)) = axes.iter().find(|(_, n)| *n == 0) {
            return Err(Error::InvalidConfig(format!(
                "sweep axis `{name}` has no candidates"
            )));
        }
        if self.feature_sets.iter().any(Vec::is_empty)
            || self.train_movies.iter().any(Vec::is_empty)
        {
            return Err(Error::InvalidConfig(
                "feature sets and train-movie mixtures must be non-empty".into(),
            ));
        }
        if self.samples == 0 {
            return Err(Error::InvalidConfig(
                "sweep needs at least one sample".into(),
            ));
        }
        Ok(())
    }
}

/// One sampled point of a [`SweepSpace`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub id: String,
    pub lr: f64,
    pub weight_decay: f64,
    pub kernel_width: usize,
    pub kernel_type: KernelType,
    pub batch_size: usize,
    pub embed_dim: usize,
    /// Backbone labels; `None` keeps every backbone of the base config.
    pub features: Option<Vec<String>>,
    /// Train movies; `None` keeps the base split.
    pub train_movies: Option<Vec<String>>,
    /// Seed for initialization and window order.
    pub seed: u64,
}

impl SweepConfig {
    /// Encoder, trainer and split settings of this run on top of the base ones.
    pub fn resolve(
        &self,
        encoder: &EncoderConfig,
        train: &TrainConfig,
        split: &SplitSpec,
    ) -> Result<(EncoderConfig, TrainConfig, SplitSpec)> {
        let backbones = match &self.features {
            None => encoder.backbones.clone(),
            Some(labels) => labels
                .iter()
                .map(|l| {
                    encoder
                        .backbones
                        .iter()
                        .find(|b| &b.label == l)
                        .cloned()
                        .ok_or_else(|| Error::UnknownBackbone(l.clone()))
                })
                .collect::<Result<_>>()?,
        };
        let enc = EncoderConfig {
            backbones,
            embed_dim: self.embed_dim,
            kernel_width: self.kernel_width,
            kernel_type: self.kernel_type,
            ..encoder.clone()
        };
        let window_length = train.window_length.max(self.kernel_width);
        let tc = TrainConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            window_length,
            seed: self.seed,
            ..train.clone()
        };
        let mut sp = split.clone();
        if let Some(movies) = &self.train_movies {
            sp.train = movies.iter().cloned().collect();
        }
        sp.validate()?;
        enc.validate()?;
        tc.validate()?;
        Ok((enc, tc, sp))
    }
}

fn pick<T: Clone>(axis: &[T], rng: &mut impl Rng) -> T {
    axis[rng.random_range(0..axis.len())].clone()
}

/// `samples` independent uniform draws per axis, ids `m0000`, `m0001`, ...
pub fn sample_configs(space: &SweepSpace) -> Result<Vec<SweepConfig>> {
    space.validate()?;
    let mut rng = seeded(space.seed, streams::SWEEP);
    Ok((0..space.samples)
        .map(|i| SweepConfig {
            id: format!("m{i:04}"),
            lr: pick(&space.lr, &mut rng),
            weight_decay: pick(&space.weight_decay, &mut rng),
            kernel_width: pick(&space.kernel_width, &mut rng),
            kernel_type: pick(&space.kernel_type, &mut rng),
            batch_size: pick(&space.batch_size, &mut rng),
            embed_dim: pick(&space.embed_dim, &mut rng),
            features: (!space.feature_sets.is_empty()).then(|| pick(&space.feature_sets, &mut rng)),
            train_movies: (!space.train_movies.is_empty())
                .then(|| pick(&space.train_movies, &mut rng)),
            seed: rng.random(),
        })
        .collect())
}

/// Outcome of one sweep run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub id: String,
    pub config: SweepConfig,
    /// Checkpoint location relative to the record store; empty when failed.
    pub checkpoint: String,
    pub validation_movies: Vec<String>,
    pub scores: Vec<ParcelScores>,
    pub best_step: usize,
    /// Reason the run failed; failed runs are never selected.
    pub failure: Option<String>,
}

/// Trains one sweep configuration and scores it on the validation movies.
pub fn run_config(
    dataset: &Dataset,
    split: &SplitSpec,
    encoder: &EncoderConfig,
    base: &TrainConfig,
    config: &SweepConfig,
) -> Result<(EncoderCheckpoint, Vec<ParcelScores>)> {
    let (enc, tc, sp) = config.resolve(encoder, base, split)?;
    let (ckpt, _) = train(dataset, &sp, &enc, &tc)?;
    let subjects: Vec<usize> = (0..dataset.subjects).collect();
    let scores = score(&ckpt.predictor(), dataset, &sp.validation, &subjects)?;
    Ok((ckpt, scores))
}

/// Top-k model ids for every (subject, parcel), best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSelection {
    pub k: usize,
    pub parcels: usize,
    pub subjects: Vec<SubjectSelection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectSelection {
    pub subject: usize,
    /// `models[p]` lists the ids chosen for parcel `p`.
    pub models: Vec<Vec<String>>,
}

impl EnsembleSelection {
    pub fn cell(&self, subject: usize, parcel: usize) -> Option<&[String]> {
        self.subjects
            .iter()
            .find(|s| s.subject == subject)
            .map(|s| s.models[parcel].as_slice())
    }

    /// Every id used anywhere, sorted.
    pub fn model_ids(&self) -> BTreeSet<&str> {
        self.subjects
            .iter()
            .flat_map(|s| s.models.iter().flatten())
            .map(String::as_str)
            .collect()
    }
}

/// Mean validation r per (subject, parcel) over `movies`.
fn ranking_table(
    record: &ModelRecord,
    movies: &BTreeSet<String>,
) -> Result<BTreeMap<usize, Vec<f64>>> {
    let mut sums: BTreeMap<usize, (Vec<f64>, usize)> = BTreeMap::new();
    for movie in movies {
        let cells: Vec<&ParcelScores> =
            record.scores.iter().filter(|s| &s.movie == movie).collect();
        if cells.is_empty() {
            return Err(Error::GridMismatch(format!(
                "model `{}` has no scores for `{movie}`",
                record.id
            )));
        }
        for c in cells {
            let (acc, n) = sums
                .entry(c.subject)
                .or_insert_with(|| (alloc::vec![0.0; c.r.len()], 0));
            if acc.len() != c.r.len() {
                return Err(Error::GridMismatch(format!(
                    "model `{}` has inconsistent parcel counts",
                    record.id
                )));
            }
            for (p, a) in acc.iter_mut().enumerate() {
                *a += c.value(p);
            }
            *n += 1;
        }
    }
    Ok(sums
        .into_iter()
        .map(|(s, (acc, n))| (s, acc.into_iter().map(|v| v / n as f64).collect()))
        .collect())
}

/// Per (subject, parcel), the `k` successful models with the highest mean
/// validation r over `validation_movies`; ties go to the smaller id.
pub fn select_topk(
    records: &[ModelRecord],
    k: usize,
    validation_movies: &BTreeSet<String>,
) -> Result<EnsembleSelection> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be >= 1".into()));
    }
    if validation_movies.is_empty() {
        return Err(Error::EmptySplit("no validation movies to rank on".into()));
    }
    let mut ok: Vec<&ModelRecord> = records.iter().filter(|r| r.failure.is_none()).collect();
    if ok.is_empty() {
        return Err(Error::NoModels("no successful sweep runs".into()));
    }
    ok.sort_by(|a, b| a.id.cmp(&b.id));
    if ok.windows(2).any(|w| w[0].id == w[1].id) {
        return Err(Error::InvalidConfig("duplicate model ids".into()));
    }
    let tables: Vec<BTreeMap<usize, Vec<f64>>> = ok
        .iter()
        .map(|r| ranking_table(r, validation_movies))
        .collect::<Result<_>>()?;
    let grid: Vec<(usize, usize)> = tables[0].iter().map(|(s, v)| (*s, v.len())).collect();
    if tables
        .iter()
        .any(|t| t.iter().map(|(s, v)| (*s, v.len())).collect::<Vec<_>>() != grid)
    {
        return Err(Error::GridMismatch(
            "models were scored on different (subject, parcel) grids".into(),
        ));
    }
    let parcels = grid.first().map_or(0, |g| g.1);
    let subjects = grid
        .iter()
        .map(|&(s, _)| SubjectSelection {
            subject: s,
            models: (0..parcels)
                .map(|p| {
                    let mut order: Vec<usize> = (0..ok.len()).collect();
                    // stable sort keeps id order among equal scores
                    order.sort_by(|&a, &b| tables[b][&s][p].total_cmp(&tables[a][&s][p]));
                    order
                        .into_iter()
                        .take(k)
                        .map(|i| ok[i].id.clone())
                        .collect()
                })
                .collect(),
        })
        .collect();
    Ok(EnsembleSelection {
        k,
        parcels,
        subjects,
    })
}

/// Averages the predictions of the models selected for each parcel. Models
/// are summed in id order, so the output does not depend on list order.
pub struct EnsemblePredictor<'a, P> {
    pub selection: &'a EnsembleSelection,
    pub models: &'a BTreeMap<String, P>,
}

impl<P: Predictor> EnsemblePredictor<'_, P> {
    fn combine(&self, subject: usize, preds: &BTreeMap<&str, &Matrix>) -> Result<Matrix> {
        let sel = self
            .selection
            .subjects
            .iter()
            .find(|s| s.subject == subject)
            .ok_or_else(|| Error::MissingSubject {
                subject,
                episode: "ensemble selection".into(),
            })?;
        let rows = preds.values().next().map_or(0, |m| m.rows());
        let mut out = Matrix::zeros(rows, self.selection.parcels);
        for (p, ids) in sel.models.iter().enumerate() {
            let mut sorted: Vec<&str> = ids.iter().map(String::as_str).collect();
            sorted.sort_unstable();
            let cols: Vec<&Matrix> = sorted.iter().map(|id| preds[id]).collect();
            for t in 0..rows {
                let mut acc = cols[0][(t, p)];
                for m in &cols[1..] {
                    acc += m[(t, p)];
                }
                out[(t, p)] = acc / cols.len() as f64;
            }
        }
        Ok(out)
    }

    fn needed(&self, subject: usize) -> BTreeSet<&str> {
        self.selection
            .subjects
            .iter()
            .filter(|s| s.subject == subject)
            .flat_map(|s| s.models.iter().flatten())
            .map(String::as_str)
            .collect()
    }

    fn model(&self, id: &str) -> Result<&P> {
        self.models
            .get(id)
            .ok_or_else(|| Error::NoModels(format!("selected model `{id}` is not loaded")))
    }
}

impl<P: Predictor> Predictor for EnsemblePredictor<'_, P> {
    fn predict_episode(&self, dataset: &Dataset, episode: usize, subject: usize) -> Result<Matrix> {
        Ok(self
            .predict_subjects(dataset, episode, &[subject])?
            .remove(0))
    }

    fn predict_subjects(
        &self,
        dataset: &Dataset,
        episode: usize,
        subjects: &[usize],
    ) -> Result<Vec<Matrix>> {
        let mut users: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for &s in subjects {
            for id in self.needed(s) {
                users.entry(id).or_default().push(s);
            }
        }
        let mut preds: BTreeMap<(&str, usize), Matrix> = BTreeMap::new();
        for (id, subs) in &users {
            for (s, m) in subs
                .iter()
                .zip(self.model(id)?.predict_subjects(dataset, episode, subs)?)
            {
                preds.insert((id, *s), m);
            }
        }
        subjects
            .iter()
            .map(|&s| {
                let mine: BTreeMap<&str, &Matrix> = preds
                    .iter()
                    .filter(|((_, ps), _)| *ps == s)
                    .map(|((id, _), m)| (*id, m))
                    .collect();
                self.combine(s, &mine)
            })
            .collect()
    }
}

/// Ensemble prediction for one subject over a whole movie.
#[derive(Debug, Clone, PartialEq)]
pub struct MoviePrediction {
    pub subject: usize,
    pub movie: String,
    /// Episodes in concatenation order.
    pub episodes: Vec<String>,
    pub prediction: Matrix,
}

/// Averaged predictions for every selected subject on each of `movies`
/// (episodes concatenated in name order).
pub fn predict_ensemble<P: Predictor>(
    selection: &EnsembleSelection,
    models: &BTreeMap<String, P>,
    dataset: &Dataset,
    movies: &BTreeSet<String>,
) -> Result<Vec<MoviePrediction>> {
    for id in selection.model_ids() {
        if !models.contains_key(id) {
            return Err(Error::NoModels(format!(
                "selected model `{id}` is not loaded"
            )));
        }
    }
    let ens = EnsemblePredictor { selection, models };
    let mut out = Vec::new();
    for sel in &selection.subjects {
        for movie in movies {
            if let Some((prediction, _, episodes)) =
                movie_predictions(&ens, dataset, movie, sel.subject)?
            {
                out.push(MoviePrediction {
                    subject: sel.subject,
                    movie: movie.clone(),
                    episodes,
                    prediction,
                });
            }
        }
    }
    Ok(out)
}

/// A scored prediction set: one cell per (subject, movie).
#[derive(Debug, Clone, PartialEq)]
pub struct Submission {
    pub name: String,
    pub cells: Vec<SubmissionCell>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubmissionCell {
    pub scores: ParcelScores,
    pub prediction: Option<Matrix>,
}

impl Submission {
    pub fn scores(&self) -> Vec<ParcelScores> {
        self.cells.iter().map(|c| c.scores.clone()).collect()
    }

    pub fn aggregate(&self) -> Result<f64> {
        overall_mean(&self.scores())
    }

    fn grid(&self) -> Vec<(usize, &str, usize)> {
        self.cells
            .iter()
            .map(|c| (c.scores.subject, c.scores.movie.as_str(), c.scores.r.len()))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Choice {
    pub subject: usize,
    pub movie: String,
    pub source: String,
    pub r: f64,
}

/// For every (subject, movie) keeps the cell of the submission with the
/// highest mean r (first submission on ties). Cells follow the order of the
/// first submission, so the combined aggregate is never below any input
/// aggregate computed with the same cell order.
pub fn per_movie_best(submissions: &[Submission]) -> Result<(Submission, Vec<Choice>)> {
    let first = submissions
        .first()
        .ok_or_else(|| Error::NoModels("no submissions to combine".into()))?;
    let grid = first.grid();
    let mut seen = BTreeSet::new();
    if grid.iter().any(|&(s, m, _)| !seen.insert((s, m))) {
        return Err(Error::GridMismatch(
            "duplicate (subject, movie) cell".into(),
        ));
    }
    for sub in &submissions[1..] {
        let mut theirs = sub.grid();
        let mut ours = grid.clone();
        theirs.sort_unstable();
        ours.sort_unstable();
        if theirs != ours {
            return Err(Error::GridMismatch(format!(
                "submission `{}` covers a different grid",
                sub.name
            )));
        }
    }
    let mut cells = Vec::with_capacity(grid.len());
    let mut choices = Vec::with_capacity(grid.len());
    for &(subject, movie, _) in &grid {
        let mut best: Option<(&Submission, &SubmissionCell, f64)> = None;
        for sub in submissions {
            let cell = sub
                .cells
                .iter()
                .find(|c| c.scores.subject == subject && c.scores.movie == movie)
                .expect("grid checked");
            let r = cell.scores.mean();
            if best.is_none_or(|(_, _, b)| r > b) {
                best = Some((sub, cell, r));
            }
        }
        let (sub, cell, r) = best.expect("at least one submission");
        choices.push(Choice {
            subject,
            movie: movie.into(),
            source: sub.name.clone(),
            r,
        });
        cells.push(cell.clone());
    }
    Ok((
        Submission {
            name: "per-movie-best".into(),
            cells,
        },
        choices,
    ))
}
