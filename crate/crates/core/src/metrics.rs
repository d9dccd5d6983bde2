//! Per-parcel Pearson scoring of predictions against held-out BOLD and the
//! nested means used to summarize score tables.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Anything that can predict a subject's BOLD for a whole episode.
pub trait Predictor {
    fn predict_episode(&self, dataset: &Dataset, episode: usize, subject: usize) -> Result<Matrix>;

    /// Predictions for several subjects; models override this to share work.
    fn predict_subjects(
        &self,
        dataset: &Dataset,
        episode: usize,
        subjects: &[usize],
    ) -> Result<Vec<Matrix>> {
        subjects
            .iter()
            .map(|&s| self.predict_episode(dataset, episode, s))
            .collect()
    }
}

impl<P: Predictor + ?Sized> Predictor for &P {
    fn predict_episode(&self, dataset: &Dataset, episode: usize, subject: usize) -> Result<Matrix> {
        (**self).predict_episode(dataset, episode, subject)
    }

    fn predict_subjects(
        &self,
        dataset: &Dataset,
        episode: usize,
        subjects: &[usize],
    ) -> Result<Vec<Matrix>> {
        (**self).predict_subjects(dataset, episode, subjects)
    }
}

/// Sample Pearson correlation. `Ok(None)` when either input is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Option<f64>> {
    if x.len() != y.len() {
        return Err(Error::Length(format!(
            "pearson on lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::Length("pearson needs at least 2 samples".into()));
    }
    let constant = |v: &[f64]| v.iter().all(|&a| a == v[0]);
    if constant(x) || constant(y) {
        return Ok(None);
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(None);
    }
    Ok(Some((sxy / libm::sqrt(sxx * syy)).clamp(-1.0, 1.0)))
}

/// Per-column Pearson between two equally shaped matrices.
pub fn column_pearson(pred: &Matrix, target: &Matrix) -> Result<Vec<Option<f64>>> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape(format!(
            "prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    (0..pred.cols())
        .map(|c| pearson(&pred.column(c), &target.column(c)))
        .collect()
}

/// Per-parcel correlations for one subject on one movie.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParcelScores {
    pub subject: usize,
    pub movie: String,
    /// `None` marks an undefined correlation (constant series).
    pub r: Vec<Option<f64>>,
    pub n_trs: usize,
}

impl ParcelScores {
    /// Undefined entries count as 0.
    pub fn value(&self, parcel: usize) -> f64 {
        self.r[parcel].unwrap_or(0.0)
    }

    pub fn mean(&self) -> f64 {
        if self.r.is_empty() {
            return 0.0;
        }
        self.r.iter().map(|v| v.unwrap_or(0.0)).sum::<f64>() / self.r.len() as f64
    }

    pub fn undefined(&self) -> usize {
        self.r.iter().filter(|v| v.is_none()).count()
    }
}

/// Concatenated predictions and targets of `subject` over the episodes of
/// `movie` (name order); `None` if the subject saw none of them.
pub fn movie_predictions(
    model: &impl Predictor,
    dataset: &Dataset,
    movie: &str,
    subject: usize,
) -> Result<Option<(Matrix, Matrix, Vec<String>)>> {
    let episodes = dataset.movie_episodes(movie);
    if episodes.is_empty() {
        return Err(Error::UnknownMovie(movie.into()));
    }
    let mut preds = Vec::new();
    let mut targets = Vec::new();
    let mut names = Vec::new();
    for e in episodes {
        let ep = &dataset.episodes[e];
        if let Some(y) = ep.bold.get(subject).and_then(Option::as_ref) {
            preds.push(model.predict_episode(dataset, e, subject)?);
            targets.push(y);
            names.push(ep.id.name.clone());
        }
    }
    if preds.is_empty() {
        return Ok(None);
    }
    Ok(Some((
        Matrix::vstack(&preds)?,
        Matrix::vstack(targets)?,
        names,
    )))
}

/// Scores `model` on every (subject, movie) pair, correlating whole movies
/// (episodes concatenated in name order). Pairs where the subject saw no
/// episode of the movie are omitted. Output is ordered by subject, then movie.
pub fn score<'a>(
    model: &impl Predictor,
    dataset: &Dataset,
    movies: impl IntoIterator<Item = &'a String>,
    subjects: &[usize],
) -> Result<Vec<ParcelScores>> {
    let movies: BTreeSet<&String> = movies.into_iter().collect();
    for &s in subjects {
        if s >= dataset.subjects {
            return Err(Error::SubjectOutOfRange {
                subject: s,
                subjects: dataset.subjects,
            });
        }
    }
    let mut cells: BTreeMap<(usize, &str), ParcelScores> = BTreeMap::new();
    for movie in &movies {
        let episodes = dataset.movie_episodes(movie);
        if episodes.is_empty() {
            return Err(Error::UnknownMovie((*movie).clone()));
        }
        let mut preds: Vec<Vec<Matrix>> = alloc::vec![Vec::new(); subjects.len()];
        let mut targets: Vec<Vec<&Matrix>> = alloc::vec![Vec::new(); subjects.len()];
        for e in episodes {
            let ep = &dataset.episodes[e];
            let present: Vec<usize> = (0..subjects.len())
                .filter(|&i| ep.subject_present(subjects[i]))
                .collect();
            let ids: Vec<usize> = present.iter().map(|&i| subjects[i]).collect();
            for (i, p) in present
                .into_iter()
                .zip(model.predict_subjects(dataset, e, &ids)?)
            {
                preds[i].push(p);
                targets[i].push(ep.bold[subjects[i]].as_ref().expect("present"));
            }
        }
        for (i, &s) in subjects.iter().enumerate() {
            if preds[i].is_empty() {
                continue;
            }
            let pred = Matrix::vstack(&preds[i])?;
            let target = Matrix::vstack(targets[i].iter().copied())?;
            if pred.rows() < 2 {
                return Err(Error::Length(format!(
                    "movie `{movie}` has fewer than 2 TRs"
                )));
            }
            cells.insert(
                (s, movie.as_str()),
                ParcelScores {
                    subject: s,
                    movie: (*movie).clone(),
                    r: column_pearson(&pred, &target)?,
                    n_trs: pred.rows(),
                },
            );
        }
    }
    let mut out: Vec<ParcelScores> = Vec::with_capacity(cells.len());
    for &s in subjects {
        out.extend(
            cells
                .iter()
                .filter(|((cs, _), _)| *cs == s)
                .map(|(_, v)| v.clone()),
        );
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Parcel,
    Subject,
    Movie,
    Overall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub key: String,
    pub mean: f64,
    /// Undefined correlations that entered this mean as 0.
    pub undefined: usize,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Nested means: parcels within a (subject, movie), then subjects within a
/// movie, then movies.
pub fn aggregate(scores: &[ParcelScores], level: Level) -> Result<Vec<AggregateRow>> {
    if scores.is_empty() {
        return Err(Error::EmptyBatch("no scores to aggregate".into()));
    }
    let mut by_movie: BTreeMap<&str, Vec<&ParcelScores>> = BTreeMap::new();
    for s in scores {
        by_movie.entry(s.movie.as_str()).or_default().push(s);
    }
    let movie_mean =
        |rows: &[&ParcelScores], f: &dyn Fn(&ParcelScores) -> f64| mean(rows.iter().map(|s| f(s)));
    let rows = match level {
        Level::Overall => {
            let m = mean(
                by_movie
                    .values()
                    .map(|rows| movie_mean(rows, &ParcelScores::mean)),
            );
            alloc::vec![AggregateRow {
                key: "overall".into(),
                mean: m,
                undefined: scores.iter().map(ParcelScores::undefined).sum(),
            }]
        }
        Level::Movie => by_movie
            .iter()
            .map(|(movie, rows)| AggregateRow {
                key: (*movie).into(),
                mean: movie_mean(rows, &ParcelScores::mean),
                undefined: rows.iter().map(|s| s.undefined()).sum(),
            })
            .collect(),
        Level::Subject => {
            let subjects: BTreeSet<usize> = scores.iter().map(|s| s.subject).collect();
            subjects
                .into_iter()
                .map(|subj| {
                    let own: Vec<&ParcelScores> =
                        scores.iter().filter(|s| s.subject == subj).collect();
                    let mut per_movie: BTreeMap<&str, Vec<&ParcelScores>> = BTreeMap::new();
                    for s in &own {
                        per_movie.entry(s.movie.as_str()).or_default().push(s);
                    }
                    AggregateRow {
                        key: format!("{subj}"),
                        mean: mean(
                            per_movie
                                .values()
                                .map(|rows| movie_mean(rows, &ParcelScores::mean)),
                        ),
                        undefined: own.iter().map(|s| s.undefined()).sum(),
                    }
                })
                .collect()
        }
        Level::Parcel => {
            let parcels = scores.iter().map(|s| s.r.len()).max().unwrap_or(0);
            (0..parcels)
                .map(|p| {
                    let value = |s: &ParcelScores| s.r.get(p).copied().flatten().unwrap_or(0.0);
                    AggregateRow {
                        key: format!("{p}"),
                        mean: mean(by_movie.values().map(|rows| movie_mean(rows, &value))),
                        undefined: scores
                            .iter()
                            .filter(|s| matches!(s.r.get(p), Some(None)))
                            .count(),
                    }
                })
                .collect()
        }
    };
    Ok(rows)
}

/// Overall nested mean of a score table.
pub fn overall_mean(scores: &[ParcelScores]) -> Result<f64> {
    Ok(aggregate(scores, Level::Overall)?[0].mean)
}
