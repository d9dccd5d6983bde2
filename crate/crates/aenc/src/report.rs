//! CSV / JSON score tables and prediction tensors.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use aenc_core::ceilings::GapRow;
use aenc_core::ensemble::{MoviePrediction, Submission, SubmissionCell};
use aenc_core::metrics::{aggregate, AggregateRow, Level};
use aenc_core::ParcelScores;
use serde::{Deserialize, Serialize};

use crate::error::{AencError, Result};
use crate::files::{read_json, write_atomic, write_json};
use crate::tensor_file::{read_matrix, write_matrix, DType};

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> AencError + '_ {
    move |source| AencError::Csv {
        path: path.into(),
        source,
    }
}

fn write_rows(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(csv_err(path))?;
    for row in rows {
        w.write_record(&row).map_err(csv_err(path))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| AencError::format(path, e.to_string()))?;
    write_atomic(path, &bytes)
}

fn parcel_rows(scores: &[ParcelScores]) -> impl Iterator<Item = Vec<String>> + '_ {
    scores.iter().flat_map(|s| {
        s.r.iter().enumerate().map(move |(p, r)| {
            vec![
                s.subject.to_string(),
                s.movie.clone(),
                p.to_string(),
                r.map(|v| v.to_string()).unwrap_or_default(),
            ]
        })
    })
}

/// `subject,movie,parcel_index,r`; undefined correlations are empty.
pub fn write_scores_csv(path: &Path, scores: &[ParcelScores]) -> Result<()> {
    write_rows(
        path,
        &["subject", "movie", "parcel_index", "r"],
        parcel_rows(scores),
    )
}

/// `subject,movie,parcel_index,value`.
pub fn write_value_csv(path: &Path, scores: &[ParcelScores]) -> Result<()> {
    write_rows(
        path,
        &["subject", "movie", "parcel_index", "value"],
        parcel_rows(scores),
    )
}

pub fn write_gap_csv(path: &Path, rows: &[GapRow]) -> Result<()> {
    write_rows(
        path,
        &["subject", "movie", "parcel_index", "value"],
        rows.iter().map(|g| {
            vec![
                g.subject.to_string(),
                g.movie.clone(),
                g.parcel.to_string(),
                g.gap.to_string(),
            ]
        }),
    )
}

/// Reads a four-column parcel table written by this crate (`r` or `value`).
pub fn read_parcel_csv(path: &Path) -> Result<Vec<ParcelScores>> {
    let mut reader = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let mut cells: BTreeMap<(usize, String), Vec<(usize, Option<f64>)>> = BTreeMap::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        let bad = |what: &str| AencError::format(path, format!("row {}: bad {what}", i + 2));
        if rec.len() != 4 {
            return Err(bad("column count"));
        }
        let subject: usize = rec[0].parse().map_err(|_| bad("subject"))?;
        let parcel: usize = rec[2].parse().map_err(|_| bad("parcel_index"))?;
        let value = if rec[3].is_empty() {
            None
        } else {
            Some(rec[3].parse::<f64>().map_err(|_| bad("value"))?)
        };
        cells
            .entry((subject, rec[1].to_string()))
            .or_default()
            .push((parcel, value));
    }
    cells
        .into_iter()
        .map(|((subject, movie), mut vals)| {
            vals.sort_by_key(|v| v.0);
            if vals.iter().enumerate().any(|(i, v)| v.0 != i) {
                return Err(AencError::format(
                    path,
                    format!("parcels of ({subject}, {movie}) are not 0..n"),
                ));
            }
            Ok(ParcelScores {
                subject,
                movie,
                r: vals.into_iter().map(|v| v.1).collect(),
                n_trs: 0,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub overall: f64,
    pub movies: Vec<AggregateRow>,
    pub subjects: Vec<AggregateRow>,
    pub undefined: usize,
}

pub fn summarize(scores: &[ParcelScores]) -> Result<Summary> {
    let overall = aggregate(scores, Level::Overall)?.remove(0);
    Ok(Summary {
        overall: overall.mean,
        movies: aggregate(scores, Level::Movie)?,
        subjects: aggregate(scores, Level::Subject)?,
        undefined: overall.undefined,
    })
}

/// Writes `scores.csv`, `scores.json` and `summary.json` into `dir`.
pub fn write_score_tables(dir: &Path, scores: &[ParcelScores]) -> Result<Summary> {
    write_scores_csv(&dir.join("scores.csv"), scores)?;
    write_json(&dir.join("scores.json"), &scores)?;
    let summary = summarize(scores)?;
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

pub fn prediction_path(dir: &Path, subject: usize, movie: &str) -> PathBuf {
    dir.join("predictions")
        .join(format!("sub-{subject}_{movie}.aenc"))
}

/// One f64 tensor per (subject, movie) under `dir/predictions/`.
pub fn write_predictions(dir: &Path, predictions: &[MoviePrediction]) -> Result<()> {
    for p in predictions {
        write_matrix(
            &prediction_path(dir, p.subject, &p.movie),
            DType::F64,
            &p.prediction,
        )?;
    }
    Ok(())
}

/// Loads a scored output directory (`scores.json` plus optional predictions).
pub fn read_submission(dir: &Path) -> Result<Submission> {
    let scores: Vec<ParcelScores> = read_json(&dir.join("scores.json"))?;
    let cells = scores
        .into_iter()
        .map(|s| {
            let path = prediction_path(dir, s.subject, &s.movie);
            let prediction = if path.exists() {
                Some(read_matrix(&path)?)
            } else {
                None
            };
            Ok(SubmissionCell {
                scores: s,
                prediction,
            })
        })
        .collect::<Result<_>>()?;
    Ok(Submission {
        name: dir.display().to_string(),
        cells,
    })
}

pub fn write_submission(dir: &Path, submission: &Submission) -> Result<Summary> {
    let scores = submission.scores();
    for c in &submission.cells {
        if let Some(m) = &c.prediction {
            write_matrix(
                &prediction_path(dir, c.scores.subject, &c.scores.movie),
                DType::F64,
                m,
            )?;
        }
    }
    write_score_tables(dir, &scores)
}
