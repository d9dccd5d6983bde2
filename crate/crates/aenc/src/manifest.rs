//! JSON dataset manifests pointing at AENC tensor files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use aenc_core::data::{align_lengths, BoldSeries, FeatureSeries, DEFAULT_TR_SECONDS};
use aenc_core::{Backbone, Dataset, Episode, EpisodeId, Matrix};
use serde::{Deserialize, Serialize};

use crate::error::{AencError, Result};
use crate::files::{read_json, write_json};
use crate::tensor_file::{read_matrix, write_matrix, DType};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub subjects: usize,
    pub parcels: usize,
    #[serde(default = "default_tr")]
    pub tr_seconds: f64,
    pub backbones: Vec<Backbone>,
    pub episodes: Vec<ManifestEpisode>,
}

fn default_tr() -> f64 {
    DEFAULT_TR_SECONDS
}

fn first_presentation() -> u8 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEpisode {
    pub name: String,
    pub movie: String,
    #[serde(default = "first_presentation")]
    pub presentation: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stimulus: Option<String>,
    /// Backbone label -> tensor path relative to the manifest.
    pub features: BTreeMap<String, String>,
    /// One entry per subject; `null` marks an episode the subject did not see.
    pub bold: Vec<Option<String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedDataset {
    pub dataset: Dataset,
    /// Length-alignment notes, one per affected episode.
    pub warnings: Vec<String>,
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Loads a tensor and checks its column count.
fn load_columns(path: &Path, cols: usize, what: &str) -> Result<Matrix> {
    let m = read_matrix(path)?;
    if m.cols() != cols {
        return Err(AencError::format(
            path,
            format!(
                "{what} expects {cols} columns, file has shape {:?}",
                m.shape()
            ),
        ));
    }
    if !m.is_finite() {
        return Err(AencError::format(path, "non-finite values"));
    }
    Ok(m)
}

fn load_episode(
    manifest: &Manifest,
    dir: &Path,
    e: &ManifestEpisode,
) -> Result<(Episode, Vec<String>)> {
    let id = EpisodeId::new(e.name.clone(), e.movie.clone());
    if e.bold.len() != manifest.subjects {
        return Err(AencError::Usage(format!(
            "episode `{}` lists {} BOLD entries for {} subjects",
            e.name,
            e.bold.len(),
            manifest.subjects
        )));
    }
    if let Some(extra) = e
        .features
        .keys()
        .find(|k| !manifest.backbones.iter().any(|b| &&b.label == k))
    {
        return Err(AencError::Usage(format!(
            "episode `{}` has features for unknown backbone `{extra}`",
            e.name
        )));
    }
    let mut features = Vec::with_capacity(manifest.backbones.len());
    for b in &manifest.backbones {
        let rel = e.features.get(&b.label).ok_or_else(|| {
            AencError::Usage(format!(
                "episode `{}` is missing backbone `{}`",
                e.name, b.label
            ))
        })?;
        let data = load_columns(&dir.join(rel), b.dim, &format!("backbone `{}`", b.label))?;
        features.push(FeatureSeries {
            episode: id.clone(),
            backbone: b.label.clone(),
            data,
        });
    }
    let mut bold = Vec::new();
    for (s, rel) in e.bold.iter().enumerate() {
        if let Some(rel) = rel {
            let data = load_columns(&dir.join(rel), manifest.parcels, "BOLD")?;
            bold.push(BoldSeries {
                episode: id.clone(),
                subject: s,
                data,
            });
        }
    }
    let aligned = align_lengths(features, bold)?;
    let mut by_subject: Vec<Option<Matrix>> = vec![None; manifest.subjects];
    for b in aligned.bold {
        by_subject[b.subject] = Some(b.data);
    }
    let episode = Episode {
        id,
        presentation: e.presentation,
        stimulus: e.stimulus.clone(),
        features: aligned.features.into_iter().map(|f| f.data).collect(),
        bold: by_subject,
    };
    Ok((episode, aligned.warnings))
}

/// Reads a manifest and every tensor it references into a validated dataset.
pub fn load_manifest(path: &Path) -> Result<LoadedDataset> {
    let manifest: Manifest = read_json(path)?;
    let dir = base_dir(path);
    let mut episodes = Vec::with_capacity(manifest.episodes.len());
    let mut warnings = Vec::new();
    for e in &manifest.episodes {
        let (ep, w) = load_episode(&manifest, &dir, e)?;
        episodes.push(ep);
        warnings.extend(w);
    }
    let dataset = Dataset {
        subjects: manifest.subjects,
        parcels: manifest.parcels,
        backbones: manifest.backbones.clone(),
        episodes,
        tr_seconds: manifest.tr_seconds,
    };
    dataset.validate().map_err(|source| AencError::Data {
        path: path.into(),
        source,
    })?;
    Ok(LoadedDataset { dataset, warnings })
}

/// Outcome of checking a manifest without stopping at the first problem.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub manifest: String,
    pub subjects: usize,
    pub parcels: usize,
    pub episodes: usize,
    pub issues: Vec<String>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn clean(&self) -> bool {
        self.issues.is_empty()
    }
}

/// Checks every episode and tensor, collecting all issues.
pub fn validate_manifest(path: &Path) -> ValidationReport {
    let mut report = ValidationReport {
        manifest: path.display().to_string(),
        subjects: 0,
        parcels: 0,
        episodes: 0,
        issues: Vec::new(),
        warnings: Vec::new(),
    };
    let manifest: Manifest = match read_json(path) {
        Ok(m) => m,
        Err(e) => {
            report.issues.push(e.to_string());
            return report;
        }
    };
    report.subjects = manifest.subjects;
    report.parcels = manifest.parcels;
    report.episodes = manifest.episodes.len();
    let dir = base_dir(path);
    let mut episodes = Vec::new();
    for e in &manifest.episodes {
        match load_episode(&manifest, &dir, e) {
            Ok((ep, w)) => {
                episodes.push(ep);
                report.warnings.extend(w);
            }
            Err(err) => report.issues.push(format!("episode `{}`: {err}", e.name)),
        }
    }
    if report.issues.is_empty() {
        let dataset = Dataset {
            subjects: manifest.subjects,
            parcels: manifest.parcels,
            backbones: manifest.backbones.clone(),
            episodes,
            tr_seconds: manifest.tr_seconds,
        };
        if let Err(e) = dataset.validate() {
            report.issues.push(e.to_string());
        }
    }
    report
}

/// Writes `dataset` as f32 tensors under `dir` plus `dir/manifest.json`.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<PathBuf> {
    dataset.validate()?;
    let mut episodes = Vec::with_capacity(dataset.episodes.len());
    for ep in &dataset.episodes {
        let mut features = BTreeMap::new();
        for (b, x) in dataset.backbones.iter().zip(&ep.features) {
            let rel = format!("tensors/{}/{}.aenc", ep.id.name, b.label);
            write_matrix(&dir.join(&rel), DType::F32, x)?;
            features.insert(b.label.clone(), rel);
        }
        let mut bold = Vec::with_capacity(dataset.subjects);
        for (s, y) in ep.bold.iter().enumerate() {
            bold.push(match y {
                Some(y) => {
                    let rel = format!("tensors/{}/bold-sub{s}.aenc", ep.id.name);
                    write_matrix(&dir.join(&rel), DType::F32, y)?;
                    Some(rel)
                }
                None => None,
            });
        }
        episodes.push(ManifestEpisode {
            name: ep.id.name.clone(),
            movie: ep.id.movie.clone(),
            presentation: ep.presentation,
            stimulus: ep.stimulus.clone(),
            features,
            bold,
        });
    }
    let manifest = Manifest {
        subjects: dataset.subjects,
        parcels: dataset.parcels,
        tr_seconds: dataset.tr_seconds,
        backbones: dataset.backbones.clone(),
        episodes,
    };
    let path = dir.join("manifest.json");
    write_json(&path, &manifest)?;
    Ok(path)
}
