use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use aenc_core::ceilings::{ceiling_gap, cross_train, repeat_pairs, split_half_ceiling};
use aenc_core::data::zscore_fit;
use aenc_core::ensemble::{
    per_movie_best, predict_ensemble, sample_configs, select_topk, EnsemblePredictor,
    MoviePrediction,
};
use aenc_core::metrics::{self, movie_predictions, ParcelScores};
use aenc_core::synth::{synth_generate, SynthSpec};
use aenc_core::trainer;
use aenc_core::{Dataset, FittedEncoder, SplitSpec};

use crate::checkpoint::{load_encoder, save_cross, save_encoder, save_planted, DataRef};
use crate::cli::Invocation;
use crate::config::{CeilingMethod, RunConfig};
use crate::error::{AencError, Result};
use crate::files::{check_fresh, write_json};
use crate::manifest::{load_manifest, save_dataset, validate_manifest};
use crate::report::{
    read_parcel_csv, read_submission, summarize, write_gap_csv, write_predictions,
    write_score_tables, write_submission, write_value_csv,
};
use crate::sweep::{load_records, run_sweep, SweepContext};

fn absolute(p: &Path) -> Result<PathBuf> {
    std::path::absolute(p).map_err(AencError::io(p))
}

fn load(manifest: &Path, normalization: Option<&SplitSpec>) -> Result<Dataset> {
    let loaded = load_manifest(manifest)?;
    for w in &loaded.warnings {
        eprintln!("warning: {w}");
    }
    match normalization {
        Some(split) => Ok(zscore_fit(&loaded.dataset, split)?.apply(&loaded.dataset)?),
        None => Ok(loaded.dataset),
    }
}

fn save_run_config(out: &Path, config: &RunConfig) -> Result<()> {
    write_json(&out.join("run_config.json"), config)
}

fn movie_set(movies: &[String]) -> Result<BTreeSet<String>> {
    if movies.is_empty() {
        return Err(AencError::Usage("no movies to score".into()));
    }
    Ok(movies.iter().cloned().collect())
}

fn data_ref(config: &RunConfig, split: &SplitSpec) -> Result<DataRef> {
    Ok(DataRef {
        manifest: Some(config.manifest()?.display().to_string()),
        split: Some(split.clone()),
        normalization: config.normalize.then(|| split.clone()),
    })
}

pub fn validate(inv: Invocation) -> Result<String> {
    let manifest = inv.config.manifest()?;
    let report = validate_manifest(manifest);
    if let Some(out) = &inv.out {
        write_json(&out.join("validation.json"), &report)?;
        save_run_config(out, &inv.config)?;
    }
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    for issue in &report.issues {
        eprintln!("issue: {issue}");
    }
    if !report.clean() {
        return Err(AencError::Invalid(report.issues.len()));
    }
    Ok(format!(
        "validate: ok, {} episodes, {} subjects, {} parcels",
        report.episodes, report.subjects, report.parcels
    ))
}

pub fn synth(mut inv: Invocation) -> Result<String> {
    let out = inv.out()?.to_path_buf();
    check_fresh(&out.join("manifest.json"), inv.force)?;
    let spec = inv
        .config
        .synth
        .get_or_insert_with(|| SynthSpec::small(inv.config.train.seed))
        .clone();
    let syn = synth_generate(&spec)?;
    let path = save_dataset(&syn.dataset, &out)?;
    save_planted(&out.join("planted.ckpt"), &syn.config, &syn.planted)?;
    save_run_config(&out, &inv.config)?;
    Ok(format!(
        "synth: {} episodes, {} subjects, {} parcels -> {}",
        syn.dataset.episodes.len(),
        spec.subjects,
        spec.parcels,
        path.display()
    ))
}

pub fn train(inv: Invocation) -> Result<String> {
    let out = inv.out()?;
    let path = out.join("checkpoint.ckpt");
    check_fresh(&path, inv.force)?;
    let config = &inv.config;
    let split = config.split()?;
    let data = data_ref(config, split)?;
    let dataset = load(config.manifest()?, data.normalization.as_ref())?;
    let encoder = config.encoder.resolve(&dataset)?;
    let (ckpt, log) = trainer::train(&dataset, split, &encoder, &config.train)?;
    save_encoder(&path, &ckpt, &data)?;
    write_json(&out.join("train_log.json"), &log)?;
    save_run_config(out, config)?;
    Ok(match ckpt.best_score {
        Some(r) => format!(
            "train: best validation r {r:.4} at step {} -> {}",
            ckpt.best_step,
            path.display()
        ),
        None => format!(
            "train: {} steps without validation -> {}",
            ckpt.best_step,
            path.display()
        ),
    })
}

fn all_subjects(dataset: &Dataset) -> Vec<usize> {
    (0..dataset.subjects).collect()
}

pub fn score(mut inv: Invocation) -> Result<String> {
    let out = inv.out()?.to_path_buf();
    check_fresh(&out.join("scores.csv"), inv.force)?;
    let config = &mut inv.config;
    let ckpt_path = absolute(
        config
            .score
            .checkpoint
            .as_deref()
            .ok_or_else(|| AencError::Usage("--checkpoint is required".into()))?,
    )?;
    config.score.checkpoint = Some(ckpt_path.clone());
    let (ckpt, data) = load_encoder(&ckpt_path)?;
    if config.manifest.is_none() {
        config.manifest = data.manifest.as_ref().map(PathBuf::from);
    }
    let dataset = load(config.manifest()?, data.normalization.as_ref())?;
    let movies: Vec<String> = match &config.score.movies {
        Some(m) => m.clone(),
        None => data
            .split
            .as_ref()
            .map(|s| s.test.iter().cloned().collect())
            .unwrap_or_default(),
    };
    config.score.movies = Some(movies.clone());
    let movies = movie_set(&movies)?;
    let model = ckpt.predictor();
    let scores = metrics::score(&model, &dataset, &movies, &all_subjects(&dataset))?;
    let summary = write_score_tables(&out, &scores)?;
    if config.score.predictions {
        let mut preds = Vec::new();
        for s in all_subjects(&dataset) {
            for movie in &movies {
                if let Some((prediction, _, episodes)) =
                    movie_predictions(&model, &dataset, movie, s)?
                {
                    preds.push(MoviePrediction {
                        subject: s,
                        movie: movie.clone(),
                        episodes,
                        prediction,
                    });
                }
            }
        }
        write_predictions(&out, &preds)?;
    }
    save_run_config(&out, config)?;
    Ok(format!(
        "score: mean r {:.4} over {} movie(s), {} cell(s)",
        summary.overall,
        movies.len(),
        scores.len()
    ))
}

pub fn sweep(inv: Invocation) -> Result<String> {
    let out = inv.out()?;
    let config = &inv.config;
    let space = config
        .sweep
        .as_ref()
        .ok_or_else(|| AencError::Usage("config has no `sweep` space".into()))?;
    let records = out.join("records");
    check_fresh(&records, inv.force)?;
    for dir in [records, out.join("models")] {
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(AencError::io(&dir))?;
        }
    }
    let split = config.split()?;
    let data = data_ref(config, split)?;
    let dataset = load(config.manifest()?, data.normalization.as_ref())?;
    let encoder = config.encoder.resolve(&dataset)?;
    let configs = sample_configs(space)?;
    write_json(&out.join("sweep.json"), &configs)?;
    let ctx = SweepContext {
        dataset: &dataset,
        split,
        encoder: &encoder,
        train: &config.train,
        data: &data,
    };
    let records = run_sweep(&ctx, &configs, config.workers, out)?;
    save_run_config(out, config)?;
    let failed = records.iter().filter(|r| r.failure.is_some()).count();
    Ok(format!(
        "sweep: {} models, {failed} failed -> {}",
        records.len(),
        out.display()
    ))
}

pub fn ensemble(mut inv: Invocation) -> Result<String> {
    let out = inv.out()?.to_path_buf();
    check_fresh(&out.join("scores.json"), inv.force)?;
    let config = &mut inv.config;
    if !config.ensemble.combine.is_empty() {
        config.ensemble.combine = config
            .ensemble
            .combine
            .iter()
            .map(|p| absolute(p))
            .collect::<Result<_>>()?;
        let subs = config
            .ensemble
            .combine
            .iter()
            .map(|d| read_submission(d))
            .collect::<Result<Vec<_>>>()?;
        let (combined, choices) = per_movie_best(&subs)?;
        let summary = write_submission(&out, &combined)?;
        write_json(&out.join("choices.json"), &choices)?;
        save_run_config(&out, config)?;
        return Ok(format!(
            "ensemble: combined {} submissions, mean r {:.4}",
            subs.len(),
            summary.overall
        ));
    }

    let root = absolute(
        config
            .ensemble
            .records
            .as_deref()
            .ok_or_else(|| AencError::Usage("--records is required".into()))?,
    )?;
    config.ensemble.records = Some(root.clone());
    let records = load_records(&root)?;
    let validation: Vec<String> = match &config.ensemble.validation_movies {
        Some(v) => v.clone(),
        None => records
            .iter()
            .find(|r| r.failure.is_none())
            .map(|r| r.validation_movies.clone())
            .unwrap_or_default(),
    };
    config.ensemble.validation_movies = Some(validation.clone());
    let selection = select_topk(&records, config.ensemble.k, &movie_set(&validation)?)?;

    let mut models = BTreeMap::new();
    let mut data = None;
    for id in selection.model_ids() {
        let rec = records
            .iter()
            .find(|r| r.id == id)
            .expect("selected from records");
        let (ckpt, d) = load_encoder(&root.join(&rec.checkpoint))?;
        data.get_or_insert(d);
        models.insert(
            id.to_string(),
            FittedEncoder {
                config: ckpt.model,
                params: ckpt.params,
            },
        );
    }
    let data = data.expect("selection is never empty");
    if config.manifest.is_none() {
        config.manifest = data.manifest.as_ref().map(PathBuf::from);
    }
    let dataset = load(config.manifest()?, data.normalization.as_ref())?;
    let movies: Vec<String> = match &config.ensemble.movies {
        Some(m) => m.clone(),
        None => data
            .split
            .as_ref()
            .map(|s| s.test.iter().cloned().collect())
            .unwrap_or_default(),
    };
    config.ensemble.movies = Some(movies.clone());
    let movies = movie_set(&movies)?;

    write_predictions(
        &out,
        &predict_ensemble(&selection, &models, &dataset, &movies)?,
    )?;
    write_json(&out.join("selection.json"), &selection)?;
    let predictor = EnsemblePredictor {
        selection: &selection,
        models: &models,
    };
    let scores = metrics::score(&predictor, &dataset, &movies, &all_subjects(&dataset))?;
    let summary = write_score_tables(&out, &scores)?;
    save_run_config(&out, config)?;
    Ok(format!(
        "ensemble: k={} over {} models, mean r {:.4} on {} movie(s)",
        selection.k,
        models.len(),
        summary.overall,
        movies.len()
    ))
}

fn write_ceiling(out: &Path, table: &[ParcelScores]) -> Result<f64> {
    write_value_csv(&out.join("ceiling.csv"), table)?;
    write_json(&out.join("ceiling.json"), &table)?;
    let summary = summarize(table)?;
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary.overall)
}

pub fn ceiling(inv: Invocation) -> Result<String> {
    let out = inv.out()?;
    check_fresh(&out.join("ceiling.csv"), inv.force)?;
    let config = &inv.config;
    let wanted = config
        .ceiling
        .movies
        .as_ref()
        .map(|m| m.iter().cloned().collect::<BTreeSet<_>>());
    match config.ceiling.method {
        CeilingMethod::SplitHalf => {
            let dataset = load(config.manifest()?, None)?;
            let pairs: Vec<_> = repeat_pairs(&dataset)?
                .into_iter()
                .filter(|p| wanted.as_ref().is_none_or(|w| w.contains(&p.movie)))
                .collect();
            if pairs.is_empty() {
                return Err(AencError::Usage("no repeated presentations found".into()));
            }
            let table = split_half_ceiling(&pairs)?;
            let mean = write_ceiling(out, &table)?;
            save_run_config(out, config)?;
            Ok(format!(
                "ceiling: split-half mean r {mean:.4} over {} cell(s)",
                table.len()
            ))
        }
        CeilingMethod::Cross => {
            let split = config.split()?;
            let data = data_ref(config, split)?;
            let dataset = load(config.manifest()?, data.normalization.as_ref())?;
            let cross = config.cross.resolve(&dataset)?;
            let (ckpt, log) = cross_train(&dataset, split, &cross, &config.train)?;
            save_cross(&out.join("cross.ckpt"), &ckpt, &data)?;
            write_json(&out.join("train_log.json"), &log)?;
            let movies = wanted.unwrap_or_else(|| split.test.clone());
            let table = metrics::score(
                &ckpt.predictor(),
                &dataset,
                &movies,
                &all_subjects(&dataset),
            )?;
            let mean = write_ceiling(out, &table)?;
            save_run_config(out, config)?;
            Ok(format!(
                "ceiling: cross-subject mean r {mean:.4} over {} cell(s)",
                table.len()
            ))
        }
    }
}

pub fn gap(mut inv: Invocation) -> Result<String> {
    let out = inv.out()?.to_path_buf();
    let path = out.join("gap.csv");
    check_fresh(&path, inv.force)?;
    let g = &mut inv.config.gap;
    let feature = absolute(
        g.feature
            .as_deref()
            .ok_or_else(|| AencError::Usage("--feature is required".into()))?,
    )?;
    let ceiling = absolute(
        g.ceiling
            .as_deref()
            .ok_or_else(|| AencError::Usage("--ceiling is required".into()))?,
    )?;
    g.feature = Some(feature.clone());
    g.ceiling = Some(ceiling.clone());
    let rows = ceiling_gap(&read_parcel_csv(&feature)?, &read_parcel_csv(&ceiling)?)?;
    write_gap_csv(&path, &rows)?;
    save_run_config(&out, &inv.config)?;
    let mean = rows.iter().map(|r| r.gap).sum::<f64>() / rows.len().max(1) as f64;
    Ok(format!(
        "gap: mean {mean:.4} over {} parcel(s) -> {}",
        rows.len(),
        path.display()
    ))
}
