//! Parallel sweep runner with an append-only on-disk record store.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use aenc_core::ensemble::{run_config, ModelRecord, SweepConfig};
use aenc_core::{Dataset, EncoderConfig, SplitSpec, TrainConfig};

use crate::checkpoint::{save_encoder, DataRef};
use crate::error::{AencError, Result};
use crate::files::{read_json, write_json};

/// Runs `job(i)` for `i in 0..n` on `workers` threads and returns results in
/// index order, so output never depends on scheduling.
pub fn run_parallel<T: Send>(n: usize, workers: usize, job: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..n).map(|_| None).collect());
    thread::scope(|scope| {
        for _ in 0..workers.clamp(1, n.max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let out = job(i);
                slots.lock().expect("no worker panicked")[i] = Some(out);
            });
        }
    });
    slots
        .into_inner()
        .expect("no worker panicked")
        .into_iter()
        .map(|o| o.expect("every job ran"))
        .collect()
}

pub fn records_dir(root: &Path) -> PathBuf {
    root.join("records")
}

pub fn model_path(root: &Path, id: &str) -> PathBuf {
    root.join("models").join(format!("{id}.ckpt"))
}

/// Everything a sweep run needs besides its own config.
pub struct SweepContext<'a> {
    pub dataset: &'a Dataset,
    pub split: &'a SplitSpec,
    pub encoder: &'a EncoderConfig,
    pub train: &'a TrainConfig,
    pub data: &'a DataRef,
}

fn run_one(ctx: &SweepContext<'_>, config: &SweepConfig, root: &Path) -> Result<ModelRecord> {
    let validation_movies: Vec<String> = ctx.split.validation.iter().cloned().collect();
    let mut record = ModelRecord {
        id: config.id.clone(),
        config: config.clone(),
        checkpoint: String::new(),
        validation_movies,
        scores: Vec::new(),
        best_step: 0,
        failure: None,
    };
    match run_config(ctx.dataset, ctx.split, ctx.encoder, ctx.train, config) {
        Ok((ckpt, scores)) => {
            let mut data = ctx.data.clone();
            data.split = Some(config.resolve(ctx.encoder, ctx.train, ctx.split)?.2);
            save_encoder(&model_path(root, &config.id), &ckpt, &data)?;
            record.checkpoint = format!("models/{}.ckpt", config.id);
            record.scores = scores;
            record.best_step = ckpt.best_step;
        }
        Err(e) => record.failure = Some(e.to_string()),
    }
    write_json(
        &records_dir(root).join(format!("{}.json", config.id)),
        &record,
    )?;
    Ok(record)
}

/// Trains and scores every config, persisting each checkpoint and record as
/// soon as it finishes. Failed runs are recorded, not fatal; IO errors are.
pub fn run_sweep(
    ctx: &SweepContext<'_>,
    configs: &[SweepConfig],
    workers: usize,
    root: &Path,
) -> Result<Vec<ModelRecord>> {
    if configs.is_empty() {
        return Err(AencError::Usage("sweep has no configurations".into()));
    }
    run_parallel(configs.len(), workers, |i| run_one(ctx, &configs[i], root))
        .into_iter()
        .collect()
}

/// Loads every record under `root/records`, sorted by id.
pub fn load_records(root: &Path) -> Result<Vec<ModelRecord>> {
    let dir = records_dir(root);
    let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(AencError::io(&dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut records: Vec<ModelRecord> =
        paths.iter().map(|p| read_json(p)).collect::<Result<_>>()?;
    records.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn results_are_in_index_order_for_any_worker_count() {
        for workers in [1, 2, 5, 50] {
            let out = run_parallel(20, workers, |i| i * i);
            assert_eq!(out, (0..20).map(|i| i * i).collect::<Vec<_>>());
        }
        assert!(run_parallel(0, 3, |i| i).is_empty());
    }
}
