//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run all with `cargo test -p aenc --test acceptance`; pass criterion
//! numbers after `--` to run a subset.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use aenc::checkpoint::{save_encoder, DataRef};
use aenc::report::{write_predictions, write_score_tables};
use aenc::sweep::{load_records, run_sweep, SweepContext};
use aenc_core::ceilings::{
    cross_embed, cross_forward, cross_grad_check, cross_init, cross_pooled, repeat_pairs,
    split_half_ceiling, tiny_cross_config, CrossConfig,
};
use aenc_core::encoder::param_count;
use aenc_core::ensemble::{
    per_movie_best, predict_ensemble, run_config, sample_configs, select_topk, EnsemblePredictor,
    ModelRecord, Submission, SubmissionCell, SweepSpace,
};
use aenc_core::metrics::{overall_mean, score};
use aenc_core::synth::{synth_generate, AbsentPair, PlantedKernel, SynthEpisode, SynthSpec};
use aenc_core::trainer::gradcheck::{grad_check, tiny_encoder_config};
use aenc_core::trainer::{train, SubjectsMode};
use aenc_core::{
    Backbone, Dataset, EncoderConfig, FittedEncoder, HeadMode, KernelType, Matrix, ParcelScores,
    Predictor, SplitSpec, TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(pass: bool, detail: String) -> Outcome {
    if pass {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn episodes(prefix: &str, movie: &str, count: usize, trs: usize) -> Vec<SynthEpisode> {
    (0..count)
        .map(|i| SynthEpisode::new(format!("{prefix}-{i:02}"), movie, trs))
        .collect()
}

fn split() -> SplitSpec {
    SplitSpec::new(["train"], ["valid"], ["test"])
}

fn movies(names: &[&str]) -> BTreeSet<String> {
    names.iter().map(|s| s.to_string()).collect()
}

fn held_out_r(
    model: &impl Predictor,
    dataset: &Dataset,
    subjects: &[usize],
) -> Result<f64, String> {
    overall_mean(&score(model, dataset, &movies(&["test"]), subjects).map_err(err)?).map_err(err)
}

fn all(dataset: &Dataset) -> Vec<usize> {
    (0..dataset.subjects).collect()
}

fn encoder(dataset: &Dataset, embed_dim: usize, kernel_width: usize) -> EncoderConfig {
    EncoderConfig {
        embed_dim,
        kernel_width,
        ..EncoderConfig::for_dataset(dataset)
    }
}

fn train_config(steps: usize, batch: usize, window: usize, lr: f64, seed: u64) -> TrainConfig {
    TrainConfig {
        max_steps: steps,
        batch_size: batch,
        window_length: window,
        lr,
        weight_decay: 0.0,
        eval_every: 50,
        seed,
        ..TrainConfig::default()
    }
}

fn fit_r(
    dataset: &Dataset,
    enc: &EncoderConfig,
    tc: &TrainConfig,
    subjects: &[usize],
) -> Result<f64, String> {
    let (ckpt, _) = train(dataset, &split(), enc, tc).map_err(err)?;
    held_out_r(&ckpt.predictor(), dataset, subjects)
}

fn c1_param_count() -> Outcome {
    let dims = [3584, 3584, 1408, 1280, 3072];
    let backbones = dims
        .iter()
        .enumerate()
        .map(|(i, &d)| Backbone::new(format!("b{i}"), d))
        .collect();
    let n = param_count(&EncoderConfig::new(backbones, 4, 1000));
    check(
        (3_400_000..=3_600_000).contains(&n),
        format!("{n} parameters"),
    )
}

fn c2_gradients() -> Outcome {
    const TOL: f64 = 1e-4;
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    for mode in HeadMode::ALL {
        let enc = grad_check(
            &EncoderConfig {
                head_mode: mode,
                ..tiny_encoder_config()
            },
            TOL,
            11,
        )
        .map_err(err)?;
        let cross = cross_grad_check(
            &CrossConfig {
                head_mode: mode,
                ..tiny_cross_config()
            },
            TOL,
            12,
        )
        .map_err(err)?;
        for report in [enc, cross] {
            checked += report.entries.len();
            worst = worst.max(report.max_rel_error());
            failures.extend(report.failures().map(|f| format!("{f:?}")));
        }
    }
    let variants = 2 * HeadMode::ALL.len() * KernelType::ALL.len();
    check(
        failures.is_empty(),
        format!("{variants} variants, {checked} blocks, max rel err {worst:.2e}; {failures:?}"),
    )
}

fn recovery_spec(noise_std: f64, seed: u64) -> SynthSpec {
    let mut eps = episodes("train", "train", 10, 600);
    eps.extend(episodes("valid", "valid", 2, 250));
    eps.extend(episodes("test", "test", 4, 500));
    SynthSpec {
        subjects: 4,
        parcels: 50,
        backbones: vec![Backbone::new("a", 32), Backbone::new("b", 32)],
        episodes: eps,
        embed_dim: 8,
        kernel: PlantedKernel::Random { width: 5 },
        noise_std,
        ..SynthSpec::small(seed)
    }
}

fn c3_recoverability() -> Outcome {
    let mut results = Vec::new();
    for (noise, lo, hi) in [(0.0, 0.99, 1.0), (1.0, 0.707 - 0.05, 0.707 + 0.05)] {
        let syn = synth_generate(&recovery_spec(noise, 31)).map_err(err)?;
        let ds = &syn.dataset;
        let r = fit_r(
            ds,
            &encoder(ds, 8, 5),
            &train_config(1500, 8, 100, 1e-2, 1),
            &all(ds),
        )?;
        results.push((noise, r, (lo..=hi).contains(&r)));
    }
    let detail = results
        .iter()
        .map(|(n, r, _)| format!("noise {n}: r {r:.4}"))
        .collect::<Vec<_>>()
        .join(", ");
    check(results.iter().all(|x| x.2), detail)
}

fn scarce_spec(seed: u64) -> SynthSpec {
    let subjects = 4;
    let mut eps = episodes("train", "train", subjects, 100);
    eps.extend(episodes("valid", "valid", 1, 200));
    eps.extend(episodes("test", "test", 2, 300));
    let absent = (0..subjects)
        .flat_map(|e| {
            (0..subjects)
                .filter(move |&s| s != e)
                .map(move |s| AbsentPair {
                    episode: format!("train-{e:02}"),
                    subject: s,
                })
        })
        .collect();
    SynthSpec {
        subjects,
        parcels: 20,
        backbones: vec![Backbone::new("a", 32), Backbone::new("b", 32)],
        episodes: eps,
        embed_dim: 8,
        kernel: PlantedKernel::Random { width: 3 },
        noise_std: 1.0,
        shared_fraction: 0.7,
        absent,
        ..SynthSpec::small(seed)
    }
}

fn c4_multi_subject() -> Outcome {
    let mut wins = 0;
    let mut deltas = Vec::new();
    for seed in 0..20 {
        let syn = synth_generate(&scarce_spec(1000 + seed)).map_err(err)?;
        let ds = &syn.dataset;
        let enc = encoder(ds, 8, 3);
        let tc = train_config(400, 8, 50, 1e-2, seed);
        let multi = fit_r(ds, &enc, &tc, &all(ds))?;
        let mut single = 0.0;
        for s in 0..ds.subjects {
            single += fit_r(
                ds,
                &enc,
                &TrainConfig {
                    subjects_mode: SubjectsMode::Single(s),
                    ..tc.clone()
                },
                &[s],
            )?;
        }
        single /= ds.subjects as f64;
        wins += usize::from(multi > single);
        deltas.push(multi - single);
    }
    let mean = deltas.iter().sum::<f64>() / deltas.len() as f64;
    check(
        wins >= 16,
        format!("multi > single in {wins}/20 seeds, mean delta r {mean:.4}"),
    )
}

fn kernel_spec(seed: u64) -> SynthSpec {
    let mut eps = episodes("train", "train", 4, 400);
    eps.extend(episodes("valid", "valid", 1, 300));
    eps.extend(episodes("test", "test", 1, 400));
    let kernel = if seed.is_multiple_of(2) {
        PlantedKernel::Hrf { width: 31 }
    } else {
        PlantedKernel::Random { width: 31 }
    };
    SynthSpec {
        subjects: 2,
        parcels: 20,
        backbones: vec![Backbone::new("a", 16)],
        episodes: eps,
        embed_dim: 4,
        kernel,
        noise_std: 1.0,
        ..SynthSpec::small(seed)
    }
}

fn c5_kernel_size() -> Outcome {
    let mut wins = 0;
    let mut deltas = Vec::new();
    for seed in 0..20 {
        let syn = synth_generate(&kernel_spec(2000 + seed)).map_err(err)?;
        let ds = &syn.dataset;
        let tc = train_config(400, 8, 90, 1e-2, seed);
        let wide = fit_r(ds, &encoder(ds, 4, 45), &tc, &all(ds))?;
        let none = fit_r(ds, &encoder(ds, 4, 0), &tc, &all(ds))?;
        wins += usize::from(wide - none >= 0.05);
        deltas.push(wide - none);
    }
    let min = deltas.iter().copied().fold(f64::INFINITY, f64::min);
    check(
        wins >= 18,
        format!("K=45 beats K=0 by >= 0.05 in {wins}/20 seeds, min delta r {min:.4}"),
    )
}

fn ensemble_spec(seed: u64) -> SynthSpec {
    let mut eps = episodes("train", "train", 2, 150);
    eps.extend(episodes("valid", "valid", 2, 200));
    eps.extend(episodes("test", "test", 2, 300));
    SynthSpec {
        subjects: 2,
        parcels: 20,
        backbones: vec![Backbone::new("a", 16), Backbone::new("b", 16)],
        episodes: eps,
        embed_dim: 4,
        kernel: PlantedKernel::Random { width: 5 },
        noise_std: 2.0,
        ..SynthSpec::small(seed)
    }
}

fn ensemble_space(seed: u64) -> SweepSpace {
    SweepSpace {
        lr: vec![1e-2, 2e-2],
        weight_decay: vec![0.0, 1e-2],
        kernel_width: vec![5, 7],
        kernel_type: vec![KernelType::Default],
        batch_size: vec![4, 8],
        embed_dim: vec![8],
        feature_sets: Vec::new(),
        train_movies: Vec::new(),
        samples: 30,
        seed,
    }
}

fn c6_ensemble() -> Outcome {
    let validation = movies(&["valid"]);
    let (mut wins, mut k5_total, mut k20_total) = (0, 0.0, 0.0);
    let mut gains = Vec::new();
    for seed in 0..20 {
        let syn = synth_generate(&ensemble_spec(3000 + seed)).map_err(err)?;
        let ds = &syn.dataset;
        let enc = encoder(ds, 4, 5);
        let base = train_config(300, 8, 40, 1e-2, 0);
        let mut records = Vec::new();
        let mut models = BTreeMap::new();
        for config in sample_configs(&ensemble_space(seed)).map_err(err)? {
            let (ckpt, scores) = run_config(ds, &split(), &enc, &base, &config).map_err(err)?;
            records.push(ModelRecord {
                id: config.id.clone(),
                config: config.clone(),
                checkpoint: String::new(),
                validation_movies: vec!["valid".into()],
                scores,
                best_step: ckpt.best_step,
                failure: None,
            });
            models.insert(
                config.id,
                FittedEncoder {
                    config: ckpt.model,
                    params: ckpt.params,
                },
            );
        }
        let mut best_single = f64::NEG_INFINITY;
        for model in models.values() {
            best_single = best_single.max(held_out_r(&model.as_ref(), ds, &all(ds))?);
        }
        let at_k = |k| -> Result<f64, String> {
            let selection = select_topk(&records, k, &validation).map_err(err)?;
            held_out_r(
                &EnsemblePredictor {
                    selection: &selection,
                    models: &models,
                },
                ds,
                &all(ds),
            )
        };
        let (k5, k20) = (at_k(5)?, at_k(20)?);
        wins += usize::from(k5 > best_single);
        gains.push(k5 - best_single);
        k5_total += k5;
        k20_total += k20;
    }
    let (k5, k20) = (k5_total / 20.0, k20_total / 20.0);
    let mean_gain = gains.iter().sum::<f64>() / 20.0;
    check(
        wins >= 18 && k20 >= k5,
        format!("pools of {} models; top-5 > best single in {wins}/20 seeds (mean gain {mean_gain:.4}); mean r k=5 {k5:.4}, k=20 {k20:.4}", ensemble_space(0).samples),
    )
}

fn random_submissions(rng: &mut ChaCha8Rng) -> Vec<Submission> {
    let n = rng.random_range(1..6);
    let subjects = rng.random_range(1..4);
    let movie_count = rng.random_range(1..4);
    let parcels = rng.random_range(1..8);
    (0..n)
        .map(|i| Submission {
            name: format!("sub{i}"),
            cells: (0..subjects)
                .flat_map(|s| (0..movie_count).map(move |m| (s, m)))
                .map(|(subject, m)| SubmissionCell {
                    scores: ParcelScores {
                        subject,
                        movie: format!("movie{m}"),
                        r: (0..parcels)
                            .map(|_| {
                                if rng.random_bool(0.05) {
                                    None
                                } else {
                                    Some(rng.random_range(-1.0..1.0))
                                }
                            })
                            .collect(),
                        n_trs: 10,
                    },
                    prediction: None,
                })
                .collect(),
        })
        .collect()
}

fn c7_per_movie_best() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut violations = 0;
    for _ in 0..1000 {
        let subs = random_submissions(&mut rng);
        let (combined, _) = per_movie_best(&subs).map_err(err)?;
        let best = subs
            .iter()
            .map(|s| s.aggregate().unwrap())
            .fold(f64::NEG_INFINITY, f64::max);
        violations += usize::from(combined.aggregate().map_err(err)? < best);
    }
    check(
        violations == 0,
        format!("{violations} violations in 1000 trials"),
    )
}

fn c8_cross_invariance() -> Outcome {
    let config = CrossConfig {
        subjects: 4,
        parcels: 6,
        embed_dim: 5,
        kernel_width: 3,
        ..tiny_cross_config()
    };
    let params = cross_init(&config, 5).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut random = |rows, cols| Matrix::from_fn(rows, cols, |_, _| rng.random_range(-2.0..2.0));
    let bold: Vec<Matrix> = (0..4).map(|_| random(30, 6)).collect();
    let mut invariant = true;
    for s in 0..4 {
        let refs: Vec<&Matrix> = bold.iter().collect();
        let before = cross_forward(&params, &config, &refs, s).map_err(err)?;
        let other = random(30, 6);
        let mut perturbed = refs.clone();
        perturbed[s] = &other;
        invariant &= cross_forward(&params, &config, &perturbed, s).map_err(err)? == before;
    }
    let pair = CrossConfig {
        subjects: 2,
        ..config
    };
    let params = cross_init(&pair, 6).map_err(err)?;
    let refs: Vec<&Matrix> = bold[..2].iter().collect();
    let embeds = cross_embed(&params, &pair, &refs).map_err(err)?;
    let pooled = (0..2).all(|s| cross_pooled(&params, &pair, &refs, s).unwrap() == embeds[1 - s]);
    check(
        invariant && pooled,
        format!("self-input invariance {invariant}, S=2 pooling exact {pooled}"),
    )
}

fn c9_split_half() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut cells = 0;
    for (noise, seed) in [(1.0, 90), (0.5, 91)] {
        let spec = SynthSpec {
            subjects: 2,
            parcels: 10,
            backbones: vec![Backbone::new("a", 8)],
            episodes: episodes("test", "test", 1, 10_000),
            embed_dim: 4,
            kernel: PlantedKernel::Delta,
            noise_std: noise,
            repeats: vec!["test-00".into()],
            ..SynthSpec::small(seed)
        };
        let expected = 1.0 / (1.0 + noise * noise);
        let syn = synth_generate(&spec).map_err(err)?;
        for cell in split_half_ceiling(&repeat_pairs(&syn.dataset).map_err(err)?).map_err(err)? {
            for p in 0..cell.r.len() {
                worst = worst.max((cell.value(p) - expected).abs());
                cells += 1;
            }
        }
    }
    check(
        worst <= 0.03,
        format!("{cells} parcels, max |r - s/(s+n)| {worst:.4}"),
    )
}

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(
                    path.strip_prefix(root).unwrap().display().to_string(),
                    fs::read(&path).unwrap(),
                );
            }
        }
    }
    out
}

/// Trains, scores, sweeps and ensembles into `root` with `workers` threads.
fn determinism_run(root: &Path, workers: usize) -> Result<(), String> {
    let syn = synth_generate(&SynthSpec {
        noise_std: 0.5,
        ..SynthSpec::small(10)
    })
    .map_err(err)?;
    let ds = &syn.dataset;
    let sp = SplitSpec::new(["train"], ["valid"], ["test"]);
    let enc = encoder(ds, 4, 5);
    let tc = train_config(100, 4, 30, 1e-2, 3);
    let data = DataRef {
        manifest: None,
        split: Some(sp.clone()),
        normalization: None,
    };
    let (ckpt, _) = train(ds, &sp, &enc, &tc).map_err(err)?;
    save_encoder(&root.join("single.ckpt"), &ckpt, &data).map_err(err)?;
    let scored = root.join("scored");
    write_score_tables(
        &scored,
        &score(&ckpt.predictor(), ds, &sp.test, &all(ds)).map_err(err)?,
    )
    .map_err(err)?;

    let space = SweepSpace {
        samples: 6,
        ..ensemble_space(4)
    };
    let configs = sample_configs(&space).map_err(err)?;
    let sweep = root.join("sweep");
    let ctx = SweepContext {
        dataset: ds,
        split: &sp,
        encoder: &enc,
        train: &tc,
        data: &data,
    };
    run_sweep(&ctx, &configs, workers, &sweep).map_err(err)?;
    let records = load_records(&sweep).map_err(err)?;
    let selection = select_topk(&records, 3, &sp.validation).map_err(err)?;
    let mut models = BTreeMap::new();
    for id in selection.model_ids() {
        let (c, _) =
            aenc::checkpoint::load_encoder(&sweep.join("models").join(format!("{id}.ckpt")))
                .map_err(err)?;
        models.insert(
            id.to_string(),
            FittedEncoder {
                config: c.model,
                params: c.params,
            },
        );
    }
    let ens = root.join("ensemble");
    write_predictions(
        &ens,
        &predict_ensemble(&selection, &models, ds, &sp.test).map_err(err)?,
    )
    .map_err(err)?;
    let predictor = EnsemblePredictor {
        selection: &selection,
        models: &models,
    };
    write_score_tables(
        &ens,
        &score(&predictor, ds, &sp.test, &all(ds)).map_err(err)?,
    )
    .map_err(err)?;
    Ok(())
}

fn c10_determinism() -> Outcome {
    let dirs: Vec<_> = (0..3)
        .map(|_| tempfile::tempdir().map_err(err))
        .collect::<Result<_, _>>()?;
    for (dir, workers) in dirs.iter().zip([1, 1, 4]) {
        determinism_run(dir.path(), workers)?;
    }
    let trees: Vec<_> = dirs.iter().map(|d| tree(d.path())).collect();
    let identical = trees.iter().all(|t| t == &trees[0]);
    let golden = common::check_golden();
    check(
        identical && golden.is_ok(),
        format!("{} files identical across 3 runs (workers 1, 1, 4): {identical}; golden files: {golden:?}", trees[0].len()),
    )
}

fn main() -> ExitCode {
    let criteria: [(u32, &str, fn() -> Outcome); 10] = [
        (1, "parameter count", c1_param_count),
        (2, "gradient suite", c2_gradients),
        (3, "oracle recoverability", c3_recoverability),
        (4, "multi-subject benefit", c4_multi_subject),
        (5, "kernel size effect", c5_kernel_size),
        (6, "ensemble gain", c6_ensemble),
        (7, "per-movie combination dominance", c7_per_movie_best),
        (8, "cross-subject invariance", c8_cross_invariance),
        (9, "split-half oracle", c9_split_half),
        (10, "determinism and formats", c10_determinism),
    ];
    let only: BTreeSet<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    for (id, name, run) in criteria {
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {id}: {name}: {detail} ({secs:.1}s)"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {id}: {name}: {detail} ({secs:.1}s)");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
