use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::ExperimentConfig;
use super::report::{ClassAccuracy, Report, StageTimings, TrialOutcome, TrialResult};
use super::synth::generate_synthetic_dataset;
use crate::classify::{export_sparse, train, LinearModel, TrainOptions};
use crate::llc::{sample_templates, TemplateDictionary};
use crate::pipeline::Pipeline;
use crate::preprocess::{load_dataset, LabeledImageSet};
use crate::s1c1::C1Stack;
use crate::spm::FeatureVector;
use crate::{Error, Result};

/// `(class, index into that class's images)`.
pub type ImageRef = (usize, usize);

/// Per-class image indices, each list ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<Vec<usize>>,
    pub test: Vec<Vec<usize>>,
}

impl DatasetSplit {
    pub fn train_refs(&self) -> Vec<ImageRef> {
        flatten(&self.train)
    }

    pub fn test_refs(&self) -> Vec<ImageRef> {
        flatten(&self.test)
    }
}

fn flatten(per_class: &[Vec<usize>]) -> Vec<ImageRef> {
    per_class
        .iter()
        .enumerate()
        .flat_map(|(c, idx)| idx.iter().map(move |&i| (c, i)))
        .collect()
}

/// Per class: `n_train` images drawn without replacement, then up to
/// `n_test_max` of the remainder for testing.
pub fn split_dataset(
    set: &LabeledImageSet,
    n_train: usize,
    n_test_max: usize,
    seed: u64,
) -> Result<DatasetSplit> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = DatasetSplit {
        train: Vec::with_capacity(set.classes.len()),
        test: Vec::with_capacity(set.classes.len()),
    };
    for (class, images) in set.classes.iter().zip(&set.images) {
        if images.len() <= n_train {
            return Err(Error::ClassTooSmall {
                class: class.clone(),
                available: images.len(),
                n_train,
            });
        }
        let mut idx: Vec<usize> = (0..images.len()).collect();
        idx.shuffle(&mut rng);
        let mut train = idx[..n_train].to_vec();
        let mut test: Vec<usize> = idx[n_train..].iter().copied().take(n_test_max).collect();
        train.sort_unstable();
        test.sort_unstable();
        split.train.push(train);
        split.test.push(test);
    }
    Ok(split)
}

pub fn load_or_generate(cfg: &ExperimentConfig) -> Result<LabeledImageSet> {
    match &cfg.dataset {
        Some(root) => load_dataset(root),
        None => {
            let s = &cfg.synthetic;
            generate_synthetic_dataset(s.n_classes, s.per_class, s.image_side, s.seed)
        }
    }
}

/// Runs `f` on a pool with `threads` workers (0 = all cores).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// `<dir>/<config key>/<class>/<id>.<pixel hash>.c1`
fn cache_path(dir: &Path, key: &str, set: &LabeledImageSet, (c, i): ImageRef) -> PathBuf {
    let img = &set.images[c][i];
    let mut bytes = img.raster.as_raw().clone();
    bytes.extend_from_slice(&img.raster.width().to_le_bytes());
    let name = format!("{}.{:016x}.c1", img.id, super::fnv1a(&bytes));
    dir.join(key).join(&set.classes[c]).join(name)
}

fn c1_for(
    set: &LabeledImageSet,
    pipeline: &Pipeline,
    cache: Option<(&Path, &str)>,
    r: ImageRef,
) -> Result<C1Stack> {
    let Some((dir, key)) = cache else {
        return pipeline.c1_stack(&set.images[r.0][r.1].raster);
    };
    let path = cache_path(dir, key, set, r);
    if path.is_file() {
        if let Ok(c1) = C1Stack::read(&path, pipeline.pool_window, pipeline.pool_stride) {
            return Ok(c1);
        }
        log::warn!("rebuilding unreadable cache entry {}", path.display());
    }
    let c1 = pipeline.c1_stack(&set.images[r.0][r.1].raster)?;
    fs::create_dir_all(path.parent().expect("cache path has a parent"))?;
    let tmp = path.with_extension(format!("c1.tmp{}", std::process::id()));
    c1.write(&tmp)?;
    fs::rename(&tmp, &path)?;
    Ok(c1)
}

type C1Table = Vec<Vec<Option<std::result::Result<C1Stack, String>>>>;

/// C1 stacks for every referenced image, computed in parallel.
fn extract_c1(
    set: &LabeledImageSet,
    pipeline: &Pipeline,
    cfg: &ExperimentConfig,
    refs: &[ImageRef],
) -> C1Table {
    let key = cfg.c1_cache_key();
    let cache = cfg.cache_dir.as_deref().map(|d| (d, key.as_str()));
    let stacks: Vec<_> = refs
        .par_iter()
        .map(|&r| c1_for(set, pipeline, cache, r).map_err(|e| e.to_string()))
        .collect();
    let mut table: C1Table = set.images.iter().map(|v| vec![None; v.len()]).collect();
    for (&(c, i), s) in refs.iter().zip(stacks) {
        table[c][i] = Some(s);
    }
    table
}

fn gather<'a>(table: &'a C1Table, set: &LabeledImageSet, refs: &[ImageRef]) -> Result<Vec<&'a C1Stack>> {
    refs.iter()
        .map(|&(c, i)| match &table[c][i] {
            Some(Ok(s)) => Ok(s),
            Some(Err(e)) => Err(Error::Format(format!(
                "{}/{}: {e}",
                set.classes[c], set.images[c][i].id
            ))),
            None => unreachable!("image {c}/{i} was not extracted"),
        })
        .collect()
}

/// Checks that every template was cut from a training image of this split.
fn check_provenance(dict: &TemplateDictionary, source_refs: &[ImageRef], split: &DatasetSplit) -> Result<()> {
    let train: HashSet<ImageRef> = split.train_refs().into_iter().collect();
    let test: HashSet<ImageRef> = split.test_refs().into_iter().collect();
    for (t, src) in dict.sources.iter().enumerate() {
        let r = source_refs[src.stack];
        if !train.contains(&r) || test.contains(&r) {
            return Err(Error::InvalidParameter(format!(
                "template {t} was sampled from image {r:?}, which is not in this trial's training split"
            )));
        }
    }
    Ok(())
}

pub fn encode_all(pipeline: &Pipeline, stacks: &[&C1Stack], dict: &TemplateDictionary) -> Result<Vec<FeatureVector>> {
    stacks.par_iter().map(|s| pipeline.features(s, dict)).collect()
}

fn labels_of(refs: &[ImageRef]) -> Vec<usize> {
    refs.iter().map(|r| r.0).collect()
}

pub fn evaluate(model: &LinearModel, features: &[FeatureVector], labels: &[usize]) -> Result<Vec<ClassAccuracy>> {
    let mut per_class: Vec<ClassAccuracy> = model
        .classes
        .iter()
        .map(|c| ClassAccuracy {
            class: c.clone(),
            correct: 0,
            tested: 0,
        })
        .collect();
    let predictions = features
        .par_iter()
        .map(|f| model.predict(f))
        .collect::<Result<Vec<_>>>()?;
    for (&label, pred) in labels.iter().zip(predictions) {
        per_class[label].tested += 1;
        per_class[label].correct += usize::from(pred == label);
    }
    Ok(per_class)
}

struct TrialContext<'a> {
    cfg: &'a ExperimentConfig,
    set: &'a LabeledImageSet,
    pipeline: &'a Pipeline,
    table: &'a C1Table,
}

fn run_trial(
    ctx: &TrialContext<'_>,
    trial: usize,
    split: &DatasetSplit,
    fixed: Option<&(TemplateDictionary, Vec<ImageRef>)>,
) -> Result<(Vec<ClassAccuracy>, StageTimings)> {
    let mut timings = StageTimings::default();
    let train_refs = split.train_refs();
    let test_refs = split.test_refs();
    let train_stacks = gather(ctx.table, ctx.set, &train_refs)?;
    let test_stacks = gather(ctx.table, ctx.set, &test_refs)?;

    let t = Instant::now();
    let sampled;
    let dict = match fixed {
        Some((d, source_refs)) => {
            if let Err(e) = check_provenance(d, source_refs, split) {
                log::warn!("fixed dictionary overlaps trial {trial}: {e}");
            }
            d
        }
        None => {
            let seed = ctx.cfg.seed.wrapping_add(trial as u64);
            sampled = sample_templates(&train_stacks, ctx.cfg.p, seed)?;
            check_provenance(&sampled, &train_refs, split)?;
            &sampled
        }
    };
    timings.dictionary = t.elapsed();

    let t = Instant::now();
    let train_x = encode_all(ctx.pipeline, &train_stacks, dict)?;
    let test_x = encode_all(ctx.pipeline, &test_stacks, dict)?;
    timings.encode = t.elapsed();
    let (train_y, test_y) = (labels_of(&train_refs), labels_of(&test_refs));
    if let Some(dir) = &ctx.cfg.features_dir {
        fs::create_dir_all(dir)?;
        export_sparse(&train_x, &train_y, &dir.join(format!("trial{trial:02}_train.txt")))?;
        export_sparse(&test_x, &test_y, &dir.join(format!("trial{trial:02}_test.txt")))?;
    }

    let t = Instant::now();
    let opts = TrainOptions {
        cost: ctx.cfg.cost,
        ..TrainOptions::default()
    };
    let (model, _) = train(&train_x, &train_y, &ctx.set.classes, &opts)?;
    timings.train = t.elapsed();

    let t = Instant::now();
    let per_class = evaluate(&model, &test_x, &test_y)?;
    timings.evaluate = t.elapsed();
    Ok((per_class, timings))
}

/// Multi-trial protocol on the configured dataset (or generated data).
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Report> {
    cfg.validate()?;
    let set = load_or_generate(cfg)?;
    run_experiment_on(&set, cfg)
}

/// Trial `t` uses seed `cfg.seed + t` for both its split and its templates.
pub fn run_experiment_on(set: &LabeledImageSet, cfg: &ExperimentConfig) -> Result<Report> {
    cfg.validate()?;
    let pipeline = cfg.pipeline()?;
    with_threads(cfg.threads, || {
        let splits: Vec<Result<DatasetSplit>> = (0..cfg.n_trials)
            .map(|t| split_dataset(set, cfg.n_train, cfg.n_test_max, cfg.seed.wrapping_add(t as u64)))
            .collect();
        let mut refs: Vec<ImageRef> = splits
            .iter()
            .flatten()
            .flat_map(|s| s.train_refs().into_iter().chain(s.test_refs()))
            .collect();
        refs.sort_unstable();
        refs.dedup();

        let t = Instant::now();
        let table = extract_c1(set, &pipeline, cfg, &refs);
        let extract_time = t.elapsed();
        let ctx = TrialContext {
            cfg,
            set,
            pipeline: &pipeline,
            table: &table,
        };

        let mut fixed = None;
        let mut trials = Vec::with_capacity(cfg.n_trials);
        for (trial, split) in splits.iter().enumerate() {
            let seed = cfg.seed.wrapping_add(trial as u64);
            let result = split.as_ref().map_err(|e| Error::Config(e.to_string())).and_then(|split| {
                if cfg.fixed_dictionary && fixed.is_none() {
                    let source_refs = split.train_refs();
                    let stacks = gather(&table, set, &source_refs)?;
                    fixed = Some((sample_templates(&stacks, cfg.p, cfg.seed)?, source_refs));
                }
                run_trial(&ctx, trial, split, fixed.as_ref())
            });
            let outcome = match result {
                Ok((per_class, timings)) => TrialOutcome::Completed { per_class, timings },
                Err(e) => {
                    log::error!("trial {trial} aborted: {e}");
                    TrialOutcome::Aborted {
                        diagnostic: e.to_string(),
                    }
                }
            };
            trials.push(TrialResult { trial, seed, outcome });
        }
        Report {
            config: cfg.clone(),
            classes: set.classes.clone(),
            trials,
            extract_time,
            skipped: set.skipped.clone(),
        }
    })
}

/// Files written by [`extract_features`].
#[derive(Debug, Clone)]
pub struct ExtractOutput {
    pub dictionary: PathBuf,
    pub train: PathBuf,
    pub test: PathBuf,
    pub classes: PathBuf,
}

/// Trial-0 split only: samples the dictionary from the training images and
/// writes it with both feature files and the class list under `out`.
pub fn extract_features(cfg: &ExperimentConfig, out: &Path) -> Result<ExtractOutput> {
    cfg.validate()?;
    let set = load_or_generate(cfg)?;
    let pipeline = cfg.pipeline()?;
    fs::create_dir_all(out)?;
    let files = ExtractOutput {
        dictionary: out.join("dictionary.bin"),
        train: out.join("train.txt"),
        test: out.join("test.txt"),
        classes: out.join("classes.txt"),
    };
    with_threads(cfg.threads, || -> Result<()> {
        let split = split_dataset(&set, cfg.n_train, cfg.n_test_max, cfg.seed)?;
        let (train_refs, test_refs) = (split.train_refs(), split.test_refs());
        let all: Vec<ImageRef> = train_refs.iter().chain(&test_refs).copied().collect();
        let table = extract_c1(&set, &pipeline, cfg, &all);
        let train_stacks = gather(&table, &set, &train_refs)?;
        let test_stacks = gather(&table, &set, &test_refs)?;
        let dict = sample_templates(&train_stacks, cfg.p, cfg.seed)?;
        check_provenance(&dict, &train_refs, &split)?;
        // features come from the dictionary as it will be reloaded
        let dict = dict.quantized();
        dict.write(&files.dictionary)?;
        export_sparse(&encode_all(&pipeline, &train_stacks, &dict)?, &labels_of(&train_refs), &files.train)?;
        export_sparse(&encode_all(&pipeline, &test_stacks, &dict)?, &labels_of(&test_refs), &files.test)?;
        fs::write(&files.classes, set.classes.join("\n") + "\n")?;
        Ok(())
    })??;
    Ok(files)
}
