//! Acceptance criteria, one PASS/FAIL line each. Runs sequentially so the
//! timing budgets are measured without competing tests.

mod common;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use common::{c1_oracle, c2_oracle, llc_oracle, random_code_map, random_opponent, random_stack, rng, s1_oracle, window};
use hmax_llc::classify::{train, TrainOptions, GRAD_TOL};
use hmax_llc::conditioning::{partial_whiten, PatchConditioning, StdConvention, WhiteningParams};
use hmax_llc::filterbank::build_filter_bank;
use hmax_llc::harness::{generate_synthetic_dataset, run_experiment, run_experiment_on, with_threads, ExperimentConfig, Report};
use hmax_llc::llc::{s2_encode, sample_templates, LlcParams, TemplateDictionary};
use hmax_llc::pipeline::Pipeline;
use hmax_llc::preprocess::LabeledImageSet;
use hmax_llc::s1c1::{c1_pool, s1_convolve, C1_STRIDE, C1_WINDOW};
use hmax_llc::spm::{c2_features, pool_pyramid_b, FeatureVector, SpmLayout};
use rand::Rng;
use rand_distr::StandardNormal;

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn llc_oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let combos = [(1, 0.0), (5, 0.0), (15, 0.0), (1, 0.25), (5, 0.25), (15, 0.25)];
    let mut worst = 0.0f64;
    for instance in 0..1000u64 {
        let (k, lambda) = combos[instance as usize % combos.len()];
        let mut r = rng(instance);
        let stack = random_stack(&mut r, 4, 5, 5);
        let t = (0..50).map(|_| (0..64).map(|_| r.sample(StandardNormal)).collect()).collect();
        let dict = TemplateDictionary::from_templates(t, instance).unwrap();
        let params = LlcParams { k, lambda, conditioning: PatchConditioning::default() };
        let codes = s2_encode(&stack, &dict, &params).map_err(|e| e.to_string())?;
        for row in 0..codes.grid_h {
            for col in 0..codes.grid_w {
                let want = llc_oracle(&window(&stack, row, col), &dict, k, lambda, &params.conditioning);
                for (a, b) in codes.cell(row, col).to_dense(50).iter().zip(&want) {
                    worst = worst.max((a - b).abs());
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(
        worst <= 1e-8 && secs <= 60.0,
        format!("1000 instances, max |error| {worst:.2e} (<= 1e-8), {secs:.1} s (<= 60 s)"),
    )
}

fn convolution_pooling_oracle() -> Outcome {
    let start = Instant::now();
    let bank = build_filter_bank(12, true, 11, 2.75).unwrap();
    let cond = PatchConditioning::default();
    let mut worst = 0.0f64;
    let mut c1_exact = true;
    for i in 0..20 {
        let img = random_opponent(&mut rng(100 + i), 64, 64, false);
        let s1 = s1_convolve(&img, &bank, &cond).map_err(|e| e.to_string())?;
        let c1 = c1_pool(&s1, C1_WINDOW, C1_STRIDE).map_err(|e| e.to_string())?;
        for (f, plane) in s1_oracle(&img, &bank, &cond).iter().enumerate() {
            for (a, b) in s1.planes[f].data.iter().zip(&plane.data) {
                worst = worst.max((a - b).abs());
            }
            c1_exact &= c1.planes[f] == c1_oracle(&s1.planes[f], C1_WINDOW, C1_STRIDE);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(
        worst <= 1e-10 && c1_exact && secs <= 120.0,
        format!("20 images 64x64, S1 max |error| {worst:.2e} (<= 1e-10), C1 exact: {c1_exact}, {secs:.1} s (<= 120 s)"),
    )
}

fn whitening_identities() -> Outcome {
    let mut r = rng(7);
    let (mut worst_mean, mut worst_full) = (0.0f64, 0.0f64);
    for _ in 0..10_000 {
        let n = r.random_range(2..200);
        let shift: f64 = r.random_range(-10.0..10.0);
        let scale: f64 = r.random_range(0.1..10.0);
        let x: Vec<f64> = (0..n).map(|_| shift + scale * r.sample::<f64, _>(StandardNormal)).collect();
        let std = if r.random() { StdConvention::Population } else { StdConvention::Sample };
        let alpha = r.random_range(0.0..=1.0);
        let beta = r.random_range(0.0..5.0);
        let mu = x.iter().sum::<f64>() / n as f64;
        let ss: f64 = x.iter().map(|v| (v - mu).powi(2)).sum();
        let sigma = (ss / if std == StdConvention::Population { n as f64 } else { n as f64 - 1.0 }).sqrt();

        let y = partial_whiten(&x, &WhiteningParams { alpha, beta, std }).map_err(|e| e.to_string())?;
        let mean = y.iter().sum::<f64>() / n as f64;
        worst_mean = worst_mean.max((mean - (1.0 - alpha) * mu / (sigma + beta)).abs());
        let full = partial_whiten(&x, &WhiteningParams { alpha: 1.0, beta, std }).map_err(|e| e.to_string())?;
        worst_full = worst_full.max((full.iter().sum::<f64>() / n as f64).abs());
    }
    ensure(
        worst_mean <= 1e-9 && worst_full <= 1e-9,
        format!("10000 patches, mean identity error {worst_mean:.2e}, alpha=1 mean {worst_full:.2e} (both <= 1e-9)"),
    )
}

fn spm_arithmetic() -> Outcome {
    let layout = SpmLayout::default();
    let mut checked = 0;
    for p in [1, 7, 100] {
        for h in 1..=17 {
            for w in 1..=23 {
                let codes = random_code_map(&mut rng((p * 1000 + h * 31 + w) as u64), h, w, p, 4);
                let f = c2_features(&codes, &layout);
                if f.len() != 52 * p {
                    return Err(format!("{h}x{w}, p={p}: length {} != {}", f.len(), 52 * p));
                }
                if f.0 != c2_oracle(&codes, &layout) {
                    return Err(format!("{h}x{w}, p={p}: differs from region-scan oracle"));
                }
                let b = pool_pyramid_b(&codes);
                if b.iter().any(|&v| v < 0.0) {
                    return Err(format!("{h}x{w}, p={p}: negative pyramid-B bin"));
                }
                for t in 0..p {
                    for off in [0, 21] {
                        let bins = &b[t * 42 + off..t * 42 + off + 21];
                        if bins[5..].iter().chain(&bins[1..5]).any(|&fine| fine > bins[0]) {
                            return Err(format!("{h}x{w}, p={p}: finer bin exceeds 1x1 bin"));
                        }
                    }
                }
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} maps (grids 1x1..17x23, p in {{1, 7, 100}}) match the oracle exactly"))
}

/// Shared desk-scale protocol: 10 synthetic classes, 5 trials (seeds 0..4).
struct Desk {
    set: LabeledImageSet,
    cache: tempfile::TempDir,
}

impl Desk {
    fn new() -> Self {
        Self {
            set: generate_synthetic_dataset(10, 45, 128, 0).unwrap(),
            cache: tempfile::tempdir().unwrap(),
        }
    }

    fn run(&self, extra: &[&str]) -> Result<Report, String> {
        let mut o: Vec<String> = ["max_side=128", "n_train=15", "n_test_max=20", "n_trials=5", "seed=0", "p=200"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        o.push(format!("cache_dir={}", self.cache.path().display()));
        o.extend(extra.iter().map(|s| s.to_string()));
        let cfg = ExperimentConfig::from_toml_with_overrides(None, &o).map_err(|e| e.to_string())?;
        let report = run_experiment_on(&self.set, &cfg).map_err(|e| e.to_string())?;
        if report.completed_accuracies().len() != 5 {
            return Err(format!("{extra:?}: only {} of 5 trials completed", report.completed_accuracies().len()));
        }
        Ok(report)
    }
}

fn fmt_acc(v: &[f64]) -> String {
    v.iter().map(|a| format!("{a:.3}")).collect::<Vec<_>>().join(" ")
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn spm_trend(desk: &Desk) -> Outcome {
    let spm3 = desk.run(&["ablation=spm3"])?.completed_accuracies();
    let global = desk.run(&["ablation=global-max"])?.completed_accuracies();
    ensure(
        spm3.iter().zip(&global).all(|(a, b)| a > b),
        format!("per seed spm3 [{}] vs global-max [{}]", fmt_acc(&spm3), fmt_acc(&global)),
    )
}

fn whitening_trend(desk: &Desk) -> Outcome {
    let partial = mean(&desk.run(&[])?.completed_accuracies());
    let none = mean(&desk.run(&["ablation=no-whitening"])?.completed_accuracies());
    let full = mean(&desk.run(&["ablation=full-whitening"])?.completed_accuracies());
    ensure(
        partial >= none && partial >= full,
        format!("5-seed means: alpha=0.98 {partial:.4}, alpha=0 {none:.4}, alpha=1 {full:.4}"),
    )
}

fn template_trend(desk: &Desk) -> Outcome {
    let small = mean(&desk.run(&["p=100"])?.completed_accuracies());
    let large = mean(&desk.run(&["p=500"])?.completed_accuracies());
    ensure(large >= small, format!("5-seed means: p=500 {large:.4}, p=100 {small:.4}"))
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
        })
        .collect();
    out.sort();
    out
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for threads in [1, 4] {
        let feats = tmp.path().join(format!("features{threads}"));
        let o: Vec<String> = [
            "max_side=96".to_string(),
            "p=80".into(),
            "k=8".into(),
            "n_train=8".into(),
            "n_test_max=8".into(),
            "n_trials=2".into(),
            "synthetic.n_classes=4".into(),
            "synthetic.per_class=16".into(),
            "synthetic.image_side=96".into(),
            format!("threads={threads}"),
            format!("features_dir={}", feats.display()),
        ]
        .to_vec();
        let cfg = ExperimentConfig::from_toml_with_overrides(None, &o).map_err(|e| e.to_string())?;
        let report = run_experiment(&cfg).map_err(|e| e.to_string())?;
        let csv = tmp.path().join(format!("report{threads}.csv"));
        report.write_csv(&csv).map_err(|e| e.to_string())?;
        outputs.push((dir_bytes(&feats), fs::read(&csv).unwrap()));
    }
    let files = outputs[0].0.len();
    let bytes: usize = outputs[0].0.iter().map(|f| f.1.len()).sum();
    ensure(
        files == 4 && outputs[0] == outputs[1],
        format!("1 vs 4 threads: {files} feature files ({bytes} bytes) and CSV identical: {}", outputs[0] == outputs[1]),
    )
}

fn performance_budget() -> Outcome {
    let set = generate_synthetic_dataset(2, 3, 240, 9).unwrap();
    let bank = build_filter_bank(12, false, 11, 2.75).unwrap();
    let mut pipeline = Pipeline::new(bank, 240);
    pipeline.llc = LlcParams { k: 20, ..LlcParams::default() };
    let stacks: Vec<_> = set.images[0].iter().map(|i| pipeline.c1_stack(&i.raster).unwrap()).collect();
    let refs: Vec<_> = stacks.iter().collect();
    let dict = sample_templates(&refs, 1000, 0).unwrap();
    let img = &set.images[1][0].raster;
    let (secs, len) = with_threads(1, || {
        let t = Instant::now();
        let f: FeatureVector = pipeline.extract(img, &dict).unwrap();
        (t.elapsed().as_secs_f64(), f.len())
    })
    .map_err(|e| e.to_string())?;
    ensure(
        secs <= 10.0 && len == 52_000,
        format!("240x240 image, 12 filters, p=1000, k=20: S1..C2 in {secs:.2} s on 1 thread (<= 10 s)"),
    )
}

fn classifier_contract() -> Outcome {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (label, sign) in [(0usize, 1.0), (1, -1.0)] {
        for _ in 0..10 {
            let mut v = vec![0.0; 10];
            v[0] = sign;
            x.push(FeatureVector(v));
            y.push(label);
        }
    }
    let classes = vec!["plus".to_string(), "minus".to_string()];
    let (model, logs) = train(&x, &y, &classes, &TrainOptions::default()).map_err(|e| e.to_string())?;
    let correct = x.iter().zip(&y).filter(|(f, &l)| model.predict(f).unwrap() == l).count();
    let monotone = logs.iter().all(|l| l.objective.windows(2).all(|w| w[1] <= w[0]));
    let grad = logs.iter().map(|l| l.grad_norm).fold(0.0, f64::max);
    ensure(
        correct == x.len() && monotone && grad <= GRAD_TOL,
        format!("training accuracy {correct}/{}, objective non-increasing: {monotone}, final gradient norm {grad:.2e}", x.len()),
    )
}

fn main() {
    let desk = Desk::new();
    let criteria: Vec<(u32, &str, Box<dyn Fn() -> Outcome>)> = vec![
        (1, "LLC oracle equivalence", Box::new(llc_oracle_equivalence)),
        (2, "convolution and pooling oracle", Box::new(convolution_pooling_oracle)),
        (3, "whitening identities", Box::new(whitening_identities)),
        (4, "SPM arithmetic", Box::new(spm_arithmetic)),
        (5, "SPM trend", Box::new(|| spm_trend(&desk))),
        (6, "whitening trend", Box::new(|| whitening_trend(&desk))),
        (7, "template count trend", Box::new(|| template_trend(&desk))),
        (8, "determinism across thread counts", Box::new(determinism)),
        (9, "performance budget", Box::new(performance_budget)),
        (10, "classifier contract", Box::new(classifier_contract)),
    ];
    let mut failed = Vec::new();
    for (n, name, check) in &criteria {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS criterion {n} ({name}): {detail}"),
            Err(detail) => {
                println!("FAIL criterion {n} ({name}): {detail}");
                failed.push(*n);
            }
        }
    }
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
