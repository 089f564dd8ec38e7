use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use hmax_llc::classify::{read_sparse, train, LinearModel, TrainOptions};
use hmax_llc::harness::{
    evaluate, extract_features, generate_synthetic_dataset, run_experiment, ClassAccuracy,
    ExperimentConfig,
};
use hmax_llc::spm::FeatureVector;

#[derive(Parser)]
#[command(name = "hmax", version, about = "HMAX feature pipeline with LLC coding")]
struct Cli {
    /// Worker threads (0 = all cores). Overrides the config's `threads`.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set p=500 --set synthetic.n_classes=4`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Full multi-trial experiment.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Per-trial, per-class CSV report.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Also write the resolved config here.
        #[arg(long)]
        echo_config: Option<PathBuf>,
    },
    /// Extract first-trial features: dictionary, train/test sparse files, class list.
    Extract {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a classifier from a sparse feature file.
    Train {
        #[arg(long)]
        features: PathBuf,
        /// One class name per line, in label order.
        #[arg(long)]
        classes: Option<PathBuf>,
        /// Feature length; defaults to the largest index in the file.
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long, default_value_t = hmax_llc::classify::DEFAULT_COST)]
        cost: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-class accuracy of a trained model on a sparse feature file.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: PathBuf,
    },
    /// Write a synthetic folder-per-class dataset as PNG files.
    Synth {
        #[arg(long, default_value_t = 10)]
        n_classes: usize,
        #[arg(long, default_value_t = 40)]
        per_class: usize,
        #[arg(long, default_value_t = 96)]
        side: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the configured S1 filter bank as CSV and PNG files.
    DumpFilters {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(args: &ConfigArgs, threads: Option<usize>) -> Result<ExperimentConfig> {
    let mut overrides = args.overrides.clone();
    if let Some(t) = threads {
        overrides.push(format!("threads={t}"));
    }
    ExperimentConfig::load(args.config.as_deref(), &overrides).context("loading config")
}

fn read_features(path: &Path, dim: Option<usize>) -> Result<(Vec<FeatureVector>, Vec<usize>)> {
    let rows = read_sparse(BufReader::new(
        File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ))?;
    let max_index = rows.iter().flat_map(|r| r.1.iter().map(|e| e.0)).max().unwrap_or(0);
    let dim = dim.unwrap_or(max_index);
    if max_index > dim {
        bail!("{}: index {max_index} exceeds feature length {dim}", path.display());
    }
    let mut features = Vec::with_capacity(rows.len());
    let mut labels = Vec::with_capacity(rows.len());
    for (label, entries) in rows {
        if label < 0 {
            bail!("{}: negative label {label}", path.display());
        }
        let mut v = vec![0.0; dim];
        for (i, x) in entries {
            if i == 0 {
                bail!("{}: indices are 1-based", path.display());
            }
            v[i - 1] = x;
        }
        features.push(FeatureVector(v));
        labels.push(label as usize);
    }
    Ok((features, labels))
}

fn print_accuracy(per_class: &[ClassAccuracy]) {
    for c in per_class {
        println!("{:<24} {:>4}/{:<4} {:.4}", c.class, c.correct, c.tested, c.accuracy());
    }
    let tested: Vec<&ClassAccuracy> = per_class.iter().filter(|c| c.tested > 0).collect();
    let mean = tested.iter().map(|c| c.accuracy()).sum::<f64>() / tested.len().max(1) as f64;
    println!("mean per-class accuracy {mean:.4}");
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            cfg,
            csv,
            echo_config,
        } => {
            let config = load_config(&cfg, cli.threads)?;
            if let Some(path) = echo_config {
                fs::write(path, config.to_toml())?;
            }
            let report = run_experiment(&config)?;
            print!("{}", report.summary());
            if let Some(path) = csv {
                report.write_csv(&path)?;
            }
            if report.completed_accuracies().is_empty() {
                bail!("every trial aborted");
            }
        }
        Command::Extract { cfg, out } => {
            let config = load_config(&cfg, cli.threads)?;
            let files = extract_features(&config, &out)?;
            println!("dictionary {}", files.dictionary.display());
            println!("train features {}", files.train.display());
            println!("test features {}", files.test.display());
            println!("classes {}", files.classes.display());
        }
        Command::Train {
            features,
            classes,
            dim,
            cost,
            out,
        } => {
            let (x, y) = read_features(&features, dim)?;
            let names: Vec<String> = match classes {
                Some(p) => fs::read_to_string(p)?.lines().map(str::to_owned).collect(),
                None => (0..=y.iter().copied().max().unwrap_or(0)).map(|c| c.to_string()).collect(),
            };
            let opts = TrainOptions {
                cost,
                ..TrainOptions::default()
            };
            let threads = cli.threads.unwrap_or(0);
            let (model, logs) =
                hmax_llc::harness::with_threads(threads, || train(&x, &y, &names, &opts))??;
            model.write(&out)?;
            for (name, log) in names.iter().zip(&logs) {
                log::info!(
                    "{name}: {} iterations, gradient norm {:.2e}",
                    log.iterations,
                    log.grad_norm
                );
            }
            println!("model {} ({} classes, {} features)", out.display(), names.len(), model.feature_len());
        }
        Command::Eval { model, features } => {
            let model = LinearModel::read(&model)?;
            let (x, y) = read_features(&features, Some(model.feature_len()))?;
            if let Some(&bad) = y.iter().find(|&&l| l >= model.classes.len()) {
                bail!("label {bad} has no class in the model");
            }
            print_accuracy(&evaluate(&model, &x, &y)?);
        }
        Command::Synth {
            n_classes,
            per_class,
            side,
            seed,
            out,
        } => {
            let set = generate_synthetic_dataset(n_classes, per_class, side, seed)?;
            set.save(&out)?;
            println!("{} images in {} classes under {}", set.n_images(), n_classes, out.display());
        }
        Command::DumpFilters { cfg, out } => {
            let config = load_config(&cfg, cli.threads)?;
            let bank = config.pipeline()?.bank;
            bank.dump(&out)?;
            println!("{} filters written to {}", bank.len(), out.display());
        }
    }
    Ok(())
}
