use std::fmt::Write as _;
use std::path::Path;
use std::time::Duration;

use serde::Serialize;

use super::config::ExperimentConfig;
use crate::preprocess::SkipRecord;
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct ClassAccuracy {
    pub class: String,
    pub correct: usize,
    pub tested: usize,
}

impl ClassAccuracy {
    pub fn accuracy(&self) -> f64 {
        if self.tested == 0 {
            0.0
        } else {
            self.correct as f64 / self.tested as f64
        }
    }
}

/// Wall-clock time per stage. Kept out of the CSV so reports compare byte for byte.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimings {
    pub dictionary: Duration,
    pub encode: Duration,
    pub train: Duration,
    pub evaluate: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrialOutcome {
    Completed {
        per_class: Vec<ClassAccuracy>,
        timings: StageTimings,
    },
    Aborted {
        diagnostic: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub trial: usize,
    pub seed: u64,
    pub outcome: TrialOutcome,
}

impl TrialResult {
    /// Unweighted mean over classes of the per-class accuracy.
    pub fn mean_accuracy(&self) -> Option<f64> {
        match &self.outcome {
            TrialOutcome::Completed { per_class, .. } => Some(mean_class_accuracy(per_class)),
            TrialOutcome::Aborted { .. } => None,
        }
    }
}

pub fn mean_class_accuracy(per_class: &[ClassAccuracy]) -> f64 {
    per_class.iter().map(ClassAccuracy::accuracy).sum::<f64>() / per_class.len().max(1) as f64
}

#[derive(Debug, Clone)]
pub struct Report {
    pub config: ExperimentConfig,
    pub classes: Vec<String>,
    pub trials: Vec<TrialResult>,
    /// C1 extraction over every image the trials touch.
    pub extract_time: Duration,
    pub skipped: Vec<SkipRecord>,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    trial: String,
    seed: String,
    class: &'a str,
    correct: String,
    tested: String,
    accuracy: String,
    status: &'a str,
}

impl Report {
    pub fn completed_accuracies(&self) -> Vec<f64> {
        self.trials.iter().filter_map(TrialResult::mean_accuracy).collect()
    }

    /// Mean and sample standard deviation of the per-trial accuracies.
    pub fn mean_std(&self) -> Option<(f64, f64)> {
        let acc = self.completed_accuracies();
        if acc.is_empty() {
            return None;
        }
        let n = acc.len() as f64;
        let mean = acc.iter().sum::<f64>() / n;
        let var = if acc.len() > 1 {
            acc.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Some((mean, var.sqrt()))
    }

    /// One row per trial and class, a `mean` row per trial, then `mean` and
    /// `std` rows across trials. Aborted trials get a single row.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let blank = String::new;
        for t in &self.trials {
            match &t.outcome {
                TrialOutcome::Completed { per_class, .. } => {
                    for c in per_class {
                        w.serialize(CsvRow {
                            trial: t.trial.to_string(),
                            seed: t.seed.to_string(),
                            class: &c.class,
                            correct: c.correct.to_string(),
                            tested: c.tested.to_string(),
                            accuracy: c.accuracy().to_string(),
                            status: "ok",
                        })?;
                    }
                    w.serialize(CsvRow {
                        trial: t.trial.to_string(),
                        seed: t.seed.to_string(),
                        class: "mean",
                        correct: per_class.iter().map(|c| c.correct).sum::<usize>().to_string(),
                        tested: per_class.iter().map(|c| c.tested).sum::<usize>().to_string(),
                        accuracy: mean_class_accuracy(per_class).to_string(),
                        status: "ok",
                    })?;
                }
                TrialOutcome::Aborted { .. } => w.serialize(CsvRow {
                    trial: t.trial.to_string(),
                    seed: t.seed.to_string(),
                    class: "",
                    correct: blank(),
                    tested: blank(),
                    accuracy: blank(),
                    status: "aborted",
                })?,
            }
        }
        if let Some((mean, std)) = self.mean_std() {
            for (label, v) in [("mean", mean), ("std", std)] {
                w.serialize(CsvRow {
                    trial: "all".into(),
                    seed: blank(),
                    class: label,
                    correct: blank(),
                    tested: blank(),
                    accuracy: v.to_string(),
                    status: "ok",
                })?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let n_done = self.completed_accuracies().len();
        let _ = writeln!(
            s,
            "{} classes, {} trials ({} completed), C1 extraction {:.2?}",
            self.classes.len(),
            self.trials.len(),
            n_done,
            self.extract_time
        );
        for t in &self.trials {
            match &t.outcome {
                TrialOutcome::Completed { timings, .. } => {
                    let _ = writeln!(
                        s,
                        "trial {} (seed {}): accuracy {:.4}  [dictionary {:.2?}, encode {:.2?}, train {:.2?}, eval {:.2?}]",
                        t.trial,
                        t.seed,
                        t.mean_accuracy().unwrap_or(0.0),
                        timings.dictionary,
                        timings.encode,
                        timings.train,
                        timings.evaluate
                    );
                }
                TrialOutcome::Aborted { diagnostic } => {
                    let _ = writeln!(s, "trial {} (seed {}): ABORTED: {diagnostic}", t.trial, t.seed);
                }
            }
        }
        if let Some((mean, std)) = self.mean_std() {
            let _ = writeln!(s, "mean accuracy {:.4} +/- {:.4}", mean, std);
        }
        if !self.skipped.is_empty() {
            let _ = writeln!(s, "{} unreadable files skipped", self.skipped.len());
        }
        s
    }
}
