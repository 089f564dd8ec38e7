//! One-vs-rest L2-regularized logistic regression on C2 features, plus the
//! sparse text interchange format used by external linear-classifier tools.
//!
//! Each class `c` minimises
//! `0.5 * ||w||^2 + C * sum_i log(1 + exp(-y_i * w^T [x_i; 1]))`
//! with `y_i = +1` for samples of `c` and `-1` otherwise. The bias is the
//! last weight and is regularized with the rest.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::binfmt::{expect_magic, read_f64, read_u32, read_u64, write_f64, write_u32, write_u64};
use crate::linalg::dot;
use crate::spm::FeatureVector;
use crate::{Error, Result};

pub const DEFAULT_COST: f64 = 0.1;
/// Termination threshold on the gradient L2 norm.
pub const GRAD_TOL: f64 = 1e-4;

const MODEL_MAGIC: &[u8; 4] = b"HLRM";
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub cost: f64,
    pub grad_tol: f64,
    pub max_iter: usize,
    /// L-BFGS history length.
    pub memory: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            cost: DEFAULT_COST,
            grad_tol: GRAD_TOL,
            max_iter: 5000,
            memory: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub classes: Vec<String>,
    /// Per class, `feature_len + 1` weights; the last is the bias.
    pub weights: Vec<Vec<f64>>,
    pub cost: f64,
}

/// Optimizer trace for one binary sub-problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassTrainLog {
    pub objective: Vec<f64>,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl LinearModel {
    pub fn feature_len(&self) -> usize {
        self.weights.first().map_or(0, |w| w.len() - 1)
    }

    pub fn scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.feature_len() {
            return Err(Error::DimensionMismatch {
                expected: self.feature_len(),
                got: x.len(),
            });
        }
        Ok(self.weights.iter().map(|w| margin(w, x)).collect())
    }

    /// Index of the highest-scoring class; ties go to the lowest index.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        let scores = self.scores(x)?;
        let mut best = 0;
        for (i, &s) in scores.iter().enumerate().skip(1) {
            if s > scores[best] {
                best = i;
            }
        }
        Ok(best)
    }

    /// Header (magic, version, n_classes, feature_len, cost, class names)
    /// followed by the weight vectors as f64 LE.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MODEL_MAGIC)?;
        write_u32(&mut w, MODEL_VERSION)?;
        write_u32(&mut w, self.classes.len() as u32)?;
        write_u64(&mut w, self.feature_len() as u64)?;
        write_f64(&mut w, self.cost)?;
        for c in &self.classes {
            write_u32(&mut w, c.len() as u32)?;
            w.write_all(c.as_bytes())?;
        }
        for row in &self.weights {
            for &v in row {
                write_f64(&mut w, v)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        expect_magic(&mut r, MODEL_MAGIC, MODEL_VERSION)?;
        let n = read_u32(&mut r)? as usize;
        let len = read_u64(&mut r)? as usize;
        let cost = read_f64(&mut r)?;
        let mut classes = Vec::with_capacity(n);
        for _ in 0..n {
            let l = read_u32(&mut r)? as usize;
            let mut b = vec![0u8; l];
            r.read_exact(&mut b)?;
            classes.push(
                String::from_utf8(b).map_err(|e| Error::Format(format!("class name: {e}")))?,
            );
        }
        let weights = (0..n)
            .map(|_| (0..=len).map(|_| read_f64(&mut r)).collect())
            .collect::<Result<Vec<Vec<f64>>>>()?;
        Ok(Self {
            classes,
            weights,
            cost,
        })
    }
}

#[inline]
fn margin(w: &[f64], x: &[f64]) -> f64 {
    dot(&w[..x.len()], x) + w[x.len()]
}

/// `log(1 + exp(t))` without overflow.
#[inline]
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

#[inline]
fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

struct Binary<'a> {
    rows: &'a [&'a [f64]],
    y: Vec<f64>,
    cost: f64,
    dim: usize,
}

impl Binary<'_> {
    fn objective_from_margins(&self, w_sq: f64, z: &[f64]) -> f64 {
        let loss: f64 = z.iter().zip(&self.y).map(|(zi, yi)| softplus(-yi * zi)).sum();
        0.5 * w_sq + self.cost * loss
    }

    fn margins(&self, w: &[f64], out: &mut [f64]) {
        for (o, x) in out.iter_mut().zip(self.rows) {
            *o = margin(w, x);
        }
    }

    fn gradient(&self, w: &[f64], z: &[f64], g: &mut [f64]) {
        g.copy_from_slice(w);
        let d = self.dim - 1;
        for ((x, &zi), &yi) in self.rows.iter().zip(z).zip(&self.y) {
            let r = -self.cost * yi * sigmoid(-yi * zi);
            if r == 0.0 {
                continue;
            }
            for (gj, xj) in g[..d].iter_mut().zip(x.iter()) {
                *gj += r * xj;
            }
            g[d] += r;
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Limited-memory BFGS with a monotone Armijo backtracking line search.
fn lbfgs(problem: &Binary<'_>, opts: &TrainOptions) -> (Vec<f64>, ClassTrainLog) {
    let dim = problem.dim;
    let n = problem.rows.len();
    let mut w = vec![0.0; dim];
    let mut z = vec![0.0; n];
    let mut g = vec![0.0; dim];
    problem.gradient(&w, &z, &mut g);
    let mut f = problem.objective_from_margins(0.0, &z);
    let mut objective = vec![f];
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut dir = vec![0.0; dim];
    let mut xd = vec![0.0; n];
    let mut z_trial = vec![0.0; n];
    let mut g_new = vec![0.0; dim];
    let mut alpha_buf = Vec::with_capacity(opts.memory);
    let mut iterations = 0;

    while norm(&g) > opts.grad_tol && iterations < opts.max_iter {
        iterations += 1;
        // two-loop recursion
        dir.iter_mut().zip(&g).for_each(|(d, gi)| *d = -gi);
        alpha_buf.clear();
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(s, &dir);
            dir.iter_mut().zip(y).for_each(|(d, yi)| *d -= a * yi);
            alpha_buf.push(a);
        }
        if let Some((s, y, _)) = history.back() {
            let gamma = dot(s, y) / dot(y, y);
            dir.iter_mut().for_each(|d| *d *= gamma);
        }
        for ((s, y, rho), a) in history.iter().zip(alpha_buf.iter().rev()) {
            let b = rho * dot(y, &dir);
            dir.iter_mut().zip(s).for_each(|(d, si)| *d += (a - b) * si);
        }
        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            history.clear();
            dir.iter_mut().zip(&g).for_each(|(d, gi)| *d = -gi);
            slope = dot(&g, &dir);
        }
        if history.is_empty() {
            // unit-length first step along steepest descent
            let scale = 1.0 / norm(&dir).max(1.0);
            dir.iter_mut().for_each(|d| *d *= scale);
            slope *= scale;
        }

        // margins move linearly along the search direction
        problem.margins(&dir, &mut xd);
        let (w_sq, w_d, d_sq) = (dot(&w, &w), dot(&w, &dir), dot(&dir, &dir));
        let mut step = 1.0;
        let mut f_trial;
        loop {
            for ((zt, zi), xi) in z_trial.iter_mut().zip(&z).zip(&xd) {
                *zt = zi + step * xi;
            }
            let sq = w_sq + 2.0 * step * w_d + step * step * d_sq;
            f_trial = problem.objective_from_margins(sq, &z_trial);
            if f_trial <= f + 1e-4 * step * slope || step < 1e-20 {
                break;
            }
            step *= 0.5;
        }
        if !(f_trial <= f) {
            break;
        }

        let s: Vec<f64> = dir.iter().map(|d| step * d).collect();
        w.iter_mut().zip(&s).for_each(|(wi, si)| *wi += si);
        std::mem::swap(&mut z, &mut z_trial);
        problem.gradient(&w, &z, &mut g_new);
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        std::mem::swap(&mut g, &mut g_new);
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).max(f64::MIN_POSITIVE) {
            if history.len() == opts.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        let stalled = f - f_trial <= f64::EPSILON * f.abs();
        f = f_trial;
        objective.push(f);
        if stalled && history.is_empty() {
            break;
        }
    }
    let grad_norm = norm(&g);
    (
        w,
        ClassTrainLog {
            objective,
            grad_norm,
            iterations,
            converged: grad_norm <= opts.grad_tol,
        },
    )
}

/// Trains one binary problem per class. Labels index into `classes`.
pub fn train(
    features: &[FeatureVector],
    labels: &[usize],
    classes: &[String],
    opts: &TrainOptions,
) -> Result<(LinearModel, Vec<ClassTrainLog>)> {
    if features.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: features.len(),
            got: labels.len(),
        });
    }
    if classes.len() < 2 {
        return Err(Error::SingleClass(classes.len()));
    }
    let mut counts = vec![0usize; classes.len()];
    for &l in labels {
        *counts
            .get_mut(l)
            .ok_or_else(|| Error::InvalidParameter(format!("label {l} out of range")))? += 1;
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::InvalidParameter(format!(
            "class {} has no training samples",
            classes[c]
        )));
    }
    let d = features[0].len();
    for f in features {
        if f.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: f.len(),
            });
        }
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteFeature);
        }
    }
    if !(opts.cost > 0.0) {
        return Err(Error::InvalidParameter(format!("cost {} must be > 0", opts.cost)));
    }

    let rows: Vec<&[f64]> = features.iter().map(|f| &f[..]).collect();
    let solved: Vec<(Vec<f64>, ClassTrainLog)> = (0..classes.len())
        .into_par_iter()
        .map(|c| {
            let problem = Binary {
                rows: &rows,
                y: labels
                    .iter()
                    .map(|&l| if l == c { 1.0 } else { -1.0 })
                    .collect(),
                cost: opts.cost,
                dim: d + 1,
            };
            lbfgs(&problem, opts)
        })
        .collect();
    for (c, (_, log)) in solved.iter().enumerate() {
        if !log.converged {
            log::warn!(
                "class {} stopped at gradient norm {:.3e} after {} iterations",
                classes[c],
                log.grad_norm,
                log.iterations
            );
        }
    }
    let (weights, logs) = solved.into_iter().unzip();
    Ok((
        LinearModel {
            classes: classes.to_vec(),
            weights,
            cost: opts.cost,
        },
        logs,
    ))
}

fn format_value(v: f64) -> String {
    if v.abs() >= 0.1 {
        format!("{v:.9}")
    } else {
        format!("{v:.9e}")
    }
}

/// One line per sample: `<label> <index>:<value> ...`, 1-based ascending
/// indices, zero entries omitted.
pub fn write_sparse<W: Write>(out: &mut W, features: &[FeatureVector], labels: &[usize]) -> Result<()> {
    for (f, &label) in features.iter().zip(labels) {
        let mut line = label.to_string();
        for (i, &v) in f.iter().enumerate() {
            if v != 0.0 {
                line.push(' ');
                line.push_str(&(i + 1).to_string());
                line.push(':');
                line.push_str(&format_value(v));
            }
        }
        line.push('\n');
        out.write_all(line.as_bytes())?;
    }
    Ok(())
}

pub fn export_sparse(features: &[FeatureVector], labels: &[usize], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_sparse(&mut w, features, labels)?;
    w.flush()?;
    Ok(())
}

/// A parsed sparse line: label and `(1-based index, value)` pairs.
pub type SparseRow = (i64, Vec<(usize, f64)>);

pub fn read_sparse<R: BufRead>(input: R) -> Result<Vec<SparseRow>> {
    let mut rows = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        let mut parts = line.split_whitespace();
        let bad = |what: &str| Error::Format(format!("line {}: {what}", n + 1));
        let label = parts
            .next()
            .ok_or_else(|| bad("missing label"))?
            .parse::<i64>()
            .map_err(|_| bad("bad label"))?;
        let mut entries = Vec::new();
        for tok in parts {
            let (i, v) = tok.split_once(':').ok_or_else(|| bad("expected index:value"))?;
            entries.push((
                i.parse().map_err(|_| bad("bad index"))?,
                v.parse().map_err(|_| bad("bad value"))?,
            ));
        }
        rows.push((label, entries));
    }
    Ok(rows)
}
