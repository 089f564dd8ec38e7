//! Independent scalar oracles shared by the integration tests.
#![allow(dead_code)]

use hmax_llc::conditioning::{PatchConditioning, StdConvention};
use hmax_llc::filterbank::FilterBank;
use hmax_llc::llc::{S2CodeMap, SparseCode, TemplateDictionary, TEMPLATE_SIDE};
use hmax_llc::preprocess::OpponentImage;
use hmax_llc::s1c1::{C1Stack, Plane};
use hmax_llc::spm::{SpmLayout, SpmMode};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random sparse codes: each cell holds up to `max_nnz` distinct templates
/// with coefficients in (-1, 1); some cells are empty.
pub fn random_code_map(r: &mut ChaCha8Rng, gh: usize, gw: usize, p: usize, max_nnz: usize) -> S2CodeMap {
    let cells = (0..gh * gw)
        .map(|_| {
            let nnz = r.random_range(0..=max_nnz.min(p));
            let mut idx: Vec<u32> = rand::seq::index::sample(r, p, nnz).into_iter().map(|i| i as u32).collect();
            idx.sort_unstable();
            let coeffs = idx.iter().map(|_| r.random_range(-1.0..1.0)).collect();
            SparseCode { indices: idx, coeffs }
        })
        .collect();
    S2CodeMap { grid_h: gh, grid_w: gw, p, cells }
}

/// `[start, end)` of band `i` out of `n` over `dim` cells, by float rounding.
pub fn band(dim: usize, n: usize, i: usize) -> (usize, usize) {
    let at = |j: usize| ((j * dim) as f64 / n as f64 + 0.5).floor() as usize;
    (at(i), at(i + 1))
}

fn coeff(cell: &SparseCode, t: usize) -> Option<f64> {
    cell.indices.iter().position(|&i| i as usize == t).map(|k| cell.coeffs[k])
}

/// Coefficients of template `t` in region `(i, j)` of the `n x n` level.
fn region_values(codes: &S2CodeMap, t: usize, n: usize, i: usize, j: usize) -> Vec<f64> {
    let (r0, r1) = band(codes.grid_h, n, i);
    let (c0, c1) = band(codes.grid_w, n, j);
    let mut out = Vec::new();
    for row in r0..r1 {
        for col in c0..c1 {
            if let Some(c) = coeff(&codes.cells[row * codes.grid_w + col], t) {
                out.push(c);
            }
        }
    }
    out
}

pub enum Pool {
    Signed,
    Positive,
    Negative,
}

/// Exhaustive scan over every template, level and region.
pub fn scan(codes: &S2CodeMap, t: usize, levels: &[usize], pool: Pool) -> Vec<f64> {
    let mut out = Vec::new();
    for &n in levels {
        for i in 0..n {
            for j in 0..n {
                let vals = region_values(codes, t, n, i, j);
                out.push(match pool {
                    Pool::Signed => {
                        if vals.is_empty() {
                            0.0
                        } else {
                            vals.iter().copied().fold(f64::NEG_INFINITY, f64::max)
                        }
                    }
                    Pool::Positive => vals.iter().fold(0.0, |m, &v| f64::max(m, v)),
                    Pool::Negative => vals.iter().fold(0.0, |m, &v| f64::max(m, -v)),
                });
            }
        }
    }
    out
}

pub fn c2_oracle(codes: &S2CodeMap, layout: &SpmLayout) -> Vec<f64> {
    let mut out = Vec::new();
    for t in 0..codes.p {
        match (layout.mode, layout.spm3_polarity) {
            (SpmMode::Full, _) => {
                out.extend(scan(codes, t, &[1, 3], Pool::Signed));
                out.extend(scan(codes, t, &[1, 2, 4], Pool::Positive));
                out.extend(scan(codes, t, &[1, 2, 4], Pool::Negative));
            }
            (SpmMode::GlobalMax, _) => out.extend(scan(codes, t, &[1], Pool::Signed)),
            (SpmMode::Spm3, false) => out.extend(scan(codes, t, &[1, 2, 4], Pool::Signed)),
            (SpmMode::Spm3, true) => {
                out.extend(scan(codes, t, &[1, 2, 4], Pool::Positive));
                out.extend(scan(codes, t, &[1, 2, 4], Pool::Negative));
            }
        }
    }
    out
}

/// Whitening and unit normalization written out with plain loops.
pub fn condition(patch: &[f64], cond: &PatchConditioning) -> Vec<f64> {
    let n = patch.len();
    let mut y = patch.to_vec();
    if let PatchConditioning::Whiten(w) = cond {
        let mut sum = 0.0;
        for v in patch {
            sum += v;
        }
        let mean = sum / n as f64;
        let mut ss = 0.0;
        for v in patch {
            ss += (v - mean) * (v - mean);
        }
        let div = match w.std {
            StdConvention::Population => n as f64,
            StdConvention::Sample => (n as f64 - 1.0).max(1.0),
        };
        let sd = (ss / div).sqrt();
        for i in 0..n {
            y[i] = (patch[i] - w.alpha * mean) / (sd + w.beta);
        }
    }
    let mut sq = 0.0;
    for v in &y {
        sq += v * v;
    }
    let norm = sq.sqrt();
    for v in &mut y {
        *v = if norm > 1e-12 { *v / norm } else { 0.0 };
    }
    y
}

/// Nested-loop S1: per output pixel, filter and channel.
pub fn s1_oracle(img: &OpponentImage, bank: &FilterBank, cond: &PatchConditioning) -> Vec<Plane> {
    let k = bank.kernel_size();
    let (ow, oh) = (img.width - k + 1, img.height - k + 1);
    let channels: Vec<usize> = if img.greyscale { vec![0] } else { vec![0, 1, 2] };
    let mut planes: Vec<Vec<f64>> = vec![vec![0.0; ow * oh]; bank.len()];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = vec![0.0; bank.len()];
            for &ch in &channels {
                let mut patch = Vec::with_capacity(k * k);
                for r in 0..k {
                    for c in 0..k {
                        patch.push(img.planes[ch][(y + r) * img.width + x + c]);
                    }
                }
                let patch = condition(&patch, cond);
                for (f, filter) in bank.filters.iter().enumerate() {
                    let mut d = 0.0;
                    for r in 0..k {
                        for c in 0..k {
                            d += filter.at(r, c) * patch[r * k + c];
                        }
                    }
                    acc[f] += d.abs();
                }
            }
            for f in 0..bank.len() {
                planes[f][y * ow + x] = acc[f] / channels.len() as f64;
            }
        }
    }
    planes.into_iter().map(|d| Plane::new(ow, oh, d)).collect()
}

/// Exhaustive max over each complete window.
pub fn c1_oracle(p: &Plane, window: usize, stride: usize) -> Plane {
    let ow = (p.width - window) / stride + 1;
    let oh = (p.height - window) / stride + 1;
    let mut data = Vec::with_capacity(ow * oh);
    for i in 0..oh {
        for j in 0..ow {
            let mut m = f64::NEG_INFINITY;
            for r in 0..window {
                for c in 0..window {
                    m = m.max(p.at(i * stride + r, j * stride + c));
                }
            }
            data.push(m);
        }
    }
    Plane::new(ow, oh, data)
}

/// The 4x4 window at `(row, col)`, plane by plane, row-major.
pub fn window(stack: &C1Stack, row: usize, col: usize) -> Vec<f64> {
    let mut out = Vec::new();
    for plane in &stack.planes {
        for r in 0..TEMPLATE_SIDE {
            for c in 0..TEMPLATE_SIDE {
                out.push(plane.at(row + r, col + c));
            }
        }
    }
    out
}

/// Full sort by score (ties to lower index), then a dense LU solve of the
/// regularized normal equations. Returns the code over all `p` templates.
pub fn llc_oracle(
    raw_window: &[f64],
    dict: &TemplateDictionary,
    k: usize,
    lambda: f64,
    cond: &PatchConditioning,
) -> Vec<f64> {
    let x = condition(raw_window, cond);
    let p = dict.p();
    let mut scored: Vec<(f64, usize)> = (0..p)
        .map(|t| (dict.template(t).iter().zip(&x).map(|(a, b)| a * b).sum(), t))
        .collect();
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let basis: Vec<usize> = scored[..k].iter().map(|s| s.1).collect();
    let len = x.len();
    let d = DMatrix::from_fn(len, k, |r, c| dict.template(basis[c])[r]);
    let xv = DVector::from_column_slice(&x);
    let a = d.transpose() * &d + DMatrix::identity(k, k) * lambda;
    let rhs = d.transpose() * xv;
    let c = a.lu().solve(&rhs).expect("oracle system is nonsingular");
    let mut out = vec![0.0; p];
    for (i, &t) in basis.iter().enumerate() {
        out[t] = c[i];
    }
    out
}

pub fn random_stack(r: &mut ChaCha8Rng, planes: usize, h: usize, w: usize) -> C1Stack {
    C1Stack {
        planes: (0..planes)
            .map(|_| Plane::new(w, h, (0..w * h).map(|_| r.random::<f64>()).collect()))
            .collect(),
        pool_window: 12,
        pool_stride: 6,
    }
}

pub fn random_opponent(r: &mut ChaCha8Rng, w: usize, h: usize, greyscale: bool) -> OpponentImage {
    use hmax_llc::preprocess::{to_opponent, RgbRaster};
    let data = (0..w * h).map(|_| [r.random(), r.random(), r.random()]).collect();
    to_opponent(&RgbRaster::new(w, h, data), greyscale)
}
