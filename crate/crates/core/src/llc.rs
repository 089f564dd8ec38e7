//! S2: template sampling and simplified locality-constrained linear coding.
//!
//! Each 4x4 window of a C1 stack, flattened across all planes, is
//! conditioned like an S1 patch. Its `k` closest templates by dot product
//! form a local basis `D`, and the code solves the ridge problem
//! `(D^T D + lambda I) c = D^T x`. There is no sum-to-one constraint.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::binfmt::{expect_magic, read_f32s, read_u32, read_u64, write_f32s, write_u32, write_u64};
use crate::conditioning::{full_whiten_unit_in_place, PatchConditioning};
use crate::linalg::{cholesky_in_place, cholesky_solve, dot};
use crate::s1c1::C1Stack;
use crate::{Error, Result};

/// Spatial side of an S2 template, in C1 cells.
pub const TEMPLATE_SIDE: usize = 4;
/// Redraws allowed for a sampled window that whitens to zero.
pub const MAX_REDRAWS: usize = 100;

const DICT_MAGIC: &[u8; 4] = b"HS2D";
const DICT_VERSION: u32 = 1;

/// Where a template was cut from: stack index, top-left row and column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TemplateSource {
    pub stack: usize,
    pub row: usize,
    pub col: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemplateDictionary {
    /// `p * template_len` values, template-major.
    data: Vec<f64>,
    p: usize,
    template_len: usize,
    pub seed: u64,
    /// Provenance of each template; empty for dictionaries read from disk.
    pub sources: Vec<TemplateSource>,
}

impl TemplateDictionary {
    /// Builds a dictionary from raw vectors, whitening and normalizing each.
    pub fn from_templates(templates: Vec<Vec<f64>>, seed: u64) -> Result<Self> {
        let p = templates.len();
        let template_len = templates.first().map_or(0, Vec::len);
        if p == 0 || template_len == 0 {
            return Err(Error::InvalidParameter("empty dictionary".into()));
        }
        let mut data = Vec::with_capacity(p * template_len);
        for mut t in templates {
            if t.len() != template_len {
                return Err(Error::DimensionMismatch {
                    expected: template_len,
                    got: t.len(),
                });
            }
            full_whiten_unit_in_place(&mut t);
            data.extend_from_slice(&t);
        }
        Ok(Self {
            data,
            p,
            template_len,
            seed,
            sources: Vec::new(),
        })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn template_len(&self) -> usize {
        self.template_len
    }

    pub fn template(&self, t: usize) -> &[f64] {
        &self.data[t * self.template_len..(t + 1) * self.template_len]
    }

    /// Round-trips the templates through `f32` storage precision, then
    /// re-whitens, so the result equals what [`TemplateDictionary::read`]
    /// returns for a written copy.
    pub fn quantized(&self) -> Self {
        let mut out = self.clone();
        for t in out.data.chunks_mut(self.template_len) {
            t.iter_mut().for_each(|v| *v = *v as f32 as f64);
            full_whiten_unit_in_place(t);
        }
        out
    }

    /// Header `magic, version, p, template_len, seed`, then f32 LE templates.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(DICT_MAGIC)?;
        write_u32(&mut w, DICT_VERSION)?;
        write_u32(&mut w, self.p as u32)?;
        write_u32(&mut w, self.template_len as u32)?;
        write_u64(&mut w, self.seed)?;
        write_f32s(&mut w, self.data.iter().copied())?;
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        expect_magic(&mut r, DICT_MAGIC, DICT_VERSION)?;
        let p = read_u32(&mut r)? as usize;
        let template_len = read_u32(&mut r)? as usize;
        let seed = read_u64(&mut r)?;
        let mut data = read_f32s(&mut r, p * template_len)?;
        for t in data.chunks_mut(template_len.max(1)) {
            full_whiten_unit_in_place(t);
        }
        Ok(Self {
            data,
            p,
            template_len,
            seed,
            sources: Vec::new(),
        })
    }
}

/// Copies the 4x4 window at `(row, col)` of every plane, plane-major.
fn gather_window(stack: &C1Stack, row: usize, col: usize, out: &mut [f64]) {
    let s = TEMPLATE_SIDE;
    for (f, plane) in stack.planes.iter().enumerate() {
        for r in 0..s {
            let src = (row + r) * plane.width + col;
            out[f * s * s + r * s..f * s * s + (r + 1) * s]
                .copy_from_slice(&plane.data[src..src + s]);
        }
    }
}

fn grid_dims(stack: &C1Stack) -> Option<(usize, usize)> {
    let (h, w) = (stack.height(), stack.width());
    (h >= TEMPLATE_SIDE && w >= TEMPLATE_SIDE && stack.n_planes() > 0)
        .then(|| (h - TEMPLATE_SIDE + 1, w - TEMPLATE_SIDE + 1))
}

/// Draws `p` windows uniformly over every valid (stack, row, col) position,
/// flattens them across planes and fully whitens them. A window that whitens
/// to zero is redrawn up to [`MAX_REDRAWS`] times and then kept as zero.
pub fn sample_templates(stacks: &[&C1Stack], p: usize, seed: u64) -> Result<TemplateDictionary> {
    if p == 0 {
        return Err(Error::InvalidParameter("template count must be >= 1".into()));
    }
    let n_planes = stacks.first().map_or(0, |s| s.n_planes());
    if let Some(s) = stacks.iter().find(|s| s.n_planes() != n_planes) {
        return Err(Error::DimensionMismatch {
            expected: n_planes,
            got: s.n_planes(),
        });
    }
    // cumulative position counts for uniform sampling over all windows
    let mut offsets = Vec::with_capacity(stacks.len());
    let mut total = 0usize;
    for s in stacks {
        offsets.push(total);
        if let Some((gh, gw)) = grid_dims(s) {
            total += gh * gw;
        }
    }
    if total == 0 {
        return Err(Error::NoTemplateWindow(TEMPLATE_SIDE));
    }

    let len = n_planes * TEMPLATE_SIDE * TEMPLATE_SIDE;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = vec![0.0; p * len];
    let mut sources = Vec::with_capacity(p);
    for t in 0..p {
        let out = &mut data[t * len..(t + 1) * len];
        let mut source = None;
        for _ in 0..=MAX_REDRAWS {
            let g = rng.random_range(0..total);
            let stack = offsets.partition_point(|&o| o <= g) - 1;
            let (_, gw) = grid_dims(stacks[stack]).expect("offset points at a valid stack");
            let local = g - offsets[stack];
            let src = TemplateSource {
                stack,
                row: local / gw,
                col: local % gw,
            };
            gather_window(stacks[stack], src.row, src.col, out);
            full_whiten_unit_in_place(out);
            source = Some(src);
            if out.iter().any(|&v| v != 0.0) {
                break;
            }
        }
        sources.push(source.expect("at least one draw"));
    }
    Ok(TemplateDictionary {
        data,
        p,
        template_len: len,
        seed,
        sources,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LlcParams {
    /// Neighbourhood size.
    pub k: usize,
    /// Ridge coefficient on the k x k normal equations.
    pub lambda: f64,
    pub conditioning: PatchConditioning,
}

impl Default for LlcParams {
    fn default() -> Self {
        Self {
            k: 20,
            lambda: 0.25,
            conditioning: PatchConditioning::default(),
        }
    }
}

impl LlcParams {
    pub fn validate(&self, p: usize) -> Result<()> {
        if self.k == 0 || self.k > p {
            return Err(Error::InvalidParameter(format!(
                "k = {} must be in [1, p = {p}]",
                self.k
            )));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "lambda {} must be >= 0",
                self.lambda
            )));
        }
        if let PatchConditioning::Whiten(w) = &self.conditioning {
            w.validate()?;
        }
        Ok(())
    }
}

/// Reusable buffers for the per-cell encode.
struct Scratch {
    scores: Vec<f64>,
    order: Vec<usize>,
    gram: Vec<f64>,
    rhs: Vec<f64>,
}

impl Scratch {
    fn new(p: usize, k: usize) -> Self {
        Self {
            scores: vec![0.0; p],
            order: Vec::with_capacity(p),
            gram: vec![0.0; k * k],
            rhs: vec![0.0; k],
        }
    }
}

fn knn_into(patch: &[f64], dict: &TemplateDictionary, k: usize, s: &mut Scratch) {
    for (t, score) in s.scores.iter_mut().enumerate() {
        *score = dot(dict.template(t), patch);
    }
    let scores = &s.scores;
    // larger score first, lower index on ties
    let rank = |a: &usize, b: &usize| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b));
    s.order.clear();
    s.order.extend(0..dict.p());
    if k < s.order.len() {
        s.order.select_nth_unstable_by(k - 1, rank);
        s.order.truncate(k);
    }
    s.order.sort_unstable();
}

fn solve_into(
    patch: &[f64],
    basis: &[usize],
    dict: &TemplateDictionary,
    lambda: f64,
    gram: &mut [f64],
    rhs: &mut [f64],
) -> Result<()> {
    let k = basis.len();
    for (i, &a) in basis.iter().enumerate() {
        let ta = dict.template(a);
        rhs[i] = dot(ta, patch);
        for (j, &b) in basis.iter().enumerate().take(i + 1) {
            let g = dot(ta, dict.template(b));
            gram[i * k + j] = g;
            gram[j * k + i] = g;
        }
        gram[i * k + i] += lambda;
    }
    let max_diag = (0..k).map(|i| gram[i * k + i]).fold(0.0f64, f64::max);
    if !cholesky_in_place(gram, k, 1e-12 * max_diag.max(f64::MIN_POSITIVE)) {
        return Err(Error::RankDeficient);
    }
    cholesky_solve(gram, k, rhs);
    Ok(())
}

/// The `k` templates with the largest dot product against `patch`, ties to
/// the lower index, returned in ascending index order.
pub fn knn_select(patch: &[f64], dict: &TemplateDictionary, k: usize) -> Result<Vec<usize>> {
    if patch.len() != dict.template_len() {
        return Err(Error::DimensionMismatch {
            expected: dict.template_len(),
            got: patch.len(),
        });
    }
    if k == 0 || k > dict.p() {
        return Err(Error::InvalidParameter(format!(
            "k = {k} must be in [1, {}]",
            dict.p()
        )));
    }
    let mut s = Scratch::new(dict.p(), k);
    knn_into(patch, dict, k, &mut s);
    Ok(s.order)
}

/// Ridge least squares on the selected basis:
/// `argmin ||x - D c||^2 + lambda ||c||^2`.
pub fn solve_code(
    patch: &[f64],
    basis: &[usize],
    dict: &TemplateDictionary,
    lambda: f64,
) -> Result<Vec<f64>> {
    if patch.len() != dict.template_len() {
        return Err(Error::DimensionMismatch {
            expected: dict.template_len(),
            got: patch.len(),
        });
    }
    if let Some(&bad) = basis.iter().find(|&&i| i >= dict.p()) {
        return Err(Error::InvalidParameter(format!("basis index {bad} out of range")));
    }
    let k = basis.len();
    let mut gram = vec![0.0; k * k];
    let mut rhs = vec![0.0; k];
    solve_into(patch, basis, dict, lambda, &mut gram, &mut rhs)?;
    Ok(rhs)
}

/// Sparse code of one S2 cell: template indices (ascending) and coefficients.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseCode {
    pub indices: Vec<u32>,
    pub coeffs: Vec<f64>,
}

impl SparseCode {
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices
            .iter()
            .zip(&self.coeffs)
            .map(|(&i, &c)| (i as usize, c))
    }

    pub fn to_dense(&self, p: usize) -> Vec<f64> {
        let mut out = vec![0.0; p];
        for (i, c) in self.iter() {
            out[i] = c;
        }
        out
    }
}

/// Row-major grid of sparse codes, `(Hc - 3) x (Wc - 3)` for an `Hc x Wc` stack.
#[derive(Debug, Clone, PartialEq)]
pub struct S2CodeMap {
    pub grid_h: usize,
    pub grid_w: usize,
    pub p: usize,
    pub cells: Vec<SparseCode>,
}

impl S2CodeMap {
    pub fn cell(&self, row: usize, col: usize) -> &SparseCode {
        &self.cells[row * self.grid_w + col]
    }
}

/// Encodes the conditioned window of one cell.
fn encode_cell(
    patch: &mut [f64],
    dict: &TemplateDictionary,
    params: &LlcParams,
    s: &mut Scratch,
) -> Result<SparseCode> {
    params.conditioning.apply(patch)?;
    knn_into(patch, dict, params.k, s);
    solve_into(patch, &s.order, dict, params.lambda, &mut s.gram, &mut s.rhs)?;
    let mut code = SparseCode::default();
    for (&t, &c) in s.order.iter().zip(&s.rhs) {
        if c != 0.0 {
            code.indices.push(t as u32);
            code.coeffs.push(c);
        }
    }
    Ok(code)
}

/// S2 layer over every 4x4 window of a C1 stack.
pub fn s2_encode(
    stack: &C1Stack,
    dict: &TemplateDictionary,
    params: &LlcParams,
) -> Result<S2CodeMap> {
    params.validate(dict.p())?;
    let (gh, gw) = grid_dims(stack).ok_or(Error::NoTemplateWindow(TEMPLATE_SIDE))?;
    let len = stack.n_planes() * TEMPLATE_SIDE * TEMPLATE_SIDE;
    if len != dict.template_len() {
        return Err(Error::DimensionMismatch {
            expected: dict.template_len(),
            got: len,
        });
    }
    let rows = (0..gh)
        .into_par_iter()
        .map(|row| -> Result<Vec<SparseCode>> {
            let mut s = Scratch::new(dict.p(), params.k);
            let mut patch = vec![0.0; len];
            (0..gw)
                .map(|col| {
                    gather_window(stack, row, col, &mut patch);
                    encode_cell(&mut patch, dict, params, &mut s)
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(S2CodeMap {
        grid_h: gh,
        grid_w: gw,
        p: dict.p(),
        cells: rows.into_iter().flatten().collect(),
    })
}
