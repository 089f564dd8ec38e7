//! C2: spatial-pyramid max pooling of S2 codes.
//!
//! Pyramid A pools the signed maximum over {1x1, 3x3} regions (10 values
//! per template). Pyramid B pools {1x1, 2x2, 4x4} regions (21 regions) into
//! a positive and a negative rectified bin each (42 values). The full layout
//! is therefore 52 features per template, template-major:
//! `[A: 10][B positive: 21][B negative: 21]`, regions coarse to fine and
//! row-major within a level.

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::llc::S2CodeMap;

pub const PYRAMID_A_LEVELS: [usize; 2] = [1, 3];
pub const PYRAMID_B_LEVELS: [usize; 3] = [1, 2, 4];
pub const PYRAMID_A_REGIONS: usize = 10;
pub const PYRAMID_B_REGIONS: usize = 21;
pub const FULL_FEATURES_PER_TEMPLATE: usize = PYRAMID_A_REGIONS + 2 * PYRAMID_B_REGIONS;

/// Half-open cell range `[row0, row1) x [col0, col1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Region {
    pub row0: usize,
    pub row1: usize,
    pub col0: usize,
    pub col1: usize,
}

impl Region {
    pub fn is_empty(&self) -> bool {
        self.row0 == self.row1 || self.col0 == self.col1
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        (self.row0..self.row1).contains(&row) && (self.col0..self.col1).contains(&col)
    }
}

/// `round(i * dim / n)` for `i = 0..=n`, halves rounded up.
fn boundaries(dim: usize, n: usize) -> Vec<usize> {
    (0..=n).map(|i| (2 * i * dim + n) / (2 * n)).collect()
}

/// Splits a grid into `n x n` rectangles (row-major). Regions tile the grid
/// and may be empty when a side is shorter than `n`.
pub fn partition_regions(grid_h: usize, grid_w: usize, n: usize) -> Vec<Region> {
    assert!(n >= 1, "pyramid level must be >= 1");
    let rows = boundaries(grid_h, n);
    let cols = boundaries(grid_w, n);
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            out.push(Region {
                row0: rows[i],
                row1: rows[i + 1],
                col0: cols[j],
                col1: cols[j + 1],
            });
        }
    }
    out
}

/// For each cell coordinate, the index of the level's region band holding it.
fn band_of(dim: usize, n: usize) -> Vec<usize> {
    let b = boundaries(dim, n);
    let mut out = vec![0; dim];
    for i in 0..n {
        out[b[i]..b[i + 1]].iter_mut().for_each(|v| *v = i);
    }
    out
}

/// Region lookup for a set of levels on one grid.
struct RegionIndex {
    n_regions: usize,
    /// `(level offset, n, row band, col band)` per level
    levels: Vec<(usize, usize, Vec<usize>, Vec<usize>)>,
}

impl RegionIndex {
    fn new(grid_h: usize, grid_w: usize, levels: &[usize]) -> Self {
        let mut offset = 0;
        let levels = levels
            .iter()
            .map(|&n| {
                let entry = (offset, n, band_of(grid_h, n), band_of(grid_w, n));
                offset += n * n;
                entry
            })
            .collect();
        Self {
            n_regions: offset,
            levels,
        }
    }

    fn regions_of(&self, row: usize, col: usize) -> impl Iterator<Item = usize> + '_ {
        self.levels
            .iter()
            .map(move |(off, n, rb, cb)| off + rb[row] * n + cb[col])
    }
}

/// Signed max per (template, region); regions where the template never
/// appears read 0. Output is template-major.
fn signed_max(codes: &S2CodeMap, levels: &[usize]) -> Vec<f64> {
    let idx = RegionIndex::new(codes.grid_h, codes.grid_w, levels);
    let r = idx.n_regions;
    let mut out = vec![f64::NEG_INFINITY; codes.p * r];
    for row in 0..codes.grid_h {
        for col in 0..codes.grid_w {
            let cell = codes.cell(row, col);
            for region in idx.regions_of(row, col) {
                for (t, c) in cell.iter() {
                    let slot = &mut out[t * r + region];
                    if c > *slot {
                        *slot = c;
                    }
                }
            }
        }
    }
    out.iter_mut()
        .filter(|v| **v == f64::NEG_INFINITY)
        .for_each(|v| *v = 0.0);
    out
}

/// Rectified positive and negative maxima per (template, region).
fn polarity_max(codes: &S2CodeMap, levels: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let idx = RegionIndex::new(codes.grid_h, codes.grid_w, levels);
    let r = idx.n_regions;
    let mut pos = vec![0.0; codes.p * r];
    let mut neg = vec![0.0; codes.p * r];
    for row in 0..codes.grid_h {
        for col in 0..codes.grid_w {
            let cell = codes.cell(row, col);
            for region in idx.regions_of(row, col) {
                for (t, c) in cell.iter() {
                    let i = t * r + region;
                    if c > pos[i] {
                        pos[i] = c;
                    }
                    if -c > neg[i] {
                        neg[i] = -c;
                    }
                }
            }
        }
    }
    (pos, neg)
}

/// Pyramid A: `10 * p` values, template-major.
pub fn pool_pyramid_a(codes: &S2CodeMap) -> Vec<f64> {
    signed_max(codes, &PYRAMID_A_LEVELS)
}

/// Pyramid B: `42 * p` values, per template 21 positive then 21 negative bins.
pub fn pool_pyramid_b(codes: &S2CodeMap) -> Vec<f64> {
    let (pos, neg) = polarity_max(codes, &PYRAMID_B_LEVELS);
    interleave_blocks(codes.p, &[(&pos, PYRAMID_B_REGIONS), (&neg, PYRAMID_B_REGIONS)])
}

fn interleave_blocks(p: usize, blocks: &[(&[f64], usize)]) -> Vec<f64> {
    let per: usize = blocks.iter().map(|b| b.1).sum();
    let mut out = Vec::with_capacity(p * per);
    for t in 0..p {
        for &(data, width) in blocks {
            out.extend_from_slice(&data[t * width..(t + 1) * width]);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpmMode {
    /// Both pyramids, 52 features per template.
    #[default]
    Full,
    /// Single 1x1 signed max per template.
    GlobalMax,
    /// The {1, 2, 4} pyramid alone.
    Spm3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SpmLayout {
    pub mode: SpmMode,
    /// In [`SpmMode::Spm3`], emit rectified polarity bins (42 per template)
    /// instead of the signed max (21 per template).
    pub spm3_polarity: bool,
}

impl SpmLayout {
    pub fn new(mode: SpmMode) -> Self {
        Self {
            mode,
            spm3_polarity: false,
        }
    }
}

impl SpmLayout {
    pub fn features_per_template(&self) -> usize {
        match (self.mode, self.spm3_polarity) {
            (SpmMode::Full, _) => FULL_FEATURES_PER_TEMPLATE,
            (SpmMode::GlobalMax, _) => 1,
            (SpmMode::Spm3, false) => PYRAMID_B_REGIONS,
            (SpmMode::Spm3, true) => 2 * PYRAMID_B_REGIONS,
        }
    }

    pub fn feature_len(&self, p: usize) -> usize {
        self.features_per_template() * p
    }
}

/// C2 descriptor fed to the classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(pub Vec<f64>);

impl Deref for FeatureVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

pub fn c2_features(codes: &S2CodeMap, layout: &SpmLayout) -> FeatureVector {
    let p = codes.p;
    let values = match (layout.mode, layout.spm3_polarity) {
        (SpmMode::Full, _) => {
            let a = signed_max(codes, &PYRAMID_A_LEVELS);
            let (pos, neg) = polarity_max(codes, &PYRAMID_B_LEVELS);
            interleave_blocks(
                p,
                &[
                    (&a, PYRAMID_A_REGIONS),
                    (&pos, PYRAMID_B_REGIONS),
                    (&neg, PYRAMID_B_REGIONS),
                ],
            )
        }
        (SpmMode::GlobalMax, _) => signed_max(codes, &[1]),
        (SpmMode::Spm3, false) => signed_max(codes, &PYRAMID_B_LEVELS),
        (SpmMode::Spm3, true) => pool_pyramid_b(codes),
    };
    debug_assert_eq!(values.len(), layout.feature_len(p));
    FeatureVector(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llc::SparseCode;

    fn map_with(grid_h: usize, grid_w: usize, p: usize, cells: Vec<(usize, usize, Vec<(u32, f64)>)>) -> S2CodeMap {
        let mut m = S2CodeMap {
            grid_h,
            grid_w,
            p,
            cells: vec![SparseCode::default(); grid_h * grid_w],
        };
        for (r, c, entries) in cells {
            let cell = &mut m.cells[r * grid_w + c];
            for (i, v) in entries {
                cell.indices.push(i);
                cell.coeffs.push(v);
            }
        }
        m
    }

    #[test]
    fn partitions() {
        let r = partition_regions(8, 8, 2);
        assert_eq!(r.len(), 4);
        assert!(r.iter().all(|g| g.row1 - g.row0 == 4 && g.col1 - g.col0 == 4));

        let r = partition_regions(5, 5, 4);
        assert_eq!(boundaries(5, 4), vec![0, 1, 3, 4, 5]);
        let heights: Vec<usize> = (0..4).map(|i| r[i * 4].row1 - r[i * 4].row0).collect();
        assert_eq!(heights, vec![1, 2, 1, 1]);

        let r = partition_regions(7, 3, 1);
        assert_eq!(r, vec![Region { row0: 0, row1: 7, col0: 0, col1: 3 }]);

        let r = partition_regions(1, 2, 4);
        assert_eq!(r.iter().filter(|g| !g.is_empty()).count(), 2);
    }

    #[test]
    fn single_support_propagates() {
        let m = map_with(1, 1, 4, vec![(0, 0, vec![(2, 0.5)])]);
        let a = pool_pyramid_a(&m);
        assert_eq!(a.len(), 40);
        for t in 0..4 {
            for region in 0..10 {
                let region_has_cell = region == 0 || partition_regions(1, 1, 3)[region - 1].contains(0, 0);
                let expect = if t == 2 && region_has_cell { 0.5 } else { 0.0 };
                assert_eq!(a[t * 10 + region], expect);
            }
        }
        let zero = map_with(3, 3, 2, vec![]);
        assert!(c2_features(&zero, &SpmLayout::default()).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn polarity_separation() {
        let m = map_with(1, 1, 1, vec![(0, 0, vec![(0, -0.7)])]);
        let b = pool_pyramid_b(&m);
        let (pos, neg) = b.split_at(21);
        assert!(pos.iter().all(|&v| v == 0.0));
        let regions: Vec<Region> = PYRAMID_B_LEVELS
            .iter()
            .flat_map(|&n| partition_regions(1, 1, n))
            .collect();
        for (i, &v) in neg.iter().enumerate() {
            let covering = regions[i].contains(0, 0);
            assert_eq!(v, if covering { 0.7 } else { 0.0 }, "bin {i}");
        }

        let m = map_with(1, 2, 2, vec![(0, 0, vec![(1, 0.3)]), (0, 1, vec![(1, -0.9)])]);
        let b = pool_pyramid_b(&m);
        assert_eq!(b[42], 0.3);
        assert_eq!(b[42 + 21], 0.9);
    }

    #[test]
    fn layout_lengths() {
        let m = map_with(2, 3, 1000, vec![]);
        assert_eq!(c2_features(&m, &SpmLayout::default()).len(), 52_000);
        let g = SpmLayout::new(SpmMode::GlobalMax);
        assert_eq!(c2_features(&m, &g).len(), 1000);
        let mut s = SpmLayout::new(SpmMode::Spm3);
        assert_eq!(c2_features(&m, &s).len(), 21_000);
        s.spm3_polarity = true;
        assert_eq!(c2_features(&m, &s).len(), 42_000);
        assert_eq!(SpmLayout::default().feature_len(3000), 156_000);
    }

    #[test]
    fn global_max_is_signed() {
        let m = map_with(2, 2, 2, vec![(0, 0, vec![(0, -0.4)]), (1, 1, vec![(0, -0.2), (1, 0.1)])]);
        let f = c2_features(&m, &SpmLayout::new(SpmMode::GlobalMax));
        assert_eq!(f.0, vec![-0.2, 0.1]);
    }
}
