//! S1 kernels: oriented first-derivative-of-Gaussian edges and a
//! center-surround spot detector, all zero-mean and unit-norm.
//!
//! Orientation convention: angles are measured counter-clockwise with the
//! y axis pointing up (row 0 is the top). A filter of orientation `theta`
//! differentiates along the normal `(-sin theta, cos theta)`, so the 0 degree
//! filter responds to horizontal edges and the 90 degree filter to vertical
//! ones.

use std::fs;
use std::io::Write;
use std::path::Path;

use image::{GrayImage, Luma};

use crate::conditioning::full_whiten_unit_in_place;
use crate::{Error, Result};

pub const DEFAULT_SIZE: usize = 11;

/// Default Gaussian width for a kernel side.
pub fn default_sigma(size: usize) -> f64 {
    size as f64 / 4.0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FilterKind {
    Edge { orientation_deg: f64 },
    Spot,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Filter {
    pub size: usize,
    /// Row-major `size * size` weights.
    pub weights: Vec<f64>,
    pub kind: FilterKind,
}

impl Filter {
    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.size + col]
    }

    pub fn label(&self) -> String {
        match self.kind {
            FilterKind::Edge { orientation_deg } => format!("edge_{orientation_deg:05.1}"),
            FilterKind::Spot => "spot".to_owned(),
        }
    }
}

fn check_geometry(size: usize, sigma: f64) -> Result<()> {
    if size < 3 || size % 2 == 0 {
        return Err(Error::InvalidParameter(format!(
            "kernel size {size} must be odd and >= 3"
        )));
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParameter(format!("sigma {sigma} must be > 0")));
    }
    Ok(())
}

/// Samples `f(dx, dy)` at integer offsets (y up), then whitens and normalizes.
fn sample_kernel(
    size: usize,
    sigma: f64,
    kind: FilterKind,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Filter> {
    let c = (size / 2) as f64;
    let mut weights = Vec::with_capacity(size * size);
    let mut off_center_support = false;
    for row in 0..size {
        for col in 0..size {
            let dx = col as f64 - c;
            let dy = c - row as f64;
            let w = f(dx, dy);
            if !w.is_finite() {
                return Err(Error::DegenerateKernel { sigma });
            }
            if (dx != 0.0 || dy != 0.0) && w != 0.0 {
                off_center_support = true;
            }
            weights.push(w);
        }
    }
    if !off_center_support {
        return Err(Error::DegenerateKernel { sigma });
    }
    full_whiten_unit_in_place(&mut weights);
    if weights.iter().all(|&w| w == 0.0) {
        return Err(Error::DegenerateKernel { sigma });
    }
    Ok(Filter {
        size,
        weights,
        kind,
    })
}

pub fn make_edge_filter(orientation_deg: f64, size: usize, sigma: f64) -> Result<Filter> {
    check_geometry(size, sigma)?;
    if !(0.0..180.0).contains(&orientation_deg) {
        return Err(Error::InvalidParameter(format!(
            "orientation {orientation_deg} outside [0, 180)"
        )));
    }
    let theta = orientation_deg.to_radians();
    let (nx, ny) = (-theta.sin(), theta.cos());
    let s2 = sigma * sigma;
    sample_kernel(size, sigma, FilterKind::Edge { orientation_deg }, |dx, dy| {
        let u = dx * nx + dy * ny;
        -(u / s2) * (-(dx * dx + dy * dy) / (2.0 * s2)).exp()
    })
}

/// Negated Laplacian of Gaussian: positive centre, negative surround.
pub fn make_spot_filter(size: usize, sigma: f64) -> Result<Filter> {
    check_geometry(size, sigma)?;
    let s2 = sigma * sigma;
    sample_kernel(size, sigma, FilterKind::Spot, |dx, dy| {
        let r2 = dx * dx + dy * dy;
        (2.0 * s2 - r2) / (s2 * s2) * (-r2 / (2.0 * s2)).exp()
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    pub filters: Vec<Filter>,
    pub n_orientations: usize,
    pub has_spot: bool,
}

impl FilterBank {
    pub fn len(&self) -> usize {
        self.filters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filters.is_empty()
    }

    pub fn kernel_size(&self) -> usize {
        self.filters.first().map_or(0, |f| f.size)
    }

    /// Writes `<label>.csv` and `<label>.png` for every filter.
    pub fn dump(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (i, f) in self.filters.iter().enumerate() {
            let stem = format!("{i:02}_{}", f.label());
            let mut csv = fs::File::create(dir.join(format!("{stem}.csv")))?;
            for row in f.weights.chunks(f.size) {
                let line: Vec<String> = row.iter().map(|w| format!("{w:.9e}")).collect();
                writeln!(csv, "{}", line.join(","))?;
            }
            let peak = f.weights.iter().fold(0.0f64, |m, w| m.max(w.abs()));
            let img = GrayImage::from_fn(f.size as u32, f.size as u32, |x, y| {
                let w = f.at(y as usize, x as usize) / peak.max(f64::MIN_POSITIVE);
                Luma([((w * 0.5 + 0.5) * 255.0).round().clamp(0.0, 255.0) as u8])
            });
            img.save(dir.join(format!("{stem}.png")))?;
        }
        Ok(())
    }
}

/// Edge filters at `i * 180 / n_orientations` degrees, then the spot filter if requested.
pub fn build_filter_bank(
    n_orientations: usize,
    include_spot: bool,
    size: usize,
    sigma: f64,
) -> Result<FilterBank> {
    if n_orientations == 0 && !include_spot {
        return Err(Error::InvalidParameter("empty filter bank".into()));
    }
    let mut filters = (0..n_orientations)
        .map(|i| make_edge_filter(i as f64 * 180.0 / n_orientations as f64, size, sigma))
        .collect::<Result<Vec<_>>>()?;
    if include_spot {
        filters.push(make_spot_filter(size, sigma)?);
    }
    Ok(FilterBank {
        filters,
        n_orientations,
        has_spot: include_spot,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn stats(f: &Filter) -> (f64, f64) {
        let n = f.weights.len() as f64;
        let mean = f.weights.iter().sum::<f64>() / n;
        let norm = f.weights.iter().map(|w| w * w).sum::<f64>().sqrt();
        (mean, norm)
    }

    /// Counter-clockwise rotation (y up) by bilinear resampling.
    fn rotate_by_resampling(f: &Filter, deg: f64) -> Vec<f64> {
        let n = f.size;
        let c = (n / 2) as f64;
        let (s, co) = deg.to_radians().sin_cos();
        let sample = |row: f64, col: f64| -> f64 {
            let (r0, c0) = (row.floor(), col.floor());
            let (tr, tc) = (row - r0, col - c0);
            let get = |r: f64, cc: f64| -> f64 {
                if r < 0.0 || cc < 0.0 || r > (n - 1) as f64 || cc > (n - 1) as f64 {
                    0.0
                } else {
                    f.at(r as usize, cc as usize)
                }
            };
            let top = get(r0, c0) * (1.0 - tc) + get(r0, c0 + 1.0) * tc;
            let bot = get(r0 + 1.0, c0) * (1.0 - tc) + get(r0 + 1.0, c0 + 1.0) * tc;
            top * (1.0 - tr) + bot * tr
        };
        let mut out = Vec::with_capacity(n * n);
        for row in 0..n {
            for col in 0..n {
                let (dx, dy) = (col as f64 - c, c - row as f64);
                // inverse rotation of the destination offset
                let sx = co * dx + s * dy;
                let sy = -s * dx + co * dy;
                out.push(sample(c - sy, sx + c));
            }
        }
        out
    }

    #[test]
    fn zero_degree_is_antisymmetric_about_horizontal_midline() {
        let f = make_edge_filter(0.0, 11, 2.75).unwrap();
        for r in 0..11 {
            for c in 0..11 {
                assert!((f.at(r, c) + f.at(10 - r, c)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn ninety_degree_matches_resampled_rotation() {
        for (size, sigma) in [(11, 2.75), (7, 1.3), (9, 3.0)] {
            let f0 = make_edge_filter(0.0, size, sigma).unwrap();
            let f90 = make_edge_filter(90.0, size, sigma).unwrap();
            let rotated = rotate_by_resampling(&f0, 90.0);
            for (a, b) in f90.weights.iter().zip(&rotated) {
                assert!((a - b).abs() < 1e-6, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn spot_is_rotation_invariant() {
        let f = make_spot_filter(11, 2.75).unwrap();
        let n = f.size;
        for r in 0..n {
            for c in 0..n {
                // 90 degree rotation: (r, c) -> (c, n-1-r)
                assert!((f.at(r, c) - f.at(c, n - 1 - r)).abs() < 1e-9);
            }
        }
        let (mean, norm) = stats(&f);
        assert!(mean.abs() < 1e-9 && (norm - 1.0).abs() < 1e-9);
        assert!(f.at(5, 5) > 0.0 && f.at(0, 5) < 0.0);
    }

    #[test]
    fn degenerate_sigma_errors() {
        assert!(matches!(
            make_edge_filter(30.0, 11, 1e-3),
            Err(Error::DegenerateKernel { .. })
        ));
        assert!(matches!(
            make_spot_filter(11, 1e-3),
            Err(Error::DegenerateKernel { .. })
        ));
        assert!(make_edge_filter(0.0, 10, 2.0).is_err());
        assert!(make_edge_filter(180.0, 11, 2.0).is_err());
        assert!(make_spot_filter(1, 2.0).is_err());
    }

    #[test]
    fn bank_layouts() {
        let b = build_filter_bank(12, false, 11, 2.75).unwrap();
        assert_eq!(b.len(), 12);
        for (i, f) in b.filters.iter().enumerate() {
            assert_eq!(
                f.kind,
                FilterKind::Edge {
                    orientation_deg: 15.0 * i as f64
                }
            );
        }
        let b = build_filter_bank(4, true, 11, 2.75).unwrap();
        assert_eq!(b.len(), 5);
        assert_eq!(b.filters.last().unwrap().kind, FilterKind::Spot);
        let b8 = build_filter_bank(8, true, 11, 2.75).unwrap();
        assert_eq!(b8.len(), 9);
        assert_eq!(b8, build_filter_bank(8, true, 11, 2.75).unwrap());
    }

    fn response(f: &Filter, img: impl Fn(usize, usize) -> f64) -> f64 {
        let mut acc = 0.0;
        for r in 0..f.size {
            for c in 0..f.size {
                acc += f.at(r, c) * img(r, c);
            }
        }
        acc
    }

    #[test]
    fn orientation_selectivity_on_horizontal_step() {
        let f0 = make_edge_filter(0.0, 11, 2.75).unwrap();
        let f90 = make_edge_filter(90.0, 11, 2.75).unwrap();
        let step = |r: usize, _c: usize| if r < 5 { 1.0 } else { 0.0 };
        assert!(response(&f0, step).abs() > response(&f90, step).abs() + 0.1);
    }

    #[test]
    fn dump_writes_files() {
        let dir = tempfile::tempdir().unwrap();
        let b = build_filter_bank(4, true, 11, 2.75).unwrap();
        b.dump(dir.path()).unwrap();
        assert!(dir.path().join("04_spot.png").exists());
        let csv = fs::read_to_string(dir.path().join("00_edge_000.0.csv")).unwrap();
        assert_eq!(csv.lines().count(), 11);
    }

    proptest! {
        #[test]
        fn every_filter_is_whitened_and_normalized(
            theta in 0.0f64..180.0, half in 1usize..8, sigma in 0.5f64..6.0,
        ) {
            let size = 2 * half + 1;
            for f in [make_edge_filter(theta, size, sigma).unwrap(), make_spot_filter(size, sigma).unwrap()] {
                let (mean, norm) = stats(&f);
                prop_assert!(mean.abs() < 1e-9);
                prop_assert!((norm - 1.0).abs() < 1e-9);
                let flat = response(&f, |_, _| 0.731);
                prop_assert!(flat.abs() < 1e-9);
            }
        }
    }
}
