//! The first S-C stack.
//!
//! S1 runs a valid convolution of every opponent plane with every filter.
//! Each window is conditioned independently per channel before the dot
//! product, and the S1 value is the mean of the per-channel magnitudes.
//! C1 max-pools each S1 plane with a square window and stride.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::binfmt::{expect_magic, read_f32s, read_u32, write_f32s, write_u32};
use crate::conditioning::PatchConditioning;
use crate::filterbank::FilterBank;
use crate::linalg::dot;
use crate::preprocess::{OpponentImage, INTENSITY};
use crate::{Error, Result};

pub const C1_WINDOW: usize = 12;
pub const C1_STRIDE: usize = 6;

const C1_MAGIC: &[u8; 4] = b"HC1S";
const C1_VERSION: u32 = 1;

/// A row-major float plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height, "plane size mismatch");
        Self {
            width,
            height,
            data,
        }
    }

    pub fn filled(width: usize, height: usize, v: f64) -> Self {
        Self::new(width, height, vec![v; width * height])
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }
}

/// One plane per filter, each `(H - size + 1) x (W - size + 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct S1Maps {
    pub planes: Vec<Plane>,
}

/// Pooled S1 planes.
#[derive(Debug, Clone, PartialEq)]
pub struct C1Stack {
    pub planes: Vec<Plane>,
    pub pool_window: usize,
    pub pool_stride: usize,
}

impl C1Stack {
    pub fn n_planes(&self) -> usize {
        self.planes.len()
    }

    pub fn height(&self) -> usize {
        self.planes.first().map_or(0, |p| p.height)
    }

    pub fn width(&self) -> usize {
        self.planes.first().map_or(0, |p| p.width)
    }

    /// Rounds every value through `f32`, the precision of the on-disk cache.
    pub fn quantize_f32(&mut self) {
        for p in &mut self.planes {
            for v in &mut p.data {
                *v = *v as f32 as f64;
            }
        }
    }

    /// Header `magic, version, n_planes, H, W` then planes row-major as f32 LE.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(C1_MAGIC)?;
        write_u32(&mut w, C1_VERSION)?;
        write_u32(&mut w, self.n_planes() as u32)?;
        write_u32(&mut w, self.height() as u32)?;
        write_u32(&mut w, self.width() as u32)?;
        for p in &self.planes {
            write_f32s(&mut w, p.data.iter().copied())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path, pool_window: usize, pool_stride: usize) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        expect_magic(&mut r, C1_MAGIC, C1_VERSION)?;
        let n = read_u32(&mut r)? as usize;
        let h = read_u32(&mut r)? as usize;
        let w = read_u32(&mut r)? as usize;
        let planes = (0..n)
            .map(|_| Ok(Plane::new(w, h, read_f32s(&mut r, w * h)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            planes,
            pool_window,
            pool_stride,
        })
    }
}

/// S1 layer. Output is non-negative; greyscale images use the intensity
/// magnitude alone, colour images average the three channel magnitudes.
pub fn s1_convolve(
    img: &OpponentImage,
    bank: &FilterBank,
    cond: &PatchConditioning,
) -> Result<S1Maps> {
    let k = bank.kernel_size();
    let (w, h) = (img.width, img.height);
    if w < k || h < k || k == 0 {
        return Err(Error::ImageTooSmall {
            width: w,
            height: h,
            kernel: k,
        });
    }
    let (ow, oh) = (w - k + 1, h - k + 1);
    let nf = bank.len();
    let channels: &[usize] = if img.greyscale {
        &[INTENSITY]
    } else {
        &[0, 1, 2]
    };
    let inv_channels = 1.0 / channels.len() as f64;

    // position-major, filter-minor
    let mut vals = vec![0.0; oh * ow * nf];
    vals.par_chunks_mut(ow * nf)
        .enumerate()
        .try_for_each(|(y, row_out)| -> Result<()> {
            let mut patch = vec![0.0; k * k];
            for x in 0..ow {
                let out = &mut row_out[x * nf..(x + 1) * nf];
                for &ch in channels {
                    let plane = &img.planes[ch];
                    for r in 0..k {
                        let src = (y + r) * w + x;
                        patch[r * k..(r + 1) * k].copy_from_slice(&plane[src..src + k]);
                    }
                    cond.apply(&mut patch)?;
                    for (o, f) in out.iter_mut().zip(&bank.filters) {
                        *o += dot(&f.weights, &patch).abs();
                    }
                }
                if channels.len() > 1 {
                    out.iter_mut().for_each(|v| *v *= inv_channels);
                }
            }
            Ok(())
        })?;

    let planes = (0..nf)
        .map(|f| Plane::new(ow, oh, vals.iter().skip(f).step_by(nf).copied().collect()))
        .collect();
    Ok(S1Maps { planes })
}

fn pooled_len(n: usize, window: usize, stride: usize) -> usize {
    (n - window) / stride + 1
}

fn pool_plane(p: &Plane, window: usize, stride: usize) -> Plane {
    let ow = pooled_len(p.width, window, stride);
    let oh = pooled_len(p.height, window, stride);
    // horizontal pass then vertical pass; max is associative so this is exact
    let mut horiz = vec![f64::NEG_INFINITY; p.height * ow];
    for r in 0..p.height {
        let row = &p.data[r * p.width..(r + 1) * p.width];
        for j in 0..ow {
            horiz[r * ow + j] = row[j * stride..j * stride + window]
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max);
        }
    }
    let mut out = vec![f64::NEG_INFINITY; oh * ow];
    for i in 0..oh {
        for r in i * stride..i * stride + window {
            let src = &horiz[r * ow..(r + 1) * ow];
            for (o, &v) in out[i * ow..(i + 1) * ow].iter_mut().zip(src) {
                if v > *o {
                    *o = v;
                }
            }
        }
    }
    Plane::new(ow, oh, out)
}

/// C1 layer: per-plane max over `window x window` blocks at offsets
/// `(i * stride, j * stride)`; incomplete trailing windows are dropped.
pub fn c1_pool(s1: &S1Maps, window: usize, stride: usize) -> Result<C1Stack> {
    if window == 0 || stride == 0 {
        return Err(Error::InvalidParameter(
            "C1 window and stride must be >= 1".into(),
        ));
    }
    if let Some(p) = s1
        .planes
        .iter()
        .find(|p| p.width < window || p.height < window)
    {
        return Err(Error::S1TooSmall {
            width: p.width,
            height: p.height,
            window,
        });
    }
    Ok(C1Stack {
        planes: s1
            .planes
            .iter()
            .map(|p| pool_plane(p, window, stride))
            .collect(),
        pool_window: window,
        pool_stride: stride,
    })
}
