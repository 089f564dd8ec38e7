//! Dataset loading and the raster-level preprocessing that feeds S1.

use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;

use crate::{Error, Result};

/// Smallest accepted target for [`resize_max_side`].
pub const MIN_MAX_SIDE: usize = 32;

#[derive(Debug, Clone)]
pub struct LabeledImage {
    pub id: String,
    pub raster: RgbImage,
}

/// A file that was present in a class folder but could not be decoded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkipRecord {
    pub path: PathBuf,
    pub reason: String,
}

/// Images grouped by class. `images[c]` belongs to `classes[c]`.
#[derive(Debug, Clone, Default)]
pub struct LabeledImageSet {
    pub classes: Vec<String>,
    pub images: Vec<Vec<LabeledImage>>,
    pub skipped: Vec<SkipRecord>,
}

impl LabeledImageSet {
    pub fn n_images(&self) -> usize {
        self.images.iter().map(Vec::len).sum()
    }

    /// Writes every image as `<root>/<class>/<id>` (PNG unless the id says otherwise).
    pub fn save(&self, root: &Path) -> Result<()> {
        for (class, images) in self.classes.iter().zip(&self.images) {
            let dir = root.join(class);
            fs::create_dir_all(&dir)?;
            for img in images {
                img.raster.save(dir.join(&img.id))?;
            }
        }
        Ok(())
    }
}

/// Loads `<root>/<class>/<image>`; classes and files are visited in sorted order.
///
/// Files that fail to decode are skipped and listed in
/// [`LabeledImageSet::skipped`]. A class folder that ends up with no images
/// is an error.
pub fn load_dataset(root: &Path) -> Result<LabeledImageSet> {
    if !root.is_dir() {
        return Err(Error::MissingDirectory(root.to_path_buf()));
    }
    let mut class_dirs: Vec<(String, PathBuf)> = fs::read_dir(root)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .filter_map(|e| {
            let name = e.file_name().to_str()?.to_owned();
            (!name.starts_with('.')).then(|| (name, e.path()))
        })
        .collect();
    class_dirs.sort();
    if class_dirs.is_empty() {
        return Err(Error::NoClasses(root.to_path_buf()));
    }

    let mut set = LabeledImageSet::default();
    for (class, dir) in class_dirs {
        let mut files: Vec<(String, PathBuf)> = fs::read_dir(&dir)?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_file())
            .filter_map(|e| {
                let name = e.file_name().to_str()?.to_owned();
                (!name.starts_with('.')).then(|| (name, e.path()))
            })
            .collect();
        files.sort();

        let mut images = Vec::with_capacity(files.len());
        for (id, path) in files {
            match image::open(&path) {
                Ok(img) => images.push(LabeledImage {
                    id,
                    raster: img.to_rgb8(),
                }),
                Err(e) => {
                    log::warn!("skipping {}: {e}", path.display());
                    set.skipped.push(SkipRecord {
                        path,
                        reason: e.to_string(),
                    });
                }
            }
        }
        if images.is_empty() {
            return Err(Error::EmptyClass(class));
        }
        set.classes.push(class);
        set.images.push(images);
    }
    Ok(set)
}

/// Floating-point RGB raster with channels on [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct RgbRaster {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f64; 3]>,
}

impl RgbRaster {
    pub fn new(width: usize, height: usize, data: Vec<[f64; 3]>) -> Self {
        assert_eq!(data.len(), width * height, "raster size mismatch");
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_rgb8(img: &RgbImage) -> Self {
        let data = img
            .pixels()
            .map(|p| [p[0] as f64 / 255.0, p[1] as f64 / 255.0, p[2] as f64 / 255.0])
            .collect();
        Self::new(img.width() as usize, img.height() as usize, data)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.data[y * self.width + x]
    }
}

/// Shrinks the image so that its longer side is `max_side`, using bilinear
/// sampling at pixel centres. Images already within the limit are returned
/// unchanged; nothing is ever upscaled.
pub fn resize_max_side(image: &RgbRaster, max_side: usize) -> Result<RgbRaster> {
    if max_side < MIN_MAX_SIDE {
        return Err(Error::InvalidParameter(format!(
            "max_side {max_side} below minimum {MIN_MAX_SIDE}"
        )));
    }
    let (w, h) = (image.width, image.height);
    let longest = w.max(h);
    if longest <= max_side {
        return Ok(image.clone());
    }
    let scale = max_side as f64 / longest as f64;
    let (nw, nh) = if w >= h {
        (max_side, ((h as f64 * scale).round() as usize).max(1))
    } else {
        (((w as f64 * scale).round() as usize).max(1), max_side)
    };

    let sx = w as f64 / nw as f64;
    let sy = h as f64 / nh as f64;
    let mut data = Vec::with_capacity(nw * nh);
    for j in 0..nh {
        let fy = ((j as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let ty = fy - y0 as f64;
        for i in 0..nw {
            let fx = ((i as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let tx = fx - x0 as f64;
            let (a, b, c, d) = (
                image.get(x0, y0),
                image.get(x1, y0),
                image.get(x0, y1),
                image.get(x1, y1),
            );
            let mut px = [0.0; 3];
            for ch in 0..3 {
                let top = a[ch] + (b[ch] - a[ch]) * tx;
                let bottom = c[ch] + (d[ch] - c[ch]) * tx;
                px[ch] = top + (bottom - top) * ty;
            }
            data.push(px);
        }
    }
    Ok(RgbRaster::new(nw, nh, data))
}

/// Stretches the per-pixel value `V = max(R, G, B)` affinely onto [0, 1] and
/// rescales each pixel's RGB by `V'/V`, which keeps channel ratios intact.
/// A raster whose `V` is constant is returned as is.
pub fn contrast_stretch(image: &RgbRaster) -> RgbRaster {
    let value = |p: &[f64; 3]| p[0].max(p[1]).max(p[2]);
    let (lo, hi) = image
        .data
        .iter()
        .map(value)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
    if image.data.is_empty() || hi <= lo {
        return image.clone();
    }
    let range = hi - lo;
    let data = image
        .data
        .iter()
        .map(|p| {
            let v = value(p);
            if v <= 0.0 {
                return [0.0; 3];
            }
            let stretched = (v - lo) / range;
            // ch / v first so the dominant channel lands exactly on `stretched`.
            [
                p[0] / v * stretched,
                p[1] / v * stretched,
                p[2] / v * stretched,
            ]
        })
        .collect();
    RgbRaster::new(image.width, image.height, data)
}

pub const INTENSITY: usize = 0;
pub const RED_GREEN: usize = 1;
pub const YELLOW_BLUE: usize = 2;

/// Intensity, red-green and yellow-blue planes, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct OpponentImage {
    pub width: usize,
    pub height: usize,
    pub planes: [Vec<f64>; 3],
    /// When set, the chromatic planes are all zero and S1 reads only intensity.
    pub greyscale: bool,
}

impl OpponentImage {
    /// Builds an intensity-only image (chromatic planes zero).
    pub fn from_intensity(width: usize, height: usize, intensity: Vec<f64>) -> Self {
        assert_eq!(intensity.len(), width * height);
        let zeros = vec![0.0; width * height];
        Self {
            width,
            height,
            planes: [intensity, zeros.clone(), zeros],
            greyscale: true,
        }
    }
}

/// `I = (R+G+B)/3`, `RG = R-G`, `YB = (R+G)/2 - B`. In greyscale mode the
/// chromatic planes are zeroed.
pub fn to_opponent(image: &RgbRaster, greyscale: bool) -> OpponentImage {
    let n = image.data.len();
    let mut intensity = Vec::with_capacity(n);
    let mut rg = vec![0.0; n];
    let mut yb = vec![0.0; n];
    for (i, &[r, g, b]) in image.data.iter().enumerate() {
        intensity.push((r + g + b) / 3.0);
        if !greyscale {
            rg[i] = r - g;
            yb[i] = (r + g) / 2.0 - b;
        }
    }
    OpponentImage {
        width: image.width,
        height: image.height,
        planes: [intensity, rg, yb],
        greyscale,
    }
}

/// The full raster path: 8-bit RGB -> resize -> stretch -> opponent planes.
pub fn prepare(img: &RgbImage, max_side: usize, greyscale: bool) -> Result<OpponentImage> {
    let raster = RgbRaster::from_rgb8(img);
    if raster.data.is_empty() {
        return Err(Error::InvalidParameter("empty raster".into()));
    }
    let resized = resize_max_side(&raster, max_side)?;
    Ok(to_opponent(&contrast_stretch(&resized), greyscale))
}
