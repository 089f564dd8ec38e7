use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dataset directory not found: {0}")]
    MissingDirectory(PathBuf),

    #[error("class has no images: {0}")]
    EmptyClass(String),

    #[error("dataset has no classes: {0}")]
    NoClasses(PathBuf),

    #[error("class {class} has {available} images, need more than {n_train} for the split")]
    ClassTooSmall {
        class: String,
        available: usize,
        n_train: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate kernel: sigma {sigma} leaves no off-center support")]
    DegenerateKernel { sigma: f64 },

    #[error("division by zero in whitening")]
    WhiteningDivideByZero,

    #[error("image too small for S1: {width}x{height} with kernel side {kernel}")]
    ImageTooSmall {
        width: usize,
        height: usize,
        kernel: usize,
    },

    #[error("S1 too small for C1 pooling: {width}x{height} with window {window}")]
    S1TooSmall {
        width: usize,
        height: usize,
        window: usize,
    },

    #[error("no C1 stack admits a {0}x{0} template window")]
    NoTemplateWindow(usize),

    #[error("rank-deficient basis; set lambda > 0")]
    RankDeficient,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("classifier needs at least 2 classes, got {0}")]
    SingleClass(usize),

    #[error("non-finite value in features")]
    NonFiniteFeature,

    #[error("bad file format: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
