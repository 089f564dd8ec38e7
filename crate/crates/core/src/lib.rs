//! HMAX-style feature hierarchy with locality-constrained linear coding.
//!
//! The pipeline runs, per image:
//!
//! 1. [`preprocess`]: resize to a maximum side, contrast-stretch, convert to
//!    opponent colour planes (intensity, red-green, yellow-blue).
//! 2. [`s1c1`]: S1 convolves every plane with the oriented edge bank from
//!    [`filterbank`] on per-patch conditioned windows ([`conditioning`]);
//!    C1 max-pools 12x12 with stride 6.
//! 3. [`llc`]: S2 encodes each 4x4 C1 window against a sampled template
//!    dictionary by dot-product k-NN followed by a ridge solve.
//! 4. [`spm`]: C2 pools the sparse codes over two spatial pyramids into 52
//!    features per template.
//! 5. [`classify`]: one-vs-rest L2 logistic regression on the C2 vectors.
//!
//! [`harness`] wraps the stages into the multi-trial evaluation protocol and
//! provides a synthetic dataset generator.

pub mod classify;
pub mod conditioning;
mod error;
pub mod filterbank;
pub mod harness;
mod binfmt;
mod linalg;
pub mod llc;
pub mod pipeline;
pub mod preprocess;
pub mod s1c1;
pub mod spm;

pub use error::{Error, Result};
