//! Per-image composition of the stages: raster to C1, and C1 to C2.

use image::RgbImage;

use crate::conditioning::PatchConditioning;
use crate::filterbank::FilterBank;
use crate::llc::{s2_encode, LlcParams, S2CodeMap, TemplateDictionary};
use crate::preprocess::{prepare, OpponentImage};
use crate::s1c1::{c1_pool, s1_convolve, C1Stack, C1_STRIDE, C1_WINDOW};
use crate::spm::{c2_features, FeatureVector, SpmLayout};
use crate::Result;

#[derive(Debug, Clone)]
pub struct Pipeline {
    pub bank: FilterBank,
    /// Applied to S1 patches. S2 windows use `llc.conditioning`.
    pub s1_conditioning: PatchConditioning,
    pub greyscale: bool,
    pub max_side: usize,
    pub pool_window: usize,
    pub pool_stride: usize,
    pub llc: LlcParams,
    pub layout: SpmLayout,
    /// Round C1 values to f32 so in-memory stacks equal cached ones.
    pub quantize_c1: bool,
}

impl Pipeline {
    pub fn new(bank: FilterBank, max_side: usize) -> Self {
        Self {
            bank,
            s1_conditioning: PatchConditioning::default(),
            greyscale: false,
            max_side,
            pool_window: C1_WINDOW,
            pool_stride: C1_STRIDE,
            llc: LlcParams::default(),
            layout: SpmLayout::default(),
            quantize_c1: false,
        }
    }

    pub fn c1_from_opponent(&self, img: &OpponentImage) -> Result<C1Stack> {
        let s1 = s1_convolve(img, &self.bank, &self.s1_conditioning)?;
        let mut c1 = c1_pool(&s1, self.pool_window, self.pool_stride)?;
        if self.quantize_c1 {
            c1.quantize_f32();
        }
        Ok(c1)
    }

    pub fn c1_stack(&self, img: &RgbImage) -> Result<C1Stack> {
        self.c1_from_opponent(&prepare(img, self.max_side, self.greyscale)?)
    }

    pub fn encode(&self, c1: &C1Stack, dict: &TemplateDictionary) -> Result<S2CodeMap> {
        s2_encode(c1, dict, &self.llc)
    }

    pub fn features(&self, c1: &C1Stack, dict: &TemplateDictionary) -> Result<FeatureVector> {
        Ok(c2_features(&self.encode(c1, dict)?, &self.layout))
    }

    /// S1 through C2 for one raster.
    pub fn extract(&self, img: &RgbImage, dict: &TemplateDictionary) -> Result<FeatureVector> {
        self.features(&self.c1_stack(img)?, dict)
    }
}
