//! Experiment configuration: TOML file, presets, and `key=value` overrides.
//!
//! Layering, lowest to highest priority: built-in defaults, the named
//! `preset`, keys from the file, then overrides. The `ablation` selector is
//! applied last by [`ExperimentConfig::effective`].

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classify::DEFAULT_COST;
use crate::conditioning::{PatchConditioning, StdConvention, WhiteningParams};
use crate::filterbank::{build_filter_bank, default_sigma, DEFAULT_SIZE};
use crate::llc::LlcParams;
use crate::pipeline::Pipeline;
use crate::preprocess::MIN_MAX_SIDE;
use crate::spm::{SpmLayout, SpmMode};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    #[default]
    Default,
    /// 8 orientations + spot, 3000 templates.
    Arch1,
    /// 12 orientations, 2000 templates.
    Arch2,
    /// 12 orientations, 4000 templates.
    Arch3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    #[default]
    Full,
    GreyscaleOnly,
    GlobalMax,
    Spm3,
    /// alpha = 0
    NoWhitening,
    /// alpha = 1
    FullWhitening,
    /// Skip whitening entirely, unit normalization only.
    NormalizeOnly,
}

/// Generator settings used when no dataset root is given.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_classes: usize,
    pub per_class: usize,
    pub image_side: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_classes: 10,
            per_class: 40,
            image_side: 96,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub preset: Preset,
    pub ablation: Ablation,
    /// Folder-per-class image root. When absent, `synthetic` is used.
    pub dataset: Option<PathBuf>,
    pub synthetic: SynthConfig,

    pub max_side: usize,
    pub greyscale: bool,
    pub n_orientations: usize,
    pub include_spot: bool,
    pub filter_size: usize,
    /// Defaults to `filter_size / 4`.
    pub sigma: Option<f64>,

    pub alpha: f64,
    pub beta: f64,
    pub std_convention: StdConvention,

    pub p: usize,
    pub k: usize,
    pub lambda: f64,
    pub spm: SpmMode,
    pub spm3_polarity: bool,
    pub cost: f64,

    pub n_train: usize,
    pub n_test_max: usize,
    pub n_trials: usize,
    pub seed: u64,
    /// Sample one dictionary from the first trial's training split and reuse it.
    pub fixed_dictionary: bool,

    /// Worker threads; 0 uses every available core.
    pub threads: usize,
    /// C1 stack cache. Enabling it rounds C1 values to f32 in every run.
    pub cache_dir: Option<PathBuf>,
    /// Per-trial sparse feature files are written here when set.
    pub features_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            preset: Preset::Default,
            ablation: Ablation::Full,
            dataset: None,
            synthetic: SynthConfig::default(),
            max_side: 240,
            greyscale: false,
            n_orientations: 12,
            include_spot: true,
            filter_size: DEFAULT_SIZE,
            sigma: None,
            alpha: 0.98,
            beta: 3.0,
            std_convention: StdConvention::Population,
            p: 1000,
            k: 20,
            lambda: 0.25,
            spm: SpmMode::Full,
            spm3_polarity: false,
            cost: DEFAULT_COST,
            n_train: 30,
            n_test_max: 50,
            n_trials: 5,
            seed: 0,
            fixed_dictionary: false,
            threads: 0,
            cache_dir: None,
            features_dir: None,
        }
    }
}

impl Preset {
    pub fn base(self) -> ExperimentConfig {
        let mut c = ExperimentConfig {
            preset: self,
            ..ExperimentConfig::default()
        };
        if self != Preset::Default {
            c.max_side = 300;
            c.k = 15;
        }
        match self {
            Preset::Default => {}
            Preset::Arch1 => {
                c.n_orientations = 8;
                c.include_spot = true;
                c.p = 3000;
            }
            Preset::Arch2 | Preset::Arch3 => {
                c.n_orientations = 12;
                c.include_spot = false;
                c.p = if self == Preset::Arch2 { 2000 } else { 4000 };
            }
        }
        c
    }
}

fn config_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

/// Parses the right-hand side of an override as a TOML value, falling back
/// to a bare string (so `spm=spm3` and `dataset=/data/x` work unquoted).
fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_owned()),
    }
}

fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| config_err(format!("empty key in `{key}`")))?;
    let mut cur = table;
    for part in parts {
        cur = cur
            .entry(part)
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| config_err(format!("`{part}` is not a table")))?;
    }
    cur.insert(last.to_owned(), value);
    Ok(())
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

impl ExperimentConfig {
    /// Resolves a config from optional TOML text plus `key=value` overrides.
    pub fn from_toml_with_overrides(text: Option<&str>, overrides: &[String]) -> Result<Self> {
        let mut user: toml::Table = match text {
            Some(t) => t.parse().map_err(config_err)?,
            None => toml::Table::new(),
        };
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| config_err(format!("override `{o}` is not key=value")))?;
            set_path(&mut user, k.trim(), parse_value(v.trim()))?;
        }
        let preset: Preset = match user.get("preset") {
            Some(v) => v.clone().try_into().map_err(config_err)?,
            None => Preset::Default,
        };
        let mut table = toml::Table::try_from(preset.base()).map_err(config_err)?;
        merge(&mut table, user);
        let cfg: Self = table.try_into().map_err(config_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = path.map(std::fs::read_to_string).transpose()?;
        Self::from_toml_with_overrides(text.as_deref(), overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Copy with the ablation folded into the plain fields.
    pub fn effective(&self) -> Self {
        let mut c = self.clone();
        match self.ablation {
            Ablation::Full | Ablation::NormalizeOnly => {}
            Ablation::GreyscaleOnly => c.greyscale = true,
            Ablation::GlobalMax => c.spm = SpmMode::GlobalMax,
            Ablation::Spm3 => c.spm = SpmMode::Spm3,
            Ablation::NoWhitening => c.alpha = 0.0,
            Ablation::FullWhitening => c.alpha = 1.0,
        }
        c
    }

    pub fn conditioning(&self) -> Result<PatchConditioning> {
        let e = self.effective();
        if e.ablation == Ablation::NormalizeOnly {
            return Ok(PatchConditioning::NormalizeOnly);
        }
        let params = WhiteningParams {
            alpha: e.alpha,
            beta: e.beta,
            std: e.std_convention,
        };
        params.validate()?;
        Ok(PatchConditioning::Whiten(params))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        let e = self.effective();
        if e.n_trials == 0 {
            return bad("n_trials must be >= 1".into());
        }
        if e.n_train == 0 {
            return bad("n_train must be >= 1".into());
        }
        if e.max_side < MIN_MAX_SIDE {
            return bad(format!("max_side must be >= {MIN_MAX_SIDE}"));
        }
        if !(e.cost > 0.0 && e.cost.is_finite()) {
            return bad(format!("cost {} must be > 0", e.cost));
        }
        if e.p == 0 {
            return bad("p must be >= 1".into());
        }
        self.conditioning()?;
        self.llc_params()?.validate(e.p)?;
        if self.dataset.is_none() && e.synthetic.n_classes < 2 {
            return bad("synthetic.n_classes must be >= 2".into());
        }
        Ok(())
    }

    pub fn llc_params(&self) -> Result<LlcParams> {
        let e = self.effective();
        Ok(LlcParams {
            k: e.k,
            lambda: e.lambda,
            conditioning: self.conditioning()?,
        })
    }

    pub fn layout(&self) -> SpmLayout {
        let e = self.effective();
        SpmLayout {
            mode: e.spm,
            spm3_polarity: e.spm3_polarity,
        }
    }

    pub fn pipeline(&self) -> Result<Pipeline> {
        let e = self.effective();
        let sigma = e.sigma.unwrap_or_else(|| default_sigma(e.filter_size));
        let bank = build_filter_bank(e.n_orientations, e.include_spot, e.filter_size, sigma)?;
        let mut pl = Pipeline::new(bank, e.max_side);
        pl.s1_conditioning = self.conditioning()?;
        pl.greyscale = e.greyscale;
        pl.llc = self.llc_params()?;
        pl.layout = self.layout();
        pl.quantize_c1 = e.cache_dir.is_some();
        Ok(pl)
    }

    /// Stable key over every setting that influences C1 stacks.
    pub fn c1_cache_key(&self) -> String {
        let e = self.effective();
        let desc = format!(
            "{}|{}|{}|{}|{}|{:?}|{:?}|{:?}",
            e.max_side,
            e.greyscale,
            e.n_orientations,
            e.include_spot,
            e.filter_size,
            e.sigma.map(f64::to_bits),
            self.conditioning().ok(),
            (crate::s1c1::C1_WINDOW, crate::s1c1::C1_STRIDE),
        );
        format!("{:016x}", super::fnv1a(desc.as_bytes()))
    }
}
