//! Sampling-distribution hyperparameters for synthesis and augmentation.
//!
//! The config file is TOML. Every key is optional and defaults to the
//! published training setup; unknown keys are rejected so that a typo in a
//! distribution parameter cannot silently fall back to a default.
//!
//! ```toml
//! crop_size = [192, 192, 192]
//!
//! [intensity]
//! mean = [0.0, 255.0]        # per-class mean ~ U(lo, hi)
//! std = [0.0, 16.0]          # per-class std ~ U(lo, hi)
//! smooth_fwhm = [0.0, 2.0]   # voxels, one global draw
//!
//! [paste]
//! dilate_prob = 0.3
//! dilate_radius = 2.0
//! erode_prob = 0.3
//! erode_radius = 4.0
//! boundary_ramp = 2.0
//! translation_jitter = 0     # voxels; 0 disables
//! min_brain_posterior = 0.5
//! [paste.penumbra]
//! enabled = true
//! control_points = [2, 7]
//! strength = [0.0, 0.5]
//!
//! [bias_field]   # enabled, control_points, strength
//! [affine]       # enabled, rotation_deg, shear, zoom
//! [elastic]      # enabled, max_displacement, control_points
//! [skull_strip]  # enabled, threshold, dilate_prob, dilate_radius, erode_prob, erode_radius
//! [flip]         # prob
//! [noise]        # enabled, snr, gfactor_smoothness
//! [anisotropy]   # enabled, factor
//! [gamma]        # enabled, log10_mean, log10_std
//! [motion]       # enabled, fwhm
//! [clip]         # enabled, percentiles
//! [real]         # histogram_norm, [real.histogram_shift] enabled, knots, strength
//! [schedule]     # n_synth, n_real
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rngkit::RngStream;

/// Closed interval `[lo, hi]` for a uniform draw; written as a two-element
/// array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range(pub f64, pub f64);

impl Range {
    pub fn draw(&self, s: &mut RngStream) -> Result<f64> {
        s.uniform(self.0, self.1)
    }

    fn check(&self, what: &str) -> Result<()> {
        if self.0 <= self.1 && self.0.is_finite() && self.1.is_finite() {
            Ok(())
        } else {
            Err(Error::Config(format!("{what}: invalid range [{}, {}]", self.0, self.1)))
        }
    }
}

/// Inclusive integer interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntRange(pub u32, pub u32);

impl IntRange {
    pub fn draw(&self, s: &mut RngStream) -> u32 {
        s.uniform_int(self.0 as u64, self.1 as u64) as u32
    }

    fn check(&self, what: &str) -> Result<()> {
        if self.0 <= self.1 {
            Ok(())
        } else {
            Err(Error::Config(format!("{what}: invalid range [{}, {}]", self.0, self.1)))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntensityConfig {
    pub mean: Range,
    pub std: Range,
    pub smooth_fwhm: Range,
}

impl Default for IntensityConfig {
    fn default() -> Self {
        Self {
            mean: Range(0.0, 255.0),
            std: Range(0.0, 16.0),
            smooth_fwhm: Range(0.0, 2.0),
        }
    }
}

/// Smooth multiplicative field on a control-point lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BiasFieldConfig {
    pub enabled: bool,
    pub control_points: IntRange,
    pub strength: Range,
}

impl Default for BiasFieldConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            control_points: IntRange(2, 7),
            strength: Range(0.0, 0.5),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PasteConfig {
    pub dilate_prob: f64,
    pub dilate_radius: f64,
    pub erode_prob: f64,
    pub erode_radius: f64,
    /// Width (voxels) of the linear alpha ramp from the lesion boundary.
    pub boundary_ramp: f64,
    /// Maximum random lesion shift in voxels per axis; 0 disables.
    pub translation_jitter: u32,
    /// Lesion weight is zeroed where the brain-tissue posterior is below this.
    pub min_brain_posterior: f64,
    pub penumbra: BiasFieldConfig,
}

impl Default for PasteConfig {
    fn default() -> Self {
        Self {
            dilate_prob: 0.3,
            dilate_radius: 2.0,
            erode_prob: 0.3,
            erode_radius: 4.0,
            boundary_ramp: 2.0,
            translation_jitter: 0,
            min_brain_posterior: 0.5,
            penumbra: BiasFieldConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AffineConfig {
    pub enabled: bool,
    pub rotation_deg: Range,
    pub shear: Range,
    pub zoom: Range,
}

impl Default for AffineConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            rotation_deg: Range(-15.0, 15.0),
            shear: Range(0.0, 0.012),
            zoom: Range(0.85, 1.15),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ElasticConfig {
    pub enabled: bool,
    /// Fraction of the largest volume extent.
    pub max_displacement: Range,
    /// Lower bound is raised to 2 at draw time.
    pub control_points: IntRange,
}

impl Default for ElasticConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            max_displacement: Range(0.0, 0.05),
            control_points: IntRange(2, 10),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SkullStripConfig {
    pub enabled: bool,
    pub threshold: f64,
    pub dilate_prob: f64,
    pub dilate_radius: f64,
    pub erode_prob: f64,
    pub erode_radius: f64,
}

impl Default for SkullStripConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            threshold: 0.5,
            dilate_prob: 0.3,
            dilate_radius: 2.0,
            erode_prob: 0.3,
            erode_radius: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlipConfig {
    /// Independent probability per axis.
    pub prob: f64,
}

impl Default for FlipConfig {
    fn default() -> Self {
        Self { prob: 0.8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub enabled: bool,
    pub snr: Range,
    /// Control points per axis of the g-factor field (rounded).
    pub gfactor_smoothness: Range,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            snr: Range(0.0, 10.0),
            gfactor_smoothness: Range(2.0, 5.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnisotropyConfig {
    pub enabled: bool,
    pub factor: Range,
}

impl Default for AnisotropyConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            factor: Range(1.0, 8.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GammaConfig {
    pub enabled: bool,
    pub log10_mean: f64,
    pub log10_std: f64,
}

impl Default for GammaConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            log10_mean: 0.0,
            log10_std: 0.6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionConfig {
    pub enabled: bool,
    /// Voxels.
    pub fwhm: Range,
}

impl Default for MotionConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            fwhm: Range(0.0, 3.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClipConfig {
    pub enabled: bool,
    pub percentiles: Range,
}

impl Default for ClipConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            percentiles: Range(1.0, 99.0),
        }
    }
}

/// Random monotone piecewise-linear intensity remap (experimental).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HistogramShiftConfig {
    pub enabled: bool,
    pub knots: u32,
    pub strength: f64,
}

impl Default for HistogramShiftConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            knots: 5,
            strength: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RealConfig {
    /// Min-max to [0, 1] followed by the `clip` percentiles.
    pub histogram_norm: bool,
    pub histogram_shift: HistogramShiftConfig,
}

impl Default for RealConfig {
    fn default() -> Self {
        Self {
            histogram_norm: true,
            histogram_shift: HistogramShiftConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub n_synth: u64,
    pub n_real: u64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            n_synth: 2579,
            n_real: 419,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub crop_size: [usize; 3],
    pub intensity: IntensityConfig,
    pub paste: PasteConfig,
    pub bias_field: BiasFieldConfig,
    pub affine: AffineConfig,
    pub elastic: ElasticConfig,
    pub skull_strip: SkullStripConfig,
    pub flip: FlipConfig,
    pub noise: NoiseConfig,
    pub anisotropy: AnisotropyConfig,
    pub gamma: GammaConfig,
    pub motion: MotionConfig,
    pub clip: ClipConfig,
    pub real: RealConfig,
    pub schedule: ScheduleConfig,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            crop_size: [192; 3],
            intensity: IntensityConfig::default(),
            paste: PasteConfig::default(),
            bias_field: BiasFieldConfig::default(),
            affine: AffineConfig::default(),
            elastic: ElasticConfig::default(),
            skull_strip: SkullStripConfig::default(),
            flip: FlipConfig::default(),
            noise: NoiseConfig::default(),
            anisotropy: AnisotropyConfig::default(),
            gamma: GammaConfig::default(),
            motion: MotionConfig::default(),
            clip: ClipConfig::default(),
            real: RealConfig::default(),
            schedule: ScheduleConfig::default(),
        }
    }
}

impl GenConfig {
    /// Every augmentation disabled or at its identity point. Intensity
    /// sampling, Soft-CP blending and the final crop/normalisation remain.
    pub fn neutral() -> Self {
        let mut c = Self::default();
        c.paste.dilate_prob = 0.0;
        c.paste.erode_prob = 0.0;
        c.paste.penumbra.enabled = false;
        c.bias_field.enabled = false;
        c.affine.enabled = false;
        c.elastic.enabled = false;
        c.skull_strip.enabled = false;
        c.flip.prob = 0.0;
        c.noise.enabled = false;
        c.anisotropy.enabled = false;
        c.gamma.enabled = false;
        c.motion.enabled = false;
        c.clip.enabled = false;
        c.real.histogram_norm = false;
        c.real.histogram_shift.enabled = false;
        c
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: GenConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |p: f64, what: &str| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::Config(format!("{what}: probability {p} outside [0, 1]")))
            }
        };
        let nonneg = |v: f64, what: &str| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{what}: {v} must be non-negative")))
            }
        };
        if self.crop_size.iter().any(|&n| n == 0) {
            return Err(Error::Config("crop_size: zero extent".into()));
        }
        self.intensity.mean.check("intensity.mean")?;
        self.intensity.std.check("intensity.std")?;
        nonneg(self.intensity.std.0, "intensity.std")?;
        self.intensity.smooth_fwhm.check("intensity.smooth_fwhm")?;
        nonneg(self.intensity.smooth_fwhm.0, "intensity.smooth_fwhm")?;
        let p = &self.paste;
        prob(p.dilate_prob, "paste.dilate_prob")?;
        prob(p.erode_prob, "paste.erode_prob")?;
        nonneg(p.dilate_radius, "paste.dilate_radius")?;
        nonneg(p.erode_radius, "paste.erode_radius")?;
        if !(p.boundary_ramp > 0.0) {
            return Err(Error::Config("paste.boundary_ramp must be positive".into()));
        }
        for (f, what) in [(&p.penumbra, "paste.penumbra"), (&self.bias_field, "bias_field")] {
            f.control_points.check(what)?;
            f.strength.check(what)?;
            if f.strength.0 < 0.0 || f.strength.1 > 1.0 {
                return Err(Error::Config(format!("{what}.strength must lie in [0, 1]")));
            }
        }
        self.affine.rotation_deg.check("affine.rotation_deg")?;
        self.affine.shear.check("affine.shear")?;
        self.affine.zoom.check("affine.zoom")?;
        if !(self.affine.zoom.0 > 0.0) {
            return Err(Error::Config("affine.zoom must be positive".into()));
        }
        self.elastic.max_displacement.check("elastic.max_displacement")?;
        nonneg(self.elastic.max_displacement.0, "elastic.max_displacement")?;
        self.elastic.control_points.check("elastic.control_points")?;
        let s = &self.skull_strip;
        prob(s.dilate_prob, "skull_strip.dilate_prob")?;
        prob(s.erode_prob, "skull_strip.erode_prob")?;
        prob(self.flip.prob, "flip.prob")?;
        self.noise.snr.check("noise.snr")?;
        nonneg(self.noise.snr.0, "noise.snr")?;
        self.noise.gfactor_smoothness.check("noise.gfactor_smoothness")?;
        self.anisotropy.factor.check("anisotropy.factor")?;
        if self.anisotropy.factor.0 < 1.0 {
            return Err(Error::Config("anisotropy.factor must be >= 1".into()));
        }
        nonneg(self.gamma.log10_std, "gamma.log10_std")?;
        self.motion.fwhm.check("motion.fwhm")?;
        nonneg(self.motion.fwhm.0, "motion.fwhm")?;
        let Range(lo, hi) = self.clip.percentiles;
        if !(0.0 <= lo && lo < hi && hi <= 100.0) {
            return Err(Error::Config("clip.percentiles must satisfy 0 <= lo < hi <= 100".into()));
        }
        if self.real.histogram_shift.knots < 2 {
            return Err(Error::Config("real.histogram_shift.knots must be >= 2".into()));
        }
        if self.schedule.n_synth + self.schedule.n_real == 0 {
            return Err(Error::Config("schedule: both counts are zero".into()));
        }
        Ok(())
    }
}
