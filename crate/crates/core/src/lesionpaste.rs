//! Pasting a binary lesion into a healthy posterior stack.
//!
//! The lesion shape is randomly dilated or eroded, softened into an alpha
//! map that ramps linearly from the boundary inwards, modulated by a smooth
//! multiplicative "penumbra" field, and finally composited as an extra
//! `lesion` class that displaces the healthy posteriors proportionally.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::morphology::{self, BinaryMask};
use crate::rngkit::RngStream;
use crate::synthgen::config::{BiasFieldConfig, PasteConfig};
use crate::synthgen::fields::{bias_field, BiasFieldParams};
use crate::volgrid::{tissue, Field, PosteriorStack, Volume};

/// Per-voxel lesion fraction in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLesion {
    weights: Volume,
}

impl SoftLesion {
    pub fn new(weights: Volume) -> Result<Self> {
        if let Some(w) = weights.data().iter().find(|w| !(0.0..=1.0).contains(*w)) {
            return Err(Error::InvalidParameter(format!(
                "lesion weight {w} outside [0, 1]"
            )));
        }
        Ok(Self { weights })
    }

    pub fn from_mask(mask: &BinaryMask) -> Self {
        Self {
            weights: morphology::to_volume(mask),
        }
    }

    pub fn weights(&self) -> &Volume {
        &self.weights
    }

    pub fn into_weights(self) -> Volume {
        self.weights
    }
}

/// Which morphological jitter fired.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct JitterDraw {
    pub dilated: bool,
    pub eroded: bool,
    /// Erosion emptied the mask and was undone.
    pub erosion_reverted: bool,
}

/// Independent Bernoulli dilation and erosion of the lesion shape. An
/// erosion that would empty the mask is discarded.
pub fn jitter_shape(
    lesion: &BinaryMask,
    p: &PasteConfig,
    s: &mut RngStream,
) -> Result<(BinaryMask, JitterDraw)> {
    let mut draw = JitterDraw {
        dilated: s.bernoulli(p.dilate_prob)?,
        eroded: s.bernoulli(p.erode_prob)?,
        erosion_reverted: false,
    };
    let mut m = if draw.dilated {
        morphology::dilate(lesion, p.dilate_radius)
    } else {
        lesion.clone()
    };
    if draw.eroded {
        let e = morphology::erode(&m, p.erode_radius);
        if morphology::count(&e) == 0 && morphology::count(&m) > 0 {
            draw.erosion_reverted = true;
        } else {
            m = e;
        }
    }
    Ok((m, draw))
}

/// Linear alpha ramp: `min(d / ramp, 1)` inside the mask, where `d` is the
/// voxel-unit distance to the nearest in-volume background voxel; zero
/// outside.
pub fn soften_boundary(lesion: &BinaryMask, ramp_vox: f64) -> Result<SoftLesion> {
    if !(ramp_vox > 0.0) {
        return Err(Error::InvalidParameter(format!("ramp {ramp_vox} must be positive")));
    }
    let d2 = morphology::edt_squared(&morphology::complement(lesion), [1.0; 3]);
    let data = lesion
        .data()
        .iter()
        .zip(d2)
        .map(|(&inside, d2)| {
            if inside {
                (d2.sqrt() / ramp_vox).min(1.0)
            } else {
                0.0
            }
        })
        .collect();
    SoftLesion::new(Volume::new(lesion.grid().clone(), data)?)
}

/// `clamp(weights * field, 0, 1)`.
pub fn apply_penumbra_field(lesion: &SoftLesion, field: &Volume) -> Result<SoftLesion> {
    lesion.weights.ensure_same_grid(field, "penumbra field")?;
    let data = lesion
        .weights
        .data()
        .iter()
        .zip(field.data())
        .map(|(w, f)| (w * f).clamp(0.0, 1.0))
        .collect();
    SoftLesion::new(Volume::new(lesion.weights.grid().clone(), data)?)
}

/// Draws a penumbra field with the bias-field parameterisation and applies it.
pub fn apply_penumbra(
    lesion: &SoftLesion,
    cfg: &BiasFieldConfig,
    s: &mut RngStream,
) -> Result<(SoftLesion, Option<BiasFieldParams>)> {
    if !cfg.enabled {
        return Ok((lesion.clone(), None));
    }
    let params = BiasFieldParams::draw(cfg, s)?;
    let field = bias_field(lesion.weights.grid(), &params, s)?;
    Ok((apply_penumbra_field(lesion, &field)?, Some(params)))
}

/// Zeroes lesion weight where the summed brain-tissue posterior is below
/// `min_brain`.
pub fn restrict_to_brain(
    lesion: &SoftLesion,
    healthy: &PosteriorStack,
    min_brain: f64,
) -> Result<SoftLesion> {
    lesion.weights.ensure_same_grid(&healthy.volumes()[0], "lesion vs stack")?;
    let brain = healthy.sum_of(&tissue::BRAIN);
    let data = lesion
        .weights
        .data()
        .iter()
        .zip(brain)
        .map(|(&w, b)| if b < min_brain { 0.0 } else { w })
        .collect();
    SoftLesion::new(Volume::new(lesion.weights.grid().clone(), data)?)
}

/// Appends a `lesion` class and scales every healthy class by `1 - w`. The
/// lesion posterior is `w * S` where `S` is the healthy per-voxel sum, which
/// is `w` on a saturated stack and preserves per-voxel mass everywhere.
pub fn paste(healthy: &PosteriorStack, lesion: &SoftLesion) -> Result<PosteriorStack> {
    lesion
        .weights
        .ensure_same_grid(&healthy.volumes()[0], "lesion vs stack")?;
    if healthy.class_index(tissue::LESION).is_some() {
        return Err(Error::InvalidParameter(
            "stack already contains a lesion class".into(),
        ));
    }
    let w = lesion.weights.data();
    let mut classes = healthy.classes().to_vec();
    let mut volumes: Vec<Volume> = healthy
        .volumes()
        .iter()
        .map(|v| {
            let data = v.data().iter().zip(w).map(|(p, w)| p * (1.0 - w)).collect();
            Volume::new(v.grid().clone(), data)
        })
        .collect::<Result<_>>()?;
    // The lesion takes exactly the displaced healthy mass.
    let lesion_vol: Vec<f64> = w
        .iter()
        .zip(healthy.sums())
        .map(|(&w, s)| w * s.min(1.0))
        .collect();
    classes.push(tissue::LESION.to_owned());
    volumes.push(Volume::new(healthy.grid().clone(), lesion_vol)?);
    PosteriorStack::new(classes, volumes)
}

/// Shifts a mask by whole voxels (zero fill).
pub fn translate_mask(mask: &BinaryMask, shift: [isize; 3]) -> Result<BinaryMask> {
    let moved: Field<bool> = mask.extract(shift.map(|v| -v), mask.shape(), false)?;
    moved.with_grid(mask.grid().clone())
}
