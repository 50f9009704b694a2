//! Synthetic image generation from tissue posteriors, plus the real-image
//! augmentation path.
//!
//! [`generate_sample`] runs a fixed cascade:
//!
//! 1. lesion preparation: optional translation, shape jitter, soft
//!    boundary, penumbra field, brain gating, paste into the stack;
//! 2. rendering: hard labels, per-class Gaussian intensities, bias field;
//! 3. geometry: affine, elastic, skull-strip flaws, flips;
//! 4. appearance: noise, thick slices, gamma, blur, percentile clip;
//! 5. random crop and z-normalisation.
//!
//! Labels and the soft stack receive only the geometric steps, which are
//! kept in a [`GeometryRecord`] so the label map can be re-derived from
//! the pasted hard labels.

pub mod appearance;
pub mod config;
pub mod fields;
pub mod geometry;
pub mod intensity;
pub mod schedule;

use serde::Serialize;

use crate::error::Result;
use crate::lesionpaste::{self, JitterDraw};
use crate::morphology::{self, BinaryMask};
use crate::rngkit::{PathStep, RngStream};
use crate::volgrid::{
    clip_percentiles, crop_offset, mean_std, percentiles, resample_labels, z_normalize,
    AffineTransform, CropMode, Interp, LabelVolume, PosteriorStack, Volume,
};

use appearance::{AnisotropyParams, NoiseParams, SkullStripDraw};
use config::GenConfig;
use fields::{apply_field, bias_field, BiasFieldParams};
use geometry::{draw_flips, AffineParams, ElasticParams, GeoStep, GeometryRecord};
use intensity::ClassIntensityModel;

pub use appearance::{
    add_noise, add_noise_with, brain_probability, gamma_contrast, histogram_normalize, histogram_shift,
    motion_blur, simulate_anisotropy, simulate_skullstrip,
};
pub use fields::ControlLattice;
pub use intensity::{hard_label, synthesize_intensity};
pub use schedule::{mixed_schedule, SampleSource};

/// Every random draw made while generating one sample.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleRecord {
    pub seed: u64,
    pub stream_path: Vec<PathStep>,
    pub lesion_shift: [isize; 3],
    pub jitter: JitterDraw,
    pub penumbra: Option<BiasFieldParams>,
    pub intensity: ClassIntensityModel,
    pub bias_field: Option<BiasFieldParams>,
    pub geometry: GeometryRecord,
    pub skull_strip: Option<SkullStripDraw>,
    pub noise: Option<NoiseParams>,
    pub anisotropy: Option<AnisotropyParams>,
    pub gamma: Option<f64>,
    pub motion_fwhm: Option<f64>,
    /// Intensity values at the clip percentiles.
    pub clip_values: Option<[f64; 2]>,
    /// Mean and std removed by the final normalisation.
    pub normalization: [f64; 2],
}

#[derive(Debug, Clone)]
pub struct GeneratedSample {
    pub image: Volume,
    pub label: LabelVolume,
    /// Warped soft posteriors; present when requested.
    pub soft: Option<PosteriorStack>,
    /// Hard labels of the pasted stack before any geometric step.
    pub raw_label: LabelVolume,
    pub record: SampleRecord,
}

fn stage(s: &RngStream, name: &str) -> RngStream {
    s.derive(name, 0)
}

fn align_lesion(lesion: &BinaryMask, stack: &PosteriorStack) -> Result<BinaryMask> {
    if lesion.grid().same_geometry(stack.grid(), 1e-6) {
        return Ok(lesion.clone());
    }
    let l = resample_labels(
        &lesion.map(u32::from),
        stack.grid(),
        &AffineTransform::identity(),
        0,
    )?;
    Ok(l.map(|v| v != 0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleOptions {
    /// Carry the full soft stack through the geometric steps. Off saves one
    /// warped volume per class; the image and label are unaffected.
    pub keep_soft: bool,
}

impl Default for SampleOptions {
    fn default() -> Self {
        Self { keep_soft: true }
    }
}

/// Renders one training pair from a healthy posterior stack and a binary
/// lesion mask.
pub fn generate_sample(
    healthy: &PosteriorStack,
    lesion: &BinaryMask,
    cfg: &GenConfig,
    s: &RngStream,
) -> Result<GeneratedSample> {
    generate_sample_with(healthy, lesion, cfg, s, SampleOptions::default())
}

pub fn generate_sample_with(
    healthy: &PosteriorStack,
    lesion: &BinaryMask,
    cfg: &GenConfig,
    s: &RngStream,
    opts: SampleOptions,
) -> Result<GeneratedSample> {
    cfg.validate()?;
    let lesion = align_lesion(lesion, healthy)?;

    // Lesion preparation.
    let j = cfg.paste.translation_jitter as i64;
    let mut lesion_shift = [0isize; 3];
    let lesion = if j > 0 {
        let mut st = stage(s, "lesion_shift");
        for v in &mut lesion_shift {
            *v = (st.uniform_int(0, 2 * j as u64) as i64 - j) as isize;
        }
        lesionpaste::translate_mask(&lesion, lesion_shift)?
    } else {
        lesion
    };
    let (shape_mask, jitter) = lesionpaste::jitter_shape(&lesion, &cfg.paste, &mut stage(s, "jitter"))?;
    let soft = lesionpaste::soften_boundary(&shape_mask, cfg.paste.boundary_ramp)?;
    let (soft, penumbra) = lesionpaste::apply_penumbra(&soft, &cfg.paste.penumbra, &mut stage(s, "penumbra"))?;
    let soft = lesionpaste::restrict_to_brain(&soft, healthy, cfg.paste.min_brain_posterior)?;
    let stack = lesionpaste::paste(healthy, &soft)?;
    let raw_label = hard_label(&stack);
    let mut brain = if cfg.skull_strip.enabled {
        Some(appearance::brain_probability(&stack)?)
    } else {
        None
    };

    // Rendering.
    let model = ClassIntensityModel::draw(stack.classes(), &cfg.intensity, &mut stage(s, "intensity"))?;
    let mut img = synthesize_intensity(&stack, &model, &stage(s, "intensity_voxels"))?;
    let mut stack = opts.keep_soft.then_some(stack);
    let bias = if cfg.bias_field.enabled {
        let mut st = stage(s, "bias_field");
        let p = BiasFieldParams::draw(&cfg.bias_field, &mut st)?;
        let field = bias_field(img.grid(), &p, &mut st)?;
        img = apply_field(&img, &field)?;
        Some(p)
    } else {
        None
    };

    // Geometry.
    let mut geometry = GeometryRecord::default();
    let mut apply = |step: GeoStep,
                     img: &mut Volume,
                     brain: &mut Option<Volume>,
                     stack: &mut Option<PosteriorStack>|
     -> Result<()> {
        *img = step.apply_volume(img, Interp::Trilinear, 0.0)?;
        if let Some(b) = brain.as_mut() {
            *b = step.apply_volume(b, Interp::Trilinear, 0.0)?;
        }
        if let Some(st) = stack.as_mut() {
            *st = step.apply_stack(st)?;
        }
        geometry.push(step);
        Ok(())
    };
    if cfg.affine.enabled {
        let p = AffineParams::draw(&cfg.affine, &mut stage(s, "affine"))?;
        apply(GeoStep::affine(img.grid(), p), &mut img, &mut brain, &mut stack)?;
    }
    if cfg.elastic.enabled {
        let mut st = stage(s, "elastic");
        let p = ElasticParams::draw(&cfg.elastic, &mut st)?;
        let step = GeoStep::elastic(img.grid(), p, &mut st)?;
        apply(step, &mut img, &mut brain, &mut stack)?;
    }
    let skull_strip = match brain.take() {
        Some(b) if cfg.skull_strip.enabled => {
            let (out, draw) = simulate_skullstrip(&img, &b, &cfg.skull_strip, &mut stage(s, "skull_strip"))?;
            img = out;
            Some(draw)
        }
        _ => None,
    };
    let axes = draw_flips(cfg.flip.prob, &mut stage(s, "flip"))?;
    if axes.iter().any(|&a| a) {
        apply(GeoStep::Flip { axes }, &mut img, &mut brain, &mut stack)?;
    }

    // Appearance.
    let noise = if cfg.noise.enabled {
        let (out, p) = add_noise(&img, &cfg.noise, &mut stage(s, "noise"))?;
        img = out;
        Some(p)
    } else {
        None
    };
    let anisotropy = if cfg.anisotropy.enabled {
        let p = AnisotropyParams::draw(&cfg.anisotropy, &mut stage(s, "anisotropy"))?;
        img = simulate_anisotropy(&img, &p)?;
        Some(p)
    } else {
        None
    };
    let gamma = if cfg.gamma.enabled {
        let g = stage(s, "gamma").log10_normal(cfg.gamma.log10_mean, cfg.gamma.log10_std)?;
        img = gamma_contrast(&img, g)?;
        Some(g)
    } else {
        None
    };
    let motion_fwhm = if cfg.motion.enabled {
        let f = cfg.motion.fwhm.draw(&mut stage(s, "motion"))?;
        img = motion_blur(&img, f)?;
        Some(f)
    } else {
        None
    };
    let clip_values = if cfg.clip.enabled {
        let config::Range(lo, hi) = cfg.clip.percentiles;
        let v = percentiles(img.data(), &[lo, hi])?;
        img = clip_percentiles(&img, lo, hi)?;
        Some([v[0], v[1]])
    } else {
        None
    };

    // Crop and normalise.
    let offset = crop_offset(img.shape(), cfg.crop_size, CropMode::Random(&mut stage(s, "crop")));
    apply(
        GeoStep::Crop {
            offset,
            size: cfg.crop_size,
        },
        &mut img,
        &mut brain,
        &mut stack,
    )?;
    let (mean, std) = mean_std(&img, None)?;
    let image = z_normalize(&img, None)?;
    let label = geometry.apply_labels(&raw_label)?;

    Ok(GeneratedSample {
        image,
        label,
        soft: stack,
        raw_label,
        record: SampleRecord {
            seed: s.seed(),
            stream_path: s.path().to_vec(),
            lesion_shift,
            jitter,
            penumbra,
            intensity: model,
            bias_field: bias,
            geometry,
            skull_strip,
            noise,
            anisotropy,
            gamma,
            motion_fwhm,
            clip_values,
            normalization: [mean, std],
        },
    })
}

/// Draws of the real-image augmentation path.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RealRecord {
    pub geometry: GeometryRecord,
    pub histogram_knots: Option<Vec<f64>>,
    pub bias_field: Option<BiasFieldParams>,
    pub gamma: Option<f64>,
    pub normalization: [f64; 2],
}

/// Augments a real image/label pair: affine, elastic, flips, random crop,
/// histogram normalisation and shift, bias field, gamma, z-normalisation.
pub fn augment_real(
    image: &Volume,
    label: &LabelVolume,
    cfg: &GenConfig,
    s: &RngStream,
) -> Result<(Volume, LabelVolume, RealRecord)> {
    cfg.validate()?;
    image.ensure_same_grid(label, "image vs label")?;
    let mut img = image.clone();
    let mut geometry = GeometryRecord::default();
    let mut apply = |step: GeoStep, img: &mut Volume| -> Result<()> {
        *img = step.apply_volume(img, Interp::Trilinear, 0.0)?;
        geometry.push(step);
        Ok(())
    };
    if cfg.affine.enabled {
        let p = AffineParams::draw(&cfg.affine, &mut stage(s, "affine"))?;
        apply(GeoStep::affine(img.grid(), p), &mut img)?;
    }
    if cfg.elastic.enabled {
        let mut st = stage(s, "elastic");
        let p = ElasticParams::draw(&cfg.elastic, &mut st)?;
        apply(GeoStep::elastic(img.grid(), p, &mut st)?, &mut img)?;
    }
    let axes = draw_flips(cfg.flip.prob, &mut stage(s, "flip"))?;
    if axes.iter().any(|&a| a) {
        apply(GeoStep::Flip { axes }, &mut img)?;
    }
    let offset = crop_offset(img.shape(), cfg.crop_size, CropMode::Random(&mut stage(s, "crop")));
    apply(
        GeoStep::Crop {
            offset,
            size: cfg.crop_size,
        },
        &mut img,
    )?;

    if cfg.real.histogram_norm {
        let config::Range(lo, hi) = cfg.clip.percentiles;
        img = histogram_normalize(&img, lo, hi)?;
    }
    let histogram_knots = if cfg.real.histogram_shift.enabled {
        let h = &cfg.real.histogram_shift;
        let k = appearance::histogram_shift_knots(h.knots as usize, h.strength, &mut stage(s, "histogram_shift"))?;
        img = histogram_shift(&img, &k)?;
        Some(k)
    } else {
        None
    };
    let bias = if cfg.bias_field.enabled {
        let mut st = stage(s, "bias_field");
        let p = BiasFieldParams::draw(&cfg.bias_field, &mut st)?;
        let field = bias_field(img.grid(), &p, &mut st)?;
        img = apply_field(&img, &field)?;
        Some(p)
    } else {
        None
    };
    let gamma = if cfg.gamma.enabled {
        let g = stage(s, "gamma").log10_normal(cfg.gamma.log10_mean, cfg.gamma.log10_std)?;
        img = gamma_contrast(&img, g)?;
        Some(g)
    } else {
        None
    };
    let (mean, std) = mean_std(&img, None)?;
    let out = z_normalize(&img, None)?;
    let label = geometry.apply_labels(label)?;
    Ok((
        out,
        label,
        RealRecord {
            geometry,
            histogram_knots,
            bias_field: bias,
            gamma,
            normalization: [mean, std],
        },
    ))
}

/// Lesion mask implied by a training label map.
pub fn lesion_mask(label: &LabelVolume) -> BinaryMask {
    label.map(|v| v == crate::volgrid::tissue::training_label(crate::volgrid::tissue::LESION))
}

/// Number of lesion voxels in a training label map.
pub fn lesion_voxels(label: &LabelVolume) -> usize {
    morphology::count(&lesion_mask(label))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volgrid::{tissue, Grid};

    pub(crate) fn toy_inputs(n: usize) -> (PosteriorStack, BinaryMask) {
        let g = Grid::new([n; 3]);
        let c = (n as f64 - 1.0) / 2.0;
        let r = |[x, y, z]: [usize; 3]| {
            ((x as f64 - c).powi(2) + (y as f64 - c).powi(2) + (z as f64 - c).powi(2)).sqrt()
        };
        let rb = n as f64 * 0.42;
        let gm = Volume::from_fn(g.clone(), |p| if r(p) < rb && r(p) >= rb * 0.7 { 0.9 } else { 0.0 }).unwrap();
        let wm = Volume::from_fn(g.clone(), |p| if r(p) < rb * 0.7 { 0.95 } else { 0.0 }).unwrap();
        let csf = Volume::from_fn(g.clone(), |p| if r(p) < rb && r(p) >= rb * 0.7 { 0.1 } else { 0.0 }).unwrap();
        let bg = Volume::from_fn(g.clone(), |p| if r(p) >= rb { 1.0 } else if r(p) < rb * 0.7 { 0.05 } else { 0.0 }).unwrap();
        let stack = PosteriorStack::new(
            vec![tissue::GM.into(), tissue::WM.into(), tissue::CSF.into(), "background".into()],
            vec![gm, wm, csf, bg],
        )
        .unwrap();
        let lc = [c + n as f64 * 0.15, c, c];
        let lesion = BinaryMask::from_fn(g, |[x, y, z]| {
            ((x as f64 - lc[0]).powi(2) + (y as f64 - lc[1]).powi(2) + (z as f64 - lc[2]).powi(2)).sqrt()
                < n as f64 * 0.12
        })
        .unwrap();
        (stack, lesion)
    }

    fn small_cfg(n: usize) -> GenConfig {
        GenConfig {
            crop_size: [n - 4; 3],
            ..GenConfig::default()
        }
    }

    #[test]
    fn deterministic_for_fixed_stream() {
        let (stack, lesion) = toy_inputs(24);
        let cfg = small_cfg(24);
        let s = RngStream::new(77).derive("sample", 3);
        let a = generate_sample(&stack, &lesion, &cfg, &s).unwrap();
        let b = generate_sample(&stack, &lesion, &cfg, &s).unwrap();
        assert_eq!(a.image, b.image);
        assert_eq!(a.label, b.label);
        assert_eq!(a.record, b.record);
    }

    #[test]
    fn dropping_soft_stack_keeps_outputs() {
        let (stack, lesion) = toy_inputs(20);
        let cfg = small_cfg(20);
        let s = RngStream::new(4);
        let a = generate_sample(&stack, &lesion, &cfg, &s).unwrap();
        let b = generate_sample_with(&stack, &lesion, &cfg, &s, SampleOptions { keep_soft: false }).unwrap();
        assert!(b.soft.is_none());
        assert_eq!(a.image, b.image);
        assert_eq!(a.label, b.label);
    }

    #[test]
    fn output_is_normalized_and_aligned() {
        let (stack, lesion) = toy_inputs(24);
        let cfg = small_cfg(24);
        let out = generate_sample(&stack, &lesion, &cfg, &RngStream::new(5)).unwrap();
        let (m, sd) = mean_std(&out.image, None).unwrap();
        assert!(m.abs() < 1e-5 && (sd - 1.0).abs() < 1e-5);
        assert_eq!(out.image.shape(), [20; 3]);
        assert!(out.image.same_grid(&out.label));
        assert!(out.soft.as_ref().unwrap().sums().iter().all(|&v| v <= 1.0 + 1e-4));
        assert_eq!(out.record.geometry.apply_labels(&out.raw_label).unwrap(), out.label);
    }

    #[test]
    fn neutral_cascade_is_normalized_crop_of_rendering() {
        let (stack, lesion) = toy_inputs(16);
        let mut cfg = GenConfig::neutral();
        cfg.crop_size = [12; 3];
        let s = RngStream::new(11);
        let out = generate_sample(&stack, &lesion, &cfg, &s).unwrap();
        let soft = lesionpaste::soften_boundary(&lesion, cfg.paste.boundary_ramp).unwrap();
        let soft = lesionpaste::restrict_to_brain(&soft, &stack, cfg.paste.min_brain_posterior).unwrap();
        let pasted = lesionpaste::paste(&stack, &soft).unwrap();
        let render = synthesize_intensity(&pasted, &out.record.intensity, &stage(&s, "intensity_voxels")).unwrap();
        let expect = out.record.geometry.apply_volume(&render, Interp::Trilinear, 0.0).unwrap();
        let expect = z_normalize(&expect, None).unwrap();
        let err = expect
            .data()
            .iter()
            .zip(out.image.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn real_path_neutral_and_flip_sharing() {
        let g = Grid::new([10, 9, 8]);
        let img = Volume::from_fn(g.clone(), |[x, y, z]| (x * 3 + y * y + z) as f64).unwrap();
        let lab = LabelVolume::from_fn(g, |[x, y, _]| ((x + y) % 3) as u32).unwrap();
        let mut cfg = GenConfig::neutral();
        cfg.crop_size = [6, 6, 6];
        let (o, l, rec) = augment_real(&img, &lab, &cfg, &RngStream::new(2)).unwrap();
        let exp_img = rec.geometry.apply_volume(&img, Interp::Trilinear, 0.0).unwrap();
        let exp_img = z_normalize(&exp_img, None).unwrap();
        assert!(o.data().iter().zip(exp_img.data()).all(|(a, b)| (a - b).abs() < 1e-9));
        assert_eq!(l, rec.geometry.apply_labels(&lab).unwrap());

        cfg.flip.prob = 1.0;
        let (_, l2, rec2) = augment_real(&img, &lab, &cfg, &RngStream::new(2)).unwrap();
        assert!(matches!(rec2.geometry.steps[0], GeoStep::Flip { axes: [true, true, true] }));
        assert_eq!(l2, rec2.geometry.apply_labels(&lab).unwrap());
    }
}
