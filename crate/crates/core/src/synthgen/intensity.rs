use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rngkit::RngStream;
use crate::synthgen::config::IntensityConfig;
use crate::volgrid::{gaussian_smooth, tissue, LabelVolume, PosteriorStack, Volume};

/// Per-class Gaussian appearance plus one global smoothing FWHM (voxels).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassIntensityModel {
    pub classes: Vec<String>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub smooth_fwhm: f64,
}

impl ClassIntensityModel {
    pub fn draw(classes: &[String], cfg: &IntensityConfig, s: &mut RngStream) -> Result<Self> {
        let mut means = Vec::with_capacity(classes.len());
        let mut stds = Vec::with_capacity(classes.len());
        for _ in classes {
            means.push(cfg.mean.draw(s)?);
            stds.push(cfg.std.draw(s)?);
        }
        Ok(Self {
            classes: classes.to_vec(),
            means,
            stds,
            smooth_fwhm: cfg.smooth_fwhm.draw(s)?,
        })
    }
}

/// Posterior-weighted mixture of per-voxel Gaussian draws,
/// `I(v) = sum_k p_k(v) * x_k(v)` with `x_k(v) ~ N(mu_k, sigma_k)` drawn
/// independently per voxel and class, followed by Gaussian smoothing.
/// The posterior deficit (implicit background) contributes zero.
///
/// Each z-slab draws from its own derived stream, so the result does not
/// depend on thread scheduling.
pub fn synthesize_intensity(
    stack: &PosteriorStack,
    model: &ClassIntensityModel,
    s: &RngStream,
) -> Result<Volume> {
    if model.means.len() != stack.len() || model.stds.len() != stack.len() {
        return Err(Error::InvalidParameter(format!(
            "intensity model has {} classes, stack has {}",
            model.means.len(),
            stack.len()
        )));
    }
    if let Some(sd) = model.stds.iter().find(|sd| !(**sd >= 0.0)) {
        return Err(Error::InvalidParameter(format!("class std {sd} is negative")));
    }
    let grid = stack.grid().clone();
    let [nx, ny, _] = grid.shape;
    let plane = nx * ny;
    let mut data = vec![0.0; grid.len()];
    data.par_chunks_mut(plane).enumerate().for_each(|(z, slab)| {
        let mut rng = s.derive("slab", z as u64);
        for (i, out) in slab.iter_mut().enumerate() {
            let idx = z * plane + i;
            let mut acc = 0.0;
            for (k, vol) in stack.volumes().iter().enumerate() {
                let p = vol.data()[idx];
                if p == 0.0 {
                    continue;
                }
                let x = model.means[k] + model.stds[k] * rng.standard_normal();
                acc += p * x;
            }
            *out = acc;
        }
    });
    let img = Volume::new(grid, data)?;
    if model.smooth_fwhm > 0.0 {
        let sp = img.grid().spacing;
        gaussian_smooth(&img, sp.map(|s| s * model.smooth_fwhm))
    } else {
        Ok(img)
    }
}

/// Training labels by per-voxel argmax. The implicit background wins when
/// the posterior deficit exceeds the largest class; ties go to the lower
/// class index.
pub fn hard_label(stack: &PosteriorStack) -> LabelVolume {
    let codes: Vec<u32> = stack.classes().iter().map(|c| tissue::training_label(c)).collect();
    let n = stack.grid().len();
    let data: Vec<u32> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut best = 0usize;
            let mut best_p = f64::NEG_INFINITY;
            let mut sum = 0.0;
            for (k, v) in stack.volumes().iter().enumerate() {
                let p = v.data()[i];
                sum += p;
                if p > best_p {
                    best_p = p;
                    best = k;
                }
            }
            if 1.0 - sum > best_p {
                0
            } else {
                codes[best]
            }
        })
        .collect();
    LabelVolume::new(stack.grid().clone(), data).expect("stack grid is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volgrid::Grid;

    fn stack(classes: &[&str], values: &[f64]) -> PosteriorStack {
        let g = Grid::new([1, 1, 1]);
        PosteriorStack::new(
            classes.iter().map(|c| c.to_string()).collect(),
            values
                .iter()
                .map(|&v| Volume::filled(g.clone(), v).unwrap())
                .collect(),
        )
        .unwrap()
    }

    fn model(means: &[f64], stds: &[f64]) -> ClassIntensityModel {
        ClassIntensityModel {
            classes: vec![],
            means: means.to_vec(),
            stds: stds.to_vec(),
            smooth_fwhm: 0.0,
        }
    }

    #[test]
    fn one_hot_zero_std_is_constant() {
        let g = Grid::new([4, 4, 4]);
        let st = PosteriorStack::new(
            vec!["gm".into(), "wm".into()],
            vec![Volume::filled(g.clone(), 1.0).unwrap(), Volume::filled(g, 0.0).unwrap()],
        )
        .unwrap();
        let img = synthesize_intensity(&st, &model(&[100.0, 7.0], &[0.0, 3.0]), &RngStream::new(1)).unwrap();
        assert!(img.data().iter().all(|&v| v == 100.0));
    }

    #[test]
    fn partial_volume_mixes_linearly() {
        let st = stack(&["gm", "wm"], &[0.5, 0.5]);
        let img = synthesize_intensity(&st, &model(&[0.0, 200.0], &[0.0, 0.0]), &RngStream::new(1)).unwrap();
        assert_eq!(img.data(), &[100.0]);
    }

    #[test]
    fn class_count_mismatch() {
        let st = stack(&["gm", "wm"], &[0.5, 0.5]);
        assert!(synthesize_intensity(&st, &model(&[0.0], &[0.0]), &RngStream::new(1)).is_err());
    }

    #[test]
    fn hard_label_rules() {
        assert_eq!(hard_label(&stack(&["gm", "wm"], &[0.0, 1.0])).data(), &[2]);
        assert_eq!(hard_label(&stack(&["gm", "wm"], &[0.0, 0.0])).data(), &[0]);
        assert_eq!(hard_label(&stack(&["gm", "wm", "lesion"], &[0.4, 0.2, 0.4])).data(), &[1]);
        assert_eq!(hard_label(&stack(&["gm", "lesion"], &[0.2, 0.3])).data(), &[0]);
        assert_eq!(hard_label(&stack(&["skull", "gm"], &[0.6, 0.4])).data(), &[0]);
    }
}
