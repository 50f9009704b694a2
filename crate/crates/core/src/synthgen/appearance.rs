//! Intensity-domain augmentations: skull-strip flaws, noise, resolution,
//! contrast, blur and histogram remapping.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::morphology;
use crate::rngkit::RngStream;
use crate::synthgen::config::{AnisotropyConfig, NoiseConfig, SkullStripConfig};
use crate::synthgen::fields::gfactor_field;
use crate::volgrid::{clip_percentiles, gaussian_smooth, mean_std, tissue, PosteriorStack, Volume};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct SkullStripDraw {
    pub dilated: bool,
    pub eroded: bool,
}

/// Zeroes the image outside a brain mask (brain tissues plus lesion above
/// `cfg.threshold`) that is randomly dilated and/or eroded.
/// Voxelwise probability of brain tissue or lesion, clamped to `[0, 1]`.
pub fn brain_probability(stack: &PosteriorStack) -> Result<Volume> {
    let mut names: Vec<&str> = tissue::BRAIN.to_vec();
    names.push(tissue::LESION);
    let sum = stack.sum_of(&names);
    Volume::new(stack.grid().clone(), sum.into_iter().map(|p| p.clamp(0.0, 1.0)).collect())
}

/// Zeroes the image outside `brain > threshold`, after random dilation or
/// erosion of that mask.
pub fn simulate_skullstrip(
    img: &Volume,
    brain: &Volume,
    cfg: &SkullStripConfig,
    s: &mut RngStream,
) -> Result<(Volume, SkullStripDraw)> {
    img.ensure_same_grid(brain, "image vs brain probability")?;
    let mut mask = brain.map(|p| p > cfg.threshold);
    let draw = SkullStripDraw {
        dilated: s.bernoulli(cfg.dilate_prob)?,
        eroded: s.bernoulli(cfg.erode_prob)?,
    };
    if draw.dilated {
        mask = morphology::dilate(&mask, cfg.dilate_radius);
    }
    if draw.eroded {
        mask = morphology::erode(&mask, cfg.erode_radius);
    }
    let data = img
        .data()
        .iter()
        .zip(mask.data())
        .map(|(&v, &m)| if m { v } else { 0.0 })
        .collect();
    Ok((Volume::new(img.grid().clone(), data)?, draw))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoiseParams {
    pub snr: f64,
    pub gfactor_smoothness: f64,
    /// `std(img) / (1 + snr)`.
    pub sigma: f64,
}

/// Additive Gaussian noise modulated by a mean-one g-factor map.
pub fn add_noise(
    img: &Volume,
    cfg: &NoiseConfig,
    s: &mut RngStream,
) -> Result<(Volume, NoiseParams)> {
    let snr = cfg.snr.draw(s)?;
    let gfactor_smoothness = cfg.gfactor_smoothness.draw(s)?;
    let (_, std) = mean_std(img, None)?;
    let sigma = std / (1.0 + snr);
    let g = gfactor_field(img.grid(), gfactor_smoothness, s)?;
    let out = add_noise_with(img, sigma, &g, s)?;
    Ok((
        out,
        NoiseParams {
            snr,
            gfactor_smoothness,
            sigma,
        },
    ))
}

/// `img + N(0, sigma) * g`, drawn slab by slab from streams derived from `s`.
pub fn add_noise_with(img: &Volume, sigma: f64, g: &Volume, s: &RngStream) -> Result<Volume> {
    img.ensure_same_grid(g, "g-factor field")?;
    if !(sigma >= 0.0) {
        return Err(Error::InvalidParameter(format!("noise sigma {sigma} is negative")));
    }
    let [nx, ny, _] = img.shape();
    let plane = nx * ny;
    let mut data = img.data().to_vec();
    data.par_chunks_mut(plane).enumerate().for_each(|(z, slab)| {
        let mut rng = s.derive("noise_slab", z as u64);
        for (i, v) in slab.iter_mut().enumerate() {
            *v += sigma * rng.standard_normal() * g.data()[z * plane + i];
        }
    });
    Volume::new(img.grid().clone(), data)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnisotropyParams {
    pub factor: f64,
    pub axis: usize,
}

impl AnisotropyParams {
    pub fn draw(cfg: &AnisotropyConfig, s: &mut RngStream) -> Result<Self> {
        let factor = cfg.factor.draw(s)?;
        let axis = s.uniform_int(0, 2) as usize;
        Ok(Self { factor, axis })
    }
}

/// Coarse slabs along one axis: `(start, end)` in continuous voxel units
/// where voxel `i` covers `[i, i + 1)`.
fn slabs(n: usize, factor: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut j = 0usize;
    loop {
        let a = j as f64 * factor;
        if a >= n as f64 - 1e-9 {
            break;
        }
        out.push((a, ((j + 1) as f64 * factor).min(n as f64)));
        j += 1;
    }
    out
}

/// Thick-slice simulation: box-average along `p.axis` into slabs of
/// `p.factor` voxels, then linear interpolation back between slab centres
/// (clamped at the ends). The shape is unchanged.
pub fn simulate_anisotropy(img: &Volume, p: &AnisotropyParams) -> Result<Volume> {
    if !(p.factor >= 1.0) || p.axis > 2 {
        return Err(Error::InvalidParameter(format!(
            "anisotropy factor {} / axis {}",
            p.factor, p.axis
        )));
    }
    if p.factor == 1.0 {
        return Ok(img.clone());
    }
    let shape = img.shape();
    let n = shape[p.axis];
    let sl = slabs(n, p.factor);
    // Overlap weights of each voxel with each slab.
    let weights: Vec<Vec<(usize, f64)>> = sl
        .iter()
        .map(|&(a, b)| {
            (a.floor() as usize..(b.ceil() as usize).min(n))
                .filter_map(|i| {
                    let w = (b.min(i as f64 + 1.0) - a.max(i as f64)).max(0.0);
                    (w > 0.0).then_some((i, w))
                })
                .collect()
        })
        .collect();
    let centres: Vec<f64> = sl.iter().map(|&(a, b)| 0.5 * (a + b) - 0.5).collect();
    // Interpolation: for each voxel along the axis, (slab lo, slab hi, t).
    let interp: Vec<(usize, usize, f64)> = (0..n)
        .map(|i| {
            let x = i as f64;
            if x <= centres[0] {
                return (0, 0, 0.0);
            }
            let last = centres.len() - 1;
            if x >= centres[last] {
                return (last, last, 0.0);
            }
            let j = centres.partition_point(|&c| c <= x) - 1;
            let t = (x - centres[j]) / (centres[j + 1] - centres[j]);
            (j, j + 1, t)
        })
        .collect();
    let stride = [1, shape[0], shape[0] * shape[1]][p.axis];
    let lines: Vec<usize> = (0..img.len())
        .filter(|&i| img.grid().coords(i)[p.axis] == 0)
        .collect();
    let src = img.data();
    let results: Vec<Vec<f64>> = lines
        .par_iter()
        .map(|&base| {
            let low: Vec<f64> = weights
                .iter()
                .map(|ws| {
                    let (mut num, mut den) = (0.0, 0.0);
                    for &(i, w) in ws {
                        num += w * src[base + i * stride];
                        den += w;
                    }
                    num / den
                })
                .collect();
            interp
                .iter()
                .map(|&(a, b, t)| if t == 0.0 { low[a] } else { low[a] + t * (low[b] - low[a]) })
                .collect()
        })
        .collect();
    let mut data = vec![0.0; img.len()];
    for (&base, line) in lines.iter().zip(results) {
        for (i, v) in line.into_iter().enumerate() {
            data[base + i * stride] = v;
        }
    }
    Volume::new(img.grid().clone(), data)
}

/// Min-max normalise, raise to `gamma`, restore the original range.
pub fn gamma_contrast(img: &Volume, gamma: f64) -> Result<Volume> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::InvalidParameter(format!("gamma {gamma} must be positive")));
    }
    let (lo, hi) = min_max(img);
    if !(hi > lo) || gamma == 1.0 {
        return Ok(img.clone());
    }
    let r = hi - lo;
    Ok(img.map(|v| lo + r * ((v - lo) / r).clamp(0.0, 1.0).powf(gamma)))
}

/// Isotropic Gaussian point-spread function; `fwhm` in voxels.
pub fn motion_blur(img: &Volume, fwhm: f64) -> Result<Volume> {
    if !(fwhm >= 0.0) {
        return Err(Error::InvalidParameter(format!("fwhm {fwhm} is negative")));
    }
    if fwhm == 0.0 {
        return Ok(img.clone());
    }
    let sp = img.grid().spacing;
    gaussian_smooth(img, sp.map(|s| s * fwhm))
}

pub(crate) fn min_max(img: &Volume) -> (f64, f64) {
    img.data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

/// Min-max to `[0, 1]` followed by a percentile clip. A constant image
/// maps to zeros.
pub fn histogram_normalize(img: &Volume, lo_pct: f64, hi_pct: f64) -> Result<Volume> {
    let (lo, hi) = min_max(img);
    let scaled = if hi > lo {
        img.map(|v| (v - lo) / (hi - lo))
    } else {
        img.map(|_| 0.0)
    };
    clip_percentiles(&scaled, lo_pct, hi_pct)
}

/// Knot ordinates of a random monotone remap of `[0, 1]`: endpoints fixed,
/// interior knots perturbed by `U(-strength, strength)` then sorted.
pub fn histogram_shift_knots(knots: usize, strength: f64, s: &mut RngStream) -> Result<Vec<f64>> {
    if knots < 2 {
        return Err(Error::InvalidParameter(format!("{knots} knots; need at least 2")));
    }
    let mut y: Vec<f64> = (0..knots).map(|k| k as f64 / (knots - 1) as f64).collect();
    for v in y.iter_mut().take(knots - 1).skip(1) {
        *v = (*v + s.uniform(-strength, strength)?).clamp(0.0, 1.0);
    }
    y.sort_by(f64::total_cmp);
    Ok(y)
}

/// Piecewise-linear remap of the image's own intensity range through the
/// given knot ordinates (abscissae evenly spaced on `[0, 1]`).
pub fn histogram_shift(img: &Volume, knots_y: &[f64]) -> Result<Volume> {
    let k = knots_y.len();
    if k < 2 {
        return Err(Error::InvalidParameter("histogram shift needs 2+ knots".into()));
    }
    let (lo, hi) = min_max(img);
    if !(hi > lo) {
        return Ok(img.clone());
    }
    let r = hi - lo;
    let seg = (k - 1) as f64;
    Ok(img.map(|v| {
        let u = ((v - lo) / r).clamp(0.0, 1.0) * seg;
        let j = (u.floor() as usize).min(k - 2);
        let t = u - j as f64;
        let y = knots_y[j] + t * (knots_y[j + 1] - knots_y[j]);
        lo + r * y
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volgrid::Grid;

    fn ramp(shape: [usize; 3]) -> Volume {
        Volume::from_fn(Grid::new(shape), |[x, y, z]| (x * x + 2 * y + 3 * z) as f64 * 0.37).unwrap()
    }

    #[test]
    fn anisotropy_identities() {
        let v = ramp([8, 6, 5]);
        let p = AnisotropyParams { factor: 1.0, axis: 0 };
        assert_eq!(simulate_anisotropy(&v, &p).unwrap(), v);
        let c = Volume::filled(Grid::new([9, 9, 9]), 4.2).unwrap();
        for axis in 0..3 {
            let out = simulate_anisotropy(&c, &AnisotropyParams { factor: 3.7, axis }).unwrap();
            assert!(out.data().iter().all(|v| (v - 4.2).abs() < 1e-12));
        }
    }

    #[test]
    fn alternating_slabs_average_out() {
        let v = Volume::from_fn(Grid::new([4, 4, 8]), |[_, _, z]| (z % 2) as f64).unwrap();
        let out = simulate_anisotropy(&v, &AnisotropyParams { factor: 2.0, axis: 2 }).unwrap();
        assert!(out.data().iter().all(|&x| (x - 0.5).abs() < 1e-12));
        assert_eq!(out.shape(), v.shape());
    }

    #[test]
    fn gamma_cases() {
        let v = ramp([5, 5, 5]);
        let g1 = gamma_contrast(&v, 1.0).unwrap();
        assert!(g1.data().iter().zip(v.data()).all(|(a, b)| (a - b).abs() < 1e-6));
        let t = Volume::new(Grid::new([3, 1, 1]), vec![10.0, 15.0, 20.0]).unwrap();
        let g2 = gamma_contrast(&t, 2.0).unwrap();
        let expect = [10.0, 12.5, 20.0];
        for (a, b) in g2.data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        let c = Volume::filled(Grid::new([2, 2, 2]), 3.0).unwrap();
        assert_eq!(gamma_contrast(&c, 0.3).unwrap(), c);
        assert!(gamma_contrast(&c, 0.0).is_err());
    }

    #[test]
    fn zero_fwhm_blur_is_identity() {
        let v = ramp([4, 4, 4]);
        assert_eq!(motion_blur(&v, 0.0).unwrap(), v);
    }

    #[test]
    fn noise_std_matches_sigma() {
        let g = Grid::new([64, 64, 64]);
        let img = Volume::filled(g.clone(), 0.0).unwrap();
        let ones = Volume::filled(g, 1.0).unwrap();
        let out = add_noise_with(&img, 2.5, &ones, &RngStream::new(12)).unwrap();
        let (_, sd) = mean_std(&out, None).unwrap();
        assert!((sd / 2.5 - 1.0).abs() < 0.02);
        let again = add_noise_with(&img, 2.5, &ones, &RngStream::new(12)).unwrap();
        assert_eq!(out, again);
    }

    #[test]
    fn noise_sigma_convention() {
        let img = ramp([8, 8, 8]);
        let (_, sd) = mean_std(&img, None).unwrap();
        let cfg = NoiseConfig {
            snr: crate::synthgen::config::Range(10.0, 10.0),
            ..NoiseConfig::default()
        };
        let (_, p) = add_noise(&img, &cfg, &mut RngStream::new(2)).unwrap();
        assert!((p.sigma - sd / 11.0).abs() < 1e-12);
    }

    #[test]
    fn skullstrip_without_flaws_masks_exactly() {
        let g = Grid::new([6, 6, 6]);
        let gm = Volume::from_fn(g.clone(), |[x, _, _]| if x < 3 { 0.8 } else { 0.2 }).unwrap();
        let other = Volume::from_fn(g.clone(), |[x, _, _]| if x < 3 { 0.0 } else { 0.7 }).unwrap();
        let st = PosteriorStack::new(vec!["gm".into(), "skull".into()], vec![gm, other]).unwrap();
        let img = Volume::filled(g, 5.0).unwrap();
        let cfg = SkullStripConfig {
            dilate_prob: 0.0,
            erode_prob: 0.0,
            ..SkullStripConfig::default()
        };
        let (out, draw) = simulate_skullstrip(&img, &brain_probability(&st).unwrap(), &cfg, &mut RngStream::new(1)).unwrap();
        assert_eq!(draw, SkullStripDraw::default());
        for i in 0..out.len() {
            let x = out.grid().coords(i)[0];
            assert_eq!(out.data()[i], if x < 3 { 5.0 } else { 0.0 });
        }
    }

    #[test]
    fn histogram_shift_is_monotone_and_neutral_at_zero() {
        let v = ramp([6, 5, 4]);
        let mut s = RngStream::new(9);
        let flat = histogram_shift_knots(5, 0.0, &mut s).unwrap();
        let same = histogram_shift(&v, &flat).unwrap();
        assert!(same.data().iter().zip(v.data()).all(|(a, b)| (a - b).abs() < 1e-9));
        let k = histogram_shift_knots(5, 0.05, &mut s).unwrap();
        assert!(k.windows(2).all(|w| w[0] <= w[1]));
        let out = histogram_shift(&v, &k).unwrap();
        let mut pairs: Vec<(f64, f64)> = v.data().iter().cloned().zip(out.data().iter().cloned()).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert!(pairs.windows(2).all(|w| w[0].1 <= w[1].1 + 1e-12));
    }

    #[test]
    fn histogram_normalize_range() {
        let v = ramp([6, 6, 6]);
        let out = histogram_normalize(&v, 1.0, 99.0).unwrap();
        let (lo, hi) = min_max(&out);
        assert!(lo >= 0.0 && hi <= 1.0);
    }
}
