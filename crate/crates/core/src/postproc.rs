//! Inference post-processing on caller-supplied channel volumes: sliding
//! window blending, flip test-time augmentation, modality ensembling,
//! softmax/argmax, entropy and pseudo-label cleanup.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::morphology::BinaryMask;
use crate::volgrid::{Field, Grid, LabelVolume, Volume};

/// `C` channel volumes on one grid (logits or probabilities).
#[derive(Debug, Clone, PartialEq)]
pub struct LogitStack {
    channels: Vec<Volume>,
}

impl LogitStack {
    pub fn new(channels: Vec<Volume>) -> Result<Self> {
        let Some(first) = channels.first() else {
            return Err(Error::Empty("logit stack has no channels".into()));
        };
        for (c, v) in channels.iter().enumerate() {
            first.ensure_same_grid(v, "logit stack")?;
            if let Some(bad) = v.data().iter().find(|x| !x.is_finite()) {
                return Err(Error::InvalidVolume(format!("channel {c} holds {bad}")));
            }
        }
        Ok(Self { channels })
    }

    /// Constant value per channel.
    pub fn constant(grid: &Grid, values: &[f64]) -> Result<Self> {
        Self::new(
            values
                .iter()
                .map(|&v| Volume::filled(grid.clone(), v))
                .collect::<Result<_>>()?,
        )
    }

    pub fn grid(&self) -> &Grid {
        self.channels[0].grid()
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn channels(&self) -> &[Volume] {
        &self.channels
    }

    pub fn channel(&self, c: usize) -> &Volume {
        &self.channels[c]
    }

    pub fn into_channels(self) -> Vec<Volume> {
        self.channels
    }

    pub fn flip(&self, axes: [bool; 3]) -> Self {
        Self {
            channels: self.channels.iter().map(|v| v.flip(axes)).collect(),
        }
    }

    fn ensure_compatible(&self, other: &LogitStack) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::InvalidParameter(format!(
                "channel count {} vs {}",
                self.len(),
                other.len()
            )));
        }
        self.channels[0].ensure_same_grid(&other.channels[0], "logit stacks")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchSpec {
    pub patch_size: [usize; 3],
    pub overlap: f64,
    /// Gaussian sigma as a fraction of the patch size.
    pub blend_sigma: f64,
}

impl Default for PatchSpec {
    fn default() -> Self {
        Self {
            patch_size: [192; 3],
            overlap: 0.5,
            blend_sigma: 0.125,
        }
    }
}

impl PatchSpec {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size.iter().any(|&n| n == 0) {
            return Err(Error::DegenerateShape(self.patch_size));
        }
        if !(self.overlap >= 0.0 && self.overlap < 1.0) {
            return Err(Error::InvalidParameter(format!("overlap {} outside [0, 1)", self.overlap)));
        }
        if !(self.blend_sigma > 0.0) {
            return Err(Error::InvalidParameter("blend sigma must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchWindow {
    pub offset: [usize; 3],
    pub size: [usize; 3],
}

fn axis_offsets(n: usize, size: usize, overlap: f64) -> Vec<usize> {
    if n <= size {
        return vec![0];
    }
    let stride = ((size as f64 * (1.0 - overlap)).floor() as usize).max(1);
    let mut out = Vec::new();
    let mut off = 0;
    while off + size < n {
        out.push(off);
        off += stride;
    }
    out.push(n - size);
    out.dedup();
    out
}

/// Sliding windows with stride `size * (1 - overlap)`; the last window on
/// each axis is moved back to end at the volume edge. Axes shorter than the
/// patch get one window of the full extent. Ordered x fastest.
pub fn plan_patches(shape: [usize; 3], spec: &PatchSpec) -> Result<Vec<PatchWindow>> {
    spec.validate()?;
    if shape.iter().any(|&n| n == 0) {
        return Err(Error::DegenerateShape(shape));
    }
    let size = [0, 1, 2].map(|a| spec.patch_size[a].min(shape[a]));
    let offs = [0, 1, 2].map(|a| axis_offsets(shape[a], size[a], spec.overlap));
    let mut out = Vec::new();
    for &z in &offs[2] {
        for &y in &offs[1] {
            for &x in &offs[0] {
                out.push(PatchWindow {
                    offset: [x, y, z],
                    size,
                });
            }
        }
    }
    Ok(out)
}

/// Floor applied to blend weights.
pub const WEIGHT_FLOOR: f64 = 1e-8;

/// Normalised in-patch coordinate `i / (n - 1) - 0.5`.
pub fn patch_coordinate(i: usize, n: usize) -> f64 {
    if n <= 1 {
        0.0
    } else {
        i as f64 / (n - 1) as f64 - 0.5
    }
}

/// `max(exp(-|u|^2 / (2 sigma^2)), 1e-8)`.
pub fn blend_weight(u: [f64; 3], sigma: f64) -> f64 {
    let r2 = u[0] * u[0] + u[1] * u[1] + u[2] * u[2];
    (-r2 / (2.0 * sigma * sigma)).exp().max(WEIGHT_FLOOR)
}

/// Weighted average of overlapping patch predictions. Contributions are
/// folded in window order as a running weighted mean, so a single patch or
/// repeated identical patches reproduce their values exactly.
pub fn blend_patches(
    patches: &[LogitStack],
    windows: &[PatchWindow],
    out_grid: &Grid,
    spec: &PatchSpec,
) -> Result<LogitStack> {
    spec.validate()?;
    if patches.len() != windows.len() || patches.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "{} patches for {} windows",
            patches.len(),
            windows.len()
        )));
    }
    let c = patches[0].len();
    let shape = out_grid.shape;
    for (p, w) in patches.iter().zip(windows) {
        if p.len() != c {
            return Err(Error::InvalidParameter("patches differ in channel count".into()));
        }
        if p.grid().shape != w.size || (0..3).any(|a| w.offset[a] + w.size[a] > shape[a]) {
            return Err(Error::InvalidParameter(format!(
                "patch {:?} does not fit window {:?} in {:?}",
                p.grid().shape,
                w,
                shape
            )));
        }
    }
    let n = out_grid.len();
    let mut mean = vec![vec![0.0; n]; c];
    let mut total = vec![0.0; n];
    for (p, w) in patches.iter().zip(windows) {
        let [sx, sy, sz] = w.size;
        let ux: Vec<f64> = (0..sx).map(|i| patch_coordinate(i, sx)).collect();
        let uy: Vec<f64> = (0..sy).map(|i| patch_coordinate(i, sy)).collect();
        let uz: Vec<f64> = (0..sz).map(|i| patch_coordinate(i, sz)).collect();
        for z in 0..sz {
            for y in 0..sy {
                for x in 0..sx {
                    let wt = blend_weight([ux[x], uy[y], uz[z]], spec.blend_sigma);
                    let o = out_grid.index(x + w.offset[0], y + w.offset[1], z + w.offset[2]);
                    let pi = x + sx * (y + sy * z);
                    total[o] += wt;
                    let f = wt / total[o];
                    for ch in 0..c {
                        let m = &mut mean[ch][o];
                        *m += f * (p.channels[ch].data()[pi] - *m);
                    }
                }
            }
        }
    }
    if let Some(i) = total.iter().position(|&t| !(t > 0.0)) {
        return Err(Error::InvalidParameter(format!(
            "voxel {:?} not covered by any window",
            out_grid.coords(i)
        )));
    }
    LogitStack::new(
        mean.into_iter()
            .map(|d| Volume::new(out_grid.clone(), d))
            .collect::<Result<_>>()?,
    )
}

/// Flip subset `k` (bit 0 = x, bit 1 = y, bit 2 = z).
pub fn flip_subset(k: usize) -> [bool; 3] {
    [k & 1 != 0, k & 2 != 0, k & 4 != 0]
}

/// Average of `infer` over all eight axis-flip combinations, each result
/// flipped back before averaging. Subsets may run concurrently; the
/// reduction is always the pairwise sum
/// `((s0 + s1) + (s2 + s3)) + ((s4 + s5) + (s6 + s7))` over subsets in
/// bitmask order, divided by 8.
pub fn tta_flips<F>(infer: F, img: &Volume) -> Result<LogitStack>
where
    F: Fn(&Volume) -> Result<LogitStack> + Sync,
{
    let results: Vec<LogitStack> = (0..8usize)
        .into_par_iter()
        .map(|k| {
            let axes = flip_subset(k);
            let out = infer(&img.flip(axes)).map_err(|e| Error::Inference {
                axes,
                message: e.to_string(),
            })?;
            if out.grid().shape != img.shape() {
                return Err(Error::Inference {
                    axes,
                    message: format!("output shape {:?} != input {:?}", out.grid().shape, img.shape()),
                });
            }
            Ok(out.flip(axes))
        })
        .collect::<Result<_>>()?;
    pairwise_mean8(&results)
}

/// Merges eight outputs computed on flipped inputs, given in flip-subset
/// order and still in flipped space: each is flipped back, then averaged
/// as in [`tta_flips`].
pub fn merge_tta(outputs: &[LogitStack]) -> Result<LogitStack> {
    if outputs.len() != 8 {
        return Err(Error::InvalidParameter(format!(
            "flip averaging needs 8 outputs, got {}",
            outputs.len()
        )));
    }
    let back: Vec<LogitStack> = outputs
        .iter()
        .enumerate()
        .map(|(k, o)| o.flip(flip_subset(k)))
        .collect();
    pairwise_mean8(&back)
}

fn pairwise_mean8(results: &[LogitStack]) -> Result<LogitStack> {
    for r in &results[1..] {
        results[0].ensure_compatible(r)?;
    }
    let c = results[0].len();
    let grid = results[0].grid().clone();
    let channels = (0..c)
        .map(|ch| {
            let d: Vec<&[f64]> = results.iter().map(|r| r.channels[ch].data()).collect();
            let data = (0..grid.len())
                .map(|i| {
                    let s = ((d[0][i] + d[1][i]) + (d[2][i] + d[3][i]))
                        + ((d[4][i] + d[5][i]) + (d[6][i] + d[7][i]));
                    s / 8.0
                })
                .collect();
            Volume::new(grid.clone(), data)
        })
        .collect::<Result<_>>()?;
    LogitStack::new(channels)
}

/// Voxelwise mean of logits across stacks, summed in input order.
pub fn ensemble_modalities(stacks: &[LogitStack]) -> Result<LogitStack> {
    let Some(first) = stacks.first() else {
        return Err(Error::Empty("no stacks to ensemble".into()));
    };
    for s in &stacks[1..] {
        first.ensure_compatible(s)?;
    }
    if stacks.len() == 1 {
        return Ok(first.clone());
    }
    let k = stacks.len() as f64;
    let grid = first.grid().clone();
    let channels = (0..first.len())
        .map(|ch| {
            let mut acc = first.channels[ch].data().to_vec();
            for s in &stacks[1..] {
                acc.iter_mut().zip(s.channels[ch].data()).for_each(|(a, b)| *a += b);
            }
            acc.iter_mut().for_each(|a| *a /= k);
            Volume::new(grid.clone(), acc)
        })
        .collect::<Result<_>>()?;
    LogitStack::new(channels)
}

/// Max-subtracted softmax across channels.
pub fn softmax(stack: &LogitStack) -> LogitStack {
    let c = stack.len();
    let n = stack.grid().len();
    let mut out = vec![vec![0.0; n]; c];
    let mut buf = vec![0.0; c];
    for i in 0..n {
        let m = (0..c).map(|ch| stack.channels[ch].data()[i]).fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for ch in 0..c {
            buf[ch] = (stack.channels[ch].data()[i] - m).exp();
            sum += buf[ch];
        }
        for ch in 0..c {
            out[ch][i] = buf[ch] / sum;
        }
    }
    let grid = stack.grid().clone();
    LogitStack {
        channels: out
            .into_iter()
            .map(|d| Volume::new(grid.clone(), d).expect("grid unchanged"))
            .collect(),
    }
}

/// Channel index of the per-voxel maximum; ties go to the lowest channel.
pub fn argmax_label(stack: &LogitStack) -> LabelVolume {
    let n = stack.grid().len();
    let data = (0..n)
        .map(|i| {
            let mut best = 0;
            for ch in 1..stack.len() {
                if stack.channels[ch].data()[i] > stack.channels[best].data()[i] {
                    best = ch;
                }
            }
            best as u32
        })
        .collect();
    LabelVolume::new(stack.grid().clone(), data).expect("grid unchanged")
}

pub fn lesion_binary(label: &LabelVolume, lesion_channel: u32) -> BinaryMask {
    label.map(|v| v == lesion_channel)
}

/// Natural-log Shannon entropy per voxel with `0 log 0 = 0`.
pub fn entropy_map(prob: &LogitStack) -> Volume {
    let n = prob.grid().len();
    let data = (0..n)
        .map(|i| {
            let h: f64 = prob
                .channels
                .iter()
                .map(|v| {
                    let p = v.data()[i];
                    if p > 0.0 {
                        -p * p.ln()
                    } else {
                        0.0
                    }
                })
                .sum();
            h.max(0.0)
        })
        .collect();
    Volume::new(prob.grid().clone(), data).expect("grid unchanged")
}

/// `1.5 / C`.
pub fn pl_threshold(channels: usize) -> f64 {
    1.5 / channels as f64
}

/// Per-class pseudo-label masks; a class is valid when its mask is
/// non-empty.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabels {
    pub threshold: f64,
    pub masks: Vec<BinaryMask>,
    pub valid: Vec<bool>,
}

impl PseudoLabels {
    fn from_masks(threshold: f64, masks: Vec<BinaryMask>) -> Self {
        let valid = masks.iter().map(|m| m.data().iter().any(|&b| b)).collect();
        Self {
            threshold,
            masks,
            valid,
        }
    }
}

/// `mask_c = p_c >= 1.5 / C`.
pub fn pseudo_label_pl(prob: &LogitStack) -> Result<PseudoLabels> {
    if prob.len() < 2 {
        return Err(Error::InvalidParameter("pseudo-labels need at least 2 channels".into()));
    }
    let t = pl_threshold(prob.len());
    let masks = prob.channels.iter().map(|v| v.map(|p| p >= t)).collect();
    Ok(PseudoLabels::from_masks(t, masks))
}

/// Default uncertainty cut-off for [`pseudo_label_upl`].
pub const UPL_THRESHOLD: f64 = 0.05;

/// Population standard deviation of channel `c` across samples.
pub fn probability_std(samples: &[LogitStack], c: usize) -> Result<Volume> {
    if samples.len() < 2 {
        return Err(Error::InvalidParameter("uncertainty needs at least 2 samples".into()));
    }
    for s in &samples[1..] {
        samples[0].ensure_compatible(s)?;
    }
    let k = samples.len() as f64;
    let grid = samples[0].grid().clone();
    let data = (0..grid.len())
        .map(|i| {
            let mean = samples.iter().map(|s| s.channels[c].data()[i]).sum::<f64>() / k;
            let var = samples
                .iter()
                .map(|s| (s.channels[c].data()[i] - mean).powi(2))
                .sum::<f64>()
                / k;
            var.sqrt()
        })
        .collect();
    Volume::new(grid, data)
}

/// Removes pseudo-label voxels whose class probability varies across
/// stochastic samples by more than `threshold` (population std).
pub fn pseudo_label_upl(
    samples: &[LogitStack],
    base: &PseudoLabels,
    threshold: f64,
) -> Result<PseudoLabels> {
    if samples.len() < 2 {
        return Err(Error::InvalidParameter("uncertainty needs at least 2 samples".into()));
    }
    if samples[0].len() != base.masks.len() {
        return Err(Error::InvalidParameter(format!(
            "{} channels vs {} pseudo-label classes",
            samples[0].len(),
            base.masks.len()
        )));
    }
    let mut masks = Vec::with_capacity(base.masks.len());
    for (c, m) in base.masks.iter().enumerate() {
        let sd = probability_std(samples, c)?;
        m.ensure_same_grid(&sd, "pseudo-label vs samples")?;
        let data = m
            .data()
            .iter()
            .zip(sd.data())
            .map(|(&b, &u)| b && u <= threshold)
            .collect();
        masks.push(Field::new(m.grid().clone(), data)?);
    }
    Ok(PseudoLabels::from_masks(base.threshold, masks))
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Class prototypes (mean feature vector over each class's pseudo-label
/// voxels); `None` for classes without voxels.
pub fn class_prototypes(features: &[Volume], base: &PseudoLabels) -> Result<Vec<Option<Vec<f64>>>> {
    let Some(f0) = features.first() else {
        return Err(Error::Empty("no feature channels".into()));
    };
    for f in features {
        f0.ensure_same_grid(f, "feature channels")?;
    }
    base.masks
        .iter()
        .map(|m| {
            f0.ensure_same_grid(m, "features vs pseudo-labels")?;
            let idx: Vec<usize> = (0..m.len()).filter(|&i| m.data()[i]).collect();
            if idx.is_empty() {
                return Ok(None);
            }
            Ok(Some(
                features
                    .iter()
                    .map(|f| idx.iter().map(|&i| f.data()[i]).sum::<f64>() / idx.len() as f64)
                    .collect(),
            ))
        })
        .collect()
}

/// Keeps a class-`c` pseudo-label voxel only if its feature vector is at
/// least as cosine-similar to prototype `c` as to every other available
/// prototype.
pub fn pseudo_label_dpl(features: &[Volume], base: &PseudoLabels) -> Result<PseudoLabels> {
    let protos = class_prototypes(features, base)?;
    let mut feat = vec![0.0; features.len()];
    let mut masks = Vec::with_capacity(base.masks.len());
    for (c, m) in base.masks.iter().enumerate() {
        let Some(own) = &protos[c] else {
            masks.push(m.map(|_| false));
            continue;
        };
        let mut data = m.data().to_vec();
        for (i, keep) in data.iter_mut().enumerate() {
            if !*keep {
                continue;
            }
            for (k, f) in features.iter().enumerate() {
                feat[k] = f.data()[i];
            }
            let s_own = cosine(&feat, own);
            *keep = protos
                .iter()
                .enumerate()
                .filter(|(k, _)| *k != c)
                .filter_map(|(_, p)| p.as_ref())
                .all(|p| s_own >= cosine(&feat, p));
        }
        masks.push(Field::new(m.grid().clone(), data)?);
    }
    Ok(PseudoLabels::from_masks(base.threshold, masks))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stack(grid: &Grid, f: impl Fn(usize, [usize; 3]) -> f64 + Sync, c: usize) -> LogitStack {
        LogitStack::new(
            (0..c)
                .map(|ch| Volume::from_fn(grid.clone(), |p| f(ch, p)).unwrap())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn plan_offsets() {
        let spec = PatchSpec::default();
        let w = plan_patches([288, 288, 288], &spec).unwrap();
        let xs: Vec<usize> = w.iter().map(|w| w.offset[0]).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
        assert_eq!(xs, vec![0, 96]);
        assert_eq!(w.len(), 8);
        assert_eq!(plan_patches([192; 3], &spec).unwrap().len(), 1);
    }

    #[test]
    fn plan_covers_volume() {
        let spec = PatchSpec {
            patch_size: [5, 4, 3],
            overlap: 0.3,
            blend_sigma: 0.125,
        };
        for shape in [[5, 4, 3], [11, 9, 7], [17, 4, 10]] {
            let w = plan_patches(shape, &spec).unwrap();
            let mut cover = vec![0; shape.iter().product()];
            for win in &w {
                for z in 0..win.size[2] {
                    for y in 0..win.size[1] {
                        for x in 0..win.size[0] {
                            let (a, b, c) = (x + win.offset[0], y + win.offset[1], z + win.offset[2]);
                            cover[a + shape[0] * (b + shape[1] * c)] += 1;
                        }
                    }
                }
            }
            assert!(cover.iter().all(|&n| n >= 1));
        }
    }

    #[test]
    fn single_and_duplicate_patch_identities() {
        let g = Grid::new([6, 5, 4]);
        let s = stack(&g, |c, [x, y, z]| (c as f64 + 1.0) * (x as f64 * 0.37 - y as f64 + z as f64 * 1.3), 3);
        let spec = PatchSpec {
            patch_size: [6, 5, 4],
            ..PatchSpec::default()
        };
        let win = plan_patches(g.shape, &spec).unwrap();
        assert_eq!(blend_patches(&[s.clone()], &win, &g, &spec).unwrap(), s);
        let two = vec![win[0], win[0]];
        assert_eq!(blend_patches(&[s.clone(), s.clone()], &two, &g, &spec).unwrap(), s);
    }

    #[test]
    fn blend_weight_center_vs_corner() {
        let c = blend_weight([0.0; 3], 0.125);
        let k = blend_weight([0.5; 3], 0.125);
        assert_eq!(c, 1.0);
        assert_eq!(k, (-0.75f64 / (2.0 * 0.015625)).exp().max(1e-8));
        assert_eq!(k, WEIGHT_FLOOR);
        let face = blend_weight([0.5, 0.0, 0.0], 0.125);
        assert!((face - (-8.0f64).exp()).abs() < 1e-18);
        assert_eq!(blend_weight([0.5; 3], 0.01), WEIGHT_FLOOR);
    }

    #[test]
    fn tta_equivariant_is_plain() {
        let g = Grid::new([5, 4, 3]);
        let img = Volume::from_fn(g.clone(), |[x, y, z]| (x * 7 + y * 3 + z) as f64 * 0.1).unwrap();
        let infer = |v: &Volume| LogitStack::new(vec![v.map(|a| 2.0 * a), v.map(|a| -a + 1.0)]);
        let plain = infer(&img).unwrap();
        let tta = tta_flips(infer, &img).unwrap();
        for (a, b) in tta.channels().iter().zip(plain.channels()) {
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| (x - y).abs() < 1e-12));
        }
        let constant = tta_flips(|v: &Volume| LogitStack::constant(v.grid(), &[0.3, 0.7]), &img).unwrap();
        assert!(constant.channel(1).data().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn tta_error_names_flip() {
        let img = Volume::filled(Grid::new([2, 2, 2]), 1.0).unwrap();
        let err = tta_flips(
            |v: &Volume| {
                if v.data()[0] == 1.0 {
                    Err(Error::InvalidParameter("boom".into()))
                } else {
                    LogitStack::constant(v.grid(), &[0.0])
                }
            },
            &img,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Inference { axes: [false, false, false], .. }));
    }

    #[test]
    fn ensemble_and_softmax() {
        let g = Grid::new([2, 2, 2]);
        let a = LogitStack::constant(&g, &[1.0, -2.0]).unwrap();
        let b = LogitStack::constant(&g, &[3.0, 2.0]).unwrap();
        let m = ensemble_modalities(&[a.clone(), b]).unwrap();
        assert!(m.channel(0).data().iter().all(|&v| v == 2.0));
        assert_eq!(ensemble_modalities(&[a.clone()]).unwrap(), a);
        let neg = LogitStack::constant(&g, &[-1.0, 2.0]).unwrap();
        let z = ensemble_modalities(&[a, neg]).unwrap();
        let p = softmax(&z);
        assert!(p.channel(0).data().iter().all(|&v| v == 0.5));

        let big = LogitStack::constant(&g, &[1000.0, 0.0, 0.0]).unwrap();
        let p = softmax(&big);
        assert!(p.channel(0).data().iter().all(|&v| (v - 1.0).abs() < 1e-12));
        let eq = softmax(&LogitStack::constant(&g, &[0.5; 6]).unwrap());
        assert!(eq.channel(3).data().iter().all(|&v| (v - 1.0 / 6.0).abs() < 1e-15));
    }

    #[test]
    fn argmax_ties_low() {
        let g = Grid::new([1, 1, 1]);
        let s = LogitStack::constant(&g, &[0.2, 0.4, 0.4]).unwrap();
        assert_eq!(argmax_label(&s).data(), &[1]);
        assert!(lesion_binary(&argmax_label(&s), 1).data()[0]);
    }

    #[test]
    fn entropy_values() {
        let g = Grid::new([1, 1, 1]);
        let u = LogitStack::constant(&g, &[1.0 / 6.0; 6]).unwrap();
        assert!((entropy_map(&u).data()[0] - 6f64.ln()).abs() < 1e-12);
        let one = LogitStack::constant(&g, &[0.0, 1.0, 0.0]).unwrap();
        assert_eq!(entropy_map(&one).data()[0], 0.0);
        let half = LogitStack::constant(&g, &[0.5, 0.5, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert!((entropy_map(&half).data()[0] - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn pl_thresholds() {
        assert_eq!(pl_threshold(6), 0.25);
        assert_eq!(pl_threshold(2), 0.75);
        let g = Grid::new([2, 2, 2]);
        let u = LogitStack::constant(&g, &[1.0 / 6.0; 6]).unwrap();
        let pl = pseudo_label_pl(&u).unwrap();
        assert!(pl.valid.iter().all(|&v| !v));
    }

    #[test]
    fn upl_examples() {
        let g = Grid::new([1, 1, 1]);
        let s1 = LogitStack::constant(&g, &[0.8, 0.2]).unwrap();
        let s2 = LogitStack::constant(&g, &[0.2, 0.8]).unwrap();
        let base = pseudo_label_pl(&LogitStack::constant(&g, &[0.1, 0.9]).unwrap()).unwrap();
        assert!(base.valid[1]);
        let sd = probability_std(&[s1.clone(), s2.clone()], 1).unwrap();
        assert!((sd.data()[0] - 0.3).abs() < 1e-12);
        let out = pseudo_label_upl(&[s1.clone(), s2], &base, UPL_THRESHOLD).unwrap();
        assert!(!out.valid[1]);
        let same = pseudo_label_upl(&[s1.clone(), s1.clone()], &base, UPL_THRESHOLD).unwrap();
        assert_eq!(same, base);
        assert!(pseudo_label_upl(&[s1], &base, UPL_THRESHOLD).is_err());
    }

    #[test]
    fn dpl_examples() {
        let g = Grid::new([4, 1, 1]);
        let m0 = BinaryMask::from_fn(g.clone(), |[x, _, _]| x < 2).unwrap();
        let m1 = BinaryMask::from_fn(g.clone(), |[x, _, _]| x >= 2).unwrap();
        let base = PseudoLabels::from_masks(0.75, vec![m0.clone(), m1.clone()]);
        let f0 = Volume::from_fn(g.clone(), |[x, _, _]| if x < 2 { 1.0 } else { 0.0 }).unwrap();
        let f1 = Volume::from_fn(g.clone(), |[x, _, _]| if x < 2 { 0.0 } else { 1.0 }).unwrap();
        let out = pseudo_label_dpl(&[f0, f1], &base).unwrap();
        assert_eq!(out.masks, vec![m0.clone(), m1.clone()]);

        // Voxel 1 carries the other class's feature.
        let f0 = Volume::from_fn(g.clone(), |[x, _, _]| if x == 0 { 1.0 } else { 0.0 }).unwrap();
        let f1 = Volume::from_fn(g.clone(), |[x, _, _]| if x == 0 { 0.0 } else { 1.0 }).unwrap();
        let out = pseudo_label_dpl(&[f0, f1], &base).unwrap();
        assert!(out.masks[0].data()[0] && !out.masks[0].data()[1]);

        let same = Volume::filled(g.clone(), 2.0).unwrap();
        let single = PseudoLabels::from_masks(0.75, vec![BinaryMask::filled(g.clone(), false).unwrap(), m1.clone()]);
        let out = pseudo_label_dpl(&[same], &single).unwrap();
        assert_eq!(out.masks[1], m1);
        assert!(!out.valid[0]);
    }
}
