//! Lesion segmentation metrics.
//!
//! Masks are first brought onto a shared 1 mm RAS grid padded to at least
//! 256 voxels per axis ([`prepare_pair`]); the metric functions themselves
//! work on any pair of masks that share a grid.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::morphology::{self, BinaryMask, Connectivity};
use crate::volgrid::{pad_offset, percentile_sorted, resample_labels, AffineTransform, Grid};

/// HD95 reported when exactly one mask is empty.
pub const HD95_EMPTY: f64 = 256.0;
/// Minimum padded extent of the evaluation grid.
pub const EVAL_EXTENT: usize = 256;

/// Resamples both masks (nearest neighbour) onto a shared 1 mm grid with
/// identity direction that covers both footprints, centred in a box of at
/// least 256 voxels per axis.
pub fn prepare_pair(pred: &BinaryMask, gt: &BinaryMask) -> Result<(BinaryMask, BinaryMask)> {
    let (plo, phi) = pred.grid().world_bounds();
    let (glo, ghi) = gt.grid().world_bounds();
    if (0..3).any(|a| phi[a].min(ghi[a]) <= plo[a].max(glo[a])) {
        return Err(Error::DisjointExtents);
    }
    let lo = [0, 1, 2].map(|a| plo[a].min(glo[a]));
    let hi = [0, 1, 2].map(|a| phi[a].max(ghi[a]));
    let shape = [0, 1, 2].map(|a| ((hi[a] - lo[a]) - 1e-6).ceil().max(1.0) as usize);
    let base = Grid::new(shape)
        .with_spacing([1.0; 3])
        .with_origin([0, 1, 2].map(|a| lo[a] + 0.5));
    let size = shape.map(|n| n.max(EVAL_EXTENT));
    let target = base.subgrid(pad_offset(shape, size), size);
    let to_target = |m: &BinaryMask| -> Result<BinaryMask> {
        if m.grid().same_geometry(&target, 1e-9) {
            return Ok(m.clone());
        }
        let l = resample_labels(&m.map(u32::from), &target, &AffineTransform::identity(), 0)?;
        Ok(l.map(|v| v != 0))
    };
    Ok((to_target(pred)?, to_target(gt)?))
}

fn check(pred: &BinaryMask, gt: &BinaryMask) -> Result<()> {
    pred.ensure_same_grid(gt, "prediction vs ground truth")
}

fn overlap(pred: &BinaryMask, gt: &BinaryMask) -> usize {
    pred.data().iter().zip(gt.data()).filter(|(&p, &g)| p && g).count()
}

/// `2|P ∩ G| / (|P| + |G|)`; two empty masks score 1.
pub fn dice(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    check(pred, gt)?;
    let (p, g) = (morphology::count(pred), morphology::count(gt));
    if p + g == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * overlap(pred, gt) as f64 / (p + g) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hd95Mode {
    /// 95th percentile of both directed distance sets pooled together.
    #[default]
    Pooled,
    /// Larger of the two directed 95th percentiles.
    MaxOfSides,
}

/// Distances (mm) from each voxel of `from` to the nearest voxel of `to`.
fn directed_distances(from: &BinaryMask, to: &BinaryMask) -> Vec<f64> {
    let d2 = morphology::edt_squared(to, from.grid().spacing);
    from.data()
        .iter()
        .zip(d2)
        .filter_map(|(&s, d)| s.then(|| d.sqrt()))
        .collect()
}

fn p95(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    percentile_sorted(&v, 95.0)
}

/// 95th-percentile symmetric surface distance in mm. One empty mask gives
/// 256; two empty masks give 0.
pub fn hd95(pred: &BinaryMask, gt: &BinaryMask, mode: Hd95Mode) -> Result<f64> {
    check(pred, gt)?;
    let (p, g) = (morphology::count(pred), morphology::count(gt));
    match (p, g) {
        (0, 0) => return Ok(0.0),
        (0, _) | (_, 0) => return Ok(HD95_EMPTY),
        _ => {}
    }
    let sp = morphology::surface(pred);
    let sg = morphology::surface(gt);
    let a = directed_distances(&sp, &sg);
    let b = directed_distances(&sg, &sp);
    Ok(match mode {
        Hd95Mode::Pooled => p95([a, b].concat()),
        Hd95Mode::MaxOfSides => p95(a).max(p95(b)),
    })
}

/// Absolute volume difference in cm³.
pub fn avd(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    check(pred, gt)?;
    let diff = morphology::count(pred).abs_diff(morphology::count(gt));
    Ok(diff as f64 * pred.grid().voxel_volume_mm3() / 1000.0)
}

/// Absolute difference of 26-connected component counts.
pub fn ald(pred: &BinaryMask, gt: &BinaryMask) -> Result<u64> {
    check(pred, gt)?;
    let (_, np) = morphology::connected_components(pred, Connectivity::TwentySix);
    let (_, ng) = morphology::connected_components(gt, Connectivity::TwentySix);
    Ok(np.abs_diff(ng) as u64)
}

/// Lesion-level counts: ground-truth lesions hit, missed, and predicted
/// lesions touching no ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LesionCounts {
    pub tp: usize,
    pub fn_: usize,
    pub fp: usize,
}

pub fn lesion_counts(pred: &BinaryMask, gt: &BinaryMask) -> Result<LesionCounts> {
    check(pred, gt)?;
    let (lp, np) = morphology::connected_components(pred, Connectivity::TwentySix);
    let (lg, ng) = morphology::connected_components(gt, Connectivity::TwentySix);
    let mut gt_hit = vec![false; ng + 1];
    let mut pred_hit = vec![false; np + 1];
    for (&a, &b) in lp.data().iter().zip(lg.data()) {
        if a != 0 && b != 0 {
            pred_hit[a as usize] = true;
            gt_hit[b as usize] = true;
        }
    }
    let tp = gt_hit[1..].iter().filter(|&&h| h).count();
    Ok(LesionCounts {
        tp,
        fn_: ng - tp,
        fp: pred_hit[1..].iter().filter(|&&h| !h).count(),
    })
}

/// Lesion-wise F1 where one overlapping voxel counts as a detection. Two
/// empty masks score 1.
pub fn lesion_f1(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    let c = lesion_counts(pred, gt)?;
    let den = 2 * c.tp + c.fp + c.fn_;
    Ok(if den == 0 { 1.0 } else { 2.0 * c.tp as f64 / den as f64 })
}

/// Voxel sensitivity. Empty ground truth: 1 if the prediction is also
/// empty, else 0.
pub fn tpr(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    check(pred, gt)?;
    let g = morphology::count(gt);
    if g == 0 {
        return Ok(if morphology::count(pred) == 0 { 1.0 } else { 0.0 });
    }
    Ok(overlap(pred, gt) as f64 / g as f64)
}

/// Voxel false-positive rate `FP / (FP + TN)`; 0 when there is no
/// background.
pub fn fpr(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    check(pred, gt)?;
    let neg = gt.len() - morphology::count(gt);
    if neg == 0 {
        return Ok(0.0);
    }
    let fp = pred.data().iter().zip(gt.data()).filter(|(&p, &g)| p && !g).count();
    Ok(fp as f64 / neg as f64)
}

/// One evaluated case; field order is the CSV column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub case_id: String,
    pub modality: String,
    pub dice: f64,
    pub hd95: f64,
    pub avd: f64,
    pub ald: u64,
    pub lf1: f64,
    pub tpr: f64,
    pub fpr: f64,
}

pub const METRIC_NAMES: [&str; 7] = ["dice", "hd95", "avd", "ald", "lf1", "tpr", "fpr"];

impl MetricReport {
    /// Metric values in [`METRIC_NAMES`] order.
    pub fn values(&self) -> [f64; 7] {
        [
            self.dice,
            self.hd95,
            self.avd,
            self.ald as f64,
            self.lf1,
            self.tpr,
            self.fpr,
        ]
    }
}

/// All metrics on masks that already share a grid.
pub fn compute_metrics(
    pred: &BinaryMask,
    gt: &BinaryMask,
    case_id: &str,
    modality: &str,
    mode: Hd95Mode,
) -> Result<MetricReport> {
    Ok(MetricReport {
        case_id: case_id.to_owned(),
        modality: modality.to_owned(),
        dice: dice(pred, gt)?,
        hd95: hd95(pred, gt, mode)?,
        avd: avd(pred, gt)?,
        ald: ald(pred, gt)?,
        lf1: lesion_f1(pred, gt)?,
        tpr: tpr(pred, gt)?,
        fpr: fpr(pred, gt)?,
    })
}

/// [`prepare_pair`] followed by [`compute_metrics`].
pub fn evaluate_case(
    pred: &BinaryMask,
    gt: &BinaryMask,
    case_id: &str,
    modality: &str,
    mode: Hd95Mode,
) -> Result<MetricReport> {
    let (p, g) = prepare_pair(pred, gt)?;
    compute_metrics(&p, &g, case_id, modality, mode)
}

/// `t_{0.975, df}`, by bisection on the Student-t CDF.
pub fn t_quantile_975(df: f64) -> Result<f64> {
    let t = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while t.cdf(hi) < 0.975 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if t.cdf(mid) < 0.975 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    /// Two-sided 95% Student-t interval; absent for fewer than two values.
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
}

/// Standard-deviation convention used inside the t-interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpreadConvention {
    /// Divide by `n`.
    #[default]
    Population,
    /// Divide by `n - 1`.
    Sample,
}

/// Mean, median and t-interval of one sample:
/// `mean ± t_{0.975, n-1} * sd / sqrt(n)`.
pub fn summarize_values(metric: &str, values: &[f64]) -> Result<MetricSummary> {
    summarize_values_with(metric, values, SpreadConvention::default())
}

pub fn summarize_values_with(
    metric: &str,
    values: &[f64],
    spread: SpreadConvention,
) -> Result<MetricSummary> {
    let n = values.len();
    if n == 0 {
        return Err(Error::Empty(format!("no values for {metric}")));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = percentile_sorted(&sorted, 50.0);
    let (ci_low, ci_high) = if n >= 2 {
        let ss = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
        let dof = match spread {
            SpreadConvention::Population => n,
            SpreadConvention::Sample => n - 1,
        };
        let sd = (ss / dof as f64).sqrt();
        let half = t_quantile_975((n - 1) as f64)? * sd / (n as f64).sqrt();
        (Some(mean - half), Some(mean + half))
    } else {
        (None, None)
    };
    Ok(MetricSummary {
        metric: metric.to_owned(),
        n,
        mean,
        median,
        ci_low,
        ci_high,
    })
}

/// One summary row per metric.
pub fn summarize(reports: &[MetricReport]) -> Result<Vec<MetricSummary>> {
    summarize_with(reports, SpreadConvention::default())
}

pub fn summarize_with(
    reports: &[MetricReport],
    spread: SpreadConvention,
) -> Result<Vec<MetricSummary>> {
    METRIC_NAMES
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let v: Vec<f64> = reports.iter().map(|r| r.values()[k]).collect();
            summarize_values_with(name, &v, spread)
        })
        .collect()
}

pub fn write_reports_csv(reports: &[MetricReport], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if reports.is_empty() {
        w.write_record([
            "case_id", "modality", "dice", "hd95", "avd", "ald", "lf1", "tpr", "fpr",
        ])?;
    }
    for r in reports {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn read_reports_csv(path: &Path) -> Result<Vec<MetricReport>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| Ok(row?)).collect()
}

pub fn write_summary_csv(rows: &[MetricSummary], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Fixed-width text rendering of a summary.
pub fn summary_table(rows: &[MetricSummary]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<8} {:>5} {:>12} {:>12} {:>27}",
        "metric", "n", "mean", "median", "95% CI"
    );
    for r in rows {
        let ci = match (r.ci_low, r.ci_high) {
            (Some(a), Some(b)) => format!("[{a:.4}, {b:.4}]"),
            _ => "-".to_owned(),
        };
        let _ = writeln!(
            s,
            "{:<8} {:>5} {:>12.4} {:>12.4} {:>27}",
            r.metric, r.n, r.mean, r.median, ci
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(shape: [usize; 3], on: &[[usize; 3]]) -> BinaryMask {
        let mut m = BinaryMask::filled(Grid::new(shape), false).unwrap();
        for &[x, y, z] in on {
            m.set(x, y, z, true);
        }
        m
    }

    fn block(shape: [usize; 3], lo: [usize; 3], hi: [usize; 3]) -> BinaryMask {
        BinaryMask::from_fn(Grid::new(shape), |p| (0..3).all(|a| p[a] >= lo[a] && p[a] < hi[a])).unwrap()
    }

    #[test]
    fn dice_examples() {
        let a = block([8, 8, 8], [0, 0, 0], [2, 2, 2]);
        let b = block([8, 8, 8], [1, 0, 0], [3, 2, 2]);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        assert_eq!(dice(&a, &b).unwrap(), 0.5);
        let c = block([8, 8, 8], [5, 5, 5], [7, 7, 7]);
        assert_eq!(dice(&a, &c).unwrap(), 0.0);
        let e = mask([8, 8, 8], &[]);
        assert_eq!(dice(&e, &e).unwrap(), 1.0);
    }

    #[test]
    fn hd95_examples() {
        let e = mask([8, 8, 8], &[]);
        let a = mask([8, 8, 8], &[[1, 1, 1]]);
        let b = mask([8, 8, 8], &[[4, 1, 1]]);
        assert_eq!(hd95(&e, &a, Hd95Mode::Pooled).unwrap(), 256.0);
        assert_eq!(hd95(&a, &e, Hd95Mode::Pooled).unwrap(), 256.0);
        assert_eq!(hd95(&e, &e, Hd95Mode::Pooled).unwrap(), 0.0);
        assert_eq!(hd95(&a, &a, Hd95Mode::Pooled).unwrap(), 0.0);
        assert_eq!(hd95(&a, &b, Hd95Mode::Pooled).unwrap(), 3.0);
        assert_eq!(hd95(&a, &b, Hd95Mode::MaxOfSides).unwrap(), 3.0);
    }

    #[test]
    fn avd_units() {
        let g = Grid::new([10, 10, 10]);
        let full = BinaryMask::filled(g.clone(), true).unwrap();
        let empty = BinaryMask::filled(g, false).unwrap();
        assert!((avd(&full, &empty).unwrap() - 1.0).abs() < 1e-12);
        let g2 = Grid::new([5, 5, 5]).with_spacing([2.0; 3]);
        let full2 = BinaryMask::filled(g2.clone(), true).unwrap();
        let empty2 = BinaryMask::filled(g2, false).unwrap();
        assert!((avd(&full2, &empty2).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lesion_level_examples() {
        let gt = mask([10, 10, 10], &[[1, 1, 1], [1, 2, 1], [7, 7, 7]]);
        let pred = mask([10, 10, 10], &[[1, 2, 1], [4, 4, 9]]);
        let c = lesion_counts(&pred, &gt).unwrap();
        assert_eq!(c, LesionCounts { tp: 1, fn_: 1, fp: 1 });
        assert_eq!(lesion_f1(&pred, &gt).unwrap(), 0.5);
        let three = mask([10, 10, 10], &[[0, 0, 0], [3, 3, 3], [6, 6, 6]]);
        let one = mask([10, 10, 10], &[[5, 5, 5]]);
        assert_eq!(ald(&three, &one).unwrap(), 2);
        let e = mask([10, 10, 10], &[]);
        assert_eq!(lesion_f1(&e, &gt).unwrap(), 0.0);
        assert_eq!(lesion_f1(&e, &e).unwrap(), 1.0);
    }

    #[test]
    fn rates() {
        let gt = block([10, 10, 10], [0, 0, 0], [10, 1, 1]);
        let pred = block([10, 10, 10], [0, 0, 0], [5, 1, 1]);
        assert_eq!(tpr(&pred, &gt).unwrap(), 0.5);
        assert_eq!(fpr(&gt, &gt).unwrap(), 0.0);
        let e = mask([10, 10, 10], &[]);
        let fp10 = block([10, 10, 10], [0, 5, 5], [10, 6, 6]);
        assert!((fpr(&fp10, &e).unwrap() - 0.01).abs() < 1e-15);
        assert_eq!(tpr(&e, &e).unwrap(), 1.0);
        assert_eq!(tpr(&fp10, &e).unwrap(), 0.0);
    }

    #[test]
    fn prepare_identity_and_upsampling() {
        let a = block([256, 256, 256], [10, 10, 10], [20, 30, 40]);
        let (p, g) = prepare_pair(&a, &a).unwrap();
        assert_eq!(p, a);
        assert_eq!(g, a);

        let g2 = Grid::new([128; 3]).with_spacing([2.0; 3]);
        let m = BinaryMask::from_fn(g2, |[x, y, z]| x == 3 && y == 4 && z == 5).unwrap();
        let (p, _) = prepare_pair(&m, &m).unwrap();
        assert_eq!(p.shape(), [256; 3]);
        assert_eq!(morphology::count(&p), 8);
        for (x, y, z) in [(6, 8, 10), (7, 9, 11)] {
            assert!(p.get(x, y, z));
        }
    }

    #[test]
    fn padding_keeps_counts() {
        let m = block([30, 20, 10], [3, 3, 3], [9, 8, 7]);
        let (p, _) = prepare_pair(&m, &m).unwrap();
        assert_eq!(p.shape(), [256; 3]);
        assert_eq!(morphology::count(&p), morphology::count(&m));
    }

    #[test]
    fn disjoint_extents_rejected() {
        let a = BinaryMask::filled(Grid::new([4, 4, 4]), true).unwrap();
        let b = BinaryMask::filled(Grid::new([4, 4, 4]).with_origin([100.0, 0.0, 0.0]), true).unwrap();
        assert!(matches!(prepare_pair(&a, &b), Err(Error::DisjointExtents)));
    }

    #[test]
    fn summary_t_interval() {
        let s = summarize_values("dice", &[0.0, 1.0]).unwrap();
        assert_eq!(s.mean, 0.5);
        let half = s.ci_high.unwrap() - 0.5;
        assert!((half - 12.706_204_736_174_7 * 0.5 / 2f64.sqrt()).abs() < 1e-6, "{half}");
        let sample = summarize_values_with("dice", &[0.0, 1.0], SpreadConvention::Sample).unwrap();
        let half = sample.ci_high.unwrap() - 0.5;
        assert!((half - 12.706_204_736_174_7 * 0.5f64.sqrt() / 2f64.sqrt()).abs() < 1e-6);
        let one = summarize_values("dice", &[0.3]).unwrap();
        assert!(one.ci_low.is_none());
        let same = summarize_values("dice", &[0.3, 0.3, 0.3]).unwrap();
        assert_eq!(same.ci_low, same.ci_high);
    }

    #[test]
    fn t_quantiles_match_closed_forms() {
        // df = 1: tan(0.475 pi); df = 2: 2p-1 over sqrt(2p(1-p)) with p = 0.975.
        let t1 = (0.475 * std::f64::consts::PI).tan();
        assert!((t_quantile_975(1.0).unwrap() - t1).abs() < 1e-9);
        let t2 = 0.95 / (2.0 * 0.975 * 0.025f64).sqrt();
        assert!((t_quantile_975(2.0).unwrap() - t2).abs() < 1e-9);
        assert!((t_quantile_975(1e6).unwrap() - 1.959_963_985).abs() < 1e-5);
    }

    #[test]
    fn csv_columns() {
        let r = MetricReport {
            case_id: "c1".into(),
            modality: "dwi".into(),
            dice: 0.5,
            hd95: 3.0,
            avd: 1.0,
            ald: 2,
            lf1: 0.5,
            tpr: 0.5,
            fpr: 0.01,
        };
        let mut buf = Vec::new();
        write_reports_csv(&[r], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "case_id,modality,dice,hd95,avd,ald,lf1,tpr,fpr");
    }
}
