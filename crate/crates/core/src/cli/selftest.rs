//! Built-in checks of the numerical core against brute-force references.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::morphology::{self, BinaryMask};
use crate::niftio::{encode_nifti, read_nifti_bytes, reorient_ras, NiftiType};
use crate::postproc::{blend_patches, entropy_map, plan_patches, tta_flips, LogitStack, PatchSpec};
use crate::rngkit::RngStream;
use crate::segmetrics::{self, Hd95Mode};
use crate::synthgen::{config::GenConfig, generate_sample};
use crate::volgrid::{Grid, Volume};

use super::fixtures::{toy_head, toy_lesion};

pub const CHECKS: [&str; 9] = [
    "metrics",
    "edt",
    "morphology",
    "nifti",
    "determinism",
    "blend",
    "tta",
    "entropy",
    "t_interval",
];

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub millis: u128,
}

type Outcome = std::result::Result<(), String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Outcome {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn lift<T>(r: Result<T>) -> std::result::Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn random_mask(n: usize, p: f64, s: &mut RngStream) -> BinaryMask {
    let data = (0..n * n * n).map(|_| s.bernoulli(p).unwrap_or(false)).collect();
    BinaryMask::new(Grid::new([n; 3]), data).expect("shape matches")
}

fn brute_components(m: &BinaryMask) -> usize {
    let [nx, ny, nz] = m.shape();
    let mut seen = vec![false; m.len()];
    let mut count = 0;
    for start in 0..m.len() {
        if !m.data()[start] || seen[start] {
            continue;
        }
        count += 1;
        seen[start] = true;
        let mut stack = vec![start];
        while let Some(i) = stack.pop() {
            let [x, y, z] = m.grid().coords(i);
            for dz in -1i64..=1 {
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (a, b, c) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
                        if a < 0 || b < 0 || c < 0 || a >= nx as i64 || b >= ny as i64 || c >= nz as i64 {
                            continue;
                        }
                        let j = m.grid().index(a as usize, b as usize, c as usize);
                        if m.data()[j] && !seen[j] {
                            seen[j] = true;
                            stack.push(j);
                        }
                    }
                }
            }
        }
    }
    count
}

fn brute_surface(m: &BinaryMask) -> Vec<[usize; 3]> {
    let [nx, ny, nz] = m.shape();
    let mut out = Vec::new();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if !m.get(x, y, z) {
                    continue;
                }
                let edge = x == 0 || y == 0 || z == 0 || x + 1 == nx || y + 1 == ny || z + 1 == nz;
                if edge
                    || !m.get(x - 1, y, z)
                    || !m.get(x + 1, y, z)
                    || !m.get(x, y - 1, z)
                    || !m.get(x, y + 1, z)
                    || !m.get(x, y, z - 1)
                    || !m.get(x, y, z + 1)
                {
                    out.push([x, y, z]);
                }
            }
        }
    }
    out
}

fn dist2(a: [usize; 3], b: [usize; 3]) -> f64 {
    (0..3).map(|k| (a[k] as f64 - b[k] as f64).powi(2)).sum()
}

fn brute_percentile(mut v: Vec<f64>, p: f64) -> f64 {
    v.sort_by(f64::total_cmp);
    let pos = p / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

fn brute_hd95(p: &BinaryMask, g: &BinaryMask) -> f64 {
    let (sp, sg) = (brute_surface(p), brute_surface(g));
    match (sp.is_empty(), sg.is_empty()) {
        (true, true) => return 0.0,
        (true, false) | (false, true) => return segmetrics::HD95_EMPTY,
        _ => {}
    }
    let directed = |a: &[[usize; 3]], b: &[[usize; 3]]| -> Vec<f64> {
        a.iter()
            .map(|&u| b.iter().map(|&v| dist2(u, v)).fold(f64::INFINITY, f64::min).sqrt())
            .collect()
    };
    brute_percentile([directed(&sp, &sg), directed(&sg, &sp)].concat(), 95.0)
}

fn check_metrics(quick: bool, fault: bool) -> Outcome {
    let (pairs, n) = if quick { (20, 6) } else { (100, 8) };
    let mut s = RngStream::new(11).derive("selftest_metrics", 0);
    for k in 0..pairs {
        let p = random_mask(n, 0.2, &mut s);
        let g = random_mask(n, 0.2, &mut s);
        let r = lift(segmetrics::compute_metrics(&p, &g, "c", "m", Hd95Mode::Pooled))?;
        let (np, ng) = (morphology::count(&p), morphology::count(&g));
        let inter = p.data().iter().zip(g.data()).filter(|(&a, &b)| a && b).count();
        let mut dice = if np + ng == 0 { 1.0 } else { 2.0 * inter as f64 / (np + ng) as f64 };
        if fault {
            dice += 0.25;
        }
        ensure((r.dice - dice).abs() < 1e-12, || format!("pair {k}: dice {} vs {dice}", r.dice))?;
        let hd = brute_hd95(&p, &g);
        ensure((r.hd95 - hd).abs() < 1e-9, || format!("pair {k}: hd95 {} vs {hd}", r.hd95))?;
        let avd = np.abs_diff(ng) as f64 / 1000.0;
        ensure((r.avd - avd).abs() < 1e-12, || format!("pair {k}: avd {} vs {avd}", r.avd))?;
        let ald = brute_components(&p).abs_diff(brute_components(&g)) as u64;
        ensure(r.ald == ald, || format!("pair {k}: ald {} vs {ald}", r.ald))?;
    }
    Ok(())
}

fn check_edt(quick: bool, fault: bool) -> Outcome {
    let (count, n) = if quick { (10, 8) } else { (50, 12) };
    let mut s = RngStream::new(12).derive("selftest_edt", 0);
    for k in 0..count {
        let m = random_mask(n, 0.05, &mut s);
        let spacing = [1.0, 1.5, 2.0];
        let d = morphology::edt_squared(&m, spacing);
        let on: Vec<[usize; 3]> = (0..m.len()).filter(|&i| m.data()[i]).map(|i| m.grid().coords(i)).collect();
        for i in 0..m.len() {
            let c = m.grid().coords(i);
            let mut want = on
                .iter()
                .map(|o| (0..3).map(|a| ((c[a] as f64 - o[a] as f64) * spacing[a]).powi(2)).sum::<f64>())
                .fold(f64::INFINITY, f64::min);
            if fault && i == 0 {
                want += 1.0;
            }
            ensure(d[i] == want || (d[i] - want).abs() < 1e-9, || {
                format!("mask {k} voxel {c:?}: {} vs {want}", d[i])
            })?;
        }
    }
    Ok(())
}

fn check_morphology(fault: bool) -> Outcome {
    let g = Grid::new([9; 3]);
    let m = BinaryMask::from_fn(g, |p| p == [4, 4, 4]).expect("shape");
    let r1 = morphology::count(&morphology::dilate(&m, 1.0));
    let r2 = morphology::count(&morphology::dilate(&m, 2.0));
    let want = if fault { (8, 33) } else { (7, 33) };
    ensure((r1, r2) == want, || format!("ball sizes {r1}, {r2}; expected {want:?}"))
}

fn check_nifti(fault: bool) -> Outcome {
    let mut s = RngStream::new(13).derive("selftest_nifti", 0);
    let g = Grid::new([5, 4, 3]).with_spacing([1.0, 2.0, 3.0]).with_origin([-5.0, 4.0, 10.0]);
    for dtype in [NiftiType::Uint8, NiftiType::Int16, NiftiType::Int32, NiftiType::Float32, NiftiType::Float64] {
        let v = Volume::from_fn(g.clone(), |_| 0.0).expect("grid");
        let data: Vec<f64> = (0..g.len()).map(|_| s.uniform_int(0, 200) as f64).collect();
        let v = Volume::new(v.grid().clone(), data).expect("len");
        let mut bytes = encode_nifti(&v, dtype);
        if fault {
            let last = bytes.len() - 1;
            bytes[last] ^= 0x01;
        }
        let (back, _) = lift(read_nifti_bytes(&bytes))?;
        ensure(back.data() == v.data(), || format!("{dtype:?}: values differ after round trip"))?;
        ensure(back.grid().same_geometry(v.grid(), 1e-5), || format!("{dtype:?}: geometry differs"))?;
    }
    let flipped = g.clone().with_direction([[-1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, 1.0, 0.0]]);
    let v = Volume::from_fn(flipped, |[x, y, z]| (x + 10 * y + 100 * z) as f64).expect("grid");
    let r = lift(reorient_ras(&v))?;
    let dir = r.grid().direction;
    ensure((0..3).all(|i| (dir[i][i] - 1.0).abs() < 1e-12), || format!("direction {dir:?} not RAS"))?;
    for i in 0..r.len() {
        let c = r.grid().coords(i);
        let w = r.grid().world([c[0] as f64, c[1] as f64, c[2] as f64]);
        let m = v.grid().world_to_voxel();
        let src: Vec<usize> = (0..3)
            .map(|a| (m[(a, 0)] * w[0] + m[(a, 1)] * w[1] + m[(a, 2)] * w[2] + m[(a, 3)]).round() as usize)
            .collect();
        let want = v.get(src[0], src[1], src[2]);
        ensure(r.data()[i] == want, || format!("voxel {c:?} moved in world space"))?;
    }
    Ok(())
}

fn check_determinism(quick: bool, fault: bool) -> Outcome {
    let n = if quick { 20 } else { 28 };
    let head = lift(toy_head(n, 0))?;
    let lesion = lift(toy_lesion(n, 1))?;
    let cfg = GenConfig {
        crop_size: [n - 4; 3],
        ..GenConfig::default()
    };
    let s = RngStream::new(7).derive("selftest_determinism", 0);
    let run = |threads: usize, s: &RngStream| -> std::result::Result<_, String> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| e.to_string())?;
        pool.install(|| lift(generate_sample(&head, &lesion, &cfg, s)))
    };
    let a = run(1, &s)?;
    let other = if fault { RngStream::new(8).derive("selftest_determinism", 0) } else { s.clone() };
    let b = run(3, &other)?;
    let bits = |v: &Volume| v.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    ensure(bits(&a.image) == bits(&b.image), || "image differs between runs".into())?;
    ensure(a.label == b.label, || "label differs between runs".into())
}

fn check_blend(fault: bool) -> Outcome {
    let g = Grid::new([12, 10, 8]);
    let spec = PatchSpec {
        patch_size: [12, 10, 8],
        overlap: 0.5,
        blend_sigma: 0.125,
    };
    let windows = lift(plan_patches(g.shape, &spec))?;
    ensure(windows.len() == 1, || format!("{} windows for a single patch", windows.len()))?;
    let v = Volume::from_fn(g.clone(), |[x, y, z]| (x * 7 + y * 3 + z) as f64 * 0.37 - 2.0).expect("grid");
    let patch = lift(LogitStack::new(vec![v.clone()]))?;
    let mut out = lift(blend_patches(&[patch], &windows, &g, &spec))?;
    if fault {
        out = lift(LogitStack::new(vec![v.map(|x| x + 1e-6)]))?;
    }
    ensure(out.channel(0).data() == v.data(), || "single patch not reproduced exactly".into())
}

fn check_tta(fault: bool) -> Outcome {
    let img = Volume::from_fn(Grid::new([6, 5, 4]), |[x, y, z]| (x + y + z) as f64).expect("grid");
    let bias = if fault { 1.0 } else { 0.0 };
    let out = lift(tta_flips(
        |v: &Volume| {
            let b = if v.data() == img.data() { 0.0 } else { bias };
            LogitStack::constant(v.grid(), &[0.25 + b, -1.5])
        },
        &img,
    ))?;
    ensure(out.channel(0).data().iter().all(|&x| x == 0.25), || "constant logits not preserved".into())?;
    ensure(out.channel(1).data().iter().all(|&x| x == -1.5), || "constant logits not preserved".into())
}

fn check_entropy(fault: bool) -> Outcome {
    let c = if fault { 5 } else { 6 };
    let g = Grid::new([3, 3, 3]);
    let p = lift(LogitStack::constant(&g, &vec![1.0 / 6.0; c]))?;
    let h = entropy_map(&p);
    let want = 6f64.ln();
    ensure(h.data().iter().all(|&x| (x - want).abs() < 1e-12), || {
        format!("uniform entropy {} vs ln 6 = {want}", h.data()[0])
    })
}

fn check_t_interval(fault: bool) -> Outcome {
    let values = if fault { vec![0.0, 1.0, 1.0] } else { vec![0.0, 1.0] };
    let s = lift(segmetrics::summarize_values("dice", &values))?;
    let half = s.ci_high.unwrap_or(f64::NAN) - s.mean;
    let want = 12.706 * 0.5 / 2f64.sqrt();
    ensure((half - want).abs() < 1e-3, || format!("half width {half} vs {want}"))
}

fn run_check(name: &'static str, quick: bool, fault: bool) -> Outcome {
    match name {
        "metrics" => check_metrics(quick, fault),
        "edt" => check_edt(quick, fault),
        "morphology" => check_morphology(fault),
        "nifti" => check_nifti(fault),
        "determinism" => check_determinism(quick, fault),
        "blend" => check_blend(fault),
        "tta" => check_tta(fault),
        "entropy" => check_entropy(fault),
        "t_interval" => check_t_interval(fault),
        _ => Err(format!("unknown check {name}")),
    }
}

/// Runs every check; `inject_fault` corrupts the named check's fixture so
/// it must fail.
pub fn run(quick: bool, inject_fault: Option<&str>) -> Result<Vec<CheckResult>> {
    if let Some(f) = inject_fault {
        if !CHECKS.contains(&f) {
            return Err(Error::InvalidParameter(format!(
                "unknown check `{f}`; expected one of {}",
                CHECKS.join(", ")
            )));
        }
    }
    Ok(CHECKS
        .iter()
        .map(|&name| {
            let t = Instant::now();
            let r = run_check(name, quick, inject_fault == Some(name));
            CheckResult {
                name,
                passed: r.is_ok(),
                detail: r.err().unwrap_or_default(),
                millis: t.elapsed().as_millis(),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quick_suite_passes() {
        let r = run(true, None).unwrap();
        for c in &r {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }

    #[test]
    fn each_fault_is_caught() {
        for name in CHECKS {
            let r = run_check(name, true, true);
            assert!(r.is_err(), "{name} did not detect its fault");
        }
    }
}
