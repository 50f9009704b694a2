//! Small synthetic banks: layered spherical heads with partial-volume
//! boundaries and ellipsoidal lesions.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::json;

use crate::error::{Error, Result};
use crate::morphology::BinaryMask;
use crate::niftio::{stack::write_stack, write_nifti, NiftiType};
use crate::rngkit::RngStream;
use crate::volgrid::{tissue, Grid, PosteriorStack, Volume};

/// Classes from the centre outwards, with the outer radius of each shell
/// as a fraction of the head radius; the last class fills the rest.
const LAYERS: [(&str, f64); 9] = [
    (tissue::WM, 0.45),
    (tissue::PV, 0.50),
    (tissue::GM, 0.65),
    (tissue::CSF, 0.72),
    ("skull", 0.80),
    ("fat", 0.85),
    ("muscle", 0.90),
    ("scalp", 0.95),
    ("air", f64::INFINITY),
];

const RAMP: f64 = 0.02;

fn ramp(x: f64) -> f64 {
    (x / RAMP + 0.5).clamp(0.0, 1.0)
}

/// Nine-class posterior stack of a head of radius `0.45 * n`, slightly
/// deformed per `variant`.
pub fn toy_head(n: usize, variant: u64) -> Result<PosteriorStack> {
    let g = Grid::new([n; 3]);
    let c = (n as f64 - 1.0) / 2.0;
    let radius = 0.45 * n as f64;
    let mut s = RngStream::new(variant).derive("toy_head", 0);
    let amp = s.uniform(0.0, 0.06)?;
    let phase = s.uniform(0.0, std::f64::consts::TAU)?;
    let rho = move |[x, y, z]: [usize; 3]| {
        let d = [x as f64 - c, y as f64 - c, z as f64 - c];
        let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        let theta = d[1].atan2(d[0]);
        r / radius * (1.0 + amp * (2.0 * theta + phase).sin())
    };
    let mut names = Vec::new();
    let mut vols = Vec::new();
    let mut inner = f64::NEG_INFINITY;
    for (name, outer) in LAYERS {
        let v = Volume::from_fn(g.clone(), |p| {
            let r = rho(p);
            let a = if inner.is_finite() { ramp(r - inner) } else { 1.0 };
            let b = if outer.is_finite() { ramp(r - outer) } else { 0.0 };
            a - b
        })?;
        names.push(name.to_owned());
        vols.push(v);
        inner = outer;
    }
    PosteriorStack::new(names, vols)
}

/// Ellipsoidal lesion inside the white matter of [`toy_head`].
pub fn toy_lesion(n: usize, variant: u64) -> Result<BinaryMask> {
    let g = Grid::new([n; 3]);
    let c = (n as f64 - 1.0) / 2.0;
    let mut s = RngStream::new(variant).derive("toy_lesion", 0);
    let r = 0.45 * n as f64;
    let centre = [
        c + s.uniform(-0.12, 0.12)? * r,
        c + s.uniform(-0.12, 0.12)? * r,
        c + s.uniform(-0.12, 0.12)? * r,
    ];
    let mut axes = [0.0; 3];
    for a in &mut axes {
        *a = (s.uniform(0.05, 0.12)? * r).max(1.0);
    }
    BinaryMask::from_fn(g, |p| {
        (0..3)
            .map(|a| ((p[a] as f64 - centre[a]) / axes[a]).powi(2))
            .sum::<f64>()
            <= 1.0
    })
}

/// Writes `n_healthy` stacks and `n_lesions` masks of size `n` under
/// `dir` and returns the healthy and lesion manifest paths.
pub fn write_toy_bank(dir: &Path, n: usize, n_healthy: usize, n_lesions: usize) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let hm = dir.join("healthy.jsonl");
    let lm = dir.join("lesions.jsonl");
    let mut hf = std::fs::File::create(&hm).map_err(|e| Error::io(&hm, e))?;
    for i in 0..n_healthy {
        let stack = toy_head(n, i as u64)?;
        let name = format!("head{i}.json");
        write_stack(
            &dir.join(&name),
            "posteriors",
            stack.classes(),
            stack.volumes(),
            serde_json::Map::new(),
            false,
        )?;
        let line = json!({"id": format!("head{i}"), "path": name, "kind": "posterior_stack"});
        writeln!(hf, "{line}").map_err(|e| Error::io(&hm, e))?;
    }
    let mut lf = std::fs::File::create(&lm).map_err(|e| Error::io(&lm, e))?;
    for i in 0..n_lesions {
        let m = toy_lesion(n, 1000 + i as u64)?;
        let name = format!("lesion{i}.nii");
        write_nifti(&m.map(|b| f64::from(u8::from(b))), dir.join(&name), NiftiType::Uint8)?;
        let line = json!({"id": format!("lesion{i}"), "path": name, "kind": "lesion_mask"});
        writeln!(lf, "{line}").map_err(|e| Error::io(&lm, e))?;
    }
    Ok((hm, lm))
}
