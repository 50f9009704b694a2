//! Batch generation of training pairs with one provenance file per sample.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bank::{self, BankEntry, EntryKind, Lazy};
use crate::error::{Error, Result};
use crate::morphology::BinaryMask;
use crate::niftio::{stack::write_stack, write_nifti, NiftiType};
use crate::rngkit::RngStream;
use crate::synthgen::config::GenConfig;
use crate::synthgen::schedule::synth_probability;
use crate::synthgen::{augment_real, generate_sample_with, SampleOptions, SampleSource};
use crate::volgrid::{LabelVolume, PosteriorStack, Volume};

pub const PROVENANCE_FORMAT: &str = "strokesynth.provenance.v1";

/// Bank entries a sample was drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum Pick {
    Synth { healthy: BankEntry, lesion: BankEntry },
    Real { image: BankEntry, label: BankEntry },
}

impl Pick {
    pub fn source(&self) -> SampleSource {
        match self {
            Pick::Synth { .. } => SampleSource::Synth,
            Pick::Real { .. } => SampleSource::Real,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outputs {
    pub image: String,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub soft: Option<String>,
}

/// Everything needed to regenerate one sample in isolation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub format: String,
    pub index: u64,
    pub seed: u64,
    pub pick: Pick,
    pub config: GenConfig,
    pub write_soft: bool,
    pub gzip: bool,
    pub outputs: Outputs,
    /// Every random draw, for inspection; not read back on replay.
    pub record: serde_json::Value,
}

#[derive(Debug, Clone)]
pub struct GenerateOptions {
    pub config: GenConfig,
    pub healthy: Option<PathBuf>,
    pub lesions: Option<PathBuf>,
    pub real: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub count: u64,
    pub jobs: usize,
    pub write_soft: bool,
    pub gzip: bool,
}

/// Stream owning every draw of sample `index`.
pub fn sample_stream(seed: u64, index: u64) -> RngStream {
    RngStream::new(seed).derive("sample", index)
}

fn stem(index: u64) -> String {
    format!("sample_{index:05}")
}

fn outputs(index: u64, write_soft: bool, gzip: bool) -> Outputs {
    let ext = if gzip { "nii.gz" } else { "nii" };
    let s = stem(index);
    Outputs {
        image: format!("{s}_image.{ext}"),
        label: format!("{s}_label.{ext}"),
        soft: write_soft.then(|| format!("{s}_soft.json")),
    }
}

enum Loaded {
    Synth(Arc<PosteriorStack>, Arc<BinaryMask>),
    Real(Arc<Volume>, Arc<LabelVolume>),
}

fn render(prov: &Provenance, data: Loaded, out: &Path) -> Result<()> {
    let s = sample_stream(prov.seed, prov.index);
    let cfg = &prov.config;
    let (image, label, soft, record) = match data {
        Loaded::Synth(h, l) => {
            let opts = SampleOptions {
                keep_soft: prov.write_soft,
            };
            let g = generate_sample_with(&h, &l, cfg, &s, opts)?;
            let rec = serde_json::to_value(&g.record)?;
            (g.image, g.label, g.soft, rec)
        }
        Loaded::Real(img, lab) => {
            let (image, label, rec) = augment_real(&img, &lab, cfg, &s)?;
            (image, label, None, serde_json::to_value(&rec)?)
        }
    };
    let o = &prov.outputs;
    write_nifti(&image, out.join(&o.image), NiftiType::Float32)?;
    write_nifti(&label.map(f64::from), out.join(&o.label), NiftiType::Uint8)?;
    if let (Some(stack), Some(name)) = (soft, &o.soft) {
        let mut meta = serde_json::Map::new();
        meta.insert("sample".into(), prov.index.into());
        write_stack(
            &out.join(name),
            "posteriors",
            stack.classes(),
            stack.volumes(),
            meta,
            prov.gzip,
        )?;
    }
    let mut full = prov.clone();
    full.record = record;
    let path = out.join(format!("{}.json", stem(prov.index)));
    let text = serde_json::to_string_pretty(&full)?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

struct Banks {
    healthy: Lazy<PosteriorStack>,
    lesions: Lazy<BinaryMask>,
    real: Vec<(BankEntry, BankEntry)>,
    real_images: Lazy<Volume>,
    real_labels: Lazy<LabelVolume>,
}

fn load_banks(o: &GenerateOptions) -> Result<Banks> {
    let need = |p: &Option<PathBuf>, flag: &str| {
        p.clone()
            .ok_or_else(|| Error::Config(format!("generate needs --{flag}")))
    };
    let h = bank::load_manifest(&need(&o.healthy, "healthy")?)?;
    bank::expect_kind(&h, EntryKind::PosteriorStack)?;
    let l = bank::load_manifest(&need(&o.lesions, "lesions")?)?;
    bank::expect_kind(&l, EntryKind::LesionMask)?;
    if h.is_empty() || l.is_empty() {
        return Err(Error::Empty("healthy and lesion banks must be non-empty".into()));
    }
    let real = match &o.real {
        Some(p) => bank::real_pairs(&bank::load_manifest(p)?)?,
        None => Vec::new(),
    };
    let (ri, rl): (Vec<_>, Vec<_>) = real.iter().cloned().unzip();
    Ok(Banks {
        healthy: Lazy::new(h, bank::load_posterior_stack),
        lesions: Lazy::new(l, bank::load_mask),
        real,
        real_images: Lazy::new(ri, bank::load_image),
        real_labels: Lazy::new(rl, bank::load_label),
    })
}

/// Source and bank indices for sample `index`; depends only on the seed
/// and the index.
fn choose(b: &Banks, o: &GenerateOptions, index: u64) -> Result<(SampleSource, usize, usize)> {
    let s = sample_stream(o.seed, index);
    let source = if b.real.is_empty() {
        SampleSource::Synth
    } else {
        let p = synth_probability(o.config.schedule.n_synth, o.config.schedule.n_real)?;
        if s.derive("source", 0).bernoulli(p)? {
            SampleSource::Synth
        } else {
            SampleSource::Real
        }
    };
    let pick = |label: &str, n: usize| s.derive(label, 0).uniform_int(0, n as u64 - 1) as usize;
    Ok(match source {
        SampleSource::Synth => (
            source,
            pick("choose_healthy", b.healthy.len()),
            pick("choose_lesion", b.lesions.len()),
        ),
        SampleSource::Real => (source, pick("choose_real", b.real.len()), 0),
    })
}

fn run_one(b: &Banks, o: &GenerateOptions, index: u64) -> Result<()> {
    let (source, i, j) = choose(b, o, index)?;
    let (pick, data) = match source {
        SampleSource::Synth => (
            Pick::Synth {
                healthy: b.healthy.entry(i).clone(),
                lesion: b.lesions.entry(j).clone(),
            },
            Loaded::Synth(b.healthy.get(i)?, b.lesions.get(j)?),
        ),
        SampleSource::Real => (
            Pick::Real {
                image: b.real[i].0.clone(),
                label: b.real[i].1.clone(),
            },
            Loaded::Real(b.real_images.get(i)?, b.real_labels.get(i)?),
        ),
    };
    let prov = Provenance {
        format: PROVENANCE_FORMAT.into(),
        index,
        seed: o.seed,
        pick,
        config: o.config.clone(),
        write_soft: o.write_soft,
        gzip: o.gzip,
        outputs: outputs(index, o.write_soft, o.gzip),
        record: serde_json::Value::Null,
    };
    render(&prov, data, &o.out)
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidParameter(e.to_string()))
}

/// Generates `count` samples; returns the per-sample failures, each
/// prefixed with its index.
pub fn generate(o: &GenerateOptions) -> Result<Vec<(u64, Error)>> {
    o.config.validate()?;
    let banks = load_banks(o)?;
    std::fs::create_dir_all(&o.out).map_err(|e| Error::io(&o.out, e))?;
    let results: Vec<(u64, Result<()>)> = pool(o.jobs)?.install(|| {
        (0..o.count)
            .into_par_iter()
            .map(|i| (i, run_one(&banks, o, i)))
            .collect()
    });
    Ok(results
        .into_iter()
        .filter_map(|(i, r)| r.err().map(|e| (i, e)))
        .collect())
}

pub fn read_provenance(path: &Path) -> Result<Provenance> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let p: Provenance = serde_json::from_str(&text)?;
    if p.format != PROVENANCE_FORMAT {
        return Err(Error::Config(format!("unknown provenance format `{}`", p.format)));
    }
    Ok(p)
}

/// Regenerates one sample from its provenance file into `out`.
pub fn replay(provenance: &Path, out: &Path, jobs: usize) -> Result<()> {
    let p = read_provenance(provenance)?;
    p.config.validate()?;
    let data = match &p.pick {
        Pick::Synth { healthy, lesion } => Loaded::Synth(
            Arc::new(bank::load_posterior_stack(healthy)?),
            Arc::new(bank::load_mask(lesion)?),
        ),
        Pick::Real { image, label } => Loaded::Real(
            Arc::new(bank::load_image(image)?),
            Arc::new(bank::load_label(label)?),
        ),
    };
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    pool(jobs)?.install(|| render(&p, data, out))
}
