//! Stack-to-stack post-processing: flip merging, ensembling, pseudo-labels
//! and entropy maps.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::niftio::stack::{read_stack, write_stack, StackManifest};
use crate::postproc::{
    ensemble_modalities, entropy_map, merge_tta, pseudo_label_dpl, pseudo_label_pl,
    pseudo_label_upl, softmax, LogitStack, PseudoLabels,
};
use crate::volgrid::Volume;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    /// Eight outputs on flipped inputs (flip-subset order) -> averaged logits.
    TtaMerge,
    /// Mean of per-modality logits.
    Ensemble,
    /// Confidence-thresholded pseudo-labels.
    Pl,
    /// Pseudo-labels filtered by sample disagreement; first input is the
    /// base prediction, the rest are stochastic samples.
    Upl,
    /// Pseudo-labels filtered by feature prototypes (needs --features).
    Dpl,
    /// Voxelwise entropy of the class distribution.
    Entropy,
}

#[derive(Debug, Clone)]
pub struct PostprocOptions {
    pub mode: Mode,
    pub inputs: Vec<PathBuf>,
    pub features: Option<PathBuf>,
    pub out: PathBuf,
    pub upl_threshold: f64,
    pub gzip: bool,
}

struct Input {
    manifest: StackManifest,
    stack: LogitStack,
}

fn load(path: &Path) -> Result<Input> {
    let (manifest, vols) = read_stack(path)?;
    Ok(Input {
        manifest,
        stack: LogitStack::new(vols)?,
    })
}

/// Class probabilities: softmax for `logits`, unchanged for
/// `probabilities` / `posteriors`.
fn probabilities(i: &Input) -> Result<LogitStack> {
    match i.manifest.kind.as_str() {
        "logits" => Ok(softmax(&i.stack)),
        "probabilities" | "posteriors" => Ok(i.stack.clone()),
        k => Err(Error::InvalidParameter(format!("cannot read stack kind `{k}` as probabilities"))),
    }
}

fn check_channels(inputs: &[Input]) -> Result<()> {
    let first = &inputs[0].manifest;
    for i in &inputs[1..] {
        if i.manifest.channels.len() != first.channels.len() {
            return Err(Error::InvalidParameter(format!(
                "channel count mismatch: {} vs {}",
                first.channels.len(),
                i.manifest.channels.len()
            )));
        }
        if i.manifest.names() != first.names() {
            return Err(Error::InvalidParameter(format!(
                "channel names differ: {:?} vs {:?}",
                first.names(),
                i.manifest.names()
            )));
        }
    }
    Ok(())
}

fn expect_inputs(mode: Mode, n: usize, ok: bool, what: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{mode:?} needs {what}; got {n} inputs")))
    }
}

fn write_masks(o: &PostprocOptions, names: &[String], pl: &PseudoLabels, mut meta: Map<String, Value>) -> Result<()> {
    meta.insert("threshold".into(), json!(pl.threshold));
    meta.insert("valid".into(), json!(pl.valid));
    let vols: Vec<Volume> = pl.masks.iter().map(|m| m.map(|b| f64::from(u8::from(b)))).collect();
    write_stack(&o.out, "pseudo_labels", names, &vols, meta, o.gzip)?;
    Ok(())
}

pub fn run(o: &PostprocOptions) -> Result<()> {
    if o.inputs.is_empty() {
        return Err(Error::InvalidParameter("no input stacks".into()));
    }
    let inputs: Vec<Input> = o.inputs.iter().map(|p| load(p)).collect::<Result<_>>()?;
    check_channels(&inputs)?;
    let names = inputs[0].manifest.names();
    let n = inputs.len();
    let mut meta = Map::new();
    let mode_name = o.mode.to_possible_value().map(|v| v.get_name().to_owned());
    meta.insert("mode".into(), json!(mode_name));
    if let Some(dir) = o.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    match o.mode {
        Mode::TtaMerge | Mode::Ensemble => {
            let stacks: Vec<LogitStack> = inputs.iter().map(|i| i.stack.clone()).collect();
            let merged = if o.mode == Mode::TtaMerge {
                expect_inputs(o.mode, n, n == 8, "exactly 8 inputs")?;
                merge_tta(&stacks)?
            } else {
                ensemble_modalities(&stacks)?
            };
            let kind = inputs[0].manifest.kind.clone();
            write_stack(&o.out, &kind, &names, merged.channels(), meta, o.gzip)?;
        }
        Mode::Pl => {
            expect_inputs(o.mode, n, n == 1, "exactly 1 input")?;
            let pl = pseudo_label_pl(&probabilities(&inputs[0])?)?;
            write_masks(o, &names, &pl, meta)?;
        }
        Mode::Upl => {
            expect_inputs(o.mode, n, n >= 3, "a base input and at least 2 samples")?;
            let base = pseudo_label_pl(&probabilities(&inputs[0])?)?;
            let samples: Vec<LogitStack> =
                inputs[1..].iter().map(probabilities).collect::<Result<_>>()?;
            let pl = pseudo_label_upl(&samples, &base, o.upl_threshold)?;
            meta.insert("upl_threshold".into(), json!(o.upl_threshold));
            write_masks(o, &names, &pl, meta)?;
        }
        Mode::Dpl => {
            expect_inputs(o.mode, n, n == 1, "exactly 1 input")?;
            let f = o
                .features
                .as_ref()
                .ok_or_else(|| Error::InvalidParameter("dpl needs --features".into()))?;
            let (_, features) = read_stack(f)?;
            let base = pseudo_label_pl(&probabilities(&inputs[0])?)?;
            let pl = pseudo_label_dpl(&features, &base)?;
            write_masks(o, &names, &pl, meta)?;
        }
        Mode::Entropy => {
            expect_inputs(o.mode, n, n == 1, "exactly 1 input")?;
            let h = entropy_map(&probabilities(&inputs[0])?);
            write_stack(&o.out, "entropy", &["entropy".to_owned()], &[h], meta, o.gzip)?;
        }
    }
    Ok(())
}
