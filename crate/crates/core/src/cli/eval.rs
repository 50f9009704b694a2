//! Case-wise evaluation of predicted masks against ground truth.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::morphology::BinaryMask;
use crate::niftio::read_nifti;
use crate::segmetrics::{
    evaluate_case, summarize, summary_table, write_reports_csv, write_summary_csv, Hd95Mode,
    MetricReport,
};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CasePair {
    pub case_id: String,
    pub pred: PathBuf,
    pub gt: PathBuf,
    #[serde(default)]
    pub modality: Option<String>,
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub pred_dir: PathBuf,
    pub gt_dir: PathBuf,
    pub pairing: Option<PathBuf>,
    pub out: PathBuf,
    pub modality: String,
    /// Foreground is `value == label` when set, otherwise any non-zero.
    pub label: Option<u32>,
    pub hd95: Hd95Mode,
    pub jobs: usize,
}

#[derive(Debug)]
pub struct EvalOutcome {
    pub reports: Vec<MetricReport>,
    pub errors: Vec<(String, String)>,
}

fn strip_nifti_ext(name: &str) -> Option<&str> {
    name.strip_suffix(".nii.gz").or_else(|| name.strip_suffix(".nii"))
}

fn list_nifti(dir: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for e in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let e = e.map_err(|err| Error::io(dir, err))?;
        if let Some(n) = e.file_name().to_str() {
            if strip_nifti_ext(n).is_some() && e.path().is_file() {
                names.push(n.to_owned());
            }
        }
    }
    names.sort();
    Ok(names)
}

/// Pairs from a JSONL pairing manifest (paths relative to the prediction
/// and ground-truth directories), or by identical file name.
pub fn collect_pairs(o: &EvalOptions) -> Result<(Vec<CasePair>, Vec<(String, String)>)> {
    let mut errors = Vec::new();
    let pairs = match &o.pairing {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let mut v = Vec::new();
            for (n, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let mut c: CasePair = serde_json::from_str(line).map_err(|e| Error::Manifest {
                    id: format!("{}:{}", p.display(), n + 1),
                    message: e.to_string(),
                })?;
                c.pred = o.pred_dir.join(&c.pred);
                c.gt = o.gt_dir.join(&c.gt);
                v.push(c);
            }
            v
        }
        None => {
            let gt = list_nifti(&o.gt_dir)?;
            let pred = list_nifti(&o.pred_dir)?;
            let mut v = Vec::new();
            for n in &pred {
                let id = strip_nifti_ext(n).unwrap_or(n).to_owned();
                if gt.contains(n) {
                    v.push(CasePair {
                        case_id: id,
                        pred: o.pred_dir.join(n),
                        gt: o.gt_dir.join(n),
                        modality: None,
                    });
                } else {
                    errors.push((id, "no ground truth with the same file name".to_owned()));
                }
            }
            for n in gt.iter().filter(|n| !pred.contains(n)) {
                let id = strip_nifti_ext(n).unwrap_or(n).to_owned();
                errors.push((id, "no prediction with the same file name".to_owned()));
            }
            v
        }
    };
    Ok((pairs, errors))
}

fn load_mask(path: &Path, label: Option<u32>) -> Result<BinaryMask> {
    let (v, _) = read_nifti(path)?;
    Ok(match label {
        Some(l) => v.map(|x| x.round() == f64::from(l)),
        None => v.map(|x| x != 0.0),
    })
}

fn eval_pair(c: &CasePair, o: &EvalOptions) -> Result<MetricReport> {
    let p = load_mask(&c.pred, o.label)?;
    let g = load_mask(&c.gt, o.label)?;
    let modality = c.modality.as_deref().unwrap_or(&o.modality);
    evaluate_case(&p, &g, &c.case_id, modality, o.hd95)
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("metrics");
    out.with_file_name(format!("{stem}{suffix}"))
}

/// Writes `<out>` (per case), `<stem>_summary.csv`, `<stem>_summary.txt`
/// and, when any case failed, `<stem>_errors.csv`.
pub fn evaluate(o: &EvalOptions) -> Result<EvalOutcome> {
    let (pairs, mut errors) = collect_pairs(o)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(o.jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let results: Vec<(String, Result<MetricReport>)> = pool.install(|| {
        pairs
            .par_iter()
            .map(|c| (c.case_id.clone(), eval_pair(c, o)))
            .collect()
    });
    let mut reports = Vec::new();
    for (id, r) in results {
        match r {
            Ok(r) => reports.push(r),
            Err(e) => errors.push((id, e.to_string())),
        }
    }
    if let Some(dir) = o.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let f = std::fs::File::create(&o.out).map_err(|e| Error::io(&o.out, e))?;
    write_reports_csv(&reports, f)?;
    if !reports.is_empty() {
        let rows = summarize(&reports)?;
        let p = sibling(&o.out, "_summary.csv");
        write_summary_csv(&rows, std::fs::File::create(&p).map_err(|e| Error::io(&p, e))?)?;
        let p = sibling(&o.out, "_summary.txt");
        std::fs::write(&p, summary_table(&rows)).map_err(|e| Error::io(&p, e))?;
    }
    if !errors.is_empty() {
        let p = sibling(&o.out, "_errors.csv");
        let mut w = csv::Writer::from_path(&p)?;
        w.write_record(["case_id", "error"])?;
        for (id, msg) in &errors {
            w.write_record([id, msg])?;
        }
        w.flush().map_err(|e| Error::io(&p, e))?;
    }
    Ok(EvalOutcome { reports, errors })
}
