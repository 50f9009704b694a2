use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rngkit::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleSource {
    Synth,
    Real,
}

/// `n_synth / (n_synth + n_real)`.
pub fn synth_probability(n_synth: u64, n_real: u64) -> Result<f64> {
    let total = n_synth + n_real;
    if total == 0 {
        return Err(Error::InvalidParameter("schedule needs at least one image".into()));
    }
    Ok(n_synth as f64 / total as f64)
}

/// Independent draws of the training source, weighted by pool sizes.
pub fn mixed_schedule(
    n_synth: u64,
    n_real: u64,
    total: usize,
    s: &mut RngStream,
) -> Result<Vec<SampleSource>> {
    let p = synth_probability(n_synth, n_real)?;
    (0..total)
        .map(|_| {
            Ok(if s.bernoulli(p)? {
                SampleSource::Synth
            } else {
                SampleSource::Real
            })
        })
        .collect()
}
