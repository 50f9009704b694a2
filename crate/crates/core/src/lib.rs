//! Synthetic stroke-lesion MRI generation, evaluation metrics and
//! inference post-processing on 3-D volumes.

pub mod cli;
pub mod error;
pub mod lesionpaste;
pub mod morphology;
pub mod niftio;
pub mod postproc;
pub mod rngkit;
pub mod segmetrics;
pub mod synthgen;
pub mod volgrid;

pub use error::{Error, Result};
pub use rngkit::RngStream;
pub use volgrid::{Grid, LabelVolume, PosteriorStack, Volume};
