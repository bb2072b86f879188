//! Command-line harness: experiment runs, sweeps, analyses and SVG plots
//! over the prompt-tuning calibration lab.
//!
//! CSV is the interchange format between `run`, `analyze` and `plot`; every
//! float is written with 17 significant digits and every command is a pure
//! function of its flags, so outputs are byte-identical across runs and
//! thread counts.

pub mod analyze;
pub mod cli;
pub mod csvio;
pub mod experiment;
pub mod svg;

use otpt_core::LabError;

/// Process exit code for an error: 2 for configuration/validation problems,
/// 1 for runtime failures.
pub fn exit_code_for(err: &LabError) -> i32 {
    match err {
        LabError::InvalidSpec(_) => 2,
        _ => 1,
    }
}
