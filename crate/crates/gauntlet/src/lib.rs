//! The gauntlet: small C subjects with known roadblocks, plus oracles that
//! check the fuzzer's analyses against independent implementations.
//!
//! Cases live under `gauntlet/<name>/` at the workspace root:
//!
//! ```text
//! case.toml          metadata, goal arm, solving chain, slice criteria
//! src/               subject sources
//! seeds/             initial corpus
//! inputs/            extra witnesses for deeper criteria
//! replay.json        scripted solver answers (scripted cases only)
//! expect/arms.json   arms the seed set covers, frozen
//! expect/slice.*.txt reference slice statement sets, frozen
//! ```

pub mod case;
pub mod ref_slice;
pub mod trace_oracle;
pub mod validate;

pub use case::{
    gauntlet_root, load_cases, ArmSpec, BuiltCase, Class, GauntletCase, StepSolver, CASE_TIMEOUT,
};
pub use ref_slice::{reference_slice, RefSlice};
pub use trace_oracle::{interpret_trace, ArmObservation};
pub use validate::{validate_corpus, CaseReport, ValidationReport};

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum GauntletError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    CaseFile { path: PathBuf, message: String },
    #[error("unsupported construct at {location}: {construct}")]
    Unsupported { location: String, construct: String },
    #[error("{0}")]
    Oracle(String),
    #[error(transparent)]
    Core(#[from] slicefuzz_core::Error),
}

pub type Result<T, E = GauntletError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> GauntletError {
    let path = path.into();
    move |source| GauntletError::Io { path, source }
}
