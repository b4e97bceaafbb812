//! Hybrid greybox fuzzing with a lightweight, solver-pluggable concolic stage.
//!
//! The pieces line up with the campaign loop:
//!
//! * [`ast_index`] parses the subject's C sources into conditionals, arms,
//!   declarations and statement units, all addressed by file ranges.
//! * [`tracer`] instruments the subject so every executed statement appends a
//!   record to a trace file, and runs it on one input.
//! * [`coverage`] folds corpus traces into a per-arm coverage report and the
//!   interestingness map used to pick roadblocks.
//! * [`slicer`] computes the dynamic backward slice for a roadblock and
//!   flattens it into a re-parseable C fragment ending in an assertion.
//! * [`solver`] wraps the slice and a witness input into a prompt and asks a
//!   backend (remote chat endpoint, scripted replay, or brute force) for a
//!   mutated input.
//! * [`fuzzer`] is a small coverage-guided mutational fuzzer over a shared,
//!   sync-compatible corpus directory.
//! * [`orchestrator`] drives all of the above and writes campaign reports.

pub mod ast_index;
pub mod config;
pub mod coverage;
pub mod error;
pub mod fuzzer;
pub mod orchestrator;
pub mod slicer;
pub mod solver;
pub mod tracer;
mod util;

pub use error::{Error, Result};
