//! Independent checkers used by tests, the fuzzer and the bench tool.

pub mod fuzz;
pub mod model;
pub mod trace;
pub mod validity;

pub use fuzz::{fuzz, Divergence, FuzzConfig, FuzzStats, Lockstep, Mode, Verdict};
pub use model::{ModelError, Outcome, Pair, ReferenceModel};
pub use trace::{Op, ParseTraceError, Trace};
pub use validity::{
    check_free_top, check_free_top_with, scan_validity, Condition, FreeTopCheck, ValidityReport,
    Violation,
};
