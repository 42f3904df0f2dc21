//! Harness around the fused LM head: oracle checks, gradient checks,
//! instrumented dimension sweeps and traffic reports.

pub mod check;
pub mod cost_table;
pub mod gradcheck;
pub mod strategy;
pub mod sweep;

pub use check::{run_check, CheckOptions, CheckReport, Fault};
pub use gradcheck::{run_gradcheck, GradcheckReport};
pub use strategy::BenchStrategy;
pub use sweep::{run_sweep, write_csv, Axis, BenchRecord, SweepSpec, CSV_HEADER};

/// Default guard on `B*S*V` for `check`.
pub const CHECK_GUARD_ELEMS: usize = 1 << 24;
