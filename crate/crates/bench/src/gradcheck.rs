//! Analytic gradients of both heads against central differences.

use std::fmt;

use lmhead::fused::{backward_fused, forward_hybrid};
use lmhead::reference::{backward_eager, finite_difference_grads, forward_eager, GradDeviation};
use lmhead::{DenseTensor, Dims, HeadError, HeadInputs, Result, TileConfig};

use crate::check::seeded_instance;

/// Absolute tolerance against finite differences.
pub const FD_ABS_TOL: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub eager: GradDeviation,
    pub fused: GradDeviation,
    pub step: f64,
    pub tol: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.eager.max() <= self.tol && self.fused.max() <= self.tol
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, dev) in [
            ("backward_eager", &self.eager),
            ("backward_fused", &self.fused),
        ] {
            writeln!(
                f,
                "{} {name:<15} max|dH|={:.3e} max|dE|={:.3e} max|db|={:.3e} compared={} skipped={}",
                if dev.max() <= self.tol {
                    "PASS"
                } else {
                    "FAIL"
                },
                dev.hidden,
                dev.embed,
                dev.bias,
                dev.compared,
                dev.skipped
            )?;
        }
        write!(
            f,
            "{} (h={:e}, tol={:e})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.step,
            self.tol
        )
    }
}

pub fn gradcheck_inputs(
    inputs: &HeadInputs,
    dy: &DenseTensor,
    step: f64,
) -> Result<GradcheckReport> {
    let fd = finite_difference_grads(inputs, dy, step)?;
    let (out, saved) = forward_eager(inputs)?;
    let eager = backward_eager(inputs, &saved, &out, dy)?;
    let cfg = TileConfig::for_dims(inputs.dims());
    let sparse = forward_hybrid(inputs, &cfg)?;
    let fused = backward_fused(inputs, &sparse, dy, &cfg)?;
    let mismatch = || HeadError::InvalidArgument("gradient shape mismatch".into());
    Ok(GradcheckReport {
        eager: fd.deviation(&eager).ok_or_else(mismatch)?,
        fused: fd.deviation(&fused).ok_or_else(mismatch)?,
        step,
        tol: FD_ABS_TOL,
    })
}

pub fn run_gradcheck(dims: Dims, seed: u64, step: f64) -> Result<GradcheckReport> {
    let (inputs, dy) = seeded_instance(dims, seed)?;
    gradcheck_inputs(&inputs, &dy, step)
}
