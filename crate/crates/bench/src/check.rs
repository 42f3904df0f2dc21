//! Forward/backward equivalence of the fused head against the eager oracle.

use std::fmt;

use lmhead::fused::{backward_fused, forward_fully_fused, forward_hybrid};
use lmhead::reference::{backward_eager, forward_eager, forward_postmask};
use lmhead::{
    seeded_tensor, AttentionMask, DenseTensor, Dims, HeadInputs, HeadOutput, Init, Result,
    TileConfig,
};

/// Relative tolerance on pooled scores.
pub const SCORE_REL_TOL: f64 = 1e-5;
/// Absolute floor under [`SCORE_REL_TOL`].
pub const SCORE_ABS_FLOOR: f64 = 1e-7;
/// Absolute tolerance between fused and eager gradients.
pub const GRAD_ABS_TOL: f64 = 1e-5;
/// Absolute tolerance between the two mask placements.
pub const MASK_ORDER_TOL: f64 = 1e-6;

/// Deliberate corruption of the fused output, for exercising the failure
/// path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Fault {
    /// Add `delta` to the hybrid score at `(b, v)`.
    CorruptScore { b: usize, v: usize, delta: f32 },
}

#[derive(Debug, Clone)]
pub struct CheckOptions {
    pub dims: Dims,
    pub seed: u64,
    pub grid: Vec<TileConfig>,
    pub fault: Option<Fault>,
}

impl CheckOptions {
    pub fn new(dims: Dims, seed: u64) -> Self {
        Self {
            dims,
            seed,
            grid: default_grid(dims),
            fault: None,
        }
    }
}

/// `C in {1, ceil(V/2), V}` x `batch_tile in {1, B}` x
/// `{1 thread deterministic, 2 threads parallel}`.
pub fn default_grid(dims: Dims) -> Vec<TileConfig> {
    let mut cs = vec![1, dims.vocab().div_ceil(2), dims.vocab()];
    cs.dedup();
    let mut bts = vec![1, dims.batch()];
    bts.dedup();
    let mut grid = Vec::new();
    for &c in &cs {
        for &bt in &bts {
            for (threads, det) in [(1, true), (2, false)] {
                grid.push(
                    TileConfig::for_dims(dims)
                        .with_tiles(c, bt)
                        .with_threads(threads)
                        .with_deterministic(det),
                );
            }
        }
    }
    grid
}

/// Inputs used by `check` and `gradcheck`: uniform(-1, 1) tensors and a
/// mask keeping each position with probability 0.75.
pub fn seeded_instance(dims: Dims, seed: u64) -> Result<(HeadInputs, DenseTensor)> {
    let mask = AttentionMask::seeded(dims.batch(), dims.seq(), seed ^ 0x6d61_736b, 0.75);
    let inputs = HeadInputs::seeded(dims, seed, mask)?;
    let dy = seeded_tensor(
        &[dims.batch(), dims.vocab()],
        seed ^ 0x6479,
        Init::uniform(-1.0, 1.0),
    )?;
    Ok((inputs, dy))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub label: String,
    pub max_abs_err: f64,
    /// `(b, v)` of the worst score violation, or of the largest error.
    pub worst_at: Option<(usize, usize)>,
    /// First `(b, v)` with `Y > 0` whose argmax differs.
    pub index_mismatch: Option<(usize, usize)>,
    pub passed: bool,
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<44} max|err|={:.3e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.label,
            self.max_abs_err
        )?;
        if !self.passed {
            if let Some((b, v)) = self.worst_at {
                write!(f, " worst at (b={b}, v={v})")?;
            }
            if let Some((b, v)) = self.index_mismatch {
                write!(f, " argmax differs at (b={b}, v={v})")?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct CheckReport {
    pub comparisons: Vec<Comparison>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.comparisons.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Comparison> {
        self.comparisons.iter().filter(|c| !c.passed)
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.comparisons {
            writeln!(f, "{c}")?;
        }
        write!(f, "{}", if self.passed() { "PASS" } else { "FAIL" })
    }
}

/// Scores within `SCORE_REL_TOL` relative (with `SCORE_ABS_FLOOR`) and equal
/// argmax wherever the reference score is positive.
pub fn compare_outputs(label: String, got: &HeadOutput, want: &HeadOutput) -> Comparison {
    let v_len = want.scores.shape()[1];
    let mut max_abs_err = 0.0f64;
    let mut worst_at = None;
    let mut worst_excess = 0.0f64;
    let mut violation = false;
    let mut index_mismatch = None;
    for (i, (&g, &w)) in got.scores.data().iter().zip(want.scores.data()).enumerate() {
        let err = (g as f64 - w as f64).abs();
        let tol = (SCORE_REL_TOL * (w as f64).abs()).max(SCORE_ABS_FLOOR);
        max_abs_err = max_abs_err.max(err);
        if err > tol {
            violation = true;
        }
        if err / tol > worst_excess {
            worst_excess = err / tol;
            worst_at = Some((i / v_len, i % v_len));
        }
        if w > 0.0 && index_mismatch.is_none() && got.indices.data()[i] != want.indices.data()[i] {
            index_mismatch = Some((i / v_len, i % v_len));
        }
    }
    Comparison {
        label,
        max_abs_err,
        worst_at,
        index_mismatch,
        passed: !violation && index_mismatch.is_none(),
    }
}

pub fn compare_abs(label: String, got: &DenseTensor, want: &DenseTensor, tol: f64) -> Comparison {
    let cols = *want.shape().last().unwrap_or(&1);
    let (mut max_abs_err, mut worst_at) = (0.0f64, None);
    for (i, (&g, &w)) in got.data().iter().zip(want.data()).enumerate() {
        let err = (g as f64 - w as f64).abs();
        if err > max_abs_err {
            max_abs_err = err;
            worst_at = Some((i / cols, i % cols));
        }
    }
    Comparison {
        label,
        max_abs_err,
        worst_at,
        index_mismatch: None,
        passed: max_abs_err <= tol,
    }
}

fn cfg_label(cfg: &TileConfig) -> String {
    format!(
        "C={},bt={},t={}{}",
        cfg.vocab_tile,
        cfg.batch_tile,
        cfg.num_threads,
        if cfg.deterministic { ",det" } else { "" }
    )
}

pub fn run_check(opts: &CheckOptions) -> Result<CheckReport> {
    let (inputs, dy) = seeded_instance(opts.dims, opts.seed)?;
    let (eager, dense) = forward_eager(&inputs)?;
    let eager_grads = backward_eager(&inputs, &dense, &eager, &dy)?;
    let mut report = CheckReport::default();

    let post = forward_postmask(&inputs)?;
    report.comparisons.push(compare_abs(
        "post-activation mask vs eager Y".into(),
        &post,
        &eager.scores,
        MASK_ORDER_TOL,
    ));

    for cfg in &opts.grid {
        let label = cfg_label(cfg);
        let mut hybrid = forward_hybrid(&inputs, cfg)?;
        if let Some(Fault::CorruptScore { b, v, delta }) = opts.fault {
            hybrid.scores.data_mut()[b * opts.dims.vocab() + v] += delta;
        }
        report.comparisons.push(compare_outputs(
            format!("hybrid[{label}] Y,I"),
            &hybrid,
            &eager,
        ));
        let fully = forward_fully_fused(&inputs, cfg)?;
        report.comparisons.push(compare_outputs(
            format!("fully_fused[{label}] Y,I"),
            &fully,
            &eager,
        ));

        let grads = backward_fused(&inputs, &fully, &dy, cfg)?;
        for (name, got, want) in [
            ("dH", &grads.hidden, &eager_grads.hidden),
            ("dE", &grads.embed, &eager_grads.embed),
            ("db", &grads.bias, &eager_grads.bias),
        ] {
            report.comparisons.push(compare_abs(
                format!("backward[{label}] {name}"),
                got,
                want,
                GRAD_ABS_TOL,
            ));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn passes_on_small_instance() {
        let report = run_check(&CheckOptions::new(Dims::new(2, 3, 4, 5).unwrap(), 42)).unwrap();
        assert!(report.passed(), "{report}");
        assert!(report.comparisons.len() > 10);
    }

    #[test]
    fn passes_with_single_position() {
        let report = run_check(&CheckOptions::new(Dims::new(3, 1, 4, 7).unwrap(), 1)).unwrap();
        assert!(report.passed(), "{report}");
    }

    #[test]
    fn injected_fault_is_located() {
        let dims = Dims::new(2, 3, 4, 5).unwrap();
        let mut opts = CheckOptions::new(dims, 42);
        opts.fault = Some(Fault::CorruptScore {
            b: 1,
            v: 3,
            delta: 0.5,
        });
        let report = run_check(&opts).unwrap();
        assert!(!report.passed());
        let failed: Vec<_> = report.failures().collect();
        assert!(failed.iter().all(|c| c.label.starts_with("hybrid")));
        assert!(failed.iter().all(|c| c.worst_at == Some((1, 3))));
        assert!(report.to_string().contains("worst at (b=1, v=3)"));
    }

    #[test]
    fn grid_covers_extremes() {
        let dims = Dims::new(4, 2, 2, 9).unwrap();
        let grid = default_grid(dims);
        assert!(grid.iter().any(|c| c.vocab_tile == 1 && c.batch_tile == 1));
        assert!(grid.iter().any(|c| c.vocab_tile == 9 && c.batch_tile == 4));
        assert!(grid.iter().all(|c| c.validate(dims).is_ok()));
    }
}
