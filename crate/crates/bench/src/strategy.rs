use std::fmt;
use std::str::FromStr;

use lmhead::fused::{forward_fully_fused_with, forward_hybrid_with};
use lmhead::reference::{forward_compiled_sim_with, forward_eager_with};
use lmhead::{HeadInputs, HeadOutput, MemTracker, Result, TileConfig};

/// Forward implementation measured by a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BenchStrategy {
    Eager,
    CompiledSim,
    Hybrid,
    FullyFused,
}

impl BenchStrategy {
    pub const ALL: [BenchStrategy; 4] = [
        BenchStrategy::Eager,
        BenchStrategy::CompiledSim,
        BenchStrategy::Hybrid,
        BenchStrategy::FullyFused,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BenchStrategy::Eager => "eager",
            BenchStrategy::CompiledSim => "compiled-sim",
            BenchStrategy::Hybrid => "hybrid",
            BenchStrategy::FullyFused => "fully_fused",
        }
    }

    pub fn is_tiled(self) -> bool {
        matches!(self, BenchStrategy::Hybrid | BenchStrategy::FullyFused)
    }

    /// Runs one forward, keeping everything backward would need alive in the
    /// returned guard.
    pub fn forward(
        self,
        inputs: &HeadInputs,
        cfg: &TileConfig,
        mem: &MemTracker,
    ) -> Result<ForwardResult> {
        Ok(match self {
            BenchStrategy::Eager => {
                let (out, saved) = forward_eager_with(inputs, mem)?;
                ForwardResult {
                    output: out,
                    _retained: Some(saved.logits),
                }
            }
            BenchStrategy::CompiledSim => {
                let (out, logits) = forward_compiled_sim_with(inputs, mem)?;
                ForwardResult {
                    output: out,
                    _retained: Some(logits),
                }
            }
            BenchStrategy::Hybrid => ForwardResult {
                output: forward_hybrid_with(inputs, cfg, mem)?,
                _retained: None,
            },
            BenchStrategy::FullyFused => ForwardResult {
                output: forward_fully_fused_with(inputs, cfg, mem)?,
                _retained: None,
            },
        })
    }
}

pub struct ForwardResult {
    pub output: HeadOutput,
    _retained: Option<lmhead::DenseTensor>,
}

impl fmt::Display for BenchStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BenchStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        BenchStrategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| {
                format!(
                    "unknown strategy {s:?} (expected eager, compiled-sim, hybrid, fully_fused)"
                )
            })
    }
}
