//! Algorithmic slow-memory traffic of each head execution plan.
//!
//! Counts are what a plan must move by construction, not what a cache would
//! observe. All arithmetic is checked `u64`. Sizes: `H = B*S*D`, `E = V*D`,
//! `b = V`, `L = B*S*V` and `Y = B*V` elements at the activation width; the
//! mask is one byte per position; argmax indices are `index_bytes` wide.

use std::fmt;

use crate::error::{HeadError, Result};
use crate::fused::TileConfig;
use crate::tensor::Dims;

/// Storage widths used by the traffic model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DtypeSpec {
    activation_bytes: u64,
    index_bytes: u64,
}

impl DtypeSpec {
    pub const HALF: DtypeSpec = DtypeSpec {
        activation_bytes: 2,
        index_bytes: 4,
    };
    pub const SINGLE: DtypeSpec = DtypeSpec {
        activation_bytes: 4,
        index_bytes: 4,
    };

    pub fn new(activation_bytes: u64) -> Result<Self> {
        match activation_bytes {
            2 => Ok(Self::HALF),
            4 => Ok(Self::SINGLE),
            other => Err(HeadError::InvalidArgument(format!(
                "activation width must be 2 or 4 bytes, got {other}"
            ))),
        }
    }

    pub fn activation_bytes(&self) -> u64 {
        self.activation_bytes
    }

    pub fn index_bytes(&self) -> u64 {
        self.index_bytes
    }
}

/// Execution plan being costed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    Eager,
    Compiled,
    Hybrid,
    FullyFused,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Eager,
        Strategy::Compiled,
        Strategy::Hybrid,
        Strategy::FullyFused,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Eager => "eager",
            Strategy::Compiled => "compiled",
            Strategy::Hybrid => "hybrid",
            Strategy::FullyFused => "fully_fused",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which fused forward the traffic is computed for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusedVariant {
    Hybrid,
    FullyFused,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageTraffic {
    pub label: &'static str,
    pub bytes_read: u64,
    pub bytes_written: u64,
    /// Portion of `bytes_read` that is logit tensor (or logit tile) traffic.
    pub logit_bytes_read: u64,
    /// Portion of `bytes_written` that is logit traffic.
    pub logit_bytes_written: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostReport {
    pub strategy: Strategy,
    pub stages: Vec<StageTraffic>,
    pub peak_activation_bytes: u64,
    pub saved_state_bytes: u64,
}

impl CostReport {
    pub fn total_read(&self) -> u64 {
        self.stages.iter().map(|s| s.bytes_read).sum()
    }

    pub fn total_written(&self) -> u64 {
        self.stages.iter().map(|s| s.bytes_written).sum()
    }

    /// Logit bytes read plus written across all stages.
    pub fn logit_traffic(&self) -> u64 {
        self.stages
            .iter()
            .map(|s| s.logit_bytes_read + s.logit_bytes_written)
            .sum()
    }
}

fn mul(parts: &[u64]) -> Result<u64> {
    parts
        .iter()
        .try_fold(1u64, |acc, &x| acc.checked_mul(x))
        .ok_or(HeadError::Overflow("byte count"))
}

fn add(parts: &[u64]) -> Result<u64> {
    parts
        .iter()
        .try_fold(0u64, |acc, &x| acc.checked_add(x))
        .ok_or(HeadError::Overflow("byte count"))
}

struct Sizes {
    h: u64,
    e: u64,
    bias: u64,
    mask: u64,
    logits: u64,
    y: u64,
    idx: u64,
}

impl Sizes {
    fn new(dims: Dims, dt: DtypeSpec) -> Result<Self> {
        let (b, s, d, v) = (
            dims.batch() as u64,
            dims.seq() as u64,
            dims.hidden() as u64,
            dims.vocab() as u64,
        );
        let a = dt.activation_bytes;
        Ok(Self {
            h: mul(&[b, s, d, a])?,
            e: mul(&[v, d, a])?,
            bias: mul(&[v, a])?,
            mask: mul(&[b, s])?,
            logits: mul(&[b, s, v, a])?,
            y: mul(&[b, v, a])?,
            idx: mul(&[b, v, dt.index_bytes])?,
        })
    }
}

fn stage(
    label: &'static str,
    read: u64,
    written: u64,
    logit_read: u64,
    logit_written: u64,
) -> StageTraffic {
    StageTraffic {
        label,
        bytes_read: read,
        bytes_written: written,
        logit_bytes_read: logit_read,
        logit_bytes_written: logit_written,
    }
}

/// Six separate passes over the materialized logits: GEMM, bias, mask,
/// ReLU, log1p, max.
pub fn eager_traffic(dims: Dims, dt: DtypeSpec) -> Result<CostReport> {
    let z = Sizes::new(dims, dt)?;
    let l = z.logits;
    Ok(CostReport {
        strategy: Strategy::Eager,
        stages: vec![
            stage("gemm", add(&[z.h, z.e])?, l, 0, l),
            stage("bias", add(&[l, z.bias])?, l, l, l),
            stage("mask", add(&[l, z.mask])?, l, l, l),
            stage("relu", l, l, l, l),
            stage("log1p", l, l, l, l),
            stage("max", l, z.y, l, 0),
        ],
        peak_activation_bytes: l,
        saved_state_bytes: l,
    })
}

/// GEMM to materialized logits, then one fused elementwise + max pass.
pub fn compiled_traffic(dims: Dims, dt: DtypeSpec) -> Result<CostReport> {
    let z = Sizes::new(dims, dt)?;
    let l = z.logits;
    Ok(CostReport {
        strategy: Strategy::Compiled,
        stages: vec![
            stage("gemm", add(&[z.h, z.e])?, l, 0, l),
            stage(
                "fused-elementwise-max",
                add(&[l, z.bias, z.mask])?,
                z.y,
                l,
                0,
            ),
        ],
        peak_activation_bytes: l,
        saved_state_bytes: l,
    })
}

/// Tiled plans. Every vocab tile re-reads the hidden states of its batch
/// tile, and every batch tile re-reads the embedding rows of its vocab tile.
pub fn fused_traffic(
    dims: Dims,
    dt: DtypeSpec,
    cfg: &TileConfig,
    variant: FusedVariant,
) -> Result<CostReport> {
    cfg.validate(dims)?;
    let z = Sizes::new(dims, dt)?;
    let vocab_tiles = dims.vocab().div_ceil(cfg.vocab_tile) as u64;
    let batch_tiles = dims.batch().div_ceil(cfg.batch_tile) as u64;
    let h_reads = mul(&[vocab_tiles, z.h])?;
    let e_reads = mul(&[batch_tiles, z.e])?;
    let b_reads = mul(&[batch_tiles, z.bias])?;
    let m_reads = mul(&[vocab_tiles, z.mask])?;
    let outputs = add(&[z.y, z.idx])?;
    let a = dt.activation_bytes;
    let (bt, c, s) = (
        cfg.batch_tile as u64,
        cfg.vocab_tile as u64,
        dims.seq() as u64,
    );

    let (strategy, stages, peak) = match variant {
        FusedVariant::Hybrid => {
            let l = z.logits;
            (
                Strategy::Hybrid,
                vec![
                    stage("tile-gemm", add(&[h_reads, e_reads, b_reads])?, l, 0, l),
                    stage("tile-reduce", add(&[l, m_reads])?, outputs, l, 0),
                ],
                mul(&[bt, s, c, a])?,
            )
        }
        FusedVariant::FullyFused => (
            Strategy::FullyFused,
            vec![stage(
                "fused",
                add(&[h_reads, e_reads, b_reads, m_reads])?,
                outputs,
                0,
                0,
            )],
            mul(&[bt, c, add(&[a, dt.index_bytes])?])?,
        ),
    };
    Ok(CostReport {
        strategy,
        stages,
        peak_activation_bytes: peak,
        saved_state_bytes: outputs,
    })
}

/// Factor by which pooled-state saving shrinks retained activations:
/// `(B*S*V) / (B*V) = S`.
pub fn saved_state_ratio(dims: Dims) -> u64 {
    dims.seq() as u64
}

/// All four plans for one problem.
pub fn all_reports(dims: Dims, dt: DtypeSpec, cfg: &TileConfig) -> Result<Vec<CostReport>> {
    Ok(vec![
        eager_traffic(dims, dt)?,
        compiled_traffic(dims, dt)?,
        fused_traffic(dims, dt, cfg, FusedVariant::Hybrid)?,
        fused_traffic(dims, dt, cfg, FusedVariant::FullyFused)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fused::tile_schedule;
    use proptest::prelude::*;

    fn bert() -> Dims {
        Dims::new(512, 512, 768, 30522).unwrap()
    }

    #[test]
    fn eager_logit_bytes_bert_scale() {
        let r = eager_traffic(bert(), DtypeSpec::HALF).unwrap();
        assert_eq!(r.stages.len(), 6);
        assert_eq!(r.stages[0].bytes_written, 16_002_318_336);
        assert_eq!(r.stages[5].bytes_written, 31_254_528);
        // "approximately 31MiB"
        let mib = 31.0 * 1024.0 * 1024.0;
        assert!((31_254_528f64 - mib).abs() / mib < 0.10);
    }

    #[test]
    fn eager_unit_dims() {
        let dims = Dims::new(1, 1, 1, 1).unwrap();
        let r = eager_traffic(dims, DtypeSpec::HALF).unwrap();
        assert_eq!(r.stages[0].logit_bytes_written, 2);
        for st in &r.stages[1..] {
            assert_eq!(st.logit_bytes_read, 2);
        }
        for st in &r.stages[..5] {
            assert_eq!(st.logit_bytes_written, 2);
        }
        // gemm: H 2 + E 2; bias: L 2 + b 2; mask: L 2 + M 1
        assert_eq!(r.stages[0].bytes_read, 4);
        assert_eq!(r.stages[1].bytes_read, 4);
        assert_eq!(r.stages[2].bytes_read, 3);
        assert_eq!(r.stages[5].bytes_written, 2);
        assert_eq!(r.total_read(), 4 + 4 + 3 + 2 + 2 + 2);
        assert_eq!(r.total_written(), 2 * 5 + 2);
    }

    #[test]
    fn compiled_two_stages() {
        let dims = bert();
        let r = compiled_traffic(dims, DtypeSpec::HALF).unwrap();
        assert_eq!(r.stages.len(), 2);
        assert_eq!(r.logit_traffic(), 2 * 16_002_318_336);
        let e = eager_traffic(dims, DtypeSpec::HALF).unwrap();
        assert_eq!(r.peak_activation_bytes, e.peak_activation_bytes);
        let one = Dims::new(4, 1, 8, 16).unwrap();
        assert_eq!(
            compiled_traffic(one, DtypeSpec::HALF)
                .unwrap()
                .peak_activation_bytes,
            eager_traffic(one, DtypeSpec::HALF)
                .unwrap()
                .peak_activation_bytes
        );
    }

    #[test]
    fn saved_state_of_fused_plans() {
        let dims = bert();
        let cfg = TileConfig::for_dims(dims);
        let dt = DtypeSpec::SINGLE;
        let r = fused_traffic(dims, dt, &cfg, FusedVariant::Hybrid).unwrap();
        assert_eq!(r.saved_state_bytes, 125_018_112);
        let long = dims.with_seq(1024).unwrap();
        let r2 = fused_traffic(
            long,
            dt,
            &TileConfig::for_dims(long),
            FusedVariant::FullyFused,
        )
        .unwrap();
        assert_eq!(r2.saved_state_bytes, 125_018_112);
    }

    #[test]
    fn degenerate_hybrid_matches_compiled_logit_traffic() {
        let dims = Dims::new(3, 7, 5, 11).unwrap();
        let cfg = TileConfig::for_dims(dims).with_tiles(11, 3);
        let dt = DtypeSpec::HALF;
        let h = fused_traffic(dims, dt, &cfg, FusedVariant::Hybrid).unwrap();
        let c = compiled_traffic(dims, dt).unwrap();
        assert_eq!(h.logit_traffic(), c.logit_traffic());
        assert_eq!(h.peak_activation_bytes, c.peak_activation_bytes);
        let f = fused_traffic(dims, dt, &cfg, FusedVariant::FullyFused).unwrap();
        assert_eq!(f.logit_traffic(), 0);
    }

    #[test]
    fn ratio() {
        for s in [1, 512, 8192] {
            assert_eq!(saved_state_ratio(Dims::new(2, s, 3, 4).unwrap()), s as u64);
        }
    }

    #[test]
    fn dtype_validation() {
        assert!(DtypeSpec::new(3).is_err());
        assert_eq!(DtypeSpec::new(2).unwrap(), DtypeSpec::HALF);
    }

    #[test]
    fn overflow_is_reported() {
        let huge = Dims::new(1 << 22, 1 << 22, 1, 1 << 22).unwrap();
        assert!(matches!(
            eager_traffic(huge, DtypeSpec::SINGLE),
            Err(HeadError::Overflow(_))
        ));
    }

    proptest! {
        #[test]
        fn closed_form_matches_per_tile_sum(
            b in 1usize..12, s in 1usize..9, d in 1usize..9, v in 1usize..40,
            bt_frac in 0.0f64..1.0, c_frac in 0.0f64..1.0, half in any::<bool>(),
        ) {
            let dims = Dims::new(b, s, d, v).unwrap();
            let bt = 1 + ((b - 1) as f64 * bt_frac) as usize;
            let c = 1 + ((v - 1) as f64 * c_frac) as usize;
            let cfg = TileConfig::for_dims(dims).with_tiles(c, bt);
            let dt = if half { DtypeSpec::HALF } else { DtypeSpec::SINGLE };
            let a = dt.activation_bytes();
            let (mut gemm_read, mut l_bytes, mut reduce_read, mut out_bytes) = (0u64, 0u64, 0u64, 0u64);
            for t in tile_schedule(dims, &cfg).unwrap() {
                let (tb, tv) = (t.batch.len() as u64, t.vocab.len() as u64);
                let (s, d) = (s as u64, d as u64);
                gemm_read += tb * s * d * a + tv * d * a + tv * a;
                l_bytes += tb * s * tv * a;
                reduce_read += tb * s * tv * a + tb * s;
                out_bytes += tb * tv * (a + 4);
            }
            let h = fused_traffic(dims, dt, &cfg, FusedVariant::Hybrid).unwrap();
            prop_assert_eq!(h.stages[0].bytes_read, gemm_read);
            prop_assert_eq!(h.stages[0].bytes_written, l_bytes);
            prop_assert_eq!(h.stages[1].bytes_read, reduce_read);
            prop_assert_eq!(h.stages[1].bytes_written, out_bytes);
            let f = fused_traffic(dims, dt, &cfg, FusedVariant::FullyFused).unwrap();
            prop_assert_eq!(f.stages[0].bytes_read, gemm_read + reduce_read - l_bytes);
        }

        #[test]
        fn peak_ordering_and_seq_scaling(
            b in 1usize..16, s in 1usize..64, d in 1usize..8, v in 1usize..80,
            bt_frac in 0.0f64..1.0, c_frac in 0.0f64..1.0, half in any::<bool>(),
        ) {
            let dims = Dims::new(b, s, d, v).unwrap();
            let bt = 1 + ((b - 1) as f64 * bt_frac) as usize;
            let c = 1 + ((v - 1) as f64 * c_frac) as usize;
            let cfg = TileConfig::for_dims(dims).with_tiles(c, bt);
            let dt = if half { DtypeSpec::HALF } else { DtypeSpec::SINGLE };
            let compiled = compiled_traffic(dims, dt).unwrap();
            let hybrid = fused_traffic(dims, dt, &cfg, FusedVariant::Hybrid).unwrap();
            let single_tile = bt == b && c == v;
            prop_assert!(hybrid.peak_activation_bytes <= compiled.peak_activation_bytes);
            prop_assert_eq!(hybrid.peak_activation_bytes == compiled.peak_activation_bytes, single_tile);
            // Streaming keeps value + index per cell; it undercuts the dense
            // tensor once S * a > a + index width.
            let fully = fused_traffic(dims, dt, &cfg, FusedVariant::FullyFused).unwrap();
            if (s as u64) * dt.activation_bytes() > dt.activation_bytes() + dt.index_bytes() {
                prop_assert!(fully.peak_activation_bytes < compiled.peak_activation_bytes);
            }

            let doubled = dims.with_seq(2 * s).unwrap();
            prop_assert_eq!(
                fused_traffic(doubled, dt, &cfg, FusedVariant::Hybrid).unwrap().saved_state_bytes,
                hybrid.saved_state_bytes
            );
            prop_assert_eq!(
                eager_traffic(doubled, dt).unwrap().saved_state_bytes,
                2 * eager_traffic(dims, dt).unwrap().saved_state_bytes
            );
            prop_assert_eq!(
                compiled_traffic(doubled, dt).unwrap().saved_state_bytes,
                2 * compiled.saved_state_bytes
            );
        }
    }
}
