//! Fused sparse LM head.
//!
//! The forward pass walks `(batch tile, vocab tile)` blocks and reduces each
//! block over the sequence axis as soon as its logits exist, so the
//! `B x S x V` logit tensor is never materialized. Two variants share the
//! contract:
//!
//! * [`forward_hybrid`] computes a `batch_tile x S x C` logit tile with the
//!   blocked GEMM, then reduces it in one pass.
//! * [`forward_fully_fused`] streams dot products position by position into
//!   running maxima, so only `batch_tile x C` values and indices are live.
//!
//! Only the pooled scores and argmax indices are kept for [`backward_fused`],
//! which routes each active `(b, v)` gradient to the single hidden row that
//! won the max.

mod backward;
mod forward;

use std::ops::Range;

pub use backward::{backward_fused, backward_fused_probed, backward_fused_with, NoProbe, RowProbe};
pub use forward::{
    forward_fully_fused, forward_fully_fused_with, forward_hybrid, forward_hybrid_with,
};

use crate::error::{HeadError, Result};
use crate::head::HeadOutput;
use crate::tensor::Dims;

/// State kept between the fused forward and backward: exactly the forward
/// output, `B * V * (4 + 4)` bytes regardless of `S`.
pub type SavedSparseState = HeadOutput;

/// Upper bound the default config keeps the hybrid logit tile under.
pub const DEFAULT_TILE_BUDGET_BYTES: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileConfig {
    /// Vocabulary tile width `C`.
    pub vocab_tile: usize,
    pub batch_tile: usize,
    /// Bit-reproducible backward regardless of thread count.
    pub deterministic: bool,
    pub num_threads: usize,
    /// Accumulate the bias gradient.
    pub bias_grad: bool,
}

impl TileConfig {
    /// `C = min(64, V)`, `batch_tile = min(B, 8)`, then halve `batch_tile`
    /// and after that `C` until the `batch_tile * S * C * 4` byte logit tile
    /// fits in [`DEFAULT_TILE_BUDGET_BYTES`]. Single-threaded and
    /// deterministic.
    pub fn for_dims(dims: Dims) -> Self {
        let mut vocab_tile = dims.vocab().min(64);
        let mut batch_tile = dims.batch().min(8);
        let bytes = |bt: usize, c: usize| {
            bt.saturating_mul(dims.seq())
                .saturating_mul(c)
                .saturating_mul(4)
        };
        while batch_tile > 1 && bytes(batch_tile, vocab_tile) > DEFAULT_TILE_BUDGET_BYTES {
            batch_tile /= 2;
        }
        while vocab_tile > 1 && bytes(batch_tile, vocab_tile) > DEFAULT_TILE_BUDGET_BYTES {
            vocab_tile /= 2;
        }
        Self {
            vocab_tile,
            batch_tile,
            deterministic: true,
            num_threads: 1,
            bias_grad: true,
        }
    }

    pub fn with_tiles(mut self, vocab_tile: usize, batch_tile: usize) -> Self {
        self.vocab_tile = vocab_tile;
        self.batch_tile = batch_tile;
        self
    }

    pub fn with_threads(mut self, num_threads: usize) -> Self {
        self.num_threads = num_threads;
        self
    }

    pub fn with_deterministic(mut self, deterministic: bool) -> Self {
        self.deterministic = deterministic;
        self
    }

    pub fn with_bias_grad(mut self, bias_grad: bool) -> Self {
        self.bias_grad = bias_grad;
        self
    }

    pub fn validate(&self, dims: Dims) -> Result<()> {
        if self.vocab_tile == 0 || self.vocab_tile > dims.vocab() {
            return Err(HeadError::InvalidConfig(format!(
                "vocab tile {} outside [1, {}]",
                self.vocab_tile,
                dims.vocab()
            )));
        }
        if self.batch_tile == 0 || self.batch_tile > dims.batch() {
            return Err(HeadError::InvalidConfig(format!(
                "batch tile {} outside [1, {}]",
                self.batch_tile,
                dims.batch()
            )));
        }
        if self.num_threads == 0 {
            return Err(HeadError::InvalidConfig(
                "num_threads must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Bytes of one hybrid logit tile, `batch_tile * S * C * 4`.
    pub fn tile_buffer_bytes(&self, dims: Dims) -> usize {
        self.batch_tile * dims.seq() * self.vocab_tile * std::mem::size_of::<f32>()
    }
}

/// One output block: rows `batch` of `Y`/`I`, columns `vocab`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tile {
    pub batch: Range<usize>,
    pub vocab: Range<usize>,
}

/// Partition of `[0, B) x [0, V)` into tiles, batch-major then vocab.
pub fn tile_schedule(dims: Dims, cfg: &TileConfig) -> Result<Vec<Tile>> {
    cfg.validate(dims)?;
    let (b_len, v_len) = (dims.batch(), dims.vocab());
    let mut tiles =
        Vec::with_capacity(b_len.div_ceil(cfg.batch_tile) * v_len.div_ceil(cfg.vocab_tile));
    for b0 in (0..b_len).step_by(cfg.batch_tile) {
        for v0 in (0..v_len).step_by(cfg.vocab_tile) {
            tiles.push(Tile {
                batch: b0..(b0 + cfg.batch_tile).min(b_len),
                vocab: v0..(v0 + cfg.vocab_tile).min(v_len),
            });
        }
    }
    Ok(tiles)
}

/// Distributes `items` round-robin over at most `threads` scoped workers.
/// Item `i` always goes to worker `i % workers`.
pub(crate) fn round_robin<T: Send, R: Send>(
    items: Vec<T>,
    threads: usize,
    work: impl Fn(usize, Vec<T>) -> Result<R> + Sync,
) -> Result<Vec<R>> {
    let workers = threads.clamp(1, items.len().max(1));
    let mut buckets: Vec<Vec<T>> = (0..workers).map(|_| Vec::new()).collect();
    for (i, item) in items.into_iter().enumerate() {
        buckets[i % workers].push(item);
    }
    if workers == 1 {
        let bucket = buckets.pop().unwrap_or_default();
        return Ok(vec![work(0, bucket)?]);
    }
    let work = &work;
    std::thread::scope(|scope| {
        let handles: Vec<_> = buckets
            .into_iter()
            .enumerate()
            .map(|(w, bucket)| scope.spawn(move || work(w, bucket)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("head worker panicked"))
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_tile() {
        let dims = Dims::new(4, 3, 2, 8).unwrap();
        let cfg = TileConfig::for_dims(dims).with_tiles(8, 4);
        assert_eq!(
            tile_schedule(dims, &cfg).unwrap(),
            vec![Tile {
                batch: 0..4,
                vocab: 0..8
            }]
        );
    }

    #[test]
    fn ragged_vocab_tail() {
        let dims = Dims::new(4, 3, 2, 10).unwrap();
        let cfg = TileConfig::for_dims(dims).with_tiles(4, 2);
        let tiles = tile_schedule(dims, &cfg).unwrap();
        assert_eq!(tiles.len(), 6);
        assert_eq!(tiles[2].vocab, 8..10);
        assert_eq!(tiles[3].batch, 2..4);
        assert_eq!(tiles[3].vocab, 0..4);
    }

    #[test]
    fn invalid_configs_rejected() {
        let dims = Dims::new(2, 3, 2, 10).unwrap();
        let base = TileConfig::for_dims(dims);
        assert!(base.with_tiles(0, 1).validate(dims).is_err());
        assert!(base.with_tiles(11, 1).validate(dims).is_err());
        assert!(base.with_tiles(4, 3).validate(dims).is_err());
        assert!(base.with_threads(0).validate(dims).is_err());
    }

    #[test]
    fn default_config_fits_budget() {
        let dims = Dims::new(512, 512, 768, 30522).unwrap();
        let cfg = TileConfig::for_dims(dims);
        cfg.validate(dims).unwrap();
        assert!(cfg.tile_buffer_bytes(dims) <= DEFAULT_TILE_BUDGET_BYTES);
        assert_eq!(cfg.vocab_tile, 64);
        let small = Dims::new(2, 3, 4, 5).unwrap();
        let cfg = TileConfig::for_dims(small);
        assert_eq!((cfg.vocab_tile, cfg.batch_tile), (5, 2));
    }

    proptest! {
        #[test]
        fn schedule_partitions_output(
            b in 1usize..20, v in 1usize..70, bt_frac in 0.0f64..1.0, c_frac in 0.0f64..1.0,
        ) {
            let dims = Dims::new(b, 1, 1, v).unwrap();
            let bt = 1 + ((b - 1) as f64 * bt_frac) as usize;
            let c = 1 + ((v - 1) as f64 * c_frac) as usize;
            let cfg = TileConfig::for_dims(dims).with_tiles(c, bt);
            let tiles = tile_schedule(dims, &cfg).unwrap();
            let mut hits = vec![0u8; b * v];
            let mut last = (0, 0);
            for t in &tiles {
                prop_assert!(!t.batch.is_empty() && !t.vocab.is_empty());
                prop_assert!((t.batch.start, t.vocab.start) >= last);
                last = (t.batch.start, t.vocab.start);
                for bi in t.batch.clone() {
                    for vi in t.vocab.clone() {
                        hits[bi * v + vi] += 1;
                    }
                }
            }
            prop_assert!(hits.iter().all(|&h| h == 1));
        }
    }
}
