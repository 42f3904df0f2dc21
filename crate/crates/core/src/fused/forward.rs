use std::sync::Mutex;

use super::{round_robin, tile_schedule, Tile, TileConfig};
use crate::error::{HeadError, Result};
use crate::gemm::{dot, gemm_bt, GemmOptions};
use crate::head::{log1p_relu, HeadInputs, HeadOutput, RunningMax};
use crate::memory::{AllocKind, MemTracker};
use crate::tensor::{check_finite, DenseTensor, IndexTensor};

/// Output regions are disjoint per tile; the lock only serializes the
/// copy-out.
struct OutputSink<'a> {
    v_len: usize,
    inner: Mutex<(&'a mut [f32], &'a mut [u32])>,
}

impl<'a> OutputSink<'a> {
    fn new(out: &'a mut HeadOutput, v_len: usize) -> Self {
        Self {
            v_len,
            inner: Mutex::new((out.scores.data_mut(), out.indices.data_mut())),
        }
    }

    /// `fill(local_b, local_v) -> RunningMax` for every cell of `tile`.
    fn write(&self, tile: &Tile, mut fill: impl FnMut(usize, usize) -> RunningMax) {
        let mut guard = self.inner.lock().expect("output lock poisoned");
        let (y, idx) = &mut *guard;
        for (lb, b) in tile.batch.clone().enumerate() {
            for (lv, v) in tile.vocab.clone().enumerate() {
                let run = fill(lb, lv);
                y[b * self.v_len + v] = log1p_relu(run.value);
                idx[b * self.v_len + v] = run.index;
            }
        }
    }
}

fn alloc_saved(inputs: &HeadInputs, mem: &MemTracker) -> Result<HeadOutput> {
    let dims = inputs.dims();
    let shape = [dims.batch(), dims.vocab()];
    Ok(HeadOutput {
        scores: DenseTensor::zeros_tracked(&shape, mem, AllocKind::RetainedOutput)?,
        indices: IndexTensor::zeros_tracked(&shape, mem, AllocKind::RetainedOutput)?,
    })
}

pub fn forward_hybrid(inputs: &HeadInputs, cfg: &TileConfig) -> Result<HeadOutput> {
    forward_hybrid_with(inputs, cfg, &MemTracker::new())
}

/// Per tile: GEMM into a `batch_tile x S x C` buffer, then one masked
/// max/argmax pass and the activation on the reduced values. Each worker
/// owns one tile buffer for the whole call.
pub fn forward_hybrid_with(
    inputs: &HeadInputs,
    cfg: &TileConfig,
    mem: &MemTracker,
) -> Result<HeadOutput> {
    let dims = inputs.dims();
    let (s_len, d_len, v_len) = (dims.seq(), dims.hidden(), dims.vocab());
    let tiles = tile_schedule(dims, cfg)?;
    let mut out = alloc_saved(inputs, mem)?;
    let sink = OutputSink::new(&mut out, v_len);
    let tile_elems = cfg.batch_tile * s_len * cfg.vocab_tile;

    round_robin(tiles, cfg.num_threads, |_, tiles| {
        let mut buf = DenseTensor::zeros_tracked(&[tile_elems], mem, AllocKind::Scratch)?;
        for tile in &tiles {
            let rows = tile.batch.len() * s_len;
            let cols = tile.vocab.len();
            let h = &inputs.hidden().data()
                [tile.batch.start * s_len * d_len..tile.batch.end * s_len * d_len];
            let e = &inputs.embed().data()[tile.vocab.start * d_len..tile.vocab.end * d_len];
            let bias = &inputs.bias().data()[tile.vocab.clone()];
            let logits = &mut buf.data_mut()[..rows * cols];
            gemm_bt(
                h,
                e,
                Some(bias),
                logits,
                (rows, cols, d_len),
                GemmOptions::default(),
            );
            check_finite("logit tile", logits)?;

            let logits = &*logits;
            sink.write(tile, |lb, lv| {
                let mask = inputs.mask().row(tile.batch.start + lb);
                let at = |s: usize| {
                    if mask[s] == 0 {
                        0.0
                    } else {
                        logits[(lb * s_len + s) * cols + lv]
                    }
                };
                let mut run = RunningMax::first(at(0));
                for s in 1..s_len {
                    run.push(s, at(s));
                }
                run
            });
        }
        Ok(())
    })?;
    Ok(out)
}

pub fn forward_fully_fused(inputs: &HeadInputs, cfg: &TileConfig) -> Result<HeadOutput> {
    forward_fully_fused_with(inputs, cfg, &MemTracker::new())
}

/// Per tile: running maxima and argmax for `batch_tile x C` cells, updated
/// one sequence position at a time as the dot products are produced.
/// Masked positions skip the dot products and contribute `0.0`.
pub fn forward_fully_fused_with(
    inputs: &HeadInputs,
    cfg: &TileConfig,
    mem: &MemTracker,
) -> Result<HeadOutput> {
    let dims = inputs.dims();
    let (s_len, v_len) = (dims.seq(), dims.vocab());
    let tiles = tile_schedule(dims, cfg)?;
    let mut out = alloc_saved(inputs, mem)?;
    let sink = OutputSink::new(&mut out, v_len);
    let cells = cfg.batch_tile * cfg.vocab_tile;

    round_robin(tiles, cfg.num_threads, |_, tiles| {
        let mut run_max = DenseTensor::zeros_tracked(&[cells], mem, AllocKind::Scratch)?;
        let mut run_idx = IndexTensor::zeros_tracked(&[cells], mem, AllocKind::Scratch)?;
        for tile in &tiles {
            let cols = tile.vocab.len();
            let bias = &inputs.bias().data()[tile.vocab.clone()];
            for (lb, b) in tile.batch.clone().enumerate() {
                let mask = inputs.mask().row(b);
                let vals = &mut run_max.data_mut()[lb * cols..(lb + 1) * cols];
                let idxs = &mut run_idx.data_mut()[lb * cols..(lb + 1) * cols];
                for (s, &keep) in mask.iter().enumerate() {
                    let h = inputs.hidden_row(b, s);
                    for (lv, v) in tile.vocab.clone().enumerate() {
                        let l = if keep == 0 {
                            0.0
                        } else {
                            let l = dot(h, inputs.embed_row(v)) + bias[lv];
                            if !l.is_finite() {
                                return Err(HeadError::NonFinite {
                                    what: "streamed logit",
                                    index: (b * s_len + s) * v_len + v,
                                });
                            }
                            l
                        };
                        if s == 0 || l > vals[lv] {
                            vals[lv] = l;
                            idxs[lv] = s as u32;
                        }
                    }
                }
            }
            let (vals, idxs) = (run_max.data(), run_idx.data());
            sink.write(tile, |lb, lv| RunningMax {
                value: vals[lb * cols + lv],
                index: idxs[lb * cols + lv],
            });
        }
        Ok(())
    })?;
    Ok(out)
}
