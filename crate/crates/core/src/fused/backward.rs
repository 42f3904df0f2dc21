use super::{round_robin, SavedSparseState, TileConfig};
use crate::error::Result;
use crate::head::{check_upstream, HeadGradients, HeadInputs};
use crate::memory::{AllocKind, MemTracker};
use crate::tensor::DenseTensor;

/// Observer for reads of hidden rows `H[b, s, :]` during backward.
pub trait RowProbe: Sync {
    fn on_hidden_row(&self, b: usize, s: usize);
}

/// Probe that records nothing.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoProbe;

impl RowProbe for NoProbe {
    #[inline(always)]
    fn on_hidden_row(&self, _b: usize, _s: usize) {}
}

#[inline]
fn axpy(acc: &mut [f32], g: f32, x: &[f32]) {
    for (a, &x) in acc.iter_mut().zip(x) {
        *a += g * x;
    }
}

/// Gate through `log1p(relu(.))` from the stored post-activation score:
/// `d/dl log(1 + l) = 1 / (1 + l) = exp(-y)` when `y > 0`.
#[inline]
fn gate(y: f32, dy: f32) -> Option<f32> {
    (y > 0.0).then(|| dy * (-y).exp())
}

pub fn backward_fused(
    inputs: &HeadInputs,
    saved: &SavedSparseState,
    dy: &DenseTensor,
    cfg: &TileConfig,
) -> Result<HeadGradients> {
    backward_fused_probed(inputs, saved, dy, cfg, &MemTracker::new(), &NoProbe)
}

pub fn backward_fused_with(
    inputs: &HeadInputs,
    saved: &SavedSparseState,
    dy: &DenseTensor,
    cfg: &TileConfig,
    mem: &MemTracker,
) -> Result<HeadGradients> {
    backward_fused_probed(inputs, saved, dy, cfg, mem, &NoProbe)
}

/// Argmax-routed backward from `(Y, I)` only.
///
/// Vocab blocks of width `C` are spread over workers; each owns its `dE`
/// and `db` rows. `dH` rows collide when several `v` pick the same
/// `(b, s)`:
/// * deterministic mode runs a second pass parallel over batch rows, each
///   row accumulating in ascending `v`, so bits do not depend on the thread
///   count;
/// * otherwise each worker fills a private `dH` and the partials are summed
///   pairwise in worker order.
///
/// Only `H[b, I[b, v], :]` for active `(b, v)` is read. Whether `saved`
/// came from this `inputs` is not checked beyond shapes and index range.
pub fn backward_fused_probed<P: RowProbe>(
    inputs: &HeadInputs,
    saved: &SavedSparseState,
    dy: &DenseTensor,
    cfg: &TileConfig,
    mem: &MemTracker,
    probe: &P,
) -> Result<HeadGradients> {
    let dims = inputs.dims();
    cfg.validate(dims)?;
    saved.check_against(dims)?;
    check_upstream(dy, dims)?;
    let (b_len, s_len, d_len, v_len) = (dims.batch(), dims.seq(), dims.hidden(), dims.vocab());
    let c = cfg.vocab_tile;

    let mut grads = HeadGradients {
        hidden: DenseTensor::zeros_tracked(&[b_len, s_len, d_len], mem, AllocKind::Output)?,
        embed: DenseTensor::zeros_tracked(&[v_len, d_len], mem, AllocKind::Output)?,
        bias: DenseTensor::zeros_tracked(&[v_len], mem, AllocKind::Output)?,
    };
    let y = saved.scores.data();
    let idx = saved.indices.data();
    let dy = dy.data();
    let bias_grad = cfg.bias_grad;
    let private_dh = !cfg.deterministic;

    let blocks: Vec<(usize, &mut [f32], &mut [f32])> = grads
        .embed
        .data_mut()
        .chunks_mut(c * d_len)
        .zip(grads.bias.data_mut().chunks_mut(c))
        .enumerate()
        .map(|(i, (de, db))| (i * c, de, db))
        .collect();

    let partials = round_robin(blocks, cfg.num_threads, |_, blocks| {
        let mut dh = if private_dh {
            Some(DenseTensor::zeros_tracked(
                &[b_len * s_len * d_len],
                mem,
                AllocKind::Scratch,
            )?)
        } else {
            None
        };
        for (v0, de, db) in blocks {
            for (lv, (de_row, db_v)) in de.chunks_mut(d_len).zip(db.iter_mut()).enumerate() {
                let v = v0 + lv;
                for b in 0..b_len {
                    let at = b * v_len + v;
                    let Some(g) = gate(y[at], dy[at]) else {
                        continue;
                    };
                    let s = idx[at] as usize;
                    probe.on_hidden_row(b, s);
                    axpy(de_row, g, inputs.hidden_row(b, s));
                    if bias_grad {
                        *db_v += g;
                    }
                    if let Some(dh) = dh.as_mut() {
                        let off = (b * s_len + s) * d_len;
                        axpy(&mut dh.data_mut()[off..off + d_len], g, inputs.embed_row(v));
                    }
                }
            }
        }
        Ok(dh)
    })?;

    if private_dh {
        let mut partials: Vec<DenseTensor> = partials.into_iter().flatten().collect();
        while partials.len() > 1 {
            let mut next = Vec::with_capacity(partials.len().div_ceil(2));
            let mut it = partials.into_iter();
            while let Some(mut left) = it.next() {
                if let Some(right) = it.next() {
                    for (a, b) in left.data_mut().iter_mut().zip(right.data()) {
                        *a += b;
                    }
                }
                next.push(left);
            }
            partials = next;
        }
        if let Some(total) = partials.pop() {
            grads.hidden.data_mut().copy_from_slice(total.data());
        }
    } else {
        let rows: Vec<(usize, &mut [f32])> = grads
            .hidden
            .data_mut()
            .chunks_mut(s_len * d_len)
            .enumerate()
            .collect();
        round_robin(rows, cfg.num_threads, |_, rows| {
            for (b, dh_b) in rows {
                for v in 0..v_len {
                    let at = b * v_len + v;
                    let Some(g) = gate(y[at], dy[at]) else {
                        continue;
                    };
                    let off = idx[at] as usize * d_len;
                    axpy(&mut dh_b[off..off + d_len], g, inputs.embed_row(v));
                }
            }
            Ok(())
        })?;
    }
    Ok(grads)
}
