//! Eager LM head: materializes the full `B x S x V` logit tensor, then
//! reduces it. This is the correctness ground truth for the fused head and
//! the memory baseline it is measured against.

use crate::error::{HeadError, Result};
use crate::gemm::{gemm_bt, GemmOptions};
use crate::head::{check_upstream, log1p_relu, HeadGradients, HeadInputs, HeadOutput, RunningMax};
use crate::memory::{AllocKind, MemTracker};
use crate::tensor::{check_finite, DenseTensor, Dims, IndexTensor};

/// Default central-difference step.
pub const DEFAULT_FD_STEP: f64 = 1e-3;

/// Masked raw logits `L = (H E^T + b) * M`, retained for the eager backward.
#[derive(Debug, Clone, PartialEq)]
pub struct SavedDenseState {
    pub logits: DenseTensor,
}

fn alloc_logits(dims: Dims, mem: &MemTracker, kind: AllocKind) -> Result<DenseTensor> {
    dims.logit_elems()?;
    DenseTensor::zeros_tracked(&[dims.batch(), dims.seq(), dims.vocab()], mem, kind)
}

fn alloc_output(dims: Dims, mem: &MemTracker) -> Result<HeadOutput> {
    let shape = [dims.batch(), dims.vocab()];
    Ok(HeadOutput {
        scores: DenseTensor::zeros_tracked(&shape, mem, AllocKind::Output)?,
        indices: IndexTensor::zeros_tracked(&shape, mem, AllocKind::Output)?,
    })
}

fn plain_gemm(inputs: &HeadInputs, out: &mut [f32], bias: Option<&[f32]>) -> Result<()> {
    let dims = inputs.dims();
    gemm_bt(
        inputs.hidden().data(),
        inputs.embed().data(),
        bias,
        out,
        (dims.batch() * dims.seq(), dims.vocab(), dims.hidden()),
        GemmOptions::default(),
    );
    check_finite("logits", out)
}

/// Max/argmax over the sequence axis of an already masked `B x S x V`
/// tensor, followed by the activation.
fn reduce_over_seq(dims: Dims, logits: &[f32], out: &mut HeadOutput) {
    let (s_len, v_len) = (dims.seq(), dims.vocab());
    let y = out.scores.data_mut();
    let idx = out.indices.data_mut();
    for b in 0..dims.batch() {
        let base = b * s_len * v_len;
        for v in 0..v_len {
            let mut run = RunningMax::first(logits[base + v]);
            for s in 1..s_len {
                run.push(s, logits[base + s * v_len + v]);
            }
            y[b * v_len + v] = log1p_relu(run.value);
            idx[b * v_len + v] = run.index;
        }
    }
}

pub fn forward_eager(inputs: &HeadInputs) -> Result<(HeadOutput, SavedDenseState)> {
    forward_eager_with(inputs, &MemTracker::new())
}

/// Eager forward with separate passes: GEMM, bias add, mask, then
/// max-pool plus activation.
pub fn forward_eager_with(
    inputs: &HeadInputs,
    mem: &MemTracker,
) -> Result<(HeadOutput, SavedDenseState)> {
    let dims = inputs.dims();
    let (s_len, v_len) = (dims.seq(), dims.vocab());
    let mut logits = alloc_logits(dims, mem, AllocKind::Retained)?;

    plain_gemm(inputs, logits.data_mut(), None)?;

    let bias = inputs.bias().data();
    for row in logits.data_mut().chunks_exact_mut(v_len) {
        for (l, &b) in row.iter_mut().zip(bias) {
            *l += b;
        }
    }
    check_finite("logits", logits.data())?;

    let mask = inputs.mask().data();
    for (row, &m) in logits.data_mut().chunks_exact_mut(v_len).zip(mask) {
        if m == 0 {
            row.fill(0.0);
        }
    }

    let mut out = alloc_output(dims, mem)?;
    reduce_over_seq(dims, logits.data(), &mut out);
    debug_assert_eq!(logits.len(), dims.batch() * s_len * v_len);
    Ok((out, SavedDenseState { logits }))
}

/// Two-pass forward: the GEMM writes the unbiased logits, then a single
/// pass applies bias, mask, max-pool and activation. The unbiased logits
/// stay alive as the state a backward pass would keep.
pub fn forward_compiled_sim_with(
    inputs: &HeadInputs,
    mem: &MemTracker,
) -> Result<(HeadOutput, DenseTensor)> {
    let dims = inputs.dims();
    let (s_len, v_len) = (dims.seq(), dims.vocab());
    let mut logits = alloc_logits(dims, mem, AllocKind::Retained)?;
    plain_gemm(inputs, logits.data_mut(), None)?;

    let mut out = alloc_output(dims, mem)?;
    let bias = inputs.bias().data();
    let l = logits.data();
    let y = out.scores.data_mut();
    let idx = out.indices.data_mut();
    for b in 0..dims.batch() {
        let mask = inputs.mask().row(b);
        let base = b * s_len * v_len;
        for v in 0..v_len {
            let at = |s: usize| {
                if mask[s] == 0 {
                    0.0
                } else {
                    l[base + s * v_len + v] + bias[v]
                }
            };
            let mut run = RunningMax::first(at(0));
            for s in 1..s_len {
                run.push(s, at(s));
            }
            y[b * v_len + v] = log1p_relu(run.value);
            idx[b * v_len + v] = run.index;
        }
    }
    Ok((out, logits))
}

/// Pooling with the mask applied after the activation:
/// `max_s [ log1p(relu(H E^T + b)) * M ]`.
pub fn forward_postmask(inputs: &HeadInputs) -> Result<DenseTensor> {
    let dims = inputs.dims();
    let (b_len, s_len, v_len) = (dims.batch(), dims.seq(), dims.vocab());
    let mut logits = DenseTensor::zeros(&[b_len, s_len, v_len])?;
    plain_gemm(inputs, logits.data_mut(), Some(inputs.bias().data()))?;
    let mut y = DenseTensor::zeros(&[b_len, v_len])?;
    let l = logits.data();
    for b in 0..b_len {
        let mask = inputs.mask().row(b);
        for v in 0..v_len {
            let mut best = f32::NEG_INFINITY;
            for s in 0..s_len {
                let act = log1p_relu(l[(b * s_len + s) * v_len + v]) * f32::from(mask[s]);
                best = best.max(act);
            }
            y.data_mut()[b * v_len + v] = best;
        }
    }
    Ok(y)
}

pub fn backward_eager(
    inputs: &HeadInputs,
    saved: &SavedDenseState,
    out: &HeadOutput,
    dy: &DenseTensor,
) -> Result<HeadGradients> {
    backward_eager_with(inputs, saved, out, dy, true)
}

/// Dense-route backward: builds the full `dL (B x S x V)` with one nonzero
/// per active `(b, v)` at the argmax position, then `dH = dL E`,
/// `dE = dL^T H` and `db = sum dL` by ordinary matrix products.
pub fn backward_eager_with(
    inputs: &HeadInputs,
    saved: &SavedDenseState,
    out: &HeadOutput,
    dy: &DenseTensor,
    bias_grad: bool,
) -> Result<HeadGradients> {
    let dims = inputs.dims();
    let (b_len, s_len, d_len, v_len) = (dims.batch(), dims.seq(), dims.hidden(), dims.vocab());
    saved
        .logits
        .expect_shape("saved logits", &[b_len, s_len, v_len])?;
    out.check_against(dims)?;
    check_upstream(dy, dims)?;

    let rows = b_len * s_len;
    let mut dl = vec![0.0f32; rows * v_len];
    let l = saved.logits.data();
    for b in 0..b_len {
        for v in 0..v_len {
            let s = out.indices.data()[b * v_len + v] as usize;
            let at = (b * s_len + s) * v_len + v;
            let raw = l[at];
            if raw > 0.0 {
                dl[at] = dy.data()[b * v_len + v] / (1.0 + raw);
            }
        }
    }

    let mut grads = HeadGradients::zeros(dims)?;
    let opts = GemmOptions::default();

    // dH (rows x D) = dL (rows x V) * E (V x D) = dL * (E^T)^T
    let e_t = transpose(inputs.embed().data(), v_len, d_len);
    gemm_bt(
        &dl,
        &e_t,
        None,
        grads.hidden.data_mut(),
        (rows, d_len, v_len),
        opts,
    );

    // dE (V x D) = dL^T (V x rows) * H (rows x D) = dL^T * (H^T)^T
    let dl_t = transpose(&dl, rows, v_len);
    let h_t = transpose(inputs.hidden().data(), rows, d_len);
    gemm_bt(
        &dl_t,
        &h_t,
        None,
        grads.embed.data_mut(),
        (v_len, d_len, rows),
        opts,
    );

    if bias_grad {
        let db = grads.bias.data_mut();
        for row in dl.chunks_exact(v_len) {
            for (acc, &g) in db.iter_mut().zip(row) {
                *acc += g;
            }
        }
    }
    Ok(grads)
}

fn transpose(src: &[f32], rows: usize, cols: usize) -> Vec<f32> {
    let mut dst = vec![0.0f32; src.len()];
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
    dst
}

/// One scalar parameter of the head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamCoord {
    Hidden { b: usize, s: usize, d: usize },
    Embed { v: usize, d: usize },
    Bias { v: usize },
}

/// Central-difference gradients plus the coordinates that could not be
/// differenced because a perturbation moved an argmax or crossed the ReLU
/// kink.
#[derive(Debug, Clone)]
pub struct FiniteDiffGrads {
    pub grads: HeadGradients,
    pub skipped: Vec<ParamCoord>,
    skip_hidden: Vec<bool>,
    skip_embed: Vec<bool>,
    skip_bias: Vec<bool>,
}

/// Worst deviations of an analytic gradient from the finite-difference one.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GradDeviation {
    pub hidden: f64,
    pub embed: f64,
    pub bias: f64,
    pub compared: usize,
    pub skipped: usize,
}

impl GradDeviation {
    pub fn max(&self) -> f64 {
        self.hidden.max(self.embed).max(self.bias)
    }
}

impl FiniteDiffGrads {
    pub fn is_skipped(&self, coord: ParamCoord) -> bool {
        match coord {
            ParamCoord::Hidden { b, s, d } => {
                let dims = self.grads.hidden.shape();
                self.skip_hidden[(b * dims[1] + s) * dims[2] + d]
            }
            ParamCoord::Embed { v, d } => self.skip_embed[v * self.grads.embed.shape()[1] + d],
            ParamCoord::Bias { v } => self.skip_bias[v],
        }
    }

    /// Max absolute deviation of `analytic` over non-skipped coordinates.
    pub fn deviation(&self, analytic: &HeadGradients) -> Option<GradDeviation> {
        fn worst(fd: &DenseTensor, an: &DenseTensor, skip: &[bool]) -> Option<(f64, usize)> {
            (fd.shape() == an.shape()).then(|| {
                fd.data()
                    .iter()
                    .zip(an.data())
                    .zip(skip)
                    .filter(|(_, &s)| !s)
                    .fold((0.0f64, 0usize), |(m, n), ((&a, &b), _)| {
                        (m.max((a as f64 - b as f64).abs()), n + 1)
                    })
            })
        }
        let (hidden, nh) = worst(&self.grads.hidden, &analytic.hidden, &self.skip_hidden)?;
        let (embed, ne) = worst(&self.grads.embed, &analytic.embed, &self.skip_embed)?;
        let (bias, nb) = worst(&self.grads.bias, &analytic.bias, &self.skip_bias)?;
        Some(GradDeviation {
            hidden,
            embed,
            bias,
            compared: nh + ne + nb,
            skipped: self.skipped.len(),
        })
    }
}

struct Params64 {
    dims: Dims,
    hidden: Vec<f64>,
    embed: Vec<f64>,
    bias: Vec<f64>,
    mask: Vec<u8>,
}

struct Eval64 {
    loss: f64,
    indices: Vec<u32>,
    active: Vec<bool>,
}

impl Params64 {
    fn eval(&self, dy: &[f32]) -> Eval64 {
        let (b_len, s_len, d_len, v_len) = (
            self.dims.batch(),
            self.dims.seq(),
            self.dims.hidden(),
            self.dims.vocab(),
        );
        let mut loss = 0.0;
        let mut indices = vec![0u32; b_len * v_len];
        let mut active = vec![false; b_len * v_len];
        for b in 0..b_len {
            for v in 0..v_len {
                let e = &self.embed[v * d_len..(v + 1) * d_len];
                let mut best = (f64::NEG_INFINITY, 0u32);
                for s in 0..s_len {
                    let l = if self.mask[b * s_len + s] == 0 {
                        0.0
                    } else {
                        let h = &self.hidden[(b * s_len + s) * d_len..(b * s_len + s + 1) * d_len];
                        h.iter().zip(e).map(|(x, y)| x * y).sum::<f64>() + self.bias[v]
                    };
                    if l > best.0 {
                        best = (l, s as u32);
                    }
                }
                let at = b * v_len + v;
                indices[at] = best.1;
                active[at] = best.0 > 0.0;
                loss += best.0.max(0.0).ln_1p() * dy[at] as f64;
            }
        }
        Eval64 {
            loss,
            indices,
            active,
        }
    }
}

/// Central differences of `<Y(theta), dY>` in f64, one coordinate at a time.
pub fn finite_difference_grads(
    inputs: &HeadInputs,
    dy: &DenseTensor,
    step: f64,
) -> Result<FiniteDiffGrads> {
    let dims = inputs.dims();
    check_upstream(dy, dims)?;
    if !(step > 0.0 && step.is_finite()) {
        return Err(HeadError::InvalidArgument(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    let widen = |t: &DenseTensor| t.data().iter().map(|&x| x as f64).collect::<Vec<_>>();
    let mut params = Params64 {
        dims,
        hidden: widen(inputs.hidden()),
        embed: widen(inputs.embed()),
        bias: widen(inputs.bias()),
        mask: inputs.mask().data().to_vec(),
    };
    let dy = dy.data();
    let base = params.eval(dy);

    // Returns (derivative, routing changed).
    fn probe(
        params: &mut Params64,
        select: fn(&mut Params64) -> &mut Vec<f64>,
        i: usize,
        step: f64,
        dy: &[f32],
        base: &Eval64,
    ) -> (f64, bool) {
        let orig = select(params)[i];
        select(params)[i] = orig + step;
        let plus = params.eval(dy);
        select(params)[i] = orig - step;
        let minus = params.eval(dy);
        select(params)[i] = orig;
        let moved = |e: &Eval64| {
            e.active
                .iter()
                .zip(&base.active)
                .zip(e.indices.iter().zip(&base.indices))
                .any(|((&a, &a0), (&i, &i0))| a != a0 || (a0 && i != i0))
        };
        (
            (plus.loss - minus.loss) / (2.0 * step),
            moved(&plus) || moved(&minus),
        )
    }

    let mut grads = HeadGradients::zeros(dims)?;
    let mut skipped = Vec::new();
    let (s_len, d_len) = (dims.seq(), dims.hidden());

    let mut skip_hidden = vec![false; params.hidden.len()];
    for (i, skip) in skip_hidden.iter_mut().enumerate() {
        let (g, moved) = probe(&mut params, |p| &mut p.hidden, i, step, dy, &base);
        grads.hidden.data_mut()[i] = g as f32;
        if moved {
            *skip = true;
            skipped.push(ParamCoord::Hidden {
                b: i / (s_len * d_len),
                s: (i / d_len) % s_len,
                d: i % d_len,
            });
        }
    }
    let mut skip_embed = vec![false; params.embed.len()];
    for (i, skip) in skip_embed.iter_mut().enumerate() {
        let (g, moved) = probe(&mut params, |p| &mut p.embed, i, step, dy, &base);
        grads.embed.data_mut()[i] = g as f32;
        if moved {
            *skip = true;
            skipped.push(ParamCoord::Embed {
                v: i / d_len,
                d: i % d_len,
            });
        }
    }
    let mut skip_bias = vec![false; params.bias.len()];
    for (i, skip) in skip_bias.iter_mut().enumerate() {
        let (g, moved) = probe(&mut params, |p| &mut p.bias, i, step, dy, &base);
        grads.bias.data_mut()[i] = g as f32;
        if moved {
            *skip = true;
            skipped.push(ParamCoord::Bias { v: i });
        }
    }
    Ok(FiniteDiffGrads {
        grads,
        skipped,
        skip_hidden,
        skip_embed,
        skip_bias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{seeded_tensor, AttentionMask, Init};

    fn scalar_inputs(x: f32, w: f32) -> HeadInputs {
        let dims = Dims::new(1, 1, 1, 1).unwrap();
        HeadInputs::new(
            dims,
            DenseTensor::new(vec![1, 1, 1], vec![x]).unwrap(),
            DenseTensor::new(vec![1, 1], vec![w]).unwrap(),
            DenseTensor::new(vec![1], vec![0.0]).unwrap(),
            AttentionMask::ones(1, 1),
        )
        .unwrap()
    }

    #[test]
    fn zero_hidden_and_bias_give_zero_output() {
        let dims = Dims::new(2, 3, 4, 5).unwrap();
        let inputs = HeadInputs::new(
            dims,
            DenseTensor::zeros(&[2, 3, 4]).unwrap(),
            seeded_tensor(&[5, 4], 3, Init::uniform(-1.0, 1.0)).unwrap(),
            DenseTensor::zeros(&[5]).unwrap(),
            AttentionMask::seeded(2, 3, 4, 0.5),
        )
        .unwrap();
        let (out, _) = forward_eager(&inputs).unwrap();
        assert!(out.scores.data().iter().all(|&y| y == 0.0));
        assert!(out.indices.data().iter().all(|&i| i == 0));
    }

    #[test]
    fn two_position_max() {
        let dims = Dims::new(1, 2, 1, 1).unwrap();
        let inputs = HeadInputs::new(
            dims,
            DenseTensor::new(vec![1, 2, 1], vec![1.0, 3.0]).unwrap(),
            DenseTensor::new(vec![1, 1], vec![1.0]).unwrap(),
            DenseTensor::new(vec![1], vec![0.0]).unwrap(),
            AttentionMask::ones(1, 2),
        )
        .unwrap();
        let (out, saved) = forward_eager(&inputs).unwrap();
        assert_eq!(out.scores.data(), &[4.0f32.ln()]);
        assert_eq!(out.indices.data(), &[1]);
        assert_eq!(saved.logits.data(), &[1.0, 3.0]);
    }

    #[test]
    fn saved_logits_zero_at_masked_rows() {
        let dims = Dims::new(2, 3, 4, 5).unwrap();
        let mask = AttentionMask::new(2, 3, vec![1, 1, 0, 0, 1, 1]).unwrap();
        let inputs = HeadInputs::seeded(dims, 42, mask).unwrap();
        let (_, saved) = forward_eager(&inputs).unwrap();
        let l = saved.logits.data();
        assert!(l[2 * 5..3 * 5].iter().all(|&x| x == 0.0));
        assert!(l[3 * 5..4 * 5].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn postmask_equals_eager_with_all_ones_mask() {
        let dims = Dims::new(2, 3, 4, 5).unwrap();
        let inputs = HeadInputs::seeded(dims, 11, AttentionMask::ones(2, 3)).unwrap();
        let (out, _) = forward_eager(&inputs).unwrap();
        let post = forward_postmask(&inputs).unwrap();
        assert!(post.bit_eq(&out.scores));
    }

    #[test]
    fn negative_logits_with_masked_position_give_zero() {
        let dims = Dims::new(1, 3, 1, 2).unwrap();
        let inputs = HeadInputs::new(
            dims,
            DenseTensor::new(vec![1, 3, 1], vec![1.0, 2.0, 3.0]).unwrap(),
            DenseTensor::new(vec![2, 1], vec![-1.0, -0.5]).unwrap(),
            DenseTensor::new(vec![2], vec![0.0, -0.1]).unwrap(),
            AttentionMask::new(1, 3, vec![1, 0, 1]).unwrap(),
        )
        .unwrap();
        let (out, _) = forward_eager(&inputs).unwrap();
        assert_eq!(out.scores.data(), &[0.0, 0.0]);
        assert_eq!(forward_postmask(&inputs).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_scalar_closed_form() {
        let (x, w) = (0.7f32, 1.3f32);
        let inputs = scalar_inputs(x, w);
        let (out, saved) = forward_eager(&inputs).unwrap();
        let dy = DenseTensor::new(vec![1, 1], vec![1.0]).unwrap();
        let g = backward_eager(&inputs, &saved, &out, &dy).unwrap();
        let denom = 1.0 + x * w;
        assert!((g.hidden.data()[0] - w / denom).abs() < 1e-6);
        assert!((g.embed.data()[0] - x / denom).abs() < 1e-6);
        assert!((g.bias.data()[0] - 1.0 / denom).abs() < 1e-6);

        let fd = finite_difference_grads(&inputs, &dy, DEFAULT_FD_STEP).unwrap();
        assert!(fd.skipped.is_empty());
        let xw = (x * w) as f64;
        let d = 1.0 + xw;
        assert!((fd.grads.hidden.data()[0] as f64 - w as f64 / d).abs() < 1e-6);
        assert!((fd.grads.embed.data()[0] as f64 - x as f64 / d).abs() < 1e-6);
        assert!((fd.grads.bias.data()[0] as f64 - 1.0 / d).abs() < 1e-6);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let dims = Dims::new(2, 3, 4, 5).unwrap();
        let inputs = HeadInputs::seeded(dims, 42, AttentionMask::ones(2, 3)).unwrap();
        let (out, saved) = forward_eager(&inputs).unwrap();
        let dy = DenseTensor::zeros(&[2, 5]).unwrap();
        let g = backward_eager(&inputs, &saved, &out, &dy).unwrap();
        let zero = HeadGradients::zeros(dims).unwrap();
        assert_eq!(g, zero);
    }

    #[test]
    fn bias_gradient_can_be_disabled() {
        let inputs = scalar_inputs(1.0, 1.0);
        let (out, saved) = forward_eager(&inputs).unwrap();
        let dy = DenseTensor::new(vec![1, 1], vec![1.0]).unwrap();
        let g = backward_eager_with(&inputs, &saved, &out, &dy, false).unwrap();
        assert_eq!(g.bias.data(), &[0.0]);
        assert_eq!(g.hidden.data(), &[0.5]);
    }

    #[test]
    fn constant_zero_inputs_have_zero_fd_gradients() {
        let dims = Dims::new(1, 2, 2, 2).unwrap();
        let inputs = HeadInputs::new(
            dims,
            DenseTensor::zeros(&[1, 2, 2]).unwrap(),
            DenseTensor::zeros(&[2, 2]).unwrap(),
            DenseTensor::zeros(&[2]).unwrap(),
            AttentionMask::ones(1, 2),
        )
        .unwrap();
        let dy = DenseTensor::zeros(&[1, 2]).unwrap();
        let fd = finite_difference_grads(&inputs, &dy, 1e-3).unwrap();
        assert_eq!(fd.grads, HeadGradients::zeros(dims).unwrap());
    }

    #[test]
    fn backward_rejects_mismatched_shapes() {
        let dims = Dims::new(1, 2, 2, 3).unwrap();
        let inputs = HeadInputs::seeded(dims, 1, AttentionMask::ones(1, 2)).unwrap();
        let (out, saved) = forward_eager(&inputs).unwrap();
        let dy = DenseTensor::zeros(&[1, 2]).unwrap();
        assert!(matches!(
            backward_eager(&inputs, &saved, &out, &dy),
            Err(HeadError::ShapeMismatch { .. })
        ));
        assert!(
            finite_difference_grads(&inputs, &DenseTensor::zeros(&[1, 3]).unwrap(), 0.0).is_err()
        );
    }

    #[test]
    fn eager_memory_accounting() {
        let dims = Dims::new(2, 3, 4, 5).unwrap();
        let inputs = HeadInputs::seeded(dims, 1, AttentionMask::ones(2, 3)).unwrap();
        let mem = MemTracker::new();
        let (out, saved) = forward_eager_with(&inputs, &mem).unwrap();
        assert_eq!(mem.peak_bytes(), 2 * 3 * 5 * 4);
        assert_eq!(mem.saved_bytes(), 2 * 3 * 5 * 4);
        drop(saved);
        assert_eq!(mem.saved_bytes(), 0);
        assert_eq!(mem.live_bytes(), out.byte_len());
    }

    #[test]
    fn compiled_sim_matches_eager_bitwise() {
        let dims = Dims::new(3, 7, 5, 11).unwrap();
        let inputs = HeadInputs::seeded(dims, 5, AttentionMask::seeded(3, 7, 6, 0.6)).unwrap();
        let (eager, _) = forward_eager(&inputs).unwrap();
        let (compiled, _) = forward_compiled_sim_with(&inputs, &MemTracker::new()).unwrap();
        assert!(eager.bit_eq(&compiled));
    }

    #[test]
    fn eager_refuses_over_cap() {
        let dims = Dims::new(2, 3, 4, 5).unwrap();
        let inputs = HeadInputs::seeded(dims, 1, AttentionMask::ones(2, 3)).unwrap();
        let mem = MemTracker::with_cap(100);
        assert!(matches!(
            forward_eager_with(&inputs, &mem),
            Err(HeadError::OutOfMemory { .. })
        ));
        assert_eq!(mem.live_bytes(), 0);
    }
}
