//! Blocked `A * B^T (+ bias)` for row-major `f32` matrices.
//!
//! Both operands are stored with `K` contiguous, so every output element is a
//! dot product of two contiguous rows. The loop nest walks `M`-blocks, then
//! `N`-blocks, keeping one block of `B` rows hot while sweeping the matching
//! block of `A` rows. `K` is never split: each output element is produced by
//! a single call to [`dot`], which fixes the summation order. The tiled and
//! streaming heads call the same [`dot`], so all of them produce bit-identical
//! logits.

use crate::error::{HeadError, Result};
use crate::tensor::{check_finite, DenseTensor};

/// Default `M`/`N` block edge.
pub const DEFAULT_BLOCK: usize = 32;

/// Accumulator precision for [`matmul_bt_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Accumulation {
    #[default]
    F32,
    /// f64 accumulators, rounded once on store.
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GemmOptions {
    pub m_block: usize,
    pub n_block: usize,
    pub accumulation: Accumulation,
}

impl Default for GemmOptions {
    fn default() -> Self {
        Self {
            m_block: DEFAULT_BLOCK,
            n_block: DEFAULT_BLOCK,
            accumulation: Accumulation::F32,
        }
    }
}

/// Four-lane `f32` dot product with a fixed reduction order.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f32; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut sum = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        sum += a[i] * b[i];
    }
    sum
}

#[inline]
fn dot_f64(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// Slice-level kernel. `a` is `m x k`, `b` is `n x k`, `out` is `m x n`.
/// Shapes are the caller's responsibility.
pub(crate) fn gemm_bt(
    a: &[f32],
    b: &[f32],
    bias: Option<&[f32]>,
    out: &mut [f32],
    (m, n, k): (usize, usize, usize),
    opts: GemmOptions,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    let mb = opts.m_block.max(1);
    let nb = opts.n_block.max(1);
    for m0 in (0..m).step_by(mb) {
        let m1 = (m0 + mb).min(m);
        for n0 in (0..n).step_by(nb) {
            let n1 = (n0 + nb).min(n);
            for i in m0..m1 {
                let a_row = &a[i * k..(i + 1) * k];
                let out_row = &mut out[i * n..(i + 1) * n];
                for j in n0..n1 {
                    let b_row = &b[j * k..(j + 1) * k];
                    out_row[j] = match opts.accumulation {
                        Accumulation::F32 => {
                            let s = dot(a_row, b_row);
                            bias.map_or(s, |bias| s + bias[j])
                        }
                        Accumulation::F64 => {
                            let s = dot_f64(a_row, b_row);
                            bias.map_or(s, |bias| s + bias[j] as f64) as f32
                        }
                    };
                }
            }
        }
    }
}

/// `out[m, n] = sum_k a[m, k] * bmat[n, k] + bias[n]` with default blocking.
pub fn matmul_bt(
    a: &DenseTensor,
    bmat: &DenseTensor,
    bias: Option<&DenseTensor>,
    out: &mut DenseTensor,
) -> Result<()> {
    matmul_bt_with(a, bmat, bias, out, GemmOptions::default())
}

pub fn matmul_bt_with(
    a: &DenseTensor,
    bmat: &DenseTensor,
    bias: Option<&DenseTensor>,
    out: &mut DenseTensor,
    opts: GemmOptions,
) -> Result<()> {
    let [m, k] = *a.shape() else {
        return Err(HeadError::InvalidArgument(format!(
            "matmul_bt lhs must be 2-D, got {:?}",
            a.shape()
        )));
    };
    let [n, kb] = *bmat.shape() else {
        return Err(HeadError::InvalidArgument(format!(
            "matmul_bt rhs must be 2-D, got {:?}",
            bmat.shape()
        )));
    };
    if k != kb {
        return Err(HeadError::ShapeMismatch {
            what: "matmul_bt inner dimension",
            expected: vec![n, k],
            actual: bmat.shape().to_vec(),
        });
    }
    if let Some(bias) = bias {
        bias.expect_shape("matmul_bt bias", &[n])?;
    }
    out.expect_shape("matmul_bt output", &[m, n])?;
    check_finite("matmul_bt lhs", a.data())?;
    check_finite("matmul_bt rhs", bmat.data())?;
    if let Some(bias) = bias {
        check_finite("matmul_bt bias", bias.data())?;
    }
    gemm_bt(
        a.data(),
        bmat.data(),
        bias.map(DenseTensor::data),
        out.data_mut(),
        (m, n, k),
        opts,
    );
    check_finite("matmul_bt output", out.data())
}
