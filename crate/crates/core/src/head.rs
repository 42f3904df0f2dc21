//! Inputs, outputs and gradients shared by every head implementation.

use crate::error::{HeadError, Result};
use crate::tensor::{
    check_finite, seeded_tensor, AttentionMask, DenseTensor, Dims, IndexTensor, Init,
};

/// `log(1 + max(x, 0))`, the saturating activation applied after pooling.
#[inline]
pub fn log1p_relu(x: f32) -> f32 {
    if x > 0.0 {
        x.ln_1p()
    } else {
        0.0
    }
}

/// Running masked max over the sequence axis with the smallest-index
/// tie-break: position 0 seeds the running value, later positions replace it
/// only when strictly larger. Masked positions contribute `0.0`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct RunningMax {
    pub value: f32,
    pub index: u32,
}

impl RunningMax {
    #[inline]
    pub fn first(value: f32) -> Self {
        Self { value, index: 0 }
    }

    #[inline]
    pub fn push(&mut self, s: usize, value: f32) {
        if value > self.value {
            self.value = value;
            self.index = s as u32;
        }
    }
}

/// Full operator input: hidden states `H (B x S x D)`, vocabulary embeddings
/// `E (V x D)`, bias `b (V)` and attention mask `M (B x S)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadInputs {
    dims: Dims,
    hidden: DenseTensor,
    embed: DenseTensor,
    bias: DenseTensor,
    mask: AttentionMask,
}

impl HeadInputs {
    pub fn new(
        dims: Dims,
        hidden: DenseTensor,
        embed: DenseTensor,
        bias: DenseTensor,
        mask: AttentionMask,
    ) -> Result<Self> {
        let (b, s, d, v) = (dims.batch(), dims.seq(), dims.hidden(), dims.vocab());
        hidden.expect_shape("hidden states", &[b, s, d])?;
        embed.expect_shape("embedding matrix", &[v, d])?;
        bias.expect_shape("bias", &[v])?;
        if mask.batch() != b || mask.seq() != s {
            return Err(HeadError::ShapeMismatch {
                what: "attention mask",
                expected: vec![b, s],
                actual: vec![mask.batch(), mask.seq()],
            });
        }
        check_finite("hidden states", hidden.data())?;
        check_finite("embedding matrix", embed.data())?;
        check_finite("bias", bias.data())?;
        Ok(Self {
            dims,
            hidden,
            embed,
            bias,
            mask,
        })
    }

    /// Uniform(-1, 1) instance: `H` from `seed`, `E` from `seed + 1`, `b`
    /// from `seed + 2`.
    pub fn seeded(dims: Dims, seed: u64, mask: AttentionMask) -> Result<Self> {
        let init = Init::uniform(-1.0, 1.0);
        let (b, s, d, v) = (dims.batch(), dims.seq(), dims.hidden(), dims.vocab());
        Self::new(
            dims,
            seeded_tensor(&[b, s, d], seed, init)?,
            seeded_tensor(&[v, d], seed.wrapping_add(1), init)?,
            seeded_tensor(&[v], seed.wrapping_add(2), init)?,
            mask,
        )
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn hidden(&self) -> &DenseTensor {
        &self.hidden
    }

    pub fn embed(&self) -> &DenseTensor {
        &self.embed
    }

    pub fn bias(&self) -> &DenseTensor {
        &self.bias
    }

    pub fn mask(&self) -> &AttentionMask {
        &self.mask
    }

    /// `H[b, s, :]`.
    #[inline]
    pub fn hidden_row(&self, b: usize, s: usize) -> &[f32] {
        let d = self.dims.hidden();
        let off = (b * self.dims.seq() + s) * d;
        &self.hidden.data()[off..off + d]
    }

    /// `E[v, :]`.
    #[inline]
    pub fn embed_row(&self, v: usize) -> &[f32] {
        let d = self.dims.hidden();
        &self.embed.data()[v * d..(v + 1) * d]
    }

    /// Replace `H[b, s, :]`. Values must be finite.
    pub fn set_hidden_row(&mut self, b: usize, s: usize, row: &[f32]) -> Result<()> {
        let d = self.dims.hidden();
        if row.len() != d {
            return Err(HeadError::ShapeMismatch {
                what: "hidden row",
                expected: vec![d],
                actual: vec![row.len()],
            });
        }
        check_finite("hidden row", row)?;
        let off = (b * self.dims.seq() + s) * d;
        self.hidden.data_mut()[off..off + d].copy_from_slice(row);
        Ok(())
    }
}

/// Pooled scores `Y (B x V)`, each `>= 0`, and argmax sequence indices
/// `I (B x V)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutput {
    pub scores: DenseTensor,
    pub indices: IndexTensor,
}

impl HeadOutput {
    pub(crate) fn check_against(&self, dims: Dims) -> Result<()> {
        let shape = [dims.batch(), dims.vocab()];
        self.scores.expect_shape("pooled scores", &shape)?;
        if self.indices.shape() != shape {
            return Err(HeadError::ShapeMismatch {
                what: "argmax indices",
                expected: shape.to_vec(),
                actual: self.indices.shape().to_vec(),
            });
        }
        if let Some(pos) = self
            .indices
            .data()
            .iter()
            .position(|&i| i as usize >= dims.seq())
        {
            return Err(HeadError::InvalidArgument(format!(
                "argmax index {} at flat position {pos} is out of range for S={}",
                self.indices.data()[pos],
                dims.seq()
            )));
        }
        Ok(())
    }

    /// Bitwise equality of scores and indices.
    pub fn bit_eq(&self, other: &HeadOutput) -> bool {
        self.scores.bit_eq(&other.scores) && self.indices == other.indices
    }

    /// Bytes held by the two tensors.
    pub fn byte_len(&self) -> usize {
        self.scores.len() * std::mem::size_of::<f32>()
            + self.indices.len() * std::mem::size_of::<u32>()
    }
}

/// Gradients with respect to `H`, `E` and `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGradients {
    pub hidden: DenseTensor,
    pub embed: DenseTensor,
    pub bias: DenseTensor,
}

impl HeadGradients {
    pub(crate) fn zeros(dims: Dims) -> Result<Self> {
        let (b, s, d, v) = (dims.batch(), dims.seq(), dims.hidden(), dims.vocab());
        Ok(Self {
            hidden: DenseTensor::zeros(&[b, s, d])?,
            embed: DenseTensor::zeros(&[v, d])?,
            bias: DenseTensor::zeros(&[v])?,
        })
    }

    /// Largest absolute difference over all three tensors.
    pub fn max_abs_diff(&self, other: &HeadGradients) -> Option<f32> {
        Some(
            self.hidden
                .max_abs_diff(&other.hidden)?
                .max(self.embed.max_abs_diff(&other.embed)?)
                .max(self.bias.max_abs_diff(&other.bias)?),
        )
    }

    pub fn bit_eq(&self, other: &HeadGradients) -> bool {
        self.hidden.bit_eq(&other.hidden)
            && self.embed.bit_eq(&other.embed)
            && self.bias.bit_eq(&other.bias)
    }
}

pub(crate) fn check_upstream(dy: &DenseTensor, dims: Dims) -> Result<()> {
    dy.expect_shape("upstream gradient", &[dims.batch(), dims.vocab()])?;
    check_finite("upstream gradient", dy.data())
}
