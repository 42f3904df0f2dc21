//! Dense tensor container, attention mask, problem dimensions and seeded
//! initialization.

use std::fmt;
use std::str::FromStr;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{HeadError, Result};
use crate::memory::{AllocKind, Lease, MemTracker};

/// Problem dimensions: batch `B`, sequence length `S`, hidden size `D`,
/// vocabulary size `V`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    batch: usize,
    seq: usize,
    hidden: usize,
    vocab: usize,
}

impl Dims {
    pub fn new(batch: usize, seq: usize, hidden: usize, vocab: usize) -> Result<Self> {
        if batch == 0 || seq == 0 || hidden == 0 || vocab == 0 {
            return Err(HeadError::InvalidDims(format!(
                "all dimensions must be positive, got {batch}x{seq}x{hidden}x{vocab}"
            )));
        }
        let elems = |a: usize, b: usize, c: usize, what| {
            a.checked_mul(b)
                .and_then(|x| x.checked_mul(c))
                .and_then(|x| x.checked_mul(4))
                .ok_or(HeadError::Overflow(what))
        };
        elems(batch, seq, hidden, "B*S*D")?;
        elems(batch, vocab, 1, "B*V")?;
        elems(vocab, hidden, 1, "V*D")?;
        Ok(Self {
            batch,
            seq,
            hidden,
            vocab,
        })
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn seq(&self) -> usize {
        self.seq
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    /// Same dims with a different sequence length.
    pub fn with_seq(&self, seq: usize) -> Result<Self> {
        Self::new(self.batch, seq, self.hidden, self.vocab)
    }

    /// `B*S*V`, the element count of the dense logit tensor.
    pub fn logit_elems(&self) -> Result<usize> {
        self.batch
            .checked_mul(self.seq)
            .and_then(|x| x.checked_mul(self.vocab))
            .ok_or(HeadError::Overflow("B*S*V"))
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}x{}x{}x{}",
            self.batch, self.seq, self.hidden, self.vocab
        )
    }
}

impl FromStr for Dims {
    type Err = HeadError;

    /// Parses `BxSxDxV`, e.g. `2x3x4x5`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(['x', 'X']).collect();
        if parts.len() != 4 {
            return Err(HeadError::InvalidDims(format!(
                "expected BxSxDxV, got {s:?}"
            )));
        }
        let mut v = [0usize; 4];
        for (slot, p) in v.iter_mut().zip(&parts) {
            *slot = p
                .trim()
                .parse()
                .map_err(|_| HeadError::InvalidDims(format!("bad dimension {p:?} in {s:?}")))?;
        }
        Dims::new(v[0], v[1], v[2], v[3])
    }
}

pub(crate) fn checked_numel(shape: &[usize]) -> Result<usize> {
    shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .filter(|n| n.checked_mul(4).is_some())
        .ok_or(HeadError::Overflow("tensor element count"))
}

pub(crate) fn check_finite(what: &'static str, data: &[f32]) -> Result<()> {
    match data.iter().position(|x| !x.is_finite()) {
        Some(index) => Err(HeadError::NonFinite { what, index }),
        None => Ok(()),
    }
}

/// Row-major dense `f32` tensor.
///
/// A tensor produced by a head operator may hold a [`Lease`] on the tracker
/// that accounted for it; clones are untracked.
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f32>,
    lease: Option<Lease>,
}

impl DenseTensor {
    /// Wraps `data`, checking length and finiteness.
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n = checked_numel(&shape)?;
        if shape.is_empty() {
            return Err(HeadError::InvalidArgument("empty shape".into()));
        }
        if n != data.len() {
            return Err(HeadError::ShapeMismatch {
                what: "tensor data",
                expected: vec![n],
                actual: vec![data.len()],
            });
        }
        check_finite("tensor data", &data)?;
        Ok(Self {
            shape,
            data,
            lease: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        if shape.is_empty() {
            return Err(HeadError::InvalidArgument("empty shape".into()));
        }
        let n = checked_numel(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
            lease: None,
        })
    }

    /// Zero tensor whose bytes are accounted to `mem` as `kind`.
    pub fn zeros_tracked(shape: &[usize], mem: &MemTracker, kind: AllocKind) -> Result<Self> {
        let n = checked_numel(shape)?;
        let lease = mem.reserve(n * std::mem::size_of::<f32>(), kind)?;
        let mut t = Self::zeros(shape)?;
        t.lease = Some(lease);
        Ok(t)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        let mut this = self;
        std::mem::take(&mut this.data)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Bytes accounted to a tracker for this tensor, if any.
    pub fn tracked_bytes(&self) -> usize {
        self.lease.as_ref().map_or(0, Lease::bytes)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub(crate) fn expect_shape(&self, what: &'static str, expected: &[usize]) -> Result<()> {
        if self.shape != expected {
            return Err(HeadError::ShapeMismatch {
                what,
                expected: expected.to_vec(),
                actual: self.shape.clone(),
            });
        }
        Ok(())
    }

    /// Largest absolute element-wise difference; `None` on shape mismatch.
    pub fn max_abs_diff(&self, other: &DenseTensor) -> Option<f32> {
        (self.shape == other.shape).then(|| {
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f32::max)
        })
    }

    /// Bitwise equality of shape and every element.
    pub fn bit_eq(&self, other: &DenseTensor) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl Clone for DenseTensor {
    fn clone(&self) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.clone(),
            lease: None,
        }
    }
}

impl PartialEq for DenseTensor {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.data == other.data
    }
}

impl fmt::Debug for DenseTensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DenseTensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

/// Row-major tensor of sequence indices (`u32`).
pub struct IndexTensor {
    shape: Vec<usize>,
    data: Vec<u32>,
    lease: Option<Lease>,
}

impl IndexTensor {
    pub fn zeros(shape: &[usize]) -> Result<Self> {
        let n = checked_numel(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![0; n],
            lease: None,
        })
    }

    pub fn zeros_tracked(shape: &[usize], mem: &MemTracker, kind: AllocKind) -> Result<Self> {
        let n = checked_numel(shape)?;
        let lease = mem.reserve(n * std::mem::size_of::<u32>(), kind)?;
        let mut t = Self::zeros(shape)?;
        t.lease = Some(lease);
        Ok(t)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[u32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u32] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn tracked_bytes(&self) -> usize {
        self.lease.as_ref().map_or(0, Lease::bytes)
    }
}

impl Clone for IndexTensor {
    fn clone(&self) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.clone(),
            lease: None,
        }
    }
}

impl PartialEq for IndexTensor {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.data == other.data
    }
}

impl fmt::Debug for IndexTensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("IndexTensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

/// `B x S` attention mask with entries in `{0, 1}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    batch: usize,
    seq: usize,
    data: Vec<u8>,
}

impl AttentionMask {
    pub fn new(batch: usize, seq: usize, data: Vec<u8>) -> Result<Self> {
        let n = batch
            .checked_mul(seq)
            .ok_or(HeadError::Overflow("mask size"))?;
        if n != data.len() {
            return Err(HeadError::ShapeMismatch {
                what: "attention mask",
                expected: vec![batch, seq],
                actual: vec![data.len()],
            });
        }
        if let Some(index) = data.iter().position(|&m| m > 1) {
            return Err(HeadError::InvalidMask {
                index,
                value: data[index],
            });
        }
        Ok(Self { batch, seq, data })
    }

    pub fn ones(batch: usize, seq: usize) -> Self {
        Self {
            batch,
            seq,
            data: vec![1; batch * seq],
        }
    }

    /// Random mask where each position is kept with probability `keep`.
    pub fn seeded(batch: usize, seq: usize, seed: u64, keep: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..batch * seq)
            .map(|_| u8::from(unit_f64(rng.next_u64()) < keep))
            .collect();
        Self { batch, seq, data }
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn seq(&self) -> usize {
        self.seq
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn is_set(&self, b: usize, s: usize) -> bool {
        self.data[b * self.seq + s] != 0
    }

    /// Mask values for one batch row.
    pub fn row(&self, b: usize) -> &[u8] {
        &self.data[b * self.seq..(b + 1) * self.seq]
    }
}

/// Value distribution for [`seeded_tensor`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform on `[lo, hi]`.
    Uniform {
        lo: f32,
        hi: f32,
    },
    Constant(f32),
}

impl Init {
    pub const fn uniform(lo: f32, hi: f32) -> Self {
        Init::Uniform { lo, hi }
    }
}

fn unit_f32(x: u32) -> f32 {
    // 24 high bits -> exact f32 in [0, 1)
    (x >> 8) as f32 * (1.0 / (1u32 << 24) as f32)
}

fn unit_f64(x: u64) -> f64 {
    (x >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Deterministic tensor fill.
///
/// The stream is ChaCha8 seeded through `seed_from_u64`; one `next_u32` is
/// drawn per element in row-major order and its top 24 bits are mapped to
/// `[0, 1)` before scaling, so the bytes are identical on every platform.
pub fn seeded_tensor(shape: &[usize], seed: u64, init: Init) -> Result<DenseTensor> {
    let mut t = DenseTensor::zeros(shape)?;
    match init {
        Init::Constant(c) => {
            if !c.is_finite() {
                return Err(HeadError::InvalidArgument(format!(
                    "constant {c} is not finite"
                )));
            }
            t.data.fill(c);
        }
        Init::Uniform { lo, hi } => {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(HeadError::InvalidArgument(format!(
                    "uniform bounds must satisfy lo < hi, got [{lo}, {hi}]"
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (lo64, span) = (lo as f64, hi as f64 - lo as f64);
            for x in t.data.iter_mut() {
                *x = (lo64 + span * unit_f32(rng.next_u32()) as f64) as f32;
            }
        }
    }
    Ok(t)
}
