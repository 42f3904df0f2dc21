//! Sparse LM head for learned sparse retrieval.
//!
//! Computes `Y[b, v] = max_s log(1 + relu((H E^T + b)[b, s, v]))` over
//! unmasked positions, together with the argmax position of every pooled
//! entry.
//!
//! * [`reference`]: eager head that materializes the `B x S x V` logits,
//!   a dense-route backward and a finite-difference gradient oracle.
//! * [`fused`]: tiled and streaming forwards that reduce over the sequence
//!   as logits are produced, and an argmax-routed backward that needs only
//!   the pooled scores and indices.
//! * [`cost`]: integer byte-traffic model of each execution plan.
//! * [`memory`]: byte accounting used to measure peak and saved bytes.

pub mod cost;
pub mod error;
pub mod fused;
pub mod gemm;
pub mod head;
pub mod memory;
pub mod reference;
pub mod tensor;

pub use error::{HeadError, Result};
pub use fused::{
    backward_fused, forward_fully_fused, forward_hybrid, tile_schedule, SavedSparseState, Tile,
    TileConfig,
};
pub use head::{log1p_relu, HeadGradients, HeadInputs, HeadOutput};
pub use memory::{AllocKind, MemTracker};
pub use reference::{
    backward_eager, finite_difference_grads, forward_eager, forward_postmask, SavedDenseState,
};
pub use tensor::{seeded_tensor, AttentionMask, DenseTensor, Dims, IndexTensor, Init};
