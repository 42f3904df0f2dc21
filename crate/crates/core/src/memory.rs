//! Byte accounting for buffers owned by the head operators.
//!
//! Every buffer an operator allocates (logit tiles, running maxima, the
//! retained logit tensor, outputs) takes a [`Lease`] from a [`MemTracker`].
//! The lease is released when the owning tensor is dropped, so the tracker
//! always knows the live byte count per [`AllocKind`] and the high-water mark
//! of intermediate buffers. Caller-owned inputs are never counted.
//!
//! A tracker may carry a cap; reservations that would push the live total
//! past it fail with [`HeadError::OutOfMemory`].

use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use crate::error::{HeadError, Result};

/// What a tracked buffer is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AllocKind {
    /// Working memory released before the operator returns.
    Scratch,
    /// Intermediate activation kept alive for the backward pass.
    Retained,
    /// Returned result that is not needed by backward.
    Output,
    /// Returned result that is also the state backward consumes.
    RetainedOutput,
}

impl AllocKind {
    /// Counts toward the intermediate (peak activation) gauge.
    fn is_intermediate(self) -> bool {
        matches!(self, AllocKind::Scratch | AllocKind::Retained)
    }

    /// Counts toward the saved-for-backward gauge.
    fn is_saved(self) -> bool {
        matches!(self, AllocKind::Retained | AllocKind::RetainedOutput)
    }
}

#[derive(Default)]
struct Inner {
    live_total: AtomicUsize,
    live_intermediate: AtomicUsize,
    peak_intermediate: AtomicUsize,
    live_saved: AtomicUsize,
    cap: Option<usize>,
}

/// Shared, thread-safe allocation accountant.
#[derive(Clone, Default)]
pub struct MemTracker {
    inner: Arc<Inner>,
}

impl fmt::Debug for MemTracker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MemTracker")
            .field("live", &self.live_bytes())
            .field("peak", &self.peak_bytes())
            .field("saved", &self.saved_bytes())
            .field("cap", &self.inner.cap)
            .finish()
    }
}

impl MemTracker {
    pub fn new() -> Self {
        Self::default()
    }

    /// A tracker that refuses to hold more than `cap` live bytes.
    pub fn with_cap(cap: usize) -> Self {
        Self {
            inner: Arc::new(Inner {
                cap: Some(cap),
                ..Inner::default()
            }),
        }
    }

    pub fn cap(&self) -> Option<usize> {
        self.inner.cap
    }

    /// Reserve `bytes` of the given kind.
    pub fn reserve(&self, bytes: usize, kind: AllocKind) -> Result<Lease> {
        let inner = &self.inner;
        let mut cur = inner.live_total.load(Ordering::Relaxed);
        loop {
            let next = cur
                .checked_add(bytes)
                .ok_or(HeadError::Overflow("tracked bytes"))?;
            if let Some(cap) = inner.cap {
                if next > cap {
                    return Err(HeadError::OutOfMemory {
                        requested: bytes,
                        live: cur,
                        cap,
                    });
                }
            }
            match inner.live_total.compare_exchange_weak(
                cur,
                next,
                Ordering::AcqRel,
                Ordering::Relaxed,
            ) {
                Ok(_) => break,
                Err(observed) => cur = observed,
            }
        }
        if kind.is_intermediate() {
            let now = inner.live_intermediate.fetch_add(bytes, Ordering::AcqRel) + bytes;
            inner.peak_intermediate.fetch_max(now, Ordering::AcqRel);
        }
        if kind.is_saved() {
            inner.live_saved.fetch_add(bytes, Ordering::AcqRel);
        }
        Ok(Lease {
            tracker: self.clone(),
            bytes,
            kind,
        })
    }

    /// Live bytes across all kinds.
    pub fn live_bytes(&self) -> usize {
        self.inner.live_total.load(Ordering::Acquire)
    }

    /// High-water mark of live scratch + retained bytes.
    pub fn peak_bytes(&self) -> usize {
        self.inner.peak_intermediate.load(Ordering::Acquire)
    }

    /// Live bytes that a backward pass would consume.
    pub fn saved_bytes(&self) -> usize {
        self.inner.live_saved.load(Ordering::Acquire)
    }

    /// Restart the high-water mark from the current live intermediate bytes.
    pub fn reset_peak(&self) {
        let live = self.inner.live_intermediate.load(Ordering::Acquire);
        self.inner.peak_intermediate.store(live, Ordering::Release);
    }

    fn release(&self, bytes: usize, kind: AllocKind) {
        let inner = &self.inner;
        inner.live_total.fetch_sub(bytes, Ordering::AcqRel);
        if kind.is_intermediate() {
            inner.live_intermediate.fetch_sub(bytes, Ordering::AcqRel);
        }
        if kind.is_saved() {
            inner.live_saved.fetch_sub(bytes, Ordering::AcqRel);
        }
    }
}

/// Registration of one buffer with a tracker; released on drop.
pub struct Lease {
    tracker: MemTracker,
    bytes: usize,
    kind: AllocKind,
}

impl Lease {
    pub fn bytes(&self) -> usize {
        self.bytes
    }

    pub fn kind(&self) -> AllocKind {
        self.kind
    }
}

impl fmt::Debug for Lease {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Lease")
            .field("bytes", &self.bytes)
            .field("kind", &self.kind)
            .finish()
    }
}

impl Drop for Lease {
    fn drop(&mut self) {
        self.tracker.release(self.bytes, self.kind);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn peak_survives_release() {
        let mem = MemTracker::new();
        let a = mem.reserve(100, AllocKind::Scratch).unwrap();
        let b = mem.reserve(50, AllocKind::Retained).unwrap();
        assert_eq!(mem.live_bytes(), 150);
        drop(a);
        assert_eq!(mem.live_bytes(), 50);
        assert_eq!(mem.peak_bytes(), 150);
        assert_eq!(mem.saved_bytes(), 50);
        drop(b);
        assert_eq!(mem.saved_bytes(), 0);
        mem.reset_peak();
        assert_eq!(mem.peak_bytes(), 0);
    }

    #[test]
    fn outputs_do_not_count_toward_peak() {
        let mem = MemTracker::new();
        let _y = mem.reserve(64, AllocKind::RetainedOutput).unwrap();
        let _z = mem.reserve(32, AllocKind::Output).unwrap();
        assert_eq!(mem.peak_bytes(), 0);
        assert_eq!(mem.saved_bytes(), 64);
        assert_eq!(mem.live_bytes(), 96);
    }

    #[test]
    fn cap_rejects_and_leaves_state_untouched() {
        let mem = MemTracker::with_cap(100);
        let _a = mem.reserve(60, AllocKind::Scratch).unwrap();
        let err = mem.reserve(41, AllocKind::Scratch).unwrap_err();
        assert_eq!(
            err,
            HeadError::OutOfMemory {
                requested: 41,
                live: 60,
                cap: 100
            }
        );
        assert_eq!(mem.live_bytes(), 60);
        assert!(mem.reserve(40, AllocKind::Output).is_ok());
    }

    #[test]
    fn concurrent_reservations_balance() {
        let mem = MemTracker::new();
        std::thread::scope(|s| {
            for _ in 0..4 {
                let mem = mem.clone();
                s.spawn(move || {
                    for _ in 0..1000 {
                        let _l = mem.reserve(8, AllocKind::Scratch).unwrap();
                    }
                });
            }
        });
        assert_eq!(mem.live_bytes(), 0);
        assert!(mem.peak_bytes() >= 8 && mem.peak_bytes() <= 32);
    }
}
