//! Tracked `f64` storage.
//!
//! Every tensor payload, gradient and saved activation lives in a [`Buffer`].
//! Buffers report their size to a per-thread ledger so callers can read the
//! number of live bytes and the high-water mark since the last
//! [`reset_peak`]. An optional per-thread limit turns oversized allocations
//! into a panic carrying [`AllocationRefused`], which callers can catch with
//! `std::panic::catch_unwind`.

use std::cell::Cell;
use std::ops::{Deref, DerefMut};

thread_local! {
    static LIVE: Cell<usize> = const { Cell::new(0) };
    static PEAK: Cell<usize> = const { Cell::new(0) };
    static LIMIT: Cell<Option<usize>> = const { Cell::new(None) };
}

/// Panic payload used when an allocation would cross the configured limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AllocationRefused {
    pub requested: usize,
    pub live: usize,
    pub limit: usize,
}

impl std::fmt::Display for AllocationRefused {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "allocation of {} bytes refused ({} live, limit {})",
            self.requested, self.live, self.limit
        )
    }
}

fn register(bytes: usize) {
    let live = LIVE.with(Cell::get);
    let now = live + bytes;
    if let Some(limit) = LIMIT.with(Cell::get) {
        if now > limit {
            std::panic::panic_any(AllocationRefused {
                requested: bytes,
                live,
                limit,
            });
        }
    }
    LIVE.with(|l| l.set(now));
    PEAK.with(|p| {
        if now > p.get() {
            p.set(now)
        }
    });
}

fn release(bytes: usize) {
    LIVE.with(|l| l.set(l.get().saturating_sub(bytes)));
}

/// Bytes currently held by buffers created on this thread.
pub fn live_bytes() -> usize {
    LIVE.with(Cell::get)
}

/// High-water mark of [`live_bytes`] since the last [`reset_peak`].
pub fn peak_bytes() -> usize {
    PEAK.with(Cell::get)
}

/// Restart peak tracking from the current live size.
pub fn reset_peak() {
    let live = live_bytes();
    PEAK.with(|p| p.set(live));
}

/// Cap live bytes on this thread. `None` removes the cap.
pub fn set_limit(limit: Option<usize>) {
    LIMIT.with(|l| l.set(limit));
}

/// A tracked, contiguous `f64` array.
pub struct Buffer {
    data: Vec<f64>,
}

impl Buffer {
    pub fn zeros(len: usize) -> Self {
        Self::filled(len, 0.0)
    }

    pub fn filled(len: usize, value: f64) -> Self {
        register(len * std::mem::size_of::<f64>());
        Self {
            data: vec![value; len],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        register(data.len() * std::mem::size_of::<f64>());
        Self { data }
    }

    pub fn from_slice(data: &[f64]) -> Self {
        register(std::mem::size_of_val(data));
        Self {
            data: data.to_vec(),
        }
    }

    pub fn into_vec(mut self) -> Vec<f64> {
        let data = std::mem::take(&mut self.data);
        release(data.len() * std::mem::size_of::<f64>());
        data
    }
}

impl Drop for Buffer {
    fn drop(&mut self) {
        release(self.data.len() * std::mem::size_of::<f64>());
    }
}

impl Clone for Buffer {
    fn clone(&self) -> Self {
        Self::from_slice(&self.data)
    }
}

impl Deref for Buffer {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.data
    }
}

impl DerefMut for Buffer {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

impl std::fmt::Debug for Buffer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Buffer").field("len", &self.data.len()).finish()
    }
}
