//! Multiply-accumulate counters.
//!
//! Ops add the forward-pass work they perform to a per-thread tally. Dense
//! products (linear maps, output head) go to `dense`; sequence mixing
//! (dispatch rows, attention scores and context) goes to `mixing`.
//! Backward-pass work is not counted.

use std::cell::Cell;

thread_local! {
    static DENSE: Cell<u64> = const { Cell::new(0) };
    static MIXING: Cell<u64> = const { Cell::new(0) };
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MacCounts {
    pub dense: u64,
    pub mixing: u64,
}

impl MacCounts {
    pub fn total(&self) -> u64 {
        self.dense + self.mixing
    }
}

impl std::ops::Sub for MacCounts {
    type Output = MacCounts;

    fn sub(self, rhs: MacCounts) -> MacCounts {
        MacCounts {
            dense: self.dense - rhs.dense,
            mixing: self.mixing - rhs.mixing,
        }
    }
}

pub fn add_dense(macs: u64) {
    DENSE.with(|c| c.set(c.get() + macs));
}

pub fn add_mixing(macs: u64) {
    MIXING.with(|c| c.set(c.get() + macs));
}

pub fn snapshot() -> MacCounts {
    MacCounts {
        dense: DENSE.with(Cell::get),
        mixing: MIXING.with(Cell::get),
    }
}

pub fn reset() {
    DENSE.with(|c| c.set(0));
    MIXING.with(|c| c.set(0));
}
