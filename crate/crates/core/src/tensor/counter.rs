use std::cell::Cell;

/// Multiply-accumulate tally threaded through forward passes.
///
/// Deliberately `!Sync`: a counter belongs to one execution context. Ops take
/// `Option<&MacCounter>` and add their exact MAC count while it is enabled.
#[derive(Debug)]
pub struct MacCounter {
    total: Cell<u64>,
    enabled: Cell<bool>,
}

impl MacCounter {
    pub fn new() -> Self {
        Self {
            total: Cell::new(0),
            enabled: Cell::new(true),
        }
    }

    pub fn total(&self) -> u64 {
        self.total.get()
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled.get()
    }

    pub fn set_enabled(&self, on: bool) {
        self.enabled.set(on);
    }

    pub fn add(&self, macs: u64) {
        if self.enabled.get() {
            self.total.set(self.total.get() + macs);
        }
    }

    pub fn reset(&self) {
        self.total.set(0);
    }
}

impl Default for MacCounter {
    fn default() -> Self {
        Self::new()
    }
}

pub(crate) fn count(counter: Option<&MacCounter>, macs: u64) {
    if let Some(c) = counter {
        c.add(macs);
    }
}
