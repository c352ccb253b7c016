use std::cell::Cell;

/// Multiply-accumulate counter threaded through the dense kernels.
///
/// Interior mutability lets kernels take `Option<&FlopCounter>` and share one
/// counter across nested calls. The type is deliberately `!Sync`: use one
/// counter per thread.
#[derive(Debug, Default)]
pub struct FlopCounter {
    macs: Cell<u64>,
}

impl FlopCounter {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&self, macs: u64) {
        self.macs.set(self.macs.get() + macs);
    }

    pub fn mac_count(&self) -> u64 {
        self.macs.get()
    }

    pub fn reset(&self) {
        self.macs.set(0);
    }
}

#[inline]
pub(crate) fn record(counter: Option<&FlopCounter>, macs: usize) {
    if let Some(c) = counter {
        c.add(macs as u64);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accumulates_and_resets() {
        let c = FlopCounter::new();
        c.add(3);
        record(Some(&c), 4);
        record(None, 100);
        assert_eq!(c.mac_count(), 7);
        c.reset();
        assert_eq!(c.mac_count(), 0);
    }
}
