//! Virtual time.

/// Virtual time in whole milliseconds.
pub type Millis = u64;

pub const MS_PER_SECOND: Millis = 1_000;
pub const MS_PER_MINUTE: Millis = 60 * MS_PER_SECOND;
pub const MS_PER_HOUR: Millis = 60 * MS_PER_MINUTE;

/// Monotone simulation clock. Only the event loop advances it.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct VirtualClock {
    now: Millis,
}

impl VirtualClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> Millis {
        self.now
    }

    /// Moves the clock forward to `t`.
    ///
    /// Panics if `t` lies in the past: the event queue never yields events out
    /// of order, so a backward step is a bug in the caller.
    pub(crate) fn advance_to(&mut self, t: Millis) {
        assert!(t >= self.now, "virtual clock moved backward: {} -> {}", self.now, t);
        self.now = t;
    }
}
