//! Time source used for solver budgets and timing telemetry.

/// Monotonic time in seconds from an arbitrary origin.
pub trait Clock {
    fn now(&self) -> f64;
}

/// A clock that never advances. Solver time budgets never expire and all
/// recorded timings are zero, which keeps runs reproducible bit for bit.
#[derive(Debug, Clone, Copy, Default)]
pub struct NullClock;

impl Clock for NullClock {
    fn now(&self) -> f64 {
        0.0
    }
}

impl<C: Clock + ?Sized> Clock for &C {
    fn now(&self) -> f64 {
        (**self).now()
    }
}
