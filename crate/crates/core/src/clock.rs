//! Logical clocks that hand out strictly increasing timestamps.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use crate::sa::Timestamp;

pub trait Clock: Send + Sync {
    /// A timestamp larger than every earlier result.
    fn next(&self) -> Timestamp;

    /// The most recent timestamp handed out, without advancing.
    fn peek(&self) -> Timestamp;
}

/// Wall time in `1/scale` second units, guarded to be strictly monotone.
#[derive(Debug)]
pub struct MonotoneClock {
    scale: u64,
    last: AtomicU64,
}

impl MonotoneClock {
    /// `scale` ticks per second; 1,000 gives milliseconds.
    pub fn new(scale: u64) -> Self {
        MonotoneClock { scale: scale.max(1), last: AtomicU64::new(0) }
    }

    fn wall(&self) -> u64 {
        let d = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
        (d.as_nanos() * self.scale as u128 / 1_000_000_000) as u64
    }
}

impl Default for MonotoneClock {
    fn default() -> Self {
        MonotoneClock::new(1_000)
    }
}

impl Clock for MonotoneClock {
    fn next(&self) -> Timestamp {
        let wall = self.wall();
        let prev = self
            .last
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |last| Some(wall.max(last + 1)))
            .expect("update closure always succeeds");
        Timestamp(wall.max(prev + 1))
    }

    fn peek(&self) -> Timestamp {
        Timestamp(self.last.load(Ordering::SeqCst))
    }
}

/// Deterministic clock for tests and scripted runs.
///
/// In ticking mode every `next()` advances by one. In manual mode `next()`
/// returns the value last `set` by the harness and never advances on its own,
/// so several servers can share one global timeline.
#[derive(Debug, Clone)]
pub struct ScriptedClock {
    inner: Arc<ScriptedInner>,
}

#[derive(Debug)]
struct ScriptedInner {
    now: AtomicU64,
    ticking: bool,
}

impl ScriptedClock {
    pub fn ticking(start: u64) -> Self {
        ScriptedClock { inner: Arc::new(ScriptedInner { now: AtomicU64::new(start), ticking: true }) }
    }

    pub fn manual(start: u64) -> Self {
        ScriptedClock { inner: Arc::new(ScriptedInner { now: AtomicU64::new(start), ticking: false }) }
    }

    pub fn set(&self, t: Timestamp) {
        self.inner.now.store(t.0, Ordering::SeqCst);
    }

    pub fn advance(&self, by: u64) -> Timestamp {
        Timestamp(self.inner.now.fetch_add(by, Ordering::SeqCst) + by)
    }
}

impl Clock for ScriptedClock {
    fn next(&self) -> Timestamp {
        if self.inner.ticking {
            Timestamp(self.inner.now.fetch_add(1, Ordering::SeqCst) + 1)
        } else {
            Timestamp(self.inner.now.load(Ordering::SeqCst))
        }
    }

    fn peek(&self) -> Timestamp {
        Timestamp(self.inner.now.load(Ordering::SeqCst))
    }
}

impl<C: Clock + ?Sized> Clock for Arc<C> {
    fn next(&self) -> Timestamp {
        (**self).next()
    }

    fn peek(&self) -> Timestamp {
        (**self).peek()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monotone_never_repeats() {
        let c = MonotoneClock::new(1);
        let mut last = c.next();
        for _ in 0..1000 {
            let t = c.next();
            assert!(t > last);
            last = t;
        }
        assert_eq!(c.peek(), last);
    }

    #[test]
    fn scripted_modes() {
        let t = ScriptedClock::ticking(0);
        assert_eq!(t.next(), Timestamp(1));
        assert_eq!(t.next(), Timestamp(2));
        let m = ScriptedClock::manual(5);
        assert_eq!(m.next(), Timestamp(5));
        assert_eq!(m.next(), Timestamp(5));
        m.set(Timestamp(9));
        assert_eq!(m.clone().next(), Timestamp(9));
    }
}
