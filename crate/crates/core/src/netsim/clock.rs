//! Virtual time and a deterministic event queue.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

/// Virtual time in integer microseconds.
pub type Micros = u64;

pub fn ms_to_us(ms: f64) -> Micros {
    (ms * 1000.0).round() as Micros
}

pub fn us_to_ms(us: Micros) -> f64 {
    us as f64 / 1000.0
}

/// Render microseconds as milliseconds with exactly three decimals, without
/// going through floating point.
pub fn format_ms(us: Micros) -> String {
    format!("{}.{:03}", us / 1000, us % 1000)
}

struct Scheduled<E> {
    at: Micros,
    seq: u64,
    event: E,
}

impl<E> PartialEq for Scheduled<E> {
    fn eq(&self, other: &Self) -> bool {
        self.at == other.at && self.seq == other.seq
    }
}

impl<E> Eq for Scheduled<E> {}

impl<E> PartialOrd for Scheduled<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Scheduled<E> {
    // Reversed so that the max-heap pops the earliest (then first inserted) event.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .at
            .cmp(&self.at)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Monotone virtual clock driving a time-ordered queue. Events with equal
/// timestamps fire in insertion order.
pub struct VirtualClock<E> {
    now: Micros,
    seq: u64,
    queue: BinaryHeap<Scheduled<E>>,
}

impl<E> Default for VirtualClock<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> VirtualClock<E> {
    pub fn new() -> Self {
        VirtualClock {
            now: 0,
            seq: 0,
            queue: BinaryHeap::new(),
        }
    }

    pub fn now(&self) -> Micros {
        self.now
    }

    pub fn schedule(&mut self, at: Micros, event: E) -> Result<()> {
        if at < self.now {
            return Err(Error::ScheduleInPast {
                at_us: at,
                now_us: self.now,
            });
        }
        self.queue.push(Scheduled {
            at,
            seq: self.seq,
            event,
        });
        self.seq += 1;
        Ok(())
    }

    pub fn schedule_in(&mut self, delay: Micros, event: E) {
        let at = self.now + delay;
        self.queue.push(Scheduled {
            at,
            seq: self.seq,
            event,
        });
        self.seq += 1;
    }

    /// Pop the next event, advancing the clock to its timestamp.
    pub fn dispatch(&mut self) -> Option<(Micros, E)> {
        let next = self.queue.pop()?;
        debug_assert!(next.at >= self.now);
        self.now = next.at;
        Some((next.at, next.event))
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn is_idle(&self) -> bool {
        self.queue.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn schedule_at_now_fires_next() {
        let mut clock = VirtualClock::new();
        clock.schedule(0, "a").unwrap();
        assert_eq!(clock.dispatch(), Some((0, "a")));
        assert_eq!(clock.dispatch(), None);
    }

    #[test]
    fn ties_fire_in_insertion_order() {
        let mut clock = VirtualClock::new();
        for i in 0..10 {
            clock.schedule(5, i).unwrap();
        }
        let order: Vec<_> = std::iter::from_fn(|| clock.dispatch().map(|(_, e)| e)).collect();
        assert_eq!(order, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn past_is_rejected() {
        let mut clock = VirtualClock::new();
        clock.schedule(10, ()).unwrap();
        clock.dispatch();
        assert!(matches!(
            clock.schedule(9, ()),
            Err(Error::ScheduleInPast {
                at_us: 9,
                now_us: 10
            })
        ));
        clock.schedule(10, ()).unwrap();
    }

    #[test]
    fn random_events_replay_sorted() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut clock = VirtualClock::new();
        let mut expect = Vec::new();
        for i in 0..10_000u32 {
            let at = rng.gen_range(0..5_000u64);
            clock.schedule(at, i).unwrap();
            expect.push((at, i));
        }
        // stable sort keeps insertion order among ties
        expect.sort_by_key(|&(at, _)| at);
        let mut last = 0;
        let mut got = Vec::new();
        while let Some((at, e)) = clock.dispatch() {
            assert!(at >= last);
            assert_eq!(clock.now(), at);
            last = at;
            got.push((at, e));
        }
        assert_eq!(got, expect);
    }

    #[test]
    fn ms_rendering() {
        assert_eq!(format_ms(0), "0.000");
        assert_eq!(format_ms(15), "0.015");
        assert_eq!(format_ms(1_234_567), "1234.567");
        assert_eq!(ms_to_us(0.015), 15);
    }
}
