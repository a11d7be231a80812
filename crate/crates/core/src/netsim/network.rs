//! Connection outcome model: refusals, timeouts, delays and the per-contact
//! overhead γ.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::clock::Micros;
use crate::error::{Error, Result};

/// Dense index of a node inside a [`Population`](crate::routing::Population).
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct NodeIndex(pub u32);

impl NodeIndex {
    pub fn get(self) -> usize {
        self.0 as usize
    }
}

/// Inclusive range of delays in microseconds.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct DelayRange {
    pub min_us: Micros,
    pub max_us: Micros,
}

impl DelayRange {
    pub fn new(min_us: Micros, max_us: Micros) -> Result<Self> {
        if min_us > max_us {
            return Err(Error::config(
                "delay range",
                format!("min {min_us}us exceeds max {max_us}us"),
            ));
        }
        Ok(DelayRange { min_us, max_us })
    }

    pub fn fixed(us: Micros) -> Self {
        DelayRange {
            min_us: us,
            max_us: us,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Micros {
        rng.gen_range(self.min_us..=self.max_us)
    }

    pub fn contains(&self, us: Micros) -> bool {
        (self.min_us..=self.max_us).contains(&us)
    }
}

/// Which endpoints of a connection accrue contact load and pay the γ penalty.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OverheadScope {
    /// Only the contacted node.
    #[default]
    Callee,
    /// Only the initiating node.
    Caller,
    /// Both endpoints; the penalty is the sum of the two counters.
    Both,
}

impl OverheadScope {
    pub fn as_str(&self) -> &'static str {
        match self {
            OverheadScope::Callee => "callee",
            OverheadScope::Caller => "caller",
            OverheadScope::Both => "both",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    pub node_count: usize,
    pub fast_error_rate: f64,
    pub slow_error_rate: f64,
    pub conn_delay: DelayRange,
    pub fast_delay: DelayRange,
    pub slow_delay: DelayRange,
    pub gamma_us: Micros,
    pub overhead_scope: OverheadScope,
}

impl Default for NetworkParams {
    fn default() -> Self {
        NetworkParams {
            node_count: 1000,
            fast_error_rate: 0.0,
            slow_error_rate: 0.0,
            // fitted to European lookup latencies: single value lookup p90 near 700 ms
            conn_delay: DelayRange::new(220_000, 420_000).unwrap(),
            fast_delay: DelayRange::new(10_000, 50_000).unwrap(),
            slow_delay: DelayRange::new(1_000_000, 2_000_000).unwrap(),
            gamma_us: 0,
            overhead_scope: OverheadScope::Callee,
        }
    }
}

impl NetworkParams {
    pub fn validate(&self) -> Result<()> {
        for (key, rate) in [
            ("fast_error_rate", self.fast_error_rate),
            ("slow_error_rate", self.slow_error_rate),
        ] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::config(key, format!("{rate} is not a probability")));
            }
        }
        if self.fast_error_rate + self.slow_error_rate > 1.0 {
            return Err(Error::config(
                "slow_error_rate",
                "fast_error_rate + slow_error_rate exceeds 1",
            ));
        }
        for (key, r) in [
            ("conn_delay_ms", self.conn_delay),
            ("fast_delay_ms", self.fast_delay),
            ("slow_delay_ms", self.slow_delay),
        ] {
            if r.min_us > r.max_us {
                return Err(Error::config(key, "min exceeds max"));
            }
        }
        if self.node_count == 0 {
            return Err(Error::config("node_count", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum OutcomeKind {
    Success,
    /// Immediate refusal.
    FastError,
    /// Timeout.
    SlowError,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct ConnectionOutcome {
    pub kind: OutcomeKind,
    /// Delay sampled from the range of `kind`.
    pub base_us: Micros,
    /// γ penalty from the contact counters before this attempt.
    pub overhead_us: Micros,
}

impl ConnectionOutcome {
    pub fn delay_us(&self) -> Micros {
        self.base_us + self.overhead_us
    }

    pub fn is_success(&self) -> bool {
        self.kind == OutcomeKind::Success
    }
}

/// Number of connection attempts each node took part in during the current
/// batch.
#[derive(Clone, Debug)]
pub struct ContactLoad {
    counts: Vec<u64>,
}

impl ContactLoad {
    pub fn new(node_count: usize) -> Self {
        ContactLoad {
            counts: vec![0; node_count],
        }
    }

    pub fn get(&self, node: NodeIndex) -> u64 {
        self.counts[node.get()]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn reset_batch(&mut self) {
        self.counts.iter_mut().for_each(|c| *c = 0);
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Draw the outcome of one connection attempt from `src` to `dst` and
/// charge the contact counters.
///
/// Exactly two values are drawn from `rng` per call (the outcome class, then
/// the delay), so an operation's stream of outcomes does not depend on γ.
pub fn connect<R: Rng + ?Sized>(
    src: NodeIndex,
    dst: NodeIndex,
    rng: &mut R,
    load: &mut ContactLoad,
    params: &NetworkParams,
) -> Result<ConnectionOutcome> {
    if src == dst {
        return Err(Error::SelfConnection(src.0.to_string()));
    }
    let n = load.counts.len();
    for node in [src, dst] {
        if node.get() >= n {
            return Err(Error::UnknownNode(node.0.to_string()));
        }
    }
    let u: f64 = rng.gen();
    let (kind, range) = if u < params.fast_error_rate {
        (OutcomeKind::FastError, params.fast_delay)
    } else if u < params.fast_error_rate + params.slow_error_rate {
        (OutcomeKind::SlowError, params.slow_delay)
    } else {
        (OutcomeKind::Success, params.conn_delay)
    };
    let base_us = range.sample(rng);
    let contacts = match params.overhead_scope {
        OverheadScope::Callee => {
            let c = load.counts[dst.get()];
            load.counts[dst.get()] += 1;
            c
        }
        OverheadScope::Caller => {
            let c = load.counts[src.get()];
            load.counts[src.get()] += 1;
            c
        }
        OverheadScope::Both => {
            let c = load.counts[src.get()] + load.counts[dst.get()];
            load.counts[src.get()] += 1;
            load.counts[dst.get()] += 1;
            c
        }
    };
    Ok(ConnectionOutcome {
        kind,
        base_us,
        overhead_us: params.gamma_us * contacts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn flat(us: Micros) -> NetworkParams {
        NetworkParams {
            node_count: 10,
            conn_delay: DelayRange::fixed(us),
            ..NetworkParams::default()
        }
    }

    #[test]
    fn degenerate_range_always_succeeds_with_fixed_delay() {
        let params = flat(50_000);
        let mut load = ContactLoad::new(10);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for i in 0..100 {
            let out = connect(
                NodeIndex(0),
                NodeIndex(1 + i % 9),
                &mut rng,
                &mut load,
                &params,
            )
            .unwrap();
            assert_eq!(out.kind, OutcomeKind::Success);
            assert_eq!(out.delay_us(), 50_000);
        }
    }

    #[test]
    fn third_contact_pays_twice_gamma() {
        let params = NetworkParams {
            gamma_us: 250,
            ..flat(1000)
        };
        let mut load = ContactLoad::new(10);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let overheads: Vec<_> = (0..3)
            .map(|_| {
                connect(NodeIndex(0), NodeIndex(7), &mut rng, &mut load, &params)
                    .unwrap()
                    .overhead_us
            })
            .collect();
        assert_eq!(overheads, vec![0, 250, 500]);
        assert_eq!(load.get(NodeIndex(7)), 3);
        assert_eq!(load.get(NodeIndex(0)), 0);
    }

    #[test]
    fn failures_count_as_contacts() {
        let params = NetworkParams {
            fast_error_rate: 1.0,
            gamma_us: 10,
            ..flat(1000)
        };
        let mut load = ContactLoad::new(3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = connect(NodeIndex(0), NodeIndex(2), &mut rng, &mut load, &params).unwrap();
        let b = connect(NodeIndex(1), NodeIndex(2), &mut rng, &mut load, &params).unwrap();
        assert_eq!(a.kind, OutcomeKind::FastError);
        assert!(params.fast_delay.contains(a.base_us));
        assert_eq!(b.overhead_us, 10);
    }

    #[test]
    fn both_scope_charges_caller_and_callee() {
        let params = NetworkParams {
            gamma_us: 1,
            overhead_scope: OverheadScope::Both,
            ..flat(1000)
        };
        let mut load = ContactLoad::new(4);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let o: Vec<_> = [(0, 1), (0, 2), (3, 1), (0, 1)]
            .iter()
            .map(|&(s, d)| {
                connect(NodeIndex(s), NodeIndex(d), &mut rng, &mut load, &params)
                    .unwrap()
                    .overhead_us
            })
            .collect();
        assert_eq!(o, vec![0, 1, 1, 2 + 2]);
        assert_eq!(load.counts(), &[3, 3, 1, 1]);
    }

    #[test]
    fn self_connection_is_rejected() {
        let params = flat(1);
        let mut load = ContactLoad::new(2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert!(matches!(
            connect(NodeIndex(1), NodeIndex(1), &mut rng, &mut load, &params),
            Err(Error::SelfConnection(_))
        ));
    }

    #[test]
    fn fast_error_frequency_converges() {
        let params = NetworkParams {
            fast_error_rate: 0.1,
            ..flat(1)
        };
        let mut load = ContactLoad::new(2);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 100_000;
        let fast = (0..n)
            .filter(|_| {
                connect(NodeIndex(0), NodeIndex(1), &mut rng, &mut load, &params)
                    .unwrap()
                    .kind
                    == OutcomeKind::FastError
            })
            .count();
        let rate = fast as f64 / n as f64;
        assert!((rate - 0.1).abs() <= 0.01, "observed {rate}");
    }

    #[test]
    fn reset_removes_overhead() {
        let params = NetworkParams {
            gamma_us: 100,
            ..flat(1000)
        };
        let mut load = ContactLoad::new(3);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            connect(NodeIndex(0), NodeIndex(1), &mut rng, &mut load, &params).unwrap();
        }
        load.reset_batch();
        assert_eq!(load.total(), 0);
        let out = connect(NodeIndex(2), NodeIndex(1), &mut rng, &mut load, &params).unwrap();
        assert_eq!(out.overhead_us, 0);
    }

    #[test]
    fn paired_batches_without_reset_are_slower() {
        let params = NetworkParams {
            gamma_us: 100,
            conn_delay: DelayRange::new(1000, 5000).unwrap(),
            ..flat(0)
        };
        let contacts: Vec<(u32, u32)> = (0..200).map(|i| (i % 5, 5 + (i * 7) % 20)).collect();
        let run = |load: &mut ContactLoad| -> Vec<Micros> {
            let mut rng = ChaCha8Rng::seed_from_u64(8);
            contacts
                .iter()
                .map(|&(s, d)| {
                    connect(NodeIndex(s), NodeIndex(d), &mut rng, load, &params)
                        .unwrap()
                        .delay_us()
                })
                .collect()
        };
        let mut load = ContactLoad::new(25);
        let first = run(&mut load);
        let second = run(&mut load);
        assert!(first.iter().zip(&second).all(|(a, b)| b > a));
        load.reset_batch();
        assert_eq!(run(&mut load), first);
    }

    #[test]
    fn validation_rejects_bad_rates_and_ranges() {
        let mut p = NetworkParams {
            fast_error_rate: 1.5,
            ..NetworkParams::default()
        };
        assert!(
            matches!(p.validate(), Err(Error::Config { ref key, .. }) if key == "fast_error_rate")
        );
        p.fast_error_rate = 0.6;
        p.slow_error_rate = 0.6;
        assert!(p.validate().is_err());
        p.slow_error_rate = 0.1;
        p.fast_delay = DelayRange {
            min_us: 5,
            max_us: 1,
        };
        assert!(
            matches!(p.validate(), Err(Error::Config { ref key, .. }) if key == "fast_delay_ms")
        );
        assert!(DelayRange::new(2, 1).is_err());
    }
}
