//! Sliding replay window `B_k` holding the `⌈c_b·k⌉` most recent transitions.

use std::collections::VecDeque;

use rand::Rng;

use crate::error::{param, Error, Result};
use crate::sampling::{RngStream, Transition};
use crate::table::SaTable;

/// Empirical state-action distribution `b_k` of the buffer.
pub type BufferDistribution = SaTable;

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    num_states: usize,
    num_actions: usize,
    fraction: f64,
    pushes: usize,
    entries: VecDeque<Transition>,
    /// Per-(s,a) multiplicity of the current entries.
    counts: Vec<usize>,
}

impl ReplayBuffer {
    pub fn new(num_states: usize, num_actions: usize, fraction: f64) -> Result<Self> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return param(format!("buffer fraction {fraction} outside (0, 1]"));
        }
        Ok(Self {
            num_states,
            num_actions,
            fraction,
            pushes: 0,
            entries: VecDeque::new(),
            counts: vec![0; num_states * num_actions],
        })
    }

    /// Window length after `pushes` insertions: `max(1, ⌈c_b·k⌉)`.
    pub fn window_len(fraction: f64, pushes: usize) -> usize {
        // Guard against products like 0.1 * 30 = 3.0000000000000004.
        let raw = (fraction * pushes as f64 - 1e-9).ceil();
        (raw.max(1.0) as usize).min(pushes.max(1))
    }

    pub fn fraction(&self) -> f64 {
        self.fraction
    }

    /// Number of transitions pushed so far (the iteration counter `k`).
    pub fn pushes(&self) -> usize {
        self.pushes
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl ExactSizeIterator<Item = &Transition> + '_ {
        self.entries.iter()
    }

    pub fn push(&mut self, t: Transition) {
        assert!(
            t.s < self.num_states && t.s_next < self.num_states && t.a < self.num_actions,
            "transition {t:?} out of range"
        );
        self.pushes += 1;
        self.entries.push_back(t);
        self.counts[t.s * self.num_actions + t.a] += 1;
        let target = Self::window_len(self.fraction, self.pushes);
        while self.entries.len() > target {
            let old = self.entries.pop_front().expect("non-empty");
            self.counts[old.s * self.num_actions + old.a] -= 1;
        }
    }

    /// Uniform draw over the current entries.
    pub fn sample_uniform(&self, rng: &mut RngStream) -> Result<Transition> {
        if self.entries.is_empty() {
            return Err(Error::State("cannot sample from an empty buffer".into()));
        }
        let idx = rng.gen_range(0..self.entries.len());
        Ok(self.entries[idx])
    }

    /// `b(s,a)` = share of entries with that state-action pair.
    pub fn distribution(&self) -> Result<BufferDistribution> {
        if self.entries.is_empty() {
            return Err(Error::State("empty buffer has no distribution".into()));
        }
        let len = self.entries.len() as f64;
        SaTable::from_vec(
            self.num_states,
            self.num_actions,
            self.counts.iter().map(|&c| c as f64 / len).collect(),
        )
    }
}

/// `‖after − before‖₂ ≤ 2/|B_{k+1}|`, the one-step drift bound of `b_k`.
pub fn drift_bound_check(before: &BufferDistribution, after: &BufferDistribution, len_after: usize) -> Result<bool> {
    if before.shape() != after.shape() {
        return param("buffer distributions have different shapes");
    }
    if len_after == 0 {
        return param("buffer length must be positive");
    }
    Ok(after.sub(before).norm_l2() <= 2.0 / len_after as f64 + 1e-12)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(i: usize) -> Transition {
        Transition::new(i % 3, i % 2, (i + 1) % 3)
    }

    fn pushed(fraction: f64, n: usize) -> ReplayBuffer {
        let mut buf = ReplayBuffer::new(3, 2, fraction).unwrap();
        for i in 1..=n {
            buf.push(t(i));
        }
        buf
    }

    #[test]
    fn full_fraction_keeps_everything() {
        let buf = pushed(1.0, 37);
        assert_eq!(buf.len(), 37);
    }

    #[test]
    fn tenth_fraction_window() {
        let buf = pushed(0.1, 100);
        assert_eq!(buf.len(), 10);
        let kept: Vec<_> = buf.entries().copied().collect();
        let expected: Vec<_> = (91..=100).map(t).collect();
        assert_eq!(kept, expected);
    }

    #[test]
    fn half_fraction_third_push() {
        let buf = pushed(0.5, 3);
        assert_eq!(buf.len(), 2);
        assert_eq!(buf.entries().copied().collect::<Vec<_>>(), vec![t(2), t(3)]);
    }

    #[test]
    fn window_len_handles_rounding() {
        assert_eq!(ReplayBuffer::window_len(0.1, 30), 3);
        assert_eq!(ReplayBuffer::window_len(0.1, 31), 4);
        assert_eq!(ReplayBuffer::window_len(0.1, 1), 1);
        assert_eq!(ReplayBuffer::window_len(0.7, 10), 7);
    }

    #[test]
    fn rejects_bad_fraction() {
        assert!(ReplayBuffer::new(2, 2, 0.0).is_err());
        assert!(ReplayBuffer::new(2, 2, 1.5).is_err());
    }

    #[test]
    fn empty_buffer_errors() {
        let buf = ReplayBuffer::new(2, 2, 0.5).unwrap();
        let mut rng = RngStream::new(0, 0);
        assert!(matches!(buf.sample_uniform(&mut rng), Err(Error::State(_))));
        assert!(matches!(buf.distribution(), Err(Error::State(_))));
    }

    #[test]
    fn single_entry_sampling_and_distribution() {
        let mut buf = ReplayBuffer::new(3, 2, 1.0).unwrap();
        buf.push(Transition::new(2, 1, 0));
        let mut rng = RngStream::new(0, 0);
        assert!((0..100).all(|_| buf.sample_uniform(&mut rng).unwrap() == Transition::new(2, 1, 0)));
        let b = buf.distribution().unwrap();
        assert_eq!(b[(2, 1)], 1.0);
        assert_eq!(b.norm_l1(), 1.0);
    }

    #[test]
    fn two_distinct_entries_share_mass() {
        let mut buf = ReplayBuffer::new(3, 2, 1.0).unwrap();
        buf.push(Transition::new(0, 0, 1));
        buf.push(Transition::new(1, 1, 1));
        let b = buf.distribution().unwrap();
        assert_eq!(b[(0, 0)], 0.5);
        assert_eq!(b[(1, 1)], 0.5);
    }

    #[test]
    fn uniform_slot_frequencies() {
        let mut buf = ReplayBuffer::new(10, 1, 1.0).unwrap();
        for i in 0..10 {
            buf.push(Transition::new(i, 0, 0));
        }
        let mut rng = RngStream::new(42, 1);
        let mut counts = [0usize; 10];
        let n = 100_000;
        for _ in 0..n {
            counts[buf.sample_uniform(&mut rng).unwrap().s] += 1;
        }
        assert!(counts.iter().all(|&c| (c as f64 / n as f64 - 0.1).abs() < 0.01));
    }

    #[test]
    fn sampling_is_deterministic_per_stream() {
        let buf = pushed(1.0, 50);
        let mut r1 = RngStream::new(5, 1);
        let mut r2 = RngStream::new(5, 1);
        let a: Vec<_> = (0..20).map(|_| buf.sample_uniform(&mut r1).unwrap()).collect();
        let b: Vec<_> = (0..20).map(|_| buf.sample_uniform(&mut r2).unwrap()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn drift_examples() {
        let mut a = SaTable::zeros(2, 2);
        a[(0, 0)] = 1.0;
        assert!(drift_bound_check(&a, &a, 5).unwrap());
        let mut b = SaTable::zeros(2, 2);
        b[(1, 1)] = 1.0;
        assert!((b.sub(&a).norm_l2() - 2f64.sqrt()).abs() < 1e-15);
        assert!(drift_bound_check(&a, &b, 1).unwrap());
        assert!(!drift_bound_check(&a, &b, 2).unwrap());
        assert!(drift_bound_check(&a, &SaTable::zeros(1, 2), 1).is_err());
    }

    proptest! {
        #[test]
        fn window_and_drift_invariants(
            fraction in 0.01f64..=1.0,
            pairs in prop::collection::vec((0usize..3, 0usize..2), 1..300),
        ) {
            let mut buf = ReplayBuffer::new(3, 2, fraction).unwrap();
            let mut history = Vec::new();
            let mut prev: Option<BufferDistribution> = None;
            for (i, &(s, a)) in pairs.iter().enumerate() {
                let tr = Transition::new(s, a, i % 3);
                let before_len = buf.len();
                buf.push(tr);
                history.push(tr);
                let k = i + 1;
                let len = ReplayBuffer::window_len(fraction, k);
                prop_assert_eq!(buf.len(), len);
                prop_assert!(buf.len() == before_len || buf.len() == before_len + 1);
                let expected: Vec<_> = history[k - len..].to_vec();
                prop_assert_eq!(buf.entries().copied().collect::<Vec<_>>(), expected);
                let dist = buf.distribution().unwrap();
                prop_assert!((dist.norm_l1() - 1.0).abs() < 1e-12);
                if let Some(p) = prev {
                    prop_assert!(drift_bound_check(&p, &dist, buf.len()).unwrap());
                }
                prev = Some(dist);
            }
        }
    }
}
