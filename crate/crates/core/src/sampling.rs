//! Seeded random streams and the samplers used by the trainers.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::mdp::{PolicyMatrix, TabularMdp};

/// One `(s, a, s')` transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Transition {
    pub s: usize,
    pub a: usize,
    pub s_next: usize,
}

impl Transition {
    pub fn new(s: usize, a: usize, s_next: usize) -> Self {
        Self { s, a, s_next }
    }
}

/// Independent random stream identified by `(seed, stream_id)`.
///
/// Backed by ChaCha8, whose 64-bit stream selector gives each purpose
/// (actor draws, buffer draws, ...) its own non-overlapping sequence.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self { seed, stream_id, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.rng.try_fill_bytes(dest)
    }
}

/// Inverse-CDF draw from a probability vector.
pub fn sample_index(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last_positive = i;
            if u < acc {
                return i;
            }
        }
    }
    // Rounding left the cumulative sum just below u.
    last_positive
}

/// Result of one geometric-horizon chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChainDraw {
    pub state: usize,
    /// Number of transitions taken before stopping.
    pub steps: usize,
    /// The hard step cap fired before the chain terminated on its own.
    pub truncated: bool,
}

/// Step cap `10·⌈1/(1−γ)⌉·ln(1e12)` for the occupancy chain.
pub fn occupancy_step_cap(gamma: f64) -> usize {
    // 1/(1 - 0.9) evaluates to 10.000000000000002; do not round that up.
    let horizon = (1.0 / (1.0 - gamma) - 1e-9).ceil().max(1.0);
    (10.0 * horizon * 1e12f64.ln()).ceil() as usize
}

/// Draws a state from the discounted occupancy `d^π`.
///
/// Starts at `s₀ ~ μ`; at each step stops with probability `1−γ` and returns
/// the current state, otherwise moves along `P^π`.
pub fn sample_occupancy_state(mdp: &TabularMdp, pi: &PolicyMatrix, rng: &mut RngStream) -> ChainDraw {
    let gamma = mdp.gamma();
    let cap = occupancy_step_cap(gamma);
    let mut state = sample_index(mdp.mu(), rng);
    let mut steps = 0;
    loop {
        if rng.gen::<f64>() >= gamma {
            return ChainDraw {
                state,
                steps,
                truncated: false,
            };
        }
        if steps >= cap {
            return ChainDraw {
                state,
                steps,
                truncated: true,
            };
        }
        let a = sample_index(pi.row(state), rng);
        state = sample_index(mdp.transition_row(state, a), rng);
        steps += 1;
    }
}

/// `a ~ π(·|s)`.
pub fn sample_action(pi: &PolicyMatrix, s: usize, rng: &mut RngStream) -> usize {
    sample_index(pi.row(s), rng)
}

/// `s' ~ P(·|s,a)`.
pub fn sample_next_state(mdp: &TabularMdp, s: usize, a: usize, rng: &mut RngStream) -> usize {
    sample_index(mdp.transition_row(s, a), rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::random_mdp;
    use crate::table::SaTable;

    fn frequencies(n: usize, bins: usize, mut draw: impl FnMut() -> usize) -> Vec<f64> {
        let mut counts = vec![0usize; bins];
        for _ in 0..n {
            counts[draw()] += 1;
        }
        counts.iter().map(|&c| c as f64 / n as f64).collect()
    }

    #[test]
    fn streams_are_reproducible_and_independent() {
        let mut a = RngStream::new(3, 1);
        let mut b = RngStream::new(3, 1);
        let mut c = RngStream::new(3, 2);
        let xs: Vec<u64> = (0..8).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..8).map(|_| b.next_u64()).collect();
        let zs: Vec<u64> = (0..8).map(|_| c.next_u64()).collect();
        assert_eq!(xs, ys);
        assert_ne!(xs, zs);
    }

    #[test]
    fn one_hot_row_always_chosen() {
        let pi = PolicyMatrix::deterministic(&[2], 4).unwrap();
        let mut rng = RngStream::new(0, 0);
        assert!((0..1000).all(|_| sample_action(&pi, 0, &mut rng) == 2));
    }

    #[test]
    fn uniform_row_frequencies() {
        let pi = PolicyMatrix::uniform(1, 5);
        let mut rng = RngStream::new(1, 0);
        let freq = frequencies(100_000, 5, || sample_action(&pi, 0, &mut rng));
        assert!(freq.iter().all(|f| (f - 0.2).abs() < 0.01), "{freq:?}");
    }

    #[test]
    fn two_thirds_row_frequencies() {
        let pi = PolicyMatrix::from_table(SaTable::from_vec(1, 2, vec![2.0 / 3.0, 1.0 / 3.0]).unwrap()).unwrap();
        let mut rng = RngStream::new(2, 0);
        let freq = frequencies(100_000, 2, || sample_action(&pi, 0, &mut rng));
        assert!((freq[0] - 2.0 / 3.0).abs() < 0.01);
        assert!((freq[1] - 1.0 / 3.0).abs() < 0.01);
    }

    #[test]
    fn next_state_follows_rows() {
        // Row (0,0) deterministic to state 1; row (0,1) uniform over 4 states.
        let mut p = vec![0.0; 4 * 2 * 4];
        for s in 0..4 {
            for a in 0..2 {
                let row = &mut p[(s * 2 + a) * 4..(s * 2 + a + 1) * 4];
                if a == 0 {
                    row[1] = 1.0;
                } else {
                    row.fill(0.25);
                }
            }
        }
        let mdp = TabularMdp::new(4, 2, p, SaTable::zeros(4, 2), 0.5, vec![0.25; 4]).unwrap();
        let mut rng = RngStream::new(4, 0);
        assert!((0..1000).all(|_| sample_next_state(&mdp, 0, 0, &mut rng) == 1));
        let freq = frequencies(100_000, 4, || sample_next_state(&mdp, 0, 1, &mut rng));
        assert!(freq.iter().all(|f| (f - 0.25).abs() < 0.01), "{freq:?}");

        let single = random_mdp(1, 2, 0.5, 0).unwrap();
        assert!((0..100).all(|_| sample_next_state(&single, 0, 1, &mut rng) == 0));
    }

    #[test]
    fn zero_discount_returns_initial_state() {
        let mdp = random_mdp(5, 3, 0.0, 0).unwrap();
        let pi = PolicyMatrix::uniform(5, 3);
        let mut rng = RngStream::new(9, 0);
        for _ in 0..1000 {
            let draw = sample_occupancy_state(&mdp, &pi, &mut rng);
            assert_eq!(draw.steps, 0);
        }
        let freq = frequencies(100_000, 5, || sample_occupancy_state(&mdp, &pi, &mut rng).state);
        assert!(freq.iter().all(|f| (f - 0.2).abs() < 0.01));
    }

    #[test]
    fn single_state_chain() {
        let mdp = random_mdp(1, 3, 0.9, 0).unwrap();
        let pi = PolicyMatrix::uniform(1, 3);
        let mut rng = RngStream::new(9, 0);
        assert!((0..1000).all(|_| sample_occupancy_state(&mdp, &pi, &mut rng).state == 0));
    }

    #[test]
    fn chain_length_has_geometric_mean() {
        let mdp = random_mdp(3, 2, 0.9, 0).unwrap();
        let pi = PolicyMatrix::uniform(3, 2);
        let mut rng = RngStream::new(5, 0);
        let n = 50_000;
        let mut total = 0usize;
        for _ in 0..n {
            let draw = sample_occupancy_state(&mdp, &pi, &mut rng);
            assert!(!draw.truncated);
            total += draw.steps;
        }
        // Steps taken = visited states - 1; mean γ/(1-γ) = 9, sd ≈ 9.5.
        let mean = total as f64 / n as f64;
        assert!((mean - 9.0).abs() < 4.0 * 9.5 / (n as f64).sqrt(), "{mean}");
    }

    #[test]
    fn step_cap_values() {
        assert_eq!(occupancy_step_cap(0.9), (100.0 * 1e12f64.ln()).ceil() as usize);
        assert!(occupancy_step_cap(0.0) >= 276);
    }
}
