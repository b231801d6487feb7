//! Tabular MDPs, softmax policies and the kernels they induce.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::Exp1;

use crate::error::{param, Error, Result};
use crate::fmt::decimal;
use crate::sampling::RngStream;
use crate::table::SaTable;

const SIMPLEX_TOL: f64 = 1e-12;

/// A finite discounted MDP with full-support initial distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    num_states: usize,
    num_actions: usize,
    /// `P(s'|s,a)` at `(s * A + a) * S + s'`.
    transition: Vec<f64>,
    reward: SaTable,
    gamma: f64,
    mu: Vec<f64>,
}

/// Sampling range for the rewards of generated MDPs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RewardRange {
    /// Uniform on `[0, 1]`.
    #[default]
    Unit,
    /// Uniform on `[-1, 1]`.
    Symmetric,
}

impl FromStr for RewardRange {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unit" | "0,1" => Ok(RewardRange::Unit),
            "symmetric" | "-1,1" => Ok(RewardRange::Symmetric),
            other => param(format!("unknown reward range {other:?} (expected unit|symmetric)")),
        }
    }
}

impl TabularMdp {
    /// Builds and validates an MDP. `transition` is laid out `(s, a, s')` row-major.
    pub fn new(
        num_states: usize,
        num_actions: usize,
        transition: Vec<f64>,
        reward: SaTable,
        gamma: f64,
        mu: Vec<f64>,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return param("need at least one state and one action");
        }
        if !(0.0..1.0).contains(&gamma) {
            return param(format!("discount {gamma} outside [0, 1)"));
        }
        if transition.len() != num_states * num_actions * num_states {
            return param("transition tensor has the wrong size");
        }
        if reward.shape() != (num_states, num_actions) {
            return param("reward table has the wrong shape");
        }
        if mu.len() != num_states {
            return param("initial distribution has the wrong length");
        }
        for (row_idx, row) in transition.chunks(num_states).enumerate() {
            if row.iter().any(|&p| !p.is_finite() || p < 0.0) {
                return param(format!("transition row {row_idx} has a negative or non-finite entry"));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > SIMPLEX_TOL {
                return param(format!("transition row {row_idx} sums to {total}"));
            }
        }
        if reward.as_slice().iter().any(|r| !r.is_finite() || r.abs() > 1.0) {
            return param("rewards must be finite with |R| <= 1");
        }
        if mu.iter().any(|&m| !m.is_finite() || m <= 0.0) {
            return param("initial distribution must be strictly positive");
        }
        let total: f64 = mu.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return param(format!("initial distribution sums to {total}"));
        }
        Ok(Self {
            num_states,
            num_actions,
            transition,
            reward,
            gamma,
            mu,
        })
    }

    #[inline]
    pub fn num_states(&self) -> usize {
        self.num_states
    }

    #[inline]
    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    #[inline]
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn reward(&self) -> &SaTable {
        &self.reward
    }

    /// `P(·|s,a)`.
    #[inline]
    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.num_actions + a) * self.num_states;
        &self.transition[start..start + self.num_states]
    }

    pub fn transitions(&self) -> &[f64] {
        &self.transition
    }

    /// Same dynamics and rewards under a different discount.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&gamma) {
            return param(format!("discount {gamma} outside [0, 1)"));
        }
        Ok(Self { gamma, ..self.clone() })
    }

    /// Same dynamics with every reward replaced by `value`.
    pub fn with_constant_reward(&self, value: f64) -> Result<Self> {
        Self::new(
            self.num_states,
            self.num_actions,
            self.transition.clone(),
            SaTable::filled(self.num_states, self.num_actions, value),
            self.gamma,
            self.mu.clone(),
        )
    }

    fn check_shape(&self, table: &SaTable, what: &str) -> Result<()> {
        if table.shape() != (self.num_states, self.num_actions) {
            return param(format!(
                "{what} has shape {:?}, MDP is {}x{}",
                table.shape(),
                self.num_states,
                self.num_actions
            ));
        }
        Ok(())
    }

    /// Plain-text serialization: header `S A gamma`, then mu, then R (S rows),
    /// then P (S*A rows of S values).
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let join = |vals: &[f64]| vals.iter().map(|&v| decimal(v, 17)).collect::<Vec<_>>().join(" ");
        let _ = writeln!(out, "{} {} {}", self.num_states, self.num_actions, decimal(self.gamma, 17));
        let _ = writeln!(out, "{}", join(&self.mu));
        for s in 0..self.num_states {
            let _ = writeln!(out, "{}", join(self.reward.row(s)));
        }
        for row in self.transition.chunks(self.num_states) {
            let _ = writeln!(out, "{}", join(row));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let mut next_line = |what: &str| lines.next().ok_or_else(|| Error::Parse(format!("missing {what}")));
        let header: Vec<&str> = next_line("header")?.split_whitespace().collect();
        if header.len() != 3 {
            return Err(Error::Parse("header must be `S A gamma`".into()));
        }
        let num_states: usize = header[0].parse().map_err(|_| Error::Parse("bad S".into()))?;
        let num_actions: usize = header[1].parse().map_err(|_| Error::Parse("bad A".into()))?;
        let gamma: f64 = header[2].parse().map_err(|_| Error::Parse("bad gamma".into()))?;
        let parse_row = |line: &str, len: usize| -> Result<Vec<f64>> {
            let row = line
                .split_whitespace()
                .map(|v| v.parse::<f64>().map_err(|_| Error::Parse(format!("bad number {v:?}"))))
                .collect::<Result<Vec<_>>>()?;
            if row.len() != len {
                return Err(Error::Parse(format!("expected {len} values, got {}", row.len())));
            }
            Ok(row)
        };
        let mu = parse_row(next_line("mu")?, num_states)?;
        let mut reward = Vec::with_capacity(num_states * num_actions);
        for _ in 0..num_states {
            reward.extend(parse_row(next_line("reward row")?, num_actions)?);
        }
        let mut transition = Vec::with_capacity(num_states * num_actions * num_states);
        for _ in 0..num_states * num_actions {
            transition.extend(parse_row(next_line("transition row")?, num_states)?);
        }
        Self::new(
            num_states,
            num_actions,
            transition,
            SaTable::from_vec(num_states, num_actions, reward)?,
            gamma,
            mu,
        )
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }
}

/// Random MDP with flat-Dirichlet transition rows, uniform `[0,1]` rewards and
/// uniform initial distribution.
pub fn random_mdp(num_states: usize, num_actions: usize, gamma: f64, seed: u64) -> Result<TabularMdp> {
    random_mdp_with(num_states, num_actions, gamma, seed, RewardRange::Unit)
}

pub fn random_mdp_with(
    num_states: usize,
    num_actions: usize,
    gamma: f64,
    seed: u64,
    rewards: RewardRange,
) -> Result<TabularMdp> {
    if num_states == 0 || num_actions == 0 {
        return param("need at least one state and one action");
    }
    if !(0.0..1.0).contains(&gamma) {
        return param(format!("discount {gamma} outside [0, 1)"));
    }
    let mut rng = RngStream::new(seed, 0);
    let mut transition = Vec::with_capacity(num_states * num_actions * num_states);
    for _ in 0..num_states * num_actions {
        let draws: Vec<f64> = (0..num_states).map(|_| rng.sample::<f64, _>(Exp1)).collect();
        let total: f64 = draws.iter().sum();
        transition.extend(draws.iter().map(|x| x / total));
    }
    let reward = SaTable::from_fn(num_states, num_actions, |_, _| match rewards {
        RewardRange::Unit => rng.gen::<f64>(),
        RewardRange::Symmetric => rng.gen_range(-1.0..=1.0),
    });
    let mu = vec![1.0 / num_states as f64; num_states];
    TabularMdp::new(num_states, num_actions, transition, reward, gamma, mu)
}

/// Softmax logits `θ(s,a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub theta: SaTable,
}

impl PolicyParams {
    pub fn zeros(num_states: usize, num_actions: usize) -> Self {
        Self {
            theta: SaTable::zeros(num_states, num_actions),
        }
    }

    pub fn new(theta: SaTable) -> Self {
        Self { theta }
    }
}

/// A stochastic policy `π(a|s)`; every row is a probability vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyMatrix {
    pi: SaTable,
}

impl PolicyMatrix {
    /// Validates that rows are probability vectors.
    pub fn from_table(pi: SaTable) -> Result<Self> {
        for s in 0..pi.num_states() {
            let row = pi.row(s);
            if row.iter().any(|&p| p.is_nan() || p < 0.0) {
                return param(format!("policy row {s} has a negative entry"));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > SIMPLEX_TOL {
                return param(format!("policy row {s} sums to {total}"));
            }
        }
        Ok(Self { pi })
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        Self {
            pi: SaTable::filled(num_states, num_actions, 1.0 / num_actions as f64),
        }
    }

    /// One-hot policy choosing `actions[s]` in state `s`.
    pub fn deterministic(actions: &[usize], num_actions: usize) -> Result<Self> {
        if actions.iter().any(|&a| a >= num_actions) {
            return param("action index out of range");
        }
        Ok(Self {
            pi: SaTable::from_fn(actions.len(), num_actions, |s, a| if actions[s] == a { 1.0 } else { 0.0 }),
        })
    }

    pub fn table(&self) -> &SaTable {
        &self.pi
    }

    #[inline]
    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.pi[(s, a)]
    }

    #[inline]
    pub fn row(&self, s: usize) -> &[f64] {
        self.pi.row(s)
    }

    pub fn num_states(&self) -> usize {
        self.pi.num_states()
    }

    pub fn num_actions(&self) -> usize {
        self.pi.num_actions()
    }
}

/// `π_θ(a|s) = exp θ(s,a) / Σ_a' exp θ(s,a')`, with per-row max subtraction.
pub fn softmax_policy(params: &PolicyParams) -> Result<PolicyMatrix> {
    let theta = &params.theta;
    if !theta.is_finite() {
        return Err(Error::Numeric("non-finite policy logits".into()));
    }
    let mut pi = theta.clone();
    for s in 0..pi.num_states() {
        let row = pi.row_mut(s);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            total += *x;
        }
        for x in row.iter_mut() {
            *x /= total;
        }
    }
    Ok(PolicyMatrix { pi })
}

fn check_policy(mdp: &TabularMdp, pi: &PolicyMatrix) -> Result<()> {
    mdp.check_shape(pi.table(), "policy")
}

/// State-to-state kernel `P^π(s'|s) = Σ_a π(a|s) P(s'|s,a)`, row-major `S x S`.
pub fn policy_kernel(mdp: &TabularMdp, pi: &PolicyMatrix) -> Result<Vec<f64>> {
    check_policy(mdp, pi)?;
    let n = mdp.num_states();
    let mut kernel = vec![0.0; n * n];
    for s in 0..n {
        let out = &mut kernel[s * n..(s + 1) * n];
        for a in 0..mdp.num_actions() {
            let p = pi.prob(s, a);
            if p == 0.0 {
                continue;
            }
            for (k, &t) in out.iter_mut().zip(mdp.transition_row(s, a)) {
                *k += p * t;
            }
        }
    }
    Ok(kernel)
}

/// `R^π(s) = Σ_a π(a|s) R(s,a)`.
pub fn expected_reward(mdp: &TabularMdp, pi: &PolicyMatrix) -> Result<Vec<f64>> {
    check_policy(mdp, pi)?;
    Ok((0..mdp.num_states())
        .map(|s| pi.row(s).iter().zip(mdp.reward().row(s)).map(|(p, r)| p * r).sum())
        .collect())
}

pub(crate) fn check_table(mdp: &TabularMdp, table: &SaTable, what: &str) -> Result<()> {
    mdp.check_shape(table, what)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_mdp_experiment_shape() {
        let mdp = random_mdp(10, 5, 0.9, 0).unwrap();
        assert_eq!((mdp.num_states(), mdp.num_actions()), (10, 5));
        assert_eq!(mdp.gamma(), 0.9);
        assert!(mdp.mu().iter().all(|&m| (m - 0.1).abs() < 1e-15));
        assert!(mdp.reward().as_slice().iter().all(|&r| (0.0..=1.0).contains(&r)));
    }

    #[test]
    fn single_state_single_action_is_self_loop() {
        let mdp = random_mdp(1, 1, 0.5, 7).unwrap();
        assert_eq!(mdp.transition_row(0, 0), &[1.0]);
    }

    #[test]
    fn random_mdp_is_seed_deterministic() {
        let a = random_mdp(4, 3, 0.9, 11).unwrap();
        let b = random_mdp(4, 3, 0.9, 11).unwrap();
        let c = random_mdp(4, 3, 0.9, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.reward(), c.reward());
    }

    #[test]
    fn random_mdp_rejects_bad_parameters() {
        assert!(matches!(random_mdp(0, 2, 0.9, 0), Err(Error::Parameter(_))));
        assert!(matches!(random_mdp(2, 0, 0.9, 0), Err(Error::Parameter(_))));
        assert!(matches!(random_mdp(2, 2, 1.0, 0), Err(Error::Parameter(_))));
        assert!(matches!(random_mdp(2, 2, -0.1, 0), Err(Error::Parameter(_))));
    }

    #[test]
    fn symmetric_rewards_stay_in_range() {
        let mdp = random_mdp_with(6, 4, 0.9, 3, RewardRange::Symmetric).unwrap();
        assert!(mdp.reward().as_slice().iter().all(|&r| (-1.0..=1.0).contains(&r)));
        assert!(mdp.reward().as_slice().iter().any(|&r| r < 0.0));
    }

    #[test]
    fn new_rejects_invalid_inputs() {
        let r = SaTable::zeros(1, 1);
        assert!(TabularMdp::new(1, 1, vec![0.9], r.clone(), 0.5, vec![1.0]).is_err());
        assert!(TabularMdp::new(1, 1, vec![1.0], SaTable::filled(1, 1, 2.0), 0.5, vec![1.0]).is_err());
        assert!(TabularMdp::new(2, 1, vec![1.0, 0.0, 0.0, 1.0], SaTable::zeros(2, 1), 0.5, vec![1.0, 0.0]).is_err());
        assert!(TabularMdp::new(1, 1, vec![1.0], r, 0.5, vec![1.0]).is_ok());
    }

    #[test]
    fn softmax_uniform_for_zero_logits() {
        let pi = softmax_policy(&PolicyParams::zeros(3, 4)).unwrap();
        assert!(pi.table().as_slice().iter().all(|&p| p == 0.25));
    }

    #[test]
    fn softmax_closed_form_row() {
        let theta = SaTable::from_vec(1, 2, vec![2f64.ln(), 0.0]).unwrap();
        let pi = softmax_policy(&PolicyParams::new(theta)).unwrap();
        assert!((pi.prob(0, 0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((pi.prob(0, 1) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_large_logits_do_not_overflow() {
        let theta = SaTable::from_vec(1, 2, vec![1000.0, 0.0]).unwrap();
        let pi = softmax_policy(&PolicyParams::new(theta)).unwrap();
        assert!((pi.prob(0, 0) - 1.0).abs() < 1e-12);
        assert!(pi.prob(0, 1).abs() < 1e-12);
    }

    #[test]
    fn softmax_rejects_non_finite() {
        let theta = SaTable::from_vec(1, 2, vec![f64::NAN, 0.0]).unwrap();
        assert!(matches!(softmax_policy(&PolicyParams::new(theta)), Err(Error::Numeric(_))));
    }

    #[test]
    fn deterministic_policy_gives_zero_one_kernel() {
        // s0 -a0-> s1, s1 -a0-> s0, a1 stays put.
        let idx = |s: usize, a: usize, next: usize| (s * 2 + a) * 2 + next;
        let mut p = vec![0.0; 2 * 2 * 2];
        p[idx(0, 0, 1)] = 1.0;
        p[idx(0, 1, 0)] = 1.0;
        p[idx(1, 0, 0)] = 1.0;
        p[idx(1, 1, 1)] = 1.0;
        let mdp = TabularMdp::new(2, 2, p, SaTable::zeros(2, 2), 0.9, vec![0.5, 0.5]).unwrap();
        let pi = PolicyMatrix::deterministic(&[0, 0], 2).unwrap();
        assert_eq!(policy_kernel(&mdp, &pi).unwrap(), vec![0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn uniform_policy_kernel_is_action_average() {
        let mdp = random_mdp(4, 3, 0.9, 5).unwrap();
        let kernel = policy_kernel(&mdp, &PolicyMatrix::uniform(4, 3)).unwrap();
        for s in 0..4 {
            for t in 0..4 {
                let avg = (0..3).map(|a| mdp.transition_row(s, a)[t]).sum::<f64>() / 3.0;
                assert!((kernel[s * 4 + t] - avg).abs() < 1e-15);
            }
            let total: f64 = kernel[s * 4..(s + 1) * 4].iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn kernel_rejects_shape_mismatch() {
        let mdp = random_mdp(4, 3, 0.9, 5).unwrap();
        assert!(matches!(
            policy_kernel(&mdp, &PolicyMatrix::uniform(4, 2)),
            Err(Error::Parameter(_))
        ));
        assert!(expected_reward(&mdp, &PolicyMatrix::uniform(3, 3)).is_err());
    }

    #[test]
    fn expected_reward_cases() {
        let mdp = random_mdp(3, 2, 0.9, 1).unwrap();
        let constant = mdp.with_constant_reward(0.3).unwrap();
        let pi = softmax_policy(&PolicyParams::new(SaTable::from_fn(3, 2, |s, a| (s + 2 * a) as f64))).unwrap();
        assert!(expected_reward(&constant, &pi).unwrap().iter().all(|&r| (r - 0.3).abs() < 1e-15));

        let one_hot = PolicyMatrix::deterministic(&[1, 0, 1], 2).unwrap();
        let r = expected_reward(&mdp, &one_hot).unwrap();
        assert_eq!(r, vec![mdp.reward()[(0, 1)], mdp.reward()[(1, 0)], mdp.reward()[(2, 1)]]);

        let r = expected_reward(&mdp, &pi).unwrap();
        for s in 0..3 {
            let brute = pi.prob(s, 0) * mdp.reward()[(s, 0)] + pi.prob(s, 1) * mdp.reward()[(s, 1)];
            assert!((r[s] - brute).abs() < 1e-15);
        }
    }

    #[test]
    fn text_format_round_trips_and_is_stable() {
        let mdp = random_mdp(3, 2, 0.9, 4).unwrap();
        let text = mdp.to_text();
        let first = text.lines().next().unwrap();
        assert!(first.starts_with("3 2 0.9"));
        assert_eq!(text.lines().count(), 1 + 1 + 3 + 6);
        let back = TabularMdp::from_text(&text).unwrap();
        assert_eq!(back, mdp);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn from_text_reports_truncation() {
        let text = random_mdp(2, 2, 0.5, 0).unwrap().to_text();
        let cut: String = text.lines().take(4).collect::<Vec<_>>().join("\n");
        assert!(matches!(TabularMdp::from_text(&cut), Err(Error::Parse(_))));
    }
}
