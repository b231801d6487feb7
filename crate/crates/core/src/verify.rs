//! Numerical checks of deterministic identities and inequalities that the
//! convergence analysis relies on, independent of any training run.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::Exp1;

use crate::buffer::{drift_bound_check, BufferDistribution, ReplayBuffer};
use crate::error::{param, Result};
use crate::mdp::{random_mdp, softmax_policy, PolicyMatrix, PolicyParams, TabularMdp};
use crate::oracles::{bellman_operator, q_function, state_action_kernel};
use crate::sampling::{RngStream, Transition};
use crate::table::{QTable, SaTable};

const IDENTITY_TOL: f64 = 1e-9;

fn flat(table: &SaTable) -> DVector<f64> {
    DVector::from_column_slice(table.as_slice())
}

/// `(I − γP_π)(Q^π − Q)` as a flat state-action vector.
fn rewritten_residual(mdp: &TabularMdp, pi: &PolicyMatrix, q: &QTable, gamma: f64) -> Result<DVector<f64>> {
    let kernel = state_action_kernel(mdp, pi)?;
    let gap = flat(&q_function(mdp, pi)?) - flat(q);
    Ok(&gap - gamma * (&kernel * &gap))
}

/// Max abs difference between `R + γP_πQ − Q` and `(I − γP_π)(Q^π − Q)`.
pub fn check_bellman_rewrite(mdp: &TabularMdp, pi: &PolicyMatrix, q: &QTable) -> Result<f64> {
    bellman_rewrite_residual(mdp, pi, q, mdp.gamma())
}

/// As [`check_bellman_rewrite`] but evaluates the right-hand side with
/// `rhs_gamma`; a mismatch must produce a large residual.
pub fn bellman_rewrite_residual(mdp: &TabularMdp, pi: &PolicyMatrix, q: &QTable, rhs_gamma: f64) -> Result<f64> {
    let kernel = state_action_kernel(mdp, pi)?;
    let q_vec = flat(q);
    let lhs = flat(mdp.reward()) + mdp.gamma() * (&kernel * &q_vec) - &q_vec;
    let rhs = rewritten_residual(mdp, pi, q, rhs_gamma)?;
    Ok((lhs - rhs).amax())
}

/// Max abs difference between `b ⊙ (T^πQ − Q)` and `b ⊙ (I − γP_π)(Q^π − Q)`.
pub fn check_vk_identity(mdp: &TabularMdp, pi: &PolicyMatrix, q: &QTable, b: &BufferDistribution) -> Result<f64> {
    if b.shape() != q.shape() {
        return param("buffer distribution shape differs from Q");
    }
    let direct = b.hadamard(&bellman_operator(mdp, pi, q)?.sub(q));
    let rewritten = rewritten_residual(mdp, pi, q, mdp.gamma())?;
    Ok(direct
        .as_slice()
        .iter()
        .zip(b.as_slice().iter().zip(rewritten.iter()))
        .map(|(d, (bi, r))| (d - bi * r).abs())
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InequalityCheck {
    pub holds: bool,
    /// Largest `lhs − rhs` seen; negative when every instance had slack.
    pub worst_excess: f64,
}

/// `‖a⊙b‖₂ ≤ ‖a‖₂‖b‖∞` and `‖a⊙b‖₂ ≤ ‖a‖₁‖b‖₂` on random vector pairs.
pub fn check_hadamard_norm(trials: usize, dim: usize, rng: &mut RngStream) -> InequalityCheck {
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..trials {
        let scale_a = 10f64.powf(rng.gen_range(-3.0..3.0));
        let scale_b = 10f64.powf(rng.gen_range(-3.0..3.0));
        let a: Vec<f64> = (0..dim).map(|_| scale_a * rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..dim).map(|_| scale_b * rng.gen_range(-1.0..1.0)).collect();
        worst = worst.max(hadamard_excess(&a, &b));
    }
    InequalityCheck {
        holds: worst <= 1e-12,
        worst_excess: worst,
    }
}

fn hadamard_excess(a: &[f64], b: &[f64]) -> f64 {
    let prod = a.iter().zip(b).map(|(x, y)| (x * y).powi(2)).sum::<f64>().sqrt();
    let a2 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let a1 = a.iter().map(|x| x.abs()).sum::<f64>();
    let b2 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let binf = b.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    (prod - a2 * binf).max(prod - a1 * b2)
}

/// Point `k` of the comparison: the recursion value and its dominating bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdePoint {
    pub x: f64,
    pub bound: f64,
}

/// Simulates the worst case `x_{k+1} = x_k − ω₁x_k² + ω₂η_k⁴` alongside
/// `η_k² = 1/(1/η₀² + (ω₁−ω₂)k)` for `k = 0..=steps`.
pub fn ode_trajectory(x0: f64, omega1: f64, omega2: f64, eta0_sq: f64, steps: usize) -> Result<Vec<OdePoint>> {
    if !(1.0 > omega1 && omega1 > omega2 && omega2 > 0.0) {
        return param(format!("need 1 > omega1 > omega2 > 0, got {omega1}, {omega2}"));
    }
    if !(eta0_sq >= 0.0 && eta0_sq <= (1.0 / (2.0 * omega1)).min(x0)) {
        return param(format!("need eta0^2 <= min(1/(2 omega1), x0), got {eta0_sq}"));
    }
    let rate = omega1 - omega2;
    let eta_sq = |k: usize| {
        if eta0_sq == 0.0 {
            0.0
        } else {
            1.0 / (1.0 / eta0_sq + rate * k as f64)
        }
    };
    let mut points = Vec::with_capacity(steps + 1);
    let mut x = x0;
    points.push(OdePoint { x, bound: eta0_sq });
    for k in 0..steps {
        let e = eta_sq(k);
        x = x - omega1 * x * x + omega2 * e * e;
        points.push(OdePoint { x, bound: eta_sq(k + 1) });
    }
    Ok(points)
}

/// Checks `x_k ≤ η_k²` along [`ode_trajectory`].
pub fn check_ode_domination(x0: f64, omega1: f64, omega2: f64, eta0_sq: f64, steps: usize) -> Result<InequalityCheck> {
    let worst = ode_trajectory(x0, omega1, omega2, eta0_sq, steps)?
        .iter()
        .map(|p| p.x - p.bound)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(InequalityCheck {
        holds: worst <= 1e-12,
        worst_excess: worst,
    })
}

/// Smallest observed `⟨Q^π−Q, T^πQ−Q⟩_D / ‖Q^π−Q‖²` over random policies,
/// Q tables and unit-trace positive diagonals.
pub fn estimate_exploration_lambda(mdp: &TabularMdp, trials: usize, rng: &mut RngStream) -> Result<f64> {
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let range = 1.0 / (1.0 - mdp.gamma());
    let mut best = f64::INFINITY;
    for _ in 0..trials {
        let theta = SaTable::from_fn(ns, na, |_, _| rng.gen_range(-3.0..=3.0));
        let pi = softmax_policy(&PolicyParams::new(theta))?;
        let q = SaTable::from_fn(ns, na, |_, _| rng.gen_range(-range..=range));
        let weights: Vec<f64> = (0..ns * na).map(|_| rng.sample::<f64, _>(Exp1)).collect();
        let total: f64 = weights.iter().sum();
        let gap = q_function(mdp, &pi)?.sub(&q);
        let norm_sq = gap.norm_l2().powi(2);
        if norm_sq.sqrt() < 1e-8 {
            continue;
        }
        let residual = bellman_operator(mdp, &pi, &q)?.sub(&q);
        let inner: f64 = gap
            .as_slice()
            .iter()
            .zip(residual.as_slice())
            .zip(&weights)
            .map(|((g, r), w)| g * r * w / total)
            .sum();
        best = best.min(inner / norm_sq);
    }
    Ok(best)
}

/// One line of the verification report.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckLine {
    pub name: &'static str,
    pub passed: bool,
    /// Worst residual or excess observed.
    pub worst: f64,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SuiteOptions {
    /// Evaluate the Bellman rewrite with a wrong discount (negative control).
    pub inject_gamma_mismatch: bool,
}

fn random_instance(rng: &mut RngStream) -> Result<(TabularMdp, PolicyMatrix, QTable)> {
    let ns = rng.gen_range(1..=10);
    let na = rng.gen_range(1..=5);
    let gamma = [0.0, 0.5, 0.9][rng.gen_range(0..3)];
    let mdp = random_mdp(ns, na, gamma, rng.gen())?;
    let theta = SaTable::from_fn(ns, na, |_, _| rng.gen_range(-3.0..=3.0));
    let pi = softmax_policy(&PolicyParams::new(theta))?;
    let range = 1.0 / (1.0 - gamma);
    let q = SaTable::from_fn(ns, na, |_, _| rng.gen_range(-range..=range));
    Ok((mdp, pi, q))
}

fn simulated_buffer(mdp: &TabularMdp, rng: &mut RngStream) -> Result<BufferDistribution> {
    let fraction = rng.gen_range(0.05..=1.0);
    let mut buffer = ReplayBuffer::new(mdp.num_states(), mdp.num_actions(), fraction)?;
    let pushes = rng.gen_range(1..=200);
    for _ in 0..pushes {
        let s = rng.gen_range(0..mdp.num_states());
        let a = rng.gen_range(0..mdp.num_actions());
        buffer.push(Transition::new(s, a, 0));
    }
    buffer.distribution()
}

/// `(ω₁, ω₂)` pairs used for the domination check; 20 valid configurations.
pub fn ode_grid() -> Vec<(f64, f64)> {
    let mut grid = Vec::new();
    for omega1 in [0.9, 0.5, 0.2, 0.05, 0.01] {
        for ratio in [1e-9, 0.25, 0.5, 0.9] {
            grid.push((omega1, ratio * omega1));
        }
    }
    grid
}

/// Runs every check and returns one line per check.
pub fn verification_suite(trials: usize, seed: u64, options: SuiteOptions) -> Result<Vec<CheckLine>> {
    if trials == 0 {
        return param("trials must be at least 1");
    }
    let mut lines = Vec::new();

    let mut rng = RngStream::new(seed, 10);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let (mdp, pi, q) = random_instance(&mut rng)?;
        let rhs_gamma = if options.inject_gamma_mismatch {
            (mdp.gamma() + 0.05).min(0.99)
        } else {
            mdp.gamma()
        };
        worst = worst.max(bellman_rewrite_residual(&mdp, &pi, &q, rhs_gamma)?);
    }
    lines.push(CheckLine {
        name: "bellman_rewrite",
        passed: worst < IDENTITY_TOL,
        worst,
    });

    let mut rng = RngStream::new(seed, 11);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let (mdp, pi, q) = random_instance(&mut rng)?;
        let b = simulated_buffer(&mdp, &mut rng)?;
        worst = worst.max(check_vk_identity(&mdp, &pi, &q, &b)?);
    }
    lines.push(CheckLine {
        name: "vk_identity",
        passed: worst < IDENTITY_TOL,
        worst,
    });

    let mut rng = RngStream::new(seed, 12);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let (mdp, pi, _) = random_instance(&mut rng)?;
        let range = 2.0 / (1.0 - mdp.gamma());
        let (ns, na) = (mdp.num_states(), mdp.num_actions());
        let q1 = SaTable::from_fn(ns, na, |_, _| rng.gen_range(-range..=range));
        let q2 = SaTable::from_fn(ns, na, |_, _| rng.gen_range(-range..=range));
        let lhs = bellman_operator(&mdp, &pi, &q1)?.max_abs_diff(&bellman_operator(&mdp, &pi, &q2)?);
        worst = worst.max(lhs - mdp.gamma() * q1.max_abs_diff(&q2));
    }
    lines.push(CheckLine {
        name: "bellman_contraction",
        passed: worst <= 1e-12,
        worst,
    });

    let mut rng = RngStream::new(seed, 13);
    let hadamard = check_hadamard_norm(trials.max(1), 50, &mut rng);
    lines.push(CheckLine {
        name: "hadamard_norm",
        passed: hadamard.holds,
        worst: hadamard.worst_excess,
    });

    let mut passed = true;
    let mut worst = f64::NEG_INFINITY;
    for (omega1, omega2) in ode_grid() {
        let eta0_sq = 1.0 / (2.0 * omega1);
        let check = check_ode_domination(eta0_sq, omega1, omega2, eta0_sq, 100_000)?;
        passed &= check.holds;
        worst = worst.max(check.worst_excess);
    }
    lines.push(CheckLine {
        name: "ode_domination",
        passed,
        worst,
    });

    let mut rng = RngStream::new(seed, 14);
    let mut passed = true;
    let mut worst = f64::NEG_INFINITY;
    for fraction in [0.1, 0.5, 1.0] {
        let mut buffer = ReplayBuffer::new(5, 3, fraction)?;
        buffer.push(Transition::new(rng.gen_range(0..5), rng.gen_range(0..3), 0));
        let mut before = buffer.distribution()?;
        for _ in 1..10_000 {
            buffer.push(Transition::new(rng.gen_range(0..5), rng.gen_range(0..3), 0));
            let after = buffer.distribution()?;
            passed &= drift_bound_check(&before, &after, buffer.len())?;
            worst = worst.max(after.sub(&before).norm_l2() - 2.0 / buffer.len() as f64);
            before = after;
        }
    }
    lines.push(CheckLine {
        name: "buffer_drift",
        passed,
        worst,
    });

    let mut rng = RngStream::new(seed, 15);
    let mdp = random_mdp(10, 5, 0.9, 0)?;
    let lambda = estimate_exploration_lambda(&mdp, trials, &mut rng)?;
    lines.push(CheckLine {
        name: "exploration_lambda_estimate",
        passed: lambda.is_finite(),
        worst: lambda,
    });

    Ok(lines)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rewrite_is_zero_at_fixed_point() {
        let mdp = random_mdp(4, 3, 0.9, 1).unwrap();
        let pi = PolicyMatrix::uniform(4, 3);
        let q = q_function(&mdp, &pi).unwrap();
        assert!(check_bellman_rewrite(&mdp, &pi, &q).unwrap() < 1e-10);
    }

    #[test]
    fn rewrite_zero_discount() {
        let mdp = random_mdp(3, 2, 0.0, 2).unwrap();
        let pi = PolicyMatrix::uniform(3, 2);
        let q = SaTable::from_fn(3, 2, |s, a| (s + a) as f64);
        assert!(check_bellman_rewrite(&mdp, &pi, &q).unwrap() < 1e-12);
    }

    #[test]
    fn rewrite_detects_gamma_mismatch() {
        let mdp = random_mdp(3, 2, 0.5, 2).unwrap();
        let pi = PolicyMatrix::uniform(3, 2);
        let q = SaTable::from_fn(3, 2, |s, a| (s + a) as f64);
        assert!(bellman_rewrite_residual(&mdp, &pi, &q, 0.6).unwrap() > 1e-3);
    }

    #[test]
    fn vk_identity_uniform_and_one_hot() {
        let mdp = random_mdp(4, 2, 0.9, 3).unwrap();
        let pi = softmax_policy(&PolicyParams::new(SaTable::from_fn(4, 2, |s, a| (s * a) as f64 * 0.4))).unwrap();
        let q = SaTable::from_fn(4, 2, |s, a| (s as f64 - a as f64) * 1.7);
        let uniform = SaTable::filled(4, 2, 1.0 / 8.0);
        let vk = check_vk_identity(&mdp, &pi, &q, &uniform).unwrap();
        let full = check_bellman_rewrite(&mdp, &pi, &q).unwrap();
        assert!(vk <= full / 8.0 + 1e-12);
        let mut one_hot = SaTable::zeros(4, 2);
        one_hot[(2, 1)] = 1.0;
        assert!(check_vk_identity(&mdp, &pi, &q, &one_hot).unwrap() < 1e-9);
        assert!(check_vk_identity(&mdp, &pi, &q, &SaTable::zeros(2, 2)).is_err());
    }

    #[test]
    fn hadamard_examples() {
        let b = vec![1.0; 6];
        let a = vec![0.3, -1.2, 4.0, 0.0, 2.0, -0.7];
        let excess = hadamard_excess(&a, &b);
        // First bound holds with equality.
        assert!(excess.abs() < 1e-12 || excess < 0.0);
        let prod = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let a2 = prod;
        assert!((prod - a2 * 1.0).abs() < 1e-15);

        let e1 = [1.0, 0.0, 0.0];
        let b = [-3.0, 5.0, 1.0];
        assert!(hadamard_excess(&e1, &b) <= 0.0);
        let mut rng = RngStream::new(0, 0);
        assert!(check_hadamard_norm(1000, 50, &mut rng).holds);
    }

    #[test]
    fn ode_domination_cases() {
        assert!(check_ode_domination(0.25, 0.5, 0.1, 0.25, 100_000).unwrap().holds);
        assert!(check_ode_domination(0.4, 0.3, 1e-9, 0.4, 10_000).unwrap().holds);
        let zero = check_ode_domination(0.0, 0.5, 0.1, 0.0, 1000).unwrap();
        assert!(zero.holds && zero.worst_excess == 0.0);
    }

    #[test]
    fn ode_domination_preconditions() {
        assert!(check_ode_domination(0.25, 0.1, 0.5, 0.25, 10).is_err());
        assert!(check_ode_domination(0.25, 1.0, 0.5, 0.25, 10).is_err());
        assert!(check_ode_domination(0.25, 0.5, 0.0, 0.25, 10).is_err());
        // η₀² above 1/(2ω₁).
        assert!(check_ode_domination(2.0, 0.5, 0.1, 2.0, 10).is_err());
        // η₀² above x₀.
        assert!(check_ode_domination(0.1, 0.5, 0.1, 0.2, 10).is_err());
    }

    #[test]
    fn ode_grid_is_valid() {
        let grid = ode_grid();
        assert!(grid.len() >= 20);
        assert!(grid.iter().all(|&(w1, w2)| 1.0 > w1 && w1 > w2 && w2 > 0.0));
    }

    #[test]
    fn lambda_scalar_case() {
        let mdp = random_mdp(1, 1, 0.6, 4).unwrap();
        let mut rng = RngStream::new(0, 0);
        let lambda = estimate_exploration_lambda(&mdp, 50, &mut rng).unwrap();
        assert!((lambda - 0.4).abs() < 1e-10);
    }

    #[test]
    fn suite_passes_and_negative_control_fails() {
        let lines = verification_suite(5, 1, SuiteOptions::default()).unwrap();
        assert!(lines.iter().all(|l| l.passed), "{lines:?}");
        let lines = verification_suite(5, 1, SuiteOptions { inject_gamma_mismatch: true }).unwrap();
        assert!(!lines.iter().find(|l| l.name == "bellman_rewrite").unwrap().passed);
    }
}
