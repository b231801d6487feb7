//! Exact dynamic-programming quantities used as ground truth.
//!
//! Every policy-evaluation quantity is obtained from a dense LU solve of
//! `(I − γP^π)`, so the oracles carry no iteration tolerance.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mdp::{check_table, expected_reward, policy_kernel, softmax_policy, PolicyMatrix, PolicyParams, TabularMdp};
use crate::table::{GradientTable, QTable, SaTable};

const VALUE_ITERATION_TOL: f64 = 1e-12;
const VALUE_ITERATION_MAX_SWEEPS: usize = 1_000_000;

fn resolvent(mdp: &TabularMdp, pi: &PolicyMatrix) -> Result<DMatrix<f64>> {
    let n = mdp.num_states();
    let kernel = policy_kernel(mdp, pi)?;
    let gamma = mdp.gamma();
    Ok(DMatrix::from_fn(n, n, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        id - gamma * kernel[i * n + j]
    }))
}

fn solve(matrix: DMatrix<f64>, rhs: &[f64]) -> Result<Vec<f64>> {
    let rhs = DVector::from_column_slice(rhs);
    let x = matrix
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numeric("singular policy-evaluation system".into()))?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite solution of policy-evaluation system".into()));
    }
    Ok(x.iter().copied().collect())
}

/// `v^π = (I − γP^π)^{-1} R^π`.
pub fn value_function(mdp: &TabularMdp, pi: &PolicyMatrix) -> Result<Vec<f64>> {
    let r_pi = expected_reward(mdp, pi)?;
    solve(resolvent(mdp, pi)?, &r_pi)
}

fn q_from_values(mdp: &TabularMdp, v: &[f64]) -> QTable {
    let gamma = mdp.gamma();
    SaTable::from_fn(mdp.num_states(), mdp.num_actions(), |s, a| {
        let next: f64 = mdp.transition_row(s, a).iter().zip(v).map(|(p, x)| p * x).sum();
        mdp.reward()[(s, a)] + gamma * next
    })
}

/// `Q^π(s,a) = R(s,a) + γ Σ_s' P(s'|s,a) v^π(s')`.
pub fn q_function(mdp: &TabularMdp, pi: &PolicyMatrix) -> Result<QTable> {
    let v = value_function(mdp, pi)?;
    Ok(q_from_values(mdp, &v))
}

/// `A^π(s,a) = Q^π(s,a) − v^π(s)`.
pub fn advantage(mdp: &TabularMdp, pi: &PolicyMatrix) -> Result<SaTable> {
    let v = value_function(mdp, pi)?;
    let q = q_from_values(mdp, &v);
    Ok(SaTable::from_fn(mdp.num_states(), mdp.num_actions(), |s, a| q[(s, a)] - v[s]))
}

/// Discounted occupancy `d^π = (1−γ) μᵀ (I − γP^π)^{-1}`.
pub fn occupancy(mdp: &TabularMdp, pi: &PolicyMatrix) -> Result<Vec<f64>> {
    check_table(mdp, pi.table(), "policy")?;
    if mdp.gamma() == 0.0 {
        return Ok(mdp.mu().to_vec());
    }
    let x = solve(resolvent(mdp, pi)?.transpose(), mdp.mu())?;
    let scale = 1.0 - mdp.gamma();
    Ok(x.into_iter().map(|v| scale * v).collect())
}

/// `J^π = μᵀ v^π`.
pub fn policy_return(mdp: &TabularMdp, pi: &PolicyMatrix) -> Result<f64> {
    let v = value_function(mdp, pi)?;
    Ok(dot(mdp.mu(), &v))
}

/// Policy-evaluation bundle for one policy, sharing a single value solve.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub values: Vec<f64>,
    pub q: QTable,
    pub occupancy: Vec<f64>,
    pub ret: f64,
    /// `∂J/∂θ(s,a) = d(s) π(a|s) A(s,a) / (1−γ)`.
    pub gradient: GradientTable,
}

pub fn evaluate(mdp: &TabularMdp, pi: &PolicyMatrix) -> Result<Evaluation> {
    let values = value_function(mdp, pi)?;
    let q = q_from_values(mdp, &values);
    let occupancy = occupancy(mdp, pi)?;
    let ret = dot(mdp.mu(), &values);
    let scale = 1.0 / (1.0 - mdp.gamma());
    let gradient = SaTable::from_fn(mdp.num_states(), mdp.num_actions(), |s, a| {
        scale * occupancy[s] * pi.prob(s, a) * (q[(s, a)] - values[s])
    });
    Ok(Evaluation {
        values,
        q,
        occupancy,
        ret,
        gradient,
    })
}

/// Exact policy gradient of `J^{π_θ}` with respect to the softmax logits.
pub fn exact_gradient(mdp: &TabularMdp, params: &PolicyParams) -> Result<GradientTable> {
    check_table(mdp, &params.theta, "logits")?;
    let pi = softmax_policy(params)?;
    Ok(evaluate(mdp, &pi)?.gradient)
}

/// `(T^π Q)(s,a) = R(s,a) + γ Σ_{s',a'} P(s'|s,a) π(a'|s') Q(s',a')`.
pub fn bellman_operator(mdp: &TabularMdp, pi: &PolicyMatrix, q: &QTable) -> Result<QTable> {
    check_table(mdp, pi.table(), "policy")?;
    check_table(mdp, q, "Q table")?;
    let next = policy_average(pi, q);
    Ok(q_from_values(mdp, &next))
}

/// `Σ_a π(a|s) Q(s,a)` for every state.
pub fn policy_average(pi: &PolicyMatrix, q: &QTable) -> Vec<f64> {
    (0..q.num_states())
        .map(|s| dot(pi.row(s), q.row(s)))
        .collect()
}

/// State-action kernel `P_π((s,a) → (s',a')) = P(s'|s,a) π(a'|s')`, `SA x SA`.
pub fn state_action_kernel(mdp: &TabularMdp, pi: &PolicyMatrix) -> Result<DMatrix<f64>> {
    check_table(mdp, pi.table(), "policy")?;
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    Ok(DMatrix::from_fn(ns * na, ns * na, |row, col| {
        let (s, a) = (row / na, row % na);
        let (t, b) = (col / na, col % na);
        mdp.transition_row(s, a)[t] * pi.prob(t, b)
    }))
}

/// Solution of the control problem.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimalSolution {
    pub j_star: f64,
    pub values: Vec<f64>,
    /// Greedy action per state; ties go to the lowest index.
    pub greedy_actions: Vec<usize>,
    pub sweeps: usize,
}

/// Value iteration to sup-norm residual below `1e-12`.
pub fn optimal_return(mdp: &TabularMdp) -> Result<OptimalSolution> {
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let gamma = mdp.gamma();
    let backup = |v: &[f64], s: usize, a: usize| -> f64 {
        mdp.reward()[(s, a)] + gamma * dot(mdp.transition_row(s, a), v)
    };
    let mut v = vec![0.0; ns];
    let mut next = vec![0.0; ns];
    let mut sweeps = 0;
    loop {
        if sweeps >= VALUE_ITERATION_MAX_SWEEPS {
            return Err(Error::Numeric(format!(
                "value iteration did not converge in {VALUE_ITERATION_MAX_SWEEPS} sweeps"
            )));
        }
        let mut residual: f64 = 0.0;
        for s in 0..ns {
            let best = (0..na).map(|a| backup(&v, s, a)).fold(f64::NEG_INFINITY, f64::max);
            residual = residual.max((best - v[s]).abs());
            next[s] = best;
        }
        std::mem::swap(&mut v, &mut next);
        sweeps += 1;
        if residual < VALUE_ITERATION_TOL {
            break;
        }
    }
    let greedy_actions = (0..ns)
        .map(|s| {
            let mut best = 0;
            let mut best_value = backup(&v, s, 0);
            for a in 1..na {
                let value = backup(&v, s, a);
                if value > best_value {
                    best = a;
                    best_value = value;
                }
            }
            best
        })
        .collect();
    Ok(OptimalSolution {
        j_star: dot(mdp.mu(), &v),
        values: v,
        greedy_actions,
        sweeps,
    })
}

/// Optimal solution together with the occupancy of the greedy optimal policy.
#[derive(Debug, Clone)]
pub struct OptimalReference {
    pub solution: OptimalSolution,
    pub occupancy: Vec<f64>,
}

impl OptimalReference {
    pub fn new(mdp: &TabularMdp) -> Result<Self> {
        let solution = optimal_return(mdp)?;
        let greedy = PolicyMatrix::deterministic(&solution.greedy_actions, mdp.num_actions())?;
        let occupancy = occupancy(mdp, &greedy)?;
        Ok(Self { solution, occupancy })
    }

    pub fn j_star(&self) -> f64 {
        self.solution.j_star
    }
}

/// Both sides of the gradient-domination inequality at one policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DominationCheck {
    /// `‖∇J^{π_θ}‖₂`.
    pub lhs: f64,
    /// `c / (√S · C_PL) · (J* − J^{π_θ})`.
    pub rhs: f64,
    pub holds: bool,
}

/// Gradient domination with per-iterate constants `c = min_s π(a*(s)|s)` and
/// `C_PL = max_s d^{π*}(s) / d^{π}(s)`.
pub fn gradient_domination_check(mdp: &TabularMdp, params: &PolicyParams) -> Result<DominationCheck> {
    let reference = OptimalReference::new(mdp)?;
    let pi = softmax_policy(params)?;
    let eval = evaluate(mdp, &pi)?;
    Ok(domination_from_parts(mdp, &reference, &pi, &eval))
}

pub fn domination_from_parts(
    mdp: &TabularMdp,
    reference: &OptimalReference,
    pi: &PolicyMatrix,
    eval: &Evaluation,
) -> DominationCheck {
    let lhs = eval.gradient.norm_l2();
    let c = reference
        .solution
        .greedy_actions
        .iter()
        .enumerate()
        .map(|(s, &a)| pi.prob(s, a))
        .fold(f64::INFINITY, f64::min);
    let mismatch = reference
        .occupancy
        .iter()
        .zip(&eval.occupancy)
        .map(|(d_star, d)| d_star / d)
        .fold(0.0, f64::max);
    let gap = reference.j_star() - eval.ret;
    let rhs = c / ((mdp.num_states() as f64).sqrt() * mismatch) * gap;
    DominationCheck {
        lhs,
        rhs,
        holds: lhs >= rhs - 1e-10,
    }
}

pub(crate) fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}
