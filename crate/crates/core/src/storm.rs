//! Single-timescale actor-critic with STORM momentum on the critic and a
//! sliding replay window for critic samples.
//!
//! One iteration `k`:
//! 1. actor: draw `s_k ~ d^{π_k}`, `a_k ~ π_k(·|s_k)`, `s'_k ~ P(·|s_k,a_k)` and
//!    move the single logit `θ(s_k,a_k)` by `η_k·A_k(s_k,a_k)`;
//! 2. push the transition into the window `B_k`;
//! 3. draw `(s,a,s')` uniformly from `B_k`;
//! 4. `h_k = u·1_{(s,a)} + (1−ν_{k−1})(h_{k−1} − û·1_{(s,a)})`, with `u` the
//!    bootstrap error under `(Q_k, π_k)` and `û` under `(Q_{k−1}, π_{k−1})`;
//! 5. `Q_{k+1} = Q_k + β_k·h_k`.

use crate::buffer::ReplayBuffer;
use crate::diagnostics::{CheckpointView, DiagnosticsRecord, Recorder};
use crate::error::{param, Error, Result};
use crate::mdp::{softmax_policy, PolicyMatrix, PolicyParams, TabularMdp};
use crate::oracles::dot;
use crate::sampling::{sample_action, sample_next_state, sample_occupancy_state, RngStream, Transition};
use crate::table::{MomentumTable, QTable, SaTable};

pub(crate) const ACTOR_STREAM: u64 = 1;
pub(crate) const CRITIC_STREAM: u64 = 2;

/// `η_k = η·(1+k)^{-1/2}`, `β_k = β·(1+k)^{-1/2}`, `ν_k = (1 + r·k)^{-1}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSchedules {
    pub eta_scale: f64,
    pub beta_scale: f64,
    pub nu_rate: f64,
}

impl Default for StepSchedules {
    fn default() -> Self {
        Self {
            eta_scale: 1.0,
            beta_scale: 1.0,
            nu_rate: 0.001,
        }
    }
}

impl StepSchedules {
    pub fn new(eta_scale: f64, beta_scale: f64, nu_rate: f64) -> Result<Self> {
        for (name, v) in [("eta_scale", eta_scale), ("beta_scale", beta_scale), ("nu_rate", nu_rate)] {
            if !(v > 0.0 && v.is_finite()) {
                return param(format!("{name} must be positive, got {v}"));
            }
        }
        Ok(Self {
            eta_scale,
            beta_scale,
            nu_rate,
        })
    }

    #[inline]
    pub fn eta(&self, k: usize) -> f64 {
        self.eta_scale / (1.0 + k as f64).sqrt()
    }

    #[inline]
    pub fn beta(&self, k: usize) -> f64 {
        self.beta_scale / (1.0 + k as f64).sqrt()
    }

    #[inline]
    pub fn nu(&self, k: usize) -> f64 {
        1.0 / (1.0 + self.nu_rate * k as f64)
    }

    /// `c_η = β_k / η_k`, constant across `k`.
    pub fn critic_actor_ratio(&self) -> f64 {
        self.beta_scale / self.eta_scale
    }
}

/// Previous-iterate parameters `(Q_{k−1}, θ_{k−1})` needed for `û`.
#[derive(Debug, Clone, PartialEq)]
pub struct StormSnapshot {
    pub q_prev: QTable,
    pub theta_prev: PolicyParams,
    pi_prev: PolicyMatrix,
}

impl StormSnapshot {
    pub fn new(q_prev: QTable, theta_prev: PolicyParams) -> Result<Self> {
        let pi_prev = softmax_policy(&theta_prev)?;
        Ok(Self {
            q_prev,
            theta_prev,
            pi_prev,
        })
    }

    pub fn policy(&self) -> &PolicyMatrix {
        &self.pi_prev
    }
}

/// Critic advantage estimate `Q(s,a) − Σ_a' π(a'|s) Q(s,a')`.
pub fn critic_advantage(q: &QTable, pi: &PolicyMatrix, s: usize, a: usize) -> f64 {
    q[(s, a)] - dot(pi.row(s), q.row(s))
}

/// Sampled Bellman error `R(s,a) + γ Σ_a' π(a'|s') Q(s',a') − Q(s,a)`.
pub fn bootstrap_error(mdp: &TabularMdp, q: &QTable, pi: &PolicyMatrix, t: Transition) -> f64 {
    let next = dot(pi.row(t.s_next), q.row(t.s_next));
    mdp.reward()[(t.s, t.a)] + mdp.gamma() * next - q[(t.s, t.a)]
}

/// Outcome of one actor update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActorStep {
    pub transition: Transition,
    /// `A_k(s_k, a_k)` from the critic.
    pub advantage: f64,
    /// `η_k·|A_k(s_k,a_k)| = ‖θ_{k+1} − θ_k‖₁`.
    pub movement: f64,
    pub truncated_chain: bool,
}

/// Samples `(s_k, a_k, s'_k)` under `π_k` and updates the single logit
/// `θ(s_k,a_k) += η_k·A_k(s_k,a_k)`. `pi` must be `softmax(theta)`.
pub fn actor_step(
    mdp: &TabularMdp,
    theta: &mut PolicyParams,
    q: &QTable,
    pi: &PolicyMatrix,
    eta: f64,
    rng: &mut RngStream,
) -> ActorStep {
    let draw = sample_occupancy_state(mdp, pi, rng);
    let s = draw.state;
    let a = sample_action(pi, s, rng);
    let s_next = sample_next_state(mdp, s, a, rng);
    let advantage = critic_advantage(q, pi, s, a);
    theta.theta[(s, a)] += eta * advantage;
    ActorStep {
        transition: Transition::new(s, a, s_next),
        advantage,
        movement: eta * advantage.abs(),
        truncated_chain: draw.truncated,
    }
}

/// STORM momentum update at the buffer sample `t_buf`.
///
/// Returns `u·1 + (1−ν)(h_prev − û·1)` where `1` is the indicator of
/// `(t_buf.s, t_buf.a)`.
#[allow(clippy::too_many_arguments)]
pub fn storm_step(
    mdp: &TabularMdp,
    h_prev: &MomentumTable,
    q: &QTable,
    pi: &PolicyMatrix,
    snapshot: &StormSnapshot,
    nu_prev: f64,
    t_buf: Transition,
) -> MomentumTable {
    let u = bootstrap_error(mdp, q, pi, t_buf);
    let u_hat = bootstrap_error(mdp, &snapshot.q_prev, &snapshot.pi_prev, t_buf);
    let keep = 1.0 - nu_prev;
    let mut h = h_prev.clone();
    for x in h.as_mut_slice() {
        *x *= keep;
    }
    h[(t_buf.s, t_buf.a)] = u + keep * (h_prev[(t_buf.s, t_buf.a)] - u_hat);
    h
}

/// `Q + β·h`.
pub fn critic_step(q: &QTable, h: &MomentumTable, beta: f64) -> QTable {
    let mut out = q.clone();
    out.add_scaled(beta, h);
    out
}

/// Full state of one STORM actor-critic run.
#[derive(Debug, Clone)]
pub struct TrainerState {
    /// Completed iterations.
    pub k: usize,
    pub theta: PolicyParams,
    pub q: QTable,
    /// Most recent momentum `h_{k−1}` (zero before the first iteration).
    pub h: MomentumTable,
    pub snapshot: StormSnapshot,
    pub buffer: ReplayBuffer,
    pub rng_actor: RngStream,
    pub rng_critic: RngStream,
    pub last_actor: Option<ActorStep>,
    pub truncated_chains: usize,
}

impl TrainerState {
    /// `θ₀ = 0`, `Q₀ = 0`, `h₀ = 0`, snapshot `(Q₀, θ₀)`.
    pub fn new(mdp: &TabularMdp, buffer_fraction: f64, seed: u64) -> Result<Self> {
        let (ns, na) = (mdp.num_states(), mdp.num_actions());
        let theta = PolicyParams::zeros(ns, na);
        let q = SaTable::zeros(ns, na);
        Ok(Self {
            k: 0,
            snapshot: StormSnapshot::new(q.clone(), theta.clone())?,
            theta,
            q,
            h: SaTable::zeros(ns, na),
            buffer: ReplayBuffer::new(ns, na, buffer_fraction)?,
            rng_actor: RngStream::new(seed, ACTOR_STREAM),
            rng_critic: RngStream::new(seed, CRITIC_STREAM),
            last_actor: None,
            truncated_chains: 0,
        })
    }

    /// Runs iteration `k` and advances to `k + 1`.
    pub fn step(&mut self, mdp: &TabularMdp, schedules: &StepSchedules) -> Result<()> {
        let k = self.k;
        let pi = softmax_policy(&self.theta)?;
        let theta_k = self.theta.clone();
        let actor = actor_step(mdp, &mut self.theta, &self.q, &pi, schedules.eta(k), &mut self.rng_actor);
        self.truncated_chains += usize::from(actor.truncated_chain);
        self.last_actor = Some(actor);
        self.buffer.push(actor.transition);
        let t_buf = self.buffer.sample_uniform(&mut self.rng_critic)?;
        let nu_prev = schedules.nu(k.saturating_sub(1));
        self.h = storm_step(mdp, &self.h, &self.q, &pi, &self.snapshot, nu_prev, t_buf);
        let q_next = critic_step(&self.q, &self.h, schedules.beta(k));
        self.snapshot = StormSnapshot {
            q_prev: std::mem::replace(&mut self.q, q_next),
            theta_prev: theta_k,
            pi_prev: pi,
        };
        self.k += 1;
        check_finite(k, &self.theta.theta, &self.q, Some(&self.h))
    }

    pub fn view(&self, schedules: &StepSchedules) -> CheckpointView<'_> {
        CheckpointView {
            k: self.k,
            theta: &self.theta,
            q: &self.q,
            momentum: Some(&self.h),
            buffer: Some(&self.buffer),
            eta_k: schedules.eta(self.k),
            last_movement: self.last_actor.map(|a| a.movement),
        }
    }
}

pub(crate) fn check_finite(iteration: usize, theta: &SaTable, q: &QTable, h: Option<&MomentumTable>) -> Result<()> {
    if !theta.is_finite() {
        return Err(Error::Divergence { iteration, what: "theta" });
    }
    if !q.is_finite() {
        return Err(Error::Divergence { iteration, what: "Q" });
    }
    if h.is_some_and(|h| !h.is_finite()) {
        return Err(Error::Divergence { iteration, what: "h" });
    }
    Ok(())
}

/// Checkpoints kept so far plus the iteration at which the run diverged, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub records: Vec<DiagnosticsRecord>,
    pub diverged_at: Option<usize>,
}

impl RunLog {
    pub fn into_result(self) -> Result<Vec<DiagnosticsRecord>> {
        match self.diverged_at {
            Some(iteration) => Err(Error::Divergence {
                iteration,
                what: "trainer state",
            }),
            None => Ok(self.records),
        }
    }
}

pub(crate) fn validate_run(iterations: usize, log_every: usize) -> Result<()> {
    if iterations == 0 {
        return param("iterations must be at least 1");
    }
    if log_every == 0 {
        return param("log_every must be at least 1");
    }
    Ok(())
}

/// Runs the STORM actor-critic, keeping checkpoints up to a divergence.
pub fn run_storm(
    mdp: &TabularMdp,
    schedules: &StepSchedules,
    buffer_fraction: f64,
    iterations: usize,
    seed: u64,
    log_every: usize,
) -> Result<RunLog> {
    validate_run(iterations, log_every)?;
    let mut state = TrainerState::new(mdp, buffer_fraction, seed)?;
    let mut recorder = Recorder::new(mdp, log_every)?;
    recorder.observe(mdp, &state.view(schedules))?;
    while state.k < iterations {
        match state.step(mdp, schedules) {
            Ok(()) => {}
            Err(Error::Divergence { iteration, .. }) => {
                return Ok(RunLog {
                    records: recorder.into_records(),
                    diverged_at: Some(iteration),
                })
            }
            Err(e) => return Err(e),
        }
        if recorder.due(state.k, iterations) {
            recorder.observe(mdp, &state.view(schedules))?;
        }
    }
    Ok(RunLog {
        records: recorder.into_records(),
        diverged_at: None,
    })
}

/// Runs the STORM actor-critic; divergence is an error.
pub fn train(
    mdp: &TabularMdp,
    schedules: &StepSchedules,
    buffer_fraction: f64,
    iterations: usize,
    seed: u64,
    log_every: usize,
) -> Result<Vec<DiagnosticsRecord>> {
    run_storm(mdp, schedules, buffer_fraction, iterations, seed, log_every)?.into_result()
}
