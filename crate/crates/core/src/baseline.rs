//! Momentum-free single-timescale actor-critic, the comparison baseline.
//!
//! Same actor as the STORM trainer; the critic moves only the visited
//! coordinate by `β_k` times the expected-next-value TD error, with
//! `η_k = η·(1+k)^{-2/3}` and `β_k = β·(1+k)^{-2/3}`.

use crate::diagnostics::{CheckpointView, DiagnosticsRecord, Recorder};
use crate::error::{param, Error, Result};
use crate::mdp::{softmax_policy, PolicyParams, TabularMdp};
use crate::sampling::RngStream;
use crate::storm::{actor_step, bootstrap_error, check_finite, validate_run, ActorStep, RunLog, ACTOR_STREAM};
use crate::table::{QTable, SaTable};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineSchedules {
    pub eta_scale: f64,
    pub beta_scale: f64,
}

impl Default for BaselineSchedules {
    fn default() -> Self {
        Self {
            eta_scale: 1.0,
            beta_scale: 1.0,
        }
    }
}

impl BaselineSchedules {
    pub fn new(eta_scale: f64, beta_scale: f64) -> Result<Self> {
        if !(eta_scale > 0.0 && beta_scale > 0.0 && eta_scale.is_finite() && beta_scale.is_finite()) {
            return param("baseline step scales must be positive");
        }
        Ok(Self { eta_scale, beta_scale })
    }

    pub fn eta(&self, k: usize) -> f64 {
        self.eta_scale * (1.0 + k as f64).powf(-2.0 / 3.0)
    }

    pub fn beta(&self, k: usize) -> f64 {
        self.beta_scale * (1.0 + k as f64).powf(-2.0 / 3.0)
    }
}

#[derive(Debug, Clone)]
pub struct BaselineState {
    pub k: usize,
    pub theta: PolicyParams,
    pub q: QTable,
    pub rng_actor: RngStream,
    pub last_actor: Option<ActorStep>,
}

impl BaselineState {
    pub fn new(mdp: &TabularMdp, seed: u64) -> Self {
        let (ns, na) = (mdp.num_states(), mdp.num_actions());
        Self {
            k: 0,
            theta: PolicyParams::zeros(ns, na),
            q: SaTable::zeros(ns, na),
            rng_actor: RngStream::new(seed, ACTOR_STREAM),
            last_actor: None,
        }
    }

    pub fn step(&mut self, mdp: &TabularMdp, schedules: &BaselineSchedules) -> Result<()> {
        let k = self.k;
        let pi = softmax_policy(&self.theta)?;
        let actor = actor_step(mdp, &mut self.theta, &self.q, &pi, schedules.eta(k), &mut self.rng_actor);
        self.last_actor = Some(actor);
        let t = actor.transition;
        let td = bootstrap_error(mdp, &self.q, &pi, t);
        self.q[(t.s, t.a)] += schedules.beta(k) * td;
        self.k += 1;
        check_finite(k, &self.theta.theta, &self.q, None)
    }

    pub fn view(&self, schedules: &BaselineSchedules) -> CheckpointView<'_> {
        CheckpointView {
            k: self.k,
            theta: &self.theta,
            q: &self.q,
            momentum: None,
            buffer: None,
            eta_k: schedules.eta(self.k),
            last_movement: self.last_actor.map(|a| a.movement),
        }
    }
}

pub fn run_baseline(
    mdp: &TabularMdp,
    schedules: &BaselineSchedules,
    iterations: usize,
    seed: u64,
    log_every: usize,
) -> Result<RunLog> {
    validate_run(iterations, log_every)?;
    let mut state = BaselineState::new(mdp, seed);
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

/// Runs the baseline; divergence is an error.
pub fn train_baseline(
    mdp: &TabularMdp,
    eta_scale: f64,
    beta_scale: f64,
    iterations: usize,
    seed: u64,
    log_every: usize,
) -> Result<Vec<DiagnosticsRecord>> {
    let schedules = BaselineSchedules::new(eta_scale, beta_scale)?;
    run_baseline(mdp, &schedules, iterations, seed, log_every)?.into_result()
}
