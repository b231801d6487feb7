//! Per-checkpoint convergence quantities computed with exact oracles.
//!
//! At checkpoint `k` (state after `k` iterations):
//! - `a = J* − J^{π_k}` (sub-optimality),
//! - `z = ‖Q_k − Q^{π_k}‖₂` (critic tracking error),
//! - `y = ‖∇J^{π_k}‖₂`,
//! - `w = ‖h − V‖₂` with `V = b ⊙ (T^{π_k}Q_k − Q_k)` over the current buffer,
//! - `x = η_k·a + η_k·z² + w²` (Lyapunov potential).
//!
//! Cross-seed averages of these estimate the expectations in the rate analysis.

use std::str::FromStr;

use crate::buffer::ReplayBuffer;
use crate::error::{param, Error, Result};
use crate::mdp::{softmax_policy, PolicyParams, TabularMdp};
use crate::oracles::{bellman_operator, domination_from_parts, evaluate, OptimalReference};
use crate::table::{MomentumTable, QTable, SaTable};

const BOUND_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticsRecord {
    pub k: usize,
    pub j: f64,
    pub a: f64,
    pub z: f64,
    pub y: f64,
    pub w: f64,
    pub x: f64,
    pub gdl_ok: bool,
    /// Occupancy Lipschitz check against the previous checkpoint; only
    /// evaluated when checkpoints are consecutive iterations.
    pub lip_ok: bool,
    pub bounds_ok: bool,
}

/// Numeric record fields that can be aggregated or fitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Field {
    J,
    A,
    Z,
    Y,
    W,
    X,
}

impl Field {
    pub const ALL: [Field; 6] = [Field::J, Field::A, Field::Z, Field::Y, Field::W, Field::X];

    pub fn name(self) -> &'static str {
        match self {
            Field::J => "J",
            Field::A => "a",
            Field::Z => "z",
            Field::Y => "y",
            Field::W => "w",
            Field::X => "x",
        }
    }
}

impl FromStr for Field {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Field::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown field {s:?} (expected one of J,a,z,y,w,x)")))
    }
}

impl DiagnosticsRecord {
    pub fn get(&self, field: Field) -> f64 {
        match field {
            Field::J => self.j,
            Field::A => self.a,
            Field::Z => self.z,
            Field::Y => self.y,
            Field::W => self.w,
            Field::X => self.x,
        }
    }
}

/// Borrowed trainer state at one checkpoint.
#[derive(Debug, Clone, Copy)]
pub struct CheckpointView<'a> {
    pub k: usize,
    pub theta: &'a PolicyParams,
    pub q: &'a QTable,
    /// `None` for trainers without momentum; `w` is then reported as 0.
    pub momentum: Option<&'a MomentumTable>,
    pub buffer: Option<&'a ReplayBuffer>,
    pub eta_k: f64,
    /// `‖θ_k − θ_{k−1}‖₁` of the latest actor step.
    pub last_movement: Option<f64>,
}

/// Computes one record. `previous_occupancy` enables the Lipschitz check.
pub fn snapshot(
    mdp: &TabularMdp,
    reference: &OptimalReference,
    view: &CheckpointView<'_>,
    previous_occupancy: Option<&[f64]>,
) -> Result<(DiagnosticsRecord, Vec<f64>)> {
    let pi = softmax_policy(view.theta)?;
    let eval = evaluate(mdp, &pi)?;
    let a = reference.j_star() - eval.ret;
    let z = view.q.sub(&eval.q).norm_l2();
    let y = eval.gradient.norm_l2();
    let w = match view.momentum {
        Some(h) => {
            let v = match view.buffer.filter(|b| !b.is_empty()) {
                Some(buffer) => {
                    let residual = bellman_operator(mdp, &pi, view.q)?.sub(view.q);
                    buffer.distribution()?.hadamard(&residual)
                }
                None => SaTable::zeros(mdp.num_states(), mdp.num_actions()),
            };
            h.sub(&v).norm_l2()
        }
        None => 0.0,
    };
    let x = view.eta_k * a + view.eta_k * z * z + w * w;
    let gdl = domination_from_parts(mdp, reference, &pi, &eval);

    let gamma = mdp.gamma();
    let horizon = 1.0 / (1.0 - gamma);
    let sa_scale = ((mdp.num_states() * mdp.num_actions()) as f64).sqrt();
    let bounds_ok = a <= 2.0 * horizon + BOUND_TOL
        && z <= 2.0 * sa_scale * horizon + BOUND_TOL
        && y <= 2.0 * horizon + BOUND_TOL
        && w <= 2.0 * sa_scale * horizon + BOUND_TOL;

    let lip_ok = match (previous_occupancy, view.last_movement) {
        (Some(prev), Some(movement)) => {
            let drift = prev
                .iter()
                .zip(&eval.occupancy)
                .map(|(p, d)| (p - d).abs())
                .fold(0.0, f64::max);
            let bound = (mdp.num_actions() as f64).sqrt() / (2.0 * (1.0 - gamma).powi(2)) * movement;
            drift <= bound + 1e-10
        }
        _ => true,
    };

    Ok((
        DiagnosticsRecord {
            k: view.k,
            j: eval.ret,
            a,
            z,
            y,
            w,
            x,
            gdl_ok: gdl.holds,
            lip_ok,
            bounds_ok,
        },
        eval.occupancy,
    ))
}

/// Collects records on the checkpoint grid `{0, log_every, 2·log_every, …} ∪ {final}`.
#[derive(Debug)]
pub struct Recorder {
    reference: OptimalReference,
    log_every: usize,
    records: Vec<DiagnosticsRecord>,
    last_occupancy: Option<(usize, Vec<f64>)>,
}

impl Recorder {
    pub fn new(mdp: &TabularMdp, log_every: usize) -> Result<Self> {
        Self::with_reference(OptimalReference::new(mdp)?, log_every)
    }

    pub fn with_reference(reference: OptimalReference, log_every: usize) -> Result<Self> {
        if log_every == 0 {
            return param("log_every must be at least 1");
        }
        Ok(Self {
            reference,
            log_every,
            records: Vec::new(),
            last_occupancy: None,
        })
    }

    pub fn due(&self, k: usize, iterations: usize) -> bool {
        k.is_multiple_of(self.log_every) || k == iterations
    }

    pub fn observe(&mut self, mdp: &TabularMdp, view: &CheckpointView<'_>) -> Result<()> {
        let previous = self
            .last_occupancy
            .as_ref()
            .filter(|(k, _)| k + 1 == view.k)
            .map(|(_, d)| d.as_slice());
        let (record, occupancy) = snapshot(mdp, &self.reference, view, previous)?;
        self.records.push(record);
        self.last_occupancy = Some((view.k, occupancy));
        Ok(())
    }

    pub fn records(&self) -> &[DiagnosticsRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<DiagnosticsRecord> {
        self.records
    }
}

/// Least-squares line through `(ln k, ln value)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
}

/// Fits `ln value = intercept + slope · ln k` over the last `tail_fraction`
/// of the points with `k ≥ 1`.
pub fn fit_power_law(points: &[(usize, f64)], tail_fraction: f64) -> Result<RateFit> {
    if !(tail_fraction > 0.0 && tail_fraction <= 1.0) {
        return Err(Error::Fit(format!("tail fraction {tail_fraction} outside (0, 1]")));
    }
    let usable: Vec<(usize, f64)> = points.iter().copied().filter(|&(k, _)| k >= 1).collect();
    let take = ((usable.len() as f64) * tail_fraction).ceil() as usize;
    let window = &usable[usable.len() - take.min(usable.len())..];
    if window.len() < 10 {
        return Err(Error::Fit(format!("need at least 10 points in the tail window, got {}", window.len())));
    }
    if let Some(&(k, v)) = window.iter().find(|&&(_, v)| v.is_nan() || v <= 0.0) {
        return Err(Error::Fit(format!("non-positive value {v} at k = {k}")));
    }
    let n = window.len() as f64;
    let xs: Vec<f64> = window.iter().map(|&(k, _)| (k as f64).ln()).collect();
    let ys: Vec<f64> = window.iter().map(|&(_, v)| v.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Fit("all checkpoints share one k".into()));
    }
    let slope = sxy / sxx;
    Ok(RateFit {
        slope,
        intercept: my - slope * mx,
    })
}

/// Log-log decay rate of `field` over the tail of `records`.
pub fn fit_rate(records: &[DiagnosticsRecord], field: Field, tail_fraction: f64) -> Result<RateFit> {
    let points: Vec<(usize, f64)> = records.iter().map(|r| (r.k, r.get(field))).collect();
    fit_power_law(&points, tail_fraction)
}

/// Cross-seed mean and standard deviation at one checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub k: usize,
    pub n: usize,
    /// Indexed like [`Field::ALL`].
    pub mean: [f64; 6],
    /// Sample standard deviation; 0 for a single seed.
    pub std: [f64; 6],
}

impl AggregateRow {
    pub fn mean_of(&self, field: Field) -> f64 {
        self.mean[Field::ALL.iter().position(|&f| f == field).expect("field")]
    }

    pub fn std_of(&self, field: Field) -> f64 {
        self.std[Field::ALL.iter().position(|&f| f == field).expect("field")]
    }
}

/// Per-checkpoint mean/std over seeds. All runs must share one checkpoint grid.
pub fn aggregate(per_seed: &[Vec<DiagnosticsRecord>]) -> Result<Vec<AggregateRow>> {
    let Some(first) = per_seed.first() else {
        return Ok(Vec::new());
    };
    for run in per_seed {
        if run.len() != first.len() || run.iter().zip(first).any(|(r, f)| r.k != f.k) {
            return param("runs do not share a checkpoint grid");
        }
    }
    let n = per_seed.len();
    Ok((0..first.len())
        .map(|i| {
            let mut mean = [0.0; 6];
            let mut std = [0.0; 6];
            for (slot, &field) in Field::ALL.iter().enumerate() {
                let values: Vec<f64> = per_seed.iter().map(|run| run[i].get(field)).collect();
                let m = values.iter().sum::<f64>() / n as f64;
                mean[slot] = m;
                if n > 1 {
                    let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64;
                    std[slot] = var.sqrt();
                }
            }
            AggregateRow {
                k: first[i].k,
                n,
                mean,
                std,
            }
        })
        .collect())
}
