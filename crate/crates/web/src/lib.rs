//! Browser demo bindings. Each exported function wraps a plain Rust function
//! of the same name prefixed with `compute_`, which is what the native tests
//! exercise.

use rand::Rng;
use stormac::baseline::{run_baseline, BaselineSchedules};
use stormac::diagnostics::{aggregate, Field};
use stormac::mdp::{random_mdp, softmax_policy, PolicyParams};
use stormac::oracles::occupancy;
use stormac::sampling::{sample_occupancy_state, RngStream};
use stormac::storm::{run_storm, StepSchedules};
use stormac::table::SaTable;
use stormac::verify::ode_trajectory;
use stormac::{Error, Result};
use wasm_bindgen::prelude::*;

const MAX_PLOT_POINTS: usize = 400;

#[wasm_bindgen]
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyDemo {
    exact: Vec<f64>,
    sampled: Vec<f64>,
}

#[wasm_bindgen]
impl OccupancyDemo {
    #[wasm_bindgen(getter)]
    pub fn exact(&self) -> Vec<f64> {
        self.exact.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn sampled(&self) -> Vec<f64> {
        self.sampled.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn total_variation(&self) -> f64 {
        0.5 * self.exact.iter().zip(&self.sampled).map(|(e, s)| (e - s).abs()).sum::<f64>()
    }
}

/// Exact discounted occupancy of a random softmax policy next to the
/// histogram of `samples` draws from the terminated-chain sampler.
pub fn compute_occupancy(
    num_states: usize,
    num_actions: usize,
    gamma: f64,
    mdp_seed: u64,
    samples: usize,
    seed: u64,
) -> Result<OccupancyDemo> {
    if samples == 0 {
        return Err(Error::Parameter("samples must be at least 1".into()));
    }
    let mdp = random_mdp(num_states, num_actions, gamma, mdp_seed)?;
    let mut rng = RngStream::new(seed, 0);
    let logits = SaTable::from_fn(num_states, num_actions, |_, _| rng.gen_range(-2.0..2.0));
    let pi = softmax_policy(&PolicyParams::new(logits))?;
    let mut counts = vec![0usize; num_states];
    for _ in 0..samples {
        counts[sample_occupancy_state(&mdp, &pi, &mut rng).state] += 1;
    }
    Ok(OccupancyDemo {
        exact: occupancy(&mdp, &pi)?,
        sampled: counts.iter().map(|&c| c as f64 / samples as f64).collect(),
    })
}

#[wasm_bindgen]
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceDemo {
    ks: Vec<f64>,
    storm: Vec<f64>,
    baseline: Vec<f64>,
}

#[wasm_bindgen]
impl ConvergenceDemo {
    #[wasm_bindgen(getter)]
    pub fn ks(&self) -> Vec<f64> {
        self.ks.clone()
    }

    /// Cross-seed mean sub-optimality of the momentum critic.
    #[wasm_bindgen(getter)]
    pub fn storm(&self) -> Vec<f64> {
        self.storm.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn baseline(&self) -> Vec<f64> {
        self.baseline.clone()
    }
}

/// Mean sub-optimality curves of both trainers on one random MDP.
/// Seeds run sequentially; diverged seeds are dropped from the mean.
#[allow(clippy::too_many_arguments)]
pub fn compute_convergence(
    num_states: usize,
    num_actions: usize,
    gamma: f64,
    mdp_seed: u64,
    iterations: usize,
    seeds: usize,
    log_every: usize,
    buffer_fraction: f64,
) -> Result<ConvergenceDemo> {
    if seeds == 0 {
        return Err(Error::Parameter("seeds must be at least 1".into()));
    }
    let mdp = random_mdp(num_states, num_actions, gamma, mdp_seed)?;
    let storm_sch = StepSchedules::default();
    let base_sch = BaselineSchedules::default();
    let (mut storm_logs, mut base_logs) = (Vec::new(), Vec::new());
    for seed in 0..seeds as u64 {
        let log = run_storm(&mdp, &storm_sch, buffer_fraction, iterations, seed, log_every)?;
        if log.diverged_at.is_none() {
            storm_logs.push(log.records);
        }
        let log = run_baseline(&mdp, &base_sch, iterations, seed, log_every)?;
        if log.diverged_at.is_none() {
            base_logs.push(log.records);
        }
    }
    if storm_logs.is_empty() || base_logs.is_empty() {
        return Err(Error::Parameter("every seed diverged".into()));
    }
    let storm = aggregate(&storm_logs)?;
    let base = aggregate(&base_logs)?;
    Ok(ConvergenceDemo {
        ks: storm.iter().map(|r| r.k as f64).collect(),
        storm: storm.iter().map(|r| r.mean_of(Field::A)).collect(),
        baseline: base.iter().map(|r| r.mean_of(Field::A)).collect(),
    })
}

#[wasm_bindgen]
#[derive(Debug, Clone, PartialEq)]
pub struct OdeDemo {
    ks: Vec<f64>,
    xs: Vec<f64>,
    bounds: Vec<f64>,
    holds: bool,
}

#[wasm_bindgen]
impl OdeDemo {
    #[wasm_bindgen(getter)]
    pub fn ks(&self) -> Vec<f64> {
        self.ks.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn xs(&self) -> Vec<f64> {
        self.xs.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn bounds(&self) -> Vec<f64> {
        self.bounds.clone()
    }

    /// `x_k ≤ η_k²` at every step, not only the plotted ones.
    #[wasm_bindgen(getter)]
    pub fn holds(&self) -> bool {
        self.holds
    }
}

/// Recursion trajectory against its bound, thinned to at most 400 points.
pub fn compute_ode(omega1: f64, omega2: f64, eta0_sq: f64, steps: usize) -> Result<OdeDemo> {
    let points = ode_trajectory(eta0_sq, omega1, omega2, eta0_sq, steps)?;
    let holds = points.iter().all(|p| p.x <= p.bound + 1e-12);
    let stride = points.len().div_ceil(MAX_PLOT_POINTS).max(1);
    let mut demo = OdeDemo {
        ks: Vec::new(),
        xs: Vec::new(),
        bounds: Vec::new(),
        holds,
    };
    let last = points.len() - 1;
    for (k, p) in points.iter().enumerate() {
        if k % stride == 0 || k == last {
            demo.ks.push(k as f64);
            demo.xs.push(p.x);
            demo.bounds.push(p.bound);
        }
    }
    Ok(demo)
}

fn js_error(err: Error) -> JsError {
    JsError::new(&err.to_string())
}

#[wasm_bindgen]
pub fn occupancy_demo(
    num_states: usize,
    num_actions: usize,
    gamma: f64,
    mdp_seed: u32,
    samples: usize,
    seed: u32,
) -> std::result::Result<OccupancyDemo, JsError> {
    compute_occupancy(num_states, num_actions, gamma, mdp_seed.into(), samples, seed.into()).map_err(js_error)
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn convergence_demo(
    num_states: usize,
    num_actions: usize,
    gamma: f64,
    mdp_seed: u32,
    iterations: usize,
    seeds: usize,
    log_every: usize,
    buffer_fraction: f64,
) -> std::result::Result<ConvergenceDemo, JsError> {
    compute_convergence(
        num_states,
        num_actions,
        gamma,
        mdp_seed.into(),
        iterations,
        seeds,
        log_every,
        buffer_fraction,
    )
    .map_err(js_error)
}

#[wasm_bindgen]
pub fn ode_demo(omega1: f64, omega2: f64, eta0_sq: f64, steps: usize) -> std::result::Result<OdeDemo, JsError> {
    compute_ode(omega1, omega2, eta0_sq, steps).map_err(js_error)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn occupancy_histogram_tracks_exact() {
        let demo = compute_occupancy(5, 3, 0.9, 1, 50_000, 2).unwrap();
        assert_eq!(demo.exact.len(), 5);
        assert!((demo.sampled.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(demo.total_variation() < 0.02);
        assert!(compute_occupancy(5, 3, 0.9, 1, 0, 2).is_err());
    }

    #[test]
    fn convergence_curves_share_grid() {
        let demo = compute_convergence(6, 3, 0.9, 0, 2000, 2, 100, 0.1).unwrap();
        assert_eq!(demo.ks.len(), 21);
        assert_eq!(demo.storm.len(), demo.ks.len());
        assert_eq!(demo.baseline.len(), demo.ks.len());
        assert_eq!(demo.storm[0], demo.baseline[0]);
        assert!(demo.storm.iter().chain(&demo.baseline).all(|a| *a >= -1e-10));
    }

    #[test]
    fn ode_demo_is_thinned_and_holds() {
        let demo = compute_ode(0.5, 0.1, 1.0, 100_000).unwrap();
        assert!(demo.holds);
        assert!(demo.ks.len() <= MAX_PLOT_POINTS + 1);
        assert_eq!(*demo.ks.last().unwrap(), 100_000.0);
        assert!(demo.xs.iter().zip(&demo.bounds).all(|(x, b)| x <= b));
        assert!(compute_ode(0.1, 0.5, 0.1, 10).is_err());
    }
}
