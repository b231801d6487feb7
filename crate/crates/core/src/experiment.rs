//! Experiment orchestration: configuration, multi-seed runs, CSV output and
//! rate fitting on saved results.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;

use crate::baseline::{run_baseline, BaselineSchedules};
use crate::diagnostics::{aggregate, fit_power_law, DiagnosticsRecord, Field, RateFit};
use crate::error::{param, Error, Result};
use crate::mdp::{random_mdp_with, RewardRange, TabularMdp};
use crate::oracles::optimal_return;
use crate::sampling::RngStream;
use crate::storm::{run_storm, RunLog, StepSchedules};
use crate::verify::estimate_exploration_lambda;

const LAMBDA_STREAM: u64 = 3;
const LAMBDA_TRIALS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Algorithm {
    Storm,
    Baseline,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Storm => "storm",
            Algorithm::Baseline => "baseline",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AlgoSelection {
    Storm,
    Baseline,
    #[default]
    Both,
}

impl AlgoSelection {
    pub fn algorithms(self) -> &'static [Algorithm] {
        match self {
            AlgoSelection::Storm => &[Algorithm::Storm],
            AlgoSelection::Baseline => &[Algorithm::Baseline],
            AlgoSelection::Both => &[Algorithm::Storm, Algorithm::Baseline],
        }
    }
}

impl FromStr for AlgoSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "storm" => Ok(Self::Storm),
            "baseline" => Ok(Self::Baseline),
            "both" => Ok(Self::Both),
            other => param(format!("unknown algo {other:?} (expected storm, baseline or both)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub num_states: usize,
    pub num_actions: usize,
    pub gamma: f64,
    pub mdp_seed: u64,
    pub reward_range: RewardRange,
    /// Load the MDP from this file instead of generating it.
    pub mdp_file: Option<PathBuf>,
    pub algo: AlgoSelection,
    pub iterations: usize,
    pub seeds: usize,
    pub seed_base: u64,
    pub c_b: f64,
    pub eta_scale: f64,
    pub beta_scale: f64,
    pub nu_rate: f64,
    pub log_every: usize,
    pub output_path: PathBuf,
    /// Worker threads for seed-level parallelism; 0 uses all cores.
    pub workers: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            num_states: 10,
            num_actions: 5,
            gamma: 0.9,
            mdp_seed: 0,
            reward_range: RewardRange::Unit,
            mdp_file: None,
            algo: AlgoSelection::Both,
            iterations: 20_000,
            seeds: 20,
            seed_base: 0,
            c_b: 0.1,
            eta_scale: 1.0,
            beta_scale: 1.0,
            nu_rate: 0.001,
            log_every: 100,
            output_path: PathBuf::from("results.csv"),
            workers: 0,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Parameter(format!("invalid value {value:?} for {key}")))
}

impl ExperimentConfig {
    /// Sets one field from a `key = value` pair. Keys accept `-` or `_`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let normalized = key.trim().replace('-', "_");
        let value = value.trim();
        match normalized.as_str() {
            "S" | "s" | "num_states" => self.num_states = parse_value(key, value)?,
            "A" | "a" | "num_actions" => self.num_actions = parse_value(key, value)?,
            "gamma" => self.gamma = parse_value(key, value)?,
            "mdp_seed" => self.mdp_seed = parse_value(key, value)?,
            "reward_range" => self.reward_range = value.parse()?,
            "mdp" | "mdp_file" => self.mdp_file = Some(PathBuf::from(value)),
            "algo" => self.algo = value.parse()?,
            "iterations" => self.iterations = parse_value(key, value)?,
            "seeds" => self.seeds = parse_value(key, value)?,
            "seed_base" => self.seed_base = parse_value(key, value)?,
            "cb" | "c_b" => self.c_b = parse_value(key, value)?,
            "eta_scale" => self.eta_scale = parse_value(key, value)?,
            "beta_scale" => self.beta_scale = parse_value(key, value)?,
            "nu_rate" => self.nu_rate = parse_value(key, value)?,
            "log_every" => self.log_every = parse_value(key, value)?,
            "out" | "output_path" => self.output_path = PathBuf::from(value),
            "workers" => self.workers = parse_value(key, value)?,
            _ => return param(format!("unknown config key {key:?}")),
        }
        Ok(())
    }

    /// Applies a `key = value` file on top of `self`. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("config line {}: expected key = value", lineno + 1)))?;
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.mdp_file.is_none() {
            if self.num_states == 0 || self.num_actions == 0 {
                return param("S and A must be at least 1");
            }
            if !(0.0..1.0).contains(&self.gamma) {
                return param(format!("gamma {} outside [0, 1)", self.gamma));
            }
        }
        if self.iterations == 0 || self.seeds == 0 || self.log_every == 0 {
            return param("iterations, seeds and log_every must be at least 1");
        }
        if !(self.c_b > 0.0 && self.c_b <= 1.0) {
            return param(format!("c_b {} outside (0, 1]", self.c_b));
        }
        StepSchedules::new(self.eta_scale, self.beta_scale, self.nu_rate)?;
        BaselineSchedules::new(self.eta_scale, self.beta_scale)?;
        Ok(())
    }

    pub fn mdp(&self) -> Result<TabularMdp> {
        match &self.mdp_file {
            Some(path) => TabularMdp::read_file(path),
            None => random_mdp_with(self.num_states, self.num_actions, self.gamma, self.mdp_seed, self.reward_range),
        }
    }

    /// `results.csv` → `results_aggregate.csv`, next to the per-seed file.
    pub fn aggregate_path(&self) -> PathBuf {
        aggregate_path_for(&self.output_path)
    }
}

pub fn aggregate_path_for(path: &Path) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("results");
    let name = match path.extension().and_then(|e| e.to_str()) {
        Some(ext) => format!("{stem}_aggregate.{ext}"),
        None => format!("{stem}_aggregate"),
    };
    path.with_file_name(name)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedRun {
    pub algo: Algorithm,
    pub seed: u64,
    pub log: RunLog,
}

fn run_one(mdp: &TabularMdp, config: &ExperimentConfig, algo: Algorithm, seed: u64) -> Result<SeedRun> {
    let log = match algo {
        Algorithm::Storm => {
            let sch = StepSchedules::new(config.eta_scale, config.beta_scale, config.nu_rate)?;
            run_storm(mdp, &sch, config.c_b, config.iterations, seed, config.log_every)?
        }
        Algorithm::Baseline => {
            let sch = BaselineSchedules::new(config.eta_scale, config.beta_scale)?;
            run_baseline(mdp, &sch, config.iterations, seed, config.log_every)?
        }
    };
    Ok(SeedRun { algo, seed, log })
}

/// Runs every (algorithm, seed) pair. The result order is (algorithm, seed)
/// regardless of how many workers execute the runs.
pub fn run_experiment(mdp: &TabularMdp, config: &ExperimentConfig) -> Result<Vec<SeedRun>> {
    config.validate()?;
    let jobs: Vec<(Algorithm, u64)> = config
        .algo
        .algorithms()
        .iter()
        .flat_map(|&algo| (0..config.seeds as u64).map(move |i| (algo, config.seed_base + i)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::Parameter(format!("cannot start worker pool: {e}")))?;
    pool.install(|| {
        jobs.par_iter()
            .map(|&(algo, seed)| run_one(mdp, config, algo, seed))
            .collect()
    })
}

const PER_SEED_HEADER: &str = "algo,seed,k,J,a,z,y,w,x,gdl_ok,bounds_ok,diverged_at";

/// Values use the shortest decimal that parses back to the same `f64`.
pub fn per_seed_csv(runs: &[SeedRun]) -> String {
    let mut out = String::new();
    out.push_str(PER_SEED_HEADER);
    out.push('\n');
    for run in runs {
        let diverged = run.log.diverged_at.map(|k| k.to_string()).unwrap_or_default();
        for r in &run.log.records {
            let _ = write!(out, "{},{},{}", run.algo.name(), run.seed, r.k);
            for field in Field::ALL {
                let _ = write!(out, ",{}", r.get(field));
            }
            let _ = writeln!(out, ",{},{},{}", u8::from(r.gdl_ok), u8::from(r.bounds_ok), diverged);
        }
    }
    out
}

/// Per-(algorithm, k) mean and sample std over non-diverged seeds.
pub fn aggregate_csv(runs: &[SeedRun]) -> Result<String> {
    let mut out = String::from("algo,k,n,n_diverged");
    for field in Field::ALL {
        let _ = write!(out, ",{0}_mean,{0}_std", field.name());
    }
    out.push('\n');
    let mut algos: Vec<Algorithm> = runs.iter().map(|r| r.algo).collect();
    algos.dedup();
    for algo in algos {
        let group: Vec<&SeedRun> = runs.iter().filter(|r| r.algo == algo).collect();
        let diverged = group.iter().filter(|r| r.log.diverged_at.is_some()).count();
        let healthy: Vec<Vec<DiagnosticsRecord>> = group
            .iter()
            .filter(|r| r.log.diverged_at.is_none())
            .map(|r| r.log.records.clone())
            .collect();
        if healthy.is_empty() {
            continue;
        }
        for row in aggregate(&healthy)? {
            let _ = write!(out, "{},{},{},{}", algo.name(), row.k, row.n, diverged);
            for field in Field::ALL {
                let _ = write!(out, ",{},{}", row.mean_of(field), row.std_of(field));
            }
            out.push('\n');
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub per_seed_path: PathBuf,
    pub aggregate_path: PathBuf,
    pub runs: usize,
    pub diverged: usize,
}

impl RunSummary {
    pub fn all_diverged(&self) -> bool {
        self.runs > 0 && self.diverged == self.runs
    }
}

/// Runs the configured experiment and writes both CSV files.
pub fn cmd_run(config: &ExperimentConfig) -> Result<RunSummary> {
    config.validate()?;
    let mdp = config.mdp()?;
    let runs = run_experiment(&mdp, config)?;
    let aggregate_path = config.aggregate_path();
    std::fs::write(&config.output_path, per_seed_csv(&runs))?;
    std::fs::write(&aggregate_path, aggregate_csv(&runs)?)?;
    Ok(RunSummary {
        per_seed_path: config.output_path.clone(),
        aggregate_path,
        runs: runs.len(),
        diverged: runs.iter().filter(|r| r.log.diverged_at.is_some()).count(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenSummary {
    pub j_star: f64,
    pub exploration_lambda: f64,
}

/// Generates the configured MDP, writes it to `path` and reports `J*` and
/// the exploration constant estimate.
pub fn cmd_gen_mdp(config: &ExperimentConfig, path: &Path) -> Result<GenSummary> {
    let mdp = random_mdp_with(
        config.num_states,
        config.num_actions,
        config.gamma,
        config.mdp_seed,
        config.reward_range,
    )?;
    mdp.write_file(path)?;
    let mut rng = RngStream::new(config.mdp_seed, LAMBDA_STREAM);
    Ok(GenSummary {
        j_star: optimal_return(&mdp)?.j_star,
        exploration_lambda: estimate_exploration_lambda(&mdp, LAMBDA_TRIALS, &mut rng)?,
    })
}

/// Fits the decay slope of the cross-seed mean of `field` for every
/// algorithm in a per-seed results CSV. Diverged seeds are skipped.
pub fn cmd_rate(csv: &str, field: Field, tail_fraction: f64) -> Result<Vec<(String, RateFit)>> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::Parse("empty results file".into()))?
        .split(',')
        .collect();
    let column = |name: &str| {
        header
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| Error::Parameter(format!("results file has no {name:?} column")))
    };
    let (algo_col, k_col, value_col) = (column("algo")?, column("k")?, column(field.name())?);
    let diverged_col = header.iter().position(|h| *h == "diverged_at");

    // algo -> k -> (sum, count)
    let mut sums: BTreeMap<String, BTreeMap<usize, (f64, usize)>> = BTreeMap::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != header.len() {
            return Err(Error::Parse(format!("row {}: expected {} cells", lineno + 2, header.len())));
        }
        if diverged_col.is_some_and(|c| !cells[c].is_empty()) {
            continue;
        }
        let k: usize = cells[k_col]
            .parse()
            .map_err(|_| Error::Parse(format!("row {}: bad k {:?}", lineno + 2, cells[k_col])))?;
        let v: f64 = cells[value_col]
            .parse()
            .map_err(|_| Error::Parse(format!("row {}: bad value {:?}", lineno + 2, cells[value_col])))?;
        let entry = sums.entry(cells[algo_col].to_string()).or_default().entry(k).or_insert((0.0, 0));
        entry.0 += v;
        entry.1 += 1;
    }
    if sums.is_empty() {
        return param("results file has no usable rows");
    }
    sums.into_iter()
        .map(|(algo, by_k)| {
            let points: Vec<(usize, f64)> = by_k.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect();
            Ok((algo, fit_power_law(&points, tail_fraction)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ExperimentConfig {
        ExperimentConfig {
            num_states: 4,
            num_actions: 3,
            iterations: 300,
            seeds: 3,
            log_every: 50,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn config_file_and_keys() {
        let mut c = ExperimentConfig::default();
        c.apply_text("# comment\nS = 6\nlog-every=7\n c_b = 0.5 # trailing\nalgo = storm\n\nout = x.csv\n")
            .unwrap();
        assert_eq!((c.num_states, c.log_every, c.c_b, c.algo), (6, 7, 0.5, AlgoSelection::Storm));
        assert_eq!(c.output_path, PathBuf::from("x.csv"));
        assert!(c.clone().apply_text("bogus = 1").is_err());
        assert!(c.clone().apply_text("S 4").is_err());
        assert!(c.set("gamma", "abc").is_err());
    }

    #[test]
    fn validation() {
        assert!(ExperimentConfig::default().validate().is_ok());
        for (k, v) in [("gamma", "1"), ("cb", "0"), ("seeds", "0"), ("log_every", "0"), ("eta_scale", "-1")] {
            let mut c = ExperimentConfig::default();
            c.set(k, v).unwrap();
            assert!(c.validate().is_err(), "{k}={v}");
        }
    }

    #[test]
    fn aggregate_path_naming() {
        assert_eq!(aggregate_path_for(Path::new("out/r.csv")), PathBuf::from("out/r_aggregate.csv"));
        assert_eq!(aggregate_path_for(Path::new("r")), PathBuf::from("r_aggregate"));
    }

    #[test]
    fn one_iteration_gives_two_rows_per_algo() {
        let config = ExperimentConfig {
            iterations: 1,
            seeds: 1,
            ..small_config()
        };
        let runs = run_experiment(&config.mdp().unwrap(), &config).unwrap();
        let csv = per_seed_csv(&runs);
        assert_eq!(csv.lines().count(), 1 + 4);
        assert!(csv.lines().skip(1).take(2).all(|l| l.starts_with("storm,0,")));
        assert!(csv.lines().nth(2).unwrap().starts_with("storm,0,1,"));
    }

    #[test]
    fn output_independent_of_workers() {
        let mut config = small_config();
        let mdp = config.mdp().unwrap();
        config.workers = 1;
        let one = run_experiment(&mdp, &config).unwrap();
        config.workers = 3;
        let three = run_experiment(&mdp, &config).unwrap();
        assert_eq!(per_seed_csv(&one), per_seed_csv(&three));
        assert_eq!(aggregate_csv(&one).unwrap(), aggregate_csv(&three).unwrap());
    }

    #[test]
    fn aggregate_means_match_per_seed_values() {
        let config = small_config();
        let runs = run_experiment(&config.mdp().unwrap(), &config).unwrap();
        let agg = aggregate_csv(&runs).unwrap();
        let first = agg.lines().nth(1).unwrap();
        let cells: Vec<&str> = first.split(',').collect();
        assert_eq!(&cells[..4], &["storm", "0", "3", "0"]);
        let last_storm = agg.lines().find(|l| l.starts_with("storm,300,")).unwrap();
        let a_mean: f64 = last_storm.split(',').nth(6).unwrap().parse().unwrap();
        let direct: f64 = runs[..3].iter().map(|r| r.log.records.last().unwrap().a).sum::<f64>() / 3.0;
        assert!((a_mean - direct).abs() <= 1e-12);
    }

    #[test]
    fn rate_on_synthetic_csv() {
        let mut csv = String::from(PER_SEED_HEADER);
        csv.push('\n');
        for k in (0..=2000).step_by(10) {
            let a = if k == 0 { 1.0 } else { (k as f64).powf(-0.5) };
            for seed in 0..2 {
                csv.push_str(&format!("storm,{seed},{k},0,{a},0,0,0,0,1,1,\n"));
                csv.push_str(&format!("baseline,{seed},{k},0,0.3,0,0,0,0,1,1,\n"));
            }
        }
        let fits = cmd_rate(&csv, Field::A, 0.5).unwrap();
        let get = |name: &str| fits.iter().find(|(a, _)| a == name).unwrap().1;
        assert!((get("storm").slope + 0.5).abs() < 1e-6);
        assert!(get("baseline").slope.abs() < 1e-12);
        assert!(matches!(
            cmd_rate("algo,seed,k,J\nstorm,0,1,1\n", Field::A, 0.5),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn gen_mdp_is_deterministic() {
        let dir = std::env::temp_dir().join(format!("stormac-gen-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let config = small_config();
        let (p1, p2) = (dir.join("a.txt"), dir.join("b.txt"));
        let s1 = cmd_gen_mdp(&config, &p1).unwrap();
        let s2 = cmd_gen_mdp(&config, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        assert_eq!(s1, s2);
        assert!(s1.exploration_lambda.is_finite());
        std::fs::remove_dir_all(dir).unwrap();
    }
}
