//! Monte-Carlo sweeps over benchmark problems.
//!
//! A sweep runs one optimizer with one oracle on every point of a grid over
//! `n`, `d`, `ε` and `k`, for a number of independent trials per point. Each
//! trial draws a fresh dataset, runs the optimizer with a fresh ledger and
//! evaluates the excess risk of the returned point. Trials derive their RNG
//! streams from the base seed and their grid coordinates only, so results do
//! not depend on scheduling and records are written in grid order.
//!
//! Central oracles spend `ρ = ε²/2` zCDP per run; shuffle oracles spend
//! `(ε, δ)`. Moment bounds for the clip and step recipes are plug-in
//! estimates on a separate seeded sample.

mod plot;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use plot::emit_plot;

use crate::error::{Error, Result};
use crate::math::Vector;
use crate::optim::{Algorithm, MomentBounds, OptimizerConfig, Overrides, TraceLevel};
use crate::oracles::OracleKind;
use crate::privacy::{ApproxDpBudget, Budget, ZcdpBudget};
use crate::problem::{benchmark, ProblemInstance, BENCHMARK_NAMES};

/// Frozen CSV header of sweep output.
pub const CSV_HEADER: &str = "problem,algo,oracle,n,d,eps,delta,k,trial,excess_risk,stderr,wall_ms";

/// Sample size of the plug-in moment estimates.
pub const DEFAULT_MOMENT_SAMPLES: usize = 100_000;

/// A sweep description, usually read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: String,
    pub algo: String,
    pub oracle: String,
    pub n: Vec<usize>,
    pub d: Vec<usize>,
    /// Privacy levels; give either `eps` or `rho` (`ε = √(2ρ)`).
    #[serde(default)]
    pub eps: Vec<f64>,
    #[serde(default)]
    pub rho: Vec<f64>,
    #[serde(default = "default_k")]
    pub k: Vec<f64>,
    /// Required by shuffle oracles; reported for central ones when given.
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default = "default_trials")]
    pub trials: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub plot: Option<PathBuf>,
    /// Grid axis used as the plot's abscissa.
    #[serde(default)]
    pub plot_axis: Axis,
    #[serde(default)]
    pub iterations: Option<u64>,
    #[serde(default)]
    pub clip: Option<f64>,
    #[serde(default)]
    pub eta: Option<f64>,
    #[serde(default)]
    pub max_phase_iterations: Option<u64>,
    #[serde(default = "default_moment_samples")]
    pub moment_samples: usize,
    /// Record wall-clock time; otherwise `wall_ms` is written as 0 so that
    /// reruns produce identical bytes.
    #[serde(default)]
    pub timing: bool,
}

fn default_k() -> Vec<f64> {
    vec![2.0]
}

fn default_trials() -> u32 {
    1
}

fn default_moment_samples() -> usize {
    DEFAULT_MOMENT_SAMPLES
}

impl Default for ExperimentConfig {
    /// Empty names and grids with every optional field at its default.
    fn default() -> Self {
        ExperimentConfig {
            problem: String::new(),
            algo: String::new(),
            oracle: String::new(),
            n: Vec::new(),
            d: Vec::new(),
            eps: Vec::new(),
            rho: Vec::new(),
            k: default_k(),
            delta: None,
            trials: default_trials(),
            seed: 0,
            out: None,
            plot: None,
            plot_axis: Axis::N,
            iterations: None,
            clip: None,
            eta: None,
            max_phase_iterations: None,
            moment_samples: DEFAULT_MOMENT_SAMPLES,
            timing: false,
        }
    }
}

impl ExperimentConfig {
    /// A single-point config with defaults for everything else.
    pub fn new(problem: &str, algo: Algorithm, oracle: OracleKind, n: usize, d: usize, eps: f64) -> Self {
        ExperimentConfig {
            problem: problem.to_string(),
            algo: algo.name().to_string(),
            oracle: oracle.name().to_string(),
            n: vec![n],
            d: vec![d],
            eps: vec![eps],
            delta: oracle.is_shuffle().then_some(1e-5),
            ..ExperimentConfig::default()
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config JSON: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Checks names, grids and budget fields; every failure is
    /// [`Error::Config`].
    pub fn validate(&self) -> Result<(Algorithm, OracleKind)> {
        if !BENCHMARK_NAMES.contains(&self.problem.as_str()) {
            return Err(Error::Config(format!(
                "unknown problem '{}'; valid options: {}",
                self.problem,
                BENCHMARK_NAMES.join(", ")
            )));
        }
        let algo: Algorithm = self.algo.parse()?;
        let oracle: OracleKind = self.oracle.parse()?;
        let config = |msg: String| Err(Error::Config(msg));
        if self.n.is_empty() || self.d.is_empty() || self.k.is_empty() {
            return config("grids over n, d and k must be nonempty".into());
        }
        match (self.eps.is_empty(), self.rho.is_empty()) {
            (true, true) => return config("give a privacy grid with eps or rho".into()),
            (false, false) => return config("give eps or rho, not both".into()),
            _ => {}
        }
        if let Some(&n) = self.n.iter().find(|&&n| n < 2) {
            return config(format!("n must be >= 2, got {n}"));
        }
        if self.d.contains(&0) {
            return config("d must be >= 1".into());
        }
        if let Some(&v) = self.eps.iter().chain(&self.rho).find(|&&v| !(v > 0.0 && v.is_finite())) {
            return config(format!("privacy levels must be finite and > 0, got {v}"));
        }
        if let Some(&k) = self.k.iter().find(|&&k| !(k >= 2.0 && k.is_finite())) {
            return config(format!("k must be finite and >= 2, got {k}"));
        }
        if self.trials == 0 {
            return config("trials must be >= 1".into());
        }
        match self.delta {
            Some(delta) if !(delta > 0.0 && delta < 1.0) => {
                return config(format!("delta must lie in (0, 1), got {delta}"))
            }
            None if oracle.is_shuffle() => return config(format!("oracle {oracle} requires delta > 0")),
            _ => {}
        }
        if self.moment_samples == 0 {
            return config("moment_samples must be >= 1".into());
        }
        if self.iterations == Some(0) || self.max_phase_iterations == Some(0) {
            return config("iteration overrides must be >= 1".into());
        }
        if let Some(v) = self
            .clip
            .into_iter()
            .chain(self.eta)
            .find(|&v| !(v > 0.0 && v.is_finite()))
        {
            return config(format!("clip and eta overrides must be finite and > 0, got {v}"));
        }
        Ok((algo, oracle))
    }

    fn epsilons(&self) -> Vec<f64> {
        if self.eps.is_empty() {
            self.rho.iter().map(|rho| (2.0 * rho).sqrt()).collect()
        } else {
            self.eps.clone()
        }
    }

    /// Grid points in output order: `d`, then `k`, then `ε`, then `n`.
    pub fn grid(&self) -> Vec<GridPoint> {
        let mut points = Vec::new();
        for &d in &self.d {
            for &k in &self.k {
                for eps in self.epsilons() {
                    for &n in &self.n {
                        points.push(GridPoint { n, d, eps, k });
                    }
                }
            }
        }
        points
    }
}

/// One coordinate of a sweep grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub n: usize,
    pub d: usize,
    pub eps: f64,
    pub k: f64,
}

/// Grid axes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    #[default]
    N,
    D,
    Eps,
    K,
}

impl Axis {
    pub fn name(&self) -> &'static str {
        match self {
            Axis::N => "n",
            Axis::D => "d",
            Axis::Eps => "eps",
            Axis::K => "k",
        }
    }

    fn value(&self, p: &AggregatePoint) -> f64 {
        match self {
            Axis::N => p.n as f64,
            Axis::D => p.d as f64,
            Axis::Eps => p.eps,
            Axis::K => p.k,
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Axis::N, Axis::D, Axis::Eps, Axis::K]
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown axis '{s}'; valid options: n, d, eps, k")))
    }
}

/// Outcome of one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRecord {
    pub problem: String,
    pub algo: String,
    pub oracle: String,
    pub n: usize,
    pub d: usize,
    pub eps: f64,
    pub delta: Option<f64>,
    pub k: f64,
    pub trial: u32,
    pub excess_risk: f64,
    /// Monte-Carlo standard error of `excess_risk` (0 when analytic).
    pub stderr: f64,
    pub wall_ms: u64,
}

impl ExperimentRecord {
    /// The record as one CSV line matching [`CSV_HEADER`]: integers as is,
    /// grid reals in shortest round-trip form, risks as `%.9e`.
    pub fn csv_line(&self) -> String {
        let delta = self.delta.map_or(String::new(), |d| d.to_string());
        format!(
            "{},{},{},{},{},{},{},{},{},{:.9e},{:.9e},{}",
            self.problem,
            self.algo,
            self.oracle,
            self.n,
            self.d,
            self.eps,
            delta,
            self.k,
            self.trial,
            self.excess_risk,
            self.stderr,
            self.wall_ms
        )
    }
}

/// Mixes a base seed with stream coordinates (SplitMix64 finalizer).
fn mix_seed(seed: u64, parts: &[u64]) -> u64 {
    let mut state = seed;
    for &part in parts {
        state = state.wrapping_add(part).wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        state = z ^ (z >> 31);
    }
    state
}

/// Moment bounds for the `(d, k)` instance: `r̃_k`, `r̃_2k` by plug-in.
fn instance_moments(problem: &ProblemInstance, k: f64, samples: usize, seed: u64) -> Result<MomentBounds> {
    let r_k = problem.plugin_sup_moment_seeded(k, samples, seed)?;
    let r_2k = problem.plugin_sup_moment_seeded(2.0 * k, samples, seed)?;
    MomentBounds::new(k, r_k)?.with_r_2k(r_2k)
}

struct Job<'a> {
    point: GridPoint,
    point_index: usize,
    trial: u32,
    problem: &'a ProblemInstance,
    moment: MomentBounds,
}

/// Runs every trial of the sweep and returns the records in grid order.
pub fn run_sweep(config: &ExperimentConfig) -> Result<Vec<ExperimentRecord>> {
    let (algo, oracle) = config.validate()?;
    let grid = config.grid();
    let mut instances: HashMap<(usize, u64), (ProblemInstance, MomentBounds)> = HashMap::new();
    for p in &grid {
        let key = (p.d, p.k.to_bits());
        if let std::collections::hash_map::Entry::Vacant(e) = instances.entry(key) {
            let problem = benchmark(&config.problem, p.d, p.k)?;
            let moment = instance_moments(&problem, p.k, config.moment_samples, mix_seed(config.seed, &[u64::MAX]))?;
            e.insert((problem, moment));
        }
    }
    let jobs: Vec<Job<'_>> = grid
        .iter()
        .enumerate()
        .flat_map(|(point_index, point)| {
            let (problem, moment) = &instances[&(point.d, point.k.to_bits())];
            (0..config.trials).map(move |trial| Job {
                point: *point,
                point_index,
                trial,
                problem,
                moment: *moment,
            })
        })
        .collect();
    jobs.par_iter()
        .map(|job| run_trial(config, algo, oracle, job))
        .collect()
}

fn run_trial(
    config: &ExperimentConfig,
    algo: Algorithm,
    oracle: OracleKind,
    job: &Job<'_>,
) -> Result<ExperimentRecord> {
    let start = Instant::now();
    let GridPoint { n, d, eps, k } = job.point;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, &[job.point_index as u64, u64::from(job.trial)]));
    let problem = job.problem;
    let budget = if oracle.is_shuffle() {
        let delta = config
            .delta
            .ok_or_else(|| Error::Config("shuffle oracles need delta".into()))?;
        Budget::Approx(ApproxDpBudget::new(eps, delta)?)
    } else {
        Budget::Zcdp(ZcdpBudget::from_epsilon(eps)?)
    };
    let w0 = Vector::zeros(d);
    let constants = problem.population_constants();
    let mut optimizer = OptimizerConfig::new(Some(budget), problem.loss())
        .with_moment(job.moment)
        .with_oracle(oracle);
    optimizer.mu = constants.mu;
    optimizer.beta = constants.beta;
    optimizer.initial_gap = problem.initial_gap(&w0);
    optimizer.eta = config.eta;
    optimizer.trace = TraceLevel::Off;
    optimizer.overrides = Overrides {
        iterations: config.iterations,
        clip: config.clip,
        max_phase_iterations: config.max_phase_iterations,
    };

    let data = problem.sample(n, &mut rng);
    let out = algo.run(&data, problem.loss(), problem.domain(), &w0, &optimizer, &mut rng)?;
    let audit = out.accounting.audit(optimizer.budget.as_ref())?;
    if !audit.reconciled {
        return Err(Error::Trial(format!(
            "ledger spent {} against a budget of {} at n={n}, d={d}, eps={eps}, trial {}",
            audit.spent, audit.target, job.trial
        )));
    }
    let risk = problem.excess_risk(&out.iterate, &mut rng)?;
    if risk.value < -3.0 * risk.stderr - 1e-12 {
        return Err(Error::Trial(format!(
            "excess risk {} is significantly negative (stderr {})",
            risk.value, risk.stderr
        )));
    }
    let wall_ms = if config.timing {
        start.elapsed().as_millis() as u64
    } else {
        0
    };
    Ok(ExperimentRecord {
        problem: config.problem.clone(),
        algo: algo.name().to_string(),
        oracle: oracle.name().to_string(),
        n,
        d,
        eps,
        delta: config.delta,
        k,
        trial: job.trial,
        excess_risk: risk.value,
        stderr: risk.stderr,
        wall_ms,
    })
}

/// The CSV document for `records`, header included.
pub fn records_to_csv(records: &[ExperimentRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.csv_line());
        out.push('\n');
    }
    out
}

pub fn write_csv(records: &[ExperimentRecord], path: &Path) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(records_to_csv(records).as_bytes())?;
    Ok(())
}

/// Mean excess risk of one grid point over its trials.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatePoint {
    pub problem: String,
    pub algo: String,
    pub oracle: String,
    pub n: usize,
    pub d: usize,
    pub eps: f64,
    pub delta: Option<f64>,
    pub k: f64,
    pub trials: usize,
    pub mean: f64,
    /// Sample standard deviation over `√trials` (0 for a single trial).
    pub stderr: f64,
}

impl AggregatePoint {
    fn same_point(&self, r: &ExperimentRecord) -> bool {
        self.problem == r.problem
            && self.algo == r.algo
            && self.oracle == r.oracle
            && self.n == r.n
            && self.d == r.d
            && self.eps == r.eps
            && self.delta == r.delta
            && self.k == r.k
    }
}

/// Groups records by every coordinate except the trial index, in order of
/// first appearance.
pub fn aggregate(records: &[ExperimentRecord]) -> Vec<AggregatePoint> {
    let mut groups: Vec<(AggregatePoint, Vec<f64>)> = Vec::new();
    for r in records {
        match groups.iter_mut().find(|(p, _)| p.same_point(r)) {
            Some((_, values)) => values.push(r.excess_risk),
            None => groups.push((
                AggregatePoint {
                    problem: r.problem.clone(),
                    algo: r.algo.clone(),
                    oracle: r.oracle.clone(),
                    n: r.n,
                    d: r.d,
                    eps: r.eps,
                    delta: r.delta,
                    k: r.k,
                    trials: 0,
                    mean: 0.0,
                    stderr: 0.0,
                },
                vec![r.excess_risk],
            )),
        }
    }
    groups
        .into_iter()
        .map(|(mut point, values)| {
            let m = values.len() as f64;
            let mean = values.iter().sum::<f64>() / m;
            let var = if values.len() > 1 {
                values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1.0)
            } else {
                0.0
            };
            point.trials = values.len();
            point.mean = mean;
            point.stderr = (var / m).sqrt();
            point
        })
        .collect()
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn fit_loglog_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            expected: xs.len(),
            found: ys.len(),
        });
    }
    if xs.len() < 3 {
        return Err(Error::invalid(
            "points",
            format!("need at least 3 points, got {}", xs.len()),
        ));
    }
    if let Some(bad) = xs.iter().chain(ys).find(|&&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::invalid(
            "points",
            format!("log-log fit needs positive finite values, got {bad}"),
        ));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let m = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / m;
    let my = ly.iter().sum::<f64>() / m;
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("points", "all abscissae are equal"));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok(sxy / sxx)
}

/// Slope of mean excess risk along `axis` over aggregated points that
/// share all other coordinates.
pub fn slope_along(points: &[AggregatePoint], axis: Axis) -> Result<f64> {
    let xs: Vec<f64> = points.iter().map(|p| axis.value(p)).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.mean).collect();
    fit_loglog_slope(&xs, &ys)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(n: usize, trial: u32, risk: f64) -> ExperimentRecord {
        ExperimentRecord {
            problem: "quadratic".into(),
            algo: "acsa".into(),
            oracle: "central-l2".into(),
            n,
            d: 2,
            eps: 1.0,
            delta: None,
            k: 2.0,
            trial,
            excess_risk: risk,
            stderr: 0.0,
            wall_ms: 0,
        }
    }

    #[test]
    fn exact_power_law_slope() {
        let xs = [1.0, 2.0, 4.0, 8.0, 16.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| x.powf(-0.5)).collect();
        assert!((fit_loglog_slope(&xs, &ys).unwrap() + 0.5).abs() < 1e-12);
        assert_eq!(fit_loglog_slope(&xs, &[3.0; 5]).unwrap(), 0.0);
        assert!(fit_loglog_slope(&xs[..2], &ys[..2]).is_err());
        assert!(fit_loglog_slope(&[1.0, 2.0, 3.0], &[1.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn aggregation_matches_recomputation() {
        let records = vec![
            record(8, 0, 1.0),
            record(8, 1, 3.0),
            record(16, 0, 0.5),
            record(8, 2, 2.0),
        ];
        let agg = aggregate(&records);
        assert_eq!(agg.len(), 2);
        assert_eq!((agg[0].n, agg[0].trials, agg[0].mean), (8, 3, 2.0));
        assert!((agg[0].stderr - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!((agg[1].trials, agg[1].stderr), (1, 0.0));
    }

    #[test]
    fn csv_formatting_is_frozen() {
        let mut r = record(8, 1, 0.125);
        r.delta = Some(1e-5);
        assert_eq!(
            r.csv_line(),
            "quadratic,acsa,central-l2,8,2,1,0.00001,2,1,1.250000000e-1,0.000000000e0,0"
        );
        assert!(records_to_csv(&[]).starts_with(CSV_HEADER));
    }

    #[test]
    fn config_validation_and_parsing() {
        let cfg = ExperimentConfig::new("quadratic", Algorithm::Acsa, OracleKind::CentralL2, 64, 2, 1.0);
        assert!(cfg.validate().is_ok());
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json(&json).unwrap(), cfg);
        let mut bad = cfg.clone();
        bad.oracle = "shuffle-l2".into();
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        bad = cfg.clone();
        bad.algo = "adam".into();
        let msg = bad.validate().unwrap_err().to_string();
        assert!(msg.contains("localized") && msg.contains("prox-sgd"));
        bad = cfg.clone();
        bad.trials = 0;
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        bad = cfg.clone();
        bad.n.clear();
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        assert!(ExperimentConfig::from_json("{\"problem\": 1}").is_err());
        assert!(ExperimentConfig::from_json(&json.replace("\"seed\"", "\"sed\"")).is_err());
    }

    #[test]
    fn single_trial_single_point_gives_one_record() {
        let mut cfg = ExperimentConfig::new("quadratic", Algorithm::Acsa, OracleKind::CentralL2, 64, 2, 1.0);
        cfg.moment_samples = 1000;
        let records = run_sweep(&cfg).unwrap();
        assert_eq!(records.len(), 1);
        assert!(records[0].excess_risk >= 0.0);
        assert_eq!(records_to_csv(&records), records_to_csv(&run_sweep(&cfg).unwrap()));
    }

    #[test]
    fn seeds_mix_all_parts() {
        assert_ne!(mix_seed(0, &[0, 1]), mix_seed(0, &[1, 0]));
        assert_ne!(mix_seed(0, &[0]), mix_seed(1, &[0]));
    }
}
