//! Problem instances: a loss, a constraint ball, a data law, and the
//! population objective when it has a closed form.
//!
//! Excess risk `F(w) − min_W F` is evaluated analytically when the instance
//! carries an [`AnalyticObjective`]; otherwise it is estimated by Monte Carlo
//! on an independent evaluation set as the mean of paired differences
//! `f(w, x) − f(w_ref, x)` against a caller-supplied reference point.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

use crate::data::{
    truncated_normal, DataDistribution, Dataset, LinearModel, LocationFamily, ScalarLaw, SymmetricLomax,
};
use crate::error::{check_dim, Error, Result};
use crate::losses::{composite_lasso_loss, linear_loss, linreg_loss, quadratic_loss, LossConstants, LossModel};
use crate::math::{dot, norm, Ball, Vector};
use crate::oracles::MomentAssumption;

/// Size of the Monte-Carlo evaluation set when none is given.
pub const DEFAULT_EVALUATION_SIZE: usize = 100_000;

/// Population objectives with closed-form minimizers.
#[derive(Debug, Clone, PartialEq)]
pub enum AnalyticObjective {
    /// `F(w) = ½ Σ_j a_j (w_j − t_j)² + const`, minimized over the domain.
    Quadratic { curvature: Vec<f64>, target: Vec<f64> },
    /// `F(w) = −⟨w, ν⟩`, minimized over the domain.
    Linear { mean: Vec<f64> },
    /// `F(w) = ½ Σ_j a_j (w_j − t_j)² + λ‖w‖₁ + const`, minimized over ℝ^d.
    SeparableLasso {
        curvature: Vec<f64>,
        target: Vec<f64>,
        lambda: f64,
    },
}

impl AnalyticObjective {
    fn dim(&self) -> usize {
        match self {
            AnalyticObjective::Quadratic { target, .. } | AnalyticObjective::SeparableLasso { target, .. } => {
                target.len()
            }
            AnalyticObjective::Linear { mean } => mean.len(),
        }
    }

    /// `F(w)` up to the additive constant.
    fn value(&self, w: &[f64]) -> f64 {
        match self {
            AnalyticObjective::Quadratic { curvature, target } => weighted_gap(curvature, target, w),
            AnalyticObjective::Linear { mean } => -dot(w, mean),
            AnalyticObjective::SeparableLasso {
                curvature,
                target,
                lambda,
            } => weighted_gap(curvature, target, w) + lambda * w.iter().map(|v| v.abs()).sum::<f64>(),
        }
    }

    fn minimizer(&self, domain: &Ball) -> Vec<f64> {
        match self {
            AnalyticObjective::Quadratic { curvature, target } => weighted_projection(curvature, target, domain),
            AnalyticObjective::Linear { mean } => {
                let len = norm(mean);
                domain
                    .center()
                    .iter()
                    .zip(mean)
                    .map(|(c, m)| if len > 0.0 { c + domain.radius() * m / len } else { *c })
                    .collect()
            }
            AnalyticObjective::SeparableLasso {
                curvature,
                target,
                lambda,
            } => curvature
                .iter()
                .zip(target)
                .map(|(a, t)| t.signum() * (t.abs() - lambda / a).max(0.0))
                .collect(),
        }
    }
}

fn weighted_gap(curvature: &[f64], target: &[f64], w: &[f64]) -> f64 {
    0.5 * curvature
        .iter()
        .zip(target)
        .zip(w)
        .map(|((a, t), x)| a * (x - t) * (x - t))
        .sum::<f64>()
}

/// `argmin_{‖w − c‖ ≤ R} ½ Σ a_j (w_j − t_j)²` via bisection on the
/// multiplier of the ball constraint.
fn weighted_projection(curvature: &[f64], target: &[f64], ball: &Ball) -> Vec<f64> {
    let center = ball.center();
    let radius = ball.radius();
    let offset: Vec<f64> = target.iter().zip(center.iter()).map(|(t, c)| t - c).collect();
    let gap = norm(&offset);
    if gap <= radius {
        return target.to_vec();
    }
    if radius == 0.0 {
        return center.as_slice().to_vec();
    }
    let displacement = |lambda: f64| -> Vec<f64> {
        curvature
            .iter()
            .zip(&offset)
            .map(|(a, o)| a * o / (a + lambda))
            .collect()
    };
    let mut lo = 0.0;
    let mut hi = curvature.iter().cloned().fold(0.0, f64::max) * gap / radius;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if norm(&displacement(mid)) > radius {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let step = displacement(hi);
    let len = norm(&step);
    center.iter().zip(&step).map(|(c, s)| c + s * (radius / len)).collect()
}

/// A point estimate of excess risk; `stderr` is 0 for analytic evaluations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskEstimate {
    pub value: f64,
    pub stderr: f64,
}

/// A stochastic optimization problem over a ball.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    name: String,
    loss: Arc<dyn LossModel>,
    domain: Ball,
    distribution: Arc<dyn DataDistribution>,
    objective: Option<AnalyticObjective>,
    optimum: Option<Vector>,
    moment: Option<MomentAssumption>,
}

impl ProblemInstance {
    pub fn new(
        name: impl Into<String>,
        loss: Arc<dyn LossModel>,
        domain: Ball,
        distribution: Arc<dyn DataDistribution>,
    ) -> Result<Self> {
        check_dim(loss.row_len(domain.dim()), distribution.row_len())?;
        Ok(ProblemInstance {
            name: name.into(),
            loss,
            domain,
            distribution,
            objective: None,
            optimum: None,
            moment: None,
        })
    }

    /// Attaches the population objective and computes its minimizer.
    pub fn with_objective(mut self, objective: AnalyticObjective) -> Result<Self> {
        check_dim(self.domain.dim(), objective.dim())?;
        let optimum = Vector::new(objective.minimizer(&self.domain))?;
        self.objective = Some(objective);
        self.optimum = Some(optimum);
        Ok(self)
    }

    /// Supplies a best-known minimizer for Monte-Carlo evaluation.
    pub fn with_reference(mut self, reference: Vector) -> Result<Self> {
        check_dim(self.domain.dim(), reference.dim())?;
        if self.objective.is_none() {
            self.optimum = Some(reference);
        }
        Ok(self)
    }

    pub fn with_moment(mut self, moment: MomentAssumption) -> Self {
        self.moment = Some(moment);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn loss(&self) -> &dyn LossModel {
        self.loss.as_ref()
    }

    pub fn domain(&self) -> &Ball {
        &self.domain
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn distribution(&self) -> &dyn DataDistribution {
        self.distribution.as_ref()
    }

    pub fn objective(&self) -> Option<&AnalyticObjective> {
        self.objective.as_ref()
    }

    /// `w*` (analytic) or the reference point.
    pub fn optimum(&self) -> Option<&Vector> {
        self.optimum.as_ref()
    }

    pub fn moment(&self) -> Option<MomentAssumption> {
        self.moment
    }

    pub fn sample(&self, n: usize, rng: &mut dyn RngCore) -> Dataset {
        Dataset::sample(self.distribution.as_ref(), n, rng)
    }

    /// Excess risk of `w`: analytic when possible, otherwise Monte Carlo on
    /// [`DEFAULT_EVALUATION_SIZE`] fresh samples drawn from `rng`.
    pub fn excess_risk(&self, w: &Vector, rng: &mut dyn RngCore) -> Result<RiskEstimate> {
        check_dim(self.dim(), w.dim())?;
        if let (Some(objective), Some(optimum)) = (&self.objective, &self.optimum) {
            let value = objective.value(w) - objective.value(optimum);
            return Ok(RiskEstimate { value, stderr: 0.0 });
        }
        let eval = self.sample(DEFAULT_EVALUATION_SIZE, rng);
        self.excess_risk_monte_carlo(w, &eval)
    }

    /// Mean and standard error of `f(w, x) − f(w*, x)` over `eval`.
    pub fn excess_risk_monte_carlo(&self, w: &Vector, eval: &Dataset) -> Result<RiskEstimate> {
        check_dim(self.dim(), w.dim())?;
        let optimum = self
            .optimum
            .as_ref()
            .ok_or_else(|| Error::invalid("reference", "instance has neither an analytic optimum nor a reference"))?;
        if eval.len() < 2 {
            return Err(Error::Empty("evaluation set"));
        }
        check_dim(self.distribution.row_len(), eval.row_len())?;
        let diffs: Vec<f64> = (0..eval.len())
            .map(|i| {
                let x = eval.row(i);
                self.loss.value(w, x) - self.loss.value(optimum, x)
            })
            .collect();
        let m = diffs.len() as f64;
        let mean = diffs.iter().sum::<f64>() / m;
        let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (m - 1.0);
        Ok(RiskEstimate {
            value: mean,
            stderr: (var / m).sqrt(),
        })
    }

    /// Strong convexity and smoothness of the population objective, read off
    /// its curvature when analytic, else the per-sample loss constants.
    pub fn population_constants(&self) -> LossConstants {
        match &self.objective {
            Some(AnalyticObjective::Quadratic { curvature, .. })
            | Some(AnalyticObjective::SeparableLasso { curvature, .. }) => LossConstants {
                mu: curvature.iter().cloned().fold(f64::INFINITY, f64::min),
                beta: curvature.iter().cloned().fold(0.0, f64::max),
            },
            Some(AnalyticObjective::Linear { .. }) => LossConstants { mu: 0.0, beta: 0.0 },
            None => self.loss.constants(),
        }
    }

    /// `F(w₀) − F*` when the objective is analytic.
    pub fn initial_gap(&self, w0: &Vector) -> Option<f64> {
        let objective = self.objective.as_ref()?;
        let optimum = self.optimum.as_ref()?;
        Some(objective.value(w0) - objective.value(optimum))
    }

    /// Plug-in `(mean_i sup_{w ∈ W} ‖∇f(w, x_i)‖^k)^{1/k}` over `data`.
    pub fn plugin_sup_moment(&self, k: f64, data: &Dataset) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::Empty("moment sample"));
        }
        check_dim(self.distribution.row_len(), data.row_len())?;
        let mut total = 0.0;
        for i in 0..data.len() {
            let sup = self.loss.sup_gradient_norm(data.row(i), &self.domain).ok_or_else(|| {
                Error::invalid(
                    "loss",
                    format!("{} has no closed-form gradient bound", self.loss.name()),
                )
            })?;
            total += sup.powf(k);
        }
        Ok((total / data.len() as f64).powf(1.0 / k))
    }

    /// [`Self::plugin_sup_moment`] on `size` samples drawn with a fixed seed.
    pub fn plugin_sup_moment_seeded(&self, k: f64, size: usize, seed: u64) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = self.sample(size, &mut rng);
        self.plugin_sup_moment(k, &data)
    }
}

/// Mean and second moment of a scalar law.
fn law_moments(law: &ScalarLaw) -> Result<(f64, f64)> {
    Ok(match law {
        ScalarLaw::Zero => (0.0, 0.0),
        ScalarLaw::Normal { sd } => (0.0, sd * sd),
        ScalarLaw::TruncatedNormal(t) => (t.mean(), t.variance() + t.mean() * t.mean()),
        ScalarLaw::Pareto(p) => (p.mean()?, p.raw_moment(2.0)?),
        ScalarLaw::SymmetricLomax(s) => (0.0, s.abs_moment(2.0)?),
    })
}

/// Names accepted by [`benchmark`].
pub const BENCHMARK_NAMES: [&str; 4] = ["quadratic", "linear", "linreg", "lasso"];

/// L1 weight of the lasso benchmark.
pub const LASSO_LAMBDA: f64 = 0.05;

/// Symmetric Lomax noise with unit variance and tail index `2k + 1`, so the
/// `2k`-th moment is finite and higher ones eventually are not.
pub fn heavy_tail_noise(k: f64) -> Result<SymmetricLomax> {
    let shape = 2.0 * k + 1.0;
    SymmetricLomax::new(shape, ((shape - 1.0) * (shape - 2.0) / 2.0).sqrt())
}

/// Standard normal features truncated to `[−10¹⁰, 10¹⁰]`.
pub fn wide_truncated_normal() -> Result<ScalarLaw> {
    Ok(ScalarLaw::TruncatedNormal(truncated_normal(0.0, 1.0, -1e10, 1e10)?))
}

/// Synthetic benchmark problems on the unit ball in `dim` dimensions.
///
/// * `quadratic`: `½‖w − x‖²`, `x = ν + ξ` with `‖ν‖ = 1/2` and heavy-tailed
///   noise `ξ` ([`heavy_tail_noise`]).
/// * `linear`: `−⟨w, x⟩` with the same data law but `‖ν‖ = 1`.
/// * `linreg`: least squares on `(a, ⟨w_true, a⟩ + e)` with features and
///   response noise from [`wide_truncated_normal`], `‖w_true‖ = 1/2`.
/// * `lasso`: the `linreg` data with an added `λ‖w‖₁`, `λ =` [`LASSO_LAMBDA`].
pub fn benchmark(name: &str, dim: usize, k: f64) -> Result<ProblemInstance> {
    if dim == 0 {
        return Err(Error::invalid("d", "must be >= 1"));
    }
    let domain = Ball::centered(dim, 1.0)?;
    let direction = vec![1.0 / (dim as f64).sqrt(); dim];
    let scaled = |s: f64| direction.iter().map(|v| v * s).collect::<Vec<f64>>();
    match name {
        "quadratic" | "linear" => {
            let location = if name == "quadratic" { scaled(0.5) } else { scaled(1.0) };
            let noise = ScalarLaw::SymmetricLomax(heavy_tail_noise(k)?);
            let dist = Arc::new(LocationFamily {
                location: location.clone(),
                noise,
            });
            if name == "quadratic" {
                ProblemInstance::new(name, Arc::new(quadratic_loss()), domain, dist)?.with_objective(
                    AnalyticObjective::Quadratic {
                        curvature: vec![1.0; dim],
                        target: location,
                    },
                )
            } else {
                ProblemInstance::new(name, Arc::new(linear_loss()), domain, dist)?
                    .with_objective(AnalyticObjective::Linear { mean: location })
            }
        }
        "linreg" | "lasso" => {
            let law = wide_truncated_normal()?;
            let (mean, second) = law_moments(&law)?;
            if mean.abs() > 1e-12 {
                return Err(Error::invalid("feature law", "must have mean zero"));
            }
            let w_true = scaled(0.5);
            let dist = Arc::new(LinearModel {
                w_true: w_true.clone(),
                feature: law,
                response_noise: law,
            });
            let curvature = vec![second; dim];
            if name == "linreg" {
                ProblemInstance::new(name, Arc::new(linreg_loss()), domain, dist)?.with_objective(
                    AnalyticObjective::Quadratic {
                        curvature,
                        target: w_true,
                    },
                )
            } else {
                ProblemInstance::new(name, Arc::new(composite_lasso_loss(LASSO_LAMBDA)?), domain, dist)?.with_objective(
                    AnalyticObjective::SeparableLasso {
                        curvature,
                        target: w_true,
                        lambda: LASSO_LAMBDA,
                    },
                )
            }
        }
        other => Err(Error::Config(format!(
            "unknown problem '{other}'; valid options: {}",
            BENCHMARK_NAMES.join(", ")
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::PointMass;
    use approx::assert_abs_diff_eq;

    fn v(x: &[f64]) -> Vector {
        Vector::new(x.to_vec()).unwrap()
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(17)
    }

    #[test]
    fn quadratic_excess_risk_is_half_squared_distance() {
        let p = benchmark("quadratic", 3, 2.0).unwrap();
        let nu = p.optimum().unwrap().clone();
        assert_eq!(p.excess_risk(&nu, &mut rng()).unwrap().value, 0.0);
        let w = v(&[0.0, 0.0, 0.0]);
        assert_abs_diff_eq!(p.excess_risk(&w, &mut rng()).unwrap().value, 0.125, epsilon = 1e-15);
    }

    #[test]
    fn linear_excess_risk_example() {
        let dist = Arc::new(PointMass { point: vec![3.0, 4.0] });
        let p = ProblemInstance::new("linear", Arc::new(linear_loss()), Ball::centered(2, 1.0).unwrap(), dist)
            .unwrap()
            .with_objective(AnalyticObjective::Linear { mean: vec![3.0, 4.0] })
            .unwrap();
        let r = p.excess_risk(&v(&[1.0, 0.0]), &mut rng()).unwrap();
        assert_abs_diff_eq!(r.value, 2.0, epsilon = 1e-15);
        let star = p.optimum().unwrap().clone();
        assert_abs_diff_eq!(p.excess_risk(&star, &mut rng()).unwrap().value, 0.0, epsilon = 1e-15);

        let zero_mean = ProblemInstance::new(
            "linear",
            Arc::new(linear_loss()),
            Ball::centered(2, 1.0).unwrap(),
            Arc::new(PointMass { point: vec![0.0, 0.0] }),
        )
        .unwrap()
        .with_objective(AnalyticObjective::Linear { mean: vec![0.0, 0.0] })
        .unwrap();
        assert_eq!(zero_mean.excess_risk(&v(&[0.3, -0.7]), &mut rng()).unwrap().value, 0.0);
    }

    #[test]
    fn monte_carlo_agrees_with_analytic() {
        let p = benchmark("quadratic", 2, 2.0).unwrap();
        let w = v(&[-0.4, 0.2]);
        let analytic = p.excess_risk(&w, &mut rng()).unwrap().value;
        let eval = p.sample(DEFAULT_EVALUATION_SIZE, &mut rng());
        let mc = p.excess_risk_monte_carlo(&w, &eval).unwrap();
        assert!(mc.stderr > 0.0);
        assert!((mc.value - analytic).abs() <= 3.0 * mc.stderr, "{mc:?} vs {analytic}");
    }

    #[test]
    fn weighted_projection_satisfies_kkt() {
        let ball = Ball::centered(3, 1.0).unwrap();
        let curvature = [1.0, 4.0, 0.5];
        let target = [2.0, -1.0, 0.5];
        let w = weighted_projection(&curvature, &target, &ball);
        assert_abs_diff_eq!(norm(&w), 1.0, epsilon = 1e-12);
        // Gradient a∘(w − t) must be anti-parallel to w.
        let grad: Vec<f64> = (0..3).map(|j| curvature[j] * (w[j] - target[j])).collect();
        let cosine = dot(&grad, &w) / (norm(&grad) * norm(&w));
        assert_abs_diff_eq!(cosine, -1.0, epsilon = 1e-10);
        // No feasible grid point beats it.
        let best = weighted_gap(&curvature, &target, &w);
        for i in 0..40 {
            for j in 0..40 {
                let th = std::f64::consts::PI * i as f64 / 39.0;
                let ph = 2.0 * std::f64::consts::PI * j as f64 / 40.0;
                let p = [th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos()];
                assert!(weighted_gap(&curvature, &target, &p) >= best - 1e-12);
            }
        }
    }

    #[test]
    fn lasso_minimizer_is_soft_threshold() {
        let obj = AnalyticObjective::SeparableLasso {
            curvature: vec![1.0, 2.0],
            target: vec![0.3, -0.02],
            lambda: 0.1,
        };
        let w = obj.minimizer(&Ball::centered(2, 1.0).unwrap());
        assert_abs_diff_eq!(w[0], 0.2, epsilon = 1e-15);
        assert_eq!(w[1], 0.0);
    }

    #[test]
    fn linreg_objective_matches_monte_carlo() {
        let p = benchmark("linreg", 2, 2.0).unwrap();
        let w = v(&[0.1, -0.6]);
        let analytic = p.excess_risk(&w, &mut rng()).unwrap().value;
        let mc = p.excess_risk_monte_carlo(&w, &p.sample(200_000, &mut rng())).unwrap();
        assert!((mc.value - analytic).abs() <= 4.0 * mc.stderr, "{mc:?} vs {analytic}");

        let lasso = benchmark("lasso", 2, 2.0).unwrap();
        let analytic = lasso.excess_risk(&w, &mut rng()).unwrap().value;
        let mc = lasso
            .excess_risk_monte_carlo(&w, &lasso.sample(200_000, &mut rng()))
            .unwrap();
        assert!((mc.value - analytic).abs() <= 4.0 * mc.stderr, "{mc:?} vs {analytic}");
    }

    #[test]
    fn plugin_moment_and_errors() {
        let p = ProblemInstance::new(
            "q",
            Arc::new(quadratic_loss()),
            Ball::centered(1, 1.0).unwrap(),
            Arc::new(PointMass { point: vec![2.0] }),
        )
        .unwrap();
        let data = p.sample(5, &mut rng());
        assert_abs_diff_eq!(p.plugin_sup_moment(2.0, &data).unwrap(), 3.0, epsilon = 1e-12);
        assert!(p.excess_risk(&v(&[0.0]), &mut rng()).is_err());
        assert!(benchmark("logistic", 2, 2.0).is_err());
        let noise = heavy_tail_noise(2.0).unwrap();
        assert_abs_diff_eq!(noise.abs_moment(2.0).unwrap(), 1.0, epsilon = 1e-12);
    }
}
