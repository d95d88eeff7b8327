use rand::RngCore;

use super::trace::Recorder;
use super::{check_inputs, GradientOracle, OptimizerConfig, PhaseBudget, RunOutput};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::LossModel;
use crate::math::{project_ball_into, Ball, Vector};
use crate::privacy::Accounting;

/// Step sizes and averaging weights for steps `t = 0..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct StichSchedule {
    pub step_sizes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Two-phase schedule for a strongly convex (`a`) and smooth (`g`)
/// objective over `T + 1` steps. Short horizons (`T ≤ g/a`) keep the step
/// `1/g` with exponentially growing weights; longer ones switch at
/// `t₀ = ⌈T/2⌉` to `2/(a(s₀ + t − t₀))` with quadratic weights, `s₀ = 2g/a`,
/// and give the constant-step prefix zero weight.
pub fn stich_schedule(horizon: u64, a: f64, g: f64) -> Result<StichSchedule> {
    if !(a > 0.0 && g >= a && g.is_finite()) {
        return Err(Error::invalid(
            "a/g",
            format!("need 0 < a <= g < inf, got a = {a}, g = {g}"),
        ));
    }
    let steps = horizon as usize + 1;
    let mut step_sizes = vec![1.0 / g; steps];
    let mut weights = vec![0.0; steps];
    if horizon as f64 <= g / a {
        let ratio = 1.0 / (1.0 - a / g);
        // Weights rescaled by (1 − a/g)^{T+1} so the largest one is 1.
        for (t, w) in weights.iter_mut().enumerate() {
            *w = ratio.powi(t as i32 - horizon as i32);
        }
    } else {
        let switch = horizon.div_ceil(2) as usize;
        let offset = 2.0 * g / a;
        for t in switch..steps {
            let shifted = offset + (t - switch) as f64;
            step_sizes[t] = 2.0 / (a * shifted);
            weights[t] = shifted * shifted;
        }
    }
    Ok(StichSchedule { step_sizes, weights })
}

/// Resolved parameters of a strongly convex SGD run.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdScSchedule {
    /// `T`; the run takes `T + 1` steps.
    pub horizon: u64,
    pub batch_size: usize,
    pub clip: f64,
    pub steps: StichSchedule,
    pub warnings: Vec<String>,
}

/// Horizon, clip level and step schedule for `n` samples.
pub fn sgd_sc_defaults(n: usize, dim: usize, diameter: f64, config: &OptimizerConfig) -> Result<SgdScSchedule> {
    let (mu, beta) = (config.mu, config.beta);
    if mu.is_nan() || mu <= 0.0 || beta < mu {
        return Err(Error::invalid(
            "mu/beta",
            format!("need 0 < mu <= beta, got mu = {mu}, beta = {beta}"),
        ));
    }
    if n < 2 {
        return Err(Error::invalid("n", "need at least 2 samples"));
    }
    let kappa = beta / mu;
    let nf = n as f64;
    let d = dim as f64;
    let mut warnings = Vec::new();
    if kappa > nf / nf.ln() {
        warnings.push(format!(
            "condition number {kappa:.3} exceeds n/ln n = {:.3}",
            nf / nf.ln()
        ));
    }
    let moment = config.moment;
    let mut horizon = match (config.overrides.iterations, config.epsilon(), moment) {
        (Some(t), _, _) => t,
        (None, Some(eps), Some(m)) => {
            let k = m.k();
            let r = m.r_pointwise();
            let arg = mu * beta * diameter * diameter / (r * r) * (nf + (eps * eps * nf * nf / d).powf((k - 1.0) / k));
            (4.0 * kappa * arg.ln()).ceil().max(1.0) as u64
        }
        (None, Some(_), None) => return Err(Error::invalid("moment", "a moment bound is required by sgd-sc")),
        (None, None, _) => config.require_iterations("sgd-sc")?,
    };
    if horizon as usize >= n {
        warnings.push(format!("horizon {horizon} clamped to n - 1 = {}", n - 1));
        horizon = n as u64 - 1;
    }
    let t = horizon as f64;
    let clip = match (config.overrides.clip, config.epsilon(), moment) {
        (Some(c), _, _) => c,
        (None, Some(eps), Some(m)) => m.r_pointwise() * (eps * eps * nf * nf / (d * t)).powf(0.5 / m.k()),
        _ => f64::INFINITY,
    };
    Ok(SgdScSchedule {
        horizon,
        batch_size: n / (horizon as usize + 1),
        clip,
        steps: stich_schedule(horizon, mu / 2.0, beta)?,
        warnings,
    })
}

/// One-pass noisy clipped SGD for strongly convex smooth losses; returns
/// the weighted average of the iterates `w₁, …, w_{T+1}`.
pub fn clipped_sgd_sc(
    data: &Dataset,
    loss: &dyn LossModel,
    domain: &Ball,
    w0: &Vector,
    config: &OptimizerConfig,
    rng: &mut dyn RngCore,
) -> Result<RunOutput> {
    check_inputs(data, loss, domain, w0)?;
    config.validate()?;
    let schedule = sgd_sc_defaults(data.len(), domain.dim(), domain.diameter(), config)?;
    let shuffled = data.shuffled(rng);
    let mut accounting = Accounting::for_budget(config.budget.as_ref());
    let mut recorder = Recorder::new(config.trace, config.reference.as_ref());
    schedule.warnings.iter().for_each(|w| recorder.warn(w.clone()));
    let dim = domain.dim();
    let mut oracle = GradientOracle::new(loss, config.oracle, dim, false);

    let mut w = w0.as_slice().to_vec();
    let mut z = vec![0.0; dim];
    let mut average = vec![0.0; dim];
    let mut total_weight = 0.0;
    let mut last = (0.0, 0.0);
    for (t, (&eta, &weight)) in schedule
        .steps
        .step_sizes
        .iter()
        .zip(&schedule.steps.weights)
        .enumerate()
    {
        let budget = PhaseBudget::open_step(
            &mut accounting,
            config.budget.as_ref(),
            format!("sgd-sc step {t}"),
            t as u64,
        )?;
        let batch = shuffled.batch(t * schedule.batch_size, schedule.batch_size);
        let (estimate, sigma2) = oracle.query(&w, batch, schedule.clip, budget.step, rng)?;
        for j in 0..dim {
            z[j] = w[j] - eta * estimate[j];
        }
        project_ball_into(&z, domain, &mut w);
        if weight > 0.0 {
            total_weight += weight;
            let share = weight / total_weight;
            for (a, wj) in average.iter_mut().zip(&w) {
                *a += share * (wj - *a);
            }
        }
        last = (budget.spent_after(1), sigma2);
        recorder.step(1, &w, last.0, schedule.clip, sigma2);
    }
    recorder.phase_end(1, &average, last.0, schedule.clip, last.1);
    Ok(RunOutput {
        iterate: Vector::from_trusted(average),
        trace: recorder.trace,
        accounting,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::PointMass;
    use crate::losses::QuadraticLoss;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn short_horizon_schedule() {
        let s = stich_schedule(3, 1.0, 4.0).unwrap();
        assert_eq!(s.step_sizes, vec![0.25; 4]);
        for t in 0..3 {
            assert_relative_eq!(s.weights[t + 1] / s.weights[t], 4.0 / 3.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn long_horizon_schedule_is_continuous() {
        let s = stich_schedule(20, 1.0, 2.0).unwrap();
        assert_eq!(s.weights[..10], [0.0; 10]);
        assert_relative_eq!(s.step_sizes[10], 0.5, max_relative = 1e-12);
        assert_relative_eq!(s.weights[10], 16.0);
        assert_relative_eq!(s.step_sizes[20], 2.0 / 14.0, max_relative = 1e-12);
        assert!(s.step_sizes.windows(2).all(|p| p[1] <= p[0]));
    }

    #[test]
    fn noiseless_run_stays_in_hull_and_converges() {
        let loss = QuadraticLoss::diagonal(vec![1.0, 4.0]).unwrap();
        let target = [0.3, -0.2];
        let data = Dataset::sample(
            &PointMass { point: target.to_vec() },
            200,
            &mut ChaCha8Rng::seed_from_u64(0),
        );
        let domain = Ball::centered(2, 1.0).unwrap();
        let w0 = Vector::new(vec![-0.7, 0.7]).unwrap();
        let mut cfg = OptimizerConfig::new(None, &loss);
        cfg.overrides.iterations = Some(60);
        let out = clipped_sgd_sc(&data, &loss, &domain, &w0, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(domain.contains(out.iterate.as_slice(), 1e-9));
        let gap = loss.value(out.iterate.as_slice(), &target);
        let bound = 32.0 * 4.0 * 4.0 * (-60.0f64 / 16.0).exp();
        assert!(gap <= bound, "{gap} > {bound}");
    }
}
