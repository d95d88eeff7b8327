use rand::RngCore;

use super::trace::Recorder;
use super::{check_inputs, GradientOracle, OptimizerConfig, PhaseBudget, RunOutput};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::LossModel;
use crate::math::{project_ball_into, Ball, Vector};
use crate::privacy::Accounting;

/// Resolved parameters of an accelerated run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcsaSchedule {
    pub iterations: u64,
    pub batch_size: usize,
    pub clip: f64,
    /// Base step size `η`; step `t` uses `4η/(t(t+1))`.
    pub eta: f64,
    /// Plug-in clipping bias bound `B`.
    pub bias: f64,
    /// Plug-in variance bound `Σ²`.
    pub variance: f64,
}

/// Default iteration count, clip level and step size for `n` samples.
pub fn acsa_defaults(n: usize, dim: usize, diameter: f64, config: &OptimizerConfig) -> Result<AcsaSchedule> {
    if n == 0 {
        return Err(Error::Empty("data"));
    }
    let nf = n as f64;
    let d = dim as f64;
    let beta = config.beta;
    let moment = config.moment;
    let iterations = match (config.overrides.iterations, config.epsilon(), moment) {
        (Some(t), _, _) => t,
        (None, Some(eps), Some(m)) => {
            let k = m.k();
            let scale = beta * diameter / m.r_pointwise();
            let privacy =
                scale.powf(2.0 * k / (5.0 * k - 1.0)) * (eps * nf / d.sqrt()).powf((2.0 * k - 2.0) / (5.0 * k - 1.0));
            let statistical = scale.sqrt() * nf.powf(0.25);
            privacy.min(statistical).ceil().clamp(1.0, nf) as u64
        }
        (None, Some(_), None) => return Err(Error::invalid("moment", "a moment bound is required by acsa")),
        (None, None, _) => config.require_iterations("acsa")?,
    };
    if iterations as usize > n {
        return Err(Error::invalid("iterations", format!("{iterations} exceeds n = {n}")));
    }
    let batch_size = n / iterations as usize;
    let t = iterations as f64;
    let (clip, bias, variance) = match (config.overrides.clip, config.epsilon(), moment) {
        (clip, Some(eps), Some(m)) => {
            let c = clip.unwrap_or_else(|| m.r_pointwise() * (eps * nf / (d * t).sqrt()).powf(1.0 / m.k()));
            let s = batch_size as f64;
            let sigma2 = 4.0 * c * c / (s * s * eps * eps);
            let r = m.r_pointwise();
            (c, m.bias_bound(c), d * sigma2 + r * r / s)
        }
        (clip, _, Some(m)) => {
            let c = clip.unwrap_or(f64::INFINITY);
            let r = m.r_pointwise();
            let bias = if c.is_finite() { m.bias_bound(c) } else { 0.0 };
            (c, bias, r * r / batch_size as f64)
        }
        (clip, _, None) => (clip.unwrap_or(f64::INFINITY), 0.0, 0.0),
    };
    let eta = match config.eta {
        Some(eta) => eta,
        None => {
            let noise_term = t.powf(1.5) * (variance + bias * bias).sqrt() / diameter;
            let eta = (2.0 * beta).max(noise_term);
            if eta.is_nan() || eta <= 0.0 {
                return Err(Error::invalid(
                    "eta",
                    "beta = 0 and zero noise leave no default step size",
                ));
            }
            eta
        }
    };
    Ok(AcsaSchedule {
        iterations,
        batch_size,
        clip,
        eta,
        bias,
        variance,
    })
}

/// One-pass noisy clipped accelerated stochastic approximation; returns the
/// aggregate iterate.
pub fn acsa(
    data: &Dataset,
    loss: &dyn LossModel,
    domain: &Ball,
    w0: &Vector,
    config: &OptimizerConfig,
    rng: &mut dyn RngCore,
) -> Result<RunOutput> {
    check_inputs(data, loss, domain, w0)?;
    config.validate()?;
    let schedule = acsa_defaults(data.len(), domain.dim(), domain.diameter(), config)?;
    let shuffled = data.shuffled(rng);
    let mut accounting = Accounting::for_budget(config.budget.as_ref());
    let mut recorder = Recorder::new(config.trace, config.reference.as_ref());
    let dim = domain.dim();
    let mut oracle = GradientOracle::new(loss, config.oracle, dim, false);

    let mut w = w0.as_slice().to_vec();
    let mut aggregate = w.clone();
    let mut middle = vec![0.0; dim];
    let mut z = vec![0.0; dim];
    let mut last = (0.0, 0.0);
    for t in 1..=schedule.iterations {
        let tf = t as f64;
        let alpha = 2.0 / (tf + 1.0);
        let step = tf / (2.0 * schedule.eta);
        for j in 0..dim {
            middle[j] = (1.0 - alpha) * aggregate[j] + alpha * w[j];
        }
        let budget = PhaseBudget::open_step(&mut accounting, config.budget.as_ref(), format!("acsa step {t}"), t - 1)?;
        let batch = shuffled.batch((t as usize - 1) * schedule.batch_size, schedule.batch_size);
        let (estimate, sigma2) = oracle.query(&middle, batch, schedule.clip, budget.step, rng)?;
        for j in 0..dim {
            z[j] = w[j] - step * estimate[j];
        }
        project_ball_into(&z, domain, &mut w);
        for j in 0..dim {
            aggregate[j] = alpha * w[j] + (1.0 - alpha) * aggregate[j];
        }
        last = (budget.spent_after(1), sigma2);
        recorder.step(1, &aggregate, last.0, schedule.clip, sigma2);
    }
    recorder.phase_end(1, &aggregate, last.0, schedule.clip, last.1);
    Ok(RunOutput {
        iterate: Vector::from_trusted(aggregate),
        trace: recorder.trace,
        accounting,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::PointMass;
    use crate::losses::quadratic_loss;
    use crate::optim::MomentBounds;
    use crate::privacy::{Budget, ZcdpBudget};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn step_size_formulas() {
        // α₃ = 1/2 and η₃ = 4η/12 = η/3.
        let t = 3.0f64;
        assert_eq!(2.0 / (t + 1.0), 0.5);
        assert_eq!(4.0 / (t * (t + 1.0)), 1.0 / 3.0);
    }

    #[test]
    fn noiseless_rate_on_quadratic() {
        let loss = quadratic_loss();
        let target = [0.6, -0.3];
        let data = Dataset::sample(
            &PointMass { point: target.to_vec() },
            64,
            &mut ChaCha8Rng::seed_from_u64(0),
        );
        let domain = Ball::centered(2, 1.0).unwrap();
        let w0 = Vector::new(vec![-0.6, 0.7]).unwrap();
        for t in [2u64, 8, 32] {
            let mut cfg = OptimizerConfig::new(None, &loss);
            cfg.overrides.iterations = Some(t);
            cfg.eta = Some(2.0);
            let out = acsa(&data, &loss, &domain, &w0, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
            let gap = loss.value(out.iterate.as_slice(), &target);
            let dist2: f64 = w0.as_slice().iter().zip(target).map(|(a, b)| (a - b).powi(2)).sum();
            assert!(gap <= 4.0 * 2.0 * dist2 / (t * (t + 1)) as f64, "T={t}: {gap}");
        }
    }

    #[test]
    fn private_defaults_are_consistent() {
        let loss = quadratic_loss();
        let budget = Budget::Zcdp(ZcdpBudget::from_epsilon(1.0).unwrap());
        let cfg = OptimizerConfig::new(Some(budget), &loss).with_moment(MomentBounds::new(2.0, 2.0).unwrap());
        let s = acsa_defaults(1000, 4, 2.0, &cfg).unwrap();
        assert!(s.iterations >= 1 && s.iterations <= 1000);
        assert_eq!(s.batch_size, 1000 / s.iterations as usize);
        assert!(s.eta >= 2.0);
        let mut data_rng = ChaCha8Rng::seed_from_u64(4);
        let dist = crate::data::LocationFamily {
            location: vec![0.1; 4],
            noise: crate::data::ScalarLaw::Normal { sd: 1.0 },
        };
        let data = Dataset::sample(&dist, 1000, &mut data_rng);
        let domain = Ball::centered(4, 1.0).unwrap();
        let out = acsa(&data, &loss, &domain, &Vector::zeros(4), &cfg, &mut data_rng).unwrap();
        assert!(domain.contains(out.iterate.as_slice(), 1e-9));
        assert!(out.accounting.audit(cfg.budget.as_ref()).unwrap().reconciled);
    }
}
