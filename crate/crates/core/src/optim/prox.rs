use rand::RngCore;

use super::trace::Recorder;
use super::{check_inputs, GradientOracle, MomentBounds, OptimizerConfig, PhaseBudget, RunOutput};
use crate::data::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::losses::{LossModel, ProxOperator};
use crate::math::{project_ball_into, Ball, Domain, LocalizedDomain, Vector};
use crate::privacy::Accounting;

/// Resolved parameters of a proximal SGD run.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxSchedule {
    pub iterations: u64,
    pub batch_size: usize,
    pub clip: f64,
    pub eta: f64,
    pub warnings: Vec<String>,
}

/// Plug-in `B² + Σ²` at a real iteration count `t`.
fn error_floor(t: f64, nf: f64, d: f64, eps: f64, m: &MomentBounds) -> f64 {
    let r = m.r_pointwise();
    let clip = clip_at(t, nf, d, eps, m);
    let sigma2 = 4.0 * clip * clip * t * t / (nf * nf * eps * eps);
    let bias = m.bias_bound(clip);
    bias * bias + d * sigma2 + r * r * t / nf
}

fn clip_at(t: f64, nf: f64, d: f64, eps: f64, m: &MomentBounds) -> f64 {
    m.r_pointwise() * (eps * eps * nf * nf / (d * t * t)).powf(0.5 / m.k())
}

/// Iteration count, clip level and step size for `n` samples.
pub fn prox_defaults(n: usize, dim: usize, config: &OptimizerConfig) -> Result<ProxSchedule> {
    if n == 0 {
        return Err(Error::Empty("data"));
    }
    let eta = match config.eta {
        Some(eta) => eta,
        None if config.beta > 0.0 => 0.5 / config.beta,
        None => return Err(Error::invalid("beta", "default step 1/(2 beta) needs beta > 0")),
    };
    let nf = n as f64;
    let d = dim as f64;
    let mut warnings = Vec::new();
    let iterations = match (config.overrides.iterations, config.epsilon(), config.moment) {
        (Some(t), _, _) => t,
        (None, Some(eps), Some(m)) => {
            let (mu, beta) = (config.mu, config.beta);
            if mu.is_nan() || mu <= 0.0 {
                return Err(Error::invalid("mu", "the default iteration count needs mu > 0"));
            }
            let gap = config.initial_gap.ok_or_else(|| {
                Error::invalid("initial_gap", "the default iteration count needs a bound on F(w0) - F*")
            })?;
            let kappa = beta / mu;
            if kappa > nf / nf.ln() {
                warnings.push(format!(
                    "condition number {kappa:.3} exceeds n/ln n = {:.3}",
                    nf / nf.ln()
                ));
            }
            let rhs = |t: f64| 2.0 * kappa * (gap * mu / error_floor(t, nf, d, eps, &m)).ln();
            // t − rhs(t) is increasing because the error floor grows with t.
            let root = if rhs(1.0) <= 1.0 {
                1.0
            } else if rhs(nf) >= nf {
                nf
            } else {
                let (mut lo, mut hi) = (1.0, nf);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if mid < rhs(mid) {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                hi
            };
            let t = 2.0 * (rhs(root) / 2.0).ceil();
            if t < 1.0 || t > nf {
                warnings.push(format!("iteration count {t} clamped to [1, {n}]"));
            }
            t.clamp(1.0, nf) as u64
        }
        (None, Some(_), None) => return Err(Error::invalid("moment", "a moment bound is required by prox-sgd")),
        (None, None, _) => config.require_iterations("prox-sgd")?,
    };
    if iterations as usize > n {
        return Err(Error::invalid("iterations", format!("{iterations} exceeds n = {n}")));
    }
    let clip = match (config.overrides.clip, config.epsilon(), config.moment) {
        (Some(c), _, _) => c,
        (None, Some(eps), Some(m)) => clip_at(iterations as f64, nf, d, eps, &m),
        _ => f64::INFINITY,
    };
    Ok(ProxSchedule {
        iterations,
        batch_size: n / iterations as usize,
        clip,
        eta,
        warnings,
    })
}

/// `prox` of the non-smooth part, intersected with `domain` when given.
enum ProxStep {
    Plain(ProxOperator),
    ThenProject(ProxOperator, Ball),
    Intersection(Domain),
}

impl ProxStep {
    fn new(prox: ProxOperator, domain: Option<&Ball>) -> Result<ProxStep> {
        let Some(ball) = domain else {
            return Ok(ProxStep::Plain(prox));
        };
        match prox {
            ProxOperator::Zero => Ok(ProxStep::ThenProject(prox, ball.clone())),
            // Soft thresholding commutes with radial scaling, so projecting
            // afterwards is the exact prox of λ‖·‖₁ plus a centered ball.
            ProxOperator::L1 { .. } if ball.center().norm() == 0.0 => Ok(ProxStep::ThenProject(prox, ball.clone())),
            ProxOperator::L1 { .. } => Err(Error::invalid(
                "domain",
                "an l1 part needs a ball centered at the origin",
            )),
            ProxOperator::BallIndicator(inner) => {
                check_dim(ball.dim(), inner.dim())?;
                Ok(ProxStep::Intersection(Domain::Localized(LocalizedDomain::new(
                    ball.clone(),
                    inner,
                )?)))
            }
        }
    }

    fn apply(&self, z: &[f64], eta: f64, out: &mut [f64], scratch: &mut [f64]) -> Result<()> {
        match self {
            ProxStep::Plain(prox) => prox.apply_into(z, eta, out),
            ProxStep::ThenProject(prox, ball) => {
                prox.apply_into(z, eta, scratch);
                project_ball_into(scratch, ball, out);
            }
            ProxStep::Intersection(domain) => domain.project_into(z, out)?,
        }
        Ok(())
    }
}

/// One-pass noisy clipped proximal SGD for composite losses `f⁰ + f¹`;
/// only the smooth part's gradients pass through the oracle. Returns the
/// last iterate.
pub fn prox_clipped_sgd(
    data: &Dataset,
    loss: &dyn LossModel,
    domain: Option<&Ball>,
    w0: &Vector,
    config: &OptimizerConfig,
    rng: &mut dyn RngCore,
) -> Result<RunOutput> {
    let dim = w0.dim();
    match domain {
        Some(ball) => check_inputs(data, loss, ball, w0)?,
        None => check_dim(loss.row_len(dim), data.row_len())?,
    }
    config.validate()?;
    let prox = loss
        .prox_part()
        .or_else(|| config.composite.clone())
        .ok_or_else(|| Error::invalid("loss", format!("{} has no prox decomposition", loss.name())))?;
    let prox_step = ProxStep::new(prox, domain)?;
    let schedule = prox_defaults(data.len(), dim, config)?;
    let shuffled = data.shuffled(rng);
    let mut accounting = Accounting::for_budget(config.budget.as_ref());
    let mut recorder = Recorder::new(config.trace, config.reference.as_ref());
    schedule.warnings.iter().for_each(|w| recorder.warn(w.clone()));
    let mut oracle = GradientOracle::new(loss, config.oracle, dim, true);

    let mut w = w0.as_slice().to_vec();
    let mut z = vec![0.0; dim];
    let mut scratch = vec![0.0; dim];
    let mut last = (0.0, 0.0);
    for t in 0..schedule.iterations {
        let budget = PhaseBudget::open_step(&mut accounting, config.budget.as_ref(), format!("prox step {t}"), t)?;
        let batch = shuffled.batch(t as usize * schedule.batch_size, schedule.batch_size);
        let (estimate, sigma2) = oracle.query(&w, batch, schedule.clip, budget.step, rng)?;
        for j in 0..dim {
            z[j] = w[j] - schedule.eta * estimate[j];
        }
        prox_step.apply(&z, schedule.eta, &mut w, &mut scratch)?;
        last = (budget.spent_after(1), sigma2);
        recorder.step(1, &w, last.0, schedule.clip, sigma2);
    }
    recorder.phase_end(1, &w, last.0, schedule.clip, last.1);
    Ok(RunOutput {
        iterate: Vector::from_trusted(w),
        trace: recorder.trace,
        accounting,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::PointMass;
    use crate::losses::{linear_loss, quadratic_loss, QuadraticLoss};
    use crate::privacy::{Budget, ZcdpBudget};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn noiseless_linear_rate() {
        let loss = QuadraticLoss::diagonal(vec![1.0, 3.0]).unwrap();
        let target = [0.4, -0.1];
        let data = Dataset::sample(
            &PointMass { point: target.to_vec() },
            40,
            &mut ChaCha8Rng::seed_from_u64(0),
        );
        let w0 = Vector::new(vec![-1.0, 1.0]).unwrap();
        let gap0 = loss.value(w0.as_slice(), &target);
        for t in [1u64, 5, 20] {
            let mut cfg = OptimizerConfig::new(None, &loss);
            cfg.composite = Some(ProxOperator::Zero);
            cfg.overrides.iterations = Some(t);
            let out = prox_clipped_sgd(&data, &loss, None, &w0, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
            let gap = loss.value(out.iterate.as_slice(), &target);
            assert!(gap <= (1.0 - 1.0 / 6.0f64).powi(t as i32) * gap0 * (1.0 + 1e-12));
        }
    }

    #[test]
    fn soft_threshold_step() {
        let loss = linear_loss();
        // Gradient of the linear loss is the row; a zero row leaves only the prox.
        let data = Dataset::new(2, vec![0.0, 0.0]).unwrap();
        let mut cfg = OptimizerConfig::new(None, &loss);
        cfg.composite = Some(ProxOperator::L1 { lambda: 1.0 });
        cfg.overrides.iterations = Some(1);
        cfg.eta = Some(1.0);
        let w0 = Vector::new(vec![2.0, -0.5]).unwrap();
        let out = prox_clipped_sgd(&data, &loss, None, &w0, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(out.iterate.as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn ball_indicator_is_projection_and_missing_prox_errors() {
        let loss = quadratic_loss();
        let data = Dataset::new(2, vec![3.0, 0.0]).unwrap();
        let mut cfg = OptimizerConfig::new(None, &loss);
        cfg.overrides.iterations = Some(1);
        let w0 = Vector::zeros(2);
        assert!(prox_clipped_sgd(&data, &loss, None, &w0, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
        cfg.composite = Some(ProxOperator::BallIndicator(Ball::centered(2, 1.0).unwrap()));
        cfg.eta = Some(1.0);
        let out = prox_clipped_sgd(&data, &loss, None, &w0, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(out.iterate.as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn private_defaults() {
        let loss = quadratic_loss();
        let budget = Budget::Zcdp(ZcdpBudget::from_epsilon(1.0).unwrap());
        let mut cfg = OptimizerConfig::new(Some(budget), &loss).with_moment(MomentBounds::new(2.0, 1.0).unwrap());
        assert!(prox_defaults(4096, 4, &cfg).is_err());
        cfg.initial_gap = Some(2.0);
        let s = prox_defaults(4096, 4, &cfg).unwrap();
        assert!(s.iterations >= 1 && s.iterations <= 4096);
        assert_eq!(s.eta, 0.5);
        assert!(s.clip.is_finite() && s.clip > 0.0);
    }
}
