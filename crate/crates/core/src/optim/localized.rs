//! Noisy clipped regularized subgradient descent and its localized,
//! multi-phase driver, plus the reduction that chains localized runs for
//! strongly convex objectives.

use rand::RngCore;

use super::trace::Recorder;
use super::{check_inputs, GradientOracle, OptimizerConfig, PhaseBudget, RunOutput, TraceLevel};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::LossModel;
use crate::math::{Ball, Domain, LocalizedDomain, Vector};
use crate::oracles::{OracleKind, StepBudget};
use crate::privacy::{Accounting, Budget};

/// Inputs of one regularized subgradient run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubgradientParams {
    /// Weight of `½‖w − w₀‖²`; `0` disables regularization.
    pub lambda: f64,
    pub eta: f64,
    pub iterations: u64,
    pub clip: f64,
    /// Total budget of the run, split evenly over its iterations.
    pub budget: Option<Budget>,
    pub oracle: OracleKind,
}

/// `T` steps of `w ← Π[w − η(ν̃ + λ(w − w₀))]`, where `ν̃` is the oracle's
/// estimate of the mean clipped loss subgradient at `w`. The regularizer's
/// gradient is added after the oracle and is never clipped.
pub fn clipped_regularized_subgradient(
    batch: &Dataset,
    loss: &dyn LossModel,
    domain: &Domain,
    w0: &Vector,
    params: &SubgradientParams,
    rng: &mut dyn RngCore,
) -> Result<RunOutput> {
    if params.iterations == 0 {
        return Err(Error::invalid("iterations", "must be >= 1"));
    }
    if params.lambda.is_nan() || params.lambda < 0.0 {
        return Err(Error::invalid("lambda", format!("must be >= 0, got {}", params.lambda)));
    }
    if !(params.eta > 0.0 && params.eta.is_finite()) {
        return Err(Error::invalid(
            "eta",
            format!("must be finite and > 0, got {}", params.eta),
        ));
    }
    if params.lambda > 0.0 && params.eta > 2.0 / params.lambda {
        return Err(Error::invalid(
            "eta",
            format!("must be <= 2/lambda = {}", 2.0 / params.lambda),
        ));
    }
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    crate::error::check_dim(domain.dim(), w0.dim())?;
    crate::error::check_dim(loss.row_len(domain.dim()), batch.row_len())?;
    let mut accounting = Accounting::for_budget(params.budget.as_ref());
    let phase_budget = PhaseBudget::open(
        &mut accounting,
        params.budget.as_ref(),
        "subgradient".into(),
        params.iterations,
        0,
        0,
    )?;
    let mut recorder = Recorder::new(TraceLevel::Phase, None);
    let step = PhaseStep {
        lambda: params.lambda,
        eta: params.eta,
        iterations: params.iterations,
        clip: params.clip,
        phase: 1,
    };
    let (w, sigma2) = run_phase(
        loss,
        params.oracle,
        batch.rows(),
        domain,
        w0,
        &step,
        &phase_budget,
        &mut recorder,
        rng,
    )?;
    recorder.phase_end(1, &w, phase_budget.spent_after(params.iterations), params.clip, sigma2);
    Ok(RunOutput {
        iterate: Vector::from_trusted(w),
        trace: recorder.trace,
        accounting,
    })
}

struct PhaseStep {
    lambda: f64,
    eta: f64,
    iterations: u64,
    clip: f64,
    phase: u32,
}

/// Runs one phase and returns the final iterate with the last noise variance.
#[allow(clippy::too_many_arguments)]
fn run_phase(
    loss: &dyn LossModel,
    oracle: OracleKind,
    rows: &[f64],
    domain: &Domain,
    anchor: &[f64],
    step: &PhaseStep,
    budget: &PhaseBudget,
    recorder: &mut Recorder<'_>,
    rng: &mut dyn RngCore,
) -> Result<(Vec<f64>, f64)> {
    let dim = anchor.len();
    let mut w = anchor.to_vec();
    let mut z = vec![0.0; dim];
    let mut gradients = GradientOracle::new(loss, oracle, dim, false);
    let s = rows.len() / gradients.row_len;

    // Affine losses have the same batch gradients at every w, so central
    // oracles can reuse the clipped aggregate and only redraw the noise.
    let cached = if loss.gradient_is_constant() && !oracle.is_shuffle() {
        let mut grads = vec![0.0; s * dim];
        super::batch_gradients(loss, &w, rows, gradients.row_len, &mut grads, false);
        let pre = oracle.pre_noise(&grads, dim, step.clip)?;
        let sigma2 = match budget.step {
            StepBudget::Zcdp(rho) => oracle.central_sigma_squared(s, dim, step.clip, rho)?,
            _ => 0.0,
        };
        Some((pre, sigma2))
    } else {
        None
    };

    let mut sigma2 = 0.0;
    for t in 1..=step.iterations {
        let estimate = match &cached {
            Some((pre, var)) => {
                sigma2 = *var;
                oracle
                    .with_gaussian(pre.clone(), step.clip, *var, s, rng)?
                    .estimate
                    .into_inner()
            }
            None => {
                let (est, var) = gradients.query(&w, rows, step.clip, budget.step, rng)?;
                sigma2 = var;
                est
            }
        };
        for j in 0..dim {
            z[j] = w[j] - step.eta * (estimate[j] + step.lambda * (w[j] - anchor[j]));
        }
        domain.project_into(&z, &mut w)?;
        recorder.step(step.phase, &w, budget.spent_after(t), step.clip, sigma2);
    }
    Ok((w, sigma2))
}

/// Parameters of one localized phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalizedPhase {
    /// 1-based phase index.
    pub index: u32,
    pub batch_size: usize,
    pub eta: f64,
    pub lambda: f64,
    /// Radius of the localization ball around the previous iterate.
    pub radius: f64,
    pub clip: f64,
    pub iterations: u64,
    /// `D²λ/(dσ²η)` at the chosen iteration count (NaN when noiseless).
    pub log_argument: f64,
}

/// Default base step size: the minimum of the expressions that balance the
/// localized excess-risk terms.
fn default_eta(n: f64, dim: f64, diameter: f64, epsilon: f64, m: &super::MomentBounds) -> f64 {
    let k = m.k();
    let p = 1.0 + 1.0 / k;
    let (r_tilde, big_r, r) = (m.r_k(), m.r_2k(), m.r_pointwise());
    let ln_n = n.ln();
    let privacy_rate = (epsilon * n / (dim * ln_n).sqrt()).powf((k - 1.0) / k);
    let rate = 1.0 / n.sqrt() + 1.0 / privacy_rate;
    let eta_a = big_r * diameter * n * n / r
        * (1.0 / (r_tilde * n.powf(1.5 / k))).min((epsilon / dim.sqrt()).powf((k - 1.0) / k) / big_r)
        * rate;
    let eta_b = diameter / n.powf(p / 2.0)
        * (1.0 / (r * n.powf((p - 1.0) / 2.0)))
            .min(1.0 / (r_tilde * n.powf(0.5 / k)))
            .min(privacy_rate / (big_r * n.powf(p / 2.0)));
    eta_a.min(eta_b)
}

/// Solves `T = q·ln(A/T)` for real `T ≥ 1` by bisection on a log scale.
fn solve_iterations(q: f64, a: f64) -> f64 {
    if 1.0 >= q * a.ln() {
        return 1.0;
    }
    let h = |t: f64| t - q * (a / t).ln();
    let (mut lo, mut hi) = (0.0f64, a.ln());
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if h(mid.exp()) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi.exp()
}

/// Phase schedule for `n` samples (a power of two) in dimension `dim`
/// over a domain of diameter `diameter`; also returns warnings.
pub fn localized_schedule(
    n: usize,
    dim: usize,
    diameter: f64,
    config: &OptimizerConfig,
) -> Result<(Vec<LocalizedPhase>, Vec<String>)> {
    if n < 2 || !n.is_power_of_two() {
        return Err(Error::invalid("n", format!("must be a power of two >= 2, got {n}")));
    }
    let moment = config.moment()?;
    let k = moment.k();
    let p = 1.0 + 1.0 / k;
    let nf = n as f64;
    let d = dim as f64;
    let epsilon = config.epsilon();
    let eta = match (config.eta, epsilon) {
        (Some(eta), _) => eta,
        (None, Some(eps)) => default_eta(nf, d, diameter, eps, &moment),
        (None, None) => return Err(Error::invalid("eta", "noiseless localized runs need an explicit eta")),
    };
    let levels = n.trailing_zeros();
    let mut phases = Vec::with_capacity(levels as usize);
    let mut warnings = Vec::new();
    for i in 1..=levels {
        let batch_size = n >> i;
        let ni = batch_size as f64;
        let eta_i = eta / 4f64.powi(i as i32);
        let q = ni.powf(p);
        let lambda = 1.0 / (eta_i * q);
        let radius = 4.0 * moment.r_k() * (nf.sqrt() * 2f64.powi(i as i32)).powf(1.0 / k) / lambda;
        let clip = match (config.overrides.clip, epsilon) {
            (Some(c), _) => c,
            (None, Some(eps)) if i < levels => moment.r_2k() * (eps * ni / (d * nf.ln()).sqrt()).powf(1.0 / k),
            (None, Some(eps)) => moment.r_2k() * (eps / d.sqrt()).powf(1.0 / k),
            (None, None) => f64::INFINITY,
        };
        let (mut iterations, log_argument) = match (config.overrides.iterations, epsilon) {
            (Some(t), eps) => {
                let arg = eps.map_or(f64::NAN, |e| {
                    diameter * diameter * lambda * ni * ni * e * e / (4.0 * d * clip * clip * t as f64 * eta_i)
                });
                (t, arg)
            }
            (None, Some(eps)) => {
                let a = diameter * diameter * lambda * ni * ni * eps * eps / (4.0 * d * clip * clip * eta_i);
                let t = solve_iterations(q, a).ceil().max(1.0);
                if !t.is_finite() || t > u64::MAX as f64 {
                    return Err(Error::invalid("iterations", format!("phase {i} needs {t} steps")));
                }
                (t as u64, a / t)
            }
            (None, None) => (config.require_iterations("localized")?, f64::NAN),
        };
        if log_argument <= 1.0 && config.overrides.iterations.is_none() {
            warnings.push(format!(
                "phase {i}: log argument {log_argument:.3e} <= 1, iterations clamped to 1"
            ));
        }
        if let Some(cap) = config.overrides.max_phase_iterations {
            iterations = iterations.min(cap);
        }
        phases.push(LocalizedPhase {
            index: i,
            batch_size,
            eta: eta_i,
            lambda,
            radius,
            clip,
            iterations,
            log_argument,
        });
    }
    Ok((phases, warnings))
}

/// Localized noisy clipped subgradient method. Uses the largest power of
/// two `n' ≤ n` samples; phase `i` runs on a fresh batch of `n'/2^i`.
pub fn localized_sco(
    data: &Dataset,
    loss: &dyn LossModel,
    domain: &Ball,
    w0: &Vector,
    config: &OptimizerConfig,
    rng: &mut dyn RngCore,
) -> Result<RunOutput> {
    check_inputs(data, loss, domain, w0)?;
    config.validate()?;
    if data.len() < 2 {
        return Err(Error::invalid("n", "need at least 2 samples"));
    }
    let shuffled = data.shuffled(rng);
    let mut accounting = Accounting::for_budget(config.budget.as_ref());
    let mut recorder = Recorder::new(config.trace, config.reference.as_ref());
    let mut member = 0;
    let w = localized_pass(
        shuffled.rows(),
        data.len(),
        loss,
        domain,
        w0.as_slice(),
        config,
        &mut accounting,
        &mut recorder,
        &mut member,
        rng,
    )?;
    Ok(RunOutput {
        iterate: Vector::from_trusted(w),
        trace: recorder.trace,
        accounting,
    })
}

/// One localized run over the first `n` rows of `rows`; `member` numbers
/// the disjoint batches across calls.
#[allow(clippy::too_many_arguments)]
fn localized_pass(
    rows: &[f64],
    n: usize,
    loss: &dyn LossModel,
    domain: &Ball,
    w0: &[f64],
    config: &OptimizerConfig,
    accounting: &mut Accounting,
    recorder: &mut Recorder<'_>,
    member: &mut u64,
    rng: &mut dyn RngCore,
) -> Result<Vec<f64>> {
    let used = 1usize << (usize::BITS - 1 - n.leading_zeros());
    if used < n {
        recorder.warn(format!(
            "discarded {} samples to reach a power of two ({used})",
            n - used
        ));
    }
    let (schedule, warnings) = localized_schedule(used, domain.dim(), domain.diameter(), config)?;
    warnings.into_iter().for_each(|w| recorder.warn(w));
    let row_len = loss.row_len(domain.dim());
    let mut w = w0.to_vec();
    let mut offset = 0;
    for phase in &schedule {
        let batch = &rows[offset * row_len..(offset + phase.batch_size) * row_len];
        offset += phase.batch_size;
        let center = Vector::from_trusted(w.clone());
        let local = Domain::Localized(LocalizedDomain::new(domain.clone(), Ball::new(center, phase.radius)?)?);
        let budget = PhaseBudget::open(
            accounting,
            config.budget.as_ref(),
            format!("localized phase {} (batch {})", phase.index, *member),
            phase.iterations,
            0,
            *member,
        )?;
        *member += 1;
        let step = PhaseStep {
            lambda: phase.lambda,
            eta: phase.eta,
            iterations: phase.iterations,
            clip: phase.clip,
            phase: phase.index,
        };
        let (next, sigma2) = run_phase(loss, config.oracle, batch, &local, &w, &step, &budget, recorder, rng)?;
        w = next;
        recorder.phase_end(
            phase.index,
            &w,
            budget.spent_after(phase.iterations),
            phase.clip,
            sigma2,
        );
    }
    Ok(w)
}

/// Sample counts of the strongly convex reduction:
/// `M = ⌈log₂ log₂ n⌉` phases of `N_j = ⌊2^{j−2} n / log₂ n⌋`, or a single
/// phase on all samples when `M ≤ 1`.
pub fn reduction_phase_sizes(n: usize) -> Result<Vec<usize>> {
    if n < 2 {
        return Err(Error::invalid("n", "need at least 2 samples"));
    }
    let log_n = (n as f64).log2();
    let phases = log_n.log2().ceil();
    if phases <= 1.0 {
        return Ok(vec![n]);
    }
    let sizes: Vec<usize> = (1..=phases as i32)
        .map(|j| (2f64.powi(j - 2) * n as f64 / log_n).floor() as usize)
        .collect();
    if sizes[0] < 2 {
        return Err(Error::invalid(
            "n",
            format!("{n} samples leave fewer than 2 for the first phase"),
        ));
    }
    Ok(sizes)
}

/// Chains localized runs on fresh sample blocks, each initialized at the
/// previous output.
pub fn strongly_convex_sco(
    data: &Dataset,
    loss: &dyn LossModel,
    domain: &Ball,
    w0: &Vector,
    config: &OptimizerConfig,
    rng: &mut dyn RngCore,
) -> Result<RunOutput> {
    check_inputs(data, loss, domain, w0)?;
    config.validate()?;
    if config.mu.is_nan() || config.mu <= 0.0 {
        return Err(Error::invalid("mu", "strongly convex reduction needs mu > 0"));
    }
    let sizes = reduction_phase_sizes(data.len())?;
    let shuffled = data.shuffled(rng);
    let row_len = shuffled.row_len();
    let mut accounting = Accounting::for_budget(config.budget.as_ref());
    let mut recorder = Recorder::new(config.trace, config.reference.as_ref());
    let mut member = 0;
    let mut w = w0.as_slice().to_vec();
    let mut offset = 0;
    for size in sizes {
        let block = &shuffled.rows()[offset * row_len..(offset + size) * row_len];
        offset += size;
        w = localized_pass(
            block,
            size,
            loss,
            domain,
            &w,
            config,
            &mut accounting,
            &mut recorder,
            &mut member,
            rng,
        )?;
    }
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
    use crate::losses::quadratic_loss;
    use crate::optim::MomentBounds;
    use crate::privacy::ZcdpBudget;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn noiseless_config(iterations: u64, eta: f64) -> OptimizerConfig {
        let mut cfg = OptimizerConfig::new(None, &quadratic_loss()).with_moment(MomentBounds::new(2.0, 1.0).unwrap());
        cfg.overrides.iterations = Some(iterations);
        cfg.eta = Some(eta);
        cfg
    }

    #[test]
    fn schedule_example() {
        let (phases, _) = localized_schedule(16, 2, 2.0, &noiseless_config(5, 1.0)).unwrap();
        assert_eq!(phases.len(), 4);
        let first = phases[0];
        assert_eq!(first.batch_size, 8);
        assert_eq!(first.eta, 0.25);
        assert_abs_diff_eq!(first.lambda, 0.176777, epsilon = 1e-6);
        assert_abs_diff_eq!(first.radius, 64.0, epsilon = 1e-9);
        assert_eq!(phases.iter().map(|p| p.batch_size).sum::<usize>(), 15);
        assert!(phases.iter().all(|p| p.clip.is_infinite() && p.iterations == 5));
    }

    #[test]
    fn private_schedule_uses_fixed_point() {
        let loss = quadratic_loss();
        let budget = Budget::Zcdp(ZcdpBudget::from_epsilon(1.0).unwrap());
        let cfg = OptimizerConfig::new(Some(budget), &loss).with_moment(MomentBounds::new(2.0, 2.0).unwrap());
        let (phases, _) = localized_schedule(256, 3, 2.0, &cfg).unwrap();
        for p in &phases {
            let q = (p.batch_size as f64).powf(1.5);
            if p.iterations > 1 {
                // T = ⌈q ln(A/T*)⌉ with A/T evaluated at the ceiling.
                assert!(p.log_argument > 1.0);
                let t = p.iterations as f64;
                assert!(q * p.log_argument.ln() <= t && t <= q * (p.log_argument * t / (t - 1.0)).ln() + 1.0);
            }
            assert_abs_diff_eq!(p.lambda * p.eta, 1.0 / q, epsilon = 1e-12 / q);
        }
        assert!(phases[0].clip > phases[phases.len() - 1].clip);
    }

    #[test]
    fn fixed_point_solver() {
        let t = solve_iterations(10.0, 1e4);
        assert_abs_diff_eq!(t, 10.0 * (1e4 / t).ln(), epsilon = 1e-9);
        assert_eq!(solve_iterations(1.0, 1.5), 1.0);
    }

    #[test]
    fn reduction_sizes() {
        assert_eq!(reduction_phase_sizes(256).unwrap(), vec![16, 32, 64]);
        assert!(reduction_phase_sizes(256).unwrap().iter().sum::<usize>() <= 256);
        assert_eq!(reduction_phase_sizes(4).unwrap(), vec![4]);
        assert!(reduction_phase_sizes(1).is_err());
    }

    #[test]
    fn zero_gradient_step_is_fixed_point() {
        let data = Dataset::new(2, vec![0.3, -0.2]).unwrap();
        let w0 = Vector::new(vec![0.3, -0.2]).unwrap();
        let domain = Domain::Ball(Ball::centered(2, 1.0).unwrap());
        let params = SubgradientParams {
            lambda: 0.5,
            eta: 1.0,
            iterations: 1,
            clip: f64::INFINITY,
            budget: None,
            oracle: OracleKind::CentralL2,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = clipped_regularized_subgradient(&data, &quadratic_loss(), &domain, &w0, &params, &mut rng).unwrap();
        assert_eq!(out.iterate, w0);
        let bad = SubgradientParams { eta: 5.0, ..params };
        assert!(clipped_regularized_subgradient(&data, &quadratic_loss(), &domain, &w0, &bad, &mut rng).is_err());
    }

    #[test]
    fn unregularized_noiseless_descent_is_monotone() {
        let loss = quadratic_loss();
        let data = Dataset::sample(
            &PointMass { point: vec![0.5, 0.5] },
            8,
            &mut ChaCha8Rng::seed_from_u64(1),
        );
        let domain = Domain::Ball(Ball::centered(2, 1.0).unwrap());
        let mut w = Vector::new(vec![-0.7, 0.1]).unwrap();
        let mut prev = f64::INFINITY;
        for _ in 0..10 {
            let params = SubgradientParams {
                lambda: 0.0,
                eta: 0.3,
                iterations: 1,
                clip: f64::INFINITY,
                budget: None,
                oracle: OracleKind::CentralL2,
            };
            w = clipped_regularized_subgradient(&data, &loss, &domain, &w, &params, &mut ChaCha8Rng::seed_from_u64(2))
                .unwrap()
                .iterate;
            let value = loss.value(&w, &[0.5, 0.5]);
            assert!(value <= prev);
            prev = value;
        }
    }

    #[test]
    fn ledger_reconciles_and_iterates_stay_feasible() {
        let loss = quadratic_loss();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dist = crate::data::LocationFamily {
            location: vec![0.2, 0.1],
            noise: crate::data::ScalarLaw::Normal { sd: 1.0 },
        };
        let data = Dataset::sample(&dist, 64, &mut rng);
        let budget = Budget::Zcdp(ZcdpBudget::from_epsilon(1.0).unwrap());
        let mut cfg = OptimizerConfig::new(Some(budget), &loss).with_moment(MomentBounds::new(2.0, 3.0).unwrap());
        cfg.trace = TraceLevel::Step;
        cfg.overrides.max_phase_iterations = Some(50);
        let domain = Ball::centered(2, 1.0).unwrap();
        let out = localized_sco(&data, &loss, &domain, &Vector::zeros(2), &cfg, &mut rng).unwrap();
        assert!(out.accounting.audit(cfg.budget.as_ref()).unwrap().reconciled);
        assert!(domain.contains(&out.iterate, 1e-9));
        let last = out.trace.records.last().unwrap();
        assert_abs_diff_eq!(last.spent, 0.5, epsilon = 1e-12);
    }
}
