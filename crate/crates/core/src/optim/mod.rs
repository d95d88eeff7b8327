//! Private optimizers driven by a pluggable mean oracle.
//!
//! Every optimizer takes a [`Dataset`], a loss, the constraint ball, an
//! initial point and an [`OptimizerConfig`], shuffles the data once, and
//! consumes disjoint contiguous batches. Each run returns a [`RunOutput`]
//! with the final iterate, a [`RunTrace`] and the privacy ledger it filled.
//!
//! Parameter schedules default to the explicit values used in the
//! convergence proofs; [`Overrides`] replaces iteration counts, clip levels
//! or the per-phase iteration cap for experiments. A config without a
//! budget runs noiselessly (exact pre-noise oracle outputs), in which case
//! iteration counts must be supplied since every default schedule depends
//! on the privacy level.

mod acsa;
mod localized;
mod prox;
mod sgd_sc;
mod trace;

use rand::RngCore;
use std::fmt;
use std::str::FromStr;

pub use acsa::{acsa, acsa_defaults, AcsaSchedule};
pub use localized::{
    clipped_regularized_subgradient, localized_schedule, localized_sco, reduction_phase_sizes, strongly_convex_sco,
    LocalizedPhase, SubgradientParams,
};
pub use prox::{prox_clipped_sgd, prox_defaults, ProxSchedule};
pub use sgd_sc::{clipped_sgd_sc, sgd_sc_defaults, stich_schedule, SgdScSchedule, StichSchedule};
pub use trace::{RunTrace, TraceLevel, TraceRecord};

use crate::data::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::losses::{LossModel, ProxOperator};
use crate::math::{Ball, Vector};
use crate::oracles::{OracleKind, StepBudget};
use crate::privacy::{compose_advanced, split_advanced, Accounting, ApproxDpBudget, Budget, Composition, ZcdpBudget};

/// Moment bounds consumed by clip-threshold and step-size recipes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentBounds {
    k: f64,
    r_k: f64,
    r_2k: Option<f64>,
    r_pointwise: Option<f64>,
}

impl MomentBounds {
    /// `r_k` bounds the `k`-th root of `E sup_w ‖∇f(w, x)‖^k`.
    pub fn new(k: f64, r_k: f64) -> Result<Self> {
        if !(k >= 2.0 && k.is_finite()) {
            return Err(Error::invalid("k", format!("must be finite and >= 2, got {k}")));
        }
        positive("r_k", r_k)?;
        Ok(MomentBounds {
            k,
            r_k,
            r_2k: None,
            r_pointwise: None,
        })
    }

    /// The `2k`-th moment bound used by clip schedules; defaults to `r_k`.
    pub fn with_r_2k(mut self, r_2k: f64) -> Result<Self> {
        positive("r_2k", r_2k)?;
        self.r_2k = Some(r_2k);
        Ok(self)
    }

    /// The pointwise (non-sup) moment bound; defaults to `r_k`.
    pub fn with_pointwise(mut self, r: f64) -> Result<Self> {
        positive("r_pointwise", r)?;
        self.r_pointwise = Some(r);
        Ok(self)
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn r_k(&self) -> f64 {
        self.r_k
    }

    pub fn r_2k(&self) -> f64 {
        self.r_2k.unwrap_or(self.r_k)
    }

    pub fn r_pointwise(&self) -> f64 {
        self.r_pointwise.unwrap_or(self.r_k)
    }

    /// Clipping bias bound `r^k/((k − 1)C^{k−1})` with the pointwise bound.
    pub fn bias_bound(&self, clip: f64) -> f64 {
        self.r_pointwise().powf(self.k) / ((self.k - 1.0) * clip.powf(self.k - 1.0))
    }
}

fn positive(name: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("must be finite and > 0, got {v}")))
    }
}

/// Optional replacements for schedule values.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Overrides {
    /// Iterations per phase (localized) or in total (single-pass methods).
    pub iterations: Option<u64>,
    /// Clip threshold used at every step.
    pub clip: Option<f64>,
    /// Upper bound applied to each localized phase's iteration count.
    pub max_phase_iterations: Option<u64>,
}

/// Everything an optimizer needs besides data, loss and domain.
#[derive(Debug, Clone)]
pub struct OptimizerConfig {
    /// `None` runs noiselessly.
    pub budget: Option<Budget>,
    pub moment: Option<MomentBounds>,
    /// Strong convexity (or proximal-PL) constant.
    pub mu: f64,
    /// Smoothness constant.
    pub beta: f64,
    /// Bound on `F(w₀) − F*`.
    pub initial_gap: Option<f64>,
    /// Base step size; each optimizer has its own default recipe.
    pub eta: Option<f64>,
    pub oracle: OracleKind,
    pub overrides: Overrides,
    /// Non-smooth part for proximal SGD when the loss has none of its own.
    pub composite: Option<ProxOperator>,
    pub trace: TraceLevel,
    /// Point to which the trace measures distances.
    pub reference: Option<Vector>,
}

impl OptimizerConfig {
    /// A central-oracle config with `μ`, `β` taken from the loss.
    pub fn new(budget: Option<Budget>, loss: &dyn LossModel) -> Self {
        let constants = loss.constants();
        OptimizerConfig {
            budget,
            moment: None,
            mu: constants.mu,
            beta: constants.beta,
            initial_gap: None,
            eta: None,
            oracle: OracleKind::CentralL2,
            overrides: Overrides::default(),
            composite: None,
            trace: TraceLevel::Phase,
            reference: None,
        }
    }

    pub fn with_moment(mut self, moment: MomentBounds) -> Self {
        self.moment = Some(moment);
        self
    }

    pub fn with_oracle(mut self, oracle: OracleKind) -> Self {
        self.oracle = oracle;
        self
    }

    fn validate(&self) -> Result<()> {
        match (&self.budget, self.oracle.is_shuffle()) {
            (Some(Budget::Zcdp(_)), true) => {
                return Err(Error::invalid(
                    "budget",
                    "shuffle oracles need an (epsilon, delta) budget",
                ))
            }
            (Some(Budget::Approx(_)), false) => {
                return Err(Error::invalid("budget", "central oracles need a zCDP budget"))
            }
            _ => {}
        }
        if let Some(c) = self.overrides.clip {
            if c.is_nan() || c <= 0.0 {
                return Err(Error::invalid("clip", format!("must be > 0, got {c}")));
            }
        }
        if let Some(eta) = self.eta {
            positive("eta", eta)?;
        }
        if self.mu.is_nan() || self.mu < 0.0 || self.beta.is_nan() || self.beta < 0.0 {
            return Err(Error::invalid("mu/beta", "must be >= 0"));
        }
        if self.overrides.iterations == Some(0) || self.overrides.max_phase_iterations == Some(0) {
            return Err(Error::invalid("iterations", "must be >= 1"));
        }
        Ok(())
    }

    fn moment(&self) -> Result<MomentBounds> {
        self.moment
            .ok_or_else(|| Error::invalid("moment", "a moment bound is required by this optimizer"))
    }

    /// `ε` of the configured budget (`√(2ρ)` for zCDP).
    fn epsilon(&self) -> Option<f64> {
        self.budget.as_ref().map(|b| b.epsilon())
    }

    fn require_iterations(&self, what: &str) -> Result<u64> {
        self.overrides.iterations.ok_or_else(|| {
            Error::invalid(
                "iterations",
                format!("noiseless {what} runs need an iteration override"),
            )
        })
    }
}

/// Final iterate, trace and privacy ledger of a run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub iterate: Vector,
    pub trace: RunTrace,
    pub accounting: Accounting,
}

/// The five optimizers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algorithm {
    Localized,
    StronglyConvex,
    Acsa,
    SgdSc,
    ProxSgd,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::Localized,
        Algorithm::StronglyConvex,
        Algorithm::Acsa,
        Algorithm::SgdSc,
        Algorithm::ProxSgd,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Localized => "localized",
            Algorithm::StronglyConvex => "strongly-convex",
            Algorithm::Acsa => "acsa",
            Algorithm::SgdSc => "sgd-sc",
            Algorithm::ProxSgd => "prox-sgd",
        }
    }

    pub fn run(
        &self,
        data: &Dataset,
        loss: &dyn LossModel,
        domain: &Ball,
        w0: &Vector,
        config: &OptimizerConfig,
        rng: &mut dyn RngCore,
    ) -> Result<RunOutput> {
        match self {
            Algorithm::Localized => localized_sco(data, loss, domain, w0, config, rng),
            Algorithm::StronglyConvex => strongly_convex_sco(data, loss, domain, w0, config, rng),
            Algorithm::Acsa => acsa(data, loss, domain, w0, config, rng),
            Algorithm::SgdSc => clipped_sgd_sc(data, loss, domain, w0, config, rng),
            Algorithm::ProxSgd => prox_clipped_sgd(data, loss, Some(domain), w0, config, rng),
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| {
            let valid: Vec<&str> = Algorithm::ALL.iter().map(|a| a.name()).collect();
            Error::Config(format!("unknown algorithm '{s}'; valid options: {}", valid.join(", ")))
        })
    }
}

fn check_inputs(data: &Dataset, loss: &dyn LossModel, domain: &Ball, w0: &Vector) -> Result<()> {
    check_dim(domain.dim(), w0.dim())?;
    check_dim(loss.row_len(domain.dim()), data.row_len())?;
    if !domain.contains(w0, 1e-9) {
        return Err(Error::invalid("w0", "initial point must lie in the domain"));
    }
    Ok(())
}

/// Splits the run budget into what a phase of `steps` adaptive oracle calls
/// on one batch may spend per call, and records the phase in the ledger as
/// a member of parallel group `group`.
struct PhaseBudget {
    step: StepBudget,
    prior: f64,
    spend: PhaseSpend,
}

#[derive(Clone, Copy)]
enum PhaseSpend {
    None,
    Zcdp(f64),
    Approx { step: ApproxDpBudget, slack: f64 },
}

impl PhaseBudget {
    fn open(
        accounting: &mut Accounting,
        budget: Option<&Budget>,
        label: String,
        steps: u64,
        group: u32,
        member: u64,
    ) -> Result<PhaseBudget> {
        let prior = accounting.spent();
        Self::open_after(accounting, budget, label, steps, group, member, prior)
    }

    /// A one-step member of parallel group 0 in a single-pass method. Every
    /// member spends the full budget, so the running total is the member's
    /// own spend and the ledger need not be summed.
    fn open_step(
        accounting: &mut Accounting,
        budget: Option<&Budget>,
        label: String,
        member: u64,
    ) -> Result<PhaseBudget> {
        Self::open_after(accounting, budget, label, 1, 0, member, 0.0)
    }

    fn open_after(
        accounting: &mut Accounting,
        budget: Option<&Budget>,
        label: String,
        steps: u64,
        group: u32,
        member: u64,
        prior: f64,
    ) -> Result<PhaseBudget> {
        let composition = Composition::Parallel { group, member };
        let (step, spend) = match (budget, accounting) {
            (None, _) => (StepBudget::Noiseless, PhaseSpend::None),
            (Some(Budget::Zcdp(total)), Accounting::Zcdp(ledger)) => {
                let rho_step = total.rho() / steps as f64;
                ledger.record(label, ZcdpBudget::new(rho_step)?, steps, composition);
                (StepBudget::Zcdp(rho_step), PhaseSpend::Zcdp(rho_step))
            }
            (Some(Budget::Approx(total)), Accounting::Approx(ledger)) => {
                let step = split_advanced(*total, steps)?;
                let slack = 0.5 * total.delta();
                ledger.record(label, step, steps, slack, composition);
                (
                    StepBudget::Approx {
                        epsilon: step.epsilon(),
                        delta: step.delta(),
                    },
                    PhaseSpend::Approx { step, slack },
                )
            }
            _ => return Err(Error::invalid("budget", "ledger kind does not match the budget")),
        };
        Ok(PhaseBudget { step, prior, spend })
    }

    /// Ledger total after `t` of this phase's steps.
    fn spent_after(&self, t: u64) -> f64 {
        let partial = match self.spend {
            PhaseSpend::None => 0.0,
            PhaseSpend::Zcdp(rho) => rho * t as f64,
            PhaseSpend::Approx { step, slack } => compose_advanced(step, t, slack)
                .map(|b| b.epsilon())
                .unwrap_or(f64::NAN),
        };
        self.prior.max(partial)
    }
}

/// Fills `grads` with per-row gradients at `w` (smooth part when `smooth`).
fn batch_gradients(loss: &dyn LossModel, w: &[f64], rows: &[f64], row_len: usize, grads: &mut [f64], smooth: bool) {
    let dim = w.len();
    for (x, g) in rows.chunks_exact(row_len).zip(grads.chunks_exact_mut(dim)) {
        if smooth {
            loss.smooth_gradient(w, x, g);
        } else {
            loss.subgradient(w, x, g);
        }
    }
}

/// One oracle query on the gradients of `rows` at `w`.
struct GradientOracle<'a> {
    loss: &'a dyn LossModel,
    oracle: OracleKind,
    row_len: usize,
    dim: usize,
    smooth: bool,
    grads: Vec<f64>,
}

impl<'a> GradientOracle<'a> {
    fn new(loss: &'a dyn LossModel, oracle: OracleKind, dim: usize, smooth: bool) -> Self {
        GradientOracle {
            loss,
            oracle,
            row_len: loss.row_len(dim),
            dim,
            smooth,
            grads: Vec::new(),
        }
    }

    fn query(
        &mut self,
        w: &[f64],
        rows: &[f64],
        clip: f64,
        budget: StepBudget,
        rng: &mut dyn RngCore,
    ) -> Result<(Vec<f64>, f64)> {
        let s = rows.len() / self.row_len;
        self.grads.resize(s * self.dim, 0.0);
        batch_gradients(self.loss, w, rows, self.row_len, &mut self.grads, self.smooth);
        let est = self.oracle.estimate(&self.grads, self.dim, clip, budget, rng)?;
        Ok((est.estimate.into_inner(), est.noise_sigma_squared))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::quadratic_loss;

    #[test]
    fn algorithm_names_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
        }
        let err = "adam".parse::<Algorithm>().unwrap_err().to_string();
        assert!(err.contains("localized") && err.contains("prox-sgd"));
    }

    #[test]
    fn config_validation() {
        let loss = quadratic_loss();
        let zcdp = Some(Budget::Zcdp(ZcdpBudget::new(0.5).unwrap()));
        let cfg = OptimizerConfig::new(zcdp, &loss).with_oracle(OracleKind::ShuffleL2);
        assert!(cfg.validate().is_err());
        let approx = Some(Budget::Approx(ApproxDpBudget::new(1.0, 1e-5).unwrap()));
        assert!(OptimizerConfig::new(approx, &loss).validate().is_err());
        let mut cfg = OptimizerConfig::new(None, &loss);
        cfg.overrides.iterations = Some(0);
        assert!(cfg.validate().is_err());
        assert!(MomentBounds::new(1.5, 1.0).is_err());
        let m = MomentBounds::new(2.0, 3.0).unwrap();
        assert_eq!((m.r_2k(), m.r_pointwise()), (3.0, 3.0));
        assert_eq!(m.bias_bound(3.0), 3.0);
    }
}
