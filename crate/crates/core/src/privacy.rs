//! Privacy budgets, Gaussian calibration and accounting ledgers.
//!
//! The central-model algorithms are accounted in zero-concentrated DP, where
//! Gaussian noise of variance `Δ²/(2ρ)` costs `ρ`, sequential releases add up,
//! and releases computed on disjoint batches cost only their maximum. The
//! shuffle-model oracles are approximate-DP mechanisms, so they get their own
//! [`ApproxLedger`]. Both ledgers are descriptive: algorithms record what they
//! spent and an audit compares the total with a declared target.
//!
//! Normal draws use `rand_distr::StandardNormal` (a ziggurat sampler) on a
//! ChaCha stream, scaled by `σ`; the pairing is pinned by `Cargo.lock`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::math::{exact_sum, Vector};

/// Relative slack allowed when reconciling a ledger against its target.
pub const AUDIT_RELATIVE_TOLERANCE: f64 = 1e-12;

/// A `ρ`-zCDP guarantee.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct ZcdpBudget {
    rho: f64,
}

impl ZcdpBudget {
    pub fn new(rho: f64) -> Result<Self> {
        if !rho.is_finite() || rho < 0.0 {
            return Err(Error::invalid("rho", format!("must be finite and >= 0, got {rho}")));
        }
        Ok(ZcdpBudget { rho })
    }

    /// The budget `ε²/2`, which is how an `ε` target maps onto zCDP.
    pub fn from_epsilon(epsilon: f64) -> Result<Self> {
        ZcdpBudget::new(0.5 * epsilon * epsilon)
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// The `ε` with `ρ = ε²/2`.
    pub fn epsilon(&self) -> f64 {
        (2.0 * self.rho).sqrt()
    }
}

/// An `(ε, δ)`-DP guarantee.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApproxDpBudget {
    epsilon: f64,
    delta: f64,
}

impl ApproxDpBudget {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !epsilon.is_finite() || epsilon < 0.0 {
            return Err(Error::invalid(
                "epsilon",
                format!("must be finite and >= 0, got {epsilon}"),
            ));
        }
        if !(0.0..1.0).contains(&delta) {
            return Err(Error::invalid("delta", format!("must lie in [0, 1), got {delta}")));
        }
        Ok(ApproxDpBudget { epsilon, delta })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }
}

/// A total privacy target for one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Budget {
    Zcdp(ZcdpBudget),
    Approx(ApproxDpBudget),
}

impl Budget {
    /// The `ε` that parameter schedules consume: `√(2ρ)` or the approximate-DP `ε`.
    pub fn epsilon(&self) -> f64 {
        match self {
            Budget::Zcdp(z) => z.epsilon(),
            Budget::Approx(a) => a.epsilon(),
        }
    }
}

/// Gaussian noise variance `Δ²/(2ρ)` giving `ρ`-zCDP for L2 sensitivity `Δ`.
pub fn gaussian_sigma_squared(sensitivity: f64, rho: f64) -> Result<f64> {
    if sensitivity.is_nan() || sensitivity < 0.0 {
        return Err(Error::invalid(
            "sensitivity",
            format!("must be >= 0, got {sensitivity}"),
        ));
    }
    if rho.is_nan() || rho <= 0.0 {
        return Err(Error::invalid("rho", format!("must be > 0, got {rho}")));
    }
    Ok(sensitivity * sensitivity / (2.0 * rho))
}

/// Sum of the `ρ` values, correctly rounded.
pub fn compose_sequential(budgets: &[ZcdpBudget]) -> ZcdpBudget {
    ZcdpBudget {
        rho: exact_sum(budgets.iter().map(|b| b.rho)),
    }
}

/// Converts `ρ`-zCDP into `(ρ + 2√(ρ ln(1/δ)), δ)`-DP.
pub fn zcdp_to_approx_dp(rho: ZcdpBudget, delta: f64) -> Result<ApproxDpBudget> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid("delta", format!("must lie in (0, 1), got {delta}")));
    }
    let epsilon = rho.rho + 2.0 * (rho.rho * (1.0 / delta).ln()).sqrt();
    ApproxDpBudget::new(epsilon, delta)
}

/// `d` independent `N(0, σ²)` draws.
pub fn gaussian_noise<R: Rng + ?Sized>(d: usize, sigma_squared: f64, rng: &mut R) -> Result<Vector> {
    let mut out = vec![0.0; d];
    add_gaussian_noise(&mut out, sigma_squared, rng)?;
    Ok(Vector::from_trusted(out))
}

/// Adds `N(0, σ²)` noise to every coordinate of `target`. Exactly
/// `target.len()` normals are drawn, even when `σ² = 0`, so the stream
/// position does not depend on the noise level.
pub(crate) fn add_gaussian_noise<R: Rng + ?Sized>(target: &mut [f64], sigma_squared: f64, rng: &mut R) -> Result<()> {
    if sigma_squared.is_nan() || sigma_squared < 0.0 || sigma_squared.is_infinite() {
        return Err(Error::invalid(
            "sigma_squared",
            format!("must be finite and >= 0, got {sigma_squared}"),
        ));
    }
    let sigma = sigma_squared.sqrt();
    for v in target.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *v += sigma * z;
    }
    Ok(())
}

/// Advanced composition of `count` runs of an `(ε₀, δ₀)` mechanism:
/// `(count·ε₀(e^{ε₀} − 1) + ε₀√(2·count·ln(1/δ')), count·δ₀ + δ')`.
pub fn compose_advanced(step: ApproxDpBudget, count: u64, slack_delta: f64) -> Result<ApproxDpBudget> {
    if count == 0 {
        return ApproxDpBudget::new(0.0, 0.0);
    }
    if count == 1 {
        return Ok(step);
    }
    if !(slack_delta > 0.0 && slack_delta < 1.0) {
        return Err(Error::invalid(
            "slack_delta",
            format!("must lie in (0, 1), got {slack_delta}"),
        ));
    }
    let t = count as f64;
    let eps = step.epsilon;
    let total_eps = t * eps * eps.exp_m1() + eps * (2.0 * t * (1.0 / slack_delta).ln()).sqrt();
    let total_delta = (t * step.delta + slack_delta).min(1.0 - f64::EPSILON);
    ApproxDpBudget::new(total_eps, total_delta)
}

/// Per-step budget for `count` adaptive uses of one batch such that
/// [`compose_advanced`] with slack `δ/2` stays within `total`:
/// `ε₀ = ε/(2√(2·count·ln(2/δ)))`, `δ₀ = δ/(2·count)`.
///
/// Requires `0 < ε ≤ 2 ln(2/δ)`, which keeps the quadratic term of the
/// composition bound below `ε/2`.
pub fn split_advanced(total: ApproxDpBudget, count: u64) -> Result<ApproxDpBudget> {
    if count == 0 {
        return Err(Error::invalid("count", "must be >= 1"));
    }
    if count == 1 {
        return Ok(total);
    }
    let (eps, delta) = (total.epsilon, total.delta);
    if delta.is_nan() || delta <= 0.0 {
        return Err(Error::invalid("delta", "splitting over several steps needs delta > 0"));
    }
    let log_term = (2.0 / delta).ln();
    if eps.is_nan() || eps <= 0.0 || eps > 2.0 * log_term {
        return Err(Error::invalid(
            "epsilon",
            format!(
                "must lie in (0, 2 ln(2/δ)] = (0, {}] to split, got {eps}",
                2.0 * log_term
            ),
        ));
    }
    let t = count as f64;
    ApproxDpBudget::new(eps / (2.0 * (2.0 * t * log_term).sqrt()), delta / (2.0 * t))
}

/// How a ledger entry composes with the others.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Composition {
    /// Adds to the total.
    Sequential,
    /// Member of a parallel group: members touch disjoint data, so the group
    /// costs the largest member total. Entries sharing a member index add up.
    Parallel { group: u32, member: u64 },
}

/// One recorded zCDP spend: `count` releases at `rho` each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub label: String,
    pub budget: ZcdpBudget,
    pub count: u64,
    pub composition: Composition,
}

impl LedgerEntry {
    fn cost(&self) -> f64 {
        self.count as f64 * self.budget.rho
    }
}

/// Result of comparing a ledger with a declared target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Audit {
    pub spent: f64,
    pub target: f64,
    pub reconciled: bool,
}

/// zCDP accountant over sequential entries and parallel groups.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AccountantLedger {
    entries: Vec<LedgerEntry>,
}

impl AccountantLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, label: impl Into<String>, budget: ZcdpBudget, count: u64, composition: Composition) {
        self.entries.push(LedgerEntry {
            label: label.into(),
            budget,
            count,
            composition,
        });
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    /// Sequential entries plus, for each parallel group, its largest member.
    pub fn total(&self) -> ZcdpBudget {
        ZcdpBudget {
            rho: Self::total_of(&self.entries),
        }
    }

    fn total_of(entries: &[LedgerEntry]) -> f64 {
        let mut members: BTreeMap<(u32, u64), Vec<f64>> = BTreeMap::new();
        let mut terms = Vec::new();
        for e in entries {
            match e.composition {
                Composition::Sequential => terms.push(e.cost()),
                Composition::Parallel { group, member } => members.entry((group, member)).or_default().push(e.cost()),
            }
        }
        let mut groups: BTreeMap<u32, f64> = BTreeMap::new();
        for ((group, _), costs) in members {
            let member_total = exact_sum(costs);
            let slot = groups.entry(group).or_insert(0.0);
            *slot = slot.max(member_total);
        }
        terms.extend(groups.into_values());
        exact_sum(terms)
    }

    /// Compares the total with `target` up to [`AUDIT_RELATIVE_TOLERANCE`].
    pub fn audit(&self, target: ZcdpBudget) -> Audit {
        let spent = self.total().rho;
        Audit {
            spent,
            target: target.rho,
            reconciled: (spent - target.rho).abs() <= AUDIT_RELATIVE_TOLERANCE * target.rho.max(f64::MIN_POSITIVE),
        }
    }

    /// Line-oriented report: `label<TAB>rho<TAB>cumulative_rho`, where `rho` is
    /// the entry's total and the cumulative column is the ledger total over
    /// the entries so far.
    pub fn report(&self) -> String {
        let mut out = String::from("# label\trho\tcumulative_rho\n");
        for i in 0..self.entries.len() {
            let e = &self.entries[i];
            let cumulative = Self::total_of(&self.entries[..=i]);
            let _ = writeln!(out, "{}\t{:.12e}\t{:.12e}", e.label, e.cost(), cumulative);
        }
        out
    }
}

/// One recorded approximate-DP spend: `count` adaptive releases of `step`,
/// composed with [`compose_advanced`] at `slack_delta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproxEntry {
    pub label: String,
    pub step: ApproxDpBudget,
    pub count: u64,
    pub slack_delta: f64,
    pub composition: Composition,
}

/// Approximate-DP accountant for the shuffle-model path. Sequential entries
/// add (basic composition); parallel groups cost their largest member.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ApproxLedger {
    entries: Vec<ApproxEntry>,
}

impl ApproxLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(
        &mut self,
        label: impl Into<String>,
        step: ApproxDpBudget,
        count: u64,
        slack_delta: f64,
        composition: Composition,
    ) {
        self.entries.push(ApproxEntry {
            label: label.into(),
            step,
            count,
            slack_delta,
            composition,
        });
    }

    pub fn entries(&self) -> &[ApproxEntry] {
        &self.entries
    }

    pub fn total(&self) -> Result<ApproxDpBudget> {
        let mut seq_eps = Vec::new();
        let mut seq_delta = Vec::new();
        let mut members: BTreeMap<(u32, u64), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
        for e in &self.entries {
            let cost = compose_advanced(e.step, e.count, e.slack_delta)?;
            match e.composition {
                Composition::Sequential => {
                    seq_eps.push(cost.epsilon);
                    seq_delta.push(cost.delta);
                }
                Composition::Parallel { group, member } => {
                    let slot = members.entry((group, member)).or_default();
                    slot.0.push(cost.epsilon);
                    slot.1.push(cost.delta);
                }
            }
        }
        let mut groups: BTreeMap<u32, (f64, f64)> = BTreeMap::new();
        for ((group, _), (eps, delta)) in members {
            let slot = groups.entry(group).or_insert((0.0, 0.0));
            slot.0 = slot.0.max(exact_sum(eps));
            slot.1 = slot.1.max(exact_sum(delta));
        }
        for (eps, delta) in groups.into_values() {
            seq_eps.push(eps);
            seq_delta.push(delta);
        }
        ApproxDpBudget::new(exact_sum(seq_eps), exact_sum(seq_delta).min(1.0 - f64::EPSILON))
    }

    /// Passes when the composed total does not exceed `target` in either
    /// coordinate (beyond [`AUDIT_RELATIVE_TOLERANCE`]).
    pub fn audit(&self, target: ApproxDpBudget) -> Result<Audit> {
        let total = self.total()?;
        let slack = 1.0 + AUDIT_RELATIVE_TOLERANCE;
        Ok(Audit {
            spent: total.epsilon,
            target: target.epsilon,
            reconciled: total.epsilon <= target.epsilon * slack && total.delta <= target.delta * slack,
        })
    }

    pub fn report(&self) -> String {
        let mut out = String::from("# label\tepsilon_step\tdelta_step\tcount\n");
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{}\t{:.12e}\t{:.12e}\t{}",
                e.label, e.step.epsilon, e.step.delta, e.count
            );
        }
        out
    }
}

/// The ledger a run writes to, matching the kind of its budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Accounting {
    /// Noiseless diagnostic runs spend nothing.
    None,
    Zcdp(AccountantLedger),
    Approx(ApproxLedger),
}

impl Accounting {
    pub fn for_budget(budget: Option<&Budget>) -> Self {
        match budget {
            None => Accounting::None,
            Some(Budget::Zcdp(_)) => Accounting::Zcdp(AccountantLedger::new()),
            Some(Budget::Approx(_)) => Accounting::Approx(ApproxLedger::new()),
        }
    }

    /// Reconciles against the configured budget; a noiseless run reconciles
    /// trivially.
    pub fn audit(&self, budget: Option<&Budget>) -> Result<Audit> {
        match (self, budget) {
            (Accounting::None, None) => Ok(Audit {
                spent: 0.0,
                target: 0.0,
                reconciled: true,
            }),
            (Accounting::Zcdp(l), Some(Budget::Zcdp(b))) => Ok(l.audit(*b)),
            (Accounting::Approx(l), Some(Budget::Approx(b))) => l.audit(*b),
            _ => Err(Error::invalid(
                "budget",
                "ledger kind does not match the configured budget",
            )),
        }
    }

    /// Running spend in the ledger's own unit (`ρ` or `ε`).
    pub fn spent(&self) -> f64 {
        match self {
            Accounting::None => 0.0,
            Accounting::Zcdp(l) => l.total().rho(),
            Accounting::Approx(l) => l.total().map(|b| b.epsilon()).unwrap_or(f64::NAN),
        }
    }

    pub fn report(&self) -> String {
        match self {
            Accounting::None => String::from("# noiseless run: no privacy spend\n"),
            Accounting::Zcdp(l) => l.report(),
            Accounting::Approx(l) => l.report(),
        }
    }
}
