//! Shuffle-model summation.
//!
//! Each client encodes a scalar in `[0, τ]` as `g + b` bits: a fixed-point
//! part with `g` levels and stochastic rounding, plus `Binomial(b, p)` noise
//! ones. A shuffler permutes the pooled bits and the analyzer debiases the
//! count of ones. [`p_vec`] runs the scalar protocol once per coordinate,
//! and the two mean oracles wrap it in the same interface as the central
//! ones.
//!
//! The analyzer only counts ones, so [`run_p1d`] skips materializing and
//! permuting bits; [`run_p1d_traced`] performs the full
//! randomize → shuffle → analyze pipeline and returns a run-length encoded
//! transcript of the shuffled bits. Both give the same estimate for the same
//! randomizer stream. [`run_p1d_pooled`] goes one step further and draws the
//! pooled noise count as a single binomial, which has the same law as the
//! analyzer's count and costs `O(1)` per client instead of one binomial
//! draw each; the optimizers' oracles use it.
//!
//! `Binomial(b, p)` draws use CDF inversion for `b ≤ 64` and the exact BTPE
//! sampler of `rand_distr` above that. Counts are accumulated in `u128`;
//! since `p < 1/2`, the binomial spread of the count dwarfs the `f64`
//! rounding of the debiasing step.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Binomial, Distribution};
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::math::{ensure_finite, flatten, median, norm, Vector};
use crate::oracles::NoisyGradientEstimate;

/// Largest `b` sampled by CDF inversion.
pub const INVERSION_MAX_TRIALS: u64 = 64;

/// Largest `g + b` accepted per client report.
const MAX_REPORT_BITS: f64 = (1u64 << 62) as f64;

/// Parameters of the scalar protocol.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct P1dParams {
    g: u64,
    b: u64,
    p: f64,
    tau: f64,
}

impl P1dParams {
    /// Explicit parameters, e.g. for noiseless-limit experiments with `p = 0`.
    pub fn new(g: u64, b: u64, p: f64, tau: f64) -> Result<Self> {
        if g == 0 {
            return Err(Error::invalid("g", "must be >= 1"));
        }
        if !(0.0..0.5).contains(&p) {
            return Err(Error::invalid("p", format!("must lie in [0, 1/2), got {p}")));
        }
        if !(tau.is_finite() && tau >= 0.0) {
            return Err(Error::invalid("tau", format!("must be finite and >= 0, got {tau}")));
        }
        Ok(P1dParams { g, b, p, tau })
    }

    pub fn g(&self) -> u64 {
        self.g
    }

    pub fn b(&self) -> u64 {
        self.b
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Bits per client report.
    pub fn report_len(&self) -> u64 {
        self.g + self.b
    }

    /// Variance the binomial noise adds to an `s`-client sum estimate.
    pub fn noise_variance(&self, s: usize) -> f64 {
        let unit = self.tau / self.g as f64;
        unit * unit * s as f64 * self.b as f64 * self.p * (1.0 - self.p)
    }
}

/// Protocol parameters for `s` clients with range `τ` at `(ε, δ)`:
/// `g = max(2, ⌈2τ√s⌉)`, `b = ⌈180g² ln(2/δ)/(ε²s)⌉ + 1`,
/// `p = 90g² ln(2/δ)/(bε²s)`.
pub fn derive_p1d_params(s: usize, tau: f64, epsilon: f64, delta: f64) -> Result<P1dParams> {
    derive_with_floor(s, tau, epsilon, delta, 2)
}

fn derive_with_floor(s: usize, tau: f64, epsilon: f64, delta: f64, g_floor: u64) -> Result<P1dParams> {
    if s == 0 {
        return Err(Error::invalid("s", "need at least one client"));
    }
    if !(tau.is_finite() && tau >= 0.0) {
        return Err(Error::invalid("tau", format!("must be finite and >= 0, got {tau}")));
    }
    if !(epsilon > 0.0 && epsilon <= 15.0) {
        return Err(Error::invalid("epsilon", format!("must lie in (0, 15], got {epsilon}")));
    }
    if !(delta > 0.0 && delta < 0.5) {
        return Err(Error::invalid("delta", format!("must lie in (0, 1/2), got {delta}")));
    }
    let sf = s as f64;
    let g = ((2.0 * tau * sf.sqrt()).ceil() as u64).max(2).max(g_floor);
    let gf = g as f64;
    let log_term = (2.0 / delta).ln();
    let twice_mean = 180.0 * gf * gf * log_term / (epsilon * epsilon * sf);
    let ceil = twice_mean.ceil();
    if !(ceil.is_finite() && ceil + 1.0 + gf < MAX_REPORT_BITS) {
        return Err(Error::Protocol(format!(
            "noise bits per client ({ceil:e}) exceed 2^62; budget too small"
        )));
    }
    let mut b = ceil as u64 + 1;
    let mut p = 0.5 * twice_mean / b as f64;
    if p >= 0.5 {
        // Above 2^53 the "+1" is lost to rounding; widen b by a few ulps so
        // the expected noise count p·b keeps its value with p < 1/2.
        b = (ceil * (1.0 + 4.0 * f64::EPSILON)) as u64;
        p = 0.5 * twice_mean / b as f64;
    }
    if !(p > 0.0 && p < 0.5) {
        return Err(Error::Protocol(format!("derived p = {p} outside (0, 1/2)")));
    }
    Ok(P1dParams { g, b, p, tau })
}

/// One client's message: `ones` ones followed by zeros, `len` bits in all.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClientReport {
    ones: u64,
    len: u64,
}

impl ClientReport {
    pub fn ones(&self) -> u64 {
        self.ones
    }

    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// The bits in emission order (ones first).
    pub fn bits(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| i < self.ones)
    }
}

/// Exact `Binomial(n, p)` draw.
pub fn sample_binomial<R: Rng + ?Sized>(n: u64, p: f64, rng: &mut R) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if n <= INVERSION_MAX_TRIALS {
        let u: f64 = rng.random();
        let ratio = p / (1.0 - p);
        let mut pmf = (1.0 - p).powi(n as i32);
        let mut cdf = pmf;
        let mut k = 0;
        while u > cdf && k < n {
            pmf *= (n - k) as f64 / (k + 1) as f64 * ratio;
            k += 1;
            cdf += pmf;
        }
        return k;
    }
    Binomial::new(n, p)
        .expect("binomial parameters validated by P1dParams")
        .sample(rng)
}

/// Encodes `z ∈ [0, τ]` as a report with `⌊zg/τ⌋ + Ber(frac) + Binomial(b, p)` ones.
pub fn randomize_1d<R: Rng + ?Sized>(z: f64, params: &P1dParams, rng: &mut R) -> Result<ClientReport> {
    if !z.is_finite() || z < 0.0 || z > params.tau {
        return Err(Error::invalid("z", format!("must lie in [0, {}], got {z}", params.tau)));
    }
    Ok(randomize_unchecked(z, params, rng))
}

fn randomize_unchecked<R: Rng + ?Sized>(z: f64, params: &P1dParams, rng: &mut R) -> ClientReport {
    let g = params.g as f64;
    let scaled = if params.tau > 0.0 { z * g / params.tau } else { 0.0 };
    let floor = scaled.floor();
    let rounding = scaled - floor;
    let level = floor as u64 + u64::from(rng.random::<f64>() < rounding);
    let noise = sample_binomial(params.b, params.p, rng);
    ClientReport {
        ones: level.min(params.g) + noise,
        len: params.report_len(),
    }
}

/// Pools all reports and applies a uniformly random permutation
/// (Fisher–Yates) to the flattened bits.
pub fn shuffle<R: Rng + ?Sized>(reports: &[ClientReport], rng: &mut R) -> Result<Vec<bool>> {
    let Some(first) = reports.first() else {
        return Ok(Vec::new());
    };
    if reports.iter().any(|r| r.len != first.len) {
        return Err(Error::Protocol("reports have different lengths".into()));
    }
    let mut bits: Vec<bool> = reports.iter().flat_map(|r| r.bits()).collect();
    bits.shuffle(rng);
    Ok(bits)
}

/// `(τ/g)·(ones − p·b·s)`.
pub fn analyze_1d(bits: &[bool], s: usize, params: &P1dParams) -> Result<f64> {
    let expected = s as u64 * params.report_len();
    if bits.len() as u64 != expected {
        return Err(Error::Protocol(format!(
            "expected {expected} bits for {s} clients, got {}",
            bits.len()
        )));
    }
    let ones = bits.iter().filter(|&&b| b).count() as u128;
    Ok(debias(ones, s, params))
}

fn debias(ones: u128, s: usize, params: &P1dParams) -> f64 {
    params.tau / params.g as f64 * (ones as f64 - params.p * params.b as f64 * s as f64)
}

/// Run-length encoding `bit x count` separated by spaces, e.g. `1x3 0x5 1x1`.
pub fn run_length_encode(bits: &[bool]) -> String {
    let mut out = String::new();
    let mut iter = bits.iter().peekable();
    while let Some(&bit) = iter.next() {
        let mut run = 1usize;
        while iter.peek() == Some(&&bit) {
            iter.next();
            run += 1;
        }
        if !out.is_empty() {
            out.push(' ');
        }
        let _ = write!(out, "{}x{}", u8::from(bit), run);
    }
    out
}

/// Sum estimate for values in `[0, τ]` via the protocol.
pub fn run_p1d<R: Rng + ?Sized>(values: &[f64], params: &P1dParams, rng: &mut R) -> Result<f64> {
    check_range(values, params.tau)?;
    let ones: u128 = values
        .iter()
        .map(|&z| u128::from(randomize_unchecked(z, params, rng).ones))
        .sum();
    Ok(debias(ones, values.len(), params))
}

/// Same output law as [`run_p1d`]: the data levels are rounded per client,
/// and the `s` independent `Binomial(b, p)` noise counts are pooled into one
/// `Binomial(s·b, p)` draw (split into chunks that fit `u64`).
pub fn run_p1d_pooled<R: Rng + ?Sized>(values: &[f64], params: &P1dParams, rng: &mut R) -> Result<f64> {
    check_range(values, params.tau)?;
    let g = params.g as f64;
    let unit = if params.tau > 0.0 { g / params.tau } else { 0.0 };
    let mut ones: u128 = 0;
    for &z in values {
        let scaled = z * unit;
        let floor = scaled.floor();
        let level = floor as u64 + u64::from(rng.random::<f64>() < scaled - floor);
        ones += u128::from(level.min(params.g));
    }
    let mut remaining = u128::from(params.b) * values.len() as u128;
    while remaining > 0 {
        let chunk = remaining.min(1 << 62);
        ones += u128::from(sample_binomial(chunk as u64, params.p, rng));
        remaining -= chunk;
    }
    Ok(debias(ones, values.len(), params))
}

/// Full pipeline with an explicit shuffle; returns the estimate and the
/// run-length encoded shuffled transcript. The estimate equals
/// [`run_p1d`]'s for the same `rng` state.
pub fn run_p1d_traced<R: Rng + ?Sized, S: Rng + ?Sized>(
    values: &[f64],
    params: &P1dParams,
    rng: &mut R,
    shuffler: &mut S,
) -> Result<(f64, String)> {
    check_range(values, params.tau)?;
    let reports: Vec<ClientReport> = values.iter().map(|&z| randomize_unchecked(z, params, rng)).collect();
    let bits = shuffle(&reports, shuffler)?;
    let estimate = analyze_1d(&bits, values.len(), params)?;
    Ok((estimate, run_length_encode(&bits)))
}

fn check_range(values: &[f64], tau: f64) -> Result<()> {
    ensure_finite(values, "protocol inputs")?;
    if let Some(bad) = values.iter().find(|&&z| z < 0.0 || z > tau) {
        return Err(Error::invalid("z", format!("must lie in [0, {tau}], got {bad}")));
    }
    Ok(())
}

/// Per-coordinate budget used by [`p_vec`]: `ε₀ = ε/(4√(2 ln(2/δ)))`,
/// `δ₀ = δ/(2d)`.
///
/// With `g ≥ 2√d` each coordinate's divergence `ε₀(2/g + |Δ_j|/τ)` is at most
/// `ε₀(1/√d + |Δ_j|/(2C))`, whose squares sum to at most `4ε₀²` for inputs in
/// the `C`-ball; advanced composition over the `d` coordinates with slack
/// `δ/2` then stays within `(ε, δ)` when `ε ≤ 2√(2 ln(2/δ))`.
pub fn p_vec_params(s: usize, d: usize, c: f64, epsilon: f64, delta: f64) -> Result<P1dParams> {
    if d == 0 {
        return Err(Error::invalid("d", "must be >= 1"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid("delta", format!("must lie in (0, 1), got {delta}")));
    }
    let log_term = (2.0 / delta).ln();
    let eps_cap = 2.0 * (2.0 * log_term).sqrt();
    if !(epsilon > 0.0 && epsilon <= eps_cap) {
        return Err(Error::invalid(
            "epsilon",
            format!("must lie in (0, {eps_cap}] for delta = {delta}, got {epsilon}"),
        ));
    }
    let eps0 = epsilon / (4.0 * (2.0 * log_term).sqrt());
    let delta0 = delta / (2.0 * d as f64);
    let g_floor = (2.0 * (d as f64).sqrt()).ceil() as u64;
    derive_with_floor(s, 2.0 * c, eps0, delta0, g_floor)
}

/// Coordinate-wise sum of vectors with `‖x_i‖ ≤ C` under `(ε, δ)` shuffle DP.
pub fn p_vec<R: Rng + ?Sized>(vectors: &[Vector], c: f64, epsilon: f64, delta: f64, rng: &mut R) -> Result<Vector> {
    let (dim, flat) = flatten(vectors)?;
    let params = p_vec_params(vectors.len(), dim, c, epsilon, delta)?;
    p_vec_flat(&flat, dim, c, &params, rng).map(Vector::from_trusted)
}

/// [`p_vec`] with explicit protocol parameters; `params.tau()` must be `2C`.
pub fn p_vec_with_params<R: Rng + ?Sized>(
    vectors: &[Vector],
    c: f64,
    params: &P1dParams,
    rng: &mut R,
) -> Result<Vector> {
    let (dim, flat) = flatten(vectors)?;
    p_vec_flat(&flat, dim, c, params, rng).map(Vector::from_trusted)
}

pub(crate) fn p_vec_flat<R: Rng + ?Sized>(
    rows: &[f64],
    dim: usize,
    c: f64,
    params: &P1dParams,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if (params.tau - 2.0 * c).abs() > 1e-12 * c.max(1.0) {
        return Err(Error::invalid("params", "protocol range must equal 2C"));
    }
    let s = rows.len() / dim;
    for row in rows.chunks_exact(dim) {
        let n = norm(row);
        if n > c * (1.0 + 1e-12) {
            return Err(Error::invalid("vectors", format!("norm {n} exceeds C = {c}")));
        }
    }
    let mut shifted = vec![0.0; s];
    let mut out = vec![0.0; dim];
    for (j, o) in out.iter_mut().enumerate() {
        for (i, v) in shifted.iter_mut().enumerate() {
            *v = (rows[i * dim + j] + c).clamp(0.0, 2.0 * c);
        }
        *o = run_p1d_pooled(&shifted, params, rng)? - s as f64 * c;
    }
    Ok(out)
}

/// Clip-then-shuffle mean estimate: `p_vec` of the clipped samples over `s`.
pub fn shuffle_mean_oracle1<R: Rng + ?Sized>(
    samples: &[Vector],
    c: f64,
    epsilon: f64,
    delta: f64,
    rng: &mut R,
) -> Result<NoisyGradientEstimate> {
    let (dim, flat) = flatten(samples)?;
    let params = p_vec_params(samples.len(), dim, c, epsilon, delta)?;
    shuffle_mean_flat(&flat, dim, c, &params, rng)
}

/// [`shuffle_mean_oracle1`] with explicit protocol parameters.
pub fn shuffle_mean_oracle1_with_params<R: Rng + ?Sized>(
    samples: &[Vector],
    c: f64,
    params: &P1dParams,
    rng: &mut R,
) -> Result<NoisyGradientEstimate> {
    let (dim, flat) = flatten(samples)?;
    shuffle_mean_flat(&flat, dim, c, params, rng)
}

pub(crate) fn shuffle_mean_flat<R: Rng + ?Sized>(
    rows: &[f64],
    dim: usize,
    c: f64,
    params: &P1dParams,
    rng: &mut R,
) -> Result<NoisyGradientEstimate> {
    let s = rows.len() / dim;
    let mut clipped = rows.to_vec();
    for row in clipped.chunks_exact_mut(dim) {
        crate::math::clip_in_place(row, c);
    }
    let sum = p_vec_flat(&clipped, dim, c, params, rng)?;
    let sf = s as f64;
    Ok(NoisyGradientEstimate {
        estimate: Vector::from_trusted(sum.into_iter().map(|v| v / sf).collect()),
        clip_threshold: c,
        noise_sigma_squared: params.noise_variance(s) / (sf * sf),
        batch_size: s,
    })
}

/// Per-coordinate budget of the median-of-means shuffle oracle:
/// `ε_j = ε/(4√(2d ln(1/δ_j)))` with `δ_j = δ/(2d)`.
pub fn coordinate_budget(d: usize, epsilon: f64, delta: f64) -> (f64, f64) {
    let delta_j = delta / (2.0 * d as f64);
    let eps_j = epsilon / (4.0 * (2.0 * d as f64 * (1.0 / delta_j).ln()).sqrt());
    (eps_j, delta_j)
}

/// Median-of-means over shuffle-protocol group sums.
pub fn shuffle_mean_oracle2<R: Rng + ?Sized>(
    samples: &[Vector],
    tau: f64,
    m: usize,
    epsilon: f64,
    delta: f64,
    rng: &mut R,
) -> Result<NoisyGradientEstimate> {
    let (dim, flat) = flatten(samples)?;
    let params = coordinate_protocol_params(samples.len(), dim, tau, m, epsilon, delta)?;
    shuffle_median_flat(&flat, dim, m, &params, rng)
}

/// Protocol parameters for each group of [`shuffle_mean_oracle2`].
pub fn coordinate_protocol_params(
    s: usize,
    d: usize,
    tau: f64,
    m: usize,
    epsilon: f64,
    delta: f64,
) -> Result<P1dParams> {
    check_groups(s, m)?;
    if d == 0 {
        return Err(Error::invalid("d", "must be >= 1"));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::invalid("tau", format!("must be finite and > 0, got {tau}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid("delta", format!("must lie in (0, 1), got {delta}")));
    }
    let cap = 8.0 * (2.0 * d as f64 / delta).ln();
    if !(epsilon > 0.0 && epsilon <= cap) {
        return Err(Error::invalid(
            "epsilon",
            format!("must lie in (0, 8 ln(2d/δ)] = (0, {cap}], got {epsilon}"),
        ));
    }
    let (eps_j, delta_j) = coordinate_budget(d, epsilon, delta);
    derive_p1d_params(s / m, 2.0 * tau, eps_j, delta_j)
}

pub(crate) fn check_groups(s: usize, m: usize) -> Result<()> {
    if m == 0 || m > s {
        return Err(Error::invalid("m", format!("need 1 <= m <= s = {s}, got {m}")));
    }
    if !s.is_multiple_of(m) {
        return Err(Error::invalid("m", format!("{m} does not divide batch size {s}")));
    }
    Ok(())
}

pub(crate) fn shuffle_median_flat<R: Rng + ?Sized>(
    rows: &[f64],
    dim: usize,
    m: usize,
    params: &P1dParams,
    rng: &mut R,
) -> Result<NoisyGradientEstimate> {
    let s = rows.len() / dim;
    check_groups(s, m)?;
    let tau = 0.5 * params.tau;
    let group = s / m;
    let mut shifted = vec![0.0; group];
    let mut group_means = vec![0.0; m];
    let mut estimate = vec![0.0; dim];
    for (j, e) in estimate.iter_mut().enumerate() {
        for (g, mean) in group_means.iter_mut().enumerate() {
            for (i, v) in shifted.iter_mut().enumerate() {
                *v = rows[(g * group + i) * dim + j].clamp(-tau, tau) + tau;
            }
            *mean = run_p1d_pooled(&shifted, params, rng)? / group as f64 - tau;
        }
        *e = median(&group_means)?;
    }
    let gf = group as f64;
    Ok(NoisyGradientEstimate {
        estimate: Vector::from_trusted(estimate),
        clip_threshold: tau,
        noise_sigma_squared: params.noise_variance(group) / (gf * gf),
        batch_size: s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn derived_parameters_match_formulas() {
        let params = derive_p1d_params(100, 1.0, 1.0, 0.01).unwrap();
        assert_eq!(params.g(), 20);
        let expected_b = (180.0 * 400.0 * 200f64.ln() / 100.0).ceil() as u64 + 1;
        assert_eq!(params.b(), expected_b);
        assert_abs_diff_eq!(
            params.p(),
            90.0 * 400.0 * 200f64.ln() / (expected_b as f64 * 100.0),
            epsilon = 1e-15
        );
        assert!(params.p() < 0.5);

        let doubled = derive_p1d_params(200, 1.0, 1.0, 0.01).unwrap();
        assert!(doubled.p() <= params.p() + 1e-15);

        let degenerate = derive_p1d_params(10, 0.0, 1.0, 0.01).unwrap();
        assert_eq!(degenerate.g(), 2);
        assert!(derive_p1d_params(10, 1.0, 16.0, 0.01).is_err());
        assert!(derive_p1d_params(10, 1.0, 1.0, 0.5).is_err());
    }

    #[test]
    fn randomizer_rounding_probability() {
        // z = 0.37, τ = 1, g = 10: level 3 w.p. 0.3, 4 w.p. 0.7.
        let params = P1dParams::new(10, 0, 0.0, 1.0).unwrap();
        let mut r = rng(1);
        let n = 100_000;
        let fours = (0..n)
            .filter(|_| randomize_1d(0.37, &params, &mut r).unwrap().ones() == 4)
            .count();
        let share = fours as f64 / n as f64;
        assert!((share - 0.7).abs() < 4.0 * (0.21 / n as f64).sqrt(), "{share}");
        assert!(randomize_1d(1.5, &params, &mut r).is_err());
        assert!(randomize_1d(-0.1, &params, &mut r).is_err());
        let zero = randomize_1d(0.0, &params, &mut r).unwrap();
        assert_eq!((zero.ones(), zero.len()), (0, 10));
        assert!(zero.bits().all(|b| !b));
    }

    #[test]
    fn expected_ones_is_linear() {
        let params = P1dParams::new(16, 40, 0.2, 2.0).unwrap();
        let mut r = rng(2);
        let z = 1.3;
        let n = 50_000;
        let ones: Vec<f64> = (0..n)
            .map(|_| randomize_1d(z, &params, &mut r).unwrap().ones() as f64)
            .collect();
        let mean = ones.iter().sum::<f64>() / n as f64;
        let var = ones.iter().map(|o| (o - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let expect = z * 16.0 / 2.0 + 40.0 * 0.2;
        assert!((mean - expect).abs() < 4.0 * (var / n as f64).sqrt());
    }

    #[test]
    fn binomial_sampler_moments() {
        let mut r = rng(3);
        for &(n, p) in &[(10u64, 0.3), (64, 0.05), (65, 0.05), (5000, 0.01)] {
            let draws: Vec<f64> = (0..40_000).map(|_| sample_binomial(n, p, &mut r) as f64).collect();
            let mean = draws.iter().sum::<f64>() / draws.len() as f64;
            let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / draws.len() as f64;
            let target_var = n as f64 * p * (1.0 - p);
            assert!((mean - n as f64 * p).abs() < 4.0 * (target_var / draws.len() as f64).sqrt());
            assert!((var / target_var - 1.0).abs() < 0.05);
            assert!(draws.iter().all(|&x| x <= n as f64));
        }
        assert_eq!(sample_binomial(0, 0.3, &mut r), 0);
    }

    #[test]
    fn analyzer_example() {
        let params = P1dParams::new(10, 5, 0.2, 1.0).unwrap();
        let mut bits = vec![false; 45];
        bits.iter_mut().take(40).for_each(|b| *b = true);
        assert_abs_diff_eq!(analyze_1d(&bits, 3, &params).unwrap(), 3.7, epsilon = 1e-12);
        assert!(analyze_1d(&bits[1..], 3, &params).is_err());
        let silent = P1dParams::new(10, 5, 0.0, 1.0).unwrap();
        assert_eq!(analyze_1d(&[false; 45], 3, &silent).unwrap(), 0.0);
    }

    #[test]
    fn shuffle_preserves_multiset_and_output() {
        let params = P1dParams::new(8, 30, 0.1, 1.0).unwrap();
        let mut r = rng(4);
        let reports: Vec<ClientReport> = [0.2, 0.9, 0.5, 0.0]
            .iter()
            .map(|&z| randomize_1d(z, &params, &mut r).unwrap())
            .collect();
        let ordered: Vec<bool> = reports.iter().flat_map(|r| r.bits()).collect();
        let shuffled = shuffle(&reports, &mut r).unwrap();
        assert_eq!(shuffled.len(), ordered.len());
        assert_eq!(
            shuffled.iter().filter(|&&b| b).count(),
            ordered.iter().filter(|&&b| b).count()
        );
        assert_eq!(
            analyze_1d(&shuffled, 4, &params).unwrap(),
            analyze_1d(&ordered, 4, &params).unwrap()
        );
        let single = shuffle(&reports[..1], &mut r).unwrap();
        assert_eq!(single.iter().filter(|&&b| b).count() as u64, reports[0].ones());
        let mismatched = [reports[0], ClientReport { ones: 1, len: 3 }];
        assert!(shuffle(&mismatched, &mut r).is_err());
    }

    #[test]
    fn first_position_frequency_matches_ones_fraction() {
        let reports = [
            ClientReport { ones: 3, len: 10 },
            ClientReport { ones: 7, len: 10 },
            ClientReport { ones: 2, len: 10 },
        ];
        let fraction = 12.0 / 30.0;
        let mut r = rng(5);
        let trials = 10_000;
        let hits = (0..trials).filter(|_| shuffle(&reports, &mut r).unwrap()[0]).count() as f64;
        let sd = (trials as f64 * fraction * (1.0 - fraction)).sqrt();
        assert!((hits - trials as f64 * fraction).abs() <= 3.0 * sd);
    }

    #[test]
    fn traced_and_fast_paths_agree() {
        let params = derive_p1d_params(5, 1.0, 2.0, 0.05).unwrap();
        let values = [0.1, 0.5, 0.99, 0.0, 1.0];
        let fast = run_p1d(&values, &params, &mut rng(6)).unwrap();
        let (traced, transcript) = run_p1d_traced(&values, &params, &mut rng(6), &mut rng(60)).unwrap();
        assert_eq!(fast, traced);
        let total: u64 = transcript
            .split(' ')
            .map(|run| run.split_once('x').unwrap().1.parse::<u64>().unwrap())
            .sum();
        assert_eq!(total, 5 * params.report_len());
        assert_eq!(run_length_encode(&[true, true, false, true]), "1x2 0x1 1x1");
    }

    #[test]
    fn pooled_path_matches_per_client_moments() {
        let params = derive_p1d_params(6, 1.0, 1.0, 0.05).unwrap();
        let values = [0.1, 0.35, 0.8, 0.0, 1.0, 0.62];
        let truth: f64 = values.iter().sum();
        let runs = 20_000;
        let moments = |pooled: bool, seed: u64| {
            let mut r = rng(seed);
            let draws: Vec<f64> = (0..runs)
                .map(|_| {
                    if pooled {
                        run_p1d_pooled(&values, &params, &mut r).unwrap()
                    } else {
                        run_p1d(&values, &params, &mut r).unwrap()
                    }
                })
                .collect();
            let mean = draws.iter().sum::<f64>() / runs as f64;
            let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (runs - 1) as f64;
            (mean, var)
        };
        let (m1, v1) = moments(false, 61);
        let (m2, v2) = moments(true, 62);
        for (m, v) in [(m1, v1), (m2, v2)] {
            assert!((m - truth).abs() < 4.0 * (v / runs as f64).sqrt(), "{m} vs {truth}");
        }
        assert!((v2 / v1 - 1.0).abs() < 0.06, "{v1} vs {v2}");
        assert!(run_p1d_pooled(&[1.5], &params, &mut rng(0)).is_err());
    }

    #[test]
    fn pooled_path_handles_counts_beyond_u64() {
        let params = P1dParams::new(4, 1 << 61, 0.25, 1.0).unwrap();
        let values = vec![0.5; 64];
        let estimate = run_p1d_pooled(&values, &params, &mut rng(63)).unwrap();
        let sd = params.noise_variance(64).sqrt();
        assert!((estimate - 32.0).abs() < 6.0 * sd, "{estimate}");
    }

    #[test]
    fn p_vec_noiseless_limit() {
        let v = Vector::new(vec![0.5, -0.5]).unwrap();
        let params = P1dParams::new(1 << 20, 0, 0.0, 2.0).unwrap();
        let out = p_vec_with_params(&[v], 1.0, &params, &mut rng(7)).unwrap();
        assert_abs_diff_eq!(out[0], 0.5, epsilon = 4e-6);
        assert_abs_diff_eq!(out[1], -0.5, epsilon = 4e-6);
        let too_long = Vector::new(vec![2.0, 0.0]).unwrap();
        assert!(p_vec_with_params(&[too_long], 1.0, &params, &mut rng(7)).is_err());
    }

    #[test]
    fn p_vec_zero_inputs_are_unbiased() {
        let zeros = vec![Vector::zeros(3); 20];
        let params = p_vec_params(20, 3, 1.0, 2.0, 1e-3).unwrap();
        let mut r = rng(8);
        let runs = 3000;
        let mut sum = [0.0; 3];
        let mut sq = [0.0; 3];
        for _ in 0..runs {
            let out = p_vec_with_params(&zeros, 1.0, &params, &mut r).unwrap();
            for j in 0..3 {
                sum[j] += out[j];
                sq[j] += out[j] * out[j];
            }
        }
        for j in 0..3 {
            let mean = sum[j] / runs as f64;
            let var = sq[j] / runs as f64 - mean * mean;
            assert!(mean.abs() < 4.0 * (var / runs as f64).sqrt(), "coordinate {j}: {mean}");
        }
    }

    #[test]
    fn oracle2_recovers_clipped_mean_in_noiseless_limit() {
        let samples: Vec<Vector> = [0.3, -0.2, 0.8, 0.1]
            .iter()
            .map(|&x| Vector::new(vec![x]).unwrap())
            .collect();
        let params = P1dParams::new(1 << 24, 0, 0.0, 2.0).unwrap();
        let (dim, flat) = flatten(&samples).unwrap();
        let est = shuffle_median_flat(&flat, dim, 1, &params, &mut rng(9)).unwrap();
        assert_abs_diff_eq!(est.estimate[0], 0.25, epsilon = 1e-6);
        assert!(coordinate_protocol_params(10, 2, 1.0, 3, 1.0, 1e-3).is_err());
        assert!(coordinate_protocol_params(12, 2, 1.0, 3, 100.0, 1e-3).is_err());
    }

    #[test]
    fn coordinate_budget_formula() {
        let (eps_j, delta_j) = coordinate_budget(4, 2.0, 1e-4);
        assert_eq!(delta_j, 1e-4 / 8.0);
        assert_abs_diff_eq!(eps_j, 2.0 / (4.0 * (8.0 * (8e4f64).ln()).sqrt()), epsilon = 1e-15);
    }

    #[test]
    fn batch_dimension_check() {
        let batch = [Vector::zeros(2), Vector::zeros(3)];
        assert!(shuffle_mean_oracle1(&batch, 1.0, 1.0, 1e-3, &mut rng(1)).is_err());
    }
}
