//! Private mean estimators for gradient batches.
//!
//! Two central-model estimators: L2 clipping followed by Gaussian noise, and
//! a coordinate-wise median of clipped group means followed by Gaussian
//! noise. [`OracleKind`] puts these and the shuffle-model estimators behind a
//! single entry point that works on row-major gradient buffers.

use rand::Rng;
use std::fmt;
use std::str::FromStr;

use crate::error::{check_dim, Error, Result};
use crate::losses::LossModel;
use crate::math::{check_clip, clip_in_place, flatten, median, norm, sum_rows, Ball, Vector};
use crate::privacy::{add_gaussian_noise, gaussian_sigma_squared, ZcdpBudget};
use crate::shuffle;

/// Failure probability used to size median-of-means groups inside optimizers.
pub const GROUP_FAILURE_PROBABILITY: f64 = 0.05;

/// Output of a mean oracle together with the parameters that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyGradientEstimate {
    pub estimate: Vector,
    /// L2 clip `C`, or the per-coordinate clip `τ` for coordinate oracles.
    pub clip_threshold: f64,
    /// Per-coordinate variance of the privacy noise in `estimate`.
    pub noise_sigma_squared: f64,
    pub batch_size: usize,
}

/// A `k`-th moment bound on gradient norms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentAssumption {
    k: f64,
    r_k: f64,
}

impl MomentAssumption {
    pub fn new(k: f64, r_k: f64) -> Result<Self> {
        if !(k >= 2.0 && k.is_finite()) {
            return Err(Error::invalid("k", format!("must be finite and >= 2, got {k}")));
        }
        if !(r_k > 0.0 && r_k.is_finite()) {
            return Err(Error::invalid("r_k", format!("must be finite and > 0, got {r_k}")));
        }
        Ok(MomentAssumption { k, r_k })
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    /// The bound `r_k`, i.e. the `k`-th root of the moment.
    pub fn r_k(&self) -> f64 {
        self.r_k
    }
}

/// Clipped-mean estimate with Gaussian noise calibrated to `ρ`-zCDP:
/// `σ² = (2C/s)²/(2ρ)`.
pub fn mean_oracle1<R: Rng + ?Sized>(
    samples: &[Vector],
    c: f64,
    rho: ZcdpBudget,
    rng: &mut R,
) -> Result<NoisyGradientEstimate> {
    let s = samples.len().max(1);
    let sigma_squared = gaussian_sigma_squared(2.0 * c / s as f64, rho.rho())?;
    mean_oracle1_with_noise(samples, c, sigma_squared, rng)
}

/// [`mean_oracle1`] with the noise variance given directly (`0` disables noise).
pub fn mean_oracle1_with_noise<R: Rng + ?Sized>(
    samples: &[Vector],
    c: f64,
    sigma_squared: f64,
    rng: &mut R,
) -> Result<NoisyGradientEstimate> {
    let (dim, flat) = flatten(samples)?;
    let mut estimate = clipped_mean(&flat, dim, c)?;
    add_gaussian_noise(&mut estimate, sigma_squared, rng)?;
    Ok(NoisyGradientEstimate {
        estimate: Vector::from_trusted(estimate),
        clip_threshold: c,
        noise_sigma_squared: sigma_squared,
        batch_size: samples.len(),
    })
}

/// Mean of L2-clipped rows, summed in [`sum_rows`] order.
pub fn clipped_mean(rows: &[f64], dim: usize, c: f64) -> Result<Vec<f64>> {
    check_clip(c)?;
    let s = rows_in(rows, dim)?;
    let mut clipped = rows.to_vec();
    for row in clipped.chunks_exact_mut(dim) {
        clip_in_place(row, c);
    }
    let mut out = vec![0.0; dim];
    sum_rows(&clipped, dim, &mut out);
    let sf = s as f64;
    out.iter_mut().for_each(|v| *v /= sf);
    Ok(out)
}

fn rows_in(rows: &[f64], dim: usize) -> Result<usize> {
    if dim == 0 || rows.is_empty() {
        return Err(Error::Empty("sample batch"));
    }
    if !rows.len().is_multiple_of(dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: rows.len() % dim,
        });
    }
    Ok(rows.len() / dim)
}

/// Median-of-means estimate with noise `σ² = (2τm√d/s)²/(2ρ)`.
pub fn coordinate_mean_oracle<R: Rng + ?Sized>(
    samples: &[Vector],
    tau: f64,
    m: usize,
    rho: ZcdpBudget,
    rng: &mut R,
) -> Result<NoisyGradientEstimate> {
    let (dim, _) = flatten(samples)?;
    let sigma_squared = coordinate_sigma_squared(samples.len(), dim, tau, m, rho.rho())?;
    coordinate_mean_oracle_with_noise(samples, tau, m, sigma_squared, rng)
}

/// [`coordinate_mean_oracle`] with the noise variance given directly.
pub fn coordinate_mean_oracle_with_noise<R: Rng + ?Sized>(
    samples: &[Vector],
    tau: f64,
    m: usize,
    sigma_squared: f64,
    rng: &mut R,
) -> Result<NoisyGradientEstimate> {
    let (dim, flat) = flatten(samples)?;
    let mut estimate = median_of_means(&flat, dim, tau, m)?;
    add_gaussian_noise(&mut estimate, sigma_squared, rng)?;
    Ok(NoisyGradientEstimate {
        estimate: Vector::from_trusted(estimate),
        clip_threshold: tau,
        noise_sigma_squared: sigma_squared,
        batch_size: samples.len(),
    })
}

/// Noise variance of the coordinate oracle for `s` samples in `m` groups.
pub fn coordinate_sigma_squared(s: usize, dim: usize, tau: f64, m: usize, rho: f64) -> Result<f64> {
    shuffle::check_groups(s, m)?;
    let sensitivity = 2.0 * tau * m as f64 * (dim as f64).sqrt() / s as f64;
    gaussian_sigma_squared(sensitivity, rho)
}

/// Per coordinate: clamp to `[−τ, τ]`, average over `m` contiguous groups,
/// take the median of the group means.
pub fn median_of_means(rows: &[f64], dim: usize, tau: f64, m: usize) -> Result<Vec<f64>> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::invalid("tau", format!("must be > 0, got {tau}")));
    }
    let s = rows_in(rows, dim)?;
    shuffle::check_groups(s, m)?;
    let group = s / m;
    let mut means = vec![0.0; m];
    let mut out = vec![0.0; dim];
    for (j, o) in out.iter_mut().enumerate() {
        for (g, mean) in means.iter_mut().enumerate() {
            let total: f64 = (0..group)
                .map(|i| rows[(g * group + i) * dim + j].clamp(-tau, tau))
                .sum();
            *mean = total / group as f64;
        }
        *o = median(&means)?;
    }
    Ok(out)
}

/// Group count `⌈20 ln(4d/ζ)⌉` giving the median-of-means guarantee with
/// failure probability `ζ`.
pub fn group_count(dim: usize, failure_probability: f64) -> usize {
    (20.0 * (4.0 * dim as f64 / failure_probability).ln()).ceil() as usize
}

/// Largest empirical `k`-th moment of gradient norms over the grid:
/// `max_w (1/s) Σ_i ‖∇f(w, x_i)‖^k`.
pub fn estimate_empirical_moment(samples: &[Vector], w_grid: &[Vector], loss: &dyn LossModel, k: f64) -> Result<f64> {
    let (row_len, rows) = flatten(samples)?;
    let dim = w_grid.first().ok_or(Error::Empty("moment grid"))?.dim();
    check_dim(loss.row_len(dim), row_len)?;
    let mut grad = vec![0.0; dim];
    let mut best = f64::NEG_INFINITY;
    for w in w_grid {
        check_dim(dim, w.dim())?;
        let total: f64 = rows
            .chunks_exact(row_len)
            .map(|x| {
                loss.subgradient(w, x, &mut grad);
                norm(&grad).powf(k)
            })
            .sum();
        best = best.max(total / samples.len() as f64);
    }
    Ok(best)
}

/// `count` uniform points in the ball plus the `2d` points where the
/// coordinate axes through the center meet the boundary.
pub fn default_moment_grid<R: Rng + ?Sized>(ball: &Ball, count: usize, rng: &mut R) -> Vec<Vector> {
    let dim = ball.dim();
    let center = ball.center();
    let radius = ball.radius();
    let mut grid = Vec::with_capacity(count + 2 * dim);
    for _ in 0..count {
        let mut dir: Vec<f64> = (0..dim).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
        let len = norm(&dir).max(f64::MIN_POSITIVE);
        let scale = radius * rng.random::<f64>().powf(1.0 / dim as f64) / len;
        dir.iter_mut().zip(center.iter()).for_each(|(v, c)| *v = c + *v * scale);
        grid.push(Vector::from_trusted(dir));
    }
    for j in 0..dim {
        for sign in [1.0, -1.0] {
            let mut p = center.as_slice().to_vec();
            p[j] += sign * radius;
            grid.push(Vector::from_trusted(p));
        }
    }
    grid
}

/// Which mean estimator an optimizer queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OracleKind {
    CentralL2,
    CentralCoordinate,
    ShuffleL2,
    ShuffleCoordinate,
}

impl OracleKind {
    pub const ALL: [OracleKind; 4] = [
        OracleKind::CentralL2,
        OracleKind::CentralCoordinate,
        OracleKind::ShuffleL2,
        OracleKind::ShuffleCoordinate,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            OracleKind::CentralL2 => "central-l2",
            OracleKind::CentralCoordinate => "central-coordinate",
            OracleKind::ShuffleL2 => "shuffle-l2",
            OracleKind::ShuffleCoordinate => "shuffle-coordinate",
        }
    }

    pub fn is_shuffle(&self) -> bool {
        matches!(self, OracleKind::ShuffleL2 | OracleKind::ShuffleCoordinate)
    }

    fn is_coordinate(&self) -> bool {
        matches!(self, OracleKind::CentralCoordinate | OracleKind::ShuffleCoordinate)
    }

    /// Number of rows actually used from a batch of `s`: coordinate oracles
    /// drop the tail that does not fill a whole group.
    pub fn usable_rows(&self, s: usize, dim: usize) -> usize {
        if self.is_coordinate() {
            let m = self.groups(s, dim);
            s / m * m
        } else {
            s
        }
    }

    fn groups(&self, s: usize, dim: usize) -> usize {
        group_count(dim, GROUP_FAILURE_PROBABILITY).min(s).max(1)
    }

    /// Estimates the mean of the row-major gradient buffer `rows` for an L2
    /// clip level `clip`. Coordinate oracles use `τ = clip/√d`.
    pub fn estimate<R: Rng + ?Sized>(
        &self,
        rows: &[f64],
        dim: usize,
        clip: f64,
        budget: StepBudget,
        rng: &mut R,
    ) -> Result<NoisyGradientEstimate> {
        let s = rows_in(rows, dim)?;
        if let StepBudget::Noiseless = budget {
            return self.noiseless(rows, dim, clip);
        }
        match (self, budget) {
            (OracleKind::CentralL2, StepBudget::Zcdp(rho)) => {
                let sigma_squared = gaussian_sigma_squared(2.0 * clip / s as f64, rho)?;
                self.with_gaussian(self.pre_noise(rows, dim, clip)?, clip, sigma_squared, s, rng)
            }
            (OracleKind::CentralCoordinate, StepBudget::Zcdp(rho)) => {
                let used = self.usable_rows(s, dim);
                let m = self.groups(s, dim);
                let tau = coordinate_tau(clip, dim);
                let sigma_squared = coordinate_sigma_squared(used, dim, tau, m, rho)?;
                let mut est = self.with_gaussian(self.pre_noise(rows, dim, clip)?, tau, sigma_squared, used, rng)?;
                est.clip_threshold = tau;
                Ok(est)
            }
            (OracleKind::ShuffleL2, StepBudget::Approx { epsilon, delta }) => {
                let params = shuffle::p_vec_params(s, dim, clip, epsilon, delta)?;
                shuffle::shuffle_mean_flat(rows, dim, clip, &params, rng)
            }
            (OracleKind::ShuffleCoordinate, StepBudget::Approx { epsilon, delta }) => {
                let used = self.usable_rows(s, dim);
                let m = self.groups(s, dim);
                let tau = coordinate_tau(clip, dim);
                let params = shuffle::coordinate_protocol_params(used, dim, tau, m, epsilon, delta)?;
                shuffle::shuffle_median_flat(&rows[..used * dim], dim, m, &params, rng)
            }
            (kind, budget) => Err(Error::invalid(
                "budget",
                format!("{} oracle cannot spend a {budget:?} step budget", kind.name()),
            )),
        }
    }

    /// The estimate before privacy noise (central oracles) or its
    /// noiseless-limit counterpart (shuffle oracles).
    pub fn pre_noise(&self, rows: &[f64], dim: usize, clip: f64) -> Result<Vec<f64>> {
        let s = rows_in(rows, dim)?;
        if self.is_coordinate() {
            let used = self.usable_rows(s, dim);
            median_of_means(&rows[..used * dim], dim, coordinate_tau(clip, dim), self.groups(s, dim))
        } else {
            clipped_mean(rows, dim, clip)
        }
    }

    /// Noise variance a central oracle adds for a batch of `s` rows.
    pub fn central_sigma_squared(&self, s: usize, dim: usize, clip: f64, rho: f64) -> Result<f64> {
        match self {
            OracleKind::CentralL2 => gaussian_sigma_squared(2.0 * clip / s as f64, rho),
            OracleKind::CentralCoordinate => {
                let used = self.usable_rows(s, dim);
                coordinate_sigma_squared(used, dim, coordinate_tau(clip, dim), self.groups(s, dim), rho)
            }
            _ => Err(Error::invalid("oracle", "shuffle oracles do not add Gaussian noise")),
        }
    }

    /// Adds Gaussian noise to a cached pre-noise estimate.
    pub fn with_gaussian<R: Rng + ?Sized>(
        &self,
        mut pre_noise: Vec<f64>,
        clip: f64,
        sigma_squared: f64,
        batch_size: usize,
        rng: &mut R,
    ) -> Result<NoisyGradientEstimate> {
        add_gaussian_noise(&mut pre_noise, sigma_squared, rng)?;
        Ok(NoisyGradientEstimate {
            estimate: Vector::from_trusted(pre_noise),
            clip_threshold: clip,
            noise_sigma_squared: sigma_squared,
            batch_size,
        })
    }

    fn noiseless(&self, rows: &[f64], dim: usize, clip: f64) -> Result<NoisyGradientEstimate> {
        let s = rows_in(rows, dim)?;
        let threshold = if self.is_coordinate() {
            coordinate_tau(clip, dim)
        } else {
            clip
        };
        Ok(NoisyGradientEstimate {
            estimate: Vector::from_trusted(self.pre_noise(rows, dim, clip)?),
            clip_threshold: threshold,
            noise_sigma_squared: 0.0,
            batch_size: self.usable_rows(s, dim),
        })
    }
}

fn coordinate_tau(clip: f64, dim: usize) -> f64 {
    clip / (dim as f64).sqrt()
}

impl fmt::Display for OracleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OracleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OracleKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            let valid: Vec<&str> = OracleKind::ALL.iter().map(|k| k.name()).collect();
            Error::Config(format!("unknown oracle '{s}'; valid options: {}", valid.join(", ")))
        })
    }
}

/// Privacy spend of a single oracle call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepBudget {
    Zcdp(f64),
    Approx {
        epsilon: f64,
        delta: f64,
    },
    /// Exact pre-noise estimate; no privacy.
    Noiseless,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{pareto_tail, SeededSampler};
    use crate::losses::quadratic_loss;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn v(x: &[f64]) -> Vector {
        Vector::new(x.to_vec()).unwrap()
    }

    fn scalars(x: &[f64]) -> Vec<Vector> {
        x.iter().map(|&a| v(&[a])).collect()
    }

    #[test]
    fn clipped_mean_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let est = mean_oracle1_with_noise(&[v(&[3.0, 4.0]), v(&[0.0, 0.0])], 2.0, 0.0, &mut rng).unwrap();
        assert_abs_diff_eq!(est.estimate[0], 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(est.estimate[1], 0.8, epsilon = 1e-15);
        assert_eq!(est.batch_size, 2);

        let inside = [v(&[0.1, -0.2]), v(&[0.3, 0.4]), v(&[-0.5, 0.0])];
        let est = mean_oracle1_with_noise(&inside, 1.0, 0.0, &mut rng).unwrap();
        assert_abs_diff_eq!(est.estimate[0], -0.1 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(est.estimate[1], 0.2 / 3.0, epsilon = 1e-15);
        assert!(mean_oracle1_with_noise(&[], 1.0, 0.0, &mut rng).is_err());
    }

    #[test]
    fn noise_calibration() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rho = ZcdpBudget::from_epsilon(0.5).unwrap();
        let est = mean_oracle1(&vec![v(&[1.0]); 10], 2.0, rho, &mut rng).unwrap();
        assert_abs_diff_eq!(est.noise_sigma_squared, 4.0 * 4.0 / (100.0 * 0.25), epsilon = 1e-15);
        let coord = coordinate_mean_oracle(&vec![v(&[1.0, 0.0]); 12], 0.5, 3, rho, &mut rng).unwrap();
        assert_abs_diff_eq!(
            coord.noise_sigma_squared,
            4.0 * 0.25 * 9.0 * 2.0 / (144.0 * 0.25),
            epsilon = 1e-14
        );
    }

    #[test]
    fn pareto_clip_bias_within_bound() {
        // Pareto(3, 1): ν = 1.5, E X³ is infinite at shape 3, so the k = 2
        // bound r^(2)/C applies with r^(2) = 3.
        let dist = pareto_tail(3.0, 1.0).unwrap();
        let mut sampler = SeededSampler::new(dist, 11);
        let s = 100_000;
        let c = 5.0;
        let rows: Vec<f64> = (0..s).map(|_| sampler.draw()).collect();
        let est = clipped_mean(&rows, 1, c).unwrap()[0];
        // Exact clipped mean: E min(X, C) = 1.5 − 1/(2C²).
        let exact = 1.5 - 1.0 / (2.0 * c * c);
        let sd = (3.0f64 - 1.5 * 1.5).sqrt() / (s as f64).sqrt();
        assert!((est - exact).abs() < 5.0 * sd);
        assert!(1.5 - exact <= 3.0 / c);
    }

    #[test]
    fn coordinate_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let est = coordinate_mean_oracle_with_noise(&scalars(&[1.0; 4]), 2.0, 2, 0.0, &mut rng).unwrap();
        assert_eq!(est.estimate[0], 1.0);

        let contaminated = scalars(&[1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1e9, 1.0]);
        let est = coordinate_mean_oracle_with_noise(&contaminated, 1e6, 4, 0.0, &mut rng).unwrap();
        assert_eq!(est.estimate[0], 1.0);

        // Four groups of one sample each: means [1.0, 1.2, 0.9, 100.0].
        let est = coordinate_mean_oracle_with_noise(&scalars(&[1.0, 1.2, 0.9, 100.0]), 1e3, 4, 0.0, &mut rng).unwrap();
        assert_abs_diff_eq!(est.estimate[0], 1.1, epsilon = 1e-15);

        assert!(coordinate_mean_oracle_with_noise(&scalars(&[1.0; 5]), 1.0, 2, 0.0, &mut rng).is_err());
        assert!(coordinate_mean_oracle_with_noise(&scalars(&[1.0; 2]), 1.0, 3, 0.0, &mut rng).is_err());
    }

    #[test]
    fn single_group_is_clipped_average() {
        let data = [0.5, -3.0, 2.5, 0.25];
        let est = median_of_means(&data, 1, 1.0, 1).unwrap()[0];
        assert_abs_diff_eq!(est, (0.5 - 1.0 + 1.0 + 0.25) / 4.0, epsilon = 1e-15);
    }

    #[test]
    fn empirical_moment_examples() {
        let loss = quadratic_loss();
        let grid = [Vector::zeros(2)];
        let x = v(&[3.0, 4.0]);
        let m = estimate_empirical_moment(std::slice::from_ref(&x), &grid, &loss, 3.0).unwrap();
        assert_abs_diff_eq!(m, 125.0, epsilon = 1e-12);

        let y = v(&[1.0, 0.0]);
        let grid = [v(&[0.0, 0.0]), v(&[1.0, 0.0])];
        let m = estimate_empirical_moment(&[x, y], &grid, &loss, 2.0).unwrap();
        // At w = 0: (25 + 1)/2 = 13; at w = (1,0): (4 + 16 + 0)/2 = 10.
        assert_abs_diff_eq!(m, 13.0, epsilon = 1e-12);
        assert!(estimate_empirical_moment(&[v(&[1.0, 0.0])], &[], &loss, 2.0).is_err());
    }

    #[test]
    fn default_grid_lies_in_ball() {
        let ball = Ball::new(v(&[1.0, -1.0, 0.5]), 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let grid = default_moment_grid(&ball, 32, &mut rng);
        assert_eq!(grid.len(), 32 + 6);
        assert!(grid.iter().all(|w| ball.contains(w, 1e-12)));
        assert_abs_diff_eq!(grid[32].distance(ball.center()).unwrap(), 2.0, epsilon = 1e-15);
    }

    #[test]
    fn oracle_kind_parsing_and_dispatch() {
        for kind in OracleKind::ALL {
            assert_eq!(kind.name().parse::<OracleKind>().unwrap(), kind);
        }
        let err = "gauss".parse::<OracleKind>().unwrap_err().to_string();
        assert!(err.contains("central-l2") && err.contains("shuffle-coordinate"));

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rows = vec![0.5; 100 * 2];
        for kind in OracleKind::ALL {
            let est = kind.estimate(&rows, 2, 10.0, StepBudget::Noiseless, &mut rng).unwrap();
            assert_abs_diff_eq!(est.estimate[0], 0.5, epsilon = 1e-12);
        }
        assert!(OracleKind::ShuffleL2
            .estimate(&rows, 2, 1.0, StepBudget::Zcdp(1.0), &mut rng)
            .is_err());
        let est = OracleKind::CentralCoordinate
            .estimate(&rows, 2, 1.0, StepBudget::Zcdp(1.0), &mut rng)
            .unwrap();
        assert_eq!(est.batch_size, OracleKind::CentralCoordinate.usable_rows(100, 2));
        let m = group_count(2, GROUP_FAILURE_PROBABILITY).min(100);
        assert_eq!(est.batch_size, 100 / m * m);
    }

    #[test]
    fn group_count_formula() {
        assert_eq!(group_count(1, 0.05), (20.0 * 80f64.ln()).ceil() as usize);
        assert_eq!(group_count(8, 0.05), (20.0 * 640f64.ln()).ceil() as usize);
    }

    proptest! {
        #[test]
        fn swap_sensitivity(
            data in prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 3), 1..20),
            replacement in prop::collection::vec(-50.0f64..50.0, 3),
            idx in 0usize..20,
            c in 0.1f64..10.0,
        ) {
            let rows: Vec<f64> = data.concat();
            let s = data.len();
            let i = idx % s;
            let mut swapped = rows.clone();
            swapped[i * 3..i * 3 + 3].copy_from_slice(&replacement);
            let a = clipped_mean(&rows, 3, c).unwrap();
            let b = clipped_mean(&swapped, 3, c).unwrap();
            let diff: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
            prop_assert!(norm(&diff) <= 2.0 * c / s as f64 * (1.0 + 1e-12));
        }

        #[test]
        fn median_of_means_sensitivity(
            data in prop::collection::vec(-50.0f64..50.0, 12),
            replacement in -1e6f64..1e6,
            idx in 0usize..12,
            tau in 0.1f64..10.0,
        ) {
            let mut swapped = data.clone();
            swapped[idx] = replacement;
            let a = median_of_means(&data, 1, tau, 4).unwrap()[0];
            let b = median_of_means(&swapped, 1, tau, 4).unwrap()[0];
            prop_assert!((a - b).abs() <= 2.0 * tau * 4.0 / 12.0 * (1.0 + 1e-12));
        }
    }
}
