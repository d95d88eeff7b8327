//! Synthetic heavy-tailed data: scalar generators, row distributions and
//! an in-memory dataset with CSV round-tripping.

use rand::distr::Distribution;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;
use std::fmt::Debug;
use std::path::Path;

use crate::error::{Error, Result};
use crate::math::ensure_finite;

/// Smallest probability mass a truncation window may keep; below it the
/// rejection sampler would spin too long.
pub const MIN_TRUNCATED_MASS: f64 = 1e-3;

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Normal `N(mean, var)` conditioned on `[lo, hi]`, sampled by rejection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedNormal {
    mean: f64,
    sd: f64,
    lo: f64,
    hi: f64,
}

pub fn truncated_normal(mean: f64, var: f64, lo: f64, hi: f64) -> Result<TruncatedNormal> {
    ensure_finite(&[mean, var], "truncated normal parameters")?;
    if var <= 0.0 {
        return Err(Error::invalid("var", format!("must be > 0, got {var}")));
    }
    if lo.is_nan() || hi.is_nan() || lo >= hi {
        return Err(Error::invalid("bounds", format!("need lo < hi, got [{lo}, {hi}]")));
    }
    let dist = TruncatedNormal {
        mean,
        sd: var.sqrt(),
        lo,
        hi,
    };
    let mass = dist.mass();
    if mass < MIN_TRUNCATED_MASS {
        return Err(Error::invalid(
            "bounds",
            format!("window keeps mass {mass:e} < {MIN_TRUNCATED_MASS}; rejection sampling would stall"),
        ));
    }
    Ok(dist)
}

impl TruncatedNormal {
    fn standardized(&self) -> (f64, f64) {
        ((self.lo - self.mean) / self.sd, (self.hi - self.mean) / self.sd)
    }

    fn mass(&self) -> f64 {
        let (a, b) = self.standardized();
        std_normal_cdf(b) - std_normal_cdf(a)
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    /// Mean of the truncated law.
    pub fn mean(&self) -> f64 {
        let (a, b) = self.standardized();
        self.mean + self.sd * (std_normal_pdf(a) - std_normal_pdf(b)) / self.mass()
    }

    /// Variance of the truncated law (at most the untruncated variance).
    pub fn variance(&self) -> f64 {
        let (a, b) = self.standardized();
        let z = self.mass();
        let tail = |t: f64| {
            let p = std_normal_pdf(t);
            if p == 0.0 {
                0.0
            } else {
                t * p
            }
        };
        let shift = (std_normal_pdf(a) - std_normal_pdf(b)) / z;
        self.sd * self.sd * (1.0 + (tail(a) - tail(b)) / z - shift * shift)
    }
}

impl Distribution<f64> for TruncatedNormal {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        loop {
            let z: f64 = rng.sample(StandardNormal);
            let x = self.mean + self.sd * z;
            if x >= self.lo && x <= self.hi {
                return x;
            }
        }
    }
}

/// Pareto law with tail index `shape` and minimum `scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParetoTail {
    shape: f64,
    scale: f64,
}

pub fn pareto_tail(shape: f64, scale: f64) -> Result<ParetoTail> {
    if !(shape.is_finite() && shape > 0.0) {
        return Err(Error::invalid("shape", format!("must be > 0, got {shape}")));
    }
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::invalid("scale", format!("must be > 0, got {scale}")));
    }
    Ok(ParetoTail { shape, scale })
}

impl ParetoTail {
    pub fn shape(&self) -> f64 {
        self.shape
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// `E X^k = shape·scale^k/(shape − k)`, finite only for `shape > k`.
    pub fn raw_moment(&self, k: f64) -> Result<f64> {
        if self.shape <= k {
            return Err(Error::invalid(
                "k",
                format!("moment of order {k} is infinite for shape {}", self.shape),
            ));
        }
        Ok(self.shape * self.scale.powf(k) / (self.shape - k))
    }

    pub fn mean(&self) -> Result<f64> {
        self.raw_moment(1.0)
    }
}

impl Distribution<f64> for ParetoTail {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u = 1.0 - rng.random::<f64>();
        self.scale * u.powf(-1.0 / self.shape)
    }
}

/// Zero-mean symmetric heavy-tailed noise `S·scale·(P − 1)` with a random
/// sign `S` and `P ~ Pareto(shape, 1)`. Moments of order `k < shape` exist.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymmetricLomax {
    shape: f64,
    scale: f64,
}

impl SymmetricLomax {
    pub fn new(shape: f64, scale: f64) -> Result<Self> {
        pareto_tail(shape, 1.0)?;
        if !(scale.is_finite() && scale >= 0.0) {
            return Err(Error::invalid("scale", format!("must be >= 0, got {scale}")));
        }
        Ok(SymmetricLomax { shape, scale })
    }

    /// `E|ξ|^k = scale^k · shape · B(k + 1, shape − k)`.
    pub fn abs_moment(&self, k: f64) -> Result<f64> {
        if self.shape <= k {
            return Err(Error::invalid(
                "k",
                format!("moment of order {k} is infinite for shape {}", self.shape),
            ));
        }
        let log_beta = ln_gamma(k + 1.0) + ln_gamma(self.shape - k) - ln_gamma(self.shape + 1.0);
        Ok(self.scale.powf(k) * self.shape * log_beta.exp())
    }
}

impl Distribution<f64> for SymmetricLomax {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u = 1.0 - rng.random::<f64>();
        let magnitude = self.scale * (u.powf(-1.0 / self.shape) - 1.0);
        if rng.random::<bool>() {
            magnitude
        } else {
            -magnitude
        }
    }
}

/// Independent `±1` coordinates with `P(x_j = +1) = p_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct BernoulliProduct {
    probs: Vec<f64>,
}

pub fn bernoulli_product(probs: Vec<f64>) -> Result<BernoulliProduct> {
    if probs.is_empty() {
        return Err(Error::Empty("bernoulli_product"));
    }
    if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::invalid("p_vector", "entries must lie in [0, 1]"));
    }
    Ok(BernoulliProduct { probs })
}

impl BernoulliProduct {
    pub fn mean(&self) -> Vec<f64> {
        self.probs.iter().map(|p| 2.0 * p - 1.0).collect()
    }

    /// `E|x_j − E x_j|^k` in closed form.
    pub fn central_abs_moment(&self, coord: usize, k: f64) -> f64 {
        let p = self.probs[coord];
        let m = 2.0 * p - 1.0;
        p * (1.0 - m).powf(k) + (1.0 - p) * (1.0 + m).powf(k)
    }
}

impl Distribution<Vec<f64>> for BernoulliProduct {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.probs
            .iter()
            .map(|&p| if rng.random::<f64>() < p { 1.0 } else { -1.0 })
            .collect()
    }
}

/// A distribution paired with its own ChaCha stream.
///
/// Not meant to be shared across threads; [`SeededSampler::fork`] derives an
/// independent stream for another worker.
#[derive(Debug, Clone)]
pub struct SeededSampler<D> {
    dist: D,
    rng: ChaCha8Rng,
}

impl<D> SeededSampler<D> {
    pub fn new(dist: D, seed: u64) -> Self {
        SeededSampler {
            dist,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn draw<T>(&mut self) -> T
    where
        D: Distribution<T>,
    {
        self.dist.sample(&mut self.rng)
    }

    /// A sampler for the same law on the ChaCha stream numbered `stream`.
    pub fn fork(&self, stream: u64) -> Self
    where
        D: Clone,
    {
        let mut rng = self.rng.clone();
        rng.set_stream(stream);
        SeededSampler {
            dist: self.dist.clone(),
            rng,
        }
    }
}

/// Scalar laws used to build row distributions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScalarLaw {
    Zero,
    Normal { sd: f64 },
    TruncatedNormal(TruncatedNormal),
    Pareto(ParetoTail),
    SymmetricLomax(SymmetricLomax),
}

impl Distribution<f64> for ScalarLaw {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            ScalarLaw::Zero => 0.0,
            ScalarLaw::Normal { sd } => sd * rng.sample::<f64, _>(StandardNormal),
            ScalarLaw::TruncatedNormal(t) => t.sample(rng),
            ScalarLaw::Pareto(p) => p.sample(rng),
            ScalarLaw::SymmetricLomax(s) => s.sample(rng),
        }
    }
}

/// A law over data rows.
pub trait DataDistribution: Debug + Send + Sync {
    fn row_len(&self) -> usize;
    fn sample_row(&self, rng: &mut dyn RngCore, out: &mut [f64]);
}

/// `x = location + ξ` with i.i.d. noise coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct LocationFamily {
    pub location: Vec<f64>,
    pub noise: ScalarLaw,
}

impl DataDistribution for LocationFamily {
    fn row_len(&self) -> usize {
        self.location.len()
    }

    fn sample_row(&self, rng: &mut dyn RngCore, out: &mut [f64]) {
        for (o, loc) in out.iter_mut().zip(&self.location) {
            *o = loc + self.noise.sample(rng);
        }
    }
}

/// Every row equals `point`; gives exact gradients in noiseless tests.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMass {
    pub point: Vec<f64>,
}

impl DataDistribution for PointMass {
    fn row_len(&self) -> usize {
        self.point.len()
    }

    fn sample_row(&self, _rng: &mut dyn RngCore, out: &mut [f64]) {
        out.copy_from_slice(&self.point);
    }
}

/// Rows `(a, ⟨w_true, a⟩ + e)` with i.i.d. feature coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub w_true: Vec<f64>,
    pub feature: ScalarLaw,
    pub response_noise: ScalarLaw,
}

impl DataDistribution for LinearModel {
    fn row_len(&self) -> usize {
        self.w_true.len() + 1
    }

    fn sample_row(&self, rng: &mut dyn RngCore, out: &mut [f64]) {
        let d = self.w_true.len();
        let mut response = 0.0;
        for (o, w) in out[..d].iter_mut().zip(&self.w_true) {
            *o = self.feature.sample(rng);
            response += w * *o;
        }
        out[d] = response + self.response_noise.sample(rng);
    }
}

/// Independent columns, each with its own law.
#[derive(Debug, Clone, PartialEq)]
pub struct IndependentColumns {
    pub columns: Vec<ScalarLaw>,
}

impl DataDistribution for IndependentColumns {
    fn row_len(&self) -> usize {
        self.columns.len()
    }

    fn sample_row(&self, rng: &mut dyn RngCore, out: &mut [f64]) {
        for (o, law) in out.iter_mut().zip(&self.columns) {
            *o = law.sample(rng);
        }
    }
}

impl DataDistribution for BernoulliProduct {
    fn row_len(&self) -> usize {
        self.probs.len()
    }

    fn sample_row(&self, rng: &mut dyn RngCore, out: &mut [f64]) {
        for (o, &p) in out.iter_mut().zip(&self.probs) {
            *o = if rng.random::<f64>() < p { 1.0 } else { -1.0 };
        }
    }
}

/// Row-major samples of fixed row length.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    row_len: usize,
    rows: Vec<f64>,
}

impl Dataset {
    pub fn new(row_len: usize, rows: Vec<f64>) -> Result<Self> {
        if row_len == 0 {
            return Err(Error::invalid("row_len", "must be >= 1"));
        }
        if !rows.len().is_multiple_of(row_len) {
            return Err(Error::invalid(
                "rows",
                format!("length {} is not a multiple of row length {row_len}", rows.len()),
            ));
        }
        ensure_finite(&rows, "dataset rows")?;
        Ok(Dataset { row_len, rows })
    }

    /// `n` i.i.d. rows from `dist`.
    pub fn sample(dist: &dyn DataDistribution, n: usize, rng: &mut dyn RngCore) -> Self {
        let row_len = dist.row_len();
        let mut rows = vec![0.0; n * row_len];
        for row in rows.chunks_exact_mut(row_len) {
            dist.sample_row(rng, row);
        }
        Dataset { row_len, rows }
    }

    pub fn len(&self) -> usize {
        self.rows.len() / self.row_len
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row_len(&self) -> usize {
        self.row_len
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.row_len..(i + 1) * self.row_len]
    }

    pub fn rows(&self) -> &[f64] {
        &self.rows
    }

    /// Contiguous rows `start..start + count` as a flat slice.
    pub fn batch(&self, start: usize, count: usize) -> &[f64] {
        &self.rows[start * self.row_len..(start + count) * self.row_len]
    }

    /// A copy with rows in a uniformly random order.
    pub fn shuffled<R: Rng + ?Sized>(&self, rng: &mut R) -> Dataset {
        use rand::seq::SliceRandom;
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(rng);
        let mut rows = Vec::with_capacity(self.rows.len());
        for i in order {
            rows.extend_from_slice(self.row(i));
        }
        Dataset {
            row_len: self.row_len,
            rows,
        }
    }

    /// The first `count` rows.
    pub fn prefix(&self, count: usize) -> Dataset {
        Dataset {
            row_len: self.row_len,
            rows: self.batch(0, count).to_vec(),
        }
    }

    /// Rows `start..start + count` as an owned dataset.
    pub fn slice(&self, start: usize, count: usize) -> Dataset {
        Dataset {
            row_len: self.row_len,
            rows: self.batch(start, count).to_vec(),
        }
    }

    /// Writes a header `x0,…` and one row per sample with round-trip float
    /// formatting.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut writer = csv::Writer::from_path(path)?;
        writer.write_record((0..self.row_len).map(|j| format!("x{j}")))?;
        for row in self.rows.chunks_exact(self.row_len) {
            writer.write_record(row.iter().map(|v| v.to_string()))?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Dataset> {
        let mut reader = csv::Reader::from_path(path)?;
        let row_len = reader.headers()?.len();
        let mut rows = Vec::new();
        for record in reader.records() {
            for field in record?.iter() {
                let value: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("unparseable dataset value `{field}`")))?;
                rows.push(value);
            }
        }
        Dataset::new(row_len, rows)
    }
}
