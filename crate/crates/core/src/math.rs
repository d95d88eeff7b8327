//! Euclidean geometry used by every other module.
//!
//! Everything here is L2: norms, clipping onto a centered ball, projection
//! onto a ball and onto the intersection of two balls, plus a few numeric
//! helpers (medians, exactly rounded sums, a fixed-order batch sum).
//!
//! The public functions take and return [`Vector`]s and validate their
//! inputs. The optimizers call the `*_into` slice variants on their hot
//! paths to avoid allocation; those assume dimensions were checked upstream.

use serde::{Deserialize, Serialize};
use std::ops::Deref;

use crate::error::{check_dim, Error, Result};

/// Maximum number of Dykstra sweeps before [`project_intersection`] gives up.
pub const DYKSTRA_MAX_SWEEPS: usize = 200;

/// Displacement below which a Dykstra sweep counts as converged.
pub const DYKSTRA_TOLERANCE: f64 = 1e-12;

/// Batches longer than this are summed with a pairwise tree.
pub const PAIRWISE_CUTOFF: usize = 4096;

/// A dense point or direction in `R^d` with finite coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Vector(Vec<f64>);

impl Vector {
    /// Wraps coordinates, rejecting NaN and infinities.
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        ensure_finite(&coords, "vector coordinates")?;
        Ok(Vector(coords))
    }

    /// The origin of `R^d`.
    pub fn zeros(dim: usize) -> Self {
        Vector(vec![0.0; dim])
    }

    /// Builds a vector from coordinates the caller has already validated.
    pub(crate) fn from_trusted(coords: Vec<f64>) -> Self {
        debug_assert!(coords.iter().all(|v| v.is_finite()));
        Vector(coords)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn dot(&self, other: &Vector) -> Result<f64> {
        check_dim(self.dim(), other.dim())?;
        Ok(dot(&self.0, &other.0))
    }

    pub fn distance(&self, other: &Vector) -> Result<f64> {
        check_dim(self.dim(), other.dim())?;
        Ok(distance(&self.0, &other.0))
    }
}

impl Deref for Vector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for Vector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Vector::new(v)
    }
}

impl From<Vector> for Vec<f64> {
    fn from(v: Vector) -> Vec<f64> {
        v.0
    }
}

/// A closed Euclidean ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    center: Vector,
    radius: f64,
}

impl Ball {
    pub fn new(center: Vector, radius: f64) -> Result<Self> {
        if !radius.is_finite() || radius < 0.0 {
            return Err(Error::invalid(
                "radius",
                format!("must be finite and >= 0, got {radius}"),
            ));
        }
        Ok(Ball { center, radius })
    }

    /// The ball of the given radius around the origin.
    pub fn centered(dim: usize, radius: f64) -> Result<Self> {
        Ball::new(Vector::zeros(dim), radius)
    }

    pub fn center(&self) -> &Vector {
        &self.center
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn dim(&self) -> usize {
        self.center.dim()
    }

    /// Twice the radius.
    pub fn diameter(&self) -> f64 {
        2.0 * self.radius
    }

    /// Whether `z` lies within `radius + slack` of the center.
    pub fn contains(&self, z: &[f64], slack: f64) -> bool {
        distance(z, &self.center) <= self.radius + slack
    }
}

/// The set `outer ∩ inner`, guaranteed nonempty at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalizedDomain {
    outer: Ball,
    inner: Ball,
}

impl LocalizedDomain {
    pub fn new(outer: Ball, inner: Ball) -> Result<Self> {
        check_dim(outer.dim(), inner.dim())?;
        let gap = distance(&outer.center, &inner.center);
        let radius_sum = outer.radius + inner.radius;
        if gap > radius_sum {
            return Err(Error::EmptyIntersection {
                distance: gap,
                radius_sum,
            });
        }
        Ok(LocalizedDomain { outer, inner })
    }

    pub fn outer(&self) -> &Ball {
        &self.outer
    }

    pub fn inner(&self) -> &Ball {
        &self.inner
    }

    pub fn dim(&self) -> usize {
        self.outer.dim()
    }

    pub fn contains(&self, z: &[f64], slack: f64) -> bool {
        self.outer.contains(z, slack) && self.inner.contains(z, slack)
    }
}

/// A feasible set an optimizer projects onto.
#[derive(Debug, Clone, PartialEq)]
pub enum Domain {
    Ball(Ball),
    Localized(LocalizedDomain),
}

impl Domain {
    pub fn dim(&self) -> usize {
        match self {
            Domain::Ball(b) => b.dim(),
            Domain::Localized(l) => l.dim(),
        }
    }

    pub fn contains(&self, z: &[f64], slack: f64) -> bool {
        match self {
            Domain::Ball(b) => b.contains(z, slack),
            Domain::Localized(l) => l.contains(z, slack),
        }
    }

    /// Projects `z` onto the domain, writing the result into `out`. For a
    /// localized domain Dykstra's method runs first; when it stalls (nearly
    /// tangent spheres) the closed-form projection takes over.
    pub fn project_into(&self, z: &[f64], out: &mut [f64]) -> Result<()> {
        match self {
            Domain::Ball(b) => {
                project_ball_into(z, b, out);
                Ok(())
            }
            Domain::Localized(l) => match project_intersection_into(z, l, out) {
                Err(Error::ProjectionNotConverged { .. }) => {
                    project_intersection_exact_into(z, l, out);
                    Ok(())
                }
                other => other,
            },
        }
    }

    pub fn project(&self, z: &Vector) -> Result<Vector> {
        check_dim(self.dim(), z.dim())?;
        let mut out = vec![0.0; z.dim()];
        self.project_into(z, &mut out)?;
        Ok(Vector::from_trusted(out))
    }
}

/// Rejects slices containing NaN or infinities.
pub fn ensure_finite(values: &[f64], context: &'static str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { context })
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Euclidean norm, rescaling when the plain sum of squares would overflow
/// or underflow.
pub fn norm(x: &[f64]) -> f64 {
    let squares: f64 = x.iter().map(|v| v * v).sum();
    if squares.is_finite() && squares >= f64::MIN_POSITIVE {
        return squares.sqrt();
    }
    let scale = x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return scale;
    }
    let rescaled: f64 = x.iter().map(|v| (v / scale) * (v / scale)).sum();
    scale * rescaled.sqrt()
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    let squares: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    if squares.is_finite() && squares >= f64::MIN_POSITIVE {
        return squares.sqrt();
    }
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff)
}

/// Clips `z` onto the ball of radius `c` around the origin.
///
/// ```
/// use htdp::math::{clip_l2, Vector};
/// let z = Vector::new(vec![3.0, 4.0]).unwrap();
/// assert_eq!(clip_l2(&z, 2.0).unwrap().as_slice(), &[1.2, 1.6]);
/// ```
pub fn clip_l2(z: &Vector, c: f64) -> Result<Vector> {
    check_clip(c)?;
    ensure_finite(z, "clip input")?;
    let mut out = z.0.clone();
    clip_in_place(&mut out, c);
    Ok(Vector::from_trusted(out))
}

pub(crate) fn check_clip(c: f64) -> Result<()> {
    if c.is_nan() || c < 0.0 {
        return Err(Error::invalid("clip threshold", format!("must be >= 0, got {c}")));
    }
    Ok(())
}

/// In-place clip; returns whether the vector was rescaled. `c` may be `+∞`.
pub fn clip_in_place(z: &mut [f64], c: f64) -> bool {
    let n = norm(z);
    if n <= c {
        return false;
    }
    rescale(z, c, n);
    true
}

/// Multiplies `z` by `target / current`, dividing last when that cannot
/// overflow so simple ratios round exactly (`3·2/5 = 1.2`).
fn rescale(z: &mut [f64], target: f64, current: f64) {
    let peak = z.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if (peak * target).is_finite() && current.is_finite() {
        z.iter_mut().for_each(|v| *v = *v * target / current);
    } else {
        let factor = target / current;
        z.iter_mut().for_each(|v| *v *= factor);
    }
}

/// Closest point of `b` to `z`.
pub fn project_ball(z: &Vector, b: &Ball) -> Result<Vector> {
    check_dim(b.dim(), z.dim())?;
    ensure_finite(z, "projection input")?;
    let mut out = vec![0.0; z.dim()];
    project_ball_into(z, b, &mut out);
    Ok(Vector::from_trusted(out))
}

pub(crate) fn project_ball_into(z: &[f64], b: &Ball, out: &mut [f64]) {
    let center = b.center.as_slice();
    let gap = distance(z, center);
    if gap <= b.radius {
        out.copy_from_slice(z);
        return;
    }
    for ((o, zi), ci) in out.iter_mut().zip(z).zip(center) {
        *o = zi - ci;
    }
    rescale(out, b.radius, gap);
    for (o, ci) in out.iter_mut().zip(center) {
        *o += ci;
    }
}

/// Euclidean projection onto `outer ∩ inner` by Dykstra's algorithm.
///
/// Runs at most [`DYKSTRA_MAX_SWEEPS`] sweeps and stops once a sweep moves
/// the iterate by less than [`DYKSTRA_TOLERANCE`].
pub fn project_intersection(z: &Vector, dom: &LocalizedDomain) -> Result<Vector> {
    check_dim(dom.dim(), z.dim())?;
    ensure_finite(z, "projection input")?;
    let mut out = vec![0.0; z.dim()];
    project_intersection_into(z, dom, &mut out)?;
    Ok(Vector::from_trusted(out))
}

pub(crate) fn project_intersection_into(z: &[f64], dom: &LocalizedDomain, out: &mut [f64]) -> Result<()> {
    let (a, b) = (&dom.outer, &dom.inner);
    if a.contains(z, 0.0) && b.contains(z, 0.0) {
        out.copy_from_slice(z);
        return Ok(());
    }
    let gap = distance(&a.center, &b.center);
    if gap + a.radius <= b.radius {
        project_ball_into(z, a, out);
        return Ok(());
    }
    if gap + b.radius <= a.radius {
        project_ball_into(z, b, out);
        return Ok(());
    }

    let dim = z.len();
    let mut x = z.to_vec();
    let mut p = vec![0.0; dim];
    let mut q = vec![0.0; dim];
    let mut shifted = vec![0.0; dim];
    let mut y = vec![0.0; dim];
    let mut next = vec![0.0; dim];
    let mut displacement = f64::INFINITY;
    for _ in 0..DYKSTRA_MAX_SWEEPS {
        for i in 0..dim {
            shifted[i] = x[i] + p[i];
        }
        project_ball_into(&shifted, a, &mut y);
        for i in 0..dim {
            p[i] = shifted[i] - y[i];
            shifted[i] = y[i] + q[i];
        }
        project_ball_into(&shifted, b, &mut next);
        for i in 0..dim {
            q[i] = shifted[i] - next[i];
        }
        displacement = distance(&next, &x);
        std::mem::swap(&mut x, &mut next);
        let scale = 1.0_f64.max(norm(&x));
        if displacement < DYKSTRA_TOLERANCE * scale {
            out.copy_from_slice(&x);
            return Ok(());
        }
    }
    Err(Error::ProjectionNotConverged {
        sweeps: DYKSTRA_MAX_SWEEPS,
        residual: displacement,
    })
}

/// Exact projection onto a two-ball intersection from the optimality
/// conditions: the answer is the projection onto one ball when that point
/// already lies in the other, and otherwise the nearest point of the
/// sphere-sphere intersection.
pub fn project_intersection_exact(z: &Vector, dom: &LocalizedDomain) -> Result<Vector> {
    check_dim(dom.dim(), z.dim())?;
    ensure_finite(z, "projection input")?;
    let mut out = vec![0.0; z.dim()];
    project_intersection_exact_into(z, dom, &mut out);
    Ok(Vector::from_trusted(out))
}

pub(crate) fn project_intersection_exact_into(z: &[f64], dom: &LocalizedDomain, out: &mut [f64]) {
    let (a, b) = (&dom.outer, &dom.inner);
    project_ball_into(z, a, out);
    if b.contains(out, 1e-15 * (1.0 + b.radius)) {
        return;
    }
    project_ball_into(z, b, out);
    if a.contains(out, 1e-15 * (1.0 + a.radius)) {
        return;
    }
    let (c1, c2) = (a.center.as_slice(), b.center.as_slice());
    let gap = distance(c1, c2);
    let axis: Vec<f64> = c1.iter().zip(c2).map(|(p, q)| (q - p) / gap).collect();
    let offset = (gap * gap + a.radius * a.radius - b.radius * b.radius) / (2.0 * gap);
    let ring = (a.radius * a.radius - offset * offset).max(0.0).sqrt();
    let hub: Vec<f64> = c1.iter().zip(&axis).map(|(c, u)| c + offset * u).collect();
    let rel: Vec<f64> = z.iter().zip(&hub).map(|(zi, h)| zi - h).collect();
    let along = dot(&rel, &axis);
    let mut radial: Vec<f64> = rel.iter().zip(&axis).map(|(r, u)| r - along * u).collect();
    let mut radial_norm = norm(&radial);
    if radial_norm == 0.0 {
        // z sits on the axis: every point of the ring is equally close.
        let pivot = (0..axis.len())
            .min_by(|&i, &j| axis[i].abs().total_cmp(&axis[j].abs()))
            .unwrap_or(0);
        radial.iter_mut().for_each(|v| *v = 0.0);
        radial[pivot] = 1.0;
        let proj = axis[pivot];
        radial.iter_mut().zip(&axis).for_each(|(r, u)| *r -= proj * u);
        radial_norm = norm(&radial);
    }
    for ((o, h), r) in out.iter_mut().zip(&hub).zip(&radial) {
        *o = h + ring * r / radial_norm;
    }
}

/// Median with the even-length convention of averaging the two central
/// order statistics.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("median"));
    }
    ensure_finite(values, "median input")?;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    if sorted.len() % 2 == 1 {
        Ok(sorted[mid])
    } else {
        Ok(0.5 * sorted[mid - 1] + 0.5 * sorted[mid])
    }
}

/// Correctly rounded sum of a sequence of floats (Shewchuk's partials with
/// the round-half-even correction).
///
/// The result equals the exact real sum rounded once, so ten copies of
/// `0.01` give exactly `0.1` and `T` copies of `x` give exactly `T as f64 * x`.
pub fn exact_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut partials: Vec<f64> = Vec::new();
    for value in values {
        let mut x = value;
        let mut kept = 0;
        for j in 0..partials.len() {
            let mut y = partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[kept] = lo;
                kept += 1;
            }
            x = hi;
        }
        partials.truncate(kept);
        partials.push(x);
    }

    let Some(mut idx) = partials.len().checked_sub(1) else {
        return 0.0;
    };
    let mut hi = partials[idx];
    let mut lo = 0.0;
    while idx > 0 {
        let x = hi;
        idx -= 1;
        let y = partials[idx];
        hi = x + y;
        lo = y - (hi - x);
        if lo != 0.0 {
            break;
        }
    }
    if idx > 0 && ((lo < 0.0 && partials[idx - 1] < 0.0) || (lo > 0.0 && partials[idx - 1] > 0.0)) {
        let y = lo * 2.0;
        let x = hi + y;
        if y == x - hi {
            hi = x;
        }
    }
    hi
}

/// Sums the rows of a row-major `rows.len() / dim` by `dim` matrix in a
/// fixed order: index order up to [`PAIRWISE_CUTOFF`] rows, then a pairwise
/// tree that splits at the midpoint.
pub fn sum_rows(rows: &[f64], dim: usize, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    if dim == 0 {
        return;
    }
    let count = rows.len() / dim;
    if count <= PAIRWISE_CUTOFF {
        for row in rows.chunks_exact(dim) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        return;
    }
    let half = count / 2;
    let (left, right) = rows.split_at(half * dim);
    sum_rows(left, dim, out);
    let mut tail = vec![0.0; dim];
    sum_rows(right, dim, &mut tail);
    for (o, t) in out.iter_mut().zip(&tail) {
        *o += t;
    }
}

/// Flattens a batch of equal-length vectors into a row-major buffer.
pub(crate) fn flatten(samples: &[Vector]) -> Result<(usize, Vec<f64>)> {
    let first = samples.first().ok_or(Error::Empty("sample batch"))?;
    let dim = first.dim();
    let mut flat = Vec::with_capacity(dim * samples.len());
    for s in samples {
        check_dim(dim, s.dim())?;
        flat.extend_from_slice(s);
    }
    Ok((dim, flat))
}
