//! Loss functions `f(w, x)` with subgradient oracles.
//!
//! A data row `x` is a flat slice. For the least-squares family the row is
//! `(a₁, …, a_d, b)`: features followed by the response.

use serde::{Deserialize, Serialize};
use std::fmt::Debug;

use crate::error::{check_dim, Error, Result};
use crate::math::{dot, norm, project_ball_into, Ball, Vector};

/// Declared curvature of a loss: `μ` strong convexity and `β` smoothness,
/// with 0 meaning "not strongly convex" / "not smooth".
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConstants {
    pub mu: f64,
    pub beta: f64,
}

/// Proximal operator of the non-smooth part `f¹` of a composite loss.
#[derive(Debug, Clone, PartialEq)]
pub enum ProxOperator {
    /// `f¹ = 0`.
    Zero,
    /// `f¹` is the indicator of a ball; the prox is the projection.
    BallIndicator(Ball),
    /// `f¹ = λ‖w‖₁`; the prox is soft thresholding at `ηλ`.
    L1 { lambda: f64 },
}

impl ProxOperator {
    /// `argmin_y η f¹(y) + ½‖y − z‖²`, written into `out`.
    pub fn apply_into(&self, z: &[f64], eta: f64, out: &mut [f64]) {
        match self {
            ProxOperator::Zero => out.copy_from_slice(z),
            ProxOperator::BallIndicator(ball) => project_ball_into(z, ball, out),
            ProxOperator::L1 { lambda } => {
                let threshold = eta * lambda;
                for (o, v) in out.iter_mut().zip(z) {
                    *o = v.signum() * (v.abs() - threshold).max(0.0);
                }
            }
        }
    }

    pub fn apply(&self, z: &Vector, eta: f64) -> Result<Vector> {
        if let ProxOperator::BallIndicator(ball) = self {
            check_dim(ball.dim(), z.dim())?;
        }
        if eta.is_nan() || eta < 0.0 {
            return Err(Error::invalid("eta", format!("must be >= 0, got {eta}")));
        }
        let mut out = vec![0.0; z.dim()];
        self.apply_into(z, eta, &mut out);
        Ok(Vector::from_trusted(out))
    }

    /// Value of `f¹(w)` (`+∞` outside the ball for the indicator).
    pub fn value(&self, w: &[f64]) -> f64 {
        match self {
            ProxOperator::Zero => 0.0,
            ProxOperator::BallIndicator(ball) => {
                if ball.contains(w, 1e-12) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            ProxOperator::L1 { lambda } => lambda * w.iter().map(|v| v.abs()).sum::<f64>(),
        }
    }
}

/// A per-sample loss with a first-order oracle.
pub trait LossModel: Debug + Send + Sync {
    fn name(&self) -> &'static str;

    /// Length of a data row for parameter dimension `dim`.
    fn row_len(&self, dim: usize) -> usize;

    fn value(&self, w: &[f64], x: &[f64]) -> f64;

    /// A subgradient of `f(·, x)` at `w`, written into `out`.
    fn subgradient(&self, w: &[f64], x: &[f64], out: &mut [f64]);

    /// Gradient of the smooth part `f⁰` of a composite loss. Defaults to the
    /// full subgradient for non-composite losses.
    fn smooth_gradient(&self, w: &[f64], x: &[f64], out: &mut [f64]) {
        self.subgradient(w, x, out)
    }

    /// Value of the smooth part `f⁰`.
    fn smooth_value(&self, w: &[f64], x: &[f64]) -> f64 {
        self.value(w, x)
    }

    /// The prox of `f¹` when the loss is composite.
    fn prox_part(&self) -> Option<ProxOperator> {
        None
    }

    fn constants(&self) -> LossConstants;

    fn is_convex(&self) -> bool {
        true
    }

    /// True when the gradient does not depend on `w` (affine losses), which
    /// lets optimizers reuse a batch's clipped sum across steps.
    fn gradient_is_constant(&self) -> bool {
        false
    }

    /// Closed-form upper bound on `sup_{w ∈ ball} ‖∇f(w, x)‖` when available.
    fn sup_gradient_norm(&self, _x: &[f64], _ball: &Ball) -> Option<f64> {
        None
    }
}

/// `½ Σ_j a_j (w_j − x_j)²`; the plain form `½‖w − x‖²` has all `a_j = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticLoss {
    curvature: Option<Vec<f64>>,
}

/// `½‖w − x‖²`, with `μ = β = 1`.
pub fn quadratic_loss() -> QuadraticLoss {
    QuadraticLoss { curvature: None }
}

impl QuadraticLoss {
    /// Diagonal curvature `a_j > 0`; `μ = min a_j`, `β = max a_j`.
    pub fn diagonal(curvature: Vec<f64>) -> Result<Self> {
        if curvature.is_empty() || curvature.iter().any(|a| !a.is_finite() || *a <= 0.0) {
            return Err(Error::invalid("curvature", "entries must be finite and > 0"));
        }
        Ok(QuadraticLoss {
            curvature: Some(curvature),
        })
    }

    fn weight(&self, j: usize) -> f64 {
        self.curvature.as_ref().map_or(1.0, |a| a[j])
    }
}

impl LossModel for QuadraticLoss {
    fn name(&self) -> &'static str {
        "quadratic"
    }

    fn row_len(&self, dim: usize) -> usize {
        dim
    }

    fn value(&self, w: &[f64], x: &[f64]) -> f64 {
        0.5 * w
            .iter()
            .zip(x)
            .enumerate()
            .map(|(j, (wj, xj))| self.weight(j) * (wj - xj) * (wj - xj))
            .sum::<f64>()
    }

    fn subgradient(&self, w: &[f64], x: &[f64], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = self.weight(j) * (w[j] - x[j]);
        }
    }

    fn constants(&self) -> LossConstants {
        match &self.curvature {
            None => LossConstants { mu: 1.0, beta: 1.0 },
            Some(a) => LossConstants {
                mu: a.iter().cloned().fold(f64::INFINITY, f64::min),
                beta: a.iter().cloned().fold(0.0, f64::max),
            },
        }
    }

    fn sup_gradient_norm(&self, x: &[f64], ball: &Ball) -> Option<f64> {
        let beta = self.constants().beta;
        let gap = crate::math::distance(x, ball.center());
        Some(beta * (gap + ball.radius()))
    }
}

/// `−⟨w, x⟩`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinearLoss;

pub fn linear_loss() -> LinearLoss {
    LinearLoss
}

impl LossModel for LinearLoss {
    fn name(&self) -> &'static str {
        "linear"
    }

    fn row_len(&self, dim: usize) -> usize {
        dim
    }

    fn value(&self, w: &[f64], x: &[f64]) -> f64 {
        -dot(w, x)
    }

    fn subgradient(&self, _w: &[f64], x: &[f64], out: &mut [f64]) {
        for (o, v) in out.iter_mut().zip(x) {
            *o = -v;
        }
    }

    fn constants(&self) -> LossConstants {
        LossConstants { mu: 0.0, beta: 0.0 }
    }

    fn gradient_is_constant(&self) -> bool {
        true
    }

    fn sup_gradient_norm(&self, x: &[f64], _ball: &Ball) -> Option<f64> {
        Some(norm(x))
    }
}

fn residual(w: &[f64], x: &[f64]) -> f64 {
    let d = w.len();
    dot(w, &x[..d]) - x[d]
}

/// `½(⟨w, a⟩ − b)²` on rows `(a, b)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LeastSquaresLoss;

pub fn linreg_loss() -> LeastSquaresLoss {
    LeastSquaresLoss
}

fn least_squares_gradient(w: &[f64], x: &[f64], out: &mut [f64]) {
    let r = residual(w, x);
    for (o, a) in out.iter_mut().zip(x) {
        *o = r * a;
    }
}

fn least_squares_sup(x: &[f64], ball: &Ball) -> f64 {
    let d = ball.dim();
    let features = &x[..d];
    let feature_norm = norm(features);
    let at_center = (dot(ball.center(), features) - x[d]).abs();
    (at_center + ball.radius() * feature_norm) * feature_norm
}

impl LossModel for LeastSquaresLoss {
    fn name(&self) -> &'static str {
        "linreg"
    }

    fn row_len(&self, dim: usize) -> usize {
        dim + 1
    }

    fn value(&self, w: &[f64], x: &[f64]) -> f64 {
        let r = residual(w, x);
        0.5 * r * r
    }

    fn subgradient(&self, w: &[f64], x: &[f64], out: &mut [f64]) {
        least_squares_gradient(w, x, out)
    }

    /// Curvature depends on the feature distribution, so none is declared.
    fn constants(&self) -> LossConstants {
        LossConstants { mu: 0.0, beta: 0.0 }
    }

    fn sup_gradient_norm(&self, x: &[f64], ball: &Ball) -> Option<f64> {
        Some(least_squares_sup(x, ball))
    }
}

/// Least squares plus `λ‖w‖₁`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompositeLassoLoss {
    lambda: f64,
}

pub fn composite_lasso_loss(lambda: f64) -> Result<CompositeLassoLoss> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::invalid(
            "lambda",
            format!("must be finite and >= 0, got {lambda}"),
        ));
    }
    Ok(CompositeLassoLoss { lambda })
}

impl CompositeLassoLoss {
    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

impl LossModel for CompositeLassoLoss {
    fn name(&self) -> &'static str {
        "lasso"
    }

    fn row_len(&self, dim: usize) -> usize {
        dim + 1
    }

    fn value(&self, w: &[f64], x: &[f64]) -> f64 {
        self.smooth_value(w, x) + self.lambda * w.iter().map(|v| v.abs()).sum::<f64>()
    }

    fn subgradient(&self, w: &[f64], x: &[f64], out: &mut [f64]) {
        least_squares_gradient(w, x, out);
        for (o, v) in out.iter_mut().zip(w) {
            if *v != 0.0 {
                *o += self.lambda * v.signum();
            }
        }
    }

    fn smooth_gradient(&self, w: &[f64], x: &[f64], out: &mut [f64]) {
        least_squares_gradient(w, x, out)
    }

    fn smooth_value(&self, w: &[f64], x: &[f64]) -> f64 {
        let r = residual(w, x);
        0.5 * r * r
    }

    fn prox_part(&self) -> Option<ProxOperator> {
        Some(ProxOperator::L1 { lambda: self.lambda })
    }

    fn constants(&self) -> LossConstants {
        LossConstants { mu: 0.0, beta: 0.0 }
    }

    fn sup_gradient_norm(&self, x: &[f64], ball: &Ball) -> Option<f64> {
        let d = ball.dim();
        Some(least_squares_sup(x, ball) + self.lambda * (d as f64).sqrt())
    }
}
