//! Training losses. The residual-aware losses evaluate the finite-element
//! residual of the de-normalized prediction and treat the normalized residual
//! `ρ = ‖R(u)‖ / c` as a constant during differentiation.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::NormalizationSpec;
use crate::error::{check_len, Error, Result};
use crate::fem::FemSystem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossKind {
    #[serde(rename = "mse")]
    Mse,
    /// `MSE + ρ`.
    #[serde(rename = "lr_add")]
    ResidualAdd,
    /// `MSE · ρ`.
    #[serde(rename = "lr_mul")]
    ResidualMul,
}

impl LossKind {
    pub fn uses_residual(self) -> bool {
        !matches!(self, LossKind::Mse)
    }
}

/// `Σ(u_i − v_i)² / N` and its gradient `2(u − v)/N`.
pub fn mse(u: &DVector<f64>, v: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
    check_len(u.len(), v.len())?;
    if u.is_empty() {
        return Err(Error::InvalidArgument("MSE of empty vectors".into()));
    }
    let n = u.len() as f64;
    let diff = u - v;
    Ok((diff.norm_squared() / n, diff * (2.0 / n)))
}

/// Everything needed to turn a network output into a normalized residual.
#[derive(Debug, Clone, Copy)]
pub struct ResidualContext<'a> {
    pub system: &'a FemSystem,
    pub norm: &'a NormalizationSpec,
    /// Residual normalization constant `c > 0`.
    pub residual_scale: f64,
}

impl ResidualContext<'_> {
    /// `ρ = ‖R(u_phys)‖ / c` for a network output in standardized space.
    pub fn rho(&self, output: &DVector<f64>, f_ext: &DVector<f64>) -> Result<f64> {
        if !(self.residual_scale > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "residual scale must be positive, got {}",
                self.residual_scale
            )));
        }
        let mut u = self.norm.displacement(output);
        self.system.zero_fixed(&mut u);
        Ok(self.system.residual(&u, f_ext)?.norm() / self.residual_scale)
    }
}

/// Loss value and gradient for a given `ρ`; `ρ` is never differentiated.
pub fn combine(kind: LossKind, mse_value: f64, mse_grad: DVector<f64>, rho: f64) -> (f64, DVector<f64>) {
    match kind {
        LossKind::Mse => (mse_value, mse_grad),
        LossKind::ResidualAdd => (mse_value + rho, mse_grad),
        LossKind::ResidualMul => (mse_value * rho, mse_grad * rho),
    }
}

/// `L_r* = MSE · ρ` with gradient `ρ · ∇MSE`. Returns `(loss, grad, ρ)`.
pub fn loss_residual_mul(
    output: &DVector<f64>,
    target: &DVector<f64>,
    f_ext: &DVector<f64>,
    ctx: &ResidualContext,
) -> Result<(f64, DVector<f64>, f64)> {
    let (m, g) = mse(output, target)?;
    let rho = ctx.rho(output, f_ext)?;
    let (l, g) = combine(LossKind::ResidualMul, m, g, rho);
    Ok((l, g, rho))
}

/// `L_r⁺ = MSE + ρ` with gradient `∇MSE`. Returns `(loss, grad, ρ)`.
pub fn loss_residual_add(
    output: &DVector<f64>,
    target: &DVector<f64>,
    f_ext: &DVector<f64>,
    ctx: &ResidualContext,
) -> Result<(f64, DVector<f64>, f64)> {
    let (m, g) = mse(output, target)?;
    let rho = ctx.rho(output, f_ext)?;
    let (l, g) = combine(LossKind::ResidualAdd, m, g, rho);
    Ok((l, g, rho))
}
