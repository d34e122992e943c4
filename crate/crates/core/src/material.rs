//! Hyperelastic constitutive laws: strain energy density, first Piola-Kirchhoff
//! stress and its derivative with respect to the deformation gradient.

use nalgebra::{Matrix3, SMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaterialModel {
    #[serde(rename = "stvk")]
    StVenantKirchhoff,
    #[serde(rename = "neohookean")]
    NeoHookean,
}

/// Fourth-order tensor `dP/dF` flattened row-major: entry `(3i + j, 3k + l)`
/// holds `∂P_ij / ∂F_kl`.
pub type StressDerivative = SMatrix<f64, 9, 9>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MaterialParams", into = "MaterialParams")]
pub struct Material {
    model: MaterialModel,
    young_modulus: f64,
    poisson_ratio: f64,
    lambda: f64,
    mu: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MaterialParams {
    model: MaterialModel,
    young_modulus: f64,
    poisson_ratio: f64,
}

impl TryFrom<MaterialParams> for Material {
    type Error = Error;
    fn try_from(p: MaterialParams) -> Result<Self> {
        Material::new(p.model, p.young_modulus, p.poisson_ratio)
    }
}

impl From<Material> for MaterialParams {
    fn from(m: Material) -> Self {
        Self {
            model: m.model,
            young_modulus: m.young_modulus,
            poisson_ratio: m.poisson_ratio,
        }
    }
}

impl Material {
    pub fn new(model: MaterialModel, young_modulus: f64, poisson_ratio: f64) -> Result<Self> {
        if !(young_modulus.is_finite() && young_modulus > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "Young's modulus must be positive, got {young_modulus}"
            )));
        }
        if !(0.0..0.5).contains(&poisson_ratio) {
            return Err(Error::InvalidArgument(format!(
                "Poisson ratio must lie in [0, 0.5), got {poisson_ratio}"
            )));
        }
        let (e, nu) = (young_modulus, poisson_ratio);
        Ok(Self {
            model,
            young_modulus,
            poisson_ratio,
            lambda: e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu)),
            mu: e / (2.0 * (1.0 + nu)),
        })
    }

    /// Builds a material directly from its Lamé parameters.
    pub fn from_lame(model: MaterialModel, lambda: f64, mu: f64) -> Result<Self> {
        if !(mu > 0.0 && lambda >= 0.0 && lambda.is_finite() && mu.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "Lamé parameters must satisfy mu > 0, lambda >= 0 (got {lambda}, {mu})"
            )));
        }
        Ok(Self {
            model,
            young_modulus: mu * (3.0 * lambda + 2.0 * mu) / (lambda + mu),
            poisson_ratio: lambda / (2.0 * (lambda + mu)),
            lambda,
            mu,
        })
    }

    pub fn model(&self) -> MaterialModel {
        self.model
    }

    pub fn young_modulus(&self) -> f64 {
        self.young_modulus
    }

    pub fn poisson_ratio(&self) -> f64 {
        self.poisson_ratio
    }

    /// `(λ, μ)`.
    pub fn lame(&self) -> (f64, f64) {
        (self.lambda, self.mu)
    }

    pub fn strain_energy_density(&self, f: &Matrix3<f64>) -> Result<f64> {
        let (lambda, mu) = self.lame();
        match self.model {
            MaterialModel::StVenantKirchhoff => {
                let e = green_strain(f);
                let tr = e.trace();
                Ok(0.5 * lambda * tr * tr + mu * e.component_mul(&e).sum())
            }
            MaterialModel::NeoHookean => {
                let j = positive_det(f)?;
                let ln_j = j.ln();
                let i1 = f.component_mul(f).sum();
                Ok(0.5 * mu * (i1 - 3.0) - mu * ln_j + 0.5 * lambda * ln_j * ln_j)
            }
        }
    }

    pub fn first_piola(&self, f: &Matrix3<f64>) -> Result<Matrix3<f64>> {
        let (lambda, mu) = self.lame();
        match self.model {
            MaterialModel::StVenantKirchhoff => {
                let e = green_strain(f);
                let s = Matrix3::identity() * (lambda * e.trace()) + e * (2.0 * mu);
                Ok(f * s)
            }
            MaterialModel::NeoHookean => {
                let j = positive_det(f)?;
                let f_inv_t = inverse(f)?.transpose();
                Ok((f - f_inv_t) * mu + f_inv_t * (lambda * j.ln()))
            }
        }
    }

    /// `dP/dF` evaluated column by column as the directional derivative of
    /// `P` along each unit perturbation `e_k ⊗ e_l`.
    pub fn stress_derivative(&self, f: &Matrix3<f64>) -> Result<StressDerivative> {
        let (lambda, mu) = self.lame();
        let mut out = StressDerivative::zeros();
        match self.model {
            MaterialModel::StVenantKirchhoff => {
                let e = green_strain(f);
                let s = Matrix3::identity() * (lambda * e.trace()) + e * (2.0 * mu);
                for k in 0..3 {
                    for l in 0..3 {
                        let mut df = Matrix3::zeros();
                        df[(k, l)] = 1.0;
                        let de = (df.transpose() * f + f.transpose() * df) * 0.5;
                        let ds = Matrix3::identity() * (lambda * de.trace()) + de * (2.0 * mu);
                        let dp = df * s + f * ds;
                        write_column(&mut out, 3 * k + l, &dp);
                    }
                }
            }
            MaterialModel::NeoHookean => {
                let j = positive_det(f)?;
                let f_inv = inverse(f)?;
                let f_inv_t = f_inv.transpose();
                let coef = mu - lambda * j.ln();
                for k in 0..3 {
                    for l in 0..3 {
                        let mut df = Matrix3::zeros();
                        df[(k, l)] = 1.0;
                        let dp = df * mu
                            + f_inv_t * df.transpose() * f_inv_t * coef
                            + f_inv_t * (lambda * (f_inv * df).trace());
                        write_column(&mut out, 3 * k + l, &dp);
                    }
                }
            }
        }
        Ok(out)
    }
}

fn write_column(out: &mut StressDerivative, col: usize, dp: &Matrix3<f64>) {
    for i in 0..3 {
        for j in 0..3 {
            out[(3 * i + j, col)] = dp[(i, j)];
        }
    }
}

/// Green-Lagrange strain `E = (FᵀF − I)/2`.
pub fn green_strain(f: &Matrix3<f64>) -> Matrix3<f64> {
    (f.transpose() * f - Matrix3::identity()) * 0.5
}

fn positive_det(f: &Matrix3<f64>) -> Result<f64> {
    let j = f.determinant();
    if !(j > 0.0) {
        return Err(Error::NonPositiveJacobian(j));
    }
    Ok(j)
}

fn inverse(f: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    f.try_inverse().ok_or(Error::NonPositiveJacobian(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit(model: MaterialModel) -> Material {
        Material::from_lame(model, 1.0, 1.0).unwrap()
    }

    fn fd_piola(m: &Material, f: &Matrix3<f64>, h: f64) -> Matrix3<f64> {
        let mut out = Matrix3::zeros();
        for i in 0..3 {
            for j in 0..3 {
                let mut fp = *f;
                let mut fm = *f;
                fp[(i, j)] += h;
                fm[(i, j)] -= h;
                out[(i, j)] = (m.strain_energy_density(&fp).unwrap() - m.strain_energy_density(&fm).unwrap()) / (2.0 * h);
            }
        }
        out
    }

    fn perturbed(entries: [f64; 9], scale: f64) -> Matrix3<f64> {
        Matrix3::identity() + Matrix3::from_row_slice(&entries) * scale
    }

    #[test]
    fn rest_state_is_stress_free() {
        for model in [MaterialModel::StVenantKirchhoff, MaterialModel::NeoHookean] {
            let m = Material::new(model, 1e5, 0.3).unwrap();
            let f = Matrix3::identity();
            assert_eq!(m.strain_energy_density(&f).unwrap(), 0.0);
            assert!(m.first_piola(&f).unwrap().norm() < 1e-10);
        }
    }

    #[test]
    fn stvk_uniaxial_stretch() {
        let m = unit(MaterialModel::StVenantKirchhoff);
        let f = Matrix3::from_diagonal(&nalgebra::Vector3::new(1.1, 1.0, 1.0));
        // E = diag(0.105, 0, 0): Ψ = 0.5·0.105² + 0.105²
        let psi = m.strain_energy_density(&f).unwrap();
        assert!((psi - 0.0165375).abs() < 1e-12);
        // S = diag(0.315, 0.105, 0.105), P = F·S
        let p = m.first_piola(&f).unwrap();
        let expected = Matrix3::from_diagonal(&nalgebra::Vector3::new(0.3465, 0.105, 0.105));
        assert!((p - expected).abs().max() < 1e-12);
        assert!((fd_piola(&m, &f, 1e-6) - expected).abs().max() < 1e-8);
    }

    #[test]
    fn neohookean_rejects_inverted() {
        let m = unit(MaterialModel::NeoHookean);
        let f = Matrix3::from_diagonal(&nalgebra::Vector3::new(-1.0, 1.0, 1.0));
        assert!(matches!(m.strain_energy_density(&f), Err(Error::NonPositiveJacobian(_))));
        assert!(m.first_piola(&f).is_err());
        assert!(m.first_piola(&Matrix3::zeros()).is_err());
        // StVK has no such restriction
        assert!(unit(MaterialModel::StVenantKirchhoff).first_piola(&f).is_ok());
    }

    #[test]
    fn neohookean_stress_blows_up_under_compression() {
        let m = unit(MaterialModel::NeoHookean);
        let mut last = 0.0;
        for step in 0..=18 {
            let s = 1.0 - 0.05 * step as f64; // 1.0 down to 0.1
            let f = Matrix3::from_diagonal(&nalgebra::Vector3::new(s, 1.0, 1.0));
            let p = m.first_piola(&f).unwrap().norm();
            assert!(p >= last, "stress magnitude must grow as J -> 0 (s = {s})");
            last = p;
        }
        assert!(last > 10.0);
    }

    #[test]
    fn lame_round_trip() {
        let m = Material::new(MaterialModel::StVenantKirchhoff, 2.5, 0.25).unwrap();
        let (l, mu) = m.lame();
        assert!((l - 1.0).abs() < 1e-14 && (mu - 1.0).abs() < 1e-14);
        assert!(Material::new(MaterialModel::NeoHookean, 1.0, 0.5).is_err());
        assert!(Material::new(MaterialModel::NeoHookean, 0.0, 0.3).is_err());
    }

    #[test]
    fn serde_uses_engineering_constants() {
        let m = Material::new(MaterialModel::NeoHookean, 1e6, 0.3).unwrap();
        let text = serde_json::to_string(&m).unwrap();
        assert_eq!(text, r#"{"model":"neohookean","young_modulus":1000000.0,"poisson_ratio":0.3}"#);
        let back: Material = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
        assert!(serde_json::from_str::<Material>(r#"{"model":"stvk","young_modulus":1.0,"poisson_ratio":0.7}"#).is_err());
    }

    proptest! {
        #[test]
        fn piola_matches_energy_gradient(
            entries in proptest::array::uniform9(-1.0f64..1.0),
            neo in any::<bool>(),
        ) {
            let model = if neo { MaterialModel::NeoHookean } else { MaterialModel::StVenantKirchhoff };
            let m = Material::from_lame(model, 1.3, 0.7).unwrap();
            let f = perturbed(entries, 0.3);
            prop_assume!(f.determinant() > 0.2);
            let p = m.first_piola(&f).unwrap();
            let fd = fd_piola(&m, &f, 1e-6);
            let rel = (p - fd).norm() / p.norm().max(1e-3);
            prop_assert!(rel < 1e-6, "rel err {rel}");
        }

        #[test]
        fn stress_derivative_matches_fd(
            entries in proptest::array::uniform9(-1.0f64..1.0),
            neo in any::<bool>(),
        ) {
            let model = if neo { MaterialModel::NeoHookean } else { MaterialModel::StVenantKirchhoff };
            let m = Material::from_lame(model, 1.3, 0.7).unwrap();
            let f = perturbed(entries, 0.3);
            prop_assume!(f.determinant() > 0.2);
            let a = m.stress_derivative(&f).unwrap();
            let h = 1e-6;
            let mut fd = StressDerivative::zeros();
            for k in 0..3 {
                for l in 0..3 {
                    let mut fp = f;
                    let mut fm = f;
                    fp[(k, l)] += h;
                    fm[(k, l)] -= h;
                    let dp = (m.first_piola(&fp).unwrap() - m.first_piola(&fm).unwrap()) / (2.0 * h);
                    write_column(&mut fd, 3 * k + l, &dp);
                }
            }
            let rel = (a - fd).norm() / a.norm();
            prop_assert!(rel < 1e-6, "rel err {rel}");
            // hyperelastic: major symmetry of the elasticity tensor
            prop_assert!((a - a.transpose()).norm() <= 1e-12 * a.norm());
        }
    }
}
