use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::modal::{Dataset, Stats};

/// Fixed dataset statistics mapping physical forces and displacements to and
/// from the network's standardized space. Displacements are divided by `L`
/// before standardization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationSpec {
    pub force: Stats,
    pub displacement: Stats,
    #[serde(rename = "L")]
    pub length: f64,
}

impl NormalizationSpec {
    pub fn from_dataset(dataset: &Dataset) -> Self {
        Self {
            force: dataset.force_stats,
            displacement: dataset.disp_stats,
            length: dataset.length.get(),
        }
    }

    pub fn input(&self, f_ext: &DVector<f64>) -> DVector<f64> {
        f_ext.map(|x| self.force.standardize(x))
    }

    /// Network target for a physical displacement.
    pub fn target(&self, u: &DVector<f64>) -> DVector<f64> {
        u.map(|x| self.displacement.standardize(x / self.length))
    }

    /// Physical displacement (meters) for a network output.
    pub fn displacement(&self, output: &DVector<f64>) -> DVector<f64> {
        output.map(|z| self.displacement.unstandardize(z) * self.length)
    }
}
