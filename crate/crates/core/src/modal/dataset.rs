//! In-memory dataset and its on-disk directory format.

use std::fs;
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::DatasetConfig;
use crate::error::{Error, Result};
use crate::fem::FemSystem;
use crate::material::Material;
use crate::mesh::{bounding_box_length, CharacteristicLength, Mesh};
use crate::solver::{SolverConfig, FORCE_FLOOR};

pub const DATASET_VERSION: u32 = 1;

const MANIFEST: &str = "manifest.json";
const FORCES: &str = "forces.f64";
const DISPLACEMENTS: &str = "displacements.f64";
const MESH: &str = "mesh.json";

/// Global scalar standardization statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    pub std: f64,
}

impl Stats {
    /// Mean and population standard deviation over every component of every
    /// vector. A zero or non-finite deviation is replaced by 1.
    pub fn over<'a>(vectors: impl IntoIterator<Item = &'a DVector<f64>> + Clone) -> Self {
        let mut count = 0usize;
        let mut sum = 0.0;
        for v in vectors.clone() {
            count += v.len();
            sum += v.sum();
        }
        if count == 0 {
            return Self { mean: 0.0, std: 1.0 };
        }
        let mean = sum / count as f64;
        let mut sq = 0.0;
        for v in vectors {
            sq += v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>();
        }
        let std = (sq / count as f64).sqrt();
        Self {
            mean,
            std: if std > 0.0 && std.is_finite() { std } else { 1.0 },
        }
    }

    pub fn standardize(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    pub fn unstandardize(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// Paired external forces and converged displacements.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub mesh: Mesh,
    pub material: Material,
    pub forces: Vec<DVector<f64>>,
    pub displacements: Vec<DVector<f64>>,
    pub modes_used: usize,
    pub eigenvalues: Vec<f64>,
    /// Residual normalization constant `c = max_s ‖f^e_s‖`.
    pub residual_scale: f64,
    pub force_stats: Stats,
    /// Statistics of the `L`-scaled displacements.
    pub disp_stats: Stats,
    pub length: CharacteristicLength,
    pub d_max: f64,
    pub patch_prob: f64,
    pub seed: u64,
    pub solver: SolverConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    #[serde(rename = "S")]
    pub samples: usize,
    #[serde(rename = "N")]
    pub dofs: usize,
    pub k: usize,
    pub c: f64,
    #[serde(rename = "L")]
    pub length: f64,
    pub material: Material,
    pub d_max: f64,
    pub patch_prob: f64,
    pub seed: u64,
    pub force_stats: Stats,
    pub disp_stats: Stats,
    pub mesh_file: String,
    pub eigenvalues: Vec<f64>,
    pub solver: SolverConfig,
    pub fingerprint: String,
}

impl Dataset {
    pub(crate) fn from_samples(
        system: &FemSystem,
        modes_used: usize,
        eigenvalues: Vec<f64>,
        forces: Vec<DVector<f64>>,
        displacements: Vec<DVector<f64>>,
        config: &DatasetConfig,
    ) -> Result<Self> {
        let length = bounding_box_length(system.mesh())?;
        let residual_scale = forces.iter().map(|f| f.norm()).fold(0.0, f64::max).max(FORCE_FLOOR);
        let force_stats = Stats::over(forces.iter());
        let scaled: Vec<DVector<f64>> = displacements.iter().map(|u| u / length.get()).collect();
        let disp_stats = Stats::over(scaled.iter());
        Ok(Self {
            mesh: system.mesh().clone(),
            material: *system.material(),
            forces,
            displacements,
            modes_used,
            eigenvalues,
            residual_scale,
            force_stats,
            disp_stats,
            length,
            d_max: config.d_max,
            patch_prob: config.patch_prob,
            seed: config.seed,
            solver: config.solver,
        })
    }

    pub fn len(&self) -> usize {
        self.forces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forces.is_empty()
    }

    pub fn num_dofs(&self) -> usize {
        self.mesh.num_dofs()
    }

    pub fn system(&self) -> FemSystem {
        FemSystem::new(self.mesh.clone(), self.material)
    }

    /// SHA-256 over the mesh file and both sample arrays.
    pub fn fingerprint(&self) -> Result<String> {
        let mut h = Sha256::new();
        h.update(self.mesh.to_json()?.as_bytes());
        h.update(to_le_bytes(&self.forces));
        h.update(to_le_bytes(&self.displacements));
        Ok(hex(&h.finalize()))
    }

    pub fn manifest(&self) -> Result<DatasetManifest> {
        Ok(DatasetManifest {
            version: DATASET_VERSION,
            samples: self.len(),
            dofs: self.num_dofs(),
            k: self.modes_used,
            c: self.residual_scale,
            length: self.length.get(),
            material: self.material,
            d_max: self.d_max,
            patch_prob: self.patch_prob,
            seed: self.seed,
            force_stats: self.force_stats,
            disp_stats: self.disp_stats,
            mesh_file: MESH.to_string(),
            eigenvalues: self.eigenvalues.clone(),
            solver: self.solver,
            fingerprint: self.fingerprint()?,
        })
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        self.mesh.save(dir.join(MESH))?;
        fs::write(dir.join(FORCES), to_le_bytes(&self.forces))?;
        fs::write(dir.join(DISPLACEMENTS), to_le_bytes(&self.displacements))?;
        let manifest = serde_json::to_string_pretty(&self.manifest()?)?;
        fs::write(dir.join(MANIFEST), manifest)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest_path = dir.join(MANIFEST);
        let manifest: DatasetManifest = serde_json::from_str(&fs::read_to_string(&manifest_path)?)
            .map_err(|e| Error::Format {
                path: manifest_path.display().to_string(),
                reason: e.to_string(),
            })?;
        if manifest.version != DATASET_VERSION {
            return Err(Error::Inconsistent(format!(
                "unsupported dataset version {}",
                manifest.version
            )));
        }
        let mesh = Mesh::load(dir.join(&manifest.mesh_file))?;
        if mesh.num_dofs() != manifest.dofs {
            return Err(Error::Inconsistent(format!(
                "dataset manifest says N = {} but its mesh has {} dofs",
                manifest.dofs,
                mesh.num_dofs()
            )));
        }
        let forces = from_le_bytes(&dir.join(FORCES), manifest.samples, manifest.dofs)?;
        let displacements = from_le_bytes(&dir.join(DISPLACEMENTS), manifest.samples, manifest.dofs)?;
        let dataset = Self {
            mesh,
            material: manifest.material,
            forces,
            displacements,
            modes_used: manifest.k,
            eigenvalues: manifest.eigenvalues,
            residual_scale: manifest.c,
            force_stats: manifest.force_stats,
            disp_stats: manifest.disp_stats,
            length: CharacteristicLength::new(manifest.length)?,
            d_max: manifest.d_max,
            patch_prob: manifest.patch_prob,
            seed: manifest.seed,
            solver: manifest.solver,
        };
        let actual = dataset.fingerprint()?;
        if actual != manifest.fingerprint {
            return Err(Error::Inconsistent(format!(
                "dataset fingerprint mismatch in {} (manifest {}, content {actual})",
                dir.display(),
                manifest.fingerprint
            )));
        }
        Ok(dataset)
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Row-major little-endian `f64` encoding of a list of equal-length vectors.
pub(crate) fn to_le_bytes(rows: &[DVector<f64>]) -> Vec<u8> {
    let mut out = Vec::with_capacity(rows.iter().map(|r| r.len() * 8).sum());
    for row in rows {
        for v in row.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub(crate) fn from_le_bytes(path: &Path, rows: usize, cols: usize) -> Result<Vec<DVector<f64>>> {
    let bytes = fs::read(path)?;
    if bytes.len() != rows * cols * 8 {
        return Err(Error::Format {
            path: path.display().to_string(),
            reason: format!("expected {} bytes for {rows}×{cols} f64, found {}", rows * cols * 8, bytes.len()),
        });
    }
    Ok(bytes
        .chunks_exact(cols * 8)
        .map(|row| {
            DVector::from_iterator(
                cols,
                row.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8 bytes"))),
            )
        })
        .collect())
}
