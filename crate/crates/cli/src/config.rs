//! Run configuration: one JSON document holding every knob, plus dotted
//! `key=value` overrides applied on top of it.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use surrogate_core::material::{Material, MaterialModel};
use surrogate_core::mesh::BeamSpec;
use surrogate_core::nn::TrainConfig;
use surrogate_core::solver::{LinearSolver, SolverConfig};
use surrogate_core::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Seed for dataset generation and fresh evaluation forces.
    pub seed: u64,
    /// Worker threads, 0 for one per core.
    pub threads: usize,
    pub mesh: BeamSpec,
    pub material: Material,
    /// Number of modes `k` used to synthesize forces.
    pub modes: usize,
    pub samples: usize,
    /// Amplitude bound as a fraction of the characteristic length.
    pub d_max_rel: f64,
    pub patch_prob: f64,
    pub solver: SolverSettings,
    pub train: TrainConfig,
    /// Number of fresh forces for `eval` and `bench`.
    pub eval_samples: usize,
    /// Bench force levels as fractions of `L` of linear tip displacement.
    pub sweep: Vec<f64>,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            threads: 0,
            mesh: BeamSpec::default(),
            material: Material::new(MaterialModel::StVenantKirchhoff, 1e6, 0.3).expect("valid default material"),
            modes: 5,
            samples: 1000,
            d_max_rel: 0.15,
            patch_prob: 0.5,
            solver: SolverSettings::default(),
            train: TrainConfig::default(),
            eval_samples: 100,
            sweep: surrogate_core::bench::DEFAULT_SWEEP.to_vec(),
            paths: Paths::default(),
        }
    }
}

/// Newton-Raphson settings; `eta` defaults to `1e-9·L` once the mesh is known.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSettings {
    pub eps: f64,
    pub eta: Option<f64>,
    pub max_iters: usize,
    pub linear_solver: LinearSolver,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            eps: 1e-6,
            eta: None,
            max_iters: 30,
            linear_solver: LinearSolver::DirectSymmetric,
        }
    }
}

impl SolverSettings {
    pub fn for_length(&self, length: f64) -> SolverConfig {
        SolverConfig {
            eps: self.eps,
            eta: self.eta.unwrap_or(1e-9 * length),
            max_iters: self.max_iters,
            linear_solver: self.linear_solver,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub mesh: PathBuf,
    pub dataset: PathBuf,
    pub model: PathBuf,
    pub eval: PathBuf,
    pub bench: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            mesh: "mesh.json".into(),
            dataset: "dataset".into(),
            model: "model".into(),
            eval: "eval".into(),
            bench: "bench".into(),
        }
    }
}

impl RunConfig {
    /// Reads `path` (or starts from defaults) and applies `overrides` in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut value = match path {
            Some(p) => serde_json::from_str::<Value>(&fs::read_to_string(p)?).map_err(|e| Error::Format {
                path: p.display().to_string(),
                reason: e.to_string(),
            })?,
            None => serde_json::to_value(Self::default())?,
        };
        // fill missing keys so overrides can address defaulted fields
        let config: Self = serde_json::from_value(value).map_err(invalid)?;
        value = serde_json::to_value(&config)?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let config: Self = serde_json::from_value(value).map_err(invalid)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        let BeamSpec { nx, ny, nz, size } = self.mesh;
        if nx == 0 || ny == 0 || nz == 0 || !size.iter().all(|s| s.is_finite() && *s > 0.0) {
            return bad(format!("mesh needs positive subdivisions and sizes, got {:?}", self.mesh));
        }
        if self.modes == 0 {
            return bad("modes must be at least 1".into());
        }
        if self.samples == 0 || self.eval_samples == 0 {
            return bad("samples and eval_samples must be at least 1".into());
        }
        if !(self.d_max_rel > 0.0 && self.d_max_rel.is_finite()) {
            return bad(format!("d_max_rel must be positive, got {}", self.d_max_rel));
        }
        if !(0.0..=1.0).contains(&self.patch_prob) {
            return bad(format!("patch_prob must lie in [0, 1], got {}", self.patch_prob));
        }
        if let Some(f) = self.sweep.iter().find(|f| !(**f > 0.0 && f.is_finite())) {
            return bad(format!("sweep fractions must be positive, got {f}"));
        }
        let s = &self.solver;
        if !(s.eps > 0.0) || s.eta.is_some_and(|e| !(e > 0.0)) || s.max_iters == 0 {
            return bad(format!("solver needs eps > 0, eta > 0 and max_iters >= 1, got {s:?}"));
        }
        self.train.validate()
    }
}

fn invalid(e: serde_json::Error) -> Error {
    Error::InvalidArgument(format!("config: {e}"))
}

/// Sets `a.b.c=value` inside `root`. The value is parsed as JSON when
/// possible and taken as a plain string otherwise.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::InvalidArgument(format!("override {assignment:?} is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::InvalidArgument(format!("override {key:?}: {} is not a section", parts[..i].join("."))))?;
        if !obj.contains_key(*part) {
            return Err(Error::InvalidArgument(format!("override {key:?}: unknown key {part:?}")));
        }
        node = obj.get_mut(*part).expect("checked above");
    }
    *node = value;
    Ok(())
}
