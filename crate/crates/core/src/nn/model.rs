//! A trained network bundled with its normalization, plus the model file
//! format.

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::network::{Layer, Network};
use super::train::TrainConfig;
use super::NormalizationSpec;
use crate::error::{check_len, Error, Result};
use crate::modal::Dataset;

pub const MODEL_VERSION: u32 = 1;

const MANIFEST: &str = "manifest.json";
const PARAMS: &str = "params.f64";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelManifest {
    pub version: u32,
    #[serde(rename = "N")]
    pub dofs: usize,
    pub hidden_layers: usize,
    pub widths: Vec<usize>,
    pub norm: NormalizationSpec,
    #[serde(rename = "L")]
    pub length: f64,
    pub fixed_dofs: Vec<usize>,
    /// Residual normalization constant of the training dataset.
    pub c: f64,
    pub train: Option<TrainConfig>,
    pub dataset_fingerprint: Option<String>,
}

/// Network plus everything needed to map a physical force to a physical
/// displacement.
#[derive(Debug, Clone)]
pub struct Surrogate {
    pub network: Network,
    pub norm: NormalizationSpec,
    fixed_dofs: Vec<usize>,
    pub residual_scale: f64,
    pub train: Option<TrainConfig>,
    pub dataset_fingerprint: Option<String>,
}

impl Surrogate {
    pub fn new(network: Network, norm: NormalizationSpec, mut fixed_dofs: Vec<usize>, residual_scale: f64) -> Result<Self> {
        let n = network.input_width();
        if network.output_width() != n {
            return Err(Error::InvalidArgument(format!(
                "surrogate network must be square, got {n} → {}",
                network.output_width()
            )));
        }
        fixed_dofs.sort_unstable();
        fixed_dofs.dedup();
        if fixed_dofs.last().is_some_and(|&d| d >= n) {
            return Err(Error::InvalidArgument("fixed dof out of range".into()));
        }
        Ok(Self {
            network,
            norm,
            fixed_dofs,
            residual_scale,
            train: None,
            dataset_fingerprint: None,
        })
    }

    /// Wraps a network trained on `dataset`.
    pub fn for_dataset(network: Network, dataset: &Dataset, train: Option<TrainConfig>) -> Result<Self> {
        let system = dataset.system();
        let fixed = (0..system.num_dofs()).filter(|&d| !system.is_free_dof(d)).collect();
        let mut s = Self::new(network, NormalizationSpec::from_dataset(dataset), fixed, dataset.residual_scale)?;
        s.train = train;
        s.dataset_fingerprint = Some(dataset.fingerprint()?);
        Ok(s)
    }

    pub fn num_dofs(&self) -> usize {
        self.network.input_width()
    }

    pub fn fixed_dofs(&self) -> &[usize] {
        &self.fixed_dofs
    }

    /// Physical displacement for a physical external force.
    pub fn predict(&self, f_ext: &DVector<f64>) -> Result<DVector<f64>> {
        check_len(self.num_dofs(), f_ext.len())?;
        let out = self.network.eval(&self.norm.input(f_ext))?;
        let mut u = self.norm.displacement(&out);
        for &d in &self.fixed_dofs {
            u[d] = 0.0;
        }
        Ok(u)
    }

    /// [`Surrogate::predict`] together with its wall time.
    pub fn predict_timed(&self, f_ext: &DVector<f64>) -> Result<(DVector<f64>, Duration)> {
        let start = Instant::now();
        let u = self.predict(f_ext)?;
        Ok((u, start.elapsed()))
    }

    pub fn manifest(&self) -> ModelManifest {
        ModelManifest {
            version: MODEL_VERSION,
            dofs: self.num_dofs(),
            hidden_layers: self.network.hidden_layers(),
            widths: self.network.widths(),
            norm: self.norm,
            length: self.norm.length,
            fixed_dofs: self.fixed_dofs.clone(),
            c: self.residual_scale,
            train: self.train,
            dataset_fingerprint: self.dataset_fingerprint.clone(),
        }
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let bytes: Vec<u8> = self.network.to_flat().iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(dir.join(PARAMS), bytes)?;
        fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&self.manifest())?)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join(MANIFEST);
        let format_err = |reason: String| Error::Format {
            path: path.display().to_string(),
            reason,
        };
        let m: ModelManifest =
            serde_json::from_str(&fs::read_to_string(&path)?).map_err(|e| format_err(e.to_string()))?;
        if m.version != MODEL_VERSION {
            return Err(Error::Inconsistent(format!("unsupported model version {}", m.version)));
        }
        if m.widths.first() != Some(&m.dofs) || m.widths.last() != Some(&m.dofs) || m.widths.len() != m.hidden_layers + 2 {
            return Err(format_err(format!(
                "widths {:?} inconsistent with N = {} and {} hidden layers",
                m.widths, m.dofs, m.hidden_layers
            )));
        }
        if m.length != m.norm.length {
            return Err(format_err("L disagrees with the normalization block".into()));
        }
        let mut network = Network::init(&m.widths, 0)?;
        let params_path = dir.join(PARAMS);
        let bytes = fs::read(&params_path)?;
        if bytes.len() != network.num_params() * 8 {
            return Err(Error::Format {
                path: params_path.display().to_string(),
                reason: format!("expected {} parameters, found {} bytes", network.num_params(), bytes.len()),
            });
        }
        let flat: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8 bytes")))
            .collect();
        network.set_flat(&flat)?;
        let mut s = Self::new(network, m.norm, m.fixed_dofs, m.c)?;
        s.train = m.train;
        s.dataset_fingerprint = m.dataset_fingerprint;
        Ok(s)
    }
}

/// Zero-parameter network of the given shape, mostly useful as a baseline.
pub fn zero_network(widths: &[usize]) -> Result<Network> {
    let mut net = Network::init(widths, 0)?;
    let layers: Vec<Layer> = net.layers().iter().map(Layer::zeros_like).collect();
    net = Network::from_layers(layers)?;
    Ok(net)
}
