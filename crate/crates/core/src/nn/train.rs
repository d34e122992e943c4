//! Mini-batch Adam training on a dataset.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::loss::{combine, mse, LossKind, ResidualContext};
use super::network::{Network, DEFAULT_HIDDEN_LAYERS};
use super::NormalizationSpec;
use crate::error::{Error, Result};
use crate::fem::FemSystem;
use crate::modal::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    pub validation_fraction: f64,
    pub hidden_layers: usize,
    pub schedule: LrSchedule,
}

/// Learning-rate schedule applied per epoch on top of `adam.lr`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Cosine annealing from `adam.lr` down to `final_lr` at the last epoch.
    Cosine { final_lr: f64 },
}

impl LrSchedule {
    pub fn lr_at(&self, base: f64, epoch: usize, epochs: usize) -> f64 {
        match *self {
            LrSchedule::Constant => base,
            LrSchedule::Cosine { final_lr } => {
                let t = if epochs > 1 { epoch as f64 / (epochs - 1) as f64 } else { 1.0 };
                final_lr + 0.5 * (base - final_lr) * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::ResidualMul,
            epochs: 500,
            batch_size: 32,
            seed: 0,
            adam: AdamConfig::default(),
            validation_fraction: 0.1,
            hidden_layers: DEFAULT_HIDDEN_LAYERS,
            schedule: LrSchedule::Constant,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::InvalidArgument(format!(
                "validation_fraction must lie in [0, 1), got {}",
                self.validation_fraction
            )));
        }
        let a = &self.adam;
        if !(a.lr >= 0.0 && a.lr.is_finite()) || !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return Err(Error::InvalidArgument(format!("invalid Adam hyperparameters {a:?}")));
        }
        if let LrSchedule::Cosine { final_lr } = self.schedule {
            if !(final_lr >= 0.0 && final_lr.is_finite()) {
                return Err(Error::InvalidArgument(format!("final_lr must be non-negative, got {final_lr}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-sample training loss over the epoch's updates.
    pub train_loss: f64,
    /// Validation loss of the parameters at the end of the epoch. Falls back
    /// to the training set when no validation split exists.
    pub val_loss: f64,
    pub val_mse: f64,
    /// Mean training `ρ`; zero when the loss does not use the residual.
    pub mean_rho: f64,
    pub val_rho: f64,
    pub wall_time: f64,
    /// Samples dropped this epoch because the residual could not be evaluated.
    pub skipped: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the lowest validation loss.
    pub network: Network,
    /// Epochs completed when `network` was recorded; 0 is the initialization.
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    pub norm: NormalizationSpec,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
}

/// Per-sample loss terms for one network output.
struct SampleTerm {
    mse: f64,
    rho: f64,
    loss: f64,
    grad: DVector<f64>,
}

struct Trainer<'a> {
    ctx: ResidualContext<'a>,
    kind: LossKind,
    inputs: Vec<DVector<f64>>,
    targets: Vec<DVector<f64>>,
    forces: &'a [DVector<f64>],
}

impl<'a> Trainer<'a> {
    fn new(dataset: &'a Dataset, system: &'a FemSystem, norm: &'a NormalizationSpec, kind: LossKind) -> Self {
        Self {
            ctx: ResidualContext {
                system,
                norm,
                residual_scale: dataset.residual_scale,
            },
            kind,
            inputs: dataset.forces.iter().map(|f| norm.input(f)).collect(),
            targets: dataset.displacements.iter().map(|u| norm.target(u)).collect(),
            forces: &dataset.forces,
        }
    }

    fn batch_matrix(&self, idx: &[usize]) -> DMatrix<f64> {
        DMatrix::from_columns(&idx.iter().map(|&i| self.inputs[i].clone()).collect::<Vec<_>>())
    }

    /// Loss terms for each column of `outputs`; `None` marks a skipped sample.
    fn terms(&self, idx: &[usize], outputs: &DMatrix<f64>, with_rho: bool) -> Result<Vec<Option<SampleTerm>>> {
        let rhos: Vec<Option<f64>> = if with_rho {
            idx.par_iter()
                .enumerate()
                .map(|(col, &i)| {
                    let out = outputs.column(col).into_owned();
                    match self.ctx.rho(&out, &self.forces[i]) {
                        Ok(r) => Some(r),
                        Err(e) => {
                            log::warn!("skipping sample {i}: {e}");
                            None
                        }
                    }
                })
                .collect()
        } else {
            vec![Some(0.0); idx.len()]
        };
        idx.iter()
            .enumerate()
            .zip(rhos)
            .map(|((col, &i), rho)| {
                let Some(rho) = rho else { return Ok(None) };
                let out = outputs.column(col).into_owned();
                let (m, g) = mse(&out, &self.targets[i])?;
                let (loss, grad) = combine(self.kind, m, g, rho);
                Ok(Some(SampleTerm { mse: m, rho, loss, grad }))
            })
            .collect()
    }

    /// Mean loss, mean MSE and mean `ρ` over `idx` without updating.
    fn evaluate(&self, net: &Network, idx: &[usize], batch: usize) -> Result<(f64, f64, f64)> {
        let (mut loss, mut m, mut rho, mut n) = (0.0, 0.0, 0.0, 0usize);
        for chunk in idx.chunks(batch.max(1)) {
            let (out, _) = net.forward_batch(&self.batch_matrix(chunk))?;
            for t in self.terms(chunk, &out, true)?.into_iter().flatten() {
                loss += t.loss;
                m += t.mse;
                rho += t.rho;
                n += 1;
            }
        }
        if n == 0 {
            return Ok((f64::NAN, f64::NAN, f64::NAN));
        }
        let n = n as f64;
        Ok((loss / n, m / n, rho / n))
    }
}

/// Trains a square network on `dataset`. Deterministic for a fixed seed.
pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("cannot train on an empty dataset".into()));
    }
    let system = dataset.system();
    let norm = NormalizationSpec::from_dataset(dataset);
    let trainer = Trainer::new(dataset, &system, &norm, config.loss);

    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed));
    let n_val = (dataset.len() as f64 * config.validation_fraction).floor() as usize;
    let val_indices = order[..n_val].to_vec();
    let mut train_indices = order[n_val..].to_vec();
    if train_indices.is_empty() {
        return Err(Error::InvalidArgument("validation split leaves no training samples".into()));
    }
    let monitor = if val_indices.is_empty() { train_indices.clone() } else { val_indices.clone() };

    let mut net = Network::square(dataset.num_dofs(), config.hidden_layers, config.seed)?;
    let sizes: Vec<usize> = net.param_slices_mut().iter().map(|s| s.len()).collect();
    let mut adam = AdamState::new(config.adam, &sizes);

    let (v_loss, _, _) = trainer.evaluate(&net, &monitor, config.batch_size)?;
    let mut best = (v_loss, 0usize, net.to_flat());
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let start = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(epoch as u64 + 1);
        train_indices.shuffle(&mut rng);
        adam.config.lr = config.schedule.lr_at(config.adam.lr, epoch, config.epochs);

        let (mut loss_sum, mut rho_sum, mut count, mut skipped) = (0.0, 0.0, 0usize, 0usize);
        for (b, chunk) in train_indices.chunks(config.batch_size).enumerate() {
            let (out, cache) = net.forward_batch(&trainer.batch_matrix(chunk))?;
            let terms = trainer.terms(chunk, &out, config.loss.uses_residual())?;
            let kept = terms.iter().flatten().count();
            skipped += terms.len() - kept;
            if kept == 0 {
                continue;
            }
            let scale = 1.0 / kept as f64;
            let mut grad_y = DMatrix::zeros(out.nrows(), out.ncols());
            let mut batch_loss = 0.0;
            for (col, t) in terms.iter().enumerate() {
                if let Some(t) = t {
                    grad_y.set_column(col, &(&t.grad * scale));
                    batch_loss += t.loss;
                    rho_sum += t.rho;
                }
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            loss_sum += batch_loss;
            count += kept;
            let grads = net.backward(&cache, &grad_y)?;
            adam_step(&mut net.param_slices_mut(), &grads.slices(), &mut adam)?;
        }

        let (val_loss, val_mse, val_rho) = trainer.evaluate(&net, &monitor, config.batch_size)?;
        if !val_loss.is_finite() && !monitor.is_empty() {
            return Err(Error::NonFiniteLoss { epoch, batch: 0 });
        }
        if val_loss < best.0 {
            best = (val_loss, epoch + 1, net.to_flat());
        }
        let denom = count.max(1) as f64;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / denom,
            val_loss,
            val_mse,
            mean_rho: rho_sum / denom,
            val_rho,
            wall_time: start.elapsed().as_secs_f64(),
            skipped,
        };
        if epoch % 10 == 0 || epoch + 1 == config.epochs {
            log::info!(
                "epoch {epoch}: train {:.3e} val {:.3e} val_mse {:.3e} val_rho {:.3e}",
                record.train_loss,
                val_loss,
                val_mse,
                val_rho
            );
        }
        history.push(record);
    }

    net.set_flat(&best.2)?;
    Ok(TrainOutcome {
        network: net,
        best_epoch: best.1,
        history,
        norm,
        train_indices,
        val_indices,
    })
}

/// Per-sample losses of the untrained network on `indices`, used to check
/// that batching does not change what the loss sees.
pub fn initial_sample_losses(dataset: &Dataset, config: &TrainConfig, indices: &[usize]) -> Result<Vec<f64>> {
    config.validate()?;
    let system = dataset.system();
    let norm = NormalizationSpec::from_dataset(dataset);
    let trainer = Trainer::new(dataset, &system, &norm, config.loss);
    let net = Network::square(dataset.num_dofs(), config.hidden_layers, config.seed)?;
    let mut out = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(config.batch_size) {
        let (y, _) = net.forward_batch(&trainer.batch_matrix(chunk))?;
        for t in trainer.terms(chunk, &y, config.loss.uses_residual())? {
            out.push(t.map_or(f64::NAN, |t| t.loss));
        }
    }
    Ok(out)
}
