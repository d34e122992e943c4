//! Modal analysis of the rest stiffness and modal force synthesis, plus the
//! dataset generator that solves each sampled force with Newton-Raphson.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fem::FemSystem;
use crate::mesh::{bounding_box_length, CharacteristicLength, Mesh};
use crate::solver::{newton_raphson, SolverConfig};

mod dataset;

pub use dataset::{Dataset, DatasetManifest, Stats, DATASET_VERSION};

/// Smallest-eigenvalue eigenpairs of the reduced rest stiffness matrix.
#[derive(Debug, Clone)]
pub struct ModalBasis {
    /// `N_free × k`, orthonormal columns.
    pub phi: DMatrix<f64>,
    /// Ascending eigenvalues.
    pub lambda: DVector<f64>,
}

impl ModalBasis {
    pub fn num_modes(&self) -> usize {
        self.lambda.len()
    }

    /// `−Φα` on the free dofs.
    pub fn reduced_force(&self, alpha: &DVector<f64>) -> Result<DVector<f64>> {
        crate::error::check_len(self.num_modes(), alpha.len())?;
        Ok(-(&self.phi * alpha))
    }
}

/// Eigendecomposition of the reduced rest-state tangent stiffness `K(0)`.
pub fn eigendecompose(system: &FemSystem, k: usize) -> Result<ModalBasis> {
    let k0 = system.reduced_tangent(&DVector::zeros(system.num_dofs()))?;
    eigendecompose_matrix(&k0.to_dense(), k)
}

/// The `k` smallest eigenpairs of a symmetric positive definite matrix,
/// ascending, each eigenvector signed so its largest-magnitude entry is
/// positive.
pub fn eigendecompose_matrix(matrix: &DMatrix<f64>, k: usize) -> Result<ModalBasis> {
    let n = matrix.nrows();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!(
            "mode count must lie in [1, {n}], got {k}"
        )));
    }
    let eig = matrix.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let lambda = DVector::from_iterator(k, order[..k].iter().map(|&i| eig.eigenvalues[i]));
    if !(lambda[0] > 0.0) {
        return Err(Error::Eigen(format!(
            "stiffness is not positive definite (smallest eigenvalue {:e}); is the mesh clamped?",
            lambda[0]
        )));
    }
    let mut phi = DMatrix::zeros(n, k);
    for (c, &i) in order[..k].iter().enumerate() {
        let mut v = eig.eigenvectors.column(i).into_owned();
        let pivot = v.iter().copied().fold(0.0f64, |best, x| if x.abs() > best.abs() { x } else { best });
        if pivot < 0.0 {
            v.neg_mut();
        }
        phi.set_column(c, &v);
    }
    Ok(ModalBasis { phi, lambda })
}

/// `α_i ~ U[−λ_i d_max, λ_i d_max]`, so a pure mode's linearized displacement
/// coefficient `α_i / λ_i` stays within `d_max`.
pub fn sample_amplitudes<R: Rng + ?Sized>(basis: &ModalBasis, d_max: f64, rng: &mut R) -> DVector<f64> {
    DVector::from_iterator(
        basis.num_modes(),
        basis.lambda.iter().map(|&l| l * d_max * rng.random_range(-1.0..=1.0)),
    )
}

/// Full-size external force `f^e = −Φα`, zero at fixed dofs.
pub fn modal_force(system: &FemSystem, basis: &ModalBasis, alpha: &DVector<f64>) -> Result<DVector<f64>> {
    system.expand(&basis.reduced_force(alpha)?)
}

/// Restricts a nodal force to surface nodes within `radius` of `center` and
/// rescales it back to its original norm. Returns zero if nothing is loaded
/// inside the patch.
pub fn mask_patch(f: &DVector<f64>, mesh: &Mesh, center: usize, radius: f64) -> DVector<f64> {
    let c = mesh.nodes()[center];
    let mut out = f.clone();
    for (node, p) in mesh.nodes().iter().enumerate() {
        if !mesh.is_surface(node) || (p - c).norm() > radius {
            out.rows_mut(3 * node, 3).fill(0.0);
        }
    }
    let (before, after) = (f.norm(), out.norm());
    if after == 0.0 {
        return out;
    }
    out * (before / after)
}

/// Knobs of the modal force sampler.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForceSampler {
    /// Linearized per-mode displacement bound in meters.
    pub d_max: f64,
    /// Probability of restricting a sample to a random surface patch.
    pub patch_prob: f64,
    pub length: CharacteristicLength,
}

/// Patch radii are drawn uniformly from this range, in units of `L`.
pub const PATCH_RADIUS_RANGE: (f64, f64) = (0.1, 0.5);
const MAX_PATCH_DRAWS: usize = 100;

impl ForceSampler {
    pub fn new(mesh: &Mesh, d_max: f64, patch_prob: f64) -> Result<Self> {
        if !(d_max >= 0.0 && d_max.is_finite()) {
            return Err(Error::InvalidArgument(format!("d_max must be non-negative, got {d_max}")));
        }
        if !(0.0..=1.0).contains(&patch_prob) {
            return Err(Error::InvalidArgument(format!(
                "patch probability must lie in [0, 1], got {patch_prob}"
            )));
        }
        Ok(Self {
            d_max,
            patch_prob,
            length: bounding_box_length(mesh)?,
        })
    }

    /// Draws modal amplitudes and, with probability `patch_prob`, masks the
    /// resulting force to a random surface patch. Empty patches are redrawn.
    pub fn sample<R: Rng + ?Sized>(&self, system: &FemSystem, basis: &ModalBasis, rng: &mut R) -> Result<DVector<f64>> {
        let alpha = sample_amplitudes(basis, self.d_max, rng);
        let f = modal_force(system, basis, &alpha)?;
        if !(rng.random::<f64>() < self.patch_prob) {
            return Ok(f);
        }
        let surface = system.mesh().surface_nodes();
        let l = self.length.get();
        let mut masked = DVector::zeros(f.len());
        for _ in 0..MAX_PATCH_DRAWS {
            let center = surface[rng.random_range(0..surface.len())];
            let radius = l * rng.random_range(PATCH_RADIUS_RANGE.0..=PATCH_RADIUS_RANGE.1);
            masked = mask_patch(&f, system.mesh(), center, radius);
            if masked.norm() > 0.0 || f.norm() == 0.0 {
                break;
            }
        }
        Ok(masked)
    }
}

/// Stream index offset used for evaluation forces so they never coincide
/// with training samples drawn from the same seed.
pub const EVAL_STREAM_OFFSET: u64 = 1 << 40;

/// Independent generator for sample `index` under `seed`.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Draws `count` forces without solving them (evaluation and benchmarks).
pub fn sample_forces(
    system: &FemSystem,
    basis: &ModalBasis,
    sampler: &ForceSampler,
    count: usize,
    seed: u64,
    stream_offset: u64,
) -> Result<Vec<DVector<f64>>> {
    (0..count)
        .map(|i| sampler.sample(system, basis, &mut sample_rng(seed, stream_offset + i as u64)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetConfig {
    pub samples: usize,
    pub d_max: f64,
    pub patch_prob: f64,
    pub seed: u64,
    pub solver: SolverConfig,
    /// Worker threads, 0 for the rayon default.
    pub threads: usize,
}

/// Retries per sample before it counts as exhausted.
pub const MAX_RETRIES: usize = 10;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GenerationStats {
    pub requested: usize,
    pub kept: usize,
    /// Failed attempts that were redrawn.
    pub resampled: usize,
    /// Samples that failed every retry and were dropped.
    pub exhausted: usize,
    pub mean_iterations: f64,
}

enum SampleOutcome {
    Kept {
        force: DVector<f64>,
        displacement: DVector<f64>,
        failures: usize,
        iterations: usize,
    },
    Exhausted {
        last_error: String,
    },
}

fn generate_sample(
    system: &FemSystem,
    basis: &ModalBasis,
    sampler: &ForceSampler,
    config: &DatasetConfig,
    index: usize,
) -> Result<SampleOutcome> {
    let mut rng = sample_rng(config.seed, index as u64);
    let mut last_error = String::new();
    for attempt in 0..=MAX_RETRIES {
        let force = sampler.sample(system, basis, &mut rng)?;
        let tol = config.solver.tolerance(&force);
        match newton_raphson(system, &force, &config.solver) {
            Ok(res) if res.converged => {
                let r = system.residual(&res.u, &force)?.norm();
                if r < tol {
                    return Ok(SampleOutcome::Kept {
                        force,
                        displacement: res.u,
                        failures: attempt,
                        iterations: res.iterations,
                    });
                }
                last_error = format!("converged on step size only (residual {r:e}, tolerance {tol:e})");
            }
            Ok(res) => {
                last_error = format!(
                    "no convergence in {} iterations (residual {:e})",
                    res.iterations,
                    res.residual_history.last().copied().unwrap_or(f64::NAN)
                );
            }
            Err(e) => last_error = e.to_string(),
        }
    }
    Ok(SampleOutcome::Exhausted { last_error })
}

/// Samples `count` modal forces, solves each with Newton-Raphson, and keeps
/// converged pairs. Output is bitwise independent of the worker count.
pub fn generate_dataset(
    system: &FemSystem,
    basis: &ModalBasis,
    config: &DatasetConfig,
) -> Result<(Dataset, GenerationStats)> {
    if config.samples == 0 {
        return Err(Error::InvalidArgument("dataset needs at least one sample".into()));
    }
    config.solver.validate()?;
    let sampler = ForceSampler::new(system.mesh(), config.d_max, config.patch_prob)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot build worker pool: {e}")))?;
    let outcomes: Vec<Result<SampleOutcome>> = pool.install(|| {
        (0..config.samples)
            .into_par_iter()
            .map(|i| generate_sample(system, basis, &sampler, config, i))
            .collect()
    });

    let mut stats = GenerationStats {
        requested: config.samples,
        ..Default::default()
    };
    let mut forces = Vec::new();
    let mut displacements = Vec::new();
    let mut total_iterations = 0usize;
    let mut last_failure = String::new();
    for outcome in outcomes {
        match outcome? {
            SampleOutcome::Kept {
                force,
                displacement,
                failures,
                iterations,
            } => {
                stats.resampled += failures;
                total_iterations += iterations;
                forces.push(force);
                displacements.push(displacement);
            }
            SampleOutcome::Exhausted { last_error } => {
                stats.exhausted += 1;
                stats.resampled += MAX_RETRIES;
                last_failure = last_error;
            }
        }
    }
    stats.kept = forces.len();
    if stats.exhausted * 10 > config.samples || forces.is_empty() {
        return Err(Error::DatasetAborted {
            exhausted: stats.exhausted,
            requested: config.samples,
            detail: format!("last failure: {last_failure}"),
        });
    }
    if stats.exhausted > 0 {
        log::warn!(
            "{} of {} samples dropped after {} retries ({last_failure})",
            stats.exhausted,
            config.samples,
            MAX_RETRIES
        );
    }
    stats.mean_iterations = total_iterations as f64 / stats.kept as f64;

    let dataset = Dataset::from_samples(
        system,
        basis.num_modes(),
        basis.lambda.iter().copied().collect(),
        forces,
        displacements,
        config,
    )?;
    Ok((dataset, stats))
}
