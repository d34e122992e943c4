use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use nalgebra::DVector;
use surrogate_core::bench::{run_bench, sweep_forces, BenchReport};
use surrogate_core::fem::FemSystem;
use surrogate_core::mesh::{bounding_box_length, generate_beam_mesh, Mesh};
use surrogate_core::metrics::{evaluate, EvaluationReport, Predictor};
use surrogate_core::modal::{
    eigendecompose, generate_dataset, sample_forces, Dataset, DatasetConfig, ForceSampler, EVAL_STREAM_OFFSET,
};
use surrogate_core::nn::{train, Surrogate};
use surrogate_core::solver::newton_raphson;
use surrogate_core::{Error, Result};

use crate::config::RunConfig;

/// Which predictor `eval` and `bench` use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictorChoice {
    Model,
    Oracle,
    Zero,
}

fn out_or(out: Option<&Path>, default: &Path) -> PathBuf {
    out.map_or_else(|| default.to_path_buf(), Path::to_path_buf)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

pub fn mesh(config: &RunConfig, out: Option<&Path>) -> Result<()> {
    let mesh = generate_beam_mesh(config.mesh)?;
    let path = out_or(out, &config.paths.mesh);
    mesh.save(&path)?;
    println!(
        "M = {}, N = {}, L = {}, written to {}",
        mesh.num_nodes(),
        mesh.num_dofs(),
        bounding_box_length(&mesh)?.get(),
        path.display()
    );
    Ok(())
}

pub fn dataset(config: &RunConfig, out: Option<&Path>) -> Result<()> {
    let mesh = Mesh::load(&config.paths.mesh)?;
    let length = bounding_box_length(&mesh)?.get();
    let system = FemSystem::new(mesh, config.material);
    let basis = eigendecompose(&system, config.modes)?;
    println!("eigenvalues: {:?}", basis.lambda.as_slice());
    let ds_config = DatasetConfig {
        samples: config.samples,
        d_max: config.d_max_rel * length,
        patch_prob: config.patch_prob,
        seed: config.seed,
        solver: config.solver.for_length(length),
        threads: config.threads,
    };
    let (ds, stats) = generate_dataset(&system, &basis, &ds_config)?;
    let path = out_or(out, &config.paths.dataset);
    ds.save(&path)?;
    println!(
        "kept {} of {} samples ({} resampled, {} dropped), mean NR iterations {:.2}, c = {:e}, written to {}",
        stats.kept,
        stats.requested,
        stats.resampled,
        stats.exhausted,
        stats.mean_iterations,
        ds.residual_scale,
        path.display()
    );
    Ok(())
}

pub fn train_model(config: &RunConfig, out: Option<&Path>, resume: bool) -> Result<()> {
    if resume {
        return Err(Error::InvalidArgument(
            "resuming is not supported: training has no checkpoints, start a fresh run".into(),
        ));
    }
    let ds = Dataset::load(&config.paths.dataset)?;
    info!("training on {} samples with N = {}", ds.len(), ds.num_dofs());
    let outcome = train(&ds, &config.train)?;
    let model = Surrogate::for_dataset(outcome.network, &ds, Some(config.train))?;
    let dir = out_or(out, &config.paths.model);
    model.save(&dir)?;
    let mut csv = String::from("epoch,train_loss,val_loss,val_mse,mean_rho,val_rho,wall_time,skipped\n");
    for r in &outcome.history {
        csv.push_str(&format!(
            "{},{:e},{:e},{:e},{:e},{:e},{:.3},{}\n",
            r.epoch, r.train_loss, r.val_loss, r.val_mse, r.mean_rho, r.val_rho, r.wall_time, r.skipped
        ));
    }
    fs::write(dir.join("history.csv"), csv)?;
    match outcome.best_epoch.checked_sub(1).map(|i| &outcome.history[i]) {
        Some(best) => println!(
            "best after epoch {} (val loss {:e}, val mse {:e}), model written to {}",
            outcome.best_epoch,
            best.val_loss,
            best.val_mse,
            dir.display()
        ),
        None => println!("no epoch improved on the initial network, model written to {}", dir.display()),
    }
    Ok(())
}

/// Loads the dataset and, unless it is not needed, a model trained on it.
fn load_pair(config: &RunConfig, choice: PredictorChoice) -> Result<(Dataset, Option<Surrogate>)> {
    let ds = Dataset::load(&config.paths.dataset)?;
    if choice != PredictorChoice::Model {
        return Ok((ds, None));
    }
    let model = Surrogate::load(&config.paths.model)?;
    if model.num_dofs() != ds.num_dofs() {
        return Err(Error::Inconsistent(format!(
            "model expects N = {} but the dataset mesh has N = {}",
            model.num_dofs(),
            ds.num_dofs()
        )));
    }
    let fingerprint = ds.fingerprint()?;
    if model.dataset_fingerprint.as_deref().is_some_and(|f| f != fingerprint) {
        return Err(Error::Inconsistent(
            "model was trained on a different dataset than the configured one".into(),
        ));
    }
    Ok((ds, Some(model)))
}

fn fresh_forces(config: &RunConfig, ds: &Dataset, system: &FemSystem) -> Result<Vec<DVector<f64>>> {
    let basis = eigendecompose(system, ds.modes_used)?;
    let sampler = ForceSampler::new(system.mesh(), ds.d_max, ds.patch_prob)?;
    sample_forces(system, &basis, &sampler, config.eval_samples, config.seed, EVAL_STREAM_OFFSET)
}

pub fn eval(config: &RunConfig, out: Option<&Path>, choice: PredictorChoice) -> Result<EvaluationReport> {
    let (ds, model) = load_pair(config, choice)?;
    let system = ds.system();
    let forces = fresh_forces(config, &ds, &system)?;
    let predictor = match (&model, choice) {
        (Some(m), _) => Predictor::Model(m),
        (None, PredictorChoice::Oracle) => Predictor::Oracle,
        (None, _) => Predictor::Zero,
    };
    let report = evaluate(predictor, &system, &forces, &ds.solver, ds.residual_scale)?;
    if !report.excluded.is_empty() {
        warn!("{} forces excluded: ground truth did not converge", report.excluded.len());
    }
    let dir = out_or(out, &config.paths.eval);
    fs::create_dir_all(&dir)?;
    write_json(&dir.join("report.json"), &report)?;
    fs::write(dir.join("samples.csv"), report.to_csv())?;
    println!(
        "S = {}: e_max {:e}, e_mean {:e}, snr_min {:.2} dB, mse {:e}, mean rho {:e}, median predict {:.3} ms",
        report.samples_evaluated,
        report.e_max,
        report.e_mean,
        report.snr_min_db,
        report.mse,
        report.mean_residual_norm,
        report.median_predict_ms
    );
    Ok(report)
}

pub fn bench(config: &RunConfig, out: Option<&Path>, choice: PredictorChoice, sweep: bool) -> Result<BenchReport> {
    let (ds, model) = load_pair(config, choice)?;
    let system = ds.system();
    let solver = ds.solver;
    let base = fresh_forces(config, &ds, &system)?;
    let (forces, scales) = if sweep && !config.sweep.is_empty() {
        sweep_forces(&system, &base, &config.sweep, &solver)?
    } else {
        (base, Vec::new())
    };
    let n = system.num_dofs();
    let nan = || DVector::from_element(n, f64::NAN);
    let report = match choice {
        PredictorChoice::Model => {
            let m = model.as_ref().expect("model loaded for the model predictor");
            run_bench(&system, &forces, &scales, |f| m.predict(f).unwrap_or_else(|_| nan()), &solver)?
        }
        PredictorChoice::Oracle => run_bench(
            &system,
            &forces,
            &scales,
            |f| newton_raphson(&system, f, &solver).map(|r| r.u).unwrap_or_else(|_| nan()),
            &solver,
        )?,
        PredictorChoice::Zero => run_bench(&system, &forces, &scales, |_| DVector::zeros(n), &solver)?,
    };
    let dir = out_or(out, &config.paths.bench);
    fs::create_dir_all(&dir)?;
    write_json(&dir.join("report.json"), &report)?;
    fs::write(dir.join("rows.csv"), report.to_csv())?;
    let print = |label: &str, a: &surrogate_core::bench::BenchAggregates| {
        println!(
            "{label}: {} forces, iterations classic {:.2} hybrid {:.2} ({:.1}% reduction), not worse {:.0}%, \
             convergence {:.0}% vs {:.0}%, early exit {:.0}%, fallback {:.0}%, discarded {:.0}%",
            a.count,
            a.mean_classic_iters,
            a.mean_hybrid_iters,
            a.mean_iteration_reduction_pct,
            100.0 * a.hybrid_not_worse_frac,
            100.0 * a.classic_convergence_rate,
            100.0 * a.hybrid_convergence_rate,
            100.0 * a.early_exit_frac,
            100.0 * a.fallback_frac,
            100.0 * a.discarded_frac
        )
    };
    for (s, a) in &report.by_scale {
        print(&format!("tip {:.0}% of L", 100.0 * s), a);
    }
    print("all", &report.aggregates);
    Ok(report)
}

pub fn predict(config: &RunConfig, force: &Path, out: Option<&Path>) -> Result<()> {
    let model = Surrogate::load(&config.paths.model)?;
    let values: Vec<f64> = serde_json::from_str(&fs::read_to_string(force)?).map_err(|e| Error::Format {
        path: force.display().to_string(),
        reason: e.to_string(),
    })?;
    if values.len() != model.num_dofs() {
        return Err(Error::Inconsistent(format!(
            "force has {} entries but the model expects N = {}",
            values.len(),
            model.num_dofs()
        )));
    }
    let (u, elapsed) = model.predict_timed(&DVector::from_vec(values))?;
    let path = out_or(out, Path::new("displacement.json"));
    write_json(&path, &u.as_slice())?;
    println!("prediction in {:.3} ms, written to {}", elapsed.as_secs_f64() * 1e3, path.display());
    Ok(())
}
