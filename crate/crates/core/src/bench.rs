//! Paired comparison of classic and hybrid Newton-Raphson on identical forces.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::fem::FemSystem;
use crate::mesh::bounding_box_length;
use crate::solver::{hybrid_newton_raphson, newton_raphson, solve_linear, PredictionOutcome, SolverConfig};

/// Default sweep: forces producing roughly 1%, 10% and 25% of `L` as linear
/// tip displacement.
pub const DEFAULT_SWEEP: [f64; 3] = [0.01, 0.10, 0.25];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub idx: usize,
    /// Sweep fraction of `L` this force was scaled to, if any.
    pub scale: Option<f64>,
    pub force_norm: f64,
    pub classic_iters: usize,
    pub hybrid_iters: usize,
    pub hybrid_outcome: PredictionOutcome,
    pub classic_converged: bool,
    pub hybrid_converged: bool,
    pub classic_residual: f64,
    pub hybrid_residual: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchAggregates {
    pub count: usize,
    pub mean_classic_iters: f64,
    pub mean_hybrid_iters: f64,
    /// `100·(mean classic − mean hybrid) / mean classic`.
    pub mean_iteration_reduction_pct: f64,
    /// Fraction of forces where hybrid needed no more iterations than classic.
    pub hybrid_not_worse_frac: f64,
    pub classic_convergence_rate: f64,
    pub hybrid_convergence_rate: f64,
    /// Hybrid over classic convergence rate.
    pub convergence_rate_ratio: f64,
    pub early_exit_frac: f64,
    pub fallback_frac: f64,
    pub discarded_frac: f64,
    /// Whether hybrid met the residual tolerance on every force where classic did.
    pub hybrid_meets_tolerance_when_classic_does: bool,
}

impl BenchAggregates {
    pub fn from_rows(rows: &[BenchRow]) -> Self {
        let n = rows.len().max(1) as f64;
        let frac = |p: &dyn Fn(&BenchRow) -> bool| rows.iter().filter(|r| p(r)).count() as f64 / n;
        let mean_c = rows.iter().map(|r| r.classic_iters as f64).sum::<f64>() / n;
        let mean_h = rows.iter().map(|r| r.hybrid_iters as f64).sum::<f64>() / n;
        let conv_c = frac(&|r| r.classic_converged);
        let conv_h = frac(&|r| r.hybrid_converged);
        Self {
            count: rows.len(),
            mean_classic_iters: mean_c,
            mean_hybrid_iters: mean_h,
            mean_iteration_reduction_pct: if mean_c > 0.0 { 100.0 * ((mean_c - mean_h) / mean_c) } else { 0.0 },
            hybrid_not_worse_frac: frac(&|r| r.hybrid_iters <= r.classic_iters),
            classic_convergence_rate: conv_c,
            hybrid_convergence_rate: conv_h,
            convergence_rate_ratio: if conv_c > 0.0 { conv_h / conv_c } else { f64::NAN },
            early_exit_frac: frac(&|r| r.hybrid_outcome == PredictionOutcome::EarlyExit),
            fallback_frac: frac(&|r| r.hybrid_outcome == PredictionOutcome::Fallback),
            discarded_frac: frac(&|r| r.hybrid_outcome == PredictionOutcome::Discarded),
            hybrid_meets_tolerance_when_classic_does: rows
                .iter()
                .all(|r| r.classic_residual >= r.tolerance || r.hybrid_residual < r.tolerance),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub aggregates: BenchAggregates,
    /// Aggregates per sweep fraction, in sweep order.
    pub by_scale: Vec<(f64, BenchAggregates)>,
}

impl BenchReport {
    pub fn from_rows(rows: Vec<BenchRow>) -> Self {
        let mut scales: Vec<f64> = Vec::new();
        for s in rows.iter().filter_map(|r| r.scale) {
            if !scales.contains(&s) {
                scales.push(s);
            }
        }
        let by_scale = scales
            .into_iter()
            .map(|s| {
                let sub: Vec<BenchRow> = rows.iter().filter(|r| r.scale == Some(s)).cloned().collect();
                (s, BenchAggregates::from_rows(&sub))
            })
            .collect();
        Self {
            aggregates: BenchAggregates::from_rows(&rows),
            rows,
            by_scale,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "idx,scale,force_norm,classic_iters,hybrid_iters,hybrid_outcome,classic_converged,hybrid_converged\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{:e},{},{},{:?},{},{}\n",
                r.idx,
                r.scale.map_or(String::new(), |s| s.to_string()),
                r.force_norm,
                r.classic_iters,
                r.hybrid_iters,
                r.hybrid_outcome,
                r.classic_converged,
                r.hybrid_converged
            ));
        }
        out
    }
}

/// Runs classic and hybrid solves on each force. `scales` labels the rows
/// and must be empty or match `forces` in length.
pub fn run_bench<P>(
    system: &FemSystem,
    forces: &[DVector<f64>],
    scales: &[f64],
    predictor: P,
    config: &SolverConfig,
) -> Result<BenchReport>
where
    P: Fn(&DVector<f64>) -> DVector<f64> + Sync,
{
    if !scales.is_empty() {
        check_len(forces.len(), scales.len())?;
    }
    let rows = forces
        .par_iter()
        .enumerate()
        .map(|(idx, f)| {
            let classic = newton_raphson(system, f, config)?;
            let hybrid = hybrid_newton_raphson(system, f, &predictor, config)?;
            Ok(BenchRow {
                idx,
                scale: scales.get(idx).copied(),
                force_norm: f.norm(),
                classic_iters: classic.iterations,
                hybrid_iters: hybrid.iterations,
                hybrid_outcome: hybrid.prediction_used,
                classic_converged: classic.converged,
                hybrid_converged: hybrid.converged,
                classic_residual: *classic.residual_history.last().expect("history is never empty"),
                hybrid_residual: *hybrid.residual_history.last().expect("history is never empty"),
                tolerance: config.tolerance(f),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BenchReport::from_rows(rows))
}

/// Largest node displacement of the linearized response `K(0)⁻¹ f`.
pub fn linear_tip_displacement(system: &FemSystem, f: &DVector<f64>, config: &SolverConfig) -> Result<f64> {
    check_len(system.num_dofs(), f.len())?;
    let k = system.reduced_tangent(&DVector::zeros(system.num_dofs()))?;
    let u = system.expand(&solve_linear(&k, &system.reduce_vector(f)?, config.linear_solver)?)?;
    Ok((0..u.len() / 3).map(|n| u.fixed_rows::<3>(3 * n).norm()).fold(0.0, f64::max))
}

/// Rescales every force to each sweep fraction of `L`, returning the
/// scaled forces and their labels (fraction-major order).
pub fn sweep_forces(
    system: &FemSystem,
    forces: &[DVector<f64>],
    fractions: &[f64],
    config: &SolverConfig,
) -> Result<(Vec<DVector<f64>>, Vec<f64>)> {
    let length = bounding_box_length(system.mesh())?.get();
    let tips: Vec<f64> = forces.iter().map(|f| linear_tip_displacement(system, f, config)).collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(forces.len() * fractions.len());
    let mut labels = Vec::with_capacity(out.capacity());
    for &frac in fractions {
        if !(frac > 0.0) {
            return Err(Error::InvalidArgument(format!("sweep fraction must be positive, got {frac}")));
        }
        for (f, &tip) in forces.iter().zip(&tips) {
            if tip == 0.0 {
                return Err(Error::InvalidArgument("cannot rescale a zero force".into()));
            }
            out.push(f * (frac * length / tip));
            labels.push(frac);
        }
    }
    Ok((out, labels))
}
