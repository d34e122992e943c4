//! Accuracy metrics over paired predictions and ground truths, and the
//! evaluation driver that produces them.
//!
//! Metric kernels expect displacements already divided by the characteristic
//! length; [`evaluate`] does the scaling.

use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::fem::FemSystem;
use crate::mesh::bounding_box_length;
use crate::nn::Surrogate;
use crate::solver::{newton_raphson, SolverConfig};

fn check_pairs(preds: &[DVector<f64>], truths: &[DVector<f64>]) -> Result<()> {
    check_len(truths.len(), preds.len())?;
    for (u, v) in preds.iter().zip(truths) {
        check_len(v.len(), u.len())?;
        if u.len() % 3 != 0 {
            return Err(Error::InvalidArgument(format!("{} dofs is not a multiple of 3", u.len())));
        }
    }
    Ok(())
}

/// Largest node displacement error `max_i ‖u_i − v_i‖` of one sample.
pub fn node_error_max(u: &DVector<f64>, v: &DVector<f64>) -> f64 {
    (0..u.len() / 3)
        .map(|n| (u.fixed_rows::<3>(3 * n) - v.fixed_rows::<3>(3 * n)).norm())
        .fold(0.0, f64::max)
}

/// `10·log₁₀(‖u‖ / ‖u − v‖)` with `u` the prediction. Exact matches give
/// `+∞`; a zero prediction with nonzero error gives `−∞`.
pub fn snr_db(u: &DVector<f64>, v: &DVector<f64>) -> f64 {
    let err = (u - v).norm();
    if err == 0.0 {
        return f64::INFINITY;
    }
    10.0 * (u.norm() / err).log10()
}

pub fn e_max(preds: &[DVector<f64>], truths: &[DVector<f64>]) -> Result<f64> {
    check_pairs(preds, truths)?;
    Ok(preds.iter().zip(truths).map(|(u, v)| node_error_max(u, v)).fold(0.0, f64::max))
}

/// `Σ_s ‖u^s − v^s‖ / (N·S)`, using whole-vector norms.
pub fn e_mean(preds: &[DVector<f64>], truths: &[DVector<f64>]) -> Result<f64> {
    check_pairs(preds, truths)?;
    if preds.is_empty() {
        return Ok(0.0);
    }
    let errs: Vec<f64> = preds.iter().zip(truths).map(|(u, v)| (u - v).norm()).collect();
    Ok(sorted_sum(errs) / (preds[0].len() * preds.len()) as f64)
}

/// Minimum per-sample SNR in decibels; `+∞` for an empty set.
pub fn snr_min(preds: &[DVector<f64>], truths: &[DVector<f64>]) -> Result<f64> {
    check_pairs(preds, truths)?;
    Ok(preds.iter().zip(truths).map(|(u, v)| snr_db(u, v)).fold(f64::INFINITY, f64::min))
}

// Summing in sorted order makes the result independent of sample order.
fn sorted_sum(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum()
}

/// Serializes non-finite floats as `"inf"`, `"-inf"` or `"nan"`.
pub mod float_or_inf {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) => match s.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("expected a number or \"inf\", got {other:?}"))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    pub idx: usize,
    pub node_err_max: f64,
    pub vec_err: f64,
    #[serde(with = "float_or_inf")]
    pub snr_db: f64,
    /// Normalized residual `‖R(u_pred)‖ / c`.
    #[serde(with = "float_or_inf")]
    pub residual_norm: f64,
    pub predict_ms: f64,
    pub nr_iters_classic: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub e_max: f64,
    pub e_mean: f64,
    #[serde(with = "float_or_inf")]
    pub snr_min_db: f64,
    /// Scaled mean squared error `Σ_s Σ_i (u_i − v_i)² / (N·S)`.
    pub mse: f64,
    #[serde(with = "float_or_inf")]
    pub mean_residual_norm: f64,
    pub median_predict_ms: f64,
    #[serde(rename = "S")]
    pub samples_evaluated: usize,
    #[serde(rename = "N")]
    pub dofs: usize,
    #[serde(rename = "M")]
    pub nodes: usize,
    /// Forces whose ground-truth solve did not converge.
    pub excluded: Vec<usize>,
    pub samples: Vec<SampleRow>,
}

impl EvaluationReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("idx,node_err_max,vec_err,snr_db,residual_norm,predict_ms,nr_iters_classic\n");
        for r in &self.samples {
            out.push_str(&format!(
                "{},{:e},{:e},{},{:e},{:e},{}\n",
                r.idx, r.node_err_max, r.vec_err, r.snr_db, r.residual_norm, r.predict_ms, r.nr_iters_classic
            ));
        }
        out
    }
}

/// What produces the displacement compared against ground truth.
#[derive(Debug, Clone, Copy)]
pub enum Predictor<'a> {
    Model(&'a Surrogate),
    /// The ground-truth solution itself.
    Oracle,
    Zero,
}

impl Predictor<'_> {
    fn predict(&self, f: &DVector<f64>, truth: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            Predictor::Model(m) => m.predict(f),
            Predictor::Oracle => Ok(truth.clone()),
            Predictor::Zero => Ok(DVector::zeros(f.len())),
        }
    }
}

/// Solves every force with classic Newton-Raphson for ground truth, predicts
/// it, and reports the metrics on `L`-scaled displacements. `residual_scale`
/// is the `c` used to normalize prediction residuals.
pub fn evaluate(
    predictor: Predictor,
    system: &FemSystem,
    forces: &[DVector<f64>],
    config: &SolverConfig,
    residual_scale: f64,
) -> Result<EvaluationReport> {
    if forces.is_empty() {
        return Err(Error::InvalidArgument("evaluation needs at least one force".into()));
    }
    if !(residual_scale > 0.0) {
        return Err(Error::InvalidArgument(format!("residual scale must be positive, got {residual_scale}")));
    }
    let n = system.num_dofs();
    for f in forces {
        check_len(n, f.len())?;
    }
    if let Predictor::Model(m) = predictor {
        if m.num_dofs() != n {
            return Err(Error::Inconsistent(format!(
                "model expects N = {} but the mesh has {n} dofs",
                m.num_dofs()
            )));
        }
    }
    let length = bounding_box_length(system.mesh())?.get();
    let solves: Vec<_> = forces.par_iter().map(|f| newton_raphson(system, f, config)).collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(forces.len());
    let mut excluded = Vec::new();
    let (mut preds, mut truths) = (Vec::new(), Vec::new());
    for (idx, (f, sol)) in forces.iter().zip(&solves).enumerate() {
        if !sol.converged {
            log::warn!("ground truth for force {idx} did not converge; excluded");
            excluded.push(idx);
            continue;
        }
        let start = Instant::now();
        let u = predictor.predict(f, &sol.u)?;
        let predict_ms = start.elapsed().as_secs_f64() * 1e3;
        let residual_norm = match system.residual(&u, f) {
            Ok(r) => r.norm() / residual_scale,
            Err(_) => f64::INFINITY,
        };
        let (us, vs) = (u / length, &sol.u / length);
        rows.push(SampleRow {
            idx,
            node_err_max: node_error_max(&us, &vs),
            vec_err: (&us - &vs).norm(),
            snr_db: snr_db(&us, &vs),
            residual_norm,
            predict_ms,
            nr_iters_classic: sol.iterations,
        });
        preds.push(us);
        truths.push(vs);
    }
    if rows.is_empty() {
        return Err(Error::InvalidArgument("no ground-truth solve converged".into()));
    }
    let s = rows.len();
    let sq: Vec<f64> = preds.iter().zip(&truths).map(|(u, v)| (u - v).norm_squared()).collect();
    let mut ms: Vec<f64> = rows.iter().map(|r| r.predict_ms).collect();
    ms.sort_by(f64::total_cmp);
    Ok(EvaluationReport {
        e_max: e_max(&preds, &truths)?,
        e_mean: e_mean(&preds, &truths)?,
        snr_min_db: snr_min(&preds, &truths)?,
        mse: sorted_sum(sq) / (n * s) as f64,
        mean_residual_norm: sorted_sum(rows.iter().map(|r| r.residual_norm).collect()) / s as f64,
        median_predict_ms: ms[s / 2],
        samples_evaluated: s,
        dofs: n,
        nodes: n / 3,
        excluded,
        samples: rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_vec(x.to_vec())
    }

    #[test]
    fn three_four_five() {
        let u = v(&[0.0, 0.0, 0.0, 3.0, 4.0, 0.0]);
        let z = DVector::zeros(6);
        assert_eq!(e_max(&[u.clone()], &[z.clone()]).unwrap(), 5.0);
        assert_eq!(e_max(&[u.clone()], &[u.clone()]).unwrap(), 0.0);
        assert_eq!(e_mean(&[u.clone()], &[u.clone()]).unwrap(), 0.0);
        assert_eq!(snr_min(&[u.clone()], &[u]).unwrap(), f64::INFINITY);
    }

    #[test]
    fn snr_cases() {
        let u = v(&[10.0, 0.0, 0.0]);
        assert!((snr_db(&u, &v(&[9.0, 0.0, 0.0])) - 10.0).abs() < 1e-12);
        assert_eq!(snr_db(&DVector::zeros(3), &u), f64::NEG_INFINITY);
        let preds = vec![u.clone(), u.clone(), u.clone()];
        // errors giving 20, 5 and 12 dB
        let truths: Vec<_> = [20.0f64, 5.0, 12.0]
            .iter()
            .map(|db| v(&[10.0 - 10.0 / 10f64.powf(db / 10.0), 0.0, 0.0]))
            .collect();
        assert!((snr_min(&preds, &truths).unwrap() - 5.0).abs() < 1e-9);
    }

    #[test]
    fn shape_errors() {
        let a = vec![DVector::zeros(6)];
        assert!(e_max(&a, &[DVector::zeros(3)]).is_err());
        assert!(e_mean(&a, &[]).is_err());
        assert!(snr_min(&[DVector::zeros(4)], &[DVector::zeros(4)]).is_err());
    }

    #[test]
    fn infinity_serializes_as_string() {
        let row = SampleRow {
            idx: 0,
            node_err_max: 0.0,
            vec_err: 0.0,
            snr_db: f64::INFINITY,
            residual_norm: 0.5,
            predict_ms: 0.1,
            nr_iters_classic: 3,
        };
        let json = serde_json::to_string(&row).unwrap();
        assert!(json.contains("\"snr_db\":\"inf\""));
        let back: SampleRow = serde_json::from_str(&json).unwrap();
        assert_eq!(back, row);
    }
}
