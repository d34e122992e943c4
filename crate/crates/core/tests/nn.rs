mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use surrogate_core::mesh::bounding_box_length;
use surrogate_core::modal::{eigendecompose, generate_dataset, Dataset, DatasetConfig};
use surrogate_core::nn::*;
use surrogate_core::solver::SolverConfig;

fn small_dataset(samples: usize) -> Dataset {
    let system = beam(2, 1, 1, stvk());
    let l = bounding_box_length(system.mesh()).unwrap().get();
    let basis = eigendecompose(&system, 3).unwrap();
    let cfg = DatasetConfig {
        samples,
        d_max: 0.05 * l,
        patch_prob: 0.0,
        seed: 11,
        solver: SolverConfig::for_length(l),
        threads: 0,
    };
    generate_dataset(&system, &basis, &cfg).unwrap().0
}

fn scalar_loss(net: &Network, x: &DMatrix<f64>, w: &DMatrix<f64>) -> f64 {
    net.forward_batch(x).unwrap().0.component_mul(w).sum()
}

#[test]
fn backprop_matches_finite_differences() {
    let net = Network::init(&[6, 6, 6, 6, 6], 3).unwrap();
    let x = DMatrix::from_fn(6, 3, |i, j| ((i * 7 + j * 3) as f64 * 0.37).sin());
    let w = DMatrix::from_fn(6, 3, |i, j| ((i + 5 * j) as f64 * 0.91).cos());
    let (_, cache) = net.forward_batch(&x).unwrap();
    let analytic = net.backward(&cache, &w).unwrap().to_flat();
    let base = net.to_flat();
    assert_eq!(analytic.len(), base.len());
    let h = 1e-6;
    let mut probe = net.clone();
    for i in 0..base.len() {
        let mut p = base.clone();
        p[i] += h;
        probe.set_flat(&p).unwrap();
        let up = scalar_loss(&probe, &x, &w);
        p[i] -= 2.0 * h;
        probe.set_flat(&p).unwrap();
        let down = scalar_loss(&probe, &x, &w);
        let fd = (up - down) / (2.0 * h);
        let err = (fd - analytic[i]).abs() / analytic[i].abs().max(1.0);
        assert!(err < 1e-6, "param {i}: fd {fd:e} vs {:e}", analytic[i]);
    }
}

#[test]
fn stale_cache_is_rejected() {
    let mut net = Network::square(4, 2, 0).unwrap();
    let (_, cache) = net.forward(&DVector::from_element(4, 0.5)).unwrap();
    let flat = net.to_flat();
    net.set_flat(&flat).unwrap();
    assert!(net.backward(&cache, &DMatrix::zeros(4, 1)).is_err());
}

#[test]
fn residual_losses_reduce_to_mse() {
    let ds = small_dataset(4);
    let system = ds.system();
    let norm = NormalizationSpec::from_dataset(&ds);
    let u = &ds.displacements[0];
    let f = &ds.forces[0];
    let target = norm.target(u);
    let output = target.map(|z| z + 0.1);
    let ctx = ResidualContext { system: &system, norm: &norm, residual_scale: ds.residual_scale };
    let (m, g) = mse(&output, &target).unwrap();
    let (lm, gm, rho) = loss_residual_mul(&output, &target, f, &ctx).unwrap();
    let (la, ga, rho_a) = loss_residual_add(&output, &target, f, &ctx).unwrap();
    assert_eq!(rho, rho_a);
    assert!(rho > 0.0);
    assert_eq!(lm, m * rho);
    assert_eq!(gm, &g * rho);
    assert_eq!(la, m + rho);
    assert_eq!(ga, g);

    let exact = loss_residual_mul(&target, &target, f, &ctx).unwrap();
    assert_eq!(exact.0, 0.0);
    assert!(exact.2 < 1e-5, "rho at the stored solution {:e}", exact.2);
}

#[test]
fn one_sample_is_memorized() {
    let ds = small_dataset(1);
    let config = TrainConfig {
        loss: LossKind::Mse,
        epochs: 3000,
        batch_size: 1,
        validation_fraction: 0.0,
        adam: AdamConfig { lr: 1e-3, ..AdamConfig::default() },
        schedule: LrSchedule::Cosine { final_lr: 1e-6 },
        ..TrainConfig::default()
    };
    let out = train(&ds, &config).unwrap();
    let best = &out.history[out.best_epoch - 1];
    assert!(best.val_mse < 1e-10, "mse {:e}", best.val_mse);
    let model = Surrogate::for_dataset(out.network, &ds, Some(config)).unwrap();
    let err = (model.predict(&ds.forces[0]).unwrap() - &ds.displacements[0]).amax();
    assert!(err < 1e-4 * ds.length.get(), "{err:e}");
}

#[test]
fn training_is_reproducible_across_thread_counts() {
    let ds = small_dataset(12);
    let config = TrainConfig {
        epochs: 5,
        batch_size: 4,
        validation_fraction: 0.25,
        seed: 5,
        ..TrainConfig::default()
    };
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| train(&ds, &config).unwrap())
    };
    let a = run(1);
    let b = run(4);
    assert_eq!(a.network.to_flat(), b.network.to_flat());
    assert_eq!(a.train_indices, b.train_indices);
    assert_eq!(a.val_indices, b.val_indices);
    for (x, y) in a.history.iter().zip(&b.history) {
        assert_eq!((x.train_loss, x.val_loss, x.mean_rho), (y.train_loss, y.val_loss, y.mean_rho));
    }
}

#[test]
fn batching_does_not_change_sample_losses() {
    let ds = small_dataset(10);
    let indices: Vec<usize> = (0..10).collect();
    for loss in [LossKind::Mse, LossKind::ResidualAdd, LossKind::ResidualMul] {
        let single = TrainConfig { loss, batch_size: 1, ..TrainConfig::default() };
        let batched = TrainConfig { loss, batch_size: 32, ..TrainConfig::default() };
        let a = initial_sample_losses(&ds, &single, &indices).unwrap();
        let b = initial_sample_losses(&ds, &batched, &indices).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1e-300), "{loss:?}: {x:e} vs {y:e}");
        }
    }
}

#[test]
fn zero_learning_rate_keeps_initial_parameters() {
    let ds = small_dataset(6);
    let config = TrainConfig {
        epochs: 3,
        batch_size: 2,
        adam: AdamConfig { lr: 0.0, ..AdamConfig::default() },
        ..TrainConfig::default()
    };
    let out = train(&ds, &config).unwrap();
    let init = Network::square(ds.num_dofs(), config.hidden_layers, config.seed).unwrap();
    assert_eq!(out.network.to_flat(), init.to_flat());
}

#[test]
fn invalid_configs_are_rejected() {
    let ds = small_dataset(2);
    let bad = [
        TrainConfig { batch_size: 0, ..TrainConfig::default() },
        TrainConfig { validation_fraction: 1.0, ..TrainConfig::default() },
        TrainConfig { adam: AdamConfig { beta1: 1.0, ..AdamConfig::default() }, ..TrainConfig::default() },
    ];
    for c in bad {
        assert!(train(&ds, &c).is_err(), "{c:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn square_parameter_count(n in 1usize..40) {
        let net = Network::square(n, DEFAULT_HIDDEN_LAYERS, 0).unwrap();
        prop_assert_eq!(net.num_params(), 4 * n * n + 7 * n);
        prop_assert_eq!(net.to_flat().len(), net.num_params());
    }

    #[test]
    fn prelu_is_positively_homogeneous(x in -1e3f64..1e3, a in -2.0f64..2.0, s in 0.0f64..100.0) {
        let lhs = prelu(s * x, a);
        let rhs = s * prelu(x, a);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1e-300));
    }

    #[test]
    fn bias_free_network_is_positively_homogeneous(seed in 0u64..1000, s in 0.01f64..50.0) {
        // zero biases are the He-init default
        let net = Network::square(5, 3, seed).unwrap();
        let x = DVector::from_fn(5, |i, _| (seed as f64 + i as f64).sin());
        let lhs = net.eval(&(&x * s)).unwrap();
        let rhs = net.eval(&x).unwrap() * s;
        prop_assert!((lhs - &rhs).amax() <= 1e-12 * rhs.amax().max(1e-12));
    }

    #[test]
    fn adam_first_step_moves_by_lr(g in prop::collection::vec(-1e3f64..1e3, 1..8), lr in 1e-6f64..1e-1) {
        let config = AdamConfig { lr, ..AdamConfig::default() };
        let mut p = vec![0.0; g.len()];
        let mut state = AdamState::new(config, &[g.len()]);
        adam_step(&mut [p.as_mut_slice()], &[g.as_slice()], &mut state).unwrap();
        for (pi, gi) in p.iter().zip(&g) {
            let expected = -lr * gi / (gi.abs() + config.eps);
            prop_assert!((pi - expected).abs() <= 1e-12 * lr);
        }
    }
}
