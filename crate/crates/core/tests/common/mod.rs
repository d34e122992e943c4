#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, SMatrix, Vector3};
use rand::Rng;
use surrogate_core::fem::FemSystem;
use surrogate_core::material::{Material, MaterialModel};
use surrogate_core::mesh::{generate_beam_mesh, tet_signed_volume, BeamSpec, Mesh};

pub fn stvk() -> Material {
    Material::new(MaterialModel::StVenantKirchhoff, 1e6, 0.3).unwrap()
}

pub fn neo() -> Material {
    Material::new(MaterialModel::NeoHookean, 1e6, 0.3).unwrap()
}

pub fn beam(nx: usize, ny: usize, nz: usize, material: Material) -> FemSystem {
    let mesh = generate_beam_mesh(BeamSpec {
        nx,
        ny,
        nz,
        ..BeamSpec::default()
    })
    .unwrap();
    FemSystem::new(mesh, material)
}

fn oriented(nodes: &[Vector3<f64>], mut t: [usize; 4]) -> [usize; 4] {
    if tet_signed_volume(t.map(|i| nodes[i])) < 0.0 {
        t.swap(2, 3);
    }
    t
}

/// A fan of `count` (1..=4) jittered tets, each glued to a face of the
/// previous one. Node 0 is fixed.
pub fn random_small_mesh<R: Rng>(rng: &mut R, count: usize, scale: f64) -> Mesh {
    let mut jitter = |p: [f64; 3]| {
        Vector3::new(
            scale * (p[0] + rng.random_range(-0.15..0.15)),
            scale * (p[1] + rng.random_range(-0.15..0.15)),
            scale * (p[2] + rng.random_range(-0.15..0.15)),
        )
    };
    let mut nodes = vec![
        jitter([0.0, 0.0, 0.0]),
        jitter([1.0, 0.0, 0.0]),
        jitter([0.0, 1.0, 0.0]),
        jitter([0.0, 0.0, 1.0]),
    ];
    let mut tets = vec![oriented(&nodes, [0, 1, 2, 3])];
    // apexes beyond faces (1,2,3), (0,2,4), (0,1,4)
    let extra = [([1, 2, 3], [0.8, 0.8, 0.8]), ([0, 2, 4], [-0.2, 0.8, 0.9]), ([0, 1, 4], [0.8, -0.3, 0.9])];
    for (face, apex) in extra.iter().take(count.saturating_sub(1)) {
        nodes.push(jitter(*apex));
        let new = nodes.len() - 1;
        tets.push(oriented(&nodes, [face[0], face[1], face[2], new]));
    }
    Mesh::new(nodes, tets, vec![0]).unwrap()
}

/// `‖a − b‖∞ / ‖b‖∞` with a floor on the denominator.
pub fn rel_err_vec(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax() / b.amax().max(1e-300)
}

pub fn rel_err_mat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / b.amax().max(1e-300)
}

/// Central-difference gradient of the total energy.
pub fn fd_energy_gradient(system: &FemSystem, u: &DVector<f64>, h: f64) -> DVector<f64> {
    DVector::from_fn(u.len(), |i, _| {
        let (mut up, mut um) = (u.clone(), u.clone());
        up[i] += h;
        um[i] -= h;
        (system.total_energy(&up).unwrap() - system.total_energy(&um).unwrap()) / (2.0 * h)
    })
}

/// Central-difference Jacobian of the internal forces.
pub fn fd_force_jacobian(system: &FemSystem, u: &DVector<f64>, h: f64) -> DMatrix<f64> {
    let n = u.len();
    let mut j = DMatrix::zeros(n, n);
    for i in 0..n {
        let (mut up, mut um) = (u.clone(), u.clone());
        up[i] += h;
        um[i] -= h;
        let col = (system.internal_forces(&up).unwrap() - system.internal_forces(&um).unwrap()) / (2.0 * h);
        j.set_column(i, &col);
    }
    j
}

/// Small-strain stiffness `Σ V Bᵀ C B` in Voigt notation, assembled from
/// scratch for comparison with the rest-state tangent.
pub fn linear_elastic_stiffness(mesh: &Mesh, lambda: f64, mu: f64) -> DMatrix<f64> {
    let mut c = SMatrix::<f64, 6, 6>::zeros();
    for i in 0..3 {
        for j in 0..3 {
            c[(i, j)] = lambda;
        }
        c[(i, i)] += 2.0 * mu;
        c[(i + 3, i + 3)] = mu;
    }
    let n = mesh.num_dofs();
    let mut k = DMatrix::zeros(n, n);
    for tet in mesh.tets() {
        let x = tet.map(|i| mesh.nodes()[i]);
        // shape functions N_a = a_0 + a·x solved from the vertex interpolation matrix
        let mut m = nalgebra::Matrix4::zeros();
        for a in 0..4 {
            m[(a, 0)] = 1.0;
            for d in 0..3 {
                m[(a, d + 1)] = x[a][d];
            }
        }
        let inv = m.try_inverse().unwrap();
        let vol = tet_signed_volume(x);
        let mut b = SMatrix::<f64, 6, 12>::zeros();
        for a in 0..4 {
            let g = [inv[(1, a)], inv[(2, a)], inv[(3, a)]];
            b[(0, 3 * a)] = g[0];
            b[(1, 3 * a + 1)] = g[1];
            b[(2, 3 * a + 2)] = g[2];
            // engineering shear strains yz, xz, xy
            b[(3, 3 * a + 1)] = g[2];
            b[(3, 3 * a + 2)] = g[1];
            b[(4, 3 * a)] = g[2];
            b[(4, 3 * a + 2)] = g[0];
            b[(5, 3 * a)] = g[1];
            b[(5, 3 * a + 1)] = g[0];
        }
        let ke = b.transpose() * c * b * vol;
        for a in 0..4 {
            for bb in 0..4 {
                for i in 0..3 {
                    for j in 0..3 {
                        k[(3 * tet[a] + i, 3 * tet[bb] + j)] += ke[(3 * a + i, 3 * bb + j)];
                    }
                }
            }
        }
    }
    k
}

/// Observed convergence order from the last three residuals.
pub fn convergence_order(history: &[f64]) -> f64 {
    let n = history.len();
    assert!(n >= 3, "need three residuals, got {history:?}");
    let (a, b, c) = (history[n - 3].ln(), history[n - 2].ln(), history[n - 1].ln());
    (c - b) / (b - a)
}
