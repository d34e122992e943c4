//! Finite-element assembly on linear tetrahedra with one-point quadrature:
//! total strain energy, internal forces `f^i(u)`, tangent stiffness `K(u)`,
//! residual `R(u) = f^i(u) − f^e`, and the Dirichlet reduction.

use nalgebra::{DMatrix, DVector, Matrix3, SMatrix, Vector3};
use nalgebra_sparse::{CooMatrix, CsrMatrix};

use crate::error::{check_len, Error, Result};
use crate::material::Material;
use crate::mesh::{edge_matrix, Mesh};

/// Rest-state quantities of one tet: volume and shape-function gradients.
#[derive(Debug, Clone)]
struct Element {
    nodes: [usize; 4],
    volume: f64,
    grads: [Vector3<f64>; 4],
}

impl Element {
    fn new(mesh: &Mesh, nodes: [usize; 4]) -> Self {
        let dm = edge_matrix(nodes.map(|i| mesh.nodes()[i]));
        let volume = dm.determinant() / 6.0;
        // mesh construction guarantees a positive volume, hence invertible
        let inv = dm.try_inverse().expect("validated tet is invertible");
        let g1 = inv.row(0).transpose();
        let g2 = inv.row(1).transpose();
        let g3 = inv.row(2).transpose();
        Self {
            nodes,
            volume,
            grads: [-(g1 + g2 + g3), g1, g2, g3],
        }
    }

    fn deformation_gradient(&self, u: &DVector<f64>) -> Matrix3<f64> {
        let mut f = Matrix3::identity();
        for (a, &n) in self.nodes.iter().enumerate() {
            let ua = Vector3::new(u[3 * n], u[3 * n + 1], u[3 * n + 2]);
            f += ua * self.grads[a].transpose();
        }
        f
    }
}

/// Sparse symmetric stiffness matrix in CSR form.
#[derive(Debug, Clone, PartialEq)]
pub struct StiffnessMatrix(CsrMatrix<f64>);

impl StiffnessMatrix {
    pub fn csr(&self) -> &CsrMatrix<f64> {
        &self.0
    }

    pub fn into_csr(self) -> CsrMatrix<f64> {
        self.0
    }

    pub fn nrows(&self) -> usize {
        self.0.nrows()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.0.nrows(), self.0.ncols());
        for (i, j, v) in self.0.triplet_iter() {
            out[(i, j)] += *v;
        }
        out
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut y = DVector::zeros(self.0.nrows());
        for (i, row) in self.0.row_iter().enumerate() {
            let mut acc = 0.0;
            for (&j, &v) in row.col_indices().iter().zip(row.values()) {
                acc += v * x[j];
            }
            y[i] = acc;
        }
        y
    }

    /// Largest absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        self.0
            .row_iter()
            .map(|r| r.values().iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// `‖K − Kᵀ‖∞`.
    pub fn asymmetry_inf(&self) -> f64 {
        let d = self.to_dense();
        let diff = &d - d.transpose();
        diff.row_iter()
            .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

impl From<CsrMatrix<f64>> for StiffnessMatrix {
    fn from(m: CsrMatrix<f64>) -> Self {
        Self(m)
    }
}

/// Mesh + material + Dirichlet reduction map.
#[derive(Debug, Clone)]
pub struct FemSystem {
    mesh: Mesh,
    material: Material,
    elements: Vec<Element>,
    free_dofs: Vec<usize>,
    full_to_free: Vec<Option<usize>>,
}

impl FemSystem {
    pub fn new(mesh: Mesh, material: Material) -> Self {
        let elements = mesh.tets().iter().map(|&t| Element::new(&mesh, t)).collect();
        let n = mesh.num_dofs();
        let mut free_dofs = Vec::with_capacity(n);
        let mut full_to_free = vec![None; n];
        for node in 0..mesh.num_nodes() {
            if mesh.is_fixed(node) {
                continue;
            }
            for c in 0..3 {
                full_to_free[3 * node + c] = Some(free_dofs.len());
                free_dofs.push(3 * node + c);
            }
        }
        Self {
            mesh,
            material,
            elements,
            free_dofs,
            full_to_free,
        }
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn material(&self) -> &Material {
        &self.material
    }

    pub fn num_dofs(&self) -> usize {
        self.mesh.num_dofs()
    }

    pub fn num_free(&self) -> usize {
        self.free_dofs.len()
    }

    /// Full dof indices of the free dofs, in reduced order.
    pub fn free_dofs(&self) -> &[usize] {
        &self.free_dofs
    }

    pub fn is_free_dof(&self, dof: usize) -> bool {
        self.full_to_free[dof].is_some()
    }

    fn element_gradients(&self, u: &DVector<f64>) -> Result<Vec<Matrix3<f64>>> {
        check_len(self.num_dofs(), u.len())?;
        Ok(self.elements.iter().map(|e| e.deformation_gradient(u)).collect())
    }

    fn element_error(&self, id: usize, f: &Matrix3<f64>, err: Error) -> Error {
        match err {
            Error::NonPositiveJacobian(_) => Error::ElementInverted {
                element: id,
                det: f.determinant(),
            },
            other => other,
        }
    }

    /// `Σ_e vol_e · Ψ(F_e)`.
    pub fn total_energy(&self, u: &DVector<f64>) -> Result<f64> {
        let fs = self.element_gradients(u)?;
        let mut energy = 0.0;
        for (id, (e, f)) in self.elements.iter().zip(&fs).enumerate() {
            let psi = self
                .material
                .strain_energy_density(f)
                .map_err(|err| self.element_error(id, f, err))?;
            energy += e.volume * psi;
        }
        Ok(energy)
    }

    /// Nodal internal forces, the gradient of the total strain energy.
    pub fn internal_forces(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        let fs = self.element_gradients(u)?;
        let mut out = DVector::zeros(self.num_dofs());
        for (id, (e, f)) in self.elements.iter().zip(&fs).enumerate() {
            let p = self
                .material
                .first_piola(f)
                .map_err(|err| self.element_error(id, f, err))?;
            for (a, &n) in e.nodes.iter().enumerate() {
                let fa = p * e.grads[a] * e.volume;
                for c in 0..3 {
                    out[3 * n + c] += fa[c];
                }
            }
        }
        Ok(out)
    }

    /// Sparse `∂f^i/∂u` over all dofs (fixed dofs included).
    pub fn tangent_stiffness(&self, u: &DVector<f64>) -> Result<StiffnessMatrix> {
        let fs = self.element_gradients(u)?;
        let n = self.num_dofs();
        let mut coo = CooMatrix::new(n, n);
        for (id, (e, f)) in self.elements.iter().zip(&fs).enumerate() {
            let dp = self
                .material
                .stress_derivative(f)
                .map_err(|err| self.element_error(id, f, err))?;
            let ke = element_stiffness(e, &dp);
            for (a, &na) in e.nodes.iter().enumerate() {
                for (b, &nb) in e.nodes.iter().enumerate() {
                    for i in 0..3 {
                        for k in 0..3 {
                            coo.push(3 * na + i, 3 * nb + k, ke[(3 * a + i, 3 * b + k)]);
                        }
                    }
                }
            }
        }
        Ok(StiffnessMatrix(CsrMatrix::from(&coo)))
    }

    /// `f^i(u) − f^e` with the fixed-dof (reaction) entries zeroed.
    pub fn residual(&self, u: &DVector<f64>, f_ext: &DVector<f64>) -> Result<DVector<f64>> {
        check_len(self.num_dofs(), f_ext.len())?;
        let mut r = self.internal_forces(u)? - f_ext;
        self.zero_fixed(&mut r);
        Ok(r)
    }

    pub fn zero_fixed(&self, v: &mut DVector<f64>) {
        for (dof, slot) in self.full_to_free.iter().enumerate() {
            if slot.is_none() {
                v[dof] = 0.0;
            }
        }
    }

    pub fn reduce_vector(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_len(self.num_dofs(), v.len())?;
        Ok(DVector::from_iterator(
            self.num_free(),
            self.free_dofs.iter().map(|&d| v[d]),
        ))
    }

    /// Scatters a reduced vector back to full size with zeros at fixed dofs.
    pub fn expand(&self, reduced: &DVector<f64>) -> Result<DVector<f64>> {
        check_len(self.num_free(), reduced.len())?;
        let mut out = DVector::zeros(self.num_dofs());
        for (r, &d) in self.free_dofs.iter().enumerate() {
            out[d] = reduced[r];
        }
        Ok(out)
    }

    pub fn reduce_matrix(&self, k: &StiffnessMatrix) -> Result<StiffnessMatrix> {
        check_len(self.num_dofs(), k.nrows())?;
        let nf = self.num_free();
        let mut coo = CooMatrix::new(nf, nf);
        for (i, j, v) in k.0.triplet_iter() {
            if let (Some(ri), Some(rj)) = (self.full_to_free[i], self.full_to_free[j]) {
                coo.push(ri, rj, *v);
            }
        }
        Ok(StiffnessMatrix(CsrMatrix::from(&coo)))
    }

    /// Reduced tangent stiffness at `u`.
    pub fn reduced_tangent(&self, u: &DVector<f64>) -> Result<StiffnessMatrix> {
        self.reduce_matrix(&self.tangent_stiffness(u)?)
    }
}

/// `K_ab[i,k] = vol · Σ_jl A[(i,j),(k,l)] g_a[j] g_b[l]`.
fn element_stiffness(e: &Element, dp: &SMatrix<f64, 9, 9>) -> SMatrix<f64, 12, 12> {
    let mut ke = SMatrix::<f64, 12, 12>::zeros();
    for a in 0..4 {
        for b in 0..4 {
            let (ga, gb) = (&e.grads[a], &e.grads[b]);
            for i in 0..3 {
                for k in 0..3 {
                    let mut acc = 0.0;
                    for j in 0..3 {
                        for l in 0..3 {
                            acc += dp[(3 * i + j, 3 * k + l)] * ga[j] * gb[l];
                        }
                    }
                    ke[(3 * a + i, 3 * b + k)] = acc * e.volume;
                }
            }
        }
    }
    ke
}
