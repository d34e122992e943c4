//! Linear tetrahedral meshes: construction, validation, geometric queries and
//! the JSON mesh file format.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MESH_FILE_VERSION: u32 = 1;

/// Longest side of the rest mesh's axis-aligned bounding box, in meters.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CharacteristicLength(f64);

impl CharacteristicLength {
    pub fn new(value: f64) -> Result<Self> {
        if !(value.is_finite() && value > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "characteristic length must be positive, got {value}"
            )));
        }
        Ok(Self(value))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// Tetrahedral mesh with homogeneous Dirichlet (clamped) nodes.
///
/// Surface nodes are derived from the connectivity and never stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    nodes: Vec<Vector3<f64>>,
    tets: Vec<[usize; 4]>,
    fixed_nodes: Vec<usize>,
    surface_nodes: Vec<usize>,
}

/// Signed volume of a tetrahedron (positive for the mesh's orientation).
pub fn tet_signed_volume(p: [Vector3<f64>; 4]) -> f64 {
    edge_matrix(p).determinant() / 6.0
}

pub(crate) fn edge_matrix(p: [Vector3<f64>; 4]) -> Matrix3<f64> {
    Matrix3::from_columns(&[p[1] - p[0], p[2] - p[0], p[3] - p[0]])
}

impl Mesh {
    /// Validates connectivity and orientation, then derives the surface nodes.
    pub fn new(nodes: Vec<Vector3<f64>>, tets: Vec<[usize; 4]>, fixed_nodes: Vec<usize>) -> Result<Self> {
        let m = nodes.len();
        if m == 0 {
            return Err(Error::InvalidMesh("mesh has no nodes".into()));
        }
        if let Some(p) = nodes.iter().position(|x| !x.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidMesh(format!("node {p} has non-finite coordinates")));
        }
        for (e, tet) in tets.iter().enumerate() {
            if let Some(&bad) = tet.iter().find(|&&i| i >= m) {
                return Err(Error::InvalidMesh(format!(
                    "tet {e} references node {bad} but the mesh has {m} nodes"
                )));
            }
            for a in 0..4 {
                for b in (a + 1)..4 {
                    if tet[a] == tet[b] {
                        return Err(Error::InvalidMesh(format!("tet {e} repeats node {}", tet[a])));
                    }
                }
            }
            let vol = tet_signed_volume(tet.map(|i| nodes[i]));
            if !(vol > 0.0) {
                return Err(Error::InvalidMesh(format!(
                    "tet {e} has non-positive signed volume {vol:e}"
                )));
            }
        }
        let mut fixed_nodes = fixed_nodes;
        fixed_nodes.sort_unstable();
        fixed_nodes.dedup();
        if let Some(&bad) = fixed_nodes.iter().find(|&&i| i >= m) {
            return Err(Error::InvalidMesh(format!("fixed node {bad} out of range (M = {m})")));
        }
        let surface_nodes = boundary_nodes(&tets);
        Ok(Self {
            nodes,
            tets,
            fixed_nodes,
            surface_nodes,
        })
    }

    pub fn nodes(&self) -> &[Vector3<f64>] {
        &self.nodes
    }

    pub fn tets(&self) -> &[[usize; 4]] {
        &self.tets
    }

    pub fn fixed_nodes(&self) -> &[usize] {
        &self.fixed_nodes
    }

    pub fn surface_nodes(&self) -> &[usize] {
        &self.surface_nodes
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_dofs(&self) -> usize {
        3 * self.nodes.len()
    }

    pub fn is_fixed(&self, node: usize) -> bool {
        self.fixed_nodes.binary_search(&node).is_ok()
    }

    pub fn is_surface(&self, node: usize) -> bool {
        self.surface_nodes.binary_search(&node).is_ok()
    }

    /// True when every connected component of the node graph contains at
    /// least one fixed node, i.e. the reduced rest stiffness is nonsingular.
    pub fn is_constrained(&self) -> bool {
        let m = self.nodes.len();
        let mut parent: Vec<usize> = (0..m).collect();
        fn find(parent: &mut [usize], mut i: usize) -> usize {
            while parent[i] != i {
                parent[i] = parent[parent[i]];
                i = parent[i];
            }
            i
        }
        for tet in &self.tets {
            for &other in &tet[1..] {
                let (a, b) = (find(&mut parent, tet[0]), find(&mut parent, other));
                if a != b {
                    parent[a] = b;
                }
            }
        }
        let mut anchored = vec![false; m];
        for &f in &self.fixed_nodes {
            let r = find(&mut parent, f);
            anchored[r] = true;
        }
        (0..m).all(|i| {
            let r = find(&mut parent, i);
            anchored[r]
        })
    }

    /// Smallest edge length over all tets.
    pub fn min_edge_length(&self) -> f64 {
        let mut min = f64::INFINITY;
        for tet in &self.tets {
            for a in 0..4 {
                for b in (a + 1)..4 {
                    min = min.min((self.nodes[tet[a]] - self.nodes[tet[b]]).norm());
                }
            }
        }
        min
    }

    pub fn to_json(&self) -> Result<String> {
        let file = MeshFile {
            version: MESH_FILE_VERSION,
            nodes: self.nodes.iter().map(|p| [p.x, p.y, p.z]).collect(),
            tets: self.tets.clone(),
            fixed_nodes: self.fixed_nodes.clone(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: MeshFile = serde_json::from_str(text)?;
        if file.version != MESH_FILE_VERSION {
            return Err(Error::InvalidMesh(format!(
                "unsupported mesh file version {}",
                file.version
            )));
        }
        let nodes = file.nodes.into_iter().map(Vector3::from).collect();
        Mesh::new(nodes, file.tets, file.fixed_nodes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Json(j) => Error::Format {
                path: path.display().to_string(),
                reason: j.to_string(),
            },
            other => other,
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MeshFile {
    nodes: Vec<[f64; 3]>,
    tets: Vec<[usize; 4]>,
    fixed_nodes: Vec<usize>,
    version: u32,
}

/// Union of the vertices of faces that belong to exactly one tet.
fn boundary_nodes(tets: &[[usize; 4]]) -> Vec<usize> {
    let mut faces: HashMap<[usize; 3], u32> = HashMap::new();
    for tet in tets {
        for skip in 0..4 {
            let mut face = [0usize; 3];
            let mut j = 0;
            for (i, &n) in tet.iter().enumerate() {
                if i != skip {
                    face[j] = n;
                    j += 1;
                }
            }
            face.sort_unstable();
            *faces.entry(face).or_insert(0) += 1;
        }
    }
    let mut nodes: Vec<usize> = faces
        .into_iter()
        .filter(|&(_, count)| count == 1)
        .flat_map(|(face, _)| face)
        .collect();
    nodes.sort_unstable();
    nodes.dedup();
    nodes
}

/// Parameters of the clamped cantilever beam generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeamSpec {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub size: [f64; 3],
}

impl Default for BeamSpec {
    fn default() -> Self {
        Self {
            nx: 10,
            ny: 2,
            nz: 2,
            size: [2.0, 0.2, 0.2],
        }
    }
}

// Kuhn split of the unit cube along the 0 -> 7 diagonal. Local vertex ids are
// bit masks (1 = +x, 2 = +y, 4 = +z); each tet walks one axis at a time, and
// odd axis permutations have their middle vertices swapped so that every tet
// is positively oriented.
const CELL_TETS: [[usize; 4]; 6] = [
    [0, 1, 3, 7], // x, y, z
    [0, 2, 6, 7], // y, z, x
    [0, 4, 5, 7], // z, x, y
    [0, 3, 2, 7], // y, x, z (odd, swapped)
    [0, 6, 4, 7], // z, y, x (odd, swapped)
    [0, 5, 1, 7], // x, z, y (odd, swapped)
];

/// Regular `nx × ny × nz` hex grid over `[0, size]`, each cell split into six
/// tets. Nodes on the `x = 0` face are clamped.
pub fn generate_beam_mesh(spec: BeamSpec) -> Result<Mesh> {
    let BeamSpec { nx, ny, nz, size } = spec;
    if nx == 0 || ny == 0 || nz == 0 {
        return Err(Error::InvalidArgument(format!(
            "beam subdivisions must be at least 1, got ({nx}, {ny}, {nz})"
        )));
    }
    if !size.iter().all(|s| s.is_finite() && *s > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "beam sizes must be positive, got {size:?}"
        )));
    }
    let index = |i: usize, j: usize, k: usize| i + (nx + 1) * (j + (ny + 1) * k);
    let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1) * (nz + 1));
    let mut fixed = Vec::new();
    for k in 0..=nz {
        for j in 0..=ny {
            for i in 0..=nx {
                nodes.push(Vector3::new(
                    size[0] * (i as f64 / nx as f64),
                    size[1] * (j as f64 / ny as f64),
                    size[2] * (k as f64 / nz as f64),
                ));
                if i == 0 {
                    fixed.push(index(i, j, k));
                }
            }
        }
    }
    let mut tets = Vec::with_capacity(6 * nx * ny * nz);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let corner = |bits: usize| index(i + (bits & 1), j + ((bits >> 1) & 1), k + ((bits >> 2) & 1));
                for local in CELL_TETS {
                    tets.push(local.map(corner));
                }
            }
        }
    }
    Mesh::new(nodes, tets, fixed)
}

/// Longest side of the axis-aligned bounding box of the rest positions.
pub fn bounding_box_length(mesh: &Mesh) -> Result<CharacteristicLength> {
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for p in mesh.nodes() {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let extent = (hi - lo).max();
    if !(extent > 0.0) {
        return Err(Error::InvalidMesh("mesh bounding box has zero extent".into()));
    }
    CharacteristicLength::new(extent)
}
