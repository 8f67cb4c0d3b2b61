//! P1 finite elements on the unit square with homogeneous Dirichlet data.

pub mod field;
pub mod mesh;
pub mod quadrature;

pub use field::{sample_field, sample_fields, FieldDistribution, RandomField};
pub use mesh::{structured_mesh, TriMesh};

use std::f64::consts::PI;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::{factorize_spd, SparseMatrix};

pub type Local3 = [[f64; 3]; 3];

/// `area · G Gᵀ`, where row `i` of `G` is `∇φ_i` on the element.
pub fn element_stiffness(p: &[[f64; 2]; 3]) -> Option<Local3> {
    let area = mesh::signed_area(p);
    if area.abs() <= f64::EPSILON * 1e-3 {
        return None;
    }
    let mut grad = [[0.0; 2]; 3];
    for i in 0..3 {
        let j = (i + 1) % 3;
        let k = (i + 2) % 3;
        grad[i] = [
            (p[j][1] - p[k][1]) / (2.0 * area),
            (p[k][0] - p[j][0]) / (2.0 * area),
        ];
    }
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = area.abs() * (grad[i][0] * grad[j][0] + grad[i][1] * grad[j][1]);
        }
    }
    Some(out)
}

/// Exact P1 mass matrix `area/12 · [[2,1,1],[1,2,1],[1,1,2]]`.
pub fn element_mass(area: f64) -> Local3 {
    let d = area / 6.0;
    let o = area / 12.0;
    [[d, o, o], [o, d, o], [o, o, d]]
}

fn element_stiffnesses(mesh: &TriMesh) -> Result<Vec<Local3>> {
    (0..mesh.num_elements())
        .map(|e| element_stiffness(&mesh.vertices(e)).ok_or(Error::DegenerateElement(e)))
        .collect()
}

fn assemble_scaled(mesh: &TriMesh, local: &[Local3], coeff: &[f64]) -> SparseMatrix {
    let n = mesh.num_nodes();
    let mut triplets = Vec::with_capacity(9 * mesh.num_elements());
    for (e, tri) in mesh.elements.iter().enumerate() {
        let c = coeff[e];
        for a in 0..3 {
            for b in 0..3 {
                triplets.push((tri[a], tri[b], c * local[e][a][b]));
            }
        }
    }
    SparseMatrix::from_triplets(n, n, &triplets).expect("mesh indices in range")
}

/// Stiffness matrix `∫ c ∇φ_j·∇φ_i` for an elementwise-constant coefficient, no boundary treatment.
pub fn stiffness_matrix(mesh: &TriMesh, coeff: &[f64]) -> Result<SparseMatrix> {
    if coeff.len() != mesh.num_elements() {
        return Err(Error::DimensionMismatch(format!(
            "{} coefficients for {} elements",
            coeff.len(),
            mesh.num_elements()
        )));
    }
    Ok(assemble_scaled(mesh, &element_stiffnesses(mesh)?, coeff))
}

/// Mass matrix `∫ φ_j φ_i`.
pub fn mass_matrix(mesh: &TriMesh) -> Result<SparseMatrix> {
    let n = mesh.num_nodes();
    let mut triplets = Vec::with_capacity(9 * mesh.num_elements());
    for (e, tri) in mesh.elements.iter().enumerate() {
        let area = mesh.signed_area(e);
        if area <= 0.0 {
            return Err(Error::DegenerateElement(e));
        }
        let local = element_mass(area);
        for a in 0..3 {
            for b in 0..3 {
                triplets.push((tri[a], tri[b], local[a][b]));
            }
        }
    }
    SparseMatrix::from_triplets(n, n, &triplets)
}

/// Sets boundary entries of `v` to zero.
pub fn zero_boundary(mesh: &TriMesh, v: &mut DVector<f64>) {
    for (i, &b) in mesh.boundary.iter().enumerate() {
        if b {
            v[i] = 0.0;
        }
    }
}

/// Nodal interpolant of `g`.
pub fn interpolate<F: Fn(f64, f64) -> f64>(mesh: &TriMesh, g: F) -> DVector<f64> {
    DVector::from_iterator(mesh.num_nodes(), mesh.nodes.iter().map(|p| g(p[0], p[1])))
}

/// Load `Φ f_I` with boundary entries zeroed.
pub fn load_vector<F: Fn(f64, f64) -> f64>(mesh: &TriMesh, phi: &SparseMatrix, f: F) -> DVector<f64> {
    let mut b = phi.mul_vec(&interpolate(mesh, f));
    zero_boundary(mesh, &mut b);
    b
}

/// Matrices of the perturbed ensemble for one mesh and a set of field samples.
#[derive(Debug, Clone)]
pub struct AssembledSystem {
    /// Stiffness of the mean coefficient `ā ≡ 1`, boundary rows/cols eliminated with unit diagonal.
    pub abar: SparseMatrix,
    /// Perturbation stiffness per sample, boundary rows/cols zeroed.
    pub atilde: Vec<SparseMatrix>,
    pub phi: SparseMatrix,
    pub load: DVector<f64>,
    pub boundary: Vec<bool>,
    /// `min_e (1 + ε σ_e)` per sample.
    pub min_coefficient: Vec<f64>,
}

impl AssembledSystem {
    pub fn n(&self) -> usize {
        self.load.len()
    }

    pub fn num_interior(&self) -> usize {
        self.boundary.iter().filter(|&&b| !b).count()
    }
}

/// Assembles `Ā`, every `Ã_m`, `Φ` and the load for source `f`.
pub fn assemble<F>(mesh: &TriMesh, fields: &[RandomField], f: F) -> Result<AssembledSystem>
where
    F: Fn(f64, f64) -> f64,
{
    let ne = mesh.num_elements();
    for fld in fields {
        if fld.values.len() != ne {
            return Err(Error::DimensionMismatch(format!(
                "field sample {} has {} values for {ne} elements",
                fld.sample,
                fld.values.len()
            )));
        }
    }
    let local = element_stiffnesses(mesh)?;
    let abar = assemble_scaled(mesh, &local, &vec![1.0; ne]).eliminate_rows_cols(&mesh.boundary, true);
    let atilde: Vec<SparseMatrix> = fields
        .par_iter()
        .map(|fld| {
            assemble_scaled(mesh, &local, &fld.coefficients()).eliminate_rows_cols(&mesh.boundary, false)
        })
        .collect();
    let min_coefficient = fields
        .iter()
        .map(|fld| {
            fld.coefficients()
                .iter()
                .map(|c| 1.0 + c)
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let phi = mass_matrix(mesh)?;
    let load = load_vector(mesh, &phi, f);
    Ok(AssembledSystem {
        abar,
        atilde,
        phi,
        load,
        boundary: mesh.boundary.clone(),
        min_coefficient,
    })
}

/// Manufactured solution `sin(πx) sin(πy)` of `−Δu = 2π² sin(πx) sin(πy)`.
pub fn manufactured_exact(x: f64, y: f64) -> f64 {
    (PI * x).sin() * (PI * y).sin()
}

pub fn manufactured_source(x: f64, y: f64) -> f64 {
    2.0 * PI * PI * manufactured_exact(x, y)
}

/// Deterministic FEM solution with `a ≡ 1` for source `f`.
pub fn solve_deterministic<F: Fn(f64, f64) -> f64>(mesh: &TriMesh, f: F) -> Result<DVector<f64>> {
    let sys = assemble(mesh, &[], f)?;
    Ok(factorize_spd(&sys.abar)?.solve(&sys.load))
}

/// `(h, ‖u_h − u‖_{L²})` for the manufactured problem on each mesh size.
pub fn manufactured_check(h_list: &[f64]) -> Result<Vec<(f64, f64)>> {
    h_list
        .iter()
        .map(|&h| {
            let mesh = structured_mesh(h)?;
            let u = solve_deterministic(&mesh, manufactured_source)?;
            Ok((mesh.h, quadrature::l2_error(&mesh, u.as_slice(), manufactured_exact)))
        })
        .collect()
}
