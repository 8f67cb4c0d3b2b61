//! Seven-point degree-5 rule on triangles.

use super::mesh::TriMesh;

const A1: f64 = 0.059_715_871_789_770;
const B1: f64 = 0.470_142_064_105_115;
const A2: f64 = 0.797_426_985_353_087;
const B2: f64 = 0.101_286_507_323_456;
const W0: f64 = 0.225;
const W1: f64 = 0.132_394_152_788_506;
const W2: f64 = 0.125_939_180_544_827;

/// Barycentric points and weights normalized to sum to one.
pub const TRI7: [([f64; 3], f64); 7] = [
    ([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], W0),
    ([A1, B1, B1], W1),
    ([B1, A1, B1], W1),
    ([B1, B1, A1], W1),
    ([A2, B2, B2], W2),
    ([B2, A2, B2], W2),
    ([B2, B2, A2], W2),
];

/// `∫_T g(x, y, λ) dx` where `λ` are the barycentric coordinates of the point.
pub fn integrate<G>(vertices: &[[f64; 2]; 3], area: f64, mut g: G) -> f64
where
    G: FnMut(f64, f64, &[f64; 3]) -> f64,
{
    TRI7.iter()
        .map(|(lam, w)| {
            let x = lam[0] * vertices[0][0] + lam[1] * vertices[1][0] + lam[2] * vertices[2][0];
            let y = lam[0] * vertices[0][1] + lam[1] * vertices[1][1] + lam[2] * vertices[2][1];
            w * g(x, y, lam)
        })
        .sum::<f64>()
        * area
}

/// `‖u_h − u‖_{L²}` for a nodal P1 field `u_h`.
pub fn l2_error<F: Fn(f64, f64) -> f64>(mesh: &TriMesh, nodal: &[f64], exact: F) -> f64 {
    let mut total = 0.0;
    for e in 0..mesh.num_elements() {
        let tri = mesh.elements[e];
        let v = mesh.vertices(e);
        total += integrate(&v, mesh.signed_area(e), |x, y, lam| {
            let uh = lam[0] * nodal[tri[0]] + lam[1] * nodal[tri[1]] + lam[2] * nodal[tri[2]];
            (uh - exact(x, y)).powi(2)
        });
    }
    total.sqrt()
}

/// `(∫ g φ_j)_j` for every node.
pub fn project_onto_basis<F: Fn(f64, f64) -> f64>(mesh: &TriMesh, g: F) -> Vec<f64> {
    let mut out = vec![0.0; mesh.num_nodes()];
    for e in 0..mesh.num_elements() {
        let tri = mesh.elements[e];
        let v = mesh.vertices(e);
        let area = mesh.signed_area(e);
        for (local, &node) in tri.iter().enumerate() {
            out[node] += integrate(&v, area, |x, y, lam| g(x, y) * lam[local]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_one() {
        let s: f64 = TRI7.iter().map(|(_, w)| w).sum();
        assert!((s - 1.0).abs() < 1e-14);
    }

    #[test]
    fn exact_for_quintic() {
        // ∫ over the unit right triangle of x^a y^b = a! b! / (a+b+2)!
        let v = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let got = integrate(&v, 0.5, |x, y, _| x.powi(3) * y.powi(2));
        let exact = 6.0 * 2.0 / 5040.0;
        assert!((got - exact).abs() < 1e-14);
    }
}
