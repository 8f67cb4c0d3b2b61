use std::io::Write;

use crate::error::{Error, Result};

/// Triangulation of the unit square.
#[derive(Debug, Clone)]
pub struct TriMesh {
    pub nodes: Vec<[f64; 2]>,
    /// Counter-clockwise node triples.
    pub elements: Vec<[usize; 3]>,
    /// `boundary[i]` is set for nodes on the edge of the square.
    pub boundary: Vec<bool>,
    pub h: f64,
}

impl TriMesh {
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn boundary_nodes(&self) -> Vec<usize> {
        (0..self.num_nodes()).filter(|&i| self.boundary[i]).collect()
    }

    pub fn num_boundary(&self) -> usize {
        self.boundary.iter().filter(|&&b| b).count()
    }

    pub fn vertices(&self, e: usize) -> [[f64; 2]; 3] {
        let [a, b, c] = self.elements[e];
        [self.nodes[a], self.nodes[b], self.nodes[c]]
    }

    pub fn signed_area(&self, e: usize) -> f64 {
        signed_area(&self.vertices(e))
    }

    pub fn write_nodes_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "node,x,y,boundary")?;
        for (i, p) in self.nodes.iter().enumerate() {
            writeln!(out, "{i},{:e},{:e},{}", p[0], p[1], u8::from(self.boundary[i]))?;
        }
        Ok(())
    }

    pub fn write_elements_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "element,n0,n1,n2")?;
        for (e, t) in self.elements.iter().enumerate() {
            writeln!(out, "{e},{},{},{}", t[0], t[1], t[2])?;
        }
        Ok(())
    }
}

pub fn signed_area(p: &[[f64; 2]; 3]) -> f64 {
    0.5 * ((p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]))
}

/// Uniform grid with `n = round(1/h)` cells per side, each cell split along
/// its lower-left to upper-right diagonal. Node `j(n+1) + i` sits at `(i/n, j/n)`.
pub fn structured_mesh(h: f64) -> Result<TriMesh> {
    if !(h > 0.0 && h < 1.0) {
        return Err(Error::InvalidH(h));
    }
    let n = (1.0 / h).round() as usize;
    if n == 0 {
        return Err(Error::InvalidH(h));
    }
    let side = n + 1;
    let mut nodes = Vec::with_capacity(side * side);
    let mut boundary = Vec::with_capacity(side * side);
    for j in 0..side {
        for i in 0..side {
            nodes.push([i as f64 / n as f64, j as f64 / n as f64]);
            boundary.push(i == 0 || j == 0 || i == n || j == n);
        }
    }
    let mut elements = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let a = j * side + i;
            let b = a + 1;
            let c = a + side + 1;
            let d = a + side;
            elements.push([a, b, c]);
            elements.push([a, c, d]);
        }
    }
    Ok(TriMesh {
        nodes,
        elements,
        boundary,
        h: 1.0 / n as f64,
    })
}
