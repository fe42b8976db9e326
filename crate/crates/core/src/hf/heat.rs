//! P1 continuous Galerkin solver for `-∇·(β∇u) = 1` with homogeneous
//! Dirichlet data on the two-triangle split of a structured grid.

use crate::error::{Error, Result};
use crate::grid::{Field, Grid2D, Point, Triangulation};
use crate::sparse::{pcg, TripletBuilder};

/// Nodal P1 solution at every vertex of the triangulation.
#[derive(Debug, Clone)]
pub struct HeatSolution {
    pub tri: Triangulation,
    pub nodal: Vec<f64>,
}

impl HeatSolution {
    /// Per cell, the mean of the two triangle centroid values.
    pub fn cell_values(&self) -> Field {
        let n = self.tri.grid.n_cells();
        (0..n)
            .map(|c| {
                let s: f64 = [2 * c, 2 * c + 1]
                    .iter()
                    .flat_map(|&t| self.tri.triangles[t])
                    .map(|v| self.nodal[v])
                    .sum();
                s / 6.0
            })
            .collect()
    }
}

/// Solves with the conductivity sampled at triangle centroids.
pub fn solve_poisson_p1<B: Fn(Point) -> f64>(grid: &Grid2D, beta: B) -> Result<HeatSolution> {
    let tri = Triangulation::from_grid(grid);
    let nv = tri.vertices.len();
    let mut interior_index = vec![usize::MAX; nv];
    let mut interior = Vec::new();
    for v in 0..nv {
        if !tri.is_boundary_vertex(v) {
            interior_index[v] = interior.len();
            interior.push(v);
        }
    }
    let ni = interior.len();
    let mut k = TripletBuilder::new(ni, ni);
    let mut rhs = vec![0.0; ni];
    for (t, nodes) in tri.triangles.iter().enumerate() {
        let p = nodes.map(|v| tri.vertices[v]);
        let area = tri.signed_area(t);
        if area <= 0.0 {
            return Err(Error::Numerical("degenerate triangle in stiffness assembly".into()));
        }
        let centroid = [(p[0][0] + p[1][0] + p[2][0]) / 3.0, (p[0][1] + p[1][1] + p[2][1]) / 3.0];
        let b = beta(centroid);
        // ∇λ_a = (y_{a+1} - y_{a+2}, x_{a+2} - x_{a+1}) / (2|T|)
        let grads: [[f64; 2]; 3] = std::array::from_fn(|a| {
            let (q1, q2) = (p[(a + 1) % 3], p[(a + 2) % 3]);
            [(q1[1] - q2[1]) / (2.0 * area), (q2[0] - q1[0]) / (2.0 * area)]
        });
        for a in 0..3 {
            let ia = interior_index[nodes[a]];
            if ia == usize::MAX {
                continue;
            }
            rhs[ia] += area / 3.0;
            for c in 0..3 {
                let ic = interior_index[nodes[c]];
                if ic != usize::MAX {
                    let kab = b * area * (grads[a][0] * grads[c][0] + grads[a][1] * grads[c][1]);
                    if kab != 0.0 {
                        k.add(ia, ic, kab);
                    }
                }
            }
        }
    }
    let k = k.build();
    let (x, _) = pcg(&k, &rhs, None, 1e-12, 20 * ni.max(10))
        .map_err(|e| Error::Numerical(format!("stiffness solve failed: {e}")))?;
    let mut nodal = vec![0.0; nv];
    for (i, &v) in interior.iter().enumerate() {
        nodal[v] = x[i];
    }
    Ok(HeatSolution { tri, nodal })
}

/// Conductivity `0.1 + 0.9·𝟙{‖x − (½+z, ½+z)‖∞ ≤ ¼}`.
pub fn conductivity(x: Point, z: f64) -> f64 {
    let c = 0.5 + z;
    if (x[0] - c).abs().max((x[1] - c).abs()) <= 0.25 {
        1.0
    } else {
        0.1
    }
}
