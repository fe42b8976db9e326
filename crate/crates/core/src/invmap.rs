//! Approximate inverse of the spatial transform.
//!
//! `φ⁻¹` is found pointwise at cell quadrature points by damped Gauss-Newton,
//! the inverse displacement `y − x` is L²-projected onto continuous P1
//! functions vanishing on `∂Ω`, and the nodal snapshots are reduced with POD
//! plus per-coefficient GPRs like the transformed solution.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gpr::TrainOptions;
use crate::grid::{CellQuadrature, Grid, P1Space, Point, QuadratureRule};
use crate::hf::Sample;
use crate::pod::SnapshotKind;
use crate::reduced::{CoefficientModel, CoefficientModelSpec};
use crate::registration::SpatialTransform;
use crate::sparse::{pcg, Csr};

/// Stop when `‖φ(y) − x‖` falls below this.
pub const INVERSION_TOL: f64 = 1e-10;
pub const INVERSION_MAX_ITER: usize = 50;
/// Residuals above this at the iteration cap are reported as warnings.
pub const INVERSION_WARN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Inversion {
    pub y: Point,
    pub residual: f64,
    pub iterations: usize,
}

fn residual(t: &SpatialTransform, y: Point, x: Point) -> (Point, f64) {
    let f = t.forward_raw(y);
    let r = [f[0] - x[0], f[1] - x[1]];
    (r, r[0].hypot(r[1]))
}

/// Levenberg-Marquardt for `min_y ‖φ(y) − x‖²` with iterates kept in the
/// closed domain. `y0` is clamped before use.
pub fn invert_pointwise(t: &SpatialTransform, x: Point, y0: Point) -> Inversion {
    let frame = &t.frame;
    let mut y = frame.clamp(y0);
    let (mut r, mut res) = residual(t, y, x);
    let mut mu = 1e-8;
    let mut it = 0;
    while res > INVERSION_TOL && it < INVERSION_MAX_ITER {
        it += 1;
        let (_, jac) = t.psi_and_jacobian(y);
        let j = [[1.0 + jac[0][0], jac[0][1]], [jac[1][0], 1.0 + jac[1][1]]];
        // normal equations (JᵀJ + μI) δ = −Jᵀr
        let a00 = j[0][0] * j[0][0] + j[1][0] * j[1][0] + mu;
        let a01 = j[0][0] * j[0][1] + j[1][0] * j[1][1];
        let a11 = j[0][1] * j[0][1] + j[1][1] * j[1][1] + mu;
        let g0 = j[0][0] * r[0] + j[1][0] * r[1];
        let g1 = j[0][1] * r[0] + j[1][1] * r[1];
        let det = a00 * a11 - a01 * a01;
        if !(det.abs() > 0.0) {
            mu = mu.max(1e-12) * 10.0;
            continue;
        }
        let d = [-(a11 * g0 - a01 * g1) / det, -(a00 * g1 - a01 * g0) / det];
        let cand = frame.clamp([y[0] + d[0], y[1] + d[1]]);
        let (rc, rn) = residual(t, cand, x);
        if rn < res {
            (y, r, res) = (cand, rc, rn);
            mu = (mu * 0.1).max(1e-14);
        } else {
            mu = mu.max(1e-12) * 10.0;
            if mu > 1e12 {
                break;
            }
        }
    }
    Inversion { y, residual: res, iterations: it }
}

/// `φ` tabulated on a uniform lattice of the closed domain. Starting points
/// for inversions the local solver cannot finish from nearby guesses, which
/// happens where the map folds and `∇φ` vanishes between guess and root.
pub struct SeedLattice {
    table: Vec<(Point, Point)>,
}

/// Lattice points per axis.
const SEEDS_1D: usize = 1024;
const SEEDS_2D: usize = 64;
/// Local solves started from the best-matching lattice points.
const SEED_TRIES: usize = 6;

impl SeedLattice {
    pub fn new(t: &SpatialTransform) -> Self {
        let f = &t.frame;
        let per = if f.dim == 1 { SEEDS_1D } else { SEEDS_2D };
        let ny = if f.dim == 1 { 1 } else { per + 1 };
        let mut table = Vec::with_capacity((per + 1) * ny);
        for j in 0..ny {
            for i in 0..=per {
                let mut y = [f.lo[0] + f.len[0] * i as f64 / per as f64, 0.0];
                if f.dim == 2 {
                    y[1] = f.lo[1] + f.len[1] * j as f64 / per as f64;
                }
                table.push((y, t.forward_raw(y)));
            }
        }
        Self { table }
    }

    /// Best of [`invert_pointwise`] runs from the lattice points whose images
    /// lie closest to `x`.
    pub fn invert(&self, t: &SpatialTransform, x: Point) -> Inversion {
        let dist = |p: &Point| (p[0] - x[0]).hypot(p[1] - x[1]);
        let mut order: Vec<usize> = (0..self.table.len()).collect();
        let k = SEED_TRIES.min(order.len());
        order.select_nth_unstable_by(k - 1, |&a, &b| dist(&self.table[a].1).total_cmp(&dist(&self.table[b].1)));
        order.truncate(k);
        order.sort_by(|&a, &b| dist(&self.table[a].1).total_cmp(&dist(&self.table[b].1)));
        let mut best: Option<Inversion> = None;
        for i in order {
            let inv = invert_pointwise(t, x, self.table[i].0);
            if best.is_none_or(|b| inv.residual < b.residual) {
                best = Some(inv);
            }
            if inv.residual <= INVERSION_TOL {
                break;
            }
        }
        best.expect("lattice is never empty")
    }
}

/// Nodal P1 displacement, one vector per spatial component. Boundary nodes
/// are zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InverseDisplacementSnapshot {
    pub components: Vec<Vec<f64>>,
    /// Largest pointwise inversion residual and where it occurred.
    pub worst_residual: f64,
    pub worst_point: Point,
    /// Points whose residual stayed above [`INVERSION_WARN`].
    pub warnings: usize,
}

/// P1 shape weights at every quadrature point of a cell quadrature.
#[derive(Debug, Clone)]
pub struct P1Sampler {
    pub space: P1Space,
    pub quad: CellQuadrature,
    shapes: Vec<[(usize, f64); 3]>,
}

impl P1Sampler {
    pub fn new(grid: &Grid, rule: &QuadratureRule) -> Result<Self> {
        let space = P1Space::new(grid);
        let quad = CellQuadrature::new(grid, rule)?;
        let shapes = (0..quad.n_points()).map(|p| space.shape_at(quad.point(p))).collect();
        Ok(Self { space, quad, shapes })
    }

    /// Value of the nodal vector at quadrature point `p`.
    #[inline]
    pub fn eval(&self, nodal: &[f64], p: usize) -> f64 {
        self.shapes[p].iter().map(|(v, w)| w * nodal[*v]).sum()
    }

    /// Displacement vector at quadrature point `p`.
    #[inline]
    pub fn displacement(&self, components: &[Vec<f64>], p: usize) -> Point {
        let mut d = [0.0; 2];
        for (k, c) in components.iter().enumerate() {
            d[k] = self.eval(c, p);
        }
        d
    }
}

/// Precomputed pieces of the P1 projection of inverse displacements.
#[derive(Debug, Clone)]
pub struct InverseProjector {
    pub sampler: P1Sampler,
    interior: Vec<usize>,
    mass: Csr,
}

impl InverseProjector {
    pub fn new(grid: &Grid, rule: &QuadratureRule) -> Result<Self> {
        let sampler = P1Sampler::new(grid, rule)?;
        let space = &sampler.space;
        let interior: Vec<usize> = (0..space.n_nodes()).filter(|&v| !space.is_boundary(v)).collect();
        if interior.is_empty() {
            return Err(Error::arg("grid has no interior vertices"));
        }
        let mass = space.mass_matrix().restrict(&interior);
        Ok(Self { sampler, interior, mass })
    }

    pub fn dim(&self) -> usize {
        self.sampler.space.dim()
    }

    pub fn n_nodes(&self) -> usize {
        self.sampler.space.n_nodes()
    }

    /// Inverts `t` at every quadrature point and projects `φ⁻¹ − Id`.
    pub fn snapshot(&self, t: &SpatialTransform) -> Result<InverseDisplacementSnapshot> {
        let dim = self.dim();
        let n_nodes = self.n_nodes();
        if t.coeffs.dim != dim {
            return Err(Error::arg("transform and grid dimensions differ"));
        }
        if t.coeffs.is_zero() {
            return Ok(InverseDisplacementSnapshot {
                components: vec![vec![0.0; n_nodes]; dim],
                worst_residual: 0.0,
                worst_point: [0.0; 2],
                warnings: 0,
            });
        }
        let quad = &self.sampler.quad;
        let vol = quad.grid.cell_volume();
        let mut load = vec![vec![0.0; n_nodes]; dim];
        let (mut worst, mut worst_point, mut warnings) = (0.0f64, [0.0; 2], 0);
        let mut prev: Option<(Point, Point)> = None;
        let mut lattice: Option<SeedLattice> = None;
        for p in 0..quad.n_points() {
            let x = quad.point(p);
            // neighbours in sweep order have nearby inverses
            let y0 = prev.map_or(x, |(px, py)| [py[0] + x[0] - px[0], py[1] + x[1] - px[1]]);
            let mut inv = invert_pointwise(t, x, y0);
            if inv.residual > INVERSION_TOL && y0 != x {
                let cold = invert_pointwise(t, x, x);
                if cold.residual < inv.residual {
                    inv = cold;
                }
            }
            if inv.residual > INVERSION_TOL {
                let seeded = lattice.get_or_insert_with(|| SeedLattice::new(t)).invert(t, x);
                if seeded.residual < inv.residual {
                    inv = seeded;
                }
            }
            if inv.residual > worst {
                worst = inv.residual;
                worst_point = x;
            }
            if inv.residual > INVERSION_WARN {
                warnings += 1;
            }
            prev = Some((x, inv.y));
            let w = quad.weight(p) * vol;
            for &(v, s) in &self.sampler.shapes[p] {
                for k in 0..dim {
                    load[k][v] += w * s * (inv.y[k] - x[k]);
                }
            }
        }
        if warnings > 0 {
            tracing::warn!(warnings, worst, ?worst_point, "pointwise inversion did not converge everywhere");
        }
        let mut components = Vec::with_capacity(dim);
        for b in load {
            let rhs: Vec<f64> = self.interior.iter().map(|&v| b[v]).collect();
            let (sol, _) = pcg(&self.mass, &rhs, None, 1e-13, 10 * rhs.len() + 100)?;
            let mut nodal = vec![0.0; n_nodes];
            for (&v, s) in self.interior.iter().zip(sol) {
                nodal[v] = s;
            }
            components.push(nodal);
        }
        Ok(InverseDisplacementSnapshot {
            components,
            worst_residual: worst,
            worst_point,
            warnings,
        })
    }

    /// Mean of `‖φ(x + Ψ̃(x)) − x‖` over the quadrature points.
    pub fn round_trip_error(&self, t: &SpatialTransform, components: &[Vec<f64>]) -> f64 {
        let quad = &self.sampler.quad;
        let mut s = 0.0;
        for p in 0..quad.n_points() {
            let x = quad.point(p);
            let d = self.sampler.displacement(components, p);
            let y = t.forward(t.frame.clamp([x[0] + d[0], x[1] + d[1]]));
            s += (y[0] - x[0]).hypot(y[1] - x[1]);
        }
        s / quad.n_points() as f64
    }
}

/// One-shot form of [`InverseProjector::snapshot`].
pub fn build_inverse_snapshot(t: &SpatialTransform, grid: &Grid, rule: &QuadratureRule) -> Result<InverseDisplacementSnapshot> {
    InverseProjector::new(grid, rule)?.snapshot(t)
}

/// Minimum over elements of `det(I + ∇Ψ̃)` for a nodal P1 displacement.
pub fn inverse_jacobian_min(space: &P1Space, components: &[Vec<f64>]) -> f64 {
    let mut worst = f64::INFINITY;
    for e in 0..space.n_elements() {
        let g: Vec<Point> = components.iter().map(|c| space.element_gradient(c, e)).collect();
        let det = match g.len() {
            1 => 1.0 + g[0][0],
            _ => (1.0 + g[0][0]) * (1.0 + g[1][1]) - g[0][1] * g[1][0],
        };
        worst = worst.min(det);
    }
    worst
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InverseModelSpec {
    pub components: Vec<CoefficientModelSpec>,
    pub n_psi: usize,
}

/// Per-component POD + GPR of the inverse displacement, sharing `n_psi`.
#[derive(Debug, Clone)]
pub struct InverseModel {
    pub components: Vec<CoefficientModel>,
    pub n_psi: usize,
}

pub fn fit_inverse_model(snapshots: &[InverseDisplacementSnapshot], samples: &[Sample], n_psi: usize, opts: &TrainOptions) -> Result<InverseModel> {
    let first = snapshots.first().ok_or_else(|| Error::arg("no inverse snapshots"))?;
    if n_psi < 1 {
        return Err(Error::arg("n_psi must be at least 1"));
    }
    let dim = first.components.len();
    let mut components = Vec::with_capacity(dim);
    for k in 0..dim {
        let cols = snapshots.iter().map(|s| s.components[k].clone()).collect();
        let opts = TrainOptions {
            seed: opts.seed.wrapping_add(1000 * (k as u64 + 1)),
            ..opts.clone()
        };
        components.push(CoefficientModel::fit(cols, samples, SnapshotKind::InverseDisplacement, n_psi, &opts)?);
    }
    let n_psi = components.iter().map(CoefficientModel::n).min().unwrap_or(0);
    Ok(InverseModel { components, n_psi })
}

impl InverseModel {
    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn to_spec(&self) -> InverseModelSpec {
        InverseModelSpec {
            components: self.components.iter().map(CoefficientModel::to_spec).collect(),
            n_psi: self.n_psi,
        }
    }

    pub fn from_spec(spec: InverseModelSpec) -> Result<Self> {
        let components: Vec<CoefficientModel> = spec.components.into_iter().map(CoefficientModel::from_spec).collect::<Result<_>>()?;
        if components.iter().any(|c| c.n() < spec.n_psi) {
            return Err(Error::arg("inverse model truncation exceeds a component basis"));
        }
        Ok(Self { components, n_psi: spec.n_psi })
    }
}

/// Nodal inverse displacement at `z` from the first `n_psi` modes of every
/// component.
pub fn predict_inverse(model: &InverseModel, z: &[f64], n_psi: usize) -> Result<Vec<Vec<f64>>> {
    if n_psi < 1 || n_psi > model.n_psi {
        return Err(Error::arg(format!("n_psi = {n_psi} outside 1..={}", model.n_psi)));
    }
    model.components.iter().map(|c| c.predict(z, n_psi)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid2D;
    use crate::registration::{DisplacementCoeffs, Frame};

    #[test]
    fn one_dimensional_inverse_of_a_bubble() {
        let g = Grid::D1(crate::grid::Grid1D::new(0.0, 2.0, 8).unwrap());
        let mut c = DisplacementCoeffs::zeros(1, 1).unwrap();
        c.coeffs[0] = 0.8;
        let t = SpatialTransform::new(Frame::from_grid(&g), c).unwrap();
        let x = [0.7, 0.0];
        let inv = invert_pointwise(&t, x, x);
        let back = t.forward_raw(inv.y);
        assert!((back[0] - x[0]).abs() <= 1e-10);
    }

    #[test]
    fn boundary_points_map_to_themselves() {
        let g = Grid::D2(Grid2D::square(0.0, 1.0, 4).unwrap());
        let c = DisplacementCoeffs::from_vec(2, 2, vec![0.5, -0.3, 0.2, 0.1, -0.4, 0.2, 0.3, -0.1]).unwrap();
        let t = SpatialTransform::new(Frame::from_grid(&g), c).unwrap();
        let inv = invert_pointwise(&t, [0.0, 0.3], [0.0, 0.3]);
        assert_eq!(inv.y, [0.0, 0.3]);
        assert_eq!(inv.iterations, 0);
    }
}
