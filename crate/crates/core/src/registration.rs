//! Displacement fields in the tensor-Legendre bubble space and their fitting
//! by regularized registration.
//!
//! A displacement is `Ψ(x) = L ⊙ Ψ̂(x̂)` where `x̂` is `x` mapped affinely to
//! the unit cube, `L` holds the domain side lengths, and each component of
//! `Ψ̂` is `Σ c_ij l_i(2x̂₁−1) l_j(2x̂₂−1) Υ(x̂)` with `Υ = Π x̂_k(1−x̂_k)`.
//! Degrees run `0..M` per axis, so a 2D field has `2M²` coefficients and a
//! 1D field `M`. The layout is component-major, then `i` (first axis), then `j`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{gauss_legendre, CellQuadrature, Field, Grid, Point};
use crate::optim::{minimize, BfgsOptions};

/// Upper bound on the per-axis polynomial count.
pub const MAX_M: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisplacementCoeffs {
    pub dim: usize,
    pub m: usize,
    pub coeffs: Vec<f64>,
}

impl DisplacementCoeffs {
    pub fn zeros(dim: usize, m: usize) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::arg(format!("displacements are 1D or 2D, got {dim}")));
        }
        if m == 0 || m > MAX_M {
            return Err(Error::arg(format!("polynomial order must be in 1..={MAX_M}, got {m}")));
        }
        Ok(Self {
            dim,
            m,
            coeffs: vec![0.0; n_coeffs(dim, m)],
        })
    }

    pub fn from_vec(dim: usize, m: usize, coeffs: Vec<f64>) -> Result<Self> {
        let mut c = Self::zeros(dim, m)?;
        if coeffs.len() != c.coeffs.len() {
            return Err(Error::arg(format!("expected {} coefficients, got {}", c.coeffs.len(), coeffs.len())));
        }
        c.coeffs = coeffs;
        Ok(c)
    }

    /// Coefficients per spatial component.
    pub fn per_component(&self) -> usize {
        self.m * self.my()
    }

    fn my(&self) -> usize {
        if self.dim == 2 {
            self.m
        } else {
            1
        }
    }

    #[inline]
    fn at(&self, k: usize, i: usize, j: usize) -> f64 {
        self.coeffs[k * self.per_component() + i * self.my() + j]
    }

    /// The same field expressed at a larger order (new terms zero).
    pub fn padded(&self, m: usize) -> Result<Self> {
        if m < self.m {
            return Err(Error::arg("cannot pad to a smaller order"));
        }
        let mut out = Self::zeros(self.dim, m)?;
        let (my_new, per_new) = (out.my(), out.per_component());
        for k in 0..self.dim {
            for i in 0..self.m {
                for j in 0..self.my() {
                    out.coeffs[k * per_new + i * my_new + j] = self.at(k, i, j);
                }
            }
        }
        Ok(out)
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|v| *v == 0.0)
    }
}

pub fn n_coeffs(dim: usize, m: usize) -> usize {
    dim * m.pow(dim as u32)
}

/// Bubble functions `f_i(s) = l_i(2s−1)·s(1−s)` on `[0, 1]` with first and
/// second derivatives in `s`.
#[derive(Debug, Clone, Copy)]
pub struct Bubble {
    pub f: [f64; MAX_M],
    pub d1: [f64; MAX_M],
    pub d2: [f64; MAX_M],
}

pub fn bubble(m: usize, s: f64) -> Bubble {
    let t = 2.0 * s - 1.0;
    let (mut l, mut dl, mut ddl) = ([0.0; MAX_M], [0.0; MAX_M], [0.0; MAX_M]);
    l[0] = 1.0;
    if m > 1 {
        l[1] = t;
        dl[1] = 1.0;
    }
    for n in 1..m.saturating_sub(1) {
        let nf = n as f64;
        l[n + 1] = ((2.0 * nf + 1.0) * t * l[n] - nf * l[n - 1]) / (nf + 1.0);
        dl[n + 1] = dl[n - 1] + (2.0 * nf + 1.0) * l[n];
        ddl[n + 1] = ddl[n - 1] + (2.0 * nf + 1.0) * dl[n];
    }
    let (u, du, ddu) = (s * (1.0 - s), 1.0 - 2.0 * s, -2.0);
    let mut b = Bubble {
        f: [0.0; MAX_M],
        d1: [0.0; MAX_M],
        d2: [0.0; MAX_M],
    };
    for i in 0..m {
        // d/ds = 2 d/dt
        let (li, l1, l2) = (l[i], 2.0 * dl[i], 4.0 * ddl[i]);
        b.f[i] = li * u;
        b.d1[i] = l1 * u + li * du;
        b.d2[i] = l2 * u + 2.0 * l1 * du + li * ddu;
    }
    b
}

/// Constant "bubble" used for the absent second axis of 1D fields.
fn unit_bubble() -> Bubble {
    let mut b = Bubble {
        f: [0.0; MAX_M],
        d1: [0.0; MAX_M],
        d2: [0.0; MAX_M],
    };
    b.f[0] = 1.0;
    b
}

/// Affine frame of the physical domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub dim: usize,
    pub lo: [f64; 2],
    pub len: [f64; 2],
}

impl Frame {
    pub fn from_grid(grid: &Grid) -> Self {
        let mut lo = [0.0; 2];
        let mut len = [1.0; 2];
        for (k, ax) in grid.axes().iter().enumerate() {
            lo[k] = ax.a;
            len[k] = ax.length();
        }
        Self { dim: grid.dim(), lo, len }
    }

    #[inline]
    pub fn to_unit(&self, x: Point) -> Point {
        let mut s = [0.5; 2];
        for k in 0..self.dim {
            s[k] = (x[k] - self.lo[k]) / self.len[k];
        }
        s
    }

    /// Whether `x` lies in the closure of the domain.
    pub fn contains(&self, x: Point) -> bool {
        (0..self.dim).all(|k| x[k] >= self.lo[k] && x[k] <= self.lo[k] + self.len[k])
    }

    #[inline]
    pub fn clamp(&self, x: Point) -> Point {
        let mut y = x;
        for k in 0..self.dim {
            y[k] = x[k].clamp(self.lo[k], self.lo[k] + self.len[k]);
        }
        y
    }

    fn bubbles(&self, m: usize, x: Point) -> (Bubble, Bubble) {
        let s = self.to_unit(x);
        let bx = bubble(m, s[0]);
        let by = if self.dim == 2 { bubble(m, s[1]) } else { unit_bubble() };
        (bx, by)
    }
}

/// `φ = Id + Ψ` on a physical domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialTransform {
    pub frame: Frame,
    pub coeffs: DisplacementCoeffs,
}

impl SpatialTransform {
    pub fn new(frame: Frame, coeffs: DisplacementCoeffs) -> Result<Self> {
        if frame.dim != coeffs.dim {
            return Err(Error::arg("frame and displacement dimensions differ"));
        }
        Ok(Self { frame, coeffs })
    }

    pub fn identity(frame: Frame) -> Self {
        Self {
            frame,
            coeffs: DisplacementCoeffs::zeros(frame.dim, 1).expect("valid order"),
        }
    }

    /// `Ψ(x)`; no domain check.
    #[inline]
    pub fn psi(&self, x: Point) -> Point {
        let c = &self.coeffs;
        let (bx, by) = self.frame.bubbles(c.m, x);
        let mut out = [0.0; 2];
        for (k, o) in out.iter_mut().enumerate().take(c.dim) {
            let mut s = 0.0;
            for i in 0..c.m {
                for j in 0..c.my() {
                    s += c.at(k, i, j) * bx.f[i] * by.f[j];
                }
            }
            *o = self.frame.len[k] * s;
        }
        out
    }

    /// `Ψ(x)` and `∇Ψ(x)` with `jac[k][l] = ∂Ψ_k/∂x_l`.
    pub fn psi_and_jacobian(&self, x: Point) -> (Point, [[f64; 2]; 2]) {
        let c = &self.coeffs;
        let f = &self.frame;
        let (bx, by) = f.bubbles(c.m, x);
        let mut psi = [0.0; 2];
        let mut jac = [[0.0; 2]; 2];
        for k in 0..c.dim {
            let (mut s, mut sx, mut sy) = (0.0, 0.0, 0.0);
            for i in 0..c.m {
                for j in 0..c.my() {
                    let a = c.at(k, i, j);
                    s += a * bx.f[i] * by.f[j];
                    sx += a * bx.d1[i] * by.f[j];
                    sy += a * bx.f[i] * by.d1[j];
                }
            }
            psi[k] = f.len[k] * s;
            jac[k][0] = f.len[k] / f.len[0] * sx;
            if c.dim == 2 {
                jac[k][1] = f.len[k] / f.len[1] * sy;
            }
        }
        (psi, jac)
    }

    /// `x + Ψ(x)` without clamping.
    #[inline]
    pub fn forward_raw(&self, x: Point) -> Point {
        let p = self.psi(x);
        [x[0] + p[0], x[1] + p[1]]
    }

    /// `φ(x)`, clamped to the closed domain.
    #[inline]
    pub fn forward(&self, x: Point) -> Point {
        self.frame.clamp(self.forward_raw(x))
    }

    /// `det ∇φ(x)`.
    pub fn jacobian_det(&self, x: Point) -> f64 {
        let (_, j) = self.psi_and_jacobian(x);
        if self.frame.dim == 1 {
            1.0 + j[0][0]
        } else {
            (1.0 + j[0][0]) * (1.0 + j[1][1]) - j[0][1] * j[1][0]
        }
    }

    /// `Ψ` at every point of a cell quadrature, laid out like its points.
    pub fn psi_at_quadrature(&self, quad: &CellQuadrature) -> Vec<Point> {
        let tables = AxisTables::new(&self.frame, quad, self.coeffs.m);
        let fields = tables.evaluate(&self.frame, &self.coeffs);
        (0..quad.n_points())
            .map(|p| {
                let mut v = [0.0; 2];
                for k in 0..self.frame.dim {
                    v[k] = fields[k][p];
                }
                v
            })
            .collect()
    }
}

/// Displacement at a point of the closed domain.
pub fn eval_displacement(t: &SpatialTransform, x: Point) -> Result<Point> {
    if !t.frame.contains(x) {
        return Err(Error::arg(format!("point {x:?} lies outside the domain")));
    }
    Ok(t.psi(x))
}

/// Minimum of `det ∇φ` over the cell centers.
pub fn forward_jacobian_min(t: &SpatialTransform, grid: &Grid) -> f64 {
    (0..grid.n_cells())
        .map(|c| t.jacobian_det(grid.center(c)))
        .fold(f64::INFINITY, f64::min)
}

/// Bubble values at the per-axis quadrature coordinates.
struct AxisTables {
    fx: Vec<[f64; MAX_M]>,
    fy: Vec<[f64; MAX_M]>,
}

impl AxisTables {
    fn new(frame: &Frame, quad: &CellQuadrature, m: usize) -> Self {
        let axis = |k: usize| -> Vec<[f64; MAX_M]> {
            quad.coords[k]
                .iter()
                .map(|x| bubble(m, (x - frame.lo[k]) / frame.len[k]).f)
                .collect()
        };
        let fx = axis(0);
        let fy = if frame.dim == 2 { axis(1) } else { vec![unit_bubble().f] };
        Self { fx, fy }
    }

    /// `Ψ_k` at all points, per component; point `p = py·nx + px`.
    fn evaluate(&self, frame: &Frame, c: &DisplacementCoeffs) -> Vec<Vec<f64>> {
        let (nx, ny, m, my) = (self.fx.len(), self.fy.len(), c.m, c.my());
        (0..c.dim)
            .map(|k| {
                let mut out = vec![0.0; nx * ny];
                let mut h = [0.0; MAX_M];
                for (py, fy) in self.fy.iter().enumerate() {
                    for (i, hi) in h.iter_mut().enumerate().take(m) {
                        *hi = (0..my).map(|j| c.at(k, i, j) * fy[j]).sum::<f64>() * frame.len[k];
                    }
                    let row = &mut out[py * nx..(py + 1) * nx];
                    for (px, fx) in self.fx.iter().enumerate() {
                        row[px] = (0..m).map(|i| fx[i] * h[i]).sum();
                    }
                }
                out
            })
            .collect()
    }

    /// `grad[k, i, j] = Σ_p w[k][p] f_i(x_p) f_j(y_p)`.
    fn contract(&self, w: &[Vec<f64>], c: &DisplacementCoeffs, grad: &mut [f64]) {
        let (nx, m, my) = (self.fx.len(), c.m, c.my());
        let per = c.per_component();
        for (k, wk) in w.iter().enumerate() {
            let g = &mut grad[k * per..(k + 1) * per];
            for (py, fy) in self.fy.iter().enumerate() {
                let mut t = [0.0; MAX_M];
                let row = &wk[py * nx..(py + 1) * nx];
                for (fx, wv) in self.fx.iter().zip(row) {
                    if *wv == 0.0 {
                        continue;
                    }
                    for i in 0..m {
                        t[i] += fx[i] * wv;
                    }
                }
                for i in 0..m {
                    for j in 0..my {
                        g[i * my + j] += t[i] * fy[j];
                    }
                }
            }
        }
    }
}

/// Gram matrix of the Laplacians of the unit-domain basis functions of one
/// component, so that `‖ΔΨ̂_k‖² = c_kᵀ G c_k`.
pub fn laplacian_gram(dim: usize, m: usize) -> Vec<f64> {
    // f_i is a polynomial of degree i + 2; products have degree ≤ 2m + 2
    let (nodes, weights) = gauss_legendre(m + 2).expect("positive order");
    let tabs: Vec<Bubble> = nodes.iter().map(|s| bubble(m, *s)).collect();
    let gram1 = |a: fn(&Bubble) -> &[f64; MAX_M], b: fn(&Bubble) -> &[f64; MAX_M]| -> Vec<f64> {
        let mut g = vec![0.0; m * m];
        for (t, w) in tabs.iter().zip(&weights) {
            for i in 0..m {
                for k in 0..m {
                    g[i * m + k] += w * a(t)[i] * b(t)[k];
                }
            }
        }
        g
    };
    let q = gram1(|b| &b.d2, |b| &b.d2);
    if dim == 1 {
        return q;
    }
    let p = gram1(|b| &b.f, |b| &b.f);
    let s = gram1(|b| &b.d2, |b| &b.f);
    let n = m * m;
    let mut g = vec![0.0; n * n];
    // Δ(f_i f_j) = f_i'' f_j + f_i f_j''
    for i in 0..m {
        for j in 0..m {
            for k in 0..m {
                for l in 0..m {
                    g[(i * m + j) * n + k * m + l] =
                        q[i * m + k] * p[j * m + l] + s[i * m + k] * s[l * m + j] + s[k * m + i] * s[j * m + l] + p[i * m + k] * q[j * m + l];
                }
            }
        }
    }
    g
}

/// `Σ_k c_kᵀ G c_k` and optionally its gradient `2 G c_k`.
fn regularizer_sq(c: &DisplacementCoeffs, gram: &[f64], grad: Option<&mut [f64]>) -> f64 {
    let n = c.per_component();
    let mut total = 0.0;
    let mut gc = vec![0.0; c.coeffs.len()];
    for k in 0..c.dim {
        let ck = &c.coeffs[k * n..(k + 1) * n];
        for a in 0..n {
            let v: f64 = (0..n).map(|b| gram[a * n + b] * ck[b]).sum();
            gc[k * n + a] = v;
            total += ck[a] * v;
        }
    }
    if let Some(g) = grad {
        for (o, v) in g.iter_mut().zip(&gc) {
            *o += 2.0 * v;
        }
    }
    total
}

/// `R(Ψ) = ‖ΔΨ̂‖_{L²(unit domain)}`.
pub fn regularizer(c: &DisplacementCoeffs) -> f64 {
    regularizer_sq(c, &laplacian_gram(c.dim, c.m), None).max(0.0).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegistrationConfig {
    pub epsilon: f64,
    pub tol_m: f64,
    pub max_m: usize,
    pub grad_tol: f64,
    pub max_iter: usize,
    /// Per-axis Gauss-Legendre order of the matching quadrature.
    pub quad_order: usize,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-2,
            tol_m: 1e-3,
            max_m: 10,
            grad_tol: 1e-6,
            max_iter: 200,
            quad_order: 3,
        }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) || !(self.tol_m > 0.0) {
            return Err(Error::Config("registration needs epsilon ≥ 0 and tol_m > 0".into()));
        }
        if self.max_m == 0 || self.max_m > MAX_M {
            return Err(Error::Config(format!("max_m must be in 1..={MAX_M}")));
        }
        if self.quad_order == 0 || self.max_iter == 0 {
            return Err(Error::Config("quadrature order and iteration cap must be positive".into()));
        }
        Ok(())
    }
}

/// What a sample is matched against the reference with.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Snapshot(Field),
    Points(Vec<Point>),
}

/// The reference side of the matching criterion.
#[derive(Debug, Clone)]
pub enum Criterion {
    /// Squared L² distance between the warped target and the reference, both
    /// evaluated through the continuous cell-center interpolant.
    L2Snapshot {
        grid: Grid,
        quad: CellQuadrature,
        reference_at_points: Vec<f64>,
        /// Physical quadrature weights.
        weights: Vec<f64>,
    },
    /// Sum of squared distances between displaced reference points and target points.
    PointSet { reference: Vec<Point> },
}

impl Criterion {
    pub fn l2_snapshot(grid: &Grid, reference: &[f64], quad_order: usize) -> Result<Self> {
        if reference.len() != grid.n_cells() {
            return Err(Error::arg("reference snapshot does not match the grid"));
        }
        let rule = crate::grid::QuadratureRule::tensor(quad_order, grid.dim())?;
        let quad = CellQuadrature::new(grid, &rule)?;
        let vol = grid.cell_volume();
        let reference_at_points = (0..quad.n_points()).map(|p| grid.interpolate(reference, quad.point(p)).0).collect();
        let weights = (0..quad.n_points()).map(|p| quad.weight(p) * vol).collect();
        Ok(Criterion::L2Snapshot {
            grid: *grid,
            quad,
            reference_at_points,
            weights,
        })
    }

    pub fn point_set(reference: Vec<Point>) -> Result<Self> {
        if reference.len() < 3 {
            return Err(Error::arg("a point-set criterion needs at least three points"));
        }
        Ok(Criterion::PointSet { reference })
    }

    fn check_target(&self, target: &Target) -> Result<()> {
        match (self, target) {
            (Criterion::L2Snapshot { grid, .. }, Target::Snapshot(f)) if f.len() == grid.n_cells() => Ok(()),
            (Criterion::PointSet { reference }, Target::Points(p)) if p.len() == reference.len() => Ok(()),
            _ => Err(Error::arg("target does not fit the matching criterion")),
        }
    }
}

/// Objective `F = M² + ε R²` for one target at one polynomial order, with
/// everything that depends only on the order precomputed.
pub struct Objective<'a> {
    frame: Frame,
    criterion: &'a Criterion,
    target: &'a Target,
    epsilon: f64,
    m: usize,
    gram: Vec<f64>,
    tables: Option<AxisTables>,
    point_bubbles: Vec<(Bubble, Bubble)>,
}

impl<'a> Objective<'a> {
    pub fn new(frame: Frame, criterion: &'a Criterion, target: &'a Target, epsilon: f64, m: usize) -> Result<Self> {
        criterion.check_target(target)?;
        DisplacementCoeffs::zeros(frame.dim, m)?;
        let (tables, point_bubbles) = match criterion {
            Criterion::L2Snapshot { quad, .. } => (Some(AxisTables::new(&frame, quad, m)), Vec::new()),
            Criterion::PointSet { reference } => (None, reference.iter().map(|x| frame.bubbles(m, *x)).collect()),
        };
        Ok(Self {
            frame,
            criterion,
            target,
            epsilon,
            m,
            gram: laplacian_gram(frame.dim, m),
            tables,
            point_bubbles,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    fn coeffs(&self, c: &[f64]) -> DisplacementCoeffs {
        DisplacementCoeffs {
            dim: self.frame.dim,
            m: self.m,
            coeffs: c.to_vec(),
        }
    }

    /// Matching term `M` and, when requested, `∂M/∂c` added into `grad`.
    pub fn matching(&self, c: &DisplacementCoeffs, grad: Option<&mut [f64]>) -> f64 {
        match (self.criterion, self.target) {
            (
                Criterion::L2Snapshot {
                    grid,
                    quad,
                    reference_at_points,
                    weights,
                },
                Target::Snapshot(u),
            ) => {
                let tables = self.tables.as_ref().expect("tables exist for snapshot matching");
                let psi = tables.evaluate(&self.frame, c);
                let dim = self.frame.dim;
                let want = grad.is_some();
                let mut w: Vec<Vec<f64>> = if want { vec![vec![0.0; quad.n_points()]; dim] } else { Vec::new() };
                let mut total = 0.0;
                for p in 0..quad.n_points() {
                    let x = quad.point(p);
                    let mut y = x;
                    for k in 0..dim {
                        y[k] += psi[k][p];
                    }
                    let (v, g) = grid.interpolate(u, self.frame.clamp(y));
                    let r = v - reference_at_points[p];
                    total += weights[p] * r * r;
                    if want {
                        for k in 0..dim {
                            // clamped directions have zero sensitivity
                            let inside = y[k] > self.frame.lo[k] && y[k] < self.frame.lo[k] + self.frame.len[k];
                            if inside {
                                w[k][p] = 2.0 * weights[p] * r * g[k] * self.frame.len[k];
                            }
                        }
                    }
                }
                if let Some(gr) = grad {
                    tables.contract(&w, c, gr);
                }
                total
            }
            (Criterion::PointSet { reference }, Target::Points(target)) => {
                let dim = self.frame.dim;
                let (m, my) = (c.m, c.my());
                let per = c.per_component();
                let mut total = 0.0;
                let mut grad = grad;
                for ((x, t), (bx, by)) in reference.iter().zip(target).zip(&self.point_bubbles) {
                    for k in 0..dim {
                        let mut s = 0.0;
                        for i in 0..m {
                            for j in 0..my {
                                s += c.at(k, i, j) * bx.f[i] * by.f[j];
                            }
                        }
                        let r = t[k] - x[k] - self.frame.len[k] * s;
                        total += r * r;
                        if let Some(g) = grad.as_deref_mut() {
                            let scale = -2.0 * r * self.frame.len[k];
                            for i in 0..m {
                                for j in 0..my {
                                    g[k * per + i * my + j] += scale * bx.f[i] * by.f[j];
                                }
                            }
                        }
                    }
                }
                total
            }
            _ => unreachable!("target checked at construction"),
        }
    }

    /// `(F, ∇F, M)`; the gradient is empty unless requested.
    pub fn evaluate(&self, c: &[f64], with_grad: bool) -> (f64, Vec<f64>, f64) {
        let dc = self.coeffs(c);
        if !with_grad {
            let m = self.matching(&dc, None);
            let r2 = regularizer_sq(&dc, &self.gram, None);
            return (m * m + self.epsilon * r2, Vec::new(), m);
        }
        let mut gm = vec![0.0; c.len()];
        let m = self.matching(&dc, Some(&mut gm));
        let mut gr = vec![0.0; c.len()];
        let r2 = regularizer_sq(&dc, &self.gram, Some(&mut gr));
        let g = gm.iter().zip(&gr).map(|(a, b)| 2.0 * m * a + self.epsilon * b).collect();
        (m * m + self.epsilon * r2, g, m)
    }

    pub fn value(&self, c: &DisplacementCoeffs) -> f64 {
        self.evaluate(&c.coeffs, false).0
    }
}

/// `F(c) = M(c)² + ε R(c)²` for a single coefficient vector.
pub fn objective(frame: Frame, c: &DisplacementCoeffs, criterion: &Criterion, target: &Target, epsilon: f64) -> Result<f64> {
    Ok(Objective::new(frame, criterion, target, epsilon, c.m)?.value(c))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegisterOutcome {
    pub coeffs: DisplacementCoeffs,
    pub initial_objective: f64,
    pub objective: f64,
    pub matching: f64,
    pub iterations: usize,
    pub converged: bool,
    pub used_finite_differences: bool,
}

/// Local minimizer of the objective from `c0` by BFGS.
pub fn register_one(c0: &DisplacementCoeffs, obj: &Objective, cfg: &RegistrationConfig) -> Result<RegisterOutcome> {
    if c0.m != obj.m || c0.dim != obj.frame.dim {
        return Err(Error::arg("initial guess does not match the objective's order"));
    }
    let (f0, _, m0) = obj.evaluate(&c0.coeffs, false);
    if !f0.is_finite() {
        return Err(Error::Registration(format!("objective is {f0} at the initial guess (M = {})", obj.m)));
    }
    let opts = BfgsOptions {
        grad_tol: cfg.grad_tol,
        max_iter: cfg.max_iter,
        ..Default::default()
    };
    let res = minimize(
        |c: &[f64], g: bool| {
            let (f, grad, _) = obj.evaluate(c, g);
            Ok((f, grad))
        },
        &c0.coeffs,
        &opts,
    )
    .map_err(|e| Error::Registration(format!("optimizer failed at M = {}: {e}", obj.m)))?;
    if !res.value.is_finite() {
        return Err(Error::Registration(format!("non-finite objective after {} iterations", res.iterations)));
    }
    if res.value > f0 {
        return Err(Error::Registration(format!("objective increased from {f0} to {}", res.value)));
    }
    let coeffs = obj.coeffs(&res.x);
    let matching = if res.x == c0.coeffs { m0 } else { obj.evaluate(&res.x, false).2 };
    Ok(RegisterOutcome {
        coeffs,
        initial_objective: f0,
        objective: res.value,
        matching,
        iterations: res.iterations,
        converged: res.converged,
        used_finite_differences: res.used_finite_differences,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationResult {
    /// Selected polynomial order.
    pub m: usize,
    pub coeffs: Vec<DisplacementCoeffs>,
    /// Mean matching value per order, starting at `M = 1`.
    pub xi: Vec<f64>,
    /// Matching value per sample at the selected order.
    pub matching: Vec<f64>,
    /// False when `max_m` was reached without meeting the tolerance.
    pub converged: bool,
    pub total_iterations: usize,
}

/// Registers every target against the reference with continuation in `M`
/// and nearest-neighbour warm starts.
///
/// `coords` are sample coordinates normalized to the unit box; `z_ref` is the
/// reference's normalized position and acts as a solved anchor with zero
/// displacement.
pub fn register_all(
    frame: Frame,
    criterion: &Criterion,
    targets: &[Target],
    coords: &[Vec<f64>],
    z_ref: &[f64],
    cfg: &RegistrationConfig,
) -> Result<RegistrationResult> {
    cfg.validate()?;
    if targets.is_empty() || targets.len() != coords.len() {
        return Err(Error::arg("registration needs one coordinate per target"));
    }
    let dist2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    let mut order: Vec<usize> = (0..targets.len()).collect();
    order.sort_by(|&a, &b| dist2(&coords[a], z_ref).total_cmp(&dist2(&coords[b], z_ref)).then(a.cmp(&b)));

    let dim = frame.dim;
    let mut prev: Option<Vec<DisplacementCoeffs>> = None;
    let mut xi: Vec<f64> = Vec::new();
    let mut best: Option<(f64, usize, Vec<DisplacementCoeffs>, Vec<f64>)> = None;
    let mut total_iterations = 0;

    for m in 1..=cfg.max_m {
        let objectives: Vec<Objective> = targets
            .iter()
            .map(|t| Objective::new(frame, criterion, t, cfg.epsilon, m))
            .collect::<Result<_>>()?;
        let mut solved: Vec<Option<DisplacementCoeffs>> = vec![None; targets.len()];
        let mut matching = vec![0.0; targets.len()];
        let mut done: Vec<usize> = Vec::with_capacity(targets.len());
        let iterations_before = total_iterations;
        for &s in &order {
            let obj = &objectives[s];
            let mut candidates = Vec::with_capacity(2);
            if let Some(p) = &prev {
                candidates.push(p[s].padded(m)?);
            }
            // nearest solved sample at this order, the anchor counting as solved
            let mut near = (dist2(&coords[s], z_ref), None);
            for &d in &done {
                let dd = dist2(&coords[s], &coords[d]);
                if dd < near.0 {
                    near = (dd, Some(d));
                }
            }
            match near.1 {
                Some(d) => candidates.push(solved[d].clone().expect("solved")),
                None => candidates.push(DisplacementCoeffs::zeros(dim, m)?),
            }
            let start = candidates
                .into_iter()
                .map(|c| (obj.value(&c), c))
                .min_by(|a, b| a.0.total_cmp(&b.0))
                .map(|(_, c)| c)
                .expect("at least one candidate");
            let out = register_one(&start, obj, cfg)?;
            total_iterations += out.iterations;
            matching[s] = out.matching;
            solved[s] = Some(out.coeffs);
            done.push(s);
        }
        let coeffs: Vec<DisplacementCoeffs> = solved.into_iter().map(|c| c.expect("all solved")).collect();
        let xm = matching.iter().sum::<f64>() / matching.len() as f64;
        tracing::debug!(m, xi = xm, "registration level done");
        xi.push(xm);
        if best.as_ref().is_none_or(|b| xm < b.0) {
            best = Some((xm, m, coeffs.clone(), matching.clone()));
        }
        if m >= 2 {
            let last = xi[m - 2];
            // a level where no sample moved (symmetric new modes have zero
            // gradient at the padded start) is no evidence of convergence
            let moved = total_iterations > iterations_before;
            let stop = last == 0.0 || (moved && (xm - last).abs() / last <= cfg.tol_m);
            if stop {
                return Ok(RegistrationResult {
                    m,
                    coeffs,
                    xi,
                    matching,
                    converged: true,
                    total_iterations,
                });
            }
        }
        prev = Some(coeffs);
    }
    let (_, m, coeffs, matching) = best.expect("at least one level");
    tracing::warn!(max_m = cfg.max_m, "order selection did not meet its tolerance");
    Ok(RegistrationResult {
        m,
        coeffs,
        xi,
        matching,
        converged: false,
        total_iterations,
    })
}

/// `g = Π[u ∘ φ]`: per-cell quadrature of the piecewise-constant `u` at the
/// warped, clamped quadrature points.
pub fn transform_snapshot(u: &[f64], t: &SpatialTransform, quad: &CellQuadrature) -> Result<Field> {
    let grid = &quad.grid;
    if u.len() != grid.n_cells() {
        return Err(Error::arg("field does not match the grid"));
    }
    // every quadrature point stays in its own cell
    if t.coeffs.is_zero() {
        return Ok(u.to_vec());
    }
    let psi = t.psi_at_quadrature(quad);
    Ok(compose(u, grid, quad, |p| psi[p]))
}

/// `Π[u(x + d(x))]` with `d` given per quadrature point.
pub fn compose<D>(u: &[f64], grid: &Grid, quad: &CellQuadrature, disp: D) -> Field
where
    D: Fn(usize) -> Point,
{
    let mut out = vec![0.0; grid.n_cells()];
    for p in 0..quad.n_points() {
        let x = quad.point(p);
        let d = disp(p);
        let y = grid.clamp([x[0] + d[0], x[1] + d[1]]);
        out[quad.cell_of(p)] += quad.weight(p) * grid.eval_piecewise_constant(u, y);
    }
    out
}
