//! Structured cell-centered grids, tensor Gauss-Legendre rules and the P1
//! nodal space used for inverse displacements.
//!
//! Cells are numbered with the first axis running fastest: cell `(i, j)` of a
//! 2D grid has index `j * nx + i`. Points are `[f64; 2]`; 1D code only reads
//! the first component.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::{Csr, TripletBuilder};

pub type Point = [f64; 2];

/// Degrees of freedom of a scalar function on a grid, one value per cell.
pub type Field = Vec<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    pub a: f64,
    pub b: f64,
    pub n_cells: usize,
}

impl Grid1D {
    pub fn new(a: f64, b: f64, n_cells: usize) -> Result<Self> {
        if !(a.is_finite() && b.is_finite()) || b <= a {
            return Err(Error::arg(format!("grid bounds must satisfy a < b, got [{a}, {b}]")));
        }
        if n_cells == 0 {
            return Err(Error::arg("grid needs at least one cell"));
        }
        Ok(Self { a, b, n_cells })
    }

    #[inline]
    pub fn dx(&self) -> f64 {
        (self.b - self.a) / self.n_cells as f64
    }

    #[inline]
    pub fn length(&self) -> f64 {
        self.b - self.a
    }

    #[inline]
    pub fn center(&self, i: usize) -> f64 {
        self.a + (i as f64 + 0.5) * self.dx()
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.n_cells).map(|i| self.center(i)).collect()
    }

    /// Index of the cell containing `x`; points outside are clamped.
    #[inline]
    pub fn locate(&self, x: f64) -> usize {
        let s = ((x - self.a) / self.dx()).floor();
        if s <= 0.0 {
            0
        } else {
            (s as usize).min(self.n_cells - 1)
        }
    }

    #[inline]
    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.a, self.b)
    }

    /// Affine map to the unit interval.
    #[inline]
    pub fn to_unit(&self, x: f64) -> f64 {
        (x - self.a) / self.length()
    }

    /// Linear-interpolation stencil between cell centers, constant beyond the
    /// outermost centers. Returns `(left cell, weight of right cell, d weight / dx)`.
    #[inline]
    fn linear_stencil(&self, x: f64) -> (usize, f64, f64) {
        let n = self.n_cells;
        if n == 1 {
            return (0, 0.0, 0.0);
        }
        let dx = self.dx();
        let s = (x - self.a) / dx - 0.5;
        if s <= 0.0 {
            (0, 0.0, 0.0)
        } else if s >= (n - 1) as f64 {
            (n - 2, 1.0, 0.0)
        } else {
            let i0 = (s.floor() as usize).min(n - 2);
            (i0, s - i0 as f64, 1.0 / dx)
        }
    }
}

/// 1D cell-centered linear interpolant: value and derivative at `x`.
pub fn interp_linear_1d(grid: &Grid1D, values: &[f64], x: f64) -> (f64, f64) {
    let (i0, t, dt) = grid.linear_stencil(x);
    if grid.n_cells == 1 {
        return (values[0], 0.0);
    }
    let (u0, u1) = (values[i0], values[i0 + 1]);
    (u0 + t * (u1 - u0), dt * (u1 - u0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid2D {
    pub x: Grid1D,
    pub y: Grid1D,
}

impl Grid2D {
    pub fn new(x: Grid1D, y: Grid1D) -> Self {
        Self { x, y }
    }

    pub fn square(a: f64, b: f64, n: usize) -> Result<Self> {
        let axis = Grid1D::new(a, b, n)?;
        Ok(Self { x: axis, y: axis })
    }

    #[inline]
    pub fn nx(&self) -> usize {
        self.x.n_cells
    }

    #[inline]
    pub fn ny(&self) -> usize {
        self.y.n_cells
    }

    #[inline]
    pub fn n_cells(&self) -> usize {
        self.nx() * self.ny()
    }

    #[inline]
    pub fn cell_area(&self) -> f64 {
        self.x.dx() * self.y.dx()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx() + i
    }

    #[inline]
    pub fn center(&self, cell: usize) -> Point {
        let (i, j) = (cell % self.nx(), cell / self.nx());
        [self.x.center(i), self.y.center(j)]
    }

    pub fn centers(&self) -> Vec<Point> {
        (0..self.n_cells()).map(|c| self.center(c)).collect()
    }

    #[inline]
    pub fn locate(&self, p: Point) -> usize {
        self.index(self.x.locate(p[0]), self.y.locate(p[1]))
    }
}

/// Bilinear interpolant through cell centers: value and gradient at `p`.
pub fn interp_bilinear(grid: &Grid2D, values: &[f64], p: Point) -> (f64, Point) {
    let nx = grid.nx();
    let (i0, tx, dtx) = grid.x.linear_stencil(p[0]);
    let (j0, ty, dty) = grid.y.linear_stencil(p[1]);
    let i1 = if nx == 1 { 0 } else { i0 + 1 };
    let j1 = if grid.ny() == 1 { 0 } else { j0 + 1 };
    let u00 = values[j0 * nx + i0];
    let u10 = values[j0 * nx + i1];
    let u01 = values[j1 * nx + i0];
    let u11 = values[j1 * nx + i1];
    let bottom = u00 + tx * (u10 - u00);
    let top = u01 + tx * (u11 - u01);
    let v = bottom + ty * (top - bottom);
    let gx = dtx * ((1.0 - ty) * (u10 - u00) + ty * (u11 - u01));
    let gy = dty * (top - bottom);
    (v, [gx, gy])
}

/// A structured grid in one or two space dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dim", rename_all = "snake_case")]
pub enum Grid {
    #[serde(rename = "1")]
    D1(Grid1D),
    #[serde(rename = "2")]
    D2(Grid2D),
}

impl Grid {
    pub fn dim(&self) -> usize {
        match self {
            Grid::D1(_) => 1,
            Grid::D2(_) => 2,
        }
    }

    pub fn n_cells(&self) -> usize {
        match self {
            Grid::D1(g) => g.n_cells,
            Grid::D2(g) => g.n_cells(),
        }
    }

    pub fn cell_volume(&self) -> f64 {
        match self {
            Grid::D1(g) => g.dx(),
            Grid::D2(g) => g.cell_area(),
        }
    }

    pub fn axis(&self, k: usize) -> &Grid1D {
        match (self, k) {
            (Grid::D1(g), 0) => g,
            (Grid::D2(g), 0) => &g.x,
            (Grid::D2(g), 1) => &g.y,
            _ => panic!("axis {k} out of range for a {}D grid", self.dim()),
        }
    }

    pub fn axes(&self) -> Vec<Grid1D> {
        (0..self.dim()).map(|k| *self.axis(k)).collect()
    }

    /// Largest cell width over all axes.
    pub fn max_cell_width(&self) -> f64 {
        self.axes().iter().map(Grid1D::dx).fold(0.0, f64::max)
    }

    pub fn center(&self, cell: usize) -> Point {
        match self {
            Grid::D1(g) => [g.center(cell), 0.0],
            Grid::D2(g) => g.center(cell),
        }
    }

    pub fn locate(&self, p: Point) -> usize {
        match self {
            Grid::D1(g) => g.locate(p[0]),
            Grid::D2(g) => g.locate(p),
        }
    }

    pub fn clamp(&self, p: Point) -> Point {
        match self {
            Grid::D1(g) => [g.clamp(p[0]), 0.0],
            Grid::D2(g) => [g.x.clamp(p[0]), g.y.clamp(p[1])],
        }
    }

    pub fn contains(&self, p: Point) -> bool {
        (0..self.dim()).all(|k| {
            let ax = self.axis(k);
            p[k] >= ax.a && p[k] <= ax.b
        })
    }

    /// Piecewise-constant evaluation of a cell field (the X_N function itself).
    #[inline]
    pub fn eval_piecewise_constant(&self, values: &[f64], p: Point) -> f64 {
        values[self.locate(p)]
    }

    /// Continuous (bi)linear interpolant through the cell centers.
    pub fn interpolate(&self, values: &[f64], p: Point) -> (f64, Point) {
        match self {
            Grid::D1(g) => {
                let (v, d) = interp_linear_1d(g, values, p[0]);
                (v, [d, 0.0])
            }
            Grid::D2(g) => interp_bilinear(g, values, p),
        }
    }

    /// Cell-area weighted L1 norm.
    pub fn l1_norm(&self, values: &[f64]) -> f64 {
        self.cell_volume() * values.iter().map(|v| v.abs()).sum::<f64>()
    }

    /// Cell-area weighted L2 inner product.
    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        self.cell_volume() * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
    }
}

pub fn make_grid_1d(a: f64, b: f64, n_cells: usize) -> Result<Grid1D> {
    Grid1D::new(a, b, n_cells)
}

/// Gauss-Legendre nodes and weights mapped to `[0, 1]`; weights sum to one.
pub fn gauss_legendre(order: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if order == 0 {
        return Err(Error::arg("quadrature order must be at least 1"));
    }
    let n = order;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Newton on P_n starting from the Tricomi approximation.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let step = p / d;
            x -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        // x runs from +1 downward; store ascending in [0, 1].
        nodes[n - 1 - i] = 0.5 * (1.0 + x);
        nodes[i] = 0.5 * (1.0 - x);
        weights[n - 1 - i] = 0.5 * w;
        weights[i] = 0.5 * w;
    }
    Ok((nodes, weights))
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Tensor Gauss-Legendre rule on the reference cell `[0,1]^dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub dim: usize,
    pub order: usize,
    pub nodes_1d: Vec<f64>,
    pub weights_1d: Vec<f64>,
    /// Reference points, first axis fastest.
    pub points: Vec<Point>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn tensor(order: usize, dim: usize) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::arg(format!("unsupported quadrature dimension {dim}")));
        }
        let (nodes_1d, weights_1d) = gauss_legendre(order)?;
        let mut points = Vec::new();
        let mut weights = Vec::new();
        if dim == 1 {
            for (x, w) in nodes_1d.iter().zip(&weights_1d) {
                points.push([*x, 0.0]);
                weights.push(*w);
            }
        } else {
            for (y, wy) in nodes_1d.iter().zip(&weights_1d) {
                for (x, wx) in nodes_1d.iter().zip(&weights_1d) {
                    points.push([*x, *y]);
                    weights.push(wx * wy);
                }
            }
        }
        Ok(Self {
            dim,
            order,
            nodes_1d,
            weights_1d,
            points,
            weights,
        })
    }

    /// Highest per-axis polynomial degree integrated exactly.
    pub fn exact_degree(&self) -> usize {
        2 * self.order - 1
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

pub fn gauss_legendre_2d(order: usize) -> Result<QuadratureRule> {
    QuadratureRule::tensor(order, 2)
}

/// Physical quadrature points of every cell laid out as a tensor product of
/// per-axis coordinate lists. Point `(px, py)` belongs to cell
/// `(px / order, py / order)`.
#[derive(Debug, Clone)]
pub struct CellQuadrature {
    pub grid: Grid,
    pub order: usize,
    /// Physical coordinates of the quadrature abscissae along each axis.
    pub coords: Vec<Vec<f64>>,
    /// Reference weights (summing to one per cell and axis) along each axis.
    pub weights: Vec<Vec<f64>>,
}

impl CellQuadrature {
    pub fn new(grid: &Grid, rule: &QuadratureRule) -> Result<Self> {
        if rule.dim != grid.dim() {
            return Err(Error::arg("quadrature rule and grid dimensions differ"));
        }
        let mut coords = Vec::new();
        let mut weights = Vec::new();
        for ax in grid.axes() {
            let dx = ax.dx();
            let mut c = Vec::with_capacity(ax.n_cells * rule.order);
            let mut w = Vec::with_capacity(ax.n_cells * rule.order);
            for i in 0..ax.n_cells {
                for (node, wt) in rule.nodes_1d.iter().zip(&rule.weights_1d) {
                    c.push(ax.a + (i as f64 + node) * dx);
                    w.push(*wt);
                }
            }
            coords.push(c);
            weights.push(w);
        }
        Ok(Self {
            grid: *grid,
            order: rule.order,
            coords,
            weights,
        })
    }

    pub fn n_points(&self) -> usize {
        self.coords.iter().map(Vec::len).product()
    }

    /// Number of points along the first axis.
    pub fn stride(&self) -> usize {
        self.coords[0].len()
    }

    #[inline]
    pub fn point(&self, p: usize) -> Point {
        let s = self.stride();
        if self.coords.len() == 1 {
            [self.coords[0][p], 0.0]
        } else {
            [self.coords[0][p % s], self.coords[1][p / s]]
        }
    }

    /// Reference weight of point `p` (sums to one over each cell).
    #[inline]
    pub fn weight(&self, p: usize) -> f64 {
        let s = self.stride();
        if self.coords.len() == 1 {
            self.weights[0][p]
        } else {
            self.weights[0][p % s] * self.weights[1][p / s]
        }
    }

    #[inline]
    pub fn cell_of(&self, p: usize) -> usize {
        let s = self.stride();
        if self.coords.len() == 1 {
            p / self.order
        } else {
            let (px, py) = (p % s, p / s);
            (py / self.order) * (s / self.order) + px / self.order
        }
    }

    /// Averages point values into cells: `out[c] = Σ_q w_q values[q]`.
    pub fn average_to_cells(&self, values: &[f64]) -> Field {
        let mut out = vec![0.0; self.grid.n_cells()];
        for (p, v) in values.iter().enumerate() {
            out[self.cell_of(p)] += self.weight(p) * v;
        }
        out
    }
}

/// Cell-wise quadrature average of `f` (the projection onto piecewise constants).
pub fn project_to_cells<F>(mut f: F, grid: &Grid, rule: &QuadratureRule) -> Result<Field>
where
    F: FnMut(Point) -> Result<f64>,
{
    let quad = CellQuadrature::new(grid, rule)?;
    let mut out = vec![0.0; grid.n_cells()];
    for p in 0..quad.n_points() {
        out[quad.cell_of(p)] += quad.weight(p) * f(quad.point(p))?;
    }
    Ok(out)
}

/// Two triangles per structured cell, split along the cell's rising diagonal.
#[derive(Debug, Clone)]
pub struct Triangulation {
    pub grid: Grid2D,
    pub vertices: Vec<Point>,
    pub triangles: Vec<[usize; 3]>,
}

impl Triangulation {
    pub fn from_grid(grid: &Grid2D) -> Self {
        let (nx, ny) = (grid.nx(), grid.ny());
        let (dx, dy) = (grid.x.dx(), grid.y.dx());
        let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            for i in 0..=nx {
                vertices.push([grid.x.a + i as f64 * dx, grid.y.a + j as f64 * dy]);
            }
        }
        let v = |i: usize, j: usize| j * (nx + 1) + i;
        let mut triangles = Vec::with_capacity(2 * nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                triangles.push([v(i, j), v(i + 1, j), v(i + 1, j + 1)]);
                triangles.push([v(i, j), v(i + 1, j + 1), v(i, j + 1)]);
            }
        }
        Self {
            grid: *grid,
            vertices,
            triangles,
        }
    }

    pub fn signed_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        let (pa, pb, pc) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        0.5 * ((pb[0] - pa[0]) * (pc[1] - pa[1]) - (pc[0] - pa[0]) * (pb[1] - pa[1]))
    }

    pub fn is_boundary_vertex(&self, v: usize) -> bool {
        let (nx, ny) = (self.grid.nx(), self.grid.ny());
        let (i, j) = (v % (nx + 1), v / (nx + 1));
        i == 0 || j == 0 || i == nx || j == ny
    }
}

/// Continuous piecewise-linear functions on the vertices of a structured grid
/// (intervals in 1D, the two-triangle split in 2D).
#[derive(Debug, Clone)]
pub enum P1Space {
    Line(Grid1D),
    Tri(Triangulation),
}

impl P1Space {
    pub fn new(grid: &Grid) -> Self {
        match grid {
            Grid::D1(g) => P1Space::Line(*g),
            Grid::D2(g) => P1Space::Tri(Triangulation::from_grid(g)),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            P1Space::Line(_) => 1,
            P1Space::Tri(_) => 2,
        }
    }

    pub fn n_nodes(&self) -> usize {
        match self {
            P1Space::Line(g) => g.n_cells + 1,
            P1Space::Tri(t) => t.vertices.len(),
        }
    }

    pub fn node(&self, v: usize) -> Point {
        match self {
            P1Space::Line(g) => [g.a + v as f64 * g.dx(), 0.0],
            P1Space::Tri(t) => t.vertices[v],
        }
    }

    pub fn is_boundary(&self, v: usize) -> bool {
        match self {
            P1Space::Line(g) => v == 0 || v == g.n_cells,
            P1Space::Tri(t) => t.is_boundary_vertex(v),
        }
    }

    pub fn n_elements(&self) -> usize {
        match self {
            P1Space::Line(g) => g.n_cells,
            P1Space::Tri(t) => t.triangles.len(),
        }
    }

    /// Nodes and barycentric weights of the element containing `p` (clamped).
    /// In 1D the third entry carries zero weight.
    pub fn shape_at(&self, p: Point) -> [(usize, f64); 3] {
        match self {
            P1Space::Line(g) => {
                let x = g.clamp(p[0]);
                let i = g.locate(x);
                let t = ((x - g.a) / g.dx() - i as f64).clamp(0.0, 1.0);
                [(i, 1.0 - t), (i + 1, t), (i, 0.0)]
            }
            P1Space::Tri(tri) => {
                let g = &tri.grid;
                let (x, y) = (g.x.clamp(p[0]), g.y.clamp(p[1]));
                let (i, j) = (g.x.locate(x), g.y.locate(y));
                let xi = ((x - g.x.a) / g.x.dx() - i as f64).clamp(0.0, 1.0);
                let eta = ((y - g.y.a) / g.y.dx() - j as f64).clamp(0.0, 1.0);
                let nx1 = g.nx() + 1;
                let v = |a: usize, b: usize| (j + b) * nx1 + i + a;
                if xi >= eta {
                    [(v(0, 0), 1.0 - xi), (v(1, 0), xi - eta), (v(1, 1), eta)]
                } else {
                    [(v(0, 0), 1.0 - eta), (v(1, 1), xi), (v(0, 1), eta - xi)]
                }
            }
        }
    }

    pub fn eval(&self, nodal: &[f64], p: Point) -> f64 {
        self.shape_at(p).iter().map(|(v, w)| w * nodal[*v]).sum()
    }

    /// Consistent mass matrix.
    pub fn mass_matrix(&self) -> Csr {
        let n = self.n_nodes();
        let mut b = TripletBuilder::new(n, n);
        match self {
            P1Space::Line(g) => {
                let h = g.dx();
                for i in 0..g.n_cells {
                    b.add(i, i, h / 3.0);
                    b.add(i + 1, i + 1, h / 3.0);
                    b.add(i, i + 1, h / 6.0);
                    b.add(i + 1, i, h / 6.0);
                }
            }
            P1Space::Tri(t) => {
                for (k, tri) in t.triangles.iter().enumerate() {
                    let area = t.signed_area(k);
                    for a in 0..3 {
                        for c in 0..3 {
                            let m = if a == c { area / 6.0 } else { area / 12.0 };
                            b.add(tri[a], tri[c], m);
                        }
                    }
                }
            }
        }
        b.build()
    }

    /// Gradient of `nodal` on element `e` (constant per element).
    pub fn element_gradient(&self, nodal: &[f64], e: usize) -> Point {
        match self {
            P1Space::Line(g) => [(nodal[e + 1] - nodal[e]) / g.dx(), 0.0],
            P1Space::Tri(t) => {
                let [a, b, c] = t.triangles[e];
                let (pa, pb, pc) = (t.vertices[a], t.vertices[b], t.vertices[c]);
                let (ua, ub, uc) = (nodal[a], nodal[b], nodal[c]);
                let det = (pb[0] - pa[0]) * (pc[1] - pa[1]) - (pc[0] - pa[0]) * (pb[1] - pa[1]);
                let gx = ((ub - ua) * (pc[1] - pa[1]) - (uc - ua) * (pb[1] - pa[1])) / det;
                let gy = ((uc - ua) * (pb[0] - pa[0]) - (ub - ua) * (pc[0] - pa[0])) / det;
                [gx, gy]
            }
        }
    }
}
