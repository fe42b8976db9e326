//! High-fidelity solvers and the three benchmark problems that generate
//! snapshots.

pub mod fv;
pub mod heat;
pub mod io;

use std::f64::consts::{PI, SQRT_2};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, Grid, Grid1D, Grid2D, Point};

pub use fv::Trajectory;

/// A parameter vector `z`; its components follow [`TestCase::param_names`].
pub type Sample = Vec<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestCaseId {
    Wave1d,
    Burgers2d,
    Heat2d,
}

impl TestCaseId {
    pub fn as_str(&self) -> &'static str {
        match self {
            TestCaseId::Wave1d => "wave1d",
            TestCaseId::Burgers2d => "burgers2d",
            TestCaseId::Heat2d => "heat2d",
        }
    }
}

pub const WAVE_T: f64 = 0.8;
pub const BURGERS_T: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestCase {
    pub id: TestCaseId,
    pub grid: Grid,
    /// Final time (zero for stationary problems).
    pub t_final: f64,
    pub param_names: Vec<String>,
    /// Parameter box `Z`, one `(lower, upper)` pair per component.
    pub bounds: Vec<(f64, f64)>,
}

impl TestCase {
    /// Wave system on `(-0.3, 3)` with `z = (t, μ) ∈ [0, 0.8] × [0.5, 2]`.
    pub fn wave1d(n_cells: usize) -> Result<Self> {
        Ok(Self {
            id: TestCaseId::Wave1d,
            grid: Grid::D1(Grid1D::new(-0.3, 3.0, n_cells)?),
            t_final: WAVE_T,
            param_names: vec!["t".into(), "mu".into()],
            bounds: vec![(0.0, WAVE_T), (0.5, 2.0)],
        })
    }

    /// Burgers on `(-0.1, 1.5)²` with `z = (t) ∈ [0, T]`.
    pub fn burgers2d(n_per_axis: usize, t_final: f64) -> Result<Self> {
        if !(t_final > 0.0 && t_final.is_finite()) {
            return Err(Error::arg("final time must be positive"));
        }
        Ok(Self {
            id: TestCaseId::Burgers2d,
            grid: Grid::D2(Grid2D::square(-0.1, 1.5, n_per_axis)?),
            t_final,
            param_names: vec!["t".into()],
            bounds: vec![(0.0, t_final)],
        })
    }

    /// Heat conduction on `(0, 1)²` with `z ∈ [-0.05, 0.05]`.
    pub fn heat2d(n_per_axis: usize) -> Result<Self> {
        Ok(Self {
            id: TestCaseId::Heat2d,
            grid: Grid::D2(Grid2D::square(0.0, 1.0, n_per_axis)?),
            t_final: 0.0,
            param_names: vec!["z".into()],
            bounds: vec![(-0.05, 0.05)],
        })
    }

    pub fn new(id: TestCaseId, n_per_axis: usize) -> Result<Self> {
        match id {
            TestCaseId::Wave1d => Self::wave1d(n_per_axis),
            TestCaseId::Burgers2d => Self::burgers2d(n_per_axis, BURGERS_T),
            TestCaseId::Heat2d => Self::heat2d(n_per_axis),
        }
    }

    pub fn n_params(&self) -> usize {
        self.bounds.len()
    }

    pub fn n_components(&self) -> usize {
        match self.id {
            TestCaseId::Wave1d => 2,
            _ => 1,
        }
    }

    /// Index of the time component of `z`, if the problem is transient.
    pub fn time_axis(&self) -> Option<usize> {
        match self.id {
            TestCaseId::Heat2d => None,
            _ => Some(0),
        }
    }

    pub fn contains(&self, z: &[f64]) -> bool {
        z.len() == self.n_params()
            && z.iter().zip(&self.bounds).all(|(v, (lo, hi))| v.is_finite() && *v >= *lo && *v <= *hi)
    }

    pub fn check_sample(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.n_params() {
            return Err(Error::arg(format!(
                "{} expects {} parameter components, got {}",
                self.id.as_str(),
                self.n_params(),
                z.len()
            )));
        }
        if !self.contains(z) {
            return Err(Error::arg(format!("sample {z:?} outside the parameter box {:?}", self.bounds)));
        }
        Ok(())
    }

    /// Parameter coordinates scaled to `[0, 1]` per component.
    pub fn normalize(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(&self.bounds)
            .map(|(v, (lo, hi))| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 })
            .collect()
    }

    /// Solves at every sample; one trajectory per distinct non-time parameter.
    /// `result[s][c]` is component `c` at sample `s`.
    pub fn sample_snapshots(&self, samples: &[Sample]) -> Result<Vec<Vec<Field>>> {
        sample_snapshots(self, samples)
    }
}

/// Sine bump `μ (sin(2π(x − shift)) + 1)` restricted to `[lo, lo + 0.5]`,
/// averaged exactly over `[l, r]`.
fn bump_average(l: f64, r: f64, lo: f64, shift: f64, mu: f64) -> f64 {
    let (a, b) = (l.max(lo), r.min(lo + 0.5));
    if b <= a {
        return 0.0;
    }
    let integral = (b - a) - ((2.0 * PI * (b - shift)).cos() - (2.0 * PI * (a - shift)).cos()) / (2.0 * PI);
    mu * integral / (r - l)
}

/// Cell averages of the two sine bumps `(w₁, w₂)`.
pub fn wave_bumps(grid: &Grid1D, mu: f64) -> (Field, Field) {
    let dx = grid.dx();
    let w1 = (0..grid.n_cells)
        .map(|i| {
            let l = grid.a + i as f64 * dx;
            bump_average(l, l + dx, -0.2, -0.2, mu)
        })
        .collect();
    let w2 = (0..grid.n_cells)
        .map(|i| {
            let l = grid.a + i as f64 * dx;
            bump_average(l, l + dx, 2.3, 2.3, mu)
        })
        .collect();
    (w1, w2)
}

/// Initial data `u₁ = (w₁ + w₂)/√2`, `u₂ = (w₁ − w₂)/√2`: the characteristic
/// variable `u₁ + u₂ = √2 w₁` travels right and `u₁ − u₂ = √2 w₂` travels left.
pub fn wave_initial(grid: &Grid1D, mu: f64) -> [Field; 2] {
    let (w1, w2) = wave_bumps(grid, mu);
    let u1 = w1.iter().zip(&w2).map(|(a, b)| (a + b) / SQRT_2).collect();
    let u2 = w1.iter().zip(&w2).map(|(a, b)| (a - b) / SQRT_2).collect();
    [u1, u2]
}

pub fn solve_wave_1d(grid: &Grid1D, mu: f64, times: &[f64]) -> Result<Trajectory> {
    if !(0.5..=2.0).contains(&mu) {
        return Err(Error::arg(format!("mu = {mu} outside [0.5, 2]")));
    }
    fv::solve_wave_system(grid, wave_initial(grid, mu), times, WAVE_T)
}

/// Exact cell averages of the indicator of `[0, 0.5]²`.
pub fn burgers_initial(grid: &Grid2D) -> Field {
    let overlap = |ax: &Grid1D, i: usize| -> f64 {
        let l = ax.a + i as f64 * ax.dx();
        let r = l + ax.dx();
        (r.min(0.5) - l.max(0.0)).max(0.0) / ax.dx()
    };
    let fx: Vec<f64> = (0..grid.nx()).map(|i| overlap(&grid.x, i)).collect();
    let fy: Vec<f64> = (0..grid.ny()).map(|j| overlap(&grid.y, j)).collect();
    let mut u = vec![0.0; grid.n_cells()];
    for (j, wy) in fy.iter().enumerate() {
        for (i, wx) in fx.iter().enumerate() {
            u[j * grid.nx() + i] = wx * wy;
        }
    }
    u
}

pub fn solve_burgers_2d(grid: &Grid2D, times: &[f64], t_final: f64) -> Result<Trajectory> {
    fv::solve_burgers(grid, burgers_initial(grid), times, t_final)
}

pub fn solve_heat_2d(grid: &Grid2D, z: f64) -> Result<Field> {
    if !(-0.05..=0.05).contains(&z) {
        return Err(Error::arg(format!("z = {z} outside [-0.05, 0.05]")));
    }
    Ok(heat::solve_poisson_p1(grid, |x| heat::conductivity(x, z))?.cell_values())
}

/// Half-width of the square high-conductivity inclusion.
pub const INCLUSION_HALF_WIDTH: f64 = 0.25;

/// `n_points` points evenly spaced by arclength along the boundary of the
/// inclusion centered at `(½ + z, ½ + z)`, counter-clockwise from its lower
/// left corner. Equal `n_points` give corresponding points for every `z`.
pub fn heat_inclusion_boundary(z: f64, n_points: usize) -> Vec<Point> {
    let h = INCLUSION_HALF_WIDTH;
    let (lo, side) = (0.5 + z - h, 2.0 * h);
    (0..n_points)
        .map(|k| {
            let s = 4.0 * k as f64 / n_points as f64;
            let (edge, t) = ((s.floor() as usize).min(3), s - s.floor().min(3.0));
            let t = t * side;
            match edge {
                0 => [lo + t, lo],
                1 => [lo + side, lo + t],
                2 => [lo + side - t, lo + side],
                _ => [lo, lo + side - t],
            }
        })
        .collect()
}

/// Solves one HF problem per distinct non-time parameter and extracts the
/// requested snapshots. `result[s][c]` is component `c` at sample `s`.
pub fn sample_snapshots(test: &TestCase, samples: &[Sample]) -> Result<Vec<Vec<Field>>> {
    Ok(sample_snapshots_timed(test, samples)?.0)
}

/// [`sample_snapshots`] plus the wall-clock seconds attributed to each
/// sample. Samples sharing a trajectory split its cost in proportion to
/// their time; a stationary or single-sample solve is charged in full.
pub fn sample_snapshots_timed(test: &TestCase, samples: &[Sample]) -> Result<(Vec<Vec<Field>>, Vec<f64>)> {
    for z in samples {
        test.check_sample(z)?;
    }
    // group samples by the non-time part of z
    let mut groups: Vec<(Vec<f64>, Vec<usize>)> = Vec::new();
    for (s, z) in samples.iter().enumerate() {
        let key: Vec<f64> = match test.time_axis() {
            Some(ax) => z.iter().enumerate().filter(|(k, _)| *k != ax).map(|(_, v)| *v).collect(),
            None => z.clone(),
        };
        match groups.iter_mut().find(|(k, _)| k.iter().zip(&key).all(|(a, b)| a.to_bits() == b.to_bits())) {
            Some((_, members)) => members.push(s),
            None => groups.push((key, vec![s])),
        }
    }
    type Solved = Vec<(usize, Vec<Field>, f64)>;
    let solved: Vec<Solved> = groups
        .par_iter()
        .map(|(key, members)| -> Result<Solved> {
            let times: Vec<f64> = match test.time_axis() {
                Some(ax) => members.iter().map(|&s| samples[s][ax]).collect(),
                None => Vec::new(),
            };
            let start = Instant::now();
            let fields: Vec<Vec<Field>> = match (test.id, &test.grid) {
                (TestCaseId::Wave1d, Grid::D1(g)) => solve_wave_1d(g, key[0], &times)?.fields,
                (TestCaseId::Burgers2d, Grid::D2(g)) => solve_burgers_2d(g, &times, test.t_final)?.fields,
                (TestCaseId::Heat2d, Grid::D2(g)) => vec![vec![solve_heat_2d(g, key[0])?]],
                _ => return Err(Error::Config("test case and grid dimension disagree".into())),
            };
            let elapsed = start.elapsed().as_secs_f64();
            let t_max = times.iter().fold(0.0f64, |a, t| a.max(*t));
            let share = |k: usize| {
                if members.len() == 1 || t_max == 0.0 {
                    elapsed
                } else {
                    elapsed * times[k] / t_max
                }
            };
            Ok(members.iter().copied().zip(fields).enumerate().map(|(k, (s, f))| (s, f, share(k))).collect())
        })
        .collect::<Result<_>>()?;
    let mut out = vec![Vec::new(); samples.len()];
    let mut seconds = vec![0.0; samples.len()];
    for (s, f, t) in solved.into_iter().flatten() {
        out[s] = f;
        seconds[s] = t;
    }
    Ok((out, seconds))
}

/// Uniform tensor layout over the box; each axis count ≥ 2 includes both ends.
pub fn tensor_samples(bounds: &[(f64, f64)], counts: &[usize]) -> Result<Vec<Sample>> {
    if bounds.len() != counts.len() {
        return Err(Error::Config("sample layout dimension does not match the parameter box".into()));
    }
    if counts.contains(&0) {
        return Err(Error::Config("every sample-layout axis needs at least one point".into()));
    }
    let axes: Vec<Vec<f64>> = bounds
        .iter()
        .zip(counts)
        .map(|((lo, hi), &n)| {
            if n == 1 {
                vec![0.5 * (lo + hi)]
            } else {
                (0..n)
                    .map(|k| {
                        let s = k as f64 / (n - 1) as f64;
                        (1.0 - s) * lo + s * hi
                    })
                    .collect()
            }
        })
        .collect();
    let mut out: Vec<Sample> = vec![Vec::new()];
    for axis in &axes {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                axis.iter().map(move |v| {
                    let mut z = prefix.clone();
                    z.push(*v);
                    z
                })
            })
            .collect();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bump_cell_average_matches_quadrature() {
        let g = Grid1D::new(-0.3, 3.0, 50).unwrap();
        let (w1, w2) = wave_bumps(&g, 1.3);
        let mass1: f64 = w1.iter().sum::<f64>() * g.dx();
        let mass2: f64 = w2.iter().sum::<f64>() * g.dx();
        // ∫₀^½ (sin(2πs) + 1) ds = ½ + 1/π
        let exact = 1.3 * (0.5 + 1.0 / PI);
        assert!((mass1 - exact).abs() < 1e-12);
        assert!((mass2 - exact).abs() < 1e-12);
    }

    #[test]
    fn inclusion_boundary_points_lie_on_the_square() {
        let pts = heat_inclusion_boundary(0.03, 400);
        assert_eq!(pts.len(), 400);
        assert_eq!(pts[0], [0.28, 0.28]);
        assert!((pts[100][0] - 0.78).abs() < 1e-15 && (pts[100][1] - 0.28).abs() < 1e-15);
        for p in &pts {
            let d = (p[0] - 0.53).abs().max((p[1] - 0.53).abs());
            assert!((d - 0.25).abs() < 1e-14);
        }
        let shifted = heat_inclusion_boundary(0.0, 400);
        for (a, b) in pts.iter().zip(&shifted) {
            assert!((a[0] - b[0] - 0.03).abs() < 1e-14 && (a[1] - b[1] - 0.03).abs() < 1e-14);
        }
    }

    #[test]
    fn tensor_layout_counts_and_corners() {
        let s = tensor_samples(&[(0.0, 0.8), (0.5, 2.0)], &[40, 20]).unwrap();
        assert_eq!(s.len(), 800);
        assert_eq!(s[0], vec![0.0, 0.5]);
        assert_eq!(s[799], vec![0.8, 2.0]);
    }

    #[test]
    fn out_of_box_sample_rejected() {
        let t = TestCase::heat2d(4).unwrap();
        assert!(matches!(t.sample_snapshots(&[vec![0.2]]), Err(Error::Argument(_))));
        let t = TestCase::wave1d(10).unwrap();
        assert!(matches!(t.sample_snapshots(&[vec![0.1]]), Err(Error::Argument(_))));
    }

    #[test]
    fn burgers_initial_mass_is_exact() {
        let g = Grid2D::square(-0.1, 1.5, 37).unwrap();
        let m: f64 = burgers_initial(&g).iter().sum::<f64>() * g.cell_area();
        assert!((m - 0.25).abs() < 1e-13);
    }
}
