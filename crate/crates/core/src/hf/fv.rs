//! Second-order finite-volume schemes: MUSCL reconstruction with the Van Leer
//! limiter, local Lax-Friedrichs fluxes and two-stage SSP Runge-Kutta.
//! Ghost cells carry the zero state on every boundary.

use crate::error::{Error, Result};
use crate::grid::{Field, Grid1D, Grid2D};

pub const CFL: f64 = 0.5;

/// Van Leer limited slope from the backward and forward differences.
#[inline]
pub fn van_leer(dm: f64, dp: f64) -> f64 {
    let prod = dm * dp;
    if prod > 0.0 {
        2.0 * prod / (dm + dp)
    } else {
        0.0
    }
}

/// Time levels produced by a solver, with the cumulative outflow through the
/// boundary (per component) needed for mass balance checks.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// `fields[k][c]` is component `c` at `times[k]`.
    pub fields: Vec<Vec<Field>>,
    /// `outflow[k][c]`: integral over `[0, times[k]]` of the net boundary flux leaving Ω.
    pub outflow: Vec<Vec<f64>>,
    pub steps: usize,
}

/// Advances a state with a fixed-step SSP-RK2 loop and samples it at the
/// requested times by linear interpolation between bracketing steps.
struct Sampler<'a> {
    order: Vec<usize>,
    times: &'a [f64],
    next: usize,
    fields: Vec<Option<Vec<Field>>>,
    outflow: Vec<Option<Vec<f64>>>,
}

impl<'a> Sampler<'a> {
    fn new(times: &'a [f64]) -> Self {
        let mut order: Vec<usize> = (0..times.len()).collect();
        order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
        Self {
            order,
            times,
            next: 0,
            fields: vec![None; times.len()],
            outflow: vec![None; times.len()],
        }
    }

    fn done(&self) -> bool {
        self.next == self.order.len()
    }

    /// Records every pending time in `[t0, t1]` from the states at both ends.
    fn record(&mut self, t0: f64, u0: &[Field], q0: &[f64], t1: f64, u1: &[Field], q1: &[f64]) {
        while self.next < self.order.len() {
            let k = self.order[self.next];
            let t = self.times[k];
            if t > t1 {
                break;
            }
            let s = if t1 > t0 { ((t - t0) / (t1 - t0)).clamp(0.0, 1.0) } else { 1.0 };
            let lerp = |a: f64, b: f64| if s == 0.0 { a } else if s == 1.0 { b } else { a + s * (b - a) };
            self.fields[k] = Some(
                u0.iter()
                    .zip(u1)
                    .map(|(a, b)| a.iter().zip(b).map(|(x, y)| lerp(*x, *y)).collect())
                    .collect(),
            );
            self.outflow[k] = Some(q0.iter().zip(q1).map(|(x, y)| lerp(*x, *y)).collect());
            self.next += 1;
        }
    }

    fn finish(self, steps: usize) -> Trajectory {
        Trajectory {
            times: self.times.to_vec(),
            fields: self.fields.into_iter().map(|f| f.expect("all times recorded")).collect(),
            outflow: self.outflow.into_iter().map(|f| f.expect("all times recorded")).collect(),
            steps,
        }
    }
}

fn check_times(times: &[f64], t_max: f64) -> Result<()> {
    if times.is_empty() {
        return Err(Error::arg("at least one output time is required"));
    }
    for &t in times {
        if !(0.0..=t_max).contains(&t) {
            return Err(Error::arg(format!("time {t} outside [0, {t_max}]")));
        }
    }
    Ok(())
}

/// Semi-discrete operator for the 1D linear system `u_t + A u_x = 0`,
/// `A = [[0, 1], [1, 0]]`. Returns the net boundary outflow per component.
fn wave_rhs(u: &[Field], dx: f64, out: &mut [Field]) -> [f64; 2] {
    let n = u[0].len();
    let get = |c: usize, i: isize| -> f64 {
        if i < 0 || i >= n as isize {
            0.0
        } else {
            u[c][i as usize]
        }
    };
    let slope = |c: usize, i: isize| -> f64 {
        if i < 0 || i >= n as isize {
            0.0
        } else {
            van_leer(get(c, i) - get(c, i - 1), get(c, i + 1) - get(c, i))
        }
    };
    // face f sits between cells f-1 and f, f = 0..=n
    let mut flux_prev = [0.0; 2];
    let mut left_flux = [0.0; 2];
    for f in 0..=n as isize {
        let mut ul = [0.0; 2];
        let mut ur = [0.0; 2];
        for c in 0..2 {
            ul[c] = get(c, f - 1) + 0.5 * slope(c, f - 1);
            ur[c] = get(c, f) - 0.5 * slope(c, f);
        }
        // A u = (u2, u1); spectral radius 1
        let flux = [
            0.5 * (ul[1] + ur[1]) - 0.5 * (ur[0] - ul[0]),
            0.5 * (ul[0] + ur[0]) - 0.5 * (ur[1] - ul[1]),
        ];
        if f == 0 {
            left_flux = flux;
        } else {
            let i = (f - 1) as usize;
            for c in 0..2 {
                out[c][i] = -(flux[c] - flux_prev[c]) / dx;
            }
        }
        flux_prev = flux;
    }
    [flux_prev[0] - left_flux[0], flux_prev[1] - left_flux[1]]
}

/// Solves the 1D wave system from the given cell-averaged initial data.
pub fn solve_wave_system(grid: &Grid1D, u0: [Field; 2], times: &[f64], t_max: f64) -> Result<Trajectory> {
    check_times(times, t_max)?;
    let speed = 1.0;
    if speed <= 0.0 {
        return Err(Error::Numerical("degenerate wave speed in CFL condition".into()));
    }
    let dx = grid.dx();
    let dt_nominal = CFL * dx / speed;
    let t_end = times.iter().copied().fold(0.0, f64::max);
    let mut u: Vec<Field> = u0.to_vec();
    let mut q = vec![0.0; 2];
    let mut t = 0.0;
    let mut sampler = Sampler::new(times);
    sampler.record(0.0, &u, &q, 0.0, &u, &q);
    let n = grid.n_cells;
    let mut k1 = vec![vec![0.0; n]; 2];
    let mut k2 = vec![vec![0.0; n]; 2];
    let mut u1 = vec![vec![0.0; n]; 2];
    let mut steps = 0;
    while !sampler.done() {
        let dt = dt_nominal.min(t_end - t).max(f64::MIN_POSITIVE);
        let o1 = wave_rhs(&u, dx, &mut k1);
        for c in 0..2 {
            for i in 0..n {
                u1[c][i] = u[c][i] + dt * k1[c][i];
            }
        }
        let o2 = wave_rhs(&u1, dx, &mut k2);
        let mut un = u.clone();
        let mut qn = q.clone();
        for c in 0..2 {
            for i in 0..n {
                un[c][i] = 0.5 * u[c][i] + 0.5 * (u1[c][i] + dt * k2[c][i]);
            }
            qn[c] += 0.5 * dt * (o1[c] + o2[c]);
        }
        let tn = t + dt;
        sampler.record(t, &u, &q, tn, &un, &qn);
        u = un;
        q = qn;
        t = tn;
        steps += 1;
    }
    Ok(sampler.finish(steps))
}

/// Semi-discrete operator for 2D Burgers, `u_t + (u²/2)_x + (u²/2)_y = 0`.
/// Returns the net outflow through ∂Ω (area-integrated rate).
fn burgers_rhs(grid: &Grid2D, u: &[f64], out: &mut [f64], slope_x: &mut [f64], slope_y: &mut [f64]) -> f64 {
    let (nx, ny) = (grid.nx(), grid.ny());
    let (dx, dy) = (grid.x.dx(), grid.y.dx());
    let at = |i: isize, j: isize| -> f64 {
        if i < 0 || j < 0 || i >= nx as isize || j >= ny as isize {
            0.0
        } else {
            u[j as usize * nx + i as usize]
        }
    };
    for j in 0..ny as isize {
        for i in 0..nx as isize {
            let c = at(i, j);
            let k = j as usize * nx + i as usize;
            slope_x[k] = van_leer(c - at(i - 1, j), at(i + 1, j) - c);
            slope_y[k] = van_leer(c - at(i, j - 1), at(i, j + 1) - c);
        }
    }
    let sx = |i: isize, j: isize| -> f64 {
        if i < 0 || i >= nx as isize {
            0.0
        } else {
            slope_x[j as usize * nx + i as usize]
        }
    };
    let sy = |i: isize, j: isize| -> f64 {
        if j < 0 || j >= ny as isize {
            0.0
        } else {
            slope_y[j as usize * nx + i as usize]
        }
    };
    let llf = |ul: f64, ur: f64| -> f64 {
        let a = ul.abs().max(ur.abs());
        0.25 * (ul * ul + ur * ur) - 0.5 * a * (ur - ul)
    };
    out.iter_mut().for_each(|v| *v = 0.0);
    let mut outflow = 0.0;
    // x-faces: face (f, j) between cells f-1 and f
    for j in 0..ny as isize {
        for f in 0..=nx as isize {
            let ul = at(f - 1, j) + 0.5 * sx(f - 1, j);
            let ur = at(f, j) - 0.5 * sx(f, j);
            let flux = llf(ul, ur);
            if f > 0 {
                out[j as usize * nx + (f - 1) as usize] -= flux / dx;
            } else {
                outflow -= flux * dy;
            }
            if f < nx as isize {
                out[j as usize * nx + f as usize] += flux / dx;
            } else {
                outflow += flux * dy;
            }
        }
    }
    for i in 0..nx as isize {
        for f in 0..=ny as isize {
            let ul = at(i, f - 1) + 0.5 * sy(i, f - 1);
            let ur = at(i, f) - 0.5 * sy(i, f);
            let flux = llf(ul, ur);
            if f > 0 {
                out[(f - 1) as usize * nx + i as usize] -= flux / dy;
            } else {
                outflow -= flux * dx;
            }
            if f < ny as isize {
                out[f as usize * nx + i as usize] += flux / dy;
            } else {
                outflow += flux * dx;
            }
        }
    }
    outflow
}

/// Solves 2D Burgers from cell-averaged initial data.
pub fn solve_burgers(grid: &Grid2D, u0: Field, times: &[f64], t_max: f64) -> Result<Trajectory> {
    check_times(times, t_max)?;
    let (dx, dy) = (grid.x.dx(), grid.y.dx());
    let n = grid.n_cells();
    let t_end = times.iter().copied().fold(0.0, f64::max);
    let mut u = u0;
    let mut q = 0.0;
    let mut t = 0.0;
    let mut sampler = Sampler::new(times);
    sampler.record(0.0, std::slice::from_ref(&u), &[q], 0.0, std::slice::from_ref(&u), &[q]);
    let (mut k1, mut k2, mut u1) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let (mut sx, mut sy) = (vec![0.0; n], vec![0.0; n]);
    let mut steps = 0;
    while !sampler.done() {
        let umax = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let dt_cfl = if umax > 0.0 {
            CFL / (umax * (1.0 / dx + 1.0 / dy))
        } else {
            CFL * dx.min(dy)
        };
        let dt = dt_cfl.min(t_end - t).max(f64::MIN_POSITIVE);
        let o1 = burgers_rhs(grid, &u, &mut k1, &mut sx, &mut sy);
        for i in 0..n {
            u1[i] = u[i] + dt * k1[i];
        }
        let o2 = burgers_rhs(grid, &u1, &mut k2, &mut sx, &mut sy);
        let un: Field = (0..n).map(|i| 0.5 * u[i] + 0.5 * (u1[i] + dt * k2[i])).collect();
        let qn = q + 0.5 * dt * (o1 + o2);
        let tn = t + dt;
        sampler.record(t, std::slice::from_ref(&u), &[q], tn, std::slice::from_ref(&un), &[qn]);
        u = un;
        q = qn;
        t = tn;
        steps += 1;
    }
    Ok(sampler.finish(steps))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn van_leer_is_symmetric_and_limited() {
        assert_eq!(van_leer(1.0, -1.0), 0.0);
        assert_eq!(van_leer(0.0, 2.0), 0.0);
        assert!((van_leer(1.0, 1.0) - 1.0).abs() < 1e-15);
        assert_eq!(van_leer(1.0, 3.0), van_leer(3.0, 1.0));
        assert!(van_leer(1.0, 100.0) <= 2.0);
    }

    #[test]
    fn sampler_handles_unsorted_and_repeated_times() {
        let g = Grid1D::new(0.0, 1.0, 20).unwrap();
        let u0 = [vec![1.0; 20], vec![0.0; 20]];
        let tr = solve_wave_system(&g, u0, &[0.3, 0.0, 0.1, 0.3], 1.0).unwrap();
        assert_eq!(tr.fields.len(), 4);
        assert_eq!(tr.fields[1][0], vec![1.0; 20]);
        assert_eq!(tr.fields[0], tr.fields[3]);
    }

    #[test]
    fn times_outside_horizon_rejected() {
        let g = Grid1D::new(0.0, 1.0, 4).unwrap();
        let r = solve_wave_system(&g, [vec![0.0; 4], vec![0.0; 4]], &[1.5], 1.0);
        assert!(matches!(r, Err(Error::Argument(_))));
    }
}
