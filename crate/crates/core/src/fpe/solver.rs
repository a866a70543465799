//! Operator-split finite-volume evolution of
//!
//! ```text
//! dW/dt = -(p/m) dW/dx + gamma d(pW)/dp + (m² epsilon / 2) d²W/dp²
//! ```
//!
//! Each step applies x-advection at velocity `p/m`, the momentum drift
//! `-gamma p` (damped model only) and momentum diffusion. Both transport
//! terms use a conservative upwind flux with a van Leer limited
//! second-order correction; diffusion is explicit central. Cells outside
//! the domain are empty, so probability that crosses the boundary is lost
//! and shows up in `mass_deficit`.

use crate::error::{Error, Result};
use crate::params::PhysicalParams;
use crate::sde::Execution;

use super::grid::{GridGeometry, PhaseSpaceGrid};

pub const MAX_ADVECTION_CFL: f64 = 0.9;
pub const MAX_DIFFUSION_NUMBER: f64 = 0.45;
pub const MAX_DRIFT_CFL: f64 = 0.9;
/// A run aborts once this much probability has left the domain.
pub const MAX_MASS_DEFICIT: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Splitting {
    /// x-advection, p-drift, p-diffusion once per step.
    #[default]
    Lie,
    /// Half-step x-advection on either side of the momentum operators.
    Strang,
}

impl std::str::FromStr for Splitting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lie" => Ok(Self::Lie),
            "strang" => Ok(Self::Strang),
            other => Err(Error::Config(format!("unknown splitting {other:?}"))),
        }
    }
}

impl std::fmt::Display for Splitting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Lie => "lie",
            Self::Strang => "strang",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FpeOptions {
    pub splitting: Splitting,
    pub execution: Execution,
}

/// Limited face value correction `phi(r) · (downwind - upwind)` for the van
/// Leer limiter, written without the ratio so a zero jump is harmless.
#[inline(always)]
fn van_leer(upstream_jump: f64, local_jump: f64) -> f64 {
    let prod = upstream_jump * local_jump;
    if prod <= 0.0 {
        0.0
    } else {
        2.0 * prod / (upstream_jump + local_jump)
    }
}

/// Flux through the face between `w[1]` and `w[2]` of the stencil
/// `w = [W_{i-1}, W_i, W_{i+1}, W_{i+2}]`, for face velocity `u` and
/// `lambda = dt / dz`.
#[inline(always)]
fn face_flux(w: [f64; 4], u: f64, lambda: f64) -> f64 {
    if u >= 0.0 {
        let c = u * lambda;
        let corr = van_leer(w[1] - w[0], w[2] - w[1]);
        u * (w[1] + 0.5 * (1.0 - c) * corr)
    } else {
        let c = -u * lambda;
        let corr = van_leer(w[3] - w[2], w[2] - w[1]);
        u * (w[2] - 0.5 * (1.0 - c) * corr)
    }
}

fn for_each_row<F>(out: &mut [f64], row_len: usize, execution: Execution, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    match execution {
        Execution::Sequential => out.chunks_mut(row_len).enumerate().for_each(|(i, r)| f(i, r)),
        #[cfg(feature = "parallel")]
        Execution::Parallel { .. } => {
            use rayon::prelude::*;
            out.par_chunks_mut(row_len).enumerate().for_each(|(i, r)| f(i, r));
        }
    }
}

/// Advection along x for every momentum column; velocity `p_j / m` is
/// constant along a column. `flux` holds `(nx + 1) * np` face fluxes, face
/// `k` lying between cells `k - 1` and `k`.
fn advect_x(src: &[f64], dst: &mut [f64], flux: &mut [f64], g: &GridGeometry, mass: f64, dt: f64, ex: Execution) {
    let (nx, np) = (g.nx, g.np);
    let lambda = dt / g.dx();
    let vel: Vec<f64> = (0..np).map(|j| g.p_center(j) / mass).collect();
    let zeros = vec![0.0; np];
    let row = |k: isize| -> &[f64] {
        if k < 0 || k >= nx as isize {
            &zeros
        } else {
            &src[k as usize * np..(k as usize + 1) * np]
        }
    };
    for_each_row(flux, np, ex, |k, out| {
        let k = k as isize;
        let (a, b, c, d) = (row(k - 2), row(k - 1), row(k), row(k + 1));
        for ip in 0..np {
            out[ip] = face_flux([a[ip], b[ip], c[ip], d[ip]], vel[ip], lambda);
        }
    });
    let flux = &*flux;
    for_each_row(dst, np, ex, |ix, out| {
        let cell = &src[ix * np..(ix + 1) * np];
        let left = &flux[ix * np..(ix + 1) * np];
        let right = &flux[(ix + 1) * np..(ix + 2) * np];
        for ip in 0..np {
            out[ip] = cell[ip] - lambda * (right[ip] - left[ip]);
        }
    });
}

/// Drift `-gamma p` followed by diffusion along p, row by row.
fn momentum_ops(
    src: &[f64],
    dst: &mut [f64],
    g: &GridGeometry,
    gamma: f64,
    diffusion: f64,
    dt: f64,
    ex: Execution,
) {
    let np = g.np;
    let dp = g.dp();
    let lambda = dt / dp;
    let mu = diffusion * dt / (dp * dp);
    let face_vel: Vec<f64> = (0..=np).map(|j| -gamma * g.p_face(j)).collect();
    for_each_row(dst, np, ex, |ix, row| {
        let line = &src[ix * np..(ix + 1) * np];
        let at = |j: isize| -> f64 {
            if j < 0 || j >= np as isize {
                0.0
            } else {
                line[j as usize]
            }
        };
        // drift into the output row
        let mut lower = face_flux([at(-2), at(-1), at(0), at(1)], face_vel[0], lambda);
        for j in 0..np {
            let jj = j as isize;
            let upper = face_flux([at(jj - 1), at(jj), at(jj + 1), at(jj + 2)], face_vel[j + 1], lambda);
            row[j] = line[j] - lambda * (upper - lower);
            lower = upper;
        }
        // diffusion in place on the drifted row
        if mu > 0.0 {
            let mut prev = 0.0;
            for j in 0..np {
                let cur = row[j];
                let next = if j + 1 < np { row[j + 1] } else { 0.0 };
                row[j] = cur + mu * (next - 2.0 * cur + prev);
                prev = cur;
            }
        }
    });
}

/// Checks the explicit-scheme stability bounds for one step of size `dt`.
pub fn check_stability(grid: &PhaseSpaceGrid, params: &PhysicalParams, dt: f64, damped: bool) -> Result<()> {
    let g = grid.geometry;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Stability(format!("dt must be positive, got {dt}")));
    }
    let cfl = g.max_abs_p() / params.mass * dt / g.dx();
    if cfl > MAX_ADVECTION_CFL {
        return Err(Error::Stability(format!(
            "advection CFL (|p|max/m)·dt/dx = {cfl:.4} exceeds {MAX_ADVECTION_CFL}"
        )));
    }
    let diff = 0.5 * params.momentum_diffusion() * dt / (g.dp() * g.dp());
    if diff > MAX_DIFFUSION_NUMBER {
        return Err(Error::Stability(format!(
            "diffusion number (m²ε/2)·dt/dp² = {diff:.4} exceeds {MAX_DIFFUSION_NUMBER}"
        )));
    }
    if damped {
        let drift = params.gamma * g.max_abs_p() * dt / g.dp();
        if drift > MAX_DRIFT_CFL {
            return Err(Error::Stability(format!(
                "drift CFL gamma·|p|max·dt/dp = {drift:.4} exceeds {MAX_DRIFT_CFL}"
            )));
        }
    }
    Ok(())
}

/// Largest step satisfying every stability bound, scaled by `safety`.
pub fn stable_dt(grid: &PhaseSpaceGrid, params: &PhysicalParams, damped: bool, safety: f64) -> f64 {
    let g = grid.geometry;
    let mut dt = MAX_ADVECTION_CFL * g.dx() * params.mass / g.max_abs_p();
    let d = 0.5 * params.momentum_diffusion();
    if d > 0.0 {
        dt = dt.min(MAX_DIFFUSION_NUMBER * g.dp() * g.dp() / d);
    }
    if damped && params.gamma > 0.0 {
        dt = dt.min(MAX_DRIFT_CFL * g.dp() / (params.gamma * g.max_abs_p()));
    }
    dt * safety
}

pub fn evolve_fpe(
    grid: &PhaseSpaceGrid,
    params: &PhysicalParams,
    dt: f64,
    n_steps: usize,
    damped: bool,
) -> Result<PhaseSpaceGrid> {
    evolve_fpe_with(grid, params, dt, n_steps, damped, FpeOptions::default(), |_, _| {})
}

/// Like [`evolve_fpe`], calling `observer(step, grid)` after every step.
pub fn evolve_fpe_with<F>(
    grid: &PhaseSpaceGrid,
    params: &PhysicalParams,
    dt: f64,
    n_steps: usize,
    damped: bool,
    options: FpeOptions,
    mut observer: F,
) -> Result<PhaseSpaceGrid>
where
    F: FnMut(usize, &PhaseSpaceGrid) + Send,
{
    params.validate()?;
    grid.geometry.validate()?;
    check_stability(grid, params, dt, damped)?;
    let gamma = if damped { params.gamma } else { 0.0 };
    let diffusion = 0.5 * params.momentum_diffusion();
    let ex = options.execution;

    let geom = grid.geometry;

    let mut body = || -> Result<PhaseSpaceGrid> {
        let mut cur = grid.clone();
        let mut scratch = vec![0.0; cur.values.len()];
        let mut flux = vec![0.0; (geom.nx + 1) * geom.np];
        for step in 1..=n_steps {
            match options.splitting {
                Splitting::Lie => {
                    advect_x(&cur.values, &mut scratch, &mut flux, &geom, params.mass, dt, ex);
                    momentum_ops(&scratch, &mut cur.values, &geom, gamma, diffusion, dt, ex);
                }
                Splitting::Strang => {
                    advect_x(&cur.values, &mut scratch, &mut flux, &geom, params.mass, 0.5 * dt, ex);
                    momentum_ops(&scratch, &mut cur.values, &geom, gamma, diffusion, dt, ex);
                    advect_x(&cur.values, &mut scratch, &mut flux, &geom, params.mass, 0.5 * dt, ex);
                    std::mem::swap(&mut cur.values, &mut scratch);
                }
            }
            cur.refresh_deficit();
            // measured against the starting normalization
            let lost = cur.mass_deficit - grid.mass_deficit;
            if lost > MAX_MASS_DEFICIT {
                return Err(Error::Grid(format!(
                    "domain too small: {lost:.3e} of the probability left the grid by step {step}"
                )));
            }
            observer(step, &cur);
        }
        Ok(cur)
    };

    match ex {
        #[cfg(feature = "parallel")]
        Execution::Parallel { workers: Some(w) } => rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(body),
        _ => body(),
    }
}
