use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::params::InitialState;

/// Largest Gaussian probability allowed to fall outside the grid.
pub const MAX_OFF_GRID_MASS: f64 = 1e-6;

/// Rectangle `[x_min, x_max] × [p_min, p_max]` split into `nx × np` cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridGeometry {
    pub x_min: f64,
    pub x_max: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub nx: usize,
    pub np: usize,
}

impl GridGeometry {
    pub fn new(x_min: f64, x_max: f64, p_min: f64, p_max: f64, nx: usize, np: usize) -> Result<Self> {
        let g = Self {
            x_min,
            x_max,
            p_min,
            p_max,
            nx,
            np,
        };
        g.validate()?;
        Ok(g)
    }

    /// Square-symmetric box `[-x_half, x_half] × [-p_half, p_half]`.
    pub fn symmetric(x_half: f64, p_half: f64, nx: usize, np: usize) -> Result<Self> {
        Self::new(-x_half, x_half, -p_half, p_half, nx, np)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.np == 0 {
            return Err(Error::Grid(format!("cell counts must be positive ({}×{})", self.nx, self.np)));
        }
        let finite = [self.x_min, self.x_max, self.p_min, self.p_max]
            .iter()
            .all(|v| v.is_finite());
        if !finite || !(self.x_max > self.x_min) || !(self.p_max > self.p_min) {
            return Err(Error::Grid(format!(
                "degenerate extent x [{}, {}], p [{}, {}]",
                self.x_min, self.x_max, self.p_min, self.p_max
            )));
        }
        Ok(())
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / self.nx as f64
    }

    pub fn dp(&self) -> f64 {
        (self.p_max - self.p_min) / self.np as f64
    }

    pub fn cell_area(&self) -> f64 {
        self.dx() * self.dp()
    }

    pub fn x_center(&self, i: usize) -> f64 {
        self.x_min + (i as f64 + 0.5) * self.dx()
    }

    pub fn p_center(&self, j: usize) -> f64 {
        self.p_min + (j as f64 + 0.5) * self.dp()
    }

    /// Lower `p` face of cell `j` (`j == np` is the upper boundary).
    pub fn p_face(&self, j: usize) -> f64 {
        self.p_min + j as f64 * self.dp()
    }

    pub fn max_abs_p(&self) -> f64 {
        self.p_min.abs().max(self.p_max.abs())
    }

    pub fn len(&self) -> usize {
        self.nx * self.np
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Cell-centred phase-space density, stored row-major: `values[ix * np + ip]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSpaceGrid {
    pub geometry: GridGeometry,
    pub values: Vec<f64>,
    /// `1 - sum W dx dp`: probability that has left through the boundary.
    pub mass_deficit: f64,
    /// Second moments the grid was built from after point-mass
    /// regularization, when it came from [`gaussian_wigner`].
    pub initial_moments: Option<InitialState>,
}

impl PhaseSpaceGrid {
    pub fn zeros(geometry: GridGeometry) -> Self {
        Self {
            geometry,
            values: vec![0.0; geometry.len()],
            mass_deficit: 1.0,
            initial_moments: None,
        }
    }

    pub fn from_values(geometry: GridGeometry, values: Vec<f64>) -> Result<Self> {
        geometry.validate()?;
        if values.len() != geometry.len() {
            return Err(Error::Grid(format!(
                "expected {} values, got {}",
                geometry.len(),
                values.len()
            )));
        }
        let mut g = Self {
            geometry,
            values,
            mass_deficit: 0.0,
            initial_moments: None,
        };
        g.refresh_deficit();
        Ok(g)
    }

    #[inline]
    pub fn at(&self, ix: usize, ip: usize) -> f64 {
        self.values[ix * self.geometry.np + ip]
    }

    pub fn norm(&self) -> f64 {
        // row sums first so the total does not depend on scheduling
        let np = self.geometry.np;
        let total: f64 = self.values.chunks(np).map(|row| row.iter().sum::<f64>()).sum();
        total * self.geometry.cell_area()
    }

    pub fn refresh_deficit(&mut self) {
        self.mass_deficit = 1.0 - self.norm();
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Midpoint-rule moments of a grid (not divided by `norm`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridMoments {
    pub x2: f64,
    pub p2: f64,
    pub xp: f64,
    pub norm: f64,
    pub x_mean: f64,
    pub p_mean: f64,
}

pub fn grid_moments(grid: &PhaseSpaceGrid) -> GridMoments {
    let g = &grid.geometry;
    let (mut x2, mut p2, mut xp, mut norm, mut xm, mut pm) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for ix in 0..g.nx {
        let x = g.x_center(ix);
        let row = &grid.values[ix * g.np..(ix + 1) * g.np];
        let (mut r0, mut r1, mut r2) = (0.0, 0.0, 0.0);
        for (ip, &w) in row.iter().enumerate() {
            let p = g.p_center(ip);
            r0 += w;
            r1 += p * w;
            r2 += p * p * w;
        }
        norm += r0;
        xm += x * r0;
        x2 += x * x * r0;
        pm += r1;
        xp += x * r1;
        p2 += r2;
    }
    let a = g.cell_area();
    GridMoments {
        x2: x2 * a,
        p2: p2 * a,
        xp: xp * a,
        norm: norm * a,
        x_mean: xm * a,
        p_mean: pm * a,
    }
}

fn interval_mass(lo: f64, hi: f64, sigma: f64) -> f64 {
    let s = sigma * std::f64::consts::SQRT_2;
    // P(lo < X < hi) via erfc, accurate for tails on either side
    if lo >= 0.0 {
        0.5 * (erfc(lo / s) - erfc(hi / s))
    } else if hi <= 0.0 {
        0.5 * (erfc(-hi / s) - erfc(-lo / s))
    } else {
        1.0 - 0.5 * (erfc(-lo / s) + erfc(hi / s))
    }
}

/// Discretized zero-mean uncorrelated Gaussian with second moments taken
/// from `init`, normalized to one on the grid.
///
/// A zero variance cannot be represented on the grid and is replaced by
/// `(3 dx)²` (or `(3 dp)²`); the moments actually used are stored in
/// `initial_moments`.
pub fn gaussian_wigner(init: &InitialState, geometry: &GridGeometry) -> Result<PhaseSpaceGrid> {
    geometry.validate()?;
    let vx = if init.x0_sq > 0.0 { init.x0_sq } else { (3.0 * geometry.dx()).powi(2) };
    let vp = if init.p0_sq > 0.0 { init.p0_sq } else { (3.0 * geometry.dp()).powi(2) };
    let (sx, sp) = (vx.sqrt(), vp.sqrt());

    let inside = interval_mass(geometry.x_min, geometry.x_max, sx)
        * interval_mass(geometry.p_min, geometry.p_max, sp);
    if 1.0 - inside > MAX_OFF_GRID_MASS {
        return Err(Error::Grid(format!(
            "grid too small: Gaussian mass {:.3e} lies outside the domain",
            1.0 - inside
        )));
    }

    let px: Vec<f64> = (0..geometry.nx)
        .map(|i| (-geometry.x_center(i).powi(2) / (2.0 * vx)).exp())
        .collect();
    let pp: Vec<f64> = (0..geometry.np)
        .map(|j| (-geometry.p_center(j).powi(2) / (2.0 * vp)).exp())
        .collect();
    let mut values = Vec::with_capacity(geometry.len());
    for &a in &px {
        values.extend(pp.iter().map(|&b| a * b));
    }
    let mut grid = PhaseSpaceGrid::from_values(*geometry, values)?;
    let norm = grid.norm();
    if !(norm > 0.0) {
        return Err(Error::Grid("Gaussian is not resolved by the grid".into()));
    }
    grid.values.iter_mut().for_each(|w| *w /= norm);
    grid.refresh_deficit();
    grid.initial_moments = Some(InitialState { x0_sq: vx, p0_sq: vp });
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gaussian_construction() {
        let geom = GridGeometry::symmetric(3.0, 5.0, 128, 128).unwrap();
        let init = InitialState::new(0.2, 0.5).unwrap();
        let g = gaussian_wigner(&init, &geom).unwrap();
        let m = grid_moments(&g);
        assert!((m.norm - 1.0).abs() < 1e-8);
        assert!(g.mass_deficit.abs() < 1e-8);
        assert_relative_eq!(m.x2, 0.2, max_relative = 1e-4);
        assert_relative_eq!(m.p2, 0.5, max_relative = 1e-4);
        assert!(m.xp.abs() < 1e-12);
        assert!(m.x_mean.abs() < 1e-12 && m.p_mean.abs() < 1e-12);
        assert!(g.min_value() >= 0.0);
        assert_eq!(g.initial_moments, Some(init));
    }

    #[test]
    fn rejects_small_domain() {
        let geom = GridGeometry::symmetric(1.0, 5.0, 64, 64).unwrap();
        let init = InitialState::new(1.0, 0.5).unwrap();
        assert!(matches!(gaussian_wigner(&init, &geom), Err(Error::Grid(_))));
    }

    #[test]
    fn point_mass_is_regularized() {
        let geom = GridGeometry::symmetric(2.0, 2.0, 100, 200).unwrap();
        let g = gaussian_wigner(&InitialState::default(), &geom).unwrap();
        let reg = g.initial_moments.unwrap();
        assert_relative_eq!(reg.x0_sq, (3.0 * 0.04f64).powi(2));
        assert_relative_eq!(reg.p0_sq, (3.0 * 0.02f64).powi(2));
        let m = grid_moments(&g);
        assert_relative_eq!(m.x2, reg.x0_sq, max_relative = 1e-4);
        assert_relative_eq!(m.p2, reg.p0_sq, max_relative = 1e-4);
    }

    #[test]
    fn interval_mass_tails() {
        assert_relative_eq!(interval_mass(-1e3, 1e3, 1.0), 1.0);
        assert_relative_eq!(interval_mass(0.0, 1e3, 2.0), 0.5, epsilon = 1e-15);
        assert_relative_eq!(interval_mass(-1.0, 1.0, 1.0), 0.682_689_492_137_085_9, epsilon = 1e-9);
        assert!(interval_mass(8.0, 9.0, 1.0) > 0.0);
    }

    #[test]
    fn geometry_validation() {
        assert!(GridGeometry::new(0.0, 0.0, -1.0, 1.0, 4, 4).is_err());
        assert!(GridGeometry::new(-1.0, 1.0, -1.0, 1.0, 0, 4).is_err());
        assert!(PhaseSpaceGrid::from_values(GridGeometry::symmetric(1.0, 1.0, 2, 2).unwrap(), vec![0.0; 3]).is_err());
    }
}
