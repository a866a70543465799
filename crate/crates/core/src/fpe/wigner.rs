//! Wigner transform of a density matrix sampled on a uniform grid:
//!
//! ```text
//! W(x, p) = 1/(2 pi hbar) ∫ dq exp(-i p q / hbar) rho(x + q/2, x - q/2)
//! ```
//!
//! On a grid with spacing `d`, `x ± q/2` stay on grid points when
//! `q = 2 k d`, which makes the q-integral a discrete Fourier transform over
//! `k` and fixes the momentum spacing to `pi hbar / (n d)`.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

use super::grid::{GridGeometry, PhaseSpaceGrid};

pub const HERMITIAN_TOL: f64 = 1e-10;
pub const TRACE_TOL: f64 = 1e-8;

/// `rho(x_i, x_j)` on a uniform grid, stored row-major as `values[i * n + j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrixGrid {
    pub x: Vec<f64>,
    pub values: Vec<Complex64>,
}

impl DensityMatrixGrid {
    pub fn new(x: Vec<f64>, values: Vec<Complex64>) -> Result<Self> {
        let rho = Self { x, values };
        rho.validate()?;
        Ok(rho)
    }

    /// Samples `f(x, y)` on the points `x`.
    pub fn from_fn(x: Vec<f64>, f: impl Fn(f64, f64) -> Complex64) -> Result<Self> {
        let values = x.iter().flat_map(|&a| x.iter().map(move |&b| (a, b))).map(|(a, b)| f(a, b)).collect();
        Self::new(x, values)
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn spacing(&self) -> f64 {
        self.x[1] - self.x[0]
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> Complex64 {
        self.values[i * self.n() + j]
    }

    pub fn trace(&self) -> f64 {
        (0..self.n()).map(|i| self.at(i, i).re).sum::<f64>() * self.spacing()
    }

    /// Largest `|rho(x, y) - conj(rho(y, x))|`.
    pub fn hermitian_defect(&self) -> f64 {
        let n = self.n();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in i..n {
                worst = worst.max((self.at(i, j) - self.at(j, i).conj()).norm());
            }
        }
        worst
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if n < 4 {
            return Err(Error::Grid(format!("density matrix needs at least 4 points, got {n}")));
        }
        if self.values.len() != n * n {
            return Err(Error::Grid(format!("expected {} entries, got {}", n * n, self.values.len())));
        }
        let d = self.spacing();
        if !(d > 0.0) {
            return Err(Error::Grid("x grid must be increasing".into()));
        }
        if self.x.windows(2).any(|w| ((w[1] - w[0]) - d).abs() > 1e-9 * d) {
            return Err(Error::Grid("x grid must be uniform".into()));
        }
        let scale = self.values.iter().map(|v| v.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        let defect = self.hermitian_defect();
        if defect > HERMITIAN_TOL * scale {
            return Err(Error::Grid(format!("density matrix is not Hermitian (defect {defect:.3e})")));
        }
        let tr = self.trace();
        if (tr - 1.0).abs() > TRACE_TOL {
            return Err(Error::Grid(format!("trace {tr} differs from 1")));
        }
        Ok(())
    }
}

/// Wigner function on the grid together with the largest imaginary part
/// the transform produced.
#[derive(Debug, Clone)]
pub struct WignerTransform {
    pub grid: PhaseSpaceGrid,
    pub max_imag: f64,
}

/// Wigner transform; errors when `rho` is not Hermitian or not
/// trace-normalized.
pub fn wigner_from_density(rho: &DensityMatrixGrid, hbar: f64) -> Result<PhaseSpaceGrid> {
    Ok(wigner_transform(rho, hbar)?.grid)
}

pub fn wigner_transform(rho: &DensityMatrixGrid, hbar: f64) -> Result<WignerTransform> {
    if !(hbar > 0.0) {
        return Err(Error::Domain(format!("hbar must be positive, got {hbar}")));
    }
    rho.validate()?;
    let n = rho.n();
    let d = rho.spacing();
    let dp = std::f64::consts::PI * hbar / (n as f64 * d);
    let half = (n / 2) as f64;
    let geometry = GridGeometry::new(
        rho.x[0] - 0.5 * d,
        rho.x[n - 1] + 0.5 * d,
        -(half + 0.5) * dp,
        (half - 0.5) * dp,
        n,
        n,
    )?;

    let fft: Arc<dyn Fft<f64>> = FftPlanner::new().plan_fft_forward(n);
    let prefactor = 2.0 * d / (2.0 * std::f64::consts::PI * hbar);
    let mut values = vec![0.0; n * n];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let mut max_imag = 0.0f64;
    for i in 0..n {
        buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
        // symmetric k range keeps the sum real for Hermitian input
        let kmax = i.min(n - 1 - i).min(n / 2 - 1);
        for k in 0..=kmax {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            buf[k] = rho.at(i + k, i - k) * sign;
            if k > 0 {
                buf[n - k] = rho.at(i - k, i + k) * sign;
            }
        }
        fft.process(&mut buf);
        // frequency index m maps to p = (m - n/2) dp after the (-1)^k shift
        let row = &mut values[i * n..(i + 1) * n];
        for (m, c) in buf.iter().enumerate() {
            row[m] = prefactor * c.re;
            max_imag = max_imag.max((prefactor * c.im).abs());
        }
    }
    let grid = PhaseSpaceGrid::from_values(geometry, values)?;
    Ok(WignerTransform { grid, max_imag })
}
