//! Physical parameters and the maps between the localization-model,
//! thermal-bath and effective-noise parameterizations.
//!
//! Every model in this crate is driven by a single momentum-noise intensity
//! `epsilon` (energy injected per unit time and unit mass). The collapse
//! model and the high-temperature bath are only two ways of arriving at it.
//! Natural units (`hbar = mass = k = 1`) are the defaults.

use crate::error::{domain, Result};

/// Mass, noise intensity, damping rate and Planck constant of a single
/// free particle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalParams {
    pub mass: f64,
    pub epsilon: f64,
    pub gamma: f64,
    pub hbar: f64,
}

impl PhysicalParams {
    pub fn new(mass: f64, epsilon: f64, gamma: f64, hbar: f64) -> Result<Self> {
        let p = Self {
            mass,
            epsilon,
            gamma,
            hbar,
        };
        p.validate()?;
        Ok(p)
    }

    /// `hbar = 1`, everything else explicit.
    pub fn natural(mass: f64, epsilon: f64, gamma: f64) -> Result<Self> {
        Self::new(mass, epsilon, gamma, 1.0)
    }

    /// Noise intensity taken from the collapse model.
    pub fn from_grw(grw: GrwParams, mass: f64, gamma: f64, hbar: f64) -> Result<Self> {
        let epsilon = epsilon_from_grw(grw, hbar, mass)?;
        Self::new(mass, epsilon, gamma, hbar)
    }

    /// Noise intensity taken from a heat bath at temperature `T`; the
    /// bath's friction is the same `gamma` that damps the momentum.
    pub fn from_thermal(thermal: ThermalParams, mass: f64, gamma: f64, hbar: f64) -> Result<Self> {
        let epsilon = epsilon_from_thermal(thermal, gamma, mass)?;
        Self::new(mass, epsilon, gamma, hbar)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mass > 0.0 && self.mass.is_finite()) {
            return domain(format!("mass must be positive, got {}", self.mass));
        }
        if !(self.hbar > 0.0 && self.hbar.is_finite()) {
            return domain(format!("hbar must be positive, got {}", self.hbar));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return domain(format!("epsilon must be non-negative, got {}", self.epsilon));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return domain(format!("gamma must be non-negative, got {}", self.gamma));
        }
        Ok(())
    }

    /// Momentum diffusion rate `mass² · epsilon` (growth rate of ⟨p²⟩
    /// without damping).
    pub fn momentum_diffusion(&self) -> f64 {
        self.mass * self.mass * self.epsilon
    }

    /// Equilibrium ⟨p²⟩ = mass²·epsilon/(2·gamma); infinite when undamped.
    pub fn equilibrium_p2(&self) -> f64 {
        if self.gamma > 0.0 {
            self.momentum_diffusion() / (2.0 * self.gamma)
        } else {
            f64::INFINITY
        }
    }

    /// Relaxation time 1/gamma, infinite when undamped.
    pub fn crossover_time(&self) -> f64 {
        if self.gamma > 0.0 {
            1.0 / self.gamma
        } else {
            f64::INFINITY
        }
    }
}

/// Collapse frequency `lambda` and inverse squared localization length
/// `alpha`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrwParams {
    pub lambda: f64,
    pub alpha: f64,
}

impl GrwParams {
    pub fn new(lambda: f64, alpha: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return domain(format!("lambda must be positive, got {lambda}"));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return domain(format!("alpha must be positive, got {alpha}"));
        }
        Ok(Self { lambda, alpha })
    }

    pub fn localization_length(&self) -> f64 {
        1.0 / self.alpha.sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThermalParams {
    pub k: f64,
    pub temperature: f64,
}

impl ThermalParams {
    pub fn new(k: f64, temperature: f64) -> Result<Self> {
        if !(k > 0.0 && k.is_finite()) {
            return domain(format!("k must be positive, got {k}"));
        }
        if !(temperature >= 0.0 && temperature.is_finite()) {
            return domain(format!("T must be non-negative, got {temperature}"));
        }
        Ok(Self { k, temperature })
    }
}

/// Second moments of the zero-mean, x/p-uncorrelated Gaussian ensemble at
/// `t = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct InitialState {
    pub x0_sq: f64,
    pub p0_sq: f64,
}

impl InitialState {
    pub fn new(x0_sq: f64, p0_sq: f64) -> Result<Self> {
        if !(x0_sq >= 0.0 && x0_sq.is_finite()) {
            return domain(format!("x0_sq must be non-negative, got {x0_sq}"));
        }
        if !(p0_sq >= 0.0 && p0_sq.is_finite()) {
            return domain(format!("p0_sq must be non-negative, got {p0_sq}"));
        }
        Ok(Self { x0_sq, p0_sq })
    }
}

/// `epsilon = hbar² · lambda · alpha / (2 · mass²)`.
pub fn epsilon_from_grw(grw: GrwParams, hbar: f64, mass: f64) -> Result<f64> {
    if !(grw.lambda > 0.0 && grw.alpha > 0.0 && hbar > 0.0 && mass > 0.0) {
        return domain(format!(
            "epsilon_from_grw needs positive inputs (lambda={}, alpha={}, hbar={hbar}, mass={mass})",
            grw.lambda, grw.alpha
        ));
    }
    Ok(hbar * hbar * grw.lambda * grw.alpha / (2.0 * mass * mass))
}

/// Inverse of [`epsilon_from_grw`] for `lambda` at fixed `alpha`, `hbar`, `mass`.
pub fn lambda_from_epsilon(epsilon: f64, alpha: f64, hbar: f64, mass: f64) -> Result<f64> {
    if !(alpha > 0.0 && hbar > 0.0 && mass > 0.0) || epsilon < 0.0 {
        return domain("lambda_from_epsilon needs positive alpha, hbar, mass and epsilon >= 0");
    }
    Ok(2.0 * mass * mass * epsilon / (hbar * hbar * alpha))
}

/// `epsilon = 2 · gamma · k · T / mass`.
pub fn epsilon_from_thermal(thermal: ThermalParams, gamma: f64, mass: f64) -> Result<f64> {
    if !(mass > 0.0) {
        return domain(format!("epsilon_from_thermal needs mass > 0, got {mass}"));
    }
    if !(gamma >= 0.0) {
        return domain(format!("gamma must be non-negative, got {gamma}"));
    }
    Ok(2.0 * gamma * thermal.k * thermal.temperature / mass)
}

/// Value of `u = alpha · s² / 4` at which [`quadratic_expansion_error`]
/// reaches 1%.
pub const EXPANSION_ONE_PERCENT_U: f64 = 0.019_933_774_543_987_67;

/// Decay rate of the off-diagonal element ρ(x, y) with `x - y = separation`
/// under the collapse model: `lambda · (1 - exp(-alpha · s² / 4))`.
pub fn grw_localization_rate(separation: f64, grw: GrwParams) -> f64 {
    let u = grw.alpha * separation * separation / 4.0;
    -grw.lambda * (-u).exp_m1()
}

/// Relative error of replacing `1 - exp(-u)` by `u`, where
/// `u = alpha · s² / 4`. Zero at `s = 0` by continuity.
pub fn quadratic_expansion_error(separation: f64, grw: GrwParams) -> f64 {
    let u = grw.alpha * separation * separation / 4.0;
    if u == 0.0 {
        return 0.0;
    }
    let exact = -(-u).exp_m1();
    // u - (1 - e^{-u}) cancels badly for small u
    let diff = if u < 1e-3 {
        u * u * (0.5 - u / 6.0 + u * u / 24.0)
    } else {
        u - exact
    };
    (diff / exact).abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn epsilon_from_grw_examples() {
        let g = GrwParams::new(1.0, 2.0).unwrap();
        assert_eq!(epsilon_from_grw(g, 1.0, 1.0).unwrap(), 1.0);
        assert_eq!(epsilon_from_grw(g, 1.0, 2.0).unwrap(), 0.25);
        let tiny = GrwParams::new(1e-300, 2.0).unwrap();
        assert!(epsilon_from_grw(tiny, 1.0, 1.0).unwrap() < 1e-299);
    }

    #[test]
    fn epsilon_from_grw_rejects_nonpositive() {
        let g = GrwParams { lambda: 1.0, alpha: 2.0 };
        assert!(epsilon_from_grw(g, 0.0, 1.0).is_err());
        assert!(epsilon_from_grw(g, 1.0, -1.0).is_err());
        assert!(GrwParams::new(0.0, 1.0).is_err());
        assert!(GrwParams::new(1.0, 0.0).is_err());
    }

    #[test]
    fn epsilon_from_thermal_examples() {
        let th = ThermalParams::new(1.0, 1.0).unwrap();
        assert_eq!(epsilon_from_thermal(th, 1.0, 2.0).unwrap(), 1.0);
        let cold = ThermalParams::new(1.0, 0.0).unwrap();
        assert_eq!(epsilon_from_thermal(cold, 3.0, 1.0).unwrap(), 0.0);
        let th = ThermalParams::new(1.0, 0.5).unwrap();
        assert_eq!(epsilon_from_thermal(th, 2.0, 1.0).unwrap(), 2.0);
        assert!(epsilon_from_thermal(th, 2.0, 0.0).is_err());
    }

    #[test]
    fn constructors_carry_epsilon_exactly() {
        let g = GrwParams::new(3.0, 0.7).unwrap();
        let p = PhysicalParams::from_grw(g, 1.3, 0.0, 0.9).unwrap();
        assert_eq!(p.epsilon, 0.9 * 0.9 * 3.0 * 0.7 / (2.0 * 1.3 * 1.3));
        let th = ThermalParams::new(1.0, 2.5).unwrap();
        let p = PhysicalParams::from_thermal(th, 2.0, 0.4, 1.0).unwrap();
        assert_eq!(p.epsilon, 2.0 * 0.4 * 1.0 * 2.5 / 2.0);
    }

    #[test]
    fn localization_rate_examples() {
        let g = GrwParams::new(1.0, 4.0).unwrap();
        assert_eq!(grw_localization_rate(0.0, g), 0.0);
        assert_relative_eq!(grw_localization_rate(1.0, g), 1.0 - (-1.0f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(grw_localization_rate(1e3, g), 1.0);
    }

    #[test]
    fn expansion_error_examples() {
        let g = GrwParams::new(1.0, 4.0).unwrap();
        assert_eq!(quadratic_expansion_error(0.0, g), 0.0);
        // u = s² here
        let e = quadratic_expansion_error(0.02f64.sqrt(), g);
        assert!((e - 0.01).abs() < 1e-4, "{e}");
        let e = quadratic_expansion_error(1.0, g);
        let ex = 1.0 - (-1.0f64).exp();
        assert_relative_eq!(e, (ex - 1.0).abs() / ex, epsilon = 1e-14);
        assert!((e - 0.582).abs() < 1e-3);
    }

    #[test]
    fn series_branch_is_continuous() {
        let g = GrwParams::new(1.0, 4.0).unwrap();
        let below = quadratic_expansion_error((1e-3f64 * (1.0 - 1e-12)).sqrt(), g);
        let above = quadratic_expansion_error((1e-3f64 * (1.0 + 1e-12)).sqrt(), g);
        assert_relative_eq!(below, above, max_relative = 1e-8);
    }

    #[test]
    fn one_percent_boundary() {
        // relative error is u/2 + u²/12 + ..., so it reaches 1% just below u = 0.02
        let g = GrwParams::new(1.0, 4.0).unwrap();
        let at = |u: f64| quadratic_expansion_error(u.sqrt(), g);
        assert_relative_eq!(at(EXPANSION_ONE_PERCENT_U), 0.01, max_relative = 1e-9);
        assert!(at(0.02) > 0.01);
        assert!(at(0.0199) < 0.01);
    }

    #[test]
    fn invalid_physical_params() {
        assert!(PhysicalParams::natural(0.0, 1.0, 0.0).is_err());
        assert!(PhysicalParams::natural(1.0, -1.0, 0.0).is_err());
        assert!(PhysicalParams::natural(1.0, 1.0, -0.1).is_err());
        assert!(PhysicalParams::new(1.0, 1.0, 0.0, 0.0).is_err());
        assert!(InitialState::new(-1.0, 0.0).is_err());
        assert!(ThermalParams::new(1.0, -1.0).is_err());
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn grw_round_trip(lambda in 1e-6f64..1e6, alpha in 1e-6f64..1e6,
                              hbar in 1e-3f64..1e3, mass in 1e-3f64..1e3) {
                let g = GrwParams::new(lambda, alpha).unwrap();
                let eps = epsilon_from_grw(g, hbar, mass).unwrap();
                let back = lambda_from_epsilon(eps, alpha, hbar, mass).unwrap();
                prop_assert!(((back - lambda) / lambda).abs() < 1e-12);
            }

            #[test]
            fn rate_even_and_increasing(s in 0.0f64..20.0, ds in 1e-3f64..1.0,
                                        lambda in 0.1f64..10.0, alpha in 0.01f64..10.0) {
                let g = GrwParams::new(lambda, alpha).unwrap();
                let r = grw_localization_rate(s, g);
                prop_assert_eq!(r, grw_localization_rate(-s, g));
                prop_assert!(r <= lambda);
                let r2 = grw_localization_rate(s + ds, g);
                prop_assert!(r2 >= r);
                // strictly increasing until the exponential drops below f64 resolution
                if alpha * (s + ds) * (s + ds) / 4.0 < 30.0 {
                    prop_assert!(r2 > r);
                }
            }

            #[test]
            fn expansion_valid_window(u in 0.0f64..EXPANSION_ONE_PERCENT_U, alpha in 0.01f64..100.0) {
                let g = GrwParams::new(1.0, alpha).unwrap();
                let s = (4.0 * u / alpha).sqrt();
                prop_assert!(quadratic_expansion_error(s, g) < 0.01);
            }
        }
    }
}
