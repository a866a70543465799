//! Closed-form second moments of the free-particle ensemble, their limits,
//! the critical damping rate and the stationary energy balance.
//!
//! Undamped, with `D = m² epsilon`:
//!
//! ```text
//! <p²>(t) = <p0²> + D t
//! <x²>(t) = <x0²> + <p0²> t² / m² + epsilon t³ / 3
//! ```
//!
//! Damped with rate `gamma`:
//!
//! ```text
//! <p²>(t) = <p0²> e^{-2γt} + D (1 - e^{-2γt}) / 2γ
//! <x²>(t) = <x0²> + <p0²> (1 - e^{-γt})² / (m²γ²)
//!         + epsilon (2γt - 3 + 4e^{-γt} - e^{-2γt}) / 2γ³
//! ```

use std::io::{BufRead, Write};

use crate::error::{domain, Error, Result};
use crate::params::{InitialState, PhysicalParams};
use crate::table::{write_row, Table};

/// Below this `gamma · t` the bracket `2u - 3 + 4e^{-u} - e^{-2u}` is
/// summed as a power series.
pub const SERIES_SWITCHOVER: f64 = 0.1;

pub const ORACLE_CSV_HEADER: &str = "t,p2_exact,x2_exact";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub p2: f64,
    pub x2: f64,
}

fn check_time(t: f64) -> Result<()> {
    if !(t >= 0.0) {
        return domain(format!("time must be non-negative, got {t}"));
    }
    Ok(())
}

fn undamped_unchecked(t: f64, params: &PhysicalParams, init: &InitialState) -> Moments {
    let m2 = params.mass * params.mass;
    Moments {
        p2: init.p0_sq + params.momentum_diffusion() * t,
        x2: init.x0_sq + init.p0_sq / m2 * t * t + params.epsilon / 3.0 * t * t * t,
    }
}

/// Moments of the undamped ensemble; `gamma` is ignored.
pub fn moments_undamped(t: f64, params: &PhysicalParams, init: &InitialState) -> Result<Moments> {
    check_time(t)?;
    Ok(undamped_unchecked(t, params, init))
}

/// `(2u - 3 + 4e^{-u} - e^{-2u}) / u³`.
///
/// The bracket is O(u³) and its direct evaluation loses all precision as
/// `u -> 0`, so below the switchover the series
/// `sum_{k>=3} (-1)^k (4 - 2^k) u^(k-3) / k!` is used.
pub fn bracket_over_cube(u: f64) -> f64 {
    if u < SERIES_SWITCHOVER {
        let mut sum = 0.0;
        let mut pow = 1.0; // u^(k-3)
        let mut fact = 6.0; // k!
        let mut two_k = 8.0; // 2^k
        for k in 3..=18 {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            sum += sign * (4.0 - two_k) * pow / fact;
            pow *= u;
            fact *= (k + 1) as f64;
            two_k *= 2.0;
        }
        sum
    } else {
        (2.0 * u + 4.0 * (-u).exp_m1() - (-2.0 * u).exp_m1()) / (u * u * u)
    }
}

/// Moments of the damped ensemble. Falls back to the undamped formulas
/// when `gamma == 0`.
pub fn moments_damped(t: f64, params: &PhysicalParams, init: &InitialState) -> Result<Moments> {
    check_time(t)?;
    let g = params.gamma;
    if g == 0.0 {
        return Ok(undamped_unchecked(t, params, init));
    }
    let m2 = params.mass * params.mass;
    let u = g * t;
    // (1 - e^{-2γt}) / 2γ and (1 - e^{-γt}) / γ, both well-conditioned
    let relax = -(-2.0 * u).exp_m1() / (2.0 * g);
    let drift = -(-u).exp_m1() / g;
    let p2 = init.p0_sq * (-2.0 * u).exp() + params.momentum_diffusion() * relax;
    let x2 = init.x0_sq
        + init.p0_sq / m2 * drift * drift
        + params.epsilon / 2.0 * t * t * t * bracket_over_cube(u);
    Ok(Moments { p2, x2 })
}

/// The `gamma · t << 1` limit of the damped moments, which coincides with
/// the undamped moments.
pub fn short_time_asymptotics(t: f64, params: &PhysicalParams, init: &InitialState) -> Moments {
    undamped_unchecked(t, params, init)
}

/// `d<p²>/dt = e^{-2γt} (m² epsilon - 2γ <p0²>)`.
pub fn p2_rate(t: f64, params: &PhysicalParams, init: &InitialState) -> f64 {
    let g = params.gamma;
    (-2.0 * g * t).exp() * (params.momentum_diffusion() - 2.0 * g * init.p0_sq)
}

/// Damping rate `m² epsilon / (2 <p0²>)` at which `<p²>` is initially
/// stationary. Stronger damping loses energy from `t = 0`, weaker damping
/// gains it.
pub fn critical_damping(params: &PhysicalParams, p0_sq: f64) -> Result<f64> {
    if !(p0_sq > 0.0) {
        return domain(format!(
            "critical damping needs p0_sq > 0 (got {p0_sq}); with no initial momentum every gamma gains energy"
        ));
    }
    Ok(params.momentum_diffusion() / (2.0 * p0_sq))
}

/// Constants of the third-moment law and of the stationary second moment,
/// tied by `2 c2 - c1 = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KolmogorovClosure {
    pub c1: f64,
    pub c2: f64,
}

impl KolmogorovClosure {
    /// `c1 = 0` is the spatially homogeneous ensemble (no flux between
    /// scales), for which the stationary moment is the SDE equilibrium.
    pub fn new(c1: f64) -> Self {
        Self {
            c1,
            c2: (1.0 + c1) / 2.0,
        }
    }

    /// `2 c2 - c1`, which is 1 by construction.
    pub fn balance(&self) -> f64 {
        2.0 * self.c2 - self.c1
    }

    /// Stationary `<p²> = c2 · m² epsilon / gamma`.
    pub fn stationary_p2(&self, params: &PhysicalParams) -> f64 {
        self.c2 * params.momentum_diffusion() / params.gamma
    }
}

pub fn kolmogorov_closure(c1: f64) -> KolmogorovClosure {
    KolmogorovClosure::new(c1)
}

/// Homogeneous second-moment balance `d<p²>/dt = m² epsilon - 2 gamma <p²>`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyBudget {
    pub injection: f64,
    pub dissipation: f64,
    pub net: f64,
    pub observed_rate: f64,
    pub residual: f64,
}

pub fn energy_budget(p2: f64, observed_rate: f64, params: &PhysicalParams) -> EnergyBudget {
    let injection = params.momentum_diffusion();
    let dissipation = 2.0 * params.gamma * p2;
    let net = injection - dissipation;
    EnergyBudget {
        injection,
        dissipation,
        net,
        observed_rate,
        residual: observed_rate - net,
    }
}

/// Which closed form to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleKind {
    Undamped,
    Damped,
}

impl OracleKind {
    pub fn from_damped(damped: bool) -> Self {
        if damped {
            Self::Damped
        } else {
            Self::Undamped
        }
    }

    pub fn eval(self, t: f64, params: &PhysicalParams, init: &InitialState) -> Result<Moments> {
        match self {
            Self::Undamped => moments_undamped(t, params, init),
            Self::Damped => moments_damped(t, params, init),
        }
    }
}

/// Closed-form moments tabulated over a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleTable {
    pub times: Vec<f64>,
    pub p2: Vec<f64>,
    pub x2: Vec<f64>,
}

impl OracleTable {
    pub fn tabulate(
        times: &[f64],
        kind: OracleKind,
        params: &PhysicalParams,
        init: &InitialState,
    ) -> Result<Self> {
        let mut p2 = Vec::with_capacity(times.len());
        let mut x2 = Vec::with_capacity(times.len());
        for &t in times {
            let m = kind.eval(t, params, init)?;
            p2.push(m.p2);
            x2.push(m.x2);
        }
        Ok(Self {
            times: times.to_vec(),
            p2,
            x2,
        })
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{ORACLE_CSV_HEADER}")?;
        for i in 0..self.times.len() {
            write_row(&mut w, &[self.times[i], self.p2[i], self.x2[i]])?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let table = Table::read(r)?;
        let col = |name: &str| {
            table.column(name).ok_or_else(|| Error::Parse {
                line: 1,
                msg: format!("missing column {name}"),
            })
        };
        Ok(Self {
            times: col("t")?,
            p2: col("p2_exact")?,
            x2: col("x2_exact")?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params(mass: f64, epsilon: f64, gamma: f64) -> PhysicalParams {
        PhysicalParams::natural(mass, epsilon, gamma).unwrap()
    }

    fn init(x0_sq: f64, p0_sq: f64) -> InitialState {
        InitialState::new(x0_sq, p0_sq).unwrap()
    }

    #[test]
    fn undamped_examples() {
        let i = init(0.7, 0.3);
        let m = moments_undamped(0.0, &params(1.0, 1.0, 0.0), &i).unwrap();
        assert_eq!((m.p2, m.x2), (0.3, 0.7));
        let m = moments_undamped(1.0, &params(1.0, 3.0, 0.0), &init(0.0, 0.0)).unwrap();
        assert_eq!((m.p2, m.x2), (3.0, 1.0));
        let m = moments_undamped(2.0, &params(2.0, 1.0, 0.0), &init(1.0, 4.0)).unwrap();
        assert_eq!(m.p2, 12.0);
        assert_relative_eq!(m.x2, 1.0 + 4.0 + 8.0 / 3.0, epsilon = 1e-14);
        assert!(moments_undamped(-1.0, &params(1.0, 1.0, 0.0), &i).is_err());
    }

    #[test]
    fn damped_examples() {
        let p = params(1.0, 2.0, 1.0);
        let i = init(0.4, 0.9);
        let m = moments_damped(0.0, &p, &i).unwrap();
        assert_eq!((m.p2, m.x2), (0.9, 0.4));

        let m = moments_damped(1.0, &p, &init(0.0, 0.0)).unwrap();
        let e1 = (-1.0f64).exp();
        let e2 = (-2.0f64).exp();
        assert_relative_eq!(m.p2, 1.0 - e2, epsilon = 1e-15);
        assert_relative_eq!(m.x2, 2.0 - 3.0 + 4.0 * e1 - e2, epsilon = 1e-14);
        assert!((m.p2 - 0.864665).abs() < 1e-6);
        assert!((m.x2 - 0.336182).abs() < 1e-6);

        let late = moments_damped(1e4, &p, &init(0.0, 0.0)).unwrap();
        assert_relative_eq!(late.p2, 1.0, epsilon = 1e-12);
        assert_relative_eq!(late.x2 / 1e4, 2.0, max_relative = 2e-4);
        assert!(moments_damped(-0.1, &p, &i).is_err());
    }

    #[test]
    fn zero_gamma_delegates() {
        let p = params(1.5, 0.8, 0.0);
        let i = init(0.2, 0.1);
        for t in [0.0, 0.3, 2.0] {
            assert_eq!(moments_damped(t, &p, &i).unwrap(), moments_undamped(t, &p, &i).unwrap());
        }
    }

    #[test]
    #[allow(clippy::excessive_precision)]
    fn bracket_matches_high_precision_values() {
        // epsilon = gamma = 1: x2 = t³/2 · bracket/u³, reference values from
        // 50-digit evaluation of the direct bracket
        let p = params(1.0, 1.0, 1.0);
        let zero = init(0.0, 0.0);
        for (t, want) in [
            (1e-6, 3.33333083333449999958333345635e-19),
            (1e-4, 3.33308334499958334563460814192e-13),
            (0.1, 0.000309459532928216993530364583354),
            (0.5, 0.0291215988395456864098371849016),
        ] {
            let got = moments_damped(t, &p, &zero).unwrap().x2;
            assert_relative_eq!(got, want, max_relative = 1e-12);
        }
    }

    #[test]
    fn series_and_direct_agree_at_switchover() {
        let u = SERIES_SWITCHOVER;
        let below = bracket_over_cube(u * (1.0 - 1e-15));
        let direct = (2.0 * u + 4.0 * (-u).exp_m1() - (-2.0 * u).exp_m1()) / (u * u * u);
        assert_relative_eq!(below, direct, max_relative = 1e-12);
        assert_relative_eq!(bracket_over_cube(u), direct, max_relative = 1e-15);
    }

    #[test]
    fn short_time_is_undamped() {
        let p = params(1.2, 0.7, 3.0);
        let i = init(0.1, 0.5);
        for t in [0.0, 1e-3, 0.5, 4.0] {
            assert_eq!(short_time_asymptotics(t, &p, &i), moments_undamped(t, &p, &i).unwrap());
        }
    }

    #[test]
    fn short_time_deviation_is_second_order() {
        let p = params(1.0, 1.0, 1.0);
        let i = init(0.0, 0.0);
        let ts: Vec<f64> = (0..=8).map(|k| 1e-4 * 10f64.powf(k as f64 * 0.25)).collect();
        let (lx, ly): (Vec<f64>, Vec<f64>) = ts
            .iter()
            .map(|&t| {
                let a = moments_damped(t, &p, &i).unwrap().p2;
                let b = short_time_asymptotics(t, &p, &i).p2;
                (t.ln(), (a - b).abs().ln())
            })
            .unzip();
        let n = lx.len() as f64;
        let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
        let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
        assert!(sxy / sxx >= 1.9, "order {}", sxy / sxx);

        let t = 1e-3;
        let a = moments_damped(t, &p, &i).unwrap().p2;
        let b = short_time_asymptotics(t, &p, &i).p2;
        assert!(((a - b) / b).abs() < 1e-3);
    }

    #[test]
    fn critical_damping_examples() {
        let p = params(1.0, 2.0, 0.0);
        assert_eq!(critical_damping(&p, 1.0).unwrap(), 1.0);
        assert_eq!(critical_damping(&params(1.0, 0.0, 0.0), 1.0).unwrap(), 0.0);
        assert!(critical_damping(&p, 0.0).is_err());
        let at = params(1.0, 2.0, 1.0);
        assert_eq!(p2_rate(0.0, &at, &init(0.0, 1.0)), 0.0);
        assert!(p2_rate(0.0, &params(1.0, 2.0, 2.0), &init(0.0, 1.0)) < 0.0);
        assert!(p2_rate(0.0, &params(1.0, 2.0, 0.5), &init(0.0, 1.0)) > 0.0);
    }

    #[test]
    fn rate_matches_finite_difference() {
        let p = params(1.3, 1.7, 0.6);
        let i = init(0.0, 2.0);
        for t in [0.0, 0.4, 3.0] {
            let h = 1e-5;
            let lo = moments_damped(t, &p, &i).unwrap().p2;
            let hi = moments_damped(t + h, &p, &i).unwrap().p2;
            let fd = (hi - lo) / h;
            assert_relative_eq!(fd, p2_rate(t + h / 2.0, &p, &i), max_relative = 1e-6);
        }
    }

    #[test]
    fn closure_algebra() {
        let c = kolmogorov_closure(0.0);
        assert_eq!(c.c2, 0.5);
        let p = params(1.0, 2.0, 1.0);
        let late = moments_damped(1e3, &p, &init(0.0, 0.0)).unwrap().p2;
        assert_eq!(c.stationary_p2(&p), p.equilibrium_p2());
        assert_relative_eq!(c.stationary_p2(&p), late, epsilon = 1e-15);
        assert_eq!(kolmogorov_closure(1.0).c2, 1.0);
        for c1 in [-3.5, -1.0, 0.0, 0.25, 1.0, 7.0] {
            let c = kolmogorov_closure(c1);
            assert!((c.balance() - 1.0).abs() < 1e-12);
            assert_eq!(2.0 * c.c2 - 1.0, c1);
        }
    }

    #[test]
    fn budget_examples() {
        let p = params(1.0, 2.0, 1.0);
        let b = energy_budget(p.equilibrium_p2(), 0.0, &p);
        assert_eq!((b.net, b.residual), (0.0, 0.0));
        let b = energy_budget(0.0, 0.5, &p);
        assert_eq!(b.net, 2.0);
        assert_eq!(b.residual, -1.5);
        assert_eq!(b.net, b.injection - b.dissipation);
    }

    #[test]
    fn oracle_table_round_trip() {
        let p = params(1.0, 1.0, 0.5);
        let t = OracleTable::tabulate(&[0.0, 0.5, 1.0], OracleKind::Damped, &p, &init(0.0, 0.0)).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"t,p2_exact,x2_exact\n"));
        assert_eq!(OracleTable::read_csv(buf.as_slice()).unwrap(), t);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn small_gamma_limit(t in 0.0f64..1.0, mass in 0.2f64..5.0, eps in 0.0f64..5.0,
                                 x0 in 0.0f64..2.0, p0 in 0.0f64..2.0) {
                let d = moments_damped(t, &params(mass, eps, 1e-8), &init(x0, p0)).unwrap();
                let u = moments_undamped(t, &params(mass, eps, 0.0), &init(x0, p0)).unwrap();
                let rel = |a: f64, b: f64| if b == 0.0 { a.abs() } else { ((a - b) / b).abs() };
                prop_assert!(rel(d.p2, u.p2) < 1e-6);
                prop_assert!(rel(d.x2, u.x2) < 1e-6);
            }

            #[test]
            fn p2_monotone_by_critical_side(gamma in 0.05f64..5.0, eps in 0.1f64..5.0,
                                            p0 in 0.1f64..5.0, t in 0.0f64..10.0, dt in 1e-3f64..1.0) {
                let p = params(1.0, eps, gamma);
                let i = init(0.0, p0);
                let gc = critical_damping(&p, p0).unwrap();
                let a = moments_damped(t, &p, &i).unwrap().p2;
                let b = moments_damped(t + dt, &p, &i).unwrap().p2;
                // a few ulps of slack once the curve has flattened out
                let tol = 1e-14 * a.abs();
                if gamma < gc * (1.0 - 1e-9) {
                    prop_assert!(b >= a - tol);
                } else if gamma > gc * (1.0 + 1e-9) {
                    prop_assert!(b <= a + tol);
                }
            }

            #[test]
            fn x2_non_decreasing(gamma in 0.0f64..5.0, eps in 0.0f64..5.0, p0 in 0.0f64..5.0,
                                 t in 0.0f64..20.0, dt in 1e-4f64..1.0) {
                let p = params(1.0, eps, gamma);
                let i = init(0.3, p0);
                let a = moments_damped(t, &p, &i).unwrap().x2;
                let b = moments_damped(t + dt, &p, &i).unwrap().x2;
                prop_assert!(b >= a * (1.0 - 1e-14));
                let a = moments_undamped(t, &p, &i).unwrap().x2;
                let b = moments_undamped(t + dt, &p, &i).unwrap().x2;
                prop_assert!(b >= a);
            }
        }
    }
}
