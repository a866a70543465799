//! Growth exponents, regime labels, oracle deviations and energy-budget
//! residuals computed from moment time series.

use std::fmt;
use std::io::Write;

use crate::error::{Error, Result};
use crate::oracle::{energy_budget, EnergyBudget, OracleTable};
use crate::params::{InitialState, PhysicalParams};
use crate::sde::{EnsembleMoments, Estimate};
use crate::table::{fmt_sci, write_row};

/// Fewest samples a power-law fit accepts.
pub const MIN_FIT_POINTS: usize = 5;
/// Above this exponent standard error the regime is not classified.
pub const MAX_CLASSIFIABLE_SE: f64 = 0.2;
pub const TURBULENT_BAND: (f64, f64) = (2.7, 3.3);
pub const BALLISTIC_BAND: (f64, f64) = (1.8, 2.2);
pub const BROWNIAN_BAND: (f64, f64) = (0.8, 1.2);
/// Relative distance of the window-averaged `<p²>` from `m² epsilon / 2γ`
/// below which the window counts as equilibrated.
pub const EQUILIBRIUM_TOLERANCE: f64 = 0.01;
/// `|z|` bound and the fraction of samples that must meet it.
pub const Z_BOUND: f64 = 3.0;
pub const Z_PASS_FRACTION: f64 = 0.99;

pub const REGIME_CSV_HEADER: &str = "t_start,t_end,exponent,exponent_se,classification";
pub const DEVIATION_CSV_HEADER: &str = "t,x2,x2_oracle,z_x2,p2,p2_oracle,z_p2";
pub const ENERGY_CSV_HEADER: &str =
    "t,p2,injection,dissipation,net,observed_rate,observed_rate_se,residual,residual_se";

/// Anything that provides `<x²>` and `<p²>` on a time grid: ensemble
/// estimates or exact oracle samples (with zero standard error).
pub trait MomentSeries {
    fn times(&self) -> &[f64];
    fn x2(&self, i: usize) -> Estimate;
    fn p2(&self, i: usize) -> Estimate;

    fn len(&self) -> usize {
        self.times().len()
    }

    fn is_empty(&self) -> bool {
        self.times().is_empty()
    }
}

impl MomentSeries for EnsembleMoments {
    fn times(&self) -> &[f64] {
        &self.times
    }

    fn x2(&self, i: usize) -> Estimate {
        self.x2[i]
    }

    fn p2(&self, i: usize) -> Estimate {
        self.p2[i]
    }
}

impl MomentSeries for OracleTable {
    fn times(&self) -> &[f64] {
        &self.times
    }

    fn x2(&self, i: usize) -> Estimate {
        Estimate::exact(self.x2[i])
    }

    fn p2(&self, i: usize) -> Estimate {
        Estimate::exact(self.p2[i])
    }
}

fn check_window(window: (f64, f64)) -> Result<()> {
    let (a, b) = window;
    if !(a.is_finite() && b.is_finite() && a < b) {
        return Err(Error::Config(format!("window needs t_start < t_end, got [{a}, {b}]")));
    }
    Ok(())
}

/// Indices of samples inside `window`, with a relative slack for times
/// produced by arithmetic.
fn window_indices(times: &[f64], window: (f64, f64)) -> Vec<usize> {
    let slack = 1e-9 * window.0.abs().max(window.1.abs());
    times
        .iter()
        .enumerate()
        .filter(|(_, &t)| t >= window.0 - slack && t <= window.1 + slack)
        .map(|(i, _)| i)
        .collect()
}

/// Least-squares slope of `log(value - baseline)` against `log t` over the
/// samples in `window`, with the standard error from the residuals.
pub fn fit_power_law(times: &[f64], values: &[f64], window: (f64, f64), baseline: f64) -> Result<(f64, f64)> {
    check_window(window)?;
    if times.len() != values.len() {
        return Err(Error::Config(format!(
            "{} times but {} values",
            times.len(),
            values.len()
        )));
    }
    let idx = window_indices(times, window);
    if idx.len() < MIN_FIT_POINTS {
        return Err(Error::Config(format!(
            "window [{}, {}] holds {} samples, need at least {MIN_FIT_POINTS}",
            window.0,
            window.1,
            idx.len()
        )));
    }
    let mut lx = Vec::with_capacity(idx.len());
    let mut ly = Vec::with_capacity(idx.len());
    for &i in &idx {
        let (t, d) = (times[i], values[i] - baseline);
        if !(t > 0.0) {
            return Err(Error::Domain(format!("sample {i} at t = {t} has no logarithm")));
        }
        if !(d > 0.0) {
            return Err(Error::Domain(format!(
                "sample {i} at t = {t}: value - baseline = {d} is not positive"
            )));
        }
        lx.push(t.ln());
        ly.push(d.ln());
    }
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (x, y) in lx.iter().zip(&ly) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    let slope = sxy / sxx;
    let rss: f64 = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| {
            let r = y - my - slope * (x - mx);
            r * r
        })
        .sum();
    let se = (rss / (n - 2.0) / sxx).sqrt();
    Ok((slope, se))
}

/// Growth exponent of `<x²> - baseline` over `window`; `baseline` is the
/// known `<x0²>`.
pub fn fit_growth_exponent<S: MomentSeries + ?Sized>(
    series: &S,
    window: (f64, f64),
    baseline: f64,
) -> Result<(f64, f64)> {
    let values: Vec<f64> = (0..series.len()).map(|i| series.x2(i).value).collect();
    fit_power_law(series.times(), &values, window, baseline)
}

/// Ordinary least-squares slope of `values` against `t` over `window`.
pub fn linear_slope(times: &[f64], values: &[f64], window: (f64, f64)) -> Result<f64> {
    check_window(window)?;
    let idx = window_indices(times, window);
    if idx.len() < 2 {
        return Err(Error::Config(format!("window [{}, {}] holds fewer than 2 samples", window.0, window.1)));
    }
    let n = idx.len() as f64;
    let mt = idx.iter().map(|&i| times[i]).sum::<f64>() / n;
    let mv = idx.iter().map(|&i| values[i]).sum::<f64>() / n;
    let (mut stt, mut stv) = (0.0, 0.0);
    for &i in &idx {
        stt += (times[i] - mt) * (times[i] - mt);
        stv += (times[i] - mt) * (values[i] - mv);
    }
    Ok(stv / stt)
}

/// Trapezoidal time average of `<p²>` over the samples in `window`, with
/// the standard error taken as the largest one in the window (neighbouring
/// samples of one ensemble are strongly correlated, so averaging does not
/// shrink it).
pub fn window_average_p2<S: MomentSeries + ?Sized>(series: &S, window: (f64, f64)) -> Result<Estimate> {
    check_window(window)?;
    let idx = window_indices(series.times(), window);
    if idx.len() < 2 {
        return Err(Error::Config(format!("window [{}, {}] holds fewer than 2 samples", window.0, window.1)));
    }
    let t = series.times();
    let (mut area, mut se) = (0.0, 0.0f64);
    for w in idx.windows(2) {
        let (a, b) = (w[0], w[1]);
        area += 0.5 * (series.p2(a).value + series.p2(b).value) * (t[b] - t[a]);
    }
    for &i in &idx {
        se = se.max(series.p2(i).se);
    }
    let span = t[idx[idx.len() - 1]] - t[idx[0]];
    Ok(Estimate::new(area / span, se))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// `<x²>` growing as t³.
    Turbulent,
    /// t², free flight of the initial momentum.
    Ballistic,
    /// t, diffusive.
    Brownian,
    /// Exponent outside every band but `<p²>` at its stationary value.
    Equilibrium,
    Indeterminate,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Turbulent => "Turbulent",
            Self::Ballistic => "Ballistic",
            Self::Brownian => "Brownian",
            Self::Equilibrium => "Equilibrium",
            Self::Indeterminate => "Indeterminate",
        })
    }
}

fn in_band(v: f64, band: (f64, f64)) -> bool {
    v >= band.0 && v <= band.1
}

/// Regime label of an exponent fit, ignoring equilibrium.
pub fn regime_from_exponent(exponent: f64, se: f64) -> Regime {
    if !(se <= MAX_CLASSIFIABLE_SE) || !exponent.is_finite() {
        Regime::Indeterminate
    } else if in_band(exponent, TURBULENT_BAND) {
        Regime::Turbulent
    } else if in_band(exponent, BALLISTIC_BAND) {
        Regime::Ballistic
    } else if in_band(exponent, BROWNIAN_BAND) {
        Regime::Brownian
    } else {
        Regime::Indeterminate
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegimeReport {
    pub window: (f64, f64),
    pub exponent: f64,
    pub exponent_se: f64,
    pub classification: Regime,
    /// Set alongside any classification when `<p²>` is stationary.
    pub equilibrium: bool,
    pub crossover_time: f64,
}

impl RegimeReport {
    /// Classification with the equilibrium flag appended, e.g.
    /// `Brownian+Equilibrium`.
    pub fn label(&self) -> String {
        if self.equilibrium && self.classification != Regime::Equilibrium {
            format!("{}+Equilibrium", self.classification)
        } else {
            self.classification.to_string()
        }
    }
}

/// One report per window. The exponent is that of `<x²> - <x0²>`.
pub fn classify_regime<S: MomentSeries + ?Sized>(
    series: &S,
    params: &PhysicalParams,
    init: &InitialState,
    windows: &[(f64, f64)],
) -> Result<Vec<RegimeReport>> {
    windows
        .iter()
        .map(|&window| {
            let (exponent, exponent_se) = fit_growth_exponent(series, window, init.x0_sq)?;
            let equilibrium = if params.gamma > 0.0 {
                let target = params.equilibrium_p2();
                let avg = window_average_p2(series, window)?;
                ((avg.value - target) / target).abs() < EQUILIBRIUM_TOLERANCE
            } else {
                false
            };
            let mut classification = regime_from_exponent(exponent, exponent_se);
            if classification == Regime::Indeterminate && equilibrium && exponent_se <= MAX_CLASSIFIABLE_SE {
                classification = Regime::Equilibrium;
            }
            Ok(RegimeReport {
                window,
                exponent,
                exponent_se,
                classification,
                equilibrium,
                crossover_time: params.crossover_time(),
            })
        })
        .collect()
}

pub fn write_regime_csv<W: Write>(reports: &[RegimeReport], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{REGIME_CSV_HEADER}")?;
    for r in reports {
        writeln!(
            w,
            "{},{},{},{},{}",
            fmt_sci(r.window.0),
            fmt_sci(r.window.1),
            fmt_sci(r.exponent),
            fmt_sci(r.exponent_se),
            r.label()
        )?;
    }
    Ok(())
}

/// `(estimate - exact) / se`; zero when both agree exactly, infinite when an
/// exact estimate disagrees.
pub fn z_score(estimate: Estimate, exact: f64) -> f64 {
    let d = estimate.value - exact;
    if d == 0.0 {
        0.0
    } else if estimate.se > 0.0 {
        d / estimate.se
    } else {
        d.signum() * f64::INFINITY
    }
}

/// Per-time z-scores of a series against an oracle table on the same grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviationReport {
    pub times: Vec<f64>,
    pub x2: Vec<Estimate>,
    pub p2: Vec<Estimate>,
    pub x2_oracle: Vec<f64>,
    pub p2_oracle: Vec<f64>,
    pub z_x2: Vec<f64>,
    pub z_p2: Vec<f64>,
    pub max_abs_z: f64,
    /// Fraction of times with `|z| <= 3`, for each moment.
    pub fraction_within_x2: f64,
    pub fraction_within_p2: f64,
    pub pass: bool,
}

pub fn compare_to_oracle<S: MomentSeries + ?Sized>(series: &S, oracle: &OracleTable) -> Result<DeviationReport> {
    let times = series.times();
    if times.len() != oracle.times.len() {
        return Err(Error::Config(format!(
            "time grids differ in length ({} vs {})",
            times.len(),
            oracle.times.len()
        )));
    }
    for (i, (&a, &b)) in times.iter().zip(&oracle.times).enumerate() {
        if (a - b).abs() > 1e-12 * a.abs().max(b.abs()).max(1.0) {
            return Err(Error::Config(format!("time grids differ at sample {i}: {a} vs {b}")));
        }
    }
    let n = times.len();
    let x2: Vec<Estimate> = (0..n).map(|i| series.x2(i)).collect();
    let p2: Vec<Estimate> = (0..n).map(|i| series.p2(i)).collect();
    let z_x2: Vec<f64> = (0..n).map(|i| z_score(x2[i], oracle.x2[i])).collect();
    let z_p2: Vec<f64> = (0..n).map(|i| z_score(p2[i], oracle.p2[i])).collect();
    let max_abs_z = z_x2.iter().chain(&z_p2).fold(0.0f64, |m, z| m.max(z.abs()));
    let within = |z: &[f64]| {
        if z.is_empty() {
            1.0
        } else {
            z.iter().filter(|z| z.abs() <= Z_BOUND).count() as f64 / z.len() as f64
        }
    };
    let fraction_within_x2 = within(&z_x2);
    let fraction_within_p2 = within(&z_p2);
    Ok(DeviationReport {
        times: times.to_vec(),
        x2,
        p2,
        x2_oracle: oracle.x2.clone(),
        p2_oracle: oracle.p2.clone(),
        z_x2,
        z_p2,
        max_abs_z,
        fraction_within_x2,
        fraction_within_p2,
        pass: fraction_within_x2 >= Z_PASS_FRACTION && fraction_within_p2 >= Z_PASS_FRACTION,
    })
}

impl DeviationReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{DEVIATION_CSV_HEADER}")?;
        for i in 0..self.times.len() {
            write_row(
                &mut w,
                &[
                    self.times[i],
                    self.x2[i].value,
                    self.x2_oracle[i],
                    self.z_x2[i],
                    self.p2[i].value,
                    self.p2_oracle[i],
                    self.z_p2[i],
                ],
            )?;
        }
        Ok(())
    }
}

/// Finite-difference rate of `<p²>` against the budget at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyRate {
    pub t: f64,
    pub p2: Estimate,
    pub budget: EnergyBudget,
    pub rate_se: f64,
    /// Combined standard error of `budget.residual`.
    pub residual_se: f64,
    pub interior: bool,
}

/// Observed `d<p²>/dt` at every time, paired with injection `m² epsilon` and
/// dissipation `2γ<p²>`.
///
/// Interior points use the central difference over the two neighbours,
/// which estimates the rate at their midpoint; `<p²>` is linearly
/// interpolated there. Endpoints use one-sided differences. Standard errors
/// combine the two samples as if independent.
pub fn energy_rate_series<S: MomentSeries + ?Sized>(series: &S, params: &PhysicalParams) -> Result<Vec<EnergyRate>> {
    let t = series.times();
    let n = t.len();
    if n < 3 {
        return Err(Error::Config(format!("energy rates need at least 3 samples, got {n}")));
    }
    let two_gamma = 2.0 * params.gamma;
    let point = |tc: f64, p2: Estimate, a: usize, b: usize, interior: bool| {
        let (pa, pb) = (series.p2(a), series.p2(b));
        let h = t[b] - t[a];
        let rate = (pb.value - pa.value) / h;
        let rate_se = pa.se.hypot(pb.se) / h;
        EnergyRate {
            t: tc,
            p2,
            budget: energy_budget(p2.value, rate, params),
            rate_se,
            residual_se: rate_se.hypot(two_gamma * p2.se),
            interior,
        }
    };
    let mut out = Vec::with_capacity(n);
    out.push(point(t[0], series.p2(0), 0, 1, false));
    for i in 1..n - 1 {
        let mid = 0.5 * (t[i - 1] + t[i + 1]);
        let (lo, hi) = if mid <= t[i] { (i - 1, i) } else { (i, i + 1) };
        let w = (mid - t[lo]) / (t[hi] - t[lo]);
        let (a, b) = (series.p2(lo), series.p2(hi));
        let p2 = Estimate::new(a.value + w * (b.value - a.value), a.se + w * (b.se - a.se));
        out.push(point(mid, p2, i - 1, i + 1, true));
    }
    out.push(point(t[n - 1], series.p2(n - 1), n - 2, n - 1, false));
    Ok(out)
}

/// Budget residual over a whole window: mean rate `(p2_end - p2_start) / T`
/// against `m² epsilon - 2γ <p²>_avg`.
pub fn window_energy_residual<S: MomentSeries + ?Sized>(
    series: &S,
    params: &PhysicalParams,
    window: (f64, f64),
) -> Result<Estimate> {
    let avg = window_average_p2(series, window)?;
    let idx = window_indices(series.times(), window);
    let (a, b) = (idx[0], idx[idx.len() - 1]);
    let span = series.times()[b] - series.times()[a];
    let (pa, pb) = (series.p2(a), series.p2(b));
    let rate = (pb.value - pa.value) / span;
    let net = params.momentum_diffusion() - 2.0 * params.gamma * avg.value;
    let se = (pa.se.hypot(pb.se) / span).hypot(2.0 * params.gamma * avg.se);
    Ok(Estimate::new(rate - net, se))
}

pub fn write_energy_csv<W: Write>(rates: &[EnergyRate], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{ENERGY_CSV_HEADER}")?;
    for r in rates {
        write_row(
            &mut w,
            &[
                r.t,
                r.p2.value,
                r.budget.injection,
                r.budget.dissipation,
                r.budget.net,
                r.budget.observed_rate,
                r.rate_se,
                r.budget.residual,
                r.residual_se,
            ],
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::OracleKind;
    use crate::sde::{log_times, simulate_ensemble, EnsembleConfig, Integrator};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn table(times: Vec<f64>, f: impl Fn(f64) -> (f64, f64)) -> OracleTable {
        let (p2, x2) = times.iter().map(|&t| f(t)).unzip();
        OracleTable { times, p2, x2 }
    }

    #[test]
    fn exact_power_laws() {
        let cubic = table(log_times(0.01, 0.1, 20), |t| (t, t.powi(3) / 3.0));
        let (e, se) = fit_growth_exponent(&cubic, (0.01, 0.1), 0.0).unwrap();
        assert_relative_eq!(e, 3.0, epsilon = 1e-12);
        assert!(se < 0.01);
        let square = table(log_times(0.5, 4.0, 9), |t| (1.0, t * t));
        assert_relative_eq!(fit_growth_exponent(&square, (0.5, 4.0), 0.0).unwrap().0, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn baseline_is_subtracted() {
        let s = table(log_times(0.1, 1.0, 10), |t| (1.0, 0.7 + t.powi(3)));
        assert_relative_eq!(fit_growth_exponent(&s, (0.1, 1.0), 0.7).unwrap().0, 3.0, epsilon = 1e-9);
    }

    #[test]
    fn damped_long_time_is_diffusive() {
        let params = PhysicalParams::natural(1.0, 1.0, 1.0).unwrap();
        let init = InitialState::default();
        // uniform sampling; log spacing weights the curved early end and gives 1.059
        let times: Vec<f64> = (10..=100).map(f64::from).collect();
        let o = OracleTable::tabulate(&times, OracleKind::Damped, &params, &init).unwrap();
        let (e, _) = fit_growth_exponent(&o, (10.0, 100.0), 0.0).unwrap();
        assert!((0.95..=1.05).contains(&e), "exponent {e}");
    }

    #[test]
    fn fit_errors() {
        let s = table(log_times(0.1, 1.0, 10), |t| (1.0, t - 0.35));
        let err = fit_growth_exponent(&s, (0.1, 1.0), 0.0).unwrap_err().to_string();
        assert!(err.contains("sample 0"), "{err}");
        let few = table(vec![0.1, 0.2, 0.3, 0.4], |t| (1.0, t));
        assert!(fit_growth_exponent(&few, (0.1, 0.4), 0.0).is_err());
        assert!(fit_growth_exponent(&few, (0.4, 0.1), 0.0).is_err());
    }

    proptest! {
        #[test]
        fn scale_equivariant(c in 1e-6f64..1e6, k in 0.5f64..3.5) {
            let times = log_times(0.05, 2.0, 12);
            let v: Vec<f64> = times.iter().map(|t| t.powf(k) * (1.0 + 0.1 * (7.0 * t).sin())).collect();
            let scaled: Vec<f64> = v.iter().map(|x| c * x).collect();
            let (a, _) = fit_power_law(&times, &v, (0.05, 2.0), 0.0).unwrap();
            let (b, _) = fit_power_law(&times, &scaled, (0.05, 2.0), 0.0).unwrap();
            prop_assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn classification_bands() {
        assert_eq!(regime_from_exponent(3.0, 0.01), Regime::Turbulent);
        assert_eq!(regime_from_exponent(2.0, 0.01), Regime::Ballistic);
        assert_eq!(regime_from_exponent(1.0, 0.01), Regime::Brownian);
        assert_eq!(regime_from_exponent(1.5, 0.01), Regime::Indeterminate);
        assert_eq!(regime_from_exponent(3.0, 0.25), Regime::Indeterminate);
    }

    fn oracle_run(params: &PhysicalParams, init: &InitialState, t0: f64, t1: f64) -> OracleTable {
        let kind = OracleKind::from_damped(params.gamma > 0.0);
        OracleTable::tabulate(&log_times(t0, t1, 40), kind, params, init).unwrap()
    }

    #[test]
    fn classify_examples() {
        let undamped = PhysicalParams::natural(1.0, 1.0, 0.0).unwrap();
        let o = oracle_run(&undamped, &InitialState::default(), 0.1, 1.0);
        let r = classify_regime(&o, &undamped, &InitialState::default(), &[(0.1, 1.0)]).unwrap();
        assert_eq!(r[0].classification, Regime::Turbulent);
        assert!(r[0].crossover_time.is_infinite());

        let fast = InitialState::new(0.0, 100.0).unwrap();
        let o = oracle_run(&undamped, &fast, 0.01, 0.1);
        let r = classify_regime(&o, &undamped, &fast, &[(0.01, 0.1)]).unwrap();
        assert_eq!(r[0].classification, Regime::Ballistic);

        let damped = PhysicalParams::natural(1.0, 2.0, 1.0).unwrap();
        let o = oracle_run(&damped, &InitialState::default(), 10.0, 20.0);
        let r = classify_regime(&o, &damped, &InitialState::default(), &[(10.0, 20.0)]).unwrap();
        assert_eq!(r[0].classification, Regime::Brownian);
        assert!(r[0].equilibrium);
        assert_eq!(r[0].label(), "Brownian+Equilibrium");
        assert_eq!(r[0].crossover_time, 1.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn crossover_property(gamma in 0.01f64..100.0, eps in 0.1f64..10.0) {
            let params = PhysicalParams::natural(1.0, eps, gamma).unwrap();
            let init = InitialState::default();
            let tc = 1.0 / gamma;
            let early = oracle_run(&params, &init, 0.005 * tc, 0.09 * tc);
            let late = oracle_run(&params, &init, 12.0 * tc, 40.0 * tc);
            let e = classify_regime(&early, &params, &init, &[(0.005 * tc, 0.09 * tc)]).unwrap();
            let l = classify_regime(&late, &params, &init, &[(12.0 * tc, 40.0 * tc)]).unwrap();
            prop_assert_eq!(e[0].classification, Regime::Turbulent);
            prop_assert_eq!(l[0].classification, Regime::Brownian);
        }
    }

    #[test]
    fn oracle_against_itself() {
        let params = PhysicalParams::natural(1.0, 1.0, 0.0).unwrap();
        let o = OracleTable::tabulate(&[0.0, 0.5, 1.0], OracleKind::Undamped, &params, &InitialState::default()).unwrap();
        let d = compare_to_oracle(&o, &o).unwrap();
        assert!(d.pass);
        assert_eq!(d.max_abs_z, 0.0);
        let shifted = OracleTable::tabulate(&[0.0, 0.5, 1.5], OracleKind::Undamped, &params, &InitialState::default()).unwrap();
        assert!(compare_to_oracle(&o, &shifted).is_err());
    }

    fn small_run(params: &PhysicalParams, init: &InitialState, times: Vec<f64>) -> EnsembleMoments {
        let cfg = EnsembleConfig::new(20_000, 1e-3, times, 11, Integrator::ExactOu).unwrap();
        simulate_ensemble(&cfg, params, init, params.gamma > 0.0).unwrap()
    }

    #[test]
    fn wrong_mass_is_detected() {
        let params = PhysicalParams::natural(1.0, 1.0, 0.0).unwrap();
        let init = InitialState::default();
        let times = crate::sde::linear_times(1.0, 11);
        let run = small_run(&params, &init, times.clone());
        let right = OracleTable::tabulate(&times, OracleKind::Undamped, &params, &init).unwrap();
        assert!(compare_to_oracle(&run, &right).unwrap().pass);
        let heavy = PhysicalParams::natural(2.0, 1.0, 0.0).unwrap();
        let wrong = OracleTable::tabulate(&times, OracleKind::Undamped, &heavy, &init).unwrap();
        let d = compare_to_oracle(&run, &wrong).unwrap();
        assert!(!d.pass);
        assert!(d.max_abs_z > 10.0, "max |z| {}", d.max_abs_z);
    }

    #[test]
    fn energy_rate_limits() {
        let times = crate::sde::linear_times(1.0, 21);
        let free = PhysicalParams::natural(1.0, 1.0, 0.0).unwrap();
        let run = small_run(&free, &InitialState::default(), times.clone());
        for r in energy_rate_series(&run, &free).unwrap() {
            assert_eq!(r.budget.dissipation, 0.0);
            assert!((r.budget.observed_rate - 1.0).abs() < 4.0 * r.rate_se, "{r:?}");
        }
        let decay = PhysicalParams::natural(1.0, 0.0, 1.0).unwrap();
        let hot = InitialState::new(0.0, 1.0).unwrap();
        let run = small_run(&decay, &hot, times);
        for r in energy_rate_series(&run, &decay).unwrap().iter().filter(|r| r.interior) {
            assert_eq!(r.budget.injection, 0.0);
            // central-difference truncation of e^{-2t} is below 1e-3 here
            let expected = -2.0 * r.p2.value;
            assert!((r.budget.observed_rate - expected).abs() < 4.0 * r.residual_se + 1e-3, "{r:?}");
        }
    }

    #[test]
    fn energy_rate_on_oracle_is_exact_for_quadratics() {
        // <p²> linear in t for the undamped case: central and one-sided
        // differences are exact.
        let params = PhysicalParams::natural(1.5, 2.0, 0.0).unwrap();
        let o = OracleTable::tabulate(&[0.0, 0.1, 0.3, 0.6, 1.0], OracleKind::Undamped, &params, &InitialState::default()).unwrap();
        let rates = energy_rate_series(&o, &params).unwrap();
        assert_eq!(rates.len(), 5);
        for r in &rates {
            assert_relative_eq!(r.budget.residual, 0.0, epsilon = 1e-12);
            assert_eq!(r.residual_se, 0.0);
        }
        assert_relative_eq!(rates[1].t, 0.15);
        assert!(energy_rate_series(&OracleTable { times: vec![0.0, 1.0], p2: vec![0.0; 2], x2: vec![0.0; 2] }, &params).is_err());
    }

    #[test]
    fn csv_outputs() {
        let params = PhysicalParams::natural(1.0, 2.0, 1.0).unwrap();
        let o = oracle_run(&params, &InitialState::default(), 10.0, 20.0);
        let r = classify_regime(&o, &params, &InitialState::default(), &[(10.0, 20.0)]).unwrap();
        let mut buf = Vec::new();
        write_regime_csv(&r, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(REGIME_CSV_HEADER));
        assert!(text.trim_end().ends_with("Brownian+Equilibrium"));
    }
}
