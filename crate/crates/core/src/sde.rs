//! Ensemble integration of the free-particle Itô SDEs
//!
//! ```text
//! dp = -gamma p dt + sqrt(m² epsilon) dW
//! dx = p / m dt
//! ```
//!
//! with `gamma = 0` for the undamped model. Trajectories are independent;
//! each one draws from its own counter-derived substream and trajectories
//! are grouped into fixed-size blocks whose partial statistics are merged in
//! block order. The result is therefore bit-identical for a given seed no
//! matter how many workers run the blocks.

use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::params::{InitialState, PhysicalParams};
use crate::rng::trajectory_rng;
use crate::table::{write_row, Table};

/// Trajectories per work unit. Part of the reproducibility contract: the
/// merge order of partial sums depends on it, worker count does not.
pub const BLOCK_SIZE: usize = 512;

/// Largest `gamma · dt` accepted by the Euler-Maruyama integrator.
pub const EM_MAX_GAMMA_DT: f64 = 0.1;

pub const CSV_HEADER: &str = "t,x2,x2_se,p2,p2_se,xp,xp_se";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParticleState {
    pub x: f64,
    pub p: f64,
    pub t: f64,
}

impl ParticleState {
    pub fn new(x: f64, p: f64) -> Self {
        Self { x, p, t: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Integrator {
    EulerMaruyama,
    /// Exact Ornstein-Uhlenbeck transition for `p`, trapezoidal update for `x`.
    #[default]
    ExactOu,
}

impl std::str::FromStr for Integrator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "eulermaruyama" | "em" | "euler" => Ok(Self::EulerMaruyama),
            "exactou" | "exact" | "ou" => Ok(Self::ExactOu),
            other => Err(Error::Config(format!("unknown integrator {other:?}"))),
        }
    }
}

impl std::fmt::Display for Integrator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::EulerMaruyama => "euler-maruyama",
            Self::ExactOu => "exact-ou",
        })
    }
}

/// One step of size `h`, reduced to `p' = a p + s z`, `x' = x + b p + c p'`.
#[derive(Debug, Clone, Copy)]
struct StepKernel {
    h: f64,
    a: f64,
    s: f64,
    b: f64,
    c: f64,
}

impl StepKernel {
    fn new(h: f64, params: &PhysicalParams, gamma: f64, integrator: Integrator) -> Self {
        let m = params.mass;
        let diffusion = params.momentum_diffusion();
        match integrator {
            Integrator::EulerMaruyama => Self {
                h,
                a: 1.0 - gamma * h,
                s: (diffusion * h).sqrt(),
                b: h / m,
                c: 0.0,
            },
            Integrator::ExactOu => {
                let variance = if gamma > 0.0 {
                    // (1 - e^{-2 gamma h}) / (2 gamma), tends to h as gamma -> 0
                    diffusion * -(-2.0 * gamma * h).exp_m1() / (2.0 * gamma)
                } else {
                    diffusion * h
                };
                Self {
                    h,
                    a: (-gamma * h).exp(),
                    s: variance.sqrt(),
                    b: 0.5 * h / m,
                    c: 0.5 * h / m,
                }
            }
        }
    }

    #[inline(always)]
    fn apply(&self, state: ParticleState, noise: f64) -> ParticleState {
        let p = self.a * state.p + self.s * noise;
        ParticleState {
            x: state.x + self.b * state.p + self.c * p,
            p,
            t: state.t + self.h,
        }
    }
}

/// Euler-Maruyama step of the undamped equations; `gamma` is ignored.
/// The position update uses the pre-step momentum.
pub fn step_undamped(
    state: ParticleState,
    dt: f64,
    noise: f64,
    params: &PhysicalParams,
) -> ParticleState {
    StepKernel::new(dt, params, 0.0, Integrator::EulerMaruyama).apply(state, noise)
}

/// One step of the damped equations with drift `-gamma p`.
///
/// `EulerMaruyama` advances `x` with the pre-step momentum; `ExactOu`
/// samples the exact one-step momentum transition and advances `x` with the
/// mean of the pre- and post-step momenta.
pub fn step_damped(
    state: ParticleState,
    dt: f64,
    noise: f64,
    params: &PhysicalParams,
    integrator: Integrator,
) -> ParticleState {
    StepKernel::new(dt, params, params.gamma, integrator).apply(state, noise)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleConfig {
    pub n_trajectories: usize,
    pub dt: f64,
    pub t_final: f64,
    pub sample_times: Vec<f64>,
    pub seed: u64,
    pub integrator: Integrator,
}

impl EnsembleConfig {
    pub fn new(
        n_trajectories: usize,
        dt: f64,
        sample_times: Vec<f64>,
        seed: u64,
        integrator: Integrator,
    ) -> Result<Self> {
        let t_final = sample_times.last().copied().unwrap_or(0.0);
        let cfg = Self {
            n_trajectories,
            dt,
            t_final,
            sample_times,
            seed,
            integrator,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// `1e-3 · min(1/gamma, 1)`.
    pub fn default_dt(gamma: f64) -> f64 {
        if gamma > 1.0 {
            1e-3 / gamma
        } else {
            1e-3
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_trajectories < 2 {
            return Err(Error::Config(format!(
                "n_trajectories must be at least 2, got {}",
                self.n_trajectories
            )));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return Err(Error::Config(format!("t_final must be positive, got {}", self.t_final)));
        }
        if self.sample_times.is_empty() {
            return Err(Error::Config("sample_times is empty".into()));
        }
        let mut prev = None;
        for &t in &self.sample_times {
            if !(0.0..=self.t_final).contains(&t) {
                return Err(Error::Config(format!(
                    "sample time {t} outside [0, {}]",
                    self.t_final
                )));
            }
            if let Some(prev) = prev {
                if t <= prev {
                    return Err(Error::Config(format!(
                        "sample_times must be strictly increasing ({prev} then {t})"
                    )));
                }
                // relative slack for times generated by arithmetic
                if t - prev < self.dt * (1.0 - 1e-9) {
                    return Err(Error::Config(format!(
                        "dt = {} exceeds the sample spacing {} between {prev} and {t}",
                        self.dt,
                        t - prev
                    )));
                }
            }
            prev = Some(t);
        }
        Ok(())
    }
}

/// `n` equally spaced times covering `[0, t_final]`, both ends included.
pub fn linear_times(t_final: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2);
    (0..n).map(|i| t_final * i as f64 / (n - 1) as f64).collect()
}

/// `n` logarithmically spaced times covering `[t_start, t_end]`.
pub fn log_times(t_start: f64, t_end: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2 && t_start > 0.0 && t_end > t_start);
    let (a, b) = (t_start.ln(), t_end.ln());
    (0..n)
        .map(|i| {
            if i == n - 1 {
                t_end
            } else if i == 0 {
                t_start
            } else {
                (a + (b - a) * i as f64 / (n - 1) as f64).exp()
            }
        })
        .collect()
}

/// A sample estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

impl Estimate {
    pub fn new(value: f64, se: f64) -> Self {
        Self { value, se }
    }

    pub fn exact(value: f64) -> Self {
        Self { value, se: 0.0 }
    }
}

/// Sample second moments of an ensemble at each sample time.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleMoments {
    pub times: Vec<f64>,
    pub x2: Vec<Estimate>,
    pub p2: Vec<Estimate>,
    pub xp: Vec<Estimate>,
    /// Sample mean of `p`; not part of the CSV.
    pub p_mean: Vec<Estimate>,
    pub n_trajectories: usize,
}

impl EnsembleMoments {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        for i in 0..self.len() {
            write_row(
                &mut w,
                &[
                    self.times[i],
                    self.x2[i].value,
                    self.x2[i].se,
                    self.p2[i].value,
                    self.p2[i].se,
                    self.xp[i].value,
                    self.xp[i].se,
                ],
            )?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("CSV is ASCII")
    }

    /// Reads the CSV written by [`EnsembleMoments::write_csv`]. The trajectory
    /// count is not stored and comes back as zero; `p_mean` is empty.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let table = Table::read(r)?;
        let col = |name: &str| {
            table.column(name).ok_or_else(|| Error::Parse {
                line: 1,
                msg: format!("missing column {name}"),
            })
        };
        let pair = |v: &str, se: &str| -> Result<Vec<Estimate>> {
            Ok(col(v)?
                .into_iter()
                .zip(col(se)?)
                .map(|(v, s)| Estimate::new(v, s))
                .collect())
        };
        Ok(Self {
            times: col("t")?,
            x2: pair("x2", "x2_se")?,
            p2: pair("p2", "p2_se")?,
            xp: pair("xp", "xp_se")?,
            p_mean: Vec::new(),
            n_trajectories: 0,
        })
    }
}

/// How ensemble blocks are scheduled. Results do not depend on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// `None` uses the ambient rayon pool.
    #[cfg(feature = "parallel")]
    Parallel { workers: Option<usize> },
}

impl Default for Execution {
    fn default() -> Self {
        #[cfg(feature = "parallel")]
        {
            Self::Parallel { workers: None }
        }
        #[cfg(not(feature = "parallel"))]
        {
            Self::Sequential
        }
    }
}

impl Execution {
    /// `Sequential` for one worker, otherwise a pool capped at `workers`
    /// (sequential regardless when built without the `parallel` feature).
    pub fn with_workers(workers: usize) -> Self {
        #[cfg(feature = "parallel")]
        if workers > 1 {
            return Self::Parallel { workers: Some(workers) };
        }
        let _ = workers;
        Self::Sequential
    }
}

/// Running mean and sum of squared deviations, mergeable.
#[derive(Debug, Clone, Copy, Default)]
struct Welford {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Welford {
    #[inline]
    fn push(&mut self, v: f64) {
        self.n += 1.0;
        let d = v - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (v - self.mean);
    }

    fn merge(&mut self, other: &Self) {
        if other.n == 0.0 {
            return;
        }
        if self.n == 0.0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        self.mean += d * other.n / n;
        self.m2 += other.m2 + d * d * self.n * other.n / n;
        self.n = n;
    }

    fn estimate(&self) -> Estimate {
        let var = if self.n > 1.0 { self.m2 / (self.n - 1.0) } else { 0.0 };
        Estimate::new(self.mean, (var / self.n).sqrt())
    }
}

/// Per-sample-time statistics: x², p², xp, p.
type BlockStats = Vec<[Welford; 4]>;

struct Plan {
    kernels: Vec<(usize, StepKernel)>,
    record_initial: bool,
}

impl Plan {
    fn new(config: &EnsembleConfig, params: &PhysicalParams, damped: bool) -> Self {
        let gamma = if damped { params.gamma } else { 0.0 };
        let integrator = config.integrator;
        let record_initial = config.sample_times[0] == 0.0;
        let mut kernels = Vec::with_capacity(config.sample_times.len());
        let mut t = 0.0;
        for &ts in &config.sample_times {
            if ts == 0.0 {
                continue;
            }
            let span = ts - t;
            let n = ((span / config.dt) - 1e-9).ceil().max(1.0) as usize;
            kernels.push((n, StepKernel::new(span / n as f64, params, gamma, integrator)));
            t = ts;
        }
        Self {
            kernels,
            record_initial,
        }
    }

    fn run_block(&self, config: &EnsembleConfig, init: &InitialState, block: usize) -> BlockStats {
        let n_times = config.sample_times.len();
        let mut stats: BlockStats = vec![[Welford::default(); 4]; n_times];
        let start = block * BLOCK_SIZE;
        let end = (start + BLOCK_SIZE).min(config.n_trajectories);
        let (sx, sp) = (init.x0_sq.sqrt(), init.p0_sq.sqrt());
        for traj in start..end {
            let mut rng = trajectory_rng(config.seed, traj as u64);
            let zx: f64 = rng.sample(StandardNormal);
            let zp: f64 = rng.sample(StandardNormal);
            let mut state = ParticleState::new(sx * zx, sp * zp);
            let mut slot = 0;
            let mut record = |slot: usize, s: &ParticleState| {
                let acc = &mut stats[slot];
                acc[0].push(s.x * s.x);
                acc[1].push(s.p * s.p);
                acc[2].push(s.x * s.p);
                acc[3].push(s.p);
            };
            if self.record_initial {
                record(slot, &state);
                slot += 1;
            }
            for (n, kernel) in &self.kernels {
                for _ in 0..*n {
                    let z: f64 = rng.sample(StandardNormal);
                    state = kernel.apply(state, z);
                }
                record(slot, &state);
                slot += 1;
            }
        }
        stats
    }
}

/// Simulates `config.n_trajectories` independent paths and returns sample
/// second moments at each sample time. Uses [`Execution::default`].
pub fn simulate_ensemble(
    config: &EnsembleConfig,
    params: &PhysicalParams,
    init: &InitialState,
    damped: bool,
) -> Result<EnsembleMoments> {
    simulate_ensemble_with(config, params, init, damped, Execution::default())
}

pub fn simulate_ensemble_with(
    config: &EnsembleConfig,
    params: &PhysicalParams,
    init: &InitialState,
    damped: bool,
    execution: Execution,
) -> Result<EnsembleMoments> {
    config.validate()?;
    params.validate()?;
    if damped && config.integrator == Integrator::EulerMaruyama && config.dt * params.gamma > EM_MAX_GAMMA_DT {
        return Err(Error::Stability(format!(
            "Euler-Maruyama needs dt·gamma <= {EM_MAX_GAMMA_DT}, got {}",
            config.dt * params.gamma
        )));
    }
    let plan = Plan::new(config, params, damped);
    let n_blocks = config.n_trajectories.div_ceil(BLOCK_SIZE);

    let blocks: Vec<BlockStats> = match execution {
        Execution::Sequential => (0..n_blocks).map(|b| plan.run_block(config, init, b)).collect(),
        #[cfg(feature = "parallel")]
        Execution::Parallel { workers } => {
            use rayon::prelude::*;
            let run = || {
                (0..n_blocks)
                    .into_par_iter()
                    .map(|b| plan.run_block(config, init, b))
                    .collect::<Vec<_>>()
            };
            match workers {
                None => run(),
                Some(w) => rayon::ThreadPoolBuilder::new()
                    .num_threads(w.max(1))
                    .build()
                    .map_err(|e| Error::Config(format!("thread pool: {e}")))?
                    .install(run),
            }
        }
    };

    let n_times = config.sample_times.len();
    let mut total: BlockStats = vec![[Welford::default(); 4]; n_times];
    for block in &blocks {
        for (acc, part) in total.iter_mut().zip(block) {
            for k in 0..4 {
                acc[k].merge(&part[k]);
            }
        }
    }

    Ok(EnsembleMoments {
        times: config.sample_times.clone(),
        x2: total.iter().map(|a| a[0].estimate()).collect(),
        p2: total.iter().map(|a| a[1].estimate()).collect(),
        xp: total.iter().map(|a| a[2].estimate()).collect(),
        p_mean: total.iter().map(|a| a[3].estimate()).collect(),
        n_trajectories: config.n_trajectories,
    })
}
