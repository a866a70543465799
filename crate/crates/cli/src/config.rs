//! Plain-text `key = value` experiment configuration.
//!
//! One key per line, `#` starts a comment. Exactly one noise specification
//! must be present: `epsilon`, or `lambda` with `alpha`, or `T` (with
//! optional `k`) together with a positive `gamma`.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::PathBuf;

use openturb::fpe::Splitting;
use openturb::params::{GrwParams, ThermalParams};
use openturb::sde::{linear_times, EnsembleConfig, EM_MAX_GAMMA_DT};
use openturb::{InitialState, Integrator, PhysicalParams};
use sha2::{Digest, Sha256};

/// A configuration that violates an invariant; reported with exit code 2.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

impl From<openturb::Error> for ConfigError {
    fn from(e: openturb::Error) -> Self {
        Self(e.to_string())
    }
}

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

pub const KEYS: &[&str] = &[
    "mass",
    "hbar",
    "gamma",
    "epsilon",
    "lambda",
    "alpha",
    "k",
    "T",
    "x0_sq",
    "p0_sq",
    "damped",
    "integrator",
    "seed",
    "n_traj",
    "dt",
    "t_final",
    "n_samples",
    "sample_times",
    "nx",
    "np",
    "x_half",
    "p_half",
    "fpe_dt",
    "snapshot_every",
    "splitting",
    "windows",
    "output_dir",
];

/// Raw key/value pairs, before interpretation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    pub entries: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return err(format!("line {}: expected key = value, got {line:?}", n + 1));
            };
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return err(format!("line {}: unknown key {key:?}", n + 1));
            }
            if entries.insert(key.to_string(), value.to_string()).is_some() {
                return err(format!("line {}: key {key:?} given twice", n + 1));
            }
        }
        Ok(Self { entries })
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn remove(&mut self, key: &str) {
        self.entries.remove(key);
    }

    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| ConfigError(format!("{key}: cannot parse {v:?}"))),
        }
    }

    fn real(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        let v = self.get::<f64>(key)?;
        if let Some(x) = v {
            if !x.is_finite() {
                return err(format!("{key} must be finite, got {x}"));
            }
        }
        Ok(v)
    }
}

/// Where the noise intensity comes from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Noise {
    Epsilon(f64),
    Grw(GrwParams),
    Thermal(ThermalParams),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Sampling {
    Count(usize),
    Times(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub noise: Noise,
    pub params: PhysicalParams,
    pub init: InitialState,
    pub damped: bool,
    pub integrator: Integrator,
    pub seed: u64,
    pub n_traj: usize,
    pub dt: f64,
    pub t_final: f64,
    pub sampling: Sampling,
    pub nx: usize,
    pub np: usize,
    pub x_half: Option<f64>,
    pub p_half: Option<f64>,
    pub fpe_dt: Option<f64>,
    pub snapshot_every: usize,
    pub splitting: Splitting,
    pub windows: Vec<(f64, f64)>,
    pub output_dir: PathBuf,
}

pub const DEFAULT_OUTPUT_DIR: &str = "openturb-out";

fn parse_list(key: &str, v: &str) -> Result<Vec<f64>, ConfigError> {
    v.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| ConfigError(format!("{key}: cannot parse {s:?}")))
        })
        .collect()
}

fn parse_windows(v: &str) -> Result<Vec<(f64, f64)>, ConfigError> {
    v.split(',')
        .map(|w| {
            let (a, b) = w
                .split_once(':')
                .ok_or_else(|| ConfigError(format!("windows: expected start:end, got {w:?}")))?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| ConfigError(format!("windows: cannot parse {s:?}")))
            };
            let (a, b) = (parse(a)?, parse(b)?);
            if !(a < b) {
                return err(format!("windows: need start < end, got {a}:{b}"));
            }
            Ok((a, b))
        })
        .collect()
}

impl ExperimentConfig {
    /// Interprets and validates raw entries.
    pub fn resolve(raw: &RawConfig) -> Result<Self, ConfigError> {
        let mass = raw.real("mass")?.unwrap_or(1.0);
        let hbar = raw.real("hbar")?.unwrap_or(1.0);
        let gamma = raw.real("gamma")?.unwrap_or(0.0);

        let eps = raw.real("epsilon")?;
        let (lambda, alpha) = (raw.real("lambda")?, raw.real("alpha")?);
        let (k, temperature) = (raw.real("k")?, raw.real("T")?);
        let mut found = Vec::new();
        if eps.is_some() {
            found.push("epsilon");
        }
        if lambda.is_some() || alpha.is_some() {
            found.push("lambda+alpha");
        }
        if temperature.is_some() || k.is_some() {
            found.push("T");
        }
        if found.len() != 1 {
            return err(format!(
                "exactly one noise specification (epsilon | lambda+alpha | T with gamma) is required, found {}",
                if found.is_empty() { "none".to_string() } else { found.join(", ") }
            ));
        }
        let (noise, params) = if let Some(e) = eps {
            (Noise::Epsilon(e), PhysicalParams::new(mass, e, gamma, hbar)?)
        } else if found[0] == "lambda+alpha" {
            let (Some(l), Some(a)) = (lambda, alpha) else {
                return err("lambda and alpha must be given together");
            };
            let grw = GrwParams::new(l, a)?;
            (Noise::Grw(grw), PhysicalParams::from_grw(grw, mass, gamma, hbar)?)
        } else {
            let Some(t) = temperature else {
                return err("k given without T");
            };
            if !(gamma > 0.0) {
                return err(format!("thermal noise (T) needs gamma > 0, got gamma = {gamma}"));
            }
            let th = ThermalParams::new(k.unwrap_or(1.0), t)?;
            (Noise::Thermal(th), PhysicalParams::from_thermal(th, mass, gamma, hbar)?)
        };

        let init = InitialState::new(raw.real("x0_sq")?.unwrap_or(0.0), raw.real("p0_sq")?.unwrap_or(0.0))?;
        let damped = raw.get::<bool>("damped")?.unwrap_or(gamma > 0.0);
        let integrator = match raw.entries.get("integrator") {
            Some(v) => v.parse::<Integrator>()?,
            None => Integrator::default(),
        };
        let seed = raw.get::<u64>("seed")?.unwrap_or(0);
        let n_traj = raw.get::<usize>("n_traj")?.unwrap_or(10_000);
        let dt = raw.real("dt")?.unwrap_or_else(|| EnsembleConfig::default_dt(gamma));
        let t_final = raw.real("t_final")?.unwrap_or(1.0);
        let sampling = match (raw.entries.get("sample_times"), raw.get::<usize>("n_samples")?) {
            (Some(_), Some(_)) => return err("give either sample_times or n_samples, not both"),
            (Some(v), None) => Sampling::Times(parse_list("sample_times", v)?),
            (None, n) => Sampling::Count(n.unwrap_or(21)),
        };
        if let Sampling::Count(n) = sampling {
            if n < 2 {
                return err(format!("n_samples must be at least 2, got {n}"));
            }
        }
        let windows = match raw.entries.get("windows") {
            Some(v) => parse_windows(v)?,
            None => Vec::new(),
        };
        let cfg = Self {
            noise,
            params,
            init,
            damped,
            integrator,
            seed,
            n_traj,
            dt,
            t_final,
            sampling,
            nx: raw.get::<usize>("nx")?.unwrap_or(256),
            np: raw.get::<usize>("np")?.unwrap_or(256),
            x_half: raw.real("x_half")?,
            p_half: raw.real("p_half")?,
            fpe_dt: raw.real("fpe_dt")?,
            snapshot_every: raw.get::<usize>("snapshot_every")?.unwrap_or(0),
            splitting: match raw.entries.get("splitting") {
                Some(v) => v.parse::<Splitting>()?,
                None => Splitting::default(),
            },
            windows,
            output_dir: raw
                .entries
                .get("output_dir")
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR)),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        self.ensemble()?;
        if self.integrator == Integrator::EulerMaruyama && self.damped && self.params.gamma * self.dt > EM_MAX_GAMMA_DT {
            return err(format!(
                "euler-maruyama needs gamma * dt <= {EM_MAX_GAMMA_DT}, got {}",
                self.params.gamma * self.dt
            ));
        }
        if self.nx < 4 || self.np < 4 {
            return err(format!("nx and np must be at least 4, got {} and {}", self.nx, self.np));
        }
        for (key, v) in [("x_half", self.x_half), ("p_half", self.p_half), ("fpe_dt", self.fpe_dt)] {
            if let Some(v) = v {
                if !(v > 0.0) {
                    return err(format!("{key} must be positive, got {v}"));
                }
            }
        }
        Ok(())
    }

    pub fn sample_times(&self) -> Vec<f64> {
        match &self.sampling {
            Sampling::Count(n) => linear_times(self.t_final, *n),
            Sampling::Times(t) => t.clone(),
        }
    }

    pub fn ensemble(&self) -> Result<EnsembleConfig, ConfigError> {
        let times = self.sample_times();
        if let Some(&last) = times.last() {
            if (last - self.t_final).abs() > 1e-12 * self.t_final.abs().max(1.0) {
                return err(format!("last sample time {last} differs from t_final {}", self.t_final));
            }
        }
        Ok(EnsembleConfig::new(self.n_traj, self.dt, times, self.seed, self.integrator)?)
    }

    /// Canonical `key = value` text; floats use the shortest exact form so
    /// the text parses back to identical values.
    pub fn to_text(&self, with_output_dir: bool) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("mass", self.params.mass.to_string());
        kv("hbar", self.params.hbar.to_string());
        kv("gamma", self.params.gamma.to_string());
        match self.noise {
            Noise::Epsilon(e) => kv("epsilon", e.to_string()),
            Noise::Grw(g) => {
                kv("lambda", g.lambda.to_string());
                kv("alpha", g.alpha.to_string());
            }
            Noise::Thermal(t) => {
                kv("k", t.k.to_string());
                kv("T", t.temperature.to_string());
            }
        }
        kv("x0_sq", self.init.x0_sq.to_string());
        kv("p0_sq", self.init.p0_sq.to_string());
        kv("damped", self.damped.to_string());
        kv("integrator", self.integrator.to_string());
        kv("seed", self.seed.to_string());
        kv("n_traj", self.n_traj.to_string());
        kv("dt", self.dt.to_string());
        kv("t_final", self.t_final.to_string());
        match &self.sampling {
            Sampling::Count(n) => kv("n_samples", n.to_string()),
            Sampling::Times(t) => kv("sample_times", t.iter().map(f64::to_string).collect::<Vec<_>>().join(",")),
        }
        kv("nx", self.nx.to_string());
        kv("np", self.np.to_string());
        for (key, v) in [("x_half", self.x_half), ("p_half", self.p_half), ("fpe_dt", self.fpe_dt)] {
            if let Some(v) = v {
                kv(key, v.to_string());
            }
        }
        kv("snapshot_every", self.snapshot_every.to_string());
        kv("splitting", self.splitting.to_string());
        if !self.windows.is_empty() {
            kv(
                "windows",
                self.windows.iter().map(|(a, b)| format!("{a}:{b}")).collect::<Vec<_>>().join(","),
            );
        }
        if with_output_dir {
            kv("output_dir", self.output_dir.display().to_string());
        }
        s
    }

    /// SHA-256 of the canonical text without the output directory.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text(false).as_bytes()))
    }
}
