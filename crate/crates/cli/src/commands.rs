use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use openturb::acceptance::{AcceptanceConfig, AcceptanceSuite, CRITERIA};
use openturb::analysis::{
    classify_regime, compare_to_oracle, energy_rate_series, write_energy_csv, write_regime_csv, MomentSeries,
};
use openturb::fpe::io::{write_grid_binary, write_grid_csv};
use openturb::fpe::{check_stability, evolve_fpe_with, gaussian_wigner, grid_moments, stable_dt, FpeOptions, GridGeometry, PhaseSpaceGrid};
use openturb::oracle::{OracleKind, OracleTable, ORACLE_CSV_HEADER};
use openturb::params::quadratic_expansion_error;
use openturb::sde::{simulate_ensemble_with, CSV_HEADER};
use openturb::table::write_row;
use openturb::{EnsembleMoments, Execution, PhysicalParams};

use crate::config::{ConfigError, ExperimentConfig, Noise, RawConfig};
use crate::Overrides;

pub const THREADS_ENV: &str = "OPENTURB_THREADS";
pub const MANIFEST: &str = "manifest.cfg";

fn load_raw(o: &Overrides) -> Result<RawConfig> {
    let mut raw = match &o.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            RawConfig::parse(&text)?
        }
        None => RawConfig::default(),
    };
    if let Some(v) = o.seed {
        raw.set("seed", v);
    }
    if let Some(v) = o.n_traj {
        raw.set("n_traj", v);
    }
    if let Some(v) = o.dt {
        raw.set("dt", v);
    }
    if let Some(v) = o.t_final {
        raw.set("t_final", v);
    }
    if let Some(v) = o.gamma {
        raw.set("gamma", v);
    }
    if let Some(v) = o.epsilon {
        for key in ["lambda", "alpha", "k", "T"] {
            raw.remove(key);
        }
        raw.set("epsilon", v);
    }
    if o.damped {
        raw.set("damped", true);
    }
    if o.undamped {
        raw.set("damped", false);
    }
    if let Some(v) = &o.integrator {
        raw.set("integrator", v);
    }
    if let Some(v) = o.snapshot_every {
        raw.set("snapshot_every", v);
    }
    if let Some(v) = &o.out {
        raw.set("output_dir", v.display());
    }
    Ok(raw)
}

fn load(o: &Overrides) -> Result<ExperimentConfig> {
    Ok(ExperimentConfig::resolve(&load_raw(o)?)?)
}

/// Worker cap from `OPENTURB_THREADS`; results do not depend on it.
fn execution() -> Result<Execution> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(Execution::default()),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Execution::with_workers(n)),
            _ => Err(ConfigError(format!("{THREADS_ENV} must be a positive integer, got {v:?}")).into()),
        },
    }
}

/// Parameters the run actually used: damping is off for undamped runs.
fn effective_params(cfg: &ExperimentConfig) -> PhysicalParams {
    let mut p = cfg.params;
    if !cfg.damped {
        p.gamma = 0.0;
    }
    p
}

fn output_dir(cfg: &ExperimentConfig) -> Result<&Path> {
    fs::create_dir_all(&cfg.output_dir).with_context(|| format!("creating {}", cfg.output_dir.display()))?;
    Ok(&cfg.output_dir)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

/// Resolved config plus `#` metadata lines; the file is itself a valid
/// config for re-running the experiment.
fn write_manifest(dir: &Path, command: &str, cfg: Option<&ExperimentConfig>, extra: &[(String, String)]) -> Result<()> {
    let mut w = create(&dir.join(MANIFEST))?;
    writeln!(w, "# openturb manifest")?;
    writeln!(w, "# command = {command}")?;
    writeln!(
        w,
        "# version = openturb-cli {} / openturb-core {}",
        env!("CARGO_PKG_VERSION"),
        openturb::VERSION
    )?;
    if let Some(cfg) = cfg {
        writeln!(w, "# config_hash = {}", cfg.hash())?;
        writeln!(w, "# seed = {}", cfg.seed)?;
        if !matches!(cfg.noise, Noise::Epsilon(_)) {
            writeln!(w, "# epsilon_resolved = {}", cfg.params.epsilon)?;
        }
    }
    for (k, v) in extra {
        writeln!(w, "# {k} = {v}")?;
    }
    if let Some(cfg) = cfg {
        write!(w, "{}", cfg.to_text(true))?;
    }
    w.flush()?;
    Ok(())
}

pub fn simulate(o: &Overrides) -> Result<ExitCode> {
    let cfg = load(o)?;
    let ex = execution()?;
    let ens = cfg.ensemble()?;
    let moments = simulate_ensemble_with(&ens, &cfg.params, &cfg.init, cfg.damped, ex)?;
    let dir = output_dir(&cfg)?;
    let path = dir.join("moments.csv");
    let mut w = create(&path)?;
    moments.write_csv(&mut w)?;
    w.flush()?;
    write_manifest(dir, "simulate", Some(&cfg), &[])?;
    println!("wrote {} ({} trajectories, {} times)", path.display(), ens.n_trajectories, moments.len());
    Ok(ExitCode::SUCCESS)
}

pub fn oracle_table(o: &Overrides) -> Result<ExitCode> {
    let cfg = load(o)?;
    let table = OracleTable::tabulate(&cfg.sample_times(), OracleKind::from_damped(cfg.damped), &cfg.params, &cfg.init)?;
    let dir = output_dir(&cfg)?;
    let path = dir.join("oracle.csv");
    let mut w = create(&path)?;
    table.write_csv(&mut w)?;
    w.flush()?;
    write_manifest(dir, "oracle-table", Some(&cfg), &[])?;
    println!("wrote {} ({} times)", path.display(), table.times.len());
    Ok(ExitCode::SUCCESS)
}

/// Half-widths holding at least seven standard deviations of the closed-form
/// distribution over the whole run.
fn auto_extent(cfg: &ExperimentConfig) -> Result<(f64, f64), ConfigError> {
    let kind = OracleKind::from_damped(cfg.damped);
    let start = kind.eval(0.0, &cfg.params, &cfg.init)?;
    let end = kind.eval(cfg.t_final, &cfg.params, &cfg.init)?;
    let (x2, p2) = (start.x2.max(end.x2), start.p2.max(end.p2));
    if !(x2 > 0.0 && p2 > 0.0) {
        return Err(ConfigError(
            "cannot size the grid from vanishing moments; set x_half and p_half".into(),
        ));
    }
    Ok((cfg.x_half.unwrap_or(7.0 * x2.sqrt()), cfg.p_half.unwrap_or(7.0 * p2.sqrt())))
}

const FPE_HEADER: &str = "t,x2,p2,xp,norm,mass_deficit,x2_exact,p2_exact";

pub fn fpe(o: &Overrides) -> Result<ExitCode> {
    let cfg = load(o)?;
    let ex = execution()?;
    let params = effective_params(&cfg);
    let (x_half, p_half) = auto_extent(&cfg)?;
    let geom = GridGeometry::symmetric(x_half, p_half, cfg.nx, cfg.np).map_err(ConfigError::from)?;
    let grid = gaussian_wigner(&cfg.init, &geom).map_err(ConfigError::from)?;
    let init = grid.initial_moments.expect("set by gaussian_wigner");
    let requested = cfg.fpe_dt.unwrap_or_else(|| stable_dt(&grid, &params, cfg.damped, 0.9));
    let n_steps = (cfg.t_final / requested).ceil().max(1.0) as usize;
    let dt = cfg.t_final / n_steps as f64;
    check_stability(&grid, &params, dt, cfg.damped).map_err(ConfigError::from)?;

    let dir = output_dir(&cfg)?.to_path_buf();
    let kind = OracleKind::from_damped(cfg.damped);
    let grw = match cfg.noise {
        Noise::Grw(g) => Some(g),
        _ => None,
    };
    let every = if cfg.snapshot_every > 0 {
        cfg.snapshot_every
    } else {
        n_steps.div_ceil(100)
    };

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut failure: Option<anyhow::Error> = None;
    let mut record = |step: usize, g: &PhaseSpaceGrid| -> Result<()> {
        let t = step as f64 * dt;
        let m = grid_moments(g);
        let exact = kind.eval(t, &params, &init)?;
        let mut row = vec![t, m.x2, m.p2, m.xp, m.norm, g.mass_deficit, exact.x2, exact.p2];
        if let Some(grw) = grw {
            // RMS coherence length of a Gaussian state, hbar / sqrt(<p²>)
            row.push(quadratic_expansion_error(params.hbar / m.p2.sqrt(), grw));
        }
        rows.push(row);
        if cfg.snapshot_every > 0 || step == n_steps {
            write_snapshot(&dir, step, g)?;
        }
        Ok(())
    };
    record(0, &grid)?;
    let options = FpeOptions {
        splitting: cfg.splitting,
        execution: ex,
    };
    evolve_fpe_with(&grid, &params, dt, n_steps, cfg.damped, options, |step, g| {
        if failure.is_none() && (step % every == 0 || step == n_steps) {
            if let Err(e) = record(step, g) {
                failure = Some(e);
            }
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }

    let path = dir.join("fpe_moments.csv");
    let mut w = create(&path)?;
    write!(w, "{FPE_HEADER}")?;
    if grw.is_some() {
        write!(w, ",expansion_error")?;
    }
    writeln!(w)?;
    for row in &rows {
        write_row(&mut w, row)?;
    }
    w.flush()?;
    let extra = [
        ("grid".to_string(), format!("x in [{}, {}], p in [{}, {}], {} x {} cells", geom.x_min, geom.x_max, geom.p_min, geom.p_max, geom.nx, geom.np)),
        ("fpe_dt_used".to_string(), dt.to_string()),
        ("fpe_steps".to_string(), n_steps.to_string()),
        ("regularized_x0_sq".to_string(), init.x0_sq.to_string()),
        ("regularized_p0_sq".to_string(), init.p0_sq.to_string()),
    ];
    write_manifest(&dir, "fpe", Some(&cfg), &extra)?;
    let last = rows.last().expect("final step recorded");
    println!(
        "wrote {} ({n_steps} steps of {dt:.3e}); final x2 {:.6} (exact {:.6}), p2 {:.6} (exact {:.6}), mass deficit {:.2e}",
        path.display(),
        last[1],
        last[6],
        last[2],
        last[7],
        last[5]
    );
    Ok(ExitCode::SUCCESS)
}

fn write_snapshot(dir: &Path, step: usize, g: &PhaseSpaceGrid) -> Result<()> {
    let stem = format!("snapshot_{step:06}");
    let mut w = create(&dir.join(format!("{stem}.csv")))?;
    write_grid_csv(g, &mut w)?;
    w.flush()?;
    let mut w = create(&dir.join(format!("{stem}.bin")))?;
    write_grid_binary(g, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Windows used when the config lists none: the early and late windows
/// around the crossover when damped, the last decade otherwise; only those
/// with enough samples are kept.
fn default_windows<S: MomentSeries>(series: &S, params: &PhysicalParams) -> Vec<(f64, f64)> {
    let times = series.times();
    let t_last = times.last().copied().unwrap_or(0.0);
    let candidates = if params.gamma > 0.0 {
        let tc = 1.0 / params.gamma;
        vec![(0.01 * tc, 0.1 * tc), (10.0 * tc, 20.0 * tc), (0.1 * t_last, t_last)]
    } else {
        vec![(0.1 * t_last, t_last)]
    };
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (a, b) in candidates {
        let n = times.iter().filter(|&&t| t >= a * (1.0 - 1e-9) && t <= b * (1.0 + 1e-9)).count();
        if a < b && b <= t_last * (1.0 + 1e-9) && n >= openturb::analysis::MIN_FIT_POINTS && !out.contains(&(a, b)) {
            out.push((a, b));
        }
    }
    out
}

enum Input {
    Ensemble(EnsembleMoments),
    Oracle(OracleTable),
}

fn read_input(path: &Path) -> Result<Input> {
    let mut reader = BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?);
    let mut header = String::new();
    reader.read_line(&mut header)?;
    let text = header.clone() + &std::io::read_to_string(reader)?;
    let header = header.trim();
    if header == CSV_HEADER {
        Ok(Input::Ensemble(EnsembleMoments::read_csv(text.as_bytes())?))
    } else if header == ORACLE_CSV_HEADER {
        Ok(Input::Oracle(OracleTable::read_csv(text.as_bytes())?))
    } else {
        anyhow::bail!("{}: unrecognised header {header:?}", path.display())
    }
}

pub fn analyze(o: &Overrides, input: &Path) -> Result<ExitCode> {
    let cfg = load(o)?;
    match read_input(input)? {
        Input::Ensemble(s) => analyze_series(&cfg, &s),
        Input::Oracle(s) => analyze_series(&cfg, &s),
    }
}

fn analyze_series<S: MomentSeries>(cfg: &ExperimentConfig, series: &S) -> Result<ExitCode> {
    let params = effective_params(cfg);
    let windows = if cfg.windows.is_empty() {
        default_windows(series, &params)
    } else {
        cfg.windows.clone()
    };
    if windows.is_empty() {
        return Err(ConfigError("no analysis window holds enough samples; set windows".into()).into());
    }
    let reports = classify_regime(series, &params, &cfg.init, &windows)?;
    let oracle = OracleTable::tabulate(series.times(), OracleKind::from_damped(cfg.damped), &params, &cfg.init)?;
    let deviation = compare_to_oracle(series, &oracle)?;
    let rates = energy_rate_series(series, &params)?;

    let dir = output_dir(cfg)?;
    let mut w = create(&dir.join("regimes.csv"))?;
    write_regime_csv(&reports, &mut w)?;
    w.flush()?;
    let mut w = create(&dir.join("deviation.csv"))?;
    deviation.write_csv(&mut w)?;
    w.flush()?;
    let mut w = create(&dir.join("energy.csv"))?;
    write_energy_csv(&rates, &mut w)?;
    w.flush()?;
    write_manifest(dir, "analyze", Some(cfg), &[])?;

    for r in &reports {
        println!(
            "[{}, {}] exponent {:.4} ± {:.4} -> {} (crossover time {})",
            r.window.0,
            r.window.1,
            r.exponent,
            r.exponent_se,
            r.label(),
            r.crossover_time
        );
    }
    println!(
        "oracle deviation: max |z| {:.2}, {}",
        deviation.max_abs_z,
        if deviation.pass { "pass" } else { "fail" }
    );
    Ok(ExitCode::SUCCESS)
}

pub fn check(o: &Overrides, only: &[u8]) -> Result<ExitCode> {
    let raw = load_raw(o)?;
    // a given config is validated in full even though the suite only reads
    // seed and n_traj from it
    let cfg = if o.config.is_some() {
        Some(ExperimentConfig::resolve(&raw)?)
    } else {
        None
    };
    let mut ac = AcceptanceConfig {
        execution: execution()?,
        ..AcceptanceConfig::default()
    };
    if let Some(seed) = raw.entries.get("seed") {
        ac.seed = seed.parse().map_err(|_| ConfigError(format!("seed: cannot parse {seed:?}")))?;
    }
    if let Some(n) = raw.entries.get("n_traj") {
        ac.n_trajectories = n.parse().map_err(|_| ConfigError(format!("n_traj: cannot parse {n:?}")))?;
    }
    for id in only {
        if !CRITERIA.iter().any(|(i, _)| i == id) {
            return Err(ConfigError(format!("no acceptance criterion {id}")).into());
        }
    }
    let dir: PathBuf = raw
        .entries
        .get("output_dir")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(crate::config::DEFAULT_OUTPUT_DIR));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;

    let suite = AcceptanceSuite::new(ac);
    let mut lines = Vec::new();
    let mut all_pass = true;
    for &(id, _) in CRITERIA.iter() {
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let outcome = suite.run(id);
        println!("{outcome}");
        all_pass &= outcome.passed;
        lines.push(outcome.to_string());
    }
    let summary = format!("{} of {} criteria passed", lines.iter().filter(|l| l.starts_with("[PASS]")).count(), lines.len());
    println!("{summary}");
    let mut w = create(&dir.join("acceptance.txt"))?;
    for l in &lines {
        writeln!(w, "{l}")?;
    }
    writeln!(w, "{summary}")?;
    w.flush()?;
    let extra = [
        ("acceptance_seed".to_string(), ac.seed.to_string()),
        ("acceptance_n_traj".to_string(), ac.n_trajectories.to_string()),
    ];
    write_manifest(&dir, "check", cfg.as_ref(), &extra)?;
    Ok(if all_pass { ExitCode::SUCCESS } else { ExitCode::from(1) })
}
