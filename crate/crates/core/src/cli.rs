//! Command-line front end. Every subcommand loads a grid config, writes CSV
//! tables plus `manifest.json` into `--out-dir`, and prints a short report.
//!
//! Exit codes: 0 success, 1 domain error, 2 usage error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use thiserror::Error;

use crate::bifurcation::{
    analytic_threshold, bracket_threshold, closed_form_init, cyclic_side, period_scaling, sweep, BifurcationError,
    InitPolicy, Parameter, ProbeSettings, Side,
};
use crate::dynamics::{default_horizon, integrate, DynamicsError, IntegratorSettings, Outcome, RecordPolicy};
use crate::equilibrium::{enumerate_fixed_points, grid_scan, EquilibriumError, ScanSettings, DEFAULT_TOL};
use crate::grid::{angle_distance, wrap_phase, GridError, GridSpec, SystemState};
use crate::output::{num, opt_num, sha256_hex, ConfigDigest, OutputError, OutputSet, RunManifest, Table, MANIFEST_FILE};
use crate::stability::{
    check_criterion, classify_fixed_points, default_marginal_tol, energy_slice, stability_boundary, SliceAxis,
    StabilityError,
};

const UNITS: &str = "Units: phases in rad, frequency deviations in rad/s, time in s, \
inertia H in s, powers (A, K, D·Δω) in per-unit. Config ω_R is given in rad/s or Hz.";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Equilibrium(#[from] EquilibriumError),
    #[error(transparent)]
    Stability(#[from] StabilityError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Bifurcation(#[from] BifurcationError),
    #[error(transparent)]
    Output(#[from] OutputError),
    #[error("{0}")]
    Domain(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "hubsync", version, about = "Synchronization analysis for hub-and-spoke AC grids", after_help = UNITS)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Worker threads for sweeps and scaling runs.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Integrator relative tolerance.
    #[arg(long, global = true)]
    pub tol_rel: Option<f64>,
    /// Integrator absolute tolerance.
    #[arg(long, global = true)]
    pub tol_abs: Option<f64>,
    /// Integration horizon, s (default: 2000 time constants or 200 slip times).
    #[arg(long, global = true)]
    pub horizon: Option<f64>,
    /// Embedded Runge-Kutta pair: dopri5, bs23 or cash-karp.
    #[arg(long, global = true, default_value = "dopri5")]
    pub method: String,
    /// Directory for CSV outputs and manifest.json.
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
    /// Load and validate the config, write the manifest, and stop.
    #[arg(long, global = true)]
    pub validate_only: bool,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Check a grid config against every physical invariant.
    Validate { config: PathBuf },
    /// Integrate the swing equations and classify the long-time outcome.
    Simulate(SimulateArgs),
    /// Closed-form synchronized fixed points.
    Equilibria {
        config: PathBuf,
        /// Also run a brute-force grid scan with this many nodes per phase.
        #[arg(long)]
        scan: Option<usize>,
    },
    /// Criterion margins and Jacobian spectra of every fixed point.
    Stability {
        config: PathBuf,
        /// Half-width of the marginal band on Re λ (default 1e-9·ω_R).
        #[arg(long)]
        marginal_tol: Option<f64>,
    },
    /// Lyapunov energy on a (phase, frequency) plane through the stable point.
    EnergySlice {
        config: PathBuf,
        /// Generator whose phase and frequency are offset (1-based).
        #[arg(long)]
        generator: usize,
        /// Half-width of the phase offset range, rad.
        #[arg(long, default_value_t = 3.0)]
        rho: f64,
        /// Half-width of the frequency offset range, rad/s.
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long, default_value_t = 101)]
        points: usize,
    },
    /// Stability boundary lines of one spoke in its (D, A) plane.
    #[command(allow_negative_numbers = true)]
    Boundary {
        config: PathBuf,
        #[arg(long)]
        spoke: usize,
        /// Damping sample points: `lo:hi:count` or a comma list.
        #[arg(long, default_value = "0:1:11", allow_hyphen_values = true)]
        damping: ValueList,
    },
    /// Outcome at each value of one parameter.
    #[command(allow_negative_numbers = true)]
    Sweep {
        config: PathBuf,
        /// K<i>, D<i> or A<i>, e.g. K2.
        #[arg(long)]
        param: Parameter,
        /// `lo:hi:count`, `lo:hi:count:log` or a comma list.
        #[arg(long, allow_hyphen_values = true)]
        values: ValueList,
        #[arg(long, value_enum, default_value_t = InitArg::Warm)]
        init: InitArg,
    },
    /// Bisect the parameter value where the limit cycle appears.
    #[command(allow_negative_numbers = true)]
    Bracket {
        config: PathBuf,
        #[arg(long)]
        param: Parameter,
        #[arg(long)]
        lo: f64,
        #[arg(long)]
        hi: f64,
        /// Relative width of the final interval.
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
    /// Limit-cycle period against distance from the threshold, with a power-law fit.
    #[command(allow_negative_numbers = true)]
    Scaling {
        config: PathBuf,
        #[arg(long)]
        param: Parameter,
        /// Threshold value; defaults to the closed-form one near the current value.
        #[arg(long)]
        critical: Option<f64>,
        #[arg(long, value_enum, default_value_t = SideArg::Auto)]
        side: SideArg,
        /// Relative distances ε.
        #[arg(long, default_value = "1e-4,3e-4,1e-3,3e-3,1e-2")]
        eps: ValueList,
    },
    /// Repeat the run recorded in a manifest and check the outputs match.
    Rerun { manifest: PathBuf },
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    pub config: PathBuf,
    /// Initial state file with `phases` and `freq_dev` arrays.
    #[arg(long, conflicts_with = "perturb")]
    pub init: Option<PathBuf>,
    /// Start near the synchronized point, randomly perturbed with this seed.
    #[arg(long)]
    pub perturb: Option<u64>,
    /// Half-width of the uniform perturbation: rad on phases, rad/s on frequencies.
    #[arg(long, default_value_t = 0.1)]
    pub perturb_scale: f64,
    /// Sample spacing, s (default: horizon / 10000).
    #[arg(long)]
    pub sample_dt: Option<f64>,
    /// Keep integrating after the outcome is decided.
    #[arg(long)]
    pub full_horizon: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InitArg {
    Warm,
    Closed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SideArg {
    Auto,
    Above,
    Below,
}

/// `lo:hi:count`, `lo:hi:count:log`, or `a,b,c`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueList(pub Vec<f64>);

impl FromStr for ValueList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let float = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("'{t}': {e}"));
        if s.contains(':') {
            let parts: Vec<&str> = s.split(':').collect();
            let log = match parts.get(3) {
                None => false,
                Some(&"log") => true,
                Some(other) => return Err(format!("unknown spacing '{other}'")),
            };
            if parts.len() < 3 || parts.len() > 4 {
                return Err("expected lo:hi:count[:log]".into());
            }
            let (lo, hi) = (float(parts[0])?, float(parts[1])?);
            let count: usize = parts[2].trim().parse().map_err(|e| format!("count: {e}"))?;
            if count == 0 {
                return Err("count must be positive".into());
            }
            if log && !(lo > 0.0 && hi > 0.0) {
                return Err("log spacing needs positive bounds".into());
            }
            let at = |k: usize| {
                let f = if count == 1 { 0.0 } else { k as f64 / (count - 1) as f64 };
                if log {
                    (lo.ln() + f * (hi.ln() - lo.ln())).exp()
                } else {
                    lo + f * (hi - lo)
                }
            };
            Ok(ValueList((0..count).map(at).collect()))
        } else {
            s.split(',').map(float).collect::<Result<_, _>>().map(ValueList)
        }
    }
}

/// Parses `argv` (including the program name), runs, and returns the exit code.
pub fn main_with_args<I, T>(argv: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code() as u8;
        }
    };
    let args: Vec<String> = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(&cli, &args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs a parsed command. `args` is the raw argument list recorded in the
/// manifest.
pub fn execute(cli: &Cli, args: &[String]) -> Result<(), CliError> {
    if cli.global.jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.global.jobs)
        .build()
        .map_err(|e| CliError::Domain(format!("thread pool: {e}")))?;
    pool.install(|| dispatch(cli, args))
}

struct Run<'a> {
    global: &'a GlobalArgs,
    subcommand: &'static str,
    args: Vec<String>,
    config: Option<ConfigDigest>,
    settings: BTreeMap<String, Value>,
    outputs: OutputSet,
}

impl<'a> Run<'a> {
    fn new(global: &'a GlobalArgs, subcommand: &'static str, args: &[String]) -> Self {
        let mut settings = BTreeMap::new();
        settings.insert("jobs".into(), json!(global.jobs));
        Run {
            global,
            subcommand,
            args: strip_out_dir(args),
            config: None,
            settings,
            outputs: OutputSet::new(&global.out_dir),
        }
    }

    fn load(&mut self, path: &Path) -> Result<GridSpec, CliError> {
        let bytes = fs::read(path).map_err(GridError::Io)?;
        self.config = Some(ConfigDigest { path: path.display().to_string(), sha256: sha256_hex(&bytes) });
        let text = String::from_utf8(bytes).map_err(|e| GridError::Config(e.to_string()))?;
        let spec = GridSpec::from_toml_str(&text)?.validate().map_err(GridError::from)?;
        self.set("n", json!(spec.n));
        Ok(spec)
    }

    fn set(&mut self, key: &str, value: Value) {
        self.settings.insert(key.to_string(), value);
    }

    fn integrator(&mut self) -> IntegratorSettings {
        let defaults = IntegratorSettings::default();
        let s = IntegratorSettings {
            method: self.global.method.clone(),
            rel_tol: self.global.tol_rel.unwrap_or(defaults.rel_tol),
            abs_tol: self.global.tol_abs.unwrap_or(defaults.abs_tol),
            ..defaults
        };
        self.set("method", json!(s.method));
        self.set("tol_rel", json!(s.rel_tol));
        self.set("tol_abs", json!(s.abs_tol));
        self.set("convergence_tol", json!(s.convergence_tol));
        s
    }

    fn table(&mut self, name: &str, table: &Table) -> Result<(), CliError> {
        self.outputs.add_table(name, table)?;
        Ok(())
    }

    fn finish(self) -> Result<(), CliError> {
        let dir = self.outputs.dir().display().to_string();
        let manifest = RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            subcommand: self.subcommand.into(),
            args: self.args,
            config: self.config,
            settings: self.settings,
            seed: self.global.seed,
            outputs: Vec::new(),
        };
        let written = self.outputs.finish(manifest)?;
        println!("wrote {} file(s) and {MANIFEST_FILE} to {dir}", written.outputs.len());
        Ok(())
    }
}

fn strip_out_dir(args: &[String]) -> Vec<String> {
    let mut out = Vec::with_capacity(args.len());
    let mut skip = false;
    for a in args {
        if skip {
            skip = false;
        } else if a == "--out-dir" {
            skip = true;
        } else if !a.starts_with("--out-dir=") {
            out.push(a.clone());
        }
    }
    out
}

fn config_of(cmd: &Command) -> Option<&Path> {
    match cmd {
        Command::Validate { config }
        | Command::Equilibria { config, .. }
        | Command::Stability { config, .. }
        | Command::EnergySlice { config, .. }
        | Command::Boundary { config, .. }
        | Command::Sweep { config, .. }
        | Command::Bracket { config, .. }
        | Command::Scaling { config, .. } => Some(config),
        Command::Simulate(a) => Some(&a.config),
        Command::Rerun { .. } => None,
    }
}

fn name_of(cmd: &Command) -> &'static str {
    match cmd {
        Command::Validate { .. } => "validate",
        Command::Simulate(_) => "simulate",
        Command::Equilibria { .. } => "equilibria",
        Command::Stability { .. } => "stability",
        Command::EnergySlice { .. } => "energy-slice",
        Command::Boundary { .. } => "boundary",
        Command::Sweep { .. } => "sweep",
        Command::Bracket { .. } => "bracket",
        Command::Scaling { .. } => "scaling",
        Command::Rerun { .. } => "rerun",
    }
}

fn dispatch(cli: &Cli, args: &[String]) -> Result<(), CliError> {
    if let Command::Rerun { manifest } = &cli.command {
        return rerun(manifest, &cli.global);
    }
    let mut run = Run::new(&cli.global, name_of(&cli.command), args);
    let spec = run.load(config_of(&cli.command).expect("every other subcommand takes a config"))?;
    if cli.global.validate_only || matches!(cli.command, Command::Validate { .. }) {
        println!("config valid: n = {}, omega_ref = {} rad/s", spec.n, spec.omega_ref);
        return run.finish();
    }
    match &cli.command {
        Command::Validate { .. } | Command::Rerun { .. } => unreachable!(),
        Command::Simulate(a) => simulate(&mut run, &spec, a)?,
        Command::Equilibria { scan, .. } => equilibria(&mut run, &spec, *scan)?,
        Command::Stability { marginal_tol, .. } => stability(&mut run, &spec, *marginal_tol)?,
        Command::EnergySlice { generator, rho, sigma, points, .. } => {
            slice(&mut run, &spec, *generator, *rho, *sigma, *points)?
        }
        Command::Boundary { spoke, damping, .. } => boundary(&mut run, &spec, *spoke, &damping.0)?,
        Command::Sweep { param, values, init, .. } => run_sweep(&mut run, &spec, *param, &values.0, *init)?,
        Command::Bracket { param, lo, hi, tol, .. } => run_bracket(&mut run, &spec, *param, *lo, *hi, *tol)?,
        Command::Scaling { param, critical, side, eps, .. } => {
            run_scaling(&mut run, &spec, *param, *critical, *side, &eps.0)?
        }
    }
    run.finish()
}

fn phase_header(n: usize, suffix: &str) -> Vec<String> {
    (1..n).map(|i| format!("delta_{i}{suffix}_rad")).collect()
}

fn freq_header(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("domega_{i}_rad_per_s")).collect()
}

fn join_ints(v: &[i64]) -> String {
    v.iter().map(i64::to_string).collect::<Vec<_>>().join(";")
}

fn simulate(run: &mut Run, spec: &GridSpec, a: &SimulateArgs) -> Result<(), CliError> {
    let n = spec.n;
    let init = match (&a.init, a.perturb) {
        (Some(path), _) => {
            let text = fs::read_to_string(path).map_err(GridError::Io)?;
            let s: SystemState = toml::from_str(&text).map_err(|e| GridError::Config(e.to_string()))?;
            s.check_dim(spec)?;
            run.set("init_file", json!(path.display().to_string()));
            s
        }
        (None, Some(seed)) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut s = closed_form_init(spec, 0.0);
            let scale = a.perturb_scale;
            s.phases.iter_mut().for_each(|p| *p += rng.random_range(-scale..=scale));
            s.freq_dev.iter_mut().for_each(|w| *w += rng.random_range(-scale..=scale));
            run.set("perturb_seed", json!(seed));
            run.set("perturb_scale", json!(scale));
            s
        }
        (None, None) => SystemState::new(vec![0.0; n - 1], vec![0.0; n]),
    };
    let horizon = run.global.horizon.unwrap_or_else(|| default_horizon(spec));
    let dt = a.sample_dt.unwrap_or(horizon / 10_000.0);
    if !(dt > 0.0) {
        return Err(CliError::Usage("--sample-dt must be positive".into()));
    }
    let mut settings = run.integrator();
    settings.record = RecordPolicy::Uniform(dt);
    settings.stop_on_outcome = !a.full_horizon;
    run.set("horizon", json!(horizon));
    run.set("sample_dt", json!(dt));
    run.set("stop_on_outcome", json!(settings.stop_on_outcome));
    run.set("initial_state", json!(init.to_vec()));
    let traj = integrate(spec, &init, horizon, &settings)?;

    let mut header = vec!["t_s".to_string()];
    header.extend(phase_header(n, ""));
    header.extend(phase_header(n, "_wrapped"));
    header.extend(freq_header(n));
    let mut table = Table::new(header);
    for (t, s) in traj.times.iter().zip(&traj.states) {
        let mut row = vec![num(*t)];
        row.extend(s.phases.iter().map(|&p| num(p)));
        row.extend(s.phases.iter().map(|&p| num(wrap_phase(p))));
        row.extend(s.freq_dev.iter().map(|&w| num(w)));
        table.push(row)?;
    }
    run.table("trajectory.csv", &table)?;

    let mut summary = Table::new([
        "outcome",
        "fixed_point",
        "converged_at_s",
        "period_s",
        "winding",
        "line_winding",
        "final_time_s",
        "accepted_steps",
        "rejected_steps",
    ]);
    let (fp, at, period, winding, line) = match &traj.outcome {
        Outcome::ConvergedToFixedPoint { point, time } => {
            (point.to_string(), num(*time), String::new(), String::new(), String::new())
        }
        Outcome::LimitCycle(c) => {
            (String::new(), String::new(), num(c.period), join_ints(&c.winding), join_ints(&c.line_winding))
        }
        Outcome::Undecided { .. } => Default::default(),
    };
    summary.push(vec![
        traj.outcome.label().into(),
        fp.clone(),
        at,
        period.clone(),
        winding.clone(),
        line,
        num(traj.final_time()),
        traj.stats.accepted.to_string(),
        traj.stats.rejected.to_string(),
    ])?;
    run.table("outcome.csv", &summary)?;
    match &traj.outcome {
        Outcome::ConvergedToFixedPoint { time, .. } => {
            println!("outcome: converged to fixed point {fp} at t = {time:.6} s")
        }
        Outcome::LimitCycle(_) => println!("outcome: limit cycle, period {period} s, winding [{winding}]"),
        Outcome::Undecided { horizon } => println!("outcome: undecided after {horizon} s"),
    }
    Ok(())
}

fn equilibria(run: &mut Run, spec: &GridSpec, scan: Option<usize>) -> Result<(), CliError> {
    let n = spec.n;
    let eq = enumerate_fixed_points(spec, DEFAULT_TOL)?;
    run.set("residual_tol", json!(DEFAULT_TOL));
    let mut header = vec!["id".to_string(), "k".into(), "j".into()];
    header.extend(phase_header(n, ""));
    header.extend(["domega_sync_rad_per_s".into(), "residual".into()]);
    let mut table = Table::new(header);
    for p in &eq.points {
        let j: Vec<String> = p.branch.j.iter().map(|b| b.to_string()).collect();
        let mut row = vec![p.id.to_string(), p.branch.k.to_string(), j.join(";")];
        row.extend(p.state.phases.iter().map(|&x| num(x)));
        row.extend([num(eq.delta_omega_sync), num(p.residual)]);
        table.push(row)?;
    }
    run.table("fixed_points.csv", &table)?;
    println!("domega_sync = {} rad/s", num(eq.delta_omega_sync));
    let mu: Vec<String> = eq.mu.spoke.iter().map(|&m| num(m)).collect();
    println!("mu[2..={n}] = [{}]", mu.join(", "));
    if eq.exists {
        println!("{} fixed point(s)", eq.points.len());
    } else {
        println!("no synchronized fixed points: some |mu| > 1");
    }
    if let Some(steps) = scan {
        if steps < 2 {
            return Err(CliError::Usage("--scan needs at least 2 nodes per phase".into()));
        }
        run.set("scan_steps", json!(steps));
        let found = grid_scan(spec, &ScanSettings { steps, ..Default::default() });
        let matched = found.roots.len() == eq.points.len()
            && eq.points.iter().all(|p| {
                found.roots.iter().any(|r| {
                    r.phases.iter().zip(&p.state.phases).all(|(a, b)| angle_distance(*a, *b) < 1e-6)
                })
            });
        println!(
            "grid scan: {} root(s), {} of {} cells polished, {}",
            found.roots.len(),
            found.polished_cells,
            found.total_cells,
            if matched { "matches closed form" } else { "DOES NOT match closed form" }
        );
        if !matched {
            return Err(CliError::Domain("grid scan disagrees with the closed-form set".into()));
        }
    }
    Ok(())
}

fn criterion_table(spec: &GridSpec) -> Result<Table, CliError> {
    let report = check_criterion(spec);
    let eq_mu = crate::equilibrium::branch_parameters(spec);
    let mut t = Table::new(["spoke", "coupling", "mu", "margin", "satisfied"]);
    for (s, &m) in report.margins.iter().enumerate() {
        t.push(vec![
            (s + 2).to_string(),
            num(spec.coupling[s]),
            num(eq_mu.spoke[s]),
            num(m),
            (m > 0.0).to_string(),
        ])?;
    }
    Ok(t)
}

fn stability(run: &mut Run, spec: &GridSpec, marginal_tol: Option<f64>) -> Result<(), CliError> {
    let tol = marginal_tol.unwrap_or_else(|| default_marginal_tol(spec));
    run.set("marginal_tol", json!(tol));
    let crit = check_criterion(spec);
    run.table("criterion.csv", &criterion_table(spec)?)?;
    println!(
        "criterion {} (min margin {})",
        if crit.satisfied { "satisfied" } else { "violated" },
        num(crit.min_margin())
    );
    let eq = enumerate_fixed_points(spec, DEFAULT_TOL)?;
    let mut spectrum = Table::new(["id", "class", "index", "re", "im"]);
    if eq.exists {
        let report = classify_fixed_points(spec, &eq, tol)?;
        for p in &report.points {
            for (k, l) in p.eigenvalues.iter().enumerate() {
                spectrum.push(vec![p.id.to_string(), p.class.label().into(), k.to_string(), num(l.re), num(l.im)])?;
            }
            println!("point {}: {} (max Re = {})", p.id, p.class.label(), num(p.max_real));
        }
        match report.stable_point {
            Some(id) => println!("stable point: {id}"),
            None => println!("no stable point"),
        }
    } else {
        println!("no synchronized fixed points");
    }
    run.table("spectrum.csv", &spectrum)
}

fn slice(
    run: &mut Run,
    spec: &GridSpec,
    generator: usize,
    rho: f64,
    sigma: f64,
    points: usize,
) -> Result<(), CliError> {
    if points < 2 {
        return Err(CliError::Usage("--points must be at least 2".into()));
    }
    run.set("generator", json!(generator));
    run.set("rho_half_width", json!(rho));
    run.set("sigma_half_width", json!(sigma));
    run.set("points", json!(points));
    let eq = enumerate_fixed_points(spec, DEFAULT_TOL)?;
    let s = energy_slice(spec, &eq, generator, SliceAxis::symmetric(rho, points), SliceAxis::symmetric(sigma, points))?;
    let mut t = Table::new(["rho_rad", "sigma_rad_per_s", "energy", "ln_energy"]);
    for (a, &r) in s.rho.iter().enumerate() {
        for (b, &w) in s.sigma.iter().enumerate() {
            t.push(vec![num(r), num(w), num(s.energy[a][b]), opt_num(s.log_energy[a][b])])?;
        }
    }
    run.table("energy_slice.csv", &t)?;
    let (r0, w0) = s.argmin();
    println!("minimum at rho = {}, sigma = {}", num(r0), num(w0));
    println!("cells with E <= 0 away from the minimum: {}", s.nonpositive_off_minimum);
    Ok(())
}

fn boundary(run: &mut Run, spec: &GridSpec, spoke: usize, damping: &[f64]) -> Result<(), CliError> {
    run.set("spoke", json!(spoke));
    let b = stability_boundary(spec, spoke)?;
    let mut lines = Table::new(["line", "intercept", "slope", "other_injection", "other_damping"]);
    for (name, l) in [("lower", b.lower), ("upper", b.upper)] {
        lines.push(vec![name.into(), num(l.intercept), num(l.slope), num(b.other_injection), num(b.other_damping)])?;
        println!("{name}: A = {} + {} D", num(l.intercept), num(l.slope));
    }
    let mut samples = Table::new(["damping", "injection_lower", "injection_upper"]);
    for &d in damping {
        samples.push(vec![num(d), num(b.lower.at(d)), num(b.upper.at(d))])?;
    }
    run.table("boundary_lines.csv", &lines)?;
    run.table("boundary.csv", &samples)
}

fn probe_settings(run: &mut Run) -> ProbeSettings {
    let integrator = run.integrator();
    let p = ProbeSettings { integrator, horizon: run.global.horizon, ..Default::default() };
    run.set("horizon", p.horizon.map_or(json!("auto"), |h| json!(h)));
    run.set("horizon_safety", json!(p.safety));
    run.set("horizon_cap_slip_times", json!(p.cap));
    p
}

fn run_sweep(run: &mut Run, spec: &GridSpec, param: Parameter, values: &[f64], init: InitArg) -> Result<(), CliError> {
    let probe = probe_settings(run);
    let policy = match init {
        InitArg::Warm => InitPolicy::default(),
        InitArg::Closed => InitPolicy::ClosedForm { perturbation: 1e-3 },
    };
    run.set("param", json!(param.to_string()));
    run.set("init", json!(format!("{init:?}").to_lowercase()));
    let r = sweep(spec, param, values, &policy, &probe)?;
    let mut t = Table::new(["value", "margin", "outcome", "period_s", "error"]);
    for p in &r.points {
        let err = p.outcome.as_ref().err().cloned().unwrap_or_default();
        t.push(vec![num(p.value), num(p.margin), p.label().into(), opt_num(p.period()), err])?;
    }
    run.table("sweep.csv", &t)?;
    let cycles = r.points.iter().filter(|p| p.period().is_some()).count();
    println!("{} value(s), {cycles} limit cycle(s)", r.points.len());
    Ok(())
}

fn run_bracket(run: &mut Run, spec: &GridSpec, param: Parameter, lo: f64, hi: f64, tol: f64) -> Result<(), CliError> {
    if !(tol > 0.0) {
        return Err(CliError::Usage("--tol must be positive".into()));
    }
    let probe = probe_settings(run);
    run.set("param", json!(param.to_string()));
    run.set("bracket_tol", json!(tol));
    let b = bracket_threshold(spec, param, lo, hi, tol, &probe)?;
    let mut t = Table::new(["param", "lo", "hi", "critical", "analytic", "relative_error", "probes"]);
    t.push(vec![
        param.to_string(),
        num(b.lo),
        num(b.hi),
        num(b.critical),
        opt_num(b.analytic),
        opt_num(b.relative_error()),
        b.probes.to_string(),
    ])?;
    run.table("bracket.csv", &t)?;
    println!("critical {param} = {} (interval [{}, {}])", num(b.critical), num(b.lo), num(b.hi));
    match (b.analytic, b.relative_error()) {
        (Some(a), Some(e)) => println!("closed form {param} = {}, relative difference {}", num(a), num(e)),
        _ => println!("criterion margin does not change sign in the interval"),
    }
    Ok(())
}

fn run_scaling(
    run: &mut Run,
    spec: &GridSpec,
    param: Parameter,
    critical: Option<f64>,
    side: SideArg,
    eps: &[f64],
) -> Result<(), CliError> {
    param.check(spec)?;
    let probe = probe_settings(run);
    let critical = match critical {
        Some(c) => c,
        None => {
            let v = param.get(spec);
            let (lo, hi) = (v - 10.0 * v.abs().max(1.0), v + 10.0 * v.abs().max(1.0));
            analytic_threshold(spec, param, lo, v)
                .or_else(|| analytic_threshold(spec, param, v, hi))
                .ok_or_else(|| CliError::Domain(format!("no closed-form threshold for {param} near {v}; pass --critical")))?
        }
    };
    let eps_max = eps.iter().cloned().fold(0.0, f64::max);
    let side = match side {
        SideArg::Above => Side::Above,
        SideArg::Below => Side::Below,
        SideArg::Auto => cyclic_side(spec, param, critical, eps_max, &probe)?,
    };
    run.set("param", json!(param.to_string()));
    run.set("critical", json!(critical));
    run.set("side", json!(format!("{side:?}").to_lowercase()));
    run.set("eps", json!(eps));
    let fit = period_scaling(spec, param, critical, side, eps, &probe)?;
    let mut t = Table::new(["eps", "value", "period_s"]);
    for &(e, period) in &fit.points {
        t.push(vec![num(e), num(side.value(critical, e)), num(period)])?;
    }
    run.table("scaling.csv", &t)?;
    let mut f = Table::new(["exponent", "prefactor_s", "monotone", "points"]);
    f.push(vec![num(fit.exponent), num(fit.prefactor), fit.monotone.to_string(), fit.points.len().to_string()])?;
    run.table("scaling_fit.csv", &f)?;
    println!("T ~ {} * eps^{} over {} point(s)", num(fit.prefactor), num(fit.exponent), fit.points.len());
    Ok(())
}

fn rerun(manifest_path: &Path, global: &GlobalArgs) -> Result<(), CliError> {
    let m = RunManifest::load(manifest_path)?;
    if let Some(cfg) = &m.config {
        let bytes = fs::read(&cfg.path).map_err(GridError::Io)?;
        if sha256_hex(&bytes) != cfg.sha256 {
            return Err(CliError::Domain(format!("config {} changed since the recorded run", cfg.path)));
        }
    }
    let recorded_dir = manifest_path.parent().unwrap_or(Path::new("."));
    if same_dir(recorded_dir, &global.out_dir) {
        return Err(CliError::Usage("rerun needs an --out-dir different from the recorded run".into()));
    }
    let mut argv = vec![m.tool.clone()];
    argv.extend(m.args.iter().cloned());
    argv.push("--out-dir".into());
    argv.push(global.out_dir.display().to_string());
    let cli = Cli::try_parse_from(&argv).map_err(|e| CliError::Usage(e.to_string()))?;
    if matches!(cli.command, Command::Rerun { .. }) {
        return Err(CliError::Usage("manifest records a rerun".into()));
    }
    dispatch(&cli, &argv[1..])?;
    let fresh = RunManifest::load(&global.out_dir.join(MANIFEST_FILE))?;
    let mut mismatched = Vec::new();
    for o in &m.outputs {
        if !fresh.outputs.iter().any(|f| f == o) {
            mismatched.push(o.path.clone());
        }
    }
    if mismatched.is_empty() && fresh.outputs.len() == m.outputs.len() {
        println!("reproduced {} output file(s)", m.outputs.len());
        Ok(())
    } else {
        Err(CliError::Domain(format!("outputs differ from the recorded run: {}", mismatched.join(", "))))
    }
}

fn same_dir(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    }
}
