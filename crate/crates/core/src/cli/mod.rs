//! Command-line front end. Exit codes: 0 success, 1 usage or input error,
//! 2 infeasible, 3 numerical failure.

mod manifest;
mod pipeline;
mod svg;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::ddpf::write_trace_csv;
use crate::error::{Error, Result};
use crate::geometry::largest_ci_subspace;
use crate::linalg::Vector;
use crate::model::{
    build_power_grid, example_gap, example_marginal, randomize_grid, ControllerFile, LtiSystem,
    PowerGridParams, SystemFile,
};
use crate::sim::{noise_sweep, simulate, write_sweep_csv, DisturbanceSpec, SweepConfig};

pub use manifest::{manifest_path, FileDigest, RunManifest};
pub use pipeline::{
    monte_carlo, summarize, synthesize_mode, trial_seed, MeanStd, Mode, RunConfig, SummaryRow,
    TrialRow,
};
pub use svg::{line_plot, Series};

#[derive(Debug, Parser)]
#[command(
    name = "ddsynth",
    version,
    about = "Disturbance-decoupling and H2 state-feedback synthesis"
)]
pub struct Cli {
    /// JSON run configuration; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the four-bus power network.
    Powergrid(PowergridArgs),
    /// Write one of the small textbook systems.
    Example(ExampleArgs),
    /// Synthesize a controller.
    Synth(SynthArgs),
    /// Metrics of one or more controllers.
    Eval(EvalArgs),
    /// Monte Carlo comparison over randomized grids.
    Mc(McArgs),
    /// Cumulative output error over increasing noise variance.
    Sweep(SweepArgs),
    /// Closed-loop simulation under white noise.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct PowergridArgs {
    #[arg(long, conflicts_with = "seed", required_unless_present = "seed")]
    pub nominal: bool,
    /// Randomize inertia and damping with this seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ExampleKind {
    /// Marginally stable plant whose decoupling gain is zero.
    Marginal,
    /// Plant where the H2 program hides a decoupling failure.
    Gap,
}

#[derive(Debug, Args)]
pub struct ExampleArgs {
    #[arg(value_enum)]
    pub which: ExampleKind,
    #[arg(long)]
    pub out: PathBuf,
}

/// Overrides of the configuration file.
#[derive(Debug, Args, Default)]
pub struct SolverFlags {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub stop_eps: Option<f64>,
    /// `ε` of the stability term `HᵀH + εI`.
    #[arg(long)]
    pub stability_eps: Option<f64>,
    /// `ε` of the H2 semidefinite program.
    #[arg(long)]
    pub sdp_eps: Option<f64>,
}

impl SolverFlags {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.gamma {
            cfg.solve.gamma = v;
        }
        if let Some(v) = self.max_iters {
            cfg.solve.max_iters = v;
        }
        if let Some(v) = self.stop_eps {
            cfg.solve.stop_eps = v;
        }
        if let Some(v) = self.stability_eps {
            cfg.stability_eps = v;
        }
        if let Some(v) = self.sdp_eps {
            cfg.h2.eps = v;
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub system: PathBuf,
    #[arg(long)]
    pub mode: Mode,
    #[arg(long)]
    pub out: PathBuf,
    /// Iteration log of the iterative modes.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[command(flatten)]
    pub flags: SolverFlags,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub system: PathBuf,
    #[arg(long, num_args = 1.., required = true)]
    pub controller: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct McArgs {
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "h2-sdp,dd-h2,dd-alpha,dd-gain"
    )]
    pub modes: Vec<Mode>,
    /// Output directory for `trials.csv` and `table.csv`.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub flags: SolverFlags,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub system: PathBuf,
    #[arg(long, num_args = 1.., required = true)]
    pub controller: Vec<PathBuf>,
    /// Exponent range `a:b` of the noise variance `2^l`.
    #[arg(long)]
    pub l: Option<String>,
    #[arg(long = "T")]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Initial state, comma separated; zero by default.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x0: Option<Vec<f64>>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub system: PathBuf,
    #[arg(long)]
    pub controller: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub sigma_sq: f64,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long = "T")]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x0: Option<Vec<f64>>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

/// Maps an error to the process exit code.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Infeasible(_) | Error::NoStabilizingDd { .. } => 2,
        Error::NumericalFailure(_) | Error::SingularLyapunov => 3,
        _ => 1,
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .try_init();
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => serde_json::from_str::<RunConfig>(&std::fs::read_to_string(p)?)?,
        None => RunConfig::default(),
    };
    let config_input = cli.config.as_deref();
    match &cli.command {
        Command::Powergrid(a) => cmd_powergrid(a),
        Command::Example(a) => cmd_example(a),
        Command::Synth(a) => {
            a.flags.apply(&mut cfg);
            cmd_synth(a, &cfg, config_input)
        }
        Command::Eval(a) => cmd_eval(a, &cfg),
        Command::Mc(a) => {
            a.flags.apply(&mut cfg);
            cmd_mc(a, &cfg, config_input)
        }
        Command::Sweep(a) => cmd_sweep(a, &cfg, config_input),
        Command::Simulate(a) => cmd_simulate(a, &cfg, config_input),
    }
}

fn read_system(path: &Path) -> Result<LtiSystem> {
    SystemFile::from_json(&std::fs::read_to_string(path)?)?.to_system()
}

fn read_controller(path: &Path) -> Result<ControllerFile> {
    ControllerFile::from_json(&std::fs::read_to_string(path)?)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)?;
    Ok(())
}

fn with_inputs(m: &mut RunManifest, paths: &[&Path]) -> Result<()> {
    for p in paths {
        m.input(p)?;
    }
    Ok(())
}

fn initial_state(x0: &Option<Vec<f64>>, n: usize) -> Result<Vector> {
    match x0 {
        None => Ok(Vector::zeros(n)),
        Some(v) if v.len() == n => Ok(Vector::from_vec(v.clone())),
        Some(v) => Err(Error::DimensionMismatch(format!(
            "x0 has {} entries, expected {n}",
            v.len()
        ))),
    }
}

pub fn cmd_powergrid(a: &PowergridArgs) -> Result<()> {
    let params = match a.seed {
        Some(s) => randomize_grid(&PowerGridParams::nominal(), s),
        None => PowerGridParams::nominal(),
    };
    let sys = build_power_grid(&params)?;
    let mut file = SystemFile::from_system(&sys);
    file.grid_params = Some(params);
    file.manifest = Some(manifest::manifest_ref(&a.out));
    write_text(&a.out, &(file.to_json() + "\n"))?;
    let m = RunManifest::start(
        "powergrid",
        json!({"nominal": a.nominal, "seed": a.seed}),
        a.seed,
    );
    m.finish(std::slice::from_ref(&a.out))?;
    Ok(())
}

pub fn cmd_example(a: &ExampleArgs) -> Result<()> {
    let (sys, name) = match a.which {
        ExampleKind::Marginal => (example_marginal(), "marginal"),
        ExampleKind::Gap => (example_gap(), "gap"),
    };
    let mut file = SystemFile::from_system(&sys);
    file.manifest = Some(manifest::manifest_ref(&a.out));
    write_text(&a.out, &(file.to_json() + "\n"))?;
    RunManifest::start("example", json!({"which": name}), None)
        .finish(std::slice::from_ref(&a.out))?;
    Ok(())
}

pub fn cmd_synth(a: &SynthArgs, cfg: &RunConfig, config: Option<&Path>) -> Result<()> {
    let mut m = RunManifest::start(
        "synth",
        json!({"mode": a.mode.name(), "config": serde_json::to_value(cfg)?}),
        Some(cfg.seed),
    );
    with_inputs(&mut m, &[a.system.as_path()])?;
    if let Some(c) = config {
        m.input(c)?;
    }
    let sys = read_system(&a.system)?;
    let (res, trace) = synthesize_mode(&sys, a.mode, cfg)?;
    if let Some(w) = &res.warning {
        log::warn!("{w}");
    }
    let mut file = res.to_file(a.mode.name());
    file.manifest = Some(manifest::manifest_ref(&a.out));
    write_text(&a.out, &(file.to_json() + "\n"))?;
    let mut outputs = vec![a.out.clone()];
    if let Some(t) = &a.trace {
        write_trace_csv(&trace, std::fs::File::create(t)?)?;
        outputs.push(t.clone());
    }
    m.finish(&outputs)?;
    Ok(())
}

/// Display name of a controller: its file stem, made unique by position.
fn controller_ids(paths: &[PathBuf]) -> Vec<String> {
    let stems: Vec<String> = paths
        .iter()
        .map(|p| {
            p.file_stem()
                .map_or("controller".into(), |s| s.to_string_lossy().into_owned())
        })
        .collect();
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    stems
        .iter()
        .map(|s| {
            let k = seen.entry(s).or_insert(0);
            *k += 1;
            if *k == 1 {
                s.clone()
            } else {
                format!("{s}#{k}")
            }
        })
        .collect()
}

pub fn cmd_eval(a: &EvalArgs, cfg: &RunConfig) -> Result<()> {
    let mut m = RunManifest::start("eval", json!({"controllers": a.controller}), None);
    with_inputs(&mut m, &[a.system.as_path()])?;
    let sys = read_system(&a.system)?;
    let v = largest_ci_subspace(&sys, cfg.tol());
    let mut records = Vec::new();
    for (path, id) in a.controller.iter().zip(controller_ids(&a.controller)) {
        m.input(path)?;
        let f = read_controller(path)?.gain()?;
        let r = crate::ddpf::evaluate_controller(&sys, &v, &f, cfg.tol())?;
        records.push([
            id,
            format!("{:e}", r.f_alpha),
            format!("{:e}", r.f_gain),
            format!("{:e}", r.f_h2),
            format!("{:e}", r.f_dd),
            r.hurwitz.to_string(),
        ]);
    }
    let mut w = csv::Writer::from_path(&a.out)?;
    w.write_record(["controller", "f_alpha", "f_gain", "f_h2", "f_dd", "hurwitz"])?;
    for r in &records {
        w.write_record(r)?;
    }
    w.flush()?;
    drop(w);
    m.finish(std::slice::from_ref(&a.out))?;
    Ok(())
}

pub fn cmd_mc(a: &McArgs, cfg: &RunConfig, config: Option<&Path>) -> Result<()> {
    if a.trials == 0 || a.modes.is_empty() {
        return Err(Error::InvalidInput(
            "need at least one trial and one mode".into(),
        ));
    }
    let mut m = RunManifest::start(
        "mc",
        json!({"trials": a.trials, "modes": a.modes, "config": serde_json::to_value(cfg)?}),
        Some(cfg.seed),
    );
    if let Some(c) = config {
        m.input(c)?;
    }
    std::fs::create_dir_all(&a.out)?;
    let rows = monte_carlo(a.trials, &a.modes, cfg)?;

    let trials_path = a.out.join("trials.csv");
    let mut w = csv::Writer::from_path(&trials_path)?;
    w.write_record([
        "trial",
        "mode",
        "f_alpha",
        "f_gain",
        "f_h2",
        "f_dd",
        "hurwitz",
        "iterations",
        "converged",
    ])?;
    for r in &rows {
        w.write_record(&[
            r.trial.to_string(),
            r.mode.name().to_string(),
            format!("{:e}", r.metrics.f_alpha),
            format!("{:e}", r.metrics.f_gain),
            format!("{:e}", r.metrics.f_h2),
            format!("{:e}", r.metrics.f_dd),
            r.metrics.hurwitz.to_string(),
            r.iterations.to_string(),
            r.converged.to_string(),
        ])?;
    }
    w.flush()?;
    drop(w);

    let table_path = a.out.join("table.csv");
    let mut w = csv::Writer::from_path(&table_path)?;
    w.write_record([
        "mode",
        "f_alpha_mean",
        "f_alpha_std",
        "f_gain_mean",
        "f_gain_std",
        "f_h2_mean",
        "f_h2_std",
        "f_dd_mean",
        "f_dd_std",
    ])?;
    for s in summarize(&rows, &a.modes) {
        let mut rec = vec![s.mode.name().to_string()];
        for ms in [s.f_alpha, s.f_gain, s.f_h2, s.f_dd] {
            rec.push(format!("{:e}", ms.mean));
            rec.push(format!("{:e}", ms.std));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    drop(w);
    m.finish(&[table_path, trials_path])?;
    Ok(())
}

fn parse_levels(s: &str) -> Result<(u32, u32)> {
    let bad = || Error::InvalidInput(format!("expected a range like 7:20, got `{s}`"));
    let (a, b) = s.split_once(':').ok_or_else(bad)?;
    Ok((
        a.trim().parse().map_err(|_| bad())?,
        b.trim().parse().map_err(|_| bad())?,
    ))
}

pub fn cmd_sweep(a: &SweepArgs, cfg: &RunConfig, config: Option<&Path>) -> Result<()> {
    let mut sc: SweepConfig = cfg.sweep.clone();
    if let Some(l) = &a.l {
        (sc.l_min, sc.l_max) = parse_levels(l)?;
    }
    if let Some(v) = a.horizon {
        sc.horizon = v;
    }
    if let Some(v) = a.dt {
        sc.dt = v;
    }
    if let Some(v) = a.trials {
        sc.trials = v;
    }
    if let Some(v) = a.seed {
        sc.seed = v;
    }
    let mut m = RunManifest::start(
        "sweep",
        json!({"sweep": serde_json::to_value(&sc)?, "x0": a.x0, "controllers": a.controller}),
        Some(sc.seed),
    );
    with_inputs(&mut m, &[a.system.as_path()])?;
    if let Some(c) = config {
        m.input(c)?;
    }
    let sys = read_system(&a.system)?;
    let x0 = initial_state(&a.x0, sys.n())?;
    let mut controllers = Vec::new();
    for (path, id) in a.controller.iter().zip(controller_ids(&a.controller)) {
        m.input(path)?;
        controllers.push((id, read_controller(path)?.gain()?));
    }
    let rows = noise_sweep(&sys, &controllers, &x0, &sc)?;
    write_sweep_csv(&rows, std::fs::File::create(&a.out)?)?;
    let mut outputs = vec![a.out.clone()];
    if let Some(p) = &a.svg {
        let series: Vec<Series> = controllers
            .iter()
            .map(|(id, _)| Series {
                label: id.clone(),
                points: sc
                    .levels()
                    .map(|l| {
                        let vals: Vec<f64> = rows
                            .iter()
                            .filter(|r| &r.controller_id == id && r.l == l)
                            .map(|r| r.e_cum_t)
                            .collect();
                        (l as f64, MeanStd::of(&vals).mean)
                    })
                    .collect(),
            })
            .collect();
        let title = format!("cumulative output error at T = {}", sc.horizon);
        write_text(
            p,
            &line_plot(&title, "l (variance 2^l)", "e_cum(T)", &series, true),
        )?;
        outputs.push(p.clone());
    }
    m.finish(&outputs)?;
    Ok(())
}

pub fn cmd_simulate(a: &SimulateArgs, cfg: &RunConfig, config: Option<&Path>) -> Result<()> {
    let seed = a.seed.unwrap_or(cfg.seed);
    let horizon = a.horizon.unwrap_or(cfg.horizon);
    let dt = a.dt.unwrap_or(cfg.dt);
    let dist = DisturbanceSpec::GaussianWhite {
        sigma_sq: a.sigma_sq,
        seed,
    };
    let mut m = RunManifest::start(
        "simulate",
        json!({"disturbance": serde_json::to_value(&dist)?, "T": horizon, "dt": dt, "x0": a.x0, "hold": "zero-order"}),
        Some(seed),
    );
    with_inputs(&mut m, &[a.system.as_path(), a.controller.as_path()])?;
    if let Some(c) = config {
        m.input(c)?;
    }
    let sys = read_system(&a.system)?;
    let f = read_controller(&a.controller)?.gain()?;
    let x0 = initial_state(&a.x0, sys.n())?;
    let tr = simulate(&sys, &f, &x0, &dist, horizon, dt)?;
    tr.write_csv(std::fs::File::create(&a.out)?)?;
    let mut outputs = vec![a.out.clone()];
    if let Some(p) = &a.svg {
        let series = vec![Series {
            label: "|e(t)|".into(),
            points: tr
                .tgrid
                .iter()
                .zip(&tr.e)
                .map(|(t, e)| (*t, e.norm()))
                .collect(),
        }];
        write_text(
            p,
            &line_plot(
                "output deviation from the disturbance-free run",
                "t",
                "|e(t)|",
                &series,
                false,
            ),
        )?;
        outputs.push(p.clone());
    }
    m.finish(&outputs)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn level_ranges() {
        assert_eq!(parse_levels("7:20").unwrap(), (7, 20));
        assert!(parse_levels("7-20").is_err());
    }

    #[test]
    fn ids_are_unique() {
        let ids = controller_ids(&[
            PathBuf::from("a/k.json"),
            PathBuf::from("b/k.json"),
            PathBuf::from("c.json"),
        ]);
        assert_eq!(ids, vec!["k", "k#2", "c"]);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Infeasible("x".into())), 2);
        assert_eq!(exit_code(&Error::NumericalFailure("x".into())), 3);
        assert_eq!(exit_code(&Error::InvalidInput("x".into())), 1);
    }

    #[test]
    fn usage_errors_exit_with_one() {
        assert_eq!(run(["ddsynth", "synth"]), 1);
        assert_eq!(
            run([
                "ddsynth",
                "powergrid",
                "--nominal",
                "--seed",
                "1",
                "--out",
                "x.json"
            ]),
            1
        );
        assert_eq!(run(["ddsynth", "--help"]), 0);
    }
}
