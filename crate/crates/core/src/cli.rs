//! The `hopdyn` command-line front end.
//!
//! Every command writes its CSV/JSON outputs and a `manifest.json` into the output
//! directory. Exit codes: 0 success, 1 usage, 2 input error, 3 numerical failure.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::accumulation::{added_mass_whatif, critical_surface, lin_space, log_space, MassTarget, CESSATION_HEIGHT};
use crate::analyze::{
    estimate_velocity, export_tracking, extract_ledgers, fit_cda, parse_trajectory, segment_cycles, ExtractOptions,
    RawTrajectory, SegmentOptions,
};
use crate::control::{run_protocol, ProtocolConfig};
use crate::dynamics::{simulate, ReboundThrust, SimOptions, SimState, StopCondition, Trajectory};
use crate::elastomer::{
    band_energy_discrepancy, curve_specific_energy, reference_curve, system_energy, StressStrainCurve, BAND_DENSITY,
    BAND_MASS_TOTAL, OPERATING_STRAIN, ROBOT_MASS, STATED_STORED_ENERGY,
};
use crate::energy::ledgers_from_trajectory;
use crate::error::{HopError, Result};
use crate::params::{default_params, DragAreaModel, RobotParams};
use crate::report;
use crate::stance::{simulate_stance, stance_maps, StanceOutcome, StanceParams, StanceTarget};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "hopdyn", version, about = "Energy-accumulative hopping robot toolkit")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Robot parameters JSON; defaults to the prototype.
    #[arg(long, global = true, value_name = "FILE")]
    pub params: Option<PathBuf>,
    /// Output directory (HOPDYN_OUT takes precedence).
    #[arg(long, global = true, value_name = "DIR", default_value = "hopdyn-out")]
    pub out: PathBuf,
    /// Worker threads for grid commands.
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,
    /// Aerial integration step (s); the contact step is a hundredth of it.
    #[arg(long, global = true, value_name = "SEC")]
    pub dt: Option<f64>,
    /// Reference drop height for critical-ratio searches (m).
    #[arg(long, global = true, value_name = "M", default_value_t = 1.0)]
    pub href: f64,
    /// Record wall time in the manifest, which makes it differ between runs.
    #[arg(long, global = true)]
    pub record_time: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print and validate robot parameters.
    Params(ParamsArgs),
    /// Hop under constant rebound thrust.
    Simulate(SimulateArgs),
    /// Critical rebound ratio over total mass and body fraction.
    Critical(CriticalArgs),
    /// Effect of added body or foot mass on the critical force.
    Whatif(WhatifArgs),
    /// Planar stance maps over touchdown speed and angle.
    Stance(StanceArgs),
    /// Closed-loop drop-and-hop protocol.
    Protocol(ProtocolArgs),
    /// Extract per-hop energy terms from tracked trajectories.
    Analyze(AnalyzeArgs),
    /// Elastic energy budget of the bands.
    Elastomer(ElastomerArgs),
}

#[derive(Debug, Args)]
pub struct ParamsArgs {
    /// Use the prototype parameters, ignoring --params.
    #[arg(long)]
    pub default: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Rebound thrust as a fraction of weight.
    #[arg(long, default_value_t = 0.0)]
    pub alpha: f64,
    /// Release height (m).
    #[arg(long, default_value_t = 1.0)]
    pub h0: f64,
    #[arg(long, default_value_t = 20)]
    pub hops: usize,
    /// Disable drag.
    #[arg(long)]
    pub no_drag: bool,
    /// Use the constant drag area instead of the speed-dependent fit.
    #[arg(long)]
    pub constant_drag: bool,
    /// Also write the full trajectory and events.
    #[arg(long)]
    pub trace: bool,
    /// Also write body tracking resampled at this rate (Hz).
    #[arg(long, value_name = "HZ")]
    pub tracking_rate: Option<f64>,
}

#[derive(Debug, Args)]
pub struct CriticalArgs {
    #[arg(long)]
    pub mass_min: Option<f64>,
    #[arg(long)]
    pub mass_max: Option<f64>,
    #[arg(long, default_value_t = 40)]
    pub mass_points: usize,
    #[arg(long, default_value_t = 0.4)]
    pub fraction_min: f64,
    #[arg(long, default_value_t = 0.95)]
    pub fraction_max: f64,
    #[arg(long, default_value_t = 40)]
    pub fraction_points: usize,
    #[arg(long)]
    pub constant_drag: bool,
}

#[derive(Debug, Args)]
pub struct WhatifArgs {
    /// Added mass (kg).
    #[arg(long, default_value_t = 0.1)]
    pub dm: f64,
}

#[derive(Debug, Args)]
pub struct StanceArgs {
    #[arg(long, default_value_t = 1.0)]
    pub speed_min: f64,
    #[arg(long, default_value_t = 8.0)]
    pub speed_max: f64,
    #[arg(long, default_value_t = 15)]
    pub speed_points: usize,
    /// Touchdown angles (deg).
    #[arg(long, default_value_t = -30.0, allow_hyphen_values = true)]
    pub angle_min: f64,
    #[arg(long, default_value_t = 30.0)]
    pub angle_max: f64,
    #[arg(long, default_value_t = 13)]
    pub angle_points: usize,
    /// Only evaluate the 6 m/s, 10 degree reference case.
    #[arg(long)]
    pub example: bool,
}

#[derive(Debug, Args)]
pub struct ProtocolArgs {
    /// Protocol configuration JSON; flags below override its fields.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub alpha_pct: Option<f64>,
    #[arg(long)]
    pub drop: Option<f64>,
    #[arg(long)]
    pub hops: Option<usize>,
    #[arg(long)]
    pub blanking_ms: Option<f64>,
    #[arg(long)]
    pub cutoff: Option<f64>,
    #[arg(long)]
    pub thrust_max: Option<f64>,
    /// Upward force during descent (N).
    #[arg(long)]
    pub drain: Option<f64>,
    #[arg(long)]
    pub trace: bool,
    #[arg(long, value_name = "HZ")]
    pub tracking_rate: Option<f64>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Tracking CSV files with header t,x,y,z.
    #[arg(required = true)]
    pub files: Vec<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub window: usize,
    #[arg(long, default_value_t = 3.0)]
    pub touchdown_g: f64,
    #[arg(long, default_value_t = 1.5)]
    pub liftoff_g: f64,
    /// Also fit the drag-area line from the descents.
    #[arg(long)]
    pub fit_cda: bool,
}

#[derive(Debug, Args)]
pub struct ElastomerArgs {
    /// Stress-strain CSV with header strain,stress_Pa; defaults to the reference curve.
    #[arg(long, value_name = "FILE")]
    pub curve: Option<PathBuf>,
    #[arg(long, default_value_t = BAND_DENSITY)]
    pub density: f64,
    #[arg(long, default_value_t = OPERATING_STRAIN)]
    pub strain: f64,
    #[arg(long, default_value_t = BAND_MASS_TOTAL)]
    pub band_mass: f64,
    #[arg(long, default_value_t = ROBOT_MASS)]
    pub robot_mass: f64,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub args: Vec<String>,
    pub config: Value,
    pub determinism: &'static str,
    pub outputs: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
}

const DETERMINISM: &str = "no randomness; identical invocations write identical bytes";

struct Ctx {
    out: PathBuf,
    params: RobotParams,
    opts: SimOptions,
    href: f64,
    outputs: Vec<String>,
}

impl Ctx {
    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        let path = self.out.join(name);
        let f = File::create(&path).map_err(|e| HopError::Io {
            path: path.clone(),
            source: e,
        })?;
        self.outputs.push(name.to_string());
        Ok(BufWriter::new(f))
    }

    fn write_json<T: Serialize>(&mut self, name: &str, v: &T) -> Result<()> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, v)?;
        writeln!(w).and_then(|_| w.flush()).map_err(|e| HopError::Io {
            path: self.out.join(name),
            source: e,
        })
    }

    fn write_with(&mut self, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
        let mut w = self.create(name)?;
        f(&mut w)?;
        w.flush().map_err(|e| HopError::Io {
            path: self.out.join(name),
            source: e,
        })
    }
}

pub fn exit_code(e: &HopError) -> i32 {
    if e.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_INPUT
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    let args: Vec<String> = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(cli, args) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn load_params(g: &GlobalArgs, force_default: bool) -> Result<RobotParams> {
    let p = match (&g.params, force_default) {
        (Some(path), false) => {
            let text = std::fs::read_to_string(path).map_err(|e| HopError::Io {
                path: path.clone(),
                source: e,
            })?;
            RobotParams::from_json(&text).map_err(|e| HopError::invalid(format!("{}: {e}", path.display())))?
        }
        _ => default_params(),
    };
    p.ensure_valid()?;
    Ok(p)
}

fn sim_options(g: &GlobalArgs) -> Result<SimOptions> {
    match g.dt {
        None => Ok(SimOptions::default()),
        Some(dt) if dt > 0.0 && dt <= 0.01 => Ok(SimOptions::with_dt(dt)),
        Some(dt) => Err(HopError::invalid(format!("--dt {dt} must be in (0, 0.01]"))),
    }
}

fn execute(cli: Cli, args: Vec<String>) -> Result<()> {
    let started = Instant::now();
    let g = &cli.global;
    let out = std::env::var_os("HOPDYN_OUT")
        .map(PathBuf::from)
        .unwrap_or_else(|| g.out.clone());
    if !(g.href > 0.0) {
        return Err(HopError::invalid("--href must be positive"));
    }
    if g.jobs == Some(0) {
        return Err(HopError::invalid("--jobs must be at least 1"));
    }
    let force_default = matches!(&cli.command, Command::Params(a) if a.default);
    let mut ctx = Ctx {
        out: out.clone(),
        params: load_params(g, force_default)?,
        opts: sim_options(g)?,
        href: g.href,
        outputs: Vec::new(),
    };
    std::fs::create_dir_all(&out).map_err(|e| HopError::Io {
        path: out.clone(),
        source: e,
    })?;

    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(j) = g.jobs {
            b = b.num_threads(j);
        }
        b.build().map_err(|e| HopError::invalid(format!("thread pool: {e}")))?
    };

    let (name, config) = pool.install(|| match &cli.command {
        Command::Params(_) => cmd_params(&mut ctx).map(|c| ("params", c)),
        Command::Simulate(a) => cmd_simulate(&mut ctx, a).map(|c| ("simulate", c)),
        Command::Critical(a) => cmd_critical(&mut ctx, a).map(|c| ("critical", c)),
        Command::Whatif(a) => cmd_whatif(&mut ctx, a).map(|c| ("whatif", c)),
        Command::Stance(a) => cmd_stance(&mut ctx, a).map(|c| ("stance", c)),
        Command::Protocol(a) => cmd_protocol(&mut ctx, a).map(|c| ("protocol", c)),
        Command::Analyze(a) => cmd_analyze(&mut ctx, a).map(|c| ("analyze", c)),
        Command::Elastomer(a) => cmd_elastomer(&mut ctx, a).map(|c| ("elastomer", c)),
    })?;

    let manifest = RunManifest {
        tool: "hopdyn",
        version: env!("CARGO_PKG_VERSION"),
        command: name.to_string(),
        args,
        config,
        determinism: DETERMINISM,
        outputs: ctx.outputs.clone(),
        wall_time_s: g.record_time.then(|| started.elapsed().as_secs_f64()),
    };
    ctx.write_json("manifest.json", &manifest)
}

/// Prints to stdout; a closed pipe is not an error.
fn say(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{text}");
}

fn base_config(ctx: &Ctx) -> Value {
    json!({
        "params": ctx.params,
        "sim": {
            "dt_air": ctx.opts.dt_air,
            "dt_contact": ctx.opts.dt_contact,
            "event_tol": ctx.opts.event_tol,
        },
        "h_ref": ctx.href,
    })
}

fn cmd_params(ctx: &mut Ctx) -> Result<Value> {
    let p = ctx.params;
    let m = p.masses();
    let record = json!({
        "params": p,
        "derived": { "m_T": m.m_t, "body_fraction": m.body_fraction, "weight": p.weight() },
    });
    say(&serde_json::to_string_pretty(&record)?);
    // the file alone, so it can be edited and passed back with --params
    ctx.write_json("params.json", &p)?;
    let mut c = base_config(ctx);
    c["derived"] = record["derived"].clone();
    Ok(c)
}

fn write_traces(ctx: &mut Ctx, traj: &Trajectory, trace: bool, tracking: Option<f64>) -> Result<()> {
    if trace {
        ctx.write_with("trajectory.csv", |w| report::write_trajectory(w, traj))?;
        ctx.write_with("events.csv", |w| report::write_events(w, traj))?;
    }
    if let Some(rate) = tracking {
        let rt = export_tracking(traj, &ctx.params, rate)?;
        ctx.write_with("tracking.csv", |w| rt.write_csv(w))?;
    }
    Ok(())
}

fn cmd_simulate(ctx: &mut Ctx, a: &SimulateArgs) -> Result<Value> {
    if !(a.h0 > 0.0) || a.hops == 0 || !(a.alpha >= 0.0) {
        return Err(HopError::invalid("need --h0 > 0, --hops >= 1 and --alpha >= 0"));
    }
    let mut p = ctx.params;
    if a.no_drag {
        p = p.without_drag();
    }
    if a.constant_drag {
        p.cda = DragAreaModel { slope: 0.0, ..p.cda };
        p.cda.mode = crate::params::DragMode::Constant;
    }
    let opts = SimOptions {
        ceiling: (a.alpha >= 1.0).then_some(20.0 * a.h0),
        min_apex_height: Some(CESSATION_HEIGHT),
        record: true,
        ..ctx.opts
    };
    let mut sched = ReboundThrust {
        force: a.alpha * p.weight(),
    };
    let traj = simulate(
        &p,
        SimState::at_rest(a.h0, &p),
        &mut sched,
        StopCondition::Hops(a.hops),
        &opts,
    )?;
    let mut heights = vec![a.h0];
    heights.extend(traj.apex_heights(&p));
    let records = ledgers_from_trajectory(&traj, &p).unwrap_or_default();
    ctx.write_with("sequence.csv", |w| report::write_sequence(w, &heights))?;
    ctx.write_with("ledger.csv", |w| report::write_ledgers(w, &records))?;
    write_traces(ctx, &traj, a.trace, a.tracking_rate)?;
    let mut c = base_config(ctx);
    c["params"] = json!(p);
    c["run"] =
        json!({ "alpha": a.alpha, "h0": a.h0, "hops": a.hops, "termination": format!("{:?}", traj.termination) });
    Ok(c)
}

fn cmd_critical(ctx: &mut Ctx, a: &CriticalArgs) -> Result<Value> {
    let mut p = ctx.params;
    if a.constant_drag {
        p.cda = DragAreaModel::constant_prototype();
    }
    let m0 = p.m_t();
    let lo = a.mass_min.unwrap_or(m0 / 100.0);
    let hi = a.mass_max.unwrap_or(m0 * 100.0);
    if !(lo > 0.0 && hi > lo) || a.mass_points < 2 || a.fraction_points < 2 {
        return Err(HopError::invalid(
            "mass range must be positive and increasing, with 2+ points per axis",
        ));
    }
    let masses = log_space(lo, hi, a.mass_points);
    let fractions = lin_space(a.fraction_min, a.fraction_max, a.fraction_points);
    let opts = SimOptions {
        record: false,
        ..ctx.opts
    };
    let grid = critical_surface(&p, &masses, &fractions, ctx.href, &opts)?;
    ctx.write_with("grid.csv", |w| report::write_grid(w, &grid))?;
    let slopes: Vec<f64> = (0..fractions.len()).map(|fi| grid.log_mass_slope(fi)).collect();
    let summary = json!({ "fractions": fractions, "log_mass_slope": slopes });
    ctx.write_json("summary.json", &summary)?;
    let mut c = base_config(ctx);
    c["params"] = json!(p);
    c["grid"] = json!({ "mass_min": lo, "mass_max": hi, "mass_points": a.mass_points,
        "fraction_min": a.fraction_min, "fraction_max": a.fraction_max, "fraction_points": a.fraction_points });
    Ok(c)
}

fn cmd_whatif(ctx: &mut Ctx, a: &WhatifArgs) -> Result<Value> {
    let opts = SimOptions {
        record: false,
        ..ctx.opts
    };
    let p = ctx.params;
    let href = ctx.href;
    let results: Vec<Result<_>> = [MassTarget::Body, MassTarget::Foot]
        .par_iter()
        .map(|&t| added_mass_whatif(&p, a.dm, t, href, &opts).map(|w| (t, w)))
        .collect();
    let results: Vec<_> = results.into_iter().collect::<Result<_>>()?;
    ctx.write_with("whatif.csv", |w| {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record([
            "target",
            "delta_m",
            "alpha_crit_before",
            "alpha_crit_after",
            "F_crit_before",
            "F_crit_after",
            "F_ratio",
        ])?;
        for (t, r) in &results {
            let name = match t {
                MassTarget::Body => "body",
                MassTarget::Foot => "foot",
            };
            wr.write_record([
                name.to_string(),
                report::num(a.dm),
                report::num(r.alpha_crit_before),
                report::num(r.alpha_crit_after),
                report::num(r.f_crit_before),
                report::num(r.f_crit_after),
                report::num(r.f_crit_after / r.f_crit_before),
            ])?;
        }
        wr.flush().map_err(|e| HopError::Io {
            path: "whatif.csv".into(),
            source: e,
        })
    })?;
    let mut c = base_config(ctx);
    c["delta_m"] = json!(a.dm);
    Ok(c)
}

fn stance_params(p: &RobotParams) -> StanceParams {
    StanceParams {
        m_b: p.m_b,
        m_f: p.m_f,
        k: p.k_b,
        r_0: p.r_0,
        g: p.g,
        ..StanceParams::default()
    }
}

fn cmd_stance(ctx: &mut Ctx, a: &StanceArgs) -> Result<Value> {
    let sp = stance_params(&ctx.params);
    sp.validate()?;
    let mut failed = Vec::new();
    let rows = if a.example {
        let t = StanceTarget::worked_example();
        vec![simulate_stance(t.v_td, t.theta_td, &sp)?]
    } else {
        if a.speed_points < 1 || a.angle_points < 1 {
            return Err(HopError::invalid("need at least one speed and one angle"));
        }
        let speeds = if a.speed_points == 1 {
            vec![a.speed_min]
        } else {
            lin_space(a.speed_min, a.speed_max, a.speed_points)
        };
        let thetas = if a.angle_points == 1 {
            vec![a.angle_min]
        } else {
            lin_space(a.angle_min, a.angle_max, a.angle_points)
        };
        let ns = speeds.len();
        let mut rows = Vec::new();
        for (k, cell) in stance_maps(&thetas, &speeds, &sp).into_iter().enumerate() {
            let (v, th) = (speeds[k % ns], thetas[k / ns]);
            rows.push(cell.unwrap_or_else(|e| {
                failed.push(json!({"v_TD": v, "theta_TD": th, "error": e.to_string()}));
                StanceOutcome::failed(v, th)
            }));
        }
        rows
    };
    if !failed.is_empty() {
        say(&format!(
            "{} of {} cells failed; their rows hold NaN (see manifest)",
            failed.len(),
            rows.len()
        ));
    }
    ctx.write_with("stance.csv", |w| report::write_stance(w, &rows))?;
    let mut c = base_config(ctx);
    c["stance"] = json!(sp);
    c["failed_cells"] = json!(failed);
    Ok(c)
}

fn cmd_protocol(ctx: &mut Ctx, a: &ProtocolArgs) -> Result<Value> {
    let mut cfg = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| HopError::Io {
                path: path.clone(),
                source: e,
            })?;
            serde_json::from_str::<ProtocolConfig>(&text)
                .map_err(|e| HopError::invalid(format!("{}: {e}", path.display())))?
        }
        None => ProtocolConfig::new(1.5, 0.0, 10),
    };
    if let Some(v) = a.alpha_pct {
        cfg.alpha_pct = v;
    }
    if let Some(v) = a.drop {
        cfg.drop_height = v;
    }
    if let Some(v) = a.hops {
        cfg.n_hops = v;
    }
    if let Some(v) = a.blanking_ms {
        cfg.blanking_ms = v;
    }
    if let Some(v) = a.cutoff {
        cfg.cutoff_speed = v;
    }
    if let Some(v) = a.thrust_max {
        cfg.thrust_max = Some(v);
    }
    if let Some(v) = a.drain {
        cfg.stabilization_drain_n = v;
    }
    let run = run_protocol(&ctx.params, &cfg, &ctx.opts)?;
    ctx.write_with("sequence.csv", |w| report::write_sequence(w, &run.heights))?;
    ctx.write_with("ledger.csv", |w| report::write_ledgers(w, &run.records))?;
    ctx.write_with("modes.csv", |w| {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["t", "mode"])?;
        for (t, m) in &run.modes {
            wr.write_record([report::num(*t), format!("{m:?}")])?;
        }
        wr.flush().map_err(|e| HopError::Io {
            path: "modes.csv".into(),
            source: e,
        })
    })?;
    write_traces(ctx, &run.trajectory, a.trace, a.tracking_rate)?;
    let mut c = base_config(ctx);
    c["protocol"] = json!(cfg);
    Ok(c)
}

struct FileResult {
    name: String,
    rt: RawTrajectory,
    hops: Vec<crate::analyze::HopEstimate>,
    skipped: Vec<crate::analyze::SkippedHop>,
}

fn analyze_file(path: &Path, p: &RobotParams, a: &AnalyzeArgs) -> Result<FileResult> {
    let rt = parse_trajectory(path)?;
    let vel = estimate_velocity(&rt, a.window)?;
    let seg = SegmentOptions {
        touchdown_g: a.touchdown_g,
        liftoff_g: a.liftoff_g,
    };
    let marks =
        segment_cycles(&rt, &vel, p.g, &seg).map_err(|e| HopError::invalid(format!("{}: {e}", path.display())))?;
    let ex = extract_ledgers(
        &rt,
        &marks,
        p,
        &ExtractOptions {
            velocity_window: a.window,
            ..ExtractOptions::default()
        },
    )?;
    Ok(FileResult {
        name: path.display().to_string(),
        rt,
        hops: ex.hops,
        skipped: ex.skipped,
    })
}

fn cmd_analyze(ctx: &mut Ctx, a: &AnalyzeArgs) -> Result<Value> {
    let p = ctx.params;
    let results: Vec<Result<FileResult>> = a.files.par_iter().map(|f| analyze_file(f, &p, a)).collect();
    let results: Vec<FileResult> = results.into_iter().collect::<Result<_>>()?;
    let table: Vec<(String, Vec<_>)> = results.iter().map(|r| (r.name.clone(), r.hops.clone())).collect();
    ctx.write_with("ledger.csv", |w| report::write_extracted(w, &table))?;
    let skipped: Vec<Value> = results
        .iter()
        .flat_map(|r| {
            r.skipped
                .iter()
                .map(move |s| json!({ "file": r.name, "hop_index": s.hop_index, "reason": s.reason }))
        })
        .collect();
    for s in &skipped {
        eprintln!("skipped hop {} in {}: {}", s["hop_index"], s["file"], s["reason"]);
    }
    let mut c = base_config(ctx);
    c["skipped"] = json!(skipped);
    if a.fit_cda {
        let runs: Vec<(RawTrajectory, f64)> = results.iter().map(|r| (r.rt.clone(), p.m_t())).collect();
        let fit = fit_cda(&runs, &p)?;
        ctx.write_json("cda.json", &fit)?;
    }
    Ok(c)
}

fn cmd_elastomer(ctx: &mut Ctx, a: &ElastomerArgs) -> Result<Value> {
    let curve = match &a.curve {
        Some(path) => StressStrainCurve::from_csv(path, a.density)?,
        None => StressStrainCurve {
            density: a.density,
            ..reference_curve()
        },
    };
    let specific = curve_specific_energy(&curve, a.strain)?;
    let at_max = curve_specific_energy(&curve, curve.max_strain())?;
    let sys = system_energy(specific, a.band_mass, a.robot_mass)?;
    let d = band_energy_discrepancy();
    let stated = system_energy(STATED_STORED_ENERGY, 1.0, a.robot_mass)?;
    say(&format!("specific energy at strain {}: {:.1} J/kg", a.strain, specific));
    say(&format!(
        "stored {:.3} J, system specific {:.3} J/kg",
        sys.stored, sys.system_specific
    ));
    say(&format!(
        "stated stored energy {} J gives system specific {:.3} J/kg",
        STATED_STORED_ENERGY, stated.system_specific
    ));
    say(&format!(
        "documented discrepancy: {} ({:+.1}%)",
        d.description,
        100.0 * d.relative
    ));
    ctx.write_with("curve.csv", |w| curve.write_csv(w))?;
    let report = json!({
        "strain": a.strain,
        "specific_energy": specific,
        "specific_energy_max_strain": at_max,
        "stored": sys.stored,
        "system_specific": sys.system_specific,
        "stated_stored": STATED_STORED_ENERGY,
        "stated_system_specific": stated.system_specific,
        "synthetic_curve": a.curve.is_none(),
        "discrepancy": d,
    });
    ctx.write_json("elastomer.json", &report)?;
    Ok(json!({ "band_mass": a.band_mass, "robot_mass": a.robot_mass, "density": a.density }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_by_error_class() {
        assert_eq!(exit_code(&HopError::invalid("x")), EXIT_INPUT);
        assert_eq!(exit_code(&HopError::UnboundedRise { denominator: 0.0 }), EXIT_NUMERICAL);
        assert_eq!(run(["hopdyn", "no-such-command"]), EXIT_USAGE);
        assert_eq!(run(["hopdyn", "--help"]), EXIT_OK);
    }

    #[test]
    fn dt_bounds() {
        let mut g = Cli::try_parse_from(["hopdyn", "params"]).unwrap().global;
        assert!(sim_options(&g).is_ok());
        g.dt = Some(0.02);
        assert!(sim_options(&g).is_err());
        g.dt = Some(1e-4);
        assert_eq!(sim_options(&g).unwrap().dt_air, 1e-4);
    }
}
