//! `basin` — region-of-attraction polytopes and critical-clearing-time
//! screening from the command line.
//!
//! Subcommands: `roa` (emit invariant sets / vector-field grids), `cct`
//! (contingency screening), `simulate` (trajectory export), `verify`
//! (invariance certification suites). `ROA_LOG=debug` enables logging.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use basin_core::cct::{
    self, build_power_roa_with, fault_on_trajectory_with, screen, RoaOptions, ScreenConfig,
};
use basin_core::dynsys::{self, IntegratorConfig, Trajectory, VectorField as _};
use basin_core::examples::{example, vector_field_grid, ExampleSystem, EXAMPLE_NAMES};
use basin_core::invariance::{check_boundary_flow, check_trajectory_invariance};
use basin_core::powersys::{
    bundled_case, kron_reduce_with, load_case, power_flow, swing_field, Contingency, PowerCase,
    ReductionOptions, ReductionVariant,
};

#[derive(Parser)]
#[command(
    name = "basin",
    version,
    about = "Invariant-polytope stability tooling"
)]
struct Cli {
    /// Seed for all randomized sampling.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Write the primary artifact here instead of stdout.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Emit the candidate invariant set (and optionally a vector-field grid).
    Roa(RoaArgs),
    /// Screen contingencies: polytope CCT next to the time-domain oracle.
    Cct(CctArgs),
    /// Integrate a system and emit the trajectory as CSV.
    Simulate(SimArgs),
    /// Run the invariance certification suites; exit 0 iff all pass.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct RoaArgs {
    /// Bundled example system (example1, example2, example3).
    #[arg(long, conflicts_with = "case")]
    example: Option<String>,
    /// Parameter override `name=value` (repeatable, examples only).
    #[arg(long = "param", value_name = "NAME=VALUE")]
    params: Vec<String>,
    /// Power case: a file path or a bundled name (wscc9, ieee39).
    #[arg(long)]
    case: Option<String>,
    /// Contingency `bus:8,line:8-9` (required with --case).
    #[arg(long)]
    contingency: Option<String>,
    #[command(flatten)]
    model: ModelFlags,
    /// Write a vector-field grid CSV here (examples only).
    #[arg(long)]
    grid_output: Option<PathBuf>,
    /// Grid bounds `lo:hi,lo:hi` (one pair per state dimension).
    #[arg(long, default_value = "-4:4,-4:4", allow_hyphen_values = true)]
    grid_box: String,
    /// Grid points per axis.
    #[arg(long, default_value_t = 25)]
    grid_res: usize,
}

#[derive(Args)]
struct CctArgs {
    /// Power case: a file path or a bundled name (wscc9, ieee39).
    #[arg(long)]
    case: String,
    /// Contingency `bus:8,line:8-9` (repeatable).
    #[arg(long = "contingency", value_name = "SPEC")]
    contingencies: Vec<String>,
    /// Screen every in-service line with both endpoints as fault locations.
    #[arg(long)]
    all_lines: bool,
    /// Scan and simulation step, seconds.
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    /// Horizon for the fault-on scan and the stability window, seconds.
    #[arg(long, default_value_t = 5.0)]
    tmax: f64,
    /// Oracle bracketing tolerance, seconds.
    #[arg(long, default_value_t = 1e-3)]
    tol: f64,
    #[command(flatten)]
    model: ModelFlags,
    /// Output format.
    #[arg(long, default_value = "csv", value_parser = ["csv", "json"])]
    format: String,
}

#[derive(Args, Clone, Copy)]
struct ModelFlags {
    /// Zero transfer conductances in the reduced models.
    #[arg(long)]
    lossless: bool,
    /// Drop the reference-machine rows from the polytope.
    #[arg(long)]
    no_per_angle_bounds: bool,
    /// Half-width of the pairwise angle bounds, radians.
    #[arg(long, default_value_t = std::f64::consts::PI)]
    box_half_width: f64,
}

#[derive(Args)]
struct SimArgs {
    /// Bundled example system.
    #[arg(long, conflicts_with = "case")]
    example: Option<String>,
    /// Parameter override `name=value` (repeatable, examples only).
    #[arg(long = "param", value_name = "NAME=VALUE")]
    params: Vec<String>,
    /// Power case: simulates the fault-on swing trajectory.
    #[arg(long)]
    case: Option<String>,
    #[arg(long)]
    contingency: Option<String>,
    /// Clear the fault at this time and continue on the post-fault system.
    #[arg(long)]
    tclear: Option<f64>,
    /// Initial state `x1,x2,...` (examples only; defaults to the stored
    /// equilibrium nudged by 0.1 on each coordinate).
    #[arg(long, allow_hyphen_values = true)]
    x0: Option<String>,
    /// End time, seconds.
    #[arg(long, default_value_t = 10.0)]
    tend: f64,
    /// Fixed RK4 step, seconds.
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    /// Use the adaptive integrator instead of fixed-step RK4.
    #[arg(long)]
    rk45: bool,
    #[arg(long, default_value_t = 1e-6)]
    rel_tol: f64,
    #[arg(long, default_value_t = 1e-9)]
    abs_tol: f64,
    #[command(flatten)]
    model: ModelFlags,
}

#[derive(Args)]
struct VerifyArgs {
    /// Example to certify, or `all`.
    #[arg(long, default_value = "all")]
    example: String,
    /// Parameter override `name=value` (repeatable; single example only).
    #[arg(long = "param", value_name = "NAME=VALUE")]
    params: Vec<String>,
    /// Trajectory samples per example.
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    /// Integration horizon per sample, seconds.
    #[arg(long, default_value_t = 100.0)]
    tend: f64,
    /// Boundary samples per facet.
    #[arg(long, default_value_t = 200)]
    facet_samples: usize,
    /// Terminal-distance bound for convergence, state units.
    #[arg(long, default_value_t = 1e-3)]
    distance_tol: f64,
    /// `text` pass/fail lines or the full `json` reports.
    #[arg(long, default_value = "text", value_parser = ["text", "json"])]
    format: String,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ROA_LOG", "error")).init();
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("rayon thread pool")?;
    }
    match &cli.command {
        Command::Roa(args) => cmd_roa(&cli, args),
        Command::Cct(args) => cmd_cct(&cli, args),
        Command::Simulate(args) => cmd_simulate(&cli, args),
        Command::Verify(args) => cmd_verify(&cli, args),
    }
}

fn write_artifact(output: &Option<PathBuf>, content: &str) -> Result<()> {
    match output {
        Some(path) => {
            std::fs::write(path, content).with_context(|| format!("writing {}", path.display()))?
        }
        None => {
            std::io::stdout().write_all(content.as_bytes())?;
        }
    }
    Ok(())
}

fn resolve_case(spec: &str) -> Result<PowerCase> {
    if Path::new(spec).exists() {
        return Ok(load_case(spec)?);
    }
    if let Some(built) = bundled_case(spec) {
        return Ok(built?);
    }
    bail!("case '{spec}' is neither a file nor a bundled case (wscc9, ieee39)")
}

fn parse_params(specs: &[String]) -> Result<Vec<(String, f64)>> {
    specs
        .iter()
        .map(|s| {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| anyhow!("bad --param '{s}', expected name=value"))?;
            Ok((
                k.trim().to_string(),
                v.trim().parse::<f64>().context("parameter value")?,
            ))
        })
        .collect()
}

fn load_example(name: &str, params: &[String]) -> Result<ExampleSystem> {
    Ok(example(name, &parse_params(params)?)?)
}

fn parse_grid_box(spec: &str, dim: usize) -> Result<Vec<(f64, f64)>> {
    let bounds: Vec<(f64, f64)> = spec
        .split(',')
        .map(|pair| {
            let (lo, hi) = pair
                .split_once(':')
                .ok_or_else(|| anyhow!("bad --grid-box segment '{pair}', expected lo:hi"))?;
            Ok((lo.trim().parse::<f64>()?, hi.trim().parse::<f64>()?))
        })
        .collect::<Result<_>>()?;
    if bounds.len() != dim {
        bail!(
            "--grid-box has {} segments, state dimension is {dim}",
            bounds.len()
        );
    }
    Ok(bounds)
}

fn reduction_options(m: &ModelFlags) -> ReductionOptions {
    ReductionOptions {
        lossless: m.lossless,
    }
}

fn roa_options(m: &ModelFlags) -> RoaOptions {
    RoaOptions {
        per_angle_bounds: !m.no_per_angle_bounds,
        half_width: m.box_half_width,
    }
}

fn cmd_roa(cli: &Cli, args: &RoaArgs) -> Result<()> {
    let doc = match (&args.example, &args.case) {
        (Some(name), None) => {
            let sys = load_example(name, &args.params)?;
            if let Some(grid_path) = &args.grid_output {
                let bounds = parse_grid_box(&args.grid_box, sys.field.dim())?;
                let grid = vector_field_grid(&sys, &bounds, args.grid_res)?;
                let mut buf = Vec::new();
                grid.write_csv(&mut buf)?;
                std::fs::write(grid_path, buf)
                    .with_context(|| format!("writing {}", grid_path.display()))?;
            }
            serde_json::json!({
                "system": sys.name,
                "params": sys.params,
                "equilibrium": sys.roa.equilibrium(),
                "omega_e": sys.roa.omega_e(),
                "omega_sets": sys.omega_sets,
            })
        }
        (None, Some(case_spec)) => {
            let case = resolve_case(case_spec)?;
            let spec = args
                .contingency
                .as_deref()
                .ok_or_else(|| anyhow!("--case requires --contingency"))?;
            let contingency = Contingency::parse(spec)?;
            let sol = power_flow(&case, 1e-8)?;
            let post = kron_reduce_with(
                &case,
                &sol,
                ReductionVariant::PostFault(contingency),
                reduction_options(&args.model),
            )?;
            let roa = build_power_roa_with(&post, roa_options(&args.model))?;
            serde_json::json!({
                "case": case_spec,
                "contingency": contingency,
                "equilibrium": roa.equilibrium(),
                "omega_e": roa.omega_e(),
                "omega_sets": roa.sources(),
            })
        }
        _ => bail!("specify exactly one of --example or --case"),
    };
    write_artifact(
        &cli.output,
        &format!("{}\n", serde_json::to_string_pretty(&doc)?),
    )
}

fn cmd_cct(cli: &Cli, args: &CctArgs) -> Result<()> {
    let case = resolve_case(&args.case)?;
    let mut contingencies: Vec<Contingency> = args
        .contingencies
        .iter()
        .map(|s| Contingency::parse(s).map_err(Into::into))
        .collect::<Result<_>>()?;
    if args.all_lines {
        contingencies.extend(cct::line_trip_candidates(&case));
    }
    if contingencies.is_empty() {
        bail!("no contingencies: pass --contingency or --all-lines");
    }
    let cfg = ScreenConfig {
        dt: args.dt,
        t_max: args.tmax,
        tol: args.tol,
        lossless: args.model.lossless,
        per_angle_bounds: !args.model.no_per_angle_bounds,
        box_half_width: args.model.box_half_width,
    };
    let results = screen(&case, &contingencies, &cfg)?;
    let content = match args.format.as_str() {
        "json" => format!("{}\n", serde_json::to_string_pretty(&results)?),
        _ => {
            let mut buf = Vec::new();
            cct::write_results_csv(&results, &mut buf)?;
            String::from_utf8(buf).expect("csv is utf-8")
        }
    };
    write_artifact(&cli.output, &content)
}

fn parse_x0(spec: &str) -> Result<Vec<f64>> {
    spec.split(',')
        .map(|v| v.trim().parse::<f64>().context("state component"))
        .collect()
}

fn cmd_simulate(cli: &Cli, args: &SimArgs) -> Result<()> {
    let traj = match (&args.example, &args.case) {
        (Some(name), None) => {
            let sys = load_example(name, &args.params)?;
            let x0 = match &args.x0 {
                Some(spec) => parse_x0(spec)?,
                None => sys.roa.equilibrium().iter().map(|v| v + 0.1).collect(),
            };
            let cfg = if args.rk45 {
                IntegratorConfig::rk45(args.rel_tol, args.abs_tol)
            } else {
                IntegratorConfig::rk4(args.dt)
            };
            dynsys::integrate(&sys.field, &x0, args.tend, &cfg)?
        }
        (None, Some(case_spec)) => {
            let case = resolve_case(case_spec)?;
            let spec = args
                .contingency
                .as_deref()
                .ok_or_else(|| anyhow!("--case requires --contingency"))?;
            let contingency = Contingency::parse(spec)?;
            simulate_power(&case, &contingency, args)?
        }
        _ => bail!("specify exactly one of --example or --case"),
    };
    let mut buf = Vec::new();
    traj.write_csv(&mut buf)?;
    write_artifact(&cli.output, &String::from_utf8(buf).expect("csv is utf-8"))
}

/// Fault-on trajectory, optionally switching to the post-fault system at
/// `tclear` (one composite trajectory, clearing instant included once).
fn simulate_power(
    case: &PowerCase,
    contingency: &Contingency,
    args: &SimArgs,
) -> Result<Trajectory> {
    let opts = reduction_options(&args.model);
    match args.tclear {
        None => Ok(fault_on_trajectory_with(
            case,
            contingency,
            args.dt,
            args.tend,
            opts,
        )?),
        Some(tclear) => {
            if !(tclear > 0.0 && tclear < args.tend) {
                bail!("--tclear must lie in (0, tend)");
            }
            let fault = fault_on_trajectory_with(case, contingency, args.dt, tclear, opts)?;
            let sol = power_flow(case, 1e-8)?;
            let post_sys =
                kron_reduce_with(case, &sol, ReductionVariant::PostFault(*contingency), opts)?;
            let post_field = swing_field(&post_sys);
            let post = dynsys::integrate(
                &post_field,
                fault.end_state(),
                args.tend - tclear,
                &IntegratorConfig::rk4(args.dt),
            );
            let post = match post {
                Ok(t) => t,
                Err(dynsys::DynError::Diverged { trajectory }) => trajectory,
                Err(e) => return Err(e.into()),
            };
            let mut merged = Trajectory::new(fault.dim());
            for i in 0..fault.len() {
                merged.push(fault.time(i), fault.state(i).to_vec());
            }
            for i in 1..post.len() {
                merged.push(tclear + post.time(i), post.state(i).to_vec());
            }
            Ok(merged)
        }
    }
}

fn cmd_verify(cli: &Cli, args: &VerifyArgs) -> Result<()> {
    let names: Vec<&str> = if args.example == "all" {
        EXAMPLE_NAMES.to_vec()
    } else {
        vec![args.example.as_str()]
    };
    if names.len() > 1 && !args.params.is_empty() {
        bail!("--param needs a single --example");
    }

    let mut out = String::new();
    let mut json_reports = Vec::new();
    let mut all_pass = true;
    for name in names {
        let sys = load_example(name, &args.params)?;
        let inv =
            check_trajectory_invariance(&sys.field, &sys.roa, args.samples, args.tend, cli.seed)?;
        let flow = check_boundary_flow(&sys.field, &sys.roa, args.facet_samples, cli.seed)?;
        let converged = inv.max_terminal_distance <= args.distance_tol;
        let inv_pass = inv.n_exits == 0 && converged;
        let flow_pass = flow.all_within_tol();
        all_pass &= inv_pass && flow_pass;
        if args.format == "json" {
            json_reports.push(serde_json::json!({
                "system": name,
                "pass": inv_pass && flow_pass,
                "trajectory_invariance": inv,
                "boundary_flow": flow,
            }));
            continue;
        }
        out.push_str(&format!(
            "{name}: trajectory-invariance {} ({} samples, {} exits, max terminal distance {:.3e})\n",
            if inv_pass { "PASS" } else { "FAIL" },
            inv.n_samples,
            inv.n_exits,
            inv.max_terminal_distance,
        ));
        out.push_str(&format!(
            "{name}: boundary-flow {} (max per-sub-field facet flow {:.3e}, tol {:.1e})\n",
            if flow_pass { "PASS" } else { "FAIL" },
            flow.max_flow(),
            flow.tol,
        ));
    }
    if args.format == "json" {
        out = format!("{}\n", serde_json::to_string_pretty(&json_reports)?);
    }
    write_artifact(&cli.output, &out)?;
    if all_pass {
        Ok(())
    } else {
        // Message already in the artifact; signal failure via exit code.
        std::process::exit(1);
    }
}
