//! Command-line surface: `eigen`, `solve-aux`, `continue`, `check-f`,
//! `picone`.
//!
//! Exit codes: 0 on success, 1 on solver or hypothesis failure (diagnostics
//! on standard error), 2 on usage or config errors. Numeric outputs land in
//! the configured output directory alongside a `run.log` whose last record
//! states the terminal phase and verdict.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::assembly::AuxiliaryProblem;
use crate::config::{load_config, RunConfig};
use crate::eigen::principal_eigenpair;
use crate::error::{Error, Result};
use crate::field::DiscreteField;
use crate::field_io::{
    read_field_csv, write_field_csv, write_mesh_csv, write_partial_trace_csv, write_trace_csv,
    RunLog,
};
use crate::picone::{collapse_test, picone_density};
use crate::reaction::{
    check_growth, check_liminf_at_zero, check_limsup_at_infinity, CheckOptions, HypothesisReport,
    SampleGrid,
};
use crate::solver::{continuation_run, solve_auxiliary, ContinuationOptions};

#[derive(Parser)]
#[command(
    name = "robinp",
    about = "Robin p-Laplacian solver: eigenpairs, perturbed solves, continuation, hypothesis audits",
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute the principal Robin eigenpair.
    Eigen {
        #[arg(long)]
        config: PathBuf,
    },
    /// Solve the perturbed auxiliary problem for one epsilon.
    SolveAux {
        #[arg(long)]
        config: PathBuf,
        /// Perturbation size (defaults to schedule.start).
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Run the epsilon-to-zero continuation.
    #[command(name = "continue")]
    Continue {
        #[arg(long)]
        config: PathBuf,
    },
    /// Audit the reaction against the growth and asymptotic hypotheses.
    CheckF {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate the Picone density between two stored fields.
    Picone {
        #[arg(long)]
        config: PathBuf,
        /// CSV of the reference (eigenfunction) field.
        #[arg(long)]
        u1: PathBuf,
        /// CSV of the field to test.
        #[arg(long)]
        u: PathBuf,
        /// Optional CSV of eta_M for the collapse test.
        #[arg(long)]
        eta_m: Option<PathBuf>,
    },
}

fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Parse { .. }
        | Error::Validation { .. }
        | Error::InvalidArgument(_)
        | Error::Io { .. } => 2,
        _ => 1,
    }
}

/// Runs one CLI invocation; returns the process exit status.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders its own usage/version text; --help is a success.
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            let mut source = std::error::Error::source(&err);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            exit_code_for(&err)
        }
    }
}

fn prepare(config_path: &Path) -> Result<(RunConfig, PathBuf, RunLog)> {
    let cfg = load_config(config_path)?;
    let out = cfg.output_dir();
    std::fs::create_dir_all(&out).map_err(|e| Error::io(out.display().to_string(), e))?;
    let log = RunLog::create(&out.join("run.log"))?;
    Ok((cfg, out, log))
}

fn finish(log: &mut RunLog, result: Result<()>) -> Result<()> {
    match &result {
        Ok(()) => log.record("done", &[("verdict", "ok".into())])?,
        Err(err) => log.record("done", &[("verdict", format!("\"{err}\""))])?,
    }
    result
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Eigen { config } => {
            let (cfg, out, mut log) = prepare(&config)?;
            let result = cmd_eigen(&cfg, &out, &mut log);
            finish(&mut log, result)
        }
        Command::SolveAux { config, epsilon } => {
            let (cfg, out, mut log) = prepare(&config)?;
            let result = cmd_solve_aux(&cfg, &out, &mut log, epsilon);
            finish(&mut log, result)
        }
        Command::Continue { config } => {
            let (cfg, out, mut log) = prepare(&config)?;
            let result = cmd_continue(&cfg, &out, &mut log);
            finish(&mut log, result)
        }
        Command::CheckF { config } => {
            let (cfg, out, mut log) = prepare(&config)?;
            let result = cmd_check_f(&cfg, &out, &mut log);
            finish(&mut log, result)
        }
        Command::Picone {
            config,
            u1,
            u,
            eta_m,
        } => {
            let (cfg, out, mut log) = prepare(&config)?;
            let result = cmd_picone(&cfg, &out, &mut log, &u1, &u, eta_m.as_deref());
            finish(&mut log, result)
        }
    }
}

fn maybe_dump_mesh(cfg: &RunConfig, out: &Path) -> Result<()> {
    if cfg.write_mesh {
        let mesh = cfg.build_mesh()?;
        write_mesh_csv(out, &mesh)?;
    }
    Ok(())
}

fn cmd_eigen(cfg: &RunConfig, out: &Path, log: &mut RunLog) -> Result<()> {
    maybe_dump_mesh(cfg, out)?;
    let problem = cfg.build_problem()?;
    log.record(
        "eigen",
        &[
            ("p", cfg.p.to_string()),
            ("nodes", problem.mesh().node_count().to_string()),
        ],
    )?;
    let pair = principal_eigenpair(&problem, &cfg.eigen_options())?;
    println!("lambda1 = {:.12e}", pair.lambda1);
    println!("residual = {:.3e}", pair.residual_norm);
    println!("iterations = {}", pair.iterations);
    if cfg.write_fields {
        write_field_csv(&out.join("u1.csv"), problem.mesh(), &pair.u1)?;
    }
    log.record(
        "eigen",
        &[
            ("lambda1", format!("{:.17e}", pair.lambda1)),
            ("residual", format!("{:.3e}", pair.residual_norm)),
            ("iterations", pair.iterations.to_string()),
        ],
    )?;
    Ok(())
}

fn cmd_solve_aux(
    cfg: &RunConfig,
    out: &Path,
    log: &mut RunLog,
    epsilon: Option<f64>,
) -> Result<()> {
    maybe_dump_mesh(cfg, out)?;
    let problem = cfg.build_problem()?;
    let reaction = cfg.build_reaction()?;
    let e = cfg.perturbation(problem.mesh())?;
    let eps = epsilon.unwrap_or(cfg.schedule_start);
    let aux = AuxiliaryProblem::new(&problem, &reaction, eps, e)?;
    let init = DiscreteField::constant(problem.mesh(), 1.0);
    log.record("solve-aux", &[("epsilon", eps.to_string())])?;
    let sol = solve_auxiliary(&aux, &init, &cfg.solver)?;
    println!("epsilon = {eps:.6e}");
    println!("residual = {:.3e}", sol.residual_norm);
    println!("min_u = {:.6e}", sol.min_value);
    println!("max_u = {:.6e}", sol.max_value);
    println!(
        "picard_iters = {} newton_iters = {}",
        sol.picard_iters, sol.newton_iters_total
    );
    if cfg.write_fields {
        write_field_csv(&out.join("u.csv"), problem.mesh(), &sol.u)?;
    }
    log.record(
        "solve-aux",
        &[
            ("residual", format!("{:.3e}", sol.residual_norm)),
            ("min_u", format!("{:.6e}", sol.min_value)),
            ("max_u", format!("{:.6e}", sol.max_value)),
        ],
    )?;
    Ok(())
}

fn log_trace_records(log: &mut RunLog, records: &[crate::solver::TraceRecord]) -> Result<()> {
    for r in records {
        log.record(
            "continue-step",
            &[
                ("step", r.step.to_string()),
                ("epsilon", format!("{:.6e}", r.epsilon)),
                ("residual", format!("{:.3e}", r.residual_norm)),
                ("min_u", format!("{:.6e}", r.min_u)),
                ("max_u", format!("{:.6e}", r.max_u)),
                ("picone", format!("{:.6e}", r.picone_integral)),
                ("collapse", (r.collapse_flag as u8).to_string()),
            ],
        )?;
    }
    Ok(())
}

fn cmd_continue(cfg: &RunConfig, out: &Path, log: &mut RunLog) -> Result<()> {
    maybe_dump_mesh(cfg, out)?;
    let problem = cfg.build_problem()?;
    let reaction = cfg.build_reaction()?;
    let e = cfg.perturbation(problem.mesh())?;
    let schedule = cfg.schedule()?;
    let opts = ContinuationOptions {
        solver: cfg.solver.clone(),
        eigen: cfg.eigen_options(),
        ..ContinuationOptions::default()
    };
    log.record(
        "continue",
        &[
            ("steps", schedule.values().len().to_string()),
            ("eps_start", cfg.schedule_start.to_string()),
            ("eps_ratio", cfg.schedule_ratio.to_string()),
        ],
    )?;
    match continuation_run(&problem, &reaction, &e, &schedule, &opts) {
        Ok(trace) => {
            log_trace_records(log, &trace.records)?;
            write_trace_csv(&out.join("trace.csv"), &trace)?;
            if cfg.write_fields {
                write_field_csv(
                    &out.join("u_final.csv"),
                    problem.mesh(),
                    &trace.final_solution.u,
                )?;
                write_field_csv(&out.join("u1.csv"), problem.mesh(), &trace.eigen.u1)?;
            }
            println!("steps = {}", trace.records.len());
            println!("lambda1 = {:.12e}", trace.eigen.lambda1);
            println!("final_residual = {:.3e}", trace.final_residual);
            println!(
                "min_u_final = {:.6e} max_u_final = {:.6e}",
                trace.final_solution.min_value, trace.final_solution.max_value
            );
            match &trace.collapse {
                Some(report) => {
                    println!(
                        "collapse = {} xi_star = {:.6e}",
                        report.collapse, report.xi_star
                    )
                }
                None => println!("collapse = n/a (sampled wedge not positive)"),
            }
            log.record(
                "continue",
                &[
                    ("final_residual", format!("{:.3e}", trace.final_residual)),
                    ("min_u", format!("{:.6e}", trace.final_solution.min_value)),
                ],
            )?;
            Ok(())
        }
        Err(err) => {
            // Persist whatever trace exists for inspection.
            let records = match &err {
                Error::CollapseDetected { records, .. } => Some(records.clone()),
                Error::ContinuationAborted { records, .. } => Some(records.clone()),
                _ => None,
            };
            if let Some(records) = records {
                log_trace_records(log, &records)?;
                write_partial_trace_csv(&out.join("trace.csv"), &records)?;
            }
            Err(err)
        }
    }
}

fn print_report(name: &str, report: &HypothesisReport, detail: String) {
    let verdict = if report.pass { "PASS" } else { "FAIL" };
    let witness = match (&report.witness, report.pass) {
        (Some(w), false) => format!(
            " witness: z=({:.4e},{:.4e}) x={:.4e} |y|={:.4e} ratio={:.6e}",
            w.z[0], w.z[1], w.x, w.y_mag, w.value
        ),
        _ => String::new(),
    };
    println!("hypothesis {name}: {verdict} {detail}{witness}");
}

fn cmd_check_f(cfg: &RunConfig, _out: &Path, log: &mut RunLog) -> Result<()> {
    let problem = cfg.build_problem()?;
    let reaction = cfg.build_reaction()?;
    let pair = principal_eigenpair(&problem, &cfg.eigen_options())?;
    let grid = SampleGrid::default();
    let opts = CheckOptions::default();
    let p = cfg.p;
    let mesh = problem.mesh();

    let growth = check_growth(&reaction, p, mesh, &grid, &opts)?;
    print_report(
        "(i) growth",
        &growth,
        format!("a_max={:.6e}", growth.sampled_bound.max()),
    );
    let limsup = check_limsup_at_infinity(&reaction, p, mesh, pair.lambda1, &grid, &opts)?;
    print_report(
        "(ii) limsup",
        &limsup,
        format!(
            "theta_hat_max={:.6e} lambda1={:.6e}",
            limsup.sampled_bound.max(),
            pair.lambda1
        ),
    );
    let liminf = check_liminf_at_zero(&reaction, p, mesh, pair.lambda1, 1e3, &grid, &opts)?;
    print_report(
        "(iii) liminf",
        &liminf,
        format!(
            "eta_hat_min={:.6e} lambda1={:.6e}",
            liminf.sampled_bound.min(),
            pair.lambda1
        ),
    );

    let all = [&growth, &limsup, &liminf];
    for report in all {
        log.record(
            "check-f",
            &[
                ("hypothesis", report.hypothesis.to_string()),
                ("pass", report.pass.to_string()),
            ],
        )?;
    }
    if let Some(fail) = all.iter().find(|r| !r.pass) {
        let w = fail.witness.as_ref();
        return Err(Error::HypothesisViolated(format!(
            "hypothesis {} fails{}",
            fail.hypothesis,
            w.map(|w| format!(
                " (witness x={:.4e}, |y|={:.4e}, ratio={:.6e})",
                w.x, w.y_mag, w.value
            ))
            .unwrap_or_default()
        )));
    }
    Ok(())
}

fn cmd_picone(
    cfg: &RunConfig,
    _out: &Path,
    log: &mut RunLog,
    u1_path: &Path,
    u_path: &Path,
    eta_m_path: Option<&Path>,
) -> Result<()> {
    let problem = cfg.build_problem()?;
    let mesh = problem.mesh();
    let u1 = read_field_csv(u1_path, mesh)?;
    let u = read_field_csv(u_path, mesh)?;
    let density = picone_density(&problem, &u1, &u)?;
    let min = density.iter().copied().fold(f64::INFINITY, f64::min);
    let integral: f64 = density
        .iter()
        .enumerate()
        .map(|(k, r)| mesh.element_measure(k) * r)
        .sum();
    println!("points = {}", density.len());
    println!("integral = {:.12e}", integral);
    println!("min_pointwise = {:.12e}", min);
    log.record(
        "picone",
        &[
            ("integral", format!("{integral:.12e}")),
            ("min_pointwise", format!("{min:.12e}")),
        ],
    )?;
    if let Some(eta_path) = eta_m_path {
        let eta_m = read_field_csv(eta_path, mesh)?;
        let pair = principal_eigenpair(&problem, &cfg.eigen_options())?;
        let report = collapse_test(&problem, &pair, &u, &eta_m, 0.0)?;
        println!("xi_star = {:.12e}", report.xi_star);
        println!("collapse = {}", report.collapse);
        log.record(
            "picone",
            &[
                ("xi_star", format!("{:.12e}", report.xi_star)),
                ("collapse", report.collapse.to_string()),
            ],
        )?;
    }
    Ok(())
}
