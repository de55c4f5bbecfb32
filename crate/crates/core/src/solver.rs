//! Auxiliary solves by frozen-convection Picard iteration with inner damped
//! Newton, and the epsilon-to-zero continuation with positivity and
//! uniform-bound monitoring.
//!
//! The outer loop freezes the gradient argument of the reaction at the
//! current iterate, making the inner problem Newton-solvable; non-convergence
//! is a reportable outcome, not a panic. A continuation run solves the
//! perturbed problem down a strictly decreasing epsilon schedule with warm
//! starts, then polishes at epsilon = 0 to land on the original equation.

use crate::assembly::{
    element_gradient, residual_general, v_jacobian, v_residual, AuxiliaryProblem, DiscreteField,
    ProblemSpec,
};
use crate::eigen::{principal_eigenpair, EigenOptions, EigenPair};
use crate::error::{Error, Result};
use crate::picone::{collapse_test, picone_integral, PiconeReport, POSITIVITY_FLOOR};
use crate::reaction::{check_liminf_at_zero, CheckOptions, ReactionSpec, SampleGrid};
use crate::sparse::solve_sparse;

/// Armijo backtracking parameters for the damped Newton steps.
#[derive(Debug, Clone, Copy)]
pub struct ArmijoOptions {
    pub factor: f64,
    pub slope: f64,
    pub max_halvings: usize,
}

impl Default for ArmijoOptions {
    fn default() -> ArmijoOptions {
        ArmijoOptions {
            factor: 0.5,
            slope: 1e-4,
            max_halvings: 30,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Max-norm tolerance on the weak residual for the inner Newton solves
    /// and for overall acceptance.
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    /// Successive-iterate max-norm tolerance for the outer loop.
    pub picard_tol: f64,
    pub picard_max_iter: usize,
    /// Outer relaxation in (0, 1].
    pub relaxation: f64,
    pub armijo: ArmijoOptions,
    /// Accepted solutions must satisfy ||u^-||_inf <= this times max|u|.
    pub negative_part_tol_rel: f64,
}

impl Default for SolverOptions {
    fn default() -> SolverOptions {
        SolverOptions {
            newton_tol: 1e-10,
            newton_max_iter: 60,
            picard_tol: 1e-11,
            picard_max_iter: 400,
            relaxation: 0.7,
            armijo: ArmijoOptions::default(),
            negative_part_tol_rel: 1e-10,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.newton_tol > 0.0 && self.picard_tol > 0.0) {
            return Err(Error::invalid("solver tolerances must be positive"));
        }
        if !(self.relaxation > 0.0 && self.relaxation <= 1.0) {
            return Err(Error::invalid(format!(
                "relaxation must lie in (0, 1], got {}",
                self.relaxation
            )));
        }
        if self.negative_part_tol_rel < 0.0 {
            return Err(Error::invalid("negative_part_tol_rel must be nonnegative"));
        }
        Ok(())
    }
}

/// A converged auxiliary solve with its diagnostics.
#[derive(Debug, Clone)]
pub struct Solution {
    pub u: DiscreteField,
    pub epsilon: f64,
    /// Weak residual max-norm with the unfrozen gradient.
    pub residual_norm: f64,
    pub picard_iters: usize,
    pub newton_iters_total: usize,
    pub min_value: f64,
    pub max_value: f64,
    /// Largest elementwise gradient magnitude.
    pub max_gradient_norm: f64,
    pub negative_part_norm: f64,
}

impl Solution {
    /// Discrete C^1 proxy: max nodal |u| + max elementwise |Du|.
    pub fn c1_proxy(&self) -> f64 {
        self.u.inf_norm() + self.max_gradient_norm
    }

    /// Strict nodal positivity (the discrete interior-positive cone).
    pub fn is_interior_positive(&self) -> bool {
        self.min_value > 0.0
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

fn newton_inner(
    aux: &AuxiliaryProblem,
    start: &DiscreteField,
    frozen_y: &[[f64; 2]],
    opts: &SolverOptions,
) -> Result<(DiscreteField, usize)> {
    let mut u = start.clone();
    let mut r = v_residual(aux, &u, frozen_y)?;
    let mut rnorm = inf_norm(&r);
    let mut iters = 0usize;

    for _ in 0..opts.newton_max_iter {
        if rnorm <= opts.newton_tol {
            return Ok((u, iters));
        }
        let jac = v_jacobian(aux, &u, frozen_y)?;
        let rhs: Vec<f64> = r.iter().map(|v| -v).collect();
        let step = DiscreteField::new(solve_sparse(&jac, &rhs)?)
            .map_err(|_| Error::LinearSolveFailed("non-finite newton step".into()))?;

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.armijo.max_halvings {
            let cand = u.axpy(t, &step);
            if cand.values().iter().all(|v| v.is_finite()) {
                if let Ok(r_cand) = v_residual(aux, &cand, frozen_y) {
                    let n_cand = inf_norm(&r_cand);
                    if n_cand <= (1.0 - opts.armijo.slope * t) * rnorm {
                        accepted = Some((cand, r_cand, n_cand));
                        break;
                    }
                }
            }
            t *= opts.armijo.factor;
        }
        match accepted {
            Some((cand, r_cand, n_cand)) => {
                u = cand;
                r = r_cand;
                rnorm = n_cand;
                iters += 1;
            }
            // Line search stalled: the residual is only piecewise smooth
            // through the truncation kink at u = 0, and the Jacobian can be
            // indefinite while the iterate sits on the unstable side of the
            // eigenvalue. Hand over to pseudo-transient continuation.
            None => return ptc_phase(aux, u, r, rnorm, frozen_y, opts, iters),
        }
    }
    if rnorm <= opts.newton_tol {
        Ok((u, iters))
    } else {
        ptc_phase(aux, u, r, rnorm, frozen_y, opts, iters)
    }
}

/// Pseudo-transient continuation: damped steps (J + M/dt) d = -r follow the
/// parabolic flow of the operator with the timestep grown by switched
/// evolution relaxation, turning back into pure Newton as the residual
/// drops.
fn ptc_phase(
    aux: &AuxiliaryProblem,
    mut u: DiscreteField,
    mut r: Vec<f64>,
    mut rnorm: f64,
    frozen_y: &[[f64; 2]],
    opts: &SolverOptions,
    iters_so_far: usize,
) -> Result<(DiscreteField, usize)> {
    let mesh = aux.problem.mesh();
    let mut dt = 1.0f64;
    let mut iters = iters_so_far;
    let budget = 50 * opts.newton_max_iter.max(4);

    for _ in 0..budget {
        if rnorm <= opts.newton_tol {
            return Ok((u, iters));
        }
        let mut jac = v_jacobian(aux, &u, frozen_y)?;
        for i in 0..mesh.node_count() {
            jac.add(i, i, mesh.node_mass(i) / dt);
        }
        let rhs: Vec<f64> = r.iter().map(|v| -v).collect();
        let step = match solve_sparse(&jac, &rhs) {
            Ok(s) => s,
            Err(_) => {
                dt *= 0.25;
                if dt < 1e-14 {
                    return Err(Error::NewtonDiverged {
                        iterations: iters,
                        residual_norm: rnorm,
                        last: u,
                    });
                }
                continue;
            }
        };
        let cand = u.axpy(1.0, &DiscreteField::new(step).unwrap_or_else(|_| u.clone()));
        let ok = cand.values().iter().all(|v| v.is_finite());
        let r_cand = if ok {
            v_residual(aux, &cand, frozen_y).ok()
        } else {
            None
        };
        match r_cand {
            // Modest transient growth is allowed; the timestep adapts.
            Some(rc) => {
                let n_cand = inf_norm(&rc);
                if n_cand <= 1.5 * rnorm {
                    dt = (dt * (rnorm / n_cand.max(f64::MIN_POSITIVE)).clamp(0.1, 10.0)).min(1e12);
                    u = cand;
                    r = rc;
                    rnorm = n_cand;
                    iters += 1;
                    continue;
                }
                dt *= 0.25;
            }
            None => dt *= 0.25,
        }
        if dt < 1e-14 {
            break;
        }
    }
    if rnorm <= opts.newton_tol {
        Ok((u, iters))
    } else {
        Err(Error::NewtonDiverged {
            iterations: iters,
            residual_norm: rnorm,
            last: u,
        })
    }
}

/// Solves the perturbed problem for a fixed epsilon.
///
/// Outer loop: freeze the gradient at the current iterate, solve the frozen
/// problem with damped Newton, relax, and stop when either the unfrozen
/// residual meets `newton_tol` or successive iterates agree to `picard_tol`
/// (in which case the unfrozen residual must still come in under ten times
/// `newton_tol`). Accepted solutions are checked for nonnegativity.
pub fn solve_auxiliary(
    aux: &AuxiliaryProblem,
    init: &DiscreteField,
    opts: &SolverOptions,
) -> Result<Solution> {
    opts.validate()?;
    let mesh = aux.problem.mesh();
    crate::field::check_field(mesh, init, "solve_auxiliary init")?;

    let mut u = init.clone();
    let mut newton_total = 0usize;
    let mut picard_iters = 0usize;
    let mut residual_norm = f64::INFINITY;
    let mut converged = false;

    while picard_iters < opts.picard_max_iter {
        picard_iters += 1;
        let frozen = element_gradient(mesh, &u)?;
        let (w, steps) = newton_inner(aux, &u, &frozen, opts)?;
        newton_total += steps;

        let delta = w.max_abs_diff(&u);
        let next = if opts.relaxation == 1.0 {
            w
        } else {
            u.scale(1.0 - opts.relaxation).axpy(opts.relaxation, &w)
        };
        let unfrozen = element_gradient(mesh, &next)?;
        residual_norm = inf_norm(&v_residual(aux, &next, &unfrozen)?);
        u = next;

        if residual_norm <= opts.newton_tol {
            converged = true;
            break;
        }
        if delta <= opts.picard_tol {
            // Iterates stalled; accept only if the true residual is close.
            if residual_norm <= 10.0 * opts.newton_tol {
                converged = true;
                break;
            }
            return Err(Error::PicardNotConverged {
                iterations: picard_iters,
                residual_norm,
                last: u,
            });
        }
    }
    if !converged {
        return Err(Error::PicardNotConverged {
            iterations: picard_iters,
            residual_norm,
            last: u,
        });
    }

    let negative_part_norm = u.negative_part_norm();
    let threshold = opts.negative_part_tol_rel * u.inf_norm();
    if negative_part_norm > threshold {
        return Err(Error::PositivityViolated {
            negative_part_norm,
            threshold,
            last: u,
        });
    }

    let grads = element_gradient(mesh, &u)?;
    let max_gradient_norm = grads
        .iter()
        .map(|g| (g[0] * g[0] + g[1] * g[1]).sqrt())
        .fold(0.0, f64::max);
    Ok(Solution {
        min_value: u.min(),
        max_value: u.max(),
        negative_part_norm,
        max_gradient_norm,
        u,
        epsilon: aux.epsilon,
        residual_norm,
        picard_iters,
        newton_iters_total: newton_total,
    })
}

/// A strictly decreasing epsilon schedule within (0, 1].
#[derive(Debug, Clone)]
pub struct EpsilonSchedule {
    values: Vec<f64>,
}

impl EpsilonSchedule {
    /// Geometric schedule start, start*ratio, ..., `steps` values in total.
    pub fn geometric(start: f64, ratio: f64, steps: usize) -> Result<EpsilonSchedule> {
        if !(start > 0.0 && start <= 1.0) {
            return Err(Error::invalid(format!(
                "schedule start must lie in (0, 1], got {start}"
            )));
        }
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(Error::invalid(format!(
                "schedule ratio must lie in (0, 1), got {ratio}"
            )));
        }
        if steps == 0 {
            return Err(Error::invalid("schedule needs at least one step"));
        }
        let mut values = Vec::with_capacity(steps);
        let mut eps = start;
        for _ in 0..steps {
            values.push(eps);
            eps *= ratio;
        }
        Ok(EpsilonSchedule { values })
    }

    pub fn from_values(values: Vec<f64>) -> Result<EpsilonSchedule> {
        if values.is_empty() {
            return Err(Error::invalid("schedule needs at least one step"));
        }
        for w in values.windows(2) {
            if !(w[1] < w[0]) {
                return Err(Error::invalid("schedule must be strictly decreasing"));
            }
        }
        if !(values[0] > 0.0 && values[0] <= 1.0) || *values.last().unwrap() <= 0.0 {
            return Err(Error::invalid("schedule values must lie in (0, 1]"));
        }
        Ok(EpsilonSchedule { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

impl Default for EpsilonSchedule {
    /// 1, 1/2, ..., 2^-20, the default continuation ladder.
    fn default() -> EpsilonSchedule {
        EpsilonSchedule::geometric(1.0, 0.5, 21).expect("default schedule is valid")
    }
}

/// One continuation step: the epsilon, the solve summary, the Picone
/// integral against u1 (NaN when the iterate is not strictly positive), the
/// collapse verdict, and the running uniform-bound proxy.
#[derive(Debug, Clone)]
pub struct TraceRecord {
    pub step: usize,
    pub epsilon: f64,
    pub residual_norm: f64,
    pub min_u: f64,
    pub max_u: f64,
    pub max_gradient_norm: f64,
    pub picard_iters: usize,
    pub newton_iters: usize,
    pub picone_integral: f64,
    pub collapse_flag: bool,
    /// Running max over the trace so far of max_u.
    pub proxy_max_value: f64,
    /// Running max over the trace so far of the gradient norm.
    pub proxy_max_gradient: f64,
}

/// Trace of a completed continuation run.
#[derive(Debug, Clone)]
pub struct ContinuationTrace {
    pub records: Vec<TraceRecord>,
    /// The epsilon = 0 polish.
    pub final_solution: Solution,
    /// Weak residual of the original (unshifted) problem at the final field.
    pub final_residual: f64,
    /// Running max over all records of (max value, max gradient norm).
    pub uniform_bound_proxy: (f64, f64),
    pub eigen: EigenPair,
    /// Health check against the sampled eta_M; None when the sampled wedge
    /// xi* is not positive.
    pub collapse: Option<PiconeReport>,
}

#[derive(Debug, Clone)]
pub struct ContinuationOptions {
    pub solver: SolverOptions,
    pub eigen: EigenOptions,
    /// Collapse floor relative to the eigenfunction scale.
    pub collapse_floor_rel: f64,
    /// Trend rule: this many consecutive shrinking steps ...
    pub trend_window: usize,
    /// ... each shrinking max|u| by at least this factor ...
    pub trend_ratio: f64,
    /// ... with max|u| below this times the eigenfunction scale.
    pub trend_floor_rel: f64,
}

impl Default for ContinuationOptions {
    fn default() -> ContinuationOptions {
        ContinuationOptions {
            solver: SolverOptions::default(),
            eigen: EigenOptions::default(),
            collapse_floor_rel: 1e-6,
            trend_window: 3,
            trend_ratio: 0.8,
            trend_floor_rel: 1e-3,
        }
    }
}

/// Drives the perturbed problem down the epsilon schedule with warm starts,
/// recording norms, the Picone integral, and collapse diagnostics, then
/// re-solves at epsilon = 0 and reports the residual of the original
/// equation.
///
/// Iterates trending to zero abort the run with `CollapseDetected`; a failed
/// solve aborts with `ContinuationAborted`. Both carry the partial trace.
pub fn continuation_run(
    problem: &ProblemSpec,
    reaction: &ReactionSpec,
    e: &DiscreteField,
    schedule: &EpsilonSchedule,
    opts: &ContinuationOptions,
) -> Result<ContinuationTrace> {
    let mesh = problem.mesh();
    let eigen = principal_eigenpair(problem, &opts.eigen)?;
    let scale = eigen.u1.inf_norm();
    let collapse_floor = opts.collapse_floor_rel * scale;
    let trend_floor = opts.trend_floor_rel * scale;

    // Sampled liminf bound, reused by the final health check.
    let eta_report = check_liminf_at_zero(
        reaction,
        problem.p(),
        mesh,
        eigen.lambda1,
        1e3,
        &SampleGrid::default(),
        &CheckOptions::default(),
    )?;
    let eta_m = eta_report.sampled_bound;

    let mut u = DiscreteField::constant(mesh, 1.0);
    let mut records: Vec<TraceRecord> = Vec::with_capacity(schedule.values().len());
    let mut proxy_value: f64 = 0.0;
    let mut proxy_grad: f64 = 0.0;

    for (step, &eps) in schedule.values().iter().enumerate() {
        let aux = AuxiliaryProblem::new(problem, reaction, eps, e.clone())?;
        let sol = match solve_auxiliary(&aux, &u, &opts.solver) {
            Ok(sol) => sol,
            Err(err) => {
                return Err(Error::ContinuationAborted {
                    step,
                    epsilon: eps,
                    source: Box::new(err),
                    records,
                })
            }
        };
        u = sol.u.clone();

        let picone = if u.min() > POSITIVITY_FLOOR {
            picone_integral(problem, &eigen.u1, &u).unwrap_or(f64::NAN)
        } else {
            f64::NAN
        };

        let max_u_abs = u.inf_norm();
        let floor_hit = max_u_abs < collapse_floor;
        let trend_hit = {
            let w = opts.trend_window;
            records.len() >= w && max_u_abs < trend_floor && {
                let mut prev = records[records.len() - w].max_u.abs();
                let mut shrinking = true;
                for rec in &records[records.len() - w + 1..] {
                    let cur = rec.max_u.abs();
                    if !(cur <= opts.trend_ratio * prev) {
                        shrinking = false;
                        break;
                    }
                    prev = cur;
                }
                shrinking && max_u_abs <= opts.trend_ratio * prev
            }
        };
        let collapse_flag = floor_hit || trend_hit;

        proxy_value = proxy_value.max(sol.max_value);
        proxy_grad = proxy_grad.max(sol.max_gradient_norm);
        records.push(TraceRecord {
            step,
            epsilon: eps,
            residual_norm: sol.residual_norm,
            min_u: sol.min_value,
            max_u: sol.max_value,
            max_gradient_norm: sol.max_gradient_norm,
            picard_iters: sol.picard_iters,
            newton_iters: sol.newton_iters_total,
            picone_integral: picone,
            collapse_flag,
            proxy_max_value: proxy_value,
            proxy_max_gradient: proxy_grad,
        });

        if collapse_flag {
            return Err(Error::CollapseDetected {
                step,
                epsilon: eps,
                records,
            });
        }
    }

    // Final polish on the original problem (epsilon = 0; the shift cancels on
    // nonnegative fields, so this is the unperturbed equation).
    let aux0 = AuxiliaryProblem::new(problem, reaction, 0.0, e.clone())?;
    let final_solution = match solve_auxiliary(&aux0, &u, &opts.solver) {
        Ok(sol) => sol,
        Err(err) => {
            return Err(Error::ContinuationAborted {
                step: schedule.values().len(),
                epsilon: 0.0,
                source: Box::new(err),
                records,
            })
        }
    };
    let final_check = check_solution(problem, reaction, &final_solution.u, 0.0)?;
    proxy_value = proxy_value.max(final_solution.max_value);
    proxy_grad = proxy_grad.max(final_solution.max_gradient_norm);

    let collapse = collapse_test(problem, &eigen, &final_solution.u, &eta_m, 0.0).ok();

    Ok(ContinuationTrace {
        records,
        final_residual: final_check.residual_norm,
        final_solution,
        uniform_bound_proxy: (proxy_value, proxy_grad),
        eigen,
        collapse,
    })
}

/// Diagnostics of a candidate solution of the original problem
/// -Delta_p u = f(z, u, Du) + eps (with unit perturbation direction).
#[derive(Debug, Clone)]
pub struct SolutionCheck {
    /// Weak residual max-norm over interior nodes.
    pub interior_residual: f64,
    /// Weak residual max-norm over boundary nodes (the Robin rows).
    pub boundary_residual: f64,
    /// Max over all nodes.
    pub residual_norm: f64,
    pub min_value: f64,
    pub max_value: f64,
    pub negative_part_norm: f64,
}

/// Evaluates the weak residual of the original equation at `u` with the
/// unfrozen gradient, splitting interior and boundary rows.
pub fn check_solution(
    problem: &ProblemSpec,
    reaction: &ReactionSpec,
    u: &DiscreteField,
    epsilon: f64,
) -> Result<SolutionCheck> {
    let mesh = problem.mesh();
    let e = DiscreteField::constant(mesh, 1.0);
    let y = element_gradient(mesh, u)?;
    let r = residual_general(problem, reaction, u, &y, epsilon, &e, false)?;
    let mut interior: f64 = 0.0;
    let mut boundary: f64 = 0.0;
    for (i, v) in r.iter().enumerate() {
        if mesh.is_boundary_node(i) {
            boundary = boundary.max(v.abs());
        } else {
            interior = interior.max(v.abs());
        }
    }
    Ok(SolutionCheck {
        interior_residual: interior,
        boundary_residual: boundary,
        residual_norm: interior.max(boundary),
        min_value: u.min(),
        max_value: u.max(),
        negative_part_norm: u.negative_part_norm(),
    })
}
