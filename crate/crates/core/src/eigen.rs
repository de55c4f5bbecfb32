//! Principal Robin eigenpairs by constrained Rayleigh-quotient minimization,
//! and the coercivity margin of the weighted quotient.
//!
//! The minimizer is projected gradient descent with Armijo backtracking. The
//! descent direction is the gradient taken in the discrete Sobolev inner
//! product (stiffness + mass), i.e. the Riesz representative of the quotient
//! derivative; the raw Euclidean gradient direction is also available but its
//! conditioning degrades like h^-2 under refinement. Both quotients are
//! scale-invariant, so the L^p renormalization after each step does not
//! change the line-search objective.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::assembly::{
    a_form, a_vector, lp_norm, p2_stiffness, robin_form, robin_vector, signed_power, sobolev_norm,
    DiscreteField, ProblemSpec,
};
use crate::error::{Error, Result};
use crate::field::check_field;
use crate::sparse::{solve_with, BandedLu, CsrMatrix};

/// Which inner product supplies the descent direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradientMetric {
    /// Riesz map of the discrete H^1 inner product (default).
    #[default]
    Sobolev,
    /// Raw nodal gradient.
    Euclidean,
}

#[derive(Debug, Clone)]
pub struct EigenOptions {
    /// Max-norm tolerance on the strong eigen-residual. Defaults to 1e-8 for
    /// p = 2 and 1e-6 otherwise (quotients flatten near the minimizer for
    /// p != 2).
    pub tol: Option<f64>,
    pub max_iter: usize,
    pub metric: GradientMetric,
    /// Initial guess; the constant field when absent. Any positive rescaling
    /// of a start leads to the same minimizer (the first step normalizes).
    pub start: Option<DiscreteField>,
}

impl Default for EigenOptions {
    fn default() -> EigenOptions {
        EigenOptions {
            tol: None,
            max_iter: 100_000,
            metric: GradientMetric::Sobolev,
            start: None,
        }
    }
}

impl EigenOptions {
    pub fn resolved_tol(&self, p: f64) -> f64 {
        self.tol.unwrap_or(if p == 2.0 { 1e-8 } else { 1e-6 })
    }
}

/// The principal eigenpair: lambda1 >= 0 and its positive, L^p-normalized
/// eigenfunction.
#[derive(Debug, Clone)]
pub struct EigenPair {
    pub lambda1: f64,
    pub u1: DiscreteField,
    /// Max-norm of the strong (mass-scaled) eigen-residual at return.
    pub residual_norm: f64,
    pub iterations: usize,
}

/// Result of minimizing the coercivity quotient
/// (||Du||_p^p + boundary - integral theta |u|^p) / ||u||^p over the unit
/// Sobolev sphere.
#[derive(Debug, Clone)]
pub struct CoercivityEstimate {
    pub theta: DiscreteField,
    pub c0: f64,
    pub minimizer: DiscreteField,
}

#[derive(Debug, Clone)]
pub struct CoercivityOptions {
    pub starts: usize,
    pub seed: u64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for CoercivityOptions {
    fn default() -> CoercivityOptions {
        CoercivityOptions {
            starts: 8,
            seed: 42,
            tol: 1e-8,
            max_iter: 20_000,
        }
    }
}

/// The Rayleigh quotient (||Du||_p^p + boundary term) / ||u||_p^p.
pub fn rayleigh_quotient(spec: &ProblemSpec, u: &DiscreteField) -> Result<f64> {
    check_field(spec.mesh(), u, "rayleigh_quotient")?;
    let denom = lp_norm(spec.mesh(), u, spec.p())?.powf(spec.p());
    if denom == 0.0 {
        return Err(Error::invalid("rayleigh quotient of the zero field"));
    }
    let num = a_form(spec, u, u)? + robin_form(spec, u, u)?;
    Ok(num / denom)
}

struct QuotientState {
    value: f64,
    /// Weak residual: the quotient's gradient is p * residual / denominator.
    residual: Vec<f64>,
    /// Strong residual max-norm (weak residual scaled by lumped masses).
    strong_norm: f64,
}

/// Riesz-map operator: discrete H^1 inner product plus the (p = 2) Robin
/// boundary form, an equivalent inner product that keeps the preconditioned
/// spectrum well separated uniformly in beta.
fn sobolev_operator(spec: &ProblemSpec) -> CsrMatrix {
    let mesh = spec.mesh();
    let mut h = p2_stiffness(mesh);
    for i in 0..mesh.node_count() {
        h.add(i, i, mesh.node_mass(i));
    }
    for &i in mesh.boundary_nodes() {
        h.add(i, i, mesh.boundary_weight(i) * spec.beta(i));
    }
    h
}

/// Shared minimization loop for scale-invariant quotients on a normalization
/// sphere. `state` evaluates the quotient and its weak residual at a
/// normalized iterate; `normalize` rescales a field onto the sphere.
fn minimize_quotient(
    spec: &ProblemSpec,
    start: DiscreteField,
    opts_tol: f64,
    max_iter: usize,
    metric: GradientMetric,
    normalize: &dyn Fn(&DiscreteField) -> Result<DiscreteField>,
    state: &dyn Fn(&DiscreteField) -> Result<QuotientState>,
) -> Result<(DiscreteField, QuotientState, usize, bool)> {
    let (h, lu) = match metric {
        GradientMetric::Sobolev => {
            let h = sobolev_operator(spec);
            let lu = BandedLu::factor(&h)?;
            (Some(h), Some(lu))
        }
        GradientMetric::Euclidean => (None, None),
    };

    let mut u = normalize(&start)?;
    let mut st = state(&u)?;
    let mut best_u = u.clone();
    let mut best_st = QuotientState {
        value: st.value,
        residual: st.residual.clone(),
        strong_norm: st.strong_norm,
    };
    // Natural step in the Riesz metric. For p = 2 the preconditioned
    // curvature lies in (0, 1), so the unit step is optimal and larger steps
    // ring on the stiffest modes (they still pass a value-only Armijo test
    // while barely decaying); the quotient curvature carries a p - 1 factor
    // in general.
    let t0 = (1.0 / (spec.p() - 1.0)).min(2.0);

    for iter in 0..max_iter {
        if st.strong_norm <= opts_tol {
            return Ok((u, st, iter, true));
        }
        let d: Vec<f64> = match (&h, &lu) {
            (Some(h), Some(lu)) => solve_with(lu, h, &st.residual)?,
            _ => st.residual.clone(),
        };
        let slope: f64 = st
            .residual
            .iter()
            .zip(&d)
            .map(|(r, di)| r * di)
            .sum::<f64>()
            * spec.p();
        if !(slope > 0.0) {
            break; // descent direction lost to rounding; return best seen
        }

        let d = match DiscreteField::new(d) {
            Ok(d) => d,
            Err(_) => break, // non-finite direction; return best seen
        };
        let mut t = t0;
        let mut accepted = None;
        // Quotient decreases become unrepresentable once the error is at the
        // square root of machine precision, long before the residual target;
        // past that point accept steps that contract the residual instead.
        let noise = 4.0 * f64::EPSILON * st.value.abs().max(1.0);
        for _ in 0..60 {
            let cand = u.axpy(-t, &d);
            if let Ok(cand) = normalize(&cand) {
                if let Ok(cand_st) = state(&cand) {
                    let pred = 1e-4 * t * slope;
                    let armijo = cand_st.value <= st.value - pred;
                    let value_flat = pred <= noise;
                    let residual_contracts = value_flat
                        && cand_st.value <= st.value + 1e3 * noise
                        && cand_st.strong_norm <= (1.0 - 1e-4 * t.min(1.0)) * st.strong_norm;
                    if armijo || residual_contracts {
                        accepted = Some((cand, cand_st));
                        break;
                    }
                }
            }
            t *= 0.5;
        }
        log::trace!(
            "quotient iter {iter}: value {:.16e} strong {:.3e} t {:.3e} accepted {}",
            st.value,
            st.strong_norm,
            t,
            accepted.is_some()
        );
        match accepted {
            Some((cand, cand_st)) => {
                u = cand;
                st = cand_st;
                if st.strong_norm < best_st.strong_norm {
                    best_u = u.clone();
                    best_st = QuotientState {
                        value: st.value,
                        residual: st.residual.clone(),
                        strong_norm: st.strong_norm,
                    };
                }
            }
            None => break, // line search stalled
        }
    }
    if st.strong_norm <= opts_tol {
        return Ok((u, st, max_iter, true));
    }
    Ok((best_u, best_st, max_iter, false))
}

/// Minimizes the Rayleigh quotient from the constant start, returning the
/// normalized positive eigenfunction and its eigenvalue.
///
/// Positivity is not enforced during iteration; a sign-changing field at
/// convergence is reported as an error since the first eigenfunction is
/// one-signed.
pub fn principal_eigenpair(spec: &ProblemSpec, opts: &EigenOptions) -> Result<EigenPair> {
    let mesh = spec.mesh();
    let p = spec.p();
    let tol = opts.resolved_tol(p);

    let normalize = |u: &DiscreteField| -> Result<DiscreteField> {
        let n = lp_norm(mesh, u, p)?;
        if n == 0.0 || !n.is_finite() {
            return Err(Error::invalid("cannot normalize the zero field"));
        }
        Ok(u.scale(1.0 / n))
    };
    // At unit L^p norm the quotient is the plain pairing and the weak
    // residual is A(u) + boundary - lambda psi_p(u).
    let state = |u: &DiscreteField| -> Result<QuotientState> {
        let mut av = a_vector(spec, u)?;
        let rv = robin_vector(spec, u);
        for (a, r) in av.iter_mut().zip(&rv) {
            *a += r;
        }
        let lambda: f64 = av.iter().zip(u.values()).map(|(a, ui)| a * ui).sum();
        let mut strong = 0.0f64;
        let residual: Vec<f64> = (0..u.len())
            .map(|i| {
                let r = av[i] - lambda * mesh.node_mass(i) * signed_power(u.get(i), p);
                strong = strong.max((r / mesh.node_mass(i)).abs());
                r
            })
            .collect();
        Ok(QuotientState {
            value: lambda,
            residual,
            strong_norm: strong,
        })
    };

    let start = match &opts.start {
        Some(s) => {
            check_field(mesh, s, "eigen start")?;
            s.clone()
        }
        None => DiscreteField::constant(mesh, 1.0),
    };
    let (u, st, iterations, converged) = minimize_quotient(
        spec,
        start,
        tol,
        opts.max_iter,
        opts.metric,
        &normalize,
        &state,
    )?;

    // Sign-normalize: the minimizer is determined up to sign.
    let mean: f64 = u
        .values()
        .iter()
        .enumerate()
        .map(|(i, v)| mesh.node_mass(i) * v)
        .sum();
    let u = if mean < 0.0 { u.scale(-1.0) } else { u };

    let pair = EigenPair {
        lambda1: st.value.max(0.0),
        u1: u,
        residual_norm: st.strong_norm,
        iterations,
    };
    if !converged {
        return Err(Error::EigenMaxIterations {
            max_iter: opts.max_iter,
            residual_norm: pair.residual_norm,
            best: Box::new(pair),
        });
    }
    if pair.u1.min() <= 0.0 {
        let (node, &min_value) = pair
            .u1
            .values()
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("nonempty field");
        return Err(Error::DegenerateEigenfunction { node, min_value });
    }
    Ok(pair)
}

/// Estimates the best constant c0 with
/// form(u) >= c0 ||u||^p on the discrete Sobolev sphere, where
/// form(u) = ||Du||_p^p + boundary term - integral theta |u|^p.
///
/// Requires theta <= lambda1 node-wise and theta not identically lambda1
/// (checked against a freshly computed eigenvalue). Multi-start projected
/// gradient descent; the returned minimizer attains c0.
pub fn coercivity_margin(
    spec: &ProblemSpec,
    theta: &DiscreteField,
    opts: &CoercivityOptions,
) -> Result<CoercivityEstimate> {
    let mesh = spec.mesh();
    let p = spec.p();
    check_field(mesh, theta, "coercivity theta")?;

    let eigen = principal_eigenpair(spec, &EigenOptions::default())?;
    let lambda1 = eigen.lambda1;
    let slack = 1e-9 * lambda1.abs().max(1.0);
    let offenders: Vec<usize> = (0..theta.len())
        .filter(|&i| theta.get(i) > lambda1 + slack)
        .collect();
    if !offenders.is_empty() {
        return Err(Error::HypothesisViolated(format!(
            "theta exceeds lambda1 = {lambda1:.12e} at {} node(s), first offenders {:?}",
            offenders.len(),
            &offenders[..offenders.len().min(5)]
        )));
    }
    let max_gap = (0..theta.len())
        .map(|i| lambda1 - theta.get(i))
        .fold(f64::NEG_INFINITY, f64::max);
    if max_gap <= 1e-10 * lambda1.abs().max(1.0) {
        return Err(Error::HypothesisViolated(
            "theta is identically lambda1 within tolerance; the margin degenerates".into(),
        ));
    }

    let normalize = |u: &DiscreteField| -> Result<DiscreteField> {
        let n = sobolev_norm(mesh, u, p)?;
        if n == 0.0 || !n.is_finite() {
            return Err(Error::invalid("cannot normalize the zero field"));
        }
        Ok(u.scale(1.0 / n))
    };
    // On the unit Sobolev sphere the quotient is form(u) itself; its weak
    // residual is (numerator gradient) - value * (denominator gradient),
    // both divided by p.
    let state = |u: &DiscreteField| -> Result<QuotientState> {
        let apure = a_vector(spec, u)?;
        let rv = robin_vector(spec, u);
        let value: f64 = (0..u.len())
            .map(|i| {
                (apure[i] + rv[i] - theta.get(i) * mesh.node_mass(i) * signed_power(u.get(i), p))
                    * u.get(i)
            })
            .sum();
        let mut strong = 0.0f64;
        let residual: Vec<f64> = (0..u.len())
            .map(|i| {
                let psi = mesh.node_mass(i) * signed_power(u.get(i), p);
                let num_grad = apure[i] + rv[i] - theta.get(i) * psi;
                let den_grad = psi + apure[i];
                let r = num_grad - value * den_grad;
                strong = strong.max((r / mesh.node_mass(i)).abs());
                r
            })
            .collect();
        Ok(QuotientState {
            value,
            residual,
            strong_norm: strong,
        })
    };

    let mut starts: Vec<DiscreteField> = vec![DiscreteField::constant(mesh, 1.0), eigen.u1.clone()];
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    while starts.len() < opts.starts.max(2) {
        let values: Vec<f64> = (0..mesh.node_count())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        starts.push(DiscreteField::new(values).unwrap());
    }

    let mut best: Option<(f64, DiscreteField)> = None;
    for start in starts {
        let outcome = minimize_quotient(
            spec,
            start,
            opts.tol,
            opts.max_iter,
            GradientMetric::Sobolev,
            &normalize,
            &state,
        );
        if let Ok((u, st, _, converged)) = outcome {
            if converged && best.as_ref().map(|(v, _)| st.value < *v).unwrap_or(true) {
                best = Some((st.value, u));
            }
        }
    }
    let (c0, minimizer) = best.ok_or_else(|| {
        Error::invalid("coercivity minimization failed to converge from any start")
    })?;
    if c0 <= 0.0 {
        return Err(Error::MarginNonpositive { c0 });
    }
    Ok(CoercivityEstimate {
        theta: theta.clone(),
        c0,
        minimizer,
    })
}
