//! Convection reactions f(z, x, y) and numeric auditors for the growth and
//! asymptotic hypotheses they must satisfy.
//!
//! Every reaction is truncated to the positive semiaxis: the wrapper returns
//! 0 whenever x <= 0, regardless of the wrapped function. The asymptotic
//! auditors sample finite decade grids; they catch gross violations of the
//! limsup/liminf conditions but cannot decide a genuinely asymptotic
//! statement.

use crate::error::{Error, Result};
use crate::field::DiscreteField;
use crate::mesh::Mesh;

type EvalFn = dyn Fn([f64; 2], f64, [f64; 2]) -> f64 + Send + Sync;

/// A Caratheodory reaction f(z, x, y) with optional analytic x-derivative.
///
/// Evaluation is pure and reentrant; the same spec may be shared across
/// concurrent solves.
pub struct ReactionSpec {
    eval: Box<EvalFn>,
    eval_dx: Option<Box<EvalFn>>,
    /// True when f genuinely depends on z. The builtins are homogeneous in z,
    /// which lets the auditors sample a single representative node.
    z_dependent: bool,
    pub description: String,
}

impl std::fmt::Debug for ReactionSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ReactionSpec")
            .field("description", &self.description)
            .field("z_dependent", &self.z_dependent)
            .field("has_dx", &self.eval_dx.is_some())
            .finish()
    }
}

/// Parameters of the built-in two-branch nonlinearity
/// `eta x^{p-1} + x^{r-1} |y|^{p-1}` for x in [0, 1] and
/// `theta x^{p-1} + (eta - theta) x^{q-1} + x^{tau-1} |y|^{p-1}` beyond.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExampleReactionParams {
    pub eta: f64,
    pub theta: f64,
    pub q: f64,
    pub tau: f64,
    pub r: f64,
    pub p: f64,
}

impl ExampleReactionParams {
    /// Exponent ordering 1 < tau, q < p < r.
    pub fn validate_exponents(&self) -> Result<()> {
        let ExampleReactionParams { q, tau, r, p, .. } = *self;
        if !(1.0 < tau && 1.0 < q && tau < p && q < p && p < r) {
            return Err(Error::invalid(format!(
                "example reaction needs 1 < tau, q < p < r; got tau={tau}, q={q}, p={p}, r={r}"
            )));
        }
        Ok(())
    }

    /// Full admissibility against a principal eigenvalue:
    /// exponent ordering plus theta < lambda1 < eta.
    pub fn validate(&self, lambda1: f64) -> Result<()> {
        self.validate_exponents()?;
        if !(self.theta < lambda1 && lambda1 < self.eta) {
            return Err(Error::HypothesisViolated(format!(
                "example reaction needs theta < lambda1 < eta; got theta={}, lambda1={lambda1}, eta={}",
                self.theta, self.eta
            )));
        }
        Ok(())
    }
}

impl ReactionSpec {
    pub fn new(
        description: impl Into<String>,
        eval: impl Fn([f64; 2], f64, [f64; 2]) -> f64 + Send + Sync + 'static,
    ) -> ReactionSpec {
        ReactionSpec {
            eval: Box::new(eval),
            eval_dx: None,
            z_dependent: true,
            description: description.into(),
        }
    }

    pub fn with_dx(
        mut self,
        eval_dx: impl Fn([f64; 2], f64, [f64; 2]) -> f64 + Send + Sync + 'static,
    ) -> ReactionSpec {
        self.eval_dx = Some(Box::new(eval_dx));
        self
    }

    pub fn z_independent(mut self) -> ReactionSpec {
        self.z_dependent = false;
        self
    }

    pub fn is_z_dependent(&self) -> bool {
        self.z_dependent
    }

    /// The zero reaction.
    pub fn zero() -> ReactionSpec {
        ReactionSpec::new("zero", |_, _, _| 0.0)
            .with_dx(|_, _, _| 0.0)
            .z_independent()
    }

    /// The eigen-homogeneous reaction `c x^{p-1}` ("linear" at p = 2).
    pub fn power(c: f64, p: f64) -> ReactionSpec {
        ReactionSpec::new(format!("power: {c} * x^{}", p - 1.0), move |_, x, _| {
            c * x.powf(p - 1.0)
        })
        .with_dx(move |_, x, _| c * (p - 1.0) * x.powf(p - 2.0))
        .z_independent()
    }

    /// The built-in two-branch example nonlinearity.
    pub fn example(params: ExampleReactionParams) -> Result<ReactionSpec> {
        params.validate_exponents()?;
        let ExampleReactionParams {
            eta,
            theta,
            q,
            tau,
            r,
            p,
        } = params;
        let eval = move |_z: [f64; 2], x: f64, y: [f64; 2]| {
            let ym = (y[0] * y[0] + y[1] * y[1]).sqrt();
            if x <= 1.0 {
                eta * x.powf(p - 1.0) + x.powf(r - 1.0) * ym.powf(p - 1.0)
            } else {
                theta * x.powf(p - 1.0)
                    + (eta - theta) * x.powf(q - 1.0)
                    + x.powf(tau - 1.0) * ym.powf(p - 1.0)
            }
        };
        let eval_dx = move |_z: [f64; 2], x: f64, y: [f64; 2]| {
            let ym = (y[0] * y[0] + y[1] * y[1]).sqrt();
            if x <= 1.0 {
                eta * (p - 1.0) * x.powf(p - 2.0) + (r - 1.0) * x.powf(r - 2.0) * ym.powf(p - 1.0)
            } else {
                theta * (p - 1.0) * x.powf(p - 2.0)
                    + (eta - theta) * (q - 1.0) * x.powf(q - 2.0)
                    + (tau - 1.0) * x.powf(tau - 2.0) * ym.powf(p - 1.0)
            }
        };
        Ok(ReactionSpec::new(
            format!("example: eta={eta}, theta={theta}, q={q}, tau={tau}, r={r}, p={p}"),
            eval,
        )
        .with_dx(eval_dx)
        .z_independent())
    }

    /// Truncated evaluation: 0 for x <= 0, the wrapped function otherwise.
    pub fn evaluate(&self, z: [f64; 2], x: f64, y: [f64; 2]) -> Result<f64> {
        if !(x.is_finite() && y[0].is_finite() && y[1].is_finite()) {
            return Err(Error::invalid(format!(
                "reaction arguments must be finite (x={x}, y=({}, {}))",
                y[0], y[1]
            )));
        }
        if x <= 0.0 {
            return Ok(0.0);
        }
        let v = (self.eval)(z, x, y);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Evaluation {
                message: format!("reaction returned {v}"),
                z0: z[0],
                z1: z[1],
                x,
                y_mag: (y[0] * y[0] + y[1] * y[1]).sqrt(),
            })
        }
    }

    /// Shifted reaction f + (x^+)^{p-1}.
    pub fn evaluate_hat(&self, p: f64, z: [f64; 2], x: f64, y: [f64; 2]) -> Result<f64> {
        let f = self.evaluate(z, x, y)?;
        Ok(f + x.max(0.0).powf(p - 1.0))
    }

    /// Partial derivative in x of the truncated reaction; analytic when
    /// supplied, otherwise a central difference with step 1e-6 (1 + |x|).
    pub fn evaluate_dx(&self, z: [f64; 2], x: f64, y: [f64; 2]) -> Result<f64> {
        if x <= 0.0 {
            return Ok(0.0);
        }
        if let Some(dx) = &self.eval_dx {
            let v = dx(z, x, y);
            if v.is_finite() {
                return Ok(v);
            }
            return Err(Error::Evaluation {
                message: format!("reaction derivative returned {v}"),
                z0: z[0],
                z1: z[1],
                x,
                y_mag: (y[0] * y[0] + y[1] * y[1]).sqrt(),
            });
        }
        let h = 1e-6 * (1.0 + x.abs());
        let fp = self.evaluate(z, x + h, y)?;
        let fm = self.evaluate(z, x - h, y)?;
        Ok((fp - fm) / (2.0 * h))
    }
}

/// Sample grid for the hypothesis auditors: x values and gradient magnitudes,
/// both log-spaced by decades.
#[derive(Debug, Clone)]
pub struct SampleGrid {
    pub x: Vec<f64>,
    pub y_mags: Vec<f64>,
    points_per_decade: usize,
}

fn log_spaced(lo: f64, hi: f64, per_decade: usize) -> Vec<f64> {
    let decades = (hi / lo).log10();
    let n = (decades * per_decade as f64).round() as usize;
    (0..=n)
        .map(|k| lo * 10f64.powf(k as f64 / per_decade as f64))
        .collect()
}

impl Default for SampleGrid {
    /// x in [1e-6, 1e6] and |y| in {0} union [1e-3, 1e3], 8 points per decade.
    fn default() -> SampleGrid {
        let mut y = vec![0.0];
        y.extend(log_spaced(1e-3, 1e3, 8));
        SampleGrid {
            x: log_spaced(1e-6, 1e6, 8),
            y_mags: y,
            points_per_decade: 8,
        }
    }
}

impl SampleGrid {
    /// Restrict gradient magnitudes to |y| <= m (for the liminf auditor).
    pub fn with_y_max(mut self, m: f64) -> SampleGrid {
        self.y_mags.retain(|&v| v <= m);
        if self.y_mags.last().copied() != Some(m) && m > 0.0 {
            self.y_mags.push(m);
        }
        self
    }

    fn x_top_decade(&self) -> &[f64] {
        let k = self.points_per_decade.min(self.x.len());
        &self.x[self.x.len() - k..]
    }

    fn x_second_decade(&self) -> &[f64] {
        let k = self.points_per_decade;
        if self.x.len() < 2 * k {
            return &self.x;
        }
        &self.x[self.x.len() - 2 * k..self.x.len() - k]
    }

    fn x_bottom_decade(&self) -> &[f64] {
        let k = (self.points_per_decade + 1).min(self.x.len());
        &self.x[..k]
    }
}

/// Which hypothesis an audit report refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HypothesisId {
    /// (i): |f| <= a(z) [1 + x^{p-1} + |y|^{p-1}]
    GrowthBound,
    /// (ii): limsup_{x -> inf} f / x^{p-1} <= theta(z) <= lambda1, not identically
    LimsupAtInfinity,
    /// (iii): liminf_{x -> 0+} f / x^{p-1} >= eta_M(z) >= lambda1, not identically
    LiminfAtZero,
}

impl std::fmt::Display for HypothesisId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            HypothesisId::GrowthBound => write!(f, "(i)"),
            HypothesisId::LimsupAtInfinity => write!(f, "(ii)"),
            HypothesisId::LiminfAtZero => write!(f, "(iii)"),
        }
    }
}

/// The worst sample found by an auditor.
#[derive(Debug, Clone, Copy)]
pub struct HypothesisWitness {
    pub node: usize,
    pub z: [f64; 2],
    pub x: f64,
    pub y_mag: f64,
    /// The sampled ratio at the witness point.
    pub value: f64,
    /// How far past the admissible bound the ratio lies.
    pub margin: f64,
}

/// Verdict of one hypothesis audit. A failing report always carries a
/// concrete witness.
#[derive(Debug, Clone)]
pub struct HypothesisReport {
    pub hypothesis: HypothesisId,
    pub pass: bool,
    pub witness: Option<HypothesisWitness>,
    /// Estimated bound field: a(z), theta(z) or eta_M(z) at each node.
    pub sampled_bound: DiscreteField,
}

/// Tolerances for the auditors.
#[derive(Debug, Clone, Copy)]
pub struct CheckOptions {
    /// Slack allowed when comparing sampled ratios against lambda1.
    pub tol: f64,
    /// Relative strict gap standing in for the "not identically lambda1"
    /// clauses (scaled by lambda1).
    pub strict_gap_rel: f64,
    /// Absolute strict gap used when lambda1 = 0.
    pub strict_gap_abs: f64,
    /// Allowed growth of the top sampled decade over the one below it.
    pub tail_growth_tol: f64,
}

impl Default for CheckOptions {
    fn default() -> CheckOptions {
        CheckOptions {
            tol: 1e-6,
            strict_gap_rel: 1e-3,
            strict_gap_abs: 1e-6,
            tail_growth_tol: 1e-2,
        }
    }
}

impl CheckOptions {
    fn strict_gap(&self, lambda1: f64) -> f64 {
        if lambda1 > 0.0 {
            self.strict_gap_rel * lambda1
        } else {
            self.strict_gap_abs
        }
    }
}

fn sample_nodes(reaction: &ReactionSpec, mesh: &Mesh) -> Vec<usize> {
    if reaction.is_z_dependent() {
        (0..mesh.node_count()).collect()
    } else {
        vec![0]
    }
}

fn broadcast(mesh: &Mesh, nodes: &[usize], per_node: &[f64]) -> DiscreteField {
    let values = if nodes.len() == mesh.node_count() {
        per_node.to_vec()
    } else {
        vec![per_node[0]; mesh.node_count()]
    };
    DiscreteField::new(values).expect("sampled bounds are finite")
}

/// Audits the growth bound (i): the sampled sup of
/// |f| / (1 + x^{p-1} + |y|^{p-1}) per node must be finite with a stable
/// x-tail: the sup over the top sampled x-decade (across the whole gradient
/// range) must not exceed the decade below it. The x-asymptotics is the
/// decidable direction on a finite grid; the gradient range is capped by the
/// grid's y_max.
pub fn check_growth(
    reaction: &ReactionSpec,
    p: f64,
    mesh: &Mesh,
    grid: &SampleGrid,
    opts: &CheckOptions,
) -> Result<HypothesisReport> {
    let nodes = sample_nodes(reaction, mesh);
    let mut bound = vec![0.0f64; nodes.len()];

    let ratio = |z: [f64; 2], x: f64, ym: f64| -> Result<f64> {
        let f = reaction.evaluate(z, x, [ym, 0.0])?;
        Ok(f.abs() / (1.0 + x.powf(p - 1.0) + ym.powf(p - 1.0)))
    };

    // Per-decade sups for the tail-stability test, tracked with witnesses.
    let mut sup_x_top = (0.0f64, None);
    let mut sup_x_prev = (0.0f64, None);
    let x_top = grid.x_top_decade().to_vec();
    let x_prev = grid.x_second_decade().to_vec();

    for (ni, &node) in nodes.iter().enumerate() {
        let z = mesh.node(node);
        for &x in &grid.x {
            for &ym in &grid.y_mags {
                let r = ratio(z, x, ym)?;
                if r > bound[ni] {
                    bound[ni] = r;
                }
                let w = HypothesisWitness {
                    node,
                    z,
                    x,
                    y_mag: ym,
                    value: r,
                    margin: 0.0,
                };
                if x_top.contains(&x) && r > sup_x_top.0 {
                    sup_x_top = (r, Some(w));
                }
                if x_prev.contains(&x) && r > sup_x_prev.0 {
                    sup_x_prev = (r, Some(w));
                }
            }
        }
    }

    let x_grows = sup_x_top.0 > sup_x_prev.0 * (1.0 + opts.tail_growth_tol);
    let witness = if x_grows {
        sup_x_top.1.map(|mut w| {
            w.margin = sup_x_top.0 / sup_x_prev.0.max(f64::MIN_POSITIVE) - 1.0;
            w
        })
    } else {
        None
    };

    Ok(HypothesisReport {
        hypothesis: HypothesisId::GrowthBound,
        pass: !x_grows,
        witness,
        sampled_bound: broadcast(mesh, &nodes, &bound),
    })
}

/// Audits (ii): the sampled tail ratio max_y f / x^{p-1} over the largest
/// x-decade must stay below lambda1 everywhere and strictly below somewhere.
pub fn check_limsup_at_infinity(
    reaction: &ReactionSpec,
    p: f64,
    mesh: &Mesh,
    lambda1: f64,
    grid: &SampleGrid,
    opts: &CheckOptions,
) -> Result<HypothesisReport> {
    let nodes = sample_nodes(reaction, mesh);
    let mut theta_hat = vec![f64::NEG_INFINITY; nodes.len()];
    let mut worst: Option<HypothesisWitness> = None;

    for (ni, &node) in nodes.iter().enumerate() {
        let z = mesh.node(node);
        for &x in grid.x_top_decade() {
            for &ym in &grid.y_mags {
                let f = reaction.evaluate(z, x, [ym, 0.0])?;
                let r = f / x.powf(p - 1.0);
                if r > theta_hat[ni] {
                    theta_hat[ni] = r;
                }
                if worst.map(|w| r > w.value).unwrap_or(true) {
                    worst = Some(HypothesisWitness {
                        node,
                        z,
                        x,
                        y_mag: ym,
                        value: r,
                        margin: r - lambda1,
                    });
                }
            }
        }
    }

    let gap = opts.strict_gap(lambda1);
    let all_below = theta_hat.iter().all(|&t| t <= lambda1 + opts.tol);
    let strict_somewhere = theta_hat.iter().any(|&t| t <= lambda1 - gap);
    let pass = all_below && strict_somewhere;

    Ok(HypothesisReport {
        hypothesis: HypothesisId::LimsupAtInfinity,
        pass,
        witness: if pass { None } else { worst },
        sampled_bound: broadcast(mesh, &nodes, &theta_hat),
    })
}

/// Audits (iii): the sampled ratio min_{|y| <= M} f / x^{p-1} over the
/// smallest x-decade must stay above lambda1 everywhere and strictly above
/// somewhere.
pub fn check_liminf_at_zero(
    reaction: &ReactionSpec,
    p: f64,
    mesh: &Mesh,
    lambda1: f64,
    m_bound: f64,
    grid: &SampleGrid,
    opts: &CheckOptions,
) -> Result<HypothesisReport> {
    let nodes = sample_nodes(reaction, mesh);
    let y_mags: Vec<f64> = {
        let mut v: Vec<f64> = grid
            .y_mags
            .iter()
            .copied()
            .filter(|&m| m <= m_bound)
            .collect();
        if v.is_empty() {
            v.push(0.0);
        }
        v
    };
    let mut eta_hat = vec![f64::INFINITY; nodes.len()];
    let mut worst: Option<HypothesisWitness> = None;

    for (ni, &node) in nodes.iter().enumerate() {
        let z = mesh.node(node);
        for &x in grid.x_bottom_decade() {
            for &ym in &y_mags {
                let f = reaction.evaluate(z, x, [ym, 0.0])?;
                let r = f / x.powf(p - 1.0);
                if r < eta_hat[ni] {
                    eta_hat[ni] = r;
                }
                if worst.map(|w| r < w.value).unwrap_or(true) {
                    worst = Some(HypothesisWitness {
                        node,
                        z,
                        x,
                        y_mag: ym,
                        value: r,
                        margin: lambda1 - r,
                    });
                }
            }
        }
    }

    let gap = opts.strict_gap(lambda1);
    let all_above = eta_hat.iter().all(|&t| t >= lambda1 - opts.tol);
    let strict_somewhere = eta_hat.iter().any(|&t| t >= lambda1 + gap);
    let pass = all_above && strict_somewhere;

    Ok(HypothesisReport {
        hypothesis: HypothesisId::LiminfAtZero,
        pass,
        witness: if pass { None } else { worst },
        sampled_bound: broadcast(mesh, &nodes, &eta_hat),
    })
}
