//! The nonlinear Picone density R(u1, u), its integral, and the non-collapse
//! test it anchors.
//!
//! For strictly positive fields the density is pointwise nonnegative; it
//! vanishes exactly on positive multiples of u1. Evaluation happens at
//! element midpoints (1D) / barycenters (2D) with interpolated point values
//! and the exact elementwise gradients, and the density is computed in a
//! decomposed form whose two addends are each nonnegative, so the invariant
//! survives floating point at moderate field scales.

use crate::assembly::{element_gradient, DiscreteField, ProblemSpec};
use crate::eigen::EigenPair;
use crate::error::{Error, Result};
use crate::field::check_field;

/// Strict positivity floor applied to `u` before forming u1^p / u^{p-1}.
pub const POSITIVITY_FLOOR: f64 = 1e-12;

/// Health verdict of the non-collapse test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CollapseVerdict {
    Healthy,
    CollapseSuspected,
}

impl std::fmt::Display for CollapseVerdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CollapseVerdict::Healthy => write!(f, "HEALTHY"),
            CollapseVerdict::CollapseSuspected => write!(f, "COLLAPSE-SUSPECTED"),
        }
    }
}

/// Summary of one Picone evaluation.
#[derive(Debug, Clone)]
pub struct PiconeReport {
    /// Quadrature sum of the density (NaN when u is not strictly positive).
    pub integral: f64,
    /// Smallest quadrature-point density value (NaN as above).
    pub min_pointwise: f64,
    /// Number of quadrature points (one per element).
    pub points: usize,
    /// The wedge integral of (eta_M - lambda1) u1^p.
    pub xi_star: f64,
    pub collapse: CollapseVerdict,
}

/// Picone density per element quadrature point:
/// |Du1|^p - |Du|^{p-2} (Du, D(u1^p / u^{p-1})) with the chain rule expanded
/// through interpolated point values.
///
/// Requires u strictly above [`POSITIVITY_FLOOR`] at every node.
pub fn picone_density(
    spec: &ProblemSpec,
    u1: &DiscreteField,
    u: &DiscreteField,
) -> Result<Vec<f64>> {
    let mesh = spec.mesh();
    check_field(mesh, u1, "picone u1")?;
    check_field(mesh, u, "picone u")?;
    if let Some((node, &v)) = u
        .values()
        .iter()
        .enumerate()
        .find(|(_, &v)| v <= POSITIVITY_FLOOR)
    {
        return Err(Error::invalid(format!(
            "positivity required: u at node {node} is {v}, at or below the floor {POSITIVITY_FLOOR}"
        )));
    }
    let p = spec.p();
    let g1s = element_gradient(mesh, u1)?;
    let gs = element_gradient(mesh, u)?;
    let s = mesh.verts_per_element();

    let mut out = Vec::with_capacity(mesh.element_count());
    for k in 0..mesh.element_count() {
        let verts = mesh.element(k);
        // Midpoint / barycenter value of a P1 field is the vertex average.
        let mut a = 0.0;
        let mut uv = 0.0;
        for &v in verts {
            a += u1.get(v);
            uv += u.get(v);
        }
        a /= s as f64;
        uv /= s as f64;

        let t = a / uv;
        let g1 = g1s[k];
        let w = [t * gs[k][0], t * gs[k][1]];
        out.push(density_at(p, g1, w));
    }
    Ok(out)
}

/// The pointwise Young gap |g1|^p + (p-1)|w|^p - p |w|^{p-2} (w, g1), split
/// into a radial part and an angular part, each nonnegative.
fn density_at(p: f64, g1: [f64; 2], w: [f64; 2]) -> f64 {
    let a = (g1[0] * g1[0] + g1[1] * g1[1]).sqrt();
    let b = (w[0] * w[0] + w[1] * w[1]).sqrt();
    if b == 0.0 {
        return a.powf(p);
    }
    if a == 0.0 {
        return (p - 1.0) * b.powf(p);
    }
    let rho = a / b;
    let radial = b.powf(p) * (rho.powf(p) - p * rho + (p - 1.0));
    let cos = ((w[0] * g1[0] + w[1] * g1[1]) / (a * b)).clamp(-1.0, 1.0);
    let angular = p * b.powf(p - 1.0) * a * (1.0 - cos);
    radial + angular
}

/// Quadrature sum of the Picone density.
pub fn picone_integral(spec: &ProblemSpec, u1: &DiscreteField, u: &DiscreteField) -> Result<f64> {
    let density = picone_density(spec, u1, u)?;
    let mesh = spec.mesh();
    Ok(density
        .iter()
        .enumerate()
        .map(|(k, r)| mesh.element_measure(k) * r)
        .sum())
}

/// Non-collapse test: computes the wedge xi* = integral of
/// (eta_M - lambda1) u1^p and flags a vanishing iterate.
///
/// With xi* > 0 the limit of the continuation cannot be zero, so an iterate
/// under the collapse floor (1e-6 of the eigenfunction scale) contradicts the
/// hypotheses and is reported as COLLAPSE-SUSPECTED. xi* <= `epsilon_margin`
/// is a hypothesis violation.
pub fn collapse_test(
    spec: &ProblemSpec,
    eigen: &EigenPair,
    u: &DiscreteField,
    eta_m: &DiscreteField,
    epsilon_margin: f64,
) -> Result<PiconeReport> {
    let mesh = spec.mesh();
    check_field(mesh, u, "collapse u")?;
    check_field(mesh, eta_m, "collapse eta_m")?;
    if !(epsilon_margin >= 0.0) {
        return Err(Error::invalid("epsilon_margin must be nonnegative"));
    }
    let lambda1 = eigen.lambda1;
    let slack = 1e-9 * lambda1.abs().max(1.0);
    if let Some((node, &v)) = eta_m
        .values()
        .iter()
        .enumerate()
        .find(|(_, &v)| v < lambda1 - slack)
    {
        return Err(Error::HypothesisViolated(format!(
            "eta_M must dominate lambda1 = {lambda1:.12e} node-wise; node {node} has {v:.12e}"
        )));
    }

    let p = spec.p();
    let xi_star: f64 = (0..mesh.node_count())
        .map(|i| mesh.node_mass(i) * (eta_m.get(i) - lambda1) * eigen.u1.get(i).abs().powf(p))
        .sum();
    if xi_star <= epsilon_margin {
        return Err(Error::HypothesisViolated(format!(
            "xi* = {xi_star:.6e} is not above the margin {epsilon_margin:.6e}; the non-collapse wedge degenerates"
        )));
    }

    let floor = 1e-6 * eigen.u1.inf_norm();
    let collapse = if u.inf_norm() < floor {
        CollapseVerdict::CollapseSuspected
    } else {
        CollapseVerdict::Healthy
    };

    let (integral, min_pointwise, points) = if u.min() > POSITIVITY_FLOOR {
        let density = picone_density(spec, &eigen.u1, u)?;
        let min = density.iter().copied().fold(f64::INFINITY, f64::min);
        let integral = density
            .iter()
            .enumerate()
            .map(|(k, r)| mesh.element_measure(k) * r)
            .sum();
        (integral, min, density.len())
    } else {
        (f64::NAN, f64::NAN, 0)
    };

    Ok(PiconeReport {
        integral,
        min_pointwise,
        points,
        xi_star,
        collapse,
    })
}
