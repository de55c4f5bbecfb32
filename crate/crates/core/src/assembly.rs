//! Discrete weak forms on P1 fields: the p-Laplacian operator, the Robin
//! boundary form, the power map, norms, and the residual/Jacobian of the
//! perturbed operator driving the auxiliary solves.
//!
//! Gradients of P1 fields are exact per element, so the p-Laplacian form is
//! assembled in closed form element by element. Zero-order terms (power map,
//! reaction, perturbation load, boundary) use the vertex rule; that choice
//! makes the power-map shift cancel the added (x^+)^{p-1} term node-for-node
//! on nonnegative fields, and the combined term reduces to -(u^-)^{p-1}.
//! Assembly order is element-index ascending with serial reduction, so
//! results are bitwise reproducible.

use std::sync::atomic::{AtomicBool, Ordering};

use crate::error::{Error, Result};
use crate::field::check_field;
pub use crate::field::DiscreteField;
use crate::mesh::Mesh;
use crate::reaction::ReactionSpec;
use crate::sparse::CsrMatrix;

/// The left side of the problem: exponent, mesh, boundary coefficient, and
/// the flux regularization length used by degenerate Jacobians.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    p: f64,
    mesh: Mesh,
    beta: Vec<f64>,
    delta: f64,
}

impl ProblemSpec {
    /// Constant boundary coefficient. The flux regularization defaults to
    /// 1e-8 for p < 2 and 0 otherwise.
    pub fn new(mesh: Mesh, p: f64, beta: f64) -> Result<ProblemSpec> {
        let beta_field = vec![beta; mesh.node_count()];
        ProblemSpec::with_beta_values(mesh, p, beta_field)
    }

    /// Nodal boundary coefficient (values at interior nodes are ignored).
    pub fn with_beta_field(mesh: Mesh, p: f64, beta: &DiscreteField) -> Result<ProblemSpec> {
        check_field(&mesh, beta, "beta")?;
        ProblemSpec::with_beta_values(mesh, p, beta.values().to_vec())
    }

    fn with_beta_values(mesh: Mesh, p: f64, beta: Vec<f64>) -> Result<ProblemSpec> {
        if !p.is_finite() || p <= 1.0 {
            return Err(Error::invalid(format!("exponent p must exceed 1, got {p}")));
        }
        for &i in mesh.boundary_nodes() {
            if !(beta[i] >= 0.0) {
                return Err(Error::invalid(format!(
                    "beta must be nonnegative on the boundary; node {i} has beta = {}",
                    beta[i]
                )));
            }
        }
        let delta = if p < 2.0 { 1e-8 } else { 0.0 };
        Ok(ProblemSpec {
            p,
            mesh,
            beta,
            delta,
        })
    }

    pub fn with_flux_regularization(mut self, delta: f64) -> Result<ProblemSpec> {
        if !(delta >= 0.0) {
            return Err(Error::invalid(format!(
                "flux regularization must be nonnegative, got {delta}"
            )));
        }
        self.delta = delta;
        Ok(self)
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn beta(&self, node: usize) -> f64 {
        self.beta[node]
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }
}

/// The perturbed problem for one epsilon: the base problem, the reaction,
/// and the strictly positive perturbation direction e.
#[derive(Debug)]
pub struct AuxiliaryProblem<'a> {
    pub problem: &'a ProblemSpec,
    pub reaction: &'a ReactionSpec,
    pub epsilon: f64,
    pub e: DiscreteField,
}

impl<'a> AuxiliaryProblem<'a> {
    pub fn new(
        problem: &'a ProblemSpec,
        reaction: &'a ReactionSpec,
        epsilon: f64,
        e: DiscreteField,
    ) -> Result<AuxiliaryProblem<'a>> {
        if !(epsilon >= 0.0) {
            return Err(Error::invalid(format!(
                "epsilon must be nonnegative, got {epsilon}"
            )));
        }
        check_field(problem.mesh(), &e, "e")?;
        if e.min() <= 0.0 {
            return Err(Error::invalid(format!(
                "perturbation direction e must be strictly positive (min = {})",
                e.min()
            )));
        }
        Ok(AuxiliaryProblem {
            problem,
            reaction,
            epsilon,
            e,
        })
    }
}

/// |x|^{p-2} x, with the value 0 at x = 0 for every p > 1.
pub(crate) fn signed_power(x: f64, p: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x.signum() * x.abs().powf(p - 1.0)
    }
}

/// The flux factor |g|^{p-2} given the squared gradient magnitude. Uses the
/// raw magnitude for p >= 2 with delta = 0 (convention 0^{p-2} * 0 = 0) and
/// the regularized magnitude (g^2 + delta^2)^{(p-2)/2} otherwise.
pub(crate) fn flux_weight(p: f64, delta: f64, g2: f64) -> f64 {
    let m2 = g2 + delta * delta;
    if m2 == 0.0 {
        if p == 2.0 {
            1.0
        } else {
            0.0
        }
    } else {
        m2.powf((p - 2.0) / 2.0)
    }
}

/// Flux factor plus the rank-one coefficient of its derivative:
/// d/dg [w(g) g] = w I + w' g g^T with w' = (p-2) (g^2 + delta^2)^{(p-4)/2}.
pub(crate) fn flux_weights(p: f64, delta: f64, g2: f64) -> (f64, f64) {
    let m2 = g2 + delta * delta;
    if m2 == 0.0 {
        if p == 2.0 {
            (1.0, 0.0)
        } else {
            (0.0, 0.0)
        }
    } else {
        (
            m2.powf((p - 2.0) / 2.0),
            (p - 2.0) * m2.powf((p - 4.0) / 2.0),
        )
    }
}

fn dot2(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// Exact gradient of the piecewise-linear interpolant, one vector per element.
pub fn element_gradient(mesh: &Mesh, u: &DiscreteField) -> Result<Vec<[f64; 2]>> {
    check_field(mesh, u, "element_gradient")?;
    let s = mesh.verts_per_element();
    let mut grads = Vec::with_capacity(mesh.element_count());
    for k in 0..mesh.element_count() {
        let verts = mesh.element(k);
        let basis = mesh.basis_gradients(k);
        let mut g = [0.0; 2];
        for v in 0..s {
            let uv = u.get(verts[v]);
            g[0] += uv * basis[v][0];
            g[1] += uv * basis[v][1];
        }
        grads.push(g);
    }
    Ok(grads)
}

/// The p-Laplacian pairing: integral of |Du|^{p-2} (Du, Dh) over the domain.
pub fn a_form(spec: &ProblemSpec, u: &DiscreteField, h: &DiscreteField) -> Result<f64> {
    let mesh = spec.mesh();
    check_field(mesh, u, "a_form u")?;
    check_field(mesh, h, "a_form h")?;
    let gu = element_gradient(mesh, u)?;
    let gh = element_gradient(mesh, h)?;
    let mut acc = 0.0;
    for k in 0..mesh.element_count() {
        let g2 = dot2(gu[k], gu[k]);
        let w = flux_weight(spec.p(), spec.delta(), g2);
        if w != 0.0 {
            acc += mesh.element_measure(k) * w * dot2(gu[k], gh[k]);
        }
    }
    Ok(acc)
}

/// The Robin boundary pairing: integral of beta |u|^{p-2} u h over the
/// boundary (vertex quadrature on facets; point evaluation in 1D).
pub fn robin_form(spec: &ProblemSpec, u: &DiscreteField, h: &DiscreteField) -> Result<f64> {
    let mesh = spec.mesh();
    check_field(mesh, u, "robin_form u")?;
    check_field(mesh, h, "robin_form h")?;
    let mut acc = 0.0;
    for &i in mesh.boundary_nodes() {
        acc += mesh.boundary_weight(i) * spec.beta(i) * signed_power(u.get(i), spec.p()) * h.get(i);
    }
    Ok(acc)
}

/// The power-map pairing: integral of |u|^{p-2} u h (vertex rule).
pub fn psi_p_form(spec: &ProblemSpec, u: &DiscreteField, h: &DiscreteField) -> Result<f64> {
    let mesh = spec.mesh();
    check_field(mesh, u, "psi_p_form u")?;
    check_field(mesh, h, "psi_p_form h")?;
    let p = spec.p();
    let mut acc = 0.0;
    for i in 0..mesh.node_count() {
        acc += mesh.node_mass(i) * signed_power(u.get(i), p) * h.get(i);
    }
    Ok(acc)
}

/// L^p norm of a field by the vertex rule.
pub fn lp_norm(mesh: &Mesh, u: &DiscreteField, p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::invalid(format!("lp_norm needs p >= 1, got {p}")));
    }
    check_field(mesh, u, "lp_norm")?;
    let mut acc = 0.0;
    for i in 0..mesh.node_count() {
        acc += mesh.node_mass(i) * u.get(i).abs().powf(p);
    }
    Ok(acc.powf(1.0 / p))
}

/// L^p norm of the gradient (exact per element).
pub fn gradient_lp_norm(mesh: &Mesh, u: &DiscreteField, p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::invalid(format!(
            "gradient_lp_norm needs p >= 1, got {p}"
        )));
    }
    let grads = element_gradient(mesh, u)?;
    let mut acc = 0.0;
    for (k, g) in grads.iter().enumerate() {
        acc += mesh.element_measure(k) * dot2(*g, *g).powf(p / 2.0);
    }
    Ok(acc.powf(1.0 / p))
}

/// The Sobolev norm (||u||_p^p + ||Du||_p^p)^{1/p}.
pub fn sobolev_norm(mesh: &Mesh, u: &DiscreteField, p: f64) -> Result<f64> {
    let lp = lp_norm(mesh, u, p)?;
    let gp = gradient_lp_norm(mesh, u, p)?;
    Ok((lp.powf(p) + gp.powf(p)).powf(1.0 / p))
}

/// Weak p-Laplacian applied to u: component i is the pairing of A(u) with the
/// nodal basis function phi_i.
pub(crate) fn a_vector(spec: &ProblemSpec, u: &DiscreteField) -> Result<Vec<f64>> {
    let mesh = spec.mesh();
    check_field(mesh, u, "a_vector")?;
    let grads = element_gradient(mesh, u)?;
    let s = mesh.verts_per_element();
    let mut r = vec![0.0; mesh.node_count()];
    for k in 0..mesh.element_count() {
        let g = grads[k];
        let w = flux_weight(spec.p(), spec.delta(), dot2(g, g));
        if w == 0.0 {
            continue;
        }
        let measure = mesh.element_measure(k);
        let verts = mesh.element(k);
        let basis = mesh.basis_gradients(k);
        for v in 0..s {
            r[verts[v]] += measure * w * dot2(g, basis[v]);
        }
    }
    Ok(r)
}

/// Weak Robin boundary term: component i pairs beta |u|^{p-2} u with phi_i
/// on the boundary.
pub(crate) fn robin_vector(spec: &ProblemSpec, u: &DiscreteField) -> Vec<f64> {
    let mesh = spec.mesh();
    let mut r = vec![0.0; mesh.node_count()];
    for &i in mesh.boundary_nodes() {
        r[i] = mesh.boundary_weight(i) * spec.beta(i) * signed_power(u.get(i), spec.p());
    }
    r
}

/// Stiffness matrix at p = 2 (no boundary term); the elliptic part of the
/// discrete Sobolev inner product.
pub(crate) fn p2_stiffness(mesh: &Mesh) -> CsrMatrix {
    let mut a = CsrMatrix::from_mesh(mesh);
    let s = mesh.verts_per_element();
    for k in 0..mesh.element_count() {
        let measure = mesh.element_measure(k);
        let verts = mesh.element(k);
        let basis = mesh.basis_gradients(k);
        for vi in 0..s {
            for vj in 0..s {
                a.add(verts[vi], verts[vj], measure * dot2(basis[vi], basis[vj]));
            }
        }
    }
    a
}

/// Shared residual assembly. With `include_negative_part` this is the
/// perturbed operator (the power map and the reaction shift combined into
/// -(u^-)^{p-1}); without it, the residual of the unshifted problem
/// -Delta_p u = f + eps e. The reaction is evaluated at nodal (z, u) with the
/// element's frozen gradient, under the vertex rule.
pub(crate) fn residual_general(
    problem: &ProblemSpec,
    reaction: &ReactionSpec,
    u: &DiscreteField,
    frozen_y: &[[f64; 2]],
    epsilon: f64,
    e: &DiscreteField,
    include_negative_part: bool,
) -> Result<Vec<f64>> {
    let mesh = problem.mesh();
    check_field(mesh, u, "residual u")?;
    check_field(mesh, e, "residual e")?;
    if frozen_y.len() != mesh.element_count() {
        return Err(Error::invalid(format!(
            "frozen gradient has {} entries but mesh has {} elements",
            frozen_y.len(),
            mesh.element_count()
        )));
    }
    let p = problem.p();
    let s = mesh.verts_per_element();
    let mut r = vec![0.0; mesh.node_count()];

    for k in 0..mesh.element_count() {
        let verts = mesh.element(k);
        let basis = mesh.basis_gradients(k);
        let measure = mesh.element_measure(k);

        // p-Laplacian flux against the true current gradient.
        let mut g = [0.0; 2];
        for v in 0..s {
            let uv = u.get(verts[v]);
            g[0] += uv * basis[v][0];
            g[1] += uv * basis[v][1];
        }
        let w = flux_weight(p, problem.delta(), dot2(g, g));

        // Zero-order terms by the vertex rule, reaction frozen at y_k.
        let share = measure / s as f64;
        let y = frozen_y[k];
        for v in 0..s {
            let node = verts[v];
            let x = u.get(node);
            let mut acc = 0.0;
            if w != 0.0 {
                acc += measure * w * dot2(g, basis[v]);
            }
            let f = reaction.evaluate(mesh.node(node), x, y)?;
            let mut zero_order = -f - epsilon * e.get(node);
            if include_negative_part && x < 0.0 {
                zero_order -= (-x).powf(p - 1.0);
            }
            acc += share * zero_order;
            r[node] += acc;
        }
    }

    for &i in mesh.boundary_nodes() {
        r[i] += mesh.boundary_weight(i) * problem.beta(i) * signed_power(u.get(i), p);
    }
    Ok(r)
}

/// Residual of the perturbed operator at `u` with the convection argument
/// frozen at `frozen_y` (one gradient per element). Passing
/// `frozen_y = element_gradient(u)` gives the true residual.
pub fn v_residual(
    aux: &AuxiliaryProblem,
    u: &DiscreteField,
    frozen_y: &[[f64; 2]],
) -> Result<Vec<f64>> {
    residual_general(
        aux.problem,
        aux.reaction,
        u,
        frozen_y,
        aux.epsilon,
        &aux.e,
        true,
    )
}

static DEGENERATE_WARNED: AtomicBool = AtomicBool::new(false);

/// Derivative of [`v_residual`] with respect to the nodal values of `u` at
/// fixed frozen gradient. The p-Laplacian block uses the regularized flux
/// magnitude; all zero-order contributions are diagonal, so the sparsity
/// pattern is exactly the mesh node adjacency.
pub fn v_jacobian(
    aux: &AuxiliaryProblem,
    u: &DiscreteField,
    frozen_y: &[[f64; 2]],
) -> Result<CsrMatrix> {
    let problem = aux.problem;
    let mesh = problem.mesh();
    check_field(mesh, u, "jacobian u")?;
    if frozen_y.len() != mesh.element_count() {
        return Err(Error::invalid(format!(
            "frozen gradient has {} entries but mesh has {} elements",
            frozen_y.len(),
            mesh.element_count()
        )));
    }
    let p = problem.p();
    if p < 2.0 && problem.delta() == 0.0 && !DEGENERATE_WARNED.swap(true, Ordering::Relaxed) {
        log::warn!(
            "p = {p} < 2 with zero flux regularization: the Jacobian is singular wherever Du = 0"
        );
    }

    let s = mesh.verts_per_element();
    let mut jac = CsrMatrix::from_mesh(mesh);

    for k in 0..mesh.element_count() {
        let verts = mesh.element(k);
        let basis = mesh.basis_gradients(k);
        let measure = mesh.element_measure(k);
        let mut g = [0.0; 2];
        for v in 0..s {
            let uv = u.get(verts[v]);
            g[0] += uv * basis[v][0];
            g[1] += uv * basis[v][1];
        }
        let (w, dw) = flux_weights(p, problem.delta(), dot2(g, g));
        let share = measure / s as f64;
        let y = frozen_y[k];
        for vi in 0..s {
            let node_i = verts[vi];
            if w != 0.0 || dw != 0.0 {
                let gi = dot2(g, basis[vi]);
                for vj in 0..s {
                    let val =
                        measure * (w * dot2(basis[vi], basis[vj]) + dw * gi * dot2(g, basis[vj]));
                    jac.add(node_i, verts[vj], val);
                }
            }
            // Diagonal zero-order derivatives: the combined power-map/shift
            // term contributes only on the negative branch; the reaction
            // derivative is frozen in y.
            let x = u.get(node_i);
            let mut diag = 0.0;
            if x < 0.0 {
                // d/dx of -((-x)^+)^{p-1} on the negative branch.
                diag += (p - 1.0) * safe_abs_power(-x, p - 2.0);
            }
            diag -= aux.reaction.evaluate_dx(mesh.node(node_i), x, y)?;
            jac.add(node_i, node_i, share * diag);
        }
    }

    for &i in mesh.boundary_nodes() {
        let x = u.get(i);
        let d = (p - 1.0) * safe_abs_power(x.abs(), p - 2.0);
        jac.add(i, i, mesh.boundary_weight(i) * problem.beta(i) * d);
    }
    Ok(jac)
}

/// |x|^q with the convention 0^q = 0 for all q, keeping Jacobians finite at
/// degenerate nodes when q < 0.
fn safe_abs_power(x: f64, q: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x.powf(q)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_interval_mesh, build_rectangle_mesh};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(mesh: &Mesh, rng: &mut impl Rng, lo: f64, hi: f64) -> DiscreteField {
        DiscreteField::new(
            (0..mesh.node_count())
                .map(|_| rng.gen_range(lo..hi))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn gradients_of_linear_fields_are_exact() {
        let mesh = build_interval_mesh(0.0, 1.0, 7).unwrap();
        let u = DiscreteField::from_fn(&mesh, |z| z[0]).unwrap();
        for g in element_gradient(&mesh, &u).unwrap() {
            assert_relative_eq!(g[0], 1.0, max_relative = 1e-13);
            assert_eq!(g[1], 0.0);
        }
        let c = DiscreteField::constant(&mesh, 3.5);
        for g in element_gradient(&mesh, &c).unwrap() {
            assert_eq!(g, [0.0, 0.0]);
        }

        let mesh2 = build_rectangle_mesh(1.0, 1.0, 3, 4).unwrap();
        let u2 = DiscreteField::from_fn(&mesh2, |z| 2.0 * z[0] + 3.0 * z[1]).unwrap();
        for g in element_gradient(&mesh2, &u2).unwrap() {
            assert_relative_eq!(g[0], 2.0, max_relative = 1e-12);
            assert_relative_eq!(g[1], 3.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn gradient_shape_mismatch() {
        let mesh = build_interval_mesh(0.0, 1.0, 4).unwrap();
        let wrong = DiscreteField::new(vec![0.0; 3]).unwrap();
        assert!(element_gradient(&mesh, &wrong).is_err());
    }

    #[test]
    fn a_form_examples() {
        let mesh = build_interval_mesh(0.0, 1.0, 16).unwrap();
        let spec = ProblemSpec::new(mesh, 3.0, 0.0).unwrap();
        let c = DiscreteField::constant(spec.mesh(), 2.0);
        let h = DiscreteField::from_fn(spec.mesh(), |z| z[0] * z[0]).unwrap();
        assert_eq!(a_form(&spec, &c, &h).unwrap(), 0.0);

        // p = 3, u(x) = x: integral of |u'|^3 = 1.
        let u = DiscreteField::from_fn(spec.mesh(), |z| z[0]).unwrap();
        assert_relative_eq!(a_form(&spec, &u, &u).unwrap(), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn a_form_monotone_p2() {
        let mesh = build_interval_mesh(0.0, 1.0, 12).unwrap();
        let spec = ProblemSpec::new(mesh, 2.0, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let u = random_field(spec.mesh(), &mut rng, -1.0, 1.0);
            let v = random_field(spec.mesh(), &mut rng, -1.0, 1.0);
            let d = u.axpy(-1.0, &v);
            let gap = a_form(&spec, &u, &d).unwrap() - a_form(&spec, &v, &d).unwrap();
            assert!(gap >= -1e-12, "monotonicity violated: {gap}");
        }
    }

    #[test]
    fn robin_form_examples() {
        let mesh = build_interval_mesh(0.0, 1.0, 8).unwrap();
        let neumann = ProblemSpec::new(mesh.clone(), 2.0, 0.0).unwrap();
        let one = DiscreteField::constant(&mesh, 1.0);
        assert_eq!(robin_form(&neumann, &one, &one).unwrap(), 0.0);

        let robin = ProblemSpec::new(mesh, 2.0, 1.0).unwrap();
        assert_relative_eq!(robin_form(&robin, &one, &one).unwrap(), 2.0);

        let sq = build_rectangle_mesh(1.0, 1.0, 4, 4).unwrap();
        let sq_one = DiscreteField::constant(&sq, 1.0);
        let sq_spec = ProblemSpec::new(sq, 2.0, 1.0).unwrap();
        assert_relative_eq!(
            robin_form(&sq_spec, &sq_one, &sq_one).unwrap(),
            4.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn psi_p_form_examples() {
        let mesh = build_interval_mesh(0.0, 1.0, 8).unwrap();
        let one = DiscreteField::constant(&mesh, 1.0);
        let spec2 = ProblemSpec::new(mesh.clone(), 2.0, 0.0).unwrap();
        assert_relative_eq!(psi_p_form(&spec2, &one, &one).unwrap(), 1.0);

        let minus = DiscreteField::constant(&mesh, -1.0);
        let spec3 = ProblemSpec::new(mesh.clone(), 3.0, 0.0).unwrap();
        assert_relative_eq!(psi_p_form(&spec3, &minus, &one).unwrap(), -1.0);

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let u = random_field(&mesh, &mut rng, -2.0, 2.0);
        let self_pair = psi_p_form(&spec3, &u, &u).unwrap();
        let norm = lp_norm(&mesh, &u, 3.0).unwrap();
        assert_relative_eq!(self_pair, norm.powi(3), max_relative = 1e-12);
        assert!(self_pair >= 0.0);
    }

    #[test]
    fn lp_norm_examples() {
        let mesh = build_interval_mesh(0.0, 1.0, 64).unwrap();
        let one = DiscreteField::constant(&mesh, 1.0);
        for p in [1.0, 1.5, 2.0, 3.0] {
            assert_relative_eq!(lp_norm(&mesh, &one, p).unwrap(), 1.0, max_relative = 1e-13);
        }
        let two = DiscreteField::constant(&mesh, 2.0);
        assert_relative_eq!(
            lp_norm(&mesh, &two, 2.0).unwrap(),
            2.0,
            max_relative = 1e-13
        );

        // u(x) = x: exact L2 norm 1/sqrt(3); the vertex rule is O(h^2) off.
        let x = DiscreteField::from_fn(&mesh, |z| z[0]).unwrap();
        let exact = (1.0f64 / 3.0).sqrt();
        let got = lp_norm(&mesh, &x, 2.0).unwrap();
        assert!((got - exact).abs() < 1e-3, "{got} vs {exact}");
        assert!(lp_norm(&mesh, &x, 0.5).is_err());
    }

    #[test]
    fn closed_form_residual_vanishes() {
        // -u'' = 1 with Robin data: u(x) = (-x^2 + x + 1) / 2 solves the
        // perturbed problem at p = 2, beta = 1, f = 0, eps = 1, e = 1, and its
        // interpolant is a discrete solution for this load (second differences
        // of a parabola are exact; the trapezoid load of a constant is exact).
        for n in [16usize, 64, 256] {
            let mesh = build_interval_mesh(0.0, 1.0, n).unwrap();
            let spec = ProblemSpec::new(mesh, 2.0, 1.0).unwrap();
            let reaction = ReactionSpec::zero();
            let e = DiscreteField::constant(spec.mesh(), 1.0);
            let aux = AuxiliaryProblem::new(&spec, &reaction, 1.0, e).unwrap();
            let u =
                DiscreteField::from_fn(spec.mesh(), |z| (-z[0] * z[0] + z[0] + 1.0) / 2.0).unwrap();
            let y = element_gradient(spec.mesh(), &u).unwrap();
            let r = v_residual(&aux, &u, &y).unwrap();
            let norm = r.iter().map(|v| v.abs()).fold(0.0, f64::max);
            let h = 1.0 / n as f64;
            assert!(norm <= h, "residual {norm} should be under h = {h}");
            assert!(norm <= 1e-12, "nodally exact case: residual {norm}");
        }
    }

    #[test]
    fn zero_field_zero_epsilon_gives_zero_residual() {
        let mesh = build_interval_mesh(0.0, 1.0, 8).unwrap();
        let spec = ProblemSpec::new(mesh, 2.0, 1.0).unwrap();
        let reaction = ReactionSpec::zero();
        let e = DiscreteField::constant(spec.mesh(), 1.0);
        let aux = AuxiliaryProblem::new(&spec, &reaction, 0.0, e).unwrap();
        let u = DiscreteField::constant(spec.mesh(), 0.0);
        let y = element_gradient(spec.mesh(), &u).unwrap();
        let r = v_residual(&aux, &u, &y).unwrap();
        assert!(r.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shift_cancels_exactly_on_nonnegative_fields() {
        // On nodally nonnegative fields the perturbed residual coincides with
        // the unshifted one, component for component.
        let mesh = build_interval_mesh(0.0, 1.0, 10).unwrap();
        let spec = ProblemSpec::new(mesh, 3.0, 1.0).unwrap();
        let reaction = ReactionSpec::example(ExampleParamsForTest::get()).unwrap();
        let e = DiscreteField::constant(spec.mesh(), 1.0);
        let aux = AuxiliaryProblem::new(&spec, &reaction, 0.25, e.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let u = random_field(spec.mesh(), &mut rng, 0.0, 3.0);
            let y = element_gradient(spec.mesh(), &u).unwrap();
            let with_shift = v_residual(&aux, &u, &y).unwrap();
            let plain = residual_general(&spec, &reaction, &u, &y, 0.25, &e, false).unwrap();
            for (a, b) in with_shift.iter().zip(&plain) {
                assert_eq!(a, b);
            }
        }
    }

    struct ExampleParamsForTest;
    impl ExampleParamsForTest {
        fn get() -> crate::reaction::ExampleReactionParams {
            crate::reaction::ExampleReactionParams {
                eta: 3.0,
                theta: 1.0,
                q: 2.0,
                tau: 2.0,
                r: 4.0,
                p: 3.0,
            }
        }
    }

    #[test]
    fn jacobian_constant_on_negative_cone() {
        // For p = 2, f = 0 the truncated problem is linear on fields that stay
        // negative: the Jacobian is stiffness + lumped mass, independent of u.
        let mesh = build_interval_mesh(0.0, 1.0, 6).unwrap();
        let spec = ProblemSpec::new(mesh, 2.0, 0.0).unwrap();
        let reaction = ReactionSpec::zero();
        let e = DiscreteField::constant(spec.mesh(), 1.0);
        let aux = AuxiliaryProblem::new(&spec, &reaction, 1.0, e).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);

        let expected = {
            let mut k = p2_stiffness(spec.mesh());
            for i in 0..spec.mesh().node_count() {
                k.add(i, i, spec.mesh().node_mass(i));
            }
            k
        };
        for _ in 0..5 {
            let u = random_field(spec.mesh(), &mut rng, -3.0, -0.5);
            let y = element_gradient(spec.mesh(), &u).unwrap();
            let j = v_jacobian(&aux, &u, &y).unwrap();
            for i in 0..spec.mesh().node_count() {
                let (cols, vals) = j.row(i);
                for (&c, &v) in cols.iter().zip(vals) {
                    assert_relative_eq!(v, expected.get(i, c), max_relative = 1e-12);
                }
            }
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mesh = build_interval_mesh(0.0, 1.0, 9).unwrap();
        for p in [1.5, 2.0, 3.0] {
            let spec = ProblemSpec::new(mesh.clone(), p, 1.0).unwrap();
            let reaction = ReactionSpec::power(0.8, p);
            let e = DiscreteField::constant(spec.mesh(), 1.0);
            let aux = AuxiliaryProblem::new(&spec, &reaction, 0.5, e).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(p.to_bits());
            for _ in 0..10 {
                let u = random_field(spec.mesh(), &mut rng, 1.2, 3.0);
                let y = element_gradient(spec.mesh(), &u).unwrap();
                let j = v_jacobian(&aux, &u, &y).unwrap();
                let d: Vec<f64> = (0..u.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let step = 1e-6 * (1.0 + u.inf_norm());
                let dir = DiscreteField::new(d.clone()).unwrap();
                let up = u.axpy(step, &dir);
                let um = u.axpy(-step, &dir);
                let rp = v_residual(&aux, &up, &y).unwrap();
                let rm = v_residual(&aux, &um, &y).unwrap();
                let fd: Vec<f64> = rp
                    .iter()
                    .zip(&rm)
                    .map(|(a, b)| (a - b) / (2.0 * step))
                    .collect();
                let jd = j.matvec(&d);
                let fd_norm = fd.iter().map(|v| v.abs()).fold(0.0, f64::max);
                let err = jd
                    .iter()
                    .zip(&fd)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                assert!(
                    err <= 1e-6 * fd_norm.max(1e-30),
                    "p={p}: fd mismatch {err:.3e} vs norm {fd_norm:.3e}"
                );
            }
        }
    }

    #[test]
    fn jacobian_symmetric_at_p2() {
        let mesh = build_interval_mesh(0.0, 1.0, 10).unwrap();
        let spec = ProblemSpec::new(mesh, 2.0, 1.0).unwrap();
        let reaction = ReactionSpec::power(0.7, 2.0);
        let e = DiscreteField::constant(spec.mesh(), 1.0);
        let aux = AuxiliaryProblem::new(&spec, &reaction, 0.5, e).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let u = random_field(spec.mesh(), &mut rng, 0.5, 2.0);
        let y = element_gradient(spec.mesh(), &u).unwrap();
        let j = v_jacobian(&aux, &u, &y).unwrap();
        for i in 0..spec.mesh().node_count() {
            let (cols, _) = j.row(i);
            for &c in cols {
                assert_relative_eq!(j.get(i, c), j.get(c, i), max_relative = 1e-14);
            }
        }
    }

    #[test]
    fn perturbed_operator_coercive_on_sampled_rays() {
        // Discrete shadow of the coercivity bound: with the tame example
        // reaction, the ratio <V(u), u> / ||u||^p stays bounded below by a
        // positive constant on random rays once the Sobolev norm is large.
        let mesh = build_interval_mesh(0.0, 1.0, 16).unwrap();
        let spec = ProblemSpec::new(mesh, 2.0, 1.0).unwrap();
        let reaction = ReactionSpec::example(crate::reaction::ExampleReactionParams {
            eta: 2.5,
            theta: 1.0,
            q: 1.05,
            tau: 1.05,
            r: 3.0,
            p: 2.0,
        })
        .unwrap();
        let e = DiscreteField::constant(spec.mesh(), 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut c3_hat = f64::INFINITY;
        for epsilon in [1.0, 0.25, 0.01] {
            let aux = AuxiliaryProblem::new(&spec, &reaction, epsilon, e.clone()).unwrap();
            for _ in 0..50 {
                let dir = random_field(spec.mesh(), &mut rng, -1.0, 1.0);
                let norm = crate::assembly::sobolev_norm(spec.mesh(), &dir, 2.0).unwrap();
                if norm == 0.0 {
                    continue;
                }
                for radius in [10.0, 40.0, 160.0, 640.0] {
                    let u = dir.scale(radius / norm);
                    let y = element_gradient(spec.mesh(), &u).unwrap();
                    let r = v_residual(&aux, &u, &y).unwrap();
                    let pairing: f64 = r.iter().zip(u.values()).map(|(a, b)| a * b).sum();
                    let ratio = pairing / radius.powi(2);
                    c3_hat = c3_hat.min(ratio);
                }
            }
        }
        assert!(
            c3_hat > 0.05,
            "sampled coercivity constant {c3_hat:.4} not bounded away from zero"
        );
    }

    #[test]
    fn invalid_problem_specs_rejected() {
        let mesh = build_interval_mesh(0.0, 1.0, 4).unwrap();
        assert!(ProblemSpec::new(mesh.clone(), 1.0, 0.0).is_err());
        assert!(ProblemSpec::new(mesh.clone(), 2.0, -0.5).is_err());
        let spec = ProblemSpec::new(mesh.clone(), 2.0, 1.0).unwrap();
        assert!(spec.clone().with_flux_regularization(-1.0).is_err());

        let reaction = ReactionSpec::zero();
        let bad_e = DiscreteField::constant(&mesh, 0.0);
        assert!(AuxiliaryProblem::new(&spec, &reaction, 1.0, bad_e).is_err());
        let e = DiscreteField::constant(&mesh, 1.0);
        assert!(AuxiliaryProblem::new(&spec, &reaction, -0.1, e).is_err());
    }

    proptest! {
        /// p-homogeneity of the energy: a(tu, tu) = t^p a(u, u) for t > 0
        /// (delta = 0 keeps the form exactly homogeneous).
        #[test]
        fn a_form_homogeneous(
            t in 0.1f64..10.0,
            seed in 0u64..500,
            p_idx in 0usize..3,
        ) {
            let p = [1.5, 2.0, 3.0][p_idx];
            let mesh = build_interval_mesh(0.0, 1.0, 8).unwrap();
            let spec = ProblemSpec::new(mesh, p, 0.0)
                .unwrap()
                .with_flux_regularization(0.0)
                .unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u = random_field(spec.mesh(), &mut rng, -1.0, 1.0);
            let tu = u.scale(t);
            let base = a_form(&spec, &u, &u).unwrap();
            let scaled = a_form(&spec, &tu, &tu).unwrap();
            let expect = t.powf(p) * base;
            prop_assert!((scaled - expect).abs() <= 1e-12 * expect.abs().max(1e-12));
        }

        /// Monotonicity of the flux across exponents, including the
        /// regularized branch for p < 2.
        #[test]
        fn a_form_monotone_all_p(seed in 0u64..500, p_idx in 0usize..3) {
            let p = [1.5, 2.0, 3.0][p_idx];
            let mesh = build_interval_mesh(0.0, 1.0, 8).unwrap();
            let spec = ProblemSpec::new(mesh, p, 0.0).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u = random_field(spec.mesh(), &mut rng, -1.0, 1.0);
            let v = random_field(spec.mesh(), &mut rng, -1.0, 1.0);
            let d = u.axpy(-1.0, &v);
            let gap = a_form(&spec, &u, &d).unwrap() - a_form(&spec, &v, &d).unwrap();
            prop_assert!(gap >= -1e-12);
        }
    }
}
