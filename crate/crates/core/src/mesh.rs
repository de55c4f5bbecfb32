//! Simplicial meshes of 1D intervals and 2D axis-aligned rectangles.
//!
//! Nodes are ordered lexicographically by coordinate and element node tuples
//! are positively oriented, so assembly order is deterministic. Boundary
//! facets carry the surface measure: edge length in 2D, the counting measure
//! (value 1) at the two endpoints in 1D.

use crate::error::{Error, Result};

/// A conforming simplicial mesh (segments in 1D, triangles in 2D).
///
/// Immutable once built; safe to share across concurrent readers.
#[derive(Debug, Clone)]
pub struct Mesh {
    dim: usize,
    nodes: Vec<[f64; 2]>,
    /// Element connectivity, flat with stride `dim + 1`.
    elements: Vec<usize>,
    element_measures: Vec<f64>,
    /// Constant gradient of each nodal basis function on each element,
    /// flat with stride `dim + 1`.
    basis_gradients: Vec<[f64; 2]>,
    /// Boundary facet connectivity, flat with stride `dim`.
    boundary_facets: Vec<usize>,
    facet_measures: Vec<f64>,
    /// Lumped (vertex-rule) mass per node: sum over incident elements of
    /// |T| / (dim + 1).
    node_masses: Vec<f64>,
    /// Surface weight per node: sum over incident facets of |F| / dim.
    /// Zero for interior nodes.
    boundary_weights: Vec<f64>,
    boundary_nodes: Vec<usize>,
}

/// Builds a uniform mesh of the interval (a, b) with `n` segments.
///
/// The two endpoint facets carry measure 1 each (the 1D trace convention),
/// so the boundary measure of any interval is 2.
pub fn build_interval_mesh(a: f64, b: f64, n: usize) -> Result<Mesh> {
    if !a.is_finite() || !b.is_finite() {
        return Err(Error::invalid("interval endpoints must be finite"));
    }
    if a >= b {
        return Err(Error::invalid(format!(
            "interval endpoints must satisfy a < b, got a={a}, b={b}"
        )));
    }
    if n == 0 {
        return Err(Error::invalid("cell count n must be at least 1"));
    }

    let nodes: Vec<[f64; 2]> = (0..=n)
        .map(|i| [a + (b - a) * (i as f64) / (n as f64), 0.0])
        .collect();

    let mut elements = Vec::with_capacity(2 * n);
    let mut element_measures = Vec::with_capacity(n);
    let mut basis_gradients = Vec::with_capacity(2 * n);
    for i in 0..n {
        let len = nodes[i + 1][0] - nodes[i][0];
        elements.push(i);
        elements.push(i + 1);
        element_measures.push(len);
        basis_gradients.push([-1.0 / len, 0.0]);
        basis_gradients.push([1.0 / len, 0.0]);
    }

    let boundary_facets = vec![0, n];
    let facet_measures = vec![1.0, 1.0];

    Ok(Mesh::assemble(
        1,
        nodes,
        elements,
        element_measures,
        basis_gradients,
        boundary_facets,
        facet_measures,
    ))
}

/// Builds a structured triangulation of the rectangle (0, lx) x (0, ly)
/// with `nx` by `ny` grid cells, each split along the lower-left to
/// upper-right diagonal.
pub fn build_rectangle_mesh(lx: f64, ly: f64, nx: usize, ny: usize) -> Result<Mesh> {
    if !(lx.is_finite() && ly.is_finite()) || lx <= 0.0 || ly <= 0.0 {
        return Err(Error::invalid(format!(
            "rectangle side lengths must be positive and finite, got lx={lx}, ly={ly}"
        )));
    }
    if nx == 0 || ny == 0 {
        return Err(Error::invalid("cell counts nx, ny must be at least 1"));
    }

    // Lexicographic node order: all y for x = 0 first, then x = dx, ...
    let node_id = |i: usize, j: usize| i * (ny + 1) + j;
    let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
    for i in 0..=nx {
        for j in 0..=ny {
            nodes.push([lx * (i as f64) / (nx as f64), ly * (j as f64) / (ny as f64)]);
        }
    }

    let mut elements = Vec::with_capacity(6 * nx * ny);
    let mut element_measures = Vec::with_capacity(2 * nx * ny);
    let mut basis_gradients = Vec::with_capacity(6 * nx * ny);
    let mut push_triangle = |v: [usize; 3], nodes: &[[f64; 2]]| {
        let [a, b, c] = [nodes[v[0]], nodes[v[1]], nodes[v[2]]];
        let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
        let area = 0.5 * det;
        debug_assert!(area > 0.0, "triangles must be positively oriented");
        elements.extend_from_slice(&v);
        element_measures.push(area);
        basis_gradients.push([(b[1] - c[1]) / det, (c[0] - b[0]) / det]);
        basis_gradients.push([(c[1] - a[1]) / det, (a[0] - c[0]) / det]);
        basis_gradients.push([(a[1] - b[1]) / det, (b[0] - a[0]) / det]);
    };
    for i in 0..nx {
        for j in 0..ny {
            let v00 = node_id(i, j);
            let v10 = node_id(i + 1, j);
            let v01 = node_id(i, j + 1);
            let v11 = node_id(i + 1, j + 1);
            push_triangle([v00, v10, v11], &nodes);
            push_triangle([v00, v11, v01], &nodes);
        }
    }

    let mut boundary_facets = Vec::with_capacity(2 * 2 * (nx + ny));
    let mut facet_measures = Vec::with_capacity(2 * (nx + ny));
    let mut push_edge = |a: usize, b: usize, nodes: &[[f64; 2]]| {
        let dx = nodes[b][0] - nodes[a][0];
        let dy = nodes[b][1] - nodes[a][1];
        boundary_facets.push(a);
        boundary_facets.push(b);
        facet_measures.push((dx * dx + dy * dy).sqrt());
    };
    for i in 0..nx {
        push_edge(node_id(i, 0), node_id(i + 1, 0), &nodes); // bottom
    }
    for j in 0..ny {
        push_edge(node_id(nx, j), node_id(nx, j + 1), &nodes); // right
    }
    for i in (0..nx).rev() {
        push_edge(node_id(i + 1, ny), node_id(i, ny), &nodes); // top
    }
    for j in (0..ny).rev() {
        push_edge(node_id(0, j + 1), node_id(0, j), &nodes); // left
    }

    Ok(Mesh::assemble(
        2,
        nodes,
        elements,
        element_measures,
        basis_gradients,
        boundary_facets,
        facet_measures,
    ))
}

/// Sum of boundary facet measures: 2 for any interval, the perimeter for a
/// rectangle.
pub fn boundary_measure(mesh: &Mesh) -> f64 {
    mesh.facet_measures.iter().sum()
}

impl Mesh {
    #[allow(clippy::too_many_arguments)]
    fn assemble(
        dim: usize,
        nodes: Vec<[f64; 2]>,
        elements: Vec<usize>,
        element_measures: Vec<f64>,
        basis_gradients: Vec<[f64; 2]>,
        boundary_facets: Vec<usize>,
        facet_measures: Vec<f64>,
    ) -> Mesh {
        let nverts = dim + 1;
        let mut node_masses = vec![0.0; nodes.len()];
        for (k, measure) in element_measures.iter().enumerate() {
            let share = measure / nverts as f64;
            for &v in &elements[k * nverts..(k + 1) * nverts] {
                node_masses[v] += share;
            }
        }
        let mut boundary_weights = vec![0.0; nodes.len()];
        for (k, measure) in facet_measures.iter().enumerate() {
            let share = measure / dim as f64;
            for &v in &boundary_facets[k * dim..(k + 1) * dim] {
                boundary_weights[v] += share;
            }
        }
        let boundary_nodes: Vec<usize> = {
            let mut seen = vec![false; nodes.len()];
            for &v in &boundary_facets {
                seen[v] = true;
            }
            (0..nodes.len()).filter(|&i| seen[i]).collect()
        };
        Mesh {
            dim,
            nodes,
            elements,
            element_measures,
            basis_gradients,
            boundary_facets,
            facet_measures,
            node_masses,
            boundary_weights,
            boundary_nodes,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn element_count(&self) -> usize {
        self.element_measures.len()
    }

    pub fn facet_count(&self) -> usize {
        self.facet_measures.len()
    }

    /// Vertices per element: 2 in 1D, 3 in 2D.
    pub fn verts_per_element(&self) -> usize {
        self.dim + 1
    }

    pub fn node(&self, i: usize) -> [f64; 2] {
        self.nodes[i]
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn element(&self, k: usize) -> &[usize] {
        let s = self.verts_per_element();
        &self.elements[k * s..(k + 1) * s]
    }

    pub fn element_measure(&self, k: usize) -> f64 {
        self.element_measures[k]
    }

    pub fn element_measures(&self) -> &[f64] {
        &self.element_measures
    }

    /// Gradients of the nodal basis functions of element `k`, one per vertex,
    /// in the vertex order of [`Mesh::element`].
    pub fn basis_gradients(&self, k: usize) -> &[[f64; 2]] {
        let s = self.verts_per_element();
        &self.basis_gradients[k * s..(k + 1) * s]
    }

    pub fn facet(&self, k: usize) -> &[usize] {
        &self.boundary_facets[k * self.dim..(k + 1) * self.dim]
    }

    pub fn facet_measure(&self, k: usize) -> f64 {
        self.facet_measures[k]
    }

    /// Lumped mass of node `i` (vertex quadrature weight for volume terms).
    pub fn node_mass(&self, i: usize) -> f64 {
        self.node_masses[i]
    }

    pub fn node_masses(&self) -> &[f64] {
        &self.node_masses
    }

    /// Surface quadrature weight of node `i`; zero for interior nodes.
    pub fn boundary_weight(&self, i: usize) -> f64 {
        self.boundary_weights[i]
    }

    /// Indices of the nodes lying on the boundary, ascending.
    pub fn boundary_nodes(&self) -> &[usize] {
        &self.boundary_nodes
    }

    pub fn is_boundary_node(&self, i: usize) -> bool {
        self.boundary_weights[i] > 0.0
    }

    /// Total element measure, i.e. |Omega|.
    pub fn domain_measure(&self) -> f64 {
        self.element_measures.iter().sum()
    }

    /// Longest element diameter; the refinement scale h.
    pub fn diameter(&self) -> f64 {
        let s = self.verts_per_element();
        let mut h: f64 = 0.0;
        for k in 0..self.element_count() {
            let verts = &self.elements[k * s..(k + 1) * s];
            for a in 0..s {
                for b in (a + 1)..s {
                    let pa = self.nodes[verts[a]];
                    let pb = self.nodes[verts[b]];
                    let d = ((pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2)).sqrt();
                    h = h.max(d);
                }
            }
        }
        h
    }

    /// Symmetric node adjacency (including the diagonal) as sorted neighbor
    /// lists; the sparsity pattern of any P1 operator on this mesh.
    pub fn node_adjacency(&self) -> Vec<Vec<usize>> {
        let s = self.verts_per_element();
        let mut adj: Vec<Vec<usize>> = (0..self.node_count()).map(|i| vec![i]).collect();
        for k in 0..self.element_count() {
            let verts = &self.elements[k * s..(k + 1) * s];
            for &a in verts {
                for &b in verts {
                    if a != b {
                        adj[a].push(b);
                    }
                }
            }
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        adj
    }
}
