//! Nodal scalar fields: continuous piecewise-linear functions identified with
//! their node values.

use crate::error::{Error, Result};
use crate::mesh::Mesh;

/// One scalar per mesh node. All values are finite by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteField {
    values: Vec<f64>,
}

impl DiscreteField {
    pub fn new(values: Vec<f64>) -> Result<DiscreteField> {
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "field value at node {i} is not finite ({v})"
            )));
        }
        Ok(DiscreteField { values })
    }

    pub fn constant(mesh: &Mesh, c: f64) -> DiscreteField {
        DiscreteField {
            values: vec![c; mesh.node_count()],
        }
    }

    pub fn from_fn(mesh: &Mesh, f: impl Fn([f64; 2]) -> f64) -> Result<DiscreteField> {
        DiscreteField::new(mesh.nodes().iter().map(|&z| f(z)).collect())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize) -> f64 {
        self.values[i]
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn inf_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }

    /// Max-norm of the negative part u^-.
    pub fn negative_part_norm(&self) -> f64 {
        self.values
            .iter()
            .map(|v| (-v).max(0.0))
            .fold(0.0, f64::max)
    }

    pub fn scale(&self, s: f64) -> DiscreteField {
        DiscreteField {
            values: self.values.iter().map(|v| v * s).collect(),
        }
    }

    /// self + s * other
    pub fn axpy(&self, s: f64, other: &DiscreteField) -> DiscreteField {
        assert_eq!(self.len(), other.len());
        DiscreteField {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + s * b)
                .collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &DiscreteField) -> f64 {
        assert_eq!(self.len(), other.len());
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Checked construction against a mesh (shape gate for I/O and ops).
    pub fn for_mesh(mesh: &Mesh, values: Vec<f64>) -> Result<DiscreteField> {
        if values.len() != mesh.node_count() {
            return Err(Error::invalid(format!(
                "field has {} values but mesh has {} nodes",
                values.len(),
                mesh.node_count()
            )));
        }
        DiscreteField::new(values)
    }
}

pub(crate) fn check_field(mesh: &Mesh, u: &DiscreteField, what: &str) -> Result<()> {
    if u.len() != mesh.node_count() {
        return Err(Error::invalid(format!(
            "{what}: field has {} values but mesh has {} nodes",
            u.len(),
            mesh.node_count()
        )));
    }
    Ok(())
}
