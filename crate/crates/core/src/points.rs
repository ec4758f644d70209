//! Point-set containers shared by the generators, solvers, and file IO.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 3D source points with optional per-point integer labels.
///
/// Labels mark structural nodes (bifurcations or crossings) in curve
/// scenes; `0` means unlabeled and positive values are node identifiers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSet3D {
    pub points: Vec<Vector3<f64>>,
    pub labels: Option<Vec<i64>>,
}

impl PointSet3D {
    pub fn new(points: Vec<Vector3<f64>>) -> Self {
        Self { points, labels: None }
    }

    /// Attaches labels; the vector must be index-aligned with the points.
    pub fn with_labels(points: Vec<Vector3<f64>>, labels: Vec<i64>) -> Result<Self> {
        if labels.len() != points.len() {
            return Err(Error::InvalidConfig(format!(
                "label count {} does not match point count {}",
                labels.len(),
                points.len()
            )));
        }
        Ok(Self { points, labels: Some(labels) })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Indices of labeled (nonzero) points, in ascending order.
    pub fn labeled_indices(&self) -> Vec<usize> {
        match &self.labels {
            Some(labels) => labels
                .iter()
                .enumerate()
                .filter(|(_, l)| **l != 0)
                .map(|(i, _)| i)
                .collect(),
            None => Vec::new(),
        }
    }
}

/// 2D target points in pixel coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSet2D {
    pub points: Vec<Vector2<f64>>,
}

impl PointSet2D {
    pub fn new(points: Vec<Vector2<f64>>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}
