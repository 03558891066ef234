use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::math;

/// Equally spaced nodes with standard-normal prior weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quadrature {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Quadrature {
    pub const DEFAULT_POINTS: usize = 61;
    pub const DEFAULT_BOUND: f64 = 6.0;

    /// `points` nodes spread evenly over `[-bound, bound]`.
    pub fn standard_normal(points: usize, bound: f64) -> Self {
        assert!(points >= 2 && bound > 0.0);
        let step = 2.0 * bound / (points - 1) as f64;
        let nodes: Vec<f64> = (0..points).map(|q| -bound + step * q as f64).collect();
        let raw: Vec<f64> = nodes.iter().map(|&t| math::normal_pdf(t)).collect();
        let total: f64 = raw.iter().sum();
        let weights = raw.into_iter().map(|w| w / total).collect();
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

impl Default for Quadrature {
    fn default() -> Self {
        Self::standard_normal(Self::DEFAULT_POINTS, Self::DEFAULT_BOUND)
    }
}
