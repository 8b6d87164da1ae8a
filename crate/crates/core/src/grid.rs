//! Bounded 1-D discretizations of continuous indexes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sum::pairwise_sum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum QuadratureRule {
    /// Nodes at cell centres, every weight equal to the cell width.
    Midpoint,
    /// Nodes at cell edges, half weights at both ends.
    #[default]
    Trapezoid,
}

/// A closed interval `[lo, hi]` sampled by `n_points` quadrature nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct GridAxis {
    label: String,
    lo: f64,
    hi: f64,
    rule: QuadratureRule,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GridAxis {
    pub fn new(
        label: impl Into<String>,
        lo: f64,
        hi: f64,
        n_points: usize,
        rule: QuadratureRule,
    ) -> Result<Self> {
        let label = label.into();
        if !(lo.is_finite() && hi.is_finite()) || lo >= hi {
            return Err(Error::Domain(format!(
                "axis `{label}`: need lo < hi, got [{lo}, {hi}]"
            )));
        }
        if n_points < 2 {
            return Err(Error::Domain(format!(
                "axis `{label}`: need at least 2 points, got {n_points}"
            )));
        }
        let span = hi - lo;
        let (nodes, weights) = match rule {
            QuadratureRule::Midpoint => {
                let h = span / n_points as f64;
                let nodes = (0..n_points)
                    .map(|i| lo + (i as f64 + 0.5) * h)
                    .collect();
                (nodes, vec![h; n_points])
            }
            QuadratureRule::Trapezoid => {
                let cells = (n_points - 1) as f64;
                let h = span / cells;
                let mut nodes: Vec<f64> = (0..n_points)
                    .map(|i| lo + span * (i as f64 / cells))
                    .collect();
                nodes[n_points - 1] = hi;
                let mut weights = vec![h; n_points];
                weights[0] = 0.5 * h;
                weights[n_points - 1] = 0.5 * h;
                (nodes, weights)
            }
        };
        Ok(Self {
            label,
            lo,
            hi,
            rule,
            nodes,
            weights,
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn rule(&self) -> QuadratureRule {
        self.rule
    }

    pub fn n_points(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn length(&self) -> f64 {
        self.hi - self.lo
    }

    /// Distance between neighbouring cell boundaries.
    pub fn cell_width(&self) -> f64 {
        match self.rule {
            QuadratureRule::Midpoint => self.length() / self.n_points() as f64,
            QuadratureRule::Trapezoid => self.length() / (self.n_points() - 1) as f64,
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    /// Quadrature of `values` sampled at the nodes.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        crate::sum::dot(&self.weights, values)
    }

    pub fn weight_sum(&self) -> f64 {
        pairwise_sum(&self.weights)
    }

    /// Same axis with a new label.
    pub fn relabel(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// Same interval, node count multiplied by `factor` (at least 2 nodes).
    pub fn rescaled(&self, factor: f64) -> Result<Self> {
        let n = ((self.n_points() as f64) * factor).round().max(2.0) as usize;
        Self::new(self.label.clone(), self.lo, self.hi, n, self.rule)
    }
}

/// Axis over the intersection of `axis` with `[lo2, hi2]`, keeping the cell
/// width of the original as closely as an integer node count allows.
pub fn restrict_axis(axis: &GridAxis, lo2: f64, hi2: f64) -> Result<GridAxis> {
    let lo = axis.lo.max(lo2);
    let hi = axis.hi.min(hi2);
    if !(lo < hi) {
        return Err(Error::Domain(format!(
            "axis `{}`: [{lo2}, {hi2}] does not overlap [{}, {}]",
            axis.label, axis.lo, axis.hi
        )));
    }
    let cells = ((hi - lo) / axis.cell_width()).round().max(1.0) as usize;
    let n = match axis.rule {
        QuadratureRule::Midpoint => cells.max(2),
        QuadratureRule::Trapezoid => cells + 1,
    };
    GridAxis::new(axis.label.clone(), lo, hi, n, axis.rule)
}

/// Smallest node count whose cell width is at most `kernel_width / 3`.
pub fn suggest_points(lo: f64, hi: f64, kernel_width: f64, rule: QuadratureRule) -> usize {
    let h = kernel_width / 3.0;
    let cells = ((hi - lo) / h).ceil().max(1.0) as usize;
    match rule {
        QuadratureRule::Midpoint => cells.max(2),
        QuadratureRule::Trapezoid => cells + 1,
    }
}

/// An index of a field tensor: a quadrature grid, an integer range summed with
/// unit weights, or a single pinned point.
#[derive(Debug, Clone, PartialEq)]
pub enum IndexSet {
    Continuous(GridAxis),
    Discrete { lo: i64, hi: i64, nodes: Vec<f64> },
    Point(f64),
}

impl IndexSet {
    pub fn discrete(lo: i64, hi: i64) -> Result<Self> {
        if lo > hi {
            return Err(Error::Domain(format!("empty integer range {lo}..={hi}")));
        }
        Ok(IndexSet::Discrete {
            lo,
            hi,
            nodes: (lo..=hi).map(|v| v as f64).collect(),
        })
    }

    pub fn len(&self) -> usize {
        match self {
            IndexSet::Continuous(a) => a.n_points(),
            IndexSet::Discrete { nodes, .. } => nodes.len(),
            IndexSet::Point(_) => 1,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn node(&self, i: usize) -> f64 {
        match self {
            IndexSet::Continuous(a) => a.nodes()[i],
            IndexSet::Discrete { nodes, .. } => nodes[i],
            IndexSet::Point(x) => *x,
        }
    }

    pub fn weight(&self, i: usize) -> f64 {
        match self {
            IndexSet::Continuous(a) => a.weights()[i],
            _ => 1.0,
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.node(i)).collect()
    }

    pub fn weights(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.weight(i)).collect()
    }

    pub fn is_continuous(&self) -> bool {
        matches!(self, IndexSet::Continuous(_))
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, IndexSet::Discrete { .. })
    }

    pub fn axis(&self) -> Option<&GridAxis> {
        match self {
            IndexSet::Continuous(a) => Some(a),
            _ => None,
        }
    }

    pub fn cell_width(&self) -> Option<f64> {
        self.axis().map(GridAxis::cell_width)
    }

    pub fn bounds(&self) -> (f64, f64) {
        match self {
            IndexSet::Continuous(a) => (a.lo(), a.hi()),
            IndexSet::Discrete { lo, hi, .. } => (*lo as f64, *hi as f64),
            IndexSet::Point(x) => (*x, *x),
        }
    }
}
