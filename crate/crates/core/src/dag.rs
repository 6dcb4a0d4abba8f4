//! Differentiable acyclicity `h(A) = tr(e^{A∘A}) - n`, the augmented
//! Lagrangian built on it, and discrete checks of thresholded graphs.
//!
//! Convention: `A[i][j] != 0` means series `j` is a parent of series `i`.

use std::collections::VecDeque;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expm::expm;
use crate::tensor::{square_extent, Tensor};

/// `tr(e^{A∘A}) - n`; zero exactly when the support of `A` is acyclic.
pub fn acyclicity(a: &Tensor) -> Result<f64> {
    let n = square_extent(a)?;
    let e = expm(&a.map(|v| v * v))?;
    Ok(e.trace()? - n as f64)
}

/// Closed-form gradient `(e^{A∘A})^T ∘ 2A`.
pub fn acyclicity_grad(a: &Tensor) -> Result<Tensor> {
    square_extent(a)?;
    let e = expm(&a.map(|v| v * v))?.transpose()?;
    Ok(e.zip_map(a, |ev, av| 2.0 * av * ev))
}

/// Multiplier, penalty and bookkeeping of the outer loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LagrangianState {
    pub lambda: f64,
    pub c: f64,
    /// Outer-iteration index.
    pub k: usize,
    /// Constraint value after the previous subproblem.
    pub h_prev: Option<f64>,
}

impl LagrangianState {
    pub fn new(lambda: f64, c: f64) -> Self {
        LagrangianState { lambda, c, k: 0, h_prev: None }
    }
}

/// Growth rule for the penalty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PenaltySchedule {
    /// Multiplier applied on insufficient progress (> 1).
    pub eta: f64,
    /// Required contraction of `|h|` per outer iteration, in (0, 1).
    pub gamma: f64,
    /// Value `c` takes the first time it must grow from zero.
    pub c_bootstrap: f64,
}

impl Default for PenaltySchedule {
    fn default() -> Self {
        PenaltySchedule { eta: 10.0, gamma: 0.5, c_bootstrap: 1.0 }
    }
}

/// `nll + lambda * h + c/2 * h^2`.
pub fn augmented_lagrangian(nll: f64, h: f64, state: &LagrangianState) -> f64 {
    nll + state.lambda * h + 0.5 * state.c * h * h
}

/// Dual ascent on `lambda`, then grow `c` by `eta` if `|h|` did not shrink
/// by at least `gamma` since the previous outer iteration.
pub fn dual_penalty_update(state: &LagrangianState, h_now: f64, schedule: &PenaltySchedule) -> LagrangianState {
    let lambda = state.lambda + state.c * h_now;
    let stalled = match state.h_prev {
        Some(prev) if state.k > 0 => h_now.abs() > schedule.gamma * prev.abs(),
        _ => false,
    };
    let c = match (stalled, state.c == 0.0) {
        (false, _) => state.c,
        (true, true) => schedule.c_bootstrap,
        (true, false) => schedule.eta * state.c,
    };
    LagrangianState { lambda, c, k: state.k + 1, h_prev: Some(h_now) }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub weight: f64,
}

/// Thresholded graph with its acyclicity verdict.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphExport {
    pub nodes: Vec<String>,
    pub epsilon: f64,
    pub edges: Vec<Edge>,
    pub acyclic: bool,
}

impl GraphExport {
    pub fn to_dot(&self) -> String {
        let mut s = String::from("digraph ganf {\n");
        for (i, name) in self.nodes.iter().enumerate() {
            let _ = writeln!(s, "  n{i} [label=\"{name}\"];");
        }
        for e in &self.edges {
            let _ = writeln!(s, "  n{} -> n{} [label=\"{:.4}\", weight={:.6}];", e.from, e.to, e.weight, e.weight.abs());
        }
        s.push_str("}\n");
        s
    }
}

/// Kahn ordering of `n` nodes, or `None` if the edges contain a cycle.
pub fn topological_order(n: usize, edges: &[Edge]) -> Option<Vec<usize>> {
    let mut indeg = vec![0usize; n];
    let mut out: Vec<Vec<usize>> = vec![Vec::new(); n];
    for e in edges {
        out[e.from].push(e.to);
        indeg[e.to] += 1;
    }
    let mut queue: VecDeque<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(v) = queue.pop_front() {
        order.push(v);
        for &w in &out[v] {
            indeg[w] -= 1;
            if indeg[w] == 0 {
                queue.push_back(w);
            }
        }
    }
    (order.len() == n).then_some(order)
}

/// Edges `j -> i` for every `|A[i][j]| > epsilon`, off the diagonal.
pub fn threshold_dag(a: &Tensor, epsilon: f64) -> Result<GraphExport> {
    let n = square_extent(a)?;
    if !(epsilon > 0.0) {
        return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
    }
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let w = a.at(i, j);
            if i != j && w.abs() > epsilon {
                edges.push(Edge { from: j, to: i, weight: w });
            }
        }
    }
    let acyclic = topological_order(n, &edges).is_some();
    Ok(GraphExport { nodes: (0..n).map(|i| format!("s{i}")).collect(), epsilon, edges, acyclic })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_cycle() -> Tensor {
        Tensor::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap()
    }

    #[test]
    fn empty_graph() {
        let z = Tensor::zeros(&[4, 4]);
        assert_eq!(acyclicity(&z).unwrap(), 0.0);
        assert_eq!(acyclicity_grad(&z).unwrap(), z);
    }

    #[test]
    fn lower_triangular_is_acyclic() {
        let mut a = Tensor::zeros(&[4, 4]);
        for i in 0..4 {
            for j in 0..i {
                a.set(i, j, 0.3 + 0.1 * (i + j) as f64);
            }
        }
        assert!(acyclicity(&a).unwrap().abs() < 1e-12);
        let g = acyclicity_grad(&a).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                if a.at(i, j) == 0.0 {
                    assert_eq!(g.at(i, j), 0.0);
                }
            }
        }
    }

    #[test]
    fn two_cycle_value() {
        let h = acyclicity(&two_cycle()).unwrap();
        assert!((h - (2.0 * 1f64.cosh() - 2.0)).abs() < 1e-12);
        assert!((h - 1.0862).abs() < 1e-4);
    }

    #[test]
    fn non_square_rejected() {
        assert!(matches!(acyclicity(&Tensor::zeros(&[2, 3])), Err(Error::Shape(_))));
    }

    #[test]
    fn lagrangian_examples() {
        let s = LagrangianState::new(2.0, 4.0);
        assert_eq!(augmented_lagrangian(1.0, 0.5, &s), 2.5);
        assert_eq!(augmented_lagrangian(1.0, 0.0, &s), 1.0);
        assert_eq!(augmented_lagrangian(1.7, 0.9, &LagrangianState::new(0.0, 0.0)), 1.7);
    }

    #[test]
    fn dual_update_examples() {
        let sched = PenaltySchedule::default();
        let s = LagrangianState { lambda: 1.0, c: 10.0, k: 3, h_prev: Some(1.0) };
        let next = dual_penalty_update(&s, 0.2, &sched);
        assert!((next.lambda - 3.0).abs() < 1e-15);
        assert_eq!(next.c, 10.0);
        assert_eq!(next.k, 4);

        let stalled = dual_penalty_update(&s, 0.6, &sched);
        assert_eq!(stalled.c, 100.0);
        let progressed = dual_penalty_update(&s, 0.4, &sched);
        assert_eq!(progressed.c, 10.0);
    }

    #[test]
    fn first_iteration_never_grows_penalty() {
        let sched = PenaltySchedule::default();
        let s = LagrangianState::new(0.5, 0.0);
        let next = dual_penalty_update(&s, 5.0, &sched);
        assert_eq!(next.c, 0.0);
        // stalled with c = 0: bootstrap instead of the fixed point 10 * 0
        let after = dual_penalty_update(&next, 5.0, &sched);
        assert_eq!(after.c, 1.0);
        assert_eq!(dual_penalty_update(&after, 5.0, &sched).c, 10.0);
    }

    #[test]
    fn threshold_examples() {
        let g = threshold_dag(&Tensor::zeros(&[3, 3]), 0.01).unwrap();
        assert!(g.edges.is_empty() && g.acyclic);

        let mut lower = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            for j in 0..i {
                lower.set(i, j, 0.5);
            }
        }
        let g = threshold_dag(&lower, 0.01).unwrap();
        assert_eq!(g.edges.len(), 3);
        assert!(g.acyclic);

        let g = threshold_dag(&two_cycle(), 0.5).unwrap();
        assert_eq!(g.edges.len(), 2);
        assert!(!g.acyclic);
        assert!(g.to_dot().contains("n0 -> n1"));
    }
}
