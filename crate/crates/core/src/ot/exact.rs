//! Transportation simplex: north-west-corner start, MODI potentials and
//! Bland's rule for both the entering and the leaving cell.

use std::collections::VecDeque;

use ndarray::Array2;

use super::{Marginals, TransportPlan, WeightVectors};
use crate::embed::CostMatrix;
use crate::error::{Error, Result};

const FEASIBILITY_TOL: f64 = 1e-12;

struct Basis {
    m: usize,
    n: usize,
    flow: Array2<f64>,
    basic: Vec<bool>,
    row_adj: Vec<Vec<usize>>,
    col_adj: Vec<Vec<usize>>,
}

impl Basis {
    fn add(&mut self, i: usize, j: usize, x: f64) {
        self.flow[[i, j]] = x;
        self.basic[i * self.n + j] = true;
        self.row_adj[i].push(j);
        self.col_adj[j].push(i);
    }

    fn remove(&mut self, i: usize, j: usize) {
        self.flow[[i, j]] = 0.0;
        self.basic[i * self.n + j] = false;
        self.row_adj[i].retain(|&c| c != j);
        self.col_adj[j].retain(|&r| r != i);
    }

    fn north_west(a: &[f64], b: &[f64]) -> Basis {
        let (m, n) = (a.len(), b.len());
        let mut basis = Basis {
            m,
            n,
            flow: Array2::zeros((m, n)),
            basic: vec![false; m * n],
            row_adj: vec![Vec::new(); m],
            col_adj: vec![Vec::new(); n],
        };
        let mut supply = a.to_vec();
        let mut demand = b.to_vec();
        let (mut i, mut j) = (0, 0);
        loop {
            let x = supply[i].min(demand[j]);
            basis.add(i, j, x);
            supply[i] -= x;
            demand[j] -= x;
            if i == m - 1 && j == n - 1 {
                break;
            }
            // a row that runs dry moves down; ties also move down, which
            // leaves a degenerate zero cell in the next row
            if j == n - 1 || (i < m - 1 && supply[i] <= demand[j]) {
                i += 1;
            } else {
                j += 1;
            }
        }
        basis
    }

    /// Dual potentials with `u[0] = 0` over the spanning tree.
    fn potentials(&self, cost: &Array2<f64>) -> (Vec<f64>, Vec<f64>) {
        let mut u = vec![f64::NAN; self.m];
        let mut v = vec![f64::NAN; self.n];
        u[0] = 0.0;
        let mut queue = VecDeque::from([Node::Row(0)]);
        while let Some(node) = queue.pop_front() {
            match node {
                Node::Row(i) => {
                    for &j in &self.row_adj[i] {
                        if v[j].is_nan() {
                            v[j] = cost[[i, j]] - u[i];
                            queue.push_back(Node::Col(j));
                        }
                    }
                }
                Node::Col(j) => {
                    for &i in &self.col_adj[j] {
                        if u[i].is_nan() {
                            u[i] = cost[[i, j]] - v[j];
                            queue.push_back(Node::Row(i));
                        }
                    }
                }
            }
        }
        (u, v)
    }

    /// Tree path from row `i0` to column `j0`, as the list of basic cells
    /// walked in order.
    fn path(&self, i0: usize, j0: usize) -> Vec<(usize, usize)> {
        let (m, n) = (self.m, self.n);
        // parent[node] = previous node; rows are 0..m, columns m..m+n
        let mut parent = vec![usize::MAX; m + n];
        let start = i0;
        let goal = m + j0;
        parent[start] = start;
        let mut queue = VecDeque::from([start]);
        while let Some(node) = queue.pop_front() {
            if node == goal {
                break;
            }
            let next: Vec<usize> = if node < m {
                self.row_adj[node].iter().map(|&j| m + j).collect()
            } else {
                self.col_adj[node - m].clone()
            };
            for nb in next {
                if parent[nb] == usize::MAX {
                    parent[nb] = node;
                    queue.push_back(nb);
                }
            }
        }
        let mut cells = Vec::new();
        let mut node = goal;
        while node != start {
            let prev = parent[node];
            let cell = if node < m { (node, prev - m) } else { (prev, node - m) };
            cells.push(cell);
            node = prev;
        }
        cells.reverse();
        cells
    }
}

#[derive(Clone, Copy)]
enum Node {
    Row(usize),
    Col(usize),
}

/// Exact solution of the balanced problem `min <C,T>` s.t. `T1 = a`,
/// `Tᵀ1 = b`, `T ≥ 0`.
pub fn solve_exact_ot(w: &WeightVectors, cost: &CostMatrix) -> Result<TransportPlan> {
    let (m, n) = (w.m(), w.n());
    if cost.entries().dim() != (m, n) {
        return Err(Error::Shape(format!(
            "cost {:?} for weights {m}x{n}",
            cost.entries().dim()
        )));
    }
    let (sa, sb): (f64, f64) = (w.a.iter().sum(), w.b.iter().sum());
    if (sa - sb).abs() > FEASIBILITY_TOL {
        return Err(Error::Infeasible(sa, sb));
    }
    let c = cost.entries();
    let scale = 1.0 + c.iter().fold(0.0f64, |acc, &x| acc.max(x.abs()));
    let eps = 1e-12 * scale;

    let mut basis = Basis::north_west(&w.a, &w.b);
    let max_pivots = 50 * (m * n) + 1000;
    let mut pivots = 0;
    loop {
        let (u, v) = basis.potentials(c);
        // Bland: lowest-index improving cell enters
        let entering = (0..m * n).find(|&k| {
            let (i, j) = (k / n, k % n);
            !basis.basic[k] && c[[i, j]] - u[i] - v[j] < -eps
        });
        let Some(k) = entering else { break };
        let (i0, j0) = (k / n, k % n);
        let path = basis.path(i0, j0);
        // odd positions along row->column path lose mass
        let minus: Vec<(usize, usize)> = path.iter().copied().step_by(2).collect();
        let plus: Vec<(usize, usize)> = path.iter().copied().skip(1).step_by(2).collect();
        let theta = minus
            .iter()
            .map(|&(i, j)| basis.flow[[i, j]])
            .fold(f64::INFINITY, f64::min);
        let leaving = minus
            .iter()
            .copied()
            .filter(|&(i, j)| basis.flow[[i, j]] == theta)
            .min_by_key(|&(i, j)| i * n + j)
            .expect("cycle has a minus cell");
        for &(i, j) in &minus {
            basis.flow[[i, j]] -= theta;
        }
        for &(i, j) in &plus {
            basis.flow[[i, j]] += theta;
        }
        basis.remove(leaving.0, leaving.1);
        basis.add(i0, j0, theta);

        pivots += 1;
        if pivots > max_pivots {
            return Err(Error::Data(format!(
                "transportation simplex exceeded {max_pivots} pivots"
            )));
        }
    }

    let plan = basis.flow;
    let objective = (&plan * c).sum();
    Ok(TransportPlan {
        plan,
        marginals: Marginals::Balanced,
        objective,
        iterations: pivots,
        objective_trace: vec![objective],
        converged: true,
        kkt_residual: 0.0,
    })
}
