//! Active-set finishing step for the penalized problem.
//!
//! At a stationary point every supported cell satisfies
//! `C_ij + 2λ1 x_i + 2λ2 y_j = 0` with `x = T1 − a`, `y = Tᵀ1 − b`. When the
//! support is a forest this pins down `x` and `y` per tree up to one free
//! potential, which the tree's mass balance fixes; the flows then follow by
//! peeling leaves. The caller decides whether the candidate is kept.

use ndarray::Array2;

use super::WeightVectors;
use crate::embed::CostMatrix;

const NEGATIVE_SLACK: f64 = 1e-14;

struct Forest {
    parent: Vec<usize>,
}

impl Forest {
    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// False if `a` and `b` were already connected.
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra.max(rb)] = ra.min(rb);
        true
    }
}

/// How to guess the support from an iterate.
#[derive(Debug, Clone, Copy)]
pub(super) enum Support {
    /// Cells above this fraction of the largest, heaviest first.
    MassFloor(f64),
    /// Positive cells whose gradient is below this multiple of
    /// `1 + max C`, smallest gradient first.
    GradientCeiling(f64),
}

pub(super) const SUPPORT_RULES: [Support; 8] = [
    Support::MassFloor(1e-2),
    Support::MassFloor(1e-4),
    Support::MassFloor(1e-6),
    Support::MassFloor(1e-9),
    Support::GradientCeiling(1e-3),
    Support::GradientCeiling(1e-4),
    Support::GradientCeiling(1e-5),
    Support::GradientCeiling(1e-6),
];

/// Candidate cells in the order they are offered to the forest.
pub(super) fn support_cells(plan: &Array2<f64>, grad: &Array2<f64>, rule: Support, cost_scale: f64) -> Vec<(usize, usize)> {
    let top = plan.iter().fold(0.0f64, |acc, &x| acc.max(x));
    let mut cells: Vec<(usize, usize)>;
    match rule {
        Support::MassFloor(f) => {
            cells = plan.indexed_iter().filter(|(_, &t)| t > f * top).map(|(ij, _)| ij).collect();
            cells.sort_by(|&p, &q| plan[q].total_cmp(&plan[p]).then(p.cmp(&q)));
        }
        Support::GradientCeiling(g) => {
            let ceiling = g * cost_scale;
            cells = plan
                .indexed_iter()
                .filter(|&(ij, &t)| t > 0.0 && grad[ij] < ceiling)
                .map(|(ij, _)| ij)
                .collect();
            cells.sort_by(|&p, &q| grad[p].total_cmp(&grad[q]).then(p.cmp(&q)));
        }
    }
    cells
}

/// Stationary plan on a spanning forest of `cells` (taken greedily in the
/// given order), or `None` if that forest does not yield a nonnegative plan.
pub(super) fn forest_candidate(
    cells: &[(usize, usize)],
    w: &WeightVectors,
    cost: &CostMatrix,
    lambda1: f64,
    lambda2: f64,
) -> Option<Array2<f64>> {
    let (m, n) = cost.entries().dim();
    let c = cost.entries();
    if cells.is_empty() {
        return None;
    }

    // nodes: rows 0..m, columns m..m+n
    let mut forest = Forest {
        parent: (0..m + n).collect(),
    };
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); m + n];
    for &(i, j) in cells {
        if forest.union(i, m + j) {
            adj[i].push(m + j);
            adj[m + j].push(i);
        }
    }

    // potential of node k is p[k] + q[k]·t for its tree's free t
    let mut p = vec![0.0; m + n];
    let mut q = vec![0.0; m + n];
    let mut seen = vec![false; m + n];
    let target = |k: usize| if k < m { w.a[k] } else { w.b[k - m] };
    let mut order = Vec::with_capacity(m + n);
    for root in 0..m + n {
        if seen[root] {
            continue;
        }
        seen[root] = true;
        let start = order.len();
        order.push(root);
        if adj[root].is_empty() {
            // nothing shipped: the marginal is zero
            p[root] = -target(root);
            continue;
        }
        q[root] = if root < m { 1.0 } else { -lambda1 / lambda2 };
        let mut head = start;
        while head < order.len() {
            let k = order[head];
            head += 1;
            for &nb in &adj[k] {
                if seen[nb] {
                    continue;
                }
                seen[nb] = true;
                let (i, j) = if k < m { (k, nb - m) } else { (nb, k - m) };
                if nb < m {
                    // x_i = (−C_ij − 2λ2 y_j) / 2λ1
                    p[nb] = (-c[[i, j]] - 2.0 * lambda2 * p[k]) / (2.0 * lambda1);
                    q[nb] = -lambda2 / lambda1 * q[k];
                } else {
                    p[nb] = (-c[[i, j]] - 2.0 * lambda1 * p[k]) / (2.0 * lambda2);
                    q[nb] = -lambda1 / lambda2 * q[k];
                }
                order.push(nb);
            }
        }
        // Σ_rows (a + x) = Σ_cols (b + y)
        let (mut lhs, mut slope) = (0.0, 0.0);
        for &k in &order[start..] {
            let sign = if k < m { 1.0 } else { -1.0 };
            lhs += sign * (target(k) + p[k]);
            slope += sign * q[k];
        }
        let t = -lhs / slope;
        for &k in &order[start..] {
            p[k] += q[k] * t;
        }
    }

    // p now holds x and y; peel leaves to recover flows
    let mut residual: Vec<f64> = (0..m + n).map(|k| target(k) + p[k]).collect();
    if residual.iter().any(|&v| v < -NEGATIVE_SLACK) {
        return None;
    }
    let mut degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut done = vec![false; m + n];
    let mut stack: Vec<usize> = (0..m + n).filter(|&k| degree[k] == 1).collect();
    let mut out = Array2::zeros((m, n));
    while let Some(k) = stack.pop() {
        if done[k] || degree[k] != 1 {
            continue;
        }
        done[k] = true;
        let Some(&nb) = adj[k].iter().find(|&&nb| !done[nb]) else {
            continue;
        };
        let flow = residual[k];
        if flow < -NEGATIVE_SLACK {
            return None;
        }
        let (i, j) = if k < m { (k, nb - m) } else { (nb, k - m) };
        out[[i, j]] = flow.max(0.0);
        residual[nb] -= flow;
        degree[k] = 0;
        degree[nb] -= 1;
        if degree[nb] == 1 {
            stack.push(nb);
        }
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ot::kkt_residual;
    use ndarray::array;

    #[test]
    fn diagonal_support_recovers_closed_form() {
        // zero-cost diagonal: each row ships min(a, b) shifted by the penalty balance
        let w = WeightVectors::uniform(2, 2);
        let c = CostMatrix::new(array![[0.0, 1.0], [1.0, 0.0]]).unwrap();
        let t = forest_candidate(&[(0, 0), (1, 1)], &w, &c, 1.0, 1.0).unwrap();
        assert!((t[[0, 0]] - 0.5).abs() < 1e-15 && (t[[1, 1]] - 0.5).abs() < 1e-15);
        assert!(kkt_residual(&t, &w, &c, 1.0, 1.0) < 1e-15);
    }

    #[test]
    fn single_cell_closed_form() {
        // 1x1: minimize C t + 2λ (t − 1)², so t = 1 − C/(4λ)
        let w = WeightVectors::uniform(1, 1);
        let c = CostMatrix::new(array![[0.5]]).unwrap();
        let t = forest_candidate(&[(0, 0)], &w, &c, 2.0, 2.0).unwrap();
        assert!((t[[0, 0]] - (1.0 - 0.5 / 8.0)).abs() < 1e-15);
    }

    #[test]
    fn empty_support_has_no_candidate() {
        let w = WeightVectors::uniform(2, 2);
        let c = CostMatrix::new(Array2::zeros((2, 2))).unwrap();
        assert!(forest_candidate(&[], &w, &c, 1.0, 1.0).is_none());
    }

    #[test]
    fn cycles_are_skipped() {
        let w = WeightVectors::uniform(2, 2);
        let c = CostMatrix::new(array![[0.0, 0.0], [0.0, 0.0]]).unwrap();
        let t = forest_candidate(&[(0, 0), (0, 1), (1, 0), (1, 1)], &w, &c, 1.0, 1.0).unwrap();
        assert_eq!(t[[1, 1]], 0.0);
        assert!(kkt_residual(&t, &w, &c, 1.0, 1.0) < 1e-15);
    }

    #[test]
    fn support_rules_order_cells() {
        let plan = array![[0.3, 1e-7], [0.0, 0.2]];
        let grad = array![[0.0, -1.0], [5.0, 1e-3]];
        assert_eq!(support_cells(&plan, &grad, Support::MassFloor(1e-3), 1.0), vec![(0, 0), (1, 1)]);
        assert_eq!(
            support_cells(&plan, &grad, Support::GradientCeiling(1e-2), 1.0),
            vec![(0, 1), (0, 0), (1, 1)]
        );
    }
}
