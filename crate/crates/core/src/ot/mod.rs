//! Balanced and L2-penalized unbalanced optimal transport.
//!
//! The unbalanced objective is
//!
//! ```text
//! <C, T> + λ1 ‖T 1 − a‖² + λ2 ‖Tᵀ 1 − b‖²,   T ≥ 0
//! ```
//!
//! solved by [`solve_uot_mm`]. [`solve_exact_ot`] handles the hard-marginal
//! problem with a transportation simplex.

mod exact;
mod mm;
mod polish;

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::embed::{self, CostMatrix};
use crate::error::{Error, Result};

pub use exact::solve_exact_ot;
pub use mm::{kkt_residual, mm_step, solve_uot_mm, solve_uot_mm_hinted, MmOptions, POLISH_EVERY, StopReason};

/// Instance weights on the two sides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVectors {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl WeightVectors {
    /// Nonnegative weights, each side summing to 1 within 1e-12.
    pub fn new(a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        for (side, w) in [("a", &a), ("b", &b)] {
            if w.is_empty() {
                return Err(Error::InvalidArgument(format!("weight vector {side} is empty")));
            }
            if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "weight vector {side} has negative or non-finite entries"
                )));
            }
            let s: f64 = w.iter().sum();
            if (s - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidArgument(format!(
                    "weight vector {side} sums to {s}, expected 1"
                )));
            }
        }
        Ok(WeightVectors { a, b })
    }

    pub fn uniform(m: usize, n: usize) -> Self {
        WeightVectors {
            a: vec![1.0 / m as f64; m],
            b: vec![1.0 / n as f64; n],
        }
    }

    pub fn m(&self) -> usize {
        self.a.len()
    }

    pub fn n(&self) -> usize {
        self.b.len()
    }

    pub fn swapped(&self) -> Self {
        WeightVectors {
            a: self.b.clone(),
            b: self.a.clone(),
        }
    }
}

/// How the marginals were enforced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Marginals {
    /// Hard constraints; both penalties are effectively infinite.
    Balanced,
    /// L2 penalties with the given weights.
    Penalized { lambda1: f64, lambda2: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportPlan {
    pub plan: Array2<f64>,
    pub marginals: Marginals,
    pub objective: f64,
    pub iterations: usize,
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    pub kkt_residual: f64,
}

impl TransportPlan {
    pub fn m(&self) -> usize {
        self.plan.nrows()
    }

    pub fn n(&self) -> usize {
        self.plan.ncols()
    }

    pub fn lambda1(&self) -> f64 {
        match self.marginals {
            Marginals::Balanced => f64::INFINITY,
            Marginals::Penalized { lambda1, .. } => lambda1,
        }
    }

    pub fn lambda2(&self) -> f64 {
        match self.marginals {
            Marginals::Balanced => f64::INFINITY,
            Marginals::Penalized { lambda2, .. } => lambda2,
        }
    }

    /// `<C, T>`.
    pub fn transport_cost(&self, cost: &CostMatrix) -> f64 {
        (&self.plan * cost.entries()).sum()
    }

    pub fn total_mass(&self) -> f64 {
        self.plan.sum()
    }

    /// Rows: `(row id, column id, mass)` for every cell, row-major.
    pub fn write_csv(&self, path: impl AsRef<Path>, row_ids: &[String], col_ids: &[String]) -> Result<()> {
        let path = path.as_ref();
        if row_ids.len() != self.m() || col_ids.len() != self.n() {
            return Err(Error::Shape(format!(
                "{}x{} ids for a {}x{} plan",
                row_ids.len(),
                col_ids.len(),
                self.m(),
                self.n()
            )));
        }
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(file));
        w.write_record(["row_id", "col_id", "mass"])?;
        for ((i, j), &t) in self.plan.indexed_iter() {
            // tiny masses in exponent form instead of dozens of zeros
            let mass = if t != 0.0 && t.abs() < 1e-6 { format!("{t:e}") } else { t.to_string() };
            w.write_record([row_ids[i].as_str(), col_ids[j].as_str(), &mass])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Dense f32 block in the `.suse` layout.
    pub fn write_block(&self, path: impl AsRef<Path>) -> Result<()> {
        let data: Vec<f32> = self.plan.iter().map(|&x| x as f32).collect();
        embed::write_block(path, self.m(), self.n(), &data)
    }
}

/// `(T 1, Tᵀ 1)`.
pub fn marginals(plan: &Array2<f64>) -> (Array1<f64>, Array1<f64>) {
    (plan.sum_axis(Axis(1)), plan.sum_axis(Axis(0)))
}

fn check_shapes(plan: &Array2<f64>, w: &WeightVectors, cost: &CostMatrix) -> Result<()> {
    if plan.dim() != (w.m(), w.n()) || cost.entries().dim() != (w.m(), w.n()) {
        return Err(Error::Shape(format!(
            "plan {:?}, cost {:?}, weights {}x{}",
            plan.dim(),
            cost.entries().dim(),
            w.m(),
            w.n()
        )));
    }
    Ok(())
}

/// `<C,T> + λ1‖T1−a‖² + λ2‖Tᵀ1−b‖²`.
pub fn uot_objective(
    plan: &Array2<f64>,
    w: &WeightVectors,
    cost: &CostMatrix,
    lambda1: f64,
    lambda2: f64,
) -> Result<f64> {
    check_shapes(plan, w, cost)?;
    Ok(objective_unchecked(plan, w, cost, lambda1, lambda2))
}

fn objective_unchecked(
    plan: &Array2<f64>,
    w: &WeightVectors,
    cost: &CostMatrix,
    lambda1: f64,
    lambda2: f64,
) -> f64 {
    let (r, c) = marginals(plan);
    let linear = (plan * cost.entries()).sum();
    mm::penalty_sum(r.as_slice().expect("contiguous"), c.as_slice().expect("contiguous"), linear, w, lambda1, lambda2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn cost(c: Array2<f64>) -> CostMatrix {
        CostMatrix::new(c).unwrap()
    }

    #[test]
    fn weights_validate() {
        assert!(WeightVectors::new(vec![0.5, 0.5], vec![1.0]).is_ok());
        assert!(WeightVectors::new(vec![0.5, 0.4], vec![1.0]).is_err());
        assert!(WeightVectors::new(vec![1.5, -0.5], vec![1.0]).is_err());
        let u = WeightVectors::uniform(3, 7);
        assert!((u.a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((u.b.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn objective_plug_ins() {
        let w = WeightVectors::uniform(2, 2);
        let c = cost(array![[0.0, 1.0], [1.0, 0.0]]);
        let zero = Array2::zeros((2, 2));
        let v = uot_objective(&zero, &w, &c, 2.0, 3.0).unwrap();
        assert!((v - (2.0 * 0.5 + 3.0 * 0.5)).abs() < 1e-15);

        let exact = array![[0.25, 0.25], [0.25, 0.25]];
        assert!((uot_objective(&exact, &w, &c, 7.0, 7.0).unwrap() - 0.5).abs() < 1e-15);

        // diagonal plan on an off-diagonal cost: <C,T> = 0, each penalty 0.25²
        let t = array![[0.5, 0.0], [0.0, 0.25]];
        assert!((uot_objective(&t, &w, &c, 1.0, 1.0).unwrap() - 0.125).abs() < 1e-15);
        let shifted = array![[0.5, 0.0], [0.25, 0.0]];
        let want = 0.25 + 0.0625 + (0.0625 + 0.25);
        assert!((uot_objective(&shifted, &w, &c, 1.0, 1.0).unwrap() - want).abs() < 1e-15);

        let bad = Array2::zeros((3, 2));
        assert!(uot_objective(&bad, &w, &c, 1.0, 1.0).is_err());
    }

    #[test]
    fn marginal_cases() {
        let (r, c) = marginals(&Array2::zeros((2, 3)));
        assert!(r.iter().chain(c.iter()).all(|&x| x == 0.0));

        let a = array![0.2, 0.8];
        let b = array![0.1, 0.3, 0.6];
        let outer = a.clone().insert_axis(Axis(1)).dot(&b.clone().insert_axis(Axis(0)));
        let (r, c) = marginals(&outer);
        assert!((&r - &a).iter().all(|x| x.abs() < 1e-15));
        assert!((&c - &b).iter().all(|x| x.abs() < 1e-15));

        let eye = Array2::<f64>::eye(5) / 5.0;
        let (r, c) = marginals(&eye);
        assert!(r.iter().chain(c.iter()).all(|&x| (x - 0.2).abs() < 1e-15));
    }

    #[test]
    fn plan_exports() {
        let dir = tempfile::tempdir().unwrap();
        let w = WeightVectors::uniform(2, 2);
        let c = cost(array![[0.0, 1.0], [1.0, 0.0]]);
        let plan = solve_exact_ot(&w, &c).unwrap();
        let ids = vec!["a".to_string(), "b".to_string()];
        let p = dir.path().join("plan.csv");
        plan.write_csv(&p, &ids, &ids).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.contains("a,a,0.5"));
        let b = dir.path().join("plan.suse");
        plan.write_block(&b).unwrap();
        let (r, n, data) = embed::read_block(&b).unwrap();
        assert_eq!((r, n), (2, 2));
        assert_eq!(data, vec![0.5, 0.0, 0.0, 0.5]);
    }
}
