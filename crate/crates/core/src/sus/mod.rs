//! Per-instance change scores: Sense Usage Shift from a transport plan and
//! the vMF log-density-ratio baseline.

mod bessel;
mod vmf;

use serde::{Deserialize, Serialize};

use crate::embed::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::ot::{marginals, TransportPlan, WeightVectors};

pub use bessel::log_bessel_iv;
pub use vmf::{fit_vmf, vmf_log_normalizer, VmfParams};

/// `alpha[i]` scores old instance `i`, `beta[j]` modern instance `j`.
/// Positive means the instance's sense became relatively more frequent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SusScores {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl SusScores {
    /// Old scores followed by modern scores.
    pub fn pooled(&self) -> impl Iterator<Item = f64> + '_ {
        self.alpha.iter().chain(&self.beta).copied()
    }

    pub fn max_abs(&self) -> f64 {
        self.pooled().fold(0.0, |m, x| m.max(x.abs()))
    }
}

/// `α_i = −(a_i − Σ_j T_ij)/a_i`, `β_j = (b_j − Σ_i T_ij)/b_j`.
pub fn compute_sus(plan: &TransportPlan, w: &WeightVectors) -> Result<SusScores> {
    if plan.plan.dim() != (w.m(), w.n()) {
        return Err(Error::Shape(format!(
            "plan {:?} for weights {}x{}",
            plan.plan.dim(),
            w.m(),
            w.n()
        )));
    }
    if let Some(i) = w.a.iter().position(|&x| x <= 0.0) {
        return Err(Error::ZeroWeight(format!("old instance {i}")));
    }
    if let Some(j) = w.b.iter().position(|&x| x <= 0.0) {
        return Err(Error::ZeroWeight(format!("modern instance {j}")));
    }
    let (sent, received) = marginals(&plan.plan);
    let alpha = w.a.iter().zip(&sent).map(|(a, s)| -(a - s) / a).collect();
    let beta = w.b.iter().zip(&received).map(|(b, r)| (b - r) / b).collect();
    Ok(SusScores { alpha, beta })
}

/// `log p_T(x) − log p_S(x)`; the normalizer difference is added only when
/// `include_normalizer` is set.
pub fn log_density_ratio(
    x: &[f64],
    old: &VmfParams,
    modern: &VmfParams,
    include_normalizer: bool,
) -> f64 {
    let mut v = modern.log_kernel(x) - old.log_kernel(x);
    if include_normalizer {
        v += normalizer_shift(old, modern);
    }
    v
}

fn normalizer_shift(old: &VmfParams, modern: &VmfParams) -> f64 {
    if old.kappa == modern.kappa && old.dims == modern.dims {
        0.0
    } else {
        modern.log_normalizer() - old.log_normalizer()
    }
}

/// Log-density ratio of separate vMF fits, evaluated at every normalized
/// old and modern embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdrScores {
    pub old: Vec<f64>,
    pub modern: Vec<f64>,
    pub old_fit: VmfParams,
    pub modern_fit: VmfParams,
    pub include_normalizer: bool,
}

pub fn ldr_scores(u: &EmbeddingMatrix, v: &EmbeddingMatrix, include_normalizer: bool) -> Result<LdrScores> {
    if u.dims() != v.dims() {
        return Err(Error::DimensionMismatch(u.dims(), v.dims()));
    }
    let uu = u.unit_rows_f64()?;
    let vv = v.unit_rows_f64()?;
    let old_fit = vmf::fit_unit_rows(&uu)?;
    let modern_fit = vmf::fit_unit_rows(&vv)?;
    if old_fit.degenerate {
        return Err(Error::DegenerateVmf("OLD"));
    }
    if modern_fit.degenerate {
        return Err(Error::DegenerateVmf("MODERN"));
    }
    let shift = if include_normalizer {
        normalizer_shift(&old_fit, &modern_fit)
    } else {
        0.0
    };
    let score = |rows: &ndarray::Array2<f64>| -> Vec<f64> {
        rows.rows()
            .into_iter()
            .map(|r| {
                let x = r.as_slice().expect("standard layout");
                log_density_ratio(x, &old_fit, &modern_fit, false) + shift
            })
            .collect()
    };
    Ok(LdrScores {
        old: score(&uu),
        modern: score(&vv),
        old_fit,
        modern_fit,
        include_normalizer,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ot::Marginals;
    use ndarray::{array, Array2};

    fn plan(t: Array2<f64>) -> TransportPlan {
        TransportPlan {
            plan: t,
            marginals: Marginals::Penalized {
                lambda1: 1.0,
                lambda2: 1.0,
            },
            objective: 0.0,
            iterations: 0,
            objective_trace: vec![],
            converged: true,
            kkt_residual: 0.0,
        }
    }

    #[test]
    fn balanced_plan_scores_zero() {
        let w = WeightVectors::uniform(2, 2);
        let s = compute_sus(&plan(array![[0.25, 0.25], [0.25, 0.25]]), &w).unwrap();
        assert!(s.pooled().all(|x| x == 0.0));
    }

    #[test]
    fn empty_plan_scores_extremes() {
        let w = WeightVectors::uniform(3, 2);
        let s = compute_sus(&plan(Array2::zeros((3, 2))), &w).unwrap();
        assert_eq!(s.alpha, vec![-1.0; 3]);
        assert_eq!(s.beta, vec![1.0; 2]);
    }

    #[test]
    fn hand_instance() {
        let w = WeightVectors::uniform(2, 2);
        let s = compute_sus(&plan(array![[0.5, 0.0], [0.0, 0.25]]), &w).unwrap();
        assert_eq!(s.alpha, vec![0.0, -0.5]);
        assert_eq!(s.beta, vec![0.0, 0.5]);
        let total: f64 = s.pooled().sum();
        assert!(total.abs() < 1e-12);
    }

    #[test]
    fn zero_weight_rejected() {
        let w = WeightVectors {
            a: vec![1.0, 0.0],
            b: vec![1.0],
        };
        assert!(matches!(
            compute_sus(&plan(Array2::zeros((2, 1))), &w),
            Err(Error::ZeroWeight(_))
        ));
    }

    fn fit(mu: Vec<f64>, kappa: f64) -> VmfParams {
        VmfParams {
            dims: mu.len(),
            mu,
            kappa,
            resultant_length: 0.5,
            degenerate: false,
        }
    }

    #[test]
    fn synthetic_ratio() {
        let old = fit(vec![1.0, 0.0, 0.0], 2.0);
        let modern = fit(vec![0.0, 1.0, 0.0], 2.0);
        let x = [1.0, 0.0, 0.0];
        assert!((log_density_ratio(&x, &old, &modern, true) + 2.0).abs() < 1e-12);
        assert!((log_density_ratio(&x, &old, &modern, false) + 2.0).abs() < 1e-12);
    }

    fn matrix(rows: &[[f64; 3]], prefix: &str) -> EmbeddingMatrix {
        let rows: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
        let ids = (0..rows.len()).map(|i| format!("{prefix}{i}")).collect();
        EmbeddingMatrix::from_rows(&rows, ids).unwrap()
    }

    #[test]
    fn identical_sets_give_zero_ldr() {
        let rows = [[1.0, 0.2, 0.1], [0.9, -0.1, 0.3], [1.1, 0.0, -0.2]];
        let s = ldr_scores(&matrix(&rows, "o"), &matrix(&rows, "m"), true).unwrap();
        assert!(s.old.iter().chain(&s.modern).all(|x| x.abs() < 1e-9));
    }

    #[test]
    fn normalizer_is_a_constant_shift() {
        let u = matrix(&[[1.0, 0.2, 0.1], [0.9, -0.1, 0.3], [1.1, 0.0, -0.2]], "o");
        let v = matrix(&[[0.1, 1.0, 0.1], [0.3, 0.8, -0.4], [0.6, 0.9, 0.0], [0.0, 1.0, 0.5]], "m");
        let with = ldr_scores(&u, &v, true).unwrap();
        let without = ldr_scores(&u, &v, false).unwrap();
        let diffs: Vec<f64> = with
            .old
            .iter()
            .chain(&with.modern)
            .zip(without.old.iter().chain(&without.modern))
            .map(|(a, b)| a - b)
            .collect();
        assert!(diffs.iter().all(|d| (d - diffs[0]).abs() < 1e-12));
        assert!(diffs[0].abs() > 1e-6);
    }

    #[test]
    fn degenerate_fit_is_an_error() {
        let u = matrix(&[[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]], "o");
        let v = matrix(&[[0.0, 1.0, 0.0], [0.1, 1.0, 0.0]], "m");
        assert!(matches!(ldr_scores(&u, &v, true), Err(Error::DegenerateVmf("OLD"))));
    }
}
