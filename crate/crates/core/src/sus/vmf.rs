use std::f64::consts::PI;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::bessel::log_bessel_iv;
use crate::embed::EmbeddingMatrix;
use crate::error::{Error, Result};

/// Approximate maximum-likelihood von Mises-Fisher fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VmfParams {
    pub mu: Vec<f64>,
    pub kappa: f64,
    pub resultant_length: f64,
    pub dims: usize,
    /// No preferred direction: `kappa` is 0 and `mu` is arbitrary.
    pub degenerate: bool,
}

impl VmfParams {
    /// `κ ≈ ℓ(d − ℓ²)/(1 − ℓ²)` from a mean resultant length.
    pub fn concentration(resultant_length: f64, dims: usize) -> f64 {
        let l = resultant_length;
        l * (dims as f64 - l * l) / (1.0 - l * l)
    }

    /// `log C_d(κ)` of this fit.
    pub fn log_normalizer(&self) -> f64 {
        vmf_log_normalizer(self.dims, self.kappa)
    }

    /// Unnormalized log-density `κ μᵀx`.
    pub fn log_kernel(&self, x: &[f64]) -> f64 {
        self.kappa * self.mu.iter().zip(x).map(|(m, v)| m * v).sum::<f64>()
    }
}

/// `log C_d(κ) = (d/2 − 1) log κ − (d/2) log 2π − log I_{d/2−1}(κ)`.
pub fn vmf_log_normalizer(dims: usize, kappa: f64) -> f64 {
    let half = dims as f64 / 2.0;
    (half - 1.0) * kappa.ln() - half * (2.0 * PI).ln() - log_bessel_iv(half - 1.0, kappa)
}

pub(crate) fn fit_unit_rows(rows: &Array2<f64>) -> Result<VmfParams> {
    let (count, dims) = rows.dim();
    if count < 2 {
        return Err(Error::InvalidArgument(format!(
            "vMF fit needs at least 2 rows, got {count}"
        )));
    }
    let mean: Array1<f64> = rows.mean_axis(Axis(0)).expect("nonempty");
    let ell = mean.dot(&mean).sqrt();
    if ell < 1e-12 {
        let mut mu = vec![0.0; dims];
        if dims > 0 {
            mu[0] = 1.0;
        }
        return Ok(VmfParams {
            mu,
            kappa: 0.0,
            resultant_length: ell,
            dims,
            degenerate: true,
        });
    }
    if ell > 1.0 - 1e-12 {
        return Err(Error::ConcentrationOverflow(ell));
    }
    Ok(VmfParams {
        mu: (mean / ell).to_vec(),
        kappa: VmfParams::concentration(ell, dims),
        resultant_length: ell,
        dims,
        degenerate: false,
    })
}

/// Fit from (already normalized) rows. Rows are renormalized in f64 first.
pub fn fit_vmf(normalized: &EmbeddingMatrix) -> Result<VmfParams> {
    fit_unit_rows(&normalized.unit_rows_f64()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn from(rows: &[&[f64]]) -> EmbeddingMatrix {
        let rows: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
        let ids = (0..rows.len()).map(|i| i.to_string()).collect();
        EmbeddingMatrix::from_rows(&rows, ids).unwrap()
    }

    #[test]
    fn antipodal_is_degenerate() {
        let p = fit_vmf(&from(&[&[1.0, 0.0, 0.0], &[-1.0, 0.0, 0.0]])).unwrap();
        assert!(p.degenerate);
        assert_eq!(p.kappa, 0.0);
        assert_eq!(p.resultant_length, 0.0);
    }

    #[test]
    fn closed_form_concentration() {
        assert!((VmfParams::concentration(0.5, 3) - 11.0 / 6.0).abs() < 1e-15);
        // two unit vectors at 120° have mean length 0.5
        let c = (2.0 * PI / 3.0).cos();
        let s = (2.0 * PI / 3.0).sin();
        let p = fit_vmf(&from(&[&[1.0, 0.0, 0.0], &[c, s, 0.0]])).unwrap();
        assert!((p.resultant_length - 0.5).abs() < 1e-7);
        let want = VmfParams::concentration(p.resultant_length, 3);
        assert!((p.kappa - want).abs() < 1e-12);
        let norm: f64 = p.mu.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9);
    }

    #[test]
    fn collinear_overflows() {
        let e = fit_vmf(&from(&[&[0.0, 2.0], &[0.0, 1.0], &[0.0, 5.0]])).unwrap_err();
        assert!(matches!(e, Error::ConcentrationOverflow(_)));
    }

    #[test]
    fn normalizer_integrates_to_one_on_circle() {
        // d = 2: ∫ C_2(κ) exp(κ cos θ) dθ over [0, 2π) = 1
        let kappa = 3.7;
        let log_c = vmf_log_normalizer(2, kappa);
        let steps = 20_000;
        let h = 2.0 * PI / steps as f64;
        let total: f64 = (0..steps)
            .map(|k| (log_c + kappa * (k as f64 * h).cos()).exp() * h)
            .sum();
        assert!((total - 1.0).abs() < 1e-10, "{total}");
    }
}
