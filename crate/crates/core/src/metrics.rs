//! Instance-level change scores (τ) and the word-level f/g metric families.
//!
//! All logarithms are natural and all variances are population variances.
//! Word metrics are partial: a field is `None` when its inputs were not
//! supplied or the value is undefined for the word.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embed::{cosine_cost, CostMatrix, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::ingest::SenseFrequencyDistribution;
use crate::ot::TransportPlan;
use crate::senses::Prototypes;
use crate::sus::{LdrScores, SusScores};

const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ScoreSource {
    Gold,
    Sus,
    Ldr,
    Widid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceChangeScore {
    pub id: String,
    pub tau: f64,
    pub source: ScoreSource,
    /// The count ratio was 0/x or x/0 and `tau` is a bound.
    pub imputed: bool,
}

/// Values substituted for senses that vanish or emerge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImputationBounds {
    pub min_tau: f64,
    pub max_tau: f64,
}

/// `ln(Y/X)`, or a bound when one count is zero. Second value: imputed.
pub fn tau_from_counts(x: u64, y: u64, bounds: ImputationBounds) -> Option<(f64, bool)> {
    match (x, y) {
        (0, 0) => None,
        (_, 0) => Some((bounds.min_tau, true)),
        (0, _) => Some((bounds.max_tau, true)),
        _ => Some(((y as f64 / x as f64).ln(), false)),
    }
}

/// τ of sense `sense` under the frequency distribution `sfd`.
pub fn tau_score(sense: u32, sfd: &SenseFrequencyDistribution, bounds: ImputationBounds) -> Result<(f64, bool)> {
    let (x, y) = sfd.counts(sense).ok_or(Error::UnknownSense(sense))?;
    tau_from_counts(x, y, bounds).ok_or(Error::SenseAbsent(sense))
}

fn check_distribution(p: &[f64]) -> Result<()> {
    if let Some(v) = p.iter().find(|&&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("probability entry {v}")));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::InvalidArgument(format!("probabilities sum to {total}")));
    }
    Ok(())
}

fn xlogy_over(p: f64, q: f64) -> f64 {
    if p == 0.0 {
        0.0
    } else {
        p * (p / q).ln()
    }
}

/// Jensen-Shannon divergence, natural log.
pub fn jsd(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Shape(format!("distributions of length {} and {}", p.len(), q.len())));
    }
    check_distribution(p)?;
    check_distribution(q)?;
    let mut total = 0.0;
    for (&x, &y) in p.iter().zip(q) {
        let m = 0.5 * (x + y);
        total += 0.5 * xlogy_over(x, m) + 0.5 * xlogy_over(y, m);
    }
    Ok(total.max(0.0))
}

pub fn entropy(p: &[f64]) -> Result<f64> {
    check_distribution(p)?;
    Ok(-p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>())
}

/// Mean cosine distance over all old/modern pairs.
pub fn apd(u: &EmbeddingMatrix, v: &EmbeddingMatrix) -> Result<f64> {
    Ok(cosine_cost(u, v)?.mean())
}

pub fn canberra(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(&a, &b)| {
            let den = a.abs() + b.abs();
            if den == 0.0 {
                0.0
            } else {
                (a - b).abs() / den
            }
        })
        .sum()
}

/// Mean Canberra distance over all old/modern prototype pairs.
pub fn canberra_apdp(old: &[Vec<f64>], modern: &[Vec<f64>]) -> Result<f64> {
    if old.is_empty() {
        return Err(Error::NoPrototypes("OLD"));
    }
    if modern.is_empty() {
        return Err(Error::NoPrototypes("MODERN"));
    }
    let d = old[0].len();
    if let Some(p) = old.iter().chain(modern).find(|p| p.len() != d) {
        return Err(Error::DimensionMismatch(d, p.len()));
    }
    let mut total = 0.0;
    for x in old {
        for y in modern {
            total += canberra(x, y);
        }
    }
    Ok(total / (old.len() * modern.len()) as f64)
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Population variance.
pub fn variance(x: &[f64]) -> f64 {
    let mu = mean(x);
    x.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / x.len() as f64
}

fn log_ratio(num: f64, den: f64) -> Option<f64> {
    (num > 0.0 && den > 0.0 && num.is_finite() && den.is_finite()).then(|| (num / den).ln())
}

/// Every word-level metric. `None` marks a metric whose inputs were absent
/// or for which the value is undefined.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WordChangeScores {
    pub word: String,
    pub theta: f64,
    pub f_sus: Option<f64>,
    pub f1: Option<f64>,
    pub f2: Option<f64>,
    pub f3: Option<f64>,
    pub f_ot: Option<f64>,
    pub f_apd: Option<f64>,
    pub f_ldr: Option<f64>,
    pub f_widid: Option<f64>,
    pub f_apdp: Option<f64>,
    pub g_sus: Option<f64>,
    pub g1: Option<f64>,
    pub g_vmf: Option<f64>,
    pub g_ldr: Option<f64>,
    pub g_widid: Option<f64>,
    pub v_s: Option<f64>,
    pub v_t: Option<f64>,
    pub u_s: Option<f64>,
    pub u_t: Option<f64>,
    pub f_star: Option<f64>,
    pub g_star: Option<f64>,
}

macro_rules! merge_fields {
    ($dst:ident, $src:ident; $($f:ident),*) => {
        $( if $src.$f.is_some() { $dst.$f = $src.$f; } )*
    };
}

impl WordChangeScores {
    pub fn new(word: impl Into<String>, theta: f64) -> Self {
        WordChangeScores {
            word: word.into(),
            theta,
            ..Self::default()
        }
    }

    /// Copy every field set in `other` over this one.
    pub fn merge(mut self, other: &WordChangeScores) -> Self {
        merge_fields!(self, other; f_sus, f1, f2, f3, f_ot, f_apd, f_ldr, f_widid, f_apdp,
            g_sus, g1, g_vmf, g_ldr, g_widid, v_s, v_t, u_s, u_t, f_star, g_star);
        self
    }

    /// Look a metric up by its column name.
    pub fn get(&self, metric: &str) -> Option<f64> {
        match metric {
            "f_sus" => self.f_sus,
            "f1" => self.f1,
            "f2" => self.f2,
            "f3" => self.f3,
            "f_ot" => self.f_ot,
            "f_apd" => self.f_apd,
            "f_ldr" => self.f_ldr,
            "f_widid" => self.f_widid,
            "f_apdp" => self.f_apdp,
            "g_sus" => self.g_sus,
            "g1" => self.g1,
            "g_vmf" => self.g_vmf,
            "g_ldr" => self.g_ldr,
            "g_widid" => self.g_widid,
            "f_star" => self.f_star,
            "g_star" => self.g_star,
            _ => None,
        }
    }

    fn cells(&self) -> Vec<Option<f64>> {
        vec![
            self.f_sus, self.f1, self.f2, self.f3, self.f_ot, self.f_apd, self.f_ldr, self.f_widid,
            self.f_apdp, self.g_sus, self.g1, self.g_vmf, self.g_ldr, self.g_widid, self.v_s, self.v_t,
            self.u_s, self.u_t, self.f_star, self.g_star,
        ]
    }
}

pub const MAGNITUDE_METRICS: [&str; 9] = ["f_sus", "f1", "f2", "f3", "f_ot", "f_apd", "f_ldr", "f_widid", "f_apdp"];
pub const SCOPE_METRICS: [&str; 5] = ["g_sus", "g1", "g_vmf", "g_ldr", "g_widid"];

const CSV_HEADER: [&str; 22] = [
    "word", "theta", "f_sus", "f1", "f2", "f3", "f_ot", "f_apd", "f_ldr", "f_widid", "f_apdp", "g_sus", "g1",
    "g_vmf", "g_ldr", "g_widid", "v_s", "v_t", "u_s", "u_t", "f_star", "g_star",
];

/// Inputs to [`magnitude_suite`]; leave a field `None` to skip its metrics.
#[derive(Debug, Clone, Copy, Default)]
pub struct MagnitudeInputs<'a> {
    pub sus: Option<&'a SusScores>,
    pub plan: Option<&'a TransportPlan>,
    pub cost: Option<&'a CostMatrix>,
    pub ot_plan: Option<&'a TransportPlan>,
    pub embeddings: Option<(&'a EmbeddingMatrix, &'a EmbeddingMatrix)>,
    pub ldr: Option<&'a LdrScores>,
    pub sfd_hat: Option<&'a SenseFrequencyDistribution>,
    pub prototypes: Option<&'a Prototypes>,
}

/// `-Σ_{α<-θ} α + Σ_{β>θ} β`.
pub fn f2(sus: &SusScores, theta: f64) -> f64 {
    -sus.alpha.iter().filter(|&&a| a < -theta).sum::<f64>() + sus.beta.iter().filter(|&&b| b > theta).sum::<f64>()
}

/// `Σ_{α<-θ} α + Σ_{β>θ} β`.
pub fn g1(sus: &SusScores, theta: f64) -> f64 {
    sus.alpha.iter().filter(|&&a| a < -theta).sum::<f64>() + sus.beta.iter().filter(|&&b| b > theta).sum::<f64>()
}

pub fn magnitude_suite(word: &str, theta: f64, inputs: &MagnitudeInputs) -> WordChangeScores {
    let mut out = WordChangeScores::new(word, theta);
    if let Some(s) = inputs.sus {
        if !s.alpha.is_empty() && !s.beta.is_empty() {
            out.f_sus = Some((mean(&s.alpha) - mean(&s.beta)).abs());
        }
        out.f1 = Some(s.pooled().map(f64::abs).sum());
        out.f2 = Some(f2(s, theta));
    }
    if let Some(c) = inputs.cost {
        let fits = |p: &TransportPlan| p.plan.dim() == c.entries().dim();
        out.f3 = inputs.plan.filter(|p| fits(p)).map(|p| p.transport_cost(c));
        out.f_ot = inputs.ot_plan.filter(|p| fits(p)).map(|p| p.transport_cost(c));
    }
    if let Some((u, v)) = inputs.embeddings {
        out.f_apd = apd(u, v).ok();
    }
    if let Some(l) = inputs.ldr {
        if !l.old.is_empty() && !l.modern.is_empty() {
            out.f_ldr = Some((mean(&l.old) - mean(&l.modern)).abs());
        }
    }
    if let Some(sfd) = inputs.sfd_hat {
        out.f_widid = jsd(&sfd.p, &sfd.q).ok();
    }
    if let Some(p) = inputs.prototypes {
        let old: Vec<Vec<f64>> = p.old.iter().map(|(_, v)| v.clone()).collect();
        let modern: Vec<Vec<f64>> = p.modern.iter().map(|(_, v)| v.clone()).collect();
        out.f_apdp = canberra_apdp(&old, &modern).ok();
    }
    out
}

/// Inputs to [`scope_suite`].
#[derive(Debug, Clone, Copy, Default)]
pub struct ScopeInputs<'a> {
    pub sus: Option<&'a SusScores>,
    /// `(κ_S, κ_T)`.
    pub kappa: Option<(f64, f64)>,
    pub ldr: Option<&'a LdrScores>,
    pub sfd_hat: Option<&'a SenseFrequencyDistribution>,
}

pub fn scope_suite(word: &str, theta: f64, inputs: &ScopeInputs) -> WordChangeScores {
    let mut out = WordChangeScores::new(word, theta);
    if let Some(s) = inputs.sus {
        if !s.alpha.is_empty() && !s.beta.is_empty() {
            let (vs, vt) = (variance(&s.alpha), variance(&s.beta));
            out.v_s = Some(vs);
            out.v_t = Some(vt);
            out.g_sus = log_ratio(vt, vs);
        }
        out.g1 = Some(g1(s, theta));
    }
    if let Some((ks, kt)) = inputs.kappa {
        out.g_vmf = log_ratio(ks, kt);
    }
    if let Some(l) = inputs.ldr {
        if !l.old.is_empty() && !l.modern.is_empty() {
            let (us, ut) = (variance(&l.old), variance(&l.modern));
            out.u_s = Some(us);
            out.u_t = Some(ut);
            out.g_ldr = log_ratio(ut, us);
        }
    }
    if let Some(sfd) = inputs.sfd_hat {
        out.g_widid = match (entropy(&sfd.q), entropy(&sfd.p)) {
            (Ok(hq), Ok(hp)) => Some(hq - hp),
            _ => None,
        };
    }
    out
}

/// `(f*, g*) = (JSD(P*, Q*), H(Q*) − H(P*))`.
pub fn gold_word_scores(gold: &SenseFrequencyDistribution) -> Result<(f64, f64)> {
    Ok((jsd(&gold.p, &gold.q)?, entropy(&gold.q)? - entropy(&gold.p)?))
}

/// `θ = r · max |SUS|` over every instance of every word given.
pub fn threshold_from_ratio<'a>(sus: impl IntoIterator<Item = &'a SusScores>, r: f64) -> Result<f64> {
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::InvalidArgument(format!("threshold ratio {r} outside (0, 1)")));
    }
    let mut any = false;
    let mut top = 0.0f64;
    for s in sus {
        any = true;
        top = top.max(s.max_abs());
    }
    if !any {
        return Err(Error::InvalidArgument("threshold over an empty word set".into()));
    }
    Ok(top * r)
}

/// One row per word; undefined metrics are left empty.
pub fn write_word_scores(path: impl AsRef<Path>, rows: &[WordChangeScores]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(CSV_HEADER)?;
    for row in rows {
        let mut rec = vec![row.word.clone(), row.theta.to_string()];
        rec.extend(row.cells().into_iter().map(|c| c.map(|v| v.to_string()).unwrap_or_default()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    const NO_BOUNDS: ImputationBounds = ImputationBounds {
        min_tau: -2.5,
        max_tau: 2.5,
    };

    fn record() -> SenseFrequencyDistribution {
        SenseFrequencyDistribution::from_counts((0..7).collect(), vec![99, 0, 0, 0, 0, 0, 0], vec![64, 17, 11, 1, 1, 1, 1])
    }

    #[test]
    fn tau_cases() {
        let (t, imputed) = tau_score(0, &record(), NO_BOUNDS).unwrap();
        assert!((t - (64.0f64 / 99.0).ln()).abs() < 1e-15 && !imputed);
        assert!((t + 0.4363).abs() < 1e-4);
        assert_eq!(tau_score(1, &record(), NO_BOUNDS).unwrap(), (2.5, true));
        assert_eq!(tau_from_counts(5, 0, NO_BOUNDS), Some((-2.5, true)));
        assert_eq!(tau_from_counts(7, 7, NO_BOUNDS), Some((0.0, false)));
        assert!(tau_from_counts(0, 0, NO_BOUNDS).is_none());
        assert!(matches!(tau_score(9, &record(), NO_BOUNDS), Err(Error::UnknownSense(9))));
        let absent = SenseFrequencyDistribution::from_counts(vec![3], vec![0], vec![0]);
        assert!(matches!(tau_score(3, &absent, NO_BOUNDS), Err(Error::SenseAbsent(3))));
    }

    #[test]
    fn jsd_cases() {
        assert_eq!(jsd(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert!((jsd(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - LN_2).abs() < 1e-15);
        assert!(jsd(&[1.0], &[0.5, 0.5]).is_err());
        assert!(jsd(&[1.2, -0.2], &[0.5, 0.5]).is_err());
        assert!(jsd(&[0.5, 0.4], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn jsd_record_direct_sum() {
        let r = record();
        // P is a point mass on sense 0: JSD = ½[ln(2/(1+q0))] + ½ Σ q ln(2q/(δ+q))
        let q0: f64 = 64.0 / 96.0;
        let mut want = 0.5 * (2.0 / (1.0 + q0)).ln();
        for &c in &[64.0, 17.0, 11.0, 1.0, 1.0, 1.0, 1.0] {
            let q: f64 = c / 96.0;
            let m = if c == 64.0 { (1.0 + q) / 2.0 } else { q / 2.0 };
            want += 0.5 * q * (q / m).ln();
        }
        assert!((jsd(&r.p, &r.q).unwrap() - want).abs() < 1e-14);
    }

    #[test]
    fn entropy_cases() {
        assert_eq!(entropy(&[1.0, 0.0, 0.0]).unwrap(), 0.0);
        assert!((entropy(&[0.25; 4]).unwrap() - 4.0f64.ln()).abs() < 1e-15);
        let q = record().q;
        let want: f64 = [64.0f64, 17.0, 11.0, 1.0, 1.0, 1.0, 1.0]
            .iter()
            .map(|c| -(c / 96.0) * (c / 96.0).ln())
            .sum();
        assert!((entropy(&q).unwrap() - want).abs() < 1e-14);
        assert!(entropy(&[-0.5, 1.5]).is_err());
    }

    fn matrix(rows: &[&[f64]]) -> EmbeddingMatrix {
        let rows: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
        let ids = (0..rows.len()).map(|i| i.to_string()).collect();
        EmbeddingMatrix::from_rows(&rows, ids).unwrap()
    }

    #[test]
    fn apd_cases() {
        let x = matrix(&[&[0.3, 0.4]]);
        assert!(apd(&x, &x).unwrap().abs() < 1e-7);
        let u = matrix(&[&[1.0, 0.0, 0.0], &[2.0, 0.0, 0.0]]);
        let v = matrix(&[&[0.0, 1.0, 0.0], &[0.0, 0.5, 0.0]]);
        assert_eq!(apd(&u, &v).unwrap(), 1.0);
    }

    #[test]
    fn canberra_cases() {
        assert_eq!(canberra_apdp(&[vec![0.2, 0.5]], &[vec![0.2, 0.5]]).unwrap(), 0.0);
        assert_eq!(canberra_apdp(&[vec![1.0, 0.0]], &[vec![0.0, 1.0]]).unwrap(), 2.0);
        assert!((canberra_apdp(&[vec![2.0]], &[vec![1.0]]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(matches!(canberra_apdp(&[], &[vec![1.0]]), Err(Error::NoPrototypes("OLD"))));
        // pairs average: (0 + 1/3) / 2
        let v = canberra_apdp(&[vec![1.0], vec![2.0]], &[vec![1.0]]).unwrap();
        assert!((v - 1.0 / 6.0).abs() < 1e-15);
    }

    fn sus(alpha: Vec<f64>, beta: Vec<f64>) -> SusScores {
        SusScores { alpha, beta }
    }

    #[test]
    fn magnitude_arithmetic() {
        let s = sus(vec![-0.5, 0.0], vec![0.0, 0.5]);
        let out = magnitude_suite("w", 0.25, &MagnitudeInputs {
            sus: Some(&s),
            ..Default::default()
        });
        assert_eq!(out.f2, Some(1.0));
        assert_eq!(out.f1, Some(1.0));
        assert_eq!(out.f_sus, Some(0.5));
        assert!(out.f3.is_none() && out.f_apd.is_none() && out.f_widid.is_none());

        let zero = sus(vec![0.0; 3], vec![0.0; 2]);
        let out = magnitude_suite("w", 0.1, &MagnitudeInputs {
            sus: Some(&zero),
            ..Default::default()
        });
        assert_eq!((out.f_sus, out.f1, out.f2), (Some(0.0), Some(0.0), Some(0.0)));
    }

    #[test]
    fn scope_arithmetic() {
        let s = sus(vec![-0.5, 0.0], vec![0.0, 0.5]);
        let out = scope_suite("w", 0.25, &ScopeInputs {
            sus: Some(&s),
            kappa: Some((3.0, 3.0)),
            ..Default::default()
        });
        assert_eq!(out.g1, Some(0.0));
        assert_eq!(out.g_vmf, Some(0.0));
        // same spread on both sides
        assert_eq!(out.g_sus, Some(0.0));
        assert_eq!(out.v_s, Some(0.0625));

        let flat = sus(vec![0.1, 0.1], vec![0.0, 0.4]);
        let out = scope_suite("w", 0.0, &ScopeInputs {
            sus: Some(&flat),
            kappa: Some((0.0, 1.0)),
            ..Default::default()
        });
        assert!(out.g_sus.is_none() && out.g_vmf.is_none());
        assert_eq!(out.v_s, Some(0.0));
    }

    #[test]
    fn gold_scores_for_record() {
        let r = record();
        let (f, g) = gold_word_scores(&r).unwrap();
        assert_eq!(f, jsd(&r.p, &r.q).unwrap());
        assert_eq!(g, entropy(&r.q).unwrap());
    }

    #[test]
    fn threshold_cases() {
        let a = sus(vec![-0.5, 0.1], vec![0.2]);
        let b = sus(vec![0.0], vec![0.3]);
        assert!((threshold_from_ratio([&a, &b], 0.8).unwrap() - 0.4).abs() < 1e-15);
        assert!((threshold_from_ratio([&b], 0.8).unwrap() - 0.24).abs() < 1e-15);
        let z = sus(vec![0.0], vec![0.0]);
        assert_eq!(threshold_from_ratio([&z], 0.5).unwrap(), 0.0);
        assert!(threshold_from_ratio(std::iter::empty::<&SusScores>(), 0.5).is_err());
        assert!(threshold_from_ratio([&a], 1.0).is_err());
    }

    #[test]
    fn merge_keeps_both_families() {
        let s = sus(vec![-0.5, 0.0], vec![0.0, 0.5]);
        let f = magnitude_suite("w", 0.25, &MagnitudeInputs {
            sus: Some(&s),
            ..Default::default()
        });
        let g = scope_suite("w", 0.25, &ScopeInputs {
            sus: Some(&s),
            ..Default::default()
        });
        let both = f.clone().merge(&g);
        assert_eq!(both.f1, f.f1);
        assert_eq!(both.g1, g.g1);
        assert_eq!(both.get("f2"), Some(1.0));
        assert_eq!(both.get("nope"), None);
    }

    #[test]
    fn csv_has_empty_cells_for_missing() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.csv");
        let mut row = WordChangeScores::new("ball", 0.1);
        row.f1 = Some(0.5);
        write_word_scores(&p, &[row]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0].split(',').count(), 22);
        assert!(lines[1].starts_with("ball,0.1,,0.5,"));
    }
}
