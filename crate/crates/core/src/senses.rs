//! Sense-clustering baseline: affinity propagation over the pooled
//! embeddings of both periods, the estimated SFD it induces, and per-period
//! sense prototypes.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::embed::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::ingest::{Period, SenseFrequencyDistribution};

/// Added per index to the preferences so exemplar ties resolve toward the
/// lowest index.
const PREFERENCE_JITTER: f64 = 1e-12;
const TIE_BREAK_SEED: u64 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preference {
    /// Median of the off-diagonal similarities.
    Median,
    Value(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApOptions {
    pub damping: f64,
    pub preference: Preference,
    pub max_iter: usize,
    pub convergence_iter: usize,
}

impl Default for ApOptions {
    fn default() -> Self {
        ApOptions {
            damping: 0.5,
            preference: Preference::Median,
            max_iter: 200,
            convergence_iter: 15,
        }
    }
}

impl ApOptions {
    pub fn with_damping(damping: f64) -> Self {
        ApOptions {
            damping,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    /// Cluster per pooled instance, old rows first.
    pub labels: Vec<usize>,
    /// `exemplars[k]` is the instance index representing cluster `k`.
    pub exemplars: Vec<usize>,
    pub damping: f64,
    pub n_clusters: usize,
    pub converged: bool,
    pub iterations: usize,
}

/// Cosine similarity between all pairs of rows.
pub fn cosine_similarity(x: &EmbeddingMatrix) -> Result<Array2<f64>> {
    let u = x.unit_rows_f64()?;
    Ok(u.dot(&u.t()).mapv(|s| s.clamp(-1.0, 1.0)))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

fn first_argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (k, v) in values.enumerate() {
        if v > best.1 {
            best = (k, v);
        }
    }
    best.0
}

/// Affinity propagation with damped responsibility/availability updates.
///
/// Converged means the exemplar set stayed the same for
/// `convergence_iter` consecutive rounds. If no exemplar ever emerges,
/// every point goes to the single best-scoring candidate and the result is
/// flagged as not converged.
pub fn affinity_propagation(s: &Array2<f64>, opts: &ApOptions) -> Result<ClusterAssignment> {
    let n = s.nrows();
    if n == 0 {
        return Err(Error::InvalidArgument("affinity propagation on zero points".into()));
    }
    if s.ncols() != n {
        return Err(Error::Shape(format!("similarity matrix {:?} is not square", s.dim())));
    }
    if !(0.5..1.0).contains(&opts.damping) {
        return Err(Error::InvalidArgument(format!(
            "damping {} outside [0.5, 1)",
            opts.damping
        )));
    }
    if s.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("similarities must be finite".into()));
    }
    let single = |converged| ClusterAssignment {
        labels: vec![0; n],
        exemplars: vec![0],
        damping: opts.damping,
        n_clusters: 1,
        converged,
        iterations: 0,
    };
    if n == 1 {
        return Ok(single(true));
    }
    let off: Vec<f64> = s
        .indexed_iter()
        .filter(|((i, j), _)| i != j)
        .map(|(_, &v)| v)
        .collect();
    let pref = match opts.preference {
        Preference::Median => median(off.clone()),
        Preference::Value(p) => p,
    };
    if off.iter().all(|&v| v == off[0]) {
        // no structure to find: either everyone is an exemplar or no one is
        if pref > off[0] {
            return Ok(ClusterAssignment {
                labels: (0..n).collect(),
                exemplars: (0..n).collect(),
                damping: opts.damping,
                n_clusters: n,
                converged: true,
                iterations: 0,
            });
        }
        return Ok(single(true));
    }

    let mut sim = s.clone();
    for k in 0..n {
        sim[[k, k]] = pref;
    }
    for k in 0..n {
        sim[[k, k]] -= PREFERENCE_JITTER * k as f64;
    }
    // break exact ties with seeded noise at machine-epsilon scale
    let mut rng = ChaCha8Rng::seed_from_u64(TIE_BREAK_SEED);
    for v in sim.iter_mut() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *v += (f64::EPSILON * *v + f64::MIN_POSITIVE * 100.0) * z;
    }
    let lam = opts.damping;
    let mut r = Array2::<f64>::zeros((n, n));
    let mut a = Array2::<f64>::zeros((n, n));
    let mut last: Vec<bool> = vec![false; n];
    let mut stable = 0;
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..opts.max_iter {
        iterations = it + 1;
        for i in 0..n {
            let (mut k1, mut v1, mut v2) = (0, f64::NEG_INFINITY, f64::NEG_INFINITY);
            for k in 0..n {
                let v = a[[i, k]] + sim[[i, k]];
                if v > v1 {
                    v2 = v1;
                    v1 = v;
                    k1 = k;
                } else if v > v2 {
                    v2 = v;
                }
            }
            for k in 0..n {
                let target = sim[[i, k]] - if k == k1 { v2 } else { v1 };
                r[[i, k]] = lam * r[[i, k]] + (1.0 - lam) * target;
            }
        }
        for k in 0..n {
            let pos: f64 = (0..n).filter(|&i| i != k).map(|i| r[[i, k]].max(0.0)).sum();
            let rkk = r[[k, k]];
            for i in 0..n {
                let target = if i == k {
                    pos
                } else {
                    (rkk + pos - r[[i, k]].max(0.0)).min(0.0)
                };
                a[[i, k]] = lam * a[[i, k]] + (1.0 - lam) * target;
            }
        }
        let current: Vec<bool> = (0..n).map(|k| a[[k, k]] + r[[k, k]] > 0.0).collect();
        if current == last {
            stable += 1;
        } else {
            stable = 1;
            last = current;
        }
        if stable >= opts.convergence_iter && last.iter().any(|&e| e) {
            converged = true;
            break;
        }
    }

    let mut exemplars: Vec<usize> = (0..n).filter(|&k| last[k]).collect();
    if exemplars.is_empty() {
        let k = first_argmax((0..n).map(|k| a[[k, k]] + r[[k, k]]));
        return Ok(ClusterAssignment {
            labels: vec![0; n],
            exemplars: vec![k],
            damping: opts.damping,
            n_clusters: 1,
            converged: false,
            iterations,
        });
    }
    let assign = |ex: &[usize]| -> Vec<usize> {
        (0..n)
            .map(|i| match ex.iter().position(|&e| e == i) {
                Some(k) => k,
                None => first_argmax(ex.iter().map(|&e| s[[i, e]])),
            })
            .collect()
    };
    // re-centre each cluster on the member with the largest total similarity
    let labels = assign(&exemplars);
    for (k, ex) in exemplars.iter_mut().enumerate() {
        let members: Vec<usize> = (0..n).filter(|&i| labels[i] == k).collect();
        let best = first_argmax(members.iter().map(|&j| members.iter().map(|&i| sim[[i, j]]).sum::<f64>()));
        *ex = members[best];
    }
    exemplars.sort_unstable();
    exemplars.dedup();
    let labels = assign(&exemplars);
    Ok(ClusterAssignment {
        n_clusters: exemplars.len(),
        labels,
        exemplars,
        damping: opts.damping,
        converged,
        iterations,
    })
}

/// `X̂_k`, `Ŷ_k`: old and modern instances per cluster, inventory `0..K̂`.
pub fn estimate_sfd(assignment: &ClusterAssignment, periods: &[Period]) -> Result<SenseFrequencyDistribution> {
    if periods.len() != assignment.labels.len() {
        return Err(Error::Shape(format!(
            "{} periods for {} labels",
            periods.len(),
            assignment.labels.len()
        )));
    }
    let k = assignment.n_clusters;
    let mut x = vec![0u64; k];
    let mut y = vec![0u64; k];
    for (&label, period) in assignment.labels.iter().zip(periods) {
        match period {
            Period::Old => x[label] += 1,
            Period::Modern => y[label] += 1,
        }
    }
    Ok(SenseFrequencyDistribution::from_counts(
        (0..k as u32).collect(),
        x,
        y,
    ))
}

/// Mean embedding of each cluster within one period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prototypes {
    /// `(cluster, mean vector)`, clusters empty in the period left out.
    pub old: Vec<(usize, Vec<f64>)>,
    pub modern: Vec<(usize, Vec<f64>)>,
}

pub fn sense_prototypes(
    assignment: &ClusterAssignment,
    pooled: &EmbeddingMatrix,
    periods: &[Period],
) -> Result<Prototypes> {
    let n = assignment.labels.len();
    if pooled.rows() != n || periods.len() != n {
        return Err(Error::Shape(format!(
            "{} labels, {} rows, {} periods",
            n,
            pooled.rows(),
            periods.len()
        )));
    }
    let d = pooled.dims();
    let k = assignment.n_clusters;
    let mean_for = |want: Period| -> Vec<(usize, Vec<f64>)> {
        let mut sums = vec![vec![0.0f64; d]; k];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            if periods[i] != want {
                continue;
            }
            let label = assignment.labels[i];
            counts[label] += 1;
            for (acc, &x) in sums[label].iter_mut().zip(pooled.row(i)) {
                *acc += x as f64;
            }
        }
        sums.into_iter()
            .zip(counts)
            .enumerate()
            .filter(|(_, (_, c))| *c > 0)
            .map(|(label, (s, c))| (label, s.into_iter().map(|v| v / c as f64).collect()))
            .collect()
    };
    Ok(Prototypes {
        old: mean_for(Period::Old),
        modern: mean_for(Period::Modern),
    })
}

/// Rows: `(instance_id, period, estimated_sense, is_exemplar)`.
pub fn write_clusters(
    path: impl AsRef<Path>,
    assignment: &ClusterAssignment,
    ids: &[String],
    periods: &[Period],
) -> Result<()> {
    let path = path.as_ref();
    if ids.len() != assignment.labels.len() || periods.len() != ids.len() {
        return Err(Error::Shape(format!(
            "{} ids, {} periods, {} labels",
            ids.len(),
            periods.len(),
            assignment.labels.len()
        )));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(["instance_id", "period", "estimated_sense", "is_exemplar"])?;
    for (i, id) in ids.iter().enumerate() {
        let label = assignment.labels[i];
        let is_ex = assignment.exemplars[label] == i;
        w.write_record([
            id.as_str(),
            periods[i].name(),
            &label.to_string(),
            if is_ex { "true" } else { "false" },
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
