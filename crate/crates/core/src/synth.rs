//! Synthetic benchmark corpora with known sense frequency shifts.
//!
//! Each pseudo-word has 2 to 4 senses, each a Gaussian blob around a random
//! unit direction. Old-period sense proportions are drawn at random; the
//! modern proportions move toward a second random distribution by an amount
//! that grows with the word index, so the set spans stable to strongly
//! changed words.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::embed::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::ingest::{Period, SenseFrequencyDistribution, UsageInstance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub words: usize,
    pub per_period: usize,
    pub dims: usize,
    /// Per-coordinate noise around each sense direction.
    pub noise: f64,
    pub min_senses: usize,
    pub max_senses: usize,
    /// Largest interpolation weight toward the modern target distribution.
    pub max_shift: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            words: 20,
            per_period: 100,
            dims: 16,
            noise: 0.08,
            min_senses: 2,
            max_senses: 4,
            max_shift: 0.9,
            seed: 17,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthWord {
    pub word: String,
    pub gold: SenseFrequencyDistribution,
    pub shift: f64,
    pub changed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub instances: Vec<UsageInstance>,
    pub embeddings: EmbeddingMatrix,
    pub words: Vec<SynthWord>,
}

/// Integer counts summing to `total`, by largest remainder.
pub fn apportion(p: &[f64], total: usize) -> Vec<u64> {
    let raw: Vec<f64> = p.iter().map(|x| x * total as f64).collect();
    let mut counts: Vec<u64> = raw.iter().map(|x| x.floor() as u64).collect();
    let mut left = total as u64 - counts.iter().sum::<u64>();
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())).then(a.cmp(&b)));
    for &k in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[k] += 1;
        left -= 1;
    }
    counts
}

fn dirichlet(rng: &mut ChaCha8Rng, k: usize, concentration: f64) -> Vec<f64> {
    let g = Gamma::new(concentration, 1.0).expect("positive shape");
    let draws: Vec<f64> = (0..k).map(|_| g.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    draws.into_iter().map(|x| x / total).collect()
}

fn unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

pub fn generate(config: &SynthConfig) -> Result<SynthCorpus> {
    if config.words == 0 || config.per_period < 2 || config.dims < 2 {
        return Err(Error::InvalidArgument("synthetic corpus needs words, 2+ instances per period and 2+ dims".into()));
    }
    if config.min_senses < 1 || config.min_senses > config.max_senses {
        return Err(Error::InvalidArgument("sense count range is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut instances = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut ids = Vec::new();
    let mut words = Vec::new();
    let span = config.max_senses - config.min_senses + 1;
    for w in 0..config.words {
        let word = format!("pseudo{w:02}");
        let k = config.min_senses + w % span;
        let centers: Vec<Vec<f64>> = (0..k).map(|_| unit(&mut rng, config.dims)).collect();
        let p = dirichlet(&mut rng, k, 2.0);
        let target = dirichlet(&mut rng, k, 0.5);
        let shift = if config.words > 1 {
            config.max_shift * w as f64 / (config.words - 1) as f64
        } else {
            0.0
        };
        let q: Vec<f64> = p.iter().zip(&target).map(|(a, b)| (1.0 - shift) * a + shift * b).collect();
        let x = apportion(&p, config.per_period);
        let y = apportion(&q, config.per_period);
        let mut serial = 0;
        for (period, counts, tag) in [(Period::Old, &x, "o"), (Period::Modern, &y, "m")] {
            for (sense, &c) in counts.iter().enumerate() {
                for _ in 0..c {
                    let id = format!("{word}-{tag}{serial:03}");
                    serial += 1;
                    let row: Vec<f64> = centers[sense]
                        .iter()
                        .map(|&m| m + config.noise * rng.sample::<f64, _>(StandardNormal))
                        .collect();
                    let context = format!("a {word} of sense {sense}");
                    instances.push(UsageInstance {
                        id: id.clone(),
                        word: word.clone(),
                        period,
                        target_start: 2,
                        target_end: 2 + word.len(),
                        context,
                        gold_sense: Some(sense as u32),
                    });
                    rows.push(row);
                    ids.push(id);
                }
            }
        }
        let changed = x.iter().zip(&y).any(|(a, b)| (*a == 0) != (*b == 0)) || shift >= 0.5;
        words.push(SynthWord {
            word,
            gold: SenseFrequencyDistribution::from_counts((0..k as u32).collect(), x, y),
            shift,
            changed,
        });
    }
    Ok(SynthCorpus {
        instances,
        embeddings: EmbeddingMatrix::from_rows(&rows, ids)?,
        words,
    })
}
