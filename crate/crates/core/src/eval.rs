//! Evaluation harness: Spearman correlation, repeated validation/test
//! splits, grid tuning and the four task protocols.
//!
//! Every repetition draws its split from its own ChaCha8 stream
//! `(seed, repetition)`, so serial and parallel runs agree.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::ingest::SenseFrequencyDistribution;
use crate::metrics::{self, f2, g1, threshold_from_ratio, tau_from_counts, ImputationBounds, WordChangeScores};
use crate::sus::SusScores;

pub const MIN_WORDS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub lambda_grid: Vec<f64>,
    /// λ values explored jointly with `r_grid`.
    pub lambda_r_grid: Vec<f64>,
    pub r_grid: Vec<f64>,
    pub damping_grid: Vec<f64>,
    pub split_ratio: f64,
    pub repetitions: usize,
    pub rng_seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            lambda_grid: vec![10.0, 20.0, 50.0, 100.0, 200.0, 500.0, 1000.0],
            lambda_r_grid: vec![10.0, 100.0, 1000.0],
            r_grid: vec![0.4, 0.6, 0.8],
            damping_grid: vec![0.5, 0.6, 0.7, 0.8, 0.9],
            split_ratio: 0.8,
            repetitions: 100,
            rng_seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        let grids = [
            ("lambda_grid", &self.lambda_grid),
            ("lambda_r_grid", &self.lambda_r_grid),
            ("r_grid", &self.r_grid),
            ("damping_grid", &self.damping_grid),
        ];
        for (name, g) in grids {
            if g.is_empty() {
                return Err(Error::Config(format!("{name} is empty")));
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::Config(format!("{name} has a non-finite value")));
            }
        }
        if self.lambda_grid.iter().chain(&self.lambda_r_grid).any(|&l| l <= 0.0) {
            return Err(Error::Config("lambda values must be positive".into()));
        }
        if self.r_grid.iter().any(|&r| !(r > 0.0 && r < 1.0)) {
            return Err(Error::Config("r values must lie in (0, 1)".into()));
        }
        if self.damping_grid.iter().any(|&d| !(0.5..1.0).contains(&d)) {
            return Err(Error::Config("damping values must lie in [0.5, 1)".into()));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::Config(format!("split_ratio {} outside (0, 1)", self.split_ratio)));
        }
        if self.repetitions == 0 {
            return Err(Error::Config("repetitions must be at least 1".into()));
        }
        Ok(())
    }

    /// Every λ any method may ask for, ascending and deduplicated.
    pub fn all_lambdas(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.lambda_grid.iter().chain(&self.lambda_r_grid).copied().collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Instance,
    Sense,
    WordMagnitude,
    WordScope,
}

impl Task {
    pub fn parse(s: &str) -> Option<Task> {
        match s {
            "instance" => Some(Task::Instance),
            "sense" => Some(Task::Sense),
            "word-magnitude" => Some(Task::WordMagnitude),
            "word-scope" => Some(Task::WordScope),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Instance => "instance",
            Task::Sense => "sense",
            Task::WordMagnitude => "word-magnitude",
            Task::WordScope => "word-scope",
        }
    }

    /// Method names accepted for this task.
    pub fn methods(self) -> &'static [&'static str] {
        match self {
            Task::Instance | Task::Sense => &["sus", "ldr", "widid"],
            Task::WordMagnitude => &metrics::MAGNITUDE_METRICS,
            Task::WordScope => &metrics::SCOPE_METRICS,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One candidate hyperparameter setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hyper {
    None,
    Lambda(f64),
    LambdaRatio { lambda: f64, r: f64 },
    Damping(f64),
}

impl fmt::Display for Hyper {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Hyper::None => f.write_str("-"),
            Hyper::Lambda(l) => write!(f, "lambda={l}"),
            Hyper::LambdaRatio { lambda, r } => write!(f, "lambda={lambda},r={r}"),
            Hyper::Damping(d) => write!(f, "damping={d}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum GridKind {
    Fixed,
    Lambda,
    LambdaRatio,
    Damping,
}

fn grid_kind(method: &str) -> Option<GridKind> {
    Some(match method {
        "sus" | "f_sus" | "f1" | "f3" | "g_sus" => GridKind::Lambda,
        "f2" | "g1" => GridKind::LambdaRatio,
        "widid" | "f_widid" | "f_apdp" | "g_widid" => GridKind::Damping,
        "ldr" | "f_ot" | "f_apd" | "f_ldr" | "g_vmf" | "g_ldr" => GridKind::Fixed,
        _ => return None,
    })
}

/// Candidates in tie-break order: smallest λ first, then smallest r.
pub fn grid_for(method: &str, config: &EvalConfig) -> Result<Vec<Hyper>> {
    let sorted = |v: &[f64]| {
        let mut v = v.to_vec();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    };
    let kind = grid_kind(method).ok_or_else(|| Error::InvalidArgument(format!("unknown method {method:?}")))?;
    Ok(match kind {
        GridKind::Fixed => vec![Hyper::None],
        GridKind::Lambda => sorted(&config.lambda_grid).into_iter().map(Hyper::Lambda).collect(),
        GridKind::LambdaRatio => {
            let rs = sorted(&config.r_grid);
            sorted(&config.lambda_r_grid)
                .into_iter()
                .flat_map(|lambda| rs.iter().map(move |&r| Hyper::LambdaRatio { lambda, r }))
                .collect()
        }
        GridKind::Damping => sorted(&config.damping_grid).into_iter().map(Hyper::Damping).collect(),
    })
}

/// SUS and the λ-dependent transport cost for one λ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaScores {
    pub lambda: f64,
    pub sus: SusScores,
    pub f3: Option<f64>,
}

/// Sense-clustering baseline for one damping value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DampingScores {
    pub damping: f64,
    /// Estimated sense per pooled instance.
    pub labels: Vec<usize>,
    pub sfd_hat: SenseFrequencyDistribution,
    pub f_widid: Option<f64>,
    pub f_apdp: Option<f64>,
    pub g_widid: Option<f64>,
}

/// Everything the harness needs about one word, precomputed for every grid
/// point. Instance vectors are pooled: old instances first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordEvalData {
    pub word: String,
    pub gold_sfd: SenseFrequencyDistribution,
    pub gold_senses: Vec<Option<u32>>,
    /// Stable/changed annotation, used only to stratify test results.
    pub changed: Option<bool>,
    pub per_lambda: Vec<LambdaScores>,
    pub per_damping: Vec<DampingScores>,
    /// Pooled LDR with the normalizer included.
    pub ldr: Option<Vec<f64>>,
    /// Metrics that depend on no hyperparameter.
    pub fixed: WordChangeScores,
}

fn same(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
}

impl WordEvalData {
    pub fn at_lambda(&self, lambda: f64) -> Result<&LambdaScores> {
        self.per_lambda
            .iter()
            .find(|s| same(s.lambda, lambda))
            .ok_or(Error::NotCached(lambda))
    }

    pub fn at_damping(&self, damping: f64) -> Result<&DampingScores> {
        self.per_damping
            .iter()
            .find(|s| same(s.damping, damping))
            .ok_or_else(|| Error::InvalidArgument(format!("damping {damping} not computed for {:?}", self.word)))
    }
}

/// Ranks starting at 1; tied values share their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && x[idx[end]] == x[idx[start]] {
            end += 1;
        }
        let r = (start + end + 1) as f64 / 2.0;
        for &k in &idx[start..end] {
            ranks[k] = r;
        }
        start = end;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's ρ with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("{} vs {} values", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::UndefinedCorrelation(format!("{} values", x.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::UndefinedCorrelation("non-finite value".into()));
    }
    pearson(&average_ranks(x), &average_ranks(y))
        .ok_or_else(|| Error::UndefinedCorrelation("constant input".into()))
}

/// Shuffle-then-cut. `stream` selects an independent ChaCha8 stream.
pub fn split_words<T: Clone>(words: &[T], ratio: f64, seed: u64, stream: u64) -> Result<(Vec<T>, Vec<T>)> {
    if words.len() < MIN_WORDS {
        return Err(Error::InvalidArgument(format!(
            "need at least {MIN_WORDS} words to split, got {}",
            words.len()
        )));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidArgument(format!("split ratio {ratio} outside (0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut order: Vec<usize> = (0..words.len()).collect();
    order.shuffle(&mut rng);
    let cut = (ratio * words.len() as f64).round() as usize;
    let pick = |ix: &[usize]| ix.iter().map(|&i| words[i].clone()).collect::<Vec<T>>();
    Ok((pick(&order[..cut]), pick(&order[cut..])))
}

/// Min and max finite `ln(Y_k/X_k)` over every sense of every word.
pub fn compute_gold_imputation_bounds<'a>(
    sfds: impl IntoIterator<Item = &'a SenseFrequencyDistribution>,
) -> Result<ImputationBounds> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for sfd in sfds {
        for (&x, &y) in sfd.old_counts.iter().zip(&sfd.modern_counts) {
            if x > 0 && y > 0 {
                let t = (y as f64 / x as f64).ln();
                lo = lo.min(t);
                hi = hi.max(t);
            }
        }
    }
    if lo > hi {
        return Err(Error::Data("no sense occurs in both periods in any word".into()));
    }
    Ok(ImputationBounds { min_tau: lo, max_tau: hi })
}

/// One word's instance scores next to its gold τ* and gold senses.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceTable {
    pub word: String,
    pub scores: Vec<f64>,
    /// `None` marks an instance without a gold sense.
    pub gold_tau: Vec<Option<f64>>,
    pub gold_senses: Vec<Option<u32>>,
}

/// Spearman over every defined-sense instance of every word, pooled.
pub fn eval_instance_level(words: &[InstanceTable]) -> Result<f64> {
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for w in words {
        check_table(w)?;
        for (s, g) in w.scores.iter().zip(&w.gold_tau) {
            if let Some(g) = g {
                x.push(*s);
                y.push(*g);
            }
        }
    }
    spearman(&x, &y)
}

/// Spearman over `(word, gold sense)` groups: mean method score vs τ*.
pub fn eval_sense_level(words: &[InstanceTable]) -> Result<f64> {
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for w in words {
        check_table(w)?;
        let mut groups: BTreeMap<u32, (f64, usize, f64)> = BTreeMap::new();
        for ((s, g), sense) in w.scores.iter().zip(&w.gold_tau).zip(&w.gold_senses) {
            if let (Some(g), Some(k)) = (g, sense) {
                let e = groups.entry(*k).or_insert((0.0, 0, *g));
                e.0 += s;
                e.1 += 1;
            }
        }
        for (total, count, tau) in groups.into_values() {
            x.push(total / count as f64);
            y.push(tau);
        }
    }
    if x.len() < 2 {
        return Err(Error::UndefinedCorrelation(format!("{} sense groups", x.len())));
    }
    spearman(&x, &y)
}

fn check_table(w: &InstanceTable) -> Result<()> {
    if w.scores.len() != w.gold_tau.len() || w.gold_senses.len() != w.scores.len() {
        return Err(Error::Shape(format!(
            "word {:?}: {} scores, {} gold values, {} senses",
            w.word,
            w.scores.len(),
            w.gold_tau.len(),
            w.gold_senses.len()
        )));
    }
    Ok(())
}

/// Spearman over words, dropping any word where either side is undefined.
pub fn eval_word_level(method: &[Option<f64>], gold: &[Option<f64>]) -> Result<f64> {
    if method.len() != gold.len() {
        return Err(Error::Shape(format!("{} method values, {} gold values", method.len(), gold.len())));
    }
    let (x, y): (Vec<f64>, Vec<f64>) = method
        .iter()
        .zip(gold)
        .filter_map(|(m, g)| Some(((*m)?, (*g)?)))
        .filter(|(m, g)| m.is_finite() && g.is_finite())
        .unzip();
    if x.len() < 2 {
        return Err(Error::UndefinedCorrelation(format!("{} defined words", x.len())));
    }
    spearman(&x, &y)
}

/// Gold τ* for every pooled instance of `w` under `bounds`.
pub fn gold_taus(w: &WordEvalData, bounds: ImputationBounds) -> Vec<Option<f64>> {
    w.gold_senses
        .iter()
        .map(|s| {
            let (x, y) = w.gold_sfd.counts((*s)?)?;
            tau_from_counts(x, y, bounds).map(|(t, _)| t)
        })
        .collect()
}

fn instance_scores(words: &[&WordEvalData], method: &str, h: Hyper) -> Result<Vec<Vec<f64>>> {
    match (method, h) {
        ("sus", Hyper::Lambda(l)) => words
            .iter()
            .map(|w| Ok(w.at_lambda(l)?.sus.pooled().collect()))
            .collect(),
        ("ldr", Hyper::None) => words
            .iter()
            .map(|w| {
                w.ldr
                    .clone()
                    .ok_or_else(|| Error::Data(format!("no LDR scores for {:?}", w.word)))
            })
            .collect(),
        ("widid", Hyper::Damping(d)) => {
            let per: Vec<&DampingScores> = words.iter().map(|w| w.at_damping(d)).collect::<Result<_>>()?;
            let bounds = compute_gold_imputation_bounds(per.iter().map(|p| &p.sfd_hat))?;
            Ok(per
                .iter()
                .map(|p| {
                    p.labels
                        .iter()
                        .map(|&k| {
                            let (x, y) = (p.sfd_hat.old_counts[k], p.sfd_hat.modern_counts[k]);
                            tau_from_counts(x, y, bounds).map(|(t, _)| t).unwrap_or(0.0)
                        })
                        .collect()
                })
                .collect())
        }
        _ => Err(Error::InvalidArgument(format!("method {method:?} cannot take {h}"))),
    }
}

fn word_values(words: &[&WordEvalData], method: &str, h: Hyper) -> Result<Vec<Option<f64>>> {
    match h {
        Hyper::None => Ok(words.iter().map(|w| w.fixed.get(method)).collect()),
        Hyper::Lambda(l) => words
            .iter()
            .map(|w| {
                let s = w.at_lambda(l)?;
                Ok(match method {
                    "f3" => s.f3,
                    "f_sus" => metrics::magnitude_suite(&w.word, 0.0, &metrics::MagnitudeInputs {
                        sus: Some(&s.sus),
                        ..Default::default()
                    })
                    .f_sus,
                    "f1" => Some(s.sus.pooled().map(f64::abs).sum()),
                    "g_sus" => metrics::scope_suite(&w.word, 0.0, &metrics::ScopeInputs {
                        sus: Some(&s.sus),
                        ..Default::default()
                    })
                    .g_sus,
                    _ => return Err(Error::InvalidArgument(format!("method {method:?} cannot take {h}"))),
                })
            })
            .collect(),
        Hyper::LambdaRatio { lambda, r } => {
            let sus: Vec<&SusScores> = words
                .iter()
                .map(|w| w.at_lambda(lambda).map(|s| &s.sus))
                .collect::<Result<_>>()?;
            let theta = threshold_from_ratio(sus.iter().copied(), r)?;
            sus.iter()
                .map(|s| match method {
                    "f2" => Ok(Some(f2(s, theta))),
                    "g1" => Ok(Some(g1(s, theta))),
                    _ => Err(Error::InvalidArgument(format!("method {method:?} cannot take {h}"))),
                })
                .collect()
        }
        Hyper::Damping(d) => words
            .iter()
            .map(|w| {
                let s = w.at_damping(d)?;
                Ok(match method {
                    "f_widid" => s.f_widid,
                    "f_apdp" => s.f_apdp,
                    "g_widid" => s.g_widid,
                    _ => return Err(Error::InvalidArgument(format!("method {method:?} cannot take {h}"))),
                })
            })
            .collect(),
    }
}

fn gold_word_value(w: &WordEvalData, task: Task) -> Option<f64> {
    let (f, g) = metrics::gold_word_scores(&w.gold_sfd).ok()?;
    match task {
        Task::WordScope => Some(g),
        _ => Some(f),
    }
}

/// Test-set score of `method` at `h` on `words`, with imputation bounds
/// and thresholds computed over exactly these words.
pub fn score_words(words: &[&WordEvalData], task: Task, method: &str, h: Hyper) -> Result<f64> {
    match task {
        Task::Instance | Task::Sense => {
            let bounds = compute_gold_imputation_bounds(words.iter().map(|w| &w.gold_sfd))?;
            let scores = instance_scores(words, method, h)?;
            let tables: Vec<InstanceTable> = words
                .iter()
                .zip(scores)
                .map(|(w, scores)| InstanceTable {
                    word: w.word.clone(),
                    scores,
                    gold_tau: gold_taus(w, bounds),
                    gold_senses: w.gold_senses.clone(),
                })
                .collect();
            if task == Task::Instance {
                eval_instance_level(&tables)
            } else {
                eval_sense_level(&tables)
            }
        }
        Task::WordMagnitude | Task::WordScope => {
            let values = word_values(words, method, h)?;
            let gold: Vec<Option<f64>> = words.iter().map(|w| gold_word_value(w, task)).collect();
            eval_word_level(&values, &gold)
        }
    }
}

fn check_method(task: Task, method: &str) -> Result<()> {
    if !task.methods().contains(&method) {
        return Err(Error::InvalidArgument(format!(
            "method {method:?} is not defined for task {task}; expected one of {:?}",
            task.methods()
        )));
    }
    Ok(())
}

/// Grid point with the best validation ρ; the earliest wins ties.
pub fn tune_hyperparams(validation: &[&WordEvalData], task: Task, method: &str, config: &EvalConfig) -> Result<(Hyper, f64)> {
    check_method(task, method)?;
    let mut best: Option<(Hyper, f64)> = None;
    for h in grid_for(method, config)? {
        let Ok(rho) = score_words(validation, task, method, h) else {
            continue;
        };
        if best.is_none_or(|(_, b)| rho > b) {
            best = Some((h, rho));
        }
    }
    best.ok_or_else(|| Error::UndefinedCorrelation(format!("{method}: no grid point is defined on the validation set")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Strata {
    pub stable: Vec<f64>,
    pub changed: Vec<f64>,
    pub stable_mean: Option<f64>,
    pub changed_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    pub method: String,
    pub mean: f64,
    /// Test ρ of every split that produced one.
    pub per_split: Vec<f64>,
    /// Selected hyperparameters per successful split.
    pub selected: Vec<Hyper>,
    /// Selection counts keyed by the hyperparameter's display form.
    pub histogram: BTreeMap<String, usize>,
    pub dropped: usize,
    pub repetitions: usize,
    /// Test ρ on annotated stable and changed words, when annotations exist.
    pub strata: Option<Strata>,
}

impl EvalReport {
    /// The most frequently selected setting; ties go to the lexically first.
    pub fn mode(&self) -> Option<&str> {
        let top = *self.histogram.values().max()?;
        self.histogram.iter().find(|(_, &c)| c == top).map(|(k, _)| k.as_str())
    }
}

struct SplitOutcome {
    rho: f64,
    hyper: Hyper,
    stable: Option<f64>,
    changed: Option<f64>,
}

fn run_split(words: &[WordEvalData], task: Task, method: &str, config: &EvalConfig, rep: usize) -> Result<SplitOutcome> {
    let idx: Vec<usize> = (0..words.len()).collect();
    let (val, test) = split_words(&idx, config.split_ratio, config.rng_seed, rep as u64)?;
    let val: Vec<&WordEvalData> = val.iter().map(|&i| &words[i]).collect();
    let test: Vec<&WordEvalData> = test.iter().map(|&i| &words[i]).collect();
    let (hyper, _) = tune_hyperparams(&val, task, method, config)?;
    let rho = score_words(&test, task, method, hyper)?;
    let stratum = |flag: bool| {
        let part: Vec<&WordEvalData> = test.iter().copied().filter(|w| w.changed == Some(flag)).collect();
        score_words(&part, task, method, hyper).ok()
    };
    let annotated = test.iter().any(|w| w.changed.is_some());
    Ok(SplitOutcome {
        rho,
        hyper,
        stable: annotated.then(|| stratum(false)).flatten(),
        changed: annotated.then(|| stratum(true)).flatten(),
    })
}

pub fn run_repeated(words: &[WordEvalData], task: Task, method: &str, config: &EvalConfig) -> Result<EvalReport> {
    run_repeated_with(words, task, method, config, Execution::default())
}

/// Split, tune on validation, score on test; `config.repetitions` times.
/// Failed splits are dropped and counted.
pub fn run_repeated_with(
    words: &[WordEvalData],
    task: Task,
    method: &str,
    config: &EvalConfig,
    exec: Execution,
) -> Result<EvalReport> {
    config.validate()?;
    check_method(task, method)?;
    if words.len() < MIN_WORDS {
        return Err(Error::InvalidArgument(format!(
            "need at least {MIN_WORDS} words, got {}",
            words.len()
        )));
    }
    let outcomes = exec.map_range(config.repetitions, |rep| run_split(words, task, method, config, rep));
    let mut per_split = Vec::new();
    let mut selected = Vec::new();
    let mut histogram: BTreeMap<String, usize> = BTreeMap::new();
    let (mut stable, mut changed) = (Vec::new(), Vec::new());
    let mut dropped = 0;
    let mut annotated = false;
    for o in outcomes {
        match o {
            Ok(o) => {
                per_split.push(o.rho);
                selected.push(o.hyper);
                *histogram.entry(o.hyper.to_string()).or_default() += 1;
                annotated |= o.stable.is_some() || o.changed.is_some();
                stable.extend(o.stable);
                changed.extend(o.changed);
            }
            Err(_) => dropped += 1,
        }
    }
    if per_split.is_empty() {
        return Err(Error::UndefinedCorrelation(format!(
            "{method} on {task}: every split failed"
        )));
    }
    let avg = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    let strata = annotated.then(|| Strata {
        stable_mean: avg(&stable),
        changed_mean: avg(&changed),
        stable,
        changed,
    });
    Ok(EvalReport {
        task,
        method: method.to_string(),
        mean: avg(&per_split).expect("nonempty"),
        per_split,
        selected,
        histogram,
        dropped,
        repetitions: config.repetitions,
        strata,
    })
}

pub fn write_report_json(path: impl AsRef<Path>, reports: &[EvalReport]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer_pretty(BufWriter::new(file), reports)?;
    Ok(())
}

/// `task, method, mean, splits, dropped, mode`.
pub fn write_report_csv(path: impl AsRef<Path>, reports: &[EvalReport]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(["task", "method", "mean_rho", "splits", "dropped", "most_selected"])?;
    for r in reports {
        w.write_record([
            r.task.name(),
            r.method.as_str(),
            &r.mean.to_string(),
            &r.per_split.len().to_string(),
            &r.dropped.to_string(),
            r.mode().unwrap_or(""),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
