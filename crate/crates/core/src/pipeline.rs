//! Per-word orchestration: cost, UOT over the λ grid, exact OT, SUS, LDR,
//! the clustering baseline and the inputs the evaluation harness needs.
//!
//! # Cache layout
//!
//! ```text
//! <cache>/<word>/manifest.json     content key, instance ids
//! <cache>/<word>/base.json         exact OT plan, LDR, vMF fits, gold SFD
//! <cache>/<word>/lambda-<λ>.json   UOT plan and SUS for one λ
//! <cache>/<word>/damping-<d>.json  clusters, estimated SFD, prototypes
//! ```
//!
//! The key is a SHA-256 over the word's instances, the embedding rows it
//! uses and the solver configuration. A word directory whose manifest
//! carries a different key is cleared before anything is written.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embed::{cosine_cost_with, CostMatrix, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::eval::{DampingScores, LambdaScores, WordEvalData};
use crate::exec::Execution;
use crate::ingest::{build_gold_sfd, Period, SenseFrequencyDistribution, WordDataset};
use crate::metrics::{self, MagnitudeInputs, ScopeInputs, WordChangeScores};
use crate::ot::{solve_exact_ot, solve_uot_mm, MmOptions, TransportPlan, WeightVectors};
use crate::senses::{affinity_propagation, cosine_similarity, estimate_sfd, sense_prototypes, ApOptions, ClusterAssignment, Prototypes};
use crate::sus::{compute_sus, fit_vmf, ldr_scores, LdrScores, SusScores, VmfParams};

pub const CACHE_ENV: &str = "SEMSHIFT_CACHE_DIR";
pub const DEFAULT_LAMBDA: f64 = 100.0;
const CACHE_FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub lambda_grid: Vec<f64>,
    pub damping_grid: Vec<f64>,
    pub mm: MmOptions,
    /// Template for every damping; its `damping` field is overwritten.
    pub ap: ApOptions,
    /// Include `log C_d(κ_T) − log C_d(κ_S)` in the per-instance LDR.
    pub include_normalizer: bool,
    #[serde(skip)]
    pub exec: Execution,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let eval = crate::eval::EvalConfig::default();
        PipelineConfig {
            lambda_grid: eval.all_lambdas(),
            damping_grid: eval.damping_grid,
            mm: MmOptions::default(),
            ap: ApOptions::default(),
            include_normalizer: true,
            exec: Execution::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_grid.is_empty() {
            return Err(Error::Config("lambda_grid is empty".into()));
        }
        if self.lambda_grid.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::Config("lambda values must be positive and finite".into()));
        }
        if self.damping_grid.iter().any(|&d| !(0.5..1.0).contains(&d)) {
            return Err(Error::Config("damping values must lie in [0.5, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaArtifact {
    pub lambda: f64,
    pub plan: TransportPlan,
    pub sus: SusScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DampingArtifact {
    pub clusters: ClusterAssignment,
    pub sfd_hat: SenseFrequencyDistribution,
    pub prototypes: Prototypes,
}

/// λ- and damping-independent results for one word.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseArtifact {
    pub word: String,
    pub balanced: TransportPlan,
    pub ldr: Option<LdrScores>,
    /// Why `ldr` is absent.
    pub ldr_error: Option<String>,
    pub vmf_old: Option<VmfParams>,
    pub vmf_modern: Option<VmfParams>,
    pub gold_sfd: Option<SenseFrequencyDistribution>,
    pub f_apd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    format: u32,
    key: String,
    word: String,
    old_ids: Vec<String>,
    modern_ids: Vec<String>,
}

/// Everything computed for one word. Every matrix and score vector uses
/// the instance order of the word's [`WordDataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct WordArtifacts {
    pub word: String,
    pub old_ids: Vec<String>,
    pub modern_ids: Vec<String>,
    pub cost: CostMatrix,
    pub base: BaseArtifact,
    pub per_lambda: Vec<LambdaArtifact>,
    pub per_damping: Vec<DampingArtifact>,
}

fn same(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
}

impl WordArtifacts {
    pub fn at_lambda(&self, lambda: f64) -> Result<&LambdaArtifact> {
        self.per_lambda
            .iter()
            .find(|a| same(a.lambda, lambda))
            .ok_or(Error::NotCached(lambda))
    }

    pub fn periods(&self) -> Vec<Period> {
        let mut p = vec![Period::Old; self.old_ids.len()];
        p.extend(vec![Period::Modern; self.modern_ids.len()]);
        p
    }

    /// Metrics that depend on no hyperparameter, plus the gold f*, g*.
    pub fn fixed_scores(&self) -> WordChangeScores {
        let f = metrics::magnitude_suite(&self.word, 0.0, &MagnitudeInputs {
            ot_plan: Some(&self.base.balanced),
            cost: Some(&self.cost),
            ldr: self.base.ldr.as_ref(),
            ..Default::default()
        });
        let kappa = match (&self.base.vmf_old, &self.base.vmf_modern) {
            (Some(s), Some(t)) => Some((s.kappa, t.kappa)),
            _ => None,
        };
        let g = metrics::scope_suite(&self.word, 0.0, &ScopeInputs {
            kappa,
            ldr: self.base.ldr.as_ref(),
            ..Default::default()
        });
        let mut out = f.merge(&g);
        out.f_apd = Some(self.base.f_apd);
        if let Some(gold) = &self.base.gold_sfd {
            if let Ok((fs, gs)) = metrics::gold_word_scores(gold) {
                out.f_star = Some(fs);
                out.g_star = Some(gs);
            }
        }
        out
    }

    /// Every word metric at one λ and threshold, with the baseline at one
    /// damping when given.
    pub fn word_scores(&self, lambda: f64, theta: f64, damping: Option<f64>) -> Result<WordChangeScores> {
        let at = self.at_lambda(lambda)?;
        let d = damping
            .map(|d| {
                self.per_damping
                    .iter()
                    .find(|a| same(a.clusters.damping, d))
                    .ok_or_else(|| Error::InvalidArgument(format!("damping {d} not computed")))
            })
            .transpose()?;
        let f = metrics::magnitude_suite(&self.word, theta, &MagnitudeInputs {
            sus: Some(&at.sus),
            plan: Some(&at.plan),
            cost: Some(&self.cost),
            sfd_hat: d.map(|d| &d.sfd_hat),
            prototypes: d.map(|d| &d.prototypes),
            ..Default::default()
        });
        let g = metrics::scope_suite(&self.word, theta, &ScopeInputs {
            sus: Some(&at.sus),
            sfd_hat: d.map(|d| &d.sfd_hat),
            ..Default::default()
        });
        let mut out = self.fixed_scores().merge(&f).merge(&g);
        out.theta = theta;
        Ok(out)
    }

    /// Inputs for the evaluation harness. Needs a gold SFD.
    pub fn to_eval_data(&self, dataset: &WordDataset, changed: Option<bool>) -> Result<WordEvalData> {
        let gold_sfd = self
            .base
            .gold_sfd
            .clone()
            .ok_or_else(|| Error::Data(format!("word {:?} has no gold SFD", self.word)))?;
        let per_lambda = self
            .per_lambda
            .iter()
            .map(|a| LambdaScores {
                lambda: a.lambda,
                sus: a.sus.clone(),
                f3: Some(a.plan.transport_cost(&self.cost)),
            })
            .collect();
        let per_damping = self
            .per_damping
            .iter()
            .map(|a| {
                let f = metrics::magnitude_suite(&self.word, 0.0, &MagnitudeInputs {
                    sfd_hat: Some(&a.sfd_hat),
                    prototypes: Some(&a.prototypes),
                    ..Default::default()
                });
                let g = metrics::scope_suite(&self.word, 0.0, &ScopeInputs {
                    sfd_hat: Some(&a.sfd_hat),
                    ..Default::default()
                });
                DampingScores {
                    damping: a.clusters.damping,
                    labels: a.clusters.labels.clone(),
                    sfd_hat: a.sfd_hat.clone(),
                    f_widid: f.f_widid,
                    f_apdp: f.f_apdp,
                    g_widid: g.g_widid,
                }
            })
            .collect();
        let ldr = self
            .base
            .ldr
            .as_ref()
            .map(|l| l.old.iter().chain(&l.modern).copied().collect());
        Ok(WordEvalData {
            word: self.word.clone(),
            gold_sfd,
            gold_senses: dataset.pooled().map(|i| i.gold_sense).collect(),
            changed,
            per_lambda,
            per_damping,
            ldr,
            fixed: self.fixed_scores(),
        })
    }
}

/// On-disk artifact store.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cache {
    root: PathBuf,
}

impl Cache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Cache { root: root.into() }
    }

    /// `$SEMSHIFT_CACHE_DIR` if set, else `default`.
    pub fn from_env_or(default: impl Into<PathBuf>) -> Self {
        match std::env::var_os(CACHE_ENV) {
            Some(dir) if !dir.is_empty() => Cache::new(dir),
            _ => Cache::new(default),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn word_dir(&self, word: &str) -> PathBuf {
        let safe: String = word
            .chars()
            .map(|c| if c.is_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
            .collect();
        self.root.join(safe)
    }

    fn read<T: DeserializeOwned>(path: &Path) -> Result<Option<T>> {
        match fs::read(path) {
            Ok(bytes) => Ok(Some(serde_json::from_slice(&bytes)?)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    fn write<T: Serialize>(path: &Path, value: &T) -> Result<()> {
        let bytes = serde_json::to_vec(value)?;
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    /// Load whatever is cached for `word`, ignoring the content key.
    pub fn load(&self, word: &str) -> Result<Option<(Vec<String>, Vec<String>, BaseArtifact)>> {
        let dir = self.word_dir(word);
        let Some(m) = Self::read::<Manifest>(&dir.join("manifest.json"))? else {
            return Ok(None);
        };
        let Some(base) = Self::read::<BaseArtifact>(&dir.join("base.json"))? else {
            return Ok(None);
        };
        Ok(Some((m.old_ids, m.modern_ids, base)))
    }

    pub fn load_lambda(&self, word: &str, lambda: f64) -> Result<Option<LambdaArtifact>> {
        Self::read(&self.word_dir(word).join(lambda_file(lambda)))
    }

    pub fn load_damping(&self, word: &str, damping: f64) -> Result<Option<DampingArtifact>> {
        Self::read(&self.word_dir(word).join(damping_file(damping)))
    }
}

fn lambda_file(lambda: f64) -> String {
    format!("lambda-{lambda}.json")
}

fn damping_file(damping: f64) -> String {
    format!("damping-{damping}.json")
}

fn content_key(dataset: &WordDataset, u: &EmbeddingMatrix, v: &EmbeddingMatrix, config: &PipelineConfig) -> Result<String> {
    let mut h = Sha256::new();
    h.update(CACHE_FORMAT.to_le_bytes());
    h.update(serde_json::to_vec(dataset)?);
    for m in [u, v] {
        h.update((m.rows() as u64).to_le_bytes());
        h.update((m.dims() as u64).to_le_bytes());
        for x in m.data() {
            h.update(x.to_le_bytes());
        }
    }
    // grids are not part of the key: each grid point has its own file
    h.update(serde_json::to_vec(&(&config.mm, &config.ap, config.include_normalizer))?);
    Ok(hex::encode(h.finalize()))
}

fn ids(list: &[crate::ingest::UsageInstance]) -> Vec<&str> {
    list.iter().map(|i| i.id.as_str()).collect()
}

fn compute_base(dataset: &WordDataset, u: &EmbeddingMatrix, v: &EmbeddingMatrix, cost: &CostMatrix, w: &WeightVectors, config: &PipelineConfig) -> Result<BaseArtifact> {
    let balanced = solve_exact_ot(w, cost)?;
    let (ldr, ldr_error) = match ldr_scores(u, v, config.include_normalizer) {
        Ok(l) => (Some(l), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let fit = |x: &EmbeddingMatrix| fit_vmf(x).ok().filter(|p| !p.degenerate);
    Ok(BaseArtifact {
        word: dataset.word.clone(),
        balanced,
        ldr,
        ldr_error,
        vmf_old: fit(u),
        vmf_modern: fit(v),
        gold_sfd: build_gold_sfd(dataset).ok(),
        f_apd: cost.mean(),
    })
}

fn compute_damping(pooled: &EmbeddingMatrix, sim: &ndarray::Array2<f64>, periods: &[Period], damping: f64, config: &PipelineConfig) -> Result<DampingArtifact> {
    let opts = ApOptions {
        damping,
        ..config.ap
    };
    let clusters = affinity_propagation(sim, &opts)?;
    let sfd_hat = estimate_sfd(&clusters, periods)?;
    let prototypes = sense_prototypes(&clusters, pooled, periods)?;
    Ok(DampingArtifact {
        clusters,
        sfd_hat,
        prototypes,
    })
}

/// Run the whole per-word computation, reusing any cached grid points.
pub fn process_word(
    dataset: &WordDataset,
    embeddings: &EmbeddingMatrix,
    config: &PipelineConfig,
    cache: Option<&Cache>,
) -> Result<WordArtifacts> {
    config.validate()?;
    let u = embeddings.select(&ids(&dataset.old_instances))?;
    let v = embeddings.select(&ids(&dataset.modern_instances))?;
    let exec = config.exec;
    let cost = cosine_cost_with(&u, &v, exec)?;
    let w = WeightVectors::uniform(dataset.m(), dataset.n());
    let old_ids: Vec<String> = u.ids().to_vec();
    let modern_ids: Vec<String> = v.ids().to_vec();

    let dir = match cache {
        Some(c) => {
            let dir = c.word_dir(&dataset.word);
            let key = content_key(dataset, &u, &v, config)?;
            let manifest = Manifest {
                format: CACHE_FORMAT,
                key,
                word: dataset.word.clone(),
                old_ids: old_ids.clone(),
                modern_ids: modern_ids.clone(),
            };
            let current: Option<Manifest> = Cache::read(&dir.join("manifest.json")).unwrap_or(None);
            if current.as_ref() != Some(&manifest) {
                if dir.exists() {
                    fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                }
                fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                Cache::write(&dir.join("manifest.json"), &manifest)?;
            }
            Some(dir)
        }
        None => None,
    };
    let cached = |name: &str| -> Option<PathBuf> { dir.as_ref().map(|d| d.join(name)) };

    let base = match cached("base.json").map(|p| Cache::read::<BaseArtifact>(&p)).transpose()?.flatten() {
        Some(b) => b,
        None => {
            let b = compute_base(dataset, &u, &v, &cost, &w, config)?;
            if let Some(p) = cached("base.json") {
                Cache::write(&p, &b)?;
            }
            b
        }
    };

    let per_lambda: Vec<LambdaArtifact> = exec
        .map(&config.lambda_grid, |&lambda| -> Result<LambdaArtifact> {
            let path = cached(&lambda_file(lambda));
            if let Some(hit) = path.as_ref().map(|p| Cache::read::<LambdaArtifact>(p)).transpose()?.flatten() {
                return Ok(hit);
            }
            let plan = solve_uot_mm(&w, &cost, lambda, lambda, &config.mm)?;
            let sus = compute_sus(&plan, &w)?;
            let a = LambdaArtifact { lambda, plan, sus };
            if let Some(p) = path {
                Cache::write(&p, &a)?;
            }
            Ok(a)
        })
        .into_iter()
        .collect::<Result<_>>()?;

    let per_damping: Vec<DampingArtifact> = if config.damping_grid.is_empty() {
        Vec::new()
    } else {
        let pooled = u.concat(&v)?;
        let sim = cosine_similarity(&pooled)?;
        let periods: Vec<Period> = dataset.pooled().map(|i| i.period).collect();
        exec.map(&config.damping_grid, |&d| -> Result<DampingArtifact> {
            let path = cached(&damping_file(d));
            if let Some(hit) = path.as_ref().map(|p| Cache::read::<DampingArtifact>(p)).transpose()?.flatten() {
                return Ok(hit);
            }
            let a = compute_damping(&pooled, &sim, &periods, d, config)?;
            if let Some(p) = path {
                Cache::write(&p, &a)?;
            }
            Ok(a)
        })
        .into_iter()
        .collect::<Result<_>>()?
    };

    Ok(WordArtifacts {
        word: dataset.word.clone(),
        old_ids,
        modern_ids,
        cost,
        base,
        per_lambda,
        per_damping,
    })
}

/// [`process_word`] over many words, in parallel when `config.exec` allows.
pub fn process_words(
    datasets: &[WordDataset],
    embeddings: &EmbeddingMatrix,
    config: &PipelineConfig,
    cache: Option<&Cache>,
) -> Vec<Result<WordArtifacts>> {
    config
        .exec
        .map(datasets, |d| process_word(d, embeddings, config, cache))
}

/// One row of the per-instance score table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRow {
    pub id: String,
    pub period: Period,
    pub snippet: String,
    pub gold_sense: Option<u32>,
    pub sus: f64,
    pub ldr: Option<f64>,
}

const SNIPPET_RADIUS: usize = 40;

/// Target in context, cut to about `SNIPPET_RADIUS` bytes either side.
pub fn snippet(context: &str, start: usize, end: usize) -> String {
    let mut lo = start.saturating_sub(SNIPPET_RADIUS);
    while !context.is_char_boundary(lo) {
        lo -= 1;
    }
    let mut hi = (end + SNIPPET_RADIUS).min(context.len());
    while !context.is_char_boundary(hi) {
        hi += 1;
    }
    let (Some(pre), Some(target), Some(post)) = (context.get(lo..start), context.get(start..end), context.get(end..hi)) else {
        return context.to_string();
    };
    let mut s = String::new();
    if lo > 0 {
        s.push_str("...");
    }
    s.push_str(pre);
    s.push('[');
    s.push_str(target);
    s.push(']');
    s.push_str(post);
    if hi < context.len() {
        s.push_str("...");
    }
    s
}

/// Instances ranked by SUS at `lambda`, highest first; ties by id.
pub fn export_instance_table(artifacts: &WordArtifacts, dataset: &WordDataset, lambda: f64) -> Result<Vec<InstanceRow>> {
    let at = artifacts.at_lambda(lambda)?;
    if dataset.m() != at.sus.alpha.len() || dataset.n() != at.sus.beta.len() {
        return Err(Error::Shape(format!(
            "dataset {}+{} against SUS {}+{}",
            dataset.m(),
            dataset.n(),
            at.sus.alpha.len(),
            at.sus.beta.len()
        )));
    }
    let ldr: Vec<Option<f64>> = match &artifacts.base.ldr {
        Some(l) => l.old.iter().chain(&l.modern).map(|&x| Some(x)).collect(),
        None => vec![None; dataset.m() + dataset.n()],
    };
    let mut rows: Vec<InstanceRow> = dataset
        .pooled()
        .zip(at.sus.pooled())
        .zip(ldr)
        .map(|((inst, sus), ldr)| InstanceRow {
            id: inst.id.clone(),
            period: inst.period,
            snippet: snippet(&inst.context, inst.target_start, inst.target_end),
            gold_sense: inst.gold_sense,
            sus,
            ldr,
        })
        .collect();
    rows.sort_by(|a, b| b.sus.total_cmp(&a.sus).then_with(|| a.id.cmp(&b.id)));
    Ok(rows)
}

const INSTANCE_HEADER: [&str; 6] = ["instance_id", "period", "context", "gold_sense", "sus", "ldr"];

pub fn write_instance_table(path: impl AsRef<Path>, rows: &[InstanceRow]) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_instance_rows(std::io::BufWriter::new(file), rows)
}

/// Same table as [`write_instance_table`], to any writer.
pub fn write_instance_rows<W: std::io::Write>(out: W, rows: &[InstanceRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(INSTANCE_HEADER)?;
    for r in rows {
        w.write_record([
            r.id.as_str(),
            r.period.name(),
            r.snippet.as_str(),
            &r.gold_sense.map(|s| s.to_string()).unwrap_or_default(),
            &r.sus.to_string(),
            &r.ldr.map(|x| x.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<instance table>", e))
}

pub fn read_instance_table(path: impl AsRef<Path>) -> Result<Vec<InstanceRow>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path)?;
    let bad = |line: u64, message: String| Error::Row {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != INSTANCE_HEADER.len() {
            return Err(bad(line, format!("expected {} fields, found {}", INSTANCE_HEADER.len(), rec.len())));
        }
        let period = match &rec[1] {
            "OLD" => Period::Old,
            "MODERN" => Period::Modern,
            other => return Err(bad(line, format!("unknown period {other:?}"))),
        };
        let num = |s: &str| s.parse::<f64>().map_err(|e| bad(line, format!("{s:?}: {e}")));
        rows.push(InstanceRow {
            id: rec[0].to_string(),
            period,
            snippet: rec[2].to_string(),
            gold_sense: if rec[3].is_empty() {
                None
            } else {
                Some(rec[3].parse().map_err(|e| bad(line, format!("gold sense: {e}")))?)
            },
            sus: num(&rec[4])?,
            ldr: if rec[5].is_empty() { None } else { Some(num(&rec[5])?) },
        });
    }
    Ok(rows)
}
