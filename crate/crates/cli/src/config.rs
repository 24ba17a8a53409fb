//! Run configuration: one JSON file, every field optional, flags on top.
//! Relative paths in a config file are taken relative to that file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use semshift::eval::EvalConfig;
use semshift::ingest::{GroupingMap, Period};
use semshift::ot::MmOptions;
use semshift::pipeline::{PipelineConfig, DEFAULT_LAMBDA};
use semshift::senses::ApOptions;
use semshift::Execution;

pub const SCHEMA_VERSION: u32 = 1;
const DEFAULT_CACHE: &str = "semshift-cache";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub uses: Option<PathBuf>,
    pub senses: Option<PathBuf>,
    pub instances: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Grouping label to period, for `ingest`.
    pub groupings: BTreeMap<String, Period>,
    pub words: Vec<String>,
    /// Drop instances without a gold sense before anything is computed.
    pub drop_undefined: bool,
    /// Exit with status 3 when any solver or clustering run fails to converge.
    pub fail_on_nonconvergence: bool,
    pub threads: Option<usize>,
    /// λ used by single-λ exports.
    pub lambda: f64,
    /// Ratio giving θ for exported word-level scores.
    pub r: f64,
    /// Damping used for exported clustering-based word scores.
    pub damping: f64,
    pub eval: EvalConfig,
    pub mm: MmOptions,
    pub ap: ApOptions,
    pub include_normalizer: bool,
    /// Known stable/changed annotations, used to stratify evaluation.
    pub changed: BTreeMap<String, bool>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            version: SCHEMA_VERSION,
            uses: None,
            senses: None,
            instances: None,
            embeddings: None,
            cache: None,
            out: None,
            groupings: BTreeMap::from([("1".to_string(), Period::Old), ("2".to_string(), Period::Modern)]),
            words: Vec::new(),
            drop_undefined: false,
            fail_on_nonconvergence: false,
            threads: None,
            lambda: DEFAULT_LAMBDA,
            r: 0.6,
            damping: 0.9,
            eval: EvalConfig::default(),
            mm: MmOptions::default(),
            ap: ApOptions::default(),
            include_normalizer: true,
            changed: BTreeMap::new(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<RunConfig> {
        let text = fs::read_to_string(path).map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| anyhow::anyhow!("config {}: {e}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.uses,
            &mut cfg.senses,
            &mut cfg.instances,
            &mut cfg.embeddings,
            &mut cfg.cache,
            &mut cfg.out,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if cfg.version != SCHEMA_VERSION {
            anyhow::bail!(
                "config {} has schema version {}, this build reads version {SCHEMA_VERSION}",
                path.display(),
                cfg.version
            );
        }
        Ok(cfg)
    }

    pub fn execution(&self) -> Execution {
        match self.threads {
            Some(1) => Execution::Serial,
            _ => Execution::Parallel,
        }
    }

    pub fn grouping_map(&self) -> GroupingMap {
        let mut g = GroupingMap::new();
        for (label, &period) in &self.groupings {
            g.insert(label.clone(), period);
        }
        g
    }

    /// `--cache`, then `$SEMSHIFT_CACHE_DIR`, then `./semshift-cache`.
    pub fn cache_dir(&self) -> PathBuf {
        if let Some(dir) = &self.cache {
            return dir.clone();
        }
        semshift::pipeline::Cache::from_env_or(DEFAULT_CACHE).root().to_path_buf()
    }

    /// The pipeline covers every λ the evaluation can select, plus `lambda`.
    pub fn pipeline(&self) -> PipelineConfig {
        let mut lambdas = self.eval.all_lambdas();
        if !lambdas.contains(&self.lambda) {
            lambdas.push(self.lambda);
            lambdas.sort_by(f64::total_cmp);
        }
        PipelineConfig {
            lambda_grid: lambdas,
            damping_grid: self.eval.damping_grid.clone(),
            mm: self.mm,
            ap: self.ap,
            include_normalizer: self.include_normalizer,
            exec: self.execution(),
        }
    }
}
