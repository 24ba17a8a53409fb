use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use semshift::embed::{cosine_cost_with, read_matrix, write_matrix, EmbeddingMatrix};
use semshift::eval::{self, run_repeated_with, Task};
use semshift::ingest::{self, assemble_word_dataset, build_gold_sfd, UsageInstance, WordDataset};
use semshift::metrics::{self, gold_word_scores, threshold_from_ratio};
use semshift::ot::{solve_exact_ot, solve_uot_mm, MmOptions, TransportPlan, WeightVectors};
use semshift::pipeline::{self, export_instance_table, process_word, process_words, Cache, PipelineConfig, WordArtifacts};
use semshift::senses::{affinity_propagation, cosine_similarity, estimate_sfd, write_clusters, ApOptions};
use semshift::synth::{generate, SynthConfig};
use semshift::Execution;

use crate::config::RunConfig;
use crate::{CliError, CliResult};

fn required<'a>(value: &'a Option<PathBuf>, flag: &str) -> CliResult<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| CliError::usage(format!("missing {flag} (flag or config field)")))
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::data(format!("cannot create {}: {e}", dir.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::data(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))
}

/// A word as a file name component.
fn file_stem(word: &str) -> String {
    word.chars()
        .map(|c| if c.is_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn load_inputs(cfg: &RunConfig) -> CliResult<(Vec<UsageInstance>, EmbeddingMatrix)> {
    let mut instances = ingest::read_jsonl(required(&cfg.instances, "--instances")?)?;
    if cfg.drop_undefined {
        instances.retain(|i| i.gold_sense.is_some());
    }
    let embeddings = read_matrix(required(&cfg.embeddings, "--embeddings")?)?;
    Ok((instances, embeddings))
}

fn datasets(cfg: &RunConfig, instances: &[UsageInstance]) -> CliResult<Vec<WordDataset>> {
    let known = ingest::words(instances);
    let words = if cfg.words.is_empty() { known.clone() } else { cfg.words.clone() };
    if words.is_empty() {
        return Err(CliError::data("no instances to process"));
    }
    words
        .iter()
        .map(|w| {
            if known.binary_search(w).is_err() {
                return Err(CliError::data(format!("word {w:?} has no instances")));
            }
            Ok(assemble_word_dataset(instances, w)?)
        })
        .collect()
}

fn check_convergence(arts: &[WordArtifacts], fatal: bool) -> CliResult<()> {
    let plans: Vec<&TransportPlan> = arts.iter().flat_map(|a| a.per_lambda.iter().map(|l| &l.plan)).collect();
    let stuck_plans = plans.iter().filter(|p| !p.converged).count();
    let runs = arts.iter().map(|a| a.per_damping.len()).sum::<usize>();
    let stuck_runs = arts.iter().flat_map(|a| &a.per_damping).filter(|d| !d.clusters.converged).count();
    for a in arts {
        if let Some(e) = &a.base.ldr_error {
            eprintln!("warning: no log density ratio for {:?}: {e}", a.word);
        }
    }
    if stuck_plans + stuck_runs == 0 {
        return Ok(());
    }
    let msg = format!(
        "{stuck_plans} of {} transport plans and {stuck_runs} of {runs} clusterings did not converge",
        plans.len()
    );
    if fatal {
        Err(CliError::nonconvergence(msg))
    } else {
        eprintln!("warning: {msg}");
        Ok(())
    }
}

fn run_pipeline(cfg: &RunConfig, datasets: &[WordDataset], embeddings: &EmbeddingMatrix) -> CliResult<Vec<WordArtifacts>> {
    let cache = Cache::new(cfg.cache_dir());
    let arts = process_words(datasets, embeddings, &cfg.pipeline(), Some(&cache))
        .into_iter()
        .collect::<semshift::Result<Vec<_>>>()?;
    check_convergence(&arts, cfg.fail_on_nonconvergence)?;
    Ok(arts)
}

pub fn ingest(cfg: &RunConfig) -> CliResult<()> {
    let uses = required(&cfg.uses, "--uses")?;
    let out = required(&cfg.out, "--out")?;
    let mut instances = ingest::parse_uses(uses, &cfg.grouping_map())?;
    if let Some(senses) = &cfg.senses {
        for w in ingest::parse_senses(senses, &mut instances)? {
            eprintln!("warning: {}: {w}", senses.display());
        }
    }
    create_dir(out)?;
    let path = out.join("instances.jsonl");
    ingest::write_jsonl(&path, &instances)?;
    println!(
        "wrote {} instances of {} words to {}",
        instances.len(),
        ingest::words(&instances).len(),
        path.display()
    );
    Ok(())
}

pub fn process(cfg: &RunConfig) -> CliResult<()> {
    let (instances, embeddings) = load_inputs(cfg)?;
    let ds = datasets(cfg, &instances)?;
    let arts = run_pipeline(cfg, &ds, &embeddings)?;
    for a in &arts {
        println!("{}\t{} old\t{} modern\t{} lambdas\t{} dampings", a.word, a.old_ids.len(), a.modern_ids.len(), a.per_lambda.len(), a.per_damping.len());
    }
    let Some(out) = &cfg.out else { return Ok(()) };
    create_dir(out)?;
    let sus = arts.iter().map(|a| Ok(&a.at_lambda(cfg.lambda)?.sus)).collect::<semshift::Result<Vec<_>>>()?;
    let theta = threshold_from_ratio(sus, cfg.r)?;
    let damping = cfg.eval.damping_grid.contains(&cfg.damping).then_some(cfg.damping);
    let mut rows = Vec::new();
    for (a, d) in arts.iter().zip(&ds) {
        rows.push(a.word_scores(cfg.lambda, theta, damping)?);
        let table = export_instance_table(a, d, cfg.lambda)?;
        pipeline::write_instance_table(out.join(format!("{}.sus.csv", file_stem(&a.word))), &table)?;
    }
    metrics::write_word_scores(out.join("words.csv"), &rows)?;
    Ok(())
}

/// Artifacts of one word at `cfg.lambda`, which must already be cached.
fn cached_word(cfg: &RunConfig, word: &str) -> CliResult<(WordArtifacts, WordDataset)> {
    let cache = Cache::new(cfg.cache_dir());
    let missing = || {
        CliError::data(format!(
            "no cached results for {word:?} at lambda {} in {}: run process first",
            cfg.lambda,
            cache.root().display()
        ))
    };
    if cache.load(word)?.is_none() || cache.load_lambda(word, cfg.lambda)?.is_none() {
        return Err(missing());
    }
    let (instances, embeddings) = load_inputs(cfg)?;
    let ds = datasets(cfg, &instances)?.remove(0);
    let pc = PipelineConfig {
        lambda_grid: vec![cfg.lambda],
        damping_grid: Vec::new(),
        ..cfg.pipeline()
    };
    let art = process_word(&ds, &embeddings, &pc, Some(&cache))?;
    check_convergence(std::slice::from_ref(&art), cfg.fail_on_nonconvergence)?;
    Ok((art, ds))
}

pub fn sus(cfg: &RunConfig, word: &str, out: Option<&Path>) -> CliResult<()> {
    let (art, ds) = cached_word(cfg, word)?;
    let rows = export_instance_table(&art, &ds, cfg.lambda)?;
    match out {
        Some(p) => pipeline::write_instance_table(p, &rows)?,
        None => pipeline::write_instance_rows(std::io::stdout().lock(), &rows)?,
    }
    Ok(())
}

pub fn export_plan(cfg: &RunConfig, word: &str, out: Option<&Path>, binary: bool) -> CliResult<()> {
    let out = out.ok_or_else(|| CliError::usage("export-plan needs --out"))?;
    let (art, _) = cached_word(cfg, word)?;
    let plan = &art.at_lambda(cfg.lambda)?.plan;
    if binary {
        plan.write_block(out)?;
        for (ext, ids) in [("rows", &art.old_ids), ("cols", &art.modern_ids)] {
            let path = out.with_extension(ext);
            fs::write(&path, ids.join("\n") + "\n").map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))?;
        }
    } else {
        plan.write_csv(out, &art.old_ids, &art.modern_ids)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct SolveSummary {
    rows: usize,
    cols: usize,
    lambda: Option<f64>,
    objective: f64,
    transport_cost: f64,
    total_mass: f64,
    iterations: usize,
    converged: bool,
    kkt_residual: f64,
}

pub fn solve(source: &Path, target: &Path, lambda: Option<f64>, out: Option<&Path>, fatal: bool, threads: Option<usize>) -> CliResult<()> {
    let u = read_matrix(source)?;
    let v = read_matrix(target)?;
    let exec = if threads == Some(1) { Execution::Serial } else { Execution::Parallel };
    let cost = cosine_cost_with(&u, &v, exec)?;
    let w = WeightVectors::uniform(u.rows(), v.rows());
    let plan = match lambda {
        Some(l) => solve_uot_mm(&w, &cost, l, l, &MmOptions::default())?,
        None => solve_exact_ot(&w, &cost)?,
    };
    if let Some(p) = out {
        plan.write_csv(p, u.ids(), v.ids())?;
    }
    let summary = SolveSummary {
        rows: u.rows(),
        cols: v.rows(),
        lambda,
        objective: plan.objective,
        transport_cost: plan.transport_cost(&cost),
        total_mass: plan.total_mass(),
        iterations: plan.iterations,
        converged: plan.converged,
        kkt_residual: plan.kkt_residual,
    };
    println!("{}", serde_json::to_string_pretty(&summary).map_err(|e| CliError::data(e.to_string()))?);
    if !plan.converged {
        let msg = format!("solver stopped after {} iterations with KKT residual {:e}", plan.iterations, plan.kkt_residual);
        if fatal {
            return Err(CliError::nonconvergence(msg));
        }
        eprintln!("warning: {msg}");
    }
    Ok(())
}

#[derive(Serialize)]
struct BaselineRun {
    word: String,
    damping: f64,
    n_clusters: usize,
    converged: bool,
    iterations: usize,
    old_counts: Vec<u64>,
    modern_counts: Vec<u64>,
    jsd: Option<f64>,
    entropy_change: Option<f64>,
}

pub fn baseline(cfg: &RunConfig) -> CliResult<()> {
    let out = required(&cfg.out, "--out")?;
    let (instances, embeddings) = load_inputs(cfg)?;
    let ds = datasets(cfg, &instances)?;
    create_dir(out)?;
    let exec = cfg.execution();
    let mut runs = Vec::new();
    let mut gold = BTreeMap::new();
    let mut stuck = 0;
    for d in &ds {
        let ids: Vec<&str> = d.pooled().map(|i| i.id.as_str()).collect();
        let owned: Vec<String> = ids.iter().map(|s| s.to_string()).collect();
        let periods: Vec<_> = d.pooled().map(|i| i.period).collect();
        let pooled = embeddings.select(&ids)?;
        let s = cosine_similarity(&pooled)?;
        let results = exec.map(&cfg.eval.damping_grid, |&damping| {
            affinity_propagation(&s, &ApOptions { damping, ..cfg.ap })
        });
        for c in results {
            let c = c?;
            let sfd = estimate_sfd(&c, &periods)?;
            let (jsd, entropy_change) = match gold_word_scores(&sfd) {
                Ok((j, h)) => (Some(j), Some(h)),
                Err(_) => (None, None),
            };
            write_clusters(out.join(format!("{}.clusters-{}.csv", file_stem(&d.word), c.damping)), &c, &owned, &periods)?;
            stuck += usize::from(!c.converged);
            runs.push(BaselineRun {
                word: d.word.clone(),
                damping: c.damping,
                n_clusters: c.n_clusters,
                converged: c.converged,
                iterations: c.iterations,
                old_counts: sfd.old_counts,
                modern_counts: sfd.modern_counts,
                jsd,
                entropy_change,
            });
        }
        if let Ok(g) = build_gold_sfd(d) {
            gold.insert(d.word.clone(), g);
        }
    }
    write_json(&out.join("baseline.json"), &serde_json::json!({ "runs": runs, "gold": gold }))?;
    if stuck > 0 {
        let msg = format!("{stuck} of {} clusterings did not converge", runs.len());
        if cfg.fail_on_nonconvergence {
            return Err(CliError::nonconvergence(msg));
        }
        eprintln!("warning: {msg}");
    }
    Ok(())
}

pub fn eval(cfg: &RunConfig, task: Task, methods: &[String]) -> CliResult<()> {
    cfg.eval.validate()?;
    let methods: Vec<String> = if methods.is_empty() {
        task.methods().iter().map(|m| m.to_string()).collect()
    } else {
        methods.to_vec()
    };
    if let Some(m) = methods.iter().find(|m| !task.methods().contains(&m.as_str())) {
        return Err(CliError::usage(format!(
            "method {m:?} does not apply to task {}; choose from {}",
            task.name(),
            task.methods().join(", ")
        )));
    }
    let (instances, embeddings) = load_inputs(cfg)?;
    let ds = datasets(cfg, &instances)?;
    let arts = run_pipeline(cfg, &ds, &embeddings)?;
    let data = arts
        .iter()
        .zip(&ds)
        .map(|(a, d)| a.to_eval_data(d, cfg.changed.get(&a.word).copied()))
        .collect::<semshift::Result<Vec<_>>>()?;
    let mut reports = Vec::new();
    for m in &methods {
        match run_repeated_with(&data, task, m, &cfg.eval, cfg.execution()) {
            Ok(r) => {
                eprintln!("{}\t{}\tmean rho {:.4} over {} splits", task.name(), m, r.mean, r.per_split.len());
                reports.push(r);
            }
            Err(e) => eprintln!("warning: {} {m}: {e}", task.name()),
        }
    }
    if reports.is_empty() {
        return Err(CliError::data(format!("no method produced a correlation for task {}", task.name())));
    }
    match &cfg.out {
        Some(p) => {
            eval::write_report_json(p, &reports)?;
            eval::write_report_csv(p.with_extension("csv"), &reports)?;
        }
        None => {
            let text = serde_json::to_string_pretty(&reports).map_err(|e| CliError::data(e.to_string()))?;
            let mut stdout = std::io::stdout().lock();
            writeln!(stdout, "{text}").map_err(|e| CliError::data(e.to_string()))?;
        }
    }
    Ok(())
}

pub fn synth(sc: &SynthConfig, out: &Path) -> CliResult<()> {
    let corpus = generate(sc)?;
    create_dir(out)?;
    ingest::write_jsonl(out.join("instances.jsonl"), &corpus.instances)?;
    write_matrix(&corpus.embeddings, out.join("embeddings.suse"))?;
    write_json(&out.join("truth.json"), &corpus.words)?;
    let run = RunConfig {
        instances: Some("instances.jsonl".into()),
        embeddings: Some("embeddings.suse".into()),
        cache: Some("cache".into()),
        changed: corpus.words.iter().map(|w| (w.word.clone(), w.changed)).collect(),
        ..Default::default()
    };
    write_json(&out.join("config.json"), &run)?;
    println!(
        "wrote {} words, {} instances to {}",
        corpus.words.len(),
        corpus.instances.len(),
        out.display()
    );
    Ok(())
}
