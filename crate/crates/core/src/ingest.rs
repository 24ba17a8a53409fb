//! Usage tables, sense assignments and gold sense-frequency distributions.
//!
//! Input tables are tab-separated with a header row, using DWUG column
//! names. Target spans are `start:end` **byte** offsets into the context.
//! Quote characters carry no special meaning in either direction, so
//! contexts may contain `"` freely but never a tab or newline.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Period {
    Old,
    Modern,
}

impl Period {
    pub fn name(self) -> &'static str {
        match self {
            Period::Old => "OLD",
            Period::Modern => "MODERN",
        }
    }
}

impl fmt::Display for Period {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One occurrence of a target word. `gold_sense == None` is the
/// "undefined" sense: the instance has no usable gold label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageInstance {
    pub id: String,
    pub word: String,
    pub period: Period,
    pub context: String,
    pub target_start: usize,
    pub target_end: usize,
    pub gold_sense: Option<u32>,
}

impl UsageInstance {
    /// The target span as text, or `None` if the offsets split a UTF-8
    /// code point.
    pub fn target(&self) -> Option<&str> {
        self.context.get(self.target_start..self.target_end)
    }

    fn check_span(&self) -> std::result::Result<(), String> {
        if self.target_start >= self.target_end {
            return Err(format!(
                "empty or inverted target span {}:{}",
                self.target_start, self.target_end
            ));
        }
        if self.target_end > self.context.len() {
            return Err(format!(
                "target span exceeds context ({}:{} over {} bytes)",
                self.target_start,
                self.target_end,
                self.context.len()
            ));
        }
        Ok(())
    }
}

/// Maps the `grouping` column of a uses table onto a period.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupingMap {
    map: BTreeMap<String, Period>,
}

impl GroupingMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, grouping: impl Into<String>, period: Period) -> Self {
        self.map.insert(grouping.into(), period);
        self
    }

    pub fn insert(&mut self, grouping: impl Into<String>, period: Period) {
        self.map.insert(grouping.into(), period);
    }

    pub fn period(&self, grouping: &str) -> Option<Period> {
        self.map.get(grouping).copied()
    }

    /// Grouping label written back out for `period`: the smallest label
    /// mapped to it.
    pub fn label(&self, period: Period) -> Option<&str> {
        self.map
            .iter()
            .find(|(_, p)| **p == period)
            .map(|(g, _)| g.as_str())
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

impl From<HashMap<String, Period>> for GroupingMap {
    fn from(map: HashMap<String, Period>) -> Self {
        GroupingMap {
            map: map.into_iter().collect(),
        }
    }
}

fn tsv_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .quoting(false)
        .flexible(false)
        .from_reader(file))
}

fn column(headers: &csv::StringRecord, name: &str, path: &Path) -> Result<usize> {
    headers.iter().position(|h| h == name).ok_or_else(|| Error::Row {
        path: path.to_path_buf(),
        line: 1,
        message: format!("missing column {name:?}"),
    })
}

fn parse_span(raw: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = raw
        .split_once(':')
        .ok_or_else(|| format!("malformed target offsets {raw:?}, expected start:end"))?;
    let start = a
        .trim()
        .parse::<usize>()
        .map_err(|_| format!("non-numeric target start {a:?}"))?;
    let end = b
        .trim()
        .parse::<usize>()
        .map_err(|_| format!("non-numeric target end {b:?}"))?;
    Ok((start, end))
}

/// Read a uses table. Every instance starts with an undefined gold sense.
pub fn parse_uses(path: impl AsRef<Path>, groupings: &GroupingMap) -> Result<Vec<UsageInstance>> {
    let path = path.as_ref();
    let mut reader = tsv_reader(path)?;
    let headers = reader.headers()?.clone();
    let c_id = column(&headers, "identifier", path)?;
    let c_lemma = column(&headers, "lemma", path)?;
    let c_group = column(&headers, "grouping", path)?;
    let c_ctx = column(&headers, "context", path)?;
    let c_idx = column(&headers, "indexes_target_token", path)?;

    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let row_err = |message: String| Error::Row {
            path: path.to_path_buf(),
            line,
            message,
        };
        let grouping = &record[c_group];
        let period = groupings.period(grouping).ok_or_else(|| {
            Error::Config(format!(
                "grouping {grouping:?} (line {line}) has no period assignment"
            ))
        })?;
        let (target_start, target_end) = parse_span(&record[c_idx]).map_err(row_err)?;
        let inst = UsageInstance {
            id: record[c_id].to_string(),
            word: record[c_lemma].to_string(),
            period,
            context: record[c_ctx].to_string(),
            target_start,
            target_end,
            gold_sense: None,
        };
        inst.check_span().map_err(row_err)?;
        out.push(inst);
    }
    Ok(out)
}

/// Write instances back out as a uses table readable by [`parse_uses`].
pub fn write_uses(
    path: impl AsRef<Path>,
    instances: &[UsageInstance],
    groupings: &GroupingMap,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new()
        .delimiter(b'\t')
        .quote_style(csv::QuoteStyle::Never)
        .from_writer(BufWriter::new(file));
    w.write_record(["identifier", "lemma", "grouping", "context", "indexes_target_token"])?;
    for inst in instances {
        if inst.context.contains(['\t', '\n', '\r']) || inst.id.contains(['\t', '\n', '\r']) {
            return Err(Error::Data(format!(
                "instance {:?} contains a tab or newline and cannot be written as TSV",
                inst.id
            )));
        }
        let label = groupings.label(inst.period).ok_or_else(|| {
            Error::Config(format!("no grouping label for period {}", inst.period))
        })?;
        let span = format!("{}:{}", inst.target_start, inst.target_end);
        w.write_record([
            inst.id.as_str(),
            inst.word.as_str(),
            label,
            inst.context.as_str(),
            span.as_str(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// A sense-file identifier that matched no instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SenseWarning {
    pub line: u64,
    pub identifier: String,
}

impl fmt::Display for SenseWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "line {}: identifier {:?} not found among instances",
            self.line, self.identifier
        )
    }
}

/// Apply a `identifier\tcluster` table to `instances`. Cluster `-1` is
/// noise and leaves the sense undefined; unknown identifiers are returned
/// as warnings.
pub fn parse_senses(
    path: impl AsRef<Path>,
    instances: &mut [UsageInstance],
) -> Result<Vec<SenseWarning>> {
    let path = path.as_ref();
    let mut reader = tsv_reader(path)?;
    let headers = reader.headers()?.clone();
    let c_id = column(&headers, "identifier", path)?;
    let c_cluster = column(&headers, "cluster", path)?;

    let index: HashMap<&str, usize> = instances
        .iter()
        .enumerate()
        .map(|(i, inst)| (inst.id.as_str(), i))
        .collect();
    let mut seen = BTreeSet::new();
    let mut assignments = Vec::new();
    let mut warnings = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let id = record[c_id].to_string();
        let raw = record[c_cluster].trim();
        let label: i64 = raw.parse().map_err(|_| Error::Row {
            path: path.to_path_buf(),
            line,
            message: format!("non-integer cluster label {raw:?}"),
        })?;
        if label < -1 || label > i64::from(u32::MAX) {
            return Err(Error::Row {
                path: path.to_path_buf(),
                line,
                message: format!("cluster label {label} out of range"),
            });
        }
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateId(id));
        }
        match index.get(id.as_str()) {
            Some(&i) => assignments.push((i, (label >= 0).then_some(label as u32))),
            None => warnings.push(SenseWarning {
                line,
                identifier: id,
            }),
        }
    }
    for (i, sense) in assignments {
        instances[i].gold_sense = sense;
    }
    Ok(warnings)
}

/// Instances of one word, each period sorted by id. The sort order fixes
/// row (old) and column (modern) indices for every downstream matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordDataset {
    pub word: String,
    pub old_instances: Vec<UsageInstance>,
    pub modern_instances: Vec<UsageInstance>,
}

impl WordDataset {
    pub fn m(&self) -> usize {
        self.old_instances.len()
    }

    pub fn n(&self) -> usize {
        self.modern_instances.len()
    }

    /// Old instances followed by modern ones.
    pub fn pooled(&self) -> impl Iterator<Item = &UsageInstance> {
        self.old_instances.iter().chain(&self.modern_instances)
    }
}

pub fn assemble_word_dataset(instances: &[UsageInstance], word: &str) -> Result<WordDataset> {
    let mut old: Vec<UsageInstance> = Vec::new();
    let mut modern: Vec<UsageInstance> = Vec::new();
    for inst in instances.iter().filter(|i| i.word == word) {
        match inst.period {
            Period::Old => old.push(inst.clone()),
            Period::Modern => modern.push(inst.clone()),
        }
    }
    for (list, period) in [(&old, Period::Old), (&modern, Period::Modern)] {
        if list.is_empty() {
            return Err(Error::EmptyPeriod {
                word: word.to_string(),
                period: period.name(),
            });
        }
    }
    old.sort_by(|a, b| a.id.cmp(&b.id));
    modern.sort_by(|a, b| a.id.cmp(&b.id));
    let mut ids = BTreeSet::new();
    for inst in old.iter().chain(&modern) {
        if !ids.insert(inst.id.as_str()) {
            return Err(Error::DuplicateId(inst.id.clone()));
        }
    }
    Ok(WordDataset {
        word: word.to_string(),
        old_instances: old,
        modern_instances: modern,
    })
}

/// Distinct lemmas, sorted.
pub fn words(instances: &[UsageInstance]) -> Vec<String> {
    instances
        .iter()
        .map(|i| i.word.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// Per-sense usage counts in the two periods over a shared inventory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SenseFrequencyDistribution {
    pub sense_ids: Vec<u32>,
    pub old_counts: Vec<u64>,
    pub modern_counts: Vec<u64>,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl SenseFrequencyDistribution {
    pub fn from_counts(sense_ids: Vec<u32>, old_counts: Vec<u64>, modern_counts: Vec<u64>) -> Self {
        assert_eq!(sense_ids.len(), old_counts.len());
        assert_eq!(sense_ids.len(), modern_counts.len());
        let p = normalize(&old_counts);
        let q = normalize(&modern_counts);
        SenseFrequencyDistribution {
            sense_ids,
            old_counts,
            modern_counts,
            p,
            q,
        }
    }

    pub fn len(&self) -> usize {
        self.sense_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sense_ids.is_empty()
    }

    pub fn index_of(&self, sense: u32) -> Option<usize> {
        self.sense_ids.iter().position(|&s| s == sense)
    }

    pub fn counts(&self, sense: u32) -> Option<(u64, u64)> {
        self.index_of(sense)
            .map(|k| (self.old_counts[k], self.modern_counts[k]))
    }

    /// Tally labels per period over a fixed inventory.
    pub fn tally<'a>(
        sense_ids: Vec<u32>,
        labelled: impl IntoIterator<Item = (Period, &'a u32)>,
    ) -> Self {
        let pos: HashMap<u32, usize> = sense_ids.iter().enumerate().map(|(k, &s)| (s, k)).collect();
        let mut x = vec![0u64; sense_ids.len()];
        let mut y = vec![0u64; sense_ids.len()];
        for (period, sense) in labelled {
            let k = pos[sense];
            match period {
                Period::Old => x[k] += 1,
                Period::Modern => y[k] += 1,
            }
        }
        Self::from_counts(sense_ids, x, y)
    }
}

fn normalize(counts: &[u64]) -> Vec<f64> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return vec![0.0; counts.len()];
    }
    counts.iter().map(|&c| c as f64 / total as f64).collect()
}

/// Gold SFD over defined-sense instances; the inventory is the union of
/// labels seen in either period.
pub fn build_gold_sfd(dataset: &WordDataset) -> Result<SenseFrequencyDistribution> {
    let inventory: BTreeSet<u32> = dataset.pooled().filter_map(|i| i.gold_sense).collect();
    let defined = |list: &[UsageInstance]| list.iter().any(|i| i.gold_sense.is_some());
    if !defined(&dataset.old_instances) {
        return Err(Error::EmptyGoldSfd("OLD"));
    }
    if !defined(&dataset.modern_instances) {
        return Err(Error::EmptyGoldSfd("MODERN"));
    }
    let labelled: Vec<(Period, u32)> = dataset
        .pooled()
        .filter_map(|i| i.gold_sense.map(|s| (i.period, s)))
        .collect();
    Ok(SenseFrequencyDistribution::tally(
        inventory.into_iter().collect(),
        labelled.iter().map(|(p, s)| (*p, s)),
    ))
}

/// One JSON object per line, every field of [`UsageInstance`].
pub fn write_jsonl(path: impl AsRef<Path>, instances: &[UsageInstance]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for inst in instances {
        serde_json::to_writer(&mut w, inst)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Vec<UsageInstance>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let inst: UsageInstance = serde_json::from_str(&line).map_err(|e| Error::Row {
            path: path.to_path_buf(),
            line: n as u64 + 1,
            message: e.to_string(),
        })?;
        inst.check_span().map_err(|message| Error::Row {
            path: path.to_path_buf(),
            line: n as u64 + 1,
            message,
        })?;
        out.push(inst);
    }
    Ok(out)
}
