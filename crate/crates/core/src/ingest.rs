//! Readers and writers for every on-disk format: run files, query XML, key
//! files, alias tables, budget tables, slot-class tables, team rosters and the
//! plain-text corpus.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{
    normalize_fill, Answer, EntityType, FillKey, Judgment, KeyEntry, KeyOrigin, Provenance, Query,
    ResponseLine, SlotClass, SlotRegistry, Span,
};

/// Warnings collected while reading inputs. Each warning is also logged.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Diagnostics {
    pub warnings: Vec<String>,
}

impl Diagnostics {
    pub fn warn(&mut self, message: impl Into<String>) {
        let message = message.into();
        log::warn!("{message}");
        self.warnings.push(message);
    }

    pub fn is_clean(&self) -> bool {
        self.warnings.is_empty()
    }

    pub fn extend(&mut self, other: Diagnostics) {
        self.warnings.extend(other.warnings);
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn source_name(path: &Path) -> String {
    path.display().to_string()
}

/// Non-empty lines with their 1-based numbers; `\r\n` endings are accepted.
pub(crate) fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)))
        .filter(|(_, l)| !l.trim().is_empty())
}

// ---------------------------------------------------------------------------
// Run files
// ---------------------------------------------------------------------------

/// Column layout of a run file.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum RunFormat {
    /// Seven columns: query, slot, run, NIL or relation provenance, filler,
    /// filler provenance, confidence.
    #[default]
    V2014,
    /// Eight columns with three provenances. The assumed (unverified) order is
    /// query, slot, run, NIL or filler provenance, filler, entity provenance,
    /// justification provenance, confidence. Only the filler provenance is
    /// read; it is also used as the relation provenance.
    V2013,
}

impl std::str::FromStr for RunFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "2014" => Ok(RunFormat::V2014),
            "2013" => Ok(RunFormat::V2013),
            other => Err(Error::invalid(format!("unknown run format `{other}` (expected 2013 or 2014)"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunParseOptions {
    pub format: RunFormat,
    /// Unknown slot names and malformed NIL rows become errors instead of warnings.
    pub strict: bool,
    /// Accept NIL rows padded with empty columns 5-7.
    pub tolerant_nil: bool,
    pub registry: SlotRegistry,
}

impl Default for RunParseOptions {
    fn default() -> Self {
        RunParseOptions {
            format: RunFormat::V2014,
            strict: false,
            tolerant_nil: true,
            registry: SlotRegistry::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunFile {
    pub run_id: String,
    pub team_id: String,
    pub lines: Vec<ResponseLine>,
}

impl RunFile {
    pub fn new(run_id: impl Into<String>, lines: Vec<ResponseLine>) -> Self {
        let run_id = run_id.into();
        RunFile {
            team_id: default_team_id(&run_id).to_string(),
            run_id,
            lines,
        }
    }
}

/// Team id of a run: the prefix before the first underscore.
pub fn default_team_id(run_id: &str) -> &str {
    run_id.split('_').next().unwrap_or(run_id)
}

/// Confidences are stored at the precision they are written with, so that a
/// parse/write/parse cycle is the identity.
pub fn quantize_confidence(value: f64) -> f64 {
    (value * 1e6).round() / 1e6
}

pub fn parse_run_file(path: &Path, options: &RunParseOptions, diagnostics: &mut Diagnostics) -> Result<RunFile> {
    let text = read_text(path)?;
    let fallback = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let fallback = fallback.strip_suffix(".tsv").unwrap_or(&fallback).to_string();
    parse_run_str(&text, &source_name(path), &fallback, options, diagnostics)
}

/// Parses run-file text. `fallback_run_id` names the run when it has no lines.
pub fn parse_run_str(
    text: &str,
    source: &str,
    fallback_run_id: &str,
    options: &RunParseOptions,
    diagnostics: &mut Diagnostics,
) -> Result<RunFile> {
    let mut lines = Vec::new();
    let mut run_id: Option<String> = None;
    for (number, raw) in data_lines(text) {
        let Some(line) = parse_run_line(raw, source, number, options, diagnostics)? else {
            continue;
        };
        match &run_id {
            None => run_id = Some(line.run_id.clone()),
            Some(id) if *id != line.run_id => {
                return Err(Error::parse(
                    source,
                    number,
                    format!("run id {} differs from {id} earlier in the file", line.run_id),
                ))
            }
            Some(_) => {}
        }
        lines.push(line);
    }
    Ok(RunFile::new(run_id.unwrap_or_else(|| fallback_run_id.to_string()), lines))
}

fn parse_run_line(
    raw: &str,
    source: &str,
    number: usize,
    options: &RunParseOptions,
    diagnostics: &mut Diagnostics,
) -> Result<Option<ResponseLine>> {
    let cols: Vec<&str> = raw.split('\t').collect();
    let full_width = match options.format {
        RunFormat::V2014 => 7,
        RunFormat::V2013 => 8,
    };
    if cols.len() < 4 {
        return Err(Error::parse(source, number, format!("expected {full_width} columns, found {}", cols.len())));
    }
    let (query_id, slot, run_id) = (cols[0].trim(), cols[1].trim(), cols[2].trim());
    if query_id.is_empty() || slot.is_empty() || run_id.is_empty() {
        return Err(Error::parse(source, number, "empty query, slot or run id"));
    }
    if !options.registry.contains(slot) {
        if options.strict {
            return Err(Error::parse(source, number, format!("unknown slot {slot}")));
        }
        diagnostics.warn(format!("{source}:{number}: unknown slot {slot}, line skipped"));
        return Ok(None);
    }

    if cols[3].trim() == "NIL" {
        let padded_ok = options.tolerant_nil && cols.len() <= full_width && cols[4..].iter().all(|c| c.trim().is_empty());
        if cols.len() != 4 && !padded_ok {
            return Err(Error::parse(source, number, format!("NIL row with {} columns", cols.len())));
        }
        return Ok(Some(ResponseLine::nil(query_id, slot, run_id)));
    }

    if cols.len() != full_width {
        return Err(Error::parse(source, number, format!("expected {full_width} columns, found {}", cols.len())));
    }
    let prov = |text: &str, what: &str| -> Result<Provenance> {
        text.parse()
            .map_err(|e: Error| Error::parse(source, number, format!("bad {what} provenance: {e}")))
    };
    let (relation, filler, filler_prov, conf_text) = match options.format {
        RunFormat::V2014 => {
            let relation = prov(cols[3], "relation")?;
            let filler_prov = prov(cols[5], "filler")?;
            (relation, cols[4], filler_prov, cols[6])
        }
        RunFormat::V2013 => {
            let filler_prov = prov(cols[3], "filler")?;
            (filler_prov.clone(), cols[4], filler_prov, cols[7])
        }
    };
    let confidence: f64 = conf_text
        .trim()
        .parse()
        .map_err(|_| Error::parse(source, number, format!("bad confidence {conf_text:?}")))?;
    if !confidence.is_finite() {
        return Err(Error::parse(source, number, format!("non-finite confidence {conf_text:?}")));
    }
    if !(0.0..=1.0).contains(&confidence) {
        diagnostics.warn(format!("{source}:{number}: confidence {confidence} clamped to [0,1]"));
    }
    let confidence = quantize_confidence(confidence.clamp(0.0, 1.0));
    ResponseLine::fill(query_id, slot, run_id, relation, filler, filler_prov, confidence)
        .map(Some)
        .map_err(|e| Error::parse(source, number, e.to_string()))
}

fn sanitize_field(text: &str) -> String {
    text.replace(['\t', '\n', '\r'], " ")
}

/// Serializes response lines as 7-column TSV (NIL rows have 4 columns).
pub fn write_run_file(lines: &[ResponseLine]) -> String {
    let mut out = String::new();
    for line in lines {
        match &line.answer {
            Answer::Nil => {
                let _ = writeln!(out, "{}\t{}\t{}\tNIL", line.query_id, line.slot, line.run_id);
            }
            Answer::Fill(fill) => {
                let _ = writeln!(
                    out,
                    "{}\t{}\t{}\t{}\t{}\t{}\t{:.6}",
                    line.query_id,
                    line.slot,
                    line.run_id,
                    fill.relation_provenance,
                    sanitize_field(&fill.filler),
                    fill.filler_provenance,
                    fill.confidence
                );
            }
        }
    }
    out
}

/// Maps run ids to team ids. Runs missing from the roster use the
/// underscore-prefix rule.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TeamRoster {
    overrides: BTreeMap<String, String>,
}

impl TeamRoster {
    pub fn team_of<'a>(&'a self, run_id: &'a str) -> &'a str {
        self.overrides
            .get(run_id)
            .map(String::as_str)
            .unwrap_or_else(|| default_team_id(run_id))
    }

    pub fn insert(&mut self, run_id: impl Into<String>, team_id: impl Into<String>) {
        self.overrides.insert(run_id.into(), team_id.into());
    }
}

/// Two columns: run id, team id.
pub fn parse_team_roster(text: &str, source: &str) -> Result<TeamRoster> {
    let mut roster = TeamRoster::default();
    for (number, raw) in data_lines(text) {
        let cols: Vec<&str> = raw.split('\t').map(str::trim).collect();
        if cols.len() != 2 || cols.iter().any(|c| c.is_empty()) {
            return Err(Error::parse(source, number, "expected 2 columns: run_id, team_id"));
        }
        roster.insert(cols[0], cols[1]);
    }
    Ok(roster)
}

// ---------------------------------------------------------------------------
// Queries
// ---------------------------------------------------------------------------

/// Parses query XML. Queries without `slotN` children expand to every
/// registered slot of their entity type.
pub fn parse_queries(xml: &str, registry: &SlotRegistry) -> Result<Vec<Query>> {
    let doc = roxmltree::Document::parse(xml).map_err(|e| Error::invalid(format!("query XML: {e}")))?;
    let mut seen = BTreeSet::new();
    let mut queries = Vec::new();
    for node in doc.descendants().filter(|n| n.has_tag_name("query")) {
        let id = node
            .attribute("id")
            .ok_or_else(|| Error::invalid("query element without an id attribute"))?
            .trim()
            .to_string();
        if !seen.insert(id.clone()) {
            return Err(Error::Query {
                query_id: id,
                message: "duplicate query id".into(),
            });
        }
        let child = |name: &str| -> Result<String> {
            node.children()
                .find(|c| c.has_tag_name(name))
                .map(|c| c.text().unwrap_or("").trim().to_string())
                .filter(|t| !t.is_empty())
                .ok_or_else(|| Error::Query {
                    query_id: id.clone(),
                    message: format!("missing <{name}>"),
                })
        };
        let offset = |name: &str| -> Result<u64> {
            let text = child(name)?;
            text.parse().map_err(|_| Error::Query {
                query_id: id.clone(),
                message: format!("<{name}> is not an offset: {text:?}"),
            })
        };
        let name = child("name")?;
        let doc_id = child("docid")?;
        let span = Span::new(offset("beg")?, offset("end")?).map_err(|e| Error::Query {
            query_id: id.clone(),
            message: e.to_string(),
        })?;
        let entity_type: EntityType = child("enttype")?.parse().map_err(|e: Error| Error::Query {
            query_id: id.clone(),
            message: e.to_string(),
        })?;

        let mut indexed: Vec<(u32, String)> = Vec::new();
        for c in node.children().filter(|c| c.is_element()) {
            let tag = c.tag_name().name();
            if let Some(index) = tag.strip_prefix("slot").and_then(|d| d.parse::<u32>().ok()) {
                let slot = c.text().unwrap_or("").trim().to_string();
                if !slot.is_empty() {
                    indexed.push((index, slot));
                }
            }
        }
        indexed.sort();
        let slots = if indexed.is_empty() {
            registry.slots_for(entity_type).map(|s| s.name.clone()).collect()
        } else {
            indexed.into_iter().map(|(_, s)| s).collect()
        };
        queries.push(Query {
            id,
            name,
            entity_type,
            doc_id,
            span,
            slots,
        });
    }
    Ok(queries)
}

fn xml_escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

pub fn write_queries(queries: &[Query]) -> String {
    let mut out = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<query_set>\n");
    for q in queries {
        let _ = writeln!(out, "  <query id=\"{}\">", xml_escape(&q.id));
        let _ = writeln!(out, "    <name>{}</name>", xml_escape(&q.name));
        let _ = writeln!(out, "    <docid>{}</docid>", xml_escape(&q.doc_id));
        let _ = writeln!(out, "    <beg>{}</beg>", q.span.start);
        let _ = writeln!(out, "    <end>{}</end>", q.span.end);
        let _ = writeln!(out, "    <enttype>{}</enttype>", q.entity_type.as_str().to_ascii_lowercase());
        for (i, slot) in q.slots.iter().enumerate() {
            let _ = writeln!(out, "    <slot{i}>{}</slot{i}>", xml_escape(slot));
        }
        out.push_str("  </query>\n");
    }
    out.push_str("</query_set>\n");
    out
}

// ---------------------------------------------------------------------------
// Key files
// ---------------------------------------------------------------------------

/// Columns: query_id, slot, fill, C|W, and optionally an origin flag P|M
/// (absent means pooled).
pub fn parse_key_str(text: &str, source: &str) -> Result<Vec<KeyEntry>> {
    let mut seen: BTreeMap<FillKey, Judgment> = BTreeMap::new();
    let mut entries = Vec::new();
    for (number, raw) in data_lines(text) {
        let cols: Vec<&str> = raw.split('\t').collect();
        if cols.len() != 4 && cols.len() != 5 {
            return Err(Error::parse(source, number, format!("expected 4 or 5 columns, found {}", cols.len())));
        }
        let fill_norm = normalize_fill(cols[2]);
        if fill_norm.is_empty() {
            return Err(Error::parse(source, number, "empty fill"));
        }
        let judgment = match cols[3].trim() {
            "C" => Judgment::Correct,
            "W" => Judgment::Wrong,
            other => return Err(Error::parse(source, number, format!("unknown judgment {other:?}"))),
        };
        let origin = match cols.get(4).map(|c| c.trim()) {
            None | Some("P") => KeyOrigin::Pooled,
            Some("M") => KeyOrigin::Manual,
            Some(other) => return Err(Error::parse(source, number, format!("unknown origin {other:?}"))),
        };
        let key = FillKey::new(cols[0].trim(), cols[1].trim(), fill_norm);
        match seen.get(&key) {
            Some(&previous) if previous != judgment => {
                return Err(Error::parse(source, number, format!("conflicting judgments for {key}")))
            }
            Some(_) => continue,
            None => {
                seen.insert(key.clone(), judgment);
            }
        }
        entries.push(KeyEntry { key, judgment, origin });
    }
    Ok(entries)
}

pub fn parse_key(path: &Path) -> Result<Vec<KeyEntry>> {
    parse_key_str(&read_text(path)?, &source_name(path))
}

pub fn write_key(entries: &[KeyEntry]) -> String {
    let mut out = String::new();
    for e in entries {
        let judgment = match e.judgment {
            Judgment::Correct => "C",
            Judgment::Wrong => "W",
        };
        let origin = match e.origin {
            KeyOrigin::Pooled => "P",
            KeyOrigin::Manual => "M",
        };
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{judgment}\t{origin}",
            e.key.query_id, e.key.slot, e.key.fill_norm
        );
    }
    out
}

// ---------------------------------------------------------------------------
// Alias table
// ---------------------------------------------------------------------------

pub const DEFAULT_ALIAS_LIMIT: usize = 10;

/// Canonical name -> its most frequent aliases (normalized), count descending.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AliasTable {
    entries: BTreeMap<String, Vec<(String, u64)>>,
}

impl AliasTable {
    /// Builds a table from raw `(canonical, alias, count)` rows, keeping the
    /// `n_max` highest-count aliases per canonical (ties: alias ascending).
    pub fn from_rows<I, S>(rows: I, n_max: usize) -> Self
    where
        I: IntoIterator<Item = (S, S, u64)>,
        S: AsRef<str>,
    {
        let mut merged: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();
        for (canonical, alias, count) in rows {
            *merged
                .entry(normalize_fill(canonical.as_ref()))
                .or_default()
                .entry(normalize_fill(alias.as_ref()))
                .or_default() += count;
        }
        let entries = merged
            .into_iter()
            .map(|(canonical, aliases)| {
                let mut ranked: Vec<(String, u64)> = aliases.into_iter().collect();
                ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
                ranked.truncate(n_max);
                (canonical, ranked)
            })
            .collect();
        AliasTable { entries }
    }

    /// Aliases of a (normalized) canonical name; empty when absent.
    pub fn aliases(&self, canonical: &str) -> &[(String, u64)] {
        self.entries.get(canonical).map_or(&[], Vec::as_slice)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    /// The fill itself plus its aliases.
    pub fn alias_set(&self, fill_norm: &str) -> BTreeSet<String> {
        let mut set: BTreeSet<String> = self.aliases(fill_norm).iter().map(|(a, _)| a.clone()).collect();
        set.insert(fill_norm.to_string());
        set
    }
}

pub fn parse_alias_table(text: &str, source: &str, n_max: usize) -> Result<AliasTable> {
    let mut rows = Vec::new();
    for (number, raw) in data_lines(text) {
        let cols: Vec<&str> = raw.split('\t').collect();
        if cols.len() != 3 {
            return Err(Error::parse(source, number, format!("expected 3 columns, found {}", cols.len())));
        }
        let count: u64 = cols[2]
            .trim()
            .parse()
            .ok()
            .filter(|&c| c > 0)
            .ok_or_else(|| Error::parse(source, number, format!("count {:?} is not a positive integer", cols[2])))?;
        rows.push((cols[0], cols[1], count));
    }
    Ok(AliasTable::from_rows(rows, n_max))
}

pub fn load_alias_table(path: &Path, n_max: usize) -> Result<AliasTable> {
    parse_alias_table(&read_text(path)?, &source_name(path), n_max)
}

pub fn write_alias_table(table: &AliasTable) -> String {
    let mut out = String::new();
    for (canonical, aliases) in &table.entries {
        for (alias, count) in aliases {
            let _ = writeln!(out, "{canonical}\t{alias}\t{count}");
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Budget and slot-class tables
// ---------------------------------------------------------------------------

/// Two columns: slot name (or entity type), budget.
pub fn parse_budget_table(text: &str, source: &str) -> Result<BTreeMap<String, f64>> {
    let mut budgets = BTreeMap::new();
    for (number, raw) in data_lines(text) {
        let cols: Vec<&str> = raw.split('\t').map(str::trim).collect();
        if cols.len() != 2 {
            return Err(Error::parse(source, number, "expected 2 columns: slot, budget"));
        }
        let budget: f64 = cols[1]
            .parse()
            .ok()
            .filter(|b: &f64| b.is_finite() && *b > 0.0)
            .ok_or_else(|| Error::parse(source, number, format!("budget {:?} is not a positive number", cols[1])))?;
        budgets.insert(cols[0].to_string(), budget);
    }
    Ok(budgets)
}

pub fn write_budget_table(budgets: &BTreeMap<String, f64>) -> String {
    budgets.iter().fold(String::new(), |mut out, (slot, b)| {
        let _ = writeln!(out, "{slot}\t{b}");
        out
    })
}

/// Two columns: slot name, class (entity, date, numeric, string).
pub fn parse_slot_classes(text: &str, source: &str) -> Result<BTreeMap<String, SlotClass>> {
    let mut classes = BTreeMap::new();
    for (number, raw) in data_lines(text) {
        let cols: Vec<&str> = raw.split('\t').map(str::trim).collect();
        if cols.len() != 2 {
            return Err(Error::parse(source, number, "expected 2 columns: slot, class"));
        }
        let class = cols[1].parse().map_err(|e: Error| Error::parse(source, number, e.to_string()))?;
        classes.insert(cols[0].to_string(), class);
    }
    Ok(classes)
}

pub fn write_slot_classes(registry: &SlotRegistry) -> String {
    let mut out = String::new();
    for name in registry.names() {
        let _ = writeln!(out, "{name}\t{}", registry.class(name));
    }
    out
}

// ---------------------------------------------------------------------------
// Corpus
// ---------------------------------------------------------------------------

/// Lowercased alphanumeric runs.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// Term frequencies per document and document frequencies per term.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CorpusIndex {
    docs: BTreeMap<String, BTreeMap<String, u32>>,
    df: BTreeMap<String, u32>,
}

impl CorpusIndex {
    pub fn from_texts<I, D, T>(texts: I) -> Self
    where
        I: IntoIterator<Item = (D, T)>,
        D: Into<String>,
        T: AsRef<str>,
    {
        let mut docs = BTreeMap::new();
        for (doc_id, text) in texts {
            docs.insert(doc_id.into(), term_frequencies(text.as_ref()));
        }
        Self::from_term_frequencies(docs)
    }

    fn from_term_frequencies(docs: BTreeMap<String, BTreeMap<String, u32>>) -> Self {
        let mut df: BTreeMap<String, u32> = BTreeMap::new();
        for tf in docs.values() {
            for term in tf.keys() {
                *df.entry(term.clone()).or_default() += 1;
            }
        }
        CorpusIndex { docs, df }
    }

    pub fn doc_count(&self) -> usize {
        self.docs.len()
    }

    pub fn document_frequency(&self, term: &str) -> u32 {
        self.df.get(term).copied().unwrap_or(0)
    }

    pub fn term_frequencies(&self, doc_id: &str) -> Option<&BTreeMap<String, u32>> {
        self.docs.get(doc_id)
    }

    pub fn contains(&self, doc_id: &str) -> bool {
        self.docs.contains_key(doc_id)
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.docs.keys().map(String::as_str)
    }

    pub fn terms(&self) -> impl Iterator<Item = (&str, u32)> {
        self.df.iter().map(|(t, &d)| (t.as_str(), d))
    }
}

fn term_frequencies(text: &str) -> BTreeMap<String, u32> {
    let mut tf = BTreeMap::new();
    for token in tokenize(text) {
        *tf.entry(token).or_default() += 1;
    }
    tf
}

/// Indexes every `<doc_id>.txt` file in `dir`. Files are tokenized in
/// parallel and merged in file-name order.
pub fn build_corpus_index(dir: &Path) -> Result<CorpusIndex> {
    let mut paths = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "txt") && path.is_file() {
            paths.push(path);
        }
    }
    paths.sort();
    let parsed: Vec<(String, BTreeMap<String, u32>)> = paths
        .par_iter()
        .map(|path| {
            let text = read_text(path)?;
            let doc_id = path.file_stem().unwrap().to_string_lossy().into_owned();
            Ok((doc_id, term_frequencies(&text)))
        })
        .collect::<Result<_>>()?;
    Ok(CorpusIndex::from_term_frequencies(parsed.into_iter().collect()))
}
