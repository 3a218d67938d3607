//! Precision, recall and F1 of a run against a key.
//!
//! This is a simplified scorer: a response is correct iff its
//! `(query, slot, normalized fill)` is judged correct in the key. Equivalence
//! classes and justification checking of the official scorer are not modelled.
//! With an alias table, responses of one `(query, slot)` whose alias sets
//! intersect count as a single response.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::AliasTable;
use crate::model::{FillKey, Judgment, KeyEntry, KeyOrigin, ResponseLine};
use crate::unionfind::DisjointSet;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScoreMode {
    /// Pooled and manual key rows.
    #[default]
    Official,
    /// Pooled key rows only.
    Unofficial,
}

impl FromStr for ScoreMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "official" => Ok(ScoreMode::Official),
            "unofficial" => Ok(ScoreMode::Unofficial),
            other => Err(Error::invalid(format!("unknown scoring mode {other:?}"))),
        }
    }
}

impl ScoreMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ScoreMode::Official => "official",
            ScoreMode::Unofficial => "unofficial",
        }
    }
}

/// `(precision, recall, f1)` with the zero conventions for empty denominators.
pub fn f1_from_counts(correct: usize, returned: usize, gold: usize) -> (f64, f64, f64) {
    let p = if returned == 0 { 0.0 } else { correct as f64 / returned as f64 };
    let r = if gold == 0 { 0.0 } else { correct as f64 / gold as f64 };
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub correct: usize,
    pub returned: usize,
    pub gold: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Counts {
    fn new(correct: usize, returned: usize, gold: usize) -> Self {
        let (precision, recall, f1) = f1_from_counts(correct, returned, gold);
        Counts {
            correct,
            returned,
            gold,
            precision,
            recall,
            f1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub mode: ScoreMode,
    pub total: Counts,
    pub per_slot: BTreeMap<String, Counts>,
    /// Responses to queries the key does not cover.
    pub out_of_scope: usize,
    /// In-scope responses the key does not judge (counted wrong).
    pub unassessed: usize,
}

impl ScoreReport {
    pub fn precision(&self) -> f64 {
        self.total.precision
    }

    pub fn recall(&self) -> f64 {
        self.total.recall
    }

    pub fn f1(&self) -> f64 {
        self.total.f1
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "mode: {}", self.mode.as_str());
        let _ = writeln!(
            out,
            "{:<40} {:>8} {:>8} {:>8} {:>9} {:>9} {:>9}",
            "slot", "correct", "returned", "gold", "precision", "recall", "f1"
        );
        let mut row = |name: &str, c: &Counts| {
            let _ = writeln!(
                out,
                "{:<40} {:>8} {:>8} {:>8} {:>9.4} {:>9.4} {:>9.4}",
                name, c.correct, c.returned, c.gold, c.precision, c.recall, c.f1
            );
        };
        for (slot, c) in &self.per_slot {
            row(slot, c);
        }
        row("TOTAL", &self.total);
        if self.out_of_scope > 0 {
            let _ = writeln!(out, "responses outside key scope (counted wrong): {}", self.out_of_scope);
        }
        if self.unassessed > 0 {
            let _ = writeln!(out, "unassessed responses (counted wrong): {}", self.unassessed);
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("slot,correct,returned,gold,precision,recall,f1\n");
        let rows = self.per_slot.iter().map(|(s, c)| (s.as_str(), c)).chain([("TOTAL", &self.total)]);
        for (slot, c) in rows {
            let _ = writeln!(
                out,
                "{slot},{},{},{},{:.6},{:.6},{:.6}",
                c.correct, c.returned, c.gold, c.precision, c.recall, c.f1
            );
        }
        out
    }
}

/// Scores non-NIL run lines against the key.
pub fn score(lines: &[ResponseLine], key: &[KeyEntry], mode: ScoreMode, aliases: Option<&AliasTable>) -> ScoreReport {
    score_fills(lines.iter().filter_map(ResponseLine::fill_key), key, mode, aliases)
}

/// Scores a set of returned `(query, slot, fill)` triples.
pub fn score_fills(
    fills: impl IntoIterator<Item = FillKey>,
    key: &[KeyEntry],
    mode: ScoreMode,
    aliases: Option<&AliasTable>,
) -> ScoreReport {
    let in_mode = |e: &&KeyEntry| mode == ScoreMode::Official || e.origin == KeyOrigin::Pooled;
    let judgments: BTreeMap<&FillKey, Judgment> = key.iter().filter(in_mode).map(|e| (&e.key, e.judgment)).collect();
    let scope: BTreeSet<&str> = key.iter().filter(in_mode).map(|e| e.key.query_id.as_str()).collect();

    let mut gold: BTreeMap<&str, usize> = BTreeMap::new();
    for e in key.iter().filter(in_mode).filter(|e| e.judgment == Judgment::Correct) {
        *gold.entry(e.key.slot.as_str()).or_default() += 1;
    }

    // Distinct responses per (query, slot).
    let mut returned: BTreeMap<(String, String), BTreeSet<String>> = BTreeMap::new();
    for f in fills {
        returned.entry((f.query_id, f.slot)).or_default().insert(f.fill_norm);
    }

    let mut correct: BTreeMap<String, usize> = BTreeMap::new();
    let mut count: BTreeMap<String, usize> = BTreeMap::new();
    let (mut out_of_scope, mut unassessed) = (0, 0);
    for ((query_id, slot), fills) in &returned {
        let groups = response_groups(fills, aliases);
        *count.entry(slot.clone()).or_default() += groups.len();
        if !scope.contains(query_id.as_str()) {
            out_of_scope += groups.len();
            continue;
        }
        for group in groups {
            let verdicts: Vec<Option<Judgment>> = group
                .iter()
                .map(|f| judgments.get(&FillKey::new(query_id, slot, *f)).copied())
                .collect();
            if verdicts.contains(&Some(Judgment::Correct)) {
                *correct.entry(slot.clone()).or_default() += 1;
            } else if verdicts.iter().all(Option::is_none) {
                unassessed += 1;
            }
        }
    }
    if out_of_scope > 0 {
        log::warn!("{out_of_scope} responses refer to queries outside the key scope");
    }

    let slots: BTreeSet<&str> = count.keys().map(String::as_str).chain(gold.keys().copied()).collect();
    let per_slot: BTreeMap<String, Counts> = slots
        .into_iter()
        .map(|s| {
            let c = Counts::new(
                correct.get(s).copied().unwrap_or(0),
                count.get(s).copied().unwrap_or(0),
                gold.get(s).copied().unwrap_or(0),
            );
            (s.to_string(), c)
        })
        .collect();
    let total = Counts::new(
        correct.values().sum(),
        count.values().sum(),
        gold.values().sum(),
    );
    ScoreReport {
        mode,
        total,
        per_slot,
        out_of_scope,
        unassessed,
    }
}

/// Groups fills whose alias sets intersect (connected components).
fn response_groups<'a>(fills: &'a BTreeSet<String>, aliases: Option<&AliasTable>) -> Vec<Vec<&'a str>> {
    let fills: Vec<&str> = fills.iter().map(String::as_str).collect();
    let Some(table) = aliases else {
        return fills.into_iter().map(|f| vec![f]).collect();
    };
    let mut set = DisjointSet::new(fills.len());
    let mut owner: BTreeMap<String, usize> = BTreeMap::new();
    for (i, f) in fills.iter().enumerate() {
        for alias in table.alias_set(f) {
            match owner.get(&alias) {
                Some(&j) => {
                    set.union(i, j);
                }
                None => {
                    owner.insert(alias, i);
                }
            }
        }
    }
    set.components()
        .into_iter()
        .map(|g| g.into_iter().map(|i| fills[i]).collect())
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricDelta {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportDelta {
    pub total: MetricDelta,
    /// Every slot present in either report; `b - a`.
    pub per_slot: BTreeMap<String, MetricDelta>,
}

fn delta(a: &Counts, b: &Counts) -> MetricDelta {
    MetricDelta {
        precision: b.precision - a.precision,
        recall: b.recall - a.recall,
        f1: b.f1 - a.f1,
    }
}

/// Differences `b - a`, overall and per slot.
pub fn compare_reports(a: &ScoreReport, b: &ScoreReport) -> Result<ReportDelta> {
    if a.mode != b.mode {
        return Err(Error::invalid(format!(
            "cannot compare {} and {} reports",
            a.mode.as_str(),
            b.mode.as_str()
        )));
    }
    let empty = Counts::default();
    let slots: BTreeSet<&String> = a.per_slot.keys().chain(b.per_slot.keys()).collect();
    let per_slot = slots
        .into_iter()
        .map(|s| {
            let d = delta(a.per_slot.get(s).unwrap_or(&empty), b.per_slot.get(s).unwrap_or(&empty));
            (s.clone(), d)
        })
        .collect();
    Ok(ReportDelta {
        total: delta(&a.total, &b.total),
        per_slot,
    })
}

impl ReportDelta {
    pub fn to_text(&self) -> String {
        let mut out = format!("{:<40} {:>10} {:>10} {:>10}\n", "slot", "precision", "recall", "f1");
        let rows = self.per_slot.iter().map(|(s, d)| (s.as_str(), d)).chain([("TOTAL", &self.total)]);
        for (slot, d) in rows {
            let _ = writeln!(out, "{slot:<40} {:>+10.4} {:>+10.4} {:>+10.4}", d.precision, d.recall, d.f1);
        }
        out
    }
}
