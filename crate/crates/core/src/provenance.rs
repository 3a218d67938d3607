//! Provenance agreement features.
//!
//! For one `(query, slot)` every non-NIL response is an entry in a
//! [`ProvenanceGroup`]. Entries are bucketed by the document their provenance
//! cites. The document provenance score of an entry is `n / N`, the share of
//! entries citing the same document. The offset provenance score is
//! `(1/|G|) * sum_{i in G, i != x} J(offsets(i), offsets(x))` over the entries
//! `G` sharing the entry's document, with `J` the Jaccard coefficient of the
//! covered character positions. Entries citing other documents contribute
//! nothing.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{normalize_fill, Candidate, Provenance, ResponseLine, Span};

/// Which provenance column of a response the scores are computed from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProvenanceSource {
    #[default]
    Filler,
    Relation,
}

/// How per-system scores are reduced to one value per candidate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Reduction {
    Max,
    Mean,
}

impl std::str::FromStr for Reduction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "max" => Ok(Reduction::Max),
            "mean" => Ok(Reduction::Mean),
            other => Err(Error::invalid(format!("unknown reduction `{other}` (expected max or mean)"))),
        }
    }
}

impl Reduction {
    fn apply(self, values: impl Iterator<Item = f64>) -> f64 {
        let (mut count, mut sum, mut max) = (0usize, 0.0, 0.0f64);
        for v in values {
            count += 1;
            sum += v;
            max = max.max(v);
        }
        match (self, count) {
            (_, 0) => 0.0,
            (Reduction::Max, _) => max,
            (Reduction::Mean, n) => sum / n as f64,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceReductions {
    pub dps: Reduction,
    pub op: Reduction,
}

impl Default for ProvenanceReductions {
    fn default() -> Self {
        ProvenanceReductions {
            dps: Reduction::Max,
            op: Reduction::Mean,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProvenanceEntry {
    pub system: String,
    pub fill_norm: String,
    pub provenance: Provenance,
}

/// All responses for one `(query, slot)`, bucketed by cited document.
#[derive(Clone, Debug)]
pub struct ProvenanceGroup {
    pub query_id: String,
    pub slot: String,
    entries: Vec<ProvenanceEntry>,
    by_doc: BTreeMap<String, Vec<usize>>,
    index: BTreeMap<(String, String), usize>,
}

impl ProvenanceGroup {
    pub fn new(query_id: impl Into<String>, slot: impl Into<String>, mut entries: Vec<ProvenanceEntry>) -> Result<Self> {
        let (query_id, slot) = (query_id.into(), slot.into());
        if entries.is_empty() {
            return Err(Error::invalid(format!("no responses for {query_id}/{slot}")));
        }
        entries.sort_by(|a, b| (&a.system, &a.fill_norm).cmp(&(&b.system, &b.fill_norm)));
        let mut by_doc: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        let mut index = BTreeMap::new();
        for (i, entry) in entries.iter().enumerate() {
            if index.insert((entry.system.clone(), entry.fill_norm.clone()), i).is_some() {
                return Err(Error::invalid(format!(
                    "system {} answers {:?} twice for {query_id}/{slot}",
                    entry.system, entry.fill_norm
                )));
            }
            by_doc.entry(entry.provenance.doc_id().to_string()).or_default().push(i);
        }
        Ok(ProvenanceGroup {
            query_id,
            slot,
            entries,
            by_doc,
            index,
        })
    }

    /// Builds the group from the non-NIL responses of one `(query, slot)`.
    pub fn from_responses<'a>(
        responses: impl IntoIterator<Item = &'a ResponseLine>,
        source: ProvenanceSource,
    ) -> Result<Self> {
        let mut key: Option<(String, String)> = None;
        let mut entries = Vec::new();
        for line in responses {
            let Some(fill) = line.as_fill() else { continue };
            match &key {
                None => key = Some((line.query_id.clone(), line.slot.clone())),
                Some((q, s)) if *q != line.query_id || *s != line.slot => {
                    return Err(Error::invalid("provenance group mixes (query, slot) pairs"))
                }
                Some(_) => {}
            }
            let provenance = match source {
                ProvenanceSource::Filler => fill.filler_provenance.clone(),
                ProvenanceSource::Relation => fill.relation_provenance.clone(),
            };
            entries.push(ProvenanceEntry {
                system: line.run_id.clone(),
                fill_norm: normalize_fill(&fill.filler),
                provenance,
            });
        }
        let (query_id, slot) = key.unwrap_or_default();
        ProvenanceGroup::new(query_id, slot, entries)
    }

    /// Number of answering entries (the denominator `N`).
    pub fn n_total(&self) -> usize {
        self.entries.len()
    }

    /// Document id -> entries citing it.
    pub fn groups(&self) -> impl Iterator<Item = (&str, Vec<&ProvenanceEntry>)> {
        self.by_doc
            .iter()
            .map(|(doc, members)| (doc.as_str(), members.iter().map(|&i| &self.entries[i]).collect()))
    }

    fn locate(&self, system: &str, fill_norm: &str) -> Result<usize> {
        self.index
            .get(&(system.to_string(), fill_norm.to_string()))
            .copied()
            .ok_or_else(|| {
                Error::invalid(format!(
                    "system {system} has no response {fill_norm:?} for {}/{}",
                    self.query_id, self.slot
                ))
            })
    }

    fn doc_members(&self, i: usize) -> &[usize] {
        &self.by_doc[self.entries[i].provenance.doc_id()]
    }

    pub fn document_provenance_score(&self, system: &str, fill_norm: &str) -> Result<f64> {
        let i = self.locate(system, fill_norm)?;
        Ok(self.dps_at(i))
    }

    pub fn offset_provenance_score(&self, system: &str, fill_norm: &str) -> Result<f64> {
        let i = self.locate(system, fill_norm)?;
        Ok(self.op_at(i))
    }

    fn dps_at(&self, i: usize) -> f64 {
        self.doc_members(i).len() as f64 / self.n_total() as f64
    }

    fn op_at(&self, i: usize) -> f64 {
        let members = self.doc_members(i);
        if members.len() < 2 {
            return 0.0;
        }
        let own = self.entries[i].provenance.spans();
        let overlap: f64 = members
            .iter()
            .filter(|&&j| j != i)
            .map(|&j| span_jaccard(self.entries[j].provenance.spans(), own))
            .sum();
        overlap / members.len() as f64
    }

    /// Candidate-level `(dps, op)`: per-system scores of the systems producing
    /// the candidate, reduced with `reductions`.
    pub fn candidate_features(&self, candidate: &Candidate, reductions: ProvenanceReductions) -> (f64, f64) {
        let members: Vec<usize> = candidate
            .responses
            .keys()
            .filter_map(|system| self.locate(system, candidate.fill_norm()).ok())
            .collect();
        (
            reductions.dps.apply(members.iter().map(|&i| self.dps_at(i))),
            reductions.op.apply(members.iter().map(|&i| self.op_at(i))),
        )
    }
}

/// Sorted, disjoint, non-adjacent covering intervals of a span list.
fn merged(spans: &[Span]) -> Vec<(u64, u64)> {
    let mut sorted: Vec<(u64, u64)> = spans.iter().map(|s| (s.start, s.end)).collect();
    sorted.sort_unstable();
    let mut out: Vec<(u64, u64)> = Vec::with_capacity(sorted.len());
    for (start, end) in sorted {
        match out.last_mut() {
            Some(last) if start <= last.1.saturating_add(1) => last.1 = last.1.max(end),
            _ => out.push((start, end)),
        }
    }
    out
}

/// Jaccard coefficient of the character positions covered by two span lists
/// (inclusive offsets). Zero when both are empty.
pub fn span_jaccard(a: &[Span], b: &[Span]) -> f64 {
    let (a, b) = (merged(a), merged(b));
    let size = |v: &[(u64, u64)]| v.iter().map(|(s, e)| e - s + 1).sum::<u64>();
    let (mut i, mut j, mut intersection) = (0, 0, 0u64);
    while i < a.len() && j < b.len() {
        let lo = a[i].0.max(b[j].0);
        let hi = a[i].1.min(b[j].1);
        if lo <= hi {
            intersection += hi - lo + 1;
        }
        if a[i].1 < b[j].1 {
            i += 1;
        } else {
            j += 1;
        }
    }
    let union = size(&a) + size(&b) - intersection;
    if union == 0 {
        0.0
    } else {
        intersection as f64 / union as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn span(s: u64, e: u64) -> Span {
        Span::new(s, e).unwrap()
    }

    fn entry(system: &str, doc: &str, spans: &[(u64, u64)]) -> ProvenanceEntry {
        ProvenanceEntry {
            system: system.into(),
            fill_norm: "x".into(),
            provenance: Provenance::new(doc, spans.iter().map(|&(s, e)| span(s, e)).collect()).unwrap(),
        }
    }

    /// Position-set enumeration, independent of the interval sweep.
    fn jaccard_oracle(a: &[Span], b: &[Span]) -> f64 {
        let set = |v: &[Span]| v.iter().flat_map(|s| s.start..=s.end).collect::<BTreeSet<u64>>();
        let (a, b) = (set(a), set(b));
        let union = a.union(&b).count();
        if union == 0 {
            0.0
        } else {
            a.intersection(&b).count() as f64 / union as f64
        }
    }

    #[test]
    fn jaccard_examples() {
        let j = span_jaccard(&[span(100, 110)], &[span(105, 120)]);
        assert!((j - 6.0 / 21.0).abs() < 1e-12);
        assert_eq!(jaccard_oracle(&[span(100, 110)], &[span(105, 120)]), 6.0 / 21.0);
        assert_eq!(span_jaccard(&[span(3, 9), span(20, 22)], &[span(3, 9), span(20, 22)]), 1.0);
        assert_eq!(span_jaccard(&[span(0, 4)], &[span(5, 9)]), 0.0);
        assert_eq!(span_jaccard(&[], &[]), 0.0);
    }

    #[test]
    fn dps_three_of_four() {
        let group = ProvenanceGroup::new(
            "Q",
            "per:age",
            vec![
                entry("a", "D", &[(1, 2)]),
                entry("b", "D", &[(1, 2)]),
                entry("c", "D", &[(5, 9)]),
                entry("d", "E", &[(1, 2)]),
            ],
        )
        .unwrap();
        for s in ["a", "b", "c"] {
            assert!((group.document_provenance_score(s, "x").unwrap() - 0.75).abs() < 1e-9);
        }
        assert!((group.document_provenance_score("d", "x").unwrap() - 0.25).abs() < 1e-9);
        assert!(group.document_provenance_score("z", "x").is_err());
    }

    #[test]
    fn dps_extremes() {
        let same = ProvenanceGroup::new("Q", "s", vec![entry("a", "D", &[(1, 2)]), entry("b", "D", &[(3, 4)])]).unwrap();
        assert_eq!(same.document_provenance_score("a", "x").unwrap(), 1.0);
        let apart = ProvenanceGroup::new(
            "Q",
            "s",
            vec![entry("a", "D", &[(1, 2)]), entry("b", "E", &[(3, 4)]), entry("c", "F", &[(3, 4)])],
        )
        .unwrap();
        assert_eq!(apart.document_provenance_score("b", "x").unwrap(), 1.0 / 3.0);
    }

    #[test]
    fn op_examples() {
        let two = ProvenanceGroup::new("Q", "s", vec![entry("a", "D", &[(100, 110)]), entry("b", "D", &[(105, 120)])]).unwrap();
        let expected = 0.5 * (6.0 / 21.0);
        assert!((two.offset_provenance_score("a", "x").unwrap() - expected).abs() < 1e-9);
        assert!((two.offset_provenance_score("b", "x").unwrap() - expected).abs() < 1e-9);

        let alone = ProvenanceGroup::new("Q", "s", vec![entry("a", "D", &[(1, 5)]), entry("b", "E", &[(1, 5)])]).unwrap();
        assert_eq!(alone.offset_provenance_score("a", "x").unwrap(), 0.0);

        let three = ProvenanceGroup::new(
            "Q",
            "s",
            vec![entry("a", "D", &[(7, 9)]), entry("b", "D", &[(7, 9)]), entry("c", "D", &[(7, 9)])],
        )
        .unwrap();
        for s in ["a", "b", "c"] {
            assert!((three.offset_provenance_score(s, "x").unwrap() - 2.0 / 3.0).abs() < 1e-9);
        }
    }

    fn candidate(systems: &[&str]) -> Candidate {
        let prov = Provenance::single("D", 1, 2).unwrap();
        Candidate {
            key: crate::model::FillKey::new("Q", "s", "x"),
            responses: systems
                .iter()
                .map(|s| {
                    let line = ResponseLine::fill("Q", "s", *s, prov.clone(), "x", prov.clone(), 0.5).unwrap();
                    (s.to_string(), line)
                })
                .collect(),
            label: None,
        }
    }

    #[test]
    fn candidate_level_features() {
        let solo = ProvenanceGroup::new("Q", "s", vec![entry("a", "D", &[(1, 2)])]).unwrap();
        assert_eq!(solo.candidate_features(&candidate(&["a"]), Default::default()), (1.0, 0.0));

        let four = ProvenanceGroup::new(
            "Q",
            "s",
            vec![
                entry("a", "D", &[(1, 2)]),
                entry("b", "D", &[(1, 2)]),
                entry("c", "D", &[(1, 2)]),
                ProvenanceEntry {
                    fill_norm: "y".into(),
                    ..entry("d", "E", &[(1, 2)])
                },
            ],
        )
        .unwrap();
        let (dps, _) = four.candidate_features(&candidate(&["a", "b", "c"]), Default::default());
        assert!((dps - 0.75).abs() < 1e-12);

        // OP values 0.2 and 0.4 through the mean reduction.
        assert!((Reduction::Mean.apply([0.2, 0.4].into_iter()) - 0.3).abs() < 1e-12);
        assert_eq!(Reduction::Max.apply([0.2, 0.4].into_iter()), 0.4);
    }

    fn arb_spans() -> impl Strategy<Value = Vec<Span>> {
        prop::collection::vec((0u64..60, 0u64..15).prop_map(|(s, l)| span(s, s + l)), 0..4)
    }

    fn arb_group() -> impl Strategy<Value = Vec<ProvenanceEntry>> {
        prop::collection::vec((0..3usize, arb_spans().prop_filter("non-empty", |v| !v.is_empty())), 1..8).prop_map(|v| {
            v.into_iter()
                .enumerate()
                .map(|(i, (doc, spans))| ProvenanceEntry {
                    system: format!("s{i}"),
                    fill_norm: "x".into(),
                    provenance: Provenance::new(format!("D{doc}"), spans).unwrap(),
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn jaccard_matches_enumeration(a in arb_spans(), b in arb_spans()) {
            let fast = span_jaccard(&a, &b);
            prop_assert!((fast - jaccard_oracle(&a, &b)).abs() < 1e-12);
            prop_assert_eq!(fast, span_jaccard(&b, &a));
            prop_assert!((0.0..=1.0).contains(&fast));
            let same = merged(&a) == merged(&b);
            prop_assert_eq!(fast == 1.0, same && !a.is_empty());
        }

        #[test]
        fn group_laws(entries in arb_group(), shift in 0u64..1000) {
            let group = ProvenanceGroup::new("Q", "s", entries.clone()).unwrap();
            let share: f64 = group.groups().map(|(_, m)| m.len() as f64 / group.n_total() as f64).sum();
            prop_assert!((share - 1.0).abs() < 1e-12);

            let shifted: Vec<_> = entries.iter().map(|e| ProvenanceEntry {
                provenance: Provenance::new(e.provenance.doc_id(), e.provenance.spans().iter().map(|s| s.shifted(shift)).collect()).unwrap(),
                ..e.clone()
            }).collect();
            let mut reversed = entries.clone();
            reversed.reverse();
            let shifted = ProvenanceGroup::new("Q", "s", shifted).unwrap();
            let reversed = ProvenanceGroup::new("Q", "s", reversed).unwrap();
            for e in &entries {
                let op = group.offset_provenance_score(&e.system, "x").unwrap();
                prop_assert!((0.0..1.0).contains(&op));
                prop_assert!((op - shifted.offset_provenance_score(&e.system, "x").unwrap()).abs() < 1e-12);
                prop_assert_eq!(op, reversed.offset_provenance_score(&e.system, "x").unwrap());
                prop_assert_eq!(
                    group.document_provenance_score(&e.system, "x").unwrap(),
                    reversed.document_provenance_score(&e.system, "x").unwrap()
                );
            }
        }
    }
}
