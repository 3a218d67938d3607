//! Domain types shared by every stage of the ensemble: provenance spans,
//! system responses, queries, slot definitions, candidates and gold keys.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Inclusive character span `start..=end` inside a document.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: u64,
    pub end: u64,
}

impl Span {
    pub fn new(start: u64, end: u64) -> Result<Self> {
        if start > end {
            return Err(Error::invalid(format!("span start {start} exceeds end {end}")));
        }
        Ok(Span { start, end })
    }

    /// Number of covered character positions.
    pub fn len(&self) -> u64 {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn shifted(&self, delta: u64) -> Span {
        Span {
            start: self.start + delta,
            end: self.end + delta,
        }
    }
}

/// A document id plus one or more justification spans.
///
/// Serialized as `docid:start-end`; multiple spans are joined by commas,
/// each carrying the document id (`D1:10-20,D1:30-40`). The short form
/// `D1:10-20,30-40` is accepted on input.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Provenance {
    doc_id: String,
    spans: Vec<Span>,
}

impl Provenance {
    pub fn new(doc_id: impl Into<String>, spans: Vec<Span>) -> Result<Self> {
        let doc_id = doc_id.into();
        if doc_id.is_empty() || doc_id.contains(['\t', ',', ':']) || doc_id.chars().any(char::is_whitespace) {
            return Err(Error::invalid(format!("bad document id {doc_id:?}")));
        }
        if spans.is_empty() {
            return Err(Error::invalid(format!("provenance for {doc_id} has no spans")));
        }
        Ok(Provenance { doc_id, spans })
    }

    pub fn single(doc_id: impl Into<String>, start: u64, end: u64) -> Result<Self> {
        Provenance::new(doc_id, vec![Span::new(start, end)?])
    }

    pub fn doc_id(&self) -> &str {
        &self.doc_id
    }

    pub fn spans(&self) -> &[Span] {
        &self.spans
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, span) in self.spans.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{}:{}-{}", self.doc_id, span.start, span.end)?;
        }
        Ok(())
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut doc_id: Option<&str> = None;
        let mut spans = Vec::new();
        for part in s.trim().split(',') {
            let part = part.trim();
            let offsets = match part.rsplit_once(':') {
                Some((doc, offsets)) => {
                    match doc_id {
                        None => doc_id = Some(doc),
                        Some(prev) if prev == doc => {}
                        Some(prev) => {
                            return Err(Error::invalid(format!(
                                "provenance {s:?} mixes documents {prev} and {doc}"
                            )))
                        }
                    }
                    offsets
                }
                None if doc_id.is_some() => part,
                None => return Err(Error::invalid(format!("provenance {s:?} lacks a document id"))),
            };
            let (start, end) = offsets
                .split_once('-')
                .ok_or_else(|| Error::invalid(format!("bad offsets {offsets:?} in provenance {s:?}")))?;
            let start: u64 = start
                .trim()
                .parse()
                .map_err(|_| Error::invalid(format!("bad start offset {start:?} in provenance {s:?}")))?;
            let end: u64 = end
                .trim()
                .parse()
                .map_err(|_| Error::invalid(format!("bad end offset {end:?} in provenance {s:?}")))?;
            spans.push(Span::new(start, end)?);
        }
        Provenance::new(doc_id.unwrap_or_default(), spans)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EntityType {
    Per,
    Org,
    Gpe,
}

impl EntityType {
    pub fn as_str(&self) -> &'static str {
        match self {
            EntityType::Per => "PER",
            EntityType::Org => "ORG",
            EntityType::Gpe => "GPE",
        }
    }
}

impl fmt::Display for EntityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EntityType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "PER" => Ok(EntityType::Per),
            "ORG" => Ok(EntityType::Org),
            "GPE" => Ok(EntityType::Gpe),
            other => Err(Error::invalid(format!("unknown entity type {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Arity {
    Single,
    List,
}

/// Value class of a slot, used to choose the redundancy-elimination scheme.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SlotClass {
    Entity,
    Date,
    Numeric,
    String,
}

impl FromStr for SlotClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "entity" => Ok(SlotClass::Entity),
            "date" => Ok(SlotClass::Date),
            "numeric" => Ok(SlotClass::Numeric),
            "string" => Ok(SlotClass::String),
            other => Err(Error::invalid(format!("unknown slot class {other:?}"))),
        }
    }
}

impl fmt::Display for SlotClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SlotClass::Entity => "entity",
            SlotClass::Date => "date",
            SlotClass::Numeric => "numeric",
            SlotClass::String => "string",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotSpec {
    pub name: String,
    pub entity_type: EntityType,
    pub arity: Arity,
    pub class: SlotClass,
}

use Arity::{List, Single};
use SlotClass::{Date, Entity, Numeric, String as Str};

const PERSON_SLOTS: &[(&str, Arity, SlotClass)] = &[
    ("per:alternate_names", List, Entity),
    ("per:date_of_birth", Single, Date),
    ("per:age", Single, Numeric),
    ("per:parents", List, Entity),
    ("per:spouse", List, Entity),
    ("per:city_of_birth", Single, Entity),
    ("per:origin", List, Str),
    ("per:other_family", List, Entity),
    ("per:title", List, Str),
    ("per:religion", Single, Str),
    ("per:children", List, Entity),
    ("per:siblings", List, Entity),
    ("per:charges", List, Str),
    ("per:cause_of_death", Single, Str),
    ("per:countries_of_residence", List, Entity),
    ("per:statesorprovinces_of_residence", List, Entity),
    ("per:cities_of_residence", List, Entity),
    ("per:schools_attended", List, Entity),
    ("per:city_of_death", Single, Entity),
    ("per:stateorprovince_of_death", Single, Entity),
    ("per:country_of_death", Single, Entity),
    ("per:employee_or_member_of", List, Entity),
    ("per:stateorprovince_of_birth", Single, Entity),
    ("per:country_of_birth", Single, Entity),
    ("per:date_of_death", Single, Date),
];

const ORGANIZATION_SLOTS: &[(&str, Arity, SlotClass)] = &[
    ("org:country_of_headquarters", Single, Entity),
    ("org:stateorprovince_of_headquarters", Single, Entity),
    ("org:city_of_headquarters", Single, Entity),
    ("org:shareholders", List, Entity),
    ("org:top_members_employees", List, Entity),
    ("org:political_religious_affiliation", List, Entity),
    ("org:number_of_employees_members", Single, Numeric),
    ("org:alternate_names", List, Entity),
    ("org:founded_by", List, Entity),
    ("org:date_dissolved", Single, Date),
    ("org:website", Single, Str),
    ("org:date_founded", Single, Date),
    ("org:members", List, Entity),
    ("org:member_of", List, Entity),
    ("org:subsidiaries", List, Entity),
    ("org:parents", List, Entity),
];

/// Registered slot names with their entity type, arity and value class.
///
/// The default registry holds the 25 person and 16 organization slots. GPE is
/// a valid entity type but has no built-in slots; add them with
/// [`SlotRegistry::insert`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SlotRegistry {
    slots: BTreeMap<String, SlotSpec>,
}

impl Default for SlotRegistry {
    fn default() -> Self {
        let mut slots = BTreeMap::new();
        for (table, entity_type) in [(PERSON_SLOTS, EntityType::Per), (ORGANIZATION_SLOTS, EntityType::Org)] {
            for &(name, arity, class) in table {
                slots.insert(
                    name.to_string(),
                    SlotSpec {
                        name: name.to_string(),
                        entity_type,
                        arity,
                        class,
                    },
                );
            }
        }
        SlotRegistry { slots }
    }
}

impl SlotRegistry {
    pub fn empty() -> Self {
        SlotRegistry { slots: BTreeMap::new() }
    }

    pub fn insert(&mut self, spec: SlotSpec) {
        self.slots.insert(spec.name.clone(), spec);
    }

    pub fn get(&self, name: &str) -> Option<&SlotSpec> {
        self.slots.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.slots.contains_key(name)
    }

    /// Arity of a slot; unknown slots are treated as list-valued.
    pub fn arity(&self, name: &str) -> Arity {
        self.slots.get(name).map_or(Arity::List, |s| s.arity)
    }

    pub fn class(&self, name: &str) -> SlotClass {
        self.slots.get(name).map_or(SlotClass::String, |s| s.class)
    }

    /// Overrides value classes, e.g. from a slot-class config file.
    pub fn set_class(&mut self, name: &str, class: SlotClass) -> Result<()> {
        match self.slots.get_mut(name) {
            Some(spec) => {
                spec.class = class;
                Ok(())
            }
            None => Err(Error::invalid(format!("slot-class entry for unregistered slot {name}"))),
        }
    }

    pub fn slots_for(&self, entity_type: EntityType) -> impl Iterator<Item = &SlotSpec> {
        self.slots.values().filter(move |s| s.entity_type == entity_type)
    }

    /// Registry order of slot names (lexicographic), used as the relation vocabulary.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.slots.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }
}

/// A non-NIL answer: relation provenance, filler text, filler provenance and
/// the system's confidence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fill {
    pub relation_provenance: Provenance,
    pub filler: String,
    pub filler_provenance: Provenance,
    pub confidence: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Answer {
    Nil,
    Fill(Fill),
}

/// One row of a system run file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResponseLine {
    pub query_id: String,
    pub slot: String,
    pub run_id: String,
    pub answer: Answer,
}

impl ResponseLine {
    pub fn nil(query_id: impl Into<String>, slot: impl Into<String>, run_id: impl Into<String>) -> Self {
        ResponseLine {
            query_id: query_id.into(),
            slot: slot.into(),
            run_id: run_id.into(),
            answer: Answer::Nil,
        }
    }

    pub fn fill(
        query_id: impl Into<String>,
        slot: impl Into<String>,
        run_id: impl Into<String>,
        relation_provenance: Provenance,
        filler: impl Into<String>,
        filler_provenance: Provenance,
        confidence: f64,
    ) -> Result<Self> {
        let filler = filler.into();
        if normalize_fill(&filler).is_empty() {
            return Err(Error::invalid("non-NIL response with an empty filler"));
        }
        if !confidence.is_finite() {
            return Err(Error::invalid(format!("non-finite confidence {confidence}")));
        }
        Ok(ResponseLine {
            query_id: query_id.into(),
            slot: slot.into(),
            run_id: run_id.into(),
            answer: Answer::Fill(Fill {
                relation_provenance,
                filler,
                filler_provenance,
                confidence: confidence.clamp(0.0, 1.0),
            }),
        })
    }

    pub fn is_nil(&self) -> bool {
        matches!(self.answer, Answer::Nil)
    }

    pub fn as_fill(&self) -> Option<&Fill> {
        match &self.answer {
            Answer::Fill(fill) => Some(fill),
            Answer::Nil => None,
        }
    }

    pub fn confidence(&self) -> f64 {
        self.as_fill().map_or(0.0, |f| f.confidence)
    }

    pub fn fill_key(&self) -> Option<FillKey> {
        self.as_fill()
            .map(|f| FillKey::new(&self.query_id, &self.slot, normalize_fill(&f.filler)))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub name: String,
    pub entity_type: EntityType,
    pub doc_id: String,
    pub span: Span,
    pub slots: Vec<String>,
}

/// `(query_id, slot, normalized fill)`: the identity of a key-value instance.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FillKey {
    pub query_id: String,
    pub slot: String,
    pub fill_norm: String,
}

impl FillKey {
    pub fn new(query_id: impl Into<String>, slot: impl Into<String>, fill_norm: impl Into<String>) -> Self {
        FillKey {
            query_id: query_id.into(),
            slot: slot.into(),
            fill_norm: fill_norm.into(),
        }
    }

    pub fn query_slot(&self) -> (&str, &str) {
        (&self.query_id, &self.slot)
    }
}

impl fmt::Display for FillKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{:?}", self.query_id, self.slot, self.fill_norm)
    }
}

/// A distinct `(query, slot, fill)` with every system response that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub key: FillKey,
    /// system id (run id) -> response
    pub responses: BTreeMap<String, ResponseLine>,
    pub label: Option<bool>,
}

impl Candidate {
    pub fn query_id(&self) -> &str {
        &self.key.query_id
    }

    pub fn slot(&self) -> &str {
        &self.key.slot
    }

    pub fn fill_norm(&self) -> &str {
        &self.key.fill_norm
    }

    pub fn confidence_of(&self, system: &str) -> Option<f64> {
        self.responses.get(system).map(ResponseLine::confidence)
    }

    /// Highest confidence over the producing systems.
    pub fn max_confidence(&self) -> f64 {
        self.responses
            .values()
            .map(ResponseLine::confidence)
            .fold(0.0, f64::max)
    }

    /// Response with the highest confidence; ties go to the smallest system id.
    pub fn best_response(&self) -> &ResponseLine {
        let mut best: Option<&ResponseLine> = None;
        for response in self.responses.values() {
            if best.map_or(true, |b| response.confidence() > b.confidence()) {
                best = Some(response);
            }
        }
        best.expect("candidate without responses")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Judgment {
    Correct,
    Wrong,
}

/// Where a key row came from: assessment of pooled responses or the manual key.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KeyOrigin {
    Pooled,
    Manual,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyEntry {
    pub key: FillKey,
    pub judgment: Judgment,
    pub origin: KeyOrigin,
}

/// Trims, collapses whitespace runs to one space and lowercases.
pub fn normalize_fill(raw: &str) -> String {
    raw.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Groups non-NIL responses into one [`Candidate`] per distinct
/// `(query, slot, normalized fill)`, sorted by key.
///
/// NIL lines are skipped. When one system emits the same candidate twice the
/// higher-confidence line is kept (ties: the lexicographically smaller
/// provenance, so the result does not depend on input order).
pub fn group_candidates(lines: &[ResponseLine]) -> Result<Vec<Candidate>> {
    let mut grouped: BTreeMap<FillKey, BTreeMap<String, ResponseLine>> = BTreeMap::new();
    for (index, line) in lines.iter().enumerate() {
        let Some(fill) = line.as_fill() else { continue };
        if !(0.0..=1.0).contains(&fill.confidence) {
            return Err(Error::invalid(format!(
                "response line {}: confidence {} outside [0,1]",
                index + 1,
                fill.confidence
            )));
        }
        if line.query_id.is_empty() || line.slot.is_empty() || line.run_id.is_empty() {
            return Err(Error::invalid(format!(
                "response line {}: empty query, slot or run id",
                index + 1
            )));
        }
        let key = line.fill_key().expect("fill line has a key");
        if key.fill_norm.is_empty() {
            return Err(Error::invalid(format!("response line {}: empty filler", index + 1)));
        }
        let per_system = grouped.entry(key).or_default();
        match per_system.get(&line.run_id) {
            Some(existing) if !prefer(line, existing) => {}
            _ => {
                per_system.insert(line.run_id.clone(), line.clone());
            }
        }
    }
    Ok(grouped
        .into_iter()
        .map(|(key, responses)| Candidate {
            key,
            responses,
            label: None,
        })
        .collect())
}

fn prefer(new: &ResponseLine, old: &ResponseLine) -> bool {
    let (a, b) = (new.as_fill().unwrap(), old.as_fill().unwrap());
    match a.confidence.total_cmp(&b.confidence) {
        std::cmp::Ordering::Greater => true,
        std::cmp::Ordering::Less => false,
        std::cmp::Ordering::Equal => {
            (&a.filler_provenance, &a.relation_provenance, &a.filler)
                < (&b.filler_provenance, &b.relation_provenance, &b.filler)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line(q: &str, slot: &str, run: &str, filler: &str, conf: f64) -> ResponseLine {
        let prov = Provenance::single("D1", 10, 20).unwrap();
        ResponseLine::fill(q, slot, run, prov.clone(), filler, prov, conf).unwrap()
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_fill("  Barack   Obama "), "barack obama");
        assert_eq!(normalize_fill(""), "");
        assert_eq!(normalize_fill("IBM"), "ibm");
        assert_eq!(normalize_fill("a\t\nb"), "a b");
    }

    #[test]
    fn provenance_round_trip_and_short_form() {
        let p: Provenance = "D1:10-40,D1:55-56".parse().unwrap();
        assert_eq!(p.spans().len(), 2);
        assert_eq!(p.to_string(), "D1:10-40,D1:55-56");
        let short: Provenance = "D1:10-40,55-56".parse().unwrap();
        assert_eq!(short, p);
        assert!("D1:40-10".parse::<Provenance>().is_err());
        assert!("D1:10-40,D2:1-2".parse::<Provenance>().is_err());
        assert!("10-40".parse::<Provenance>().is_err());
        assert!("D1:x-4".parse::<Provenance>().is_err());
    }

    #[test]
    fn registry_covers_table() {
        let registry = SlotRegistry::default();
        assert_eq!(registry.slots_for(EntityType::Per).count(), 25);
        assert_eq!(registry.slots_for(EntityType::Org).count(), 16);
        assert_eq!(registry.arity("per:age"), Arity::Single);
        assert_eq!(registry.arity("per:children"), Arity::List);
        assert_eq!(registry.slots_for(EntityType::Gpe).count(), 0);
    }

    #[test]
    fn empty_filler_is_rejected() {
        let prov = Provenance::single("D1", 1, 2).unwrap();
        assert!(ResponseLine::fill("q", "per:age", "r", prov.clone(), "   ", prov, 0.5).is_err());
    }

    #[test]
    fn case_variants_merge() {
        let lines = vec![line("Q1", "per:spouse", "a", "Obama", 0.5), line("Q1", "per:spouse", "b", "obama", 0.7)];
        let cands = group_candidates(&lines).unwrap();
        assert_eq!(cands.len(), 1);
        assert_eq!(cands[0].responses.len(), 2);
    }

    #[test]
    fn distinct_list_fills_stay_apart() {
        let lines = vec![
            line("Q1", "per:children", "a", "Sasha", 0.5),
            line("Q1", "per:children", "a", "Malia", 0.7),
        ];
        assert_eq!(group_candidates(&lines).unwrap().len(), 2);
    }

    #[test]
    fn disjoint_fills_count() {
        // 3 systems x 2 queries, every fill distinct: 6 distinct triples.
        let mut lines = Vec::new();
        for s in ["a", "b", "c"] {
            for q in ["Q1", "Q2"] {
                lines.push(line(q, "per:title", s, &format!("{s}-{q}"), 0.5));
            }
        }
        let expected: std::collections::BTreeSet<_> = lines.iter().map(|l| l.fill_key().unwrap()).collect();
        assert_eq!(expected.len(), 6);
        assert_eq!(group_candidates(&lines).unwrap().len(), 6);
    }

    #[test]
    fn duplicate_lines_keep_max_confidence() {
        let lines = vec![line("Q1", "per:age", "a", "73", 0.4), line("Q1", "per:age", "a", "73", 0.9)];
        let cands = group_candidates(&lines).unwrap();
        assert_eq!(cands[0].confidence_of("a"), Some(0.9));
    }

    #[test]
    fn nil_lines_are_skipped() {
        let lines = vec![ResponseLine::nil("Q1", "per:age", "a"), line("Q1", "per:age", "b", "73", 0.4)];
        let cands = group_candidates(&lines).unwrap();
        assert_eq!(cands.len(), 1);
    }

    fn arb_lines() -> impl Strategy<Value = Vec<ResponseLine>> {
        let one = (0..3usize, 0..2usize, 0..4usize, 0..5usize, 0..=100u32).prop_map(|(q, s, sys, f, c)| {
            let fills = ["Obama", "obama ", "Sasha", "MALIA", "Kalo  Mavet"];
            line(
                &format!("Q{q}"),
                ["per:children", "per:age"][s],
                &format!("sys{sys}"),
                fills[f],
                c as f64 / 100.0,
            )
        });
        prop::collection::vec(one, 0..40)
    }

    proptest! {
        #[test]
        fn normalization_is_idempotent(s in "\\PC{0,30}") {
            let once = normalize_fill(&s);
            prop_assert_eq!(normalize_fill(&once), once);
        }

        #[test]
        fn grouping_is_order_independent(lines in arb_lines(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut shuffled = lines.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(group_candidates(&lines).unwrap(), group_candidates(&shuffled).unwrap());
        }

        #[test]
        fn every_retained_line_lands_in_one_candidate(lines in arb_lines()) {
            let cands = group_candidates(&lines).unwrap();
            let retained: std::collections::BTreeSet<_> = lines
                .iter()
                .filter_map(|l| l.fill_key().map(|k| (k, l.run_id.clone())))
                .collect();
            let total: usize = cands.iter().map(|c| c.responses.len()).sum();
            prop_assert_eq!(total, retained.len());
        }
    }
}
