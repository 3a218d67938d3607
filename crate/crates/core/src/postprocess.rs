//! Final output shaping: redundancy elimination, single-valued selection and
//! NIL-cluster merging.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{data_lines, AliasTable};
use crate::model::{normalize_fill, Arity, Provenance, ResponseLine, SlotClass, SlotRegistry, Span};
use crate::unionfind::DisjointSet;

fn fill_norm(line: &ResponseLine) -> String {
    line.as_fill().map(|f| normalize_fill(&f.filler)).unwrap_or_default()
}

/// Keeps one line per group: highest confidence, ties to the smallest fill.
fn keep_best(lines: &[ResponseLine], groups: Vec<Vec<usize>>) -> Vec<ResponseLine> {
    let mut kept: Vec<ResponseLine> = groups
        .into_iter()
        .map(|group| {
            let mut best = group[0];
            for &i in &group[1..] {
                let (c, b) = (lines[i].confidence(), lines[best].confidence());
                if c > b || (c == b && fill_norm(&lines[i]) < fill_norm(&lines[best])) {
                    best = i;
                }
            }
            lines[best].clone()
        })
        .collect();
    kept.sort_by_cached_key(fill_norm);
    kept
}

/// Groups lines with equal normal forms.
fn dedup_by(lines: &[ResponseLine], normal: impl Fn(&str) -> String) -> Vec<ResponseLine> {
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, line) in lines.iter().enumerate() {
        groups.entry(normal(&fill_norm(line))).or_default().push(i);
    }
    keep_best(lines, groups.into_values().collect())
}

/// Merges fills of one `(query, slot)` whose alias sets intersect, keeping
/// the most confident member of each connected group.
pub fn eliminate_aliases(lines: &[ResponseLine], table: &AliasTable) -> Vec<ResponseLine> {
    let mut set = DisjointSet::new(lines.len());
    let mut owner: BTreeMap<String, usize> = BTreeMap::new();
    for (i, line) in lines.iter().enumerate() {
        for alias in table.alias_set(&fill_norm(line)) {
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
    keep_best(lines, set.components())
}

/// Date with the fields that are known.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct PartialDate {
    pub year: Option<i32>,
    pub month: Option<u32>,
    pub day: Option<u32>,
}

impl std::fmt::Display for PartialDate {
    /// ISO year-month-day, with unknown fields written as `XX`.
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let part = |v: Option<u32>| v.map_or("XX".to_string(), |v| format!("{v:02}"));
        match self.year {
            Some(y) => write!(f, "{y:04}")?,
            None => f.write_str("XXXX")?,
        }
        if self.month.is_some() || self.day.is_some() {
            write!(f, "-{}", part(self.month))?;
        }
        if self.day.is_some() {
            write!(f, "-{}", part(self.day))?;
        }
        Ok(())
    }
}

const MONTHS: [&str; 12] = [
    "january", "february", "march", "april", "may", "june", "july", "august", "september", "october", "november",
    "december",
];

fn month_number(word: &str) -> Option<u32> {
    let word = word.trim_end_matches('.');
    if word.len() < 3 {
        return None;
    }
    MONTHS
        .iter()
        .position(|m| m.starts_with(word) && (word.len() >= 3))
        .map(|i| i as u32 + 1)
}

fn numeric_field(s: &str) -> Option<Option<u32>> {
    if s.chars().all(|c| c == 'x' || c == 'X') && !s.is_empty() {
        return Some(None);
    }
    s.parse().ok().map(Some)
}

fn valid(date: PartialDate) -> Option<PartialDate> {
    let month_ok = date.month.map_or(true, |m| (1..=12).contains(&m));
    let day_ok = date.day.map_or(true, |d| (1..=31).contains(&d));
    (month_ok && day_ok && (date.year.is_some() || date.month.is_some())).then_some(date)
}

/// Parses ISO (`1990-01-05`, `1990-01`, `1990`, `XX` placeholders), US
/// numeric (`01/05/1990`) and written forms (`January 5, 1990`,
/// `5 Jan 1990`, `January 1990`).
pub fn parse_date(raw: &str) -> Option<PartialDate> {
    let text = normalize_fill(raw).replace(',', " ");
    let text = text.trim();
    if let Some(parts) = split_all(text, '-') {
        if parts.len() <= 3 && parts[0].len() == 4 {
            let year = match numeric_field(parts[0])? {
                Some(y) => Some(y as i32),
                None => None,
            };
            let month = parts.get(1).map_or(Some(None), |p| numeric_field(p))?;
            let day = parts.get(2).map_or(Some(None), |p| numeric_field(p))?;
            return valid(PartialDate { year, month, day });
        }
    }
    if let Some(parts) = split_all(text, '/') {
        if parts.len() == 3 && parts[2].len() == 4 {
            let month = parts[0].parse().ok()?;
            let day = parts[1].parse().ok()?;
            let year = parts[2].parse().ok()?;
            return valid(PartialDate {
                year: Some(year),
                month: Some(month),
                day: Some(day),
            });
        }
    }
    let words: Vec<&str> = text.split_whitespace().collect();
    let year_of = |w: &str| (w.len() == 4).then(|| w.parse::<i32>().ok()).flatten();
    let day_of = |w: &str| {
        let w = w.trim_end_matches(|c: char| c.is_ascii_alphabetic());
        (w.len() <= 2).then(|| w.parse::<u32>().ok()).flatten()
    };
    let date = match words.as_slice() {
        [m, d, y] if month_number(m).is_some() => PartialDate {
            year: Some(year_of(y)?),
            month: month_number(m),
            day: Some(day_of(d)?),
        },
        [d, m, y] if month_number(m).is_some() => PartialDate {
            year: Some(year_of(y)?),
            month: month_number(m),
            day: Some(day_of(d)?),
        },
        [m, y] if month_number(m).is_some() => PartialDate {
            year: Some(year_of(y)?),
            month: month_number(m),
            day: None,
        },
        [y] if year_of(y).is_some() => PartialDate {
            year: year_of(y),
            month: None,
            day: None,
        },
        _ => return None,
    };
    valid(date)
}

fn split_all(text: &str, sep: char) -> Option<Vec<&str>> {
    let parts: Vec<&str> = text.split(sep).collect();
    (parts.iter().all(|p| !p.is_empty() && p.chars().all(|c| c.is_ascii_alphanumeric()))).then_some(parts)
}

/// Numeric value of a fill, ignoring thousands separators.
pub fn parse_number(raw: &str) -> Option<f64> {
    let cleaned: String = raw.trim().chars().filter(|&c| c != ',').collect();
    cleaned.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Normal form used by [`simple_dedup`] for a slot class.
pub fn normal_form(fill: &str, class: SlotClass) -> String {
    match class {
        SlotClass::Date => parse_date(fill).map(|d| d.to_string()),
        SlotClass::Numeric => parse_number(fill).map(|v| format!("#{v}")),
        _ => None,
    }
    .unwrap_or_else(|| normalize_fill(fill))
}

/// Merges fills of one `(query, slot)` with equal date or numeric normal
/// forms, keeping the most confident.
pub fn simple_dedup(lines: &[ResponseLine], class: SlotClass) -> Vec<ResponseLine> {
    dedup_by(lines, |f| normal_form(f, class))
}

/// Keeps the most confident line per single-valued `(query, slot)`.
pub fn select_single_valued(lines: &[ResponseLine], registry: &SlotRegistry) -> Vec<ResponseLine> {
    let mut best: BTreeMap<(&str, &str), &ResponseLine> = BTreeMap::new();
    let mut out = Vec::new();
    for line in lines.iter().filter(|l| !l.is_nil()) {
        if registry.arity(&line.slot) == Arity::List {
            out.push(line.clone());
            continue;
        }
        best.entry((&line.query_id, &line.slot))
            .and_modify(|b| {
                let (c, bc) = (line.confidence(), b.confidence());
                if c > bc || (c == bc && fill_norm(line) < fill_norm(b)) {
                    *b = line;
                }
            })
            .or_insert(line);
    }
    out.extend(best.into_values().cloned());
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PostprocessOptions {
    /// Run single-valued selection.
    pub select_single: bool,
    /// Run alias or simple redundancy elimination.
    pub dedup: bool,
}

/// Redundancy elimination per `(query, slot)` followed by single-valued
/// selection. Entity-valued slots use the alias table when one is given.
/// Output is sorted by `(query, slot, fill)`; NIL lines are dropped.
pub fn postprocess_run(
    lines: &[ResponseLine],
    registry: &SlotRegistry,
    aliases: Option<&AliasTable>,
    options: PostprocessOptions,
) -> Vec<ResponseLine> {
    let mut by_key: BTreeMap<(&str, &str), Vec<ResponseLine>> = BTreeMap::new();
    for line in lines.iter().filter(|l| !l.is_nil()) {
        by_key.entry((&line.query_id, &line.slot)).or_default().push(line.clone());
    }
    let mut out = Vec::new();
    for ((_, slot), group) in by_key {
        let group = if options.dedup {
            match (registry.class(slot), aliases) {
                (SlotClass::Entity, Some(table)) => eliminate_aliases(&group, table),
                (class, _) => simple_dedup(&group, class),
            }
        } else {
            group
        };
        out.extend(group);
    }
    if options.select_single {
        out = select_single_valued(&out, registry);
    }
    out.sort_by_cached_key(|l| (l.query_id.clone(), l.slot.clone(), fill_norm(l)));
    out
}

// ---------------------------------------------------------------------------
// NIL clusters
// ---------------------------------------------------------------------------

/// One entity mention linked to a knowledge-base id or a NIL cluster.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MentionLink {
    pub system: String,
    pub mention: String,
    pub provenance: Provenance,
    pub cluster_id: String,
    pub confidence: f64,
}

/// `NIL` followed by at least one digit and nothing else.
pub fn is_nil_id(id: &str) -> bool {
    id.strip_prefix("NIL")
        .map_or(false, |rest| !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()))
}

/// Merges NIL clusters of all systems that share a mention (normalized
/// string and document; plus offsets when `offset_exact`). Merged clusters get
/// fresh ids `NIL0001`, `NIL0002`, ... in order of their smallest
/// `(system, cluster)` member. Knowledge-base links are returned unchanged.
pub fn merge_nil_clusters(links: &[MentionLink], offset_exact: bool) -> Vec<MentionLink> {
    let nodes: BTreeSet<(&str, &str)> = links
        .iter()
        .filter(|l| is_nil_id(&l.cluster_id))
        .map(|l| (l.system.as_str(), l.cluster_id.as_str()))
        .collect();
    let index: BTreeMap<(&str, &str), usize> = nodes.iter().enumerate().map(|(i, n)| (*n, i)).collect();

    let mut set = DisjointSet::new(nodes.len());
    let mut first: BTreeMap<(String, &str, Option<&[Span]>), usize> = BTreeMap::new();
    for link in links.iter().filter(|l| is_nil_id(&l.cluster_id)) {
        let node = index[&(link.system.as_str(), link.cluster_id.as_str())];
        let spans = offset_exact.then(|| link.provenance.spans());
        let mention = (normalize_fill(&link.mention), link.provenance.doc_id(), spans);
        match first.get(&mention) {
            Some(&other) => {
                set.union(node, other);
            }
            None => {
                first.insert(mention, node);
            }
        }
    }

    let mut fresh = vec![String::new(); nodes.len()];
    for (n, component) in set.components().into_iter().enumerate() {
        for member in component {
            fresh[member] = format!("NIL{:04}", n + 1);
        }
    }
    links
        .iter()
        .map(|link| {
            let mut out = link.clone();
            if let Some(&i) = index.get(&(link.system.as_str(), link.cluster_id.as_str())) {
                out.cluster_id = fresh[i].clone();
            }
            out
        })
        .collect()
}

/// Seven columns: system, mention, doc id, start, end, cluster id, confidence.
pub fn parse_links(text: &str, source: &str) -> Result<Vec<MentionLink>> {
    let mut links = Vec::new();
    for (number, raw) in data_lines(text) {
        let cols: Vec<&str> = raw.split('\t').collect();
        if cols.len() != 7 {
            return Err(Error::parse(
                source,
                number,
                format!("expected 7 columns, found {}", cols.len()),
            ));
        }
        let at = |e: String| Error::parse(source, number, e);
        let start: u64 = cols[3].trim().parse().map_err(|_| at(format!("bad start offset {:?}", cols[3])))?;
        let end: u64 = cols[4].trim().parse().map_err(|_| at(format!("bad end offset {:?}", cols[4])))?;
        let provenance = Provenance::single(cols[2].trim(), start, end).map_err(|e| at(e.to_string()))?;
        let cluster_id = cols[5].trim().to_string();
        if cluster_id.starts_with("NIL") && !is_nil_id(&cluster_id) {
            return Err(at(format!("malformed NIL id {cluster_id:?}")));
        }
        let confidence: f64 = cols[6]
            .trim()
            .parse()
            .ok()
            .filter(|c: &f64| (0.0..=1.0).contains(c))
            .ok_or_else(|| at(format!("confidence {:?} is not in [0, 1]", cols[6])))?;
        links.push(MentionLink {
            system: cols[0].trim().to_string(),
            mention: cols[1].to_string(),
            provenance,
            cluster_id,
            confidence,
        });
    }
    Ok(links)
}

pub fn load_links(path: &Path) -> Result<Vec<MentionLink>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_links(&text, &path.display().to_string())
}

pub fn write_links(links: &[MentionLink]) -> String {
    let mut out = String::new();
    for l in links {
        let span = l.provenance.spans()[0];
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{:.6}",
            l.system,
            l.mention,
            l.provenance.doc_id(),
            span.start,
            span.end,
            l.cluster_id,
            l.confidence
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line(slot: &str, fill: &str, conf: f64) -> ResponseLine {
        let prov = Provenance::single("D", 0, 3).unwrap();
        ResponseLine::fill("Q", slot, "final", prov.clone(), fill, prov, conf).unwrap()
    }

    fn fills(lines: &[ResponseLine]) -> Vec<String> {
        lines.iter().map(fill_norm).collect()
    }

    #[test]
    fn alias_elimination() {
        let table = AliasTable::from_rows([("Barack Obama", "Obama", 40), ("Barack Obama", "President Obama", 3)], 10);
        let lines = vec![line("per:spouse", "Barack Obama", 0.6), line("per:spouse", "obama", 0.8)];
        assert_eq!(fills(&eliminate_aliases(&lines, &table)), ["obama"]);

        let disjoint = vec![line("per:spouse", "Barack Obama", 0.6), line("per:spouse", "Joe Biden", 0.8)];
        assert_eq!(eliminate_aliases(&disjoint, &table).len(), 2);

        let empty = AliasTable::default();
        let dup = vec![line("per:spouse", "Obama", 0.6), line("per:spouse", "obama ", 0.5), line("per:spouse", "barack obama", 0.1)];
        assert_eq!(fills(&eliminate_aliases(&dup, &empty)), ["barack obama", "obama"]);
    }

    #[test]
    fn alias_transitivity() {
        // a~b through "x", b~c through "y": one group.
        let table = AliasTable::from_rows([("a", "x", 1), ("b", "x", 1), ("b", "y", 1), ("c", "y", 1)], 10);
        let lines = vec![line("per:spouse", "a", 0.1), line("per:spouse", "b", 0.2), line("per:spouse", "c", 0.3)];
        assert_eq!(fills(&eliminate_aliases(&lines, &table)), ["c"]);
    }

    #[test]
    fn dates() {
        let iso = |s: &str| parse_date(s).map(|d| d.to_string());
        assert_eq!(iso("January 5, 1990").as_deref(), Some("1990-01-05"));
        assert_eq!(iso("1990-01-05").as_deref(), Some("1990-01-05"));
        assert_eq!(iso("5 Jan 1990").as_deref(), Some("1990-01-05"));
        assert_eq!(iso("01/05/1990").as_deref(), Some("1990-01-05"));
        assert_eq!(iso("March 1990").as_deref(), Some("1990-03"));
        assert_eq!(iso("1990").as_deref(), Some("1990"));
        assert_eq!(iso("1990-XX-XX").as_deref(), Some("1990"));
        assert_eq!(iso("1990-13-01"), None);
        assert_eq!(iso("yesterday"), None);

        let merged = simple_dedup(
            &[line("per:date_of_birth", "January 5, 1990", 0.4), line("per:date_of_birth", "1990-01-05", 0.7)],
            SlotClass::Date,
        );
        assert_eq!(fills(&merged), ["1990-01-05"]);
        let kept = simple_dedup(
            &[line("per:date_of_birth", "1990", 0.4), line("per:date_of_birth", "1990-01-05", 0.7)],
            SlotClass::Date,
        );
        assert_eq!(kept.len(), 2);
    }

    #[test]
    fn numbers() {
        let merged = simple_dedup(&[line("per:age", "73", 0.4), line("per:age", "73.0", 0.9)], SlotClass::Numeric);
        assert_eq!(fills(&merged), ["73.0"]);
        let thousands = simple_dedup(
            &[line("org:number_of_employees_members", "1,200", 0.4), line("org:number_of_employees_members", "1200", 0.3)],
            SlotClass::Numeric,
        );
        assert_eq!(fills(&thousands), ["1,200"]);
        assert_eq!(simple_dedup(&[line("per:age", "73", 0.4), line("per:age", "74", 0.9)], SlotClass::Numeric).len(), 2);
    }

    #[test]
    fn single_valued_selection() {
        let registry = SlotRegistry::default();
        let picked = select_single_valued(&[line("per:age", "40", 0.9), line("per:age", "41", 0.6)], &registry);
        assert_eq!(fills(&picked), ["40"]);
        assert!(select_single_valued(&[], &registry).is_empty());
        let list: Vec<_> = (0..4).map(|i| line("per:title", &format!("t{i}"), 0.5)).collect();
        assert_eq!(select_single_valued(&list, &registry).len(), 4);
    }

    #[test]
    fn full_postprocess() {
        let registry = SlotRegistry::default();
        let table = AliasTable::from_rows([("barack obama", "obama", 1)], 10);
        let lines = vec![
            line("per:age", "40", 0.9),
            line("per:age", "40.0", 0.95),
            line("per:age", "41", 0.6),
            line("per:spouse", "barack obama", 0.6),
            line("per:spouse", "obama", 0.5),
            ResponseLine::nil("Q", "per:title", "final"),
        ];
        let opts = PostprocessOptions { select_single: true, dedup: true };
        let out = postprocess_run(&lines, &registry, Some(&table), opts);
        assert_eq!(fills(&out), ["40.0", "barack obama"]);
        let raw = postprocess_run(&lines, &registry, None, PostprocessOptions::default());
        assert_eq!(raw.len(), 5);
    }

    fn link(system: &str, mention: &str, doc: &str, cluster: &str) -> MentionLink {
        MentionLink {
            system: system.into(),
            mention: mention.into(),
            provenance: Provenance::single(doc, 0, mention.len() as u64).unwrap(),
            cluster_id: cluster.into(),
            confidence: 1.0,
        }
    }

    #[test]
    fn nil_merging_fixture() {
        let links = vec![
            link("A", "m1", "D1", "NIL1"),
            link("A", "m2", "D1", "NIL1"),
            link("B", "m2", "D1", "NIL7"),
            link("B", "m3", "D2", "NIL7"),
            link("B", "Paris", "D3", "E0001"),
        ];
        let out = merge_nil_clusters(&links, false);
        let ids: BTreeSet<&str> = out[..4].iter().map(|l| l.cluster_id.as_str()).collect();
        assert_eq!(ids, BTreeSet::from(["NIL0001"]));
        assert_eq!(out[4].cluster_id, "E0001");

        let disjoint = merge_nil_clusters(&[link("A", "x", "D", "NIL1"), link("B", "y", "D", "NIL1")], false);
        assert_eq!(disjoint[0].cluster_id, "NIL0001");
        assert_eq!(disjoint[1].cluster_id, "NIL0002");

        let chain = vec![
            link("A", "p", "D", "NIL1"),
            link("B", "p", "D", "NIL2"),
            link("B", "q", "D", "NIL2"),
            link("C", "q", "D", "NIL3"),
        ];
        assert!(merge_nil_clusters(&chain, false).iter().all(|l| l.cluster_id == "NIL0001"));
    }

    #[test]
    fn offset_exact_mode() {
        let mut a = link("A", "m", "D", "NIL1");
        let mut b = link("B", "m", "D", "NIL2");
        a.provenance = Provenance::single("D", 10, 12).unwrap();
        b.provenance = Provenance::single("D", 11, 12).unwrap();
        let loose = merge_nil_clusters(&[a.clone(), b.clone()], false);
        assert_eq!(loose[0].cluster_id, loose[1].cluster_id);
        let strict = merge_nil_clusters(&[a, b], true);
        assert_ne!(strict[0].cluster_id, strict[1].cluster_id);
    }

    #[test]
    fn link_files() {
        let text = "A\tBarack Obama\tD1\t3\t14\tNIL12\t0.500000\nB\tParis\tD2\t0\t4\tE01\t1.000000\n";
        let links = parse_links(text, "t").unwrap();
        assert_eq!(write_links(&links), text);
        assert!(parse_links("A\tx\tD\t0\t1\tNILx\t0.5\n", "t").is_err());
        assert!(parse_links("A\tx\tD\t0\t1\n", "t").is_err());
        assert!(is_nil_id("NIL0001") && !is_nil_id("NIL") && !is_nil_id("E1"));
    }

    fn links_strategy() -> impl Strategy<Value = Vec<MentionLink>> {
        prop::collection::vec((0usize..3, 0usize..4, 0usize..8), 1..30).prop_map(|rows| {
            rows.into_iter()
                .map(|(s, c, m)| link(&format!("S{s}"), &format!("m{m}"), "D", &format!("NIL{c}")))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn merge_is_partition_and_order_independent(links in links_strategy()) {
            let out = merge_nil_clusters(&links, false);
            prop_assert_eq!(out.len(), links.len());
            // Same input cluster, same output cluster; shared mentions, same cluster.
            for (i, a) in links.iter().enumerate() {
                for (j, b) in links.iter().enumerate() {
                    let same_in = a.system == b.system && a.cluster_id == b.cluster_id;
                    if same_in || a.mention == b.mention {
                        prop_assert_eq!(&out[i].cluster_id, &out[j].cluster_id);
                    }
                }
            }
            let mut reversed = links.clone();
            reversed.reverse();
            let mut back = merge_nil_clusters(&reversed, false);
            back.reverse();
            prop_assert_eq!(back, out);
        }

        #[test]
        fn postprocess_only_removes(entries in prop::collection::vec((0usize..3, 0usize..6, 0.0f64..=1.0), 0..20)) {
            let registry = SlotRegistry::default();
            let slots = ["per:age", "per:title", "per:spouse"];
            let lines: Vec<ResponseLine> = entries.iter()
                .map(|(s, f, c)| line(slots[*s], &format!("{f}"), *c))
                .collect();
            let table = AliasTable::from_rows([("1", "2", 1), ("3", "4", 1)], 10);
            let out = postprocess_run(&lines, &registry, Some(&table), PostprocessOptions { select_single: true, dedup: true });
            for l in &out {
                prop_assert!(lines.contains(l));
            }
            let single = out.iter().filter(|l| l.slot == "per:age").count();
            prop_assert!(single <= 1);
            // Alias sets of the surviving entity fills are pairwise disjoint.
            let spouses: Vec<BTreeSet<String>> = out.iter().filter(|l| l.slot == "per:spouse").map(|l| table.alias_set(&fill_norm(l))).collect();
            for i in 0..spouses.len() {
                for j in i + 1..spouses.len() {
                    prop_assert!(spouses[i].is_disjoint(&spouses[j]));
                }
            }
        }
    }
}
