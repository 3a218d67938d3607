//! Union and voting ensembles, threshold learning and the oracle threshold
//! sweep.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Arity, Candidate, FillKey, KeyEntry, SlotRegistry};
use crate::scorer::{score_fills, ScoreMode};

/// Label attached to every oracle-threshold output.
pub const ORACLE_LABEL: &str = "oracle: threshold chosen with test labels";

/// Distinct systems across the candidates.
pub fn pool_size(candidates: &[Candidate]) -> usize {
    candidates
        .iter()
        .flat_map(|c| c.responses.keys())
        .collect::<BTreeSet<_>>()
        .len()
}

/// Keeps every list-slot candidate and, per single-valued `(query, slot)`,
/// the candidate with the highest producing-system confidence (ties: the
/// smallest normalized fill).
pub fn resolve_single_valued<'a>(selected: Vec<&'a Candidate>, registry: &SlotRegistry) -> Vec<&'a Candidate> {
    let mut best: BTreeMap<(&str, &str), &Candidate> = BTreeMap::new();
    let mut out = Vec::with_capacity(selected.len());
    for c in selected {
        if registry.arity(c.slot()) == Arity::List {
            out.push(c);
            continue;
        }
        best.entry((c.query_id(), c.slot()))
            .and_modify(|b| {
                let better = c.max_confidence() > b.max_confidence()
                    || (c.max_confidence() == b.max_confidence() && c.fill_norm() < b.fill_norm());
                if better {
                    *b = c;
                }
            })
            .or_insert(c);
    }
    out.extend(best.into_values());
    out.sort_by(|a, b| a.key.cmp(&b.key));
    out
}

pub fn union_ensemble<'a>(candidates: &'a [Candidate], registry: &SlotRegistry) -> Vec<&'a Candidate> {
    resolve_single_valued(candidates.iter().collect(), registry)
}

/// Candidates produced by at least `k` systems, before conflict resolution.
pub fn voting_survivors(candidates: &[Candidate], k: usize) -> Vec<&Candidate> {
    candidates.iter().filter(|c| c.responses.len() >= k).collect()
}

pub fn voting_ensemble<'a>(candidates: &'a [Candidate], k: usize, registry: &SlotRegistry) -> Vec<&'a Candidate> {
    resolve_single_valued(voting_survivors(candidates, k), registry)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub k: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn keys<'a>(selected: impl IntoIterator<Item = &'a Candidate>) -> impl Iterator<Item = FillKey> {
    selected.into_iter().map(|c| c.key.clone()).collect::<Vec<_>>().into_iter()
}

/// Voting scored against `key` for every `k` in `1..=pool`.
pub fn pr_curve(
    candidates: &[Candidate],
    key: &[KeyEntry],
    registry: &SlotRegistry,
    pool: usize,
    mode: ScoreMode,
) -> Vec<PrPoint> {
    (1..=pool)
        .map(|k| {
            let report = score_fills(keys(voting_ensemble(candidates, k, registry)), key, mode, None);
            PrPoint {
                k,
                precision: report.precision(),
                recall: report.recall(),
                f1: report.f1(),
            }
        })
        .collect()
}

fn best_k(curve: &[PrPoint]) -> usize {
    let mut best = curve[0];
    for p in &curve[1..] {
        if p.f1 > best.f1 {
            best = *p;
        }
    }
    best.k
}

/// Threshold with the best training F1; ties go to the smallest `k`.
pub fn learn_threshold(
    candidates: &[Candidate],
    key: &[KeyEntry],
    registry: &SlotRegistry,
    mode: ScoreMode,
) -> Result<usize> {
    let pool = pool_size(candidates);
    if pool == 0 {
        return Err(Error::invalid("cannot learn a voting threshold from an empty pool"));
    }
    Ok(best_k(&pr_curve(candidates, key, registry, pool, mode)))
}

/// Full sweep on the test data with its own key. The result is an upper
/// bound for voting, not a deployable method.
pub fn oracle_threshold(
    candidates: &[Candidate],
    key: &[KeyEntry],
    registry: &SlotRegistry,
    mode: ScoreMode,
) -> Result<(usize, Vec<PrPoint>)> {
    let pool = pool_size(candidates);
    if pool == 0 {
        return Err(Error::invalid("cannot sweep voting thresholds over an empty pool"));
    }
    let curve = pr_curve(candidates, key, registry, pool, mode);
    log::info!("{ORACLE_LABEL}");
    Ok((best_k(&curve), curve))
}

/// CSV with columns `k,precision,recall,f1`; `label` becomes a leading
/// comment line when given.
pub fn write_pr_curve(curve: &[PrPoint], label: Option<&str>) -> String {
    let mut out = String::new();
    if let Some(label) = label {
        let _ = writeln!(out, "# {label}");
    }
    out.push_str("k,precision,recall,f1\n");
    for p in curve {
        let _ = writeln!(out, "{},{:.6},{:.6},{:.6}", p.k, p.precision, p.recall, p.f1);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{group_candidates, Judgment, KeyOrigin, Provenance, ResponseLine};
    use proptest::prelude::*;

    fn line(q: &str, slot: &str, sys: &str, fill: &str, conf: f64) -> ResponseLine {
        let prov = Provenance::single("D", 0, 3).unwrap();
        ResponseLine::fill(q, slot, sys, prov.clone(), fill, prov, conf).unwrap()
    }

    fn fills(selected: &[&Candidate]) -> Vec<String> {
        selected.iter().map(|c| c.fill_norm().to_string()).collect()
    }

    #[test]
    fn union_rules() {
        let registry = SlotRegistry::default();
        let lines: Vec<_> = (0..5).map(|i| line("Q", "per:title", "a", &format!("t{i}"), 0.1)).collect();
        let cands = group_candidates(&lines).unwrap();
        assert_eq!(union_ensemble(&cands, &registry).len(), 5);

        let single = group_candidates(&[
            line("Q", "per:age", "a", "40", 0.7),
            line("Q", "per:age", "b", "41", 0.9),
            line("Q", "per:age", "c", "40", 0.2),
        ])
        .unwrap();
        assert_eq!(fills(&union_ensemble(&single, &registry)), ["41"]);

        let sole = group_candidates(&[line("Q", "per:age", "a", "40", 0.01)]).unwrap();
        assert_eq!(union_ensemble(&sole, &registry).len(), 1);

        let tie = group_candidates(&[line("Q", "per:age", "a", "41", 0.5), line("Q", "per:age", "b", "40", 0.5)]).unwrap();
        assert_eq!(fills(&union_ensemble(&tie, &registry)), ["40"]);
    }

    #[test]
    fn voting_rules() {
        let registry = SlotRegistry::default();
        let mut lines = Vec::new();
        for s in 0..10 {
            let sys = format!("s{s}");
            lines.push(line("Q", "per:title", &sys, "all", 0.5));
            if s < 3 {
                lines.push(line("Q", "per:title", &sys, "three", 0.5));
            }
        }
        let cands = group_candidates(&lines).unwrap();
        assert_eq!(pool_size(&cands), 10);
        assert_eq!(voting_ensemble(&cands, 1, &registry), union_ensemble(&cands, &registry));
        assert_eq!(fills(&voting_ensemble(&cands, 3, &registry)), ["all", "three"]);
        assert_eq!(fills(&voting_ensemble(&cands, 4, &registry)), ["all"]);
        assert_eq!(fills(&voting_ensemble(&cands, 10, &registry)), ["all"]);
    }

    fn entry(q: &str, slot: &str, fill: &str, correct: bool) -> KeyEntry {
        KeyEntry {
            key: FillKey::new(q, slot, fill),
            judgment: if correct { Judgment::Correct } else { Judgment::Wrong },
            origin: KeyOrigin::Pooled,
        }
    }

    /// Exhaustive F1 sweep written independently of `pr_curve`.
    fn sweep_oracle(lines: &[ResponseLine], key: &[KeyEntry], pool: usize) -> usize {
        let gold = key.iter().filter(|e| e.judgment == Judgment::Correct).count() as f64;
        let mut counts: BTreeMap<FillKey, BTreeSet<&str>> = BTreeMap::new();
        for l in lines {
            counts.entry(l.fill_key().unwrap()).or_default().insert(&l.run_id);
        }
        let mut best = (0, -1.0);
        for k in 1..=pool {
            let chosen: Vec<&FillKey> = counts.iter().filter(|(_, s)| s.len() >= k).map(|(f, _)| f).collect();
            let correct = chosen
                .iter()
                .filter(|f| key.iter().any(|e| &e.key == **f && e.judgment == Judgment::Correct))
                .count() as f64;
            let p = if chosen.is_empty() { 0.0 } else { correct / chosen.len() as f64 };
            let r = correct / gold;
            let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
            if f > best.1 {
                best = (k, f);
            }
        }
        best.0
    }

    #[test]
    fn learned_threshold_fixture() {
        // Correct fills have 3..=5 producers, wrong fills 1..=2; k = 3 separates them.
        let registry = SlotRegistry::default();
        let mut lines = Vec::new();
        let mut key = Vec::new();
        for q in 0..6 {
            let qid = format!("Q{q}");
            let correct_fill = format!("good{q}");
            for s in 0..(3 + q % 3) {
                lines.push(line(&qid, "per:title", &format!("s{s}"), &correct_fill, 0.5));
            }
            key.push(entry(&qid, "per:title", &correct_fill, true));
            for w in 0..2 {
                let wrong = format!("bad{q}_{w}");
                for s in 0..(1 + (q + w) % 2) {
                    lines.push(line(&qid, "per:title", &format!("s{}", 9 - s), &wrong, 0.5));
                }
                key.push(entry(&qid, "per:title", &wrong, false));
            }
        }
        for s in 0..10 {
            lines.push(line("Q0", "per:title", &format!("s{s}"), "everyone", 0.5));
        }
        key.push(entry("Q0", "per:title", "everyone", true));
        let cands = group_candidates(&lines).unwrap();
        assert_eq!(pool_size(&cands), 10);
        let k = learn_threshold(&cands, &key, &registry, ScoreMode::Official).unwrap();
        assert_eq!(k, 3);
        assert_eq!(k, sweep_oracle(&lines, &key, 10));
    }

    #[test]
    fn threshold_ties_and_degenerate_pools() {
        let registry = SlotRegistry::default();
        let lines: Vec<_> = ["a", "b", "c"].iter().map(|s| line("Q", "per:title", s, "x", 0.5)).collect();
        let cands = group_candidates(&lines).unwrap();
        let key = vec![entry("Q", "per:title", "x", true)];
        assert_eq!(learn_threshold(&cands, &key, &registry, ScoreMode::Official).unwrap(), 1);

        let one = group_candidates(&[line("Q", "per:title", "a", "x", 0.5)]).unwrap();
        assert_eq!(learn_threshold(&one, &key, &registry, ScoreMode::Official).unwrap(), 1);
        assert!(learn_threshold(&[], &key, &registry, ScoreMode::Official).is_err());

        let (k, curve) = oracle_threshold(&cands, &key, &registry, ScoreMode::Official).unwrap();
        assert_eq!(curve.len(), 3);
        assert_eq!(k, 1);
        let csv = write_pr_curve(&curve, Some(ORACLE_LABEL));
        assert!(csv.starts_with("# oracle"));
        assert_eq!(csv.lines().count(), 5);
    }

    fn pool_strategy() -> impl Strategy<Value = Vec<ResponseLine>> {
        prop::collection::vec((0usize..3, 0usize..6, 0usize..5, 0.0f64..=1.0), 1..60).prop_map(|rows| {
            rows.into_iter()
                .map(|(q, s, f, c)| line(&format!("Q{q}"), "per:title", &format!("s{s}"), &format!("f{f}"), c))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn survivors_antitone_and_list_union_superset(lines in pool_strategy()) {
            let registry = SlotRegistry::default();
            let cands = group_candidates(&lines).unwrap();
            let pool = pool_size(&cands);
            let union: BTreeSet<&FillKey> = union_ensemble(&cands, &registry).iter().map(|c| &c.key).collect();
            for k in 1..=pool {
                let now: BTreeSet<&FillKey> = voting_survivors(&cands, k).iter().map(|c| &c.key).collect();
                let next: BTreeSet<&FillKey> = voting_survivors(&cands, k + 1).iter().map(|c| &c.key).collect();
                prop_assert!(next.is_subset(&now));
                let voted: BTreeSet<&FillKey> = voting_ensemble(&cands, k, &registry).iter().map(|c| &c.key).collect();
                prop_assert!(voted.is_subset(&union));
            }
        }

        #[test]
        fn oracle_dominates_learned(train in pool_strategy(), test in pool_strategy(), judged in prop::collection::vec(any::<bool>(), 15)) {
            let registry = SlotRegistry::default();
            let key_for = |lines: &[ResponseLine]| -> Vec<KeyEntry> {
                lines.iter().filter_map(ResponseLine::fill_key).collect::<BTreeSet<_>>().into_iter()
                    .map(|k| {
                        let q: usize = k.query_id[1..].parse().unwrap();
                        let f: usize = k.fill_norm[1..].parse().unwrap();
                        KeyEntry { judgment: if judged[q * 5 + f] { Judgment::Correct } else { Judgment::Wrong }, key: k, origin: KeyOrigin::Pooled }
                    })
                    .collect()
            };
            let (train_c, test_c) = (group_candidates(&train).unwrap(), group_candidates(&test).unwrap());
            let (train_key, test_key) = (key_for(&train), key_for(&test));
            let learned = learn_threshold(&train_c, &train_key, &registry, ScoreMode::Official).unwrap();
            let (_, curve) = oracle_threshold(&test_c, &test_key, &registry, ScoreMode::Official).unwrap();
            let best = curve.iter().map(|p| p.f1).fold(0.0, f64::max);
            let at_learned = score_fills(keys(voting_ensemble(&test_c, learned, &registry)), &test_key, ScoreMode::Official, None).f1();
            prop_assert!(best >= at_learned);
        }

        #[test]
        fn list_slot_recall_non_increasing(lines in pool_strategy()) {
            let registry = SlotRegistry::default();
            let cands = group_candidates(&lines).unwrap();
            let key: Vec<KeyEntry> = cands.iter().enumerate()
                .map(|(i, c)| KeyEntry { key: c.key.clone(), judgment: if i % 2 == 0 { Judgment::Correct } else { Judgment::Wrong }, origin: KeyOrigin::Pooled })
                .collect();
            let curve = pr_curve(&cands, &key, &registry, pool_size(&cands), ScoreMode::Official);
            let union_recall = score_fills(keys(union_ensemble(&cands, &registry)), &key, ScoreMode::Official, None).recall();
            for pair in curve.windows(2) {
                prop_assert!(pair[1].recall <= pair[0].recall);
            }
            prop_assert!(curve.iter().all(|p| p.recall <= union_recall));
        }
    }
}
