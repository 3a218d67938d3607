//! Unsupervised aggregation of systems without training history, budget
//! estimation and per-team run combining.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{data_lines, quantize_confidence, RunFile};
use crate::model::{normalize_fill, Arity, FillKey, Judgment, KeyEntry, ResponseLine, SlotRegistry};

pub const UNSUP_RUN_ID: &str = "UNSUP_ENSEMBLE";

/// One system's opinion of a value: raw confidence and weight.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub system: String,
    pub confidence: f64,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregationValue {
    pub fill_norm: String,
    pub observations: Vec<Observation>,
}

/// Values of one `(query, slot)` and the budget on the sum of their
/// aggregated confidences.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregationProblem {
    pub query_id: String,
    pub slot: String,
    pub values: Vec<AggregationValue>,
    pub budget: f64,
}

impl AggregationProblem {
    /// Convenience constructor from bare confidence lists with unit weights.
    pub fn uniform(budget: f64, values: &[&[f64]]) -> Self {
        AggregationProblem {
            query_id: String::new(),
            slot: String::new(),
            values: values
                .iter()
                .enumerate()
                .map(|(i, cs)| AggregationValue {
                    fill_norm: format!("v{i}"),
                    observations: cs
                        .iter()
                        .enumerate()
                        .map(|(j, &c)| Observation {
                            system: format!("s{j}"),
                            confidence: c,
                            weight: 1.0,
                        })
                        .collect(),
                })
                .collect(),
            budget,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.budget > 0.0 && self.budget.is_finite()) {
            return Err(Error::invalid(format!("budget must be positive, got {}", self.budget)));
        }
        if self.values.is_empty() {
            return Err(Error::invalid("aggregation problem without values"));
        }
        for value in &self.values {
            let total: f64 = value.observations.iter().map(|o| o.weight).sum();
            if value.observations.iter().any(|o| !(o.weight >= 0.0) || !(0.0..=1.0).contains(&o.confidence)) {
                return Err(Error::invalid(format!(
                    "value {:?}: confidences must lie in [0, 1] and weights be non-negative",
                    value.fill_norm
                )));
            }
            if !(total > 0.0) {
                return Err(Error::invalid(format!("value {:?} has zero total weight", value.fill_norm)));
            }
        }
        Ok(())
    }

    /// Total weight `W_i` and weighted mean `m_i` per value.
    pub fn moments(&self) -> Vec<(f64, f64)> {
        self.values
            .iter()
            .map(|v| {
                let w: f64 = v.observations.iter().map(|o| o.weight).sum();
                let m = v.observations.iter().map(|o| o.weight * o.confidence).sum::<f64>() / w;
                (w, m)
            })
            .collect()
    }

    /// `Σ_i Σ_j w_ij (x_i - c_ij)²`.
    pub fn objective(&self, x: &[f64]) -> f64 {
        self.values
            .iter()
            .zip(x)
            .map(|(v, &xi)| v.observations.iter().map(|o| o.weight * (xi - o.confidence).powi(2)).sum::<f64>())
            .sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Bound {
    Lower,
    Upper,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregatedOutput {
    pub x: Vec<f64>,
    /// Multiplier of the budget constraint; 0 when the constraint is slack.
    pub lambda: f64,
    /// Coordinates sitting at a box bound.
    pub clipped: Vec<(usize, Bound)>,
}

const BISECTION_TOLERANCE: f64 = 1e-10;

/// Exact minimizer of the budgeted weighted least-squares problem.
///
/// With `x_i(λ) = clip(m_i - λ / (2 W_i), 0, 1)` the sum is non-increasing in
/// `λ`; the multiplier is bracketed by bisection and then recomputed in closed
/// form on the set of unclipped coordinates.
pub fn solve_aggregation(problem: &AggregationProblem) -> Result<AggregatedOutput> {
    problem.validate()?;
    let moments = problem.moments();
    let at = |lambda: f64| -> Vec<f64> {
        moments
            .iter()
            .map(|&(w, m)| (m - lambda / (2.0 * w)).clamp(0.0, 1.0))
            .collect()
    };
    let budget = problem.budget;

    let unconstrained = at(0.0);
    if unconstrained.iter().sum::<f64>() <= budget {
        return Ok(finish(unconstrained, 0.0));
    }

    let (mut lo, mut hi) = (0.0, moments.iter().map(|&(w, m)| 2.0 * w * m).fold(0.0, f64::max));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let sum: f64 = at(mid).iter().sum();
        if (sum - budget).abs() <= BISECTION_TOLERANCE {
            lo = mid;
            hi = mid;
            break;
        }
        if sum > budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let lambda = 0.5 * (lo + hi);
    let approx = at(lambda);

    // Closed form on the free set identified by the bracket.
    let free: Vec<usize> = (0..approx.len()).filter(|&i| approx[i] > 0.0 && approx[i] < 1.0).collect();
    let upper = approx.iter().filter(|&&x| x >= 1.0).count() as f64;
    if !free.is_empty() {
        let num: f64 = free.iter().map(|&i| moments[i].1).sum::<f64>() - (budget - upper);
        let den: f64 = free.iter().map(|&i| 1.0 / (2.0 * moments[i].0)).sum();
        let exact = num / den;
        if exact >= 0.0 {
            let mut x = approx.clone();
            let mut consistent = true;
            for &i in &free {
                let (w, m) = moments[i];
                x[i] = m - exact / (2.0 * w);
                consistent &= (0.0..=1.0).contains(&x[i]);
            }
            for i in (0..x.len()).filter(|i| !free.contains(i)) {
                let (w, m) = moments[i];
                let unclipped = m - exact / (2.0 * w);
                consistent &= if approx[i] <= 0.0 { unclipped <= 0.0 } else { unclipped >= 1.0 };
            }
            if consistent {
                return Ok(finish(x, exact));
            }
        }
    }
    Ok(finish(approx, lambda))
}

fn finish(x: Vec<f64>, lambda: f64) -> AggregatedOutput {
    let clipped = x
        .iter()
        .enumerate()
        .filter_map(|(i, &v)| match v {
            v if v <= 0.0 => Some((i, Bound::Lower)),
            v if v >= 1.0 => Some((i, Bound::Upper)),
            _ => None,
        })
        .collect();
    AggregatedOutput { x, lambda, clipped }
}

// ---------------------------------------------------------------------------
// Budgets
// ---------------------------------------------------------------------------

/// Denominator `n` of the list-slot budget `n_c / n`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum BudgetDenominator {
    /// Total fills for the slot across all queried entities.
    #[default]
    AcrossAll,
    /// Mean fills per queried entity.
    PerEntity,
}

/// Two columns: new slot, sibling whose budget it inherits.
pub fn parse_slot_mapping(text: &str, source: &str) -> Result<BTreeMap<String, String>> {
    let mut mapping = BTreeMap::new();
    for (number, raw) in data_lines(text) {
        let cols: Vec<&str> = raw.split('\t').map(str::trim).collect();
        if cols.len() != 2 || cols.iter().any(|c| c.is_empty()) {
            return Err(Error::parse(source, number, "expected 2 columns: slot, sibling slot"));
        }
        if mapping.insert(cols[0].to_string(), cols[1].to_string()).is_some() {
            return Err(Error::parse(source, number, format!("slot {} mapped twice", cols[0])));
        }
    }
    Ok(mapping)
}

/// Budget of a slot: 1 for single-valued slots, the table entry otherwise,
/// and 1 when the table has nothing for it.
pub fn budget_for(budgets: &BTreeMap<String, f64>, registry: &SlotRegistry, slot: &str) -> f64 {
    match registry.arity(slot) {
        Arity::Single => 1.0,
        Arity::List => budgets.get(slot).copied().unwrap_or(1.0),
    }
}

/// Estimates per-slot budgets from a prior year's key and pooled responses.
///
/// `n_c` is the mean number of correct fills per queried entity; `n` counts
/// distinct responded fills, either in total or per entity. Slots listed in
/// `inverse` take their sibling's value.
pub fn estimate_budgets(
    key: &[KeyEntry],
    responses: &[ResponseLine],
    registry: &SlotRegistry,
    inverse: &BTreeMap<String, String>,
    denominator: BudgetDenominator,
) -> Result<BTreeMap<String, f64>> {
    for (slot, sibling) in inverse {
        if slot == sibling || inverse.contains_key(sibling) {
            return Err(Error::invalid(format!(
                "slot mapping {slot} -> {sibling} must point at a slot that is not itself mapped"
            )));
        }
    }

    let mut entities: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    let mut correct: BTreeMap<&str, usize> = BTreeMap::new();
    let mut fills: BTreeMap<&str, BTreeSet<FillKey>> = BTreeMap::new();
    for e in key {
        entities.entry(&e.key.slot).or_default().insert(&e.key.query_id);
        if e.judgment == Judgment::Correct {
            *correct.entry(&e.key.slot).or_default() += 1;
        }
    }
    for line in responses {
        if let Some(k) = line.fill_key() {
            entities.entry(&line.slot).or_default().insert(&line.query_id);
            fills.entry(&line.slot).or_default().insert(k);
        }
    }

    let mut budgets = BTreeMap::new();
    for (&slot, queried) in &entities {
        if registry.arity(slot) == Arity::Single {
            budgets.insert(slot.to_string(), 1.0);
            continue;
        }
        let q = queried.len() as f64;
        let n_c = correct.get(slot).copied().unwrap_or(0) as f64 / q;
        let total = fills.get(slot).map_or(0, BTreeSet::len) as f64;
        let across_all = if total > 0.0 { n_c / total } else { 0.0 };
        let per_entity = if total > 0.0 { n_c / (total / q) } else { 0.0 };
        log::debug!("budget {slot}: across-all {across_all:.6}, per-entity {per_entity:.6}");
        let b = match denominator {
            BudgetDenominator::AcrossAll => across_all,
            BudgetDenominator::PerEntity => per_entity,
        };
        budgets.insert(slot.to_string(), if b > 0.0 { b } else { 1.0 });
    }
    for (slot, sibling) in inverse {
        let b = budgets.get(sibling).copied().unwrap_or(1.0);
        budgets.insert(slot.clone(), b);
    }
    Ok(budgets)
}

// ---------------------------------------------------------------------------
// Team combining and the unsupervised ensemble
// ---------------------------------------------------------------------------

/// Merges the runs of one team: shared fills get the mean confidence and the
/// provenance of the most confident contributor; other fills pass through.
/// NIL is kept for `(query, slot)` pairs where no run has a fill.
pub fn combine_team_runs(team_id: &str, runs: &[RunFile]) -> RunFile {
    // key -> run -> best line of that run
    let mut by_key: BTreeMap<FillKey, BTreeMap<&str, &ResponseLine>> = BTreeMap::new();
    let mut nil: BTreeSet<(&str, &str)> = BTreeSet::new();
    for run in runs {
        for line in &run.lines {
            let Some(key) = line.fill_key() else {
                nil.insert((&line.query_id, &line.slot));
                continue;
            };
            let slot = by_key.entry(key).or_default();
            let keep = slot.get(run.run_id.as_str()).map_or(true, |old| line.confidence() > old.confidence());
            if keep {
                slot.insert(&run.run_id, line);
            }
        }
    }
    let mut lines = Vec::with_capacity(by_key.len() + nil.len());
    for contributors in by_key.values() {
        let mean = contributors.values().map(|l| l.confidence()).sum::<f64>() / contributors.len() as f64;
        let best = most_confident(contributors.iter().map(|(id, line)| (*id, *line)));
        let mut line = best.clone();
        line.run_id = team_id.to_string();
        if let crate::model::Answer::Fill(fill) = &mut line.answer {
            fill.confidence = quantize_confidence(mean);
        }
        lines.push(line);
    }
    let answered: BTreeSet<(&str, &str)> = by_key.keys().map(FillKey::query_slot).collect();
    for (query_id, slot) in nil.difference(&answered) {
        lines.push(ResponseLine::nil(*query_id, *slot, team_id));
    }
    lines.sort_by(|a, b| (&a.query_id, &a.slot, a.fill_key()).cmp(&(&b.query_id, &b.slot, b.fill_key())));
    RunFile {
        run_id: team_id.to_string(),
        team_id: team_id.to_string(),
        lines,
    }
}

/// Highest raw confidence; ties go to the smallest system id.
fn most_confident<'a>(items: impl Iterator<Item = (&'a str, &'a ResponseLine)>) -> &'a ResponseLine {
    let mut best: Option<(&str, &ResponseLine)> = None;
    for (id, line) in items {
        best = match best {
            Some((bid, bl)) if bl.confidence() > line.confidence() || (bl.confidence() == line.confidence() && bid <= id) => {
                Some((bid, bl))
            }
            _ => Some((id, line)),
        };
    }
    best.expect("at least one contributor").1
}

/// Fuses combined team runs into one pseudo-system with uniform weights.
/// Each value gets its aggregated confidence and the provenance of its most
/// confident contributor.
pub fn build_unsupervised_ensemble(
    teams: &[RunFile],
    budgets: &BTreeMap<String, f64>,
    registry: &SlotRegistry,
) -> Result<RunFile> {
    if teams.is_empty() {
        log::info!("no unsupervised teams configured; the unsupervised ensemble is empty");
        return Ok(RunFile::new(UNSUP_RUN_ID, Vec::new()));
    }
    // (query, slot) -> fill -> team -> line
    type Values<'a> = BTreeMap<String, BTreeMap<&'a str, &'a ResponseLine>>;
    let mut keys: BTreeMap<(String, String), Values> = BTreeMap::new();
    for team in teams {
        for line in &team.lines {
            let Some(fill) = line.as_fill() else { continue };
            let values = keys.entry((line.query_id.clone(), line.slot.clone())).or_default();
            let per_team = values.entry(normalize_fill(&fill.filler)).or_default();
            let keep = per_team.get(team.run_id.as_str()).map_or(true, |old| line.confidence() > old.confidence());
            if keep {
                per_team.insert(&team.run_id, line);
            }
        }
    }

    let keys: Vec<_> = keys.into_iter().collect();
    let solved: Vec<Result<Vec<ResponseLine>>> = keys
        .par_iter()
        .map(|((query_id, slot), values)| {
            let problem = AggregationProblem {
                query_id: query_id.clone(),
                slot: slot.clone(),
                values: values
                    .iter()
                    .map(|(fill_norm, teams)| AggregationValue {
                        fill_norm: fill_norm.clone(),
                        observations: teams
                            .iter()
                            .map(|(team, line)| Observation {
                                system: team.to_string(),
                                confidence: line.confidence(),
                                weight: 1.0,
                            })
                            .collect(),
                    })
                    .collect(),
                budget: budget_for(budgets, registry, slot),
            };
            let output = solve_aggregation(&problem)?;
            Ok(values
                .values()
                .zip(&output.x)
                .map(|(teams, &x)| {
                    let mut line = most_confident(teams.iter().map(|(id, l)| (*id, *l))).clone();
                    line.run_id = UNSUP_RUN_ID.to_string();
                    if let crate::model::Answer::Fill(fill) = &mut line.answer {
                        fill.confidence = quantize_confidence(x);
                    }
                    line
                })
                .collect())
        })
        .collect();
    let mut lines = Vec::new();
    for batch in solved {
        lines.extend(batch?);
    }
    Ok(RunFile::new(UNSUP_RUN_ID, lines))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{KeyOrigin, Provenance};
    use proptest::prelude::*;

    #[test]
    fn hand_kkt_fixture() {
        let out = solve_aggregation(&AggregationProblem::uniform(1.0, &[&[0.9, 0.8], &[0.9]])).unwrap();
        assert!((out.x[0] - 0.6).abs() <= 1e-9, "{:?}", out.x);
        assert!((out.x[1] - 0.4).abs() <= 1e-9);
        assert!((out.lambda - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn slack_and_identity() {
        let out = solve_aggregation(&AggregationProblem::uniform(1.0, &[&[0.3], &[0.4]])).unwrap();
        assert_eq!(out.x, vec![0.3, 0.4]);
        assert_eq!(out.lambda, 0.0);
        let single = solve_aggregation(&AggregationProblem::uniform(1.0, &[&[0.77]])).unwrap();
        assert_eq!(single.x, vec![0.77]);
    }

    #[test]
    fn invalid_problems() {
        assert!(solve_aggregation(&AggregationProblem::uniform(0.0, &[&[0.5]])).is_err());
        assert!(solve_aggregation(&AggregationProblem::uniform(1.0, &[])).is_err());
        assert!(solve_aggregation(&AggregationProblem::uniform(1.0, &[&[1.5]])).is_err());
        assert!(solve_aggregation(&AggregationProblem::uniform(1.0, &[&[]])).is_err());
    }

    #[test]
    fn clip_at_zero() {
        // Tight budget pushes the weakest value to the lower bound.
        let out = solve_aggregation(&AggregationProblem::uniform(0.5, &[&[0.9], &[0.1]])).unwrap();
        assert!((out.x[0] - 0.5).abs() < 1e-12);
        assert_eq!(out.x[1], 0.0);
        assert_eq!(out.clipped, vec![(1, Bound::Lower)]);
    }

    fn line(q: &str, slot: &str, run: &str, fill: &str, conf: f64, doc: &str) -> ResponseLine {
        let prov = Provenance::single(doc, 1, 5).unwrap();
        ResponseLine::fill(q, slot, run, prov.clone(), fill, prov, conf).unwrap()
    }

    #[test]
    fn budgets_from_prior_year() {
        let mut key = Vec::new();
        let mut responses = Vec::new();
        for q in 0..10 {
            let qid = format!("Q{q}");
            for f in 0..8 {
                let fill = format!("f{f}");
                responses.push(line(&qid, "per:children", "a_1", &fill, 0.5, "D"));
                key.push(KeyEntry {
                    key: FillKey::new(&qid, "per:children", &fill),
                    judgment: if f < 2 { Judgment::Correct } else { Judgment::Wrong },
                    origin: KeyOrigin::Pooled,
                });
            }
            responses.push(line(&qid, "per:age", "a_1", "40", 0.5, "D"));
        }
        let registry = SlotRegistry::default();
        let inverse = BTreeMap::from([("per:parents".to_string(), "per:children".to_string())]);
        let b = estimate_budgets(&key, &responses, &registry, &inverse, BudgetDenominator::AcrossAll).unwrap();
        assert!((b["per:children"] - 0.025).abs() < 1e-12);
        assert!((b["per:parents"] - 0.025).abs() < 1e-12);
        assert_eq!(b["per:age"], 1.0);
        let p = estimate_budgets(&key, &responses, &registry, &inverse, BudgetDenominator::PerEntity).unwrap();
        assert!((p["per:children"] - 0.25).abs() < 1e-12);

        let cyclic = BTreeMap::from([("a".to_string(), "b".to_string()), ("b".to_string(), "a".to_string())]);
        assert!(estimate_budgets(&key, &responses, &registry, &cyclic, BudgetDenominator::AcrossAll).is_err());
        assert_eq!(budget_for(&b, &registry, "per:title"), 1.0);
        assert_eq!(budget_for(&b, &registry, "per:date_of_birth"), 1.0);
    }

    #[test]
    fn slot_mapping_file() {
        let m = parse_slot_mapping("per:parents\tper:children\n", "m").unwrap();
        assert_eq!(m["per:parents"], "per:children");
        assert!(parse_slot_mapping("per:parents\n", "m").is_err());
        assert!(parse_slot_mapping("a\tb\na\tc\n", "m").is_err());
    }

    #[test]
    fn team_combining() {
        let a = RunFile::new(
            "t_1",
            vec![
                line("Q", "per:title", "t_1", "mayor", 0.6, "D1"),
                line("Q", "per:title", "t_1", "judge", 0.3, "D1"),
                ResponseLine::nil("Q", "per:age", "t_1"),
            ],
        );
        let b = RunFile::new("t_2", vec![line("Q", "per:title", "t_2", "Mayor", 0.8, "D2")]);
        let combined = combine_team_runs("t", &[a.clone(), b]);
        assert_eq!(combined.run_id, "t");
        assert_eq!(combined.lines.len(), 3);
        let mayor = combined.lines.iter().find(|l| l.fill_key().map_or(false, |k| k.fill_norm == "mayor")).unwrap();
        assert!((mayor.confidence() - 0.7).abs() < 1e-12);
        assert_eq!(mayor.as_fill().unwrap().filler_provenance.doc_id(), "D2");
        let judge = combined.lines.iter().find(|l| l.fill_key().map_or(false, |k| k.fill_norm == "judge")).unwrap();
        assert_eq!(judge.confidence(), 0.3);
        assert!(combined.lines.iter().any(|l| l.is_nil() && l.slot == "per:age"));

        assert_eq!(combine_team_runs("t", &[combined.clone()]), combined);

        let single = combine_team_runs("t", &[a.clone()]);
        assert_eq!(single.lines.len(), a.lines.len());
        assert!(single.lines.iter().all(|l| l.run_id == "t"));
    }

    #[test]
    fn unsupervised_ensemble() {
        let registry = SlotRegistry::default();
        let budgets = BTreeMap::new();
        let solo = RunFile::new("u1", vec![line("Q", "per:age", "u1", "40", 0.55, "D")]);
        let out = build_unsupervised_ensemble(&[solo], &budgets, &registry).unwrap();
        assert_eq!(out.run_id, UNSUP_RUN_ID);
        assert_eq!(out.lines[0].confidence(), 0.55);

        let teams = vec![
            RunFile::new("u1", vec![line("Q", "per:age", "u1", "40", 0.9, "D1")]),
            RunFile::new("u2", vec![line("Q", "per:age", "u2", "40", 0.8, "D2")]),
            RunFile::new("u3", vec![line("Q", "per:age", "u3", "41", 0.9, "D3")]),
        ];
        let out = build_unsupervised_ensemble(&teams, &budgets, &registry).unwrap();
        let conf = |fill: &str| out.lines.iter().find(|l| l.fill_key().unwrap().fill_norm == fill).unwrap().confidence();
        assert!((conf("40") - 0.6).abs() < 1e-6 && (conf("41") - 0.4).abs() < 1e-6);
        let forty = out.lines.iter().find(|l| l.fill_key().unwrap().fill_norm == "40").unwrap();
        assert_eq!(forty.as_fill().unwrap().filler_provenance.doc_id(), "D1");

        assert!(build_unsupervised_ensemble(&[], &budgets, &registry).unwrap().lines.is_empty());
    }

    /// Minimizes the objective over the 1e-3 grid with `Σ x ≤ B` by dynamic
    /// programming over budget units.
    pub(crate) fn grid_brute_force(problem: &AggregationProblem) -> Vec<f64> {
        const STEPS: usize = 1000;
        let units = ((problem.budget * STEPS as f64) + 1e-9).floor() as usize;
        let costs: Vec<Vec<f64>> = problem
            .values
            .iter()
            .map(|v| {
                (0..=STEPS)
                    .map(|t| {
                        let x = t as f64 / STEPS as f64;
                        v.observations.iter().map(|o| o.weight * (x - o.confidence).powi(2)).sum()
                    })
                    .collect()
            })
            .collect();
        let mut best = vec![0.0; units + 1];
        let mut choice: Vec<Vec<usize>> = Vec::new();
        for cost in &costs {
            let mut next = vec![f64::INFINITY; units + 1];
            let mut pick = vec![0; units + 1];
            for b in 0..=units {
                for t in 0..=b.min(STEPS) {
                    let c = cost[t] + best[b - t];
                    if c < next[b] {
                        next[b] = c;
                        pick[b] = t;
                    }
                }
            }
            best = next;
            choice.push(pick);
        }
        let mut x = vec![0.0; costs.len()];
        let mut b = units;
        for i in (0..costs.len()).rev() {
            let t = choice[i][b];
            x[i] = t as f64 / STEPS as f64;
            b -= t;
        }
        x
    }

    fn problem_strategy() -> impl Strategy<Value = AggregationProblem> {
        let value = prop::collection::vec((0.0f64..=1.0, 0.5f64..1.5), 1..=5);
        (prop::collection::vec(value, 1..=4), 1usize..=2000).prop_map(|(values, b)| AggregationProblem {
            query_id: "Q".into(),
            slot: "s".into(),
            budget: b as f64 / 1000.0,
            values: values
                .into_iter()
                .enumerate()
                .map(|(i, obs)| AggregationValue {
                    fill_norm: format!("v{i}"),
                    observations: obs
                        .into_iter()
                        .enumerate()
                        .map(|(j, (c, w))| Observation {
                            system: format!("s{j}"),
                            confidence: c,
                            weight: w,
                        })
                        .collect(),
                })
                .collect(),
        })
    }

    pub(crate) fn kkt_residual(problem: &AggregationProblem, out: &AggregatedOutput) -> f64 {
        let moments = problem.moments();
        let mut worst: f64 = 0.0;
        for (&(w, m), &x) in moments.iter().zip(&out.x) {
            if x > 0.0 && x < 1.0 {
                worst = worst.max((2.0 * w * (x - m) + out.lambda).abs());
            }
        }
        let sum: f64 = out.x.iter().sum();
        worst.max((out.lambda * (sum - problem.budget)).abs()).max((-out.lambda).max(0.0))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn matches_grid_and_kkt(problem in problem_strategy()) {
            let out = solve_aggregation(&problem).unwrap();
            prop_assert!(out.x.iter().sum::<f64>() <= problem.budget + 1e-9);
            prop_assert!(out.x.iter().all(|x| (0.0..=1.0).contains(x)));
            prop_assert!(kkt_residual(&problem, &out) <= 1e-8);
            let grid = grid_brute_force(&problem);
            for (a, b) in out.x.iter().zip(&grid) {
                prop_assert!((a - b).abs() <= 2e-3, "{:?} vs {:?}", out.x, grid);
            }
        }

        #[test]
        fn sum_non_increasing_in_lambda(problem in problem_strategy(), l1 in 0.0f64..5.0, l2 in 0.0f64..5.0) {
            let moments = problem.moments();
            let sum = |l: f64| moments.iter().map(|&(w, m)| (m - l / (2.0 * w)).clamp(0.0, 1.0)).sum::<f64>();
            let (lo, hi) = if l1 <= l2 { (l1, l2) } else { (l2, l1) };
            prop_assert!(sum(hi) <= sum(lo) + 1e-15);
        }

        #[test]
        fn ranking_preserved_for_equal_weight(
            values in prop::collection::vec(prop::collection::vec(0.0f64..=1.0, 3), 1..=4),
            b in 1usize..=2000,
        ) {
            // Equal total weight per value.
            let refs: Vec<&[f64]> = values.iter().map(Vec::as_slice).collect();
            let problem = AggregationProblem::uniform(b as f64 / 1000.0, &refs);
            let out = solve_aggregation(&problem).unwrap();
            let moments = problem.moments();
            for i in 0..moments.len() {
                for k in 0..moments.len() {
                    if moments[i].1 > moments[k].1 {
                        prop_assert!(out.x[i] >= out.x[k] - 1e-12);
                    }
                }
            }
        }

        #[test]
        fn combining_is_idempotent(confs in prop::collection::vec((0usize..4, 0usize..2, 0.0f64..=1.0), 1..20)) {
            let runs: Vec<RunFile> = (0..2)
                .map(|r| {
                    let run_id = format!("t_{r}");
                    let lines = confs
                        .iter()
                        .filter(|(_, run, _)| *run == r)
                        .map(|(f, _, c)| line("Q", "per:title", &run_id, &format!("f{f}"), quantize_confidence(*c), "D"))
                        .collect();
                    RunFile::new(run_id, lines)
                })
                .collect();
            let once = combine_team_runs("t", &runs);
            prop_assert_eq!(combine_team_runs("t", &[once.clone()]), once);
        }
    }
}
