//! Comparisons of the stacked ensemble against the baselines, learning
//! curves over training-set size, and incremental addition of systems.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{learn_threshold, oracle_threshold, union_ensemble, voting_ensemble};
use crate::error::{Error, Result};
use crate::ingest::{AliasTable, Diagnostics};
use crate::model::{Candidate, SlotRegistry};
use crate::pipeline::{labelled_candidates, roster_lines, run_pipeline, system_runs, Dataset, PipelineOptions};
use crate::scorer::{score, score_fills, ScoreMode};

/// Test-set F1 of the stacker and of each baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub stacker: f64,
    pub union: f64,
    /// Voting with the threshold learned on the training set.
    pub voting: f64,
    pub voting_k: usize,
    /// Voting with the threshold chosen on the test labels.
    pub oracle_voting: f64,
    pub oracle_k: usize,
    pub best_single: f64,
    pub best_single_run: String,
}

fn selection_f1(selected: &[&Candidate], test: &Dataset, mode: ScoreMode, aliases: Option<&AliasTable>) -> f64 {
    score_fills(selected.iter().map(|c| c.key.clone()), &test.key, mode, aliases).f1()
}

/// Runs the pipeline and every baseline on the same train/test split. All
/// baselines see the same systems as the stacker.
pub fn evaluate(
    train: &Dataset,
    test: &Dataset,
    options: &PipelineOptions,
    registry: &SlotRegistry,
    aliases: Option<&AliasTable>,
) -> Result<Comparison> {
    if test.key.is_empty() {
        return Err(Error::invalid("the test dataset has no key"));
    }
    let mode = options.score_mode;
    let output = run_pipeline(train, test, options, registry, aliases)?;
    let stacker = output.report.as_ref().map_or(0.0, |r| r.f1());

    let mut diagnostics = Diagnostics::default();
    let train_runs = system_runs(train, &options.unsupervised, registry)?;
    let roster: Vec<String> = train_runs.iter().map(|r| r.run_id.clone()).collect();
    let test_runs = system_runs(test, &options.unsupervised, registry)?;
    let train_candidates = labelled_candidates(&roster_lines(&train_runs, &roster, &mut diagnostics), &[])?;
    let test_candidates = labelled_candidates(&roster_lines(&test_runs, &roster, &mut diagnostics), &[])?;

    let union = selection_f1(&union_ensemble(&test_candidates, registry), test, mode, aliases);
    let voting_k = learn_threshold(&train_candidates, &train.key, registry, mode)?;
    let voting = selection_f1(&voting_ensemble(&test_candidates, voting_k, registry), test, mode, aliases);
    let (oracle_k, _) = oracle_threshold(&test_candidates, &test.key, registry, mode)?;
    let oracle_voting = selection_f1(&voting_ensemble(&test_candidates, oracle_k, registry), test, mode, aliases);

    let allowed: BTreeSet<&str> = roster.iter().map(String::as_str).collect();
    let mut best_single = 0.0;
    let mut best_single_run = String::new();
    for run in test_runs.iter().filter(|r| allowed.contains(r.run_id.as_str())) {
        let f1 = score(&run.lines, &test.key, mode, aliases).f1();
        if f1 > best_single || best_single_run.is_empty() {
            best_single = f1;
            best_single_run = run.run_id.clone();
        }
    }
    Ok(Comparison {
        stacker,
        union,
        voting,
        voting_k,
        oracle_voting,
        oracle_k,
        best_single,
        best_single_run,
    })
}

/// Copy of `dataset` restricted to the given queries and teams (`None`
/// keeps everything).
pub fn restrict(dataset: &Dataset, queries: Option<&BTreeSet<String>>, teams: Option<&BTreeSet<String>>) -> Dataset {
    let keep_query = |q: &str| queries.map_or(true, |set| set.contains(q));
    let mut out = dataset.clone();
    out.queries.retain(|q| keep_query(&q.id));
    out.key.retain(|e| keep_query(&e.key.query_id));
    out.runs.retain(|r| teams.map_or(true, |set| set.contains(&r.team_id)));
    for run in &mut out.runs {
        run.lines.retain(|l| keep_query(&l.query_id));
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// Fraction of training queries, or number of systems.
    pub x: f64,
    pub train_queries: usize,
    pub systems: usize,
    pub comparison: Comparison,
}

pub const CURVE_FRACTIONS: [f64; 10] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];

/// Stacker and baselines trained on growing random subsets of the training
/// queries. The subsets are nested.
pub fn learning_curve(
    train: &Dataset,
    test: &Dataset,
    options: &PipelineOptions,
    fractions: &[f64],
    registry: &SlotRegistry,
    aliases: Option<&AliasTable>,
) -> Result<Vec<CurvePoint>> {
    let mut ids: Vec<String> = train.queries.iter().map(|q| q.id.clone()).collect();
    ids.sort();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(options.seed));
    let systems = train.runs.iter().map(|r| &r.team_id).collect::<BTreeSet<_>>().len();
    let mut points = Vec::with_capacity(fractions.len());
    for &fraction in fractions {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::invalid(format!("training fraction {fraction} is outside (0, 1]")));
        }
        let n = ((ids.len() as f64 * fraction).round() as usize).clamp(1, ids.len().max(1));
        let subset: BTreeSet<String> = ids.iter().take(n).cloned().collect();
        let comparison = evaluate(&restrict(train, Some(&subset), None), test, options, registry, aliases)?;
        points.push(CurvePoint {
            x: fraction,
            train_queries: n,
            systems,
            comparison,
        });
    }
    Ok(points)
}

/// Stacker and baselines using the first `k` teams (in id order) for every
/// `k` from `min_systems` up to the full set.
pub fn incremental(
    train: &Dataset,
    test: &Dataset,
    options: &PipelineOptions,
    min_systems: usize,
    registry: &SlotRegistry,
    aliases: Option<&AliasTable>,
) -> Result<Vec<CurvePoint>> {
    let teams: Vec<String> = train
        .runs
        .iter()
        .map(|r| r.team_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut points = Vec::new();
    for k in min_systems.max(1)..=teams.len() {
        let subset: BTreeSet<String> = teams.iter().take(k).cloned().collect();
        let comparison = evaluate(
            &restrict(train, None, Some(&subset)),
            &restrict(test, None, Some(&subset)),
            options,
            registry,
            aliases,
        )?;
        points.push(CurvePoint {
            x: k as f64,
            train_queries: train.queries.len(),
            systems: k,
            comparison,
        });
    }
    Ok(points)
}

pub fn write_curve(points: &[CurvePoint]) -> String {
    let mut out = String::from("x,train_queries,systems,stacker,union,voting,voting_k,oracle_voting,oracle_k,best_single,best_single_run\n");
    for p in points {
        let c = &p.comparison;
        let _ = writeln!(
            out,
            "{},{},{},{:.6},{:.6},{:.6},{},{:.6},{},{:.6},{}",
            p.x,
            p.train_queries,
            p.systems,
            c.stacker,
            c.union,
            c.voting,
            c.voting_k,
            c.oracle_voting,
            c.oracle_k,
            c.best_single,
            c.best_single_run
        );
    }
    out
}

impl Comparison {
    pub fn to_text(&self) -> String {
        format!(
            "stacker        F1 {:.4}\nunion          F1 {:.4}\nvoting (k={})   F1 {:.4}\noracle (k={})   F1 {:.4}\nbest single    F1 {:.4} ({})\n",
            self.stacker,
            self.union,
            self.voting_k,
            self.voting,
            self.oracle_k,
            self.oracle_voting,
            self.best_single,
            self.best_single_run
        )
    }
}
