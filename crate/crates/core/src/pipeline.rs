//! End-to-end stacking: load a training and a test dataset, combine team
//! runs, featurize, train, predict, post-process and score. The stage
//! functions are public so that tools can run them one at a time.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::aggregate::{build_unsupervised_ensemble, combine_team_runs};
use crate::classifier::{
    featurize, label_candidates, predict, train, tune_lambda, write_feature_matrix, write_predictions, FeatureContext,
    FeatureGroup, FeatureLayout, FeatureVector, FeaturizeMode, LinearModel, Prediction, TrainOptions, DEFAULT_THRESHOLD,
    LAMBDA_GRID,
};
use crate::error::{Error, Result};
use crate::ingest::{
    build_corpus_index, parse_budget_table, parse_key, parse_queries, parse_run_file, quantize_confidence,
    write_run_file, CorpusIndex, Diagnostics, RunFile, RunParseOptions, TeamRoster,
};
use crate::ingest::AliasTable;
use crate::model::{group_candidates, Answer, Candidate, FillKey, KeyEntry, Query, ResponseLine, SlotRegistry};
use crate::postprocess::{postprocess_run, PostprocessOptions};
use crate::provenance::ProvenanceReductions;
use crate::scorer::{score, ScoreMode, ScoreReport};
use crate::similarity::{TfidfModel, TfidfOptions};
use crate::synth::Bundle;

/// Run id of the stacked ensemble's output.
pub const FINAL_RUN_ID: &str = "slotfuse";

/// Everything read from one dataset directory.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub queries: Vec<Query>,
    pub runs: Vec<RunFile>,
    /// Empty when the dataset has no key.
    pub key: Vec<KeyEntry>,
    pub corpus: Option<CorpusIndex>,
    pub budgets: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, Default)]
pub struct LoadOptions {
    pub run: RunParseOptions,
    /// Index `corpus/` (needed for the similarity features).
    pub corpus: bool,
    /// Per-run team overrides.
    pub teams: TeamRoster,
}

impl Dataset {
    /// Reads `runs/*.tsv`, `queries.xml`, and when present `key.tsv`,
    /// `budgets.tsv` and `corpus/`.
    pub fn load(dir: &Path, options: &LoadOptions, diagnostics: &mut Diagnostics) -> Result<Self> {
        let read = |path: &Path| fs::read_to_string(path).map_err(|e| Error::io(path, e));
        let runs_dir = dir.join("runs");
        let mut paths: Vec<PathBuf> = fs::read_dir(&runs_dir)
            .map_err(|e| Error::io(&runs_dir, e))?
            .map(|entry| entry.map(|e| e.path()).map_err(|e| Error::io(&runs_dir, e)))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "tsv"))
            .collect();
        paths.sort();
        let mut runs = Vec::with_capacity(paths.len());
        for path in &paths {
            let mut run = parse_run_file(path, &options.run, diagnostics)?;
            run.team_id = options.teams.team_of(&run.run_id).to_string();
            runs.push(run);
        }
        if runs.is_empty() {
            diagnostics.warn(format!("{} holds no run files", runs_dir.display()));
        }
        let queries = parse_queries(&read(&dir.join("queries.xml"))?, &options.run.registry)?;
        let key_path = dir.join("key.tsv");
        let key = if key_path.exists() { parse_key(&key_path)? } else { Vec::new() };
        let budget_path = dir.join("budgets.tsv");
        let budgets = if budget_path.exists() {
            parse_budget_table(&read(&budget_path)?, &budget_path.display().to_string())?
        } else {
            BTreeMap::new()
        };
        let corpus = if options.corpus { Some(build_corpus_index(&dir.join("corpus"))?) } else { None };
        Ok(Dataset {
            queries,
            runs,
            key,
            corpus,
            budgets,
        })
    }

    pub fn from_bundle(bundle: &Bundle, corpus: bool) -> Self {
        Dataset {
            queries: bundle.queries.clone(),
            runs: bundle.runs.clone(),
            key: bundle.key.clone(),
            corpus: corpus.then(|| CorpusIndex::from_texts(bundle.corpus.iter().map(|(d, t)| (d.as_str(), t.as_str())))),
            budgets: bundle.budgets.clone(),
        }
    }

    pub fn query_map(&self) -> BTreeMap<String, Query> {
        self.queries.iter().map(|q| (q.id.clone(), q.clone())).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineOptions {
    pub features: BTreeSet<FeatureGroup>,
    pub missing_indicators: bool,
    pub train: TrainOptions,
    /// Choose the penalty on a held-out split of the training queries.
    pub tune: bool,
    pub seed: u64,
    pub threshold: f64,
    pub reductions: ProvenanceReductions,
    pub tfidf: TfidfOptions,
    /// Teams fused into one unsupervised pseudo-system.
    pub unsupervised: Vec<String>,
    pub postprocess: PostprocessOptions,
    pub score_mode: ScoreMode,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            features: [FeatureGroup::Conf, FeatureGroup::Dps, FeatureGroup::Op, FeatureGroup::Rel].into(),
            missing_indicators: false,
            train: TrainOptions::default(),
            tune: false,
            seed: 0,
            threshold: DEFAULT_THRESHOLD,
            reductions: ProvenanceReductions::default(),
            tfidf: TfidfOptions::default(),
            unsupervised: Vec::new(),
            postprocess: PostprocessOptions {
                select_single: true,
                dedup: true,
            },
            score_mode: ScoreMode::Official,
        }
    }
}

impl PipelineOptions {
    pub fn needs_corpus(&self) -> bool {
        self.features.contains(&FeatureGroup::Qsim) || self.features.contains(&FeatureGroup::Psim)
    }
}

/// Team-combined runs of a dataset, plus the unsupervised ensemble when
/// `unsupervised` names any team. Sorted by run id.
pub fn system_runs(dataset: &Dataset, unsupervised: &[String], registry: &SlotRegistry) -> Result<Vec<RunFile>> {
    let mut by_team: BTreeMap<&str, Vec<RunFile>> = BTreeMap::new();
    for run in &dataset.runs {
        by_team.entry(&run.team_id).or_default().push(run.clone());
    }
    let unsup: BTreeSet<&str> = unsupervised.iter().map(String::as_str).collect();
    let mut supervised = Vec::new();
    let mut fused = Vec::new();
    for (team, runs) in by_team {
        let combined = combine_team_runs(team, &runs);
        if unsup.contains(team) {
            fused.push(combined);
        } else {
            supervised.push(combined);
        }
    }
    if !unsup.is_empty() {
        supervised.push(build_unsupervised_ensemble(&fused, &dataset.budgets, registry)?);
    }
    supervised.sort_by(|a, b| a.run_id.cmp(&b.run_id));
    Ok(supervised)
}

/// Lines of the roster systems; runs outside the roster are dropped with a
/// warning.
pub fn roster_lines(runs: &[RunFile], roster: &[String], diagnostics: &mut Diagnostics) -> Vec<ResponseLine> {
    let allowed: BTreeSet<&str> = roster.iter().map(String::as_str).collect();
    let mut lines = Vec::new();
    for run in runs {
        if allowed.contains(run.run_id.as_str()) {
            lines.extend(run.lines.iter().cloned());
        } else {
            diagnostics.warn(format!("system {} has no training history; its output is ignored", run.run_id));
        }
    }
    lines
}

/// Candidates from response lines, labelled when `key` is non-empty.
pub fn labelled_candidates(lines: &[ResponseLine], key: &[KeyEntry]) -> Result<Vec<Candidate>> {
    let mut candidates = group_candidates(lines)?;
    if !key.is_empty() {
        label_candidates(&mut candidates, key);
    }
    Ok(candidates)
}

/// Layout for a training set: roster, feature groups and the slots seen.
pub fn training_layout(
    roster: Vec<String>,
    features: &BTreeSet<FeatureGroup>,
    missing_indicators: bool,
    candidates: &[Candidate],
) -> FeatureLayout {
    let relations: BTreeSet<String> = candidates.iter().map(|c| c.slot().to_string()).collect();
    let mut layout = FeatureLayout::new(roster, features.clone(), relations.into_iter().collect());
    layout.missing_indicators = missing_indicators;
    layout
}

/// Feature vectors of a dataset's candidates under `layout`.
pub fn featurize_dataset(
    dataset: &Dataset,
    candidates: &[Candidate],
    layout: &FeatureLayout,
    options: &PipelineOptions,
    mode: FeaturizeMode,
    diagnostics: &mut Diagnostics,
) -> Result<Vec<FeatureVector>> {
    let queries = dataset.query_map();
    let tfidf = dataset.corpus.as_ref().map(|c| TfidfModel::new(c, options.tfidf));
    let context = FeatureContext {
        queries: Some(&queries),
        tfidf: tfidf.as_ref(),
        reductions: options.reductions,
    };
    featurize(candidates, layout, &context, mode, diagnostics)
}

/// Trains with the configured penalty, or the tuned one when requested.
pub fn fit_model(layout: &FeatureLayout, vectors: &[FeatureVector], options: &PipelineOptions) -> Result<LinearModel> {
    let mut train_options = options.train.clone();
    if options.tune {
        train_options.lambda = tune_lambda(layout, vectors, &options.train, &LAMBDA_GRID, options.threshold, options.seed)?;
        log::info!("selected penalty {}", train_options.lambda);
    }
    train(layout, vectors, &train_options)
}

/// Turns accepted predictions into post-processed output lines, adding a NIL
/// line for every queried slot left without a fill.
pub fn final_run(
    predictions: &[Prediction],
    candidates: &[Candidate],
    queries: &[Query],
    registry: &SlotRegistry,
    aliases: Option<&AliasTable>,
    options: PostprocessOptions,
) -> Result<Vec<ResponseLine>> {
    let by_key: BTreeMap<&FillKey, &Candidate> = candidates.iter().map(|c| (&c.key, c)).collect();
    let mut accepted = Vec::new();
    for p in predictions.iter().filter(|p| p.accepted) {
        let candidate = by_key
            .get(&p.key)
            .ok_or_else(|| Error::invalid(format!("prediction {} matches no candidate", p.key)))?;
        let mut line = candidate.best_response().clone();
        line.run_id = FINAL_RUN_ID.to_string();
        if let Answer::Fill(fill) = &mut line.answer {
            fill.confidence = quantize_confidence(p.probability);
        }
        accepted.push(line);
    }
    let lines = postprocess_run(&accepted, registry, aliases, options);
    Ok(complete_with_nil(lines, queries, FINAL_RUN_ID))
}

/// Adds a NIL line for every queried slot without a fill and sorts the run.
pub fn complete_with_nil(mut lines: Vec<ResponseLine>, queries: &[Query], run_id: &str) -> Vec<ResponseLine> {
    let answered: BTreeSet<(String, String)> = lines.iter().map(|l| (l.query_id.clone(), l.slot.clone())).collect();
    for q in queries {
        for slot in &q.slots {
            if !answered.contains(&(q.id.clone(), slot.clone())) {
                lines.push(ResponseLine::nil(&q.id, slot, run_id));
            }
        }
    }
    lines.sort_by_cached_key(|l| (l.query_id.clone(), l.slot.clone(), l.fill_key().map(|k| k.fill_norm)));
    lines
}

pub struct PipelineOutput {
    pub layout: FeatureLayout,
    pub model: LinearModel,
    pub train_vectors: Vec<FeatureVector>,
    pub test_vectors: Vec<FeatureVector>,
    pub predictions: Vec<Prediction>,
    pub final_lines: Vec<ResponseLine>,
    /// Present when the test dataset has a key.
    pub report: Option<ScoreReport>,
    pub diagnostics: Diagnostics,
}

pub const ARTIFACTS: [&str; 6] = [
    "model.json",
    "features_train.tsv",
    "features_test.tsv",
    "predictions.tsv",
    "final_run.tsv",
    "score.txt",
];

impl PipelineOutput {
    /// Writes the artifacts named in [`ARTIFACTS`] into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let report = self.report.as_ref().map(ScoreReport::to_text).unwrap_or_default();
        let contents = [
            self.model.to_json(),
            write_feature_matrix(&self.layout, &self.train_vectors),
            write_feature_matrix(&self.layout, &self.test_vectors),
            write_predictions(&self.predictions),
            write_run_file(&self.final_lines),
            report,
        ];
        let mut written = Vec::new();
        for (name, text) in ARTIFACTS.iter().zip(contents) {
            let path = dir.join(name);
            fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }
        Ok(written)
    }
}

/// Trains on `train_data` and evaluates on `test_data`.
pub fn run_pipeline(
    train_data: &Dataset,
    test_data: &Dataset,
    options: &PipelineOptions,
    registry: &SlotRegistry,
    aliases: Option<&AliasTable>,
) -> Result<PipelineOutput> {
    let mut diagnostics = Diagnostics::default();
    if train_data.key.is_empty() {
        return Err(Error::invalid("the training dataset has no key"));
    }
    let train_runs = system_runs(train_data, &options.unsupervised, registry)?;
    let roster: Vec<String> = train_runs.iter().map(|r| r.run_id.clone()).collect();
    if roster.is_empty() {
        return Err(Error::invalid("the training dataset has no runs"));
    }
    let train_lines = roster_lines(&train_runs, &roster, &mut diagnostics);
    let test_runs = system_runs(test_data, &options.unsupervised, registry)?;
    let test_lines = roster_lines(&test_runs, &roster, &mut diagnostics);

    let train_candidates = labelled_candidates(&train_lines, &train_data.key)?;
    let test_candidates = labelled_candidates(&test_lines, &test_data.key)?;
    let layout = training_layout(roster, &options.features, options.missing_indicators, &train_candidates);
    log::info!("feature layout: {layout}");
    let train_vectors = featurize_dataset(train_data, &train_candidates, &layout, options, FeaturizeMode::Train, &mut diagnostics)?;
    let test_vectors = featurize_dataset(test_data, &test_candidates, &layout, options, FeaturizeMode::Predict, &mut diagnostics)?;

    let model = fit_model(&layout, &train_vectors, options)?;
    log::info!("trained in {} iterations, objective {:.6}", model.iterations, model.final_objective);
    let predictions = predict(&model, &layout, &test_vectors, options.threshold)?;
    let final_lines = final_run(&predictions, &test_candidates, &test_data.queries, registry, aliases, options.postprocess)?;
    let report = (!test_data.key.is_empty()).then(|| score(&final_lines, &test_data.key, options.score_mode, aliases));
    Ok(PipelineOutput {
        layout,
        model,
        train_vectors,
        test_vectors,
        predictions,
        final_lines,
        report,
        diagnostics,
    })
}
