//! Fixtures shared by the benchmarks.

use slotfuse::classifier::{parse_feature_groups, FeatureLayout, FeatureVector, FeaturizeMode};
use slotfuse::ingest::Diagnostics;
use slotfuse::model::{Candidate, SlotRegistry};
use slotfuse::pipeline::{featurize_dataset, labelled_candidates, roster_lines, system_runs, training_layout, Dataset, PipelineOptions};
use slotfuse::synth::{generate, GeneratorConfig};

/// A labelled training set from the published generator with `queries`
/// training queries.
pub struct TrainingFixture {
    pub dataset: Dataset,
    pub candidates: Vec<Candidate>,
    pub layout: FeatureLayout,
    pub vectors: Vec<FeatureVector>,
    pub options: PipelineOptions,
}

pub fn training_fixture(queries: usize, features: &str, corpus: bool) -> TrainingFixture {
    let config = GeneratorConfig {
        train_queries: queries,
        test_queries: 1,
        ..GeneratorConfig::published(1)
    };
    let (bundle, _) = generate(&config).expect("published config is valid");
    let dataset = Dataset::from_bundle(&bundle, corpus);
    let registry = SlotRegistry::default();
    let options = PipelineOptions {
        features: parse_feature_groups(features).expect("known feature groups"),
        ..Default::default()
    };
    let runs = system_runs(&dataset, &[], &registry).expect("no unsupervised teams");
    let roster: Vec<String> = runs.iter().map(|r| r.run_id.clone()).collect();
    let mut diagnostics = Diagnostics::default();
    let lines = roster_lines(&runs, &roster, &mut diagnostics);
    let candidates = labelled_candidates(&lines, &dataset.key).expect("generated lines group");
    let layout = training_layout(roster, &options.features, false, &candidates);
    let vectors = featurize_dataset(&dataset, &candidates, &layout, &options, FeaturizeMode::Train, &mut diagnostics)
        .expect("generated data featurizes");
    TrainingFixture {
        dataset,
        candidates,
        layout,
        vectors,
        options,
    }
}
