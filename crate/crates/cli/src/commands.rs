use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write as _;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};

use slotfuse::aggregate::{build_unsupervised_ensemble, combine_team_runs, estimate_budgets, parse_slot_mapping, BudgetDenominator};
use slotfuse::baselines::{
    learn_threshold, oracle_threshold, pool_size, pr_curve, union_ensemble, voting_ensemble, write_pr_curve, ORACLE_LABEL,
};
use slotfuse::classifier::{
    parse_feature_groups, predict, read_feature_matrix, read_predictions, write_feature_matrix, write_predictions,
    FeatureGroup, FeaturizeMode, LinearModel, TrainOptions,
};
use slotfuse::experiment::{evaluate, incremental, learning_curve, write_curve, CURVE_FRACTIONS};
use slotfuse::ingest::{
    load_alias_table, parse_budget_table, parse_run_file, parse_slot_classes, parse_team_roster, write_budget_table,
    parse_key, write_run_file, AliasTable, Diagnostics, RunParseOptions, TeamRoster,
};
use slotfuse::model::{Candidate, ResponseLine, SlotRegistry};
use slotfuse::pipeline::{
    complete_with_nil, featurize_dataset, final_run, fit_model, labelled_candidates, roster_lines, run_pipeline,
    system_runs, training_layout, Dataset, LoadOptions, PipelineOptions,
};
use slotfuse::postprocess::PostprocessOptions;
use slotfuse::provenance::ProvenanceReductions;
use slotfuse::scorer::{score, ScoreMode};
use slotfuse::similarity::TfidfOptions;
use slotfuse::synth::{generate, GeneratorConfig};

use crate::{
    AggregateArgs, AliasArgs, BaselineArgs, BaselineKind, Cli, Command, ExperimentArgs, FeatureArgs, FeaturizeArgs,
    FitArgs, InputArgs, PipelineArgs, PostArgs, PostprocessArgs, PredictArgs, ScoreArgs, SplitArgs, SynthArgs,
    TrainArgs, UsageError, ValidateArgs,
};

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Validate(a) => validate(a),
        Command::Featurize(a) => featurize(a),
        Command::Train(a) => train(a),
        Command::Predict(a) => predict_cmd(a),
        Command::Aggregate(a) => aggregate(a),
        Command::Baseline(a) => baseline(a),
        Command::Postprocess(a) => postprocess(a),
        Command::Score(a) => score_cmd(a),
        Command::Synth(a) => synth(a),
        Command::Experiment(a) => experiment(a),
        Command::Pipeline(a) => pipeline(a),
    }
}

fn usage(message: impl Into<String>) -> anyhow::Error {
    anyhow!(UsageError(message.into()))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

/// Writes to `out`, or standard output when absent.
fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
            }
            fs::write(path, text).with_context(|| format!("writing {}", path.display()))
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            match stdout.write_all(text.as_bytes()).and_then(|()| stdout.flush()) {
                Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
                other => other.map_err(Into::into),
            }
        }
    }
}

fn report(diagnostics: &Diagnostics) {
    for w in &diagnostics.warnings {
        log::warn!("{w}");
    }
}

fn team_list(list: &str) -> Vec<String> {
    list.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
}

fn registry(input: &InputArgs) -> Result<SlotRegistry> {
    let mut registry = SlotRegistry::default();
    if let Some(path) = &input.slot_classes {
        for (slot, class) in parse_slot_classes(&read(path)?, &path.display().to_string())? {
            registry.set_class(&slot, class)?;
        }
    }
    Ok(registry)
}

fn load_options(input: &InputArgs, registry: &SlotRegistry, corpus: bool) -> Result<LoadOptions> {
    let format = input.format.parse().map_err(|e| usage(format!("--format: {e}")))?;
    let teams = match &input.teams {
        Some(path) => parse_team_roster(&read(path)?, &path.display().to_string())?,
        None => TeamRoster::default(),
    };
    Ok(LoadOptions {
        run: RunParseOptions {
            format,
            strict: input.strict,
            registry: registry.clone(),
            ..RunParseOptions::default()
        },
        corpus,
        teams,
    })
}

fn load_dataset(dir: &Path, options: &LoadOptions) -> Result<Dataset> {
    let mut diagnostics = Diagnostics::default();
    let dataset = Dataset::load(dir, options, &mut diagnostics).with_context(|| format!("loading {}", dir.display()))?;
    report(&diagnostics);
    Ok(dataset)
}

fn aliases(args: &AliasArgs) -> Result<Option<AliasTable>> {
    args.aliases
        .as_deref()
        .map(|path| load_alias_table(path, args.alias_limit))
        .transpose()
        .map_err(Into::into)
}

fn score_mode(mode: &str) -> Result<ScoreMode> {
    mode.parse().map_err(|e| usage(format!("--mode: {e}")))
}

fn train_options(fit: &FitArgs) -> Result<TrainOptions> {
    Ok(TrainOptions {
        lambda: fit.lambda,
        loss: fit.loss.parse().map_err(|e| usage(format!("--loss: {e}")))?,
        max_iterations: fit.max_iterations,
        tolerance: fit.tolerance,
        standardize: fit.standardize,
    })
}

fn postprocess_options(post: &PostArgs) -> PostprocessOptions {
    PostprocessOptions {
        select_single: !post.no_select_single,
        dedup: !post.no_dedup,
    }
}

/// Options shared by featurize, the pipeline and experiments. Training
/// options are left at their defaults unless `fit` is given.
fn pipeline_options(features: &FeatureArgs, fit: Option<&FitArgs>, threshold: f64, post: Option<&PostArgs>, mode: &str) -> Result<PipelineOptions> {
    let mut options = PipelineOptions {
        features: parse_feature_groups(&features.features).map_err(|e| usage(format!("--features: {e}")))?,
        missing_indicators: features.missing_indicators,
        threshold,
        reductions: ProvenanceReductions {
            dps: features.dps_reduction.parse().map_err(|e| usage(format!("--dps-reduction: {e}")))?,
            op: features.op_reduction.parse().map_err(|e| usage(format!("--op-reduction: {e}")))?,
        },
        tfidf: TfidfOptions {
            smooth_idf: features.tfidf_smooth,
            log_tf: features.tfidf_log_tf,
        },
        unsupervised: team_list(&features.unsupervised),
        score_mode: score_mode(mode)?,
        ..PipelineOptions::default()
    };
    if let Some(fit) = fit {
        options.train = train_options(fit)?;
        options.tune = fit.tune;
        options.seed = fit.seed;
    }
    if let Some(post) = post {
        options.postprocess = postprocess_options(post);
    }
    Ok(options)
}

fn validate(args: ValidateArgs) -> Result<()> {
    let registry = registry(&args.input)?;
    let options = load_options(&args.input, &registry, args.corpus)?;
    let mut diagnostics = Diagnostics::default();
    let dataset = Dataset::load(&args.data, &options, &mut diagnostics)?;
    let queries: BTreeSet<&str> = dataset.queries.iter().map(|q| q.id.as_str()).collect();
    for run in &dataset.runs {
        let unknown: BTreeSet<&str> = run
            .lines
            .iter()
            .map(|l| l.query_id.as_str())
            .filter(|q| !queries.contains(q))
            .collect();
        if !unknown.is_empty() {
            diagnostics.warn(format!("run {} answers {} unknown queries", run.run_id, unknown.len()));
        }
    }
    for entry in &dataset.key {
        if !queries.contains(entry.key.query_id.as_str()) {
            diagnostics.warn(format!("key entry {} names an unknown query", entry.key));
        }
    }
    let lines: usize = dataset.runs.iter().map(|r| r.lines.len()).sum();
    let teams: BTreeSet<&str> = dataset.runs.iter().map(|r| r.team_id.as_str()).collect();
    let mut out = String::new();
    out.push_str(&format!("queries\t{}\n", dataset.queries.len()));
    out.push_str(&format!("runs\t{}\n", dataset.runs.len()));
    out.push_str(&format!("teams\t{}\n", teams.len()));
    out.push_str(&format!("response_lines\t{lines}\n"));
    out.push_str(&format!("key_entries\t{}\n", dataset.key.len()));
    out.push_str(&format!("budgets\t{}\n", dataset.budgets.len()));
    if let Some(corpus) = &dataset.corpus {
        out.push_str(&format!("documents\t{}\n", corpus.doc_count()));
    }
    out.push_str(&format!("warnings\t{}\n", diagnostics.warnings.len()));
    for w in &diagnostics.warnings {
        out.push_str(&format!("warning\t{w}\n"));
    }
    emit(None, &out)
}

fn featurize(args: FeaturizeArgs) -> Result<()> {
    let registry = registry(&args.input)?;
    let options = pipeline_options(&args.features, None, 0.5, None, "official")?;
    let mut diagnostics = Diagnostics::default();
    let layout = match &args.layout {
        Some(path) => Some(read_feature_matrix(&read(path)?, &path.display().to_string())?.0),
        None => None,
    };
    let needs_corpus = match &layout {
        Some(l) => l.has(FeatureGroup::Qsim) || l.has(FeatureGroup::Psim),
        None => options.needs_corpus(),
    };
    let dataset = load_dataset(&args.data, &load_options(&args.input, &registry, needs_corpus)?)?;
    let runs = system_runs(&dataset, &options.unsupervised, &registry)?;
    let (layout, mode) = match layout {
        Some(layout) => (layout, FeaturizeMode::Predict),
        None => {
            let roster: Vec<String> = runs.iter().map(|r| r.run_id.clone()).collect();
            if roster.is_empty() {
                bail!("{} holds no runs", args.data.display());
            }
            let lines = roster_lines(&runs, &roster, &mut diagnostics);
            let candidates = labelled_candidates(&lines, &dataset.key)?;
            (
                training_layout(roster, &options.features, options.missing_indicators, &candidates),
                FeaturizeMode::Train,
            )
        }
    };
    let lines = roster_lines(&runs, &layout.roster, &mut diagnostics);
    let candidates = labelled_candidates(&lines, &dataset.key)?;
    let vectors = featurize_dataset(&dataset, &candidates, &layout, &options, mode, &mut diagnostics)?;
    report(&diagnostics);
    log::info!("{} candidates, layout {layout}", vectors.len());
    emit(args.out.as_deref(), &write_feature_matrix(&layout, &vectors))
}

fn train(args: TrainArgs) -> Result<()> {
    let (layout, vectors) = read_feature_matrix(&read(&args.matrix)?, &args.matrix.display().to_string())?;
    let options = PipelineOptions {
        train: train_options(&args.fit)?,
        tune: args.fit.tune,
        seed: args.fit.seed,
        threshold: args.threshold,
        ..PipelineOptions::default()
    };
    let model = fit_model(&layout, &vectors, &options)?;
    log::info!("trained in {} iterations, objective {:.6}", model.iterations, model.final_objective);
    emit(args.out.as_deref(), &model.to_json())
}

fn predict_cmd(args: PredictArgs) -> Result<()> {
    let model = LinearModel::from_json(&read(&args.model)?)?;
    let (layout, vectors) = read_feature_matrix(&read(&args.matrix)?, &args.matrix.display().to_string())?;
    let predictions = predict(&model, &layout, &vectors, args.threshold)?;
    log::info!("{} of {} candidates accepted", predictions.iter().filter(|p| p.accepted).count(), predictions.len());
    emit(args.out.as_deref(), &write_predictions(&predictions))
}

fn aggregate(args: AggregateArgs) -> Result<()> {
    let registry = registry(&args.input)?;
    let options = load_options(&args.input, &registry, false)?;
    let dataset = load_dataset(&args.data, &options)?;
    let budgets = if let Some(path) = &args.budgets {
        parse_budget_table(&read(path)?, &path.display().to_string())?
    } else if let Some(dir) = &args.estimate_from {
        let source = load_dataset(dir, &options)?;
        if source.key.is_empty() {
            bail!("{} has no key to estimate budgets from", dir.display());
        }
        let mapping = match &args.slot_mapping {
            Some(path) => parse_slot_mapping(&read(path)?, &path.display().to_string())?,
            None => BTreeMap::new(),
        };
        let denominator = if args.per_entity { BudgetDenominator::PerEntity } else { BudgetDenominator::AcrossAll };
        let lines: Vec<ResponseLine> = source.runs.iter().flat_map(|r| r.lines.iter().cloned()).collect();
        let budgets = estimate_budgets(&source.key, &lines, &registry, &mapping, denominator)?;
        if let Some(path) = &args.budgets_out {
            emit(Some(path), &write_budget_table(&budgets))?;
        }
        budgets
    } else {
        if dataset.budgets.is_empty() {
            log::warn!("no budget table; every slot gets a budget of 1");
        }
        dataset.budgets.clone()
    };
    let wanted: Option<BTreeSet<String>> = args.unsupervised.as_deref().map(|s| team_list(s).into_iter().collect());
    let mut by_team: BTreeMap<&str, Vec<_>> = BTreeMap::new();
    for run in &dataset.runs {
        if wanted.as_ref().map_or(true, |w| w.contains(&run.team_id)) {
            by_team.entry(run.team_id.as_str()).or_default().push(run.clone());
        }
    }
    if let Some(w) = &wanted {
        for team in w.iter().filter(|t| !by_team.contains_key(t.as_str())) {
            log::warn!("team {team} has no runs in {}", args.data.display());
        }
    }
    let teams: Vec<_> = by_team.iter().map(|(team, runs)| combine_team_runs(team, runs)).collect();
    let ensemble = build_unsupervised_ensemble(&teams, &budgets, &registry)?;
    emit(args.out.as_deref(), &write_run_file(&ensemble.lines))
}

fn selection_lines(selected: &[&Candidate], run_id: &str) -> Vec<ResponseLine> {
    selected
        .iter()
        .map(|c| {
            let mut line = c.best_response().clone();
            line.run_id = run_id.to_string();
            line
        })
        .collect()
}

fn baseline(args: BaselineArgs) -> Result<()> {
    let registry = registry(&args.input)?;
    let mode = score_mode(&args.mode)?;
    let options = load_options(&args.input, &registry, false)?;
    let dataset = load_dataset(&args.data, &options)?;
    let unsupervised = team_list(&args.unsupervised);
    let runs = system_runs(&dataset, &unsupervised, &registry)?;
    let lines: Vec<ResponseLine> = runs.iter().flat_map(|r| r.lines.iter().cloned()).collect();
    let candidates = labelled_candidates(&lines, &[])?;

    let (selected, run_id, curve_label) = match args.kind {
        BaselineKind::Union => {
            if args.k.is_some() || args.learn || args.oracle {
                return Err(usage("--k, --learn and --oracle apply to `baseline vote` only"));
            }
            (union_ensemble(&candidates, &registry), "union".to_string(), None)
        }
        BaselineKind::Vote => {
            let (k, label) = if let Some(k) = args.k {
                if k == 0 {
                    return Err(usage("--k must be at least 1"));
                }
                (k, None)
            } else if args.learn {
                let train_dir = args.train.as_deref().expect("clap requires --train with --learn");
                let train = load_dataset(train_dir, &options)?;
                let train_runs = system_runs(&train, &unsupervised, &registry)?;
                let train_lines: Vec<ResponseLine> = train_runs.iter().flat_map(|r| r.lines.iter().cloned()).collect();
                let train_candidates = labelled_candidates(&train_lines, &[])?;
                (learn_threshold(&train_candidates, &train.key, &registry, mode)?, None)
            } else if args.oracle {
                if dataset.key.is_empty() {
                    bail!("--oracle needs a key in {}", args.data.display());
                }
                eprintln!("{ORACLE_LABEL}");
                (oracle_threshold(&candidates, &dataset.key, &registry, mode)?.0, Some(ORACLE_LABEL))
            } else {
                return Err(usage("`baseline vote` needs one of --k, --learn or --oracle"));
            };
            log::info!("voting threshold k = {k}");
            let run_id = if args.oracle { format!("vote_k{k}_oracle") } else { format!("vote_k{k}") };
            (voting_ensemble(&candidates, k, &registry), run_id, label)
        }
    };
    if let Some(path) = &args.curve {
        if dataset.key.is_empty() {
            bail!("--curve needs a key in {}", args.data.display());
        }
        let curve = pr_curve(&candidates, &dataset.key, &registry, pool_size(&candidates), mode);
        emit(Some(path), &write_pr_curve(&curve, curve_label))?;
    }
    let out_lines = complete_with_nil(selection_lines(&selected, &run_id), &dataset.queries, &run_id);
    if !dataset.key.is_empty() {
        log::info!("{run_id}: F1 {:.4}", score(&out_lines, &dataset.key, mode, None).f1());
    }
    emit(args.out.as_deref(), &write_run_file(&out_lines))
}

fn postprocess(args: PostprocessArgs) -> Result<()> {
    let registry = registry(&args.input)?;
    let dataset = load_dataset(&args.data, &load_options(&args.input, &registry, false)?)?;
    let model = LinearModel::from_json(&read(&args.model)?)?;
    let predictions = read_predictions(&read(&args.predictions)?, &args.predictions.display().to_string())?;
    let aliases = aliases(&args.aliases)?;
    let mut diagnostics = Diagnostics::default();
    let runs = system_runs(&dataset, &team_list(&args.unsupervised), &registry)?;
    let lines = roster_lines(&runs, &model.layout.roster, &mut diagnostics);
    report(&diagnostics);
    let candidates = labelled_candidates(&lines, &[])?;
    let lines = final_run(
        &predictions,
        &candidates,
        &dataset.queries,
        &registry,
        aliases.as_ref(),
        postprocess_options(&args.post),
    )?;
    emit(args.out.as_deref(), &write_run_file(&lines))
}

fn score_cmd(args: ScoreArgs) -> Result<()> {
    let registry = registry(&args.input)?;
    let options = load_options(&args.input, &registry, false)?;
    let mode = score_mode(&args.mode)?;
    let mut diagnostics = Diagnostics::default();
    let run = parse_run_file(&args.run, &options.run, &mut diagnostics)?;
    report(&diagnostics);
    let key = parse_key(&args.key)?;
    let aliases = aliases(&args.aliases)?;
    let report = score(&run.lines, &key, mode, aliases.as_ref());
    let text = if args.csv { report.to_csv() } else { report.to_text() };
    emit(args.out.as_deref(), &text)
}

fn synth(args: SynthArgs) -> Result<()> {
    let mut config = match &args.generator {
        Some(path) => {
            let mut c = GeneratorConfig::from_json(&read(path)?)?;
            c.seed = args.seed;
            c
        }
        None => GeneratorConfig::published(args.seed),
    };
    if let Some(n) = args.train_queries {
        config.train_queries = n;
    }
    if let Some(n) = args.test_queries {
        config.test_queries = n;
    }
    if let Some(n) = args.background_docs {
        config.background_docs = n;
    }
    config.validate().map_err(|e| usage(e.to_string()))?;
    let (train, test) = generate(&config)?;
    train.write(&args.out.join("train"))?;
    test.write(&args.out.join("test"))?;
    emit(Some(&args.out.join("generator.json")), &config.to_json())?;
    log::info!("wrote {}/train and {}/test", args.out.display(), args.out.display());
    Ok(())
}

struct Split {
    train: Dataset,
    test: Dataset,
    options: PipelineOptions,
    registry: SlotRegistry,
    aliases: Option<AliasTable>,
}

fn load_split(args: &SplitArgs) -> Result<Split> {
    let registry = registry(&args.input)?;
    let options = pipeline_options(&args.features, Some(&args.fit), args.threshold, Some(&args.post), &args.mode)?;
    let load = load_options(&args.input, &registry, options.needs_corpus())?;
    let train = load_dataset(&args.data.join(&args.train_year), &load)?;
    let test = load_dataset(&args.data.join(&args.test_year), &load)?;
    Ok(Split {
        train,
        test,
        options,
        registry,
        aliases: aliases(&args.aliases)?,
    })
}

fn experiment(args: ExperimentArgs) -> Result<()> {
    let s = load_split(&args.split)?;
    let text = if args.learning_curve {
        write_curve(&learning_curve(&s.train, &s.test, &s.options, &CURVE_FRACTIONS, &s.registry, s.aliases.as_ref())?)
    } else if args.incremental {
        write_curve(&incremental(&s.train, &s.test, &s.options, args.min_systems, &s.registry, s.aliases.as_ref())?)
    } else {
        evaluate(&s.train, &s.test, &s.options, &s.registry, s.aliases.as_ref())?.to_text()
    };
    emit(args.out.as_deref(), &text)
}

fn pipeline(args: PipelineArgs) -> Result<()> {
    let s = load_split(&args.split)?;
    let output = run_pipeline(&s.train, &s.test, &s.options, &s.registry, s.aliases.as_ref())?;
    report(&output.diagnostics);
    for path in output.write(&args.out)? {
        log::info!("wrote {}", path.display());
    }
    if let Some(report) = &output.report {
        emit(None, &report.to_text())?;
    }
    Ok(())
}
