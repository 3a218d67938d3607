//! Seeded synthetic multi-system benchmark: queries, runs, keys, a corpus and
//! budgets for a training and a test "year".

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::aggregate::{estimate_budgets, BudgetDenominator};
use crate::error::{Error, Result};
use crate::ingest::{quantize_confidence, write_budget_table, write_key, write_queries, write_run_file, RunFile};
use crate::model::{
    normalize_fill, Arity, EntityType, FillKey, Judgment, KeyEntry, KeyOrigin, Provenance, Query, ResponseLine,
    SlotClass, SlotRegistry, Span,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    /// Run id; the team is the prefix before the first underscore.
    pub run_id: String,
    pub precision: f64,
    pub recall: f64,
    /// Standard deviation of the noise added to confidences.
    pub calibration_noise: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub systems: Vec<SystemSpec>,
    pub train_queries: usize,
    pub test_queries: usize,
    pub slots_per_query: usize,
    /// Chance that a correct extraction cites the gold document.
    pub alpha: f64,
    /// Standard deviation of offset jitter, in characters.
    pub sigma: f64,
    /// Chance that a spurious fill comes from the shared per-slot distractor
    /// pool rather than being unique to its system.
    pub distractor_correlation: f64,
    /// Chance that a shared distractor cites its own source document.
    pub distractor_alpha: f64,
    /// Distractor values per `(query, slot)`.
    pub distractor_pool: usize,
    /// Documents unrelated to any query.
    pub background_docs: usize,
    /// Relevant documents per query.
    pub docs_per_query: usize,
}

impl GeneratorConfig {
    /// Eight systems with precision rising from 0.35 to 0.80 as recall falls
    /// from 0.55 to 0.25, 1000 training and 1000 test queries.
    pub fn published(seed: u64) -> Self {
        let n = 8;
        let systems = (0..n)
            .map(|i| {
                let t = i as f64 / (n - 1) as f64;
                SystemSpec {
                    run_id: format!("sys{:02}_1", i + 1),
                    precision: 0.35 + 0.45 * t,
                    recall: 0.55 - 0.30 * t,
                    calibration_noise: 0.10,
                }
            })
            .collect();
        GeneratorConfig {
            seed,
            systems,
            train_queries: 1000,
            test_queries: 1000,
            slots_per_query: 4,
            alpha: 0.7,
            sigma: 3.0,
            distractor_correlation: 0.6,
            distractor_alpha: 0.3,
            distractor_pool: 3,
            background_docs: 500,
            docs_per_query: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must lie in [0, 1], got {v}")))
            }
        };
        if self.systems.is_empty() {
            return Err(Error::invalid("the generator needs at least one system"));
        }
        let mut ids = BTreeSet::new();
        for s in &self.systems {
            if !(s.precision > 0.0 && s.precision < 1.0) {
                return Err(Error::invalid(format!("{}: precision must lie in (0, 1)", s.run_id)));
            }
            if !(0.0..1.0).contains(&s.recall) {
                return Err(Error::invalid(format!("{}: recall must lie in [0, 1)", s.run_id)));
            }
            if !(s.calibration_noise >= 0.0 && s.calibration_noise.is_finite()) {
                return Err(Error::invalid(format!("{}: calibration noise must be non-negative", s.run_id)));
            }
            if s.run_id.is_empty() || s.run_id.contains(char::is_whitespace) || !ids.insert(&s.run_id) {
                return Err(Error::invalid(format!("run id {:?} is empty, has whitespace or repeats", s.run_id)));
            }
        }
        unit("alpha", self.alpha)?;
        unit("distractor_correlation", self.distractor_correlation)?;
        unit("distractor_alpha", self.distractor_alpha)?;
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid("sigma must be non-negative"));
        }
        if self.train_queries == 0 || self.test_queries == 0 || self.slots_per_query == 0 || self.docs_per_query == 0 {
            return Err(Error::invalid("query, slot and document counts must be positive"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: GeneratorConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("config serializes");
        text.push('\n');
        text
    }
}

/// One generated year: everything the pipeline reads.
#[derive(Clone, Debug, PartialEq)]
pub struct Bundle {
    pub queries: Vec<Query>,
    pub runs: Vec<RunFile>,
    pub key: Vec<KeyEntry>,
    /// `(doc_id, text)` sorted by id.
    pub corpus: Vec<(String, String)>,
    pub budgets: BTreeMap<String, f64>,
}

impl Bundle {
    /// Writes `runs/<run>.tsv`, `queries.xml`, `key.tsv`, `corpus/<doc>.txt`
    /// and `budgets.tsv` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let write = |path: &Path, text: &str| fs::write(path, text).map_err(|e| Error::io(path, e));
        for sub in ["runs", "corpus"] {
            let d = dir.join(sub);
            fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
        for run in &self.runs {
            write(&dir.join("runs").join(format!("{}.tsv", run.run_id)), &write_run_file(&run.lines))?;
        }
        write(&dir.join("queries.xml"), &write_queries(&self.queries))?;
        write(&dir.join("key.tsv"), &write_key(&self.key))?;
        write(&dir.join("budgets.tsv"), &write_budget_table(&self.budgets))?;
        for (doc, text) in &self.corpus {
            write(&dir.join("corpus").join(format!("{doc}.txt")), text)?;
        }
        Ok(())
    }
}

const SYLLABLES: [&str; 24] = [
    "ka", "lo", "mi", "ra", "ten", "vo", "su", "na", "del", "bri", "on", "za", "pe", "ul", "gar", "shi", "mo", "te",
    "ber", "an", "qui", "ros", "el", "fa",
];

fn word(rng: &mut ChaCha8Rng) -> String {
    let n = rng.gen_range(2..=3);
    (0..n).map(|_| *SYLLABLES.choose(rng).expect("non-empty")).collect()
}

fn capitalized(rng: &mut ChaCha8Rng) -> String {
    let w = word(rng);
    let mut c = w.chars();
    c.next().map(|f| f.to_ascii_uppercase().to_string() + c.as_str()).unwrap_or_default()
}

fn fill_text(rng: &mut ChaCha8Rng, class: SlotClass) -> String {
    match class {
        SlotClass::Entity => format!("{} {}", capitalized(rng), capitalized(rng)),
        SlotClass::Date => format!("{}-{:02}-{:02}", rng.gen_range(1900..2015), rng.gen_range(1..=12), rng.gen_range(1..=28)),
        SlotClass::Numeric => rng.gen_range(1..5000).to_string(),
        SlotClass::String => format!("{} {}", word(rng), word(rng)),
    }
}

/// A value with its source document and span.
#[derive(Clone, Debug)]
struct Source {
    text: String,
    doc: String,
    span: Span,
}

struct SlotTruth {
    slot: String,
    gold: Vec<Source>,
    distractors: Vec<Source>,
}

struct QueryTruth {
    query: Query,
    docs: Vec<String>,
    slots: Vec<SlotTruth>,
}

fn expected_gold(arity: Arity) -> f64 {
    match arity {
        Arity::Single => 0.85,
        Arity::List => 0.85 * 2.0,
    }
}

fn gold_count(rng: &mut ChaCha8Rng, arity: Arity) -> usize {
    if rng.gen::<f64>() >= 0.85 {
        return 0;
    }
    match arity {
        Arity::Single => 1,
        Arity::List => rng.gen_range(1..=3),
    }
}

const DOC_LENGTH: u64 = 2000;

fn random_span(rng: &mut ChaCha8Rng, len: usize) -> Span {
    let start = rng.gen_range(0..DOC_LENGTH);
    Span::new(start, start + len.max(1) as u64 - 1).expect("ordered")
}

fn jittered(rng: &mut ChaCha8Rng, span: Span, sigma: f64) -> Span {
    if sigma == 0.0 {
        return span;
    }
    let normal = Normal::new(0.0, sigma).expect("valid sigma");
    let start = (span.start as f64 + normal.sample(rng)).round().max(0.0) as u64;
    let end = (span.end as f64 + normal.sample(rng)).round().max(0.0) as u64;
    Span::new(start.min(end), start.max(end)).expect("ordered")
}

struct Generator<'a> {
    config: &'a GeneratorConfig,
    registry: SlotRegistry,
    rng: ChaCha8Rng,
    prefix: &'static str,
    background: Vec<String>,
}

impl Generator<'_> {
    fn truth(&mut self, index: usize) -> QueryTruth {
        let rng = &mut self.rng;
        let entity_type = if rng.gen_bool(0.5) { EntityType::Per } else { EntityType::Org };
        let id = format!("{}_{:04}", self.prefix, index + 1);
        let name = format!("{} {}", capitalized(rng), capitalized(rng));
        let docs: Vec<String> = (0..self.config.docs_per_query).map(|k| format!("{id}_R{k}")).collect();
        let available: Vec<&str> = self.registry.slots_for(entity_type).map(|s| s.name.as_str()).collect();
        let mut slots: Vec<String> = available
            .choose_multiple(rng, self.config.slots_per_query.min(available.len()))
            .map(|s| s.to_string())
            .collect();
        slots.sort();

        let mut truths = Vec::with_capacity(slots.len());
        for slot in &slots {
            let class = self.registry.class(slot);
            let mut used = BTreeSet::new();
            let mut fresh = |rng: &mut ChaCha8Rng| loop {
                let text = fill_text(rng, class);
                if used.insert(normalize_fill(&text)) {
                    break text;
                }
            };
            let source = |rng: &mut ChaCha8Rng, text: String, doc: String| {
                let span = random_span(rng, text.len());
                Source { text, doc, span }
            };
            let gold: Vec<Source> = (0..gold_count(rng, self.registry.arity(slot)))
                .map(|_| {
                    let text = fresh(rng);
                    let doc = docs.choose(rng).expect("docs").clone();
                    source(rng, text, doc)
                })
                .collect();
            let distractors: Vec<Source> = (0..self.config.distractor_pool)
                .map(|_| {
                    let text = fresh(rng);
                    let doc = if rng.gen_bool(0.5) || self.background.is_empty() {
                        docs.choose(rng).expect("docs").clone()
                    } else {
                        self.background.choose(rng).expect("background").clone()
                    };
                    source(rng, text, doc)
                })
                .collect();
            truths.push(SlotTruth {
                slot: slot.clone(),
                gold,
                distractors,
            });
        }
        QueryTruth {
            query: Query {
                id: id.clone(),
                name: name.clone(),
                entity_type,
                doc_id: format!("{id}_Q"),
                span: Span::new(0, name.len() as u64 - 1).expect("non-empty name"),
                slots,
            },
            docs,
            slots: truths,
        }
    }

    fn any_doc(&mut self, truth: &QueryTruth) -> String {
        if self.background.is_empty() || self.rng.gen_bool(0.5) {
            truth.docs.choose(&mut self.rng).expect("docs").clone()
        } else {
            self.background.choose(&mut self.rng).expect("background").clone()
        }
    }

    fn confidence(&mut self, correct: bool, noise: f64) -> f64 {
        let beta = if correct { Beta::new(5.0, 2.0) } else { Beta::new(2.0, 5.0) }.expect("valid beta");
        let mut c = beta.sample(&mut self.rng);
        if noise > 0.0 {
            c += Normal::new(0.0, noise).expect("valid noise").sample(&mut self.rng);
        }
        quantize_confidence(c.clamp(0.0, 1.0))
    }

    fn response(&self, truth: &QueryTruth, slot: &str, system: &SystemSpec, text: &str, doc: String, span: Span, conf: f64) -> ResponseLine {
        let prov = Provenance::new(doc, vec![span]).expect("valid provenance");
        ResponseLine::fill(&truth.query.id, slot, &system.run_id, prov.clone(), text, prov, conf).expect("valid response")
    }

    /// Lines of one system for one query.
    fn respond(&mut self, truth: &QueryTruth, system: &SystemSpec, lines: &mut Vec<ResponseLine>) {
        let config = self.config;
        for slot in &truth.slots {
            let before = lines.len();
            for gold in &slot.gold {
                if !self.rng.gen_bool(system.recall) {
                    continue;
                }
                let (doc, span) = if self.rng.gen_bool(config.alpha) {
                    (gold.doc.clone(), jittered(&mut self.rng, gold.span, config.sigma))
                } else {
                    let doc = self.any_doc(truth);
                    (doc, random_span(&mut self.rng, gold.text.len()))
                };
                let conf = self.confidence(true, system.calibration_noise);
                lines.push(self.response(truth, &slot.slot, system, &gold.text, doc, span, conf));
            }

            let arity = self.registry.arity(&slot.slot);
            // Spurious volume that makes the expected precision p. A system
            // with zero recall returns as many answers as a gold slot holds.
            let mean = if system.recall > 0.0 {
                system.recall * expected_gold(arity) * (1.0 - system.precision) / system.precision
            } else {
                expected_gold(arity) * (1.0 - system.precision)
            };
            let spurious = if mean > 0.0 {
                Poisson::new(mean).expect("positive mean").sample(&mut self.rng) as usize
            } else {
                0
            };
            let mut pool: Vec<&Source> = slot.distractors.iter().collect();
            let class = self.registry.class(&slot.slot);
            for _ in 0..spurious {
                let shared = !pool.is_empty() && self.rng.gen_bool(config.distractor_correlation);
                let (text, doc, span) = if shared {
                    let d = pool.remove(self.rng.gen_range(0..pool.len()));
                    if self.rng.gen_bool(config.distractor_alpha) {
                        (d.text.clone(), d.doc.clone(), jittered(&mut self.rng, d.span, config.sigma))
                    } else {
                        let doc = self.any_doc(truth);
                        (d.text.clone(), doc, random_span(&mut self.rng, d.text.len()))
                    }
                } else {
                    // Unique junk, tagged by system so it cannot collide with gold.
                    let text = format!("{} {}", fill_text(&mut self.rng, class), system.run_id.replace('_', ""));
                    let doc = self.any_doc(truth);
                    let span = random_span(&mut self.rng, text.len());
                    (text, doc, span)
                };
                let conf = self.confidence(false, system.calibration_noise);
                lines.push(self.response(truth, &slot.slot, system, &text, doc, span, conf));
            }
            if lines.len() == before {
                lines.push(ResponseLine::nil(&truth.query.id, &slot.slot, &system.run_id));
            }
        }
    }

    fn corpus(&mut self, truths: &[QueryTruth]) -> Vec<(String, String)> {
        let mut docs: BTreeMap<String, Vec<String>> = BTreeMap::new();
        let filler = |rng: &mut ChaCha8Rng, n: usize| -> Vec<String> { (0..n).map(|_| word(rng)).collect() };
        for truth in truths {
            let name = truth.query.name.to_lowercase();
            let mut q = vec![name.clone()];
            q.extend(filler(&mut self.rng, 40));
            docs.insert(truth.query.doc_id.clone(), q);
            for d in &truth.docs {
                let mut words = vec![name.clone()];
                words.extend(filler(&mut self.rng, 40));
                docs.insert(d.clone(), words);
            }
            for slot in &truth.slots {
                for s in slot.gold.iter().chain(&slot.distractors) {
                    if let Some(words) = docs.get_mut(&s.doc) {
                        words.push(s.text.clone());
                    }
                }
            }
        }
        for b in self.background.clone() {
            let words = filler(&mut self.rng, 60);
            docs.insert(b, words);
        }
        docs.into_iter().map(|(id, words)| (id, words.join(" ") + "\n")).collect()
    }

    fn bundle(&mut self, n_queries: usize) -> (Vec<Query>, Vec<RunFile>, Vec<KeyEntry>, Vec<(String, String)>) {
        let truths: Vec<QueryTruth> = (0..n_queries).map(|i| self.truth(i)).collect();
        let mut runs = Vec::with_capacity(self.config.systems.len());
        for system in &self.config.systems {
            let mut lines = Vec::new();
            for truth in &truths {
                self.respond(truth, system, &mut lines);
            }
            runs.push(RunFile::new(system.run_id.clone(), lines));
        }

        let responded: BTreeSet<FillKey> = runs.iter().flat_map(|r| r.lines.iter().filter_map(ResponseLine::fill_key)).collect();
        let mut key: BTreeMap<FillKey, KeyEntry> = BTreeMap::new();
        for k in &responded {
            key.insert(
                k.clone(),
                KeyEntry {
                    key: k.clone(),
                    judgment: Judgment::Wrong,
                    origin: KeyOrigin::Pooled,
                },
            );
        }
        for truth in &truths {
            for slot in &truth.slots {
                for gold in &slot.gold {
                    let k = FillKey::new(&truth.query.id, &slot.slot, normalize_fill(&gold.text));
                    let origin = if responded.contains(&k) { KeyOrigin::Pooled } else { KeyOrigin::Manual };
                    key.insert(
                        k.clone(),
                        KeyEntry {
                            key: k,
                            judgment: Judgment::Correct,
                            origin,
                        },
                    );
                }
            }
        }
        let corpus = self.corpus(&truths);
        let queries = truths.into_iter().map(|t| t.query).collect();
        (queries, runs, key.into_values().collect(), corpus)
    }
}

/// Generates the training and test bundles. Identical configs give
/// identical bundles.
pub fn generate(config: &GeneratorConfig) -> Result<(Bundle, Bundle)> {
    use rand::SeedableRng;
    config.validate()?;
    let registry = SlotRegistry::default();
    let mut years = Vec::with_capacity(2);
    for (stream, (prefix, n)) in [("SFA", config.train_queries), ("SFB", config.test_queries)].into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(stream as u64);
        let background = (0..config.background_docs).map(|i| format!("{prefix}_BG{i:05}")).collect();
        let mut generator = Generator {
            config,
            registry: registry.clone(),
            rng,
            prefix,
            background,
        };
        years.push(generator.bundle(n));
    }
    let (test, train) = (years.pop().expect("two years"), years.pop().expect("two years"));
    let train_lines: Vec<ResponseLine> = train.1.iter().flat_map(|r| r.lines.iter().cloned()).collect();
    let budgets = estimate_budgets(&train.2, &train_lines, &registry, &BTreeMap::new(), BudgetDenominator::AcrossAll)?;
    let make = |(queries, runs, key, corpus)| Bundle {
        queries,
        runs,
        key,
        corpus,
        budgets: budgets.clone(),
    };
    Ok((make(train), make(test)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provenance::{ProvenanceGroup, ProvenanceSource};
    use crate::scorer::{score, ScoreMode};

    fn small(seed: u64) -> GeneratorConfig {
        GeneratorConfig {
            train_queries: 60,
            test_queries: 40,
            background_docs: 20,
            ..GeneratorConfig::published(seed)
        }
    }

    #[test]
    fn deterministic() {
        let a = generate(&small(7)).unwrap();
        let b = generate(&small(7)).unwrap();
        assert_eq!(a, b);
        let c = generate(&small(8)).unwrap();
        assert_ne!(a.0.key, c.0.key);
    }

    #[test]
    fn validation() {
        let mut c = small(1);
        c.alpha = 1.5;
        assert!(generate(&c).is_err());
        let mut c = small(1);
        c.systems[0].precision = 0.0;
        assert!(c.validate().is_err());
        let mut c = small(1);
        c.systems[1].run_id = c.systems[0].run_id.clone();
        assert!(c.validate().is_err());
        let c = small(1);
        assert_eq!(GeneratorConfig::from_json(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn zero_recall_emits_only_spurious() {
        let mut c = small(3);
        c.systems[0].recall = 0.0;
        c.systems[0].precision = 0.5;
        let (train, _) = generate(&c).unwrap();
        let correct: BTreeSet<&FillKey> = train.key.iter().filter(|e| e.judgment == Judgment::Correct).map(|e| &e.key).collect();
        let run = &train.runs[0];
        assert!(run.lines.iter().filter_map(ResponseLine::fill_key).all(|k| !correct.contains(&k)));
        assert!(run.lines.iter().any(|l| !l.is_nil()));
    }

    #[test]
    fn exact_provenance_when_alpha_is_one() {
        let mut c = small(5);
        c.alpha = 1.0;
        c.sigma = 0.0;
        c.distractor_correlation = 0.0;
        let (train, _) = generate(&c).unwrap();
        let correct: BTreeSet<&FillKey> = train.key.iter().filter(|e| e.judgment == Judgment::Correct).map(|e| &e.key).collect();
        let mut by_key: BTreeMap<FillKey, BTreeSet<(String, Vec<Span>)>> = BTreeMap::new();
        for line in train.runs.iter().flat_map(|r| &r.lines) {
            if let (Some(k), Some(f)) = (line.fill_key(), line.as_fill()) {
                if correct.contains(&k) {
                    by_key.entry(k).or_default().insert((f.filler_provenance.doc_id().to_string(), f.filler_provenance.spans().to_vec()));
                }
            }
        }
        assert!(!by_key.is_empty());
        assert!(by_key.values().all(|cites| cites.len() == 1));

        // Slots answered only with one correct value: DPS is 1 and OP is at
        // its maximum (n - 1) / n.
        let mut per_slot: BTreeMap<(&str, &str), Vec<&ResponseLine>> = BTreeMap::new();
        for l in train.runs.iter().flat_map(|r| &r.lines).filter(|l| !l.is_nil()) {
            per_slot.entry((&l.query_id, &l.slot)).or_default().push(l);
        }
        let mut checked = 0;
        for group_lines in per_slot.values() {
            let keys: BTreeSet<FillKey> = group_lines.iter().filter_map(|l| l.fill_key()).collect();
            if keys.len() != 1 || !correct.contains(keys.iter().next().unwrap()) || group_lines.len() < 2 {
                continue;
            }
            let group = ProvenanceGroup::from_responses(group_lines.iter().copied(), ProvenanceSource::Filler).unwrap();
            let n = group_lines.len() as f64;
            for l in group_lines {
                let fill = l.fill_key().unwrap().fill_norm;
                assert_eq!(group.document_provenance_score(&l.run_id, &fill).unwrap(), 1.0);
                assert!((group.offset_provenance_score(&l.run_id, &fill).unwrap() - (n - 1.0) / n).abs() < 1e-12);
            }
            checked += 1;
        }
        assert!(checked > 0);
    }

    #[test]
    fn realized_rates_match_configuration() {
        let mut c = GeneratorConfig::published(11);
        c.test_queries = 10;
        let (train, _) = generate(&c).unwrap();
        for (run, spec) in train.runs.iter().zip(&c.systems) {
            let report = score(&run.lines, &train.key, ScoreMode::Official, None);
            assert!((report.precision() - spec.precision).abs() <= 0.05, "{} precision {}", run.run_id, report.precision());
            assert!((report.recall() - spec.recall).abs() <= 0.05, "{} recall {}", run.run_id, report.recall());
        }
    }

    #[test]
    fn bundles_are_well_formed() {
        let (train, test) = generate(&small(2)).unwrap();
        for bundle in [&train, &test] {
            assert_eq!(bundle.runs.len(), 8);
            let docs: BTreeSet<&str> = bundle.corpus.iter().map(|(d, _)| d.as_str()).collect();
            assert!(bundle.queries.iter().all(|q| docs.contains(q.doc_id.as_str())));
            let queries: BTreeSet<&str> = bundle.queries.iter().map(|q| q.id.as_str()).collect();
            assert!(bundle.key.iter().all(|e| queries.contains(e.key.query_id.as_str())));
            assert!(bundle.key.iter().any(|e| e.origin == KeyOrigin::Manual));
        }
        assert_eq!(train.budgets, test.budgets);
        assert!(train.queries[0].id.starts_with("SFA_") && test.queries[0].id.starts_with("SFB_"));
    }
}
