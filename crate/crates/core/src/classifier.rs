//! The stacked meta-classifier: feature assembly, an L1-regularized linear
//! model trained by proximal gradient descent, and prediction.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::Diagnostics;
use crate::model::{Candidate, FillKey, Judgment, KeyEntry, Query};
use crate::provenance::{ProvenanceGroup, ProvenanceReductions, ProvenanceSource};
use crate::similarity::{cross_provenance_similarity, query_doc_similarity, TfidfModel};

pub const MODEL_FORMAT: &str = "slotfuse-linear-model/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FeatureGroup {
    /// Per-system confidence.
    Conf,
    /// Per-system query-document similarity.
    Qsim,
    /// Per-system cross-provenance document similarity.
    Psim,
    /// Document provenance score (filler provenance).
    Dps,
    /// Offset provenance score (filler provenance).
    Op,
    /// Document and offset scores from the relation provenance.
    RelProv,
    /// One-hot slot name.
    Rel,
}

impl FeatureGroup {
    pub const ALL: [FeatureGroup; 7] = [
        FeatureGroup::Conf,
        FeatureGroup::Qsim,
        FeatureGroup::Psim,
        FeatureGroup::Dps,
        FeatureGroup::Op,
        FeatureGroup::RelProv,
        FeatureGroup::Rel,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            FeatureGroup::Conf => "conf",
            FeatureGroup::Qsim => "qsim",
            FeatureGroup::Psim => "psim",
            FeatureGroup::Dps => "dps",
            FeatureGroup::Op => "op",
            FeatureGroup::RelProv => "relprov",
            FeatureGroup::Rel => "rel",
        }
    }
}

impl FromStr for FeatureGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FeatureGroup::ALL
            .into_iter()
            .find(|g| g.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::invalid(format!("unknown feature group {s:?}")))
    }
}

/// Parses a comma-separated feature list such as `conf,dps,op,rel`.
pub fn parse_feature_groups(list: &str) -> Result<BTreeSet<FeatureGroup>> {
    let groups: BTreeSet<FeatureGroup> = list
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect::<Result<_>>()?;
    if groups.is_empty() {
        return Err(Error::invalid("empty feature list"));
    }
    Ok(groups)
}

pub fn format_feature_groups(groups: &BTreeSet<FeatureGroup>) -> String {
    groups.iter().map(FeatureGroup::name).collect::<Vec<_>>().join(",")
}

/// Column layout of the feature matrix.
///
/// Columns appear in this order: `conf:<sys>`, `qsim:<sys>`, `psim:<sys>`,
/// `present:<sys>` (missing-system indicators), `dps`, `op`, `relprov_dps`,
/// `relprov_op`, `rel:<slot>`; each block only when enabled.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub roster: Vec<String>,
    pub groups: BTreeSet<FeatureGroup>,
    pub relations: Vec<String>,
    #[serde(default)]
    pub missing_indicators: bool,
}

impl FeatureLayout {
    pub fn new(roster: Vec<String>, groups: BTreeSet<FeatureGroup>, relations: Vec<String>) -> Self {
        FeatureLayout {
            roster,
            groups,
            relations,
            missing_indicators: false,
        }
    }

    pub fn has(&self, group: FeatureGroup) -> bool {
        self.groups.contains(&group)
    }

    pub fn column_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (group, prefix) in [(FeatureGroup::Conf, "conf"), (FeatureGroup::Qsim, "qsim"), (FeatureGroup::Psim, "psim")] {
            if self.has(group) {
                names.extend(self.roster.iter().map(|s| format!("{prefix}:{s}")));
            }
        }
        if self.missing_indicators {
            names.extend(self.roster.iter().map(|s| format!("present:{s}")));
        }
        if self.has(FeatureGroup::Dps) {
            names.push("dps".into());
        }
        if self.has(FeatureGroup::Op) {
            names.push("op".into());
        }
        if self.has(FeatureGroup::RelProv) {
            names.push("relprov_dps".into());
            names.push("relprov_op".into());
        }
        if self.has(FeatureGroup::Rel) {
            names.extend(self.relations.iter().map(|r| format!("rel:{r}")));
        }
        names
    }

    pub fn dimension(&self) -> usize {
        let per_system = [FeatureGroup::Conf, FeatureGroup::Qsim, FeatureGroup::Psim]
            .iter()
            .filter(|g| self.has(**g))
            .count()
            + usize::from(self.missing_indicators);
        let scalars = usize::from(self.has(FeatureGroup::Dps))
            + usize::from(self.has(FeatureGroup::Op))
            + 2 * usize::from(self.has(FeatureGroup::RelProv));
        self.roster.len() * per_system + scalars + self.relations.len() * usize::from(self.has(FeatureGroup::Rel))
    }

    /// Feature count with the slot name counted as one nominal feature.
    pub fn nominal_feature_count(&self) -> usize {
        let rel = if self.has(FeatureGroup::Rel) { self.relations.len() } else { 0 };
        self.dimension() - rel + usize::from(self.has(FeatureGroup::Rel))
    }

    /// Reconstructs a layout from feature-matrix column names.
    pub fn from_column_names(names: &[String]) -> Result<Self> {
        let mut per_group: BTreeMap<&str, Vec<String>> = BTreeMap::new();
        let mut groups = BTreeSet::new();
        let mut relations = Vec::new();
        let mut scalars = Vec::new();
        for name in names {
            match name.split_once(':') {
                Some(("rel", slot)) => {
                    groups.insert(FeatureGroup::Rel);
                    relations.push(slot.to_string());
                }
                Some((prefix @ ("conf" | "qsim" | "psim" | "present"), system)) => {
                    per_group.entry(prefix).or_default().push(system.to_string());
                }
                Some(_) => return Err(Error::Layout(format!("unknown column {name:?}"))),
                None => scalars.push(name.as_str()),
            }
        }
        let roster = per_group.values().next().cloned().unwrap_or_default();
        if per_group.values().any(|r| *r != roster) {
            return Err(Error::Layout("per-system column blocks disagree on the roster".into()));
        }
        for (prefix, group) in [("conf", FeatureGroup::Conf), ("qsim", FeatureGroup::Qsim), ("psim", FeatureGroup::Psim)] {
            if per_group.contains_key(prefix) {
                groups.insert(group);
            }
        }
        for scalar in &scalars {
            match *scalar {
                "dps" => groups.insert(FeatureGroup::Dps),
                "op" => groups.insert(FeatureGroup::Op),
                "relprov_dps" | "relprov_op" => groups.insert(FeatureGroup::RelProv),
                other => return Err(Error::Layout(format!("unknown column {other:?}"))),
            };
        }
        let layout = FeatureLayout {
            roster,
            groups,
            relations,
            missing_indicators: per_group.contains_key("present"),
        };
        if layout.column_names() != names {
            return Err(Error::Layout("columns are not in canonical layout order".into()));
        }
        Ok(layout)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub key: FillKey,
    pub values: Vec<f64>,
    pub label: Option<bool>,
}

/// Inputs the feature groups draw on besides the candidates themselves.
#[derive(Clone, Copy, Default)]
pub struct FeatureContext<'a> {
    /// Needed for `qsim`.
    pub queries: Option<&'a BTreeMap<String, Query>>,
    /// Needed for `qsim` and `psim`.
    pub tfidf: Option<&'a TfidfModel>,
    pub reductions: ProvenanceReductions,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeaturizeMode {
    Train,
    Predict,
}

/// Builds one feature vector per candidate, in key order. Provenance groups
/// are formed from all candidates sharing a `(query, slot)`.
pub fn featurize(
    candidates: &[Candidate],
    layout: &FeatureLayout,
    context: &FeatureContext<'_>,
    mode: FeaturizeMode,
    diagnostics: &mut Diagnostics,
) -> Result<Vec<FeatureVector>> {
    let roster: BTreeSet<&str> = layout.roster.iter().map(String::as_str).collect();
    for c in candidates {
        if c.responses.is_empty() {
            return Err(Error::invalid(format!("candidate {} has no responses", c.key)));
        }
        if let Some(system) = c.responses.keys().find(|s| !roster.contains(s.as_str())) {
            return Err(Error::Layout(format!("candidate {} produced by {system}, which is not in the roster", c.key)));
        }
    }
    let needs_docs = layout.has(FeatureGroup::Qsim) || layout.has(FeatureGroup::Psim);
    if needs_docs && context.tfidf.is_none() {
        return Err(Error::invalid("similarity features need a corpus index"));
    }
    if layout.has(FeatureGroup::Qsim) && context.queries.is_none() {
        return Err(Error::invalid("query similarity needs the query file"));
    }
    let relation_index: BTreeMap<&str, usize> = layout.relations.iter().enumerate().map(|(i, r)| (r.as_str(), i)).collect();
    if layout.has(FeatureGroup::Rel) {
        let unknown: BTreeSet<&str> = candidates
            .iter()
            .map(Candidate::slot)
            .filter(|s| !relation_index.contains_key(s))
            .collect();
        for slot in unknown {
            match mode {
                FeaturizeMode::Train => {
                    return Err(Error::Layout(format!("slot {slot} is outside the relation vocabulary")))
                }
                FeaturizeMode::Predict => {
                    diagnostics.warn(format!("slot {slot} is outside the relation vocabulary; one-hot left empty"))
                }
            }
        }
    }

    // Contiguous runs of candidates sharing (query, slot).
    let mut blocks: Vec<&[Candidate]> = Vec::new();
    let owned;
    let candidates: &[Candidate] = if candidates.windows(2).all(|w| w[0].key <= w[1].key) {
        candidates
    } else {
        let mut v = candidates.to_vec();
        v.sort_by(|a, b| a.key.cmp(&b.key));
        owned = v;
        &owned
    };
    let mut start = 0;
    for i in 1..=candidates.len() {
        if i == candidates.len() || candidates[i].key.query_slot() != candidates[start].key.query_slot() {
            blocks.push(&candidates[start..i]);
            start = i;
        }
    }

    let missing_before = context.tfidf.map_or(0, TfidfModel::missing_lookups);
    let vectors: Vec<Vec<FeatureVector>> = blocks
        .par_iter()
        .map(|block| featurize_block(block, layout, context, &relation_index))
        .collect::<Result<_>>()?;
    if let Some(model) = context.tfidf {
        let missing = model.missing_lookups() - missing_before;
        if missing > 0 {
            diagnostics.warn(format!("{missing} provenance document lookups missed the corpus"));
        }
    }
    Ok(vectors.into_iter().flatten().collect())
}

fn featurize_block(
    block: &[Candidate],
    layout: &FeatureLayout,
    context: &FeatureContext<'_>,
    relation_index: &BTreeMap<&str, usize>,
) -> Result<Vec<FeatureVector>> {
    let all_responses = || block.iter().flat_map(|c| c.responses.values());
    let filler_group = if layout.has(FeatureGroup::Dps) || layout.has(FeatureGroup::Op) {
        Some(ProvenanceGroup::from_responses(all_responses(), ProvenanceSource::Filler)?)
    } else {
        None
    };
    let relation_group = if layout.has(FeatureGroup::RelProv) {
        Some(ProvenanceGroup::from_responses(all_responses(), ProvenanceSource::Relation)?)
    } else {
        None
    };
    let mut out = Vec::with_capacity(block.len());
    for c in block {
        let mut values = Vec::with_capacity(layout.dimension());
        if layout.has(FeatureGroup::Conf) {
            values.extend(layout.roster.iter().map(|s| c.confidence_of(s).unwrap_or(0.0)));
        }
        if layout.has(FeatureGroup::Qsim) {
            let queries = context.queries.expect("checked");
            let query = queries
                .get(c.query_id())
                .ok_or_else(|| Error::invalid(format!("candidate {} refers to an unknown query", c.key)))?;
            let sims = query_doc_similarity(c, query, context.tfidf.expect("checked"), &layout.roster);
            values.extend(layout.roster.iter().map(|s| sims[s]));
        }
        if layout.has(FeatureGroup::Psim) {
            let sims = cross_provenance_similarity(c, context.tfidf.expect("checked"), &layout.roster);
            values.extend(layout.roster.iter().map(|s| sims[s]));
        }
        if layout.missing_indicators {
            values.extend(layout.roster.iter().map(|s| if c.responses.contains_key(s) { 1.0 } else { 0.0 }));
        }
        if let Some(group) = &filler_group {
            let (dps, op) = group.candidate_features(c, context.reductions);
            if layout.has(FeatureGroup::Dps) {
                values.push(dps);
            }
            if layout.has(FeatureGroup::Op) {
                values.push(op);
            }
        }
        if let Some(group) = &relation_group {
            let (dps, op) = group.candidate_features(c, context.reductions);
            values.push(dps);
            values.push(op);
        }
        if layout.has(FeatureGroup::Rel) {
            let offset = values.len();
            values.resize(offset + layout.relations.len(), 0.0);
            if let Some(&i) = relation_index.get(c.slot()) {
                values[offset + i] = 1.0;
            }
        }
        debug_assert_eq!(values.len(), layout.dimension());
        out.push(FeatureVector {
            key: c.key.clone(),
            values,
            label: c.label,
        });
    }
    Ok(out)
}

/// Attaches labels from a key: true iff judged correct. Returns the number of
/// candidates absent from the key (labelled false).
pub fn label_candidates(candidates: &mut [Candidate], key: &[KeyEntry]) -> usize {
    let judgments: BTreeMap<&FillKey, Judgment> = key.iter().map(|e| (&e.key, e.judgment)).collect();
    let mut unassessed = 0;
    for c in candidates.iter_mut() {
        c.label = Some(match judgments.get(&c.key) {
            Some(Judgment::Correct) => true,
            Some(Judgment::Wrong) => false,
            None => {
                unassessed += 1;
                false
            }
        });
    }
    if unassessed > 0 {
        log::warn!("{unassessed} of {} candidates are absent from the key and labelled wrong", candidates.len());
    }
    unassessed
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Loss {
    #[default]
    Logistic,
    SquaredHinge,
}

impl FromStr for Loss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logistic" => Ok(Loss::Logistic),
            "squared-hinge" | "squared_hinge" => Ok(Loss::SquaredHinge),
            other => Err(Error::invalid(format!("unknown loss {other:?}"))),
        }
    }
}

impl Loss {
    /// Loss and derivative with respect to the margin `z = y * score`.
    fn value_and_slope(self, z: f64) -> (f64, f64) {
        match self {
            Loss::Logistic => {
                let value = if z > 0.0 { (-z).exp().ln_1p() } else { -z + z.exp().ln_1p() };
                (value, -sigmoid(-z))
            }
            Loss::SquaredHinge => {
                let gap = (1.0 - z).max(0.0);
                (gap * gap, -2.0 * gap)
            }
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub const DEFAULT_LAMBDA: f64 = 0.01;
pub const LAMBDA_GRID: [f64; 4] = [1.0, 0.1, 0.01, 0.001];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub lambda: f64,
    pub loss: Loss,
    pub max_iterations: usize,
    /// Stop once the relative objective decrease falls below this.
    pub tolerance: f64,
    /// Z-score columns using training statistics.
    pub standardize: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            lambda: DEFAULT_LAMBDA,
            loss: Loss::Logistic,
            max_iterations: 5000,
            tolerance: 1e-8,
            standardize: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Scaler {
    fn fit(rows: &[&[f64]], dim: usize) -> Self {
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for row in rows {
            for (m, v) in mean.iter_mut().zip(row.iter()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for row in rows {
            for ((s, v), m) in var.iter_mut().zip(row.iter()).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Scaler { mean, scale }
    }

    fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

/// A trained linear meta-classifier with the layout it was trained on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub format: String,
    pub layout: FeatureLayout,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub lambda: f64,
    pub loss: Loss,
    pub scaler: Option<Scaler>,
    pub iterations: usize,
    pub final_objective: f64,
    /// Objective after every accepted step (not serialized).
    #[serde(skip)]
    pub objective_trace: Vec<f64>,
}

impl LinearModel {
    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("model serializes");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: LinearModel = serde_json::from_str(text)?;
        if model.format != MODEL_FORMAT {
            return Err(Error::Layout(format!("unsupported model format {:?}", model.format)));
        }
        if model.weights.len() != model.layout.dimension() {
            return Err(Error::Layout(format!(
                "model has {} weights for a {}-column layout",
                model.weights.len(),
                model.layout.dimension()
            )));
        }
        Ok(model)
    }

    pub fn score(&self, values: &[f64]) -> f64 {
        let scaled;
        let x = match &self.scaler {
            Some(s) => {
                scaled = s.apply(values);
                &scaled[..]
            }
            None => values,
        };
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }

    pub fn probability(&self, values: &[f64]) -> f64 {
        sigmoid(self.score(values))
    }
}

/// Distinct training rows with their weight `multiplicity / n`. Identical rows
/// are merged so that the objective is evaluated in a fixed order no matter
/// how often a row repeats.
struct CompressedRows {
    /// Sparse `(column, value)` per row.
    entries: Vec<Vec<(usize, f64)>>,
    sign: Vec<f64>,
    weight: Vec<f64>,
    dim: usize,
}

impl CompressedRows {
    fn new(rows: &[Vec<f64>], labels: &[bool], dim: usize) -> Self {
        let mut counts: BTreeMap<(Vec<u64>, bool), usize> = BTreeMap::new();
        for (row, &label) in rows.iter().zip(labels) {
            *counts.entry((row.iter().map(|v| v.to_bits()).collect(), label)).or_default() += 1;
        }
        let n = rows.len() as f64;
        let mut out = CompressedRows {
            entries: Vec::with_capacity(counts.len()),
            sign: Vec::with_capacity(counts.len()),
            weight: Vec::with_capacity(counts.len()),
            dim,
        };
        for ((bits, label), count) in counts {
            out.entries.push(
                bits.into_iter()
                    .enumerate()
                    .map(|(j, b)| (j, f64::from_bits(b)))
                    .filter(|(_, v)| *v != 0.0)
                    .collect(),
            );
            out.sign.push(if label { 1.0 } else { -1.0 });
            out.weight.push(count as f64 / n);
        }
        out
    }

    fn margins(&self, w: &[f64], b: f64, out: &mut [f64]) {
        for (r, row) in self.entries.iter().enumerate() {
            let score = row.iter().map(|&(j, v)| w[j] * v).sum::<f64>() + b;
            out[r] = self.sign[r] * score;
        }
    }

    /// Smooth loss at the given margins, optionally accumulating its gradient.
    fn loss(&self, loss: Loss, margins: &[f64], grad: Option<(&mut [f64], &mut f64)>) -> f64 {
        let mut total = 0.0;
        match grad {
            None => {
                for (r, &z) in margins.iter().enumerate() {
                    total += self.weight[r] * loss.value_and_slope(z).0;
                }
            }
            Some((gw, gb)) => {
                gw.iter_mut().for_each(|g| *g = 0.0);
                *gb = 0.0;
                for (r, &z) in margins.iter().enumerate() {
                    let (value, slope) = loss.value_and_slope(z);
                    total += self.weight[r] * value;
                    let coef = self.weight[r] * slope * self.sign[r];
                    for &(j, v) in &self.entries[r] {
                        gw[j] += coef * v;
                    }
                    *gb += coef;
                }
            }
        }
        total
    }
}

fn soft_threshold(v: f64, threshold: f64) -> f64 {
    if v > threshold {
        v - threshold
    } else if v < -threshold {
        v + threshold
    } else {
        0.0
    }
}

fn l1(w: &[f64]) -> f64 {
    w.iter().map(|v| v.abs()).sum()
}

fn validate_training_set(layout: &FeatureLayout, vectors: &[FeatureVector]) -> Result<Vec<bool>> {
    let dim = layout.dimension();
    let mut labels = Vec::with_capacity(vectors.len());
    for v in vectors {
        if v.values.len() != dim {
            return Err(Error::Layout(format!("vector {} has {} values, layout has {dim}", v.key, v.values.len())));
        }
        if let Some(j) = v.values.iter().position(|x| !x.is_finite()) {
            return Err(Error::Training(format!("non-finite feature {} for candidate {}", layout.column_names()[j], v.key)));
        }
        labels.push(v.label.ok_or_else(|| Error::Training(format!("candidate {} is unlabelled", v.key)))?);
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 || positives == labels.len() {
        return Err(Error::Training("training labels contain a single class".into()));
    }
    Ok(labels)
}

/// Minimizes `(1/n) * sum loss + lambda * |w|_1` (bias unpenalized) by proximal
/// gradient descent with backtracking, starting from zero.
pub fn train(layout: &FeatureLayout, vectors: &[FeatureVector], options: &TrainOptions) -> Result<LinearModel> {
    if !(options.lambda >= 0.0 && options.lambda.is_finite()) {
        return Err(Error::Training(format!("penalty {} must be a finite non-negative number", options.lambda)));
    }
    let labels = validate_training_set(layout, vectors)?;
    let dim = layout.dimension();
    let raw: Vec<&[f64]> = vectors.iter().map(|v| v.values.as_slice()).collect();
    let scaler = options.standardize.then(|| Scaler::fit(&raw, dim));
    let rows: Vec<Vec<f64>> = match &scaler {
        Some(s) => raw.iter().map(|r| s.apply(r)).collect(),
        None => raw.iter().map(|r| r.to_vec()).collect(),
    };
    let data = CompressedRows::new(&rows, &labels, dim);
    let lambda = options.lambda;

    let mut w = vec![0.0; data.dim];
    let mut b = 0.0;
    let mut margins = vec![0.0; data.entries.len()];
    let mut trial_margins = margins.clone();
    let mut gw = vec![0.0; data.dim];
    let mut gb = 0.0;
    let mut trial_w = w.clone();

    data.margins(&w, b, &mut margins);
    let mut smooth = data.loss(options.loss, &margins, None);
    let mut objective = smooth + lambda * l1(&w);
    let mut trace = vec![objective];
    let mut step = 1.0;
    let mut iterations = 0;

    while iterations < options.max_iterations {
        iterations += 1;
        data.loss(options.loss, &margins, Some((&mut gw, &mut gb)));
        let accepted = loop {
            for j in 0..data.dim {
                trial_w[j] = soft_threshold(w[j] - step * gw[j], step * lambda);
            }
            let trial_b = b - step * gb;
            data.margins(&trial_w, trial_b, &mut trial_margins);
            let trial_smooth = data.loss(options.loss, &trial_margins, None);
            let mut linear = gb * (trial_b - b);
            let mut quad = (trial_b - b) * (trial_b - b);
            for j in 0..data.dim {
                let d = trial_w[j] - w[j];
                linear += gw[j] * d;
                quad += d * d;
            }
            if trial_smooth <= smooth + linear + quad / (2.0 * step) {
                break Some((trial_b, trial_smooth));
            }
            step *= 0.5;
            if step < 1e-20 {
                break None;
            }
        };
        let Some((trial_b, trial_smooth)) = accepted else { break };
        let trial_objective = trial_smooth + lambda * l1(&trial_w);
        if trial_objective > objective {
            break;
        }
        std::mem::swap(&mut w, &mut trial_w);
        std::mem::swap(&mut margins, &mut trial_margins);
        b = trial_b;
        smooth = trial_smooth;
        let decrease = objective - trial_objective;
        objective = trial_objective;
        trace.push(objective);
        if decrease <= options.tolerance * objective.abs().max(f64::MIN_POSITIVE) {
            break;
        }
        step *= 1.5;
    }

    Ok(LinearModel {
        format: MODEL_FORMAT.to_string(),
        layout: layout.clone(),
        weights: w,
        bias: b,
        lambda,
        loss: options.loss,
        scaler,
        iterations,
        final_objective: objective,
        objective_trace: trace,
    })
}

/// `max_j |d loss / d w_j|` at `w = 0` with the bias at its optimum; any
/// penalty at or above this keeps every weight at zero (logistic loss).
pub fn zero_weight_penalty_bound(layout: &FeatureLayout, vectors: &[FeatureVector]) -> Result<f64> {
    let labels = validate_training_set(layout, vectors)?;
    let n = labels.len() as f64;
    let rate = labels.iter().filter(|&&l| l).count() as f64 / n;
    let mut grad = vec![0.0; layout.dimension()];
    for (v, &label) in vectors.iter().zip(&labels) {
        let residual = rate - if label { 1.0 } else { 0.0 };
        for (g, x) in grad.iter_mut().zip(&v.values) {
            *g += residual * x / n;
        }
    }
    Ok(grad.into_iter().fold(0.0, |m, g| m.max(g.abs())))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub key: FillKey,
    pub probability: f64,
    pub accepted: bool,
}

pub const DEFAULT_THRESHOLD: f64 = 0.5;

pub fn predict(model: &LinearModel, layout: &FeatureLayout, vectors: &[FeatureVector], threshold: f64) -> Result<Vec<Prediction>> {
    if *layout != model.layout {
        return Err(Error::Layout("feature layout differs from the model's".into()));
    }
    let dim = layout.dimension();
    if let Some(v) = vectors.iter().find(|v| v.values.len() != dim) {
        return Err(Error::Layout(format!("vector {} has {} values, layout has {dim}", v.key, v.values.len())));
    }
    Ok(vectors
        .par_iter()
        .map(|v| {
            let probability = model.probability(&v.values);
            Prediction {
                key: v.key.clone(),
                probability,
                accepted: probability >= threshold,
            }
        })
        .collect())
}

/// F1 of accepted predictions against vector labels.
pub fn labelled_f1(predictions: &[Prediction], vectors: &[FeatureVector]) -> f64 {
    let (mut tp, mut returned, mut gold) = (0usize, 0usize, 0usize);
    for (p, v) in predictions.iter().zip(vectors) {
        let label = v.label.unwrap_or(false);
        gold += usize::from(label);
        returned += usize::from(p.accepted);
        tp += usize::from(label && p.accepted);
    }
    crate::scorer::f1_from_counts(tp, returned, gold).2
}

/// Picks the penalty from `grid` with the best held-out F1 on a seeded 80/20
/// split by query. Ties go to the earlier (larger) grid value.
pub fn tune_lambda(
    layout: &FeatureLayout,
    vectors: &[FeatureVector],
    options: &TrainOptions,
    grid: &[f64],
    threshold: f64,
    seed: u64,
) -> Result<f64> {
    let mut queries: Vec<&str> = vectors
        .iter()
        .map(|v| v.key.query_id.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    queries.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let held_out: BTreeSet<&str> = queries.iter().take(queries.len().div_ceil(5)).copied().collect();
    let (valid, fit): (Vec<FeatureVector>, Vec<FeatureVector>) =
        vectors.iter().cloned().partition(|v| held_out.contains(v.key.query_id.as_str()));

    let mut best: Option<(f64, f64)> = None;
    for &lambda in grid {
        let opts = TrainOptions { lambda, ..options.clone() };
        let Ok(model) = train(layout, &fit, &opts) else { continue };
        let predictions = predict(&model, layout, &valid, threshold)?;
        let f1 = labelled_f1(&predictions, &valid);
        log::info!("penalty {lambda}: held-out F1 {f1:.4}");
        if best.map_or(true, |(_, b)| f1 > b) {
            best = Some((lambda, f1));
        }
    }
    best.map(|(l, _)| l)
        .ok_or_else(|| Error::Training("no penalty in the grid could be trained on the split".into()))
}

// ---------------------------------------------------------------------------
// Feature matrix and prediction files
// ---------------------------------------------------------------------------

/// Header plus one row per candidate; the `label` column is present iff any
/// vector carries a label.
pub fn write_feature_matrix(layout: &FeatureLayout, vectors: &[FeatureVector]) -> String {
    let labelled = vectors.iter().any(|v| v.label.is_some());
    let mut out = String::from("query_id\tslot\tfill_norm");
    if labelled {
        out.push_str("\tlabel");
    }
    for name in layout.column_names() {
        out.push('\t');
        out.push_str(&name);
    }
    out.push('\n');
    for v in vectors {
        let _ = write!(out, "{}\t{}\t{}", v.key.query_id, v.key.slot, v.key.fill_norm);
        if labelled {
            out.push_str(match v.label {
                Some(true) => "\t1",
                Some(false) => "\t0",
                None => "\t",
            });
        }
        for x in &v.values {
            let _ = write!(out, "\t{x}");
        }
        out.push('\n');
    }
    out
}

pub fn read_feature_matrix(text: &str, source: &str) -> Result<(FeatureLayout, Vec<FeatureVector>)> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)));
    let (_, header) = lines.next().ok_or_else(|| Error::parse(source, 1, "empty feature matrix"))?;
    let cols: Vec<&str> = header.split('\t').collect();
    if cols.len() < 3 || cols[..3] != ["query_id", "slot", "fill_norm"] {
        return Err(Error::parse(source, 1, "header must start with query_id, slot, fill_norm"));
    }
    let labelled = cols.get(3) == Some(&"label");
    let first_value = if labelled { 4 } else { 3 };
    let names: Vec<String> = cols[first_value..].iter().map(|s| s.to_string()).collect();
    let layout = FeatureLayout::from_column_names(&names).map_err(|e| Error::parse(source, 1, e.to_string()))?;
    let mut vectors = Vec::new();
    for (number, line) in lines.filter(|(_, l)| !l.trim().is_empty()) {
        let cells: Vec<&str> = line.split('\t').collect();
        if cells.len() != cols.len() {
            return Err(Error::parse(source, number, format!("expected {} columns, found {}", cols.len(), cells.len())));
        }
        let label = if labelled {
            match cells[3] {
                "1" => Some(true),
                "0" => Some(false),
                "" => None,
                other => return Err(Error::parse(source, number, format!("bad label {other:?}"))),
            }
        } else {
            None
        };
        let values = cells[first_value..]
            .iter()
            .map(|c| c.parse::<f64>().map_err(|_| Error::parse(source, number, format!("bad value {c:?}"))))
            .collect::<Result<Vec<_>>>()?;
        vectors.push(FeatureVector {
            key: FillKey::new(cells[0], cells[1], cells[2]),
            values,
            label,
        });
    }
    Ok((layout, vectors))
}

pub fn write_predictions(predictions: &[Prediction]) -> String {
    let mut out = String::from("query_id\tslot\tfill_norm\tprobability\taccepted\n");
    for p in predictions {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            p.key.query_id,
            p.key.slot,
            p.key.fill_norm,
            p.probability,
            u8::from(p.accepted)
        );
    }
    out
}

pub fn read_predictions(text: &str, source: &str) -> Result<Vec<Prediction>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split('\t').collect();
        if cells.len() != 5 {
            return Err(Error::parse(source, i + 1, "expected 5 columns"));
        }
        let probability: f64 = cells[3]
            .parse()
            .map_err(|_| Error::parse(source, i + 1, format!("bad probability {:?}", cells[3])))?;
        let accepted = match cells[4] {
            "1" => true,
            "0" => false,
            other => return Err(Error::parse(source, i + 1, format!("bad accepted flag {other:?}"))),
        };
        out.push(Prediction {
            key: FillKey::new(cells[0], cells[1], cells[2]),
            probability,
            accepted,
        });
    }
    Ok(out)
}

impl fmt::Display for FeatureLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} systems, groups [{}], {} relations, {} columns",
            self.roster.len(),
            format_feature_groups(&self.groups),
            self.relations.len(),
            self.dimension()
        )
    }
}
