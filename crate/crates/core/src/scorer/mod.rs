//! Per-pair predicate score vectors.
//!
//! Scores either come from an externally produced dump (any model that
//! exposes a softmax with a background class) or from the built-in
//! frequency baseline, which makes the whole pipeline runnable without a
//! neural model. Index 0 of every vector is the NA slot.

mod io;

pub use io::{load_external_scores, write_scores_binary, write_scores_jsonl};

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{Dataset, ObjectClassId, ObjectId, PredicateId, NA_INDEX};

const NORMALIZATION_TOLERANCE: f64 = 1e-6;

/// Dense score distribution over `{NA} ∪ predicates`, normalized to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    values: Vec<f64>,
}

impl ScoreVector {
    pub fn new(values: Vec<f64>, expected_len: usize) -> Result<Self> {
        if values.len() != expected_len {
            return Err(Error::Score(format!(
                "score vector has length {} but the vocab requires {} (NA slot plus predicates)",
                values.len(),
                expected_len
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Score(
                "score vector contains negative or non-finite entries".into(),
            ));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(Error::Score(format!(
                "score vector is not normalized (sum = {sum})"
            )));
        }
        Ok(ScoreVector { values })
    }

    /// Test-only escape hatch for rank-invariance checks that need raw,
    /// unnormalized values.
    #[cfg(test)]
    pub(crate) fn from_raw_unchecked(values: Vec<f64>) -> Self {
        ScoreVector { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn na(&self) -> f64 {
        self.values[NA_INDEX]
    }

    pub fn get(&self, p: PredicateId) -> f64 {
        self.values[p]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Key of one scored ordered pair.
pub type PairKey = (String, ObjectId, ObjectId);

/// Score vectors keyed by `(image_id, subj, obj)`, stamped with the vocab
/// fingerprint they were produced under.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    entries: BTreeMap<PairKey, ScoreVector>,
    fingerprint: String,
}

impl ScoreTable {
    pub fn new(fingerprint: String) -> Self {
        ScoreTable {
            entries: BTreeMap::new(),
            fingerprint,
        }
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn insert(&mut self, key: PairKey, vector: ScoreVector) -> Result<()> {
        if self.entries.contains_key(&key) {
            return Err(Error::Score(format!(
                "duplicate score entry for ({}, {}, {})",
                key.0, key.1, key.2
            )));
        }
        self.entries.insert(key, vector);
        Ok(())
    }

    pub fn get(&self, image_id: &str, subj: ObjectId, obj: ObjectId) -> Option<&ScoreVector> {
        self.entries.get(&(image_id.to_string(), subj, obj))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&PairKey, &ScoreVector)> {
        self.entries.iter()
    }
}

/// Pair-conditional predicate counts with Laplace smoothing and a fixed NA
/// prior. Read-only after fit.
#[derive(Debug, Clone)]
pub struct FrequencyBaseline {
    counts: BTreeMap<(ObjectClassId, ObjectClassId), Vec<u64>>,
    alpha: f64,
    na_prior: f64,
    num_predicates: usize,
    vocab_fingerprint: String,
}

/// Where score vectors come from.
pub enum ScoreSource<'a> {
    Baseline(&'a FrequencyBaseline),
    External(&'a ScoreTable),
}

/// Count annotated predicates per (subject class, object class) pair.
pub fn fit_frequency_baseline(
    train: &Dataset,
    alpha: f64,
    na_prior: f64,
) -> Result<FrequencyBaseline> {
    if !alpha.is_finite() || alpha < 0.0 {
        return Err(Error::Config(format!(
            "smoothing alpha must be >= 0, got {alpha}"
        )));
    }
    if !na_prior.is_finite() || !(0.0..1.0).contains(&na_prior) {
        return Err(Error::Config(format!(
            "na prior must be in [0, 1), got {na_prior}"
        )));
    }
    let score_len = train.vocab().score_len();
    let mut counts: BTreeMap<(ObjectClassId, ObjectClassId), Vec<u64>> = BTreeMap::new();
    for image in train.images() {
        for rel in &image.relations {
            let key = (image.object_class(rel.subj), image.object_class(rel.obj));
            counts.entry(key).or_insert_with(|| vec![0; score_len])[rel.predicate] += 1;
        }
    }
    Ok(FrequencyBaseline {
        counts,
        alpha,
        na_prior,
        num_predicates: train.vocab().num_predicates(),
        vocab_fingerprint: train.vocab().fingerprint(),
    })
}

impl FrequencyBaseline {
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn na_prior(&self) -> f64 {
        self.na_prior
    }

    pub fn vocab_fingerprint(&self) -> &str {
        &self.vocab_fingerprint
    }

    pub fn pair_counts(
        &self,
        subj_class: ObjectClassId,
        obj_class: ObjectClassId,
    ) -> Option<&[u64]> {
        self.counts
            .get(&(subj_class, obj_class))
            .map(|v| v.as_slice())
    }
}

/// Smoothed conditional distribution for one class pair:
/// `values[p] = (1 - beta) * (count_p + alpha) / sum_q (count_q + alpha)`,
/// `values[0] = beta`.
pub fn score_pair(
    model: &FrequencyBaseline,
    subj_class: ObjectClassId,
    obj_class: ObjectClassId,
) -> Result<ScoreVector> {
    let empty;
    let counts = match model.counts.get(&(subj_class, obj_class)) {
        Some(c) => c.as_slice(),
        None => {
            empty = vec![0u64; model.num_predicates + 1];
            empty.as_slice()
        }
    };
    let denom: f64 = counts[1..].iter().map(|&c| c as f64 + model.alpha).sum();
    if denom <= 0.0 {
        return Err(Error::Score(format!(
            "undefined distribution for class pair ({subj_class}, {obj_class}): \
             no counts and alpha = 0"
        )));
    }
    let mut values = Vec::with_capacity(counts.len());
    values.push(model.na_prior);
    for &c in &counts[1..] {
        values.push((1.0 - model.na_prior) * (c as f64 + model.alpha) / denom);
    }
    ScoreVector::new(values, model.num_predicates + 1)
}

/// Ordered pairs carrying at least one annotation, deduplicated,
/// in deterministic order.
pub fn annotated_pairs(dataset: &Dataset) -> Vec<PairKey> {
    annotated_pair_keys(dataset)
        .into_iter()
        .map(|(key, _, _)| key)
        .collect()
}

fn annotated_pair_keys(dataset: &Dataset) -> Vec<(PairKey, ObjectClassId, ObjectClassId)> {
    let mut keys = BTreeSet::new();
    for image in dataset.images() {
        for rel in &image.relations {
            keys.insert((
                (image.id.clone(), rel.subj, rel.obj),
                image.object_class(rel.subj),
                image.object_class(rel.obj),
            ));
        }
    }
    keys.into_iter().collect()
}

fn score_keys(
    source: &ScoreSource,
    keys: Vec<(PairKey, ObjectClassId, ObjectClassId)>,
    fingerprint: &str,
) -> Result<ScoreTable> {
    match source {
        ScoreSource::Baseline(model) => {
            if model.vocab_fingerprint != fingerprint {
                return Err(Error::Score(
                    "baseline was fit under a different vocab (fingerprint mismatch)".into(),
                ));
            }
            let scored: Vec<(PairKey, Result<ScoreVector>)> = keys
                .into_par_iter()
                .map(|(key, cs, co)| {
                    let v = score_pair(model, cs, co);
                    (key, v)
                })
                .collect();
            let mut table = ScoreTable::new(fingerprint.to_string());
            for (key, vector) in scored {
                table.insert(key, vector?)?;
            }
            Ok(table)
        }
        ScoreSource::External(dump) => {
            if dump.fingerprint != fingerprint {
                return Err(Error::Score(
                    "score dump was produced under a different vocab (fingerprint mismatch)".into(),
                ));
            }
            let mut table = ScoreTable::new(fingerprint.to_string());
            let mut missing = Vec::new();
            for (key, _, _) in keys {
                match dump.entries.get(&key) {
                    Some(v) => table.insert(key, v.clone())?,
                    None => missing.push(key),
                }
            }
            if !missing.is_empty() {
                let shown: Vec<String> = missing
                    .iter()
                    .take(5)
                    .map(|(i, s, o)| format!("({i}, {s}, {o})"))
                    .collect();
                return Err(Error::Score(format!(
                    "score dump is missing {} required pairs, e.g. {}",
                    missing.len(),
                    shown.join(", ")
                )));
            }
            Ok(table)
        }
    }
}

/// One score vector per annotated ordered pair.
pub fn score_annotated(dataset: &Dataset, source: &ScoreSource) -> Result<ScoreTable> {
    score_keys(
        source,
        annotated_pair_keys(dataset),
        &dataset.vocab().fingerprint(),
    )
}

/// Score arbitrary ordered pairs of the dataset, e.g. enumerated NA
/// candidates. Pairs reference objects by `(image_id, subj, obj)`.
pub fn score_pairs(
    dataset: &Dataset,
    source: &ScoreSource,
    pairs: &[PairKey],
) -> Result<ScoreTable> {
    let by_id: BTreeMap<&str, &crate::model::Image> = dataset
        .images()
        .iter()
        .map(|im| (im.id.as_str(), im))
        .collect();
    let mut keys = Vec::with_capacity(pairs.len());
    let mut seen = BTreeSet::new();
    for key in pairs {
        if !seen.insert(key.clone()) {
            continue;
        }
        let image = by_id
            .get(key.0.as_str())
            .ok_or_else(|| Error::Score(format!("pair references unknown image {}", key.0)))?;
        if key.1 >= image.objects.len() || key.2 >= image.objects.len() {
            return Err(Error::Score(format!(
                "pair ({}, {}, {}) references missing objects",
                key.0, key.1, key.2
            )));
        }
        keys.push((
            key.clone(),
            image.object_class(key.1),
            image.object_class(key.2),
        ));
    }
    keys.sort();
    score_keys(source, keys, &dataset.vocab().fingerprint())
}

/// Convenience wrapper scoring the NA candidates produced by enumeration.
pub fn score_na_candidates(
    dataset: &Dataset,
    source: &ScoreSource,
    pairs: &[PairKey],
) -> Result<ScoreTable> {
    score_pairs(dataset, source, pairs)
}
