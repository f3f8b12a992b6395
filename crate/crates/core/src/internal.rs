//! Internal transfer: relabel instances of general predicates as the
//! confusable, more informative predicates they collapse onto.
//!
//! For every annotated triplet type the pass aggregates its instances'
//! score vectors, finds the predicates that outscore the type's own
//! predicate (the confusion set), keeps those with a strictly smaller
//! attraction factor as valid sources, collects the source instances,
//! resolves per-instance conflicts by maximal target attraction, and cuts
//! each target's candidates to the requested size.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::io::{write_lines, HEADER_KEY};
use crate::model::{Dataset, ObjectClassId, PredicateId, RelId, TripletIndex, TripletType, Vocab};
use crate::scorer::ScoreTable;

/// Attraction factor `A(t) = N(t) / sum over types sharing t's predicate of N`.
///
/// Kept as an exact ratio; comparisons cross-multiply in 128 bits so that
/// equal ratios with different denominators never misorder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Attraction {
    num: u64,
    den: u64,
}

impl Attraction {
    pub fn value(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl PartialOrd for Attraction {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Attraction {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.num as u128 * other.den as u128).cmp(&(other.num as u128 * self.den as u128))
    }
}

/// Attraction factor of an annotated type. Undefined (error) when `N(t) = 0`.
pub fn attraction(index: &TripletIndex, t: &TripletType) -> Result<Attraction> {
    let num = index.count(t);
    if num == 0 {
        return Err(Error::Plan(format!(
            "attraction undefined for absent type {t:?}"
        )));
    }
    Ok(Attraction {
        num,
        den: index.predicate_total(t.predicate),
    })
}

/// Mean score vector per annotated triplet type, with instance counts.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedScores {
    entries: BTreeMap<TripletType, Aggregate>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub mean: Vec<f64>,
    pub count: u64,
}

impl AggregatedScores {
    pub fn get(&self, t: &TripletType) -> Option<&Aggregate> {
        self.entries.get(t)
    }

    pub fn types(&self) -> impl Iterator<Item = (&TripletType, &Aggregate)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Arithmetic mean of the instances' score vectors per triplet type.
pub fn aggregate_scores(dataset: &Dataset, scores: &ScoreTable) -> Result<AggregatedScores> {
    let mut sums: BTreeMap<TripletType, (Vec<f64>, u64)> = BTreeMap::new();
    for image in dataset.images() {
        for rel in &image.relations {
            let vector = scores.get(&image.id, rel.subj, rel.obj).ok_or_else(|| {
                Error::Score(format!(
                    "missing score entry for pair ({}, {}, {})",
                    image.id, rel.subj, rel.obj
                ))
            })?;
            let t = dataset.triplet_type(image, rel);
            let entry = sums
                .entry(t)
                .or_insert_with(|| (vec![0.0; vector.len()], 0));
            for (acc, v) in entry.0.iter_mut().zip(vector.values()) {
                *acc += v;
            }
            entry.1 += 1;
        }
    }
    let entries = sums
        .into_iter()
        .map(|(t, (sum, count))| {
            let mean = sum.into_iter().map(|s| s / count as f64).collect();
            (t, Aggregate { mean, count })
        })
        .collect();
    Ok(AggregatedScores { entries })
}

/// Predicates whose aggregated score on `t`'s instances strictly exceeds the
/// score of `t`'s own predicate. The NA slot is never a member.
pub fn confusion_set(agg: &AggregatedScores, t: &TripletType) -> Result<BTreeSet<PredicateId>> {
    let entry = agg
        .get(t)
        .ok_or_else(|| Error::Plan(format!("no aggregated scores for type {t:?}")))?;
    let own = entry.mean[t.predicate];
    Ok((1..entry.mean.len())
        .filter(|&p| entry.mean[p] > own)
        .collect())
}

/// Filter a confusion set down to valid transfer sources: the source type
/// must exist and its attraction must be strictly below the target's.
pub fn transfer_sources(
    t: &TripletType,
    confusion: &BTreeSet<PredicateId>,
    index: &TripletIndex,
) -> BTreeSet<PredicateId> {
    let Ok(target_attraction) = attraction(index, t) else {
        return BTreeSet::new();
    };
    confusion
        .iter()
        .copied()
        .filter(|&p| {
            let src_type = TripletType::new(t.subj_class, p, t.obj_class);
            index.exists(&src_type)
                && attraction(index, &src_type).is_ok_and(|a| a < target_attraction)
        })
        .collect()
}

/// One relabeling candidate: an original-provenance instance whose class
/// pair matches the target and whose predicate is a valid source.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidate {
    pub image_id: String,
    pub rel_id: RelId,
    pub subj: usize,
    pub obj: usize,
    pub src_predicate: PredicateId,
}

/// All original-provenance instances with the target's class pair and a
/// predicate in the source set.
pub fn collect_candidates(
    dataset: &Dataset,
    t: &TripletType,
    sources: &BTreeSet<PredicateId>,
) -> Vec<Candidate> {
    if sources.is_empty() {
        return Vec::new();
    }
    let mut out = Vec::new();
    for image in dataset.images() {
        for (rel_id, rel) in image.relations.iter().enumerate() {
            if rel.provenance.is_original()
                && image.object_class(rel.subj) == t.subj_class
                && image.object_class(rel.obj) == t.obj_class
                && sources.contains(&rel.predicate)
            {
                out.push(Candidate {
                    image_id: image.id.clone(),
                    rel_id,
                    subj: rel.subj,
                    obj: rel.obj,
                    src_predicate: rel.predicate,
                });
            }
        }
    }
    out
}

/// Per-target confusion set, source set and attraction.
#[derive(Debug, Clone)]
pub struct TransferRule {
    pub target: TripletType,
    pub confusion: BTreeSet<PredicateId>,
    pub sources: BTreeSet<PredicateId>,
    pub attraction: Attraction,
}

/// How each target's candidate list is cut down.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CutRule {
    /// Keep the top `floor(percent / 100 * n)` candidates by target score.
    FixedPercent(f64),
    /// Keep candidates whose target score strictly exceeds
    /// `mean + spread * std` of the target's own instances' scores, with the
    /// population standard deviation.
    Adaptive(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InternalParams {
    pub cut: CutRule,
    pub score_fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InternalMove {
    pub image_id: String,
    pub rel_id: RelId,
    pub src_predicate: PredicateId,
    pub tgt_predicate: PredicateId,
    pub tgt_score: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetDiagnostics {
    /// Candidates collected for this target before conflict resolution.
    pub candidates: usize,
    /// Candidates assigned to this target after conflict resolution.
    pub assigned: usize,
    /// Moves kept by the cut.
    pub kept: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InternalPlan {
    pub moves: Vec<InternalMove>,
    pub targets: BTreeMap<TripletType, TargetDiagnostics>,
    pub params: Option<InternalParams>,
}

impl InternalPlan {
    pub fn empty() -> Self {
        InternalPlan {
            moves: Vec::new(),
            targets: BTreeMap::new(),
            params: None,
        }
    }
}

/// Fixed-percentage plan: per target, keep the top `k_percent`% candidates
/// by their score on the target predicate.
pub fn build_plan(
    dataset: &Dataset,
    scores: &ScoreTable,
    index: &TripletIndex,
    k_percent: f64,
) -> Result<InternalPlan> {
    if !(0.0..=100.0).contains(&k_percent) {
        return Err(Error::Config(format!(
            "internal transfer percentage must be in [0, 100], got {k_percent}"
        )));
    }
    plan_with_cut(dataset, scores, index, CutRule::FixedPercent(k_percent))
}

/// Adaptive-threshold plan: keep a candidate when its target score strictly
/// exceeds `mean + spread * std` over the target's own instances.
pub fn build_plan_adaptive(
    dataset: &Dataset,
    scores: &ScoreTable,
    index: &TripletIndex,
    spread: f64,
) -> Result<InternalPlan> {
    if !spread.is_finite() {
        return Err(Error::Config(format!(
            "spread multiplier must be finite, got {spread}"
        )));
    }
    plan_with_cut(dataset, scores, index, CutRule::Adaptive(spread))
}

/// Compute all transfer rules, one per annotated triplet type.
pub fn transfer_rules(
    agg: &AggregatedScores,
    index: &TripletIndex,
) -> Result<BTreeMap<TripletType, TransferRule>> {
    let types: Vec<TripletType> = agg.types().map(|(t, _)| *t).collect();
    let rules: Vec<Result<(TripletType, TransferRule)>> = types
        .into_par_iter()
        .map(|t| {
            let confusion = confusion_set(agg, &t)?;
            let sources = transfer_sources(&t, &confusion, index);
            let attraction = attraction(index, &t)?;
            Ok((
                t,
                TransferRule {
                    target: t,
                    confusion,
                    sources,
                    attraction,
                },
            ))
        })
        .collect();
    rules.into_iter().collect()
}

fn plan_with_cut(
    dataset: &Dataset,
    scores: &ScoreTable,
    index: &TripletIndex,
    cut: CutRule,
) -> Result<InternalPlan> {
    let agg = aggregate_scores(dataset, scores)?;
    let rules = transfer_rules(&agg, index)?;

    let mut diagnostics: BTreeMap<TripletType, TargetDiagnostics> = BTreeMap::new();
    let mut per_instance: BTreeMap<(String, RelId), Vec<TripletType>> = BTreeMap::new();
    let mut candidate_info: BTreeMap<(String, RelId), Candidate> = BTreeMap::new();

    for (t, rule) in &rules {
        if rule.sources.is_empty() {
            continue;
        }
        let candidates = collect_candidates(dataset, t, &rule.sources);
        diagnostics.entry(*t).or_default().candidates = candidates.len();
        for cand in candidates {
            let key = (cand.image_id.clone(), cand.rel_id);
            per_instance.entry(key.clone()).or_default().push(*t);
            candidate_info.entry(key).or_insert(cand);
        }
    }

    // Conflict resolution: an instance goes to the candidate target with the
    // highest attraction; ties break to the lower target predicate index.
    let mut assigned: BTreeMap<TripletType, Vec<Candidate>> = BTreeMap::new();
    for (key, targets) in per_instance {
        let best = targets
            .iter()
            .copied()
            .min_by(|a, b| {
                rules[b]
                    .attraction
                    .cmp(&rules[a].attraction)
                    .then(a.predicate.cmp(&b.predicate))
            })
            .expect("instance has at least one candidate target");
        assigned
            .entry(best)
            .or_default()
            .push(candidate_info[&key].clone());
    }

    let mut moves = Vec::new();
    for (t, mut candidates) in assigned {
        let diag = diagnostics.entry(t).or_default();
        diag.assigned = candidates.len();

        let mut scored: Vec<(f64, Candidate)> = candidates
            .drain(..)
            .map(|c| {
                let vector = scores
                    .get(&c.image_id, c.subj, c.obj)
                    .expect("candidate pair was scored during aggregation");
                (vector.get(t.predicate), c)
            })
            .collect();
        scored.sort_by(|(sa, ca), (sb, cb)| {
            sb.partial_cmp(sa)
                .unwrap_or(Ordering::Equal)
                .then_with(|| ca.image_id.cmp(&cb.image_id))
                .then_with(|| ca.rel_id.cmp(&cb.rel_id))
        });

        let kept: Vec<(f64, Candidate)> = match cut {
            CutRule::FixedPercent(k) => {
                let keep = ((k * scored.len() as f64) / 100.0).floor() as usize;
                scored.into_iter().take(keep).collect()
            }
            CutRule::Adaptive(spread) => {
                let threshold = adaptive_threshold(dataset, scores, &t, spread);
                scored.into_iter().filter(|(s, _)| *s > threshold).collect()
            }
        };
        diag.kept = kept.len();
        for (score, c) in kept {
            moves.push(InternalMove {
                image_id: c.image_id,
                rel_id: c.rel_id,
                src_predicate: c.src_predicate,
                tgt_predicate: t.predicate,
                tgt_score: score,
            });
        }
    }

    moves.sort_by(|a, b| a.image_id.cmp(&b.image_id).then(a.rel_id.cmp(&b.rel_id)));
    Ok(InternalPlan {
        moves,
        targets: diagnostics,
        params: Some(InternalParams {
            cut,
            score_fingerprint: scores.fingerprint().to_string(),
        }),
    })
}

/// `mean + spread * std` of the target's own instances' scores on the target
/// predicate. Population standard deviation, so single-instance targets get
/// a zero spread term.
fn adaptive_threshold(dataset: &Dataset, scores: &ScoreTable, t: &TripletType, spread: f64) -> f64 {
    let mut own = Vec::new();
    for image in dataset.images() {
        for rel in &image.relations {
            if dataset.triplet_type(image, rel) == *t {
                let vector = scores
                    .get(&image.id, rel.subj, rel.obj)
                    .expect("target instances were scored during aggregation");
                own.push(vector.get(t.predicate));
            }
        }
    }
    let n = own.len() as f64;
    let mean = own.iter().sum::<f64>() / n;
    let variance = own.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    mean + spread * variance.sqrt()
}

// Plan file format: optional manifest header line, then one move per line.

#[derive(Serialize, Deserialize)]
struct WireMove {
    image_id: String,
    rel_id: RelId,
    src_predicate: String,
    tgt_predicate: String,
    tgt_score: f64,
}

#[derive(Serialize, Deserialize)]
struct PlanHeader {
    kind: String,
    params: InternalParams,
    moves: usize,
}

pub fn write_internal_plan(plan: &InternalPlan, vocab: &Vocab, path: &Path) -> Result<()> {
    let header = plan.params.as_ref().map(|params| {
        serde_json::to_string(&serde_json::json!({
            HEADER_KEY: PlanHeader {
                kind: "internal_plan".into(),
                params: params.clone(),
                moves: plan.moves.len(),
            }
        }))
        .expect("header serialization cannot fail")
    });
    let lines = plan
        .moves
        .iter()
        .map(|m| {
            serde_json::to_string(&WireMove {
                image_id: m.image_id.clone(),
                rel_id: m.rel_id,
                src_predicate: vocab.predicate_name(m.src_predicate).to_string(),
                tgt_predicate: vocab.predicate_name(m.tgt_predicate).to_string(),
                tgt_score: m.tgt_score,
            })
            .expect("move serialization cannot fail")
        })
        .collect();
    write_lines(path, header, lines)
}

pub fn load_internal_plan(path: &Path, vocab: &Vocab) -> Result<InternalPlan> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut plan = InternalPlan::empty();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        if idx == 0 {
            if let Ok(value) = serde_json::from_str::<serde_json::Value>(&line) {
                if let Some(header) = value.get(HEADER_KEY) {
                    if let Ok(parsed) = serde_json::from_value::<PlanHeader>(header.clone()) {
                        plan.params = Some(parsed.params);
                    }
                    continue;
                }
            }
        }
        let wire: WireMove = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        let lookup = |name: &str| {
            vocab.predicate_index(name).ok_or_else(|| {
                Error::Plan(format!(
                    "{}:{}: unknown predicate {name:?}",
                    path.display(),
                    idx + 1
                ))
            })
        };
        plan.moves.push(InternalMove {
            src_predicate: lookup(&wire.src_predicate)?,
            tgt_predicate: lookup(&wire.tgt_predicate)?,
            image_id: wire.image_id,
            rel_id: wire.rel_id,
            tgt_score: wire.tgt_score,
        });
    }
    Ok(plan)
}

/// Export per-class-pair confusion data as CSV: one file per pair, one row
/// per annotated predicate, columns are the aggregated mean scores.
pub fn export_confusion_csv(
    agg: &AggregatedScores,
    vocab: &Vocab,
    dir: &Path,
    pair: Option<(ObjectClassId, ObjectClassId)>,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut by_pair: BTreeMap<(ObjectClassId, ObjectClassId), Vec<(&TripletType, &Aggregate)>> =
        BTreeMap::new();
    for (t, entry) in agg.types() {
        if pair.is_some_and(|p| p != (t.subj_class, t.obj_class)) {
            continue;
        }
        by_pair
            .entry((t.subj_class, t.obj_class))
            .or_default()
            .push((t, entry));
    }
    let sanitize = |name: &str| -> String {
        name.chars()
            .map(|c| if c.is_alphanumeric() { c } else { '_' })
            .collect()
    };
    let mut written = Vec::new();
    for ((cs, co), rows) in by_pair {
        let file_name = format!(
            "{}__{}.csv",
            sanitize(vocab.object_name(cs)),
            sanitize(vocab.object_name(co))
        );
        let path = dir.join(file_name);
        let mut writer = csv::Writer::from_path(&path).map_err(|e| Error::Plan(e.to_string()))?;
        let mut header = vec!["predicate".to_string(), "NA".to_string()];
        header.extend(vocab.predicate_classes().iter().cloned());
        writer
            .write_record(&header)
            .map_err(|e| Error::Plan(e.to_string()))?;
        for (t, entry) in rows {
            let mut record = vec![vocab.predicate_name(t.predicate).to_string()];
            record.extend(entry.mean.iter().map(|v| format!("{v:.6}")));
            writer
                .write_record(&record)
                .map_err(|e| Error::Plan(e.to_string()))?;
        }
        writer.flush().map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
