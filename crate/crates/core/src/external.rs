//! External transfer: assign labels to unannotated overlapping object pairs
//! whose class pair already carries annotated triplet types, ranked by NA
//! score ascending (low NA score means likely missed annotation).

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::io::{write_lines, HEADER_KEY};
use crate::model::{iou, Dataset, ObjectClassId, ObjectId, PredicateId, TripletIndex, Vocab};
use crate::scorer::{PairKey, ScoreTable, ScoreVector};

/// An unannotated ordered object pair with overlapping boxes.
#[derive(Debug, Clone, PartialEq)]
pub struct NACandidate {
    pub image_id: String,
    pub subj: ObjectId,
    pub obj: ObjectId,
    pub subj_class: ObjectClassId,
    pub obj_class: ObjectClassId,
    /// NA slot of the pair's score vector, filled in during plan building.
    pub na_score: Option<f64>,
    pub assigned_predicate: Option<PredicateId>,
}

impl NACandidate {
    pub fn pair_key(&self) -> PairKey {
        (self.image_id.clone(), self.subj, self.obj)
    }
}

/// All ordered object pairs `(s, o)`, `s != o`, with no annotation on the
/// ordered pair and strictly positive box overlap. Edge-touching boxes have
/// zero intersection area and are excluded.
pub fn enumerate_na(dataset: &Dataset) -> Vec<NACandidate> {
    let per_image: Vec<Vec<NACandidate>> = dataset
        .images()
        .par_iter()
        .map(|image| {
            let annotated: BTreeSet<(ObjectId, ObjectId)> =
                image.relations.iter().map(|r| (r.subj, r.obj)).collect();
            let mut out = Vec::new();
            for subj in 0..image.objects.len() {
                for obj in 0..image.objects.len() {
                    if subj == obj || annotated.contains(&(subj, obj)) {
                        continue;
                    }
                    if iou(&image.objects[subj].bbox, &image.objects[obj].bbox) <= 0.0 {
                        continue;
                    }
                    out.push(NACandidate {
                        image_id: image.id.clone(),
                        subj,
                        obj,
                        subj_class: image.objects[subj].class,
                        obj_class: image.objects[obj].class,
                        na_score: None,
                        assigned_predicate: None,
                    });
                }
            }
            out
        })
        .collect();
    per_image.into_iter().flatten().collect()
}

/// Candidate target predicates: everything annotated at least once on the
/// candidate's class pair. Never contains the NA slot.
pub fn candidate_targets(candidate: &NACandidate, index: &TripletIndex) -> BTreeSet<PredicateId> {
    index
        .predicates_for_pair(candidate.subj_class, candidate.obj_class)
        .collect()
}

/// Highest-scoring predicate within the target set, NA slot ignored, ties to
/// the lower index. `None` when the target set is empty.
pub fn assign_label(vector: &ScoreVector, targets: &BTreeSet<PredicateId>) -> Option<PredicateId> {
    targets.iter().copied().max_by(|&a, &b| {
        vector
            .get(a)
            .partial_cmp(&vector.get(b))
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(b.cmp(&a))
    })
}

/// The `n` most frequent predicates by instance count, ties to the lower
/// index.
pub fn head_predicate_set(index: &TripletIndex, n: usize) -> BTreeSet<PredicateId> {
    let mut totals: Vec<(PredicateId, u64)> = index.predicate_totals().collect();
    totals.sort_by(|(pa, na), (pb, nb)| nb.cmp(na).then(pa.cmp(pb)));
    totals.into_iter().take(n).map(|(p, _)| p).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalAddition {
    pub image_id: String,
    pub subj: ObjectId,
    pub obj: ObjectId,
    pub predicate: PredicateId,
    pub na_score: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalStats {
    /// Candidates handed to the plan builder.
    pub candidates: usize,
    /// Candidates skipped because no triplet type exists for their class pair.
    pub empty_target_set: usize,
    /// Candidates dropped because their assigned predicate is a head class.
    pub head_excluded: usize,
    /// Candidates eligible for the cut.
    pub eligible: usize,
    /// Additions kept.
    pub kept: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalParams {
    pub k_percent: f64,
    pub head_exclude: usize,
    pub score_fingerprint: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExternalPlan {
    /// Kept additions, sorted by NA score ascending.
    pub additions: Vec<ExternalAddition>,
    pub excluded_head_predicates: BTreeSet<PredicateId>,
    pub stats: ExternalStats,
    pub params: Option<ExternalParams>,
}

impl ExternalPlan {
    pub fn empty() -> Self {
        ExternalPlan {
            additions: Vec::new(),
            excluded_head_predicates: BTreeSet::new(),
            stats: ExternalStats::default(),
            params: None,
        }
    }
}

/// Assign labels, drop head-class assignments, rank by NA score ascending
/// (ties by pair key) and keep the top `k_percent`%.
pub fn build_external_plan(
    candidates: &[NACandidate],
    scores: &ScoreTable,
    index: &TripletIndex,
    k_percent: f64,
    head_exclude: usize,
) -> Result<ExternalPlan> {
    if !(0.0..=100.0).contains(&k_percent) {
        return Err(Error::Config(format!(
            "external transfer percentage must be in [0, 100], got {k_percent}"
        )));
    }
    let head = head_predicate_set(index, head_exclude);
    let mut stats = ExternalStats {
        candidates: candidates.len(),
        ..ExternalStats::default()
    };

    let mut labeled: Vec<NACandidate> = Vec::new();
    for candidate in candidates {
        let targets = candidate_targets(candidate, index);
        if targets.is_empty() {
            stats.empty_target_set += 1;
            continue;
        }
        let vector = scores
            .get(&candidate.image_id, candidate.subj, candidate.obj)
            .ok_or_else(|| {
                Error::Score(format!(
                    "missing score vector for NA pair ({}, {}, {})",
                    candidate.image_id, candidate.subj, candidate.obj
                ))
            })?;
        let predicate = assign_label(vector, &targets).expect("target set is non-empty");
        if head.contains(&predicate) {
            stats.head_excluded += 1;
            continue;
        }
        let mut c = candidate.clone();
        c.na_score = Some(vector.na());
        c.assigned_predicate = Some(predicate);
        labeled.push(c);
    }

    stats.eligible = labeled.len();
    labeled.sort_by(|a, b| {
        a.na_score
            .partial_cmp(&b.na_score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.image_id.cmp(&b.image_id))
            .then_with(|| a.subj.cmp(&b.subj))
            .then_with(|| a.obj.cmp(&b.obj))
    });
    let keep = ((k_percent * labeled.len() as f64) / 100.0).floor() as usize;
    let additions: Vec<ExternalAddition> = labeled
        .into_iter()
        .take(keep)
        .map(|c| ExternalAddition {
            image_id: c.image_id,
            subj: c.subj,
            obj: c.obj,
            predicate: c.assigned_predicate.expect("labeled candidate"),
            na_score: c.na_score.expect("labeled candidate"),
        })
        .collect();
    stats.kept = additions.len();

    Ok(ExternalPlan {
        additions,
        excluded_head_predicates: head,
        stats,
        params: Some(ExternalParams {
            k_percent,
            head_exclude,
            score_fingerprint: scores.fingerprint().to_string(),
        }),
    })
}

// Plan file format: optional manifest header line, then one addition per line.

#[derive(Serialize, Deserialize)]
struct WireAddition {
    image_id: String,
    subj: ObjectId,
    obj: ObjectId,
    predicate: String,
    na_score: f64,
}

#[derive(Serialize, Deserialize)]
struct PlanHeader {
    kind: String,
    params: ExternalParams,
    excluded_head_predicates: Vec<String>,
    stats: ExternalStats,
}

pub fn write_external_plan(plan: &ExternalPlan, vocab: &Vocab, path: &Path) -> Result<()> {
    let header = plan.params.as_ref().map(|params| {
        serde_json::to_string(&serde_json::json!({
            HEADER_KEY: PlanHeader {
                kind: "external_plan".into(),
                params: params.clone(),
                excluded_head_predicates: plan
                    .excluded_head_predicates
                    .iter()
                    .map(|&p| vocab.predicate_name(p).to_string())
                    .collect(),
                stats: plan.stats,
            }
        }))
        .expect("header serialization cannot fail")
    });
    let lines = plan
        .additions
        .iter()
        .map(|a| {
            serde_json::to_string(&WireAddition {
                image_id: a.image_id.clone(),
                subj: a.subj,
                obj: a.obj,
                predicate: vocab.predicate_name(a.predicate).to_string(),
                na_score: a.na_score,
            })
            .expect("addition serialization cannot fail")
        })
        .collect();
    write_lines(path, header, lines)
}

pub fn load_external_plan(path: &Path, vocab: &Vocab) -> Result<ExternalPlan> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut plan = ExternalPlan::empty();
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
                        plan.stats = parsed.stats;
                        for name in parsed.excluded_head_predicates {
                            if let Some(p) = vocab.predicate_index(&name) {
                                plan.excluded_head_predicates.insert(p);
                            }
                        }
                    }
                    continue;
                }
            }
        }
        let wire: WireAddition = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        let predicate = vocab.predicate_index(&wire.predicate).ok_or_else(|| {
            Error::Plan(format!(
                "{}:{}: unknown predicate {:?}",
                path.display(),
                idx + 1,
                wire.predicate
            ))
        })?;
        plan.additions.push(ExternalAddition {
            image_id: wire.image_id,
            subj: wire.subj,
            obj: wire.obj,
            predicate,
            na_score: wire.na_score,
        });
    }
    Ok(plan)
}

/// Additions per predicate class as TSV, count descending, ties by name.
pub fn write_addition_summary_tsv(plan: &ExternalPlan, vocab: &Vocab, path: &Path) -> Result<()> {
    let mut counts: BTreeMap<PredicateId, u64> = BTreeMap::new();
    for addition in &plan.additions {
        *counts.entry(addition.predicate).or_insert(0) += 1;
    }
    let mut rows: Vec<(String, u64)> = counts
        .into_iter()
        .map(|(p, n)| (vocab.predicate_name(p).to_string(), n))
        .collect();
    rows.sort_by(|(na, ca), (nb, cb)| cb.cmp(ca).then(na.cmp(nb)));
    let mut lines = vec!["predicate\tadditions".to_string()];
    lines.extend(rows.into_iter().map(|(n, c)| format!("{n}\t{c}")));
    write_lines(path, None, lines)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        build_triplet_index, BBox, Image, ObjectInstance, Provenance, RelationInstance,
        TripletType, Vocab,
    };

    fn obj(class: usize, offset: f64) -> ObjectInstance {
        ObjectInstance {
            class,
            bbox: BBox::new(offset, offset, offset + 10.0, offset + 10.0).unwrap(),
        }
    }

    fn rel(subj: usize, obj: usize, predicate: usize) -> RelationInstance {
        RelationInstance {
            subj,
            obj,
            predicate,
            provenance: Provenance::Original,
        }
    }

    fn vocab() -> Vocab {
        Vocab::new(
            vec!["man".into(), "kite".into(), "beach".into()],
            vec![
                "flying".into(),
                "holding".into(),
                "standing_on".into(),
                "near".into(),
            ],
        )
        .unwrap()
    }

    #[test]
    fn disjoint_boxes_yield_no_candidates() {
        let images = vec![Image {
            id: "i".into(),
            objects: vec![obj(0, 0.0), obj(1, 50.0)],
            relations: vec![],
        }];
        let d = Dataset::new(vocab(), images).unwrap();
        assert!(enumerate_na(&d).is_empty());
    }

    #[test]
    fn three_overlapping_objects_one_annotated_pair() {
        // 3 * 2 ordered pairs minus the annotated one.
        let images = vec![Image {
            id: "i".into(),
            objects: vec![obj(0, 0.0), obj(1, 2.0), obj(2, 4.0)],
            relations: vec![rel(0, 1, 1)],
        }];
        let d = Dataset::new(vocab(), images).unwrap();
        let cands = enumerate_na(&d);
        assert_eq!(cands.len(), 5);
        assert!(cands.iter().all(|c| !(c.subj == 0 && c.obj == 1)));
        // The reverse of the annotated pair is still a candidate.
        assert!(cands.iter().any(|c| c.subj == 1 && c.obj == 0));
    }

    #[test]
    fn edge_touching_boxes_excluded() {
        let images = vec![Image {
            id: "i".into(),
            objects: vec![
                ObjectInstance {
                    class: 0,
                    bbox: BBox::new(0.0, 0.0, 10.0, 10.0).unwrap(),
                },
                ObjectInstance {
                    class: 1,
                    bbox: BBox::new(10.0, 0.0, 20.0, 10.0).unwrap(),
                },
            ],
            relations: vec![],
        }];
        let d = Dataset::new(vocab(), images).unwrap();
        assert!(enumerate_na(&d).is_empty());
    }

    fn candidate(subj_class: usize, obj_class: usize) -> NACandidate {
        NACandidate {
            image_id: "i".into(),
            subj: 0,
            obj: 1,
            subj_class,
            obj_class,
            na_score: None,
            assigned_predicate: None,
        }
    }

    #[test]
    fn candidate_targets_from_existing_types() {
        // (man, flying, kite) x5 and (man, holding, kite) x2.
        let idx = TripletIndex::from_counts([
            (TripletType::new(0, 1, 1), 5),
            (TripletType::new(0, 2, 1), 2),
        ]);
        let tar = candidate_targets(&candidate(0, 1), &idx);
        assert_eq!(tar, BTreeSet::from([1, 2]));
        assert!(!tar.contains(&0), "NA is never a target");
        assert!(candidate_targets(&candidate(2, 0), &idx).is_empty());
    }

    #[test]
    fn assign_label_argmax_within_targets() {
        let v = ScoreVector::new(vec![0.60, 0.25, 0.10, 0.03, 0.02], 5).unwrap();
        // standing_on = 0.03, flying = 0.25.
        let tar = BTreeSet::from([3, 1]);
        assert_eq!(assign_label(&v, &tar), Some(1));

        // Singleton target wins regardless of scores.
        assert_eq!(assign_label(&v, &BTreeSet::from([4])), Some(4));

        // A large out-of-target entry is ignored.
        let v = ScoreVector::new(vec![0.05, 0.80, 0.05, 0.06, 0.04], 5).unwrap();
        assert_eq!(assign_label(&v, &BTreeSet::from([2, 3])), Some(3));

        assert_eq!(assign_label(&v, &BTreeSet::new()), None);

        // Ties break to the lower predicate index.
        let v = ScoreVector::new(vec![0.2, 0.2, 0.2, 0.2, 0.2], 5).unwrap();
        assert_eq!(assign_label(&v, &BTreeSet::from([2, 3, 4])), Some(2));
    }

    fn plan_fixture() -> (Dataset, TripletIndex, Vec<NACandidate>, ScoreTable) {
        // Three images, each with one unannotated overlapping (man, kite)
        // pair; one extra image provides the (man, flying, kite) type.
        let mut images: Vec<Image> = (0..3)
            .map(|i| Image {
                id: format!("na{i}"),
                objects: vec![obj(0, 0.0), obj(1, 2.0)],
                relations: vec![],
            })
            .collect();
        images.push(Image {
            id: "train".into(),
            objects: vec![obj(0, 0.0), obj(1, 2.0)],
            relations: vec![rel(0, 1, 1)],
        });
        let d = Dataset::new(vocab(), images).unwrap();
        let idx = build_triplet_index(&d);
        let cands = enumerate_na(&d);
        let mut scores = ScoreTable::new(d.vocab().fingerprint());
        let na_by_image = [0.9, 0.1, 0.5];
        for c in &cands {
            // Reverse-direction pairs have an empty target set and never
            // reach the score lookup.
            if !c.image_id.starts_with("na") || c.subj != 0 {
                continue;
            }
            let i: usize = c.image_id.trim_start_matches("na").parse().unwrap();
            let na = na_by_image[i];
            let rest = (1.0 - na) / 4.0;
            scores
                .insert(
                    c.pair_key(),
                    ScoreVector::new(vec![na, rest, rest, rest, rest], 5).unwrap(),
                )
                .unwrap();
        }
        (d, idx, cands, scores)
    }

    #[test]
    fn cut_uses_floor_arithmetic_on_ascending_na() {
        let (_d, idx, cands, scores) = plan_fixture();
        // Only (man -> kite) candidates have a non-empty target set; the
        // reverse pairs are dropped. Three eligible candidates remain.
        let plan = build_external_plan(&cands, &scores, &idx, 0.0, 0).unwrap();
        assert!(plan.additions.is_empty());

        let plan = build_external_plan(&cands, &scores, &idx, 33.0, 0).unwrap();
        assert!(plan.additions.is_empty(), "floor(0.99) = 0");
        assert_eq!(plan.stats.eligible, 3);
        assert_eq!(
            plan.stats.empty_target_set, 4,
            "three reverse pairs plus one in the train image"
        );

        let plan = build_external_plan(&cands, &scores, &idx, 34.0, 0).unwrap();
        assert_eq!(plan.additions.len(), 1, "floor(1.02) = 1");
        assert_eq!(plan.additions[0].image_id, "na1", "lowest NA score first");
        assert_eq!(plan.additions[0].na_score, 0.1);
        assert_eq!(plan.additions[0].predicate, 1);

        let plan = build_external_plan(&cands, &scores, &idx, 100.0, 0).unwrap();
        let order: Vec<&str> = plan.additions.iter().map(|a| a.image_id.as_str()).collect();
        assert_eq!(order, vec!["na1", "na2", "na0"], "ascending NA order");
    }

    #[test]
    fn head_exclusion_drops_assignments() {
        let (_d, idx, cands, scores) = plan_fixture();
        // `flying` is the only annotated predicate, hence the head class.
        let plan = build_external_plan(&cands, &scores, &idx, 100.0, 1).unwrap();
        assert!(plan.additions.is_empty());
        assert_eq!(plan.stats.head_excluded, 3);
        assert_eq!(plan.excluded_head_predicates, BTreeSet::from([1]));

        // Excluding every predicate empties the plan too.
        let plan = build_external_plan(&cands, &scores, &idx, 100.0, 4).unwrap();
        assert!(plan.additions.is_empty());
    }

    #[test]
    fn head_set_orders_by_count_then_index() {
        let idx = TripletIndex::from_counts([
            (TripletType::new(0, 1, 1), 3),
            (TripletType::new(0, 2, 1), 5),
            (TripletType::new(0, 3, 1), 3),
        ]);
        assert_eq!(head_predicate_set(&idx, 2), BTreeSet::from([2, 1]));
    }

    #[test]
    fn plan_file_round_trip() {
        let (d, idx, cands, scores) = plan_fixture();
        let plan = build_external_plan(&cands, &scores, &idx, 100.0, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plan.jsonl");
        write_external_plan(&plan, d.vocab(), &path).unwrap();
        let loaded = load_external_plan(&path, d.vocab()).unwrap();
        assert_eq!(loaded.additions, plan.additions);
        assert_eq!(loaded.params, plan.params);
        assert_eq!(loaded.stats, plan.stats);
    }
}
