//! Corpus data model: vocabulary, geometry, object and relation instances,
//! triplet types, and the triplet index.
//!
//! Identifiers are dense integers assigned at load time in file order.
//! `object_id` and `rel_id` are positions in the per-image vectors, which
//! keeps all downstream tie-breaking fully deterministic.

mod index;
pub(crate) mod io;

pub use index::{build_triplet_index, TripletIndex};
pub use io::{
    canonical_dataset_lines, file_fingerprint, load_dataset, load_dataset_with_header, load_vocab,
    write_dataset, write_dataset_with_header,
};

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Index into [`Vocab::object_classes`].
pub type ObjectClassId = usize;
/// Score-axis predicate index. Valid relation predicates are `>= 1`;
/// index 0 is the reserved NA slot and never appears on a relation.
pub type PredicateId = usize;
/// Position of an object within its image (dense, ascending).
pub type ObjectId = usize;
/// Position of a relation within its image (dense, ascending).
pub type RelId = usize;

/// Reserved score-axis slot for the NA (unannotated) pseudo-predicate.
pub const NA_INDEX: usize = 0;

/// Object and predicate class names with stable index order.
///
/// Predicate `p` (with `p >= 1`) names `predicate_classes[p - 1]`; the
/// score axis therefore has length `predicate_classes.len() + 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    object_classes: Vec<String>,
    predicate_classes: Vec<String>,
    object_lookup: HashMap<String, ObjectClassId>,
    predicate_lookup: HashMap<String, PredicateId>,
}

fn check_names(kind: &str, names: &[String]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for name in names {
        if name.is_empty() {
            return Err(Error::Vocab(format!("empty {kind} class name")));
        }
        if name.chars().any(|c| c.is_control()) {
            return Err(Error::Vocab(format!(
                "{kind} class name {name:?} contains control characters"
            )));
        }
        if !seen.insert(name.as_str()) {
            return Err(Error::Vocab(format!(
                "duplicate {kind} class name {name:?}"
            )));
        }
    }
    Ok(())
}

impl Vocab {
    pub fn new(object_classes: Vec<String>, predicate_classes: Vec<String>) -> Result<Self> {
        check_names("object", &object_classes)?;
        check_names("predicate", &predicate_classes)?;
        let object_lookup = object_classes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        let predicate_lookup = predicate_classes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i + 1))
            .collect();
        Ok(Vocab {
            object_classes,
            predicate_classes,
            object_lookup,
            predicate_lookup,
        })
    }

    pub fn object_classes(&self) -> &[String] {
        &self.object_classes
    }

    pub fn predicate_classes(&self) -> &[String] {
        &self.predicate_classes
    }

    pub fn num_object_classes(&self) -> usize {
        self.object_classes.len()
    }

    pub fn num_predicates(&self) -> usize {
        self.predicate_classes.len()
    }

    /// Length of a score vector: one slot per predicate plus the NA slot.
    pub fn score_len(&self) -> usize {
        self.predicate_classes.len() + 1
    }

    pub fn object_index(&self, name: &str) -> Option<ObjectClassId> {
        self.object_lookup.get(name).copied()
    }

    /// Predicate index on the score axis (always `>= 1`).
    pub fn predicate_index(&self, name: &str) -> Option<PredicateId> {
        self.predicate_lookup.get(name).copied()
    }

    pub fn object_name(&self, id: ObjectClassId) -> &str {
        &self.object_classes[id]
    }

    /// Name of predicate `p >= 1`. Panics on the NA slot.
    pub fn predicate_name(&self, p: PredicateId) -> &str {
        assert!(p >= 1, "NA slot has no predicate name");
        &self.predicate_classes[p - 1]
    }

    /// Hash over the canonical class listings. Stamped onto score tables so
    /// that score dumps cannot silently be paired with the wrong vocab.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(b"objects\n");
        for name in &self.object_classes {
            hasher.update(name.as_bytes());
            hasher.update(b"\n");
        }
        hasher.update(b"predicates\n");
        for name in &self.predicate_classes {
            hasher.update(name.as_bytes());
            hasher.update(b"\n");
        }
        hex::encode(hasher.finalize())
    }
}

/// Axis-aligned box as a half-open real rectangle. Area is exact float
/// arithmetic with no pixel quantization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let b = BBox { x1, y1, x2, y2 };
        b.validate().map_err(Error::Box)?;
        Ok(b)
    }

    fn validate(&self) -> std::result::Result<(), String> {
        let coords = [self.x1, self.y1, self.x2, self.y2];
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(format!("non-finite box coordinates {coords:?}"));
        }
        if self.x1 >= self.x2 || self.y1 >= self.y2 {
            return Err(format!(
                "degenerate box [{}, {}, {}, {}] (must satisfy x1 < x2 and y1 < y2)",
                self.x1, self.y1, self.x2, self.y2
            ));
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1) * (self.y2 - self.y1)
    }
}

/// Intersection area over union area, in `[0, 1]`.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let ix1 = a.x1.max(b.x1);
    let iy1 = a.y1.max(b.y1);
    let ix2 = a.x2.min(b.x2);
    let iy2 = a.y2.min(b.y2);
    if ix1 >= ix2 || iy1 >= iy2 {
        return 0.0;
    }
    let inter = (ix2 - ix1) * (iy2 - iy1);
    let union = a.area() + b.area() - inter;
    inter / union
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectInstance {
    pub class: ObjectClassId,
    pub bbox: BBox,
}

/// How a relation annotation came to be in the dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Original,
    /// Relabeled from `src` by internal transfer.
    InternalTransfer {
        src: PredicateId,
    },
    /// Added from an NA pair by external transfer.
    ExternalTransfer,
}

impl Provenance {
    pub fn is_original(&self) -> bool {
        matches!(self, Provenance::Original)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationInstance {
    pub subj: ObjectId,
    pub obj: ObjectId,
    pub predicate: PredicateId,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    pub id: String,
    pub objects: Vec<ObjectInstance>,
    pub relations: Vec<RelationInstance>,
}

impl Image {
    pub fn object_class(&self, id: ObjectId) -> ObjectClassId {
        self.objects[id].class
    }
}

/// Class-level triplet `(subject class, predicate, object class)`.
/// Ordered: `(a, p, b)` and `(b, p, a)` are distinct types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TripletType {
    pub subj_class: ObjectClassId,
    pub predicate: PredicateId,
    pub obj_class: ObjectClassId,
}

impl TripletType {
    pub fn new(
        subj_class: ObjectClassId,
        predicate: PredicateId,
        obj_class: ObjectClassId,
    ) -> Self {
        TripletType {
            subj_class,
            predicate,
            obj_class,
        }
    }
}

/// A validated corpus: vocabulary plus images with objects and relations.
///
/// Immutable after construction; share freely across parallel readers.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    vocab: Vocab,
    images: Vec<Image>,
}

impl Dataset {
    /// Validates every image and canonicalizes image order by id, so equal
    /// datasets compare equal and serialize to identical bytes regardless of
    /// input order.
    pub fn new(vocab: Vocab, mut images: Vec<Image>) -> Result<Self> {
        images.sort_by(|a, b| a.id.cmp(&b.id));
        let mut seen_ids = BTreeSet::new();
        for image in &images {
            if !seen_ids.insert(image.id.as_str()) {
                return Err(Error::Invariant {
                    image_id: image.id.clone(),
                    message: "duplicate image_id".into(),
                });
            }
            validate_image(&vocab, image)?;
        }
        Ok(Dataset { vocab, images })
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    pub fn image(&self, idx: usize) -> &Image {
        &self.images[idx]
    }

    pub fn num_images(&self) -> usize {
        self.images.len()
    }

    pub fn relation_count(&self) -> usize {
        self.images.iter().map(|im| im.relations.len()).sum()
    }

    pub fn object_count(&self) -> usize {
        self.images.iter().map(|im| im.objects.len()).sum()
    }

    /// Instance count per predicate, indexed on the score axis
    /// (slot 0 is always zero).
    pub fn predicate_instance_counts(&self) -> Vec<u64> {
        let mut counts = vec![0u64; self.vocab.score_len()];
        for image in &self.images {
            for rel in &image.relations {
                counts[rel.predicate] += 1;
            }
        }
        counts
    }

    /// Triplet type of one relation instance.
    pub fn triplet_type(&self, image: &Image, rel: &RelationInstance) -> TripletType {
        TripletType::new(
            image.object_class(rel.subj),
            rel.predicate,
            image.object_class(rel.obj),
        )
    }
}

fn validate_image(vocab: &Vocab, image: &Image) -> Result<()> {
    let fail = |message: String| Error::Invariant {
        image_id: image.id.clone(),
        message,
    };
    if image.id.is_empty() {
        return Err(fail("empty image_id".into()));
    }
    for (oid, object) in image.objects.iter().enumerate() {
        if object.class >= vocab.num_object_classes() {
            return Err(fail(format!(
                "object {oid} has out-of-range class {}",
                object.class
            )));
        }
        object
            .bbox
            .validate()
            .map_err(|m| fail(format!("object {oid}: {m}")))?;
    }
    let mut quads = BTreeSet::new();
    for (rid, rel) in image.relations.iter().enumerate() {
        if rel.subj == rel.obj {
            return Err(fail(format!(
                "relation {rid} relates object {} to itself",
                rel.subj
            )));
        }
        if rel.subj >= image.objects.len() || rel.obj >= image.objects.len() {
            return Err(fail(format!(
                "relation {rid} references missing object ({} or {})",
                rel.subj, rel.obj
            )));
        }
        if rel.predicate < 1 || rel.predicate > vocab.num_predicates() {
            return Err(fail(format!(
                "relation {rid} has out-of-range predicate {}",
                rel.predicate
            )));
        }
        if let Provenance::InternalTransfer { src } = rel.provenance {
            if src < 1 || src > vocab.num_predicates() {
                return Err(fail(format!(
                    "relation {rid} has out-of-range transfer source {src}"
                )));
            }
        }
        if !quads.insert((rel.subj, rel.obj, rel.predicate)) {
            return Err(fail(format!(
                "duplicate relation ({} -> {}, predicate {})",
                rel.subj, rel.obj, rel.predicate
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bbox(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn iou_identical_boxes_is_one() {
        let b = bbox(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&b, &b), 1.0);
    }

    #[test]
    fn iou_disjoint_boxes_is_zero() {
        let a = bbox(0.0, 0.0, 10.0, 10.0);
        let b = bbox(20.0, 20.0, 30.0, 30.0);
        assert_eq!(iou(&a, &b), 0.0);
    }

    #[test]
    fn iou_partial_overlap() {
        // Intersection 5x5 = 25, union 100 + 100 - 25 = 175.
        let a = bbox(0.0, 0.0, 10.0, 10.0);
        let b = bbox(5.0, 5.0, 15.0, 15.0);
        assert!((iou(&a, &b) - 25.0 / 175.0).abs() < 1e-12);
    }

    #[test]
    fn iou_edge_touching_boxes_is_zero() {
        let a = bbox(0.0, 0.0, 10.0, 10.0);
        let b = bbox(10.0, 0.0, 20.0, 10.0);
        assert_eq!(iou(&a, &b), 0.0);
    }

    #[test]
    fn iou_symmetric_and_bounded() {
        let boxes = [
            bbox(0.0, 0.0, 4.0, 4.0),
            bbox(1.0, 1.0, 3.5, 6.0),
            bbox(2.0, -1.0, 8.0, 2.5),
        ];
        for a in &boxes {
            for b in &boxes {
                let ab = iou(a, b);
                assert_eq!(ab, iou(b, a));
                assert!((0.0..=1.0).contains(&ab));
            }
        }
    }

    #[test]
    fn degenerate_box_rejected() {
        assert!(BBox::new(0.0, 0.0, 0.0, 10.0).is_err());
        assert!(BBox::new(0.0, 5.0, 10.0, 5.0).is_err());
        assert!(BBox::new(0.0, 0.0, f64::NAN, 10.0).is_err());
    }

    #[test]
    fn vocab_rejects_duplicates_and_empty() {
        assert!(Vocab::new(vec!["a".into(), "a".into()], vec![]).is_err());
        assert!(Vocab::new(vec![], vec!["".into()]).is_err());
    }

    #[test]
    fn vocab_predicate_indices_start_at_one() {
        let v = Vocab::new(vec!["man".into()], vec!["on".into(), "riding".into()]).unwrap();
        assert_eq!(v.predicate_index("on"), Some(1));
        assert_eq!(v.predicate_index("riding"), Some(2));
        assert_eq!(v.predicate_name(2), "riding");
        assert_eq!(v.score_len(), 3);
    }

    #[test]
    fn vocab_fingerprint_changes_with_content() {
        let a = Vocab::new(vec!["man".into()], vec!["on".into()]).unwrap();
        let b = Vocab::new(vec!["man".into()], vec!["riding".into()]).unwrap();
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint(), a.fingerprint());
    }

    #[test]
    fn dataset_rejects_self_relation() {
        let vocab = Vocab::new(vec!["man".into()], vec!["on".into()]).unwrap();
        let image = Image {
            id: "i0".into(),
            objects: vec![ObjectInstance {
                class: 0,
                bbox: bbox(0.0, 0.0, 1.0, 1.0),
            }],
            relations: vec![RelationInstance {
                subj: 0,
                obj: 0,
                predicate: 1,
                provenance: Provenance::Original,
            }],
        };
        assert!(Dataset::new(vocab, vec![image]).is_err());
    }

    #[test]
    fn dataset_rejects_duplicate_quadruple() {
        let vocab = Vocab::new(vec!["man".into(), "bike".into()], vec!["on".into()]).unwrap();
        let objects = vec![
            ObjectInstance {
                class: 0,
                bbox: bbox(0.0, 0.0, 1.0, 1.0),
            },
            ObjectInstance {
                class: 1,
                bbox: bbox(0.5, 0.5, 2.0, 2.0),
            },
        ];
        let rel = RelationInstance {
            subj: 0,
            obj: 1,
            predicate: 1,
            provenance: Provenance::Original,
        };
        let image = Image {
            id: "i0".into(),
            objects,
            relations: vec![rel.clone(), rel],
        };
        assert!(Dataset::new(vocab, vec![image]).is_err());
    }
}
