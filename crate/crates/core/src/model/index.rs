//! Triplet-type counting over a dataset.

use std::collections::{BTreeMap, BTreeSet};

use super::{Dataset, ObjectClassId, PredicateId, TripletType};

/// Per-type instance counts `N(t)` and per-predicate totals.
///
/// Absent keys mean `N(t) = 0`, i.e. the type does not exist in the
/// indexed dataset. Immutable after construction.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TripletIndex {
    counts: BTreeMap<TripletType, u64>,
    predicate_totals: BTreeMap<PredicateId, u64>,
    pair_predicates: BTreeMap<(ObjectClassId, ObjectClassId), BTreeSet<PredicateId>>,
}

impl TripletIndex {
    /// Build from explicit per-type counts. Zero counts are dropped.
    pub fn from_counts<I: IntoIterator<Item = (TripletType, u64)>>(counts: I) -> Self {
        let mut index = TripletIndex::default();
        for (t, n) in counts {
            if n > 0 {
                index.add(t, n);
            }
        }
        index
    }

    fn add(&mut self, t: TripletType, n: u64) {
        *self.counts.entry(t).or_insert(0) += n;
        *self.predicate_totals.entry(t.predicate).or_insert(0) += n;
        self.pair_predicates
            .entry((t.subj_class, t.obj_class))
            .or_default()
            .insert(t.predicate);
    }

    /// `N(t)`: exact number of relation instances with this type.
    pub fn count(&self, t: &TripletType) -> u64 {
        self.counts.get(t).copied().unwrap_or(0)
    }

    /// `I(t)`: whether the type exists (equivalently `N(t) >= 1`).
    pub fn exists(&self, t: &TripletType) -> bool {
        self.counts.contains_key(t)
    }

    /// Total instances over all types sharing this predicate.
    pub fn predicate_total(&self, p: PredicateId) -> u64 {
        self.predicate_totals.get(&p).copied().unwrap_or(0)
    }

    /// Predicates annotated at least once on the given class pair.
    pub fn predicates_for_pair(
        &self,
        subj_class: ObjectClassId,
        obj_class: ObjectClassId,
    ) -> impl Iterator<Item = PredicateId> + '_ {
        self.pair_predicates
            .get(&(subj_class, obj_class))
            .into_iter()
            .flat_map(|set| set.iter().copied())
    }

    /// All stored types in deterministic order.
    pub fn types(&self) -> impl Iterator<Item = (&TripletType, u64)> {
        self.counts.iter().map(|(t, n)| (t, *n))
    }

    pub fn num_types(&self) -> usize {
        self.counts.len()
    }

    /// Per-predicate totals in deterministic order.
    pub fn predicate_totals(&self) -> impl Iterator<Item = (PredicateId, u64)> + '_ {
        self.predicate_totals.iter().map(|(p, n)| (*p, *n))
    }
}

/// Count every relation instance by its `(subject class, predicate, object
/// class)` type. Permutation-invariant over image and relation order.
pub fn build_triplet_index(dataset: &Dataset) -> TripletIndex {
    let mut index = TripletIndex::default();
    for image in dataset.images() {
        for rel in &image.relations {
            index.add(dataset.triplet_type(image, rel), 1);
        }
    }
    index
}
