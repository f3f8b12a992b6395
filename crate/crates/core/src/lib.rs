//! Relabeling engine and evaluation toolkit for scene-graph corpora.
//!
//! The library turns a long-tailed, ambiguously labeled relation dataset into
//! an enhanced dataset through two passes over the training annotations:
//!
//! * **internal transfer** relabels instances of general predicates as their
//!   confusable, more informative counterparts, judged per triplet type by
//!   score aggregation and attraction factors;
//! * **external transfer** assigns labels to unannotated overlapping object
//!   pairs whose class pair already carries annotated triplet types, ranked
//!   by NA score.
//!
//! Around the two passes sit the corpus data model with canonical JSONL I/O,
//! a frequency-baseline scorer (so the pipeline runs without any neural
//! model), plan merging with provenance, micro/macro evaluation families,
//! a constraint-respecting split builder, and a synthetic corpus generator
//! for end-to-end testing.

pub mod builder;
pub mod error;
pub mod eval;
pub mod external;
pub mod integrate;
pub mod internal;
pub mod manifest;
pub mod model;
pub mod scorer;

pub use error::{Error, Result};
pub use model::{
    build_triplet_index, iou, load_dataset, load_vocab, write_dataset, BBox, Dataset, Image,
    ObjectClassId, ObjectId, ObjectInstance, PredicateId, Provenance, RelId, RelationInstance,
    TripletIndex, TripletType, Vocab, NA_INDEX,
};
pub use scorer::{
    annotated_pairs, fit_frequency_baseline, load_external_scores, score_annotated,
    score_na_candidates, score_pair, score_pairs, write_scores_binary, write_scores_jsonl,
    FrequencyBaseline, PairKey, ScoreSource, ScoreTable, ScoreVector,
};
