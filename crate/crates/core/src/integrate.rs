//! Merging transfer plans into an enhanced dataset, plus the analysis
//! reports over plans and dataset pairs.
//!
//! Internal moves relabel annotated instances in place; external additions
//! append relations on previously unannotated pairs. The two plans touch
//! disjoint pairs, so the merge itself has no cross-plan conflicts. A move
//! can still collide with an existing relation on the same pair and
//! predicate; the merge keeps a single instance and counts the collision.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::external::{ExternalParams, ExternalPlan};
use crate::internal::{InternalParams, InternalPlan};
use crate::model::io::write_lines;
use crate::model::{
    canonical_dataset_lines, load_dataset_with_header, Dataset, PredicateId, Provenance,
    RelationInstance, Vocab,
};

/// Tie-break rules baked into plan building, recorded for reproducibility.
pub const TIE_BREAK_POLICY: &str = "attraction ties to lower predicate index; \
     score ties to (image_id, rel_id); NA ties to (image_id, subj, obj)";

/// Standard-deviation convention of the adaptive cut.
pub const SIGMA_CONVENTION: &str = "population";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeManifest {
    pub internal: Option<InternalParams>,
    pub external: Option<ExternalParams>,
    pub tie_break_policy: String,
    pub sigma_convention: String,
    pub moves: usize,
    pub additions: usize,
    pub collisions: u64,
}

/// A merged dataset carrying the run parameters that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct EnhancedDataset {
    pub dataset: Dataset,
    pub manifest: MergeManifest,
}

/// Apply an internal and an external plan to a dataset.
pub fn merge(
    dataset: &Dataset,
    internal: &InternalPlan,
    external: &ExternalPlan,
) -> Result<EnhancedDataset> {
    let mut images = dataset.images().to_vec();
    let positions: HashMap<&str, usize> = dataset
        .images()
        .iter()
        .enumerate()
        .map(|(i, im)| (im.id.as_str(), i))
        .collect();

    for m in &internal.moves {
        let &pos = positions
            .get(m.image_id.as_str())
            .ok_or_else(|| Error::Plan(format!("move references unknown image {}", m.image_id)))?;
        let image = &mut images[pos];
        let rel = image.relations.get_mut(m.rel_id).ok_or_else(|| {
            Error::Plan(format!(
                "move references unknown rel_id {} in image {}",
                m.rel_id, m.image_id
            ))
        })?;
        if rel.predicate != m.src_predicate {
            return Err(Error::Plan(format!(
                "move source mismatch in image {} rel {}: plan says {}, dataset has {}",
                m.image_id, m.rel_id, m.src_predicate, rel.predicate
            )));
        }
        if !rel.provenance.is_original() {
            return Err(Error::Plan(format!(
                "move targets non-original relation {} in image {}",
                m.rel_id, m.image_id
            )));
        }
        rel.predicate = m.tgt_predicate;
        rel.provenance = Provenance::InternalTransfer {
            src: m.src_predicate,
        };
    }

    // A move may now duplicate an existing (subj, obj, predicate); keep the
    // first occurrence.
    let mut collisions = 0u64;
    for image in &mut images {
        let mut seen = std::collections::BTreeSet::new();
        let before = image.relations.len();
        image
            .relations
            .retain(|r| seen.insert((r.subj, r.obj, r.predicate)));
        collisions += (before - image.relations.len()) as u64;
    }

    for a in &external.additions {
        let &pos = positions.get(a.image_id.as_str()).ok_or_else(|| {
            Error::Plan(format!("addition references unknown image {}", a.image_id))
        })?;
        let image = &mut images[pos];
        if a.subj >= image.objects.len() || a.obj >= image.objects.len() {
            return Err(Error::Plan(format!(
                "addition references missing objects in image {}",
                a.image_id
            )));
        }
        if image
            .relations
            .iter()
            .any(|r| r.subj == a.subj && r.obj == a.obj)
        {
            return Err(Error::Plan(format!(
                "addition targets an annotated pair ({}, {}, {})",
                a.image_id, a.subj, a.obj
            )));
        }
        image.relations.push(RelationInstance {
            subj: a.subj,
            obj: a.obj,
            predicate: a.predicate,
            provenance: Provenance::ExternalTransfer,
        });
    }

    let manifest = MergeManifest {
        internal: internal.params.clone(),
        external: external.params.clone(),
        tie_break_policy: TIE_BREAK_POLICY.to_string(),
        sigma_convention: SIGMA_CONVENTION.to_string(),
        moves: internal.moves.len(),
        additions: external.additions.len(),
        collisions,
    };
    Ok(EnhancedDataset {
        dataset: Dataset::new(dataset.vocab().clone(), images)?,
        manifest,
    })
}

/// Write an enhanced dataset: manifest header line, then the canonical form.
pub fn write_enhanced(enhanced: &EnhancedDataset, path: &Path) -> Result<()> {
    let header = serde_json::to_string(&serde_json::json!({
        crate::model::io::HEADER_KEY: enhanced.manifest
    }))
    .expect("manifest serialization cannot fail");
    write_lines(
        path,
        Some(header),
        canonical_dataset_lines(&enhanced.dataset),
    )
}

/// Load an enhanced dataset and its embedded manifest, if present.
pub fn load_enhanced(path: &Path, vocab: &Vocab) -> Result<(Dataset, Option<MergeManifest>)> {
    let (dataset, header) = load_dataset_with_header(path, vocab)?;
    let manifest = header.and_then(|h| serde_json::from_value(h).ok());
    Ok((dataset, manifest))
}

/// One rank bin of the distribution-change report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistributionBin {
    pub bin: usize,
    /// Frequency ranks covered, `rank_lo..rank_hi`.
    pub rank_lo: usize,
    pub rank_hi: usize,
    pub before: u64,
    pub after: u64,
    /// `log10` of the counts; absent when the count is zero.
    pub log10_before: Option<f64>,
    pub log10_after: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistributionReport {
    pub rows: Vec<DistributionBin>,
}

impl DistributionReport {
    pub fn to_tsv(&self) -> String {
        let mut out =
            String::from("bin\trank_lo\trank_hi\tbefore\tafter\tlog10_before\tlog10_after\n");
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
        for row in &self.rows {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                row.bin,
                row.rank_lo,
                row.rank_hi,
                row.before,
                row.after,
                fmt(row.log10_before),
                fmt(row.log10_after)
            ));
        }
        out
    }
}

/// Per-bin instance counts before and after enhancement, with predicates
/// ranked by their original frequency (descending, ties to the lower index)
/// and grouped into equal-width rank bins. Predicates absent from both
/// datasets are left out of the ranking.
pub fn distribution_report(
    before: &Dataset,
    after: &Dataset,
    bins: usize,
) -> Result<DistributionReport> {
    if before.vocab().fingerprint() != after.vocab().fingerprint() {
        return Err(Error::Eval("datasets use different vocabs".into()));
    }
    if bins == 0 {
        return Err(Error::Config("bin count must be positive".into()));
    }
    let before_counts = before.predicate_instance_counts();
    let after_counts = after.predicate_instance_counts();

    let mut ranked: Vec<PredicateId> = (1..before_counts.len())
        .filter(|&p| before_counts[p] > 0 || after_counts[p] > 0)
        .collect();
    ranked.sort_by(|&a, &b| before_counts[b].cmp(&before_counts[a]).then(a.cmp(&b)));

    let n = ranked.len();
    let width = n.div_ceil(bins).max(1);
    let mut rows = Vec::new();
    for bin in 0..bins {
        let lo = bin * width;
        if lo >= n {
            break;
        }
        let hi = ((bin + 1) * width).min(n);
        let before_total: u64 = ranked[lo..hi].iter().map(|&p| before_counts[p]).sum();
        let after_total: u64 = ranked[lo..hi].iter().map(|&p| after_counts[p]).sum();
        let log = |v: u64| (v > 0).then(|| (v as f64).log10());
        rows.push(DistributionBin {
            bin,
            rank_lo: lo,
            rank_hi: hi,
            before: before_total,
            after: after_total,
            log10_before: log(before_total),
            log10_after: log(after_total),
        });
    }
    Ok(DistributionReport { rows })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransferPairRow {
    pub src: String,
    pub tgt: String,
    pub moved: u64,
}

/// Source/target predicate pairs aggregated over all moves, ranked by how
/// many instances were transferred (ties lexicographic by names).
pub fn transfer_pair_report(
    plan: &InternalPlan,
    top_n: Option<usize>,
    vocab: &Vocab,
) -> Vec<TransferPairRow> {
    let mut counts: BTreeMap<(PredicateId, PredicateId), u64> = BTreeMap::new();
    for m in &plan.moves {
        *counts
            .entry((m.src_predicate, m.tgt_predicate))
            .or_insert(0) += 1;
    }
    let mut rows: Vec<TransferPairRow> = counts
        .into_iter()
        .map(|((src, tgt), moved)| TransferPairRow {
            src: vocab.predicate_name(src).to_string(),
            tgt: vocab.predicate_name(tgt).to_string(),
            moved,
        })
        .collect();
    rows.sort_by(|a, b| {
        b.moved
            .cmp(&a.moved)
            .then_with(|| a.src.cmp(&b.src))
            .then_with(|| a.tgt.cmp(&b.tgt))
    });
    if let Some(n) = top_n {
        rows.truncate(n);
    }
    rows
}

pub fn transfer_pairs_to_tsv(rows: &[TransferPairRow]) -> String {
    let mut out = String::from("general\tinformative\tmoved\n");
    for row in rows {
        out.push_str(&format!("{}\t{}\t{}\n", row.src, row.tgt, row.moved));
    }
    out
}
