//! Micro/macro metric families for predicate classification.
//!
//! The recall family ranks candidate triplets per image and asks whether
//! each ground-truth triplet lands in the top K. The accuracy family asks,
//! per ground-truth instance, whether its predicate is among the K highest
//! non-NA scores of its pair. Both report a micro metric, a macro
//! (per-predicate) metric and their harmonic mean; the accuracy family also
//! counts predicate classes with at least one correct prediction.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Dataset, PredicateId};
use crate::scorer::{ScoreTable, ScoreVector};

/// `2ab / (a + b)`, zero when both inputs are zero.
pub fn harmonic_f(micro: f64, macro_avg: f64) -> f64 {
    if micro + macro_avg == 0.0 {
        0.0
    } else {
        2.0 * micro * macro_avg / (micro + macro_avg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MetricFamily {
    Recall,
    Accuracy,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KMetrics {
    pub k: usize,
    /// Micro metric in percent (R@K or Acc).
    pub micro: f64,
    /// Macro metric in percent (mR@K or mAcc).
    pub macro_avg: f64,
    /// Harmonic mean of micro and macro.
    pub f: f64,
    /// Classes with at least one correct prediction (accuracy family only).
    pub non_zero: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredicateMetrics {
    pub predicate: String,
    pub gt_count: u64,
    /// Per-K percentage, aligned with the report's K list.
    pub per_k: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub family: MetricFamily,
    pub ks: Vec<usize>,
    pub per_k: Vec<KMetrics>,
    pub per_predicate: Vec<PredicateMetrics>,
}

impl MetricReport {
    /// Table-shaped one-liner for terminal output.
    pub fn summary_row(&self) -> String {
        let ks = self
            .ks
            .iter()
            .map(|k| k.to_string())
            .collect::<Vec<_>>()
            .join("/");
        let join = |f: &dyn Fn(&KMetrics) -> String| {
            self.per_k.iter().map(f).collect::<Vec<_>>().join(" / ")
        };
        match self.family {
            MetricFamily::Recall => format!(
                "R@{ks}: {}  mR@{ks}: {}  F@{ks}: {}",
                join(&|m| format!("{:.2}", m.micro)),
                join(&|m| format!("{:.2}", m.macro_avg)),
                join(&|m| format!("{:.2}", m.f)),
            ),
            MetricFamily::Accuracy => self
                .per_k
                .iter()
                .map(|m| {
                    format!(
                        "top-{}: Acc {:.2}  mAcc {:.2}  F-Acc {:.2}  Non-Zero {}",
                        m.k,
                        m.micro,
                        m.macro_avg,
                        m.f,
                        m.non_zero.unwrap_or(0)
                    )
                })
                .collect::<Vec<_>>()
                .join(" | "),
        }
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("k\tmicro\tmacro\tf\tnon_zero\n");
        for m in &self.per_k {
            out.push_str(&format!(
                "{}\t{:.2}\t{:.2}\t{:.2}\t{}\n",
                m.k,
                m.micro,
                m.macro_avg,
                m.f,
                m.non_zero.map(|n| n.to_string()).unwrap_or_default()
            ));
        }
        out
    }

    pub fn per_predicate_tsv(&self) -> String {
        let ks = self
            .ks
            .iter()
            .map(|k| format!("k{k}"))
            .collect::<Vec<_>>()
            .join("\t");
        let mut out = format!("predicate\tgt_count\t{ks}\n");
        for row in &self.per_predicate {
            let values = row
                .per_k
                .iter()
                .map(|v| format!("{v:.2}"))
                .collect::<Vec<_>>()
                .join("\t");
            out.push_str(&format!(
                "{}\t{}\t{}\n",
                row.predicate, row.gt_count, values
            ));
        }
        out
    }

    pub fn metrics_at(&self, k: usize) -> Option<&KMetrics> {
        self.per_k.iter().find(|m| m.k == k)
    }
}

fn require_vector<'a>(
    scores: &'a ScoreTable,
    image_id: &str,
    subj: usize,
    obj: usize,
) -> Result<&'a ScoreVector> {
    scores.get(image_id, subj, obj).ok_or_else(|| {
        Error::Eval(format!(
            "missing score vector for test pair ({image_id}, {subj}, {obj})"
        ))
    })
}

/// Best non-NA predicate of a vector: highest score, ties to the lower index.
fn best_predicate(vector: &ScoreVector) -> PredicateId {
    (1..vector.len())
        .max_by(|&a, &b| {
            vector
                .get(a)
                .partial_cmp(&vector.get(b))
                .unwrap_or(Ordering::Equal)
                .then(b.cmp(&a))
        })
        .expect("vocab has at least one predicate")
}

/// Rank of a predicate within its vector under (score desc, index asc).
fn predicate_rank(vector: &ScoreVector, p: PredicateId) -> usize {
    let own = vector.get(p);
    (1..vector.len())
        .filter(|&q| {
            let s = vector.get(q);
            s > own || (s == own && q < p)
        })
        .count()
}

/// Recall family: R@K averaged over images, per-predicate recalls pooled
/// over images, mR@K as their unweighted mean, F@K harmonic.
///
/// With the graph constraint each ordered pair contributes its single best
/// non-NA predicate to the per-image ranking; without it every predicate of
/// every pair competes.
pub fn recall_family(
    test: &Dataset,
    scores: &ScoreTable,
    ks: &[usize],
    graph_constraint: bool,
) -> Result<MetricReport> {
    let num_predicates = test.vocab().num_predicates();
    let mut image_recalls: Vec<Vec<f64>> = vec![Vec::new(); ks.len()];
    let mut gt_per_predicate = vec![0u64; num_predicates + 1];
    let mut matched = vec![vec![0u64; num_predicates + 1]; ks.len()];

    for image in test.images() {
        if image.relations.is_empty() {
            continue;
        }
        // Rank position per candidate triplet.
        let mut pair_vectors: BTreeMap<(usize, usize), &ScoreVector> = BTreeMap::new();
        for rel in &image.relations {
            pair_vectors.insert(
                (rel.subj, rel.obj),
                require_vector(scores, &image.id, rel.subj, rel.obj)?,
            );
        }
        let mut candidates: Vec<(f64, (usize, usize, PredicateId))> = Vec::new();
        for (&(subj, obj), vector) in &pair_vectors {
            if graph_constraint {
                let p = best_predicate(vector);
                candidates.push((vector.get(p), (subj, obj, p)));
            } else {
                for p in 1..vector.len() {
                    candidates.push((vector.get(p), (subj, obj, p)));
                }
            }
        }
        candidates.sort_by(|(sa, ta), (sb, tb)| {
            sb.partial_cmp(sa)
                .unwrap_or(Ordering::Equal)
                .then(ta.cmp(tb))
        });
        let rank_of: BTreeMap<(usize, usize, PredicateId), usize> = candidates
            .iter()
            .enumerate()
            .map(|(rank, (_, triplet))| (*triplet, rank))
            .collect();

        for (ki, &k) in ks.iter().enumerate() {
            let mut hit = 0u64;
            for rel in &image.relations {
                let triplet = (rel.subj, rel.obj, rel.predicate);
                if rank_of.get(&triplet).is_some_and(|&rank| rank < k) {
                    hit += 1;
                    matched[ki][rel.predicate] += 1;
                }
            }
            image_recalls[ki].push(hit as f64 / image.relations.len() as f64);
        }
        for rel in &image.relations {
            gt_per_predicate[rel.predicate] += 1;
        }
    }

    Ok(assemble_report(
        MetricFamily::Recall,
        test,
        ks,
        &image_recalls_to_micro(&image_recalls),
        &gt_per_predicate,
        &matched,
        false,
    ))
}

fn image_recalls_to_micro(image_recalls: &[Vec<f64>]) -> Vec<f64> {
    image_recalls
        .iter()
        .map(|per_image| {
            if per_image.is_empty() {
                0.0
            } else {
                100.0 * per_image.iter().sum::<f64>() / per_image.len() as f64
            }
        })
        .collect()
}

/// Accuracy family: a GT instance is top-K correct when its predicate is
/// among the K highest non-NA scores of its pair. Acc is the micro fraction,
/// mAcc the unweighted per-class mean, F-Acc their harmonic mean, Non-Zero
/// the number of classes with at least one correct instance.
pub fn accuracy_family(test: &Dataset, scores: &ScoreTable, ks: &[usize]) -> Result<MetricReport> {
    let num_predicates = test.vocab().num_predicates();
    let mut gt_per_predicate = vec![0u64; num_predicates + 1];
    let mut correct = vec![vec![0u64; num_predicates + 1]; ks.len()];
    let mut total = 0u64;
    let mut correct_total = vec![0u64; ks.len()];

    for image in test.images() {
        for rel in &image.relations {
            let vector = require_vector(scores, &image.id, rel.subj, rel.obj)?;
            let rank = predicate_rank(vector, rel.predicate);
            total += 1;
            gt_per_predicate[rel.predicate] += 1;
            for (ki, &k) in ks.iter().enumerate() {
                if rank < k {
                    correct_total[ki] += 1;
                    correct[ki][rel.predicate] += 1;
                }
            }
        }
    }

    let micro: Vec<f64> = correct_total
        .iter()
        .map(|&c| {
            if total == 0 {
                0.0
            } else {
                100.0 * c as f64 / total as f64
            }
        })
        .collect();
    Ok(assemble_report(
        MetricFamily::Accuracy,
        test,
        ks,
        &micro,
        &gt_per_predicate,
        &correct,
        true,
    ))
}

fn assemble_report(
    family: MetricFamily,
    test: &Dataset,
    ks: &[usize],
    micro: &[f64],
    gt_per_predicate: &[u64],
    matched: &[Vec<u64>],
    with_non_zero: bool,
) -> MetricReport {
    let vocab = test.vocab();
    let mut per_predicate = Vec::new();
    for p in 1..gt_per_predicate.len() {
        if gt_per_predicate[p] == 0 {
            continue;
        }
        per_predicate.push(PredicateMetrics {
            predicate: vocab.predicate_name(p).to_string(),
            gt_count: gt_per_predicate[p],
            per_k: (0..ks.len())
                .map(|ki| 100.0 * matched[ki][p] as f64 / gt_per_predicate[p] as f64)
                .collect(),
        });
    }

    let per_k = ks
        .iter()
        .enumerate()
        .map(|(ki, &k)| {
            // Macro average over predicates with at least one GT instance.
            let macro_avg = if per_predicate.is_empty() {
                0.0
            } else {
                per_predicate.iter().map(|row| row.per_k[ki]).sum::<f64>()
                    / per_predicate.len() as f64
            };
            let non_zero = with_non_zero.then(|| {
                (1..gt_per_predicate.len())
                    .filter(|&p| matched[ki][p] > 0)
                    .count()
            });
            KMetrics {
                k,
                micro: micro[ki],
                macro_avg,
                f: harmonic_f(micro[ki], macro_avg),
                non_zero,
            }
        })
        .collect();

    MetricReport {
        family,
        ks: ks.to_vec(),
        per_k,
        per_predicate,
    }
}
