//! Benchmark construction: a constraint-respecting train/val/test split
//! builder and a synthetic long-tail/ambiguity corpus generator for
//! desk-scale end-to-end testing.

use std::collections::{BTreeMap, BTreeSet};

use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{
    BBox, Dataset, Image, ObjectClassId, ObjectInstance, PredicateId, Provenance, RelationInstance,
    Vocab,
};

/// Full-scale train+val image count that the default validation carve-out of
/// 5,000 images is calibrated against; smaller corpora keep the proportion.
const VAL_CALIBRATION_TRAIN_PORTION: usize = 71_284;

#[derive(Debug, Clone)]
pub struct SplitConfig {
    pub train_fraction: f64,
    pub val_image_count: usize,
    pub min_test_per_predicate: u64,
    pub min_train_per_predicate: u64,
    /// Predicate names removed outright before splitting.
    pub blocklist: BTreeSet<String>,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train_fraction: 0.70,
            val_image_count: 5000,
            min_test_per_predicate: 5,
            min_train_per_predicate: 1,
            blocklist: BTreeSet::new(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitReport {
    /// Train+val image count directly after the seeded split, before repair.
    pub initial_train_portion: usize,
    pub effective_val_count: usize,
    pub moved_to_test: usize,
    pub moved_to_train: usize,
    /// Names of predicates dropped by the blocklist, pre-filtering or repair.
    pub dropped_predicates: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct SplitOutput {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub report: SplitReport,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Slot {
    Train,
    Val,
    Test,
}

/// Split a corpus at the image level, then greedily repair per-predicate
/// minimum constraints by moving images, dropping predicates that cannot be
/// repaired.
///
/// The defaults are calibrated against a full-scale Visual Genome re-split
/// with 70,098 object categories, 1,807 surviving predicate classes,
/// 272,084 distinct triplet types and 66,289 / 4,995 / 32,893
/// train/val/test images; small corpora keep the same proportions.
pub fn build_split(corpus: &Dataset, cfg: &SplitConfig) -> Result<SplitOutput> {
    if !(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train fraction must be in (0, 1), got {}",
            cfg.train_fraction
        )));
    }
    let vocab = corpus.vocab().clone();

    let mut dropped: BTreeSet<PredicateId> = BTreeSet::new();
    for name in &cfg.blocklist {
        if let Some(p) = vocab.predicate_index(name) {
            dropped.insert(p);
        }
    }

    // Blocklist filtering, then pre-repair feasibility: a predicate whose
    // total count cannot cover both minima has no admissible split.
    let mut images: Vec<Image> = corpus
        .images()
        .iter()
        .map(|im| {
            let mut im = im.clone();
            im.relations.retain(|r| !dropped.contains(&r.predicate));
            im
        })
        .collect();
    images.sort_by(|a, b| a.id.cmp(&b.id));

    let mut totals: BTreeMap<PredicateId, u64> = BTreeMap::new();
    for im in &images {
        for r in &im.relations {
            *totals.entry(r.predicate).or_insert(0) += 1;
        }
    }
    let need = cfg.min_test_per_predicate + cfg.min_train_per_predicate;
    let had_any = !totals.is_empty();
    for (&p, &n) in &totals {
        if n < need {
            dropped.insert(p);
        }
    }
    if had_any && totals.keys().all(|p| dropped.contains(p)) {
        return Err(Error::Split(
            "infeasible split: the per-predicate minima exceed every predicate's corpus count"
                .into(),
        ));
    }
    for im in &mut images {
        im.relations.retain(|r| !dropped.contains(&r.predicate));
    }

    // Seeded image-level split, validation carved from the train portion.
    let n = images.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    order.shuffle(&mut rng);
    let train_portion = ((n as f64) * cfg.train_fraction).round() as usize;
    let train_portion = train_portion.min(n);
    let effective_val = scaled_val_count(cfg.val_image_count, train_portion);

    let mut slot: Vec<Slot> = vec![Slot::Test; n];
    for (pos, &img) in order.iter().enumerate() {
        slot[img] = if pos < train_portion {
            if pos >= train_portion - effective_val {
                Slot::Val
            } else {
                Slot::Train
            }
        } else {
            Slot::Test
        };
    }

    // Per-image predicate tallies drive the repair moves.
    let image_preds: Vec<BTreeMap<PredicateId, u64>> = images
        .iter()
        .map(|im| {
            let mut m = BTreeMap::new();
            for r in &im.relations {
                *m.entry(r.predicate).or_insert(0) += 1;
            }
            m
        })
        .collect();
    let mut train_count: BTreeMap<PredicateId, u64> = BTreeMap::new();
    let mut test_count: BTreeMap<PredicateId, u64> = BTreeMap::new();
    for (i, preds) in image_preds.iter().enumerate() {
        let target = match slot[i] {
            Slot::Train => &mut train_count,
            Slot::Test => &mut test_count,
            Slot::Val => continue,
        };
        for (&p, &c) in preds {
            *target.entry(p).or_insert(0) += c;
        }
    }

    let mut by_rarity: Vec<PredicateId> = totals
        .keys()
        .copied()
        .filter(|p| !dropped.contains(p))
        .collect();
    by_rarity.sort_by_key(|p| (totals[p], *p));

    let mut moved_to_test = 0usize;
    let mut moved_to_train = 0usize;
    let count = |m: &BTreeMap<PredicateId, u64>, p: PredicateId| m.get(&p).copied().unwrap_or(0);

    for &p in &by_rarity {
        // Feed the test side first: move train images holding p, preferring
        // moves that keep every other predicate's train count above its
        // minimum.
        while count(&test_count, p) < cfg.min_test_per_predicate {
            let candidate = (0..n)
                .filter(|&i| slot[i] == Slot::Train && image_preds[i].contains_key(&p))
                .min_by_key(|&i| {
                    let harm = image_preds[i]
                        .iter()
                        .filter(|(&q, &c)| {
                            q != p
                                && count(&train_count, q) >= cfg.min_train_per_predicate
                                && count(&train_count, q) - c < cfg.min_train_per_predicate
                        })
                        .count();
                    (
                        harm,
                        std::cmp::Reverse(image_preds[i][&p]),
                        images[i].id.clone(),
                    )
                });
            let Some(i) = candidate else { break };
            slot[i] = Slot::Test;
            moved_to_test += 1;
            for (&q, &c) in &image_preds[i] {
                *train_count.entry(q).or_insert(0) -= c;
                *test_count.entry(q).or_insert(0) += c;
            }
        }
        // Then the train side, never breaking a satisfied test minimum.
        while count(&train_count, p) < cfg.min_train_per_predicate {
            let candidate = (0..n)
                .filter(|&i| {
                    slot[i] == Slot::Test
                        && image_preds[i].contains_key(&p)
                        && image_preds[i].iter().all(|(&q, &c)| {
                            count(&test_count, q) < cfg.min_test_per_predicate
                                || count(&test_count, q) - c >= cfg.min_test_per_predicate
                        })
                })
                .min_by_key(|&i| (std::cmp::Reverse(image_preds[i][&p]), images[i].id.clone()));
            let Some(i) = candidate else { break };
            slot[i] = Slot::Train;
            moved_to_train += 1;
            for (&q, &c) in &image_preds[i] {
                *test_count.entry(q).or_insert(0) -= c;
                *train_count.entry(q).or_insert(0) += c;
            }
        }
    }

    for &p in &by_rarity {
        if count(&test_count, p) < cfg.min_test_per_predicate
            || count(&train_count, p) < cfg.min_train_per_predicate
        {
            dropped.insert(p);
        }
    }

    let pick = |want: Slot, images: &[Image], slot: &[Slot]| -> Result<Dataset> {
        let subset: Vec<Image> = images
            .iter()
            .enumerate()
            .filter(|(i, _)| slot[*i] == want)
            .map(|(_, im)| {
                let mut im = im.clone();
                im.relations.retain(|r| !dropped.contains(&r.predicate));
                im
            })
            .collect();
        Dataset::new(vocab.clone(), subset)
    };

    let report = SplitReport {
        initial_train_portion: train_portion,
        effective_val_count: effective_val,
        moved_to_test,
        moved_to_train,
        dropped_predicates: dropped
            .iter()
            .map(|&p| vocab.predicate_name(p).to_string())
            .collect(),
    };
    Ok(SplitOutput {
        train: pick(Slot::Train, &images, &slot)?,
        val: pick(Slot::Val, &images, &slot)?,
        test: pick(Slot::Test, &images, &slot)?,
        report,
    })
}

fn scaled_val_count(requested: usize, train_portion: usize) -> usize {
    let proportional =
        (train_portion as u64 * requested as u64 / VAL_CALIBRATION_TRAIN_PORTION as u64) as usize;
    requested
        .min(proportional)
        .min(train_portion.saturating_sub(1))
}

/// One general predicate and the informative predicates it absorbs.
#[derive(Debug, Clone, PartialEq)]
pub struct AmbiguityEntry {
    pub informative: BTreeSet<PredicateId>,
    /// Fraction of truly-informative instances annotated with the general
    /// label instead.
    pub mislabel_prob: f64,
}

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub num_images: usize,
    pub num_object_classes: usize,
    pub num_predicates: usize,
    /// Zipf exponent for true predicate frequencies (weight 1/rank^s).
    pub zipf_exponent: f64,
    pub ambiguity: BTreeMap<PredicateId, AmbiguityEntry>,
    /// Fraction of true relations whose annotation is deleted entirely.
    pub deletion_prob: f64,
    pub min_relations_per_image: usize,
    pub max_relations_per_image: usize,
    pub seed: u64,
}

impl SynthConfig {
    /// Canonical layout: predicates `1..=generals` are general, each followed
    /// by `children_per_general` informative children, the rest plain; every
    /// ambiguity entry carries the same mislabel probability.
    #[allow(clippy::too_many_arguments)]
    pub fn with_uniform_ambiguity(
        num_images: usize,
        num_object_classes: usize,
        num_predicates: usize,
        zipf_exponent: f64,
        generals: usize,
        children_per_general: usize,
        mislabel_prob: f64,
        deletion_prob: f64,
        seed: u64,
    ) -> Result<Self> {
        if generals * (1 + children_per_general) > num_predicates {
            return Err(Error::Config(
                "ambiguity layout needs more predicates than configured".into(),
            ));
        }
        let mut ambiguity = BTreeMap::new();
        for g in 0..generals {
            let general = g + 1;
            let first_child = generals + g * children_per_general + 1;
            let informative: BTreeSet<PredicateId> =
                (first_child..first_child + children_per_general).collect();
            ambiguity.insert(
                general,
                AmbiguityEntry {
                    informative,
                    mislabel_prob,
                },
            );
        }
        let cfg = SynthConfig {
            num_images,
            num_object_classes,
            num_predicates,
            zipf_exponent,
            ambiguity,
            deletion_prob,
            min_relations_per_image: 4,
            max_relations_per_image: 8,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_object_classes < 2 || self.num_predicates == 0 || self.num_images == 0 {
            return Err(Error::Config(
                "synthetic corpus dimensions too small".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.deletion_prob) {
            return Err(Error::Config(
                "deletion probability must be in [0, 1]".into(),
            ));
        }
        if self.min_relations_per_image == 0
            || self.min_relations_per_image > self.max_relations_per_image
        {
            return Err(Error::Config("bad relations-per-image range".into()));
        }
        let mut claimed: BTreeSet<PredicateId> = BTreeSet::new();
        for (&general, entry) in &self.ambiguity {
            if !(0.0..=1.0).contains(&entry.mislabel_prob) {
                return Err(Error::Config(
                    "mislabel probability must be in [0, 1]".into(),
                ));
            }
            if entry.informative.contains(&general) {
                return Err(Error::Config(format!(
                    "predicate {general} cannot be its own informative child"
                )));
            }
            for &p in entry.informative.iter().chain(std::iter::once(&general)) {
                if p < 1 || p > self.num_predicates {
                    return Err(Error::Config(format!("ambiguity references predicate {p}")));
                }
            }
            for &child in &entry.informative {
                if !claimed.insert(child) {
                    return Err(Error::Config(format!(
                        "informative predicate {child} claimed by two generals"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Compatible class-pair table: informative children share their pairs with
/// their general, everything else gets exclusive pairs. The partition keeps
/// the generals' extra pairs free of competing predicates so their head
/// behavior is controlled.
struct PairTable {
    pairs: Vec<Vec<(ObjectClassId, ObjectClassId)>>,
}

const CHILD_PAIRS: usize = 2;
const GENERAL_EXTRA_PAIRS: usize = 3;
const PLAIN_PAIRS: usize = 2;

impl PairTable {
    fn build(cfg: &SynthConfig, rng: &mut ChaCha20Rng) -> Result<PairTable> {
        let c = cfg.num_object_classes;
        let mut pool: Vec<(ObjectClassId, ObjectClassId)> = (0..c)
            .flat_map(|a| (0..c).filter(move |&b| b != a).map(move |b| (a, b)))
            .collect();
        pool.shuffle(rng);
        let mut pool = pool.into_iter();

        let mut take = |n: usize| -> Result<Vec<(ObjectClassId, ObjectClassId)>> {
            let taken: Vec<_> = pool.by_ref().take(n).collect();
            if taken.len() < n {
                return Err(Error::Config(
                    "not enough object-class pairs for the requested predicate layout".into(),
                ));
            }
            Ok(taken)
        };

        let mut pairs: Vec<Vec<(ObjectClassId, ObjectClassId)>> =
            vec![Vec::new(); cfg.num_predicates + 1];
        let children: BTreeSet<PredicateId> = cfg
            .ambiguity
            .values()
            .flat_map(|e| e.informative.iter().copied())
            .collect();
        for (&general, entry) in &cfg.ambiguity {
            for &child in &entry.informative {
                let shared = take(CHILD_PAIRS)?;
                pairs[child] = shared.clone();
                pairs[general].extend(shared);
            }
            pairs[general].extend(take(GENERAL_EXTRA_PAIRS)?);
        }
        let plain: Vec<PredicateId> = (1..=cfg.num_predicates)
            .filter(|p| {
                pairs[*p].is_empty() && !children.contains(p) && !cfg.ambiguity.contains_key(p)
            })
            .collect();
        for p in plain {
            pairs[p] = take(PLAIN_PAIRS)?;
        }
        Ok(PairTable { pairs })
    }
}

/// Generate a noisy corpus plus its ground-truth sidecar (same format,
/// all true relations). Deterministic under the seed; images are generated
/// independently from per-image derived seeds.
pub fn synth_generate(cfg: &SynthConfig) -> Result<(Dataset, Dataset)> {
    cfg.validate()?;
    let mut layout_rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let table = PairTable::build(cfg, &mut layout_rng)?;

    let vocab = Vocab::new(
        (0..cfg.num_object_classes)
            .map(|i| format!("class_{i:03}"))
            .collect(),
        (1..=cfg.num_predicates)
            .map(|p| format!("pred_{p:03}"))
            .collect(),
    )?;

    let zipf = WeightedIndex::new(
        (1..=cfg.num_predicates).map(|p| 1.0 / (p as f64).powf(cfg.zipf_exponent)),
    )
    .map_err(|e| Error::Config(e.to_string()))?;

    // Map each informative child to its general.
    let parent: BTreeMap<PredicateId, (PredicateId, f64)> = cfg
        .ambiguity
        .iter()
        .flat_map(|(&g, entry)| {
            entry
                .informative
                .iter()
                .map(move |&child| (child, (g, entry.mislabel_prob)))
        })
        .collect();

    let width = cfg.num_images.to_string().len().max(4);
    let generated: Vec<(Image, Image)> = (0..cfg.num_images)
        .into_par_iter()
        .map(|index| {
            let mut rng = ChaCha20Rng::seed_from_u64(
                cfg.seed ^ 0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index as u64 + 1),
            );
            let id = format!("img_{index:0width$}");
            let n_rel = rng.random_range(cfg.min_relations_per_image..=cfg.max_relations_per_image);

            let mut objects = Vec::new();
            let mut truth = Vec::new();
            let mut noisy = Vec::new();
            for _ in 0..n_rel {
                let predicate = zipf.sample(&mut rng) + 1;
                if table.pairs[predicate].is_empty() {
                    continue;
                }
                let &(subj_class, obj_class) =
                    &table.pairs[predicate][rng.random_range(0..table.pairs[predicate].len())];

                // Subject anywhere, object offset to guarantee overlap.
                let sx = rng.random_range(0.0..60.0);
                let sy = rng.random_range(0.0..60.0);
                let ssize = rng.random_range(20.0..40.0);
                let ox = sx + rng.random_range(-10.0..10.0);
                let oy = sy + rng.random_range(-10.0..10.0);
                let osize = rng.random_range(20.0..40.0);
                let subj = objects.len();
                objects.push(ObjectInstance {
                    class: subj_class,
                    bbox: BBox::new(sx, sy, sx + ssize, sy + ssize).expect("positive size"),
                });
                let obj = objects.len();
                objects.push(ObjectInstance {
                    class: obj_class,
                    bbox: BBox::new(ox, oy, ox + osize, oy + osize).expect("positive size"),
                });

                truth.push(RelationInstance {
                    subj,
                    obj,
                    predicate,
                    provenance: Provenance::Original,
                });
                let label = match parent.get(&predicate) {
                    Some(&(general, prob)) if rng.random::<f64>() < prob => general,
                    _ => predicate,
                };
                if rng.random::<f64>() >= cfg.deletion_prob {
                    noisy.push(RelationInstance {
                        subj,
                        obj,
                        predicate: label,
                        provenance: Provenance::Original,
                    });
                }
            }
            (
                Image {
                    id: id.clone(),
                    objects: objects.clone(),
                    relations: noisy,
                },
                Image {
                    id,
                    objects,
                    relations: truth,
                },
            )
        })
        .collect();

    let (noisy_images, truth_images): (Vec<Image>, Vec<Image>) = generated.into_iter().unzip();
    Ok((
        Dataset::new(vocab.clone(), noisy_images)?,
        Dataset::new(vocab, truth_images)?,
    ))
}
