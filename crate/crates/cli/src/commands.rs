//! Subcommand handlers: load inputs, call the library, write outputs and a
//! manifest sidecar per output artifact.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use sgtransfer::builder::{build_split, synth_generate, SplitConfig, SynthConfig};
use sgtransfer::eval::{accuracy_family, recall_family, MetricReport};
use sgtransfer::external::{
    build_external_plan, enumerate_na, load_external_plan, write_addition_summary_tsv,
    write_external_plan, ExternalPlan,
};
use sgtransfer::integrate::{
    distribution_report, load_enhanced, merge, transfer_pair_report, transfer_pairs_to_tsv,
    write_enhanced,
};
use sgtransfer::internal::{
    aggregate_scores, build_plan, build_plan_adaptive, export_confusion_csv, load_internal_plan,
    write_internal_plan, InternalPlan,
};
use sgtransfer::manifest::RunManifest;
use sgtransfer::model::{build_triplet_index, load_vocab, write_dataset, Dataset, Vocab};
use sgtransfer::scorer::{
    annotated_pairs, fit_frequency_baseline, load_external_scores, score_pairs,
    write_scores_binary, write_scores_jsonl, ScoreSource, ScoreTable,
};

use crate::config::{self, Defaults};
use crate::{Command, Coverage, DumpFormat, Family, Profile, ReportCommand, VocabArgs};

pub fn dispatch(command: Command) -> Result<()> {
    let defaults = config::load()?;
    match command {
        Command::Stats {
            dataset,
            vocab,
            json,
        } => stats(&dataset, &vocab, json),
        Command::Score {
            dataset,
            vocab,
            train,
            alpha,
            na_prior,
            coverage,
            format,
            out,
        } => score(
            &dataset,
            &vocab,
            train.as_deref(),
            alpha,
            na_prior,
            coverage,
            format,
            &out,
            &defaults,
        ),
        Command::Internal {
            dataset,
            vocab,
            scores,
            k_i,
            adaptive,
            profile,
            export_confusion,
            pair,
            out,
        } => internal(
            &dataset,
            &vocab,
            &scores,
            k_i,
            adaptive,
            profile,
            export_confusion.as_deref(),
            pair.as_deref(),
            &out,
            &defaults,
        ),
        Command::External {
            dataset,
            vocab,
            scores,
            k_e,
            head_exclude,
            profile,
            summary,
            out,
        } => external(
            &dataset,
            &vocab,
            &scores,
            k_e,
            head_exclude,
            profile,
            summary.as_deref(),
            &out,
            &defaults,
        ),
        Command::Merge {
            dataset,
            vocab,
            internal,
            external,
            out,
        } => merge_cmd(
            &dataset,
            &vocab,
            internal.as_deref(),
            external.as_deref(),
            &out,
        ),
        Command::Evaluate {
            test,
            vocab,
            scores,
            fit_train,
            alpha,
            na_prior,
            family,
            ks,
            no_graph_constraint,
            report_prefix,
        } => evaluate(
            &test,
            &vocab,
            scores.as_deref(),
            fit_train.as_deref(),
            alpha,
            na_prior,
            family,
            ks.as_deref(),
            no_graph_constraint,
            report_prefix.as_deref(),
            &defaults,
        ),
        Command::Split {
            corpus,
            vocab,
            train_fraction,
            val_images,
            min_test,
            min_train,
            blocklist,
            seed,
            out_dir,
        } => split(
            &corpus,
            &vocab,
            train_fraction,
            val_images,
            min_test,
            min_train,
            blocklist.as_deref(),
            seed,
            &out_dir,
            &defaults,
        ),
        Command::Synth {
            images,
            object_classes,
            predicates,
            zipf,
            generals,
            children_per_general,
            ambiguity_prob,
            deletion_prob,
            seed,
            out_dir,
        } => synth(
            images,
            object_classes,
            predicates,
            zipf,
            generals,
            children_per_general,
            ambiguity_prob,
            deletion_prob,
            seed.or(defaults.seed).unwrap_or(0),
            &out_dir,
        ),
        Command::Report(report) => match report {
            ReportCommand::Distribution {
                before,
                after,
                vocab,
                bins,
                out,
            } => report_distribution(&before, &after, &vocab, bins, &out),
            ReportCommand::Pairs {
                plan,
                vocab,
                top_n,
                out,
            } => report_pairs(&plan, &vocab, top_n, &out),
        },
    }
}

fn load_inputs(dataset: &Path, vocab: &VocabArgs) -> Result<(Vocab, Dataset)> {
    let v = load_vocab(&vocab.objects, &vocab.predicates)?;
    let d = sgtransfer::model::load_dataset(dataset, &v)?;
    Ok((v, d))
}

fn profile_k_i(profile: Option<Profile>) -> f64 {
    match profile.unwrap_or(Profile::Vg50) {
        Profile::Vg50 => 70.0,
        Profile::Vg1800 => 90.0,
    }
}

fn profile_head_exclude(profile: Option<Profile>) -> usize {
    match profile.unwrap_or(Profile::Vg50) {
        Profile::Vg50 => 15,
        Profile::Vg1800 => 0,
    }
}

fn stats(dataset: &Path, vocab: &VocabArgs, json: bool) -> Result<()> {
    let (v, d) = load_inputs(dataset, vocab)?;
    let index = build_triplet_index(&d);
    let counts = d.predicate_instance_counts();
    let mut provenance = (0u64, 0u64, 0u64);
    for image in d.images() {
        for rel in &image.relations {
            match rel.provenance {
                sgtransfer::Provenance::Original => provenance.0 += 1,
                sgtransfer::Provenance::InternalTransfer { .. } => provenance.1 += 1,
                sgtransfer::Provenance::ExternalTransfer => provenance.2 += 1,
            }
        }
    }
    let mut by_count: Vec<(String, u64)> = (1..counts.len())
        .filter(|&p| counts[p] > 0)
        .map(|p| (v.predicate_name(p).to_string(), counts[p]))
        .collect();
    by_count.sort_by(|(na, ca), (nb, cb)| cb.cmp(ca).then(na.cmp(nb)));

    if json {
        let payload = serde_json::json!({
            "images": d.num_images(),
            "objects": d.object_count(),
            "relations": d.relation_count(),
            "triplet_types": index.num_types(),
            "provenance": {
                "original": provenance.0,
                "internal_transfer": provenance.1,
                "external_transfer": provenance.2,
            },
            "predicate_counts": by_count.iter().cloned().collect::<std::collections::BTreeMap<_, _>>(),
        });
        println!("{}", serde_json::to_string_pretty(&payload)?);
    } else {
        println!("images\t{}", d.num_images());
        println!("objects\t{}", d.object_count());
        println!("relations\t{}", d.relation_count());
        println!("triplet_types\t{}", index.num_types());
        println!(
            "provenance\toriginal={} internal_transfer={} external_transfer={}",
            provenance.0, provenance.1, provenance.2
        );
        for (name, count) in &by_count {
            println!("predicate\t{name}\t{count}");
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn score(
    dataset: &Path,
    vocab: &VocabArgs,
    train: Option<&Path>,
    alpha: Option<f64>,
    na_prior: Option<f64>,
    coverage: Coverage,
    format: DumpFormat,
    out: &Path,
    defaults: &Defaults,
) -> Result<()> {
    let (v, d) = load_inputs(dataset, vocab)?;
    let train_path = train.unwrap_or(dataset);
    let train_set = if train.is_some() {
        sgtransfer::model::load_dataset(train_path, &v)?
    } else {
        d.clone()
    };
    let alpha = alpha.or(defaults.alpha).unwrap_or(1.0);
    let na_prior = na_prior.or(defaults.na_prior).unwrap_or(0.1);
    let baseline = fit_frequency_baseline(&train_set, alpha, na_prior)?;
    let source = ScoreSource::Baseline(&baseline);

    let mut keys = Vec::new();
    if matches!(coverage, Coverage::Annotated | Coverage::All) {
        keys.extend(annotated_pairs(&d));
    }
    if matches!(coverage, Coverage::Na | Coverage::All) {
        keys.extend(enumerate_na(&d).iter().map(|c| c.pair_key()));
    }
    let table = score_pairs(&d, &source, &keys)?;
    match format {
        DumpFormat::Jsonl => write_scores_jsonl(&table, out)?,
        DumpFormat::Binary => write_scores_binary(&table, out)?,
    }

    RunManifest::new("score")
        .parameter("alpha", alpha)
        .parameter("na_prior", na_prior)
        .parameter(
            "coverage",
            match coverage {
                Coverage::Annotated => "annotated",
                Coverage::Na => "na",
                Coverage::All => "all",
            },
        )
        .parameter("pairs", table.len())
        .parameter("vocab_fingerprint", table.fingerprint())
        .input(dataset)?
        .input(train_path)?
        .input(&vocab.objects)?
        .input(&vocab.predicates)?
        .write_sidecar(out)?;
    println!("scored {} pairs -> {}", table.len(), out.display());
    Ok(())
}

fn parse_pair(pair: &str, vocab: &Vocab) -> Result<(usize, usize)> {
    let Some((subj, obj)) = pair.split_once(',') else {
        bail!("--pair expects \"subject,object\" class names");
    };
    let lookup = |name: &str| {
        vocab
            .object_index(name.trim())
            .with_context(|| format!("unknown object class {name:?}"))
    };
    Ok((lookup(subj)?, lookup(obj)?))
}

#[allow(clippy::too_many_arguments)]
fn internal(
    dataset: &Path,
    vocab: &VocabArgs,
    scores_path: &Path,
    k_i: Option<f64>,
    adaptive: Option<f64>,
    profile: Option<Profile>,
    export_confusion: Option<&Path>,
    pair: Option<&str>,
    out: &Path,
    defaults: &Defaults,
) -> Result<()> {
    let (v, d) = load_inputs(dataset, vocab)?;
    let scores = load_external_scores(scores_path, &v)?;
    let index = build_triplet_index(&d);

    let plan = match adaptive {
        Some(spread) => build_plan_adaptive(&d, &scores, &index, spread)?,
        None => {
            let k = k_i.or(defaults.k_i).unwrap_or_else(|| profile_k_i(profile));
            build_plan(&d, &scores, &index, k)?
        }
    };
    write_internal_plan(&plan, &v, out)?;

    if let Some(dir) = export_confusion {
        let agg = aggregate_scores(&d, &scores)?;
        let filter = pair.map(|p| parse_pair(p, &v)).transpose()?;
        let written = export_confusion_csv(&agg, &v, dir, filter)?;
        println!(
            "wrote {} confusion matrices -> {}",
            written.len(),
            dir.display()
        );
    }

    let mut manifest = RunManifest::new("internal")
        .parameter("moves", plan.moves.len())
        .parameter("targets_with_candidates", plan.targets.len())
        .parameter("tie_break_policy", sgtransfer::integrate::TIE_BREAK_POLICY)
        .parameter("sigma_convention", sgtransfer::integrate::SIGMA_CONVENTION);
    manifest = match adaptive {
        Some(spread) => manifest.parameter("adaptive_spread", spread),
        None => manifest.parameter(
            "k_i",
            k_i.or(defaults.k_i).unwrap_or_else(|| profile_k_i(profile)),
        ),
    };
    manifest
        .input(dataset)?
        .input(scores_path)?
        .input(&vocab.objects)?
        .input(&vocab.predicates)?
        .write_sidecar(out)?;
    println!(
        "internal plan: {} moves -> {}",
        plan.moves.len(),
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn external(
    dataset: &Path,
    vocab: &VocabArgs,
    scores_path: &Path,
    k_e: Option<f64>,
    head_exclude: Option<usize>,
    profile: Option<Profile>,
    summary: Option<&Path>,
    out: &Path,
    defaults: &Defaults,
) -> Result<()> {
    let (v, d) = load_inputs(dataset, vocab)?;
    let scores = load_external_scores(scores_path, &v)?;
    let index = build_triplet_index(&d);
    let candidates = enumerate_na(&d);
    let k = k_e.or(defaults.k_e).unwrap_or(100.0);
    let head = head_exclude
        .or(defaults.head_exclude)
        .unwrap_or_else(|| profile_head_exclude(profile));

    let plan = build_external_plan(&candidates, &scores, &index, k, head)?;
    write_external_plan(&plan, &v, out)?;
    if let Some(path) = summary {
        write_addition_summary_tsv(&plan, &v, path)?;
    }

    RunManifest::new("external")
        .parameter("k_e", k)
        .parameter("head_exclude", head)
        .parameter("candidates", plan.stats.candidates)
        .parameter("eligible", plan.stats.eligible)
        .parameter("additions", plan.additions.len())
        .input(dataset)?
        .input(scores_path)?
        .input(&vocab.objects)?
        .input(&vocab.predicates)?
        .write_sidecar(out)?;
    println!(
        "external plan: {} additions ({} candidates) -> {}",
        plan.additions.len(),
        plan.stats.candidates,
        out.display()
    );
    Ok(())
}

fn merge_cmd(
    dataset: &Path,
    vocab: &VocabArgs,
    internal_path: Option<&Path>,
    external_path: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let (v, d) = load_inputs(dataset, vocab)?;
    let internal = match internal_path {
        Some(p) => load_internal_plan(p, &v)?,
        None => InternalPlan::empty(),
    };
    let external = match external_path {
        Some(p) => load_external_plan(p, &v)?,
        None => ExternalPlan::empty(),
    };
    let enhanced = merge(&d, &internal, &external)?;
    write_enhanced(&enhanced, out)?;

    let mut manifest = RunManifest::new("merge")
        .parameter("moves", enhanced.manifest.moves)
        .parameter("additions", enhanced.manifest.additions)
        .parameter("collisions", enhanced.manifest.collisions)
        .parameter("relations", enhanced.dataset.relation_count())
        .input(dataset)?
        .input(&vocab.objects)?
        .input(&vocab.predicates)?;
    if let Some(p) = internal_path {
        manifest = manifest.input(p)?;
    }
    if let Some(p) = external_path {
        manifest = manifest.input(p)?;
    }
    manifest.write_sidecar(out)?;
    println!(
        "merged: {} moves, {} additions, {} collisions -> {}",
        enhanced.manifest.moves,
        enhanced.manifest.additions,
        enhanced.manifest.collisions,
        out.display()
    );
    Ok(())
}

fn parse_ks(ks: Option<&str>, family: Family) -> Result<Vec<usize>> {
    match ks {
        None => Ok(match family {
            Family::Recall => vec![20, 50, 100],
            Family::Accuracy => vec![1, 5, 10],
        }),
        Some(raw) => raw
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<usize>()
                    .with_context(|| format!("bad K value {s:?}"))
            })
            .collect(),
    }
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    test: &Path,
    vocab: &VocabArgs,
    scores_path: Option<&Path>,
    fit_train: Option<&Path>,
    alpha: Option<f64>,
    na_prior: Option<f64>,
    family: Family,
    ks: Option<&str>,
    no_graph_constraint: bool,
    report_prefix: Option<&Path>,
    defaults: &Defaults,
) -> Result<()> {
    let (v, d) = load_inputs(test, vocab)?;
    let scores: ScoreTable = match (scores_path, fit_train) {
        (Some(path), _) => load_external_scores(path, &v)?,
        (None, Some(train_path)) => {
            let train = sgtransfer::model::load_dataset(train_path, &v)?;
            let alpha = alpha.or(defaults.alpha).unwrap_or(1.0);
            let na_prior = na_prior.or(defaults.na_prior).unwrap_or(0.1);
            let baseline = fit_frequency_baseline(&train, alpha, na_prior)?;
            score_pairs(&d, &ScoreSource::Baseline(&baseline), &annotated_pairs(&d))?
        }
        (None, None) => bail!("either --scores or --fit-train is required"),
    };
    let ks = parse_ks(ks, family)?;
    let report: MetricReport = match family {
        Family::Recall => recall_family(&d, &scores, &ks, !no_graph_constraint)?,
        Family::Accuracy => accuracy_family(&d, &scores, &ks)?,
    };
    println!("{}", report.summary_row());

    if let Some(prefix) = report_prefix {
        let prefix = prefix.to_string_lossy();
        let summary = PathBuf::from(format!("{prefix}.summary.tsv"));
        let per_pred = PathBuf::from(format!("{prefix}.per_predicate.tsv"));
        let json = PathBuf::from(format!("{prefix}.json"));
        std::fs::write(&summary, report.to_tsv())?;
        std::fs::write(&per_pred, report.per_predicate_tsv())?;
        std::fs::write(&json, serde_json::to_string_pretty(&report)? + "\n")?;

        let mut manifest = RunManifest::new("evaluate")
            .parameter(
                "family",
                match family {
                    Family::Recall => "recall",
                    Family::Accuracy => "accuracy",
                },
            )
            .parameter("ks", &ks)
            .parameter("graph_constraint", !no_graph_constraint)
            .input(test)?
            .input(&vocab.objects)?
            .input(&vocab.predicates)?;
        if let Some(p) = scores_path {
            manifest = manifest.input(p)?;
        }
        if let Some(p) = fit_train {
            manifest = manifest.input(p)?;
        }
        manifest.write_sidecar(&json)?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn split(
    corpus: &Path,
    vocab: &VocabArgs,
    train_fraction: Option<f64>,
    val_images: Option<usize>,
    min_test: Option<u64>,
    min_train: Option<u64>,
    blocklist: Option<&Path>,
    seed: Option<u64>,
    out_dir: &Path,
    defaults: &Defaults,
) -> Result<()> {
    let (_, d) = load_inputs(corpus, vocab)?;
    let mut cfg = SplitConfig::default();
    if let Some(f) = train_fraction {
        cfg.train_fraction = f;
    }
    if let Some(n) = val_images {
        cfg.val_image_count = n;
    }
    if let Some(n) = min_test {
        cfg.min_test_per_predicate = n;
    }
    if let Some(n) = min_train {
        cfg.min_train_per_predicate = n;
    }
    cfg.seed = seed.or(defaults.seed).unwrap_or(0);
    if let Some(path) = blocklist {
        let body = std::fs::read_to_string(path)
            .with_context(|| format!("reading blocklist {}", path.display()))?;
        cfg.blocklist = body
            .lines()
            .map(|l| l.trim().to_string())
            .filter(|l| !l.is_empty())
            .collect::<BTreeSet<String>>();
    }

    let out = build_split(&d, &cfg)?;
    std::fs::create_dir_all(out_dir)?;
    write_dataset(&out.train, &out_dir.join("train.jsonl"))?;
    write_dataset(&out.val, &out_dir.join("val.jsonl"))?;
    write_dataset(&out.test, &out_dir.join("test.jsonl"))?;

    let mut manifest = RunManifest::new("split")
        .parameter("train_fraction", cfg.train_fraction)
        .parameter("val_image_count", cfg.val_image_count)
        .parameter("min_test_per_predicate", cfg.min_test_per_predicate)
        .parameter("min_train_per_predicate", cfg.min_train_per_predicate)
        .parameter("seed", cfg.seed)
        .parameter("initial_train_portion", out.report.initial_train_portion)
        .parameter("effective_val_count", out.report.effective_val_count)
        .parameter("moved_to_test", out.report.moved_to_test)
        .parameter("moved_to_train", out.report.moved_to_train)
        .parameter("dropped_predicates", &out.report.dropped_predicates)
        .input(corpus)?
        .input(&vocab.objects)?
        .input(&vocab.predicates)?;
    if let Some(p) = blocklist {
        manifest = manifest.input(p)?;
    }
    manifest.write_sidecar(&out_dir.join("split"))?;

    println!(
        "split: train {} / val {} / test {} images, {} predicates dropped",
        out.train.num_images(),
        out.val.num_images(),
        out.test.num_images(),
        out.report.dropped_predicates.len()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn synth(
    images: usize,
    object_classes: usize,
    predicates: usize,
    zipf: f64,
    generals: usize,
    children_per_general: usize,
    ambiguity_prob: f64,
    deletion_prob: f64,
    seed: u64,
    out_dir: &Path,
) -> Result<()> {
    let cfg = SynthConfig::with_uniform_ambiguity(
        images,
        object_classes,
        predicates,
        zipf,
        generals,
        children_per_general,
        ambiguity_prob,
        deletion_prob,
        seed,
    )?;
    let (noisy, truth) = synth_generate(&cfg)?;
    std::fs::create_dir_all(out_dir)?;
    write_dataset(&noisy, &out_dir.join("dataset.jsonl"))?;
    write_dataset(&truth, &out_dir.join("truth.jsonl"))?;
    std::fs::write(
        out_dir.join("objects.txt"),
        noisy.vocab().object_classes().join("\n") + "\n",
    )?;
    std::fs::write(
        out_dir.join("predicates.txt"),
        noisy.vocab().predicate_classes().join("\n") + "\n",
    )?;

    RunManifest::new("synth")
        .parameter("images", images)
        .parameter("object_classes", object_classes)
        .parameter("predicates", predicates)
        .parameter("zipf_exponent", zipf)
        .parameter("generals", generals)
        .parameter("children_per_general", children_per_general)
        .parameter("ambiguity_prob", ambiguity_prob)
        .parameter("deletion_prob", deletion_prob)
        .parameter("seed", seed)
        .parameter("relations", noisy.relation_count())
        .parameter("true_relations", truth.relation_count())
        .write_sidecar(&out_dir.join("synth"))?;
    println!(
        "synthesized {} images, {} annotations ({} true) -> {}",
        noisy.num_images(),
        noisy.relation_count(),
        truth.relation_count(),
        out_dir.display()
    );
    Ok(())
}

fn report_distribution(
    before: &Path,
    after: &Path,
    vocab: &VocabArgs,
    bins: usize,
    out: &Path,
) -> Result<()> {
    let v = load_vocab(&vocab.objects, &vocab.predicates)?;
    let (before_d, _) = load_enhanced(before, &v)?;
    let (after_d, _) = load_enhanced(after, &v)?;
    let report = distribution_report(&before_d, &after_d, bins)?;
    std::fs::write(out, report.to_tsv())?;
    RunManifest::new("report-distribution")
        .parameter("bins", bins)
        .input(before)?
        .input(after)?
        .input(&vocab.objects)?
        .input(&vocab.predicates)?
        .write_sidecar(out)?;
    println!(
        "distribution report ({} bins) -> {}",
        report.rows.len(),
        out.display()
    );
    Ok(())
}

fn report_pairs(plan: &Path, vocab: &VocabArgs, top_n: Option<usize>, out: &Path) -> Result<()> {
    let v = load_vocab(&vocab.objects, &vocab.predicates)?;
    let p = load_internal_plan(plan, &v)?;
    let rows = transfer_pair_report(&p, top_n, &v);
    std::fs::write(out, transfer_pairs_to_tsv(&rows))?;
    RunManifest::new("report-pairs")
        .parameter("top_n", top_n)
        .parameter("rows", rows.len())
        .input(plan)?
        .input(&vocab.objects)?
        .input(&vocab.predicates)?
        .write_sidecar(out)?;
    println!(
        "transfer-pair report ({} rows) -> {}",
        rows.len(),
        out.display()
    );
    Ok(())
}
