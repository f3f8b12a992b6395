//! Shared fixtures for the criterion benchmarks.

use sgtransfer::builder::{synth_generate, SynthConfig};
use sgtransfer::scorer::{annotated_pairs, fit_frequency_baseline, score_pairs, ScoreSource};
use sgtransfer::{Dataset, PairKey, ScoreTable};

/// Mid-sized synthetic corpus with the usual long-tail/ambiguity knobs.
pub fn bench_corpus(images: usize) -> Dataset {
    let cfg = SynthConfig::with_uniform_ambiguity(images, 12, 30, 1.5, 5, 3, 0.5, 0.3, 7)
        .expect("valid config");
    synth_generate(&cfg).expect("generation succeeds").0
}

/// Baseline scores over the annotated pairs plus the NA candidates.
pub fn bench_scores(dataset: &Dataset) -> ScoreTable {
    let baseline = fit_frequency_baseline(dataset, 1.0, 0.1).expect("fit");
    let mut keys: Vec<PairKey> = annotated_pairs(dataset);
    keys.extend(
        sgtransfer::external::enumerate_na(dataset)
            .iter()
            .map(|c| c.pair_key()),
    );
    score_pairs(dataset, &ScoreSource::Baseline(&baseline), &keys).expect("score")
}
