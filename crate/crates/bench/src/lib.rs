//! Fixtures shared by the benchmarks.

use candle_core::DType;
use cet2_core::corpus::{build_all_samples, synth_corpus, SelectionSample, SynthConfig};
use cet2_core::model::{Cet2Model, ModelConfig};
use cet2_core::objective::build_vocab;

/// A randomly initialized toy-size selector and samples with `m` candidates each.
pub fn toy_selector(m: usize) -> (Cet2Model, Vec<SelectionSample>) {
    let episodes = synth_corpus(&SynthConfig {
        n_episodes: 8,
        turns_per_episode: 4,
        m_candidates: m,
        vocab_size: 200,
        p_adhere: 0.6,
        seed: 1,
    })
    .expect("synthetic corpus");
    let vocab = build_vocab(&episodes);
    let config = ModelConfig::toy(vocab.len());
    let samples = build_all_samples(&episodes, config.window_l).expect("samples");
    let model = Cet2Model::new(config, vocab, DType::F32, 1).expect("model");
    (model, samples)
}

/// Hypothesis/reference pairs of roughly dialogue-response length.
pub fn sentence_pairs(n: usize) -> (Vec<String>, Vec<String>) {
    let words = [
        "the", "band", "formed", "in", "london", "jazz", "music", "is", "a", "genre", "of", "and",
    ];
    let sentence = |seed: usize, len: usize| -> String {
        (0..len)
            .map(|i| words[(seed * 7 + i * 5 + i * i) % words.len()])
            .collect::<Vec<_>>()
            .join(" ")
    };
    let hyps = (0..n).map(|i| sentence(i, 12 + i % 5)).collect();
    let refs = (0..n).map(|i| sentence(i + 3, 14 + i % 3)).collect();
    (hyps, refs)
}
