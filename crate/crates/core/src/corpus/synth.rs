//! Deterministic synthetic corpus with a learnable selection signal.
//!
//! Each episode owns a fixed pool of `m_candidates` knowledge sentences over a
//! `w0..w{vocab_size-1}` word list. The gold sequence is a two-state chain:
//! with probability `p_adhere` the previous gold is repeated, otherwise a
//! different candidate is drawn uniformly. Utterances mix tokens of the
//! current gold sentence (60%) with tokens from a shared noise list (40%).

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DialogueEpisode, DialogueTurn, KnowledgeCandidate, Split, Utterance};
use crate::error::{Error, Result};

const CANDIDATE_LEN: usize = 6;
const GOLD_TOKENS: usize = 3;
const NOISE_TOKENS: usize = 2;
const NOISE_WORDS: [&str; 12] = [
    "well", "so", "yes", "maybe", "really", "okay", "hmm", "right", "sure", "oh", "like", "indeed",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_episodes: usize,
    pub turns_per_episode: usize,
    pub m_candidates: usize,
    pub vocab_size: usize,
    pub p_adhere: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_episodes: 200,
            turns_per_episode: 4,
            m_candidates: 8,
            vocab_size: 200,
            p_adhere: 0.6,
            seed: 7,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.n_episodes == 0 || self.turns_per_episode == 0 || self.m_candidates == 0 {
            return Err(Error::Config(
                "synthetic corpus counts must be at least 1".into(),
            ));
        }
        if self.vocab_size < CANDIDATE_LEN {
            return Err(Error::Config(format!(
                "vocab_size must be at least {CANDIDATE_LEN} (one candidate sentence)"
            )));
        }
        if !(0.0..=1.0).contains(&self.p_adhere) {
            return Err(Error::Config("p_adhere must lie in [0, 1]".into()));
        }
        if self.m_candidates < 2 && self.p_adhere < 1.0 {
            return Err(Error::Config(
                "m_candidates < 2 leaves no topic-shift target unless p_adhere = 1".into(),
            ));
        }
        Ok(())
    }
}

/// Splits are assigned round-robin: episode i goes to valid when
/// `i % 10 == 8`, to test_seen when `i % 10 == 9`, and to train otherwise.
fn split_for(i: usize) -> Split {
    match i % 10 {
        8 => Split::Valid,
        9 => Split::TestSeen,
        _ => Split::Train,
    }
}

fn mixed_utterance(rng: &mut ChaCha8Rng, gold_words: &[String]) -> String {
    let mut words: Vec<&str> = gold_words
        .choose_multiple(rng, GOLD_TOKENS)
        .map(String::as_str)
        .collect();
    for _ in 0..NOISE_TOKENS {
        words.push(NOISE_WORDS.choose(rng).expect("non-empty"));
    }
    words.shuffle(rng);
    words.join(" ")
}

pub fn synth_corpus(config: &SynthConfig) -> Result<Vec<DialogueEpisode>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let vocab: Vec<String> = (0..config.vocab_size).map(|i| format!("w{i}")).collect();
    let mut episodes = Vec::with_capacity(config.n_episodes);
    for e in 0..config.n_episodes {
        let mut pool_words: Vec<Vec<String>> = Vec::with_capacity(config.m_candidates);
        while pool_words.len() < config.m_candidates {
            let words: Vec<String> = vocab
                .choose_multiple(&mut rng, CANDIDATE_LEN)
                .cloned()
                .collect();
            if !pool_words.contains(&words) {
                pool_words.push(words);
            }
        }
        let candidates: Vec<KnowledgeCandidate> = pool_words
            .iter()
            .enumerate()
            .map(|(j, w)| KnowledgeCandidate::new(format!("k{j}"), w.join(" ")))
            .collect();

        let mut gold = rng.random_range(0..config.m_candidates);
        let mut turns = Vec::with_capacity(config.turns_per_episode);
        for t in 0..config.turns_per_episode {
            if t > 0 && !rng.random_bool(config.p_adhere) {
                let shift = rng.random_range(1..config.m_candidates);
                gold = (gold + shift) % config.m_candidates;
            }
            let user = mixed_utterance(&mut rng, &pool_words[gold]);
            let agent = mixed_utterance(&mut rng, &pool_words[gold]);
            turns.push(DialogueTurn {
                user_utterance: Utterance::user(user),
                agent_response: Utterance::agent(agent),
                candidates: candidates.clone(),
                gold_id: Some(candidates[gold].id.clone()),
            });
        }
        episodes.push(DialogueEpisode {
            episode_id: format!("synth-{e:05}"),
            topic: format!("topic-{e}"),
            turns,
            split: split_for(e),
        });
    }
    Ok(episodes)
}
