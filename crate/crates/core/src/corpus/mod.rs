//! Dialogue data model, corpus loading and selection-sample construction.

mod ingest;
mod synth;

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use ingest::{convert_holle, convert_wow};
pub use synth::{synth_corpus, SynthConfig};

/// Id and text of the sentinel candidate standing for "no passage used".
pub const NO_PASSAGE: &str = "no_passages_used";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    Agent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: Speaker,
    pub text: String,
}

impl Utterance {
    pub fn user(text: impl Into<String>) -> Self {
        Self {
            speaker: Speaker::User,
            text: text.into(),
        }
    }

    pub fn agent(text: impl Into<String>) -> Self {
        Self {
            speaker: Speaker::Agent,
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KnowledgeCandidate {
    pub id: String,
    pub text: String,
}

impl KnowledgeCandidate {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
        }
    }

    pub fn no_passage() -> Self {
        Self::new(NO_PASSAGE, NO_PASSAGE)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DialogueTurn {
    pub user_utterance: Utterance,
    pub agent_response: Utterance,
    pub candidates: Vec<KnowledgeCandidate>,
    pub gold_id: Option<String>,
}

impl DialogueTurn {
    pub fn gold_index(&self) -> Option<usize> {
        let gold = self.gold_id.as_deref()?;
        self.candidates.iter().position(|c| c.id == gold)
    }

    pub fn gold(&self) -> Option<&KnowledgeCandidate> {
        self.gold_index().map(|i| &self.candidates[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Valid,
    TestSeen,
    TestUnseen,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::TestSeen => "test_seen",
            Split::TestUnseen => "test_unseen",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test_seen" => Ok(Split::TestSeen),
            "test_unseen" => Ok(Split::TestUnseen),
            other => Err(Error::Config(format!("unknown split label {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    Wow,
    Holle,
}

impl CorpusFormat {
    fn allows(self, split: Split) -> bool {
        !(self == CorpusFormat::Holle && split == Split::TestUnseen)
    }
}

impl FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wow" => Ok(CorpusFormat::Wow),
            "holle" => Ok(CorpusFormat::Holle),
            other => Err(Error::Config(format!("unknown corpus format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DialogueEpisode {
    pub episode_id: String,
    pub topic: String,
    pub turns: Vec<DialogueTurn>,
    pub split: Split,
}

/// One knowledge-selection decision point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionSample {
    pub episode_id: String,
    pub turn_index: usize,
    /// Last `window_l` exchanges followed by the current user utterance.
    pub context: Vec<Utterance>,
    pub candidates: Vec<KnowledgeCandidate>,
    pub gold_index: Option<usize>,
    pub prev_gold: Option<KnowledgeCandidate>,
    pub gold_response: String,
}

impl SelectionSample {
    pub fn gold(&self) -> Option<&KnowledgeCandidate> {
        self.gold_index.map(|i| &self.candidates[i])
    }

    /// Gold knowledge repeats the previous turn's gold (compared by text).
    /// `None` when there is no previous gold to compare against.
    pub fn is_adhesive(&self) -> Option<bool> {
        let prev = self.prev_gold.as_ref()?;
        Some(self.gold()?.text == prev.text)
    }
}

// On-disk schema.

#[derive(Debug, Serialize, Deserialize)]
struct EpisodeRecord {
    episode_id: String,
    topic: String,
    split: String,
    turns: Vec<TurnRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TurnRecord {
    user: String,
    agent: String,
    #[serde(default)]
    candidates: Vec<KnowledgeCandidate>,
    #[serde(default)]
    gold_id: Option<String>,
}

fn normalize_ws(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn turn_from_record(rec: TurnRecord, location: &str) -> Result<DialogueTurn> {
    let user = normalize_ws(&rec.user);
    let agent = normalize_ws(&rec.agent);
    if user.is_empty() || agent.is_empty() {
        return Err(Error::parse(location, "utterance text is empty"));
    }
    let mut seen = HashSet::new();
    let mut candidates = Vec::with_capacity(rec.candidates.len() + 1);
    for c in rec.candidates {
        let text = normalize_ws(&c.text);
        if text.is_empty() {
            return Err(Error::parse(
                location,
                format!("candidate {:?} has empty text", c.id),
            ));
        }
        if !seen.insert(c.id.clone()) {
            return Err(Error::parse(
                location,
                format!("duplicate candidate id {:?}", c.id),
            ));
        }
        candidates.push(KnowledgeCandidate::new(c.id, text));
    }
    if let Some(gold) = rec.gold_id.as_deref() {
        if !seen.contains(gold) {
            if gold == NO_PASSAGE {
                candidates.push(KnowledgeCandidate::no_passage());
            } else {
                return Err(Error::parse(
                    location,
                    format!("gold_id {gold:?} is not among the candidates"),
                ));
            }
        }
    }
    Ok(DialogueTurn {
        user_utterance: Utterance::user(user),
        agent_response: Utterance::agent(agent),
        candidates,
        gold_id: rec.gold_id,
    })
}

/// Parses a corpus in the normalized JSON schema from a string.
pub fn parse_corpus(
    raw: &str,
    format: CorpusFormat,
    split: Option<Split>,
) -> Result<Vec<DialogueEpisode>> {
    if let Some(s) = split {
        if !format.allows(s) {
            return Err(Error::Config(format!(
                "split {s} does not exist for {format:?}"
            )));
        }
    }
    let values: Vec<serde_json::Value> =
        serde_json::from_str(raw).map_err(|e| Error::parse("corpus file", e.to_string()))?;
    let mut episodes = Vec::with_capacity(values.len());
    for (i, value) in values.into_iter().enumerate() {
        let id_hint = value
            .get("episode_id")
            .and_then(|v| v.as_str())
            .map(|s| format!("episode {s:?}"))
            .unwrap_or_else(|| format!("episode #{i}"));
        let rec: EpisodeRecord =
            serde_json::from_value(value).map_err(|e| Error::parse(&id_hint, e.to_string()))?;
        let ep_split: Split = rec.split.parse()?;
        if !format.allows(ep_split) {
            return Err(Error::Config(format!(
                "{id_hint}: split {ep_split} does not exist for {format:?}"
            )));
        }
        if split.is_some_and(|s| s != ep_split) {
            continue;
        }
        if rec.turns.is_empty() {
            return Err(Error::parse(&id_hint, "episode has no turns"));
        }
        let turns = rec
            .turns
            .into_iter()
            .enumerate()
            .map(|(t, turn)| turn_from_record(turn, &format!("{id_hint}, turn {t}")))
            .collect::<Result<Vec<_>>>()?;
        episodes.push(DialogueEpisode {
            episode_id: rec.episode_id,
            topic: rec.topic,
            turns,
            split: ep_split,
        });
    }
    Ok(episodes)
}

/// Loads episodes in file order, keeping only `split` when given.
pub fn load_corpus(
    path: &Path,
    format: CorpusFormat,
    split: Option<Split>,
) -> Result<Vec<DialogueEpisode>> {
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&raw, format, split)
}

pub fn corpus_to_json(episodes: &[DialogueEpisode]) -> Result<String> {
    let records: Vec<EpisodeRecord> = episodes
        .iter()
        .map(|ep| EpisodeRecord {
            episode_id: ep.episode_id.clone(),
            topic: ep.topic.clone(),
            split: ep.split.to_string(),
            turns: ep
                .turns
                .iter()
                .map(|t| TurnRecord {
                    user: t.user_utterance.text.clone(),
                    agent: t.agent_response.text.clone(),
                    candidates: t.candidates.clone(),
                    gold_id: t.gold_id.clone(),
                })
                .collect(),
        })
        .collect();
    Ok(serde_json::to_string_pretty(&records)?)
}

pub fn write_corpus(path: &Path, episodes: &[DialogueEpisode]) -> Result<()> {
    let json = corpus_to_json(episodes)?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BuiltSamples {
    pub samples: Vec<SelectionSample>,
    /// Turns without a candidate pool or without a gold label.
    pub skipped: usize,
}

/// One sample per gold-labeled turn. The context holds the last `window_l`
/// user/agent exchanges plus the current user utterance.
pub fn build_samples(episode: &DialogueEpisode, window_l: usize) -> Result<BuiltSamples> {
    if window_l == 0 {
        return Err(Error::Config("window_l must be at least 1".into()));
    }
    let mut out = BuiltSamples::default();
    for (t, turn) in episode.turns.iter().enumerate() {
        let Some(gold_index) = turn.gold_index() else {
            out.skipped += 1;
            continue;
        };
        let mut context = Vec::with_capacity(2 * window_l + 1);
        for prev in &episode.turns[t.saturating_sub(window_l)..t] {
            context.push(prev.user_utterance.clone());
            context.push(prev.agent_response.clone());
        }
        context.push(turn.user_utterance.clone());
        let prev_gold = t
            .checked_sub(1)
            .and_then(|p| episode.turns[p].gold())
            .cloned();
        out.samples.push(SelectionSample {
            episode_id: episode.episode_id.clone(),
            turn_index: t,
            context,
            candidates: turn.candidates.clone(),
            gold_index: Some(gold_index),
            prev_gold,
            gold_response: turn.agent_response.text.clone(),
        });
    }
    Ok(out)
}

/// Samples for every episode, in corpus order.
pub fn build_all_samples(
    episodes: &[DialogueEpisode],
    window_l: usize,
) -> Result<Vec<SelectionSample>> {
    let mut all = Vec::new();
    for ep in episodes {
        all.extend(build_samples(ep, window_l)?.samples);
    }
    Ok(all)
}

/// `[usr]u[agt]r...[usr]u`: each utterance prefixed by its role tag.
pub fn render_context(context: &[Utterance]) -> String {
    let mut out = String::new();
    for u in context {
        out.push_str(match u.speaker {
            Speaker::User => crate::text::USR,
            Speaker::Agent => crate::text::AGT,
        });
        out.push_str(&u.text);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn turn(user: &str, agent: &str, cands: &[(&str, &str)], gold: Option<&str>) -> DialogueTurn {
        DialogueTurn {
            user_utterance: Utterance::user(user),
            agent_response: Utterance::agent(agent),
            candidates: cands
                .iter()
                .map(|(i, t)| KnowledgeCandidate::new(*i, *t))
                .collect(),
            gold_id: gold.map(str::to_string),
        }
    }

    fn episode(turns: Vec<DialogueTurn>) -> DialogueEpisode {
        DialogueEpisode {
            episode_id: "e".into(),
            topic: "t".into(),
            turns,
            split: Split::Train,
        }
    }

    const FIXTURE: &str = r#"[{
        "episode_id": "ep1", "topic": "dogs", "split": "train",
        "turns": [
          {"user": "hi", "agent": "dogs are great",
           "candidates": [{"id":"a","text":"dogs bark"},{"id":"b","text":"cats purr"},{"id":"c","text":"fish swim"}],
           "gold_id": "a"},
          {"user": "why", "agent": "no idea",
           "candidates": [{"id":"a","text":"dogs bark"},{"id":"b","text":"cats purr"},{"id":"c","text":"fish swim"}],
           "gold_id": "no_passages_used"}
        ]}]"#;

    #[test]
    fn load_counts_and_sentinel() {
        let eps = parse_corpus(FIXTURE, CorpusFormat::Wow, None).unwrap();
        assert_eq!(eps.len(), 1);
        assert_eq!(eps[0].turns[0].candidates.len(), 3);
        assert_eq!(eps[0].turns[1].candidates.len(), 4);
        assert_eq!(eps[0].turns[1].gold().unwrap().text, NO_PASSAGE);
    }

    #[test]
    fn load_empty_list() {
        assert!(parse_corpus("[]", CorpusFormat::Wow, None)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn load_filters_by_split() {
        let eps = parse_corpus(FIXTURE, CorpusFormat::Wow, Some(Split::Valid)).unwrap();
        assert!(eps.is_empty());
    }

    #[test]
    fn load_errors_name_location() {
        let bad = FIXTURE.replace(r#""gold_id": "a""#, r#""gold_id": "zz""#);
        let err = parse_corpus(&bad, CorpusFormat::Wow, None).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("ep1") && msg.contains("turn 0"), "{msg}");

        let bad = FIXTURE.replace(r#""user": "why""#, r#""user": 3"#);
        let msg = parse_corpus(&bad, CorpusFormat::Wow, None)
            .unwrap_err()
            .to_string();
        assert!(msg.contains("ep1"), "{msg}");
    }

    #[test]
    fn unknown_split_is_config_error() {
        let bad = FIXTURE.replace(r#""split": "train""#, r#""split": "dev""#);
        assert!(matches!(
            parse_corpus(&bad, CorpusFormat::Wow, None),
            Err(Error::Config(_))
        ));
        assert!(matches!("test".parse::<Split>(), Err(Error::Config(_))));
        assert!(matches!(
            parse_corpus("[]", CorpusFormat::Holle, Some(Split::TestUnseen)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn write_then_load_is_identity() {
        let eps = parse_corpus(FIXTURE, CorpusFormat::Wow, None).unwrap();
        let json = corpus_to_json(&eps).unwrap();
        assert_eq!(parse_corpus(&json, CorpusFormat::Wow, None).unwrap(), eps);
    }

    #[test]
    fn samples_window_and_prev_gold() {
        let pool = [("x", "k one"), ("y", "k two")];
        let ep = episode(vec![
            turn("u0", "r0", &pool, Some("x")),
            turn("u1", "r1", &pool, Some("y")),
            turn("u2", "r2", &pool, Some("y")),
        ]);
        let built = build_samples(&ep, 1).unwrap();
        assert_eq!(built.samples.len(), 3);
        let s = &built.samples;
        assert!(s[0].prev_gold.is_none());
        assert_eq!(s[0].context, vec![Utterance::user("u0")]);
        assert_eq!(
            s[2].context,
            vec![
                Utterance::user("u1"),
                Utterance::agent("r1"),
                Utterance::user("u2")
            ]
        );
        assert_eq!(s[1].prev_gold.as_ref().unwrap().id, "x");
        assert_eq!(s[2].is_adhesive(), Some(true));
        assert_eq!(s[1].is_adhesive(), Some(false));
        assert_eq!(s[0].is_adhesive(), None);
        assert_eq!(s[2].gold_response, "r2");
    }

    #[test]
    fn single_turn_episode() {
        let ep = episode(vec![turn("u0", "r0", &[("x", "k")], Some("x"))]);
        let s = build_samples(&ep, 1).unwrap().samples;
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].context, vec![Utterance::user("u0")]);
    }

    #[test]
    fn repeated_gold_text_matches_prev() {
        let pool = [("x", "same knowledge"), ("y", "other")];
        let pool2 = [("q", "other"), ("p", "same knowledge")];
        let ep = episode(vec![
            turn("u0", "r0", &pool, Some("x")),
            turn("u1", "r1", &pool2, Some("p")),
        ]);
        let s = build_samples(&ep, 1).unwrap().samples;
        let gi = s[1].gold_index.unwrap();
        assert_eq!(
            s[1].prev_gold.as_ref().unwrap().text,
            s[1].candidates[gi].text
        );
    }

    #[test]
    fn unlabeled_turns_are_skipped_but_kept_in_context() {
        let ep = episode(vec![
            turn("u0", "r0", &[], None),
            turn("u1", "r1", &[("x", "k")], Some("x")),
        ]);
        let built = build_samples(&ep, 2).unwrap();
        assert_eq!(built.skipped, 1);
        assert_eq!(built.samples.len(), 1);
        assert_eq!(built.samples[0].context.len(), 3);
        assert!(built.samples[0].prev_gold.is_none());
        assert!(build_samples(&ep, 0).is_err());
    }

    #[test]
    fn render_context_format() {
        assert_eq!(render_context(&[Utterance::user("hi")]), "[usr]hi");
        assert_eq!(
            render_context(&[
                Utterance::user("a"),
                Utterance::agent("b"),
                Utterance::user("c")
            ]),
            "[usr]a[agt]b[usr]c"
        );
        assert_eq!(
            render_context(&[
                Utterance::user("a"),
                Utterance::agent(""),
                Utterance::user("c")
            ]),
            "[usr]a[agt][usr]c"
        );
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn utterance() -> impl Strategy<Value = Utterance> {
            (any::<bool>(), "[a-z ]{0,6}").prop_map(|(user, text)| {
                if user {
                    Utterance::user(text)
                } else {
                    Utterance::agent(text)
                }
            })
        }

        proptest! {
            #[test]
            fn render_context_is_injective(
                a in prop::collection::vec(utterance(), 1..5),
                b in prop::collection::vec(utterance(), 1..5),
            ) {
                if a != b {
                    prop_assert_ne!(render_context(&a), render_context(&b));
                }
            }

            #[test]
            fn sample_count_equals_labeled_turns(
                labels in prop::collection::vec(prop::option::of(0usize..3), 1..8),
                window in 1usize..4,
            ) {
                let pool = [("a", "alpha"), ("b", "beta"), ("c", "gamma")];
                let turns: Vec<_> = labels
                    .iter()
                    .map(|l| turn("u", "r", &pool, l.map(|i| pool[i].0)))
                    .collect();
                let ep = episode(turns);
                let built = build_samples(&ep, window).unwrap();
                let labeled = labels.iter().filter(|l| l.is_some()).count();
                prop_assert_eq!(built.samples.len(), labeled);
                prop_assert_eq!(built.skipped, labels.len() - labeled);
                for s in &built.samples {
                    let t = s.turn_index;
                    let expect = if t > 0 { labels[t - 1].map(|i| pool[i].1) } else { None };
                    prop_assert_eq!(s.prev_gold.as_ref().map(|c| c.text.as_str()), expect);
                    prop_assert_eq!(s.context.last().unwrap().speaker, Speaker::User);
                }
            }
        }
    }
}
