//! Converters from the upstream Wizard-of-Wikipedia and Holl-E releases into
//! the normalized episode schema.
//!
//! WoW: a JSON array of dialogues with `chosen_topic`, `chosen_topic_passage`
//! and `dialog` entries (`speaker`, `text`, `checked_sentence`,
//! `retrieved_passages`). Every wizard utterance becomes one turn whose user
//! side is the preceding apprentice utterance (the chosen topic when the
//! wizard opens). The pool is the chosen-topic passage plus the passages
//! retrieved for that wizard turn.
//!
//! Holl-E: a JSON array of conversations with `chat_id`, `movie_name`,
//! `chat` (alternating utterances, user first), `documents`
//! (`plot`, `review`, `comments`) and `spans` (one entry per agent utterance,
//! `null` when no span was used). The pool is the sentence-split documents;
//! the gold is the first sentence containing the span.

use std::collections::HashSet;

use serde::Deserialize;
use serde_json::Value;

use super::{DialogueEpisode, DialogueTurn, KnowledgeCandidate, Split, Utterance, NO_PASSAGE};
use crate::error::{Error, Result};
use crate::text::normalize_words;

#[derive(Debug, Deserialize)]
struct WowDialogue {
    #[serde(default)]
    chosen_topic: String,
    #[serde(default)]
    chosen_topic_passage: Vec<String>,
    dialog: Vec<WowUtterance>,
}

#[derive(Debug, Deserialize)]
struct WowUtterance {
    speaker: String,
    text: String,
    #[serde(default)]
    checked_sentence: serde_json::Map<String, Value>,
    #[serde(default)]
    retrieved_passages: Vec<serde_json::Map<String, Value>>,
}

struct PoolBuilder {
    seen: HashSet<String>,
    candidates: Vec<KnowledgeCandidate>,
}

impl PoolBuilder {
    fn new() -> Self {
        Self {
            seen: HashSet::new(),
            candidates: Vec::new(),
        }
    }

    fn push(&mut self, id: String, text: &str) {
        let text = text.split_whitespace().collect::<Vec<_>>().join(" ");
        if !text.is_empty() && self.seen.insert(text.clone()) {
            let id = if self.candidates.iter().any(|c| c.id == id) {
                format!("{id}#{}", self.candidates.len())
            } else {
                id
            };
            self.candidates.push(KnowledgeCandidate::new(id, text));
        }
    }

    fn id_of(&self, text: &str) -> Option<String> {
        let text = text.split_whitespace().collect::<Vec<_>>().join(" ");
        self.candidates
            .iter()
            .find(|c| c.text == text)
            .map(|c| c.id.clone())
    }
}

fn is_wizard(speaker: &str) -> bool {
    speaker.to_lowercase().contains("wizard")
}

pub fn convert_wow(raw: &str, split: Split) -> Result<Vec<DialogueEpisode>> {
    let dialogues: Vec<Value> =
        serde_json::from_str(raw).map_err(|e| Error::parse("wow file", e.to_string()))?;
    let mut episodes = Vec::with_capacity(dialogues.len());
    for (i, value) in dialogues.into_iter().enumerate() {
        let location = format!("wow dialogue #{i}");
        let dlg: WowDialogue =
            serde_json::from_value(value).map_err(|e| Error::parse(&location, e.to_string()))?;
        let mut turns = Vec::new();
        let mut last_user: Option<String> = None;
        for (u, utt) in dlg.dialog.iter().enumerate() {
            if !is_wizard(&utt.speaker) {
                last_user = Some(utt.text.clone());
                continue;
            }
            let mut pool = PoolBuilder::new();
            for (s, sent) in dlg.chosen_topic_passage.iter().enumerate() {
                pool.push(format!("{}__{s}", dlg.chosen_topic), sent);
            }
            for passage in &utt.retrieved_passages {
                for (title, sentences) in passage {
                    let Some(sentences) = sentences.as_array() else {
                        continue;
                    };
                    for (s, sent) in sentences.iter().enumerate() {
                        if let Some(sent) = sent.as_str() {
                            pool.push(format!("{title}__{s}"), sent);
                        }
                    }
                }
            }
            let gold_id = match utt.checked_sentence.iter().next() {
                None => None,
                Some((key, _)) if key.contains(NO_PASSAGE) => Some(NO_PASSAGE.to_string()),
                Some((key, sent)) => {
                    let sent = sent.as_str().ok_or_else(|| {
                        Error::parse(
                            format!("{location}, utterance {u}"),
                            "checked_sentence is not a string",
                        )
                    })?;
                    if pool.id_of(sent).is_none() {
                        pool.push(key.clone(), sent);
                    }
                    pool.id_of(sent)
                }
            };
            let user = last_user
                .take()
                .filter(|t| !t.trim().is_empty())
                .unwrap_or_else(|| dlg.chosen_topic.clone());
            turns.push(DialogueTurn {
                user_utterance: Utterance::user(user),
                agent_response: Utterance::agent(utt.text.clone()),
                candidates: pool.candidates,
                gold_id,
            });
        }
        if turns.is_empty() {
            continue;
        }
        episodes.push(DialogueEpisode {
            episode_id: format!("wow-{split}-{i}"),
            topic: dlg.chosen_topic,
            turns,
            split,
        });
    }
    Ok(episodes)
}

#[derive(Debug, Deserialize)]
struct HolleConversation {
    chat_id: String,
    #[serde(default)]
    movie_name: String,
    chat: Vec<String>,
    #[serde(default)]
    documents: HolleDocuments,
    #[serde(default)]
    spans: Vec<Option<String>>,
}

#[derive(Debug, Default, Deserialize)]
struct HolleDocuments {
    #[serde(default)]
    plot: String,
    #[serde(default)]
    review: String,
    #[serde(default)]
    comments: Vec<String>,
}

fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        cur.push(ch);
        if matches!(ch, '.' | '!' | '?') {
            let s = cur.trim().to_string();
            if !s.is_empty() {
                out.push(s);
            }
            cur.clear();
        }
    }
    let s = cur.trim().to_string();
    if !s.is_empty() {
        out.push(s);
    }
    out
}

fn contains_words(haystack: &str, needle: &str) -> bool {
    let h = normalize_words(haystack).join(" ");
    let n = normalize_words(needle).join(" ");
    !n.is_empty() && format!(" {h} ").contains(&format!(" {n} "))
}

pub fn convert_holle(raw: &str, split: Split) -> Result<Vec<DialogueEpisode>> {
    if split == Split::TestUnseen {
        return Err(Error::Config("Holl-E has no test_unseen split".into()));
    }
    let convs: Vec<Value> =
        serde_json::from_str(raw).map_err(|e| Error::parse("holle file", e.to_string()))?;
    let mut episodes = Vec::with_capacity(convs.len());
    for (i, value) in convs.into_iter().enumerate() {
        let location = format!("holle conversation #{i}");
        let conv: HolleConversation =
            serde_json::from_value(value).map_err(|e| Error::parse(&location, e.to_string()))?;
        let mut base = PoolBuilder::new();
        let docs = [
            ("plot", conv.documents.plot.clone()),
            ("review", conv.documents.review.clone()),
        ];
        for (name, doc) in docs {
            for (s, sent) in split_sentences(&doc).iter().enumerate() {
                base.push(format!("{name}__{s}"), sent);
            }
        }
        for (c, comment) in conv.documents.comments.iter().enumerate() {
            for (s, sent) in split_sentences(comment).iter().enumerate() {
                base.push(format!("comment{c}__{s}"), sent);
            }
        }
        let mut turns = Vec::new();
        for (t, pair) in conv.chat.chunks(2).enumerate() {
            let [user, agent] = pair else { break };
            let mut pool = PoolBuilder {
                seen: base.seen.clone(),
                candidates: base.candidates.clone(),
            };
            let gold_id = match conv.spans.get(t).cloned().flatten() {
                None => Some(NO_PASSAGE.to_string()),
                Some(span) => match pool
                    .candidates
                    .iter()
                    .find(|c| contains_words(&c.text, &span))
                {
                    Some(c) => Some(c.id.clone()),
                    None => {
                        pool.push(format!("span__{t}"), &span);
                        pool.id_of(&span)
                    }
                },
            };
            turns.push(DialogueTurn {
                user_utterance: Utterance::user(user.clone()),
                agent_response: Utterance::agent(agent.clone()),
                candidates: pool.candidates,
                gold_id,
            });
        }
        if turns.is_empty() {
            continue;
        }
        episodes.push(DialogueEpisode {
            episode_id: format!("holle-{}", conv.chat_id),
            topic: conv.movie_name,
            turns,
            split,
        });
    }
    Ok(episodes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{corpus_to_json, parse_corpus, CorpusFormat};

    const WOW: &str = r#"[{
      "chosen_topic": "Dog",
      "persona": "i like dogs",
      "chosen_topic_passage": ["Dogs are mammals.", "Dogs bark."],
      "dialog": [
        {"speaker": "0_Wizard", "text": "Dogs are mammals!",
         "checked_sentence": {"chosen_Dog_0": "Dogs are mammals."},
         "retrieved_passages": [{"Puppy": ["Puppies are young dogs."]}]},
        {"speaker": "1_Apprentice", "text": "Tell me more."},
        {"speaker": "0_Wizard", "text": "Not sure.",
         "checked_sentence": {"no_passages_used": "no_passages_used"},
         "retrieved_passages": []}
      ]}]"#;

    #[test]
    fn wow_conversion() {
        let eps = convert_wow(WOW, Split::Train).unwrap();
        assert_eq!(eps.len(), 1);
        let t = &eps[0].turns;
        assert_eq!(t.len(), 2);
        assert_eq!(t[0].user_utterance.text, "Dog");
        assert_eq!(t[0].candidates.len(), 3);
        assert_eq!(t[0].gold().unwrap().text, "Dogs are mammals.");
        assert_eq!(t[1].user_utterance.text, "Tell me more.");
        assert_eq!(t[1].gold_id.as_deref(), Some(NO_PASSAGE));
        // the normalized loader appends the sentinel
        let json = corpus_to_json(&eps).unwrap();
        let loaded = parse_corpus(&json, CorpusFormat::Wow, None).unwrap();
        assert_eq!(loaded[0].turns[1].candidates.len(), 3);
        assert_eq!(loaded[0].turns[1].gold().unwrap().text, NO_PASSAGE);
    }

    #[test]
    fn holle_conversion() {
        let raw = r#"[{"chat_id": "c1", "movie_name": "Heat",
            "chat": ["seen it?", "It is a crime film.", "cast?", "De Niro stars.", "ok"],
            "documents": {"plot": "Heat is a crime film. It is long.", "review": "Great cast.", "comments": ["De Niro stars here."]},
            "spans": ["a crime film", null]}]"#;
        let eps = convert_holle(raw, Split::TestSeen).unwrap();
        let t = &eps[0].turns;
        assert_eq!(t.len(), 2);
        assert_eq!(t[0].gold().unwrap().text, "Heat is a crime film.");
        assert_eq!(t[1].gold_id.as_deref(), Some(NO_PASSAGE));
        assert!(convert_holle(raw, Split::TestUnseen).is_err());
    }

    #[test]
    fn malformed_upstream_names_record() {
        let msg = convert_wow(r#"[{"dialog": 3}]"#, Split::Train)
            .unwrap_err()
            .to_string();
        assert!(msg.contains("#0"), "{msg}");
    }
}
