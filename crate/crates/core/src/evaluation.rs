//! Selection accuracy, adhesion/diversity, per-turn buckets and the overlap
//! metrics for generated responses.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{KnowledgeCandidate, SelectionSample};
use crate::error::{Error, Result};
use crate::text::normalize_words;

/// One line of a prediction file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionLine {
    pub episode_id: String,
    pub turn_index: usize,
    pub predicted_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generated_response: Option<String>,
}

/// A prediction joined with its sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictionRecord {
    pub episode_id: String,
    pub turn_index: usize,
    pub predicted_index: usize,
    pub gold_index: usize,
    pub candidates: Vec<KnowledgeCandidate>,
    pub generated_response: Option<String>,
    pub gold_response: String,
}

impl PredictionRecord {
    pub fn correct(&self) -> bool {
        self.predicted_index == self.gold_index
    }
}

/// How samples without a previous gold knowledge are grouped.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FirstTurnPolicy {
    /// Left out of both groups and counted separately.
    #[default]
    Exclude,
    /// Treated as topic-changing.
    Changing,
}

type Key = (String, usize);

fn key_of(s: &SelectionSample) -> Key {
    (s.episode_id.clone(), s.turn_index)
}

/// Joins prediction lines to samples by `(episode_id, turn_index)`. Lines
/// without a sample, samples without a line and out-of-range predictions are
/// all reported together.
pub fn join_predictions(
    lines: &[PredictionLine],
    samples: &[SelectionSample],
) -> Result<Vec<PredictionRecord>> {
    let by_key: HashMap<Key, &SelectionSample> = samples.iter().map(|s| (key_of(s), s)).collect();
    let mut seen = HashSet::with_capacity(lines.len());
    let mut orphans = Vec::new();
    let mut records = Vec::with_capacity(lines.len());
    for line in lines {
        let key = (line.episode_id.clone(), line.turn_index);
        let Some(sample) = by_key.get(&key) else {
            orphans.push(format!(
                "prediction {}#{} has no sample",
                line.episode_id, line.turn_index
            ));
            continue;
        };
        if !seen.insert(key) {
            orphans.push(format!(
                "duplicate prediction {}#{}",
                line.episode_id, line.turn_index
            ));
            continue;
        }
        let m = sample.candidates.len();
        if line.predicted_index >= m {
            orphans.push(format!(
                "prediction {}#{} index {} outside {m} candidates",
                line.episode_id, line.turn_index, line.predicted_index
            ));
            continue;
        }
        let Some(gold_index) = sample.gold_index else {
            orphans.push(format!(
                "sample {}#{} has no gold label",
                line.episode_id, line.turn_index
            ));
            continue;
        };
        records.push(PredictionRecord {
            episode_id: line.episode_id.clone(),
            turn_index: line.turn_index,
            predicted_index: line.predicted_index,
            gold_index,
            candidates: sample.candidates.clone(),
            generated_response: line.generated_response.clone(),
            gold_response: sample.gold_response.clone(),
        });
    }
    for s in samples {
        if !seen.contains(&key_of(s)) {
            orphans.push(format!(
                "sample {}#{} has no prediction",
                s.episode_id, s.turn_index
            ));
        }
    }
    if orphans.is_empty() {
        Ok(records)
    } else {
        Err(Error::Join(orphans))
    }
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionLine>> {
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    raw.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| Error::parse(format!("{}:{}", path.display(), i + 1), e.to_string()))
        })
        .collect()
}

pub fn write_predictions(path: &Path, lines: &[PredictionLine]) -> Result<()> {
    let mut out = String::new();
    for l in lines {
        out.push_str(&serde_json::to_string(l)?);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn selection_accuracy(records: &[PredictionRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::UndefinedMetric(
            "selection accuracy of zero records".into(),
        ));
    }
    Ok(records.iter().filter(|r| r.correct()).count() as f64 / records.len() as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupCounts {
    pub n_adhesive: usize,
    pub n_changing: usize,
    pub n_first_turn: usize,
    pub correct_adhesive: usize,
    pub correct_changing: usize,
}

impl GroupCounts {
    pub fn adh(&self) -> Option<f64> {
        (self.n_adhesive > 0).then(|| self.correct_adhesive as f64 / self.n_adhesive as f64)
    }

    pub fn div(&self) -> Option<f64> {
        (self.n_changing > 0).then(|| self.correct_changing as f64 / self.n_changing as f64)
    }
}

/// Splits records into topic-adhesive (gold text equals the previous turn's
/// gold text) and topic-changing groups and counts correct selections in each.
pub fn adhesion_diversity(
    records: &[PredictionRecord],
    samples: &[SelectionSample],
    policy: FirstTurnPolicy,
) -> Result<(Option<f64>, Option<f64>, GroupCounts)> {
    let by_key: HashMap<Key, &SelectionSample> = samples.iter().map(|s| (key_of(s), s)).collect();
    let mut counts = GroupCounts::default();
    let mut orphans = Vec::new();
    for r in records {
        let Some(sample) = by_key.get(&(r.episode_id.clone(), r.turn_index)) else {
            orphans.push(format!("{}#{}", r.episode_id, r.turn_index));
            continue;
        };
        let correct = usize::from(r.correct());
        match (sample.is_adhesive(), policy) {
            (Some(true), _) => {
                counts.n_adhesive += 1;
                counts.correct_adhesive += correct;
            }
            (Some(false), _) | (None, FirstTurnPolicy::Changing) => {
                counts.n_changing += 1;
                counts.correct_changing += correct;
            }
            (None, FirstTurnPolicy::Exclude) => counts.n_first_turn += 1,
        }
    }
    if !orphans.is_empty() {
        return Err(Error::Join(orphans));
    }
    Ok((counts.adh(), counts.div(), counts))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnBucket {
    /// "1" to "5", or "6+".
    pub turn: String,
    pub acc: f64,
    pub count: usize,
}

pub const TURN_BUCKETS: [&str; 6] = ["1", "2", "3", "4", "5", "6+"];

/// Accuracy per dialogue turn (first turn = 1); only populated buckets are
/// returned, in turn order.
pub fn per_turn_accuracy(records: &[PredictionRecord]) -> Vec<TurnBucket> {
    let mut correct = [0usize; 6];
    let mut count = [0usize; 6];
    for r in records {
        let b = r.turn_index.min(5);
        count[b] += 1;
        correct[b] += usize::from(r.correct());
    }
    (0..6)
        .filter(|&b| count[b] > 0)
        .map(|b| TurnBucket {
            turn: TURN_BUCKETS[b].to_string(),
            acc: correct[b] as f64 / count[b] as f64,
            count: count[b],
        })
        .collect()
}

fn ngram_counts(words: &[String], n: usize) -> BTreeMap<&[String], usize> {
    let mut counts = BTreeMap::new();
    if words.len() >= n {
        for g in words.windows(n) {
            *counts.entry(g).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped overlap and hypothesis/reference n-gram totals.
fn clipped_overlap(hyp: &[String], reference: &[String], n: usize) -> (usize, usize, usize) {
    let h = ngram_counts(hyp, n);
    let r = ngram_counts(reference, n);
    let overlap = h
        .iter()
        .map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0)))
        .sum();
    (overlap, h.values().sum(), r.values().sum())
}

fn f1(overlap: usize, n_hyp: usize, n_ref: usize) -> f64 {
    if overlap == 0 || n_hyp == 0 || n_ref == 0 {
        return 0.0;
    }
    let p = overlap as f64 / n_hyp as f64;
    let r = overlap as f64 / n_ref as f64;
    2.0 * p * r / (p + r)
}

pub fn unigram_f1(hypothesis: &str, reference: &str) -> f64 {
    let (o, h, r) = clipped_overlap(&normalize_words(hypothesis), &normalize_words(reference), 1);
    f1(o, h, r)
}

/// N-gram overlap F1 for one pair.
pub fn rouge(hypothesis: &str, reference: &str, n: usize) -> f64 {
    let (o, h, r) = clipped_overlap(&normalize_words(hypothesis), &normalize_words(reference), n);
    f1(o, h, r)
}

/// Mean per-pair ROUGE-n F1.
pub fn rouge_corpus(hypotheses: &[String], references: &[String], n: usize) -> Result<f64> {
    check_corpus(hypotheses, references)?;
    let sum: f64 = hypotheses
        .iter()
        .zip(references)
        .map(|(h, r)| rouge(h, r, n))
        .sum();
    Ok(sum / hypotheses.len() as f64)
}

fn check_corpus(hypotheses: &[String], references: &[String]) -> Result<()> {
    if hypotheses.len() != references.len() {
        return Err(Error::Shape(format!(
            "{} hypotheses for {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    if hypotheses.is_empty() {
        return Err(Error::UndefinedMetric("empty corpus".into()));
    }
    Ok(())
}

/// Corpus BLEU-n for n in {1, 2}: the geometric mean of the clipped 1..n-gram
/// precisions times the brevity penalty `exp(1 - |r|/|h|)` when `|h| < |r|`.
pub fn bleu(hypotheses: &[String], references: &[String], n: usize) -> Result<f64> {
    check_corpus(hypotheses, references)?;
    if !(1..=2).contains(&n) {
        return Err(Error::Config(format!("BLEU-{n} is not supported")));
    }
    let toks: Vec<(Vec<String>, Vec<String>)> = hypotheses
        .iter()
        .zip(references)
        .map(|(h, r)| (normalize_words(h), normalize_words(r)))
        .collect();
    let hyp_len: usize = toks.iter().map(|(h, _)| h.len()).sum();
    let ref_len: usize = toks.iter().map(|(_, r)| r.len()).sum();
    if hyp_len == 0 {
        return Ok(0.0);
    }
    let mut log_p = 0.0;
    for k in 1..=n {
        let (mut overlap, mut total) = (0, 0);
        for (h, r) in &toks {
            let (o, t, _) = clipped_overlap(h, r, k);
            overlap += o;
            total += t;
        }
        if overlap == 0 {
            return Ok(0.0);
        }
        log_p += (overlap as f64 / total as f64).ln();
    }
    let bp = if hyp_len < ref_len {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    } else {
        1.0
    };
    Ok(bp * (log_p / n as f64).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub acc: f64,
    pub adh: Option<f64>,
    pub div: Option<f64>,
    pub n_adhesive: usize,
    pub n_changing: usize,
    pub n_first_turn: usize,
    pub first_turn_policy: FirstTurnPolicy,
    pub per_turn: Vec<TurnBucket>,
    pub uf1: Option<f64>,
    pub bleu1: Option<f64>,
    pub bleu2: Option<f64>,
    pub rouge1: Option<f64>,
    pub rouge2: Option<f64>,
    pub n_records: usize,
}

/// The grouped accuracy must be the count-weighted mean of Adh and Div. Checked
/// on integer counts, so the identity is exact.
pub fn check_decomposition(
    records: &[PredictionRecord],
    samples: &[SelectionSample],
    counts: &GroupCounts,
    policy: FirstTurnPolicy,
) -> Result<()> {
    let grouped: HashSet<Key> = samples
        .iter()
        .filter(|s| s.is_adhesive().is_some() || policy == FirstTurnPolicy::Changing)
        .map(key_of)
        .collect();
    let in_groups: Vec<&PredictionRecord> = records
        .iter()
        .filter(|r| grouped.contains(&(r.episode_id.clone(), r.turn_index)))
        .collect();
    let correct = in_groups.iter().filter(|r| r.correct()).count();
    if in_groups.len() != counts.n_adhesive + counts.n_changing
        || correct != counts.correct_adhesive + counts.correct_changing
    {
        return Err(Error::Numeric(format!(
            "accuracy decomposition broken: {correct}/{} grouped records vs {counts:?}",
            in_groups.len()
        )));
    }
    Ok(())
}

/// Every metric for joined records. Generation metrics are present only when
/// every record carries a generated response.
pub fn evaluate_records(
    records: &[PredictionRecord],
    samples: &[SelectionSample],
    policy: FirstTurnPolicy,
) -> Result<MetricsReport> {
    let acc = selection_accuracy(records)?;
    let (adh, div, counts) = adhesion_diversity(records, samples, policy)?;
    check_decomposition(records, samples, &counts, policy)?;
    let generated: Option<Vec<String>> = records
        .iter()
        .map(|r| r.generated_response.clone())
        .collect();
    let (uf1, bleu1, bleu2, rouge1, rouge2) = match generated {
        Some(hyps) => {
            let refs: Vec<String> = records.iter().map(|r| r.gold_response.clone()).collect();
            let uf1 = hyps
                .iter()
                .zip(&refs)
                .map(|(h, r)| unigram_f1(h, r))
                .sum::<f64>()
                / hyps.len() as f64;
            (
                Some(uf1),
                Some(bleu(&hyps, &refs, 1)?),
                Some(bleu(&hyps, &refs, 2)?),
                Some(rouge_corpus(&hyps, &refs, 1)?),
                Some(rouge_corpus(&hyps, &refs, 2)?),
            )
        }
        None => (None, None, None, None, None),
    };
    Ok(MetricsReport {
        acc,
        adh,
        div,
        n_adhesive: counts.n_adhesive,
        n_changing: counts.n_changing,
        n_first_turn: counts.n_first_turn,
        first_turn_policy: policy,
        per_turn: per_turn_accuracy(records),
        uf1,
        bleu1,
        bleu2,
        rouge1,
        rouge2,
        n_records: records.len(),
    })
}

pub fn report_json(report: &MetricsReport) -> Result<String> {
    let mut s = serde_json::to_string_pretty(report)?;
    s.push('\n');
    Ok(s)
}

/// Reads a prediction file, joins it to `samples`, computes the report and
/// writes it as JSON to `out_path`.
pub fn evaluate_run(
    prediction_file: &Path,
    samples: &[SelectionSample],
    out_path: &Path,
    policy: FirstTurnPolicy,
) -> Result<MetricsReport> {
    let lines = read_predictions(prediction_file)?;
    let records = join_predictions(&lines, samples)?;
    let report = evaluate_records(&records, samples, policy)?;
    std::fs::write(out_path, report_json(&report)?).map_err(|e| Error::io(out_path, e))?;
    Ok(report)
}
