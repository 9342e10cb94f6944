//! The full selector: encoder, context aggregation, transition features,
//! graph encoder and scorer wired together.

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::corpus::{render_context, KnowledgeCandidate, SelectionSample, Utterance};
use crate::encoder::{
    make_pair, pool_pairs, ContextAggregator, EncoderBackend, EncoderConfig, PairedInput,
    TokenBatch, ToyTransformer,
};
use crate::error::{Error, Result};
use crate::nn::{Mode, ParamStore};
use crate::selector::{
    build_knowledge_graph, pool_graph, AttentionScorer, GraphEncoder, KnowledgeGraph,
    PointerScorer, SelectionDistribution, SelectorConfig,
};
use crate::text::Vocab;
use crate::transition::{
    coherence_feature, development_feature, transition_repr, Activation, TransitionParams,
};

/// Component switches; everything on is the full model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablations {
    pub shift_loss: bool,
    pub cross_opt: bool,
    pub coher_opt: bool,
    pub pointer_net: bool,
}

impl Default for Ablations {
    fn default() -> Self {
        Self {
            shift_loss: true,
            cross_opt: true,
            coher_opt: true,
            pointer_net: true,
        }
    }
}

impl Ablations {
    /// Parses a variant label such as `full`, `no_cross_opt` or `no_pointer_net`.
    pub fn variant(label: &str) -> Result<Self> {
        let mut a = Self::default();
        match label {
            "full" => {}
            "no_shift_loss" => a.shift_loss = false,
            "no_cross_opt" => a.cross_opt = false,
            "no_coher_opt" => a.coher_opt = false,
            "no_pointer_net" => a.pointer_net = false,
            other => return Err(Error::Config(format!("unknown ablation variant {other:?}"))),
        }
        Ok(a)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub d_coh: usize,
    pub d_cro: usize,
    pub activation: Activation,
    pub selector: SelectorConfig,
    pub window_l: usize,
    pub ablations: Ablations,
}

impl ModelConfig {
    /// Toy-scale configuration: `d_coh = d_cro = d`.
    pub fn toy(vocab_size: usize) -> Self {
        let encoder = EncoderConfig::toy(vocab_size);
        let d = encoder.hidden;
        Self {
            encoder,
            d_coh: d,
            d_cro: d,
            activation: Activation::Tanh,
            selector: SelectorConfig::default(),
            window_l: 1,
            ablations: Ablations::default(),
        }
    }

    pub fn hidden(&self) -> usize {
        self.encoder.hidden
    }

    pub fn d_e(&self) -> usize {
        let coh = if self.ablations.coher_opt {
            self.d_coh
        } else {
            0
        };
        coh + self.d_cro + 2 * self.hidden()
    }
}

/// Architecture hyperparameters independent of the vocabulary and of the
/// ablation switches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSettings {
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
    pub max_len: usize,
    pub encoder_dropout: f64,
    pub d_coh: usize,
    pub d_cro: usize,
    pub activation: Activation,
    pub selector: SelectorConfig,
    pub window_l: usize,
}

impl Default for ModelSettings {
    fn default() -> Self {
        let t = ModelConfig::toy(0);
        Self {
            hidden: t.encoder.hidden,
            layers: t.encoder.layers,
            heads: t.encoder.heads,
            ffn_hidden: t.encoder.ffn_hidden,
            max_len: t.encoder.max_len,
            encoder_dropout: t.encoder.dropout,
            d_coh: t.d_coh,
            d_cro: t.d_cro,
            activation: t.activation,
            selector: t.selector,
            window_l: t.window_l,
        }
    }
}

impl ModelSettings {
    pub fn build(&self, vocab_size: usize, ablations: Ablations) -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig {
                vocab_size,
                hidden: self.hidden,
                layers: self.layers,
                heads: self.heads,
                ffn_hidden: self.ffn_hidden,
                max_len: self.max_len,
                dropout: self.encoder_dropout,
            },
            d_coh: self.d_coh,
            d_cro: self.d_cro,
            activation: self.activation,
            selector: self.selector.clone(),
            window_l: self.window_l,
            ablations,
        }
    }
}

enum Scorer {
    Pointer(PointerScorer),
    Attention(AttentionScorer),
}

/// A sample tokenized for the model: one pair per candidate plus, when there
/// is previous knowledge, that knowledge paired with the same context.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    pub pairs: Vec<PairedInput>,
    pub prev_pair: Option<PairedInput>,
    pub graph: KnowledgeGraph,
    pub gold_index: Option<usize>,
}

impl PreparedSample {
    pub fn num_candidates(&self) -> usize {
        self.pairs.len()
    }
}

/// Every intermediate of one sample's forward pass.
#[derive(Debug, Clone)]
pub struct SampleForward {
    pub dist: SelectionDistribution,
    /// `[M, d]`
    pub k_cls: Tensor,
    /// `[M, d]`
    pub k_know: Tensor,
    /// `[d]`, the previous knowledge's `[CLS]` vector under the current context.
    pub k_last: Option<Tensor>,
    pub v_coh: Option<Tensor>,
    pub v_cro: Tensor,
    pub e: Tensor,
    pub c: Tensor,
    pub context_attn: Tensor,
    pub g: Tensor,
    /// Decoder state after the LSTM step; absent for the attention scorer.
    pub g_prime: Option<Tensor>,
}

/// Which knowledge feeds the development feature of turn `t > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrevRule {
    /// The previous turn's gold knowledge.
    Gold,
    /// The knowledge the model selected at the previous turn.
    Predicted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub index: usize,
    pub probs: Vec<f64>,
}

/// Per-candidate scores and feature norms for one live turn.
#[derive(Debug, Clone, PartialEq)]
pub struct TurnScores {
    pub probs: Vec<f64>,
    pub v_coh_norms: Vec<f64>,
    pub v_cro_norms: Vec<f64>,
}

pub struct Cet2Model {
    config: ModelConfig,
    vocab: Vocab,
    store: ParamStore,
    encoder: Box<dyn EncoderBackend>,
    aggregator: ContextAggregator,
    transition: TransitionParams,
    graph: GraphEncoder,
    scorer: Scorer,
}

const EVAL_CHUNK: usize = 8;

impl Cet2Model {
    pub fn new(config: ModelConfig, vocab: Vocab, dtype: DType, seed: u64) -> Result<Self> {
        if config.encoder.vocab_size != vocab.len() {
            return Err(Error::Config(format!(
                "encoder vocab size {} does not match vocabulary of {} tokens",
                config.encoder.vocab_size,
                vocab.len()
            )));
        }
        if config.window_l == 0 {
            return Err(Error::Config("window_l must be at least 1".into()));
        }
        let d = config.hidden();
        let mut store = ParamStore::new(dtype, seed);
        let encoder = ToyTransformer::new(config.encoder.clone(), &mut store)?;
        let aggregator = ContextAggregator::new(d, &mut store)?;
        let transition = TransitionParams::new(
            d,
            config.d_coh,
            config.d_cro,
            config.activation,
            config.ablations.coher_opt,
            &mut store,
        )?;
        let graph = GraphEncoder::new(d, &config.selector, &mut store)?;
        let scorer = if config.ablations.pointer_net {
            Scorer::Pointer(PointerScorer::new(d, config.d_e(), &mut store)?)
        } else {
            Scorer::Attention(AttentionScorer::new(d, config.d_e(), &mut store)?)
        };
        Ok(Self {
            config,
            vocab,
            store,
            encoder: Box::new(encoder),
            aggregator,
            transition,
            graph,
            scorer,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    /// Tokenizes a sample; `prev` is the previous knowledge text, if any.
    pub fn prepare_parts(
        &self,
        context: &[Utterance],
        candidates: &[KnowledgeCandidate],
        prev: Option<&str>,
        gold_index: Option<usize>,
    ) -> Result<PreparedSample> {
        if candidates.is_empty() {
            return Err(Error::Sample("empty candidate pool".into()));
        }
        let ctx = render_context(context);
        let max_len = self.config.encoder.max_len;
        let pairs = candidates
            .iter()
            .map(|c| make_pair(&self.vocab, &ctx, &c.text, max_len))
            .collect::<Result<Vec<_>>>()?;
        let prev_pair = prev
            .map(|p| make_pair(&self.vocab, &ctx, p, max_len))
            .transpose()?;
        let graph = build_knowledge_graph(candidates, self.config.selector.edge_threshold)?;
        Ok(PreparedSample {
            pairs,
            prev_pair,
            graph,
            gold_index,
        })
    }

    /// Tokenizes a corpus sample with the previous gold knowledge as history.
    pub fn prepare(&self, sample: &SelectionSample) -> Result<PreparedSample> {
        let prev = sample.prev_gold.as_ref().map(|k| k.text.as_str());
        self.prepare_parts(&sample.context, &sample.candidates, prev, sample.gold_index)
    }

    /// Forward pass over several samples; all pairs share one encoder batch.
    pub fn forward(
        &self,
        samples: &[&PreparedSample],
        mode: &mut Mode,
    ) -> Result<Vec<SampleForward>> {
        let mut pairs = Vec::new();
        let mut spans = Vec::with_capacity(samples.len());
        for s in samples {
            let start = pairs.len();
            pairs.extend(s.pairs.iter().cloned());
            let prev_row = s.prev_pair.as_ref().map(|p| {
                pairs.push(p.clone());
                pairs.len() - 1
            });
            spans.push((start, s.pairs.len(), prev_row));
        }
        let batch = TokenBatch::new(&pairs, self.dtype(), self.store.device())?;
        let hidden = self.encoder.hidden_states(&batch, mode)?;
        let encoded = pool_pairs(&hidden, &batch)?;
        let mut out = Vec::with_capacity(samples.len());
        for (s, (start, m, prev_row)) in samples.iter().zip(spans) {
            let rows = encoded.rows(start, m)?;
            let k_last = prev_row
                .map(|r| encoded.k_cls.narrow(0, r, 1)?.squeeze(0))
                .transpose()?;
            out.push(self.head(
                &rows.k_cls,
                &rows.c_ctx,
                &rows.k_know,
                k_last,
                &s.graph,
                mode,
            )?);
        }
        Ok(out)
    }

    /// Everything after the encoder, for one sample.
    pub fn head(
        &self,
        k_cls: &Tensor,
        c_ctx: &Tensor,
        k_know: &Tensor,
        k_last: Option<Tensor>,
        graph: &KnowledgeGraph,
        mode: &mut Mode,
    ) -> Result<SampleForward> {
        let ctx = self.aggregator.forward(c_ctx)?;
        let v_coh = match &self.transition.w_coh {
            Some(w) => Some(coherence_feature(k_cls, w)?),
            None => None,
        };
        let feed = if self.config.ablations.cross_opt {
            k_last.as_ref()
        } else {
            None
        };
        let v_cro = development_feature(
            feed,
            k_cls,
            &self.transition.w_cro,
            self.transition.activation,
        )?;
        let repr = transition_repr(v_coh.as_ref(), &v_cro, k_cls, k_know)?;
        let nodes = self.graph.gat_encode(k_know, graph, mode)?;
        let g = pool_graph(&nodes)?;
        let (dist, g_prime) = match &self.scorer {
            Scorer::Pointer(p) => {
                let (dist, gp) = p.score(&ctx.c, &g, &repr.e)?;
                (dist, Some(gp))
            }
            Scorer::Attention(a) => (a.score(&ctx.c, &repr.e)?, None),
        };
        Ok(SampleForward {
            dist,
            k_cls: k_cls.clone(),
            k_know: k_know.clone(),
            k_last,
            v_coh,
            v_cro,
            e: repr.e,
            c: ctx.c,
            context_attn: ctx.attn_weights,
            g,
            g_prime,
        })
    }

    /// Evaluation-path predictions for every sample, in input order.
    ///
    /// Under [`PrevRule::Predicted`] the samples of an episode are resolved
    /// turn by turn, each turn seeing the candidate selected at the one before.
    pub fn predict(&self, samples: &[SelectionSample], rule: PrevRule) -> Result<Vec<Prediction>> {
        let mut preds: Vec<Option<Prediction>> = vec![None; samples.len()];
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.sort_by_key(|&i| samples[i].turn_index);
        let mut by_key = std::collections::HashMap::new();
        for (i, s) in samples.iter().enumerate() {
            by_key.insert((s.episode_id.as_str(), s.turn_index), i);
        }
        let mut wave_start = 0;
        while wave_start < order.len() {
            let turn = samples[order[wave_start]].turn_index;
            let wave_end = order[wave_start..]
                .iter()
                .position(|&i| samples[i].turn_index != turn)
                .map_or(order.len(), |p| wave_start + p);
            let wave = &order[wave_start..wave_end];
            let prepared = wave
                .iter()
                .map(|&i| {
                    let s = &samples[i];
                    match rule {
                        PrevRule::Gold => self.prepare(s),
                        PrevRule::Predicted => {
                            let prev = turn
                                .checked_sub(1)
                                .and_then(|p| by_key.get(&(s.episode_id.as_str(), p)))
                                .map(|&j| {
                                    let p = preds[j].as_ref().expect("earlier turn resolved");
                                    samples[j].candidates[p.index].text.as_str()
                                });
                            self.prepare_parts(&s.context, &s.candidates, prev, s.gold_index)
                        }
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            for (chunk_idx, chunk) in prepared.chunks(EVAL_CHUNK).enumerate() {
                let refs: Vec<&PreparedSample> = chunk.iter().collect();
                let fwd = self.forward(&refs, &mut Mode::eval())?;
                for (k, f) in fwd.into_iter().enumerate() {
                    let i = wave[chunk_idx * EVAL_CHUNK + k];
                    let probs = f.dist.probs_vec()?;
                    preds[i] = Some(Prediction {
                        index: crate::nn::argmax(&probs),
                        probs,
                    });
                }
            }
            wave_start = wave_end;
        }
        Ok(preds
            .into_iter()
            .map(|p| p.expect("every sample predicted"))
            .collect())
    }

    /// Scores one live turn; `prev` is the knowledge selected (or chosen by a
    /// human) at the previous turn.
    pub fn score_turn(
        &self,
        context: &[Utterance],
        candidates: &[KnowledgeCandidate],
        prev: Option<&str>,
    ) -> Result<TurnScores> {
        let prepared = self.prepare_parts(context, candidates, prev, None)?;
        let f = self.forward(&[&prepared], &mut Mode::eval())?.remove(0);
        let norms = |t: &Tensor| -> Result<Vec<f64>> {
            let v = t.to_dtype(DType::F64)?.sqr()?.sum(1)?.sqrt()?;
            Ok(v.to_vec1::<f64>()?)
        };
        let m = candidates.len();
        Ok(TurnScores {
            probs: f.dist.probs_vec()?,
            v_coh_norms: match &f.v_coh {
                Some(v) => norms(v)?,
                None => vec![0.0; m],
            },
            v_cro_norms: norms(&f.v_cro)?,
        })
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::corpus::build_all_samples;
    use crate::corpus::{synth_corpus, SynthConfig};
    use crate::nn::to_vec_f64;

    pub(crate) fn small_model(ablations: Ablations) -> (Cet2Model, Vec<SelectionSample>) {
        let eps = synth_corpus(&SynthConfig {
            n_episodes: 3,
            turns_per_episode: 3,
            m_candidates: 4,
            vocab_size: 30,
            p_adhere: 0.5,
            seed: 3,
        })
        .unwrap();
        let samples = build_all_samples(&eps, 1).unwrap();
        let texts: Vec<String> = samples
            .iter()
            .flat_map(|s| {
                s.candidates
                    .iter()
                    .map(|c| c.text.clone())
                    .chain(s.context.iter().map(|u| u.text.clone()))
            })
            .collect();
        let vocab = Vocab::build(texts.iter().map(String::as_str), 1);
        let mut cfg = ModelConfig::toy(vocab.len());
        cfg.encoder.hidden = 16;
        cfg.encoder.ffn_hidden = 32;
        cfg.d_coh = 8;
        cfg.d_cro = 8;
        cfg.selector.gat_ffn_hidden = 32;
        cfg.ablations = ablations;
        (Cet2Model::new(cfg, vocab, DType::F64, 11).unwrap(), samples)
    }

    #[test]
    fn first_turn_has_zero_development_feature() {
        let (model, samples) = small_model(Ablations::default());
        let p = model.prepare(&samples[0]).unwrap();
        assert!(p.prev_pair.is_none());
        let f = model.forward(&[&p], &mut Mode::eval()).unwrap().remove(0);
        assert!(to_vec_f64(&f.v_cro).unwrap().iter().all(|&x| x == 0.0));
        let probs = f.dist.probs_vec().unwrap();
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn batched_forward_matches_single() {
        let (model, samples) = small_model(Ablations::default());
        let prepared: Vec<_> = samples
            .iter()
            .take(4)
            .map(|s| model.prepare(s).unwrap())
            .collect();
        let refs: Vec<_> = prepared.iter().collect();
        let batched = model.forward(&refs, &mut Mode::eval()).unwrap();
        for (p, b) in prepared.iter().zip(&batched) {
            let single = model.forward(&[p], &mut Mode::eval()).unwrap().remove(0);
            let (a, b) = (
                single.dist.probs_vec().unwrap(),
                b.dist.probs_vec().unwrap(),
            );
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn ablations_shape_the_model() {
        let (full, _) = small_model(Ablations::default());
        let (no_coh, _) = small_model(Ablations::variant("no_coher_opt").unwrap());
        let (no_ptr, _) = small_model(Ablations::variant("no_pointer_net").unwrap());
        assert!(full.store().get("transition.W_coh").is_some());
        assert!(no_coh.store().get("transition.W_coh").is_none());
        assert_eq!(
            no_coh.store().get("selector.pointer.W_e").unwrap().dims(),
            &[16, 8 + 32]
        );
        assert!(no_ptr.store().get("selector.attention.W_a").is_some());
        assert!(no_ptr.store().get("selector.lstm.W_ih").is_none());
        assert!(Ablations::variant("bogus").is_err());
    }

    #[test]
    fn predicted_rule_feeds_previous_selection() {
        let (model, samples) = small_model(Ablations::default());
        let gold = model.predict(&samples, PrevRule::Gold).unwrap();
        let pred = model.predict(&samples, PrevRule::Predicted).unwrap();
        assert_eq!(gold.len(), samples.len());
        for ((s, g), p) in samples.iter().zip(&gold).zip(&pred) {
            if s.turn_index == 0 {
                assert_eq!(g, p);
            }
        }
        let again = model.predict(&samples, PrevRule::Predicted).unwrap();
        assert_eq!(pred, again);
    }
}
