//! Knowledge-grounded response generation: input layout, a small causal
//! transformer, the gold-knowledge ratio schedule and decoding.

use candle_core::{DType, Device, Tensor, D};
use candle_nn::optim::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{build_all_samples, render_context, DialogueEpisode, Split, Utterance};
use crate::error::{Error, Result};
use crate::model::{Cet2Model, PrevRule};
use crate::nn::{self, rng_for, Init, ParamStore};
use crate::text::{self, Vocab};

/// Probability of feeding gold knowledge at training step `s`: `exp(-s β)`.
pub fn knowledge_ratio(step: u64, beta_decay: f64) -> f64 {
    (-(step as f64) * beta_decay).exp()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenSample {
    /// `knowledge [sep] context [sep] response [eos]`
    pub token_ids: Vec<u32>,
    /// True exactly on the response tokens (including the closing `[eos]`).
    pub loss_mask: Vec<bool>,
}

impl GenSample {
    pub fn response_start(&self) -> usize {
        self.loss_mask
            .iter()
            .position(|&m| m)
            .unwrap_or(self.token_ids.len())
    }
}

/// Prompt part of the layout: `knowledge [sep] context [sep]`, context head
/// dropped first, then the knowledge tail, to leave `reserve` free positions.
fn prompt_ids(
    vocab: &Vocab,
    context: &str,
    knowledge: &str,
    max_len: usize,
    reserve: usize,
) -> Result<Vec<u32>> {
    let mut know = vocab.encode(knowledge);
    let mut ctx = vocab.encode(context);
    let budget = max_len.checked_sub(reserve + 2).ok_or_else(|| {
        Error::Sample(format!(
            "response of {reserve} tokens does not fit in {max_len}"
        ))
    })?;
    if know.len() + ctx.len() > budget {
        let overflow = know.len() + ctx.len() - budget;
        let drop_ctx = overflow.min(ctx.len());
        ctx.drain(..drop_ctx);
        know.truncate(know.len() - (overflow - drop_ctx));
    }
    let mut ids = know;
    ids.push(text::SEP_ID);
    ids.extend(ctx);
    ids.push(text::SEP_ID);
    Ok(ids)
}

/// Training input. Response tokens are never truncated.
pub fn build_gen_input(
    vocab: &Vocab,
    context: &str,
    knowledge: &str,
    response: &str,
    max_len: usize,
) -> Result<GenSample> {
    let mut resp = vocab.encode(response);
    if resp.is_empty() {
        return Err(Error::Sample("empty response".into()));
    }
    resp.push(text::EOS_ID);
    if resp.len() + 2 > max_len {
        return Err(Error::Sample(format!(
            "response of {} tokens exceeds generator max_len {max_len}",
            resp.len()
        )));
    }
    let mut token_ids = prompt_ids(vocab, context, knowledge, max_len, resp.len())?;
    let mut loss_mask = vec![false; token_ids.len()];
    loss_mask.extend(std::iter::repeat_n(true, resp.len()));
    token_ids.extend(resp);
    Ok(GenSample {
        token_ids,
        loss_mask,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub vocab_size: usize,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
    pub max_len: usize,
}

impl GeneratorConfig {
    pub fn toy(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            hidden: 128,
            layers: 2,
            heads: 4,
            ffn_hidden: 256,
            max_len: 128,
        }
    }
}

struct DecoderLayer {
    ln1_g: Tensor,
    ln1_b: Tensor,
    wqkv: Tensor,
    bqkv: Tensor,
    wo: Tensor,
    bo: Tensor,
    ln2_g: Tensor,
    ln2_b: Tensor,
    w1: Tensor,
    b1: Tensor,
    w2: Tensor,
    b2: Tensor,
}

/// Pre-norm decoder-only transformer; the output projection is tied to the
/// token embedding.
pub struct ToyCausalLm {
    config: GeneratorConfig,
    vocab: Vocab,
    store: ParamStore,
    tok_emb: Tensor,
    pos_emb: Tensor,
    layers: Vec<DecoderLayer>,
    lnf_g: Tensor,
    lnf_b: Tensor,
}

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Greedy,
    TopK(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodingConfig {
    pub max_new_tokens: usize,
    pub strategy: Strategy,
    pub seed: u64,
}

impl Default for DecodingConfig {
    fn default() -> Self {
        Self {
            max_new_tokens: 32,
            strategy: Strategy::Greedy,
            seed: 0,
        }
    }
}

impl ToyCausalLm {
    pub fn new(config: GeneratorConfig, vocab: Vocab, dtype: DType, seed: u64) -> Result<Self> {
        if config.vocab_size != vocab.len() {
            return Err(Error::Config(format!(
                "generator vocab size {} does not match vocabulary of {} tokens",
                config.vocab_size,
                vocab.len()
            )));
        }
        let d = config.hidden;
        if config.heads == 0 || !d.is_multiple_of(config.heads) {
            return Err(Error::Config(format!(
                "generator hidden size {d} not divisible by {} heads",
                config.heads
            )));
        }
        let f = config.ffn_hidden;
        let mut store = ParamStore::new(dtype, seed);
        let tok_emb = store.add(
            "generator.tok_emb",
            &[config.vocab_size, d],
            Init::Uniform(0.1),
        )?;
        let pos_emb = store.add(
            "generator.pos_emb",
            &[config.max_len, d],
            Init::Uniform(0.1),
        )?;
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let p = |n: &str| format!("generator.layer{l}.{n}");
            layers.push(DecoderLayer {
                ln1_g: store.add(&p("ln1.gamma"), &[d], Init::Ones)?,
                ln1_b: store.add(&p("ln1.beta"), &[d], Init::Zeros)?,
                wqkv: store.add(&p("attn.wqkv"), &[3 * d, d], Init::Glorot)?,
                bqkv: store.add(&p("attn.bqkv"), &[3 * d], Init::Zeros)?,
                wo: store.add(&p("attn.wo"), &[d, d], Init::Glorot)?,
                bo: store.add(&p("attn.bo"), &[d], Init::Zeros)?,
                ln2_g: store.add(&p("ln2.gamma"), &[d], Init::Ones)?,
                ln2_b: store.add(&p("ln2.beta"), &[d], Init::Zeros)?,
                w1: store.add(&p("ffn.w1"), &[f, d], Init::Glorot)?,
                b1: store.add(&p("ffn.b1"), &[f], Init::Zeros)?,
                w2: store.add(&p("ffn.w2"), &[d, f], Init::Glorot)?,
                b2: store.add(&p("ffn.b2"), &[d], Init::Zeros)?,
            });
        }
        let lnf_g = store.add("generator.lnf.gamma", &[d], Init::Ones)?;
        let lnf_b = store.add("generator.lnf.beta", &[d], Init::Zeros)?;
        Ok(Self {
            config,
            vocab,
            store,
            tok_emb,
            pos_emb,
            layers,
            lnf_g,
            lnf_b,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    /// Logits `[N, L, V]` for right-padded sequences of the given lengths.
    pub fn logits(&self, seqs: &[&[u32]]) -> Result<Tensor> {
        let n = seqs.len();
        let len = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
        if n == 0 || len == 0 {
            return Err(Error::Shape("empty generator batch".into()));
        }
        if len > self.config.max_len {
            return Err(Error::Shape(format!(
                "sequence length {len} exceeds generator max_len {}",
                self.config.max_len
            )));
        }
        let dtype = self.store.dtype();
        let dev = Device::Cpu;
        let mut ids = vec![text::PAD_ID; n * len];
        let mut keep = vec![false; n * len * len];
        for (i, s) in seqs.iter().enumerate() {
            ids[i * len..i * len + s.len()].copy_from_slice(s);
            for q in 0..len {
                for k in 0..=q.min(s.len().saturating_sub(1)) {
                    keep[(i * len + q) * len + k] = true;
                }
            }
        }
        let mask = nn::additive_mask(&keep, &[n, 1, len, len], dtype, &dev)?;
        let d = self.config.hidden;
        let ids = Tensor::from_vec(ids, (n, len), &dev)?;
        let tok = self
            .tok_emb
            .index_select(&ids.flatten_all()?, 0)?
            .reshape((n, len, d))?;
        let mut x = tok.broadcast_add(&self.pos_emb.narrow(0, 0, len)?)?;
        let h = self.config.heads;
        let dh = d / h;
        for layer in &self.layers {
            let y = nn::layer_norm(&x, &layer.ln1_g, &layer.ln1_b, LN_EPS)?;
            let qkv = nn::linear(&y, &layer.wqkv, Some(&layer.bqkv))?;
            let split = |i: usize| -> Result<Tensor> {
                Ok(qkv
                    .narrow(D::Minus1, i * d, d)?
                    .reshape((n, len, h, dh))?
                    .transpose(1, 2)?
                    .contiguous()?)
            };
            let (q, k, v) = (split(0)?, split(1)?, split(2)?);
            let scores = (q.matmul(&k.t()?.contiguous()?)? / (dh as f64).sqrt())?;
            let attn = nn::softmax_last(&scores.broadcast_add(&mask)?)?;
            let ctx = attn.matmul(&v)?.transpose(1, 2)?.reshape((n, len, d))?;
            x = (x + nn::linear(&ctx, &layer.wo, Some(&layer.bo))?)?;
            let y = nn::layer_norm(&x, &layer.ln2_g, &layer.ln2_b, LN_EPS)?;
            let f = nn::linear(
                &nn::linear(&y, &layer.w1, Some(&layer.b1))?.relu()?,
                &layer.w2,
                Some(&layer.b2),
            )?;
            x = (x + f)?;
        }
        let x = nn::layer_norm(&x, &self.lnf_g, &self.lnf_b, LN_EPS)?;
        nn::linear(&x, &self.tok_emb, None)
    }

    /// Mean token-level cross-entropy over the response positions of a batch.
    pub fn nll(&self, batch: &[&GenSample]) -> Result<Tensor> {
        let seqs: Vec<&[u32]> = batch.iter().map(|s| s.token_ids.as_slice()).collect();
        let logits = self.logits(&seqs)?;
        let (n, len, v) = logits.dims3()?;
        let lp = nn::log_softmax_last(&logits)?.reshape((n * len, v))?;
        let mut rows = Vec::new();
        let mut targets = Vec::new();
        for (i, s) in batch.iter().enumerate() {
            for (p, (&t, &m)) in s.token_ids.iter().zip(&s.loss_mask).enumerate() {
                if m && p > 0 {
                    rows.push((i * len + p - 1) as u32);
                    targets.push(t);
                }
            }
        }
        if rows.is_empty() {
            return Err(Error::Sample("batch has no response tokens".into()));
        }
        let count = rows.len();
        let picked = lp.index_select(&Tensor::from_vec(rows, count, &Device::Cpu)?, 0)?;
        let picked = picked.gather(&Tensor::from_vec(targets, (count, 1), &Device::Cpu)?, 1)?;
        Ok((picked.sum_all()?.neg()? / count as f64)?)
    }

    /// Decodes a response for `context` grounded on `knowledge`.
    pub fn generate(
        &self,
        context: &[Utterance],
        knowledge: &str,
        decoding: &DecodingConfig,
    ) -> Result<String> {
        let ids = self.generate_ids(&render_context(context), knowledge, decoding)?;
        Ok(self.vocab.decode(&ids))
    }

    /// Generated token ids, without the closing `[eos]`.
    pub fn generate_ids(
        &self,
        context: &str,
        knowledge: &str,
        decoding: &DecodingConfig,
    ) -> Result<Vec<u32>> {
        if decoding.max_new_tokens == 0 {
            return Err(Error::Config("max_new_tokens must be at least 1".into()));
        }
        let room = decoding
            .max_new_tokens
            .min(self.config.max_len.saturating_sub(3))
            .max(1);
        let mut seq = prompt_ids(&self.vocab, context, knowledge, self.config.max_len, room)?;
        let prompt_len = seq.len();
        let mut rng = rng_for(decoding.seed, "decode", &[]);
        for _ in 0..room {
            let logits = self.logits(&[&seq])?;
            let last = logits.get(0)?.get(seq.len() - 1)?;
            let scores = nn::to_vec_f64(&last)?;
            let next = match decoding.strategy {
                Strategy::Greedy => nn::argmax(&scores) as u32,
                Strategy::TopK(k) => sample_top_k(&scores, k.max(1), &mut rng) as u32,
            };
            if next == text::EOS_ID {
                break;
            }
            seq.push(next);
        }
        Ok(seq[prompt_len..].to_vec())
    }
}

fn sample_top_k(scores: &[f64], k: usize, rng: &mut impl Rng) -> usize {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    let top = scores[idx[0]];
    let weights: Vec<f64> = idx.iter().map(|&i| (scores[i] - top).exp()).collect();
    let mut u = rng.random_range(0.0..weights.iter().sum::<f64>());
    for (w, &i) in weights.iter().zip(&idx) {
        if u < *w {
            return i;
        }
        u -= w;
    }
    idx[idx.len() - 1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenTrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta_decay: f64,
    pub seed: u64,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
    pub max_len: usize,
}

impl Default for GenTrainConfig {
    fn default() -> Self {
        let toy = GeneratorConfig::toy(0);
        Self {
            lr: 5e-5,
            batch_size: 32,
            epochs: 10,
            beta_decay: 1e-5,
            seed: 0,
            hidden: toy.hidden,
            layers: toy.layers,
            heads: toy.heads,
            ffn_hidden: toy.ffn_hidden,
            max_len: toy.max_len,
        }
    }
}

impl GenTrainConfig {
    /// Larger steps for the randomly initialized toy decoder.
    pub fn toy() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 16,
            ..Self::default()
        }
    }

    pub fn model_config(&self, vocab_size: usize) -> GeneratorConfig {
        GeneratorConfig {
            vocab_size,
            hidden: self.hidden,
            layers: self.layers,
            heads: self.heads,
            ffn_hidden: self.ffn_hidden,
            max_len: self.max_len,
        }
    }
}

/// One training example before the knowledge source is decided.
#[derive(Debug, Clone)]
pub struct GenExample {
    pub context: String,
    pub gold_knowledge: String,
    pub predicted_knowledge: String,
    pub response: String,
}

pub struct GenOutcome {
    pub model: ToyCausalLm,
    /// Mean loss per optimizer step.
    pub losses: Vec<f64>,
    /// Steps that used the gold knowledge, per step.
    pub gold_fraction: Vec<f64>,
}

/// Training examples from the train split; predicted knowledge comes from the
/// selector's evaluation path when one is given, gold otherwise.
pub fn gen_examples(
    episodes: &[DialogueEpisode],
    selector: Option<&Cet2Model>,
    window_l: usize,
) -> Result<Vec<GenExample>> {
    let train: Vec<DialogueEpisode> = episodes
        .iter()
        .filter(|e| e.split == Split::Train)
        .cloned()
        .collect();
    let samples = build_all_samples(&train, window_l)?;
    let predicted = match selector {
        Some(m) => Some(m.predict(&samples, PrevRule::Predicted)?),
        None => None,
    };
    Ok(samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let gold = s.gold().map(|k| k.text.clone()).unwrap_or_default();
            let predicted_knowledge = predicted
                .as_ref()
                .map_or_else(|| gold.clone(), |p| s.candidates[p[i].index].text.clone());
            GenExample {
                context: render_context(&s.context),
                gold_knowledge: gold,
                predicted_knowledge,
                response: s.gold_response.clone(),
            }
        })
        .collect())
}

/// Trains a fresh generator. At step `s` each example is fed its gold
/// knowledge with probability `exp(-s β)`, the predicted knowledge otherwise.
pub fn train_generator(
    examples: &[GenExample],
    vocab: Vocab,
    config: &GenTrainConfig,
) -> Result<GenOutcome> {
    if examples.is_empty() {
        return Err(Error::Config("no generator training examples".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let model = ToyCausalLm::new(
        config.model_config(vocab.len()),
        vocab,
        DType::F32,
        nn::derive_seed(config.seed, "init", &[]),
    )?;
    let vars: Vec<_> = model.store().iter().map(|(_, v)| v.clone()).collect();
    let mut opt = AdamW::new(
        vars,
        ParamsAdamW {
            lr: config.lr,
            weight_decay: 0.0,
            ..ParamsAdamW::default()
        },
    )?;
    let mut losses = Vec::new();
    let mut gold_fraction = Vec::new();
    let mut step: u64 = 0;
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut rng_for(config.seed, "shuffle", &[epoch as u64]));
        for chunk in order.chunks(config.batch_size) {
            let r = knowledge_ratio(step, config.beta_decay);
            let mut rng = rng_for(config.seed, "knowledge", &[step]);
            let mut gold_used = 0;
            let batch = chunk
                .iter()
                .map(|&i| {
                    let ex = &examples[i];
                    let use_gold = rng.random::<f64>() < r;
                    gold_used += usize::from(use_gold);
                    let knowledge = if use_gold {
                        &ex.gold_knowledge
                    } else {
                        &ex.predicted_knowledge
                    };
                    build_gen_input(
                        model.vocab(),
                        &ex.context,
                        knowledge,
                        &ex.response,
                        config.max_len,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<&GenSample> = batch.iter().collect();
            let loss = model.nll(&refs)?;
            opt.backward_step(&loss)?;
            losses.push(nn::scalar_f64(&loss)?);
            gold_fraction.push(gold_used as f64 / chunk.len() as f64);
            step += 1;
        }
        tracing::info!(
            epoch = epoch + 1,
            loss = losses.last().copied().unwrap_or_default(),
            "generator epoch finished"
        );
    }
    Ok(GenOutcome {
        model,
        losses,
        gold_fraction,
    })
}

pub fn save_generator(dir: &std::path::Path, model: &ToyCausalLm) -> Result<()> {
    use crate::checkpoint::{write_tensors, GENERATOR_FILE, VOCAB_FILE};
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let vocab_path = dir.join(VOCAB_FILE);
    if !vocab_path.exists() {
        model.vocab().save(&vocab_path)?;
    }
    write_tensors(
        &dir.join(GENERATOR_FILE),
        "cet2-generator",
        model.store().dtype(),
        model.config(),
        &model.store().snapshot()?,
    )
}

pub fn load_generator(dir: &std::path::Path) -> Result<ToyCausalLm> {
    use crate::checkpoint::{read_tensors, GENERATOR_FILE, VOCAB_FILE};
    let vocab = Vocab::load(&dir.join(VOCAB_FILE))?;
    let (manifest, tensors) =
        read_tensors::<GeneratorConfig>(&dir.join(GENERATOR_FILE), "cet2-generator")?;
    let dtype = if manifest.dtype == "f64" {
        DType::F64
    } else {
        DType::F32
    };
    let model = ToyCausalLm::new(manifest.config, vocab, dtype, 0)?;
    model.store().restore(&tensors)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocab {
        Vocab::build(
            ["alpha beta gamma delta eps zeta eta theta iota kappa lambda mu"],
            1,
        )
    }

    #[test]
    fn ratio_examples() {
        assert_eq!(knowledge_ratio(0, 1e-5), 1.0);
        assert!((knowledge_ratio(69315, 1e-5) - 0.5).abs() < 1e-5);
        assert!(knowledge_ratio(1, 1e6) < 1e-300);
        let mut prev = 1.0;
        for s in (0..1_000_000).step_by(9973) {
            let r = knowledge_ratio(s, 1e-5);
            assert!(r <= prev && r > 0.0 && r <= 1.0);
            prev = r;
        }
    }

    #[test]
    fn layout_and_mask() {
        let v = vocab();
        let s = build_gen_input(&v, "", "alpha beta", "gamma", 32).unwrap();
        let sep = text::SEP_ID;
        let expected = vec![
            v.id("alpha"),
            v.id("beta"),
            sep,
            sep,
            v.id("gamma"),
            text::EOS_ID,
        ];
        assert_eq!(s.token_ids, expected);
        assert_eq!(s.loss_mask, vec![false, false, false, false, true, true]);
        assert_eq!(
            s,
            build_gen_input(&v, "", "alpha beta", "gamma", 32).unwrap()
        );
        assert!(build_gen_input(&v, "a", "b", "", 32).is_err());
        assert!(build_gen_input(&v, "a", "b", "alpha beta gamma", 5).is_err());
    }

    #[test]
    fn overflow_drops_context_head() {
        let v = vocab();
        let ctx = "alpha beta gamma delta eps zeta eta theta iota kappa lambda mu";
        let full = build_gen_input(&v, ctx, "alpha", "beta gamma", 64).unwrap();
        let cut =
            build_gen_input(&v, ctx, "alpha", "beta gamma", full.token_ids.len() - 10).unwrap();
        assert_eq!(cut.token_ids.len(), full.token_ids.len() - 10);
        // knowledge, sep, then the context with its first ten tokens gone
        assert_eq!(cut.token_ids[2], v.id("lambda"));
        assert_eq!(
            cut.token_ids[cut.response_start()..],
            full.token_ids[full.response_start()..]
        );
    }

    #[test]
    fn greedy_is_deterministic_and_bounded() {
        let v = vocab();
        let mut cfg = GeneratorConfig::toy(v.len());
        cfg.hidden = 16;
        cfg.ffn_hidden = 16;
        cfg.max_len = 24;
        let lm = ToyCausalLm::new(cfg, v, DType::F32, 3).unwrap();
        let ctx = [Utterance::user("alpha beta")];
        let one = DecodingConfig {
            max_new_tokens: 1,
            ..DecodingConfig::default()
        };
        let ids = lm
            .generate_ids(&render_context(&ctx), "gamma", &one)
            .unwrap();
        assert!(ids.len() <= 1);
        let d = DecodingConfig::default();
        assert_eq!(
            lm.generate(&ctx, "gamma", &d).unwrap(),
            lm.generate(&ctx, "gamma", &d).unwrap()
        );
        let k = DecodingConfig {
            strategy: Strategy::TopK(3),
            seed: 5,
            ..d
        };
        assert_eq!(
            lm.generate(&ctx, "gamma", &k).unwrap(),
            lm.generate(&ctx, "gamma", &k).unwrap()
        );
    }

    #[test]
    fn padding_does_not_change_logits() {
        let v = vocab();
        let mut cfg = GeneratorConfig::toy(v.len());
        cfg.hidden = 16;
        cfg.ffn_hidden = 16;
        let lm = ToyCausalLm::new(cfg, v, DType::F64, 3).unwrap();
        let a = [7u32, 8, 9];
        let b = [7u32, 8, 9, 10, 11];
        let alone = nn::to_vec_f64(&lm.logits(&[&a]).unwrap()).unwrap();
        let batched = lm.logits(&[&a, &b]).unwrap();
        let first = nn::to_vec_f64(&batched.get(0).unwrap().narrow(0, 0, 3).unwrap()).unwrap();
        for (x, y) in alone.iter().zip(first) {
            assert!((x - y).abs() < 1e-10);
        }
    }
}
