//! Sentence encoder: `[CLS] C [SEP] d_j` pair construction, a pluggable
//! bidirectional backend, span pooling and context aggregation.

use std::ops::Range;

use candle_core::{DType, Device, Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, Init, Mode, ParamStore};
use crate::text::{self, Vocab};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairedInput {
    pub token_ids: Vec<u32>,
    pub context_span: Range<usize>,
    pub knowledge_span: Range<usize>,
}

/// Builds `[CLS] context [SEP] candidate`, truncated to `max_len`.
///
/// Overflow is removed from the head of the context first (down to its last
/// token), then from the tail of the candidate. Both spans keep at least one
/// token.
pub fn make_pair(
    vocab: &Vocab,
    context: &str,
    candidate: &str,
    max_len: usize,
) -> Result<PairedInput> {
    let mut ctx = vocab.encode(context);
    let mut know = vocab.encode(candidate);
    if ctx.is_empty() {
        return Err(Error::Sample("context has no tokens".into()));
    }
    if know.is_empty() {
        return Err(Error::Sample("candidate has no tokens".into()));
    }
    if max_len < 4 {
        return Err(Error::Sample(format!(
            "max_len {max_len} leaves no room for the candidate"
        )));
    }
    let budget = max_len - 2;
    if ctx.len() + know.len() > budget {
        let overflow = ctx.len() + know.len() - budget;
        let drop_ctx = overflow.min(ctx.len() - 1);
        ctx.drain(..drop_ctx);
        let rest = overflow - drop_ctx;
        know.truncate(know.len() - rest.min(know.len()));
        if know.is_empty() {
            return Err(Error::Sample("candidate fully truncated".into()));
        }
    }
    let mut token_ids = Vec::with_capacity(ctx.len() + know.len() + 2);
    token_ids.push(text::CLS_ID);
    token_ids.extend_from_slice(&ctx);
    token_ids.push(text::SEP_ID);
    let context_span = 1..1 + ctx.len();
    let knowledge_span = token_ids.len()..token_ids.len() + know.len();
    token_ids.extend_from_slice(&know);
    Ok(PairedInput {
        token_ids,
        context_span,
        knowledge_span,
    })
}

/// Padded batch of paired inputs ready for a backend.
pub struct TokenBatch {
    /// `[N, L]` token ids, padded with `[pad]`.
    pub ids: Tensor,
    /// `[N, L]` segment ids: 0 up to and including `[SEP]`, 1 for the candidate.
    pub segments: Tensor,
    /// `[N, 1, 1, L]` additive key mask hiding padding.
    pub key_mask: Tensor,
    /// `[N, 1, L]` averaging weights over the context span.
    pub ctx_pool: Tensor,
    /// `[N, 1, L]` averaging weights over the knowledge span.
    pub know_pool: Tensor,
}

impl TokenBatch {
    pub fn new(pairs: &[PairedInput], dtype: DType, device: &Device) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Shape("empty pair batch".into()));
        }
        let n = pairs.len();
        let len = pairs.iter().map(|p| p.token_ids.len()).max().unwrap_or(0);
        let mut ids = vec![text::PAD_ID; n * len];
        let mut segs = vec![0u32; n * len];
        let mut keep = vec![false; n * len];
        let mut cpool = vec![0f32; n * len];
        let mut kpool = vec![0f32; n * len];
        for (i, p) in pairs.iter().enumerate() {
            if p.context_span.is_empty() || p.knowledge_span.is_empty() {
                return Err(Error::Sample("paired input has an empty span".into()));
            }
            let row = i * len;
            for (j, &t) in p.token_ids.iter().enumerate() {
                ids[row + j] = t;
                keep[row + j] = true;
            }
            for j in p.knowledge_span.clone() {
                segs[row + j] = 1;
                kpool[row + j] = 1.0 / p.knowledge_span.len() as f32;
            }
            for j in p.context_span.clone() {
                cpool[row + j] = 1.0 / p.context_span.len() as f32;
            }
        }
        Ok(Self {
            ids: Tensor::from_vec(ids, (n, len), device)?,
            segments: Tensor::from_vec(segs, (n, len), device)?,
            key_mask: nn::additive_mask(&keep, &[n, 1, 1, len], dtype, device)?,
            ctx_pool: Tensor::from_vec(cpool, (n, 1, len), device)?.to_dtype(dtype)?,
            know_pool: Tensor::from_vec(kpool, (n, 1, len), device)?.to_dtype(dtype)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    ToyTransformer,
    PretrainedAdapter,
}

/// Token ids in, final-layer hidden states `[N, L, d]` out.
pub trait EncoderBackend: Send + Sync {
    fn kind(&self) -> BackendKind;
    fn hidden_size(&self) -> usize;
    fn hidden_states(&self, batch: &TokenBatch, mode: &mut Mode) -> Result<Tensor>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
    pub max_len: usize,
    /// Applied to the embeddings, attention weights and both residual branches.
    #[serde(default)]
    pub dropout: f64,
}

impl EncoderConfig {
    pub fn toy(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            hidden: 128,
            layers: 2,
            heads: 4,
            ffn_hidden: 256,
            max_len: 96,
            dropout: 0.1,
        }
    }
}

struct EncoderLayer {
    wq: Tensor,
    wk: Tensor,
    wv: Tensor,
    wo: Tensor,
    bq: Tensor,
    bk: Tensor,
    bv: Tensor,
    bo: Tensor,
    ln1_g: Tensor,
    ln1_b: Tensor,
    w1: Tensor,
    b1: Tensor,
    w2: Tensor,
    b2: Tensor,
    ln2_g: Tensor,
    ln2_b: Tensor,
}

/// Small pre-norm bidirectional transformer with learned positions and
/// segment embeddings.
pub struct ToyTransformer {
    config: EncoderConfig,
    tok_emb: Tensor,
    pos_emb: Tensor,
    seg_emb: Tensor,
    emb_ln_g: Tensor,
    emb_ln_b: Tensor,
    layers: Vec<EncoderLayer>,
    final_ln_g: Tensor,
    final_ln_b: Tensor,
}

const LN_EPS: f64 = 1e-5;

impl ToyTransformer {
    pub fn new(config: EncoderConfig, store: &mut ParamStore) -> Result<Self> {
        let d = config.hidden;
        if config.heads == 0 || !d.is_multiple_of(config.heads) {
            return Err(Error::Config(format!(
                "encoder hidden size {d} is not divisible by {} heads",
                config.heads
            )));
        }
        let f = config.ffn_hidden;
        let tok_emb = store.add(
            "encoder.tok_emb",
            &[config.vocab_size, d],
            Init::Uniform(0.1),
        )?;
        let pos_emb = store.add("encoder.pos_emb", &[config.max_len, d], Init::Uniform(0.1))?;
        let seg_emb = store.add("encoder.seg_emb", &[2, d], Init::Uniform(0.1))?;
        let emb_ln_g = store.add("encoder.emb_ln.gamma", &[d], Init::Ones)?;
        let emb_ln_b = store.add("encoder.emb_ln.beta", &[d], Init::Zeros)?;
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let p = |n: &str| format!("encoder.layer{l}.{n}");
            layers.push(EncoderLayer {
                wq: store.add(&p("attn.wq"), &[d, d], Init::Glorot)?,
                // identical query and key maps start every head out matching equal tokens
                wk: store.add_copy(&p("attn.wk"), &p("attn.wq"))?,
                wv: store.add(&p("attn.wv"), &[d, d], Init::Glorot)?,
                wo: store.add(&p("attn.wo"), &[d, d], Init::Glorot)?,
                bq: store.add(&p("attn.bq"), &[d], Init::Zeros)?,
                bk: store.add(&p("attn.bk"), &[d], Init::Zeros)?,
                bv: store.add(&p("attn.bv"), &[d], Init::Zeros)?,
                bo: store.add(&p("attn.bo"), &[d], Init::Zeros)?,
                ln1_g: store.add(&p("ln1.gamma"), &[d], Init::Ones)?,
                ln1_b: store.add(&p("ln1.beta"), &[d], Init::Zeros)?,
                w1: store.add(&p("ffn.w1"), &[f, d], Init::Glorot)?,
                b1: store.add(&p("ffn.b1"), &[f], Init::Zeros)?,
                w2: store.add(&p("ffn.w2"), &[d, f], Init::Glorot)?,
                b2: store.add(&p("ffn.b2"), &[d], Init::Zeros)?,
                ln2_g: store.add(&p("ln2.gamma"), &[d], Init::Ones)?,
                ln2_b: store.add(&p("ln2.beta"), &[d], Init::Zeros)?,
            });
        }
        let final_ln_g = store.add("encoder.final_ln.gamma", &[d], Init::Ones)?;
        let final_ln_b = store.add("encoder.final_ln.beta", &[d], Init::Zeros)?;
        Ok(Self {
            config,
            tok_emb,
            pos_emb,
            seg_emb,
            emb_ln_g,
            emb_ln_b,
            layers,
            final_ln_g,
            final_ln_b,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    fn attention(
        &self,
        layer: &EncoderLayer,
        x: &Tensor,
        mask: &Tensor,
        mode: &mut Mode,
    ) -> Result<Tensor> {
        let (n, len, d) = x.dims3()?;
        let h = self.config.heads;
        let dh = d / h;
        let split = |t: Tensor| -> Result<Tensor> {
            Ok(t.reshape((n, len, h, dh))?.transpose(1, 2)?.contiguous()?)
        };
        let q = split(nn::linear(x, &layer.wq, Some(&layer.bq))?)?;
        let k = split(nn::linear(x, &layer.wk, Some(&layer.bk))?)?;
        let v = split(nn::linear(x, &layer.wv, Some(&layer.bv))?)?;
        let scores = (q.matmul(&k.t()?.contiguous()?)? / (dh as f64).sqrt())?;
        let attn = nn::softmax_last(&scores.broadcast_add(mask)?)?;
        let attn = mode.dropout(&attn, self.config.dropout)?;
        let ctx = attn.matmul(&v)?.transpose(1, 2)?.reshape((n, len, d))?;
        nn::linear(&ctx, &layer.wo, Some(&layer.bo))
    }
}

impl EncoderBackend for ToyTransformer {
    fn kind(&self) -> BackendKind {
        BackendKind::ToyTransformer
    }

    fn hidden_size(&self) -> usize {
        self.config.hidden
    }

    fn hidden_states(&self, batch: &TokenBatch, mode: &mut Mode) -> Result<Tensor> {
        let (n, len) = batch.ids.dims2()?;
        if len > self.config.max_len {
            return Err(Error::Shape(format!(
                "sequence length {len} exceeds encoder max_len {}",
                self.config.max_len
            )));
        }
        let d = self.config.hidden;
        let tok = self
            .tok_emb
            .index_select(&batch.ids.flatten_all()?, 0)?
            .reshape((n, len, d))?;
        let seg = self
            .seg_emb
            .index_select(&batch.segments.flatten_all()?, 0)?
            .reshape((n, len, d))?;
        let pos = self.pos_emb.narrow(0, 0, len)?;
        let x = (tok + seg)?.broadcast_add(&pos)?;
        let p = self.config.dropout;
        let mut x = mode.dropout(
            &nn::layer_norm(&x, &self.emb_ln_g, &self.emb_ln_b, LN_EPS)?,
            p,
        )?;
        for layer in &self.layers {
            let y = nn::layer_norm(&x, &layer.ln1_g, &layer.ln1_b, LN_EPS)?;
            let a = self.attention(layer, &y, &batch.key_mask, mode)?;
            x = (&x + mode.dropout(&a, p)?)?;
            let y = nn::layer_norm(&x, &layer.ln2_g, &layer.ln2_b, LN_EPS)?;
            let f = nn::linear(
                &nn::linear(&y, &layer.w1, Some(&layer.b1))?.relu()?,
                &layer.w2,
                Some(&layer.b2),
            )?;
            x = (x + mode.dropout(&f, p)?)?;
        }
        nn::layer_norm(&x, &self.final_ln_g, &self.final_ln_b, LN_EPS)
    }
}

/// Per-pair representations, one row per pair.
#[derive(Debug, Clone)]
pub struct EncodedBatch {
    /// `[N, d]` hidden state at the `[CLS]` position.
    pub k_cls: Tensor,
    /// `[N, d]` mean over the context span.
    pub c_ctx: Tensor,
    /// `[N, d]` mean over the knowledge span.
    pub k_know: Tensor,
}

impl EncodedBatch {
    pub fn rows(&self, start: usize, len: usize) -> Result<EncodedBatch> {
        Ok(EncodedBatch {
            k_cls: self.k_cls.narrow(0, start, len)?,
            c_ctx: self.c_ctx.narrow(0, start, len)?,
            k_know: self.k_know.narrow(0, start, len)?,
        })
    }
}

/// The three vectors of a single pair.
#[derive(Debug, Clone)]
pub struct EncodedPair {
    pub k_cls: Tensor,
    pub c_ctx: Tensor,
    pub k_know: Tensor,
}

/// Pools the hidden states of an already-computed batch.
pub fn pool_pairs(hidden: &Tensor, batch: &TokenBatch) -> Result<EncodedBatch> {
    let k_cls = hidden.narrow(1, 0, 1)?.squeeze(1)?;
    let c_ctx = batch.ctx_pool.matmul(hidden)?.squeeze(1)?;
    let k_know = batch.know_pool.matmul(hidden)?.squeeze(1)?;
    Ok(EncodedBatch {
        k_cls,
        c_ctx,
        k_know,
    })
}

pub fn encode_pairs(
    backend: &dyn EncoderBackend,
    pairs: &[PairedInput],
    dtype: DType,
    mode: &mut Mode,
) -> Result<EncodedBatch> {
    let batch = TokenBatch::new(pairs, dtype, &Device::Cpu)?;
    let hidden = backend.hidden_states(&batch, mode)?;
    pool_pairs(&hidden, &batch)
}

pub fn encode_pair(
    backend: &dyn EncoderBackend,
    pair: &PairedInput,
    dtype: DType,
) -> Result<EncodedPair> {
    let b = encode_pairs(
        backend,
        std::slice::from_ref(pair),
        dtype,
        &mut Mode::eval(),
    )?;
    Ok(EncodedPair {
        k_cls: b.k_cls.squeeze(0)?,
        c_ctx: b.c_ctx.squeeze(0)?,
        k_know: b.k_know.squeeze(0)?,
    })
}

/// Attention pooling of the per-candidate context vectors into one context
/// representation.
pub struct ContextAggregator {
    pub w_c: Tensor,
    pub v_c: Tensor,
}

#[derive(Debug, Clone)]
pub struct ContextVector {
    /// `[d]`
    pub c: Tensor,
    /// `[M]`, nonnegative and summing to one.
    pub attn_weights: Tensor,
}

impl ContextAggregator {
    pub fn new(d: usize, store: &mut ParamStore) -> Result<Self> {
        Ok(Self {
            w_c: store.add("context.W_c", &[d, d], Init::Glorot)?,
            v_c: store.add("context.V_c", &[d], Init::Glorot)?,
        })
    }

    pub fn forward(&self, c_ctx: &Tensor) -> Result<ContextVector> {
        aggregate_context(c_ctx, &self.w_c, &self.v_c)
    }
}

/// `h_j = tanh(W_c c_j)`, `α = softmax_j(V_c · h_j)`, `c = Σ_j α_j h_j` for
/// `c_ctx` of shape `[M, d]`.
pub fn aggregate_context(c_ctx: &Tensor, w_c: &Tensor, v_c: &Tensor) -> Result<ContextVector> {
    let (m, _) = c_ctx.dims2()?;
    if m == 0 {
        return Err(Error::Shape("cannot aggregate zero context vectors".into()));
    }
    let h = nn::linear(c_ctx, w_c, None)?.tanh()?;
    let scores = h.matmul(&v_c.unsqueeze(1)?)?.squeeze(1)?;
    let alpha = nn::softmax_last(&scores)?;
    let c = alpha.unsqueeze(0)?.matmul(&h)?.squeeze(0)?;
    Ok(ContextVector {
        c,
        attn_weights: alpha,
    })
}

/// Mean over the last-but-one axis, used where a plain average of rows is
/// needed outside the pooling matrices.
pub fn mean_rows(x: &Tensor) -> Result<Tensor> {
    Ok(x.mean(D::Minus2)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::to_vec_f64;

    fn vocab() -> Vocab {
        let words: Vec<String> = (0..300).map(|i| format!("t{i}")).collect();
        Vocab::build(words.iter().map(String::as_str).chain(["a b c d e"]), 1)
    }

    #[test]
    fn pair_without_truncation() {
        let v = vocab();
        let p = make_pair(&v, "a", "b", 96).unwrap();
        assert_eq!(
            p.token_ids,
            vec![text::CLS_ID, v.id("a"), text::SEP_ID, v.id("b")]
        );
        assert_eq!(p.context_span, 1..2);
        assert_eq!(p.knowledge_span, 3..4);
        assert_eq!(make_pair(&v, "a", "b", 96).unwrap(), p);
    }

    #[test]
    fn long_context_loses_its_head() {
        let v = vocab();
        let ctx: Vec<String> = (0..200).map(|i| format!("t{i}")).collect();
        let cand: Vec<String> = (200..210).map(|i| format!("t{i}")).collect();
        let p = make_pair(&v, &ctx.join(" "), &cand.join(" "), 96).unwrap();
        assert_eq!(p.token_ids.len(), 96);
        // 96 - 2 specials - 10 candidate tokens = 84 context tokens kept
        assert_eq!(p.context_span.len(), 84);
        assert_eq!(p.token_ids[1], v.id("t116"));
        assert_eq!(p.token_ids[84], v.id("t199"));
        assert_eq!(p.knowledge_span.len(), 10);
        assert_eq!(p.token_ids[95], v.id("t209"));
    }

    #[test]
    fn candidate_tail_truncated_after_context_head() {
        let v = vocab();
        let p = make_pair(&v, "a b c", "t1 t2 t3 t4 t5", 6).unwrap();
        assert_eq!(p.context_span.len(), 1);
        assert_eq!(p.token_ids[1], v.id("c"));
        assert_eq!(p.knowledge_span.len(), 3);
        assert_eq!(&p.token_ids[3..], &[v.id("t1"), v.id("t2"), v.id("t3")]);
    }

    #[test]
    fn degenerate_pairs_are_errors() {
        let v = vocab();
        assert!(make_pair(&v, "a", "", 96).is_err());
        assert!(make_pair(&v, "", "b", 96).is_err());
        assert!(make_pair(&v, "a", "b", 3).is_err());
    }

    fn tiny_backend(dtype: DType) -> (ToyTransformer, ParamStore) {
        let mut store = ParamStore::new(dtype, 1);
        let cfg = EncoderConfig {
            vocab_size: vocab().len(),
            hidden: 8,
            layers: 1,
            heads: 2,
            ffn_hidden: 16,
            max_len: 32,
            dropout: 0.0,
        };
        (ToyTransformer::new(cfg, &mut store).unwrap(), store)
    }

    #[test]
    fn singleton_knowledge_span_is_that_hidden_state() {
        let v = vocab();
        let (backend, _) = tiny_backend(DType::F64);
        let pair = make_pair(&v, "a b", "c", 32).unwrap();
        let batch = TokenBatch::new(std::slice::from_ref(&pair), DType::F64, &Device::Cpu).unwrap();
        let hidden = backend.hidden_states(&batch, &mut Mode::eval()).unwrap();
        let enc = encode_pair(&backend, &pair, DType::F64).unwrap();
        let h4 = to_vec_f64(&hidden.get(0).unwrap().get(4).unwrap()).unwrap();
        assert_eq!(to_vec_f64(&enc.k_know).unwrap(), h4);
        let h0 = to_vec_f64(&hidden.get(0).unwrap().get(0).unwrap()).unwrap();
        assert_eq!(to_vec_f64(&enc.k_cls).unwrap(), h0);
        let h1 = to_vec_f64(&hidden.get(0).unwrap().get(1).unwrap()).unwrap();
        let h2 = to_vec_f64(&hidden.get(0).unwrap().get(2).unwrap()).unwrap();
        let mean: Vec<f64> = h1.iter().zip(&h2).map(|(a, b)| (a + b) / 2.0).collect();
        for (x, y) in to_vec_f64(&enc.c_ctx).unwrap().iter().zip(mean) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_parameters_give_zero_outputs() {
        let v = vocab();
        let (backend, store) = tiny_backend(DType::F64);
        for (_, var) in store.iter() {
            var.set(&var.zeros_like().unwrap()).unwrap();
        }
        let enc = encode_pair(&backend, &make_pair(&v, "a", "b", 32).unwrap(), DType::F64).unwrap();
        for t in [enc.k_cls, enc.c_ctx, enc.k_know] {
            assert!(to_vec_f64(&t).unwrap().iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn padding_does_not_leak_into_encodings() {
        let v = vocab();
        let (backend, _) = tiny_backend(DType::F64);
        let short = make_pair(&v, "a", "b", 32).unwrap();
        let long = make_pair(&v, "a b c d e", "t1 t2 t3", 32).unwrap();
        let alone = encode_pair(&backend, &short, DType::F64).unwrap();
        let both = encode_pairs(
            &backend,
            &[long.clone(), short.clone()],
            DType::F64,
            &mut Mode::eval(),
        )
        .unwrap();
        let swapped =
            encode_pairs(&backend, &[short, long], DType::F64, &mut Mode::eval()).unwrap();
        let a = to_vec_f64(&alone.k_cls).unwrap();
        let b = to_vec_f64(&both.k_cls.get(1).unwrap()).unwrap();
        let c = to_vec_f64(&swapped.k_cls.get(0).unwrap()).unwrap();
        for ((x, y), z) in a.iter().zip(&b).zip(&c) {
            assert!((x - y).abs() < 1e-9 && (x - z).abs() < 1e-9);
        }
    }

    fn t2(rows: &[&[f64]]) -> Tensor {
        let m = rows.len();
        let d = rows[0].len();
        Tensor::from_vec(rows.concat(), (m, d), &Device::Cpu).unwrap()
    }

    #[test]
    fn aggregate_singleton_and_symmetric() {
        let w = t2(&[&[0.5, -0.2], &[0.1, 0.3]]);
        let vc = Tensor::new(&[0.7f64, -0.4], &Device::Cpu).unwrap();
        let one = aggregate_context(&t2(&[&[1.0, 2.0]]), &w, &vc).unwrap();
        assert_eq!(to_vec_f64(&one.attn_weights).unwrap(), vec![1.0]);
        let h: Vec<f64> = vec![(0.5f64 - 0.4).tanh(), (0.1f64 + 0.6).tanh()];
        for (a, b) in to_vec_f64(&one.c).unwrap().iter().zip(&h) {
            assert!((a - b).abs() < 1e-12);
        }
        let same =
            aggregate_context(&t2(&[&[1.0, 2.0], &[1.0, 2.0], &[1.0, 2.0]]), &w, &vc).unwrap();
        for a in to_vec_f64(&same.attn_weights).unwrap() {
            assert!((a - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn aggregate_scalar_example() {
        // h_1 = tanh(0) = 0, h_2 = 0.5 requires c_2 = atanh(0.5)
        let c2 = 0.5f64.atanh();
        let w = t2(&[&[1.0]]);
        let vc = Tensor::new(&[1.0f64], &Device::Cpu).unwrap();
        let out = aggregate_context(&t2(&[&[0.0], &[c2]]), &w, &vc).unwrap();
        let a = to_vec_f64(&out.attn_weights).unwrap();
        assert!((a[0] - 0.37754).abs() < 1e-5);
        assert!((a[1] - 0.62246).abs() < 1e-5);
        assert!((to_vec_f64(&out.c).unwrap()[0] - 0.31123).abs() < 1e-5);
    }
}
