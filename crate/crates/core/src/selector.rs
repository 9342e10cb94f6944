//! Comparative knowledge selection: a tf-idf candidate graph encoded by a
//! multi-head graph attention layer, average-pooled, and fed as the initial
//! state of a single pointer-network decoding step.

use std::collections::HashMap;

use candle_core::{DType, Device, Tensor, D};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::KnowledgeCandidate;
use crate::error::{Error, Result};
use crate::nn::{self, Init, Mode, ParamStore};
use crate::text::normalize_words;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeGraph {
    pub n_nodes: usize,
    /// Row-major `M x M`, symmetric, diagonal always set.
    pub adjacency: Vec<bool>,
    /// Row-major `M x M` tf-idf cosine similarities.
    pub sim: Vec<f64>,
}

impl KnowledgeGraph {
    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adjacency[i * self.n_nodes + j]
    }

    pub fn similarity(&self, i: usize, j: usize) -> f64 {
        self.sim[i * self.n_nodes + j]
    }

    /// Self-loops only.
    pub fn isolated(n: usize) -> Self {
        let mut adjacency = vec![false; n * n];
        let mut sim = vec![0.0; n * n];
        for i in 0..n {
            adjacency[i * n + i] = true;
            sim[i * n + i] = 1.0;
        }
        Self {
            n_nodes: n,
            adjacency,
            sim,
        }
    }

    pub fn complete(n: usize) -> Self {
        Self {
            n_nodes: n,
            adjacency: vec![true; n * n],
            sim: vec![1.0; n * n],
        }
    }

    /// Same graph with nodes relabeled: new node `i` is old node `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.n_nodes;
        let mut adjacency = vec![false; n * n];
        let mut sim = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                adjacency[i * n + j] = self.has_edge(perm[i], perm[j]);
                sim[i * n + j] = self.similarity(perm[i], perm[j]);
            }
        }
        Self {
            n_nodes: n,
            adjacency,
            sim,
        }
    }

    /// `{"n_nodes", "adjacency": [[0|1]], "sim": [[..]]}` for debugging views.
    pub fn to_debug_json(&self) -> serde_json::Value {
        let n = self.n_nodes;
        let adj: Vec<Vec<u8>> = (0..n)
            .map(|i| (0..n).map(|j| u8::from(self.has_edge(i, j))).collect())
            .collect();
        let sim: Vec<Vec<f64>> = (0..n)
            .map(|i| self.sim[i * n..(i + 1) * n].to_vec())
            .collect();
        serde_json::json!({ "n_nodes": n, "adjacency": adj, "sim": sim })
    }

    fn mask(&self, dtype: DType, device: &Device) -> Result<Tensor> {
        nn::additive_mask(
            &self.adjacency,
            &[self.n_nodes, self.n_nodes],
            dtype,
            device,
        )
    }
}

/// Tf-idf over the candidate texts (raw term counts, `idf = ln(M/df) + 1`),
/// cosine similarity, and an edge wherever the similarity reaches
/// `threshold`.
pub fn build_knowledge_graph(
    candidates: &[KnowledgeCandidate],
    threshold: f64,
) -> Result<KnowledgeGraph> {
    let m = candidates.len();
    if m == 0 {
        return Err(Error::Shape(
            "knowledge graph needs at least one candidate".into(),
        ));
    }
    let docs: Vec<Vec<String>> = candidates
        .iter()
        .map(|c| normalize_words(&c.text))
        .collect();
    let mut df: HashMap<&str, usize> = HashMap::new();
    for doc in &docs {
        let mut seen: Vec<&str> = doc.iter().map(String::as_str).collect();
        seen.sort_unstable();
        seen.dedup();
        for w in seen {
            *df.entry(w).or_default() += 1;
        }
    }
    let vectors: Vec<HashMap<&str, f64>> = docs
        .iter()
        .map(|doc| {
            let mut tf: HashMap<&str, f64> = HashMap::new();
            for w in doc {
                *tf.entry(w.as_str()).or_default() += 1.0;
            }
            for (w, v) in tf.iter_mut() {
                *v *= (m as f64 / df[w] as f64).ln() + 1.0;
            }
            tf
        })
        .collect();
    let norms: Vec<f64> = vectors
        .iter()
        .map(|v| v.values().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let mut graph = KnowledgeGraph::isolated(m);
    for i in 0..m {
        graph.sim[i * m + i] = if norms[i] > 0.0 { 1.0 } else { 0.0 };
        for j in i + 1..m {
            let s = if norms[i] > 0.0 && norms[j] > 0.0 {
                let dot: f64 = vectors[i]
                    .iter()
                    .filter_map(|(w, x)| vectors[j].get(w).map(|y| x * y))
                    .sum();
                (dot / (norms[i] * norms[j])).clamp(0.0, 1.0)
            } else {
                0.0
            };
            graph.sim[i * m + j] = s;
            graph.sim[j * m + i] = s;
            let edge = s >= threshold;
            graph.adjacency[i * m + j] = edge;
            graph.adjacency[j * m + i] = edge;
        }
    }
    Ok(graph)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectorConfig {
    pub gat_heads: usize,
    pub gat_layers: usize,
    pub gat_ffn_hidden: usize,
    pub gat_dropout: f64,
    pub ffn_dropout: f64,
    pub edge_threshold: f64,
    pub leaky_slope: f64,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        Self {
            gat_heads: 8,
            gat_layers: 1,
            gat_ffn_hidden: 2048,
            gat_dropout: 0.5,
            ffn_dropout: 0.1,
            edge_threshold: 0.3,
            leaky_slope: 0.2,
        }
    }
}

/// One multi-head graph attention layer; heads are concatenated.
pub struct GatLayer {
    heads: usize,
    /// `[d, d]`: head `h` projects with rows `h*dh..(h+1)*dh`.
    w: Tensor,
    /// `[heads, dh]`, applied to the projected target node.
    a_src: Tensor,
    /// `[heads, dh]`, applied to the projected neighbor.
    a_dst: Tensor,
    slope: f64,
    dropout: f64,
}

impl GatLayer {
    pub fn new(
        prefix: &str,
        d: usize,
        config: &SelectorConfig,
        store: &mut ParamStore,
    ) -> Result<Self> {
        let heads = config.gat_heads;
        if heads == 0 || !d.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "GAT: hidden size {d} not divisible by {heads} heads"
            )));
        }
        let dh = d / heads;
        Ok(Self {
            heads,
            w: store.add(&format!("{prefix}.W"), &[d, d], Init::Glorot)?,
            a_src: store.add(&format!("{prefix}.a_src"), &[heads, dh], Init::Glorot)?,
            a_dst: store.add(&format!("{prefix}.a_dst"), &[heads, dh], Init::Glorot)?,
            slope: config.leaky_slope,
            dropout: config.gat_dropout,
        })
    }

    /// `x`: `[M, d]`; `mask`: `[M, M]` additive adjacency mask.
    pub fn forward(&self, x: &Tensor, mask: &Tensor, mode: &mut Mode) -> Result<Tensor> {
        let (m, d) = x.dims2()?;
        let h = self.heads;
        let dh = d / h;
        let wh = nn::linear(x, &self.w, None)?
            .reshape((m, h, dh))?
            .transpose(0, 1)?
            .contiguous()?;
        let src = wh
            .broadcast_mul(&self.a_src.unsqueeze(1)?)?
            .sum_keepdim(D::Minus1)?;
        let dst = wh
            .broadcast_mul(&self.a_dst.unsqueeze(1)?)?
            .sum_keepdim(D::Minus1)?
            .transpose(1, 2)?;
        let scores = nn::leaky_relu(&src.broadcast_add(&dst)?, self.slope)?;
        let alpha = nn::softmax_last(&scores.broadcast_add(&mask.unsqueeze(0)?)?)?;
        let alpha = mode.dropout(&alpha, self.dropout)?;
        let out = alpha.matmul(&wh)?.transpose(0, 1)?.reshape((m, d))?;
        Ok(out)
    }
}

/// Position-wise feed-forward block with a residual connection.
pub struct PositionwiseFfn {
    w1: Tensor,
    b1: Tensor,
    w2: Tensor,
    b2: Tensor,
    dropout: f64,
}

impl PositionwiseFfn {
    pub fn new(
        prefix: &str,
        d: usize,
        config: &SelectorConfig,
        store: &mut ParamStore,
    ) -> Result<Self> {
        let f = config.gat_ffn_hidden;
        Ok(Self {
            w1: store.add(&format!("{prefix}.w1"), &[f, d], Init::Glorot)?,
            b1: store.add(&format!("{prefix}.b1"), &[f], Init::Zeros)?,
            w2: store.add(&format!("{prefix}.w2"), &[d, f], Init::Glorot)?,
            b2: store.add(&format!("{prefix}.b2"), &[d], Init::Zeros)?,
            dropout: config.ffn_dropout,
        })
    }

    pub fn forward(&self, x: &Tensor, mode: &mut Mode) -> Result<Tensor> {
        let hidden = nn::linear(x, &self.w1, Some(&self.b1))?.relu()?;
        let out = nn::linear(&hidden, &self.w2, Some(&self.b2))?;
        Ok((x + mode.dropout(&out, self.dropout)?)?)
    }
}

/// Graph encoder: `gat_layers` x (GAT, FFN).
pub struct GraphEncoder {
    blocks: Vec<(GatLayer, PositionwiseFfn)>,
}

impl GraphEncoder {
    pub fn new(d: usize, config: &SelectorConfig, store: &mut ParamStore) -> Result<Self> {
        let mut blocks = Vec::with_capacity(config.gat_layers);
        for l in 0..config.gat_layers {
            let suffix = if l == 0 { String::new() } else { l.to_string() };
            blocks.push((
                GatLayer::new(&format!("selector.gat{suffix}"), d, config, store)?,
                PositionwiseFfn::new(&format!("selector.ffn{suffix}"), d, config, store)?,
            ));
        }
        Ok(Self { blocks })
    }

    /// Node embeddings `[M, d]` from node features `[M, d]`.
    pub fn gat_encode(
        &self,
        nodes: &Tensor,
        graph: &KnowledgeGraph,
        mode: &mut Mode,
    ) -> Result<Tensor> {
        let m = nodes.dims2()?.0;
        if graph.n_nodes != m {
            return Err(Error::Shape(format!(
                "graph has {} nodes, features have {m} rows",
                graph.n_nodes
            )));
        }
        let mask = graph.mask(nodes.dtype(), nodes.device())?;
        let mut x = nodes.clone();
        for (gat, ffn) in &self.blocks {
            x = ffn.forward(&gat.forward(&x, &mask, mode)?, mode)?;
        }
        Ok(x)
    }
}

/// Mean over nodes: `[M, d] -> [d]`.
pub fn pool_graph(node_embeds: &Tensor) -> Result<Tensor> {
    if node_embeds.dims2()?.0 == 0 {
        return Err(Error::Shape("cannot pool an empty graph".into()));
    }
    Ok(node_embeds.mean(0)?)
}

/// LSTM cell with PyTorch gate order (input, forget, cell, output).
pub struct LstmCell {
    w_ih: Tensor,
    w_hh: Tensor,
    b_ih: Tensor,
    b_hh: Tensor,
}

impl LstmCell {
    pub fn new(d: usize, store: &mut ParamStore) -> Result<Self> {
        let a = 1.0 / (d as f64).sqrt();
        Ok(Self {
            w_ih: store.add("selector.lstm.W_ih", &[4 * d, d], Init::Uniform(a))?,
            w_hh: store.add("selector.lstm.W_hh", &[4 * d, d], Init::Uniform(a))?,
            b_ih: store.add("selector.lstm.b_ih", &[4 * d], Init::Uniform(a))?,
            b_hh: store.add("selector.lstm.b_hh", &[4 * d], Init::Uniform(a))?,
        })
    }

    /// One step; returns `(h', c')`.
    pub fn step(&self, input: &Tensor, h: &Tensor, c: &Tensor) -> Result<(Tensor, Tensor)> {
        let d = h.dims1()?;
        let gates = (nn::linear(input, &self.w_ih, Some(&self.b_ih))?
            + nn::linear(h, &self.w_hh, Some(&self.b_hh))?)?;
        let i = nn::sigmoid(&gates.narrow(0, 0, d)?)?;
        let f = nn::sigmoid(&gates.narrow(0, d, d)?)?;
        let g = gates.narrow(0, 2 * d, d)?.tanh()?;
        let o = nn::sigmoid(&gates.narrow(0, 3 * d, d)?)?;
        let c_next = ((f * c)? + (i * g)?)?;
        let h_next = (o * c_next.tanh()?)?;
        Ok((h_next, c_next))
    }
}

#[derive(Debug, Clone)]
pub struct SelectionDistribution {
    /// `[M]`
    pub logits: Tensor,
    /// `[M]`, softmax of the logits.
    pub probs: Tensor,
}

impl SelectionDistribution {
    pub fn from_logits(logits: Tensor) -> Result<Self> {
        let probs = nn::softmax_last(&logits)?;
        Ok(Self { logits, probs })
    }

    pub fn len(&self) -> usize {
        self.logits.dims()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn probs_vec(&self) -> Result<Vec<f64>> {
        nn::to_vec_f64(&self.probs)
    }

    pub fn logits_vec(&self) -> Result<Vec<f64>> {
        nn::to_vec_f64(&self.logits)
    }

    /// Most probable candidate, lowest index on ties.
    pub fn argmax(&self) -> Result<usize> {
        Ok(nn::argmax(&self.probs_vec()?))
    }
}

/// Single-step pointer scorer:
/// `g' = LSTMCell(c, (g, 0))`, `β_j = vᵀ tanh(W_e e_j + W_g g' + b)`.
pub struct PointerScorer {
    lstm: LstmCell,
    w_e: Tensor,
    w_g: Tensor,
    v: Tensor,
    b: Tensor,
}

impl PointerScorer {
    pub fn new(d: usize, d_e: usize, store: &mut ParamStore) -> Result<Self> {
        Ok(Self {
            lstm: LstmCell::new(d, store)?,
            w_e: store.add("selector.pointer.W_e", &[d, d_e], Init::Glorot)?,
            w_g: store.add("selector.pointer.W_g", &[d, d], Init::Glorot)?,
            v: store.add("selector.pointer.v", &[d], Init::Glorot)?,
            b: store.add("selector.pointer.b", &[d], Init::Zeros)?,
        })
    }

    /// Returns the distribution and the decoder state `g'`.
    pub fn score(
        &self,
        c: &Tensor,
        g: &Tensor,
        e: &Tensor,
    ) -> Result<(SelectionDistribution, Tensor)> {
        let c0 = g.zeros_like()?;
        let (g_prime, _) = self.lstm.step(c, g, &c0)?;
        let keys = nn::linear(e, &self.w_e, None)?;
        let query = nn::linear(&g_prime, &self.w_g, Some(&self.b))?;
        let hidden = keys.broadcast_add(&query.unsqueeze(0)?)?.tanh()?;
        let logits = hidden.matmul(&self.v.unsqueeze(1)?)?.squeeze(1)?;
        Ok((SelectionDistribution::from_logits(logits)?, g_prime))
    }
}

/// Bilinear scorer used when the pointer network is ablated:
/// `β_j = (W_a e_j) · c`.
pub struct AttentionScorer {
    w_a: Tensor,
}

impl AttentionScorer {
    pub fn new(d: usize, d_e: usize, store: &mut ParamStore) -> Result<Self> {
        Ok(Self {
            w_a: store.add("selector.attention.W_a", &[d, d_e], Init::Glorot)?,
        })
    }

    pub fn score(&self, c: &Tensor, e: &Tensor) -> Result<SelectionDistribution> {
        attention_score(c, e, &self.w_a)
    }
}

pub fn attention_score(c: &Tensor, e: &Tensor, w_a: &Tensor) -> Result<SelectionDistribution> {
    let proj = nn::linear(e, w_a, None)?;
    let logits = proj.matmul(&c.unsqueeze(1)?)?.squeeze(1)?;
    SelectionDistribution::from_logits(logits)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SelectMode {
    Argmax,
    Gumbel { tau: f64, seed: u64 },
}

#[derive(Debug, Clone)]
pub struct Selection {
    pub index: usize,
    /// `[M]` mixing weights. One-hot in value; under Gumbel selection the
    /// gradient is that of the relaxed softmax.
    pub weights: Tensor,
    /// Relaxed Gumbel-softmax sample, when drawn.
    pub soft: Option<Tensor>,
}

/// `M` i.i.d. Gumbel(0, 1) draws.
pub fn gumbel_noise(rng: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
    (0..m)
        .map(|_| {
            let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
            -(-u.ln()).ln()
        })
        .collect()
}

pub fn select(dist: &SelectionDistribution, mode: SelectMode) -> Result<Selection> {
    match mode {
        SelectMode::Argmax => {
            let index = dist.argmax()?;
            Ok(Selection {
                index,
                weights: one_hot(index, dist.len(), &dist.logits)?,
                soft: None,
            })
        }
        SelectMode::Gumbel { tau, seed } => {
            let mut rng = nn::rng_for(seed, "gumbel", &[]);
            let noise = gumbel_noise(&mut rng, dist.len());
            select_with_noise(dist, &noise, tau, true)
        }
    }
}

/// Gumbel-softmax with caller-supplied noise. `hard` applies the
/// straight-through estimator: the returned weights are one-hot in value
/// while carrying the relaxed sample's gradient.
pub fn select_with_noise(
    dist: &SelectionDistribution,
    noise: &[f64],
    tau: f64,
    hard: bool,
) -> Result<Selection> {
    if tau <= 0.0 || !tau.is_finite() {
        return Err(Error::Config(format!(
            "Gumbel temperature must be positive, got {tau}"
        )));
    }
    if noise.len() != dist.len() {
        return Err(Error::Shape(format!(
            "{} noise draws for {} candidates",
            noise.len(),
            dist.len()
        )));
    }
    let g = Tensor::from_vec(noise.to_vec(), noise.len(), dist.logits.device())?
        .to_dtype(dist.logits.dtype())?;
    let soft = nn::softmax_last(&((&dist.logits + g)? / tau)?)?;
    let index = nn::argmax(&nn::to_vec_f64(&soft)?);
    let weights = if hard {
        let hard = one_hot(index, dist.len(), &soft)?;
        ((hard - soft.detach())? + &soft)?
    } else {
        soft.clone()
    };
    Ok(Selection {
        index,
        weights,
        soft: Some(soft),
    })
}

fn one_hot(index: usize, m: usize, like: &Tensor) -> Result<Tensor> {
    let mut v = vec![0f32; m];
    v[index] = 1.0;
    Ok(Tensor::from_vec(v, m, like.device())?.to_dtype(like.dtype())?)
}
