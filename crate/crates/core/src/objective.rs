//! Selection losses and the selector training loop.

use std::path::Path;

use candle_core::{DType, Tensor, D};
use candle_nn::optim::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{build_all_samples, DialogueEpisode, SelectionSample, Split};
use crate::error::{Error, Result};
use crate::model::{Ablations, Cet2Model, ModelSettings, PreparedSample, PrevRule, SampleForward};
use crate::nn::{self, rng_for, Mode};
use crate::selector::{gumbel_noise, select_with_noise, SelectionDistribution};
use crate::text::Vocab;

pub const PROB_FLOOR: f64 = 1e-12;

/// `-ln p[gold]` as a scalar tensor, with the log-probability floored at
/// `ln 1e-12`. The flag reports whether the floor was hit.
pub fn ce_loss(dist: &SelectionDistribution, gold: usize) -> Result<(Tensor, bool)> {
    if gold >= dist.len() {
        return Err(Error::Sample(format!(
            "gold index {gold} outside {} candidates",
            dist.len()
        )));
    }
    let lp = nn::log_softmax_last(&dist.logits)?.get(gold)?;
    let floor = PROB_FLOOR.ln();
    let clamped = nn::scalar_f64(&lp)? < floor;
    if clamped {
        tracing::warn!(
            gold,
            "gold probability below {PROB_FLOOR}, clamping the log"
        );
    }
    Ok((lp.maximum(floor)?.neg()?, clamped))
}

/// `log_softmax([(u - v)^2 ; u * v])` over the `2d` entries.
pub fn variance_profile(u: &Tensor, v: &Tensor) -> Result<Tensor> {
    if u.dims() != v.dims() {
        return Err(Error::Shape(format!(
            "profile of {:?} and {:?}",
            u.dims(),
            v.dims()
        )));
    }
    let diff = (u - v)?.sqr()?;
    let prod = (u * v)?;
    nn::log_softmax_last(&Tensor::cat(&[diff, prod], D::Minus1)?)
}

/// `KL(F(k_last, k_hat) || F(k_last, k_gold))`.
pub fn shift_loss(k_last: &Tensor, k_hat: &Tensor, k_gold: &Tensor) -> Result<Tensor> {
    let lp_hat = variance_profile(k_last, k_hat)?;
    let lp_gold = variance_profile(k_last, k_gold)?;
    Ok((lp_hat.exp()? * (&lp_hat - lp_gold)?)?.sum_all()?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_ce: f64,
    pub l_sc: f64,
    pub l_cls: f64,
    pub n_shift_samples: usize,
}

pub struct SelectorLoss {
    /// Scalar `f64` tensor to differentiate.
    pub total: Tensor,
    pub breakdown: LossBreakdown,
    /// Hardened Gumbel selection per sample.
    pub selections: Vec<usize>,
    pub clamped: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossOptions {
    pub lambda_shift: f64,
    pub tau: f64,
    /// Straight-through hardening of the Gumbel sample.
    pub hard: bool,
}

/// `k_hat = Σ_j y_j k_cls_j` for the straight-through sample `y`. The value
/// is exactly the selected row; gradients are those of `y · k_cls`.
fn selected_knowledge(k_cls: &Tensor, index: usize, soft: &Tensor, hard: bool) -> Result<Tensor> {
    let mix = soft.unsqueeze(0)?.matmul(k_cls)?.squeeze(0)?;
    if !hard {
        return Ok(mix);
    }
    let row = k_cls.get(index)?;
    let soft_path = soft.unsqueeze(0)?.matmul(&k_cls.detach())?.squeeze(0)?;
    Ok((row + (&soft_path - soft_path.detach())?)?)
}

/// `L_cls = L_ce + λ L_sc` for a batch. `L_ce` averages over all samples and
/// `L_sc` over the samples that have previous knowledge; `noise[i]` is the
/// Gumbel draw for sample `i`.
pub fn selector_loss(
    forwards: &[SampleForward],
    golds: &[usize],
    noise: &[Vec<f64>],
    opts: LossOptions,
) -> Result<SelectorLoss> {
    if forwards.is_empty() || forwards.len() != golds.len() || forwards.len() != noise.len() {
        return Err(Error::Shape(format!(
            "{} forwards, {} golds, {} noise draws",
            forwards.len(),
            golds.len(),
            noise.len()
        )));
    }
    if opts.lambda_shift < 0.0 {
        return Err(Error::Config("lambda_shift must be nonnegative".into()));
    }
    let mut ce_terms = Vec::with_capacity(forwards.len());
    let mut sc_terms = Vec::new();
    let mut selections = Vec::with_capacity(forwards.len());
    let mut clamped = 0;
    for ((f, &gold), g) in forwards.iter().zip(golds).zip(noise) {
        let (ce, c) = ce_loss(&f.dist, gold)?;
        clamped += usize::from(c);
        ce_terms.push(ce);
        let sel = select_with_noise(&f.dist, g, opts.tau, opts.hard)?;
        selections.push(sel.index);
        if let Some(k_last) = &f.k_last {
            let soft = sel
                .soft
                .as_ref()
                .expect("gumbel selection keeps its relaxed sample");
            let k_hat = selected_knowledge(&f.k_cls, sel.index, soft, opts.hard)?;
            let k_gold = f.k_cls.get(gold)?;
            sc_terms.push(shift_loss(k_last, &k_hat, &k_gold)?);
        }
    }
    let l_ce = Tensor::stack(&ce_terms, 0)?
        .mean_all()?
        .to_dtype(DType::F64)?;
    let n_shift = sc_terms.len();
    let l_sc = if n_shift == 0 {
        Tensor::zeros((), DType::F64, l_ce.device())?
    } else {
        Tensor::stack(&sc_terms, 0)?
            .mean_all()?
            .to_dtype(DType::F64)?
    };
    let total = (&l_ce + (&l_sc * opts.lambda_shift)?)?;
    let breakdown = LossBreakdown {
        l_ce: nn::scalar_f64(&l_ce)?,
        l_sc: nn::scalar_f64(&l_sc)?,
        l_cls: nn::scalar_f64(&total)?,
        n_shift_samples: n_shift,
    };
    Ok(SelectorLoss {
        total,
        breakdown,
        selections,
        clamped,
    })
}

/// Gumbel noise for sample `i` of a training step.
pub fn step_noise(seed: u64, epoch: usize, step: usize, i: usize, m: usize) -> Vec<f64> {
    gumbel_noise(
        &mut rng_for(seed, "gumbel", &[epoch as u64, step as u64, i as u64]),
        m,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lambda_shift: f64,
    pub lr_encoder: f64,
    pub lr_head: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub tau_gumbel: f64,
    pub seed: u64,
    pub ablations: Ablations,
    /// Caps the number of optimizer steps per epoch.
    pub batches_per_epoch: Option<usize>,
    /// Stop once the epoch's training accuracy reaches this value.
    pub target_train_acc: Option<f64>,
    pub model: ModelSettings,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_shift: 0.5,
            lr_encoder: 1e-5,
            lr_head: 1e-4,
            batch_size: 4,
            epochs: 5,
            tau_gumbel: 1.0,
            seed: 0,
            ablations: Ablations::default(),
            batches_per_epoch: None,
            target_train_acc: None,
            model: ModelSettings::default(),
        }
    }
}

impl TrainConfig {
    /// Settings for the randomly initialized toy encoder, which needs larger
    /// steps than a fine-tuned pretrained one.
    pub fn toy() -> Self {
        Self {
            lr_encoder: 1e-3,
            lr_head: 1e-3,
            epochs: 30,
            ..Self::default()
        }
    }

    pub fn from_toml(raw: &str) -> Result<Self> {
        toml::from_str(raw).map_err(|e| Error::Config(format!("training config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&raw)
    }

    pub fn loss_options(&self) -> LossOptions {
        LossOptions {
            lambda_shift: if self.ablations.shift_loss {
                self.lambda_shift
            } else {
                0.0
            },
            tau: self.tau_gumbel,
            hard: true,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.lambda_shift < 0.0 {
            return Err(Error::Config("lambda_shift must be nonnegative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.tau_gumbel <= 0.0 {
            return Err(Error::Config("tau_gumbel must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_acc: f64,
    pub valid_acc: f64,
    pub l_ce: f64,
    pub l_sc: f64,
}

pub fn history_jsonl(history: &[EpochRecord]) -> Result<String> {
    let mut out = String::new();
    for r in history {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

/// Fraction of samples whose evaluation-path prediction hits gold.
pub fn accuracy(model: &Cet2Model, samples: &[SelectionSample], rule: PrevRule) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::UndefinedMetric("accuracy of zero samples".into()));
    }
    let preds = model.predict(samples, rule)?;
    let hits = preds
        .iter()
        .zip(samples)
        .filter(|(p, s)| Some(p.index) == s.gold_index)
        .count();
    Ok(hits as f64 / samples.len() as f64)
}

/// Builds the vocabulary over every text a split exposes to the model.
pub fn build_vocab(episodes: &[DialogueEpisode]) -> Vocab {
    let mut texts: Vec<&str> = Vec::new();
    for ep in episodes {
        for t in &ep.turns {
            texts.push(&t.user_utterance.text);
            texts.push(&t.agent_response.text);
            texts.extend(t.candidates.iter().map(|c| c.text.as_str()));
        }
    }
    Vocab::build(texts, 1)
}

fn adam_params(lr: f64) -> ParamsAdamW {
    ParamsAdamW {
        lr,
        weight_decay: 0.0,
        ..ParamsAdamW::default()
    }
}

/// Owns the model and the two Adam groups (encoder, everything else).
pub struct SelectorTrainer {
    model: Cet2Model,
    config: TrainConfig,
    opt_encoder: AdamW,
    opt_head: AdamW,
}

impl SelectorTrainer {
    pub fn new(model: Cet2Model, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let store = model.store();
        let opt_encoder = AdamW::new(
            store.vars_with_prefix("encoder.", true),
            adam_params(config.lr_encoder),
        )?;
        let opt_head = AdamW::new(
            store.vars_with_prefix("encoder.", false),
            adam_params(config.lr_head),
        )?;
        Ok(Self {
            model,
            config,
            opt_encoder,
            opt_head,
        })
    }

    pub fn model(&self) -> &Cet2Model {
        &self.model
    }

    pub fn into_model(self) -> Cet2Model {
        self.model
    }

    /// One optimizer step on a batch.
    pub fn step(
        &mut self,
        batch: &[&PreparedSample],
        epoch: usize,
        step: usize,
    ) -> Result<LossBreakdown> {
        let seed = self.config.seed;
        let mut mode = Mode::train(rng_for(seed, "dropout", &[epoch as u64, step as u64]));
        let forwards = self.model.forward(batch, &mut mode)?;
        let golds = batch
            .iter()
            .map(|s| {
                s.gold_index
                    .ok_or_else(|| Error::Sample("training sample without gold".into()))
            })
            .collect::<Result<Vec<_>>>()?;
        let noise: Vec<Vec<f64>> = batch
            .iter()
            .enumerate()
            .map(|(i, s)| step_noise(seed, epoch, step, i, s.num_candidates()))
            .collect();
        let loss = selector_loss(&forwards, &golds, &noise, self.config.loss_options())?;
        let grads = loss.total.backward()?;
        self.opt_encoder.step(&grads)?;
        self.opt_head.step(&grads)?;
        Ok(loss.breakdown)
    }
}

pub struct TrainOutcome {
    /// Model carrying the best-validation parameters.
    pub model: Cet2Model,
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
}

/// Trains a freshly initialized selector on the train split, selecting the
/// epoch with the best validation accuracy.
pub fn train_selector(episodes: &[DialogueEpisode], config: &TrainConfig) -> Result<TrainOutcome> {
    let train_eps: Vec<DialogueEpisode> = episodes
        .iter()
        .filter(|e| e.split == Split::Train)
        .cloned()
        .collect();
    let valid_eps: Vec<DialogueEpisode> = episodes
        .iter()
        .filter(|e| e.split == Split::Valid)
        .cloned()
        .collect();
    let vocab = build_vocab(&train_eps);
    let model_config = config.model.build(vocab.len(), config.ablations);
    let model = Cet2Model::new(
        model_config,
        vocab,
        DType::F32,
        nn::derive_seed(config.seed, "init", &[]),
    )?;
    train_model(model, &train_eps, &valid_eps, config, |_| {})
}

/// Training loop over an existing model. `on_epoch` observes each history
/// record as it is produced.
pub fn train_model(
    model: Cet2Model,
    train_eps: &[DialogueEpisode],
    valid_eps: &[DialogueEpisode],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    let window = model.config().window_l;
    let train = build_all_samples(train_eps, window)?;
    let valid = build_all_samples(valid_eps, window)?;
    if train.is_empty() {
        return Err(Error::Config("train split has no labeled samples".into()));
    }
    if valid.is_empty() {
        return Err(Error::Config("valid split has no labeled samples".into()));
    }
    let prepared = train
        .iter()
        .map(|s| model.prepare(s))
        .collect::<Result<Vec<_>>>()?;
    let mut trainer = SelectorTrainer::new(model, config.clone())?;
    let mut best = trainer.model.store().snapshot()?;
    let mut best_acc = f64::NEG_INFINITY;
    let mut best_epoch = None;
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..prepared.len()).collect();
        order.shuffle(&mut rng_for(config.seed, "shuffle", &[epoch as u64]));
        let n_batches = order.len().div_ceil(config.batch_size);
        let n_batches = config
            .batches_per_epoch
            .map_or(n_batches, |cap| cap.min(n_batches));
        let (mut ce_sum, mut sc_sum, mut sc_batches) = (0.0, 0.0, 0usize);
        for (step, chunk) in order.chunks(config.batch_size).take(n_batches).enumerate() {
            let batch: Vec<&PreparedSample> = chunk.iter().map(|&i| &prepared[i]).collect();
            let b = trainer.step(&batch, epoch, step)?;
            if !b.l_cls.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss at epoch {} step {step}: {b:?}",
                    epoch + 1
                )));
            }
            ce_sum += b.l_ce;
            if b.n_shift_samples > 0 {
                sc_sum += b.l_sc;
                sc_batches += 1;
            }
        }
        let record = EpochRecord {
            epoch: epoch + 1,
            train_acc: accuracy(trainer.model(), &train, PrevRule::Predicted)?,
            valid_acc: accuracy(trainer.model(), &valid, PrevRule::Predicted)?,
            l_ce: if n_batches == 0 {
                0.0
            } else {
                ce_sum / n_batches as f64
            },
            l_sc: if sc_batches == 0 {
                0.0
            } else {
                sc_sum / sc_batches as f64
            },
        };
        tracing::info!(
            epoch = record.epoch,
            train_acc = record.train_acc,
            valid_acc = record.valid_acc,
            l_ce = record.l_ce,
            l_sc = record.l_sc,
            "epoch finished"
        );
        on_epoch(&record);
        if record.valid_acc > best_acc {
            best_acc = record.valid_acc;
            best_epoch = Some(record.epoch);
            best = trainer.model().store().snapshot()?;
        }
        let done = config
            .target_train_acc
            .is_some_and(|t| record.train_acc >= t);
        history.push(record);
        if done {
            break;
        }
    }
    let model = trainer.into_model();
    model.store().restore(&best)?;
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
    })
}
