//! Command implementations behind the `cet2` binary.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use cet2_core::checkpoint::{load_selector, save_selector, HISTORY_FILE};
use cet2_core::corpus::{
    build_all_samples, convert_holle, convert_wow, load_corpus, render_context, synth_corpus,
    write_corpus, CorpusFormat, DialogueEpisode, Split, SynthConfig, Utterance,
};
use cet2_core::evaluation::{evaluate_run, write_predictions, FirstTurnPolicy, PredictionLine};
use cet2_core::generator::{
    gen_examples, load_generator, save_generator, train_generator, DecodingConfig, GenTrainConfig,
    Strategy,
};
use cet2_core::model::{Ablations, PrevRule};
use cet2_core::objective::{history_jsonl, train_selector, TrainConfig};
use cet2_service::{router, AppState, Models};

#[derive(Debug, Parser)]
#[command(
    name = "cet2",
    version,
    about = "Knowledge selection and grounded response generation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert a corpus into the normalized JSON schema, or write a synthetic one.
    Ingest(IngestArgs),
    /// Train the knowledge selector and write a checkpoint directory.
    Train(TrainArgs),
    /// Train the response generator into an existing checkpoint directory.
    TrainGen(TrainGenArgs),
    /// Predict a split, write the prediction file and the metrics report.
    Eval(EvalArgs),
    /// Generate one response from a context file and a knowledge sentence.
    Generate(GenerateArgs),
    /// Serve the session API.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum IngestFormat {
    Wow,
    Holle,
    Synthetic,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long, value_enum)]
    pub format: IngestFormat,
    /// Upstream release file (not used for synthetic).
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Split label of the upstream file.
    #[arg(long, default_value = "train")]
    pub split: String,
    #[arg(long, default_value_t = 200)]
    pub episodes: usize,
    #[arg(long, default_value_t = 4)]
    pub turns: usize,
    #[arg(long, default_value_t = 8)]
    pub candidates: usize,
    #[arg(long, default_value_t = 200)]
    pub vocab: usize,
    #[arg(long, default_value_t = 0.6)]
    pub p_adhere: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NormalizedFormat {
    Wow,
    Holle,
}

impl From<NormalizedFormat> for CorpusFormat {
    fn from(f: NormalizedFormat) -> Self {
        match f {
            NormalizedFormat::Wow => CorpusFormat::Wow,
            NormalizedFormat::Holle => CorpusFormat::Holle,
        }
    }
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    /// Corpus in the normalized JSON schema.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Which split labels the corpus may carry.
    #[arg(long, value_enum, default_value = "wow")]
    pub corpus_format: NormalizedFormat,
}

impl CorpusArgs {
    fn load(&self) -> Result<Vec<DialogueEpisode>> {
        load_corpus(&self.corpus, self.corpus_format.into(), None)
            .with_context(|| format!("loading {}", self.corpus.display()))
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// TOML training configuration; defaults to the toy preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// full, no_shift_loss, no_cross_opt, no_coher_opt or no_pointer_net.
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub batches_per_epoch: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainGenArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RuleArg {
    Predicted,
    Gold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FirstTurnArg {
    Exclude,
    Changing,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, default_value = "test_seen")]
    pub split: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Where to write the prediction file; defaults next to the report.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Previous knowledge fed at turn t > 0.
    #[arg(long, value_enum, default_value = "predicted")]
    pub rule: RuleArg,
    #[arg(long, value_enum, default_value = "exclude")]
    pub first_turn: FirstTurnArg,
    /// Also generate responses with the checkpoint's generator.
    #[arg(long)]
    pub generate: bool,
    #[arg(long, default_value_t = 32)]
    pub max_new_tokens: usize,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    #[arg(long, default_value_t = 32)]
    pub max_new_tokens: usize,
    /// Sample from the k most likely tokens instead of greedy decoding.
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl DecodeArgs {
    fn config(&self) -> DecodingConfig {
        DecodingConfig {
            max_new_tokens: self.max_new_tokens,
            strategy: self.top_k.map_or(Strategy::Greedy, Strategy::TopK),
            seed: self.seed,
        }
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// One utterance per line, alternating user and agent, starting with the user.
    #[arg(long)]
    pub context_file: PathBuf,
    #[arg(long)]
    pub knowledge: String,
    #[command(flatten)]
    pub decode: DecodeArgs,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    /// Corpus whose episodes sessions may be created from.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "wow")]
    pub corpus_format: NormalizedFormat,
    /// Write all sessions here as JSON on shutdown.
    #[arg(long)]
    pub sessions_out: Option<PathBuf>,
    #[command(flatten)]
    pub decode: DecodeArgs,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest(a) => ingest(&a),
        Command::Train(a) => train(&a),
        Command::TrainGen(a) => train_gen(&a),
        Command::Eval(a) => eval(&a),
        Command::Generate(a) => generate(&a),
        Command::Serve(a) => serve(a),
    }
}

fn ingest(a: &IngestArgs) -> Result<()> {
    let episodes = match a.format {
        IngestFormat::Synthetic => synth_corpus(&SynthConfig {
            n_episodes: a.episodes,
            turns_per_episode: a.turns,
            m_candidates: a.candidates,
            vocab_size: a.vocab,
            p_adhere: a.p_adhere,
            seed: a.seed,
        })?,
        IngestFormat::Wow | IngestFormat::Holle => {
            let path = a
                .input
                .as_ref()
                .context("--in is required for wow and holle")?;
            let raw = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            let split: Split = a.split.parse()?;
            if a.format == IngestFormat::Wow {
                convert_wow(&raw, split)?
            } else {
                convert_holle(&raw, split)?
            }
        }
    };
    write_corpus(&a.out, &episodes)?;
    let turns: usize = episodes.iter().map(|e| e.turns.len()).sum();
    println!(
        "wrote {} episodes ({turns} turns) to {}",
        episodes.len(),
        a.out.display()
    );
    Ok(())
}

fn train(a: &TrainArgs) -> Result<()> {
    let mut config = match &a.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::toy(),
    };
    if let Some(e) = a.epochs {
        config.epochs = e;
    }
    if let Some(s) = a.seed {
        config.seed = s;
    }
    if let Some(v) = &a.variant {
        config.ablations = Ablations::variant(v)?;
    }
    if a.batches_per_epoch.is_some() {
        config.batches_per_epoch = a.batches_per_epoch;
    }
    let episodes = a.corpus.load()?;
    let outcome = train_selector(&episodes, &config)?;
    save_selector(&a.out, &outcome.model)?;
    let history = a.out.join(HISTORY_FILE);
    std::fs::write(&history, history_jsonl(&outcome.history)?)?;
    std::fs::write(a.out.join("train_config.toml"), toml::to_string(&config)?)?;
    match (outcome.best_epoch, outcome.history.last()) {
        (Some(best), Some(last)) => println!(
            "trained {} epochs; best valid ACC at epoch {best}; last train ACC {:.4}; checkpoint {}",
            outcome.history.len(),
            last.train_acc,
            a.out.display()
        ),
        _ => println!("no epochs run; checkpoint {}", a.out.display()),
    }
    Ok(())
}

fn train_gen(a: &TrainGenArgs) -> Result<()> {
    let mut config = match &a.config {
        Some(p) => toml::from_str(&std::fs::read_to_string(p)?)?,
        None => GenTrainConfig::toy(),
    };
    if let Some(e) = a.epochs {
        config.epochs = e;
    }
    if let Some(s) = a.seed {
        config.seed = s;
    }
    let selector = load_selector(&a.ckpt)?;
    let episodes = a.corpus.load()?;
    let examples = gen_examples(&episodes, Some(&selector), selector.config().window_l)?;
    let outcome = train_generator(&examples, selector.vocab().clone(), &config)?;
    save_generator(&a.ckpt, &outcome.model)?;
    println!(
        "trained generator on {} examples, final loss {:.4}",
        examples.len(),
        outcome.losses.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

/// Predictions for every sample of `split`, in corpus order.
pub fn predict_split(
    ckpt: &Path,
    episodes: &[DialogueEpisode],
    split: Split,
    rule: PrevRule,
    decoding: Option<&DecodingConfig>,
) -> Result<Vec<PredictionLine>> {
    let model = load_selector(ckpt)?;
    let chosen: Vec<DialogueEpisode> = episodes
        .iter()
        .filter(|e| e.split == split)
        .cloned()
        .collect();
    if chosen.is_empty() {
        bail!("corpus has no {split} episodes");
    }
    let samples = build_all_samples(&chosen, model.config().window_l)?;
    let preds = model.predict(&samples, rule)?;
    let generator = match decoding {
        Some(_) => Some(load_generator(ckpt).context("--generate needs a trained generator")?),
        None => None,
    };
    samples
        .iter()
        .zip(preds)
        .map(|(s, p)| {
            let generated_response = match (&generator, decoding) {
                (Some(g), Some(d)) => {
                    Some(g.generate(&s.context, &s.candidates[p.index].text, d)?)
                }
                _ => None,
            };
            Ok(PredictionLine {
                episode_id: s.episode_id.clone(),
                turn_index: s.turn_index,
                predicted_index: p.index,
                generated_response,
            })
        })
        .collect()
}

fn eval(a: &EvalArgs) -> Result<()> {
    let split: Split = a.split.parse()?;
    let episodes = a.corpus.load()?;
    let rule = match a.rule {
        RuleArg::Predicted => PrevRule::Predicted,
        RuleArg::Gold => PrevRule::Gold,
    };
    let decoding = DecodingConfig {
        max_new_tokens: a.max_new_tokens,
        ..DecodingConfig::default()
    };
    let lines = predict_split(
        &a.ckpt,
        &episodes,
        split,
        rule,
        a.generate.then_some(&decoding),
    )?;
    let pred_path = a
        .predictions
        .clone()
        .unwrap_or_else(|| a.out.with_extension("predictions.jsonl"));
    write_predictions(&pred_path, &lines)?;
    let window = load_selector(&a.ckpt)?.config().window_l;
    let chosen: Vec<DialogueEpisode> = episodes.into_iter().filter(|e| e.split == split).collect();
    let samples = build_all_samples(&chosen, window)?;
    let policy = match a.first_turn {
        FirstTurnArg::Exclude => FirstTurnPolicy::Exclude,
        FirstTurnArg::Changing => FirstTurnPolicy::Changing,
    };
    let report = evaluate_run(&pred_path, &samples, &a.out, policy)?;
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
    println!(
        "{split}: ACC {:.4}  Adh {} (n={})  Div {} (n={})  first-turn {}",
        report.acc,
        fmt(report.adh),
        report.n_adhesive,
        fmt(report.div),
        report.n_changing,
        report.n_first_turn
    );
    println!(
        "report {}  predictions {}",
        a.out.display(),
        pred_path.display()
    );
    Ok(())
}

fn read_context(path: &Path) -> Result<Vec<Utterance>> {
    let raw =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let context: Vec<Utterance> = raw
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            if i % 2 == 0 {
                Utterance::user(l.trim())
            } else {
                Utterance::agent(l.trim())
            }
        })
        .collect();
    if context.is_empty() {
        bail!("{} holds no utterances", path.display());
    }
    Ok(context)
}

fn generate(a: &GenerateArgs) -> Result<()> {
    let generator = load_generator(&a.ckpt)?;
    let context = read_context(&a.context_file)?;
    tracing::debug!(context = render_context(&context), "generating");
    println!(
        "{}",
        generator.generate(&context, &a.knowledge, &a.decode.config())?
    );
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    let selector = load_selector(&a.ckpt)?;
    let generator = if a.ckpt.join(cet2_core::checkpoint::GENERATOR_FILE).exists() {
        Some(load_generator(&a.ckpt)?)
    } else {
        tracing::warn!(
            "no generator in {}, responses echo the selected knowledge",
            a.ckpt.display()
        );
        None
    };
    let episodes = match &a.corpus {
        Some(p) => load_corpus(p, a.corpus_format.into(), None)?,
        None => Vec::new(),
    };
    let state = AppState::new(
        Models {
            selector,
            generator,
            decoding: a.decode.config(),
        },
        episodes,
    );
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(a.addr).await?;
        // the smoke test reads this line to find the port
        println!("listening on {}", listener.local_addr()?);
        axum::serve(listener, router(state.clone()))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        if let Some(path) = &a.sessions_out {
            state.save_sessions(path).await?;
        }
        Ok(())
    })
}
