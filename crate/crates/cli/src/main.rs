//! `cknn`: cross-modal retrieval runs over embedding files.
//!
//! Exit codes: 0 on success, 1 on a runtime error, 2 on bad flags.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cknn_core::embedstore::Format;
use cknn_core::eval::{Direction, OverlapPolicy};

#[derive(Parser, Debug)]
#[command(name = "cknn", version, about = "Cross-modal retrieval over precomputed embeddings")]
pub struct Cli {
    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// File of `key=value` lines used as defaults for the subcommand's flags
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Write a seeded synthetic paired corpus
    #[command(args_override_self = true)]
    GenSynth(GenSynthArgs),
    /// Evaluate CkNN alignment on a test split
    #[command(args_override_self = true)]
    CknnEval(CknnEvalArgs),
    /// Train the triplet alignment head and write a checkpoint
    #[command(args_override_self = true)]
    TripletTrain(TripletTrainArgs),
    /// Evaluate a triplet checkpoint by direct search in the joint space
    #[command(args_override_self = true)]
    TripletEval(TripletEvalArgs),
    /// CkNN over every combination of image and text encoders
    #[command(args_override_self = true)]
    Grid(GridArgs),
    /// Encode documents with AWE or TF-IDF into an embedding file
    #[command(args_override_self = true)]
    EncodeText(EncodeTextArgs),
    /// Train word vectors from title-derived labels
    #[command(args_override_self = true)]
    TrainAwe(TrainAweArgs),
}

#[derive(Args, Debug)]
struct GenSynthArgs {
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    classes: usize,
    #[arg(long, default_value_t = 50)]
    items_per_class: usize,
    #[arg(long, default_value_t = 32)]
    latent_dim: usize,
    #[arg(long, default_value_t = 128)]
    image_dim: usize,
    #[arg(long, default_value_t = 96)]
    text_dim: usize,
    #[arg(long, default_value_t = 0.1)]
    image_sigma: f64,
    #[arg(long, default_value_t = 0.1)]
    text_sigma: f64,
    /// Spread of items around their class centre
    #[arg(long, default_value_t = 0.6)]
    item_spread: f64,
    /// Images per text (an upper bound unless --fixed-images)
    #[arg(long, default_value_t = 3)]
    images_per_text: usize,
    /// Give every text exactly --images-per-text images
    #[arg(long)]
    fixed_images: bool,
    /// Use identity maps from the latent space (needs equal dims)
    #[arg(long)]
    identity_maps: bool,
}

#[derive(Args, Debug)]
struct CorpusArgs {
    /// Directory with the standard corpus file names (as written by gen-synth)
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    train_images: Option<PathBuf>,
    #[arg(long)]
    train_texts: Option<PathBuf>,
    #[arg(long)]
    train_pairs: Option<PathBuf>,
    #[arg(long)]
    test_images: Option<PathBuf>,
    #[arg(long)]
    test_texts: Option<PathBuf>,
    #[arg(long)]
    test_pairs: Option<PathBuf>,
    /// Embedding file format
    #[arg(long, default_value_t = Format::Binary)]
    format: Format,
}

/// Comma-separated recall cut-offs, kept as one value so later flags replace earlier ones.
#[derive(Debug, Clone)]
struct RecallRanks(Vec<usize>);

impl FromStr for RecallRanks {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(|k| k.trim().parse::<usize>().map_err(|e| format!("bad K `{k}`: {e}")))
            .collect::<Result<Vec<_>, _>>()
            .map(RecallRanks)
    }
}

impl std::fmt::Display for RecallRanks {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.0.iter().map(usize::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

#[derive(Args, Debug)]
struct ProtocolArgs {
    /// Texts sampled per repeat
    #[arg(long, visible_alias = "N", default_value_t = 1000)]
    pool_size: usize,
    #[arg(long, default_value_t = 10)]
    repeats: usize,
    /// image_to_text or text_to_image
    #[arg(long, default_value_t = Direction::ImageToText)]
    direction: Direction,
    /// Recall cut-offs
    #[arg(long, default_value_t = RecallRanks(vec![1, 5, 10]))]
    ks: RecallRanks,
    /// Seed of repeat 0; repeat r uses seed + r
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Forced choice among M candidates instead of full pool ranking
    #[arg(long)]
    mway: Option<usize>,
    /// Use only the first image of every text
    #[arg(long)]
    dedup_images: bool,
    /// What to do when test ids also occur in the training data: error or warn
    #[arg(long, default_value_t = OverlapPolicy::Error)]
    overlap: OverlapPolicy,
    /// Also write the report as TSV
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CknnArgs {
    /// Weight of the image-space term
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    /// Training texts averaged per text query
    #[arg(long, default_value_t = 15)]
    kt: usize,
    /// Training images averaged per image query
    #[arg(long, default_value_t = 3)]
    ki: usize,
    /// Let texts without images be neighbours when representing a text
    #[arg(long)]
    all_texts: bool,
}

#[derive(Args, Debug)]
struct CknnEvalArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    cknn: CknnArgs,
    #[command(flatten)]
    protocol: ProtocolArgs,
}

#[derive(Args, Debug)]
struct TripletTrainArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Checkpoint to write
    #[arg(long)]
    checkpoint: PathBuf,
    /// Per-epoch loss trace as TSV
    #[arg(long)]
    loss_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0.3)]
    margin: f64,
    #[arg(long, default_value_t = 1024)]
    output_dim: usize,
    #[arg(long, default_value_t = 1024)]
    hidden_dim: usize,
    #[arg(long, default_value_t = 0.3)]
    dropout: f64,
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.002)]
    lr: f64,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Update both towers every epoch
    #[arg(long)]
    no_alternating: bool,
    /// Anchor the loss on texts instead of images
    #[arg(long)]
    text_anchor: bool,
}

#[derive(Args, Debug)]
struct TripletEvalArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    protocol: ProtocolArgs,
}

#[derive(Args, Debug)]
struct GridArgs {
    /// Image encoder as NAME=PATH (repeatable); files cover train and test items
    #[arg(long = "image", required = true)]
    images: Vec<String>,
    /// Text encoder as NAME=PATH (repeatable)
    #[arg(long = "text", required = true)]
    texts: Vec<String>,
    #[arg(long)]
    train_pairs: PathBuf,
    #[arg(long)]
    test_pairs: PathBuf,
    #[arg(long, default_value_t = Format::Binary)]
    format: Format,
    #[command(flatten)]
    cknn: CknnArgs,
    #[command(flatten)]
    protocol: ProtocolArgs,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Encoder {
    Awe,
    Tfidf,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Oov {
    Skip,
    Error,
}

#[derive(Args, Debug)]
struct EncodeTextArgs {
    /// Documents as `id<TAB>title<TAB>body`
    #[arg(long)]
    docs: PathBuf,
    #[arg(long, value_enum)]
    encoder: Encoder,
    /// Word vectors in text format (awe)
    #[arg(long, required_if_eq("encoder", "awe"))]
    vocab: Option<PathBuf>,
    /// Fitted TF-IDF model to load (tfidf)
    #[arg(long)]
    model: Option<PathBuf>,
    /// Fit TF-IDF on --docs and save the model here (tfidf)
    #[arg(long)]
    fit_model: Option<PathBuf>,
    #[arg(long, default_value_t = 2000)]
    reduced_dim: usize,
    /// Seed of the TF-IDF projection
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Out-of-vocabulary tokens (awe)
    #[arg(long, value_enum, default_value_t = Oov::Skip)]
    oov: Oov,
    /// Embedding file to write
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = Format::Binary)]
    format: Format,
}

#[derive(Args, Debug)]
struct TrainAweArgs {
    /// Documents as `id<TAB>title<TAB>body`
    #[arg(long)]
    docs: PathBuf,
    /// Word vectors to write, in text format
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch loss trace as TSV
    #[arg(long)]
    loss_out: Option<PathBuf>,
    /// Minimum number of titles a label must occur in
    #[arg(long, default_value_t = 5)]
    label_threshold: usize,
    #[arg(long, default_value_t = 300)]
    dim: usize,
    #[arg(long, default_value_t = 15)]
    epochs: usize,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.002)]
    lr: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Cmd::GenSynth(a) => commands::gen_synth(a),
        Cmd::CknnEval(a) => commands::cknn_eval(a),
        Cmd::TripletTrain(a) => commands::triplet_train(a),
        Cmd::TripletEval(a) => commands::triplet_eval(a),
        Cmd::Grid(a) => commands::grid(a),
        Cmd::EncodeText(a) => commands::encode_text(a),
        Cmd::TrainAwe(a) => commands::train_awe(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let parsed = config::expand_args(std::env::args_os().collect()).and_then(Cli::try_parse_from);
    let cli = match parsed {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
