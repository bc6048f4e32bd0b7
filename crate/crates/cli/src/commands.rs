use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cknn_core::cknn::{CkNNConfig, CkNNModel};
use cknn_core::embedstore::{join_corpus, load_embeddings, load_pairs, save_embeddings, PairedCorpus};
use cknn_core::eval::{grid_compare, run_pool_eval, EvalMode, EvalProtocol, MetricsReport, NamedSet, TripletRanker};
use cknn_core::synth::{generate, write_corpus, ImagesPerText, Maps, SynthSpec, CORPUS_FILES};
use cknn_core::textenc::{
    encode_docs_awe, encode_docs_tfidf, extract_labels, load_docs, tokenize, train_awe as fit_awe, AweConfig,
    OovPolicy, TfIdfConfig, TfIdfModel, VocabEmbeddings,
};
use cknn_core::triplet::{load_checkpoint, save_checkpoint, train_triplet, TripletConfig};

use crate::{
    CknnArgs, CknnEvalArgs, CorpusArgs, EncodeTextArgs, Encoder, GenSynthArgs, GridArgs, Oov, ProtocolArgs,
    TrainAweArgs, TripletEvalArgs, TripletTrainArgs,
};

#[derive(Clone, Copy)]
enum Part {
    Train,
    Test,
}

impl CorpusArgs {
    fn path(&self, explicit: &Option<PathBuf>, file: &str, flag: &str) -> Result<PathBuf> {
        match (explicit, &self.corpus) {
            (Some(p), _) => Ok(p.clone()),
            (None, Some(dir)) => Ok(dir.join(file)),
            (None, None) => bail!("need --{flag} or --corpus"),
        }
    }

    fn load(&self, part: Part) -> Result<PairedCorpus> {
        let (images, texts, pairs, names, prefix) = match part {
            Part::Train => (&self.train_images, &self.train_texts, &self.train_pairs, &CORPUS_FILES[0..3], "train"),
            Part::Test => (&self.test_images, &self.test_texts, &self.test_pairs, &CORPUS_FILES[3..6], "test"),
        };
        let images = self.path(images, names[0], &format!("{prefix}-images"))?;
        let texts = self.path(texts, names[1], &format!("{prefix}-texts"))?;
        let pairs = self.path(pairs, names[2], &format!("{prefix}-pairs"))?;
        let images = load_embeddings(&images, self.format).with_context(|| format!("reading {}", images.display()))?;
        let texts = load_embeddings(&texts, self.format).with_context(|| format!("reading {}", texts.display()))?;
        let pairs = load_pairs(&pairs).with_context(|| format!("reading {}", pairs.display()))?;
        join_corpus(images, texts, &pairs).with_context(|| format!("joining the {prefix} split"))
    }
}

impl ProtocolArgs {
    fn protocol(&self) -> EvalProtocol {
        EvalProtocol {
            pool_size: self.pool_size,
            repeats: self.repeats,
            direction: self.direction,
            recall_ranks: self.ks.0.clone(),
            seed: self.seed,
            mode: self.mway.map_or(EvalMode::PoolRanking, |m| EvalMode::MWay { m }),
            dedup_images: self.dedup_images,
            overlap: self.overlap,
        }
    }
}

impl CknnArgs {
    fn config(&self) -> CkNNConfig {
        CkNNConfig { alpha: self.alpha, k_t: self.kt, k_i: self.ki, restrict_to_paired: !self.all_texts }
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn emit(report: &MetricsReport, out: &Option<PathBuf>) -> Result<()> {
    println!("{}", report.to_table());
    if let Some(path) = out {
        write_file(path, &report.to_tsv())?;
    }
    Ok(())
}

fn loss_tsv(trace: &[f64]) -> String {
    let mut s = String::from("epoch\tloss\n");
    for (e, l) in trace.iter().enumerate() {
        writeln!(s, "{}\t{l:.6}", e + 1).expect("writing to a String");
    }
    s
}

pub fn gen_synth(a: GenSynthArgs) -> Result<()> {
    let spec = SynthSpec {
        n_classes: a.classes,
        items_per_class: a.items_per_class,
        latent_dim: a.latent_dim,
        image_dim: a.image_dim,
        text_dim: a.text_dim,
        image_noise_sigma: a.image_sigma,
        text_noise_sigma: a.text_sigma,
        item_spread: a.item_spread,
        images_per_text: if a.fixed_images {
            ImagesPerText::Fixed(a.images_per_text)
        } else {
            ImagesPerText::UpTo(a.images_per_text)
        },
        maps: if a.identity_maps { Maps::Identity } else { Maps::Random },
        seed: a.seed,
    };
    let corpus = generate(&spec)?;
    for path in write_corpus(&corpus, &a.out)? {
        println!("{}", path.display());
    }
    Ok(())
}

pub fn cknn_eval(a: CknnEvalArgs) -> Result<()> {
    let train = a.corpus.load(Part::Train)?;
    let test = a.corpus.load(Part::Test)?;
    let model = CkNNModel::new(train, a.cknn.config())?;
    let report = run_pool_eval(&model, &test, &a.protocol.protocol())?;
    emit(&report, &a.protocol.out)
}

pub fn triplet_train(a: TripletTrainArgs) -> Result<()> {
    let train = a.corpus.load(Part::Train)?;
    let config = TripletConfig {
        margin: a.margin,
        output_dim: a.output_dim,
        hidden_dim: a.hidden_dim,
        dropout_rate: a.dropout,
        batch_size: a.batch_size,
        learning_rate: a.lr,
        epochs: a.epochs,
        seed: a.seed,
        alternating: !a.no_alternating,
        text_anchor: a.text_anchor,
    };
    let outcome = train_triplet(&train, &config)?;
    save_checkpoint(&outcome.model, &a.checkpoint)
        .with_context(|| format!("writing {}", a.checkpoint.display()))?;
    let trace = loss_tsv(&outcome.loss_trace);
    print!("{trace}");
    if let Some(path) = &a.loss_out {
        write_file(path, &trace)?;
    }
    Ok(())
}

pub fn triplet_eval(a: TripletEvalArgs) -> Result<()> {
    let model = load_checkpoint(&a.checkpoint).with_context(|| format!("reading {}", a.checkpoint.display()))?;
    let test = a.corpus.load(Part::Test)?;
    let report = run_pool_eval(&TripletRanker::new(&model), &test, &a.protocol.protocol())?;
    emit(&report, &a.protocol.out)
}

fn named_sets(specs: &[String], format: cknn_core::embedstore::Format) -> Result<Vec<NamedSet>> {
    specs
        .iter()
        .map(|s| {
            let Some((name, path)) = s.split_once('=') else {
                bail!("expected NAME=PATH, got `{s}`");
            };
            let set = load_embeddings(path, format).with_context(|| format!("reading {path}"))?;
            Ok(NamedSet { name: name.to_string(), set })
        })
        .collect()
}

pub fn grid(a: GridArgs) -> Result<()> {
    let images = named_sets(&a.images, a.format)?;
    let texts = named_sets(&a.texts, a.format)?;
    let train = load_pairs(&a.train_pairs).with_context(|| format!("reading {}", a.train_pairs.display()))?;
    let test = load_pairs(&a.test_pairs).with_context(|| format!("reading {}", a.test_pairs.display()))?;
    let report = grid_compare(&images, &texts, &train, &test, &a.protocol.protocol(), &a.cknn.config())?;
    println!("{}", report.to_table());
    if let Some(path) = &a.protocol.out {
        write_file(path, &report.to_tsv())?;
    }
    Ok(())
}

pub fn encode_text(a: EncodeTextArgs) -> Result<()> {
    let docs = load_docs(&a.docs).with_context(|| format!("reading {}", a.docs.display()))?;
    let set = match a.encoder {
        Encoder::Awe => {
            let path = a.vocab.as_ref().expect("clap requires --vocab for awe");
            let policy = match a.oov {
                Oov::Skip => OovPolicy::Skip,
                Oov::Error => OovPolicy::Error,
            };
            let vocab = VocabEmbeddings::load_text(path)
                .with_context(|| format!("reading {}", path.display()))?
                .with_oov_policy(policy);
            encode_docs_awe(&vocab, &docs)?
        }
        Encoder::Tfidf => {
            let model = match (&a.fit_model, &a.model) {
                (Some(out), _) => {
                    let tokens: Vec<Vec<String>> = docs.iter().map(|d| d.tokens()).collect();
                    let config = TfIdfConfig { reduced_dim: a.reduced_dim, seed: a.seed, ..TfIdfConfig::default() };
                    let model = TfIdfModel::fit(&tokens, &config)?;
                    model.save(out).with_context(|| format!("writing {}", out.display()))?;
                    model
                }
                (None, Some(path)) => TfIdfModel::load(path).with_context(|| format!("reading {}", path.display()))?,
                (None, None) => return Err(cknn_core::Error::NotFitted.into()),
            };
            encode_docs_tfidf(&model, &docs)?
        }
    };
    save_embeddings(&set, &a.out, a.format).with_context(|| format!("writing {}", a.out.display()))?;
    println!("{} documents, dim {} -> {}", set.len(), set.dim(), a.out.display());
    Ok(())
}

pub fn train_awe(a: TrainAweArgs) -> Result<()> {
    let docs = load_docs(&a.docs).with_context(|| format!("reading {}", a.docs.display()))?;
    let titles: Vec<Vec<String>> = docs.iter().map(|d| tokenize(&d.title)).collect();
    let labels = extract_labels(&titles, a.label_threshold)?;
    let mut inputs = Vec::with_capacity(docs.len());
    let mut targets = Vec::with_capacity(docs.len());
    for (doc, title) in docs.iter().zip(&titles) {
        let tokens = doc.tokens();
        if tokens.is_empty() {
            log::warn!("document `{}` has no tokens and is skipped", doc.id);
            continue;
        }
        inputs.push(tokens);
        targets.push(labels.labels_of(title));
    }
    let config = AweConfig { dim: a.dim, epochs: a.epochs, batch_size: a.batch_size, learning_rate: a.lr, seed: a.seed };
    let outcome = fit_awe(&inputs, &targets, labels.len(), &config)?;
    outcome.vocab.save_text(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    println!("{} labels, {} tokens, dim {}", labels.len(), outcome.vocab.len(), outcome.vocab.dim());
    let trace = loss_tsv(&outcome.loss_trace);
    print!("{trace}");
    if let Some(path) = &a.loss_out {
        write_file(path, &trace)?;
    }
    Ok(())
}
